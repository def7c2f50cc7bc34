//! A toolkit for spatially-explicit, individual-based population models
//! expressed in a small process calculus.
//!
//! A model is a habitat (locations plus a neighborhood relation), a set of
//! species whose individuals are process terms, a located system of
//! individuals, and an optional *policy*: a partial order on action labels
//! that prunes lower-priority steps whenever a higher-priority one is
//! enabled. The crate provides:
//!
//! - a concrete `.palps` syntax ([`parser`], [`format`]),
//! - the prioritized probabilistic operational semantics ([`semantics`]),
//! - exhaustive exploration into a Markov decision process ([`statespace`]),
//! - reachability, bounded-until and reward analysis plus a seeded
//!   trace simulator ([`analysis`], [`simulate`]),
//! - a compiler to a PRISM-style guarded-command language together with an
//!   interpreter for the emitted subset and a correspondence checker that
//!   validates the translation on small instances ([`prism`]).
//!
//! See the `examples/` directory for one runnable example per capability
//! and the `palps` binary for the command-line interface.

pub mod analysis;
pub mod cli;
pub mod expr;
pub mod format;
pub mod model;
pub mod parser;
pub mod policy;
pub mod prism;
pub mod query;
pub mod semantics;
pub mod simulate;
pub mod statespace;

pub use expr::{Environment, EvalError};
pub use model::{ActionLabel, Model, ValidationReport};
pub use policy::Policy;
pub use semantics::{Configuration, Stepper};
pub use statespace::{ExploreLimits, Mdp};
