//! Core model types: habitat, species, process terms, located systems,
//! action labels, and static validation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use num::BigRational;
use num::{One, Zero};

use crate::expr::{ArithExpr, BoolExpr, LocRef};
use crate::policy::{self, PolicyPattern};

/// Index of a location in [`Habitat::names`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LocId(pub u32);

/// Index of a species in [`Model::species`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SpeciesId(pub u32);

/// Index of a channel in [`Model::channels`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ChanId(pub u32);

/// Index of an attribute in [`AttributeTable::names`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AttrId(pub u32);

impl LocId {
    pub fn idx(self) -> usize {
        self.0 as usize
    }
}
impl SpeciesId {
    pub fn idx(self) -> usize {
        self.0 as usize
    }
}
impl ChanId {
    pub fn idx(self) -> usize {
        self.0 as usize
    }
}
impl AttrId {
    pub fn idx(self) -> usize {
        self.0 as usize
    }
}

/// The spatial structure: a finite set of locations and a symmetric,
/// irreflexive neighbor relation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Habitat {
    pub names: Vec<String>,
    /// `neighbors[l]` is the set of neighbors of location `l`.
    pub neighbors: Vec<BTreeSet<LocId>>,
}

impl Habitat {
    pub fn new(names: Vec<String>) -> Self {
        let n = names.len();
        Habitat {
            names,
            neighbors: vec![BTreeSet::new(); n],
        }
    }

    /// Adds an undirected edge; the symmetric closure is maintained here.
    pub fn add_edge(&mut self, a: LocId, b: LocId) {
        self.neighbors[a.idx()].insert(b);
        self.neighbors[b.idx()].insert(a);
    }

    pub fn num_locations(&self) -> usize {
        self.names.len()
    }

    pub fn locations(&self) -> impl Iterator<Item = LocId> {
        (0..self.names.len() as u32).map(LocId)
    }

    pub fn neighbors_of(&self, l: LocId) -> &BTreeSet<LocId> {
        &self.neighbors[l.idx()]
    }

    pub fn are_neighbors(&self, a: LocId, b: LocId) -> bool {
        self.neighbors[a.idx()].contains(&b)
    }

    pub fn name(&self, l: LocId) -> &str {
        &self.names[l.idx()]
    }
}

/// Per-location attribute values. Every `(attribute, location)` pair that a
/// model references must be present.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AttributeTable {
    pub names: Vec<String>,
    pub values: BTreeMap<(AttrId, LocId), BigRational>,
}

impl AttributeTable {
    pub fn get(&self, attr: AttrId, loc: LocId) -> Option<&BigRational> {
        self.values.get(&(attr, loc))
    }

    pub fn name(&self, a: AttrId) -> &str {
        &self.names[a.idx()]
    }
}

/// An action prefix of a nondeterministic sum.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Prefix {
    /// Input on a channel.
    In(ChanId),
    /// Output on a channel.
    Out(ChanId),
    /// Move to a (declared) location; enabled only from its neighbors.
    Go(LocId),
    /// The global time step.
    Tick,
}

/// An individual-level process term.
///
/// `Disperse` is the uniform-movement derived form: at run time, an
/// individual at location `l` behaves as the probabilistic sum over the
/// neighbors of `l`, each branch moving there with probability `1/|Nb(l)|`
/// and continuing with `cont` (plus any `extra` summands offered alongside
/// the move). It is kept as a distinct constructor because the expansion
/// depends on the individual's current location.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ProcessTerm {
    Nil,
    NSum(Vec<(Prefix, ProcessTerm)>),
    PSum(Vec<(BigRational, ProcessTerm)>),
    Cond(Vec<(BoolExpr, ProcessTerm)>),
    ConstRef(u32),
    Disperse {
        cont: Box<ProcessTerm>,
        extra: Vec<(Prefix, ProcessTerm)>,
    },
}

impl ProcessTerm {
    /// Single action prefix `prefix.cont`, as a one-summand sum.
    pub fn prefix(p: Prefix, cont: ProcessTerm) -> Self {
        ProcessTerm::NSum(vec![(p, cont)])
    }
}

/// A species: its constant definitions, the offspring body spawned on
/// reproduction, the replication bound, and a dedicated reproduction channel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpeciesDef {
    pub name: String,
    /// Constant definitions, in declaration order; `ProcessTerm::ConstRef`
    /// indexes into this table.
    pub consts: Vec<(String, ProcessTerm)>,
    /// Index into `consts` of the offspring body.
    pub offspring: u32,
    /// Maximum number of offspring that can be created.
    pub bound: u32,
    /// The channel on which reproduction synchronizes.
    pub rep_channel: ChanId,
}

impl SpeciesDef {
    pub fn const_body(&self, idx: u32) -> &ProcessTerm {
        &self.consts[idx as usize].1
    }

    pub fn const_index(&self, name: &str) -> Option<u32> {
        self.consts.iter().position(|(n, _)| n == name).map(|i| i as u32)
    }
}

/// A system-level term: located individuals, species processes, parallel
/// composition, and channel restriction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SystemTerm {
    /// The empty system; it only lets time pass.
    Empty,
    /// `count` parallel copies of `term` as individuals of `species` at `loc`.
    Located {
        term: ProcessTerm,
        species: SpeciesId,
        loc: LocId,
        count: u32,
    },
    /// The replicated species process.
    SpeciesProc(SpeciesId),
    Parallel(Vec<SystemTerm>),
    Restrict(Box<SystemTerm>, BTreeSet<ChanId>),
}

/// The tag of an internal action: a completed channel synchronization or a
/// movement step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TauKind {
    Chan(ChanId),
    Go,
}

/// A transition label of the nondeterministic relation. Input/output labels
/// carry the acting individual's location and species; an internal label
/// carries the location of the interaction and the species of the outputting
/// (or moving) individual.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ActionLabel {
    In(ChanId, LocId, SpeciesId),
    Out(ChanId, LocId, SpeciesId),
    Tau(TauKind, LocId, SpeciesId),
    Tick,
}

impl ActionLabel {
    pub fn is_tick(&self) -> bool {
        matches!(self, ActionLabel::Tick)
    }
}

/// A display helper that renders ids through the model's name tables.
pub struct LabelDisplay<'a> {
    pub model: &'a Model,
    pub label: ActionLabel,
}

impl fmt::Display for LabelDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m = self.model;
        match self.label {
            ActionLabel::In(c, l, s) => write!(
                f,
                "in({},{},{})",
                m.channels[c.idx()],
                m.habitat.name(l),
                m.species[s.idx()].name
            ),
            ActionLabel::Out(c, l, s) => write!(
                f,
                "out({},{},{})",
                m.channels[c.idx()],
                m.habitat.name(l),
                m.species[s.idx()].name
            ),
            ActionLabel::Tau(TauKind::Chan(c), l, s) => write!(
                f,
                "tau({},{},{})",
                m.channels[c.idx()],
                m.habitat.name(l),
                m.species[s.idx()].name
            ),
            ActionLabel::Tau(TauKind::Go, l, s) => write!(
                f,
                "tau(go,{},{})",
                m.habitat.name(l),
                m.species[s.idx()].name
            ),
            ActionLabel::Tick => write!(f, "tick"),
        }
    }
}

/// A complete model: habitat, attributes, species, system, and the raw
/// (pattern-level) policy.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub habitat: Habitat,
    pub channels: Vec<String>,
    pub attributes: AttributeTable,
    pub species: Vec<SpeciesDef>,
    pub system: SystemTerm,
    /// Policy pairs as written, wildcards not yet instantiated.
    pub policy_patterns: Vec<(PolicyPattern, PolicyPattern)>,
}

impl Model {
    pub fn species_by_name(&self, name: &str) -> Option<SpeciesId> {
        self.species
            .iter()
            .position(|s| s.name == name)
            .map(|i| SpeciesId(i as u32))
    }

    pub fn location_by_name(&self, name: &str) -> Option<LocId> {
        self.habitat
            .names
            .iter()
            .position(|n| n == name)
            .map(|i| LocId(i as u32))
    }

    pub fn channel_by_name(&self, name: &str) -> Option<ChanId> {
        self.channels
            .iter()
            .position(|n| n == name)
            .map(|i| ChanId(i as u32))
    }

    pub fn channel_name(&self, c: ChanId) -> &str {
        &self.channels[c.idx()]
    }

    /// The instantiated, transitively closed policy.
    pub fn policy(&self) -> Result<policy::Policy, policy::PolicyError> {
        policy::instantiate_wildcards(&self.policy_patterns, self)
    }

    /// The union of all restriction sets on the system's spine.
    pub fn restricted_channels(&self) -> BTreeSet<ChanId> {
        fn walk(t: &SystemTerm, acc: &mut BTreeSet<ChanId>) {
            match t {
                SystemTerm::Restrict(inner, set) => {
                    acc.extend(set.iter().copied());
                    walk(inner, acc);
                }
                SystemTerm::Parallel(parts) => {
                    for p in parts {
                        walk(p, acc);
                    }
                }
                _ => {}
            }
        }
        let mut acc = BTreeSet::new();
        walk(&self.system, &mut acc);
        acc
    }
}

/// Severity of a validation finding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Severity {
    Error,
    Warning,
}

/// One validation finding.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Finding {
    pub severity: Severity,
    pub message: String,
}

/// The outcome of [`validate_model`]: the model is usable iff `errors()` is
/// empty. Warnings flag constructs that are legal but likely unintended.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn errors(&self) -> impl Iterator<Item = &Finding> {
        self.findings
            .iter()
            .filter(|f| f.severity == Severity::Error)
    }

    pub fn warnings(&self) -> impl Iterator<Item = &Finding> {
        self.findings
            .iter()
            .filter(|f| f.severity == Severity::Warning)
    }

    pub fn is_ok(&self) -> bool {
        self.errors().next().is_none()
    }

    fn error(&mut self, message: String) {
        self.findings.push(Finding {
            severity: Severity::Error,
            message,
        });
    }

    fn warn(&mut self, message: String) {
        self.findings.push(Finding {
            severity: Severity::Warning,
            message,
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for finding in &self.findings {
            let tag = match finding.severity {
                Severity::Error => "error",
                Severity::Warning => "warning",
            };
            writeln!(f, "{}: {}", tag, finding.message)?;
        }
        Ok(())
    }
}

/// Checks every structural invariant of a model and reports findings.
/// Deterministic and idempotent; probability sums are checked exactly on
/// rationals with a 1e-9 slack for inexact sources.
pub fn validate_model(model: &Model) -> ValidationReport {
    let mut report = ValidationReport::default();
    validate_habitat(model, &mut report);
    validate_attributes(model, &mut report);
    for (si, sp) in model.species.iter().enumerate() {
        validate_species(model, SpeciesId(si as u32), sp, &mut report);
    }
    validate_system(model, &mut report);
    validate_policy(model, &mut report);
    report
}

fn validate_habitat(model: &Model, report: &mut ValidationReport) {
    let mut seen = BTreeSet::new();
    for name in &model.habitat.names {
        if !seen.insert(name.clone()) {
            report.error(format!("duplicate location `{name}`"));
        }
    }
    for (i, nbs) in model.habitat.neighbors.iter().enumerate() {
        let here = LocId(i as u32);
        for n in nbs {
            if n.idx() >= model.habitat.names.len() {
                report.error(format!(
                    "neighbor entry of `{}` references an undeclared location",
                    model.habitat.name(here)
                ));
                continue;
            }
            if *n == here {
                report.error(format!(
                    "location `{}` is its own neighbor",
                    model.habitat.name(here)
                ));
            }
            if !model.habitat.neighbors[n.idx()].contains(&here) {
                report.error(format!(
                    "neighbor relation is not symmetric between `{}` and `{}`",
                    model.habitat.name(here),
                    model.habitat.name(*n)
                ));
            }
        }
    }
}

fn validate_attributes(model: &Model, report: &mut ValidationReport) {
    let mut seen = BTreeSet::new();
    for name in &model.attributes.names {
        if !seen.insert(name.clone()) {
            report.error(format!("duplicate attribute `{name}`"));
        }
        if model.species.iter().any(|s| &s.name == name) {
            report.error(format!(
                "attribute `{name}` shadows a species of the same name"
            ));
        }
    }
    for (attr, loc) in model.attributes.values.keys() {
        if attr.idx() >= model.attributes.names.len() {
            report.error("attribute value for an undeclared attribute".into());
        }
        if loc.idx() >= model.habitat.names.len() {
            report.error("attribute value at an undeclared location".into());
        }
    }
}

fn validate_species(
    model: &Model,
    sid: SpeciesId,
    sp: &SpeciesDef,
    report: &mut ValidationReport,
) {
    let mut seen = BTreeSet::new();
    for (name, _) in &sp.consts {
        if !seen.insert(name.clone()) {
            report.error(format!(
                "species `{}`: duplicate process `{name}`",
                sp.name
            ));
        }
    }
    if sp.offspring as usize >= sp.consts.len() {
        report.error(format!(
            "species `{}`: offspring process index out of range",
            sp.name
        ));
        return;
    }
    if sp.rep_channel.idx() >= model.channels.len() {
        report.error(format!(
            "species `{}`: undeclared reproduction channel",
            sp.name
        ));
    }
    for (name, body) in &sp.consts {
        let ctx = format!("species `{}`, process `{name}`", sp.name);
        validate_term(model, sp, body, &ctx, report);
    }
    // Reject constant chains that never reach an action, e.g. `A = B; B = A;`.
    for (idx, (name, _)) in sp.consts.iter().enumerate() {
        let mut visited = BTreeSet::new();
        let mut cur = idx as u32;
        loop {
            if !visited.insert(cur) {
                report.error(format!(
                    "species `{}`: process `{name}` is an unguarded constant cycle",
                    sp.name
                ));
                break;
            }
            match &sp.consts[cur as usize].1 {
                ProcessTerm::ConstRef(next) if (*next as usize) < sp.consts.len() => {
                    cur = *next;
                }
                _ => break,
            }
        }
    }
    let _ = sid;
}

fn validate_term(
    model: &Model,
    sp: &SpeciesDef,
    term: &ProcessTerm,
    ctx: &str,
    report: &mut ValidationReport,
) {
    match term {
        ProcessTerm::Nil => {}
        ProcessTerm::NSum(branches) => {
            if branches.is_empty() {
                report.error(format!("{ctx}: empty nondeterministic sum"));
            }
            for (prefix, cont) in branches {
                validate_prefix(model, prefix, ctx, report);
                validate_term(model, sp, cont, ctx, report);
            }
        }
        ProcessTerm::PSum(branches) => {
            if branches.is_empty() {
                report.error(format!("{ctx}: empty probabilistic sum"));
            }
            let mut sum = BigRational::zero();
            for (p, cont) in branches {
                if *p <= BigRational::zero() || *p > BigRational::one() {
                    report.error(format!("{ctx}: probability {p} outside (0,1]"));
                }
                sum += p;
                validate_term(model, sp, cont, ctx, report);
            }
            if !branches.is_empty() && sum != BigRational::one() {
                let tol = BigRational::new(1.into(), 1_000_000_000.into());
                let diff = if sum > BigRational::one() {
                    &sum - BigRational::one()
                } else {
                    BigRational::one() - &sum
                };
                if diff > tol {
                    report.error(format!("{ctx}: probabilities sum to {sum}, expected 1"));
                } else {
                    report.warn(format!(
                        "{ctx}: probabilities sum to {sum}; within tolerance but not exactly 1"
                    ));
                }
            }
        }
        ProcessTerm::Cond(branches) => {
            if branches.is_empty() {
                report.error(format!("{ctx}: empty conditional"));
            }
            for (guard, cont) in branches {
                validate_bool(model, guard, ctx, report);
                validate_term(model, sp, cont, ctx, report);
            }
            if let Some((last, _)) = branches.last() {
                if *last != BoolExpr::True {
                    report.warn(format!(
                        "{ctx}: conditional does not end with a literal `true` guard; \
                         it blocks when no guard holds"
                    ));
                }
            }
        }
        ProcessTerm::ConstRef(idx) => {
            if *idx as usize >= sp.consts.len() {
                report.error(format!("{ctx}: unresolved process reference"));
            }
        }
        ProcessTerm::Disperse { cont, extra } => {
            validate_term(model, sp, cont, ctx, report);
            for (prefix, econt) in extra {
                validate_prefix(model, prefix, ctx, report);
                validate_term(model, sp, econt, ctx, report);
            }
        }
    }
}

fn validate_prefix(model: &Model, prefix: &Prefix, ctx: &str, report: &mut ValidationReport) {
    match prefix {
        Prefix::In(c) | Prefix::Out(c) => {
            if c.idx() >= model.channels.len() {
                report.error(format!("{ctx}: unknown channel"));
            }
        }
        Prefix::Go(l) => {
            if l.idx() >= model.habitat.names.len() {
                report.error(format!("{ctx}: unknown location in `go`"));
            }
        }
        Prefix::Tick => {}
    }
}

fn validate_bool(model: &Model, e: &BoolExpr, ctx: &str, report: &mut ValidationReport) {
    match e {
        BoolExpr::True => {}
        BoolExpr::Not(inner) => validate_bool(model, inner, ctx, report),
        BoolExpr::And(a, b) => {
            validate_bool(model, a, ctx, report);
            validate_bool(model, b, ctx, report);
        }
        BoolExpr::Cmp(w, _, _) => validate_arith(model, w, ctx, report),
    }
}

fn validate_arith(model: &Model, w: &ArithExpr, ctx: &str, report: &mut ValidationReport) {
    match w {
        ArithExpr::Const(_) => {}
        ArithExpr::AttrAt(a, l) => {
            if a.idx() >= model.attributes.names.len() {
                report.error(format!("{ctx}: unknown attribute"));
            }
            validate_locref(model, l, ctx, report);
            if let LocRef::Loc(loc) = l {
                if a.idx() < model.attributes.names.len()
                    && loc.idx() < model.habitat.names.len()
                    && model.attributes.get(*a, *loc).is_none()
                {
                    report.error(format!(
                        "{ctx}: attribute `{}` has no value at `{}`",
                        model.attributes.name(*a),
                        model.habitat.name(*loc)
                    ));
                }
            }
        }
        ArithExpr::CountAt(s, l) => {
            if s.idx() >= model.species.len() {
                report.error(format!("{ctx}: unknown species"));
            }
            validate_locref(model, l, ctx, report);
        }
        ArithExpr::TotalAt(l) => validate_locref(model, l, ctx, report),
        ArithExpr::Neg(inner) => validate_arith(model, inner, ctx, report),
        ArithExpr::Bin(_, a, b) => {
            validate_arith(model, a, ctx, report);
            validate_arith(model, b, ctx, report);
        }
    }
}

fn validate_locref(model: &Model, l: &LocRef, ctx: &str, report: &mut ValidationReport) {
    if let LocRef::Loc(loc) = l {
        if loc.idx() >= model.habitat.names.len() {
            report.error(format!("{ctx}: unknown location"));
        }
    }
}

fn validate_system(model: &Model, report: &mut ValidationReport) {
    // Restriction must enclose the whole system: only `Restrict` and
    // `Parallel` may appear above located components, and `Restrict` nodes
    // may only occur on the outermost spine.
    fn walk(
        model: &Model,
        t: &SystemTerm,
        spine: bool,
        report: &mut ValidationReport,
    ) {
        match t {
            SystemTerm::Empty => {}
            SystemTerm::Located {
                term,
                species,
                loc,
                count,
            } => {
                if *count < 1 {
                    report.error("located component with multiplicity 0".into());
                }
                if species.idx() >= model.species.len() {
                    report.error("located component of an undeclared species".into());
                    return;
                }
                if loc.idx() >= model.habitat.names.len() {
                    report.error("located component at an unknown location".into());
                }
                let sp = &model.species[species.idx()];
                let ctx = format!("system component of species `{}`", sp.name);
                validate_term(model, sp, term, &ctx, report);
            }
            SystemTerm::SpeciesProc(s) => {
                if s.idx() >= model.species.len() {
                    report.error("species process of an undeclared species".into());
                }
            }
            SystemTerm::Parallel(parts) => {
                for p in parts {
                    walk(model, p, false, report);
                }
            }
            SystemTerm::Restrict(inner, set) => {
                if !spine {
                    report.error(
                        "channel restriction must enclose the whole system, \
                         not a proper subsystem"
                            .into(),
                    );
                }
                for c in set {
                    if c.idx() >= model.channels.len() {
                        report.error("restriction of an undeclared channel".into());
                    }
                }
                walk(model, inner, spine, report);
            }
        }
    }
    walk(model, &model.system, true, report);

    let restricted = model.restricted_channels();
    for sp in &model.species {
        if sp.bound > 0 && !restricted.contains(&sp.rep_channel) {
            report.error(format!(
                "reproduction channel `{}` of species `{}` must be restricted",
                model.channels[sp.rep_channel.idx()],
                sp.name
            ));
        }
    }
}

fn validate_policy(model: &Model, report: &mut ValidationReport) {
    let restricted = model.restricted_channels();
    for (lo, hi) in &model.policy_patterns {
        for pat in [lo, hi] {
            if let Some(msg) = pat.check(model) {
                report.error(format!("policy: {msg}"));
            }
            if let Some(chan) = pat.bare_channel() {
                if restricted.contains(&chan) {
                    report.warn(format!(
                        "policy references input/output on restricted channel `{}`; \
                         only its internal (tau) form can ever be enabled",
                        model.channels[chan.idx()]
                    ));
                }
            }
        }
    }
    match model.policy() {
        Ok(_) => {}
        Err(e) => report.error(format!("policy: {e}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse_model;

    #[test]
    fn psum_sum_violation_is_reported() {
        let src = r#"
habitat { locations: l1; }
species s {
  bound 0 via rep;
  process P0 = 1/2: tick.P0 (+) 3/5: tick.P0;
  init P0;
}
system { 1 of s.P0 at l1; restrict { rep } }
"#;
        let model = parse_model(src).expect("parses");
        let report = validate_model(&model);
        assert!(!report.is_ok());
        assert!(report
            .errors()
            .any(|f| f.message.contains("probabilities sum to 11/10")));
    }

    #[test]
    fn empty_policy_and_valid_model_pass() {
        let src = r#"
habitat { locations: l1, l2; neighbors: (l1, l2); }
species s {
  bound 1 via rep;
  process P0 = tick.P0;
  init P0;
}
system { 1 of s.P0 at l1; restrict { rep } }
"#;
        let model = parse_model(src).expect("parses");
        let report = validate_model(&model);
        assert!(report.is_ok(), "{report}");
    }

    #[test]
    fn validation_is_idempotent() {
        let src = r#"
habitat { locations: l1; }
species s {
  bound 0 via rep;
  process P0 = cond(s@myloc >= 2 -> tick.P0);
  init P0;
}
system { 1 of s.P0 at l1; restrict { rep } }
"#;
        let model = parse_model(src).expect("parses");
        let a = validate_model(&model);
        let b = validate_model(&model);
        assert_eq!(a, b);
        assert!(a.is_ok());
        assert_eq!(a.warnings().count(), 1); // missing trailing `true` guard
    }
}
