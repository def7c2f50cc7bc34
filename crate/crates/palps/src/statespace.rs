//! Exhaustive exploration of the prioritized semantics into a finite Markov
//! decision process, with canonical state deduplication.

use std::collections::HashMap;
use std::hash::Hash;
use std::time::{Duration, Instant};

use num::BigRational;
use rayon::prelude::*;
use serde_json::json;
use thiserror::Error;

use crate::model::{ActionLabel, LabelDisplay, Model};
use crate::policy::Policy;
use crate::semantics::{Configuration, SemanticsError, Stepper};

/// Exploration bounds. `time_budget` makes truncation wall-clock dependent,
/// so deterministic runs should leave it unset.
#[derive(Clone, Copy, Debug)]
pub struct ExploreLimits {
    pub max_states: usize,
    pub max_depth: usize,
    pub time_budget: Option<Duration>,
}

impl ExploreLimits {
    pub fn new(max_states: usize, max_depth: usize) -> Self {
        assert!(max_states > 0 && max_depth > 0, "limits must be positive");
        ExploreLimits {
            max_states,
            max_depth,
            time_budget: None,
        }
    }
}

impl Default for ExploreLimits {
    fn default() -> Self {
        ExploreLimits::new(1_000_000, 1_000_000)
    }
}

/// What a choice of the MDP stands for.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ChoiceTag {
    /// A calculus action, as a Dirac choice.
    Action(ActionLabel),
    /// The joint probabilistic step.
    Prob,
    /// A guarded command (label, or `None` for an unlabeled command).
    Command(Option<String>),
}

/// One nondeterministic choice: a distribution over successor indices.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Choice {
    pub tag: ChoiceTag,
    /// Whether this choice advances the global clock.
    pub is_tick: bool,
    pub dist: Vec<(BigRational, usize)>,
}

/// A choice whose targets are still explicit states.
pub struct RawChoice<S> {
    pub tag: ChoiceTag,
    pub is_tick: bool,
    pub dist: Vec<(BigRational, S)>,
}

/// A finite MDP over deduplicated states.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mdp<S> {
    pub states: Vec<S>,
    pub initial: usize,
    pub choices: Vec<Vec<Choice>>,
    /// Per-state flag: true when the state's successors were cut off by a
    /// limit; such states are absorbing in the returned MDP.
    pub truncated_states: Vec<bool>,
    pub truncated: bool,
}

/// Exact size counts of an MDP.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MdpStats {
    pub states: usize,
    pub choices: usize,
    pub transitions: usize,
    pub truncated: bool,
}

impl std::fmt::Display for MdpStats {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "states={} choices={} transitions={}{}",
            self.states,
            self.choices,
            self.transitions,
            if self.truncated { " (truncated)" } else { "" }
        )
    }
}

impl<S> Mdp<S> {
    /// Exact counts over the deduplicated graph.
    pub fn stats(&self) -> MdpStats {
        MdpStats {
            states: self.states.len(),
            choices: self.choices.iter().map(|c| c.len()).sum(),
            transitions: self
                .choices
                .iter()
                .flat_map(|c| c.iter())
                .map(|c| c.dist.len())
                .sum(),
            truncated: self.truncated,
        }
    }
}

/// Generic deterministic breadth-first exploration. Successor lists are
/// computed per frontier layer (in parallel when a rayon pool is active) and
/// inserted in layer order, so the result is independent of thread count.
pub fn explore<S, E, F>(
    initial: S,
    successors: F,
    limits: &ExploreLimits,
) -> Result<Mdp<S>, E>
where
    S: Clone + Eq + Hash + Send + Sync,
    E: Send,
    F: Fn(&S) -> Result<Vec<RawChoice<S>>, E> + Sync,
{
    let start = Instant::now();
    let mut states: Vec<S> = vec![initial.clone()];
    let mut index: HashMap<S, usize> = HashMap::new();
    index.insert(initial, 0);
    let mut choices: Vec<Vec<Choice>> = vec![Vec::new()];
    let mut truncated_states = vec![false];
    let mut truncated = false;
    let mut frontier: Vec<usize> = vec![0];
    let mut depth = 0usize;

    while !frontier.is_empty() {
        if depth >= limits.max_depth
            || limits
                .time_budget
                .map_or(false, |budget| start.elapsed() > budget)
        {
            for idx in frontier {
                truncated_states[idx] = true;
            }
            truncated = true;
            break;
        }
        let layer_states: Vec<S> = frontier.iter().map(|i| states[*i].clone()).collect();
        let expanded: Result<Vec<Vec<RawChoice<S>>>, E> = if layer_states.len() > 1 {
            layer_states.par_iter().map(|s| successors(s)).collect()
        } else {
            layer_states.iter().map(|s| successors(s)).collect()
        };
        let expanded = expanded?;
        let mut next_frontier = Vec::new();
        for (idx, raw) in frontier.iter().copied().zip(expanded) {
            let mut resolved: Vec<Choice> = Vec::with_capacity(raw.len());
            let mut new_here: Vec<usize> = Vec::new();
            let mut ok = true;
            for rc in &raw {
                if !ok {
                    break;
                }
                let mut dist = Vec::with_capacity(rc.dist.len());
                for (p, target) in &rc.dist {
                    let ti = match index.get(target) {
                        Some(i) => *i,
                        None => {
                            if states.len() >= limits.max_states {
                                ok = false;
                                break;
                            }
                            let i = states.len();
                            states.push(target.clone());
                            index.insert(target.clone(), i);
                            choices.push(Vec::new());
                            truncated_states.push(false);
                            new_here.push(i);
                            i
                        }
                    };
                    dist.push((p.clone(), ti));
                }
                if ok {
                    dist.sort_by(|a, b| a.1.cmp(&b.1));
                    let mut merged: Vec<(BigRational, usize)> = Vec::new();
                    for (p, t) in dist {
                        match merged.last_mut() {
                            Some((acc, last)) if *last == t => *acc += p,
                            _ => merged.push((p, t)),
                        }
                    }
                    resolved.push(Choice {
                        tag: rc.tag.clone(),
                        is_tick: rc.is_tick,
                        dist: merged,
                    });
                }
            }
            if ok {
                resolved.sort();
                resolved.dedup();
                choices[idx] = resolved;
            } else {
                // No room for a new successor: this state stays absorbing.
                truncated_states[idx] = true;
                truncated = true;
            }
            next_frontier.extend(new_here);
        }
        frontier = next_frontier;
        depth += 1;
    }

    Ok(Mdp {
        states,
        initial: 0,
        choices,
        truncated_states,
        truncated,
    })
}

/// Reorders parallel components into a canonical form: individuals sorted by
/// (species, location, term) with ids renumbered in that order, pools sorted.
/// Two configurations canonicalize identically exactly when they differ only
/// by component order and individual identity.
pub fn canonicalize(c: &Configuration) -> Configuration {
    let mut individuals = c.individuals.clone();
    individuals.sort_by(|a, b| {
        (a.species, a.loc, &a.term).cmp(&(b.species, b.loc, &b.term))
    });
    for (i, ind) in individuals.iter_mut().enumerate() {
        ind.id = i as u64;
    }
    let mut species = c.species.clone();
    species.sort();
    Configuration {
        env: c.env.clone(),
        individuals,
        species,
        next_id: c.individuals.len() as u64,
    }
}

/// Errors surfaced while building an MDP.
#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum BuildError {
    #[error(transparent)]
    Semantics(#[from] SemanticsError),
}

/// Explores the prioritized semantics of a model into an MDP. Per state:
/// the joint probabilistic step when one is enabled (a single choice),
/// otherwise one Dirac choice per surviving nondeterministic step.
pub fn build_mdp(
    model: &Model,
    policy: &Policy,
    limits: &ExploreLimits,
) -> Result<Mdp<Configuration>, BuildError> {
    build_mdp_with(model, policy, limits, false)
}

/// As [`build_mdp`], optionally treating every replication pool as
/// unbounded (exploration then relies on the limits for finiteness).
pub fn build_mdp_with(
    model: &Model,
    policy: &Policy,
    limits: &ExploreLimits,
    unbounded_replication: bool,
) -> Result<Mdp<Configuration>, BuildError> {
    let mut stepper = Stepper::new(model);
    stepper.unbounded_replication = unbounded_replication;
    let initial = canonicalize(&stepper.initial_configuration()?);
    explore(
        initial,
        |c: &Configuration| -> Result<Vec<RawChoice<Configuration>>, SemanticsError> {
            debug_assert!(stepper.compatible(c), "reachable state is incompatible");
            let prob = stepper.prob_steps(c)?;
            if !prob.is_empty() {
                return Ok(vec![RawChoice {
                    tag: ChoiceTag::Prob,
                    is_tick: false,
                    dist: prob
                        .into_iter()
                        .map(|p| (p.weight, canonicalize(&p.next)))
                        .collect(),
                }]);
            }
            let steps = stepper.prioritized_steps(c, policy)?;
            Ok(steps
                .into_iter()
                .map(|s| RawChoice {
                    tag: ChoiceTag::Action(s.label),
                    is_tick: s.label.is_tick(),
                    dist: vec![(BigRational::from_integer(1.into()), canonicalize(&s.next))],
                })
                .collect())
        },
        limits,
    )
    .map_err(BuildError::from)
}

/// Serializes a calculus MDP: per state the per-(location, species) counts
/// and pool capacities, then every choice with exact rational probabilities.
pub fn mdp_to_json(model: &Model, mdp: &Mdp<Configuration>) -> serde_json::Value {
    let states: Vec<_> = mdp
        .states
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let counts: serde_json::Map<String, serde_json::Value> = c
                .env
                .entries()
                .map(|(l, s, n)| {
                    (
                        format!(
                            "{}:{}",
                            model.habitat.name(l),
                            model.species[s.idx()].name
                        ),
                        json!(n),
                    )
                })
                .collect();
            let pools: serde_json::Map<String, serde_json::Value> = c
                .species
                .iter()
                .map(|p| {
                    (
                        model.species[p.species.idx()].name.clone(),
                        json!(p.remaining),
                    )
                })
                .collect();
            json!({
                "id": i,
                "counts": counts,
                "pools": pools,
                "truncated": mdp.truncated_states[i],
            })
        })
        .collect();
    let choices: Vec<_> = mdp
        .choices
        .iter()
        .enumerate()
        .flat_map(|(i, cs)| {
            cs.iter().map(move |c| (i, c)).collect::<Vec<_>>()
        })
        .map(|(i, c)| {
            let action = match &c.tag {
                ChoiceTag::Action(l) => format!(
                    "{}",
                    LabelDisplay {
                        model,
                        label: *l
                    }
                ),
                ChoiceTag::Prob => "prob".to_string(),
                ChoiceTag::Command(Some(l)) => format!("[{l}]"),
                ChoiceTag::Command(None) => "[]".to_string(),
            };
            json!({
                "state": i,
                "action": action,
                "tick": c.is_tick,
                "dist": c.dist.iter().map(|(p, t)| json!({"p": p.to_string(), "to": t})).collect::<Vec<_>>(),
            })
        })
        .collect();
    json!({
        "initial": mdp.initial,
        "truncated": mdp.truncated,
        "states": states,
        "choices": choices,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse_model;

    fn model(src: &str) -> Model {
        let m = parse_model(src).unwrap();
        assert!(crate::model::validate_model(&m).is_ok());
        m
    }

    #[test]
    fn tick_loop_collapses_to_one_state() {
        let m = model(
            r#"
habitat { locations: l1; }
species s { bound 0 via rep; process P0 = tick.P0; init P0; }
system { 1 of s.P0 at l1; }
"#,
        );
        let mdp = build_mdp(&m, &Policy::empty(), &ExploreLimits::default()).unwrap();
        let stats = mdp.stats();
        assert_eq!(stats.states, 1);
        assert_eq!(stats.choices, 1);
        assert_eq!(stats.transitions, 1);
        assert!(!stats.truncated);
        assert_eq!(mdp.choices[0][0].dist, vec![(BigRational::from_integer(1.into()), 0)]);
    }

    #[test]
    fn empty_system_has_tick_self_loop() {
        let m = model(
            r#"
habitat { locations: l1; }
species s { bound 0 via rep; process P0 = tick.P0; init P0; }
system { restrict { rep } }
"#,
        );
        let mdp = build_mdp(&m, &Policy::empty(), &ExploreLimits::default()).unwrap();
        assert_eq!(mdp.stats().states, 1);
        assert_eq!(mdp.choices[0].len(), 1);
        assert!(mdp.choices[0][0].is_tick);
    }

    #[test]
    fn canonicalize_identifies_swapped_identical_individuals() {
        let m = model(
            r#"
habitat { locations: l1, l2; neighbors: (l1,l2); }
species s { bound 0 via rep; process P = a?.Q; process Q = tick.P; init P; }
system { 1 of s.P at l1; 1 of s.Q at l1; }
"#,
        );
        let st = Stepper::new(&m);
        let c = st.initial_configuration().unwrap();
        let mut swapped = c.clone();
        swapped.individuals.swap(0, 1);
        assert_eq!(canonicalize(&c), canonicalize(&swapped));

        // Same processes at different locations stay distinct.
        let mut moved = c.clone();
        moved.individuals[0].loc = crate::model::LocId(1);
        assert_ne!(canonicalize(&c), canonicalize(&moved));
    }

    #[test]
    fn truncation_flags_partial_exploration() {
        let m = model(
            r#"
habitat { locations: l1; }
species s { bound 30 via rep; process P = rep!.tick.P; init P; }
system { 1 of s.P at l1; restrict { rep } }
"#,
        );
        let limits = ExploreLimits::new(5, 1_000_000);
        let mdp = build_mdp(&m, &Policy::empty(), &limits).unwrap();
        assert!(mdp.truncated);
        assert!(mdp.truncated_states.iter().any(|t| *t));
        assert!(mdp.states.len() <= 5);
    }

    #[test]
    fn determinism_across_thread_counts() {
        let m = model(
            r#"
habitat { locations: l1, l2; neighbors: (l1,l2); }
species s {
  bound 1 via rep;
  process P = disperse uniform nb(myloc) then cond(s@myloc = 1 -> P1; true -> tick.P);
  process P1 = rep!.tick.P;
  init P;
}
system { 2 of s.P at l1; restrict { rep } }
"#,
        );
        let limits = ExploreLimits::default();
        let a = build_mdp(&m, &Policy::empty(), &limits).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let b = pool.install(|| build_mdp(&m, &Policy::empty(), &limits).unwrap());
        let pool1 = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let c = pool1.install(|| build_mdp(&m, &Policy::empty(), &limits).unwrap());
        assert_eq!(a, b);
        assert_eq!(a, c);
    }
}
