//! Policies: partial orders on non-probabilistic action labels.
//!
//! A pair `(lower, higher)` means the higher action preempts the lower one
//! whenever both are enabled in the same configuration. Policies are written
//! as patterns with `*` wildcards for locations and species; a wildcard in
//! the same position on both sides of a pair covers one shared value, so
//! `in(a,*,s) < in(b,*,s)` relates the two actions location by location.

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

use crate::model::{ActionLabel, ChanId, LocId, Model, SpeciesId, TauKind};

/// The label family a pattern matches.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum PatternKind {
    In(ChanId),
    Out(ChanId),
    TauChan(ChanId),
    TauGo,
    Tick,
}

/// One side of a policy pair; `None` in a field is a wildcard.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct PolicyPattern {
    pub kind: PatternKind,
    pub loc: Option<LocId>,
    pub species: Option<SpeciesId>,
}

impl PolicyPattern {
    pub fn tick() -> Self {
        PolicyPattern {
            kind: PatternKind::Tick,
            loc: None,
            species: None,
        }
    }

    fn concrete(&self, loc: LocId, species: SpeciesId) -> ActionLabel {
        match self.kind {
            PatternKind::In(c) => ActionLabel::In(c, self.loc.unwrap_or(loc), self.species.unwrap_or(species)),
            PatternKind::Out(c) => {
                ActionLabel::Out(c, self.loc.unwrap_or(loc), self.species.unwrap_or(species))
            }
            PatternKind::TauChan(c) => ActionLabel::Tau(
                TauKind::Chan(c),
                self.loc.unwrap_or(loc),
                self.species.unwrap_or(species),
            ),
            PatternKind::TauGo => ActionLabel::Tau(
                TauKind::Go,
                self.loc.unwrap_or(loc),
                self.species.unwrap_or(species),
            ),
            PatternKind::Tick => ActionLabel::Tick,
        }
    }

    /// Returns an error message when the pattern references an undeclared id.
    pub fn check(&self, model: &Model) -> Option<String> {
        match self.kind {
            PatternKind::In(c) | PatternKind::Out(c) | PatternKind::TauChan(c) => {
                if c.idx() >= model.channels.len() {
                    return Some("pattern references an undeclared channel".into());
                }
            }
            PatternKind::TauGo | PatternKind::Tick => {}
        }
        if let Some(l) = self.loc {
            if l.idx() >= model.habitat.names.len() {
                return Some("pattern references an undeclared location".into());
            }
        }
        if let Some(s) = self.species {
            if s.idx() >= model.species.len() {
                return Some("pattern references an undeclared species".into());
            }
        }
        None
    }

    /// The channel of a bare input/output pattern, if any.
    pub fn bare_channel(&self) -> Option<ChanId> {
        match self.kind {
            PatternKind::In(c) | PatternKind::Out(c) => Some(c),
            _ => None,
        }
    }
}

/// A closed policy: the transitive closure of the declared pairs, checked
/// irreflexive. `(lower, higher)` membership means `higher` preempts `lower`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Policy {
    pairs: BTreeSet<(ActionLabel, ActionLabel)>,
}

impl Policy {
    pub fn empty() -> Self {
        Policy::default()
    }

    pub fn pairs(&self) -> impl Iterator<Item = &(ActionLabel, ActionLabel)> {
        self.pairs.iter()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn contains(&self, lower: ActionLabel, higher: ActionLabel) -> bool {
        self.pairs.contains(&(lower, higher))
    }

    /// All labels that preempt `lower`.
    pub fn dominators_of(&self, lower: ActionLabel) -> impl Iterator<Item = ActionLabel> + '_ {
        self.pairs
            .iter()
            .filter(move |(lo, _)| *lo == lower)
            .map(|(_, hi)| *hi)
    }

    /// All labels occurring on the higher side.
    pub fn higher_labels(&self) -> BTreeSet<ActionLabel> {
        self.pairs.iter().map(|(_, hi)| *hi).collect()
    }
}

/// Rejection of a policy whose closure is not a strict partial order.
#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum PolicyError {
    #[error("policy is cyclic: {0}")]
    Cycle(CycleWitness),
}

/// A witness cycle `a < b < ... < a` through the declared pairs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CycleWitness(pub Vec<ActionLabel>);

impl fmt::Display for CycleWitness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|l| format!("{l:?}")).collect();
        write!(f, "{}", parts.join(" < "))
    }
}

/// Transitively closes a set of concrete pairs and rejects reflexive
/// entries, returning a witness cycle on failure.
pub fn policy_closure(
    raw: BTreeSet<(ActionLabel, ActionLabel)>,
) -> Result<Policy, PolicyError> {
    let mut pairs = raw.clone();
    loop {
        let mut added = Vec::new();
        for (a, b) in &pairs {
            for (c, d) in &pairs {
                if b == c && !pairs.contains(&(*a, *d)) {
                    added.push((*a, *d));
                }
            }
        }
        if added.is_empty() {
            break;
        }
        pairs.extend(added);
    }
    if let Some((a, _)) = pairs.iter().find(|(a, b)| a == b) {
        return Err(PolicyError::Cycle(find_cycle(&raw, *a)));
    }
    Ok(Policy { pairs })
}

/// Reconstructs a cycle through `start` in the raw (pre-closure) relation.
fn find_cycle(raw: &BTreeSet<(ActionLabel, ActionLabel)>, start: ActionLabel) -> CycleWitness {
    let mut path = vec![start];
    let mut seen = BTreeSet::new();
    seen.insert(start);
    let mut cur = start;
    loop {
        // Follow any raw edge that can still reach `start`.
        let next = raw
            .iter()
            .filter(|(a, _)| *a == cur)
            .map(|(_, b)| *b)
            .find(|b| *b == start || reaches(raw, *b, start, &mut BTreeSet::new()));
        match next {
            Some(b) if b == start => {
                path.push(start);
                return CycleWitness(path);
            }
            Some(b) => {
                if !seen.insert(b) {
                    path.push(b);
                    return CycleWitness(path);
                }
                path.push(b);
                cur = b;
            }
            None => return CycleWitness(path),
        }
    }
}

fn reaches(
    raw: &BTreeSet<(ActionLabel, ActionLabel)>,
    from: ActionLabel,
    to: ActionLabel,
    visited: &mut BTreeSet<ActionLabel>,
) -> bool {
    if !visited.insert(from) {
        return false;
    }
    raw.iter()
        .filter(|(a, _)| *a == from)
        .any(|(_, b)| *b == to || reaches(raw, *b, to, visited))
}

/// Expands wildcard patterns into concrete pairs over the model's locations
/// and species, then closes the result. A location (or species) wildcard on
/// both sides of a pair ranges over one shared value.
pub fn instantiate_wildcards(
    patterns: &[(PolicyPattern, PolicyPattern)],
    model: &Model,
) -> Result<Policy, PolicyError> {
    let mut raw = BTreeSet::new();
    let locs: Vec<LocId> = model.habitat.locations().collect();
    let species: Vec<SpeciesId> = (0..model.species.len() as u32).map(SpeciesId).collect();
    for (lo, hi) in patterns {
        // `Tick` carries no location/species, so a wildcard paired with it
        // still ranges over all valuations on the other side.
        let shared_loc = lo.loc.is_none() && hi.loc.is_none();
        let shared_sp = lo.species.is_none() && hi.species.is_none();
        for &l_lo in &locs {
            for &l_hi in &locs {
                if shared_loc && l_lo != l_hi {
                    continue;
                }
                for &s_lo in &species {
                    for &s_hi in &species {
                        if shared_sp && s_lo != s_hi {
                            continue;
                        }
                        raw.insert((lo.concrete(l_lo, s_lo), hi.concrete(l_hi, s_hi)));
                    }
                }
            }
        }
    }
    policy_closure(raw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse_model;

    fn lbl(c: u32) -> ActionLabel {
        ActionLabel::In(ChanId(c), LocId(0), SpeciesId(0))
    }

    #[test]
    fn closure_adds_transitive_pair() {
        let raw: BTreeSet<_> = [(lbl(0), lbl(1)), (lbl(1), lbl(2))].into_iter().collect();
        let policy = policy_closure(raw).unwrap();
        assert!(policy.contains(lbl(0), lbl(2)));
        assert_eq!(policy.len(), 3);
    }

    #[test]
    fn antisymmetry_violation_is_a_cycle() {
        let raw: BTreeSet<_> = [(lbl(0), lbl(1)), (lbl(1), lbl(0))].into_iter().collect();
        match policy_closure(raw) {
            Err(PolicyError::Cycle(w)) => {
                assert!(w.0.len() >= 3);
                assert_eq!(w.0.first(), w.0.last());
            }
            other => panic!("expected cycle, got {other:?}"),
        }
    }

    #[test]
    fn empty_policy_closes_to_empty() {
        let policy = policy_closure(BTreeSet::new()).unwrap();
        assert!(policy.is_empty());
    }

    #[test]
    fn shared_location_wildcard_expands_per_location() {
        let src = r#"
habitat { locations: l1, l2, l3, l4; neighbors: (l1,l2), (l1,l3), (l2,l4), (l3,l4); }
species s {
  bound 1 via rep;
  process P = disperse?.P1 + reproduce?.P1;
  process P1 = tick.P;
  init P;
}
system { 1 of s.P at l1; restrict { rep } }
policy {
  in(reproduce, *, *) < in(disperse, *, *);
  tau(rep, *, *) < tau(go, *, *);
}
"#;
        let model = parse_model(src).unwrap();
        let policy = model.policy().unwrap();
        // Two patterns, each over four shared locations and one species.
        assert_eq!(policy.len(), 8);
    }

    #[test]
    fn tick_self_pair_rejected() {
        let raw: BTreeSet<_> = [(ActionLabel::Tick, ActionLabel::Tick)].into_iter().collect();
        assert!(policy_closure(raw).is_err());
    }
}
