//! The operational semantics: environment update operations, the
//! nondeterministic and probabilistic transition relations over
//! configurations, and the prioritized relation that applies a policy.
//!
//! A configuration pairs an environment (per-location, per-species counts)
//! with the runtime system: a flat list of individuals with stable ids, one
//! replication pool per species process, and the set of restricted channels
//! (kept on the model side). Compatibility — the environment counts exactly
//! the live individuals — is preserved by every transition; an individual is
//! dropped from the environment by the transition that deactivates it, which
//! covers prefix continuations, probabilistic branches, and conditionals
//! whose selected branch has terminated.

use std::collections::{BTreeMap, BTreeSet};

use num::{BigRational, One};
use thiserror::Error;

use crate::expr::{eval_bool, Environment, EvalError};
use crate::model::{
    ActionLabel, ChanId, LocId, Model, Prefix, ProcessTerm, SpeciesId, SystemTerm, TauKind,
};
use crate::policy::Policy;

pub type IndividualId = u64;

/// A located individual at run time.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Individual {
    pub id: IndividualId,
    pub species: SpeciesId,
    pub loc: LocId,
    pub term: ProcessTerm,
}

/// The residual capacity of one replication pool.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SpeciesState {
    pub species: SpeciesId,
    pub remaining: u32,
}

/// A semantic state: environment plus runtime system.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Configuration {
    pub env: Environment,
    pub individuals: Vec<Individual>,
    pub species: Vec<SpeciesState>,
    pub next_id: IndividualId,
}

/// One nondeterministic step.
#[derive(Clone, Debug)]
pub struct NondetStep {
    pub label: ActionLabel,
    /// Ids of the individuals taking part; empty only for pool-only steps.
    pub participants: Vec<IndividualId>,
    pub next: Configuration,
}

/// One branch of the joint probabilistic step.
#[derive(Clone, Debug)]
pub struct ProbStep {
    pub weight: BigRational,
    pub next: Configuration,
}

/// Failures while computing transitions.
#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum SemanticsError {
    /// An environment count would drop below zero; configurations reached
    /// from a compatible initial state never trigger this.
    #[error("environment underflow at location #{0:?}, species #{1:?}")]
    Bottom(LocId, SpeciesId),
    #[error("guard evaluation failed: {0}")]
    Eval(#[from] EvalError),
    #[error("constant reference does not resolve to a process")]
    ConstantCycle,
    #[error("dispersal from a location with no neighbors")]
    IsolatedDisperse(LocId),
    #[error("restriction must enclose the whole system")]
    NonGlobalRestriction,
    #[error("joint probabilistic step has more than {0} branches")]
    ProbExplosion(usize),
}

/// Increments the count of `species` at `loc`.
pub fn env_add(env: &Environment, species: SpeciesId, loc: LocId) -> Environment {
    let mut out = env.clone();
    out.set(loc, species, env.count(loc, species) + 1);
    out
}

/// Decrements the count of `species` at `loc`; absent entries underflow.
pub fn env_remove(
    env: &Environment,
    species: SpeciesId,
    loc: LocId,
) -> Result<Environment, SemanticsError> {
    let n = env.count(loc, species);
    if n == 0 {
        return Err(SemanticsError::Bottom(loc, species));
    }
    let mut out = env.clone();
    out.set(loc, species, n - 1);
    Ok(out)
}

/// Merges two environments derived from a common base: each resulting count
/// is `base + delta1 + delta2`. Underflow reports the offending entry.
pub fn env_merge(
    base: &Environment,
    e1: &Environment,
    e2: &Environment,
) -> Result<Environment, SemanticsError> {
    let mut keys: BTreeSet<(LocId, SpeciesId)> = BTreeSet::new();
    for e in [base, e1, e2] {
        keys.extend(e.entries().map(|(l, s, _)| (l, s)));
    }
    let mut out = Environment::new();
    for (l, s) in keys {
        let m = base.count(l, s) as i64;
        let i1 = e1.count(l, s) as i64 - m;
        let i2 = e2.count(l, s) as i64 - m;
        let v = m + i1 + i2;
        if v < 0 {
            return Err(SemanticsError::Bottom(l, s));
        }
        out.set(l, s, v as u32);
    }
    Ok(out)
}

type Delta = BTreeMap<(LocId, SpeciesId), i64>;

fn delta_add(delta: &mut Delta, loc: LocId, sp: SpeciesId, by: i64) {
    *delta.entry((loc, sp)).or_insert(0) += by;
}

fn apply_delta(env: &Environment, delta: &Delta) -> Result<Environment, SemanticsError> {
    let mut out = env.clone();
    for ((l, s), d) in delta {
        let v = out.count(*l, *s) as i64 + d;
        if v < 0 {
            return Err(SemanticsError::Bottom(*l, *s));
        }
        out.set(*l, *s, v as u32);
    }
    Ok(out)
}

/// The resolved head of an individual's term: what it can immediately do.
enum Head {
    Nil,
    NSum(Vec<(Prefix, ProcessTerm)>),
    PSum(Vec<(BigRational, ProcessTerm)>),
}

/// Computes transitions of configurations of one model.
pub struct Stepper<'m> {
    pub model: &'m Model,
    restricted: BTreeSet<ChanId>,
    /// When set, replication pools never refuse; exploration must then be
    /// depth- or state-bounded.
    pub unbounded_replication: bool,
}

impl<'m> Stepper<'m> {
    pub fn new(model: &'m Model) -> Self {
        Stepper {
            model,
            restricted: model.restricted_channels(),
            unbounded_replication: false,
        }
    }

    pub fn restricted(&self) -> &BTreeSet<ChanId> {
        &self.restricted
    }

    /// Builds the initial configuration from the model's system term. The
    /// environment counts exactly the live located individuals.
    pub fn initial_configuration(&self) -> Result<Configuration, SemanticsError> {
        let mut individuals = Vec::new();
        let mut species = Vec::new();
        self.flatten(&self.model.system, true, &mut individuals, &mut species)?;
        let mut env = Environment::new();
        for ind in &individuals {
            if !self.is_terminated(ind.species, &ind.term) {
                env = env_add(&env, ind.species, ind.loc);
            }
        }
        let next_id = individuals.len() as IndividualId;
        Ok(Configuration {
            env,
            individuals,
            species,
            next_id,
        })
    }

    fn flatten(
        &self,
        t: &SystemTerm,
        spine: bool,
        individuals: &mut Vec<Individual>,
        species: &mut Vec<SpeciesState>,
    ) -> Result<(), SemanticsError> {
        match t {
            SystemTerm::Empty => Ok(()),
            SystemTerm::Located {
                term,
                species: sp,
                loc,
                count,
            } => {
                for _ in 0..*count {
                    individuals.push(Individual {
                        id: individuals.len() as IndividualId,
                        species: *sp,
                        loc: *loc,
                        term: term.clone(),
                    });
                }
                Ok(())
            }
            SystemTerm::SpeciesProc(sp) => {
                species.push(SpeciesState {
                    species: *sp,
                    remaining: self.model.species[sp.idx()].bound,
                });
                Ok(())
            }
            SystemTerm::Parallel(parts) => {
                for p in parts {
                    self.flatten(p, false, individuals, species)?;
                }
                Ok(())
            }
            SystemTerm::Restrict(inner, _) => {
                if !spine {
                    return Err(SemanticsError::NonGlobalRestriction);
                }
                self.flatten(inner, spine, individuals, species)
            }
        }
    }

    /// True when `term` denotes the inactive process, following constant
    /// references.
    pub fn is_terminated(&self, species: SpeciesId, term: &ProcessTerm) -> bool {
        let consts = &self.model.species[species.idx()].consts;
        let mut cur = term;
        for _ in 0..=consts.len() {
            match cur {
                ProcessTerm::Nil => return true,
                ProcessTerm::ConstRef(i) if (*i as usize) < consts.len() => {
                    cur = &consts[*i as usize].1;
                }
                _ => return false,
            }
        }
        false
    }

    /// True when the environment counts exactly the live individuals of the
    /// system, per location and species.
    pub fn compatible(&self, c: &Configuration) -> bool {
        let mut expected = Environment::new();
        for ind in &c.individuals {
            if !self.is_terminated(ind.species, &ind.term) {
                expected = env_add(&expected, ind.species, ind.loc);
            }
        }
        expected == c.env
    }

    fn resolve_head(&self, env: &Environment, ind: &Individual) -> Result<Head, SemanticsError> {
        let sp = &self.model.species[ind.species.idx()];
        let mut cur: &ProcessTerm = &ind.term;
        let mut fuel = 4 * (sp.consts.len() + 4);
        loop {
            if fuel == 0 {
                return Err(SemanticsError::ConstantCycle);
            }
            fuel -= 1;
            match cur {
                ProcessTerm::Nil => return Ok(Head::Nil),
                ProcessTerm::NSum(b) => return Ok(Head::NSum(b.clone())),
                ProcessTerm::PSum(b) => return Ok(Head::PSum(b.clone())),
                ProcessTerm::ConstRef(i) => {
                    if (*i as usize) >= sp.consts.len() {
                        return Err(SemanticsError::ConstantCycle);
                    }
                    cur = &sp.consts[*i as usize].1;
                }
                ProcessTerm::Cond(branches) => {
                    let mut selected = None;
                    for (guard, body) in branches {
                        if eval_bool(env, &self.model.attributes, guard, Some(ind.loc))? {
                            selected = Some(body);
                            break;
                        }
                    }
                    match selected {
                        // A conditional with no true guard offers nothing.
                        None => return Ok(Head::NSum(Vec::new())),
                        Some(body) => cur = body,
                    }
                }
                ProcessTerm::Disperse { cont, extra } => {
                    let nbs = self.model.habitat.neighbors_of(ind.loc);
                    if nbs.is_empty() {
                        return Err(SemanticsError::IsolatedDisperse(ind.loc));
                    }
                    let w = BigRational::new(1.into(), (nbs.len() as i64).into());
                    let branches = nbs
                        .iter()
                        .map(|dest| {
                            let mut sum = vec![(Prefix::Go(*dest), (**cont).clone())];
                            sum.extend(extra.iter().cloned());
                            (w.clone(), ProcessTerm::NSum(sum))
                        })
                        .collect();
                    return Ok(Head::PSum(branches));
                }
            }
        }
    }

    /// The joint probabilistic step: every probabilistic component resolves
    /// simultaneously; all other components are frozen. Empty iff no
    /// component is probabilistic.
    pub fn prob_steps(&self, c: &Configuration) -> Result<Vec<ProbStep>, SemanticsError> {
        const MAX_BRANCHES: usize = 1 << 20;
        let mut prob_components: Vec<(usize, Vec<(BigRational, ProcessTerm)>)> = Vec::new();
        for (i, ind) in c.individuals.iter().enumerate() {
            if let Head::PSum(branches) = self.resolve_head(&c.env, ind)? {
                prob_components.push((i, branches));
            }
        }
        if prob_components.is_empty() {
            return Ok(Vec::new());
        }
        let mut total: usize = 1;
        for (_, b) in &prob_components {
            total = total.saturating_mul(b.len());
            if total > MAX_BRANCHES {
                return Err(SemanticsError::ProbExplosion(MAX_BRANCHES));
            }
        }
        // Cartesian product over the branch choices of every component.
        let mut steps = Vec::with_capacity(total);
        let mut choice = vec![0usize; prob_components.len()];
        loop {
            let mut weight = BigRational::one();
            let mut next = c.clone();
            let mut delta = Delta::new();
            for (k, (idx, branches)) in prob_components.iter().enumerate() {
                let (w, cont) = &branches[choice[k]];
                weight *= w;
                let ind = &mut next.individuals[*idx];
                if self.is_terminated(ind.species, cont) {
                    delta_add(&mut delta, ind.loc, ind.species, -1);
                }
                ind.term = cont.clone();
            }
            next.env = apply_delta(&c.env, &delta)?;
            steps.push(ProbStep { weight, next });
            // advance odometer
            let mut k = 0;
            loop {
                if k == choice.len() {
                    return Ok(steps);
                }
                choice[k] += 1;
                if choice[k] < prob_components[k].1.len() {
                    break;
                }
                choice[k] = 0;
                k += 1;
            }
        }
    }

    /// All unprioritized nondeterministic steps. Empty whenever a
    /// probabilistic step is enabled, which takes precedence.
    pub fn nondet_steps(&self, c: &Configuration) -> Result<Vec<NondetStep>, SemanticsError> {
        let mut heads = Vec::with_capacity(c.individuals.len());
        for ind in &c.individuals {
            heads.push(self.resolve_head(&c.env, ind)?);
        }
        if heads.iter().any(|h| matches!(h, Head::PSum(_))) {
            return Ok(Vec::new());
        }

        struct Nd {
            idx: usize,
            prefix: Prefix,
            cont: ProcessTerm,
        }
        let mut moves: Vec<Nd> = Vec::new();
        // tick options per individual: (continuation, removes)
        let mut ticks: Vec<Vec<ProcessTerm>> = vec![Vec::new(); c.individuals.len()];
        for (idx, head) in heads.iter().enumerate() {
            match head {
                Head::Nil => ticks[idx].push(ProcessTerm::Nil),
                Head::NSum(branches) => {
                    for (prefix, cont) in branches {
                        match prefix {
                            Prefix::Tick => ticks[idx].push(cont.clone()),
                            _ => moves.push(Nd {
                                idx,
                                prefix: prefix.clone(),
                                cont: cont.clone(),
                            }),
                        }
                    }
                }
                Head::PSum(_) => unreachable!(),
            }
        }

        let mut steps = Vec::new();

        // Solo moves and movement steps.
        for m in &moves {
            let ind = &c.individuals[m.idx];
            match m.prefix {
                Prefix::In(ch) | Prefix::Out(ch) => {
                    if self.restricted.contains(&ch) {
                        continue;
                    }
                    let label = match m.prefix {
                        Prefix::In(_) => ActionLabel::In(ch, ind.loc, ind.species),
                        _ => ActionLabel::Out(ch, ind.loc, ind.species),
                    };
                    let mut next = c.clone();
                    let mut delta = Delta::new();
                    if self.is_terminated(ind.species, &m.cont) {
                        delta_add(&mut delta, ind.loc, ind.species, -1);
                    }
                    next.individuals[m.idx].term = m.cont.clone();
                    next.env = apply_delta(&c.env, &delta)?;
                    steps.push(NondetStep {
                        label,
                        participants: vec![ind.id],
                        next,
                    });
                }
                Prefix::Go(dest) => {
                    if !self.model.habitat.are_neighbors(ind.loc, dest) {
                        continue;
                    }
                    let mut next = c.clone();
                    let mut delta = Delta::new();
                    delta_add(&mut delta, ind.loc, ind.species, -1);
                    delta_add(&mut delta, dest, ind.species, 1);
                    if self.is_terminated(ind.species, &m.cont) {
                        delta_add(&mut delta, dest, ind.species, -1);
                    }
                    next.individuals[m.idx].term = m.cont.clone();
                    next.individuals[m.idx].loc = dest;
                    next.env = apply_delta(&c.env, &delta)?;
                    steps.push(NondetStep {
                        label: ActionLabel::Tau(TauKind::Go, ind.loc, ind.species),
                        participants: vec![ind.id],
                        next,
                    });
                }
                Prefix::Tick => unreachable!(),
            }
        }

        // Binary synchronization of co-located complementary prefixes.
        for mo in &moves {
            let Prefix::Out(ch) = mo.prefix else { continue };
            let out_ind = &c.individuals[mo.idx];
            for mi in &moves {
                if mi.idx == mo.idx {
                    continue;
                }
                let Prefix::In(ch_in) = mi.prefix else { continue };
                if ch_in != ch {
                    continue;
                }
                let in_ind = &c.individuals[mi.idx];
                if in_ind.loc != out_ind.loc {
                    continue;
                }
                let mut next = c.clone();
                let mut delta = Delta::new();
                if self.is_terminated(out_ind.species, &mo.cont) {
                    delta_add(&mut delta, out_ind.loc, out_ind.species, -1);
                }
                if self.is_terminated(in_ind.species, &mi.cont) {
                    delta_add(&mut delta, in_ind.loc, in_ind.species, -1);
                }
                next.individuals[mo.idx].term = mo.cont.clone();
                next.individuals[mi.idx].term = mi.cont.clone();
                next.env = apply_delta(&c.env, &delta)?;
                steps.push(NondetStep {
                    label: ActionLabel::Tau(TauKind::Chan(ch), out_ind.loc, out_ind.species),
                    participants: vec![out_ind.id, in_ind.id],
                    next,
                });
            }
        }

        // Replication: a pool answers a co-located reproduction output and
        // spawns a fresh individual inheriting the requester's location.
        for (k, pool) in c.species.iter().enumerate() {
            if pool.remaining == 0 && !self.unbounded_replication {
                continue;
            }
            let pool_def = &self.model.species[pool.species.idx()];
            let rep = pool_def.rep_channel;
            for mo in &moves {
                let Prefix::Out(ch) = mo.prefix else { continue };
                if ch != rep {
                    continue;
                }
                let parent = &c.individuals[mo.idx];
                let offspring = ProcessTerm::ConstRef(pool_def.offspring);
                let mut next = c.clone();
                let mut delta = Delta::new();
                if self.is_terminated(parent.species, &mo.cont) {
                    delta_add(&mut delta, parent.loc, parent.species, -1);
                }
                if !self.is_terminated(pool.species, &offspring) {
                    delta_add(&mut delta, parent.loc, pool.species, 1);
                }
                next.individuals[mo.idx].term = mo.cont.clone();
                let new_id = next.next_id;
                next.next_id += 1;
                next.individuals.push(Individual {
                    id: new_id,
                    species: pool.species,
                    loc: parent.loc,
                    term: offspring,
                });
                if !self.unbounded_replication {
                    next.species[k].remaining -= 1;
                }
                next.env = apply_delta(&c.env, &delta)?;
                steps.push(NondetStep {
                    label: ActionLabel::Tau(TauKind::Chan(rep), parent.loc, parent.species),
                    participants: vec![parent.id, new_id],
                    next,
                });
            }
            // An unrestricted pool may also spawn on its own at any
            // location; under restriction these steps cannot surface.
            if !self.restricted.contains(&rep) {
                for loc in self.model.habitat.locations() {
                    let offspring = ProcessTerm::ConstRef(pool_def.offspring);
                    let mut next = c.clone();
                    if !self.is_terminated(pool.species, &offspring) {
                        next.env = env_add(&c.env, pool.species, loc);
                    }
                    let new_id = next.next_id;
                    next.next_id += 1;
                    next.individuals.push(Individual {
                        id: new_id,
                        species: pool.species,
                        loc,
                        term: offspring,
                    });
                    if !self.unbounded_replication {
                        next.species[k].remaining -= 1;
                    }
                    steps.push(NondetStep {
                        label: ActionLabel::In(rep, loc, pool.species),
                        participants: Vec::new(),
                        next,
                    });
                }
            }
        }

        // The global time step: every individual must offer a tick; pools
        // always do. One step per combination of tick continuations.
        if ticks.iter().all(|t| !t.is_empty()) {
            let all_ids: Vec<IndividualId> = c.individuals.iter().map(|i| i.id).collect();
            let mut combo = vec![0usize; ticks.len()];
            loop {
                let mut next = c.clone();
                let mut delta = Delta::new();
                for (idx, sel) in combo.iter().enumerate() {
                    let cont = &ticks[idx][*sel];
                    let ind = &mut next.individuals[idx];
                    let was_live = !self.is_terminated(ind.species, &ind.term);
                    if was_live && self.is_terminated(ind.species, cont) {
                        delta_add(&mut delta, ind.loc, ind.species, -1);
                    }
                    ind.term = cont.clone();
                }
                next.env = apply_delta(&c.env, &delta)?;
                steps.push(NondetStep {
                    label: ActionLabel::Tick,
                    participants: all_ids.clone(),
                    next,
                });
                let mut k = 0;
                loop {
                    if k == combo.len() {
                        return Ok(steps);
                    }
                    combo[k] += 1;
                    if combo[k] < ticks[k].len() {
                        break;
                    }
                    combo[k] = 0;
                    k += 1;
                }
            }
        }

        Ok(steps)
    }

    /// Nondeterministic steps surviving the policy: a step is pruned iff
    /// some strictly higher-priority label is enabled in the same
    /// configuration. Probabilistic steps are not subject to policies.
    pub fn prioritized_steps(
        &self,
        c: &Configuration,
        policy: &Policy,
    ) -> Result<Vec<NondetStep>, SemanticsError> {
        let steps = self.nondet_steps(c)?;
        if policy.is_empty() {
            return Ok(steps);
        }
        let enabled: BTreeSet<ActionLabel> = steps.iter().map(|s| s.label).collect();
        Ok(steps
            .into_iter()
            .filter(|s| {
                !policy
                    .dominators_of(s.label)
                    .any(|hi| enabled.contains(&hi))
            })
            .collect())
    }

    /// Samples the joint probabilistic step without materializing the full
    /// product distribution: each probabilistic component resolves
    /// independently. Returns `None` when no component is probabilistic.
    pub fn sample_prob_step(
        &self,
        c: &Configuration,
        rng: &mut impl rand::Rng,
    ) -> Result<Option<Configuration>, SemanticsError> {
        use num::ToPrimitive;
        let mut any = false;
        let mut next = c.clone();
        let mut delta = Delta::new();
        for (i, ind) in c.individuals.iter().enumerate() {
            if let Head::PSum(branches) = self.resolve_head(&c.env, ind)? {
                any = true;
                let draw: f64 = rng.gen();
                let mut acc = 0.0;
                let mut chosen = branches.len() - 1;
                for (k, (w, _)) in branches.iter().enumerate() {
                    acc += w.to_f64().unwrap_or(0.0);
                    if draw < acc {
                        chosen = k;
                        break;
                    }
                }
                let (_, cont) = &branches[chosen];
                if self.is_terminated(ind.species, cont) {
                    delta_add(&mut delta, ind.loc, ind.species, -1);
                }
                next.individuals[i].term = cont.clone();
            }
        }
        if !any {
            return Ok(None);
        }
        next.env = apply_delta(&c.env, &delta)?;
        Ok(Some(next))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse_model;

    fn rat(n: i64, d: i64) -> BigRational {
        BigRational::new(n.into(), d.into())
    }

    #[test]
    fn env_add_and_remove_follow_the_update_rules() {
        let e = Environment::new();
        let s = SpeciesId(0);
        let l = LocId(0);
        let e1 = env_add(&e, s, l);
        assert_eq!(e1.count(l, s), 1);
        let e3 = env_add(&env_add(&e1, s, l), s, l);
        assert_eq!(e3.count(l, s), 3);
        // species independence
        let mixed = env_add(&e1, SpeciesId(1), l);
        assert_eq!(mixed.count(l, s), 1);
        assert_eq!(mixed.count(l, SpeciesId(1)), 1);
        // removal
        assert_eq!(env_remove(&e1, s, l).unwrap(), e);
        assert_eq!(env_remove(&e3, s, l).unwrap().count(l, s), 2);
        assert_eq!(
            env_remove(&e, s, l),
            Err(SemanticsError::Bottom(l, s))
        );
    }

    #[test]
    fn env_merge_combines_deltas() {
        let s = SpeciesId(0);
        let l = LocId(0);
        let mut base = Environment::new();
        base.set(l, s, 2);
        let mut e1 = Environment::new();
        e1.set(l, s, 1); // delta -1
        let mut e2 = Environment::new();
        e2.set(l, s, 3); // delta +1
        assert_eq!(env_merge(&base, &e1, &e2).unwrap(), base);

        let mut one = Environment::new();
        one.set(l, s, 1);
        let empty = Environment::new();
        // deltas -1 and 0
        assert_eq!(env_merge(&one, &empty, &one).unwrap(), empty);
        // double removal underflows
        assert_eq!(
            env_merge(&one, &empty, &empty),
            Err(SemanticsError::Bottom(l, s))
        );
    }

    fn model(src: &str) -> Model {
        let m = parse_model(src).unwrap();
        let report = crate::model::validate_model(&m);
        assert!(report.is_ok(), "{report}");
        m
    }

    #[test]
    fn tick_into_nil_removes_individual() {
        let m = model(
            r#"
habitat { locations: l1; }
species s { bound 0 via rep; process P = tick.0; init P; }
system { 1 of s.P at l1; }
"#,
        );
        let st = Stepper::new(&m);
        let c = st.initial_configuration().unwrap();
        assert_eq!(c.env.count(LocId(0), SpeciesId(0)), 1);
        let steps = st.nondet_steps(&c).unwrap();
        assert_eq!(steps.len(), 1);
        assert_eq!(steps[0].label, ActionLabel::Tick);
        let next = &steps[0].next;
        assert_eq!(next.env.count(LocId(0), SpeciesId(0)), 0);
        assert!(st.compatible(next));
        // The terminated individual still lets time pass.
        let again = st.nondet_steps(next).unwrap();
        assert_eq!(again.len(), 1);
        assert_eq!(again[0].label, ActionLabel::Tick);
        assert_eq!(again[0].next.env, next.env);
    }

    #[test]
    fn restricted_complementary_actions_synchronize_only() {
        let m = model(
            r#"
habitat { locations: l1; }
species s { bound 0 via rep; process P = a!.0; process Q = a?.0; init P; }
system { 1 of s.P at l1; 1 of s.Q at l1; restrict { a, rep } }
"#,
        );
        let st = Stepper::new(&m);
        let c = st.initial_configuration().unwrap();
        let steps = st.nondet_steps(&c).unwrap();
        assert_eq!(steps.len(), 1);
        assert_eq!(
            steps[0].label,
            ActionLabel::Tau(TauKind::Chan(m.channel_by_name("a").unwrap()), LocId(0), SpeciesId(0))
        );
        // Both continuations terminate, so both leave the environment.
        assert_eq!(steps[0].next.env, Environment::new());
        assert!(st.compatible(&steps[0].next));
    }

    #[test]
    fn psum_weights_and_removal() {
        let m = model(
            r#"
habitat { locations: l1; }
species s { bound 0 via rep; process P = 2/5: 0 (+) 3/5: tick.P; init P; }
system { 1 of s.P at l1; }
"#,
        );
        let st = Stepper::new(&m);
        let c = st.initial_configuration().unwrap();
        assert!(st.nondet_steps(&c).unwrap().is_empty(), "probabilistic precedence");
        let steps = st.prob_steps(&c).unwrap();
        assert_eq!(steps.len(), 2);
        let total: BigRational = steps.iter().map(|s| s.weight.clone()).sum();
        assert_eq!(total, BigRational::one());
        let dead = steps.iter().find(|s| s.weight == rat(2, 5)).unwrap();
        assert_eq!(dead.next.env, Environment::new());
        assert!(st.compatible(&dead.next));
    }

    #[test]
    fn joint_probabilistic_step_multiplies_weights() {
        let m = model(
            r#"
habitat { locations: l1; }
species s { bound 0 via rep; process P = 1/2: tick.P (+) 1/2: a?.P; init P; }
system { 2 of s.P at l1; }
"#,
        );
        let st = Stepper::new(&m);
        let c = st.initial_configuration().unwrap();
        let steps = st.prob_steps(&c).unwrap();
        assert_eq!(steps.len(), 4);
        for s in &steps {
            assert_eq!(s.weight, rat(1, 4));
        }
    }

    #[test]
    fn go_moves_only_to_neighbors() {
        let m = model(
            r#"
habitat { locations: l1, l2, l3; neighbors: (l1, l2); }
species s { bound 0 via rep; process P = go l2.P + go l3.P; init P; }
system { 1 of s.P at l1; }
"#,
        );
        let st = Stepper::new(&m);
        let c = st.initial_configuration().unwrap();
        let steps = st.nondet_steps(&c).unwrap();
        // only the neighbor move exists; l3 is unreachable and tick absent
        assert_eq!(steps.len(), 1);
        assert_eq!(
            steps[0].label,
            ActionLabel::Tau(TauKind::Go, LocId(0), SpeciesId(0))
        );
        assert_eq!(steps[0].next.individuals[0].loc, LocId(1));
        assert_eq!(steps[0].next.env.count(LocId(1), SpeciesId(0)), 1);
        assert!(st.compatible(&steps[0].next));
    }

    #[test]
    fn cond_selects_least_true_guard() {
        let m = model(
            r#"
habitat { locations: l1; }
species s {
  bound 0 via rep;
  process P = cond(s@myloc >= 3 -> a?.P; s@myloc >= 1 -> b?.P; true -> c?.P);
  init P;
}
system { 2 of s.P at l1; }
"#,
        );
        let st = Stepper::new(&m);
        let c = st.initial_configuration().unwrap();
        let steps = st.nondet_steps(&c).unwrap();
        let b = m.channel_by_name("b").unwrap();
        assert!(steps.iter().all(|s| matches!(s.label, ActionLabel::In(ch, _, _) if ch == b)));
        assert_eq!(steps.len(), 2);
    }

    #[test]
    fn replication_spawns_at_parent_location_and_decrements_pool() {
        let m = model(
            r#"
habitat { locations: l1, l2; neighbors: (l1, l2); }
species s { bound 1 via rep; process P = rep!.tick.P; init P; }
system { 1 of s.P at l2; restrict { rep } }
"#,
        );
        let st = Stepper::new(&m);
        let c = st.initial_configuration().unwrap();
        let steps = st.nondet_steps(&c).unwrap();
        assert_eq!(steps.len(), 1);
        let rep = m.channel_by_name("rep").unwrap();
        assert_eq!(
            steps[0].label,
            ActionLabel::Tau(TauKind::Chan(rep), LocId(1), SpeciesId(0))
        );
        let next = &steps[0].next;
        assert_eq!(next.individuals.len(), 2);
        assert_eq!(next.individuals[1].loc, LocId(1));
        assert_eq!(next.species[0].remaining, 0);
        assert_eq!(next.env.count(LocId(1), SpeciesId(0)), 2);
        assert!(st.compatible(next));
        // Pool exhausted: the offspring blocks on reproduction and also
        // refuses the global tick, so the system deadlocks.
        let after = st.nondet_steps(next).unwrap();
        assert!(after.is_empty());
    }

    #[test]
    fn policy_prunes_only_when_dominator_enabled() {
        let m = model(
            r#"
habitat { locations: l1; }
species s { bound 0 via rep; process P = a?.P + b?.P; process Q = a?.Q; init P; }
system { 1 of s.P at l1; }
policy { in(a, *, *) < in(b, *, *); }
"#,
        );
        let st = Stepper::new(&m);
        let policy = m.policy().unwrap();
        let c = st.initial_configuration().unwrap();
        let all = st.nondet_steps(&c).unwrap();
        assert_eq!(all.len(), 2);
        let pruned = st.prioritized_steps(&c, &policy).unwrap();
        let b = m.channel_by_name("b").unwrap();
        assert_eq!(pruned.len(), 1);
        assert!(matches!(pruned[0].label, ActionLabel::In(ch, _, _) if ch == b));

        // Dominator not enabled: the lower action survives.
        let m2 = model(
            r#"
habitat { locations: l1; }
species s { bound 0 via rep; process Q = a?.Q; init Q; }
system { 1 of s.Q at l1; }
policy { in(a, *, *) < in(b, *, *); }
"#,
        );
        let st2 = Stepper::new(&m2);
        let policy2 = m2.policy().unwrap();
        let c2 = st2.initial_configuration().unwrap();
        let kept = st2.prioritized_steps(&c2, &policy2).unwrap();
        assert_eq!(kept.len(), 1);

        // Empty policy: identical to the unprioritized relation.
        let empty = Policy::empty();
        let same = st.prioritized_steps(&c, &empty).unwrap();
        assert_eq!(same.len(), all.len());
    }
}
