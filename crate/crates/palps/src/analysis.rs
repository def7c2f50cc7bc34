//! Probabilistic analysis on an explored MDP: reachability probabilities by
//! value iteration, tick-bounded until, and expected rewards.
//!
//! Bounded operators count global clock ticks, not raw MDP steps: the
//! transition relation interleaves instantaneous actions between ticks, and
//! one time unit ends when a tick-labeled choice fires. Each tick layer is
//! solved to a fixpoint over the instantaneous sub-MDP.

use num::ToPrimitive;

use crate::expr::{eval_arith, eval_bool, ArithExpr, BoolExpr, EvalError};
use crate::model::{ActionLabel, Model, TauKind};
use crate::policy::{PatternKind, PolicyPattern};
use crate::semantics::Configuration;
use crate::statespace::{ChoiceTag, Mdp};

/// Optimize over schedulers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Max,
    Min,
}

impl Mode {
    fn pick(self, a: f64, b: f64) -> f64 {
        match self {
            Mode::Max => a.max(b),
            Mode::Min => a.min(b),
        }
    }

    fn worst(self) -> f64 {
        match self {
            Mode::Max => f64::NEG_INFINITY,
            Mode::Min => f64::INFINITY,
        }
    }
}

/// A predicate over a state's environment; `myloc` is not available here.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StatePredicate {
    pub expr: BoolExpr,
}

impl StatePredicate {
    pub fn eval(&self, model: &Model, c: &Configuration) -> Result<bool, EvalError> {
        eval_bool(&c.env, &model.attributes, &self.expr, None)
    }
}

/// Outcome of an iterative computation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterResult {
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

const REACH_TOLERANCE: f64 = 1e-10;
const LAYER_TOLERANCE: f64 = 1e-12;
const MAX_ITERATIONS: usize = 1_000_000;

fn dist_f64(dist: &[(num::BigRational, usize)]) -> Vec<(f64, usize)> {
    dist.iter()
        .map(|(p, t)| (p.to_f64().unwrap_or(0.0), *t))
        .collect()
}

/// Probability of eventually reaching a goal state, optimized over
/// schedulers, by value iteration from below (stop at sup-norm delta below
/// 1e-10, capped at 10^6 sweeps).
pub fn reach_prob<S>(mdp: &Mdp<S>, mode: Mode, goal: impl Fn(&S) -> bool) -> IterResult {
    let n = mdp.states.len();
    let is_goal: Vec<bool> = mdp.states.iter().map(goal).collect();
    let numeric: Vec<Vec<Vec<(f64, usize)>>> = mdp
        .choices
        .iter()
        .map(|cs| cs.iter().map(|c| dist_f64(&c.dist)).collect())
        .collect();
    let mut x = vec![0.0f64; n];
    for (i, g) in is_goal.iter().enumerate() {
        if *g {
            x[i] = 1.0;
        }
    }
    for iter in 0..MAX_ITERATIONS {
        let mut delta: f64 = 0.0;
        for s in 0..n {
            if is_goal[s] || numeric[s].is_empty() {
                continue;
            }
            let mut best = mode.worst();
            for choice in &numeric[s] {
                let v: f64 = choice.iter().map(|(p, t)| p * x[*t]).sum();
                best = mode.pick(best, v);
            }
            if best.is_finite() {
                delta = delta.max((best - x[s]).abs());
                x[s] = best;
            }
        }
        if delta < REACH_TOLERANCE {
            return IterResult {
                value: x[mdp.initial],
                iterations: iter + 1,
                converged: true,
            };
        }
    }
    IterResult {
        value: x[mdp.initial],
        iterations: MAX_ITERATIONS,
        converged: false,
    }
}

pub fn max_reach_prob<S>(mdp: &Mdp<S>, goal: impl Fn(&S) -> bool) -> IterResult {
    reach_prob(mdp, Mode::Max, goal)
}

pub fn min_reach_prob<S>(mdp: &Mdp<S>, goal: impl Fn(&S) -> bool) -> IterResult {
    reach_prob(mdp, Mode::Min, goal)
}

/// Solves one tick layer: values satisfy
/// `x(s) = opt over choices of reward + Σ p * (tick ? boundary(t) : x(t))`
/// with `pinned` states held fixed. Iterated from 0.
fn solve_layer(
    numeric: &[Vec<(Vec<(f64, usize)>, bool, f64)>],
    pinned: &[Option<f64>],
    boundary: &[f64],
    mode: Mode,
) -> (Vec<f64>, bool) {
    let n = numeric.len();
    let mut x = vec![0.0f64; n];
    for (i, p) in pinned.iter().enumerate() {
        if let Some(v) = p {
            x[i] = *v;
        }
    }
    for _ in 0..MAX_ITERATIONS {
        let mut delta: f64 = 0.0;
        for s in 0..n {
            if pinned[s].is_some() || numeric[s].is_empty() {
                continue;
            }
            let mut best = mode.worst();
            for (dist, is_tick, reward) in &numeric[s] {
                let v: f64 = *reward
                    + dist
                        .iter()
                        .map(|(p, t)| p * if *is_tick { boundary[*t] } else { x[*t] })
                        .sum::<f64>();
                best = mode.pick(best, v);
            }
            if best.is_finite() {
                delta = delta.max((best - x[s]).abs());
                x[s] = best;
            }
        }
        if delta < LAYER_TOLERANCE {
            return (x, true);
        }
    }
    (x, false)
}

/// Probability that `phi2` holds within `k` ticks while `phi1` holds up to
/// that point, optimized over schedulers.
pub fn bounded_until<S>(
    mdp: &Mdp<S>,
    mode: Mode,
    phi1: impl Fn(&S) -> bool,
    phi2: impl Fn(&S) -> bool,
    k: usize,
) -> IterResult {
    let n = mdp.states.len();
    let sat1: Vec<bool> = mdp.states.iter().map(&phi1).collect();
    let sat2: Vec<bool> = mdp.states.iter().map(&phi2).collect();
    let numeric: Vec<Vec<(Vec<(f64, usize)>, bool, f64)>> = mdp
        .choices
        .iter()
        .map(|cs| {
            cs.iter()
                .map(|c| (dist_f64(&c.dist), c.is_tick, 0.0))
                .collect()
        })
        .collect();
    let pinned: Vec<Option<f64>> = (0..n)
        .map(|s| {
            if sat2[s] {
                Some(1.0)
            } else if !sat1[s] {
                Some(0.0)
            } else {
                None
            }
        })
        .collect();
    let mut converged = true;
    // At the horizon a further tick contributes nothing.
    let mut layer = vec![0.0f64; n];
    for (s, p) in pinned.iter().enumerate() {
        if let Some(v) = p {
            layer[s] = *v;
        }
    }
    for _ in 0..=k {
        let (next, ok) = solve_layer(&numeric, &pinned, &layer, mode);
        converged &= ok;
        layer = next;
    }
    IterResult {
        value: layer[mdp.initial],
        iterations: k + 1,
        converged,
    }
}

/// Rewards attached to action labels (per fired transition) and to states
/// (accumulated once per completed tick, evaluated on the state the tick
/// fires from). State rewards are gated expressions so that
/// population-style measures are expressible.
#[derive(Clone, Debug, Default)]
pub struct RewardStructure {
    pub action: Vec<(PolicyPattern, f64)>,
    pub state: Vec<(BoolExpr, ArithExpr)>,
}

impl PolicyPattern {
    /// Whether a concrete label matches this pattern.
    pub fn matches(&self, label: ActionLabel) -> bool {
        let (loc, species) = match label {
            ActionLabel::In(c, l, s) => {
                if !matches!(self.kind, PatternKind::In(pc) if pc == c) {
                    return false;
                }
                (l, s)
            }
            ActionLabel::Out(c, l, s) => {
                if !matches!(self.kind, PatternKind::Out(pc) if pc == c) {
                    return false;
                }
                (l, s)
            }
            ActionLabel::Tau(TauKind::Chan(c), l, s) => {
                if !matches!(self.kind, PatternKind::TauChan(pc) if pc == c) {
                    return false;
                }
                (l, s)
            }
            ActionLabel::Tau(TauKind::Go, l, s) => {
                if self.kind != PatternKind::TauGo {
                    return false;
                }
                (l, s)
            }
            ActionLabel::Tick => return self.kind == PatternKind::Tick,
        };
        self.loc.map_or(true, |pl| pl == loc) && self.species.map_or(true, |ps| ps == species)
    }
}

impl RewardStructure {
    fn action_reward(&self, tag: &ChoiceTag) -> f64 {
        match tag {
            ChoiceTag::Action(label) => self
                .action
                .iter()
                .filter(|(p, _)| p.matches(*label))
                .map(|(_, r)| *r)
                .sum(),
            _ => 0.0,
        }
    }

    fn state_reward(&self, model: &Model, c: &Configuration) -> Result<f64, EvalError> {
        let mut total = 0.0;
        for (gate, value) in &self.state {
            if eval_bool(&c.env, &model.attributes, gate, None)? {
                total += eval_arith(&c.env, &model.attributes, value, None)?
                    .to_f64()
                    .unwrap_or(0.0);
            }
        }
        Ok(total)
    }
}

/// Expected reward accumulated over the first `k` ticks: every fired
/// transition up to and including the k-th tick contributes its action
/// reward, and each tick adds the state reward of the state it fires from.
pub fn expected_reward_cumul(
    model: &Model,
    mdp: &Mdp<Configuration>,
    rewards: &RewardStructure,
    k: usize,
    mode: Mode,
) -> Result<IterResult, EvalError> {
    let n = mdp.states.len();
    let state_rewards: Result<Vec<f64>, EvalError> = mdp
        .states
        .iter()
        .map(|c| rewards.state_reward(model, c))
        .collect();
    let state_rewards = state_rewards?;
    let numeric: Vec<Vec<(Vec<(f64, usize)>, bool, f64)>> = mdp
        .choices
        .iter()
        .enumerate()
        .map(|(s, cs)| {
            cs.iter()
                .map(|c| {
                    let mut r = rewards.action_reward(&c.tag);
                    if c.is_tick {
                        r += state_rewards[s];
                    }
                    (dist_f64(&c.dist), c.is_tick, r)
                })
                .collect()
        })
        .collect();
    let pinned: Vec<Option<f64>> = mdp
        .choices
        .iter()
        .map(|cs| if cs.is_empty() { Some(0.0) } else { None })
        .collect();
    let mut converged = true;
    let mut layer = vec![0.0f64; n];
    for _ in 0..k {
        let (next, ok) = solve_layer(&numeric, &pinned, &layer, mode);
        converged &= ok;
        layer = next;
    }
    Ok(IterResult {
        value: layer[mdp.initial],
        iterations: k,
        converged,
    })
}

/// Expected state reward at exactly `k` ticks: the reward of the state
/// reached by the k-th tick (the initial state for `k = 0`). States without
/// outgoing choices hold their reward forever; paths that stop ticking
/// without deadlocking contribute zero.
pub fn expected_reward_instant(
    model: &Model,
    mdp: &Mdp<Configuration>,
    rewards: &RewardStructure,
    k: usize,
    mode: Mode,
) -> Result<IterResult, EvalError> {
    let state_rewards: Result<Vec<f64>, EvalError> = mdp
        .states
        .iter()
        .map(|c| rewards.state_reward(model, c))
        .collect();
    let state_rewards = state_rewards?;
    if k == 0 {
        return Ok(IterResult {
            value: state_rewards[mdp.initial],
            iterations: 0,
            converged: true,
        });
    }
    let numeric: Vec<Vec<(Vec<(f64, usize)>, bool, f64)>> = mdp
        .choices
        .iter()
        .map(|cs| {
            cs.iter()
                .map(|c| (dist_f64(&c.dist), c.is_tick, 0.0))
                .collect()
        })
        .collect();
    let pinned: Vec<Option<f64>> = mdp
        .choices
        .iter()
        .enumerate()
        .map(|(s, cs)| {
            if cs.is_empty() {
                Some(state_rewards[s])
            } else {
                None
            }
        })
        .collect();
    let mut converged = true;
    let mut layer = state_rewards.clone();
    for _ in 0..k {
        let (next, ok) = solve_layer(&numeric, &pinned, &layer, mode);
        converged &= ok;
        layer = next;
    }
    Ok(IterResult {
        value: layer[mdp.initial],
        iterations: k,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse_model;
    use crate::policy::Policy;
    use crate::statespace::{build_mdp, ExploreLimits};

    fn mdp_of(src: &str) -> (Model, Mdp<Configuration>) {
        let m = parse_model(src).unwrap();
        assert!(crate::model::validate_model(&m).is_ok());
        let mdp = build_mdp(&m, &Policy::empty(), &ExploreLimits::default()).unwrap();
        (m, mdp)
    }

    #[test]
    fn goal_at_initial_state_is_certain() {
        let (_, mdp) = mdp_of(
            r#"
habitat { locations: l1; }
species s { bound 0 via rep; process P = tick.P; init P; }
system { 1 of s.P at l1; }
"#,
        );
        let r = max_reach_prob(&mdp, |_| true);
        assert_eq!(r.value, 1.0);
        assert!(r.converged);
        let never = max_reach_prob(&mdp, |_| false);
        assert_eq!(never.value, 0.0);
    }

    #[test]
    fn one_step_probabilistic_reach() {
        let (m, mdp) = mdp_of(
            r#"
habitat { locations: l1; }
species s { bound 0 via rep; process P = 2/5: 0 (+) 3/5: S; process S = tick.S; init P; }
system { 1 of s.P at l1; }
"#,
        );
        let sp = m.species_by_name("s").unwrap();
        let l = m.location_by_name("l1").unwrap();
        let r = max_reach_prob(&mdp, |c: &Configuration| c.env.count(l, sp) == 0);
        assert!((r.value - 0.4).abs() < 1e-12, "value {}", r.value);
        let lo = min_reach_prob(&mdp, |c: &Configuration| c.env.count(l, sp) == 0);
        assert!(lo.value <= r.value + 1e-12);
    }

    #[test]
    fn bounded_until_at_k0_and_unreachable() {
        let (_, mdp) = mdp_of(
            r#"
habitat { locations: l1; }
species s { bound 0 via rep; process P = tick.P; init P; }
system { 1 of s.P at l1; }
"#,
        );
        let now = bounded_until(&mdp, Mode::Max, |_| true, |_| true, 0);
        assert_eq!(now.value, 1.0);
        let never = bounded_until(&mdp, Mode::Max, |_| true, |_| false, 25);
        assert_eq!(never.value, 0.0);
    }

    #[test]
    fn bounded_until_matches_closed_form_and_is_monotone() {
        // Death with chance 2/5 after each tick.
        let (m, mdp) = mdp_of(
            r#"
habitat { locations: l1; }
species s {
  bound 0 via rep;
  process P = tick.Q;
  process Q = 2/5: 0 (+) 3/5: P;
  init P;
}
system { 1 of s.P at l1; }
"#,
        );
        let sp = m.species_by_name("s").unwrap();
        let l = m.location_by_name("l1").unwrap();
        let dead = |c: &Configuration| c.env.count(l, sp) == 0;
        let mut prev = 0.0;
        for k in 0..8 {
            let r = bounded_until(&mdp, Mode::Max, |_| true, dead, k);
            assert!(r.value + 1e-12 >= prev, "k={k}");
            prev = r.value;
            let expect = 1.0 - 0.6f64.powi(k as i32);
            assert!(
                (r.value - expect).abs() < 1e-9,
                "k={k}: {} vs {expect}",
                r.value
            );
        }
        // Converges toward unbounded reachability.
        let unbounded = max_reach_prob(&mdp, dead);
        let r = bounded_until(&mdp, Mode::Max, |_| true, dead, 60);
        assert!((unbounded.value - r.value).abs() < 1e-6);
    }

    #[test]
    fn cumulative_reward_counts_state_rewards_per_tick() {
        let (m, mdp) = mdp_of(
            r#"
habitat { locations: l1; }
species s { bound 0 via rep; process P = tick.P; init P; }
system { 1 of s.P at l1; }
"#,
        );
        let rewards = RewardStructure {
            action: vec![],
            state: vec![(
                BoolExpr::True,
                ArithExpr::Const(num::BigRational::from_integer(1.into())),
            )],
        };
        for k in 0..5 {
            let r = expected_reward_cumul(&m, &mdp, &rewards, k, Mode::Max).unwrap();
            assert!((r.value - k as f64).abs() < 1e-12);
        }
        let zero = RewardStructure::default();
        let r = expected_reward_cumul(&m, &mdp, &zero, 7, Mode::Max).unwrap();
        assert_eq!(r.value, 0.0);
    }

    #[test]
    fn instant_reward_at_zero_is_initial_state_reward() {
        let (m, mdp) = mdp_of(
            r#"
habitat { locations: l1; }
species s { bound 0 via rep; process P = tick.P; init P; }
system { 2 of s.P at l1; }
"#,
        );
        let rewards = RewardStructure {
            action: vec![],
            state: vec![(
                BoolExpr::True,
                ArithExpr::TotalAt(crate::expr::LocRef::Loc(crate::model::LocId(0))),
            )],
        };
        let r = expected_reward_instant(&m, &mdp, &rewards, 0, Mode::Max).unwrap();
        assert_eq!(r.value, 2.0);
        let later = expected_reward_instant(&m, &mdp, &rewards, 3, Mode::Max).unwrap();
        assert_eq!(later.value, 2.0);
    }
}
