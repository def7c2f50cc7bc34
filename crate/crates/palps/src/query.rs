//! The property query mini-grammar:
//!
//! ```text
//! Pmax=? [ F pred ]            maximum reachability probability
//! Pmin=? [ pred U<=k pred ]    tick-bounded until
//! R{name}=? [ C<=k ]           expected reward accumulated over k ticks
//! Rmin{name}=? [ I=k ]         expected state reward at exactly k ticks
//! ```
//!
//! Predicates use the model expression syntax without `myloc`, plus the
//! shorthand `pop` for the total population over all locations. Reward
//! names resolve to built-in structures: `ticks` (1 per tick), `pop` (state
//! reward = population size), or a channel name (1 per action on it).

use std::fmt;

use num::BigRational;
use thiserror::Error;

use crate::analysis::{
    bounded_until, expected_reward_cumul, expected_reward_instant, reach_prob, IterResult, Mode,
    RewardStructure,
};
use crate::expr::{ArithExpr, BinOp, BoolExpr, LocRef};
use crate::model::Model;
use crate::parser::{expr_parser_for_model, tokenize_str, SourceSpan, Tok};
use crate::policy::{PatternKind, PolicyPattern};
use crate::semantics::Configuration;
use crate::statespace::Mdp;

/// A parsed property query.
#[derive(Clone, Debug, PartialEq)]
pub enum Query {
    Reach {
        mode: Mode,
        goal: BoolExpr,
    },
    BoundedUntil {
        mode: Mode,
        phi1: BoolExpr,
        phi2: BoolExpr,
        ticks: usize,
    },
    RewardCumulative {
        mode: Mode,
        rewards: String,
        ticks: usize,
    },
    RewardInstant {
        mode: Mode,
        rewards: String,
        ticks: usize,
    },
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum QueryError {
    #[error("query syntax: {0}")]
    Syntax(String),
    #[error("`myloc` cannot appear in a state predicate")]
    MylocInPredicate,
    #[error("unknown reward structure `{0}` (expected `ticks`, `pop`, or a channel name)")]
    UnknownRewards(String),
    #[error("the model was explored only partially; results would be bounds")]
    Truncated,
    #[error("evaluation failed: {0}")]
    Eval(#[from] crate::expr::EvalError),
}

fn pred_has_myloc(e: &BoolExpr) -> bool {
    fn arith(w: &ArithExpr) -> bool {
        match w {
            ArithExpr::Const(_) => false,
            ArithExpr::AttrAt(_, l) | ArithExpr::CountAt(_, l) | ArithExpr::TotalAt(l) => {
                matches!(l, LocRef::MyLoc)
            }
            ArithExpr::Neg(inner) => arith(inner),
            ArithExpr::Bin(_, a, b) => arith(a) || arith(b),
        }
    }
    match e {
        BoolExpr::True => false,
        BoolExpr::Not(inner) => pred_has_myloc(inner),
        BoolExpr::And(a, b) => pred_has_myloc(a) || pred_has_myloc(b),
        BoolExpr::Cmp(w, _, _) => arith(w),
    }
}

/// Expands the `pop` shorthand into a sum of per-location totals. Only
/// applies inside the bracketed path formula, so `R{pop}` names stay intact.
fn splice_pop(model: &Model, toks: Vec<(Tok, SourceSpan)>) -> Vec<(Tok, SourceSpan)> {
    let mut out = Vec::with_capacity(toks.len());
    let mut depth = 0usize;
    for (tok, span) in toks {
        match &tok {
            Tok::LBracket => {
                depth += 1;
                out.push((tok, span));
            }
            Tok::RBracket => {
                depth = depth.saturating_sub(1);
                out.push((tok, span));
            }
            Tok::Ident(w) if w == "pop" && depth > 0 => {
                out.push((Tok::LParen, span));
                for (i, name) in model.habitat.names.iter().enumerate() {
                    if i > 0 {
                        out.push((Tok::Plus, span));
                    }
                    out.push((Tok::At, span));
                    out.push((Tok::Ident(name.clone()), span));
                }
                out.push((Tok::RParen, span));
            }
            _ => out.push((tok, span)),
        }
    }
    out
}

/// Parses one query against a model's name tables.
pub fn parse_query(model: &Model, text: &str) -> Result<Query, QueryError> {
    let toks = tokenize_str(text).map_err(|e| QueryError::Syntax(e.to_string()))?;
    let toks = splice_pop(model, toks);
    let mut p = expr_parser_for_model(model, toks);

    let head = match p.peek().clone() {
        Tok::Ident(w) => w,
        other => {
            return Err(QueryError::Syntax(format!(
                "expected `Pmax`, `Pmin`, `R`, `Rmax`, or `Rmin`, found {other:?}"
            )))
        }
    };
    let fail = |p: &crate::parser::Parser| {
        QueryError::Syntax(
            p.diagnostics
                .iter()
                .map(|d| d.message.clone())
                .collect::<Vec<_>>()
                .join("; "),
        )
    };
    match head.as_str() {
        "Pmax" | "Pmin" => {
            let mode = if head == "Pmax" { Mode::Max } else { Mode::Min };
            p.bump();
            if p.expect(Tok::Eq).is_err() || p.expect(Tok::Question).is_err() {
                return Err(fail(&p));
            }
            if p.expect(Tok::LBracket).is_err() {
                return Err(fail(&p));
            }
            if p.at_kw("F") {
                p.bump();
                let goal = p.parse_bool().map_err(|_| fail(&p))?;
                if p.expect(Tok::RBracket).is_err() {
                    return Err(fail(&p));
                }
                if pred_has_myloc(&goal) {
                    return Err(QueryError::MylocInPredicate);
                }
                Ok(Query::Reach { mode, goal })
            } else {
                let phi1 = p.parse_bool().map_err(|_| fail(&p))?;
                if p.expect_kw("U").is_err() || p.expect(Tok::Le).is_err() {
                    return Err(fail(&p));
                }
                let ticks = p.uint("tick bound").map_err(|_| fail(&p))? as usize;
                let phi2 = p.parse_bool().map_err(|_| fail(&p))?;
                if p.expect(Tok::RBracket).is_err() {
                    return Err(fail(&p));
                }
                if pred_has_myloc(&phi1) || pred_has_myloc(&phi2) {
                    return Err(QueryError::MylocInPredicate);
                }
                Ok(Query::BoundedUntil {
                    mode,
                    phi1,
                    phi2,
                    ticks,
                })
            }
        }
        "R" | "Rmax" | "Rmin" => {
            let mode = if head == "Rmin" { Mode::Min } else { Mode::Max };
            p.bump();
            if p.expect(Tok::LBrace).is_err() {
                return Err(fail(&p));
            }
            let name = match p.peek().clone() {
                Tok::Ident(w) => {
                    p.bump();
                    w
                }
                other => {
                    return Err(QueryError::Syntax(format!(
                        "expected a reward structure name, found {other:?}"
                    )))
                }
            };
            if p.expect(Tok::RBrace).is_err()
                || p.expect(Tok::Eq).is_err()
                || p.expect(Tok::Question).is_err()
                || p.expect(Tok::LBracket).is_err()
            {
                return Err(fail(&p));
            }
            let kind = match p.peek().clone() {
                Tok::Ident(w) if w == "C" || w == "I" => {
                    p.bump();
                    w
                }
                other => {
                    return Err(QueryError::Syntax(format!(
                        "expected `C<=k` or `I=k`, found {other:?}"
                    )))
                }
            };
            let query = if kind == "C" {
                if p.expect(Tok::Le).is_err() {
                    return Err(fail(&p));
                }
                let ticks = p.uint("tick bound").map_err(|_| fail(&p))? as usize;
                Query::RewardCumulative {
                    mode,
                    rewards: name,
                    ticks,
                }
            } else {
                if p.expect(Tok::Eq).is_err() {
                    return Err(fail(&p));
                }
                let ticks = p.uint("tick index").map_err(|_| fail(&p))? as usize;
                Query::RewardInstant {
                    mode,
                    rewards: name,
                    ticks,
                }
            };
            if p.expect(Tok::RBracket).is_err() {
                return Err(fail(&p));
            }
            Ok(query)
        }
        other => Err(QueryError::Syntax(format!(
            "unknown query head `{other}`"
        ))),
    }
}

/// Resolves a reward structure name to its built-in definition.
pub fn builtin_rewards(model: &Model, name: &str) -> Result<RewardStructure, QueryError> {
    if name == "ticks" {
        return Ok(RewardStructure {
            action: vec![(PolicyPattern::tick(), 1.0)],
            state: Vec::new(),
        });
    }
    if name == "pop" {
        let total = model
            .habitat
            .locations()
            .map(|l| ArithExpr::TotalAt(LocRef::Loc(l)))
            .reduce(|a, b| ArithExpr::Bin(BinOp::Add, Box::new(a), Box::new(b)))
            .unwrap_or(ArithExpr::Const(BigRational::from_integer(0.into())));
        return Ok(RewardStructure {
            action: Vec::new(),
            state: vec![(BoolExpr::True, total)],
        });
    }
    if let Some(chan) = model.channel_by_name(name) {
        let pat = |kind| PolicyPattern {
            kind,
            loc: None,
            species: None,
        };
        return Ok(RewardStructure {
            action: vec![
                (pat(PatternKind::TauChan(chan)), 1.0),
                (pat(PatternKind::In(chan)), 1.0),
                (pat(PatternKind::Out(chan)), 1.0),
            ],
            state: Vec::new(),
        });
    }
    Err(QueryError::UnknownRewards(name.to_string()))
}

/// The outcome of running a query.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QueryOutcome {
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Set when the MDP was truncated; the value is then only a bound.
    pub bound_only: bool,
}

impl fmt::Display for QueryOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.10}", self.value)?;
        if self.bound_only {
            write!(f, " (bound: exploration truncated)")?;
        }
        if !self.converged {
            write!(f, " (not converged)")?;
        }
        Ok(())
    }
}

/// Evaluates a query on an explored MDP.
pub fn run_query(
    model: &Model,
    mdp: &Mdp<Configuration>,
    query: &Query,
) -> Result<QueryOutcome, QueryError> {
    let wrap = |r: IterResult| QueryOutcome {
        value: r.value,
        iterations: r.iterations,
        converged: r.converged,
        bound_only: mdp.truncated,
    };
    let eval_pred = |e: &BoolExpr, c: &Configuration| {
        crate::expr::eval_bool(&c.env, &model.attributes, e, None).unwrap_or(false)
    };
    match query {
        Query::Reach { mode, goal } => {
            // Surface evaluation errors once up front.
            if let Some(c) = mdp.states.first() {
                crate::expr::eval_bool(&c.env, &model.attributes, goal, None)?;
            }
            Ok(wrap(reach_prob(mdp, *mode, |c| eval_pred(goal, c))))
        }
        Query::BoundedUntil {
            mode,
            phi1,
            phi2,
            ticks,
        } => {
            if let Some(c) = mdp.states.first() {
                crate::expr::eval_bool(&c.env, &model.attributes, phi1, None)?;
                crate::expr::eval_bool(&c.env, &model.attributes, phi2, None)?;
            }
            Ok(wrap(bounded_until(
                mdp,
                *mode,
                |c| eval_pred(phi1, c),
                |c| eval_pred(phi2, c),
                *ticks,
            )))
        }
        Query::RewardCumulative {
            mode,
            rewards,
            ticks,
        } => {
            let rs = builtin_rewards(model, rewards)?;
            Ok(wrap(expected_reward_cumul(model, mdp, &rs, *ticks, *mode)?))
        }
        Query::RewardInstant {
            mode,
            rewards,
            ticks,
        } => {
            let rs = builtin_rewards(model, rewards)?;
            Ok(wrap(expected_reward_instant(
                model, mdp, &rs, *ticks, *mode,
            )?))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse_model;
    use crate::policy::Policy;
    use crate::statespace::{build_mdp, ExploreLimits};

    fn model(src: &str) -> Model {
        let m = parse_model(src).unwrap();
        assert!(crate::model::validate_model(&m).is_ok());
        m
    }

    #[test]
    fn parses_reachability_and_until() {
        let m = model(
            r#"
habitat { locations: l1, l2; neighbors: (l1,l2); }
species s { bound 0 via rep; process P = tick.P; init P; }
system { 1 of s.P at l1; }
"#,
        );
        let q = parse_query(&m, "Pmax=? [ F s@l1 = 0 ]").unwrap();
        assert!(matches!(q, Query::Reach { mode: Mode::Max, .. }));
        let q = parse_query(&m, "Pmin=? [ true U<=10 pop = 0 ]").unwrap();
        match q {
            Query::BoundedUntil { ticks, .. } => assert_eq!(ticks, 10),
            other => panic!("unexpected {other:?}"),
        }
        let q = parse_query(&m, "R{ticks}=? [ C<=4 ]").unwrap();
        assert!(matches!(q, Query::RewardCumulative { mode: Mode::Max, ticks: 4, .. }));
        let q = parse_query(&m, "Rmin{pop}=? [ I=3 ]").unwrap();
        assert!(matches!(q, Query::RewardInstant { mode: Mode::Min, ticks: 3, .. }));
        assert!(parse_query(&m, "Pmax=? [ F s@myloc = 0 ]").is_err());
        assert!(parse_query(&m, "nonsense").is_err());
    }

    #[test]
    fn pop_expands_to_total_population() {
        let m = model(
            r#"
habitat { locations: l1, l2; neighbors: (l1,l2); }
species s { bound 0 via rep; process P = tick.P; init P; }
system { 1 of s.P at l1; 1 of s.P at l2; }
"#,
        );
        let mdp = build_mdp(&m, &Policy::empty(), &ExploreLimits::default()).unwrap();
        let q = parse_query(&m, "Pmax=? [ F pop = 2 ]").unwrap();
        let out = run_query(&m, &mdp, &q).unwrap();
        assert_eq!(out.value, 1.0);
        let q0 = parse_query(&m, "Pmax=? [ F pop = 0 ]").unwrap();
        let out0 = run_query(&m, &mdp, &q0).unwrap();
        assert_eq!(out0.value, 0.0);
    }
}
