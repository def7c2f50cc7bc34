//! Logical and arithmetic expressions over the environment, and their
//! evaluation with `myloc` substitution.
//!
//! All numerics are exact rationals: counts are integers and every literal
//! in the concrete syntax (decimal or fraction) denotes a rational, so
//! comparisons and probability arithmetic never lose precision.

use std::collections::BTreeMap;

use num::{BigRational, Zero};
use thiserror::Error;

use crate::model::{AttrId, AttributeTable, LocId, SpeciesId};

/// A location reference inside an expression: a concrete location or the
/// individual's own current location.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LocRef {
    Loc(LocId),
    MyLoc,
}

/// Binary arithmetic operators.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

/// An arithmetic expression: constants, attribute values, per-location
/// species counts, per-location totals, and the usual operators.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ArithExpr {
    Const(BigRational),
    AttrAt(AttrId, LocRef),
    CountAt(SpeciesId, LocRef),
    TotalAt(LocRef),
    Neg(Box<ArithExpr>),
    Bin(BinOp, Box<ArithExpr>, Box<ArithExpr>),
}

/// Comparison operators allowed between an arithmetic expression and a
/// constant. Strict comparisons are expressible through negation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CmpOp {
    Eq,
    Le,
    Ge,
}

/// A logical expression.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BoolExpr {
    True,
    Not(Box<BoolExpr>),
    And(Box<BoolExpr>, Box<BoolExpr>),
    Cmp(ArithExpr, CmpOp, BigRational),
}

/// Per-location, per-species individual counts. A pair that is absent
/// counts as zero; stored entries are always at least one.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Environment {
    counts: BTreeMap<(LocId, SpeciesId), u32>,
}

impl Environment {
    pub fn new() -> Self {
        Environment::default()
    }

    pub fn count(&self, loc: LocId, species: SpeciesId) -> u32 {
        self.counts.get(&(loc, species)).copied().unwrap_or(0)
    }

    pub fn total_at(&self, loc: LocId) -> u32 {
        self.counts
            .iter()
            .filter(|((l, _), _)| *l == loc)
            .map(|(_, n)| *n)
            .sum()
    }

    /// Iterates over the present (nonzero) entries.
    pub fn entries(&self) -> impl Iterator<Item = (LocId, SpeciesId, u32)> + '_ {
        self.counts.iter().map(|((l, s), n)| (*l, *s, *n))
    }

    pub fn total_population(&self) -> u32 {
        self.counts.values().sum()
    }

    pub(crate) fn set(&mut self, loc: LocId, species: SpeciesId, n: u32) {
        if n == 0 {
            self.counts.remove(&(loc, species));
        } else {
            self.counts.insert((loc, species), n);
        }
    }
}

/// Expression evaluation failures.
#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("attribute #{0:?} has no value at location #{1:?}")]
    MissingAttribute(AttrId, LocId),
    #[error("division by zero")]
    DivisionByZero,
    #[error("`myloc` used where no current location exists")]
    NoCurrentLocation,
}

fn resolve(l: LocRef, here: Option<LocId>) -> Result<LocId, EvalError> {
    match l {
        LocRef::Loc(loc) => Ok(loc),
        LocRef::MyLoc => here.ok_or(EvalError::NoCurrentLocation),
    }
}

/// Evaluates an arithmetic expression against an environment and attribute
/// table, with `myloc` standing for `here`.
pub fn eval_arith(
    env: &Environment,
    attrs: &AttributeTable,
    w: &ArithExpr,
    here: Option<LocId>,
) -> Result<BigRational, EvalError> {
    match w {
        ArithExpr::Const(c) => Ok(c.clone()),
        ArithExpr::AttrAt(a, l) => {
            let loc = resolve(*l, here)?;
            attrs
                .get(*a, loc)
                .cloned()
                .ok_or(EvalError::MissingAttribute(*a, loc))
        }
        ArithExpr::CountAt(s, l) => {
            let loc = resolve(*l, here)?;
            Ok(BigRational::from_integer(env.count(loc, *s).into()))
        }
        ArithExpr::TotalAt(l) => {
            let loc = resolve(*l, here)?;
            Ok(BigRational::from_integer(env.total_at(loc).into()))
        }
        ArithExpr::Neg(inner) => Ok(-eval_arith(env, attrs, inner, here)?),
        ArithExpr::Bin(op, a, b) => {
            let x = eval_arith(env, attrs, a, here)?;
            let y = eval_arith(env, attrs, b, here)?;
            match op {
                BinOp::Add => Ok(x + y),
                BinOp::Sub => Ok(x - y),
                BinOp::Mul => Ok(x * y),
                BinOp::Div => {
                    if y.is_zero() {
                        Err(EvalError::DivisionByZero)
                    } else {
                        Ok(x / y)
                    }
                }
            }
        }
    }
}

/// Evaluates a logical expression; comparisons are exact on rationals.
pub fn eval_bool(
    env: &Environment,
    attrs: &AttributeTable,
    e: &BoolExpr,
    here: Option<LocId>,
) -> Result<bool, EvalError> {
    match e {
        BoolExpr::True => Ok(true),
        BoolExpr::Not(inner) => Ok(!eval_bool(env, attrs, inner, here)?),
        BoolExpr::And(a, b) => {
            Ok(eval_bool(env, attrs, a, here)? && eval_bool(env, attrs, b, here)?)
        }
        BoolExpr::Cmp(w, op, c) => {
            let v = eval_arith(env, attrs, w, here)?;
            Ok(match op {
                CmpOp::Eq => v == *c,
                CmpOp::Le => v <= *c,
                CmpOp::Ge => v >= *c,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num::One;

    fn rat(n: i64) -> BigRational {
        BigRational::from_integer(n.into())
    }

    fn env(entries: &[(u32, u32, u32)]) -> Environment {
        let mut e = Environment::new();
        for (l, s, n) in entries {
            e.set(LocId(*l), SpeciesId(*s), *n);
        }
        e
    }

    #[test]
    fn count_lookup_present_and_absent() {
        let e = env(&[(0, 0, 2)]);
        let attrs = AttributeTable::default();
        let present = ArithExpr::CountAt(SpeciesId(0), LocRef::Loc(LocId(0)));
        let absent = ArithExpr::CountAt(SpeciesId(0), LocRef::Loc(LocId(1)));
        assert_eq!(eval_arith(&e, &attrs, &present, None).unwrap(), rat(2));
        assert_eq!(eval_arith(&e, &attrs, &absent, None).unwrap(), rat(0));
    }

    #[test]
    fn total_sums_species_at_myloc() {
        let e = env(&[(0, 0, 2), (0, 1, 3)]);
        let attrs = AttributeTable::default();
        let w = ArithExpr::TotalAt(LocRef::MyLoc);
        assert_eq!(
            eval_arith(&e, &attrs, &w, Some(LocId(0))).unwrap(),
            rat(5)
        );
    }

    #[test]
    fn bool_composition() {
        let e = env(&[(0, 0, 2)]);
        let attrs = AttributeTable::default();
        let count = ArithExpr::CountAt(SpeciesId(0), LocRef::Loc(LocId(0)));
        assert!(eval_bool(&e, &attrs, &BoolExpr::True, None).unwrap());
        let eq_one = BoolExpr::Cmp(count.clone(), CmpOp::Eq, BigRational::one());
        assert!(!eval_bool(&e, &attrs, &eq_one, None).unwrap());
        // not(count >= 3) and (count <= 2)
        let composed = BoolExpr::And(
            Box::new(BoolExpr::Not(Box::new(BoolExpr::Cmp(
                count.clone(),
                CmpOp::Ge,
                rat(3),
            )))),
            Box::new(BoolExpr::Cmp(count, CmpOp::Le, rat(2))),
        );
        assert!(eval_bool(&e, &attrs, &composed, None).unwrap());
    }

    #[test]
    fn missing_attribute_and_division_by_zero() {
        let e = Environment::new();
        let attrs = AttributeTable {
            names: vec!["q".into()],
            values: BTreeMap::new(),
        };
        let w = ArithExpr::AttrAt(AttrId(0), LocRef::Loc(LocId(0)));
        assert_eq!(
            eval_arith(&e, &attrs, &w, None),
            Err(EvalError::MissingAttribute(AttrId(0), LocId(0)))
        );
        let div = ArithExpr::Bin(
            BinOp::Div,
            Box::new(ArithExpr::Const(rat(1))),
            Box::new(ArithExpr::Const(rat(0))),
        );
        assert_eq!(eval_arith(&e, &attrs, &div, None), Err(EvalError::DivisionByZero));
    }

    #[test]
    fn myloc_substitution_matches_concrete_location() {
        let e = env(&[(1, 0, 4)]);
        let attrs = AttributeTable::default();
        let via_myloc = ArithExpr::CountAt(SpeciesId(0), LocRef::MyLoc);
        let concrete = ArithExpr::CountAt(SpeciesId(0), LocRef::Loc(LocId(1)));
        assert_eq!(
            eval_arith(&e, &attrs, &via_myloc, Some(LocId(1))).unwrap(),
            eval_arith(&e, &attrs, &concrete, None).unwrap()
        );
    }
}
