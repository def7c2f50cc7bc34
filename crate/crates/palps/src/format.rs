//! Canonical pretty-printer for models; `parse_model(format_model(m))`
//! reproduces `m` structurally, and formatting is a fixpoint on its own
//! output.

use std::collections::BTreeSet;
use std::fmt::Write;

use num::BigRational;

use crate::expr::{ArithExpr, BinOp, BoolExpr, CmpOp, LocRef};
use crate::model::{Model, Prefix, ProcessTerm, SystemTerm};

/// Renders a model in the concrete syntax.
pub fn format_model(model: &Model) -> String {
    let mut out = String::new();
    let h = &model.habitat;
    out.push_str("habitat {\n  locations: ");
    out.push_str(&h.names.join(", "));
    out.push_str(";\n");
    let mut edges = BTreeSet::new();
    for l in h.locations() {
        for n in h.neighbors_of(l) {
            let (a, b) = if l < *n { (l, *n) } else { (*n, l) };
            edges.insert((a, b));
        }
    }
    if !edges.is_empty() {
        out.push_str("  neighbors: ");
        let rendered: Vec<String> = edges
            .iter()
            .map(|(a, b)| format!("({}, {})", h.name(*a), h.name(*b)))
            .collect();
        out.push_str(&rendered.join(", "));
        out.push_str(";\n");
    }
    out.push_str("}\n");

    for (ai, name) in model.attributes.names.iter().enumerate() {
        let entries: Vec<String> = model
            .attributes
            .values
            .iter()
            .filter(|((a, _), _)| a.idx() == ai)
            .map(|((_, l), v)| format!("{}: {}", h.name(*l), rational(v)))
            .collect();
        let _ = writeln!(out, "\nattribute {name} {{ {} }}", entries.join(", "));
    }

    for sp in &model.species {
        let _ = writeln!(out, "\nspecies {} {{", sp.name);
        let _ = writeln!(
            out,
            "  bound {} via {};",
            sp.bound,
            model.channel_name(sp.rep_channel)
        );
        for (pname, body) in &sp.consts {
            let _ = writeln!(out, "  process {pname} = {};", term(model, sp, body));
        }
        let _ = writeln!(out, "  init {};", sp.consts[sp.offspring as usize].0);
        out.push_str("}\n");
    }

    out.push_str("\nsystem {\n");
    let mut restrict: Option<&BTreeSet<_>> = None;
    let mut spine = &model.system;
    if let SystemTerm::Restrict(inner, set) = spine {
        restrict = Some(set);
        spine = inner;
    }
    let parts: Vec<&SystemTerm> = match spine {
        SystemTerm::Parallel(parts) => parts.iter().collect(),
        SystemTerm::Empty => Vec::new(),
        other => vec![other],
    };
    for part in parts {
        if let SystemTerm::Located {
            term: t,
            species,
            loc,
            count,
        } = part
        {
            let sp = &model.species[species.idx()];
            let pname = match t {
                ProcessTerm::ConstRef(i) => sp.consts[*i as usize].0.clone(),
                other => panic!("system component is not a named process: {other:?}"),
            };
            let _ = writeln!(
                out,
                "  {count} of {}.{pname} at {};",
                sp.name,
                h.name(*loc)
            );
        }
    }
    if let Some(set) = restrict {
        let names: Vec<&str> = set.iter().map(|c| model.channel_name(*c)).collect();
        let _ = writeln!(out, "  restrict {{ {} }}", names.join(", "));
    }
    out.push_str("}\n");

    if !model.policy_patterns.is_empty() {
        out.push_str("\npolicy {\n");
        for (lo, hi) in &model.policy_patterns {
            let _ = writeln!(out, "  {} < {};", pattern(model, lo), pattern(model, hi));
        }
        out.push_str("}\n");
    }
    out
}

fn rational(v: &BigRational) -> String {
    v.to_string()
}

fn pattern(model: &Model, p: &crate::policy::PolicyPattern) -> String {
    use crate::policy::PatternKind::*;
    let loc = p
        .loc
        .map(|l| model.habitat.name(l).to_string())
        .unwrap_or_else(|| "*".into());
    let sp = p
        .species
        .map(|s| model.species[s.idx()].name.clone())
        .unwrap_or_else(|| "*".into());
    match p.kind {
        In(c) => format!("in({}, {loc}, {sp})", model.channel_name(c)),
        Out(c) => format!("out({}, {loc}, {sp})", model.channel_name(c)),
        TauChan(c) => format!("tau({}, {loc}, {sp})", model.channel_name(c)),
        TauGo => format!("tau(go, {loc}, {sp})"),
        Tick => "tick".into(),
    }
}

fn term(model: &Model, sp: &crate::model::SpeciesDef, t: &ProcessTerm) -> String {
    render_term(model, sp, t)
}

fn render_term(model: &Model, sp: &crate::model::SpeciesDef, t: &ProcessTerm) -> String {
    match t {
        ProcessTerm::PSum(branches) => {
            let parts: Vec<String> = branches
                .iter()
                .map(|(p, cont)| format!("{}: {}", rational(p), render_nsum(model, sp, cont)))
                .collect();
            parts.join(" (+) ")
        }
        other => render_nsum(model, sp, other),
    }
}

fn render_nsum(model: &Model, sp: &crate::model::SpeciesDef, t: &ProcessTerm) -> String {
    match t {
        ProcessTerm::NSum(branches) if branches.len() > 1 => {
            let parts: Vec<String> = branches
                .iter()
                .map(|(p, cont)| render_prefixed(model, sp, p, cont))
                .collect();
            parts.join(" + ")
        }
        other => render_atom(model, sp, other),
    }
}

fn render_atom(model: &Model, sp: &crate::model::SpeciesDef, t: &ProcessTerm) -> String {
    match t {
        ProcessTerm::Nil => "0".into(),
        ProcessTerm::NSum(branches) => {
            if branches.len() == 1 {
                render_prefixed(model, sp, &branches[0].0, &branches[0].1)
            } else {
                format!("({})", render_nsum(model, sp, t))
            }
        }
        ProcessTerm::PSum(_) => format!("({})", render_term(model, sp, t)),
        ProcessTerm::Cond(branches) => {
            let parts: Vec<String> = branches
                .iter()
                .map(|(g, body)| {
                    format!("{} -> {}", render_bool(model, g), render_term(model, sp, body))
                })
                .collect();
            format!("cond({})", parts.join("; "))
        }
        ProcessTerm::ConstRef(i) => sp.consts[*i as usize].0.clone(),
        ProcessTerm::Disperse { cont, extra } => {
            let mut s = format!(
                "disperse uniform nb(myloc) then {}",
                render_cont(model, sp, cont)
            );
            for (p, econt) in extra {
                let _ = write!(s, " plus {}", render_prefixed(model, sp, p, econt));
            }
            s
        }
    }
}

fn render_prefixed(
    model: &Model,
    sp: &crate::model::SpeciesDef,
    p: &Prefix,
    cont: &ProcessTerm,
) -> String {
    let head = match p {
        Prefix::In(c) => format!("{}?", model.channel_name(*c)),
        Prefix::Out(c) => format!("{}!", model.channel_name(*c)),
        Prefix::Go(l) => format!("go {}", model.habitat.name(*l)),
        Prefix::Tick => "tick".into(),
    };
    format!("{head}.{}", render_cont(model, sp, cont))
}

/// A continuation after `.` parses at prefix level, so anything that is not
/// a single prefix chain or atom needs parentheses.
fn render_cont(model: &Model, sp: &crate::model::SpeciesDef, t: &ProcessTerm) -> String {
    match t {
        ProcessTerm::NSum(branches) if branches.len() > 1 => {
            format!("({})", render_nsum(model, sp, t))
        }
        ProcessTerm::PSum(_) => format!("({})", render_term(model, sp, t)),
        other => render_atom(model, sp, other),
    }
}

fn render_bool(model: &Model, e: &BoolExpr) -> String {
    match e {
        BoolExpr::True => "true".into(),
        BoolExpr::Not(inner) => match **inner {
            BoolExpr::True => "!true".into(),
            _ => format!("!({})", render_bool(model, inner)),
        },
        BoolExpr::And(a, b) => {
            let left = match **a {
                BoolExpr::And(_, _) => render_bool(model, a),
                _ => render_bool_atom(model, a),
            };
            format!("{left} && {}", render_bool_atom(model, b))
        }
        BoolExpr::Cmp(w, op, c) => {
            let op = match op {
                CmpOp::Eq => "=",
                CmpOp::Le => "<=",
                CmpOp::Ge => ">=",
            };
            format!("{} {op} {}", render_arith(model, w, 0), rational(c))
        }
    }
}

fn render_bool_atom(model: &Model, e: &BoolExpr) -> String {
    match e {
        BoolExpr::And(_, _) => format!("({})", render_bool(model, e)),
        _ => render_bool(model, e),
    }
}

fn arith_prec(w: &ArithExpr) -> u8 {
    match w {
        ArithExpr::Bin(BinOp::Add | BinOp::Sub, _, _) => 1,
        ArithExpr::Bin(BinOp::Mul | BinOp::Div, _, _) => 2,
        ArithExpr::Neg(_) => 3,
        _ => 4,
    }
}

fn render_arith(model: &Model, w: &ArithExpr, parent: u8) -> String {
    let prec = arith_prec(w);
    let body = match w {
        ArithExpr::Const(c) => rational(c),
        ArithExpr::AttrAt(a, l) => {
            format!("{}@{}", model.attributes.name(*a), locref(model, l))
        }
        ArithExpr::CountAt(s, l) => {
            format!("{}@{}", model.species[s.idx()].name, locref(model, l))
        }
        ArithExpr::TotalAt(l) => format!("@{}", locref(model, l)),
        ArithExpr::Neg(inner) => format!("-{}", render_arith(model, inner, 3)),
        ArithExpr::Bin(op, a, b) => {
            let sym = match op {
                BinOp::Add => "+",
                BinOp::Sub => "-",
                BinOp::Mul => "*",
                BinOp::Div => "/",
            };
            format!(
                "{} {sym} {}",
                render_arith(model, a, prec),
                render_arith(model, b, prec + 1)
            )
        }
    };
    if prec < parent {
        format!("({body})")
    } else {
        body
    }
}

fn locref(model: &Model, l: &LocRef) -> String {
    match l {
        LocRef::Loc(loc) => model.habitat.name(*loc).to_string(),
        LocRef::MyLoc => "myloc".into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse_model;

    fn roundtrip(src: &str) {
        let m = parse_model(src).unwrap();
        let text = format_model(&m);
        let m2 = parse_model(&text).unwrap_or_else(|e| panic!("reparse failed:\n{text}\n{e}"));
        assert_eq!(m, m2, "roundtrip mismatch for:\n{text}");
        assert_eq!(text, format_model(&m2), "format is not a fixpoint");
    }

    #[test]
    fn empty_policy_model_roundtrips() {
        roundtrip(
            r#"
habitat { locations: l1, l2; neighbors: (l1,l2); }
species s {
  bound 1 via rep;
  process P = tick.P;
  init P;
}
system { 1 of s.P at l1; restrict { rep } }
"#,
        );
    }

    #[test]
    fn cond_chain_roundtrips_preserving_order() {
        let src = r#"
habitat { locations: l1, l2; neighbors: (l1,l2); }
attribute quality { l1: 1/2, l2: 3 }
species s {
  bound 1 via rep;
  process P = cond(s@myloc = 1 && quality@l1 >= 1/2 -> P1; !(@myloc >= 3) -> P2; true -> tick.P);
  process P1 = rep!.tick.P;
  process P2 = 1/3: tick.P (+) 2/3: (a?.P1 + b!.0);
  init P;
}
system { 2 of s.P at l1; 1 of s.P2 at l2; restrict { rep } }
policy { in(a, l1, s) < out(b, *, *); tau(rep, *, *) < tau(go, *, s); }
"#;
        let m = parse_model(src).unwrap();
        match &m.species[0].consts[0].1 {
            ProcessTerm::Cond(branches) => assert_eq!(branches.len(), 3),
            other => panic!("expected cond, got {other:?}"),
        }
        roundtrip(src);
    }

    #[test]
    fn disperse_sugar_roundtrips() {
        roundtrip(
            r#"
habitat { locations: l1, l2, l3, l4; neighbors: (l1,l2), (l1,l3), (l2,l4), (l3,l4); }
species s {
  bound 2 via rep;
  process P0 = disperse uniform nb(myloc) then cond(s@myloc = 1 -> P1; true -> tick.P0) plus prey?.0;
  process P1 = rep!.(1/2: tick.P0 (+) 1/2: rep!.tick.P0);
  init P0;
}
system { 2 of s.P0 at l1; 1 of s.P0 at l2; restrict { rep } }
"#,
        );
    }
}
