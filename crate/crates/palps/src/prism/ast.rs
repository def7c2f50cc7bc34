//! The guarded-command target language: bounded integer variables, rational
//! constants, modules of labeled commands, and reward blocks. The renderer
//! is the single source of the emitted text; the parser in this subsystem
//! accepts exactly what the renderer produces (plus whitespace/comments).

use std::collections::BTreeSet;
use std::fmt::Write;

use num::BigRational;

/// A bounded integer variable. Globals precede module locals in the state
/// vector; `module` is the owning module index for locals.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VarDecl {
    pub name: String,
    pub lo: i64,
    pub hi: i64,
    pub init: i64,
    pub module: Option<usize>,
}

/// Comparison operators of the guard language.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GcCmp {
    Eq,
    Ne,
    Le,
    Lt,
    Ge,
    Gt,
}

/// Expressions over variables and rational literals.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum GcExpr {
    Num(BigRational),
    Bool(bool),
    Var(usize),
    Not(Box<GcExpr>),
    And(Vec<GcExpr>),
    Or(Vec<GcExpr>),
    Cmp(GcCmp, Box<GcExpr>, Box<GcExpr>),
    Add(Box<GcExpr>, Box<GcExpr>),
    Sub(Box<GcExpr>, Box<GcExpr>),
    Mul(Box<GcExpr>, Box<GcExpr>),
    Min(Box<GcExpr>, Box<GcExpr>),
    Ite(Box<GcExpr>, Box<GcExpr>, Box<GcExpr>),
}

impl GcExpr {
    pub fn int(v: i64) -> Self {
        GcExpr::Num(BigRational::from_integer(v.into()))
    }

    pub fn var_eq(var: usize, v: i64) -> Self {
        GcExpr::Cmp(GcCmp::Eq, Box::new(GcExpr::Var(var)), Box::new(GcExpr::int(v)))
    }

    pub fn var_ne(var: usize, v: i64) -> Self {
        GcExpr::Cmp(GcCmp::Ne, Box::new(GcExpr::Var(var)), Box::new(GcExpr::int(v)))
    }

    /// Conjunction that drops `true` units and flattens nested conjunctions.
    pub fn and(parts: Vec<GcExpr>) -> Self {
        let mut flat = Vec::new();
        for p in parts {
            match p {
                GcExpr::Bool(true) => {}
                GcExpr::And(inner) => flat.extend(inner),
                other => flat.push(other),
            }
        }
        match flat.len() {
            0 => GcExpr::Bool(true),
            1 => flat.pop().unwrap(),
            _ => GcExpr::And(flat),
        }
    }

    pub fn or(parts: Vec<GcExpr>) -> Self {
        let mut flat = Vec::new();
        for p in parts {
            match p {
                GcExpr::Bool(false) => {}
                GcExpr::Or(inner) => flat.extend(inner),
                other => flat.push(other),
            }
        }
        match flat.len() {
            0 => GcExpr::Bool(false),
            1 => flat.pop().unwrap(),
            _ => GcExpr::Or(flat),
        }
    }

    /// `var + delta` as an expression, collapsing a zero delta.
    pub fn var_plus(var: usize, delta: i64) -> Self {
        if delta == 0 {
            GcExpr::Var(var)
        } else if delta > 0 {
            GcExpr::Add(Box::new(GcExpr::Var(var)), Box::new(GcExpr::int(delta)))
        } else {
            GcExpr::Sub(Box::new(GcExpr::Var(var)), Box::new(GcExpr::int(-delta)))
        }
    }
}

/// One probabilistic branch: a weight and a conjunction of assignments.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Branch {
    pub prob: BigRational,
    /// `(var' = expr)` pairs; empty means no change.
    pub assigns: Vec<(usize, GcExpr)>,
}

/// One guarded command.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Command {
    pub label: Option<String>,
    pub guard: GcExpr,
    pub branches: Vec<Branch>,
}

impl Command {
    pub fn is_dirac(&self) -> bool {
        self.branches.len() == 1
    }
}

/// A module: a name, its local variable indices, and its commands.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GcModule {
    pub name: String,
    pub locals: Vec<usize>,
    pub commands: Vec<Command>,
}

impl GcModule {
    /// The labels this module synchronizes on.
    pub fn alphabet(&self) -> BTreeSet<&str> {
        self.commands
            .iter()
            .filter_map(|c| c.label.as_deref())
            .collect()
    }
}

/// One reward item: an action label (or none for state rewards), a guard,
/// and the reward value.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RewardItem {
    pub label: Option<String>,
    pub guard: GcExpr,
    pub value: BigRational,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RewardBlock {
    pub name: String,
    pub items: Vec<RewardItem>,
}

/// A complete guarded-command program.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct GcProgram {
    pub consts: Vec<(String, BigRational)>,
    pub vars: Vec<VarDecl>,
    pub modules: Vec<GcModule>,
    pub rewards: Vec<RewardBlock>,
}

impl GcProgram {
    pub fn var_index(&self, name: &str) -> Option<usize> {
        self.vars.iter().position(|v| v.name == name)
    }

    /// The deterministic initial valuation.
    pub fn initial_state(&self) -> Vec<i64> {
        self.vars.iter().map(|v| v.init).collect()
    }

    /// Renders the program; `parse_gc` accepts the output verbatim.
    pub fn render(&self) -> String {
        let mut out = String::from("mdp\n\n");
        for (name, value) in &self.consts {
            let _ = writeln!(out, "const double {name} = {};", rat(value));
        }
        if !self.consts.is_empty() {
            out.push('\n');
        }
        for v in &self.vars {
            if v.module.is_none() {
                let _ = writeln!(
                    out,
                    "global {}: [{}..{}] init {};",
                    v.name, v.lo, v.hi, v.init
                );
            }
        }
        for m in &self.modules {
            let _ = writeln!(out, "\nmodule {}", m.name);
            for vi in &m.locals {
                let v = &self.vars[*vi];
                let _ = writeln!(
                    out,
                    "  {}: [{}..{}] init {};",
                    v.name, v.lo, v.hi, v.init
                );
            }
            for c in &m.commands {
                let label = c.label.as_deref().unwrap_or("");
                let _ = write!(out, "  [{label}] {} -> ", self.expr(&c.guard));
                let parts: Vec<String> = c
                    .branches
                    .iter()
                    .map(|b| {
                        let update = if b.assigns.is_empty() {
                            "true".to_string()
                        } else {
                            b.assigns
                                .iter()
                                .map(|(v, e)| {
                                    format!("({}'={})", self.vars[*v].name, self.expr(e))
                                })
                                .collect::<Vec<_>>()
                                .join("&")
                        };
                        if c.branches.len() == 1 {
                            update
                        } else {
                            format!("{}: {update}", rat(&b.prob))
                        }
                    })
                    .collect();
                let _ = writeln!(out, "{};", parts.join(" + "));
            }
            out.push_str("endmodule\n");
        }
        for r in &self.rewards {
            let _ = writeln!(out, "\nrewards \"{}\"", r.name);
            for item in &r.items {
                let label = item
                    .label
                    .as_deref()
                    .map(|l| format!("[{l}] "))
                    .unwrap_or_default();
                let _ = writeln!(
                    out,
                    "  {label}{}: {};",
                    self.expr(&item.guard),
                    rat(&item.value)
                );
            }
            out.push_str("endrewards\n");
        }
        out
    }

    fn expr(&self, e: &GcExpr) -> String {
        self.expr_prec(e, 0)
    }

    // precedence: 0 or, 1 and, 2 not, 3 cmp, 4 add, 5 mul, 6 atom
    fn expr_prec(&self, e: &GcExpr, parent: u8) -> String {
        let (body, prec) = match e {
            GcExpr::Num(v) => (rat(v), 6),
            GcExpr::Bool(b) => (b.to_string(), 6),
            GcExpr::Var(i) => (self.vars[*i].name.clone(), 6),
            GcExpr::Not(inner) => (format!("!{}", self.expr_prec(inner, 6)), 2),
            GcExpr::And(parts) => (
                parts
                    .iter()
                    .map(|p| self.expr_prec(p, 4))
                    .collect::<Vec<_>>()
                    .join("&"),
                1,
            ),
            GcExpr::Or(parts) => (
                parts
                    .iter()
                    .map(|p| self.expr_prec(p, 2))
                    .collect::<Vec<_>>()
                    .join("|"),
                0,
            ),
            GcExpr::Cmp(op, a, b) => {
                let sym = match op {
                    GcCmp::Eq => "=",
                    GcCmp::Ne => "!=",
                    GcCmp::Le => "<=",
                    GcCmp::Lt => "<",
                    GcCmp::Ge => ">=",
                    GcCmp::Gt => ">",
                };
                (
                    format!(
                        "{}{sym}{}",
                        self.expr_prec(a, 4),
                        self.expr_prec(b, 4)
                    ),
                    3,
                )
            }
            GcExpr::Add(a, b) => (
                format!("{}+{}", self.expr_prec(a, 4), self.expr_prec(b, 5)),
                4,
            ),
            GcExpr::Sub(a, b) => (
                format!("{}-{}", self.expr_prec(a, 4), self.expr_prec(b, 5)),
                4,
            ),
            GcExpr::Mul(a, b) => (
                format!("{}*{}", self.expr_prec(a, 5), self.expr_prec(b, 6)),
                5,
            ),
            GcExpr::Min(a, b) => (
                format!("min({},{})", self.expr_prec(a, 0), self.expr_prec(b, 0)),
                6,
            ),
            GcExpr::Ite(c, a, b) => (
                format!(
                    "({} ? {} : {})",
                    self.expr_prec(c, 0),
                    self.expr_prec(a, 0),
                    self.expr_prec(b, 0)
                ),
                6,
            ),
        };
        if prec < parent {
            format!("({body})")
        } else {
            body
        }
    }
}

fn rat(v: &BigRational) -> String {
    v.to_string()
}
