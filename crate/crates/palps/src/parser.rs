//! Parser for the `.palps` concrete syntax.
//!
//! A model file is a sequence of blocks:
//!
//! ```text
//! habitat { locations: l1, l2; neighbors: (l1, l2); }
//! attribute quality { l1: 1/2, l2: 3 }
//! species s {
//!   bound 2 via rep;
//!   process P0 = disperse uniform nb(myloc) then cond(s@myloc = 1 -> P1; true -> tick.P0);
//!   process P1 = rep!.(1/2: tick.P0 (+) 1/2: rep!.tick.P0);
//!   init P0;
//! }
//! system { 2 of s.P0 at l1; restrict { rep } }
//! policy { tau(rep, *, *) < tau(go, *, *); }
//! ```
//!
//! Channels are interned from use (prefixes, `via`, `restrict`, policy
//! labels) and canonically renumbered in name order, so structurally equal
//! models parse to identical values regardless of textual layout. Comments
//! run from `#` to end of line; both LF and CRLF are accepted.

use std::collections::BTreeSet;
use std::fmt;

use num::{BigInt, BigRational};
use thiserror::Error;

use crate::expr::{ArithExpr, BinOp, BoolExpr, CmpOp, LocRef};
use crate::model::{
    AttrId, AttributeTable, ChanId, Habitat, LocId, Model, Prefix, ProcessTerm, SpeciesDef,
    SpeciesId, SystemTerm,
};
use crate::policy::{PatternKind, PolicyPattern};

/// A source region, in bytes and line/column (1-based) of its start.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SourceSpan {
    pub begin: usize,
    pub end: usize,
    pub line: u32,
    pub column: u32,
}

/// One parse diagnostic.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Diagnostic {
    pub span: SourceSpan,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{}: {}",
            self.span.line, self.span.column, self.message
        )
    }
}

/// Parse failure: one or more diagnostics.
#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub struct SyntaxError {
    pub diagnostics: Vec<Diagnostic>,
}

impl fmt::Display for SyntaxError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for d in &self.diagnostics {
            writeln!(f, "{d}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) enum Tok {
    Ident(String),
    Int(String),
    Dec(String),
    LBrace,
    RBrace,
    LBracket,
    RBracket,
    LParen,
    RParen,
    PSumSep, // (+)
    Comma,
    Semi,
    Colon,
    Dot,
    Question,
    Bang,
    Plus,
    Minus,
    Star,
    Slash,
    At,
    Arrow, // ->
    Lt,
    Le,
    Ge,
    Eq,
    AndAnd,
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Int(s) | Tok::Dec(s) => format!("`{s}`"),
            Tok::LBrace => "`{`".into(),
            Tok::RBrace => "`}`".into(),
            Tok::LBracket => "`[`".into(),
            Tok::RBracket => "`]`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::PSumSep => "`(+)`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Semi => "`;`".into(),
            Tok::Colon => "`:`".into(),
            Tok::Dot => "`.`".into(),
            Tok::Question => "`?`".into(),
            Tok::Bang => "`!`".into(),
            Tok::Plus => "`+`".into(),
            Tok::Minus => "`-`".into(),
            Tok::Star => "`*`".into(),
            Tok::Slash => "`/`".into(),
            Tok::At => "`@`".into(),
            Tok::Arrow => "`->`".into(),
            Tok::Lt => "`<`".into(),
            Tok::Le => "`<=`".into(),
            Tok::Ge => "`>=`".into(),
            Tok::Eq => "`=`".into(),
            Tok::AndAnd => "`&&`".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

// `disperse` is deliberately not reserved: it introduces the uniform-move
// sugar only when followed by `uniform`, and stays available as a channel.
const RESERVED: &[&str] = &[
    "habitat", "locations", "neighbors", "attribute", "species", "bound", "via", "process",
    "init", "system", "of", "at", "restrict", "policy", "in", "out", "tau", "tick", "go", "cond",
    "true", "myloc", "uniform", "nb", "then", "plus",
];

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
    line: u32,
    col: u32,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Lexer {
            src: src.as_bytes(),
            pos: 0,
            line: 1,
            col: 1,
        }
    }

    fn bump(&mut self) -> u8 {
        let c = self.src[self.pos];
        self.pos += 1;
        if c == b'\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        c
    }

    fn peek(&self, off: usize) -> Option<u8> {
        self.src.get(self.pos + off).copied()
    }

    fn tokenize(mut self) -> Result<Vec<(Tok, SourceSpan)>, SyntaxError> {
        let mut out = Vec::new();
        loop {
            while let Some(c) = self.peek(0) {
                if c == b'#' {
                    while self.peek(0).map_or(false, |c| c != b'\n') {
                        self.bump();
                    }
                } else if c.is_ascii_whitespace() {
                    self.bump();
                } else {
                    break;
                }
            }
            let begin = self.pos;
            let line = self.line;
            let column = self.col;
            let span = |l: &Lexer| SourceSpan {
                begin,
                end: l.pos,
                line,
                column,
            };
            let Some(c) = self.peek(0) else {
                out.push((Tok::Eof, span(&self)));
                return Ok(out);
            };
            let tok = match c {
                b'{' => {
                    self.bump();
                    Tok::LBrace
                }
                b'}' => {
                    self.bump();
                    Tok::RBrace
                }
                b'[' => {
                    self.bump();
                    Tok::LBracket
                }
                b']' => {
                    self.bump();
                    Tok::RBracket
                }
                b'(' => {
                    if self.peek(1) == Some(b'+') && self.peek(2) == Some(b')') {
                        self.bump();
                        self.bump();
                        self.bump();
                        Tok::PSumSep
                    } else {
                        self.bump();
                        Tok::LParen
                    }
                }
                b')' => {
                    self.bump();
                    Tok::RParen
                }
                b',' => {
                    self.bump();
                    Tok::Comma
                }
                b';' => {
                    self.bump();
                    Tok::Semi
                }
                b':' => {
                    self.bump();
                    Tok::Colon
                }
                b'.' => {
                    self.bump();
                    Tok::Dot
                }
                b'?' => {
                    self.bump();
                    Tok::Question
                }
                b'!' => {
                    self.bump();
                    Tok::Bang
                }
                b'+' => {
                    self.bump();
                    Tok::Plus
                }
                b'-' => {
                    self.bump();
                    if self.peek(0) == Some(b'>') {
                        self.bump();
                        Tok::Arrow
                    } else {
                        Tok::Minus
                    }
                }
                b'*' => {
                    self.bump();
                    Tok::Star
                }
                b'/' => {
                    self.bump();
                    Tok::Slash
                }
                b'@' => {
                    self.bump();
                    Tok::At
                }
                b'<' => {
                    self.bump();
                    if self.peek(0) == Some(b'=') {
                        self.bump();
                        Tok::Le
                    } else {
                        Tok::Lt
                    }
                }
                b'>' => {
                    self.bump();
                    if self.peek(0) == Some(b'=') {
                        self.bump();
                        Tok::Ge
                    } else {
                        return Err(SyntaxError {
                            diagnostics: vec![Diagnostic {
                                span: span(&self),
                                message: "`>` is not an operator; use `>=` or a negation".into(),
                            }],
                        });
                    }
                }
                b'=' => {
                    self.bump();
                    Tok::Eq
                }
                b'&' => {
                    self.bump();
                    if self.peek(0) == Some(b'&') {
                        self.bump();
                        Tok::AndAnd
                    } else {
                        return Err(SyntaxError {
                            diagnostics: vec![Diagnostic {
                                span: span(&self),
                                message: "expected `&&`".into(),
                            }],
                        });
                    }
                }
                b'0'..=b'9' => {
                    let mut s = String::new();
                    while self.peek(0).map_or(false, |c| c.is_ascii_digit()) {
                        s.push(self.bump() as char);
                    }
                    if self.peek(0) == Some(b'.')
                        && self.peek(1).map_or(false, |c| c.is_ascii_digit())
                    {
                        s.push(self.bump() as char);
                        while self.peek(0).map_or(false, |c| c.is_ascii_digit()) {
                            s.push(self.bump() as char);
                        }
                        Tok::Dec(s)
                    } else {
                        Tok::Int(s)
                    }
                }
                c if c.is_ascii_alphabetic() || c == b'_' => {
                    let mut s = String::new();
                    while self
                        .peek(0)
                        .map_or(false, |c| c.is_ascii_alphanumeric() || c == b'_' || c == b'\'')
                    {
                        s.push(self.bump() as char);
                    }
                    Tok::Ident(s)
                }
                other => {
                    self.bump();
                    return Err(SyntaxError {
                        diagnostics: vec![Diagnostic {
                            span: span(&self),
                            message: format!("unexpected byte 0x{other:02x}"),
                        }],
                    });
                }
            };
            out.push((tok, span(&self)));
        }
    }
}

/// Names collected before the main parse so that definitions may be used
/// before their declaration.
#[derive(Default)]
struct Prescan {
    locations: Vec<String>,
    attributes: Vec<String>,
    species: Vec<(String, Vec<String>)>,
}

fn prescan(toks: &[(Tok, SourceSpan)]) -> Prescan {
    let mut out = Prescan::default();
    let mut depth = 0usize;
    let mut i = 0;
    while i < toks.len() {
        match &toks[i].0 {
            Tok::LBrace => depth += 1,
            Tok::RBrace => depth = depth.saturating_sub(1),
            Tok::Ident(w) if depth == 0 && w == "habitat" => {
                let mut j = i + 1;
                let mut d = 0usize;
                while j < toks.len() {
                    match &toks[j].0 {
                        Tok::LBrace => d += 1,
                        Tok::RBrace => {
                            if d <= 1 {
                                break;
                            }
                            d -= 1;
                        }
                        Tok::Ident(w2) if w2 == "locations" => {
                            let mut k = j + 1;
                            if matches!(toks.get(k).map(|t| &t.0), Some(Tok::Colon)) {
                                k += 1;
                                while let Some((Tok::Ident(name), _)) = toks.get(k) {
                                    out.locations.push(name.clone());
                                    k += 1;
                                    if matches!(toks.get(k).map(|t| &t.0), Some(Tok::Comma)) {
                                        k += 1;
                                    } else {
                                        break;
                                    }
                                }
                            }
                            j = k;
                            continue;
                        }
                        _ => {}
                    }
                    j += 1;
                }
            }
            Tok::Ident(w) if depth == 0 && w == "attribute" => {
                if let Some((Tok::Ident(name), _)) = toks.get(i + 1) {
                    out.attributes.push(name.clone());
                }
            }
            Tok::Ident(w) if depth == 0 && w == "species" => {
                if let Some((Tok::Ident(name), _)) = toks.get(i + 1) {
                    let mut procs = Vec::new();
                    let mut j = i + 2;
                    let mut d = 0usize;
                    while j < toks.len() {
                        match &toks[j].0 {
                            Tok::LBrace => d += 1,
                            Tok::RBrace => {
                                if d <= 1 {
                                    break;
                                }
                                d -= 1;
                            }
                            Tok::Ident(w2) if d == 1 && w2 == "process" => {
                                if let Some((Tok::Ident(p), _)) = toks.get(j + 1) {
                                    procs.push(p.clone());
                                }
                            }
                            _ => {}
                        }
                        j += 1;
                    }
                    out.species.push((name.clone(), procs));
                }
            }
            _ => {}
        }
        i += 1;
    }
    out
}

pub(crate) struct Parser {
    toks: Vec<(Tok, SourceSpan)>,
    pos: usize,
    pub(crate) diagnostics: Vec<Diagnostic>,
    pre: Prescan,
    channels: Vec<String>,
    // model under construction
    habitat: Option<Habitat>,
    attributes: AttributeTable,
    species: Vec<SpeciesDef>,
    system: Option<SystemTerm>,
    policy: Vec<(PolicyPattern, PolicyPattern)>,
}

type PResult<T> = Result<T, ()>;

impl Parser {
    pub(crate) fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    pub(crate) fn peek_at(&self, off: usize) -> &Tok {
        &self.toks[(self.pos + off).min(self.toks.len() - 1)].0
    }

    pub(crate) fn span(&self) -> SourceSpan {
        self.toks[self.pos].1
    }

    pub(crate) fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].0.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    pub(crate) fn error<T>(&mut self, message: String) -> PResult<T> {
        self.diagnostics.push(Diagnostic {
            span: self.span(),
            message,
        });
        Err(())
    }

    pub(crate) fn expect(&mut self, tok: Tok) -> PResult<()> {
        if *self.peek() == tok {
            self.bump();
            Ok(())
        } else {
            let found = self.peek().describe();
            self.error(format!("expected {}, found {found}", tok.describe()))
        }
    }

    pub(crate) fn expect_kw(&mut self, kw: &str) -> PResult<()> {
        match self.peek() {
            Tok::Ident(w) if w == kw => {
                self.bump();
                Ok(())
            }
            other => {
                let found = other.describe();
                self.error(format!("expected `{kw}`, found {found}"))
            }
        }
    }

    pub(crate) fn at_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(w) if w == kw)
    }

    pub(crate) fn ident(&mut self, what: &str) -> PResult<String> {
        match self.peek().clone() {
            Tok::Ident(w) => {
                if RESERVED.contains(&w.as_str()) {
                    self.error(format!("`{w}` is a reserved word and cannot name a {what}"))
                } else {
                    self.bump();
                    Ok(w)
                }
            }
            other => {
                let found = other.describe();
                self.error(format!("expected {what} name, found {found}"))
            }
        }
    }

    /// Skips to the token after the closing brace of the current block.
    fn skip_block(&mut self) {
        let mut depth = 0usize;
        loop {
            match self.peek() {
                Tok::Eof => return,
                Tok::LBrace => {
                    depth += 1;
                    self.bump();
                }
                Tok::RBrace => {
                    self.bump();
                    if depth <= 1 {
                        return;
                    }
                    depth -= 1;
                }
                _ => {
                    self.bump();
                }
            }
        }
    }

    fn chan_id(&mut self, name: &str) -> ChanId {
        if let Some(i) = self.channels.iter().position(|c| c == name) {
            ChanId(i as u32)
        } else {
            self.channels.push(name.to_string());
            ChanId(self.channels.len() as u32 - 1)
        }
    }

    fn loc_id(&mut self, name: &str) -> PResult<LocId> {
        match self.pre.locations.iter().position(|l| l == name) {
            Some(i) => Ok(LocId(i as u32)),
            None => self.error(format!("unknown location `{name}`")),
        }
    }

    fn species_id(&mut self, name: &str) -> PResult<SpeciesId> {
        match self.pre.species.iter().position(|(s, _)| s == name) {
            Some(i) => Ok(SpeciesId(i as u32)),
            None => self.error(format!("unknown species `{name}`")),
        }
    }

    fn number(&mut self) -> PResult<BigRational> {
        let neg = if *self.peek() == Tok::Minus {
            self.bump();
            true
        } else {
            false
        };
        let v = match self.peek().clone() {
            Tok::Int(s) => {
                self.bump();
                BigRational::from_integer(s.parse::<BigInt>().unwrap())
            }
            Tok::Dec(s) => {
                self.bump();
                decimal_to_rational(&s)
            }
            other => {
                let found = other.describe();
                return self.error(format!("expected a number, found {found}"));
            }
        };
        Ok(if neg { -v } else { v })
    }

    /// A probability literal: integer, decimal, or fraction `p/q`.
    fn probability(&mut self) -> PResult<BigRational> {
        let n = self.number()?;
        if *self.peek() == Tok::Slash {
            self.bump();
            let d = self.number()?;
            if d == BigRational::from_integer(0.into()) {
                return self.error("zero denominator in probability".into());
            }
            Ok(n / d)
        } else {
            Ok(n)
        }
    }

    pub(crate) fn uint(&mut self, what: &str) -> PResult<u32> {
        match self.peek().clone() {
            Tok::Int(s) => match s.parse::<u32>() {
                Ok(v) => {
                    self.bump();
                    Ok(v)
                }
                Err(_) => self.error(format!("{what} out of range")),
            },
            other => {
                let found = other.describe();
                self.error(format!("expected {what}, found {found}"))
            }
        }
    }

    // ---- blocks ----

    fn parse_file(&mut self) {
        loop {
            match self.peek().clone() {
                Tok::Eof => return,
                Tok::Ident(w) => {
                    let ok = match w.as_str() {
                        "habitat" => self.parse_habitat(),
                        "attribute" => self.parse_attribute(),
                        "species" => self.parse_species(),
                        "system" => self.parse_system(),
                        "policy" => self.parse_policy(),
                        other => {
                            let _: PResult<()> =
                                self.error(format!("unknown top-level block `{other}`"));
                            Err(())
                        }
                    };
                    if ok.is_err() {
                        self.skip_block();
                    }
                }
                other => {
                    let found = other.describe();
                    let _: PResult<()> =
                        self.error(format!("expected a top-level block, found {found}"));
                    self.bump();
                }
            }
        }
    }

    fn parse_habitat(&mut self) -> PResult<()> {
        self.expect_kw("habitat")?;
        self.expect(Tok::LBrace)?;
        if self.habitat.is_some() {
            return self.error("duplicate habitat block".into());
        }
        self.expect_kw("locations")?;
        self.expect(Tok::Colon)?;
        let mut names = Vec::new();
        loop {
            names.push(self.ident("location")?);
            if *self.peek() == Tok::Comma {
                self.bump();
            } else {
                break;
            }
        }
        self.expect(Tok::Semi)?;
        let mut habitat = Habitat::new(names);
        if self.at_kw("neighbors") {
            self.bump();
            self.expect(Tok::Colon)?;
            loop {
                self.expect(Tok::LParen)?;
                let a = self.ident("location")?;
                let a = self.loc_id(&a)?;
                self.expect(Tok::Comma)?;
                let b = self.ident("location")?;
                let b = self.loc_id(&b)?;
                self.expect(Tok::RParen)?;
                if a == b {
                    return self.error("a location cannot neighbor itself".into());
                }
                habitat.add_edge(a, b);
                if *self.peek() == Tok::Comma {
                    self.bump();
                } else {
                    break;
                }
            }
            self.expect(Tok::Semi)?;
        }
        self.expect(Tok::RBrace)?;
        self.habitat = Some(habitat);
        Ok(())
    }

    fn parse_attribute(&mut self) -> PResult<()> {
        self.expect_kw("attribute")?;
        let name = self.ident("attribute")?;
        let attr = match self.pre.attributes.iter().position(|a| *a == name) {
            Some(i) => AttrId(i as u32),
            None => return self.error(format!("attribute `{name}` was not prescanned")),
        };
        self.expect(Tok::LBrace)?;
        loop {
            let loc = self.ident("location")?;
            let loc = self.loc_id(&loc)?;
            self.expect(Tok::Colon)?;
            let mut value = self.number()?;
            if *self.peek() == Tok::Slash {
                self.bump();
                let d = self.number()?;
                if d == BigRational::from_integer(0.into()) {
                    return self.error("zero denominator in attribute value".into());
                }
                value = value / d;
            }
            self.attributes.values.insert((attr, loc), value);
            if *self.peek() == Tok::Comma {
                self.bump();
            } else {
                break;
            }
        }
        self.expect(Tok::RBrace)?;
        Ok(())
    }

    fn parse_species(&mut self) -> PResult<()> {
        self.expect_kw("species")?;
        let name = self.ident("species")?;
        let sid = self.species_id(&name)?;
        self.expect(Tok::LBrace)?;
        self.expect_kw("bound")?;
        let bound = self.uint("replication bound")?;
        let rep_channel = if self.at_kw("via") {
            self.bump();
            let c = self.ident("channel")?;
            self.chan_id(&c)
        } else {
            self.chan_id("rep")
        };
        self.expect(Tok::Semi)?;
        let mut consts: Vec<(String, ProcessTerm)> = Vec::new();
        while self.at_kw("process") {
            self.bump();
            let pname = self.ident("process")?;
            self.expect(Tok::Eq)?;
            let term = self.parse_term(sid)?;
            self.expect(Tok::Semi)?;
            consts.push((pname, term));
        }
        self.expect_kw("init")?;
        let init = self.ident("process")?;
        self.expect(Tok::Semi)?;
        self.expect(Tok::RBrace)?;
        let offspring = match consts.iter().position(|(n, _)| *n == init) {
            Some(i) => i as u32,
            None => return self.error(format!("init references unknown process `{init}`")),
        };
        // Species blocks may appear in any order; place at the prescanned slot.
        while self.species.len() <= sid.idx() {
            self.species.push(SpeciesDef {
                name: String::new(),
                consts: Vec::new(),
                offspring: 0,
                bound: 0,
                rep_channel: ChanId(0),
            });
        }
        self.species[sid.idx()] = SpeciesDef {
            name,
            consts,
            offspring,
            bound,
            rep_channel,
        };
        Ok(())
    }

    fn parse_system(&mut self) -> PResult<()> {
        self.expect_kw("system")?;
        self.expect(Tok::LBrace)?;
        if self.system.is_some() {
            return self.error("duplicate system block".into());
        }
        let mut parts = Vec::new();
        while matches!(self.peek(), Tok::Int(_)) {
            let count = self.uint("multiplicity")?;
            self.expect_kw("of")?;
            let sp = self.ident("species")?;
            let species = self.species_id(&sp)?;
            self.expect(Tok::Dot)?;
            let pname = self.ident("process")?;
            let cidx = match self.pre.species[species.idx()]
                .1
                .iter()
                .position(|p| *p == pname)
            {
                Some(i) => i as u32,
                None => {
                    return self.error(format!(
                        "species `{sp}` has no process `{pname}`"
                    ))
                }
            };
            self.expect_kw("at")?;
            let loc = self.ident("location")?;
            let loc = self.loc_id(&loc)?;
            self.expect(Tok::Semi)?;
            if count < 1 {
                return self.error("multiplicity must be at least 1".into());
            }
            parts.push(SystemTerm::Located {
                term: ProcessTerm::ConstRef(cidx),
                species,
                loc,
                count,
            });
        }
        // Species processes join the system implicitly, one per species with
        // a positive replication bound.
        for (i, (_, _)) in self.pre.species.iter().enumerate() {
            parts.push(SystemTerm::SpeciesProc(SpeciesId(i as u32)));
        }
        let mut restrict = BTreeSet::new();
        let mut has_restrict = false;
        if self.at_kw("restrict") {
            has_restrict = true;
            self.bump();
            self.expect(Tok::LBrace)?;
            if *self.peek() != Tok::RBrace {
                loop {
                    let c = self.ident("channel")?;
                    restrict.insert(self.chan_id(&c));
                    if *self.peek() == Tok::Comma {
                        self.bump();
                    } else {
                        break;
                    }
                }
            }
            self.expect(Tok::RBrace)?;
        }
        self.expect(Tok::RBrace)?;
        let inner = if parts.is_empty() {
            SystemTerm::Empty
        } else {
            SystemTerm::Parallel(parts)
        };
        self.system = Some(if has_restrict {
            SystemTerm::Restrict(Box::new(inner), restrict)
        } else {
            inner
        });
        Ok(())
    }

    fn parse_policy(&mut self) -> PResult<()> {
        self.expect_kw("policy")?;
        self.expect(Tok::LBrace)?;
        while *self.peek() != Tok::RBrace {
            let lower = self.parse_label()?;
            self.expect(Tok::Lt)?;
            let higher = self.parse_label()?;
            self.expect(Tok::Semi)?;
            self.policy.push((lower, higher));
        }
        self.expect(Tok::RBrace)?;
        Ok(())
    }

    fn parse_label(&mut self) -> PResult<PolicyPattern> {
        let kw = match self.peek().clone() {
            Tok::Ident(w) => w,
            other => {
                let found = other.describe();
                return self.error(format!("expected an action label, found {found}"));
            }
        };
        match kw.as_str() {
            "tick" => {
                self.bump();
                Ok(PolicyPattern::tick())
            }
            "in" | "out" | "tau" => {
                self.bump();
                self.expect(Tok::LParen)?;
                let kind = if kw == "tau" && self.at_kw("go") {
                    self.bump();
                    PatternKind::TauGo
                } else {
                    let c = self.ident("channel")?;
                    let c = self.chan_id(&c);
                    match kw.as_str() {
                        "in" => PatternKind::In(c),
                        "out" => PatternKind::Out(c),
                        _ => PatternKind::TauChan(c),
                    }
                };
                self.expect(Tok::Comma)?;
                let loc = if *self.peek() == Tok::Star {
                    self.bump();
                    None
                } else {
                    let l = self.ident("location")?;
                    Some(self.loc_id(&l)?)
                };
                self.expect(Tok::Comma)?;
                let species = if *self.peek() == Tok::Star {
                    self.bump();
                    None
                } else {
                    let s = self.ident("species")?;
                    Some(self.species_id(&s)?)
                };
                self.expect(Tok::RParen)?;
                Ok(PolicyPattern { kind, loc, species })
            }
            other => self.error(format!("unknown action label kind `{other}`")),
        }
    }

    // ---- terms ----

    fn parse_term(&mut self, sid: SpeciesId) -> PResult<ProcessTerm> {
        // Probabilistic sum if we can see `number [ / number ] :` ahead.
        if self.prob_branch_ahead() {
            let mut branches = Vec::new();
            loop {
                let p = self.probability()?;
                self.expect(Tok::Colon)?;
                let t = self.parse_nsum(sid)?;
                branches.push((p, t));
                if *self.peek() == Tok::PSumSep {
                    self.bump();
                } else {
                    break;
                }
            }
            Ok(ProcessTerm::PSum(branches))
        } else {
            self.parse_nsum(sid)
        }
    }

    fn prob_branch_ahead(&self) -> bool {
        let mut i = 0;
        if matches!(self.peek_at(i), Tok::Minus) {
            i += 1;
        }
        if !matches!(self.peek_at(i), Tok::Int(_) | Tok::Dec(_)) {
            return false;
        }
        i += 1;
        if matches!(self.peek_at(i), Tok::Slash) {
            i += 2;
        }
        matches!(self.peek_at(i), Tok::Colon)
    }

    fn parse_nsum(&mut self, sid: SpeciesId) -> PResult<ProcessTerm> {
        let first = self.parse_prefixed(sid)?;
        if *self.peek() != Tok::Plus {
            return Ok(first);
        }
        let mut branches = match first {
            ProcessTerm::NSum(b) => b,
            _ => {
                return self.error(
                    "only action-prefixed terms can be joined with `+`".into(),
                )
            }
        };
        while *self.peek() == Tok::Plus {
            self.bump();
            match self.parse_prefixed(sid)? {
                ProcessTerm::NSum(b) => branches.extend(b),
                _ => {
                    return self.error(
                        "only action-prefixed terms can be joined with `+`".into(),
                    )
                }
            }
        }
        Ok(ProcessTerm::NSum(branches))
    }

    fn parse_prefixed(&mut self, sid: SpeciesId) -> PResult<ProcessTerm> {
        match self.peek().clone() {
            Tok::Int(s) if s == "0" => {
                self.bump();
                Ok(ProcessTerm::Nil)
            }
            Tok::LParen => {
                self.bump();
                let t = self.parse_term(sid)?;
                self.expect(Tok::RParen)?;
                Ok(t)
            }
            Tok::Ident(w) => match w.as_str() {
                "tick" => {
                    self.bump();
                    self.expect(Tok::Dot)?;
                    let cont = self.parse_prefixed(sid)?;
                    Ok(ProcessTerm::prefix(Prefix::Tick, cont))
                }
                "go" => {
                    self.bump();
                    let l = self.ident("location")?;
                    let l = self.loc_id(&l)?;
                    self.expect(Tok::Dot)?;
                    let cont = self.parse_prefixed(sid)?;
                    Ok(ProcessTerm::prefix(Prefix::Go(l), cont))
                }
                "cond" => {
                    self.bump();
                    self.expect(Tok::LParen)?;
                    let mut branches = Vec::new();
                    loop {
                        let guard = self.parse_bool()?;
                        self.expect(Tok::Arrow)?;
                        let body = self.parse_term(sid)?;
                        branches.push((guard, body));
                        if *self.peek() == Tok::Semi {
                            self.bump();
                        } else {
                            break;
                        }
                    }
                    self.expect(Tok::RParen)?;
                    Ok(ProcessTerm::Cond(branches))
                }
                "disperse" if matches!(self.peek_at(1), Tok::Ident(u) if u == "uniform") => {
                    self.bump();
                    self.expect_kw("uniform")?;
                    self.expect_kw("nb")?;
                    self.expect(Tok::LParen)?;
                    self.expect_kw("myloc")?;
                    self.expect(Tok::RParen)?;
                    self.expect_kw("then")?;
                    let cont = self.parse_prefixed(sid)?;
                    let mut extra = Vec::new();
                    while self.at_kw("plus") {
                        self.bump();
                        match self.parse_prefixed(sid)? {
                            ProcessTerm::NSum(mut b) if b.len() == 1 => {
                                extra.push(b.pop().unwrap())
                            }
                            _ => {
                                return self.error(
                                    "`plus` must be followed by a single action-prefixed term"
                                        .into(),
                                )
                            }
                        }
                    }
                    Ok(ProcessTerm::Disperse {
                        cont: Box::new(cont),
                        extra,
                    })
                }
                name => {
                    // channel prefix or process constant
                    if RESERVED.contains(&name) {
                        let found = name.to_string();
                        return self.error(format!("unexpected keyword `{found}` in a term"));
                    }
                    match self.peek_at(1) {
                        Tok::Question => {
                            self.bump();
                            self.bump();
                            let c = self.chan_id(name);
                            self.expect(Tok::Dot)?;
                            let cont = self.parse_prefixed(sid)?;
                            Ok(ProcessTerm::prefix(Prefix::In(c), cont))
                        }
                        Tok::Bang => {
                            self.bump();
                            self.bump();
                            let c = self.chan_id(name);
                            self.expect(Tok::Dot)?;
                            let cont = self.parse_prefixed(sid)?;
                            Ok(ProcessTerm::prefix(Prefix::Out(c), cont))
                        }
                        _ => {
                            let idx = self.pre.species[sid.idx()]
                                .1
                                .iter()
                                .position(|p| p == name);
                            match idx {
                                Some(i) => {
                                    self.bump();
                                    Ok(ProcessTerm::ConstRef(i as u32))
                                }
                                None => self.error(format!(
                                    "unknown process `{name}` (channels are written `{name}?.` or `{name}!.`)"
                                )),
                            }
                        }
                    }
                }
            },
            other => {
                let found = other.describe();
                self.error(format!("expected a process term, found {found}"))
            }
        }
    }

    // ---- expressions ----

    pub(crate) fn parse_bool(&mut self) -> PResult<BoolExpr> {
        let mut acc = self.parse_bool_atom()?;
        while *self.peek() == Tok::AndAnd {
            self.bump();
            let rhs = self.parse_bool_atom()?;
            acc = BoolExpr::And(Box::new(acc), Box::new(rhs));
        }
        Ok(acc)
    }

    fn parse_bool_atom(&mut self) -> PResult<BoolExpr> {
        match self.peek().clone() {
            Tok::Ident(w) if w == "true" => {
                self.bump();
                Ok(BoolExpr::True)
            }
            Tok::Bang => {
                self.bump();
                let inner = self.parse_bool_atom()?;
                Ok(BoolExpr::Not(Box::new(inner)))
            }
            Tok::LParen => {
                // Could be a parenthesized boolean or the start of an
                // arithmetic comparison; try boolean first.
                let save = self.pos;
                let dsave = self.diagnostics.len();
                self.bump();
                if let Ok(inner) = self.parse_bool() {
                    if *self.peek() == Tok::RParen {
                        self.bump();
                        return Ok(inner);
                    }
                }
                self.pos = save;
                self.diagnostics.truncate(dsave);
                self.parse_cmp()
            }
            _ => self.parse_cmp(),
        }
    }

    fn parse_cmp(&mut self) -> PResult<BoolExpr> {
        let lhs = self.parse_arith()?;
        let op = match self.peek() {
            Tok::Eq => CmpOp::Eq,
            Tok::Le => CmpOp::Le,
            Tok::Ge => CmpOp::Ge,
            other => {
                let found = other.describe();
                return self.error(format!(
                    "expected a comparison (`=`, `<=`, `>=`), found {found}"
                ));
            }
        };
        self.bump();
        let rhs = self.parse_arith()?;
        match fold_const(&rhs) {
            Some(c) => Ok(BoolExpr::Cmp(lhs, op, c)),
            None => self.error("comparison right-hand side must be a constant".into()),
        }
    }

    fn parse_arith(&mut self) -> PResult<ArithExpr> {
        let mut acc = self.parse_arith_term()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => return Ok(acc),
            };
            self.bump();
            let rhs = self.parse_arith_term()?;
            acc = ArithExpr::Bin(op, Box::new(acc), Box::new(rhs));
        }
    }

    fn parse_arith_term(&mut self) -> PResult<ArithExpr> {
        let mut acc = self.parse_arith_factor()?;
        loop {
            let op = match self.peek() {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                _ => return Ok(acc),
            };
            self.bump();
            let rhs = self.parse_arith_factor()?;
            acc = ArithExpr::Bin(op, Box::new(acc), Box::new(rhs));
        }
    }

    fn parse_arith_factor(&mut self) -> PResult<ArithExpr> {
        match self.peek().clone() {
            Tok::Minus => {
                self.bump();
                let inner = self.parse_arith_factor()?;
                Ok(ArithExpr::Neg(Box::new(inner)))
            }
            Tok::Int(_) | Tok::Dec(_) => Ok(ArithExpr::Const(self.number()?)),
            Tok::LParen => {
                self.bump();
                let inner = self.parse_arith()?;
                self.expect(Tok::RParen)?;
                Ok(inner)
            }
            Tok::At => {
                self.bump();
                let l = self.parse_locref()?;
                Ok(ArithExpr::TotalAt(l))
            }
            Tok::Ident(name) => {
                self.bump();
                self.expect(Tok::At)?;
                let l = self.parse_locref()?;
                if let Some(i) = self.pre.species.iter().position(|(s, _)| *s == name) {
                    Ok(ArithExpr::CountAt(SpeciesId(i as u32), l))
                } else if let Some(i) = self.pre.attributes.iter().position(|a| *a == name) {
                    Ok(ArithExpr::AttrAt(AttrId(i as u32), l))
                } else {
                    self.error(format!("`{name}` is neither a species nor an attribute"))
                }
            }
            other => {
                let found = other.describe();
                self.error(format!("expected an arithmetic expression, found {found}"))
            }
        }
    }

    fn parse_locref(&mut self) -> PResult<LocRef> {
        if self.at_kw("myloc") {
            self.bump();
            Ok(LocRef::MyLoc)
        } else {
            let l = self.ident("location")?;
            Ok(LocRef::Loc(self.loc_id(&l)?))
        }
    }
}

fn decimal_to_rational(s: &str) -> BigRational {
    let (int_part, frac_part) = s.split_once('.').unwrap_or((s, ""));
    let digits: String = format!("{int_part}{frac_part}");
    let num: BigInt = digits.parse().unwrap();
    let den = BigInt::from(10u32).pow(frac_part.len() as u32);
    BigRational::new(num, den)
}

fn fold_const(w: &ArithExpr) -> Option<BigRational> {
    match w {
        ArithExpr::Const(c) => Some(c.clone()),
        ArithExpr::Neg(inner) => fold_const(inner).map(|v| -v),
        ArithExpr::Bin(op, a, b) => {
            let x = fold_const(a)?;
            let y = fold_const(b)?;
            match op {
                BinOp::Add => Some(x + y),
                BinOp::Sub => Some(x - y),
                BinOp::Mul => Some(x * y),
                BinOp::Div => {
                    if y == BigRational::from_integer(0.into()) {
                        None
                    } else {
                        Some(x / y)
                    }
                }
            }
        }
        _ => None,
    }
}

pub(crate) fn tokenize_str(text: &str) -> Result<Vec<(Tok, SourceSpan)>, SyntaxError> {
    Lexer::new(text).tokenize()
}

/// A parser over pre-tokenized input whose name tables come from an
/// existing model; the query grammar uses this to parse predicates.
pub(crate) fn expr_parser_for_model(model: &Model, toks: Vec<(Tok, SourceSpan)>) -> Parser {
    let pre = Prescan {
        locations: model.habitat.names.clone(),
        attributes: model.attributes.names.clone(),
        species: model
            .species
            .iter()
            .map(|s| {
                (
                    s.name.clone(),
                    s.consts.iter().map(|(n, _)| n.clone()).collect(),
                )
            })
            .collect(),
    };
    Parser {
        toks,
        pos: 0,
        diagnostics: Vec::new(),
        pre,
        channels: model.channels.clone(),
        habitat: None,
        attributes: AttributeTable::default(),
        species: Vec::new(),
        system: None,
        policy: Vec::new(),
    }
}

/// Parses a model file. On failure returns every diagnostic collected.
pub fn parse_model(text: &str) -> Result<Model, SyntaxError> {
    let toks = Lexer::new(text).tokenize()?;
    let pre = prescan(&toks);
    let mut parser = Parser {
        toks,
        pos: 0,
        diagnostics: Vec::new(),
        pre,
        channels: Vec::new(),
        habitat: None,
        attributes: AttributeTable::default(),
        species: Vec::new(),
        system: None,
        policy: Vec::new(),
    };
    parser.attributes.names = parser.pre.attributes.clone();
    parser.parse_file();
    if !parser.diagnostics.is_empty() {
        return Err(SyntaxError {
            diagnostics: parser.diagnostics,
        });
    }
    let habitat = match parser.habitat.take() {
        Some(h) => h,
        None => {
            return Err(SyntaxError {
                diagnostics: vec![Diagnostic {
                    span: SourceSpan {
                        begin: 0,
                        end: 0,
                        line: 1,
                        column: 1,
                    },
                    message: "model has no habitat block".into(),
                }],
            })
        }
    };
    // Species parsed out of order leave no gaps because prescan fixed the
    // slot count; a species block that never appeared is an error.
    for (i, (name, _)) in parser.pre.species.iter().enumerate() {
        if parser.species.get(i).map_or(true, |s| s.name.is_empty()) {
            return Err(SyntaxError {
                diagnostics: vec![Diagnostic {
                    span: SourceSpan {
                        begin: 0,
                        end: 0,
                        line: 1,
                        column: 1,
                    },
                    message: format!("species `{name}` has no definition block"),
                }],
            });
        }
    }
    let mut model = Model {
        habitat,
        channels: parser.channels,
        attributes: parser.attributes,
        species: parser.species,
        system: parser.system.unwrap_or(SystemTerm::Empty),
        policy_patterns: parser.policy,
    };
    normalize_channels(&mut model);
    Ok(model)
}

/// Renumbers channels into name order so that interning is independent of
/// the order channels happen to occur in the source.
fn normalize_channels(model: &mut Model) {
    let mut order: Vec<usize> = (0..model.channels.len()).collect();
    order.sort_by(|a, b| model.channels[*a].cmp(&model.channels[*b]));
    let mut remap = vec![0u32; model.channels.len()];
    for (new, old) in order.iter().enumerate() {
        remap[*old] = new as u32;
    }
    let remap_chan = |c: ChanId| ChanId(remap[c.idx()]);
    model.channels = {
        let mut names = model.channels.clone();
        names.sort();
        names
    };
    for sp in &mut model.species {
        sp.rep_channel = remap_chan(sp.rep_channel);
        for (_, body) in &mut sp.consts {
            remap_term(body, &remap_chan);
        }
    }
    remap_system(&mut model.system, &remap_chan);
    for (lo, hi) in &mut model.policy_patterns {
        for pat in [lo, hi] {
            pat.kind = match pat.kind {
                PatternKind::In(c) => PatternKind::In(remap_chan(c)),
                PatternKind::Out(c) => PatternKind::Out(remap_chan(c)),
                PatternKind::TauChan(c) => PatternKind::TauChan(remap_chan(c)),
                k => k,
            };
        }
    }
}

fn remap_term(term: &mut ProcessTerm, remap: &impl Fn(ChanId) -> ChanId) {
    match term {
        ProcessTerm::Nil | ProcessTerm::ConstRef(_) => {}
        ProcessTerm::NSum(branches) => {
            for (p, cont) in branches {
                remap_prefix(p, remap);
                remap_term(cont, remap);
            }
        }
        ProcessTerm::PSum(branches) => {
            for (_, cont) in branches {
                remap_term(cont, remap);
            }
        }
        ProcessTerm::Cond(branches) => {
            for (_, cont) in branches {
                remap_term(cont, remap);
            }
        }
        ProcessTerm::Disperse { cont, extra } => {
            remap_term(cont, remap);
            for (p, econt) in extra {
                remap_prefix(p, remap);
                remap_term(econt, remap);
            }
        }
    }
}

fn remap_prefix(p: &mut Prefix, remap: &impl Fn(ChanId) -> ChanId) {
    match p {
        Prefix::In(c) => *c = remap(*c),
        Prefix::Out(c) => *c = remap(*c),
        Prefix::Go(_) | Prefix::Tick => {}
    }
}

fn remap_system(t: &mut SystemTerm, remap: &impl Fn(ChanId) -> ChanId) {
    match t {
        SystemTerm::Empty | SystemTerm::SpeciesProc(_) => {}
        SystemTerm::Located { term, .. } => remap_term(term, remap),
        SystemTerm::Parallel(parts) => {
            for p in parts {
                remap_system(p, remap);
            }
        }
        SystemTerm::Restrict(inner, set) => {
            *set = set.iter().map(|c| remap(*c)).collect();
            remap_system(inner, remap);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_model_parses() {
        let src = r#"
habitat { locations: l1; }
species s {
  bound 0 via rep;
  process P0 = tick.P0;
  init P0;
}
system { 1 of s.P0 at l1; }
"#;
        let m = parse_model(src).unwrap();
        assert_eq!(m.habitat.num_locations(), 1);
        assert_eq!(m.species.len(), 1);
        match &m.system {
            SystemTerm::Parallel(parts) => {
                assert!(matches!(
                    parts[0],
                    SystemTerm::Located {
                        count: 1,
                        loc: LocId(0),
                        ..
                    }
                ));
            }
            other => panic!("unexpected system {other:?}"),
        }
    }

    #[test]
    fn syntax_error_carries_span() {
        let src = "habitat { locations l1; }";
        let err = parse_model(src).unwrap_err();
        assert!(!err.diagnostics.is_empty());
        assert_eq!(err.diagnostics[0].span.line, 1);
        assert!(err.diagnostics[0].message.contains("expected `:`"));
    }

    #[test]
    fn crlf_and_comments_are_accepted() {
        let src = "habitat { locations: l1; } # trailing\r\nspecies s { bound 0 via rep;\r\n process P = tick.P; init P; }\r\nsystem { 1 of s.P at l1; }\r\n";
        assert!(parse_model(src).is_ok());
    }

    #[test]
    fn psum_and_nsum_parse_with_expected_shape() {
        let src = r#"
habitat { locations: l1, l2; neighbors: (l1,l2); }
species s {
  bound 1 via rep;
  process P = a?.P1 + b!.P2;
  process P1 = 1/4: tick.P (+) 0.75: go l2 . tick.P;
  process P2 = disperse uniform nb(myloc) then tick.P plus c?.0;
  init P;
}
system { 1 of s.P at l1; restrict { rep } }
"#;
        let m = parse_model(src).unwrap();
        let sp = &m.species[0];
        match sp.const_body(0) {
            ProcessTerm::NSum(b) => assert_eq!(b.len(), 2),
            other => panic!("expected nsum, got {other:?}"),
        }
        match sp.const_body(1) {
            ProcessTerm::PSum(b) => {
                assert_eq!(b.len(), 2);
                assert_eq!(b[0].0, BigRational::new(1.into(), 4.into()));
                assert_eq!(b[1].0, BigRational::new(3.into(), 4.into()));
            }
            other => panic!("expected psum, got {other:?}"),
        }
        match sp.const_body(2) {
            ProcessTerm::Disperse { extra, .. } => assert_eq!(extra.len(), 1),
            other => panic!("expected disperse, got {other:?}"),
        }
        // channels are name-sorted: a, b, c, rep
        assert_eq!(m.channels, vec!["a", "b", "c", "rep"]);
    }

    #[test]
    fn arbitrary_bytes_do_not_panic() {
        for junk in [
            "",
            "}{",
            "habitat",
            "species s {",
            "habitat { locations: }",
            "\u{0}\u{1}\u{fe}",
            "system { 1 of s.P at l1; }",
            "policy { in(a,*,*) < }",
        ] {
            let _ = parse_model(junk);
        }
    }
}
