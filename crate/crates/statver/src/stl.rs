//! A small signal-temporal-logic fragment with quantitative semantics.
//!
//! The fragment covers exactly what the benchmark requirements need: atomic
//! predicates `expr >= 0` over named trajectory channels, boolean connectives
//! `and`/`or`/`not`, and the two bounded temporal operators `G[a,b]`
//! (globally/always) and `F[a,b]` (eventually). Nesting a temporal operator
//! inside another temporal operator's argument is rejected — the evaluator
//! stays simple enough to verify against a brute-force scan.
//!
//! Concrete syntax, most loosely binding first:
//!
//! ```text
//! formula := formula 'or' formula
//!          | formula 'and' formula
//!          | 'not' formula
//!          | 'G' '[' num ',' num ']' '(' formula ')'
//!          | 'F' '[' num ',' num ']' '(' formula ')'
//!          | '(' formula ')'
//!          | expr '>=' '0'
//! expr    := expr ('+'|'-') expr | expr '*' expr | '-' expr
//!          | 'abs' '(' expr ')' | number | channel | '(' expr ')'
//! ```
//!
//! The robustness degree ρ is the standard quantitative semantics evaluated
//! **only at the trajectory's sample instants** (no interpolation between
//! samples — simulated trajectories come with no interpolation rule):
//!
//! ```text
//! ρ(expr >= 0)  = value of expr          ρ(not φ)   = −ρ(φ)
//! ρ(φ and ψ)    = min(ρ(φ), ρ(ψ))        ρ(φ or ψ)  = max(ρ(φ), ρ(ψ))
//! ρ(G[a,b] φ)   = min over samples with t ∈ [a,b] of ρ(φ at t)
//! ρ(F[a,b] φ)   = max over samples with t ∈ [a,b] of ρ(φ at t)
//! ```
//!
//! Positive robustness means the requirement is satisfied, with |ρ| the
//! margin. Window membership is closed with a 1e−9 tolerance on both
//! endpoints so accumulated step arithmetic (e.g. 800 × 0.05 s) cannot drop
//! the final sample of an integer horizon. Non-temporal formulas (and the
//! non-temporal part of a root-level boolean combination) are evaluated at
//! the first sample.
//!
//! Derived channels such as an initial-value hold (`x0`) are materialized by
//! the trajectory producer; the evaluator is purely syntactic about names.

use crate::{Error, Result};

/// Tolerance for closed-window membership at the endpoints.
const WINDOW_TOL: f64 = 1e-9;

/// A discretely sampled multi-channel trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    times: Vec<f64>,
    channels: Vec<(String, Vec<f64>)>,
}

impl Trajectory {
    /// Validates that times are strictly increasing, non-empty, and that all
    /// channels align with them.
    pub fn new(times: Vec<f64>, channels: Vec<(String, Vec<f64>)>) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::InvalidArgument(
                "trajectory must contain at least one sample".into(),
            ));
        }
        if times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidArgument(
                "trajectory times must be strictly increasing".into(),
            ));
        }
        for (name, values) in &channels {
            if values.len() != times.len() {
                return Err(Error::DimensionMismatch {
                    context: "trajectory channel length vs times",
                    expected: times.len(),
                    got: values.len(),
                });
            }
            if name.is_empty() {
                return Err(Error::InvalidArgument("channel name must be non-empty".into()));
            }
        }
        Ok(Trajectory { times, channels })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn channel(&self, name: &str) -> Option<&[f64]> {
        self.channels
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
    }
}

/// Arithmetic over channel values at one sample instant.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Channel(String),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Neg(Box<Expr>),
    Abs(Box<Expr>),
}

/// Abstract syntax of the supported fragment.
#[derive(Debug, Clone, PartialEq)]
pub enum StlFormula {
    /// `expr >= 0`.
    Atom(Expr),
    Not(Box<StlFormula>),
    And(Box<StlFormula>, Box<StlFormula>),
    Or(Box<StlFormula>, Box<StlFormula>),
    /// `G[lo,hi] φ` — φ must hold at every sample in the window.
    Globally {
        lo: f64,
        hi: f64,
        child: Box<StlFormula>,
    },
    /// `F[lo,hi] φ` — φ must hold at some sample in the window.
    Eventually {
        lo: f64,
        hi: f64,
        child: Box<StlFormula>,
    },
}

impl StlFormula {
    fn contains_temporal(&self) -> bool {
        match self {
            StlFormula::Atom(_) => false,
            StlFormula::Not(f) => f.contains_temporal(),
            StlFormula::And(a, b) | StlFormula::Or(a, b) => {
                a.contains_temporal() || b.contains_temporal()
            }
            StlFormula::Globally { .. } | StlFormula::Eventually { .. } => true,
        }
    }

    /// Channel names the formula references.
    pub fn channels(&self) -> Vec<String> {
        let mut out = Vec::new();
        fn walk_expr(e: &Expr, out: &mut Vec<String>) {
            match e {
                Expr::Const(_) => {}
                Expr::Channel(c) => {
                    if !out.iter().any(|x| x == c) {
                        out.push(c.clone());
                    }
                }
                Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) => {
                    walk_expr(a, out);
                    walk_expr(b, out);
                }
                Expr::Neg(a) | Expr::Abs(a) => walk_expr(a, out),
            }
        }
        fn walk(f: &StlFormula, out: &mut Vec<String>) {
            match f {
                StlFormula::Atom(e) => walk_expr(e, out),
                StlFormula::Not(a) => walk(a, out),
                StlFormula::And(a, b) | StlFormula::Or(a, b) => {
                    walk(a, out);
                    walk(b, out);
                }
                StlFormula::Globally { child, .. } | StlFormula::Eventually { child, .. } => {
                    walk(child, out)
                }
            }
        }
        walk(self, &mut out);
        out
    }
}

// ---------------------------------------------------------------------------
// Lexer
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Number(f64),
    Plus,
    Minus,
    Star,
    Ge,
    LParen,
    RParen,
    LBracket,
    RBracket,
    Comma,
}

#[derive(Debug, Clone)]
struct Lexed {
    tok: Tok,
    pos: usize,
}

fn lex(text: &str) -> Result<Vec<Lexed>> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        let pos = i;
        match c {
            ' ' | '\t' | '\n' | '\r' => {
                i += 1;
            }
            '+' => {
                out.push(Lexed { tok: Tok::Plus, pos });
                i += 1;
            }
            '-' => {
                out.push(Lexed { tok: Tok::Minus, pos });
                i += 1;
            }
            '*' => {
                out.push(Lexed { tok: Tok::Star, pos });
                i += 1;
            }
            '(' => {
                out.push(Lexed { tok: Tok::LParen, pos });
                i += 1;
            }
            ')' => {
                out.push(Lexed { tok: Tok::RParen, pos });
                i += 1;
            }
            '[' => {
                out.push(Lexed { tok: Tok::LBracket, pos });
                i += 1;
            }
            ']' => {
                out.push(Lexed { tok: Tok::RBracket, pos });
                i += 1;
            }
            ',' => {
                out.push(Lexed { tok: Tok::Comma, pos });
                i += 1;
            }
            '>' => {
                if bytes.get(i + 1) == Some(&b'=') {
                    out.push(Lexed { tok: Tok::Ge, pos });
                    i += 2;
                } else {
                    return Err(Error::StlParse {
                        position: pos,
                        message: "expected '>=' (only '>= 0' comparisons are supported)".into(),
                    });
                }
            }
            '0'..='9' | '.' => {
                let start = i;
                while i < bytes.len() && matches!(bytes[i] as char, '0'..='9' | '.') {
                    i += 1;
                }
                // Optional exponent.
                if i < bytes.len() && matches!(bytes[i] as char, 'e' | 'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && matches!(bytes[j] as char, '+' | '-') {
                        j += 1;
                    }
                    if j < bytes.len() && (bytes[j] as char).is_ascii_digit() {
                        i = j;
                        while i < bytes.len() && (bytes[i] as char).is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let s = &text[start..i];
                let v: f64 = s.parse().map_err(|_| Error::StlParse {
                    position: start,
                    message: format!("invalid number '{s}'"),
                })?;
                out.push(Lexed { tok: Tok::Number(v), pos: start });
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < bytes.len()
                    && ((bytes[i] as char).is_ascii_alphanumeric() || bytes[i] == b'_')
                {
                    i += 1;
                }
                out.push(Lexed {
                    tok: Tok::Ident(text[start..i].to_string()),
                    pos: start,
                });
            }
            other => {
                return Err(Error::StlParse {
                    position: pos,
                    message: format!("unexpected character '{other}'"),
                });
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Parser (recursive descent with backtracking at '(')
// ---------------------------------------------------------------------------

struct Parser<'a> {
    toks: &'a [Lexed],
    idx: usize,
    text_len: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.idx).map(|l| &l.tok)
    }

    fn pos(&self) -> usize {
        self.toks.get(self.idx).map_or(self.text_len, |l| l.pos)
    }

    fn bump(&mut self) -> Option<&Tok> {
        let t = self.toks.get(self.idx).map(|l| &l.tok);
        if t.is_some() {
            self.idx += 1;
        }
        t
    }

    fn err(&self, message: impl Into<String>) -> Error {
        Error::StlParse {
            position: self.pos(),
            message: message.into(),
        }
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<()> {
        if self.peek() == Some(&tok) {
            self.idx += 1;
            Ok(())
        } else {
            Err(self.err(format!("expected {what}")))
        }
    }

    fn formula_or(&mut self) -> Result<StlFormula> {
        let mut lhs = self.formula_and()?;
        while matches!(self.peek(), Some(Tok::Ident(s)) if s == "or") {
            self.idx += 1;
            let rhs = self.formula_and()?;
            lhs = StlFormula::Or(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn formula_and(&mut self) -> Result<StlFormula> {
        let mut lhs = self.formula_not()?;
        while matches!(self.peek(), Some(Tok::Ident(s)) if s == "and") {
            self.idx += 1;
            let rhs = self.formula_not()?;
            lhs = StlFormula::And(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn formula_not(&mut self) -> Result<StlFormula> {
        if matches!(self.peek(), Some(Tok::Ident(s)) if s == "not") {
            self.idx += 1;
            let inner = self.formula_not()?;
            return Ok(StlFormula::Not(Box::new(inner)));
        }
        self.formula_primary()
    }

    fn formula_primary(&mut self) -> Result<StlFormula> {
        match self.peek() {
            Some(Tok::Ident(s)) if s == "G" || s == "F" => self.temporal(),
            Some(Tok::LParen) => {
                // '(' may open a grouped formula or an atom's expression.
                // Try the formula reading first and fall back on failure or
                // when the suffix continues an arithmetic expression.
                let save = self.idx;
                self.idx += 1;
                if let Ok(f) = self.formula_or() {
                    if self.peek() == Some(&Tok::RParen) {
                        let after = self.toks.get(self.idx + 1).map(|l| &l.tok);
                        let continues_expr = matches!(
                            after,
                            Some(Tok::Plus | Tok::Minus | Tok::Star | Tok::Ge)
                        );
                        if !continues_expr {
                            self.idx += 1;
                            return Ok(f);
                        }
                    }
                }
                self.idx = save;
                self.atom()
            }
            _ => self.atom(),
        }
    }

    fn temporal(&mut self) -> Result<StlFormula> {
        let op = match self.bump() {
            Some(Tok::Ident(s)) => s.clone(),
            _ => unreachable!("caller checked the operator token"),
        };
        self.expect(Tok::LBracket, "'[' after temporal operator")?;
        let lo_pos = self.pos();
        let lo = self.number()?;
        self.expect(Tok::Comma, "',' between window bounds")?;
        let hi = self.number()?;
        self.expect(Tok::RBracket, "']' after window bounds")?;
        if !(lo.is_finite() && hi.is_finite()) || lo < 0.0 || lo > hi {
            return Err(Error::StlParse {
                position: lo_pos,
                message: format!("invalid window [{lo}, {hi}]: need 0 <= a <= b"),
            });
        }
        self.expect(Tok::LParen, "'(' after temporal window")?;
        let child_pos = self.pos();
        let child = self.formula_or()?;
        self.expect(Tok::RParen, "')' closing temporal operator")?;
        if child.contains_temporal() {
            return Err(Error::StlParse {
                position: child_pos,
                message: "nested temporal operators are not supported".into(),
            });
        }
        let child = Box::new(child);
        Ok(if op == "G" {
            StlFormula::Globally { lo, hi, child }
        } else {
            StlFormula::Eventually { lo, hi, child }
        })
    }

    fn number(&mut self) -> Result<f64> {
        match self.peek() {
            Some(Tok::Number(v)) => {
                let v = *v;
                self.idx += 1;
                Ok(v)
            }
            _ => Err(self.err("expected a number")),
        }
    }

    fn atom(&mut self) -> Result<StlFormula> {
        let lhs = self.expr()?;
        self.expect(Tok::Ge, "'>=' in atomic predicate")?;
        let zero_pos = self.pos();
        let rhs = self.number()?;
        if rhs != 0.0 {
            return Err(Error::StlParse {
                position: zero_pos,
                message: format!("atomic predicates compare against 0, got {rhs}"),
            });
        }
        Ok(StlFormula::Atom(lhs))
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(Tok::Plus) => {
                    self.idx += 1;
                    let rhs = self.term()?;
                    lhs = Expr::Add(Box::new(lhs), Box::new(rhs));
                }
                Some(Tok::Minus) => {
                    self.idx += 1;
                    let rhs = self.term()?;
                    lhs = Expr::Sub(Box::new(lhs), Box::new(rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        while self.peek() == Some(&Tok::Star) {
            self.idx += 1;
            let rhs = self.unary()?;
            lhs = Expr::Mul(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.peek() == Some(&Tok::Minus) {
            self.idx += 1;
            let inner = self.unary()?;
            return Ok(Expr::Neg(Box::new(inner)));
        }
        self.primary_expr()
    }

    fn primary_expr(&mut self) -> Result<Expr> {
        match self.peek().cloned() {
            Some(Tok::Number(v)) => {
                self.idx += 1;
                Ok(Expr::Const(v))
            }
            Some(Tok::LParen) => {
                self.idx += 1;
                let e = self.expr()?;
                self.expect(Tok::RParen, "')' closing expression")?;
                Ok(e)
            }
            Some(Tok::Ident(name)) => {
                if name == "abs" {
                    self.idx += 1;
                    self.expect(Tok::LParen, "'(' after abs")?;
                    let e = self.expr()?;
                    self.expect(Tok::RParen, "')' closing abs")?;
                    return Ok(Expr::Abs(Box::new(e)));
                }
                if matches!(name.as_str(), "and" | "or" | "not" | "G" | "F") {
                    return Err(self.err(format!("'{name}' cannot be used as a channel name")));
                }
                self.idx += 1;
                Ok(Expr::Channel(name))
            }
            _ => Err(self.err("expected a number, channel, 'abs(', or '('")),
        }
    }
}

/// Parse specification text into a formula.
pub fn parse(spec_text: &str) -> Result<StlFormula> {
    let toks = lex(spec_text)?;
    let mut p = Parser {
        toks: &toks,
        idx: 0,
        text_len: spec_text.len(),
    };
    let f = p.formula_or()?;
    if p.idx != toks.len() {
        return Err(Error::StlParse {
            position: p.pos(),
            message: "unexpected trailing input".into(),
        });
    }
    Ok(f)
}

// ---------------------------------------------------------------------------
// Quantitative semantics
// ---------------------------------------------------------------------------

fn eval_expr(e: &Expr, traj: &Trajectory, idx: usize) -> Result<f64> {
    Ok(match e {
        Expr::Const(v) => *v,
        Expr::Channel(name) => {
            let ch = traj
                .channel(name)
                .ok_or_else(|| Error::UnknownChannel(name.clone()))?;
            ch[idx]
        }
        Expr::Add(a, b) => eval_expr(a, traj, idx)? + eval_expr(b, traj, idx)?,
        Expr::Sub(a, b) => eval_expr(a, traj, idx)? - eval_expr(b, traj, idx)?,
        Expr::Mul(a, b) => eval_expr(a, traj, idx)? * eval_expr(b, traj, idx)?,
        Expr::Neg(a) => -eval_expr(a, traj, idx)?,
        Expr::Abs(a) => eval_expr(a, traj, idx)?.abs(),
    })
}

fn eval_formula(f: &StlFormula, traj: &Trajectory, idx: usize) -> Result<f64> {
    Ok(match f {
        StlFormula::Atom(e) => eval_expr(e, traj, idx)?,
        StlFormula::Not(a) => -eval_formula(a, traj, idx)?,
        StlFormula::And(a, b) => {
            eval_formula(a, traj, idx)?.min(eval_formula(b, traj, idx)?)
        }
        StlFormula::Or(a, b) => {
            eval_formula(a, traj, idx)?.max(eval_formula(b, traj, idx)?)
        }
        StlFormula::Globally { lo, hi, child } => {
            window_fold(traj, *lo, *hi, f64::INFINITY, f64::min, child)?
        }
        StlFormula::Eventually { lo, hi, child } => {
            window_fold(traj, *lo, *hi, f64::NEG_INFINITY, f64::max, child)?
        }
    })
}

fn window_fold(
    traj: &Trajectory,
    lo: f64,
    hi: f64,
    init: f64,
    fold: fn(f64, f64) -> f64,
    child: &StlFormula,
) -> Result<f64> {
    let times = traj.times();
    let t_first = times[0];
    let t_last = *times.last().expect("trajectory is non-empty");
    if lo < t_first - WINDOW_TOL || hi > t_last + WINDOW_TOL {
        return Err(Error::WindowOutsideTrajectory {
            lo,
            hi,
            t_first,
            t_last,
        });
    }
    let mut acc = init;
    let mut any = false;
    for (i, &t) in times.iter().enumerate() {
        if t >= lo - WINDOW_TOL && t <= hi + WINDOW_TOL {
            acc = fold(acc, eval_formula(child, traj, i)?);
            any = true;
        }
    }
    if !any {
        return Err(Error::InvalidArgument(format!(
            "window [{lo}, {hi}] contains no trajectory samples"
        )));
    }
    Ok(acc)
}

/// Robustness degree ρ of a formula over a sampled trajectory.
///
/// Positive means the requirement is satisfied, with |ρ| the margin. Any
/// non-temporal part of the root formula is evaluated at the first sample.
pub fn robustness(formula: &StlFormula, traj: &Trajectory) -> Result<f64> {
    // Surface unknown channels up front, independent of window contents.
    for name in formula.channels() {
        if traj.channel(&name).is_none() {
            return Err(Error::UnknownChannel(name));
        }
    }
    eval_formula(formula, traj, 0)
}
