//! Target-set predicates over species counts, e.g. `F >= 0.2*N and F < 0.6*N`
//! or `R/N >= 1/10`.
//!
//! Grammar (keywords are case-sensitive; `&&`, `||`, `!` are accepted too):
//!
//! ```text
//! expr  := conj ("or" conj)*
//! conj  := unary ("and" unary)*
//! unary := "not" unary | "(" expr ")" | cmp
//! cmp   := sum (">=" | ">" | "<=" | "<" | "==" | "!=") sum
//! sum   := prod (("+" | "-") prod)*
//! prod  := atom (("*" | "/") atom)*
//! atom  := number | name | "-" atom | "(" sum ")"
//! ```
//!
//! Names are species; `N` is the system size (cap). Arithmetic is `f64`.

use crate::ctmc::LabeledCtmc;
use crate::error::{GfaError, Result};

/// Reserved name for the system size.
pub const SIZE_NAME: &str = "N";

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Name(String),
    Op(&'static str),
    LParen,
    RParen,
}

#[derive(Debug, Clone, PartialEq)]
enum Num {
    Const(f64),
    Var(String),
    Neg(Box<Num>),
    Bin(char, Box<Num>, Box<Num>),
}

#[derive(Debug, Clone, PartialEq)]
enum Cond {
    Cmp(&'static str, Num, Num),
    Not(Box<Cond>),
    And(Box<Cond>, Box<Cond>),
    Or(Box<Cond>, Box<Cond>),
}

/// A parsed boolean predicate over species counts.
#[derive(Debug, Clone, PartialEq)]
pub struct Predicate {
    source: String,
    root: Cond,
}

fn tokenize(s: &str) -> Result<Vec<Tok>> {
    let b = s.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < b.len() {
        let c = b[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < b.len() && ((b[i] as char).is_ascii_digit() || b[i] == b'.') {
                i += 1;
            }
            if i < b.len() && (b[i] == b'e' || b[i] == b'E') {
                i += 1;
                if i < b.len() && (b[i] == b'+' || b[i] == b'-') {
                    i += 1;
                }
                while i < b.len() && (b[i] as char).is_ascii_digit() {
                    i += 1;
                }
            }
            let lit = &s[start..i];
            out.push(Tok::Num(
                lit.parse().map_err(|_| GfaError::Parse(format!("bad number `{lit}`")))?,
            ));
        } else if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < b.len() && ((b[i] as char).is_alphanumeric() || b[i] == b'_') {
                i += 1;
            }
            out.push(match &s[start..i] {
                "and" => Tok::Op("and"),
                "or" => Tok::Op("or"),
                "not" => Tok::Op("not"),
                name => Tok::Name(name.to_string()),
            });
        } else {
            let two = s.get(i..i + 2).unwrap_or("");
            let op = match two {
                ">=" | "<=" | "==" | "!=" | "&&" | "||" => {
                    i += 2;
                    match two {
                        ">=" => ">=",
                        "<=" => "<=",
                        "==" => "==",
                        "!=" => "!=",
                        "&&" => "and",
                        _ => "or",
                    }
                }
                _ => {
                    i += 1;
                    match c {
                        '>' => ">",
                        '<' => "<",
                        '+' => "+",
                        '-' => "-",
                        '*' => "*",
                        '/' => "/",
                        '!' => "not",
                        '(' => {
                            out.push(Tok::LParen);
                            continue;
                        }
                        ')' => {
                            out.push(Tok::RParen);
                            continue;
                        }
                        other => return Err(GfaError::Parse(format!("unexpected character `{other}` in predicate"))),
                    }
                }
            };
            out.push(Tok::Op(op));
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<Tok>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn eat_op(&mut self, op: &str) -> bool {
        if matches!(self.peek(), Some(Tok::Op(o)) if *o == op) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn err<T>(&self, what: &str) -> Result<T> {
        Err(GfaError::Parse(format!("{what} at token {} ({:?})", self.pos, self.peek())))
    }

    fn expr(&mut self) -> Result<Cond> {
        let mut lhs = self.conj()?;
        while self.eat_op("or") {
            lhs = Cond::Or(Box::new(lhs), Box::new(self.conj()?));
        }
        Ok(lhs)
    }

    fn conj(&mut self) -> Result<Cond> {
        let mut lhs = self.unary()?;
        while self.eat_op("and") {
            lhs = Cond::And(Box::new(lhs), Box::new(self.unary()?));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Cond> {
        if self.eat_op("not") {
            return Ok(Cond::Not(Box::new(self.unary()?)));
        }
        if self.peek() == Some(&Tok::LParen) {
            // Either a parenthesised condition or the start of an arithmetic
            // comparison such as `(R + S) / N > 0.5`; try the former first.
            let save = self.pos;
            self.pos += 1;
            if let Ok(c) = self.expr() {
                if self.peek() == Some(&Tok::RParen) {
                    self.pos += 1;
                    return Ok(c);
                }
            }
            self.pos = save;
        }
        self.cmp()
    }

    fn cmp(&mut self) -> Result<Cond> {
        let lhs = self.sum()?;
        for op in [">=", ">", "<=", "<", "==", "!="] {
            if self.eat_op(op) {
                return Ok(Cond::Cmp(op, lhs, self.sum()?));
            }
        }
        self.err("expected a comparison operator")
    }

    fn sum(&mut self) -> Result<Num> {
        let mut lhs = self.prod()?;
        loop {
            let op = if self.eat_op("+") {
                '+'
            } else if self.eat_op("-") {
                '-'
            } else {
                return Ok(lhs);
            };
            lhs = Num::Bin(op, Box::new(lhs), Box::new(self.prod()?));
        }
    }

    fn prod(&mut self) -> Result<Num> {
        let mut lhs = self.atom()?;
        loop {
            let op = if self.eat_op("*") {
                '*'
            } else if self.eat_op("/") {
                '/'
            } else {
                return Ok(lhs);
            };
            lhs = Num::Bin(op, Box::new(lhs), Box::new(self.atom()?));
        }
    }

    fn atom(&mut self) -> Result<Num> {
        if self.eat_op("-") {
            return Ok(Num::Neg(Box::new(self.atom()?)));
        }
        match self.peek().cloned() {
            Some(Tok::Num(v)) => {
                self.pos += 1;
                Ok(Num::Const(v))
            }
            Some(Tok::Name(n)) => {
                self.pos += 1;
                Ok(Num::Var(n))
            }
            Some(Tok::LParen) => {
                self.pos += 1;
                let inner = self.sum()?;
                if self.peek() != Some(&Tok::RParen) {
                    return self.err("expected `)`");
                }
                self.pos += 1;
                Ok(inner)
            }
            _ => self.err("expected a number, name or `(`"),
        }
    }
}

fn eval_num(n: &Num, lookup: &dyn Fn(&str) -> f64) -> f64 {
    match n {
        Num::Const(v) => *v,
        Num::Var(name) => lookup(name),
        Num::Neg(a) => -eval_num(a, lookup),
        Num::Bin(op, a, b) => {
            let (x, y) = (eval_num(a, lookup), eval_num(b, lookup));
            match op {
                '+' => x + y,
                '-' => x - y,
                '*' => x * y,
                _ => x / y,
            }
        }
    }
}

fn eval_cond(c: &Cond, lookup: &dyn Fn(&str) -> f64) -> bool {
    match c {
        Cond::Cmp(op, a, b) => {
            let (x, y) = (eval_num(a, lookup), eval_num(b, lookup));
            match *op {
                ">=" => x >= y,
                ">" => x > y,
                "<=" => x <= y,
                "<" => x < y,
                "==" => x == y,
                _ => x != y,
            }
        }
        Cond::Not(a) => !eval_cond(a, lookup),
        Cond::And(a, b) => eval_cond(a, lookup) && eval_cond(b, lookup),
        Cond::Or(a, b) => eval_cond(a, lookup) || eval_cond(b, lookup),
    }
}

fn names(c: &Cond, out: &mut Vec<String>) {
    fn num(n: &Num, out: &mut Vec<String>) {
        match n {
            Num::Const(_) => {}
            Num::Var(v) => out.push(v.clone()),
            Num::Neg(a) => num(a, out),
            Num::Bin(_, a, b) => {
                num(a, out);
                num(b, out);
            }
        }
    }
    match c {
        Cond::Cmp(_, a, b) => {
            num(a, out);
            num(b, out);
        }
        Cond::Not(a) => names(a, out),
        Cond::And(a, b) | Cond::Or(a, b) => {
            names(a, out);
            names(b, out);
        }
    }
}

impl Predicate {
    pub fn parse(source: &str) -> Result<Self> {
        let mut p = Parser {
            toks: tokenize(source)?,
            pos: 0,
        };
        if p.toks.is_empty() {
            return Err(GfaError::Parse("empty predicate".into()));
        }
        let root = p.expr()?;
        if p.pos != p.toks.len() {
            return p.err("trailing input in predicate");
        }
        Ok(Predicate {
            source: source.to_string(),
            root,
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Checks that every name is a species or `N`.
    pub fn check_names(&self, species: &[String]) -> Result<()> {
        if species.iter().any(|s| s == SIZE_NAME) {
            return Err(GfaError::invalid(format!("species may not be named `{SIZE_NAME}`")));
        }
        let mut used = Vec::new();
        names(&self.root, &mut used);
        for n in used {
            if n != SIZE_NAME && !species.contains(&n) {
                return Err(GfaError::invalid(format!("predicate uses unknown name `{n}`")));
            }
        }
        Ok(())
    }

    /// Evaluates with continuous species amounts `counts` (in species order)
    /// and system size `n`. Names must have been checked.
    pub fn eval(&self, species: &[String], counts: &[f64], n: f64) -> bool {
        let lookup = |name: &str| -> f64 {
            if name == SIZE_NAME {
                n
            } else {
                species
                    .iter()
                    .position(|s| s == name)
                    .map_or(f64::NAN, |k| counts[k])
            }
        };
        eval_cond(&self.root, &lookup)
    }
}

/// Target mask over the states of a labelled chain.
pub fn target_mask(ctmc: &LabeledCtmc, pred: &Predicate) -> Result<Vec<bool>> {
    pred.check_names(&ctmc.species)?;
    let n = f64::from(ctmc.cap);
    Ok(ctmc
        .labels
        .iter()
        .map(|l| {
            let counts: Vec<f64> = l.coords.iter().map(|&c| f64::from(c)).collect();
            pred.eval(&ctmc.species, &counts, n)
        })
        .collect())
}
