//! S-expression data model: parsing, canonical printing, traversal and
//! structural transformation. Every program, pattern and observation in this
//! crate is an [`SExpr`].

use std::fmt;

use num_rational::Ratio;
use num_traits::ToPrimitive;
use thiserror::Error;

/// The symbol used for lambda forms. `lambda` is accepted on input and
/// canonicalized to this.
pub const LAMBDA: &str = "λ";

/// A numeric atom. Numbers written as `p/q` stay exact rationals; everything
/// else is binary floating point. The two kinds never compare equal, matching
/// `eqv?` on exact/inexact numbers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Num {
    Real(f64),
    Ratio(Ratio<i64>),
}

impl Num {
    /// Exact rational, except that integral values normalize to reals so
    /// every number has one printed form.
    pub fn ratio(numer: i64, denom: i64) -> Num {
        let r = Ratio::new(numer, denom);
        if r.is_integer() {
            Num::Real(r.to_f64().unwrap_or(f64::NAN))
        } else {
            Num::Ratio(r)
        }
    }

    /// Numeric value, for evaluation and scoring (`=`-style comparison).
    pub fn value(&self) -> f64 {
        match self {
            Num::Real(x) => *x,
            Num::Ratio(r) => r.to_f64().unwrap_or(f64::NAN),
        }
    }
}

impl fmt::Display for Num {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Num::Real(x) => write!(f, "{}", x),
            Num::Ratio(r) => write!(f, "{}", r),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum SExpr {
    Sym(String),
    Num(Num),
    List(Vec<SExpr>),
}

impl SExpr {
    pub fn sym(s: impl Into<String>) -> SExpr {
        SExpr::Sym(s.into())
    }

    pub fn real(x: f64) -> SExpr {
        SExpr::Num(Num::Real(x))
    }

    pub fn ratio(numer: i64, denom: i64) -> SExpr {
        SExpr::Num(Num::ratio(numer, denom))
    }

    pub fn list(items: Vec<SExpr>) -> SExpr {
        SExpr::List(items)
    }

    pub fn is_atom(&self) -> bool {
        !matches!(self, SExpr::List(_))
    }

    pub fn as_list(&self) -> Option<&[SExpr]> {
        match self {
            SExpr::List(items) => Some(items),
            _ => None,
        }
    }

    pub fn as_sym(&self) -> Option<&str> {
        match self {
            SExpr::Sym(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_num(&self) -> Option<Num> {
        match self {
            SExpr::Num(n) => Some(*n),
            _ => None,
        }
    }

    /// Head symbol of a list form, if any.
    pub fn head(&self) -> Option<&str> {
        self.as_list().and_then(|items| items.first()).and_then(SExpr::as_sym)
    }

    /// True for a non-empty list whose head is the given symbol.
    pub fn is_call_of(&self, name: &str) -> bool {
        self.head() == Some(name)
    }
}

impl fmt::Display for SExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SExpr::Sym(s) => f.write_str(s),
            SExpr::Num(n) => write!(f, "{}", n),
            SExpr::List(items) => {
                f.write_str("(")?;
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" ")?;
                    }
                    write!(f, "{}", item)?;
                }
                f.write_str(")")
            }
        }
    }
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
#[error("parse error at offset {position}: {message}")]
pub struct ParseError {
    pub position: usize,
    pub message: String,
}

fn err(position: usize, message: impl Into<String>) -> ParseError {
    ParseError { position, message: message.into() }
}

/// Is this token a number? Requires a digit (or `.digit`) after the optional
/// sign so that bare `+`, `-` and names like `-x` stay symbols. Rejects the
/// `inf`/`NaN` spellings that `f64::from_str` would otherwise accept.
fn numeric_token(tok: &str) -> Option<Num> {
    if let Some((p, q)) = tok.split_once('/') {
        if let (Ok(p), Ok(q)) = (p.parse::<i64>(), q.parse::<i64>()) {
            if q > 0 {
                return Some(Num::ratio(p, q));
            }
        }
        return None;
    }
    let body = tok.strip_prefix(['-', '+']).unwrap_or(tok);
    let mut chars = body.chars();
    let leading_digit = match chars.next() {
        Some(c) if c.is_ascii_digit() => true,
        Some('.') => matches!(chars.next(), Some(c) if c.is_ascii_digit()),
        _ => false,
    };
    if !leading_digit || !body.bytes().all(|b| b.is_ascii_digit() || b == b'.' || b == b'e' || b == b'E' || b == b'-' || b == b'+') {
        return None;
    }
    tok.parse::<f64>().ok().map(Num::Real)
}

fn atom(tok: &str) -> SExpr {
    if let Some(n) = numeric_token(tok) {
        SExpr::Num(n)
    } else if tok == "lambda" {
        SExpr::sym(LAMBDA)
    } else {
        SExpr::Sym(tok.to_string())
    }
}

struct Tokens<'a> {
    text: &'a str,
    pos: usize,
}

#[derive(Debug)]
enum Tok<'a> {
    Open(usize),
    Close(usize),
    Atom(&'a str),
}

impl<'a> Tokens<'a> {
    fn new(text: &'a str) -> Self {
        Tokens { text, pos: 0 }
    }

    fn skip_space(&mut self) {
        let bytes = self.text.as_bytes();
        while self.pos < bytes.len() {
            match bytes[self.pos] {
                b';' => {
                    while self.pos < bytes.len() && bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b if b.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn next(&mut self) -> Option<Tok<'a>> {
        self.skip_space();
        let bytes = self.text.as_bytes();
        if self.pos >= bytes.len() {
            return None;
        }
        let start = self.pos;
        match bytes[start] {
            b'(' => {
                self.pos += 1;
                Some(Tok::Open(start))
            }
            b')' => {
                self.pos += 1;
                Some(Tok::Close(start))
            }
            _ => {
                while self.pos < bytes.len()
                    && !bytes[self.pos].is_ascii_whitespace()
                    && bytes[self.pos] != b'('
                    && bytes[self.pos] != b')'
                    && bytes[self.pos] != b';'
                {
                    self.pos += 1;
                }
                Some(Tok::Atom(&self.text[start..self.pos]))
            }
        }
    }
}

fn parse_form(toks: &mut Tokens) -> Result<SExpr, ParseError> {
    match toks.next() {
        None => Err(err(toks.pos, "unexpected end of input")),
        Some(Tok::Close(p)) => Err(err(p, "unbalanced ')'")),
        Some(Tok::Atom(t)) => Ok(atom(t)),
        Some(Tok::Open(open_at)) => {
            let mut items = Vec::new();
            loop {
                let save = toks.pos;
                match toks.next() {
                    None => return Err(err(open_at, "unbalanced '(': missing ')'")),
                    Some(Tok::Close(_)) => return Ok(SExpr::List(items)),
                    Some(_) => {
                        toks.pos = save;
                        items.push(parse_form(toks)?);
                    }
                }
            }
        }
    }
}

/// Parse a single s-expression. Trailing garbage or empty input is an error.
pub fn parse(text: &str) -> Result<SExpr, ParseError> {
    let mut toks = Tokens::new(text);
    let e = parse_form(&mut toks)?;
    toks.skip_space();
    if toks.pos < text.len() {
        return Err(err(toks.pos, "trailing input after expression"));
    }
    Ok(e)
}

/// Parse a sequence of top-level s-expressions (observation and program files).
pub fn parse_many(text: &str) -> Result<Vec<SExpr>, ParseError> {
    let mut toks = Tokens::new(text);
    let mut forms = Vec::new();
    loop {
        toks.skip_space();
        if toks.pos >= text.len() {
            return Ok(forms);
        }
        forms.push(parse_form(&mut toks)?);
    }
}

/// Canonical printed form; `parse(print(e))` is structurally equal to `e`.
pub fn print(e: &SExpr) -> String {
    e.to_string()
}

/// Number of atoms in an expression. Lists contribute only via their
/// elements, so `()` has size 0.
pub fn sexpr_size(e: &SExpr) -> usize {
    match e {
        SExpr::List(items) => items.iter().map(sexpr_size).sum(),
        _ => 1,
    }
}

/// Every list-valued subexpression of `e`, preorder, including `e` itself.
/// Atoms are not emitted; positional duplicates are kept.
pub fn all_subexprs(e: &SExpr) -> Vec<&SExpr> {
    fn walk<'a>(e: &'a SExpr, out: &mut Vec<&'a SExpr>) {
        if let SExpr::List(items) = e {
            out.push(e);
            for item in items {
                walk(item, out);
            }
        }
    }
    let mut out = Vec::new();
    walk(e, &mut out);
    out
}

/// Top-down replacement: where `pred` holds, apply `func` once and do not
/// recurse into the result; otherwise map over list elements.
pub fn transform_sexpr(
    pred: &dyn Fn(&SExpr) -> bool,
    func: &dyn Fn(&SExpr) -> SExpr,
    e: &SExpr,
) -> SExpr {
    if pred(e) {
        func(e)
    } else {
        match e {
            SExpr::List(items) => {
                SExpr::List(items.iter().map(|i| transform_sexpr(pred, func, i)).collect())
            }
            _ => e.clone(),
        }
    }
}

/// Index of a variable symbol `V<n>`, if the name has that shape.
pub fn variable_index(name: &str) -> Option<u64> {
    indexed(name, 'V')
}

/// Index of a function symbol `F<n>`, if the name has that shape.
pub fn function_index(name: &str) -> Option<u64> {
    indexed(name, 'F')
}

fn indexed(name: &str, prefix: char) -> Option<u64> {
    let rest = name.strip_prefix(prefix)?;
    if rest.is_empty() || !rest.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    rest.parse().ok()
}

pub fn is_variable_symbol(e: &SExpr) -> bool {
    e.as_sym().map_or(false, |s| variable_index(s).is_some())
}

/// Produces fresh `V<n>` / `F<n>` names. Seeded above the largest indices
/// already in use so generated names never collide with existing ones.
#[derive(Clone, Debug)]
pub struct SymbolGenerator {
    next_var: u64,
    next_func: u64,
}

impl Default for SymbolGenerator {
    fn default() -> Self {
        SymbolGenerator { next_var: 1, next_func: 1 }
    }
}

impl SymbolGenerator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Generator whose names are fresh with respect to every symbol in the
    /// given expressions.
    pub fn for_exprs<'a>(exprs: impl IntoIterator<Item = &'a SExpr>) -> Self {
        let mut gen = SymbolGenerator::new();
        for e in exprs {
            gen.observe(e);
        }
        gen
    }

    pub fn observe(&mut self, e: &SExpr) {
        match e {
            SExpr::Sym(s) => {
                if let Some(i) = variable_index(s) {
                    self.next_var = self.next_var.max(i + 1);
                }
                if let Some(i) = function_index(s) {
                    self.next_func = self.next_func.max(i + 1);
                }
            }
            SExpr::List(items) => items.iter().for_each(|i| self.observe(i)),
            SExpr::Num(_) => {}
        }
    }

    pub fn fresh_var(&mut self) -> String {
        let name = format!("V{}", self.next_var);
        self.next_var += 1;
        name
    }

    pub fn fresh_func(&mut self) -> String {
        let name = format!("F{}", self.next_func);
        self.next_func += 1;
        name
    }
}
