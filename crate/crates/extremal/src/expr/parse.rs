//! Recursive-descent parser for the expression grammar.
//!
//! Grammar (whitespace insignificant):
//!
//! ```text
//! expr   := term  (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | power
//! power  := atom ('^' uint)*
//! atom   := number | ident | ident '(' expr ')' | '(' expr ')'
//! ident  := [A-Za-z_][A-Za-z0-9_]*
//! number := digits ['.' digits?] [('e'|'E') ['+'|'-'] digits]
//!         | '.' digits [('e'|'E') ['+'|'-'] digits]
//! ```
//!
//! Recognized functions: `sin cos exp log sqrt`. The exponent of `^`
//! must be a nonnegative integer literal. Errors carry the byte offset
//! of the offending token.

use super::{Expr, Func};
use std::fmt;

/// Parse failure with the byte position of the offending input.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub struct ParseError {
    pub position: usize,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "parse error at byte {}: {}", self.position, self.message)
    }
}

// Nesting bound keeps the recursive parser (and every later recursive
// walk over the tree) safe on adversarial input.
const MAX_DEPTH: usize = 200;

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

/// Parses `source` into an expression tree.
pub fn parse(source: &str) -> Result<Expr, ParseError> {
    let mut p = Parser {
        src: source.as_bytes(),
        pos: 0,
    };
    p.skip_ws();
    let e = p.expr(0)?;
    p.skip_ws();
    if p.pos != p.src.len() {
        return Err(p.error("unexpected trailing input"));
    }
    Ok(e)
}

impl<'a> Parser<'a> {
    fn error(&self, message: impl Into<String>) -> ParseError {
        ParseError {
            position: self.pos,
            message: message.into(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn expr(&mut self, depth: usize) -> Result<Expr, ParseError> {
        if depth > MAX_DEPTH {
            return Err(self.error("expression nesting too deep"));
        }
        let mut acc = self.term(depth + 1)?;
        loop {
            self.skip_ws();
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    self.skip_ws();
                    let rhs = self.term(depth + 1)?;
                    acc = Expr::Add(acc.into(), rhs.into());
                }
                Some(b'-') => {
                    self.pos += 1;
                    self.skip_ws();
                    let rhs = self.term(depth + 1)?;
                    acc = Expr::Sub(acc.into(), rhs.into());
                }
                _ => return Ok(acc),
            }
        }
    }

    fn term(&mut self, depth: usize) -> Result<Expr, ParseError> {
        if depth > MAX_DEPTH {
            return Err(self.error("expression nesting too deep"));
        }
        let mut acc = self.unary(depth + 1)?;
        loop {
            self.skip_ws();
            match self.peek() {
                Some(b'*') => {
                    self.pos += 1;
                    self.skip_ws();
                    let rhs = self.unary(depth + 1)?;
                    acc = Expr::Mul(acc.into(), rhs.into());
                }
                Some(b'/') => {
                    self.pos += 1;
                    self.skip_ws();
                    let rhs = self.unary(depth + 1)?;
                    acc = Expr::Div(acc.into(), rhs.into());
                }
                _ => return Ok(acc),
            }
        }
    }

    fn unary(&mut self, depth: usize) -> Result<Expr, ParseError> {
        if depth > MAX_DEPTH {
            return Err(self.error("expression nesting too deep"));
        }
        self.skip_ws();
        if self.peek() == Some(b'-') {
            self.pos += 1;
            self.skip_ws();
            let inner = self.unary(depth + 1)?;
            // Fold a negated literal so that printed negative
            // constants reparse to structurally equal trees.
            return Ok(match inner {
                Expr::Const(c) => Expr::Const(-c),
                other => Expr::Neg(other.into()),
            });
        }
        self.power(depth + 1)
    }

    fn power(&mut self, depth: usize) -> Result<Expr, ParseError> {
        if depth > MAX_DEPTH {
            return Err(self.error("expression nesting too deep"));
        }
        let mut base = self.atom(depth + 1)?;
        loop {
            self.skip_ws();
            if self.peek() == Some(b'^') {
                self.pos += 1;
                self.skip_ws();
                let exp = self.uint_literal()?;
                base = if exp == 0 {
                    Expr::Const(1.0)
                } else if exp == 1 {
                    base
                } else {
                    Expr::Pow(base.into(), exp)
                };
            } else {
                return Ok(base);
            }
        }
    }

    /// The exponent of `^`: digits only, no sign, no decimal point.
    fn uint_literal(&mut self) -> Result<u32, ParseError> {
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if self.pos == start {
            return Err(self.error("exponent must be a nonnegative integer literal"));
        }
        if matches!(self.peek(), Some(b'.') | Some(b'e') | Some(b'E')) {
            return Err(self.error("exponent must be a nonnegative integer literal"));
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).expect("digits are ascii");
        text.parse::<u32>()
            .ok()
            .filter(|&k| k <= i32::MAX as u32)
            .ok_or_else(|| ParseError {
                position: start,
                message: "integer exponent out of range".into(),
            })
    }

    fn atom(&mut self, depth: usize) -> Result<Expr, ParseError> {
        if depth > MAX_DEPTH {
            return Err(self.error("expression nesting too deep"));
        }
        self.skip_ws();
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let inner = self.expr(depth + 1)?;
                self.skip_ws();
                if self.peek() != Some(b')') {
                    return Err(self.error("expected `)`"));
                }
                self.pos += 1;
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => self.ident(depth),
            Some(c) => Err(self.error(format!("unexpected character `{}`", c as char))),
            None => Err(self.error("unexpected end of input")),
        }
    }

    fn number(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        let mut saw_digits = false;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            self.pos += 1;
            saw_digits = true;
        }
        if self.peek() == Some(b'.') {
            self.pos += 1;
            while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                self.pos += 1;
                saw_digits = true;
            }
        }
        if !saw_digits {
            return Err(ParseError {
                position: start,
                message: "malformed number".into(),
            });
        }
        if matches!(self.peek(), Some(b'e') | Some(b'E')) {
            let exp_mark = self.pos;
            self.pos += 1;
            if matches!(self.peek(), Some(b'+') | Some(b'-')) {
                self.pos += 1;
            }
            let digits_start = self.pos;
            while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
            if self.pos == digits_start {
                self.pos = exp_mark;
                return Err(self.error("malformed exponent"));
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).expect("number is ascii");
        match text.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(Expr::Const(v)),
            _ => Err(ParseError {
                position: start,
                message: format!("number `{text}` out of range"),
            }),
        }
    }

    fn ident(&mut self, depth: usize) -> Result<Expr, ParseError> {
        let start = self.pos;
        while self.pos < self.src.len()
            && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
        {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[start..self.pos])
            .expect("identifier is ascii")
            .to_string();
        self.skip_ws();
        if self.peek() == Some(b'(') {
            let func = Func::from_name(&name).ok_or(ParseError {
                position: start,
                message: format!("unknown function `{name}`"),
            })?;
            self.pos += 1;
            let arg = self.expr(depth + 1)?;
            self.skip_ws();
            if self.peek() != Some(b')') {
                return Err(self.error("expected `)`"));
            }
            self.pos += 1;
            Ok(Expr::Call(func, arg.into()))
        } else {
            Ok(Expr::Var(name))
        }
    }
}
