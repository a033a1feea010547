//! Symbolic expression trees over named real variables.
//!
//! This is the substrate every other module computes with: dynamics,
//! cost functions and Hamiltonians are all [`Expr`] values. Expressions
//! are immutable after construction (children are shared via `Arc`),
//! support exact symbolic differentiation and checked numeric
//! evaluation, and can be parsed from / printed to a small fixed
//! grammar (see [`parse`]).
//!
//! Simplification is deliberately limited to local identities
//! (`0*x -> 0`, `x+0 -> x`, constant folding). Equality of derivatives
//! is established by evaluation in the test suites, not by canonical
//! forms.

mod parse;
pub mod poly;

pub use parse::{parse, ParseError};

use std::collections::BTreeSet;
use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

/// The built-in unary functions of the expression grammar.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
        }
    }

    pub fn from_name(name: &str) -> Option<Func> {
        match name {
            "sin" => Some(Func::Sin),
            "cos" => Some(Func::Cos),
            "exp" => Some(Func::Exp),
            "log" => Some(Func::Log),
            "sqrt" => Some(Func::Sqrt),
            _ => None,
        }
    }
}

/// An immutable symbolic expression tree.
///
/// Powers carry a nonnegative integer literal exponent; this keeps
/// differentiation and polynomial coefficient extraction exact.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(String),
    Neg(Arc<Expr>),
    Add(Arc<Expr>, Arc<Expr>),
    Sub(Arc<Expr>, Arc<Expr>),
    Mul(Arc<Expr>, Arc<Expr>),
    Div(Arc<Expr>, Arc<Expr>),
    Pow(Arc<Expr>, u32),
    Call(Func, Arc<Expr>),
}

/// Errors raised by numeric evaluation.
#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum EvalError {
    #[error("unbound variable `{0}`")]
    Unbound(String),
    #[error("domain error: {0}")]
    Domain(String),
}

impl Expr {
    pub fn constant(c: f64) -> Expr {
        Expr::Const(c)
    }

    pub fn var(name: impl Into<String>) -> Expr {
        Expr::Var(name.into())
    }

    pub fn zero() -> Expr {
        Expr::Const(0.0)
    }

    pub fn one() -> Expr {
        Expr::Const(1.0)
    }

    /// Negation with local simplification.
    pub fn neg(e: Expr) -> Expr {
        match e {
            Expr::Const(c) => Expr::Const(-c),
            Expr::Neg(inner) => inner.as_ref().clone(),
            other => Expr::Neg(Arc::new(other)),
        }
    }

    /// Sum with local simplification (`x+0 -> x`, constant folding).
    pub fn add(a: Expr, b: Expr) -> Expr {
        match (a, b) {
            (Expr::Const(x), Expr::Const(y)) => Expr::Const(x + y),
            (Expr::Const(c), b) if c == 0.0 => b,
            (a, Expr::Const(c)) if c == 0.0 => a,
            (a, b) => Expr::Add(Arc::new(a), Arc::new(b)),
        }
    }

    pub fn sub(a: Expr, b: Expr) -> Expr {
        match (a, b) {
            (Expr::Const(x), Expr::Const(y)) => Expr::Const(x - y),
            (a, Expr::Const(c)) if c == 0.0 => a,
            (Expr::Const(c), b) if c == 0.0 => Expr::neg(b),
            (a, b) => Expr::Sub(Arc::new(a), Arc::new(b)),
        }
    }

    /// Product with local simplification (`0*x -> 0`, `1*x -> x`).
    pub fn mul(a: Expr, b: Expr) -> Expr {
        match (a, b) {
            (Expr::Const(x), Expr::Const(y)) => Expr::Const(x * y),
            (Expr::Const(c), _) | (_, Expr::Const(c)) if c == 0.0 => Expr::Const(0.0),
            (Expr::Const(c), b) if c == 1.0 => b,
            (a, Expr::Const(c)) if c == 1.0 => a,
            (a, b) => Expr::Mul(Arc::new(a), Arc::new(b)),
        }
    }

    pub fn div(a: Expr, b: Expr) -> Expr {
        match (a, b) {
            (Expr::Const(x), Expr::Const(y)) if y != 0.0 => Expr::Const(x / y),
            (a, Expr::Const(c)) if c == 1.0 => a,
            (a, b) => Expr::Div(Arc::new(a), Arc::new(b)),
        }
    }

    pub fn pow(base: Expr, exp: u32) -> Expr {
        match (base, exp) {
            (_, 0) => Expr::Const(1.0),
            (b, 1) => b,
            (Expr::Const(c), k) => Expr::Const(c.powi(k as i32)),
            (b, k) => Expr::Pow(Arc::new(b), k),
        }
    }

    pub fn call(f: Func, arg: Expr) -> Expr {
        Expr::Call(f, Arc::new(arg))
    }

    /// Dot product `sum_i coeffs[i] * exprs[i]` with local simplification.
    pub fn sum(terms: impl IntoIterator<Item = Expr>) -> Expr {
        terms
            .into_iter()
            .fold(Expr::zero(), |acc, t| Expr::add(acc, t))
    }

    /// Collects the variable names appearing in the tree.
    pub fn free_vars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<String>) {
        match self {
            Expr::Const(_) => {}
            Expr::Var(name) => {
                out.insert(name.clone());
            }
            Expr::Neg(a) | Expr::Call(_, a) | Expr::Pow(a, _) => a.collect_vars(out),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
        }
    }

    pub fn contains_var(&self, name: &str) -> bool {
        match self {
            Expr::Const(_) => false,
            Expr::Var(v) => v == name,
            Expr::Neg(a) | Expr::Call(_, a) | Expr::Pow(a, _) => a.contains_var(name),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.contains_var(name) || b.contains_var(name)
            }
        }
    }

    /// Replaces every occurrence of `name` by `replacement`.
    pub fn substitute(&self, name: &str, replacement: &Expr) -> Expr {
        match self {
            Expr::Const(_) => self.clone(),
            Expr::Var(v) => {
                if v == name {
                    replacement.clone()
                } else {
                    self.clone()
                }
            }
            Expr::Neg(a) => Expr::neg(a.substitute(name, replacement)),
            Expr::Add(a, b) => Expr::add(a.substitute(name, replacement), b.substitute(name, replacement)),
            Expr::Sub(a, b) => Expr::sub(a.substitute(name, replacement), b.substitute(name, replacement)),
            Expr::Mul(a, b) => Expr::mul(a.substitute(name, replacement), b.substitute(name, replacement)),
            Expr::Div(a, b) => Expr::div(a.substitute(name, replacement), b.substitute(name, replacement)),
            Expr::Pow(a, k) => Expr::pow(a.substitute(name, replacement), *k),
            Expr::Call(f, a) => Expr::call(*f, a.substitute(name, replacement)),
        }
    }

    /// Evaluates the tree under `binding`.
    ///
    /// Every variable must be bound; the result is a finite real or an
    /// error (division by zero, log of a nonpositive value, square root
    /// of a negative value, overflow). A silent NaN is never produced.
    pub fn eval(&self, binding: &HashMap<String, f64>) -> Result<f64, EvalError> {
        let v = match self {
            Expr::Const(c) => *c,
            Expr::Var(name) => *binding
                .get(name)
                .ok_or_else(|| EvalError::Unbound(name.clone()))?,
            Expr::Neg(a) => -a.eval(binding)?,
            Expr::Add(a, b) => a.eval(binding)? + b.eval(binding)?,
            Expr::Sub(a, b) => a.eval(binding)? - b.eval(binding)?,
            Expr::Mul(a, b) => a.eval(binding)? * b.eval(binding)?,
            Expr::Div(a, b) => {
                let d = b.eval(binding)?;
                if d == 0.0 {
                    return Err(EvalError::Domain("division by zero".into()));
                }
                a.eval(binding)? / d
            }
            Expr::Pow(a, k) => a.eval(binding)?.powi(*k as i32),
            Expr::Call(f, a) => {
                let x = a.eval(binding)?;
                match f {
                    Func::Sin => x.sin(),
                    Func::Cos => x.cos(),
                    Func::Exp => x.exp(),
                    Func::Log => {
                        if x <= 0.0 {
                            return Err(EvalError::Domain(format!("log of nonpositive value {x}")));
                        }
                        x.ln()
                    }
                    Func::Sqrt => {
                        if x < 0.0 {
                            return Err(EvalError::Domain(format!("sqrt of negative value {x}")));
                        }
                        x.sqrt()
                    }
                }
            }
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(EvalError::Domain("non-finite result".into()))
        }
    }

    /// If the expression contains no variables, its (checked) value.
    pub fn as_constant(&self) -> Option<f64> {
        if self.free_vars().is_empty() {
            self.eval(&HashMap::new()).ok()
        } else {
            None
        }
    }

    /// Exact symbolic partial derivative with respect to `var`.
    ///
    /// The derivative of anything constant in `var` is the zero
    /// expression; there is no error path.
    pub fn diff(&self, var: &str) -> Expr {
        match self {
            Expr::Const(_) => Expr::zero(),
            Expr::Var(v) => {
                if v == var {
                    Expr::one()
                } else {
                    Expr::zero()
                }
            }
            Expr::Neg(a) => Expr::neg(a.diff(var)),
            Expr::Add(a, b) => Expr::add(a.diff(var), b.diff(var)),
            Expr::Sub(a, b) => Expr::sub(a.diff(var), b.diff(var)),
            Expr::Mul(a, b) => Expr::add(
                Expr::mul(a.diff(var), b.as_ref().clone()),
                Expr::mul(a.as_ref().clone(), b.diff(var)),
            ),
            Expr::Div(a, b) => {
                // (a'b - ab') / b^2
                let num = Expr::sub(
                    Expr::mul(a.diff(var), b.as_ref().clone()),
                    Expr::mul(a.as_ref().clone(), b.diff(var)),
                );
                Expr::div(num, Expr::pow(b.as_ref().clone(), 2))
            }
            Expr::Pow(a, k) => Expr::mul(
                Expr::mul(Expr::constant(*k as f64), Expr::pow(a.as_ref().clone(), k - 1)),
                a.diff(var),
            ),
            Expr::Call(f, a) => {
                let inner = a.diff(var);
                let outer = match f {
                    Func::Sin => Expr::call(Func::Cos, a.as_ref().clone()),
                    Func::Cos => Expr::neg(Expr::call(Func::Sin, a.as_ref().clone())),
                    Func::Exp => Expr::call(Func::Exp, a.as_ref().clone()),
                    Func::Log => Expr::div(Expr::one(), a.as_ref().clone()),
                    Func::Sqrt => Expr::div(
                        Expr::one(),
                        Expr::mul(Expr::constant(2.0), Expr::call(Func::Sqrt, a.as_ref().clone())),
                    ),
                };
                Expr::mul(outer, inner)
            }
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Add(..) | Expr::Sub(..) => 1,
            Expr::Mul(..) | Expr::Div(..) => 2,
            Expr::Neg(..) => 3,
            Expr::Pow(..) => 4,
            Expr::Const(_) | Expr::Var(_) | Expr::Call(..) => 5,
        }
    }

    fn fmt_prec(&self, f: &mut fmt::Formatter<'_>, parent: u8) -> fmt::Result {
        let prec = self.precedence();
        let needs_parens = prec < parent;
        if needs_parens {
            write!(f, "(")?;
        }
        match self {
            Expr::Const(c) => {
                if *c < 0.0 || (*c == 0.0 && c.is_sign_negative()) {
                    // A negative literal reparses as unary minus; print it
                    // parenthesized only when the context requires it.
                    if !needs_parens && parent > 3 {
                        write!(f, "({c})")?;
                    } else {
                        write!(f, "{c}")?;
                    }
                } else {
                    write!(f, "{c}")?;
                }
            }
            Expr::Var(name) => write!(f, "{name}")?,
            Expr::Neg(a) => {
                write!(f, "-")?;
                a.fmt_prec(f, 4)?;
            }
            Expr::Add(a, b) => {
                a.fmt_prec(f, 1)?;
                write!(f, " + ")?;
                b.fmt_prec(f, 2)?;
            }
            Expr::Sub(a, b) => {
                a.fmt_prec(f, 1)?;
                write!(f, " - ")?;
                b.fmt_prec(f, 2)?;
            }
            Expr::Mul(a, b) => {
                a.fmt_prec(f, 2)?;
                write!(f, "*")?;
                b.fmt_prec(f, 3)?;
            }
            Expr::Div(a, b) => {
                a.fmt_prec(f, 2)?;
                write!(f, "/")?;
                b.fmt_prec(f, 3)?;
            }
            Expr::Pow(a, k) => {
                a.fmt_prec(f, 5)?;
                write!(f, "^{k}")?;
            }
            Expr::Call(func, a) => {
                write!(f, "{}(", func.name())?;
                a.fmt_prec(f, 0)?;
                write!(f, ")")?;
            }
        }
        if needs_parens {
            write!(f, ")")?;
        }
        Ok(())
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_prec(f, 0)
    }
}

/// Convenience: builds a binding map from name/value pairs.
pub fn binding(pairs: &[(&str, f64)]) -> HashMap<String, f64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}
