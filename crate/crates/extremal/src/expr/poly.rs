//! Univariate polynomial extraction and real root finding.
//!
//! Expressions that are polynomial in one variable (after binding every
//! other variable to a number) are lowered to dense coefficient vectors
//! and solved with companion-matrix eigenvalues followed by Newton
//! polishing. Every reported root satisfies
//! `|p(root)| <= 1e-12 * (1 + max|coefficient|)`.

use super::{EvalError, Expr};
use nalgebra::DMatrix;
use std::collections::HashMap;

/// Dense univariate polynomial, coefficients in ascending degree.
///
/// The leading coefficient is nonzero unless the polynomial is
/// identically zero (then `coefficients` is empty).
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    pub variable: String,
    pub coefficients: Vec<f64>,
}

/// A real root together with its multiplicity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RealRoot {
    pub value: f64,
    pub multiplicity: usize,
}

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum PolyError {
    #[error("expression is not polynomial in `{var}`: {reason}")]
    NonPolynomial { var: String, reason: String },
    #[error("polynomial degree {degree} exceeds the supported maximum {max}")]
    DegreeExceeded { degree: usize, max: usize },
    #[error("the zero polynomial has no isolated roots")]
    ZeroPolynomial,
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Hard cap from the module contract: stationarity equations the
/// enumeration needs are at most degree 8.
pub const MAX_DEGREE: usize = 8;

// Intermediate products may exceed MAX_DEGREE before cancellation.
const MAX_WORKING_LEN: usize = 64;

impl Polynomial {
    pub fn new(variable: impl Into<String>, coefficients: Vec<f64>) -> Polynomial {
        let mut p = Polynomial {
            variable: variable.into(),
            coefficients,
        };
        p.trim();
        p
    }

    fn trim(&mut self) {
        let max_mag = self
            .coefficients
            .iter()
            .fold(0.0f64, |acc, c| acc.max(c.abs()));
        // Leading coefficients that are pure cancellation noise are
        // dropped together with exact zeros.
        let floor = max_mag * 1e-14;
        while let Some(&last) = self.coefficients.last() {
            if last == 0.0 || last.abs() <= floor {
                self.coefficients.pop();
            } else {
                break;
            }
        }
    }

    pub fn degree(&self) -> Option<usize> {
        if self.coefficients.is_empty() {
            None
        } else {
            Some(self.coefficients.len() - 1)
        }
    }

    pub fn is_zero(&self) -> bool {
        self.coefficients.is_empty()
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coefficients
            .iter()
            .rev()
            .fold(0.0, |acc, &c| acc * x + c)
    }

    pub fn derivative(&self) -> Polynomial {
        let coeffs = self
            .coefficients
            .iter()
            .enumerate()
            .skip(1)
            .map(|(k, &c)| k as f64 * c)
            .collect();
        Polynomial::new(self.variable.clone(), coeffs)
    }

    pub fn max_coefficient_magnitude(&self) -> f64 {
        self.coefficients
            .iter()
            .fold(0.0f64, |acc, c| acc.max(c.abs()))
    }

    /// All real roots with multiplicities, sorted ascending.
    pub fn real_roots(&self) -> Result<Vec<RealRoot>, PolyError> {
        if self.is_zero() {
            return Err(PolyError::ZeroPolynomial);
        }
        let degree = self.degree().expect("nonzero polynomial");
        if degree == 0 {
            return Ok(Vec::new());
        }

        let scale = 1.0 + self.max_coefficient_magnitude();
        let residual_tol = 1e-12 * scale;

        let mut candidates: Vec<f64> = Vec::new();
        match degree {
            // `+ 0.0` normalizes a negative zero.
            1 => candidates.push(-self.coefficients[0] / self.coefficients[1] + 0.0),
            2 => {
                let (c, b, a) = (
                    self.coefficients[0],
                    self.coefficients[1],
                    self.coefficients[2],
                );
                let disc = b * b - 4.0 * a * c;
                if disc >= 0.0 {
                    // Numerically stable quadratic formula.
                    let q = -0.5 * (b + b.signum() * disc.sqrt());
                    if q != 0.0 {
                        candidates.push(q / a);
                        candidates.push(c / q);
                    } else {
                        candidates.push(0.0);
                        candidates.push(0.0);
                    }
                } else if disc > -1e-12 * scale * scale {
                    // Borderline double root.
                    candidates.push(-b / (2.0 * a));
                    candidates.push(-b / (2.0 * a));
                }
            }
            _ => {
                for eig in self.companion_eigenvalues() {
                    // A multiplicity-k real root perturbs into a cluster with
                    // imaginary parts of order eps^(1/k); accept near-real
                    // candidates and let the residual contract filter them.
                    if eig.im.abs() <= 1e-5 * (1.0 + eig.re.abs()) {
                        candidates.push(eig.re);
                    }
                }
            }
        }

        let deriv = self.derivative();
        let mut accepted: Vec<f64> = Vec::new();
        for cand in candidates {
            let polished = self.polish(cand, &deriv);
            if self.eval(polished).abs() <= residual_tol {
                accepted.push(polished);
            }
        }
        accepted.sort_by(|a, b| a.partial_cmp(b).expect("finite roots"));

        // Cluster equal roots into multiplicities.
        let mut roots: Vec<RealRoot> = Vec::new();
        for r in accepted {
            match roots.last_mut() {
                Some(last) if (r - last.value).abs() <= 1e-7 * (1.0 + last.value.abs()) => {
                    last.multiplicity += 1;
                }
                _ => roots.push(RealRoot {
                    value: r,
                    multiplicity: 1,
                }),
            }
        }
        Ok(roots)
    }

    fn polish(&self, mut x: f64, deriv: &Polynomial) -> f64 {
        for _ in 0..60 {
            let fx = self.eval(x);
            if fx == 0.0 {
                return x;
            }
            let dfx = deriv.eval(x);
            if dfx == 0.0 || !dfx.is_finite() {
                return x;
            }
            let step = fx / dfx;
            let next = x - step;
            if !next.is_finite() {
                return x;
            }
            if (next - x).abs() <= 1e-16 * (1.0 + x.abs()) {
                return next;
            }
            x = next;
        }
        x
    }

    fn companion_eigenvalues(&self) -> Vec<nalgebra::Complex<f64>> {
        let n = self.degree().expect("degree >= 1");
        let lead = *self.coefficients.last().expect("nonzero");
        let mut m = DMatrix::<f64>::zeros(n, n);
        for i in 1..n {
            m[(i, i - 1)] = 1.0;
        }
        for i in 0..n {
            m[(i, n - 1)] = -self.coefficients[i] / lead;
        }
        m.complex_eigenvalues().iter().copied().collect()
    }
}

/// Lowers `e` to a polynomial in `var`, binding every other variable
/// from `binding`.
pub fn extract_polynomial(
    e: &Expr,
    var: &str,
    binding: &HashMap<String, f64>,
) -> Result<Polynomial, PolyError> {
    let coeffs = coeffs_rec(e, var, binding)?;
    let p = Polynomial::new(var, coeffs);
    if let Some(d) = p.degree() {
        if d > MAX_DEGREE {
            return Err(PolyError::DegreeExceeded {
                degree: d,
                max: MAX_DEGREE,
            });
        }
    }
    Ok(p)
}

/// All real roots of `e` viewed as a polynomial in `var` (degree <= 8)
/// after substituting `binding` for the remaining variables. Roots are
/// sorted ascending with multiplicities; each satisfies the residual
/// contract `|e(root)| <= 1e-12 * (1 + max|coefficient|)`.
pub fn real_roots_univariate(
    e: &Expr,
    var: &str,
    binding: &HashMap<String, f64>,
) -> Result<Vec<RealRoot>, PolyError> {
    extract_polynomial(e, var, binding)?.real_roots()
}

fn nonpoly(var: &str, reason: impl Into<String>) -> PolyError {
    PolyError::NonPolynomial {
        var: var.to_string(),
        reason: reason.into(),
    }
}

fn constant_of(coeffs: &[f64]) -> Option<f64> {
    match coeffs.len() {
        0 => Some(0.0),
        1 => Some(coeffs[0]),
        _ => None,
    }
}

fn trim_in_place(mut v: Vec<f64>) -> Vec<f64> {
    while v.last() == Some(&0.0) {
        v.pop();
    }
    v
}

fn coeffs_rec(
    e: &Expr,
    var: &str,
    binding: &HashMap<String, f64>,
) -> Result<Vec<f64>, PolyError> {
    let out = match e {
        Expr::Const(c) => vec![*c],
        Expr::Var(name) => {
            if name == var {
                vec![0.0, 1.0]
            } else {
                vec![*binding
                    .get(name)
                    .ok_or_else(|| EvalError::Unbound(name.clone()))?]
            }
        }
        Expr::Neg(a) => coeffs_rec(a, var, binding)?
            .into_iter()
            .map(|c| -c)
            .collect(),
        Expr::Add(a, b) => {
            let (pa, pb) = (coeffs_rec(a, var, binding)?, coeffs_rec(b, var, binding)?);
            let mut out = vec![0.0; pa.len().max(pb.len())];
            for (i, c) in pa.iter().enumerate() {
                out[i] += c;
            }
            for (i, c) in pb.iter().enumerate() {
                out[i] += c;
            }
            out
        }
        Expr::Sub(a, b) => {
            let (pa, pb) = (coeffs_rec(a, var, binding)?, coeffs_rec(b, var, binding)?);
            let mut out = vec![0.0; pa.len().max(pb.len())];
            for (i, c) in pa.iter().enumerate() {
                out[i] += c;
            }
            for (i, c) in pb.iter().enumerate() {
                out[i] -= c;
            }
            out
        }
        Expr::Mul(a, b) => {
            let (pa, pb) = (coeffs_rec(a, var, binding)?, coeffs_rec(b, var, binding)?);
            convolve(var, &pa, &pb)?
        }
        Expr::Div(a, b) => {
            let pa = coeffs_rec(a, var, binding)?;
            let pb = trim_in_place(coeffs_rec(b, var, binding)?);
            match constant_of(&pb) {
                Some(c) if c != 0.0 => pa.into_iter().map(|x| x / c).collect(),
                Some(_) => return Err(EvalError::Domain("division by zero".into()).into()),
                None => {
                    return Err(nonpoly(var, format!("division by a `{var}`-dependent term")))
                }
            }
        }
        Expr::Pow(a, k) => {
            let pa = coeffs_rec(a, var, binding)?;
            let mut acc = vec![1.0];
            for _ in 0..*k {
                acc = convolve(var, &acc, &pa)?;
            }
            acc
        }
        Expr::Call(f, a) => {
            let pa = trim_in_place(coeffs_rec(a, var, binding)?);
            match constant_of(&pa) {
                Some(c) => {
                    let arg = Expr::Const(c);
                    vec![Expr::call(*f, arg).eval(&HashMap::new())?]
                }
                None => {
                    return Err(nonpoly(
                        var,
                        format!("{}() applied to a `{var}`-dependent argument", f.name()),
                    ))
                }
            }
        }
    };
    if out.len() > MAX_WORKING_LEN {
        return Err(PolyError::DegreeExceeded {
            degree: out.len() - 1,
            max: MAX_DEGREE,
        });
    }
    Ok(out)
}

fn convolve(var: &str, a: &[f64], b: &[f64]) -> Result<Vec<f64>, PolyError> {
    if a.is_empty() || b.is_empty() {
        return Ok(vec![0.0]);
    }
    let len = a.len() + b.len() - 1;
    if len > MAX_WORKING_LEN {
        return Err(PolyError::DegreeExceeded {
            degree: len - 1,
            max: MAX_DEGREE,
        });
    }
    let _ = var;
    let mut out = vec![0.0; len];
    for (i, &ca) in a.iter().enumerate() {
        if ca == 0.0 {
            continue;
        }
        for (j, &cb) in b.iter().enumerate() {
            out[i + j] += ca * cb;
        }
    }
    Ok(out)
}
