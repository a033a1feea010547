//! The optimal control problem model: states, controls, dynamics,
//! cost, control domain and boundary data, plus JSON ingestion and the
//! kernel-constraint analysis of the control space.

use crate::expr::{parse, Expr};
use crate::linalg;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};

/// Normal problems carry the cost in the Hamiltonian; abnormal ones
/// drop it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Normal,
    Abnormal,
}

/// Boundary data: fixed initial state, optionally (componentwise)
/// fixed final state, fixed initial time and optionally fixed final
/// time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Boundary {
    pub t0: f64,
    pub tf: Option<f64>,
    pub q0: Vec<f64>,
    pub qf: Vec<Option<f64>>,
}

/// A validated optimal control problem.
///
/// Immutable after loading; every expression refers only to declared
/// state and control names.
#[derive(Debug, Clone)]
pub struct OcProblem {
    pub name: String,
    pub states: Vec<String>,
    pub controls: Vec<String>,
    pub dynamics: Vec<Expr>,
    pub cost: Expr,
    /// Closed interval per control; absent entries are unbounded.
    pub control_domain: BTreeMap<String, (f64, f64)>,
    pub boundary: Boundary,
    pub mode: Mode,
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum ProblemError {
    #[error("invalid problem document: {0}")]
    Schema(String),
    #[error("{context}: {source}")]
    BadExpression {
        context: String,
        source: crate::expr::ParseError,
    },
    #[error("{context}: undeclared symbol(s) {names:?}")]
    UndeclaredSymbol { context: String, names: Vec<String> },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid boundary data: {0}")]
    Boundary(String),
    #[error("invalid control domain: {0}")]
    ControlDomain(String),
}

/// Raw JSON schema of a problem document.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProblem {
    name: String,
    states: Vec<String>,
    controls: Vec<String>,
    dynamics: Vec<String>,
    cost: String,
    #[serde(default)]
    control_domain: BTreeMap<String, Vec<f64>>,
    boundary: RawBoundary,
    #[serde(default)]
    mode: Mode,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBoundary {
    t0: f64,
    tf: Option<f64>,
    q0: Vec<f64>,
    #[serde(default)]
    qf: Option<Vec<Option<f64>>>,
}

/// Parses and validates a problem document (UTF-8 JSON).
pub fn load_problem(document: &str) -> Result<OcProblem, ProblemError> {
    let raw: RawProblem =
        serde_json::from_str(document).map_err(|e| ProblemError::Schema(e.to_string()))?;
    validate(raw)
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn validate(raw: RawProblem) -> Result<OcProblem, ProblemError> {
    let n = raw.states.len();
    let m = raw.controls.len();
    if n == 0 {
        return Err(ProblemError::Schema("at least one state is required".into()));
    }
    if m == 0 {
        return Err(ProblemError::Schema("at least one control is required".into()));
    }

    let mut seen = std::collections::BTreeSet::new();
    for name in raw.states.iter().chain(raw.controls.iter()) {
        if !is_identifier(name) {
            return Err(ProblemError::Schema(format!(
                "`{name}` is not a valid symbol name"
            )));
        }
        if !seen.insert(name.clone()) {
            return Err(ProblemError::Schema(format!(
                "symbol `{name}` declared more than once"
            )));
        }
    }

    if raw.dynamics.len() != n {
        return Err(ProblemError::Dimension(format!(
            "{} states but {} dynamics expressions",
            n,
            raw.dynamics.len()
        )));
    }

    let declared: std::collections::BTreeSet<&str> = raw
        .states
        .iter()
        .chain(raw.controls.iter())
        .map(|s| s.as_str())
        .collect();

    let parse_field = |context: String, src: &str| -> Result<Expr, ProblemError> {
        let e = parse(src).map_err(|source| ProblemError::BadExpression {
            context: context.clone(),
            source,
        })?;
        let unknown: Vec<String> = e
            .free_vars()
            .into_iter()
            .filter(|v| !declared.contains(v.as_str()))
            .collect();
        if !unknown.is_empty() {
            return Err(ProblemError::UndeclaredSymbol {
                context,
                names: unknown,
            });
        }
        Ok(e)
    };

    let mut dynamics = Vec::with_capacity(n);
    for (i, src) in raw.dynamics.iter().enumerate() {
        dynamics.push(parse_field(format!("dynamics[{i}]"), src)?);
    }
    let cost = parse_field("cost".into(), &raw.cost)?;

    let mut control_domain = BTreeMap::new();
    for (name, interval) in raw.control_domain {
        if !raw.controls.contains(&name) {
            return Err(ProblemError::ControlDomain(format!(
                "`{name}` is not a declared control"
            )));
        }
        if interval.len() != 2 {
            return Err(ProblemError::ControlDomain(format!(
                "domain of `{name}` must be [lo, hi]"
            )));
        }
        let (lo, hi) = (interval[0], interval[1]);
        if !(lo <= hi) {
            return Err(ProblemError::ControlDomain(format!(
                "domain of `{name}` has lo > hi"
            )));
        }
        control_domain.insert(name, (lo, hi));
    }

    if raw.boundary.q0.len() != n {
        return Err(ProblemError::Dimension(format!(
            "q0 has {} components, expected {}",
            raw.boundary.q0.len(),
            n
        )));
    }
    let qf = match raw.boundary.qf {
        None => vec![None; n],
        Some(qf) => {
            if qf.len() != n {
                return Err(ProblemError::Dimension(format!(
                    "qf has {} components, expected {}",
                    qf.len(),
                    n
                )));
            }
            qf
        }
    };
    if let Some(tf) = raw.boundary.tf {
        if !(raw.boundary.t0 < tf) {
            return Err(ProblemError::Boundary(format!(
                "t0 = {} must be below tf = {}",
                raw.boundary.t0, tf
            )));
        }
    }

    Ok(OcProblem {
        name: raw.name,
        states: raw.states,
        controls: raw.controls,
        dynamics,
        cost,
        control_domain,
        boundary: Boundary {
            t0: raw.boundary.t0,
            tf: raw.boundary.tf,
            q0: raw.boundary.q0,
            qf,
        },
        mode: raw.mode,
    })
}

impl OcProblem {
    pub fn n(&self) -> usize {
        self.states.len()
    }

    pub fn m(&self) -> usize {
        self.controls.len()
    }

    /// The cost entering Hamiltonian-side and velocity-side equations:
    /// the declared cost in normal mode, zero in abnormal mode.
    pub fn effective_cost(&self) -> Expr {
        match self.mode {
            Mode::Normal => self.cost.clone(),
            Mode::Abnormal => Expr::zero(),
        }
    }

    pub fn with_mode(mut self, mode: Mode) -> OcProblem {
        self.mode = mode;
        self
    }

    /// True when every component of `u` lies in its declared interval.
    pub fn control_admissible(&self, u: &[f64], slack: f64) -> bool {
        self.controls.iter().zip(u).all(|(name, &val)| {
            match self.control_domain.get(name) {
                Some(&(lo, hi)) => val >= lo - slack && val <= hi + slack,
                None => true,
            }
        })
    }

    /// Binding map for a `(q, u)` point.
    pub fn bind_qu(&self, q: &[f64], u: &[f64]) -> HashMap<String, f64> {
        let mut b = HashMap::with_capacity(self.n() + self.m());
        for (name, &v) in self.states.iter().zip(q) {
            b.insert(name.clone(), v);
        }
        for (name, &v) in self.controls.iter().zip(u) {
            b.insert(name.clone(), v);
        }
        b
    }

    /// Evaluates the dynamics vector at `(q, u)`.
    pub fn gamma(&self, q: &[f64], u: &[f64]) -> Result<Vec<f64>, crate::expr::EvalError> {
        let b = self.bind_qu(q, u);
        self.dynamics.iter().map(|e| e.eval(&b)).collect()
    }

    /// Jacobian of the dynamics with respect to the controls,
    /// evaluated at `(q, u)` (n rows, m columns).
    pub fn gamma_control_jacobian(
        &self,
        q: &[f64],
        u: &[f64],
    ) -> Result<DMatrix<f64>, crate::expr::EvalError> {
        let b = self.bind_qu(q, u);
        let mut j = DMatrix::<f64>::zeros(self.n(), self.m());
        for (i, gi) in self.dynamics.iter().enumerate() {
            for (a, ua) in self.controls.iter().enumerate() {
                j[(i, a)] = gi.diff(ua).eval(&b)?;
            }
        }
        Ok(j)
    }
}

/// Kernel-constraint analysis at one `(q, u)` sample: the kernel of the
/// control Jacobian of the dynamics, and the derivative of the cost
/// along each kernel direction. A point belongs to the restricted
/// control set exactly when all those derivatives vanish.
#[derive(Debug, Clone, Serialize)]
pub struct TildeCSample {
    pub q: Vec<f64>,
    pub u: Vec<f64>,
    /// Kernel basis vectors of `dGamma/du`, scaled so the largest
    /// entry has magnitude one.
    pub kernel_basis: Vec<Vec<f64>>,
    /// `dL/du . V` for each kernel vector `V`.
    pub constraint_values: Vec<f64>,
    pub in_tilde_c: bool,
}

/// Report of [`tilde_control_constraints`].
#[derive(Debug, Clone, Serialize)]
pub struct TildeCReport {
    pub samples: Vec<TildeCSample>,
    /// When `dGamma/du` is a constant matrix the kernel is global and
    /// the constraints `dL/du . V` are reported symbolically (printed
    /// form).
    pub symbolic_constraints: Option<Vec<String>>,
    pub flagged: usize,
}

const KERNEL_RANK_TOL: f64 = 1e-9;
const TILDE_FLAG_TOL: f64 = 1e-9;

/// Scale a kernel vector so its largest-magnitude entry is +1-ish:
/// divide by the entry of largest magnitude, sign chosen so the first
/// nonzero entry is positive.
fn normalize_kernel_vector(v: &DVector<f64>) -> Vec<f64> {
    let mut max = 0.0f64;
    for &x in v.iter() {
        if x.abs() > max {
            max = x.abs();
        }
    }
    if max == 0.0 {
        return v.iter().copied().collect();
    }
    let first_nonzero = v.iter().find(|x| x.abs() > 1e-14 * max).copied().unwrap_or(1.0);
    let scale = if first_nonzero < 0.0 { -max } else { max };
    v.iter().map(|x| x / scale).collect()
}

/// Evaluates the control-kernel constraints of the cost at each sample
/// point `(q, u)`.
pub fn tilde_control_constraints(
    problem: &OcProblem,
    samples: &[(Vec<f64>, Vec<f64>)],
) -> Result<TildeCReport, crate::expr::EvalError> {
    let cost = problem.effective_cost();
    let du_cost: Vec<Expr> = problem.controls.iter().map(|ua| cost.diff(ua)).collect();

    // Constant control Jacobian? Then the kernel is the same at every
    // point and the constraints have a global symbolic form.
    let jac_exprs: Vec<Vec<Expr>> = problem
        .dynamics
        .iter()
        .map(|gi| problem.controls.iter().map(|ua| gi.diff(ua)).collect())
        .collect();
    let constant_jacobian: Option<DMatrix<f64>> = {
        let mut vals = Vec::with_capacity(problem.n() * problem.m());
        let mut all_const = true;
        'outer: for row in &jac_exprs {
            for e in row {
                match e.as_constant() {
                    Some(c) => vals.push(c),
                    None => {
                        all_const = false;
                        break 'outer;
                    }
                }
            }
        }
        all_const.then(|| DMatrix::from_row_slice(problem.n(), problem.m(), &vals))
    };

    let symbolic_constraints = constant_jacobian.as_ref().map(|j| {
        linalg::kernel_basis(j, KERNEL_RANK_TOL)
            .iter()
            .map(|v| {
                let scaled = normalize_kernel_vector(v);
                let expr = Expr::sum(
                    scaled
                        .iter()
                        .zip(&du_cost)
                        .map(|(&c, d)| Expr::mul(Expr::constant(c), d.clone())),
                );
                expr.to_string()
            })
            .collect()
    });

    let mut out = Vec::with_capacity(samples.len());
    let mut flagged = 0;
    for (q, u) in samples {
        let j = problem.gamma_control_jacobian(q, u)?;
        let basis = linalg::kernel_basis(&j, KERNEL_RANK_TOL);
        let binding = problem.bind_qu(q, u);
        let grad_l: Vec<f64> = du_cost
            .iter()
            .map(|e| e.eval(&binding))
            .collect::<Result<_, _>>()?;
        let mut kernel_basis = Vec::with_capacity(basis.len());
        let mut constraint_values = Vec::with_capacity(basis.len());
        let mut in_tilde_c = true;
        for v in &basis {
            let scaled = normalize_kernel_vector(v);
            let value: f64 = scaled.iter().zip(&grad_l).map(|(a, b)| a * b).sum();
            if value.abs() > TILDE_FLAG_TOL {
                in_tilde_c = false;
            }
            kernel_basis.push(scaled);
            constraint_values.push(value);
        }
        if in_tilde_c {
            flagged += 1;
        }
        out.push(TildeCSample {
            q: q.clone(),
            u: u.clone(),
            kernel_basis,
            constraint_values,
            in_tilde_c,
        });
    }

    Ok(TildeCReport {
        samples: out,
        symbolic_constraints,
        flagged,
    })
}

/// Configuration for the linear-quadratic problem generator.
#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct LqConfig {
    pub seed: u64,
    pub n: usize,
    pub m: usize,
    /// "invertible" gives a control-cost matrix of full rank,
    /// "zero" drops the quadratic control cost entirely.
    pub p: LqControlCost,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LqControlCost {
    Invertible,
    Zero,
}

/// Generates a linear-quadratic problem
/// `dq/dt = A q + B u`, `L = u'Pu/2 + q'Qu + q'Rq/2`
/// with matrices drawn reproducibly from the seed.
pub fn generate_lq(config: &LqConfig) -> OcProblem {
    use crate::sample::SplitMix64;
    let LqConfig { seed, n, m, p } = *config;
    assert!(n >= 1 && m >= 1, "LQ generator needs n, m >= 1");
    let mut rng = SplitMix64::new(seed.wrapping_mul(0x9E37).wrapping_add(1));
    let mut draw = |rows: usize, cols: usize| -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| rng.uniform(-1.0, 1.0))
    };

    let a = draw(n, n);
    let b = draw(n, m);
    let q_mat = draw(n, m);
    let mut r = draw(n, n);
    r = (&r + r.transpose()) * 0.5;
    let p_mat = match p {
        LqControlCost::Zero => DMatrix::<f64>::zeros(m, m),
        LqControlCost::Invertible => {
            let raw = draw(m, m);
            // Symmetric and diagonally dominant, so comfortably invertible.
            (&raw + raw.transpose()) * 0.5 + DMatrix::<f64>::identity(m, m) * (m as f64 + 1.0)
        }
    };

    let states: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
    let controls: Vec<String> = (1..=m).map(|a| format!("u{a}")).collect();

    let lin = |coeffs: &[f64], names: &[String]| -> Expr {
        Expr::sum(
            coeffs
                .iter()
                .zip(names)
                .map(|(&c, name)| Expr::mul(Expr::constant(c), Expr::var(name.clone()))),
        )
    };

    let dynamics: Vec<Expr> = (0..n)
        .map(|i| {
            let aq = lin(&a.row(i).iter().copied().collect::<Vec<_>>(), &states);
            let bu = lin(&b.row(i).iter().copied().collect::<Vec<_>>(), &controls);
            Expr::add(aq, bu)
        })
        .collect();

    let mut cost = Expr::zero();
    for i in 0..m {
        for j in 0..m {
            cost = Expr::add(
                cost,
                Expr::mul(
                    Expr::constant(0.5 * p_mat[(i, j)]),
                    Expr::mul(Expr::var(controls[i].clone()), Expr::var(controls[j].clone())),
                ),
            );
        }
    }
    for i in 0..n {
        for j in 0..m {
            cost = Expr::add(
                cost,
                Expr::mul(
                    Expr::constant(q_mat[(i, j)]),
                    Expr::mul(Expr::var(states[i].clone()), Expr::var(controls[j].clone())),
                ),
            );
        }
    }
    for i in 0..n {
        for j in 0..n {
            cost = Expr::add(
                cost,
                Expr::mul(
                    Expr::constant(0.5 * r[(i, j)]),
                    Expr::mul(Expr::var(states[i].clone()), Expr::var(states[j].clone())),
                ),
            );
        }
    }

    OcProblem {
        name: format!("lq_seed{seed}"),
        states,
        controls,
        dynamics,
        cost,
        control_domain: BTreeMap::new(),
        boundary: Boundary {
            t0: 0.0,
            tf: Some(1.0),
            q0: vec![0.0; n],
            qf: vec![None; n],
        },
        mode: Mode::Normal,
    }
}
