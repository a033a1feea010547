//! Constraint stabilization and piecewise-constant extremal
//! enumeration.
//!
//! The stationarity conditions `dH/du = 0` start an implicit
//! differential equation on `T*Q`. This module mechanizes the two ways
//! of extracting its integrable part:
//!
//! * [`stabilize`] — the smooth branch: differentiate the constraints
//!   along the Hamiltonian drift, solve for the control derivatives
//!   where the control Hessian is invertible and emit new constraints
//!   where it is not, until the constraint set stops growing;
//! * [`enumerate_piecewise`] — the switching branch for scalar
//!   problems with state-independent data: the costate is constant on
//!   extremals, every arc control is a root of the same stationarity
//!   equation `p = g(u)`, and arcs may be concatenated when the
//!   Hamiltonian value is continuous across the switch (the corner
//!   condition; equivalently, constancy of the maximized Hamiltonian).
//!   Switch times then solve a small linear system against the
//!   endpoint data.

use crate::expr::poly::{extract_polynomial, PolyError, Polynomial};
use crate::expr::{EvalError, Expr};
use crate::linalg;
use crate::pontryagin::{build_hamiltonian, Hamiltonian, PontryaginError};
use crate::problem::OcProblem;
use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use std::collections::HashMap;

/// Outcome of one stabilization level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LevelStatus {
    /// More differentiation may still add constraints.
    Continuing,
    /// The constraint set stopped growing.
    Stabilized,
    /// A nonzero constant constraint appeared: no solutions.
    Empty,
}

/// One level of the stabilization sequence.
#[derive(Debug, Clone)]
pub struct ConstraintLevel {
    pub level: usize,
    /// Constraints added at this level (level 0 carries `dH/du`).
    pub constraints: Vec<Expr>,
    /// Control-derivative components determined at this level.
    pub determined: Vec<(String, Expr)>,
    pub status: LevelStatus,
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum IntegrabilityError {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Pontryagin(#[from] PontryaginError),
    #[error(transparent)]
    Poly(#[from] PolyError),
    #[error("outside the enumerator's class: {0:?}")]
    ClassViolation(Vec<String>),
    #[error("control must be scalar for constant-control candidates (m = {0})")]
    NotScalarControl(usize),
    #[error("stationarity depends on the state; constant-control candidates need state-independent stationarity")]
    StateDependentStationarity,
}

const IMPLICATION_TOL: f64 = 1e-8;

fn contains_any(e: &Expr, names: &[String]) -> bool {
    names.iter().any(|n| e.contains_var(n))
}

/// Drift derivative of a constraint along Hamilton's equations:
/// `dphi/dq . dH/dp - dphi/dp . dH/dq`.
fn drift_derivative(h: &Hamiltonian, phi: &Expr) -> Expr {
    let mut acc = Expr::zero();
    for (qi, hp) in h.states.iter().zip(&h.dp) {
        acc = Expr::add(acc, Expr::mul(phi.diff(qi), hp.clone()));
    }
    for (pi, hq) in h.costates.iter().zip(&h.dq) {
        acc = Expr::sub(acc, Expr::mul(phi.diff(pi), hq.clone()));
    }
    acc
}

/// Runs the constraint-stabilization sequence starting from the
/// stationarity constraints. `samples` are `(q, p, u)` points used for
/// the numeric invertibility and implication checks.
pub fn stabilize(
    h: &Hamiltonian,
    max_levels: usize,
    samples: &[Vec<f64>],
) -> Result<Vec<ConstraintLevel>, IntegrabilityError> {
    assert!(max_levels >= 1, "max_levels must be at least 1");
    let n = h.n();

    let eval_at = |e: &Expr, point: &[f64]| -> Result<f64, EvalError> {
        let (q, rest) = point.split_at(n);
        let (p, u) = rest.split_at(n);
        e.eval(&h.bind(q, p, u))
    };

    let mut levels = vec![ConstraintLevel {
        level: 0,
        constraints: h.du.clone(),
        determined: Vec::new(),
        status: LevelStatus::Continuing,
    }];
    let mut active: Vec<Expr> = h.du.clone();
    let mut fresh: Vec<Expr> = h.du.clone();
    let mut controls_determined = false;

    for level in 1..=max_levels {
        // Split the fresh constraints into control-free ones (their
        // drift derivative is a candidate new constraint) and
        // control-dependent ones (their derivative involves du/dt).
        let mut control_free: Vec<&Expr> = Vec::new();
        let mut control_dep: Vec<&Expr> = Vec::new();
        for phi in &fresh {
            if contains_any(phi, &h.controls) {
                control_dep.push(phi);
            } else {
                control_free.push(phi);
            }
        }

        let mut determined: Vec<(String, Expr)> = Vec::new();
        let mut solved_controls = false;
        let mut stuck = false;
        if !control_dep.is_empty() && !controls_determined {
            match solve_control_rates(h, &control_dep, samples, &eval_at)? {
                Some(rates) => {
                    determined = rates;
                    solved_controls = true;
                }
                None => stuck = true,
            }
        }

        // Candidate new constraints from the control-free block.
        let mut new_constraints: Vec<Expr> = Vec::new();
        let mut implied_only = true;
        let mut empty = false;
        for phi in &control_free {
            let psi = drift_derivative(h, phi);
            if let Some(c) = psi.as_constant() {
                new_constraints.push(psi.clone());
                if c.abs() > IMPLICATION_TOL {
                    // A nonzero constant must vanish: no solutions.
                    empty = true;
                }
                continue;
            }
            // Numeric implication: on samples satisfying the active
            // set, psi must vanish too.
            let mut satisfying = 0usize;
            let mut violated = false;
            for s in samples {
                let sat = active
                    .iter()
                    .map(|a| eval_at(a, s))
                    .collect::<Result<Vec<_>, _>>()
                    .map(|vals| vals.iter().all(|v| v.abs() <= IMPLICATION_TOL))
                    .unwrap_or(false);
                if sat {
                    satisfying += 1;
                    if eval_at(&psi, s).map(|v| v.abs() > IMPLICATION_TOL).unwrap_or(true) {
                        violated = true;
                        break;
                    }
                }
            }
            let everywhere_zero = samples
                .iter()
                .all(|s| eval_at(&psi, s).map(|v| v.abs() <= 1e-10).unwrap_or(false));
            new_constraints.push(psi.clone());
            if violated || (satisfying == 0 && !everywhere_zero) {
                implied_only = false;
            }
        }

        if solved_controls {
            controls_determined = true;
        }

        let status = if empty {
            LevelStatus::Empty
        } else if stuck {
            LevelStatus::Continuing
        } else if implied_only {
            LevelStatus::Stabilized
        } else {
            LevelStatus::Continuing
        };

        // Genuinely new constraints join the active set and feed the
        // next level.
        fresh = if implied_only {
            Vec::new()
        } else {
            new_constraints
                .iter()
                .filter(|e| e.as_constant() != Some(0.0))
                .cloned()
                .collect()
        };
        active.extend(fresh.iter().cloned());

        levels.push(ConstraintLevel {
            level,
            constraints: new_constraints,
            determined,
            status,
        });

        if status != LevelStatus::Continuing {
            break;
        }
        if fresh.is_empty() {
            break;
        }
    }

    Ok(levels)
}

type Rates = Vec<(String, Expr)>;

/// Solves `A du/dt = -drift` for the control rates, where
/// `A[r][a] = dphi_r / du^a`. Handles a constant invertible `A`, or a
/// scalar-control coefficient that is numerically nonzero on the
/// samples. Returns `None` when the system is not solvable in this
/// class.
fn solve_control_rates(
    h: &Hamiltonian,
    constraints: &[&Expr],
    samples: &[Vec<f64>],
    eval_at: &dyn Fn(&Expr, &[f64]) -> Result<f64, EvalError>,
) -> Result<Option<Rates>, IntegrabilityError> {
    let m = h.m();
    if constraints.len() != m {
        return Ok(None);
    }
    let coeff: Vec<Vec<Expr>> = constraints
        .iter()
        .map(|phi| h.controls.iter().map(|u| phi.diff(u)).collect())
        .collect();
    let drifts: Vec<Expr> = constraints
        .iter()
        .map(|phi| drift_derivative(h, phi))
        .collect();

    // Constant coefficient matrix: invert numerically once.
    let consts: Option<Vec<f64>> = coeff.iter().flatten().map(|e| e.as_constant()).collect();
    if let Some(vals) = consts {
        let a = DMatrix::from_row_slice(m, m, &vals);
        if let Some(inv) = a.try_inverse() {
            let rates = h
                .controls
                .iter()
                .enumerate()
                .map(|(c, name)| {
                    let expr = Expr::sum(
                        (0..m).map(|r| Expr::mul(Expr::constant(-inv[(c, r)]), drifts[r].clone())),
                    );
                    (name.clone(), expr)
                })
                .collect();
            return Ok(Some(rates));
        }
        return Ok(None);
    }

    // Scalar control with a state/costate/control dependent
    // coefficient: require it to be numerically bounded away from zero
    // on the provided samples.
    if m == 1 {
        let a = &coeff[0][0];
        if samples.is_empty() {
            return Ok(None);
        }
        for s in samples {
            match eval_at(a, s) {
                Ok(v) if v.abs() > 1e-6 => {}
                _ => return Ok(None),
            }
        }
        let rate = Expr::div(Expr::neg(drifts[0].clone()), a.clone());
        return Ok(Some(vec![(h.controls[0].clone(), rate)]));
    }

    Ok(None)
}

/// Roots of the stationarity equation in the control for a fixed
/// scalar costate value (scalar-control problems whose stationarity
/// does not involve the state).
pub fn constant_control_candidates(
    h: &Hamiltonian,
    p_value: f64,
) -> Result<Vec<f64>, IntegrabilityError> {
    if h.m() != 1 {
        return Err(IntegrabilityError::NotScalarControl(h.m()));
    }
    let du = &h.du[0];
    if h.states.iter().any(|s| du.contains_var(s)) {
        return Err(IntegrabilityError::StateDependentStationarity);
    }
    let mut binding = HashMap::new();
    for pname in &h.costates {
        binding.insert(pname.clone(), p_value);
    }
    let roots = crate::expr::poly::real_roots_univariate(du, &h.controls[0], &binding)?;
    Ok(roots.iter().map(|r| r.value).collect())
}

/// One constant-control arc.
#[derive(Debug, Clone, Serialize)]
pub struct ControlArc {
    pub control: Vec<f64>,
    pub duration: f64,
}

/// A piecewise-constant extremal: ordered arcs sharing one constant
/// costate, with interior switch times and the accumulated cost.
#[derive(Debug, Clone, Serialize)]
pub struct PiecewiseSolution {
    pub arcs: Vec<ControlArc>,
    pub switch_times: Vec<f64>,
    pub costate: Vec<f64>,
    pub cost: f64,
    pub max_residual: f64,
    /// Time samples `(t, q, p, u)` of the trajectory.
    #[serde(skip)]
    pub samples: Vec<[f64; 4]>,
}

impl PiecewiseSolution {
    pub fn switches(&self) -> usize {
        self.arcs.len().saturating_sub(1)
    }
}

struct ScalarClass {
    /// Stationarity solved for the costate: `dH/du = c (p - g(u))`.
    g: Polynomial,
    h: Hamiltonian,
    /// Dynamics and cost as functions of the scalar control.
    gamma: Expr,
    cost: Expr,
    control: String,
    t0: f64,
    tf: f64,
    q0: f64,
    qf: f64,
}

impl ScalarClass {
    fn eval_u(&self, e: &Expr, u: f64) -> f64 {
        let mut b = HashMap::with_capacity(1);
        b.insert(self.control.clone(), u);
        e.eval(&b).unwrap_or(f64::NAN)
    }

    fn gamma_at(&self, u: f64) -> f64 {
        self.eval_u(&self.gamma, u)
    }

    fn cost_at(&self, u: f64) -> f64 {
        self.eval_u(&self.cost, u)
    }

    /// `H(p, u) = p Gamma(u) - L(u)`.
    fn h_at(&self, p: f64, u: f64) -> f64 {
        p * self.gamma_at(u) - self.cost_at(u)
    }

    fn g_at(&self, u: f64) -> f64 {
        self.g.eval(u)
    }

    fn roots_for(&self, p: f64) -> Vec<f64> {
        let mut coeffs = self.g.coefficients.clone();
        if coeffs.is_empty() {
            coeffs.push(0.0);
        }
        coeffs[0] -= p;
        Polynomial::new(self.g.variable.clone(), coeffs)
            .real_roots()
            .map(|rs| rs.iter().map(|r| r.value).collect())
            .unwrap_or_default()
    }
}

/// Checks the enumerator's class restrictions and extracts the scalar
/// data `g`, `Gamma`, `L`.
fn scalar_class(problem: &OcProblem) -> Result<ScalarClass, IntegrabilityError> {
    let mut violations = Vec::new();
    if problem.n() != 1 {
        violations.push(format!("needs exactly one state (found {})", problem.n()));
    }
    if problem.m() != 1 {
        violations.push(format!("needs exactly one control (found {})", problem.m()));
    }
    for (i, g) in problem.dynamics.iter().enumerate() {
        if problem.states.iter().any(|s| g.contains_var(s)) {
            violations.push(format!("dynamics[{i}] depends on the state"));
        }
    }
    if problem.states.iter().any(|s| problem.cost.contains_var(s)) {
        violations.push("cost depends on the state".into());
    }
    let tf = match problem.boundary.tf {
        Some(tf) => tf,
        None => {
            violations.push("final time must be fixed".into());
            f64::NAN
        }
    };
    let qf = match problem.boundary.qf.first().copied().flatten() {
        Some(qf) => qf,
        None => {
            violations.push("final state must be fixed".into());
            f64::NAN
        }
    };
    if !violations.is_empty() {
        return Err(IntegrabilityError::ClassViolation(violations));
    }

    let h = build_hamiltonian(problem)?;
    let du = &h.du[0];
    // Stationarity is linear in p with constant coefficient:
    // dH/du = c p + r(u), and g(u) = -r(u) / c.
    let c = du
        .diff(&h.costates[0])
        .as_constant()
        .filter(|c| c.abs() > 1e-12)
        .ok_or_else(|| {
            IntegrabilityError::ClassViolation(vec![
                "stationarity must be linear in the costate with a nonzero constant coefficient"
                    .into(),
            ])
        })?;
    let r = du.substitute(&h.costates[0], &Expr::zero());
    let g_expr = Expr::div(Expr::neg(r), Expr::constant(c));
    let g = extract_polynomial(&g_expr, &h.controls[0], &HashMap::new()).map_err(|e| {
        IntegrabilityError::ClassViolation(vec![format!(
            "stationarity is not polynomial in the control: {e}"
        )])
    })?;

    Ok(ScalarClass {
        g,
        gamma: problem.dynamics[0].clone(),
        cost: problem.effective_cost(),
        control: problem.controls[0].clone(),
        t0: problem.boundary.t0,
        tf,
        q0: problem.boundary.q0[0],
        qf,
        h,
    })
}

fn cauchy_bound(p: &Polynomial) -> f64 {
    match p.degree() {
        None | Some(0) => 1.0,
        Some(d) => {
            let lead = p.coefficients[d].abs();
            1.0 + p.coefficients[..d]
                .iter()
                .fold(0.0f64, |acc, c| acc.max(c.abs() / lead))
        }
    }
}

/// Scan box for the corner-pair search: large enough to contain every
/// `u` that shares its stationarity value with another real root.
fn pair_search_radius(g: &Polynomial) -> f64 {
    let gp = g.derivative();
    let mut radius = cauchy_bound(g).max(cauchy_bound(&gp));
    if let Ok(crits) = gp.real_roots() {
        for c in crits {
            let pc = g.eval(c.value);
            let mut coeffs = g.coefficients.clone();
            coeffs[0] -= pc;
            radius = radius.max(cauchy_bound(&Polynomial::new(g.variable.clone(), coeffs)));
        }
    }
    (radius + 1.0).min(1e3)
}

/// Corner-compatible switching pairs: `(u1, u2)`, `u1 != u2`, both
/// roots of `g(u) = p` for the same `p`, with equal Hamiltonian value.
/// Solved by a Newton iteration on the 2x2 system from grid seeds;
/// returns the deduplicated costate candidates.
fn switching_costates(class: &ScalarClass) -> Vec<f64> {
    let radius = pair_search_radius(&class.g);
    let grid = 600usize;
    let mut candidates: Vec<f64> = Vec::new();

    let dgamma_expr = class.gamma.diff(&class.control);
    let dcost_expr = class.cost.diff(&class.control);
    let gp = class.g.derivative();

    let f = |u1: f64, u2: f64| -> (f64, f64) {
        let p = class.g_at(u1);
        (
            class.g_at(u1) - class.g_at(u2),
            class.h_at(p, u1) - class.h_at(p, u2),
        )
    };
    let jac = |u1: f64, u2: f64| -> [[f64; 2]; 2] {
        let p = class.g_at(u1);
        let gp1 = gp.eval(u1);
        let gp2 = gp.eval(u2);
        [
            [gp1, -gp2],
            [
                gp1 * (class.gamma_at(u1) - class.gamma_at(u2)) + p * class.eval_u(&dgamma_expr, u1)
                    - class.eval_u(&dcost_expr, u1),
                -p * class.eval_u(&dgamma_expr, u2) + class.eval_u(&dcost_expr, u2),
            ],
        ]
    };

    for i in 0..=grid {
        let seed1 = -radius + 2.0 * radius * (i as f64) / (grid as f64);
        let p = class.g_at(seed1);
        if !p.is_finite() {
            continue;
        }
        for seed2 in class.roots_for(p) {
            if (seed2 - seed1).abs() <= 1e-4 * (1.0 + seed1.abs()) {
                continue;
            }
            let (mut u1, mut u2) = (seed1, seed2);
            let mut converged = false;
            for _ in 0..40 {
                let (f1, f2) = f(u1, u2);
                let scale = 1.0 + class.g_at(u1).abs() + class.h_at(class.g_at(u1), u1).abs();
                if f1.abs().max(f2.abs()) <= 1e-12 * scale {
                    converged = true;
                    break;
                }
                let j = jac(u1, u2);
                let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
                if det.abs() < 1e-14 || !det.is_finite() {
                    break;
                }
                let d1 = (f1 * j[1][1] - f2 * j[0][1]) / det;
                let d2 = (j[0][0] * f2 - j[1][0] * f1) / det;
                u1 -= d1;
                u2 -= d2;
                if !u1.is_finite() || !u2.is_finite() {
                    break;
                }
            }
            if converged && (u1 - u2).abs() > 1e-7 * (1.0 + u1.abs()) {
                let p = class.g_at(u1);
                if p.is_finite() {
                    candidates.push(p);
                }
            }
        }
    }

    candidates.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    candidates.dedup_by(|a, b| (*a - *b).abs() <= 1e-8 * (1.0 + b.abs()));
    candidates
}

/// Enumerates piecewise-constant extremals of a scalar problem with
/// state-independent data and fixed endpoints.
///
/// Every returned solution shares one constant costate `p`; each arc
/// control is a root of the stationarity equation at that costate, the
/// Hamiltonian value is continuous across switches, switch times are
/// interior, and the endpoint condition is met within `tol`. Solutions
/// are sorted by cost (ties: fewer switches, then lexicographic
/// controls). With two switches the duration system is underdetermined
/// and the minimum-norm representative of each family is returned.
pub fn enumerate_piecewise(
    problem: &OcProblem,
    max_switches: usize,
    tol: f64,
) -> Result<Vec<PiecewiseSolution>, IntegrabilityError> {
    if max_switches > 2 {
        return Err(IntegrabilityError::ClassViolation(vec![format!(
            "max_switches must be 0, 1 or 2 (got {max_switches})"
        )]));
    }
    let class = scalar_class(problem)?;
    let t_total = class.tf - class.t0;
    let dq = class.qf - class.q0;

    let mut solutions: Vec<PiecewiseSolution> = Vec::new();

    // Constant-control solutions: Gamma(u) T = dq on top of p = g(u).
    let endpoint_expr = Expr::sub(class.gamma.clone(), Expr::constant(dq / t_total));
    if let Ok(roots) =
        crate::expr::poly::real_roots_univariate(&endpoint_expr, &class.control, &HashMap::new())
    {
        for r in roots {
            let u = r.value;
            if !problem.control_admissible(&[u], 1e-12) {
                continue;
            }
            let p = class.g_at(u);
            push_solution(&class, &mut solutions, p, &[u], &[t_total], tol);
        }
    }

    if max_switches >= 1 {
        for p in switching_costates(&class) {
            let roots: Vec<f64> = class
                .roots_for(p)
                .into_iter()
                .filter(|&u| problem.control_admissible(&[u], 1e-12))
                .collect();
            // Group roots into equal-Hamiltonian classes.
            let mut classes: Vec<Vec<f64>> = Vec::new();
            for &u in &roots {
                let hv = class.h_at(p, u);
                match classes
                    .iter_mut()
                    .find(|c| (class.h_at(p, c[0]) - hv).abs() <= 1e-8 * (1.0 + hv.abs()))
                {
                    Some(c) => c.push(u),
                    None => classes.push(vec![u]),
                }
            }
            for group in &classes {
                if group.len() < 2 {
                    continue;
                }
                // One switch: closed-form interior switch time.
                for &ua in group {
                    for &ub in group {
                        if (ua - ub).abs() <= 1e-7 * (1.0 + ua.abs()) {
                            continue;
                        }
                        let (va, vb) = (class.gamma_at(ua), class.gamma_at(ub));
                        if (va - vb).abs() < 1e-12 * (1.0 + va.abs()) {
                            continue;
                        }
                        let d0 = (dq - vb * t_total) / (va - vb);
                        let d1 = t_total - d0;
                        let pos = 1e-9 * t_total;
                        if d0 > pos && d1 > pos {
                            push_solution(&class, &mut solutions, p, &[ua, ub], &[d0, d1], tol);
                        }
                    }
                }
                if max_switches >= 2 {
                    for &ua in group {
                        for &ub in group {
                            for &uc in group {
                                if (ua - ub).abs() <= 1e-7 * (1.0 + ua.abs())
                                    || (ub - uc).abs() <= 1e-7 * (1.0 + ub.abs())
                                {
                                    continue;
                                }
                                let a = DMatrix::from_row_slice(
                                    2,
                                    3,
                                    &[
                                        class.gamma_at(ua),
                                        class.gamma_at(ub),
                                        class.gamma_at(uc),
                                        1.0,
                                        1.0,
                                        1.0,
                                    ],
                                );
                                let b = DVector::from_vec(vec![dq, t_total]);
                                let d = linalg::lstsq(&a, &b, 1e-12);
                                let residual = (&a * &d - &b).amax();
                                let pos = 1e-9 * t_total;
                                if residual <= tol && d.iter().all(|&x| x > pos) {
                                    push_solution(
                                        &class,
                                        &mut solutions,
                                        p,
                                        &[ua, ub, uc],
                                        &[d[0], d[1], d[2]],
                                        tol,
                                    );
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    // Deterministic order: cost ascending; ties by fewer switches,
    // then lexicographic controls.
    solutions.sort_by(|a, b| {
        if (a.cost - b.cost).abs() > 1e-9 * (1.0 + a.cost.abs()) {
            return a.cost.partial_cmp(&b.cost).expect("finite costs");
        }
        a.arcs.len().cmp(&b.arcs.len()).then_with(|| {
            for (x, y) in a.arcs.iter().zip(&b.arcs) {
                match x.control[0].partial_cmp(&y.control[0]).expect("finite") {
                    std::cmp::Ordering::Equal => continue,
                    ord => return ord,
                }
            }
            std::cmp::Ordering::Equal
        })
    });
    Ok(solutions)
}

/// Validates a candidate arc sequence, computes its residual, cost and
/// samples, and appends it unless it duplicates a previous solution.
fn push_solution(
    class: &ScalarClass,
    solutions: &mut Vec<PiecewiseSolution>,
    p: f64,
    controls: &[f64],
    durations: &[f64],
    tol: f64,
) {
    let t_total = class.tf - class.t0;
    // Residual: duration sum, endpoint, stationarity on each arc and
    // Hamiltonian continuity at switches.
    let mut residual = (durations.iter().sum::<f64>() - t_total).abs();
    let mut q = class.q0;
    for (&u, &d) in controls.iter().zip(durations) {
        q += class.gamma_at(u) * d;
    }
    residual = residual.max((q - class.qf).abs());
    let stationarity = |u: f64| -> f64 {
        let mut b = HashMap::new();
        b.insert(class.h.costates[0].clone(), p);
        b.insert(class.control.clone(), u);
        class.h.du[0].eval(&b).map(f64::abs).unwrap_or(f64::INFINITY)
    };
    for &u in controls {
        residual = residual.max(stationarity(u));
    }
    for w in controls.windows(2) {
        residual = residual.max((class.h_at(p, w[0]) - class.h_at(p, w[1])).abs());
    }
    if residual > tol {
        return;
    }

    let cost: f64 = controls
        .iter()
        .zip(durations)
        .map(|(&u, &d)| class.cost_at(u) * d)
        .sum();

    let duplicate = solutions.iter().any(|s| {
        s.arcs.len() == controls.len()
            && s.arcs
                .iter()
                .zip(controls)
                .all(|(arc, &u)| (arc.control[0] - u).abs() <= 1e-6 * (1.0 + u.abs()))
            && s.arcs
                .iter()
                .zip(durations)
                .all(|(arc, &d)| (arc.duration - d).abs() <= 1e-6 * (1.0 + d.abs()))
    });
    if duplicate {
        return;
    }

    let mut switch_times = Vec::with_capacity(controls.len().saturating_sub(1));
    let mut acc = class.t0;
    for &d in &durations[..durations.len() - 1] {
        acc += d;
        switch_times.push(acc);
    }

    // Uniform time samples of the piecewise-linear trajectory.
    let steps = 200usize;
    let mut samples = Vec::with_capacity(steps + 1);
    for j in 0..=steps {
        let t = class.t0 + t_total * (j as f64) / (steps as f64);
        let mut q = class.q0;
        let mut remaining = t - class.t0;
        let mut u_now = controls[0];
        for (&u, &d) in controls.iter().zip(durations) {
            u_now = u;
            if remaining <= d {
                q += class.gamma_at(u) * remaining;
                break;
            }
            q += class.gamma_at(u) * d;
            remaining -= d;
        }
        samples.push([t, q, p, u_now]);
    }

    solutions.push(PiecewiseSolution {
        arcs: controls
            .iter()
            .zip(durations)
            .map(|(&u, &d)| ControlArc {
                control: vec![u],
                duration: d,
            })
            .collect(),
        switch_times,
        costate: vec![p],
        cost,
        max_residual: residual,
        samples,
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pontryagin::{dh_residual, DhPoint};
    use crate::problem::load_problem;
    use crate::sample::halton_box;

    fn bang_bang() -> OcProblem {
        load_problem(
            r#"{
            "name": "bang-bang",
            "states": ["x"],
            "controls": ["u"],
            "dynamics": ["u"],
            "cost": "(u^2-1)^2",
            "boundary": {"t0": 0.0, "tf": 1.0, "q0": [1.0], "qf": [1.0]}
        }"#,
        )
        .unwrap()
    }

    fn train() -> OcProblem {
        load_problem(
            r#"{
            "name": "train",
            "states": ["x1", "x2"],
            "controls": ["u"],
            "dynamics": ["x2", "u"],
            "cost": "0.5*u^2",
            "boundary": {"t0": 0.0, "tf": 1.0, "q0": [0.0, 1.0], "qf": [0.0, 0.0]}
        }"#,
        )
        .unwrap()
    }

    #[test]
    fn stabilize_train_determines_the_control_rate() {
        let h = build_hamiltonian(&train()).unwrap();
        let samples = halton_box(5, 32, 2.0, 0);
        let levels = stabilize(&h, 4, &samples).unwrap();
        assert_eq!(levels.len(), 2);
        assert_eq!(levels[0].constraints.len(), 1);
        assert_eq!(levels[1].status, LevelStatus::Stabilized);
        assert_eq!(levels[1].determined.len(), 1);
        let (name, rate) = &levels[1].determined[0];
        assert_eq!(name, "u");
        // du/dt = -p_x1
        for s in &samples {
            let b = h.bind(&s[0..2], &s[2..4], &s[4..5]);
            let got = rate.eval(&b).unwrap();
            assert!((got + s[2]).abs() <= 1e-12, "{got} vs {}", -s[2]);
        }
    }

    #[test]
    fn stabilize_momentum_constraint_system() {
        // Gamma = u with zero cost: stationarity is p = 0, its drift
        // derivative is identically zero.
        let p = load_problem(
            r#"{
            "name": "drift-free",
            "states": ["x"],
            "controls": ["u"],
            "dynamics": ["u"],
            "cost": "0",
            "boundary": {"t0": 0.0, "tf": 1.0, "q0": [0.0]}
        }"#,
        )
        .unwrap();
        let h = build_hamiltonian(&p).unwrap();
        let samples = halton_box(3, 32, 2.0, 0);
        let levels = stabilize(&h, 4, &samples).unwrap();
        assert_eq!(levels.len(), 2);
        assert_eq!(levels[1].constraints.len(), 1);
        assert_eq!(levels[1].constraints[0].as_constant(), Some(0.0));
        assert_eq!(levels[1].status, LevelStatus::Stabilized);
        assert!(levels[1].determined.is_empty());
    }

    #[test]
    fn stabilize_overactuated_all_rates_determined() {
        let p = load_problem(
            r#"{
            "name": "overactuated",
            "states": ["x", "y"],
            "controls": ["u1", "u2", "u3"],
            "dynamics": ["u1", "u2 + u3"],
            "cost": "0.5*(u1^2 + u2^2 + u3^2)",
            "boundary": {"t0": 0.0, "tf": 1.0, "q0": [0.0, 0.0], "qf": [1.0, 1.0]}
        }"#,
        )
        .unwrap();
        let h = build_hamiltonian(&p).unwrap();
        let samples = halton_box(7, 32, 2.0, 0);
        let levels = stabilize(&h, 4, &samples).unwrap();
        assert_eq!(levels[1].status, LevelStatus::Stabilized);
        assert_eq!(levels[1].determined.len(), 3);
        // dH/dq = 0, so every control rate is identically zero.
        for (_, rate) in &levels[1].determined {
            for s in &samples {
                let b = h.bind(&s[0..2], &s[2..4], &s[4..7]);
                assert!(rate.eval(&b).unwrap().abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn constant_candidates_of_the_quartic_cost() {
        let h = build_hamiltonian(&bang_bang()).unwrap();
        let roots = constant_control_candidates(&h, 0.0).unwrap();
        assert_eq!(roots.len(), 3);
        for (r, want) in roots.iter().zip([-1.0, 0.0, 1.0]) {
            assert!((r - want).abs() <= 1e-10);
        }
        let roots = constant_control_candidates(&h, 24.0).unwrap();
        assert_eq!(roots.len(), 1);
        assert!((roots[0] - 2.0).abs() <= 1e-10);
    }

    #[test]
    fn constant_candidates_linear_stationarity() {
        let p = load_problem(
            r#"{
            "name": "quad",
            "states": ["x"],
            "controls": ["u"],
            "dynamics": ["u"],
            "cost": "u^2/2",
            "boundary": {"t0": 0.0, "tf": 1.0, "q0": [0.0], "qf": [1.0]}
        }"#,
        )
        .unwrap();
        let h = build_hamiltonian(&p).unwrap();
        let roots = constant_control_candidates(&h, 0.7).unwrap();
        assert_eq!(roots.len(), 1);
        assert!((roots[0] - 0.7).abs() <= 1e-12);
    }

    #[test]
    fn constant_candidates_reject_state_dependence() {
        let p = load_problem(
            r#"{
            "name": "bilinear",
            "states": ["x"],
            "controls": ["u"],
            "dynamics": ["x*u"],
            "cost": "u^2/2",
            "boundary": {"t0": 0.0, "tf": 1.0, "q0": [1.0], "qf": [2.0]}
        }"#,
        )
        .unwrap();
        let h = build_hamiltonian(&p).unwrap();
        assert!(matches!(
            constant_control_candidates(&h, 0.0),
            Err(IntegrabilityError::StateDependentStationarity)
        ));
    }

    #[test]
    fn quartic_problem_single_switch_solutions() {
        let p = bang_bang();
        let sols = enumerate_piecewise(&p, 1, 1e-9).unwrap();
        assert_eq!(sols.len(), 3, "{sols:#?}");

        // Two switching solutions with J = 0, switch at 0.5.
        for s in &sols[0..2] {
            assert_eq!(s.arcs.len(), 2);
            assert!(s.cost.abs() <= 1e-9);
            assert!((s.switch_times[0] - 0.5).abs() <= 1e-9);
            assert!(s.costate[0].abs() <= 1e-9);
            let u0 = s.arcs[0].control[0];
            let u1 = s.arcs[1].control[0];
            assert!((u0.abs() - 1.0).abs() <= 1e-9);
            assert!((u0 + u1).abs() <= 1e-9);
        }
        // Ties sort lexicographically: (-1, +1) before (+1, -1).
        assert!(sols[0].arcs[0].control[0] < sols[1].arcs[0].control[0]);

        // One constant solution with J = 1.
        assert_eq!(sols[2].arcs.len(), 1);
        assert!(sols[2].arcs[0].control[0].abs() <= 1e-12);
        assert!((sols[2].cost - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn quartic_problem_zero_switches() {
        let sols = enumerate_piecewise(&bang_bang(), 0, 1e-9).unwrap();
        assert_eq!(sols.len(), 1);
        assert_eq!(sols[0].arcs.len(), 1);
        assert!((sols[0].cost - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn monotone_stationarity_gives_single_constant_solution() {
        // Gamma = u, L = u^2: stationarity p = 2u has one root per
        // costate, so no switching is possible.
        let p = load_problem(
            r#"{
            "name": "ramp",
            "states": ["x"],
            "controls": ["u"],
            "dynamics": ["u"],
            "cost": "u^2",
            "boundary": {"t0": 0.0, "tf": 1.0, "q0": [0.0], "qf": [1.0]}
        }"#,
        )
        .unwrap();
        let sols = enumerate_piecewise(&p, 1, 1e-9).unwrap();
        assert_eq!(sols.len(), 1);
        assert_eq!(sols[0].arcs.len(), 1);
        assert!((sols[0].arcs[0].control[0] - 1.0).abs() <= 1e-12);
        assert!((sols[0].cost - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn out_of_class_problems_are_reported() {
        let err = enumerate_piecewise(&train(), 1, 1e-9).unwrap_err();
        match err {
            IntegrabilityError::ClassViolation(v) => {
                assert!(v.iter().any(|s| s.contains("one state")));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn control_domain_filters_arcs() {
        let mut p = bang_bang();
        p.control_domain.insert("u".into(), (-0.5, 0.5));
        let sols = enumerate_piecewise(&p, 1, 1e-9).unwrap();
        // The u = +/-1 arcs are inadmissible; only the constant stays.
        assert_eq!(sols.len(), 1);
        assert_eq!(sols[0].arcs.len(), 1);
    }

    #[test]
    fn solutions_satisfy_the_implicit_hamilton_equation() {
        let p = bang_bang();
        let h = build_hamiltonian(&p).unwrap();
        let sols = enumerate_piecewise(&p, 1, 1e-9).unwrap();
        for s in &sols {
            for sample in s.samples.iter().step_by(20) {
                let [_, q, pv, u] = *sample;
                let pt = DhPoint {
                    q: vec![q],
                    p: vec![pv],
                    v_q: vec![u],
                    v_p: vec![0.0],
                    u: vec![u],
                };
                let r = dh_residual(&h, &pt).unwrap();
                assert!(r.iter().all(|v| v.abs() <= 1e-9), "{r:?}");
            }
        }
    }

    #[test]
    fn two_switch_families_are_represented_deterministically() {
        let sols = enumerate_piecewise(&bang_bang(), 2, 1e-9).unwrap();
        // The one-switch solutions and constant remain; three-arc
        // minimum-norm representatives join them at J = 0.
        assert!(sols.len() >= 3);
        let three_arc: Vec<_> = sols.iter().filter(|s| s.arcs.len() == 3).collect();
        for s in &three_arc {
            assert!(s.cost.abs() <= 1e-9);
            let d: Vec<f64> = s.arcs.iter().map(|a| a.duration).collect();
            assert!((d.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            // minimum-norm split of the (1,-1,1) family
            assert!((d[0] - 0.25).abs() <= 1e-9 && (d[1] - 0.5).abs() <= 1e-9);
        }
        let again = enumerate_piecewise(&bang_bang(), 2, 1e-9).unwrap();
        assert_eq!(
            format!("{sols:?}").len(),
            format!("{again:?}").len()
        );
    }

    /// Brute-force sweep: costate grid, all root pairs, switch times on
    /// a uniform grid. Returns the cheapest coarsely-admissible cost.
    fn oracle_best_cost(problem: &OcProblem, p_max: f64) -> f64 {
        let class = scalar_class(problem).unwrap();
        let t_total = class.tf - class.t0;
        let dq = class.qf - class.q0;
        let adm = 1e-3;
        let mut best = f64::INFINITY;
        let p_steps = (2.0 * p_max / 1e-3) as usize;
        for i in 0..=p_steps {
            let p = -p_max + (i as f64) * 1e-3;
            let roots = class.roots_for(p);
            for &u in &roots {
                if (class.gamma_at(u) * t_total - dq).abs() <= adm {
                    best = best.min(class.cost_at(u) * t_total);
                }
            }
            for &ua in &roots {
                for &ub in &roots {
                    if (ua - ub).abs() <= 1e-9 {
                        continue;
                    }
                    let (va, vb) = (class.gamma_at(ua), class.gamma_at(ub));
                    let (la, lb) = (class.cost_at(ua), class.cost_at(ub));
                    let mut t1 = 0.0;
                    while t1 <= t_total {
                        if (va * t1 + vb * (t_total - t1) - dq).abs() <= adm {
                            best = best.min(la * t1 + lb * (t_total - t1));
                        }
                        t1 += 1e-4;
                    }
                }
            }
        }
        best
    }

    #[test]
    fn oracle_finds_nothing_cheaper() {
        let p = bang_bang();
        let sols = enumerate_piecewise(&p, 1, 1e-9).unwrap();
        let best = sols.first().map(|s| s.cost).unwrap();
        let oracle = oracle_best_cost(&p, 2.0);
        assert!(
            oracle >= best - 1e-9,
            "oracle found {oracle}, enumeration returned {best}"
        );
    }
}
