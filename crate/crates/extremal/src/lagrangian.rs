//! The Lagrangian (velocity) side of the theory.
//!
//! Points of `T*TQ` are written `(q, qdot, a, b)` where the covector is
//! `a_i dq^i + b_i d(qdot^i)`. The submanifold cut out by
//!
//! ```text
//! a_i + b_j dGamma^j/dq^i = dL/dq^i        (one equation per state)
//! b_i dGamma^i/du^a       = dL/du^a        (one equation per control)
//! qdot^i                  = Gamma^i(q, u)
//! ```
//!
//! is the image of the implicit Hamilton equation under the canonical
//! map `TT*Q -> T*TQ`. On it live the Legendre transformation
//! `(q, qdot, a, b) -> (q, b)`, the energy `E = b . qdot - L`, and —
//! when the dynamics embed the controls as velocities — a reduced
//! chart `(q, b_alpha, u)` carrying the pulled-back symplectic form
//! and the equations of motion `i_X Omega = dE`.

use crate::expr::{EvalError, Expr};
use crate::linalg;
use crate::pontryagin::DhPoint;
use crate::problem::OcProblem;
use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use std::collections::HashMap;

/// A point of `T*TQ` with a witness control.
#[derive(Debug, Clone, PartialEq)]
pub struct LclPoint {
    pub q: Vec<f64>,
    pub qdot: Vec<f64>,
    /// Covector block on `dq`.
    pub a: Vec<f64>,
    /// Covector block on `d(qdot)`.
    pub b: Vec<f64>,
    /// Witness control (caller-supplied; this module never searches).
    pub u: Vec<f64>,
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum LagrangianError {
    #[error("point violates the residual precondition (max residual {residual:.3e})")]
    ResidualPrecondition { residual: f64 },
    #[error("problem is not in embedded normal form: {0}")]
    NotEmbedded(String),
    #[error("presymplectic system is inconsistent at this point (residual {residual:.3e})")]
    Inconsistent { residual: f64 },
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Residual tolerance below which a point counts as lying on the
/// submanifold for the Legendre / energy preconditions.
pub const LCL_PRE_TOL: f64 = 1e-8;

/// Residuals of the defining equations at `pt`, concatenated as
/// (state equations, control equations, velocity match). The zero
/// vector witnesses membership with control `pt.u`.
pub fn lcl_residual(problem: &OcProblem, pt: &LclPoint) -> Result<Vec<f64>, EvalError> {
    let (n, m) = (problem.n(), problem.m());
    let binding = problem.bind_qu(&pt.q, &pt.u);
    let cost = problem.effective_cost();

    let mut r = Vec::with_capacity(2 * n + m);
    for (i, qi) in problem.states.iter().enumerate() {
        let mut acc = pt.a[i];
        for (j, gj) in problem.dynamics.iter().enumerate() {
            acc += pt.b[j] * gj.diff(qi).eval(&binding)?;
        }
        acc -= cost.diff(qi).eval(&binding)?;
        r.push(acc);
    }
    for ua in &problem.controls {
        let mut acc = 0.0;
        for (i, gi) in problem.dynamics.iter().enumerate() {
            acc += pt.b[i] * gi.diff(ua).eval(&binding)?;
        }
        acc -= cost.diff(ua).eval(&binding)?;
        r.push(acc);
    }
    for (i, gi) in problem.dynamics.iter().enumerate() {
        r.push(pt.qdot[i] - gi.eval(&binding)?);
    }
    Ok(r)
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |acc, x| acc.max(x.abs()))
}

/// The image of an implicit-Hamilton point under the canonical map
/// `(q, p, qdot, pdot) -> (q, qdot, pdot, p)`, keeping the witness.
pub fn dh_to_lcl(pt: &DhPoint) -> LclPoint {
    LclPoint {
        q: pt.q.clone(),
        qdot: pt.v_q.clone(),
        a: pt.v_p.clone(),
        b: pt.p.clone(),
        u: pt.u.clone(),
    }
}

/// One failing sample of an identity check.
#[derive(Debug, Clone, Serialize)]
pub struct FailingSample {
    pub index: usize,
    pub residual: f64,
}

/// Pass/fail summary of a pointwise identity over a sample set.
#[derive(Debug, Clone, Serialize)]
pub struct IdentityCheck {
    pub name: String,
    pub tol: f64,
    pub total: usize,
    pub passes: usize,
    pub max_residual: f64,
    /// First few failures, for diagnostics.
    pub failures: Vec<FailingSample>,
}

impl IdentityCheck {
    pub fn passed(&self) -> bool {
        self.passes == self.total
    }

    pub fn from_residuals(name: &str, tol: f64, residuals: &[f64]) -> IdentityCheck {
        let mut passes = 0;
        let mut max_residual = 0.0f64;
        let mut failures = Vec::new();
        for (index, &r) in residuals.iter().enumerate() {
            max_residual = max_residual.max(r);
            if r <= tol {
                passes += 1;
            } else if failures.len() < 8 {
                failures.push(FailingSample { index, residual: r });
            }
        }
        IdentityCheck {
            name: name.to_string(),
            tol,
            total: residuals.len(),
            passes,
            max_residual,
            failures,
        }
    }
}

/// Default tolerance of the alpha-relation check.
pub const ALPHA_RELATION_TOL: f64 = 1e-10;

/// Verifies that the canonical-map image of each implicit-Hamilton
/// point satisfies the velocity-side equations.
pub fn check_alpha_relation(
    problem: &OcProblem,
    samples: &[DhPoint],
    tol: f64,
) -> Result<IdentityCheck, EvalError> {
    let mut residuals = Vec::with_capacity(samples.len());
    for pt in samples {
        let lcl = dh_to_lcl(pt);
        let r = lcl_residual(problem, &lcl)?;
        residuals.push(max_abs(&r));
    }
    Ok(IdentityCheck::from_residuals("alpha-relation", tol, &residuals))
}

/// The Legendre transformation: the base point `(q, b)` of the inverse
/// canonical map applied to `pt`. Requires `pt` to lie on the
/// submanifold within [`LCL_PRE_TOL`].
pub fn legendre(
    problem: &OcProblem,
    pt: &LclPoint,
) -> Result<(Vec<f64>, Vec<f64>), LagrangianError> {
    let residual = max_abs(&lcl_residual(problem, pt)?);
    if residual > LCL_PRE_TOL {
        return Err(LagrangianError::ResidualPrecondition { residual });
    }
    Ok((pt.q.clone(), pt.b.clone()))
}

/// The energy `E = b . qdot - L(q, u)` at a point of the submanifold.
pub fn energy(problem: &OcProblem, pt: &LclPoint) -> Result<f64, LagrangianError> {
    let residual = max_abs(&lcl_residual(problem, pt)?);
    if residual > LCL_PRE_TOL {
        return Err(LagrangianError::ResidualPrecondition { residual });
    }
    let l = problem
        .effective_cost()
        .eval(&problem.bind_qu(&pt.q, &pt.u))?;
    let bq: f64 = pt.b.iter().zip(&pt.qdot).map(|(a, b)| a * b).sum();
    Ok(bq - l)
}

/// Reduced chart on the submanifold for dynamics in embedded normal
/// form: some states satisfy `qdot = u` for distinct controls, the
/// remaining states follow general right-hand sides. Chart coordinates
/// are `(q, b_alpha, u_matched)` in that order.
#[derive(Debug, Clone)]
pub struct ReducedChart {
    pub n: usize,
    /// Chart coordinate names: states, then `b_<state>` for each
    /// unmatched state, then the matched controls.
    pub coord_names: Vec<String>,
    /// Pairs (state index, control index) with `qdot^i = u^a`.
    pub matched: Vec<(usize, usize)>,
    /// State indices with general right-hand sides.
    pub f_states: Vec<usize>,
    /// Energy in chart coordinates.
    pub energy: Expr,
    /// Pulled-back symplectic form, `omega[i][j] = Omega(e_i, e_j)`.
    pub omega: Vec<Vec<Expr>>,
    /// Closed form of the Legendre transformation, components
    /// `(q_1..q_n, p_1..p_n)` as expressions in the chart coordinates.
    pub legendre: Vec<Expr>,
}

impl ReducedChart {
    pub fn dim(&self) -> usize {
        2 * self.n
    }

    pub fn bind(&self, point: &[f64]) -> HashMap<String, f64> {
        self.coord_names
            .iter()
            .cloned()
            .zip(point.iter().copied())
            .collect()
    }

    /// Evaluates the form matrix at a chart point.
    pub fn omega_at(&self, point: &[f64]) -> Result<DMatrix<f64>, EvalError> {
        let binding = self.bind(point);
        let d = self.dim();
        let mut m = DMatrix::<f64>::zeros(d, d);
        for i in 0..d {
            for j in 0..d {
                m[(i, j)] = self.omega[i][j].eval(&binding)?;
            }
        }
        Ok(m)
    }

    /// Evaluates the energy gradient at a chart point.
    pub fn energy_gradient(&self, point: &[f64]) -> Result<DVector<f64>, EvalError> {
        let binding = self.bind(point);
        let mut g = DVector::<f64>::zeros(self.dim());
        for (i, name) in self.coord_names.iter().enumerate() {
            g[i] = self.energy.diff(name).eval(&binding)?;
        }
        Ok(g)
    }

    /// Determinant of the Legendre Jacobian at a chart point
    /// (local invertibility probe).
    pub fn legendre_jacobian_det(&self, point: &[f64]) -> Result<f64, EvalError> {
        let binding = self.bind(point);
        let d = self.dim();
        let mut j = DMatrix::<f64>::zeros(d, d);
        for (r, le) in self.legendre.iter().enumerate() {
            for (c, name) in self.coord_names.iter().enumerate() {
                j[(r, c)] = le.diff(name).eval(&binding)?;
            }
        }
        Ok(j.determinant())
    }
}

/// Constructs the reduced chart, eliminating unmatched controls from
/// the control equations when those are affine with constant
/// coefficients. Problems outside this class are declined (the other
/// operations of the module remain usable).
pub fn build_reduced_chart(problem: &OcProblem) -> Result<ReducedChart, LagrangianError> {
    let (n, m) = (problem.n(), problem.m());
    let cost = problem.effective_cost();

    // Match states whose right-hand side is exactly one control symbol.
    let mut matched: Vec<(usize, usize)> = Vec::new();
    let mut control_used = vec![false; m];
    for (i, gi) in problem.dynamics.iter().enumerate() {
        if let Expr::Var(name) = gi {
            if let Some(a) = problem.controls.iter().position(|c| c == name) {
                if !control_used[a] {
                    control_used[a] = true;
                    matched.push((i, a));
                }
            }
        }
    }
    let matched_states: Vec<usize> = matched.iter().map(|&(i, _)| i).collect();
    let f_states: Vec<usize> = (0..n).filter(|i| !matched_states.contains(i)).collect();
    let unmatched_controls: Vec<usize> = (0..m).filter(|&a| !control_used[a]).collect();

    if matched.is_empty() && !unmatched_controls.is_empty() {
        return Err(LagrangianError::NotEmbedded(
            "no dynamics component is a bare control variable".into(),
        ));
    }

    let b_names: Vec<String> = f_states
        .iter()
        .map(|&i| format!("b_{}", problem.states[i]))
        .collect();
    for name in &b_names {
        if problem.states.contains(name) || problem.controls.contains(name) {
            return Err(LagrangianError::NotEmbedded(format!(
                "declared symbol `{name}` collides with a chart coordinate"
            )));
        }
    }

    // Control equations for the unmatched controls:
    //   g_nu = sum_alpha b_alpha dF^alpha/du^nu - dL/du^nu = 0.
    // Eliminate u_nu when the system is affine in the unmatched
    // controls with a constant, invertible coefficient matrix.
    let g_exprs: Vec<Expr> = unmatched_controls
        .iter()
        .map(|&nu| {
            let uname = &problem.controls[nu];
            let mut acc = Expr::zero();
            for (&alpha, bname) in f_states.iter().zip(&b_names) {
                acc = Expr::add(
                    acc,
                    Expr::mul(Expr::var(bname.clone()), problem.dynamics[alpha].diff(uname)),
                );
            }
            Expr::sub(acc, cost.diff(uname))
        })
        .collect();

    let k = unmatched_controls.len();
    let mut elimination: Vec<(String, Expr)> = Vec::new();
    if k > 0 {
        let mut coeff = DMatrix::<f64>::zeros(k, k);
        for (r, g) in g_exprs.iter().enumerate() {
            for (c, &nu) in unmatched_controls.iter().enumerate() {
                let d = g.diff(&problem.controls[nu]);
                match d.as_constant() {
                    Some(v) => coeff[(r, c)] = v,
                    None => {
                        return Err(LagrangianError::NotEmbedded(format!(
                            "control equation for `{}` is not affine with constant \
                             coefficients in the unmatched controls",
                            problem.controls[nu]
                        )))
                    }
                }
            }
        }
        let inv = coeff.clone().try_inverse().ok_or_else(|| {
            LagrangianError::NotEmbedded(
                "unmatched-control equations have a singular coefficient matrix".into(),
            )
        })?;
        // Remainders with the unmatched controls zeroed out.
        let remainders: Vec<Expr> = g_exprs
            .iter()
            .map(|g| {
                let mut r = g.clone();
                for &nu in &unmatched_controls {
                    r = r.substitute(&problem.controls[nu], &Expr::zero());
                }
                r
            })
            .collect();
        for (c, &nu) in unmatched_controls.iter().enumerate() {
            // u_nu = sum_r inv[c][r] * (-remainder_r)
            let expr = Expr::sum(
                (0..k).map(|r| Expr::mul(Expr::constant(-inv[(c, r)]), remainders[r].clone())),
            );
            elimination.push((problem.controls[nu].clone(), expr));
        }
    }

    let eliminate = |e: &Expr| -> Expr {
        let mut out = e.clone();
        for (name, repl) in &elimination {
            out = out.substitute(name, repl);
        }
        out
    };

    // Momenta in chart coordinates: for a matched state the control
    // equation gives b = dL/du - sum_alpha b_alpha dF^alpha/du; for an
    // unmatched state the momentum is the chart coordinate itself.
    let mut momentum: Vec<Expr> = vec![Expr::zero(); n];
    for &(i, a) in &matched {
        let uname = &problem.controls[a];
        let mut acc = cost.diff(uname);
        for (&alpha, bname) in f_states.iter().zip(&b_names) {
            acc = Expr::sub(
                acc,
                Expr::mul(Expr::var(bname.clone()), problem.dynamics[alpha].diff(uname)),
            );
        }
        momentum[i] = eliminate(&acc);
    }
    for (&alpha, bname) in f_states.iter().zip(&b_names) {
        momentum[alpha] = Expr::var(bname.clone());
    }

    // Energy E = sum_a u^a b_a + sum_alpha b_alpha F^alpha - L.
    let mut e_expr = Expr::zero();
    for &(i, a) in &matched {
        e_expr = Expr::add(
            e_expr,
            Expr::mul(Expr::var(problem.controls[a].clone()), momentum[i].clone()),
        );
    }
    for (&alpha, bname) in f_states.iter().zip(&b_names) {
        e_expr = Expr::add(
            e_expr,
            Expr::mul(Expr::var(bname.clone()), eliminate(&problem.dynamics[alpha])),
        );
    }
    e_expr = Expr::sub(e_expr, eliminate(&cost));

    let mut coord_names: Vec<String> = problem.states.clone();
    coord_names.extend(b_names.iter().cloned());
    coord_names.extend(matched.iter().map(|&(_, a)| problem.controls[a].clone()));
    if coord_names.len() != 2 * n {
        return Err(LagrangianError::NotEmbedded(format!(
            "chart has {} coordinates, expected {}",
            coord_names.len(),
            2 * n
        )));
    }

    // Legendre closed form and its Jacobian.
    let legendre_exprs: Vec<Expr> = problem
        .states
        .iter()
        .map(|s| Expr::var(s.clone()))
        .chain(momentum.iter().cloned())
        .collect();
    let d = 2 * n;
    let mut jac: Vec<Vec<Expr>> = Vec::with_capacity(d);
    for le in &legendre_exprs {
        jac.push(coord_names.iter().map(|c| le.diff(c)).collect());
    }

    // Omega = Leg^* omega_Q: with the canonical block form,
    // Omega(e_i, e_j) = sum_k (J_{k,i} J_{n+k,j} - J_{n+k,i} J_{k,j}).
    let mut omega = vec![vec![Expr::zero(); d]; d];
    #[allow(clippy::needless_range_loop)]
    for i in 0..d {
        for j in 0..d {
            let mut acc = Expr::zero();
            for k in 0..n {
                acc = Expr::add(
                    acc,
                    Expr::sub(
                        Expr::mul(jac[k][i].clone(), jac[n + k][j].clone()),
                        Expr::mul(jac[n + k][i].clone(), jac[k][j].clone()),
                    ),
                );
            }
            omega[i][j] = acc;
        }
    }

    Ok(ReducedChart {
        n,
        coord_names,
        matched,
        f_states,
        energy: e_expr,
        omega,
        legendre: legendre_exprs,
    })
}

/// A solution of the reduced equations of motion at a point.
#[derive(Debug, Clone, PartialEq)]
pub enum PresymplecticSolution {
    /// The form is nondegenerate at the point; the field is unique.
    Unique(Vec<f64>),
    /// Degenerate but consistent: a particular solution plus a basis
    /// of the degeneracy directions.
    Family {
        particular: Vec<f64>,
        kernel: Vec<Vec<f64>>,
    },
}

/// Solves `i_X Omega = dE` at a chart point. With the stored
/// convention `omega[i][j] = Omega(e_i, e_j)` the component equations
/// read `Omega^T X = grad E` (contraction in the first slot).
pub fn presymplectic_field(
    chart: &ReducedChart,
    point: &[f64],
) -> Result<PresymplecticSolution, LagrangianError> {
    let omega = chart.omega_at(point)?;
    let grad = chart.energy_gradient(point)?;
    let a = omega.transpose();
    let rank = linalg::rank_with_scale(&a, 1e-12, None);
    let x = linalg::lstsq(&a, &grad, 1e-12);
    let residual = (&a * &x - &grad).amax();
    if residual > 1e-10 * (1.0 + grad.amax()) {
        return Err(LagrangianError::Inconsistent { residual });
    }
    if rank == chart.dim() {
        Ok(PresymplecticSolution::Unique(x.iter().copied().collect()))
    } else {
        let kernel = linalg::kernel_basis(&a, 1e-12)
            .into_iter()
            .map(|v| v.iter().copied().collect())
            .collect();
        Ok(PresymplecticSolution::Family {
            particular: x.iter().copied().collect(),
            kernel,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pontryagin::{build_hamiltonian, sample_dh_points};
    use crate::problem::load_problem;
    use crate::sample::SplitMix64;

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

    fn overactuated() -> OcProblem {
        load_problem(
            r#"{
            "name": "overactuated",
            "states": ["x", "y"],
            "controls": ["u1", "u2", "u3"],
            "dynamics": ["u1", "u2 + u3"],
            "cost": "0.5*(u1^2 + u2^2 + u3^2)",
            "boundary": {"t0": 0.0, "tf": 1.0, "q0": [0.0, 0.0], "qf": [1.0, 1.0]}
        }"#,
        )
        .unwrap()
    }

    fn toy() -> OcProblem {
        load_problem(
            r#"{
            "name": "toy",
            "states": ["x"],
            "controls": ["u1", "u2"],
            "dynamics": ["u1 + u2"],
            "cost": "x*(u1 - u2)",
            "boundary": {"t0": 0.0, "tf": 1.0, "q0": [0.0], "qf": [0.0]}
        }"#,
        )
        .unwrap()
    }

    fn train_point(x: [f64; 2], p1: f64, u: f64) -> LclPoint {
        LclPoint {
            q: x.to_vec(),
            qdot: vec![x[1], u],
            a: vec![0.0, -p1],
            b: vec![p1, u],
            u: vec![u],
        }
    }

    #[test]
    fn toy_points_lie_on_the_submanifold() {
        // (0, r1, r2, 0): the witness is pinned by the equations,
        // u = ((r1+r2)/2, (r1-r2)/2).
        let p = toy();
        let mut rng = SplitMix64::new(4);
        for _ in 0..50 {
            let (r1, r2) = (rng.uniform(-3.0, 3.0), rng.uniform(-3.0, 3.0));
            let pt = LclPoint {
                q: vec![0.0],
                qdot: vec![r1],
                a: vec![r2],
                b: vec![0.0],
                u: vec![(r1 + r2) / 2.0, (r1 - r2) / 2.0],
            };
            let r = lcl_residual(&p, &pt).unwrap();
            assert!(r.iter().all(|v| v.abs() <= 1e-12), "{r:?}");
        }
        // x != 0 breaks the control equations
        let bad = LclPoint {
            q: vec![0.5],
            qdot: vec![1.0],
            a: vec![0.0],
            b: vec![0.0],
            u: vec![0.5, 0.5],
        };
        let r = lcl_residual(&p, &bad).unwrap();
        assert!(r.iter().any(|v| v.abs() > 0.1));
    }

    #[test]
    fn train_point_is_zero_residual() {
        let p = train();
        let pt = train_point([0.7, -1.1], 0.4, 0.9);
        let r = lcl_residual(&p, &pt).unwrap();
        assert!(r.iter().all(|v| v.abs() <= 1e-12), "{r:?}");
    }

    #[test]
    fn overactuated_point_is_zero_residual() {
        let p = overactuated();
        let (x, y, u1, u2) = (0.3, -0.8, 1.2, -0.4);
        let pt = LclPoint {
            q: vec![x, y],
            qdot: vec![u1, 2.0 * u2],
            a: vec![0.0, 0.0],
            b: vec![u1, u2],
            u: vec![u1, u2, u2],
        };
        let r = lcl_residual(&p, &pt).unwrap();
        assert!(r.iter().all(|v| v.abs() <= 1e-12), "{r:?}");
    }

    #[test]
    fn alpha_relation_on_sampled_points() {
        for problem in [train(), overactuated(), toy()] {
            let h = build_hamiltonian(&problem).unwrap();
            let samples = sample_dh_points(&h, 200, 5, 2.0).unwrap();
            assert!(samples.len() >= 100, "{}", problem.name);
            let check = check_alpha_relation(&problem, &samples, ALPHA_RELATION_TOL).unwrap();
            assert!(check.passed(), "{}: {:?}", problem.name, check.max_residual);
        }
    }

    #[test]
    fn alpha_relation_detects_perturbation() {
        let p = train();
        let h = build_hamiltonian(&p).unwrap();
        let mut samples = sample_dh_points(&h, 10, 6, 2.0).unwrap();
        for s in &mut samples {
            s.p[0] += 1e-3;
        }
        let check = check_alpha_relation(&p, &samples, ALPHA_RELATION_TOL).unwrap();
        assert!(!check.passed());
        assert!(check.max_residual > 1e-4);
    }

    #[test]
    fn legendre_train_closed_form() {
        let p = train();
        let pt = train_point([0.2, 1.3], -0.6, 0.8);
        let (q, b) = legendre(&p, &pt).unwrap();
        assert_eq!(q, vec![0.2, 1.3]);
        assert_eq!(b, vec![-0.6, 0.8]);
    }

    #[test]
    fn legendre_requires_the_residual_precondition() {
        let p = train();
        let mut pt = train_point([0.2, 1.3], -0.6, 0.8);
        pt.b[0] += 1e-3;
        assert!(matches!(
            legendre(&p, &pt),
            Err(LagrangianError::ResidualPrecondition { .. })
        ));
    }

    #[test]
    fn energy_closed_forms() {
        let p = train();
        let (x, p1, u) = ([0.5, -0.7], 1.1, 0.3);
        let pt = train_point(x, p1, u);
        let e = energy(&p, &pt).unwrap();
        assert!((e - (p1 * x[1] + 0.5 * u * u)).abs() <= 1e-12);

        let p = overactuated();
        let (u1, u2) = (0.9, -1.4);
        let pt = LclPoint {
            q: vec![0.1, 0.2],
            qdot: vec![u1, 2.0 * u2],
            a: vec![0.0, 0.0],
            b: vec![u1, u2],
            u: vec![u1, u2, u2],
        };
        let e = energy(&p, &pt).unwrap();
        assert!((e - (0.5 * u1 * u1 + u2 * u2)).abs() <= 1e-12);
    }

    #[test]
    fn zero_cost_zero_covector_energy() {
        let p = load_problem(
            r#"{
            "name": "drift",
            "states": ["x"],
            "controls": ["u"],
            "dynamics": ["u"],
            "cost": "0",
            "boundary": {"t0": 0.0, "tf": 1.0, "q0": [0.0]}
        }"#,
        )
        .unwrap();
        let pt = LclPoint {
            q: vec![1.0],
            qdot: vec![0.5],
            a: vec![0.0],
            b: vec![0.0],
            u: vec![0.5],
        };
        assert_eq!(energy(&p, &pt).unwrap(), 0.0);
    }

    #[test]
    fn energy_agrees_across_witnesses() {
        // L depends on the controls only through Gamma, so distinct
        // witnesses of the same velocity give the same energy.
        let p = load_problem(
            r#"{
            "name": "fiberwise",
            "states": ["x"],
            "controls": ["u1", "u2"],
            "dynamics": ["u1 + u2"],
            "cost": "0.5*(u1 + u2)^2",
            "boundary": {"t0": 0.0, "tf": 1.0, "q0": [0.0]}
        }"#,
        )
        .unwrap();
        let v = 1.7;
        let mut values = Vec::new();
        for s in [-2.0, -0.3, 0.0, 1.0, 2.5] {
            let pt = LclPoint {
                q: vec![0.4],
                qdot: vec![v],
                a: vec![0.0],
                b: vec![v],
                u: vec![s, v - s],
            };
            values.push(energy(&p, &pt).unwrap());
        }
        for w in &values {
            assert!((w - values[0]).abs() <= 1e-10);
        }
    }

    #[test]
    fn reduced_chart_train() {
        let p = train();
        let chart = build_reduced_chart(&p).unwrap();
        assert_eq!(chart.coord_names, vec!["x1", "x2", "b_x1", "u"]);

        // E = b_x1 * x2 + u^2/2
        let binding = chart.bind(&[0.3, 1.2, -0.5, 0.8]);
        let e = chart.energy.eval(&binding).unwrap();
        assert!((e - (-0.5 * 1.2 + 0.5 * 0.8 * 0.8)).abs() <= 1e-12);

        // Omega = dx1 ^ db_x1 + dx2 ^ du as a constant matrix
        let omega = chart.omega_at(&[0.3, 1.2, -0.5, 0.8]).unwrap();
        let mut want = DMatrix::<f64>::zeros(4, 4);
        want[(0, 2)] = 1.0;
        want[(2, 0)] = -1.0;
        want[(1, 3)] = 1.0;
        want[(3, 1)] = -1.0;
        assert_eq!(omega, want);
        assert!((chart.legendre_jacobian_det(&[0.3, 1.2, -0.5, 0.8]).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reduced_chart_overactuated() {
        let p = overactuated();
        let chart = build_reduced_chart(&p).unwrap();
        assert_eq!(chart.coord_names, vec!["x", "y", "b_y", "u1"]);

        // E = u1^2/2 + b_y^2
        let binding = chart.bind(&[0.0, 0.0, 0.7, -1.1]);
        let e = chart.energy.eval(&binding).unwrap();
        assert!((e - (0.5 * 1.1 * 1.1 + 0.7 * 0.7)).abs() <= 1e-12);

        // Omega = dx ^ du1 + dy ^ db_y
        let omega = chart.omega_at(&[0.0, 0.0, 0.7, -1.1]).unwrap();
        let mut want = DMatrix::<f64>::zeros(4, 4);
        want[(0, 3)] = 1.0;
        want[(3, 0)] = -1.0;
        want[(1, 2)] = 1.0;
        want[(2, 1)] = -1.0;
        assert_eq!(omega, want);
    }

    #[test]
    fn reduced_chart_declines_non_embedded_dynamics() {
        let p = load_problem(
            r#"{
            "name": "u-squared",
            "states": ["q"],
            "controls": ["u"],
            "dynamics": ["u^2"],
            "cost": "1",
            "boundary": {"t0": 0.0, "tf": 1.0, "q0": [0.0]}
        }"#,
        )
        .unwrap();
        assert!(matches!(
            build_reduced_chart(&p),
            Err(LagrangianError::NotEmbedded(_))
        ));
    }

    #[test]
    fn presymplectic_field_train() {
        let p = train();
        let chart = build_reduced_chart(&p).unwrap();
        let mut rng = SplitMix64::new(9);
        for _ in 0..50 {
            let pt = [
                rng.uniform(-2.0, 2.0),
                rng.uniform(-2.0, 2.0),
                rng.uniform(-2.0, 2.0),
                rng.uniform(-2.0, 2.0),
            ];
            // chart order (x1, x2, b_x1 = p1, u)
            let want = [pt[1], pt[3], 0.0, -pt[2]];
            match presymplectic_field(&chart, &pt).unwrap() {
                PresymplecticSolution::Unique(x) => {
                    for (a, b) in x.iter().zip(want) {
                        assert!((a - b).abs() <= 1e-12, "{x:?} vs {want:?}");
                    }
                }
                other => panic!("expected a unique field, got {other:?}"),
            }
        }
    }

    #[test]
    fn presymplectic_field_overactuated() {
        let p = overactuated();
        let chart = build_reduced_chart(&p).unwrap();
        let mut rng = SplitMix64::new(10);
        for _ in 0..50 {
            let pt = [
                rng.uniform(-2.0, 2.0),
                rng.uniform(-2.0, 2.0),
                rng.uniform(-2.0, 2.0),
                rng.uniform(-2.0, 2.0),
            ];
            // chart order (x, y, b_y = u2, u1): field (u1, 2u2, 0, 0)
            let want = [pt[3], 2.0 * pt[2], 0.0, 0.0];
            match presymplectic_field(&chart, &pt).unwrap() {
                PresymplecticSolution::Unique(x) => {
                    for (a, b) in x.iter().zip(want) {
                        assert!((a - b).abs() <= 1e-12, "{x:?} vs {want:?}");
                    }
                }
                other => panic!("expected a unique field, got {other:?}"),
            }
        }
    }

    #[test]
    fn constant_energy_gives_zero_field() {
        // Invertible form, constant energy: the field vanishes.
        let chart = ReducedChart {
            n: 1,
            coord_names: vec!["c0".into(), "c1".into()],
            matched: vec![],
            f_states: vec![0],
            energy: Expr::constant(5.0),
            omega: {
                let mut o = vec![vec![Expr::zero(); 2]; 2];
                o[0][1] = Expr::one();
                o[1][0] = Expr::constant(-1.0);
                o
            },
            legendre: vec![Expr::var("c0"), Expr::var("c1")],
        };
        match presymplectic_field(&chart, &[0.4, 0.9]).unwrap() {
            PresymplecticSolution::Unique(x) => {
                assert!(x.iter().all(|v| v.abs() <= 1e-12), "{x:?}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn degenerate_form_paths() {
        // Hand-built chart with a rank-2 form on a 2n=4 chart:
        // consistent gradients give a family, inconsistent ones error.
        let chart = ReducedChart {
            n: 2,
            coord_names: vec!["c0".into(), "c1".into(), "c2".into(), "c3".into()],
            matched: vec![],
            f_states: vec![0, 1],
            // E = c0 for the consistent case handled below by editing
            energy: Expr::var("c0"),
            omega: {
                // Omega = dc0 ^ dc1 only, degenerate in (c2, c3)
                let mut o = vec![vec![Expr::zero(); 4]; 4];
                o[0][1] = Expr::one();
                o[1][0] = Expr::constant(-1.0);
                o
            },
            legendre: vec![
                Expr::var("c0"),
                Expr::var("c1"),
                Expr::zero(),
                Expr::zero(),
            ],
        };
        // dE = (1, 0, 0, 0) lies in the range: family expected.
        match presymplectic_field(&chart, &[0.0, 0.0, 0.0, 0.0]).unwrap() {
            PresymplecticSolution::Family { particular, kernel } => {
                assert_eq!(kernel.len(), 2);
                // Omega^T X = dE: -X1 = 1 -> X = (0, -1, *, *)
                assert!((particular[1] + 1.0).abs() <= 1e-12);
            }
            other => panic!("{other:?}"),
        }

        let inconsistent = ReducedChart {
            energy: Expr::var("c2"),
            ..chart
        };
        assert!(matches!(
            presymplectic_field(&inconsistent, &[0.0, 0.0, 0.0, 0.0]),
            Err(LagrangianError::Inconsistent { .. })
        ));
    }

    #[test]
    fn energy_equals_hamiltonian_through_legendre() {
        for problem in [train(), overactuated(), toy()] {
            let h = build_hamiltonian(&problem).unwrap();
            let samples = sample_dh_points(&h, 100, 8, 2.0).unwrap();
            for dh in &samples {
                let pt = dh_to_lcl(dh);
                let e = energy(&problem, &pt).unwrap();
                let (q, p) = legendre(&problem, &pt).unwrap();
                let hv = h.value(&q, &p, &pt.u).unwrap();
                assert!(
                    (e - hv).abs() <= 1e-12 * (1.0 + hv.abs()),
                    "{}: E={e} H={hv}",
                    problem.name
                );
            }
        }
    }
}
