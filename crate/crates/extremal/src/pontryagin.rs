//! The Hamiltonian side: builds `H(q, p, u) = p . Gamma - L` (normal
//! mode) or `p . Gamma` (abnormal mode), its mixed second-derivative
//! rank matrix, the regular/singular/caustic classification, and the
//! residual systems cutting out the stationarity submanifolds in
//! `T*T*Q` and `TT*Q`.

use crate::expr::{EvalError, Expr};
use crate::linalg;
use crate::problem::{Mode, OcProblem};
use crate::sample::SplitMix64;
use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use std::collections::HashMap;

/// Prefix used to derive costate names from state names.
pub const COSTATE_PREFIX: &str = "p_";

#[derive(Debug, Clone, thiserror::Error)]
pub enum PontryaginError {
    #[error("declared symbol `{0}` collides with the costate prefix `p_`")]
    CostateCollision(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// A Pontryagin Hamiltonian with its first-derivative blocks.
#[derive(Debug, Clone)]
pub struct Hamiltonian {
    pub mode: Mode,
    pub states: Vec<String>,
    pub costates: Vec<String>,
    pub controls: Vec<String>,
    pub h: Expr,
    /// dH/dq, one entry per state.
    pub dq: Vec<Expr>,
    /// dH/dp, one entry per costate; componentwise equal to the
    /// dynamics by construction.
    pub dp: Vec<Expr>,
    /// dH/du, one entry per control.
    pub du: Vec<Expr>,
    /// The dynamics the Hamiltonian was built from.
    pub dynamics: Vec<Expr>,
    /// The cost entering H (zero expression in abnormal mode).
    pub cost: Expr,
}

/// Builds the Hamiltonian of a problem, generating costate names as
/// `p_<state>`.
pub fn build_hamiltonian(problem: &OcProblem) -> Result<Hamiltonian, PontryaginError> {
    for name in problem.states.iter().chain(problem.controls.iter()) {
        if name.starts_with(COSTATE_PREFIX) {
            return Err(PontryaginError::CostateCollision(name.clone()));
        }
    }
    let costates: Vec<String> = problem
        .states
        .iter()
        .map(|s| format!("{COSTATE_PREFIX}{s}"))
        .collect();

    let cost = problem.effective_cost();
    let p_dot_gamma = Expr::sum(
        costates
            .iter()
            .zip(&problem.dynamics)
            .map(|(p, g)| Expr::mul(Expr::var(p.clone()), g.clone())),
    );
    let h = Expr::sub(p_dot_gamma, cost.clone());

    let dq = problem.states.iter().map(|s| h.diff(s)).collect();
    let dp = costates.iter().map(|p| h.diff(p)).collect();
    let du = problem.controls.iter().map(|u| h.diff(u)).collect();

    Ok(Hamiltonian {
        mode: problem.mode,
        states: problem.states.clone(),
        costates,
        controls: problem.controls.clone(),
        h,
        dq,
        dp,
        du,
        dynamics: problem.dynamics.clone(),
        cost,
    })
}

impl Hamiltonian {
    pub fn n(&self) -> usize {
        self.states.len()
    }

    pub fn m(&self) -> usize {
        self.controls.len()
    }

    /// Binding map for a phase-space point `(q, p, u)`.
    pub fn bind(&self, q: &[f64], p: &[f64], u: &[f64]) -> HashMap<String, f64> {
        let mut b = HashMap::with_capacity(2 * self.n() + self.m());
        for (name, &v) in self.states.iter().zip(q) {
            b.insert(name.clone(), v);
        }
        for (name, &v) in self.costates.iter().zip(p) {
            b.insert(name.clone(), v);
        }
        for (name, &v) in self.controls.iter().zip(u) {
            b.insert(name.clone(), v);
        }
        b
    }

    pub fn value(&self, q: &[f64], p: &[f64], u: &[f64]) -> Result<f64, EvalError> {
        self.h.eval(&self.bind(q, p, u))
    }

    fn eval_block(
        &self,
        block: &[Expr],
        binding: &HashMap<String, f64>,
    ) -> Result<Vec<f64>, EvalError> {
        block.iter().map(|e| e.eval(binding)).collect()
    }

    pub fn grad_q(&self, q: &[f64], p: &[f64], u: &[f64]) -> Result<Vec<f64>, EvalError> {
        self.eval_block(&self.dq, &self.bind(q, p, u))
    }

    pub fn grad_p(&self, q: &[f64], p: &[f64], u: &[f64]) -> Result<Vec<f64>, EvalError> {
        self.eval_block(&self.dp, &self.bind(q, p, u))
    }

    pub fn grad_u(&self, q: &[f64], p: &[f64], u: &[f64]) -> Result<Vec<f64>, EvalError> {
        self.eval_block(&self.du, &self.bind(q, p, u))
    }

    /// The control Hessian `d^2 H / du du`, evaluated.
    pub fn control_hessian(
        &self,
        q: &[f64],
        p: &[f64],
        u: &[f64],
    ) -> Result<DMatrix<f64>, EvalError> {
        let binding = self.bind(q, p, u);
        let m = self.m();
        let mut out = DMatrix::<f64>::zeros(m, m);
        for (a, dua) in self.du.iter().enumerate() {
            for (b, ub) in self.controls.iter().enumerate() {
                out[(a, b)] = dua.diff(ub).eval(&binding)?;
            }
        }
        Ok(out)
    }
}

/// The mixed second-derivative matrix
/// `[ d2H/dq du | d2H/dp du | d2H/du du ]`, one row per control,
/// kept symbolic.
#[derive(Debug, Clone)]
pub struct MorseMatrix {
    pub n: usize,
    pub m: usize,
    /// `m` rows of length `2n + m`.
    pub rows: Vec<Vec<Expr>>,
}

/// Builds the rank matrix of the Hamiltonian.
pub fn morse_matrix(h: &Hamiltonian) -> MorseMatrix {
    let rows = h
        .du
        .iter()
        .map(|dua| {
            h.states
                .iter()
                .chain(h.costates.iter())
                .chain(h.controls.iter())
                .map(|v| dua.diff(v))
                .collect()
        })
        .collect();
    MorseMatrix {
        n: h.n(),
        m: h.m(),
        rows,
    }
}

impl MorseMatrix {
    pub fn eval(&self, binding: &HashMap<String, f64>) -> Result<DMatrix<f64>, EvalError> {
        let mut out = DMatrix::<f64>::zeros(self.m, 2 * self.n + self.m);
        for (r, row) in self.rows.iter().enumerate() {
            for (c, e) in row.iter().enumerate() {
                out[(r, c)] = e.eval(binding)?;
            }
        }
        Ok(out)
    }

    /// Printed form of the entries, row by row.
    pub fn to_strings(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|row| row.iter().map(|e| e.to_string()).collect())
            .collect()
    }
}

/// Per-sample classification record.
#[derive(Debug, Clone, Serialize)]
pub struct MorseSample {
    /// `(q, p, u)` flattened.
    pub point: Vec<f64>,
    pub rank_full: usize,
    pub rank_control_block: usize,
    pub morse_ok: bool,
    pub regular: bool,
    pub caustic: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MorseVerdict {
    AllSampled,
    FailsAtListedPoints,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RegularityVerdict {
    Regular,
    Singular,
    Mixed,
}

/// Aggregate classification over a sample set. The verdicts state
/// their evidence: they certify ranks at the sampled points only.
#[derive(Debug, Clone, Serialize)]
pub struct MorseReport {
    pub n: usize,
    pub m: usize,
    pub tol: f64,
    pub total: usize,
    pub morse_failures: usize,
    pub regular_points: usize,
    pub caustic_points: usize,
    pub failing_points: Vec<Vec<f64>>,
    pub morse_verdict: MorseVerdict,
    pub regularity_verdict: RegularityVerdict,
    pub samples: Vec<MorseSample>,
}

/// Default relative tolerance for numeric rank decisions.
pub const DEFAULT_RANK_TOL: f64 = 1e-9;

/// Classifies the problem at each `(q, p, u)` sample: numeric rank of
/// the full rank matrix and of its control-Hessian block, both scaled
/// by the largest singular value of the full matrix so that a
/// degenerate block is detected even when it is nonzero.
pub fn classify(
    h: &Hamiltonian,
    samples: &[Vec<f64>],
    tol: f64,
) -> Result<MorseReport, PontryaginError> {
    let matrix = morse_matrix(h);
    let (n, m) = (h.n(), h.m());
    let mut out = Vec::with_capacity(samples.len());
    let mut failing = Vec::new();
    let mut morse_failures = 0;
    let mut regular_points = 0;
    let mut caustic_points = 0;

    for point in samples {
        assert_eq!(point.len(), 2 * n + m, "sample has wrong dimension");
        let (q, rest) = point.split_at(n);
        let (p, u) = rest.split_at(n);
        let binding = h.bind(q, p, u);
        let full = matrix.eval(&binding)?;
        let scale = linalg::singular_values(&full).first().copied().unwrap_or(0.0);
        let rank_full = linalg::rank_with_scale(&full, tol, Some(scale));
        let uu = full.view((0, 2 * n), (m, m)).into_owned();
        let rank_uu = linalg::rank_with_scale(&uu, tol, Some(scale));
        let morse_ok = rank_full == m;
        let regular = rank_uu == m;
        let caustic = morse_ok && !regular;
        if !morse_ok {
            morse_failures += 1;
            failing.push(point.clone());
        }
        if regular {
            regular_points += 1;
        }
        if caustic {
            caustic_points += 1;
        }
        out.push(MorseSample {
            point: point.clone(),
            rank_full,
            rank_control_block: rank_uu,
            morse_ok,
            regular,
            caustic,
        });
    }

    let morse_verdict = if morse_failures == 0 {
        MorseVerdict::AllSampled
    } else {
        MorseVerdict::FailsAtListedPoints
    };
    let regularity_verdict = if regular_points == out.len() {
        RegularityVerdict::Regular
    } else if regular_points == 0 {
        RegularityVerdict::Singular
    } else {
        RegularityVerdict::Mixed
    };

    Ok(MorseReport {
        n,
        m,
        tol,
        total: out.len(),
        morse_failures,
        regular_points,
        caustic_points,
        failing_points: failing,
        morse_verdict,
        regularity_verdict,
        samples: out,
    })
}

/// A candidate point of the stationarity submanifold of `T*T*Q`:
/// `(q, p, P_q, P_p)` with witness control `u`.
#[derive(Debug, Clone, PartialEq)]
pub struct LhPoint {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub p_q: Vec<f64>,
    pub p_p: Vec<f64>,
    pub u: Vec<f64>,
}

/// A candidate point of the implicit Hamilton equation in `TT*Q`:
/// `(q, p, V_q, V_p)` with witness control `u`.
#[derive(Debug, Clone, PartialEq)]
pub struct DhPoint {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub v_q: Vec<f64>,
    pub v_p: Vec<f64>,
    pub u: Vec<f64>,
}

/// Residuals `(P_q - dH/dq, P_p - dH/dp, dH/du)`; the zero vector
/// witnesses membership of the covector point with control `u`.
pub fn lh_residual(h: &Hamiltonian, pt: &LhPoint) -> Result<Vec<f64>, EvalError> {
    let binding = h.bind(&pt.q, &pt.p, &pt.u);
    let dq = h.eval_block(&h.dq, &binding)?;
    let dp = h.eval_block(&h.dp, &binding)?;
    let du = h.eval_block(&h.du, &binding)?;
    let mut r = Vec::with_capacity(2 * h.n() + h.m());
    r.extend(pt.p_q.iter().zip(&dq).map(|(a, b)| a - b));
    r.extend(pt.p_p.iter().zip(&dp).map(|(a, b)| a - b));
    r.extend(du);
    Ok(r)
}

/// Residuals `(V_q - dH/dp, V_p + dH/dq, dH/du)` of the implicit
/// Hamilton equation.
pub fn dh_residual(h: &Hamiltonian, pt: &DhPoint) -> Result<Vec<f64>, EvalError> {
    let binding = h.bind(&pt.q, &pt.p, &pt.u);
    let dq = h.eval_block(&h.dq, &binding)?;
    let dp = h.eval_block(&h.dp, &binding)?;
    let du = h.eval_block(&h.du, &binding)?;
    let mut r = Vec::with_capacity(2 * h.n() + h.m());
    r.extend(pt.v_q.iter().zip(&dp).map(|(a, b)| a - b));
    r.extend(pt.v_p.iter().zip(&dq).map(|(a, b)| a + b));
    r.extend(du);
    Ok(r)
}

/// The musical-isomorphism conjugate of a covector-side point:
/// `(q, p, P_q, P_p) -> (q, p, P_p, -P_q)` with the same witness.
pub fn lh_to_dh(pt: &LhPoint) -> DhPoint {
    DhPoint {
        q: pt.q.clone(),
        p: pt.p.clone(),
        v_q: pt.p_p.clone(),
        v_p: pt.p_q.iter().map(|x| -x).collect(),
        u: pt.u.clone(),
    }
}

/// Draws `count` points on the stationarity set `dH/du = 0` and
/// returns them as implicit-Hamilton-equation points
/// `(q, p, Gamma, -dH/dq, u)`.
///
/// Seeds `(q, u)` come from a splitmix stream over
/// `[-half_width, half_width]`; the costate starts at the minimum-norm
/// solution of the (p-linear) stationarity system and a random kernel
/// offset, then a Gauss-Newton iteration over `(q, p, u)` drives the
/// full residual below 1e-12. Seeds that fail to converge are skipped.
pub fn sample_dh_points(
    h: &Hamiltonian,
    count: usize,
    seed: u64,
    half_width: f64,
) -> Result<Vec<DhPoint>, PontryaginError> {
    let (n, m) = (h.n(), h.m());
    let matrix = morse_matrix(h);
    let mut rng = SplitMix64::new(seed.wrapping_add(0xD1F));
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0usize;
    let max_attempts = 60 * count.max(1);

    while out.len() < count && attempts < max_attempts {
        attempts += 1;
        let q: Vec<f64> = (0..n).map(|_| rng.uniform(-half_width, half_width)).collect();
        let u: Vec<f64> = (0..m).map(|_| rng.uniform(-half_width, half_width)).collect();

        // Stationarity is linear in p: (dGamma/du)^T p = dL/du.
        let binding = h.bind(&q, &vec![0.0; n], &u);
        let mut jt = DMatrix::<f64>::zeros(m, n);
        let mut ok = true;
        for (a, dua) in h.du.iter().enumerate() {
            for (i, pi) in h.costates.iter().enumerate() {
                match dua.diff(pi).eval(&binding) {
                    Ok(v) => jt[(a, i)] = v,
                    Err(_) => {
                        ok = false;
                        break;
                    }
                }
            }
        }
        if !ok {
            continue;
        }
        let rhs = match h.eval_block(&h.du, &binding) {
            Ok(r0) => DVector::from_vec(r0.iter().map(|x| -x).collect()),
            Err(_) => continue,
        };
        let mut p_vec = linalg::lstsq(&jt, &rhs, 1e-12);
        for (i, v) in linalg::kernel_basis(&jt, 1e-9).iter().enumerate() {
            let scale = rng.uniform(-half_width, half_width);
            let _ = i;
            p_vec += v * scale;
        }
        let p: Vec<f64> = p_vec.iter().copied().collect();

        if let Some(z) = gauss_newton_stationarity(h, &matrix, &q, &p, &u) {
            let (q, p, u) = z;
            let v_q = match h.grad_p(&q, &p, &u) {
                Ok(v) => v,
                Err(_) => continue,
            };
            let v_p = match h.grad_q(&q, &p, &u) {
                Ok(v) => v.iter().map(|x| -x).collect(),
                Err(_) => continue,
            };
            out.push(DhPoint { q, p, v_q, v_p, u });
        }
    }
    Ok(out)
}

type Phase = (Vec<f64>, Vec<f64>, Vec<f64>);

fn gauss_newton_stationarity(
    h: &Hamiltonian,
    matrix: &MorseMatrix,
    q0: &[f64],
    p0: &[f64],
    u0: &[f64],
) -> Option<Phase> {
    let n = h.n();
    let mut z: Vec<f64> = q0.iter().chain(p0).chain(u0).copied().collect();
    let residual = |z: &[f64]| -> Option<DVector<f64>> {
        let (q, rest) = z.split_at(n);
        let (p, u) = rest.split_at(n);
        let r = h.grad_u(q, p, u).ok()?;
        Some(DVector::from_vec(r))
    };
    let mut r = residual(&z)?;
    for _ in 0..50 {
        if r.amax() <= 1e-12 {
            let (q, rest) = z.split_at(n);
            let (p, u) = rest.split_at(n);
            return Some((q.to_vec(), p.to_vec(), u.to_vec()));
        }
        let (q, rest) = z.split_at(n);
        let (p, u) = rest.split_at(n);
        let jac = matrix.eval(&h.bind(q, p, u)).ok()?;
        // step has length 2n+m, aligned with z
        let step = linalg::lstsq(&jac, &r, 1e-12);
        let mut damping = 1.0;
        let mut improved = false;
        for _ in 0..25 {
            let trial: Vec<f64> = z
                .iter()
                .zip(step.iter())
                .map(|(&v, &s)| v - damping * s)
                .collect();
            if let Some(rt) = residual(&trial) {
                if rt.norm() < r.norm() || rt.amax() <= 1e-12 {
                    z = trial;
                    r = rt;
                    improved = true;
                    break;
                }
            }
            damping *= 0.5;
        }
        if !improved {
            return None;
        }
    }
    if r.amax() <= 1e-12 {
        let (q, rest) = z.split_at(n);
        let (p, u) = rest.split_at(n);
        Some((q.to_vec(), p.to_vec(), u.to_vec()))
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{generate_lq, load_problem, LqConfig, LqControlCost};
    use crate::sample::halton_box;

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

    fn u_squared() -> OcProblem {
        load_problem(
            r#"{
            "name": "u-squared",
            "states": ["q"],
            "controls": ["u"],
            "dynamics": ["u^2"],
            "cost": "1",
            "boundary": {"t0": 0.0, "tf": 1.0, "q0": [0.0]}
        }"#,
        )
        .unwrap()
    }

    fn u_cubed() -> OcProblem {
        load_problem(
            r#"{
            "name": "u-cubed-over-6",
            "states": ["q"],
            "controls": ["u"],
            "dynamics": ["u"],
            "cost": "u^3/6",
            "boundary": {"t0": 0.0, "tf": 1.0, "q0": [0.0]}
        }"#,
        )
        .unwrap()
    }

    #[test]
    fn train_hamiltonian_value() {
        let h = build_hamiltonian(&train()).unwrap();
        // p1 x2 + p2 u - u^2/2 at x=(0,1), p=(2,3), u=1
        let v = h.value(&[0.0, 1.0], &[2.0, 3.0], &[1.0]).unwrap();
        assert!((v - 4.5).abs() < 1e-15);
        assert_eq!(h.costates, vec!["p_x1", "p_x2"]);
    }

    #[test]
    fn abnormal_mode_drops_the_cost() {
        let p = train().with_mode(Mode::Abnormal);
        let h = build_hamiltonian(&p).unwrap();
        let v = h.value(&[0.0, 1.0], &[2.0, 3.0], &[1.0]).unwrap();
        assert!((v - 5.0).abs() < 1e-15);
    }

    #[test]
    fn costate_collision_is_detected() {
        let p = load_problem(
            r#"{
            "name": "bad",
            "states": ["p_x"],
            "controls": ["u"],
            "dynamics": ["u"],
            "cost": "0",
            "boundary": {"t0": 0.0, "tf": 1.0, "q0": [0.0]}
        }"#,
        )
        .unwrap();
        assert!(matches!(
            build_hamiltonian(&p),
            Err(PontryaginError::CostateCollision(_))
        ));
    }

    #[test]
    fn dp_equals_dynamics_and_h_identity() {
        let mut rng = SplitMix64::new(11);
        for problem in [train(), bang_bang(), u_squared(), u_cubed()] {
            let h = build_hamiltonian(&problem).unwrap();
            let (n, m) = (h.n(), h.m());
            for _ in 0..50 {
                let q: Vec<f64> = (0..n).map(|_| rng.uniform(-2.0, 2.0)).collect();
                let p: Vec<f64> = (0..n).map(|_| rng.uniform(-2.0, 2.0)).collect();
                let u: Vec<f64> = (0..m).map(|_| rng.uniform(-2.0, 2.0)).collect();
                let dp = h.grad_p(&q, &p, &u).unwrap();
                let gamma = problem.gamma(&q, &u).unwrap();
                for (a, b) in dp.iter().zip(&gamma) {
                    assert!((a - b).abs() <= 1e-12);
                }
                // H + L - p.Gamma = 0 in normal mode
                let hv = h.value(&q, &p, &u).unwrap();
                let l = problem.cost.eval(&problem.bind_qu(&q, &u)).unwrap();
                let pg: f64 = p.iter().zip(&gamma).map(|(a, b)| a * b).sum();
                assert!((hv + l - pg).abs() <= 1e-12 * (1.0 + pg.abs()));
            }
        }
    }

    fn eval_row(matrix: &MorseMatrix, h: &Hamiltonian, q: &[f64], p: &[f64], u: &[f64]) -> Vec<f64> {
        let m = matrix.eval(&h.bind(q, p, u)).unwrap();
        m.row(0).iter().copied().collect()
    }

    #[test]
    fn train_morse_row_is_0_0_0_1_minus_1() {
        let h = build_hamiltonian(&train()).unwrap();
        let matrix = morse_matrix(&h);
        let mut rng = SplitMix64::new(5);
        for _ in 0..20 {
            let q = [rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0)];
            let p = [rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0)];
            let u = [rng.uniform(-2.0, 2.0)];
            let row = eval_row(&matrix, &h, &q, &p, &u);
            let want = [0.0, 0.0, 0.0, 1.0, -1.0];
            for (a, b) in row.iter().zip(want) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn u_squared_morse_row_is_0_2u_2p() {
        let h = build_hamiltonian(&u_squared()).unwrap();
        let matrix = morse_matrix(&h);
        let mut rng = SplitMix64::new(6);
        for _ in 0..20 {
            let q = [rng.uniform(-2.0, 2.0)];
            let p = [rng.uniform(-2.0, 2.0)];
            let u = [rng.uniform(-2.0, 2.0)];
            let row = eval_row(&matrix, &h, &q, &p, &u);
            let want = [0.0, 2.0 * u[0], 2.0 * p[0]];
            for (a, b) in row.iter().zip(want) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn bang_bang_morse_row_is_0_1_quadratic() {
        let h = build_hamiltonian(&bang_bang()).unwrap();
        let matrix = morse_matrix(&h);
        let mut rng = SplitMix64::new(7);
        for _ in 0..20 {
            let q = [rng.uniform(-2.0, 2.0)];
            let p = [rng.uniform(-2.0, 2.0)];
            let u = [rng.uniform(-2.0, 2.0)];
            let row = eval_row(&matrix, &h, &q, &p, &u);
            let want = [0.0, 1.0, -12.0 * u[0] * u[0] + 4.0];
            for (a, b) in row.iter().zip(want) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn classify_train_is_regular() {
        let h = build_hamiltonian(&train()).unwrap();
        let samples = halton_box(5, 128, 2.0, 0);
        let report = classify(&h, &samples, DEFAULT_RANK_TOL).unwrap();
        assert_eq!(report.morse_verdict, MorseVerdict::AllSampled);
        assert_eq!(report.regularity_verdict, RegularityVerdict::Regular);
        assert_eq!(report.caustic_points, 0);
    }

    #[test]
    fn classify_u_squared_fails_on_the_probe() {
        let h = build_hamiltonian(&u_squared()).unwrap();
        let mut samples = halton_box(3, 64, 2.0, 0);
        samples.push(vec![0.7, 0.0, 0.0]); // (q, p, u) = (q, 0, 0)
        let report = classify(&h, &samples, DEFAULT_RANK_TOL).unwrap();
        assert_eq!(report.morse_verdict, MorseVerdict::FailsAtListedPoints);
        assert_eq!(report.morse_failures, 1);
        assert_eq!(report.failing_points[0], vec![0.7, 0.0, 0.0]);
        let probe = report.samples.last().unwrap();
        assert_eq!(probe.rank_full, 0);
        assert!(!probe.morse_ok && !probe.caustic);
    }

    #[test]
    fn classify_u_cubed_caustic_at_zero_control() {
        let h = build_hamiltonian(&u_cubed()).unwrap();
        let mut samples = halton_box(3, 64, 2.0, 0);
        samples.push(vec![0.3, 0.1, 0.0]); // u = 0
        let report = classify(&h, &samples, DEFAULT_RANK_TOL).unwrap();
        assert_eq!(report.morse_verdict, MorseVerdict::AllSampled);
        assert_eq!(report.regularity_verdict, RegularityVerdict::Mixed);
        let probe = report.samples.last().unwrap();
        assert!(probe.morse_ok && !probe.regular && probe.caustic);
    }

    #[test]
    fn classify_flags_are_mutually_consistent() {
        let h = build_hamiltonian(&u_squared()).unwrap();
        let mut samples = halton_box(3, 256, 2.0, 3);
        samples.push(vec![0.0, 0.0, 0.0]);
        let report = classify(&h, &samples, DEFAULT_RANK_TOL).unwrap();
        for s in &report.samples {
            if s.caustic {
                assert!(s.morse_ok && !s.regular);
            }
            if s.regular {
                assert!(s.morse_ok);
            }
        }
    }

    #[test]
    fn lq_classification_matches_the_control_cost_rank() {
        for seed in 0..5 {
            let regular = generate_lq(&LqConfig {
                seed,
                n: 2,
                m: 2,
                p: LqControlCost::Invertible,
            });
            let h = build_hamiltonian(&regular).unwrap();
            let samples = halton_box(6, 64, 2.0, seed);
            let report = classify(&h, &samples, DEFAULT_RANK_TOL).unwrap();
            assert_eq!(report.regularity_verdict, RegularityVerdict::Regular, "seed {seed}");

            let singular = generate_lq(&LqConfig {
                seed,
                n: 2,
                m: 2,
                p: LqControlCost::Zero,
            });
            let h = build_hamiltonian(&singular).unwrap();
            let report = classify(&h, &samples, DEFAULT_RANK_TOL).unwrap();
            assert_eq!(report.morse_verdict, MorseVerdict::AllSampled, "seed {seed}");
            assert_eq!(report.regularity_verdict, RegularityVerdict::Singular, "seed {seed}");
        }
    }

    #[test]
    fn lh_residual_u_cubed_family() {
        // (x, lambda^2/2, 0, lambda) with witness u = lambda
        let h = build_hamiltonian(&u_cubed()).unwrap();
        for lambda in [-2.0, -0.5, 0.0, 1.0, 3.0] {
            let pt = LhPoint {
                q: vec![0.4],
                p: vec![0.5 * lambda * lambda],
                p_q: vec![0.0],
                p_p: vec![lambda],
                u: vec![lambda],
            };
            let r = lh_residual(&h, &pt).unwrap();
            assert!(r.iter().all(|x| x.abs() <= 1e-12), "{r:?}");
        }
    }

    #[test]
    fn lh_residual_train() {
        let h = build_hamiltonian(&train()).unwrap();
        let (x, p1, u) = ([0.3, -1.2], 0.8, 0.6);
        // On the stationarity set p2 = u and P_q = dH/dq = (0, p1).
        let pt = LhPoint {
            q: x.to_vec(),
            p: vec![p1, u],
            p_q: vec![0.0, p1],
            p_p: vec![x[1], u],
            u: vec![u],
        };
        let r = lh_residual(&h, &pt).unwrap();
        assert!(r.iter().all(|v| v.abs() <= 1e-12), "{r:?}");

        // p2 != u leaves exactly the stationarity residual
        let bad = LhPoint {
            p: vec![p1, u + 0.25],
            ..pt
        };
        let r = lh_residual(&h, &bad).unwrap();
        assert!((r[4] - 0.25).abs() <= 1e-12);
    }

    #[test]
    fn dh_residual_bang_bang_branch() {
        let h = build_hamiltonian(&bang_bang()).unwrap();
        for u in [-1.5, -1.0, 0.0, 0.5, 2.0] {
            let pt = DhPoint {
                q: vec![0.2],
                p: vec![4.0 * u * (u * u - 1.0)],
                v_q: vec![u],
                v_p: vec![0.0],
                u: vec![u],
            };
            let r = dh_residual(&h, &pt).unwrap();
            assert!(r.iter().all(|x| x.abs() <= 1e-12), "u={u}: {r:?}");
        }
    }

    #[test]
    fn dh_residual_train_and_sign_violation() {
        let h = build_hamiltonian(&train()).unwrap();
        let (x, p1, u) = ([1.0, -0.5], -0.9, 0.4);
        let pt = DhPoint {
            q: x.to_vec(),
            p: vec![p1, u],
            v_q: vec![x[1], u],
            v_p: vec![0.0, -p1],
            u: vec![u],
        };
        let r = dh_residual(&h, &pt).unwrap();
        assert!(r.iter().all(|v| v.abs() <= 1e-12), "{r:?}");

        let bad = DhPoint {
            v_p: vec![0.0, p1 + 1.0],
            ..pt
        };
        let r = dh_residual(&h, &bad).unwrap();
        assert!(r[3].abs() > 0.1);
    }

    #[test]
    fn sharp_conjugation_sends_lh_points_to_dh_points() {
        let h = build_hamiltonian(&train()).unwrap();
        let mut rng = SplitMix64::new(21);
        for _ in 0..50 {
            let x = [rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0)];
            let p1 = rng.uniform(-2.0, 2.0);
            let u = rng.uniform(-2.0, 2.0);
            let lh = LhPoint {
                q: x.to_vec(),
                p: vec![p1, u],
                p_q: vec![0.0, p1],
                p_p: vec![x[1], u],
                u: vec![u],
            };
            assert!(lh_residual(&h, &lh).unwrap().iter().all(|v| v.abs() <= 1e-12));
            let dh = lh_to_dh(&lh);
            assert!(dh_residual(&h, &dh).unwrap().iter().all(|v| v.abs() <= 1e-12));
        }
    }

    #[test]
    fn dh_sampler_returns_zero_residual_points() {
        for problem in [train(), bang_bang(), u_squared(), u_cubed()] {
            let h = build_hamiltonian(&problem).unwrap();
            let points = sample_dh_points(&h, 64, 1, 2.0).unwrap();
            assert!(points.len() >= 32, "{}: only {} samples", problem.name, points.len());
            for pt in &points {
                let r = dh_residual(&h, pt).unwrap();
                assert!(
                    r.iter().all(|v| v.abs() <= 1e-10),
                    "{}: {r:?}",
                    problem.name
                );
            }
        }
    }

    #[test]
    fn dh_sampler_handles_consistency_constrained_problems() {
        // Stationarity for this problem forces x = p = 0.
        let toy = load_problem(
            r#"{
            "name": "toy",
            "states": ["x"],
            "controls": ["u1", "u2"],
            "dynamics": ["u1 + u2"],
            "cost": "x*(u1 - u2)",
            "boundary": {"t0": 0.0, "tf": 1.0, "q0": [0.0], "qf": [0.0]}
        }"#,
        )
        .unwrap();
        let h = build_hamiltonian(&toy).unwrap();
        let points = sample_dh_points(&h, 32, 2, 2.0).unwrap();
        assert!(points.len() >= 16);
        for pt in &points {
            assert!(pt.q[0].abs() <= 1e-9);
            assert!(pt.p[0].abs() <= 1e-9);
            let r = dh_residual(&h, pt).unwrap();
            assert!(r.iter().all(|v| v.abs() <= 1e-10));
        }
    }
}
