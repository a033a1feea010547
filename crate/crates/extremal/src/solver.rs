//! Numeric machinery for regular problems: control elimination,
//! fixed-step integration of Hamilton's equations with the control
//! re-eliminated at every stage, and two-point boundary-value
//! shooting on the initial costate.
//!
//! The integrator is the classical 4th-order scheme with a fixed step;
//! the cost is accumulated as an extra quadrature state, and the
//! Hamiltonian value is recorded along the grid so conservation can be
//! checked after the fact.

use crate::expr::EvalError;
use crate::linalg;
use crate::pontryagin::{build_hamiltonian, Hamiltonian};
use crate::problem::OcProblem;
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

#[derive(Debug, Clone, thiserror::Error)]
pub enum SolverError {
    #[error("control elimination did not converge in {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("control Hessian is singular at the stationary point (min singular value {min_singular_value:.3e}): caustic warning")]
    SingularHessian {
        control: Vec<f64>,
        min_singular_value: f64,
    },
    #[error("elimination failed at step {step}: {message}")]
    Partial {
        trajectory: Box<Trajectory>,
        step: usize,
        message: String,
    },
    #[error("shooting did not converge in {iterations} iterations (endpoint residual {residual:.3e})")]
    ShootNoConvergence {
        best: Box<Trajectory>,
        p0: Vec<f64>,
        iterations: usize,
        residual: f64,
    },
    #[error("the problem has no fixed final time; fix `tf` to integrate")]
    FreeFinalTime,
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Pontryagin(#[from] crate::pontryagin::PontryaginError),
}

/// Result of one control elimination.
#[derive(Debug, Clone)]
pub struct ControlSolve {
    pub u: Vec<f64>,
    /// Smallest singular value of the control Hessian at the root —
    /// the local regularity margin.
    pub hessian_min_singular_value: f64,
}

const ELIM_TOL: f64 = 1e-12;
const ELIM_MAX_ITER: usize = 50;
const HESSIAN_SINGULAR_TOL: f64 = 1e-9;

/// Solves the stationarity system `dH/du(q, p, .) = 0` by a damped
/// Newton iteration from `guess`. A converged root with a singular
/// control Hessian is reported as [`SolverError::SingularHessian`]
/// (carrying the root) so callers can decide whether to proceed.
pub fn eliminate_control(
    h: &Hamiltonian,
    q: &[f64],
    p: &[f64],
    guess: &[f64],
) -> Result<ControlSolve, SolverError> {
    let m = h.m();
    let mut u = guess.to_vec();
    let mut residual = DVector::from_vec(h.grad_u(q, p, &u)?);
    for _ in 0..ELIM_MAX_ITER {
        if residual.amax() <= ELIM_TOL {
            return finish_elimination(h, q, p, u);
        }
        let hess = h.control_hessian(q, p, &u)?;
        let step = linalg::lstsq(&hess, &residual, 1e-13);
        let mut damping = 1.0;
        let mut improved = false;
        for _ in 0..30 {
            let trial: Vec<f64> = u
                .iter()
                .zip(step.iter())
                .map(|(&v, &s)| v - damping * s)
                .collect();
            if let Ok(r) = h.grad_u(q, p, &trial) {
                let r = DVector::from_vec(r);
                if r.norm() < residual.norm() || r.amax() <= ELIM_TOL {
                    u = trial;
                    residual = r;
                    improved = true;
                    break;
                }
            }
            damping *= 0.5;
        }
        if !improved {
            break;
        }
    }
    if residual.amax() <= ELIM_TOL {
        return finish_elimination(h, q, p, u);
    }
    let _ = m;
    Err(SolverError::NoConvergence {
        iterations: ELIM_MAX_ITER,
        residual: residual.amax(),
    })
}

fn finish_elimination(
    h: &Hamiltonian,
    q: &[f64],
    p: &[f64],
    u: Vec<f64>,
) -> Result<ControlSolve, SolverError> {
    let hess = h.control_hessian(q, p, &u)?;
    let sv = linalg::singular_values(&hess);
    let (smax, smin) = (
        sv.first().copied().unwrap_or(0.0),
        sv.last().copied().unwrap_or(0.0),
    );
    if smin <= HESSIAN_SINGULAR_TOL * 1.0f64.max(smax) {
        return Err(SolverError::SingularHessian {
            control: u,
            min_singular_value: smin,
        });
    }
    Ok(ControlSolve {
        u,
        hessian_min_singular_value: smin,
    })
}

/// A solved trajectory on a uniform time grid.
#[derive(Debug, Clone, Serialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub costates: Vec<Vec<f64>>,
    pub controls: Vec<Vec<f64>>,
    /// Accumulated cost integral.
    pub cost: f64,
    /// Hamiltonian value at each grid point.
    pub hamiltonian: Vec<f64>,
    /// Grid points at which the control Hessian was singular at the
    /// eliminated root (accepted, but worth surfacing).
    pub caustic_warnings: usize,
}

impl Trajectory {
    pub fn endpoint(&self) -> &[f64] {
        self.states.last().expect("nonempty trajectory")
    }

    /// `max_t |H(t) - H(t0)|`.
    pub fn hamiltonian_drift(&self) -> f64 {
        let h0 = self.hamiltonian.first().copied().unwrap_or(0.0);
        self.hamiltonian
            .iter()
            .fold(0.0f64, |acc, h| acc.max((h - h0).abs()))
    }

    /// CSV rendering: header `t,<states>,<costates>,<controls>`, one
    /// row per grid point, 17 significant digits.
    pub fn to_csv(&self, h: &Hamiltonian) -> String {
        let mut out = String::new();
        out.push('t');
        for name in h.states.iter().chain(&h.costates).chain(&h.controls) {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for (k, &t) in self.times.iter().enumerate() {
            out.push_str(&format!("{t:.16e}"));
            for v in self.states[k]
                .iter()
                .chain(&self.costates[k])
                .chain(&self.controls[k])
            {
                out.push_str(&format!(",{v:.16e}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Integrates Hamilton's equations `dq/dt = dH/dp`, `dp/dt = -dH/dq`
/// with the control eliminated at every stage evaluation (warm-started
/// from the previous stage), accumulating the cost by simultaneous
/// quadrature. Fixed-step classical 4th order.
pub fn integrate_hamilton(
    h: &Hamiltonian,
    q0: &[f64],
    p0: &[f64],
    t0: f64,
    tf: f64,
    steps: usize,
    guess: &[f64],
) -> Result<Trajectory, SolverError> {
    assert!(steps >= 1, "steps must be at least 1");
    let n = h.n();
    let dt = (tf - t0) / steps as f64;

    let mut warm = guess.to_vec();
    let mut caustic_warnings = 0usize;

    // One vector-field evaluation: returns (dq, dp, dJ) and updates
    // the warm-start control.
    let field = |q: &[f64],
                 p: &[f64],
                 warm: &mut Vec<f64>,
                 caustics: &mut usize|
     -> Result<(Vec<f64>, Vec<f64>, f64), SolverError> {
        let u = match eliminate_control(h, q, p, warm) {
            Ok(solve) => solve.u,
            Err(SolverError::SingularHessian { control, .. }) => {
                *caustics += 1;
                control
            }
            Err(e) => return Err(e),
        };
        *warm = u.clone();
        let dq = h.grad_p(q, p, &u)?;
        let dp: Vec<f64> = h.grad_q(q, p, &u)?.iter().map(|x| -x).collect();
        let binding = h.bind(q, p, &u);
        let dj = h.cost.eval(&binding)?;
        Ok((dq, dp, dj))
    };

    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut costates = Vec::with_capacity(steps + 1);
    let mut controls = Vec::with_capacity(steps + 1);
    let mut hamiltonian = Vec::with_capacity(steps + 1);

    let mut q = q0.to_vec();
    let mut p = p0.to_vec();
    let mut cost = 0.0f64;

    let record = |q: &[f64],
                  p: &[f64],
                  warm: &mut Vec<f64>,
                  caustics: &mut usize,
                  t: f64,
                  times: &mut Vec<f64>,
                  states: &mut Vec<Vec<f64>>,
                  costates: &mut Vec<Vec<f64>>,
                  controls: &mut Vec<Vec<f64>>,
                  hamiltonian: &mut Vec<f64>|
     -> Result<(), SolverError> {
        let u = match eliminate_control(h, q, p, warm) {
            Ok(solve) => solve.u,
            Err(SolverError::SingularHessian { control, .. }) => {
                *caustics += 1;
                control
            }
            Err(e) => return Err(e),
        };
        *warm = u.clone();
        let hv = h.value(q, p, &u)?;
        times.push(t);
        states.push(q.to_vec());
        costates.push(p.to_vec());
        controls.push(u);
        hamiltonian.push(hv);
        Ok(())
    };

    record(
        &q, &p, &mut warm, &mut caustic_warnings, t0, &mut times, &mut states, &mut costates,
        &mut controls, &mut hamiltonian,
    )?;

    for step in 0..steps {
        let t = t0 + step as f64 * dt;
        let _ = t;
        let axpy = |base_q: &[f64], base_p: &[f64], kq: &[f64], kp: &[f64], s: f64| {
            let q2: Vec<f64> = base_q.iter().zip(kq).map(|(a, b)| a + s * b).collect();
            let p2: Vec<f64> = base_p.iter().zip(kp).map(|(a, b)| a + s * b).collect();
            (q2, p2)
        };

        let result = (|| -> Result<(Vec<f64>, Vec<f64>, f64), SolverError> {
            let (kq1, kp1, kj1) = field(&q, &p, &mut warm, &mut caustic_warnings)?;
            let (q2, p2) = axpy(&q, &p, &kq1, &kp1, 0.5 * dt);
            let (kq2, kp2, kj2) = field(&q2, &p2, &mut warm, &mut caustic_warnings)?;
            let (q3, p3) = axpy(&q, &p, &kq2, &kp2, 0.5 * dt);
            let (kq3, kp3, kj3) = field(&q3, &p3, &mut warm, &mut caustic_warnings)?;
            let (q4, p4) = axpy(&q, &p, &kq3, &kp3, dt);
            let (kq4, kp4, kj4) = field(&q4, &p4, &mut warm, &mut caustic_warnings)?;

            let mut qn = q.clone();
            let mut pn = p.clone();
            for i in 0..n {
                qn[i] += dt / 6.0 * (kq1[i] + 2.0 * kq2[i] + 2.0 * kq3[i] + kq4[i]);
                pn[i] += dt / 6.0 * (kp1[i] + 2.0 * kp2[i] + 2.0 * kp3[i] + kp4[i]);
            }
            let dj = dt / 6.0 * (kj1 + 2.0 * kj2 + 2.0 * kj3 + kj4);
            Ok((qn, pn, dj))
        })();

        match result {
            Ok((qn, pn, dj)) => {
                q = qn;
                p = pn;
                cost += dj;
            }
            Err(e) => {
                return Err(SolverError::Partial {
                    trajectory: Box::new(Trajectory {
                        times,
                        states,
                        costates,
                        controls,
                        cost,
                        hamiltonian,
                        caustic_warnings,
                    }),
                    step,
                    message: e.to_string(),
                });
            }
        }

        record(
            &q,
            &p,
            &mut warm,
            &mut caustic_warnings,
            t0 + (step + 1) as f64 * dt,
            &mut times,
            &mut states,
            &mut costates,
            &mut controls,
            &mut hamiltonian,
        )?;
    }

    Ok(Trajectory {
        times,
        states,
        costates,
        controls,
        cost,
        hamiltonian,
        caustic_warnings,
    })
}

/// Result of a converged shooting solve.
#[derive(Debug, Clone)]
pub struct ShootResult {
    pub trajectory: Trajectory,
    pub p0: Vec<f64>,
    pub iterations: usize,
    pub endpoint_residual: f64,
}

const SHOOT_MAX_ITER: usize = 100;
const SHOOT_FD_STEP: f64 = 1e-6;

/// Adjusts the initial costate so the fixed components of the final
/// state are met. The Jacobian is taken by forward differences; with
/// fewer fixed components than costates the minimum-norm update is
/// used. With no fixed components the problem is a plain initial-value
/// integration from the guess.
pub fn shoot(
    problem: &OcProblem,
    p0_guess: &[f64],
    steps: usize,
    tol: f64,
) -> Result<ShootResult, SolverError> {
    let h = build_hamiltonian(problem)?;
    let n = h.n();
    let t0 = problem.boundary.t0;
    let tf = problem.boundary.tf.ok_or(SolverError::FreeFinalTime)?;
    let q0 = &problem.boundary.q0;

    let fixed: Vec<(usize, f64)> = problem
        .boundary
        .qf
        .iter()
        .enumerate()
        .filter_map(|(i, v)| v.map(|x| (i, x)))
        .collect();

    let integrate = |p0: &[f64]| -> Result<Trajectory, SolverError> {
        integrate_hamilton(&h, q0, p0, t0, tf, steps, &vec![0.0; h.m()])
    };

    let mut p0 = p0_guess.to_vec();
    let mut trajectory = integrate(&p0)?;

    if fixed.is_empty() {
        return Ok(ShootResult {
            trajectory,
            p0,
            iterations: 0,
            endpoint_residual: 0.0,
        });
    }

    let residual_of = |t: &Trajectory| -> DVector<f64> {
        let end = t.endpoint();
        DVector::from_vec(fixed.iter().map(|&(i, want)| end[i] - want).collect())
    };

    let mut residual = residual_of(&trajectory);
    for iteration in 1..=SHOOT_MAX_ITER {
        if residual.amax() <= tol {
            return Ok(ShootResult {
                trajectory,
                p0,
                iterations: iteration - 1,
                endpoint_residual: residual.amax(),
            });
        }
        // Forward-difference Jacobian of the endpoint mismatch.
        let mut jac = DMatrix::<f64>::zeros(fixed.len(), n);
        for j in 0..n {
            let mut p_pert = p0.clone();
            p_pert[j] += SHOOT_FD_STEP;
            let t_pert = integrate(&p_pert)?;
            let r_pert = residual_of(&t_pert);
            for (r, _) in fixed.iter().enumerate() {
                jac[(r, j)] = (r_pert[r] - residual[r]) / SHOOT_FD_STEP;
            }
        }
        let step = linalg::lstsq(&jac, &residual, 1e-12);
        let mut damping = 1.0;
        let mut improved = false;
        for _ in 0..25 {
            let trial: Vec<f64> = p0
                .iter()
                .zip(step.iter())
                .map(|(&v, &s)| v - damping * s)
                .collect();
            let t_trial = integrate(&trial)?;
            let r_trial = residual_of(&t_trial);
            if r_trial.norm() < residual.norm() || r_trial.amax() <= tol {
                p0 = trial;
                trajectory = t_trial;
                residual = r_trial;
                improved = true;
                break;
            }
            damping *= 0.5;
        }
        if !improved {
            break;
        }
    }

    if residual.amax() <= tol {
        let res = residual.amax();
        return Ok(ShootResult {
            trajectory,
            p0,
            iterations: SHOOT_MAX_ITER,
            endpoint_residual: res,
        });
    }
    let res = residual.amax();
    Err(SolverError::ShootNoConvergence {
        best: Box::new(trajectory),
        p0,
        iterations: SHOOT_MAX_ITER,
        residual: res,
    })
}
