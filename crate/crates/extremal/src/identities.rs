//! Cross-identity suite tying the Hamiltonian and Lagrangian sides
//! together, run end-to-end by the CLI `check` command.
//!
//! The suite samples the stationarity set, pushes the samples through
//! the canonical maps and verifies, pointwise:
//!
//! * the energy identity `E = H ∘ Leg`;
//! * the alpha relation (implicit-Hamilton points map onto the
//!   velocity-side submanifold);
//! * the kernel-constraint inclusion (projected velocities come from
//!   admissible controls);
//! * the exact geometry identities (involution, symplectomorphism
//!   with its sign, musical inverse pair).
//!
//! The sampled local invertibility of the Legendre Jacobian is
//! reported as well when the reduced chart exists.

use crate::expr::EvalError;
use crate::geometry::{
    alpha_matrix, check_symplectomorphism, flat, flat_matrix, kappa, sharp, Chart, ChartPoint,
    SymplSign, SymplecticMatrix,
};
use crate::lagrangian::{
    build_reduced_chart, check_alpha_relation, dh_to_lcl, IdentityCheck, ALPHA_RELATION_TOL,
};
use crate::pontryagin::{build_hamiltonian, sample_dh_points, PontryaginError};
use crate::problem::{tilde_control_constraints, OcProblem};
use crate::sample::SplitMix64;
use serde::Serialize;

/// Tolerances pinned by the identity suite.
pub const ENERGY_TOL: f64 = 1e-12;
pub const INCLUSION_TOL: f64 = 1e-8;

#[derive(Debug, Clone, thiserror::Error)]
pub enum IdentityError {
    #[error(transparent)]
    Pontryagin(#[from] PontryaginError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("sampler produced {got} of {want} requested points; the stationarity set may be empty in the sampling box")]
    NotEnoughSamples { got: usize, want: usize },
}

/// Aggregated result of the identity suite.
#[derive(Debug, Clone, Serialize)]
pub struct IdentityReport {
    pub problem: String,
    pub seed: u64,
    pub samples_requested: usize,
    pub samples_generated: usize,
    pub checks: Vec<IdentityCheck>,
    /// Smallest |det| of the Legendre Jacobian over the sampled chart
    /// points, when the reduced chart exists (local invertibility
    /// probe; informational).
    pub min_abs_legendre_jacobian: Option<f64>,
    pub all_passed: bool,
}

/// Runs the identity suite on `problem` with `count` stationarity
/// samples. `perturb` shifts each sampled point off the stationarity
/// set before checking; zero for a normal run (nonzero values are a
/// negative control that must make the suite fail).
pub fn run_identity_suite(
    problem: &OcProblem,
    count: usize,
    seed: u64,
    half_width: f64,
    perturb: f64,
) -> Result<IdentityReport, IdentityError> {
    let h = build_hamiltonian(problem)?;
    let mut points = sample_dh_points(&h, count, seed, half_width)?;
    if points.len() < count.max(1) / 2 {
        return Err(IdentityError::NotEnoughSamples {
            got: points.len(),
            want: count,
        });
    }
    let generated = points.len();
    if perturb != 0.0 {
        for pt in &mut points {
            pt.p[0] += perturb;
            pt.v_q[0] += perturb;
        }
    }

    let mut checks = Vec::new();

    // Energy identity: E = b . qdot - L against H at the Legendre
    // image (q, b) with the witness control.
    let mut energy_residuals = Vec::with_capacity(points.len());
    for pt in &points {
        let lcl = dh_to_lcl(pt);
        let l = problem
            .effective_cost()
            .eval(&problem.bind_qu(&lcl.q, &lcl.u))?;
        let e: f64 = lcl.b.iter().zip(&lcl.qdot).map(|(a, b)| a * b).sum::<f64>() - l;
        let hv = h.value(&lcl.q, &lcl.b, &lcl.u)?;
        energy_residuals.push((e - hv).abs());
    }
    checks.push(IdentityCheck::from_residuals(
        "energy",
        ENERGY_TOL,
        &energy_residuals,
    ));

    checks.push(check_alpha_relation(problem, &points, ALPHA_RELATION_TOL)?);

    // Inclusion: the projected velocity comes from a control at which
    // every kernel direction of the dynamics Jacobian annihilates the
    // cost differential.
    let mut inclusion_residuals = Vec::with_capacity(points.len());
    for pt in &points {
        let sample = vec![(pt.q.clone(), pt.u.clone())];
        let report = tilde_control_constraints(problem, &sample)?;
        let gamma = problem.gamma(&pt.q, &pt.u)?;
        let mut r = gamma
            .iter()
            .zip(&pt.v_q)
            .fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs()));
        for v in &report.samples[0].constraint_values {
            r = r.max(v.abs());
        }
        inclusion_residuals.push(r);
    }
    checks.push(IdentityCheck::from_residuals(
        "tilde-inclusion",
        INCLUSION_TOL,
        &inclusion_residuals,
    ));

    checks.extend(geometry_identities(problem.n(), seed));

    let min_abs_legendre_jacobian = build_reduced_chart(problem).ok().and_then(|chart| {
        let mut min: Option<f64> = None;
        for pt in &points {
            let lcl = dh_to_lcl(pt);
            let mut coords = lcl.q.clone();
            for &alpha in &chart.f_states {
                coords.push(lcl.b[alpha]);
            }
            for &(_, a) in &chart.matched {
                coords.push(lcl.u[a]);
            }
            if let Ok(det) = chart.legendre_jacobian_det(&coords) {
                let v = det.abs();
                min = Some(min.map_or(v, |m: f64| m.min(v)));
            }
        }
        min
    });

    let all_passed = checks.iter().all(|c| c.passed());
    Ok(IdentityReport {
        problem: problem.name.clone(),
        seed,
        samples_requested: count,
        samples_generated: generated,
        checks,
        min_abs_legendre_jacobian,
        all_passed,
    })
}

/// Exact identities of the canonical maps at dimension `n`, verified
/// on 100 reproducible random points (zero tolerance: the maps only
/// move or negate coordinates).
pub fn geometry_identities(n: usize, seed: u64) -> Vec<IdentityCheck> {
    let mut rng = SplitMix64::new(seed ^ 0x9E0);
    let mut kappa_res = Vec::new();
    let mut sharp_flat_res = Vec::new();
    for _ in 0..100 {
        let ttq = ChartPoint::new(
            Chart::TTQ,
            n,
            (0..4 * n).map(|_| rng.uniform(-10.0, 10.0)).collect(),
        )
        .expect("valid chart point");
        let twice = kappa(&kappa(&ttq).expect("chart ok")).expect("chart ok");
        kappa_res.push(if twice == ttq { 0.0 } else { 1.0 });

        let tcq = ChartPoint::new(
            Chart::TCotQ,
            n,
            (0..4 * n).map(|_| rng.uniform(-10.0, 10.0)).collect(),
        )
        .expect("valid chart point");
        let back = sharp(&flat(&tcq).expect("chart ok")).expect("chart ok");
        sharp_flat_res.push(if back == tcq { 0.0 } else { 1.0 });
    }

    let tangent = SymplecticMatrix::tangent_lift(n);
    let cotangent = SymplecticMatrix::cotangent(2 * n);
    let alpha_ok = check_symplectomorphism(&alpha_matrix(n), &tangent, &cotangent)
        == Ok(Some(SymplSign::Plus));
    let flat_ok = check_symplectomorphism(&flat_matrix(n), &tangent, &cotangent)
        == Ok(Some(SymplSign::Minus));

    vec![
        IdentityCheck::from_residuals("kappa-involution", 0.0, &kappa_res),
        IdentityCheck::from_residuals("sharp-flat-inverse", 0.0, &sharp_flat_res),
        IdentityCheck::from_residuals(
            "alpha-symplectomorphism",
            0.0,
            &[if alpha_ok { 0.0 } else { 1.0 }],
        ),
        IdentityCheck::from_residuals(
            "flat-pullback-sign",
            0.0,
            &[if flat_ok { 0.0 } else { 1.0 }],
        ),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::load_problem;

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
    fn suite_passes_on_the_train() {
        let report = run_identity_suite(&train(), 200, 0, 2.0, 0.0).unwrap();
        assert!(report.all_passed, "{report:#?}");
        assert!(report.samples_generated >= 100);
        // Leg is the identity map in the reduced chart: |det J| = 1.
        let det = report.min_abs_legendre_jacobian.unwrap();
        assert!((det - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn perturbation_is_detected() {
        let report = run_identity_suite(&train(), 50, 0, 2.0, 1e-3).unwrap();
        assert!(!report.all_passed);
        let failing: Vec<&str> = report
            .checks
            .iter()
            .filter(|c| !c.passed())
            .map(|c| c.name.as_str())
            .collect();
        assert!(failing.contains(&"energy"));
        assert!(failing.contains(&"alpha-relation"));
    }

    #[test]
    fn geometry_block_is_exact() {
        for n in 1..=3 {
            for check in geometry_identities(n, 7) {
                assert!(check.passed(), "{check:?}");
                assert_eq!(check.max_residual, 0.0);
            }
        }
    }
}
