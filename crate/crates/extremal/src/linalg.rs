//! Small dense linear-algebra helpers shared across modules.
//!
//! Thin wrappers over nalgebra that fix the conventions used
//! everywhere: numeric rank counts singular values at or above
//! `tol * sigma_max`, and kernels come from a full SVD (the input is
//! zero-padded to a square matrix so the right singular basis is
//! complete even for wide matrices).

use nalgebra::{DMatrix, DVector};

/// Singular values of `m`, descending.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    m.clone().svd(false, false).singular_values.iter().copied().collect()
}

/// Numeric rank: singular values >= `tol * scale` count, where `scale`
/// defaults to the largest singular value of `m` itself.
pub fn rank_with_scale(m: &DMatrix<f64>, tol: f64, scale: Option<f64>) -> usize {
    let sv = singular_values(m);
    let scale = scale.unwrap_or_else(|| sv.first().copied().unwrap_or(0.0));
    if scale == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s >= tol * scale).count()
}

/// Full SVD data of a possibly wide matrix: all `ncols` singular
/// directions are returned (missing ones padded with zero singular
/// values).
pub struct FullSvd {
    /// Length `ncols`, descending; padded with zeros for wide inputs.
    pub sigmas: Vec<f64>,
    /// `ncols x ncols`; column `j` is the right singular vector for
    /// `sigmas[j]`.
    pub v: DMatrix<f64>,
}

pub fn full_svd(m: &DMatrix<f64>) -> FullSvd {
    let (rows, cols) = m.shape();
    let padded = if rows < cols {
        let mut p = DMatrix::<f64>::zeros(cols, cols);
        p.view_mut((0, 0), (rows, cols)).copy_from(m);
        p
    } else {
        m.clone()
    };
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("requested");
    let mut sigmas: Vec<f64> = svd.singular_values.iter().copied().collect();
    sigmas.resize(cols, 0.0);
    FullSvd {
        sigmas,
        v: v_t.transpose(),
    }
}

/// Orthonormal kernel basis of `m` at relative tolerance `tol`
/// (directions with singular value below `tol * sigma_max`).
pub fn kernel_basis(m: &DMatrix<f64>, tol: f64) -> Vec<DVector<f64>> {
    let svd = full_svd(m);
    let scale = svd.sigmas.first().copied().unwrap_or(0.0);
    let cutoff = if scale == 0.0 { f64::INFINITY } else { tol * scale };
    let mut basis = Vec::new();
    for (j, &s) in svd.sigmas.iter().enumerate() {
        if s < cutoff || scale == 0.0 {
            basis.push(svd.v.column(j).into_owned());
        }
    }
    basis
}

/// Minimum-norm least-squares solution of `a x = b`.
pub fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>, tol: f64) -> DVector<f64> {
    let svd = a.clone().svd(true, true);
    let eps = tol * svd.singular_values.max().max(f64::MIN_POSITIVE);
    svd.solve(b, eps).expect("svd solve")
}
