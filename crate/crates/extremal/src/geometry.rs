//! Coordinate realizations of the canonical bundle maps.
//!
//! Everything here works in a single global chart on R^n. Points of the
//! iterated (co)tangent bundles are flat coordinate vectors with a
//! fixed block layout per chart, and the canonical maps are exact block
//! permutations (with sign flips for the musical isomorphisms):
//!
//! * `kappa : TTQ -> TTQ`, `(q, v, qdot, vdot) -> (q, qdot, v, vdot)`
//! * `alpha : TT*Q -> T*TQ`, `(q, p, qdot, pdot) -> (q, qdot, pdot, p)`
//! * `flat  : TT*Q -> T*T*Q`, `(q, p, qdot, pdot) -> (q, p, -pdot, qdot)`
//! * `sharp = flat^-1`
//!
//! Because the entries are only moved or negated, all identities
//! (involution, inverse pairs, symplectomorphism checks) hold exactly
//! in floating point, with no tolerance.

use nalgebra::DMatrix;
use serde::Serialize;

/// Chart tags for the bundles in play. Block layouts, each block of
/// length `n`:
///
/// | chart | blocks |
/// |-------|--------|
/// | `TQ` | `(q, v)` |
/// | `CotQ` (T\*Q) | `(q, p)` |
/// | `TCotQ` (TT\*Q) | `(q, p, qdot, pdot)` |
/// | `CotTQ` (T\*TQ) | `(q, v, a, b)` |
/// | `TTQ` | `(q, v, qdot, vdot)` |
/// | `CotCotQ` (T\*T\*Q) | `(q, p, A, B)` |
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Chart {
    TQ,
    CotQ,
    TCotQ,
    CotTQ,
    TTQ,
    CotCotQ,
}

impl Chart {
    /// Number of length-`n` blocks in the chart.
    pub fn arity(self) -> usize {
        match self {
            Chart::TQ | Chart::CotQ => 2,
            Chart::TCotQ | Chart::CotTQ | Chart::TTQ | Chart::CotCotQ => 4,
        }
    }
}

/// A point of one of the bundle charts: `n = dim Q` plus the flat
/// coordinate vector of length `arity * n`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChartPoint {
    pub chart: Chart,
    pub n: usize,
    pub coords: Vec<f64>,
}

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum GeometryError {
    #[error("expected a point of chart {expected:?}, got {got:?}")]
    WrongChart { expected: Chart, got: Chart },
    #[error("coordinate vector has length {got}, chart {chart:?} with n={n} needs {want}")]
    BadLength {
        chart: Chart,
        n: usize,
        got: usize,
        want: usize,
    },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

impl ChartPoint {
    pub fn new(chart: Chart, n: usize, coords: Vec<f64>) -> Result<ChartPoint, GeometryError> {
        let want = chart.arity() * n;
        if coords.len() != want {
            return Err(GeometryError::BadLength {
                chart,
                n,
                got: coords.len(),
                want,
            });
        }
        Ok(ChartPoint { chart, n, coords })
    }

    fn expect_chart(&self, expected: Chart) -> Result<(), GeometryError> {
        if self.chart != expected {
            return Err(GeometryError::WrongChart {
                expected,
                got: self.chart,
            });
        }
        Ok(())
    }

    /// Block `i` (0-based) of the coordinate vector.
    pub fn block(&self, i: usize) -> &[f64] {
        &self.coords[i * self.n..(i + 1) * self.n]
    }
}

fn assemble(chart: Chart, n: usize, blocks: [&[f64]; 4], signs: [f64; 4]) -> ChartPoint {
    let mut coords = Vec::with_capacity(4 * n);
    for (b, s) in blocks.iter().zip(signs) {
        coords.extend(b.iter().map(|x| if s < 0.0 { -x } else { *x }));
    }
    ChartPoint { chart, n, coords }
}

/// Canonical involution of `TTQ`: swaps the velocity blocks,
/// `(q, v, qdot, vdot) -> (q, qdot, v, vdot)`.
pub fn kappa(pt: &ChartPoint) -> Result<ChartPoint, GeometryError> {
    pt.expect_chart(Chart::TTQ)?;
    Ok(assemble(
        Chart::TTQ,
        pt.n,
        [pt.block(0), pt.block(2), pt.block(1), pt.block(3)],
        [1.0; 4],
    ))
}

/// The isomorphism `TT*Q -> T*TQ`,
/// `(q, p, qdot, pdot) -> (q, qdot, pdot, p)`.
pub fn alpha(pt: &ChartPoint) -> Result<ChartPoint, GeometryError> {
    pt.expect_chart(Chart::TCotQ)?;
    Ok(assemble(
        Chart::CotTQ,
        pt.n,
        [pt.block(0), pt.block(2), pt.block(3), pt.block(1)],
        [1.0; 4],
    ))
}

/// Inverse of [`alpha`]: `(q, v, a, b) -> (q, b, v, a)`.
pub fn alpha_inv(pt: &ChartPoint) -> Result<ChartPoint, GeometryError> {
    pt.expect_chart(Chart::CotTQ)?;
    Ok(assemble(
        Chart::TCotQ,
        pt.n,
        [pt.block(0), pt.block(3), pt.block(1), pt.block(2)],
        [1.0; 4],
    ))
}

/// Musical isomorphism of the canonical symplectic form on `T*Q`
/// (this is also the second leg of the bundle-map triple):
/// `(q, p, qdot, pdot) -> (q, p, -pdot, qdot)`.
pub fn flat(pt: &ChartPoint) -> Result<ChartPoint, GeometryError> {
    pt.expect_chart(Chart::TCotQ)?;
    Ok(assemble(
        Chart::CotCotQ,
        pt.n,
        [pt.block(0), pt.block(1), pt.block(3), pt.block(2)],
        [1.0, 1.0, -1.0, 1.0],
    ))
}

/// Inverse of [`flat`]: `(q, p, A, B) -> (q, p, B, -A)`.
pub fn sharp(pt: &ChartPoint) -> Result<ChartPoint, GeometryError> {
    pt.expect_chart(Chart::CotCotQ)?;
    Ok(assemble(
        Chart::TCotQ,
        pt.n,
        [pt.block(0), pt.block(1), pt.block(3), pt.block(2)],
        [1.0, 1.0, 1.0, -1.0],
    ))
}

/// A constant-coefficient 2-form on an even-dimensional chart, stored
/// with the convention `entries[(i, j)] = omega(e_i, e_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymplecticMatrix {
    pub entries: DMatrix<f64>,
}

impl SymplecticMatrix {
    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    /// Canonical symplectic form `sum_i dm^i ^ dmu_i` on the cotangent
    /// bundle of a `base_dim`-dimensional base, coordinates ordered
    /// (base..., fiber...). For `base_dim = n` this is `dq ^ dp` on
    /// T*Q; for `base_dim = 2n` it covers the forms on T*TQ and T*T*Q.
    pub fn cotangent(base_dim: usize) -> SymplecticMatrix {
        let d = 2 * base_dim;
        let mut m = DMatrix::<f64>::zeros(d, d);
        for i in 0..base_dim {
            m[(i, base_dim + i)] = 1.0;
            m[(base_dim + i, i)] = -1.0;
        }
        SymplecticMatrix { entries: m }
    }

    /// Tangent lift `d qdot ^ dp + dq ^ d pdot` of the canonical form,
    /// on `TT*Q` with coordinates `(q, p, qdot, pdot)`.
    pub fn tangent_lift(n: usize) -> SymplecticMatrix {
        let mut m = DMatrix::<f64>::zeros(4 * n, 4 * n);
        for i in 0..n {
            // d qdot^i ^ dp_i
            m[(2 * n + i, n + i)] = 1.0;
            m[(n + i, 2 * n + i)] = -1.0;
            // dq^i ^ d pdot_i
            m[(i, 3 * n + i)] = 1.0;
            m[(3 * n + i, i)] = -1.0;
        }
        SymplecticMatrix { entries: m }
    }

    pub fn is_antisymmetric(&self) -> bool {
        let t = self.entries.transpose();
        self.entries == -t
    }
}

/// Matrix of [`alpha`] acting on `(q, p, qdot, pdot)` coordinates.
pub fn alpha_matrix(n: usize) -> DMatrix<f64> {
    permutation_matrix(n, &[(0, 0, 1.0), (1, 2, 1.0), (2, 3, 1.0), (3, 1, 1.0)])
}

/// Matrix of [`flat`] on `(q, p, qdot, pdot)` coordinates.
pub fn flat_matrix(n: usize) -> DMatrix<f64> {
    permutation_matrix(n, &[(0, 0, 1.0), (1, 1, 1.0), (2, 3, -1.0), (3, 2, 1.0)])
}

/// Matrix of [`kappa`] on `(q, v, qdot, vdot)` coordinates.
pub fn kappa_matrix(n: usize) -> DMatrix<f64> {
    permutation_matrix(n, &[(0, 0, 1.0), (1, 2, 1.0), (2, 1, 1.0), (3, 3, 1.0)])
}

/// Block permutation with signs: entry (out_block, in_block, sign)
/// means output block `out` equals `sign *` input block `in`.
fn permutation_matrix(n: usize, moves: &[(usize, usize, f64)]) -> DMatrix<f64> {
    let mut m = DMatrix::<f64>::zeros(4 * n, 4 * n);
    for &(out, inp, sign) in moves {
        for i in 0..n {
            m[(out * n + i, inp * n + i)] = sign;
        }
    }
    m
}

/// Outcome of an exact symplectomorphism test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SymplSign {
    Plus,
    Minus,
}

/// Tests exactly (entrywise `==`, no tolerance) whether
/// `M^T . target . M` equals `+source` or `-source`. The sign is
/// reported: the tangent lift satisfies `d_T omega = -flat^* omega`,
/// so a minus sign is legal and flagged rather than rejected.
pub fn check_symplectomorphism(
    map: &DMatrix<f64>,
    source: &SymplecticMatrix,
    target: &SymplecticMatrix,
) -> Result<Option<SymplSign>, GeometryError> {
    let d = source.dim();
    if target.dim() != d || map.nrows() != d || map.ncols() != d {
        return Err(GeometryError::DimensionMismatch(format!(
            "source {}x{}, target {}x{}, map {}x{}",
            d,
            d,
            target.dim(),
            target.dim(),
            map.nrows(),
            map.ncols()
        )));
    }
    let pulled = map.transpose() * &target.entries * map;
    if pulled == source.entries {
        Ok(Some(SymplSign::Plus))
    } else if pulled == -&source.entries {
        Ok(Some(SymplSign::Minus))
    } else {
        Ok(None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sample::SplitMix64;

    fn random_point(chart: Chart, n: usize, rng: &mut SplitMix64) -> ChartPoint {
        let coords = (0..chart.arity() * n).map(|_| rng.uniform(-5.0, 5.0)).collect();
        ChartPoint::new(chart, n, coords).unwrap()
    }

    #[test]
    fn kappa_swaps_blocks() {
        let pt = ChartPoint::new(Chart::TTQ, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(kappa(&pt).unwrap().coords, vec![1.0, 3.0, 2.0, 4.0]);
    }

    #[test]
    fn kappa_fixes_diagonal_points() {
        let pt = ChartPoint::new(Chart::TTQ, 2, vec![1.0, 2.0, 3.0, 4.0, 3.0, 4.0, 7.0, 8.0]).unwrap();
        assert_eq!(kappa(&pt).unwrap(), pt);
    }

    #[test]
    fn kappa_is_an_involution_exactly() {
        let mut rng = SplitMix64::new(1);
        for n in 1..=3 {
            for _ in 0..50 {
                let pt = random_point(Chart::TTQ, n, &mut rng);
                assert_eq!(kappa(&kappa(&pt).unwrap()).unwrap(), pt);
            }
        }
    }

    #[test]
    fn alpha_reorders_blocks() {
        let pt = ChartPoint::new(Chart::TCotQ, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let out = alpha(&pt).unwrap();
        assert_eq!(out.chart, Chart::CotTQ);
        assert_eq!(out.coords, vec![1.0, 3.0, 4.0, 2.0]);
    }

    #[test]
    fn alpha_bijection_exact() {
        let zero = ChartPoint::new(Chart::TCotQ, 2, vec![0.0; 8]).unwrap();
        assert_eq!(alpha(&zero).unwrap().coords, vec![0.0; 8]);
        let mut rng = SplitMix64::new(2);
        for _ in 0..100 {
            let pt = random_point(Chart::TCotQ, 2, &mut rng);
            assert_eq!(alpha_inv(&alpha(&pt).unwrap()).unwrap(), pt);
        }
    }

    #[test]
    fn sharp_inverts_flat() {
        let form = ChartPoint::new(Chart::CotCotQ, 1, vec![0.0, 0.0, -4.0, 3.0]).unwrap();
        let out = sharp(&form).unwrap();
        assert_eq!(out.chart, Chart::TCotQ);
        assert_eq!(out.coords, vec![0.0, 0.0, 3.0, 4.0]);

        let zero_fiber = ChartPoint::new(Chart::CotCotQ, 1, vec![1.5, -2.5, 0.0, 0.0]).unwrap();
        assert_eq!(sharp(&zero_fiber).unwrap().coords, vec![1.5, -2.5, 0.0, 0.0]);

        let mut rng = SplitMix64::new(3);
        for _ in 0..100 {
            let v = random_point(Chart::TCotQ, 3, &mut rng);
            assert_eq!(sharp(&flat(&v).unwrap()).unwrap(), v);
        }
    }

    #[test]
    fn wrong_chart_is_rejected() {
        let pt = ChartPoint::new(Chart::TCotQ, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!(matches!(kappa(&pt), Err(GeometryError::WrongChart { .. })));
    }

    #[test]
    fn alpha_is_a_symplectomorphism() {
        for n in 1..=3 {
            let src = SymplecticMatrix::tangent_lift(n);
            let tgt = SymplecticMatrix::cotangent(2 * n);
            let sign = check_symplectomorphism(&alpha_matrix(n), &src, &tgt).unwrap();
            assert_eq!(sign, Some(SymplSign::Plus));
        }
    }

    #[test]
    fn flat_pulls_back_with_sign_minus() {
        for n in 1..=3 {
            let src = SymplecticMatrix::tangent_lift(n);
            let tgt = SymplecticMatrix::cotangent(2 * n);
            let sign = check_symplectomorphism(&flat_matrix(n), &src, &tgt).unwrap();
            assert_eq!(sign, Some(SymplSign::Minus));
        }
    }

    #[test]
    fn identity_on_equal_forms() {
        let omega = SymplecticMatrix::cotangent(2);
        let id = DMatrix::<f64>::identity(4, 4);
        assert_eq!(
            check_symplectomorphism(&id, &omega, &omega).unwrap(),
            Some(SymplSign::Plus)
        );
        let not_symplectic = DMatrix::<f64>::identity(4, 4) * 2.0;
        assert_eq!(
            check_symplectomorphism(&not_symplectic, &omega, &omega).unwrap(),
            None
        );
    }

    #[test]
    fn dimension_mismatch() {
        let a = SymplecticMatrix::cotangent(1);
        let b = SymplecticMatrix::cotangent(2);
        let id = DMatrix::<f64>::identity(2, 2);
        assert!(check_symplectomorphism(&id, &a, &b).is_err());
    }

    #[test]
    fn forms_are_antisymmetric_and_nondegenerate() {
        for m in [
            SymplecticMatrix::cotangent(3),
            SymplecticMatrix::tangent_lift(2),
        ] {
            assert!(m.is_antisymmetric());
            assert!(m.entries.determinant().abs() > 0.5);
        }
    }
}
