//! Orthogonal Procrustes alignment against an anchor frame.
//!
//! `op_solve(A, B)` minimizes `‖A·Q − B‖_F` over the orthogonal group; with
//! `AᵀB = L·Λ·Rᵀ` the minimizer is `Q⋆ = L·Rᵀ`. `op_align(V, V₀)` picks the
//! frame `V·Q⋆` of `span(V)` closest to the anchor `V₀`, which is unique
//! exactly when `V₀ᵀVVᵀV₀` is positive definite.
//!
//! The module also carries the large-dimension law `ℓ(c)` for the fraction of
//! squared distance between two independent Haar frames removed by
//! alignment, and a Monte Carlo driver that checks it.

use serde::{Deserialize, Serialize};

use crate::error::{GatsError, Result};
use crate::linalg::{haar_stiefel_from, spd_inv_sqrt, svd, StiefelMatrix};
use crate::par::{self, Execution};
use crate::rng::{item_seed, task_seed, GatsRng};
use crate::tensor::DenseMatrix;

pub use crate::linalg::nuclear_norm;

/// Outcome of aligning a frame to an anchor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentResult {
    /// `Ṽ = V·Q⋆`.
    pub aligned: StiefelMatrix,
    /// `Q⋆`, orthogonal `r × r`.
    pub rotation: DenseMatrix,
    /// `λ_min(V₀ᵀVVᵀV₀)`.
    pub overlap_min_eig: f64,
    /// `‖V₀ − Ṽ‖_F²`.
    pub sq_distance: f64,
}

fn same_shape(a: &DenseMatrix, b: &DenseMatrix) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(GatsError::ShapeMismatch(format!(
            "Procrustes operands {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// `Q⋆ = L·Rᵀ` where `AᵀB = L·Λ·Rᵀ`.
///
/// Rank-deficient `AᵀB` still yields an optimal (non-unique) rotation.
pub fn op_solve(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    same_shape(a, b)?;
    let f = svd(&a.t_matmul(b)?)?;
    f.u.matmul_t(&f.v)
}

/// Aligns `v` to the anchor `v0` through the SVD route.
///
/// Fails with [`GatsError::OverlapViolation`] when
/// `λ_min(V₀ᵀVVᵀV₀) ≤ 1e-10 · trace(V₀ᵀVVᵀV₀) / r`.
pub fn op_align(v: &StiefelMatrix, v0: &StiefelMatrix) -> Result<AlignmentResult> {
    same_shape(v.matrix(), v0.matrix())?;
    let r = v.r();
    // VᵀV₀ = L·Λ·Rᵀ; the Gram V₀ᵀVVᵀV₀ has eigenvalues Λ².
    let f = svd(&v.matrix().t_matmul(v0.matrix())?)?;
    let trace: f64 = f.s.iter().map(|s| s * s).sum();
    let floor = 1e-10 * trace / r as f64;
    let min_sigma = *f.s.last().expect("r >= 1");
    let overlap_min_eig = min_sigma * min_sigma;
    if !(overlap_min_eig > floor) {
        return Err(GatsError::OverlapViolation {
            min_eig: overlap_min_eig,
            floor,
            mode: None,
            sample: None,
        });
    }
    let rotation = f.u.matmul_t(&f.v)?;
    let aligned = v.matrix().matmul(&rotation)?;
    let sq_distance = v0.matrix().sub(&aligned)?.frobenius_norm().powi(2);
    Ok(AlignmentResult {
        aligned: StiefelMatrix::from_trusted(aligned),
        rotation,
        overlap_min_eig,
        sq_distance,
    })
}

/// Closed-form alignment `VVᵀV₀ (V₀ᵀVVᵀV₀)^{-1/2}`, the second route to
/// [`op_align`].
pub fn op_align_closed_form(v: &StiefelMatrix, v0: &StiefelMatrix) -> Result<DenseMatrix> {
    same_shape(v.matrix(), v0.matrix())?;
    let proj = v.matrix().matmul(&v.matrix().t_matmul(v0.matrix())?)?;
    let gram = v0.matrix().t_matmul(&proj)?;
    let inv_sqrt = spd_inv_sqrt(&gram).map_err(|e| match e {
        GatsError::NotPositiveDefinite { min_eig, floor } => GatsError::OverlapViolation {
            min_eig,
            floor,
            mode: None,
            sample: None,
        },
        other => other,
    })?;
    proj.matmul(&inv_sqrt)
}

/// Squared Stiefel distance after alignment via the nuclear-norm identity
/// `‖V₀ − V·Q⋆‖_F² = 2r − 2‖V₀ᵀV‖_*`.
pub fn aligned_sq_distance(v: &StiefelMatrix, v0: &StiefelMatrix) -> Result<f64> {
    same_shape(v.matrix(), v0.matrix())?;
    let nuc = nuclear_norm(&v0.matrix().t_matmul(v.matrix())?)?;
    Ok(2.0 * v.r() as f64 - 2.0 * nuc)
}

/// Limiting fraction `ℓ(c)` of the squared distance between two independent
/// Haar frames in `Stie(p, r)` removed by alignment, with `c = p / r ≥ 1`.
pub fn ell(c: f64) -> Result<f64> {
    if !(c >= 1.0) || !c.is_finite() {
        return Err(GatsError::InvalidArgument(format!(
            "ell needs c >= 1, got {c}"
        )));
    }
    let b = 4.0 * (c - 1.0) / (c * c);
    let bulk = if b < 1e-14 {
        0.0
    } else {
        let one_minus_b = 1.0 - b;
        let edge = if one_minus_b < 1e-14 {
            0.0
        } else {
            one_minus_b.sqrt() * (b / one_minus_b).sqrt().atan()
        };
        c / std::f64::consts::PI * (b.sqrt() - edge)
    };
    Ok(bulk + (2.0 - c).max(0.0))
}

/// Mean and standard error of the normalized aligned distance over trials.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    pub mean: f64,
    pub std_err: f64,
    pub trials: usize,
}

/// `(V₀, V, ‖V₀ − V·Q⋆‖_F² / 2r)` for one trial of [`mc_aligned_distance`].
pub fn mc_trial(p: usize, r: usize, seed: u64, trial: u64) -> Result<(StiefelMatrix, StiefelMatrix, f64)> {
    let mut rng = GatsRng::new(item_seed(task_seed(seed, "prop2"), trial));
    let v0 = haar_stiefel_from(&mut rng, p, r)?;
    let v = haar_stiefel_from(&mut rng, p, r)?;
    let d = aligned_sq_distance(&v, &v0)? / (2.0 * r as f64);
    Ok((v0, v, d))
}

/// Monte Carlo estimate of `E‖V₀ − V·Q⋆‖_F² / 2r` for independent Haar
/// frames in `Stie(p, r)`; the limit is `1 − ℓ(p / r)`.
pub fn mc_aligned_distance(
    p: usize,
    r: usize,
    trials: usize,
    seed: u64,
    exec: Execution,
) -> Result<McSummary> {
    if r == 0 || r >= p {
        return Err(GatsError::InvalidArgument(format!(
            "need 1 <= r < p, got p={p}, r={r}"
        )));
    }
    if trials == 0 {
        return Err(GatsError::InvalidArgument("trials must be >= 1".into()));
    }
    let values = par::try_map_indexed(exec, trials, |t| {
        mc_trial(p, r, seed, t as u64).map(|(_, _, d)| d)
    })?;
    Ok(summarize(&values))
}

pub(crate) fn summarize(values: &[f64]) -> McSummary {
    let n = values.len();
    let mut sum = 0.0;
    for v in values {
        sum += v;
    }
    let mean = sum / n as f64;
    let std_err = if n > 1 {
        let mut ss = 0.0;
        for v in values {
            ss += (v - mean) * (v - mean);
        }
        (ss / (n - 1) as f64).sqrt() / (n as f64).sqrt()
    } else {
        0.0
    };
    McSummary {
        mean,
        std_err,
        trials: n,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{haar_orthogonal, haar_stiefel, orthonormality_defect};

    #[test]
    fn solve_identity_and_known_rotation() {
        let a = haar_stiefel(6, 3, 1).unwrap();
        let q = op_solve(a.matrix(), a.matrix()).unwrap();
        assert!(q.max_abs_diff(&DenseMatrix::identity(3)) < 1e-12);
        let mut rng = GatsRng::new(2);
        let q0 = haar_orthogonal(3, &mut rng);
        let b = a.matrix().matmul(&q0).unwrap();
        let q = op_solve(a.matrix(), &b).unwrap();
        assert!(q.max_abs_diff(&q0) < 1e-9);
        assert!(op_solve(a.matrix(), &DenseMatrix::zeros(6, 2)).is_err());
    }

    #[test]
    fn align_self_and_gauge() {
        let v0 = haar_stiefel(8, 3, 3).unwrap();
        let res = op_align(&v0, &v0).unwrap();
        assert!(res.aligned.matrix().max_abs_diff(v0.matrix()) < 1e-12);
        assert!(res.sq_distance < 1e-20);
        let mut rng = GatsRng::new(4);
        let q = haar_orthogonal(3, &mut rng);
        let rotated = StiefelMatrix::new(v0.matrix().matmul(&q).unwrap()).unwrap();
        let res = op_align(&rotated, &v0).unwrap();
        assert!(res.aligned.matrix().max_abs_diff(v0.matrix()) < 1e-10);
    }

    #[test]
    fn r1_sign_flip() {
        let v = StiefelMatrix::new(DenseMatrix::new(3, 1, vec![0.6, 0.8, 0.0]).unwrap()).unwrap();
        let v0 = StiefelMatrix::new(DenseMatrix::new(3, 1, vec![0.0, -1.0, 0.0]).unwrap()).unwrap();
        // O(1) = {+1, -1}: distances are ‖v0 - v‖² = 2 + 1.6 and ‖v0 + v‖² = 2 - 1.6.
        let res = op_align(&v, &v0).unwrap();
        let expect = [-0.6, -0.8, 0.0];
        for (g, e) in res.aligned.matrix().data().iter().zip(expect) {
            assert!((g - e).abs() < 1e-15);
        }
        assert!((res.sq_distance - 0.4).abs() < 1e-14);
    }

    #[test]
    fn overlap_violation_is_loud() {
        let v = StiefelMatrix::new(DenseMatrix::new(3, 1, vec![1.0, 0.0, 0.0]).unwrap()).unwrap();
        let v0 = StiefelMatrix::new(DenseMatrix::new(3, 1, vec![0.0, 1.0, 0.0]).unwrap()).unwrap();
        assert!(matches!(op_align(&v, &v0), Err(GatsError::OverlapViolation { .. })));
        assert!(matches!(
            op_align_closed_form(&v, &v0),
            Err(GatsError::OverlapViolation { .. })
        ));
        // op_solve still returns an orthogonal representative.
        let q = op_solve(v.matrix(), v0.matrix()).unwrap();
        assert!(orthonormality_defect(&q) < 1e-12);
    }

    #[test]
    fn nuclear_norm_cases() {
        assert!((nuclear_norm(&DenseMatrix::identity(4)).unwrap() - 4.0).abs() < 1e-15);
        let d = DenseMatrix::from_diag(&[3.0, -2.0]);
        assert!((nuclear_norm(&d).unwrap() - 5.0).abs() < 1e-15);
    }

    #[test]
    fn ell_limits() {
        assert_eq!(ell(1.0).unwrap(), 1.0);
        assert!((ell(2.0).unwrap() - 2.0 / std::f64::consts::PI).abs() < 1e-15);
        assert!(ell(0.5).is_err());
        assert!(ell(f64::NAN).is_err());
    }

    #[test]
    fn ell_at_four() {
        // b = 3/4: (4/π)(√3/2 − ½·π/3)
        let expect = 4.0 / std::f64::consts::PI * (3f64.sqrt() / 2.0 - std::f64::consts::PI / 6.0);
        assert!((ell(4.0).unwrap() - expect).abs() < 1e-15);
        assert!((ell(4.0).unwrap() - 0.4360).abs() < 1e-4);
    }

    #[test]
    fn mc_rejects_bad_config() {
        assert!(mc_aligned_distance(4, 4, 10, 0, Execution::Sequential).is_err());
        assert!(mc_aligned_distance(4, 2, 0, 0, Execution::Sequential).is_err());
    }

    #[test]
    fn mc_single_trial_r1() {
        let (v0, v, d) = mc_trial(2, 1, 17, 0).unwrap();
        let ip: f64 = v0.matrix().data().iter().zip(v.matrix().data()).map(|(a, b)| a * b).sum();
        assert!((d - (1.0 - ip.abs())).abs() < 1e-14);
        let s = mc_aligned_distance(2, 1, 1, 17, Execution::Sequential).unwrap();
        assert_eq!(s.mean, d);
        assert_eq!(s.std_err, 0.0);
    }

    #[test]
    fn mc_thread_independent() {
        let a = mc_aligned_distance(20, 5, 16, 3, Execution::Sequential).unwrap();
        let b = mc_aligned_distance(20, 5, 16, 3, Execution::Parallel).unwrap();
        assert_eq!(a.mean.to_bits(), b.mean.to_bits());
        assert_eq!(a.std_err.to_bits(), b.std_err.to_bits());
    }
}
