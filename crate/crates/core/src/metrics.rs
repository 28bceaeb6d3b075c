//! Reconstruction error metrics, classical MDS and 1-d distribution
//! diagnostics.

use serde::{Serialize, Serializer};

use crate::error::{GatsError, Result};
use crate::linalg::{sym_eig, StiefelMatrix};
use crate::tensor::{rel_err_l2, unfold, DenseMatrix, DenseTensor};

fn ser_psnr<S: Serializer>(v: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match v {
        Some(x) if x.is_infinite() => s.serialize_str("inf"),
        Some(x) => s.serialize_f64(*x),
        None => s.serialize_none(),
    }
}

/// Error summary of an estimate against a reference.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ErrorReport {
    pub rel_err_l1: f64,
    pub rel_err_l2: f64,
    pub rmse: f64,
    /// dB for the supplied value range; `+∞` (serialized `"inf"`) when exact.
    #[serde(serialize_with = "ser_psnr")]
    pub psnr: Option<f64>,
    /// Mean per-frame RMSE along the time mode (equals `rmse` without one).
    pub avg_rmse: f64,
}

pub fn error_report(
    x: &DenseTensor,
    x_hat: &DenseTensor,
    time_mode: Option<usize>,
    value_range: Option<f64>,
) -> Result<ErrorReport> {
    let diff = x.sub(x_hat)?;
    let l1_ref: f64 = x.data().iter().map(|v| v.abs()).sum();
    if l1_ref == 0.0 {
        return Err(GatsError::ZeroNorm);
    }
    let rel_err_l1 = diff.data().iter().map(|v| v.abs()).sum::<f64>() / l1_ref;
    let rel_err_l2 = rel_err_l2(x, x_hat)?;
    let mse = diff.data().iter().map(|v| v * v).sum::<f64>() / diff.len() as f64;
    let rmse = mse.sqrt();
    let psnr = match value_range {
        Some(range) if range > 0.0 => Some(if rmse == 0.0 {
            f64::INFINITY
        } else {
            20.0 * (range / rmse).log10()
        }),
        Some(range) => {
            return Err(GatsError::InvalidArgument(format!(
                "value range must be positive, got {range}"
            )))
        }
        None => None,
    };
    let avg_rmse = match time_mode {
        Some(k) => {
            let frames = unfold(&diff, k)?;
            let per: f64 = (0..frames.rows())
                .map(|t| {
                    let row = frames.row(t);
                    (row.iter().map(|v| v * v).sum::<f64>() / row.len() as f64).sqrt()
                })
                .sum();
            per / frames.rows() as f64
        }
        None => rmse,
    };
    Ok(ErrorReport {
        rel_err_l1,
        rel_err_l2,
        rmse,
        psnr,
        avg_rmse,
    })
}

/// Mean of per-sample reports (PSNR averaged over finite values only).
pub fn mean_report(reports: &[ErrorReport]) -> Result<ErrorReport> {
    if reports.is_empty() {
        return Err(GatsError::Empty("reports"));
    }
    let n = reports.len() as f64;
    let avg = |f: fn(&ErrorReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    let psnrs: Vec<f64> = reports.iter().filter_map(|r| r.psnr).collect();
    let psnr = if psnrs.is_empty() {
        None
    } else if psnrs.iter().all(|p| p.is_infinite()) {
        Some(f64::INFINITY)
    } else {
        let finite: Vec<f64> = psnrs.iter().copied().filter(|p| p.is_finite()).collect();
        Some(finite.iter().sum::<f64>() / finite.len() as f64)
    };
    Ok(ErrorReport {
        rel_err_l1: avg(|r| r.rel_err_l1),
        rel_err_l2: avg(|r| r.rel_err_l2),
        rmse: avg(|r| r.rmse),
        psnr,
        avg_rmse: avg(|r| r.avg_rmse),
    })
}

/// Classical MDS embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct MdsEmbedding {
    /// `N × out_dim`.
    pub coords: DenseMatrix,
    /// Leading eigenvalues of the double-centred matrix (before clamping).
    pub eigenvalues: Vec<f64>,
}

/// `−½·J·(D∘D)·J`, `J = I − 11ᵀ/N`.
pub fn double_center(d: &DenseMatrix) -> DenseMatrix {
    let n = d.rows();
    let sq = DenseMatrix::from_fn(n, n, |i, j| d.get(i, j) * d.get(i, j));
    let row_mean: Vec<f64> = (0..n).map(|i| sq.row(i).iter().sum::<f64>() / n as f64).collect();
    let total = row_mean.iter().sum::<f64>() / n as f64;
    // D∘D is symmetric, so column means equal row means.
    DenseMatrix::from_fn(n, n, |i, j| -0.5 * (sq.get(i, j) - row_mean[i] - row_mean[j] + total))
}

pub fn classical_mds(d: &DenseMatrix, out_dim: usize) -> Result<MdsEmbedding> {
    if !d.is_square() {
        return Err(GatsError::ShapeMismatch(format!(
            "distance matrix must be square, got {:?}",
            d.shape()
        )));
    }
    let n = d.rows();
    if out_dim == 0 || out_dim > n {
        return Err(GatsError::InvalidArgument(format!(
            "out_dim must be in 1..={n}, got {out_dim}"
        )));
    }
    let scale = d.frobenius_norm();
    if d.asymmetry() > 1e-8 * scale.max(f64::MIN_POSITIVE) {
        return Err(GatsError::NotSymmetric(d.asymmetry() / scale));
    }
    if (0..n).any(|i| d.get(i, i) != 0.0) || d.data().iter().any(|&v| v < 0.0) {
        return Err(GatsError::InvalidArgument(
            "distance matrix needs a zero diagonal and nonnegative entries".into(),
        ));
    }
    let b = double_center(d);
    let (lambda, q) = sym_eig(&b)?;
    let top = &lambda[..out_dim];
    if top.iter().any(|&l| l < -1e-9 * lambda[0].abs().max(1.0)) {
        log::warn!("distance matrix is not Euclidean; clamping negative MDS eigenvalues to zero");
    }
    let roots: Vec<f64> = top.iter().map(|&l| l.max(0.0).sqrt()).collect();
    let coords = q.leading_columns(out_dim).scale_columns(&roots);
    Ok(MdsEmbedding {
        coords,
        eigenvalues: top.to_vec(),
    })
}

/// Pairwise Frobenius distances `‖V_i − V_j‖_F` between frames.
pub fn frame_distance_matrix(frames: &[StiefelMatrix]) -> Result<DenseMatrix> {
    let n = frames.len();
    if n == 0 {
        return Err(GatsError::Empty("frames"));
    }
    let mut out = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let d = frames[i].matrix().sub(frames[j].matrix())?.frobenius_norm();
            out.set(i, j, d);
            out.set(j, i, d);
        }
    }
    Ok(out)
}

/// Silverman's rule `0.9 · min(σ, IQR/1.34) · n^{-1/5}`.
pub fn silverman_bandwidth(samples: &[f64]) -> Result<f64> {
    let n = samples.len();
    if n < 2 {
        return Err(GatsError::Empty("bandwidth needs at least two samples"));
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let sd = (samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let pos = p * (n - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
    };
    let iqr = q(0.75) - q(0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let h = 0.9 * spread * (n as f64).powf(-0.2);
    if h > 0.0 {
        Ok(h)
    } else {
        Err(GatsError::InvalidArgument("samples have zero spread".into()))
    }
}

/// Gaussian KDE evaluated on `grid`; Silverman bandwidth when `None`.
pub fn kde_1d(samples: &[f64], bandwidth: Option<f64>, grid: &[f64]) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(GatsError::Empty("samples"));
    }
    let h = match bandwidth {
        Some(h) if h > 0.0 => h,
        Some(h) => {
            return Err(GatsError::InvalidArgument(format!(
                "bandwidth must be positive, got {h}"
            )))
        }
        None => silverman_bandwidth(samples)?,
    };
    let norm = 1.0 / (samples.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    Ok(grid
        .iter()
        .map(|&g| {
            samples
                .iter()
                .map(|&s| (-0.5 * ((g - s) / h).powi(2)).exp())
                .sum::<f64>()
                * norm
        })
        .collect())
}

/// Exact W₁ between two empirical measures: `∫₀¹ |F_a⁻¹(u) − F_b⁻¹(u)| du`.
pub fn wasserstein_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(GatsError::Empty("samples"));
    }
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(f64::total_cmp);
    sb.sort_by(f64::total_cmp);
    let (na, nb) = (sa.len() as f64, sb.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut u = 0.0;
    let mut total = 0.0;
    while i < sa.len() && j < sb.len() {
        let next_a = (i + 1) as f64 / na;
        let next_b = (j + 1) as f64 / nb;
        let next = next_a.min(next_b);
        total += (next - u) * (sa[i] - sb[j]).abs();
        u = next;
        if next_a <= next {
            i += 1;
        }
        if next_b <= next {
            j += 1;
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::GatsRng;

    #[test]
    fn exact_estimate() {
        let x = DenseTensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let r = error_report(&x, &x, None, Some(1.0)).unwrap();
        assert_eq!((r.rel_err_l1, r.rel_err_l2, r.rmse), (0.0, 0.0, 0.0));
        assert_eq!(r.psnr, Some(f64::INFINITY));
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"psnr\":\"inf\""), "{json}");
    }

    #[test]
    fn ten_percent_offset() {
        let x = DenseTensor::new(vec![3, 2], vec![1.0; 6]).unwrap();
        let y = x.scale(1.1);
        let r = error_report(&x, &y, Some(0), Some(1.0)).unwrap();
        assert!((r.rmse - 0.1).abs() < 1e-12);
        assert!((r.psnr.unwrap() - 20.0).abs() < 1e-9);
        assert!((r.avg_rmse - 0.1).abs() < 1e-12);
        assert!((r.rel_err_l1 - 0.1).abs() < 1e-12);
        assert_eq!(r.rel_err_l2, rel_err_l2(&x, &y).unwrap());
    }

    #[test]
    fn report_errors() {
        let z = DenseTensor::zeros(&[2]);
        assert_eq!(error_report(&z, &z, None, None), Err(GatsError::ZeroNorm));
        let x = DenseTensor::new(vec![2], vec![1.0, 1.0]).unwrap();
        assert!(error_report(&x, &x, None, Some(0.0)).is_err());
    }

    #[test]
    fn mds_two_points_and_zero() {
        let d = DenseMatrix::new(2, 2, vec![0.0, 3.0, 3.0, 0.0]).unwrap();
        let e = classical_mds(&d, 2).unwrap();
        let p0 = e.coords.row(0);
        let p1 = e.coords.row(1);
        let dist = ((p0[0] - p1[0]).powi(2) + (p0[1] - p1[1]).powi(2)).sqrt();
        assert!((dist - 3.0).abs() < 1e-12);
        let z = classical_mds(&DenseMatrix::zeros(4, 4), 2).unwrap();
        assert!(z.coords.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mds_rejects_asymmetric() {
        let d = DenseMatrix::new(2, 2, vec![0.0, 1.0, 2.0, 0.0]).unwrap();
        assert!(matches!(classical_mds(&d, 1), Err(GatsError::NotSymmetric(_))));
    }

    #[test]
    fn wasserstein_basics() {
        assert_eq!(wasserstein_1d(&[0.3, -1.0, 2.0], &[2.0, 0.3, -1.0]).unwrap(), 0.0);
        assert_eq!(wasserstein_1d(&[0.0], &[1.0]).unwrap(), 1.0);
        // Unequal sizes: {0,1} vs {0.5}: ½·0.5 + ½·0.5
        assert!((wasserstein_1d(&[0.0, 1.0], &[0.5]).unwrap() - 0.5).abs() < 1e-15);
        assert!(wasserstein_1d(&[], &[1.0]).is_err());
    }

    #[test]
    fn wasserstein_gaussian_draws() {
        let mut r1 = GatsRng::new(1);
        let mut r2 = GatsRng::new(2);
        let a = r1.gaussian_vec(10_000);
        let b = r2.gaussian_vec(10_000);
        assert!(wasserstein_1d(&a, &b).unwrap() <= 0.03);
    }

    #[test]
    fn kde_integrates_to_one() {
        let mut rng = GatsRng::new(3);
        let s = rng.gaussian_vec(500);
        let grid: Vec<f64> = (0..=2000).map(|i| -8.0 + 16.0 * i as f64 / 2000.0).collect();
        let dens = kde_1d(&s, None, &grid).unwrap();
        let mass: f64 = dens.iter().sum::<f64>() * 16.0 / 2000.0;
        assert!((mass - 1.0).abs() < 1e-3, "{mass}");
        assert!(kde_1d(&s, Some(0.0), &grid).is_err());
        assert!(kde_1d(&[], None, &grid).is_err());
    }
}
