//! Tucker decomposition: HOSVD, HOOI and multilinear reconstruction.

use serde::{Deserialize, Serialize};

use crate::error::{GatsError, Result};
use crate::linalg::{sym_eig, truncated_svd, StiefelMatrix};
use crate::par::{self, Execution};
use crate::tensor::{mode_product, mode_product_t, rel_err_l2, unfold, DenseTensor};

/// Core tensor plus one orthonormal factor per mode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuckerFactors {
    core: DenseTensor,
    factors: Vec<StiefelMatrix>,
}

impl TuckerFactors {
    pub fn new(core: DenseTensor, factors: Vec<StiefelMatrix>) -> Result<Self> {
        if factors.len() != core.order() {
            return Err(GatsError::ShapeMismatch(format!(
                "{} factors for a core of order {}",
                factors.len(),
                core.order()
            )));
        }
        for (k, (f, &r)) in factors.iter().zip(core.dims()).enumerate() {
            if f.r() != r {
                return Err(GatsError::ShapeMismatch(format!(
                    "factor {k} has {} columns, core mode has size {r}",
                    f.r()
                )));
            }
        }
        Ok(Self { core, factors })
    }

    pub fn core(&self) -> &DenseTensor {
        &self.core
    }

    pub fn factors(&self) -> &[StiefelMatrix] {
        &self.factors
    }

    pub fn ranks(&self) -> &[usize] {
        self.core.dims()
    }

    /// `(n_1, .., n_d)` of the reconstructed tensor.
    pub fn dims(&self) -> Vec<usize> {
        self.factors.iter().map(StiefelMatrix::n).collect()
    }

    pub fn into_parts(self) -> (DenseTensor, Vec<StiefelMatrix>) {
        (self.core, self.factors)
    }
}

/// Stopping rule for [`hooi`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HooiConfig {
    pub max_iter: usize,
    /// Minimum relative decrease of the reconstruction error per sweep.
    pub tol: f64,
}

impl Default for HooiConfig {
    fn default() -> Self {
        Self {
            max_iter: 25,
            tol: 1e-8,
        }
    }
}

const ROUNDOFF_FLOOR: f64 = 1e-13;

/// Relative reconstruction error after HOSVD and after each HOOI sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct HooiTrace {
    pub errors: Vec<f64>,
}

impl HooiTrace {
    pub fn sweeps(&self) -> usize {
        self.errors.len() - 1
    }
}

pub(crate) fn validate_ranks(dims: &[usize], ranks: &[usize]) -> Result<()> {
    if ranks.len() != dims.len() {
        return Err(GatsError::ShapeMismatch(format!(
            "{} ranks for a tensor of order {}",
            ranks.len(),
            dims.len()
        )));
    }
    for (&r, &n) in ranks.iter().zip(dims) {
        if r == 0 || r > n {
            return Err(GatsError::RankOutOfRange { rank: r, max: n });
        }
    }
    Ok(())
}

/// Top-`r` left singular vectors of the mode-k unfolding.
///
/// When the unfolding has fewer than `r` columns (HOOI with `r_k` above the
/// product of the other ranks) the frame is completed from the eigenvectors
/// of the mode-k Gram matrix.
pub(crate) fn leading_left_vectors(x: &DenseTensor, k: usize, r: usize) -> Result<StiefelMatrix> {
    let m = unfold(x, k)?;
    if r <= m.cols() {
        let f = truncated_svd(&m, r)?;
        return Ok(StiefelMatrix::from_trusted(f.u));
    }
    let (_, q) = sym_eig(&m.matmul_t(&m)?)?;
    Ok(StiefelMatrix::from_trusted(q.leading_columns(r)))
}

/// `X ×_1 U_1ᵀ ⋯ ×_d U_dᵀ`, skipping mode `skip` if given.
fn project(x: &DenseTensor, factors: &[StiefelMatrix], skip: Option<usize>) -> Result<DenseTensor> {
    let mut y = x.clone();
    for (k, u) in factors.iter().enumerate() {
        if Some(k) != skip {
            y = mode_product_t(&y, u.matrix(), k)?;
        }
    }
    Ok(y)
}

pub fn hosvd(x: &DenseTensor, ranks: &[usize]) -> Result<TuckerFactors> {
    validate_ranks(x.dims(), ranks)?;
    let factors = ranks
        .iter()
        .enumerate()
        .map(|(k, &r)| leading_left_vectors(x, k, r))
        .collect::<Result<Vec<_>>>()?;
    let core = project(x, &factors, None)?;
    TuckerFactors::new(core, factors)
}

fn relative_error(x: &DenseTensor, f: &TuckerFactors) -> Result<f64> {
    let recon = tucker_reconstruct(f)?;
    let norm = x.frobenius_norm();
    if norm == 0.0 {
        return Ok(recon.frobenius_norm());
    }
    rel_err_l2(x, &recon)
}

/// Higher-order orthogonal iteration initialized from [`hosvd`].
pub fn hooi(x: &DenseTensor, ranks: &[usize], cfg: HooiConfig) -> Result<(TuckerFactors, HooiTrace)> {
    if cfg.max_iter == 0 {
        return Err(GatsError::InvalidArgument("max_iter must be >= 1".into()));
    }
    if !(cfg.tol > 0.0) {
        return Err(GatsError::InvalidArgument("tol must be positive".into()));
    }
    let mut best = hosvd(x, ranks)?;
    let mut best_err = relative_error(x, &best)?;
    let mut errors = vec![best_err];
    let mut factors = best.factors.clone();
    for _ in 0..cfg.max_iter {
        for k in 0..x.order() {
            let y = project(x, &factors, Some(k))?;
            factors[k] = leading_left_vectors(&y, k, ranks[k])?;
        }
        let core = project(x, &factors, None)?;
        let cand = TuckerFactors::new(core, factors.clone())?;
        let err = relative_error(x, &cand)?;
        errors.push(err);
        let decrease = best_err - err;
        if err <= best_err {
            best = cand;
            best_err = err;
        }
        // Errors at the rounding floor carry no descent information.
        if best_err <= ROUNDOFF_FLOOR || decrease < cfg.tol * best_err {
            break;
        }
    }
    Ok((best, HooiTrace { errors }))
}

/// `C ×_1 U_1 ×_2 U_2 ⋯ ×_d U_d`.
pub fn tucker_reconstruct(f: &TuckerFactors) -> Result<DenseTensor> {
    let mut y = f.core.clone();
    for (k, u) in f.factors.iter().enumerate() {
        y = mode_product(&y, u.matrix(), k)?;
    }
    Ok(y)
}

/// HOOI over a corpus, one sample per task.
pub fn hooi_batch(
    exec: Execution,
    corpus: &[DenseTensor],
    ranks: &[usize],
    cfg: HooiConfig,
) -> Result<Vec<TuckerFactors>> {
    par::try_map_indexed(exec, corpus.len(), |i| {
        hooi(&corpus[i], ranks, cfg).map(|(f, _)| f)
    })
}
