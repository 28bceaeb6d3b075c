//! Dense factorizations: one-sided Jacobi SVD, cyclic Jacobi symmetric
//! eigendecomposition, SPD inverse square roots, Householder QR and
//! Haar-distributed Stiefel sampling.
//!
//! Column signs are normalized so that the largest-magnitude entry of every
//! left singular vector (and every eigenvector) is positive.

use serde::{Deserialize, Serialize};

use crate::error::{GatsError, Result};
use crate::rng::GatsRng;
use crate::tensor::{dot, DenseMatrix};

/// Tolerance on `‖VᵀV − I‖_F` accepted by [`StiefelMatrix::new`].
pub const STIEFEL_TOL: f64 = 1e-8;

const JACOBI_EPS: f64 = 1e-15;
const MAX_SWEEPS: usize = 80;

/// Positive-definiteness floor `1e-10 · trace(S) / r` used by [`spd_inv_sqrt`].
pub fn pd_floor(s: &DenseMatrix) -> f64 {
    1e-10 * s.trace() / s.rows() as f64
}

/// An `n × r` matrix with orthonormal columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DenseMatrix", into = "DenseMatrix")]
pub struct StiefelMatrix(DenseMatrix);

impl StiefelMatrix {
    pub fn new(m: DenseMatrix) -> Result<Self> {
        if m.cols() > m.rows() {
            return Err(GatsError::ShapeMismatch(format!(
                "a Stiefel frame needs rows >= cols, got {}x{}",
                m.rows(),
                m.cols()
            )));
        }
        let dev = orthonormality_defect(&m);
        if dev > STIEFEL_TOL {
            return Err(GatsError::NotOrthonormal(dev));
        }
        Ok(Self(m))
    }

    /// Wraps a matrix the caller has just produced from an orthonormalizing
    /// routine.
    pub(crate) fn from_trusted(m: DenseMatrix) -> Self {
        debug_assert!(
            orthonormality_defect(&m) <= STIEFEL_TOL,
            "defect {}",
            orthonormality_defect(&m)
        );
        Self(m)
    }

    /// Closest frame in Frobenius norm (the orthogonal polar factor `U·Vᵀ`).
    pub fn nearest(m: &DenseMatrix) -> Result<Self> {
        if m.cols() > m.rows() {
            return Err(GatsError::ShapeMismatch(format!(
                "cannot project a {}x{} matrix onto a Stiefel manifold",
                m.rows(),
                m.cols()
            )));
        }
        let f = svd(m)?;
        Ok(Self::from_trusted(f.u.matmul_t(&f.v)?))
    }

    pub fn identity_frame(n: usize, r: usize) -> Self {
        Self(DenseMatrix::from_fn(n, r, |i, j| if i == j { 1.0 } else { 0.0 }))
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> DenseMatrix {
        self.0
    }

    pub fn n(&self) -> usize {
        self.0.rows()
    }

    pub fn r(&self) -> usize {
        self.0.cols()
    }
}

impl TryFrom<DenseMatrix> for StiefelMatrix {
    type Error = GatsError;
    fn try_from(m: DenseMatrix) -> Result<Self> {
        StiefelMatrix::new(m)
    }
}

impl From<StiefelMatrix> for DenseMatrix {
    fn from(s: StiefelMatrix) -> Self {
        s.0
    }
}

impl AsRef<DenseMatrix> for StiefelMatrix {
    fn as_ref(&self) -> &DenseMatrix {
        &self.0
    }
}

/// `‖MᵀM − I‖_F`.
pub fn orthonormality_defect(m: &DenseMatrix) -> f64 {
    let g = m.t_matmul(m).expect("square Gram");
    let mut s = 0.0;
    for i in 0..g.rows() {
        for j in 0..g.cols() {
            let d = g.get(i, j) - if i == j { 1.0 } else { 0.0 };
            s += d * d;
        }
    }
    s.sqrt()
}

/// Thin SVD `M = U·diag(S)·Vᵀ` with `q` retained triplets.
#[derive(Clone, Debug, PartialEq)]
pub struct SvdResult {
    pub u: DenseMatrix,
    pub s: Vec<f64>,
    pub v: DenseMatrix,
}

impl SvdResult {
    pub fn rank(&self) -> usize {
        self.s.len()
    }

    pub fn reconstruct(&self) -> DenseMatrix {
        self.u
            .scale_columns(&self.s)
            .matmul_t(&self.v)
            .expect("consistent SVD factors")
    }

    /// Keeps the leading `r` triplets.
    pub fn truncate(&self, r: usize) -> SvdResult {
        SvdResult {
            u: self.u.leading_columns(r),
            s: self.s[..r].to_vec(),
            v: self.v.leading_columns(r),
        }
    }
}

fn column_major(m: &DenseMatrix) -> Vec<Vec<f64>> {
    (0..m.cols()).map(|j| m.column(j)).collect()
}

/// Largest-magnitude entry of each column of `u` made positive; the matching
/// column of `v` (if any) flips with it.
fn normalize_signs(u: &mut [Vec<f64>], mut v: Option<&mut [Vec<f64>]>) {
    for j in 0..u.len() {
        let pivot = u[j]
            .iter()
            .copied()
            .fold(0.0f64, |best, x| if x.abs() > best.abs() { x } else { best });
        if pivot < 0.0 {
            u[j].iter_mut().for_each(|x| *x = -*x);
            if let Some(v) = v.as_deref_mut() {
                v[j].iter_mut().for_each(|x| *x = -*x);
            }
        }
    }
}

/// Completes columns flagged in `missing` to an orthonormal set via
/// Gram–Schmidt against the canonical basis.
fn complete_orthonormal(cols: &mut [Vec<f64>], missing: &[bool]) {
    let m = cols.first().map(Vec::len).unwrap_or(0);
    let mut candidate = 0;
    for j in 0..cols.len() {
        if !missing[j] {
            continue;
        }
        loop {
            assert!(candidate < m, "cannot complete orthonormal basis");
            let mut e = vec![0.0; m];
            e[candidate] = 1.0;
            candidate += 1;
            for _ in 0..2 {
                for (k, c) in cols.iter().enumerate() {
                    if k == j || (missing[k] && k > j) {
                        continue;
                    }
                    let p = dot(&e, c);
                    e.iter_mut().zip(c).for_each(|(x, y)| *x -= p * y);
                }
            }
            let norm = dot(&e, &e).sqrt();
            if norm > 1e-6 {
                e.iter_mut().for_each(|x| *x /= norm);
                cols[j] = e;
                break;
            }
        }
    }
}

/// One-sided (Hestenes) Jacobi SVD of a tall matrix given by columns.
/// Returns (left columns scaled by σ, right columns).
fn hestenes(mut w: Vec<Vec<f64>>) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let n = w.len();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();
    let mut norms: Vec<f64> = w.iter().map(|c| dot(c, c)).collect();
    for _sweep in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = norms[p];
                let beta = norms[q];
                if alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                let gamma = dot(&w[p], &w[q]);
                if gamma.abs() <= JACOBI_EPS * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let (wp, wq) = two_mut(&mut w, p, q);
                rotate(wp, wq, c, s);
                let (vp, vq) = two_mut(&mut v, p, q);
                rotate(vp, vq, c, s);
                norms[p] = dot(&w[p], &w[p]);
                norms[q] = dot(&w[q], &w[q]);
            }
        }
        if !rotated {
            break;
        }
    }
    (w, v)
}

#[inline]
fn rotate(a: &mut [f64], b: &mut [f64], c: f64, s: f64) {
    for (x, y) in a.iter_mut().zip(b.iter_mut()) {
        let (xa, yb) = (*x, *y);
        *x = c * xa - s * yb;
        *y = s * xa + c * yb;
    }
}

fn two_mut<T>(v: &mut [T], p: usize, q: usize) -> (&mut T, &mut T) {
    debug_assert!(p < q);
    let (a, b) = v.split_at_mut(q);
    (&mut a[p], &mut b[0])
}

/// Full thin SVD with `q = min(m, n)` triplets, singular values descending.
pub fn svd(m: &DenseMatrix) -> Result<SvdResult> {
    if let Some(i) = m.data().iter().position(|x| !x.is_finite()) {
        return Err(GatsError::NonFinite(i));
    }
    let transposed = m.rows() < m.cols();
    let work = if transposed { m.transpose() } else { m.clone() };
    // Tall case: QR first so the Jacobi sweeps act on an n×n triangle.
    let (q_factor, start) = if work.rows() > work.cols() {
        let (q, r) = qr(&work);
        (Some(q), r)
    } else {
        (None, work)
    };
    let (w, v) = hestenes(column_major(&start));
    let q = w.len();
    let mut order: Vec<usize> = (0..q).collect();
    let sigma: Vec<f64> = w.iter().map(|c| dot(c, c).sqrt()).collect();
    order.sort_by(|&a, &b| sigma[b].total_cmp(&sigma[a]).then(a.cmp(&b)));

    let mut left: Vec<Vec<f64>> = Vec::with_capacity(q);
    let mut right: Vec<Vec<f64>> = Vec::with_capacity(q);
    let mut s = Vec::with_capacity(q);
    let mut missing = Vec::with_capacity(q);
    for &j in &order {
        let sj = sigma[j];
        if sj > 1e-300 {
            left.push(w[j].iter().map(|x| x / sj).collect());
            missing.push(false);
        } else {
            left.push(vec![0.0; w[j].len()]);
            missing.push(true);
        }
        right.push(v[j].clone());
        s.push(sj);
    }
    if missing.iter().any(|&b| b) {
        complete_orthonormal(&mut left, &missing);
    }
    let mut left_mat = DenseMatrix::from_columns(&left)?;
    if let Some(qf) = q_factor {
        left_mat = qf.matmul(&left_mat)?;
    }
    let mut left = column_major(&left_mat);
    normalize_signs(&mut left, Some(&mut right));
    let u = DenseMatrix::from_columns(&left)?;
    let v = DenseMatrix::from_columns(&right)?;
    Ok(if transposed {
        // Mᵀ = U S Vᵀ  ⇒  M = V S Uᵀ; re-normalize signs on the new U.
        let mut lu = column_major(&v);
        let mut rv = column_major(&u);
        normalize_signs(&mut lu, Some(&mut rv));
        SvdResult {
            u: DenseMatrix::from_columns(&lu)?,
            s,
            v: DenseMatrix::from_columns(&rv)?,
        }
    } else {
        SvdResult { u, s, v }
    })
}

/// Rank-`r` truncated SVD.
pub fn truncated_svd(m: &DenseMatrix, r: usize) -> Result<SvdResult> {
    let max = m.rows().min(m.cols());
    if r == 0 || r > max {
        return Err(GatsError::RankOutOfRange { rank: r, max });
    }
    Ok(svd(m)?.truncate(r))
}

/// Singular values only, descending.
pub fn singular_values(m: &DenseMatrix) -> Result<Vec<f64>> {
    Ok(svd(m)?.s)
}

/// Sum of singular values.
pub fn nuclear_norm(m: &DenseMatrix) -> Result<f64> {
    Ok(singular_values(m)?.iter().sum())
}

/// Symmetric eigendecomposition: eigenvalues descending and the matching
/// orthonormal eigenvectors as columns.
pub fn sym_eig(s: &DenseMatrix) -> Result<(Vec<f64>, DenseMatrix)> {
    if !s.is_square() {
        return Err(GatsError::ShapeMismatch(format!(
            "sym_eig needs a square matrix, got {:?}",
            s.shape()
        )));
    }
    if let Some(i) = s.data().iter().position(|x| !x.is_finite()) {
        return Err(GatsError::NonFinite(i));
    }
    let norm = s.frobenius_norm();
    let asym = s.asymmetry();
    if asym > 1e-8 * norm {
        return Err(GatsError::NotSymmetric(if norm > 0.0 {
            asym / norm
        } else {
            asym
        }));
    }
    let n = s.rows();
    let mut a: Vec<f64> = (0..n * n)
        .map(|f| 0.5 * (s.data()[f] + s.data()[(f % n) * n + f / n]))
        .collect();
    // Eigenvectors kept column-wise in `q` (row-major n×n).
    let mut q = DenseMatrix::identity(n).into_data();
    for _sweep in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum();
        let diag: f64 = (0..n).map(|i| a[i * n + i] * a[i * n + i]).sum();
        if off <= 1e-30 * diag || off == 0.0 {
            break;
        }
        for p in 0..n {
            for r in p + 1..n {
                let apq = a[p * n + r];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[r * n + r];
                if apq.abs() <= JACOBI_EPS * 1e-3 * (app.abs() * aqq.abs()).sqrt() {
                    a[p * n + r] = 0.0;
                    a[r * n + p] = 0.0;
                    continue;
                }
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (1.0 + theta * theta).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let sn = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + r];
                    a[k * n + p] = c * akp - sn * akq;
                    a[k * n + r] = sn * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[r * n + k];
                    a[p * n + k] = c * apk - sn * aqk;
                    a[r * n + k] = sn * apk + c * aqk;
                }
                for k in 0..n {
                    let qkp = q[k * n + p];
                    let qkq = q[k * n + r];
                    q[k * n + p] = c * qkp - sn * qkq;
                    q[k * n + r] = sn * qkp + c * qkq;
                }
            }
        }
    }
    let evals: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| evals[y].total_cmp(&evals[x]).then(x.cmp(&y)));
    let mut cols: Vec<Vec<f64>> = order
        .iter()
        .map(|&j| (0..n).map(|i| q[i * n + j]).collect())
        .collect();
    normalize_signs(&mut cols, None);
    Ok((
        order.iter().map(|&j| evals[j]).collect(),
        DenseMatrix::from_columns(&cols)?,
    ))
}

fn spd_power(s: &DenseMatrix, power: f64) -> Result<DenseMatrix> {
    let (lambda, q) = sym_eig(s)?;
    let floor = pd_floor(s);
    let min_eig = *lambda.last().expect("non-empty spectrum");
    if !(min_eig > floor) {
        return Err(GatsError::NotPositiveDefinite { min_eig, floor });
    }
    let scaled: Vec<f64> = lambda.iter().map(|l| l.powf(power)).collect();
    let t = q.scale_columns(&scaled).matmul_t(&q)?;
    // Symmetrize to kill rounding asymmetry.
    let n = t.rows();
    Ok(DenseMatrix::from_fn(n, n, |i, j| 0.5 * (t.get(i, j) + t.get(j, i))))
}

/// Symmetric `T` with `T·T = S⁻¹`; rejects `λ_min(S) ≤ 1e-10·trace(S)/r`.
pub fn spd_inv_sqrt(s: &DenseMatrix) -> Result<DenseMatrix> {
    spd_power(s, -0.5)
}

/// Symmetric PSD square root of an SPD matrix.
pub fn spd_sqrt(s: &DenseMatrix) -> Result<DenseMatrix> {
    spd_power(s, 0.5)
}

/// Thin Householder QR of an `m × n` matrix with `m ≥ n`: `(Q m×n, R n×n)`.
pub fn qr(a: &DenseMatrix) -> (DenseMatrix, DenseMatrix) {
    let (m, n) = a.shape();
    assert!(m >= n, "qr needs a tall matrix");
    let mut cols = column_major(a);
    let mut reflectors: Vec<Vec<f64>> = Vec::with_capacity(n);
    for k in 0..n {
        let x = &cols[k][k..];
        let alpha = dot(x, x).sqrt();
        let mut v = x.to_vec();
        let sign = if v[0] >= 0.0 { 1.0 } else { -1.0 };
        v[0] += sign * alpha;
        let vnorm = dot(&v, &v).sqrt();
        if vnorm > 0.0 {
            v.iter_mut().for_each(|e| *e /= vnorm);
        }
        for col in cols.iter_mut().skip(k) {
            let tail = &mut col[k..];
            let p = 2.0 * dot(&v, tail);
            tail.iter_mut().zip(&v).for_each(|(t, vi)| *t -= p * vi);
        }
        reflectors.push(v);
    }
    let r = DenseMatrix::from_fn(n, n, |i, j| if i <= j { cols[j][i] } else { 0.0 });
    // Q = H_0 ⋯ H_{n-1} applied to the first n canonical columns.
    let mut qcols: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; m];
            e[j] = 1.0;
            e
        })
        .collect();
    for k in (0..n).rev() {
        let v = &reflectors[k];
        for col in qcols.iter_mut() {
            let tail = &mut col[k..];
            let p = 2.0 * dot(v, tail);
            tail.iter_mut().zip(v).for_each(|(t, vi)| *t -= p * vi);
        }
    }
    let q = DenseMatrix::from_columns(&qcols).expect("consistent Q");
    (q, r)
}

/// Haar-distributed `n × r` frame: QR of an i.i.d. Gaussian matrix with the
/// columns of Q sign-corrected so that `diag(R) > 0`.
pub fn haar_stiefel(n: usize, r: usize, seed: u64) -> Result<StiefelMatrix> {
    let mut rng = GatsRng::new(seed);
    haar_stiefel_from(&mut rng, n, r)
}

/// [`haar_stiefel`] drawing from an existing stream.
pub fn haar_stiefel_from(rng: &mut GatsRng, n: usize, r: usize) -> Result<StiefelMatrix> {
    if r == 0 || r > n {
        return Err(GatsError::RankOutOfRange { rank: r, max: n });
    }
    let g = DenseMatrix::new(n, r, rng.gaussian_vec(n * r))?;
    let (q, rf) = qr(&g);
    let signs: Vec<f64> = (0..r)
        .map(|j| if rf.get(j, j) < 0.0 { -1.0 } else { 1.0 })
        .collect();
    Ok(StiefelMatrix::from_trusted(q.scale_columns(&signs)))
}

/// Haar-distributed `n × n` orthogonal matrix.
pub fn haar_orthogonal(n: usize, rng: &mut GatsRng) -> DenseMatrix {
    haar_stiefel_from(rng, n, n)
        .expect("square Haar draw")
        .into_matrix()
}
