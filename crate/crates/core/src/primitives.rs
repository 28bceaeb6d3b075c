//! Grassmannian primitives: anchored low-rank encodings with exact
//! multilinear decode.
//!
//! A matrix `M` (rank `r`) maps to `(A, Ṽ) = (M·Ṽ, op(V, V₀))` where `V` spans
//! its top-`r` right singular subspace and `V₀` is the anchor; decoding is the
//! product `A·Ṽᵀ`. Tensors map to an aligned core plus one aligned frame per
//! aligned mode; unaligned modes are carried through the core unchanged.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::anchor::AnchorSet;
use crate::dtz::content_hash;
use crate::error::{GatsError, Result};
use crate::linalg::{singular_values, sym_eig, truncated_svd, StiefelMatrix};
use crate::procrustes::op_align;
use crate::tensor::{mode_product, mode_product_t, sk_gram, DenseMatrix, DenseTensor};
use crate::tucker::{hooi, HooiConfig};

/// Tiling of a 2-d field into equal non-overlapping patches.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchSpec {
    pub dims: (usize, usize),
    pub patch: (usize, usize),
}

impl PatchSpec {
    pub fn new(dims: (usize, usize), patch: (usize, usize)) -> Result<Self> {
        if patch.0 == 0 || patch.1 == 0 || !dims.0.is_multiple_of(patch.0) || !dims.1.is_multiple_of(patch.1) {
            return Err(GatsError::ShapeMismatch(format!(
                "patch {}x{} does not tile {}x{}",
                patch.0, patch.1, dims.0, dims.1
            )));
        }
        Ok(Self { dims, patch })
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.dims.0 / self.patch.0, self.dims.1 / self.patch.1)
    }

    pub fn num_patches(&self) -> usize {
        let (a, b) = self.grid();
        a * b
    }

    pub fn patch_size(&self) -> usize {
        self.patch.0 * self.patch.1
    }
}

/// Row `p` is the row-major flattening of patch `p`; patches are enumerated
/// row-major over the grid.
pub fn patchify(x: &DenseMatrix, spec: &PatchSpec) -> Result<DenseMatrix> {
    if x.shape() != spec.dims {
        return Err(GatsError::ShapeMismatch(format!(
            "patch spec is for {:?}, input is {:?}",
            spec.dims,
            x.shape()
        )));
    }
    let (ph, pw) = spec.patch;
    let (_, gw) = spec.grid();
    let size = spec.patch_size();
    let mut out = vec![0.0; spec.num_patches() * size];
    for i in 0..spec.dims.0 {
        let (gi, a) = (i / ph, i % ph);
        for (j, &v) in x.row(i).iter().enumerate() {
            let (gj, b) = (j / pw, j % pw);
            out[(gi * gw + gj) * size + a * pw + b] = v;
        }
    }
    DenseMatrix::new(spec.num_patches(), size, out)
}

/// Inverse of [`patchify`].
pub fn unpatchify(p: &DenseMatrix, spec: &PatchSpec) -> Result<DenseMatrix> {
    if p.shape() != (spec.num_patches(), spec.patch_size()) {
        return Err(GatsError::ShapeMismatch(format!(
            "patch matrix is {:?}, spec expects {}x{}",
            p.shape(),
            spec.num_patches(),
            spec.patch_size()
        )));
    }
    let (ph, pw) = spec.patch;
    let (_, gw) = spec.grid();
    let size = spec.patch_size();
    let (h, w) = spec.dims;
    let mut out = vec![0.0; h * w];
    for i in 0..h {
        let (gi, a) = (i / ph, i % ph);
        for j in 0..w {
            let (gj, b) = (j / pw, j % pw);
            out[i * w + j] = p.data()[(gi * gw + gj) * size + a * pw + b];
        }
    }
    DenseMatrix::new(h, w, out)
}

/// Splits a `c × h × w` tensor into `c` matrices.
pub fn split_channels(x: &DenseTensor) -> Result<Vec<DenseMatrix>> {
    if x.order() != 3 {
        return Err(GatsError::ShapeMismatch(format!(
            "expected channels × height × width, got {:?}",
            x.dims()
        )));
    }
    let (h, w) = (x.dims()[1], x.dims()[2]);
    x.data()
        .chunks(h * w)
        .map(|c| DenseMatrix::new(h, w, c.to_vec()))
        .collect()
}

/// Inverse of [`split_channels`].
pub fn stack_channels(channels: &[DenseMatrix]) -> Result<DenseTensor> {
    let first = channels.first().ok_or(GatsError::Empty("channels"))?;
    let (h, w) = first.shape();
    let mut data = Vec::with_capacity(channels.len() * h * w);
    for c in channels {
        if c.shape() != (h, w) {
            return Err(GatsError::ShapeMismatch("channel shapes differ".into()));
        }
        data.extend_from_slice(c.data());
    }
    DenseTensor::new(vec![channels.len(), h, w], data)
}

fn full_column_rank(a: &DenseMatrix) -> Result<bool> {
    let s = singular_values(a)?;
    let largest = s[0];
    let smallest = *s.last().unwrap();
    Ok(largest > 0.0 && smallest > 1e-10 * largest && s.len() == a.cols())
}

/// `(A, Ṽ)` with `A = M·Ṽ` and `Ṽ` the anchor-aligned right frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixGrassmannPrimitive {
    a: DenseMatrix,
    v_tilde: StiefelMatrix,
    anchor_hash: String,
    /// False when the source matrix had rank below `r`.
    on_manifold: bool,
}

impl MatrixGrassmannPrimitive {
    /// Assembles a primitive from stored or generated parts.
    pub fn from_parts(a: DenseMatrix, v_tilde: StiefelMatrix, anchor_hash: String) -> Result<Self> {
        if a.cols() != v_tilde.r() {
            return Err(GatsError::ShapeMismatch(format!(
                "A has {} columns, frame has rank {}",
                a.cols(),
                v_tilde.r()
            )));
        }
        let on_manifold = full_column_rank(&a)?;
        Ok(Self {
            a,
            v_tilde,
            anchor_hash,
            on_manifold,
        })
    }

    pub fn a(&self) -> &DenseMatrix {
        &self.a
    }

    pub fn v_tilde(&self) -> &StiefelMatrix {
        &self.v_tilde
    }

    pub fn anchor_hash(&self) -> &str {
        &self.anchor_hash
    }

    pub fn rank(&self) -> usize {
        self.a.cols()
    }

    pub fn on_manifold(&self) -> bool {
        self.on_manifold
    }

    /// `(n₁, n₂)` of the decoded matrix.
    pub fn dims(&self) -> (usize, usize) {
        (self.a.rows(), self.v_tilde.n())
    }
}

fn check_anchor(anchor: &StiefelMatrix, n: usize, r: usize) -> Result<()> {
    if anchor.matrix().shape() != (n, r) {
        return Err(GatsError::ShapeMismatch(format!(
            "anchor is {:?}, expected {n}x{r}",
            anchor.matrix().shape()
        )));
    }
    Ok(())
}

/// Encodes `m` at rank `r` against the right-frame anchor `v0` (`n₂ × r`).
pub fn mgp_encode(m: &DenseMatrix, r: usize, v0: &StiefelMatrix) -> Result<MatrixGrassmannPrimitive> {
    let max = m.rows().min(m.cols());
    if r == 0 || r > max {
        return Err(GatsError::RankOutOfRange { rank: r, max });
    }
    check_anchor(v0, m.cols(), r)?;
    let f = truncated_svd(m, r)?;
    let v = StiefelMatrix::from_trusted(f.v);
    mgp_encode_from_frame(m, &v, v0)
}

/// Encodes with a caller-supplied right frame `v` spanning the subspace to keep.
pub fn mgp_encode_from_frame(
    m: &DenseMatrix,
    v: &StiefelMatrix,
    v0: &StiefelMatrix,
) -> Result<MatrixGrassmannPrimitive> {
    check_anchor(v0, m.cols(), v.r())?;
    let aligned = op_align(v, v0)?;
    let a = m.matmul(aligned.aligned.matrix())?;
    MatrixGrassmannPrimitive::from_parts(a, aligned.aligned, content_hash(&v0.matrix().to_tensor()))
}

/// `A·Ṽᵀ`.
pub fn mgp_decode(p: &MatrixGrassmannPrimitive) -> DenseMatrix {
    p.a.matmul_t(p.v_tilde.matrix()).expect("consistent primitive")
}

/// How TGP extracts per-mode subspaces before alignment.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FactorSource {
    /// Top eigenvectors of the mode-k Gram matrix.
    #[default]
    GramEigen,
    /// HOOI factors (aligned modes at their ranks, other modes at full size).
    Hooi,
}

/// Aligned modes (0-based) with their ranks, sorted by mode.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignedModes(Vec<(usize, usize)>);

impl AlignedModes {
    pub fn new(mut pairs: Vec<(usize, usize)>) -> Result<Self> {
        pairs.sort_unstable();
        if pairs.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(GatsError::InvalidArgument("duplicate aligned mode".into()));
        }
        Ok(Self(pairs))
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.0
    }

    pub fn modes(&self) -> Vec<usize> {
        self.0.iter().map(|&(k, _)| k).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn rank_of(&self, mode: usize) -> Option<usize> {
        self.0.iter().find(|&&(k, _)| k == mode).map(|&(_, r)| r)
    }

    pub fn validate(&self, dims: &[usize]) -> Result<()> {
        for &(k, r) in &self.0 {
            if k >= dims.len() {
                return Err(GatsError::ModeOutOfRange {
                    mode: k,
                    order: dims.len(),
                });
            }
            if r == 0 || r > dims[k] {
                return Err(GatsError::RankOutOfRange { rank: r, max: dims[k] });
            }
        }
        Ok(())
    }

    /// Core dims: ranks on aligned modes, original sizes elsewhere.
    pub fn core_dims(&self, dims: &[usize]) -> Vec<usize> {
        let mut out = dims.to_vec();
        for &(k, r) in &self.0 {
            out[k] = r;
        }
        out
    }
}

/// Aligned core plus aligned frames.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorGrassmannPrimitive {
    dims: Vec<usize>,
    core: DenseTensor,
    factors: BTreeMap<usize, StiefelMatrix>,
    anchor_hashes: BTreeMap<usize, String>,
}

impl TensorGrassmannPrimitive {
    pub fn from_parts(
        dims: Vec<usize>,
        core: DenseTensor,
        factors: BTreeMap<usize, StiefelMatrix>,
        anchor_hashes: BTreeMap<usize, String>,
    ) -> Result<Self> {
        if core.order() != dims.len() {
            return Err(GatsError::ShapeMismatch(format!(
                "core order {} vs original order {}",
                core.order(),
                dims.len()
            )));
        }
        for (k, (&c, &n)) in core.dims().iter().zip(&dims).enumerate() {
            match factors.get(&k) {
                Some(u) if u.matrix().shape() != (n, c) => {
                    return Err(GatsError::ShapeMismatch(format!(
                        "mode {} factor is {:?}, expected {n}x{c}",
                        k + 1,
                        u.matrix().shape()
                    )))
                }
                None if c != n => {
                    return Err(GatsError::ShapeMismatch(format!(
                        "unaligned mode {} has core size {c} but original size {n}",
                        k + 1
                    )))
                }
                _ => {}
            }
        }
        if let Some(&k) = factors.keys().find(|&&k| k >= dims.len()) {
            return Err(GatsError::ModeOutOfRange {
                mode: k,
                order: dims.len(),
            });
        }
        Ok(Self {
            dims,
            core,
            factors,
            anchor_hashes,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn core(&self) -> &DenseTensor {
        &self.core
    }

    pub fn factors(&self) -> &BTreeMap<usize, StiefelMatrix> {
        &self.factors
    }

    pub fn factor(&self, mode: usize) -> Option<&StiefelMatrix> {
        self.factors.get(&mode)
    }

    pub fn aligned_modes(&self) -> Vec<usize> {
        self.factors.keys().copied().collect()
    }

    pub fn anchor_hashes(&self) -> &BTreeMap<usize, String> {
        &self.anchor_hashes
    }
}

/// Per-mode subspace frames for `x` before alignment.
pub fn tgp_frames(
    x: &DenseTensor,
    modes: &AlignedModes,
    source: FactorSource,
) -> Result<BTreeMap<usize, StiefelMatrix>> {
    modes.validate(x.dims())?;
    let mut out = BTreeMap::new();
    match source {
        FactorSource::GramEigen => {
            for &(k, r) in modes.pairs() {
                let (_, q) = sym_eig(&sk_gram(x, k)?)?;
                out.insert(k, StiefelMatrix::from_trusted(q.leading_columns(r)));
            }
        }
        FactorSource::Hooi => {
            if modes.is_empty() {
                return Ok(out);
            }
            let ranks = modes.core_dims(x.dims());
            let (f, _) = hooi(x, &ranks, HooiConfig::default())?;
            for &(k, _) in modes.pairs() {
                out.insert(k, f.factors()[k].clone());
            }
        }
    }
    Ok(out)
}

/// Encodes `x` on the aligned modes against `anchors`.
pub fn tgp_encode(
    x: &DenseTensor,
    modes: &AlignedModes,
    anchors: &AnchorSet,
    source: FactorSource,
) -> Result<TensorGrassmannPrimitive> {
    let frames = tgp_frames(x, modes, source)?;
    tgp_encode_from_frames(x, &frames, anchors)
}

/// Encodes with caller-supplied per-mode frames (any gauge).
pub fn tgp_encode_from_frames(
    x: &DenseTensor,
    frames: &BTreeMap<usize, StiefelMatrix>,
    anchors: &AnchorSet,
) -> Result<TensorGrassmannPrimitive> {
    let mut core = x.clone();
    let mut factors = BTreeMap::new();
    let mut hashes = BTreeMap::new();
    for (&k, u) in frames {
        if k >= x.order() || u.n() != x.dims()[k] {
            return Err(GatsError::ShapeMismatch(format!(
                "mode {} frame is {:?} for tensor dims {:?}",
                k + 1,
                u.matrix().shape(),
                x.dims()
            )));
        }
        let anchor = anchors.get(k).ok_or_else(|| {
            GatsError::InvalidArgument(format!("no anchor for mode {}", k + 1))
        })?;
        check_anchor(&anchor.anchor, u.n(), u.r())?;
        let aligned = op_align(u, &anchor.anchor).map_err(|e| e.with_mode(k + 1))?;
        core = mode_product_t(&core, aligned.aligned.matrix(), k)?;
        factors.insert(k, aligned.aligned);
        hashes.insert(k, anchor.hash.clone());
    }
    TensorGrassmannPrimitive::from_parts(x.dims().to_vec(), core, factors, hashes)
}

/// `core ×_k Ũ_k` over the aligned modes.
pub fn tgp_decode(p: &TensorGrassmannPrimitive) -> DenseTensor {
    let mut y = p.core.clone();
    for (&k, u) in &p.factors {
        y = mode_product(&y, u.matrix(), k).expect("consistent primitive");
    }
    y
}

/// `∏dims / (∏ core dims + Σ_aligned n_k·r_k)`.
pub fn compression_ratio(dims: &[usize], modes: &AlignedModes) -> Result<f64> {
    if dims.is_empty() || dims.contains(&0) {
        return Err(GatsError::ShapeMismatch(format!("invalid dims {dims:?}")));
    }
    modes.validate(dims)?;
    let full: f64 = dims.iter().map(|&n| n as f64).product();
    let core: f64 = modes.core_dims(dims).iter().map(|&n| n as f64).product();
    let frames: f64 = modes
        .pairs()
        .iter()
        .map(|&(k, r)| (dims[k] * r) as f64)
        .sum();
    Ok(full / (core + frames))
}
