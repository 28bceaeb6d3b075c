//! On-disk corpora and primitive archives.
//!
//! Both are directories holding a `manifest.json` and one `.dtz` file per
//! stored tensor. Modes in manifests are 1-based.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::anchor::{medoid_index_subsampled, select_anchors_from_frames, AnchorSet, ModeAnchor};
use crate::dtz;
use crate::error::{GatsError, Result};
use crate::linalg::{truncated_svd, StiefelMatrix};
use crate::par::{self, Execution};
use crate::primitives::{
    mgp_decode, mgp_encode, patchify, tgp_decode, tgp_encode, tgp_frames, unpatchify, AlignedModes,
    FactorSource, MatrixGrassmannPrimitive, PatchSpec, TensorGrassmannPrimitive,
};
use crate::tensor::{DenseMatrix, DenseTensor};

pub const CORPUS_FORMAT_VERSION: u32 = 1;
pub const PRIMITIVE_FORMAT_VERSION: u32 = 1;

const MANIFEST: &str = "manifest.json";

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    serde_json::to_string_pretty(v).map_err(|e| GatsError::Format(e.to_string()))
}

fn from_json<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| GatsError::Format(e.to_string()))
}

/// One stored sample and its condition vector (possibly empty).
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub data: DenseTensor,
    pub condition: Vec<f64>,
}

/// A list of samples with named condition coordinates.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Corpus {
    pub samples: Vec<Sample>,
    pub condition_names: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct CorpusManifest {
    format_version: u32,
    condition_names: Vec<String>,
    samples: Vec<CorpusEntry>,
}

#[derive(Serialize, Deserialize)]
struct CorpusEntry {
    file: String,
    dims: Vec<usize>,
    hash: String,
    condition: Vec<f64>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn tensors(&self) -> Vec<&DenseTensor> {
        self.samples.iter().map(|s| &s.data).collect()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut entries = Vec::with_capacity(self.samples.len());
        for (i, s) in self.samples.iter().enumerate() {
            if s.condition.len() != self.condition_names.len() {
                return Err(GatsError::ShapeMismatch(format!(
                    "sample {i} has {} condition values for {} names",
                    s.condition.len(),
                    self.condition_names.len()
                )));
            }
            let file = format!("sample_{i:05}.dtz");
            dtz::write(dir.join(&file), &s.data)?;
            entries.push(CorpusEntry {
                file,
                dims: s.data.dims().to_vec(),
                hash: dtz::content_hash(&s.data),
                condition: s.condition.clone(),
            });
        }
        let manifest = CorpusManifest {
            format_version: CORPUS_FORMAT_VERSION,
            condition_names: self.condition_names.clone(),
            samples: entries,
        };
        fs::write(dir.join(MANIFEST), to_json(&manifest)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let m: CorpusManifest = from_json(&fs::read_to_string(dir.join(MANIFEST))?)?;
        if m.format_version != CORPUS_FORMAT_VERSION {
            return Err(GatsError::Format(format!(
                "unsupported corpus version {}",
                m.format_version
            )));
        }
        let mut samples = Vec::with_capacity(m.samples.len());
        for e in m.samples {
            let data = dtz::read(dir.join(&e.file))?;
            if data.dims() != e.dims.as_slice() {
                return Err(GatsError::Format(format!("{}: dims disagree with manifest", e.file)));
            }
            if dtz::content_hash(&data) != e.hash {
                return Err(GatsError::Format(format!("{}: hash mismatch", e.file)));
            }
            samples.push(Sample {
                data,
                condition: e.condition,
            });
        }
        Ok(Self {
            samples,
            condition_names: m.condition_names,
        })
    }
}

/// How samples become primitives.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum EncodeSpec {
    /// Matrix primitive at `rank`, optionally after patchification.
    #[serde(rename = "MGP")]
    Mgp {
        rank: usize,
        patch: Option<(usize, usize)>,
    },
    /// Tensor primitive on a subset of modes.
    #[serde(rename = "TGP")]
    Tgp {
        modes: AlignedModes,
        #[serde(default)]
        source: FactorSource,
    },
}

impl EncodeSpec {
    /// The 0-based modes that carry anchors.
    pub fn anchor_modes(&self) -> Vec<usize> {
        match self {
            EncodeSpec::Mgp { .. } => vec![1],
            EncodeSpec::Tgp { modes, .. } => modes.modes(),
        }
    }

    fn patch_spec(&self, dims: &[usize]) -> Result<Option<PatchSpec>> {
        match self {
            EncodeSpec::Mgp { patch: Some(p), .. } => {
                if dims.len() != 2 {
                    return Err(GatsError::ShapeMismatch(format!(
                        "patchification needs 2-d samples, got {dims:?}"
                    )));
                }
                Ok(Some(PatchSpec::new((dims[0], dims[1]), *p)?))
            }
            _ => Ok(None),
        }
    }

    /// The object actually encoded: the (patchified) matrix for MGP, the
    /// sample itself for TGP.
    pub fn prepare(&self, x: &DenseTensor) -> Result<DenseTensor> {
        match self {
            EncodeSpec::Mgp { .. } => {
                let m = x.to_matrix()?;
                match self.patch_spec(x.dims())? {
                    Some(spec) => Ok(patchify(&m, &spec)?.to_tensor()),
                    None => Ok(x.clone()),
                }
            }
            EncodeSpec::Tgp { .. } => Ok(x.clone()),
        }
    }

    /// Inverse of [`EncodeSpec::prepare`] for samples of shape `source_dims`.
    pub fn restore(&self, y: DenseTensor, source_dims: &[usize]) -> Result<DenseTensor> {
        match self.patch_spec(source_dims)? {
            Some(spec) => Ok(unpatchify(&y.to_matrix()?, &spec)?.to_tensor()),
            None => Ok(y),
        }
    }

    /// Unaligned subspace frames of one sample on each anchor mode.
    pub fn frames(&self, x: &DenseTensor) -> Result<BTreeMap<usize, StiefelMatrix>> {
        let y = self.prepare(x)?;
        match self {
            EncodeSpec::Mgp { rank, .. } => {
                let f = truncated_svd(&y.to_matrix()?, *rank)?;
                Ok(BTreeMap::from([(1, StiefelMatrix::from_trusted(f.v))]))
            }
            EncodeSpec::Tgp { modes, source } => tgp_frames(&y, modes, *source),
        }
    }

    pub fn encode(&self, x: &DenseTensor, anchors: &AnchorSet) -> Result<Primitive> {
        let y = self.prepare(x)?;
        match self {
            EncodeSpec::Mgp { rank, .. } => Ok(Primitive::Mgp(mgp_encode(&y.to_matrix()?, *rank, anchors.frame(1)?)?)),
            EncodeSpec::Tgp { modes, source } => Ok(Primitive::Tgp(tgp_encode(&y, modes, anchors, *source)?)),
        }
    }
}

fn corpus_frames(
    samples: &[&DenseTensor],
    spec: &EncodeSpec,
    exec: Execution,
) -> Result<BTreeMap<usize, Vec<StiefelMatrix>>> {
    if samples.is_empty() {
        return Err(GatsError::Empty("corpus"));
    }
    let frames = par::try_map_indexed(exec, samples.len(), |i| spec.frames(samples[i]))?;
    let mut per_mode: BTreeMap<usize, Vec<StiefelMatrix>> = BTreeMap::new();
    for f in frames {
        for (k, v) in f {
            per_mode.entry(k).or_default().push(v);
        }
    }
    Ok(per_mode)
}

/// Medoid anchors over a corpus for the modes named by `spec`.
pub fn select_corpus_anchors(samples: &[&DenseTensor], spec: &EncodeSpec, exec: Execution) -> Result<AnchorSet> {
    select_anchors_from_frames(&corpus_frames(samples, spec, exec)?, exec)
}

/// Approximate variant of [`select_corpus_anchors`] that scores every frame
/// against `reference` randomly chosen frames per mode.
pub fn select_corpus_anchors_subsampled(
    samples: &[&DenseTensor],
    spec: &EncodeSpec,
    reference: usize,
    seed: u64,
    exec: Execution,
) -> Result<AnchorSet> {
    let mut set = AnchorSet::new();
    for (k, frames) in corpus_frames(samples, spec, exec)? {
        let med = medoid_index_subsampled(&frames, reference, seed, exec)?;
        set.insert(k, ModeAnchor::new(frames[med.index].clone(), med.index, med.scores));
    }
    Ok(set)
}

/// An encoded sample.
#[derive(Clone, Debug, PartialEq)]
pub enum Primitive {
    Mgp(MatrixGrassmannPrimitive),
    Tgp(TensorGrassmannPrimitive),
}

impl Primitive {
    /// Decoded object in prepared (possibly patchified) layout.
    pub fn decode(&self) -> DenseTensor {
        match self {
            Primitive::Mgp(p) => mgp_decode(p).to_tensor(),
            Primitive::Tgp(p) => tgp_decode(p),
        }
    }

    /// Named component tensors in storage order.
    pub fn components(&self) -> Vec<(String, DenseTensor)> {
        match self {
            Primitive::Mgp(p) => vec![
                ("a".into(), p.a().to_tensor()),
                ("v".into(), p.v_tilde().matrix().to_tensor()),
            ],
            Primitive::Tgp(p) => {
                let mut out = vec![("core".into(), p.core().clone())];
                for (k, u) in p.factors() {
                    out.push((format!("u{}", k + 1), u.matrix().to_tensor()));
                }
                out
            }
        }
    }

    /// All component entries concatenated in storage order.
    pub fn to_vector(&self) -> Vec<f64> {
        self.components()
            .into_iter()
            .flat_map(|(_, t)| t.data().to_vec())
            .collect()
    }

    pub fn on_manifold(&self) -> bool {
        match self {
            Primitive::Mgp(p) => p.on_manifold(),
            Primitive::Tgp(_) => true,
        }
    }
}

/// Fixed layout of the primitives in one archive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrimitiveLayout {
    pub spec: EncodeSpec,
    /// Sample dims before preparation.
    pub source_dims: Vec<usize>,
    /// Dims of the encoded object.
    pub dims: Vec<usize>,
    /// 0-based anchor mode → anchor hash.
    pub anchor_hashes: BTreeMap<usize, String>,
}

impl PrimitiveLayout {
    pub fn new(spec: &EncodeSpec, source_dims: &[usize], anchors: &AnchorSet) -> Result<Self> {
        let probe = DenseTensor::zeros(source_dims);
        let dims = spec.prepare(&probe)?.dims().to_vec();
        let mut anchor_hashes = BTreeMap::new();
        for k in spec.anchor_modes() {
            let a = anchors
                .get(k)
                .ok_or_else(|| GatsError::InvalidArgument(format!("no anchor for mode {}", k + 1)))?;
            anchor_hashes.insert(k, a.hash.clone());
        }
        Ok(Self {
            spec: spec.clone(),
            source_dims: source_dims.to_vec(),
            dims,
            anchor_hashes,
        })
    }

    /// Ranks on the anchor modes, in mode order.
    pub fn ranks(&self) -> Vec<usize> {
        match &self.spec {
            EncodeSpec::Mgp { rank, .. } => vec![*rank],
            EncodeSpec::Tgp { modes, .. } => modes.pairs().iter().map(|&(_, r)| r).collect(),
        }
    }

    /// `(name, dims)` of each component.
    pub fn component_shapes(&self) -> Vec<(String, Vec<usize>)> {
        match &self.spec {
            EncodeSpec::Mgp { rank, .. } => vec![
                ("a".into(), vec![self.dims[0], *rank]),
                ("v".into(), vec![self.dims[1], *rank]),
            ],
            EncodeSpec::Tgp { modes, .. } => {
                let mut out = vec![("core".into(), modes.core_dims(&self.dims))];
                for &(k, r) in modes.pairs() {
                    out.push((format!("u{}", k + 1), vec![self.dims[k], r]));
                }
                out
            }
        }
    }

    /// Length of [`Primitive::to_vector`].
    pub fn vector_len(&self) -> usize {
        self.component_shapes()
            .iter()
            .map(|(_, d)| d.iter().product::<usize>())
            .sum()
    }

    fn assemble(&self, mut parts: BTreeMap<String, DenseTensor>, project: bool) -> Result<Primitive> {
        let mut take = |name: &str| {
            parts
                .remove(name)
                .ok_or_else(|| GatsError::Format(format!("missing component {name}")))
        };
        let frame = |m: DenseMatrix| {
            if project {
                StiefelMatrix::nearest(&m)
            } else {
                StiefelMatrix::new(m)
            }
        };
        let hash = |k: usize| self.anchor_hashes.get(&k).cloned().unwrap_or_default();
        match &self.spec {
            EncodeSpec::Mgp { .. } => {
                let a = take("a")?.to_matrix()?;
                let v = frame(take("v")?.to_matrix()?)?;
                Ok(Primitive::Mgp(MatrixGrassmannPrimitive::from_parts(a, v, hash(1))?))
            }
            EncodeSpec::Tgp { modes, .. } => {
                let core = take("core")?;
                let mut factors = BTreeMap::new();
                let mut hashes = BTreeMap::new();
                for k in modes.modes() {
                    factors.insert(k, frame(take(&format!("u{}", k + 1))?.to_matrix()?)?);
                    hashes.insert(k, hash(k));
                }
                Ok(Primitive::Tgp(TensorGrassmannPrimitive::from_parts(
                    self.dims.clone(),
                    core,
                    factors,
                    hashes,
                )?))
            }
        }
    }

    /// Rebuilds a primitive from a flat vector. With `project`, frames are
    /// replaced by their nearest orthonormal matrices (for generated data);
    /// otherwise they must already be orthonormal.
    pub fn from_vector(&self, v: &[f64], project: bool) -> Result<Primitive> {
        if v.len() != self.vector_len() {
            return Err(GatsError::ShapeMismatch(format!(
                "vector has {} entries, layout needs {}",
                v.len(),
                self.vector_len()
            )));
        }
        let mut parts = BTreeMap::new();
        let mut at = 0;
        for (name, dims) in self.component_shapes() {
            let n: usize = dims.iter().product();
            parts.insert(name, DenseTensor::new(dims, v[at..at + n].to_vec())?);
            at += n;
        }
        self.assemble(parts, project)
    }

    /// Decoded sample in its original layout.
    pub fn decode(&self, p: &Primitive) -> Result<DenseTensor> {
        self.spec.restore(p.decode(), &self.source_dims)
    }
}

/// Primitives for a corpus sharing one layout and anchor set.
#[derive(Clone, Debug, PartialEq)]
pub struct PrimitiveArchive {
    pub layout: PrimitiveLayout,
    pub items: Vec<Primitive>,
    pub conditions: Vec<Vec<f64>>,
    pub condition_names: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct PrimitiveManifest {
    format_version: u32,
    #[serde(rename = "type")]
    kind: String,
    dims: Vec<usize>,
    source_dims: Vec<usize>,
    ranks: Vec<usize>,
    aligned_modes: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    patch: Option<(usize, usize)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    factor_source: Option<FactorSource>,
    anchor_hashes: BTreeMap<String, String>,
    condition_names: Vec<String>,
    samples: Vec<PrimitiveEntry>,
}

#[derive(Serialize, Deserialize)]
struct PrimitiveEntry {
    files: BTreeMap<String, String>,
    condition: Vec<f64>,
    on_manifold: bool,
}

impl PrimitiveArchive {
    /// Encodes every sample of `corpus` in parallel; the first overlap
    /// violation (lowest sample index) aborts with that index attached.
    pub fn encode(corpus: &Corpus, spec: &EncodeSpec, anchors: &AnchorSet, exec: Execution) -> Result<Self> {
        let first = corpus.samples.first().ok_or(GatsError::Empty("corpus"))?;
        let layout = PrimitiveLayout::new(spec, first.data.dims(), anchors)?;
        if let Some(i) = corpus.samples.iter().position(|s| s.data.dims() != first.data.dims()) {
            return Err(GatsError::ShapeMismatch(format!("sample {i} differs in shape from sample 0")));
        }
        let items = par::try_map_indexed(exec, corpus.len(), |i| {
            spec.encode(&corpus.samples[i].data, anchors).map_err(|e| e.with_sample(i))
        })?;
        Ok(Self {
            layout,
            items,
            conditions: corpus.samples.iter().map(|s| s.condition.clone()).collect(),
            condition_names: corpus.condition_names.clone(),
        })
    }

    pub fn decode(&self, exec: Execution) -> Result<Corpus> {
        let data = par::try_map_indexed(exec, self.items.len(), |i| self.layout.decode(&self.items[i]))?;
        Ok(Corpus {
            samples: data
                .into_iter()
                .zip(&self.conditions)
                .map(|(data, c)| Sample {
                    data,
                    condition: c.clone(),
                })
                .collect(),
            condition_names: self.condition_names.clone(),
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut samples = Vec::with_capacity(self.items.len());
        for (i, (p, c)) in self.items.iter().zip(&self.conditions).enumerate() {
            let mut files = BTreeMap::new();
            for (name, t) in p.components() {
                let file = format!("sample_{i:05}_{name}.dtz");
                dtz::write(dir.join(&file), &t)?;
                files.insert(name, file);
            }
            samples.push(PrimitiveEntry {
                files,
                condition: c.clone(),
                on_manifold: p.on_manifold(),
            });
        }
        let l = &self.layout;
        let manifest = PrimitiveManifest {
            format_version: PRIMITIVE_FORMAT_VERSION,
            kind: match l.spec {
                EncodeSpec::Mgp { .. } => "MGP".into(),
                EncodeSpec::Tgp { .. } => "TGP".into(),
            },
            dims: l.dims.clone(),
            source_dims: l.source_dims.clone(),
            ranks: l.ranks(),
            aligned_modes: l.spec.anchor_modes().iter().map(|k| k + 1).collect(),
            patch: match l.spec {
                EncodeSpec::Mgp { patch, .. } => patch,
                EncodeSpec::Tgp { .. } => None,
            },
            factor_source: match l.spec {
                EncodeSpec::Mgp { .. } => None,
                EncodeSpec::Tgp { source, .. } => Some(source),
            },
            anchor_hashes: l
                .anchor_hashes
                .iter()
                .map(|(k, h)| ((k + 1).to_string(), h.clone()))
                .collect(),
            condition_names: self.condition_names.clone(),
            samples,
        };
        fs::write(dir.join(MANIFEST), to_json(&manifest)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let m: PrimitiveManifest = from_json(&fs::read_to_string(dir.join(MANIFEST))?)?;
        if m.format_version != PRIMITIVE_FORMAT_VERSION {
            return Err(GatsError::Format(format!(
                "unsupported primitive archive version {}",
                m.format_version
            )));
        }
        let mut anchor_hashes = BTreeMap::new();
        for (key, h) in m.anchor_hashes {
            let k: usize = key
                .parse()
                .ok()
                .filter(|&k: &usize| k >= 1)
                .ok_or_else(|| GatsError::Format(format!("bad mode key {key:?}")))?;
            anchor_hashes.insert(k - 1, h);
        }
        if m.ranks.len() != m.aligned_modes.len() || m.aligned_modes.contains(&0) {
            return Err(GatsError::Format("ranks and 1-based aligned_modes must pair up".into()));
        }
        let spec = match m.kind.as_str() {
            "MGP" if m.ranks.len() == 1 => EncodeSpec::Mgp {
                rank: m.ranks[0],
                patch: m.patch,
            },
            "TGP" => EncodeSpec::Tgp {
                modes: AlignedModes::new(m.aligned_modes.iter().map(|k| k - 1).zip(m.ranks.iter().copied()).collect())?,
                source: m.factor_source.unwrap_or_default(),
            },
            other => return Err(GatsError::Format(format!("unknown primitive type {other:?}"))),
        };
        let layout = PrimitiveLayout {
            spec,
            source_dims: m.source_dims,
            dims: m.dims,
            anchor_hashes,
        };
        let mut items = Vec::with_capacity(m.samples.len());
        let mut conditions = Vec::with_capacity(m.samples.len());
        for e in m.samples {
            let mut parts = BTreeMap::new();
            for (name, file) in e.files {
                parts.insert(name, dtz::read(dir.join(file))?);
            }
            items.push(layout.assemble(parts, false)?);
            conditions.push(e.condition);
        }
        Ok(Self {
            layout,
            items,
            conditions,
            condition_names: m.condition_names,
        })
    }

    /// Largest per-component absolute difference to `other`.
    pub fn max_component_diff(&self, other: &Self) -> Result<f64> {
        if self.items.len() != other.items.len() || self.layout != other.layout {
            return Err(GatsError::ShapeMismatch("archives differ in layout or length".into()));
        }
        let mut worst: f64 = 0.0;
        for (a, b) in self.items.iter().zip(&other.items) {
            for (x, y) in a.to_vector().iter().zip(b.to_vector()) {
                worst = worst.max((x - y).abs());
            }
        }
        Ok(worst)
    }
}
