//! Medoid anchor selection.
//!
//! For a corpus of frames `V_1, .., V_N` the anchor is the frame with the
//! largest total overlap `Σ_j ‖V_iᵀV_j‖_F²`. Scores are subspace quantities,
//! so they do not depend on the gauge of any individual frame.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dtz;
use crate::error::{GatsError, Result};
use crate::linalg::StiefelMatrix;
use crate::par::{self, Execution};
use crate::rng::GatsRng;
use crate::tensor::DenseMatrix;
use crate::tucker::TuckerFactors;

/// Scores closer than this are treated as tied; the smaller index wins.
pub const TIE_TOL: f64 = 1e-9;

pub const ANCHOR_FORMAT_VERSION: u32 = 1;

/// Chosen medoid and the scores it was chosen from.
#[derive(Clone, Debug, PartialEq)]
pub struct Medoid {
    pub index: usize,
    pub scores: Vec<f64>,
}

fn check_frames(frames: &[StiefelMatrix]) -> Result<()> {
    let first = frames.first().ok_or(GatsError::Empty("frame corpus"))?;
    let shape = first.matrix().shape();
    if let Some(i) = frames.iter().position(|f| f.matrix().shape() != shape) {
        return Err(GatsError::ShapeMismatch(format!(
            "frame {i} has shape {:?}, expected {shape:?}",
            frames[i].matrix().shape()
        )));
    }
    Ok(())
}

#[inline]
fn pair_overlap(a: &StiefelMatrix, b: &StiefelMatrix) -> f64 {
    let c = a.matrix().t_matmul(b.matrix()).expect("same shapes");
    c.data().iter().map(|x| x * x).sum()
}

fn argmax_with_ties(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] + TIE_TOL {
            best = i;
        }
    }
    best
}

/// Exact medoid over all `N²` pairs (self term included).
pub fn medoid_index(frames: &[StiefelMatrix], exec: Execution) -> Result<Medoid> {
    check_frames(frames)?;
    let scores = par::map_indexed(exec, frames.len(), |i| {
        let mut s = 0.0;
        for fj in frames {
            s += pair_overlap(&frames[i], fj);
        }
        s
    });
    Ok(Medoid {
        index: argmax_with_ties(&scores),
        scores,
    })
}

/// Approximate medoid: every frame is scored against the same random subset
/// of `reference` frames instead of the whole corpus.
pub fn medoid_index_subsampled(
    frames: &[StiefelMatrix],
    reference: usize,
    seed: u64,
    exec: Execution,
) -> Result<Medoid> {
    check_frames(frames)?;
    if reference == 0 || reference >= frames.len() {
        return medoid_index(frames, exec);
    }
    // Partial Fisher–Yates for a sorted subset.
    let mut rng = GatsRng::for_task(seed, "anchor-subsample");
    let mut pool: Vec<usize> = (0..frames.len()).collect();
    for i in 0..reference {
        let j = i + rng.below(frames.len() - i);
        pool.swap(i, j);
    }
    let mut subset = pool[..reference].to_vec();
    subset.sort_unstable();
    let scores = par::map_indexed(exec, frames.len(), |i| {
        let mut s = 0.0;
        for &j in &subset {
            s += pair_overlap(&frames[i], &frames[j]);
        }
        s
    });
    Ok(Medoid {
        index: argmax_with_ties(&scores),
        scores,
    })
}

/// Symmetric `N × N` matrix of `‖V_iᵀV_j‖_F²`.
pub fn overlap_matrix(frames: &[StiefelMatrix]) -> Result<DenseMatrix> {
    check_frames(frames)?;
    let n = frames.len();
    Ok(DenseMatrix::from_fn(n, n, |i, j| pair_overlap(&frames[i], &frames[j])))
}

/// Anchor for one mode.
#[derive(Clone, Debug, PartialEq)]
pub struct ModeAnchor {
    pub anchor: StiefelMatrix,
    pub medoid_index: usize,
    pub overlap_scores: Vec<f64>,
    pub hash: String,
}

impl ModeAnchor {
    pub fn new(anchor: StiefelMatrix, medoid_index: usize, overlap_scores: Vec<f64>) -> Self {
        let hash = dtz::content_hash(&anchor.matrix().to_tensor());
        Self {
            anchor,
            medoid_index,
            overlap_scores,
            hash,
        }
    }
}

/// Per-mode anchors, keyed by 0-based mode.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AnchorSet {
    modes: BTreeMap<usize, ModeAnchor>,
}

impl AnchorSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, mode: usize, anchor: ModeAnchor) {
        self.modes.insert(mode, anchor);
    }

    pub fn get(&self, mode: usize) -> Option<&ModeAnchor> {
        self.modes.get(&mode)
    }

    pub fn frame(&self, mode: usize) -> Result<&StiefelMatrix> {
        self.get(mode).map(|a| &a.anchor).ok_or_else(|| {
            GatsError::InvalidArgument(format!("no anchor for mode {}", mode + 1))
        })
    }

    pub fn modes(&self) -> impl Iterator<Item = usize> + '_ {
        self.modes.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &ModeAnchor)> {
        self.modes.iter().map(|(&k, v)| (k, v))
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    /// Anchor with a single frame (the MGP case, 0-based mode 1).
    pub fn single(mode: usize, anchor: StiefelMatrix) -> Self {
        let mut s = Self::new();
        s.insert(mode, ModeAnchor::new(anchor, 0, vec![]));
        s
    }

    /// Writes `manifest.json` and one `.dtz` per mode into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut modes = BTreeMap::new();
        for (k, a) in self.iter() {
            let file = format!("anchor_mode{}.dtz", k + 1);
            dtz::write_matrix(dir.join(&file), a.anchor.matrix())?;
            modes.insert(
                (k + 1).to_string(),
                AnchorEntry {
                    file,
                    n: a.anchor.n(),
                    r: a.anchor.r(),
                    medoid_index: a.medoid_index,
                    hash: a.hash.clone(),
                    overlap_scores: a.overlap_scores.clone(),
                },
            );
        }
        let manifest = AnchorManifest {
            format_version: ANCHOR_FORMAT_VERSION,
            modes,
        };
        let text = serde_json::to_string_pretty(&manifest)
            .map_err(|e| GatsError::Format(e.to_string()))?;
        fs::write(dir.join("manifest.json"), text)?;
        Ok(())
    }

    /// Reads an archive written by [`AnchorSet::save`], verifying hashes.
    pub fn load(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join("manifest.json"))?;
        let manifest: AnchorManifest =
            serde_json::from_str(&text).map_err(|e| GatsError::Format(e.to_string()))?;
        if manifest.format_version != ANCHOR_FORMAT_VERSION {
            return Err(GatsError::Format(format!(
                "unsupported anchor archive version {}",
                manifest.format_version
            )));
        }
        let mut set = Self::new();
        for (key, e) in manifest.modes {
            let mode: usize = key
                .parse()
                .ok()
                .filter(|&m: &usize| m >= 1)
                .ok_or_else(|| GatsError::Format(format!("bad mode key {key:?}")))?;
            let m = dtz::read_matrix(dir.join(&e.file))?;
            if m.shape() != (e.n, e.r) {
                return Err(GatsError::Format(format!(
                    "anchor {} is {:?}, manifest says {}x{}",
                    e.file,
                    m.shape(),
                    e.n,
                    e.r
                )));
            }
            let anchor = ModeAnchor::new(StiefelMatrix::new(m)?, e.medoid_index, e.overlap_scores);
            if anchor.hash != e.hash {
                return Err(GatsError::Format(format!(
                    "anchor {} hash mismatch",
                    e.file
                )));
            }
            set.insert(mode - 1, anchor);
        }
        Ok(set)
    }
}

#[derive(Serialize, Deserialize)]
struct AnchorManifest {
    format_version: u32,
    modes: BTreeMap<String, AnchorEntry>,
}

#[derive(Serialize, Deserialize)]
struct AnchorEntry {
    file: String,
    n: usize,
    r: usize,
    medoid_index: usize,
    hash: String,
    #[serde(default)]
    overlap_scores: Vec<f64>,
}

/// One medoid per requested mode, each from that mode's frames.
pub fn select_anchors_from_frames(
    frames_per_mode: &BTreeMap<usize, Vec<StiefelMatrix>>,
    exec: Execution,
) -> Result<AnchorSet> {
    let mut set = AnchorSet::new();
    for (&k, frames) in frames_per_mode {
        let med = medoid_index(frames, exec)?;
        set.insert(
            k,
            ModeAnchor::new(frames[med.index].clone(), med.index, med.scores),
        );
    }
    Ok(set)
}

/// Anchors from per-sample Tucker factors on the given (0-based) modes.
pub fn select_anchors(
    corpus: &[TuckerFactors],
    aligned_modes: &[usize],
    exec: Execution,
) -> Result<AnchorSet> {
    if corpus.is_empty() {
        return Err(GatsError::Empty("anchor corpus"));
    }
    let mut frames = BTreeMap::new();
    for &k in aligned_modes {
        let mut list = Vec::with_capacity(corpus.len());
        for (i, f) in corpus.iter().enumerate() {
            let u = f.factors().get(k).ok_or(GatsError::ModeOutOfRange {
                mode: k,
                order: f.factors().len(),
            })?;
            if u.matrix().shape() != corpus[0].factors()[k].matrix().shape() {
                return Err(GatsError::ShapeMismatch(format!(
                    "sample {i} mode {} factor is {:?}, sample 0 has {:?}",
                    k + 1,
                    u.matrix().shape(),
                    corpus[0].factors()[k].matrix().shape()
                )));
            }
            list.push(u.clone());
        }
        frames.insert(k, list);
    }
    select_anchors_from_frames(&frames, exec)
}
