//! Neighbour-pair construction, feature-based affinities, affinity targets
//! (from segmentation labels or from CAMs), boundary filtering of targets,
//! the affinity cross-entropy value and binary affinity evaluation.
//!
//! Pairs are stored once per unordered pair as `(i, j)` with `i < j`, where
//! `i` and `j` are row-major flat pixel indices on the working grid.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use ndarray::{Array1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{check_grid, FeatureMap, RegionMask, ResponseStack, IGNORE_LABEL};
use crate::metrics::{BinaryCounts, BinaryMetrics};
use crate::tensor_io::{read_tensor, write_tensor};

pub const DEFAULT_GAMMA: f64 = 5.0;
pub const DEFAULT_FG_THRESH: f64 = 0.30;
pub const DEFAULT_BG_THRESH: f64 = 0.05;
pub const DEFAULT_LOSS_EPS: f64 = 1e-5;
/// Predicted affinities at or above this value count as "same category".
pub const AFFINITY_DECISION_THRESHOLD: f64 = 0.5;

/// All pixel pairs closer than `radius` (Euclidean) on a `height x width` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborPairs {
    height: usize,
    width: usize,
    radius: f64,
    pairs: Vec<(u32, u32)>,
}

impl NeighborPairs {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn num_pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[(u32, u32)] {
        &self.pairs
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.pairs.iter().map(|&(i, j)| (i as usize, j as usize))
    }

    fn same_set(a: &Arc<NeighborPairs>, b: &Arc<NeighborPairs>) -> bool {
        Arc::ptr_eq(a, b) || a == b
    }
}

/// Enumerates `{(i, j) : d(i, j) < gamma, i < j}` in ascending `(i, j)` order.
pub fn build_neighbors(height: usize, width: usize, gamma: f64) -> Result<Arc<NeighborPairs>> {
    if height == 0 || width == 0 {
        return Err(Error::arg("neighbour grid must be at least 1x1"));
    }
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::arg(format!("search radius must be positive, got {gamma}")));
    }
    if height * width > u32::MAX as usize {
        return Err(Error::arg("grid too large for 32-bit pixel indices"));
    }
    let reach = gamma.ceil() as isize;
    let r2 = gamma * gamma;
    // forward half-plane offsets: later rows, or same row to the right
    let offsets: Vec<(isize, isize)> = (0..=reach)
        .flat_map(|dy| (-reach..=reach).map(move |dx| (dy, dx)))
        .filter(|&(dy, dx)| dy > 0 || dx > 0)
        .filter(|&(dy, dx)| ((dy * dy + dx * dx) as f64) < r2)
        .collect();

    let (h, w) = (height as isize, width as isize);
    let mut pairs = Vec::with_capacity(height * width * offsets.len());
    for y in 0..h {
        for x in 0..w {
            let i = (y * w + x) as u32;
            for &(dy, dx) in &offsets {
                let (yy, xx) = (y + dy, x + dx);
                if yy < h && (0..w).contains(&xx) {
                    pairs.push((i, (yy * w + xx) as u32));
                }
            }
        }
    }
    Ok(Arc::new(NeighborPairs {
        height,
        width,
        radius: gamma,
        pairs,
    }))
}

/// Predicted affinity per neighbour pair, each in `(0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairAffinityTable {
    pairs: Arc<NeighborPairs>,
    affinity: Vec<f64>,
}

impl PairAffinityTable {
    pub fn new(pairs: Arc<NeighborPairs>, affinity: Vec<f64>) -> Result<Self> {
        if affinity.len() != pairs.len() {
            return Err(Error::shape(format!(
                "{} affinities for {} pairs",
                affinity.len(),
                pairs.len()
            )));
        }
        if let Some(bad) = affinity.iter().find(|a| !(**a > 0.0 && **a <= 1.0)) {
            return Err(Error::arg(format!("affinities must lie in (0, 1], found {bad}")));
        }
        Ok(Self { pairs, affinity })
    }

    pub fn pairs(&self) -> &Arc<NeighborPairs> {
        &self.pairs
    }

    pub fn affinity(&self) -> &[f64] {
        &self.affinity
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.pairs.iter().zip(&self.affinity).map(|((i, j), &a)| (i, j, a))
    }
}

/// `exp(-||f_i - f_j||_1)` for every neighbour pair.
pub fn affinity_from_features(features: &FeatureMap, pairs: &Arc<NeighborPairs>) -> Result<PairAffinityTable> {
    check_grid(
        "feature map",
        (features.height(), features.width()),
        (pairs.height, pairs.width),
    )?;
    let affinity = pairs
        .iter()
        .map(|(i, j)| {
            let l1: f64 = features
                .pixel_slice(i)
                .iter()
                .zip(features.pixel_slice(j))
                .map(|(a, b)| (a - b).abs())
                .sum();
            // exp underflows to zero beyond an L1 distance of ~745
            (-l1).exp().max(f64::MIN_POSITIVE)
        })
        .collect();
    PairAffinityTable::new(Arc::clone(pairs), affinity)
}

/// Affinity target for one pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PairLabel {
    /// Excluded from supervision (ignore pixel, neutral CAM pixel, or filtered).
    Undefined,
    /// Different categories.
    Negative,
    /// Same category, provenance unknown (label-map derived).
    Positive,
    /// Same foreground category, both pixels confidently foreground.
    PositiveForeground,
    /// Both pixels confidently background.
    PositiveBackground,
}

impl PairLabel {
    pub fn is_defined(self) -> bool {
        self != PairLabel::Undefined
    }

    /// `Some(true)` for positives, `Some(false)` for negatives.
    pub fn value(self) -> Option<bool> {
        match self {
            PairLabel::Undefined => None,
            PairLabel::Negative => Some(false),
            _ => Some(true),
        }
    }
}

/// Affinity targets aligned with a [`NeighborPairs`] set.
#[derive(Debug, Clone, PartialEq)]
pub struct PairLabels {
    pairs: Arc<NeighborPairs>,
    labels: Vec<PairLabel>,
}

impl PairLabels {
    pub fn new(pairs: Arc<NeighborPairs>, labels: Vec<PairLabel>) -> Result<Self> {
        if labels.len() != pairs.len() {
            return Err(Error::shape(format!(
                "{} labels for {} pairs",
                labels.len(),
                pairs.len()
            )));
        }
        Ok(Self { pairs, labels })
    }

    pub fn pairs(&self) -> &Arc<NeighborPairs> {
        &self.pairs
    }

    pub fn labels(&self) -> &[PairLabel] {
        &self.labels
    }

    pub fn defined_count(&self) -> usize {
        self.labels.iter().filter(|l| l.is_defined()).count()
    }
}

/// Targets from a segmentation map at working resolution: positive for equal
/// labels, negative otherwise, undefined when either pixel is ignore.
pub fn gt_affinity_labels(seg: ArrayView2<'_, u8>, pairs: &Arc<NeighborPairs>) -> Result<PairLabels> {
    check_grid("segmentation map", seg.dim(), (pairs.height, pairs.width))?;
    let seg = seg.as_standard_layout();
    let flat = seg.as_slice().expect("standard layout");
    let labels = pairs
        .iter()
        .map(|(i, j)| match (flat[i], flat[j]) {
            (IGNORE_LABEL, _) | (_, IGNORE_LABEL) => PairLabel::Undefined,
            (a, b) if a == b => PairLabel::Positive,
            _ => PairLabel::Negative,
        })
        .collect();
    PairLabels::new(Arc::clone(pairs), labels)
}

/// Confidence class of one pixel under the dual-threshold rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PixelConfidence {
    Foreground(u8),
    Background,
    Neutral,
}

/// Per-pixel confidence from max-normalized CAMs. Channel `k` belongs to
/// `image_labels[k]`; ties resolve to the lower channel.
pub fn pixel_confidence(
    cams: &ResponseStack,
    image_labels: &[u8],
    fg_thresh: f64,
    bg_thresh: f64,
) -> Result<Vec<PixelConfidence>> {
    if !(0.0 < bg_thresh && bg_thresh < fg_thresh && fg_thresh < 1.0) {
        return Err(Error::arg(format!(
            "thresholds must satisfy 0 < bg_thresh < fg_thresh < 1, got bg={bg_thresh} fg={fg_thresh}"
        )));
    }
    if cams.channels() != image_labels.len() {
        return Err(Error::shape(format!(
            "{} CAM channels for {} image labels",
            cams.channels(),
            image_labels.len()
        )));
    }
    if image_labels.iter().any(|&c| c == 0 || c == IGNORE_LABEL) {
        return Err(Error::arg("image labels must be foreground category indices"));
    }
    let n = cams.num_pixels();
    let mut best = vec![(0.0f64, None::<u8>); n];
    for (k, &cat) in image_labels.iter().enumerate() {
        for (slot, &v) in best.iter_mut().zip(cams.channel_slice(k)) {
            if slot.1.is_none() || v > slot.0 {
                *slot = (v, Some(cat));
            }
        }
    }
    Ok(best
        .into_iter()
        .map(|(score, cat)| match cat {
            Some(c) if score >= fg_thresh => PixelConfidence::Foreground(c),
            _ if score <= bg_thresh => PixelConfidence::Background,
            _ => PixelConfidence::Neutral,
        })
        .collect())
}

/// Targets from CAMs: positive when both pixels are confident with the same
/// category (tagged foreground or background), negative when both are
/// confident with different categories, undefined otherwise.
pub fn pseudo_affinity_labels(
    cams: &ResponseStack,
    image_labels: &[u8],
    fg_thresh: f64,
    bg_thresh: f64,
    pairs: &Arc<NeighborPairs>,
) -> Result<PairLabels> {
    check_grid("CAM stack", (cams.height(), cams.width()), (pairs.height, pairs.width))?;
    let conf = pixel_confidence(cams, image_labels, fg_thresh, bg_thresh)?;
    use PixelConfidence::*;
    let labels = pairs
        .iter()
        .map(|(i, j)| match (conf[i], conf[j]) {
            (Neutral, _) | (_, Neutral) => PairLabel::Undefined,
            (Background, Background) => PairLabel::PositiveBackground,
            (Foreground(a), Foreground(b)) if a == b => PairLabel::PositiveForeground,
            _ => PairLabel::Negative,
        })
        .collect();
    PairLabels::new(Arc::clone(pairs), labels)
}

/// Drops supervision on every pair touching the boundary region.
pub fn filter_pairs_nbd(labels: &PairLabels, mask: &RegionMask) -> Result<PairLabels> {
    check_grid("region mask", mask.dim(), (labels.pairs.height, labels.pairs.width))?;
    let filtered = labels
        .pairs
        .iter()
        .zip(&labels.labels)
        .map(|((i, j), &l)| {
            if mask.is_boundary(i) || mask.is_boundary(j) {
                PairLabel::Undefined
            } else {
                l
            }
        })
        .collect();
    PairLabels::new(Arc::clone(&labels.pairs), filtered)
}

/// Balanced affinity cross-entropy.
///
/// Defined pairs fall into up to three groups: foreground (or
/// provenance-free) positives, background positives, and negatives. The loss
/// is the unweighted mean over non-empty groups of each group's mean
/// cross-entropy, with affinities clamped to `[eps, 1 - eps]`.
pub fn affinity_loss(table: &PairAffinityTable, labels: &PairLabels, eps: f64) -> Result<f64> {
    if !NeighborPairs::same_set(&table.pairs, &labels.pairs) {
        return Err(Error::shape("affinity table and labels cover different pair sets"));
    }
    if !(eps > 0.0 && eps < 0.5) {
        return Err(Error::arg(format!("eps must lie in (0, 0.5), got {eps}")));
    }
    let mut sums = [0.0f64; 3];
    let mut counts = [0usize; 3];
    for (&a, &l) in table.affinity.iter().zip(&labels.labels) {
        let a = a.clamp(eps, 1.0 - eps);
        let (slot, term) = match l {
            PairLabel::Undefined => continue,
            PairLabel::Positive | PairLabel::PositiveForeground => (0, -a.ln()),
            PairLabel::PositiveBackground => (1, -a.ln()),
            PairLabel::Negative => (2, -(1.0 - a).ln()),
        };
        sums[slot] += term;
        counts[slot] += 1;
    }
    let groups: Vec<f64> = (0..3)
        .filter(|&k| counts[k] > 0)
        .map(|k| sums[k] / counts[k] as f64)
        .collect();
    if groups.is_empty() {
        return Err(Error::arg("affinity loss needs at least one defined label"));
    }
    Ok(groups.iter().sum::<f64>() / groups.len() as f64)
}

/// Confusion counts of `affinity >= 0.5` against defined targets.
pub fn affinity_counts(pred: &PairAffinityTable, gt: &PairLabels) -> Result<BinaryCounts> {
    if !NeighborPairs::same_set(&pred.pairs, &gt.pairs) {
        return Err(Error::shape(
            "predicted and target affinities cover different pair sets",
        ));
    }
    let mut counts = BinaryCounts::default();
    for (&a, l) in pred.affinity.iter().zip(&gt.labels) {
        if let Some(truth) = l.value() {
            counts.record(a >= AFFINITY_DECISION_THRESHOLD, truth);
        }
    }
    Ok(counts)
}

pub fn eval_affinity(pred: &PairAffinityTable, gt: &PairLabels) -> Result<BinaryMetrics> {
    Ok(affinity_counts(pred, gt)?.metrics())
}

/// Grid description stored next to a pair triplet so the pair set can be
/// rebuilt and checked on load.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairGridMeta {
    pub height: usize,
    pub width: usize,
    pub gamma: f64,
}

const I_FILE: &str = "i.npy";
const J_FILE: &str = "j.npy";
const VALUES_FILE: &str = "values.npy";
const META_FILE: &str = "meta.json";

fn write_triplet(dir: &Path, pairs: &NeighborPairs, values: Vec<f32>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let is: Array1<i32> = pairs.pairs.iter().map(|&(i, _)| i as i32).collect();
    let js: Array1<i32> = pairs.pairs.iter().map(|&(_, j)| j as i32).collect();
    write_tensor(dir.join(I_FILE), &is.into())?;
    write_tensor(dir.join(J_FILE), &js.into())?;
    write_tensor(dir.join(VALUES_FILE), &Array1::from(values).into())?;
    let meta = PairGridMeta {
        height: pairs.height,
        width: pairs.width,
        gamma: pairs.radius,
    };
    let path = dir.join(META_FILE);
    let text = serde_json::to_string_pretty(&meta).expect("meta serializes");
    fs::write(&path, text).map_err(|e| Error::io(path, e))
}

fn read_triplet(dir: &Path) -> Result<(Arc<NeighborPairs>, Vec<f32>)> {
    let meta_path = dir.join(META_FILE);
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: PairGridMeta = serde_json::from_str(&text).map_err(|source| Error::Json {
        path: meta_path,
        source,
    })?;
    let pairs = build_neighbors(meta.height, meta.width, meta.gamma)?;
    let is = read_tensor(dir.join(I_FILE))?.into_i32()?;
    let js = read_tensor(dir.join(J_FILE))?.into_i32()?;
    let values = read_tensor(dir.join(VALUES_FILE))?.into_f32()?;
    let matches = is.len() == pairs.len()
        && js.len() == pairs.len()
        && pairs
            .pairs
            .iter()
            .zip(is.iter().zip(js.iter()))
            .all(|(&(i, j), (&a, &b))| i as i64 == a as i64 && j as i64 == b as i64);
    if !matches {
        return Err(Error::Format(format!(
            "{}: pair indices do not match a {}x{} grid with radius {}",
            dir.display(),
            meta.height,
            meta.width,
            meta.gamma
        )));
    }
    if values.len() != pairs.len() {
        return Err(Error::Format(format!(
            "{}: {} values for {} pairs",
            dir.display(),
            values.len(),
            pairs.len()
        )));
    }
    Ok((pairs, values.iter().copied().collect()))
}

/// Writes `i.npy`, `j.npy` (int32), `values.npy` (float32) and `meta.json`.
pub fn write_affinity_table(dir: impl AsRef<Path>, table: &PairAffinityTable) -> Result<()> {
    let values = table.affinity.iter().map(|&a| a as f32).collect();
    write_triplet(dir.as_ref(), &table.pairs, values)
}

pub fn read_affinity_table(dir: impl AsRef<Path>) -> Result<PairAffinityTable> {
    let (pairs, values) = read_triplet(dir.as_ref())?;
    PairAffinityTable::new(pairs, values.into_iter().map(f64::from).collect())
}

/// Label triplets store 1 for positives, 0 for negatives and NaN for
/// undefined pairs; positive provenance is not persisted.
pub fn write_pair_labels(dir: impl AsRef<Path>, labels: &PairLabels) -> Result<()> {
    let values = labels
        .labels
        .iter()
        .map(|l| match l.value() {
            Some(true) => 1.0,
            Some(false) => 0.0,
            None => f32::NAN,
        })
        .collect();
    write_triplet(dir.as_ref(), &labels.pairs, values)
}

pub fn read_pair_labels(dir: impl AsRef<Path>) -> Result<PairLabels> {
    let dir = dir.as_ref();
    let (pairs, values) = read_triplet(dir)?;
    let labels = values
        .into_iter()
        .map(|v| {
            if v.is_nan() {
                Ok(PairLabel::Undefined)
            } else if v == 1.0 {
                Ok(PairLabel::Positive)
            } else if v == 0.0 {
                Ok(PairLabel::Negative)
            } else {
                Err(Error::Format(format!(
                    "{}: label value {v} is not 0, 1 or NaN",
                    dir.display()
                )))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    PairLabels::new(pairs, labels)
}
