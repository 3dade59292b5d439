//! Boundary-map thresholding, label-derived boundary targets, the
//! class-balanced boundary loss, and binary boundary evaluation.

use ndarray::{Array2, ArrayView2, Zip};

use crate::error::{Error, Result};
use crate::grid::{check_grid, BoundaryProbMap, RegionMask, IGNORE_LABEL};
use crate::metrics::{BinaryCounts, BinaryMetrics};
use crate::splits::{CategorySplit, BACKGROUND};

pub const DEFAULT_TAU: f64 = 0.5;
pub const DEFAULT_GT_RADIUS: usize = 1;
pub const DEFAULT_LOSS_EPS: f64 = 1e-7;

/// Pixels with probability `>= tau` form the boundary region.
pub fn binarize_boundary(prob: &BoundaryProbMap, tau: f64) -> Result<RegionMask> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::arg(format!("tau must lie in (0, 1), got {tau}")));
    }
    Ok(RegionMask::new(prob.values().mapv(|p| p >= tau)))
}

/// A non-ignore pixel is a boundary pixel when some non-ignore pixel within
/// Chebyshev distance `radius` carries a different label.
pub fn derive_gt_boundary(seg: ArrayView2<'_, u8>, radius: usize) -> Result<Array2<bool>> {
    if radius == 0 {
        return Err(Error::arg("boundary radius must be at least 1"));
    }
    let (h, w) = seg.dim();
    Ok(Array2::from_shape_fn((h, w), |(y, x)| {
        let own = seg[[y, x]];
        if own == IGNORE_LABEL {
            return false;
        }
        let (y0, y1) = (y.saturating_sub(radius), (y + radius).min(h - 1));
        let (x0, x1) = (x.saturating_sub(radius), (x + radius).min(w - 1));
        (y0..=y1).any(|yy| {
            (x0..=x1).any(|xx| {
                let other = seg[[yy, xx]];
                other != IGNORE_LABEL && other != own
            })
        })
    }))
}

/// Class-balanced boundary cross-entropy.
///
/// Pixels split into boundary (`gt_boundary`), non-boundary base foreground,
/// and non-boundary background; the loss is the boundary-term mean plus half
/// of each of the two non-boundary means. Probabilities are clamped to
/// `[eps, 1 - eps]` and an empty subset contributes nothing. The label map
/// must not contain novel categories.
pub fn boundary_loss(
    prob: &BoundaryProbMap,
    gt_boundary: ArrayView2<'_, bool>,
    seg: ArrayView2<'_, u8>,
    split: &CategorySplit,
    eps: f64,
) -> Result<f64> {
    check_grid("ground-truth boundary", gt_boundary.dim(), prob.dim())?;
    check_grid("segmentation labels", seg.dim(), prob.dim())?;
    if !(eps > 0.0 && eps < 0.5) {
        return Err(Error::arg(format!("eps must lie in (0, 0.5), got {eps}")));
    }
    if let Some(&bad) = seg
        .iter()
        .find(|&&c| c != IGNORE_LABEL && (c as usize >= split.num_categories || split.is_novel(c)))
    {
        return Err(Error::arg(format!(
            "boundary loss is defined on base samples only; found category {bad}"
        )));
    }

    let mut sums = [0.0f64; 3];
    let mut counts = [0usize; 3];
    Zip::from(prob.values())
        .and(&gt_boundary)
        .and(&seg)
        .for_each(|&p, &is_bd, &label| {
            let p = p.clamp(eps, 1.0 - eps);
            let (slot, term) = if is_bd {
                (0, p.ln())
            } else if label == BACKGROUND {
                (2, (1.0 - p).ln())
            } else if label != IGNORE_LABEL {
                (1, (1.0 - p).ln())
            } else {
                return;
            };
            sums[slot] += term;
            counts[slot] += 1;
        });

    let mean = |k: usize| {
        if counts[k] == 0 {
            0.0
        } else {
            sums[k] / counts[k] as f64
        }
    };
    Ok(-mean(0) - 0.5 * mean(1) - 0.5 * mean(2))
}

/// Confusion counts of a binary prediction against a binary target,
/// skipping pixels flagged in `ignore`.
pub fn binary_counts(
    pred: ArrayView2<'_, bool>,
    gt: ArrayView2<'_, bool>,
    ignore: Option<ArrayView2<'_, bool>>,
) -> Result<BinaryCounts> {
    check_grid("binary prediction", pred.dim(), gt.dim())?;
    if let Some(ig) = &ignore {
        check_grid("ignore map", ig.dim(), gt.dim())?;
    }
    let mut counts = BinaryCounts::default();
    match ignore {
        Some(ig) => Zip::from(&pred).and(&gt).and(&ig).for_each(|&p, &g, &skip| {
            if !skip {
                counts.record(p, g);
            }
        }),
        None => Zip::from(&pred).and(&gt).for_each(|&p, &g| counts.record(p, g)),
    }
    Ok(counts)
}

pub fn eval_binary(
    pred: ArrayView2<'_, bool>,
    gt: ArrayView2<'_, bool>,
    ignore: Option<ArrayView2<'_, bool>>,
) -> Result<BinaryMetrics> {
    Ok(binary_counts(pred, gt, ignore)?.metrics())
}
