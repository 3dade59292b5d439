//! Revised responses to pseudo segmentation labels, and the background
//! relabel step used for self-training.

use ndarray::{Array2, Array3, ArrayView2};

use crate::error::{Error, Result};
use crate::grid::{LabelMap, ResponseStack, IGNORE_LABEL};
use crate::splits::BACKGROUND;

pub const DEFAULT_BG_ALPHA: f64 = 16.0;

/// Corner-aligned source coordinate for each output index, as
/// `(lower index, upper index, fraction)`.
fn axis_weights(in_len: usize, out_len: usize) -> Vec<(usize, usize, f64)> {
    (0..out_len)
        .map(|d| {
            let src = if out_len == 1 {
                0.0
            } else {
                d as f64 * (in_len - 1) as f64 / (out_len - 1) as f64
            };
            let lo = (src.floor() as usize).min(in_len - 1);
            let hi = (lo + 1).min(in_len - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + t * (b - a)
}

/// Bilinear upsampling with corner-aligned sampling: output corners land
/// exactly on input corners.
pub fn upsample_bilinear(responses: &ResponseStack, out_h: usize, out_w: usize) -> Result<ResponseStack> {
    let (c, h, w) = (responses.channels(), responses.height(), responses.width());
    if out_h == 0 || out_w == 0 {
        return Err(Error::arg("upsampling target must be at least 1x1"));
    }
    if h == 0 || w == 0 {
        return Err(Error::arg("cannot upsample an empty response map"));
    }
    if out_h < h || out_w < w {
        return Err(Error::arg(format!(
            "upsampling target {out_h}x{out_w} is smaller than the input {h}x{w}"
        )));
    }
    let ys = axis_weights(h, out_h);
    let xs = axis_weights(w, out_w);
    let mut out = Array3::<f64>::zeros((c, out_h, out_w));
    for k in 0..c {
        let src = responses.channel(k);
        for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                let top = lerp(src[[y0, x0]], src[[y0, x1]], fx);
                let bottom = lerp(src[[y1, x0]], src[[y1, x1]], fx);
                out[[k, oy, ox]] = lerp(top, bottom, fy);
            }
        }
    }
    Ok(ResponseStack::new(out))
}

/// Background plus foreground scores. Channel 0 is background; the rest carry
/// category tags in ascending order.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreStack {
    scores: Array3<f64>,
    tags: Vec<u8>,
}

impl ScoreStack {
    pub fn scores(&self) -> &Array3<f64> {
        &self.scores
    }

    pub fn tags(&self) -> &[u8] {
        &self.tags
    }
}

/// Sorts the foreground channels by category and prepends the background
/// channel `(1 - max_fg)^bg_alpha`.
pub fn assemble_scores(revised: &ResponseStack, categories: &[u8], bg_alpha: f64) -> Result<ScoreStack> {
    if categories.is_empty() {
        return Err(Error::arg("category list is empty"));
    }
    if categories.len() != revised.channels() {
        return Err(Error::shape(format!(
            "{} categories for {} response channels",
            categories.len(),
            revised.channels()
        )));
    }
    if categories.iter().any(|&c| c == BACKGROUND || c == IGNORE_LABEL) {
        return Err(Error::arg("categories must be foreground indices (1..=254)"));
    }
    if !(bg_alpha > 0.0 && bg_alpha.is_finite()) {
        return Err(Error::arg(format!("bg_alpha must be positive, got {bg_alpha}")));
    }
    let mut order: Vec<usize> = (0..categories.len()).collect();
    order.sort_by_key(|&k| categories[k]);
    if order.windows(2).any(|p| categories[p[0]] == categories[p[1]]) {
        return Err(Error::arg("duplicate category in list"));
    }

    let (h, w) = (revised.height(), revised.width());
    let mut scores = Array3::<f64>::zeros((categories.len() + 1, h, w));
    let mut max_fg = Array2::<f64>::from_elem((h, w), f64::NEG_INFINITY);
    for (slot, &k) in order.iter().enumerate() {
        let ch = revised.channel(k);
        scores.index_axis_mut(ndarray::Axis(0), slot + 1).assign(&ch);
        max_fg.zip_mut_with(&ch, |m, &v| *m = m.max(v));
    }
    scores
        .index_axis_mut(ndarray::Axis(0), 0)
        .assign(&max_fg.mapv(|m| (1.0 - m).max(0.0).powf(bg_alpha)));
    let mut tags = vec![BACKGROUND];
    tags.extend(order.iter().map(|&k| categories[k]));
    Ok(ScoreStack { scores, tags })
}

/// Per-pixel tag of the highest channel; ties go to the lowest tag.
pub fn argmax_labels(stack: &ScoreStack) -> LabelMap {
    let (_, h, w) = stack.scores.dim();
    Array2::from_shape_fn((h, w), |(y, x)| {
        let mut best = 0;
        for k in 1..stack.tags.len() {
            if stack.scores[[k, y, x]] > stack.scores[[best, y, x]] {
                best = k;
            }
        }
        stack.tags[best]
    })
}

/// Upsample, renormalize, add background, take the argmax.
pub fn pseudo_labels(
    revised: &ResponseStack,
    categories: &[u8],
    out_size: Option<(usize, usize)>,
    bg_alpha: f64,
) -> Result<LabelMap> {
    let (h, w) = out_size.unwrap_or((revised.height(), revised.width()));
    let up = upsample_bilinear(revised, h, w)?.normalize_max();
    Ok(argmax_labels(&assemble_scores(&up, categories, bg_alpha)?))
}

/// Flips ground-truth background pixels to the predicted category when that
/// prediction is novel. Nothing else changes.
pub fn self_train_relabel(gt: ArrayView2<'_, u8>, predicted: ArrayView2<'_, u8>, novel: &[u8]) -> Result<LabelMap> {
    if gt.dim() != predicted.dim() {
        return Err(Error::shape(format!(
            "ground truth {:?} vs prediction {:?}",
            gt.dim(),
            predicted.dim()
        )));
    }
    let mut out = gt.to_owned();
    out.zip_mut_with(&predicted, |g, &p| {
        if *g == BACKGROUND && novel.contains(&p) {
            *g = p;
        }
    });
    Ok(out)
}
