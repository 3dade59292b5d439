//! End-to-end runs over a manifest of samples: boundary mask, affinities,
//! propagation, pseudo labels and mIoU, plus a threshold sweep.
//!
//! Manifest layout (paths relative to the manifest file):
//!
//! ```json
//! { "samples": [ { "id": "img0", "cam": "cam/img0.npy", "features": "feat/img0.npy",
//!                  "boundary": "bd/img0.npy", "categories": [6], "gt": "gt/img0.npy" } ] }
//! ```
//!
//! `cam` is H x W x C float32 (one channel per entry of `categories`),
//! `features` H x W x D float32, `boundary` H x W float32 in `[0, 1]`, and the
//! optional `gt` a uint8 label map at output resolution with 255 as ignore.
//! Without `gt`, labels are produced at `out_size` (`[h, w]`) or at the CAM
//! resolution.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::affinity::{affinity_from_features, build_neighbors, DEFAULT_BG_THRESH, DEFAULT_FG_THRESH, DEFAULT_GAMMA};
use crate::boundary::{binarize_boundary, DEFAULT_TAU};
use crate::error::{Error, Result};
use crate::grid::{check_grid, BoundaryProbMap, FeatureMap, LabelMap, RegionMask, ResponseStack};
use crate::metrics::{miou_groups, ConfusionMatrix, MiouReport};
use crate::propagation::{propagate, Strategy, WalkParams, DEFAULT_BETA, DEFAULT_ITERS};
use crate::pseudolabel::{pseudo_labels, DEFAULT_BG_ALPHA};
use crate::splits::CategorySplit;
use crate::tensor_io::{read_f32_2d, read_f32_3d, read_u8_2d, write_tensor};

/// Caps the worker pool size when set.
pub const THREADS_ENV: &str = "RETAB_THREADS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub tau: f64,
    pub gamma: f64,
    pub beta: f64,
    pub iters: usize,
    pub stage2_iters: Option<usize>,
    pub fg_thresh: f64,
    pub bg_thresh: f64,
    pub bg_alpha: f64,
    pub fold: usize,
    pub strategy: Strategy,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            tau: DEFAULT_TAU,
            gamma: DEFAULT_GAMMA,
            beta: DEFAULT_BETA,
            iters: DEFAULT_ITERS,
            stage2_iters: None,
            fg_thresh: DEFAULT_FG_THRESH,
            bg_thresh: DEFAULT_BG_THRESH,
            bg_alpha: DEFAULT_BG_ALPHA,
            fold: 0,
            strategy: Strategy::Btp,
        }
    }
}

impl PipelineConfig {
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: String| Err(Error::arg(format!("config field `{field}`: {why}")));
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return bad("tau", format!("must lie in (0, 1), got {}", self.tau));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return bad("gamma", format!("must be positive, got {}", self.gamma));
        }
        if !(self.beta >= 1.0 && self.beta.is_finite()) {
            return bad("beta", format!("must be >= 1, got {}", self.beta));
        }
        if !(self.fg_thresh > 0.0 && self.fg_thresh < 1.0) {
            return bad("fg_thresh", format!("must lie in (0, 1), got {}", self.fg_thresh));
        }
        if !(self.bg_thresh > 0.0 && self.bg_thresh < self.fg_thresh) {
            return bad(
                "bg_thresh",
                format!("must lie in (0, fg_thresh), got {}", self.bg_thresh),
            );
        }
        if !(self.bg_alpha > 0.0 && self.bg_alpha.is_finite()) {
            return bad("bg_alpha", format!("must be positive, got {}", self.bg_alpha));
        }
        if self.fold > 5 {
            return bad("fold", format!("must be in 0..=5, got {}", self.fold));
        }
        Ok(())
    }

    pub fn walk_params(&self) -> WalkParams {
        WalkParams {
            beta: self.beta,
            iters: self.iters,
            stage2_iters: self.stage2_iters,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleEntry {
    pub id: String,
    pub cam: PathBuf,
    pub features: PathBuf,
    pub boundary: PathBuf,
    pub categories: Vec<u8>,
    #[serde(default)]
    pub gt: Option<PathBuf>,
    #[serde(default)]
    pub out_size: Option<[usize; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub samples: Vec<SampleEntry>,
}

impl Manifest {
    /// Parses the manifest and resolves sample paths against its directory.
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut manifest: Manifest = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        for s in &mut manifest.samples {
            for p in [&mut s.cam, &mut s.features, &mut s.boundary] {
                *p = base.join(&*p);
            }
            if let Some(gt) = &mut s.gt {
                *gt = base.join(&*gt);
            }
        }
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::arg("manifest lists no samples"));
        }
        let mut ids: Vec<&str> = self.samples.iter().map(|s| s.id.as_str()).collect();
        if let Some(bad) = ids
            .iter()
            .find(|id| id.is_empty() || id.contains(['/', '\\']) || **id == "." || **id == "..")
        {
            return Err(Error::arg(format!("sample id {bad:?} is not a plain file name")));
        }
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::arg(format!("duplicate sample id {:?}", w[0])));
        }
        Ok(())
    }
}

/// Everything computed for one sample.
#[derive(Debug, Clone)]
pub struct SampleOutput {
    pub mask: RegionMask,
    pub revised: ResponseStack,
    pub labels: LabelMap,
    pub confusion: Option<ConfusionMatrix>,
}

pub fn process_sample(config: &PipelineConfig, split: &CategorySplit, entry: &SampleEntry) -> Result<SampleOutput> {
    let cam = ResponseStack::from_hwc(read_f32_3d(&entry.cam)?.view());
    if cam.channels() != entry.categories.len() {
        return Err(Error::shape(format!(
            "CAM has {} channels for {} categories",
            cam.channels(),
            entry.categories.len()
        )));
    }
    let grid = (cam.height(), cam.width());
    let features = FeatureMap::from_f32(read_f32_3d(&entry.features)?.view());
    check_grid("feature map", (features.height(), features.width()), grid)?;
    let boundary = BoundaryProbMap::from_f32(read_f32_2d(&entry.boundary)?.view())?;
    check_grid("boundary map", boundary.dim(), grid)?;
    let gt = entry.gt.as_ref().map(read_u8_2d).transpose()?;

    let mask = binarize_boundary(&boundary, config.tau)?;
    let pairs = build_neighbors(grid.0, grid.1, config.gamma)?;
    let table = affinity_from_features(&features, &pairs)?;
    let revised = propagate(
        config.strategy,
        &table,
        &mask,
        &cam.normalize_max(),
        &config.walk_params(),
    )?;
    let size = match (&gt, entry.out_size) {
        (Some(g), _) => g.dim(),
        (None, Some([h, w])) => (h, w),
        (None, None) => grid,
    };
    let labels = pseudo_labels(&revised, &entry.categories, Some(size), config.bg_alpha)?;
    let confusion = match &gt {
        Some(g) => {
            let mut cm = ConfusionMatrix::new(split.num_categories);
            cm.accumulate(labels.view(), g.view())?;
            Some(cm)
        }
        None => None,
    };
    Ok(SampleOutput {
        mask,
        revised,
        labels,
        confusion,
    })
}

/// Pool sized by [`THREADS_ENV`] when set, otherwise rayon's default.
pub fn worker_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::arg(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| Error::arg(format!("cannot start worker pool: {e}")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleFailure {
    pub id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub processed: usize,
    pub failed: Vec<SampleFailure>,
    /// `None` when no sample carried ground truth.
    pub miou: Option<MiouReport>,
}

impl RunSummary {
    pub fn all_failed(&self) -> bool {
        self.processed == 0
    }
}

fn merge_confusion(
    num_classes: usize,
    outputs: impl Iterator<Item = Option<ConfusionMatrix>>,
) -> Option<ConfusionMatrix> {
    let mut total: Option<ConfusionMatrix> = None;
    for cm in outputs.flatten() {
        *total.get_or_insert_with(|| ConfusionMatrix::new(num_classes)) += &cm;
    }
    total
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `revised/<id>.npy`, `labels/<id>.npy`, `metrics.json` and
/// `config.json` under `out_dir`.
pub fn run_pipeline(config: &PipelineConfig, manifest: &Manifest, out_dir: impl AsRef<Path>) -> Result<RunSummary> {
    config.validate()?;
    manifest.validate()?;
    let split = CategorySplit::for_fold(config.fold)?;
    let out_dir = out_dir.as_ref();
    let revised_dir = out_dir.join("revised");
    let labels_dir = out_dir.join("labels");
    for d in [&revised_dir, &labels_dir] {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }

    let pool = worker_pool()?;
    let results: Vec<Result<SampleOutput>> = pool.install(|| {
        manifest
            .samples
            .par_iter()
            .map(|entry| process_sample(config, &split, entry))
            .collect()
    });

    let mut failed = Vec::new();
    let mut confusions = Vec::new();
    for (entry, result) in manifest.samples.iter().zip(results) {
        let written = result.and_then(|out| {
            write_tensor(
                revised_dir.join(format!("{}.npy", entry.id)),
                &out.revised.to_hwc().into(),
            )?;
            write_tensor(labels_dir.join(format!("{}.npy", entry.id)), &out.labels.into())?;
            Ok(out.confusion)
        });
        match written {
            Ok(cm) => confusions.push(cm),
            Err(e) => failed.push(SampleFailure {
                id: entry.id.clone(),
                error: e.to_string(),
            }),
        }
    }
    let processed = confusions.len();
    let miou = match merge_confusion(split.num_categories, confusions.into_iter()) {
        Some(cm) => Some(miou_groups(&cm, &split)?),
        None => None,
    };
    let summary = RunSummary {
        processed,
        failed,
        miou,
    };
    write_json(&out_dir.join("metrics.json"), &summary)?;
    write_json(&out_dir.join("config.json"), config)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub tau: f64,
    pub all: Option<f64>,
    pub base: Option<f64>,
    pub novel: Option<f64>,
    pub failed: usize,
}

/// One mIoU row per threshold; every sample must carry ground truth.
pub fn tau_sweep(config: &PipelineConfig, manifest: &Manifest, taus: &[f64]) -> Result<Vec<SweepRow>> {
    config.validate()?;
    manifest.validate()?;
    if taus.is_empty() {
        return Err(Error::arg("tau list is empty"));
    }
    if let Some(s) = manifest.samples.iter().find(|s| s.gt.is_none()) {
        return Err(Error::arg(format!("sample {:?} has no ground truth", s.id)));
    }
    let split = CategorySplit::for_fold(config.fold)?;
    let pool = worker_pool()?;
    taus.iter()
        .map(|&tau| {
            let cfg = PipelineConfig { tau, ..config.clone() };
            cfg.validate()?;
            let results: Vec<Result<SampleOutput>> = pool.install(|| {
                manifest
                    .samples
                    .par_iter()
                    .map(|entry| process_sample(&cfg, &split, entry))
                    .collect()
            });
            let failed = results.iter().filter(|r| r.is_err()).count();
            let cm = merge_confusion(
                split.num_categories,
                results.into_iter().filter_map(|r| r.ok()).map(|o| o.confusion),
            );
            let report = match cm {
                Some(cm) => Some(miou_groups(&cm, &split)?),
                None => None,
            };
            Ok(SweepRow {
                tau,
                all: report.as_ref().and_then(|r| r.all),
                base: report.as_ref().and_then(|r| r.base),
                novel: report.as_ref().and_then(|r| r.novel),
                failed,
            })
        })
        .collect()
}
