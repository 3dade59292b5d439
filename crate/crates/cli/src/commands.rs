use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use ndarray::Array2;
use serde_json::json;

use retab_core::affinity::{
    affinity_from_features, build_neighbors, eval_affinity, filter_pairs_nbd, gt_affinity_labels,
    pseudo_affinity_labels, read_affinity_table, read_pair_labels, write_affinity_table, write_pair_labels,
};
use retab_core::boundary::{binarize_boundary, binary_counts, derive_gt_boundary};
use retab_core::grid::resize_nearest;
use retab_core::metrics::{miou_groups, BinaryCounts, ConfusionMatrix};
use retab_core::pipeline::{run_pipeline, tau_sweep, worker_pool, Manifest, PipelineConfig};
use retab_core::propagation::propagate;
use retab_core::pseudolabel::{pseudo_labels, self_train_relabel};
use retab_core::splits::LabelManifest;
use retab_core::tensor_io::{read_f32_2d, read_f32_3d, read_u8_2d, write_tensor};
use retab_core::{BoundaryProbMap, CategorySplit, Error, FeatureMap, ResponseStack, WalkParams, IGNORE_LABEL};

use crate::{Command, ConfigArgs, EvalBoundaryArgs, GtKind, LabelMode, MakeAffLabelsArgs, PropagateArgs};

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Error::InvalidArgument(msg.into()).into()
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string(value)?);
    Ok(())
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => {
            fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))
        }
        _ => Ok(()),
    }
}

fn read_cam(path: &Path) -> Result<ResponseStack> {
    Ok(ResponseStack::from_hwc(read_f32_3d(path)?.view()))
}

fn read_boundary(path: &Path) -> Result<BoundaryProbMap> {
    Ok(BoundaryProbMap::from_f32(read_f32_2d(path)?.view())?)
}

/// `.npy` files in `dir`, sorted by name.
fn npy_files(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("reading directory {}", dir.display()))? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "npy") {
            let stem = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            out.push((stem, path));
        }
    }
    if out.is_empty() {
        return Err(invalid(format!("no .npy files in {}", dir.display())));
    }
    out.sort();
    Ok(out)
}

impl ConfigArgs {
    fn resolve(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::from_path(p)?,
            None => PipelineConfig::default(),
        };
        macro_rules! apply {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field { cfg.$field = v; })*
            };
        }
        apply!(tau, gamma, beta, iters, fg_thresh, bg_thresh, bg_alpha, fold, strategy);
        if self.stage2_iters.is_some() {
            cfg.stage2_iters = self.stage2_iters;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn dispatch(command: Command) -> Result<()> {
    let pool = worker_pool()?;
    pool.install(|| match command {
        Command::SplitFolds { fold, manifest, out } => split_folds(fold, &manifest, out.as_deref()),
        Command::Affinity { features, gamma, out } => affinity(&features, gamma, &out),
        Command::MakeAffLabels(args) => make_aff_labels(&args),
        Command::EvalAffinity { pred, gt } => {
            let pred = read_affinity_table(&pred)?;
            let gt = read_pair_labels(&gt)?;
            print_json(&eval_affinity(&pred, &gt)?)
        }
        Command::EvalBoundary(args) => eval_boundary(&args),
        Command::Propagate(args) => propagate_cmd(&args),
        Command::PseudoLabels {
            revised,
            categories,
            size,
            bg_alpha,
            out,
        } => {
            let revised = read_cam(&revised)?;
            let labels = pseudo_labels(&revised, &categories, size, bg_alpha)?;
            create_parent(&out)?;
            write_tensor(&out, &labels.into())?;
            Ok(())
        }
        Command::EvalMiou { pred, gt, fold } => eval_miou(&pred, &gt, fold),
        Command::Run { config, manifest, out } => run(&config, &manifest, &out),
        Command::TauSweep {
            config,
            manifest,
            taus,
            out,
        } => sweep(&config, &manifest, &taus, out.as_deref()),
        Command::SelfTrainRelabel { gt, pred, fold, out } => {
            let split = CategorySplit::for_fold(fold)?;
            let relabelled = self_train_relabel(read_u8_2d(&gt)?.view(), read_u8_2d(&pred)?.view(), split.novel())?;
            create_parent(&out)?;
            write_tensor(&out, &relabelled.into())?;
            Ok(())
        }
    })
}

fn split_folds(fold: usize, manifest: &Path, out: Option<&Path>) -> Result<()> {
    let split = CategorySplit::for_fold(fold)?;
    let parts = LabelManifest::from_path(manifest)?.partition(&split)?;
    let doc = json!({
        "fold": fold,
        "novel_categories": split.novel(),
        "base": parts.base,
        "novel": parts.novel,
    });
    match out {
        Some(path) => {
            create_parent(path)?;
            write_json(path, &doc)
        }
        None => print_json(&doc),
    }
}

fn affinity(features: &Path, gamma: f64, out: &Path) -> Result<()> {
    let features = FeatureMap::from_f32(read_f32_3d(features)?.view());
    let pairs = build_neighbors(features.height(), features.width(), gamma)?;
    let table = affinity_from_features(&features, &pairs)?;
    write_affinity_table(out, &table)?;
    print_json(&json!({ "pairs": pairs.len() }))
}

fn make_aff_labels(args: &MakeAffLabelsArgs) -> Result<()> {
    let labels = match args.mode {
        LabelMode::Gt => {
            let seg_path = args
                .seg
                .as_deref()
                .ok_or_else(|| invalid("--seg is required in gt mode"))?;
            let mut seg = read_u8_2d(seg_path)?;
            if let Some((h, w)) = args.grid {
                seg = resize_nearest(seg.view(), h, w)?;
            }
            let (h, w) = seg.dim();
            gt_affinity_labels(seg.view(), &build_neighbors(h, w, args.gamma)?)?
        }
        LabelMode::Pseudo => {
            let cam_path = args
                .cam
                .as_deref()
                .ok_or_else(|| invalid("--cam is required in pseudo mode"))?;
            if args.categories.is_empty() {
                return Err(invalid("--categories is required in pseudo mode"));
            }
            let cam = read_cam(cam_path)?.normalize_max();
            let pairs = build_neighbors(cam.height(), cam.width(), args.gamma)?;
            pseudo_affinity_labels(&cam, &args.categories, args.fg_thresh, args.bg_thresh, &pairs)?
        }
    };
    let labels = match (&args.boundary, args.filter_boundary) {
        (Some(path), true) => filter_pairs_nbd(&labels, &binarize_boundary(&read_boundary(path)?, args.tau)?)?,
        _ => labels,
    };
    write_pair_labels(&args.out, &labels)?;
    let positive = labels.labels().iter().filter(|l| l.value() == Some(true)).count();
    print_json(&json!({
        "pairs": labels.labels().len(),
        "defined": labels.defined_count(),
        "positive": positive,
        "negative": labels.defined_count() - positive,
    }))
}

fn eval_boundary(args: &EvalBoundaryArgs) -> Result<()> {
    let mut total = BinaryCounts::default();
    for (id, pred_path) in npy_files(&args.pred)? {
        let prob = read_boundary(&pred_path)?;
        let pred = binarize_boundary(&prob, args.tau)?;
        let raw = read_u8_2d(args.gt.join(format!("{id}.npy")))?;
        let ignore = raw.mapv(|v| v == IGNORE_LABEL);
        let gt: Array2<bool> = match args.gt_kind {
            GtKind::Boundary => raw.mapv(|v| v != 0 && v != IGNORE_LABEL),
            GtKind::Seg => derive_gt_boundary(raw.view(), args.radius)?,
        };
        let counts = binary_counts(pred.as_array().view(), gt.view(), Some(ignore.view()))
            .with_context(|| format!("sample {id}"))?;
        total += counts;
        print_json(&json!({ "id": id, "counts": counts, "metrics": counts.metrics() }))?;
    }
    print_json(&json!({ "aggregate": true, "counts": total, "metrics": total.metrics() }))
}

fn propagate_cmd(args: &PropagateArgs) -> Result<()> {
    let cam = read_cam(&args.cam)?;
    let features = FeatureMap::from_f32(read_f32_3d(&args.features)?.view());
    let boundary = read_boundary(&args.boundary)?;
    let grid = (cam.height(), cam.width());
    for (what, dim) in [
        ("feature map", (features.height(), features.width())),
        ("boundary map", boundary.dim()),
    ] {
        if dim != grid {
            return Err(Error::ShapeMismatch(format!("{what} is {dim:?}, CAM grid is {grid:?}")).into());
        }
    }
    let mask = binarize_boundary(&boundary, args.tau)?;
    let pairs = build_neighbors(grid.0, grid.1, args.gamma)?;
    let table = affinity_from_features(&features, &pairs)?;
    let params = WalkParams {
        beta: args.beta,
        iters: args.iters,
        stage2_iters: args.stage2_iters,
    };
    let revised = propagate(args.strategy, &table, &mask, &cam.normalize_max(), &params)?;
    create_parent(&args.out)?;
    write_tensor(&args.out, &revised.to_hwc().into())?;
    Ok(())
}

fn eval_miou(pred_dir: &Path, gt_dir: &Path, fold: usize) -> Result<()> {
    let split = CategorySplit::for_fold(fold)?;
    let mut cm = ConfusionMatrix::new(split.num_categories);
    for (id, pred_path) in npy_files(pred_dir)? {
        let pred = read_u8_2d(&pred_path)?;
        let gt = read_u8_2d(gt_dir.join(format!("{id}.npy")))?;
        cm.accumulate(pred.view(), gt.view())
            .with_context(|| format!("sample {id}"))?;
    }
    print_json(&miou_groups(&cm, &split)?)
}

fn run(config: &ConfigArgs, manifest: &Path, out: &Path) -> Result<()> {
    let cfg = config.resolve()?;
    let manifest = Manifest::from_path(manifest)?;
    let summary = run_pipeline(&cfg, &manifest, out)?;
    for f in &summary.failed {
        eprintln!("sample {} failed: {}", f.id, f.error);
    }
    print_json(&summary)?;
    if summary.all_failed() {
        anyhow::bail!("every sample failed");
    }
    Ok(())
}

fn sweep(config: &ConfigArgs, manifest: &Path, taus: &[f64], out: Option<&Path>) -> Result<()> {
    let cfg = config.resolve()?;
    let manifest = Manifest::from_path(manifest)?;
    let rows = tau_sweep(&cfg, &manifest, taus)?;
    for row in &rows {
        print_json(row)?;
    }
    if let Some(path) = out {
        create_parent(path)?;
        write_json(path, &rows)?;
    }
    Ok(())
}
