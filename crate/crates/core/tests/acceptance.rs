//! Acceptance checks, one PASS/FAIL/SKIP line per criterion.
//!
//! Criterion 10 needs the VOC trainaug image-label manifest
//! (`{"samples": {"<id>": [categories]}}`); point `RETAB_VOC_MANIFEST` at it.

use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use ndarray::{array, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use retab_core::affinity::{
    affinity_from_features, build_neighbors, eval_affinity, filter_pairs_nbd, gt_affinity_labels, PairAffinityTable,
    PairLabel, PairLabels,
};
use retab_core::boundary::{boundary_loss, eval_binary};
use retab_core::grid::{BoundaryProbMap, FeatureMap, RegionMask};
use retab_core::metrics::{miou_groups, ConfusionMatrix};
use retab_core::propagation::{
    btp_stages, build_boundary_internal_matrix, build_full_matrix, build_stage1_matrix, build_stage2_matrix,
    dense_oracle_walk, propagate, random_walk, to_transition, SparseTransitionMatrix, Strategy, WalkParams,
};
use retab_core::splits::{extended_fold, fold_categories, CategorySplit, ExtendedFold, LabelManifest};
use retab_core::synthetic::{evaluate_fixture, planted_two_region, random_instance};

type Check = Result<String, String>;
type Criterion = (u32, &'static str, Duration, fn() -> Check);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if $cond {
        } else {
            return Err(format!($($msg)+));
        }
    };
}

fn unit_row(t: &SparseTransitionMatrix, i: usize) -> bool {
    t.row(i) == (&[i as u32][..], &[1.0][..])
}

fn c1_folds() -> Check {
    // base/novel marks per category index 0..=20, one row per basic fold
    let table = [
        "bnnnnnbbbbbbbbbbbbbbb",
        "bbbbbbnnnnnbbbbbbbbbb",
        "bbbbbbbbbbbnnnnnbbbbb",
        "bbbbbbbbbbbbbbbbnnnnn",
    ];
    for (fold, row) in table.iter().enumerate() {
        let split = fold_categories(fold, 20).map_err(|e| e.to_string())?;
        for (c, mark) in row.chars().enumerate() {
            let novel = split.is_novel(c as u8);
            ensure!(novel == (mark == 'n'), "fold {fold} category {c}: novel={novel}");
            ensure!(
                split.is_base(c as u8) != novel,
                "fold {fold} category {c} in both or neither"
            );
        }
    }
    let f4 = extended_fold(ExtendedFold::Fold4);
    let f5 = extended_fold(ExtendedFold::Fold5);
    ensure!(
        f4.novel() == (1..=10).collect::<Vec<u8>>(),
        "fold 4 novel {:?}",
        f4.novel()
    );
    ensure!(
        f5.novel() == (1..=15).collect::<Vec<u8>>(),
        "fold 5 novel {:?}",
        f5.novel()
    );
    Ok("folds 0-3 match the split table; folds 4/5 novel = 1..10 / 1..15".into())
}

fn c2_structure() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for case in 0..200 {
        let gamma = rng.gen_range(1.0..4.0);
        let inst = random_instance(rng.gen(), 8, 8, gamma, 1).map_err(|e| e.to_string())?;
        let (table, mask) = (&inst.table, &inst.mask);
        let full = build_full_matrix(table);
        let a1 = build_stage1_matrix(table, mask).map_err(|e| e.to_string())?;
        let a2 = build_stage2_matrix(table, mask).map_err(|e| e.to_string())?;
        ensure!(a1.is_symmetric(), "case {case}: stage-1 matrix not symmetric");
        for (i, j, v) in a1.triplets() {
            if i == j {
                ensure!(v == 1.0, "case {case}: stage-1 diagonal {v}");
            } else {
                ensure!(
                    !mask.is_boundary(i) && !mask.is_boundary(j),
                    "case {case}: stage-1 entry ({i},{j}) touches the boundary"
                );
                ensure!(v == full.get(i, j), "case {case}: stage-1 value changed");
            }
        }
        for (i, j, v) in a2.triplets() {
            if i != j {
                ensure!(
                    mask.is_boundary(i),
                    "case {case}: stage-2 entry ({i},{j}) flows into non-boundary {i}"
                );
                ensure!(v == full.get(i, j), "case {case}: stage-2 value changed");
            }
        }
        // stage 2 keeps every full-matrix entry whose destination is boundary
        for (i, j, v) in full.triplets() {
            if mask.is_boundary(i) {
                ensure!(a2.get(i, j) == v, "case {case}: stage-2 dropped ({i},{j})");
            }
        }
        for beta in [1.0, 8.0] {
            let t1 = to_transition(&a1, beta).map_err(|e| e.to_string())?;
            let t2 = to_transition(&a2, beta).map_err(|e| e.to_string())?;
            for i in 0..64 {
                if mask.is_boundary(i) {
                    ensure!(unit_row(&t1, i), "case {case}: stage-1 row {i} is not a unit vector");
                } else {
                    ensure!(unit_row(&t2, i), "case {case}: stage-2 row {i} is not a unit vector");
                }
            }
        }
    }
    Ok("200 random 8x8 grids".into())
}

fn c3_row_stochastic() -> Check {
    let mut worst: f64 = 0.0;
    for seed in 0..60u64 {
        let inst = random_instance(seed, 4 + (seed % 9) as usize, 5 + (seed % 7) as usize, 2.5, 1)
            .map_err(|e| e.to_string())?;
        let mats = [
            build_full_matrix(&inst.table),
            build_stage1_matrix(&inst.table, &inst.mask).unwrap(),
            build_stage2_matrix(&inst.table, &inst.mask).unwrap(),
            build_boundary_internal_matrix(&inst.table, &inst.mask).unwrap(),
        ];
        for a in &mats {
            for beta in [1.0, 2.0, 8.0] {
                let t = to_transition(a, beta).map_err(|e| e.to_string())?;
                ensure!(t.triplets().all(|(_, _, v)| v >= 0.0), "negative transition entry");
                for s in t.row_sums() {
                    worst = worst.max((s - 1.0).abs());
                }
            }
        }
    }
    ensure!(worst <= 1e-9, "max |row sum - 1| = {worst:e}");
    Ok(format!("max |row sum - 1| = {worst:.1e}"))
}

fn c4_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let h = rng.gen_range(1..=16);
        let w = rng.gen_range(1..=256 / h).min(16);
        let inst = random_instance(rng.gen(), h, w, rng.gen_range(1.0..5.0), 2).map_err(|e| e.to_string())?;
        let a = match case % 4 {
            0 => build_full_matrix(&inst.table),
            1 => build_stage1_matrix(&inst.table, &inst.mask).unwrap(),
            2 => build_stage2_matrix(&inst.table, &inst.mask).unwrap(),
            _ => build_boundary_internal_matrix(&inst.table, &inst.mask).unwrap(),
        };
        let beta = [1.0, 2.0, 8.0][case % 3];
        let iters = rng.gen_range(0..=16);
        let t = to_transition(&a, beta).map_err(|e| e.to_string())?;
        let sparse = random_walk(&t, &inst.responses, iters).map_err(|e| e.to_string())?;
        let dense = dense_oracle_walk(t.to_dense().view(), &inst.responses, iters).map_err(|e| e.to_string())?;
        for (x, y) in sparse.as_array().iter().zip(dense.as_array().iter()) {
            worst = worst.max((x - y).abs());
        }
    }
    ensure!(worst <= 1e-10, "max deviation {worst:e}");
    Ok(format!("100 instances, max deviation {worst:.1e}"))
}

fn c5_degenerate() -> Check {
    let params = WalkParams::default();
    for seed in 0..20u64 {
        let inst = random_instance(seed, 7, 9, 3.0, 3).map_err(|e| e.to_string())?;
        let (h, w) = inst.mask.dim();
        let empty = RegionMask::empty(h, w);
        let one = propagate(Strategy::OneStage, &inst.table, &empty, &inst.responses, &params).unwrap();
        let btp = propagate(Strategy::Btp, &inst.table, &empty, &inst.responses, &params).unwrap();
        ensure!(
            one.as_array()
                .iter()
                .zip(btp.as_array().iter())
                .all(|(a, b)| a.to_bits() == b.to_bits()),
            "seed {seed}: empty-boundary BTP differs from one-stage"
        );
        let (stage1, stage2) = btp_stages(&inst.table, &RegionMask::full(h, w), &inst.responses, &params).unwrap();
        ensure!(
            stage1
                .as_array()
                .iter()
                .zip(inst.responses.as_array().iter())
                .all(|(a, b)| a.to_bits() == b.to_bits()),
            "seed {seed}: all-boundary stage 1 is not the identity"
        );
        ensure!(
            stage2 == one,
            "seed {seed}: all-boundary stage 2 differs from one-stage"
        );
    }
    Ok("20 random instances, bitwise".into())
}

fn c6_fixture() -> Check {
    let f = planted_two_region();
    let params = WalkParams::default();
    let mut rows = Vec::new();
    for s in [Strategy::Btp, Strategy::OneStage, Strategy::NbdBd] {
        let (labels, report) = evaluate_fixture(&f, s, &params).map_err(|e| e.to_string())?;
        let correct = labels.iter().zip(f.gt.iter()).filter(|(a, b)| a == b).count();
        rows.push((report.all.ok_or("undefined mIoU")?, correct));
    }
    let [(btp, btp_ok), (one, one_ok), (nbd, _)] = rows[..] else {
        unreachable!()
    };
    ensure!(
        btp >= one && one >= nbd,
        "ordering violated: btp {btp} one-stage {one} nbd-bd {nbd}"
    );
    ensure!(btp_ok > one_ok, "BTP correct pixels {btp_ok} vs one-stage {one_ok}");
    Ok(format!(
        "mIoU btp {btp:.3} >= one-stage {one:.3} >= nbd-bd {nbd:.3}; btp fixes {} more pixels",
        btp_ok - one_ok
    ))
}

fn c7_metrics() -> Check {
    let split = CategorySplit::from_novel(0, 3, &[2]).map_err(|e| e.to_string())?;
    let mut cm = ConfusionMatrix::new(3);
    cm.set(0, 0, 5);
    cm.set(1, 1, 2);
    cm.set(2, 1, 2);
    let r = miou_groups(&cm, &split).map_err(|e| e.to_string())?;
    ensure!(
        (r.all, r.base, r.novel) == (Some(0.5), Some(0.75), Some(0.0)),
        "miou groups {:?}",
        (r.all, r.base, r.novel)
    );

    let pred = array![[true, true, false, false]];
    let gt = array![[true, false, true, false]];
    let b = eval_binary(pred.view(), gt.view(), None).map_err(|e| e.to_string())?;
    ensure!(
        (b.accuracy, b.precision, b.recall, b.f1) == (0.5, 0.5, 0.5, 0.5),
        "eval_binary {b:?}"
    );

    let pairs = build_neighbors(1, 5, 1.5).map_err(|e| e.to_string())?;
    let labels = PairLabels::new(
        Arc::clone(&pairs),
        vec![
            PairLabel::Positive,
            PairLabel::Negative,
            PairLabel::Positive,
            PairLabel::Negative,
        ],
    )
    .unwrap();
    let table = PairAffinityTable::new(Arc::clone(&pairs), vec![0.5, 0.7, 0.49, 0.1]).unwrap();
    let m = eval_affinity(&table, &labels).map_err(|e| e.to_string())?;
    ensure!(
        (m.accuracy, m.precision, m.recall, m.f1) == (0.5, 0.5, 0.5, 0.5),
        "eval_affinity {m:?}"
    );

    let two = build_neighbors(1, 2, 5.0).unwrap();
    let feat = |a: &[f64], b: &[f64]| {
        let d = a.len();
        FeatureMap::new(Array3::from_shape_vec((1, 2, d), [a, b].concat()).unwrap())
    };
    let e1 = affinity_from_features(&feat(&[0.0], &[1.0]), &two).unwrap().affinity()[0];
    let e4 = affinity_from_features(&feat(&[1.0, 2.0], &[3.0, 0.0]), &two)
        .unwrap()
        .affinity()[0];
    ensure!((e1 - (-1.0f64).exp()).abs() <= 1e-12, "e^-1 case gave {e1}");
    ensure!((e4 - (-4.0f64).exp()).abs() <= 1e-12, "e^-4 case gave {e4}");
    Ok("mIoU (0.5, 0.75, 0.0); binary and affinity counts; e^-1, e^-4".into())
}

fn c8_boundary_loss() -> Check {
    // column 0 background, columns 1-2 base category 6 (fold 0); boundary on column 1
    let seg = array![[0u8, 6, 6], [0, 6, 6], [0, 6, 6]];
    let gt_bd = Array2::from_shape_fn((3, 3), |(_, x)| x == 1);
    let split = fold_categories(0, 20).unwrap();
    let uniform = BoundaryProbMap::new(Array2::from_elem((3, 3), 0.5)).unwrap();
    let l = boundary_loss(&uniform, gt_bd.view(), seg.view(), &split, 1e-7).map_err(|e| e.to_string())?;
    ensure!((l - 2.0 * 2f64.ln()).abs() <= 1e-12, "uniform loss {l}");
    let perfect = BoundaryProbMap::new(gt_bd.mapv(|b| if b { 1.0 } else { 0.0 })).unwrap();
    let p = boundary_loss(&perfect, gt_bd.view(), seg.view(), &split, 1e-7).map_err(|e| e.to_string())?;
    ensure!(p < 1e-6, "perfect-prediction loss {p}");
    Ok(format!("uniform {l:.15} (2 ln 2), perfect {p:.1e}"))
}

fn c9_filter() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for case in 0..100 {
        let (h, w) = (rng.gen_range(1..10), rng.gen_range(1..10));
        let pairs = build_neighbors(h, w, rng.gen_range(1.0..4.0)).unwrap();
        let seg = Array2::from_shape_simple_fn((h, w), || {
            let c: u8 = rng.gen_range(0..4);
            if c == 3 {
                255
            } else {
                c
            }
        });
        let labels = gt_affinity_labels(seg.view(), &pairs).map_err(|e| e.to_string())?;
        let density: f64 = rng.gen();
        let mask = RegionMask::from_flat(h, w, (0..h * w).map(|_| rng.gen_bool(density)).collect()).unwrap();
        let once = filter_pairs_nbd(&labels, &mask).map_err(|e| e.to_string())?;
        for (k, (before, after)) in labels.labels().iter().zip(once.labels()).enumerate() {
            ensure!(
                !after.is_defined() || after == before,
                "case {case}: pair {k} defined after filtering but not before"
            );
        }
        let twice = filter_pairs_nbd(&once, &mask).map_err(|e| e.to_string())?;
        ensure!(twice == once, "case {case}: filtering not idempotent");
    }
    Ok("100 random tables and masks".into())
}

fn c10_voc_counts() -> Option<Check> {
    let path = std::env::var_os("RETAB_VOC_MANIFEST")?;
    Some((|| {
        let manifest = LabelManifest::from_path(&path).map_err(|e| e.to_string())?;
        let expected = [(7746, 2836), (6978, 3604), (5040, 5542), (8437, 2145)];
        let mut got = Vec::new();
        for (fold, &(nb, nn)) in expected.iter().enumerate() {
            let p = manifest
                .partition(&fold_categories(fold, 20).unwrap())
                .map_err(|e| e.to_string())?;
            ensure!(
                (p.base.len(), p.novel.len()) == (nb, nn),
                "fold {fold}: {} base / {} novel, expected {nb} / {nn}",
                p.base.len(),
                p.novel.len()
            );
            got.push(format!("{nb}/{nn}"));
        }
        Ok(format!("trainaug base/novel {}", got.join(", ")))
    })())
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        (1, "fold correctness", Duration::from_secs(1), c1_folds),
        (2, "stage matrix structure", Duration::from_secs(10), c2_structure),
        (3, "row stochasticity", Duration::from_secs(5), c3_row_stochastic),
        (4, "sparse/dense oracle equivalence", Duration::from_secs(30), c4_oracle),
        (5, "degenerate BTP identities", Duration::from_secs(5), c5_degenerate),
        (6, "directional fixture", Duration::from_secs(5), c6_fixture),
        (7, "metric fixtures", Duration::from_secs(1), c7_metrics),
        (8, "boundary loss closed form", Duration::from_secs(1), c8_boundary_loss),
        (9, "filter containment", Duration::from_secs(5), c9_filter),
    ];
    let mut failures = 0;
    for (id, name, limit, check) in criteria {
        let start = Instant::now();
        let result = check();
        let took = start.elapsed();
        let result = result.and_then(|msg| {
            if took <= limit {
                Ok(msg)
            } else {
                Err(format!("took {took:.2?}, limit {limit:?}"))
            }
        });
        match result {
            Ok(msg) => println!("criterion {id} ({name}): PASS [{took:.2?}] {msg}"),
            Err(msg) => {
                failures += 1;
                println!("criterion {id} ({name}): FAIL [{took:.2?}] {msg}");
            }
        }
    }
    match c10_voc_counts() {
        None => println!("criterion 10 (VOC sample partition): SKIP (RETAB_VOC_MANIFEST not set)"),
        Some(Ok(msg)) => println!("criterion 10 (VOC sample partition): PASS {msg}"),
        Some(Err(msg)) => {
            failures += 1;
            println!("criterion 10 (VOC sample partition): FAIL {msg}");
        }
    }
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
