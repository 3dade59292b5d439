//! Small generated inputs for tests, examples and benchmarks.

use std::sync::Arc;

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::affinity::{affinity_from_features, build_neighbors, PairAffinityTable};
use crate::boundary::binarize_boundary;
use crate::error::Result;
use crate::grid::{BoundaryProbMap, FeatureMap, LabelMap, RegionMask, ResponseStack};
use crate::metrics::{miou_groups, ConfusionMatrix, MiouReport};
use crate::propagation::{propagate, Strategy, WalkParams};
use crate::pseudolabel::{pseudo_labels, DEFAULT_BG_ALPHA};
use crate::splits::CategorySplit;

/// One image: a single foreground object, its CAM, features and boundary map.
#[derive(Debug, Clone)]
pub struct PlantedFixture {
    pub gt: LabelMap,
    pub cam: ResponseStack,
    pub features: FeatureMap,
    pub boundary: BoundaryProbMap,
    pub categories: Vec<u8>,
    pub fold: usize,
    pub gamma: f64,
    pub tau: f64,
}

pub const PLANTED_CATEGORY: u8 = 6;
/// CAM value leaking onto the background side of the object edge.
pub const PLANTED_SPILL: f64 = 0.35;
/// Feature change between adjacent background columns.
pub const PLANTED_BG_STEP: f64 = 0.3;

/// 6x6 grid, object in columns 0-1 (category 6), background in columns 2-5.
///
/// The boundary ring covers the two columns either side of the edge. The CAM
/// fires on the object interior, misses the object-side edge column and
/// spills onto the background-side edge column. Features separate the two
/// regions cleanly; background features drift slowly from column to column.
pub fn planted_two_region() -> PlantedFixture {
    planted_two_region_with(PLANTED_SPILL, PLANTED_BG_STEP)
}

pub fn planted_two_region_with(spill: f64, bg_step: f64) -> PlantedFixture {
    let (h, w) = (6, 6);
    let object = |x: usize| x < 2;
    let gt = Array2::from_shape_fn((h, w), |(_, x)| if object(x) { PLANTED_CATEGORY } else { 0 });
    let cam = Array3::from_shape_fn((1, h, w), |(_, _, x)| match x {
        0 => 1.0,
        2 => spill,
        _ => 0.0,
    });
    let features = Array3::from_shape_fn((h, w, 2), |(_, x, d)| {
        if object(x) {
            0.0
        } else if d == 0 {
            4.0
        } else {
            bg_step * (x - 2) as f64
        }
    });
    let boundary = Array2::from_shape_fn((h, w), |(_, x)| if x == 1 || x == 2 { 0.9 } else { 0.1 });
    PlantedFixture {
        gt,
        cam: ResponseStack::new(cam),
        features: FeatureMap::new(features),
        boundary: BoundaryProbMap::new(boundary).expect("probabilities in range"),
        categories: vec![PLANTED_CATEGORY],
        fold: 1,
        gamma: 1.5,
        tau: 0.5,
    }
}

/// Label map and mIoU for one strategy on a fixture.
pub fn evaluate_fixture(
    fixture: &PlantedFixture,
    strategy: Strategy,
    params: &WalkParams,
) -> Result<(LabelMap, MiouReport)> {
    let (h, w) = fixture.gt.dim();
    let pairs = build_neighbors(h, w, fixture.gamma)?;
    let table = affinity_from_features(&fixture.features, &pairs)?;
    let mask = binarize_boundary(&fixture.boundary, fixture.tau)?;
    let revised = propagate(strategy, &table, &mask, &fixture.cam.normalize_max(), params)?;
    let labels = pseudo_labels(&revised, &fixture.categories, Some((h, w)), DEFAULT_BG_ALPHA)?;
    let split = CategorySplit::for_fold(fixture.fold)?;
    let mut cm = ConfusionMatrix::new(split.num_categories);
    cm.accumulate(labels.view(), fixture.gt.view())?;
    Ok((labels, miou_groups(&cm, &split)?))
}

/// Random propagation input: affinities in `[0.05, 1]`, a random boundary
/// mask and `channels` response maps in `[0, 1)`.
#[derive(Debug, Clone)]
pub struct RandomInstance {
    pub table: PairAffinityTable,
    pub mask: RegionMask,
    pub responses: ResponseStack,
}

pub fn random_instance(seed: u64, height: usize, width: usize, gamma: f64, channels: usize) -> Result<RandomInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs = build_neighbors(height, width, gamma)?;
    let affinity = (0..pairs.len()).map(|_| rng.gen_range(0.05..=1.0)).collect();
    let table = PairAffinityTable::new(Arc::clone(&pairs), affinity)?;
    let density: f64 = rng.gen_range(0.0..0.6);
    let flags = (0..height * width).map(|_| rng.gen_bool(density)).collect();
    let mask = RegionMask::from_flat(height, width, flags)?;
    let responses = ResponseStack::new(Array3::from_shape_simple_fn((channels, height, width), || rng.gen()));
    Ok(RandomInstance { table, mask, responses })
}

/// Random features with a few flat regions, for end-to-end smoke runs.
pub fn random_features(seed: u64, height: usize, width: usize, depth: usize) -> FeatureMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    FeatureMap::new(Array3::from_shape_simple_fn((height, width, depth), || {
        rng.gen_range(0.0..0.5)
    }))
}
