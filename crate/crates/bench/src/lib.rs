//! Shared inputs for the benchmarks.

use retab_core::affinity::{affinity_from_features, build_neighbors, PairAffinityTable};
use retab_core::synthetic::{random_features, random_instance};
use retab_core::{FeatureMap, RegionMask, ResponseStack};

/// Grid sides the benchmarks sweep over.
pub const SIDES: [usize; 3] = [16, 32, 64];
pub const CHANNELS: usize = 3;
pub const FEATURE_DEPTH: usize = 16;

/// One propagation problem on a `side x side` grid with the default radius.
pub struct Case {
    pub features: FeatureMap,
    pub table: PairAffinityTable,
    pub mask: RegionMask,
    pub responses: ResponseStack,
}

pub fn case(side: usize, gamma: f64) -> Case {
    let inst = random_instance(side as u64, side, side, gamma, CHANNELS).expect("valid grid");
    let features = random_features(side as u64, side, side, FEATURE_DEPTH);
    let pairs = build_neighbors(side, side, gamma).expect("valid grid");
    let table = affinity_from_features(&features, &pairs).expect("matching grid");
    Case {
        features,
        table,
        mask: inst.mask,
        responses: inst.responses,
    }
}
