//! Sparse affinity matrices, transition matrices and random-walk propagation
//! of response maps, with the one-stage, nbd+bd and boundary-aware two-stage
//! (BTP) strategies.
//!
//! Stage 1 of BTP walks only between non-boundary pixels, so boundary pixels
//! act as isolation belts. In stage 2 only boundary pixels update, pulling
//! from all their neighbours, so responses flow into the boundary but never
//! out of it.

mod oracle;
mod sparse;

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::affinity::PairAffinityTable;
use crate::error::{Error, Result};
use crate::grid::{check_grid, RegionMask, ResponseStack};
use sparse::Csr;

pub use oracle::{dense_oracle_walk, ORACLE_MAX_PIXELS};

pub const DEFAULT_BETA: f64 = 8.0;
pub const DEFAULT_ITERS: usize = 16;

/// Affinity matrix with unit diagonal; off-diagonal entries lie on neighbour pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseAffinityMatrix(Csr);

/// Row-stochastic matrix used by the walk.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseTransitionMatrix(Csr);

macro_rules! csr_accessors {
    ($t:ty) => {
        impl $t {
            /// Number of pixels (rows).
            pub fn n(&self) -> usize {
                self.0.n
            }

            pub fn nnz(&self) -> usize {
                self.0.nnz()
            }

            pub fn get(&self, i: usize, j: usize) -> f64 {
                self.0.get(i, j)
            }

            /// Column indices and values of row `i`, columns ascending.
            pub fn row(&self, i: usize) -> (&[u32], &[f64]) {
                self.0.row(i)
            }

            pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
                self.0.triplets()
            }

            pub fn to_dense(&self) -> Array2<f64> {
                self.0.to_dense()
            }

            pub fn row_sums(&self) -> Vec<f64> {
                (0..self.0.n).map(|i| self.0.row(i).1.iter().sum()).collect()
            }
        }
    };
}

csr_accessors!(SparseAffinityMatrix);
csr_accessors!(SparseTransitionMatrix);

impl SparseAffinityMatrix {
    pub fn is_symmetric(&self) -> bool {
        self.triplets().all(|(i, j, v)| self.get(j, i) == v)
    }
}

fn build_with(table: &PairAffinityTable, keep: impl Fn(usize, usize) -> bool) -> SparseAffinityMatrix {
    let n = table.pairs().num_pixels();
    let mut triplets: Vec<(u32, u32, f64)> = (0..n as u32).map(|i| (i, i, 1.0)).collect();
    for (i, j, a) in table.iter() {
        if keep(i, j) {
            triplets.push((i as u32, j as u32, a));
        }
        if keep(j, i) {
            triplets.push((j as u32, i as u32, a));
        }
    }
    SparseAffinityMatrix(Csr::from_triplets(n, triplets))
}

fn check_mask(table: &PairAffinityTable, mask: &RegionMask) -> Result<()> {
    let p = table.pairs();
    check_grid("region mask", mask.dim(), (p.height(), p.width()))
}

/// Symmetric matrix over all neighbour pairs.
pub fn build_full_matrix(table: &PairAffinityTable) -> SparseAffinityMatrix {
    build_with(table, |_, _| true)
}

/// Off-diagonals only between two non-boundary pixels.
pub fn build_stage1_matrix(table: &PairAffinityTable, mask: &RegionMask) -> Result<SparseAffinityMatrix> {
    check_mask(table, mask)?;
    Ok(build_with(table, |i, j| !mask.is_boundary(i) && !mask.is_boundary(j)))
}

/// One-way matrix: flow from any pixel into a boundary destination.
///
/// Rows index the receiving pixel (the walk computes `m'_i = sum_j T_ij m_j`),
/// so off-diagonal entries sit only in boundary rows and every non-boundary
/// row is the unit vector.
pub fn build_stage2_matrix(table: &PairAffinityTable, mask: &RegionMask) -> Result<SparseAffinityMatrix> {
    check_mask(table, mask)?;
    Ok(build_with(table, |dst, _| mask.is_boundary(dst)))
}

/// Off-diagonals only between two boundary pixels.
pub fn build_boundary_internal_matrix(table: &PairAffinityTable, mask: &RegionMask) -> Result<SparseAffinityMatrix> {
    check_mask(table, mask)?;
    Ok(build_with(table, |i, j| mask.is_boundary(i) && mask.is_boundary(j)))
}

/// `T_ij = A_ij^beta / sum_k A_ik^beta`.
pub fn to_transition(a: &SparseAffinityMatrix, beta: f64) -> Result<SparseTransitionMatrix> {
    if !(beta >= 1.0 && beta.is_finite()) {
        return Err(Error::arg(format!("beta must be >= 1, got {beta}")));
    }
    let mut csr = a.0.clone();
    for i in 0..csr.n {
        let (lo, hi) = (csr.indptr[i], csr.indptr[i + 1]);
        let row = &mut csr.values[lo..hi];
        for v in row.iter_mut() {
            *v = v.powf(beta);
        }
        let sum: f64 = row.iter().sum();
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    Ok(SparseTransitionMatrix(csr))
}

/// Applies `m <- T m` to every channel `iters` times.
pub fn random_walk(t: &SparseTransitionMatrix, responses: &ResponseStack, iters: usize) -> Result<ResponseStack> {
    let n = responses.num_pixels();
    if t.n() != n {
        return Err(Error::arg(format!(
            "transition matrix has {} rows, responses have {n} pixels",
            t.n()
        )));
    }
    let mut data = responses.as_array().as_standard_layout().into_owned();
    if iters > 0 && n > 0 {
        data.as_slice_mut()
            .expect("standard layout")
            .par_chunks_mut(n)
            .for_each(|channel| {
                let mut scratch = vec![0.0; n];
                for _ in 0..iters {
                    t.0.matvec(channel, &mut scratch);
                    channel.copy_from_slice(&scratch);
                }
            });
    }
    Ok(ResponseStack::new(data))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    OneStage,
    NbdBd,
    Btp,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::OneStage, Strategy::NbdBd, Strategy::Btp];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::OneStage => "one-stage",
            Strategy::NbdBd => "nbd-bd",
            Strategy::Btp => "btp",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('_', "-").as_str() {
            "one-stage" => Ok(Strategy::OneStage),
            "nbd-bd" => Ok(Strategy::NbdBd),
            "btp" => Ok(Strategy::Btp),
            _ => Err(Error::arg(format!(
                "unknown strategy {s:?} (expected one-stage, nbd-bd or btp)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WalkParams {
    pub beta: f64,
    pub iters: usize,
    /// Second-stage iteration count for BTP; `None` reuses `iters`.
    pub stage2_iters: Option<usize>,
}

impl Default for WalkParams {
    fn default() -> Self {
        Self {
            beta: DEFAULT_BETA,
            iters: DEFAULT_ITERS,
            stage2_iters: None,
        }
    }
}

impl WalkParams {
    pub fn second_stage_iters(&self) -> usize {
        self.stage2_iters.unwrap_or(self.iters)
    }
}

/// Both BTP stage outputs, in order.
pub fn btp_stages(
    table: &PairAffinityTable,
    mask: &RegionMask,
    responses: &ResponseStack,
    params: &WalkParams,
) -> Result<(ResponseStack, ResponseStack)> {
    let t1 = to_transition(&build_stage1_matrix(table, mask)?, params.beta)?;
    let t2 = to_transition(&build_stage2_matrix(table, mask)?, params.beta)?;
    let stage1 = random_walk(&t1, responses, params.iters)?;
    let stage2 = random_walk(&t2, &stage1, params.second_stage_iters())?;
    Ok((stage1, stage2))
}

pub fn propagate(
    strategy: Strategy,
    table: &PairAffinityTable,
    mask: &RegionMask,
    responses: &ResponseStack,
    params: &WalkParams,
) -> Result<ResponseStack> {
    check_mask(table, mask)?;
    check_grid("response stack", (responses.height(), responses.width()), mask.dim())?;
    match strategy {
        Strategy::OneStage => {
            let t = to_transition(&build_full_matrix(table), params.beta)?;
            random_walk(&t, responses, params.iters)
        }
        Strategy::Btp => btp_stages(table, mask, responses, params).map(|(_, s2)| s2),
        Strategy::NbdBd => {
            let t_nbd = to_transition(&build_stage1_matrix(table, mask)?, params.beta)?;
            let t_bd = to_transition(&build_boundary_internal_matrix(table, mask)?, params.beta)?;
            let inner = random_walk(&t_nbd, responses, params.iters)?;
            let belt = random_walk(&t_bd, responses, params.iters)?;
            let n = responses.num_pixels();
            let mut merged = inner.into_array();
            let belt = belt.into_array();
            let src = belt.as_slice().expect("standard layout");
            let dst = merged.as_slice_mut().expect("standard layout");
            for (k, v) in dst.iter_mut().enumerate() {
                if mask.is_boundary(k % n) {
                    *v = src[k];
                }
            }
            Ok(ResponseStack::new(merged))
        }
    }
}
