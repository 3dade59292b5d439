//! Response expansion for weak-shot semantic segmentation: pixel affinities,
//! boundary-aware random-walk propagation of class activation maps, pseudo
//! label synthesis and evaluation.

pub mod affinity;
pub mod boundary;
pub mod error;
pub mod grid;
pub mod metrics;
pub mod pipeline;
pub mod propagation;
pub mod pseudolabel;
pub mod splits;
pub mod synthetic;
pub mod tensor_io;

pub use error::{Error, Result};
pub use grid::{BoundaryProbMap, FeatureMap, LabelMap, RegionMask, ResponseStack, IGNORE_LABEL};
pub use propagation::{Strategy, WalkParams};
pub use splits::CategorySplit;
