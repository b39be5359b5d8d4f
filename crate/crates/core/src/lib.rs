//! Stereo matching confidence toolkit.
//!
//! Builds census matching-cost volumes, aggregates them with cross-based
//! support windows or four-path semi-global matching, computes a catalog of
//! hand-crafted confidence measures, assembles feature stacks for learned
//! measures and evaluates confidence maps with sparsification curves.
//!
//! ```
//! use stereoconf::{pipeline, synth, evalauc, measures};
//!
//! let pair = synth::shifted_pair(64, 48, 4, 7);
//! let run = pipeline::match_pair(&pair.left, &pair.right, 16, &pipeline::PipelineParams::default(),
//!     pipeline::StereoAlgorithm::CensusSgm).unwrap();
//! let inputs = run.inputs().unwrap();
//! let id = "PKRN".parse().unwrap();
//! let conf = measures::compute_measure(&inputs, &measures::MeasureParams::default(), id).unwrap();
//! let curve = evalauc::sparsify(&conf.scores, &run.disparity, &pair.ground_truth, 3.0, 20).unwrap();
//! assert!(curve.auc() >= curve.optimal_auc() - 1.0 / 20.0);
//! ```

pub mod aggregate;
pub mod costvol;
pub mod curve;
pub mod dataio;
pub mod error;
pub mod evalauc;
pub mod features;
pub mod grid;
pub mod measures;
mod par;
pub mod pipeline;
pub mod synth;

pub use costvol::{CostVolume, SelfCostVolume};
pub use error::{Error, Result};
pub use grid::{DisparityMap, GrayImage, Grid, RealMap};
pub use measures::{ConfidenceMap, MeasureId, MeasureKind, MeasureParams};
