//! Non-neural core of a power-line cable and pylon detector.
//!
//! The crate is organised along the data flow of training and deployment:
//!
//! 1. [`annotations`] parses cable polylines, pylon boxes and exclusion boxes
//!    and rasterizes them into full-resolution object masks.
//! 2. [`targets`] turns object masks into clamped, normalized distance masks
//!    at the coarse network-output resolution.
//! 3. [`losses`] evaluates the frequency-weighted distance regression loss and
//!    the windowed maximin connectivity term, with analytic subgradients.
//! 4. [`metrics`] scores binarized predictions with exact and relaxed
//!    (1-pixel tolerant) metrics and aggregates them across folds.
//! 5. [`sampler`] draws object-centred training patches with jitter.
//! 6. [`pipeline`] simulates the onboard split / stitch / warp / fuse loop.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod annotations;
pub mod error;
pub mod grid;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod pipeline;
pub mod sampler;
pub mod targets;

pub use annotations::{AnnotationSet, BBox, Dataset, ImageMeta, Point, Polyline};
pub use error::{Error, Result};
pub use grid::{BinaryMask, ClassPair, DistanceMask, Grid, ObjectClass};
pub use losses::{LossConfig, LossValue};
pub use metrics::{ConfusionCounts, FoldAssignment, MetricReport};
pub use pipeline::{FlowField, PipelineConfig, PipelineState};
pub use sampler::{Patch, SampleSpec};

/// Default clamping distance in input pixels.
pub const DEFAULT_D_MAX: u32 = 128;
