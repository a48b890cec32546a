//! Dynamic tiling for small-object detection.
//!
//! Images are split into a fixed grid of base tiles. Detections that hug an
//! interior tile boundary are treated as possible fragments: the boundary
//! gets an extra tile centered on it, and whole re-detections from that tile
//! replace the fragments. The tile minimizer packs these extra tiles into
//! shared canvases to save forward passes, and an optional full-image pass
//! supplies large objects through a size filter.

// Config checks use `!(x >= 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod benchmark;
pub mod coco;
pub mod config;
pub mod detector;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod geometry;
pub mod minimizer;
pub mod pipeline;
pub mod rng;
pub mod scene;
pub mod tiler;

pub use config::RunConfig;
pub use detector::{
    ColorBlobDetector, CountingDetector, DetectRequest, DetectResponse, Detector, FileDetector, SimDetector,
    SimDetectorConfig, StdioDetector, TileImage, TtaDetector,
};
pub use error::{Error, Result};
pub use eval::{evaluate, EvalConfig, EvalResult};
pub use fusion::FusionConfig;
pub use geometry::{iou, BBox, Detection, GridConfig, TileId, TileSpec};
pub use minimizer::MinimizerConfig;
pub use pipeline::{run_dataset, run_image, ImageInput, PipelineConfig, RunReport, Strategy, StrategyKind};
pub use scene::{Scene, SceneConfig};
pub use tiler::TilerConfig;
