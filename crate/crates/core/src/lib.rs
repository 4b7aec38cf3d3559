//! Per-label level-of-detail selection for semantically decomposed
//! Gaussian splatting scenes.
//!
//! Modules follow the data flow: [`splat_io`] reads and writes checkpoint
//! catalogs, [`camera`] and [`semantics`] attach labels to SfM points,
//! [`renderer`] rasterizes splats, [`metrics`] measures masked quality,
//! [`lod`] fits distance-quality curves and picks checkpoints, [`synth`]
//! builds deterministic test scenes and [`pipeline`] drives the CLI.

pub mod camera;
pub mod error;
pub mod lod;
pub mod metrics;
pub mod pipeline;
mod ply;
pub mod renderer;
pub mod semantics;
pub mod splat_io;
pub mod synth;

pub use error::{Error, Result};

/// Semantic class id. Values below [`UNLABELED`] are real labels.
pub type LabelId = u8;

/// Mask and point value for "no label".
pub const UNLABELED: LabelId = 255;
