//! Progressive LiDAR adaptation for road detection.
//!
//! The pipeline turns raw LiDAR sweeps into altitude-difference images aligned
//! with the camera view, runs a small two-stream convolutional network that
//! fuses the LiDAR features into the visual stream through a learned
//! per-element adaptation, and scores road predictions with KITTI-style
//! confusion metrics. A deterministic scene generator provides paired
//! image/cloud/ground-truth bundles so the whole loop runs at desk scale.
//!
//! Module map:
//! - [`lidar_io`]: point-cloud and calibration parsing, 3D-to-2D projection.
//! - [`adt`]: altitude rasterization and the altitude-difference transform.
//! - [`autodiff`]: the reverse-mode f64 tensor engine the network runs on.
//! - [`net`]: the two-stream road-detection network and its trainer.
//! - [`eval`]: confusion-sweep metrics, average precision, birds-eye-view warp.
//! - [`synth`]: procedural scene and dataset generation.

pub mod adt;
pub mod autodiff;
pub mod eval;
pub mod imgio;
pub mod lidar_io;
pub mod net;
pub mod pipeline;
pub mod synth;
