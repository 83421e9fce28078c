//! Frame-window feature fusion for video object detection.
//!
//! Backbone feature maps of `2n + 1` consecutive frames are merged by a
//! learned per-channel weighting over the frame axis before the center
//! heatmap head of a small center-keypoint detector. The crate carries
//! everything needed to exercise that mechanism end to end at desk scale:
//! a dense tensor type with hand-written backward passes, the fusion module
//! and its baselines, a compute-once feature cache, a toy detector, the
//! two-stage trainer, a seeded synthetic video generator, and mAP evaluation.

pub mod cli;
pub mod detector;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod trainer;
pub mod window;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::Tensor;
