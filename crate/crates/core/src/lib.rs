//! Barcode detection by semantic segmentation.
//!
//! A compact dilated/separable convolutional network predicts, for every
//! 4x4 pixel block, the probability that it belongs to a barcode plus a
//! distribution over barcode types. Connected regions of the thresholded
//! map become minimum-area rotated rectangles, which are the detections.
//!
//! Modules:
//!
//! - [`tensor`]: NCHW tensors, convolution and activations with exact gradients.
//! - [`network`]: the ten-layer architecture, forward/backward, weight files.
//! - [`loss`]: weighted positive/negative/hard-negative BCE plus masked type CE.
//! - [`raster`]: grayscale planes and resampling helpers.
//! - [`augment`]: the stochastic training augmentation pipeline.
//! - [`data`]: synthetic barcode scenes, PGM/manifest I/O, superpixel targets.
//! - [`postprocess`]: components, rotating calipers, detections.
//! - [`metrics`]: Jaccard, detection rate, object precision/recall, type accuracy.
//! - [`trainer`]: batching, Adam, two-phase schedule, checkpoints.
//! - [`pipeline`]: image-in, detections-out inference and dataset evaluation.

pub mod augment;
pub mod data;
pub mod error;
pub mod loss;
pub mod metrics;
pub mod network;
pub mod pipeline;
pub mod postprocess;
pub mod raster;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use network::{Network, NetworkConfig, SegmentationMap};
pub use tensor::{Shape, Tensor};
