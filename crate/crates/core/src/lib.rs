//! Object-detection benchmarking toolkit.
//!
//! Model-agnostic tooling around a detector: YOLO-format dataset ingestion and
//! distribution analysis, seeded label-consistent augmentation, detector
//! backends with staged timing, and mAP/precision/recall/confusion-matrix
//! evaluation with report rendering.
//!
//! Geometry and AP computation are generic over [`Scalar`] (`f32` or `f64`);
//! the rest of the crate works in `f64` through the aliases below.

pub mod augmentation;
pub mod backend;
pub mod cli;
pub mod dataset;
pub mod evaluation;
pub mod geometry;
pub mod num;
mod par;
pub mod report;
pub mod rng;

pub use geometry::{GeometryError, ImageDims};
pub use num::Scalar;

pub type NormBox = geometry::NormBox<f64>;
pub type AbsBox = geometry::AbsBox<f64>;
pub type Homography = geometry::Homography<f64>;

pub type NormBox32 = geometry::NormBox<f32>;
pub type AbsBox32 = geometry::AbsBox<f32>;
pub type Homography32 = geometry::Homography<f32>;
