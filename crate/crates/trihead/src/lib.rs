//! Three-head momentum-contrast pretraining on a single device.
//!
//! The library trains a query/key encoder pair with a FIFO feature queue of
//! negatives and three parallel contrastive heads:
//!
//! * a global head over whole views,
//! * a mosaic head over 2x2 compositions of four views, queried jointly
//!   against the four member views,
//! * a cell head over a 3x3 grid of matched sub-regions carved out of the
//!   overlap of two coordinate-tracked crops.
//!
//! Crop geometry is tracked end to end so that cell `(i, j)` of the query
//! view and cell `(i, j)` of the key view always back-project to the same
//! rectangle of the original image. Region features are read off the
//! feature map with an exact integral of the bilinearly interpolated
//! surface, which keeps the whole pipeline differentiable and cheap to
//! verify against finite differences.
//!
//! All layers are generic over [`Scalar`] so the training path runs in
//! `f32` while gradient checks run in `f64`.

pub mod augment;
pub mod checkpoint;
pub mod config;
pub mod data;
mod error;
pub mod eval;
pub mod geometry;
pub mod img;
pub mod loss;
pub mod memory;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod pooling;
mod scalar;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;
