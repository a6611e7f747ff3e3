//! Camera-controlled motion synthesis: pinhole geometry, synthetic scenes and
//! trajectories, analytic optical flow, flow image codec, cycle-consistency
//! filtering, flow-matching generators and evaluation metrics.

pub mod camera;
pub mod codec;
pub mod dataset;
pub mod error;
pub mod estimate;
pub mod filter;
pub mod flow;
pub mod fm;
pub mod io;
pub mod manifest;
pub mod metrics;
pub mod pipeline;
pub mod render;
pub mod scene;
pub mod seed;
pub mod stats;
pub mod trajectory;

pub use error::{Error, ErrorClass, Result};
