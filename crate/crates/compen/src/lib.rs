//! End-to-end full projector compensation at desk scale.
//!
//! The crate bundles a small reverse-mode autodiff engine, the geometric
//! and photometric compensation networks, a procedural projector-camera
//! simulator, image metrics, and a benchmark harness. Everything runs on
//! the CPU and is deterministic for a fixed seed.

pub mod autodiff;
pub mod bench;
pub mod error;
pub mod imaging;
pub mod loss;
pub mod nn;
pub mod checkpoint;
pub mod photo;
pub mod pipeline;
pub mod sim;
pub mod warp;

pub use autodiff::{Parameter, Scalar, Tensor};
pub use imaging::{ImageRGB, Mask, Rect};
