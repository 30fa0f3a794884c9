//! Reverse-mode automatic differentiation over dense tensors.
//!
//! The operator set is exactly what the warping and photometric networks
//! need: 2-D convolution and its transpose, bilinear grid sampling,
//! elementwise arithmetic and reductions, plus the Adam optimizer.
//! Training runs in f32; every op is also instantiable at f64 for
//! finite-difference gradient checking.

mod adam;
pub mod gradcheck;
pub(crate) mod kernels;
mod ops;
mod tensor;

#[cfg(test)]
mod tests;

pub use adam::{adam_step, AdamConfig, Parameter};
pub use ops::{
    affine_grid, compose_grids, concat_batch, conv2d, conv_transpose2d, grid_from_image,
    grid_sample, grid_to_image, identity_grid, tps_control_points, tps_grid, tps_kernel,
    TPS_CONTROL_POINTS, TPS_PARAMS_PER_DIM,
};
pub use tensor::{backward, no_grad, NoGradGuard, Scalar, Tensor};
