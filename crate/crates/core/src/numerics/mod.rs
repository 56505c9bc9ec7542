//! Dense linear algebra, layers with explicit backward passes, Adam, and a
//! finite-difference gradient checker.

mod adam;
pub mod archive;
pub mod gradcheck;
mod layers;
mod matrix;
pub mod params;
pub mod rng;

pub use adam::{adam_step, AdamConfig, OptimizerState};
pub use archive::Archive;
pub use gradcheck::{grad_check, GradCheckReport};
pub use layers::{
    sigmoid, softplus, Activation, BatchNorm, BnCache, Linear, MlpCache, MlpParams, BN_EPS,
    BN_MOMENTUM,
};
pub use matrix::{
    affine, softmax_inplace, softmax_rows, softmax_rows_backward, softmax_rows_inplace, Matrix,
};
pub use params::{flatten, unflatten, zeros_like, Params};
pub use rng::{Rng64, RngState};
