//! Small deterministic neural-network numerics: tensors, dense and
//! convolution kernels with hand-written backward passes, optimizers and the
//! `.w3b` weight format.
//!
//! Everything is generic over [`Real`] so the same layers run in `f32` for
//! training and inference and in `f64` for finite-difference checks.
//! Reductions accumulate in `f64` in a fixed order, so results do not depend on
//! the number of threads.

pub mod gradcheck;
mod layers;
pub mod ops;
mod optim;
mod tensor;
mod weights;

pub use layers::{Activation, Dense, Mlp, Parameterized};
pub use optim::{optimizer_step, Method, OptimConfig, Optimizer};
pub use tensor::{Real, Tensor};
pub use weights::{load_weights, save_weights, NetworkWeights, W3B_MAGIC, W3B_VERSION};
