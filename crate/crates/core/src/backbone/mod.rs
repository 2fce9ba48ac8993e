//! Deterministic differentiable-computation backbone.
//!
//! Everything downstream (networks, losses, attacks) is expressed through this
//! module's primitive set: a tape-recorded reverse-mode gradient engine over
//! flat tensors, the Adam update rule, hash-derived random streams, a central
//! finite-difference gradient oracle, and a manifest+blob checkpoint format.
//!
//! All computation is generic over [`Scalar`]: `f32` is the training dtype,
//! `f64` exists for gradient-check and oracle tests that need headroom.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod params;
pub mod rng;
pub mod scalar;
pub mod tape;
pub mod tensor;

pub use adam::{adam_step, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use gradcheck::{finite_diff_grad, grad, gradient_rel_error};
pub use params::ParamSet;
pub use rng::Rng;
pub use scalar::Scalar;
pub use tape::{NodeId, Tape};
pub use tensor::Tensor;

/// Guard added inside logarithms and denominators so saturated
/// softmax/sigmoid terms cannot produce NaN.
pub const EPS_GUARD: f64 = 1e-12;
