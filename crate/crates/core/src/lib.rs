//! Desk-scale laboratory for coupled spatiotemporal forecasting: per-sphere
//! physics engines pretrained on a synthetic coupled dynamical system, a
//! frozen-engine correction agent trained in a predict-then-correct loop,
//! long autoregressive coupled rollouts, and verification of both the
//! error-propagation theory and the evaluation metrics against independent
//! oracles.

pub mod gradcheck;
pub mod nn;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod train;
pub mod world;

pub use scalar::Scalar;
pub use tensor::{Graph, PadMode, Tensor, Var};
