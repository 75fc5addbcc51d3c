//! Linear-time attention built from Haar wavelet filtering and random
//! spectral features, together with everything needed to exercise it:
//! a small dense-tensor substrate, a tape autograd, a toy encoder, and a
//! benchmark/experiment harness.
//!
//! All numerics are f64 and bit-reproducible for a fixed seed: the RNG is
//! counter-based, op implementations are single-threaded with fixed
//! iteration order, and no global state feeds the math.

pub mod attention;
pub mod autograd;
pub mod harness;
pub mod model;
pub mod rng;
pub mod spectral;
pub mod tensor;
pub mod wavelet;

pub use rng::RngState;
pub use tensor::{Tensor, TensorError};
