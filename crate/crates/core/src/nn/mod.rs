//! Small differentiable building blocks.
//!
//! Everything here is composed from primitive tensor ops so that gradients can
//! be differentiated a second time.

mod layers;
pub mod ops;
mod spectral;

pub use layers::{Conv2d, LayerNorm, Linear};
pub use spectral::{spectral_normalize, PowerIteration, SpectralConv2d};
