//! Block-circulant linear operators with FFT-based multiplication, exact
//! reverse-mode gradients, and the supporting training machinery: optimizers
//! with a block-size learning-rate heuristic, a single-layer training
//! simulation, a mergeable adapter layer with checkpointing, and closed-form
//! parameter/FLOP accounting.

pub mod adapter;
pub mod circulant;
pub mod complexity;
pub mod error;
pub mod fft;
pub mod grad;
pub mod optim;
pub mod sim;

pub use error::{Error, Result};
