//! Video inpainting detection with frequency-domain insights.
//!
//! The `fdin` crate implements a 3D convolutional encoder-decoder detector
//! for inpainted video regions, built around two frequency-domain modules:
//! an adaptive band selective response layer (a learnable mask applied in
//! the full-frame DCT domain, [`absr`]) and a Fourier-convolution attention
//! block that pairs a local 3D convolution branch with a global spectral
//! branch ([`ffca`]). A residual 3D encoder ([`encoder`]) feeds both, and a
//! top-down decoder ([`decoder`]) emits per-frame inpainting logits.
//!
//! Everything runs on the CPU in single precision with hand-written
//! forward/backward passes; gradients for every learnable tensor are
//! checked against central finite differences (see [`gradcheck`]). The
//! [`data`] module covers clip IO, deterministic synthetic dataset
//! generation, temporal windowing, augmentation, and per-frame JPEG
//! recompression for robustness sweeps; [`train`], [`eval`], and
//! [`metrics`] carry the harness.
//!
//! The companion `fdin-cli` binary wires these pieces into `synth`,
//! `train`, `eval`, `infer`, `robustness`, `gradcheck`, and `export-mask`
//! subcommands.

pub mod absr;
pub mod config;
pub mod data;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod ffca;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod spectral;
pub mod train;

pub use config::RunConfig;
pub use error::{FdinError, Result};
pub use model::{FdinModel, ModelConfig};
