//! Seed-filter convolutional networks.
//!
//! Each generated convolution layer learns one seed filter; its remaining
//! filters are produced by an elementwise filter generation function with
//! exponents drawn from a seeded PRNG. A trained model therefore travels as
//! seed filters plus seeds (the MONO1 packet) and is regenerated bit-exactly
//! on the receiving device.

pub mod analysis;
pub mod bank;
pub mod codec;
pub mod data;
mod error;
pub mod fgf;
pub mod model;
pub mod ops;
pub mod rng;
mod tensor;
mod wire;
pub mod train;
pub mod transport;

pub use analysis::{alpha_recovery, AlphaFit};
pub use bank::{bank_backward, expand_bank, normalize_filter, FilterBank};
pub use error::{Error, Result};
pub use fgf::{apply_fgf, fgf_derivative, sample_betas, FgfConfig, FgfKind};
pub use model::{build, count_params, LayerSpec, ModelDescriptor, ModelState};
pub use ops::ConvGeometry;
pub use tensor::{Real, Tensor};
