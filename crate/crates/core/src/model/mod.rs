//! Model descriptors, parameter state and reference architectures.

pub mod arch;
mod descriptor;
mod params;
mod state;

pub use arch::{Arch, FgfTemplate};
pub use descriptor::{LayerSpec, ModelDescriptor};
pub use params::{count_params, pointwise_saving_ratio, LayerCount, ParamCount};
pub use state::{build, LayerGrad, LayerParams, ModelState, Trace};
