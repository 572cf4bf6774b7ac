//! Training of seed filters and dense layers.

pub mod ablation;
mod checkpoint;
mod gradcheck;
mod loss;
mod trainer;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint};
pub use gradcheck::{check_fgf_derivatives, grad_check, grad_check_with, GradCheckConfig, GradCheckReport, FgfDerivativeCheck, ParamGroup, TensorCheck};
pub use loss::{combined_loss, LossConfig, LossOutput, LossTerms, TeacherView};
pub use trainer::{cosine_lr, crop_flip, EpochMetrics, TrainConfig, Trainer};
