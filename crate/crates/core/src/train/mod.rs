//! Text-encoder finetuning: encoder, losses, training loop, gradient checks,
//! checkpoints.

pub mod checkpoint;
pub mod encoder;
pub mod fit;
pub mod gradcheck;
pub mod loss;

pub use encoder::{encode_text, ensemble_weights, EncoderParams, EncoderSpec};
pub use fit::{fit, fit_captions, TrainConfig, TrainLog};
pub use gradcheck::{grad_check, DifferenceBatch, GradCheckConfig, GradCheckReport};
pub use loss::{contrastive_loss, mse_loss, LossKind};
