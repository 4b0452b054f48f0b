//! Self-contained neural network stack: tensors, layers, the residual
//! regression CNN with meteorological fusion, Adam, the training loop,
//! and finite-difference gradient verification.

pub mod adam;
pub mod gradcheck;
pub mod layout;
pub mod loss;
pub mod model;
pub mod ops;
pub mod params;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{grad_check, grad_check_f32, GradCheckReport, DEFAULT_TOLERANCE_F64, TOLERANCE_F32};
pub use layout::{build_layout, param_count, ModelConfig};
pub use loss::mse_loss;
pub use model::{Gradients, Model};
pub use ops::Workspace;
pub use params::{load_checkpoint_file, save_checkpoint_file, CheckpointMeta, NormState, ParamSet};
pub use scalar::{Precision, Scalar};
pub use tensor::Tensor4;
pub use train::{evaluate_mse, history_csv, train_model, EpochStats, TileBatch, TrainOptions, TrainResult};
