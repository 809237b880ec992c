//! Student model and KL distillation from accepted teacher logits.

mod student;
mod train;

pub use student::{
    kl_loss, StudentCheckpoint, StudentConfig, StudentMetadata, StudentModel, StudentParams,
};
pub use train::{
    distill_step, epoch_order, init_student, run_distillation, step_on_features, DistillConfig,
    EpochRecord, LogHeader, TrainingLog,
};
