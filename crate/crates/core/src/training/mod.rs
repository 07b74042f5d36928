//! Training objectives, enrollment sampling, Adam and the training loop.

mod gradcheck;
mod objectives;
mod optim;
mod sampling;
mod trainer;

pub use gradcheck::{
    check_gradients, gradcheck_config, gradcheck_suite, relative_error, GradCheckEntry, GradCheckReport,
    DEFAULT_STEP, DEFAULT_TOLERANCE, REL_ERROR_FLOOR,
};
pub use objectives::{
    cross_entropy, evaluate, hard_worst, loss_and_grad, loss_combined, loss_multitask, loss_sdr, loss_worst_hard,
    loss_worst_soft, neg_sdr_with_grad, soft_worst, softmax_weights, LossInput, LossValue, Objective,
    SdrLossOptions, DEFAULT_SDR_EPS,
};
pub use optim::{adam_step, AdamConfig, AdamState};
pub use sampling::{choose_enrollments, sample_subset, sample_uniform_enrollment, EnrollmentSampling};
pub use trainer::{
    append_history, dev_loss, train, train_with, EpochRecord, LossMode, TrainConfig, TrainHistory, TrainState,
};
