//! Fitting an object Gaussian to posed views.

pub mod density;
pub mod gradcheck;
mod objective;
mod train;

pub use density::{
    adaptive_density_control, online_floater_prune, prune_unseen, retain_primitives, DensifyReport, DensifyThresholds,
    FloaterPruneOptions, GradStats, PruneReport,
};
pub use gradcheck::{check_gradient_suite, check_gradients, FdOptions, FdReport, LossConfig, SuiteReport};
pub use objective::{compute_gradients, evaluate_loss, GradientReport, Target};
pub use train::{
    train, GivenView, IterationRecord, LearningRates, MetricsLog, SyntheticView, TrainOutcome, TrainSchedule,
};
