//! The training pipeline: actor MLE pretraining, critic pretraining,
//! off-policy maximum-entropy joint training with a replay buffer, and the
//! oracle-mode unsupervised loop.

pub mod config;
pub mod replay;
pub mod report;
pub mod trainer;

pub use config::{Config, DataConfig, ModelDims, TrainConfig, TrainMode};
pub use replay::{ReplayBuffer, Transition};
pub use report::{EpochRow, TrainingReport};
pub use trainer::{
    actor_loss, collect_trajectory, critic_loss, oracle_mode_update, pretrain_actor,
    pretrain_critic, sac_update, td_targets, train_schedule, SacState, TrainOutcome, Trajectory,
};
