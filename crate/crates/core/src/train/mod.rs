//! Training: cosine schedule with warmup, reverse-mode gradients, AdamW with
//! decoupled decay, a desk-scale run loop, and checkpoint averaging.

pub mod average;
pub mod backprop;
pub mod optimizer;
pub mod runner;
pub mod schedule;

pub use average::average_checkpoints;
pub use backprop::{loss_and_gradients, Gradients};
pub use optimizer::{clip_gradients, train_step, train_step_accumulated, OptimizerState, StepReport};
pub use runner::{evaluate, run_training, RunOptions, StepRecord, TrainSummary};
pub use schedule::{lr_at, TrainSchedule};
