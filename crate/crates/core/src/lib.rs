//! Layer-wise scaled decoder-only transformer at desk scale: an architecture
//! planner, trainable/inferable model core, filtering data pipeline, and a
//! normalization-kernel throughput benchmark.
//!
//! The numeric core is generic over [`Scalar`]: `f64` is the reference
//! precision, `f32` the fast path and the checkpoint storage type.

pub mod bench;
pub mod data;
pub mod error;
pub mod matrix;
pub mod model;
pub mod nn;
pub mod plan;
pub mod scalar;
pub mod train;

pub use bench::{compare_norm_variants, run_benchmark, BenchProtocol, ThroughputReport};
pub use data::{ByteTokenizer, FilterPolicy, SourceSpec, Tokenizer};
pub use error::{Error, Result};
pub use matrix::Matrix;
pub use model::{
    decode_step, forward, generate, init_model, load_checkpoint, save_checkpoint, Checkpoint,
    GenerateOutput, KvCache, SampleMode, SamplerConfig,
};
pub use nn::{cross_entropy, gqa_attention, rmsnorm, rope_apply, swiglu_ffn};
pub use nn::{Heads, NormGain, NormVariant, RopeConfig};
pub use plan::{build_plan, count_norm_invocations, count_parameters, interpolate};
pub use plan::{LayerPlan, ModelSpec, ScalePlan};
pub use scalar::Scalar;
pub use train::{
    average_checkpoints, evaluate, lr_at, run_training, train_step, OptimizerState, RunOptions,
    TrainSchedule, TrainSummary,
};

pub type Matrix32 = Matrix<f32>;
pub type Matrix64 = Matrix<f64>;
