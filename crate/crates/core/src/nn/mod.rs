//! Numeric building blocks: normalization, rotary embedding, grouped-query
//! attention, the gated feed-forward block, and cross-entropy. Everything is
//! a pure function over explicit buffers; backward passes recompute their
//! intermediates instead of depending on a tape.

pub mod attention;
pub mod ffn;
pub mod loss;
pub mod norm;
pub mod rope;

pub use attention::{gqa_attention, gqa_attention_backward, Heads};
pub use ffn::{silu, swiglu_backward, swiglu_ffn, swiglu_forward};
pub use loss::cross_entropy;
pub use norm::{rmsnorm, rmsnorm_backward, rmsnorm_with, NormGain, NormVariant, DEFAULT_EPS};
pub use rope::{rope_apply, rope_unapply, RopeConfig, DEFAULT_THETA};
