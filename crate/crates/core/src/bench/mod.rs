//! Throughput measurement: prefill versus generation tokens/second, and the
//! fused-versus-naive RMSNorm comparison.

pub mod clock;
pub mod measure;
pub mod protocol;

pub use clock::{Clock, MonotonicClock, ScriptedClock};
pub use measure::{compare_norm_variants, run_benchmark, run_benchmark_with_clock, VariantComparison};
pub use protocol::{variant_label, BenchProtocol, ThroughputReport};
