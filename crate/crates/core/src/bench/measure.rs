//! Timed prefill/generation passes and the fused-vs-naive normalization
//! comparison. Model construction and weight loading happen before any clock
//! reading; dry runs and warmup passes never touch the clock at all.

use crate::bench::clock::{Clock, MonotonicClock};
use crate::bench::protocol::{BenchProtocol, ThroughputReport};
use crate::error::{Error, Result};
use crate::model::forward::extend_with_cache_variant;
use crate::model::sample::argmax_lowest_id;
use crate::model::{Checkpoint, KvCache};
use crate::nn::NormVariant;
use crate::plan::{count_norm_invocations, ScalePlan};
use crate::scalar::Scalar;

fn bench_prompt(protocol: &BenchProtocol, vocab: usize) -> Vec<usize> {
    (0..protocol.prompt_tokens).map(|i| i % vocab).collect()
}

/// One full prefill + generation pass. With a clock, returns the two phase
/// durations in milliseconds; without one, runs untimed.
fn one_pass<T: Scalar>(
    ckpt: &Checkpoint<T>,
    plan: &ScalePlan,
    protocol: &BenchProtocol,
    variant: NormVariant,
    prompt: &[usize],
    mut clock: Option<&mut dyn Clock>,
) -> Result<(f64, f64)> {
    let mut cache = KvCache::new(plan, protocol.prompt_tokens + protocol.gen_tokens);
    let read = |c: &mut Option<&mut dyn Clock>| c.as_mut().map_or(0.0, |c| c.now_ms());
    let t0 = read(&mut clock);
    let logits = extend_with_cache_variant(ckpt, prompt, &mut cache, variant)?;
    let t1 = read(&mut clock);
    let mut next = argmax_lowest_id(logits.row(logits.rows() - 1));
    for _ in 0..protocol.gen_tokens {
        let step = extend_with_cache_variant(ckpt, &[next], &mut cache, variant)?;
        next = argmax_lowest_id(step.row(0));
    }
    let t2 = read(&mut clock);
    Ok((t1 - t0, t2 - t1))
}

pub fn run_benchmark<T: Scalar>(
    ckpt: &Checkpoint<T>,
    protocol: &BenchProtocol,
    variant: NormVariant,
) -> Result<ThroughputReport> {
    run_benchmark_with_clock(ckpt, protocol, variant, &mut MonotonicClock::new())
}

/// Measure one variant: optional dry run and warmup passes execute first and
/// are excluded from statistics, then each timed repetition contributes one
/// prefill and one generation duration; the report uses their medians.
pub fn run_benchmark_with_clock<T: Scalar>(
    ckpt: &Checkpoint<T>,
    protocol: &BenchProtocol,
    variant: NormVariant,
    clock: &mut dyn Clock,
) -> Result<ThroughputReport> {
    protocol.validate(ckpt.spec.context_length)?;
    let plan = ckpt.plan()?;
    let prompt = bench_prompt(protocol, ckpt.spec.vocab_size);
    let untimed = protocol.warmup_passes + usize::from(protocol.dry_run);
    for _ in 0..untimed {
        one_pass(ckpt, &plan, protocol, variant, &prompt, None)?;
    }
    let mut prefill_ms = Vec::with_capacity(protocol.repetitions);
    let mut generation_ms = Vec::with_capacity(protocol.repetitions);
    for _ in 0..protocol.repetitions {
        let (prefill, generation) =
            one_pass(ckpt, &plan, protocol, variant, &prompt, Some(clock))?;
        prefill_ms.push(prefill);
        generation_ms.push(generation);
    }
    ThroughputReport::from_timings(
        protocol,
        variant,
        count_norm_invocations(&plan),
        prefill_ms,
        generation_ms,
    )
}

/// The two variants' reports plus how much faster fused generation is.
#[derive(Debug, Clone)]
pub struct VariantComparison {
    pub fused: ThroughputReport,
    pub naive: ThroughputReport,
    /// fused generation_tps / naive generation_tps.
    pub speedup: f64,
}

/// Benchmark both normalization strategies on one checkpoint. Before any
/// timing, both must produce the same prompt logits within 1e-5; a mismatch
/// means the naive path is not computing the same function and the whole
/// comparison would be meaningless. Timed repetitions alternate between the
/// two variants so allocator warmth and clock-frequency drift cannot
/// systematically favor whichever side runs later.
pub fn compare_norm_variants<T: Scalar>(
    ckpt: &Checkpoint<T>,
    protocol: &BenchProtocol,
) -> Result<VariantComparison> {
    protocol.validate(ckpt.spec.context_length)?;
    let plan = ckpt.plan()?;
    let prompt = bench_prompt(protocol, ckpt.spec.vocab_size);
    let mut fused_cache = KvCache::new(&plan, prompt.len());
    let fused_logits =
        extend_with_cache_variant(ckpt, &prompt, &mut fused_cache, NormVariant::Fused)?;
    let mut naive_cache = KvCache::new(&plan, prompt.len());
    let naive_logits =
        extend_with_cache_variant(ckpt, &prompt, &mut naive_cache, NormVariant::Naive)?;
    for (i, (a, b)) in fused_logits.data().iter().zip(naive_logits.data()).enumerate() {
        let a = a.into_f64();
        let b = b.into_f64();
        if (a - b).abs() > 1e-5 * a.abs().max(b.abs()).max(1.0) {
            return Err(Error::Numeric(format!(
                "normalization variants disagree at logit {i}: {a} vs {b}"
            )));
        }
    }
    let mut clock = MonotonicClock::new();
    let untimed = protocol.warmup_passes + usize::from(protocol.dry_run);
    for variant in [NormVariant::Fused, NormVariant::Naive] {
        for _ in 0..untimed {
            one_pass(ckpt, &plan, protocol, variant, &prompt, None)?;
        }
    }
    let mut fused_prefill = Vec::with_capacity(protocol.repetitions);
    let mut fused_generation = Vec::with_capacity(protocol.repetitions);
    let mut naive_prefill = Vec::with_capacity(protocol.repetitions);
    let mut naive_generation = Vec::with_capacity(protocol.repetitions);
    for rep in 0..protocol.repetitions {
        // Alternate which variant leads inside a repetition as well; the
        // second pass of a pair always runs slightly warmer.
        let order = if rep % 2 == 0 {
            [NormVariant::Fused, NormVariant::Naive]
        } else {
            [NormVariant::Naive, NormVariant::Fused]
        };
        for variant in order {
            let (p, g) = one_pass(ckpt, &plan, protocol, variant, &prompt, Some(&mut clock))?;
            match variant {
                NormVariant::Fused => {
                    fused_prefill.push(p);
                    fused_generation.push(g);
                }
                NormVariant::Naive => {
                    naive_prefill.push(p);
                    naive_generation.push(g);
                }
            }
        }
    }
    let invocations = count_norm_invocations(&plan);
    let fused = ThroughputReport::from_timings(
        protocol,
        NormVariant::Fused,
        invocations,
        fused_prefill,
        fused_generation,
    )?;
    let naive = ThroughputReport::from_timings(
        protocol,
        NormVariant::Naive,
        invocations,
        naive_prefill,
        naive_generation,
    )?;
    let speedup = fused.generation_tps / naive.generation_tps;
    Ok(VariantComparison { fused, naive, speedup })
}
