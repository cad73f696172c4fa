//! Measurement protocol and the throughput report it produces.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::NormVariant;

/// How a throughput measurement is run: a discarded dry run, untimed warmup
/// passes, then timed repetitions summarized by medians.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchProtocol {
    #[serde(default = "default_prompt_tokens")]
    pub prompt_tokens: usize,
    #[serde(default = "default_gen_tokens")]
    pub gen_tokens: usize,
    #[serde(default = "default_dry_run")]
    pub dry_run: bool,
    #[serde(default = "default_warmup_passes")]
    pub warmup_passes: usize,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
}

fn default_prompt_tokens() -> usize {
    36
}
fn default_gen_tokens() -> usize {
    1024
}
fn default_dry_run() -> bool {
    true
}
fn default_warmup_passes() -> usize {
    1
}
fn default_repetitions() -> usize {
    5
}

impl Default for BenchProtocol {
    fn default() -> Self {
        BenchProtocol {
            prompt_tokens: default_prompt_tokens(),
            gen_tokens: default_gen_tokens(),
            dry_run: default_dry_run(),
            warmup_passes: default_warmup_passes(),
            repetitions: default_repetitions(),
        }
    }
}

impl BenchProtocol {
    pub fn validate(&self, context_length: usize) -> Result<()> {
        if self.prompt_tokens == 0 || self.gen_tokens == 0 {
            return Err(Error::Protocol("prompt and generation budgets must be positive".into()));
        }
        if self.repetitions == 0 {
            return Err(Error::Protocol("at least one timed repetition is required".into()));
        }
        if self.prompt_tokens + self.gen_tokens > context_length {
            return Err(Error::Protocol(format!(
                "{} prompt + {} generated tokens exceed the context of {context_length}",
                self.prompt_tokens, self.gen_tokens
            )));
        }
        Ok(())
    }
}

pub fn variant_label(variant: NormVariant) -> &'static str {
    match variant {
        NormVariant::Fused => "fused",
        NormVariant::Naive => "naive",
    }
}

/// Median of the two measured phases plus the tokens/second each implies.
#[derive(Debug, Clone, Serialize)]
pub struct ThroughputReport {
    pub norm_variant: String,
    pub prompt_tps: f64,
    pub generation_tps: f64,
    pub total_tps: f64,
    /// Raw per-repetition timings, in measurement order.
    pub prefill_ms: Vec<f64>,
    pub generation_ms: Vec<f64>,
    /// RMSNorm invocations per decoded token for this architecture.
    pub norm_invocations: u64,
}

fn median(samples: &[f64]) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

impl ThroughputReport {
    /// Summarize raw phase timings. Rates derive from the medians, so
    /// total_tps = (prompt + gen) / (median prefill + median generation).
    pub fn from_timings(
        protocol: &BenchProtocol,
        variant: NormVariant,
        norm_invocations: u64,
        prefill_ms: Vec<f64>,
        generation_ms: Vec<f64>,
    ) -> Result<Self> {
        if prefill_ms.is_empty() || prefill_ms.len() != generation_ms.len() {
            return Err(Error::Protocol(format!(
                "{} prefill and {} generation timings do not pair up",
                prefill_ms.len(),
                generation_ms.len()
            )));
        }
        let prefill_med = median(&prefill_ms);
        let gen_med = median(&generation_ms);
        if prefill_med <= 0.0 || gen_med <= 0.0 {
            return Err(Error::Protocol("non-positive median phase timing".into()));
        }
        let prompt = protocol.prompt_tokens as f64;
        let gen = protocol.gen_tokens as f64;
        Ok(ThroughputReport {
            norm_variant: variant_label(variant).to_string(),
            prompt_tps: prompt / (prefill_med / 1e3),
            generation_tps: gen / (gen_med / 1e3),
            total_tps: (prompt + gen) / ((prefill_med + gen_med) / 1e3),
            prefill_ms,
            generation_ms,
            norm_invocations,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn protocol(prompt: usize, gen: usize, reps: usize) -> BenchProtocol {
        BenchProtocol {
            prompt_tokens: prompt,
            gen_tokens: gen,
            dry_run: true,
            warmup_passes: 1,
            repetitions: reps,
        }
    }

    #[test]
    fn defaults_describe_the_standard_protocol() {
        let p = BenchProtocol::default();
        assert_eq!(p.prompt_tokens, 36);
        assert_eq!(p.gen_tokens, 1024);
        assert!(p.dry_run);
        assert_eq!(p.warmup_passes, 1);
        assert_eq!(p.repetitions, 5);
    }

    #[test]
    fn oversized_protocols_are_rejected() {
        assert!(protocol(36, 1024, 5).validate(2048).is_ok());
        let err = protocol(36, 1024, 5).validate(1059).unwrap_err();
        assert!(matches!(err, Error::Protocol(_)), "{err}");
        assert!(protocol(0, 8, 5).validate(64).is_err());
        assert!(protocol(8, 0, 5).validate(64).is_err());
        assert!(protocol(8, 8, 0).validate(64).is_err());
    }

    #[test]
    fn thirty_six_tokens_in_ten_milliseconds_is_3600_tps() {
        let report = ThroughputReport::from_timings(
            &protocol(36, 64, 1),
            NormVariant::Fused,
            9,
            vec![10.0],
            vec![20.0],
        )
        .unwrap();
        assert_eq!(report.prompt_tps, 3600.0);
        assert_eq!(report.generation_tps, 3200.0);
    }

    #[test]
    fn medians_pick_the_middle_repetition() {
        assert_eq!(median(&[10.0, 20.0, 30.0]), 20.0);
        assert_eq!(median(&[30.0, 10.0, 20.0]), 20.0);
        assert_eq!(median(&[10.0, 20.0, 30.0, 40.0]), 25.0);
        let report = ThroughputReport::from_timings(
            &protocol(36, 36, 3),
            NormVariant::Fused,
            9,
            vec![30.0, 10.0, 20.0],
            vec![20.0, 20.0, 20.0],
        )
        .unwrap();
        assert_eq!(report.prompt_tps, 36.0 / 0.020);
    }

    #[test]
    fn total_rate_is_consistent_with_the_phase_medians() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        for _ in 0..50 {
            let reps = rng.gen_range(1..9);
            let prefill: Vec<f64> = (0..reps).map(|_| rng.gen_range(0.1..50.0)).collect();
            let gen: Vec<f64> = (0..reps).map(|_| rng.gen_range(0.1..500.0)).collect();
            let proto = protocol(rng.gen_range(1..64), rng.gen_range(1..256), reps);
            let report = ThroughputReport::from_timings(
                &proto,
                NormVariant::Naive,
                13,
                prefill.clone(),
                gen.clone(),
            )
            .unwrap();
            let identity = (proto.prompt_tokens + proto.gen_tokens) as f64
                / ((median(&prefill) + median(&gen)) / 1e3);
            assert_eq!(report.total_tps, identity);
            assert!(report.prompt_tps > 0.0 && report.generation_tps > 0.0);
            assert_eq!(report.norm_variant, "naive");
        }
    }

    #[test]
    fn degenerate_timings_are_rejected() {
        let proto = protocol(8, 8, 1);
        assert!(ThroughputReport::from_timings(
            &proto,
            NormVariant::Fused,
            9,
            vec![0.0],
            vec![5.0]
        )
        .is_err());
        assert!(ThroughputReport::from_timings(
            &proto,
            NormVariant::Fused,
            9,
            vec![],
            vec![]
        )
        .is_err());
        assert!(ThroughputReport::from_timings(
            &proto,
            NormVariant::Fused,
            9,
            vec![1.0, 2.0],
            vec![1.0]
        )
        .is_err());
    }
}
