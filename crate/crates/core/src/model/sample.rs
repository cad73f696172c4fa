//! Token sampling and the prompt-then-decode generation loop.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::forward::{decode_step, extend_with_cache, KvCache};
use super::Checkpoint;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMode {
    Greedy,
    Temperature,
}

#[derive(Debug, Clone)]
pub struct SamplerConfig {
    pub mode: SampleMode,
    pub temperature: f64,
    pub seed: u64,
}

impl SamplerConfig {
    pub fn greedy() -> Self {
        SamplerConfig { mode: SampleMode::Greedy, temperature: 1.0, seed: 0 }
    }

    pub fn temperature(temperature: f64, seed: u64) -> Result<Self> {
        let cfg = SamplerConfig { mode: SampleMode::Temperature, temperature, seed };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.mode == SampleMode::Temperature
            && !(self.temperature.is_finite() && self.temperature > 0.0)
        {
            return Err(Error::Config(format!(
                "temperature must be a positive number, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// Greedy choice: index of the maximum, lowest id on ties.
pub fn argmax_lowest_id<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn sample_temperature(row_f64: &[f64], temperature: f64, rng: &mut ChaCha8Rng) -> usize {
    let max = row_f64.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = row_f64.iter().map(|z| ((z - max) / temperature).exp()).collect();
    let total: f64 = weights.iter().sum();
    let threshold = rng.gen::<f64>() * total;
    let mut cumulative = 0.0;
    for (i, w) in weights.iter().enumerate() {
        cumulative += w;
        if cumulative > threshold {
            return i;
        }
    }
    row_f64.len() - 1
}

fn sample_row<T: Scalar>(row: &[T], sampler: &SamplerConfig, rng: &mut ChaCha8Rng) -> usize {
    match sampler.mode {
        SampleMode::Greedy => argmax_lowest_id(row),
        SampleMode::Temperature => {
            let row_f64: Vec<f64> = row.iter().map(|&v| v.into_f64()).collect();
            sample_temperature(&row_f64, sampler.temperature, rng)
        }
    }
}

#[derive(Debug, Clone)]
pub struct GenerateOutput {
    /// Prompt followed by the generated ids.
    pub tokens: Vec<usize>,
    pub prompt_len: usize,
    pub generated: usize,
    pub prefill_seconds: f64,
    pub decode_seconds: f64,
}

/// Prefill the whole prompt, then generate `n_new` tokens, one decode step
/// per generated token. Timing is reported per phase.
pub fn generate<T: Scalar>(
    ckpt: &Checkpoint<T>,
    prompt: &[usize],
    n_new: usize,
    sampler: &SamplerConfig,
) -> Result<GenerateOutput> {
    sampler.validate()?;
    if prompt.is_empty() {
        return Err(Error::Data("generation needs a non-empty prompt".into()));
    }
    let context = ckpt.spec.context_length;
    if prompt.len() + n_new > context {
        return Err(Error::Context(format!(
            "prompt of {} plus {n_new} new tokens exceeds context length {context}",
            prompt.len()
        )));
    }
    let plan = ckpt.plan()?;
    let mut cache = KvCache::new(&plan, context);
    let mut rng = ChaCha8Rng::seed_from_u64(sampler.seed);

    let prefill_start = Instant::now();
    let prompt_logits = extend_with_cache(ckpt, prompt, &mut cache)?;
    let prefill_seconds = prefill_start.elapsed().as_secs_f64();

    let mut tokens = prompt.to_vec();
    let mut last = prompt_logits.row(prompt.len() - 1).to_vec();
    let mut decode_seconds = 0.0;
    for _ in 0..n_new {
        let next = sample_row(&last, sampler, &mut rng);
        tokens.push(next);
        let step_start = Instant::now();
        last = decode_step(ckpt, &mut cache, next)?;
        decode_seconds += step_start.elapsed().as_secs_f64();
    }
    Ok(GenerateOutput {
        tokens,
        prompt_len: prompt.len(),
        generated: n_new,
        prefill_seconds,
        decode_seconds,
    })
}
