//! Architecture planning: expand a ModelSpec into per-layer head counts and
//! FFN widths by linear interpolation, and count learnable parameters
//! exactly.
//!
//! Each layer i gets its own attention multiplier alpha_i and FFN multiplier
//! beta_i, linearly interpolated between the configured endpoints. Head
//! counts derive from alpha_i * d_model / head_dim, FFN widths from
//! beta_i * d_model; both are rounded half-up. The head count is then moved
//! to the nearest self-consistent value: one divisible by its own KV-head
//! count (ties resolved upward). Self-consistency keeps n_kv_heads equal to
//! round_half_up(n_heads / kv_group) of the final count and makes the head
//! sequence non-decreasing whenever the alpha endpoints are ordered.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// User-facing architecture description, loadable from a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub d_model: usize,
    pub num_layers: usize,
    pub head_dim: usize,
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub beta_min: f64,
    pub beta_max: f64,
    pub vocab_size: usize,
    pub context_length: usize,
    #[serde(default = "default_kv_group")]
    pub kv_group: usize,
    #[serde(default = "default_weight_tying")]
    pub weight_tying: bool,
}

fn default_kv_group() -> usize {
    4
}

fn default_weight_tying() -> bool {
    true
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |field: &str, why: &str| Err(Error::Plan(format!("{field}: {why}")));
        if self.d_model == 0 {
            return fail("d_model", "must be positive");
        }
        if self.num_layers == 0 {
            return fail("num_layers", "must be positive");
        }
        if self.head_dim == 0 {
            return fail("head_dim", "must be positive");
        }
        if self.head_dim % 2 != 0 {
            return fail("head_dim", "must be even (rotations act on coordinate pairs)");
        }
        if !(self.alpha_min > 0.0 && self.alpha_max > 0.0) {
            return fail("alpha_min/alpha_max", "must be positive");
        }
        if !(self.beta_min > 0.0 && self.beta_max > 0.0) {
            return fail("beta_min/beta_max", "must be positive");
        }
        if self.alpha_min > self.alpha_max {
            return fail("alpha_min", "exceeds alpha_max");
        }
        if self.beta_min > self.beta_max {
            return fail("beta_min", "exceeds beta_max");
        }
        if self.vocab_size < 2 {
            return fail("vocab_size", "must be at least 2");
        }
        if self.context_length == 0 {
            return fail("context_length", "must be at least 1");
        }
        if self.kv_group == 0 {
            return fail("kv_group", "must be positive");
        }
        Ok(())
    }
}

/// Resolved configuration of one transformer layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerPlan {
    pub index: usize,
    pub alpha: f64,
    pub beta: f64,
    pub n_heads: usize,
    pub n_kv_heads: usize,
    pub ffn_hidden: usize,
}

/// The full per-layer plan for a spec.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalePlan {
    pub spec: ModelSpec,
    pub layers: Vec<LayerPlan>,
}

/// Linear interpolation across the layer stack; a single layer collapses to
/// the lower endpoint.
pub fn interpolate(i: usize, n: usize, lo: f64, hi: f64) -> Result<f64> {
    if n == 0 || i >= n {
        return Err(Error::Plan(format!("layer index {i} out of range for {n} layers")));
    }
    if lo > hi {
        return Err(Error::Plan(format!("interpolation endpoints inverted: {lo} > {hi}")));
    }
    if n == 1 || i == 0 {
        return Ok(lo);
    }
    // The last layer must land on hi exactly; lo + (hi - lo) can miss it by
    // an ulp.
    if i == n - 1 {
        return Ok(hi);
    }
    Ok(lo + (hi - lo) * i as f64 / (n - 1) as f64)
}

pub fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

fn kv_heads_of(n_heads: usize, kv_group: usize) -> usize {
    round_half_up(n_heads as f64 / kv_group as f64).max(1)
}

/// A head count is self-consistent when it is divisible by its own KV-head
/// count. The rounded target is moved to the nearest such value, ties upward,
/// so that a non-decreasing sequence of targets maps to a non-decreasing
/// sequence of head counts.
fn nearest_consistent_heads(target: usize, kv_group: usize) -> usize {
    let consistent = |m: usize| m % kv_heads_of(m, kv_group) == 0;
    let target = target.max(1);
    if consistent(target) {
        return target;
    }
    let mut delta = 1;
    loop {
        if consistent(target + delta) {
            return target + delta;
        }
        if target > delta && consistent(target - delta) {
            return target - delta;
        }
        delta += 1;
    }
}

/// Expand a spec into one LayerPlan per layer.
pub fn build_plan(spec: &ModelSpec) -> Result<ScalePlan> {
    spec.validate()?;
    let n = spec.num_layers;
    let mut layers = Vec::with_capacity(n);
    for i in 0..n {
        let alpha = interpolate(i, n, spec.alpha_min, spec.alpha_max)?;
        let beta = interpolate(i, n, spec.beta_min, spec.beta_max)?;
        let head_target = round_half_up(alpha * spec.d_model as f64 / spec.head_dim as f64);
        let n_heads = nearest_consistent_heads(head_target, spec.kv_group);
        let n_kv_heads = kv_heads_of(n_heads, spec.kv_group);
        let ffn_hidden = round_half_up(beta * spec.d_model as f64).max(1);
        layers.push(LayerPlan { index: i, alpha, beta, n_heads, n_kv_heads, ffn_hidden });
    }
    Ok(ScalePlan { spec: spec.clone(), layers })
}

/// Exact learnable-scalar count: embedding, per-layer attention and SwiGLU
/// projections, per-layer norm gains (pre-attention and pre-FFN of d_model;
/// query/key gains spanning their projection widths), final norm gain, and
/// the output projection only when untied. No biases exist anywhere.
pub fn count_parameters(plan: &ScalePlan) -> u64 {
    let d = plan.spec.d_model as u64;
    let dh = plan.spec.head_dim as u64;
    let vocab = plan.spec.vocab_size as u64;
    let mut total = vocab * d;
    for layer in &plan.layers {
        let nh = layer.n_heads as u64;
        let nkv = layer.n_kv_heads as u64;
        let ffn = layer.ffn_hidden as u64;
        total += nh * dh * d; // Q
        total += 2 * nkv * dh * d; // K, V
        total += nh * dh * d; // attention out
        total += 3 * d * ffn; // gate, up, down
        total += 2 * d + nh * dh + nkv * dh; // pre-attn, pre-FFN, query, key gains
    }
    total += d; // final norm gain
    if !plan.spec.weight_tying {
        total += vocab * d;
    }
    total
}

/// RMSNorm invocations per token: four per layer (pre-attention, pre-FFN,
/// query, key) plus the final norm.
pub fn count_norm_invocations(plan: &ScalePlan) -> u64 {
    4 * plan.spec.num_layers as u64 + 1
}
