//! Model assembly: a checkpoint of named tensors laid out by the scale plan,
//! deterministic initialization, the forward/decoding paths, sampling, and
//! the on-disk checkpoint format.

pub mod forward;
pub mod io;
pub mod sample;

pub use forward::{decode_step, forward, KvCache};
pub use io::{load_checkpoint, save_checkpoint};
pub use sample::{generate, GenerateOutput, SampleMode, SamplerConfig};

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::plan::{build_plan, ModelSpec, ScalePlan};
use crate::scalar::Scalar;

pub const FORMAT_VERSION: u32 = 1;

/// Standard deviation of freshly initialized weight tensors.
pub const INIT_STD: f64 = 0.02;

/// All learnable state plus the architecture description it belongs to.
/// Tensor names and order are canonical; see [`canonical_tensors`].
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub spec: ModelSpec,
    pub tensors: IndexMap<String, Matrix<T>>,
    pub format_version: u32,
}

/// Expected (name, rows, cols) sequence for a plan. Norm gains are stored as
/// 1-row matrices; query/key norm gains span the full projection width and
/// are applied per head. With weight tying there is no output-projection
/// tensor at all: logits reuse the embedding storage.
pub fn canonical_tensors(plan: &ScalePlan) -> Vec<(String, usize, usize)> {
    let d = plan.spec.d_model;
    let dh = plan.spec.head_dim;
    let mut out = vec![("embed.weight".to_string(), plan.spec.vocab_size, d)];
    for layer in &plan.layers {
        let qw = layer.n_heads * dh;
        let kvw = layer.n_kv_heads * dh;
        let f = layer.ffn_hidden;
        let i = layer.index;
        let name = |part: &str| format!("layer.{i:02}.{part}");
        out.push((name("attn.norm"), 1, d));
        out.push((name("attn.wq"), d, qw));
        out.push((name("attn.wk"), d, kvw));
        out.push((name("attn.wv"), d, kvw));
        out.push((name("attn.q_norm"), 1, qw));
        out.push((name("attn.k_norm"), 1, kvw));
        out.push((name("attn.wo"), qw, d));
        out.push((name("ffn.norm"), 1, d));
        out.push((name("ffn.w_gate"), d, f));
        out.push((name("ffn.w_up"), d, f));
        out.push((name("ffn.w_down"), f, d));
    }
    out.push(("final.norm".to_string(), 1, d));
    if !plan.spec.weight_tying {
        out.push(("output.weight".to_string(), plan.spec.vocab_size, d));
    }
    out
}

impl<T: Scalar> Checkpoint<T> {
    pub fn plan(&self) -> Result<ScalePlan> {
        build_plan(&self.spec)
    }

    pub fn tensor(&self, name: &str) -> Result<&Matrix<T>> {
        self.tensors.get(name).ok_or_else(|| Error::Format(format!("missing tensor {name}")))
    }

    pub fn tensor_mut(&mut self, name: &str) -> Result<&mut Matrix<T>> {
        self.tensors.get_mut(name).ok_or_else(|| Error::Format(format!("missing tensor {name}")))
    }

    /// Total scalar count across all tensors.
    pub fn parameter_count(&self) -> u64 {
        self.tensors.values().map(|m| m.len() as u64).sum()
    }

    /// Enforce that the tensor map matches the plan-derived census exactly:
    /// same names, same order, same shapes, nothing extra or missing.
    pub fn validate_census(&self) -> Result<()> {
        let plan = self.plan()?;
        let expected = canonical_tensors(&plan);
        if expected.len() != self.tensors.len() {
            return Err(Error::Format(format!(
                "checkpoint holds {} tensors, architecture requires {}",
                self.tensors.len(),
                expected.len()
            )));
        }
        for ((name, rows, cols), (have_name, m)) in expected.iter().zip(self.tensors.iter()) {
            if name != have_name {
                return Err(Error::Format(format!("tensor {have_name} where {name} expected")));
            }
            if m.rows() != *rows || m.cols() != *cols {
                return Err(Error::Format(format!(
                    "tensor {name}: shape {}x{} does not match required {rows}x{cols}",
                    m.rows(),
                    m.cols()
                )));
            }
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> Checkpoint<U> {
        let tensors = self
            .tensors
            .iter()
            .map(|(name, m)| {
                let data = m.data().iter().map(|&v| U::from_f64(v.into_f64())).collect();
                (name.clone(), Matrix::from_vec(m.rows(), m.cols(), data).unwrap())
            })
            .collect();
        Checkpoint { spec: self.spec.clone(), tensors, format_version: self.format_version }
    }
}

/// Standard normal deviate truncated to [-2, 2], via Box-Muller with
/// rejection. The cosine half of each pair is used alone so the draw
/// sequence stays independent of how many values any tensor consumes.
fn truncated_unit_normal(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let u1 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.gen();
        let z = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
        if z.abs() <= 2.0 {
            return z;
        }
    }
}

/// Fresh deterministic checkpoint: weights ~ normal(0, 0.02) truncated at
/// two standard deviations, the output-side projections (attention out, FFN
/// down) further scaled by 1/sqrt(2 * num_layers), norm gains at one.
pub fn init_model<T: Scalar>(plan: &ScalePlan, seed: u64) -> Checkpoint<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let residual_scale = 1.0 / (2.0 * plan.spec.num_layers as f64).sqrt();
    let mut tensors = IndexMap::new();
    for (name, rows, cols) in canonical_tensors(plan) {
        let is_gain = name.ends_with("norm");
        let scale = if name.ends_with("attn.wo") || name.ends_with("ffn.w_down") {
            INIT_STD * residual_scale
        } else {
            INIT_STD
        };
        let data: Vec<T> = if is_gain {
            vec![T::one(); rows * cols]
        } else {
            (0..rows * cols)
                .map(|_| T::from_f64(scale * truncated_unit_normal(&mut rng)))
                .collect()
        };
        tensors.insert(name, Matrix::from_vec(rows, cols, data).unwrap());
    }
    Checkpoint { spec: plan.spec.clone(), tensors, format_version: FORMAT_VERSION }
}

#[cfg(test)]
pub(crate) fn tiny_spec() -> ModelSpec {
    ModelSpec {
        d_model: 24,
        num_layers: 2,
        head_dim: 4,
        alpha_min: 0.5,
        alpha_max: 1.0,
        beta_min: 1.0,
        beta_max: 2.0,
        vocab_size: 17,
        context_length: 16,
        kv_group: 2,
        weight_tying: true,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plan::count_parameters;

    fn plan_of(spec: &ModelSpec) -> ScalePlan {
        build_plan(spec).unwrap()
    }

    #[test]
    fn same_plan_and_seed_give_bit_identical_checkpoints() {
        let plan = plan_of(&tiny_spec());
        let a: Checkpoint<f32> = init_model(&plan, 7);
        let b: Checkpoint<f32> = init_model(&plan, 7);
        assert_eq!(a, b);
        let c: Checkpoint<f32> = init_model(&plan, 8);
        assert_ne!(a, c);
    }

    #[test]
    fn norm_gains_initialize_to_ones() {
        let plan = plan_of(&tiny_spec());
        let ckpt: Checkpoint<f64> = init_model(&plan, 1);
        for (name, m) in &ckpt.tensors {
            if name.ends_with("norm") {
                assert!(m.data().iter().all(|&v| v == 1.0), "{name} not all ones");
            }
        }
    }

    #[test]
    fn init_statistics_match_declared_scale() {
        let mut spec = tiny_spec();
        spec.d_model = 64;
        spec.vocab_size = 300;
        let plan = plan_of(&spec);
        let ckpt: Checkpoint<f64> = init_model(&plan, 5);
        let embed = ckpt.tensor("embed.weight").unwrap();
        let n = embed.len() as f64;
        let mean: f64 = embed.data().iter().sum::<f64>() / n;
        let var: f64 = embed.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        assert!((0.017..=0.023).contains(&std), "embedding std {std}");
        // Truncation bound: no draw exceeds two standard deviations.
        assert!(embed.data().iter().all(|v| v.abs() <= 2.0 * INIT_STD + 1e-12));
        // Output-side projections carry the extra depth scaling.
        let wo = ckpt.tensor("layer.00.attn.wo").unwrap();
        let wo_n = wo.len() as f64;
        let wo_var = wo.data().iter().map(|v| v * v).sum::<f64>() / wo_n;
        let expect = INIT_STD / (2.0 * spec.num_layers as f64).sqrt();
        let ratio = wo_var.sqrt() / expect;
        assert!((0.85..=1.15).contains(&ratio), "wo std off by factor {ratio}");
    }

    #[test]
    fn census_matches_parameter_count_exactly() {
        for tying in [true, false] {
            let mut spec = tiny_spec();
            spec.weight_tying = tying;
            let plan = plan_of(&spec);
            let ckpt: Checkpoint<f32> = init_model(&plan, 3);
            ckpt.validate_census().unwrap();
            assert_eq!(ckpt.parameter_count(), count_parameters(&plan));
            assert_eq!(ckpt.tensors.contains_key("output.weight"), !tying);
        }
    }

    #[test]
    fn census_rejects_missing_extra_or_reshaped_tensors() {
        let plan = plan_of(&tiny_spec());
        let base: Checkpoint<f32> = init_model(&plan, 2);

        let mut missing = base.clone();
        missing.tensors.shift_remove("final.norm");
        assert!(missing.validate_census().is_err());

        let mut extra = base.clone();
        extra.tensors.insert("stray".into(), Matrix::zeros(1, 1));
        assert!(extra.validate_census().is_err());

        let mut reshaped = base.clone();
        reshaped.tensors.insert("final.norm".into(), Matrix::zeros(1, 7));
        assert!(reshaped.validate_census().is_err());
    }
}
