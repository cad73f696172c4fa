//! Gradient clipping and the AdamW update with decoupled weight decay.

use indexmap::IndexMap;

use crate::data::Batch;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::Checkpoint;
use crate::scalar::Scalar;

use super::backprop::{loss_and_gradients, Gradients};
use super::schedule::{lr_at, TrainSchedule};

/// First/second moment accumulators, one pair per checkpoint tensor.
#[derive(Debug, Clone)]
pub struct OptimizerState<T> {
    pub m: IndexMap<String, Matrix<T>>,
    pub v: IndexMap<String, Matrix<T>>,
    pub step: u64,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(ckpt: &Checkpoint<T>) -> Self {
        let zeros: IndexMap<String, Matrix<T>> = ckpt
            .tensors
            .iter()
            .map(|(name, t)| (name.clone(), Matrix::zeros(t.rows(), t.cols())))
            .collect();
        OptimizerState { m: zeros.clone(), v: zeros, step: 0 }
    }
}

/// Scale all gradients down to `clip_norm` when the global L2 norm exceeds
/// it; smaller gradient sets pass through untouched (bitwise). Returns the
/// pre-clip norm. Non-finite gradients abort before anything is scaled.
pub fn clip_gradients<T: Scalar>(grads: &mut Gradients<T>, clip_norm: f64) -> Result<f64> {
    if !grads.all_finite() {
        return Err(Error::Numeric("non-finite gradient".into()));
    }
    let norm = grads.global_norm();
    if norm > clip_norm {
        grads.scale(T::from_f64(clip_norm / norm));
    }
    Ok(norm)
}

/// Whether a tensor is exempt from weight decay: norm gains always, and the
/// embedding when it doubles as the (tied) output projection.
fn decay_exempt(name: &str, weight_tying: bool) -> bool {
    name.ends_with("norm") || (weight_tying && name == "embed.weight")
}

/// One AdamW update over every tensor. Decay is decoupled (multiplied by the
/// learning rate, applied directly to the parameter) and skipped for exempt
/// tensors. The state's step counter advances by one.
pub fn adamw_apply<T: Scalar>(
    ckpt: &mut Checkpoint<T>,
    opt: &mut OptimizerState<T>,
    grads: &Gradients<T>,
    lr: f64,
    sched: &TrainSchedule,
) -> Result<()> {
    let t = opt.step + 1;
    let beta1 = sched.adam_beta1;
    let beta2 = sched.adam_beta2;
    let bias1 = 1.0 - beta1.powi(t as i32);
    let bias2 = 1.0 - beta2.powi(t as i32);
    let b1 = T::from_f64(beta1);
    let b2 = T::from_f64(beta2);
    let one_minus_b1 = T::from_f64(1.0 - beta1);
    let one_minus_b2 = T::from_f64(1.0 - beta2);
    let bias1_t = T::from_f64(bias1);
    let bias2_t = T::from_f64(bias2);
    let eps = T::from_f64(sched.adam_epsilon);
    let lr_t = T::from_f64(lr);
    for (name, g) in &grads.tensors {
        let param = ckpt
            .tensors
            .get_mut(name)
            .ok_or_else(|| Error::Shape(format!("gradient for unknown tensor {name}")))?;
        if param.rows() != g.rows() || param.cols() != g.cols() {
            return Err(Error::Shape(format!("gradient shape mismatch for {name}")));
        }
        let decay = if decay_exempt(name, ckpt.spec.weight_tying) {
            T::zero()
        } else {
            T::from_f64(sched.weight_decay)
        };
        let m = opt.m.get_mut(name).expect("moment map mirrors the checkpoint");
        let v = opt.v.get_mut(name).expect("moment map mirrors the checkpoint");
        for ((p, &gi), (mi, vi)) in param
            .data_mut()
            .iter_mut()
            .zip(g.data().iter())
            .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()))
        {
            *mi = b1 * *mi + one_minus_b1 * gi;
            *vi = b2 * *vi + one_minus_b2 * gi * gi;
            let m_hat = *mi / bias1_t;
            let v_hat = *vi / bias2_t;
            *p = *p - lr_t * (m_hat / (v_hat.sqrt() + eps)) - lr_t * decay * *p;
        }
    }
    opt.step = t;
    Ok(())
}

#[derive(Debug, Clone, Copy)]
pub struct StepReport {
    pub loss: f64,
    pub grad_norm: f64,
    pub lr: f64,
}

/// One optimizer step over one batch: forward + loss + backward per row,
/// gradient averaging, clipping, AdamW. The step is atomic: every validation
/// that can fail happens before the first tensor is touched.
pub fn train_step<T: Scalar>(
    ckpt: &mut Checkpoint<T>,
    opt: &mut OptimizerState<T>,
    batch: &Batch,
    sched: &TrainSchedule,
) -> Result<StepReport> {
    train_step_accumulated(ckpt, opt, std::slice::from_ref(batch), sched)
}

/// Gradient accumulation: average gradients across several batches, then
/// apply a single optimizer update.
pub fn train_step_accumulated<T: Scalar>(
    ckpt: &mut Checkpoint<T>,
    opt: &mut OptimizerState<T>,
    batches: &[Batch],
    sched: &TrainSchedule,
) -> Result<StepReport> {
    if batches.is_empty() {
        return Err(Error::Config("gradient accumulation needs at least one batch".into()));
    }
    let lr = lr_at(opt.step as usize, sched)?;
    let mut total = Gradients::zeros_like(ckpt);
    let mut loss_sum = 0.0;
    let mut rows = 0usize;
    for batch in batches {
        for r in 0..batch.rows {
            let (loss, grads) = loss_and_gradients(ckpt, batch.input_row(r), batch.target_row(r))?;
            total.accumulate(&grads)?;
            loss_sum += loss.into_f64();
            rows += 1;
        }
    }
    total.scale(T::from_f64(1.0 / rows as f64));
    let loss = loss_sum / rows as f64;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss {loss}")));
    }
    let grad_norm = clip_gradients(&mut total, sched.clip_norm)?;
    adamw_apply(ckpt, opt, &total, lr, sched)?;
    Ok(StepReport { loss, grad_norm, lr })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_model;
    use crate::plan::{build_plan, ModelSpec};
    use indexmap::IndexMap;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spec() -> ModelSpec {
        ModelSpec {
            d_model: 16,
            num_layers: 2,
            head_dim: 4,
            alpha_min: 0.5,
            alpha_max: 1.0,
            beta_min: 1.0,
            beta_max: 2.0,
            vocab_size: 11,
            context_length: 8,
            kv_group: 2,
            weight_tying: true,
        }
    }

    fn single_tensor_setup(value: f64) -> (Checkpoint<f64>, OptimizerState<f64>) {
        let mut tensors = IndexMap::new();
        tensors.insert("w".to_string(), Matrix::from_vec(1, 1, vec![value]).unwrap());
        let ckpt = Checkpoint { spec: spec(), tensors, format_version: 1 };
        let opt = OptimizerState::new(&ckpt);
        (ckpt, opt)
    }

    fn grad_of(value: f64) -> Gradients<f64> {
        let mut tensors = IndexMap::new();
        tensors.insert("w".to_string(), Matrix::from_vec(1, 1, vec![value]).unwrap());
        Gradients { tensors }
    }

    #[test]
    fn small_gradients_pass_through_clipping_unchanged() {
        let mut g = grad_of(0.5);
        let norm = clip_gradients(&mut g, 1.0).unwrap();
        assert_eq!(norm, 0.5);
        assert_eq!(g.get("w").unwrap().get(0, 0), 0.5);
    }

    #[test]
    fn oversized_gradients_are_scaled_onto_the_clip_sphere() {
        let mut tensors = IndexMap::new();
        tensors.insert("w".to_string(), Matrix::from_vec(1, 2, vec![3.0f64, 4.0]).unwrap());
        let mut g = Gradients { tensors };
        let norm = clip_gradients(&mut g, 1.0).unwrap();
        assert!((norm - 5.0).abs() < 1e-12);
        let w = g.get("w").unwrap();
        assert!((w.get(0, 0) - 0.6).abs() < 1e-12);
        assert!((w.get(0, 1) - 0.8).abs() < 1e-12);
        assert!((g.global_norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn clipping_never_increases_the_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(60);
        for _ in 0..50 {
            let scale = 10f64.powf(rng.gen_range(-3.0..3.0));
            let mut g = grad_of(rng.gen_range(-1.0..1.0) * scale);
            let before = g.global_norm();
            clip_gradients(&mut g, 1.0).unwrap();
            assert!(g.global_norm() <= before.max(1.0) + 1e-12);
        }
    }

    #[test]
    fn non_finite_gradients_abort_with_a_numeric_error() {
        let mut g = grad_of(f64::NAN);
        assert!(matches!(clip_gradients(&mut g, 1.0), Err(Error::Numeric(_))));
        let mut g = grad_of(f64::INFINITY);
        assert!(matches!(clip_gradients(&mut g, 1.0), Err(Error::Numeric(_))));
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_bit_identical() {
        let (mut ckpt, mut opt) = single_tensor_setup(0.75);
        let mut sched = TrainSchedule::new(0.01, 1e-6, 2, 10);
        sched.weight_decay = 0.3;
        let before = ckpt.clone();
        for _ in 0..3 {
            adamw_apply(&mut ckpt, &mut opt, &grad_of(1.25), 0.0, &sched).unwrap();
        }
        // Decoupled decay multiplies by the learning rate, so lr = 0 freezes
        // the parameters even with a large decay coefficient.
        assert_eq!(ckpt.tensors, before.tensors);
        assert_eq!(opt.step, 3);
    }

    #[test]
    fn update_matches_a_hand_rolled_reference_on_a_quadratic() {
        // Minimize 0.5 * w^2 (gradient = w) with decay 0 over 100 steps.
        let (mut ckpt, mut opt) = single_tensor_setup(1.0);
        let mut sched = TrainSchedule::new(0.1, 1e-6, 2, 1000);
        sched.weight_decay = 0.0;
        let lr = 0.05;

        let (mut w_ref, mut m_ref, mut v_ref) = (1.0f64, 0.0f64, 0.0f64);
        for t in 1..=100 {
            let g = ckpt.tensor("w").unwrap().get(0, 0);
            adamw_apply(&mut ckpt, &mut opt, &grad_of(g), lr, &sched).unwrap();

            let g_ref = w_ref;
            m_ref = 0.9 * m_ref + 0.1 * g_ref;
            v_ref = 0.95 * v_ref + 0.05 * g_ref * g_ref;
            let m_hat = m_ref / (1.0 - 0.9f64.powi(t));
            let v_hat = v_ref / (1.0 - 0.95f64.powi(t));
            w_ref -= lr * m_hat / (v_hat.sqrt() + 1e-8);

            let w = ckpt.tensor("w").unwrap().get(0, 0);
            assert!((w - w_ref).abs() <= 1e-12, "step {t}: {w} vs {w_ref}");
        }
        // The iterate should actually have made progress toward the minimum.
        assert!(ckpt.tensor("w").unwrap().get(0, 0).abs() < 1.0);
    }

    #[test]
    fn norm_gains_and_tied_embedding_skip_weight_decay() {
        let plan = build_plan(&spec()).unwrap();
        let mut ckpt = init_model::<f64>(&plan, 61);
        let mut opt = OptimizerState::new(&ckpt);
        let mut sched = TrainSchedule::new(0.01, 1e-6, 2, 10);
        sched.weight_decay = 0.5;
        let before = ckpt.clone();
        // Zero gradients isolate the decay term: only decayed tensors move.
        let grads = Gradients::zeros_like(&ckpt);
        adamw_apply(&mut ckpt, &mut opt, &grads, 0.01, &sched).unwrap();
        for (name, tensor) in &ckpt.tensors {
            let unchanged = tensor == before.tensor(name).unwrap();
            let exempt = name.ends_with("norm") || name == "embed.weight";
            assert_eq!(unchanged, exempt, "{name}");
        }
    }

    #[test]
    fn training_steps_reduce_loss_and_are_deterministic() {
        let plan = build_plan(&spec()).unwrap();
        let run = || -> Vec<f64> {
            let mut ckpt = init_model::<f64>(&plan, 62);
            let mut opt = OptimizerState::new(&ckpt);
            let sched = TrainSchedule::new(0.01, 1e-4, 2, 40);
            let batch = Batch {
                rows: 2,
                context: 6,
                inputs: vec![1, 2, 3, 4, 5, 6, 2, 4, 6, 8, 10, 1],
                targets: vec![2, 3, 4, 5, 6, 1, 4, 6, 8, 10, 1, 2],
                separator_id: 10,
            };
            (0..30).map(|_| train_step(&mut ckpt, &mut opt, &batch, &sched).unwrap().loss).collect()
        };
        let a = run();
        let b = run();
        assert_eq!(a, b, "training is not deterministic");
        assert!(a[29] < 0.8 * a[0], "loss failed to fall: {} -> {}", a[0], a[29]);
    }

    #[test]
    fn accumulated_step_averages_across_batches() {
        let plan = build_plan(&spec()).unwrap();
        let batch1 = Batch {
            rows: 1,
            context: 4,
            inputs: vec![1, 2, 3, 4],
            targets: vec![2, 3, 4, 5],
            separator_id: 10,
        };
        let batch2 = Batch {
            rows: 1,
            context: 4,
            inputs: vec![5, 6, 7, 8],
            targets: vec![6, 7, 8, 9],
            separator_id: 10,
        };
        let sched = TrainSchedule::new(0.005, 1e-5, 2, 20);

        // Accumulating [b1, b2] must equal a single step over the merged
        // two-row batch: identical averaging, identical update.
        let mut ckpt_a = init_model::<f64>(&plan, 63);
        let mut opt_a = OptimizerState::new(&ckpt_a);
        let report_a =
            train_step_accumulated(&mut ckpt_a, &mut opt_a, &[batch1.clone(), batch2.clone()], &sched)
                .unwrap();

        let merged = Batch {
            rows: 2,
            context: 4,
            inputs: vec![1, 2, 3, 4, 5, 6, 7, 8],
            targets: vec![2, 3, 4, 5, 6, 7, 8, 9],
            separator_id: 10,
        };
        let mut ckpt_b = init_model::<f64>(&plan, 63);
        let mut opt_b = OptimizerState::new(&ckpt_b);
        let report_b = train_step(&mut ckpt_b, &mut opt_b, &merged, &sched).unwrap();

        assert_eq!(report_a.loss, report_b.loss);
        assert_eq!(ckpt_a.tensors, ckpt_b.tensors);
    }

    #[test]
    fn failed_steps_leave_parameters_untouched() {
        let plan = build_plan(&spec()).unwrap();
        let mut ckpt = init_model::<f64>(&plan, 64);
        // Poison one weight so the forward pass yields non-finite loss.
        ckpt.tensor_mut("layer.00.ffn.w_up").unwrap().data_mut()[0] = f64::NAN;
        let before = ckpt.clone();
        let mut opt = OptimizerState::new(&ckpt);
        let sched = TrainSchedule::new(0.01, 1e-5, 2, 20);
        let batch = Batch {
            rows: 1,
            context: 4,
            inputs: vec![1, 2, 3, 4],
            targets: vec![2, 3, 4, 5],
            separator_id: 10,
        };
        let err = train_step(&mut ckpt, &mut opt, &batch, &sched).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)), "{err}");
        // Bitwise comparison: the poisoned NaN makes == useless here.
        for (name, m) in &before.tensors {
            let after = ckpt.tensor(name).unwrap();
            let same =
                m.data().iter().zip(after.data()).all(|(a, b)| a.to_bits() == b.to_bits());
            assert!(same, "failed step mutated {name}");
        }
        assert_eq!(opt.step, 0);
    }
}
