//! Reverse-mode differentiation of the full model. The forward pass records
//! a tape of per-layer intermediates; the backward pass walks it in reverse
//! and produces a gradient tensor for every checkpoint tensor.
//!
//! The tape forward performs arithmetic in exactly the same order as the
//! inference path, so the two agree bitwise; a test pins that equality.

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::Checkpoint;
use crate::nn::attention::{gqa_attention, gqa_attention_backward, Heads};
use crate::nn::ffn::{swiglu_backward, swiglu_forward};
use crate::nn::loss::cross_entropy;
use crate::nn::norm::{rmsnorm, rmsnorm_backward, NormGain};
use crate::nn::rope::{rope_apply, rope_unapply, RopeConfig};
use crate::scalar::Scalar;

/// One gradient tensor per checkpoint tensor, same names and shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub tensors: IndexMap<String, Matrix<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(ckpt: &Checkpoint<T>) -> Self {
        let tensors = ckpt
            .tensors
            .iter()
            .map(|(name, m)| (name.clone(), Matrix::zeros(m.rows(), m.cols())))
            .collect();
        Gradients { tensors }
    }

    pub fn get(&self, name: &str) -> Result<&Matrix<T>> {
        self.tensors.get(name).ok_or_else(|| Error::Shape(format!("no gradient for {name}")))
    }

    fn slot(&mut self, name: &str) -> &mut Matrix<T> {
        self.tensors.get_mut(name).expect("gradient map mirrors the checkpoint")
    }

    pub fn accumulate(&mut self, other: &Gradients<T>) -> Result<()> {
        if self.tensors.len() != other.tensors.len() {
            return Err(Error::Shape("gradient sets differ in tensor count".into()));
        }
        for (name, m) in &other.tensors {
            self.slot(name).add_assign(m)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: T) {
        for m in self.tensors.values_mut() {
            m.scale_assign(factor);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(Matrix::all_finite)
    }

    /// Global L2 norm across every tensor, accumulated in 64-bit.
    pub fn global_norm(&self) -> f64 {
        self.tensors
            .values()
            .flat_map(|m| m.data().iter())
            .map(|&v| {
                let f = v.into_f64();
                f * f
            })
            .sum::<f64>()
            .sqrt()
    }
}

struct LayerTape<T> {
    x_in: Matrix<T>,
    attn_normed: Matrix<T>,
    q_flat: Matrix<T>,
    k_flat: Matrix<T>,
    v_flat: Matrix<T>,
    q_rot: Heads<T>,
    k_rot: Heads<T>,
    attn_flat: Matrix<T>,
    x_mid: Matrix<T>,
    ffn_normed: Matrix<T>,
}

/// Everything the backward pass needs, captured during one full-sequence
/// forward evaluation.
pub struct Tape<T> {
    tokens: Vec<usize>,
    layers: Vec<LayerTape<T>>,
    final_hidden: Matrix<T>,
    final_normed: Matrix<T>,
    pub logits: Matrix<T>,
}

fn gain_of<T: Scalar>(ckpt: &Checkpoint<T>, name: &str) -> Result<NormGain<T>> {
    Ok(NormGain::from_slice(ckpt.tensor(name)?.data()))
}

fn rmsnorm_rows<T: Scalar>(x: &Matrix<T>, gain: &NormGain<T>) -> Result<Matrix<T>> {
    let mut out = Matrix::zeros(x.rows(), x.cols());
    for t in 0..x.rows() {
        out.row_mut(t).copy_from_slice(&rmsnorm(x.row(t), gain)?);
    }
    Ok(out)
}

fn head_gain<T: Scalar>(gain: &NormGain<T>, h: usize, dh: usize) -> NormGain<T> {
    NormGain { gain: gain.gain[h * dh..(h + 1) * dh].to_vec(), eps: gain.eps }
}

/// Per-head norm + rotation, mirroring the inference path exactly.
fn split_norm_rotate<T: Scalar>(
    flat: &Matrix<T>,
    gain: &NormGain<T>,
    rope: &RopeConfig,
    n_heads: usize,
) -> Result<Heads<T>> {
    let dh = rope.head_dim;
    let mut heads = Heads::zeros(n_heads, flat.rows(), dh);
    for t in 0..flat.rows() {
        let row = flat.row(t);
        for h in 0..n_heads {
            let normed = rmsnorm(&row[h * dh..(h + 1) * dh], &head_gain(gain, h, dh))?;
            heads.at_mut(h, t).copy_from_slice(&rope_apply(&normed, t, rope)?);
        }
    }
    Ok(heads)
}

fn flat_to_heads<T: Scalar>(flat: &Matrix<T>, n_heads: usize, dh: usize) -> Heads<T> {
    let mut heads = Heads::zeros(n_heads, flat.rows(), dh);
    for t in 0..flat.rows() {
        let row = flat.row(t);
        for h in 0..n_heads {
            heads.at_mut(h, t).copy_from_slice(&row[h * dh..(h + 1) * dh]);
        }
    }
    heads
}

fn heads_to_flat<T: Scalar>(heads: &Heads<T>) -> Matrix<T> {
    let dh = heads.head_dim;
    let mut flat = Matrix::zeros(heads.seq, heads.n_heads * dh);
    for t in 0..heads.seq {
        let row = flat.row_mut(t);
        for h in 0..heads.n_heads {
            row[h * dh..(h + 1) * dh].copy_from_slice(heads.at(h, t));
        }
    }
    flat
}

/// Full-sequence forward pass that records intermediates for [`backward`].
pub fn forward_tape<T: Scalar>(ckpt: &Checkpoint<T>, tokens: &[usize]) -> Result<Tape<T>> {
    if tokens.is_empty() {
        return Err(Error::Data("cannot run an empty token sequence".into()));
    }
    if tokens.len() > ckpt.spec.context_length {
        return Err(Error::Context(format!(
            "sequence of {} exceeds context length {}",
            tokens.len(),
            ckpt.spec.context_length
        )));
    }
    let plan = ckpt.plan()?;
    let dh = plan.spec.head_dim;
    let rope = RopeConfig::new(dh)?;
    let embed = ckpt.tensor("embed.weight")?;
    let vocab = embed.rows();
    let mut x = Matrix::zeros(tokens.len(), embed.cols());
    for (t, &id) in tokens.iter().enumerate() {
        if id >= vocab {
            return Err(Error::Data(format!("token id {id} outside vocabulary of {vocab}")));
        }
        x.row_mut(t).copy_from_slice(embed.row(id));
    }

    let mut layers = Vec::with_capacity(plan.layers.len());
    for layer in &plan.layers {
        let i = layer.index;
        let name = |part: &str| format!("layer.{i:02}.{part}");
        let x_in = x.clone();
        let attn_normed = rmsnorm_rows(&x_in, &gain_of(ckpt, &name("attn.norm"))?)?;
        let q_flat = attn_normed.matmul(ckpt.tensor(&name("attn.wq"))?)?;
        let k_flat = attn_normed.matmul(ckpt.tensor(&name("attn.wk"))?)?;
        let v_flat = attn_normed.matmul(ckpt.tensor(&name("attn.wv"))?)?;
        let q_rot =
            split_norm_rotate(&q_flat, &gain_of(ckpt, &name("attn.q_norm"))?, &rope, layer.n_heads)?;
        let k_rot = split_norm_rotate(
            &k_flat,
            &gain_of(ckpt, &name("attn.k_norm"))?,
            &rope,
            layer.n_kv_heads,
        )?;
        let v_heads = flat_to_heads(&v_flat, layer.n_kv_heads, dh);
        let attn_heads = gqa_attention(&q_rot, &k_rot, &v_heads, 0)?;
        let attn_flat = heads_to_flat(&attn_heads);
        x.add_assign(&attn_flat.matmul(ckpt.tensor(&name("attn.wo"))?)?)?;
        let x_mid = x.clone();
        let ffn_normed = rmsnorm_rows(&x_mid, &gain_of(ckpt, &name("ffn.norm"))?)?;
        let ffn_out = swiglu_forward(
            &ffn_normed,
            ckpt.tensor(&name("ffn.w_gate"))?,
            ckpt.tensor(&name("ffn.w_up"))?,
            ckpt.tensor(&name("ffn.w_down"))?,
        )?;
        x.add_assign(&ffn_out)?;
        layers.push(LayerTape {
            x_in,
            attn_normed,
            q_flat,
            k_flat,
            v_flat,
            q_rot,
            k_rot,
            attn_flat,
            x_mid,
            ffn_normed,
        });
    }
    let final_hidden = x;
    let final_normed = rmsnorm_rows(&final_hidden, &gain_of(ckpt, "final.norm")?)?;
    let head = if ckpt.spec.weight_tying {
        ckpt.tensor("embed.weight")?
    } else {
        ckpt.tensor("output.weight")?
    };
    let logits = final_normed.matmul_transpose_b(head)?;
    Ok(Tape { tokens: tokens.to_vec(), layers, final_hidden, final_normed, logits })
}

/// Backward through per-head norm + rotation: invert the rotation on the
/// incoming gradient (rotations are orthogonal), then run the norm backward
/// per head slice, accumulating the per-head gain gradients.
fn split_norm_rotate_backward<T: Scalar>(
    flat: &Matrix<T>,
    gain: &NormGain<T>,
    rope: &RopeConfig,
    d_heads: &Heads<T>,
    d_gain_out: &mut Matrix<T>,
) -> Result<Matrix<T>> {
    let dh = rope.head_dim;
    let mut d_flat = Matrix::zeros(flat.rows(), flat.cols());
    for t in 0..flat.rows() {
        let row = flat.row(t);
        let d_row = d_flat.row_mut(t);
        for h in 0..d_heads.n_heads {
            let d_rot = rope_unapply(d_heads.at(h, t), t, rope)?;
            let (dx, dg) = rmsnorm_backward(
                &row[h * dh..(h + 1) * dh],
                &head_gain(gain, h, dh),
                &d_rot,
            )?;
            d_row[h * dh..(h + 1) * dh].copy_from_slice(&dx);
            let gain_row = d_gain_out.row_mut(0);
            for (slot, &g) in gain_row[h * dh..(h + 1) * dh].iter_mut().zip(dg.iter()) {
                *slot += g;
            }
        }
    }
    Ok(d_flat)
}

/// Row-wise norm backward; returns the input gradient and accumulates the
/// gain gradient.
fn rmsnorm_rows_backward<T: Scalar>(
    x: &Matrix<T>,
    gain: &NormGain<T>,
    d_out: &Matrix<T>,
    d_gain_out: &mut Matrix<T>,
) -> Result<Matrix<T>> {
    let mut dx = Matrix::zeros(x.rows(), x.cols());
    for t in 0..x.rows() {
        let (dx_row, dg) = rmsnorm_backward(x.row(t), gain, d_out.row(t))?;
        dx.row_mut(t).copy_from_slice(&dx_row);
        for (slot, &g) in d_gain_out.row_mut(0).iter_mut().zip(dg.iter()) {
            *slot += g;
        }
    }
    Ok(dx)
}

/// Gradients of every checkpoint tensor given the logit gradient.
pub fn backward<T: Scalar>(
    ckpt: &Checkpoint<T>,
    tape: &Tape<T>,
    d_logits: &Matrix<T>,
) -> Result<Gradients<T>> {
    let plan = ckpt.plan()?;
    let dh = plan.spec.head_dim;
    let rope = RopeConfig::new(dh)?;
    let mut grads = Gradients::zeros_like(ckpt);

    // Logit head. With weight tying the projection gradient lands on the
    // embedding tensor; untied models have their own output tensor.
    let head_name = if ckpt.spec.weight_tying { "embed.weight" } else { "output.weight" };
    let head = ckpt.tensor(head_name)?;
    let d_final_normed = d_logits.matmul(head)?;
    grads.slot(head_name).add_assign(&d_logits.matmul_transpose_a(&tape.final_normed)?)?;

    let final_gain = gain_of(ckpt, "final.norm")?;
    let mut d_x = {
        let mut d_gain = Matrix::zeros(1, plan.spec.d_model);
        let dx =
            rmsnorm_rows_backward(&tape.final_hidden, &final_gain, &d_final_normed, &mut d_gain)?;
        grads.slot("final.norm").add_assign(&d_gain)?;
        dx
    };

    for (layer, tape_l) in plan.layers.iter().zip(tape.layers.iter()).rev() {
        let i = layer.index;
        let name = |part: &str| format!("layer.{i:02}.{part}");

        // FFN residual: x_out = x_mid + ffn(ffn_normed).
        let (d_ffn_normed, d_w_gate, d_w_up, d_w_down) = swiglu_backward(
            &tape_l.ffn_normed,
            ckpt.tensor(&name("ffn.w_gate"))?,
            ckpt.tensor(&name("ffn.w_up"))?,
            ckpt.tensor(&name("ffn.w_down"))?,
            &d_x,
        )?;
        grads.slot(&name("ffn.w_gate")).add_assign(&d_w_gate)?;
        grads.slot(&name("ffn.w_up")).add_assign(&d_w_up)?;
        grads.slot(&name("ffn.w_down")).add_assign(&d_w_down)?;
        let mut d_x_mid = {
            let mut d_gain = Matrix::zeros(1, plan.spec.d_model);
            let ffn_gain = gain_of(ckpt, &name("ffn.norm"))?;
            let dx =
                rmsnorm_rows_backward(&tape_l.x_mid, &ffn_gain, &d_ffn_normed, &mut d_gain)?;
            grads.slot(&name("ffn.norm")).add_assign(&d_gain)?;
            dx
        };
        d_x_mid.add_assign(&d_x)?;

        // Attention residual: x_mid = x_in + attn_flat * wo.
        let d_attn_flat = d_x_mid.matmul_transpose_b(ckpt.tensor(&name("attn.wo"))?)?;
        grads
            .slot(&name("attn.wo"))
            .add_assign(&tape_l.attn_flat.matmul_transpose_a(&d_x_mid)?)?;
        let d_attn_heads = flat_to_heads(&d_attn_flat, layer.n_heads, dh);
        let v_heads = flat_to_heads(&tape_l.v_flat, layer.n_kv_heads, dh);
        let (d_q_rot, d_k_rot, d_v_heads) =
            gqa_attention_backward(&tape_l.q_rot, &tape_l.k_rot, &v_heads, 0, &d_attn_heads)?;

        let q_gain = gain_of(ckpt, &name("attn.q_norm"))?;
        let k_gain = gain_of(ckpt, &name("attn.k_norm"))?;
        let mut d_q_gain = Matrix::zeros(1, layer.n_heads * dh);
        let mut d_k_gain = Matrix::zeros(1, layer.n_kv_heads * dh);
        let d_q_flat =
            split_norm_rotate_backward(&tape_l.q_flat, &q_gain, &rope, &d_q_rot, &mut d_q_gain)?;
        let d_k_flat =
            split_norm_rotate_backward(&tape_l.k_flat, &k_gain, &rope, &d_k_rot, &mut d_k_gain)?;
        grads.slot(&name("attn.q_norm")).add_assign(&d_q_gain)?;
        grads.slot(&name("attn.k_norm")).add_assign(&d_k_gain)?;
        let d_v_flat = heads_to_flat(&d_v_heads);

        grads
            .slot(&name("attn.wq"))
            .add_assign(&tape_l.attn_normed.matmul_transpose_a(&d_q_flat)?)?;
        grads
            .slot(&name("attn.wk"))
            .add_assign(&tape_l.attn_normed.matmul_transpose_a(&d_k_flat)?)?;
        grads
            .slot(&name("attn.wv"))
            .add_assign(&tape_l.attn_normed.matmul_transpose_a(&d_v_flat)?)?;

        let mut d_attn_normed = d_q_flat.matmul_transpose_b(ckpt.tensor(&name("attn.wq"))?)?;
        d_attn_normed.add_assign(&d_k_flat.matmul_transpose_b(ckpt.tensor(&name("attn.wk"))?)?)?;
        d_attn_normed.add_assign(&d_v_flat.matmul_transpose_b(ckpt.tensor(&name("attn.wv"))?)?)?;

        let mut d_gain = Matrix::zeros(1, plan.spec.d_model);
        let attn_gain = gain_of(ckpt, &name("attn.norm"))?;
        let mut d_x_in =
            rmsnorm_rows_backward(&tape_l.x_in, &attn_gain, &d_attn_normed, &mut d_gain)?;
        grads.slot(&name("attn.norm")).add_assign(&d_gain)?;
        d_x_in.add_assign(&d_x_mid)?;
        d_x = d_x_in;
    }

    // Embedding lookup: scatter each position's gradient onto its token row.
    let d_embed = grads.slot("embed.weight");
    for (t, &id) in tape.tokens.iter().enumerate() {
        for (slot, &g) in d_embed.row_mut(id).iter_mut().zip(d_x.row(t).iter()) {
            *slot += g;
        }
    }
    Ok(grads)
}

/// Mean cross-entropy of one sequence plus gradients for every tensor.
pub fn loss_and_gradients<T: Scalar>(
    ckpt: &Checkpoint<T>,
    inputs: &[usize],
    targets: &[usize],
) -> Result<(T, Gradients<T>)> {
    let tape = forward_tape(ckpt, inputs)?;
    let (loss, d_logits) = cross_entropy(&tape.logits, targets)?;
    let grads = backward(ckpt, &tape, &d_logits)?;
    Ok((loss, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{forward, init_model};
    use crate::plan::{build_plan, ModelSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_spec(weight_tying: bool) -> ModelSpec {
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
            weight_tying,
        }
    }

    #[test]
    fn tape_forward_matches_inference_forward_bitwise() {
        for tying in [true, false] {
            let plan = build_plan(&small_spec(tying)).unwrap();
            let ckpt = init_model::<f64>(&plan, 50);
            let tokens = [1usize, 5, 2, 9, 0, 7];
            let tape = forward_tape(&ckpt, &tokens).unwrap();
            let direct = forward(&ckpt, &tokens).unwrap();
            assert_eq!(tape.logits, direct);
        }
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        for tying in [true, false] {
            let plan = build_plan(&small_spec(tying)).unwrap();
            let ckpt = init_model::<f64>(&plan, 51);
            let inputs = [3usize, 1, 8, 4, 6];
            let targets = [1usize, 8, 4, 6, 2];
            let (_, grads) = loss_and_gradients(&ckpt, &inputs, &targets).unwrap();

            let loss_of = |c: &Checkpoint<f64>| -> f64 {
                let logits = forward(c, &inputs).unwrap();
                cross_entropy(&logits, &targets).unwrap().0
            };
            let h = 1e-5;
            let mut rng = ChaCha8Rng::seed_from_u64(52);
            for (name, g) in &grads.tensors {
                // Sample a handful of coordinates per tensor.
                for _ in 0..6 {
                    let idx = rng.gen_range(0..g.len());
                    let mut plus = ckpt.clone();
                    plus.tensor_mut(name).unwrap().data_mut()[idx] += h;
                    let mut minus = ckpt.clone();
                    minus.tensor_mut(name).unwrap().data_mut()[idx] -= h;
                    let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
                    let a = g.data()[idx];
                    assert!(
                        (a - fd).abs() <= 1e-4 * fd.abs().max(a.abs()).max(1e-3),
                        "{name}[{idx}]: analytic {a} vs fd {fd} (tying {tying})"
                    );
                }
            }
        }
    }

    #[test]
    fn gradient_set_mirrors_checkpoint_shapes() {
        let plan = build_plan(&small_spec(true)).unwrap();
        let ckpt = init_model::<f64>(&plan, 53);
        let (_, grads) = loss_and_gradients(&ckpt, &[1, 2, 3], &[2, 3, 4]).unwrap();
        assert_eq!(grads.tensors.len(), ckpt.tensors.len());
        for (name, m) in &ckpt.tensors {
            let g = grads.get(name).unwrap();
            assert_eq!((g.rows(), g.cols()), (m.rows(), m.cols()), "{name}");
        }
        assert!(grads.all_finite());
        assert!(grads.global_norm() > 0.0);
    }

    #[test]
    fn accumulate_and_scale_follow_linear_arithmetic() {
        let plan = build_plan(&small_spec(true)).unwrap();
        let ckpt = init_model::<f64>(&plan, 54);
        let (_, g1) = loss_and_gradients(&ckpt, &[1, 2], &[2, 3]).unwrap();
        let (_, g2) = loss_and_gradients(&ckpt, &[4, 5], &[5, 6]).unwrap();
        let mut sum = g1.clone();
        sum.accumulate(&g2).unwrap();
        sum.scale(0.5);
        let direct = 0.5 * (g1.get("final.norm").unwrap().get(0, 3)
            + g2.get("final.norm").unwrap().get(0, 3));
        assert!((sum.get("final.norm").unwrap().get(0, 3) - direct).abs() < 1e-15);
    }
}
