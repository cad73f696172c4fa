//! Full-sequence forward pass and KV-cached incremental decoding. Both run
//! through the same layer machinery: new positions write their keys/values
//! into the cache, then attend over everything cached so far.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::attention::{gqa_attention, Heads};
use crate::nn::ffn::swiglu_forward;
use crate::nn::norm::{rmsnorm_with, NormGain, NormVariant};
use crate::nn::rope::{rope_apply, RopeConfig};
use crate::plan::{LayerPlan, ScalePlan};
use crate::scalar::Scalar;

use super::Checkpoint;

/// Per-layer key/value history. Buffers are allocated at full capacity up
/// front; `filled` marks how many positions are live.
#[derive(Debug, Clone)]
pub struct KvCache<T> {
    capacity: usize,
    filled: usize,
    layers: Vec<LayerKv<T>>,
}

#[derive(Debug, Clone)]
struct LayerKv<T> {
    k: Heads<T>,
    v: Heads<T>,
}

impl<T: Scalar> KvCache<T> {
    pub fn new(plan: &ScalePlan, capacity: usize) -> Self {
        let dh = plan.spec.head_dim;
        let layers = plan
            .layers
            .iter()
            .map(|l| LayerKv {
                k: Heads::zeros(l.n_kv_heads, capacity, dh),
                v: Heads::zeros(l.n_kv_heads, capacity, dh),
            })
            .collect();
        KvCache { capacity, filled: 0, layers }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn filled(&self) -> usize {
        self.filled
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }
}

fn gain_of<T: Scalar>(ckpt: &Checkpoint<T>, name: &str) -> Result<NormGain<T>> {
    Ok(NormGain::from_slice(ckpt.tensor(name)?.data()))
}

fn rmsnorm_rows<T: Scalar>(
    x: &Matrix<T>,
    gain: &NormGain<T>,
    variant: NormVariant,
) -> Result<Matrix<T>> {
    let mut out = Matrix::zeros(x.rows(), x.cols());
    for t in 0..x.rows() {
        out.row_mut(t).copy_from_slice(&rmsnorm_with(x.row(t), gain, variant)?);
    }
    Ok(out)
}

/// Normalize each head's slice of a projected row, rotate it for its
/// absolute position, and deposit it in the per-head layout.
fn split_norm_rotate<T: Scalar>(
    flat: &Matrix<T>,
    gain: &NormGain<T>,
    rope: &RopeConfig,
    start_pos: usize,
    n_heads: usize,
    rotate: bool,
    variant: NormVariant,
) -> Result<Heads<T>> {
    let dh = rope.head_dim;
    let mut heads = Heads::zeros(n_heads, flat.rows(), dh);
    for t in 0..flat.rows() {
        let row = flat.row(t);
        for h in 0..n_heads {
            let slice = &row[h * dh..(h + 1) * dh];
            let head_gain = NormGain {
                gain: gain.gain[h * dh..(h + 1) * dh].to_vec(),
                eps: gain.eps,
            };
            let normed = rmsnorm_with(slice, &head_gain, variant)?;
            let placed =
                if rotate { rope_apply(&normed, start_pos + t, rope)? } else { normed };
            heads.at_mut(h, t).copy_from_slice(&placed);
        }
    }
    Ok(heads)
}

fn layer_names(layer: &LayerPlan) -> [String; 11] {
    let i = layer.index;
    [
        format!("layer.{i:02}.attn.norm"),
        format!("layer.{i:02}.attn.wq"),
        format!("layer.{i:02}.attn.wk"),
        format!("layer.{i:02}.attn.wv"),
        format!("layer.{i:02}.attn.q_norm"),
        format!("layer.{i:02}.attn.k_norm"),
        format!("layer.{i:02}.attn.wo"),
        format!("layer.{i:02}.ffn.norm"),
        format!("layer.{i:02}.ffn.w_gate"),
        format!("layer.{i:02}.ffn.w_up"),
        format!("layer.{i:02}.ffn.w_down"),
    ]
}

/// Push `x` (one row per new position) through every layer, appending the
/// new keys/values to `cache`. Returns the final hidden states; the cache's
/// fill point advances by the number of rows.
fn run_layers<T: Scalar>(
    ckpt: &Checkpoint<T>,
    plan: &ScalePlan,
    mut x: Matrix<T>,
    cache: &mut KvCache<T>,
    variant: NormVariant,
) -> Result<Matrix<T>> {
    let t_new = x.rows();
    let start = cache.filled;
    if start + t_new > cache.capacity {
        return Err(Error::Context(format!(
            "cache holds {start} of {} positions, cannot append {t_new}",
            cache.capacity
        )));
    }
    if cache.n_layers() != plan.layers.len() {
        return Err(Error::Shape("cache layer count does not match architecture".into()));
    }
    let dh = plan.spec.head_dim;
    let rope = RopeConfig::new(dh)?;
    for layer in &plan.layers {
        let [attn_norm, wq, wk, wv, q_norm, k_norm, wo, ffn_norm, w_gate, w_up, w_down] =
            layer_names(layer);

        let normed = rmsnorm_rows(&x, &gain_of(ckpt, &attn_norm)?, variant)?;
        let q_flat = normed.matmul(ckpt.tensor(&wq)?)?;
        let k_flat = normed.matmul(ckpt.tensor(&wk)?)?;
        let v_flat = normed.matmul(ckpt.tensor(&wv)?)?;

        let q_heads = split_norm_rotate(
            &q_flat,
            &gain_of(ckpt, &q_norm)?,
            &rope,
            start,
            layer.n_heads,
            true,
            variant,
        )?;
        let k_heads = split_norm_rotate(
            &k_flat,
            &gain_of(ckpt, &k_norm)?,
            &rope,
            start,
            layer.n_kv_heads,
            true,
            variant,
        )?;

        let slot = &mut cache.layers[layer.index];
        for h in 0..layer.n_kv_heads {
            for t in 0..t_new {
                slot.k.at_mut(h, start + t).copy_from_slice(k_heads.at(h, t));
                let v_row = &v_flat.row(t)[h * dh..(h + 1) * dh];
                slot.v.at_mut(h, start + t).copy_from_slice(v_row);
            }
        }

        let attn_heads = gqa_attention(&q_heads, &slot.k, &slot.v, start)?;
        let mut attn_flat = Matrix::zeros(t_new, layer.n_heads * dh);
        for t in 0..t_new {
            let row = attn_flat.row_mut(t);
            for h in 0..layer.n_heads {
                row[h * dh..(h + 1) * dh].copy_from_slice(attn_heads.at(h, t));
            }
        }
        x.add_assign(&attn_flat.matmul(ckpt.tensor(&wo)?)?)?;

        let ffn_in = rmsnorm_rows(&x, &gain_of(ckpt, &ffn_norm)?, variant)?;
        let ffn_out = swiglu_forward(
            &ffn_in,
            ckpt.tensor(&w_gate)?,
            ckpt.tensor(&w_up)?,
            ckpt.tensor(&w_down)?,
        )?;
        x.add_assign(&ffn_out)?;
    }
    cache.filled = start + t_new;
    Ok(x)
}

fn embed_rows<T: Scalar>(ckpt: &Checkpoint<T>, tokens: &[usize]) -> Result<Matrix<T>> {
    let embed = ckpt.tensor("embed.weight")?;
    let vocab = embed.rows();
    let mut x = Matrix::zeros(tokens.len(), embed.cols());
    for (t, &id) in tokens.iter().enumerate() {
        if id >= vocab {
            return Err(Error::Data(format!("token id {id} outside vocabulary of {vocab}")));
        }
        x.row_mut(t).copy_from_slice(embed.row(id));
    }
    Ok(x)
}

/// Final norm plus the logit projection. With weight tying the embedding
/// matrix itself is the projection, so there is exactly one copy to mutate.
fn project_logits<T: Scalar>(
    ckpt: &Checkpoint<T>,
    x: &Matrix<T>,
    variant: NormVariant,
) -> Result<Matrix<T>> {
    let final_normed = rmsnorm_rows(x, &gain_of(ckpt, "final.norm")?, variant)?;
    let head =
        if ckpt.spec.weight_tying { ckpt.tensor("embed.weight")? } else { ckpt.tensor("output.weight")? };
    final_normed.matmul_transpose_b(head)
}

/// Run `tokens` as new positions on top of whatever `cache` already holds.
pub(crate) fn extend_with_cache<T: Scalar>(
    ckpt: &Checkpoint<T>,
    tokens: &[usize],
    cache: &mut KvCache<T>,
) -> Result<Matrix<T>> {
    extend_with_cache_variant(ckpt, tokens, cache, NormVariant::Fused)
}

/// Same append-and-project path with a selectable normalization strategy;
/// the throughput benchmark drives this to compare the two.
pub(crate) fn extend_with_cache_variant<T: Scalar>(
    ckpt: &Checkpoint<T>,
    tokens: &[usize],
    cache: &mut KvCache<T>,
    variant: NormVariant,
) -> Result<Matrix<T>> {
    if tokens.is_empty() {
        return Err(Error::Data("cannot run an empty token sequence".into()));
    }
    let plan = ckpt.plan()?;
    let x = embed_rows(ckpt, tokens)?;
    let hidden = run_layers(ckpt, &plan, x, cache, variant)?;
    project_logits(ckpt, &hidden, variant)
}

/// Logits for every position of a full sequence.
pub fn forward<T: Scalar>(ckpt: &Checkpoint<T>, tokens: &[usize]) -> Result<Matrix<T>> {
    if tokens.len() > ckpt.spec.context_length {
        return Err(Error::Context(format!(
            "sequence of {} exceeds context length {}",
            tokens.len(),
            ckpt.spec.context_length
        )));
    }
    let plan = ckpt.plan()?;
    let mut cache = KvCache::new(&plan, tokens.len());
    extend_with_cache(ckpt, tokens, &mut cache)
}

/// Append one token to the cached history and return the logits row for the
/// next position.
pub fn decode_step<T: Scalar>(
    ckpt: &Checkpoint<T>,
    cache: &mut KvCache<T>,
    token: usize,
) -> Result<Vec<T>> {
    if cache.filled >= cache.capacity {
        return Err(Error::Context(format!("cache full at {} positions", cache.capacity)));
    }
    let logits = extend_with_cache(ckpt, &[token], cache)?;
    Ok(logits.data().to_vec())
}
