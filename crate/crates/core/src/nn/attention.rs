//! Grouped-query causal attention. Query head h reads the key/value head
//! h / (n_heads / n_kv_heads); scores are scaled by 1/sqrt(head_dim), the
//! causal mask forbids attending past the query's own absolute position, and
//! softmax uses max subtraction.
//!
//! `causal_offset` places the query block inside a longer key/value history:
//! query row t sits at absolute position causal_offset + t and may attend to
//! keys 0..=causal_offset+t. A full-sequence pass uses offset 0; incremental
//! decoding passes the number of previously cached positions.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Per-head sequence tensor, laid out [head][position][coordinate].
#[derive(Debug, Clone, PartialEq)]
pub struct Heads<T> {
    pub n_heads: usize,
    pub seq: usize,
    pub head_dim: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Heads<T> {
    pub fn zeros(n_heads: usize, seq: usize, head_dim: usize) -> Self {
        Heads { n_heads, seq, head_dim, data: vec![T::zero(); n_heads * seq * head_dim] }
    }

    pub fn head(&self, h: usize) -> &[T] {
        let stride = self.seq * self.head_dim;
        &self.data[h * stride..(h + 1) * stride]
    }

    pub fn head_mut(&mut self, h: usize) -> &mut [T] {
        let stride = self.seq * self.head_dim;
        &mut self.data[h * stride..(h + 1) * stride]
    }

    pub fn at(&self, h: usize, t: usize) -> &[T] {
        let start = (h * self.seq + t) * self.head_dim;
        &self.data[start..start + self.head_dim]
    }

    pub fn at_mut(&mut self, h: usize, t: usize) -> &mut [T] {
        let start = (h * self.seq + t) * self.head_dim;
        &mut self.data[start..start + self.head_dim]
    }
}

fn validate<T: Scalar>(q: &Heads<T>, k: &Heads<T>, v: &Heads<T>, causal_offset: usize) -> Result<usize> {
    if k.n_heads != v.n_heads || k.seq != v.seq || k.head_dim != v.head_dim {
        return Err(Error::Shape("attention: K and V disagree".into()));
    }
    if q.head_dim != k.head_dim {
        return Err(Error::Shape(format!(
            "attention: head_dim {} vs {}",
            q.head_dim, k.head_dim
        )));
    }
    if k.n_heads == 0 || q.n_heads % k.n_heads != 0 {
        return Err(Error::Shape(format!(
            "attention: {} query heads not divisible by {} KV heads",
            q.n_heads, k.n_heads
        )));
    }
    if k.seq < q.seq + causal_offset {
        return Err(Error::Shape(format!(
            "attention: {} keys cannot cover {} queries at offset {causal_offset}",
            k.seq, q.seq
        )));
    }
    Ok(q.n_heads / k.n_heads)
}

/// Softmax probabilities for one query row over its allowed positions.
/// Entries beyond the causal horizon are never produced at all, which is the
/// "masked entries exactly zero" guarantee.
pub(crate) fn head_row_probs<T: Scalar>(
    q_row: &[T],
    k_head: &[T],
    head_dim: usize,
    allowed: usize,
) -> Vec<T> {
    let inv_sqrt = T::from_f64(1.0 / (head_dim as f64).sqrt());
    let mut scores = Vec::with_capacity(allowed);
    for j in 0..allowed {
        let k_row = &k_head[j * head_dim..(j + 1) * head_dim];
        let mut dot = T::zero();
        for (&a, &b) in q_row.iter().zip(k_row.iter()) {
            dot += a * b;
        }
        scores.push(dot * inv_sqrt);
    }
    let max = scores.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for s in &mut scores {
        *s = (*s - max).exp();
        sum += *s;
    }
    for s in &mut scores {
        *s /= sum;
    }
    scores
}

/// Attention for one (query head, KV head) pair over contiguous buffers.
pub(crate) fn attend_head<T: Scalar>(
    q_head: &[T],
    k_head: &[T],
    v_head: &[T],
    t_q: usize,
    head_dim: usize,
    causal_offset: usize,
    out_head: &mut [T],
) {
    for t in 0..t_q {
        let q_row = &q_head[t * head_dim..(t + 1) * head_dim];
        let probs = head_row_probs(q_row, k_head, head_dim, causal_offset + t + 1);
        let out_row = &mut out_head[t * head_dim..(t + 1) * head_dim];
        out_row.fill(T::zero());
        for (j, &p) in probs.iter().enumerate() {
            let v_row = &v_head[j * head_dim..(j + 1) * head_dim];
            for (o, &vv) in out_row.iter_mut().zip(v_row.iter()) {
                *o += p * vv;
            }
        }
    }
}

pub fn gqa_attention<T: Scalar>(
    q: &Heads<T>,
    k: &Heads<T>,
    v: &Heads<T>,
    causal_offset: usize,
) -> Result<Heads<T>> {
    let group = validate(q, k, v, causal_offset)?;
    let mut out = Heads::zeros(q.n_heads, q.seq, q.head_dim);
    for h in 0..q.n_heads {
        let kv = h / group;
        attend_head(
            q.head(h),
            k.head(kv),
            v.head(kv),
            q.seq,
            q.head_dim,
            causal_offset,
            out.head_mut(h),
        );
    }
    Ok(out)
}

/// Gradients with respect to Q, K, V given the output gradient. Probabilities
/// are recomputed rather than stored; KV gradients accumulate across the
/// query heads sharing each KV head.
pub fn gqa_attention_backward<T: Scalar>(
    q: &Heads<T>,
    k: &Heads<T>,
    v: &Heads<T>,
    causal_offset: usize,
    d_out: &Heads<T>,
) -> Result<(Heads<T>, Heads<T>, Heads<T>)> {
    let group = validate(q, k, v, causal_offset)?;
    if d_out.n_heads != q.n_heads || d_out.seq != q.seq || d_out.head_dim != q.head_dim {
        return Err(Error::Shape("attention backward: gradient shape mismatch".into()));
    }
    let dh = q.head_dim;
    let inv_sqrt = T::from_f64(1.0 / (dh as f64).sqrt());
    let mut dq = Heads::zeros(q.n_heads, q.seq, dh);
    let mut dk = Heads::zeros(k.n_heads, k.seq, dh);
    let mut dv = Heads::zeros(v.n_heads, v.seq, dh);
    for h in 0..q.n_heads {
        let kv = h / group;
        for t in 0..q.seq {
            let allowed = causal_offset + t + 1;
            let q_row = q.at(h, t);
            let probs = head_row_probs(q_row, k.head(kv), dh, allowed);
            let d_row = d_out.at(h, t);
            // dp_j = dOut . v_j, then softmax backward:
            // ds_j = p_j * (dp_j - sum_i dp_i p_i).
            let mut dp = Vec::with_capacity(allowed);
            let mut dot_dp_p = T::zero();
            for (j, &p) in probs.iter().enumerate() {
                let v_row = v.at(kv, j);
                let mut acc = T::zero();
                for (&dr, &vv) in d_row.iter().zip(v_row.iter()) {
                    acc += dr * vv;
                }
                dp.push(acc);
                dot_dp_p += acc * p;
            }
            for j in 0..allowed {
                let ds = probs[j] * (dp[j] - dot_dp_p) * inv_sqrt;
                let k_row = k.at(kv, j);
                let dq_row = dq.at_mut(h, t);
                for (dqv, &kv_val) in dq_row.iter_mut().zip(k_row.iter()) {
                    *dqv += ds * kv_val;
                }
                let dk_row = dk.at_mut(kv, j);
                for (dkv, &qv) in dk_row.iter_mut().zip(q_row.iter()) {
                    *dkv += ds * qv;
                }
                let p = probs[j];
                let dv_row = dv.at_mut(kv, j);
                for (dvv, &dr) in dv_row.iter_mut().zip(d_row.iter()) {
                    *dvv += p * dr;
                }
            }
        }
    }
    Ok((dq, dk, dv))
}
