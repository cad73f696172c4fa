//! RMSNorm with a learnable gain and no bias: y_j = g_j * x_j / rms(x),
//! rms(x) = sqrt(mean(x^2) + eps).
//!
//! Two evaluation strategies implement the same math. The fused variant makes
//! one reduction pass and one scaled write. The naive variant materializes
//! every elementary step (square, mean, add-eps, rsqrt, scale, gain) as its
//! own full-vector pass with its own intermediate buffer, the shape a graph
//! executor produces when nothing is fused; the benchmark module measures the
//! difference.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct NormGain<T> {
    pub gain: Vec<T>,
    pub eps: T,
}

pub const DEFAULT_EPS: f64 = 1e-6;

impl<T: Scalar> NormGain<T> {
    pub fn ones(len: usize) -> Self {
        NormGain { gain: vec![T::one(); len], eps: T::from_f64(DEFAULT_EPS) }
    }

    pub fn from_slice(gain: &[T]) -> Self {
        NormGain { gain: gain.to_vec(), eps: T::from_f64(DEFAULT_EPS) }
    }
}

/// Which RMSNorm evaluation strategy the inference path uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormVariant {
    Fused,
    Naive,
}

fn check_len<T: Scalar>(x: &[T], norm: &NormGain<T>) -> Result<()> {
    if x.len() != norm.gain.len() {
        return Err(Error::Shape(format!(
            "rmsnorm input length {} vs gain length {}",
            x.len(),
            norm.gain.len()
        )));
    }
    if x.is_empty() {
        return Err(Error::Shape("rmsnorm of empty vector".into()));
    }
    Ok(())
}

pub fn rmsnorm<T: Scalar>(x: &[T], norm: &NormGain<T>) -> Result<Vec<T>> {
    rmsnorm_with(x, norm, NormVariant::Fused)
}

pub fn rmsnorm_with<T: Scalar>(x: &[T], norm: &NormGain<T>, variant: NormVariant) -> Result<Vec<T>> {
    check_len(x, norm)?;
    match variant {
        NormVariant::Fused => {
            // Four independent accumulators break the serial floating-point
            // dependency chain, so the reduction is latency-bound on one
            // lane instead of the whole vector.
            let mut acc = [T::zero(); 4];
            let mut chunks = x.chunks_exact(4);
            for c in &mut chunks {
                acc[0] += c[0] * c[0];
                acc[1] += c[1] * c[1];
                acc[2] += c[2] * c[2];
                acc[3] += c[3] * c[3];
            }
            for &v in chunks.remainder() {
                acc[0] += v * v;
            }
            let sum_sq = (acc[0] + acc[1]) + (acc[2] + acc[3]);
            let scale = (sum_sq / T::from_f64(x.len() as f64) + norm.eps).sqrt().recip();
            Ok(x.iter().zip(norm.gain.iter()).map(|(&v, &g)| g * v * scale).collect())
        }
        NormVariant::Naive => {
            let squared: Vec<T> = x.iter().map(|&v| v * v).collect();
            let mean = squared.iter().copied().sum::<T>() / T::from_f64(x.len() as f64);
            let mean_eps = mean + norm.eps;
            let rsqrt = mean_eps.sqrt().recip();
            let scaled: Vec<T> = x.iter().map(|&v| v * rsqrt).collect();
            Ok(scaled.iter().zip(norm.gain.iter()).map(|(&v, &g)| v * g).collect())
        }
    }
}

/// Gradients of the fused forward. With r = 1/sqrt(mean(x^2) + eps):
/// dx_i = r*g_i*dy_i - x_i*r^3/d * sum_j(dy_j*g_j*x_j); dg_j = dy_j*x_j*r.
pub fn rmsnorm_backward<T: Scalar>(
    x: &[T],
    norm: &NormGain<T>,
    dy: &[T],
) -> Result<(Vec<T>, Vec<T>)> {
    check_len(x, norm)?;
    if dy.len() != x.len() {
        return Err(Error::Shape(format!(
            "rmsnorm gradient length {} vs input length {}",
            dy.len(),
            x.len()
        )));
    }
    let d = T::from_f64(x.len() as f64);
    let mut sum_sq = T::zero();
    for &v in x {
        sum_sq += v * v;
    }
    let r = (sum_sq / d + norm.eps).sqrt().recip();
    let mut dot = T::zero();
    for ((&dyj, &gj), &xj) in dy.iter().zip(norm.gain.iter()).zip(x.iter()) {
        dot += dyj * gj * xj;
    }
    let shrink = r * r * r / d * dot;
    let dx = x
        .iter()
        .zip(norm.gain.iter())
        .zip(dy.iter())
        .map(|((&xi, &gi), &dyi)| r * gi * dyi - xi * shrink)
        .collect();
    let dgain = dy.iter().zip(x.iter()).map(|(&dyj, &xj)| dyj * xj * r).collect();
    Ok((dx, dgain))
}
