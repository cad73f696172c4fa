//! Rotary positional embedding. Coordinate pair (2j, 2j+1) of a head vector
//! is rotated by angle position * theta^(-2j / head_dim), so query/key dot
//! products depend only on relative position. Angles are always computed in
//! f64 regardless of the working precision.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct RopeConfig {
    pub head_dim: usize,
    pub theta: f64,
}

pub const DEFAULT_THETA: f64 = 10000.0;

impl RopeConfig {
    pub fn new(head_dim: usize) -> Result<Self> {
        RopeConfig::with_theta(head_dim, DEFAULT_THETA)
    }

    pub fn with_theta(head_dim: usize, theta: f64) -> Result<Self> {
        if head_dim == 0 || head_dim % 2 != 0 {
            return Err(Error::Config(format!(
                "rope head_dim must be even and positive, got {head_dim}"
            )));
        }
        if theta <= 0.0 {
            return Err(Error::Config(format!("rope theta must be positive, got {theta}")));
        }
        Ok(RopeConfig { head_dim, theta })
    }

    fn angle(&self, position: usize, pair: usize) -> f64 {
        position as f64 * self.theta.powf(-((2 * pair) as f64) / self.head_dim as f64)
    }
}

pub fn rope_apply<T: Scalar>(v: &[T], position: usize, cfg: &RopeConfig) -> Result<Vec<T>> {
    let mut out = v.to_vec();
    rope_rotate(&mut out, position, cfg, false)?;
    Ok(out)
}

/// Backward pass: rotations are orthogonal, so the gradient is the inverse
/// rotation of the upstream gradient.
pub fn rope_unapply<T: Scalar>(v: &[T], position: usize, cfg: &RopeConfig) -> Result<Vec<T>> {
    let mut out = v.to_vec();
    rope_rotate(&mut out, position, cfg, true)?;
    Ok(out)
}

pub(crate) fn rope_rotate<T: Scalar>(
    v: &mut [T],
    position: usize,
    cfg: &RopeConfig,
    inverse: bool,
) -> Result<()> {
    if v.len() != cfg.head_dim {
        return Err(Error::Shape(format!(
            "rope input length {} vs head_dim {}",
            v.len(),
            cfg.head_dim
        )));
    }
    for pair in 0..cfg.head_dim / 2 {
        let mut angle = cfg.angle(position, pair);
        if inverse {
            angle = -angle;
        }
        let (sin, cos) = (T::from_f64(angle.sin()), T::from_f64(angle.cos()));
        let (a, b) = (v[2 * pair], v[2 * pair + 1]);
        v[2 * pair] = a * cos - b * sin;
        v[2 * pair + 1] = a * sin + b * cos;
    }
    Ok(())
}
