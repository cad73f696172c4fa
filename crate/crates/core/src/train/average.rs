//! Checkpoint averaging: the evaluation model is the elementwise mean of the
//! last few periodic checkpoints.

use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{load_checkpoint, Checkpoint};

/// Elementwise arithmetic mean of every tensor across the given checkpoint
/// files. All files must carry the same architecture. Accumulation runs in
/// 64-bit so the mean of k identical checkpoints reproduces them bit-exactly.
pub fn average_checkpoints(paths: &[PathBuf]) -> Result<Checkpoint<f32>> {
    if paths.is_empty() {
        return Err(Error::Format("checkpoint averaging needs at least one file".into()));
    }
    let first = load_checkpoint(&paths[0])?;
    let mut sums: Vec<Vec<f64>> =
        first.tensors.values().map(|m| m.data().iter().map(|&v| v as f64).collect()).collect();
    for path in &paths[1..] {
        let next = load_checkpoint(path)?;
        if next.spec != first.spec {
            return Err(Error::Format(format!(
                "{}: architecture differs from {}",
                path.display(),
                paths[0].display()
            )));
        }
        for (sum, (_, m)) in sums.iter_mut().zip(next.tensors.iter()) {
            for (s, &v) in sum.iter_mut().zip(m.data().iter()) {
                *s += v as f64;
            }
        }
    }
    let k = paths.len() as f64;
    let mut out = first;
    for (sum, (_, m)) in sums.iter().zip(out.tensors.iter_mut()) {
        let data: Vec<f32> = sum.iter().map(|&s| (s / k) as f32).collect();
        *m = Matrix::from_vec(m.rows(), m.cols(), data)?;
    }
    Ok(out)
}
