//! Desk-scale training loop: step, log, periodically checkpoint.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::Batch;
use crate::error::{Error, Result};
use crate::model::{save_checkpoint, Checkpoint};
use crate::nn::cross_entropy;
use crate::scalar::Scalar;
use crate::train::optimizer::{train_step, OptimizerState};
use crate::train::schedule::TrainSchedule;

/// Knobs for one training run.
#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Optimizer steps to run.
    pub steps: usize,
    /// Save a checkpoint every this many completed steps.
    pub checkpoint_interval: usize,
    /// Where periodic checkpoints go; no directory means no saving.
    pub checkpoint_dir: Option<PathBuf>,
    /// Append one JSON record per step to this file.
    pub log_path: Option<PathBuf>,
}

impl RunOptions {
    pub fn new(steps: usize) -> Self {
        RunOptions { steps, checkpoint_interval: 50, checkpoint_dir: None, log_path: None }
    }
}

/// One line of the append-only loss log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    pub grad_norm: f64,
    pub wall_ms: f64,
}

/// What a finished run reports back.
#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub steps_run: usize,
    pub first_loss: f64,
    pub final_loss: f64,
    /// Paths of every checkpoint saved, in save order.
    pub checkpoints: Vec<PathBuf>,
    /// Per-step training loss.
    pub losses: Vec<f64>,
}

/// Run `opts.steps` optimizer steps, pulling one batch per step. Checkpoints
/// land at every `checkpoint_interval` completed steps plus once at the end
/// if the final step is off the interval grid.
pub fn run_training<T: Scalar>(
    ckpt: &mut Checkpoint<T>,
    batches: &mut dyn Iterator<Item = Batch>,
    sched: &TrainSchedule,
    opts: &RunOptions,
) -> Result<TrainSummary> {
    if opts.steps == 0 {
        return Err(Error::Config("a training run needs at least one step".into()));
    }
    if opts.checkpoint_interval == 0 {
        return Err(Error::Config("checkpoint interval must be positive".into()));
    }
    if let Some(dir) = &opts.checkpoint_dir {
        std::fs::create_dir_all(dir)?;
    }
    let mut log = match &opts.log_path {
        Some(path) => Some(OpenOptions::new().create(true).append(true).open(path)?),
        None => None,
    };
    let mut opt = OptimizerState::new(ckpt);
    let mut losses = Vec::with_capacity(opts.steps);
    let mut checkpoints = Vec::new();
    for step in 0..opts.steps {
        let batch = batches
            .next()
            .ok_or_else(|| Error::Exhausted("batch stream ended before the run did".into()))?;
        let started = Instant::now();
        let report = train_step(ckpt, &mut opt, &batch, sched)?;
        let wall_ms = started.elapsed().as_secs_f64() * 1e3;
        losses.push(report.loss);
        if let Some(file) = log.as_mut() {
            let record = StepRecord {
                step,
                lr: report.lr,
                loss: report.loss,
                grad_norm: report.grad_norm,
                wall_ms,
            };
            let line = serde_json::to_string(&record)
                .map_err(|e| Error::Format(format!("loss log serialization: {e}")))?;
            writeln!(file, "{line}")?;
        }
        let completed = step + 1;
        let on_grid = completed % opts.checkpoint_interval == 0;
        if let Some(dir) = &opts.checkpoint_dir {
            if on_grid || completed == opts.steps {
                let path = dir.join(format!("step_{completed:06}.ckpt"));
                save_checkpoint(ckpt, &path)?;
                checkpoints.push(path);
            }
        }
    }
    Ok(TrainSummary {
        steps_run: opts.steps,
        first_loss: losses[0],
        final_loss: *losses.last().unwrap(),
        checkpoints,
        losses,
    })
}

/// Mean cross-entropy per row over held-out batches; no parameter updates.
pub fn evaluate<T: Scalar>(ckpt: &Checkpoint<T>, batches: &[Batch]) -> Result<f64> {
    let mut sum = 0.0;
    let mut rows = 0usize;
    for batch in batches {
        for r in 0..batch.rows {
            let logits = crate::model::forward(ckpt, batch.input_row(r))?;
            let (loss, _) = cross_entropy(&logits, batch.target_row(r))?;
            sum += loss.into_f64();
            rows += 1;
        }
    }
    if rows == 0 {
        return Err(Error::Config("evaluation needs at least one row".into()));
    }
    Ok(sum / rows as f64)
}
