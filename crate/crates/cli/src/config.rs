//! Layered configuration and run manifests. Values resolve as compiled
//! defaults, overridden by the config file, overridden by command-line
//! flags; the fully resolved form is echoed to stdout and recorded in the
//! manifest together with a checksum of every artifact the run produced.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use oelm_core::{Error, ModelSpec, TrainSchedule};
use serde::{Deserialize, Serialize};

pub fn read_spec(path: &Path) -> Result<ModelSpec> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let spec: ModelSpec = toml::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    Ok(spec)
}

/// On-disk shape of a training config file. Everything is optional; missing
/// values fall back to compiled defaults unless a flag supplies them.
#[derive(Debug, Clone, Default, Deserialize)]
pub struct TrainFile {
    pub spec: Option<PathBuf>,
    pub data: Option<PathBuf>,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub schedule: ScheduleSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct RunSection {
    pub steps: Option<usize>,
    pub checkpoint_interval: Option<usize>,
    pub seed: Option<u64>,
    pub tokens_per_batch: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub min_chars: Option<usize>,
    pub min_tokens: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct ScheduleSection {
    pub max_lr: Option<f64>,
    pub warmup_init_lr: Option<f64>,
    pub warmup_steps: Option<usize>,
    pub total_steps: Option<usize>,
    pub final_lr_fraction: Option<f64>,
    pub weight_decay: Option<f64>,
    pub clip_norm: Option<f64>,
    pub adam_beta1: Option<f64>,
    pub adam_beta2: Option<f64>,
    pub adam_epsilon: Option<f64>,
}

pub fn read_train_file(path: &Path) -> Result<TrainFile> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let file: TrainFile = toml::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    Ok(file)
}

/// A training run with every knob pinned down.
#[derive(Debug, Clone, Serialize)]
pub struct ResolvedTrain {
    pub spec: PathBuf,
    pub data: PathBuf,
    pub steps: usize,
    pub checkpoint_interval: usize,
    pub seed: u64,
    pub tokens_per_batch: usize,
    pub out_dir: PathBuf,
    pub min_chars: usize,
    pub min_tokens: usize,
    pub schedule: TrainSchedule,
}

pub struct TrainOverrides {
    pub spec: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub steps: Option<usize>,
    pub checkpoint_interval: Option<usize>,
    pub seed: Option<u64>,
    pub tokens_per_batch: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub max_lr: Option<f64>,
}

fn pick<T>(default: T, file: Option<T>, flag: Option<T>) -> T {
    flag.or(file).unwrap_or(default)
}

pub fn resolve_train(file: TrainFile, flags: TrainOverrides) -> Result<ResolvedTrain> {
    let spec = flags
        .spec
        .or(file.spec)
        .ok_or_else(|| Error::Config("no model spec given (flag --spec or config key)".into()))?;
    let data = flags
        .data
        .or(file.data)
        .ok_or_else(|| Error::Config("no data manifest given (flag --data or config key)".into()))?;
    let steps = pick(200, file.run.steps, flags.steps);
    let schedule = TrainSchedule {
        max_lr: pick(1e-3, file.schedule.max_lr, flags.max_lr),
        warmup_init_lr: file.schedule.warmup_init_lr.unwrap_or(1e-6),
        // Default warmup: a tenth of the run, at least one step when the
        // schedule has room for it (warmup must end before total_steps).
        warmup_steps: file
            .schedule
            .warmup_steps
            .unwrap_or_else(|| (steps / 10).max(1).min(steps.saturating_sub(1))),
        total_steps: file.schedule.total_steps.unwrap_or(steps),
        final_lr_fraction: file.schedule.final_lr_fraction.unwrap_or(0.1),
        weight_decay: file.schedule.weight_decay.unwrap_or(0.1),
        clip_norm: file.schedule.clip_norm.unwrap_or(1.0),
        adam_beta1: file.schedule.adam_beta1.unwrap_or(0.9),
        adam_beta2: file.schedule.adam_beta2.unwrap_or(0.95),
        adam_epsilon: file.schedule.adam_epsilon.unwrap_or(1e-8),
    };
    Ok(ResolvedTrain {
        spec,
        data,
        steps,
        checkpoint_interval: pick(50, file.run.checkpoint_interval, flags.checkpoint_interval),
        seed: pick(0, file.run.seed, flags.seed),
        tokens_per_batch: pick(256, file.run.tokens_per_batch, flags.tokens_per_batch),
        out_dir: pick(PathBuf::from("oelm-run"), file.run.out_dir, flags.out_dir),
        min_chars: file.run.min_chars.unwrap_or(200),
        min_tokens: file.run.min_tokens.unwrap_or(256),
        schedule,
    })
}

#[derive(Debug, Serialize)]
pub struct ArtifactRecord {
    /// Path relative to the manifest's directory.
    pub path: String,
    pub bytes: u64,
    pub crc32: u32,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub artifacts: Vec<ArtifactRecord>,
}

pub fn artifact_record(base: &Path, file: &Path) -> Result<ArtifactRecord> {
    let bytes = std::fs::read(file)
        .with_context(|| format!("checksumming {}", file.display()))?;
    let rel = file.strip_prefix(base).unwrap_or(file);
    Ok(ArtifactRecord {
        path: rel.to_string_lossy().into_owned(),
        bytes: bytes.len() as u64,
        crc32: crc32fast::hash(&bytes),
    })
}

/// Serialize the manifest as `manifest.json` in the run directory.
pub fn write_manifest(dir: &Path, manifest: &RunManifest) -> Result<PathBuf> {
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(manifest)?;
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}
