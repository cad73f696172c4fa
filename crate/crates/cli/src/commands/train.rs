use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use oelm_core::data::{load_sources, mix_stream, pack_batches};
use oelm_core::{init_model, run_training, ByteTokenizer, FilterPolicy, RunOptions};

use crate::config::{
    artifact_record, read_spec, read_train_file, resolve_train, write_manifest, RunManifest,
    TrainFile, TrainOverrides,
};

#[derive(Args)]
pub struct TrainArgs {
    /// Training config file (TOML); flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model spec file
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Data source manifest
    #[arg(long)]
    data: Option<PathBuf>,
    /// Optimizer steps to run
    #[arg(long)]
    steps: Option<usize>,
    /// Save a checkpoint every this many steps
    #[arg(long)]
    checkpoint_interval: Option<usize>,
    /// Seed for init, data mixing, and shuffling
    #[arg(long)]
    seed: Option<u64>,
    /// Tokens per training batch
    #[arg(long)]
    tokens_per_batch: Option<usize>,
    /// Directory for checkpoints, loss log, and manifest
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Peak learning rate
    #[arg(long)]
    max_lr: Option<f64>,
}

pub fn run(args: TrainArgs) -> Result<()> {
    let file = match &args.config {
        Some(path) => read_train_file(path)?,
        None => TrainFile::default(),
    };
    let resolved = resolve_train(
        file,
        TrainOverrides {
            spec: args.spec,
            data: args.data,
            steps: args.steps,
            checkpoint_interval: args.checkpoint_interval,
            seed: args.seed,
            tokens_per_batch: args.tokens_per_batch,
            out_dir: args.out_dir,
            max_lr: args.max_lr,
        },
    )?;
    let config_json = serde_json::to_value(&resolved)?;
    println!("run config: {config_json}");

    let spec = read_spec(&resolved.spec)?;
    let plan = oelm_core::build_plan(&spec)?;
    let mut ckpt = init_model::<f32>(&plan, resolved.seed);

    let sources = load_sources(&resolved.data)?;
    let tokenizer = ByteTokenizer;
    let policy =
        FilterPolicy { min_chars: resolved.min_chars, min_tokens: resolved.min_tokens };
    let stream = mix_stream(&sources, &tokenizer, &policy, resolved.seed)?;
    let mut batches = pack_batches(
        stream,
        Box::new(ByteTokenizer),
        spec.context_length,
        resolved.tokens_per_batch,
    )?;

    std::fs::create_dir_all(&resolved.out_dir)
        .with_context(|| format!("creating {}", resolved.out_dir.display()))?;
    let log_path = resolved.out_dir.join("loss.jsonl");
    let opts = RunOptions {
        steps: resolved.steps,
        checkpoint_interval: resolved.checkpoint_interval,
        checkpoint_dir: Some(resolved.out_dir.clone()),
        log_path: Some(log_path.clone()),
    };
    let summary = run_training(&mut ckpt, &mut batches, &resolved.schedule, &opts)?;

    let mut artifacts = vec![artifact_record(&resolved.out_dir, &log_path)?];
    for ckpt_path in &summary.checkpoints {
        artifacts.push(artifact_record(&resolved.out_dir, ckpt_path)?);
    }
    let manifest =
        RunManifest { command: "train".into(), config: config_json, artifacts };
    write_manifest(&resolved.out_dir, &manifest)?;

    println!(
        "trained {} steps: loss {:.4} -> {:.4}, {} checkpoints in {}",
        summary.steps_run,
        summary.first_loss,
        summary.final_loss,
        summary.checkpoints.len(),
        resolved.out_dir.display()
    );
    Ok(())
}
