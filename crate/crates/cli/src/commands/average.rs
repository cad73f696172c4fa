use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use oelm_core::{average_checkpoints, save_checkpoint};

#[derive(Args)]
pub struct AvgCkptArgs {
    /// Checkpoint files to average (repeat a path to weight it)
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Where the averaged checkpoint is written
    #[arg(short, long)]
    output: PathBuf,
}

pub fn run(args: AvgCkptArgs) -> Result<()> {
    let averaged = average_checkpoints(&args.inputs)?;
    save_checkpoint(&averaged, &args.output)?;
    println!("averaged {} checkpoints into {}", args.inputs.len(), args.output.display());
    Ok(())
}
