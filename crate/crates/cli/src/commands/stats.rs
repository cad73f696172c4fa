use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use oelm_core::data::{filter_stats, load_sources};
use oelm_core::{ByteTokenizer, FilterPolicy};

#[derive(Args)]
pub struct FilterStatsArgs {
    /// Data source manifest (TOML)
    #[arg(long)]
    data: PathBuf,
    /// Keep only documents with strictly more characters than this
    #[arg(long, default_value_t = 200)]
    min_chars: usize,
    /// Keep only documents with strictly more tokens than this
    #[arg(long, default_value_t = 256)]
    min_tokens: usize,
}

pub fn run(args: FilterStatsArgs) -> Result<()> {
    let sources = load_sources(&args.data)?;
    let policy = FilterPolicy { min_chars: args.min_chars, min_tokens: args.min_tokens };
    let stats = filter_stats(&sources, &ByteTokenizer, &policy)?;
    println!("source  kept  skipped_chars  skipped_tokens  total");
    for (name, s) in &stats {
        println!(
            "{:<6}  {:<4}  {:<13}  {:<14}  {}",
            name,
            s.kept,
            s.skipped_chars,
            s.skipped_tokens,
            s.total()
        );
    }
    Ok(())
}
