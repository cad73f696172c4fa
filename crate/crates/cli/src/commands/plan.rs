use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use oelm_core::{build_plan, count_norm_invocations, count_parameters};

use crate::config::read_spec;

#[derive(Args)]
pub struct PlanArgs {
    /// Model spec file (TOML)
    #[arg(long)]
    config: PathBuf,
}

pub fn run(args: PlanArgs) -> Result<()> {
    let spec = read_spec(&args.config)?;
    let plan = build_plan(&spec)?;
    println!("layer  heads  kv_heads  ffn_hidden");
    for layer in &plan.layers {
        println!(
            "{:<5}  {:<5}  {:<8}  {}",
            layer.index, layer.n_heads, layer.n_kv_heads, layer.ffn_hidden
        );
    }
    println!("total parameters: {}", count_parameters(&plan));
    println!("norm invocations per token: {}", count_norm_invocations(&plan));
    Ok(())
}
