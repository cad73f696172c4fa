use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use oelm_core::bench::{compare_norm_variants, run_benchmark, BenchProtocol, ThroughputReport};
use oelm_core::nn::NormVariant;
use oelm_core::{build_plan, init_model, load_checkpoint, Checkpoint, Error};

use crate::config::read_spec;

#[derive(Args)]
pub struct BenchArgs {
    /// Checkpoint to measure
    #[arg(long, conflicts_with = "spec")]
    ckpt: Option<PathBuf>,
    /// Alternatively: a model spec measured with fresh random weights
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Seed for weight init with --spec
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 36)]
    prompt_tokens: usize,
    #[arg(long, default_value_t = 1024)]
    gen_tokens: usize,
    #[arg(long, default_value_t = 5)]
    repetitions: usize,
    #[arg(long, default_value_t = 1)]
    warmup_passes: usize,
    /// Skip the initial discarded full generation pass
    #[arg(long)]
    no_dry_run: bool,
    /// Measure both normalization kernels and report the speedup
    #[arg(long)]
    compare: bool,
    /// Also write the reports as a CSV table
    #[arg(long)]
    csv: Option<PathBuf>,
}

fn load_model(args: &BenchArgs) -> Result<Checkpoint<f32>> {
    match (&args.ckpt, &args.spec) {
        (Some(path), _) => {
            load_checkpoint(path).map_err(|e| {
                anyhow::Error::new(e).context(format!("loading {}", path.display()))
            })
        }
        (None, Some(spec_path)) => {
            let spec = read_spec(spec_path)?;
            Ok(init_model(&build_plan(&spec)?, args.seed))
        }
        (None, None) => Err(Error::Config("pass --ckpt or --spec".into()).into()),
    }
}

fn csv_table(reports: &[&ThroughputReport]) -> String {
    let mut out = String::from("variant,prompt_tps,generation_tps,total_tps,norm_invocations\n");
    for r in reports {
        out.push_str(&format!(
            "{},{:.2},{:.2},{:.2},{}\n",
            r.norm_variant, r.prompt_tps, r.generation_tps, r.total_tps, r.norm_invocations
        ));
    }
    out
}

pub fn run(args: BenchArgs) -> Result<()> {
    let ckpt = load_model(&args)?;
    let protocol = BenchProtocol {
        prompt_tokens: args.prompt_tokens,
        gen_tokens: args.gen_tokens,
        dry_run: !args.no_dry_run,
        warmup_passes: args.warmup_passes,
        repetitions: args.repetitions,
    };
    let reports: Vec<ThroughputReport> = if args.compare {
        let comparison = compare_norm_variants(&ckpt, &protocol)?;
        println!("{}", serde_json::to_string(&comparison.fused)?);
        println!("{}", serde_json::to_string(&comparison.naive)?);
        println!("{}", serde_json::json!({ "generation_speedup": comparison.speedup }));
        vec![comparison.fused, comparison.naive]
    } else {
        let report = run_benchmark(&ckpt, &protocol, NormVariant::Fused)?;
        println!("{}", serde_json::to_string(&report)?);
        vec![report]
    };
    if let Some(path) = &args.csv {
        let refs: Vec<&ThroughputReport> = reports.iter().collect();
        std::fs::write(path, csv_table(&refs))
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}
