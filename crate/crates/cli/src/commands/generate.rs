use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use oelm_core::{
    build_plan, generate, init_model, load_checkpoint, ByteTokenizer, Checkpoint, Error,
    SamplerConfig, Tokenizer,
};

use crate::config::read_spec;

#[derive(Args)]
pub struct GenerateArgs {
    /// Checkpoint to generate from
    #[arg(long, conflicts_with = "spec")]
    ckpt: Option<PathBuf>,
    /// Alternatively: a model spec, generated from fresh random weights
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Prompt text (byte-level tokenized)
    #[arg(long)]
    prompt: String,
    /// Number of tokens to generate
    #[arg(long, default_value_t = 64)]
    max_new: usize,
    /// Sampling mode: greedy or temperature
    #[arg(long, default_value = "greedy")]
    mode: String,
    /// Softmax temperature for temperature mode
    #[arg(long, default_value_t = 0.8)]
    temperature: f64,
    /// Seed for weight init (with --spec) and sampling
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn load_model(args: &GenerateArgs) -> Result<Checkpoint<f32>> {
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

pub fn run(args: GenerateArgs) -> Result<()> {
    let ckpt = load_model(&args)?;
    let sampler = match args.mode.as_str() {
        "greedy" => SamplerConfig::greedy(),
        "temperature" => SamplerConfig::temperature(args.temperature, args.seed)?,
        other => {
            return Err(Error::Config(format!(
                "unknown mode {other:?}; expected greedy or temperature"
            ))
            .into())
        }
    };
    let tokenizer = ByteTokenizer;
    let prompt_ids = tokenizer.encode(&args.prompt);
    let out = generate(&ckpt, &prompt_ids, args.max_new, &sampler)?;
    let text = tokenizer.decode(&out.tokens[out.prompt_len..]);
    println!("{text}");
    eprintln!(
        "generated {} tokens (prefill {:.3}s, decode {:.3}s)",
        out.generated, out.prefill_seconds, out.decode_seconds
    );
    Ok(())
}
