mod average;
mod bench;
mod generate;
mod plan;
mod stats;
mod train;

use clap::Subcommand;

#[derive(Subcommand)]
pub enum Command {
    /// Print the per-layer architecture table and parameter count for a spec
    Plan(plan::PlanArgs),
    /// Train a model from a data manifest, logging loss and checkpointing
    Train(train::TrainArgs),
    /// Generate text from a checkpoint (or a freshly initialized spec)
    Generate(generate::GenerateArgs),
    /// Measure prefill/generation throughput, optionally comparing norm kernels
    Bench(bench::BenchArgs),
    /// Report how many documents per source survive the length filter
    FilterStats(stats::FilterStatsArgs),
    /// Average checkpoints elementwise into a new checkpoint
    AvgCkpt(average::AvgCkptArgs),
}

pub fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Plan(args) => plan::run(args),
        Command::Train(args) => train::run(args),
        Command::Generate(args) => generate::run(args),
        Command::Bench(args) => bench::run(args),
        Command::FilterStats(args) => stats::run(args),
        Command::AvgCkpt(args) => average::run(args),
    }
}
