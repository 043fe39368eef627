use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use localdom_pipeline::recipe::{run_recipe, RunOptions, Stage};
use localdom_pipeline::synth::{make_synthetic_splits, SplitCounts, SynthKind};

#[derive(Parser)]
#[command(name = "localdom", version, about = "Local-domain image translation recipes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct StageArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory (default: `runs/<config stem>` next to the config).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample training patches from the source split.
    Extract(StageArgs),
    /// Train the patch translator.
    TrainGan(StageArgs),
    /// Train the mask VAE used for interpolation.
    TrainVae(StageArgs),
    /// Translate the test split.
    Translate(StageArgs),
    /// Compute metrics and write `report.json`.
    Evaluate(StageArgs),
    /// Write an augmented copy of the dataset.
    Augment(StageArgs),
    /// Run every stage in order, skipping those already up to date.
    All(StageArgs),
    /// Write a synthetic dataset with its manifest.
    Synth {
        #[arg(value_enum)]
        kind: SynthKind,
        /// Training images.
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        val: usize,
        #[arg(long, default_value_t = 0)]
        test: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn stage(stage: Stage, a: StageArgs) -> localdom_pipeline::Result<()> {
    let done = run_recipe(&a.config, stage, &RunOptions { seed: a.seed, out: a.out })?;
    for o in done {
        let state = if o.skipped { "up to date" } else { "done" };
        println!("{}: {state}", o.stage.name());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Extract(a) => stage(Stage::Extract, a),
        Command::TrainGan(a) => stage(Stage::TrainGan, a),
        Command::TrainVae(a) => stage(Stage::TrainVae, a),
        Command::Translate(a) => stage(Stage::Translate, a),
        Command::Evaluate(a) => stage(Stage::Evaluate, a),
        Command::Augment(a) => stage(Stage::Augment, a),
        Command::All(a) => stage(Stage::All, a),
        Command::Synth { kind, n, val, test, seed, out } => {
            make_synthetic_splits(kind, SplitCounts { train: n, val, test }, seed, &out).map(|m| {
                println!("wrote {} images to {}", m.entries.len(), out.display());
            })
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
