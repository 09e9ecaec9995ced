use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use duoview_cli::{execute, CliError, Command, Options, RunConfig};

#[derive(Parser)]
#[command(name = "duoview", version, about = "Dual-view video-language pre-training pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// JSON run configuration; defaults to the bundled demo setup.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run seed, replacing the configured seed list.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    force: bool,
    /// Encoder checkpoint directory (default `<out>/checkpoint`).
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the synthetic train and test corpora.
    GenData,
    /// Filter transcripts and sample clip-text pairs.
    BuildPairs,
    /// Train the encoders on the pairs.
    Train,
    /// Text-to-clip retrieval on the test split.
    EvalRetrieval,
    /// Temporal grounding on the test split.
    EvalGrounding,
    /// Prompt-based classification, per-class scores and activation maps.
    EvalZeroshot {
        /// Prompt sets (tool, target, triplet); synthetic prompts by default.
        #[arg(long)]
        prompts: Option<PathBuf>,
    },
    /// Train the caption decoder on text latents only.
    TrainCaptioner,
    /// Caption the test events and score them.
    EvalCaption,
    /// Sweep the text-view, clip-length and frame-count grid.
    Ablate,
    /// Every stage from gen-data to eval-caption.
    All,
    /// Print the effective configuration as JSON.
    ShowConfig,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seeds = vec![s];
    }
    if let Some(o) = cli.out {
        cfg.out_dir = o;
    }
    let command = match cli.command {
        Cmd::GenData => Command::GenData,
        Cmd::BuildPairs => Command::BuildPairs,
        Cmd::Train => Command::Train,
        Cmd::EvalRetrieval => Command::EvalRetrieval,
        Cmd::EvalGrounding => Command::EvalGrounding,
        Cmd::EvalZeroshot { prompts } => Command::EvalZeroshot { prompts },
        Cmd::TrainCaptioner => Command::TrainCaptioner,
        Cmd::EvalCaption => Command::EvalCaption,
        Cmd::Ablate => Command::Ablate,
        Cmd::All => Command::All,
        Cmd::ShowConfig => {
            cfg.validate()?;
            println!("{}", serde_json::to_string_pretty(&cfg).expect("config serializes"));
            return Ok(());
        }
    };
    let opts = Options {
        force: cli.force,
        checkpoint: cli.checkpoint,
    };
    for path in execute(&command, &cfg, &opts)? {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
