use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use digit_core::encoders::Objective;
use digit_core::experiments::{self as ex, Outcome, RunConfig, Workspace};
use digit_core::{par, Error};

#[derive(Parser)]
#[command(name = "digit", version, about = "Discriminative image tokens: toy experiments and pipeline stages")]
struct Cli {
    /// JSON run configuration; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured root seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads for the data-parallel core.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Runs every parallel section on one thread.
    #[arg(long, global = true)]
    reproducible: bool,
    /// Fails on a missing cached artifact instead of training it.
    #[arg(long, global = true)]
    no_train: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Tokenizer {
    Recon,
    Disc,
}

impl From<Tokenizer> for Objective {
    fn from(t: Tokenizer) -> Self {
        match t {
            Tokenizer::Recon => Objective::Reconstructive,
            Tokenizer::Disc => Objective::Discriminative,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// PCA, LDA and linear InfoNCE projections under input noise.
    Toy2d,
    /// Linear autoencoder against PCA on random datasets.
    PropCheck,
    /// Trains a patch encoder and its pixel decoder.
    TrainEncoder {
        #[arg(long, value_enum)]
        objective: Tokenizer,
    },
    /// K-Means codebook over encoder features.
    FitCodebook {
        #[arg(long, value_enum)]
        tag: Tokenizer,
    },
    /// Quantizes the train and test splits to token grids.
    Tokenize {
        #[arg(long, value_enum)]
        tag: Tokenizer,
    },
    /// Token and feature stability under Gaussian pixel noise.
    Stability,
    /// Trains the autoregressive model on token sequences.
    TrainAr {
        #[arg(long, value_enum)]
        tag: Tokenizer,
        #[arg(long)]
        conditional: bool,
    },
    /// Trains the disc-to-recon token translator.
    TrainStage2,
    /// Samples images from both pipelines and scores them with toy-FID.
    Generate,
    /// Linear probes on autoregressive hidden states, per layer.
    Probe,
    /// Probe accuracy across codebook sizes.
    TokenizeAblation,
    /// Completes held-out images from token prefixes of varying length.
    PrefixSweep,
    /// Markdown index of every manifest in the output directory.
    Report,
}

fn load_config(cli: &Cli) -> Result<RunConfig, Error> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            RunConfig::from_json(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<Outcome, Error> {
    let cfg = load_config(cli)?;
    if cli.threads == Some(0) {
        return Err(Error::Config("--threads must be positive".into()));
    }
    if cli.reproducible {
        par::set_sequential(true);
    } else if let Some(t) = cli.threads {
        par::configure_threads(t);
    }
    let out = &cli.out;
    let ws = Workspace::new(out, cfg)?.with_training(!cli.no_train);
    Ok(match &cli.command {
        Command::Toy2d => ex::run_toy2d(&ws, out)?.outcome,
        Command::PropCheck => ex::run_prop_check(&ws, out)?.outcome,
        Command::TrainEncoder { objective } => ex::run_train_encoder(&ws, out, (*objective).into())?,
        Command::FitCodebook { tag } => ex::run_fit_codebook(&ws, out, (*tag).into())?,
        Command::Tokenize { tag } => ex::run_tokenize(&ws, out, (*tag).into())?,
        Command::Stability => ex::run_stability(&ws, out)?.outcome,
        Command::TrainAr { tag, conditional } => ex::run_train_ar(&ws, out, (*tag).into(), *conditional)?,
        Command::TrainStage2 => ex::run_train_stage2(&ws, out)?.outcome,
        Command::Generate => ex::run_generate(&ws, out)?.outcome,
        Command::Probe => ex::run_probe(&ws, out)?.outcome,
        Command::TokenizeAblation => ex::run_tokenize_ablation(&ws, out)?.outcome,
        Command::PrefixSweep => ex::run_prefix_sweep(&ws, out)?.outcome,
        Command::Report => ex::run_report(&ws, out)?,
    })
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Io(_)
        | Error::BadMagic { .. }
        | Error::Truncated { .. }
        | Error::Malformed(_)
        | Error::UnsupportedVersion(_)
        | Error::Overflow(_) => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(outcome) => {
            for f in &outcome.files {
                println!("{}", f.display());
            }
            if outcome.passed() {
                ExitCode::SUCCESS
            } else {
                eprintln!("{}: invariant gate failed", outcome.kind.tag());
                for v in &outcome.violations {
                    eprintln!("  {v}");
                }
                ExitCode::from(3)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
