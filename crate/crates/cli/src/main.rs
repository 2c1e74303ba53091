use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ucgan_cli::commands::{self, Prepared};
use ucgan_cli::{CliError, RunConfig};

#[derive(Parser)]
#[command(name = "ucgan", version, about = "Latent-space conditioned GAN experiments")]
struct Cli {
    /// TOML config, or a manifest.json from an earlier run.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,

    /// Override one config value, e.g. `--set train.n_iter=500`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    /// Run name; results go to <out-dir>/<name>.
    #[arg(long, global = true)]
    name: Option<String>,

    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load and normalise the dataset, then write it back out as IDX.
    Ingest,
    /// Nearest-neighbour class purity of the conditioning codes.
    Stats,
    /// Train (or rebuild) the feature extractor.
    TrainExtractor,
    /// Train the GAN, checkpointing as it goes.
    Train {
        /// Continue from the newest checkpoint in the run directory.
        #[arg(long)]
        resume: bool,
    },
    /// Score a checkpoint (default: the newest one of this run).
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train every prototype with the same budget and compare.
    Ablate,
    /// Label-noise robustness sweep.
    Sweep,
    /// 2-D embedding of the codes, flagged by conditioning success when a checkpoint is given.
    ExportEmbedding {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

fn load(cli: &Cli) -> Result<Prepared, CliError> {
    let mut overrides = cli.overrides.clone();
    if let Some(name) = &cli.name {
        overrides.push(format!("name={name:?}"));
    }
    if let Some(dir) = &cli.out_dir {
        overrides.push(format!("out_dir={:?}", dir.display().to_string()));
    }
    let config = match &cli.config {
        Some(path) => RunConfig::load(path, &overrides)?,
        None => RunConfig::from_toml("", &overrides)?,
    };
    commands::prepare(config)
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let p = load(&cli)?;
    match cli.command {
        Command::Ingest => commands::ingest(p),
        Command::Stats => commands::stats(p),
        Command::TrainExtractor => commands::train_extractor_cmd(p),
        Command::Train { resume } => commands::train(p, resume),
        Command::Eval { checkpoint } => commands::eval(p, checkpoint),
        Command::Ablate => commands::ablate(p),
        Command::Sweep => commands::sweep(p),
        Command::ExportEmbedding { checkpoint } => commands::export_embedding_cmd(p, checkpoint),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
