//! Command-line driver: one subcommand per pipeline stage plus `run-all`.
//! Exit codes: 0 success, 2 configuration error, 3 missing stage dependency.

use clap::{Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;

use aphasim_core::model::ArchKind;
use aphasim_core::pipeline::{RunConfig, StageContext};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ArchArg {
    Dense,
    Moe,
    Both,
}

impl ArchArg {
    fn archs(self) -> Vec<ArchKind> {
        match self {
            ArchArg::Dense => vec![ArchKind::Dense],
            ArchArg::Moe => vec![ArchKind::Moe],
            ArchArg::Both => vec![ArchKind::Dense, ArchKind::Moe],
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "aphasim", version, about = "Desk-scale lesion laboratory for toy language models")]
struct Cli {
    /// TOML run configuration; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Directory holding all artifacts of one run.
    #[arg(long, global = true, default_value = "runs/default")]
    run_dir: PathBuf,

    /// Override the config's global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Architectures to operate on.
    #[arg(long, global = true, value_enum, default_value_t = ArchArg::Both)]
    arch: ArchArg,

    /// Suppress progress output.
    #[arg(long, global = true)]
    quiet: bool,

    /// Worker threads; artifacts are byte-identical for any setting.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate corpora, minimal pairs and the clinical item bank.
    GenData,
    /// Pre-train the base model(s) on the generated corpus.
    Train,
    /// Zero-ablation attribution of minimal-pair tasks to units.
    Probe,
    /// Fine-tune phenotype replicas and score unit contributions.
    Phenotype,
    /// Rank-percentile matrices and threshold-stability sweeps.
    Align,
    /// Write targeted and random lesion plans.
    Lesion,
    /// Run the clinical battery over all lesion conditions.
    Evaluate,
    /// Render heatmaps, curves and the qualitative summary.
    Report,
    /// Execute every stage in order, resuming where possible.
    RunAll,
}

impl Command {
    fn stage(&self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::Train => "train",
            Command::Probe => "probe",
            Command::Phenotype => "phenotype",
            Command::Align => "align",
            Command::Lesion => "lesion",
            Command::Evaluate => "evaluate",
            Command::Report => "report",
            Command::RunAll => "run-all",
        }
    }
}

fn run(cli: Cli) -> aphasim_core::Result<()> {
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| aphasim_core::Error::Config(format!("thread pool: {e}")))?;
    }
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let ctx = StageContext::new(config, cli.run_dir.clone(), cli.arch.archs(), cli.quiet)?;
    match cli.command {
        Command::RunAll => {
            ctx.run_all()?;
        }
        ref cmd => {
            ctx.run_stage(cmd.stage())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
