//! `ksrecon`: phantom generation, undersampling, reconstruction and evaluation.

mod bench;
mod commands;
mod error;
mod export;
mod manifest;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand};

use error::CliError;
use manifest::Run;
use settings::Settings;

pub const THREADS_ENV: &str = "KSRECON_THREADS";

#[derive(Parser, Debug)]
#[command(name = "ksrecon", version, about = "Multi-coil k-space reconstruction toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every subcommand.
#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Output directory (created if missing); receives manifest.json.
    #[arg(short = 'o', long = "out")]
    pub out: PathBuf,
    /// Flat key=value file; keys are long flag names, flags given on the command line win.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a multi-coil phantom acquisition.
    Phantom(commands::PhantomArgs),
    /// Generate a Poisson-disc sampling mask.
    Mask(commands::MaskArgs),
    /// Zero the unsampled entries of a k-space volume.
    Undersample(commands::UndersampleArgs),
    /// Calibrate and reconstruct an undersampled k-space volume.
    Recon(commands::ReconArgs),
    /// Score reconstructions, or run a paired t-test between two metric tables.
    Metrics(commands::MetricsArgs),
    /// Write one plane of a volume as a 16-bit PGM image.
    Export(export::ExportArgs),
    /// Run the full phantom, mask, reconstruction and metrics sweep.
    Bench(bench::BenchArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Phantom(_) => "phantom",
            Command::Mask(_) => "mask",
            Command::Undersample(_) => "undersample",
            Command::Recon(_) => "recon",
            Command::Metrics(_) => "metrics",
            Command::Export(_) => "export",
            Command::Bench(_) => "bench",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::Phantom(a) => &a.common,
            Command::Mask(a) => &a.common,
            Command::Undersample(a) => &a.common,
            Command::Recon(a) => &a.common,
            Command::Metrics(a) => &a.common,
            Command::Export(a) => &a.common,
            Command::Bench(a) => &a.common,
        }
    }

    fn execute(&self, run: &mut Run, s: &mut Settings) -> Result<(), CliError> {
        match self {
            Command::Phantom(a) => commands::phantom(a, run, s),
            Command::Mask(a) => commands::mask(a, run, s),
            Command::Undersample(a) => commands::undersample(a, run, s),
            Command::Recon(a) => commands::recon(a, run, s),
            Command::Metrics(a) => commands::metrics(a, run, s),
            Command::Export(a) => export::export(a, run, s),
            Command::Bench(a) => bench::bench(a, run, s),
        }
    }
}

fn init_threads() -> Result<(), CliError> {
    let Ok(text) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = text
        .trim()
        .parse()
        .map_err(|_| CliError::Usage(format!("{THREADS_ENV} must be a non-negative integer, got '{text}'")))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Other(e.to_string()))?;
    }
    Ok(())
}

fn run(command: &Command) -> Result<(), CliError> {
    let common = command.common();
    std::fs::create_dir_all(&common.out)?;
    let mut run = Run::new(command.name(), &common.out);
    let mut settings = Settings::default();
    let result = init_threads()
        .and_then(|_| Settings::load(common.config.as_deref()))
        .and_then(|s| {
            settings = s;
            command.execute(&mut run, &mut settings)
        })
        .and_then(|_| settings.finish());
    let error = result.as_ref().err().map(|e| e.to_string());
    run.finish(settings.resolved, error)?;
    result
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ksrecon {}: {e}", cli.command.name());
            if matches!(e, CliError::Usage(_)) {
                if let Some(sub) = Cli::command().find_subcommand_mut(cli.command.name()) {
                    eprintln!("{}", sub.render_usage());
                }
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
