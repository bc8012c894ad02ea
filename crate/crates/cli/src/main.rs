use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thz_cli::commands::{cmd_fft, cmd_metrics, cmd_pca_dump, cmd_psf_dump, cmd_restore, cmd_simulate, cmd_train};
use thz_cli::{load_config, CliResult};

/// Restore frequency-resolved THz amplitude cubes.
///
/// Exit codes: 1 I/O, 2 configuration, 3 degenerate data, 4 checkpoint
/// mismatch, 5 shape mismatch.
#[derive(Parser)]
#[command(name = "thz", version)]
struct Cli {
    /// Configuration file of `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run seed (overrides the configuration).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Override one configuration key, e.g. `--set train.epochs=30`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a phantom and its degraded observation.
    Simulate,
    /// Transform a time-domain cube into a spectral cube.
    Fft { cube: PathBuf },
    /// Inspect the PSF.
    Psf {
        #[command(subcommand)]
        action: PsfAction,
    },
    /// Inspect the PCA eigenvalue spectrum.
    Pca {
        #[command(subcommand)]
        action: PcaAction,
    },
    /// Train the denoise/deblur networks on a cube.
    Train { cube: PathBuf },
    /// Restore a cube with a trained checkpoint.
    Restore { cube: PathBuf, checkpoint: PathBuf },
    /// Compare restored and degraded cubes (and the truth, when known).
    Metrics {
        restored: PathBuf,
        degraded: PathBuf,
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Also draw PSNR against frequency.
        #[arg(long)]
        plot: bool,
    },
}

#[derive(Subcommand)]
enum PsfAction {
    /// Write the kernel grid as CSV.
    Dump {
        /// Frequency in THz; defaults to the band centre.
        #[arg(long)]
        freq: Option<f64>,
        /// Take the band centre from this cube.
        #[arg(long)]
        cube: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum PcaAction {
    /// Write `index,eigenvalue,cumulative_fraction`.
    Dump { cube: PathBuf },
}

fn run(cli: Cli) -> CliResult<Vec<PathBuf>> {
    let cfg = load_config(cli.config.as_deref(), cli.seed, &cli.overrides)?;
    let out = cli.out.as_path();
    match cli.command {
        Command::Simulate => cmd_simulate(&cfg, out),
        Command::Fft { cube } => cmd_fft(&cfg, &cube, out).map(|p| vec![p]),
        Command::Psf {
            action: PsfAction::Dump { freq, cube },
        } => cmd_psf_dump(&cfg, freq, cube.as_deref(), out).map(|p| vec![p]),
        Command::Pca {
            action: PcaAction::Dump { cube },
        } => cmd_pca_dump(&cfg, &cube, out).map(|p| vec![p]),
        Command::Train { cube } => cmd_train(&cfg, &cube, out, |r| {
            eprintln!(
                "epoch {:>4}  loss {:.6}  term1 {:.6}  term2 {:.6}  term3 {:.4}  psnr {:.2} dB",
                r.epoch, r.loss, r.term1, r.term2, r.term3, r.psnr
            )
        }),
        Command::Restore { cube, checkpoint } => cmd_restore(&cfg, &cube, &checkpoint, out).map(|p| vec![p]),
        Command::Metrics {
            restored,
            degraded,
            truth,
            plot,
        } => cmd_metrics(&restored, &degraded, truth.as_deref(), out, plot),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
