//! Subcommands. Each writes its artifacts into an output directory and maps
//! failures onto stable exit codes.

use std::path::{Path, PathBuf};

use thz_core::cube::{export_band_png, read_cube, write_cube, Cube, SpectralCube};
use thz_core::metrics::report;
use thz_core::nnet::{history_csv, read_checkpoint, write_checkpoint, EpochRecord};
use thz_core::pca::decompose;
use thz_core::psf::make_kernel;
use thz_core::Error;

use crate::config::{ConfigError, PipelineConfig};
use crate::pipeline::{kernel_frequency, restore_stage, simulate, to_selected_spectrum, train_stage};

pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DEGENERATE: i32 = 3;
pub const EXIT_CHECKPOINT: i32 = 4;
pub const EXIT_SHAPE: i32 = 5;

pub const TRUTH_FILE: &str = "truth.cube";
pub const DEGRADED_FILE: &str = "degraded.cube";
pub const MANIFEST_FILE: &str = "manifest.txt";
pub const SPECTRUM_FILE: &str = "spectrum.cube";
pub const PSF_FILE: &str = "psf.csv";
pub const PCA_FILE: &str = "pca_spectrum.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.thznet";
pub const HISTORY_FILE: &str = "history.csv";
pub const RESTORED_FILE: &str = "restored.cube";
pub const BANDS_DIR: &str = "bands";
pub const METRICS_FILE: &str = "metrics.csv";
pub const PLOT_FILE: &str = "psnr.png";

#[derive(Debug, thiserror::Error)]
#[error("{message}")]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io { .. } | Error::BadMagic { .. } | Error::Truncated { .. } | Error::BadHeader { .. } => EXIT_IO,
            Error::Invalid { .. } | Error::KernelTooLarge { .. } => EXIT_CONFIG,
            Error::NonFinite { .. } | Error::NoVariance | Error::Diverged { .. } => EXIT_DEGENERATE,
            Error::Checkpoint(_) => EXIT_CHECKPOINT,
            Error::Shape(_) => EXIT_SHAPE,
        };
        CliError::new(code, e.to_string())
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::new(EXIT_CONFIG, e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::new(EXIT_IO, format!("{}: {e}", path.display()))
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

fn read_spectral(cfg: &PipelineConfig, path: &Path) -> CliResult<SpectralCube> {
    Ok(to_selected_spectrum(cfg, &read_cube(path)?)?)
}

/// Rejects an output path that would overwrite one of the inputs.
fn ensure_distinct(output: &Path, inputs: &[&Path]) -> CliResult<()> {
    let canon = |p: &Path| std::fs::canonicalize(p).ok();
    if let Some(out) = canon(output) {
        for input in inputs {
            if canon(input).as_ref() == Some(&out) {
                return Err(CliError::new(
                    EXIT_CONFIG,
                    format!("output {} would overwrite an input", output.display()),
                ));
            }
        }
    }
    Ok(())
}

/// Writes the truth cube, the degraded cube and a manifest that reproduces both.
pub fn cmd_simulate(cfg: &PipelineConfig, out: &Path) -> CliResult<Vec<PathBuf>> {
    cfg.validate()?;
    ensure_dir(out)?;
    let sim = simulate(cfg)?;
    let truth = out.join(TRUTH_FILE);
    let degraded = out.join(DEGRADED_FILE);
    let manifest = out.join(MANIFEST_FILE);
    write_cube(&Cube::Spectral(sim.truth), &truth)?;
    write_cube(&Cube::Spectral(sim.degraded), &degraded)?;
    let text = format!(
        "# Synthetic run; re-running `simulate --config` on this file reproduces every file.\n\
         # truth: {TRUTH_FILE}\n# degraded: {DEGRADED_FILE}\n{}",
        cfg.to_text()
    );
    write_text(&manifest, &text)?;
    Ok(vec![truth, degraded, manifest])
}

/// Time-domain cube to spectral cube over the configured bands.
pub fn cmd_fft(cfg: &PipelineConfig, input: &Path, out: &Path) -> CliResult<PathBuf> {
    cfg.validate()?;
    let spectral = read_spectral(cfg, input)?;
    ensure_dir(out)?;
    let path = out.join(SPECTRUM_FILE);
    ensure_distinct(&path, &[input])?;
    write_cube(&Cube::Spectral(spectral), &path)?;
    Ok(path)
}

/// Kernel grid at `freq`, or at the band centre of `cube` (falling back to the
/// phantom's frequency range).
pub fn cmd_psf_dump(cfg: &PipelineConfig, freq: Option<f64>, cube: Option<&Path>, out: &Path) -> CliResult<PathBuf> {
    cfg.validate()?;
    let f = match (freq, cube) {
        (Some(f), _) => f,
        (None, Some(p)) => kernel_frequency(cfg, &read_spectral(cfg, p)?),
        (None, None) => {
            let p = &cfg.phantom;
            let grid = SpectralCube::new(1, 1, p.bands, p.df, p.f_start, vec![0.0; p.bands])?;
            kernel_frequency(cfg, &grid)
        }
    };
    let kernel = make_kernel(&cfg.optics, f, &cfg.kernel)?;
    ensure_dir(out)?;
    let path = out.join(PSF_FILE);
    write_text(&path, &kernel.to_csv())?;
    Ok(path)
}

pub fn cmd_pca_dump(cfg: &PipelineConfig, input: &Path, out: &Path) -> CliResult<PathBuf> {
    cfg.validate()?;
    let cube = read_spectral(cfg, input)?;
    let (model, _) = decompose(&cube, cfg.retain)?;
    ensure_dir(out)?;
    let path = out.join(PCA_FILE);
    write_text(&path, &model.spectrum_csv())?;
    Ok(path)
}

/// Trains on the cube's principal components; writes checkpoint and history.
pub fn cmd_train(
    cfg: &PipelineConfig,
    input: &Path,
    out: &Path,
    progress: impl FnMut(&EpochRecord),
) -> CliResult<Vec<PathBuf>> {
    cfg.validate()?;
    let cube = read_spectral(cfg, input)?;
    let outcome = train_stage(cfg, &cube, progress)?;
    ensure_dir(out)?;
    let ckpt = out.join(CHECKPOINT_FILE);
    let hist = out.join(HISTORY_FILE);
    ensure_distinct(&ckpt, &[input])?;
    write_checkpoint(&outcome.params, &ckpt)?;
    write_text(&hist, &history_csv(&outcome.history))?;
    Ok(vec![ckpt, hist])
}

/// Restores the cube with a trained checkpoint; writes the cube and band PNGs.
pub fn cmd_restore(cfg: &PipelineConfig, input: &Path, checkpoint: &Path, out: &Path) -> CliResult<PathBuf> {
    cfg.validate()?;
    let cube = read_spectral(cfg, input)?;
    let params = read_checkpoint(checkpoint)?;
    let restored = restore_stage(cfg, &cube, &params)?;
    ensure_dir(out)?;
    let path = out.join(RESTORED_FILE);
    ensure_distinct(&path, &[input, checkpoint])?;
    let bands = out.join(BANDS_DIR);
    ensure_dir(&bands)?;
    for b in 0..restored.bands {
        export_band_png(&restored, b, bands.join(format!("band_{b:03}.png")))?;
    }
    write_cube(&Cube::Spectral(restored), &path)?;
    Ok(path)
}

/// Per-band PSNR/RSE table, optionally with a PSNR-vs-frequency plot.
pub fn cmd_metrics(
    restored: &Path,
    degraded: &Path,
    truth: Option<&Path>,
    out: &Path,
    plot: bool,
) -> CliResult<Vec<PathBuf>> {
    let load = |p: &Path| -> CliResult<SpectralCube> {
        match read_cube(p)? {
            Cube::Spectral(s) => Ok(s),
            Cube::Time(_) => Err(CliError::new(EXIT_SHAPE, format!("{} is a time-domain cube", p.display()))),
        }
    };
    let r = load(restored)?;
    let d = load(degraded)?;
    let t = truth.map(load).transpose()?;
    let rep = report(&r, &d, t.as_ref())?;
    ensure_dir(out)?;
    let csv = out.join(METRICS_FILE);
    write_text(&csv, &rep.to_csv())?;
    let mut written = vec![csv];
    if plot {
        let png = out.join(PLOT_FILE);
        rep.write_plot(&png)?;
        written.push(png);
    }
    Ok(written)
}
