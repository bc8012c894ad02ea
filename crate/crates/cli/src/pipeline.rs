//! In-process stages: simulate, transform, decompose, train, restore, score.

use thz_core::cube::{Cube, SpectralCube};
use thz_core::forward::{degrade, make_phantom};
use thz_core::metrics::{report, MetricReport};
use thz_core::nnet::{apply, check_arch, train_with_progress, EpochRecord, NetworkParams, TrainOutcome};
use thz_core::pca::{decompose, reconstruct, ComponentStack, PcaModel};
use thz_core::psf::{make_bank, make_kernel, BankMode, PsfKernel};
use thz_core::spectral::{select_bands, to_spectrum, BandSelection};
use thz_core::Result;

use crate::config::PipelineConfig;

#[derive(Debug, Clone)]
pub struct Simulation {
    pub truth: SpectralCube,
    pub degraded: SpectralCube,
}

/// Phantom truth cube and its blurred, noisy observation.
pub fn simulate(cfg: &PipelineConfig) -> Result<Simulation> {
    cfg.validate()?;
    let phantom = make_phantom(&cfg.phantom, cfg.seed)?;
    let truth = phantom.to_cube()?;
    let bank = make_bank(&cfg.optics, &truth, BankMode::PerBand, &cfg.kernel)?;
    let degraded = degrade(&phantom, &bank, &cfg.noise.params(), cfg.seed)?;
    Ok(Simulation { truth, degraded })
}

/// Spectral cube restricted to the configured bands; time-domain input is
/// transformed first.
pub fn to_selected_spectrum(cfg: &PipelineConfig, cube: &Cube) -> Result<SpectralCube> {
    let spectral = match cube {
        Cube::Time(t) => to_spectrum(t, cfg.window)?,
        Cube::Spectral(s) => s.clone(),
    };
    match cfg.bands {
        Some(sel) => select_bands(&spectral, &sel),
        None => Ok(spectral),
    }
}

/// Frequency at which the single training PSF is evaluated: the centre of
/// the configured selection, or of the cube's own range.
pub fn kernel_frequency(cfg: &PipelineConfig, cube: &SpectralCube) -> f64 {
    cfg.bands.unwrap_or_else(|| BandSelection::full(cube)).center()
}

pub fn training_kernel(cfg: &PipelineConfig, cube: &SpectralCube) -> Result<PsfKernel> {
    let f = kernel_frequency(cfg, cube);
    if f <= 0.0 {
        return Ok(PsfKernel::delta(0.0));
    }
    make_kernel(&cfg.optics, f, &cfg.kernel)
}

pub fn decompose_cube(cfg: &PipelineConfig, cube: &SpectralCube) -> Result<(PcaModel, ComponentStack)> {
    decompose(cube, cfg.retain)
}

/// Decomposes the cube and trains the network pair on its component images.
pub fn train_stage(
    cfg: &PipelineConfig,
    cube: &SpectralCube,
    progress: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (_, stack) = decompose_cube(cfg, cube)?;
    let kernel = training_kernel(cfg, cube)?;
    train_with_progress(
        &stack.images,
        &kernel,
        cfg.arch,
        &cfg.r2r_seeded(),
        &cfg.loss,
        &cfg.train_seeded(),
        progress,
    )
}

/// Decompose, pass components through the networks, reconstruct.
pub fn restore_stage(cfg: &PipelineConfig, cube: &SpectralCube, params: &NetworkParams) -> Result<SpectralCube> {
    check_arch(params, &cfg.arch)?;
    let (model, stack) = decompose_cube(cfg, cube)?;
    let restored = apply(params, &stack)?;
    reconstruct(&model, &restored)
}

#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub simulation: Simulation,
    pub outcome: TrainOutcome,
    pub restored: SpectralCube,
    pub report: MetricReport,
}

/// Every stage in one process, on synthetic data.
pub fn run_synthetic(cfg: &PipelineConfig, progress: impl FnMut(&EpochRecord)) -> Result<RunArtifacts> {
    let simulation = simulate(cfg)?;
    let outcome = train_stage(cfg, &simulation.degraded, progress)?;
    let restored = restore_stage(cfg, &simulation.degraded, &outcome.params)?;
    let report = report(&restored, &simulation.degraded, Some(&simulation.truth))?;
    Ok(RunArtifacts {
        simulation,
        outcome,
        restored,
        report,
    })
}
