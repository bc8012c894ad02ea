//! Diffraction-limited Gaussian-beam point spread function and discrete kernel banks.

use crate::cube::SpectralCube;
use crate::error::{Error, Result};
use crate::grid::Kernel2;
use crate::spectral::BandSelection;

/// Speed of light in mm/ps, so that λ[mm] = C / f[THz].
pub const SPEED_OF_LIGHT_MM_PER_PS: f64 = 0.299_792_458;

/// Below this width (in pixels) a sampled Gaussian aliases; the kernel collapses to a delta.
pub const DELTA_SIGMA_PX: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpticsConfig {
    /// Lens focal length in mm.
    pub focal_length: f64,
    /// Lens aperture diameter in mm.
    pub aperture: f64,
    /// Scanning step in mm per pixel.
    pub pixel_pitch: f64,
}

impl Default for OpticsConfig {
    fn default() -> Self {
        // f/D = 4 with the 0.5 mm scanning step.
        Self {
            focal_length: 100.0,
            aperture: 25.0,
            pixel_pitch: 0.5,
        }
    }
}

impl OpticsConfig {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("optics.focal_length", self.focal_length),
            ("optics.aperture", self.aperture),
            ("optics.pixel_pitch", self.pixel_pitch),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(field, format!("must be positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn f_number(&self) -> f64 {
        self.focal_length / self.aperture
    }
}

pub fn wavelength(freq: f64) -> f64 {
    SPEED_OF_LIGHT_MM_PER_PS / freq
}

fn check_freq(freq: f64) -> Result<()> {
    if !(freq > 0.0 && freq.is_finite()) {
        return Err(Error::invalid("freq", format!("must be positive, got {freq}")));
    }
    Ok(())
}

/// 1/e² intensity radius in mm: 2λf/(πD).
pub fn beam_waist(optics: &OpticsConfig, freq: f64) -> Result<f64> {
    optics.validate()?;
    check_freq(freq)?;
    Ok(2.0 * wavelength(freq) * optics.focal_length / (std::f64::consts::PI * optics.aperture))
}

/// Gaussian standard deviation in mm: ω₀/√2.
pub fn sigma_for(optics: &OpticsConfig, freq: f64) -> Result<f64> {
    Ok(beam_waist(optics, freq)? / std::f64::consts::SQRT_2)
}

/// Continuous normalized isotropic Gaussian.
pub fn gaussian_density(x: f64, y: f64, sigma: f64) -> f64 {
    let two_var = 2.0 * sigma * sigma;
    (-(x * x + y * y) / two_var).exp() / (std::f64::consts::PI * two_var)
}

/// Frequency-parameterized form of the beam PSF with σ = 1.8c/f (x, y in mm, f in THz).
pub fn beam_density(x: f64, y: f64, freq: f64) -> f64 {
    let c2 = SPEED_OF_LIGHT_MM_PER_PS * SPEED_OF_LIGHT_MM_PER_PS;
    let f2 = freq * freq;
    f2 / (6.48 * std::f64::consts::PI * c2) * (-f2 * (x * x + y * y) / (6.48 * c2)).exp()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelOptions {
    /// Half-width in standard deviations.
    pub truncation: f64,
    pub max_size: usize,
}

impl Default for KernelOptions {
    fn default() -> Self {
        Self {
            truncation: 3.0,
            max_size: 51,
        }
    }
}

/// Discrete PSF for one frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct PsfKernel {
    pub kernel: Kernel2,
    pub sigma_px: f64,
    /// Frequency in THz; 0 marks the DC delta.
    pub freq: f64,
}

impl PsfKernel {
    pub fn delta(freq: f64) -> Self {
        Self {
            kernel: Kernel2::delta(),
            sigma_px: 0.0,
            freq,
        }
    }

    pub fn size(&self) -> usize {
        self.kernel.size
    }

    pub fn values(&self) -> &[f64] {
        &self.kernel.values
    }

    /// Kernel as CSV rows, one grid row per line.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in self.kernel.values.chunks(self.kernel.size) {
            let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }
}

/// Gaussian sampled at pixel centres, truncated and renormalized to unit sum.
pub fn kernel_from_sigma_px(sigma_px: f64, freq: f64, opts: &KernelOptions) -> Result<PsfKernel> {
    if !(opts.truncation > 0.0) {
        return Err(Error::invalid("truncation", "must be positive"));
    }
    if !(sigma_px >= 0.0) || !sigma_px.is_finite() {
        return Err(Error::invalid("sigma_px", format!("got {sigma_px}")));
    }
    if sigma_px < DELTA_SIGMA_PX {
        return Ok(PsfKernel {
            sigma_px,
            ..PsfKernel::delta(freq)
        });
    }
    let radius = (opts.truncation * sigma_px).ceil() as usize;
    let size = 2 * radius + 1;
    if size > opts.max_size {
        return Err(Error::KernelTooLarge {
            size,
            max: opts.max_size,
        });
    }
    let r = radius as isize;
    let two_var = 2.0 * sigma_px * sigma_px;
    let mut values = Vec::with_capacity(size * size);
    for dy in -r..=r {
        for dx in -r..=r {
            values.push((-((dx * dx + dy * dy) as f64) / two_var).exp());
        }
    }
    let total: f64 = values.iter().sum();
    values.iter_mut().for_each(|v| *v /= total);
    Ok(PsfKernel {
        kernel: Kernel2 { size, values },
        sigma_px,
        freq,
    })
}

pub fn make_kernel(optics: &OpticsConfig, freq: f64, opts: &KernelOptions) -> Result<PsfKernel> {
    let sigma_px = sigma_for(optics, freq)? / optics.pixel_pitch;
    kernel_from_sigma_px(sigma_px, freq, opts)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BankMode {
    /// One kernel per bin at that bin's centre frequency.
    PerBand,
    /// One kernel at the selection's centre frequency, shared by every selected bin.
    BandMean(BandSelection),
}

pub fn make_bank(
    optics: &OpticsConfig,
    cube: &SpectralCube,
    mode: BankMode,
    opts: &KernelOptions,
) -> Result<Vec<PsfKernel>> {
    optics.validate()?;
    let at = |freq: f64| {
        if freq <= 0.0 {
            // Blur is undefined at DC.
            Ok(PsfKernel::delta(0.0))
        } else {
            make_kernel(optics, freq, opts)
        }
    };
    match mode {
        BankMode::PerBand => (0..cube.bands).map(|b| at(cube.freq(b))).collect(),
        BankMode::BandMean(sel) => {
            let bins = sel.resolve(cube)?.count();
            let kernel = at(sel.center())?;
            Ok(vec![kernel; bins])
        }
    }
}
