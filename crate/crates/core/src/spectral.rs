//! Time-domain waveforms to amplitude spectra, and frequency band selection.

use std::ops::RangeInclusive;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::cube::{SpectralCube, TimeDomainCube};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Window {
    #[default]
    None,
    Hann,
}

impl std::str::FromStr for Window {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Window::None),
            "hann" => Ok(Window::Hann),
            other => Err(Error::invalid("window", format!("expected none|hann, got {other}"))),
        }
    }
}

fn window_coefficients(window: Window, n: usize) -> Vec<f64> {
    match window {
        Window::None => vec![1.0; n],
        Window::Hann => (0..n)
            .map(|t| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * t as f64 / (n - 1) as f64).cos())
            .collect(),
    }
}

/// Frequency resolution in THz of a `samples`-long record sampled every `dt` ps.
pub fn frequency_resolution(samples: usize, dt: f64) -> f64 {
    1.0 / (samples as f64 * dt)
}

/// Magnitudes of all `T` bins of the unnormalized forward DFT of one waveform.
pub fn dft_magnitudes(waveform: &[f64], window: Window) -> Vec<f64> {
    let coeffs = window_coefficients(window, waveform.len());
    let mut buf: Vec<Complex<f64>> = waveform
        .iter()
        .zip(&coeffs)
        .map(|(x, w)| Complex::new(x * w, 0.0))
        .collect();
    FftPlanner::<f64>::new()
        .plan_fft_forward(waveform.len())
        .process(&mut buf);
    buf.iter().map(|c| c.norm()).collect()
}

/// Unnormalized DFT magnitudes of bins `0..=T/2` for every pixel.
pub fn to_spectrum(cube: &TimeDomainCube, window: Window) -> Result<SpectralCube> {
    cube.validate()?;
    let t = cube.samples;
    let bands = t / 2 + 1;
    let coeffs = window_coefficients(window, t);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(t);
    let mut buf = vec![Complex::new(0.0, 0.0); t];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut data = Vec::with_capacity(cube.height * cube.width * bands);
    for chunk in cube.data.chunks_exact(t) {
        for ((slot, x), w) in buf.iter_mut().zip(chunk).zip(&coeffs) {
            *slot = Complex::new(f64::from(*x) * w, 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        data.extend(buf[..bands].iter().map(|c| c.norm() as f32));
    }
    SpectralCube::new(
        cube.height,
        cube.width,
        bands,
        frequency_resolution(t, cube.dt),
        0.0,
        data,
    )
}

/// Frequency interval `[f_initial, f_end]` in THz.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandSelection {
    pub f_initial: f64,
    pub f_end: f64,
}

impl BandSelection {
    pub fn new(f_initial: f64, f_end: f64) -> Result<Self> {
        if !(f_initial >= 0.0 && f_initial < f_end && f_end.is_finite()) {
            return Err(Error::invalid(
                "band selection",
                format!("need 0 <= f_initial < f_end, got [{f_initial}, {f_end}]"),
            ));
        }
        Ok(Self { f_initial, f_end })
    }

    /// Selection spanning every bin of `cube`.
    pub fn full(cube: &SpectralCube) -> Self {
        let f_end = cube.freq(cube.bands - 1);
        Self {
            f_initial: cube.f_start.max(0.0),
            f_end: if f_end > cube.f_start { f_end } else { cube.f_start + cube.df },
        }
    }

    /// Bin indices covered on `cube`'s grid, round-to-nearest with ties up,
    /// clamped to the available bins.
    pub fn resolve(&self, cube: &SpectralCube) -> Result<RangeInclusive<usize>> {
        let index = |f: f64| ((f - cube.f_start) / cube.df + 0.5).floor();
        let last = (cube.bands - 1) as f64;
        let lo = index(self.f_initial).max(0.0);
        let hi = index(self.f_end).min(last);
        if lo > hi {
            return Err(Error::invalid(
                "band selection",
                format!(
                    "[{}, {}] THz selects no bins of a cube spanning [{}, {}] THz",
                    self.f_initial,
                    self.f_end,
                    cube.f_start,
                    cube.freq(cube.bands - 1)
                ),
            ));
        }
        Ok(lo as usize..=hi as usize)
    }

    /// Frequency used for the band-mean PSF.
    pub fn center(&self) -> f64 {
        (self.f_initial + self.f_end) / 2.0
    }
}

pub fn band_center(sel: &BandSelection) -> f64 {
    sel.center()
}

pub fn select_bands(cube: &SpectralCube, sel: &BandSelection) -> Result<SpectralCube> {
    let range = sel.resolve(cube)?;
    let (lo, hi) = (*range.start(), *range.end());
    let bands = hi - lo + 1;
    let mut data = Vec::with_capacity(cube.pixels() * bands);
    for px in cube.data.chunks_exact(cube.bands) {
        data.extend_from_slice(&px[lo..=hi]);
    }
    SpectralCube::new(cube.height, cube.width, bands, cube.df, cube.freq(lo), data)
}
