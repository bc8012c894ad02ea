//! Synthetic ground-truth phantoms and the blur-plus-noise observation model.
//!
//! Each band `f` of the observation is `(I ⊗ h_f) + n` with per-pixel Gaussian
//! `n` of variance `σ₀² + β·f^p + g·(I ⊗ h_f)`; the last term stands in for the
//! signal-dependent shot noise. Observations are clamped at zero.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::cube::SpectralCube;
use crate::error::{Error, Result};
use crate::grid::{convolve_reflect, Image};
use crate::psf::PsfKernel;
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseParams {
    /// Baseline variance σ₀².
    pub sigma0_sq: f64,
    /// Frequency scaling β.
    pub beta: f64,
    /// Frequency exponent p.
    pub p: f64,
    /// Variance per unit of blurred amplitude; 0 disables the signal-dependent term.
    pub poisson_gain: f64,
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self::doubling(25.0 / 255.0, 0.1, 2.0, 2.0)
    }
}

impl NoiseParams {
    pub fn silent() -> Self {
        Self {
            sigma0_sq: 0.0,
            beta: 0.0,
            p: 0.0,
            poisson_gain: 0.0,
        }
    }

    /// Baseline σ₀ with β chosen so that σ(f_hi) = 2·σ(f_lo).
    pub fn doubling(sigma0: f64, f_lo: f64, f_hi: f64, p: f64) -> Self {
        let s2 = sigma0 * sigma0;
        // σ₀² + β f_hi^p = 4 (σ₀² + β f_lo^p)
        let beta = 3.0 * s2 / (f_hi.powf(p) - 4.0 * f_lo.powf(p));
        Self {
            sigma0_sq: s2,
            beta,
            p,
            poisson_gain: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("noise.sigma0_sq", self.sigma0_sq),
            ("noise.beta", self.beta),
            ("noise.p", self.p),
            ("noise.poisson_gain", self.poisson_gain),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(field, format!("must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Signal-independent variance at `f` THz: σ₀² + β·f^p.
pub fn variance_at(noise: &NoiseParams, f: f64) -> f64 {
    noise.sigma0_sq + noise.beta * f.max(0.0).powf(noise.p)
}

/// Amplitude `level·exp(−decay·f)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Profile {
    pub level: f64,
    pub decay: f64,
}

impl Profile {
    pub fn at(&self, f: f64) -> f64 {
        self.level * (-self.decay * f).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    /// Centre (row, col) and radius in pixels.
    Disk {
        row: f64,
        col: f64,
        radius: f64,
        profile: Profile,
    },
    /// Inclusive pixel bounds.
    Rect {
        row0: usize,
        col0: usize,
        row1: usize,
        col1: usize,
        profile: Profile,
    },
}

impl Shape {
    fn contains(&self, row: usize, col: usize) -> bool {
        match *self {
            Shape::Disk {
                row: cy,
                col: cx,
                radius,
                ..
            } => {
                let (dy, dx) = (row as f64 - cy, col as f64 - cx);
                dx * dx + dy * dy <= radius * radius
            }
            Shape::Rect {
                row0,
                col0,
                row1,
                col1,
                ..
            } => (row0..=row1).contains(&row) && (col0..=col1).contains(&col),
        }
    }

    fn profile(&self) -> Profile {
        match self {
            Shape::Disk { profile, .. } | Shape::Rect { profile, .. } => *profile,
        }
    }

    fn check_bounds(&self, height: usize, width: usize) -> Result<()> {
        let fits = match *self {
            Shape::Disk {
                row, col, radius, ..
            } => {
                radius >= 0.0
                    && row - radius >= 0.0
                    && col - radius >= 0.0
                    && row + radius <= (height - 1) as f64
                    && col + radius <= (width - 1) as f64
            }
            Shape::Rect {
                row0,
                col0,
                row1,
                col1,
                ..
            } => row0 <= row1 && col0 <= col1 && row1 < height && col1 < width,
        };
        if fits {
            Ok(())
        } else {
            Err(Error::invalid(
                "phantom.shapes",
                format!("{self:?} does not fit a {height}x{width} image"),
            ))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub df: f64,
    pub f_start: f64,
    pub background: Profile,
    pub shapes: Vec<Shape>,
    /// Relative per-pixel background roughness in [0, 1); 0 gives a flat background.
    pub texture: f64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        let disk = |row, col, radius, level, decay| Shape::Disk {
            row,
            col,
            radius,
            profile: Profile { level, decay },
        };
        Self {
            height: 64,
            width: 64,
            bands: 36,
            df: 0.05,
            f_start: 0.25,
            background: Profile {
                level: 0.8,
                decay: 0.5,
            },
            shapes: vec![
                disk(18.0, 20.0, 8.0, 0.25, 0.2),
                disk(22.0, 45.0, 6.0, 0.95, 0.9),
                disk(45.0, 30.0, 10.0, 0.45, 0.05),
            ],
            texture: 0.0,
        }
    }
}

/// Clean amplitudes I(row, col, f) in [0, 1], stored (row, col, band).
#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub df: f64,
    pub f_start: f64,
    pub data: Vec<f64>,
}

impl Phantom {
    pub fn freq(&self, band: usize) -> f64 {
        self.f_start + band as f64 * self.df
    }

    pub fn band_image(&self, band: usize) -> Image {
        Image {
            height: self.height,
            width: self.width,
            data: self.data.iter().skip(band).step_by(self.bands).copied().collect(),
        }
    }

    pub fn to_cube(&self) -> Result<SpectralCube> {
        SpectralCube::new(
            self.height,
            self.width,
            self.bands,
            self.df,
            self.f_start,
            self.data.iter().map(|v| *v as f32).collect(),
        )
    }
}

pub fn make_phantom(spec: &PhantomSpec, seed: u64) -> Result<Phantom> {
    let PhantomSpec {
        height,
        width,
        bands,
        df,
        f_start,
        ..
    } = *spec;
    if height == 0 || width == 0 || bands == 0 {
        return Err(Error::invalid("phantom dims", "height, width and bands must be >= 1"));
    }
    if !(df > 0.0) || !(f_start >= 0.0) {
        return Err(Error::invalid("phantom axis", "need df > 0 and f_start >= 0"));
    }
    if !(0.0..1.0).contains(&spec.texture) {
        return Err(Error::invalid("phantom.texture", "must lie in [0, 1)"));
    }
    let profiles = std::iter::once(spec.background).chain(spec.shapes.iter().map(Shape::profile));
    for p in profiles {
        if !(0.0..=1.0).contains(&p.level) || !(p.decay >= 0.0) {
            return Err(Error::invalid(
                "phantom profile",
                format!("need level in [0, 1] and decay >= 0, got {p:?}"),
            ));
        }
    }
    for s in &spec.shapes {
        s.check_bounds(height, width)?;
    }

    let mut rng = stream_rng(seed, Stream::Phantom, 0);
    let freqs: Vec<f64> = (0..bands).map(|b| f_start + b as f64 * df).collect();
    let mut data = Vec::with_capacity(height * width * bands);
    for row in 0..height {
        for col in 0..width {
            let rough = if spec.texture > 0.0 {
                1.0 - spec.texture * rng.random::<f64>()
            } else {
                1.0
            };
            // Later shapes are drawn over earlier ones.
            match spec.shapes.iter().rev().find(|s| s.contains(row, col)) {
                Some(s) => data.extend(freqs.iter().map(|f| s.profile().at(*f))),
                None => data.extend(freqs.iter().map(|f| spec.background.at(*f) * rough)),
            }
        }
    }
    Ok(Phantom {
        height,
        width,
        bands,
        df,
        f_start,
        data,
    })
}

/// Blurs and corrupts one band at 64-bit precision.
pub fn degrade_band(
    clean: &Image,
    kernel: &PsfKernel,
    noise: &NoiseParams,
    freq: f64,
    seed: u64,
    band: usize,
) -> Result<Image> {
    let mut out = convolve_reflect(clean, &kernel.kernel)?;
    let base = variance_at(noise, freq);
    let mut rng = stream_rng(seed, Stream::Degrade, band as u64);
    for v in out.data.iter_mut() {
        let var = base + noise.poisson_gain * *v;
        let z: f64 = rng.sample(StandardNormal);
        *v = (*v + z * var.sqrt()).max(0.0);
    }
    Ok(out)
}

/// All bands at 64-bit precision; band streams are seeded from (seed, band).
pub fn degrade_bands(
    phantom: &Phantom,
    bank: &[PsfKernel],
    noise: &NoiseParams,
    seed: u64,
) -> Result<Vec<Image>> {
    noise.validate()?;
    if bank.len() != phantom.bands {
        return Err(Error::Shape(format!(
            "PSF bank has {} kernels for {} bands",
            bank.len(),
            phantom.bands
        )));
    }
    (0..phantom.bands)
        .into_par_iter()
        .map(|b| degrade_band(&phantom.band_image(b), &bank[b], noise, phantom.freq(b), seed, b))
        .collect()
}

pub fn degrade(
    phantom: &Phantom,
    bank: &[PsfKernel],
    noise: &NoiseParams,
    seed: u64,
) -> Result<SpectralCube> {
    let bands = degrade_bands(phantom, bank, noise, seed)?;
    SpectralCube::from_band_images(&bands, phantom.df, phantom.f_start)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::psf::kernel_from_sigma_px;
    use crate::psf::KernelOptions;

    fn flat_spec(height: usize, width: usize, bands: usize) -> PhantomSpec {
        PhantomSpec {
            height,
            width,
            bands,
            df: 0.1,
            f_start: 0.2,
            background: Profile {
                level: 0.5,
                decay: 0.0,
            },
            shapes: vec![],
            texture: 0.0,
        }
    }

    #[test]
    fn empty_spec_is_constant() {
        let p = make_phantom(&flat_spec(8, 8, 3), 1).unwrap();
        assert!(p.data.iter().all(|v| *v == 0.5));
    }

    #[test]
    fn disk_covers_exact_pixels() {
        let mut spec = flat_spec(64, 64, 2);
        spec.shapes.push(Shape::Disk {
            row: 32.0,
            col: 32.0,
            radius: 8.0,
            profile: Profile {
                level: 0.9,
                decay: 0.0,
            },
        });
        let p = make_phantom(&spec, 1).unwrap();
        let img = p.band_image(0);
        for r in 0..64 {
            for c in 0..64 {
                let inside = (r as i64 - 32).pow(2) + (c as i64 - 32).pow(2) <= 64;
                assert_eq!(img.get(r, c) != 0.5, inside, "({r},{c})");
            }
        }
    }

    #[test]
    fn phantom_is_deterministic_and_bounded() {
        let spec = PhantomSpec {
            texture: 0.2,
            ..PhantomSpec::default()
        };
        let a = make_phantom(&spec, 9).unwrap();
        let b = make_phantom(&spec, 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, make_phantom(&spec, 10).unwrap());
        assert!(a.data.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn background_decays_with_frequency() {
        let mut spec = flat_spec(4, 4, 5);
        spec.background.decay = 0.5;
        let p = make_phantom(&spec, 0).unwrap();
        let s: Vec<f64> = (0..5).map(|b| p.band_image(b).get(0, 0)).collect();
        for (b, v) in s.iter().enumerate() {
            assert!((v - 0.5 * (-0.5 * p.freq(b)).exp()).abs() < 1e-15);
        }
    }

    #[test]
    fn out_of_bounds_shape_rejected() {
        let mut spec = flat_spec(16, 16, 1);
        spec.shapes.push(Shape::Disk {
            row: 3.0,
            col: 8.0,
            radius: 5.0,
            profile: Profile {
                level: 1.0,
                decay: 0.0,
            },
        });
        assert!(make_phantom(&spec, 0).is_err());
        spec.shapes[0] = Shape::Rect {
            row0: 2,
            col0: 2,
            row1: 16,
            col1: 4,
            profile: Profile {
                level: 1.0,
                decay: 0.0,
            },
        };
        assert!(make_phantom(&spec, 0).is_err());
    }

    #[test]
    fn variance_formula() {
        let n = NoiseParams {
            sigma0_sq: 0.0001,
            beta: 0.0004,
            p: 2.0,
            poisson_gain: 0.0,
        };
        assert!((variance_at(&n, 2.0) - 0.0017).abs() < 1e-15);
        let flat = NoiseParams { beta: 0.0, ..n };
        assert_eq!(variance_at(&flat, 0.3), 0.0001);
        assert_eq!(variance_at(&flat, 3.0), 0.0001);
        let lin = NoiseParams {
            sigma0_sq: 0.0,
            beta: 1.0,
            p: 1.0,
            poisson_gain: 0.0,
        };
        assert_eq!(variance_at(&lin, 0.5), 0.5);
        let p0 = NoiseParams { p: 0.0, ..n };
        for f in [0.0, 0.7, 2.0] {
            assert!((variance_at(&p0, f) - 0.0005).abs() < 1e-18);
        }
    }

    #[test]
    fn doubling_noise_profile() {
        let n = NoiseParams::default();
        let ratio = (variance_at(&n, 2.0) / variance_at(&n, 0.1)).sqrt();
        assert!((ratio - 2.0).abs() < 1e-12);
        assert!((n.sigma0_sq.sqrt() - 25.0 / 255.0).abs() < 1e-15);
    }

    #[test]
    fn identity_degradation() {
        let p = make_phantom(&PhantomSpec::default(), 3).unwrap();
        let bank = vec![PsfKernel::delta(1.0); p.bands];
        let bands = degrade_bands(&p, &bank, &NoiseParams::silent(), 11).unwrap();
        for (b, img) in bands.iter().enumerate() {
            assert_eq!(img, &p.band_image(b));
        }
        let cube = degrade(&p, &bank, &NoiseParams::silent(), 11).unwrap();
        assert_eq!(cube, p.to_cube().unwrap());
    }

    #[test]
    fn monte_carlo_noise_variance() {
        let clean = Image::filled(320, 320, 0.5);
        let noise = NoiseParams {
            sigma0_sq: 1e-4,
            beta: 0.0,
            p: 1.0,
            poisson_gain: 0.0,
        };
        let kernel = kernel_from_sigma_px(1.0, 1.0, &KernelOptions::default()).unwrap();
        let out = degrade_band(&clean, &kernel, &noise, 1.0, 5, 0).unwrap();
        let blurred = convolve_reflect(&clean, &kernel.kernel).unwrap();
        let n = out.len() as f64;
        let diffs: Vec<f64> = out.data.iter().zip(&blurred.data).map(|(a, b)| a - b).collect();
        let mean = diffs.iter().sum::<f64>() / n;
        let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((var / 1e-4 - 1.0).abs() < 0.02, "variance {var}");
    }

    #[test]
    fn bank_length_checked() {
        let p = make_phantom(&flat_spec(8, 8, 3), 0).unwrap();
        assert!(degrade(&p, &[PsfKernel::delta(1.0)], &NoiseParams::silent(), 0).is_err());
    }

    #[test]
    fn blur_conserves_mean() {
        let kernel = kernel_from_sigma_px(1.7, 1.0, &KernelOptions::default()).unwrap();
        let flat = Image::filled(32, 32, 0.3);
        let out = convolve_reflect(&flat, &kernel.kernel).unwrap();
        assert!((out.mean() - 0.3).abs() < 1e-6);
        let p = make_phantom(
            &PhantomSpec {
                texture: 0.5,
                ..PhantomSpec::default()
            },
            4,
        )
        .unwrap();
        let img = p.band_image(0);
        let out = convolve_reflect(&img, &kernel.kernel).unwrap();
        assert!((out.mean() / img.mean() - 1.0).abs() < 0.01);
    }
}
