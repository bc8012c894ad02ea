//! Recorrupted-to-recorrupted training pairs.
//!
//! From one noisy image `y` two images with anti-correlated perturbations are
//! drawn: `ŷ = y + α·n`, `ỹ = y − n/α`, with `n ~ N(0, diag(Σ))` and the
//! per-pixel variance estimated as `g·(H(y) − b)` (floored at ε), where `H` is
//! a 5×5 box filter and `b` the background level.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::grid::{convolve_reflect, Image, Kernel2};
use crate::rng::{derive_seed, stream_rng, Stream};

pub const SMOOTHING_SIZE: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Background {
    /// q-th percentile (0–100) of the smoothed image.
    Percentile(f64),
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct R2RConfig {
    pub alpha: f64,
    pub background: Background,
    pub variance_floor: f64,
    /// Variance per unit of excess smoothed intensity.
    pub variance_gain: f64,
    pub seed: u64,
}

impl Default for R2RConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            background: Background::Percentile(1.0),
            variance_floor: 1e-6,
            variance_gain: 1.0,
            seed: 0,
        }
    }
}

impl R2RConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha == 0.0 || !self.alpha.is_finite() {
            return Err(Error::invalid("r2r.alpha", "must be finite and nonzero"));
        }
        if let Background::Percentile(q) = self.background {
            if !(0.0..=100.0).contains(&q) {
                return Err(Error::invalid("r2r.background", format!("percentile {q} outside [0, 100]")));
            }
        }
        if !(self.variance_floor > 0.0) {
            return Err(Error::invalid("r2r.variance_floor", "must be positive"));
        }
        if !(self.variance_gain > 0.0 && self.variance_gain.is_finite()) {
            return Err(Error::invalid("r2r.variance_gain", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct R2RPair {
    pub y_hat: Image,
    pub y_tilde: Image,
    pub sigma_map: Image,
}

/// Linear-interpolated percentile of `values` (q in [0, 100]).
pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn estimate_sigma(y: &Image, cfg: &R2RConfig) -> Result<Image> {
    cfg.validate()?;
    if y.height < SMOOTHING_SIZE || y.width < SMOOTHING_SIZE {
        return Err(Error::Shape(format!(
            "variance estimate needs at least {SMOOTHING_SIZE}x{SMOOTHING_SIZE}, got {}x{}",
            y.height, y.width
        )));
    }
    let smooth = convolve_reflect(y, &Kernel2::boxcar(SMOOTHING_SIZE))?;
    let b = match cfg.background {
        Background::Percentile(q) => percentile(&smooth.data, q),
        Background::Fixed(b) => b,
    };
    Ok(Image {
        height: y.height,
        width: y.width,
        data: smooth
            .data
            .iter()
            .map(|h| (cfg.variance_gain * (h - b)).max(cfg.variance_floor).sqrt())
            .collect(),
    })
}

/// Builds the pair from an explicit perturbation `n` (already scaled by σ).
pub fn pair_from_noise(y: &Image, noise: &Image, alpha: f64, sigma_map: Image) -> R2RPair {
    assert!(y.same_shape(noise) && y.same_shape(&sigma_map));
    let inv = 1.0 / alpha;
    R2RPair {
        y_hat: Image {
            height: y.height,
            width: y.width,
            data: y.data.iter().zip(&noise.data).map(|(v, n)| v + alpha * n).collect(),
        },
        y_tilde: Image {
            height: y.height,
            width: y.width,
            data: y.data.iter().zip(&noise.data).map(|(v, n)| v - n * inv).collect(),
        },
        sigma_map,
    }
}

/// Draws one pair with a precomputed σ map.
pub fn draw_pair(y: &Image, sigma_map: &Image, alpha: f64, rng: &mut impl Rng) -> R2RPair {
    let noise = Image {
        height: y.height,
        width: y.width,
        data: sigma_map
            .data
            .iter()
            .map(|s| s * rng.sample::<f64, _>(StandardNormal))
            .collect(),
    };
    pair_from_noise(y, &noise, alpha, sigma_map.clone())
}

pub fn make_pair(y: &Image, cfg: &R2RConfig) -> Result<R2RPair> {
    let sigma = estimate_sigma(y, cfg)?;
    let mut rng = stream_rng(cfg.seed, Stream::Recorrupt, 0);
    Ok(draw_pair(y, &sigma, cfg.alpha, &mut rng))
}

/// Deterministic sequence of pairs cycling through `images`, fresh noise per pair.
#[derive(Debug, Clone)]
pub struct PairStream<'a> {
    images: &'a [Image],
    cfg: R2RConfig,
    next: usize,
    count: usize,
}

impl Iterator for PairStream<'_> {
    type Item = Result<R2RPair>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.count {
            return None;
        }
        let i = self.next;
        self.next += 1;
        let cfg = R2RConfig {
            seed: derive_seed(self.cfg.seed, Stream::Recorrupt, i as u64),
            ..self.cfg
        };
        Some(make_pair(&self.images[i % self.images.len()], &cfg))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.count - self.next;
        (left, Some(left))
    }
}

pub fn pair_stream<'a>(images: &'a [Image], cfg: &R2RConfig, count: usize) -> Result<PairStream<'a>> {
    if images.is_empty() {
        return Err(Error::invalid("images", "pair stream needs at least one image"));
    }
    cfg.validate()?;
    Ok(PairStream {
        images,
        cfg: *cfg,
        next: 0,
        count,
    })
}
