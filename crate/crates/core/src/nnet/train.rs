//! Adam training on random recorrupted patches, and inference on component stacks.

use rand::Rng;
use rayon::prelude::*;

use super::loss::{backward_with_denoised, LossConfig, LossTerms};
use super::unet::{forward, init_params, ArchConfig, NetworkParams};
use crate::error::{Error, Result};
use crate::grid::Image;
use crate::metrics::psnr_values;
use crate::pca::ComponentStack;
use crate::psf::PsfKernel;
use crate::r2r::{draw_pair, estimate_sigma, R2RConfig, R2RPair};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    /// Optimizer steps per epoch; `None` covers the training images' area once.
    pub steps_per_epoch: Option<usize>,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub patch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            epochs: 100,
            steps_per_epoch: None,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            patch_size: 64,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("train.batch_size", "must be positive"));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("train.epochs", "must be positive"));
        }
        if self.steps_per_epoch == Some(0) {
            return Err(Error::invalid("train.steps_per_epoch", "must be positive"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("train.learning_rate", "must be finite and >= 0"));
        }
        for (field, b) in [("train.beta1", self.beta1), ("train.beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::invalid(field, "must lie in [0, 1)"));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::invalid("train.eps", "must be positive"));
        }
        if self.patch_size < 16 || !self.patch_size.is_multiple_of(4) {
            return Err(Error::invalid("train.patch_size", "must be >= 16 and divisible by 4"));
        }
        Ok(())
    }
}

/// Mean statistics over one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub term1: f64,
    pub term2: f64,
    pub term3: f64,
    /// PSNR (0–255 scale) of the denoised patch against its network input.
    pub psnr: f64,
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,loss,term1,term2,term3,psnr\n");
    for r in history {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.epoch, r.loss, r.term1, r.term2, r.term3, r.psnr
        ));
    }
    out
}

#[derive(Debug, Clone)]
pub struct Adam {
    m: NetworkParams,
    v: NetworkParams,
    t: i32,
}

impl Adam {
    pub fn new(arch: ArchConfig) -> Self {
        Self {
            m: NetworkParams::zeros(arch),
            v: NetworkParams::zeros(arch),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut NetworkParams, grad: &NetworkParams, cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grad.iter())
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            *p -= cfg.learning_rate * (*m / c1) / ((*v / c2).sqrt() + cfg.eps);
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: NetworkParams,
    pub history: Vec<EpochRecord>,
}

fn to_8bit(img: &Image) -> Vec<f64> {
    img.data.iter().map(|v| v * 255.0).collect()
}

/// Draws training sample `index`: random image, crop, flips, then fresh
/// recorruption noise.
fn sample(images: &[Image], sigmas: &[Image], index: u64, r2r: &R2RConfig, patch: usize, seed: u64) -> R2RPair {
    let mut rng = stream_rng(seed, Stream::Patches, index);
    let k = rng.random_range(0..images.len());
    let img = &images[k];
    let row = rng.random_range(0..=img.height - patch);
    let col = rng.random_range(0..=img.width - patch);
    let (flip_h, flip_v): (bool, bool) = (rng.random(), rng.random());
    let prep = |x: &Image| {
        let mut p = x.crop(row, col, patch, patch);
        if flip_h {
            p = p.flip_horizontal();
        }
        if flip_v {
            p = p.flip_vertical();
        }
        p
    };
    let y = prep(img);
    let sigma = prep(&sigmas[k]);
    let mut noise_rng = stream_rng(r2r.seed, Stream::Recorrupt, index);
    draw_pair(&y, &sigma, r2r.alpha, &mut noise_rng)
}

pub fn train(
    images: &[Image],
    kernel: &PsfKernel,
    arch: ArchConfig,
    r2r: &R2RConfig,
    loss_cfg: &LossConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train_with_progress(images, kernel, arch, r2r, loss_cfg, cfg, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with_progress(
    images: &[Image],
    kernel: &PsfKernel,
    arch: ArchConfig,
    r2r: &R2RConfig,
    loss_cfg: &LossConfig,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    loss_cfg.validate()?;
    r2r.validate()?;
    let params = init_params(arch, cfg.seed)?;
    if images.is_empty() {
        return Err(Error::invalid("images", "training needs at least one image"));
    }
    let p = cfg.patch_size;
    if images.iter().any(|img| img.height < p || img.width < p) {
        return Err(Error::invalid("train.patch_size", format!("patch {p} exceeds a training image")));
    }
    if kernel.size() > p {
        return Err(Error::Shape(format!("kernel {} larger than patch {p}", kernel.size())));
    }
    let sigmas = images
        .iter()
        .map(|img| estimate_sigma(img, r2r))
        .collect::<Result<Vec<_>>>()?;
    let steps = cfg.steps_per_epoch.unwrap_or_else(|| {
        let area: usize = images.iter().map(Image::len).sum();
        area.div_ceil(p * p).div_ceil(cfg.batch_size).max(1)
    });

    let mut params = params;
    let mut adam = Adam::new(arch);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut drawn: u64 = 0;
    for epoch in 0..cfg.epochs {
        let mut sums = [0.0f64; 5];
        for step in 0..steps {
            let base = drawn;
            drawn += cfg.batch_size as u64;
            let results = (0..cfg.batch_size as u64)
                .into_par_iter()
                .map(|i| {
                    let pair = sample(images, &sigmas, base + i, r2r, p, cfg.seed);
                    let (terms, grad, denoised) = backward_with_denoised(&params, &pair, kernel, loss_cfg)?;
                    let psnr = psnr_values(&to_8bit(&denoised), &to_8bit(&pair.y_hat), 255.0)?;
                    Ok((terms, grad, psnr))
                })
                .collect::<Result<Vec<(LossTerms, NetworkParams, f64)>>>()?;
            let scale = 1.0 / cfg.batch_size as f64;
            let mut grad = NetworkParams::zeros(arch);
            let mut batch = LossTerms::default();
            let mut psnr = 0.0;
            for (t, g, q) in &results {
                grad.add_scaled(g, scale);
                batch.total += t.total * scale;
                batch.term1 += t.term1 * scale;
                batch.term2 += t.term2 * scale;
                batch.term3 += t.term3 * scale;
                psnr += q * scale;
            }
            if !batch.total.is_finite() || !grad.all_finite() {
                return Err(Error::Diverged {
                    epoch,
                    step,
                    loss: batch.total,
                    learning_rate: cfg.learning_rate,
                });
            }
            adam.step(&mut params, &grad, cfg);
            if !params.all_finite() {
                return Err(Error::Diverged {
                    epoch,
                    step,
                    loss: batch.total,
                    learning_rate: cfg.learning_rate,
                });
            }
            for (s, v) in sums.iter_mut().zip([batch.total, batch.term1, batch.term2, batch.term3, psnr]) {
                *s += v;
            }
        }
        let n = steps as f64;
        let record = EpochRecord {
            epoch,
            loss: sums[0] / n,
            term1: sums[1] / n,
            term2: sums[2] / n,
            term3: sums[3] / n,
            psnr: sums[4] / n,
        };
        on_epoch(&record);
        history.push(record);
    }
    Ok(TrainOutcome { params, history })
}

/// Restores one normalized image: reflect-pad to a multiple of 4, run both
/// networks, crop, clamp to [0, 1].
pub fn restore_image(params: &NetworkParams, img: &Image) -> Result<Image> {
    let h = img.height.div_ceil(4) * 4;
    let w = img.width.div_ceil(4) * 4;
    let padded = if (h, w) == (img.height, img.width) {
        img.clone()
    } else {
        img.pad_reflect_to(h, w)
    };
    let (_, restored) = forward(params, &padded)?;
    let mut out = restored.crop(0, 0, img.height, img.width);
    for v in &mut out.data {
        *v = v.clamp(0.0, 1.0);
    }
    Ok(out)
}

/// Passes every component image through the networks, keeping normalization.
pub fn apply(params: &NetworkParams, components: &ComponentStack) -> Result<ComponentStack> {
    let images = components
        .images
        .par_iter()
        .map(|img| restore_image(params, img))
        .collect::<Result<Vec<_>>>()?;
    Ok(ComponentStack {
        images,
        offsets: components.offsets.clone(),
        scales: components.scales.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ArchConfig {
        ArchConfig { widths: [2, 3, 4] }
    }

    fn image() -> Image {
        Image::from_fn(16, 16, |r, c| 0.5 + 0.4 * ((r as f64 * 0.4).sin() * (c as f64 * 0.3).cos()))
    }

    fn quick() -> TrainConfig {
        TrainConfig {
            batch_size: 2,
            epochs: 1,
            steps_per_epoch: Some(2),
            patch_size: 16,
            seed: 4,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_learning_rate_freezes() {
        let cfg = TrainConfig {
            learning_rate: 0.0,
            ..quick()
        };
        let k = PsfKernel::delta(1.0);
        let out = train(&[image()], &k, small(), &R2RConfig::default(), &LossConfig::default(), &cfg).unwrap();
        assert_eq!(out.history.len(), 1);
        assert_eq!(out.params, init_params(small(), cfg.seed).unwrap());
    }

    #[test]
    fn deterministic_history() {
        let k = PsfKernel::delta(1.0);
        let run = || train(&[image()], &k, small(), &R2RConfig::default(), &LossConfig::default(), &quick()).unwrap();
        let (a, b) = (run(), run());
        assert_eq!(a.history, b.history);
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn invalid_configs() {
        let k = PsfKernel::delta(1.0);
        let r = R2RConfig::default();
        let l = LossConfig::default();
        let bad_patch = TrainConfig {
            patch_size: 18,
            ..quick()
        };
        assert!(train(&[image()], &k, small(), &r, &l, &bad_patch).is_err());
        let too_big = TrainConfig {
            patch_size: 20,
            ..quick()
        };
        assert!(train(&[image()], &k, small(), &r, &l, &too_big).is_err());
        assert!(train(&[], &k, small(), &r, &l, &quick()).is_err());
    }

    #[test]
    fn divergence_is_reported() {
        let cfg = TrainConfig {
            learning_rate: 1e300,
            steps_per_epoch: Some(3),
            ..quick()
        };
        let k = PsfKernel::delta(1.0);
        let err = train(&[image()], &k, small(), &R2RConfig::default(), &LossConfig::default(), &cfg).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }), "{err}");
        assert!(err.to_string().contains("learning rate"));
    }

    #[test]
    fn apply_zero_network_and_odd_sizes() {
        let stack = ComponentStack::from_raw(&[Image::from_fn(10, 13, |r, c| (r * c) as f64)]);
        let zero = NetworkParams::zeros(small());
        let out = apply(&zero, &stack).unwrap();
        assert!(out.images[0].data.iter().all(|v| *v == 0.0));
        assert_eq!((out.images[0].height, out.images[0].width), (10, 13));
        assert_eq!(out.offsets, stack.offsets);
        let p = init_params(small(), 1).unwrap();
        assert_eq!(apply(&p, &stack).unwrap(), apply(&p, &stack).unwrap());
        assert!(apply(&p, &stack).unwrap().images[0].data.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn adam_first_step_is_lr_sized() {
        let arch = small();
        let mut p = NetworkParams::zeros(arch);
        let mut g = NetworkParams::zeros(arch);
        g.denoiser[0] = 3.0;
        g.denoiser[1] = -0.5;
        let cfg = TrainConfig::default();
        Adam::new(arch).step(&mut p, &g, &cfg);
        assert!((p.denoiser[0] + 1e-3).abs() < 1e-9);
        assert!((p.denoiser[1] - 1e-3).abs() < 1e-9);
        assert_eq!(p.denoiser[2], 0.0);
    }
}
