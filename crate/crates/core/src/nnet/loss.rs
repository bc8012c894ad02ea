//! Self-supervised objective and its gradient.
//!
//! `total = term1 + ξ·term2 + γ·term3` with
//! - term1 = MSE(denoised, ỹ)
//! - term2 = MSE(down_s(restored ⊛ k), down_s(ỹ))
//! - term3 = Hessian L1 penalty of restored

use super::unet::{image_to_tensor, net_backward, net_forward, tensor_to_image, NetworkParams};
use crate::error::{Error, Result};
use crate::grid::{convolve_reflect, convolve_reflect_adjoint, Image};
use crate::psf::PsfKernel;
use crate::r2r::R2RPair;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub xi: f64,
    pub gamma: f64,
    pub downsample: usize,
    /// Stop term2/term3 gradients at the denoiser output.
    pub detach_denoiser: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            xi: 1.0,
            gamma: 0.01,
            downsample: 1,
            detach_denoiser: false,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.xi >= 0.0 && self.xi.is_finite()) {
            return Err(Error::invalid("loss.xi", "must be finite and >= 0"));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::invalid("loss.gamma", "must be finite and >= 0"));
        }
        if self.downsample == 0 {
            return Err(Error::invalid("loss.downsample", "must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossTerms {
    pub total: f64,
    pub term1: f64,
    pub term2: f64,
    pub term3: f64,
}

impl LossTerms {
    fn new(term1: f64, term2: f64, term3: f64, cfg: &LossConfig) -> Self {
        Self {
            total: term1 + cfg.xi * term2 + cfg.gamma * term3,
            term1,
            term2,
            term3,
        }
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Second differences at interior pixel (r, c): (z_xx, z_yy, z_xy).
pub(crate) fn second_diffs(z: &Image, r: usize, c: usize) -> (f64, f64, f64) {
    let g = |r: usize, c: usize| z.get(r, c);
    let xx = g(r, c - 1) - 2.0 * g(r, c) + g(r, c + 1);
    let yy = g(r - 1, c) - 2.0 * g(r, c) + g(r + 1, c);
    let xy = (g(r + 1, c + 1) - g(r + 1, c - 1) - g(r - 1, c + 1) + g(r - 1, c - 1)) / 4.0;
    (xx, yy, xy)
}

fn check_hessian(z: &Image) -> Result<()> {
    if z.height < 3 || z.width < 3 {
        return Err(Error::Shape(format!("Hessian penalty needs at least 3x3, got {}x{}", z.height, z.width)));
    }
    Ok(())
}

/// Mean over interior pixels of |z_xx| + |z_yy| + 2|z_xy|.
pub fn hessian_penalty(z: &Image) -> Result<f64> {
    check_hessian(z)?;
    let mut acc = 0.0;
    for r in 1..z.height - 1 {
        for c in 1..z.width - 1 {
            let (xx, yy, xy) = second_diffs(z, r, c);
            acc += xx.abs() + yy.abs() + 2.0 * xy.abs();
        }
    }
    Ok(acc / ((z.height - 2) * (z.width - 2)) as f64)
}

/// Subgradient of [`hessian_penalty`] with sign(0) = 0.
pub fn hessian_penalty_grad(z: &Image) -> Result<Image> {
    check_hessian(z)?;
    let norm = 1.0 / ((z.height - 2) * (z.width - 2)) as f64;
    let mut g = Image::zeros(z.height, z.width);
    let mut add = |r: usize, c: usize, v: f64| {
        let i = r * z.width + c;
        g.data[i] += v;
    };
    for r in 1..z.height - 1 {
        for c in 1..z.width - 1 {
            let (xx, yy, xy) = second_diffs(z, r, c);
            let (sx, sy, sxy) = (sign(xx) * norm, sign(yy) * norm, 2.0 * sign(xy) * norm / 4.0);
            add(r, c - 1, sx);
            add(r, c, -2.0 * sx);
            add(r, c + 1, sx);
            add(r - 1, c, sy);
            add(r, c, -2.0 * sy);
            add(r + 1, c, sy);
            add(r + 1, c + 1, sxy);
            add(r + 1, c - 1, -sxy);
            add(r - 1, c + 1, -sxy);
            add(r - 1, c - 1, sxy);
        }
    }
    Ok(g)
}

fn mse(a: &Image, b: &Image) -> f64 {
    a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

/// Adjoint of s×s average pooling onto an `h`×`w` grid.
fn downsample_adjoint(g: &Image, s: usize, h: usize, w: usize) -> Image {
    let norm = 1.0 / (s * s) as f64;
    Image::from_fn(h, w, |r, c| {
        let (br, bc) = (r / s, c / s);
        if br < g.height && bc < g.width {
            g.get(br, bc) * norm
        } else {
            0.0
        }
    })
}

fn check_shapes(denoised: &Image, restored: &Image, y_tilde: &Image, cfg: &LossConfig) -> Result<()> {
    cfg.validate()?;
    if !denoised.same_shape(y_tilde) || !restored.same_shape(y_tilde) {
        return Err(Error::Shape("loss operands differ in size".into()));
    }
    if y_tilde.height < cfg.downsample || y_tilde.width < cfg.downsample {
        return Err(Error::Shape("downsample factor exceeds the patch".into()));
    }
    Ok(())
}

/// Loss evaluated on given network outputs.
pub fn loss_from_outputs(
    denoised: &Image,
    restored: &Image,
    y_tilde: &Image,
    kernel: &PsfKernel,
    cfg: &LossConfig,
) -> Result<LossTerms> {
    check_shapes(denoised, restored, y_tilde, cfg)?;
    let term1 = mse(denoised, y_tilde);
    let blurred = convolve_reflect(restored, &kernel.kernel)?;
    let term2 = mse(&blurred.downsample(cfg.downsample), &y_tilde.downsample(cfg.downsample));
    let term3 = hessian_penalty(restored)?;
    Ok(LossTerms::new(term1, term2, term3, cfg))
}

/// Loss plus its gradients with respect to the two outputs:
/// `(terms, ∂term1/∂denoised, ∂(ξ·term2 + γ·term3)/∂restored)`.
pub fn output_grads(
    denoised: &Image,
    restored: &Image,
    y_tilde: &Image,
    kernel: &PsfKernel,
    cfg: &LossConfig,
) -> Result<(LossTerms, Image, Image)> {
    let terms = loss_from_outputs(denoised, restored, y_tilde, kernel, cfg)?;
    let n = y_tilde.len() as f64;
    let d_denoised = Image {
        height: denoised.height,
        width: denoised.width,
        data: denoised.data.iter().zip(&y_tilde.data).map(|(d, t)| 2.0 * (d - t) / n).collect(),
    };
    let s = cfg.downsample;
    let blurred = convolve_reflect(restored, &kernel.kernel)?;
    let (bd, td) = (blurred.downsample(s), y_tilde.downsample(s));
    let m = bd.len() as f64;
    let resid = Image {
        height: bd.height,
        width: bd.width,
        data: bd.data.iter().zip(&td.data).map(|(b, t)| cfg.xi * 2.0 * (b - t) / m).collect(),
    };
    let up = downsample_adjoint(&resid, s, restored.height, restored.width);
    let mut d_restored = convolve_reflect_adjoint(&up, &kernel.kernel)?;
    if cfg.gamma != 0.0 {
        let h = hessian_penalty_grad(restored)?;
        for (a, b) in d_restored.data.iter_mut().zip(&h.data) {
            *a += cfg.gamma * b;
        }
    }
    Ok((terms, d_denoised, d_restored))
}

/// Loss of the network pair on one recorrupted pair (input ŷ, target ỹ).
pub fn loss(params: &NetworkParams, pair: &R2RPair, kernel: &PsfKernel, cfg: &LossConfig) -> Result<LossTerms> {
    let (d, r) = super::unet::forward(params, &pair.y_hat)?;
    loss_from_outputs(&d, &r, &pair.y_tilde, kernel, cfg)
}

/// Loss and its exact gradient with respect to every parameter.
pub fn backward(
    params: &NetworkParams,
    pair: &R2RPair,
    kernel: &PsfKernel,
    cfg: &LossConfig,
) -> Result<(LossTerms, NetworkParams)> {
    backward_with_denoised(params, pair, kernel, cfg).map(|(t, g, _)| (t, g))
}

/// [`backward`] that also hands back the denoiser output.
pub(crate) fn backward_with_denoised(
    params: &NetworkParams,
    pair: &R2RPair,
    kernel: &PsfKernel,
    cfg: &LossConfig,
) -> Result<(LossTerms, NetworkParams, Image)> {
    let arch = &params.arch;
    let (d, trace_d) = net_forward(arch, &params.denoiser, &image_to_tensor(&pair.y_hat))?;
    let (r, trace_r) = net_forward(arch, &params.deblurrer, &d)?;
    let denoised = tensor_to_image(&d);
    let (terms, g_d, g_r) = output_grads(&denoised, &tensor_to_image(&r), &pair.y_tilde, kernel, cfg)?;
    let (grad_r, through) = net_backward(arch, &params.deblurrer, &trace_r, image_to_tensor(&g_r), !cfg.detach_denoiser);
    let mut g_d = image_to_tensor(&g_d);
    if let Some(t) = through {
        for (a, b) in g_d.data.iter_mut().zip(&t.data) {
            *a += b;
        }
    }
    let (grad_d, _) = net_backward(arch, &params.denoiser, &trace_d, g_d, false);
    Ok((
        terms,
        NetworkParams {
            arch: *arch,
            denoiser: grad_d,
            deblurrer: grad_r,
        },
        denoised,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hessian_of_constant_and_ramp() {
        assert_eq!(hessian_penalty(&Image::filled(5, 6, 3.0)).unwrap(), 0.0);
        let ramp = Image::from_fn(6, 7, |_, c| c as f64 * 0.5);
        assert_eq!(hessian_penalty(&ramp).unwrap(), 0.0);
        let plane = Image::from_fn(6, 7, |r, c| 2.0 * r as f64 - c as f64 + 1.0);
        assert_eq!(hessian_penalty(&plane).unwrap(), 0.0);
    }

    #[test]
    fn hessian_of_parabola() {
        let z = Image::from_fn(5, 8, |_, c| (c * c) as f64);
        assert_eq!(hessian_penalty(&z).unwrap(), 2.0);
        let saddle = Image::from_fn(5, 5, |r, c| (r * c) as f64);
        // z_xy = 1 everywhere, counted twice.
        assert_eq!(hessian_penalty(&saddle).unwrap(), 2.0);
        assert!(hessian_penalty(&Image::zeros(2, 5)).is_err());
    }

    #[test]
    fn hessian_grad_matches_differences() {
        let z = Image::from_fn(6, 6, |r, c| (1.3 * r as f64 + 0.7 * c as f64 + 0.11 * (r * c) as f64).sin());
        let g = hessian_penalty_grad(&z).unwrap();
        let h = 1e-6;
        for i in 0..z.len() {
            let mut p = z.clone();
            p.data[i] += h;
            let mut m = z.clone();
            m.data[i] -= h;
            let fd = (hessian_penalty(&p).unwrap() - hessian_penalty(&m).unwrap()) / (2.0 * h);
            assert!((fd - g.data[i]).abs() < 1e-8, "index {i}: {fd} vs {}", g.data[i]);
        }
    }

    #[test]
    fn zero_weights_make_exact_target_free() {
        let y = Image::from_fn(4, 4, |r, c| (r + c) as f64 * 0.1);
        let cfg = LossConfig {
            xi: 0.0,
            gamma: 0.0,
            ..LossConfig::default()
        };
        let other = Image::filled(4, 4, 7.0);
        let t = loss_from_outputs(&y, &other, &y, &PsfKernel::delta(1.0), &cfg).unwrap();
        assert_eq!(t.total, 0.0);
    }

    #[test]
    fn delta_kernel_identity_blur() {
        let y = Image::from_fn(6, 6, |r, c| (r * c) as f64 * 0.01);
        let cfg = LossConfig {
            gamma: 0.0,
            ..LossConfig::default()
        };
        let t = loss_from_outputs(&Image::zeros(6, 6), &y, &y, &PsfKernel::delta(1.0), &cfg).unwrap();
        assert_eq!(t.term2, 0.0);
    }

    #[test]
    fn constant_restored_has_no_hessian_gradient() {
        let g = hessian_penalty_grad(&Image::filled(8, 8, 0.4)).unwrap();
        assert!(g.data.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn downsampled_term() {
        let y = Image::from_fn(4, 4, |r, c| (r * 4 + c) as f64);
        let cfg = LossConfig {
            gamma: 0.0,
            downsample: 2,
            ..LossConfig::default()
        };
        // Restored differs from ỹ by a zero-mean pattern inside each 2×2 block.
        let r = Image::from_fn(4, 4, |row, col| y.get(row, col) + if (row + col) % 2 == 0 { 1.0 } else { -1.0 });
        let t = loss_from_outputs(&y, &r, &y, &PsfKernel::delta(1.0), &cfg).unwrap();
        assert_eq!(t.term2, 0.0);
    }
}
