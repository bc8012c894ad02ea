//! Central-difference verification of [`backward`](super::backward).
//!
//! The difference `L(θ+h) − L(θ−h)` is accumulated pixel by pixel (for a
//! squared error, `(a₊ − a₋)(a₊ + a₋ − 2t)`), which equals the difference of
//! the two totals without cancelling against the loss magnitude. A probe whose
//! ±h perturbation changes a ReLU on/off state straddles a point where the
//! loss is not differentiable; such probes are flagged rather than scored.
//! Switches among values below [`KINK_FLOOR`] are rounding noise and do not
//! count. A Hessian entry that changes sign is flagged only when the part of
//! the difference it contributes beyond its linear branch exceeds
//! [`KINK_SHARE`] of the numeric gradient.
//!
//! Each ±h forward pass rounds independently, leaving an absolute error near
//! 1e-16 / h in the quotient. Estimates smaller than [`PRECISE_BELOW`] are
//! therefore recomputed with a direct double-double evaluation of both
//! networks and the loss.

use super::layers::Tensor;
use super::loss::{backward, second_diffs, LossConfig};
use super::unet::{image_to_tensor, net_forward, tensor_to_image, ArchConfig, ConvSpec, NetworkParams, Trace, LAYERS};
use crate::error::Result;
use crate::grid::{convolve_reflect, reflect, Image};
use crate::psf::PsfKernel;
use crate::r2r::R2RPair;

/// Magnitude below which a ReLU switch is not treated as a kink.
pub const KINK_FLOOR: f64 = 1e-12;

/// Largest tolerated share of a numeric gradient owed to Hessian sign changes.
pub const KINK_SHARE: f64 = 1e-5;

/// Numeric estimates below this magnitude are recomputed in double-double.
pub const PRECISE_BELOW: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// Flat index, denoiser entries first.
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    /// The probe crossed a non-differentiable point.
    pub kink: bool,
}

impl GradCheck {
    /// |a − n| / max(|a|, |n|); 0 when both vanish.
    pub fn relative_error(&self) -> f64 {
        let scale = self.magnitude();
        if scale == 0.0 {
            0.0
        } else {
            (self.analytic - self.numeric).abs() / scale
        }
    }

    pub fn magnitude(&self) -> f64 {
        self.analytic.abs().max(self.numeric.abs())
    }
}

struct Eval {
    denoised: Image,
    blurred: Image,
    hessian: Vec<(f64, f64, f64)>,
    switches: Vec<f64>,
}

fn relu_switches(trace: &Trace, out: &mut Vec<f64>) {
    for t in &trace.outputs[..LAYERS - 1] {
        out.extend_from_slice(&t.data);
    }
}

fn sign(v: f64) -> i8 {
    (v > 0.0) as i8 - (v < 0.0) as i8
}

fn crossed(a: &[f64], b: &[f64]) -> bool {
    a.iter()
        .zip(b)
        .any(|(x, y)| sign(*x) != sign(*y) && x.abs().max(y.abs()) > KINK_FLOOR)
}

/// `|p| − |m|` minus its value on the branch of the base point, summed with
/// the loss weights; zero unless some entry changes sign.
fn hessian_excess(plus: &Eval, minus: &Eval, base: &Eval, cfg: &LossConfig) -> f64 {
    let excess = |p: f64, m: f64, b: f64| (p.abs() - m.abs()) - f64::from(sign(b)) * (p - m);
    let sum: f64 = plus
        .hessian
        .iter()
        .zip(&minus.hessian)
        .zip(&base.hessian)
        .map(|((p, m), b)| excess(p.0, m.0, b.0) + excess(p.1, m.1, b.1) + 2.0 * excess(p.2, m.2, b.2))
        .sum();
    cfg.gamma * sum / plus.hessian.len() as f64
}

fn evaluate(params: &NetworkParams, input: &Tensor, kernel: &PsfKernel, cfg: &LossConfig) -> Result<Eval> {
    let (d, trace_d) = net_forward(&params.arch, &params.denoiser, input)?;
    let (r, trace_r) = net_forward(&params.arch, &params.deblurrer, &d)?;
    let restored = tensor_to_image(&r);
    let mut switches = Vec::new();
    relu_switches(&trace_d, &mut switches);
    relu_switches(&trace_r, &mut switches);
    let mut hessian = Vec::with_capacity(restored.len());
    for row in 1..restored.height - 1 {
        for col in 1..restored.width - 1 {
            hessian.push(second_diffs(&restored, row, col));
        }
    }
    let blurred = convolve_reflect(&restored, &kernel.kernel)?.downsample(cfg.downsample);
    Ok(Eval {
        denoised: tensor_to_image(&d),
        blurred,
        hessian,
        switches,
    })
}

fn squared_error_delta(plus: &Image, minus: &Image, target: &Image) -> f64 {
    plus.data
        .iter()
        .zip(&minus.data)
        .zip(&target.data)
        .map(|((p, m), t)| (p - m) * (p + m - 2.0 * t))
        .sum::<f64>()
        / target.len() as f64
}

/// L(θ+h) − L(θ−h), accumulated per pixel.
fn loss_delta(plus: &Eval, minus: &Eval, y_tilde: &Image, target_ds: &Image, cfg: &LossConfig) -> f64 {
    let t1 = squared_error_delta(&plus.denoised, &minus.denoised, y_tilde);
    let t2 = squared_error_delta(&plus.blurred, &minus.blurred, target_ds);
    let t3 = plus
        .hessian
        .iter()
        .zip(&minus.hessian)
        .map(|(p, m)| (p.0.abs() - m.0.abs()) + (p.1.abs() - m.1.abs()) + 2.0 * (p.2.abs() - m.2.abs()))
        .sum::<f64>()
        / plus.hessian.len() as f64;
    t1 + cfg.xi * t2 + cfg.gamma * t3
}

/// Compares the analytic gradient with the central difference at `indices`.
pub fn check_gradients(
    params: &NetworkParams,
    pair: &R2RPair,
    kernel: &PsfKernel,
    cfg: &LossConfig,
    indices: &[usize],
    step: f64,
) -> Result<Vec<GradCheck>> {
    let (_, grad) = backward(params, pair, kernel, cfg)?;
    let input = image_to_tensor(&pair.y_hat);
    let base = evaluate(params, &input, kernel, cfg)?;
    let target_ds = pair.y_tilde.downsample(cfg.downsample);
    let mut probe = params.clone();
    let mut precise_base = None;
    let mut out = Vec::with_capacity(indices.len());
    for &i in indices {
        let orig = probe.get(i);
        probe.set(i, orig + step);
        let plus = evaluate(&probe, &input, kernel, cfg)?;
        probe.set(i, orig - step);
        let minus = evaluate(&probe, &input, kernel, cfg)?;
        probe.set(i, orig);
        let span = (Dd::from(orig + step) - Dd::from(orig - step)).value();
        let mut numeric = loss_delta(&plus, &minus, &pair.y_tilde, &target_ds, cfg) / span;
        if numeric.abs() < PRECISE_BELOW {
            let base = precise_base.get_or_insert_with(|| DdBase::new(params, &pair.y_hat));
            numeric = precise_delta(&probe, base, i, orig, step, pair, kernel, cfg) / span;
        }
        let excess = hessian_excess(&plus, &minus, &base, cfg) / span;
        out.push(GradCheck {
            index: i,
            analytic: grad.get(i),
            numeric,
            kink: crossed(&plus.switches, &base.switches)
                || crossed(&minus.switches, &base.switches)
                || excess.abs() > KINK_SHARE * numeric.abs(),
        });
    }
    Ok(out)
}

/// Unevaluated sum `hi + lo` with |lo| ≤ ulp(hi)/2.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Dd {
    hi: f64,
    lo: f64,
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

/// Dekker's split: `a = hi + lo` with both halves holding 26 bits.
fn split(a: f64) -> (f64, f64) {
    let t = 134_217_729.0 * a;
    let hi = t - (t - a);
    (hi, a - hi)
}

/// Exact product `a·b = p + e` without relying on a hardware fma.
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    let (ah, al) = split(a);
    let (bh, bl) = split(b);
    (p, ((ah * bh - p) + ah * bl + al * bh) + al * bl)
}

fn quick_two_sum(a: f64, b: f64) -> Dd {
    let s = a + b;
    Dd { hi: s, lo: b - (s - a) }
}

impl Dd {
    fn value(self) -> f64 {
        self.hi + self.lo
    }

    fn abs(self) -> Dd {
        if self.hi < 0.0 {
            -self
        } else {
            self
        }
    }

    fn scale(self, f: f64) -> Dd {
        self * Dd::from(f)
    }
}

impl From<f64> for Dd {
    fn from(hi: f64) -> Self {
        Dd { hi, lo: 0.0 }
    }
}

impl std::ops::Add for Dd {
    type Output = Dd;
    fn add(self, o: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, o.hi);
        let (t, f) = two_sum(self.lo, o.lo);
        let r = quick_two_sum(s, e + t);
        quick_two_sum(r.hi, r.lo + f)
    }
}

impl std::ops::Neg for Dd {
    type Output = Dd;
    fn neg(self) -> Dd {
        Dd { hi: -self.hi, lo: -self.lo }
    }
}

impl std::ops::Sub for Dd {
    type Output = Dd;
    fn sub(self, o: Dd) -> Dd {
        self + -o
    }
}

impl std::ops::Mul for Dd {
    type Output = Dd;
    fn mul(self, o: Dd) -> Dd {
        let (p, e) = two_prod(self.hi, o.hi);
        quick_two_sum(p, e + (self.hi * o.lo + self.lo * o.hi))
    }
}

impl std::iter::Sum for Dd {
    fn sum<I: Iterator<Item = Dd>>(iter: I) -> Dd {
        iter.fold(Dd::default(), |a, b| a + b)
    }
}

#[derive(Clone)]
struct DdMap {
    c: usize,
    h: usize,
    w: usize,
    data: Vec<Dd>,
}

impl DdMap {
    fn at(&self, c: usize, y: usize, x: usize) -> Dd {
        self.data[(c * self.h + y) * self.w + x]
    }
}

fn dd_conv(x: &DdMap, params: &[f64], spec: ConvSpec, relu: bool) -> DdMap {
    let (h, w, k) = (x.h, x.w, spec.k);
    let hw = h * w;
    let r = (k / 2) as isize;
    let bias = &params[spec.weights()..spec.params()];
    let mut data = Vec::with_capacity(spec.co * hw);
    for (o, b) in bias.iter().enumerate() {
        let mut acc = vec![Dd::from(*b); hw];
        for ci in 0..x.c {
            let src = &x.data[ci * hw..(ci + 1) * hw];
            for ky in 0..k {
                let dy = ky as isize - r;
                let (y0, y1) = ((-dy).max(0) as usize, (h as isize - dy).min(h as isize) as usize);
                for kx in 0..k {
                    let dx = kx as isize - r;
                    let (x0, x1) = ((-dx).max(0) as usize, (w as isize - dx).min(w as isize) as usize);
                    let wv = Dd::from(params[((o * x.c + ci) * k + ky) * k + kx]);
                    for y in y0..y1 {
                        let s = ((y as isize + dy) as usize) * w;
                        let row = &mut acc[y * w + x0..y * w + x1];
                        let from = (s as isize + x0 as isize + dx) as usize;
                        for (a, v) in row.iter_mut().zip(&src[from..from + (x1 - x0)]) {
                            *a = *a + *v * wv;
                        }
                    }
                }
            }
        }
        if relu {
            for a in acc.iter_mut().filter(|a| a.hi <= 0.0) {
                *a = Dd::default();
            }
        }
        data.extend(acc);
    }
    DdMap { c: spec.co, h, w, data }
}

fn dd_pool(x: &DdMap) -> DdMap {
    let (h, w) = (x.h / 2, x.w / 2);
    let mut data = Vec::with_capacity(x.c * h * w);
    for c in 0..x.c {
        for y in 0..h {
            for xx in 0..w {
                let s = x.at(c, 2 * y, 2 * xx) + x.at(c, 2 * y, 2 * xx + 1);
                let t = x.at(c, 2 * y + 1, 2 * xx) + x.at(c, 2 * y + 1, 2 * xx + 1);
                data.push((s + t).scale(0.25));
            }
        }
    }
    DdMap { c: x.c, h, w, data }
}

fn dd_upsample(x: &DdMap) -> DdMap {
    let (h, w) = (x.h * 2, x.w * 2);
    let mut data = Vec::with_capacity(x.c * h * w);
    for c in 0..x.c {
        for y in 0..h {
            for xx in 0..w {
                data.push(x.at(c, y / 2, xx / 2));
            }
        }
    }
    DdMap { c: x.c, h, w, data }
}

fn dd_concat(a: &DdMap, b: &DdMap) -> DdMap {
    let mut data = a.data.clone();
    data.extend_from_slice(&b.data);
    DdMap { c: a.c + b.c, h: a.h, w: a.w, data }
}

/// Layer outputs of one network. Entries before `from` are taken from
/// `cache`; the rest are recomputed.
fn dd_net(arch: &ArchConfig, params: &[f64], x: &DdMap, cache: Option<&[DdMap]>, from: usize) -> Vec<DdMap> {
    let specs = arch.layers();
    let offs = arch.offsets();
    let mut out: Vec<DdMap> = Vec::with_capacity(LAYERS);
    for i in 0..LAYERS {
        if let Some(c) = cache.filter(|_| i < from) {
            out.push(c[i].clone());
            continue;
        }
        let input = match i {
            0 => x.clone(),
            2 | 4 => dd_pool(&out[i - 1]),
            6 | 9 => dd_upsample(&out[i - 1]),
            7 => dd_concat(&out[6], &out[3]),
            10 => dd_concat(&out[9], &out[1]),
            _ => out[i - 1].clone(),
        };
        let layer = &params[offs[i]..offs[i] + specs[i].params()];
        out.push(dd_conv(&input, layer, specs[i], i + 1 < LAYERS));
    }
    out
}

fn dd_blur(z: &DdMap, kernel: &PsfKernel, factor: usize) -> Vec<Dd> {
    let (h, w) = (z.h, z.w);
    let k = kernel.kernel.size;
    let r = kernel.kernel.radius() as isize;
    let mut full = Vec::with_capacity(h * w);
    for row in 0..h {
        for col in 0..w {
            let mut acc = Dd::default();
            for a in 0..k {
                let sr = reflect(row as isize + r - a as isize, h);
                for b in 0..k {
                    let sc = reflect(col as isize + r - b as isize, w);
                    acc = acc + z.at(0, sr, sc) * Dd::from(kernel.kernel.values[a * k + b]);
                }
            }
            full.push(acc);
        }
    }
    if factor <= 1 {
        return full;
    }
    let (dh, dw) = (h / factor, w / factor);
    let norm = 1.0 / (factor * factor) as f64;
    let mut out = Vec::with_capacity(dh * dw);
    for row in 0..dh {
        for col in 0..dw {
            let mut acc = Dd::default();
            for dr in 0..factor {
                for dc in 0..factor {
                    acc = acc + full[(row * factor + dr) * w + col * factor + dc];
                }
            }
            out.push(acc.scale(norm));
        }
    }
    out
}

fn dd_hessian(z: &DdMap) -> Vec<Dd> {
    let g = |r: usize, c: usize| z.at(0, r, c);
    let mut out = Vec::new();
    for r in 1..z.h - 1 {
        for c in 1..z.w - 1 {
            let xx = g(r, c - 1) - g(r, c).scale(2.0) + g(r, c + 1);
            let yy = g(r - 1, c) - g(r, c).scale(2.0) + g(r + 1, c);
            let xy = (g(r + 1, c + 1) - g(r + 1, c - 1) - g(r - 1, c + 1) + g(r - 1, c - 1)).scale(0.25);
            out.push(xx.abs() + yy.abs() + xy.abs().scale(2.0));
        }
    }
    out
}

struct DdEval {
    denoised: Vec<Dd>,
    blurred: Vec<Dd>,
    hessian: Vec<Dd>,
}

/// Base-point activations of both networks.
struct DdBase {
    input: DdMap,
    denoiser: Vec<DdMap>,
    deblurrer: Vec<DdMap>,
}

impl DdBase {
    fn new(params: &NetworkParams, y: &Image) -> Self {
        let input = DdMap {
            c: 1,
            h: y.height,
            w: y.width,
            data: y.data.iter().map(|v| Dd::from(*v)).collect(),
        };
        let denoiser = dd_net(&params.arch, &params.denoiser, &input, None, 0);
        let deblurrer = dd_net(&params.arch, &params.deblurrer, &denoiser[LAYERS - 1], None, 0);
        Self { input, denoiser, deblurrer }
    }
}

/// Loss pieces with entry `i` of `params` changed; layers upstream of it are reused.
fn dd_evaluate(params: &NetworkParams, i: usize, base: &DdBase, kernel: &PsfKernel, cfg: &LossConfig) -> DdEval {
    let arch = &params.arch;
    let n = arch.param_count();
    let layer_of = |j: usize| arch.offsets().iter().rposition(|o| *o <= j).unwrap_or(0);
    let (denoiser, deblurrer) = if i < n {
        let d = dd_net(arch, &params.denoiser, &base.input, Some(&base.denoiser), layer_of(i));
        let r = dd_net(arch, &params.deblurrer, &d[LAYERS - 1], None, 0);
        (d, r)
    } else {
        let r = dd_net(
            arch,
            &params.deblurrer,
            &base.denoiser[LAYERS - 1],
            Some(&base.deblurrer),
            layer_of(i - n),
        );
        (Vec::new(), r)
    };
    let d = denoiser.last().unwrap_or(&base.denoiser[LAYERS - 1]);
    let r = &deblurrer[LAYERS - 1];
    DdEval {
        blurred: dd_blur(r, kernel, cfg.downsample),
        hessian: dd_hessian(r),
        denoised: d.data.clone(),
    }
}

fn dd_squared_error_delta(plus: &[Dd], minus: &[Dd], target: &Image) -> Dd {
    let sum: Dd = plus
        .iter()
        .zip(minus)
        .zip(&target.data)
        .map(|((p, m), t)| (*p - *m) * (*p + *m - Dd::from(*t).scale(2.0)))
        .sum();
    sum.scale(1.0 / target.len() as f64)
}

/// L(θ+h) − L(θ−h) for entry `i`, evaluated in double-double.
#[allow(clippy::too_many_arguments)]
fn precise_delta(
    params: &NetworkParams,
    base: &DdBase,
    i: usize,
    orig: f64,
    step: f64,
    pair: &R2RPair,
    kernel: &PsfKernel,
    cfg: &LossConfig,
) -> f64 {
    let mut probe = params.clone();
    probe.set(i, orig + step);
    let plus = dd_evaluate(&probe, i, base, kernel, cfg);
    probe.set(i, orig - step);
    let minus = dd_evaluate(&probe, i, base, kernel, cfg);
    let target_ds = pair.y_tilde.downsample(cfg.downsample);
    let t1 = dd_squared_error_delta(&plus.denoised, &minus.denoised, &pair.y_tilde);
    let t2 = dd_squared_error_delta(&plus.blurred, &minus.blurred, &target_ds);
    let t3: Dd = plus.hessian.iter().zip(&minus.hessian).map(|(p, m)| *p - *m).sum();
    let t3 = t3.scale(1.0 / plus.hessian.len() as f64);
    (t1 + t2.scale(cfg.xi) + t3.scale(cfg.gamma)).value()
}
