//! Two-stage encoder-decoder with skip concatenations.
//!
//! Layer order (widths w1, w2, w3):
//!
//! | # | layer | shape |
//! |---|-------|-------|
//! | 0, 1 | encoder 1 | 1→w1, w1→w1 (3×3) |
//! | 2, 3 | encoder 2 (after 2×2 average pool) | w1→w2, w2→w2 |
//! | 4, 5 | bottleneck (after pool) | w2→w3, w3→w3 |
//! | 6 | upsample ×2, then | w3→w2 |
//! | 7, 8 | decoder 2 on [up, enc2] | 2·w2→w2, w2→w2 |
//! | 9 | upsample ×2, then | w2→w1 |
//! | 10, 11 | decoder 1 on [up, enc1] | 2·w1→w1, w1→w1 |
//! | 12 | output 1×1, no activation | w1→1 |
//!
//! Every 3×3 convolution is followed by ReLU. Parameters are stored per layer
//! as weights `[co][ci][kh][kw]` followed by biases `[co]`.

use rand::Rng;
use rand_distr::StandardNormal;

use super::layers::{
    avg_pool2, avg_pool2_backward, concat, conv_backward, conv_forward, relu_backward_inplace, relu_inplace,
    split, upsample2, upsample2_backward, Tensor,
};
use crate::error::{Error, Result};
use crate::grid::Image;
use crate::rng::{stream_rng, Stream};

pub const LAYERS: usize = 13;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArchConfig {
    pub widths: [usize; 3],
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self { widths: [16, 32, 64] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub ci: usize,
    pub co: usize,
    pub k: usize,
}

impl ConvSpec {
    pub fn weights(&self) -> usize {
        self.co * self.ci * self.k * self.k
    }

    pub fn params(&self) -> usize {
        self.weights() + self.co
    }

    pub fn fan_in(&self) -> usize {
        self.ci * self.k * self.k
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.widths.contains(&0) {
            return Err(Error::invalid("arch.widths", "every width must be positive"));
        }
        Ok(())
    }

    pub fn layers(&self) -> [ConvSpec; LAYERS] {
        let [a, b, c] = self.widths;
        let s = |ci, co| ConvSpec { ci, co, k: 3 };
        [
            s(1, a),
            s(a, a),
            s(a, b),
            s(b, b),
            s(b, c),
            s(c, c),
            s(c, b),
            s(2 * b, b),
            s(b, b),
            s(b, a),
            s(2 * a, a),
            s(a, a),
            ConvSpec { ci: a, co: 1, k: 1 },
        ]
    }

    /// Parameter count of one network.
    pub fn param_count(&self) -> usize {
        self.layers().iter().map(ConvSpec::params).sum()
    }

    /// Start offset of every layer inside the flat parameter vector.
    pub fn offsets(&self) -> [usize; LAYERS] {
        let mut out = [0; LAYERS];
        let mut at = 0;
        for (o, l) in out.iter_mut().zip(self.layers()) {
            *o = at;
            at += l.params();
        }
        out
    }
}

/// Denoiser and deblurrer weights.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub arch: ArchConfig,
    pub denoiser: Vec<f64>,
    pub deblurrer: Vec<f64>,
}

impl NetworkParams {
    pub fn zeros(arch: ArchConfig) -> Self {
        let n = arch.param_count();
        Self {
            arch,
            denoiser: vec![0.0; n],
            deblurrer: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.denoiser.len() + self.deblurrer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat view index: denoiser entries first, then deblurrer.
    pub fn get(&self, i: usize) -> f64 {
        let n = self.denoiser.len();
        if i < n {
            self.denoiser[i]
        } else {
            self.deblurrer[i - n]
        }
    }

    pub fn set(&mut self, i: usize, v: f64) {
        let n = self.denoiser.len();
        if i < n {
            self.denoiser[i] = v;
        } else {
            self.deblurrer[i - n] = v;
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.denoiser.iter().chain(&self.deblurrer)
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.denoiser.iter_mut().chain(&mut self.deblurrer)
    }

    pub fn all_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }

    /// Adds `other · scale` entrywise.
    pub fn add_scaled(&mut self, other: &NetworkParams, scale: f64) {
        for (a, b) in self.iter_mut().zip(other.iter()) {
            *a += scale * b;
        }
    }
}

/// Kaiming-normal weights (variance 2/fan_in) and zero biases.
pub fn init_params(arch: ArchConfig, seed: u64) -> Result<NetworkParams> {
    arch.validate()?;
    let mut params = NetworkParams::zeros(arch);
    for (net, flat) in [&mut params.denoiser, &mut params.deblurrer].into_iter().enumerate() {
        let mut rng = stream_rng(seed, Stream::Init, net as u64);
        let mut at = 0;
        for spec in arch.layers() {
            let std = (2.0 / spec.fan_in() as f64).sqrt();
            for w in &mut flat[at..at + spec.weights()] {
                *w = std * rng.sample::<f64, _>(StandardNormal);
            }
            at += spec.params();
        }
    }
    Ok(params)
}

fn layer<'a>(arch: &ArchConfig, params: &'a [f64], i: usize) -> (&'a [f64], &'a [f64], ConvSpec) {
    let spec = arch.layers()[i];
    let off = arch.offsets()[i];
    let w = &params[off..off + spec.weights()];
    let b = &params[off + spec.weights()..off + spec.params()];
    (w, b, spec)
}

/// Intermediate activations kept for the backward pass: `inputs[i]` feeds
/// layer `i`, `outputs[i]` is its (activated) result.
#[derive(Debug, Clone)]
pub struct Trace {
    pub inputs: Vec<Tensor>,
    pub outputs: Vec<Tensor>,
}

fn check_input(h: usize, w: usize) -> Result<()> {
    if h == 0 || w == 0 || !h.is_multiple_of(4) || !w.is_multiple_of(4) {
        return Err(Error::Shape(format!("network input {h}x{w} must be nonempty and divisible by 4")));
    }
    Ok(())
}

/// One network applied to a single-channel map.
pub fn net_forward(arch: &ArchConfig, params: &[f64], x: &Tensor) -> Result<(Tensor, Trace)> {
    check_input(x.h, x.w)?;
    if x.c != 1 || params.len() != arch.param_count() {
        return Err(Error::Shape("network input must be one channel with matching parameters".into()));
    }
    let mut inputs: Vec<Tensor> = Vec::with_capacity(LAYERS);
    let mut outputs: Vec<Tensor> = Vec::with_capacity(LAYERS);
    let run = |i: usize, input: Tensor, inputs: &mut Vec<Tensor>, outputs: &mut Vec<Tensor>| {
        let (w, b, spec) = layer(arch, params, i);
        let mut y = conv_forward(&input, w, b, spec.co, spec.k);
        if i + 1 < LAYERS {
            relu_inplace(&mut y);
        }
        inputs.push(input);
        outputs.push(y);
    };
    run(0, x.clone(), &mut inputs, &mut outputs);
    run(1, outputs[0].clone(), &mut inputs, &mut outputs);
    run(2, avg_pool2(&outputs[1]), &mut inputs, &mut outputs);
    run(3, outputs[2].clone(), &mut inputs, &mut outputs);
    run(4, avg_pool2(&outputs[3]), &mut inputs, &mut outputs);
    run(5, outputs[4].clone(), &mut inputs, &mut outputs);
    run(6, upsample2(&outputs[5]), &mut inputs, &mut outputs);
    run(7, concat(&outputs[6], &outputs[3]), &mut inputs, &mut outputs);
    run(8, outputs[7].clone(), &mut inputs, &mut outputs);
    run(9, upsample2(&outputs[8]), &mut inputs, &mut outputs);
    run(10, concat(&outputs[9], &outputs[1]), &mut inputs, &mut outputs);
    run(11, outputs[10].clone(), &mut inputs, &mut outputs);
    run(12, outputs[11].clone(), &mut inputs, &mut outputs);
    let out = outputs[12].clone();
    Ok((out, Trace { inputs, outputs }))
}

/// Reverse pass of [`net_forward`]. Returns the parameter gradient and,
/// when requested, the gradient with respect to the input map.
pub fn net_backward(
    arch: &ArchConfig,
    params: &[f64],
    trace: &Trace,
    dout: Tensor,
    need_input: bool,
) -> (Vec<f64>, Option<Tensor>) {
    let specs = arch.layers();
    let offs = arch.offsets();
    let mut grad = vec![0.0; arch.param_count()];
    // Gradient arriving at each layer's activated output.
    let mut douts: Vec<Option<Tensor>> = vec![None; LAYERS];
    douts[12] = Some(dout);
    let add = |slot: &mut Option<Tensor>, g: Tensor| match slot {
        Some(t) => {
            for (a, b) in t.data.iter_mut().zip(&g.data) {
                *a += b;
            }
        }
        None => *slot = Some(g),
    };
    let mut dinput = None;
    for i in (0..LAYERS).rev() {
        let mut g = douts[i].take().expect("every layer output reaches the loss");
        if i + 1 < LAYERS {
            relu_backward_inplace(&mut g, &trace.outputs[i]);
        }
        let spec = specs[i];
        let (w_grad, rest) = grad[offs[i]..offs[i] + spec.params()].split_at_mut(spec.weights());
        let w = &params[offs[i]..offs[i] + spec.weights()];
        let need = i > 0 || need_input;
        let dx = conv_backward(&trace.inputs[i], w, &g, spec.k, w_grad, rest, need);
        let Some(dx) = dx else { continue };
        match i {
            0 => dinput = Some(dx),
            1 | 3 | 5 | 8 | 11 | 12 => add(&mut douts[i - 1], dx),
            2 => add(&mut douts[1], avg_pool2_backward(&dx)),
            4 => add(&mut douts[3], avg_pool2_backward(&dx)),
            6 => add(&mut douts[5], upsample2_backward(&dx)),
            7 => {
                let (up, skip) = split(&dx, specs[6].co);
                add(&mut douts[6], up);
                add(&mut douts[3], skip);
            }
            9 => add(&mut douts[8], upsample2_backward(&dx)),
            10 => {
                let (up, skip) = split(&dx, specs[9].co);
                add(&mut douts[9], up);
                add(&mut douts[1], skip);
            }
            _ => unreachable!(),
        }
    }
    (grad, dinput)
}

pub fn image_to_tensor(img: &Image) -> Tensor {
    Tensor {
        c: 1,
        h: img.height,
        w: img.width,
        data: img.data.clone(),
    }
}

pub fn tensor_to_image(t: &Tensor) -> Image {
    Image {
        height: t.h,
        width: t.w,
        data: t.data.clone(),
    }
}

/// Runs denoiser then deblurrer, returning (denoised, restored).
pub fn forward(params: &NetworkParams, image: &Image) -> Result<(Image, Image)> {
    let (d, _) = net_forward(&params.arch, &params.denoiser, &image_to_tensor(image))?;
    let (r, _) = net_forward(&params.arch, &params.deblurrer, &d)?;
    Ok((tensor_to_image(&d), tensor_to_image(&r)))
}
