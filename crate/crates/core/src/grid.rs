//! Single-channel 64-bit image plane and the reflect-padded filtering used by
//! the forward model, the recorruption variance estimate and the loss.

use crate::error::{Error, Result};

/// Row-major H×W plane of 64-bit values.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Shape(format!("empty image {height}x{width}")));
        }
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "{height}x{width} image needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        self.data[row * self.width + col] = v;
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Copies the `height`×`width` window whose top-left corner is (row, col).
    pub fn crop(&self, row: usize, col: usize, height: usize, width: usize) -> Image {
        assert!(row + height <= self.height && col + width <= self.width);
        let mut data = Vec::with_capacity(height * width);
        for r in row..row + height {
            data.extend_from_slice(&self.data[r * self.width + col..r * self.width + col + width]);
        }
        Image {
            height,
            width,
            data,
        }
    }

    pub fn flip_horizontal(&self) -> Image {
        Image::from_fn(self.height, self.width, |r, c| self.get(r, self.width - 1 - c))
    }

    pub fn flip_vertical(&self) -> Image {
        Image::from_fn(self.height, self.width, |r, c| self.get(self.height - 1 - r, c))
    }

    /// Extends the image to `height`×`width` by mirror reflection about the
    /// last row/column (edge sample not repeated).
    pub fn pad_reflect_to(&self, height: usize, width: usize) -> Image {
        assert!(height >= self.height && width >= self.width);
        Image::from_fn(height, width, |r, c| {
            self.get(reflect(r as isize, self.height), reflect(c as isize, self.width))
        })
    }

    /// s×s average pooling; trailing rows/columns that do not fill a block are dropped.
    pub fn downsample(&self, factor: usize) -> Image {
        if factor <= 1 {
            return self.clone();
        }
        let h = self.height / factor;
        let w = self.width / factor;
        let norm = 1.0 / (factor * factor) as f64;
        Image::from_fn(h, w, |r, c| {
            let mut acc = 0.0;
            for dr in 0..factor {
                for dc in 0..factor {
                    acc += self.get(r * factor + dr, c * factor + dc);
                }
            }
            acc * norm
        })
    }
}

/// Mirror index into `0..n` without repeating the edge sample (`-1 → 1`, `n → n-2`).
#[inline]
pub fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - m;
    }
    m as usize
}

/// Square filter kernel, row-major, odd side length.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel2 {
    pub size: usize,
    pub values: Vec<f64>,
}

impl Kernel2 {
    pub fn new(size: usize, values: Vec<f64>) -> Result<Self> {
        if size.is_multiple_of(2) || values.len() != size * size {
            return Err(Error::Shape(format!(
                "kernel needs odd side and side² values, got side {size} with {} values",
                values.len()
            )));
        }
        Ok(Self { size, values })
    }

    pub fn delta() -> Self {
        Self {
            size: 1,
            values: vec![1.0],
        }
    }

    pub fn boxcar(size: usize) -> Self {
        let v = 1.0 / (size * size) as f64;
        Self {
            size,
            values: vec![v; size * size],
        }
    }

    #[inline]
    pub fn radius(&self) -> usize {
        self.size / 2
    }
}

fn check_fits(img: &Image, kernel: &Kernel2) -> Result<()> {
    if kernel.size > img.height || kernel.size > img.width {
        return Err(Error::Shape(format!(
            "kernel {}x{} larger than image {}x{}",
            kernel.size, kernel.size, img.height, img.width
        )));
    }
    Ok(())
}

/// 2-D convolution with reflect padding, output the same size as the input.
pub fn convolve_reflect(img: &Image, kernel: &Kernel2) -> Result<Image> {
    check_fits(img, kernel)?;
    if kernel.size == 1 {
        let k = kernel.values[0];
        return Ok(Image {
            height: img.height,
            width: img.width,
            data: img.data.iter().map(|v| v * k).collect(),
        });
    }
    let r = kernel.radius() as isize;
    let (h, w) = (img.height, img.width);
    // Pre-pad once so the inner loop is branch-free.
    let pw = w + 2 * r as usize;
    let ph = h + 2 * r as usize;
    let mut padded = vec![0.0; ph * pw];
    for pr in 0..ph {
        let sr = reflect(pr as isize - r, h);
        for pc in 0..pw {
            padded[pr * pw + pc] = img.data[sr * w + reflect(pc as isize - r, w)];
        }
    }
    let k = kernel.size;
    let mut out = vec![0.0; h * w];
    for row in 0..h {
        for col in 0..w {
            let mut acc = 0.0;
            // True convolution: kernel tap (a, b) reads offset (r - a, r - b).
            for a in 0..k {
                let base = (row + k - 1 - a) * pw + col;
                let krow = &kernel.values[a * k..(a + 1) * k];
                for (b, kv) in krow.iter().enumerate() {
                    acc += kv * padded[base + k - 1 - b];
                }
            }
            out[row * w + col] = acc;
        }
    }
    Ok(Image {
        height: h,
        width: w,
        data: out,
    })
}

/// Adjoint of [`convolve_reflect`]: maps a gradient on the output back onto the input.
pub fn convolve_reflect_adjoint(grad: &Image, kernel: &Kernel2) -> Result<Image> {
    check_fits(grad, kernel)?;
    let r = kernel.radius() as isize;
    let (h, w) = (grad.height, grad.width);
    let k = kernel.size;
    let mut out = vec![0.0; h * w];
    for row in 0..h {
        for col in 0..w {
            let g = grad.data[row * w + col];
            if g == 0.0 {
                continue;
            }
            for a in 0..k {
                let sr = reflect(row as isize - (a as isize - r), h);
                for b in 0..k {
                    let sc = reflect(col as isize - (b as isize - r), w);
                    out[sr * w + sc] += kernel.values[a * k + b] * g;
                }
            }
        }
    }
    Ok(Image {
        height: h,
        width: w,
        data: out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_indices() {
        assert_eq!(reflect(-1, 5), 1);
        assert_eq!(reflect(-2, 5), 2);
        assert_eq!(reflect(5, 5), 3);
        assert_eq!(reflect(6, 5), 2);
        assert_eq!(reflect(0, 1), 0);
        assert_eq!(reflect(3, 5), 3);
    }

    #[test]
    fn delta_kernel_is_identity() {
        let img = Image::from_fn(4, 5, |r, c| (r * 7 + c) as f64 * 0.3);
        assert_eq!(convolve_reflect(&img, &Kernel2::delta()).unwrap(), img);
    }

    #[test]
    fn constant_image_preserved_by_box() {
        let img = Image::filled(9, 9, 0.7);
        let out = convolve_reflect(&img, &Kernel2::boxcar(5)).unwrap();
        for v in out.data {
            assert!((v - 0.7).abs() < 1e-15);
        }
    }

    #[test]
    fn asymmetric_kernel_is_convolution_not_correlation() {
        // Impulse at the centre reproduces the kernel itself.
        let mut img = Image::zeros(5, 5);
        img.set(2, 2, 1.0);
        let kernel = Kernel2::new(3, (1..=9).map(f64::from).collect()).unwrap();
        let out = convolve_reflect(&img, &kernel).unwrap();
        for a in 0..3 {
            for b in 0..3 {
                assert_eq!(out.get(1 + a, 1 + b), kernel.values[a * 3 + b]);
            }
        }
    }

    #[test]
    fn adjoint_identity() {
        // <K x, y> == <x, K^T y>
        let x = Image::from_fn(6, 7, |r, c| ((r * 13 + c * 7) % 11) as f64 - 5.0);
        let y = Image::from_fn(6, 7, |r, c| ((r * 3 + c * 5) % 7) as f64 * 0.5);
        let kernel = Kernel2::new(5, (0..25).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let kx = convolve_reflect(&x, &kernel).unwrap();
        let kty = convolve_reflect_adjoint(&y, &kernel).unwrap();
        let lhs: f64 = kx.data.iter().zip(&y.data).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data.iter().zip(&kty.data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
    }

    #[test]
    fn oversized_kernel_rejected() {
        let img = Image::zeros(3, 8);
        assert!(matches!(
            convolve_reflect(&img, &Kernel2::boxcar(5)),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn downsample_averages_blocks() {
        let img = Image::from_fn(4, 4, |r, c| (r * 4 + c) as f64);
        let d = img.downsample(2);
        assert_eq!(d.data, vec![2.5, 4.5, 10.5, 12.5]);
    }
}
