//! Spectral principal component decomposition of a cube and its inverse.
//!
//! The cube is viewed as a B×N matrix (one pixel spectrum per column). Each
//! band is centred over pixels, the B×B sample covariance (divisor N−1) is
//! eigendecomposed, and the retained eigenvectors project the centred data
//! onto component images. Reconstruction re-adds the band means.

use crate::cube::SpectralCube;
use crate::error::{Error, Result};
use crate::grid::Image;
use crate::linalg::symmetric_eigen;

/// Off-diagonal tolerance of the Jacobi iteration, relative to ‖C‖_F.
pub const EIGEN_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Retain {
    Count(usize),
    /// Smallest r whose cumulative explained variance reaches the fraction.
    Fraction(f64),
}

impl Default for Retain {
    fn default() -> Self {
        Retain::Count(5)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub df: f64,
    pub f_start: f64,
    /// Per-band mean over pixels.
    pub band_means: Vec<f64>,
    /// Nonincreasing, clamped at 0.
    pub eigenvalues: Vec<f64>,
    /// Row-major B×B; column j is the j-th principal direction.
    pub eigenvectors: Vec<f64>,
    pub retained: usize,
    /// Cumulative explained-variance fraction after each component.
    pub explained: Vec<f64>,
}

impl PcaModel {
    pub fn eigenvector(&self, j: usize) -> Vec<f64> {
        (0..self.bands).map(|b| self.eigenvectors[b * self.bands + j]).collect()
    }

    /// CSV `index,eigenvalue,cumulative_fraction`, 1-based index.
    pub fn spectrum_csv(&self) -> String {
        let mut out = String::from("index,eigenvalue,cumulative_fraction\n");
        for (i, (l, c)) in self.eigenvalues.iter().zip(&self.explained).enumerate() {
            out.push_str(&format!("{},{l:e},{c}\n", i + 1));
        }
        out
    }
}

/// Component images in min-max normalized form plus the affine maps back.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentStack {
    /// Normalized images in [0, 1].
    pub images: Vec<Image>,
    pub offsets: Vec<f64>,
    pub scales: Vec<f64>,
}

impl ComponentStack {
    /// Normalizes raw component images; a constant image gets scale 1.
    pub fn from_raw(raw: &[Image]) -> Self {
        let mut images = Vec::with_capacity(raw.len());
        let mut offsets = Vec::with_capacity(raw.len());
        let mut scales = Vec::with_capacity(raw.len());
        for img in raw {
            let (lo, hi) = img.min_max();
            let scale = if hi > lo { hi - lo } else { 1.0 };
            images.push(Image {
                height: img.height,
                width: img.width,
                data: img.data.iter().map(|v| ((v - lo) / scale).clamp(0.0, 1.0)).collect(),
            });
            offsets.push(lo);
            scales.push(scale);
        }
        Self {
            images,
            offsets,
            scales,
        }
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn denormalized(&self, i: usize) -> Image {
        let (o, s) = (self.offsets[i], self.scales[i]);
        Image {
            height: self.images[i].height,
            width: self.images[i].width,
            data: self.images[i].data.iter().map(|v| o + s * v).collect(),
        }
    }
}

pub fn decompose(cube: &SpectralCube, retain: Retain) -> Result<(PcaModel, ComponentStack)> {
    cube.validate()?;
    let b = cube.bands;
    let n = cube.pixels();
    if b < 2 {
        return Err(Error::invalid("bands", "PCA needs at least 2 bands"));
    }
    if n < 2 {
        return Err(Error::invalid("pixels", "PCA needs at least 2 pixels"));
    }
    let first = cube.spectrum(0, 0);
    if cube.data.chunks_exact(b).all(|px| px == first) {
        return Err(Error::NoVariance);
    }

    // Centred B×N matrix, band-major.
    let mut means = vec![0.0; b];
    for px in cube.data.chunks_exact(b) {
        for (m, v) in means.iter_mut().zip(px) {
            *m += f64::from(*v);
        }
    }
    means.iter_mut().for_each(|m| *m /= n as f64);
    let mut centred = vec![0.0; b * n];
    for (p, px) in cube.data.chunks_exact(b).enumerate() {
        for k in 0..b {
            centred[k * n + p] = f64::from(px[k]) - means[k];
        }
    }

    let mut cov = vec![0.0; b * b];
    for i in 0..b {
        let ri = &centred[i * n..(i + 1) * n];
        for j in 0..=i {
            let rj = &centred[j * n..(j + 1) * n];
            let c = ri.iter().zip(rj).map(|(x, y)| x * y).sum::<f64>() / (n - 1) as f64;
            cov[i * b + j] = c;
            cov[j * b + i] = c;
        }
    }

    let eig = symmetric_eigen(&cov, b, EIGEN_TOL);
    let eigenvalues: Vec<f64> = eig.values.iter().map(|l| l.max(0.0)).collect();
    let total: f64 = eigenvalues.iter().sum();
    if !(total > 0.0) {
        return Err(Error::NoVariance);
    }
    let explained: Vec<f64> = eigenvalues
        .iter()
        .scan(0.0, |acc, l| {
            *acc += l;
            Some(*acc / total)
        })
        .collect();

    let retained = match retain {
        Retain::Count(r) => {
            if r == 0 || r > b {
                return Err(Error::invalid("pca.retain", format!("need 1 <= r <= {b}, got {r}")));
            }
            r
        }
        Retain::Fraction(v) => {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::invalid("pca.retain", format!("fraction must lie in (0, 1], got {v}")));
            }
            // Guard the last component against rounding in the cumulative sum.
            explained.iter().position(|c| *c >= v).map_or(b, |i| i + 1)
        }
    };

    let raw: Vec<Image> = (0..retained)
        .map(|j| {
            let mut data = vec![0.0; n];
            for k in 0..b {
                let e = eig.vectors[k * b + j];
                if e == 0.0 {
                    continue;
                }
                for (z, x) in data.iter_mut().zip(&centred[k * n..(k + 1) * n]) {
                    *z += e * x;
                }
            }
            Image {
                height: cube.height,
                width: cube.width,
                data,
            }
        })
        .collect();

    let model = PcaModel {
        height: cube.height,
        width: cube.width,
        bands: b,
        df: cube.df,
        f_start: cube.f_start,
        band_means: means,
        eigenvalues,
        eigenvectors: eig.vectors,
        retained,
        explained,
    };
    Ok((model, ComponentStack::from_raw(&raw)))
}

fn check_stack(model: &PcaModel, components: &ComponentStack) -> Result<()> {
    if components.len() != model.retained
        || components.offsets.len() != model.retained
        || components.scales.len() != model.retained
    {
        return Err(Error::Shape(format!(
            "model retains {} components, stack holds {}",
            model.retained,
            components.len()
        )));
    }
    if let Some(img) = components
        .images
        .iter()
        .find(|im| im.height != model.height || im.width != model.width)
    {
        return Err(Error::Shape(format!(
            "component image {}x{} does not match cube {}x{}",
            img.height, img.width, model.height, model.width
        )));
    }
    Ok(())
}

/// Unclamped 64-bit reconstruction in (pixel, band) order.
pub fn reconstruct_values(model: &PcaModel, components: &ComponentStack) -> Result<Vec<f64>> {
    check_stack(model, components)?;
    let b = model.bands;
    let n = model.height * model.width;
    let mut out: Vec<f64> = (0..n).flat_map(|_| model.band_means.iter().copied()).collect();
    for j in 0..model.retained {
        let z = components.denormalized(j);
        let e = model.eigenvector(j);
        for (px, zv) in out.chunks_exact_mut(b).zip(&z.data) {
            for (o, ek) in px.iter_mut().zip(&e) {
                *o += ek * zv;
            }
        }
    }
    Ok(out)
}

pub fn reconstruct(model: &PcaModel, components: &ComponentStack) -> Result<SpectralCube> {
    let values = reconstruct_values(model, components)?;
    SpectralCube::new(
        model.height,
        model.width,
        model.bands,
        model.df,
        model.f_start,
        values.iter().map(|v| v.max(0.0) as f32).collect(),
    )
}

pub fn explained_variance(model: &PcaModel, r: usize) -> Result<f64> {
    if r == 0 || r > model.bands {
        return Err(Error::invalid("r", format!("need 1 <= r <= {}, got {r}", model.bands)));
    }
    let total: f64 = model.eigenvalues.iter().sum();
    if !(total > 0.0) {
        return Err(Error::NoVariance);
    }
    Ok(model.eigenvalues[..r].iter().sum::<f64>() / total)
}
