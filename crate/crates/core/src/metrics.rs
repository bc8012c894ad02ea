//! Image quality (PSNR) and signal fidelity (relative spectral error).

use std::path::Path;

use crate::cube::{write_gray_png, SpectralCube};
use crate::error::{Error, Result};
use crate::grid::Image;

pub const DEFAULT_PEAK: f64 = 255.0;

/// Cube amplitudes are mapped onto the 0–255 scale by this factor before PSNR.
pub const CUBE_TO_8BIT: f64 = 255.0;

fn check_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("{a} values vs {b} values")));
    }
    Ok(())
}

pub fn mse(test: &[f64], reference: &[f64]) -> Result<f64> {
    check_len(test.len(), reference.len())?;
    Ok(test
        .iter()
        .zip(reference)
        .map(|(t, r)| (t - r) * (t - r))
        .sum::<f64>()
        / test.len() as f64)
}

/// 10·log10(peak²/MSE) in dB; identical inputs give `f64::INFINITY`.
pub fn psnr_values(test: &[f64], reference: &[f64], peak: f64) -> Result<f64> {
    let m = mse(test, reference)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / m).log10())
}

pub fn psnr(test: &Image, reference: &Image, peak: f64) -> Result<f64> {
    if !test.same_shape(reference) {
        return Err(Error::Shape(format!(
            "{}x{} vs {}x{}",
            test.height, test.width, reference.height, reference.width
        )));
    }
    psnr_values(&test.data, &reference.data, peak)
}

/// ‖proc − orig‖₂ / ‖orig‖₂.
pub fn rse_values(processed: &[f64], original: &[f64]) -> Result<f64> {
    check_len(processed.len(), original.len())?;
    let num: f64 = processed
        .iter()
        .zip(original)
        .map(|(p, o)| (p - o) * (p - o))
        .sum();
    let den: f64 = original.iter().map(|o| o * o).sum();
    if den == 0.0 {
        return Err(Error::invalid("original", "all-zero reference makes RSE undefined"));
    }
    Ok(num.sqrt() / den.sqrt())
}

pub fn rse(processed: &Image, original: &Image) -> Result<f64> {
    if !processed.same_shape(original) {
        return Err(Error::Shape("RSE operands differ in size".into()));
    }
    rse_values(&processed.data, &original.data)
}

pub fn rse_cube(processed: &SpectralCube, original: &SpectralCube) -> Result<f64> {
    check_cubes(processed, original)?;
    let p: Vec<f64> = processed.data.iter().map(|v| f64::from(*v)).collect();
    let o: Vec<f64> = original.data.iter().map(|v| f64::from(*v)).collect();
    rse_values(&p, &o)
}

fn to_8bit(img: &Image) -> Vec<f64> {
    img.data.iter().map(|v| v * CUBE_TO_8BIT).collect()
}

/// PSNR of one band after mapping both cubes onto the 0–255 scale.
pub fn band_psnr(test: &SpectralCube, reference: &SpectralCube, band: usize) -> Result<f64> {
    check_cubes(test, reference)?;
    psnr_values(
        &to_8bit(&test.band_image(band)),
        &to_8bit(&reference.band_image(band)),
        DEFAULT_PEAK,
    )
}

pub fn band_psnrs(test: &SpectralCube, reference: &SpectralCube) -> Result<Vec<f64>> {
    (0..test.bands).map(|b| band_psnr(test, reference, b)).collect()
}

fn check_cubes(a: &SpectralCube, b: &SpectralCube) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::Shape(format!(
            "cube {}x{}x{} vs {}x{}x{}",
            a.height, a.width, a.bands, b.height, b.width, b.bands
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub freqs: Vec<f64>,
    /// PSNR(restored, degraded): the no-reference usage.
    pub psnr_vs_degraded: Vec<f64>,
    /// PSNR(restored, truth), synthetic mode only.
    pub psnr_vs_truth: Option<Vec<f64>>,
    /// PSNR(degraded, truth), synthetic mode only.
    pub psnr_degraded_vs_truth: Option<Vec<f64>>,
    /// RSE(restored vs degraded) per band.
    pub rse: Vec<f64>,
    pub rse_overall: f64,
}

pub fn report(
    restored: &SpectralCube,
    degraded: &SpectralCube,
    truth: Option<&SpectralCube>,
) -> Result<MetricReport> {
    check_cubes(restored, degraded)?;
    if let Some(t) = truth {
        check_cubes(restored, t)?;
    }
    let rse = (0..restored.bands)
        .map(|b| rse(&restored.band_image(b), &degraded.band_image(b)))
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricReport {
        freqs: (0..restored.bands).map(|b| restored.freq(b)).collect(),
        psnr_vs_degraded: band_psnrs(restored, degraded)?,
        psnr_vs_truth: truth.map(|t| band_psnrs(restored, t)).transpose()?,
        psnr_degraded_vs_truth: truth.map(|t| band_psnrs(degraded, t)).transpose()?,
        rse,
        rse_overall: rse_cube(restored, degraded)?,
    })
}

fn fmt_db(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v}")
    }
}

impl MetricReport {
    /// Mean over bands of PSNR(restored, truth) − PSNR(degraded, truth).
    pub fn mean_truth_gain(&self) -> Option<f64> {
        let (r, d) = (self.psnr_vs_truth.as_ref()?, self.psnr_degraded_vs_truth.as_ref()?);
        let gains: Vec<f64> = r.iter().zip(d).map(|(a, b)| a - b).collect();
        Some(gains.iter().sum::<f64>() / gains.len() as f64)
    }

    pub fn mean_rse(&self) -> f64 {
        self.rse.iter().sum::<f64>() / self.rse.len() as f64
    }

    /// CSV `band,freq_thz,psnr_vs_degraded,psnr_vs_truth,psnr_degraded_vs_truth,rse`.
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("band,freq_thz,psnr_vs_degraded,psnr_vs_truth,psnr_degraded_vs_truth,rse\n");
        for b in 0..self.freqs.len() {
            let truth = |col: &Option<Vec<f64>>| col.as_ref().map(|v| fmt_db(v[b])).unwrap_or_default();
            out.push_str(&format!(
                "{b},{},{},{},{},{}\n",
                self.freqs[b],
                fmt_db(self.psnr_vs_degraded[b]),
                truth(&self.psnr_vs_truth),
                truth(&self.psnr_degraded_vs_truth),
                self.rse[b]
            ));
        }
        out
    }

    /// Grayscale line plot of the PSNR curves against frequency.
    pub fn write_plot(&self, path: impl AsRef<Path>) -> Result<()> {
        const W: usize = 640;
        const H: usize = 360;
        const MARGIN: usize = 30;
        let mut px = vec![255u8; W * H];
        let mut curves: Vec<(&[f64], u8)> = vec![(&self.psnr_vs_degraded, 0)];
        if let Some(v) = &self.psnr_vs_truth {
            curves.push((v, 80));
        }
        if let Some(v) = &self.psnr_degraded_vs_truth {
            curves.push((v, 160));
        }
        let finite = curves.iter().flat_map(|(c, _)| c.iter()).filter(|v| v.is_finite());
        let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
        let (lo, hi) = if lo.is_finite() && hi > lo { (lo, hi) } else { (0.0, 1.0) };
        let n = self.freqs.len();
        let x_of = |i: usize| MARGIN + if n > 1 { i * (W - 2 * MARGIN) / (n - 1) } else { 0 };
        let y_of = |v: f64| {
            let t = ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
            H - MARGIN - (t * (H - 2 * MARGIN) as f64).round() as usize
        };
        for x in MARGIN..W - MARGIN {
            px[(H - MARGIN) * W + x] = 0;
        }
        for y in MARGIN..=H - MARGIN {
            px[y * W + MARGIN] = 0;
        }
        for (curve, shade) in curves {
            for i in 1..n {
                let (a, b) = (curve[i - 1], curve[i]);
                if !a.is_finite() || !b.is_finite() {
                    continue;
                }
                let (x0, y0, x1, y1) = (x_of(i - 1) as f64, y_of(a) as f64, x_of(i) as f64, y_of(b) as f64);
                let steps = (x1 - x0).abs().max((y1 - y0).abs()).max(1.0) as usize;
                for s in 0..=steps {
                    let t = s as f64 / steps as f64;
                    let x = (x0 + t * (x1 - x0)).round() as usize;
                    let y = (y0 + t * (y1 - y0)).round() as usize;
                    px[y.min(H - 1) * W + x.min(W - 1)] = shade;
                }
            }
        }
        write_gray_png(&px, H, W, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_is_infinite() {
        let a = Image::filled(3, 3, 7.0);
        assert_eq!(psnr(&a, &a, 255.0).unwrap(), f64::INFINITY);
    }

    #[test]
    fn uniform_unit_difference() {
        let a = Image::filled(8, 8, 100.0);
        let b = Image::filled(8, 8, 101.0);
        let v = psnr(&a, &b, DEFAULT_PEAK).unwrap();
        assert!((v - 48.130_803_608).abs() < 1e-6, "{v}");
        // Independent of image size for a fixed per-pixel error.
        let big = psnr(&Image::filled(64, 32, 0.0), &Image::filled(64, 32, 1.0), 255.0).unwrap();
        assert_eq!(v, big);
    }

    #[test]
    fn checkerboard_of_two() {
        let a = Image::filled(6, 6, 50.0);
        let b = Image::from_fn(6, 6, |r, c| if (r + c) % 2 == 0 { 52.0 } else { 48.0 });
        let v = psnr(&b, &a, 255.0).unwrap();
        assert!((v - 10.0 * (255.0f64 * 255.0 / 4.0).log10()).abs() < 1e-12);
        assert!((v - 42.11).abs() < 0.01);
    }

    #[test]
    fn shape_mismatch() {
        assert!(psnr(&Image::zeros(2, 3), &Image::zeros(3, 2), 255.0).is_err());
        assert!(rse(&Image::zeros(2, 3), &Image::zeros(3, 2)).is_err());
    }

    #[test]
    fn rse_identities() {
        let o = Image::from_fn(4, 4, |r, c| (r * 4 + c) as f64 - 3.0);
        assert_eq!(rse(&o, &o).unwrap(), 0.0);
        assert_eq!(rse(&Image::zeros(4, 4), &o).unwrap(), 1.0);
        let doubled = Image::from_fn(4, 4, |r, c| 2.0 * o.get(r, c));
        assert_eq!(rse(&doubled, &o).unwrap(), 1.0);
        assert!(rse(&o, &Image::zeros(4, 4)).is_err());
    }

    #[test]
    fn rse_homogeneous_in_perturbation() {
        let o: Vec<f64> = (0..50).map(|i| (i as f64 * 0.7).sin() + 2.0).collect();
        let d: Vec<f64> = (0..50).map(|i| (i as f64 * 1.3).cos()).collect();
        let base = rse_values(&o.iter().zip(&d).map(|(a, b)| a + b).collect::<Vec<_>>(), &o).unwrap();
        // Power-of-two k keeps the perturbed values exact.
        for k in [0.5, 2.0, -4.0] {
            let p: Vec<f64> = o.iter().zip(&d).map(|(a, b)| a + k * b).collect();
            assert_eq!(rse_values(&p, &o).unwrap(), f64::abs(k) * base);
        }
    }

    fn cube(vals: Vec<f32>) -> SpectralCube {
        SpectralCube::new(2, 2, vals.len() / 4, 0.5, 0.5, vals).unwrap()
    }

    #[test]
    fn report_on_identical_cubes() {
        let c = cube(vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8]);
        let r = report(&c, &c, None).unwrap();
        assert!(r.psnr_vs_degraded.iter().all(|v| v.is_infinite()));
        assert!(r.rse.iter().all(|v| *v == 0.0));
        assert_eq!(r.rse_overall, 0.0);
        let csv = r.to_csv();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next(),
            Some("band,freq_thz,psnr_vs_degraded,psnr_vs_truth,psnr_degraded_vs_truth,rse")
        );
        assert_eq!(lines.next(), Some("0,0.5,inf,,,0"));
    }

    #[test]
    fn report_symmetric_psnr() {
        let a = cube(vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8]);
        let b = cube(vec![0.2, 0.2, 0.35, 0.4, 0.5, 0.1, 0.7, 0.9]);
        let ab = report(&a, &b, Some(&a)).unwrap();
        let ba = report(&b, &a, Some(&a)).unwrap();
        assert_eq!(ab.psnr_vs_degraded, ba.psnr_vs_degraded);
        assert!(ab.mean_truth_gain().unwrap() > 0.0);
    }

    #[test]
    fn psnr_falls_with_noise() {
        use crate::rng::{stream_rng, Stream};
        use rand::Rng;
        use rand_distr::StandardNormal;
        let reference = Image::from_fn(32, 32, |r, c| ((r * 7 + c) % 200) as f64);
        let mut last = f64::INFINITY;
        for (i, sigma) in [1.0, 4.0, 16.0].into_iter().enumerate() {
            let mut rng = stream_rng(5, Stream::Degrade, i as u64);
            let noisy = Image::from_fn(32, 32, |r, c| {
                reference.get(r, c) + sigma * rng.sample::<f64, _>(StandardNormal)
            });
            let v = psnr(&noisy, &reference, 255.0).unwrap();
            assert!(v < last);
            last = v;
        }
    }

    #[test]
    fn plot_writes() {
        let dir = tempfile::tempdir().unwrap();
        let a = cube(vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8]);
        let b = cube(vec![0.2, 0.2, 0.35, 0.4, 0.5, 0.1, 0.7, 0.9]);
        let path = dir.path().join("p.png");
        report(&a, &b, Some(&a)).unwrap().write_plot(&path).unwrap();
        assert!(path.metadata().unwrap().len() > 0);
    }
}
