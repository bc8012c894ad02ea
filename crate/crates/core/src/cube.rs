//! Cube data model, the `THZCUBE1` binary format and inspection exports.
//!
//! File layout (all little-endian):
//!
//! | offset | size | field                                   |
//! |--------|------|-----------------------------------------|
//! | 0      | 8    | magic `THZCUBE1`                        |
//! | 8      | 4    | u32 version (1)                         |
//! | 12     | 4    | u32 kind (0 = time, 1 = spectral)       |
//! | 16     | 24   | u64 height, width, third-axis length    |
//! | 40     | 8    | f64 dt (ps) or df (THz)                 |
//! | 48     | 8    | f64 0.0 or f_start (THz)                |
//! | 56     | …    | f32 payload, (row, col, axis) row-major |

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::Image;

pub const CUBE_MAGIC: [u8; 8] = *b"THZCUBE1";
pub const CUBE_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 56;

const KIND_TIME: u32 = 0;
const KIND_SPECTRAL: u32 = 1;

/// Raw scan: one time waveform per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeDomainCube {
    pub height: usize,
    pub width: usize,
    pub samples: usize,
    /// Sample interval in picoseconds.
    pub dt: f64,
    pub data: Vec<f32>,
}

impl TimeDomainCube {
    pub fn new(height: usize, width: usize, samples: usize, dt: f64, data: Vec<f32>) -> Result<Self> {
        let cube = Self {
            height,
            width,
            samples,
            dt,
            data,
        };
        cube.validate()?;
        Ok(cube)
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::invalid("dims", "height and width must be at least 1"));
        }
        if self.samples < 2 {
            return Err(Error::invalid("samples", "need at least 2 time samples"));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::invalid("dt", format!("must be positive, got {}", self.dt)));
        }
        check_payload(&self.data, self.height * self.width * self.samples)
    }

    pub fn waveform(&self, row: usize, col: usize) -> &[f32] {
        let start = (row * self.width + col) * self.samples;
        &self.data[start..start + self.samples]
    }
}

/// Amplitude spectrum per pixel; bin `b` is centred at `f_start + b·df` THz.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralCube {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    /// Frequency resolution in THz.
    pub df: f64,
    /// Centre of bin 0 in THz.
    pub f_start: f64,
    pub data: Vec<f32>,
}

impl SpectralCube {
    pub fn new(
        height: usize,
        width: usize,
        bands: usize,
        df: f64,
        f_start: f64,
        data: Vec<f32>,
    ) -> Result<Self> {
        let cube = Self {
            height,
            width,
            bands,
            df,
            f_start,
            data,
        };
        cube.validate()?;
        Ok(cube)
    }

    /// Builds a cube from one H×W plane per band.
    pub fn from_band_images(images: &[Image], df: f64, f_start: f64) -> Result<Self> {
        let first = images
            .first()
            .ok_or_else(|| Error::invalid("bands", "need at least one band"))?;
        let (h, w, bands) = (first.height, first.width, images.len());
        if images.iter().any(|im| !im.same_shape(first)) {
            return Err(Error::Shape("band images differ in size".into()));
        }
        let mut data = vec![0f32; h * w * bands];
        for (b, im) in images.iter().enumerate() {
            for (p, v) in im.data.iter().enumerate() {
                data[p * bands + b] = *v as f32;
            }
        }
        Self::new(h, w, bands, df, f_start, data)
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::invalid("dims", "height and width must be at least 1"));
        }
        if self.bands == 0 {
            return Err(Error::invalid("bands", "need at least one band"));
        }
        if !(self.df > 0.0 && self.df.is_finite()) {
            return Err(Error::invalid("df", format!("must be positive, got {}", self.df)));
        }
        if !self.f_start.is_finite() {
            return Err(Error::invalid("f_start", "must be finite"));
        }
        check_payload(&self.data, self.height * self.width * self.bands)?;
        if let Some(i) = self.data.iter().position(|v| *v < 0.0) {
            return Err(Error::invalid(
                "data",
                format!("negative amplitude {} at flat index {i}", self.data[i]),
            ));
        }
        Ok(())
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn freq(&self, band: usize) -> f64 {
        self.f_start + band as f64 * self.df
    }

    pub fn spectrum(&self, row: usize, col: usize) -> &[f32] {
        let start = (row * self.width + col) * self.bands;
        &self.data[start..start + self.bands]
    }

    pub fn band_image(&self, band: usize) -> Image {
        assert!(band < self.bands, "band {band} out of range");
        Image {
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .skip(band)
                .step_by(self.bands)
                .map(|v| f64::from(*v))
                .collect(),
        }
    }

    pub fn band_images(&self) -> Vec<Image> {
        (0..self.bands).map(|b| self.band_image(b)).collect()
    }

    pub fn same_shape(&self, other: &SpectralCube) -> bool {
        self.height == other.height && self.width == other.width && self.bands == other.bands
    }
}

/// Either kind of cube, as read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub enum Cube {
    Time(TimeDomainCube),
    Spectral(SpectralCube),
}

impl From<TimeDomainCube> for Cube {
    fn from(c: TimeDomainCube) -> Self {
        Cube::Time(c)
    }
}

impl From<SpectralCube> for Cube {
    fn from(c: SpectralCube) -> Self {
        Cube::Spectral(c)
    }
}

fn check_payload(data: &[f32], expected: usize) -> Result<()> {
    if data.len() != expected {
        return Err(Error::Shape(format!(
            "payload has {} values, dims require {expected}",
            data.len()
        )));
    }
    if let Some(index) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    Ok(())
}

/// Serializes a cube to the `THZCUBE1` format.
pub fn encode_cube(cube: &Cube) -> Result<Vec<u8>> {
    let (kind, dims, axis, data) = match cube {
        Cube::Time(c) => {
            c.validate()?;
            (KIND_TIME, [c.height, c.width, c.samples], [c.dt, 0.0], &c.data)
        }
        Cube::Spectral(c) => {
            c.validate()?;
            (
                KIND_SPECTRAL,
                [c.height, c.width, c.bands],
                [c.df, c.f_start],
                &c.data,
            )
        }
    };
    let mut buf = Vec::with_capacity(HEADER_LEN + data.len() * 4);
    buf.extend_from_slice(&CUBE_MAGIC);
    buf.extend_from_slice(&CUBE_VERSION.to_le_bytes());
    buf.extend_from_slice(&kind.to_le_bytes());
    for d in dims {
        buf.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for a in axis {
        buf.extend_from_slice(&a.to_le_bytes());
    }
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    Ok(buf)
}

pub fn write_cube(cube: &Cube, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    // Validation happens before the file is touched.
    let bytes = encode_cube(cube)?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn decode_cube(bytes: &[u8], path: &Path) -> Result<Cube> {
    let bad = |reason: &str| Error::BadHeader {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    if bytes.len() < 8 {
        return Err(bad("file shorter than the magic tag"));
    }
    let magic: [u8; 8] = bytes[..8].try_into().expect("8 bytes");
    if magic != CUBE_MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            found: magic,
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(bad("header truncated"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));

    let version = u32_at(8);
    if version != CUBE_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let kind = u32_at(12);
    let dims = [u64_at(16), u64_at(24), u64_at(32)];
    let axis = [f64_at(40), f64_at(48)];

    let count = dims
        .iter()
        .try_fold(1u64, |acc, &d| acc.checked_mul(d))
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| bad("dims overflow"))?;
    let found = (bytes.len() - HEADER_LEN) as u64;
    if found < count {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: count,
            found,
        });
    }
    if found > count {
        return Err(bad(&format!("{} trailing bytes after payload", found - count)));
    }
    let data: Vec<f32> = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    let [h, w, n] = dims.map(|d| d as usize);
    match kind {
        KIND_TIME => Ok(Cube::Time(TimeDomainCube::new(h, w, n, axis[0], data)?)),
        KIND_SPECTRAL => Ok(Cube::Spectral(SpectralCube::new(
            h, w, n, axis[0], axis[1], data,
        )?)),
        other => Err(bad(&format!("unknown cube kind {other}"))),
    }
}

pub fn read_cube(path: impl AsRef<Path>) -> Result<Cube> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode_cube(&bytes, path)
}

/// Per-band min-max normalization to 8-bit gray. Constant bands map to 128.
pub fn band_to_gray(cube: &SpectralCube, band: usize) -> Result<Vec<u8>> {
    if band >= cube.bands {
        return Err(Error::invalid(
            "band",
            format!("{band} out of range for {} bands", cube.bands),
        ));
    }
    let img = cube.band_image(band);
    let (lo, hi) = img.min_max();
    if hi <= lo {
        return Ok(vec![128; img.len()]);
    }
    let span = hi - lo;
    Ok(img
        .data
        .iter()
        .map(|v| ((v - lo) / span * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8)
        .collect())
}

pub fn write_gray_png(
    pixels: &[u8],
    height: usize,
    width: usize,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(png::BitDepth::Eight);
    let to_io = |e: png::EncodingError| match e {
        png::EncodingError::IoError(io) => Error::io(path, io),
        other => Error::io(path, std::io::Error::other(other)),
    };
    let mut writer = encoder.write_header().map_err(to_io)?;
    writer.write_image_data(pixels).map_err(to_io)?;
    writer.finish().map_err(to_io)
}

pub fn export_band_png(cube: &SpectralCube, band: usize, path: impl AsRef<Path>) -> Result<()> {
    let gray = band_to_gray(cube, band)?;
    write_gray_png(&gray, cube.height, cube.width, path)
}

/// CSV with header `band,freq_thz,min,max,mean`.
pub fn band_stats_csv(cube: &SpectralCube) -> String {
    let mut out = String::from("band,freq_thz,min,max,mean\n");
    for b in 0..cube.bands {
        let img = cube.band_image(b);
        let (lo, hi) = img.min_max();
        out.push_str(&format!("{b},{},{lo},{hi},{}\n", cube.freq(b), img.mean()));
    }
    out
}
