//! Plain-text `key = value` configuration with dotted section names.
//!
//! ```text
//! # comment
//! seed = 7
//! optics.aperture = 25
//! [train]
//! epochs = 30        # same as train.epochs
//! ```

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use thz_core::forward::{NoiseParams, PhantomSpec};
use thz_core::nnet::{ArchConfig, LossConfig, TrainConfig};
use thz_core::pca::Retain;
use thz_core::psf::{KernelOptions, OpticsConfig};
use thz_core::r2r::{Background, R2RConfig};
use thz_core::spectral::{BandSelection, Window};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("{key}: {reason}")]
    Value { key: String, reason: String },
    #[error("cannot read config {path}: {reason}")]
    Read { path: String, reason: String },
}

/// Baseline noise σ₀ and the band over which the total σ doubles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSettings {
    pub sigma0: f64,
    pub doubling_from: f64,
    pub doubling_to: f64,
    pub p: f64,
    pub poisson_gain: f64,
}

impl Default for NoiseSettings {
    fn default() -> Self {
        Self {
            sigma0: 25.0 / 255.0,
            doubling_from: 0.1,
            doubling_to: 2.0,
            p: 2.0,
            poisson_gain: 0.0,
        }
    }
}

impl NoiseSettings {
    pub fn params(&self) -> NoiseParams {
        NoiseParams {
            poisson_gain: self.poisson_gain,
            ..NoiseParams::doubling(self.sigma0, self.doubling_from, self.doubling_to, self.p)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub seed: u64,
    pub phantom: PhantomSpec,
    pub optics: OpticsConfig,
    pub kernel: KernelOptions,
    pub noise: NoiseSettings,
    pub window: Window,
    /// `None` keeps every band.
    pub bands: Option<BandSelection>,
    pub retain: Retain,
    pub r2r: R2RConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub arch: ArchConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            phantom: PhantomSpec::default(),
            optics: OpticsConfig::default(),
            kernel: KernelOptions::default(),
            noise: NoiseSettings::default(),
            window: Window::None,
            bands: None,
            retain: Retain::default(),
            r2r: R2RConfig {
                variance_gain: 1.0 / 255.0,
                ..R2RConfig::default()
            },
            loss: LossConfig::default(),
            train: TrainConfig::default(),
            arch: ArchConfig::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::Value {
        key: key.into(),
        reason: format!("cannot parse `{value}`: {e}"),
    })
}

fn tagged<'a>(key: &str, value: &'a str, tag: &str) -> Result<Option<&'a str>, ConfigError> {
    match value.split_once(':') {
        Some((t, rest)) if t.trim() == tag => Ok(Some(rest.trim())),
        Some((t, _)) => Err(ConfigError::Value {
            key: key.into(),
            reason: format!("unknown mode `{t}`"),
        }),
        None => Ok(None),
    }
}

impl PipelineConfig {
    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::from_text(&text)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or(ConfigError::Syntax {
                    line: i + 1,
                    reason: "unterminated section header".into(),
                })?;
                section = name.trim().to_string();
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(ConfigError::Syntax {
                line: i + 1,
                reason: format!("expected `key = value`, got `{line}`"),
            })?;
            let key = key.trim();
            let full = if section.is_empty() {
                key.to_string()
            } else {
                format!("{section}.{key}")
            };
            self.set(&full, value.trim())?;
        }
        Ok(())
    }

    /// Applies one `key=value` override.
    pub fn apply_override(&mut self, kv: &str) -> Result<(), ConfigError> {
        let (k, v) = kv.split_once('=').ok_or(ConfigError::Syntax {
            line: 0,
            reason: format!("override `{kv}` is not key=value"),
        })?;
        self.set(k.trim(), v.trim())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value;
        match key {
            "seed" => self.seed = parse(key, v)?,
            "phantom.height" => self.phantom.height = parse(key, v)?,
            "phantom.width" => self.phantom.width = parse(key, v)?,
            "phantom.bands" => self.phantom.bands = parse(key, v)?,
            "phantom.df" => self.phantom.df = parse(key, v)?,
            "phantom.f_start" => self.phantom.f_start = parse(key, v)?,
            "phantom.texture" => self.phantom.texture = parse(key, v)?,
            "optics.focal_length" => self.optics.focal_length = parse(key, v)?,
            "optics.aperture" => self.optics.aperture = parse(key, v)?,
            "optics.pixel_pitch" => self.optics.pixel_pitch = parse(key, v)?,
            "psf.truncation" => self.kernel.truncation = parse(key, v)?,
            "psf.max_size" => self.kernel.max_size = parse(key, v)?,
            "noise.sigma0" => self.noise.sigma0 = parse(key, v)?,
            "noise.doubling_from" => self.noise.doubling_from = parse(key, v)?,
            "noise.doubling_to" => self.noise.doubling_to = parse(key, v)?,
            "noise.p" => self.noise.p = parse(key, v)?,
            "noise.poisson_gain" => self.noise.poisson_gain = parse(key, v)?,
            "spectral.window" => {
                self.window = v.parse().map_err(|e: thz_core::Error| ConfigError::Value {
                    key: key.into(),
                    reason: e.to_string(),
                })?
            }
            "bands.range" => {
                self.bands = if v == "all" {
                    None
                } else {
                    let (a, b) = v.split_once(',').ok_or(ConfigError::Value {
                        key: key.into(),
                        reason: "expected `all` or `f_initial,f_end`".into(),
                    })?;
                    let sel = BandSelection::new(parse(key, a.trim())?, parse(key, b.trim())?).map_err(|e| {
                        ConfigError::Value {
                            key: key.into(),
                            reason: e.to_string(),
                        }
                    })?;
                    Some(sel)
                }
            }
            "pca.retain" => {
                self.retain = match tagged(key, v, "fraction")? {
                    Some(f) => Retain::Fraction(parse(key, f)?),
                    None => Retain::Count(parse(key, v)?),
                }
            }
            "r2r.alpha" => self.r2r.alpha = parse(key, v)?,
            "r2r.background" => {
                self.r2r.background = if let Some(q) = v.strip_prefix("percentile:") {
                    Background::Percentile(parse(key, q.trim())?)
                } else if let Some(b) = v.strip_prefix("fixed:") {
                    Background::Fixed(parse(key, b.trim())?)
                } else {
                    return Err(ConfigError::Value {
                        key: key.into(),
                        reason: "expected `percentile:Q` or `fixed:B`".into(),
                    });
                }
            }
            "r2r.variance_floor" => self.r2r.variance_floor = parse(key, v)?,
            "r2r.variance_gain" => self.r2r.variance_gain = parse(key, v)?,
            "loss.xi" => self.loss.xi = parse(key, v)?,
            "loss.gamma" => self.loss.gamma = parse(key, v)?,
            "loss.downsample" => self.loss.downsample = parse(key, v)?,
            "loss.detach_denoiser" => self.loss.detach_denoiser = parse(key, v)?,
            "train.batch_size" => self.train.batch_size = parse(key, v)?,
            "train.epochs" => self.train.epochs = parse(key, v)?,
            "train.steps_per_epoch" => {
                self.train.steps_per_epoch = if v == "auto" { None } else { Some(parse(key, v)?) }
            }
            "train.learning_rate" => self.train.learning_rate = parse(key, v)?,
            "train.beta1" => self.train.beta1 = parse(key, v)?,
            "train.beta2" => self.train.beta2 = parse(key, v)?,
            "train.eps" => self.train.eps = parse(key, v)?,
            "train.patch_size" => self.train.patch_size = parse(key, v)?,
            "arch.widths" => {
                let parts: Vec<&str> = v.split(',').map(str::trim).collect();
                if parts.len() != 3 {
                    return Err(ConfigError::Value {
                        key: key.into(),
                        reason: "expected three comma-separated widths".into(),
                    });
                }
                for (w, p) in self.arch.widths.iter_mut().zip(parts) {
                    *w = parse(key, p)?;
                }
            }
            _ => return Err(ConfigError::UnknownKey(key.into())),
        }
        Ok(())
    }

    /// Checks every sub-configuration; errors name the offending field.
    pub fn validate(&self) -> thz_core::Result<()> {
        use thz_core::Error;
        self.optics.validate()?;
        self.noise.params().validate()?;
        if !(self.noise.sigma0 >= 0.0) {
            return Err(Error::Invalid {
                field: "noise.sigma0",
                reason: "must be >= 0".into(),
            });
        }
        if !(self.noise.doubling_to > self.noise.doubling_from && self.noise.doubling_from >= 0.0) {
            return Err(Error::Invalid {
                field: "noise.doubling_to",
                reason: "must exceed noise.doubling_from".into(),
            });
        }
        if !(self.kernel.truncation > 0.0) {
            return Err(Error::Invalid {
                field: "psf.truncation",
                reason: "must be positive".into(),
            });
        }
        match self.retain {
            Retain::Count(0) => {
                return Err(Error::Invalid {
                    field: "pca.retain",
                    reason: "must keep at least one component".into(),
                })
            }
            Retain::Fraction(f) if !(f > 0.0 && f <= 1.0) => {
                return Err(Error::Invalid {
                    field: "pca.retain",
                    reason: "fraction must lie in (0, 1]".into(),
                })
            }
            _ => {}
        }
        self.r2r.validate()?;
        self.loss.validate()?;
        self.train.validate()?;
        self.arch.validate()?;
        Ok(())
    }

    /// Serializes every key; [`PipelineConfig::from_text`] reads it back unchanged.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("seed", self.seed.to_string());
        kv("phantom.height", self.phantom.height.to_string());
        kv("phantom.width", self.phantom.width.to_string());
        kv("phantom.bands", self.phantom.bands.to_string());
        kv("phantom.df", self.phantom.df.to_string());
        kv("phantom.f_start", self.phantom.f_start.to_string());
        kv("phantom.texture", self.phantom.texture.to_string());
        kv("optics.focal_length", self.optics.focal_length.to_string());
        kv("optics.aperture", self.optics.aperture.to_string());
        kv("optics.pixel_pitch", self.optics.pixel_pitch.to_string());
        kv("psf.truncation", self.kernel.truncation.to_string());
        kv("psf.max_size", self.kernel.max_size.to_string());
        kv("noise.sigma0", self.noise.sigma0.to_string());
        kv("noise.doubling_from", self.noise.doubling_from.to_string());
        kv("noise.doubling_to", self.noise.doubling_to.to_string());
        kv("noise.p", self.noise.p.to_string());
        kv("noise.poisson_gain", self.noise.poisson_gain.to_string());
        kv(
            "spectral.window",
            match self.window {
                Window::None => "none".into(),
                Window::Hann => "hann".into(),
            },
        );
        kv(
            "bands.range",
            match self.bands {
                None => "all".into(),
                Some(b) => format!("{},{}", b.f_initial, b.f_end),
            },
        );
        kv(
            "pca.retain",
            match self.retain {
                Retain::Count(r) => r.to_string(),
                Retain::Fraction(f) => format!("fraction:{f}"),
            },
        );
        kv("r2r.alpha", self.r2r.alpha.to_string());
        kv(
            "r2r.background",
            match self.r2r.background {
                Background::Percentile(q) => format!("percentile:{q}"),
                Background::Fixed(b) => format!("fixed:{b}"),
            },
        );
        kv("r2r.variance_floor", self.r2r.variance_floor.to_string());
        kv("r2r.variance_gain", self.r2r.variance_gain.to_string());
        kv("loss.xi", self.loss.xi.to_string());
        kv("loss.gamma", self.loss.gamma.to_string());
        kv("loss.downsample", self.loss.downsample.to_string());
        kv("loss.detach_denoiser", self.loss.detach_denoiser.to_string());
        kv("train.batch_size", self.train.batch_size.to_string());
        kv("train.epochs", self.train.epochs.to_string());
        kv(
            "train.steps_per_epoch",
            self.train.steps_per_epoch.map_or("auto".into(), |s| s.to_string()),
        );
        kv("train.learning_rate", self.train.learning_rate.to_string());
        kv("train.beta1", self.train.beta1.to_string());
        kv("train.beta2", self.train.beta2.to_string());
        kv("train.eps", self.train.eps.to_string());
        kv("train.patch_size", self.train.patch_size.to_string());
        let [a, b, c] = self.arch.widths;
        kv("arch.widths", format!("{a},{b},{c}"));
        s
    }

    /// R2R settings with the run seed.
    pub fn r2r_seeded(&self) -> R2RConfig {
        R2RConfig {
            seed: self.seed,
            ..self.r2r
        }
    }

    /// Training settings with the run seed.
    pub fn train_seeded(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train
        }
    }
}
