//! Stepwise restoration pipeline behind the `thz` command.

pub mod commands;
pub mod config;
pub mod pipeline;

pub use commands::{CliError, CliResult};
pub use config::PipelineConfig;

use std::path::Path;

/// Default configuration, then the optional file, then `seed`, then
/// `key=value` overrides in order.
pub fn load_config(path: Option<&Path>, seed: Option<u64>, overrides: &[String]) -> CliResult<PipelineConfig> {
    let mut cfg = match path {
        Some(p) => PipelineConfig::from_file(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    for kv in overrides {
        cfg.apply_override(kv)?;
    }
    Ok(cfg)
}
