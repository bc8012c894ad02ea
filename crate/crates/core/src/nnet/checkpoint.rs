//! Parameter checkpoints.
//!
//! Layout (little-endian):
//!
//! | bytes | field |
//! |-------|-------|
//! | 8 | magic `THZNET01` |
//! | 3 × u32 | channel widths |
//! | u32 | layer count |
//! | u64 | parameters per network |
//! | 2n × f64 | denoiser parameters, then deblurrer parameters |
//!
//! Within a network, layers appear in forward order, each as weights
//! `[co][ci][kh][kw]` followed by biases.

use std::path::Path;

use super::unet::{ArchConfig, NetworkParams, LAYERS};
use crate::error::{Error, Result};

pub const NET_MAGIC: [u8; 8] = *b"THZNET01";
const HEADER: usize = 32;

pub fn encode_checkpoint(params: &NetworkParams) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER + 8 * params.len());
    out.extend_from_slice(&NET_MAGIC);
    for w in params.arch.widths {
        out.extend_from_slice(&(w as u32).to_le_bytes());
    }
    out.extend_from_slice(&(LAYERS as u32).to_le_bytes());
    out.extend_from_slice(&(params.denoiser.len() as u64).to_le_bytes());
    for v in params.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<NetworkParams> {
    if bytes.len() < HEADER || bytes[..8] != NET_MAGIC {
        return Err(Error::Checkpoint("missing THZNET01 header".into()));
    }
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes")) as usize;
    let arch = ArchConfig {
        widths: [u32_at(8), u32_at(12), u32_at(16)],
    };
    arch.validate().map_err(|e| Error::Checkpoint(e.to_string()))?;
    if u32_at(20) != LAYERS {
        return Err(Error::Checkpoint(format!("{} layers, expected {LAYERS}", u32_at(20))));
    }
    let n = u64::from_le_bytes(bytes[24..32].try_into().expect("8 bytes")) as usize;
    if n != arch.param_count() {
        return Err(Error::Checkpoint(format!(
            "parameter count {n} does not match widths {:?} ({})",
            arch.widths,
            arch.param_count()
        )));
    }
    let body = &bytes[HEADER..];
    if body.len() != 16 * n {
        return Err(Error::Checkpoint(format!("payload of {} bytes, expected {}", body.len(), 16 * n)));
    }
    let values: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let (d, b) = values.split_at(n);
    Ok(NetworkParams {
        arch,
        denoiser: d.to_vec(),
        deblurrer: b.to_vec(),
    })
}

pub fn write_checkpoint(params: &NetworkParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_checkpoint(params)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<NetworkParams> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

/// Fails unless the checkpoint was built for `expected`.
pub fn check_arch(params: &NetworkParams, expected: &ArchConfig) -> Result<()> {
    if params.arch != *expected {
        return Err(Error::Checkpoint(format!(
            "checkpoint widths {:?}, configuration expects {:?}",
            params.arch.widths, expected.widths
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::super::unet::init_params;
    use super::*;

    #[test]
    fn round_trip_and_layout() {
        let arch = ArchConfig { widths: [2, 3, 4] };
        let p = init_params(arch, 9).unwrap();
        let bytes = encode_checkpoint(&p);
        assert_eq!(bytes.len(), HEADER + 16 * arch.param_count());
        assert_eq!(&bytes[..8], b"THZNET01");
        assert_eq!(bytes[HEADER..HEADER + 8], p.denoiser[0].to_le_bytes());
        assert_eq!(decode_checkpoint(&bytes).unwrap(), p);
    }

    #[test]
    fn rejects_damage() {
        let p = init_params(ArchConfig { widths: [2, 3, 4] }, 9).unwrap();
        let bytes = encode_checkpoint(&p);
        assert!(decode_checkpoint(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_checkpoint(&bad).is_err());
        let mut wider = bytes;
        wider[8] = 5;
        assert!(matches!(decode_checkpoint(&wider), Err(Error::Checkpoint(_))));
        assert!(check_arch(&p, &ArchConfig::default()).is_err());
        assert!(check_arch(&p, &p.arch).is_ok());
    }
}
