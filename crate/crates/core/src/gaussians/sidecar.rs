//! Binary variation file: header then five little-endian f32 arrays.
//!
//! | bytes | content |
//! |---|---|
//! | 4 | magic `VFDV` |
//! | 4 | version (u32) |
//! | 8 | N (u64) |
//! | 8 | scene id (u64) |
//! | 4·N·14 | delta_mu, delta_scale, delta_opacity, delta_color, delta_rot |

use std::path::Path;

use crate::error::{Error, Result};
use crate::gaussians::variation::Variation;

pub const MAGIC: [u8; 4] = *b"VFDV";
pub const VERSION: u32 = 1;
const HEADER: usize = 24;

pub fn variation_to_bytes(v: &Variation) -> Vec<u8> {
    let n = v.len();
    let mut out = Vec::with_capacity(HEADER + n * 14 * 4);
    out.extend(MAGIC);
    out.extend(VERSION.to_le_bytes());
    out.extend((n as u64).to_le_bytes());
    out.extend(v.scene_id.to_le_bytes());
    let mut put = |x: f32| out.extend(x.to_le_bytes());
    v.delta_mu.iter().flatten().for_each(|&x| put(x));
    v.delta_scale.iter().flatten().for_each(|&x| put(x));
    v.delta_opacity.iter().for_each(|&x| put(x));
    v.delta_color.iter().flatten().for_each(|&x| put(x));
    v.delta_rot.iter().flatten().for_each(|&x| put(x));
    out
}

pub fn variation_from_bytes(bytes: &[u8]) -> Result<Variation> {
    if bytes.len() < HEADER || bytes[..4] != MAGIC {
        return Err(Error::Format("not a variation file".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Format(format!("unsupported variation version {version}")));
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let scene_id = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
    let expected = (n as u128) * 14 * 4 + HEADER as u128;
    if bytes.len() as u128 != expected {
        return Err(Error::Format(format!(
            "variation of {n} rows needs {expected} bytes, got {}",
            bytes.len()
        )));
    }
    let n = n as usize;
    let mut floats = bytes[HEADER..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()));
    let mut take = |k: usize| -> Vec<f32> { floats.by_ref().take(n * k).collect() };
    let mu = take(3);
    let scale = take(3);
    let opacity = take(1);
    let color = take(3);
    let rot = take(4);
    let v = Variation {
        scene_id,
        delta_mu: mu.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
        delta_scale: scale.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
        delta_opacity: opacity,
        delta_color: color.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
        delta_rot: rot.chunks_exact(4).map(|c| [c[0], c[1], c[2], c[3]]).collect(),
    };
    if !v.is_finite() {
        return Err(Error::Format("variation contains non-finite values".into()));
    }
    Ok(v)
}

pub fn save_variation(v: &Variation, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, variation_to_bytes(v)).map_err(|e| Error::io(path, e))
}

pub fn load_variation(path: impl AsRef<Path>) -> Result<Variation> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    variation_from_bytes(&bytes)
}
