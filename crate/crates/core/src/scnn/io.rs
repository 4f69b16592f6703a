//! `.net` files: magic, layer count, per-layer `(in, out, kh, kw, activation, mask)` as
//! little-endian u32, then every weight as a little-endian f64 in layer order.

use std::fs;
use std::path::Path;

use super::net::{Activation, LayerSpec, NetParams, TapMask};
use crate::error::{ReconError, Result};

const MAGIC: &[u8; 8] = b"KSRNET01";

fn activation_code(a: Activation) -> u32 {
    match a {
        Activation::Relu => 0,
        Activation::Linear => 1,
    }
}

fn mask_code(m: TapMask) -> u32 {
    match m {
        TapMask::None => 0,
        TapMask::Center => 1,
        TapMask::OddOffsets => 2,
        TapMask::EvenOffsets => 3,
    }
}

pub fn encode(params: &NetParams) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    out.extend((params.layers().len() as u32).to_le_bytes());
    for l in params.layers() {
        for v in [
            l.in_channels as u32,
            l.out_channels as u32,
            l.kernel.0 as u32,
            l.kernel.1 as u32,
            activation_code(l.activation),
            mask_code(l.mask),
        ] {
            out.extend(v.to_le_bytes());
        }
    }
    for w in params.weights() {
        out.extend(w.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<NetParams> {
    let bad = |m: &str| ReconError::Format(format!("network file: {m}"));
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(bad("missing magic"));
    }
    let u32_at = |pos: usize| -> Result<u32> {
        bytes
            .get(pos..pos + 4)
            .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .ok_or_else(|| bad("truncated header"))
    };
    let n = u32_at(8)? as usize;
    let mut pos = 12;
    let mut layers = Vec::with_capacity(n);
    for _ in 0..n {
        let f: Vec<u32> = (0..6).map(|i| u32_at(pos + 4 * i)).collect::<Result<_>>()?;
        pos += 24;
        let activation = match f[4] {
            0 => Activation::Relu,
            1 => Activation::Linear,
            _ => return Err(bad("unknown activation")),
        };
        let mask = match f[5] {
            0 => TapMask::None,
            1 => TapMask::Center,
            2 => TapMask::OddOffsets,
            3 => TapMask::EvenOffsets,
            _ => return Err(bad("unknown tap mask")),
        };
        layers.push(LayerSpec {
            in_channels: f[0] as usize,
            out_channels: f[1] as usize,
            kernel: (f[2] as usize, f[3] as usize),
            activation,
            mask,
        });
    }
    let body = &bytes[pos..];
    if body.len() % 8 != 0 {
        return Err(bad("body is not a whole number of f64 values"));
    }
    let weights = body
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    NetParams::from_parts(layers, weights)
}

pub fn save(path: &Path, params: &NetParams) -> Result<()> {
    fs::write(path, encode(params))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<NetParams> {
    decode(&fs::read(path)?)
}
