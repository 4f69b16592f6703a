//! Volume file pairs: a text header `<name>.hdr` plus a little-endian f32 body,
//! `<name>.cplx` (interleaved real, imaginary) or `<name>.real`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;

use super::{ComplexVolume, Dims, Domain, RealVolume};
use crate::error::{ReconError, Result};

pub const LAYOUT: &str = "c,x,y,z;z-fastest";

#[derive(Debug, Clone, PartialEq)]
pub struct VolumeHeader {
    pub coils: usize,
    pub dims: Dims,
    pub domain: Domain,
    pub scale: f64,
}

impl VolumeHeader {
    pub fn render(&self) -> String {
        format!(
            "coils={}\nnx={}\nny={}\nnz={}\ndomain={}\nlayout={}\nscale={:?}\n",
            self.coils, self.dims.nx, self.dims.ny, self.dims.nz, self.domain, LAYOUT, self.scale
        )
    }

    pub fn parse(text: &str) -> Result<Self> {
        let fields = parse_key_values(text)?;
        let get = |k: &str| {
            fields
                .get(k)
                .ok_or_else(|| ReconError::Format(format!("header is missing '{k}'")))
        };
        let int = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|_| ReconError::Format(format!("header field '{k}' is not an integer")))
        };
        let layout = get("layout")?;
        if layout != LAYOUT {
            return Err(ReconError::Format(format!(
                "unsupported layout '{layout}', expected '{LAYOUT}'"
            )));
        }
        let scale: f64 = get("scale")?
            .parse()
            .map_err(|_| ReconError::Format("header field 'scale' is not a number".into()))?;
        Ok(VolumeHeader {
            coils: int("coils")?,
            dims: Dims::new(int("nx")?, int("ny")?, int("nz")?),
            domain: get("domain")?.parse()?,
            scale,
        })
    }
}

/// Parses `key=value` lines; blank lines and `#` comments are skipped, later keys win.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| ReconError::Format(format!("line {}: expected key=value", n + 1)))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

/// Strips a trailing `.hdr`, `.cplx` or `.real` so either the base name or any member of
/// the pair can be passed.
pub fn base_path(path: &Path) -> PathBuf {
    match path.extension().and_then(|e| e.to_str()) {
        Some("hdr" | "cplx" | "real") => path.with_extension(""),
        _ => path.to_path_buf(),
    }
}

fn with_suffix(base: &Path, ext: &str) -> PathBuf {
    let mut s = base.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

pub fn header_path(path: &Path) -> PathBuf {
    with_suffix(&base_path(path), "hdr")
}

pub fn complex_body_path(path: &Path) -> PathBuf {
    with_suffix(&base_path(path), "cplx")
}

pub fn real_body_path(path: &Path) -> PathBuf {
    with_suffix(&base_path(path), "real")
}

fn encode_f32(values: impl Iterator<Item = f64>) -> Vec<u8> {
    values.flat_map(|v| (v as f32).to_le_bytes()).collect()
}

fn decode_f32(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect()
}

/// Writes `<base>.hdr` and `<base>.cplx`; returns the two paths.
pub fn save_volume(path: &Path, vol: &ComplexVolume, scale: f64) -> Result<(PathBuf, PathBuf)> {
    let header = VolumeHeader {
        coils: vol.coils(),
        dims: vol.dims(),
        domain: vol.domain(),
        scale,
    };
    let (hdr, body) = (header_path(path), complex_body_path(path));
    fs::write(&hdr, header.render())?;
    fs::write(
        &body,
        encode_f32(vol.data().iter().flat_map(|z| [z.re, z.im])),
    )?;
    Ok((hdr, body))
}

pub fn load_volume(path: &Path) -> Result<(ComplexVolume, VolumeHeader)> {
    let header = VolumeHeader::parse(&fs::read_to_string(header_path(path))?)?;
    let bytes = fs::read(complex_body_path(path))?;
    let expected = header.coils * header.dims.voxels() * 8;
    if bytes.len() != expected {
        return Err(ReconError::Format(format!(
            "body has {} bytes, header declares {expected}",
            bytes.len()
        )));
    }
    let values = decode_f32(&bytes);
    let data = values
        .chunks_exact(2)
        .map(|p| Complex64::new(p[0], p[1]))
        .collect();
    let vol = ComplexVolume::new(header.coils, header.dims, header.domain, data)?;
    Ok((vol, header))
}

/// Writes `<base>.hdr` (one coil, image domain) and `<base>.real`.
pub fn save_real_volume(path: &Path, vol: &RealVolume) -> Result<(PathBuf, PathBuf)> {
    let header = VolumeHeader {
        coils: 1,
        dims: vol.dims,
        domain: Domain::Image,
        scale: 1.0,
    };
    let (hdr, body) = (header_path(path), real_body_path(path));
    fs::write(&hdr, header.render())?;
    fs::write(&body, encode_f32(vol.data.iter().copied()))?;
    Ok((hdr, body))
}

pub fn load_real_volume(path: &Path) -> Result<RealVolume> {
    let header = VolumeHeader::parse(&fs::read_to_string(header_path(path))?)?;
    if header.coils != 1 {
        return Err(ReconError::Format(format!(
            "real volume must have one coil, header says {}",
            header.coils
        )));
    }
    let bytes = fs::read(real_body_path(path))?;
    let expected = header.dims.voxels() * 4;
    if bytes.len() != expected {
        return Err(ReconError::Format(format!(
            "body has {} bytes, header declares {expected}",
            bytes.len()
        )));
    }
    RealVolume::new(header.dims, decode_f32(&bytes))
}
