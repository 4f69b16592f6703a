use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use clap::Args;

use ksrecon::RealVolume;

use crate::commands::load_image;
use crate::error::CliError;
use crate::manifest::Run;
use crate::settings::Settings;
use crate::Common;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl FromStr for Axis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "x" => Ok(Axis::X),
            "y" => Ok(Axis::Y),
            "z" => Ok(Axis::Z),
            _ => Err(format!("axis must be x, y or z, got '{s}'")),
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        })
    }
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    #[command(flatten)]
    pub common: Common,
    /// Image or complex volume (.hdr) (required)
    #[arg(long)]
    pub volume: Option<String>,
    /// Index along the chosen axis (required)
    #[arg(long)]
    pub slice: Option<usize>,
    /// Axis held fixed: x, y or z [default: x]
    #[arg(long)]
    pub axis: Option<Axis>,
}

/// The plane at `index` along `axis`, as (rows, columns, values) in row-major order.
///
/// Rows and columns follow the remaining axes in x, y, z order.
pub fn extract_plane(vol: &RealVolume, axis: Axis, index: usize) -> Result<(usize, usize, Vec<f64>), CliError> {
    let d = vol.dims;
    let (len, rows, cols) = match axis {
        Axis::X => (d.nx, d.ny, d.nz),
        Axis::Y => (d.ny, d.nx, d.nz),
        Axis::Z => (d.nz, d.nx, d.ny),
    };
    if index >= len {
        return Err(CliError::Usage(format!("slice {index} is out of range for axis {axis} of length {len}")));
    }
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            out.push(match axis {
                Axis::X => vol.get(index, r, c),
                Axis::Y => vol.get(r, index, c),
                Axis::Z => vol.get(r, c, index),
            });
        }
    }
    Ok((rows, cols, out))
}

/// Binary 16-bit PGM (`P5`, maxval 65535, big-endian samples) of `values`, mapping
/// `[0, max]` linearly onto `[0, 65535]`.
pub fn encode_pgm(rows: usize, cols: usize, values: &[f64]) -> Vec<u8> {
    let max = values.iter().fold(0.0f64, |m, &v| m.max(v));
    let gray: Vec<u16> = values
        .iter()
        .map(|&v| {
            if max > 0.0 {
                ((v / max).clamp(0.0, 1.0) * 65535.0).round() as u16
            } else {
                0
            }
        })
        .collect();
    let mut bytes = format!("P5\n{cols} {rows}\n65535\n").into_bytes();
    for g in gray {
        bytes.extend(g.to_be_bytes());
    }
    bytes
}

pub fn export(a: &ExportArgs, run: &mut Run, s: &mut Settings) -> Result<(), CliError> {
    let path = PathBuf::from(s.req::<String>("volume", a.volume.clone())?);
    let index = s.req("slice", a.slice)?;
    let axis = s.or("axis", a.axis, Axis::X)?;
    run.input(&ksrecon::kspace::io::header_path(&path));
    let vol = load_image(&path)?;
    let (rows, cols, values) = extract_plane(&vol, axis, index)?;
    let bytes = encode_pgm(rows, cols, &values);
    let name = format!("{axis}{index}.pgm");
    let out = run.out(&name);
    std::fs::write(&out, &bytes)?;
    run.output(&out);
    println!("{} ({cols}x{rows})", out.display());
    Ok(())
}
