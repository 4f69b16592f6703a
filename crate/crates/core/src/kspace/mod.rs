//! Multi-coil complex volumes, their domain state machine and Fourier transforms.
//!
//! Samples are stored coil-slowest then x, y, z with z fastest, so a single x-position
//! of every coil (a [`HybridSlice`]) is `coils` contiguous blocks of `ny * nz` samples.
//!
//! All transforms are orthonormal and centered: the zero frequency of an axis of
//! length `n` lives at index `n / 2`, in k-space as well as in image space.

mod fft;
pub mod io;

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rustfft::FftDirection;

use crate::error::{ReconError, Result};
use crate::sampling::SamplingMask;
use crate::tensor::Tensor;

pub use fft::transform_axis;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Domain {
    KSpace,
    Hybrid,
    Image,
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::KSpace => "kspace",
            Domain::Hybrid => "hybrid",
            Domain::Image => "image",
        })
    }
}

impl FromStr for Domain {
    type Err = ReconError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kspace" => Ok(Domain::KSpace),
            "hybrid" => Ok(Domain::Hybrid),
            "image" => Ok(Domain::Image),
            other => Err(ReconError::Format(format!("unknown domain '{other}'"))),
        }
    }
}

fn expect_domain(found: Domain, expected: Domain) -> Result<()> {
    if found == expected {
        Ok(())
    } else {
        Err(ReconError::DomainMismatch { expected, found })
    }
}

fn check_finite(data: &[Complex64]) -> Result<()> {
    match data.iter().position(|z| !z.re.is_finite() || !z.im.is_finite()) {
        None => Ok(()),
        Some(i) => Err(ReconError::Degenerate(format!("non-finite sample at {i}"))),
    }
}

/// Grid sizes of a volume, `(nx, ny, nz)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl Dims {
    pub fn new(nx: usize, ny: usize, nz: usize) -> Self {
        Dims { nx, ny, nz }
    }

    pub fn voxels(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn plane(&self) -> usize {
        self.ny * self.nz
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.nx, self.ny, self.nz)
    }
}

impl FromStr for Dims {
    type Err = ReconError;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<usize> = s
            .split('x')
            .map(|p| p.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| ReconError::Config(format!("bad dims '{s}', expected NXxNYxNZ")))?;
        match parts[..] {
            [nx, ny, nz] if nx > 0 && ny > 0 && nz > 0 => Ok(Dims { nx, ny, nz }),
            _ => Err(ReconError::Config(format!(
                "bad dims '{s}', expected three positive sizes NXxNYxNZ"
            ))),
        }
    }
}

/// Positive multiplier that brings a volume to unit mean power.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormScale(f64);

impl NormScale {
    pub fn new(scale: f64) -> Result<Self> {
        if scale > 0.0 && scale.is_finite() {
            Ok(NormScale(scale))
        } else {
            Err(ReconError::Degenerate(format!(
                "normalization scale must be positive and finite, got {scale}"
            )))
        }
    }

    pub fn identity() -> Self {
        NormScale(1.0)
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexVolume {
    coils: usize,
    dims: Dims,
    domain: Domain,
    data: Vec<Complex64>,
}

impl ComplexVolume {
    pub fn new(coils: usize, dims: Dims, domain: Domain, data: Vec<Complex64>) -> Result<Self> {
        if coils == 0 || dims.voxels() == 0 {
            return Err(ReconError::Shape("volume needs at least one coil and voxel".into()));
        }
        if data.len() != coils * dims.voxels() {
            return Err(ReconError::Shape(format!(
                "{coils} coils of {dims} need {} samples, got {}",
                coils * dims.voxels(),
                data.len()
            )));
        }
        check_finite(&data)?;
        Ok(ComplexVolume {
            coils,
            dims,
            domain,
            data,
        })
    }

    pub fn zeros(coils: usize, dims: Dims, domain: Domain) -> Self {
        ComplexVolume {
            coils,
            dims,
            domain,
            data: vec![Complex64::new(0.0, 0.0); coils * dims.voxels()],
        }
    }

    pub fn coils(&self) -> usize {
        self.coils
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Complex64> {
        self.data
    }

    #[inline]
    pub fn index(&self, c: usize, x: usize, y: usize, z: usize) -> usize {
        ((c * self.dims.nx + x) * self.dims.ny + y) * self.dims.nz + z
    }

    pub fn get(&self, c: usize, x: usize, y: usize, z: usize) -> Complex64 {
        self.data[self.index(c, x, y, z)]
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    /// Elementwise map that keeps shape and domain; the result is re-validated.
    pub fn map(&self, f: impl Fn(Complex64) -> Complex64) -> Result<Self> {
        let data: Vec<Complex64> = self.data.iter().map(|&z| f(z)).collect();
        check_finite(&data)?;
        Ok(ComplexVolume {
            coils: self.coils,
            dims: self.dims,
            domain: self.domain,
            data,
        })
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        self.map(|z| z * factor)
    }

    fn transformed(&self, expected: Domain, next: Domain, axis: Axis, dir: FftDirection) -> Result<Self> {
        expect_domain(self.domain, expected)?;
        let Dims { nx, ny, nz } = self.dims;
        let mut data = self.data.clone();
        match axis {
            Axis::X => transform_axis(&mut data, self.coils, nx, ny * nz, dir),
            Axis::YZ => {
                transform_axis(&mut data, self.coils * nx, ny, nz, dir);
                transform_axis(&mut data, self.coils * nx * ny, nz, 1, dir);
            }
        }
        Ok(ComplexVolume {
            coils: self.coils,
            dims: self.dims,
            domain: next,
            data,
        })
    }

    /// Orthonormal inverse DFT along the fully-sampled readout axis: k-space to hybrid space.
    pub fn ifft_x(&self) -> Result<Self> {
        self.transformed(Domain::KSpace, Domain::Hybrid, Axis::X, FftDirection::Inverse)
    }

    pub fn fft_x(&self) -> Result<Self> {
        self.transformed(Domain::Hybrid, Domain::KSpace, Axis::X, FftDirection::Forward)
    }

    /// Inverse 2D DFT over (ky, kz) of every x-slice: hybrid space to image space.
    pub fn ifft_yz(&self) -> Result<Self> {
        self.transformed(Domain::Hybrid, Domain::Image, Axis::YZ, FftDirection::Inverse)
    }

    pub fn fft_yz(&self) -> Result<Self> {
        self.transformed(Domain::Image, Domain::Hybrid, Axis::YZ, FftDirection::Forward)
    }

    pub fn fft3(&self) -> Result<Self> {
        self.fft_yz()?.fft_x()
    }

    pub fn ifft3(&self) -> Result<Self> {
        self.ifft_x()?.ifft_yz()
    }

    /// Copies out every coil at readout position `x`.
    pub fn slice(&self, x: usize) -> Result<HybridSlice> {
        let Dims { nx, ny, nz } = self.dims;
        if x >= nx {
            return Err(ReconError::OutOfBounds(format!("slice {x} of {nx}")));
        }
        let plane = ny * nz;
        let mut data = Vec::with_capacity(self.coils * plane);
        for c in 0..self.coils {
            let start = self.index(c, x, 0, 0);
            data.extend_from_slice(&self.data[start..start + plane]);
        }
        Ok(HybridSlice {
            coils: self.coils,
            ny,
            nz,
            x_index: x,
            domain: self.domain,
            data,
        })
    }

    pub fn slices(&self) -> Result<Vec<HybridSlice>> {
        (0..self.dims.nx).map(|x| self.slice(x)).collect()
    }

    /// Reassembles a volume from one slice per readout position, ordered by `x_index`.
    pub fn from_slices(slices: &[HybridSlice]) -> Result<Self> {
        let first = slices
            .first()
            .ok_or_else(|| ReconError::Shape("no slices to assemble".into()))?;
        let (coils, ny, nz, domain) = (first.coils, first.ny, first.nz, first.domain);
        let dims = Dims::new(slices.len(), ny, nz);
        let mut vol = ComplexVolume::zeros(coils, dims, domain);
        let mut seen = vec![false; slices.len()];
        for s in slices {
            if s.coils != coils || s.ny != ny || s.nz != nz {
                return Err(ReconError::DimensionMismatch(format!(
                    "slice {} is {}x{}x{}, expected {coils}x{ny}x{nz}",
                    s.x_index, s.coils, s.ny, s.nz
                )));
            }
            if s.domain != domain {
                return Err(ReconError::DomainMismatch {
                    expected: domain,
                    found: s.domain,
                });
            }
            if s.x_index >= slices.len() || seen[s.x_index] {
                return Err(ReconError::Shape(format!(
                    "slice index {} duplicated or out of range",
                    s.x_index
                )));
            }
            seen[s.x_index] = true;
            let plane = ny * nz;
            for c in 0..coils {
                let dst = vol.index(c, s.x_index, 0, 0);
                vol.data[dst..dst + plane].copy_from_slice(&s.data[c * plane..(c + 1) * plane]);
            }
        }
        Ok(vol)
    }
}

enum Axis {
    X,
    YZ,
}

/// All coils of one readout position, laid out coil-slowest then ky, kz (kz fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct HybridSlice {
    pub coils: usize,
    pub ny: usize,
    pub nz: usize,
    pub x_index: usize,
    pub domain: Domain,
    pub data: Vec<Complex64>,
}

impl HybridSlice {
    pub fn new(
        coils: usize,
        ny: usize,
        nz: usize,
        x_index: usize,
        domain: Domain,
        data: Vec<Complex64>,
    ) -> Result<Self> {
        if data.len() != coils * ny * nz {
            return Err(ReconError::Shape(format!(
                "slice {coils}x{ny}x{nz} needs {} samples, got {}",
                coils * ny * nz,
                data.len()
            )));
        }
        check_finite(&data)?;
        Ok(HybridSlice {
            coils,
            ny,
            nz,
            x_index,
            domain,
            data,
        })
    }

    pub fn zeros_like(&self) -> Self {
        self.with_data(self.domain, vec![Complex64::new(0.0, 0.0); self.data.len()])
    }

    pub fn plane(&self) -> usize {
        self.ny * self.nz
    }

    #[inline]
    pub fn index(&self, c: usize, y: usize, z: usize) -> usize {
        (c * self.ny + y) * self.nz + z
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn check_finite(&self) -> Result<()> {
        check_finite(&self.data)
    }

    fn transformed(&self, expected: Domain, next: Domain, dir: FftDirection) -> Result<Self> {
        expect_domain(self.domain, expected)?;
        let mut data = self.data.clone();
        transform_axis(&mut data, self.coils, self.ny, self.nz, dir);
        transform_axis(&mut data, self.coils * self.ny, self.nz, 1, dir);
        Ok(self.with_data(next, data))
    }

    /// Orthonormal inverse 2D DFT of every coil: hybrid to image.
    pub fn ifft2_yz(&self) -> Result<Self> {
        self.transformed(Domain::Hybrid, Domain::Image, FftDirection::Inverse)
    }

    pub fn fft2_yz(&self) -> Result<Self> {
        self.transformed(Domain::Image, Domain::Hybrid, FftDirection::Forward)
    }

    /// Root-sum-of-squares over coils of an image-domain slice.
    pub fn rss(&self) -> Result<Vec<f64>> {
        expect_domain(self.domain, Domain::Image)?;
        let plane = self.plane();
        Ok((0..plane)
            .map(|p| {
                (0..self.coils)
                    .map(|c| self.data[c * plane + p].norm_sqr())
                    .sum::<f64>()
                    .sqrt()
            })
            .collect())
    }
}

impl HybridSlice {
    /// Same geometry and readout position, new samples.
    pub fn with_data(&self, domain: Domain, data: Vec<Complex64>) -> Self {
        HybridSlice {
            coils: self.coils,
            ny: self.ny,
            nz: self.nz,
            x_index: self.x_index,
            domain,
            data,
        }
    }
}

/// Real-valued volume (coil-combined magnitude images, phantoms).
#[derive(Debug, Clone, PartialEq)]
pub struct RealVolume {
    pub dims: Dims,
    pub data: Vec<f64>,
}

impl RealVolume {
    pub fn new(dims: Dims, data: Vec<f64>) -> Result<Self> {
        if data.len() != dims.voxels() {
            return Err(ReconError::Shape(format!(
                "real volume {dims} needs {} values, got {}",
                dims.voxels(),
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(ReconError::Degenerate(format!("non-finite value at {i}")));
        }
        Ok(RealVolume { dims, data })
    }

    pub fn zeros(dims: Dims) -> Self {
        RealVolume {
            dims,
            data: vec![0.0; dims.voxels()],
        }
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (x * self.dims.ny + y) * self.dims.nz + z
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.data[self.index(x, y, z)]
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// Single-coil image-domain copy of this volume.
    pub fn to_complex(&self) -> ComplexVolume {
        ComplexVolume {
            coils: 1,
            dims: self.dims,
            domain: Domain::Image,
            data: self.data.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
        }
    }
}

/// Scales `vol` to unit mean power.
///
/// With a mask the mean runs over acquired (ky, kz) locations of every coil and readout
/// position; without one it runs over every sample. Returns the scaled volume and the
/// factor that was applied.
pub fn normalize_power(
    vol: &ComplexVolume,
    mask: Option<&SamplingMask>,
) -> Result<(ComplexVolume, NormScale)> {
    let Dims { nx, ny, nz } = vol.dims;
    let (sum, count) = match mask {
        None => (vol.energy(), vol.data.len()),
        Some(m) => {
            if m.ny() != ny || m.nz() != nz {
                return Err(ReconError::DimensionMismatch(format!(
                    "mask {}x{} vs volume plane {ny}x{nz}",
                    m.ny(),
                    m.nz()
                )));
            }
            let mut sum = 0.0;
            let mut count = 0usize;
            for c in 0..vol.coils {
                for x in 0..nx {
                    let base = vol.index(c, x, 0, 0);
                    for (p, &bit) in m.bits().iter().enumerate() {
                        if bit {
                            sum += vol.data[base + p].norm_sqr();
                            count += 1;
                        }
                    }
                }
            }
            (sum, count)
        }
    };
    if count == 0 || sum <= 0.0 {
        return Err(ReconError::Degenerate(
            "no nonzero samples to normalize over".into(),
        ));
    }
    let scale = NormScale::new((count as f64 / sum).sqrt())?;
    Ok((vol.scaled(scale.value())?, scale))
}

/// Undoes [`normalize_power`].
pub fn denormalize(vol: &ComplexVolume, scale: NormScale) -> Result<ComplexVolume> {
    vol.map(|z| z / scale.value())
}

/// Root-sum-of-squares coil combination of an image-domain volume.
pub fn rss_combine(vol: &ComplexVolume) -> Result<RealVolume> {
    expect_domain(vol.domain, Domain::Image)?;
    let n = vol.dims.voxels();
    let data = (0..n)
        .map(|v| {
            (0..vol.coils)
                .map(|c| vol.data[c * n + v].norm_sqr())
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    Ok(RealVolume { dims: vol.dims, data })
}

/// Real embedding: channels `0..nc` carry real parts, `nc..2nc` imaginary parts.
pub fn embed_real(slice: &HybridSlice) -> Tensor {
    let plane = slice.plane();
    let nc = slice.coils;
    let mut data = vec![0.0; 2 * nc * plane];
    for (i, z) in slice.data.iter().enumerate() {
        data[i] = z.re;
        data[nc * plane + i] = z.im;
    }
    Tensor {
        channels: 2 * nc,
        batch: 1,
        height: slice.ny,
        width: slice.nz,
        data,
    }
}

/// Inverse of [`embed_real`] for a single-image tensor.
pub fn split_complex(t: &Tensor, x_index: usize, domain: Domain) -> Result<HybridSlice> {
    if t.channels % 2 != 0 {
        return Err(ReconError::Shape(format!(
            "odd channel count {} cannot be split into real and imaginary halves",
            t.channels
        )));
    }
    if t.batch != 1 {
        return Err(ReconError::Shape(format!("expected batch 1, got {}", t.batch)));
    }
    let nc = t.channels / 2;
    let half = nc * t.plane_len();
    let data: Vec<Complex64> = (0..half)
        .map(|i| Complex64::new(t.data[i], t.data[half + i]))
        .collect();
    HybridSlice::new(nc, t.height, t.width, x_index, domain, data)
}

#[cfg(test)]
mod tests;
