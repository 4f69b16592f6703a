//! SPIRiT interpolation kernels: calibration by regularized least squares on ACS data,
//! and the linear self-consistency operator `G` they define.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{ReconError, Result};
use crate::kspace::{embed_real, split_complex, HybridSlice};
use crate::scnn::conv::{conv_forward, conv_grad_input, gemm, ConvShape};
use crate::tensor::Tensor;

/// Ridge strength used when calibrating kernels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Tikhonov {
    /// `1e-4 · trace(AᴴA) / n` of each target's normal matrix.
    Auto,
    Fixed(f64),
}

impl Default for Tikhonov {
    fn default() -> Self {
        Tikhonov::Auto
    }
}

pub const AUTO_TIKHONOV_FACTOR: f64 = 1e-4;

/// One `nc × size × size` complex kernel per target coil.
///
/// Kernel `j` predicts coil `j` at a location from the neighborhood of every coil; its
/// own center tap (coil `j`, offset 0) is always exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SpiritKernelSet {
    nc: usize,
    size: usize,
    taps: Vec<Complex64>,
    real_weights: Vec<f64>,
}

impl SpiritKernelSet {
    /// Builds a kernel set from taps laid out `[target][source][ky][kz]`; self-taps are zeroed.
    pub fn new(nc: usize, size: usize, mut taps: Vec<Complex64>) -> Result<Self> {
        if size % 2 == 0 || size == 0 {
            return Err(ReconError::Config(format!("kernel size must be odd, got {size}")));
        }
        if taps.len() != nc * nc * size * size {
            return Err(ReconError::Shape(format!(
                "{nc} kernels of {nc}x{size}x{size} need {} taps, got {}",
                nc * nc * size * size,
                taps.len()
            )));
        }
        if taps.iter().any(|t| !t.re.is_finite() || !t.im.is_finite()) {
            return Err(ReconError::Degenerate("non-finite kernel tap".into()));
        }
        let h = size / 2;
        for j in 0..nc {
            taps[((j * nc + j) * size + h) * size + h] = Complex64::new(0.0, 0.0);
        }
        let real_weights = real_block_weights(nc, size, &taps);
        Ok(SpiritKernelSet {
            nc,
            size,
            taps,
            real_weights,
        })
    }

    pub fn coils(&self) -> usize {
        self.nc
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn taps(&self) -> &[Complex64] {
        &self.taps
    }

    pub fn tap(&self, target: usize, source: usize, ky: usize, kz: usize) -> Complex64 {
        self.taps[((target * self.nc + source) * self.size + ky) * self.size + kz]
    }

    pub(crate) fn shape(&self) -> ConvShape {
        ConvShape::dense(2 * self.nc, 2 * self.nc, self.size, self.size)
    }

    /// `G` on the real embedding (`2nc` channels).
    pub(crate) fn apply_real(&self, x: &Tensor) -> Tensor {
        conv_forward(self.shape(), &self.real_weights, x).0
    }

    /// `Gᴴ` on the real embedding, i.e. the transpose of [`Self::apply_real`].
    pub(crate) fn apply_real_adjoint(&self, x: &Tensor) -> Tensor {
        conv_grad_input(self.shape(), &self.real_weights, x)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.taps.len() * 16);
        out.extend((self.nc as u64).to_le_bytes());
        out.extend((self.size as u64).to_le_bytes());
        for t in &self.taps {
            out.extend(t.re.to_le_bytes());
            out.extend(t.im.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 {
            return Err(ReconError::Format("kernel file header truncated".into()));
        }
        let nc = u64::from_le_bytes(bytes[0..8].try_into().unwrap()) as usize;
        let size = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let body = &bytes[16..];
        if body.len() != nc * nc * size * size * 16 {
            return Err(ReconError::Format(format!(
                "kernel body has {} bytes, header declares {}",
                body.len(),
                nc * nc * size * size * 16
            )));
        }
        let taps = body
            .chunks_exact(16)
            .map(|b| {
                Complex64::new(
                    f64::from_le_bytes(b[0..8].try_into().unwrap()),
                    f64::from_le_bytes(b[8..16].try_into().unwrap()),
                )
            })
            .collect();
        Self::new(nc, size, taps)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&fs::read(path)?)
    }
}

/// Real `2nc × 2nc × size × size` weights equivalent to the complex kernels acting on
/// `[re; im]` channel stacks.
fn real_block_weights(nc: usize, size: usize, taps: &[Complex64]) -> Vec<f64> {
    let ch = 2 * nc;
    let kk = size * size;
    let mut w = vec![0.0; ch * ch * kk];
    for j in 0..nc {
        for i in 0..nc {
            for t in 0..kk {
                let k = taps[(j * nc + i) * kk + t];
                w[(j * ch + i) * kk + t] = k.re;
                w[(j * ch + i + nc) * kk + t] = -k.im;
                w[((j + nc) * ch + i) * kk + t] = k.im;
                w[((j + nc) * ch + i + nc) * kk + t] = k.re;
            }
        }
    }
    w
}

/// Applies the linear self-consistency operator to one slice: a zero-padded same-size
/// convolution per target coil, summed over source coils.
pub fn apply_g_linear(kernels: &SpiritKernelSet, slice: &HybridSlice) -> Result<HybridSlice> {
    if slice.coils != kernels.nc {
        return Err(ReconError::DimensionMismatch(format!(
            "kernels for {} coils, slice has {}",
            kernels.nc, slice.coils
        )));
    }
    let y = kernels.apply_real(&embed_real(slice));
    split_complex(&y, slice.x_index, slice.domain)
}

/// Source matrix of every valid interior ACS location: one row per location,
/// `nc·size²` columns (coil, ky, kz), split into real and imaginary parts.
fn source_rows(patches: &[HybridSlice], nc: usize, size: usize) -> (usize, Vec<f64>, Vec<f64>) {
    let h = size / 2;
    let cols = nc * size * size;
    let mut re = Vec::new();
    let mut im = Vec::new();
    let mut rows = 0;
    for p in patches {
        for y in h..p.ny - h {
            for z in h..p.nz - h {
                for c in 0..nc {
                    for dy in 0..size {
                        let start = p.index(c, y + dy - h, z - h);
                        for v in &p.data[start..start + size] {
                            re.push(v.re);
                            im.push(v.im);
                        }
                    }
                }
                rows += 1;
            }
        }
    }
    debug_assert_eq!(re.len(), rows * cols);
    (rows, re, im)
}

/// Calibrates one kernel per target coil on pooled ACS patches.
///
/// Each target location inside the valid interior of a patch is predicted from its full
/// `nc × size × size` neighborhood minus the target sample itself.
pub fn calibrate_kernels(
    patches: &[HybridSlice],
    size: usize,
    tikhonov: Tikhonov,
) -> Result<SpiritKernelSet> {
    let first = patches
        .first()
        .ok_or_else(|| ReconError::Calibration("no ACS patches".into()))?;
    let nc = first.coils;
    if size % 2 == 0 || size == 0 {
        return Err(ReconError::Config(format!("kernel size must be odd, got {size}")));
    }
    for p in patches {
        if p.coils != nc {
            return Err(ReconError::DimensionMismatch("ACS patches disagree on coil count".into()));
        }
        if p.ny < size || p.nz < size {
            return Err(ReconError::Calibration(format!(
                "ACS {}x{} is smaller than the {size}x{size} kernel",
                p.ny, p.nz
            )));
        }
    }
    let (rows, ar, ai) = source_rows(patches, nc, size);
    let t = nc * size * size;

    // AᴴA = (ArᵀAr + AiᵀAi) + i (ArᵀAi − AiᵀAr)
    let mut g_re = vec![0.0; t * t];
    let mut g_im = vec![0.0; t * t];
    gemm(t, rows, t, &ar, (1, t), &ar, (t, 1), 0.0, &mut g_re);
    gemm(t, rows, t, &ai, (1, t), &ai, (t, 1), 1.0, &mut g_re);
    gemm(t, rows, t, &ar, (1, t), &ai, (t, 1), 0.0, &mut g_im);
    let mut tmp = vec![0.0; t * t];
    gemm(t, rows, t, &ai, (1, t), &ar, (t, 1), 0.0, &mut tmp);
    for (a, b) in g_im.iter_mut().zip(&tmp) {
        *a -= b;
    }
    let gram = |r: usize, c: usize| Complex64::new(g_re[r * t + c], g_im[r * t + c]);

    let h = size / 2;
    let mut taps = vec![Complex64::new(0.0, 0.0); nc * t];
    for j in 0..nc {
        let target = (j * size + h) * size + h;
        let idx: Vec<usize> = (0..t).filter(|&c| c != target).collect();
        let n = idx.len();
        let mut normal = DMatrix::from_fn(n, n, |r, c| gram(idx[r], idx[c]));
        let rhs = DVector::from_fn(n, |r, _| gram(idx[r], target));
        let lambda = match tikhonov {
            Tikhonov::Auto => {
                AUTO_TIKHONOV_FACTOR * (0..n).map(|r| normal[(r, r)].re).sum::<f64>() / n as f64
            }
            Tikhonov::Fixed(l) if l >= 0.0 && l.is_finite() => l,
            Tikhonov::Fixed(l) => {
                return Err(ReconError::Config(format!("Tikhonov weight must be >= 0, got {l}")))
            }
        };
        for r in 0..n {
            normal[(r, r)] += Complex64::new(lambda, 0.0);
        }
        let chol = normal.cholesky().ok_or_else(|| {
            ReconError::Solver(format!(
                "normal matrix for coil {j} is not positive definite; use a Tikhonov weight > 0"
            ))
        })?;
        let diag: Vec<f64> = (0..n).map(|r| chol.l_dirty()[(r, r)].re).collect();
        let (lo, hi) = diag
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), &d| (lo.min(d), hi.max(d)));
        if !(lo > 0.0) || (lo / hi).powi(2) < 1e-14 {
            return Err(ReconError::Solver(format!(
                "normal matrix for coil {j} is rank-deficient; use a Tikhonov weight > 0"
            )));
        }
        let w = chol.solve(&rhs);
        for (r, &c) in idx.iter().enumerate() {
            taps[j * t + c] = w[r];
        }
    }
    SpiritKernelSet::new(nc, size, taps)
}

/// Normalized self-consistency residual `‖x − Gx‖² / ‖x‖²` over the valid interior of each patch.
pub fn interior_residual(kernels: &SpiritKernelSet, patches: &[HybridSlice]) -> Result<f64> {
    let h = kernels.size / 2;
    let mut num = 0.0;
    let mut den = 0.0;
    for p in patches {
        let g = apply_g_linear(kernels, p)?;
        for c in 0..p.coils {
            for y in h..p.ny - h {
                for z in h..p.nz - h {
                    let i = p.index(c, y, z);
                    num += (p.data[i] - g.data[i]).norm_sqr();
                    den += p.data[i].norm_sqr();
                }
            }
        }
    }
    if den == 0.0 {
        return Err(ReconError::Degenerate("ACS interior has zero energy".into()));
    }
    Ok(num / den)
}
