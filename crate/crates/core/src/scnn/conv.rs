//! Zero-padded "same" 2D convolution (cross-correlation) over batched tensors,
//! lowered to a single matrix product through an im2col buffer.
//!
//! Weights are stored `out × in × kh × kw`, which is directly the row-major
//! `out × (in·kh·kw)` operand of the product.

use crate::tensor::Tensor;

/// `c = a · b + beta · c` for row/column-strided f64 operands; `c` is row-major `m × n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    assert!(m == 0 || k == 0 || a.len() > (m - 1) * rsa + (k - 1) * csa);
    assert!(k == 0 || n == 0 || b.len() > (k - 1) * rsb + (n - 1) * csb);
    assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Which spatial taps of a layer are structurally forced to zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TapMask {
    /// Every tap is trainable.
    None,
    /// The center tap of every (out, in) channel pair is zero.
    Center,
    /// Only taps at odd offset parity (`dy + dx` odd) are trainable.
    OddOffsets,
    /// Only taps at even offset parity (`dy + dx` even) are trainable.
    EvenOffsets,
}

impl TapMask {
    pub fn allows(self, ky: usize, kx: usize, kh: usize, kw: usize) -> bool {
        let dy = ky as isize - (kh / 2) as isize;
        let dx = kx as isize - (kw / 2) as isize;
        match self {
            TapMask::None => true,
            TapMask::Center => dy != 0 || dx != 0,
            TapMask::OddOffsets => (dy + dx).rem_euclid(2) == 1,
            TapMask::EvenOffsets => (dy + dx).rem_euclid(2) == 0,
        }
    }
}

/// Shape of one convolution layer. Weights at taps the mask excludes are never read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kh: usize,
    pub kw: usize,
    pub mask: TapMask,
}

impl ConvShape {
    pub fn dense(in_channels: usize, out_channels: usize, kh: usize, kw: usize) -> Self {
        ConvShape {
            in_channels,
            out_channels,
            kh,
            kw,
            mask: TapMask::None,
        }
    }

    /// Full tap count per output channel, masked taps included.
    pub fn taps(&self) -> usize {
        self.in_channels * self.kh * self.kw
    }

    pub fn weight_len(&self) -> usize {
        self.out_channels * self.taps()
    }

    /// Spatial positions `(ky, kx)` the mask allows, in raster order.
    pub fn active(&self) -> Vec<(usize, usize)> {
        (0..self.kh)
            .flat_map(|ky| (0..self.kw).map(move |kx| (ky, kx)))
            .filter(|&(ky, kx)| self.mask.allows(ky, kx, self.kh, self.kw))
            .collect()
    }

    /// Rows of the unfolded input: one per (input channel, active tap).
    fn rows(&self) -> usize {
        self.in_channels * self.active().len()
    }

    /// Weights restricted to active taps, `out × rows` row-major.
    fn compact(&self, weights: &[f64]) -> Vec<f64> {
        let active = self.active();
        let mut w = Vec::with_capacity(self.out_channels * self.rows());
        for o in 0..self.out_channels {
            for c in 0..self.in_channels {
                let base = (o * self.in_channels + c) * self.kh * self.kw;
                w.extend(active.iter().map(|&(ky, kx)| weights[base + ky * self.kw + kx]));
            }
        }
        w
    }

    /// Inverse of [`Self::compact`], with zeros at masked taps.
    fn expand(&self, compact: &[f64]) -> Vec<f64> {
        let active = self.active();
        let mut w = vec![0.0; self.weight_len()];
        let mut it = compact.iter();
        for o in 0..self.out_channels {
            for c in 0..self.in_channels {
                let base = (o * self.in_channels + c) * self.kh * self.kw;
                for &(ky, kx) in &active {
                    w[base + ky * self.kw + kx] = *it.next().unwrap();
                }
            }
        }
        w
    }
}

/// Valid output column range `[lo, hi)` for a horizontal shift `dx` on a row of width `w`.
fn x_range(dx: isize, w: usize) -> (usize, usize) {
    let lo = (-dx).max(0) as usize;
    let hi = ((w as isize - dx).min(w as isize)).max(0) as usize;
    (lo, hi)
}

/// Unfolds `x` into a `(channels·|active|) × (batch·height·width)` buffer.
///
/// Row `c·|active| + t`, column `(n·height + y)·width + x` holds
/// `x[c, n, y + ky - kh/2, x + kx - kw/2]` for the `t`-th active tap `(ky, kx)`,
/// or zero outside the plane.
pub fn im2col(x: &Tensor, shape: &ConvShape) -> Vec<f64> {
    let (h, w) = (x.height, x.width);
    let (ph, pw) = ((shape.kh / 2) as isize, (shape.kw / 2) as isize);
    let cols = x.columns();
    let active = shape.active();
    let mut out = vec![0.0; x.channels * active.len() * cols];
    for c in 0..x.channels {
        for (t, &(ky, kx)) in active.iter().enumerate() {
            let row = (c * active.len() + t) * cols;
            let dx = kx as isize - pw;
            let (x_lo, x_hi) = x_range(dx, w);
            if x_lo >= x_hi {
                continue;
            }
            for n in 0..x.batch {
                for yo in 0..h {
                    let yi = yo as isize + ky as isize - ph;
                    if yi < 0 || yi >= h as isize {
                        continue;
                    }
                    let src = x.index(c, n, yi as usize, 0);
                    let dst = row + (n * h + yo) * w;
                    let s0 = (src as isize + x_lo as isize + dx) as usize;
                    out[dst + x_lo..dst + x_hi].copy_from_slice(&x.data[s0..s0 + (x_hi - x_lo)]);
                }
            }
        }
    }
    out
}

/// Adjoint of [`im2col`]: scatters and accumulates column gradients back onto the input grid.
pub fn col2im(cols: &[f64], shape: &ConvShape, batch: usize, height: usize, width: usize) -> Tensor {
    let (h, w) = (height, width);
    let (ph, pw) = ((shape.kh / 2) as isize, (shape.kw / 2) as isize);
    let ncols = batch * h * w;
    let active = shape.active();
    let mut out = Tensor::zeros(shape.in_channels, batch, h, w);
    for c in 0..shape.in_channels {
        for (t, &(ky, kx)) in active.iter().enumerate() {
            let row = (c * active.len() + t) * ncols;
            let dx = kx as isize - pw;
            let (x_lo, x_hi) = x_range(dx, w);
            if x_lo >= x_hi {
                continue;
            }
            for n in 0..batch {
                for yo in 0..h {
                    let yi = yo as isize + ky as isize - ph;
                    if yi < 0 || yi >= h as isize {
                        continue;
                    }
                    let dst = out.index(c, n, yi as usize, 0);
                    let src = row + (n * h + yo) * w;
                    let d0 = (dst as isize + x_lo as isize + dx) as usize;
                    let len = x_hi - x_lo;
                    for (o, g) in out.data[d0..d0 + len].iter_mut().zip(&cols[src + x_lo..src + x_hi]) {
                        *o += g;
                    }
                }
            }
        }
    }
    out
}

/// Forward pass; also returns the im2col buffer for reuse in the backward pass.
pub fn conv_forward(shape: ConvShape, weights: &[f64], x: &Tensor) -> (Tensor, Vec<f64>) {
    assert_eq!(x.channels, shape.in_channels, "input channel count");
    assert_eq!(weights.len(), shape.weight_len(), "weight count");
    let cols = im2col(x, &shape);
    let p = x.columns();
    let k = shape.rows();
    let mut y = Tensor::zeros(shape.out_channels, x.batch, x.height, x.width);
    gemm(shape.out_channels, k, p, &shape.compact(weights), (k, 1), &cols, (p, 1), 0.0, &mut y.data);
    (y, cols)
}

/// Gradient with respect to the weights: `grad_out · colsᵀ`, zero at masked taps.
pub fn conv_grad_weights(shape: ConvShape, cols: &[f64], grad_out: &Tensor) -> Vec<f64> {
    let p = grad_out.columns();
    let k = shape.rows();
    let mut g = vec![0.0; shape.out_channels * k];
    gemm(shape.out_channels, p, k, &grad_out.data, (p, 1), cols, (1, p), 0.0, &mut g);
    shape.expand(&g)
}

/// Gradient with respect to the input (the transpose of the convolution applied to `grad_out`).
pub fn conv_grad_input(shape: ConvShape, weights: &[f64], grad_out: &Tensor) -> Tensor {
    assert_eq!(grad_out.channels, shape.out_channels, "grad channel count");
    let p = grad_out.columns();
    let k = shape.rows();
    let mut gcols = vec![0.0; k * p];
    gemm(k, shape.out_channels, p, &shape.compact(weights), (1, k), &grad_out.data, (p, 1), 0.0, &mut gcols);
    col2im(&gcols, &shape, grad_out.batch, grad_out.height, grad_out.width)
}
