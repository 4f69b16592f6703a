//! Self-consistency reconstruction with the linear operator: least squares on
//! `‖(G − I)x‖²` over the non-acquired samples only, solved by CGLS.

use crate::error::{ReconError, Result};
use crate::kspace::{embed_real, split_complex, Domain, HybridSlice};
use crate::sampling::SamplingMask;
use crate::spirit::kernels::SpiritKernelSet;
use crate::tensor::Tensor;

/// Objective values of an iterative reconstruction: the value at the starting point and
/// one value after every iteration.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReconTrace {
    pub initial: f64,
    pub losses: Vec<f64>,
}

impl ReconTrace {
    pub fn final_loss(&self) -> f64 {
        self.losses.last().copied().unwrap_or(self.initial)
    }
}

pub(crate) fn check_inputs(slice: &HybridSlice, mask: &SamplingMask, coils: usize) -> Result<()> {
    if slice.domain != Domain::Hybrid {
        return Err(ReconError::DomainMismatch {
            expected: Domain::Hybrid,
            found: slice.domain,
        });
    }
    if slice.ny != mask.ny() || slice.nz != mask.nz() {
        return Err(ReconError::DimensionMismatch(format!(
            "slice plane {}x{} vs mask {}x{}",
            slice.ny,
            slice.nz,
            mask.ny(),
            mask.nz()
        )));
    }
    if slice.coils != coils {
        return Err(ReconError::DimensionMismatch(format!(
            "operator expects {coils} coils, slice has {}",
            slice.coils
        )));
    }
    Ok(())
}

/// Free-entry indicator over the real embedding (every channel shares the plane mask).
pub(crate) fn free_entries(mask: &SamplingMask, channels: usize) -> Vec<bool> {
    let plane: Vec<bool> = mask.bits().iter().map(|b| !b).collect();
    plane.repeat(channels)
}

fn project(t: &mut Tensor, free: &[bool]) {
    for (v, &f) in t.data.iter_mut().zip(free) {
        if !f {
            *v = 0.0;
        }
    }
}

/// `(G − I)x` on the real embedding.
fn residual_op(kernels: &SpiritKernelSet, x: &Tensor) -> Tensor {
    let mut y = kernels.apply_real(x);
    for (a, b) in y.data.iter_mut().zip(&x.data) {
        *a -= b;
    }
    y
}

fn residual_adjoint(kernels: &SpiritKernelSet, r: &Tensor) -> Tensor {
    let mut y = kernels.apply_real_adjoint(r);
    for (a, b) in y.data.iter_mut().zip(&r.data) {
        *a -= b;
    }
    y
}

/// Runs `iters` CGLS steps from the current free entries of `start`.
///
/// Acquired entries are never written, so they leave bit-identical to `start`.
pub(crate) fn cgls(
    kernels: &SpiritKernelSet,
    start: &Tensor,
    free: &[bool],
    iters: usize,
) -> Result<(Tensor, ReconTrace)> {
    let mut x = start.clone();
    let mut r = residual_op(kernels, &x);
    for v in r.data.iter_mut() {
        *v = -*v;
    }
    let mut trace = ReconTrace {
        initial: r.sum_squares(),
        losses: Vec::with_capacity(iters),
    };
    let mut s = residual_adjoint(kernels, &r);
    project(&mut s, free);
    let mut p = s.clone();
    let mut gamma = s.sum_squares();
    for it in 0..iters {
        if gamma == 0.0 {
            trace.losses.push(r.sum_squares());
            continue;
        }
        let q = residual_op(kernels, &p);
        let qq = q.sum_squares();
        if qq == 0.0 {
            gamma = 0.0;
            trace.losses.push(r.sum_squares());
            continue;
        }
        let alpha = gamma / qq;
        for ((xv, &pv), &f) in x.data.iter_mut().zip(&p.data).zip(free) {
            if f {
                *xv += alpha * pv;
            }
        }
        for (rv, qv) in r.data.iter_mut().zip(&q.data) {
            *rv -= alpha * qv;
        }
        let loss = r.sum_squares();
        if !loss.is_finite() {
            return Err(ReconError::Divergence {
                context: "SPIRiT conjugate gradient".into(),
                iteration: it + 1,
            });
        }
        trace.losses.push(loss);
        s = residual_adjoint(kernels, &r);
        project(&mut s, free);
        let gamma_next = s.sum_squares();
        let beta = gamma_next / gamma;
        for (pv, sv) in p.data.iter_mut().zip(&s.data) {
            *pv = sv + beta * *pv;
        }
        gamma = gamma_next;
    }
    Ok((x, trace))
}

/// Reconstructs one undersampled hybrid slice.
///
/// The trace records `‖(G − I)x‖²` before the first and after every CG step.
pub fn spirit_cg_recon(
    und: &HybridSlice,
    mask: &SamplingMask,
    kernels: &SpiritKernelSet,
    iters: usize,
) -> Result<(HybridSlice, ReconTrace)> {
    check_inputs(und, mask, kernels.coils())?;
    let free = free_entries(mask, 2 * und.coils);
    let (x, trace) = cgls(kernels, &embed_real(und), &free, iters)?;
    let mut out = split_complex(&x, und.x_index, Domain::Hybrid)?;
    restore_acquired(&mut out, und, mask);
    Ok((out, trace))
}

/// Copies acquired samples of `y` into `x` verbatim.
pub(crate) fn restore_acquired(x: &mut HybridSlice, y: &HybridSlice, mask: &SamplingMask) {
    let plane = mask.bits().len();
    for (i, (xv, yv)) in x.data.iter_mut().zip(&y.data).enumerate() {
        if mask.bits()[i % plane] {
            *xv = *yv;
        }
    }
}
