//! Wavelet-regularized variant: CG sub-steps on the self-consistency term alternated with
//! soft thresholding of each coil image and a strict data-consistency projection.

use num_complex::Complex64;

use crate::error::{ReconError, Result};
use crate::kspace::{embed_real, split_complex, Domain, HybridSlice};
use crate::sampling::SamplingMask;
use crate::spirit::cg::{cgls, check_inputs, free_entries, restore_acquired, ReconTrace};
use crate::spirit::kernels::SpiritKernelSet;
use crate::spirit::wavelet::{dwt2, idwt2, soft_threshold, DEFAULT_LEVELS};

pub const DEFAULT_THRESH_FRAC: f64 = 0.0005;
pub const DEFAULT_CG_SUBSTEPS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct L1Options {
    pub outer_iters: usize,
    pub cg_substeps: usize,
    pub thresh_frac: f64,
    pub levels: usize,
}

impl Default for L1Options {
    fn default() -> Self {
        L1Options {
            outer_iters: 15,
            cg_substeps: DEFAULT_CG_SUBSTEPS,
            thresh_frac: DEFAULT_THRESH_FRAC,
            levels: DEFAULT_LEVELS,
        }
    }
}

/// Soft-thresholds every coil image of a hybrid slice in the wavelet domain.
///
/// The threshold is `thresh_frac` times the largest coefficient magnitude over all coils
/// and all bands.
pub fn wavelet_shrink(slice: &HybridSlice, thresh_frac: f64, levels: usize) -> Result<HybridSlice> {
    if !(thresh_frac >= 0.0) || !thresh_frac.is_finite() {
        return Err(ReconError::Config(format!(
            "threshold fraction must be finite and >= 0, got {thresh_frac}"
        )));
    }
    let img = slice.ifft2_yz()?;
    let plane = img.plane();
    let coeffs = img
        .data
        .chunks(plane)
        .map(|c| dwt2(c, img.ny, img.nz, levels))
        .collect::<Result<Vec<_>>>()?;
    let max = coeffs.iter().map(|c| c.max_abs()).fold(0.0, f64::max);
    let lambda = thresh_frac * max;
    let mut data: Vec<Complex64> = Vec::with_capacity(img.data.len());
    for c in &coeffs {
        data.extend(idwt2(&soft_threshold(c, lambda)));
    }
    img.with_data(Domain::Image, data).fft2_yz()
}

/// Reconstructs one undersampled hybrid slice; the trace holds `‖(G − I)x‖²` after each
/// outer iteration.
pub fn l1spirit_recon(
    und: &HybridSlice,
    mask: &SamplingMask,
    kernels: &SpiritKernelSet,
    opts: L1Options,
) -> Result<(HybridSlice, ReconTrace)> {
    check_inputs(und, mask, kernels.coils())?;
    let free = free_entries(mask, 2 * und.coils);
    let mut x = und.clone();
    let mut trace = ReconTrace::default();
    for it in 0..opts.outer_iters {
        let (t, sub) = cgls(kernels, &embed_real(&x), &free, opts.cg_substeps)?;
        if it == 0 {
            trace.initial = sub.initial;
        }
        let cg = split_complex(&t, und.x_index, Domain::Hybrid)?;
        x = wavelet_shrink(&cg, opts.thresh_frac, opts.levels)?;
        restore_acquired(&mut x, und, mask);
        x.check_finite().map_err(|_| ReconError::Divergence {
            context: "l1-SPIRiT".into(),
            iteration: it + 1,
        })?;
        trace.losses.push(consistency_loss(kernels, &x));
    }
    if opts.outer_iters == 0 {
        trace.initial = consistency_loss(kernels, &x);
    }
    Ok((x, trace))
}

fn consistency_loss(kernels: &SpiritKernelSet, x: &HybridSlice) -> f64 {
    let e = embed_real(x);
    let g = kernels.apply_real(&e);
    g.data.iter().zip(&e.data).map(|(a, b)| (a - b) * (a - b)).sum()
}
