//! Linear self-consistency baselines.

pub mod cg;
pub mod kernels;
pub mod l1;
pub mod wavelet;

pub use cg::{spirit_cg_recon, ReconTrace};
pub use kernels::{apply_g_linear, calibrate_kernels, interior_residual, SpiritKernelSet, Tikhonov};
pub use l1::{l1spirit_recon, wavelet_shrink, L1Options};
pub use wavelet::{dwt2, idwt2, soft_threshold, WaveletCoeffs};
