//! Scan-specific learned self-consistency reconstruction, and the volume pipeline that
//! dispatches every slice to one of the three reconstruction methods.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{ReconError, Result};
use crate::kspace::{
    denormalize, embed_real, normalize_power, rss_combine, split_complex, ComplexVolume, Domain,
    HybridSlice, NormScale, RealVolume,
};
use crate::sampling::SamplingMask;
use crate::scnn::{net_init, train_self_consistency, AdamState, NetParams, SelfMasking, TrainConfig, Wants};
use crate::spirit::cg::{check_inputs, free_entries, restore_acquired};
use crate::spirit::{
    calibrate_kernels, l1spirit_recon, spirit_cg_recon, L1Options, ReconTrace, SpiritKernelSet, Tikhonov,
};
use crate::tensor::Tensor;

pub const DEFAULT_LR_RECON: f64 = 0.02;
pub const DEFAULT_LR_CALIB: f64 = 0.01;
pub const DEFAULT_CALIB_ITERS: usize = 1000;
pub const DEFAULT_KERNEL_SIZE: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Spirit,
    L1Spirit,
    Sraki,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Spirit, Method::L1Spirit, Method::Sraki];

    pub fn default_iters(self) -> usize {
        match self {
            Method::Spirit | Method::Sraki => 50,
            Method::L1Spirit => 15,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Spirit => "spirit",
            Method::L1Spirit => "l1spirit",
            Method::Sraki => "sraki",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = ReconError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| ReconError::Config(format!("unknown method '{s}' (spirit, l1spirit, sraki)")))
    }
}

/// How acquired samples enter the learned reconstruction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DcMode {
    /// Acquired samples are held fixed; only the others are optimized.
    Strict,
    /// Minimize `‖y − Mx‖² + β‖x − G(x)‖²` over every sample.
    Soft(f64),
}

impl fmt::Display for DcMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DcMode::Strict => f.write_str("strict"),
            DcMode::Soft(b) => write!(f, "soft({b})"),
        }
    }
}

impl FromStr for DcMode {
    type Err = ReconError;

    fn from_str(s: &str) -> Result<Self> {
        if s == "strict" {
            return Ok(DcMode::Strict);
        }
        let beta = s
            .strip_prefix("soft(")
            .and_then(|r| r.strip_suffix(')'))
            .and_then(|b| b.parse::<f64>().ok())
            .ok_or_else(|| ReconError::Config(format!("bad dc mode '{s}' (strict or soft(<beta>))")))?;
        Ok(DcMode::Soft(beta))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReconConfig {
    pub method: Method,
    pub iters: usize,
    pub lr_recon: f64,
    pub lr_calib: f64,
    pub calib_iters: usize,
    /// Linear kernel width; the network's layer sizes are fixed.
    pub kernel_size: usize,
    pub thresh_frac: f64,
    pub dc_mode: DcMode,
    pub seed: u64,
    pub masking: SelfMasking,
}

impl ReconConfig {
    pub fn new(method: Method) -> Self {
        ReconConfig {
            method,
            iters: method.default_iters(),
            lr_recon: DEFAULT_LR_RECON,
            lr_calib: DEFAULT_LR_CALIB,
            calib_iters: DEFAULT_CALIB_ITERS,
            kernel_size: DEFAULT_KERNEL_SIZE,
            thresh_frac: crate::spirit::l1::DEFAULT_THRESH_FRAC,
            dc_mode: DcMode::Strict,
            seed: 0,
            masking: SelfMasking::Parity,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(ReconError::Config(m.into()));
        if self.iters == 0 {
            return fail("iters must be at least 1");
        }
        if !(self.lr_recon > 0.0 && self.lr_recon.is_finite()) {
            return fail("lr_recon must be positive");
        }
        if !(self.lr_calib > 0.0 && self.lr_calib.is_finite()) {
            return fail("lr_calib must be positive");
        }
        if !(self.thresh_frac >= 0.0 && self.thresh_frac.is_finite()) {
            return fail("thresh_frac must be non-negative");
        }
        if self.kernel_size % 2 == 0 || self.kernel_size < 3 {
            return fail("kernel_size must be odd and at least 3");
        }
        if let DcMode::Soft(b) = self.dc_mode {
            if !(b > 0.0 && b.is_finite()) {
                return fail("soft data consistency needs beta > 0");
            }
        }
        Ok(())
    }
}

/// A trained network together with the normalization it was trained under.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfConsistencyNet {
    pub params: NetParams,
    pub scale: NormScale,
    pub calib_losses: Vec<f64>,
    pub final_loss: f64,
}

/// Normalized, x-transformed ACS patches of a k-space volume, stacked into one batch.
fn acs_patches(vol: &ComplexVolume, mask: &SamplingMask) -> Result<(Vec<HybridSlice>, NormScale)> {
    if vol.domain() != Domain::KSpace {
        return Err(ReconError::DomainMismatch {
            expected: Domain::KSpace,
            found: vol.domain(),
        });
    }
    let (acs_y, acs_z) = mask.acs();
    if acs_y < 5 || acs_z < 5 {
        return Err(ReconError::Calibration(format!(
            "ACS {acs_y}x{acs_z} is smaller than 5x5"
        )));
    }
    let (normed, scale) = normalize_power(vol, Some(mask))?;
    let hybrid = normed.ifft_x()?;
    Ok((mask.extract_acs(&hybrid)?, scale))
}

pub fn sraki_calibrate(vol: &ComplexVolume, mask: &SamplingMask, cfg: &ReconConfig) -> Result<SelfConsistencyNet> {
    cfg.validate()?;
    let (patches, scale) = acs_patches(vol, mask)?;
    let batch = Tensor::stack(&patches.iter().map(embed_real).collect::<Vec<_>>())?;
    let init = net_init(vol.coils(), cfg.seed, cfg.masking)?;
    let out = train_self_consistency(
        init,
        &batch,
        TrainConfig {
            lr: cfg.lr_calib,
            iters: cfg.calib_iters,
        },
    )?;
    if !out.final_loss.is_finite() {
        return Err(ReconError::Divergence {
            context: "network calibration".into(),
            iteration: cfg.calib_iters,
        });
    }
    Ok(SelfConsistencyNet {
        params: out.params,
        scale,
        calib_losses: out.losses,
        final_loss: out.final_loss,
    })
}

/// Linear kernels calibrated on the same normalized ACS data as the network.
pub fn spirit_calibrate(vol: &ComplexVolume, mask: &SamplingMask, cfg: &ReconConfig) -> Result<(SpiritKernelSet, NormScale)> {
    cfg.validate()?;
    let (patches, scale) = acs_patches(vol, mask)?;
    Ok((calibrate_kernels(&patches, cfg.kernel_size, Tikhonov::Auto)?, scale))
}

/// `‖x − G(x)‖²` and its gradient with respect to every entry of the real embedding:
/// `2r − 2Jᵀr` with `r = x − G(x)`.
pub fn self_consistency_grad(params: &NetParams, x: &Tensor) -> Result<(f64, Tensor)> {
    let (g, cache) = params.forward_cached(x)?;
    let mut r = x.clone();
    for (a, b) in r.data.iter_mut().zip(&g.data) {
        *a -= b;
    }
    let loss: f64 = r.data.iter().map(|v| v * v).sum();
    let mut up = r.clone();
    for v in up.data.iter_mut() {
        *v *= -2.0;
    }
    let (_, jt) = params.backward(
        &cache,
        &up,
        Wants {
            params: false,
            input: true,
        },
    );
    let mut grad = jt.expect("input gradient requested");
    for (gv, rv) in grad.data.iter_mut().zip(&r.data) {
        *gv += 2.0 * rv;
    }
    Ok((loss, grad))
}

fn self_consistency_loss(params: &NetParams, x: &Tensor) -> Result<f64> {
    let g = params.forward(x)?;
    Ok(x.data.iter().zip(&g.data).map(|(a, b)| (a - b) * (a - b)).sum())
}

/// Objective of the learned reconstruction at `x` under `mode`.
fn objective(params: &NetParams, x: &Tensor, y: &Tensor, acquired: &[bool], mode: DcMode) -> Result<f64> {
    let sc = self_consistency_loss(params, x)?;
    Ok(match mode {
        DcMode::Strict => sc,
        DcMode::Soft(beta) => beta * sc + data_misfit(x, y, acquired),
    })
}

fn data_misfit(x: &Tensor, y: &Tensor, acquired: &[bool]) -> f64 {
    x.data
        .iter()
        .zip(&y.data)
        .zip(acquired)
        .filter(|(_, &a)| a)
        .map(|((a, b), _)| (a - b) * (a - b))
        .sum()
}

/// Adam descent on the self-consistency objective for one normalized hybrid slice.
///
/// The trace holds the objective at the zero-filled start and after every iteration.
pub fn sraki_recon_slice(
    und: &HybridSlice,
    mask: &SamplingMask,
    net: &NetParams,
    cfg: &ReconConfig,
) -> Result<(HybridSlice, ReconTrace)> {
    cfg.validate()?;
    if net.in_channels() % 2 != 0 {
        return Err(ReconError::Config("network channel count must be even".into()));
    }
    check_inputs(und, mask, net.in_channels() / 2)?;
    und.check_finite()?;
    let y = embed_real(&mask.apply_slice(und)?);
    let free = free_entries(mask, y.channels);
    let acquired: Vec<bool> = free.iter().map(|f| !f).collect();
    let mut x = y.clone();
    let mut state = AdamState::new(x.data.len());
    let mut trace = ReconTrace::default();
    let context = format!("sraki reconstruction of slice {}", und.x_index);
    let diverged = |iteration| ReconError::Divergence {
        context: context.clone(),
        iteration,
    };

    for iter in 0..cfg.iters {
        let (sc, mut grad) = self_consistency_grad(net, &x)?;
        let loss = match cfg.dc_mode {
            DcMode::Strict => {
                for (g, &f) in grad.data.iter_mut().zip(&free) {
                    if !f {
                        *g = 0.0;
                    }
                }
                sc
            }
            DcMode::Soft(beta) => {
                for ((g, &a), (xv, yv)) in grad.data.iter_mut().zip(&acquired).zip(x.data.iter().zip(&y.data)) {
                    *g *= beta;
                    if a {
                        *g += 2.0 * (xv - yv);
                    }
                }
                beta * sc + data_misfit(&x, &y, &acquired)
            }
        };
        if !loss.is_finite() {
            return Err(diverged(iter));
        }
        if iter == 0 {
            trace.initial = loss;
        } else {
            trace.losses.push(loss);
        }
        state.step(&mut x.data, &grad.data, cfg.lr_recon);
        if cfg.dc_mode == DcMode::Strict {
            for ((xv, yv), &a) in x.data.iter_mut().zip(&y.data).zip(&acquired) {
                if a {
                    *xv = *yv;
                }
            }
        }
    }
    let last = objective(net, &x, &y, &acquired, cfg.dc_mode)?;
    if !last.is_finite() {
        return Err(diverged(cfg.iters));
    }
    trace.losses.push(last);

    let mut out = split_complex(&x, und.x_index, Domain::Hybrid)?;
    if cfg.dc_mode == DcMode::Strict {
        restore_acquired(&mut out, und, mask);
    }
    Ok((out, trace))
}

/// Calibrated operator shared read-only by every slice.
#[derive(Debug, Clone)]
pub enum Calibration {
    Linear(SpiritKernelSet),
    Network(SelfConsistencyNet),
}

#[derive(Debug, Clone)]
pub struct ReconOutput {
    /// Root-sum-of-squares magnitude image.
    pub image: RealVolume,
    /// Reconstructed k-space in the input's scale.
    pub kspace: ComplexVolume,
    /// One trace per readout position, in slice order.
    pub traces: Vec<ReconTrace>,
    pub calibration: Calibration,
    pub scale: NormScale,
}

/// Calibrates on the volume's ACS data and reconstructs every slice with `cfg.method`.
///
/// Slices run on the current rayon pool; results do not depend on scheduling.
pub fn reconstruct(vol: &ComplexVolume, mask: &SamplingMask, cfg: &ReconConfig) -> Result<ReconOutput> {
    cfg.validate()?;
    if vol.domain() != Domain::KSpace {
        return Err(ReconError::DomainMismatch {
            expected: Domain::KSpace,
            found: vol.domain(),
        });
    }
    let dims = vol.dims();
    if mask.ny() != dims.ny || mask.nz() != dims.nz {
        return Err(ReconError::DimensionMismatch(format!(
            "mask {}x{} vs volume plane {}x{}",
            mask.ny(),
            mask.nz(),
            dims.ny,
            dims.nz
        )));
    }
    let (calibration, scale) = match cfg.method {
        Method::Spirit | Method::L1Spirit => {
            let (k, s) = spirit_calibrate(vol, mask, cfg)?;
            (Calibration::Linear(k), s)
        }
        Method::Sraki => {
            let net = sraki_calibrate(vol, mask, cfg)?;
            let s = net.scale;
            (Calibration::Network(net), s)
        }
    };
    let normed = vol.scaled(scale.value())?;
    let slices = mask.apply(&normed)?.ifft_x()?.slices()?;

    let results: Vec<Result<(HybridSlice, ReconTrace)>> = slices
        .par_iter()
        .map(|s| match &calibration {
            Calibration::Linear(k) => match cfg.method {
                Method::L1Spirit => l1spirit_recon(
                    s,
                    mask,
                    k,
                    L1Options {
                        outer_iters: cfg.iters,
                        thresh_frac: cfg.thresh_frac,
                        ..L1Options::default()
                    },
                ),
                _ => spirit_cg_recon(s, mask, k, cfg.iters),
            },
            Calibration::Network(net) => sraki_recon_slice(s, mask, &net.params, cfg),
        })
        .collect();

    let mut out_slices = Vec::with_capacity(results.len());
    let mut traces = Vec::with_capacity(results.len());
    for (x, r) in results.into_iter().enumerate() {
        let (s, t) = r.map_err(|e| ReconError::Slice {
            slice: x,
            source: Box::new(e),
        })?;
        out_slices.push(s);
        traces.push(t);
    }
    let hybrid = denormalize(&ComplexVolume::from_slices(&out_slices)?, scale)?;
    let image = rss_combine(&hybrid.ifft_yz()?)?;
    let kspace = hybrid.fft_x()?;
    Ok(ReconOutput {
        image,
        kspace,
        traces,
        calibration,
        scale,
    })
}

/// Loss traces as `slice,iter,loss` rows, iterations counted from 1.
pub fn loss_csv(traces: &[ReconTrace]) -> String {
    let mut s = String::from("slice,iter,loss\n");
    for (x, t) in traces.iter().enumerate() {
        for (i, l) in t.losses.iter().enumerate() {
            s.push_str(&format!("{x},{},{l:e}\n", i + 1));
        }
    }
    s
}

#[cfg(test)]
mod tests;
