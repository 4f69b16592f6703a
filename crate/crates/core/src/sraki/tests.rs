use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::kspace::Dims;
use crate::sampling::gen_poisson_mask;

fn random_tensor(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> Tensor {
    let mut t = Tensor::zeros(c, 1, h, w);
    for v in t.data.iter_mut() {
        *v = rng.random_range(-1.0..1.0);
    }
    t
}

fn random_slice(nc: usize, ny: usize, nz: usize, seed: u64) -> HybridSlice {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..nc * ny * nz)
        .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect();
    HybridSlice::new(nc, ny, nz, 3, Domain::Hybrid, data).unwrap()
}

#[test]
fn method_and_mode_parsing() {
    for m in Method::ALL {
        assert_eq!(m.name().parse::<Method>().unwrap(), m);
    }
    assert!("grappa".parse::<Method>().is_err());
    assert_eq!("strict".parse::<DcMode>().unwrap(), DcMode::Strict);
    assert_eq!("soft(0.5)".parse::<DcMode>().unwrap(), DcMode::Soft(0.5));
    assert_eq!(DcMode::Soft(0.5).to_string(), "soft(0.5)");
    assert!("soft".parse::<DcMode>().is_err());
}

#[test]
fn config_defaults_and_validation() {
    let iters: Vec<usize> = Method::ALL.iter().map(|&m| ReconConfig::new(m).iters).collect();
    assert_eq!(iters, [50, 15, 50]);
    let c = ReconConfig::new(Method::Sraki);
    assert_eq!((c.lr_recon, c.lr_calib, c.calib_iters, c.kernel_size), (0.02, 0.01, 1000, 5));
    assert_eq!(c.thresh_frac, 0.0005);
    assert_eq!(c.dc_mode, DcMode::Strict);
    c.validate().unwrap();
    for bad in [
        ReconConfig { iters: 0, ..c },
        ReconConfig { lr_recon: 0.0, ..c },
        ReconConfig { thresh_frac: -1.0, ..c },
        ReconConfig { dc_mode: DcMode::Soft(0.0), ..c },
        ReconConfig { kernel_size: 4, ..c },
    ] {
        assert!(matches!(bad.validate(), Err(ReconError::Config(_))));
    }
}

#[test]
fn composed_gradient_matches_central_differences() {
    let h = 1e-6;
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let masking = if seed % 2 == 0 { SelfMasking::Parity } else { SelfMasking::FirstLayerCenter };
        let p = net_init(2, seed, masking).unwrap();
        let x = random_tensor(&mut rng, 4, 8, 8);
        let (loss, g) = self_consistency_grad(&p, &x).unwrap();
        assert!((loss - self_consistency_loss(&p, &x).unwrap()).abs() <= 1e-12 * loss);
        let scale = g.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..x.data.len() {
            let (mut a, mut b) = (x.clone(), x.clone());
            a.data[i] += h;
            b.data[i] -= h;
            let fd = (self_consistency_loss(&p, &a).unwrap() - self_consistency_loss(&p, &b).unwrap()) / (2.0 * h);
            let rel = (fd - g.data[i]).abs() / g.data[i].abs().max(1e-2 * scale);
            assert!(rel <= 1e-5, "seed {seed} entry {i}: fd {fd} vs {}", g.data[i]);
        }
    }
}

#[test]
fn full_mask_returns_input() {
    let p = net_init(2, 1, SelfMasking::Parity).unwrap();
    let s = random_slice(2, 12, 10, 2);
    let mask = SamplingMask::full(12, 10, (6, 6)).unwrap();
    let (out, trace) = sraki_recon_slice(&s, &mask, &p, &ReconConfig::new(Method::Sraki)).unwrap();
    assert_eq!(out, s);
    assert_eq!(trace.losses.len(), 50);
}

#[test]
fn strict_mode_keeps_acquired_and_descends() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let p = net_init(2, 4, SelfMasking::Parity).unwrap();
    // A smooth slice that the freshly initialized network does not reproduce.
    let mut s = random_slice(2, 24, 16, 5);
    for (i, v) in s.data.iter_mut().enumerate() {
        let (y, z) = ((i / 16) % 24, i % 16);
        *v = Complex64::new(((y as f64) * 0.3).sin(), ((z as f64) * 0.4).cos()) * rng.random_range(0.5..1.5);
    }
    let mask = gen_poisson_mask(24, 16, 3.0, (8, 6), 9).unwrap();
    let und = mask.apply_slice(&s).unwrap();
    let cfg = ReconConfig {
        lr_recon: 0.05,
        ..ReconConfig::new(Method::Sraki)
    };
    let (out, trace) = sraki_recon_slice(&und, &mask, &p, &cfg).unwrap();
    assert_eq!(trace.losses.len(), cfg.iters);
    assert!(trace.final_loss() < trace.initial, "{trace:?}");
    assert_eq!(out.x_index, 3);
    for (i, (a, b)) in out.data.iter().zip(&und.data).enumerate() {
        if mask.bits()[i % mask.bits().len()] {
            assert_eq!(a, b);
        }
    }
}

#[test]
fn soft_mode_moves_acquired_entries() {
    let p = net_init(1, 2, SelfMasking::Parity).unwrap();
    let s = random_slice(1, 16, 12, 6);
    let mask = gen_poisson_mask(16, 12, 2.0, (6, 6), 3).unwrap();
    let und = mask.apply_slice(&s).unwrap();
    let cfg = ReconConfig {
        dc_mode: DcMode::Soft(1.0),
        lr_recon: 0.01,
        iters: 20,
        ..ReconConfig::new(Method::Sraki)
    };
    let (out, trace) = sraki_recon_slice(&und, &mask, &p, &cfg).unwrap();
    assert!(trace.final_loss() < trace.initial);
    assert!(out.data.iter().zip(&und.data).any(|(a, b)| a != b));
}

#[test]
fn divergence_reports_iteration() {
    let p = net_init(1, 2, SelfMasking::Parity).unwrap();
    let mut s = random_slice(1, 12, 12, 6);
    s.data[0] = Complex64::new(1e300, 0.0);
    let mask = SamplingMask::full(12, 12, (6, 6)).unwrap();
    let err = sraki_recon_slice(&s, &mask, &p, &ReconConfig::new(Method::Sraki)).unwrap_err();
    assert!(matches!(err, ReconError::Divergence { iteration: 0, .. }), "{err}");
}

#[test]
fn rejects_mismatched_inputs() {
    let p = net_init(2, 1, SelfMasking::Parity).unwrap();
    let cfg = ReconConfig::new(Method::Sraki);
    let mask = SamplingMask::full(12, 10, (6, 6)).unwrap();
    assert!(sraki_recon_slice(&random_slice(3, 12, 10, 1), &mask, &p, &cfg).is_err());
    assert!(sraki_recon_slice(&random_slice(2, 10, 10, 1), &mask, &p, &cfg).is_err());
}

fn small_volume(nc: usize, seed: u64) -> ComplexVolume {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = Dims::new(4, 16, 12);
    let data = (0..nc * dims.voxels())
        .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect();
    ComplexVolume::new(nc, dims, Domain::KSpace, data).unwrap()
}

#[test]
fn calibration_is_deterministic_and_checks_acs() {
    let vol = small_volume(2, 1);
    let mask = gen_poisson_mask(16, 12, 2.0, (8, 6), 1).unwrap();
    let cfg = ReconConfig {
        calib_iters: 20,
        ..ReconConfig::new(Method::Sraki)
    };
    let a = sraki_calibrate(&vol, &mask, &cfg).unwrap();
    let b = sraki_calibrate(&vol, &mask, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.calib_losses.len(), 20);
    assert!(a.final_loss.is_finite());

    let tiny = gen_poisson_mask(16, 12, 2.0, (4, 6), 1).unwrap();
    assert!(matches!(sraki_calibrate(&vol, &tiny, &cfg), Err(ReconError::Calibration(_))));
    let image = vol.ifft3().unwrap();
    assert!(matches!(sraki_calibrate(&image, &mask, &cfg), Err(ReconError::DomainMismatch { .. })));
}

#[test]
fn loss_csv_layout() {
    let t = vec![
        ReconTrace {
            initial: 3.0,
            losses: vec![2.0, 1.0],
        },
        ReconTrace {
            initial: 1.0,
            losses: vec![0.5, 0.25],
        },
    ];
    let csv = loss_csv(&t);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "slice,iter,loss");
    assert_eq!(lines.len(), 5);
    assert_eq!(lines[3], "1,1,5e-1");
}
