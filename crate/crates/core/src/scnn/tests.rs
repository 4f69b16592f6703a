use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::conv::ConvShape;
use super::*;
use crate::error::ReconError;
use crate::tensor::Tensor;

fn random_tensor(rng: &mut ChaCha8Rng, c: usize, n: usize, h: usize, w: usize) -> Tensor {
    let data = (0..c * n * h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::from_vec(c, n, h, w, data).unwrap()
}

fn loss_of(params: &NetParams, x: &Tensor, t: &Tensor) -> f64 {
    mse_with_grad(&params.forward(x).unwrap(), t).unwrap().0
}

/// Naive reference forward pass: nested-loop convolutions, ReLU between layers.
fn naive_forward(params: &NetParams, x: &Tensor) -> Tensor {
    let mut act = x.clone();
    for (l, layer) in params.layers().iter().enumerate() {
        let s: ConvShape = layer.shape();
        let w = params.layer_weights(l);
        let (ph, pw) = ((s.kh / 2) as isize, (s.kw / 2) as isize);
        let mut y = Tensor::zeros(s.out_channels, act.batch, act.height, act.width);
        for o in 0..s.out_channels {
            for n in 0..act.batch {
                for yy in 0..act.height as isize {
                    for xx in 0..act.width as isize {
                        let mut acc = 0.0;
                        for i in 0..s.in_channels {
                            for ky in 0..s.kh as isize {
                                for kx in 0..s.kw as isize {
                                    let (sy, sx) = (yy + ky - ph, xx + kx - pw);
                                    if sy < 0 || sx < 0 || sy >= act.height as isize || sx >= act.width as isize {
                                        continue;
                                    }
                                    let wi = ((o * s.in_channels + i) * s.kh + ky as usize) * s.kw + kx as usize;
                                    acc += w[wi] * act.data[act.index(i, n, sy as usize, sx as usize)];
                                }
                            }
                        }
                        let idx = y.index(o, n, yy as usize, xx as usize);
                        y.data[idx] = if layer.activation == Activation::Relu { acc.max(0.0) } else { acc };
                    }
                }
            }
        }
        act = y;
    }
    act
}

#[test]
fn architecture_for_fifteen_coils() {
    let p = net_init(15, 1, SelfMasking::FirstLayerCenter).unwrap();
    let chans: Vec<(usize, usize)> = p.layers().iter().map(|l| (l.in_channels, l.out_channels)).collect();
    assert_eq!(chans, vec![(30, 16), (16, 8), (8, 16), (16, 30)]);
    let kernels: Vec<(usize, usize)> = p.layers().iter().map(|l| l.kernel).collect();
    assert_eq!(kernels, vec![(5, 5), (3, 3), (3, 3), (5, 5)]);
    let acts: Vec<Activation> = p.layers().iter().map(|l| l.activation).collect();
    assert_eq!(
        acts,
        vec![Activation::Relu, Activation::Relu, Activation::Relu, Activation::Linear]
    );
    assert_eq!(p.out_channels(), 30);
}

#[test]
fn init_masks_first_layer_center_and_is_deterministic() {
    let p = net_init(2, 9, SelfMasking::FirstLayerCenter).unwrap();
    let w0 = p.layer_weights(0);
    for pair in 0..4 * 16 {
        assert_eq!(w0[pair * 25 + 12], 0.0);
        assert_ne!(w0[pair * 25 + 11], 0.0);
    }
    assert_eq!(p, net_init(2, 9, SelfMasking::FirstLayerCenter).unwrap());
    assert_ne!(p, net_init(2, 10, SelfMasking::FirstLayerCenter).unwrap());
    // Glorot bound of the first layer: sqrt(6 / (4·25 + 16·25)).
    let b = (6.0f64 / 500.0).sqrt();
    assert!(w0.iter().all(|w| w.abs() <= b));
    assert!(net_init(0, 1, SelfMasking::Parity).is_err());
}

#[test]
fn zero_is_a_fixed_point() {
    let p = net_init(3, 2, SelfMasking::FirstLayerCenter).unwrap();
    let y = p.forward(&Tensor::zeros(6, 2, 7, 5)).unwrap();
    assert!(y.data.iter().all(|&v| v == 0.0));
}

#[test]
fn forward_matches_naive_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for masking in [SelfMasking::FirstLayerCenter, SelfMasking::Parity] {
        let p = net_init(2, 4, masking).unwrap();
        let x = random_tensor(&mut rng, 4, 2, 9, 7);
        let y = p.forward(&x).unwrap();
        let oracle = naive_forward(&p, &x);
        assert_eq!(y.channels, 4);
        for (a, b) in y.data.iter().zip(&oracle.data) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }
}

#[test]
fn rejects_wrong_channel_count() {
    let p = net_init(2, 1, SelfMasking::Parity).unwrap();
    assert!(matches!(p.forward(&Tensor::zeros(3, 1, 4, 4)), Err(ReconError::Shape(_))));
}

/// Entrywise relative error, with the denominator floored at 1% of the largest gradient
/// entry: a central difference of an O(1) loss carries ~1e-10 absolute rounding error,
/// which would otherwise dominate near-zero entries.
fn max_rel(fd: &[f64], g: &[f64]) -> f64 {
    let scale = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    fd.iter()
        .zip(g)
        .map(|(a, b)| (a - b).abs() / b.abs().max(1e-2 * scale))
        .fold(0.0, f64::max)
}

#[test]
fn gradients_match_central_differences() {
    let h = 1e-6;
    for seed in 0..10u64 {
        let masking = if seed % 2 == 0 { SelfMasking::FirstLayerCenter } else { SelfMasking::Parity };
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let p = net_init(2, seed, masking).unwrap();
        let x = random_tensor(&mut rng, 4, 1, 8, 8);
        // Target near the output keeps the loss small relative to its gradient, which
        // keeps cancellation in the difference quotient well below the tolerance.
        let mut t = p.forward(&x).unwrap();
        for v in t.data.iter_mut() {
            *v += 0.1 * rng.random_range(-1.0..1.0);
        }
        let (_, gw, gx) = backprop(&p, &x, &t).unwrap();

        let mut allowed = vec![1.0; gw.len()];
        p.zero_masked(&mut allowed);
        // Every weight on the first seed, a random subset afterwards.
        let picks: Vec<usize> = if seed == 0 {
            (0..gw.len()).collect()
        } else {
            (0..300).map(|_| rng.random_range(0..gw.len())).collect()
        };
        let mut fd = Vec::new();
        let mut an = Vec::new();
        for &i in &picks {
            if allowed[i] == 0.0 {
                assert_eq!(gw[i], 0.0);
                continue;
            }
            let mut w = p.weights().to_vec();
            w[i] += h;
            let lp = loss_of(&NetParams::from_parts(p.layers().to_vec(), w.clone()).unwrap(), &x, &t);
            w[i] -= 2.0 * h;
            let lm = loss_of(&NetParams::from_parts(p.layers().to_vec(), w).unwrap(), &x, &t);
            fd.push((lp - lm) / (2.0 * h));
            an.push(gw[i]);
        }
        assert!(max_rel(&fd, &an) <= 1e-5, "seed {seed}: params {}", max_rel(&fd, &an));

        let mut fdx = Vec::new();
        for i in 0..x.data.len() {
            let mut xp = x.clone();
            xp.data[i] += h;
            let lp = loss_of(&p, &xp, &t);
            xp.data[i] -= 2.0 * h;
            let lm = loss_of(&p, &xp, &t);
            fdx.push((lp - lm) / (2.0 * h));
        }
        assert!(max_rel(&fdx, &gx.data) <= 1e-5, "seed {seed}: input {}", max_rel(&fdx, &gx.data));
    }
}

#[test]
fn matching_target_has_zero_loss_and_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let p = net_init(2, 5, SelfMasking::FirstLayerCenter).unwrap();
    let x = random_tensor(&mut rng, 4, 1, 6, 6);
    let t = p.forward(&x).unwrap();
    let (loss, gw, gx) = backprop(&p, &x, &t).unwrap();
    assert_eq!(loss, 0.0);
    assert!(gw.iter().all(|&g| g == 0.0));
    assert!(gx.data.iter().all(|&g| g == 0.0));
}

#[test]
fn masked_taps_survive_adam() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for masking in [SelfMasking::FirstLayerCenter, SelfMasking::Parity] {
        let mut p = net_init(2, 6, masking).unwrap();
        let mut state = AdamState::new(p.weights().len());
        for _ in 0..100 {
            let g: Vec<f64> = (0..p.weights().len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            p.adam_step(&mut state, &g, 0.05);
        }
        let mut masked = p.weights().to_vec();
        p.zero_masked(&mut masked);
        assert_eq!(masked, p.weights());
        assert_eq!(p.layer_weights(0)[12], 0.0);
        assert!(state.v.iter().all(|&v| v >= 0.0));
        assert_eq!(state.t, 100);
    }
}

/// Largest change of the output at a probed location over perturbations of every
/// channel of the input at that same location.
fn self_dependence(p: &NetParams, x: &Tensor, rng: &mut ChaCha8Rng, probes: usize) -> f64 {
    let base = p.forward(x).unwrap();
    let mut worst = 0.0f64;
    for _ in 0..probes {
        let (yy, xx) = (rng.random_range(0..x.height), rng.random_range(0..x.width));
        let mut xp = x.clone();
        for c in 0..x.channels {
            let i = xp.index(c, 0, yy, xx);
            xp.data[i] += rng.random_range(-5.0..5.0);
        }
        let out = p.forward(&xp).unwrap();
        for c in 0..out.channels {
            let i = out.index(c, 0, yy, xx);
            worst = worst.max((out.data[i] - base.data[i]).abs());
        }
    }
    worst
}

#[test]
fn parity_masking_excludes_own_location_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let p = net_init(2, 7, SelfMasking::Parity).unwrap();
    let x = random_tensor(&mut rng, 4, 1, 12, 10);
    assert_eq!(self_dependence(&p, &x, &mut rng, 100), 0.0);
}

#[test]
fn center_masking_only_blocks_the_direct_path() {
    // Paths that leave the location and come back through deeper layers remain.
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let p = net_init(2, 8, SelfMasking::FirstLayerCenter).unwrap();
    let x = random_tensor(&mut rng, 4, 1, 12, 10);
    assert!(self_dependence(&p, &x, &mut rng, 20) > 0.0);
    // A single masked layer on its own is exactly self-independent.
    let first = NetParams::from_parts(vec![p.layers()[0]], p.layer_weights(0).to_vec()).unwrap();
    assert_eq!(self_dependence(&first, &x, &mut rng, 100), 0.0);
}

#[test]
fn training_reduces_loss_and_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let patches = random_tensor(&mut rng, 4, 3, 10, 8);
    let cfg = TrainConfig { lr: 0.01, iters: 60 };
    let a = train_self_consistency(net_init(2, 1, SelfMasking::Parity).unwrap(), &patches, cfg).unwrap();
    let b = train_self_consistency(net_init(2, 1, SelfMasking::Parity).unwrap(), &patches, cfg).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.losses, b.losses);
    assert_eq!(a.losses.len(), 60);
    assert!(a.final_loss < a.losses[0]);
    let empty = Tensor::zeros(4, 0, 10, 8);
    assert!(train_self_consistency(net_init(2, 1, SelfMasking::Parity).unwrap(), &empty, cfg).is_err());
}

#[test]
fn diverging_training_reports_iteration() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut patches = random_tensor(&mut rng, 4, 1, 6, 6);
    for v in patches.data.iter_mut() {
        *v *= 1e200;
    }
    let cfg = TrainConfig { lr: 1e3, iters: 20 };
    let err = train_self_consistency(net_init(2, 1, SelfMasking::Parity).unwrap(), &patches, cfg).unwrap_err();
    assert!(matches!(err, ReconError::Divergence { .. }), "{err:?}");
}

#[test]
fn network_file_roundtrip() {
    let p = net_init(3, 11, SelfMasking::Parity).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("n.net");
    io::save(&path, &p).unwrap();
    assert_eq!(io::load(&path).unwrap(), p);
    let mut bytes = io::encode(&p);
    bytes[0] = b'X';
    assert!(matches!(io::decode(&bytes), Err(ReconError::Format(_))));
    let bytes = io::encode(&p);
    assert!(io::decode(&bytes[..bytes.len() - 1]).is_err());
}

#[test]
fn masking_names_roundtrip() {
    for m in [SelfMasking::Parity, SelfMasking::FirstLayerCenter] {
        assert_eq!(m.to_string().parse::<SelfMasking>().unwrap(), m);
    }
    assert!("none".parse::<SelfMasking>().is_err());
}
