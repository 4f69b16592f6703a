use std::f64::consts::PI;

use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::io::{load_real_volume, load_volume, save_real_volume, save_volume};
use super::*;

fn random_volume(coils: usize, dims: Dims, domain: Domain, seed: u64) -> ComplexVolume {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..coils * dims.voxels())
        .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect();
    ComplexVolume::new(coils, dims, domain, data).unwrap()
}

fn max_rel_err(a: &[Complex64], b: &[Complex64]) -> f64 {
    let scale = b.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let err = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt();
    err / scale
}

#[test]
fn dc_delta_gives_constant() {
    let dims = Dims::new(4, 1, 1);
    let mut vol = ComplexVolume::zeros(1, dims, Domain::KSpace);
    vol.data_mut()[2] = Complex64::new(1.0, 0.0);
    let h = vol.ifft_x().unwrap();
    assert_eq!(h.domain(), Domain::Hybrid);
    for z in h.data() {
        assert!((z - Complex64::new(0.5, 0.0)).norm() < 1e-15);
    }
    let back = h.fft_x().unwrap();
    for (i, z) in back.data().iter().enumerate() {
        let want = if i == 2 { 1.0 } else { 0.0 };
        assert!((z - Complex64::new(want, 0.0)).norm() < 1e-15);
    }
}

#[test]
fn pure_tone_maps_to_single_sample() {
    // Oracle: direct DFT summation with the zero frequency and zero position at n/2.
    let n = 16;
    let half = n / 2;
    for m in [-3i64, 0, 5] {
        let data: Vec<Complex64> = (0..n)
            .map(|k| Complex64::from_polar(1.0, 2.0 * PI * m as f64 * (k as f64 - half as f64) / n as f64))
            .collect();
        let vol = ComplexVolume::new(1, Dims::new(n, 1, 1), Domain::KSpace, data.clone()).unwrap();
        let h = vol.ifft_x().unwrap();
        for j in 0..n {
            let mut direct = Complex64::new(0.0, 0.0);
            for (k, v) in data.iter().enumerate() {
                let phase = 2.0 * PI * (k as f64 - half as f64) * (j as f64 - half as f64) / n as f64;
                direct += v * Complex64::from_polar(1.0, phase);
            }
            direct /= (n as f64).sqrt();
            assert!((h.data()[j] - direct).norm() < 1e-12);
        }
        // The inverse transform carries exp(+i...), so the tone lands at -m.
        let peak = (half as i64 - m) as usize;
        assert!((h.data()[peak].norm() - (n as f64).sqrt()).abs() < 1e-12);
    }
}

#[test]
fn transforms_are_unitary_and_invertible() {
    let dims = Dims::new(6, 10, 7);
    let k = random_volume(3, dims, Domain::KSpace, 1);
    let h = k.ifft_x().unwrap();
    assert!((h.energy() - k.energy()).abs() < 1e-12 * k.energy());
    assert!(max_rel_err(h.fft_x().unwrap().data(), k.data()) < 1e-12);
    let img = h.ifft_yz().unwrap();
    assert!((img.energy() - k.energy()).abs() < 1e-12 * k.energy());
    assert!(max_rel_err(img.fft_yz().unwrap().data(), h.data()) < 1e-12);
    assert!(max_rel_err(k.ifft3().unwrap().fft3().unwrap().data(), k.data()) < 1e-12);
}

#[test]
fn slice_transforms_agree_with_volume() {
    let dims = Dims::new(3, 8, 6);
    let h = random_volume(2, dims, Domain::Hybrid, 2);
    let img = h.ifft_yz().unwrap();
    for x in 0..3 {
        let s = h.slice(x).unwrap().ifft2_yz().unwrap();
        assert_eq!(s, img.slice(x).unwrap());
        let back = s.fft2_yz().unwrap();
        assert!(max_rel_err(&back.data, &h.slice(x).unwrap().data) < 1e-12);
    }
}

#[test]
fn slice_delta_gives_constant_image() {
    let (ny, nz) = (8, 6);
    let mut data = vec![Complex64::new(0.0, 0.0); ny * nz];
    data[(ny / 2) * nz + nz / 2] = Complex64::new(1.0, 0.0);
    let s = HybridSlice::new(1, ny, nz, 0, Domain::Hybrid, data).unwrap();
    let img = s.ifft2_yz().unwrap();
    let want = 1.0 / ((ny * nz) as f64).sqrt();
    for z in &img.data {
        assert!((z - Complex64::new(want, 0.0)).norm() < 1e-15);
    }
}

#[test]
fn domain_state_machine() {
    let dims = Dims::new(2, 4, 4);
    let k = random_volume(1, dims, Domain::KSpace, 3);
    assert!(matches!(
        k.fft_x(),
        Err(ReconError::DomainMismatch {
            expected: Domain::Hybrid,
            found: Domain::KSpace
        })
    ));
    assert!(k.ifft_yz().is_err());
    assert!(k.fft_yz().is_err());
    assert!(k.ifft_x().unwrap().ifft_x().is_err());
    assert!(rss_combine(&k).is_err());
    let s = k.slice(0).unwrap();
    assert!(s.ifft2_yz().is_err());
    assert!(s.rss().is_err());
}

#[test]
fn construction_validates() {
    let dims = Dims::new(2, 2, 2);
    assert!(matches!(
        ComplexVolume::new(1, dims, Domain::KSpace, vec![Complex64::new(0.0, 0.0); 7]),
        Err(ReconError::Shape(_))
    ));
    let mut data = vec![Complex64::new(0.0, 0.0); 8];
    data[3] = Complex64::new(f64::NAN, 0.0);
    assert!(ComplexVolume::new(1, dims, Domain::KSpace, data).is_err());
    assert!(NormScale::new(0.0).is_err());
    assert!(NormScale::new(f64::INFINITY).is_err());
    assert!("64x64x32".parse::<Dims>().unwrap() == Dims::new(64, 64, 32));
    assert!("64x64".parse::<Dims>().is_err());
    assert!("0x4x4".parse::<Dims>().is_err());
}

#[test]
fn normalization() {
    let dims = Dims::new(3, 4, 5);
    let unit = ComplexVolume::new(
        1,
        dims,
        Domain::KSpace,
        vec![Complex64::from_polar(1.0, 0.3); dims.voxels()],
    )
    .unwrap();
    let (_, s) = normalize_power(&unit, None).unwrap();
    assert!((s.value() - 1.0).abs() < 1e-15);

    let c = ComplexVolume::new(1, dims, Domain::KSpace, vec![Complex64::new(0.0, 2.5); dims.voxels()]).unwrap();
    let (_, s) = normalize_power(&c, None).unwrap();
    assert!((s.value() - 0.4).abs() < 1e-15);

    let v = random_volume(2, Dims::new(4, 16, 8), Domain::KSpace, 4);
    let (n, s) = normalize_power(&v, None).unwrap();
    let mean: f64 = n.data().iter().map(|z| z.norm_sqr()).sum::<f64>() / n.data().len() as f64;
    assert!((mean - 1.0).abs() < 1e-12);
    let back = denormalize(&n, s).unwrap();
    assert!(max_rel_err(back.data(), v.data()) < 1e-12);

    let mask = crate::sampling::gen_poisson_mask(16, 8, 2.0, (4, 4), 1).unwrap();
    let und = mask.apply(&v).unwrap();
    let (n, _) = normalize_power(&und, Some(&mask)).unwrap();
    let mut sum = 0.0;
    let mut count = 0;
    for c in 0..2 {
        for x in 0..4 {
            for y in 0..16 {
                for z in 0..8 {
                    if mask.is_sampled(y, z) {
                        sum += n.get(c, x, y, z).norm_sqr();
                        count += 1;
                    }
                }
            }
        }
    }
    assert!((sum / count as f64 - 1.0).abs() < 1e-12);

    let zero = ComplexVolume::zeros(1, dims, Domain::KSpace);
    assert!(matches!(normalize_power(&zero, None), Err(ReconError::Degenerate(_))));
}

#[test]
fn rss_examples() {
    let dims = Dims::new(1, 1, 2);
    let z = Complex64::new(3.0, -4.0);
    let one = ComplexVolume::new(1, dims, Domain::Image, vec![z, -z]).unwrap();
    assert_eq!(rss_combine(&one).unwrap().data, vec![5.0, 5.0]);
    let two = ComplexVolume::new(2, dims, Domain::Image, vec![z, z, z, z]).unwrap();
    for v in rss_combine(&two).unwrap().data {
        assert!((v - 5.0 * 2f64.sqrt()).abs() < 1e-12);
    }
    let r = random_volume(3, Dims::new(2, 3, 4), Domain::Image, 5);
    let out = rss_combine(&r).unwrap();
    for x in 0..2 {
        for y in 0..3 {
            for zz in 0..4 {
                let want = (0..3).map(|c| r.get(c, x, y, zz).norm_sqr()).sum::<f64>().sqrt();
                assert!((out.get(x, y, zz) - want).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn real_embedding() {
    let s = HybridSlice::new(1, 1, 1, 0, Domain::Hybrid, vec![Complex64::new(3.0, 4.0)]).unwrap();
    assert_eq!(embed_real(&s).data, vec![3.0, 4.0]);
    let v = random_volume(3, Dims::new(1, 5, 4), Domain::Hybrid, 6);
    let s = v.slice(0).unwrap();
    let t = embed_real(&s);
    assert_eq!(t.channels, 6);
    assert_eq!(split_complex(&t, 0, Domain::Hybrid).unwrap(), s);
    let imag = s.with_data(Domain::Hybrid, s.data.iter().map(|z| Complex64::new(0.0, z.im)).collect());
    let t = embed_real(&imag);
    assert!(t.data[..3 * 20].iter().all(|&x| x == 0.0));
    let odd = crate::tensor::Tensor::zeros(3, 1, 2, 2);
    assert!(matches!(split_complex(&odd, 0, Domain::Hybrid), Err(ReconError::Shape(_))));
}

#[test]
fn slices_roundtrip() {
    let v = random_volume(2, Dims::new(5, 4, 3), Domain::Hybrid, 7);
    let mut s = v.slices().unwrap();
    s.reverse();
    assert_eq!(ComplexVolume::from_slices(&s).unwrap(), v);
    s[0].x_index = s[1].x_index;
    assert!(ComplexVolume::from_slices(&s).is_err());
    assert!(v.slice(5).is_err());
}

#[test]
fn file_roundtrip_is_bit_exact_for_single_precision_values() {
    let dir = tempfile::tempdir().unwrap();
    let v = random_volume(2, Dims::new(3, 4, 5), Domain::Hybrid, 8);
    // On disk values are single precision; round the input so the comparison is exact.
    let v = v.map(|z| Complex64::new(z.re as f32 as f64, z.im as f32 as f64)).unwrap();
    let (hdr, body) = save_volume(&dir.path().join("vol"), &v, 0.123).unwrap();
    assert!(hdr.ends_with("vol.hdr") && body.ends_with("vol.cplx"));
    let (back, header) = load_volume(&hdr).unwrap();
    assert_eq!(back, v);
    assert_eq!(header.scale, 0.123);
    assert_eq!(header.domain, Domain::Hybrid);

    let text = std::fs::read_to_string(&hdr).unwrap();
    for key in ["coils=2", "nx=3", "ny=4", "nz=5", "domain=hybrid", "layout=c,x,y,z;z-fastest", "scale="] {
        assert!(text.contains(key), "{key} missing from header");
    }

    let bytes = std::fs::read(&body).unwrap();
    std::fs::write(&body, &bytes[..bytes.len() - 4]).unwrap();
    assert!(matches!(load_volume(&hdr), Err(ReconError::Format(_))));

    let r = RealVolume::new(Dims::new(2, 2, 2), (0..8).map(|i| i as f64 * 0.5).collect()).unwrap();
    let (rh, _) = save_real_volume(&dir.path().join("img"), &r).unwrap();
    assert_eq!(load_real_volume(&rh).unwrap(), r);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn prop_unitary_roundtrip(nx in 1usize..7, ny in 1usize..9, nz in 1usize..9, coils in 1usize..3, seed in any::<u64>()) {
        let v = random_volume(coils, Dims::new(nx, ny, nz), Domain::KSpace, seed);
        let img = v.ifft3().unwrap();
        prop_assert!((img.energy() - v.energy()).abs() <= 1e-12 * v.energy());
        prop_assert!(max_rel_err(img.fft3().unwrap().data(), v.data()) < 1e-12);
    }

    #[test]
    fn prop_normalize_then_rescale_restores(seed in any::<u64>(), gain in 1e-3f64..1e3) {
        let v = random_volume(2, Dims::new(3, 4, 4), Domain::KSpace, seed).scaled(gain).unwrap();
        let (n, s) = normalize_power(&v, None).unwrap();
        let back = n.scaled(1.0 / s.value()).unwrap();
        prop_assert!(max_rel_err(back.data(), v.data()) < 1e-12);
    }

    #[test]
    fn prop_embed_split_identity(seed in any::<u64>(), coils in 1usize..4) {
        let s = random_volume(coils, Dims::new(1, 3, 5), Domain::Hybrid, seed).slice(0).unwrap();
        prop_assert_eq!(split_complex(&embed_real(&s), 0, Domain::Hybrid).unwrap(), s);
    }
}
