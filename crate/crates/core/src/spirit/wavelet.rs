//! Orthonormal 2D Daubechies-4 (two vanishing moments) wavelet transform with periodic
//! boundary extension, and complex soft thresholding of its detail bands.

use std::f64::consts::SQRT_2;

use num_complex::Complex64;

use crate::error::{ReconError, Result};

pub const DEFAULT_LEVELS: usize = 3;

fn lowpass() -> [f64; 4] {
    let s3 = 3f64.sqrt();
    let d = 4.0 * SQRT_2;
    [(1.0 + s3) / d, (3.0 + s3) / d, (3.0 - s3) / d, (1.0 - s3) / d]
}

fn highpass(h: &[f64; 4]) -> [f64; 4] {
    [h[3], -h[2], h[1], -h[0]]
}

fn analyze(line: &mut [Complex64], tmp: &mut [Complex64], h: &[f64; 4], g: &[f64; 4]) {
    let n = line.len();
    let half = n / 2;
    for k in 0..half {
        let mut a = Complex64::new(0.0, 0.0);
        let mut d = Complex64::new(0.0, 0.0);
        for m in 0..4 {
            let v = line[(2 * k + m) % n];
            a += v * h[m];
            d += v * g[m];
        }
        tmp[k] = a;
        tmp[half + k] = d;
    }
    line.copy_from_slice(&tmp[..n]);
}

fn synthesize(line: &mut [Complex64], tmp: &mut [Complex64], h: &[f64; 4], g: &[f64; 4]) {
    let n = line.len();
    let half = n / 2;
    for v in tmp[..n].iter_mut() {
        *v = Complex64::new(0.0, 0.0);
    }
    for k in 0..half {
        let (a, d) = (line[k], line[half + k]);
        for m in 0..4 {
            tmp[(2 * k + m) % n] += a * h[m] + d * g[m];
        }
    }
    line.copy_from_slice(&tmp[..n]);
}

/// Multi-level decomposition stored in place (Mallat layout) on a grid padded to a
/// multiple of `2^levels`.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletCoeffs {
    pub ny: usize,
    pub nz: usize,
    pub padded: (usize, usize),
    pub levels: usize,
    pub data: Vec<Complex64>,
}

impl WaveletCoeffs {
    /// Extent of the coarsest approximation band.
    pub fn approx_extent(&self) -> (usize, usize) {
        (self.padded.0 >> self.levels, self.padded.1 >> self.levels)
    }

    pub fn is_detail(&self, y: usize, z: usize) -> bool {
        let (ay, az) = self.approx_extent();
        y >= ay || z >= az
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    pub fn max_abs_detail(&self) -> f64 {
        let pz = self.padded.1;
        self.data
            .iter()
            .enumerate()
            .filter(|(i, _)| self.is_detail(i / pz, i % pz))
            .map(|(_, c)| c.norm())
            .fold(0.0, f64::max)
    }
}

fn padded_len(n: usize, levels: usize) -> usize {
    let block = 1usize << levels;
    n.div_ceil(block) * block
}

/// Half-sample symmetric index into `0..n` for a position beyond the end.
fn mirror(i: usize, n: usize) -> usize {
    let period = 2 * n;
    let r = i % period;
    if r < n {
        r
    } else {
        period - 1 - r
    }
}

/// Forward transform of a `ny × nz` plane (row-major, z fastest).
pub fn dwt2(plane: &[Complex64], ny: usize, nz: usize, levels: usize) -> Result<WaveletCoeffs> {
    if plane.len() != ny * nz {
        return Err(ReconError::Shape(format!(
            "plane {ny}x{nz} needs {} samples, got {}",
            ny * nz,
            plane.len()
        )));
    }
    let (py, pz) = (padded_len(ny, levels), padded_len(nz, levels));
    let mut data = vec![Complex64::new(0.0, 0.0); py * pz];
    for y in 0..py {
        for z in 0..pz {
            data[y * pz + z] = plane[mirror(y, ny) * nz + mirror(z, nz)];
        }
    }
    let h = lowpass();
    let g = highpass(&h);
    let mut tmp = vec![Complex64::new(0.0, 0.0); py.max(pz)];
    let mut col = vec![Complex64::new(0.0, 0.0); py];
    let (mut hy, mut hz) = (py, pz);
    for _ in 0..levels {
        for y in 0..hy {
            analyze(&mut data[y * pz..y * pz + hz], &mut tmp, &h, &g);
        }
        for z in 0..hz {
            for y in 0..hy {
                col[y] = data[y * pz + z];
            }
            analyze(&mut col[..hy], &mut tmp, &h, &g);
            for y in 0..hy {
                data[y * pz + z] = col[y];
            }
        }
        hy /= 2;
        hz /= 2;
    }
    Ok(WaveletCoeffs {
        ny,
        nz,
        padded: (py, pz),
        levels,
        data,
    })
}

/// Inverse of [`dwt2`]; crops any padding.
pub fn idwt2(coeffs: &WaveletCoeffs) -> Vec<Complex64> {
    let (py, pz) = coeffs.padded;
    let mut data = coeffs.data.clone();
    let h = lowpass();
    let g = highpass(&h);
    let mut tmp = vec![Complex64::new(0.0, 0.0); py.max(pz)];
    let mut col = vec![Complex64::new(0.0, 0.0); py];
    for level in (0..coeffs.levels).rev() {
        let (hy, hz) = (py >> level, pz >> level);
        for z in 0..hz {
            for y in 0..hy {
                col[y] = data[y * pz + z];
            }
            synthesize(&mut col[..hy], &mut tmp, &h, &g);
            for y in 0..hy {
                data[y * pz + z] = col[y];
            }
        }
        for y in 0..hy {
            synthesize(&mut data[y * pz..y * pz + hz], &mut tmp, &h, &g);
        }
    }
    let mut out = Vec::with_capacity(coeffs.ny * coeffs.nz);
    for y in 0..coeffs.ny {
        out.extend_from_slice(&data[y * pz..y * pz + coeffs.nz]);
    }
    out
}

/// Shrinks the magnitude of every detail coefficient by `lambda`, keeping its phase.
/// The approximation band is left untouched.
pub fn soft_threshold(coeffs: &WaveletCoeffs, lambda: f64) -> WaveletCoeffs {
    let mut out = coeffs.clone();
    if lambda <= 0.0 {
        return out;
    }
    let pz = coeffs.padded.1;
    for (i, c) in out.data.iter_mut().enumerate() {
        if !coeffs.is_detail(i / pz, i % pz) {
            continue;
        }
        let mag = c.norm();
        *c = if mag > lambda {
            *c * ((mag - lambda) / mag)
        } else {
            Complex64::new(0.0, 0.0)
        };
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_plane(n: usize, seed: u64) -> Vec<Complex64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect()
    }

    #[test]
    fn filters_are_orthonormal() {
        let h = lowpass();
        let g = highpass(&h);
        let dot = |a: &[f64; 4], b: &[f64; 4]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        assert!((dot(&h, &h) - 1.0).abs() < 1e-15);
        assert!(dot(&h, &g).abs() < 1e-15);
        // Two vanishing moments.
        assert!(g.iter().sum::<f64>().abs() < 1e-15);
        assert!(g.iter().enumerate().map(|(m, v)| m as f64 * v).sum::<f64>().abs() < 1e-15);
    }

    #[test]
    fn perfect_reconstruction_and_energy() {
        let x = random_plane(64 * 32, 1);
        let c = dwt2(&x, 64, 32, 3).unwrap();
        assert_eq!(c.data.len(), x.len());
        let back = idwt2(&c);
        let err = x.iter().zip(&back).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-10, "max error {err}");
        let ex: f64 = x.iter().map(|v| v.norm_sqr()).sum();
        let ec: f64 = c.data.iter().map(|v| v.norm_sqr()).sum();
        assert!((ex - ec).abs() < 1e-10 * ex);
    }

    #[test]
    fn padded_dims_roundtrip() {
        let x = random_plane(27 * 13, 2);
        let c = dwt2(&x, 27, 13, 3).unwrap();
        assert_eq!(c.padded, (32, 16));
        let back = idwt2(&c);
        assert_eq!(back.len(), x.len());
        let err = x.iter().zip(&back).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-10, "max error {err}");
    }

    #[test]
    fn constant_plane_has_no_detail() {
        let x = vec![Complex64::new(2.5, -1.0); 32 * 16];
        let c = dwt2(&x, 32, 16, 3).unwrap();
        assert!(c.max_abs_detail() < 1e-12);
    }

    #[test]
    fn linear_ramp_has_no_detail() {
        // Periodic wrap breaks the ramp at the border; check interior detail rows only.
        let h = lowpass();
        let g = highpass(&h);
        let mut line: Vec<Complex64> = (0..16).map(|i| Complex64::new(i as f64, 0.0)).collect();
        let mut tmp = vec![Complex64::new(0.0, 0.0); 16];
        analyze(&mut line, &mut tmp, &h, &g);
        for d in &line[8..15] {
            assert!(d.norm() < 1e-12);
        }
    }

    #[test]
    fn soft_threshold_rules() {
        let x = random_plane(32 * 16, 3);
        let c = dwt2(&x, 32, 16, 3).unwrap();
        assert_eq!(soft_threshold(&c, 0.0), c);

        let big = soft_threshold(&c, c.max_abs_detail());
        assert_eq!(big.max_abs_detail(), 0.0);
        let (ay, az) = c.approx_extent();
        for y in 0..ay {
            for z in 0..az {
                assert_eq!(big.data[y * 16 + z], c.data[y * 16 + z]);
            }
        }

        let mut single = c.clone();
        single.data[16 * 16] = Complex64::new(3.0, 4.0);
        let t = soft_threshold(&single, 1.0);
        let v = t.data[16 * 16];
        assert!((v.norm() - 4.0).abs() < 1e-14);
        assert!((v.arg() - Complex64::new(3.0, 4.0).arg()).abs() < 1e-14);
    }
}
