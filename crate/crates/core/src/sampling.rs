//! Retrospective undersampling in the (ky, kz) plane: Poisson-disc masks with a fully
//! sampled autocalibration (ACS) block, mask application and ACS extraction.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{ReconError, Result};
use crate::kspace::io::parse_key_values;
use crate::kspace::{ComplexVolume, Domain, HybridSlice};

/// Relative tolerance on the achieved acceleration rate.
pub const RATE_TOLERANCE: f64 = 0.02;

/// Bisection steps used to tune the hard-core radius.
pub const RADIUS_BISECTION_STEPS: usize = 40;

#[derive(Debug, Clone, PartialEq)]
pub struct SamplingMask {
    ny: usize,
    nz: usize,
    bits: Vec<bool>,
    acs: (usize, usize),
    target_rate: f64,
    achieved_rate: f64,
    r_min: f64,
    seed: u64,
}

/// Top-left corner of a `w`-wide block centered on index `n / 2`.
fn centered_origin(n: usize, w: usize) -> usize {
    n / 2 - w / 2
}

impl SamplingMask {
    /// Builds a mask from explicit bits. The ACS block must be fully sampled.
    pub fn from_bits(
        ny: usize,
        nz: usize,
        bits: Vec<bool>,
        acs: (usize, usize),
        target_rate: f64,
        seed: u64,
    ) -> Result<Self> {
        if bits.len() != ny * nz {
            return Err(ReconError::Shape(format!(
                "mask {ny}x{nz} needs {} bits, got {}",
                ny * nz,
                bits.len()
            )));
        }
        if acs.0 > ny || acs.1 > nz {
            return Err(ReconError::Config(format!(
                "ACS {}x{} does not fit in {ny}x{nz}",
                acs.0, acs.1
            )));
        }
        let count = bits.iter().filter(|&&b| b).count();
        if count == 0 {
            return Err(ReconError::Config("mask samples nothing".into()));
        }
        // Distinct grid points are always at least one voxel apart.
        let mask = SamplingMask {
            ny,
            nz,
            bits,
            acs,
            target_rate,
            achieved_rate: (ny * nz) as f64 / count as f64,
            r_min: 1.0,
            seed,
        };
        if mask.acs_indices().any(|i| !mask.bits[i]) {
            return Err(ReconError::Config("ACS block is not fully sampled".into()));
        }
        Ok(mask)
    }

    /// Every location sampled.
    pub fn full(ny: usize, nz: usize, acs: (usize, usize)) -> Result<Self> {
        Self::from_bits(ny, nz, vec![true; ny * nz], acs, 1.0, 0)
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn nz(&self) -> usize {
        self.nz
    }

    /// Row-major (ky slowest) sampling pattern.
    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn is_sampled(&self, y: usize, z: usize) -> bool {
        self.bits[y * self.nz + z]
    }

    pub fn acs(&self) -> (usize, usize) {
        self.acs
    }

    pub fn acs_origin(&self) -> (usize, usize) {
        (
            centered_origin(self.ny, self.acs.0),
            centered_origin(self.nz, self.acs.1),
        )
    }

    pub fn in_acs(&self, y: usize, z: usize) -> bool {
        let (y0, z0) = self.acs_origin();
        y >= y0 && y < y0 + self.acs.0 && z >= z0 && z < z0 + self.acs.1
    }

    fn acs_indices(&self) -> impl Iterator<Item = usize> + '_ {
        let (y0, z0) = self.acs_origin();
        (y0..y0 + self.acs.0).flat_map(move |y| (z0..z0 + self.acs.1).map(move |z| y * self.nz + z))
    }

    pub fn target_rate(&self) -> f64 {
        self.target_rate
    }

    pub fn achieved_rate(&self) -> f64 {
        self.achieved_rate
    }

    /// Hard-core radius: no two sampled locations outside the ACS are closer than this.
    pub fn r_min(&self) -> f64 {
        self.r_min
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn sampled_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_full(&self) -> bool {
        self.bits.iter().all(|&b| b)
    }

    /// Exhaustive O(n²) scan of pairwise distances between non-ACS samples.
    pub fn min_non_acs_distance(&self) -> Option<f64> {
        let pts: Vec<(i64, i64)> = (0..self.ny)
            .flat_map(|y| (0..self.nz).map(move |z| (y, z)))
            .filter(|&(y, z)| self.is_sampled(y, z) && !self.in_acs(y, z))
            .map(|(y, z)| (y as i64, z as i64))
            .collect();
        let mut best: Option<i64> = None;
        for (i, a) in pts.iter().enumerate() {
            for b in &pts[i + 1..] {
                let d = (a.0 - b.0).pow(2) + (a.1 - b.1).pow(2);
                best = Some(best.map_or(d, |m| m.min(d)));
            }
        }
        best.map(|d| (d as f64).sqrt())
    }

    fn check_plane(&self, ny: usize, nz: usize) -> Result<()> {
        if ny != self.ny || nz != self.nz {
            return Err(ReconError::DimensionMismatch(format!(
                "mask is {}x{}, data plane is {ny}x{nz}",
                self.ny, self.nz
            )));
        }
        Ok(())
    }

    /// Zeroes unsampled (ky, kz) locations of a k-space volume.
    pub fn apply(&self, vol: &ComplexVolume) -> Result<ComplexVolume> {
        if vol.domain() != Domain::KSpace {
            return Err(ReconError::DomainMismatch {
                expected: Domain::KSpace,
                found: vol.domain(),
            });
        }
        self.apply_any(vol)
    }

    /// Mask application valid for any domain whose (ky, kz) axes are still in k-space.
    pub(crate) fn apply_any(&self, vol: &ComplexVolume) -> Result<ComplexVolume> {
        let dims = vol.dims();
        self.check_plane(dims.ny, dims.nz)?;
        let mut out = vol.clone();
        let plane = dims.plane();
        for chunk in out.data_mut().chunks_mut(plane) {
            for (v, &b) in chunk.iter_mut().zip(&self.bits) {
                if !b {
                    *v = Complex64::new(0.0, 0.0);
                }
            }
        }
        Ok(out)
    }

    pub fn apply_slice(&self, slice: &HybridSlice) -> Result<HybridSlice> {
        self.check_plane(slice.ny, slice.nz)?;
        let mut out = slice.clone();
        for chunk in out.data.chunks_mut(self.bits.len()) {
            for (v, &b) in chunk.iter_mut().zip(&self.bits) {
                if !b {
                    *v = Complex64::new(0.0, 0.0);
                }
            }
        }
        Ok(out)
    }

    /// Extracts the centered ACS block of every readout position of a hybrid volume.
    pub fn extract_acs(&self, vol: &ComplexVolume) -> Result<Vec<HybridSlice>> {
        if vol.domain() != Domain::Hybrid {
            return Err(ReconError::DomainMismatch {
                expected: Domain::Hybrid,
                found: vol.domain(),
            });
        }
        self.check_plane(vol.dims().ny, vol.dims().nz)?;
        (0..vol.dims().nx)
            .map(|x| self.extract_acs_slice(&vol.slice(x)?))
            .collect()
    }

    pub fn extract_acs_slice(&self, slice: &HybridSlice) -> Result<HybridSlice> {
        self.check_plane(slice.ny, slice.nz)?;
        let (wy, wz) = self.acs;
        if wy == 0 || wz == 0 {
            return Err(ReconError::Calibration("mask has no ACS region".into()));
        }
        let (y0, z0) = self.acs_origin();
        let mut data = Vec::with_capacity(slice.coils * wy * wz);
        for c in 0..slice.coils {
            for y in y0..y0 + wy {
                let start = slice.index(c, y, z0);
                data.extend_from_slice(&slice.data[start..start + wz]);
            }
        }
        HybridSlice::new(slice.coils, wy, wz, slice.x_index, slice.domain, data)
    }

    pub fn render(&self) -> Vec<u8> {
        let mut head = String::new();
        let _ = write!(
            head,
            "ny={}\nnz={}\nacs={}x{}\nrate={:?}\nachieved={:?}\nrmin={:?}\nseed={}\nend\n",
            self.ny,
            self.nz,
            self.acs.0,
            self.acs.1,
            self.target_rate,
            self.achieved_rate,
            self.r_min,
            self.seed
        );
        let mut bytes = head.into_bytes();
        bytes.extend(self.bits.iter().map(|&b| b as u8));
        bytes
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        const END: &[u8] = b"end\n";
        let split = bytes
            .windows(END.len())
            .position(|w| w == END)
            .ok_or_else(|| ReconError::Format("mask header has no 'end' line".into()))?;
        let head = std::str::from_utf8(&bytes[..split])
            .map_err(|_| ReconError::Format("mask header is not UTF-8".into()))?;
        let fields = parse_key_values(head)?;
        let get = |k: &str| {
            fields
                .get(k)
                .map(String::as_str)
                .ok_or_else(|| ReconError::Format(format!("mask header is missing '{k}'")))
        };
        let num = |k: &str| -> Result<f64> {
            get(k)?
                .parse()
                .map_err(|_| ReconError::Format(format!("mask field '{k}' is not a number")))
        };
        let ny: usize = num("ny")? as usize;
        let nz: usize = num("nz")? as usize;
        let acs = parse_pair(get("acs")?)?;
        let seed: u64 = get("seed")?
            .parse()
            .map_err(|_| ReconError::Format("mask field 'seed' is not an integer".into()))?;
        let body = &bytes[split + END.len()..];
        if body.len() != ny * nz {
            return Err(ReconError::Format(format!(
                "mask body has {} bytes, header declares {}",
                body.len(),
                ny * nz
            )));
        }
        let bits = body
            .iter()
            .map(|&b| match b {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(ReconError::Format(format!("mask byte {other} is not 0/1"))),
            })
            .collect::<Result<Vec<_>>>()?;
        let mut mask = SamplingMask::from_bits(ny, nz, bits, acs, num("rate")?, seed)?;
        if let Ok(r) = num("rmin") {
            mask.r_min = r;
        }
        Ok(mask)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.render())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read(path)?)
    }
}

/// Parses `AxB` into `(A, B)`.
pub fn parse_pair(s: &str) -> Result<(usize, usize)> {
    let (a, b) = s
        .split_once('x')
        .ok_or_else(|| ReconError::Config(format!("expected AxB, got '{s}'")))?;
    let parse = |v: &str| {
        v.trim()
            .parse::<usize>()
            .map_err(|_| ReconError::Config(format!("expected AxB, got '{s}'")))
    };
    Ok((parse(a)?, parse(b)?))
}

/// Greedy dart throwing over a fixed candidate order with hard-core radius `r`.
///
/// Stops once `need` samples are accepted; returns `None` if the candidates run out first.
fn throw_darts(
    ny: usize,
    nz: usize,
    candidates: &[(usize, usize)],
    need: usize,
    r: f64,
) -> Option<Vec<(usize, usize)>> {
    let mut taken = vec![false; ny * nz];
    let mut accepted: Vec<(usize, usize)> = Vec::with_capacity(need);
    let r2 = r * r;
    let reach = r.ceil() as usize;
    let window = (2 * reach + 1).pow(2);
    for &(y, z) in candidates {
        if accepted.len() >= need {
            break;
        }
        let clash = |(ay, az): (usize, usize)| {
            let dy = ay as f64 - y as f64;
            let dz = az as f64 - z as f64;
            dy * dy + dz * dz < r2
        };
        let blocked = if window < accepted.len() {
            let (ylo, yhi) = (y.saturating_sub(reach), (y + reach).min(ny - 1));
            let (zlo, zhi) = (z.saturating_sub(reach), (z + reach).min(nz - 1));
            (ylo..=yhi).any(|yy| (zlo..=zhi).any(|zz| taken[yy * nz + zz] && clash((yy, zz))))
        } else {
            accepted.iter().any(|&p| clash(p))
        };
        if !blocked {
            taken[y * nz + z] = true;
            accepted.push((y, z));
        }
    }
    (accepted.len() >= need).then_some(accepted)
}

/// Uniform-density Poisson-disc mask with a centered, fully sampled ACS block.
///
/// Non-ACS candidates are visited in a seeded random order and accepted when no earlier
/// accepted sample lies closer than `r_min`; the largest `r_min` for which the sample
/// budget `round(ny·nz / rate)` is still reached is found by bisection.
pub fn gen_poisson_mask(
    ny: usize,
    nz: usize,
    rate: f64,
    acs: (usize, usize),
    seed: u64,
) -> Result<SamplingMask> {
    if !(rate.is_finite() && rate >= 1.0) {
        return Err(ReconError::Config(format!("rate must be >= 1, got {rate}")));
    }
    if ny == 0 || nz == 0 {
        return Err(ReconError::Config("mask dims must be positive".into()));
    }
    if acs.0 > ny || acs.1 > nz {
        return Err(ReconError::Config(format!(
            "ACS {}x{} does not fit in {ny}x{nz}",
            acs.0, acs.1
        )));
    }
    let total = ny * nz;
    let budget = ((total as f64 / rate).round() as usize).max(1);
    let acs_count = acs.0 * acs.1;
    let y0 = centered_origin(ny, acs.0);
    let z0 = centered_origin(nz, acs.1);
    let in_acs = |y: usize, z: usize| y >= y0 && y < y0 + acs.0 && z >= z0 && z < z0 + acs.1;

    let mut bits = vec![false; total];
    for y in y0..y0 + acs.0 {
        for z in z0..z0 + acs.1 {
            bits[y * nz + z] = true;
        }
    }

    let mut r_min = 1.0;
    if acs_count >= budget {
        let achieved = total as f64 / acs_count.max(1) as f64;
        if acs_count == 0 || (achieved - rate).abs() > RATE_TOLERANCE * rate {
            return Err(ReconError::Config(format!(
                "ACS {}x{} alone exceeds the sample budget of {budget} for rate {rate}",
                acs.0, acs.1
            )));
        }
    } else {
        let need = budget - acs_count;
        let mut candidates: Vec<(usize, usize)> = (0..ny)
            .flat_map(|y| (0..nz).map(move |z| (y, z)))
            .filter(|&(y, z)| !in_acs(y, z))
            .collect();
        candidates.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

        let mut lo = 1.0;
        let mut hi = ((ny * ny + nz * nz) as f64).sqrt() + 1.0;
        for _ in 0..RADIUS_BISECTION_STEPS {
            let mid = 0.5 * (lo + hi);
            if throw_darts(ny, nz, &candidates, need, mid).is_some() {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let picked = throw_darts(ny, nz, &candidates, need, lo).ok_or_else(|| {
            ReconError::Config(format!("cannot place {need} samples outside the ACS"))
        })?;
        for (y, z) in picked {
            bits[y * nz + z] = true;
        }
        r_min = lo;
    }

    let count = bits.iter().filter(|&&b| b).count();
    let achieved = total as f64 / count as f64;
    if (achieved - rate).abs() > RATE_TOLERANCE * rate {
        return Err(ReconError::Config(format!(
            "achieved rate {achieved:.4} misses target {rate} by more than {}%",
            RATE_TOLERANCE * 100.0
        )));
    }
    Ok(SamplingMask {
        ny,
        nz,
        bits,
        acs,
        target_rate: rate,
        achieved_rate: achieved,
        r_min,
        seed,
    })
}
