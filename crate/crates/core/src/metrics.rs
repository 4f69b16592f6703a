//! Image-quality metrics: NMSE, Deriche-filtered vessel sharpness on interpolated line
//! profiles, the paired t-test and CSV report aggregation.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use statrs::function::beta::beta_reg;

use crate::error::{ReconError, Result};
use crate::kspace::RealVolume;
use crate::phantom::{norm, Vessel};

pub const DEFAULT_ALPHA: f64 = 1.0;
pub const DEFAULT_HALF_WIDTH: usize = 6;
pub const DEFAULT_PROFILE_POINTS: usize = 5;

/// `‖recon − ref‖² / ‖ref‖²`.
pub fn nmse(recon: &RealVolume, reference: &RealVolume) -> Result<f64> {
    if recon.dims != reference.dims {
        return Err(ReconError::DimensionMismatch(format!(
            "recon {} vs reference {}",
            recon.dims, reference.dims
        )));
    }
    let den = reference.energy();
    if den == 0.0 {
        return Err(ReconError::Degenerate("reference has zero energy".into()));
    }
    let num: f64 = recon
        .data
        .iter()
        .zip(&reference.data)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(num / den)
}

/// Intensities sampled at unit spacing along a line across a vessel.
#[derive(Debug, Clone, PartialEq)]
pub struct VesselProfile {
    pub samples: Vec<f64>,
    pub center_index: usize,
    pub spacing: f64,
}

impl VesselProfile {
    pub fn new(samples: Vec<f64>, center_index: usize) -> Result<Self> {
        if samples.len() < 9 {
            return Err(ReconError::Shape(format!(
                "profile needs at least 9 samples, got {}",
                samples.len()
            )));
        }
        if center_index < 2 || center_index + 2 >= samples.len() {
            return Err(ReconError::Shape(format!(
                "center index {center_index} needs two samples on each side"
            )));
        }
        Ok(VesselProfile {
            samples,
            center_index,
            spacing: 1.0,
        })
    }

    pub fn reversed(&self) -> Self {
        let mut samples = self.samples.clone();
        samples.reverse();
        VesselProfile {
            center_index: samples.len() - 1 - self.center_index,
            samples,
            spacing: self.spacing,
        }
    }
}

/// Recursive smoothing first-derivative filter (Deriche), causal plus anticausal
/// second-order passes, replicate boundary handling.
///
/// The impulse response is `−(1 − e^{−α})² · n · e^{−α(|n| − 1)}`, normalized so a unit
/// step produces a peak response of exactly 1.
pub fn deriche_gradient(samples: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(ReconError::Config(format!("Deriche alpha must be > 0, got {alpha}")));
    }
    if samples.len() < 3 {
        return Err(ReconError::Shape(format!(
            "Deriche filter needs at least 3 samples, got {}",
            samples.len()
        )));
    }
    let q = (-alpha).exp();
    let (a2, a3) = (1.0, -1.0);
    let (b1, b2) = (2.0 * q, -q * q);
    let c1 = -(1.0 - q) * (1.0 - q);
    let n = samples.len();
    let gain = 1.0 - b1 - b2;

    // Steady state of each pass for a constant continuation of the end samples.
    let mut y1 = vec![0.0; n];
    let ss = a2 * samples[0] / gain;
    let (mut p1, mut p2, mut xp) = (ss, ss, samples[0]);
    for i in 0..n {
        let y = a2 * xp + b1 * p1 + b2 * p2;
        y1[i] = y;
        p2 = p1;
        p1 = y;
        xp = samples[i];
    }
    let mut out = vec![0.0; n];
    let ss = a3 * samples[n - 1] / gain;
    let (mut p1, mut p2, mut xn) = (ss, ss, samples[n - 1]);
    for i in (0..n).rev() {
        let y = a3 * xn + b1 * p1 + b2 * p2;
        out[i] = c1 * (y1[i] + y);
        p2 = p1;
        p1 = y;
        xn = samples[i];
    }
    Ok(out)
}

/// Mean of the strongest edge response on either side of the center, divided by the
/// center intensity. Values near 1 indicate a sharp border.
pub fn vessel_sharpness(profile: &VesselProfile, alpha: f64) -> Result<f64> {
    let center = profile.samples[profile.center_index];
    if !(center > 0.0) {
        return Err(ReconError::Degenerate(format!(
            "vessel center intensity must be positive, got {center}"
        )));
    }
    let g = deriche_gradient(&profile.samples, alpha)?;
    let c = profile.center_index;
    let left = g[..c].iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let right = g[c + 1..].iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(0.5 * (left + right) / center)
}

/// Trilinear interpolation at a point inside the grid.
pub fn interpolate(volume: &RealVolume, p: [f64; 3]) -> Result<f64> {
    let d = volume.dims;
    let ext = [d.nx, d.ny, d.nz];
    let mut base = [0usize; 3];
    let mut frac = [0.0; 3];
    for i in 0..3 {
        let hi = (ext[i] - 1) as f64;
        // Absorb rounding from direction vectors that land a hair outside an edge.
        let v = if p[i] < 0.0 && p[i] > -1e-9 {
            0.0
        } else if p[i] > hi && p[i] < hi + 1e-9 {
            hi
        } else {
            p[i]
        };
        if !(0.0..=hi).contains(&v) {
            return Err(ReconError::OutOfBounds(format!(
                "sample point {p:?} outside the {} grid",
                d
            )));
        }
        let f = v.floor();
        base[i] = (f as usize).min(ext[i].saturating_sub(2));
        frac[i] = v - base[i] as f64;
        if ext[i] == 1 {
            base[i] = 0;
            frac[i] = 0.0;
        }
    }
    let mut acc = 0.0;
    for corner in 0..8 {
        let mut w = 1.0;
        let mut idx = [0usize; 3];
        for i in 0..3 {
            let bit = (corner >> i) & 1;
            w *= if bit == 1 { frac[i] } else { 1.0 - frac[i] };
            idx[i] = (base[i] + bit).min(ext[i] - 1);
        }
        if w != 0.0 {
            acc += w * volume.get(idx[0], idx[1], idx[2]);
        }
    }
    Ok(acc)
}

/// Samples `2·half_width + 1` points at unit spacing through `point` along `direction`.
pub fn extract_profile(
    volume: &RealVolume,
    point: [f64; 3],
    direction: [f64; 3],
    half_width: usize,
) -> Result<VesselProfile> {
    let len = norm(direction);
    if !(len > 0.0) {
        return Err(ReconError::Config("profile direction must be nonzero".into()));
    }
    let u = [direction[0] / len, direction[1] / len, direction[2] / len];
    let hw = half_width as isize;
    let samples = (-hw..=hw)
        .map(|t| {
            let t = t as f64;
            interpolate(volume, [point[0] + t * u[0], point[1] + t * u[1], point[2] + t * u[2]])
        })
        .collect::<Result<Vec<_>>>()?;
    VesselProfile::new(samples, half_width)
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Points and perpendicular directions used to score a vessel: `points` evenly spaced
/// interior arc-length positions, two orthogonal cross-section directions at each.
pub fn vessel_probes(vessel: &Vessel, points: usize) -> Vec<([f64; 3], [f64; 3])> {
    let mut out = Vec::with_capacity(2 * points);
    for i in 0..points {
        let s = (i + 1) as f64 / (points + 1) as f64;
        let (p, t) = vessel.point_at(s);
        // Cross-sections lie as close to the (y, z) plane as the tangent allows.
        let mut u = cross(t, [1.0, 0.0, 0.0]);
        if norm(u) < 1e-6 {
            u = cross(t, [0.0, 1.0, 0.0]);
        }
        let l = norm(u);
        let u = [u[0] / l, u[1] / l, u[2] / l];
        let w = cross(t, u);
        out.push((p, u));
        out.push((p, w));
    }
    out
}

/// Mean sharpness over the [`vessel_probes`] of a known vessel whose profiles fit in the grid.
///
/// Probes near a face of a small grid are skipped; it is an error only if none fit.
pub fn mean_vessel_sharpness(
    volume: &RealVolume,
    vessel: &Vessel,
    points: usize,
    half_width: usize,
    alpha: f64,
) -> Result<f64> {
    let probes = vessel_probes(vessel, points);
    if probes.is_empty() {
        return Err(ReconError::Config("need at least one profile point".into()));
    }
    let (mut sum, mut used) = (0.0, 0usize);
    let mut last_err = None;
    for (p, d) in &probes {
        match extract_profile(volume, *p, *d, half_width) {
            Ok(profile) => {
                sum += vessel_sharpness(&profile, alpha)?;
                used += 1;
            }
            Err(e @ ReconError::OutOfBounds(_)) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    match (used, last_err) {
        (0, Some(e)) => Err(e),
        _ => Ok(sum / used as f64),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    pub n: usize,
}

/// Two-sided paired t-test on `a − b` with `n − 1` degrees of freedom.
pub fn paired_ttest(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(ReconError::DimensionMismatch(format!(
            "paired samples of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 2 {
        return Err(ReconError::DegenerateStatistics(format!("need at least 2 pairs, got {n}")));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    if !(var > 0.0) {
        return Err(ReconError::DegenerateStatistics(
            "paired differences have zero variance".into(),
        ));
    }
    let t = mean / (var / n as f64).sqrt();
    let nu = (n - 1) as f64;
    let p = beta_reg(nu / 2.0, 0.5, nu / (nu + t * t)).clamp(f64::MIN_POSITIVE, 1.0);
    Ok(TTest { t, p, n })
}

/// One reconstruction scored against its reference.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub method: String,
    pub rate: f64,
    pub seed: u64,
    pub nmse: f64,
    pub sharpness: f64,
    pub runtime_s: f64,
}

pub const ROW_HEADER: &str = "method,rate,seed,nmse,sharpness_rca,runtime_s";
pub const AGGREGATE_HEADER: &str = "method,rate,n,nmse_mean,nmse_std,sharpness_mean,sharpness_std";
pub const TTEST_HEADER: &str = "pair,t,p,n";

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{:.10e},{:.10e},{:.3}",
            self.method, self.rate, self.seed, self.nmse, self.sharpness, self.runtime_s
        )
    }

    pub fn parse_csv(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 6 {
            return Err(ReconError::Format(format!("metrics row needs 6 fields: '{line}'")));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| ReconError::Format(format!("bad number '{s}' in metrics row")))
        };
        Ok(MetricsRow {
            method: f[0].to_string(),
            rate: num(f[1])?,
            seed: f[2]
                .parse()
                .map_err(|_| ReconError::Format(format!("bad seed '{}'", f[2])))?,
            nmse: num(f[3])?,
            sharpness: num(f[4])?,
            runtime_s: num(f[5])?,
        })
    }
}

/// Reads rows from a metrics CSV, skipping the header line.
pub fn parse_rows(text: &str) -> Result<Vec<MetricsRow>> {
    text.lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with("method,"))
        .map(MetricsRow::parse_csv)
        .collect()
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = if v.len() > 1 {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

/// Per-(method, rate) summary statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub method: String,
    pub rate: f64,
    pub n: usize,
    pub nmse_mean: f64,
    pub nmse_std: f64,
    pub sharpness_mean: f64,
    pub sharpness_std: f64,
}

/// Groups rows by method and rate in a fixed order (method name, then rate).
pub fn aggregate(rows: &[MetricsRow]) -> Vec<Aggregate> {
    let mut groups: BTreeMap<(String, u64), Vec<&MetricsRow>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.method.clone(), r.rate.to_bits())).or_default().push(r);
    }
    let mut out: Vec<Aggregate> = groups
        .into_iter()
        .map(|((method, rate), rs)| {
            let (nmse_mean, nmse_std) = mean_std(&rs.iter().map(|r| r.nmse).collect::<Vec<_>>());
            let (sharpness_mean, sharpness_std) =
                mean_std(&rs.iter().map(|r| r.sharpness).collect::<Vec<_>>());
            Aggregate {
                method,
                rate: f64::from_bits(rate),
                n: rs.len(),
                nmse_mean,
                nmse_std,
                sharpness_mean,
                sharpness_std,
            }
        })
        .collect();
    out.sort_by(|a, b| a.method.cmp(&b.method).then(a.rate.total_cmp(&b.rate)));
    out
}

pub fn aggregate_csv(aggs: &[Aggregate]) -> String {
    let mut s = format!("{AGGREGATE_HEADER}\n");
    for a in aggs {
        let _ = writeln!(
            s,
            "{},{},{},{:.10e},{:.10e},{:.10e},{:.10e}",
            a.method, a.rate, a.n, a.nmse_mean, a.nmse_std, a.sharpness_mean, a.sharpness_std
        );
    }
    s
}

pub fn ttest_csv_line(pair: &str, t: &TTest) -> String {
    format!("{pair},{:.10e},{:.10e},{}", t.t, t.p, t.n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kspace::Dims;
    use crate::phantom::{gen_phantom, PhantomSpec};

    /// Impulse response of the recursive filter as a finite kernel, applied by direct
    /// convolution over a replicate-extended signal.
    fn dense_deriche(samples: &[f64], alpha: f64) -> Vec<f64> {
        let q = (-alpha).exp();
        let taps = 80i64;
        let h = |m: i64| -(1.0 - q).powi(2) * m as f64 * q.powi((m.abs() - 1) as i32);
        let n = samples.len() as i64;
        (0..n)
            .map(|i| {
                (-taps..=taps)
                    .filter(|&m| m != 0)
                    .map(|m| h(m) * samples[(i - m).clamp(0, n - 1) as usize])
                    .sum()
            })
            .collect()
    }

    #[test]
    fn nmse_identities() {
        let d = Dims::new(2, 3, 4);
        let r = RealVolume::new(d, (0..24).map(|i| (i as f64 * 0.37).sin() + 1.5).collect()).unwrap();
        assert_eq!(nmse(&r, &r).unwrap(), 0.0);
        assert_eq!(nmse(&RealVolume::zeros(d), &r).unwrap(), 1.0);
        let twice = RealVolume::new(d, r.data.iter().map(|v| 2.0 * v).collect()).unwrap();
        assert!((nmse(&twice, &r).unwrap() - 1.0).abs() < 1e-15);
        for c in [0.5, 1.3, 3.0] {
            let s = RealVolume::new(d, r.data.iter().map(|v| c * v).collect()).unwrap();
            assert!((nmse(&s, &r).unwrap() - (c - 1.0f64).powi(2)).abs() < 1e-14);
        }
        assert!(matches!(nmse(&r, &RealVolume::zeros(d)), Err(ReconError::Degenerate(_))));
        assert!(nmse(&r, &RealVolume::zeros(Dims::new(1, 3, 4))).is_err());
    }

    #[test]
    fn deriche_basics() {
        let flat = vec![2.5; 20];
        assert!(deriche_gradient(&flat, 1.0).unwrap().iter().all(|&g| g.abs() < 1e-14));
        let p: Vec<f64> = (0..30).map(|i| (i as f64 * 0.3).sin()).collect();
        let q: Vec<f64> = (0..30).map(|i| (i as f64 * 0.11).cos().powi(3)).collect();
        let mix: Vec<f64> = p.iter().zip(&q).map(|(a, b)| 1.5 * a - 0.25 * b).collect();
        let (gp, gq) = (deriche_gradient(&p, 0.8).unwrap(), deriche_gradient(&q, 0.8).unwrap());
        let gm = deriche_gradient(&mix, 0.8).unwrap();
        for i in 0..30 {
            assert!((gm[i] - (1.5 * gp[i] - 0.25 * gq[i])).abs() < 1e-10);
        }
        assert!(deriche_gradient(&p, 0.0).is_err());
        assert!(deriche_gradient(&p[..2], 1.0).is_err());
    }

    #[test]
    fn deriche_matches_dense_kernel() {
        let step: Vec<f64> = (0..25).map(|i| if i < 12 { 0.0 } else { 1.0 }).collect();
        for alpha in [0.5, 1.0, 2.0] {
            let g = deriche_gradient(&step, alpha).unwrap();
            let oracle = dense_deriche(&step, alpha);
            for (a, b) in g.iter().zip(&oracle) {
                assert!((a - b).abs() < 1e-8, "alpha {alpha}: {a} vs {b}");
            }
            let peak = g.iter().cloned().fold(f64::MIN, f64::max);
            let at = g.iter().position(|&v| v == peak).unwrap();
            assert!(at == 11 || at == 12, "peak at {at}");
            assert!((peak - 1.0).abs() < 1e-12);
        }
        let bumpy: Vec<f64> = (0..40).map(|i| ((i as f64) * 0.7).sin() * (i as f64 / 10.0)).collect();
        let g = deriche_gradient(&bumpy, 1.0).unwrap();
        for (a, b) in g.iter().zip(dense_deriche(&bumpy, 1.0)) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    fn raised_cosine(radius: f64, half: usize, bg: f64) -> VesselProfile {
        let v = Vessel { points: vec![[0.0; 3], [1.0, 0.0, 0.0]], radius, peak: 1.0 };
        let samples = (0..2 * half + 1)
            .map(|i| {
                let w = v.weight((i as f64 - half as f64).abs());
                bg * (1.0 - w) + w
            })
            .collect();
        VesselProfile::new(samples, half).unwrap()
    }

    #[test]
    fn sharpness_examples() {
        let flat = VesselProfile::new(vec![0.7; 13], 6).unwrap();
        assert_eq!(vessel_sharpness(&flat, 1.0).unwrap(), 0.0);

        let p = raised_cosine(3.0, 6, 0.2);
        let s = vessel_sharpness(&p, 1.0).unwrap();
        let g = dense_deriche(&p.samples, 1.0);
        let left = g[..6].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let right = g[7..].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let oracle = 0.5 * (left + right) / p.samples[6];
        assert!((s - oracle).abs() <= 0.01 * oracle);
        assert!(s > 0.0);

        for c in [0.01, 3.7, 250.0] {
            let scaled = VesselProfile::new(p.samples.iter().map(|v| c * v).collect(), 6).unwrap();
            assert!((vessel_sharpness(&scaled, 1.0).unwrap() - s).abs() < 1e-10);
        }
        let zero_center = VesselProfile::new(vec![0.0; 13], 6).unwrap();
        assert!(matches!(vessel_sharpness(&zero_center, 1.0), Err(ReconError::Degenerate(_))));
        assert!(VesselProfile::new(vec![1.0; 8], 4).is_err());
        assert!(VesselProfile::new(vec![1.0; 9], 1).is_err());
    }

    #[test]
    fn profile_extraction() {
        let d = Dims::new(5, 11, 6);
        let vol = RealVolume::new(d, (0..d.voxels()).map(|i| (i * 7 % 11) as f64).collect()).unwrap();
        let p = extract_profile(&vol, [2.0, 5.0, 3.0], [0.0, 1.0, 0.0], 4).unwrap();
        for (t, v) in p.samples.iter().enumerate() {
            assert_eq!(*v, vol.get(2, t + 1, 3));
        }
        let r = extract_profile(&vol, [2.0, 5.0, 3.0], [0.0, -2.0, 0.0], 4).unwrap();
        assert_eq!(r, p.reversed());
        // Midpoint between two voxels along z.
        let m = interpolate(&vol, [1.0, 2.0, 2.5]).unwrap();
        assert!((m - 0.5 * (vol.get(1, 2, 2) + vol.get(1, 2, 3))).abs() < 1e-12);
        assert!(matches!(
            extract_profile(&vol, [2.0, 5.0, 3.0], [0.0, 1.0, 0.0], 6),
            Err(ReconError::OutOfBounds(_))
        ));
    }

    #[test]
    fn phantom_vessel_profile_peaks_at_center() {
        let spec = PhantomSpec::standard(Dims::new(64, 64, 32), 1);
        let img = gen_phantom(&spec).unwrap();
        let v = spec.vessel.as_ref().unwrap();
        for (p, d) in vessel_probes(v, DEFAULT_PROFILE_POINTS) {
            let prof = extract_profile(&img, p, d, DEFAULT_HALF_WIDTH).unwrap();
            let max = prof.samples.iter().cloned().fold(f64::MIN, f64::max);
            assert_eq!(prof.samples[prof.center_index], max);
        }
        let s = mean_vessel_sharpness(&img, v, DEFAULT_PROFILE_POINTS, DEFAULT_HALF_WIDTH, 1.0).unwrap();
        assert!(s > 0.0 && s < 1.0, "{s}");
    }

    #[test]
    fn ttest_hand_example() {
        let a = [2.0, 4.0, 6.0, 8.0, 10.0];
        let b = [1.0, 2.0, 3.0, 4.0, 5.0];
        let r = paired_ttest(&a, &b).unwrap();
        assert!((r.t - 4.242640687).abs() < 1e-6);
        assert!((r.p - 0.013236).abs() < 1e-3);
        assert_eq!(r.n, 5);
        let s = paired_ttest(&b, &a).unwrap();
        assert_eq!(s.t, -r.t);
        assert_eq!(s.p, r.p);
        assert!(matches!(paired_ttest(&a, &a), Err(ReconError::DegenerateStatistics(_))));
        assert!(paired_ttest(&a[..1], &b[..1]).is_err());
        assert!(paired_ttest(&a, &b[..4]).is_err());
    }

    #[test]
    fn csv_roundtrip_and_aggregate() {
        let rows = vec![
            MetricsRow { method: "spirit".into(), rate: 4.0, seed: 1, nmse: 0.1, sharpness: 0.5, runtime_s: 1.0 },
            MetricsRow { method: "spirit".into(), rate: 4.0, seed: 2, nmse: 0.3, sharpness: 0.7, runtime_s: 1.0 },
            MetricsRow { method: "l1spirit".into(), rate: 2.0, seed: 1, nmse: 0.2, sharpness: 0.4, runtime_s: 2.0 },
        ];
        let text: String = std::iter::once(ROW_HEADER.to_string())
            .chain(rows.iter().map(|r| r.to_csv()))
            .collect::<Vec<_>>()
            .join("\n");
        let back = parse_rows(&text).unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(back[1].seed, 2);
        let agg = aggregate(&rows);
        assert_eq!(agg.len(), 2);
        assert_eq!(agg[0].method, "l1spirit");
        assert_eq!(agg[1].n, 2);
        assert!((agg[1].nmse_mean - 0.2).abs() < 1e-15);
        assert!((agg[1].nmse_std - 0.02f64.sqrt()).abs() < 1e-15);
        assert!(aggregate_csv(&agg).starts_with(AGGREGATE_HEADER));
    }

    fn gaussian_blur(v: &[f64], sigma: f64) -> Vec<f64> {
        let r = (4.0 * sigma).ceil() as isize;
        let w: Vec<f64> = (-r..=r).map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp()).collect();
        let total: f64 = w.iter().sum();
        let n = v.len() as isize;
        (0..n)
            .map(|i| {
                (-r..=r)
                    .zip(&w)
                    .map(|(k, wk)| wk * v[(i + k).clamp(0, n - 1) as usize])
                    .sum::<f64>()
                    / total
            })
            .collect()
    }

    #[test]
    fn blur_lowers_sharpness_and_scale_does_not_matter() {
        let spec = PhantomSpec::standard(Dims::new(64, 64, 32), 2);
        let img = gen_phantom(&spec).unwrap();
        let v = spec.vessel.as_ref().unwrap();
        for (p, d) in vessel_probes(v, DEFAULT_PROFILE_POINTS) {
            let prof = extract_profile(&img, p, d, DEFAULT_HALF_WIDTH).unwrap();
            let mut last = vessel_sharpness(&prof, DEFAULT_ALPHA).unwrap();
            for sigma in [0.5, 1.0, 1.5, 2.0, 3.0] {
                let blurred = VesselProfile::new(gaussian_blur(&prof.samples, sigma), prof.center_index).unwrap();
                let s = vessel_sharpness(&blurred, DEFAULT_ALPHA).unwrap();
                assert!(s < last, "sigma {sigma}: {s} !< {last}");
                last = s;
            }
            for k in [1e-3, 7.5, 1e4] {
                let scaled = VesselProfile::new(prof.samples.iter().map(|x| x * k).collect(), prof.center_index).unwrap();
                let (a, b) = (vessel_sharpness(&scaled, 1.0).unwrap(), vessel_sharpness(&prof, 1.0).unwrap());
                assert!((a - b).abs() <= 1e-10 * b.abs(), "scale {k}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn probes_leaving_a_small_grid_are_skipped() {
        let dims = Dims::new(8, 48, 32);
        let spec = PhantomSpec::standard(dims, 1);
        let img = gen_phantom(&spec).unwrap();
        let v = spec.vessel.as_ref().unwrap();
        let fits = vessel_probes(v, DEFAULT_PROFILE_POINTS)
            .iter()
            .filter(|(p, d)| extract_profile(&img, *p, *d, DEFAULT_HALF_WIDTH).is_ok())
            .count();
        assert!(fits > 0 && fits < 2 * DEFAULT_PROFILE_POINTS, "{fits}");
        let s = mean_vessel_sharpness(&img, v, DEFAULT_PROFILE_POINTS, DEFAULT_HALF_WIDTH, 1.0).unwrap();
        assert!(s.is_finite() && s > 0.0);
        let tiny = RealVolume::zeros(Dims::new(2, 4, 4));
        assert!(matches!(
            mean_vessel_sharpness(&tiny, v, 3, DEFAULT_HALF_WIDTH, 1.0),
            Err(ReconError::OutOfBounds(_))
        ));
    }
}
