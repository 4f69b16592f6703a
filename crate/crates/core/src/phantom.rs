//! Synthetic ground truth: ellipsoid background with a curved bright tube, smooth complex
//! coil sensitivities, the multi-coil k-space forward model and complex Gaussian noise.

use std::f64::consts::PI;
use std::fmt::Write as _;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{ReconError, Result};
use crate::kspace::io::parse_key_values;
use crate::kspace::{ComplexVolume, Dims, Domain, RealVolume};

pub const DEFAULT_COILS: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct Ellipsoid {
    /// Voxel coordinates `(x, y, z)`.
    pub center: [f64; 3],
    pub semi_axes: [f64; 3],
    pub intensity: f64,
}

impl Ellipsoid {
    fn contains(&self, p: [f64; 3]) -> bool {
        (0..3)
            .map(|i| ((p[i] - self.center[i]) / self.semi_axes[i]).powi(2))
            .sum::<f64>()
            <= 1.0
    }
}

/// Tube around a polyline with a raised-cosine cross-section: weight
/// `0.5·(1 + cos(π·d / radius))` at distance `d < radius` from the centerline.
#[derive(Debug, Clone, PartialEq)]
pub struct Vessel {
    pub points: Vec<[f64; 3]>,
    pub radius: f64,
    pub peak: f64,
}

impl Vessel {
    pub fn weight(&self, d: f64) -> f64 {
        if d >= self.radius {
            0.0
        } else {
            0.5 * (1.0 + (PI * d / self.radius).cos())
        }
    }

    /// Distance from `p` to the centerline, with the nearest centerline point and the
    /// unit tangent of the segment it lies on.
    pub fn nearest(&self, p: [f64; 3]) -> (f64, [f64; 3], [f64; 3]) {
        let mut best = (f64::INFINITY, self.points[0], [1.0, 0.0, 0.0]);
        for seg in self.points.windows(2) {
            let (a, b) = (seg[0], seg[1]);
            let ab = sub(b, a);
            let len2 = dot(ab, ab);
            let t = if len2 == 0.0 {
                0.0
            } else {
                (dot(sub(p, a), ab) / len2).clamp(0.0, 1.0)
            };
            let q = [a[0] + t * ab[0], a[1] + t * ab[1], a[2] + t * ab[2]];
            let d = norm(sub(p, q));
            if d < best.0 {
                let l = len2.sqrt().max(f64::MIN_POSITIVE);
                best = (d, q, [ab[0] / l, ab[1] / l, ab[2] / l]);
            }
        }
        best
    }

    /// Point at fraction `s ∈ [0, 1]` of the polyline's arc length, with its tangent.
    pub fn point_at(&self, s: f64) -> ([f64; 3], [f64; 3]) {
        let lens: Vec<f64> = self.points.windows(2).map(|w| norm(sub(w[1], w[0]))).collect();
        let total: f64 = lens.iter().sum();
        let mut target = s.clamp(0.0, 1.0) * total;
        for (i, &l) in lens.iter().enumerate() {
            if target <= l || i == lens.len() - 1 {
                let (a, b) = (self.points[i], self.points[i + 1]);
                let t = if l == 0.0 { 0.0 } else { (target / l).min(1.0) };
                let ab = sub(b, a);
                let l = l.max(f64::MIN_POSITIVE);
                return (
                    [a[0] + t * ab[0], a[1] + t * ab[1], a[2] + t * ab[2]],
                    [ab[0] / l, ab[1] / l, ab[2] / l],
                );
            }
            target -= l;
        }
        (self.points[0], [1.0, 0.0, 0.0])
    }
}

pub(crate) fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    pub dims: Dims,
    pub ellipsoids: Vec<Ellipsoid>,
    pub vessel: Option<Vessel>,
    /// Seed for the coil maps and noise of runs driven by this spec.
    pub seed: u64,
}

impl PhantomSpec {
    pub fn empty(dims: Dims, seed: u64) -> Self {
        PhantomSpec {
            dims,
            ellipsoids: Vec::new(),
            vessel: None,
            seed,
        }
    }

    /// Torso-like background with a tube running along x that bends in y and z,
    /// scaled to the grid.
    pub fn standard(dims: Dims, seed: u64) -> Self {
        let (nx, ny, nz) = (dims.nx as f64, dims.ny as f64, dims.nz as f64);
        let at = |fx: f64, fy: f64, fz: f64| [fx * (nx - 1.0), fy * (ny - 1.0), fz * (nz - 1.0)];
        let ax = |fx: f64, fy: f64, fz: f64| [fx * nx, fy * ny, fz * nz];
        let ellipsoids = vec![
            Ellipsoid { center: at(0.5, 0.5, 0.5), semi_axes: ax(0.44, 0.42, 0.42), intensity: 0.3 },
            Ellipsoid { center: at(0.45, 0.55, 0.5), semi_axes: ax(0.22, 0.2, 0.26), intensity: 0.25 },
            Ellipsoid { center: at(0.7, 0.3, 0.35), semi_axes: ax(0.1, 0.08, 0.12), intensity: 0.2 },
            Ellipsoid { center: at(0.25, 0.3, 0.65), semi_axes: ax(0.08, 0.1, 0.1), intensity: 0.15 },
        ];
        let radius = (ny.min(nz) / 10.0).max(1.5);
        let vessel = Vessel {
            points: vec![
                at(0.1, 0.40, 0.45),
                at(0.3, 0.46, 0.55),
                at(0.5, 0.56, 0.56),
                at(0.7, 0.60, 0.46),
                at(0.9, 0.56, 0.38),
            ],
            radius,
            peak: 1.0,
        };
        PhantomSpec {
            dims,
            ellipsoids,
            vessel: Some(vessel),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dims;
        if d.voxels() == 0 {
            return Err(ReconError::Config("phantom grid is empty".into()));
        }
        for (i, e) in self.ellipsoids.iter().enumerate() {
            if !(0.0..=1.0).contains(&e.intensity) {
                return Err(ReconError::Config(format!("ellipsoid {i}: intensity outside [0, 1]")));
            }
            if e.semi_axes.iter().any(|&a| !(a > 0.0)) {
                return Err(ReconError::Config(format!("ellipsoid {i}: semi-axes must be positive")));
            }
        }
        if let Some(v) = &self.vessel {
            if !(0.0..=1.0).contains(&v.peak) {
                return Err(ReconError::Config("vessel peak outside [0, 1]".into()));
            }
            if !(v.radius >= 1.0) {
                return Err(ReconError::Config(format!("vessel radius {} below 1 voxel", v.radius)));
            }
            if v.points.len() < 2 {
                return Err(ReconError::Config("vessel needs at least two centerline points".into()));
            }
            // The vessel may run up to the x faces, but its cross-section must fit in (y, z).
            let ext = [d.nx as f64, d.ny as f64, d.nz as f64];
            for p in &v.points {
                for i in 0..3 {
                    let r = if i == 0 { 0.0 } else { v.radius };
                    if p[i] - r < 0.0 || p[i] + r > ext[i] - 1.0 {
                        return Err(ReconError::OutOfBounds(format!(
                            "vessel point {p:?} with radius {} leaves the {} grid",
                            v.radius, d
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Flat `key=value` rendering, readable by [`PhantomSpec::parse`].
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "dims={}", self.dims);
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "ellipsoids={}", self.ellipsoids.len());
        for (i, e) in self.ellipsoids.iter().enumerate() {
            let v: Vec<String> = e
                .center
                .iter()
                .chain(&e.semi_axes)
                .chain(std::iter::once(&e.intensity))
                .map(|x| format!("{x:?}"))
                .collect();
            let _ = writeln!(s, "ellipsoid.{i}={}", v.join(","));
        }
        if let Some(v) = &self.vessel {
            let pts: Vec<String> = v
                .points
                .iter()
                .map(|p| format!("{:?},{:?},{:?}", p[0], p[1], p[2]))
                .collect();
            let _ = writeln!(s, "vessel.points={}", pts.join(";"));
            let _ = writeln!(s, "vessel.radius={:?}", v.radius);
            let _ = writeln!(s, "vessel.peak={:?}", v.peak);
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let kv = parse_key_values(text)?;
        let get = |k: &str| kv.get(k).ok_or_else(|| ReconError::Config(format!("phantom spec is missing '{k}'")));
        let num = |k: &str, s: &str| -> Result<f64> {
            s.trim()
                .parse()
                .map_err(|_| ReconError::Config(format!("'{k}': '{s}' is not a number")))
        };
        let dims: Dims = get("dims")?.parse()?;
        let seed = get("seed")?
            .parse()
            .map_err(|_| ReconError::Config("'seed' is not an integer".into()))?;
        let count: usize = match kv.get("ellipsoids") {
            Some(c) => c.parse().map_err(|_| ReconError::Config("'ellipsoids' is not an integer".into()))?,
            None => 0,
        };
        let mut ellipsoids = Vec::with_capacity(count);
        for i in 0..count {
            let key = format!("ellipsoid.{i}");
            let vals = get(&key)?
                .split(',')
                .map(|s| num(&key, s))
                .collect::<Result<Vec<f64>>>()?;
            if vals.len() != 7 {
                return Err(ReconError::Config(format!(
                    "'{key}' needs cx,cy,cz,ax,ay,az,intensity"
                )));
            }
            ellipsoids.push(Ellipsoid {
                center: [vals[0], vals[1], vals[2]],
                semi_axes: [vals[3], vals[4], vals[5]],
                intensity: vals[6],
            });
        }
        let vessel = match kv.get("vessel.points") {
            None => None,
            Some(pts) => {
                let points = pts
                    .split(';')
                    .map(|p| {
                        let v = p
                            .split(',')
                            .map(|s| num("vessel.points", s))
                            .collect::<Result<Vec<f64>>>()?;
                        match v[..] {
                            [x, y, z] => Ok([x, y, z]),
                            _ => Err(ReconError::Config("vessel points need x,y,z".into())),
                        }
                    })
                    .collect::<Result<Vec<_>>>()?;
                Some(Vessel {
                    points,
                    radius: num("vessel.radius", get("vessel.radius")?)?,
                    peak: num("vessel.peak", get("vessel.peak")?)?,
                })
            }
        };
        let spec = PhantomSpec {
            dims,
            ellipsoids,
            vessel,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Support of the phantom: voxels inside any ellipsoid or within the vessel radius.
pub fn phantom_support(spec: &PhantomSpec) -> Vec<bool> {
    let d = spec.dims;
    let mut out = Vec::with_capacity(d.voxels());
    for x in 0..d.nx {
        for y in 0..d.ny {
            for z in 0..d.nz {
                let p = [x as f64, y as f64, z as f64];
                let inside = spec.ellipsoids.iter().any(|e| e.contains(p))
                    || spec.vessel.as_ref().is_some_and(|v| v.nearest(p).0 < v.radius);
                out.push(inside);
            }
        }
    }
    out
}

/// Renders the spec onto its grid. Ellipsoid intensities add (capped at 1); the vessel
/// is blended on top as `bg·(1 − w) + peak·w`.
pub fn gen_phantom(spec: &PhantomSpec) -> Result<RealVolume> {
    spec.validate()?;
    let d = spec.dims;
    let mut data = Vec::with_capacity(d.voxels());
    for x in 0..d.nx {
        for y in 0..d.ny {
            for z in 0..d.nz {
                let p = [x as f64, y as f64, z as f64];
                let mut bg: f64 = spec
                    .ellipsoids
                    .iter()
                    .filter(|e| e.contains(p))
                    .map(|e| e.intensity)
                    .sum();
                bg = bg.min(1.0);
                if let Some(v) = &spec.vessel {
                    let w = v.weight(v.nearest(p).0);
                    bg = bg * (1.0 - w) + v.peak * w;
                }
                data.push(bg);
            }
        }
    }
    RealVolume::new(d, data)
}

/// Complex receive sensitivities, one image-domain map per coil.
#[derive(Debug, Clone, PartialEq)]
pub struct CoilMaps {
    pub maps: ComplexVolume,
}

impl CoilMaps {
    pub fn coils(&self) -> usize {
        self.maps.coils()
    }

    pub fn dims(&self) -> Dims {
        self.maps.dims()
    }
}

/// Gaussian magnitude lobes centered on a ring around the FOV in the (y, z) plane, each
/// with a low-order polynomial phase, normalized to unit root-sum-of-squares at every voxel.
pub fn gen_sensitivities(nc: usize, dims: Dims, seed: u64) -> Result<CoilMaps> {
    if nc == 0 {
        return Err(ReconError::Config("need at least one coil".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    struct Coil {
        center: [f64; 3],
        phase: [f64; 7],
    }
    let coils: Vec<Coil> = (0..nc)
        .map(|c| {
            let theta = 2.0 * PI * (c as f64 + rng.random_range(-0.15..0.15)) / nc as f64;
            let center = [
                rng.random_range(-0.3..0.3),
                0.95 * theta.cos(),
                0.95 * theta.sin(),
            ];
            let mut phase = [0.0; 7];
            phase[0] = rng.random_range(-PI..PI);
            for v in &mut phase[1..4] {
                *v = rng.random_range(-0.6..0.6);
            }
            for v in &mut phase[4..] {
                *v = rng.random_range(-0.3..0.3);
            }
            Coil { center, phase }
        })
        .collect();
    // Normalized coordinates in [-1, 1] along each axis.
    let unit = |i: usize, n: usize| {
        if n <= 1 {
            0.0
        } else {
            2.0 * i as f64 / (n - 1) as f64 - 1.0
        }
    };
    let sigma2 = 2.0 * 0.6f64.powi(2);
    let n = dims.voxels();
    let mut data = vec![Complex64::new(0.0, 0.0); nc * n];
    let mut v = 0;
    for x in 0..dims.nx {
        for y in 0..dims.ny {
            for z in 0..dims.nz {
                let p = [unit(x, dims.nx), unit(y, dims.ny), unit(z, dims.nz)];
                let mut rss = 0.0;
                for (c, coil) in coils.iter().enumerate() {
                    let r2 = (0..3).map(|i| (p[i] - coil.center[i]).powi(2)).sum::<f64>();
                    let mag = (-r2 / sigma2).exp();
                    let a = &coil.phase;
                    let phi = a[0]
                        + a[1] * p[0]
                        + a[2] * p[1]
                        + a[3] * p[2]
                        + a[4] * p[0] * p[1]
                        + a[5] * p[1] * p[2]
                        + a[6] * p[1] * p[1];
                    let s = Complex64::from_polar(mag, phi);
                    rss += s.norm_sqr();
                    data[c * n + v] = s;
                }
                let inv = 1.0 / rss.sqrt();
                for c in 0..nc {
                    data[c * n + v] *= inv;
                }
                v += 1;
            }
        }
    }
    Ok(CoilMaps {
        maps: ComplexVolume::new(nc, dims, Domain::Image, data)?,
    })
}

/// Fully-sampled multi-coil k-space: `fft3(map_c ⊙ image)` per coil.
pub fn simulate_kspace(image: &RealVolume, maps: &CoilMaps) -> Result<ComplexVolume> {
    if image.dims != maps.dims() {
        return Err(ReconError::DimensionMismatch(format!(
            "image {} vs coil maps {}",
            image.dims,
            maps.dims()
        )));
    }
    let n = image.dims.voxels();
    let data: Vec<Complex64> = maps
        .maps
        .data()
        .iter()
        .enumerate()
        .map(|(i, s)| s * image.data[i % n])
        .collect();
    ComplexVolume::new(maps.coils(), image.dims, Domain::Image, data)?.fft3()
}

/// Adds i.i.d. circular complex Gaussian noise at `snr_db` relative to the mean sample
/// power of `kspace`. `+∞` returns the input unchanged.
pub fn add_noise(kspace: &ComplexVolume, snr_db: f64, seed: u64) -> Result<ComplexVolume> {
    if snr_db == f64::INFINITY {
        return Ok(kspace.clone());
    }
    if !snr_db.is_finite() {
        return Err(ReconError::Config(format!("SNR must be finite or +inf, got {snr_db}")));
    }
    let signal = kspace.energy() / kspace.data().len() as f64;
    let noise_power = signal / 10f64.powf(snr_db / 10.0);
    let sd = (noise_power / 2.0).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = kspace
        .data()
        .iter()
        .map(|z| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            z + Complex64::new(sd * re, sd * im)
        })
        .collect();
    ComplexVolume::new(kspace.coils(), kspace.dims(), kspace.domain(), data)
}
