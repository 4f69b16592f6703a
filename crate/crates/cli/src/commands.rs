use std::fmt;
use std::fs;
use std::hash::Hasher;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use clap::Args;
use fnv::FnvHasher;

use ksrecon::kspace::io::{load_real_volume, load_volume, real_body_path, save_real_volume, save_volume};
use ksrecon::kspace::rss_combine;
use ksrecon::metrics::{
    mean_vessel_sharpness, nmse, paired_ttest, parse_rows, ttest_csv_line, MetricsRow, DEFAULT_ALPHA,
    DEFAULT_HALF_WIDTH, DEFAULT_PROFILE_POINTS, ROW_HEADER, TTEST_HEADER,
};
use ksrecon::phantom::{add_noise, gen_phantom, gen_sensitivities, simulate_kspace, PhantomSpec, DEFAULT_COILS};
use ksrecon::sampling::{gen_poisson_mask, parse_pair};
use ksrecon::scnn::SelfMasking;
use ksrecon::sraki::{loss_csv, reconstruct, Calibration, DcMode, Method, ReconConfig};
use ksrecon::{ComplexVolume, Dims, Domain, RealVolume, ReconError, SamplingMask};

use crate::error::CliError;
use crate::manifest::{Run, RunManifest, MANIFEST_NAME};
use crate::settings::Settings;
use crate::Common;

pub const DEFAULT_ACS: Pair = Pair(40, 10);
pub const METRICS_FILE: &str = "metrics.csv";
pub const TTEST_FILE: &str = "ttest.csv";

/// A `AxB` size pair such as a plane or ACS extent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pair(pub usize, pub usize);

impl FromStr for Pair {
    type Err = ReconError;

    fn from_str(s: &str) -> Result<Self, ReconError> {
        parse_pair(s).map(|(a, b)| Pair(a, b))
    }
}

impl fmt::Display for Pair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.0, self.1)
    }
}

/// Child seed for one named purpose, hashed from the parent seed with FNV-1a.
pub fn derive_seed(seed: u64, tag: &str) -> u64 {
    let mut h = FnvHasher::default();
    h.write(&seed.to_le_bytes());
    h.write(tag.as_bytes());
    h.finish()
}

/// Loads a magnitude image: a real volume as is, a complex one as the RSS of its image.
pub fn load_image(path: &Path) -> Result<RealVolume, CliError> {
    if real_body_path(path).exists() {
        return Ok(load_real_volume(path)?);
    }
    let (vol, _) = load_volume(path)?;
    let image = match vol.domain() {
        Domain::KSpace => vol.ifft3()?,
        Domain::Image => vol,
        Domain::Hybrid => vol.ifft_yz()?,
    };
    Ok(rss_combine(&image)?)
}

fn write_volume(run: &mut Run, name: &str, vol: &ComplexVolume) -> Result<(), CliError> {
    let (hdr, body) = save_volume(&run.out(name), vol, 1.0)?;
    run.output(&hdr);
    run.output(&body);
    Ok(())
}

pub fn write_image(run: &mut Run, name: &str, vol: &RealVolume) -> Result<(), CliError> {
    let (hdr, body) = save_real_volume(&run.out(name), vol)?;
    run.output(&hdr);
    run.output(&body);
    Ok(())
}

pub fn write_text(run: &mut Run, name: &str, text: &str) -> Result<(), CliError> {
    let path = run.out(name);
    fs::write(&path, text)?;
    run.output(&path);
    Ok(())
}

fn input_volume(run: &mut Run, path: &str) -> Result<ComplexVolume, CliError> {
    let p = PathBuf::from(path);
    run.input(&ksrecon::kspace::io::header_path(&p));
    run.input(&ksrecon::kspace::io::complex_body_path(&p));
    Ok(load_volume(&p)?.0)
}

fn input_mask(run: &mut Run, path: &str) -> Result<SamplingMask, CliError> {
    let p = PathBuf::from(path);
    run.input(&p);
    Ok(SamplingMask::load(&p)?)
}

#[derive(Args, Debug)]
pub struct PhantomArgs {
    #[command(flatten)]
    pub common: Common,
    /// Number of receive coils [default: 8]
    #[arg(long)]
    pub coils: Option<usize>,
    /// Grid size NXxNYxNZ [default: 64x64x32]
    #[arg(long)]
    pub dims: Option<Dims>,
    /// Noise level in dB, or inf for none [default: inf]
    #[arg(long)]
    pub snr: Option<f64>,
    /// Phantom and coil geometry seed; noise uses a seed derived from it [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Everything simulated for one phantom seed.
pub struct Acquisition {
    pub spec: PhantomSpec,
    pub image: RealVolume,
    pub maps: ComplexVolume,
    pub clean: ComplexVolume,
    pub noisy: ComplexVolume,
    pub noise_seed: u64,
}

pub fn simulate(coils: usize, dims: Dims, snr_db: f64, seed: u64) -> Result<Acquisition, CliError> {
    let spec = PhantomSpec::standard(dims, seed);
    let image = gen_phantom(&spec)?;
    let maps = gen_sensitivities(coils, dims, seed)?;
    let clean = simulate_kspace(&image, &maps)?;
    let noise_seed = derive_seed(seed, "noise");
    let noisy = add_noise(&clean, snr_db, noise_seed)?;
    Ok(Acquisition {
        spec,
        image,
        maps: maps.maps,
        clean,
        noisy,
        noise_seed,
    })
}

pub fn phantom(a: &PhantomArgs, run: &mut Run, s: &mut Settings) -> Result<(), CliError> {
    let coils = s.or("coils", a.coils, DEFAULT_COILS)?;
    let dims = s.or("dims", a.dims, Dims::new(64, 64, 32))?;
    let snr = s.or("snr", a.snr, f64::INFINITY)?;
    let seed = s.or("seed", a.seed, 0u64)?;
    let acq = simulate(coils, dims, snr, seed)?;
    run.seeds.insert("phantom".into(), seed);
    run.seeds.insert("noise".into(), acq.noise_seed);
    write_image(run, "image", &acq.image)?;
    write_volume(run, "coils", &acq.maps)?;
    write_volume(run, "kspace", &acq.clean)?;
    write_volume(run, "noisy", &acq.noisy)?;
    write_text(run, "phantom.txt", &acq.spec.render())
}

#[derive(Args, Debug)]
pub struct MaskArgs {
    #[command(flatten)]
    pub common: Common,
    /// Phase-encode plane NYxNZ (required)
    #[arg(long)]
    pub dims: Option<Pair>,
    /// Target acceleration rate, at least 1 (required)
    #[arg(long)]
    pub rate: Option<f64>,
    /// Fully sampled calibration block NYxNZ [default: 40x10]
    #[arg(long)]
    pub acs: Option<Pair>,
    /// Mask generator seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn mask(a: &MaskArgs, run: &mut Run, s: &mut Settings) -> Result<(), CliError> {
    let Pair(ny, nz) = s.req("dims", a.dims)?;
    let rate = s.req("rate", a.rate)?;
    let Pair(ay, az) = s.or("acs", a.acs, DEFAULT_ACS)?;
    let seed = s.or("seed", a.seed, 0u64)?;
    let m = gen_poisson_mask(ny, nz, rate, (ay, az), seed)?;
    run.seeds.insert("mask".into(), seed);
    let path = run.out("mask.msk");
    m.save(&path)?;
    run.output(&path);
    println!("achieved rate {:.4} ({} of {} samples)", m.achieved_rate(), m.sampled_count(), ny * nz);
    Ok(())
}

#[derive(Args, Debug)]
pub struct UndersampleArgs {
    #[command(flatten)]
    pub common: Common,
    /// Fully sampled k-space volume (.hdr) (required)
    #[arg(long)]
    pub data: Option<String>,
    /// Sampling mask (.msk) (required)
    #[arg(long)]
    pub mask: Option<String>,
}

pub fn undersample(a: &UndersampleArgs, run: &mut Run, s: &mut Settings) -> Result<(), CliError> {
    let data = s.req("data", a.data.clone())?;
    let mask_path = s.req("mask", a.mask.clone())?;
    let vol = input_volume(run, &data)?;
    let m = input_mask(run, &mask_path)?;
    write_volume(run, "undersampled", &m.apply(&vol)?)
}

#[derive(Args, Debug)]
pub struct ReconArgs {
    #[command(flatten)]
    pub common: Common,
    /// spirit, l1spirit or sraki (required)
    #[arg(long)]
    pub method: Option<Method>,
    /// k-space volume (.hdr) (required)
    #[arg(long)]
    pub data: Option<String>,
    /// Sampling mask (.msk) (required)
    #[arg(long)]
    pub mask: Option<String>,
    /// Reconstruction iterations [default: 50, 15 for l1spirit]
    #[arg(long)]
    pub iters: Option<usize>,
    /// Adam step size of the learned reconstruction [default: 0.02]
    #[arg(long)]
    pub lr: Option<f64>,
    /// Adam step size of network calibration [default: 0.01]
    #[arg(long = "lr-calib")]
    pub lr_calib: Option<f64>,
    /// Network calibration iterations [default: 1000]
    #[arg(long = "calib-iters")]
    pub calib_iters: Option<usize>,
    /// Wavelet threshold as a fraction of the largest coefficient [default: 0.0005]
    #[arg(long = "thresh-frac")]
    pub thresh_frac: Option<f64>,
    /// Linear kernel width [default: 5]
    #[arg(long)]
    pub kernel: Option<usize>,
    /// Network initialization seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Self-tap exclusion: parity or center [default: parity]
    #[arg(long)]
    pub masking: Option<SelfMasking>,
    /// Data consistency: strict or soft(beta) [default: strict]
    #[arg(long)]
    pub dc: Option<DcMode>,
}

pub fn recon_config(a: &ReconArgs, s: &mut Settings) -> Result<ReconConfig, CliError> {
    let method = s.req("method", a.method)?;
    let d = ReconConfig::new(method);
    let cfg = ReconConfig {
        method,
        iters: s.or("iters", a.iters, d.iters)?,
        lr_recon: s.or("lr", a.lr, d.lr_recon)?,
        lr_calib: s.or("lr-calib", a.lr_calib, d.lr_calib)?,
        calib_iters: s.or("calib-iters", a.calib_iters, d.calib_iters)?,
        thresh_frac: s.or("thresh-frac", a.thresh_frac, d.thresh_frac)?,
        kernel_size: s.or("kernel", a.kernel, d.kernel_size)?,
        seed: s.or("seed", a.seed, d.seed)?,
        masking: s.or("masking", a.masking, d.masking)?,
        dc_mode: s.or("dc", a.dc, d.dc_mode)?,
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn recon(a: &ReconArgs, run: &mut Run, s: &mut Settings) -> Result<(), CliError> {
    let cfg = recon_config(a, s)?;
    let data = s.req("data", a.data.clone())?;
    let mask_path = s.req("mask", a.mask.clone())?;
    let vol = input_volume(run, &data)?;
    let m = input_mask(run, &mask_path)?;
    run.seeds.insert("network".into(), cfg.seed);
    run.seeds.insert("mask".into(), m.seed());
    s.resolved.insert("mask-rate".into(), m.target_rate().to_string());

    let start = Instant::now();
    let out = reconstruct(&vol, &m, &cfg)?;
    run.time("recon", start.elapsed().as_secs_f64());

    write_image(run, "recon", &out.image)?;
    write_volume(run, "kspace", &out.kspace)?;
    write_text(run, "loss.csv", &loss_csv(&out.traces))?;
    let model = match &out.calibration {
        Calibration::Linear(k) => {
            let p = run.out("kernels.bin");
            k.save(&p)?;
            p
        }
        Calibration::Network(net) => {
            let p = run.out("model.net");
            ksrecon::scnn::io::save(&p, &net.params)?;
            p
        }
    };
    run.output(&model);
    Ok(())
}

#[derive(Args, Debug)]
pub struct MetricsArgs {
    #[command(flatten)]
    pub common: Common,
    /// Reconstructed image (.hdr)
    #[arg(long)]
    pub recon: Option<String>,
    /// Reference image, or a complex volume scored by its RSS image
    #[arg(long)]
    pub reference: Option<String>,
    /// Phantom description whose vessel is probed for sharpness
    #[arg(long)]
    pub phantom: Option<String>,
    /// Cross-sections along the vessel [default: 5]
    #[arg(long = "profile-points")]
    pub profile_points: Option<usize>,
    /// Profile half-width in voxels [default: 6]
    #[arg(long = "half-width")]
    pub half_width: Option<usize>,
    /// Edge filter smoothing [default: 1]
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Row label; defaults to the method in the recon directory's manifest
    #[arg(long)]
    pub method: Option<String>,
    /// Row label; defaults to the mask rate in the recon directory's manifest
    #[arg(long)]
    pub rate: Option<f64>,
    /// Row label; defaults to the mask seed in the recon directory's manifest
    #[arg(long)]
    pub seed: Option<u64>,
    /// Two metrics tables (or directories holding metrics.csv) to compare pairwise
    #[arg(long, num_args = 1)]
    pub ttest: Vec<String>,
}

fn recon_manifest(recon: &Path) -> Option<RunManifest> {
    let dir = recon.parent()?;
    let text = fs::read_to_string(dir.join(MANIFEST_NAME)).ok()?;
    serde_json::from_str(&text).ok()
}

pub fn metrics(a: &MetricsArgs, run: &mut Run, s: &mut Settings) -> Result<(), CliError> {
    if !a.ttest.is_empty() {
        return ttest(a, run);
    }
    let recon_path = PathBuf::from(s.req::<String>("recon", a.recon.clone())?);
    let ref_path = PathBuf::from(s.req::<String>("reference", a.reference.clone())?);
    let points = s.or("profile-points", a.profile_points, DEFAULT_PROFILE_POINTS)?;
    let hw = s.or("half-width", a.half_width, DEFAULT_HALF_WIDTH)?;
    let alpha = s.or("alpha", a.alpha, DEFAULT_ALPHA)?;
    let phantom = s.opt::<String>("phantom", a.phantom.clone())?;

    let manifest = recon_manifest(&recon_path);
    let label = |key: &str| manifest.as_ref().and_then(|m| m.config.get(key).cloned());
    let method = s.or("method", a.method.clone(), label("method").unwrap_or_else(|| "unknown".into()))?;
    let rate_label = label("mask-rate").and_then(|r| r.parse().ok());
    let rate = s.or("rate", a.rate, rate_label.unwrap_or(f64::NAN))?;
    let seed_label = manifest.as_ref().and_then(|m| m.seeds.get("mask").copied());
    let seed = s.or("seed", a.seed, seed_label.unwrap_or(0))?;
    let runtime = manifest
        .as_ref()
        .and_then(|m| m.timings_s.get("recon").copied())
        .unwrap_or(f64::NAN);

    for p in [&recon_path, &ref_path] {
        run.input(&ksrecon::kspace::io::header_path(p));
    }
    let recon = load_image(&recon_path)?;
    let reference = load_image(&ref_path)?;
    let e = nmse(&recon, &reference)?;
    let sharpness = match phantom {
        None => f64::NAN,
        Some(p) => {
            run.input(Path::new(&p));
            let spec = PhantomSpec::parse(&fs::read_to_string(&p)?)?;
            let vessel = spec
                .vessel
                .ok_or_else(|| CliError::Usage(format!("phantom {p} has no vessel to probe")))?;
            mean_vessel_sharpness(&recon, &vessel, points, hw, alpha)?
        }
    };
    let row = MetricsRow {
        method,
        rate,
        seed,
        nmse: e,
        sharpness,
        runtime_s: runtime,
    };
    let path = run.out(METRICS_FILE);
    let fresh = !path.exists();
    let mut f = fs::OpenOptions::new().create(true).append(true).open(&path)?;
    if fresh {
        writeln!(f, "{ROW_HEADER}")?;
    }
    writeln!(f, "{}", row.to_csv())?;
    run.output(&path);
    println!("{}", row.to_csv());
    Ok(())
}

fn read_table(run: &mut Run, p: &str) -> Result<Vec<MetricsRow>, CliError> {
    let mut path = PathBuf::from(p);
    if path.is_dir() {
        path = path.join(METRICS_FILE);
    }
    run.input(&path);
    let text = fs::read_to_string(&path)
        .map_err(|e| CliError::Usage(format!("cannot read metrics table {}: {e}", path.display())))?;
    Ok(parse_rows(&text)?)
}

/// Rows of `a` and `b` that share a (rate, seed) key, in `a`'s order.
pub fn pair_rows<'r>(a: &'r [MetricsRow], b: &'r [MetricsRow]) -> Vec<(&'r MetricsRow, &'r MetricsRow)> {
    a.iter()
        .filter_map(|x| {
            b.iter()
                .find(|y| y.rate.to_bits() == x.rate.to_bits() && y.seed == x.seed)
                .map(|y| (x, y))
        })
        .collect()
}

/// t-test lines for NMSE and, when every paired value is finite, sharpness.
pub fn ttest_lines(label: &str, pairs: &[(&MetricsRow, &MetricsRow)]) -> Result<Vec<String>, ReconError> {
    let mut lines = Vec::new();
    let nm: (Vec<f64>, Vec<f64>) = pairs.iter().map(|(x, y)| (x.nmse, y.nmse)).unzip();
    lines.push(ttest_csv_line(&format!("{label}:nmse"), &paired_ttest(&nm.0, &nm.1)?));
    let sh: (Vec<f64>, Vec<f64>) = pairs.iter().map(|(x, y)| (x.sharpness, y.sharpness)).unzip();
    if sh.0.iter().chain(&sh.1).all(|v| v.is_finite()) {
        lines.push(ttest_csv_line(&format!("{label}:sharpness"), &paired_ttest(&sh.0, &sh.1)?));
    }
    Ok(lines)
}

fn ttest(a: &MetricsArgs, run: &mut Run) -> Result<(), CliError> {
    let [pa, pb] = a.ttest.as_slice() else {
        return Err(CliError::Usage(format!("--ttest needs exactly two tables, got {}", a.ttest.len())));
    };
    let (ra, rb) = (read_table(run, pa)?, read_table(run, pb)?);
    let pairs = pair_rows(&ra, &rb);
    let name = |rows: &[MetricsRow]| rows.first().map_or("empty".to_string(), |r| r.method.clone());
    let label = format!("{}-{}", name(&ra), name(&rb));
    let lines = ttest_lines(&label, &pairs)?;
    let mut text = format!("{TTEST_HEADER}\n");
    for l in &lines {
        println!("{l}");
        text.push_str(l);
        text.push('\n');
    }
    write_text(run, TTEST_FILE, &text)
}
