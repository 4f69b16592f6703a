//! The full sweep: phantoms per seed, a mask per (seed, rate), every method on every mask,
//! then per-job metrics rows and per-(method, rate) aggregates.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use clap::Args;
use rayon::prelude::*;

use ksrecon::kspace::rss_combine;
use ksrecon::metrics::{
    aggregate, aggregate_csv, mean_vessel_sharpness, nmse, MetricsRow, DEFAULT_ALPHA, DEFAULT_HALF_WIDTH,
    DEFAULT_PROFILE_POINTS, ROW_HEADER, TTEST_HEADER,
};
use ksrecon::phantom::{Vessel, DEFAULT_COILS};
use ksrecon::sampling::gen_poisson_mask;
use ksrecon::sraki::{loss_csv, reconstruct, Method, ReconConfig};
use ksrecon::{ComplexVolume, Dims, RealVolume, ReconError, SamplingMask};

use crate::commands::{derive_seed, pair_rows, simulate, ttest_lines, write_image, write_text, Pair, DEFAULT_ACS};
use crate::error::CliError;
use crate::manifest::Run;
use crate::settings::Settings;
use crate::Common;

pub const ROWS_FILE: &str = "rows.csv";
pub const AGGREGATE_FILE: &str = "aggregate.csv";
pub const BENCH_TTEST_FILE: &str = "ttest.csv";

/// Comma-separated acceleration rates.
#[derive(Debug, Clone, PartialEq)]
pub struct RateList(pub Vec<f64>);

impl FromStr for RateList {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let rates = s
            .split(',')
            .map(|r| r.trim().parse::<f64>().map_err(|_| format!("bad rate '{r}' in '{s}'")))
            .collect::<Result<Vec<_>, _>>()?;
        if rates.is_empty() || rates.iter().any(|r| !(r.is_finite() && *r >= 1.0)) {
            return Err(format!("rates must be finite and at least 1, got '{s}'"));
        }
        Ok(RateList(rates))
    }
}

impl fmt::Display for RateList {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(f64::to_string).collect();
        f.write_str(&parts.join(","))
    }
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[command(flatten)]
    pub common: Common,
    /// Acceleration rates [default: 2,3,4,5]
    #[arg(long)]
    pub rates: Option<RateList>,
    /// Number of phantom seeds [default: 3]
    #[arg(long)]
    pub seeds: Option<usize>,
    /// Grid size NXxNYxNZ [default: 64x64x32]
    #[arg(long)]
    pub dims: Option<Dims>,
    /// Receive coils [default: 8]
    #[arg(long)]
    pub coils: Option<usize>,
    /// Noise level in dB [default: 15]
    #[arg(long)]
    pub snr: Option<f64>,
    /// Calibration block NYxNZ [default: 40x10]
    #[arg(long)]
    pub acs: Option<Pair>,
    /// Root seed from which every phantom, mask and network seed is derived [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Reconstruction iterations for every method [default: per-method]
    #[arg(long)]
    pub iters: Option<usize>,
    /// Network calibration iterations [default: 1000]
    #[arg(long = "calib-iters")]
    pub calib_iters: Option<usize>,
}

struct SeedData {
    index: usize,
    kspace: ComplexVolume,
    reference: RealVolume,
    vessel: Vessel,
}

struct Job<'a> {
    data: &'a SeedData,
    rate: f64,
    mask: &'a SamplingMask,
    cfg: ReconConfig,
}

impl Job<'_> {
    fn name(&self) -> String {
        format!("seed{}/r{}/{}", self.data.index, self.rate, self.cfg.method)
    }
}

/// Keeps the failure class of `e` while naming the job it came from.
fn in_job(name: &str, e: CliError) -> CliError {
    let msg = |m: String| format!("job {name}: {m}");
    match e {
        CliError::Usage(m) => CliError::Usage(msg(m)),
        CliError::DataMismatch(m) => CliError::DataMismatch(msg(m)),
        CliError::Divergence(m) => CliError::Divergence(msg(m)),
        CliError::Other(m) => CliError::Other(msg(m)),
    }
}

fn run_job(job: &Job, root: &Path) -> Result<MetricsRow, CliError> {
    let name = job.name();
    let mut run = Run::new("bench-job", &root.join(&name));
    fs::create_dir_all(&run.out_dir)?;
    let config = [
        ("method", job.cfg.method.to_string()),
        ("rate", job.rate.to_string()),
        ("seed-index", job.data.index.to_string()),
        ("iters", job.cfg.iters.to_string()),
        ("calib-iters", job.cfg.calib_iters.to_string()),
        ("lr", job.cfg.lr_recon.to_string()),
        ("lr-calib", job.cfg.lr_calib.to_string()),
        ("thresh-frac", job.cfg.thresh_frac.to_string()),
        ("kernel", job.cfg.kernel_size.to_string()),
        ("masking", job.cfg.masking.to_string()),
        ("dc", job.cfg.dc_mode.to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    run.seeds.insert("network".into(), job.cfg.seed);
    run.seeds.insert("mask".into(), job.mask.seed());

    let result = (|| {
        let start = Instant::now();
        let out = reconstruct(&job.data.kspace, job.mask, &job.cfg)?;
        let runtime = start.elapsed().as_secs_f64();
        run.time("recon", runtime);
        write_image(&mut run, "recon", &out.image)?;
        write_text(&mut run, "loss.csv", &loss_csv(&out.traces))?;
        let row = MetricsRow {
            method: job.cfg.method.to_string(),
            rate: job.rate,
            seed: job.data.index as u64,
            nmse: nmse(&out.image, &job.data.reference)?,
            sharpness: mean_vessel_sharpness(
                &out.image,
                &job.data.vessel,
                DEFAULT_PROFILE_POINTS,
                DEFAULT_HALF_WIDTH,
                DEFAULT_ALPHA,
            )?,
            runtime_s: runtime,
        };
        write_text(&mut run, "row.csv", &format!("{ROW_HEADER}\n{}\n", row.to_csv()))?;
        Ok::<_, CliError>(row)
    })();
    run.finish(config, result.as_ref().err().map(|e| e.to_string()))?;
    match &result {
        Ok(r) => eprintln!("bench {name}: nmse {:.3e}, {:.1} s", r.nmse, r.runtime_s),
        Err(e) => eprintln!("bench {name}: {e}"),
    }
    result.map_err(|e| in_job(&name, e))
}

/// Paired t-tests of sRAKI against each baseline at every rate, matched on seed.
fn bench_ttests(rows: &[MetricsRow], rates: &[f64]) -> Result<String, CliError> {
    let mut text = format!("{TTEST_HEADER}\n");
    for &rate in rates {
        let of = |m: Method| -> Vec<MetricsRow> {
            rows.iter()
                .filter(|r| r.method == m.name() && r.rate == rate)
                .cloned()
                .collect()
        };
        let ours = of(Method::Sraki);
        for base in [Method::Spirit, Method::L1Spirit] {
            let theirs = of(base);
            let pairs = pair_rows(&ours, &theirs);
            match ttest_lines(&format!("sraki-{base}@{rate}"), &pairs) {
                Ok(lines) => lines.iter().for_each(|l| {
                    text.push_str(l);
                    text.push('\n');
                }),
                // Too few seeds or identical columns: nothing to test.
                Err(ReconError::DegenerateStatistics(_)) => {}
                Err(e) => return Err(e.into()),
            }
        }
    }
    Ok(text)
}

pub fn bench(a: &BenchArgs, run: &mut Run, s: &mut Settings) -> Result<(), CliError> {
    let rates = s.or("rates", a.rates.clone(), RateList(vec![2.0, 3.0, 4.0, 5.0]))?.0;
    let n_seeds = s.or("seeds", a.seeds, 3usize)?;
    let dims = s.or("dims", a.dims, Dims::new(64, 64, 32))?;
    let coils = s.or("coils", a.coils, DEFAULT_COILS)?;
    let snr = s.or("snr", a.snr, 15.0)?;
    let Pair(ay, az) = s.or("acs", a.acs, DEFAULT_ACS)?;
    let root_seed = s.or("seed", a.seed, 0u64)?;
    let iters = s.opt("iters", a.iters)?;
    let calib_iters = s.opt("calib-iters", a.calib_iters)?;
    if n_seeds == 0 {
        return Err(CliError::Usage("--seeds must be at least 1".into()));
    }
    run.seeds.insert("root".into(), root_seed);
    let root = run.out_dir.clone();
    let start = Instant::now();

    let mut data = Vec::with_capacity(n_seeds);
    let mut masks = Vec::with_capacity(n_seeds);
    for k in 0..n_seeds {
        let seed = derive_seed(root_seed, &format!("phantom/{k}"));
        let acq = simulate(coils, dims, snr, seed)?;
        // Scored against the fully sampled acquisition, noise included.
        let reference = rss_combine(&acq.noisy.ifft3()?)?;
        let mut seed_run = Run::new("bench-seed", &root.join(format!("seed{k}")));
        fs::create_dir_all(&seed_run.out_dir)?;
        seed_run.seeds.insert("phantom".into(), seed);
        seed_run.seeds.insert("noise".into(), acq.noise_seed);
        write_text(&mut seed_run, "phantom.txt", &acq.spec.render())?;
        write_image(&mut seed_run, "reference", &reference)?;
        let mut per_rate = Vec::with_capacity(rates.len());
        for &rate in &rates {
            let mask_seed = derive_seed(root_seed, &format!("mask/{k}/{rate}"));
            let m = gen_poisson_mask(dims.ny, dims.nz, rate, (ay, az), mask_seed)?;
            let path = seed_run.out(&format!("r{rate}.msk"));
            m.save(&path)?;
            seed_run.output(&path);
            seed_run.seeds.insert(format!("mask/r{rate}"), mask_seed);
            per_rate.push(m);
        }
        let config = [("snr", snr.to_string()), ("dims", dims.to_string()), ("coils", coils.to_string())]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        seed_run.finish(config, None)?;
        run.seeds.insert(format!("phantom/{k}"), seed);
        let vessel = acq
            .spec
            .vessel
            .clone()
            .ok_or_else(|| CliError::Other("standard phantom has no vessel".into()))?;
        data.push(SeedData {
            index: k,
            kspace: acq.noisy,
            reference,
            vessel,
        });
        masks.push(per_rate);
    }
    run.time("setup", start.elapsed().as_secs_f64());

    let mut jobs = Vec::new();
    for (d, per_rate) in data.iter().zip(&masks) {
        for (&rate, m) in rates.iter().zip(per_rate) {
            for method in Method::ALL {
                let d_cfg = ReconConfig::new(method);
                let cfg = ReconConfig {
                    iters: iters.unwrap_or(d_cfg.iters),
                    calib_iters: calib_iters.unwrap_or(d_cfg.calib_iters),
                    seed: derive_seed(root_seed, &format!("network/{}/{rate}/{method}", d.index)),
                    ..d_cfg
                };
                jobs.push(Job {
                    data: d,
                    rate,
                    mask: m,
                    cfg,
                });
            }
        }
    }
    let jobs_start = Instant::now();
    let results: Vec<Result<MetricsRow, CliError>> = jobs.par_iter().map(|j| run_job(j, &root)).collect();
    run.time("jobs", jobs_start.elapsed().as_secs_f64());
    let mut rows = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    rows.sort_by(|a, b| {
        a.method
            .cmp(&b.method)
            .then(a.rate.total_cmp(&b.rate))
            .then(a.seed.cmp(&b.seed))
    });

    let mut table = format!("{ROW_HEADER}\n");
    for r in &rows {
        table.push_str(&r.to_csv());
        table.push('\n');
    }
    write_text(run, ROWS_FILE, &table)?;
    let agg = aggregate_csv(&aggregate(&rows));
    write_text(run, AGGREGATE_FILE, &agg)?;
    write_text(run, BENCH_TTEST_FILE, &bench_ttests(&rows, &rates)?)?;
    print!("{agg}");
    Ok(())
}
