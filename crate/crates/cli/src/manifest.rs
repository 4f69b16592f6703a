use std::collections::BTreeMap;
use std::fs;
use std::hash::Hasher;
use std::path::{Path, PathBuf};
use std::time::Instant;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};

pub const MANIFEST_NAME: &str = "manifest.json";

/// 64-bit FNV-1a digest as 16 hex digits.
pub fn fnv64(bytes: &[u8]) -> String {
    let mut h = FnvHasher::default();
    h.write(bytes);
    format!("{:016x}", h.finish())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub fnv64: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: BTreeMap<String, String>,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub timings_s: BTreeMap<String, f64>,
    pub error: Option<String>,
}

/// Bookkeeping for one command invocation; always ends in a manifest.
pub struct Run {
    pub out_dir: PathBuf,
    command: String,
    pub seeds: BTreeMap<String, u64>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    timings: BTreeMap<String, f64>,
    start: Instant,
}

impl Run {
    pub fn new(command: &str, out_dir: &Path) -> Self {
        Run {
            out_dir: out_dir.to_path_buf(),
            command: command.to_string(),
            seeds: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            timings: BTreeMap::new(),
            start: Instant::now(),
        }
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    pub fn time(&mut self, label: &str, seconds: f64) {
        self.timings.insert(label.to_string(), seconds);
    }

    /// Digests every registered file that exists and writes `manifest.json`.
    pub fn finish(mut self, config: BTreeMap<String, String>, error: Option<String>) -> std::io::Result<PathBuf> {
        self.timings
            .insert("total".into(), self.start.elapsed().as_secs_f64());
        let digest = |paths: &[PathBuf]| {
            paths
                .iter()
                .filter_map(|p| {
                    fs::read(p).ok().map(|b| FileDigest {
                        path: p.display().to_string(),
                        fnv64: fnv64(&b),
                    })
                })
                .collect()
        };
        let manifest = RunManifest {
            tool: "ksrecon".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: self.command.clone(),
            config,
            seeds: self.seeds.clone(),
            inputs: digest(&self.inputs),
            outputs: digest(&self.outputs),
            timings_s: self.timings.clone(),
            error,
        };
        fs::create_dir_all(&self.out_dir)?;
        let path = self.out_dir.join(MANIFEST_NAME);
        let text = serde_json::to_string_pretty(&manifest).map_err(std::io::Error::other)?;
        fs::write(&path, text + "\n")?;
        Ok(path)
    }
}
