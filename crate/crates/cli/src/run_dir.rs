use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use icl_core::trainer::RunConfig;
use serde::{Deserialize, Serialize};

pub const MANIFEST_VERSION: u32 = 1;
pub const SEED_ENV: &str = "ICL_LAB_SEED";

/// Where the master seed of a run came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeedSource {
    Config,
    Env,
    Flag,
}

/// `MANIFEST`: everything needed to rerun a training run bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub tool: String,
    pub version: String,
    pub precision: String,
    pub seed: u64,
    pub seed_source: SeedSource,
    /// How every random draw derives from `seed`.
    pub rng: String,
    pub command: Vec<String>,
    pub config: RunConfig,
    pub artifacts: Vec<String>,
}

impl Manifest {
    pub fn new(precision: &str, seed_source: SeedSource, config: &RunConfig) -> Self {
        Self {
            schema_version: MANIFEST_VERSION,
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            precision: precision.into(),
            seed: config.seed,
            seed_source,
            rng: "ChaCha8 stream per (seed, label, index): init/0, train-batch/<step>, validation/0".into(),
            command: std::env::args().collect(),
            config: config.clone(),
            artifacts: Vec::new(),
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join("MANIFEST");
        fs::write(&path, serde_json::to_string_pretty(self)?).with_context(|| format!("writing {}", path.display()))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("MANIFEST");
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let value: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let version = value.get("schema_version").and_then(|v| v.as_u64());
        if version != Some(MANIFEST_VERSION as u64) {
            bail!("{} has schema version {version:?}, expected {MANIFEST_VERSION}", path.display());
        }
        Ok(serde_json::from_value(value)?)
    }
}

/// Reads a run configuration; missing fields take their defaults.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}

/// The master seed after applying, in order, the config, the environment
/// override and the command-line flag.
pub fn resolve_seed(config_seed: u64, env: Option<String>, flag: Option<u64>) -> Result<(u64, SeedSource)> {
    if let Some(s) = flag {
        return Ok((s, SeedSource::Flag));
    }
    if let Some(text) = env {
        let s = text.trim().parse().with_context(|| format!("{SEED_ENV}={text:?} is not an unsigned integer"))?;
        return Ok((s, SeedSource::Env));
    }
    Ok((config_seed, SeedSource::Config))
}

/// Finds a checkpoint given a path or a bare name such as `final` inside
/// `run/checkpoints/`.
pub fn resolve_checkpoint(ckpt: &str, run: &Path) -> Result<PathBuf> {
    let direct = PathBuf::from(ckpt);
    let candidates = [
        direct.clone(),
        run.join(ckpt),
        run.join("checkpoints").join(ckpt),
        run.join("checkpoints").join(format!("{ckpt}.ckpt")),
    ];
    for c in &candidates {
        if c.is_file() {
            return Ok(c.clone());
        }
    }
    bail!("checkpoint {ckpt:?} not found (looked in {})", run.join("checkpoints").display())
}

/// Directory name used as the model label in reports.
pub fn run_label(dir: &Path) -> String {
    dir.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string())
}
