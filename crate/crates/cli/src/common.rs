//! Shared plumbing: config files, file formats, seed specs, and policy
//! class resolution.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use ftpedel::instances::InstanceBundle;
use ftpedel::mdp_core::LinearMdp;
use ftpedel::offline::OfflineDataset;
use ftpedel::visitation::{enumerate_det_policies, PolicyClass, DEFAULT_ENUM_CAP};

/// Parse a command's JSON config file, or fall back to the all-empty
/// config when no file is given. Unknown keys are rejected by the config
/// structs themselves.
pub fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let file = File::open(p).with_context(|| format!("opening config {}", p.display()))?;
            serde_json::from_reader(BufReader::new(file))
                .with_context(|| format!("parsing config {}", p.display()))
        }
    }
}

/// `flag.or(config)`: command-line values win over config-file values.
pub fn merged<T>(flag: Option<T>, config: Option<T>) -> Option<T> {
    flag.or(config)
}

pub fn require<T>(value: Option<T>, name: &str) -> Result<T> {
    value.ok_or_else(|| {
        anyhow::Error::from(ftpedel::Error::Config(format!(
            "missing required parameter `{name}` (flag or config key)"
        )))
    })
}

pub fn load_bundle(path: &Path) -> Result<InstanceBundle> {
    let file = File::open(path).with_context(|| format!("opening instance {}", path.display()))?;
    serde_json::from_reader(BufReader::new(file))
        .with_context(|| format!("parsing instance {}", path.display()))
}

pub fn load_dataset(path: &Path, mdp: &LinearMdp) -> Result<OfflineDataset> {
    let file = File::open(path).with_context(|| format!("opening dataset {}", path.display()))?;
    OfflineDataset::read_jsonl(BufReader::new(file), mdp)
        .with_context(|| format!("parsing dataset {}", path.display()))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut out = BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    );
    out.write_all(text.as_bytes())
        .and_then(|()| out.flush())
        .with_context(|| format!("writing {}", path.display()))
}

/// Pretty JSON with a trailing newline, the shape all JSON artifacts use.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ClassKind {
    /// Deterministic policies over reachable state slots only.
    DetPruned,
    /// All deterministic policies, including unreachable-slot variants.
    DetFull,
}

pub fn resolve_class(
    mdp: &LinearMdp,
    kind: Option<ClassKind>,
    cap: Option<u128>,
) -> Result<PolicyClass> {
    let kind = kind.unwrap_or(ClassKind::DetPruned);
    let cap = cap.unwrap_or(DEFAULT_ENUM_CAP);
    Ok(enumerate_det_policies(
        mdp,
        cap,
        kind == ClassKind::DetPruned,
    )?)
}

/// Seed specs: either an inclusive range `a..b` or a comma-separated list.
/// The result is sorted and deduplicated, which also fixes record order.
pub fn parse_seeds(spec: &str) -> Result<Vec<u64>> {
    let mut seeds = Vec::new();
    if let Some((lo, hi)) = spec.split_once("..") {
        let lo: u64 = lo.trim().parse().context("seed range start")?;
        let hi: u64 = hi.trim().parse().context("seed range end")?;
        if lo > hi {
            bail!("empty seed range {spec:?}");
        }
        seeds.extend(lo..=hi);
    } else {
        for part in spec.split(',') {
            seeds.push(part.trim().parse::<u64>().with_context(|| format!("seed {part:?}"))?);
        }
    }
    seeds.sort_unstable();
    seeds.dedup();
    if seeds.is_empty() {
        bail!("no seeds in {spec:?}");
    }
    Ok(seeds)
}

/// Comma-separated online episode grid, e.g. `0,256,4096`.
pub fn parse_grid(spec: &str) -> Result<Vec<u64>> {
    let mut grid = Vec::new();
    for part in spec.split(',') {
        grid.push(part.trim().parse::<u64>().with_context(|| format!("grid entry {part:?}"))?);
    }
    if grid.is_empty() {
        bail!("empty grid {spec:?}");
    }
    Ok(grid)
}

pub fn display(path: &PathBuf) -> String {
    path.display().to_string()
}

/// One row of a records CSV, one per (seed, algorithm) run. The gap is
/// always recomputed from exact visitation profiles, never taken from the
/// algorithm under test. Wall-clock timings go to stderr, not here: the
/// records must be byte-reproducible across identical invocations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecordRow {
    pub seed: u64,
    pub instance: String,
    pub algorithm: String,
    pub eps: f64,
    /// `policy`, `empty`, `certified`, `refuted`, or `budget-exhausted`.
    pub outcome: String,
    pub policy: Option<usize>,
    pub witness: Option<usize>,
    pub gap: Option<f64>,
    pub online_episodes: u64,
    pub doublings: u32,
    pub diagnostics: Option<String>,
}
