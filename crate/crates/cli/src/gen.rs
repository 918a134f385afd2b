//! `gen`: write instance JSON files and offline dataset JSONL files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Subcommand, ValueEnum};
use serde::Deserialize;

use ftpedel::instances::{
    gen_mab_verification, gen_minimax, gen_random_tabular, gen_separation,
    minimax_offline_schedule, FeatureMode, InstanceBundle,
};
use ftpedel::mdp_core::Policy;
use ftpedel::offline::generate_offline;
use ftpedel::rng::SplitRng;

use crate::common;

#[derive(Subcommand)]
pub enum GenCommands {
    /// Two-variant hard pair where offline data alone cannot separate the
    /// optimal policies but cuts the online cost.
    Separation(SeparationArgs),
    /// Single-state family with sign-pattern rewards and a known offline
    /// schedule.
    Minimax(MinimaxArgs),
    /// Multi-armed bandit with one optimal arm and a fixed margin.
    Mab(MabArgs),
    /// Random tabular instance, reproducible from its seed.
    Random(RandomArgs),
    /// Offline dataset for an existing instance file.
    Offline(OfflineArgs),
}

pub fn execute(cmd: GenCommands) -> Result<()> {
    match cmd {
        GenCommands::Separation(args) => separation(args),
        GenCommands::Minimax(args) => minimax(args),
        GenCommands::Mab(args) => mab(args),
        GenCommands::Random(args) => random(args),
        GenCommands::Offline(args) => offline(args),
    }
}

fn write_bundle(out: &PathBuf, bundle: &InstanceBundle) -> Result<()> {
    common::write_json(out, bundle)?;
    eprintln!("wrote instance {} ({})", common::display(out), bundle.name);
    Ok(())
}

#[derive(Args)]
pub struct SeparationArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Separation scale in (0, 0.05].
    #[arg(long)]
    eps: Option<f64>,
    /// Variant 1 or 2 of the pair.
    #[arg(long)]
    variant: Option<u8>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
struct SeparationConfig {
    eps: Option<f64>,
    variant: Option<u8>,
    out: Option<PathBuf>,
}

fn separation(args: SeparationArgs) -> Result<()> {
    let cfg: SeparationConfig = common::load_config(args.config.as_deref())?;
    let eps = common::require(common::merged(args.eps, cfg.eps), "eps")?;
    let variant = common::merged(args.variant, cfg.variant).unwrap_or(1);
    let out = common::require(common::merged(args.out, cfg.out), "out")?;
    write_bundle(&out, &gen_separation(eps, variant)?)
}

#[derive(Args)]
pub struct MinimaxArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
    /// Reward scale; at most 1/(20 sqrt(dim)).
    #[arg(long)]
    mu: Option<f64>,
    /// Action-grid size excluding the zero action; at least 2*dim.
    #[arg(long)]
    grid: Option<usize>,
    /// Per-step sign rows, steps separated by ';', e.g. "++;+-".
    #[arg(long)]
    signs: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
struct MinimaxConfig {
    dim: Option<usize>,
    horizon: Option<usize>,
    mu: Option<f64>,
    grid: Option<usize>,
    signs: Option<Vec<Vec<f64>>>,
    out: Option<PathBuf>,
}

fn parse_signs(spec: &str) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::new();
    for step in spec.split(';') {
        let mut row = Vec::new();
        for ch in step.trim().chars() {
            match ch {
                '+' => row.push(1.0),
                '-' => row.push(-1.0),
                other => bail!("sign rows use only '+' and '-', got {other:?}"),
            }
        }
        rows.push(row);
    }
    Ok(rows)
}

fn minimax(args: MinimaxArgs) -> Result<()> {
    let cfg: MinimaxConfig = common::load_config(args.config.as_deref())?;
    let dim = common::require(common::merged(args.dim, cfg.dim), "dim")?;
    let horizon = common::merged(args.horizon, cfg.horizon).unwrap_or(1);
    let mu = common::require(common::merged(args.mu, cfg.mu), "mu")?;
    let grid = common::merged(args.grid, cfg.grid).unwrap_or(2 * dim);
    let signs = match (args.signs, cfg.signs) {
        (Some(spec), _) => parse_signs(&spec)?,
        (None, Some(rows)) => rows,
        (None, None) => vec![vec![1.0; dim]; horizon],
    };
    let out = common::require(common::merged(args.out, cfg.out), "out")?;
    write_bundle(&out, &gen_minimax(dim, horizon, &signs, mu, grid)?)
}

#[derive(Args)]
pub struct MabArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Gap scale in (0, 1/3); suboptimal arms sit 3*eps below the best.
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    arms: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
struct MabConfig {
    eps: Option<f64>,
    arms: Option<usize>,
    out: Option<PathBuf>,
}

fn mab(args: MabArgs) -> Result<()> {
    let cfg: MabConfig = common::load_config(args.config.as_deref())?;
    let eps = common::require(common::merged(args.eps, cfg.eps), "eps")?;
    let arms = common::merged(args.arms, cfg.arms).unwrap_or(4);
    let out = common::require(common::merged(args.out, cfg.out), "out")?;
    write_bundle(&out, &gen_mab_verification(eps, arms)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Basis,
    RandomUnit,
}

#[derive(Args)]
pub struct RandomArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    states: Option<usize>,
    #[arg(long)]
    actions: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Feature dimension for random-unit mode.
    #[arg(long)]
    feature_dim: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
struct RandomConfig {
    states: Option<usize>,
    actions: Option<usize>,
    horizon: Option<usize>,
    seed: Option<u64>,
    mode: Option<FeatureMode>,
    out: Option<PathBuf>,
}

fn random(args: RandomArgs) -> Result<()> {
    let cfg: RandomConfig = common::load_config(args.config.as_deref())?;
    let states = common::require(common::merged(args.states, cfg.states), "states")?;
    let actions = common::require(common::merged(args.actions, cfg.actions), "actions")?;
    let horizon = common::require(common::merged(args.horizon, cfg.horizon), "horizon")?;
    let seed = common::merged(args.seed, cfg.seed).unwrap_or(0);
    let mode = match args.mode {
        Some(ModeArg::Basis) => FeatureMode::Basis,
        Some(ModeArg::RandomUnit) => FeatureMode::RandomUnit {
            dim: common::require(args.feature_dim, "feature-dim")?,
        },
        None => cfg.mode.unwrap_or(FeatureMode::Basis),
    };
    let out = common::require(common::merged(args.out, cfg.out), "out")?;
    write_bundle(&out, &gen_random_tabular(states, actions, horizon, seed, mode)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Schedule {
    /// Sample episodes under the instance's logging policy.
    Logging,
    /// Sample episodes under the uniform-random policy.
    Uniform,
    /// The deterministic schedule for the minimax family: half zero-action
    /// episodes, half cycling the positive basis directions.
    Minimax,
}

#[derive(Args)]
pub struct OfflineArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Instance JSON file to sample from.
    #[arg(long)]
    instance: Option<PathBuf>,
    #[arg(long)]
    episodes: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    schedule: Option<Schedule>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
struct OfflineConfig {
    instance: Option<PathBuf>,
    episodes: Option<u64>,
    seed: Option<u64>,
    schedule: Option<Schedule>,
    out: Option<PathBuf>,
}

fn offline(args: OfflineArgs) -> Result<()> {
    let cfg: OfflineConfig = common::load_config(args.config.as_deref())?;
    let instance = common::require(common::merged(args.instance, cfg.instance), "instance")?;
    let episodes = common::require(common::merged(args.episodes, cfg.episodes), "episodes")?;
    let seed = common::merged(args.seed, cfg.seed).unwrap_or(0);
    let schedule = common::merged(args.schedule, cfg.schedule).unwrap_or(Schedule::Logging);
    let out = common::require(common::merged(args.out, cfg.out), "out")?;

    let bundle = common::load_bundle(&instance)?;
    let mut rng = SplitRng::new(seed);
    let dataset = match schedule {
        Schedule::Logging => {
            let Some(logging) = &bundle.logging_policy else {
                bail!(
                    "instance {} has no logging policy; use --schedule uniform or minimax",
                    bundle.name
                );
            };
            generate_offline(&bundle.mdp, logging, episodes, &mut rng)?
        }
        Schedule::Uniform => {
            let uniform = Policy::uniform_random(&bundle.mdp);
            generate_offline(&bundle.mdp, &uniform, episodes, &mut rng)?
        }
        Schedule::Minimax => minimax_offline_schedule(&bundle.mdp, episodes, &mut rng)?,
    };

    let file = File::create(&out).with_context(|| format!("creating {}", out.display()))?;
    let mut writer = BufWriter::new(file);
    dataset.write_jsonl(&mut writer)?;
    writer.flush().with_context(|| format!("writing {}", out.display()))?;
    eprintln!(
        "wrote dataset {} ({} episodes of {})",
        common::display(&out),
        episodes,
        bundle.name
    );
    Ok(())
}
