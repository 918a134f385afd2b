//! `run`: execute an algorithm across seeds and write a records CSV.
//!
//! Seeds run in the shared worker pool; every seed derives all its
//! randomness from its own value (stream 1 for per-seed offline data,
//! stream 2 for the algorithm), so the records are identical for any pool
//! size. Rows are written in seed order. The command exits with code 3
//! when any run exhausted its episode budget, after writing all rows.

use std::path::PathBuf;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use ftpedel::ftpedel::{ftpedel, Diagnostics, EpochRow, FtpedelConfig, RegretMinKind};
use ftpedel::instances::InstanceBundle;
use ftpedel::mdp_core::Policy;
use ftpedel::offline::{generate_offline_summary, DataSummary};
use ftpedel::rng::SplitRng;
use ftpedel::verify::{offline_verify, verify_policy, CoverageReport, VerdictOutcome};
use ftpedel::visitation::{exact_profile, PolicyClass};

use crate::common::{self, ClassKind, RecordRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    /// Elimination with the offline dataset as a warm start.
    Ftpedel,
    /// Elimination from scratch; offline options are rejected.
    PureOnline,
    /// Selection from the offline dataset alone, no interaction.
    OfflineVerify,
    /// Certify or refute a candidate policy.
    VerifyPolicy,
}

impl Algorithm {
    fn name(self) -> &'static str {
        match self {
            Algorithm::Ftpedel => "ftpedel",
            Algorithm::PureOnline => "pure-online",
            Algorithm::OfflineVerify => "offline-verify",
            Algorithm::VerifyPolicy => "verify-policy",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum RegminArg {
    PolicyUcb,
    OraclePlanner,
}

impl From<RegminArg> for RegretMinKind {
    fn from(arg: RegminArg) -> RegretMinKind {
        match arg {
            RegminArg::PolicyUcb => RegretMinKind::PolicyUcb,
            RegminArg::OraclePlanner => RegretMinKind::OraclePlanner,
        }
    }
}

#[derive(Args)]
pub struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    instance: Option<PathBuf>,
    #[arg(long, value_enum)]
    algorithm: Option<Algorithm>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    /// Multiplier on the theoretical confidence width.
    #[arg(long)]
    beta_scale: Option<f64>,
    /// Ridge weight for online covariates; defaults to 1/d.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, value_enum)]
    regmin: Option<RegminArg>,
    /// Global online-episode budget per run.
    #[arg(long)]
    budget: Option<u64>,
    /// Inclusive range "1..20" or comma list "1,5,9".
    #[arg(long)]
    seeds: Option<String>,
    /// Fixed offline dataset shared by all seeds.
    #[arg(long)]
    offline_file: Option<PathBuf>,
    /// Generate this many offline episodes per seed from the logging policy.
    #[arg(long)]
    offline_episodes: Option<u64>,
    /// Candidate for verify-policy: "optimal" or a class index.
    #[arg(long)]
    candidate: Option<String>,
    #[arg(long, value_enum)]
    class: Option<ClassKind>,
    #[arg(long)]
    cap: Option<u128>,
    /// Records CSV path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory for per-seed diagnostics JSON files.
    #[arg(long)]
    diag_dir: Option<PathBuf>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
struct RunConfig {
    instance: Option<PathBuf>,
    algorithm: Option<Algorithm>,
    eps: Option<f64>,
    delta: Option<f64>,
    beta_scale: Option<f64>,
    lambda: Option<f64>,
    regmin: Option<RegretMinKind>,
    budget: Option<u64>,
    seeds: Option<String>,
    offline_file: Option<PathBuf>,
    offline_episodes: Option<u64>,
    candidate: Option<String>,
    class: Option<ClassKind>,
    cap: Option<u128>,
    out: Option<PathBuf>,
    diag_dir: Option<PathBuf>,
}

/// Sidecar diagnostics for one run, written when `--diag-dir` is given.
#[derive(Serialize)]
struct DiagFile {
    seed: u64,
    algorithm: String,
    epochs: Vec<EpochRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    coverage: Option<CoverageReport>,
}

struct Plan {
    bundle: InstanceBundle,
    class: PolicyClass,
    algorithm: Algorithm,
    cfg: FtpedelConfig,
    shared_offline: Option<DataSummary>,
    offline_episodes: Option<u64>,
    candidate: Option<Policy>,
    diag_dir: Option<PathBuf>,
    out_stem: String,
}

pub fn execute(args: RunArgs) -> Result<u8> {
    let cfg: RunConfig = common::load_config(args.config.as_deref())?;
    let instance = common::require(common::merged(args.instance, cfg.instance), "instance")?;
    let algorithm = common::require(common::merged(args.algorithm, cfg.algorithm), "algorithm")?;
    let eps = common::require(common::merged(args.eps, cfg.eps), "eps")?;
    let delta = common::merged(args.delta, cfg.delta).unwrap_or(0.1);
    let beta_scale = common::merged(args.beta_scale, cfg.beta_scale).unwrap_or(1.0);
    let lambda = common::merged(args.lambda, cfg.lambda);
    let regmin = args
        .regmin
        .map(RegretMinKind::from)
        .or(cfg.regmin)
        .unwrap_or(RegretMinKind::PolicyUcb);
    let budget = common::merged(args.budget, cfg.budget);
    let seeds = common::parse_seeds(
        common::merged(args.seeds, cfg.seeds).as_deref().unwrap_or("1..10"),
    )?;
    let offline_file = common::merged(args.offline_file, cfg.offline_file);
    let offline_episodes = common::merged(args.offline_episodes, cfg.offline_episodes);
    let candidate_spec = common::merged(args.candidate, cfg.candidate);
    let class_kind = common::merged(args.class, cfg.class);
    let cap = common::merged(args.cap, cfg.cap);
    let out = common::require(common::merged(args.out, cfg.out), "out")?;
    let diag_dir = common::merged(args.diag_dir, cfg.diag_dir);

    if offline_file.is_some() && offline_episodes.is_some() {
        bail!("offline_file and offline_episodes are mutually exclusive");
    }
    let wants_offline = offline_file.is_some() || offline_episodes.is_some();
    match algorithm {
        Algorithm::PureOnline if wants_offline => {
            bail!("pure-online ignores offline data; drop the offline options")
        }
        Algorithm::OfflineVerify if !wants_offline => {
            bail!("offline-verify needs offline_file or offline_episodes")
        }
        _ => {}
    }

    let bundle = common::load_bundle(&instance)?;
    let class = common::resolve_class(&bundle.mdp, class_kind, cap)?;
    if offline_episodes.is_some() && bundle.logging_policy.is_none() {
        bail!(
            "instance {} has no logging policy; pass offline_file instead",
            bundle.name
        );
    }

    let shared_offline = match &offline_file {
        Some(path) => Some(common::load_dataset(path, &bundle.mdp)?.summarize(&bundle.mdp)?),
        None => None,
    };

    let candidate = match algorithm {
        Algorithm::VerifyPolicy => {
            let spec = candidate_spec.as_deref().unwrap_or("optimal");
            Some(resolve_candidate(spec, &bundle, &class)?)
        }
        _ => {
            if candidate_spec.is_some() {
                bail!("--candidate only applies to verify-policy");
            }
            None
        }
    };

    if let Some(dir) = &diag_dir {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let out_stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "records".into());

    let mut alg_cfg = FtpedelConfig::new(eps, delta);
    alg_cfg.beta_scale = beta_scale;
    alg_cfg.lambda = lambda;
    alg_cfg.regmin = regmin;
    if let Some(b) = budget {
        alg_cfg.global_budget = b;
    }

    let plan = Plan {
        bundle,
        class,
        algorithm,
        cfg: alg_cfg,
        shared_offline,
        offline_episodes,
        candidate,
        diag_dir,
        out_stem,
    };

    let results: Vec<RecordRow> = seeds
        .par_iter()
        .map(|&seed| run_seed(&plan, seed))
        .collect::<Result<Vec<_>>>()?;

    let mut writer = csv::Writer::from_path(&out)
        .with_context(|| format!("creating {}", out.display()))?;
    for row in &results {
        writer.serialize(row)?;
    }
    writer.flush()?;
    eprintln!("wrote {} records to {}", results.len(), out.display());

    let capped = results.iter().any(|r| r.outcome == "budget-exhausted");
    Ok(if capped { 3 } else { 0 })
}

fn resolve_candidate(spec: &str, bundle: &InstanceBundle, class: &PolicyClass) -> Result<Policy> {
    if spec == "optimal" {
        return Ok(bundle.optimal_policy.clone());
    }
    let idx: usize = spec
        .parse()
        .with_context(|| format!("candidate must be \"optimal\" or a class index, got {spec:?}"))?;
    class
        .members
        .get(idx)
        .cloned()
        .ok_or_else(|| anyhow::anyhow!("candidate index {idx} outside class of {}", class.len()))
}

fn run_seed(plan: &Plan, seed: u64) -> Result<RecordRow> {
    let mdp = &plan.bundle.mdp;
    let started = Instant::now();

    let offline = match (&plan.shared_offline, plan.offline_episodes) {
        (Some(summary), _) => summary.clone(),
        (None, Some(episodes)) => {
            let logging = plan.bundle.logging_policy.as_ref().unwrap();
            let mut rng = SplitRng::new(seed).split(1);
            generate_offline_summary(mdp, logging, episodes, &mut rng)?
        }
        (None, None) => DataSummary::empty(mdp),
    };
    let alg_rng = SplitRng::new(seed).split(2);

    let gap_of = |policy: &Policy| -> Result<f64> {
        Ok(plan.bundle.optimal_value - exact_profile(mdp, policy)?.value)
    };

    let mut row = RecordRow {
        seed,
        instance: plan.bundle.name.clone(),
        algorithm: plan.algorithm.name().into(),
        eps: plan.cfg.eps,
        outcome: String::new(),
        policy: None,
        witness: None,
        gap: None,
        online_episodes: 0,
        doublings: 0,
        diagnostics: None,
    };
    let mut diag = Diagnostics::default();
    let mut coverage = None;

    match plan.algorithm {
        Algorithm::Ftpedel | Algorithm::PureOnline => {
            match ftpedel(mdp, &plan.class, &offline, &plan.cfg, &alg_rng, &mut diag) {
                Ok(out) => {
                    row.outcome = "policy".into();
                    row.policy = Some(out.chosen);
                    row.gap = Some(gap_of(&plan.class.members[out.chosen])?);
                    row.online_episodes = out.online_episodes;
                    row.doublings = out.doublings;
                }
                Err(ftpedel::Error::BudgetExhausted { used, .. }) => {
                    row.outcome = "budget-exhausted".into();
                    row.online_episodes = used;
                }
                Err(other) => return Err(other.into()),
            }
        }
        Algorithm::OfflineVerify => {
            let (choice, report) = offline_verify(
                mdp,
                &plan.class,
                &offline,
                plan.cfg.eps,
                plan.cfg.delta,
                plan.cfg.beta_scale,
            )?;
            match choice {
                Some(idx) => {
                    row.outcome = "policy".into();
                    row.policy = Some(idx);
                    row.gap = Some(gap_of(&plan.class.members[idx])?);
                }
                None => row.outcome = "empty".into(),
            }
            coverage = Some(report);
        }
        Algorithm::VerifyPolicy => {
            let candidate = plan.candidate.as_ref().unwrap();
            let verdict =
                verify_policy(mdp, &plan.class, candidate, &offline, &plan.cfg, &alg_rng, &mut diag)?;
            row.outcome = match verdict.outcome {
                VerdictOutcome::Certified => "certified".into(),
                VerdictOutcome::Refuted { witness } => {
                    row.witness = Some(witness);
                    "refuted".into()
                }
                VerdictOutcome::BudgetExhausted => "budget-exhausted".into(),
            };
            row.policy = plan.class.members.iter().position(|p| p == candidate);
            row.gap = Some(gap_of(candidate)?);
            row.online_episodes = verdict.online_episodes;
            row.doublings = verdict.doublings;
        }
    }

    if let Some(dir) = &plan.diag_dir {
        let name = format!("{}.seed{seed}.diag.json", plan.out_stem);
        let path = dir.join(&name);
        common::write_json(
            &path,
            &DiagFile {
                seed,
                algorithm: plan.algorithm.name().into(),
                epochs: diag.epochs,
                coverage,
            },
        )?;
        row.diagnostics = Some(name);
    }

    eprintln!(
        "seed {seed}: {} finished in {:.2}s ({} episodes, outcome {})",
        plan.algorithm.name(),
        started.elapsed().as_secs_f64(),
        row.online_episodes,
        row.outcome
    );
    Ok(row)
}
