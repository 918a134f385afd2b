//! `eval`: coverage diagnostics for an instance/dataset pair. Reports
//! concentrability of the named policies, the offline-to-online transfer
//! coefficient over an online-episode grid, the per-step online top-up
//! needed to reach a target coverage level, and the verifiability margins.
//! Step indices in all outputs are 0-based.

use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use serde::{Deserialize, Serialize};

use ftpedel::mdp_core::Policy;
use ftpedel::offline::{c_o2o, concentrability, t_o2o, StepCovariates};
use ftpedel::verify::{check_verifiability_condition, VerifiabilityReport};
use ftpedel::visitation::exact_profile;

use crate::common::{self, ClassKind};

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    instance: Option<PathBuf>,
    /// Offline dataset JSONL file.
    #[arg(long)]
    offline: Option<PathBuf>,
    /// Accuracy floor for gap-weighted quantities.
    #[arg(long)]
    eps: Option<f64>,
    /// Coverage threshold: the top-up targets transfer coefficient 1/beta.
    #[arg(long)]
    beta: Option<f64>,
    /// Online-episode grid for the transfer coefficient, e.g. "0,256,4096".
    #[arg(long)]
    t_grid: Option<String>,
    #[arg(long)]
    fw_iters: Option<usize>,
    #[arg(long, value_enum)]
    class: Option<ClassKind>,
    #[arg(long)]
    cap: Option<u128>,
    #[arg(long)]
    out_json: Option<PathBuf>,
    #[arg(long)]
    out_csv: Option<PathBuf>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
struct EvalConfig {
    instance: Option<PathBuf>,
    offline: Option<PathBuf>,
    eps: Option<f64>,
    beta: Option<f64>,
    t_grid: Option<String>,
    fw_iters: Option<usize>,
    class: Option<ClassKind>,
    cap: Option<u128>,
    out_json: Option<PathBuf>,
    out_csv: Option<PathBuf>,
}

#[derive(Serialize)]
struct PolicyCoverage {
    policy: String,
    value: f64,
}

#[derive(Serialize)]
struct TransferPoint {
    step: usize,
    t_online: u64,
    value: f64,
}

#[derive(Serialize)]
struct TopupPoint {
    step: usize,
    episodes: u64,
}

#[derive(Serialize)]
struct EvalReport {
    instance: String,
    offline_episodes: u64,
    eps: f64,
    beta: f64,
    class_size: usize,
    concentrability: Vec<PolicyCoverage>,
    transfer: Vec<TransferPoint>,
    online_topup: Vec<TopupPoint>,
    verifiability: VerifiabilityReport,
}

pub fn execute(args: EvalArgs) -> Result<()> {
    let cfg: EvalConfig = common::load_config(args.config.as_deref())?;
    let instance = common::require(common::merged(args.instance, cfg.instance), "instance")?;
    let offline = common::require(common::merged(args.offline, cfg.offline), "offline")?;
    let eps = common::require(common::merged(args.eps, cfg.eps), "eps")?;
    let beta = common::require(common::merged(args.beta, cfg.beta), "beta")?;
    let t_grid = common::parse_grid(
        common::merged(args.t_grid, cfg.t_grid)
            .as_deref()
            .unwrap_or("0,256,4096"),
    )?;
    let fw_iters = common::merged(args.fw_iters, cfg.fw_iters).unwrap_or(400);
    let class_kind = common::merged(args.class, cfg.class);
    let cap = common::merged(args.cap, cfg.cap);
    let out_json = common::merged(args.out_json, cfg.out_json);
    let out_csv = common::merged(args.out_csv, cfg.out_csv);

    let bundle = common::load_bundle(&instance)?;
    let mdp = &bundle.mdp;
    let dataset = common::load_dataset(&offline, mdp)?;
    let summary = dataset.summarize(mdp)?;
    let cov = StepCovariates::from_summary(&summary, mdp, 1.0 / mdp.feature_dim() as f64);
    let class = common::resolve_class(mdp, class_kind, cap)?;

    let mut report = EvalReport {
        instance: bundle.name.clone(),
        offline_episodes: summary.episodes(),
        eps,
        beta,
        class_size: class.len(),
        concentrability: Vec::new(),
        transfer: Vec::new(),
        online_topup: Vec::new(),
        verifiability: check_verifiability_condition(mdp, &class, &summary, eps, beta)?,
    };

    let mut named: Vec<(String, Policy)> =
        vec![("optimal".into(), bundle.optimal_policy.clone())];
    if let Some(logging) = &bundle.logging_policy {
        named.push(("logging".into(), logging.clone()));
    }
    named.push(("uniform".into(), Policy::uniform_random(mdp)));
    for (name, policy) in &named {
        let phis = exact_profile(mdp, policy)?.feature_visitations;
        report.concentrability.push(PolicyCoverage {
            policy: name.clone(),
            value: concentrability(&phis, &cov)?,
        });
    }

    for step in 0..mdp.horizon() {
        for &t in &t_grid {
            report.transfer.push(TransferPoint {
                step,
                t_online: t,
                value: c_o2o(mdp, &class, &cov, eps, t, step, fw_iters)?.value,
            });
        }
        report.online_topup.push(TopupPoint {
            step,
            episodes: t_o2o(mdp, &class, &cov, eps, beta, step, fw_iters)?,
        });
    }

    for row in &report.concentrability {
        println!("concentrability {}: {}", row.policy, row.value);
    }
    for point in &report.online_topup {
        println!(
            "online top-up to reach 1/beta = {} at step {}: {} episodes",
            1.0 / beta,
            point.step,
            point.episodes
        );
    }
    println!(
        "verifiability: ratio clause {}, eigenvalue clause {}",
        if report.verifiability.ratio_ok { "holds" } else { "fails" },
        if report.verifiability.min_eig_ok { "holds" } else { "fails" },
    );

    if let Some(path) = &out_json {
        common::write_json(path, &report)?;
        eprintln!("wrote report {}", path.display());
    }
    if let Some(path) = &out_csv {
        write_csv(path, &report)?;
        eprintln!("wrote table {}", path.display());
    }
    Ok(())
}

fn write_csv(path: &PathBuf, report: &EvalReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["quantity", "policy", "step", "parameter", "value"])?;
    for row in &report.concentrability {
        w.write_record(["concentrability", &row.policy, "", "", &format!("{}", row.value)])?;
    }
    for p in &report.transfer {
        w.write_record([
            "transfer-coefficient",
            "",
            &p.step.to_string(),
            &p.t_online.to_string(),
            &format!("{}", p.value),
        ])?;
    }
    for p in &report.online_topup {
        w.write_record([
            "online-topup",
            "",
            &p.step.to_string(),
            &format!("{}", report.beta),
            &p.episodes.to_string(),
        ])?;
    }
    for s in &report.verifiability.steps {
        let step = s.step.to_string();
        for (name, value) in [
            ("verify-ratio", s.max_ratio),
            ("verify-ratio-bound", s.ratio_bound),
            ("verify-min-eig-span", s.min_eig_span),
            ("verify-min-eig-full", s.min_eig_full),
            ("verify-min-eig-floor", s.min_eig_bound),
        ] {
            w.write_record([name, "", &step, "", &format!("{value}")])?;
        }
    }
    w.flush()?;
    Ok(())
}
