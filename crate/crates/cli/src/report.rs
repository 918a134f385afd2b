//! `report`: aggregate records CSVs into a summary table and plot data.
//!
//! Rows are grouped by (instance, algorithm, eps). A success is either an
//! eps-optimal returned policy (exact gap at most eps) or a reached
//! verdict (certified or refuted); empty and budget-exhausted outcomes
//! count against the rate. With `--baseline`, matching groups gain a
//! paired median-episode ratio column, the headline quantity for
//! with-offline versus from-scratch comparisons. The plot JSON carries
//! one series per (instance family, algorithm) with a log-log slope of
//! median episodes against eps when at least two accuracies are present.

use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::Serialize;

use crate::common::{self, RecordRow};

#[derive(Args)]
pub struct ReportArgs {
    /// Records CSV produced by `run`.
    #[arg(long)]
    records: PathBuf,
    /// Second records CSV to compare medians against.
    #[arg(long)]
    baseline: Option<PathBuf>,
    /// Summary CSV path.
    #[arg(long)]
    out: PathBuf,
    /// Plot-data JSON path.
    #[arg(long)]
    plot: Option<PathBuf>,
}

#[derive(Serialize)]
struct SummaryRow {
    instance: String,
    algorithm: String,
    eps: f64,
    runs: usize,
    success_rate: f64,
    median_online_episodes: u64,
    chose_policy: usize,
    no_verdict: usize,
    certified: usize,
    refuted: usize,
    budget_exhausted: usize,
    median_episode_ratio: Option<f64>,
}

#[derive(Serialize)]
struct PlotPoint {
    eps: f64,
    median_online_episodes: u64,
}

#[derive(Serialize)]
struct PlotSeries {
    family: String,
    algorithm: String,
    points: Vec<PlotPoint>,
    #[serde(skip_serializing_if = "Option::is_none")]
    slope: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    r2: Option<f64>,
}

#[derive(Serialize)]
struct PlotData {
    series: Vec<PlotSeries>,
}

type GroupKey = (String, String, String);

fn read_records(path: &PathBuf) -> Result<Vec<RecordRow>> {
    let mut reader = csv::Reader::from_path(path)
        .with_context(|| format!("opening records {}", path.display()))?;
    let rows: Vec<RecordRow> = reader
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("parsing records {}", path.display()))?;
    if rows.is_empty() {
        bail!("no records in {}", path.display());
    }
    Ok(rows)
}

fn group(rows: &[RecordRow]) -> BTreeMap<GroupKey, Vec<&RecordRow>> {
    let mut groups: BTreeMap<GroupKey, Vec<&RecordRow>> = BTreeMap::new();
    for row in rows {
        let key = (row.instance.clone(), row.algorithm.clone(), format!("{}", row.eps));
        groups.entry(key).or_default().push(row);
    }
    groups
}

fn median_u64(values: &mut Vec<u64>) -> u64 {
    values.sort_unstable();
    values[(values.len() - 1) / 2]
}

fn is_success(row: &RecordRow) -> bool {
    match row.outcome.as_str() {
        "policy" => row.gap.is_some_and(|g| g <= row.eps + 1e-12),
        "certified" | "refuted" => true,
        _ => false,
    }
}

/// Instance names carry their parameters; the family is the name with the
/// accuracy suffix stripped, so `mab-a4-eps0.2` and `mab-a4-eps0.05` chart
/// as one series.
fn family(instance: &str) -> String {
    match instance.find("-eps") {
        Some(pos) => instance[..pos].to_string(),
        None => instance.to_string(),
    }
}

pub fn execute(args: ReportArgs) -> Result<()> {
    let rows = read_records(&args.records)?;
    let groups = group(&rows);

    let baseline_medians: BTreeMap<GroupKey, u64> = match &args.baseline {
        None => BTreeMap::new(),
        Some(path) => {
            let base_rows = read_records(path)?;
            group(&base_rows)
                .into_iter()
                .map(|(key, members)| {
                    let mut episodes: Vec<u64> =
                        members.iter().map(|r| r.online_episodes).collect();
                    (key, median_u64(&mut episodes))
                })
                .collect()
        }
    };
    // Pair a group with the baseline group of the same algorithm when one
    // exists, otherwise with the sole baseline group at the same instance
    // and eps. The fallback is what makes warm-start vs from-scratch
    // comparisons work even though the algorithm labels differ.
    let baseline_for = |key: &GroupKey| -> Option<u64> {
        if let Some(&median) = baseline_medians.get(key) {
            return Some(median);
        }
        let mut matches = baseline_medians
            .iter()
            .filter(|((instance, _, eps), _)| *instance == key.0 && *eps == key.2);
        match (matches.next(), matches.next()) {
            (Some((_, &median)), None) => Some(median),
            _ => None,
        }
    };

    let mut summary = Vec::new();
    for (key, members) in &groups {
        let mut episodes: Vec<u64> = members.iter().map(|r| r.online_episodes).collect();
        let median = median_u64(&mut episodes);
        let count = |outcome: &str| members.iter().filter(|r| r.outcome == outcome).count();
        summary.push(SummaryRow {
            instance: key.0.clone(),
            algorithm: key.1.clone(),
            eps: members[0].eps,
            runs: members.len(),
            success_rate: members.iter().filter(|r| is_success(r)).count() as f64
                / members.len() as f64,
            median_online_episodes: median,
            chose_policy: count("policy"),
            no_verdict: count("empty"),
            certified: count("certified"),
            refuted: count("refuted"),
            budget_exhausted: count("budget-exhausted"),
            median_episode_ratio: baseline_for(key).map(|base| median as f64 / base as f64),
        });
    }

    let mut writer = csv::Writer::from_path(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    for row in &summary {
        writer.serialize(row)?;
    }
    writer.flush()?;
    eprintln!("wrote summary {} ({} groups)", args.out.display(), summary.len());

    let mut series_map: BTreeMap<(String, String), Vec<PlotPoint>> = BTreeMap::new();
    for row in &summary {
        series_map
            .entry((family(&row.instance), row.algorithm.clone()))
            .or_default()
            .push(PlotPoint {
                eps: row.eps,
                median_online_episodes: row.median_online_episodes,
            });
    }
    let mut series = Vec::new();
    for ((family, algorithm), mut points) in series_map {
        points.sort_by(|a, b| a.eps.partial_cmp(&b.eps).unwrap());
        points.dedup_by(|a, b| a.eps == b.eps);
        let fit = fit_loglog(&points);
        series.push(PlotSeries {
            family,
            algorithm,
            points,
            slope: fit.map(|(s, _)| s),
            r2: fit.map(|(_, r)| r),
        });
    }
    for s in &series {
        match (s.slope, s.r2) {
            (Some(slope), Some(r2)) => println!(
                "{} / {}: {} points, log-log slope {slope:.3} (R^2 {r2:.4})",
                s.family,
                s.algorithm,
                s.points.len()
            ),
            _ => println!(
                "{} / {}: {} point(s), no slope fit",
                s.family,
                s.algorithm,
                s.points.len()
            ),
        }
    }
    if let Some(path) = &args.plot {
        common::write_json(path, &PlotData { series })?;
        eprintln!("wrote plot data {}", path.display());
    }
    Ok(())
}

/// Least-squares fit of ln(median episodes) against ln(eps); needs two or
/// more distinct accuracies and positive medians.
fn fit_loglog(points: &[PlotPoint]) -> Option<(f64, f64)> {
    if points.len() < 2 || points.iter().any(|p| p.median_online_episodes == 0) {
        return None;
    }
    let xs: Vec<f64> = points.iter().map(|p| p.eps.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| (p.median_online_episodes as f64).ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let e = y - (slope * x + intercept);
            e * e
        })
        .sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let r2 = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Some((slope, r2))
}
