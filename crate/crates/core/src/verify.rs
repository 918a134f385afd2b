//! Verifiable offline learning and online policy verification.
//!
//! [`offline_verify`] attempts to select a near-optimal policy from offline
//! data alone. It estimates every candidate's value once, then walks the
//! elimination epochs checking two coverage clauses per step; any failure
//! aborts with a [`CoverageReport`] naming the offender instead of
//! returning a possibly bad policy. [`check_verifiability_condition`] is
//! the matching diagnostic on exact visitations. [`verify_policy`] settles
//! whether one given policy is `eps`-optimal by running the online
//! elimination machinery with the candidate injected into the class, and
//! [`cover_softmax_class`] builds finite covers of softmax policy classes
//! so the finite-class machinery applies to them.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ftpedel::{
    beta_epoch, check_markov_class, eliminate, epoch_count, lambda_floor_epoch,
    run_estimation_epoch, Diagnostics, EpochParams, FtpedelConfig,
};
use crate::linalg;
use crate::mdp_core::{LinearMdp, Policy};
use crate::offline::DataSummary;
use crate::rng::SplitRng;
use crate::visitation::{exact_profile, PolicyClass};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoverageClause {
    /// Worst whitened candidate visitation exceeded the epoch coverage
    /// budget.
    TargetCoverage,
    /// Minimum eigenvalue of the offline covariates, restricted to the span
    /// of the candidate visitations, fell below the epoch floor.
    MinEigenvalue,
}

/// One clause evaluation per `(epoch, step)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoverageRow {
    pub epoch: u32,
    pub step: usize,
    pub coverage_observed: f64,
    pub coverage_bound: f64,
    pub coverage_ok: bool,
    pub min_eig_observed: f64,
    pub min_eig_bound: f64,
    pub min_eig_ok: bool,
    /// Candidate achieving `coverage_observed`.
    pub worst_policy: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoverageOffender {
    pub epoch: u32,
    pub step: usize,
    pub clause: CoverageClause,
    pub observed: f64,
    pub required: f64,
    /// Offending candidate for a coverage failure.
    pub policy: Option<usize>,
    /// Least-covered unit direction for an eigenvalue failure.
    pub direction: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoverageReport {
    /// True when every clause held through the whole epoch schedule.
    pub satisfied: bool,
    pub rows: Vec<CoverageRow>,
    pub worst: Option<CoverageOffender>,
    pub epochs_checked: u32,
}

/// Keep whichever clause failure overshoots its bound by the largest
/// multiplicative factor.
fn consider_offender(
    worst: &mut Option<CoverageOffender>,
    worst_severity: &mut f64,
    severity: f64,
    offender: CoverageOffender,
) {
    if severity > *worst_severity {
        *worst_severity = severity;
        *worst = Some(offender);
    }
}

/// Selection from offline data alone. Estimates are computed once up
/// front; each epoch then only re-checks coverage of the surviving
/// candidates and eliminates. Returns the surviving policy index, or
/// `None` with the failing clause when the data cannot support a verdict.
pub fn offline_verify(
    mdp: &LinearMdp,
    class: &PolicyClass,
    offline: &DataSummary,
    eps: f64,
    delta: f64,
    beta_scale: f64,
) -> Result<(Option<usize>, CoverageReport)> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::Validation("eps must lie in (0, 1)".into()));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Validation("delta must lie in (0, 1)".into()));
    }
    check_markov_class(class)?;
    let d = mdp.feature_dim();
    let h_len = mdp.horizon();
    let lambda = 1.0 / d as f64;
    let t_off = offline.episodes();

    // One-shot estimation: ridge reward fits and propagated visitations
    // for every candidate, from the offline records only.
    let mut raw_cov = Vec::with_capacity(h_len);
    let mut chols = Vec::with_capacity(h_len);
    for h in 0..h_len {
        let raw = offline.steps[h].covariance(mdp);
        let m = &raw + DMatrix::from_diagonal_element(d, d, lambda);
        chols.push(linalg::cholesky(&m, &format!("inverting the step-{h} covariates"))?);
        raw_cov.push(raw);
    }
    let n = class.len();
    let mut phi_hat: Vec<Vec<DVector<f64>>> = vec![Vec::with_capacity(n); h_len];
    let mut values = vec![0.0; n];
    for (i, policy) in class.members.iter().enumerate() {
        let mut phi = crate::ftpedel::policy_feature(policy, 0, mdp.initial_state(), mdp)?;
        for h in 0..h_len {
            let theta_hat = chols[h].solve(&offline.steps[h].phi_reward(mdp));
            values[i] += phi.dot(&theta_hat);
            phi_hat[h].push(phi.clone());
            if h + 1 < h_len {
                phi = crate::ftpedel::propagate_from_table(
                    &offline.steps[h],
                    &chols[h],
                    policy,
                    h,
                    &phi,
                    mdp,
                )?;
            }
        }
    }

    let mut report = CoverageReport {
        satisfied: false,
        rows: Vec::new(),
        worst: None,
        epochs_checked: 0,
    };
    let mut worst_severity = f64::NEG_INFINITY;
    let mut active: Vec<usize> = (0..n).collect();
    let epochs = epoch_count(eps);
    for epoch in 1..=epochs {
        let eps_epoch = 0.5f64.powi(epoch as i32);
        let beta = beta_epoch(beta_scale, h_len, d, lambda, t_off, 0, n, epoch, delta);
        let floor = lambda_floor_epoch(h_len, n, epoch, delta);
        let mut failed = false;
        for h in 0..h_len {
            let quads: Vec<f64> = active
                .iter()
                .map(|&i| linalg::inv_quad(&chols[h], &phi_hat[h][i]))
                .collect();
            let mut worst_slot = 0;
            for s in 1..quads.len() {
                if quads[s] > quads[worst_slot] {
                    worst_slot = s;
                }
            }
            let coverage_observed = quads[worst_slot];
            let coverage_bound = eps_epoch * eps_epoch / beta;
            let targets: Vec<DVector<f64>> =
                active.iter().map(|&i| phi_hat[h][i].clone()).collect();
            let basis = linalg::orthonormal_span_basis(&targets, 1e-9);
            let (min_eig, direction) = linalg::span_min_eig_pair(&raw_cov[h], &basis);
            let row = CoverageRow {
                epoch,
                step: h,
                coverage_observed,
                coverage_bound,
                coverage_ok: coverage_observed <= coverage_bound,
                min_eig_observed: min_eig,
                min_eig_bound: floor,
                min_eig_ok: min_eig >= floor,
                worst_policy: active[worst_slot],
            };
            if !row.coverage_ok {
                failed = true;
                let severity = coverage_observed / coverage_bound;
                consider_offender(
                    &mut report.worst,
                    &mut worst_severity,
                    severity,
                    CoverageOffender {
                        epoch,
                        step: h,
                        clause: CoverageClause::TargetCoverage,
                        observed: coverage_observed,
                        required: coverage_bound,
                        policy: Some(active[worst_slot]),
                        direction: None,
                    },
                );
            }
            if !row.min_eig_ok {
                failed = true;
                let severity = floor / min_eig.max(1e-300);
                consider_offender(
                    &mut report.worst,
                    &mut worst_severity,
                    severity,
                    CoverageOffender {
                        epoch,
                        step: h,
                        clause: CoverageClause::MinEigenvalue,
                        observed: min_eig,
                        required: floor,
                        policy: None,
                        direction: Some(direction.iter().cloned().collect()),
                    },
                );
            }
            report.rows.push(row);
        }
        report.epochs_checked = epoch;
        if failed {
            return Ok((None, report));
        }
        let active_values: Vec<f64> = active.iter().map(|&i| values[i]).collect();
        let keep = eliminate(&active_values, eps_epoch);
        active = keep.iter().map(|&s| active[s]).collect();
        if active.len() == 1 {
            report.satisfied = true;
            return Ok((Some(active[0]), report));
        }
    }
    report.satisfied = true;
    let mut best = active[0];
    for &i in &active[1..] {
        if values[i] > values[best] {
            best = i;
        }
    }
    Ok((Some(best), report))
}

/// Per-step margins of the verifiability condition on exact visitations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepMargin {
    pub step: usize,
    /// `max_pi |phi_pi|^2_{inv} / max(gap_pi^2, eps^2)`.
    pub max_ratio: f64,
    pub ratio_bound: f64,
    pub ratio_ok: bool,
    pub worst_policy: usize,
    pub min_eig_full: f64,
    /// Minimum eigenvalue restricted to the span of the class visitations;
    /// directions no policy can reach are excluded.
    pub min_eig_span: f64,
    pub min_eig_bound: f64,
    /// Evaluated verbatim on the full-space eigenvalue. This clause may be
    /// an analysis artifact, so it is reported separately and never folded
    /// into `ratio_ok`.
    pub min_eig_ok: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifiabilityReport {
    pub ratio_ok: bool,
    pub min_eig_ok: bool,
    pub satisfied: bool,
    pub steps: Vec<StepMargin>,
    /// Worst coverage ratio per candidate, maximized over steps.
    pub policy_ratios: Vec<f64>,
}

/// Diagnostic form of the coverage condition, evaluated on exact
/// visitation profiles with true gaps. Singular offline covariates are
/// regularized with `1/d` uniformly.
pub fn check_verifiability_condition(
    mdp: &LinearMdp,
    class: &PolicyClass,
    offline: &DataSummary,
    eps: f64,
    beta: f64,
) -> Result<VerifiabilityReport> {
    if class.is_empty() {
        return Err(Error::Validation("policy class is empty".into()));
    }
    if !(eps > 0.0) || !(beta > 0.0) {
        return Err(Error::Validation("eps and beta must be positive".into()));
    }
    let d = mdp.feature_dim();
    let h_len = mdp.horizon();
    let lambda = 1.0 / d as f64;

    let mut profiles = Vec::with_capacity(class.len());
    for policy in &class.members {
        profiles.push(exact_profile(mdp, policy)?);
    }
    let v_star = profiles.iter().map(|p| p.value).fold(f64::NEG_INFINITY, f64::max);
    let denoms: Vec<f64> = profiles
        .iter()
        .map(|p| (v_star - p.value).powi(2).max(eps * eps))
        .collect();

    let eig_bound = (d * d) as f64 / (h_len * h_len) as f64 * beta;
    let mut steps = Vec::with_capacity(h_len);
    let mut policy_ratios = vec![0.0f64; class.len()];
    for h in 0..h_len {
        let raw = offline.steps[h].covariance(mdp);
        let m = &raw + DMatrix::from_diagonal_element(d, d, lambda);
        let chol = linalg::cholesky(&m, &format!("inverting the step-{h} covariates"))?;
        let mut max_ratio = f64::NEG_INFINITY;
        let mut worst = 0;
        for (i, p) in profiles.iter().enumerate() {
            let ratio = linalg::inv_quad(&chol, &p.feature_visitations[h]) / denoms[i];
            policy_ratios[i] = policy_ratios[i].max(ratio);
            if ratio > max_ratio {
                max_ratio = ratio;
                worst = i;
            }
        }
        let targets: Vec<DVector<f64>> = profiles
            .iter()
            .map(|p| p.feature_visitations[h].clone())
            .collect();
        let basis = linalg::orthonormal_span_basis(&targets, 1e-9);
        let min_eig_full = crate::visitation::min_eigval(&raw);
        let min_eig_span = linalg::span_min_eigval(&raw, &basis);
        steps.push(StepMargin {
            step: h,
            max_ratio,
            ratio_bound: 1.0 / beta,
            ratio_ok: max_ratio <= 1.0 / beta,
            worst_policy: worst,
            min_eig_full,
            min_eig_span,
            min_eig_bound: eig_bound,
            min_eig_ok: min_eig_full >= eig_bound,
        });
    }
    let ratio_ok = steps.iter().all(|s| s.ratio_ok);
    let min_eig_ok = steps.iter().all(|s| s.min_eig_ok);
    Ok(VerifiabilityReport {
        ratio_ok,
        min_eig_ok,
        satisfied: ratio_ok && min_eig_ok,
        steps,
        policy_ratios,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "kebab-case")]
pub enum VerdictOutcome {
    /// The candidate is `eps`-optimal with the configured confidence.
    Certified,
    /// The candidate was eliminated; `witness` indexes the empirical best
    /// in the comparison class at that moment.
    Refuted { witness: usize },
    /// The online budget ran out before either verdict was reached.
    BudgetExhausted,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerificationVerdict {
    #[serde(flatten)]
    pub outcome: VerdictOutcome,
    pub online_episodes: u64,
    /// Accuracy actually resolved: `eps`, or the candidate's estimated gap
    /// when refutation ended the run earlier than full resolution.
    pub eps_resolved: f64,
    pub epochs_run: u32,
    pub doublings: u32,
}

enum Attempt {
    Done {
        outcome: VerdictOutcome,
        eps_resolved: f64,
        epochs: u32,
    },
    OutOfBudget,
}

/// Decide whether `candidate` is `cfg.eps`-optimal relative to the best
/// policy in `class`, spending online episodes only as needed. The
/// candidate joins the comparison class, so the exploration designs always
/// cover its visitations. Refutation fires as soon as the candidate is
/// eliminated; certification as soon as its estimated gap is resolved
/// below `eps`. Budget exhaustion is a verdict, not an error.
pub fn verify_policy(
    mdp: &LinearMdp,
    class: &PolicyClass,
    candidate: &Policy,
    offline: &DataSummary,
    cfg: &FtpedelConfig,
    rng: &SplitRng,
    diag: &mut Diagnostics,
) -> Result<VerificationVerdict> {
    check_markov_class(class)?;
    if matches!(candidate, Policy::Mixture { .. }) {
        return Err(Error::Validation(
            "verification requires a Markov candidate policy".into(),
        ));
    }
    let mut aug = class.clone();
    let cand_idx = match aug.members.iter().position(|p| p == candidate) {
        Some(i) => i,
        None => {
            aug.members.push(candidate.clone());
            aug.members.len() - 1
        }
    };
    aug.label = format!("{} + candidate", class.label);

    let lambda = cfg.lambda.unwrap_or(1.0 / mdp.feature_dim() as f64);
    let t_off = offline.episodes();
    let epochs = epoch_count(cfg.eps);

    let mut total: u64 = 0;
    for i in 1..=63u32 {
        if total >= cfg.global_budget {
            return Ok(VerificationVerdict {
                outcome: VerdictOutcome::BudgetExhausted,
                online_episodes: total,
                eps_resolved: cfg.eps,
                epochs_run: 0,
                doublings: i - 1,
            });
        }
        let budget = (1u64 << i).min(cfg.global_budget - total);
        let delta_i = cfg.delta / (2.0 * (i as f64) * (i as f64));
        let attempt = verify_attempt(
            mdp, &aug, cand_idx, offline, budget, cfg, lambda, t_off, delta_i, epochs,
            &rng.split(i as u64), diag, &mut total,
        )?;
        if let Attempt::Done { outcome, eps_resolved, epochs } = attempt {
            return Ok(VerificationVerdict {
                outcome,
                online_episodes: total,
                eps_resolved,
                epochs_run: epochs,
                doublings: i,
            });
        }
    }
    Ok(VerificationVerdict {
        outcome: VerdictOutcome::BudgetExhausted,
        online_episodes: total,
        eps_resolved: cfg.eps,
        epochs_run: 0,
        doublings: 63,
    })
}

#[allow(clippy::too_many_arguments)]
fn verify_attempt(
    mdp: &LinearMdp,
    aug: &PolicyClass,
    cand_idx: usize,
    offline: &DataSummary,
    budget: u64,
    cfg: &FtpedelConfig,
    lambda: f64,
    t_off: u64,
    delta: f64,
    epochs: u32,
    rng: &SplitRng,
    diag: &mut Diagnostics,
    total: &mut u64,
) -> Result<Attempt> {
    let mut active: Vec<usize> = (0..aug.len()).collect();
    let mut spent: u64 = 0;
    for epoch in 1..=epochs {
        let eps_epoch = 0.5f64.powi(epoch as i32);
        let params = EpochParams {
            epoch,
            eps_epoch,
            beta: beta_epoch(
                cfg.beta_scale,
                mdp.horizon(),
                mdp.feature_dim(),
                lambda,
                t_off,
                budget,
                aug.len(),
                epoch,
                delta,
            ),
            lambda_floor: lambda_floor_epoch(mdp.horizon(), aug.len(), epoch, delta),
            lambda,
            budget: budget.saturating_sub(spent),
            delta,
        };
        let row_start = diag.epochs.len();
        let est = run_estimation_epoch(
            mdp,
            aug,
            &active,
            offline,
            &params,
            cfg,
            &rng.split(epoch as u64),
            diag,
        )?;
        spent += est.episodes;
        *total += est.episodes;
        if !est.completed {
            return Ok(Attempt::OutOfBudget);
        }
        let cand_slot = active
            .iter()
            .position(|&i| i == cand_idx)
            .expect("candidate stays active until refutation");
        let sup = est.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let gap_hat = sup - est.values[cand_slot];
        let keep = eliminate(&est.values, eps_epoch);
        let eliminated = active.len() - keep.len();
        for row in &mut diag.epochs[row_start..] {
            row.eliminated = eliminated;
        }
        if !keep.contains(&cand_slot) {
            let mut witness_slot = keep[0];
            for &s in &keep[1..] {
                if est.values[s] > est.values[witness_slot] {
                    witness_slot = s;
                }
            }
            return Ok(Attempt::Done {
                outcome: VerdictOutcome::Refuted {
                    witness: active[witness_slot],
                },
                eps_resolved: cfg.eps.max(gap_hat - 2.0 * eps_epoch),
                epochs: epoch,
            });
        }
        if gap_hat + 2.0 * eps_epoch <= cfg.eps {
            return Ok(Attempt::Done {
                outcome: VerdictOutcome::Certified,
                eps_resolved: cfg.eps,
                epochs: epoch,
            });
        }
        active = keep.iter().map(|&s| active[s]).collect();
    }
    // The schedule resolves to eps / 4, so one of the two exits above fires
    // by the last epoch; this is unreachable with a consistent schedule.
    Err(Error::Validation(
        "verification epoch schedule ended without a verdict".into(),
    ))
}

/// Finite cover of the softmax policy class with weight vectors in the box
/// `[box_lo, box_hi]^d` per step. Grid spacing is chosen from the softmax
/// Lipschitz constant so adjacent policies differ by at most `gamma` in
/// per-state expected features. Since feature norms are at most one, any
/// two policies differ by at most the feature-set diameter 2, so
/// `gamma >= 2` is covered by a single point.
pub fn cover_softmax_class(
    mdp: &LinearMdp,
    eta_sm: f64,
    box_lo: f64,
    box_hi: f64,
    gamma: f64,
    cap: u128,
) -> Result<PolicyClass> {
    if !(gamma > 0.0) {
        return Err(Error::Validation("gamma must be positive".into()));
    }
    if !(eta_sm > 0.0) {
        return Err(Error::Validation("eta_sm must be positive".into()));
    }
    if !(box_hi > box_lo) {
        return Err(Error::Validation("weight box must be nonempty".into()));
    }
    let d = mdp.feature_dim();
    let h_len = mdp.horizon();
    let label = format!("softmax cover eta={eta_sm} gamma={gamma}");

    if gamma >= 2.0 {
        let center = vec![vec![0.5 * (box_lo + box_hi); d]; h_len];
        return Ok(PolicyClass {
            members: vec![Policy::Softmax {
                temperature: eta_sm,
                weights: center,
            }],
            label,
        });
    }

    let spacing = gamma / (2.0 * eta_sm * (h_len as f64).sqrt());
    let steps_f = (box_hi - box_lo) / spacing;
    let intervals = (steps_f - 1e-9).ceil().max(1.0) as usize;
    let per_axis = intervals + 1;
    let actual = (box_hi - box_lo) / intervals as f64;

    let axes = d * h_len;
    let mut count: u128 = 1;
    for _ in 0..axes {
        count = count
            .checked_mul(per_axis as u128)
            .ok_or(Error::EnumerationCap { count: u128::MAX, cap })?;
        if count > cap {
            return Err(Error::EnumerationCap { count, cap });
        }
    }

    let mut members = Vec::with_capacity(count as usize);
    let mut idx = vec![0usize; axes];
    loop {
        let weights: Vec<Vec<f64>> = (0..h_len)
            .map(|h| {
                (0..d)
                    .map(|j| box_lo + idx[h * d + j] as f64 * actual)
                    .collect()
            })
            .collect();
        members.push(Policy::Softmax {
            temperature: eta_sm,
            weights,
        });
        // Odometer with the last axis fastest, for lexicographic order.
        let mut pos = axes;
        loop {
            if pos == 0 {
                return Ok(PolicyClass { members, label });
            }
            pos -= 1;
            idx[pos] += 1;
            if idx[pos] < per_axis {
                break;
            }
            idx[pos] = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ftpedel::RegretMinKind;
    use crate::mdp_core::NoiseModel;
    use crate::offline::generate_offline_summary;
    use crate::visitation::{enumerate_det_policies, DEFAULT_ENUM_CAP};
    use approx::assert_abs_diff_eq;

    fn bandit(theta: &[f64]) -> LinearMdp {
        let d = theta.len();
        LinearMdp::new(
            1,
            d,
            1,
            DMatrix::identity(d, d),
            vec![],
            vec![DVector::from_column_slice(theta)],
            NoiseModel::Bernoulli,
            0,
        )
        .unwrap()
    }

    #[test]
    fn empty_dataset_fails_min_eig_at_every_step() {
        let mdp = bandit(&[0.9, 0.3]);
        let class = enumerate_det_policies(&mdp, 100, false).unwrap();
        let offline = DataSummary::empty(&mdp);
        let (policy, report) =
            offline_verify(&mdp, &class, &offline, 0.1, 0.1, 1.0).unwrap();
        assert!(policy.is_none());
        assert!(!report.satisfied);
        assert!(report.rows.iter().all(|r| !r.min_eig_ok));
        let worst = report.worst.unwrap();
        assert_eq!(worst.clause, CoverageClause::MinEigenvalue);
        assert!(worst.direction.is_some());
    }

    #[test]
    fn rich_uniform_dataset_verifies_best_arm() {
        let mdp = bandit(&[0.9, 0.2, 0.2]);
        let class = enumerate_det_policies(&mdp, 100, false).unwrap();
        let mut rng = SplitRng::new(7);
        let offline =
            generate_offline_summary(&mdp, &Policy::uniform_random(&mdp), 300_000, &mut rng)
                .unwrap();
        let (policy, report) =
            offline_verify(&mdp, &class, &offline, 0.2, 0.1, 0.02).unwrap();
        assert!(report.satisfied);
        assert_eq!(policy, Some(0));
    }

    #[test]
    fn verifiability_flags_uncovered_arms() {
        let mdp = bandit(&[0.9, 0.6, 0.6]);
        let class = enumerate_det_policies(&mdp, 100, false).unwrap();
        // All pulls on arm 0 only.
        let mut offline = DataSummary::empty(&mdp);
        for _ in 0..1000 {
            offline
                .add_transition(
                    &mdp,
                    &crate::mdp_core::Transition {
                        step: 0,
                        state: 0,
                        action: 0,
                        reward: 1.0,
                        next_state: 1,
                    },
                )
                .unwrap();
        }
        let report =
            check_verifiability_condition(&mdp, &class, &offline, 0.1, 10.0).unwrap();
        assert!(!report.ratio_ok);
        // The covered arm is fine; every other arm has a huge ratio.
        assert!(report.policy_ratios[0] <= 0.1);
        assert!(report.policy_ratios[1] > 10.0);
        assert!(report.policy_ratios[2] > 10.0);
        assert!(report.steps[0].worst_policy != 0);
    }

    #[test]
    fn verifiability_passes_with_abundant_isotropic_data() {
        let mdp = bandit(&[0.9, 0.6, 0.6]);
        let class = enumerate_det_policies(&mdp, 100, false).unwrap();
        let beta = 10.0;
        let mut offline = DataSummary::empty(&mdp);
        // d^2 / H^2 * beta = 90; a thousand pulls per arm clears it.
        for a in 0..3 {
            for _ in 0..1000 {
                offline
                    .add_transition(
                        &mdp,
                        &crate::mdp_core::Transition {
                            step: 0,
                            state: 0,
                            action: a,
                            reward: 0.0,
                            next_state: 1,
                        },
                    )
                    .unwrap();
            }
        }
        let report =
            check_verifiability_condition(&mdp, &class, &offline, 0.1, beta).unwrap();
        assert!(report.satisfied, "margins: {:?}", report.steps);
        assert!(report.min_eig_ok);
    }

    #[test]
    fn margins_shrink_when_dataset_grows() {
        let mdp = bandit(&[0.9, 0.6]);
        let class = enumerate_det_policies(&mdp, 100, false).unwrap();
        let mut rng = SplitRng::new(3);
        let small =
            generate_offline_summary(&mdp, &Policy::uniform_random(&mdp), 500, &mut rng).unwrap();
        let mut big = small.clone();
        let more =
            generate_offline_summary(&mdp, &Policy::uniform_random(&mdp), 4000, &mut rng).unwrap();
        big.merge(&more).unwrap();
        let r_small = check_verifiability_condition(&mdp, &class, &small, 0.1, 5.0).unwrap();
        let r_big = check_verifiability_condition(&mdp, &class, &big, 0.1, 5.0).unwrap();
        for (a, b) in r_small.steps.iter().zip(&r_big.steps) {
            assert!(b.max_ratio < a.max_ratio);
            assert!(b.min_eig_full > a.min_eig_full);
        }
    }

    fn verify_cfg(eps: f64) -> FtpedelConfig {
        let mut cfg = FtpedelConfig::new(eps, 0.1);
        cfg.beta_scale = 0.05;
        cfg.regmin = RegretMinKind::OraclePlanner;
        cfg
    }

    #[test]
    fn optimal_candidate_is_certified() {
        let mdp = bandit(&[0.9, 0.2, 0.2]);
        let class = enumerate_det_policies(&mdp, 100, false).unwrap();
        let candidate = class.members[0].clone();
        let mut diag = Diagnostics::default();
        let verdict = verify_policy(
            &mdp,
            &class,
            &candidate,
            &DataSummary::empty(&mdp),
            &verify_cfg(0.2),
            &SplitRng::new(11),
            &mut diag,
        )
        .unwrap();
        assert_eq!(verdict.outcome, VerdictOutcome::Certified);
        assert!(verdict.online_episodes > 0);
        assert_abs_diff_eq!(verdict.eps_resolved, 0.2);
    }

    #[test]
    fn bad_candidate_is_refuted_with_best_witness() {
        let mdp = bandit(&[0.9, 0.2, 0.2]);
        let class = enumerate_det_policies(&mdp, 100, false).unwrap();
        let candidate = class.members[1].clone();
        let mut diag = Diagnostics::default();
        let verdict = verify_policy(
            &mdp,
            &class,
            &candidate,
            &DataSummary::empty(&mdp),
            &verify_cfg(0.2),
            &SplitRng::new(13),
            &mut diag,
        )
        .unwrap();
        assert_eq!(verdict.outcome, VerdictOutcome::Refuted { witness: 0 });
    }

    #[test]
    fn refutation_is_cheaper_than_tight_certification() {
        let mdp = bandit(&[0.9, 0.2, 0.2]);
        let class = enumerate_det_policies(&mdp, 100, false).unwrap();
        let mut diag = Diagnostics::default();
        let refute = verify_policy(
            &mdp,
            &class,
            &class.members[1].clone(),
            &DataSummary::empty(&mdp),
            &verify_cfg(0.05),
            &SplitRng::new(29),
            &mut diag,
        )
        .unwrap();
        let mut diag2 = Diagnostics::default();
        let certify = verify_policy(
            &mdp,
            &class,
            &class.members[0].clone(),
            &DataSummary::empty(&mdp),
            &verify_cfg(0.05),
            &SplitRng::new(29),
            &mut diag2,
        )
        .unwrap();
        assert!(matches!(refute.outcome, VerdictOutcome::Refuted { .. }));
        assert_eq!(certify.outcome, VerdictOutcome::Certified);
        assert!(refute.online_episodes < certify.online_episodes);
        assert!(refute.eps_resolved > 0.05);
    }

    #[test]
    fn tiny_global_budget_yields_budget_verdict() {
        let mdp = bandit(&[0.9, 0.2]);
        let class = enumerate_det_policies(&mdp, 100, false).unwrap();
        let mut cfg = verify_cfg(0.05);
        cfg.global_budget = 4;
        let mut diag = Diagnostics::default();
        let verdict = verify_policy(
            &mdp,
            &class,
            &class.members[0].clone(),
            &DataSummary::empty(&mdp),
            &cfg,
            &SplitRng::new(1),
            &mut diag,
        )
        .unwrap();
        assert_eq!(verdict.outcome, VerdictOutcome::BudgetExhausted);
    }

    #[test]
    fn softmax_cover_has_expected_grid_size() {
        let mdp = bandit(&[0.5, 0.5]);
        let class = cover_softmax_class(&mdp, 1.0, -1.0, 1.0, 0.5, DEFAULT_ENUM_CAP).unwrap();
        assert_eq!(class.len(), 81);
        match &class.members[0] {
            Policy::Softmax { weights, .. } => {
                assert_abs_diff_eq!(weights[0][0], -1.0);
                assert_abs_diff_eq!(weights[0][1], -1.0);
            }
            _ => panic!("expected softmax member"),
        }
    }

    #[test]
    fn wide_gamma_covers_with_single_point() {
        let mdp = bandit(&[0.5, 0.5]);
        let class = cover_softmax_class(&mdp, 1.0, -1.0, 1.0, 2.0, DEFAULT_ENUM_CAP).unwrap();
        assert_eq!(class.len(), 1);
    }

    #[test]
    fn cover_cardinality_cap_is_enforced() {
        let mdp = bandit(&[0.5, 0.5, 0.5, 0.5]);
        let err = cover_softmax_class(&mdp, 1.0, -1.0, 1.0, 0.01, 1000).unwrap_err();
        assert!(matches!(err, Error::EnumerationCap { .. }));
    }

    #[test]
    fn adjacent_cover_points_meet_feature_bound() {
        let mdp = bandit(&[0.5, 0.5]);
        let gamma = 0.5;
        let class = cover_softmax_class(&mdp, 1.0, -1.0, 1.0, gamma, DEFAULT_ENUM_CAP).unwrap();
        // Member 0 and member 1 differ only in the last weight coordinate
        // by one spacing step.
        for (i, j) in [(0usize, 1usize), (0, 9), (40, 41)] {
            let pa = class.members[i].action_probs(&mdp, 0, 0).unwrap();
            let pb = class.members[j].action_probs(&mdp, 0, 0).unwrap();
            let mut diff = DVector::zeros(2);
            for a in 0..2 {
                diff += (pa[a] - pb[a]) * mdp.feature(0, a);
            }
            assert!(diff.norm() <= gamma, "feature gap {}", diff.norm());
        }
    }
}
