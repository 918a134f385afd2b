//! Policy elimination with targeted exploration, warm-started from offline
//! data.
//!
//! The algorithm runs epochs with accuracy `eps_l = 2^-l`. Each epoch
//! collects fresh online data per step via [`crate::design::opt_cov`] so
//! that every surviving policy's estimated visitation is well covered by
//! the combined online-plus-offline covariates, then fits per-step reward
//! parameters by ridge regression and propagates estimated visitations
//! forward through the empirical transitions. Policies whose estimated
//! value falls more than `2 * eps_l` below the best are eliminated; ties at
//! the boundary survive, so the empirical best is never eliminated.
//!
//! [`ftpedel_se`] runs the epoch loop under a fixed online budget and
//! returns nothing when the budget is hit; [`ftpedel`] wraps it in budget
//! doubling so no tuning of the budget is needed up front.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::design::{
    opt_cov, DesignTraceRow, OptCovConfig, OraclePlanner, PolicyUcb, RegretMinimizer,
    DEFAULT_MAX_ROUNDS,
};
use crate::error::{Error, Result};
use crate::linalg;
use crate::mdp_core::{LinearMdp, Policy, Transition};
use crate::offline::{DataSummary, StepTable};
use crate::rng::SplitRng;
use crate::visitation::{exact_profile, PolicyClass};

pub const DEFAULT_GLOBAL_BUDGET: u64 = 1 << 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegretMinKind {
    /// UCB over the active policies, treating each as an arm. Interacts
    /// with the environment only through sampled episodes.
    PolicyUcb,
    /// Exact dynamic-programming planner for each surrogate reward. Uses
    /// knowledge of the true transitions; intended for validation.
    OraclePlanner,
}

#[derive(Debug, Clone)]
pub struct FtpedelConfig {
    pub eps: f64,
    pub delta: f64,
    /// Multiplier on the theoretical confidence width `beta`. The analysis
    /// constant is far too conservative for experiments at practical scale.
    pub beta_scale: f64,
    /// Ridge weight for online covariates; defaults to `1/d`.
    pub lambda: Option<f64>,
    pub regmin: RegretMinKind,
    /// Use exact visitation profiles as design targets instead of the
    /// estimated ones. Validation aid; the default is the honest estimator.
    pub exact_design_targets: bool,
    /// Overall online-episode cap for the doubling loop.
    pub global_budget: u64,
    pub max_rounds_per_design: u32,
}

impl FtpedelConfig {
    pub fn new(eps: f64, delta: f64) -> FtpedelConfig {
        FtpedelConfig {
            eps,
            delta,
            beta_scale: 1.0,
            lambda: None,
            regmin: RegretMinKind::PolicyUcb,
            exact_design_targets: false,
            global_budget: DEFAULT_GLOBAL_BUDGET,
            max_rounds_per_design: DEFAULT_MAX_ROUNDS,
        }
    }

    fn check(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return Err(Error::Validation("eps must lie in (0, 1)".into()));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Validation("delta must lie in (0, 1)".into()));
        }
        if !(self.beta_scale > 0.0) {
            return Err(Error::Validation("beta_scale must be positive".into()));
        }
        Ok(())
    }
}

/// One diagnostics row per `(epoch, step)`.
#[derive(Debug, Clone, serde::Serialize)]
pub struct EpochRow {
    pub epoch: u32,
    pub step: usize,
    pub active: usize,
    pub episodes: u64,
    pub objective: f64,
    /// Worst whitened target norm divided by the epoch coverage target;
    /// at most 1 when the collected data satisfies the epoch condition.
    pub max_coverage_ratio: f64,
    pub eliminated: usize,
}

#[derive(Debug, Default)]
pub struct Diagnostics {
    pub epochs: Vec<EpochRow>,
    pub design_trace: Vec<DesignTraceRow>,
}

/// Number of elimination epochs for accuracy `eps`.
pub fn epoch_count(eps: f64) -> u32 {
    (4.0 / eps).log2().ceil().max(1.0) as u32
}

/// Confidence width for epoch `epoch` with `n_policies` candidates. `t_off`
/// and `t_on` are the offline and online per-step sample ceilings entering
/// the covariance log-determinant bound.
#[allow(clippy::too_many_arguments)]
pub fn beta_epoch(
    beta_scale: f64,
    horizon: usize,
    dim: usize,
    lambda: f64,
    t_off: u64,
    t_on: u64,
    n_policies: usize,
    epoch: u32,
    delta: f64,
) -> f64 {
    let h = horizon as f64;
    let d = dim as f64;
    let samples = (t_off + t_on) as f64;
    let log_det = d * ((lambda + samples / d) / lambda).ln();
    let l = epoch as f64;
    let conf = 2.0 * (2.0 * h * h * n_policies as f64 * l * l / delta).ln();
    beta_scale * h.powi(4) * (2.0 * (log_det + conf).sqrt() + (d * lambda).sqrt()).powi(2)
}

/// Minimum-eigenvalue floor required of the conditioned covariates at epoch
/// `epoch`.
pub fn lambda_floor_epoch(horizon: usize, n_policies: usize, epoch: u32, delta: f64) -> f64 {
    let h = horizon as f64;
    let l = epoch as f64;
    (4.0 * h * h * n_policies as f64 * l * l / delta).ln()
}

/// Ridge regression estimate of the step reward parameter from the records
/// at `step`: `theta = M^{-1} sum phi * r`, where `M` is the caller's
/// regularized covariate matrix for exactly those records.
pub fn estimate_reward(
    records: &[Transition],
    step: usize,
    m: &DMatrix<f64>,
    mdp: &LinearMdp,
) -> Result<DVector<f64>> {
    let table = table_from_records(records, step, mdp)?;
    let chol = linalg::cholesky(m, &format!("inverting the step-{step} covariates"))?;
    Ok(chol.solve(&table.phi_reward(mdp)))
}

/// One-step forward propagation of an estimated visitation: maps
/// `phi_hat` at `step` to the estimate at `step + 1` using the empirical
/// transition operator of the records and the policy's action
/// distribution at the next step.
pub fn propagate_visitation(
    records: &[Transition],
    step: usize,
    m: &DMatrix<f64>,
    policy: &Policy,
    phi_hat: &DVector<f64>,
    mdp: &LinearMdp,
) -> Result<DVector<f64>> {
    if step + 1 >= mdp.horizon() {
        return Err(Error::Validation(
            "cannot propagate past the final step".into(),
        ));
    }
    let table = table_from_records(records, step, mdp)?;
    let chol = linalg::cholesky(m, &format!("inverting the step-{step} covariates"))?;
    propagate_from_table(&table, &chol, policy, step, phi_hat, mdp)
}

fn table_from_records(records: &[Transition], step: usize, mdp: &LinearMdp) -> Result<StepTable> {
    let mut summary = DataSummary::empty(mdp);
    for r in records {
        if r.step == step {
            summary.add_transition(mdp, r)?;
        }
    }
    Ok(summary.steps.swap_remove(step))
}

pub(crate) fn propagate_from_table(
    table: &StepTable,
    chol: &Cholesky<f64, Dyn>,
    policy: &Policy,
    step: usize,
    phi_hat: &DVector<f64>,
    mdp: &LinearMdp,
) -> Result<DVector<f64>> {
    let y = chol.solve(phi_hat);
    let cross = table.cross_vectors(mdp);
    let mut next = DVector::zeros(mdp.feature_dim());
    for sp in 0..mdp.num_states() {
        let coeff = cross[sp].dot(&y);
        if coeff == 0.0 {
            continue;
        }
        next += coeff * policy_feature(policy, step + 1, sp, mdp)?;
    }
    Ok(next)
}

/// Expected feature of `policy` at `(step, state)`:
/// `sum_a pi(a | state) phi(state, a)`.
pub(crate) fn policy_feature(
    policy: &Policy,
    step: usize,
    state: usize,
    mdp: &LinearMdp,
) -> Result<DVector<f64>> {
    let probs = policy.action_probs(mdp, step, state)?;
    let mut out = DVector::zeros(mdp.feature_dim());
    for (a, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            out.axpy(p, &mdp.feature(state, a), 1.0);
        }
    }
    Ok(out)
}

/// Initial estimated visitation, known exactly: the expected feature at
/// the initial state.
fn initial_phi(policy: &Policy, mdp: &LinearMdp) -> Result<DVector<f64>> {
    policy_feature(policy, 0, mdp.initial_state(), mdp)
}

/// Indices of `values` within `2 * eps_epoch` of the maximum. Strictly
/// worse values are removed; boundary ties survive.
pub fn eliminate(values: &[f64], eps_epoch: f64) -> Vec<usize> {
    let sup = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    values
        .iter()
        .enumerate()
        .filter(|(_, &v)| v >= sup - 2.0 * eps_epoch)
        .map(|(i, _)| i)
        .collect()
}

pub(crate) struct EpochParams {
    pub epoch: u32,
    pub eps_epoch: f64,
    pub beta: f64,
    pub lambda_floor: f64,
    pub lambda: f64,
    pub budget: u64,
    pub delta: f64,
}

pub(crate) struct EpochEstimates {
    /// Estimated values aligned with the `active` slice passed in.
    pub values: Vec<f64>,
    pub episodes: u64,
    /// False when the budget ran out before every step was covered.
    pub completed: bool,
}

/// Explore and estimate for one epoch: per step, run the coverage design
/// for the active policies' estimated visitations, then regress rewards
/// and propagate visitations on the merged online-plus-offline records.
pub(crate) fn run_estimation_epoch(
    mdp: &LinearMdp,
    class: &PolicyClass,
    active: &[usize],
    offline: &DataSummary,
    params: &EpochParams,
    cfg: &FtpedelConfig,
    rng: &SplitRng,
    diag: &mut Diagnostics,
) -> Result<EpochEstimates> {
    let d = mdp.feature_dim();
    let lambda = params.lambda;
    let eps_exp = params.eps_epoch * params.eps_epoch / params.beta;

    let active_class = PolicyClass {
        members: active.iter().map(|&i| class.members[i].clone()).collect(),
        label: format!("active at epoch {}", params.epoch),
    };
    let regmin: Box<dyn RegretMinimizer> = match cfg.regmin {
        RegretMinKind::PolicyUcb => Box::new(PolicyUcb { class: active_class }),
        RegretMinKind::OraclePlanner => Box::new(OraclePlanner),
    };

    let exact_profiles: Option<Vec<_>> = if cfg.exact_design_targets {
        let mut profiles = Vec::with_capacity(active.len());
        for &i in active {
            profiles.push(exact_profile(mdp, &class.members[i])?);
        }
        Some(profiles)
    } else {
        None
    };

    let mut phi_hat: Vec<DVector<f64>> = Vec::with_capacity(active.len());
    for &i in active {
        phi_hat.push(initial_phi(&class.members[i], mdp)?);
    }
    let mut values = vec![0.0; active.len()];
    let mut episodes: u64 = 0;

    for h in 0..mdp.horizon() {
        let targets: Vec<DVector<f64>> = match &exact_profiles {
            Some(profiles) => profiles
                .iter()
                .map(|p| p.feature_visitations[h].clone())
                .collect(),
            None => phi_hat.clone(),
        };
        let offline_cov = offline.steps[h].covariance(mdp);
        let design_cfg = OptCovConfig {
            eps_exp,
            delta: params.delta,
            lambda_floor: params.lambda_floor,
            lambda_reg: lambda,
            budget: params.budget.saturating_sub(episodes),
            max_rounds: cfg.max_rounds_per_design,
        };
        let out = opt_cov(
            mdp,
            h,
            &targets,
            &offline_cov,
            &design_cfg,
            regmin.as_ref(),
            &rng.split(h as u64),
            &mut diag.design_trace,
        )?;
        episodes += out.episodes_total;

        let m = &out.sigma + DMatrix::from_diagonal_element(d, d, lambda) + &offline_cov;
        let chol = linalg::cholesky(&m, &format!("inverting the step-{h} covariates"))?;
        let max_ratio = targets
            .iter()
            .map(|phi| linalg::inv_quad(&chol, phi))
            .fold(f64::NEG_INFINITY, f64::max)
            / eps_exp;
        diag.epochs.push(EpochRow {
            epoch: params.epoch,
            step: h,
            active: active.len(),
            episodes: out.episodes_total,
            objective: out.final_objective,
            max_coverage_ratio: max_ratio,
            eliminated: 0,
        });
        if !out.satisfied {
            return Ok(EpochEstimates {
                values,
                episodes,
                completed: false,
            });
        }

        let merged = out.data.steps[h].merged(&offline.steps[h]);
        let theta_hat = chol.solve(&merged.phi_reward(mdp));
        for (slot, phi) in phi_hat.iter().enumerate() {
            values[slot] += phi.dot(&theta_hat);
        }
        if h + 1 < mdp.horizon() {
            for (slot, &i) in active.iter().enumerate() {
                phi_hat[slot] = propagate_from_table(
                    &merged,
                    &chol,
                    &class.members[i],
                    h,
                    &phi_hat[slot],
                    mdp,
                )?;
            }
        }
    }

    Ok(EpochEstimates {
        values,
        episodes,
        completed: true,
    })
}

#[derive(Debug, Clone)]
pub struct SeOutcome {
    /// Index into the policy class, when a single candidate was isolated or
    /// the epoch schedule finished.
    pub chosen: Option<usize>,
    pub online_episodes: u64,
    pub epochs_run: u32,
    /// Candidates still alive when the run ended.
    pub active: Vec<usize>,
}

pub(crate) fn check_markov_class(class: &PolicyClass) -> Result<()> {
    if class.is_empty() {
        return Err(Error::Validation("policy class is empty".into()));
    }
    if class
        .members
        .iter()
        .any(|p| matches!(p, Policy::Mixture { .. }))
    {
        return Err(Error::Validation(
            "elimination requires Markov policies; mixtures are not supported in classes".into(),
        ));
    }
    Ok(())
}

/// Elimination under a fixed online budget `online_budget`. Returns
/// `chosen: None` when the budget is exhausted before the data conditions
/// of some epoch could be met.
pub fn ftpedel_se(
    mdp: &LinearMdp,
    class: &PolicyClass,
    offline: &DataSummary,
    online_budget: u64,
    cfg: &FtpedelConfig,
    rng: &SplitRng,
    diag: &mut Diagnostics,
) -> Result<SeOutcome> {
    cfg.check()?;
    check_markov_class(class)?;
    let lambda = cfg.lambda.unwrap_or(1.0 / mdp.feature_dim() as f64);
    let t_off = offline.episodes();
    let epochs = epoch_count(cfg.eps);

    let mut active: Vec<usize> = (0..class.len()).collect();
    let mut episodes_total: u64 = 0;
    let mut last_values: Vec<f64> = Vec::new();

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
                online_budget,
                class.len(),
                epoch,
                cfg.delta,
            ),
            lambda_floor: lambda_floor_epoch(mdp.horizon(), class.len(), epoch, cfg.delta),
            lambda,
            budget: online_budget.saturating_sub(episodes_total),
            delta: cfg.delta,
        };
        let row_start = diag.epochs.len();
        let est = run_estimation_epoch(
            mdp,
            class,
            &active,
            offline,
            &params,
            cfg,
            &rng.split(epoch as u64),
            diag,
        )?;
        episodes_total += est.episodes;
        if !est.completed {
            return Ok(SeOutcome {
                chosen: None,
                online_episodes: episodes_total,
                epochs_run: epoch,
                active,
            });
        }
        let keep_slots = eliminate(&est.values, eps_epoch);
        let eliminated = active.len() - keep_slots.len();
        for row in &mut diag.epochs[row_start..] {
            row.eliminated = eliminated;
        }
        last_values = keep_slots.iter().map(|&s| est.values[s]).collect();
        active = keep_slots.iter().map(|&s| active[s]).collect();
        if active.len() == 1 {
            return Ok(SeOutcome {
                chosen: Some(active[0]),
                online_episodes: episodes_total,
                epochs_run: epoch,
                active,
            });
        }
    }

    // Schedule finished with several survivors: best estimate, lowest index
    // on ties.
    let mut best_slot = 0;
    for s in 1..active.len() {
        if last_values[s] > last_values[best_slot] {
            best_slot = s;
        }
    }
    Ok(SeOutcome {
        chosen: Some(active[best_slot]),
        online_episodes: episodes_total,
        epochs_run: epochs,
        active,
    })
}

#[derive(Debug, Clone)]
pub struct FtpedelOutcome {
    pub chosen: usize,
    pub online_episodes: u64,
    /// Budget doublings used; the final attempt ran with `2^doublings`
    /// episodes allowed.
    pub doublings: u32,
}

/// Budget-doubling wrapper: runs [`ftpedel_se`] with budgets `2, 4, 8, ...`
/// until an attempt finishes within budget, charging every attempt's
/// episodes against `cfg.global_budget`.
pub fn ftpedel(
    mdp: &LinearMdp,
    class: &PolicyClass,
    offline: &DataSummary,
    cfg: &FtpedelConfig,
    rng: &SplitRng,
    diag: &mut Diagnostics,
) -> Result<FtpedelOutcome> {
    cfg.check()?;
    let mut total: u64 = 0;
    for i in 1..=63u32 {
        if total >= cfg.global_budget {
            return Err(Error::BudgetExhausted {
                cap: cfg.global_budget,
                used: total,
            });
        }
        let budget = (1u64 << i).min(cfg.global_budget - total);
        let mut cfg_i = cfg.clone();
        // Split the failure probability across doubling attempts.
        cfg_i.delta = cfg.delta / (2.0 * (i as f64) * (i as f64));
        let se = ftpedel_se(mdp, class, offline, budget, &cfg_i, &rng.split(i as u64), diag)?;
        total += se.online_episodes;
        if let Some(chosen) = se.chosen {
            return Ok(FtpedelOutcome {
                chosen,
                online_episodes: total,
                doublings: i,
            });
        }
    }
    Err(Error::BudgetExhausted {
        cap: cfg.global_budget,
        used: total,
    })
}
