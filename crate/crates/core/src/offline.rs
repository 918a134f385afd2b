//! Offline datasets, their sufficient statistics, and coverage coefficients.
//!
//! Tabular linear MDPs let us compress arbitrarily large datasets into
//! per-step tables of transition counts and reward sums ([`DataSummary`]);
//! covariance matrices, regression targets, and transition-propagation
//! vectors are all linear images of those tables. Algorithms therefore
//! consume summaries, while [`OfflineDataset`] keeps raw records for
//! serialization and for moderate-size experiments.
//!
//! The coverage side provides the per-policy concentrability coefficient
//! (sum over steps of the offline-whitened visitation norm), the
//! offline-to-online transfer coefficient [`c_o2o`] (a Frank-Wolfe
//! minimization over exploration designs of the worst gap-normalized
//! coverage ratio), and [`t_o2o`], the smallest online-episode count at
//! which that coefficient drops below a target.

use nalgebra::{DMatrix, DVector};
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::linalg;
use crate::mdp_core::{LinearMdp, Policy, Trajectory, Transition};
use crate::rng::SplitRng;
use crate::visitation::{self, covariance_best_response, PolicyClass};

pub const DEFAULT_FW_ITERS: usize = 500;
pub const FW_REL_PROGRESS_TOL: f64 = 1e-6;
const T_O2O_BRACKET_CAP: u64 = 1 << 40;

/// Raw logged transitions plus a provenance note.
#[derive(Debug, Clone, Default)]
pub struct OfflineDataset {
    pub records: Vec<Transition>,
    pub source_note: String,
}

impl OfflineDataset {
    pub fn summarize(&self, mdp: &LinearMdp) -> Result<DataSummary> {
        let mut summary = DataSummary::empty(mdp);
        for r in &self.records {
            summary.add_transition(mdp, r)?;
        }
        Ok(summary)
    }

    /// One JSON object per line with 1-based step index `h`.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for r in &self.records {
            let line = RecordLine {
                h: r.step + 1,
                s: r.state,
                a: r.action,
                r: r.reward,
                sp: r.next_state,
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(reader: R, mdp: &LinearMdp) -> Result<OfflineDataset> {
        let mut records = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: RecordLine = serde_json::from_str(&line).map_err(|e| {
                Error::Validation(format!("line {}: {e}", lineno + 1))
            })?;
            if parsed.h == 0 || parsed.h > mdp.horizon() {
                return Err(Error::Validation(format!(
                    "line {}: step {} outside 1..={}",
                    lineno + 1,
                    parsed.h,
                    mdp.horizon()
                )));
            }
            let record = Transition {
                step: parsed.h - 1,
                state: parsed.s,
                action: parsed.a,
                reward: parsed.r,
                next_state: parsed.sp,
            };
            check_record(mdp, &record)
                .map_err(|e| Error::Validation(format!("line {}: {e}", lineno + 1)))?;
            records.push(record);
        }
        Ok(OfflineDataset {
            records,
            source_note: String::new(),
        })
    }
}

#[derive(serde::Serialize, serde::Deserialize)]
struct RecordLine {
    h: usize,
    s: usize,
    a: usize,
    r: f64,
    sp: usize,
}

fn check_record(mdp: &LinearMdp, r: &Transition) -> Result<()> {
    if r.state >= mdp.num_states() || r.action >= mdp.num_actions() {
        return Err(Error::Validation(format!(
            "state {} or action {} out of range",
            r.state, r.action
        )));
    }
    let last = r.step + 1 == mdp.horizon();
    if last && r.next_state != mdp.sentinel() {
        return Err(Error::Validation(format!(
            "final-step record must end in the sentinel state {}",
            mdp.sentinel()
        )));
    }
    if !last && r.next_state >= mdp.num_states() {
        return Err(Error::Validation(format!(
            "next state {} out of range at step {}",
            r.next_state, r.step
        )));
    }
    Ok(())
}

/// Per-step transition counts and reward sums. These are the sufficient
/// statistics for every estimator in this crate, so datasets of any size
/// reduce to `H` small tables.
#[derive(Debug, Clone)]
pub struct StepTable {
    /// `next_counts[(s * A + a, s')]`, with column `S` for the sentinel.
    pub next_counts: DMatrix<f64>,
    /// Summed rewards per `(s, a)`.
    pub reward_sums: DVector<f64>,
    pub count: u64,
}

impl StepTable {
    fn empty(sa: usize, num_states: usize) -> StepTable {
        StepTable {
            next_counts: DMatrix::zeros(sa, num_states + 1),
            reward_sums: DVector::zeros(sa),
            count: 0,
        }
    }

    pub fn sa_count(&self, sa_index: usize) -> f64 {
        self.next_counts.row(sa_index).sum()
    }

    /// `sum phi phi^T` over records in this table.
    pub fn covariance(&self, mdp: &LinearMdp) -> DMatrix<f64> {
        let d = mdp.feature_dim();
        let mut cov = DMatrix::zeros(d, d);
        for idx in 0..self.next_counts.nrows() {
            let n = self.sa_count(idx);
            if n == 0.0 {
                continue;
            }
            let f = mdp.feature_matrix().row(idx).transpose();
            cov.ger(n, &f, &f, 1.0);
        }
        cov
    }

    /// `sum phi * r` over records, the ridge-regression target for rewards.
    pub fn phi_reward(&self, mdp: &LinearMdp) -> DVector<f64> {
        let mut out = DVector::zeros(mdp.feature_dim());
        for idx in 0..self.reward_sums.len() {
            if self.reward_sums[idx] != 0.0 {
                out.axpy(self.reward_sums[idx], &mdp.feature_matrix().row(idx).transpose(), 1.0);
            }
        }
        out
    }

    /// `cross[s'] = sum over records with next state s' of phi(s, a)`, used
    /// to propagate estimated visitations across one step.
    pub fn cross_vectors(&self, mdp: &LinearMdp) -> Vec<DVector<f64>> {
        let d = mdp.feature_dim();
        let mut cross = vec![DVector::zeros(d); mdp.num_states()];
        for idx in 0..self.next_counts.nrows() {
            for sp in 0..mdp.num_states() {
                let n = self.next_counts[(idx, sp)];
                if n != 0.0 {
                    cross[sp].axpy(n, &mdp.feature_matrix().row(idx).transpose(), 1.0);
                }
            }
        }
        cross
    }

    pub fn merged(&self, other: &StepTable) -> StepTable {
        StepTable {
            next_counts: &self.next_counts + &other.next_counts,
            reward_sums: &self.reward_sums + &other.reward_sums,
            count: self.count + other.count,
        }
    }
}

/// Sufficient statistics of a dataset, one [`StepTable`] per step.
#[derive(Debug, Clone)]
pub struct DataSummary {
    pub steps: Vec<StepTable>,
}

impl DataSummary {
    pub fn empty(mdp: &LinearMdp) -> DataSummary {
        let sa = mdp.num_states() * mdp.num_actions();
        DataSummary {
            steps: (0..mdp.horizon())
                .map(|_| StepTable::empty(sa, mdp.num_states()))
                .collect(),
        }
    }

    pub fn add_transition(&mut self, mdp: &LinearMdp, r: &Transition) -> Result<()> {
        if r.step >= self.steps.len() {
            return Err(Error::Validation(format!(
                "record step {} outside horizon {}",
                r.step,
                self.steps.len()
            )));
        }
        check_record(mdp, r)?;
        let table = &mut self.steps[r.step];
        let idx = mdp.sa_index(r.state, r.action);
        table.next_counts[(idx, r.next_state)] += 1.0;
        table.reward_sums[idx] += r.reward;
        table.count += 1;
        Ok(())
    }

    pub fn add_trajectory(&mut self, mdp: &LinearMdp, traj: &Trajectory) -> Result<()> {
        for t in &traj.steps {
            self.add_transition(mdp, t)?;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &DataSummary) -> Result<()> {
        if self.steps.len() != other.steps.len() {
            return Err(Error::DimensionMismatch(
                "cannot merge summaries with different horizons".into(),
            ));
        }
        for (mine, theirs) in self.steps.iter_mut().zip(&other.steps) {
            *mine = mine.merged(theirs);
        }
        Ok(())
    }

    /// Largest per-step record count; for full-trajectory data this equals
    /// the number of episodes.
    pub fn episodes(&self) -> u64 {
        self.steps.iter().map(|t| t.count).max().unwrap_or(0)
    }
}

/// Sample `episodes` episodes under `policy` and keep the raw records.
pub fn generate_offline(
    mdp: &LinearMdp,
    policy: &Policy,
    episodes: u64,
    rng: &mut SplitRng,
) -> Result<OfflineDataset> {
    let mut records = Vec::with_capacity((episodes as usize).saturating_mul(mdp.horizon()));
    for _ in 0..episodes {
        let traj = mdp.sample_episode(policy, rng)?;
        records.extend(traj.steps);
    }
    Ok(OfflineDataset {
        records,
        source_note: format!("{episodes} logged episodes"),
    })
}

/// Like [`generate_offline`] but streams directly into a [`DataSummary`],
/// so arbitrarily large datasets use constant memory. Consumes the RNG
/// identically to `generate_offline`, producing the same statistics.
pub fn generate_offline_summary(
    mdp: &LinearMdp,
    policy: &Policy,
    episodes: u64,
    rng: &mut SplitRng,
) -> Result<DataSummary> {
    let mut summary = DataSummary::empty(mdp);
    for _ in 0..episodes {
        let traj = mdp.sample_episode(policy, rng)?;
        summary.add_trajectory(mdp, &traj)?;
    }
    Ok(summary)
}

/// Per-step regularized covariance matrices of an offline dataset.
#[derive(Debug, Clone)]
pub struct StepCovariates {
    raw: Vec<DMatrix<f64>>,
    counts: Vec<u64>,
    lambda_reg: f64,
}

impl StepCovariates {
    pub fn from_summary(summary: &DataSummary, mdp: &LinearMdp, lambda_reg: f64) -> StepCovariates {
        StepCovariates {
            raw: summary.steps.iter().map(|t| t.covariance(mdp)).collect(),
            counts: summary.steps.iter().map(|t| t.count).collect(),
            lambda_reg,
        }
    }

    pub fn horizon(&self) -> usize {
        self.raw.len()
    }

    pub fn lambda_reg(&self) -> f64 {
        self.lambda_reg
    }

    pub fn count(&self, step: usize) -> u64 {
        self.counts[step]
    }

    /// Unregularized `sum phi phi^T` at `step`.
    pub fn raw(&self, step: usize) -> &DMatrix<f64> {
        &self.raw[step]
    }

    /// `raw + lambda_reg * I`.
    pub fn regularized(&self, step: usize) -> DMatrix<f64> {
        let d = self.raw[step].nrows();
        &self.raw[step] + DMatrix::from_diagonal_element(d, d, self.lambda_reg)
    }
}

/// Per-step covariances `sum phi phi^T + lambda_reg * I`. The customary
/// regularization is `lambda_reg = 1/d`.
pub fn offline_covariates(
    data: &OfflineDataset,
    mdp: &LinearMdp,
    lambda_reg: f64,
) -> Result<StepCovariates> {
    Ok(StepCovariates::from_summary(
        &data.summarize(mdp)?,
        mdp,
        lambda_reg,
    ))
}

/// Concentrability of a policy with per-step expected features
/// `phi_by_step` against the offline covariances: the sum over steps of
/// `sqrt(phi^T Lambda_h^{-1} phi)` using the regularized matrices.
pub fn concentrability(phi_by_step: &[DVector<f64>], cov: &StepCovariates) -> Result<f64> {
    if phi_by_step.len() != cov.horizon() {
        return Err(Error::DimensionMismatch(format!(
            "expected {} per-step features, got {}",
            cov.horizon(),
            phi_by_step.len()
        )));
    }
    let mut total = 0.0;
    for (h, phi) in phi_by_step.iter().enumerate() {
        let chol = linalg::cholesky(
            &cov.regularized(h),
            &format!("inverting the step-{h} offline covariance"),
        )?;
        total += linalg::inv_quad(&chol, phi).max(0.0).sqrt();
    }
    Ok(total)
}

/// Result of [`c_o2o`]: the transfer coefficient value and, when online
/// episodes participate, the minimizing exploration mixture.
#[derive(Debug, Clone)]
pub struct CovTransfer {
    pub value: f64,
    pub mixture: Option<Policy>,
}

/// Offline-to-online transfer coefficient at `step`:
/// the infimum over exploration covariances `Lambda` (mixtures of
/// deterministic policies) of
/// `max_pi |phi_{pi,step}|^2_{(T Lambda + Lambda_off)^{-1}} / max(gap_pi^2, eps^2)`,
/// where gaps are measured against the best value in `class`. Minimized by
/// Frank-Wolfe with exact best responses; the returned value is the best
/// iterate seen, which is always a valid upper bound on the infimum.
pub fn c_o2o(
    mdp: &LinearMdp,
    class: &PolicyClass,
    cov: &StepCovariates,
    eps: f64,
    t_online: u64,
    step: usize,
    fw_iters: usize,
) -> Result<CovTransfer> {
    if class.is_empty() {
        return Err(Error::Validation("empty policy class".into()));
    }
    if !(eps > 0.0) {
        return Err(Error::Validation("eps must be positive".into()));
    }
    if step >= cov.horizon() {
        return Err(Error::Validation(format!(
            "step {step} outside horizon {}",
            cov.horizon()
        )));
    }

    let mut phis = Vec::with_capacity(class.len());
    let mut values = Vec::with_capacity(class.len());
    for policy in &class.members {
        let profile = visitation::exact_profile(mdp, policy)?;
        phis.push(profile.feature_visitations[step].clone());
        values.push(profile.value);
    }
    let v_star = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let denoms: Vec<f64> = values
        .iter()
        .map(|v| (v_star - v).powi(2).max(eps * eps))
        .collect();

    let lambda_off = cov.regularized(step);
    let objective = |m: &DMatrix<f64>| -> Result<(f64, usize)> {
        let chol = linalg::cholesky(m, &format!("inverting the step-{step} design covariance"))?;
        let mut best = f64::NEG_INFINITY;
        let mut arg = 0;
        for (i, phi) in phis.iter().enumerate() {
            let q = linalg::inv_quad(&chol, phi) / denoms[i];
            if q > best {
                best = q;
                arg = i;
            }
        }
        Ok((best, arg))
    };

    if t_online == 0 {
        let (value, _) = objective(&lambda_off)?;
        return Ok(CovTransfer {
            value,
            mixture: None,
        });
    }

    let t = t_online as f64;
    let d = mdp.feature_dim();
    let mut lambda = DMatrix::<f64>::zeros(d, d);
    let mut atoms: Vec<(Policy, f64)> = Vec::new();
    let mut best_value = f64::INFINITY;
    let mut best_atoms: Vec<(Policy, f64)> = Vec::new();

    // The first step has gamma = 1, so the zero initialization is replaced
    // by the first best response; lambda_off keeps the matrix invertible.
    for iter in 0..fw_iters.max(1) {
        let gamma = 2.0 / (iter as f64 + 2.0);
        let m = t * &lambda + &lambda_off;
        let chol = linalg::cholesky(&m, &format!("inverting the step-{step} design covariance"))?;
        let mut g_val = f64::NEG_INFINITY;
        let mut active = 0;
        for (i, phi) in phis.iter().enumerate() {
            let q = linalg::inv_quad(&chol, phi) / denoms[i];
            if q > g_val {
                g_val = q;
                active = i;
            }
        }
        if g_val < best_value {
            best_value = g_val;
            best_atoms = atoms.clone();
        }
        // Linear minimization oracle: moving mass toward policies that are
        // informative for the active constraint. The descent direction for
        // the active quadratic is y y^T with y = M^{-1} phi.
        let y = chol.solve(&phis[active]);
        let direction = &y * y.transpose();
        let br = covariance_best_response(mdp, step, &direction)?;
        // Subgradient duality gap: an upper bound on the remaining progress.
        // Comparing consecutive objective values instead would stop too
        // early, because the iterate can 2-cycle between atoms with equal
        // objective.
        let gap = (t / denoms[active]) * ((&br.covariance * &y).dot(&y) - (&lambda * &y).dot(&y));
        if gap <= FW_REL_PROGRESS_TOL * g_val.abs().max(1e-12) {
            break;
        }
        lambda = (1.0 - gamma) * &lambda + gamma * &br.covariance;
        for (_, w) in atoms.iter_mut() {
            *w *= 1.0 - gamma;
        }
        match atoms.iter_mut().find(|(p, _)| *p == br.policy) {
            Some((_, w)) => *w += gamma,
            None => atoms.push((br.policy, gamma)),
        }
    }

    // Evaluate the final iterate too; Frank-Wolfe is not monotone.
    let m = t * &lambda + &lambda_off;
    if let Ok((g_val, _)) = objective(&m) {
        if g_val < best_value {
            best_value = g_val;
            best_atoms = atoms;
        }
    }

    let mixture = if best_atoms.is_empty() {
        None
    } else {
        let total: f64 = best_atoms.iter().map(|(_, w)| w).sum();
        Some(Policy::mixture(
            best_atoms.into_iter().map(|(p, w)| (w / total, p)).collect(),
        ))
    };
    Ok(CovTransfer {
        value: best_value,
        mixture,
    })
}

/// Smallest number of online episodes `T` with `c_o2o(T) <= 1 / beta`,
/// found by exponential bracketing and integer bisection. The coefficient
/// is nonincreasing in `T`, so the bracket is valid.
pub fn t_o2o(
    mdp: &LinearMdp,
    class: &PolicyClass,
    cov: &StepCovariates,
    eps: f64,
    beta: f64,
    step: usize,
    fw_iters: usize,
) -> Result<u64> {
    if !(beta > 0.0) {
        return Err(Error::Validation("beta must be positive".into()));
    }
    let target = 1.0 / beta;
    let value_at = |t: u64| -> Result<f64> {
        Ok(c_o2o(mdp, class, cov, eps, t, step, fw_iters)?.value)
    };

    if value_at(0)? <= target {
        return Ok(0);
    }
    let mut lo = 0u64;
    let mut hi = 1u64;
    loop {
        if value_at(hi)? <= target {
            break;
        }
        if hi >= T_O2O_BRACKET_CAP {
            return Err(Error::Unsatisfiable(format!(
                "transfer coefficient at step {step} stays above 1/beta = {target:.3e} \
                 even with 2^40 online episodes; the best achievable design \
                 minimum eigenvalue at this step is likely zero"
            )));
        }
        lo = hi;
        hi = hi.saturating_mul(2).min(T_O2O_BRACKET_CAP);
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if value_at(mid)? <= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp_core::NoiseModel;
    use approx::assert_abs_diff_eq;

    fn two_arm_bandit(theta: &[f64]) -> LinearMdp {
        let features = DMatrix::identity(2, 2);
        LinearMdp::new(
            1,
            2,
            1,
            features,
            vec![],
            vec![DVector::from_column_slice(theta)],
            NoiseModel::Bernoulli,
            0,
        )
        .unwrap()
    }

    fn two_arm_class() -> PolicyClass {
        PolicyClass {
            members: vec![
                Policy::Deterministic { actions: vec![vec![0]] },
                Policy::Deterministic { actions: vec![vec![1]] },
            ],
            label: "arms".into(),
        }
    }

    #[test]
    fn summary_matches_record_counts() {
        let mdp = two_arm_bandit(&[1.0, 0.0]);
        let policy = Policy::uniform_random(&mdp);
        let mut rng = SplitRng::new(2);
        let data = generate_offline(&mdp, &policy, 100, &mut rng).unwrap();
        assert_eq!(data.records.len(), 100);
        let summary = data.summarize(&mdp).unwrap();
        assert_eq!(summary.episodes(), 100);
        let n0 = summary.steps[0].sa_count(0);
        let n1 = summary.steps[0].sa_count(1);
        assert_eq!(n0 + n1, 100.0);
        // Arm 0 pays Bernoulli(1), so its reward sum equals its count.
        assert_abs_diff_eq!(summary.steps[0].reward_sums[0], n0, epsilon = 1e-12);
    }

    #[test]
    fn streamed_summary_equals_materialized() {
        let mdp = two_arm_bandit(&[0.6, 0.4]);
        let policy = Policy::uniform_random(&mdp);
        let mut rng1 = SplitRng::new(13);
        let mut rng2 = SplitRng::new(13);
        let data = generate_offline(&mdp, &policy, 500, &mut rng1).unwrap();
        let direct = generate_offline_summary(&mdp, &policy, 500, &mut rng2).unwrap();
        let via_records = data.summarize(&mdp).unwrap();
        for h in 0..1 {
            assert_eq!(
                direct.steps[h].next_counts,
                via_records.steps[h].next_counts
            );
            assert_abs_diff_eq!(
                (direct.steps[h].reward_sums.clone() - &via_records.steps[h].reward_sums).amax(),
                0.0,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn jsonl_round_trip() {
        let mdp = two_arm_bandit(&[1.0, 0.0]);
        let policy = Policy::uniform_random(&mdp);
        let mut rng = SplitRng::new(4);
        let data = generate_offline(&mdp, &policy, 20, &mut rng).unwrap();
        let mut buf = Vec::new();
        data.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        // Steps are serialized 1-based.
        assert!(text.lines().all(|l| l.contains("\"h\":1")));
        let back = OfflineDataset::read_jsonl(&buf[..], &mdp).unwrap();
        assert_eq!(back.records, data.records);
    }

    #[test]
    fn jsonl_rejects_out_of_range_step() {
        let mdp = two_arm_bandit(&[1.0, 0.0]);
        let line = b"{\"h\":2,\"s\":0,\"a\":0,\"r\":0.0,\"sp\":1}\n" as &[u8];
        assert!(OfflineDataset::read_jsonl(line, &mdp).is_err());
    }

    #[test]
    fn covariates_closed_form_for_basis_features() {
        let mdp = two_arm_bandit(&[1.0, 0.0]);
        let mut summary = DataSummary::empty(&mdp);
        for _ in 0..7 {
            summary
                .add_transition(
                    &mdp,
                    &Transition { step: 0, state: 0, action: 0, reward: 1.0, next_state: 1 },
                )
                .unwrap();
        }
        let cov = StepCovariates::from_summary(&summary, &mdp, 0.5);
        assert_abs_diff_eq!(cov.raw(0)[(0, 0)], 7.0, epsilon = 1e-12);
        assert_abs_diff_eq!(cov.regularized(0)[(0, 0)], 7.5, epsilon = 1e-12);
        assert_abs_diff_eq!(cov.regularized(0)[(1, 1)], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn concentrability_closed_form() {
        // n pulls of arm 0 with ridge lambda: C for the arm-0 policy is
        // sqrt(1 / (n + lambda)).
        let mdp = two_arm_bandit(&[1.0, 0.0]);
        let mut summary = DataSummary::empty(&mdp);
        for _ in 0..9 {
            summary
                .add_transition(
                    &mdp,
                    &Transition { step: 0, state: 0, action: 0, reward: 1.0, next_state: 1 },
                )
                .unwrap();
        }
        let cov = StepCovariates::from_summary(&summary, &mdp, 0.5);
        let phi = DVector::from_column_slice(&[1.0, 0.0]);
        let c = concentrability(&[phi], &cov).unwrap();
        assert_abs_diff_eq!(c, (1.0f64 / 9.5).sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn concentrability_errors_without_regularization() {
        let mdp = two_arm_bandit(&[1.0, 0.0]);
        let summary = DataSummary::empty(&mdp);
        let cov = StepCovariates::from_summary(&summary, &mdp, 0.0);
        let phi = DVector::from_column_slice(&[1.0, 0.0]);
        let err = concentrability(&[phi], &cov).unwrap_err();
        assert!(matches!(err, Error::SingularMatrix { .. }));
    }

    #[test]
    fn c_o2o_at_zero_matches_direct_computation() {
        // Equal-value arms (zero reward), so every denominator is eps^2.
        let mdp = two_arm_bandit(&[0.0, 0.0]);
        let class = two_arm_class();
        let mut summary = DataSummary::empty(&mdp);
        for _ in 0..3 {
            summary
                .add_transition(
                    &mdp,
                    &Transition { step: 0, state: 0, action: 0, reward: 0.0, next_state: 1 },
                )
                .unwrap();
        }
        let cov = StepCovariates::from_summary(&summary, &mdp, 0.5);
        let eps = 0.1;
        let out = c_o2o(&mdp, &class, &cov, eps, 0, 0, DEFAULT_FW_ITERS).unwrap();
        // Arm 1 is uncovered: 1 / (0.5 * eps^2).
        assert_abs_diff_eq!(out.value, 1.0 / (0.5 * eps * eps), epsilon = 1e-9);
        assert!(out.mixture.is_none());
    }

    #[test]
    fn c_o2o_nonincreasing_in_t() {
        let mdp = two_arm_bandit(&[0.0, 0.0]);
        let class = two_arm_class();
        let cov = StepCovariates::from_summary(&DataSummary::empty(&mdp), &mdp, 0.5);
        let mut prev = f64::INFINITY;
        for t in [0u64, 4, 16, 64] {
            let v = c_o2o(&mdp, &class, &cov, 1.0, t, 0, DEFAULT_FW_ITERS)
                .unwrap()
                .value;
            assert!(
                v <= prev * (1.0 + 1e-6),
                "value {v} at T = {t} above previous {prev}"
            );
            prev = v;
        }
    }

    #[test]
    fn c_o2o_matches_grid_oracle() {
        // Brute-force the two-arm design weight on a fine grid and compare.
        let mdp = two_arm_bandit(&[0.0, 0.0]);
        let class = two_arm_class();
        let mut summary = DataSummary::empty(&mdp);
        for _ in 0..5 {
            summary
                .add_transition(
                    &mdp,
                    &Transition { step: 0, state: 0, action: 0, reward: 0.0, next_state: 1 },
                )
                .unwrap();
        }
        let cov = StepCovariates::from_summary(&summary, &mdp, 0.5);
        let eps = 1.0;
        let t = 12u64;
        let mut oracle = f64::INFINITY;
        for k in 0..=10_000 {
            let w = k as f64 / 10_000.0;
            let m0 = t as f64 * w + 5.0 + 0.5;
            let m1 = t as f64 * (1.0 - w) + 0.5;
            oracle = oracle.min((1.0 / m0).max(1.0 / m1));
        }
        // Balancing the two whitened norms gives the exact infimum 1/9;
        // both the grid scan and the Frank-Wolfe value upper-bound it.
        let exact = 1.0 / 9.0;
        assert!(oracle >= exact - 1e-12 && oracle <= exact * 1.001);
        let out = c_o2o(&mdp, &class, &cov, eps, t, 0, DEFAULT_FW_ITERS).unwrap();
        assert!(
            out.value >= exact - 1e-12 && out.value <= exact * 1.05,
            "fw value {} vs exact {exact}",
            out.value
        );
        // The mixture reproduces a covariance consistent with its value.
        let mix = out.mixture.unwrap();
        let profile = visitation::exact_profile(&mdp, &mix).unwrap();
        let m = t as f64 * &profile.covariances[0] + cov.regularized(0);
        let chol = linalg::cholesky(&m, "test").unwrap();
        let worst = class
            .members
            .iter()
            .map(|p| {
                let phi = visitation::exact_profile(&mdp, p).unwrap().feature_visitations[0]
                    .clone();
                linalg::inv_quad(&chol, &phi)
            })
            .fold(f64::NEG_INFINITY, f64::max);
        assert_abs_diff_eq!(worst, out.value, epsilon = 1e-6);
    }

    #[test]
    fn t_o2o_matches_closed_form() {
        // Zero rewards, eps = 1, empty dataset with ridge 1/2. The optimal
        // design splits evenly, so c_o2o(T) = 1 / (T/2 + 1/2) and the first
        // T with value <= 1/beta is 2 * beta - 1.
        let mdp = two_arm_bandit(&[0.0, 0.0]);
        let class = two_arm_class();
        let cov = StepCovariates::from_summary(&DataSummary::empty(&mdp), &mdp, 0.5);
        let beta = 4.0;
        let t = t_o2o(&mdp, &class, &cov, 1.0, beta, 0, DEFAULT_FW_ITERS).unwrap();
        let exact = (2.0 * beta - 1.0) as u64;
        assert!(
            t >= exact && t <= exact + 1,
            "t_o2o {t} vs closed form {exact}"
        );
    }

    #[test]
    fn t_o2o_zero_when_offline_suffices() {
        let mdp = two_arm_bandit(&[0.0, 0.0]);
        let class = two_arm_class();
        let mut summary = DataSummary::empty(&mdp);
        for a in 0..2 {
            for _ in 0..100 {
                summary
                    .add_transition(
                        &mdp,
                        &Transition { step: 0, state: 0, action: a, reward: 0.0, next_state: 1 },
                    )
                    .unwrap();
            }
        }
        let cov = StepCovariates::from_summary(&summary, &mdp, 0.5);
        let t = t_o2o(&mdp, &class, &cov, 1.0, 4.0, 0, DEFAULT_FW_ITERS).unwrap();
        assert_eq!(t, 0);
    }
}
