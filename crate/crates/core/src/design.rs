//! Online experiment design for feature coverage.
//!
//! The design problem is to collect episodes whose step-`h` covariance
//! `Sigma` makes `max_phi |phi|^2_{(Sigma + offsets)^{-1}}` small over a
//! finite target set. [`DesignObjective`] is the softmax smoothing of that
//! maximum over the per-episode covariance `Lambda = Sigma / N`;
//! [`fw_regret`] runs Frank-Wolfe on it, implementing each linear
//! minimization approximately by handing a bounded surrogate reward to a
//! regret minimizer for a batch of episodes. With step size `1 / (t + 1)`
//! the iterate stays the exact running average of the per-batch covariance
//! estimates. [`opt_cov`] wraps this in a doubling schedule over rounds
//! until the unsmoothed coverage test passes.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::mdp_core::{LinearMdp, Policy};
use crate::offline::DataSummary;
use crate::rng::SplitRng;
use crate::visitation::{covariance_best_response, reachable_states, PolicyClass};

pub const DEFAULT_MAX_ROUNDS: u32 = 40;

/// Smoothed worst-case coverage objective
/// `f(Lambda) = (1/eta) log sum_phi exp(eta * |phi|^2_{A(Lambda)^{-1}})`
/// with `A(Lambda) = Lambda + (warm_offset + data_offset) / sample_scale`.
#[derive(Debug, Clone)]
pub struct DesignObjective {
    pub step: usize,
    pub targets: Vec<DVector<f64>>,
    pub eta: f64,
    /// `N`, the episode count the design will be executed over.
    pub sample_scale: f64,
    pub warm_offset: DMatrix<f64>,
    pub data_offset: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct ObjectiveEval {
    pub value: f64,
    /// Gradient with respect to `Lambda`, a negative semidefinite matrix.
    pub gradient: DMatrix<f64>,
    /// Largest whitened norm `max_phi |phi|^2_{A^{-1}}`.
    pub max_quad: f64,
    /// Softmax weights over targets; they sum to one.
    pub weights: Vec<f64>,
}

impl DesignObjective {
    pub fn a_matrix(&self, lambda: &DMatrix<f64>) -> DMatrix<f64> {
        lambda + (&self.warm_offset + &self.data_offset) / self.sample_scale
    }

    pub fn eval(&self, lambda: &DMatrix<f64>) -> Result<ObjectiveEval> {
        if self.targets.is_empty() {
            return Err(Error::Validation("design objective has no targets".into()));
        }
        if !(self.eta > 0.0) {
            return Err(Error::Validation("softmax smoothing eta must be positive".into()));
        }
        let a = self.a_matrix(lambda);
        let chol = linalg::cholesky(&a, "inverting the smoothed design matrix")?;
        let mut quads = Vec::with_capacity(self.targets.len());
        let mut solved = Vec::with_capacity(self.targets.len());
        let mut max_quad = f64::NEG_INFINITY;
        for phi in &self.targets {
            let y = chol.solve(phi);
            let q = y.dot(phi);
            max_quad = max_quad.max(q);
            quads.push(q);
            solved.push(y);
        }
        let mut weights: Vec<f64> = quads
            .iter()
            .map(|&q| (self.eta * (q - max_quad)).exp())
            .collect();
        let z: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= z;
        }
        let value = max_quad + z.ln() / self.eta;

        let d = lambda.nrows();
        let mut gradient = DMatrix::zeros(d, d);
        for (w, y) in weights.iter().zip(&solved) {
            gradient.ger(-*w, y, y, 1.0);
        }
        Ok(ObjectiveEval {
            value,
            gradient,
            max_quad,
            weights,
        })
    }
}

/// Bounded per-step exploration reward `r(s, a) = phi^T matrix phi / scale`
/// at `step` and zero elsewhere. `matrix` is positive semidefinite and
/// `scale` at least its largest eigenvalue, so rewards lie in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct SurrogateReward {
    pub step: usize,
    pub matrix: DMatrix<f64>,
    pub scale: f64,
}

impl SurrogateReward {
    pub fn value(&self, mdp: &LinearMdp, step: usize, state: usize, action: usize) -> f64 {
        if step != self.step {
            return 0.0;
        }
        let phi = mdp.feature(state, action);
        (&self.matrix * &phi).dot(&phi) / self.scale
    }
}

/// An online learner that plays `episodes` episodes against a fixed
/// surrogate reward, writing the resulting transitions into `sink`. Each
/// call is a fresh learning problem; implementations keep no state across
/// calls.
pub trait RegretMinimizer {
    fn label(&self) -> &str;

    fn run_batch(
        &self,
        mdp: &LinearMdp,
        reward: &SurrogateReward,
        episodes: u64,
        sink: &mut DataSummary,
        rng: &mut SplitRng,
    ) -> Result<()>;
}

/// UCB1 over a finite policy class, treating each policy as an arm and the
/// episode's total surrogate reward as the arm payoff. Honest in the sense
/// that it only interacts through sampled episodes.
pub struct PolicyUcb {
    pub class: PolicyClass,
}

impl RegretMinimizer for PolicyUcb {
    fn label(&self) -> &str {
        "policy-ucb"
    }

    fn run_batch(
        &self,
        mdp: &LinearMdp,
        reward: &SurrogateReward,
        episodes: u64,
        sink: &mut DataSummary,
        rng: &mut SplitRng,
    ) -> Result<()> {
        if self.class.is_empty() {
            return Err(Error::Validation("UCB needs a nonempty policy class".into()));
        }
        let arms = self.class.len();
        let mut counts = vec![0u64; arms];
        let mut sums = vec![0.0f64; arms];
        for ep in 1..=episodes {
            let arm = if ((ep - 1) as usize) < arms {
                // Initial sweep in index order.
                (ep - 1) as usize
            } else {
                let log_t = (ep as f64).ln();
                let mut best = f64::NEG_INFINITY;
                let mut arg = 0;
                for i in 0..arms {
                    let bonus = (2.0 * log_t / counts[i] as f64).sqrt();
                    let score = sums[i] / counts[i] as f64 + bonus;
                    if score > best {
                        best = score;
                        arg = i;
                    }
                }
                arg
            };
            let traj = mdp.sample_episode(&self.class.members[arm], rng)?;
            let mut payoff = 0.0;
            for t in &traj.steps {
                if t.step == reward.step {
                    payoff += reward.value(mdp, t.step, t.state, t.action);
                }
            }
            counts[arm] += 1;
            sums[arm] += payoff;
            sink.add_trajectory(mdp, &traj)?;
        }
        Ok(())
    }
}

/// Plans the exact optimal deterministic policy for the surrogate reward by
/// dynamic programming and plays it for the whole batch. Useful to isolate
/// design behavior from regret-minimizer noise.
pub struct OraclePlanner;

impl RegretMinimizer for OraclePlanner {
    fn label(&self) -> &str {
        "oracle-planner"
    }

    fn run_batch(
        &self,
        mdp: &LinearMdp,
        reward: &SurrogateReward,
        episodes: u64,
        sink: &mut DataSummary,
        rng: &mut SplitRng,
    ) -> Result<()> {
        let br = covariance_best_response(mdp, reward.step, &reward.matrix)?;
        for _ in 0..episodes {
            let traj = mdp.sample_episode(&br.policy, rng)?;
            sink.add_trajectory(mdp, &traj)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct DesignTraceRow {
    pub round: u32,
    pub iteration: usize,
    pub objective: f64,
    pub episodes: u64,
}

#[derive(Debug)]
pub struct FwRun {
    /// Final iterate: the average of all per-batch covariance estimates.
    pub lambda: DMatrix<f64>,
    /// All collected episodes, summarized.
    pub data: DataSummary,
    pub episodes: u64,
}

/// Frank-Wolfe on the smoothed design objective using approximate linear
/// minimization through a regret minimizer.
///
/// Runs one warm-up batch under the uniform-random policy and then `iters`
/// Frank-Wolfe iterations of `batch` episodes each. At iteration `t` the
/// exploration reward is `phi^T Xi phi / lambda_max(Xi)` at the design step
/// with `Xi = -grad f(Lambda_t)`, and the step size `1 / (t + 1)` keeps the
/// iterate equal to the running average of per-batch covariances.
pub fn fw_regret(
    mdp: &LinearMdp,
    objective: &DesignObjective,
    iters: usize,
    batch: u64,
    regmin: &dyn RegretMinimizer,
    rng: &mut SplitRng,
    round: u32,
    trace: &mut Vec<DesignTraceRow>,
) -> Result<FwRun> {
    if batch == 0 {
        return Err(Error::Validation("batch size must be positive".into()));
    }
    let step = objective.step;
    let mut data = DataSummary::empty(mdp);
    let mut episodes: u64 = 0;

    let uniform = Policy::uniform_random(mdp);
    let mut warm = DataSummary::empty(mdp);
    for _ in 0..batch {
        let traj = mdp.sample_episode(&uniform, rng)?;
        warm.add_trajectory(mdp, &traj)?;
    }
    episodes += batch;
    let mut lambda = warm.steps[step].covariance(mdp) / batch as f64;
    data.merge(&warm)?;

    for t in 1..=iters {
        let eval = objective.eval(&lambda)?;
        trace.push(DesignTraceRow {
            round,
            iteration: t,
            objective: eval.value,
            episodes,
        });
        let xi = -eval.gradient;
        let scale = linalg::max_eigval(&xi).max(1e-300);
        let reward = SurrogateReward {
            step,
            matrix: xi,
            scale,
        };
        let mut batch_data = DataSummary::empty(mdp);
        regmin.run_batch(mdp, &reward, batch, &mut batch_data, rng)?;
        episodes += batch;
        let gamma = 1.0 / (t as f64 + 1.0);
        lambda = (1.0 - gamma) * &lambda
            + gamma * (batch_data.steps[step].covariance(mdp) / batch as f64);
        data.merge(&batch_data)?;
    }

    let final_eval = objective.eval(&lambda)?;
    trace.push(DesignTraceRow {
        round,
        iteration: iters + 1,
        objective: final_eval.value,
        episodes,
    });

    Ok(FwRun {
        lambda,
        data,
        episodes,
    })
}

#[derive(Debug, Clone)]
pub struct OptCovConfig {
    /// Target worst-case whitened norm for the collected covariates.
    pub eps_exp: f64,
    /// Failure probability associated with this call. Recorded for
    /// diagnostics; the round schedule itself is deterministic.
    pub delta: f64,
    /// Required minimum eigenvalue of the conditioned covariates on the
    /// span of the targets; `0` disables the clause.
    pub lambda_floor: f64,
    /// Scale of the identity warm offset `Lambda_0 = lambda_reg * I`.
    pub lambda_reg: f64,
    /// Hard cap on episodes across all rounds.
    pub budget: u64,
    pub max_rounds: u32,
}

#[derive(Debug)]
pub struct OptCovOutcome {
    /// Raw step covariates `sum phi phi^T` of the terminal round.
    pub sigma: DMatrix<f64>,
    /// The warm offset used inside the objective.
    pub warm_offset: DMatrix<f64>,
    /// Terminal-round episodes, summarized. Earlier rounds are discarded
    /// but still counted in `episodes_total`.
    pub data: DataSummary,
    pub episodes_total: u64,
    pub rounds_run: u32,
    pub final_objective: f64,
    /// Both termination clauses hold: smoothed objective below
    /// `N * eps_exp`, and span-restricted minimum eigenvalue at least
    /// `lambda_floor`.
    pub satisfied: bool,
    /// Stopped because the next round would exceed the episode budget.
    pub capped: bool,
}

/// Doubling-round coverage collection: round `i` runs [`fw_regret`] with
/// `T_i = K_i = 2^i` and smoothing `eta_i = 2^(2i/5)`, stopping once the
/// terminal data satisfies both coverage clauses or the budget is reached.
#[allow(clippy::too_many_arguments)]
pub fn opt_cov(
    mdp: &LinearMdp,
    step: usize,
    targets: &[DVector<f64>],
    data_offset: &DMatrix<f64>,
    cfg: &OptCovConfig,
    regmin: &dyn RegretMinimizer,
    rng: &SplitRng,
    trace: &mut Vec<DesignTraceRow>,
) -> Result<OptCovOutcome> {
    if targets.is_empty() {
        return Err(Error::Validation("opt_cov needs at least one target".into()));
    }
    if !(cfg.eps_exp > 0.0) {
        return Err(Error::Validation("eps_exp must be positive".into()));
    }
    let d = mdp.feature_dim();
    let warm_offset = DMatrix::from_diagonal_element(d, d, cfg.lambda_reg);
    let span_basis = linalg::orthonormal_span_basis(targets, 1e-9);

    let mut outcome = OptCovOutcome {
        sigma: DMatrix::zeros(d, d),
        warm_offset: warm_offset.clone(),
        data: DataSummary::empty(mdp),
        episodes_total: 0,
        rounds_run: 0,
        final_objective: f64::INFINITY,
        satisfied: false,
        capped: false,
    };

    for i in 1..=cfg.max_rounds {
        let t_i: u64 = 1 << i;
        let k_i: u64 = 1 << i;
        let n_i = t_i * k_i;
        if outcome.episodes_total.saturating_add(n_i) > cfg.budget {
            outcome.capped = true;
            return Ok(outcome);
        }
        let objective = DesignObjective {
            step,
            targets: targets.to_vec(),
            eta: 2f64.powf(0.4 * i as f64),
            sample_scale: n_i as f64,
            warm_offset: warm_offset.clone(),
            data_offset: data_offset.clone(),
        };
        let mut round_rng = rng.split(i as u64);
        let run = fw_regret(
            mdp,
            &objective,
            (t_i - 1) as usize,
            k_i,
            regmin,
            &mut round_rng,
            i,
            trace,
        )?;
        outcome.episodes_total += run.episodes;
        outcome.rounds_run = i;
        outcome.final_objective = objective.eval(&run.lambda)?.value;
        outcome.sigma = run.data.steps[step].covariance(mdp);
        outcome.data = run.data;

        let coverage_ok = outcome.final_objective <= n_i as f64 * cfg.eps_exp;
        let conditioned = &outcome.sigma + &warm_offset + data_offset;
        let lambda_ok = cfg.lambda_floor <= 0.0
            || linalg::span_min_eigval(&conditioned, &span_basis) >= cfg.lambda_floor;
        if coverage_ok && lambda_ok {
            outcome.satisfied = true;
            return Ok(outcome);
        }
    }
    Ok(outcome)
}

/// Collect data whose conditioned covariates have minimum eigenvalue at
/// least `lambda_floor` in every direction, by running [`opt_cov`] with the
/// standard basis as targets and
/// `eps_exp = 1 / (d * max(lambda_floor, d * ln(1/delta)))`. The trace
/// bound `lambda_max(A^{-1}) <= sum_j |e_j|^2_{A^{-1}}` then yields the
/// eigenvalue guarantee at termination.
///
/// Errors when the features reachable at `step` do not span all of `R^d`,
/// since no exploration can condition the missing directions.
#[allow(clippy::too_many_arguments)]
pub fn conditioned_cov(
    mdp: &LinearMdp,
    step: usize,
    delta: f64,
    lambda_floor: f64,
    lambda_reg: f64,
    budget: u64,
    regmin: &dyn RegretMinimizer,
    rng: &SplitRng,
    trace: &mut Vec<DesignTraceRow>,
) -> Result<OptCovOutcome> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Validation("delta must lie in (0, 1)".into()));
    }
    if !(lambda_floor > 0.0) {
        return Err(Error::Validation("lambda_floor must be positive".into()));
    }
    let d = mdp.feature_dim();
    let reachable = reachable_states(mdp);
    let mut feats = Vec::new();
    for s in 0..mdp.num_states() {
        if reachable[step][s] {
            for a in 0..mdp.num_actions() {
                feats.push(mdp.feature(s, a));
            }
        }
    }
    let rank = linalg::orthonormal_span_basis(&feats, 1e-9).ncols();
    if rank < d {
        return Err(Error::Unsatisfiable(format!(
            "features reachable at step {step} span only {rank} of {d} dimensions; \
             full-space conditioning is impossible"
        )));
    }

    let targets: Vec<DVector<f64>> = (0..d)
        .map(|j| {
            let mut e = DVector::zeros(d);
            e[j] = 1.0;
            e
        })
        .collect();
    let eps_exp = 1.0 / (d as f64 * lambda_floor.max(d as f64 * (1.0 / delta).ln()));
    let cfg = OptCovConfig {
        eps_exp,
        delta,
        lambda_floor,
        lambda_reg,
        budget,
        max_rounds: DEFAULT_MAX_ROUNDS,
    };
    let zero_offset = DMatrix::zeros(d, d);
    opt_cov(mdp, step, &targets, &zero_offset, &cfg, regmin, rng, trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp_core::NoiseModel;
    use crate::visitation::enumerate_det_policies;
    use approx::assert_abs_diff_eq;

    fn orthonormal_bandit(d: usize) -> LinearMdp {
        let features = DMatrix::identity(d, d);
        LinearMdp::new(
            1,
            d,
            1,
            features,
            vec![],
            vec![DVector::zeros(d)],
            NoiseModel::Bernoulli,
            0,
        )
        .unwrap()
    }

    fn basis_targets(d: usize, take: usize) -> Vec<DVector<f64>> {
        (0..take)
            .map(|j| {
                let mut e = DVector::zeros(d);
                e[j] = 1.0;
                e
            })
            .collect()
    }

    #[test]
    fn objective_closed_form_single_target() {
        // d = 1: f = phi^2 / (lambda + offset/N), no smoothing correction
        // for a single target.
        let obj = DesignObjective {
            step: 0,
            targets: vec![DVector::from_column_slice(&[1.0])],
            eta: 3.0,
            sample_scale: 10.0,
            warm_offset: DMatrix::from_element(1, 1, 2.0),
            data_offset: DMatrix::from_element(1, 1, 3.0),
        };
        let lambda = DMatrix::from_element(1, 1, 0.5);
        let eval = obj.eval(&lambda).unwrap();
        let a = 0.5 + 5.0 / 10.0;
        assert_abs_diff_eq!(eval.value, 1.0 / a, epsilon = 1e-12);
        assert_abs_diff_eq!(eval.max_quad, 1.0 / a, epsilon = 1e-12);
        // d/dLambda [phi^T A^{-1} phi] = -A^{-1} phi phi^T A^{-1}.
        assert_abs_diff_eq!(eval.gradient[(0, 0)], -1.0 / (a * a), epsilon = 1e-12);
    }

    #[test]
    fn objective_sandwiches_max() {
        let mut rng = SplitRng::new(3);
        for trial in 0..20 {
            let d = 3;
            let mut m = DMatrix::zeros(d, d);
            for i in 0..d {
                for j in 0..d {
                    m[(i, j)] = rng.uniform() - 0.5;
                }
            }
            let lambda = &m * m.transpose();
            let eta = 1.0 + trial as f64;
            let obj = DesignObjective {
                step: 0,
                targets: basis_targets(d, d),
                eta,
                sample_scale: 16.0,
                warm_offset: DMatrix::identity(d, d),
                data_offset: DMatrix::zeros(d, d),
            };
            let eval = obj.eval(&lambda).unwrap();
            assert!(eval.value >= eval.max_quad - 1e-12);
            assert!(eval.value <= eval.max_quad + (d as f64).ln() / eta + 1e-12);
            let wsum: f64 = eval.weights.iter().sum();
            assert_abs_diff_eq!(wsum, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let d = 3;
        let mut rng = SplitRng::new(8);
        let mut m = DMatrix::zeros(d, d);
        for i in 0..d {
            for j in 0..d {
                m[(i, j)] = rng.uniform() - 0.5;
            }
        }
        let lambda = &m * m.transpose() + DMatrix::identity(d, d) * 0.5;
        let obj = DesignObjective {
            step: 0,
            targets: basis_targets(d, d),
            eta: 2.0,
            sample_scale: 8.0,
            warm_offset: DMatrix::identity(d, d) * 0.3,
            data_offset: DMatrix::identity(d, d) * 0.2,
        };
        let eval = obj.eval(&lambda).unwrap();
        let h = 1e-5;
        for i in 0..d {
            for j in 0..d {
                let mut dir = DMatrix::zeros(d, d);
                dir[(i, j)] += 1.0;
                dir[(j, i)] += 1.0;
                let fp = obj.eval(&(&lambda + h * &dir)).unwrap().value;
                let fm = obj.eval(&(&lambda - h * &dir)).unwrap().value;
                let fd = (fp - fm) / (2.0 * h);
                let analytic = (&eval.gradient * &dir).trace();
                assert_abs_diff_eq!(fd, analytic, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn fw_iterate_is_exact_data_average() {
        let mdp = orthonormal_bandit(3);
        let obj = DesignObjective {
            step: 0,
            targets: basis_targets(3, 3),
            eta: 2.0,
            sample_scale: 64.0,
            warm_offset: DMatrix::identity(3, 3) * (1.0 / 3.0),
            data_offset: DMatrix::zeros(3, 3),
        };
        let class = enumerate_det_policies(&mdp, 1000, false).unwrap();
        let regmin = PolicyUcb { class };
        let mut rng = SplitRng::new(5);
        let mut trace = Vec::new();
        let run = fw_regret(&mdp, &obj, 7, 8, &regmin, &mut rng, 1, &mut trace).unwrap();
        assert_eq!(run.episodes, 64);
        let sigma = run.data.steps[0].covariance(&mdp);
        let diff = (&run.lambda * 64.0 - &sigma).amax();
        assert!(diff < 1e-9, "lambda * N differs from data covariates by {diff}");
        // Trace covers iterations 1..=7 plus the final evaluation.
        assert_eq!(trace.len(), 8);
        assert!(trace.iter().all(|r| r.round == 1));
    }

    #[test]
    fn oracle_planner_targets_uncovered_direction() {
        let mdp = orthonormal_bandit(2);
        // Xi puts all weight on arm 1's direction.
        let mut xi = DMatrix::zeros(2, 2);
        xi[(1, 1)] = 1.0;
        let reward = SurrogateReward { step: 0, matrix: xi, scale: 1.0 };
        let mut sink = DataSummary::empty(&mdp);
        let mut rng = SplitRng::new(0);
        OraclePlanner
            .run_batch(&mdp, &reward, 10, &mut sink, &mut rng)
            .unwrap();
        assert_eq!(sink.steps[0].sa_count(1), 10.0);
    }

    #[test]
    fn ucb_concentrates_on_best_arm() {
        let mdp = orthonormal_bandit(3);
        let mut xi = DMatrix::zeros(3, 3);
        xi[(2, 2)] = 1.0;
        let reward = SurrogateReward { step: 0, matrix: xi, scale: 1.0 };
        let class = enumerate_det_policies(&mdp, 1000, false).unwrap();
        let regmin = PolicyUcb { class };
        let mut sink = DataSummary::empty(&mdp);
        let mut rng = SplitRng::new(1);
        regmin.run_batch(&mdp, &reward, 200, &mut sink, &mut rng).unwrap();
        // Deterministic surrogate payoffs: arm 2 dominates after the sweep.
        assert!(sink.steps[0].sa_count(2) > 150.0);
    }

    #[test]
    fn opt_cov_meets_coverage_and_floor() {
        let mdp = orthonormal_bandit(2);
        let class = enumerate_det_policies(&mdp, 1000, false).unwrap();
        let regmin = PolicyUcb { class };
        let cfg = OptCovConfig {
            eps_exp: 1.0 / 64.0,
            delta: 0.1,
            lambda_floor: 3.0,
            lambda_reg: 0.5,
            budget: 1 << 24,
            max_rounds: DEFAULT_MAX_ROUNDS,
        };
        let targets = basis_targets(2, 2);
        let zero = DMatrix::zeros(2, 2);
        let rng = SplitRng::new(11);
        let mut trace = Vec::new();
        let out = opt_cov(&mdp, 0, &targets, &zero, &cfg, &regmin, &rng, &mut trace).unwrap();
        assert!(out.satisfied);
        assert!(!out.capped);
        // Post-guarantee on the unsmoothed objective.
        let conditioned = &out.sigma + &out.warm_offset + &zero;
        let chol = linalg::cholesky(&conditioned, "test").unwrap();
        for phi in &targets {
            assert!(linalg::inv_quad(&chol, phi) <= cfg.eps_exp * (1.0 + 1e-9));
        }
        let basis = linalg::orthonormal_span_basis(&targets, 1e-9);
        assert!(linalg::span_min_eigval(&conditioned, &basis) >= cfg.lambda_floor);
        // Sigma is exactly the terminal-round step covariates.
        let recomputed = out.data.steps[0].covariance(&mdp);
        assert!((recomputed - &out.sigma).amax() < 1e-9);
        // The terminal round holds 4^rounds episodes.
        assert_eq!(out.data.steps[0].count, 1u64 << (2 * out.rounds_run));
    }

    #[test]
    fn opt_cov_respects_budget() {
        let mdp = orthonormal_bandit(2);
        let class = enumerate_det_policies(&mdp, 1000, false).unwrap();
        let regmin = PolicyUcb { class };
        let cfg = OptCovConfig {
            eps_exp: 1e-9,
            delta: 0.1,
            lambda_floor: 0.0,
            lambda_reg: 0.5,
            budget: 100,
            max_rounds: DEFAULT_MAX_ROUNDS,
        };
        let targets = basis_targets(2, 2);
        let zero = DMatrix::zeros(2, 2);
        let rng = SplitRng::new(2);
        let mut trace = Vec::new();
        let out = opt_cov(&mdp, 0, &targets, &zero, &cfg, &regmin, &rng, &mut trace).unwrap();
        assert!(out.capped);
        assert!(!out.satisfied);
        assert!(out.episodes_total <= 100);
    }

    #[test]
    fn conditioned_cov_reaches_eigenvalue_floor() {
        let mdp = orthonormal_bandit(2);
        let class = enumerate_det_policies(&mdp, 1000, false).unwrap();
        let regmin = PolicyUcb { class };
        let rng = SplitRng::new(7);
        let mut trace = Vec::new();
        let out = conditioned_cov(
            &mdp,
            0,
            0.1,
            4.0,
            0.5,
            1 << 24,
            &regmin,
            &rng,
            &mut trace,
        )
        .unwrap();
        assert!(out.satisfied);
        let conditioned = &out.sigma + &out.warm_offset;
        assert!(crate::visitation::min_eigval(&conditioned) >= 4.0);
    }

    #[test]
    fn conditioned_cov_rejects_rank_deficient_features() {
        // Two arms share the same feature direction: rank 1 < d = 2.
        let mut features = DMatrix::zeros(2, 2);
        features[(0, 0)] = 1.0;
        features[(1, 0)] = 1.0;
        let mdp = LinearMdp::new(
            1,
            2,
            1,
            features,
            vec![],
            vec![DVector::zeros(2)],
            NoiseModel::Bernoulli,
            0,
        )
        .unwrap();
        let class = enumerate_det_policies(&mdp, 1000, false).unwrap();
        let regmin = PolicyUcb { class };
        let rng = SplitRng::new(7);
        let mut trace = Vec::new();
        let err = conditioned_cov(&mdp, 0, 0.1, 4.0, 0.5, 1 << 24, &regmin, &rng, &mut trace)
            .unwrap_err();
        assert!(matches!(err, Error::Unsatisfiable(_)));
    }
}
