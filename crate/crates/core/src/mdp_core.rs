//! Finite-horizon linear MDPs with an explicit tabular backend.
//!
//! The model is tabular (finite states and actions, explicit transition
//! rows) but carries a feature map `phi(s, a)` and per-step reward
//! parameters `theta_h` so that mean rewards are exactly linear:
//! `E[r_h(s, a)] = <phi(s, a), theta_h>`. Transition linearity is checked by
//! [`LinearMdp::validate`] via least squares but is not enforced, which
//! permits approximately-linear test instances.
//!
//! Conventions used throughout the crate:
//! - states are `0..S`, actions `0..A`, steps `0..H` (0-based internally);
//! - the terminal sentinel state is index `S` and appears only as the
//!   `next_state` of a final-step transition;
//! - `transitions` has `H - 1` matrices because the final step always moves
//!   to the sentinel.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SplitRng;

/// Reward noise attached to every `(s, a, h)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NoiseModel {
    /// Reward is `Bernoulli(mean)`; requires all mean rewards in `[0, 1]`.
    Bernoulli,
    /// Reward is `mean + sigma * N(0, 1)` clipped into `[0, 1]`.
    Gauss { sigma: f64 },
}

/// One sampled step `(h, s, a, r, s')`. The `next_state` of a final-step
/// transition is the terminal sentinel `S`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub step: usize,
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
}

#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub steps: Vec<Transition>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "MdpJson", into = "MdpJson")]
pub struct LinearMdp {
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    feature_dim: usize,
    /// `(S * A) x d`, row `s * A + a` holds `phi(s, a)`.
    features: DMatrix<f64>,
    /// `H - 1` row-stochastic matrices of shape `(S * A) x S`.
    transitions: Vec<DMatrix<f64>>,
    /// `H` reward parameter vectors in `R^d`.
    theta: Vec<DVector<f64>>,
    noise: NoiseModel,
    initial_state: usize,
}

/// Outcome of [`LinearMdp::validate`]. `violations` lists hard problems
/// (norm bounds, stochasticity, reward range); `linearity_residuals` holds
/// the per-step sup-norm residual of the least-squares fit of transition
/// rows onto the feature map, which is informational only.
#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub violations: Vec<String>,
    pub linearity_residuals: Vec<f64>,
    pub max_linearity_residual: f64,
    pub exactly_linear: bool,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

const NORM_TOL: f64 = 1e-9;
const EXACT_LINEAR_TOL: f64 = 1e-9;

impl LinearMdp {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        num_states: usize,
        num_actions: usize,
        horizon: usize,
        features: DMatrix<f64>,
        transitions: Vec<DMatrix<f64>>,
        theta: Vec<DVector<f64>>,
        noise: NoiseModel,
        initial_state: usize,
    ) -> Result<Self> {
        if num_states == 0 || num_actions == 0 || horizon == 0 {
            return Err(Error::Validation(
                "num_states, num_actions and horizon must all be positive".into(),
            ));
        }
        let sa = num_states * num_actions;
        if features.nrows() != sa || features.ncols() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "features must be ({sa} x d) with d > 0, got {} x {}",
                features.nrows(),
                features.ncols()
            )));
        }
        let d = features.ncols();
        if transitions.len() + 1 != horizon {
            return Err(Error::DimensionMismatch(format!(
                "expected {} transition matrices for horizon {horizon}, got {}",
                horizon - 1,
                transitions.len()
            )));
        }
        for (h, p) in transitions.iter().enumerate() {
            if p.nrows() != sa || p.ncols() != num_states {
                return Err(Error::DimensionMismatch(format!(
                    "transition matrix at step {h} must be ({sa} x {num_states}), got {} x {}",
                    p.nrows(),
                    p.ncols()
                )));
            }
        }
        if theta.len() != horizon {
            return Err(Error::DimensionMismatch(format!(
                "expected {horizon} reward vectors, got {}",
                theta.len()
            )));
        }
        for (h, th) in theta.iter().enumerate() {
            if th.len() != d {
                return Err(Error::DimensionMismatch(format!(
                    "reward vector at step {h} has length {}, feature dim is {d}",
                    th.len()
                )));
            }
        }
        if initial_state >= num_states {
            return Err(Error::Validation(format!(
                "initial state {initial_state} out of range for {num_states} states"
            )));
        }
        if let NoiseModel::Gauss { sigma } = noise {
            if !(sigma.is_finite() && sigma >= 0.0) {
                return Err(Error::Validation(format!(
                    "gaussian noise sigma must be finite and nonnegative, got {sigma}"
                )));
            }
        }
        Ok(LinearMdp {
            num_states,
            num_actions,
            horizon,
            feature_dim: d,
            features,
            transitions,
            theta,
            noise,
            initial_state,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn initial_state(&self) -> usize {
        self.initial_state
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    /// Index of the terminal sentinel state.
    pub fn sentinel(&self) -> usize {
        self.num_states
    }

    #[inline]
    pub fn sa_index(&self, state: usize, action: usize) -> usize {
        debug_assert!(state < self.num_states && action < self.num_actions);
        state * self.num_actions + action
    }

    pub fn feature(&self, state: usize, action: usize) -> DVector<f64> {
        self.features.row(self.sa_index(state, action)).transpose()
    }

    /// The full `(S * A) x d` feature matrix.
    pub fn feature_matrix(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn transition_matrix(&self, step: usize) -> &DMatrix<f64> {
        &self.transitions[step]
    }

    pub fn theta(&self, step: usize) -> &DVector<f64> {
        &self.theta[step]
    }

    pub fn mean_reward(&self, step: usize, state: usize, action: usize) -> f64 {
        self.features
            .row(self.sa_index(state, action))
            .transpose()
            .dot(&self.theta[step])
    }

    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        let sqrt_d = (self.feature_dim as f64).sqrt();

        for s in 0..self.num_states {
            for a in 0..self.num_actions {
                let norm = self.features.row(self.sa_index(s, a)).norm();
                if norm > 1.0 + NORM_TOL {
                    violations.push(format!("feature norm {norm:.6} > 1 at (s={s}, a={a})"));
                }
            }
        }
        for (h, th) in self.theta.iter().enumerate() {
            let norm = th.norm();
            if norm > sqrt_d + NORM_TOL {
                violations.push(format!(
                    "reward parameter norm {norm:.6} > sqrt(d) = {sqrt_d:.6} at step {h}"
                ));
            }
        }
        for h in 0..self.horizon {
            for s in 0..self.num_states {
                for a in 0..self.num_actions {
                    let m = self.mean_reward(h, s, a);
                    if !(-NORM_TOL..=1.0 + NORM_TOL).contains(&m) {
                        violations.push(format!(
                            "mean reward {m:.6} outside [0, 1] at (h={h}, s={s}, a={a})"
                        ));
                    }
                }
            }
        }
        for (h, p) in self.transitions.iter().enumerate() {
            for row in 0..p.nrows() {
                let mut sum = 0.0;
                for col in 0..p.ncols() {
                    let v = p[(row, col)];
                    if v < -1e-12 {
                        violations.push(format!(
                            "negative transition probability {v:.3e} at step {h}, row {row}"
                        ));
                    }
                    sum += v;
                }
                if (sum - 1.0).abs() > NORM_TOL {
                    violations.push(format!(
                        "transition row {row} at step {h} sums to {sum:.9}, expected 1"
                    ));
                }
            }
        }

        let mut linearity_residuals = Vec::with_capacity(self.transitions.len());
        for p in &self.transitions {
            linearity_residuals.push(self.linearity_residual(p));
        }
        let max_linearity_residual = linearity_residuals.iter().cloned().fold(0.0, f64::max);

        ValidationReport {
            violations,
            linearity_residuals,
            max_linearity_residual,
            exactly_linear: max_linearity_residual <= EXACT_LINEAR_TOL,
        }
    }

    /// Sup-norm residual of the best least-squares fit `P ~ features * mu`.
    fn linearity_residual(&self, p: &DMatrix<f64>) -> f64 {
        let svd = self.features.clone().svd(true, true);
        match svd.solve(p, 1e-12) {
            Ok(mu) => {
                let fitted = &self.features * mu;
                (fitted - p).amax()
            }
            Err(_) => f64::INFINITY,
        }
    }

    /// Run one episode under `policy`. Mixture policies draw a component at
    /// the start of the episode (one categorical draw per mixture level) and
    /// then follow it for all steps, matching the mixture semantics used by
    /// the exact visitation computations.
    pub fn sample_episode(&self, policy: &Policy, rng: &mut SplitRng) -> Result<Trajectory> {
        policy.check_compatible(self)?;
        let component = policy.resolve_component(rng);
        let mut steps = Vec::with_capacity(self.horizon);
        let mut state = self.initial_state;
        for h in 0..self.horizon {
            let action = component.sample_action(self, h, state, rng)?;
            let mean = self.mean_reward(h, state, action);
            let reward = self.sample_reward(mean, rng);
            let next_state = if h + 1 < self.horizon {
                let row = self.transitions[h].row(self.sa_index(state, action));
                rng.categorical(row.transpose().as_slice())
            } else {
                self.sentinel()
            };
            steps.push(Transition {
                step: h,
                state,
                action,
                reward,
                next_state,
            });
            state = next_state;
        }
        Ok(Trajectory { steps })
    }

    fn sample_reward(&self, mean: f64, rng: &mut SplitRng) -> f64 {
        match self.noise {
            NoiseModel::Bernoulli => {
                if rng.uniform() < mean {
                    1.0
                } else {
                    0.0
                }
            }
            NoiseModel::Gauss { sigma } => (mean + sigma * rng.standard_normal()).clamp(0.0, 1.0),
        }
    }
}

/// A (possibly non-Markov) policy over a [`LinearMdp`].
///
/// Deterministic, stochastic and softmax policies are Markov. A mixture
/// draws one component per episode; its per-step action probabilities are
/// therefore not defined and the visitation code handles mixtures
/// structurally by convex combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Policy {
    Deterministic {
        /// `actions[h][s]` is the action taken at step `h` in state `s`.
        actions: Vec<Vec<usize>>,
    },
    Stochastic {
        /// `probs[h][s][a]`, each row a distribution over actions.
        probs: Vec<Vec<Vec<f64>>>,
    },
    Softmax {
        /// `pi_h(a | s)` proportional to `exp(temperature * <phi(s, a), weights[h]>)`.
        temperature: f64,
        weights: Vec<Vec<f64>>,
    },
    Mixture {
        components: Vec<MixtureComponent>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub policy: Policy,
}

impl Policy {
    pub fn uniform_random(mdp: &LinearMdp) -> Policy {
        let row = vec![1.0 / mdp.num_actions() as f64; mdp.num_actions()];
        Policy::Stochastic {
            probs: vec![vec![row; mdp.num_states()]; mdp.horizon()],
        }
    }

    pub fn mixture(components: Vec<(f64, Policy)>) -> Policy {
        Policy::Mixture {
            components: components
                .into_iter()
                .map(|(weight, policy)| MixtureComponent { weight, policy })
                .collect(),
        }
    }

    pub fn check_compatible(&self, mdp: &LinearMdp) -> Result<()> {
        match self {
            Policy::Deterministic { actions } => {
                if actions.len() != mdp.horizon() {
                    return Err(Error::DimensionMismatch(format!(
                        "deterministic policy has {} steps, horizon is {}",
                        actions.len(),
                        mdp.horizon()
                    )));
                }
                for per_state in actions {
                    if per_state.len() != mdp.num_states() {
                        return Err(Error::DimensionMismatch(
                            "deterministic policy state table size mismatch".into(),
                        ));
                    }
                    if per_state.iter().any(|&a| a >= mdp.num_actions()) {
                        return Err(Error::Validation("policy action out of range".into()));
                    }
                }
                Ok(())
            }
            Policy::Stochastic { probs } => {
                if probs.len() != mdp.horizon() {
                    return Err(Error::DimensionMismatch(format!(
                        "stochastic policy has {} steps, horizon is {}",
                        probs.len(),
                        mdp.horizon()
                    )));
                }
                for per_state in probs {
                    if per_state.len() != mdp.num_states() {
                        return Err(Error::DimensionMismatch(
                            "stochastic policy state table size mismatch".into(),
                        ));
                    }
                    for row in per_state {
                        if row.len() != mdp.num_actions() {
                            return Err(Error::DimensionMismatch(
                                "stochastic policy action row size mismatch".into(),
                            ));
                        }
                        let sum: f64 = row.iter().sum();
                        if (sum - 1.0).abs() > 1e-9 || row.iter().any(|&p| p < -1e-12) {
                            return Err(Error::Validation(format!(
                                "stochastic policy row is not a distribution (sum {sum:.9})"
                            )));
                        }
                    }
                }
                Ok(())
            }
            Policy::Softmax {
                temperature,
                weights,
            } => {
                if !temperature.is_finite() {
                    return Err(Error::Validation("softmax temperature must be finite".into()));
                }
                if weights.len() != mdp.horizon() {
                    return Err(Error::DimensionMismatch(format!(
                        "softmax policy has {} weight vectors, horizon is {}",
                        weights.len(),
                        mdp.horizon()
                    )));
                }
                if weights.iter().any(|w| w.len() != mdp.feature_dim()) {
                    return Err(Error::DimensionMismatch(
                        "softmax weight vector length must equal feature dim".into(),
                    ));
                }
                Ok(())
            }
            Policy::Mixture { components } => {
                if components.is_empty() {
                    return Err(Error::Validation("mixture policy has no components".into()));
                }
                let total: f64 = components.iter().map(|c| c.weight).sum();
                if (total - 1.0).abs() > 1e-9 || components.iter().any(|c| c.weight < -1e-12) {
                    return Err(Error::Validation(format!(
                        "mixture weights must form a distribution (sum {total:.9})"
                    )));
                }
                for c in components {
                    c.policy.check_compatible(mdp)?;
                }
                Ok(())
            }
        }
    }

    /// Per-step action distribution. Errors for mixtures, which have no
    /// Markov action probabilities.
    pub fn action_probs(&self, mdp: &LinearMdp, step: usize, state: usize) -> Result<Vec<f64>> {
        match self {
            Policy::Deterministic { actions } => {
                let mut probs = vec![0.0; mdp.num_actions()];
                probs[actions[step][state]] = 1.0;
                Ok(probs)
            }
            Policy::Stochastic { probs } => Ok(probs[step][state].clone()),
            Policy::Softmax {
                temperature,
                weights,
            } => {
                let w = DVector::from_column_slice(&weights[step]);
                let mut logits = Vec::with_capacity(mdp.num_actions());
                for a in 0..mdp.num_actions() {
                    logits.push(temperature * mdp.feature(state, a).dot(&w));
                }
                let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut probs: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
                let z: f64 = probs.iter().sum();
                for p in &mut probs {
                    *p /= z;
                }
                Ok(probs)
            }
            Policy::Mixture { .. } => Err(Error::Validation(
                "mixture policies have no per-step action probabilities; \
                 resolve a component first"
                    .into(),
            )),
        }
    }

    fn sample_action(
        &self,
        mdp: &LinearMdp,
        step: usize,
        state: usize,
        rng: &mut SplitRng,
    ) -> Result<usize> {
        match self {
            Policy::Deterministic { actions } => Ok(actions[step][state]),
            _ => {
                let probs = self.action_probs(mdp, step, state)?;
                Ok(rng.categorical(&probs))
            }
        }
    }

    /// Resolve mixtures (recursively) to a concrete non-mixture component.
    fn resolve_component(&self, rng: &mut SplitRng) -> &Policy {
        let mut current = self;
        while let Policy::Mixture { components } = current {
            let weights: Vec<f64> = components.iter().map(|c| c.weight).collect();
            current = &components[rng.categorical(&weights)].policy;
        }
        current
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MdpJson {
    #[serde(rename = "S")]
    num_states: usize,
    #[serde(rename = "A")]
    num_actions: usize,
    #[serde(rename = "H")]
    horizon: usize,
    d: usize,
    features: Vec<Vec<f64>>,
    transitions: Vec<Vec<Vec<f64>>>,
    theta: Vec<Vec<f64>>,
    noise: NoiseModel,
    s1: usize,
}

impl TryFrom<MdpJson> for LinearMdp {
    type Error = Error;

    fn try_from(j: MdpJson) -> Result<Self> {
        let sa = j.num_states * j.num_actions;
        if j.features.len() != sa || j.features.iter().any(|r| r.len() != j.d) {
            return Err(Error::DimensionMismatch(format!(
                "features must be {sa} rows of length {}",
                j.d
            )));
        }
        let features =
            DMatrix::from_row_iterator(sa, j.d, j.features.iter().flatten().cloned());
        let mut transitions = Vec::with_capacity(j.transitions.len());
        for rows in &j.transitions {
            if rows.len() != sa || rows.iter().any(|r| r.len() != j.num_states) {
                return Err(Error::DimensionMismatch(format!(
                    "each transition matrix must be {sa} rows of length {}",
                    j.num_states
                )));
            }
            transitions.push(DMatrix::from_row_iterator(
                sa,
                j.num_states,
                rows.iter().flatten().cloned(),
            ));
        }
        let theta = j
            .theta
            .iter()
            .map(|t| {
                if t.len() != j.d {
                    Err(Error::DimensionMismatch(
                        "theta vector length must equal d".into(),
                    ))
                } else {
                    Ok(DVector::from_column_slice(t))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        LinearMdp::new(
            j.num_states,
            j.num_actions,
            j.horizon,
            features,
            transitions,
            theta,
            j.noise,
            j.s1,
        )
    }
}

impl From<LinearMdp> for MdpJson {
    fn from(m: LinearMdp) -> Self {
        let sa = m.num_states * m.num_actions;
        let features = (0..sa)
            .map(|i| m.features.row(i).iter().cloned().collect())
            .collect();
        let transitions = m
            .transitions
            .iter()
            .map(|p| {
                (0..p.nrows())
                    .map(|i| p.row(i).iter().cloned().collect())
                    .collect()
            })
            .collect();
        let theta = m.theta.iter().map(|t| t.iter().cloned().collect()).collect();
        MdpJson {
            num_states: m.num_states,
            num_actions: m.num_actions,
            horizon: m.horizon,
            d: m.feature_dim,
            features,
            transitions,
            theta,
            noise: m.noise,
            s1: m.initial_state,
        }
    }
}
