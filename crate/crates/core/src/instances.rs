//! Benchmark instance generators with stored ground truth.
//!
//! Each generator returns an [`InstanceBundle`]: the MDP, an optional
//! logging policy, the exact optimal policy and value computed by dynamic
//! programming at construction time, and a parameter block. Deserializing
//! a bundle re-runs the dynamic program and rejects the file when the
//! stored ground truth no longer matches, so stale or hand-edited bundles
//! cannot silently poison an experiment.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::mdp_core::{LinearMdp, NoiseModel, Policy};
use crate::offline::OfflineDataset;
use crate::rng::SplitRng;
use crate::visitation::{exact_profile, optimal_policy};

pub const GROUND_TRUTH_TOL: f64 = 1e-10;

/// Size guard for the random-instance generator.
const MAX_TABULAR_CELLS: usize = 16_384;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "BundleJson", into = "BundleJson")]
pub struct InstanceBundle {
    pub name: String,
    pub mdp: LinearMdp,
    pub logging_policy: Option<Policy>,
    pub optimal_policy: Policy,
    pub optimal_value: f64,
    pub params: Map<String, Value>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BundleJson {
    name: String,
    mdp: LinearMdp,
    logging_policy: Option<Policy>,
    optimal_policy: Policy,
    optimal_value: f64,
    params: Map<String, Value>,
}

impl From<InstanceBundle> for BundleJson {
    fn from(b: InstanceBundle) -> BundleJson {
        BundleJson {
            name: b.name,
            mdp: b.mdp,
            logging_policy: b.logging_policy,
            optimal_policy: b.optimal_policy,
            optimal_value: b.optimal_value,
            params: b.params,
        }
    }
}

impl TryFrom<BundleJson> for InstanceBundle {
    type Error = Error;

    fn try_from(b: BundleJson) -> Result<InstanceBundle> {
        if let Some(logging) = &b.logging_policy {
            logging.check_compatible(&b.mdp)?;
        }
        b.optimal_policy.check_compatible(&b.mdp)?;
        let stored = exact_profile(&b.mdp, &b.optimal_policy)?.value;
        if (stored - b.optimal_value).abs() > GROUND_TRUTH_TOL {
            return Err(Error::Validation(format!(
                "stored optimal policy evaluates to {stored}, bundle claims {}",
                b.optimal_value
            )));
        }
        let (_, best) = optimal_policy(&b.mdp);
        if (best - b.optimal_value).abs() > GROUND_TRUTH_TOL {
            return Err(Error::Validation(format!(
                "dynamic programming gives optimal value {best}, bundle claims {}",
                b.optimal_value
            )));
        }
        Ok(InstanceBundle {
            name: b.name,
            mdp: b.mdp,
            logging_policy: b.logging_policy,
            optimal_policy: b.optimal_policy,
            optimal_value: b.optimal_value,
            params: b.params,
        })
    }
}

fn finish(
    name: String,
    mdp: LinearMdp,
    logging_policy: Option<Policy>,
    params: Map<String, Value>,
) -> InstanceBundle {
    let (opt, value) = optimal_policy(&mdp);
    InstanceBundle {
        name,
        mdp,
        logging_policy,
        optimal_policy: opt,
        optimal_value: value,
        params,
    }
}

/// Two-step, three-state MDP pair whose optimal policies agree but whose
/// offline value estimates cannot be separated from the listed logging
/// policy alone. `variant` (1 or 2) selects which action at the rare state
/// `s2` carries reward 1/2; the logging policy plays only the third action
/// there, so the variants induce identical data distributions.
///
/// Parameters: `p = sqrt(eps)`, rare-branch probability; `delta = 6 eps`,
/// reward bonus of the good arm at `s1`.
pub fn gen_separation(eps: f64, variant: u8) -> Result<InstanceBundle> {
    if !(eps > 0.0 && eps <= 0.05) {
        return Err(Error::Validation(
            "separation instances need eps in (0, 1/20]".into(),
        ));
    }
    if variant != 1 && variant != 2 {
        return Err(Error::Validation("variant must be 1 or 2".into()));
    }
    let p = eps.sqrt();
    let delta = 6.0 * eps;
    let (s_n, a_n) = (3usize, 3usize);
    let d = s_n * a_n;
    let features = DMatrix::identity(d, d);

    // Step-0 transitions. Rows for s1 and s2 are never exercised from the
    // initial state; they self-loop to keep the matrix stochastic.
    let mut trans = DMatrix::zeros(d, s_n);
    trans[(0, 1)] = 1.0 - p; // s0, a0 -> s1 (common) or s2 (rare)
    trans[(0, 2)] = p;
    trans[(1, 1)] = 1.0; // s0, a1 -> s1 surely
    trans[(2, 2)] = 1.0; // s0, a2 -> s2 surely
    for a in 0..a_n {
        trans[(3 + a, 1)] = 1.0;
        trans[(6 + a, 2)] = 1.0;
    }

    let mut theta0 = DVector::zeros(d);
    theta0[0] = 1.0; // r_0(s0, a0) = 1
    let mut theta1 = DVector::zeros(d);
    theta1[3] = 0.5 + delta; // r_1(s1, a0)
    theta1[4] = 0.5;
    theta1[5] = 0.5;
    theta1[6 + (variant - 1) as usize] = 0.5; // the variant's arm at s2

    let mdp = LinearMdp::new(
        s_n,
        a_n,
        2,
        features,
        vec![trans],
        vec![theta0, theta1],
        NoiseModel::Bernoulli,
        0,
    )?;

    let third = 1.0 / 3.0;
    let uniform = vec![third; a_n];
    let logging = Policy::Stochastic {
        probs: vec![
            vec![uniform.clone(), uniform.clone(), uniform.clone()],
            vec![uniform.clone(), uniform, vec![0.0, 0.0, 1.0]],
        ],
    };

    let mut params = Map::new();
    params.insert("eps".into(), json!(eps));
    params.insert("p".into(), json!(p));
    params.insert("delta".into(), json!(delta));
    params.insert("variant".into(), json!(variant));
    Ok(finish(
        format!("separation-v{variant}-eps{eps}"),
        mdp,
        Some(logging),
        params,
    ))
}

/// Single-state `horizon`-step bandit over a symmetric grid of unit
/// directions. Features are `[a / 2, 1/2]` so the zero action (always the
/// last index) has mean reward exactly 1/2, and step `h` rewards follow
/// `mu * theta_signs[h]`. Actions: `+e_1 .. +e_d`, then `-e_1 .. -e_d`,
/// then `grid_size - 2d` normalized sign vectors in binary-counter order,
/// then the zero action.
pub fn gen_minimax(
    dim: usize,
    horizon: usize,
    theta_signs: &[Vec<f64>],
    mu: f64,
    grid_size: usize,
) -> Result<InstanceBundle> {
    if dim == 0 || horizon == 0 {
        return Err(Error::Validation("dim and horizon must be positive".into()));
    }
    let mu_cap = 1.0 / (20.0 * (dim as f64).sqrt());
    if !(mu > 0.0 && mu <= mu_cap) {
        return Err(Error::Validation(format!(
            "mu must lie in (0, {mu_cap}] for dim {dim}"
        )));
    }
    if theta_signs.len() != horizon || theta_signs.iter().any(|s| s.len() != dim) {
        return Err(Error::DimensionMismatch(
            "theta_signs must have one length-dim row per step".into(),
        ));
    }
    if theta_signs
        .iter()
        .any(|s| s.iter().any(|&x| x != 1.0 && x != -1.0))
    {
        return Err(Error::Validation("theta_signs entries must be +-1".into()));
    }
    if grid_size < 2 * dim {
        return Err(Error::Validation(
            "grid must include at least the 2d signed basis directions".into(),
        ));
    }
    let extras = grid_size - 2 * dim;
    if dim < 64 && extras > (1usize << dim) {
        return Err(Error::Validation(format!(
            "only {} sign-pattern extras exist in dimension {dim}",
            1usize << dim
        )));
    }

    let mut actions: Vec<DVector<f64>> = Vec::with_capacity(grid_size + 1);
    for j in 0..dim {
        let mut v = DVector::zeros(dim);
        v[j] = 1.0;
        actions.push(v);
    }
    for j in 0..dim {
        let mut v = DVector::zeros(dim);
        v[j] = -1.0;
        actions.push(v);
    }
    let scale = 1.0 / (dim as f64).sqrt();
    for b in 0..extras {
        let mut v = DVector::zeros(dim);
        for j in 0..dim {
            let bit = (b >> (dim - 1 - j)) & 1;
            v[j] = if bit == 1 { -scale } else { scale };
        }
        actions.push(v);
    }
    actions.push(DVector::zeros(dim));

    let a_n = actions.len();
    let mut features = DMatrix::zeros(a_n, dim + 1);
    for (a, v) in actions.iter().enumerate() {
        for j in 0..dim {
            features[(a, j)] = v[j] / 2.0;
        }
        features[(a, dim)] = 0.5;
    }
    let transitions = vec![DMatrix::from_element(a_n, 1, 1.0); horizon - 1];
    let theta: Vec<DVector<f64>> = theta_signs
        .iter()
        .map(|signs| {
            let mut t = DVector::zeros(dim + 1);
            for j in 0..dim {
                t[j] = mu * signs[j];
            }
            t[dim] = 1.0;
            t
        })
        .collect();

    let mdp = LinearMdp::new(
        1,
        a_n,
        horizon,
        features,
        transitions,
        theta,
        NoiseModel::Bernoulli,
        0,
    )?;
    let mut params = Map::new();
    params.insert("dim".into(), json!(dim));
    params.insert("horizon".into(), json!(horizon));
    params.insert("mu".into(), json!(mu));
    params.insert("grid_size".into(), json!(grid_size));
    params.insert("theta_signs".into(), json!(theta_signs));
    Ok(finish(
        format!("minimax-d{dim}-h{horizon}"),
        mdp,
        None,
        params,
    ))
}

/// Deterministic logging schedule for [`gen_minimax`] instances: half the
/// episodes play the zero action, the other half cycle through the
/// positive basis directions, the same action at every step of an episode.
/// The step covariates come out exactly `T/(8d) * [[I, 1], [1^T, 2d]]`.
pub fn minimax_offline_schedule(
    mdp: &LinearMdp,
    t_off: u64,
    rng: &mut SplitRng,
) -> Result<OfflineDataset> {
    let dim = mdp.feature_dim() - 1;
    if mdp.num_states() != 1 || mdp.num_actions() < 2 * dim + 1 {
        return Err(Error::Validation(
            "the schedule requires a minimax-style single-state instance".into(),
        ));
    }
    if t_off == 0 || t_off % (2 * dim as u64) != 0 {
        return Err(Error::Validation(format!(
            "t_off must be a positive multiple of 2d = {}",
            2 * dim
        )));
    }
    let zero_action = mdp.num_actions() - 1;
    let mut records = Vec::with_capacity((t_off as usize).saturating_mul(mdp.horizon()));
    for tau in 0..t_off {
        let action = if tau < t_off / 2 {
            zero_action
        } else {
            ((tau - t_off / 2) % dim as u64) as usize
        };
        let policy = Policy::Deterministic {
            actions: vec![vec![action]; mdp.horizon()],
        };
        let traj = mdp.sample_episode(&policy, rng)?;
        records.extend(traj.steps);
    }
    Ok(OfflineDataset {
        records,
        source_note: format!("minimax schedule, {t_off} episodes"),
    })
}

/// One-step bandit with `arms` arms: arm 0 pays 1 deterministically, every
/// other arm is Bernoulli with mean `1 - 3 eps`. The logging policy pulls
/// arm 0 only.
pub fn gen_mab_verification(eps: f64, arms: usize) -> Result<InstanceBundle> {
    if !(eps > 0.0 && eps < 1.0 / 3.0) {
        return Err(Error::Validation("eps must lie in (0, 1/3)".into()));
    }
    if arms < 2 {
        return Err(Error::Validation("need at least two arms".into()));
    }
    let mut theta = DVector::from_element(arms, 1.0 - 3.0 * eps);
    theta[0] = 1.0;
    let mdp = LinearMdp::new(
        1,
        arms,
        1,
        DMatrix::identity(arms, arms),
        vec![],
        vec![theta],
        NoiseModel::Bernoulli,
        0,
    )?;
    let logging = Policy::Deterministic {
        actions: vec![vec![0]],
    };
    let mut params = Map::new();
    params.insert("eps".into(), json!(eps));
    params.insert("arms".into(), json!(arms));
    params.insert("gap".into(), json!(3.0 * eps));
    Ok(finish(
        format!("mab-a{arms}-eps{eps}"),
        mdp,
        Some(logging),
        params,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FeatureMode {
    /// Standard-basis features over state-action pairs, `d = S * A`.
    /// Transitions are exactly linear by construction.
    Basis,
    /// Random unit directions padded with a constant coordinate,
    /// `phi = [sqrt(3)/2 * u, 1/2]` with `u` uniform on the unit sphere of
    /// `R^(dim-1)`. Rewards stay exactly linear; transitions generally are
    /// not, and the recorded linearity residual says by how much.
    RandomUnit { dim: usize },
}

/// Random tabular instance: Dirichlet(1) transition rows and mean rewards
/// in `[0.1, 0.9]`, reproducible from the seed alone.
pub fn gen_random_tabular(
    s_n: usize,
    a_n: usize,
    horizon: usize,
    seed: u64,
    mode: FeatureMode,
) -> Result<InstanceBundle> {
    if s_n == 0 || a_n == 0 || horizon == 0 {
        return Err(Error::Validation("sizes must be positive".into()));
    }
    if s_n
        .saturating_mul(a_n)
        .saturating_mul(horizon)
        > MAX_TABULAR_CELLS
    {
        return Err(Error::Validation(format!(
            "instance size S*A*H exceeds the cap {MAX_TABULAR_CELLS}"
        )));
    }
    let sa = s_n * a_n;
    let root = SplitRng::new(seed);
    let mut trans_rng = root.split(1);
    let mut reward_rng = root.split(2);
    let mut feat_rng = root.split(3);

    let mut transitions = Vec::with_capacity(horizon - 1);
    for _ in 0..horizon - 1 {
        let mut p = DMatrix::zeros(sa, s_n);
        for row in 0..sa {
            let mut total = 0.0;
            for col in 0..s_n {
                // Exp(1) draws normalize to a flat Dirichlet row.
                let g = -(1.0 - trans_rng.uniform()).ln();
                p[(row, col)] = g;
                total += g;
            }
            for col in 0..s_n {
                p[(row, col)] /= total;
            }
        }
        transitions.push(p);
    }

    let mut means = DVector::zeros(sa);
    let (features, theta) = match mode {
        FeatureMode::Basis => {
            let mut theta = Vec::with_capacity(horizon);
            for _ in 0..horizon {
                let mut t = DVector::zeros(sa);
                for i in 0..sa {
                    t[i] = 0.1 + 0.8 * reward_rng.uniform();
                    means[i] = t[i];
                }
                theta.push(t);
            }
            (DMatrix::identity(sa, sa), theta)
        }
        FeatureMode::RandomUnit { dim } => {
            if dim < 2 {
                return Err(Error::Validation(
                    "random-unit features need dim >= 2".into(),
                ));
            }
            let mut features = DMatrix::zeros(sa, dim);
            for row in 0..sa {
                let u = random_unit(dim - 1, &mut feat_rng);
                for j in 0..dim - 1 {
                    features[(row, j)] = 0.75f64.sqrt() * u[j];
                }
                features[(row, dim - 1)] = 0.5;
            }
            let mut theta = Vec::with_capacity(horizon);
            for _ in 0..horizon {
                let w = random_unit(dim - 1, &mut reward_rng);
                // Scale keeps every mean reward inside [0.1, 0.9].
                let c = 0.46 * reward_rng.uniform();
                let mut t = DVector::zeros(dim);
                for j in 0..dim - 1 {
                    t[j] = c * w[j];
                }
                t[dim - 1] = 1.0;
                theta.push(t);
            }
            (features, theta)
        }
    };

    let mdp = LinearMdp::new(
        s_n,
        a_n,
        horizon,
        features,
        transitions,
        theta,
        NoiseModel::Bernoulli,
        0,
    )?;
    let report = mdp.validate();
    let mode_tag = match mode {
        FeatureMode::Basis => "basis".to_string(),
        FeatureMode::RandomUnit { dim } => format!("unit{dim}"),
    };
    let mut params = Map::new();
    params.insert("seed".into(), json!(seed));
    params.insert("mode".into(), serde_json::to_value(mode)?);
    params.insert(
        "max_linearity_residual".into(),
        json!(report.max_linearity_residual),
    );
    params.insert("exactly_linear".into(), json!(report.exactly_linear));
    Ok(finish(
        format!("random-s{s_n}-a{a_n}-h{horizon}-{mode_tag}-seed{seed}"),
        mdp,
        None,
        params,
    ))
}

fn random_unit(dim: usize, rng: &mut SplitRng) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(dim, |_, _| rng.standard_normal());
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}
