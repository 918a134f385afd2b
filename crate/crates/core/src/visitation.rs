//! Exact feature-visitation computations.
//!
//! For a Markov policy the state-action occupancy at each step follows the
//! forward recursion
//! `w_{h+1}(s', a') = pi_{h+1}(a' | s') * sum_{s,a} w_h(s, a) P_h(s' | s, a)`,
//! and everything else is a linear image of it: the expected feature
//! `phi_{pi,h} = Phi^T w_h`, the covariance `Lambda_{pi,h} = Phi^T diag(w_h) Phi`,
//! and the value `V_0^pi = sum_h <w_h, Phi theta_h>`. Mixtures combine the
//! component profiles convexly, because the mixing happens once per episode.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::mdp_core::{LinearMdp, Policy};

/// Exact per-step occupancies, expected features, covariances, and value of
/// a policy. `weights[h]` has length `S * A` and sums to one.
#[derive(Debug, Clone)]
pub struct VisitationProfile {
    pub weights: Vec<DVector<f64>>,
    pub feature_visitations: Vec<DVector<f64>>,
    pub covariances: Vec<DMatrix<f64>>,
    pub value: f64,
}

/// A finite policy class with a human-readable label for reports.
#[derive(Debug, Clone)]
pub struct PolicyClass {
    pub members: Vec<Policy>,
    pub label: String,
}

impl PolicyClass {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

pub const DEFAULT_ENUM_CAP: u128 = 1_000_000;

pub fn exact_profile(mdp: &LinearMdp, policy: &Policy) -> Result<VisitationProfile> {
    policy.check_compatible(mdp)?;
    profile_inner(mdp, policy)
}

fn profile_inner(mdp: &LinearMdp, policy: &Policy) -> Result<VisitationProfile> {
    if let Policy::Mixture { components } = policy {
        let mut combined: Option<VisitationProfile> = None;
        for c in components {
            let p = profile_inner(mdp, &c.policy)?;
            combined = Some(match combined {
                None => scale_profile(&p, c.weight),
                Some(mut acc) => {
                    for h in 0..mdp.horizon() {
                        acc.weights[h] += c.weight * &p.weights[h];
                        acc.feature_visitations[h] += c.weight * &p.feature_visitations[h];
                        acc.covariances[h] += c.weight * &p.covariances[h];
                    }
                    acc.value += c.weight * p.value;
                    acc
                }
            });
        }
        return Ok(combined.expect("mixture has components"));
    }

    let sa = mdp.num_states() * mdp.num_actions();
    let phi = mdp.feature_matrix();
    let mut weights = Vec::with_capacity(mdp.horizon());
    let mut feature_visitations = Vec::with_capacity(mdp.horizon());
    let mut covariances = Vec::with_capacity(mdp.horizon());
    let mut value = 0.0;

    // State occupancy at the current step; starts as a point mass.
    let mut state_occ = DVector::zeros(mdp.num_states());
    state_occ[mdp.initial_state()] = 1.0;

    for h in 0..mdp.horizon() {
        let mut w = DVector::zeros(sa);
        for s in 0..mdp.num_states() {
            let occ = state_occ[s];
            if occ == 0.0 {
                continue;
            }
            let probs = policy.action_probs(mdp, h, s)?;
            for a in 0..mdp.num_actions() {
                w[mdp.sa_index(s, a)] = occ * probs[a];
            }
        }

        let mut phi_vis = DVector::zeros(mdp.feature_dim());
        let mut cov = DMatrix::zeros(mdp.feature_dim(), mdp.feature_dim());
        for idx in 0..sa {
            if w[idx] == 0.0 {
                continue;
            }
            let f = phi.row(idx).transpose();
            phi_vis.axpy(w[idx], &f, 1.0);
            cov.ger(w[idx], &f, &f, 1.0);
        }
        value += phi_vis.dot(mdp.theta(h));

        if h + 1 < mdp.horizon() {
            let mut next_occ = DVector::zeros(mdp.num_states());
            let p = mdp.transition_matrix(h);
            for idx in 0..sa {
                if w[idx] == 0.0 {
                    continue;
                }
                for sp in 0..mdp.num_states() {
                    next_occ[sp] += w[idx] * p[(idx, sp)];
                }
            }
            state_occ = next_occ;
        }

        weights.push(w);
        feature_visitations.push(phi_vis);
        covariances.push(cov);
    }

    Ok(VisitationProfile {
        weights,
        feature_visitations,
        covariances,
        value,
    })
}

fn scale_profile(p: &VisitationProfile, c: f64) -> VisitationProfile {
    VisitationProfile {
        weights: p.weights.iter().map(|w| c * w).collect(),
        feature_visitations: p.feature_visitations.iter().map(|v| c * v).collect(),
        covariances: p.covariances.iter().map(|m| c * m).collect(),
        value: c * p.value,
    }
}

/// Exact policy value by backward induction. Independent of
/// [`exact_profile`]'s forward recursion, which makes it a useful
/// cross-check; mixtures are evaluated per component.
pub fn policy_value_dp(mdp: &LinearMdp, policy: &Policy) -> Result<f64> {
    policy.check_compatible(mdp)?;
    value_dp_inner(mdp, policy)
}

fn value_dp_inner(mdp: &LinearMdp, policy: &Policy) -> Result<f64> {
    if let Policy::Mixture { components } = policy {
        let mut v = 0.0;
        for c in components {
            v += c.weight * value_dp_inner(mdp, &c.policy)?;
        }
        return Ok(v);
    }
    let mut v_next = DVector::zeros(mdp.num_states());
    for h in (0..mdp.horizon()).rev() {
        let mut v = DVector::zeros(mdp.num_states());
        for s in 0..mdp.num_states() {
            let probs = policy.action_probs(mdp, h, s)?;
            let mut val = 0.0;
            for a in 0..mdp.num_actions() {
                if probs[a] == 0.0 {
                    continue;
                }
                let mut q = mdp.mean_reward(h, s, a);
                if h + 1 < mdp.horizon() {
                    let row = mdp.transition_matrix(h).row(mdp.sa_index(s, a));
                    q += row.transpose().dot(&v_next);
                }
                val += probs[a] * q;
            }
            v[s] = val;
        }
        v_next = v;
    }
    Ok(v_next[mdp.initial_state()])
}

/// Optimal deterministic policy and value by backward induction, with
/// lowest-action-index tie-breaking.
pub fn optimal_policy(mdp: &LinearMdp) -> (Policy, f64) {
    let mut v_next = DVector::zeros(mdp.num_states());
    let mut actions = vec![vec![0usize; mdp.num_states()]; mdp.horizon()];
    for h in (0..mdp.horizon()).rev() {
        let mut v = DVector::zeros(mdp.num_states());
        for s in 0..mdp.num_states() {
            let mut best = f64::NEG_INFINITY;
            let mut best_a = 0;
            for a in 0..mdp.num_actions() {
                let mut q = mdp.mean_reward(h, s, a);
                if h + 1 < mdp.horizon() {
                    let row = mdp.transition_matrix(h).row(mdp.sa_index(s, a));
                    q += row.transpose().dot(&v_next);
                }
                if q > best {
                    best = q;
                    best_a = a;
                }
            }
            v[s] = best;
            actions[h][s] = best_a;
        }
        v_next = v;
    }
    (
        Policy::Deterministic { actions },
        v_next[mdp.initial_state()],
    )
}

/// Enumerate all deterministic Markov policies in lexicographic order over
/// `(h, s)` slots. With `prune_unreachable` set, states that cannot be
/// reached from the initial state by step `h` are fixed to action 0 instead
/// of multiplying the class size.
pub fn enumerate_det_policies(
    mdp: &LinearMdp,
    cap: u128,
    prune_unreachable: bool,
) -> Result<PolicyClass> {
    let slots = policy_slots(mdp, prune_unreachable);
    let a = mdp.num_actions() as u128;
    let mut count: u128 = 1;
    for _ in &slots {
        count = count.checked_mul(a).ok_or(Error::EnumerationCap {
            count: u128::MAX,
            cap,
        })?;
    }
    if count > cap {
        return Err(Error::EnumerationCap { count, cap });
    }

    let mut members = Vec::with_capacity(count as usize);
    let mut digits = vec![0usize; slots.len()];
    loop {
        let mut actions = vec![vec![0usize; mdp.num_states()]; mdp.horizon()];
        for (slot, &(h, s)) in slots.iter().enumerate() {
            actions[h][s] = digits[slot];
        }
        members.push(Policy::Deterministic { actions });

        // Odometer increment on the last slot, so policies come out in
        // lexicographic order of their action tuples.
        let mut pos = slots.len();
        loop {
            if pos == 0 {
                return Ok(PolicyClass {
                    members,
                    label: if prune_unreachable {
                        "deterministic (pruned)".to_string()
                    } else {
                        "deterministic".to_string()
                    },
                });
            }
            pos -= 1;
            digits[pos] += 1;
            if digits[pos] < mdp.num_actions() {
                break;
            }
            digits[pos] = 0;
        }
        if slots.is_empty() {
            // Single policy when there are no free slots.
            return Ok(PolicyClass {
                members,
                label: "deterministic (pruned)".to_string(),
            });
        }
    }
}

fn policy_slots(mdp: &LinearMdp, prune_unreachable: bool) -> Vec<(usize, usize)> {
    let reachable = reachable_states(mdp);
    let mut slots = Vec::new();
    for h in 0..mdp.horizon() {
        for s in 0..mdp.num_states() {
            if !prune_unreachable || reachable[h][s] {
                slots.push((h, s));
            }
        }
    }
    slots
}

/// `reachable[h][s]` is true when some action sequence reaches `s` at step `h`.
pub fn reachable_states(mdp: &LinearMdp) -> Vec<Vec<bool>> {
    let mut reachable = vec![vec![false; mdp.num_states()]; mdp.horizon()];
    reachable[0][mdp.initial_state()] = true;
    for h in 0..mdp.horizon().saturating_sub(1) {
        let p = mdp.transition_matrix(h);
        for s in 0..mdp.num_states() {
            if !reachable[h][s] {
                continue;
            }
            for a in 0..mdp.num_actions() {
                let row = p.row(mdp.sa_index(s, a));
                for sp in 0..mdp.num_states() {
                    if row[sp] > 0.0 {
                        reachable[h + 1][sp] = true;
                    }
                }
            }
        }
    }
    reachable
}

/// Softmax policies on the Cartesian product of per-step weight grids.
pub fn softmax_grid(
    mdp: &LinearMdp,
    temperature: f64,
    per_step_weights: &[Vec<Vec<f64>>],
    cap: u128,
) -> Result<PolicyClass> {
    if per_step_weights.len() != mdp.horizon() {
        return Err(Error::DimensionMismatch(format!(
            "expected {} weight grids, got {}",
            mdp.horizon(),
            per_step_weights.len()
        )));
    }
    let mut count: u128 = 1;
    for grid in per_step_weights {
        if grid.is_empty() {
            return Err(Error::Validation("empty softmax weight grid".into()));
        }
        if grid.iter().any(|w| w.len() != mdp.feature_dim()) {
            return Err(Error::DimensionMismatch(
                "softmax grid weight length must equal feature dim".into(),
            ));
        }
        count = count
            .checked_mul(grid.len() as u128)
            .ok_or(Error::EnumerationCap {
                count: u128::MAX,
                cap,
            })?;
    }
    if count > cap {
        return Err(Error::EnumerationCap { count, cap });
    }

    let mut members = Vec::with_capacity(count as usize);
    let mut indices = vec![0usize; per_step_weights.len()];
    loop {
        let weights: Vec<Vec<f64>> = indices
            .iter()
            .enumerate()
            .map(|(h, &i)| per_step_weights[h][i].clone())
            .collect();
        members.push(Policy::Softmax {
            temperature,
            weights,
        });
        let mut pos = per_step_weights.len();
        loop {
            if pos == 0 {
                return Ok(PolicyClass {
                    members,
                    label: format!("softmax grid (temperature {temperature})"),
                });
            }
            pos -= 1;
            indices[pos] += 1;
            if indices[pos] < per_step_weights[pos].len() {
                break;
            }
            indices[pos] = 0;
        }
    }
}

/// Result of [`covariance_best_response`].
#[derive(Debug, Clone)]
pub struct BestResponse {
    pub policy: Policy,
    pub covariance: DMatrix<f64>,
    /// `tr(G * covariance)`, the optimal objective value.
    pub objective: f64,
}

/// Deterministic policy maximizing `tr(G * Lambda_{pi, step})` over all
/// policies, by dynamic programming on the surrogate reward
/// `phi(s, a)^T G phi(s, a)` placed at `step`. `g` must be symmetric.
pub fn covariance_best_response(
    mdp: &LinearMdp,
    step: usize,
    g: &DMatrix<f64>,
) -> Result<BestResponse> {
    let d = mdp.feature_dim();
    if g.nrows() != d || g.ncols() != d {
        return Err(Error::DimensionMismatch(format!(
            "objective matrix must be {d} x {d}"
        )));
    }
    if (g - g.transpose()).amax() > 1e-10 {
        return Err(Error::Validation(
            "covariance objective matrix must be symmetric".into(),
        ));
    }
    if step >= mdp.horizon() {
        return Err(Error::Validation(format!(
            "step {step} out of range for horizon {}",
            mdp.horizon()
        )));
    }

    let mut v_next = DVector::zeros(mdp.num_states());
    let mut actions = vec![vec![0usize; mdp.num_states()]; mdp.horizon()];
    for h in (0..mdp.horizon()).rev() {
        let mut v = DVector::zeros(mdp.num_states());
        for s in 0..mdp.num_states() {
            let mut best = f64::NEG_INFINITY;
            let mut best_a = 0;
            for a in 0..mdp.num_actions() {
                let mut q = 0.0;
                if h == step {
                    let f = mdp.feature(s, a);
                    q += (g * &f).dot(&f);
                }
                if h + 1 < mdp.horizon() {
                    let row = mdp.transition_matrix(h).row(mdp.sa_index(s, a));
                    q += row.transpose().dot(&v_next);
                }
                if q > best {
                    best = q;
                    best_a = a;
                }
            }
            v[s] = best;
            actions[h][s] = best_a;
        }
        v_next = v;
    }

    let policy = Policy::Deterministic { actions };
    let profile = exact_profile(mdp, &policy)?;
    Ok(BestResponse {
        objective: v_next[mdp.initial_state()],
        covariance: profile.covariances[step].clone(),
        policy,
    })
}

/// Result of [`max_min_eig`].
#[derive(Debug, Clone)]
pub struct MaxMinEig {
    pub mixture: Policy,
    pub lambda_min: f64,
    pub covariance: DMatrix<f64>,
}

/// Frank-Wolfe maximization of the minimum eigenvalue of the step-`step`
/// covariance over mixtures of deterministic policies. Each iteration takes
/// a subgradient `u u^T` for `u` a minimal eigenvector, computes the exact
/// best response, and steps with weight `2 / (t + 2)`.
pub fn max_min_eig(mdp: &LinearMdp, step: usize, iters: usize) -> Result<MaxMinEig> {
    if iters == 0 {
        return Err(Error::Validation("max_min_eig needs at least 1 iteration".into()));
    }
    let init = covariance_best_response(mdp, step, &DMatrix::identity(mdp.feature_dim(), mdp.feature_dim()))?;
    let mut cov = init.covariance.clone();
    let mut atoms: Vec<(Policy, f64)> = vec![(init.policy, 1.0)];

    for t in 1..iters {
        let u = min_eigvec(&cov);
        let g = &u * u.transpose();
        let br = covariance_best_response(mdp, step, &g)?;
        let gamma = 2.0 / (t as f64 + 2.0);
        cov = (1.0 - gamma) * &cov + gamma * &br.covariance;
        for (_, w) in atoms.iter_mut() {
            *w *= 1.0 - gamma;
        }
        match atoms.iter_mut().find(|(p, _)| *p == br.policy) {
            Some((_, w)) => *w += gamma,
            None => atoms.push((br.policy, gamma)),
        }
    }

    let lambda_min = min_eigval(&cov);
    Ok(MaxMinEig {
        mixture: Policy::mixture(atoms.into_iter().map(|(p, w)| (w, p)).collect()),
        lambda_min,
        covariance: cov,
    })
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigval(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Unit eigenvector for the smallest eigenvalue, taking the lowest index on
/// ties so the choice is deterministic.
fn min_eigvec(m: &DMatrix<f64>) -> DVector<f64> {
    let eig = m.clone().symmetric_eigen();
    let mut best = 0;
    for i in 1..eig.eigenvalues.len() {
        if eig.eigenvalues[i] < eig.eigenvalues[best] {
            best = i;
        }
    }
    eig.eigenvectors.column(best).into_owned()
}
