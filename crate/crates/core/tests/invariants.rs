//! Cross-module invariants checked on randomized inputs. Each property uses
//! the seeded instance generator, so shrinking stays meaningful: a failing
//! case is reproducible from the printed seed alone.

use nalgebra::DVector;
use proptest::prelude::*;

use ftpedel::ftpedel::eliminate;
use ftpedel::instances::{
    gen_mab_verification, gen_random_tabular, gen_separation, FeatureMode, InstanceBundle,
};
use ftpedel::mdp_core::Policy;
use ftpedel::offline::{
    concentrability, generate_offline, generate_offline_summary, OfflineDataset, StepCovariates,
};
use ftpedel::rng::SplitRng;
use ftpedel::verify::cover_softmax_class;
use ftpedel::visitation::{enumerate_det_policies, exact_profile, policy_value_dp};

const ENUM_CAP: u128 = 100_000;

fn random_bundle(seed: u64, s_n: usize, a_n: usize, h_n: usize) -> InstanceBundle {
    let mode = if seed % 2 == 0 {
        FeatureMode::Basis
    } else {
        FeatureMode::RandomUnit { dim: 3 }
    };
    gen_random_tabular(s_n, a_n, h_n, seed, mode).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// A mixture's visitation profile is the weighted sum of its
    /// components' profiles, step by step.
    #[test]
    fn mixture_profiles_combine_linearly(
        seed in 0u64..1_000,
        s_n in 2usize..4,
        a_n in 2usize..4,
        h_n in 1usize..4,
        w in 0.05f64..0.95,
    ) {
        let bundle = random_bundle(seed, s_n, a_n, h_n);
        let mdp = &bundle.mdp;
        let a = Policy::uniform_random(mdp);
        let b = bundle.optimal_policy.clone();
        let mix = Policy::mixture(vec![(w, a.clone()), (1.0 - w, b.clone())]);

        let pa = exact_profile(mdp, &a).unwrap();
        let pb = exact_profile(mdp, &b).unwrap();
        let pm = exact_profile(mdp, &mix).unwrap();

        prop_assert!((pm.value - (w * pa.value + (1.0 - w) * pb.value)).abs() <= 1e-10);
        for h in 0..mdp.horizon() {
            let expect = w * &pa.feature_visitations[h] + (1.0 - w) * &pb.feature_visitations[h];
            prop_assert!((&pm.feature_visitations[h] - expect).norm() <= 1e-10);
            let cov = w * &pa.covariances[h] + (1.0 - w) * &pb.covariances[h];
            prop_assert!((&pm.covariances[h] - cov).norm() <= 1e-10);
        }
    }

    /// The profile value, the dynamic-programming value, and the
    /// feature-times-reward-parameter sum all agree.
    #[test]
    fn value_identities_agree(
        seed in 0u64..1_000,
        s_n in 2usize..4,
        a_n in 2usize..4,
        h_n in 1usize..4,
    ) {
        let bundle = random_bundle(seed, s_n, a_n, h_n);
        let mdp = &bundle.mdp;
        for policy in [Policy::uniform_random(mdp), bundle.optimal_policy.clone()] {
            let profile = exact_profile(mdp, &policy).unwrap();
            let dp = policy_value_dp(mdp, &policy).unwrap();
            let lin: f64 = (0..mdp.horizon())
                .map(|h| profile.feature_visitations[h].dot(mdp.theta(h)))
                .sum();
            prop_assert!((profile.value - dp).abs() <= 1e-10);
            prop_assert!((profile.value - lin).abs() <= 1e-10);
            // Weights are occupancy measures: each step sums to one.
            for h in 0..mdp.horizon() {
                let total: f64 = profile.weights[h].iter().sum();
                prop_assert!((total - 1.0).abs() <= 1e-10);
            }
        }
    }

    /// Serialized datasets summarize identically after a round trip, and
    /// the streaming generator matches the record-keeping one.
    #[test]
    fn offline_round_trips_preserve_statistics(
        seed in 0u64..1_000,
        episodes in 1u64..200,
    ) {
        let bundle = random_bundle(seed, 2, 3, 3);
        let mdp = &bundle.mdp;
        let logging = Policy::uniform_random(mdp);

        let dataset = generate_offline(mdp, &logging, episodes, &mut SplitRng::new(seed)).unwrap();
        let direct = generate_offline_summary(mdp, &logging, episodes, &mut SplitRng::new(seed))
            .unwrap();

        let mut buf = Vec::new();
        dataset.write_jsonl(&mut buf).unwrap();
        let back = OfflineDataset::read_jsonl(buf.as_slice(), mdp).unwrap();
        prop_assert_eq!(&back.records, &dataset.records);

        let a = dataset.summarize(mdp).unwrap();
        for h in 0..mdp.horizon() {
            prop_assert_eq!(a.steps[h].count, direct.steps[h].count);
            let ca = a.steps[h].covariance(mdp);
            let cb = direct.steps[h].covariance(mdp);
            prop_assert!((ca - cb).norm() <= 1e-9);
            let ra = a.steps[h].phi_reward(mdp);
            let rb = direct.steps[h].phi_reward(mdp);
            prop_assert!((ra - rb).norm() <= 1e-9);
        }
    }

    /// Instance bundles survive a JSON round trip exactly.
    #[test]
    fn bundles_round_trip_through_json(seed in 0u64..500) {
        let bundles = vec![
            random_bundle(seed, 2, 2, 2),
            gen_separation(0.01 + (seed as f64 % 40.0) * 1e-3, 1 + (seed % 2) as u8).unwrap(),
            gen_mab_verification(0.05 + (seed as f64 % 25.0) * 1e-2, 2 + (seed % 3) as usize)
                .unwrap(),
        ];
        for bundle in bundles {
            let text = serde_json::to_string(&bundle).unwrap();
            let back: InstanceBundle = serde_json::from_str(&text).unwrap();
            prop_assert_eq!(serde_json::to_string(&back).unwrap(), text);
        }
    }

    /// The empirically best candidate always survives elimination, and
    /// everything kept is within twice the accuracy of the best.
    #[test]
    fn elimination_keeps_the_best(
        values in prop::collection::vec(-1.0f64..1.0, 1..40),
        eps in 1e-3f64..0.5,
    ) {
        let kept = eliminate(&values, eps);
        let best = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let arg_best = values.iter().position(|&v| v == best).unwrap();
        prop_assert!(kept.contains(&arg_best));
        for &i in &kept {
            prop_assert!(values[i] >= best - 2.0 * eps - 1e-12);
        }
        for (i, &v) in values.iter().enumerate() {
            if v >= best - 2.0 * eps {
                prop_assert!(kept.contains(&i));
            }
        }
    }

    /// Adding data never increases any policy's concentrability.
    #[test]
    fn concentrability_shrinks_with_more_data(
        seed in 0u64..1_000,
        small_n in 5u64..50,
        extra_n in 1u64..100,
    ) {
        let bundle = random_bundle(seed, 2, 3, 2);
        let mdp = &bundle.mdp;
        let logging = Policy::uniform_random(mdp);
        let big = generate_offline(mdp, &logging, small_n + extra_n, &mut SplitRng::new(seed))
            .unwrap();
        let small = OfflineDataset {
            records: big.records[..(small_n as usize) * mdp.horizon()].to_vec(),
            source_note: String::new(),
        };
        let lam = 1.0 / mdp.feature_dim() as f64;
        let cov_small = StepCovariates::from_summary(&small.summarize(mdp).unwrap(), mdp, lam);
        let cov_big = StepCovariates::from_summary(&big.summarize(mdp).unwrap(), mdp, lam);

        for policy in [bundle.optimal_policy.clone(), Policy::uniform_random(mdp)] {
            let phis = exact_profile(mdp, &policy).unwrap().feature_visitations;
            let c_small = concentrability(&phis, &cov_small).unwrap();
            let c_big = concentrability(&phis, &cov_big).unwrap();
            prop_assert!(c_big <= c_small + 1e-9);
        }
    }

    /// Split streams are addressed by label, not by the order in which
    /// they are drawn from.
    #[test]
    fn rng_streams_are_label_addressed(seed in 0u64..10_000, a in 0u64..64, b in 0u64..64) {
        prop_assume!(a != b);
        let root = SplitRng::new(seed);
        let mut s1 = root.split(a);
        let mut s2 = root.split(b);
        let x1: Vec<f64> = (0..8).map(|_| s1.uniform()).collect();
        let y1: Vec<f64> = (0..8).map(|_| s2.uniform()).collect();

        let root2 = SplitRng::new(seed);
        let mut s2b = root2.split(b);
        let y2: Vec<f64> = (0..8).map(|_| s2b.uniform()).collect();
        let mut s1b = root2.split(a);
        let x2: Vec<f64> = (0..8).map(|_| s1b.uniform()).collect();

        prop_assert_eq!(x1, x2);
        prop_assert_eq!(y1, y2);
    }

    /// Every policy in a softmax cover is a valid distribution over
    /// actions at every slot it can reach. The grid is exponential in the
    /// weight dimension, so the parameters stay in single-step territory.
    #[test]
    fn softmax_cover_members_are_valid(
        seed in 0u64..200,
        eta in 0.5f64..2.0,
        gamma in 0.5f64..1.5,
    ) {
        let bundle = random_bundle(seed, 2, 2, 1);
        let mdp = &bundle.mdp;
        let class = cover_softmax_class(mdp, eta, -0.5, 0.5, gamma, 100_000).unwrap();
        prop_assert!(!class.is_empty());
        for policy in class.members.iter().take(32) {
            for h in 0..mdp.horizon() {
                for s in 0..mdp.num_states() {
                    let probs = policy.action_probs(mdp, h, s).unwrap();
                    let total: f64 = probs.iter().sum();
                    prop_assert!((total - 1.0).abs() <= 1e-9);
                    prop_assert!(probs.iter().all(|&p| (0.0..=1.0).contains(&p)));
                }
            }
        }
    }

    /// Deterministic enumeration produces the advertised number of
    /// distinct, compatible policies.
    #[test]
    fn enumeration_is_complete_and_distinct(
        seed in 0u64..500,
        s_n in 2usize..3,
        a_n in 2usize..4,
        h_n in 1usize..3,
    ) {
        let bundle = random_bundle(seed, s_n, a_n, h_n);
        let mdp = &bundle.mdp;
        let class = enumerate_det_policies(mdp, ENUM_CAP, false).unwrap();
        prop_assert_eq!(class.len() as u128, (a_n as u128).pow((s_n * h_n) as u32));
        for (i, p) in class.members.iter().enumerate() {
            let is_det = matches!(p, Policy::Deterministic { .. });
            prop_assert!(is_det);
            for q in &class.members[i + 1..] {
                prop_assert!(p != q);
            }
        }

        // The pruned class evaluates to the same set of values.
        let pruned = enumerate_det_policies(mdp, ENUM_CAP, true).unwrap();
        let mut full_values: Vec<f64> = class
            .members
            .iter()
            .map(|p| policy_value_dp(mdp, p).unwrap())
            .collect();
        let mut pruned_values: Vec<f64> = pruned
            .members
            .iter()
            .map(|p| policy_value_dp(mdp, p).unwrap())
            .collect();
        full_values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        full_values.dedup_by(|a, b| (*a - *b).abs() <= 1e-12);
        pruned_values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        pruned_values.dedup_by(|a, b| (*a - *b).abs() <= 1e-12);
        prop_assert_eq!(full_values.len(), pruned_values.len());
        for (a, b) in full_values.iter().zip(&pruned_values) {
            prop_assert!((a - b).abs() <= 1e-10);
        }
    }
}

/// Feature visitations always have norm at most one per step; the
/// transition matrices of generated instances are row-stochastic.
#[test]
fn generated_instances_are_well_formed() {
    for seed in 0..20u64 {
        let bundle = random_bundle(seed, 3, 3, 3);
        let mdp = &bundle.mdp;
        let report = mdp.validate();
        assert!(report.violations.is_empty(), "{:?}", report.violations);
        for h in 0..mdp.horizon() - 1 {
            let p = mdp.transition_matrix(h);
            for r in 0..p.nrows() {
                let total: f64 = p.row(r).iter().sum();
                assert!((total - 1.0).abs() <= 1e-9);
            }
        }
        let profile = exact_profile(mdp, &Policy::uniform_random(mdp)).unwrap();
        for phi in &profile.feature_visitations {
            assert!(phi.norm() <= 1.0 + 1e-9);
        }
    }
}

/// Whitened coverage of a fixed direction shrinks as episodes accumulate.
#[test]
fn coverage_improves_with_episodes() {
    let bundle = random_bundle(3, 2, 2, 2);
    let mdp = &bundle.mdp;
    let logging = Policy::uniform_random(mdp);
    let phi: DVector<f64> = exact_profile(mdp, &logging).unwrap().feature_visitations[0].clone();
    let mut last = f64::INFINITY;
    for episodes in [10u64, 100, 1_000] {
        let summary =
            generate_offline_summary(mdp, &logging, episodes, &mut SplitRng::new(9)).unwrap();
        let cov = StepCovariates::from_summary(&summary, mdp, 1.0 / mdp.feature_dim() as f64);
        let chol = ftpedel::linalg::cholesky(&cov.regularized(0), "coverage check").unwrap();
        let quad = ftpedel::linalg::inv_quad(&chol, &phi);
        assert!(quad < last);
        last = quad;
    }
}
