//! Pipeline-level properties: output shapes, seed stability, spanner
//! reconstruction against enumerated policy means, and outlier-detection
//! instrumentation on planted environments.

mod common;

use lbc_core::env::{EnvKind, EnvSpec};
use lbc_core::pipeline::{
    compute_spanner_fqi, compute_spanner_ocp, end_to_end_fqi, end_to_end_ocp, Knobs,
    ParameterSchedule, ScheduleMode,
};
use lbc_core::rng::RngStream;
use lbc_core::rollout::exact_feature_expectation;
use lbc_core::subspace_cover::subspace_cover;

fn small_env(seed: u64) -> EnvSpec {
    EnvSpec {
        kind: EnvKind::RotatedTabular,
        d: 8,
        horizon: 2,
        num_states: 4,
        num_actions: 2,
        seed,
        reward_noise_scale: 0.0,
        hidden_fraction: 0.0,
    }
}

#[test]
fn spanner_fqi_outputs_d_policies_per_layer() {
    let mdp = small_env(1).build().unwrap();
    let schedule =
        ParameterSchedule::new(0.3, 0.1, mdp.dim(), mdp.horizon(), ScheduleMode::Practical, 0.02)
            .unwrap();
    let phase1 = compute_spanner_fqi(&mdp, &schedule, RngStream::new(1)).unwrap();
    for layer in 0..mdp.horizon() {
        assert_eq!(phase1.spanners[layer].len(), mdp.dim());
        assert!(phase1.covers[layer].len() <= mdp.dim());
        assert!(phase1.subspaces[layer].dim() <= mdp.dim());
    }
}

#[test]
fn spanner_fqi_is_seed_stable() {
    let mdp = small_env(2).build().unwrap();
    let schedule =
        ParameterSchedule::new(0.3, 0.1, mdp.dim(), mdp.horizon(), ScheduleMode::Practical, 0.02)
            .unwrap();
    let a = compute_spanner_fqi(&mdp, &schedule, RngStream::new(7)).unwrap();
    let b = compute_spanner_fqi(&mdp, &schedule, RngStream::new(7)).unwrap();
    for layer in 0..mdp.horizon() {
        assert_eq!(a.spanners[layer].len(), b.spanners[layer].len());
        for (pa, pb) in a.spanners[layer].iter().zip(b.spanners[layer].iter()) {
            assert_eq!(pa.params(), pb.params(), "layer {layer}: spanner parameters differ");
        }
        for (pa, pb) in a.covers[layer].iter().zip(b.covers[layer].iter()) {
            assert_eq!(pa.params(), pb.params(), "layer {layer}: cover parameters differ");
        }
    }
}

#[test]
fn end_to_end_fqi_report_is_seed_stable() {
    let spec = EnvSpec {
        kind: EnvKind::HiddenSubspace,
        d: 8,
        horizon: 2,
        num_states: 4,
        num_actions: 2,
        seed: 5,
        reward_noise_scale: 0.25,
        hidden_fraction: 1.0,
    };
    let mdp = spec.build().unwrap();
    let knobs = Knobs {
        c0: 1e-3,
        n_override: Some(500),
        mode: ScheduleMode::Practical,
        scale: 0.02,
        ..Default::default()
    };
    let (_, ra) = end_to_end_fqi(&mdp, 0.2, 0.1, &knobs, RngStream::new(11)).unwrap();
    let (_, rb) = end_to_end_fqi(&mdp, 0.2, 0.1, &knobs, RngStream::new(11)).unwrap();
    let ja = serde_json::to_string(&ra).unwrap();
    let jb = serde_json::to_string(&rb).unwrap();
    assert_eq!(ja, jb);
}

#[test]
fn horizon_one_reduces_to_layer_one_spanner() {
    let spec = EnvSpec {
        kind: EnvKind::RotatedTabular,
        d: 4,
        horizon: 1,
        num_states: 2,
        num_actions: 2,
        seed: 3,
        reward_noise_scale: 0.0,
        hidden_fraction: 0.0,
    };
    let mdp = spec.build().unwrap();
    let schedule =
        ParameterSchedule::new(0.3, 0.1, mdp.dim(), mdp.horizon(), ScheduleMode::Practical, 0.05)
            .unwrap();
    let phase1 = compute_spanner_fqi(&mdp, &schedule, RngStream::new(4)).unwrap();
    assert_eq!(phase1.spanners.len(), 1);
    assert_eq!(phase1.spanners[0].len(), mdp.dim());
    // No earlier layers exist, so every cover policy is a pure layer-0 greedy.
    for pi in &phase1.covers[0] {
        assert_eq!(pi.layers(), 1);
    }
}

#[test]
fn spanner_ocp_reconstructs_two_arm_mean_features() {
    // d = 2 environment with two distinct reachable mean features (one per
    // arm); the spanner must reconstruct both within 9 d eps.
    let spec = EnvSpec {
        kind: EnvKind::RotatedTabular,
        d: 2,
        horizon: 1,
        num_states: 1,
        num_actions: 2,
        seed: 9,
        reward_noise_scale: 0.0,
        hidden_fraction: 0.0,
    };
    let mdp = spec.build().unwrap();
    let eps = 0.05;
    let schedule =
        ParameterSchedule::new(eps, 0.1, mdp.dim(), mdp.horizon(), ScheduleMode::Practical, 0.05)
            .unwrap();
    let (gammas, _) = compute_spanner_ocp(&mdp, 60, &schedule, RngStream::new(2)).unwrap();
    assert_eq!(gammas[0].len(), 2);
    let spanner_means: Vec<_> = gammas[0]
        .iter()
        .map(|pi| exact_feature_expectation(&mdp, 0, pi).unwrap())
        .collect();
    let w = lbc_core::nalgebra::DMatrix::from_columns(&spanner_means);
    for a in 0..2 {
        let target = mdp.feature(0, 0, a);
        let beta = w.clone().lu().solve(target);
        match beta {
            Some(beta) => {
                let recon = &spanner_means[0] * beta[0] + &spanner_means[1] * beta[1];
                let err = (target - recon).norm();
                assert!(err <= 9.0 * 2.0 * eps, "reconstruction error {err}");
                assert!(beta.amax() <= 2.01, "coefficient {}", beta.amax());
            }
            // Degenerate spanner matrix would itself be a failure.
            None => panic!("spanner mean-feature matrix is singular"),
        }
    }
}

#[test]
fn spanner_fqi_reconstructs_all_markov_policy_means() {
    let mdp = small_env(6).build().unwrap();
    let eps = 0.3;
    let schedule =
        ParameterSchedule::new(eps, 0.1, mdp.dim(), mdp.horizon(), ScheduleMode::Practical, 0.02)
            .unwrap();
    let phase1 = compute_spanner_fqi(&mdp, &schedule, RngStream::new(8)).unwrap();
    let layer = mdp.horizon() - 1;
    let exact_spanner_means: Vec<_> = phase1.spanners[layer]
        .iter()
        .map(|pi| exact_feature_expectation(&mdp, layer, pi).unwrap())
        .collect();
    let w = lbc_core::nalgebra::DMatrix::from_columns(&exact_spanner_means);
    let lu = w.lu();
    let policies = common::enumerate_markov_policies(&mdp);
    assert_eq!(policies.len(), 256);
    let mut max_err = 0.0f64;
    let mut max_beta = 0.0f64;
    for maps in &policies {
        let mean = common::exact_mean_feature_of_map(&mdp, layer, maps);
        let beta = lu.solve(&mean).expect("nonsingular spanner matrix");
        let mut recon = lbc_core::nalgebra::DVector::zeros(mdp.dim());
        for (j, m) in exact_spanner_means.iter().enumerate() {
            recon += m * beta[j];
        }
        max_err = max_err.max((&mean - recon).norm());
        max_beta = max_beta.max(beta.amax());
    }
    // The analytical guarantee is 25 d eps; at this scale the spanner is far
    // better, so pin a meaningful empirical threshold as well.
    assert!(max_err <= 25.0 * mdp.dim() as f64 * eps, "reconstruction error {max_err}");
    assert!(max_err <= 0.25, "reconstruction error {max_err} unexpectedly large");
    assert!(max_beta <= 2.2, "coefficient {max_beta} exceeds tolerance");
}

#[test]
fn spanner_ocp_is_seed_stable() {
    let spec = EnvSpec {
        kind: EnvKind::RotatedTabular,
        d: 4,
        horizon: 2,
        num_states: 2,
        num_actions: 2,
        seed: 14,
        reward_noise_scale: 0.0,
        hidden_fraction: 0.0,
    };
    let mdp = spec.build().unwrap();
    let schedule =
        ParameterSchedule::new(0.2, 0.1, mdp.dim(), mdp.horizon(), ScheduleMode::Practical, 0.02)
            .unwrap();
    let (ga, _) = compute_spanner_ocp(&mdp, 40, &schedule, RngStream::new(15)).unwrap();
    let (gb, _) = compute_spanner_ocp(&mdp, 40, &schedule, RngStream::new(15)).unwrap();
    for layer in 0..mdp.horizon() {
        for (pa, pb) in ga[layer].iter().zip(gb[layer].iter()) {
            let ma = exact_feature_expectation(&mdp, layer, pa).unwrap();
            let mb = exact_feature_expectation(&mdp, layer, pb).unwrap();
            assert_eq!(ma, mb, "layer {layer}: spanner policies differ across reruns");
        }
    }
}

#[test]
fn noiseless_end_to_end_runs_are_exact() {
    // With deterministic rewards both end-to-end routes recover the exact
    // optimum at moderate knobs.
    let spec = EnvSpec {
        kind: EnvKind::HiddenSubspace,
        d: 8,
        horizon: 2,
        num_states: 4,
        num_actions: 2,
        seed: 16,
        reward_noise_scale: 0.0,
        hidden_fraction: 1.0,
    };
    let mdp = spec.build().unwrap();
    let d = mdp.dim() as f64;
    let h = mdp.horizon() as f64;
    let eps = 0.15;
    let delta = 0.1;
    let l_fqi = (d * h / (delta * eps)).ln().max(1.0);
    let knobs_fqi = Knobs {
        c0: 1.0 / (d * d * h * h * l_fqi),
        n_override: Some(2000),
        mode: ScheduleMode::Practical,
        scale: 0.02,
        ..Default::default()
    };
    let (_, report) = end_to_end_fqi(&mdp, eps, delta, &knobs_fqi, RngStream::new(17)).unwrap();
    assert!(report.suboptimality_exact.unwrap().abs() <= 1e-6);

    let l_ocp = d + (d * h / (delta * eps)).ln();
    let knobs_ocp = Knobs {
        c0: 1.0 / (d * h * l_ocp),
        t_ocp: 150,
        n_override: Some(2000),
        mode: ScheduleMode::Practical,
        scale: 0.02,
        ..Default::default()
    };
    let (_, report) = end_to_end_ocp(&mdp, eps, delta, &knobs_ocp, RngStream::new(18)).unwrap();
    assert!(report.suboptimality_exact.unwrap().abs() <= 1e-6);
}

#[test]
fn end_to_end_ocp_report_is_seed_stable() {
    let spec = EnvSpec {
        kind: EnvKind::RotatedTabular,
        d: 4,
        horizon: 2,
        num_states: 2,
        num_actions: 2,
        seed: 19,
        reward_noise_scale: 0.25,
        hidden_fraction: 0.0,
    };
    let mdp = spec.build().unwrap();
    let knobs = Knobs {
        c0: 1e-2,
        t_ocp: 40,
        n_override: Some(300),
        mode: ScheduleMode::Practical,
        scale: 0.02,
        ..Default::default()
    };
    let (_, ra) = end_to_end_ocp(&mdp, 0.2, 0.1, &knobs, RngStream::new(20)).unwrap();
    let (_, rb) = end_to_end_ocp(&mdp, 0.2, 0.1, &knobs, RngStream::new(20)).unwrap();
    assert_eq!(serde_json::to_string(&ra).unwrap(), serde_json::to_string(&rb).unwrap());
}

#[test]
fn subspace_cover_tracks_reachable_span_without_hiding() {
    // hidden_fraction = 0: all initial mass outside the planted half; the
    // cover must still recover exactly the reachable span at each layer.
    let spec = EnvSpec {
        kind: EnvKind::HiddenSubspace,
        d: 8,
        horizon: 2,
        num_states: 4,
        num_actions: 2,
        seed: 21,
        reward_noise_scale: 0.0,
        hidden_fraction: 0.0,
    };
    let mdp = spec.build().unwrap();
    let planted = lbc_core::env::reachable_feature_spans(&mdp).unwrap();
    let schedule =
        ParameterSchedule::new(0.3, 0.1, mdp.dim(), mdp.horizon(), ScheduleMode::Practical, 0.05)
            .unwrap();
    let mut covers = Vec::new();
    for layer in 0..mdp.horizon() {
        let cover =
            subspace_cover(&mdp, layer, &covers, &schedule, RngStream::new(22).substream(layer as u64))
                .unwrap();
        assert_eq!(cover.subspace.dim(), planted[layer].dim(), "layer {layer}");
        covers.push(cover.policies);
    }
}

#[test]
fn fqi_optimal_on_covered_initial_states() {
    // Covers built inside the planted subspace make FQI exactly optimal from
    // every initial state whose features stay covered; outside states carry
    // no guarantee (instrumented only).
    let spec = EnvSpec {
        kind: EnvKind::HiddenSubspace,
        d: 8,
        horizon: 2,
        num_states: 4,
        num_actions: 2,
        seed: 31,
        reward_noise_scale: 0.0,
        hidden_fraction: 1.0,
    };
    let mdp = spec.build().unwrap();
    let schedule =
        ParameterSchedule::new(0.3, 0.1, mdp.dim(), mdp.horizon(), ScheduleMode::Practical, 0.05)
            .unwrap();
    let cover = subspace_cover(&mdp, 0, &[], &schedule, RngStream::new(32)).unwrap();
    let covers = vec![cover.policies];
    let mut rng = RngStream::new(33).rng();
    use rand::Rng;
    let w1 = lbc_core::nalgebra::DVector::from_fn(mdp.dim(), |_, _| rng.random::<f64>() - 0.5);
    let rewards = lbc_core::ocp::LinearReward::from_layer_direction(&mdp, 1, &w1).unwrap();
    let policy = lbc_core::fqi::fqi(&mdp, 1, &rewards, &covers, 2000, RngStream::new(34)).unwrap();
    use lbc_core::env::Policy;
    for x0 in 0..mdp.num_states() {
        if mdp.initial_dist()[x0] == 0.0 {
            continue; // outside the covered set: no guarantee
        }
        let mut best = f64::NEG_INFINITY;
        for a0 in 0..mdp.num_actions() {
            let x1 = mdp.next_state(0, x0, a0);
            for a1 in 0..mdp.num_actions() {
                best = best.max(w1.dot(mdp.feature(1, x1, a1)));
            }
        }
        let a0 = policy.act(&mdp, 0, x0).unwrap();
        let x1 = mdp.next_state(0, x0, a0);
        let a1 = policy.act(&mdp, 1, x1).unwrap();
        let achieved = w1.dot(mdp.feature(1, x1, a1));
        assert!((best - achieved).abs() <= 1e-9, "initial state {x0}: {achieved} vs {best}");
    }
}

#[test]
fn policy_opt_ocp_with_bernoulli_rewards() {
    // Mid-level check of Phase II alone: reward estimation from a dense cover
    // plus OCP planning stays within 0.1 of the optimum on most seeds.
    let mut passes = 0;
    for seed in 50..60u64 {
        let spec = EnvSpec {
            kind: EnvKind::RotatedTabular,
            d: 8,
            horizon: 2,
            num_states: 4,
            num_actions: 2,
            seed,
            reward_noise_scale: 0.25,
            hidden_fraction: 0.0,
        };
        let mdp = spec.build().unwrap();
        let gamma = common::open_loop_cover(&mdp);
        let (policy, _) =
            lbc_core::policy_opt::policy_opt_ocp(&mdp, &gamma, 2000, 1.0, 300, RngStream::new(seed))
                .unwrap();
        let gap = lbc_core::env::optimal_value(&mdp)
            - lbc_core::env::exact_policy_value(&mdp, &policy).unwrap();
        if gap <= 0.1 {
            passes += 1;
        }
    }
    assert!(passes >= 8, "only {passes}/10 seeds within 0.1");
}

#[test]
fn tiny_knobs_still_run_to_completion() {
    // Degenerate accuracy inflation (eps' clamps near 1) must degrade
    // gracefully, not crash.
    let spec = EnvSpec {
        kind: EnvKind::RotatedTabular,
        d: 4,
        horizon: 2,
        num_states: 2,
        num_actions: 2,
        seed: 61,
        reward_noise_scale: 0.25,
        hidden_fraction: 0.0,
    };
    let mdp = spec.build().unwrap();
    let knobs = Knobs {
        c0: 1e-9,
        c1: 1e-9,
        c2: 1e-9,
        t_ocp: 20,
        n_override: None,
        mode: ScheduleMode::Practical,
        scale: 0.02,
    };
    let (_, report) = end_to_end_fqi(&mdp, 0.5, 0.2, &knobs, RngStream::new(62)).unwrap();
    assert!(report.suboptimality_exact.unwrap().is_finite());
}

#[test]
fn partial_hiding_trips_the_outlier_test() {
    // hidden_fraction = 0.5: mass escaping the planted span must cross the
    // detection threshold already in the first iteration.
    let spec = EnvSpec {
        kind: EnvKind::HiddenSubspace,
        d: 8,
        horizon: 2,
        num_states: 4,
        num_actions: 2,
        seed: 12,
        reward_noise_scale: 0.0,
        hidden_fraction: 0.5,
    };
    let mdp = spec.build().unwrap();
    let eps = 0.4;
    let schedule =
        ParameterSchedule::new(eps, 0.1, mdp.dim(), mdp.horizon(), ScheduleMode::Practical, 0.05)
            .unwrap();
    let cover = subspace_cover(&mdp, 0, &[], &schedule, RngStream::new(13)).unwrap();
    let threshold =
        schedule.n_test as f64 * eps / (4.0 * mdp.horizon() as f64 * mdp.dim() as f64);
    let first = &cover.outlier_log[0];
    assert!(
        (first.n_outlier_plus.max(first.n_outlier_minus) as f64) > threshold,
        "first direction not detected: {first:?} (threshold {threshold:.1})"
    );
    assert!(first.accepted_direction.is_some());
}
