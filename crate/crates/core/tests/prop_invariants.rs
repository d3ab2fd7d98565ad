//! Property tests over the pure linear-algebra kernel and the environment
//! spec codec: invariants that must hold for arbitrary inputs, not just the
//! seeded instances the statistical suites use.

use lbc_core::env::{EnvKind, EnvSpec};
use lbc_core::linalg::{
    cofactor_direction, lp_max_linear, min_norm_lstsq, orthonormal_basis, project_complement,
    span_extend, ConstraintSet, Subspace, SV_CUTOFF,
};
use lbc_core::nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn vec_strategy(d: usize) -> impl Strategy<Value = DVector<f64>> {
    prop::collection::vec(-1.0f64..1.0, d).prop_map(DVector::from_vec)
}

fn vecs_strategy(d: usize, max_n: usize) -> impl Strategy<Value = Vec<DVector<f64>>> {
    prop::collection::vec(vec_strategy(d), 0..max_n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn complement_projection_is_idempotent_and_orthogonal(
        vs in vecs_strategy(5, 6),
        probe in vec_strategy(5),
    ) {
        let s = orthonormal_basis(&vs, 1e-10, 5).unwrap();
        let p1 = project_complement(&s, &probe);
        let p2 = project_complement(&s, &p1);
        prop_assert!((&p1 - &p2).norm() <= 1e-12 * p1.norm().max(1.0));
        for b in s.basis() {
            prop_assert!(b.dot(&p1).abs() <= 1e-10);
        }
    }

    #[test]
    fn span_extend_grows_by_at_most_one_and_respects_ambient(
        vs in vecs_strategy(4, 8),
    ) {
        let mut s = Subspace::empty(4);
        for v in &vs {
            let before = s.dim();
            s = span_extend(&s, v);
            prop_assert!(s.dim() >= before);
            prop_assert!(s.dim() <= before + 1);
            prop_assert!(s.dim() <= s.ambient_dim());
        }
    }

    #[test]
    fn orthonormal_basis_is_orthonormal_and_spans_inputs(
        vs in vecs_strategy(4, 7),
    ) {
        let s = orthonormal_basis(&vs, 1e-10, 4).unwrap();
        for (i, a) in s.basis().iter().enumerate() {
            for (j, b) in s.basis().iter().enumerate() {
                let expected = if i == j { 1.0 } else { 0.0 };
                prop_assert!((a.dot(b) - expected).abs() <= 1e-10);
            }
        }
        for v in &vs {
            // Every input vector lies in the recovered span.
            let residual = project_complement(&s, v);
            prop_assert!(residual.norm() <= 1e-8 * v.norm().max(1.0));
        }
    }

    #[test]
    fn noiseless_targets_are_interpolated(
        left in prop::collection::vec(-1.0f64..1.0, 12),
        right in prop::collection::vec(-1.0f64..1.0, 8),
        theta in vec_strategy(4),
    ) {
        // Rank-2 design in R^4 with targets exactly linear in the features.
        // A fixed 1e-9 tolerance presumes bounded conditioning (round-off
        // grows with the squared condition number of the Gram matrix), so
        // skip near-rank-1 products.
        let b = DMatrix::from_vec(6, 2, left);
        let c = DMatrix::from_vec(2, 4, right);
        let phi = b * c;
        let svals = phi.clone().svd(false, false).singular_values;
        prop_assume!(svals[1] >= 1e-2 * svals[0]);
        let y = &phi * &theta;
        let theta_hat = min_norm_lstsq(&phi, &y, SV_CUTOFF).unwrap();
        let sigma = phi.transpose() * &phi;
        prop_assert!((&sigma * (&theta_hat - &theta)).amax() <= 1e-9);
        prop_assert!((&phi * &theta_hat - &y).amax() <= 1e-9);
    }

    #[test]
    fn cofactor_direction_evaluates_replacement_determinants(
        entries in prop::collection::vec(-1.0f64..1.0, 16),
        v in vec_strategy(4),
        col in 0usize..4,
    ) {
        let w = DMatrix::from_vec(4, 4, entries);
        let theta = cofactor_direction(&w, col).unwrap();
        let mut replaced = w.clone();
        replaced.set_column(col, &v);
        prop_assert!((theta.dot(&v) - replaced.determinant()).abs() <= 1e-9);
    }

    #[test]
    fn lp_value_dominates_known_feasible_point(
        anchor in vec_strategy(3),
        slabs in prop::collection::vec((vec_strategy(3), 1e-3f64..0.5), 0..5),
        objective in vec_strategy(3),
    ) {
        // Build a set that certainly contains `anchor` (clipped into the
        // ball): every slab interval is centered on the anchor's value. The
        // widths stay positive, matching the algorithms' widened intervals;
        // width-zero slabs at grazing angles have their own regression test
        // in the linalg unit suite.
        let mut inside = anchor.clone();
        let norm = inside.norm();
        if norm > 1.0 {
            inside /= norm;
        }
        let mut set = ConstraintSet::new(3, 1.0).unwrap();
        for (g, width) in &slabs {
            if g.norm() < 1e-6 {
                continue;
            }
            let a = g.dot(&inside);
            set.add_interval(g.clone(), a - width, a + width).unwrap();
        }
        let (value, argmax) = lp_max_linear(&set, &objective).unwrap();
        prop_assert!(value >= objective.dot(&inside) - 1e-6);
        // The returned maximizer is (approximately) feasible.
        prop_assert!(argmax.norm() <= 1.0 + 1e-6);
        for (g, width) in &slabs {
            if g.norm() < 1e-6 {
                continue;
            }
            let a = g.dot(&inside);
            let got = g.dot(&argmax);
            prop_assert!(got >= a - width - 1e-6 && got <= a + width + 1e-6);
        }
    }

    #[test]
    fn env_spec_text_codec_round_trips(
        states in 1usize..6,
        actions in 1usize..5,
        horizon in 1usize..4,
        seed in any::<u64>(),
        noise in 0.0f64..=0.5,
        hidden_half in 1usize..3,
        hidden_fraction in 0.0f64..=1.0,
        use_hidden in any::<bool>(),
    ) {
        let spec = if use_hidden {
            EnvSpec {
                kind: EnvKind::HiddenSubspace,
                d: 2 * hidden_half * actions,
                horizon,
                num_states: 2 * hidden_half,
                num_actions: actions,
                seed,
                reward_noise_scale: noise,
                hidden_fraction,
            }
        } else {
            EnvSpec {
                kind: EnvKind::RotatedTabular,
                d: states * actions,
                horizon,
                num_states: states,
                num_actions: actions,
                seed,
                reward_noise_scale: noise,
                hidden_fraction: 0.0,
            }
        };
        let parsed = EnvSpec::from_text(&spec.to_text()).unwrap();
        prop_assert_eq!(spec, parsed);
    }
}
