mod common;

use mfsvar::eval::{unit_variance_c, SignedPermutation};
use mfsvar::model::{build_subsampled_repr, simulate_stationary, subsampled_error_covariance};
use mfsvar::sampling::{apply, mixed_scheme, ObservationSet};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn simulated_paths_satisfy_the_recursion(seed in 0u64..10_000, p in 1usize..4, m in 1usize..4) {
        let model = common::random_model(&mut common::rng(seed), p, m);
        let traj = simulate_stationary(&model, 60, seed).unwrap();
        prop_assert!(traj.reconstruction_error(&model) < 1e-12);
    }

    #[test]
    fn stacked_form_reproduces_k_step_transitions(seed in 0u64..10_000, p in 1usize..4, k in 1usize..5) {
        let model = common::random_model(&mut common::rng(seed), p, 2);
        let traj = simulate_stationary(&model, 40, seed).unwrap();
        let repr = build_subsampled_repr(&model, k).unwrap();
        for t in k..traj.len() {
            let mut x = repr.f_block(k - 1) * traj.x.column(t - k);
            for q in 0..k {
                x += repr.l_block(q) * traj.e.column(t - q);
            }
            let err = (x - traj.x.column(t)).amax();
            prop_assert!(err < 1e-10, "t = {}: {}", t, err);
        }
    }

    #[test]
    fn error_covariance_is_the_sum_of_propagated_shocks(seed in 0u64..10_000, p in 1usize..4, k in 1usize..5) {
        let model = common::random_model(&mut common::rng(seed), p, 3);
        let lambda = DMatrix::from_diagonal(&DVector::from_iterator(p, model.shocks.iter().map(|s| s.variance())));
        let mut oracle = DMatrix::zeros(p, p);
        let mut g = model.c.clone();
        for _ in 0..k {
            oracle += &g * &lambda * g.transpose();
            g = &model.a * g;
        }
        let cov = subsampled_error_covariance(&model, k).unwrap();
        prop_assert!((cov - oracle).amax() < 1e-10);
    }

    #[test]
    fn masked_records_round_trip_through_csv(seed in 0u64..10_000, r1 in 1usize..4, r2 in 1usize..4) {
        let model = common::random_model(&mut common::rng(seed), 2, 2);
        let traj = simulate_stationary(&model, 30, seed).unwrap();
        let obs = apply(&mixed_scheme(&[r1, r2]).unwrap(), &traj).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("obs.csv");
        obs.write_csv(&path).unwrap();
        let back = ObservationSet::read_csv(&path).unwrap();
        prop_assert_eq!(back.n_observed_scalars(), obs.n_observed_scalars());
        prop_assert_eq!(back.blocks.len(), obs.blocks.len());
        for (a, b) in back.blocks.iter().zip(&obs.blocks) {
            prop_assert_eq!(&a.observed, &b.observed);
            prop_assert_eq!(&a.values, &b.values);
        }
        // Observed cells carry the simulated values exactly.
        for b in &obs.blocks {
            for (i, t) in b.times().enumerate() {
                for (jj, &j) in b.observed[i].iter().enumerate() {
                    prop_assert_eq!(b.values[i][jj], traj.x[(j, t - 1)]);
                }
            }
        }
    }

    #[test]
    fn upsampling_keeps_observations(seed in 0u64..10_000, k in 1usize..5) {
        let obs = common::subsampled(&common::random_model(&mut common::rng(seed), 2, 2), 1, 25, seed);
        let up = obs.upsample(k).unwrap();
        prop_assert_eq!(up.n_observed_scalars(), obs.n_observed_scalars());
        prop_assert!(up.blocks.iter().all(|b| b.steps() == k));
    }

    #[test]
    fn unit_variance_scale_commutes_with_signed_permutations(seed in 0u64..10_000, p in 1usize..5) {
        let mut rng = common::rng(seed);
        let model = common::random_model(&mut rng, p, 2);
        let mut perm: Vec<usize> = (0..p).collect();
        perm.rotate_left(seed as usize % p);
        let signs = (0..p).map(|j| if (seed >> j) & 1 == 1 { -1 } else { 1 }).collect();
        let sp = SignedPermutation { perm, signs };
        let lhs = unit_variance_c(&sp.apply_to_model(&model));
        let rhs = sp.apply_columns(&unit_variance_c(&model));
        prop_assert!((lhs - rhs).amax() < 1e-14);
    }
}
