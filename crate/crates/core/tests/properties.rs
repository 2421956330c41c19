use eqlq::controller::backward_pass;
use eqlq::model::{
    sample_fleet, schedule_from_profile, stage_cost, ConstraintMode, ConstraintSchedule, CostSpec,
    SolarProfile,
};
use eqlq::numkernel::{block_diag, max_abs, min_eigenvalue_symmetric, spd_solve, Matrix, Vector};
use eqlq::simulator::{monte_carlo_with_workers, rollout};
use eqlq::verify::{instance_rng, projection_check, random_scenario, InstanceShape, ModeMix};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
    let g = random_matrix(rng, n, n);
    &g * g.transpose() + Matrix::identity(n, n) * 0.5
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn spd_solve_round_trip(seed in any::<u64>(), n in 1usize..8, k in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = random_spd(&mut rng, n);
        let b = random_matrix(&mut rng, n, k);
        let x = spd_solve(&m, &b).unwrap();
        prop_assert!(max_abs(&(&m * &x - &b)) <= 1e-10 * (1.0 + max_abs(&m) * max_abs(&x)));
    }

    #[test]
    fn eigenvalue_shift(seed in any::<u64>(), n in 1usize..8, c in -5.0f64..5.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_matrix(&mut rng, n, n);
        let m = &g + g.transpose();
        let shifted = &m + Matrix::identity(n, n) * c;
        let a = min_eigenvalue_symmetric(&m).unwrap();
        let b = min_eigenvalue_symmetric(&shifted).unwrap();
        prop_assert!((b - a - c).abs() <= 1e-10);
    }

    #[test]
    fn block_diag_keeps_blocks(seed in any::<u64>(), sizes in prop::collection::vec((1usize..4, 1usize..4), 1..5)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let blocks: Vec<Matrix> = sizes.iter().map(|&(r, c)| random_matrix(&mut rng, r, c)).collect();
        let out = block_diag(&blocks).unwrap();
        let rows: usize = sizes.iter().map(|s| s.0).sum();
        let cols: usize = sizes.iter().map(|s| s.1).sum();
        prop_assert_eq!(out.shape(), (rows, cols));
        let (mut r0, mut c0) = (0, 0);
        let mut nonzero = 0usize;
        for b in &blocks {
            prop_assert_eq!(&out.view((r0, c0), b.shape()).into_owned(), b);
            nonzero += b.iter().filter(|v| **v != 0.0).count();
            r0 += b.nrows();
            c0 += b.ncols();
        }
        prop_assert_eq!(out.iter().filter(|v| **v != 0.0).count(), nonzero);
    }

    #[test]
    fn hard_value_matrices_stay_psd(seed in any::<u64>()) {
        let sc = random_scenario(&mut instance_rng(seed, 0), &InstanceShape::default(), ModeMix::HardOnly).unwrap();
        let gains = backward_pass(&sc).unwrap();
        for e in gains.p_min_eigenvalues().unwrap() {
            prop_assert!(e >= -1e-8);
        }
    }

    #[test]
    fn hard_step_identities(seed in any::<u64>()) {
        let sc = random_scenario(&mut instance_rng(seed, 1), &InstanceShape::default(), ModeMix::Mixed).unwrap();
        let gains = backward_pass(&sc).unwrap();
        let p = projection_check(&gains);
        prop_assert!(p.passes(), "{:?}", p);
    }

    #[test]
    fn zero_weight_soft_equals_unconstrained(seed in any::<u64>()) {
        let sc = random_scenario(&mut instance_rng(seed, 2), &InstanceShape::default(), ModeMix::NoneOnly).unwrap();
        let soft = sc.with_schedule(ConstraintSchedule::new(
            vec![ConstraintMode::Soft { eta: 0.0 }; sc.horizon()],
            sc.schedule.targets().to_vec(),
        ).unwrap()).unwrap();
        let a = backward_pass(&sc).unwrap();
        let b = backward_pass(&soft).unwrap();
        for t in 0..=sc.horizon() {
            prop_assert!(max_abs(&(&a.p[t] - &b.p[t])) <= 1e-12 * (1.0 + max_abs(&a.p[t])));
            prop_assert!((a.q[t] - b.q[t]).abs() <= 1e-12 * (1.0 + a.q[t].abs()));
        }
        for t in 0..sc.horizon() {
            prop_assert!(max_abs(&(&a.k[t] - &b.k[t])) <= 1e-12 * (1.0 + max_abs(&a.k[t])));
        }
    }

    #[test]
    fn hard_rollouts_meet_targets(seed in any::<u64>()) {
        let sc = random_scenario(&mut instance_rng(seed, 3), &InstanceShape::default(), ModeMix::Mixed).unwrap();
        let gains = backward_pass(&sc).unwrap();
        let traj = rollout(&sc, &gains, seed).unwrap();
        prop_assert!(traj.max_scaled_hard_residual(&sc) <= 1e-9);
    }

    #[test]
    fn stage_cost_nonnegative(seed in any::<u64>(), eta in 0.0f64..100.0, c in -10.0f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..5);
        let m = rng.random_range(1..5);
        let g = random_matrix(&mut rng, n, n);
        let cost = CostSpec {
            q: &g * g.transpose(),
            r: random_spd(&mut rng, m),
            q_terminal: Matrix::zeros(n, n),
            refs: vec![Vector::from_fn(n, |_, _| rng.random_range(-5.0..5.0)); 2],
        };
        let sched = ConstraintSchedule::new(vec![ConstraintMode::Soft { eta }], vec![c]).unwrap();
        let x = Vector::from_fn(n, |_, _| rng.random_range(-5.0..5.0));
        let u = Vector::from_fn(m, |_, _| rng.random_range(-5.0..5.0));
        prop_assert!(stage_cost(&x, &u, 0, &cost, &sched).unwrap() >= -1e-12);
    }

    #[test]
    fn hard_exactly_where_profile_nonzero(samples in prop::collection::vec(prop_oneof![Just(0.0), -50.0f64..50.0], 1..40), eta in 0.0f64..5.0) {
        let profile = SolarProfile::new(samples.clone()).unwrap();
        let s = schedule_from_profile(&profile, ConstraintMode::Soft { eta }).unwrap();
        for (t, &c) in samples.iter().enumerate() {
            prop_assert_eq!(s.mode(t).is_hard(), c != 0.0);
            prop_assert_eq!(s.target(t), c);
        }
    }

    #[test]
    fn fleet_sampling_ranges(seed in any::<u64>(), n in 1usize..60) {
        let s = sample_fleet(n, seed).unwrap();
        for i in 0..n {
            prop_assert!((0.96..=0.99).contains(&s.fleet.a()[(i, i)]));
            prop_assert!((32.0..=48.0).contains(&s.x0[i]));
        }
        let again = sample_fleet(n, seed).unwrap();
        prop_assert_eq!(s.x0, again.x0);
        prop_assert_eq!(s.leak, again.leak);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn monte_carlo_independent_of_workers(seed in any::<u64>()) {
        let sc = random_scenario(&mut instance_rng(seed, 4), &InstanceShape::default(), ModeMix::Mixed).unwrap();
        let gains = backward_pass(&sc).unwrap();
        let one = monte_carlo_with_workers(&sc, &gains, 40, seed, Some(1)).unwrap();
        let three = monte_carlo_with_workers(&sc, &gains, 40, seed, Some(3)).unwrap();
        prop_assert_eq!(one, three);
    }
}
