use feasible_irl::estimation::{
    build_confidence_irlo, build_confidence_pirlo, build_confidence_pirlo_with, EmpiricalModel,
};
use feasible_irl::instances::{covering_policy, random_deterministic_policy, random_mdp, rng, uniform_reward};
use feasible_irl::mdp::Dims;
use feasible_irl::membership::{
    evi_bounds_with_stats, inner_linear_max_l1, inner_linear_min_l1, membership, restricted_action_sets, Algo,
    DEFAULT_TOL,
};
use feasible_irl::metrics::{vec_dist_d, vec_dist_dinf};
use feasible_irl::trajectory::{counts, simulate, Dataset, Role};
use proptest::prelude::*;

struct Setup {
    em: EmpiricalModel,
    seed: u64,
}

fn setup(s: usize, a: usize, h: usize, seed: u64, tau: usize) -> Setup {
    let d = Dims::new(s, a, h).unwrap();
    let mdp = random_mdp(d, seed, Some(2.min(s)));
    let e = random_deterministic_policy(d, seed + 1);
    let b = covering_policy(&e, 0.5, seed + 2);
    let de = simulate(&mdp, &e, tau, seed + 3, Role::Expert).unwrap();
    // the behavioral data contains the expert data so every expert triple is covered
    let extra = simulate(&mdp, &b, tau, seed + 4, Role::Behavioral).unwrap();
    let db = Dataset::merged([&de, &extra], Role::Behavioral);
    Setup { em: EmpiricalModel::estimate(d, &de, &db).unwrap(), seed }
}

fn dims_strategy() -> impl Strategy<Value = (usize, usize, usize, u64)> {
    (1usize..=4, 1usize..=3, 1usize..=3, 0u64..10_000)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lower_bound_below_upper_bound((s, a, h, seed) in dims_strategy(), tau in 5usize..60) {
        let st = setup(s, a, h, seed, tau);
        let sets = restricted_action_sets(&st.em);
        let r = uniform_reward(st.em.dims(), &mut rng(st.seed));
        for spec in [build_confidence_irlo(&st.em), build_confidence_pirlo(&st.em, 0.1).unwrap()] {
            let (qb, _) = evi_bounds_with_stats(&r, &spec, &sets).unwrap();
            let d = st.em.dims();
            for hh in 0..d.horizon {
                for ss in 0..d.states {
                    for aa in 0..d.actions {
                        prop_assert!(qb.q_minus(hh, ss, aa) <= qb.q_plus(hh, ss, aa) + 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn inner_set_inside_outer_set((s, a, h, seed) in dims_strategy(), tau in 5usize..60) {
        let st = setup(s, a, h, seed, tau);
        let mut g = rng(st.seed + 9);
        let irlo = build_confidence_irlo(&st.em);
        let pirlo = build_confidence_pirlo(&st.em, 0.1).unwrap();
        for _ in 0..10 {
            let r = uniform_reward(st.em.dims(), &mut g);
            for (spec, algo) in [(&irlo, Algo::Irlo), (&pirlo, Algo::Pirlo)] {
                let v = membership(&r, spec, algo, DEFAULT_TOL).unwrap();
                prop_assert!(!v.in_cap || v.in_union);
            }
        }
    }

    #[test]
    fn larger_bonuses_widen((s, a, h, seed) in dims_strategy(), tau in 5usize..60) {
        let st = setup(s, a, h, seed, tau);
        let base = feasible_irl::estimation::bonus_table(&st.em, 0.5).unwrap().scaled(0.1);
        let specs: Vec<_> = [1.0, 2.0, 4.0]
            .iter()
            .map(|&k| build_confidence_pirlo_with(&st.em, base.scaled(k)).unwrap())
            .collect();
        let mut g = rng(st.seed + 5);
        for _ in 0..10 {
            let r = uniform_reward(st.em.dims(), &mut g);
            let v: Vec<_> = specs.iter().map(|sp| membership(&r, sp, Algo::Pirlo, DEFAULT_TOL).unwrap()).collect();
            for w in v.windows(2) {
                prop_assert!(!w[1].in_cap || w[0].in_cap);
                prop_assert!(!w[0].in_union || w[1].in_union);
            }
        }
    }

    #[test]
    fn counts_ignore_trajectory_order(seed in 0u64..10_000, n in 1usize..80, rot in 0usize..80) {
        let d = Dims::new(3, 2, 3).unwrap();
        let mdp = random_mdp(d, seed, None);
        let pi = covering_policy(&random_deterministic_policy(d, seed), 0.5, seed);
        let data = simulate(&mdp, &pi, n, seed, Role::Behavioral).unwrap();
        let mut shuffled = data.trajectories.clone();
        shuffled.rotate_left(rot % n);
        shuffled.reverse();
        let other = Dataset::new(shuffled, Role::Behavioral);
        prop_assert_eq!(counts(&data, d).unwrap(), counts(&other, d).unwrap());
    }

    #[test]
    fn greedy_inner_solution_matches_grid(
        v in prop::collection::vec(-1.0f64..1.0, 3),
        w in prop::collection::vec(0.01f64..1.0, 3),
        budget in 0.0f64..2.0,
    ) {
        let total: f64 = w.iter().sum();
        let p: Vec<f64> = w.iter().map(|x| x / total).collect();
        let (q, best) = inner_linear_max_l1(&v, &p, budget, None).unwrap();
        let (qm, worst) = inner_linear_min_l1(&v, &p, budget, None).unwrap();
        for row in [&q, &qm] {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(row.iter().all(|&x| x >= -1e-12));
            let dist: f64 = row.iter().zip(&p).map(|(a, b)| (a - b).abs()).sum();
            prop_assert!(dist <= budget + 1e-9);
        }
        let steps = 100;
        let (mut grid_max, mut grid_min) = (f64::NEG_INFINITY, f64::INFINITY);
        for i in 0..=steps {
            for j in 0..=steps - i {
                let c = [i as f64 / steps as f64, j as f64 / steps as f64, (steps - i - j) as f64 / steps as f64];
                let dist: f64 = c.iter().zip(&p).map(|(a, b)| (a - b).abs()).sum();
                if dist <= budget {
                    let val: f64 = c.iter().zip(&v).map(|(a, b)| a * b).sum();
                    grid_max = grid_max.max(val);
                    grid_min = grid_min.min(val);
                }
            }
        }
        if grid_max.is_finite() {
            prop_assert!(best >= grid_max - 1e-12);
            prop_assert!(worst <= grid_min + 1e-12);
            // every point of the ball is a few cells from a grid point inside it
            prop_assert!(best - grid_max <= 0.05);
            prop_assert!(grid_min - worst <= 0.05);
        }
    }

    #[test]
    fn relaxed_triangle_bounds(
        x in prop::collection::vec(-5.0f64..5.0, 6),
        y in prop::collection::vec(-5.0f64..5.0, 6),
        z in prop::collection::vec(-5.0f64..5.0, 6),
        w in prop::collection::vec(0.05f64..1.0, 6),
    ) {
        let total: f64 = w.iter().sum();
        let q: Vec<f64> = w.iter().map(|v| v / total).collect();
        let qmin = q.iter().cloned().fold(f64::INFINITY, f64::min);
        let k = 6.0;
        prop_assert!(vec_dist_dinf(&x, &y) <= k * (vec_dist_dinf(&x, &z) + vec_dist_dinf(&y, &z)) + 1e-12);
        prop_assert!(vec_dist_d(&x, &y, &q) <= k / (qmin * qmin) * (vec_dist_d(&x, &z, &q) + vec_dist_d(&y, &z, &q)) + 1e-12);
    }
}

#[test]
fn evi_work_stays_within_nominal_budget() {
    for (s, a, h) in [(2, 2, 2), (4, 3, 3), (8, 3, 4), (16, 3, 5)] {
        let st = setup(s, a, h, 17, 200);
        let d = st.em.dims();
        let sets = restricted_action_sets(&st.em);
        let r = uniform_reward(d, &mut rng(3));
        let spec = build_confidence_pirlo(&st.em, 0.1).unwrap();
        let (_, stats) = evi_bounds_with_stats(&r, &spec, &sets).unwrap();
        let sa = (d.states * d.actions * d.horizon) as u64;
        assert!(stats.inner_calls <= 4 * sa, "{stats:?}");
        let per_call = 4.0 * d.states as f64 * (d.states as f64).log2().max(1.0);
        assert!(stats.comparisons as f64 <= per_call * stats.inner_calls.max(1) as f64, "{stats:?}");
    }
}
