//! Instance generators: random MDPs, policies and reward panels, the named
//! presets used by the CLI, and the fixed reference instances the tests run on.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::mdp::{DeterministicPolicy, Dims, Mdp, Policy, RewardFunction, StochasticPolicy};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Seed of the `i`-th independent sub-experiment.
pub fn derive_seed(seed: u64, i: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ i.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A random point of the simplex with `support` nonzero entries (all if
/// `None`), drawn from a flat Dirichlet on those entries.
pub fn random_simplex(rng: &mut impl Rng, n: usize, support: Option<usize>) -> Vec<f64> {
    let k = support.unwrap_or(n).clamp(1, n);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let mut out = vec![0.0; n];
    let mut total = 0.0;
    for &i in &idx[..k] {
        let u: f64 = rng.gen_range(1e-12..1.0);
        out[i] = -u.ln();
        total += out[i];
    }
    for x in &mut out {
        *x /= total;
    }
    out
}

/// Random transitions with `support` successors per row and a random
/// initial distribution over `support` states.
pub fn random_mdp(dims: Dims, seed: u64, support: Option<usize>) -> Mdp {
    let mut r = rng(seed);
    let mu0 = random_simplex(&mut r, dims.states, support);
    let mut p = Vec::with_capacity(dims.sa_len() * dims.states);
    for _ in 0..dims.sa_len() {
        p.extend(random_simplex(&mut r, dims.states, support));
    }
    Mdp::new(dims, mu0, p).expect("random rows are simplices")
}

/// Random transitions whose every entry is at least `floor`.
pub fn random_dense_mdp(dims: Dims, seed: u64, floor: f64) -> Mdp {
    assert!(floor * dims.states as f64 <= 1.0);
    let mut r = rng(seed);
    let dense = |r: &mut ChaCha8Rng| {
        let x = random_simplex(r, dims.states, None);
        let rest = 1.0 - floor * dims.states as f64;
        x.into_iter().map(|v| floor + rest * v).collect::<Vec<_>>()
    };
    let mu0 = dense(&mut r);
    let mut p = Vec::with_capacity(dims.sa_len() * dims.states);
    for _ in 0..dims.sa_len() {
        p.extend(dense(&mut r));
    }
    Mdp::new(dims, mu0, p).expect("dense rows are simplices")
}

pub fn random_deterministic_policy(dims: Dims, seed: u64) -> DeterministicPolicy {
    let mut r = rng(seed);
    DeterministicPolicy::from_fn(dims, |_, _| r.gen_range(0..dims.actions)).expect("actions in range")
}

/// Plays `expert` with probability `1 − eps` and a uniform action otherwise.
pub fn epsilon_expert(expert: &DeterministicPolicy, eps: f64) -> StochasticPolicy {
    let d = expert.dims();
    let mut probs = vec![eps / d.actions as f64; d.sa_len()];
    for h in 0..d.horizon {
        for s in 0..d.states {
            probs[d.sa(h, s, expert.action(h, s))] += 1.0 - eps;
        }
    }
    StochasticPolicy::new(d, probs).expect("mixture is a distribution")
}

/// Random behavioral policy that always covers the expert action: at each
/// cell the expert action keeps at least `expert_mass`, a random subset of
/// the other actions shares the rest.
pub fn covering_policy(expert: &DeterministicPolicy, expert_mass: f64, seed: u64) -> StochasticPolicy {
    let d = expert.dims();
    let mut r = rng(seed);
    let mut probs = vec![0.0; d.sa_len()];
    for h in 0..d.horizon {
        for s in 0..d.states {
            let ae = expert.action(h, s);
            let others: Vec<usize> = (0..d.actions).filter(|&a| a != ae && r.gen_bool(0.6)).collect();
            if others.is_empty() {
                probs[d.sa(h, s, ae)] = 1.0;
                continue;
            }
            probs[d.sa(h, s, ae)] = expert_mass;
            let w = random_simplex(&mut r, others.len(), None);
            for (a, x) in others.iter().zip(w) {
                probs[d.sa(h, s, *a)] = (1.0 - expert_mass) * x;
            }
        }
    }
    StochasticPolicy::new(d, probs).expect("covering policy is a distribution")
}

pub fn uniform_reward(dims: Dims, rng: &mut impl Rng) -> RewardFunction {
    RewardFunction::from_fn(dims, |_, _, _| rng.gen_range(-1.0..=1.0)).expect("finite")
}

/// Uniform reward with a margin added to the expert action everywhere, so a
/// fair share of the panel lands in the inner sets.
pub fn expert_favoring_reward(expert: &DeterministicPolicy, margin: f64, rng: &mut impl Rng) -> RewardFunction {
    let d = expert.dims();
    RewardFunction::from_fn(d, |h, s, a| {
        let base = rng.gen_range(-1.0..=1.0);
        if a == expert.action(h, s) {
            base + margin
        } else {
            base
        }
    })
    .expect("finite")
}

/// `n` rewards: uniform ones interleaved with expert-favoring ones of
/// increasing margin.
pub fn reward_panel(expert: &DeterministicPolicy, n: usize, seed: u64) -> Vec<RewardFunction> {
    let d = expert.dims();
    let mut r = rng(seed);
    (0..n)
        .map(|i| match i % 4 {
            0 | 2 => uniform_reward(d, &mut r),
            1 => expert_favoring_reward(expert, 1.0, &mut r),
            _ => expert_favoring_reward(expert, 2.0 * d.horizon as f64, &mut r),
        })
        .collect()
}

/// `0` on the expert's action at its support, `−1` everywhere else.
pub fn behavioral_cloning_reward(
    dims: Dims,
    expert_support: &crate::mdp::StateSet,
    expert_action: impl Fn(usize, usize) -> Option<usize>,
) -> RewardFunction {
    RewardFunction::from_fn(dims, |h, s, a| {
        if expert_support.contains(h, s) && expert_action(h, s) == Some(a) {
            0.0
        } else {
            -1.0
        }
    })
    .expect("finite")
}

/// A line of states where action 0 moves right, the last action moves left
/// and every other action stays, each succeeding with probability `slip`
/// complement.
pub fn chain_mdp(dims: Dims, slip: f64) -> Mdp {
    let n = dims.states;
    let mut p = vec![0.0; dims.sa_len() * n];
    for h in 0..dims.horizon {
        for s in 0..n {
            for a in 0..dims.actions {
                let target = if a == 0 {
                    (s + 1).min(n - 1)
                } else if a == dims.actions - 1 && dims.actions > 1 {
                    s.saturating_sub(1)
                } else {
                    s
                };
                let row = &mut p[dims.sa(h, s, a) * n..(dims.sa(h, s, a) + 1) * n];
                row[target] += 1.0 - slip;
                row[s] += slip;
            }
        }
    }
    let mut mu0 = vec![0.0; n];
    mu0[0] = 1.0;
    Mdp::new(dims, mu0, p).expect("chain rows are simplices")
}

pub const LANE_STATES: usize = 16;
pub const LANE_ACTIONS: usize = 3;

pub fn lane_state(speed: usize, free_left: bool, free_right: bool) -> usize {
    speed * 4 + (free_left as usize) * 2 + free_right as usize
}

pub fn lane_decode(s: usize) -> (usize, bool, bool) {
    (s / 4, (s / 2) % 2 == 1, s % 2 == 1)
}

/// Synthetic lane-change task with `S = 16`, `A = 3`.
///
/// A state packs `free_left`, `free_right` and a speed level in `0..4`:
/// `s = speed * 4 + free_left * 2 + free_right`. Actions are `0` left, `1`
/// right, `2` keep lane. Traffic flags are redrawn after each step; speed
/// rises when keeping lane and drops when changing lane into a busy one.
pub fn lanechange_mdp(horizon: usize, seed: u64) -> Mdp {
    let dims = Dims::new(LANE_STATES, LANE_ACTIONS, horizon).expect("positive sizes");
    let mut r = rng(seed);
    let mut p = vec![0.0; dims.sa_len() * LANE_STATES];
    for h in 0..horizon {
        for s in 0..LANE_STATES {
            let (speed, free_left, free_right) = lane_decode(s);
            // traffic around the car at the next step
            let p_left: f64 = r.gen_range(0.3..0.7);
            let p_right: f64 = r.gen_range(0.3..0.7);
            for a in 0..LANE_ACTIONS {
                let blocked = (a == 0 && !free_left) || (a == 1 && !free_right);
                let next_speed = match a {
                    2 => (speed + 1).min(3),
                    _ if blocked => speed.saturating_sub(1),
                    _ => speed,
                };
                let start = dims.sa(h, s, a) * LANE_STATES;
                for fl in [false, true] {
                    for fr in [false, true] {
                        let w = if fl { p_left } else { 1.0 - p_left } * if fr { p_right } else { 1.0 - p_right };
                        p[start + lane_state(next_speed, fl, fr)] += w;
                    }
                }
            }
        }
    }
    let mut mu0 = vec![0.0; LANE_STATES];
    for fl in [false, true] {
        for fr in [false, true] {
            mu0[lane_state(1, fl, fr)] = 0.25;
        }
    }
    Mdp::new(dims, mu0, p).expect("lane rows are simplices")
}

/// Three drivers: one overtakes on the left when possible, one prefers the
/// right lane, one keeps lane unless it is slow and a side is free.
pub fn lanechange_experts(dims: Dims) -> Vec<DeterministicPolicy> {
    let left = |_: usize, s: usize| {
        let (_, fl, _) = lane_decode(s);
        if fl {
            0
        } else {
            2
        }
    };
    let right = |_: usize, s: usize| {
        let (speed, _, fr) = lane_decode(s);
        if fr && speed >= 1 {
            1
        } else {
            2
        }
    };
    let cautious = |_: usize, s: usize| {
        let (speed, fl, fr) = lane_decode(s);
        match (speed, fl, fr) {
            (0, true, _) => 0,
            (0, false, true) => 1,
            _ => 2,
        }
    };
    vec![
        DeterministicPolicy::from_fn(dims, left).expect("valid"),
        DeterministicPolicy::from_fn(dims, right).expect("valid"),
        DeterministicPolicy::from_fn(dims, cautious).expect("valid"),
    ]
}

/// Reference instance for the convergence study: deterministic transitions,
/// randomness from the initial distribution and the behavioral policy.
pub struct ConvergenceInstance {
    pub mdp: Mdp,
    pub expert: DeterministicPolicy,
    pub behavioral: StochasticPolicy,
}

pub fn convergence_reference() -> ConvergenceInstance {
    let dims = Dims::new(4, 2, 3).expect("positive sizes");
    let n = dims.states;
    let mut r = rng(20_240_601);
    let mut p = vec![0.0; dims.sa_len() * n];
    for i in 0..dims.sa_len() {
        p[i * n + r.gen_range(0..n)] = 1.0;
    }
    let mdp = Mdp::new(dims, vec![0.4, 0.3, 0.2, 0.1], p).expect("deterministic rows");
    let expert = DeterministicPolicy::from_fn(dims, |h, s| (h + s) % 2).expect("valid");
    let behavioral = epsilon_expert(&expert, 0.3);
    ConvergenceInstance { mdp, expert, behavioral }
}

/// Stochastic instance for the inclusion-monotonicity study; every
/// transition entry is at least 0.15 and the behavioral policy mixes the
/// expert with uniform play.
pub fn monotonicity_reference() -> ConvergenceInstance {
    let dims = Dims::new(4, 2, 3).expect("positive sizes");
    let mdp = random_dense_mdp(dims, 77, 0.15);
    let expert = random_deterministic_policy(dims, 78);
    let behavioral = epsilon_expert(&expert, 0.8);
    ConvergenceInstance { mdp, expert, behavioral }
}

/// Three-state, two-stage instance where a covered non-expert action has a
/// transition row different from the expert's. The expert plays 0 at the
/// start and reaches state 1; action 1 would reach state 2.
pub fn greedy_witness_instance() -> ConvergenceInstance {
    let dims = Dims::new(3, 2, 2).expect("positive sizes");
    let mut p = vec![0.0; dims.sa_len() * 3];
    for h in 0..2 {
        for s in 0..3 {
            for a in 0..2 {
                let target = if s == 0 { 1 + a } else { s };
                p[dims.sa(h, s, a) * 3 + target] = 1.0;
            }
        }
    }
    let mdp = Mdp::new(dims, vec![1.0, 0.0, 0.0], p).expect("deterministic rows");
    let expert = DeterministicPolicy::from_fn(dims, |_, _| 0).expect("valid");
    let mut probs = vec![0.0; dims.sa_len()];
    for h in 0..2 {
        for s in 0..3 {
            if h == 0 && s == 0 {
                probs[dims.sa(h, s, 0)] = 0.5;
                probs[dims.sa(h, s, 1)] = 0.5;
            } else {
                probs[dims.sa(h, s, 0)] = 1.0;
            }
        }
    }
    let behavioral = StochasticPolicy::new(dims, probs).expect("valid");
    ConvergenceInstance { mdp, expert, behavioral }
}

/// Two states, two actions, two stages, start in state 0; every action at
/// the start leads to state 0, so state 1 is never visited.
pub fn micro_old_set_instance() -> ConvergenceInstance {
    let dims = Dims::new(2, 2, 2).expect("positive sizes");
    let mut p = vec![0.0; dims.sa_len() * 2];
    for h in 0..2 {
        for s in 0..2 {
            for a in 0..2 {
                let row = &mut p[dims.sa(h, s, a) * 2..dims.sa(h, s, a) * 2 + 2];
                if s == 0 {
                    row[0] = 1.0;
                } else {
                    row[a] = 1.0;
                }
            }
        }
    }
    let mdp = Mdp::new(dims, vec![1.0, 0.0], p).expect("deterministic rows");
    let expert = DeterministicPolicy::from_fn(dims, |_, _| 0).expect("valid");
    let behavioral = StochasticPolicy::uniform(dims);
    ConvergenceInstance { mdp, expert, behavioral }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{supports, visitation};

    #[test]
    fn random_rows_are_simplices_and_sparse() {
        let m = random_mdp(Dims::new(5, 2, 3).unwrap(), 1, Some(2));
        let d = m.dims();
        for h in 0..3 {
            for s in 0..5 {
                for a in 0..2 {
                    assert_eq!(m.row(h, s, a).iter().filter(|&&x| x > 0.0).count(), 2);
                }
            }
        }
        assert_eq!(random_mdp(d, 1, Some(2)), m);
    }

    #[test]
    fn dense_mdp_floor() {
        let m = random_dense_mdp(Dims::new(4, 2, 3).unwrap(), 3, 0.1);
        assert!(m.initial().iter().all(|&x| x >= 0.1 - 1e-12));
    }

    #[test]
    fn seeds_differ() {
        assert_ne!(derive_seed(1, 0), derive_seed(1, 1));
        assert_ne!(derive_seed(1, 0), derive_seed(2, 0));
    }

    #[test]
    fn monotonicity_instance_has_rho_floor() {
        let inst = monotonicity_reference();
        let vis = visitation(&inst.mdp, &inst.behavioral).unwrap();
        let sup = supports(&vis);
        assert_eq!(sup.state_action_support.len(), inst.mdp.dims().sa_len());
        let m = crate::mdp::rho_min(&vis, &sup.state_action_support).unwrap();
        assert!(m >= 0.05, "{m}");
    }

    #[test]
    fn lanechange_sizes() {
        let m = lanechange_mdp(8, 1);
        assert_eq!(m.dims(), Dims::new(16, 3, 8).unwrap());
        assert_eq!(lanechange_experts(m.dims()).len(), 3);
        assert_eq!(lane_decode(lane_state(3, true, false)), (3, true, false));
    }

    #[test]
    fn covering_policy_keeps_expert_action() {
        let d = Dims::new(3, 3, 2).unwrap();
        let e = random_deterministic_policy(d, 5);
        let b = covering_policy(&e, 0.5, 6);
        for h in 0..2 {
            for s in 0..3 {
                assert!(b.row(h, s)[e.action(h, s)] >= 0.5);
            }
        }
    }
}
