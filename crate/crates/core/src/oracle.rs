//! Exact, brute-force membership tests for small instances. These use the
//! true model and serve as ground truth for the estimated sets.

use crate::error::{Error, Result};
use crate::mdp::{
    optimal_q_value, optimal_utility, policy_q_value, supports, utility, visitation, DeterministicPolicy, Dims, Mdp,
    Policy, RewardFunction, StateSet, TripleSet,
};

/// Slack on every oracle comparison.
pub const ORACLE_TOL: f64 = 1e-9;

/// Default cap on enumerated combinations.
pub const DEFAULT_CAP: u128 = 100_000;

/// `J(π^E) = J*` within tolerance.
pub fn feasible_membership(mdp: &Mdp, expert: &DeterministicPolicy, r: &RewardFunction) -> Result<bool> {
    Ok(utility(mdp, expert, r)? >= optimal_utility(mdp, r)? - ORACLE_TOL)
}

/// The expert action is Q*-greedy at every pair of `expert_support`.
pub fn feasible_membership_qstar(
    mdp: &Mdp,
    expert: &DeterministicPolicy,
    expert_support: &StateSet,
    r: &RewardFunction,
) -> Result<bool> {
    let q = optimal_q_value(mdp, r, None)?;
    Ok(expert_greedy_on(&q, expert, expert_support.iter()))
}

fn expert_greedy_on(
    q: &crate::mdp::ValueTable,
    expert: &DeterministicPolicy,
    cells: impl Iterator<Item = (usize, usize)>,
) -> bool {
    let d = q.dims();
    for (h, s) in cells {
        let ae = expert.action(h, s);
        if (0..d.actions).any(|a| q.q(h, s, ae) < q.q(h, s, a) - ORACLE_TOL) {
            return false;
        }
    }
    true
}

/// The expert's state support under the true model.
pub fn expert_state_support(mdp: &Mdp, expert: &DeterministicPolicy) -> Result<StateSet> {
    Ok(supports(&visitation(mdp, expert)?).state_support)
}

/// Walks every vector `x` with `x[i] < radices[i]`, stopping early when
/// `visit` returns `false`. Errors before visiting anything if the count
/// exceeds `cap`.
fn odometer(radices: &[usize], cap: u128, mut visit: impl FnMut(&[usize]) -> Result<bool>) -> Result<()> {
    let mut total: u128 = 1;
    for &r in radices {
        total = total.saturating_mul(r as u128);
    }
    if total > cap {
        return Err(Error::EnumerationTooLarge(total));
    }
    let mut x = vec![0usize; radices.len()];
    loop {
        if !visit(&x)? {
            return Ok(());
        }
        let mut i = 0;
        loop {
            if i == x.len() {
                return Ok(());
            }
            x[i] += 1;
            if x[i] < radices[i] {
                break;
            }
            x[i] = 0;
            i += 1;
        }
    }
}

fn off_support_cells(dims: Dims, support: &StateSet) -> Vec<(usize, usize)> {
    (0..dims.horizon)
        .flat_map(|h| (0..dims.states).map(move |s| (h, s)))
        .filter(|&(h, s)| !support.contains(h, s))
        .collect()
}

/// Checks the representation quantified over every deterministic policy
/// that plays the expert on its support: for each such `π̄`, the expert
/// action maximizes `Q^π̄` at every supported pair.
pub fn feasible_membership_policy_class(
    mdp: &Mdp,
    expert: &DeterministicPolicy,
    expert_support: &StateSet,
    r: &RewardFunction,
    cap: u128,
) -> Result<bool> {
    let d = mdp.dims();
    let free = off_support_cells(d, expert_support);
    let mut all_ok = true;
    odometer(&vec![d.actions; free.len()], cap, |choice| {
        let mut pi = expert.clone();
        for (&(h, s), &a) in free.iter().zip(choice) {
            pi.set_action(h, s, a);
        }
        let q = policy_q_value(mdp, &pi, r)?;
        if !expert_greedy_on(&q, expert, expert_support.iter()) {
            all_ok = false;
        }
        Ok(all_ok)
    })?;
    Ok(all_ok)
}

/// The extreme members of the transition and policy equivalence classes
/// for one reward.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleConstruction {
    /// Maximizing completion `p^M` and its greedy policy `π^M`.
    pub p_cap_m: Mdp,
    pub pi_cap_m: DeterministicPolicy,
    /// Minimizing completion `p^m` and its greedy policy `π^m`.
    pub p_m: Mdp,
    pub pi_m: DeterministicPolicy,
    q_cap_m: Vec<f64>,
    q_m: Vec<f64>,
}

impl OracleConstruction {
    /// `Q^{π^M}_h(s,a; p^M, r)`.
    pub fn q_cap_m(&self, h: usize, s: usize, a: usize) -> f64 {
        self.q_cap_m[self.p_cap_m.dims().sa(h, s, a)]
    }

    /// `Q^{π^m}_h(s,a; p^m, r)`.
    pub fn q_m(&self, h: usize, s: usize, a: usize) -> f64 {
        self.q_m[self.p_m.dims().sa(h, s, a)]
    }
}

fn check_expert_covered(
    dims: Dims,
    expert: &DeterministicPolicy,
    expert_support: &StateSet,
    zb: &TripleSet,
) -> Result<()> {
    dims.ensure_eq(&zb.dims(), "mdp vs support")?;
    for (h, s) in expert_support.iter() {
        if !zb.contains(h, s, expert.action(h, s)) {
            return Err(Error::ExpertTripleUncovered { state: s, stage: h + 1 });
        }
    }
    Ok(())
}

fn first_extreme(v: &[f64], maximize: bool) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        let better = if maximize { v[i] > v[best] } else { v[i] < v[best] };
        if better {
            best = i;
        }
    }
    best
}

/// One backward pass: free rows jump to the arg-extreme continuation,
/// policies play the expert on its support and the greedy action elsewhere.
fn extreme_pass(
    mdp: &Mdp,
    expert: &DeterministicPolicy,
    expert_support: &StateSet,
    zb: &TripleSet,
    r: &RewardFunction,
    maximize_rows: bool,
) -> (Mdp, DeterministicPolicy, Vec<f64>) {
    let d = mdp.dims();
    let mut p = mdp.clone();
    let mut pi = expert.clone();
    let mut q = vec![0.0; d.sa_len()];
    let mut v_next = vec![0.0; d.states];
    for h in (0..d.horizon).rev() {
        let target = first_extreme(&v_next, maximize_rows);
        for s in 0..d.states {
            for a in 0..d.actions {
                if !zb.contains(h, s, a) {
                    let row = p.row_mut(h, s, a);
                    row.fill(0.0);
                    row[target] = 1.0;
                }
                let cont: f64 = p.row(h, s, a).iter().zip(&v_next).map(|(x, y)| x * y).sum();
                let cont = if h + 1 < d.horizon { cont } else { 0.0 };
                q[d.sa(h, s, a)] = r.get(h, s, a) + cont;
            }
        }
        let mut v = vec![0.0; d.states];
        for s in 0..d.states {
            let a = if expert_support.contains(h, s) {
                expert.action(h, s)
            } else {
                first_extreme(&q[d.sa(h, s, 0)..d.sa(h, s, 0) + d.actions], true)
            };
            pi.set_action(h, s, a);
            v[s] = q[d.sa(h, s, a)];
        }
        v_next = v;
    }
    (p, pi, q)
}

pub fn build_extremes(
    mdp: &Mdp,
    expert: &DeterministicPolicy,
    zb_true: &TripleSet,
    r: &RewardFunction,
) -> Result<OracleConstruction> {
    let d = mdp.dims();
    d.ensure_eq(&r.dims(), "mdp vs reward")?;
    d.ensure_eq(&expert.dims(), "mdp vs expert")?;
    let expert_support = expert_state_support(mdp, expert)?;
    check_expert_covered(d, expert, &expert_support, zb_true)?;
    let (p_cap_m, pi_cap_m, q_cap_m) = extreme_pass(mdp, expert, &expert_support, zb_true, r, true);
    let (p_m, pi_m, q_m) = extreme_pass(mdp, expert, &expert_support, zb_true, r, false);
    Ok(OracleConstruction { p_cap_m, pi_cap_m, p_m, pi_m, q_cap_m, q_m })
}

/// `(r ∈ ℛ^∩, r ∈ ℛ^∪)` through the extreme constructions.
pub fn sub_super_membership(
    mdp: &Mdp,
    expert: &DeterministicPolicy,
    zb_true: &TripleSet,
    r: &RewardFunction,
) -> Result<(bool, bool)> {
    let ext = build_extremes(mdp, expert, zb_true, r)?;
    let q_e = policy_q_value(mdp, expert, r)?;
    let support = expert_state_support(mdp, expert)?;
    let d = mdp.dims();
    let mut in_sub = true;
    let mut in_super = true;
    for (h, s) in support.iter() {
        let ae = expert.action(h, s);
        let qe = q_e.q(h, s, ae);
        for a in (0..d.actions).filter(|&a| a != ae) {
            if qe < ext.q_cap_m(h, s, a) - ORACLE_TOL {
                in_sub = false;
            }
            if qe < ext.q_m(h, s, a) - ORACLE_TOL {
                in_super = false;
            }
        }
    }
    Ok((in_sub, in_super))
}

/// `(∀, ∃)` over every deterministic completion of the rows outside
/// `zb_true` of "the expert is optimal from the initial distribution".
/// Rows of the last stage never matter and are not enumerated.
pub fn brute_force_sub_super(
    mdp: &Mdp,
    expert: &DeterministicPolicy,
    zb_true: &TripleSet,
    r: &RewardFunction,
    cap: u128,
) -> Result<(bool, bool)> {
    let d = mdp.dims();
    d.ensure_eq(&r.dims(), "mdp vs reward")?;
    let support = expert_state_support(mdp, expert)?;
    check_expert_covered(d, expert, &support, zb_true)?;
    let free: Vec<(usize, usize, usize)> = (0..d.horizon.saturating_sub(1))
        .flat_map(|h| (0..d.states).flat_map(move |s| (0..d.actions).map(move |a| (h, s, a))))
        .filter(|&(h, s, a)| !zb_true.contains(h, s, a))
        .collect();
    let mut all = true;
    let mut any = false;
    odometer(&vec![d.states; free.len()], cap, |choice| {
        let mut p = mdp.clone();
        for (&(h, s, a), &target) in free.iter().zip(choice) {
            let row = p.row_mut(h, s, a);
            row.fill(0.0);
            row[target] = 1.0;
        }
        let ok = feasible_membership(&p, expert, r)?;
        all &= ok;
        any |= ok;
        Ok(true)
    })?;
    Ok((all, any))
}

/// Expert action Q*-greedy at every `(stage, state)`.
pub fn old_feasible_membership(mdp: &Mdp, expert: &DeterministicPolicy, r: &RewardFunction) -> Result<bool> {
    let q = optimal_q_value(mdp, r, None)?;
    let d = mdp.dims();
    Ok(expert_greedy_on(&q, expert, (0..d.horizon).flat_map(|h| (0..d.states).map(move |s| (h, s)))))
}

/// `k_h` per stage and `r̄_s` per initial state.
#[derive(Clone, Debug, PartialEq)]
pub struct OldSubsetWitness {
    pub k: Vec<f64>,
    pub r_bar: Vec<(usize, f64)>,
}

/// Tests the almost-constant structure: on the behavioral state support the
/// expert action earns `x(h,s)` and every other action at most that, and
/// outside it every action earns `k_h`; `x(h,s) = r̄_s` at the first stage
/// and `k_h` afterwards.
pub fn old_subset_characterization(
    r: &RewardFunction,
    expert: &DeterministicPolicy,
    behavioral_state_support: &StateSet,
    mu0_support: &[usize],
) -> Result<Option<OldSubsetWitness>> {
    let d = r.dims();
    d.ensure_eq(&behavioral_state_support.dims(), "reward vs support")?;
    let mut k = Vec::with_capacity(d.horizon);
    for h in 0..d.horizon {
        let outside = (0..d.states).find(|&s| !behavioral_state_support.contains(h, s));
        match outside {
            Some(s) => k.push(r.get(h, s, 0)),
            None => return Err(Error::HypothesisUnmet { stage: h + 1 }),
        }
    }
    let mut r_bar = Vec::with_capacity(mu0_support.len());
    for &s in mu0_support {
        if s >= d.states {
            return Err(Error::InvalidArgument(format!("initial state {s} out of range")));
        }
        r_bar.push((s, r.get(0, s, expert.action(0, s))));
    }
    let close = |x: f64, y: f64| (x - y).abs() <= ORACLE_TOL;
    for (h, &kh) in k.iter().enumerate() {
        for s in 0..d.states {
            if !behavioral_state_support.contains(h, s) {
                if (0..d.actions).any(|a| !close(r.get(h, s, a), kh)) {
                    return Ok(None);
                }
                continue;
            }
            let x = if h == 0 {
                match r_bar.iter().find(|(i, _)| *i == s) {
                    Some(&(_, v)) => v,
                    // a supported first-stage state must be an initial state
                    None => return Ok(None),
                }
            } else {
                kh
            };
            let ae = expert.action(h, s);
            if !close(r.get(h, s, ae), x) {
                return Ok(None);
            }
            if (0..d.actions).any(|a| a != ae && r.get(h, s, a) > x + ORACLE_TOL) {
                return Ok(None);
            }
        }
    }
    Ok(Some(OldSubsetWitness { k, r_bar }))
}

/// Some deterministic completion `π'` of the expert outside its support
/// has `r` in the old feasible set of `π'`.
pub fn fs_union_crosscheck(
    mdp: &Mdp,
    expert: &DeterministicPolicy,
    expert_support: &StateSet,
    r: &RewardFunction,
    cap: u128,
) -> Result<bool> {
    let d = mdp.dims();
    let free = off_support_cells(d, expert_support);
    let q = optimal_q_value(mdp, r, None)?;
    let mut found = false;
    odometer(&vec![d.actions; free.len()], cap, |choice| {
        let mut pi = expert.clone();
        for (&(h, s), &a) in free.iter().zip(choice) {
            pi.set_action(h, s, a);
        }
        let all_cells = (0..d.horizon).flat_map(|h| (0..d.states).map(move |s| (h, s)));
        found = expert_greedy_on(&q, &pi, all_cells);
        Ok(!found)
    })?;
    Ok(found)
}

/// The expert's action carries the largest immediate reward at every
/// supported pair.
pub fn greedy_property_check(r: &RewardFunction, expert: &DeterministicPolicy, expert_support: &StateSet) -> bool {
    let d = r.dims();
    expert_support.iter().all(|(h, s)| {
        let re = r.get(h, s, expert.action(h, s));
        (0..d.actions).all(|a| re >= r.get(h, s, a) - ORACLE_TOL)
    })
}

/// `Z^{p,π}` of a policy under the true model.
pub fn true_triple_support(mdp: &Mdp, policy: &impl Policy) -> Result<TripleSet> {
    Ok(supports(&visitation(mdp, policy)?).state_action_support)
}
