//! Extended value iteration over a confidence set of transition models and
//! the membership test built on its `Q^+`/`Q^-` bounds.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use crate::mdp::ActionSets;

use crate::error::{Error, Result};
use crate::estimation::{ConfidenceKind, ConfidenceSpec, EmpiricalModel};
use crate::mdp::{Dims, RewardFunction};

/// Default slack on the membership comparisons.
pub const DEFAULT_TOL: f64 = 1e-9;

/// `{π̂^E_h(s)}` on the expert support, every action elsewhere.
pub fn restricted_action_sets(em: &EmpiricalModel) -> ActionSets {
    let d = em.dims();
    ActionSets::from_fn(d, |h, s| match em.expert_action(h, s) {
        Some(a) if em.expert_support.contains(h, s) => vec![a],
        _ => (0..d.actions).collect(),
    })
    .expect("estimated expert actions are in range")
}

/// Counters filled in by one EVI pass.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EviStats {
    pub inner_calls: u64,
    pub comparisons: u64,
}

fn total_cmp_counted(x: f64, y: f64, counter: &mut u64) -> Ordering {
    *counter += 1;
    x.total_cmp(&y)
}

fn inner_l1(
    values: &[f64],
    p_hat: &[f64],
    budget: f64,
    allowed: Option<&[bool]>,
    comparisons: &mut u64,
) -> Result<(Vec<f64>, f64)> {
    let n = values.len();
    if p_hat.len() != n || allowed.is_some_and(|a| a.len() != n) {
        return Err(Error::DimensionMismatch("inner problem vectors differ in length".into()));
    }
    let is_allowed = |i: usize| allowed.is_none_or(|a| a[i]);
    if (0..n).any(|i| p_hat[i] > 0.0 && !is_allowed(i)) {
        return Err(Error::SupportInfeasible);
    }
    let mut order: Vec<usize> = (0..n).filter(|&i| is_allowed(i)).collect();
    if order.is_empty() {
        return Err(Error::SupportInfeasible);
    }
    // ascending by value, ties by index; the best state is the last maximal one
    // found scanning from the lowest index
    order.sort_by(|&i, &j| total_cmp_counted(values[i], values[j], comparisons).then(i.cmp(&j)));
    let top = values[*order.last().unwrap()];
    let best = *order.iter().find(|&&i| values[i] == top).unwrap();

    let mut q = p_hat.to_vec();
    let raise = (budget / 2.0).min(1.0 - p_hat[best]).max(0.0);
    q[best] += raise;
    let mut excess = raise;
    for &i in &order {
        if excess <= 0.0 {
            break;
        }
        if i == best {
            continue;
        }
        let take = q[i].min(excess);
        q[i] -= take;
        excess -= take;
    }
    let value = q.iter().zip(values).map(|(p, v)| p * v).sum();
    Ok((q, value))
}

/// `max { q·values : q ∈ Δ, ‖q − p̂‖₁ ≤ budget, supp q ⊆ allowed }`.
pub fn inner_linear_max_l1(
    values: &[f64],
    p_hat_row: &[f64],
    budget: f64,
    allowed: Option<&[bool]>,
) -> Result<(Vec<f64>, f64)> {
    inner_l1(values, p_hat_row, budget, allowed, &mut 0)
}

/// The minimizing counterpart of [`inner_linear_max_l1`].
pub fn inner_linear_min_l1(
    values: &[f64],
    p_hat_row: &[f64],
    budget: f64,
    allowed: Option<&[bool]>,
) -> Result<(Vec<f64>, f64)> {
    let neg: Vec<f64> = values.iter().map(|v| -v).collect();
    let (q, v) = inner_l1(&neg, p_hat_row, budget, allowed, &mut 0)?;
    Ok((q, -v))
}

/// Optimistic and pessimistic action values over a confidence set.
#[derive(Clone, Debug, PartialEq)]
pub struct QBounds {
    dims: Dims,
    kind: ConfidenceKind,
    q_plus: Vec<f64>,
    q_minus: Vec<f64>,
}

impl QBounds {
    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn kind(&self) -> ConfidenceKind {
        self.kind
    }

    #[inline]
    pub fn q_plus(&self, h: usize, s: usize, a: usize) -> f64 {
        self.q_plus[self.dims.sa(h, s, a)]
    }

    #[inline]
    pub fn q_minus(&self, h: usize, s: usize, a: usize) -> f64 {
        self.q_minus[self.dims.sa(h, s, a)]
    }
}

fn dot(p: &[f64], v: &[f64]) -> f64 {
    p.iter().zip(v).map(|(x, y)| x * y).sum()
}

fn fold_max(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn fold_min(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::INFINITY, f64::min)
}

pub fn evi_bounds(reward: &RewardFunction, spec: &ConfidenceSpec<'_>, action_sets: &ActionSets) -> Result<QBounds> {
    evi_bounds_with_stats(reward, spec, action_sets).map(|(qb, _)| qb)
}

/// [`evi_bounds`] plus counts of inner optimizations and value comparisons.
pub fn evi_bounds_with_stats(
    reward: &RewardFunction,
    spec: &ConfidenceSpec<'_>,
    action_sets: &ActionSets,
) -> Result<(QBounds, EviStats)> {
    let em = spec.base;
    let d = em.dims();
    d.ensure_eq(&reward.dims(), "model vs reward")?;
    d.ensure_eq(&action_sets.dims(), "model vs action sets")?;
    if spec.kind == ConfidenceKind::L1Ball && spec.bonuses.is_none() {
        return Err(Error::InvalidArgument("l1 confidence set without bonuses".into()));
    }
    let mut stats = EviStats::default();
    let mut q_plus = vec![0.0; d.sa_len()];
    let mut q_minus = vec![0.0; d.sa_len()];
    let mut v_plus = vec![0.0; d.states];
    let mut v_minus = vec![0.0; d.states];

    for h in (0..d.horizon).rev() {
        let last = h + 1 == d.horizon;
        for s in 0..d.states {
            for a in 0..d.actions {
                let r = reward.get(h, s, a);
                let i = d.sa(h, s, a);
                if last {
                    q_plus[i] = r;
                    q_minus[i] = r;
                    continue;
                }
                let covered = em.behavioral_support.contains(h, s, a);
                let (up, down) = match (spec.kind, covered) {
                    (ConfidenceKind::EquivalenceClass, true) => {
                        let row = em.p_hat_row(h, s, a);
                        (dot(row, &v_plus), dot(row, &v_minus))
                    }
                    (ConfidenceKind::L1Ball, true) => {
                        let budget = spec.bonuses.as_ref().unwrap().get(h, s, a);
                        let allowed = if em.expert_action(h, s) == Some(a) { spec.allowed_next(h, s) } else { None };
                        let row = em.p_hat_row(h, s, a);
                        stats.inner_calls += 2;
                        let (_, up) = inner_l1(&v_plus, row, budget, allowed, &mut stats.comparisons)?;
                        let neg: Vec<f64> = v_minus.iter().map(|v| -v).collect();
                        let (_, down) = inner_l1(&neg, row, budget, allowed, &mut stats.comparisons)?;
                        (up, -down)
                    }
                    (_, false) => (fold_max(&v_plus), fold_min(&v_minus)),
                };
                q_plus[i] = r + up;
                q_minus[i] = r + down;
            }
        }
        for s in 0..d.states {
            let allowed = action_sets.get(h, s);
            v_plus[s] = allowed.iter().map(|&a| q_plus[d.sa(h, s, a)]).fold(f64::NEG_INFINITY, f64::max);
            v_minus[s] = allowed.iter().map(|&a| q_minus[d.sa(h, s, a)]).fold(f64::NEG_INFINITY, f64::max);
        }
    }
    Ok((QBounds { dims: d, kind: spec.kind, q_plus, q_minus }, stats))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algo {
    Irlo,
    Pirlo,
}

impl Algo {
    pub fn confidence_kind(self) -> ConfidenceKind {
        match self {
            Algo::Irlo => ConfidenceKind::EquivalenceClass,
            Algo::Pirlo => ConfidenceKind::L1Ball,
        }
    }
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algo::Irlo => "irlo",
            Algo::Pirlo => "pirlo",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub in_union: bool,
    pub in_cap: bool,
    pub algorithm: Algo,
}

/// Both algorithms compare the expert's value on one side of the set with
/// the alternatives' value on the other: the inner set needs the worst-case
/// expert value to beat every best-case alternative, the outer set needs the
/// best-case expert value to reach some worst-case alternative.
pub fn check_membership(
    reward: &RewardFunction,
    qb: &QBounds,
    em: &EmpiricalModel,
    algo: Algo,
    tol: f64,
) -> Result<Verdict> {
    if qb.kind() != algo.confidence_kind() {
        return Err(Error::SpecMismatch { bounds: format!("{:?}", qb.kind()), requested: algo.to_string() });
    }
    let d = em.dims();
    d.ensure_eq(&qb.dims(), "model vs bounds")?;
    d.ensure_eq(&reward.dims(), "model vs reward")?;
    let mut in_union = true;
    let mut in_cap = true;
    for (h, s) in em.expert_support.iter() {
        let ae = em.expert_action(h, s).expect("policy is total on the expert support");
        let (up_e, down_e) = (qb.q_plus(h, s, ae), qb.q_minus(h, s, ae));
        for a in (0..d.actions).filter(|&a| a != ae) {
            if up_e < qb.q_minus(h, s, a) - tol {
                in_union = false;
            }
            if down_e < qb.q_plus(h, s, a) - tol {
                in_cap = false;
            }
        }
        if !in_union && !in_cap {
            break;
        }
    }
    debug_assert!(!in_cap || in_union);
    Ok(Verdict { in_union, in_cap, algorithm: algo })
}

/// Action sets, EVI and the membership test in one call.
pub fn membership(reward: &RewardFunction, spec: &ConfidenceSpec<'_>, algo: Algo, tol: f64) -> Result<Verdict> {
    let sets = restricted_action_sets(spec.base);
    let qb = evi_bounds(reward, spec, &sets)?;
    check_membership(reward, &qb, spec.base, algo, tol)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SanityLabel {
    FeasibleWHP,
    InfeasibleWHP,
    Undecided,
}

impl fmt::Display for SanityLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SanityLabel::FeasibleWHP => "feasible_whp",
            SanityLabel::InfeasibleWHP => "infeasible_whp",
            SanityLabel::Undecided => "undecided",
        })
    }
}

pub fn sanity_check(verdict: &Verdict) -> Result<SanityLabel> {
    if verdict.algorithm != Algo::Pirlo {
        return Err(Error::InvalidArgument("the sanity check needs a pirlo verdict".into()));
    }
    Ok(if verdict.in_cap {
        SanityLabel::FeasibleWHP
    } else if !verdict.in_union {
        SanityLabel::InfeasibleWHP
    } else {
        SanityLabel::Undecided
    })
}

/// One line of verdict output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerdictRecord {
    pub reward_id: String,
    pub algo: Algo,
    pub in_union: bool,
    pub in_cap: bool,
    pub label: Option<String>,
}

impl VerdictRecord {
    pub fn new(reward_id: impl Into<String>, v: &Verdict) -> Self {
        VerdictRecord {
            reward_id: reward_id.into(),
            algo: v.algorithm,
            in_union: v.in_union,
            in_cap: v.in_cap,
            label: sanity_check(v).ok().map(|l| l.to_string()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimation::{build_confidence_irlo, build_confidence_pirlo_with, BonusTable};
    use crate::instances::{random_deterministic_policy, random_mdp};
    use crate::mdp::{optimal_q_value, DeterministicPolicy, Mdp, StochasticPolicy};
    use crate::trajectory::{simulate, Role};

    /// All `q` on a 1e-3 grid of the 3-simplex meeting the constraints.
    fn grid_max(values: &[f64; 3], p: &[f64; 3], budget: f64) -> f64 {
        let mut best = f64::NEG_INFINITY;
        for i in 0..=1000 {
            for j in 0..=(1000 - i) {
                let q = [i as f64 / 1000.0, j as f64 / 1000.0, (1000 - i - j) as f64 / 1000.0];
                let l1: f64 = q.iter().zip(p).map(|(a, b)| (a - b).abs()).sum();
                if l1 <= budget + 1e-12 {
                    best = best.max(q.iter().zip(values).map(|(a, b)| a * b).sum());
                }
            }
        }
        best
    }

    #[test]
    fn inner_zero_budget_is_reference() {
        let (q, v) = inner_linear_max_l1(&[3.0, -1.0, 2.0], &[0.2, 0.5, 0.3], 0.0, None).unwrap();
        assert_eq!(q, vec![0.2, 0.5, 0.3]);
        assert!((v - (0.6 - 0.5 + 0.6)).abs() < 1e-12);
    }

    #[test]
    fn inner_full_budget_hits_best_allowed() {
        let (q, v) = inner_linear_max_l1(&[3.0, -1.0, 2.0], &[0.2, 0.5, 0.3], 2.0, None).unwrap();
        assert_eq!(q, vec![1.0, 0.0, 0.0]);
        assert_eq!(v, 3.0);
        let allowed = [false, true, true];
        let (q, v) = inner_linear_max_l1(&[3.0, -1.0, 2.0], &[0.0, 0.5, 0.5], 2.0, Some(&allowed)).unwrap();
        assert_eq!(q, vec![0.0, 0.0, 1.0]);
        assert_eq!(v, 2.0);
    }

    #[test]
    fn inner_worked_example_matches_grid() {
        let (q, v) = inner_linear_max_l1(&[1.0, 0.0, -1.0], &[0.5, 0.3, 0.2], 0.4, None).unwrap();
        for (x, y) in q.iter().zip([0.7, 0.3, 0.0]) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!((v - 0.7).abs() < 1e-12);
        assert!((grid_max(&[1.0, 0.0, -1.0], &[0.5, 0.3, 0.2], 0.4) - 0.7).abs() < 1e-9);
    }

    #[test]
    fn inner_min_variant() {
        let (q, v) = inner_linear_min_l1(&[1.0, 0.0, -1.0], &[0.5, 0.3, 0.2], 0.4, None).unwrap();
        for (x, y) in q.iter().zip([0.3, 0.3, 0.4]) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!((v - (-0.1)).abs() < 1e-12);
    }

    #[test]
    fn inner_support_outside_allowed() {
        let allowed = [true, false, true];
        assert!(matches!(
            inner_linear_max_l1(&[0.0; 3], &[0.5, 0.5, 0.0], 0.1, Some(&allowed)),
            Err(Error::SupportInfeasible)
        ));
    }

    fn exact_model(seed: u64) -> (Mdp, DeterministicPolicy, EmpiricalModel) {
        let d = Dims::new(3, 2, 3).unwrap();
        let m = random_mdp(d, seed, Some(2));
        let e = random_deterministic_policy(d, seed + 1);
        let em = EmpiricalModel::from_true_model(&m, &e, &StochasticPolicy::uniform(d)).unwrap();
        (m, e, em)
    }

    #[test]
    fn action_sets_follow_expert_support() {
        let (_, e, em) = exact_model(3);
        let sets = restricted_action_sets(&em);
        let d = em.dims();
        for h in 0..d.horizon {
            for s in 0..d.states {
                if em.expert_support.contains(h, s) {
                    assert_eq!(sets.get(h, s), &[e.action(h, s)]);
                } else {
                    assert_eq!(sets.get(h, s), &[0, 1]);
                }
            }
        }
    }

    #[test]
    fn action_sets_all_singletons_when_expert_covers_everything() {
        let d = Dims::new(2, 3, 2).unwrap();
        let m = Mdp::new(d, vec![0.5, 0.5], vec![0.5; d.sa_len() * 2]).unwrap();
        let e = DeterministicPolicy::from_fn(d, |_, s| s).unwrap();
        let em = EmpiricalModel::from_true_model(&m, &e, &e).unwrap();
        let sets = restricted_action_sets(&em);
        assert!((0..2).all(|h| (0..2).all(|s| sets.get(h, s).len() == 1)));
    }

    #[test]
    fn full_coverage_zero_bonus_collapses_to_restricted_optimum() {
        let d = Dims::new(3, 2, 3).unwrap();
        let m = random_mdp(d, 9, None);
        let e = random_deterministic_policy(d, 10);
        let em = EmpiricalModel::from_true_model(&m, &e, &StochasticPolicy::uniform(d)).unwrap();
        let r = crate::instances::uniform_reward(d, &mut crate::instances::rng(1));
        let sets = restricted_action_sets(&em);
        let expected = optimal_q_value(&m, &r, Some(&sets)).unwrap();
        for spec in [build_confidence_irlo(&em), build_confidence_pirlo_with(&em, BonusTable::zeros(d)).unwrap()] {
            let qb = evi_bounds(&r, &spec, &sets).unwrap();
            for h in 0..3 {
                for s in 0..3 {
                    for a in 0..2 {
                        assert!((qb.q_plus(h, s, a) - expected.q(h, s, a)).abs() < 1e-12);
                        assert!((qb.q_minus(h, s, a) - expected.q(h, s, a)).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn one_free_row_matches_enumerated_completions() {
        let d = Dims::new(3, 2, 2).unwrap();
        let m = random_mdp(d, 21, None);
        let e = random_deterministic_policy(d, 22);
        let mut em = EmpiricalModel::from_true_model(&m, &e, &StochasticPolicy::uniform(d)).unwrap();
        // take one non-expert triple out of the covered set
        let (h, s) = (0, 0);
        let a = 1 - e.action(h, s);
        em.behavioral_support.remove(h, s, a);
        let r = crate::instances::uniform_reward(d, &mut crate::instances::rng(4));
        let sets = restricted_action_sets(&em);
        let qb = evi_bounds(&r, &build_confidence_irlo(&em), &sets).unwrap();
        let mut hi = f64::NEG_INFINITY;
        let mut lo = f64::INFINITY;
        for target in 0..3 {
            let mut row = vec![0.0; 3];
            row[target] = 1.0;
            let alt = m.with_row(h, s, a, &row).unwrap();
            let q = optimal_q_value(&alt, &r, Some(&sets)).unwrap().q(h, s, a);
            hi = hi.max(q);
            lo = lo.min(q);
        }
        assert!((qb.q_plus(h, s, a) - hi).abs() < 1e-12);
        assert!((qb.q_minus(h, s, a) - lo).abs() < 1e-12);
    }

    #[test]
    fn constant_reward_is_in_both_sets() {
        for seed in 0..5 {
            let (m, e, _) = exact_model(seed);
            let d = m.dims();
            let db = simulate(&m, &StochasticPolicy::uniform(d), 200, seed, Role::Behavioral).unwrap();
            let de = simulate(&m, &e, 50, seed + 100, Role::Expert).unwrap();
            let em =
                EmpiricalModel::estimate(d, &de, &crate::trajectory::Dataset::merged([&db, &de], Role::Behavioral))
                    .unwrap();
            let r = RewardFunction::constant(d, 0.7);
            for (spec, algo) in [
                (build_confidence_irlo(&em), Algo::Irlo),
                (crate::estimation::build_confidence_pirlo(&em, 0.1).unwrap(), Algo::Pirlo),
            ] {
                let v = membership(&r, &spec, algo, DEFAULT_TOL).unwrap();
                assert!(v.in_cap && v.in_union, "{algo} {v:?}");
            }
        }
    }

    #[test]
    fn spec_mismatch_rejected() {
        let (_, _, em) = exact_model(1);
        let r = RewardFunction::zeros(em.dims());
        let qb = evi_bounds(&r, &build_confidence_irlo(&em), &restricted_action_sets(&em)).unwrap();
        assert!(matches!(check_membership(&r, &qb, &em, Algo::Pirlo, 1e-9), Err(Error::SpecMismatch { .. })));
    }

    #[test]
    fn sanity_labels() {
        let v = |in_union, in_cap| Verdict { in_union, in_cap, algorithm: Algo::Pirlo };
        assert_eq!(sanity_check(&v(true, true)).unwrap(), SanityLabel::FeasibleWHP);
        assert_eq!(sanity_check(&v(false, false)).unwrap(), SanityLabel::InfeasibleWHP);
        assert_eq!(sanity_check(&v(true, false)).unwrap(), SanityLabel::Undecided);
        let irlo = Verdict { in_union: true, in_cap: true, algorithm: Algo::Irlo };
        assert!(sanity_check(&irlo).is_err());
    }
}
