//! Empirical supports, expert policy, transition estimate, concentration
//! bonuses and the confidence sets over transition models built from them.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{supports, visitation, DeterministicPolicy, Dims, Mdp, Policy, StateSet, TripleSet};
use crate::trajectory::{counts, CountTable, Dataset, Trajectory};

/// `Ŝ^E`: `(stage, state)` pairs visited by some expert trajectory.
pub fn estimate_expert_support(d: &Dataset, dims: Dims) -> Result<StateSet> {
    if d.is_empty() {
        return Err(Error::EmptyDataset);
    }
    d.validate(dims)?;
    let mut out = StateSet::empty(dims);
    for t in &d.trajectories {
        for (h, &(s, _)) in t.steps.iter().enumerate() {
            out.insert(h, s);
        }
    }
    Ok(out)
}

/// `π̂^E` on the expert support, `None` elsewhere.
pub fn estimate_expert_policy(d: &Dataset, dims: Dims) -> Result<Vec<Option<usize>>> {
    if d.is_empty() {
        return Err(Error::EmptyDataset);
    }
    d.validate(dims)?;
    let mut policy: Vec<Option<usize>> = vec![None; dims.hs_len()];
    for t in &d.trajectories {
        for (h, &(s, a)) in t.steps.iter().enumerate() {
            let slot = &mut policy[dims.hs(h, s)];
            match *slot {
                None => *slot = Some(a),
                Some(prev) if prev != a => {
                    return Err(Error::NonDeterministicExpert {
                        state: s,
                        stage: h + 1,
                        first: prev.min(a),
                        second: prev.max(a),
                    })
                }
                Some(_) => {}
            }
        }
    }
    Ok(policy)
}

/// `Ẑ^b`: visited `(stage, state, action)` triples.
pub fn estimate_behavioral_support(d: &Dataset, dims: Dims) -> Result<TripleSet> {
    if d.is_empty() {
        return Err(Error::EmptyDataset);
    }
    d.validate(dims)?;
    let mut out = TripleSet::empty(dims);
    for t in &d.trajectories {
        for (h, &(s, a)) in t.steps.iter().enumerate() {
            out.insert(h, s, a);
        }
    }
    Ok(out)
}

/// `p̂_h(s'|s,a) = N_h(s,a,s') / max(1, N_h(s,a))` on `support` for `h < H`;
/// every other row is zero. Flat `[h][s][a][s']` layout.
pub fn estimate_transition(counts: &CountTable, support: &TripleSet) -> Result<Vec<f64>> {
    let d = counts.dims();
    d.ensure_eq(&support.dims(), "counts vs support")?;
    let mut p = vec![0.0; d.sa_len() * d.states];
    for (h, s, a) in support.iter() {
        if h + 1 == d.horizon {
            continue;
        }
        let start = d.sa(h, s, a) * d.states;
        p[start..start + d.states].copy_from_slice(&normalize_counts(counts.n3_row(h, s, a)));
    }
    Ok(p)
}

/// One row of the estimator, including the all-zero row when nothing was seen.
pub fn normalize_counts(row: &[u64]) -> Vec<f64> {
    let n: u64 = row.iter().sum();
    let denom = n.max(1) as f64;
    row.iter().map(|&c| c as f64 / denom).collect()
}

/// `β̂(n, δ) = ln(4 z / δ) + (s_max − 1) ln(e (1 + n / (s_max − 1)))`, the
/// second term being zero when `s_max = 1`.
pub fn beta(n: u64, delta: f64, z_count: usize, s_max: usize) -> f64 {
    let base = (4.0 * z_count as f64 / delta).ln();
    if s_max <= 1 {
        return base;
    }
    let k = (s_max - 1) as f64;
    base + k * (1.0 + (1.0 + n as f64 / k).ln())
}

/// Everything the estimators extract from the two datasets.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalModel {
    dims: Dims,
    pub expert_support: StateSet,
    pub expert_policy: Vec<Option<usize>>,
    pub behavioral_support: TripleSet,
    p_hat: Vec<f64>,
    pub counts: CountTable,
    pub z_count: usize,
    pub s_max_hat: usize,
}

impl EmpiricalModel {
    pub fn estimate(mdp_dims: Dims, expert: &Dataset, behavioral: &Dataset) -> Result<Self> {
        let expert_support = estimate_expert_support(expert, mdp_dims)?;
        let expert_policy = estimate_expert_policy(expert, mdp_dims)?;
        let behavioral_support = estimate_behavioral_support(behavioral, mdp_dims)?;
        let counts = counts(behavioral, mdp_dims)?;
        let p_hat = estimate_transition(&counts, &behavioral_support)?;
        Ok(EmpiricalModel::assemble(mdp_dims, expert_support, expert_policy, behavioral_support, p_hat, counts))
    }

    fn assemble(
        dims: Dims,
        expert_support: StateSet,
        expert_policy: Vec<Option<usize>>,
        behavioral_support: TripleSet,
        p_hat: Vec<f64>,
        counts: CountTable,
    ) -> Self {
        let z_count = behavioral_support.len();
        let states = behavioral_support.states();
        let s_max_hat = (0..dims.horizon).map(|h| states.stage_len(h)).max().unwrap_or(0);
        EmpiricalModel { dims, expert_support, expert_policy, behavioral_support, p_hat, counts, z_count, s_max_hat }
    }

    /// The model an estimator would return with infinite data: true
    /// supports, `p̂ = p` on the behavioral support and the exact expert
    /// policy. Counts are zero, so pair it with [`BonusTable::zeros`].
    pub fn from_true_model(mdp: &Mdp, expert: &DeterministicPolicy, behavioral: &impl Policy) -> Result<Self> {
        let d = mdp.dims();
        let expert_sup = supports(&visitation(mdp, expert)?).state_support;
        let behav_sup = supports(&visitation(mdp, behavioral)?).state_action_support;
        let mut expert_policy = vec![None; d.hs_len()];
        for (h, s) in expert_sup.iter() {
            expert_policy[d.hs(h, s)] = Some(expert.action(h, s));
        }
        let mut p_hat = vec![0.0; d.sa_len() * d.states];
        for (h, s, a) in behav_sup.iter() {
            if h + 1 < d.horizon {
                let start = d.sa(h, s, a) * d.states;
                p_hat[start..start + d.states].copy_from_slice(mdp.row(h, s, a));
            }
        }
        Ok(EmpiricalModel::assemble(d, expert_sup, expert_policy, behav_sup, p_hat, CountTable::zeros(d)))
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn expert_action(&self, h: usize, s: usize) -> Option<usize> {
        self.expert_policy[self.dims.hs(h, s)]
    }

    /// `p̂_h(·|s,a)`; all zeros off the support and at the last stage.
    pub fn p_hat_row(&self, h: usize, s: usize, a: usize) -> &[f64] {
        let n = self.dims.states;
        let start = self.dims.sa(h, s, a) * n;
        &self.p_hat[start..start + n]
    }

    /// Expert triples `(h, s, π̂^E_h(s))` that the behavioral data misses.
    pub fn uncovered_expert_pairs(&self) -> Vec<(usize, usize)> {
        self.expert_support
            .iter()
            .filter(|&(h, s)| {
                let a = self.expert_action(h, s).expect("policy is total on the expert support");
                !self.behavioral_support.contains(h, s, a)
            })
            .collect()
    }

    pub fn to_file_repr(&self) -> EmpiricalModelFile {
        let d = self.dims;
        EmpiricalModelFile {
            dims: d,
            expert_support: self.expert_support.iter().map(|(h, s)| [h, s]).collect(),
            expert_policy: self.expert_support.iter().map(|(h, s)| [h, s, self.expert_action(h, s).unwrap()]).collect(),
            behavioral_support: self.behavioral_support.iter().map(|(h, s, a)| [h, s, a]).collect(),
            p_hat: self
                .behavioral_support
                .iter()
                .filter(|&(h, _, _)| h + 1 < d.horizon)
                .map(|(h, s, a)| PHatRow { h, s, a, row: self.p_hat_row(h, s, a).to_vec() })
                .collect(),
            counts: self.counts.clone(),
        }
    }

    pub fn from_file_repr(f: EmpiricalModelFile) -> Result<Self> {
        let d = f.dims;
        Dims::new(d.states, d.actions, d.horizon)?;
        let in_range = |h: usize, s: usize| h < d.horizon && s < d.states;
        let mut expert_support = StateSet::empty(d);
        for [h, s] in f.expert_support {
            if !in_range(h, s) {
                return Err(Error::schema(None, format!("expert support entry ({h},{s}) out of range")));
            }
            expert_support.insert(h, s);
        }
        let mut expert_policy = vec![None; d.hs_len()];
        for [h, s, a] in f.expert_policy {
            if !in_range(h, s) || a >= d.actions || !expert_support.contains(h, s) {
                return Err(Error::schema(None, format!("expert policy entry ({h},{s},{a}) invalid")));
            }
            expert_policy[d.hs(h, s)] = Some(a);
        }
        if expert_support.iter().any(|(h, s)| expert_policy[d.hs(h, s)].is_none()) {
            return Err(Error::schema(None, "expert policy is not total on the expert support"));
        }
        let mut behavioral_support = TripleSet::empty(d);
        for [h, s, a] in f.behavioral_support {
            if !in_range(h, s) || a >= d.actions {
                return Err(Error::schema(None, format!("behavioral support entry ({h},{s},{a}) out of range")));
            }
            behavioral_support.insert(h, s, a);
        }
        let mut p_hat = vec![0.0; d.sa_len() * d.states];
        for r in f.p_hat {
            if !in_range(r.h, r.s) || r.a >= d.actions || !behavioral_support.contains(r.h, r.s, r.a) {
                return Err(Error::schema(None, format!("p_hat row ({},{},{}) invalid", r.h, r.s, r.a)));
            }
            if r.row.len() != d.states {
                return Err(Error::schema(None, "p_hat row has wrong length"));
            }
            crate::mdp::check_simplex(&r.row, || format!("p_hat[h={}][s={}][a={}]", r.h + 1, r.s, r.a))?;
            let start = d.sa(r.h, r.s, r.a) * d.states;
            p_hat[start..start + d.states].copy_from_slice(&r.row);
        }
        f.counts.dims().ensure_eq(&d, "counts")?;
        Ok(EmpiricalModel::assemble(d, expert_support, expert_policy, behavioral_support, p_hat, f.counts))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        EmpiricalModel::from_file_repr(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(&self.to_file_repr())?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PHatRow {
    pub h: usize,
    pub s: usize,
    pub a: usize,
    pub row: Vec<f64>,
}

/// JSON cache of an [`EmpiricalModel`]; indices are 0-based.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EmpiricalModelFile {
    pub dims: Dims,
    pub expert_support: Vec<[usize; 2]>,
    pub expert_policy: Vec<[usize; 3]>,
    pub behavioral_support: Vec<[usize; 3]>,
    pub p_hat: Vec<PHatRow>,
    pub counts: CountTable,
}

/// `b̂_h(s,a)` on the behavioral support, zero elsewhere.
#[derive(Clone, Debug, PartialEq)]
pub struct BonusTable {
    dims: Dims,
    b: Vec<f64>,
    pub delta: f64,
}

impl BonusTable {
    pub fn zeros(dims: Dims) -> Self {
        BonusTable { dims, b: vec![0.0; dims.sa_len()], delta: 1.0 }
    }

    #[inline]
    pub fn get(&self, h: usize, s: usize, a: usize) -> f64 {
        self.b[self.dims.sa(h, s, a)]
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    /// Every entry multiplied by `k ≥ 0`, still clipped at 2.
    pub fn scaled(&self, k: f64) -> Self {
        BonusTable { dims: self.dims, b: self.b.iter().map(|v| (v * k).min(2.0)).collect(), delta: self.delta }
    }

    /// Same support pattern as `self`, every supported entry set to `v`.
    pub fn with_uniform(&self, support: &TripleSet, v: f64) -> Self {
        let mut b = vec![0.0; self.dims.sa_len()];
        for (h, s, a) in support.iter() {
            b[self.dims.sa(h, s, a)] = v.clamp(0.0, 2.0);
        }
        BonusTable { dims: self.dims, b, delta: self.delta }
    }

    pub fn values(&self) -> &[f64] {
        &self.b
    }
}

pub fn bonus_table(em: &EmpiricalModel, delta: f64) -> Result<BonusTable> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument(format!("delta must lie in (0,1), got {delta}")));
    }
    let d = em.dims();
    let mut b = vec![0.0; d.sa_len()];
    let z = em.z_count.max(1);
    let smax = em.s_max_hat.max(1);
    for (h, s, a) in em.behavioral_support.iter() {
        let n = em.counts.n2(h, s, a);
        let v = (2.0 * beta(n, delta, z, smax) / n.max(1) as f64).sqrt();
        b[d.sa(h, s, a)] = v.min(2.0);
    }
    Ok(BonusTable { dims: d, b, delta })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConfidenceKind {
    EquivalenceClass,
    L1Ball,
}

/// A set of transition models around an [`EmpiricalModel`].
#[derive(Clone, Debug)]
pub struct ConfidenceSpec<'a> {
    pub kind: ConfidenceKind,
    pub base: &'a EmpiricalModel,
    pub bonuses: Option<BonusTable>,
    /// Per `(stage, state)`: next states allowed after the expert action.
    allowed_next: Vec<Option<Vec<bool>>>,
}

impl<'a> ConfidenceSpec<'a> {
    pub fn allowed_next(&self, h: usize, s: usize) -> Option<&[bool]> {
        self.allowed_next[self.base.dims().hs(h, s)].as_deref()
    }

    /// Replaces the bonuses of an `L1Ball` spec.
    pub fn with_bonuses(mut self, bonuses: BonusTable) -> Result<Self> {
        if self.kind != ConfidenceKind::L1Ball {
            return Err(Error::InvalidArgument("only l1 confidence sets carry bonuses".into()));
        }
        self.base.dims().ensure_eq(&bonuses.dims(), "bonuses")?;
        self.bonuses = Some(bonuses);
        Ok(self)
    }
}

pub fn build_confidence_irlo(em: &EmpiricalModel) -> ConfidenceSpec<'_> {
    ConfidenceSpec {
        kind: ConfidenceKind::EquivalenceClass,
        base: em,
        bonuses: None,
        allowed_next: vec![None; em.dims().hs_len()],
    }
}

pub fn build_confidence_pirlo(em: &EmpiricalModel, delta: f64) -> Result<ConfidenceSpec<'_>> {
    let bonuses = bonus_table(em, delta)?;
    build_confidence_pirlo_with(em, bonuses)
}

/// PIRLO set with caller-provided bonuses.
pub fn build_confidence_pirlo_with(em: &EmpiricalModel, bonuses: BonusTable) -> Result<ConfidenceSpec<'_>> {
    let d = em.dims();
    d.ensure_eq(&bonuses.dims(), "bonuses")?;
    if let Some(&(h, s)) = em.uncovered_expert_pairs().first() {
        return Err(Error::ExpertTripleUncovered { state: s, stage: h + 1 });
    }
    let mut allowed_next = vec![None; d.hs_len()];
    for (h, s) in em.expert_support.iter() {
        if h + 1 == d.horizon {
            continue;
        }
        let a = em.expert_action(h, s).unwrap();
        let row = em.p_hat_row(h, s, a);
        let allowed: Vec<bool> = (0..d.states).map(|n| em.expert_support.contains(h + 1, n) || row[n] > 0.0).collect();
        allowed_next[d.hs(h, s)] = Some(allowed);
    }
    Ok(ConfidenceSpec { kind: ConfidenceKind::L1Ball, base: em, bonuses: Some(bonuses), allowed_next })
}

/// Drops behavioral trajectories in which an expert action at an expert
/// state leads to a state the expert data never reaches at the next stage.
pub fn prune_corner_case_trajectories(behavioral: &Dataset, expert: &Dataset, dims: Dims) -> Result<Dataset> {
    let support = estimate_expert_support(expert, dims)?;
    let policy = estimate_expert_policy(expert, dims)?;
    behavioral.validate(dims)?;
    let keep = |t: &Trajectory| {
        t.steps.windows(2).enumerate().all(|(h, w)| {
            let ((s, a), (next, _)) = (w[0], w[1]);
            policy[dims.hs(h, s)] != Some(a) || support.contains(h + 1, next)
        })
    };
    Ok(Dataset {
        trajectories: behavioral.trajectories.iter().filter(|t| keep(t)).cloned().collect(),
        role: behavioral.role,
        source_seed: behavioral.source_seed,
    })
}
