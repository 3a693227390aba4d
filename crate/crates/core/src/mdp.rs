//! Finite-horizon tabular MDPs without reward and exact dynamic programming
//! over them.
//!
//! All tables are dense and stage-major: index order is always
//! `(stage, state, action[, next_state])`, stages are 0-based and the value
//! at the virtual stage after the horizon is an implicit zero.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on simplex sums and row comparisons.
pub const PROB_TOL: f64 = 1e-9;

/// A visitation entry counts as positive iff it exceeds this threshold.
pub const SUPPORT_EPS: f64 = 1e-12;

/// Sizes shared by every table attached to one MDP.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub states: usize,
    pub actions: usize,
    pub horizon: usize,
}

impl Dims {
    pub fn new(states: usize, actions: usize, horizon: usize) -> Result<Self> {
        if states == 0 || actions == 0 || horizon == 0 {
            return Err(Error::InvalidArgument(format!(
                "sizes must be positive (S={states}, A={actions}, H={horizon})"
            )));
        }
        Ok(Dims { states, actions, horizon })
    }

    #[inline]
    pub fn sa(&self, h: usize, s: usize, a: usize) -> usize {
        (h * self.states + s) * self.actions + a
    }

    #[inline]
    pub fn hs(&self, h: usize, s: usize) -> usize {
        h * self.states + s
    }

    pub fn sa_len(&self) -> usize {
        self.horizon * self.states * self.actions
    }

    pub fn hs_len(&self) -> usize {
        self.horizon * self.states
    }

    pub(crate) fn ensure_eq(&self, other: &Dims, what: &str) -> Result<()> {
        if self != other {
            return Err(Error::DimensionMismatch(format!("{what}: {self} vs {other}")));
        }
        Ok(())
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "S={} A={} H={}", self.states, self.actions, self.horizon)
    }
}

pub(crate) fn check_simplex(row: &[f64], location: impl FnOnce() -> String) -> Result<()> {
    let mut sum = 0.0;
    for (i, &x) in row.iter().enumerate() {
        if !x.is_finite() || x < 0.0 {
            return Err(Error::InvalidDistribution { location: location(), reason: format!("entry {i} is {x}") });
        }
        sum += x;
    }
    if (sum - 1.0).abs() > PROB_TOL {
        return Err(Error::InvalidDistribution { location: location(), reason: format!("sums to {sum}") });
    }
    Ok(())
}

/// `<S, A, mu0, p, H>`: an MDP without reward.
#[derive(Clone, Debug, PartialEq)]
pub struct Mdp {
    dims: Dims,
    initial: Vec<f64>,
    transitions: Vec<f64>,
}

impl Mdp {
    /// `transitions` is the flat `[h][s][a][s']` tensor.
    pub fn new(dims: Dims, initial: Vec<f64>, transitions: Vec<f64>) -> Result<Self> {
        let s = dims.states;
        if initial.len() != s {
            return Err(Error::DimensionMismatch(format!(
                "initial distribution has {} entries, expected {s}",
                initial.len()
            )));
        }
        if transitions.len() != dims.sa_len() * s {
            return Err(Error::DimensionMismatch(format!(
                "transition tensor has {} entries, expected {}",
                transitions.len(),
                dims.sa_len() * s
            )));
        }
        check_simplex(&initial, || "mu0".to_string())?;
        let mdp = Mdp { dims, initial, transitions };
        for h in 0..dims.horizon {
            for st in 0..s {
                for a in 0..dims.actions {
                    check_simplex(mdp.row(h, st, a), || format!("p[h={}][s={st}][a={a}]", h + 1))?;
                }
            }
        }
        Ok(mdp)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    /// `p_h(. | s, a)`.
    #[inline]
    pub fn row(&self, h: usize, s: usize, a: usize) -> &[f64] {
        let n = self.dims.states;
        let start = self.dims.sa(h, s, a) * n;
        &self.transitions[start..start + n]
    }

    /// Returns a copy with one transition row replaced.
    pub fn with_row(&self, h: usize, s: usize, a: usize, row: &[f64]) -> Result<Self> {
        if row.len() != self.dims.states {
            return Err(Error::DimensionMismatch("replacement row length".into()));
        }
        check_simplex(row, || format!("replacement row h={} s={s} a={a}", h + 1))?;
        let mut out = self.clone();
        out.row_mut(h, s, a).copy_from_slice(row);
        Ok(out)
    }

    pub(crate) fn row_mut(&mut self, h: usize, s: usize, a: usize) -> &mut [f64] {
        let n = self.dims.states;
        let start = self.dims.sa(h, s, a) * n;
        &mut self.transitions[start..start + n]
    }

    pub fn to_json_value(&self) -> MdpFile {
        let d = self.dims;
        MdpFile {
            states: d.states,
            actions: d.actions,
            horizon: d.horizon,
            mu0: self.initial.clone(),
            p: (0..d.horizon)
                .map(|h| (0..d.states).map(|s| (0..d.actions).map(|a| self.row(h, s, a).to_vec()).collect()).collect())
                .collect(),
        }
    }

    pub fn from_file_repr(f: MdpFile) -> Result<Self> {
        let dims = Dims::new(f.states, f.actions, f.horizon)?;
        if f.p.len() != dims.horizon {
            return Err(Error::schema(None, format!("p has {} stages, expected {}", f.p.len(), dims.horizon)));
        }
        let mut flat = Vec::with_capacity(dims.sa_len() * dims.states);
        for (h, stage) in f.p.iter().enumerate() {
            if stage.len() != dims.states {
                return Err(Error::schema(None, format!("p[h={}] has {} states", h + 1, stage.len())));
            }
            for (s, per_state) in stage.iter().enumerate() {
                if per_state.len() != dims.actions {
                    return Err(Error::schema(None, format!("p[h={}][s={s}] has {} actions", h + 1, per_state.len())));
                }
                for (a, row) in per_state.iter().enumerate() {
                    if row.len() != dims.states {
                        return Err(Error::schema(
                            None,
                            format!("p[h={}][s={s}][a={a}] has {} entries", h + 1, row.len()),
                        ));
                    }
                    flat.extend_from_slice(row);
                }
            }
        }
        Mdp::new(dims, f.mu0, flat)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        Mdp::from_file_repr(serde_json::from_str(text)?)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string(&self.to_json_value()).expect("mdp serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Mdp::from_json_str(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json_string()).map_err(|e| Error::io(path, e))
    }
}

/// Wire format `{"S","A","H","mu0","p"}` with `p[h][s][a][s']`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MdpFile {
    #[serde(rename = "S")]
    pub states: usize,
    #[serde(rename = "A")]
    pub actions: usize,
    #[serde(rename = "H")]
    pub horizon: usize,
    pub mu0: Vec<f64>,
    pub p: Vec<Vec<Vec<Vec<f64>>>>,
}

/// Anything that assigns action probabilities per `(stage, state)`.
pub trait Policy {
    fn dims(&self) -> Dims;
    fn prob(&self, h: usize, s: usize, a: usize) -> f64;
}

/// `pi_h(s)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeterministicPolicy {
    dims: Dims,
    actions: Vec<usize>,
}

impl DeterministicPolicy {
    pub fn new(dims: Dims, actions: Vec<usize>) -> Result<Self> {
        if actions.len() != dims.hs_len() {
            return Err(Error::DimensionMismatch(format!(
                "policy has {} entries, expected {}",
                actions.len(),
                dims.hs_len()
            )));
        }
        if let Some(&a) = actions.iter().find(|&&a| a >= dims.actions) {
            return Err(Error::ActionOutOfRange { action: a, num_actions: dims.actions });
        }
        Ok(DeterministicPolicy { dims, actions })
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize) -> usize) -> Result<Self> {
        let mut actions = Vec::with_capacity(dims.hs_len());
        for h in 0..dims.horizon {
            for s in 0..dims.states {
                actions.push(f(h, s));
            }
        }
        DeterministicPolicy::new(dims, actions)
    }

    #[inline]
    pub fn action(&self, h: usize, s: usize) -> usize {
        self.actions[self.dims.hs(h, s)]
    }

    pub fn set_action(&mut self, h: usize, s: usize, a: usize) {
        assert!(a < self.dims.actions);
        let i = self.dims.hs(h, s);
        self.actions[i] = a;
    }

    pub fn actions(&self) -> &[usize] {
        &self.actions
    }

    pub fn to_stochastic(&self) -> StochasticPolicy {
        let d = self.dims;
        let mut probs = vec![0.0; d.sa_len()];
        for h in 0..d.horizon {
            for s in 0..d.states {
                probs[d.sa(h, s, self.action(h, s))] = 1.0;
            }
        }
        StochasticPolicy { dims: d, probs }
    }
}

impl Policy for DeterministicPolicy {
    fn dims(&self) -> Dims {
        self.dims
    }

    fn prob(&self, h: usize, s: usize, a: usize) -> f64 {
        if self.action(h, s) == a {
            1.0
        } else {
            0.0
        }
    }
}

/// `pi_h(. | s)`.
#[derive(Clone, Debug, PartialEq)]
pub struct StochasticPolicy {
    dims: Dims,
    probs: Vec<f64>,
}

impl StochasticPolicy {
    pub fn new(dims: Dims, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != dims.sa_len() {
            return Err(Error::DimensionMismatch(format!(
                "policy has {} entries, expected {}",
                probs.len(),
                dims.sa_len()
            )));
        }
        let pol = StochasticPolicy { dims, probs };
        for h in 0..dims.horizon {
            for s in 0..dims.states {
                check_simplex(pol.row(h, s), || format!("pi[h={}][s={s}]", h + 1))?;
            }
        }
        Ok(pol)
    }

    pub fn uniform(dims: Dims) -> Self {
        StochasticPolicy { dims, probs: vec![1.0 / dims.actions as f64; dims.sa_len()] }
    }

    pub fn row(&self, h: usize, s: usize) -> &[f64] {
        let start = self.dims.sa(h, s, 0);
        &self.probs[start..start + self.dims.actions]
    }
}

impl Policy for StochasticPolicy {
    fn dims(&self) -> Dims {
        self.dims
    }

    fn prob(&self, h: usize, s: usize, a: usize) -> f64 {
        self.probs[self.dims.sa(h, s, a)]
    }
}

/// Wire format for policies: either deterministic `{"actions": [[a; S]; H]}`
/// or stochastic `{"pi": [[[p; A]; S]; H]}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PolicyFile {
    Deterministic { actions: Vec<Vec<usize>> },
    Stochastic { pi: Vec<Vec<Vec<f64>>> },
}

/// A loaded policy of either kind.
#[derive(Clone, Debug, PartialEq)]
pub enum AnyPolicy {
    Deterministic(DeterministicPolicy),
    Stochastic(StochasticPolicy),
}

impl AnyPolicy {
    pub fn from_file_repr(dims: Dims, f: PolicyFile) -> Result<Self> {
        match f {
            PolicyFile::Deterministic { actions } => {
                if actions.len() != dims.horizon || actions.iter().any(|r| r.len() != dims.states) {
                    return Err(Error::schema(None, "deterministic policy shape must be [H][S]"));
                }
                Ok(AnyPolicy::Deterministic(DeterministicPolicy::new(dims, actions.concat())?))
            }
            PolicyFile::Stochastic { pi } => {
                let ok = pi.len() == dims.horizon
                    && pi.iter().all(|st| st.len() == dims.states && st.iter().all(|r| r.len() == dims.actions));
                if !ok {
                    return Err(Error::schema(None, "stochastic policy shape must be [H][S][A]"));
                }
                let flat: Vec<f64> = pi.into_iter().flatten().flatten().collect();
                Ok(AnyPolicy::Stochastic(StochasticPolicy::new(dims, flat)?))
            }
        }
    }

    pub fn to_file_repr(&self) -> PolicyFile {
        match self {
            AnyPolicy::Deterministic(p) => {
                let d = p.dims;
                PolicyFile::Deterministic {
                    actions: (0..d.horizon).map(|h| (0..d.states).map(|s| p.action(h, s)).collect()).collect(),
                }
            }
            AnyPolicy::Stochastic(p) => {
                let d = p.dims;
                PolicyFile::Stochastic {
                    pi: (0..d.horizon).map(|h| (0..d.states).map(|s| p.row(h, s).to_vec()).collect()).collect(),
                }
            }
        }
    }

    pub fn load(dims: Dims, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        AnyPolicy::from_file_repr(dims, serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(&self.to_file_repr())?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn as_deterministic(&self) -> Option<&DeterministicPolicy> {
        match self {
            AnyPolicy::Deterministic(p) => Some(p),
            AnyPolicy::Stochastic(_) => None,
        }
    }
}

impl Policy for AnyPolicy {
    fn dims(&self) -> Dims {
        match self {
            AnyPolicy::Deterministic(p) => p.dims(),
            AnyPolicy::Stochastic(p) => p.dims(),
        }
    }

    fn prob(&self, h: usize, s: usize, a: usize) -> f64 {
        match self {
            AnyPolicy::Deterministic(p) => p.prob(h, s, a),
            AnyPolicy::Stochastic(p) => p.prob(h, s, a),
        }
    }
}

/// `r_h(s, a)`, real valued and unbounded but finite.
#[derive(Clone, Debug, PartialEq)]
pub struct RewardFunction {
    dims: Dims,
    values: Vec<f64>,
}

impl RewardFunction {
    pub fn new(dims: Dims, values: Vec<f64>) -> Result<Self> {
        if values.len() != dims.sa_len() {
            return Err(Error::DimensionMismatch(format!(
                "reward has {} entries, expected {}",
                values.len(),
                dims.sa_len()
            )));
        }
        for h in 0..dims.horizon {
            for s in 0..dims.states {
                for a in 0..dims.actions {
                    if !values[dims.sa(h, s, a)].is_finite() {
                        return Err(Error::NonFiniteReward { stage: h + 1, state: s, action: a });
                    }
                }
            }
        }
        Ok(RewardFunction { dims, values })
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(dims.sa_len());
        for h in 0..dims.horizon {
            for s in 0..dims.states {
                for a in 0..dims.actions {
                    values.push(f(h, s, a));
                }
            }
        }
        RewardFunction::new(dims, values)
    }

    pub fn zeros(dims: Dims) -> Self {
        RewardFunction { dims, values: vec![0.0; dims.sa_len()] }
    }

    pub fn constant(dims: Dims, c: f64) -> Self {
        RewardFunction { dims, values: vec![c; dims.sa_len()] }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    #[inline]
    pub fn get(&self, h: usize, s: usize, a: usize) -> f64 {
        self.values[self.dims.sa(h, s, a)]
    }

    pub fn set(&mut self, h: usize, s: usize, a: usize, v: f64) {
        assert!(v.is_finite(), "reward entries must be finite");
        let i = self.dims.sa(h, s, a);
        self.values[i] = v;
    }

    /// Entries of stage `h` in `(s, a)` order.
    pub fn stage(&self, h: usize) -> &[f64] {
        let n = self.dims.states * self.dims.actions;
        &self.values[h * n..(h + 1) * n]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn scaled(&self, k: f64) -> Self {
        RewardFunction::new(self.dims, self.values.iter().map(|v| v * k).collect())
            .expect("scaling by a finite factor keeps rewards finite")
    }

    pub fn to_file_repr(&self) -> RewardFile {
        let d = self.dims;
        RewardFile {
            r: (0..d.horizon)
                .map(|h| (0..d.states).map(|s| (0..d.actions).map(|a| self.get(h, s, a)).collect()).collect())
                .collect(),
        }
    }

    pub fn from_file_repr(f: RewardFile) -> Result<Self> {
        let horizon = f.r.len();
        let states = f.r.first().map_or(0, |st| st.len());
        let actions = f.r.first().and_then(|st| st.first()).map_or(0, |row| row.len());
        let dims =
            Dims::new(states, actions, horizon).map_err(|_| Error::schema(None, "reward table must be nonempty"))?;
        for (h, stage) in f.r.iter().enumerate() {
            if stage.len() != states || stage.iter().any(|row| row.len() != actions) {
                return Err(Error::schema(None, format!("reward stage {} is ragged", h + 1)));
            }
        }
        RewardFunction::new(dims, f.r.into_iter().flatten().flatten().collect())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RewardFunction::from_file_repr(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(&self.to_file_repr())?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Wire format `{"r": [[[f64; A]; S]; H]}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RewardFile {
    pub r: Vec<Vec<Vec<f64>>>,
}

/// `Q_h(s, a)` and `V_h(s)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueTable {
    dims: Dims,
    q: Vec<f64>,
    v: Vec<f64>,
}

impl ValueTable {
    pub fn dims(&self) -> Dims {
        self.dims
    }

    #[inline]
    pub fn q(&self, h: usize, s: usize, a: usize) -> f64 {
        self.q[self.dims.sa(h, s, a)]
    }

    #[inline]
    pub fn v(&self, h: usize, s: usize) -> f64 {
        self.v[self.dims.hs(h, s)]
    }

    /// `V_{h+1}` with the post-horizon stage read as zero.
    #[inline]
    pub fn v_next(&self, h: usize, s: usize) -> f64 {
        if h + 1 >= self.dims.horizon {
            0.0
        } else {
            self.v(h + 1, s)
        }
    }

    pub fn q_values(&self) -> &[f64] {
        &self.q
    }
}

/// Per-`(stage, state)` nonempty sets of allowed actions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActionSets {
    dims: Dims,
    allowed: Vec<Vec<usize>>,
}

impl ActionSets {
    pub fn full(dims: Dims) -> Self {
        ActionSets { dims, allowed: vec![(0..dims.actions).collect(); dims.hs_len()] }
    }

    /// Builds from a per-cell generator; each set is sorted and deduplicated.
    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize) -> Vec<usize>) -> Result<Self> {
        let mut allowed = Vec::with_capacity(dims.hs_len());
        for h in 0..dims.horizon {
            for s in 0..dims.states {
                let mut set = f(h, s);
                set.sort_unstable();
                set.dedup();
                if set.is_empty() {
                    return Err(Error::EmptyActionSet { state: s, stage: h + 1 });
                }
                if let Some(&a) = set.iter().find(|&&a| a >= dims.actions) {
                    return Err(Error::ActionOutOfRange { action: a, num_actions: dims.actions });
                }
                allowed.push(set);
            }
        }
        Ok(ActionSets { dims, allowed })
    }

    pub fn singletons(policy: &DeterministicPolicy) -> Self {
        let d = policy.dims();
        ActionSets::from_fn(d, |h, s| vec![policy.action(h, s)]).expect("policy actions are valid")
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn get(&self, h: usize, s: usize) -> &[usize] {
        &self.allowed[self.dims.hs(h, s)]
    }
}

fn check_policy_dims(mdp: &Mdp, policy: &impl Policy) -> Result<()> {
    mdp.dims().ensure_eq(&policy.dims(), "mdp vs policy")
}

fn check_reward_dims(mdp: &Mdp, reward: &RewardFunction) -> Result<()> {
    mdp.dims().ensure_eq(&reward.dims(), "mdp vs reward")
}

#[inline]
fn expect_next(row: &[f64], v_next: &[f64]) -> f64 {
    row.iter().zip(v_next).map(|(p, v)| p * v).sum()
}

/// `Q^pi` and `V^pi` by backward recursion.
pub fn policy_q_value(mdp: &Mdp, policy: &impl Policy, reward: &RewardFunction) -> Result<ValueTable> {
    check_policy_dims(mdp, policy)?;
    check_reward_dims(mdp, reward)?;
    let d = mdp.dims();
    let mut q = vec![0.0; d.sa_len()];
    let mut v = vec![0.0; d.hs_len()];
    let zeros = vec![0.0; d.states];
    for h in (0..d.horizon).rev() {
        let (head, tail) = v.split_at_mut((h + 1) * d.states);
        let v_next: &[f64] = if h + 1 < d.horizon { &tail[..d.states] } else { &zeros };
        let v_here = &mut head[h * d.states..];
        for s in 0..d.states {
            let mut vs = 0.0;
            for a in 0..d.actions {
                let qa = reward.get(h, s, a) + expect_next(mdp.row(h, s, a), v_next);
                q[d.sa(h, s, a)] = qa;
                vs += policy.prob(h, s, a) * qa;
            }
            v_here[s] = vs;
        }
    }
    Ok(ValueTable { dims: d, q, v })
}

/// `Q*` with the next-stage maximum optionally restricted to per-cell
/// action sets. `v` holds the restricted maximum.
pub fn optimal_q_value(mdp: &Mdp, reward: &RewardFunction, action_sets: Option<&ActionSets>) -> Result<ValueTable> {
    check_reward_dims(mdp, reward)?;
    let d = mdp.dims();
    if let Some(sets) = action_sets {
        d.ensure_eq(&sets.dims(), "mdp vs action sets")?;
    }
    let mut q = vec![0.0; d.sa_len()];
    let mut v = vec![0.0; d.hs_len()];
    let zeros = vec![0.0; d.states];
    for h in (0..d.horizon).rev() {
        let (head, tail) = v.split_at_mut((h + 1) * d.states);
        let v_next: &[f64] = if h + 1 < d.horizon { &tail[..d.states] } else { &zeros };
        let v_here = &mut head[h * d.states..];
        for s in 0..d.states {
            for a in 0..d.actions {
                q[d.sa(h, s, a)] = reward.get(h, s, a) + expect_next(mdp.row(h, s, a), v_next);
            }
            let best = match action_sets {
                Some(sets) => sets.get(h, s).iter().map(|&a| q[d.sa(h, s, a)]).fold(f64::NEG_INFINITY, f64::max),
                None => (0..d.actions).map(|a| q[d.sa(h, s, a)]).fold(f64::NEG_INFINITY, f64::max),
            };
            v_here[s] = best;
        }
    }
    Ok(ValueTable { dims: d, q, v })
}

/// Greedy deterministic policy from a Q table; ties go to the lowest action.
pub fn greedy_policy(values: &ValueTable, action_sets: Option<&ActionSets>) -> DeterministicPolicy {
    let d = values.dims();
    DeterministicPolicy::from_fn(d, |h, s| {
        let candidates: Vec<usize> = match action_sets {
            Some(sets) => sets.get(h, s).to_vec(),
            None => (0..d.actions).collect(),
        };
        let mut best = candidates[0];
        for &a in &candidates[1..] {
            if values.q(h, s, a) > values.q(h, s, best) {
                best = a;
            }
        }
        best
    })
    .expect("greedy actions are in range")
}

/// `J(pi; mu0, p, r)`.
pub fn utility(mdp: &Mdp, policy: &impl Policy, reward: &RewardFunction) -> Result<f64> {
    let vt = policy_q_value(mdp, policy, reward)?;
    Ok(mdp.initial().iter().enumerate().map(|(s, mu)| mu * vt.v(0, s)).sum())
}

/// `J*(mu0, p, r)`.
pub fn optimal_utility(mdp: &Mdp, reward: &RewardFunction) -> Result<f64> {
    let vt = optimal_q_value(mdp, reward, None)?;
    Ok(mdp.initial().iter().enumerate().map(|(s, mu)| mu * vt.v(0, s)).sum())
}

/// `rho_h(s, a)` and `rho_h(s)`.
#[derive(Clone, Debug, PartialEq)]
pub struct VisitationTable {
    dims: Dims,
    rho: Vec<f64>,
    rho_state: Vec<f64>,
}

impl VisitationTable {
    pub fn dims(&self) -> Dims {
        self.dims
    }

    #[inline]
    pub fn rho(&self, h: usize, s: usize, a: usize) -> f64 {
        self.rho[self.dims.sa(h, s, a)]
    }

    #[inline]
    pub fn rho_state(&self, h: usize, s: usize) -> f64 {
        self.rho_state[self.dims.hs(h, s)]
    }

    pub fn values(&self) -> &[f64] {
        &self.rho
    }
}

/// Forward recursion for the visitation distribution.
pub fn visitation(mdp: &Mdp, policy: &impl Policy) -> Result<VisitationTable> {
    check_policy_dims(mdp, policy)?;
    let d = mdp.dims();
    let mut rho = vec![0.0; d.sa_len()];
    let mut rho_state = vec![0.0; d.hs_len()];
    let mut state_mass = mdp.initial().to_vec();
    for h in 0..d.horizon {
        let mut next = vec![0.0; d.states];
        for s in 0..d.states {
            rho_state[d.hs(h, s)] = state_mass[s];
            if state_mass[s] == 0.0 {
                continue;
            }
            for a in 0..d.actions {
                let m = state_mass[s] * policy.prob(h, s, a);
                rho[d.sa(h, s, a)] = m;
                if m == 0.0 || h + 1 == d.horizon {
                    continue;
                }
                for (n, p) in next.iter_mut().zip(mdp.row(h, s, a)) {
                    *n += m * p;
                }
            }
        }
        state_mass = next;
    }
    Ok(VisitationTable { dims: d, rho, rho_state })
}

/// A set of `(stage, state)` pairs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StateSet {
    dims: Dims,
    mask: Vec<bool>,
}

impl StateSet {
    pub fn empty(dims: Dims) -> Self {
        StateSet { dims, mask: vec![false; dims.hs_len()] }
    }

    pub fn full(dims: Dims) -> Self {
        StateSet { dims, mask: vec![true; dims.hs_len()] }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    #[inline]
    pub fn contains(&self, h: usize, s: usize) -> bool {
        self.mask[self.dims.hs(h, s)]
    }

    pub fn insert(&mut self, h: usize, s: usize) {
        let i = self.dims.hs(h, s);
        self.mask[i] = true;
    }

    pub fn remove(&mut self, h: usize, s: usize) {
        let i = self.dims.hs(h, s);
        self.mask[i] = false;
    }

    pub fn len(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn stage_len(&self, h: usize) -> usize {
        (0..self.dims.states).filter(|&s| self.contains(h, s)).count()
    }

    /// Iterates `(stage, state)` in stage-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let n = self.dims.states;
        self.mask.iter().enumerate().filter(|(_, &b)| b).map(move |(i, _)| (i / n, i % n))
    }

    pub fn states_at(&self, h: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.dims.states).filter(move |&s| self.contains(h, s))
    }
}

/// A set of `(stage, state, action)` triples.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TripleSet {
    dims: Dims,
    mask: Vec<bool>,
}

impl TripleSet {
    pub fn empty(dims: Dims) -> Self {
        TripleSet { dims, mask: vec![false; dims.sa_len()] }
    }

    pub fn full(dims: Dims) -> Self {
        TripleSet { dims, mask: vec![true; dims.sa_len()] }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    #[inline]
    pub fn contains(&self, h: usize, s: usize, a: usize) -> bool {
        self.mask[self.dims.sa(h, s, a)]
    }

    pub fn insert(&mut self, h: usize, s: usize, a: usize) {
        let i = self.dims.sa(h, s, a);
        self.mask[i] = true;
    }

    pub fn remove(&mut self, h: usize, s: usize, a: usize) {
        let i = self.dims.sa(h, s, a);
        self.mask[i] = false;
    }

    pub fn len(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let (ns, na) = (self.dims.states, self.dims.actions);
        self.mask.iter().enumerate().filter(|(_, &b)| b).map(move |(i, _)| (i / (ns * na), (i / na) % ns, i % na))
    }

    /// Projection onto `(stage, state)`.
    pub fn states(&self) -> StateSet {
        let mut out = StateSet::empty(self.dims);
        for (h, s, _) in self.iter() {
            out.insert(h, s);
        }
        out
    }

    pub fn is_subset(&self, other: &TripleSet) -> bool {
        self.mask.iter().zip(&other.mask).all(|(&a, &b)| !a || b)
    }
}

/// `S^{p,pi}`, `Z^{p,pi}` and `S^{p,pi}_max`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SupportSets {
    pub state_support: StateSet,
    pub state_action_support: TripleSet,
    pub s_max: usize,
}

impl SupportSets {
    pub fn from_triples(triples: TripleSet) -> Self {
        let state_support = triples.states();
        let d = triples.dims();
        let s_max = (0..d.horizon).map(|h| state_support.stage_len(h)).max().unwrap_or(0);
        SupportSets { state_support, state_action_support: triples, s_max }
    }
}

pub fn supports(vis: &VisitationTable) -> SupportSets {
    let d = vis.dims();
    let mut triples = TripleSet::empty(d);
    for h in 0..d.horizon {
        for s in 0..d.states {
            for a in 0..d.actions {
                if vis.rho(h, s, a) > SUPPORT_EPS {
                    triples.insert(h, s, a);
                }
            }
        }
    }
    SupportSets::from_triples(triples)
}

/// Minimum visitation over `subset`, which must lie inside the support.
pub fn rho_min(vis: &VisitationTable, subset: &TripleSet) -> Result<f64> {
    vis.dims().ensure_eq(&subset.dims(), "visitation vs subset")?;
    let mut m = f64::INFINITY;
    for (h, s, a) in subset.iter() {
        let r = vis.rho(h, s, a);
        if r <= SUPPORT_EPS {
            return Err(Error::SubsetOutsideSupport { state: s, action: a, stage: h + 1 });
        }
        m = m.min(r);
    }
    Ok(m)
}

fn rows_close(x: &[f64], y: &[f64]) -> bool {
    x.iter().zip(y).all(|(a, b)| (a - b).abs() <= PROB_TOL)
}

/// `p1 ≡_Z p2`: rows agree on every triple of `zbar`.
pub fn transition_equiv(p1: &Mdp, p2: &Mdp, zbar: &TripleSet) -> Result<bool> {
    p1.dims().ensure_eq(&p2.dims(), "transition models")?;
    p1.dims().ensure_eq(&zbar.dims(), "model vs triple set")?;
    Ok(zbar.iter().all(|(h, s, a)| rows_close(p1.row(h, s, a), p2.row(h, s, a))))
}

/// `pi1 ≡_S pi2`: action distributions agree on every pair of `sbar`.
pub fn policy_equiv(pi1: &impl Policy, pi2: &impl Policy, sbar: &StateSet) -> Result<bool> {
    let d = pi1.dims();
    d.ensure_eq(&pi2.dims(), "policies")?;
    d.ensure_eq(&sbar.dims(), "policy vs state set")?;
    Ok(sbar.iter().all(|(h, s)| (0..d.actions).all(|a| (pi1.prob(h, s, a) - pi2.prob(h, s, a)).abs() <= PROB_TOL)))
}
