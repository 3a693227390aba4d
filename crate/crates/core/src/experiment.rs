//! Seeded experiment harnesses comparing the estimated sets with the exact
//! oracle. Trials run in parallel; every trial derives its own seed, so the
//! reports do not depend on scheduling.

use std::io::Write;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{
    build_confidence_irlo, build_confidence_pirlo, build_confidence_pirlo_with, prune_corner_case_trajectories,
    BonusTable, EmpiricalModel,
};
use crate::instances::{
    behavioral_cloning_reward, covering_policy, derive_seed, lanechange_experts, lanechange_mdp,
    random_deterministic_policy, random_mdp, reward_panel, rng, uniform_reward, ConvergenceInstance,
};
use crate::mdp::{Dims, RewardFunction};
use crate::membership::{membership, Algo, Verdict, DEFAULT_TOL};
use crate::oracle::{brute_force_sub_super, feasible_membership, sub_super_membership, true_triple_support};
use crate::trajectory::{simulate, Dataset, Role};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyOracleConfig {
    pub instances: usize,
    pub rewards_per_instance: usize,
    pub max_states: usize,
    pub max_actions: usize,
    pub max_horizon: usize,
    pub seed: u64,
    /// Cap on the transition completions the brute force may enumerate.
    pub cap: u128,
    /// Uniform PIRLO bonus compared against exact IRLO, if any.
    pub injected_bonus: Option<f64>,
}

impl Default for VerifyOracleConfig {
    fn default() -> Self {
        VerifyOracleConfig {
            instances: 100,
            rewards_per_instance: 20,
            max_states: 4,
            max_actions: 3,
            max_horizon: 3,
            seed: 0,
            cap: crate::oracle::DEFAULT_CAP,
            injected_bonus: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VerifyOracleReport {
    pub instances: usize,
    pub queries: usize,
    /// IRLO on exact inputs vs the extreme-construction oracle.
    pub irlo_disagreements: usize,
    /// `in_sub ⇒ feasible ⇒ in_super` broken.
    pub squeeze_violations: usize,
    /// Queries where the completion enumeration ran and its result.
    pub brute_force_checked: usize,
    pub brute_force_disagreements: usize,
    /// Instances whose enumeration exceeded the cap.
    pub skipped_cap: usize,
    /// PIRLO with the injected bonus narrower than IRLO on either side.
    pub widening_violations: usize,
    /// PIRLO with the injected bonus giving a different verdict than IRLO.
    pub pirlo_strictly_wider: usize,
}

impl VerifyOracleReport {
    pub fn passed(&self) -> bool {
        self.irlo_disagreements == 0
            && self.squeeze_violations == 0
            && self.brute_force_disagreements == 0
            && self.widening_violations == 0
    }

    fn merge(mut self, o: Self) -> Self {
        self.instances += o.instances;
        self.queries += o.queries;
        self.irlo_disagreements += o.irlo_disagreements;
        self.squeeze_violations += o.squeeze_violations;
        self.brute_force_checked += o.brute_force_checked;
        self.brute_force_disagreements += o.brute_force_disagreements;
        self.skipped_cap += o.skipped_cap;
        self.widening_violations += o.widening_violations;
        self.pirlo_strictly_wider += o.pirlo_strictly_wider;
        self
    }
}

/// A random instance with a behavioral policy covering the expert.
pub fn random_instance(max: Dims, seed: u64) -> ConvergenceInstance {
    let mut g = rng(seed);
    let dims = Dims::new(g.gen_range(1..=max.states), g.gen_range(1..=max.actions), g.gen_range(1..=max.horizon))
        .expect("positive sizes");
    let support = if g.gen_bool(0.5) { Some(2.min(dims.states)) } else { None };
    let mdp = random_mdp(dims, derive_seed(seed, 1), support);
    let expert = random_deterministic_policy(dims, derive_seed(seed, 2));
    let mass = g.gen_range(0.2..0.9);
    let behavioral = covering_policy(&expert, mass, derive_seed(seed, 3));
    ConvergenceInstance { mdp, expert, behavioral }
}

fn verify_instance(cfg: &VerifyOracleConfig, i: usize) -> Result<VerifyOracleReport> {
    let seed = derive_seed(cfg.seed, i as u64);
    let max = Dims::new(cfg.max_states, cfg.max_actions, cfg.max_horizon)?;
    let inst = random_instance(max, seed);
    let (mdp, expert) = (&inst.mdp, &inst.expert);
    let zb = true_triple_support(mdp, &inst.behavioral)?;
    let em = EmpiricalModel::from_true_model(mdp, expert, &inst.behavioral)?;
    let irlo = build_confidence_irlo(&em);
    let pirlo = match cfg.injected_bonus {
        Some(b) => Some(build_confidence_pirlo_with(
            &em,
            BonusTable::zeros(em.dims()).with_uniform(&em.behavioral_support, b),
        )?),
        None => None,
    };
    let mut rep = VerifyOracleReport { instances: 1, ..Default::default() };
    let mut g = rng(derive_seed(seed, 4));
    let mut cap_hit = false;
    for _ in 0..cfg.rewards_per_instance {
        let r = uniform_reward(mdp.dims(), &mut g);
        rep.queries += 1;
        let (sub, sup) = sub_super_membership(mdp, expert, &zb, &r)?;
        let v = membership(&r, &irlo, Algo::Irlo, DEFAULT_TOL)?;
        if (v.in_cap, v.in_union) != (sub, sup) {
            rep.irlo_disagreements += 1;
        }
        let f = feasible_membership(mdp, expert, &r)?;
        if (sub && !f) || (f && !sup) {
            rep.squeeze_violations += 1;
        }
        if !cap_hit {
            match brute_force_sub_super(mdp, expert, &zb, &r, cfg.cap) {
                Ok(bf) => {
                    rep.brute_force_checked += 1;
                    if bf != (sub, sup) {
                        rep.brute_force_disagreements += 1;
                    }
                }
                Err(Error::EnumerationTooLarge(_)) => {
                    cap_hit = true;
                    rep.skipped_cap = 1;
                }
                Err(e) => return Err(e),
            }
        }
        if let Some(spec) = &pirlo {
            let w = membership(&r, spec, Algo::Pirlo, DEFAULT_TOL)?;
            if (w.in_cap && !v.in_cap) || (v.in_union && !w.in_union) {
                rep.widening_violations += 1;
            }
            if (w.in_cap, w.in_union) != (v.in_cap, v.in_union) {
                rep.pirlo_strictly_wider += 1;
            }
        }
    }
    Ok(rep)
}

/// Exact-input IRLO against the oracle on random small instances.
pub fn verify_oracle(cfg: &VerifyOracleConfig) -> Result<VerifyOracleReport> {
    (0..cfg.instances)
        .into_par_iter()
        .map(|i| verify_instance(cfg, i))
        .try_reduce(VerifyOracleReport::default, |a, b| Ok(a.merge(b)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceConfig {
    pub tau_grid: Vec<usize>,
    pub panel_size: usize,
    pub trials: usize,
    pub delta: f64,
    pub seed: u64,
    pub tol: f64,
}

/// One (trial, τ) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub tau_b: usize,
    pub tau_e: usize,
    pub queries: usize,
    /// IRLO with zero bonuses vs the oracle sub/super sets.
    pub irlo_disagreements: usize,
    /// PIRLO vs the oracle sub/super sets.
    pub pirlo_disagreements: usize,
    /// Some panel reward broke `R̂^∩ ⊆ ℛ ⊆ R̂^∪`.
    pub monotonicity_violation: bool,
    /// PIRLO could not be built because an expert action was never seen
    /// in the behavioral data.
    pub pirlo_skipped: bool,
    pub wall_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TauSummary {
    pub tau: usize,
    pub irlo_disagreement_rate: f64,
    pub pirlo_disagreement_rate: f64,
    pub violation_rate: f64,
    pub pirlo_skipped: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ConvergenceConfig,
    pub records: Vec<TrialRecord>,
    pub summary: Vec<TauSummary>,
}

impl ExperimentReport {
    pub fn summary_for(&self, tau: usize) -> Option<&TauSummary> {
        self.summary.iter().find(|s| s.tau == tau)
    }

    pub fn write_records_csv(&self, out: impl Write) -> Result<()> {
        write_csv(&self.records, out)
    }

    pub fn write_summary_csv(&self, out: impl Write) -> Result<()> {
        write_csv(&self.summary, out)
    }
}

fn write_csv<T: Serialize>(rows: &[T], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| Error::schema(None, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io("csv output", e))
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// `((in_sub, in_super), feasible)` of one panel reward.
type OracleVerdict = ((bool, bool), bool);
type Panel = (Vec<RewardFunction>, Vec<OracleVerdict>);

fn run_trial(
    inst: &ConvergenceInstance,
    cfg: &ConvergenceConfig,
    trial: usize,
    tau_idx: usize,
    panel: &[RewardFunction],
    oracle: &[OracleVerdict],
) -> Result<TrialRecord> {
    let start = Instant::now();
    let tau = cfg.tau_grid[tau_idx];
    let seed = derive_seed(derive_seed(cfg.seed, trial as u64), tau_idx as u64);
    let de = simulate(&inst.mdp, &inst.expert, tau, derive_seed(seed, 0), Role::Expert)?;
    let db = simulate(&inst.mdp, &inst.behavioral, tau, derive_seed(seed, 1), Role::Behavioral)?;
    let em = EmpiricalModel::estimate(inst.mdp.dims(), &de, &db)?;
    let irlo = build_confidence_irlo(&em);
    let pirlo = match build_confidence_pirlo(&em, cfg.delta) {
        Ok(p) => Some(p),
        Err(Error::ExpertTripleUncovered { .. }) => None,
        Err(e) => return Err(e),
    };
    let mut rec = TrialRecord {
        trial,
        tau_b: tau,
        tau_e: tau,
        queries: panel.len(),
        irlo_disagreements: 0,
        pirlo_disagreements: 0,
        monotonicity_violation: false,
        pirlo_skipped: pirlo.is_none(),
        wall_ms: 0.0,
    };
    for (r, &((sub, sup), feasible)) in panel.iter().zip(oracle) {
        let v = membership(r, &irlo, Algo::Irlo, cfg.tol)?;
        if (v.in_cap, v.in_union) != (sub, sup) {
            rec.irlo_disagreements += 1;
        }
        if let Some(spec) = &pirlo {
            let w = membership(r, spec, Algo::Pirlo, cfg.tol)?;
            if (w.in_cap, w.in_union) != (sub, sup) {
                rec.pirlo_disagreements += 1;
            }
            if (w.in_cap && !feasible) || (feasible && !w.in_union) {
                rec.monotonicity_violation = true;
            }
        }
    }
    rec.wall_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(rec)
}

/// Membership agreement with the true-model oracle as the dataset size
/// grows, plus the PIRLO inclusion-monotonicity violation frequency.
pub fn convergence(inst: &ConvergenceInstance, cfg: &ConvergenceConfig) -> Result<ExperimentReport> {
    if cfg.tau_grid.is_empty() || cfg.tau_grid.contains(&0) {
        return Err(Error::InvalidArgument("tau grid must be non-empty and positive".into()));
    }
    if cfg.trials == 0 || cfg.panel_size == 0 {
        return Err(Error::InvalidArgument("trials and panel size must be positive".into()));
    }
    let zb = true_triple_support(&inst.mdp, &inst.behavioral)?;
    let cells: Vec<(usize, usize)> =
        (0..cfg.trials).flat_map(|t| (0..cfg.tau_grid.len()).map(move |k| (t, k))).collect();
    let panels: Vec<Panel> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| {
            let panel = reward_panel(&inst.expert, cfg.panel_size, derive_seed(cfg.seed ^ 0x5eed, t as u64));
            let oracle = panel
                .iter()
                .map(|r| {
                    Ok((
                        sub_super_membership(&inst.mdp, &inst.expert, &zb, r)?,
                        feasible_membership(&inst.mdp, &inst.expert, r)?,
                    ))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((panel, oracle))
        })
        .collect::<Result<_>>()?;
    let records: Vec<TrialRecord> = cells
        .par_iter()
        .map(|&(t, k)| run_trial(inst, cfg, t, k, &panels[t].0, &panels[t].1))
        .collect::<Result<_>>()?;
    let summary = cfg
        .tau_grid
        .iter()
        .map(|&tau| {
            let rows: Vec<&TrialRecord> = records.iter().filter(|r| r.tau_b == tau).collect();
            let queries: usize = rows.iter().map(|r| r.queries).sum();
            let built: Vec<&&TrialRecord> = rows.iter().filter(|r| !r.pirlo_skipped).collect();
            let built_queries: usize = built.iter().map(|r| r.queries).sum();
            TauSummary {
                tau,
                irlo_disagreement_rate: ratio(rows.iter().map(|r| r.irlo_disagreements).sum(), queries),
                pirlo_disagreement_rate: ratio(built.iter().map(|r| r.pirlo_disagreements).sum(), built_queries),
                violation_rate: ratio(rows.iter().filter(|r| r.monotonicity_violation).count(), rows.len()),
                pirlo_skipped: rows.len() - built.len(),
            }
        })
        .collect();
    Ok(ExperimentReport { config: cfg.clone(), records, summary })
}

/// PIRLO verdicts for one synthetic lane-change expert.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemoRow {
    pub expert: usize,
    pub behavioral_trajectories: usize,
    pub bc: Verdict,
    pub negated: Verdict,
}

/// Lane-change pipeline: every expert contributes `tau` trajectories, the
/// behavioral data is their union (with corner cases pruned per expert),
/// and the behavioral-cloning reward and its negation are checked against
/// each expert's PIRLO sets.
pub fn lanechange_demo(horizon: usize, tau: usize, seed: u64, delta: f64, tol: f64) -> Result<Vec<DemoRow>> {
    let mdp = lanechange_mdp(horizon, seed);
    let dims = mdp.dims();
    let experts = lanechange_experts(dims);
    let data = experts
        .iter()
        .enumerate()
        .map(|(i, e)| simulate(&mdp, e, tau, derive_seed(seed, i as u64), Role::Expert))
        .collect::<Result<Vec<_>>>()?;
    let all = Dataset::merged(&data, Role::Behavioral);
    data.iter()
        .enumerate()
        .map(|(i, de)| {
            let db = prune_corner_case_trajectories(&all, de, dims)?;
            let em = EmpiricalModel::estimate(dims, de, &db)?;
            let spec = build_confidence_pirlo(&em, delta)?;
            let bc = behavioral_cloning_reward(dims, &em.expert_support, |h, s| em.expert_action(h, s));
            Ok(DemoRow {
                expert: i,
                behavioral_trajectories: db.len(),
                bc: membership(&bc, &spec, Algo::Pirlo, tol)?,
                negated: membership(&bc.scaled(-1.0), &spec, Algo::Pirlo, tol)?,
            })
        })
        .collect()
}
