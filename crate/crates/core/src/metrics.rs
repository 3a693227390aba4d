//! Semimetrics between rewards, Hausdorff distance over finite reward
//! panels and the value-gap index.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::mdp::{optimal_q_value, Mdp, RewardFunction, SupportSets, VisitationTable};

/// Tie tolerance when collecting the optimal actions of the recovered reward.
pub const ARGMAX_TOL: f64 = 1e-9;

/// `M(r, r̂) = max(‖r‖∞, ‖r̂‖∞)`.
pub fn normalizer(r1: &RewardFunction, r2: &RewardFunction) -> f64 {
    r1.sup_norm().max(r2.sup_norm())
}

fn same_dims(r1: &RewardFunction, r2: &RewardFunction) -> Result<()> {
    r1.dims().ensure_eq(&r2.dims(), "rewards")
}

/// Visitation-weighted distance: per stage, the expected absolute
/// difference under the behavioral visitation plus the largest difference
/// off the behavioral support.
pub fn dist_d(r1: &RewardFunction, r2: &RewardFunction, vis_b: &VisitationTable, zb: &SupportSets) -> Result<f64> {
    same_dims(r1, r2)?;
    let d = r1.dims();
    d.ensure_eq(&vis_b.dims(), "reward vs visitation")?;
    d.ensure_eq(&zb.state_action_support.dims(), "reward vs support")?;
    let m = normalizer(r1, r2);
    if m == 0.0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for h in 0..d.horizon {
        let mut expected = 0.0;
        let mut off = 0.0f64;
        for s in 0..d.states {
            for a in 0..d.actions {
                let diff = (r1.get(h, s, a) - r2.get(h, s, a)).abs();
                if zb.state_action_support.contains(h, s, a) {
                    expected += vis_b.rho(h, s, a) * diff;
                } else {
                    off = off.max(diff);
                }
            }
        }
        total += expected + off;
    }
    Ok(total / m)
}

/// `(1/M) Σ_h ‖r_h − r̂_h‖∞`.
pub fn dist_dinf(r1: &RewardFunction, r2: &RewardFunction) -> Result<f64> {
    same_dims(r1, r2)?;
    let d = r1.dims();
    let m = normalizer(r1, r2);
    if m == 0.0 {
        return Ok(0.0);
    }
    let total: f64 = (0..d.horizon)
        .map(|h| r1.stage(h).iter().zip(r2.stage(h)).fold(0.0f64, |acc, (x, y)| acc.max((x - y).abs())))
        .sum();
    Ok(total / m)
}

/// Inner distance used by [`hausdorff`].
#[derive(Clone, Copy, Debug)]
pub enum Metric<'a> {
    D { visitation: &'a VisitationTable, support: &'a SupportSets },
    DInf,
}

impl Metric<'_> {
    pub fn distance(&self, r1: &RewardFunction, r2: &RewardFunction) -> Result<f64> {
        match self {
            Metric::D { visitation, support } => dist_d(r1, r2, visitation, support),
            Metric::DInf => dist_dinf(r1, r2),
        }
    }
}

/// Hausdorff distance between two finite panels.
pub fn hausdorff(a: &[RewardFunction], b: &[RewardFunction], metric: Metric<'_>) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyPanel);
    }
    let mut table = vec![vec![0.0; b.len()]; a.len()];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            table[i][j] = metric.distance(x, y)?;
        }
    }
    let forward = table.iter().map(|row| row.iter().copied().fold(f64::INFINITY, f64::min)).fold(0.0, f64::max);
    let backward =
        (0..b.len()).map(|j| table.iter().map(|row| row[j]).fold(f64::INFINITY, f64::min)).fold(0.0, f64::max);
    Ok(forward.max(backward))
}

/// Largest loss, under `r_true`, of a policy that is optimal for `r_hat`,
/// measured at every `(stage, state)` and normalized by `M`.
pub fn dg_vstar(r_true: &RewardFunction, r_hat: &RewardFunction, mdp: &Mdp) -> Result<f64> {
    same_dims(r_true, r_hat)?;
    let d = mdp.dims();
    d.ensure_eq(&r_true.dims(), "mdp vs reward")?;
    let m = normalizer(r_true, r_hat);
    if m == 0.0 {
        return Ok(0.0);
    }
    let star = optimal_q_value(mdp, r_true, None)?;
    let hat = optimal_q_value(mdp, r_hat, None)?;
    let mut vmin_next = vec![0.0; d.states];
    let mut gap = 0.0f64;
    for h in (0..d.horizon).rev() {
        let mut vmin = vec![0.0; d.states];
        for (s, slot) in vmin.iter_mut().enumerate() {
            let best_hat = hat.v(h, s);
            let mut worst = f64::INFINITY;
            for a in 0..d.actions {
                if hat.q(h, s, a) < best_hat - ARGMAX_TOL {
                    continue;
                }
                let cont: f64 = if h + 1 < d.horizon {
                    mdp.row(h, s, a).iter().zip(&vmin_next).map(|(p, v)| p * v).sum()
                } else {
                    0.0
                };
                worst = worst.min(r_true.get(h, s, a) + cont);
            }
            *slot = worst;
            gap = gap.max(star.v(h, s) - worst);
        }
        vmin_next = vmin;
    }
    Ok(gap / m)
}

fn vec_norm(x: &[f64], y: &[f64]) -> f64 {
    x.iter().chain(y).fold(0.0f64, |m, v| m.max(v.abs()))
}

/// `d` on plain vectors with weights `q`.
pub fn vec_dist_d(x: &[f64], y: &[f64], q: &[f64]) -> f64 {
    let m = vec_norm(x, y);
    if m == 0.0 {
        return 0.0;
    }
    x.iter().zip(y).zip(q).map(|((a, b), w)| w * (a - b).abs()).sum::<f64>() / m
}

/// `d∞` on plain vectors.
pub fn vec_dist_dinf(x: &[f64], y: &[f64]) -> f64 {
    let m = vec_norm(x, y);
    if m == 0.0 {
        return 0.0;
    }
    x.iter().zip(y).fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs())) / m
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DistanceRow {
    pub pair_id: String,
    pub d: f64,
    pub dinf: f64,
    pub dg: f64,
}

pub fn write_distance_csv(rows: &[DistanceRow], out: impl std::io::Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}
