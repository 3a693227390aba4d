use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use feasible_irl::estimation::{
    build_confidence_irlo, build_confidence_pirlo, prune_corner_case_trajectories, EmpiricalModel,
};
use feasible_irl::experiment::{convergence, lanechange_demo, verify_oracle, ConvergenceConfig, VerifyOracleConfig};
use feasible_irl::instances::{
    behavioral_cloning_reward, chain_mdp, epsilon_expert, lanechange_experts, lanechange_mdp,
    random_deterministic_policy, random_mdp, ConvergenceInstance,
};
use feasible_irl::mdp::{supports, visitation, AnyPolicy, Dims, Mdp, RewardFunction, StochasticPolicy};
use feasible_irl::membership::{membership, Algo, VerdictRecord};
use feasible_irl::metrics::{dg_vstar, dist_d, dist_dinf, write_distance_csv, DistanceRow};
use feasible_irl::trajectory::{ingest_csv, load_dataset, simulate, write_dataset, Role};

#[derive(Parser)]
#[command(name = "feasible-irl", version, about = "Feasible reward sets for offline inverse RL on tabular MDPs")]
struct Cli {
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Confidence level of the PIRLO bonuses.
    #[arg(long, global = true, default_value_t = 0.1)]
    delta: f64,
    #[arg(long, global = true, default_value_t = 1e-9)]
    tol: f64,
    #[arg(long, global = true, value_enum, default_value_t = AlgoArg::Pirlo)]
    algo: AlgoArg,
    /// Output file; stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgoArg {
    Irlo,
    Pirlo,
}

impl From<AlgoArg> for Algo {
    fn from(a: AlgoArg) -> Algo {
        match a {
            AlgoArg::Irlo => Algo::Irlo,
            AlgoArg::Pirlo => Algo::Pirlo,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Structure {
    Random,
    Chain,
    Lanechange,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyKind {
    /// Random deterministic policy.
    Random,
    /// Uniform over actions.
    Uniform,
    /// Mixes `--expert` with uniform play.
    Epsilon,
    /// One of the lane-change experts (`--index`).
    Lanechange,
}

#[derive(Clone, Copy, ValueEnum)]
enum RoleArg {
    Expert,
    Behavioral,
}

impl From<RoleArg> for Role {
    fn from(r: RoleArg) -> Role {
        match r {
            RoleArg::Expert => Role::Expert,
            RoleArg::Behavioral => Role::Behavioral,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate an MDP.
    GenMdp {
        #[arg(long, default_value_t = 4)]
        states: usize,
        #[arg(long, default_value_t = 2)]
        actions: usize,
        #[arg(long, default_value_t = 3)]
        horizon: usize,
        #[arg(long, value_enum, default_value_t = Structure::Random)]
        structure: Structure,
        /// Next-state support size of random rows.
        #[arg(long)]
        support: Option<usize>,
        /// Slip probability of the chain.
        #[arg(long, default_value_t = 0.1)]
        slip: f64,
    },
    /// Generate a policy for an MDP.
    GenPolicy {
        #[arg(long)]
        mdp: PathBuf,
        #[arg(long, value_enum, default_value_t = PolicyKind::Random)]
        kind: PolicyKind,
        #[arg(long)]
        expert: Option<PathBuf>,
        #[arg(long, default_value_t = 0.3)]
        eps: f64,
        #[arg(long, default_value_t = 0)]
        index: usize,
    },
    /// Roll out a policy and write a JSONL dataset.
    Simulate {
        #[arg(long)]
        mdp: PathBuf,
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        n: usize,
    },
    /// Convert an `episode_id,h,s,a` CSV into a JSONL dataset.
    IngestCsv {
        #[arg(long)]
        mdp: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = RoleArg::Behavioral)]
        role: RoleArg,
    },
    /// Estimate supports, expert policy and transitions from two datasets.
    Estimate {
        #[arg(long)]
        mdp: PathBuf,
        #[arg(long)]
        expert_data: PathBuf,
        #[arg(long)]
        behavioral_data: PathBuf,
        /// Drop behavioral trajectories whose expert transitions leave the expert's support.
        #[arg(long)]
        prune: bool,
    },
    /// Behavioral-cloning reward of an estimated model.
    BcReward {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        negate: bool,
    },
    /// Membership of rewards in the estimated sub and super sets.
    Check {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "reward", required = true)]
        rewards: Vec<PathBuf>,
    },
    /// Three-way PIRLO classification of rewards.
    Sanity {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "reward", required = true)]
        rewards: Vec<PathBuf>,
    },
    /// Pairwise reward distances as CSV.
    Distance {
        #[arg(long)]
        mdp: PathBuf,
        #[arg(long)]
        behavioral: PathBuf,
        #[arg(long = "reward", required = true)]
        rewards: Vec<PathBuf>,
    },
    /// Exact-input IRLO against the oracle on random instances.
    VerifyOracle {
        #[arg(long, default_value_t = 100)]
        instances: usize,
        #[arg(long, default_value_t = 20)]
        rewards: usize,
        #[arg(long, default_value_t = 4)]
        max_states: usize,
        #[arg(long, default_value_t = 3)]
        max_actions: usize,
        #[arg(long, default_value_t = 3)]
        max_horizon: usize,
        #[arg(long, default_value_t = 100_000)]
        cap: u128,
        /// Uniform PIRLO bonus compared against IRLO.
        #[arg(long)]
        injected_bonus: Option<f64>,
    },
    /// Membership agreement with the true sets as the data grows.
    Convergence {
        #[arg(long)]
        mdp: PathBuf,
        #[arg(long)]
        expert: PathBuf,
        #[arg(long)]
        behavioral: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = [100, 1000, 10000])]
        tau: Vec<usize>,
        #[arg(long, default_value_t = 50)]
        panel: usize,
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long)]
        summary_csv: Option<PathBuf>,
        #[arg(long)]
        records_csv: Option<PathBuf>,
    },
    /// Cloning reward and its negation against three synthetic lane-change experts.
    Demo {
        #[arg(long, default_value_t = 8)]
        horizon: usize,
        #[arg(long, default_value_t = 400)]
        tau: usize,
    },
}

enum Status {
    Ok,
    Failed,
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut o = std::io::stdout().lock();
            o.write_all(text.as_bytes())?;
            o.flush()?;
            Ok(())
        }
    }
}

fn json<T: serde::Serialize>(v: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

fn reward_id(p: &Path) -> String {
    p.file_stem().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned())
}

fn load_rewards(paths: &[PathBuf]) -> Result<Vec<(String, RewardFunction)>> {
    paths
        .iter()
        .map(|p| {
            Ok((reward_id(p), RewardFunction::load(p).with_context(|| format!("reading reward {}", p.display()))?))
        })
        .collect()
}

fn verdict_lines(
    em: &EmpiricalModel,
    rewards: &[(String, RewardFunction)],
    algo: Algo,
    delta: f64,
    tol: f64,
) -> Result<String> {
    let irlo;
    let pirlo;
    let spec = match algo {
        Algo::Irlo => {
            irlo = build_confidence_irlo(em);
            &irlo
        }
        Algo::Pirlo => {
            pirlo = build_confidence_pirlo(em, delta)?;
            &pirlo
        }
    };
    let mut text = String::new();
    for (id, r) in rewards {
        let v = membership(r, spec, algo, tol)?;
        text += &serde_json::to_string(&VerdictRecord::new(id.clone(), &v))?;
        text.push('\n');
    }
    Ok(text)
}

fn run(cli: Cli) -> Result<Status> {
    if !(cli.delta > 0.0 && cli.delta < 1.0) {
        bail!("--delta must lie in (0,1), got {}", cli.delta);
    }
    if cli.tol.is_nan() || cli.tol <= 0.0 {
        bail!("--tol must be positive, got {}", cli.tol);
    }
    let out = &cli.out;
    match cli.command {
        Command::GenMdp { states, actions, horizon, structure, support, slip } => {
            let mdp = match structure {
                Structure::Lanechange => lanechange_mdp(horizon, cli.seed),
                Structure::Random => {
                    let dims = Dims::new(states, actions, horizon)?;
                    if support.is_some_and(|k| k == 0 || k > states) {
                        bail!("--support must lie in 1..={states}");
                    }
                    random_mdp(dims, cli.seed, support)
                }
                Structure::Chain => {
                    if !(0.0..=1.0).contains(&slip) {
                        bail!("--slip must lie in [0,1]");
                    }
                    chain_mdp(Dims::new(states, actions, horizon)?, slip)
                }
            };
            emit(out, &(mdp.to_json_string() + "\n"))?;
        }
        Command::GenPolicy { mdp, kind, expert, eps, index } => {
            let dims = Mdp::load(&mdp)?.dims();
            let policy = match kind {
                PolicyKind::Random => AnyPolicy::Deterministic(random_deterministic_policy(dims, cli.seed)),
                PolicyKind::Uniform => AnyPolicy::Stochastic(StochasticPolicy::uniform(dims)),
                PolicyKind::Epsilon => {
                    let path = expert.context("--kind epsilon needs --expert")?;
                    let e = AnyPolicy::load(dims, &path)?;
                    let e = e.as_deterministic().context("the expert policy must be deterministic")?;
                    if !(0.0..=1.0).contains(&eps) {
                        bail!("--eps must lie in [0,1]");
                    }
                    AnyPolicy::Stochastic(epsilon_expert(e, eps))
                }
                PolicyKind::Lanechange => {
                    let mut experts = lanechange_experts(dims);
                    if index >= experts.len() {
                        bail!("--index must be below {}", experts.len());
                    }
                    AnyPolicy::Deterministic(experts.swap_remove(index))
                }
            };
            emit(out, &json(&policy.to_file_repr())?)?;
        }
        Command::Simulate { mdp, policy, n } => {
            let mdp = Mdp::load(&mdp)?;
            let pi = AnyPolicy::load(mdp.dims(), &policy)?;
            let role = if pi.as_deterministic().is_some() { Role::Expert } else { Role::Behavioral };
            let data = simulate(&mdp, &pi, n, cli.seed, role)?;
            let mut buf = Vec::new();
            write_dataset(&data, &mut buf)?;
            emit(out, std::str::from_utf8(&buf)?)?;
        }
        Command::IngestCsv { mdp, input, role } => {
            let dims = Mdp::load(&mdp)?.dims();
            let data = ingest_csv(&input, dims, role.into())?;
            let mut buf = Vec::new();
            write_dataset(&data, &mut buf)?;
            emit(out, std::str::from_utf8(&buf)?)?;
        }
        Command::Estimate { mdp, expert_data, behavioral_data, prune } => {
            let dims = Mdp::load(&mdp)?.dims();
            let de = load_dataset(&expert_data, dims, Role::Expert)?;
            let mut db = load_dataset(&behavioral_data, dims, Role::Behavioral)?;
            if prune {
                db = prune_corner_case_trajectories(&db, &de, dims)?;
            }
            let em = EmpiricalModel::estimate(dims, &de, &db)?;
            emit(out, &json(&em.to_file_repr())?)?;
        }
        Command::BcReward { model, negate } => {
            let em = EmpiricalModel::load(&model)?;
            let r = behavioral_cloning_reward(em.dims(), &em.expert_support, |h, s| em.expert_action(h, s));
            let r = if negate { r.scaled(-1.0) } else { r };
            emit(out, &json(&r.to_file_repr())?)?;
        }
        Command::Check { model, rewards } => {
            let em = EmpiricalModel::load(&model)?;
            let rewards = load_rewards(&rewards)?;
            emit(out, &verdict_lines(&em, &rewards, cli.algo.into(), cli.delta, cli.tol)?)?;
        }
        Command::Sanity { model, rewards } => {
            let em = EmpiricalModel::load(&model)?;
            let rewards = load_rewards(&rewards)?;
            emit(out, &verdict_lines(&em, &rewards, Algo::Pirlo, cli.delta, cli.tol)?)?;
        }
        Command::Distance { mdp, behavioral, rewards } => {
            let mdp = Mdp::load(&mdp)?;
            let pib = AnyPolicy::load(mdp.dims(), &behavioral)?;
            let vis = visitation(&mdp, &pib)?;
            let sup = supports(&vis);
            if rewards.len() < 2 {
                bail!("distance needs at least two --reward files");
            }
            let rewards = load_rewards(&rewards)?;
            let mut rows = Vec::new();
            for (i, (a, ra)) in rewards.iter().enumerate() {
                for (b, rb) in &rewards[i + 1..] {
                    rows.push(DistanceRow {
                        pair_id: format!("{a}-{b}"),
                        d: dist_d(ra, rb, &vis, &sup)?,
                        dinf: dist_dinf(ra, rb)?,
                        dg: dg_vstar(ra, rb, &mdp)?,
                    });
                }
            }
            let mut buf = Vec::new();
            write_distance_csv(&rows, &mut buf)?;
            emit(out, std::str::from_utf8(&buf)?)?;
        }
        Command::VerifyOracle { instances, rewards, max_states, max_actions, max_horizon, cap, injected_bonus } => {
            let cfg = VerifyOracleConfig {
                instances,
                rewards_per_instance: rewards,
                max_states,
                max_actions,
                max_horizon,
                seed: cli.seed,
                cap,
                injected_bonus,
            };
            let rep = verify_oracle(&cfg)?;
            emit(out, &json(&rep)?)?;
            if !rep.passed() {
                eprintln!("verify-oracle: disagreements found");
                return Ok(Status::Failed);
            }
        }
        Command::Convergence { mdp, expert, behavioral, tau, panel, trials, summary_csv, records_csv } => {
            let mdp = Mdp::load(&mdp)?;
            let dims = mdp.dims();
            let expert = AnyPolicy::load(dims, &expert)?
                .as_deterministic()
                .cloned()
                .context("the expert policy must be deterministic")?;
            let behavioral = match AnyPolicy::load(dims, &behavioral)? {
                AnyPolicy::Stochastic(p) => p,
                AnyPolicy::Deterministic(p) => p.to_stochastic(),
            };
            let inst = ConvergenceInstance { mdp, expert, behavioral };
            let cfg = ConvergenceConfig {
                tau_grid: tau,
                panel_size: panel,
                trials,
                delta: cli.delta,
                seed: cli.seed,
                tol: cli.tol,
            };
            let rep = convergence(&inst, &cfg)?;
            if let Some(p) = summary_csv {
                let f = std::fs::File::create(&p).with_context(|| format!("creating {}", p.display()))?;
                rep.write_summary_csv(f)?;
            }
            if let Some(p) = records_csv {
                let f = std::fs::File::create(&p).with_context(|| format!("creating {}", p.display()))?;
                rep.write_records_csv(f)?;
            }
            emit(out, &json(&rep)?)?;
        }
        Command::Demo { horizon, tau } => {
            if horizon == 0 || tau == 0 {
                bail!("--horizon and --tau must be positive");
            }
            let rows = lanechange_demo(horizon, tau, cli.seed, cli.delta, cli.tol)?;
            emit(out, &json(&rows)?)?;
        }
    }
    Ok(Status::Ok)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::Failed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
