//! Trajectory datasets: simulation, counting and (de)serialization.
//!
//! A trajectory holds exactly `H` `(state, action)` pairs. Trajectory `i` of a
//! simulated dataset is drawn from ChaCha stream `i` of the dataset seed, so
//! generation can run in parallel and still be reproducible.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{Dims, Mdp, Policy};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<(usize, usize)>,
}

impl Trajectory {
    pub fn validate(&self, dims: Dims) -> std::result::Result<(), String> {
        if self.steps.len() != dims.horizon {
            return Err(format!("trajectory has {} steps, expected {}", self.steps.len(), dims.horizon));
        }
        for (h, &(s, a)) in self.steps.iter().enumerate() {
            if s >= dims.states {
                return Err(format!("state {s} at step {} out of range", h + 1));
            }
            if a >= dims.actions {
                return Err(format!("action {a} at step {} out of range", h + 1));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Expert,
    Behavioral,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    pub trajectories: Vec<Trajectory>,
    pub role: Role,
    pub source_seed: Option<u64>,
}

impl Dataset {
    pub fn new(trajectories: Vec<Trajectory>, role: Role) -> Self {
        Dataset { trajectories, role, source_seed: None }
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    /// Concatenation of several datasets under one role.
    pub fn merged<'a>(parts: impl IntoIterator<Item = &'a Dataset>, role: Role) -> Self {
        let trajectories = parts.into_iter().flat_map(|d| d.trajectories.iter().cloned()).collect();
        Dataset::new(trajectories, role)
    }

    pub fn truncated(&self, n: usize) -> Self {
        Dataset {
            trajectories: self.trajectories[..n.min(self.len())].to_vec(),
            role: self.role,
            source_seed: self.source_seed,
        }
    }

    pub fn validate(&self, dims: Dims) -> Result<()> {
        for (i, t) in self.trajectories.iter().enumerate() {
            t.validate(dims).map_err(|m| Error::schema(Some(i + 1), m))?;
        }
        Ok(())
    }
}

pub(crate) fn sample_categorical(rng: &mut impl Rng, probs: impl IntoIterator<Item = f64>) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, p) in probs.into_iter().enumerate() {
        if p > 0.0 {
            last_positive = i;
        }
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding left u just above the cumulative sum
    last_positive
}

fn simulate_one(mdp: &Mdp, policy: &(impl Policy + ?Sized), rng: &mut ChaCha8Rng) -> Trajectory {
    let d = mdp.dims();
    let mut steps = Vec::with_capacity(d.horizon);
    let mut s = sample_categorical(rng, mdp.initial().iter().copied());
    for h in 0..d.horizon {
        let a = sample_categorical(rng, (0..d.actions).map(|a| policy.prob(h, s, a)));
        steps.push((s, a));
        if h + 1 < d.horizon {
            s = sample_categorical(rng, mdp.row(h, s, a).iter().copied());
        }
    }
    Trajectory { steps }
}

/// `n` independent trajectories of `policy` in `mdp`.
pub fn simulate<P: Policy + Sync + ?Sized>(mdp: &Mdp, policy: &P, n: usize, seed: u64, role: Role) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidArgument("number of trajectories must be positive".into()));
    }
    mdp.dims().ensure_eq(&policy.dims(), "mdp vs policy")?;
    let trajectories = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            simulate_one(mdp, policy, &mut rng)
        })
        .collect();
    Ok(Dataset { trajectories, role, source_seed: Some(seed) })
}

/// `N_h(s, a, s')` for `h < H` and `N_h(s, a)` for every stage.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountTable {
    dims: Dims,
    n3: Vec<u64>,
    n2: Vec<u64>,
    tau: u64,
}

impl CountTable {
    pub fn zeros(dims: Dims) -> Self {
        CountTable { dims, n3: vec![0; dims.sa_len() * dims.states], n2: vec![0; dims.sa_len()], tau: 0 }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    /// Number of trajectories folded in.
    pub fn tau(&self) -> u64 {
        self.tau
    }

    #[inline]
    pub fn n3(&self, h: usize, s: usize, a: usize, next: usize) -> u64 {
        self.n3[self.dims.sa(h, s, a) * self.dims.states + next]
    }

    #[inline]
    pub fn n2(&self, h: usize, s: usize, a: usize) -> u64 {
        self.n2[self.dims.sa(h, s, a)]
    }

    pub fn n3_row(&self, h: usize, s: usize, a: usize) -> &[u64] {
        let start = self.dims.sa(h, s, a) * self.dims.states;
        &self.n3[start..start + self.dims.states]
    }

    fn add_trajectory(&mut self, t: &Trajectory) {
        let d = self.dims;
        for (h, &(s, a)) in t.steps.iter().enumerate() {
            self.n2[d.sa(h, s, a)] += 1;
            if let Some(&(next, _)) = t.steps.get(h + 1) {
                self.n3[d.sa(h, s, a) * d.states + next] += 1;
            }
        }
        self.tau += 1;
    }

    fn merge(mut self, other: CountTable) -> CountTable {
        for (x, y) in self.n3.iter_mut().zip(other.n3) {
            *x += y;
        }
        for (x, y) in self.n2.iter_mut().zip(other.n2) {
            *x += y;
        }
        self.tau += other.tau;
        self
    }
}

pub fn counts(dataset: &Dataset, dims: Dims) -> Result<CountTable> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    dataset.validate(dims)?;
    Ok(dataset
        .trajectories
        .par_iter()
        .fold(
            || CountTable::zeros(dims),
            |mut acc, t| {
                acc.add_trajectory(t);
                acc
            },
        )
        .reduce(|| CountTable::zeros(dims), CountTable::merge))
}

#[derive(Serialize, Deserialize)]
struct Line {
    steps: Vec<(usize, usize)>,
}

/// Writes one `{"steps":[[s,a],...]}` object per line.
pub fn write_dataset(dataset: &Dataset, mut w: impl Write) -> Result<()> {
    for t in &dataset.trajectories {
        serde_json::to_writer(&mut w, &Line { steps: t.steps.clone() })?;
        w.write_all(b"\n").map_err(|e| Error::io("<dataset>", e))?;
    }
    w.flush().map_err(|e| Error::io("<dataset>", e))
}

pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_dataset(dataset, std::io::BufWriter::new(file))
}

pub fn parse_dataset(reader: impl BufRead, dims: Dims, role: Role) -> Result<Dataset> {
    let mut trajectories = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::schema(Some(i + 1), e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: Line = serde_json::from_str(&line).map_err(|e| Error::schema(Some(i + 1), e.to_string()))?;
        let t = Trajectory { steps: parsed.steps };
        t.validate(dims).map_err(|m| Error::schema(Some(i + 1), m))?;
        trajectories.push(t);
    }
    if trajectories.is_empty() {
        return Err(Error::schema(None, "dataset file contains no trajectories"));
    }
    Ok(Dataset::new(trajectories, role))
}

pub fn load_dataset(path: impl AsRef<Path>, dims: Dims, role: Role) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(BufReader::new(file), dims, role)
}

#[derive(Deserialize)]
struct CsvRow {
    episode_id: String,
    h: usize,
    s: usize,
    a: usize,
}

/// Reads `episode_id,h,s,a` rows (header required, `h` counted from 1).
/// Episodes keep the order of their first row; each must list every stage
/// exactly once.
pub fn read_csv_dataset(reader: impl std::io::Read, dims: Dims, role: Role) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut order: Vec<String> = Vec::new();
    let mut episodes: HashMap<String, Vec<Option<(usize, usize)>>> = HashMap::new();
    for (i, rec) in rdr.deserialize::<CsvRow>().enumerate() {
        // header is line 1
        let line = i + 2;
        let row = rec.map_err(|e| Error::schema(Some(line), e.to_string()))?;
        if row.h == 0 || row.h > dims.horizon {
            return Err(Error::schema(Some(line), format!("stage {} outside 1..={}", row.h, dims.horizon)));
        }
        let slots = episodes.entry(row.episode_id.clone()).or_insert_with(|| {
            order.push(row.episode_id.clone());
            vec![None; dims.horizon]
        });
        if slots[row.h - 1].replace((row.s, row.a)).is_some() {
            return Err(Error::schema(Some(line), format!("episode {} repeats stage {}", row.episode_id, row.h)));
        }
    }
    let mut trajectories = Vec::with_capacity(order.len());
    for id in &order {
        let slots = &episodes[id];
        let steps: Option<Vec<_>> = slots.iter().copied().collect();
        let steps = steps.ok_or_else(|| {
            let have = slots.iter().filter(|x| x.is_some()).count();
            Error::schema(None, format!("episode {id} has {have} steps, expected {}", dims.horizon))
        })?;
        let t = Trajectory { steps };
        t.validate(dims).map_err(|m| Error::schema(None, format!("episode {id}: {m}")))?;
        trajectories.push(t);
    }
    if trajectories.is_empty() {
        return Err(Error::schema(None, "csv contains no episodes"));
    }
    Ok(Dataset::new(trajectories, role))
}

pub fn ingest_csv(path: impl AsRef<Path>, dims: Dims, role: Role) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv_dataset(file, dims, role)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{visitation, DeterministicPolicy, StochasticPolicy};

    fn small_mdp() -> Mdp {
        let d = Dims::new(3, 2, 3).unwrap();
        let mut p = Vec::new();
        for h in 0..3 {
            for s in 0..3 {
                for a in 0..2 {
                    let x = ((h + 2 * s + 3 * a) % 5) as f64 + 1.0;
                    let row = [x, 2.0, 6.0 - x];
                    let tot: f64 = row.iter().sum();
                    p.extend(row.iter().map(|v| v / tot));
                }
            }
        }
        Mdp::new(d, vec![0.5, 0.25, 0.25], p).unwrap()
    }

    fn det_mdp() -> Mdp {
        let d = Dims::new(2, 2, 4).unwrap();
        let mut p = vec![0.0; d.sa_len() * 2];
        for h in 0..4 {
            for s in 0..2 {
                for a in 0..2 {
                    p[d.sa(h, s, a) * 2 + a] = 1.0;
                }
            }
        }
        Mdp::new(d, vec![1.0, 0.0], p).unwrap()
    }

    #[test]
    fn deterministic_system_gives_identical_trajectories() {
        let m = det_mdp();
        let pi = DeterministicPolicy::from_fn(m.dims(), |h, _| h % 2).unwrap();
        let ds = simulate(&m, &pi, 20, 3, Role::Expert).unwrap();
        assert!(ds.trajectories.iter().all(|t| t == &ds.trajectories[0]));
        assert_eq!(ds.trajectories[0].steps, vec![(0, 0), (0, 1), (1, 0), (0, 1)]);
    }

    #[test]
    fn same_seed_same_dataset() {
        let m = small_mdp();
        let pi = StochasticPolicy::uniform(m.dims());
        let a = simulate(&m, &pi, 200, 11, Role::Behavioral).unwrap();
        let b = simulate(&m, &pi, 200, 11, Role::Behavioral).unwrap();
        assert_eq!(a, b);
        let c = simulate(&m, &pi, 200, 12, Role::Behavioral).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn empirical_visitation_matches_exact() {
        let m = small_mdp();
        let d = m.dims();
        let pi =
            StochasticPolicy::new(d, (0..d.sa_len()).map(|i| if i % 2 == 0 { 0.3 } else { 0.7 }).collect()).unwrap();
        let n = 100_000;
        let ds = simulate(&m, &pi, n, 5, Role::Behavioral).unwrap();
        let c = counts(&ds, d).unwrap();
        let vis = visitation(&m, &pi).unwrap();
        let mut worst: f64 = 0.0;
        for h in 0..d.horizon {
            for s in 0..d.states {
                for a in 0..d.actions {
                    worst = worst.max((c.n2(h, s, a) as f64 / n as f64 - vis.rho(h, s, a)).abs());
                }
            }
        }
        assert!(worst < 0.01, "{worst}");
    }

    #[test]
    fn single_trajectory_counts() {
        let d = Dims::new(3, 2, 4).unwrap();
        let t = Trajectory { steps: vec![(0, 1), (2, 0), (2, 0), (1, 1)] };
        let c = counts(&Dataset::new(vec![t], Role::Behavioral), d).unwrap();
        let mut units = 0;
        for h in 0..4 {
            for s in 0..3 {
                for a in 0..2 {
                    for n in 0..3 {
                        let v = c.n3(h, s, a, n);
                        assert!(v <= 1);
                        units += v;
                    }
                }
            }
        }
        assert_eq!(units, 3);
        assert_eq!(c.n3(1, 2, 0, 2), 1);
        assert_eq!(c.n2(3, 1, 1), 1);
    }

    #[test]
    fn duplicated_dataset_doubles_counts() {
        let m = small_mdp();
        let ds = simulate(&m, &StochasticPolicy::uniform(m.dims()), 50, 1, Role::Behavioral).unwrap();
        let twice = Dataset::merged([&ds, &ds], Role::Behavioral);
        let (c1, c2) = (counts(&ds, m.dims()).unwrap(), counts(&twice, m.dims()).unwrap());
        assert_eq!(c2.tau(), 2 * c1.tau());
        let d = m.dims();
        for h in 0..d.horizon {
            for s in 0..d.states {
                for a in 0..d.actions {
                    assert_eq!(c2.n2(h, s, a), 2 * c1.n2(h, s, a));
                    for n in 0..d.states {
                        assert_eq!(c2.n3(h, s, a, n), 2 * c1.n3(h, s, a, n));
                    }
                }
            }
        }
    }

    #[test]
    fn counts_match_naive_scan() {
        let m = small_mdp();
        let d = m.dims();
        let ds = simulate(&m, &StochasticPolicy::uniform(d), 300, 9, Role::Behavioral).unwrap();
        let c = counts(&ds, d).unwrap();
        let mut naive: HashMap<(usize, usize, usize, usize), u64> = HashMap::new();
        for t in &ds.trajectories {
            for w in t.steps.windows(2).enumerate() {
                let (h, pair) = w;
                *naive.entry((h, pair[0].0, pair[0].1, pair[1].0)).or_default() += 1;
            }
        }
        for h in 0..d.horizon - 1 {
            let stage_total: u64 =
                (0..d.states).flat_map(|s| (0..d.actions).map(move |a| (s, a))).map(|(s, a)| c.n2(h, s, a)).sum();
            assert_eq!(stage_total, 300);
            for s in 0..d.states {
                for a in 0..d.actions {
                    let row_sum: u64 = c.n3_row(h, s, a).iter().sum();
                    assert_eq!(row_sum, c.n2(h, s, a));
                    for n in 0..d.states {
                        assert_eq!(c.n3(h, s, a, n), naive.get(&(h, s, a, n)).copied().unwrap_or(0));
                    }
                }
            }
        }
    }

    #[test]
    fn jsonl_round_trip() {
        let m = small_mdp();
        let ds = simulate(&m, &StochasticPolicy::uniform(m.dims()), 10, 2, Role::Expert).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        save_dataset(&ds, &path).unwrap();
        let back = load_dataset(&path, m.dims(), Role::Expert).unwrap();
        assert_eq!(back.trajectories, ds.trajectories);
    }

    #[test]
    fn empty_and_short_files_rejected() {
        let d = Dims::new(3, 2, 3).unwrap();
        assert!(matches!(parse_dataset("".as_bytes(), d, Role::Expert), Err(Error::Schema { .. })));
        let text = "{\"steps\":[[0,0],[1,1],[2,0]]}\n{\"steps\":[[0,0],[1,1]]}\n";
        match parse_dataset(text.as_bytes(), d, Role::Expert) {
            Err(Error::Schema { line: Some(2), .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        let bad_index = "{\"steps\":[[0,0],[3,1],[2,0]]}\n";
        assert!(matches!(
            parse_dataset(bad_index.as_bytes(), d, Role::Expert),
            Err(Error::Schema { line: Some(1), .. })
        ));
    }

    #[test]
    fn csv_ingestion() {
        let d = Dims::new(3, 2, 2).unwrap();
        let text = "episode_id,h,s,a\nx,2,1,1\nx,1,0,0\ny,1,2,1\ny,2,0,0\n";
        let ds = read_csv_dataset(text.as_bytes(), d, Role::Behavioral).unwrap();
        assert_eq!(ds.trajectories[0].steps, vec![(0, 0), (1, 1)]);
        assert_eq!(ds.trajectories[1].steps, vec![(2, 1), (0, 0)]);
        let short = "episode_id,h,s,a\nx,1,0,0\nx,2,1,1\ny,1,2,1\n";
        let err = read_csv_dataset(short.as_bytes(), d, Role::Behavioral).unwrap_err();
        assert!(err.to_string().contains("episode y"), "{err}");
    }
}
