use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

/// Runs the binary in `dir`; `args` is split on whitespace.
fn run(dir: &Path, args: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_feasible-irl"))
        .current_dir(dir)
        .args(args.split_whitespace())
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &str) -> String {
    let o = run(dir, args);
    assert!(o.status.success(), "{args} failed: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn json(dir: &Path, args: &str) -> Value {
    serde_json::from_str(&ok(dir, args)).unwrap()
}

fn verdicts(text: &str) -> Vec<(String, bool, bool)> {
    text.lines()
        .map(|l| {
            let v: Value = serde_json::from_str(l).unwrap();
            let id = v["reward_id"].as_str().unwrap().to_string();
            (id, v["in_union"].as_bool().unwrap(), v["in_cap"].as_bool().unwrap())
        })
        .collect()
}

fn lanechange_model(dir: &TempDir, expert: usize) -> PathBuf {
    let d = dir.path();
    ok(d, "gen-mdp --structure lanechange --horizon 6 --seed 2 --out m.json");
    let mut all = String::new();
    for i in 0..3 {
        ok(d, &format!("gen-policy --mdp m.json --kind lanechange --index {i} --out e{i}.json"));
        ok(d, &format!("simulate --mdp m.json --policy e{i}.json --n 300 --seed {} --out d{i}.jsonl", 20 + i));
        all += &std::fs::read_to_string(d.join(format!("d{i}.jsonl"))).unwrap();
    }
    std::fs::write(d.join("b.jsonl"), all).unwrap();
    ok(
        d,
        &format!(
            "estimate --mdp m.json --expert-data d{expert}.jsonl --behavioral-data b.jsonl --prune --out model{expert}.json"
        ),
    );
    d.join(format!("model{expert}.json"))
}

#[test]
fn cloning_reward_pipeline() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    for expert in 0..3 {
        let model = lanechange_model(&dir, expert);
        let model = model.display();
        ok(d, &format!("bc-reward --model {model} --out bc.json"));
        ok(d, &format!("bc-reward --model {model} --negate --out neg.json"));
        let v = verdicts(&ok(d, &format!("check --model {model} --reward bc.json --reward neg.json")));
        assert_eq!(v, vec![("bc".into(), true, true), ("neg".into(), false, false)], "expert {expert}");
        let s = ok(d, &format!("sanity --model {model} --reward bc.json --reward neg.json"));
        assert!(s.contains("feasible_whp") && s.contains("infeasible_whp"));
    }
}

#[test]
fn malformed_reward_exits_with_input_error() {
    let dir = TempDir::new().unwrap();
    let model = lanechange_model(&dir, 0);
    std::fs::write(dir.path().join("bad.json"), "{\"r\": [[1, 2]]}").unwrap();
    let o = run(dir.path(), &format!("check --model {} --reward bad.json", model.display()));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bad.json"));
    std::fs::write(dir.path().join("small.json"), "{\"r\": [[[0.0]]]}").unwrap();
    let o = run(dir.path(), &format!("check --model {} --reward small.json", model.display()));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bad_flags_exit_two() {
    let dir = TempDir::new().unwrap();
    for args in ["gen-mdp --delta 1.5", "gen-mdp --states 0", "no-such-command"] {
        assert_eq!(run(dir.path(), args).status.code(), Some(2), "{args}");
    }
}

#[test]
fn gen_mdp_is_deterministic_and_valid() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let a = ok(d, "gen-mdp --states 3 --actions 2 --horizon 2 --seed 5");
    assert_eq!(a, ok(d, "gen-mdp --states 3 --actions 2 --horizon 2 --seed 5"));
    assert_ne!(a, ok(d, "gen-mdp --states 3 --actions 2 --horizon 2 --seed 6"));
    let v: Value = serde_json::from_str(&a).unwrap();
    for stage in v["p"].as_array().unwrap() {
        for state in stage.as_array().unwrap() {
            for row in state.as_array().unwrap() {
                let sum: f64 = row.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).sum();
                assert!((sum - 1.0).abs() < 1e-9);
            }
        }
    }
    let lane = json(d, "gen-mdp --structure lanechange --horizon 4");
    assert_eq!((lane["S"].as_u64(), lane["A"].as_u64(), lane["H"].as_u64()), (Some(16), Some(3), Some(4)));
}

#[test]
fn verify_oracle_passes_and_reports_widening() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let rep = json(d, "verify-oracle --instances 10 --rewards 5");
    assert_eq!(rep["irlo_disagreements"], 0);
    assert_eq!(rep["queries"], 50);
    let wide = json(d, "verify-oracle --instances 10 --rewards 10 --seed 5 --injected-bonus 10");
    assert!(wide["pirlo_strictly_wider"].as_u64().unwrap() > 0);
    let capped = json(d, "verify-oracle --instances 10 --rewards 2 --cap 1");
    assert!(capped["skipped_cap"].as_u64().unwrap() > 0);
}

#[test]
fn convergence_writes_report_and_csv() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(d, "gen-mdp --states 3 --actions 2 --horizon 2 --seed 1 --out m.json");
    ok(d, "gen-policy --mdp m.json --seed 2 --out e.json");
    ok(d, "gen-policy --mdp m.json --kind epsilon --expert e.json --eps 0.5 --out b.json");
    ok(
        d,
        "convergence --mdp m.json --expert e.json --behavioral b.json --tau 50,500 --panel 5 --trials 3 \
         --summary-csv s.csv --records-csv r.csv --out rep.json",
    );
    let rep: Value = serde_json::from_str(&std::fs::read_to_string(d.join("rep.json")).unwrap()).unwrap();
    assert_eq!(rep["records"].as_array().unwrap().len(), 6);
    let summary = std::fs::read_to_string(d.join("s.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);
    assert!(std::fs::read_to_string(d.join("r.csv")).unwrap().starts_with("trial,tau_b,tau_e"));
}

#[test]
fn csv_ingestion_and_distances() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(d, "gen-mdp --states 2 --actions 2 --horizon 2 --out m.json");
    std::fs::write(d.join("t.csv"), "episode_id,h,s,a\nx,1,0,1\nx,2,1,0\ny,1,1,1\ny,2,0,0\n").unwrap();
    let data = ok(d, "ingest-csv --mdp m.json --input t.csv");
    assert_eq!(data, "{\"steps\":[[0,1],[1,0]]}\n{\"steps\":[[1,1],[0,0]]}\n");
    std::fs::write(d.join("a.json"), "{\"r\": [[[1,0],[0,0]],[[0,0],[0,0]]]}").unwrap();
    std::fs::write(d.join("b.json"), "{\"r\": [[[-1,0],[0,0]],[[0,0],[0,0]]]}").unwrap();
    ok(d, "gen-policy --mdp m.json --kind uniform --out u.json");
    let csv = ok(d, "distance --mdp m.json --behavioral u.json --reward a.json --reward b.json");
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("pair_id,d,dinf,dg"));
    assert!(lines.next().unwrap().starts_with("a-b,"));
}

#[test]
fn nondeterministic_expert_is_an_input_error() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(d, "gen-mdp --states 2 --actions 2 --horizon 2 --out m.json");
    ok(d, "gen-policy --mdp m.json --kind uniform --out u.json");
    ok(d, "simulate --mdp m.json --policy u.json --n 200 --out u.jsonl");
    let o = run(d, "estimate --mdp m.json --expert-data u.jsonl --behavioral-data u.jsonl");
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("determin"));
}
