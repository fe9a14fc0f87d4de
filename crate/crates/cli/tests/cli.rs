use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use latnas::evaluator::SyntheticBenchmark;
use latnas::space::{enumerate, Architecture};
use latnas::supernet::{Strategy, TrainSettings, Trainer};
use tempfile::TempDir;

const TOY: &str = r#"{"M":6,"N":1,"input_h":4,"input_w":2,"target_h":1,"target_w":1,"base_channels":8,"has_stem":false,"ops":["MB3E1","MB5E6"]}"#;
const TOY8: &str = r#"{"M":8,"N":1,"input_h":4,"input_w":2,"target_h":1,"target_w":1,"base_channels":8,"has_stem":false,"ops":["MB3E1","MB5E6"]}"#;
const ECHO: &str = r#"external:while read l; do echo '{"ok":true,"value":0.5}'; done"#;

fn latnas(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_latnas")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let p = dir.path().join(name);
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn field<'a>(out: &'a str, key: &str) -> &'a str {
    out.lines().find_map(|l| l.strip_prefix(key)).map(str::trim).unwrap_or_else(|| panic!("no {key} in {out}"))
}

fn train_toy(dir: &TempDir, name: &str, seed: u64, extra: &[&str]) -> PathBuf {
    let iters = if extra.contains(&"--iters") { vec![] } else { vec!["--iters", "2000"] };
    let cfg = write(dir, "toy.json", TOY);
    let out = dir.path().join(name);
    let seed = seed.to_string();
    let mut args = vec!["train", "--config", s(&cfg), "--blocks", "3", "--seed", &seed, "--out", s(&out)];
    args.extend(iters);
    args.extend_from_slice(extra);
    let o = latnas(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    out.join("checkpoint.json")
}

#[test]
fn count_default_space() {
    let start = Instant::now();
    let o = latnas(&["count"]);
    assert!(start.elapsed().as_secs_f64() < 1.0);
    assert!(o.status.success());
    let out = stdout(&o);
    assert_eq!(field(&out, "paths"), "155040");
    assert!(field(&out, "spatial").starts_with("1.7e17"));
    assert_eq!(field(&out, "sequential"), "65536");
    assert!(field(&out, "total").starts_with("1.1e22"));
}

#[test]
fn count_single_layer_space() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "m1.json", r#"{"M":1,"N":2,"input_h":2,"input_w":2,"target_h":1,"target_w":1,"base_channels":8,"has_stem":false}"#);
    let run = dir.path().join("run");
    let o = latnas(&["count", "--config", s(&cfg), "--out", s(&run)]);
    let out = stdout(&o);
    assert_eq!(field(&out, "paths"), "1");
    assert!(field(&out, "spatial").starts_with("4 "));
    assert_eq!(field(&out, "sequential"), "256");
    assert!(field(&out, "total").ends_with("(1024)"));
    let counts: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("count.json")).unwrap()).unwrap();
    assert_eq!(counts["total"], "1024");
    assert!(run.join("manifest.json").exists());
}

#[test]
fn config_errors_exit_2() {
    let dir = TempDir::new().unwrap();
    let bad = write(&dir, "bad.json", "{not json");
    assert_eq!(latnas(&["count", "--config", s(&bad)]).status.code(), Some(2));
    let wrong = write(&dir, "wrong.json", r#"{"M":2,"N":0,"input_h":32,"input_w":4,"target_h":1,"target_w":1,"base_channels":8,"has_stem":false}"#);
    assert_eq!(latnas(&["count", "--config", s(&wrong)]).status.code(), Some(2));
    assert_eq!(latnas(&["count", "--config", "missing.json"]).status.code(), Some(2));
    assert_eq!(latnas(&["count", "--bogus"]).status.code(), Some(2));
}

#[test]
fn indivisible_block_count_lists_options() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "toy.json", TOY);
    let o = latnas(&["train", "--config", s(&cfg), "--blocks", "5", "--out", s(&dir.path().join("r"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("[2, 3, 4, 7]"), "{}", stderr(&o));
}

#[test]
fn train_writes_loadable_trained_checkpoint() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "toy8.json", TOY8);
    let out = dir.path().join("r");
    let o = latnas(&["train", "--config", s(&cfg), "--blocks", "5", "--iters", "50", "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let t = Trainer::from_checkpoint_json(&fs::read_to_string(out.join("checkpoint.json")).unwrap()).unwrap();
    assert!(t.progress().done);
    assert_eq!(t.store().blocks.len(), 5);
    assert!(t.store().blocks.iter().all(|b| b.trained));
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "train");
    assert_eq!(manifest["seeds"], serde_json::json!([0]));
    assert_eq!(manifest["outputs"][0]["path"], "checkpoint.json");
    assert_eq!(manifest["outputs"][0]["sha256"].as_str().unwrap().len(), 64);
    assert_eq!(manifest["exit_code"], 0);
}

#[test]
fn training_is_seed_deterministic() {
    let dir = TempDir::new().unwrap();
    let a = fs::read(train_toy(&dir, "a", 1, &[])).unwrap();
    let b = fs::read(train_toy(&dir, "b", 1, &[])).unwrap();
    let c = fs::read(train_toy(&dir, "c", 2, &[])).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn best_path_checkpoint_has_lookup_tables() {
    let dir = TempDir::new().unwrap();
    let ck = train_toy(&dir, "bp", 0, &["--strategy", "best_path"]);
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(ck).unwrap()).unwrap();
    let blocks = v["blocks"].as_array().unwrap();
    assert!(!blocks[0]["lookup"].as_array().unwrap().is_empty());
    assert!(!blocks[1]["lookup"].as_array().unwrap().is_empty());
    assert!(blocks[2]["lookup"].as_array().is_none_or(|l| l.is_empty()));
}

#[test]
fn resume_matches_an_uninterrupted_run() {
    let dir = TempDir::new().unwrap();
    let full = fs::read_to_string(train_toy(&dir, "full", 4, &[])).unwrap();
    let cfg: latnas::space::SpaceConfig = latnas::space::SpaceConfig::from_json(TOY).unwrap();
    let settings = TrainSettings { strategy: Strategy::RandomPath, blocks: 3, iters: 2000, ..Default::default() };
    let bench = SyntheticBenchmark::new(4);
    let mut t = Trainer::new(&cfg, settings, latnas::evaluator::Aggregation::Logistic, latnas::derive_rng(4, 1)).unwrap();
    t.run(&bench, Some(2500)).unwrap();
    let partial = write(&dir, "partial.json", &t.checkpoint_json());
    let resumed = train_toy(&dir, "resumed", 4, &["--resume", s(&partial), "--checkpoint-every", "700"]);
    assert_eq!(fs::read_to_string(resumed).unwrap(), full);
}

fn optimum(ck: &Path) -> String {
    let store = Trainer::from_checkpoint_json(&fs::read_to_string(ck).unwrap()).unwrap().into_store();
    let mut best: Option<(Architecture, f64)> = None;
    for a in enumerate(&store.config, 1 << 16).unwrap() {
        let v = store.oneshot_eval(&a).unwrap();
        if best.as_ref().is_none_or(|b| v > b.1) {
            best = Some((a, v));
        }
    }
    best.unwrap().0.encode()
}

#[test]
fn ngd_search_prints_the_enumeration_optimum() {
    let dir = TempDir::new().unwrap();
    let mut hits = 0;
    for seed in 0..5u64 {
        let ck = train_toy(&dir, &format!("t{seed}"), seed, &[]);
        let out = dir.path().join(format!("s{seed}"));
        let seed = seed.to_string();
        let o = latnas(&["search", "--checkpoint", s(&ck), "--method", "ngd", "--rho", "3", "--baseline", "--seed", &seed, "--out", s(&out)]);
        assert!(o.status.success(), "{}", stderr(&o));
        let printed = stdout(&o);
        hits += usize::from(field(&printed, "arch") == optimum(&ck));
        let best: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("best.json")).unwrap()).unwrap();
        assert_eq!(best["arch"], field(&printed, "arch"));
        assert_eq!(best["evaluations"], 800);
        assert_eq!(fs::read_to_string(out.join("trace.jsonl")).unwrap().lines().count(), 50);
        assert!(out.join("distribution.json").exists() && out.join("latency.csv").exists());
    }
    assert!(hits >= 4, "{hits}/5");
}

#[test]
fn infeasible_budget_exits_3() {
    let dir = TempDir::new().unwrap();
    let ck = train_toy(&dir, "t", 0, &[]);
    let out = dir.path().join("s");
    for method in ["ngd", "ea", "random"] {
        let o = latnas(&["search", "--checkpoint", s(&ck), "--method", method, "--r-max-ms", "0", "--iters", "2", "--out", s(&out)]);
        assert_eq!(o.status.code(), Some(3));
        assert!(stderr(&o).contains("no feasible architecture"));
        assert!(!out.join("best.json").exists());
        let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
        assert_eq!(manifest["exit_code"], 3);
    }
}

#[test]
fn single_evaluation_gives_one_trace_line() {
    let dir = TempDir::new().unwrap();
    let ck = train_toy(&dir, "t", 0, &[]);
    let out = dir.path().join("s");
    let o = latnas(&["search", "--checkpoint", s(&ck), "--method", "random", "--iters", "1", "--batch", "1", "--out", s(&out)]);
    assert!(o.status.success());
    let trace = fs::read_to_string(out.join("trace.jsonl")).unwrap();
    assert_eq!(trace.lines().count(), 1);
    let line: serde_json::Value = serde_json::from_str(trace.lines().next().unwrap()).unwrap();
    assert_eq!(line["samples"].as_array().unwrap().len(), 1);
}

#[test]
fn untrained_checkpoint_is_refused() {
    let dir = TempDir::new().unwrap();
    let cfg = latnas::space::SpaceConfig::from_json(TOY).unwrap();
    let settings = TrainSettings { blocks: 3, iters: 10, ..Default::default() };
    let t = Trainer::new(&cfg, settings, latnas::evaluator::Aggregation::Logistic, latnas::derive_rng(0, 1)).unwrap();
    let ck = write(&dir, "fresh.json", &t.checkpoint_json());
    let o = latnas(&["search", "--checkpoint", s(&ck), "--out", s(&dir.path().join("s"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("not a fully trained checkpoint"));
}

#[test]
fn correlate_rows_and_determinism() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "toy.json", TOY);
    let run = |name: &str, workers: &str| {
        let out = dir.path().join(name);
        let o = latnas(&[
            "correlate", "--config", s(&cfg), "--blocks", "3", "--iters", "300", "--strategies", "random_path,spos",
            "--seeds", "3,4,5", "--n-archs", "30", "--workers", workers, "--out", s(&out),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        fs::read_to_string(out.join("correlations.csv")).unwrap()
    };
    let a = run("a", "1");
    assert_eq!(a.lines().next().unwrap(), "strategy,seed,kendall,spearman,pearson");
    assert_eq!(a.lines().filter(|l| l.starts_with("random_path,")).count(), 3);
    assert_eq!(a.lines().filter(|l| l.starts_with("spos,")).count(), 3);
    assert_eq!(a, run("b", "1"));
    assert_eq!(a, run("c", "2"));
    let scatter = fs::read_to_string(dir.path().join("a/scatter_spos.csv")).unwrap();
    assert_eq!(scatter.lines().count(), 91);
}

#[test]
fn bench_writes_curves_and_results() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "toy.json", TOY);
    let out = dir.path().join("b");
    let o = latnas(&["bench", "--config", s(&cfg), "--blocks", "3", "--rho", "3", "--baseline", "--n-seeds", "3", "--workers", "2", "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let results = fs::read_to_string(out.join("results.csv")).unwrap();
    assert_eq!(results.lines().next().unwrap(), "method,seed,arch,reward,latency_ms,true_quality");
    assert_eq!(results.lines().count(), 10);
    let curves = fs::read_to_string(out.join("curves.csv")).unwrap();
    assert_eq!(curves.lines().next().unwrap(), "method,iteration,top_mean,top_best,top_worst");
    assert_eq!(curves.lines().count(), 151);
    assert!(stdout(&o).lines().any(|l| l.starts_with("ngd") && l.contains("3/3")));
}

#[test]
fn replay_reproduces_and_detects_changed_inputs() {
    let dir = TempDir::new().unwrap();
    let ck = train_toy(&dir, "t", 0, &[]);
    let run = dir.path().join("s");
    let o = latnas(&["search", "--checkpoint", s(&ck), "--method", "ea", "--out", s(&run)]);
    assert!(o.status.success());
    let manifest = run.join("manifest.json");
    let o = latnas(&["replay", "--manifest", s(&manifest), "--out", s(&dir.path().join("again"))]);
    assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("replay identical"));
    assert_eq!(fs::read(run.join("trace.jsonl")).unwrap(), fs::read(dir.path().join("again/trace.jsonl")).unwrap());

    fs::write(&ck, fs::read_to_string(&ck).unwrap().replacen("\"visits\": ", "\"visits\": 1", 1)).unwrap();
    let o = latnas(&["replay", "--manifest", s(&manifest), "--out", s(&dir.path().join("third"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("changed"));
}

#[test]
fn external_evaluator_round_trip() {
    let dir = TempDir::new().unwrap();
    let ck = train_toy(&dir, "t", 0, &["--evaluator", ECHO, "--iters", "20"]);
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&ck).unwrap()).unwrap();
    assert_eq!(v["aggregation"], "sum");
    let o = latnas(&["search", "--checkpoint", s(&ck), "--iters", "2", "--evaluator", ECHO, "--out", s(&dir.path().join("s"))]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(field(&stdout(&o), "score"), "0.5");

    let bad = latnas(&[
        "search", "--checkpoint", s(&ck), "--iters", "2", "--evaluator", "external:echo nonsense", "--out",
        s(&dir.path().join("bad")),
    ]);
    assert_eq!(bad.status.code(), Some(4));
    assert!(stderr(&bad).contains("protocol"));
    let cfg = write(&dir, "toy.json", TOY);
    let exited = latnas(&["train", "--config", s(&cfg), "--blocks", "3", "--evaluator", "external:exit 1", "--out", s(&dir.path().join("x"))]);
    assert_eq!(exited.status.code(), Some(4));
    let refused = latnas(&["correlate", "--config", s(&cfg), "--evaluator", ECHO, "--out", s(&dir.path().join("y"))]);
    assert_eq!(refused.status.code(), Some(2));
}
