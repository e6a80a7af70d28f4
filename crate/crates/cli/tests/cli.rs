use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use netdr::estimators::Estimand;
use netdr::simulate::{study_truth, DgpConfig, Study};

fn netdr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_netdr")).args(args).output().expect("binary runs")
}

fn read_rows(path: &Path) -> Vec<csv::StringRecord> {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    rdr.records().map(|r| r.unwrap()).collect()
}

fn num(raw: &str) -> f64 {
    raw.parse().unwrap()
}

/// Writes one simulated dataset as `edges.csv` / `nodes.csv` into `dir`.
fn write_dataset(dir: &Path, study: &Study, replicate: usize) -> (PathBuf, PathBuf) {
    let net = study.network().unwrap();
    let sim = study.dataset(&net, replicate).unwrap();
    let edges = dir.join("edges.csv");
    let nodes = dir.join("nodes.csv");
    let mut w = csv::Writer::from_path(&edges).unwrap();
    w.write_record(["src", "dst"]).unwrap();
    for (a, b) in net.graph.edges() {
        w.write_record([a.to_string(), b.to_string()]).unwrap();
    }
    w.flush().unwrap();
    let d = &sim.data;
    let mut w = csv::Writer::from_path(&nodes).unwrap();
    w.write_record(["Z", "Y", "x1", "x2", "h"]).unwrap();
    for i in 0..d.n_nodes() {
        let col = |c: &str| format!("{:.17e}", d.column(c).unwrap()[i]);
        w.write_record([d.z()[i].to_string(), format!("{:.17e}", d.y()[i]), col("x1"), col("x2"), col("h")]).unwrap();
    }
    w.flush().unwrap();
    (edges, nodes)
}

fn analysis_config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("config.in.json");
    let json = format!(
        r#"{{
            "propensity": {{"terms": ["abs(x1)", "abs(x1)*x2", "h"]}},
            "outcome": {{"terms": ["abs(x1)", "x2", "abs(x1)*x2"]}},
            "alphas": [0.4, 0.6],
            "alpha_prime": 0.4,
            "effects": ["de", "ie", "te", "oe"]{extra}
        }}"#
    );
    std::fs::write(&path, json).unwrap();
    path
}

#[test]
fn simulate_is_byte_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let out = netdr(&[
            "simulate", "--scheme", "balanced", "--scenario", "a", "--S", "10", "--seed", "7", "--out",
            dir.path().to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for f in ["summary.csv", "summary.txt", "study.json"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert_eq!(x, y, "{f} differs");
    }
    let rows = read_rows(&a.path().join("summary.csv"));
    assert_eq!(rows.len(), 4);
    for r in &rows {
        assert_eq!(num(&r[12]) + num(&r[13]), 10.0);
    }
    let echoed: Study = serde_json::from_slice(&std::fs::read(a.path().join("study.json")).unwrap()).unwrap();
    assert_eq!(echoed.seed, 7);
    assert_eq!(echoed.replicates, 10);
}

#[test]
fn dumped_truth_satisfies_total_effect_identity() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("study.json");
    std::fs::write(
        &cfg,
        r#"{"dgp": {"m": 6}, "estimators": ["reg"], "replicates": 3,
            "estimands": [{"type": "de", "alpha": 0.2}, {"type": "ie", "alpha": 0.8, "alpha_prime": 0.5}]}"#,
    )
    .unwrap();
    let out = netdr(&["simulate", "--config", cfg.to_str().unwrap(), "--dump-truth", "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = read_rows(&dir.path().join("truth.csv"));
    assert_eq!(rows.len(), 9);
    for r in rows {
        assert_eq!(num(&r[7]), num(&r[5]) + num(&r[6]));
        if r[0] == r[1] {
            assert_eq!(num(&r[6]), 0.0);
            assert_eq!(num(&r[8]), 0.0);
        }
    }
}

#[test]
fn invalid_scenario_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = netdr(&["simulate", "--scenario", "a,z", "--S", "100000", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown scenario"));
    assert!(!dir.path().join("summary.csv").exists());
}

#[test]
fn analyze_writes_parsable_estimates() {
    let dir = tempfile::tempdir().unwrap();
    let study = Study { dgp: DgpConfig::balanced(30), seed: 3, ..Default::default() };
    let (edges, nodes) = write_dataset(dir.path(), &study, 0);
    let cfg = analysis_config(dir.path(), "");
    let out_dir = dir.path().join("out");
    let out = netdr(&[
        "analyze", "--config", cfg.to_str().unwrap(), "--edges", edges.to_str().unwrap(), "--nodes",
        nodes.to_str().unwrap(), "--header", "--out", out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = read_rows(&out_dir.join("estimates.csv"));
    // 4 estimators x 2 alphas x 4 effects
    assert_eq!(rows.len(), 32);
    for r in &rows {
        let (point, se, lo, hi) = (num(&r[4]), num(&r[5]), num(&r[6]), num(&r[7]));
        assert!(lo <= point && point <= hi);
        if r[2] == r[3] && (&r[1] == "IE" || &r[1] == "OE") {
            assert_eq!(point, 0.0);
            assert_eq!(se, 0.0);
        }
        if &r[1] == "TE" {
            let find = |name: &str| {
                rows.iter().find(|q| q[0] == r[0] && &q[1] == name && q[2] == r[2]).map(|q| num(&q[4])).unwrap()
            };
            assert!((point - find("DE") - find("IE")).abs() < 1e-12);
        }
    }
    assert!(out_dir.join("estimates.txt").exists());
    assert!(String::from_utf8_lossy(&out.stdout).contains("DR-BC"));
}

#[test]
fn multilevel_ipwls_carries_warning() {
    let dir = tempfile::tempdir().unwrap();
    let study = Study { dgp: DgpConfig::unbalanced(30), seed: 5, ..Default::default() };
    let (edges, nodes) = write_dataset(dir.path(), &study, 0);
    let cfg = analysis_config(dir.path(), r#", "outcome_model": "multilevel""#);
    let out = netdr(&[
        "analyze", "--config", cfg.to_str().unwrap(), "--edges", edges.to_str().unwrap(), "--nodes",
        nodes.to_str().unwrap(), "--header", "--out", dir.path().join("out").to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.lines().any(|l| l.contains("IP-WLS") && l.contains("no DR guarantee")), "{stderr}");
    assert!(!stderr.lines().any(|l| l.contains("\"DR-BC\"") && l.contains("no DR guarantee")));
    let rows = read_rows(&dir.path().join("out/estimates.csv"));
    assert!(rows.iter().any(|r| &r[0] == "IP-WLS" && r[8].contains("no DR guarantee")));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let out_s = out_dir.to_str().unwrap();
    let bad_json = dir.path().join("bad.json");
    std::fs::write(&bad_json, "{ not json").unwrap();
    assert_eq!(netdr(&["analyze", "--config", bad_json.to_str().unwrap(), "--out", out_s]).status.code(), Some(2));
    assert_eq!(netdr(&["analyze", "--out", out_s]).status.code(), Some(2));
    let missing = dir.path().join("missing.csv");
    let m = missing.to_str().unwrap();
    assert_eq!(netdr(&["analyze", "--edges", m, "--nodes", m, "--out", out_s]).status.code(), Some(3));

    let study = Study { dgp: DgpConfig::balanced(8), seed: 2, ..Default::default() };
    let (edges, nodes) = write_dataset(dir.path(), &study, 0);
    let dup = dir.path().join("dup.json");
    std::fs::write(&dup, r#"{"propensity": {"terms": ["x1", "x1"]}, "outcome": {"terms": ["x1"]}, "alphas": [0.5]}"#).unwrap();
    let out = netdr(&[
        "analyze", "--config", dup.to_str().unwrap(), "--edges", edges.to_str().unwrap(), "--nodes",
        nodes.to_str().unwrap(), "--header", "--out", out_s,
    ]);
    assert_eq!(out.status.code(), Some(4));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("\"cause\":\"rank\""), "{stderr}");
    // REG does not need the treatment model and still reports
    let rows = read_rows(&out_dir.join("estimates.csv"));
    assert!(!rows.is_empty() && rows.iter().all(|r| &r[0] == "REG"));
}

/// Estimates on simulated data bracket the known truth at about the nominal rate.
#[test]
fn analyze_intervals_cover_simulated_truth() {
    let dir = tempfile::tempdir().unwrap();
    let study = Study {
        dgp: DgpConfig::balanced(30),
        seed: 11,
        replicates: 200,
        estimands: vec![Estimand::De { alpha: 0.6 }],
        ..Default::default()
    };
    let truth = study_truth(&study).unwrap().effect(&Estimand::De { alpha: 0.6 }).unwrap();
    let cfg = analysis_config(dir.path(), r#", "estimators": ["drbc"]"#);
    let cfg = {
        let mut v: serde_json::Value = serde_json::from_slice(&std::fs::read(&cfg).unwrap()).unwrap();
        v["alphas"] = serde_json::json!([0.6]);
        v["effects"] = serde_json::json!(["de"]);
        std::fs::write(&cfg, v.to_string()).unwrap();
        cfg
    };
    let runs = 20;
    let mut covered = 0;
    for r in 0..runs {
        let (edges, nodes) = write_dataset(dir.path(), &study, r);
        let out_dir = dir.path().join(format!("out{r}"));
        let out = netdr(&[
            "analyze", "--config", cfg.to_str().unwrap(), "--edges", edges.to_str().unwrap(), "--nodes",
            nodes.to_str().unwrap(), "--header", "--out", out_dir.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let rows = read_rows(&out_dir.join("estimates.csv"));
        let (lo, hi) = (num(&rows[0][6]), num(&rows[0][7]));
        covered += usize::from(lo <= truth && truth <= hi);
    }
    // P(at most 15 of 20 | 0.95) is about 0.016
    assert!(covered >= 16, "{covered}/{runs} intervals cover {truth}");
}
