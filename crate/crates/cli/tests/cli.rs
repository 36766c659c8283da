use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
}

fn emrc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_emrc"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_file(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.display().to_string()
}

/// Column `name` of a CSV file without quoting.
fn column(path: &Path, name: &str) -> Vec<String> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let idx = header.iter().position(|h| *h == name).unwrap();
    lines
        .map(|l| l.split(',').nth(idx).unwrap().to_string())
        .collect()
}

fn summary(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn validate_triangle() {
    let dir = tempfile::tempdir().unwrap();
    let p = write_file(
        dir.path(),
        "t.topo",
        "node 0\nnode 1\nnode 2\nlink 0 1 1\nlink 1 2 1\nlink 0 2 1\n",
    );
    let o = emrc(&["validate", &p]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("biconnected: yes"));
    assert!(stdout(&o).contains("3 nodes, 3 links"));
}

#[test]
fn validate_path_graph() {
    let dir = tempfile::tempdir().unwrap();
    let p = write_file(
        dir.path(),
        "p.topo",
        "node 0\nnode 1\nnode 2\nlink 0 1 1\nlink 1 2 1\n",
    );
    let o = emrc(&["validate", &p]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("biconnected: no (articulation node 1)"));
}

#[test]
fn validate_malformed() {
    let dir = tempfile::tempdir().unwrap();
    let p = write_file(dir.path(), "bad.topo", "link 0 1\n");
    let o = emrc(&["validate", &p]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 1"));
    assert_eq!(
        emrc(&["validate", "/nonexistent.topo"]).status.code(),
        Some(2)
    );
}

#[test]
fn validate_directed_input() {
    let dir = tempfile::tempdir().unwrap();
    let p = write_file(
        dir.path(),
        "d.topo",
        "node 0\nnode 1\nnode 2\nlink 0 1 1\nlink 1 0 2\nlink 1 2 1\nlink 2 1 1\nlink 0 2 1\nlink 2 0 5\n",
    );
    assert_eq!(emrc(&["validate", &p, "--directed"]).status.code(), Some(0));
    // Read as undirected, each pair appears twice.
    assert_eq!(emrc(&["validate", &p]).status.code(), Some(2));
}

#[test]
fn genconfig_ring_auto() {
    let o = emrc(&["genconfig", fixture("ring4.topo").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("n = 4 (smallest that works)"));
    assert!(err.contains("each isolated exactly once"));
    let json: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(json["configs"].as_array().unwrap().len(), 5);
}

#[test]
fn genconfig_k4_two_configs() {
    let dir = tempfile::tempdir().unwrap();
    let p = write_file(
        dir.path(),
        "k4.topo",
        "node 0\nnode 1\nnode 2\nnode 3\nlink 0 1 1\nlink 0 2 1\nlink 0 3 1\nlink 1 2 1\nlink 1 3 1\nlink 2 3 1\n",
    );
    let out = dir.path().join("configs.json");
    let o = emrc(&["genconfig", &p, "--n", "2", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("n = 2"));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(out).unwrap()).unwrap();
    assert_eq!(json["configs"].as_array().unwrap().len(), 3);
}

#[test]
fn genconfig_ring_one_config_fails() {
    let o = emrc(&[
        "genconfig",
        fixture("ring4.topo").to_str().unwrap(),
        "--n",
        "1",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("cannot isolate node"));
}

#[test]
fn run_both_modes_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = emrc(&[
        "run",
        fixture("figure3_persistent.json").to_str().unwrap(),
        "--mode",
        "both",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    for f in [
        "packets_emrc.csv",
        "packets_mrc.csv",
        "summary_emrc.json",
        "summary_mrc.json",
        "delta.csv",
        "manifest.json",
    ] {
        assert!(out.join(f).exists(), "{f}");
    }
    let header = fs::read_to_string(out.join("packets_emrc.csv")).unwrap();
    assert!(header
        .starts_with("seq,injected_at,delivered_at,dropped_reason,latency,hop_count,marks,path\n"));
    assert!(header.contains(",1-4-7-0\n"));

    // Summary means are the means of the CSV latency column.
    for mode in ["emrc", "mrc"] {
        let lat: Vec<f64> = column(&out.join(format!("packets_{mode}.csv")), "latency")
            .iter()
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().unwrap())
            .collect();
        let mean = lat.iter().sum::<f64>() / lat.len() as f64;
        let s = summary(&out.join(format!("summary_{mode}.json")));
        assert_eq!(s["summary"]["mean_latency"].as_f64().unwrap(), mean);
        assert_eq!(
            s["summary"]["delivered"].as_u64().unwrap() as usize,
            lat.len()
        );
    }

    let manifest = summary(&out.join("manifest.json"));
    assert_eq!(manifest["seed"], 1);
    assert_eq!(manifest["timers"]["t_slot"], 30_000);
    assert_eq!(manifest["modes"], serde_json::json!(["mrc", "emrc"]));
}

#[test]
fn heavier_backup_favors_emrc_after_recovery() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = emrc(&[
        "run",
        fixture("ring10_comparison.json").to_str().unwrap(),
        "--mode",
        "both",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let injected = column(&out.join("packets_emrc.csv"), "injected_at");
    let mrc = column(&out.join("delta.csv"), "latency_mrc");
    let emrc_l = column(&out.join("delta.csv"), "latency_emrc");
    let mut post = 0;
    for ((t, m), e) in injected.iter().zip(&mrc).zip(&emrc_l) {
        if t.parse::<u64>().unwrap() >= 400_000 {
            post += 1;
            assert!(e.parse::<u64>().unwrap() <= m.parse::<u64>().unwrap());
        }
    }
    assert!(post > 0);
}

#[test]
fn failure_free_delta_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = emrc(&[
        "run",
        fixture("figure3_steady.json").to_str().unwrap(),
        "--mode",
        "both",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let delta = column(&out.join("delta.csv"), "delta");
    assert_eq!(delta.len(), 160);
    assert!(delta.iter().all(|d| d == "0"));
    assert_eq!(
        fs::read(out.join("packets_emrc.csv")).unwrap(),
        fs::read(out.join("packets_mrc.csv")).unwrap()
    );
}

#[test]
fn unknown_node_is_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write_file(
        dir.path(),
        "s.json",
        &format!(
            r#"{{"topology": "{}", "flows": [{{"src": 1, "dst": 42, "interval": 1, "count": 1}}]}}"#,
            fixture("figure3.topo").display()
        ),
    );
    let out = dir.path().join("o");
    let o = emrc(&["run", &sc, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown node 42"));
    assert!(!out.exists());
}

#[test]
fn infeasible_configuration_is_domain_error() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write_file(
        dir.path(),
        "s.json",
        &format!(
            r#"{{"topology": "{}", "n": 1}}"#,
            fixture("ring4.topo").display()
        ),
    );
    let o = emrc(&["run", &sc, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let sc = fixture("figure3_persistent.json");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = emrc(&[
            "run",
            sc.to_str().unwrap(),
            "--mode",
            "both",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(o.status.code(), Some(0));
    }
    for f in [
        "packets_emrc.csv",
        "packets_mrc.csv",
        "delta.csv",
        "summary_emrc.json",
    ] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn seed_sweep_in_parallel_matches_sequential() {
    let dir = tempfile::tempdir().unwrap();
    let sc = fixture("figure3_steady.json");
    let par = dir.path().join("par");
    let seq = dir.path().join("seq");
    for (out, jobs) in [(&par, "3"), (&seq, "1")] {
        let o = emrc(&[
            "run",
            sc.to_str().unwrap(),
            "--seed",
            "1",
            "--seed",
            "2",
            "--seed",
            "3",
            "--jobs",
            jobs,
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(o.status.code(), Some(0));
    }
    for s in 1..=3 {
        let f = format!("seed-{s}/packets_emrc.csv");
        assert_eq!(
            fs::read(par.join(&f)).unwrap(),
            fs::read(seq.join(&f)).unwrap()
        );
        assert_eq!(
            summary(&par.join(format!("seed-{s}/manifest.json")))["seed"],
            s
        );
    }
    // Jitter depends on the seed.
    assert_ne!(
        fs::read(par.join("seed-1/packets_emrc.csv")).unwrap(),
        fs::read(par.join("seed-2/packets_emrc.csv")).unwrap()
    );
}

#[test]
fn timers_flag_overrides_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = emrc(&[
        "run",
        fixture("figure3_transient.json").to_str().unwrap(),
        "--timers",
        "5000,5000,200000",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let m = summary(&out.join("manifest.json"));
    assert_eq!(
        m["timers"],
        serde_json::json!({"t_slot": 5000, "t_probe": 5000, "t_reconv": 200000})
    );
    // A 20 ms outage now outlasts the 5 ms timeslot, so backup marks appear.
    let marks = column(&out.join("packets_emrc.csv"), "marks");
    assert!(marks.iter().any(|m| m.split('-').any(|x| x != "0")));

    let bad = emrc(&["run", "x.json", "--timers", "10,1"]);
    assert_eq!(bad.status.code(), Some(2));
}
