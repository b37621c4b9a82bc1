mod common;

use std::fs;

use common::{fixture, netgnn, ok, same_twice, subcommand_runs};

#[test]
fn simulate_is_byte_identical_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let args = |out: &str| {
        vec![
            "simulate".to_string(),
            "--nodes=6".into(),
            "--routings=4".into(),
            "--ti=8:16".into(),
            "--samples=3".into(),
            "--duration=500".into(),
            "--seed=42".into(),
            format!("--out={out}"),
        ]
    };
    let a: Vec<String> = args("a.jsonl");
    let b: Vec<String> = args("b.jsonl");
    let stdout = ok(dir.path(), &a.iter().map(String::as_str).collect::<Vec<_>>());
    ok(dir.path(), &b.iter().map(String::as_str).collect::<Vec<_>>());
    assert!(stdout.contains("samples: 12"));
    assert_eq!(
        fs::read(dir.path().join("a.jsonl")).unwrap(),
        fs::read(dir.path().join("b.jsonl")).unwrap()
    );
    let other: Vec<String> = args("c.jsonl")
        .into_iter()
        .map(|s| s.replace("--seed=42", "--seed=43"))
        .collect();
    ok(dir.path(), &other.iter().map(String::as_str).collect::<Vec<_>>());
    assert_ne!(
        fs::read(dir.path().join("a.jsonl")).unwrap(),
        fs::read(dir.path().join("c.jsonl")).unwrap()
    );
}

#[test]
fn fixed_ti_is_recorded_in_digest() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        dir.path(),
        &[
            "simulate",
            "--nodes",
            "4",
            "--routings",
            "1",
            "--ti",
            "16",
            "--samples",
            "2",
            "--duration",
            "300",
            "--out",
            "d.jsonl",
        ],
    );
    let text = fs::read_to_string(dir.path().join("d.jsonl")).unwrap();
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let digest = v["sim_digest"].as_str().unwrap();
        assert!(digest.split(' ').any(|kv| kv == "ti=16"), "{digest}");
    }
}

#[test]
fn every_subcommand_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fixture(d);
    for (i, args) in subcommand_runs().iter().enumerate() {
        same_twice(d, args, &format!("run{i}")).unwrap();
    }
}

#[test]
fn eval_prints_report_fields() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    let s = ok(
        dir.path(),
        &[
            "eval",
            "--ckpt",
            "m/model.bin",
            "--data",
            "d.jsonl",
            "--mc",
            "5",
            "--seed",
            "7",
        ],
    );
    for key in ["R2:", "rho:", "q0.50:", "q0.99:"] {
        assert!(s.contains(key), "{key} missing from {s}");
    }
}

#[test]
fn failures_have_distinct_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fixture(d);
    let code = |args: &[&str]| netgnn(d, args).status.code().unwrap();

    assert_eq!(code(&["eval", "--ckpt", "missing.bin", "--data", "d.jsonl"]), 7);
    assert_eq!(code(&["eval", "--ckpt", "m/model.bin", "--data", "missing.jsonl"]), 7);

    fs::write(d.join("bad.jsonl"), "{\"topology\": 3}\n").unwrap();
    assert_eq!(code(&["eval", "--ckpt", "m/model.bin", "--data", "bad.jsonl"]), 5);

    let bytes = fs::read(d.join("m/model.bin")).unwrap();
    let key = b"\"format_version\":1";
    let at = bytes
        .windows(key.len())
        .position(|w| w == key)
        .expect("manifest has a version");
    let mut bumped = bytes.clone();
    bumped[at + "\"format_version\":".len()] = b'9';
    fs::write(d.join("future.bin"), bumped).unwrap();
    assert_eq!(code(&["eval", "--ckpt", "future.bin", "--data", "d.jsonl"]), 6);

    assert_eq!(code(&["simulate", "--nodes", "4", "--ti", "0", "--out", "x.jsonl"]), 2);
    assert_eq!(code(&["train", "--data", "d.jsonl", "--lr", "-1", "--out", "t"]), 2);
    assert_eq!(code(&["optimize", "--nodes", "5"]), 2);
    assert_eq!(code(&["simulate", "--no-such-flag"]), 2);
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(
        d.join("run.toml"),
        "seed = 5\n[simulate]\nnodes = 4\nroutings = 2\nti = \"9\"\nsamples = 2\nduration = 300\n",
    )
    .unwrap();
    let s = ok(d, &["--config", "run.toml", "simulate", "--out", "a.jsonl"]);
    assert!(s.contains("samples: 4"), "{s}");
    let s = ok(
        d,
        &["simulate", "--config", "run.toml", "--samples", "3", "--out", "b.jsonl"],
    );
    assert!(s.contains("samples: 6"), "{s}");
    let first = fs::read_to_string(d.join("a.jsonl")).unwrap();
    assert!(first.contains("ti=9"));
    let explicit = ok(
        d,
        &[
            "simulate",
            "--nodes",
            "4",
            "--routings",
            "2",
            "--ti",
            "9",
            "--samples",
            "2",
            "--duration",
            "300",
            "--seed",
            "5",
            "--out",
            "c.jsonl",
        ],
    );
    assert!(explicit.contains("samples: 4"));
    assert_eq!(first, fs::read_to_string(d.join("c.jsonl")).unwrap());

    fs::write(d.join("typo.toml"), "[simulate]\nnodez = 4\n").unwrap();
    assert_eq!(
        netgnn(d, &["--config", "typo.toml", "simulate", "--out", "x.jsonl"])
            .status
            .code(),
        Some(2)
    );
    fs::write(d.join("top.toml"), "colour = 1\n").unwrap();
    assert_eq!(
        netgnn(d, &["--config", "top.toml", "simulate", "--out", "x.jsonl"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn add_link_on_star_finds_the_hot_pair() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let topo = serde_json::json!({
        "nodes": 5,
        "links": [
            {"id": 0, "src": 0, "dst": 1, "capacity": 10.0},
            {"id": 1, "src": 1, "dst": 0, "capacity": 10.0},
            {"id": 2, "src": 0, "dst": 2, "capacity": 10.0},
            {"id": 3, "src": 2, "dst": 0, "capacity": 10.0},
            {"id": 4, "src": 0, "dst": 3, "capacity": 10.0},
            {"id": 5, "src": 3, "dst": 0, "capacity": 10.0},
            {"id": 6, "src": 0, "dst": 4, "capacity": 10.0},
            {"id": 7, "src": 4, "dst": 0, "capacity": 10.0}
        ]
    });
    fs::write(d.join("star.json"), topo.to_string()).unwrap();
    let mut tm = vec![0.3; 25];
    for i in 0..5 {
        tm[i * 5 + i] = 0.0;
    }
    tm[5 + 3] = 7.0;
    tm[3 * 5 + 1] = 7.0;
    fs::write(d.join("tm.json"), serde_json::to_string(&tm).unwrap()).unwrap();
    let s = ok(
        d,
        &[
            "whatif",
            "add-link",
            "--simulator",
            "--topology",
            "star.json",
            "--tm",
            "tm.json",
            "--candidates",
            "1",
            "--duration",
            "2000",
            "--pairs",
            "all",
            "--out",
            "o",
        ],
    );
    assert!(s.contains("best placement: (1, 3)"), "{s}");
    let csv = fs::read_to_string(d.join("o/placements.csv")).unwrap();
    assert_eq!(csv.lines().count(), 7);
}
