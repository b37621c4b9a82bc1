//! Helpers for driving the `netgnn` binary from integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

pub fn netgnn(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_netgnn"))
        .args(args)
        .current_dir(dir)
        .env("NETGNN_THREADS", "2")
        .output()
        .expect("binary runs")
}

pub fn ok(dir: &Path, args: &[&str]) -> String {
    let out = netgnn(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// SHA-256 of a file, or of every file in a directory keyed by name.
pub fn hashes(path: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let digest = |f: &Path| -> String {
        Sha256::digest(fs::read(f).unwrap())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    };
    if !path.is_dir() {
        out.insert(String::new(), digest(path));
        return out;
    }
    let mut files: Vec<PathBuf> = fs::read_dir(path).unwrap().map(|e| e.unwrap().path()).collect();
    files.sort();
    for f in files {
        out.insert(f.file_name().unwrap().to_string_lossy().into_owned(), digest(&f));
    }
    out
}

/// A tiny dataset and checkpoint shared by several tests.
pub fn fixture(dir: &Path) {
    ok(
        dir,
        &[
            "simulate",
            "--nodes",
            "5",
            "--routings",
            "3",
            "--ti",
            "6:10",
            "--samples",
            "4",
            "--duration",
            "600",
            "--seed",
            "3",
            "--out",
            "d.jsonl",
        ],
    );
    ok(
        dir,
        &[
            "train",
            "--data",
            "d.jsonl",
            "--holdout-routings",
            "1",
            "--steps",
            "30",
            "--eval-every",
            "10",
            "--out",
            "m",
        ],
    );
}

/// One invocation of every subcommand against the `fixture` files.
pub fn subcommand_runs() -> Vec<Vec<&'static str>> {
    vec![
        vec![
            "simulate",
            "--nodes",
            "5",
            "--routings",
            "2",
            "--ti",
            "6:10",
            "--samples",
            "2",
            "--duration",
            "300",
            "--seed",
            "4",
        ],
        vec![
            "train",
            "--data",
            "d.jsonl",
            "--steps",
            "15",
            "--eval-data",
            "d.jsonl",
            "--eval-every",
            "5",
            "--seed",
            "9",
        ],
        vec![
            "eval",
            "--ckpt",
            "m/model.bin",
            "--data",
            "d.jsonl",
            "--mc",
            "7",
            "--seed",
            "7",
        ],
        vec![
            "optimize",
            "--ckpt",
            "m/model.bin",
            "--nodes",
            "5",
            "--candidates",
            "6",
            "--mc",
            "5",
            "--objective",
            "max-delay",
            "--verify",
            "--duration",
            "400",
            "--seed",
            "1",
        ],
        vec![
            "optimize",
            "--ckpt",
            "m/model.bin",
            "--nodes",
            "5",
            "--candidates",
            "6",
            "--mc",
            "5",
            "--sla",
            "0-3,3-4",
            "--sla-bound",
            "0.8",
            "--seed",
            "1",
        ],
        vec![
            "whatif",
            "add-users",
            "--ckpt",
            "m/model.bin",
            "--nodes",
            "5",
            "--candidates",
            "4",
            "--mc",
            "4",
            "--node-order",
            "1,3,1",
            "--factor",
            "1.5",
            "--bound",
            "2",
            "--ti",
            "6",
        ],
        vec![
            "whatif",
            "add-link",
            "--ckpt",
            "m/model.bin",
            "--nodes",
            "5",
            "--chords",
            "0",
            "--candidates",
            "3",
            "--mc",
            "3",
            "--pairs",
            "all",
        ],
        vec![
            "whatif",
            "link-failures",
            "--simulator",
            "--nodes",
            "5",
            "--candidates",
            "3",
            "--failures",
            "0,1",
            "--trials",
            "2",
            "--duration",
            "300",
            "--ti",
            "5",
        ],
    ]
}

/// Runs `args` twice into different output directories and compares stdout
/// and the SHA-256 of every written file.
pub fn same_twice(dir: &Path, args: &[&str], tag: &str) -> Result<(), String> {
    let first = format!("{tag}a");
    let second = format!("{tag}b");
    let mut a = args.to_vec();
    a.extend(["--out", &first]);
    let mut b = args.to_vec();
    b.extend(["--out", &second]);
    let sa = ok(dir, &a).replace(&first, "OUT");
    let sb = ok(dir, &b).replace(&second, "OUT");
    if sa != sb {
        return Err(format!("{args:?}: stdout differs"));
    }
    let ha = hashes(&dir.join(&first));
    if ha.is_empty() {
        return Err(format!("{args:?} wrote nothing"));
    }
    if ha != hashes(&dir.join(&second)) {
        return Err(format!("{args:?}: outputs differ"));
    }
    Ok(())
}
