#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn freqsev(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_freqsev"))
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn ok(args: &[&str]) {
    let out = freqsev(args);
    assert!(
        out.status.success(),
        "freqsev {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

/// simulate → fit (K = 1 and 2) → price → dependence → evaluate → report.
pub fn pipeline(root: &Path, threads: usize, seed: u64) {
    let t = threads.to_string();
    let seed = seed.to_string();
    let sim = root.join("sim");
    ok(&["--threads", &t, "simulate", "--preset", "negative-sparse", "--policies", "300", "--periods", "3", "--seed", &seed, "--out", s(&sim)]);
    let policies = sim.join("policies.csv");
    let claims = sim.join("claims.csv");
    let data = ["--policies", s(&policies), "--claims", s(&claims)];
    let fit1 = root.join("fit1");
    let fit2 = root.join("fit2");
    let mut args = vec!["--threads", &t, "fit", "--k", "1", "--out", s(&fit1)];
    args.extend(data);
    ok(&args);
    let mut args = vec!["--threads", &t, "fit", "--k", "2", "--representation", "sparse", "--starts", "3", "--seed", &seed, "--out", s(&fit2)];
    args.extend(data);
    ok(&args);
    let m2 = fit2.join("model.json");
    for (cmd, dir) in [("price", "price"), ("dependence", "dependence"), ("report", "report")] {
        let out = root.join(dir);
        let mut args = vec!["--threads", &t, cmd, "--model", s(&m2), "--out", s(&out)];
        args.extend(data);
        ok(&args);
    }
    let m1 = fit1.join("model.json");
    let eval = root.join("evaluate");
    let mut args = vec!["--threads", &t, "evaluate", "--models", s(&m1), s(&m2), "--names", "k1", "k2", "--out", s(&eval)];
    args.extend(data);
    ok(&args);
}

/// Every file under `root` except manifests, keyed by relative path.
pub fn artifacts(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).expect("readable directory") {
            let path = entry.expect("entry").path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().is_some_and(|n| n != "manifest.json") {
                let rel = path.strip_prefix(root).expect("under root").to_path_buf();
                out.insert(rel, fs::read(&path).expect("readable file"));
            }
        }
    }
    out
}
