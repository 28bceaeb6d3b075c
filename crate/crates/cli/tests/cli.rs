mod common;

use std::path::Path;

use gats_core::archive::{Corpus, PrimitiveArchive};

use common::{gats, truncation_oracle};

fn ok(args: &[&str]) -> std::process::Output {
    let out = gats(args);
    assert!(
        out.status.success(),
        "gats {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn mgp_round_trip_matches_truncation_error() {
    let dir = tempfile::tempdir().unwrap();
    let (c, a, p, d) = (
        dir.path().join("c"),
        dir.path().join("a"),
        dir.path().join("p"),
        dir.path().join("d"),
    );
    ok(&["--seed", "4", "gen-data", "lowrank", "--dims", "64,48", "--ranks", "48,48", "--decay", "0.93", "--n", "5", "--out", s(&c)]);
    ok(&["anchor", "--in", s(&c), "--type", "mgp", "--rank", "32", "--out", s(&a)]);
    ok(&["encode", "--in", s(&c), "--anchor", s(&a), "--type", "mgp", "--rank", "32", "--out", s(&p)]);
    ok(&["decode", "--in", s(&p), "--out", s(&d)]);
    let out = ok(&["stats", "--reference", s(&c), "--estimate", s(&d)]);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();

    let corpus = Corpus::load(&c).unwrap();
    for (i, sample) in corpus.samples.iter().enumerate() {
        let m = sample.data.to_matrix().unwrap();
        let best = truncation_oracle(&m, 32);
        let expected = m.sub(&best).unwrap().frobenius_norm() / m.frobenius_norm();
        let got = report["samples"][i]["rel_err_l2"].as_f64().unwrap();
        assert!(expected > 1e-3, "test corpus should not be exactly rank 32");
        assert!((got - expected).abs() <= 1e-9, "sample {i}: {got} vs {expected}");
    }
}

#[test]
fn encode_decode_encode_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let [c, a, p1, d, p2] = ["c", "a", "p1", "d", "p2"].map(|n| dir.path().join(n));
    let codec = ["--type", "tgp", "--modes", "1,3", "--ranks", "4,3"];
    let with_codec = |args: &[&str]| {
        let mut v = args.to_vec();
        v.extend(codec);
        ok(&v);
    };
    ok(&["--seed", "9", "gen-data", "lowrank", "--dims", "10,9,8", "--ranks", "4,3,3", "--noise", "0.05", "--n", "6", "--out", s(&c)]);
    with_codec(&["anchor", "--in", s(&c), "--out", s(&a)]);
    with_codec(&["encode", "--in", s(&c), "--anchor", s(&a), "--out", s(&p1)]);
    ok(&["decode", "--in", s(&p1), "--out", s(&d)]);
    with_codec(&["encode", "--in", s(&d), "--anchor", s(&a), "--out", s(&p2)]);
    let p1 = PrimitiveArchive::load(&p1).unwrap();
    let p2 = PrimitiveArchive::load(&p2).unwrap();
    assert!(p1.max_component_diff(&p2).unwrap() <= 1e-8);
}

#[test]
fn outputs_do_not_depend_on_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let run = |threads: &str| {
        let base = dir.path().join(threads);
        let (c, a, p) = (base.join("c"), base.join("a"), base.join("p"));
        ok(&["--threads", threads, "gen-data", "lowrank", "--dims", "20,12", "--ranks", "5,5", "--noise", "0.1", "--n", "12", "--out", s(&c)]);
        ok(&["--threads", threads, "anchor", "--in", s(&c), "--type", "mgp", "--rank", "5", "--out", s(&a)]);
        ok(&["--threads", threads, "encode", "--in", s(&c), "--anchor", s(&a), "--type", "mgp", "--rank", "5", "--out", s(&p)]);
        let mut files: Vec<_> = std::fs::read_dir(&p)
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|f| f.file_name().unwrap() != "run_manifest.json")
            .collect();
        files.sort();
        files
            .iter()
            .map(|f| (f.file_name().unwrap().to_owned(), std::fs::read(f).unwrap()))
            .collect::<Vec<_>>()
    };
    assert_eq!(run("1"), run("3"));
}

#[test]
fn prop2_example_passes() {
    let out = ok(&["validate-prop2", "--p", "400", "--r", "100", "--trials", "50", "--seed", "7"]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let mean = v["mean"].as_f64().unwrap();
    assert!((mean - 0.564).abs() <= 0.02, "mean {mean}");
}

#[test]
fn failed_validation_exits_one() {
    let out = gats(&["validate-prop2", "--p", "20", "--r", "10", "--trials", "2", "--tol", "1e-12"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let c = dir.path().join("c");
    ok(&["gen-data", "lowrank", "--dims", "6,5", "--ranks", "2,2", "--n", "2", "--out", s(&c)]);
    for args in [
        vec!["encode", "--bogus"],
        vec!["--threads", "0", "selfcheck"],
        vec!["anchor", "--in", s(&c), "--type", "mgp", "--out", s(&c)],
        vec!["anchor", "--in", s(&c), "--type", "tgp", "--modes", "0", "--ranks", "2", "--out", s(&c)],
        vec!["anchor", "--in", s(&c), "--type", "mgp", "--rank", "9", "--out", s(&dir.path().join("a"))],
        vec!["validate-prop2", "--p", "10", "--r", "10"],
    ] {
        assert_eq!(gats(&args).status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn version_lists_formats() {
    let out = ok(&["--version"]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains(env!("CARGO_PKG_VERSION")));
    for f in ["dtz v", "anchor v", "corpus v", "primitive v", "checkpoint v"] {
        assert!(text.contains(f), "{text}");
    }
}

#[test]
fn selfcheck_passes() {
    let out = ok(&["selfcheck"]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(!text.contains("FAIL"));
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 9);
}

#[test]
fn manifest_replay_reproduces_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let c = dir.path().join("c");
    ok(&["--seed", "12", "gen-data", "rd1d", "--nu", "1e-2", "--rho", "1", "--nx", "64", "--nt", "10", "--n", "3", "--out", s(&c)]);
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(c.join("run_manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 12);
    assert_eq!(manifest["command"], "gen-data rd1d");
    let argv: Vec<String> = manifest["argv"].as_array().unwrap()[1..]
        .iter()
        .map(|a| a.as_str().unwrap().to_string())
        .collect();
    let before = std::fs::read(c.join("sample_00001.dtz")).unwrap();
    std::fs::remove_dir_all(&c).unwrap();
    ok(&argv.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(std::fs::read(c.join("sample_00001.dtz")).unwrap(), before);
}
