use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pace_cli::RunManifest;
use pace_core::SynthConfig;

const SMALL: &[&str] = &["--users", "150", "--weeks", "3"];
const LEARN: &[&str] = &["--atoms", "6", "--iters", "5"];

fn pace(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pace")).args(args).output().expect("run pace")
}

fn ok(args: &[&str]) {
    let out = pace(args);
    assert!(
        out.status.success(),
        "pace {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Relative path -> contents of every non-manifest file under `root`.
fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else if !path.file_name().unwrap().to_str().unwrap().starts_with("manifest.") {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

fn pipeline(out: &Path, extra: &[&str]) {
    let mut args = vec!["pipeline", "--seed", "11", "--out", s(out)];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(LEARN);
    args.extend_from_slice(extra);
    ok(&args);
}

#[test]
fn staged_run_matches_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let one = tmp.path().join("one");
    pipeline(&one, &[]);

    let st = tmp.path().join("staged");
    let period = SynthConfig {
        users: 150,
        weeks: 3,
        ..Default::default()
    }
    .period();
    let (start, end) = (period.start.to_string(), period.end.to_string());
    let synth = st.join("synth");
    let mut args = vec!["synth", "--seed", "11", "--out", s(&synth)];
    args.extend_from_slice(SMALL);
    ok(&args);
    ok(&[
        "ingest",
        "--events",
        s(&synth.join("events.csv")),
        "--favorites",
        s(&synth.join("favorites.csv")),
        "--period-start",
        &start,
        "--period-end",
        &end,
        "--out",
        s(&st.join("ingest")),
    ]);
    let signals = st.join("signals").join("signals");
    ok(&["signals", "--ingest", s(&st.join("ingest")), "--out", s(&signals)]);
    let learn = st.join("learn");
    let mut args = vec!["learn", "--signals", s(&signals), "--seed", "11", "--out", s(&learn)];
    args.extend_from_slice(LEARN);
    ok(&args);
    let dict = st.join("learn").join("dictionary.csv");
    let codes = st.join("embed").join("codes");
    ok(&["embed", "--signals", s(&signals), "--dictionary", s(&dict), "--out", s(&codes)]);
    ok(&[
        "eval",
        "--codes",
        s(&codes),
        "--labels",
        s(&synth.join("labels.csv")),
        "--split",
        s(&st.join("learn").join("split.csv")),
        "--user-summary",
        s(&st.join("ingest").join("user_summary.csv")),
        "--seed",
        "11",
        "--out",
        s(&st.join("eval")),
    ]);
    ok(&["export-atoms", "--dictionary", s(&dict), "--out", s(&st.join("atoms.csv"))]);

    let a = snapshot(&one);
    let b = snapshot(&st);
    assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>());
    for (k, v) in &a {
        assert!(v == &b[k], "{} differs", k.display());
    }
    for stage in ["synth", "ingest", "learn", "eval"] {
        assert!(st.join(stage).join(format!("manifest.{stage}.json")).exists());
    }
}

#[test]
fn thread_count_does_not_change_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("t1");
    let b = tmp.path().join("t3");
    let mut args = vec!["--threads", "1"];
    args.extend(["pipeline", "--seed", "5", "--format", "bin", "--out", s(&a)]);
    args.extend_from_slice(SMALL);
    args.extend_from_slice(LEARN);
    ok(&args);
    args[1] = "3";
    args[8] = s(&b);
    ok(&args);
    assert_eq!(snapshot(&a), snapshot(&b));
    assert!(a.join("learn").join("dictionary.bin").exists());
}

#[test]
fn learn_writes_requested_atom_count() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("p");
    pipeline(&out, &[]);
    let learn_out = tmp.path().join("k32");
    ok(&[
        "learn",
        "--signals",
        s(&out.join("signals").join("signals")),
        "--atoms",
        "32",
        "--iters",
        "2",
        "--out",
        s(&learn_out),
    ]);
    let text = std::fs::read_to_string(learn_out.join("dictionary.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("k,channels,slots,lambda,seed"));
    let meta: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(meta[..3], ["32", "4", "168"]);
    assert_eq!(lines.count(), 32);
}

#[test]
fn manifest_reruns_reproduce_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("p");
    pipeline(&out, &[]);
    let before = snapshot(&out);
    let text = std::fs::read_to_string(out.join("manifest.pipeline.json")).unwrap();
    let manifest: RunManifest = serde_json::from_str(&text).unwrap();
    assert_eq!(manifest.subcommand, "pipeline");
    assert_eq!(manifest.seed, Some(11));
    assert_eq!(manifest.version, env!("CARGO_PKG_VERSION"));
    assert!(manifest.outputs.iter().all(|p| p.exists()));
    std::fs::remove_dir_all(out.join("eval")).unwrap();
    let argv: Vec<&str> = manifest.argv[1..].iter().map(String::as_str).collect();
    ok(&argv);
    assert_eq!(before, snapshot(&out));
}

#[test]
fn usage_errors_exit_2_and_module_errors_exit_1() {
    let out = pace(&["eval", "--codes", "x", "--split", "y", "--user-summary", "z", "--out", "o"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--labels"));
    assert_eq!(pace(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(pace(&["learn", "--bogus"]).status.code(), Some(2));

    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.csv");
    let out = pace(&["ingest", "--events", s(&missing), "--favorites", s(&missing), "--out", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.csv"));
}

#[test]
fn version_and_help_succeed() {
    let out = pace(&["--version"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains(env!("CARGO_PKG_VERSION")));
    let help = pace(&["pipeline", "--help"]);
    assert!(help.status.success());
    let text = String::from_utf8_lossy(&help.stdout);
    for flag in ["--atoms", "--lambda", "--test-frac", "--min-daily-streams", "--min-listen-secs", "--seed"] {
        assert!(text.contains(flag), "help lacks {flag}");
    }
}
