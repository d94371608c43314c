use std::path::Path;
use std::process::{Command, Output};

fn holorepair(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_holorepair"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn synth(dir: &Path, args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_holorepair-synth"))
        .args(args)
        .arg("--out-dir")
        .arg(dir)
        .output()
        .expect("binary runs");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SNIPPET_ARGS: &[&str] = &[
    "--input",
    "data.csv",
    "--dcs",
    "dcs.txt",
    "--dict",
    "addr=dict.csv",
    "--mds",
    "mds.txt",
    "--noisy-cells",
    "noisy.csv",
    "--groundtruth",
    "groundtruth.csv",
];

#[test]
fn repairs_the_snippet_with_config_file() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), &["inspection"]);
    std::fs::write(dir.path().join("run.cfg"), "# tuned\ntau = 0.7\nseed=5\n").unwrap();
    let mut args = SNIPPET_ARGS.to_vec();
    args.extend(["--config", "run.cfg", "--out", "out.csv", "--report", "report.jsonl"]);
    let o = holorepair(dir.path(), &args);
    assert!(o.status.success(), "{}", stderr(&o));
    let got = std::fs::read_to_string(dir.path().join("out.csv")).unwrap();
    let want = std::fs::read_to_string(dir.path().join("corrected.csv")).unwrap();
    assert_eq!(got, want);
    let report = std::fs::read_to_string(dir.path().join("report.jsonl")).unwrap();
    assert!(report.lines().last().unwrap().starts_with("{\"summary\""));
    let err = stderr(&o);
    assert!(err.contains("time: detection"));
    assert!(err.contains("recall 1.0000"));
}

#[test]
fn command_line_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), &["inspection"]);
    std::fs::write(dir.path().join("run.cfg"), "tau=0.7\nmode=factors\ndry-run=true\n").unwrap();
    let mut args = SNIPPET_ARGS.to_vec();
    args.extend(["--config", "run.cfg", "--mode", "feats"]);
    let o = holorepair(dir.path(), &args);
    assert!(o.status.success(), "{}", stderr(&o));
    let err = stderr(&o);
    assert!(err.contains("HARD_DC factors: 0"), "{err}");
    assert!(err.contains("RELAXED_DC"));
    // Dry run: nothing on stdout.
    assert!(o.stdout.is_empty());
}

#[test]
fn dry_run_reports_factor_counts() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), &["inspection"]);
    let o = holorepair(
        dir.path(),
        &["--input", "data.csv", "--dcs", "dcs.txt", "--mode", "factors", "--dry-run", "--dump-rules", "rules.txt"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let err = stderr(&o);
    let line = err.lines().find(|l| l.starts_with("HARD_DC factors:")).unwrap();
    let nums: Vec<usize> = line
        .split(|c: char| !c.is_ascii_digit())
        .filter_map(|s| s.parse().ok())
        .collect();
    assert!(nums[0] > 0 && nums[0] <= nums[1], "{line}");
    let rules = std::fs::read_to_string(dir.path().join("rules.txt")).unwrap();
    assert!(rules.contains("# constraints"));
    assert!(rules.contains("HARD_DC dc0"));
}

#[test]
fn synthetic_run_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), &["synthetic", "--tuples", "300", "--seed", "2"]);
    let run = |out: &str, report: &str, threads: &str| {
        let o = holorepair(
            dir.path(),
            &[
                "--input", "data.csv", "--dcs", "dcs.txt", "--tid-col", "tid", "--groundtruth", "groundtruth.csv",
                "--seed", "2", "--out", out, "--report", report, "--threads", threads,
            ],
        );
        assert!(o.status.success(), "{}", stderr(&o));
    };
    run("a.csv", "a.jsonl", "1");
    run("b.csv", "b.jsonl", "3");
    let read = |n: &str| std::fs::read(dir.path().join(n)).unwrap();
    assert_eq!(read("a.csv"), read("b.csv"));
    assert_eq!(read("a.jsonl"), read("b.jsonl"));
}

#[test]
fn failures_exit_nonzero_with_stage() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), &["inspection"]);
    let o = holorepair(dir.path(), &["--input", "missing.csv", "--dcs", "dcs.txt"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("error: load:"), "{}", stderr(&o));

    std::fs::write(dir.path().join("bad.txt"), "t1&t2&EQ(t1.Nope,t2.Nope)\n").unwrap();
    let o = holorepair(dir.path(), &["--input", "data.csv", "--dcs", "bad.txt"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("error: detect:"), "{}", stderr(&o));

    let o = holorepair(dir.path(), &["--input", "data.csv", "--dcs", "dcs.txt", "--tau", "2"]);
    assert!(!o.status.success());

    let o = holorepair(dir.path(), &["--input", "data.csv", "--dcs", "dcs.txt", "--dict", "oops"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn writes_repaired_table_to_stdout_by_default() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), &["inspection"]);
    let o = holorepair(dir.path(), &["--input", "data.csv", "--dcs", "dcs.txt", "--samples", "100"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = String::from_utf8(o.stdout).unwrap();
    assert!(out.starts_with("DBAName,AKAName,Address,City,State,Zip\n"));
    assert_eq!(out.lines().count(), 5);
}
