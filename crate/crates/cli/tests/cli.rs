use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use inverse_mcmc::analysis::ks_statistic;
use inverse_mcmc::ProbeMatrix;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_inverse-mcmc"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read_probe(path: &Path) -> ProbeMatrix {
    ProbeMatrix::read_csv(fs::File::open(path).unwrap()).unwrap()
}

/// Value of a `name: value` report line with a scientific-notation value.
fn report_value(text: &str, prefix: &str) -> f64 {
    let line = text
        .lines()
        .find(|l| l.starts_with(prefix))
        .unwrap_or_else(|| panic!("no {prefix} in {text}"));
    line.rsplit(": ").next().unwrap().trim().parse().unwrap()
}

#[test]
fn toy_default_reports_exact_stationary_laws() {
    let o = run(&["toy"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("naive stationary: (0.818181818182, 0.090909090909, 0.090909090909)"));
    assert!(text.contains("naive pushforward: (0.818181818182, 0.181818181818)"));
    assert!(text.contains("modified pushforward: (0.900000000000, 0.100000000000)"));
    assert!(report_value(&text, "modified max |pushforward - target|") <= 1e-12);
}

#[test]
fn toy_simulation_matches_exact_frequencies() {
    let o = run(&["toy", "--simulate", "1e6", "--seed", "7"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(report_value(&text, "naive max |simulated - exact|") < 0.01);
    assert!(report_value(&text, "modified max |simulated - exact|") < 0.01);
}

#[test]
fn toy_writes_report_and_manifest_and_replays() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let o = run(&[
        "toy",
        "--simulate",
        "1000",
        "--out-dir",
        a.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let manifest = fs::read_to_string(a.join("manifest.txt")).unwrap();
    assert!(manifest.contains("subcommand=toy\n"));
    assert!(manifest.contains("param.simulate=1000\n"));

    let b = dir.path().join("b");
    let o = run(&[
        "replay",
        a.join("manifest.txt").to_str().unwrap(),
        "--out",
        b.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(
        fs::read(a.join("toy_report.txt")).unwrap(),
        fs::read(b.join("toy_report.txt")).unwrap()
    );
}

#[test]
fn toy_rejects_bad_flags() {
    assert_eq!(run(&["toy", "--simulate", "lots"]).status.code(), Some(2));
    assert_eq!(run(&["toy", "--simulate", "0"]).status.code(), Some(2));
    assert_eq!(run(&["toy", "--tolerance", "-1"]).status.code(), Some(2));
    // an impossible tolerance makes the check itself fail
    assert_eq!(run(&["toy", "--tolerance", "0"]).status.code(), Some(1));
}

#[test]
fn probe_square_matches_sqrt_cdf() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("square.csv");
    let o = run(&[
        "probe",
        "--model",
        "square",
        "--lower",
        "-1",
        "--upper",
        "1",
        "--count",
        "1e5",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let m = read_probe(&out);
    assert_eq!(m.n_rows(), 100_000);
    let q: Vec<f64> = m.column(0).collect();
    let ks = ks_statistic(&q, |v| v.clamp(0.0, 1.0).sqrt()).unwrap();
    assert!(ks < 0.01, "{ks}");

    let summary = fs::read_to_string(dir.path().join("square.csv.summary.csv")).unwrap();
    assert!(summary.starts_with("metric,value\nrows,100000\ndropped,0\n"));
    assert!(dir.path().join("square.csv.manifest").exists());
}

#[test]
fn probe_count_zero_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.csv");
    let o = run(&[
        "probe",
        "--model",
        "square",
        "--lower",
        "-1",
        "--upper",
        "1",
        "--count",
        "0",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn probe_box_dimension_errors_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.csv");
    let o = run(&[
        "probe",
        "--model",
        "identity",
        "--lower",
        "0,0",
        "--upper",
        "1,1,1",
        "--count",
        "5",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&[
        "probe",
        "--lower",
        "0",
        "--upper",
        "1",
        "--count",
        "5",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn external_cat_equals_builtin_identity_for_any_job_count() {
    let dir = tempfile::tempdir().unwrap();
    let builtin = dir.path().join("identity.csv");
    let o = run(&[
        "probe",
        "--model",
        "identity",
        "--lower",
        "0",
        "--upper",
        "1",
        "--count",
        "1e4",
        "--out",
        builtin.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    for jobs in ["1", "3"] {
        let out = dir.path().join(format!("cat{jobs}.csv"));
        let o = run(&[
            "--jobs",
            jobs,
            "probe",
            "--command",
            "cat",
            "--lower",
            "0",
            "--upper",
            "1",
            "--count",
            "1e4",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        assert_eq!(fs::read(&out).unwrap(), fs::read(&builtin).unwrap());
    }
    let m = read_probe(&builtin);
    let mean = m.column(0).sum::<f64>() / m.n_rows() as f64;
    assert!((mean - 0.5).abs() < 0.01, "{mean}");
}

#[test]
fn external_model_in_two_dimensions() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sum.csv");
    let o = run(&[
        "probe",
        "--command",
        "awk '{print $1+$2, $1*$2}'",
        "--lower",
        "0,1",
        "--upper",
        "1,2",
        "--count",
        "200",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let m = read_probe(&out);
    assert_eq!((m.n_rows(), m.dim()), (200, 2));
    assert!(m.column(0).all(|s| (1.0..=3.0).contains(&s)));
}

#[test]
fn external_failures_name_lines() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bad.csv");
    let o = run(&[
        "probe",
        "--command",
        "awk 'NR==5{print \"oops\"; next}{print $1}'",
        "--lower",
        "0",
        "--upper",
        "1",
        "--count",
        "10",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 5"), "{}", stderr(&o));

    let o = run(&[
        "probe",
        "--command",
        "exit 4",
        "--lower",
        "0",
        "--upper",
        "1",
        "--count",
        "10",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("exited"), "{}", stderr(&o));
}

#[test]
fn external_non_finite_rows_are_dropped_and_counted() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("nan.csv");
    let o = run(&[
        "probe",
        "--command",
        "awk 'NR%4==0{print \"NaN\"; next}{print $1}'",
        "--lower",
        "0",
        "--upper",
        "1",
        "--count",
        "20",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(read_probe(&out).n_rows(), 15);
    assert!(stdout(&o).contains("dropped,5"));
}

const SMALL_GBM: [&str; 6] = [
    "--total-steps",
    "6000",
    "--burn-in",
    "1000",
    "--thinning",
    "10",
];

fn gbm(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["gbm"];
    args.extend_from_slice(&SMALL_GBM);
    args.extend_from_slice(extra);
    args.extend_from_slice(&["--out-dir", dir.to_str().unwrap()]);
    run(&args)
}

const GBM_FILES: [&str; 14] = [
    "paths.csv",
    "metrics.csv",
    "pdf_t0.1.csv",
    "pdf_t0.5.csv",
    "pdf_t1.csv",
    "analytic_pdf_t0.1.csv",
    "analytic_pdf_t0.5.csv",
    "analytic_pdf_t1.csv",
    "autocorr_s0.1.csv",
    "autocorr_s0.5.csv",
    "autocorr_s1.csv",
    "analytic_autocorr_s0.1.csv",
    "analytic_autocorr_s0.5.csv",
    "analytic_autocorr_s1.csv",
];

#[test]
fn gbm_runs_are_deterministic_and_replayable() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (
        dir.path().join("a"),
        dir.path().join("b"),
        dir.path().join("c"),
    );
    assert_eq!(gbm(&a, &["--seed", "3"]).status.code(), Some(0));
    assert_eq!(
        gbm(&b, &["--seed", "3", "--jobs", "2"]).status.code(),
        Some(0)
    );
    let o = run(&[
        "replay",
        a.join("manifest.txt").to_str().unwrap(),
        "--out",
        c.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for f in GBM_FILES {
        let first = fs::read(a.join(f)).unwrap_or_else(|_| panic!("missing {f}"));
        assert_eq!(first, fs::read(b.join(f)).unwrap(), "{f}");
        assert_eq!(first, fs::read(c.join(f)).unwrap(), "{f}");
    }
    let paths = fs::read_to_string(a.join("paths.csv")).unwrap();
    let mut lines = paths.lines();
    assert!(lines.next().unwrap().starts_with("chain,step,x_0,x_1,"));
    assert_eq!(lines.count(), 500);

    let manifest = fs::read_to_string(a.join("manifest.txt")).unwrap();
    for key in [
        "param.mu=1\n",
        "param.proposal-half-width=0.2\n",
        "param.total-steps=6000\n",
        "param.seed=3\n",
    ] {
        assert!(manifest.contains(key), "{key}");
    }
    assert!(manifest.contains("started_unix=") && manifest.contains("finished_unix="));
}

#[test]
fn gbm_chains_flag_runs_independent_chains() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(gbm(dir.path(), &["--chains", "2"]).status.code(), Some(0));
    let paths = fs::read_to_string(dir.path().join("paths.csv")).unwrap();
    assert_eq!(paths.lines().filter(|l| l.starts_with("1,")).count(), 500);
}

#[test]
fn gbm_usage_and_io_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        gbm(&dir.path().join("u"), &["--pdf-times", "0.123"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        gbm(&dir.path().join("u"), &["--sigma", "0"]).status.code(),
        Some(2)
    );
    assert_eq!(
        gbm(&dir.path().join("u"), &["--thinning", "0"])
            .status
            .code(),
        Some(2)
    );
    let file = dir.path().join("file");
    fs::write(&file, "x").unwrap();
    assert_eq!(gbm(&file.join("sub"), &[]).status.code(), Some(3));
}

#[test]
fn gbm_max_l1_gate() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        gbm(dir.path(), &["--max-l1", "1e-9"]).status.code(),
        Some(1)
    );
}

#[test]
fn gbm_desk_scale_preset_meets_l1_bound() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "gbm",
        "--total-steps",
        "600000",
        "--burn-in",
        "100000",
        "--thinning",
        "50",
        "--max-l1",
        "0.1",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    for f in GBM_FILES {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    assert!(stdout(&o).contains("samples,10000\n"));
}
