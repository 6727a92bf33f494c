//! End-to-end tests of the `eroc` binary: exit codes, precedence and
//! reproducibility of outputs.

mod common;

use std::path::Path;
use std::process::{Command, Output};

use eroc_core::config::preset_source;
use eroc_core::experiment::{curve_file, scores_file, ResultManifest, MANIFEST_FILE, TEST_SET_FILE};
use eroc_core::observers::{read_scores_csv, ObserverKind};
use eroc_core::sim::Dataset;

fn eroc(args: &[&str]) -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_eroc"));
    cmd.args(args);
    for var in ["EROC_CONFIG", "EROC_SEED", "EROC_THREADS", "EROC_PROFILE", "EROC_OUT"] {
        cmd.env_remove(var);
    }
    cmd.env("RUST_LOG", "warn");
    cmd
}

fn run(mut cmd: Command) -> Output {
    cmd.output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_writes_a_verifiable_result_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("bke");
    let out = run(eroc(&["run", "--preset", "bke", "--out", path_str(&dir)]));
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("analytic-io"));
    let m = ResultManifest::read(&dir.join(MANIFEST_FILE)).unwrap();
    assert_eq!(m.profile.as_deref(), Some("desk"));
    assert!(m.equal_priors);
    assert!(dir.join(scores_file(ObserverKind::AnalyticIo)).exists());
    assert!(dir.join(curve_file(ObserverKind::AnalyticIo)).exists());
    assert!(!tmp.path().join("bke.partial").exists());

    let out = run(eroc(&["verify", path_str(&dir)]));
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    assert!(stdout(&out).contains("PASS analytic-io"));
}

#[test]
fn verify_reports_a_missed_target() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("strict.toml");
    let src = preset_source("bke-analytic")
        .unwrap()
        .replace("aeroc = 0.570", "aeroc = 0.900");
    std::fs::write(&cfg, src).unwrap();
    let dir = tmp.path().join("strict");
    let out = run(eroc(&["verify", "--config", path_str(&cfg), "--out", path_str(&dir)]));
    assert_eq!(code(&out), 4, "{}", stderr(&out));
    assert!(stdout(&out).contains("MISS analytic-io"));
}

#[test]
fn outputs_are_byte_identical_across_runs_and_thread_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert_eq!(
        code(&run(eroc(&[
            "run",
            "--preset",
            "bke",
            "--threads",
            "1",
            "--out",
            path_str(&a)
        ]))),
        0
    );
    assert_eq!(
        code(&run(eroc(&[
            "run",
            "--preset",
            "bke",
            "--threads",
            "2",
            "--out",
            path_str(&b)
        ]))),
        0
    );
    for file in [
        scores_file(ObserverKind::AnalyticIo),
        curve_file(ObserverKind::AnalyticIo),
        TEST_SET_FILE.to_string(),
    ] {
        assert_eq!(
            std::fs::read(a.join(&file)).unwrap(),
            std::fs::read(b.join(&file)).unwrap(),
            "{file}"
        );
    }
}

#[test]
fn staged_commands_match_the_one_shot_run() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    assert_eq!(
        code(&run(eroc(&["run", "--preset", "bke", "--out", path_str(&dir)]))),
        0
    );

    let images = tmp.path().join("images.bin");
    let scores = tmp.path().join("scores.csv");
    let curve = tmp.path().join("curve.csv");
    let out = run(eroc(&["generate", "--preset", "bke", "--out", path_str(&images)]));
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let out = run(eroc(&[
        "score",
        "--preset",
        "bke",
        "--observer",
        "analytic-io",
        "--images",
        path_str(&images),
        "--out",
        path_str(&scores),
    ]));
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let out = run(eroc(&[
        "eroc",
        "--scores",
        path_str(&scores),
        "--out",
        path_str(&curve),
    ]));
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    assert_eq!(
        std::fs::read(&images).unwrap(),
        std::fs::read(dir.join(TEST_SET_FILE)).unwrap()
    );
    assert_eq!(
        std::fs::read(&scores).unwrap(),
        std::fs::read(dir.join(scores_file(ObserverKind::AnalyticIo))).unwrap()
    );
    assert_eq!(
        std::fs::read(&curve).unwrap(),
        std::fs::read(dir.join(curve_file(ObserverKind::AnalyticIo))).unwrap()
    );
}

#[test]
fn constant_utility_reports_the_auc() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    assert_eq!(
        code(&run(eroc(&["run", "--preset", "bke", "--out", path_str(&dir)]))),
        0
    );
    let scores = dir.join(scores_file(ObserverKind::AnalyticIo));
    let out = run(eroc(&[
        "eroc",
        "--scores",
        path_str(&scores),
        "--utility",
        "constant",
        "--resamples",
        "200",
    ]));
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    let reported: f64 = text
        .strip_prefix("AUC ")
        .and_then(|s| s.split_whitespace().next())
        .and_then(|s| s.parse().ok())
        .unwrap_or_else(|| panic!("unexpected output: {text}"));
    let table = read_scores_csv(&scores, "analytic-io").unwrap();
    let present: Vec<f64> = table.rows.iter().filter(|r| r.label).map(|r| r.t).collect();
    let absent: Vec<f64> = table.rows.iter().filter(|r| !r.label).map(|r| r.t).collect();
    assert!((reported - common::wmw_auc(&present, &absent)).abs() <= 5e-5);
}

#[test]
fn generate_count_sets_images_per_class() {
    let tmp = tempfile::tempdir().unwrap();
    let file = tmp.path().join("lb.bin");
    let out = run(eroc(&[
        "generate",
        "--preset",
        "lb",
        "--count",
        "100",
        "--sidecar",
        "--out",
        path_str(&file),
    ]));
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let ds = Dataset::read(&file).unwrap();
    assert_eq!(ds.len(), 200);
    assert_eq!(ds.count_present(), 100);
    assert_eq!((ds.width, ds.height), (64, 64));
    let sidecar = std::fs::read_to_string(file.with_extension("jsonl")).unwrap();
    assert_eq!(sidecar.lines().count(), 200);
}

#[test]
fn dry_run_prints_the_plan_and_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("lb");
    let out = run(eroc(&["run", "--preset", "lb", "--dry-run", "--out", path_str(&dir)]));
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("plan for `lb-quadratic-200`"), "{text}");
    assert!(text.contains("hybrid"), "{text}");
    assert!(!dir.exists());
    assert!(std::fs::read_dir(tmp.path()).unwrap().next().is_none());
}

#[test]
fn flags_override_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let generate = |name: &str, env_seed: Option<&str>, flag_seed: Option<&str>| {
        let file = tmp.path().join(name);
        let mut cmd = eroc(&["generate", "--count", "5"]);
        cmd.env("EROC_CONFIG", "bke").env("EROC_OUT", &file);
        if let Some(s) = env_seed {
            cmd.env("EROC_SEED", s);
        }
        if let Some(s) = flag_seed {
            cmd.args(["--seed", s]);
        }
        let out = run(cmd);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        std::fs::read(file).unwrap()
    };
    let env_only = generate("env.bin", Some("5"), None);
    let both = generate("both.bin", Some("5"), Some("6"));
    let flag_only = generate("flag.bin", None, Some("6"));
    assert_eq!(both, flag_only);
    assert_ne!(env_only, flag_only);
}

#[test]
fn config_errors_exit_with_code_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(eroc(&["run", "--config", "no-such-preset", "--dry-run"]));
    assert_eq!(code(&out), 2);

    let bad = tmp.path().join("bad.toml");
    std::fs::write(
        &bad,
        preset_source("bke-analytic")
            .unwrap()
            .replace("std = 40.0", "std = -1.0"),
    )
    .unwrap();
    let out = run(eroc(&["run", "--config", path_str(&bad), "--dry-run"]));
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("noise"), "{}", stderr(&out));

    let out = run(eroc(&[
        "run",
        "--preset",
        "bke",
        "--profile",
        "paper",
        "--seed",
        "18446744073709551615",
        "--dry-run",
    ]));
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("seed"), "{}", stderr(&out));

    let out = run(eroc(&["run", "--dry-run"]));
    assert_eq!(code(&out), 2);
}

#[test]
fn missing_artifacts_exit_with_code_three() {
    let tmp = tempfile::tempdir().unwrap();
    let absent = tmp.path().join("absent.csv");
    let out = run(eroc(&["eroc", "--scores", path_str(&absent)]));
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("eroc score"), "{}", stderr(&out));

    let out = run(eroc(&[
        "score",
        "--preset",
        "bke",
        "--observer",
        "analytic-io",
        "--images",
        path_str(&tmp.path().join("absent.bin")),
    ]));
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("eroc generate"), "{}", stderr(&out));

    let out = run(eroc(&["verify", path_str(&tmp.path().join("nowhere"))]));
    assert_eq!(code(&out), 3);
}

#[test]
fn report_writes_summary_and_plot_script() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert_eq!(code(&run(eroc(&["run", "--preset", "bke", "--out", path_str(&a)]))), 0);
    assert_eq!(
        code(&run(eroc(&[
            "run",
            "--preset",
            "bke",
            "--seed",
            "7",
            "--out",
            path_str(&b)
        ]))),
        0
    );
    let rep = tmp.path().join("report");
    let out = run(eroc(&["report", path_str(&a), path_str(&b), "--out", path_str(&rep)]));
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let summary = std::fs::read_to_string(rep.join("summary.txt")).unwrap();
    assert_eq!(summary, stdout(&out));
    assert!(summary.lines().next().unwrap().contains("analytic-io"), "{summary}");
    assert_eq!(summary.matches("bke-analytic").count(), 2, "{summary}");
    let plot = std::fs::read_to_string(rep.join("plot.gp")).unwrap();
    assert_eq!(plot.matches("with steps").count(), 2);
}
