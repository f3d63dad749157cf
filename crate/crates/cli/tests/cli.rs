use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command as Process;

use adcf_cli::commands::{self, Evaluation};
use adcf_cli::{run_from, CliError, RunConfig};
use adcf_core::data;
use adcf_core::metrics::CostModel;
use adcf_core::trainer::evaluate_system;
use adcf_core::MlpModel;
use tempfile::TempDir;

fn s(p: &Path) -> String {
    p.display().to_string()
}

fn run(args: &[&str]) -> Result<(), CliError> {
    run_from(std::iter::once("adcf").chain(args.iter().copied()))
}

fn synth_small(dir: &Path) -> PathBuf {
    let out = dir.join("data");
    run(&["synth", "--n-tar", "90", "--n-non", "45", "--n-spf", "45", "--out", &s(&out)]).unwrap();
    out
}

fn train_small(data: &Path, out: &Path, system: &str, extra: &[&str]) {
    let mut args = vec![
        "train".to_string(),
        "--system".into(),
        system.into(),
        "--trn".into(),
        s(&data.join("trn.tsv")),
        "--dev".into(),
        s(&data.join("dev.tsv")),
        "--eval".into(),
        s(&data.join("eval.tsv")),
        "--epochs".into(),
        "3".into(),
        "--hidden".into(),
        "8,4".into(),
        "--batch-size".into(),
        "32".into(),
        "--lr".into(),
        "1e-3".into(),
        "--out".into(),
        s(out),
    ];
    args.extend(extra.iter().map(|a| a.to_string()));
    run(&args.iter().map(String::as_str).collect::<Vec<_>>()).unwrap();
}

fn echoed(dir: &Path) -> RunConfig {
    RunConfig::load(&dir.join("config.toml")).unwrap()
}

#[test]
fn synth_writes_declared_counts_reproducibly() {
    let tmp = TempDir::new().unwrap();
    run(&["synth", "--out", &s(&tmp.path().join("a"))]).unwrap();
    run(&["synth", "--out", &s(&tmp.path().join("b"))]).unwrap();
    let mut total = 0;
    for (name, expected) in [("trn", 2000), ("dev", 500), ("eval", 500)] {
        let a = fs::read(tmp.path().join("a").join(format!("{name}.tsv"))).unwrap();
        let b = fs::read(tmp.path().join("b").join(format!("{name}.tsv"))).unwrap();
        assert_eq!(a, b);
        let set = data::load_trials(tmp.path().join("a").join(format!("{name}.tsv"))).unwrap();
        assert_eq!(set.len(), expected);
        total += set.len();
    }
    assert_eq!(total, 3000);
    let manifest = fs::read_to_string(tmp.path().join("a/manifest.toml")).unwrap();
    assert!(manifest.contains("seed = 0"));

    // the seed flag changes the data
    run(&["synth", "--seed", "9", "--out", &s(&tmp.path().join("c"))]).unwrap();
    assert_ne!(
        fs::read(tmp.path().join("a/trn.tsv")).unwrap(),
        fs::read(tmp.path().join("c/trn.tsv")).unwrap()
    );
}

#[test]
fn synth_rejects_empty_request() {
    let tmp = TempDir::new().unwrap();
    let err = run(&["synth", "--n-tar", "0", "--n-non", "0", "--n-spf", "0", "--out", &s(tmp.path())]);
    assert!(matches!(err, Err(CliError::Validation(_))));
}

#[test]
fn system_presets_resolve_to_their_losses() {
    let tmp = TempDir::new().unwrap();
    let d = synth_small(tmp.path());
    for (sys, loss, mode) in [("s1", "bce", "fixed"), ("s2", "soft-adcf", "fixed"), ("s4", "combined", "optimized")] {
        let out = tmp.path().join(sys);
        train_small(&d, &out, sys, &[]);
        let text = fs::read_to_string(out.join("config.toml")).unwrap();
        assert!(text.contains(&format!("loss_mode = \"{loss}\"")), "{sys}: {text}");
        assert!(text.contains(&format!("threshold_mode = \"{mode}\"")));
        for f in ["model.ckpt", "train_log.jsonl", "dev_scores.tsv", "eval_scores.tsv"] {
            assert!(out.join(f).is_file(), "{sys} {f}");
        }
        if sys != "s4" {
            assert_eq!(MlpModel::load(out.join("model.ckpt")).unwrap().threshold, 0.5);
        }
    }
}

#[test]
fn missing_inputs_are_usage_errors() {
    let tmp = TempDir::new().unwrap();
    let d = synth_small(tmp.path());
    let err = run(&[
        "train",
        "--trn",
        &s(&d.join("trn.tsv")),
        "--dev",
        &s(&d.join("missing.tsv")),
        "--out",
        &s(tmp.path()),
    ]);
    assert!(matches!(err, Err(CliError::Usage(_))));
    let err = run(&["train", "--trn", &s(&d.join("trn.tsv")), "--out", &s(tmp.path())]);
    assert!(matches!(err, Err(CliError::Usage(_))));
    assert!(matches!(run(&["evaluate", "--bogus"]), Err(CliError::Usage(_))));
    assert!(matches!(
        run(&["--config", &s(&tmp.path().join("nope.toml")), "compare", "x"]),
        Err(CliError::Usage(_))
    ));
}

#[test]
fn flags_override_config_file_values() {
    let tmp = TempDir::new().unwrap();
    let d = synth_small(tmp.path());
    let cfg = tmp.path().join("cfg.toml");
    fs::write(
        &cfg,
        format!(
            "seed = 3\n[train]\nsystem = \"s3\"\nepochs = 4\nhidden = [6]\nbatch_size = 50\ntrn = \"{}\"\ndev = \"{}\"\n[cost]\nsetting = 2\n",
            s(&d.join("trn.tsv")),
            s(&d.join("dev.tsv"))
        ),
    )
    .unwrap();
    let out = tmp.path().join("run");
    run(&["--config", &s(&cfg), "--seed", "5", "train", "--epochs", "2", "--pi-tar", "0.6", "--pi-non", "0.4", "--out", &s(&out)])
        .unwrap();
    let e = echoed(&out);
    let t = e.train.unwrap();
    assert_eq!(e.seed, Some(5));
    assert_eq!(t.epochs, Some(2));
    assert_eq!(t.hidden, Some(vec![6]));
    assert_eq!(t.batch_size, Some(50));
    assert_eq!(t.loss_mode, Some(adcf_core::LossMode::Combined));
    let c = e.cost.unwrap();
    assert_eq!((c.c_fa_spf, c.pi_tar, c.pi_non, c.pi_spf), (Some(1.0), Some(0.6), Some(0.4), Some(0.0)));
    let log = fs::read_to_string(out.join("train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 3);
}

#[test]
fn echoed_config_reproduces_the_run() {
    let tmp = TempDir::new().unwrap();
    let d = synth_small(tmp.path());
    let first = tmp.path().join("first");
    train_small(&d, &first, "s4", &["--seed", "7"]);
    let again = tmp.path().join("again");
    run(&["--config", &s(&first.join("config.toml")), "--out", &s(&again), "train"]).unwrap();
    for f in ["model.ckpt", "train_log.jsonl", "dev_scores.tsv", "eval_scores.tsv"] {
        assert_eq!(fs::read(first.join(f)).unwrap(), fs::read(again.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn scoring_copies_labels_and_checks_dims() {
    let tmp = TempDir::new().unwrap();
    let d = synth_small(tmp.path());
    let r = tmp.path().join("r");
    train_small(&d, &r, "s1", &[]);
    let out = tmp.path().join("sc");
    run(&["score", "--checkpoint", &s(&r.join("model.ckpt")), "--trials", &s(&d.join("eval.tsv")), "--out", &s(&out)])
        .unwrap();
    let scored = data::load_scores(out.join("scores.tsv")).unwrap();
    let trials = data::load_trials(d.join("eval.tsv")).unwrap();
    assert_eq!(scored.len(), trials.len());
    for (a, b) in scored.iter().zip(trials.records()) {
        assert_eq!(a.trial_id, b.trial_id);
        assert_eq!(a.label, b.label);
    }
    // identical to the eval scores written by train
    assert_eq!(fs::read(out.join("scores.tsv")).unwrap(), fs::read(r.join("eval_scores.tsv")).unwrap());

    let empty = tmp.path().join("empty.tsv");
    fs::write(&empty, "#adcf-trials v1 d_asv=16 d_cm=8\n").unwrap();
    let out2 = tmp.path().join("sc2");
    run(&["score", "--checkpoint", &s(&r.join("model.ckpt")), "--trials", &s(&empty), "--out", &s(&out2)]).unwrap();
    assert!(data::load_scores(out2.join("scores.tsv")).unwrap().is_empty());

    let wide = tmp.path().join("wide");
    run(&["synth", "--d-asv", "5", "--n-tar", "9", "--n-non", "6", "--n-spf", "6", "--out", &s(&wide)]).unwrap();
    let err = run(&["score", "--checkpoint", &s(&r.join("model.ckpt")), "--trials", &s(&wide.join("dev.tsv")), "--out", &s(&out2)])
        .unwrap_err();
    let msg = err.to_string();
    assert!(matches!(err, CliError::Validation(_)));
    assert!(msg.contains("40") && msg.contains("18"), "{msg}");
}

fn write_scores(path: &Path, rows: &[(&str, f64)]) {
    let mut text = String::new();
    for (i, (label, score)) in rows.iter().enumerate() {
        text.push_str(&format!("t{i}\t{label}\t{score}\n"));
    }
    fs::write(path, text).unwrap();
}

fn read_metrics(dir: &Path) -> toml::Table {
    fs::read_to_string(dir.join("metrics.toml")).unwrap().parse().unwrap()
}

#[test]
fn evaluate_reports_the_worked_example() {
    let tmp = TempDir::new().unwrap();
    let f = tmp.path().join("s.tsv");
    write_scores(&f, &[("target", 0.9), ("target", 0.4), ("nontarget", 0.3), ("spoof", 0.6)]);
    let out = tmp.path().join("ev");
    run(&["evaluate", "--scores", &s(&f), "--out", &s(&out), "--curves", "--normalized"]).unwrap();
    let m = read_metrics(&out);
    assert_eq!(m["min_a_dcf"].as_float(), Some(0.45));
    assert_eq!(m["normalized_min_a_dcf"].as_float(), Some(0.45 / 0.9));
    for name in ["adcf_vs_tau.csv", "det_tar_non.csv", "det_tar_spf.csv"] {
        assert!(out.join(name).is_file(), "{name}");
    }
    let det = fs::read_to_string(out.join("det_tar_non.csv")).unwrap();
    assert_eq!(det.lines().next(), Some("tau,p_fa,p_miss,probit_fa,probit_miss"));
    let curve = fs::read_to_string(out.join("adcf_vs_tau.csv")).unwrap();
    assert_eq!(curve.lines().count(), 1 + 1001);
}

#[test]
fn evaluate_perfect_scores_at_half() {
    let tmp = TempDir::new().unwrap();
    let f = tmp.path().join("s.tsv");
    write_scores(&f, &[("target", 0.9), ("target", 0.8), ("nontarget", 0.1), ("spoof", 0.2)]);
    let out = tmp.path().join("ev");
    run(&["evaluate", "--scores", &s(&f), "--tau", "0.5", "--out", &s(&out)]).unwrap();
    assert_eq!(read_metrics(&out)["a_dcf_at_tau"].as_float(), Some(0.0));
}

#[test]
fn setting_presets_are_loaded() {
    let tmp = TempDir::new().unwrap();
    let f = tmp.path().join("s.tsv");
    write_scores(&f, &[("target", 0.9), ("nontarget", 0.3), ("spoof", 0.95)]);
    let out = tmp.path().join("ev");
    run(&["evaluate", "--scores", &s(&f), "--setting", "2", "--out", &s(&out)]).unwrap();
    let c = echoed(&out).cost.unwrap();
    assert_eq!(
        (c.c_miss_tar, c.c_fa_non, c.c_fa_spf, c.pi_tar, c.pi_non, c.pi_spf),
        (Some(1.0), Some(1.0), Some(1.0), Some(0.5), Some(0.5), Some(0.0))
    );
    // the accepted spoof costs nothing under this prior
    assert_eq!(read_metrics(&out)["min_a_dcf"].as_float(), Some(0.0));
    assert!(matches!(run(&["evaluate", "--scores", &s(&f), "--setting", "4"]), Err(CliError::Usage(_))));
}

#[test]
fn malformed_score_files_report_line_numbers() {
    let tmp = TempDir::new().unwrap();
    let f = tmp.path().join("s.tsv");
    fs::write(&f, "a\ttarget\t0.5\nb\tspoof\tNaN\n").unwrap();
    let err = run(&["evaluate", "--scores", &s(&f), "--out", &s(tmp.path())]).unwrap_err();
    assert!(matches!(err, CliError::Validation(_)));
    assert!(err.to_string().contains(":2:"), "{err}");
}

#[test]
fn score_then_evaluate_matches_in_process_evaluation() {
    let tmp = TempDir::new().unwrap();
    let d = synth_small(tmp.path());
    let r = tmp.path().join("r");
    train_small(&d, &r, "s4", &[]);
    let model = MlpModel::load(r.join("model.ckpt")).unwrap();
    let trials = data::load_trials(d.join("eval.tsv")).unwrap();
    let direct = evaluate_system(&model, &trials, &CostModel::default()).unwrap();

    let sc = tmp.path().join("sc");
    run(&["score", "--checkpoint", &s(&r.join("model.ckpt")), "--trials", &s(&d.join("eval.tsv")), "--out", &s(&sc)])
        .unwrap();
    let ev = tmp.path().join("ev");
    let tau = model.threshold.to_string();
    run(&["evaluate", "--scores", &s(&sc.join("scores.tsv")), "--tau", &tau, "--out", &s(&ev)]).unwrap();
    let m = read_metrics(&ev);
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12;
    assert!(close(m["a_dcf_at_tau"].as_float().unwrap(), direct.a_dcf_at_tau));
    assert!(close(m["min_a_dcf"].as_float().unwrap(), direct.min_a_dcf.cost));
    assert!(close(m["min_a_dcf_tau"].as_float().unwrap(), direct.min_a_dcf.tau));
    assert!(close(m["eer_tar_non"].as_float().unwrap(), direct.eer_tar_non.unwrap()));
    assert!(close(m["eer_tar_spf"].as_float().unwrap(), direct.eer_tar_spf.unwrap()));
}

#[test]
fn compare_ranks_runs_and_reports_missing_artifacts() {
    let tmp = TempDir::new().unwrap();
    let d = synth_small(tmp.path());
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    train_small(&d, &a, "s1", &[]);
    train_small(&d, &b, "s4", &[]);
    let broken = tmp.path().join("broken");
    fs::create_dir_all(&broken).unwrap();

    let out = tmp.path().join("cmp");
    run(&["compare", &s(&a), &s(&a), &s(&b), &s(&broken), "--out", &s(&out)]).unwrap();
    let cmp = commands::compare_runs(&[a.clone(), a.clone(), b.clone(), broken.clone()], &CostModel::default());
    assert_eq!(cmp.rows.len(), 3);
    let (x, y) = (&cmp.rows[0], &cmp.rows[1]);
    assert_eq!(
        (x.tau, x.dev_a_dcf, x.eval_a_dcf, x.eval_min_a_dcf),
        (y.tau, y.dev_a_dcf, y.eval_a_dcf, y.eval_min_a_dcf)
    );
    assert_eq!(cmp.skipped.len(), 1);
    assert!(cmp.skipped[0].1.contains("model.ckpt"));
    let best = cmp.rows.iter().min_by(|p, q| p.eval_a_dcf.total_cmp(&q.eval_a_dcf)).unwrap();
    assert_eq!(best.rank, 1);
    assert_eq!(cmp.rows.iter().filter(|r| r.rank == 1).count(), 1);

    let csv = fs::read_to_string(out.join("compare.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    let table = fs::read_to_string(out.join("compare.txt")).unwrap();
    assert_eq!(table.matches('*').count(), 1);
    assert!(table.contains("skipped"));

    assert!(matches!(run(&["compare", &s(&broken), "--out", &s(&out)]), Err(CliError::Io(_))));
}

#[test]
fn evaluation_skips_eer_for_absent_classes() {
    let scores = adcf_core::ScoreSet::new(vec![0.9], vec![0.1], vec![]).unwrap();
    let ev: Evaluation = commands::evaluate(&scores, None, &CostModel::default(), false).unwrap();
    assert!(ev.eer_tar_spf.is_none());
    assert_eq!(ev.eer_tar_non, Some(0.0));
}

#[test]
fn binary_exit_codes() {
    let tmp = TempDir::new().unwrap();
    let bin = env!("CARGO_BIN_EXE_adcf");
    let code = |args: &[&str]| Process::new(bin).args(args).output().unwrap().status.code();
    let data_dir = tmp.path().join("d");
    assert_eq!(code(&["synth", "--n-tar", "9", "--n-non", "6", "--n-spf", "6", "--out", &s(&data_dir)]), Some(0));
    assert_eq!(code(&["--help"]), Some(0));
    assert_eq!(code(&["frobnicate"]), Some(2));
    assert_eq!(code(&["train", "--trn", &s(&data_dir.join("trn.tsv")), "--dev", "/no/such/file"]), Some(2));
    assert_eq!(code(&["synth", "--n-tar", "0", "--n-non", "0", "--n-spf", "0", "--out", &s(tmp.path())]), Some(4));
    // an output directory that cannot be created
    let blocker = tmp.path().join("file");
    fs::write(&blocker, "x").unwrap();
    assert_eq!(code(&["synth", "--n-tar", "9", "--n-non", "6", "--n-spf", "6", "--out", &s(&blocker.join("sub"))]), Some(3));
}
