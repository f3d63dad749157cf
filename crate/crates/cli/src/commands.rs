use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use adcf_core::data::{self, ScoreRecord};
use adcf_core::metrics::{self, ClassPair, CostModel, DetCurve, ScoreSet, ThresholdGrid};
use adcf_core::trainer::{self, System};
use adcf_core::{MlpModel, SynthSpec, TrialSet};
use serde::Serialize;

use crate::args::{CompareArgs, EvaluateArgs, ScoreArgs, SynthArgs, TrainArgs};
use crate::config::{self, CostSection, RunConfig};
use crate::error::{io_at, CliError, CliResult};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";
pub const CONFIG_FILE: &str = "config.toml";
pub const DEV_SCORES_FILE: &str = "dev_scores.tsv";
pub const EVAL_SCORES_FILE: &str = "eval_scores.tsv";
pub const SPLIT_NAMES: [&str; 3] = ["trn", "dev", "eval"];

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_at(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| io_at(path, e))
}

fn out_dir(flag: Option<&Path>, file: &RunConfig, default: impl Into<PathBuf>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| file.out.clone())
        .unwrap_or_else(|| default.into())
}

fn load_trials(path: &Path) -> CliResult<TrialSet> {
    data::load_trials(path).map_err(|e| CliError::at(path, e))
}

fn load_score_set(path: &Path) -> CliResult<(Vec<ScoreRecord>, ScoreSet)> {
    let records = data::load_scores(path).map_err(|e| CliError::at(path, e))?;
    let set = data::score_set(&records).map_err(|e| CliError::at(path, e))?;
    Ok((records, set))
}

/// Scores trials in file order.
pub fn score_records(model: &MlpModel, trials: &TrialSet) -> CliResult<Vec<ScoreRecord>> {
    if model.input_dim() != trials.input_dim() {
        return Err(CliError::Validation(format!(
            "checkpoint expects input dimension {} but the trial file has dimension {} \
             (2 x d_asv {} + d_cm {})",
            model.input_dim(),
            trials.input_dim(),
            trials.d_asv,
            trials.d_cm
        )));
    }
    if trials.is_empty() {
        return Ok(Vec::new());
    }
    let scores = model.forward_batch(&trials.features())?;
    Ok(trials
        .records()
        .iter()
        .zip(scores)
        .map(|(r, score)| ScoreRecord {
            trial_id: r.trial_id.clone(),
            label: r.label,
            score,
        })
        .collect())
}

#[derive(Serialize)]
struct Manifest<'a> {
    seed: u64,
    fractions: &'a [f64],
    synth: &'a SynthSpec,
    splits: Vec<ManifestSplit>,
}

#[derive(Serialize)]
struct ManifestSplit {
    name: String,
    file: String,
    n_tar: usize,
    n_non: usize,
    n_spf: usize,
}

pub fn cmd_synth(file: &RunConfig, args: &SynthArgs, seed: Option<u64>, out: Option<&Path>) -> CliResult<PathBuf> {
    let (spec, fractions) = config::resolve_synth(file, args, seed)?;
    let out = out_dir(out, file, "data");
    let all = data::generate_synthetic(&spec)?;
    let parts = data::split(&all, &fractions, spec.seed)?;
    if parts.len() != 3 {
        return Err(CliError::Validation(format!(
            "expected trn,dev,eval fractions, got {} values",
            fractions.len()
        )));
    }

    let mut splits = Vec::new();
    for (name, part) in SPLIT_NAMES.iter().zip(&parts) {
        let file_name = format!("{name}.tsv");
        write_file(&out.join(&file_name), data::format_trials(part))?;
        let (n_tar, n_non, n_spf) = part.counts();
        splits.push(ManifestSplit {
            name: name.to_string(),
            file: file_name,
            n_tar,
            n_non,
            n_spf,
        });
    }
    let manifest = Manifest {
        seed: spec.seed,
        fractions: &fractions,
        synth: &spec,
        splits,
    };
    let manifest = toml::to_string_pretty(&manifest).expect("manifest serializes");
    write_file(&out.join("manifest.toml"), manifest)?;

    let echo = RunConfig {
        command: Some("synth".into()),
        seed: Some(spec.seed),
        out: Some(out.clone()),
        synth: Some(spec),
        split: Some(config::SplitSection {
            fractions: Some(fractions),
        }),
        ..RunConfig::default()
    };
    write_file(&out.join(CONFIG_FILE), echo.to_toml())?;
    for (name, part) in SPLIT_NAMES.iter().zip(&parts) {
        let (t, n, s) = part.counts();
        println!("{name}: {} trials (target {t}, nontarget {n}, spoof {s})", part.len());
    }
    println!("wrote {}", out.display());
    Ok(out)
}

pub fn cmd_train(file: &RunConfig, args: &TrainArgs, seed: Option<u64>, out: Option<&Path>) -> CliResult<PathBuf> {
    let plan = config::resolve_train(file, args, seed)?;
    let out = out_dir(out, file, format!("runs/{}", plan.system));
    let trn = load_trials(&plan.trn)?;
    let dev = load_trials(&plan.dev)?;
    let eval = plan.eval.as_deref().map(load_trials).transpose()?;

    write_file(&out.join(CONFIG_FILE), plan.echo(&out).to_toml())?;
    let (model, report) = trainer::train(&trn, &dev, &plan.config)?;
    model
        .save(out.join(CHECKPOINT_FILE))
        .map_err(|e| CliError::at(&out.join(CHECKPOINT_FILE), e))?;
    write_file(&out.join(TRAIN_LOG_FILE), report.to_jsonl()?)?;
    write_file(
        &out.join(DEV_SCORES_FILE),
        data::format_scores(&score_records(&model, &dev)?),
    )?;

    let s = &report.summary;
    let metric = match plan.config.selection_metric {
        trainer::CostObjective::SoftAdcf => "soft a-DCF",
        trainer::CostObjective::HardAdcf => "a-DCF",
    };
    match (s.best_epoch, s.best_dev_metric) {
        (Some(epoch), Some(m)) => println!(
            "{}: best epoch {epoch} of {}, dev {metric} {m:.6} at tau {:.3}",
            plan.system, s.epochs_run, s.best_tau
        ),
        _ => println!(
            "{}: no epoch improved the dev {metric}; threshold left at {}",
            plan.system, s.best_tau
        ),
    }
    if let Some(eval) = eval {
        let records = score_records(&model, &eval)?;
        write_file(&out.join(EVAL_SCORES_FILE), data::format_scores(&records))?;
        let ev = trainer::evaluate_system(&model, &eval, &plan.config.cost_model)?;
        println!(
            "eval a-DCF {:.6} at tau {:.3} (min a-DCF {:.6})",
            ev.a_dcf_at_tau, ev.tau, ev.min_a_dcf.cost
        );
    }
    Ok(out)
}

pub fn cmd_score(file: &RunConfig, args: &ScoreArgs, out: Option<&Path>) -> CliResult<PathBuf> {
    let section = file.score.clone().unwrap_or_default();
    let ckpt = config::required_input("checkpoint", args.checkpoint.clone().or(section.checkpoint))?;
    let trials_path = config::required_input("trials", args.trials.clone().or(section.trials))?;
    let out = out_dir(out, file, "scores");
    let model = MlpModel::load(&ckpt).map_err(|e| CliError::at(&ckpt, e))?;
    let trials = load_trials(&trials_path)?;
    let records = score_records(&model, &trials)?;
    let path = out.join("scores.tsv");
    write_file(&path, data::format_scores(&records))?;
    let echo = RunConfig {
        command: Some("score".into()),
        out: Some(out.clone()),
        score: Some(config::ScoreSection {
            checkpoint: Some(ckpt),
            trials: Some(trials_path),
        }),
        ..RunConfig::default()
    };
    write_file(&out.join(CONFIG_FILE), echo.to_toml())?;
    println!("scored {} trials -> {}", records.len(), path.display());
    Ok(path)
}

/// Everything `adcf evaluate` reports, as written to `metrics.toml`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Evaluation {
    pub n_tar: usize,
    pub n_non: usize,
    pub n_spf: usize,
    pub tau: Option<f64>,
    pub a_dcf_at_tau: Option<f64>,
    pub min_a_dcf: f64,
    pub min_a_dcf_tau: f64,
    pub eer_tar_non: Option<f64>,
    pub eer_tar_spf: Option<f64>,
    pub normalized_a_dcf_at_tau: Option<f64>,
    pub normalized_min_a_dcf: Option<f64>,
}

pub fn evaluate(scores: &ScoreSet, tau: Option<f64>, cm: &CostModel, normalized: bool) -> CliResult<Evaluation> {
    let min = metrics::min_a_dcf(scores, cm)?;
    let at_tau = tau
        .map(|t| metrics::hard_error_rates(scores, t).map(|r| metrics::a_dcf(&r, cm)))
        .transpose()?;
    let eer = |pair| {
        (!scores.tar().is_empty() && !scores.class(ClassPair::negative(pair)).is_empty())
            .then(|| metrics::eer(scores, pair))
            .transpose()
    };
    let norm = cm.normalizer();
    let normalize = |v: f64| -> CliResult<f64> {
        if norm > 0.0 {
            Ok(v / norm)
        } else {
            Err(CliError::Validation("cost model has a zero normalizer".into()))
        }
    };
    Ok(Evaluation {
        n_tar: scores.tar().len(),
        n_non: scores.non().len(),
        n_spf: scores.spf().len(),
        tau,
        a_dcf_at_tau: at_tau,
        min_a_dcf: min.cost,
        min_a_dcf_tau: min.tau,
        eer_tar_non: eer(ClassPair::TarNon)?,
        eer_tar_spf: eer(ClassPair::TarSpf)?,
        normalized_a_dcf_at_tau: if normalized { at_tau.map(normalize).transpose()? } else { None },
        normalized_min_a_dcf: if normalized { Some(normalize(min.cost)?) } else { None },
    })
}

fn adcf_curve_csv(scores: &ScoreSet, cm: &CostModel, grid: &ThresholdGrid) -> CliResult<String> {
    let mut csv = String::from("tau,a_dcf\n");
    for (t, c) in metrics::a_dcf_vs_threshold(scores, cm, &grid.points())? {
        writeln!(csv, "{t},{c}").unwrap();
    }
    Ok(csv)
}

pub fn det_csv(curve: &DetCurve) -> String {
    let mut csv = String::from("tau,p_fa,p_miss,probit_fa,probit_miss\n");
    for p in &curve.points {
        writeln!(csv, "{},{},{},{},{}", p.tau, p.p_fa, p.p_miss, p.probit_fa, p.probit_miss).unwrap();
    }
    csv
}

pub fn cmd_evaluate(file: &RunConfig, args: &EvaluateArgs, out: Option<&Path>) -> CliResult<Evaluation> {
    let section = file.evaluate.clone().unwrap_or_default();
    let scores_path = config::required_input("scores", args.scores.clone().or(section.scores.clone()))?;
    let tau = args.tau.or(section.tau);
    let normalized = args.normalized || section.normalized.unwrap_or(false);
    let curves = args.curves || section.curves.unwrap_or(false);
    let cm = config::resolve_cost(file.cost.as_ref(), &args.cost)?;
    let grid = config::resolve_eval_grid(file.evaluate.as_ref(), &args.grid);
    grid.validate().map_err(|e| CliError::Validation(e.to_string()))?;
    let out = out_dir(out, file, "evaluation");

    let (_, scores) = load_score_set(&scores_path)?;
    let ev = evaluate(&scores, tau, &cm, normalized)?;

    println!("trials: target {}, nontarget {}, spoof {}", ev.n_tar, ev.n_non, ev.n_spf);
    if let (Some(t), Some(c)) = (ev.tau, ev.a_dcf_at_tau) {
        println!("a-DCF at tau {t}: {c:.6}");
    }
    println!("min a-DCF: {:.6} at tau* {}", ev.min_a_dcf, ev.min_a_dcf_tau);
    if let Some(v) = ev.normalized_a_dcf_at_tau {
        println!("normalized a-DCF at tau: {v:.6}");
    }
    if let Some(v) = ev.normalized_min_a_dcf {
        println!("normalized min a-DCF: {v:.6}");
    }
    let fmt_eer = |e: Option<f64>| e.map_or("n/a (empty class)".to_string(), |v| format!("{v:.6}"));
    println!("EER target/nontarget: {}", fmt_eer(ev.eer_tar_non));
    println!("EER target/spoof: {}", fmt_eer(ev.eer_tar_spf));

    write_file(&out.join("metrics.toml"), toml::to_string_pretty(&ev).expect("metrics serialize"))?;
    if curves {
        write_file(&out.join("adcf_vs_tau.csv"), adcf_curve_csv(&scores, &cm, &grid)?)?;
        for (pair, name) in [(ClassPair::TarNon, "det_tar_non.csv"), (ClassPair::TarSpf, "det_tar_spf.csv")] {
            match metrics::det_curve(&scores, pair) {
                Ok(curve) => write_file(&out.join(name), det_csv(&curve))?,
                Err(e) => eprintln!("skipping {name}: {e}"),
            }
        }
    }
    let echo = RunConfig {
        command: Some("evaluate".into()),
        out: Some(out.clone()),
        evaluate: Some(config::EvaluateSection {
            scores: Some(scores_path),
            tau,
            normalized: Some(normalized),
            curves: Some(curves),
            grid_lo: Some(grid.lo),
            grid_hi: Some(grid.hi),
            grid_step: Some(grid.step),
        }),
        cost: Some(CostSection::explicit(&cm)),
        ..RunConfig::default()
    };
    write_file(&out.join(CONFIG_FILE), echo.to_toml())?;
    Ok(ev)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompareRow {
    pub run: String,
    pub system: String,
    pub tau: f64,
    pub dev_a_dcf: f64,
    pub dev_min_a_dcf: f64,
    pub eval_a_dcf: f64,
    pub eval_min_a_dcf: f64,
    /// 1 for the lowest eval a-DCF.
    pub rank: usize,
}

#[derive(Clone, Debug, Default)]
pub struct Comparison {
    pub rows: Vec<CompareRow>,
    /// (run directory, problem) for every directory left out.
    pub skipped: Vec<(PathBuf, String)>,
}

fn compare_one(dir: &Path, cm: &CostModel) -> Result<CompareRow, String> {
    let missing: Vec<&str> = [CHECKPOINT_FILE, DEV_SCORES_FILE, EVAL_SCORES_FILE]
        .into_iter()
        .filter(|f| !dir.join(f).is_file())
        .collect();
    if !missing.is_empty() {
        return Err(format!("missing {}", missing.join(", ")));
    }
    let model = MlpModel::load(dir.join(CHECKPOINT_FILE)).map_err(|e| e.to_string())?;
    let tau = model.threshold;
    let cost_at = |file: &str| -> Result<(f64, f64), String> {
        let (_, s) = load_score_set(&dir.join(file)).map_err(|e| e.to_string())?;
        let at = metrics::a_dcf(&metrics::hard_error_rates(&s, tau).map_err(|e| e.to_string())?, cm);
        let min = metrics::min_a_dcf(&s, cm).map_err(|e| e.to_string())?.cost;
        Ok((at, min))
    };
    let (dev_a_dcf, dev_min_a_dcf) = cost_at(DEV_SCORES_FILE)?;
    let (eval_a_dcf, eval_min_a_dcf) = cost_at(EVAL_SCORES_FILE)?;
    let system = RunConfig::load(&dir.join(CONFIG_FILE))
        .ok()
        .and_then(|c| c.train.and_then(|t| t.system))
        .map_or_else(|| "?".to_string(), |s: System| s.to_string());
    Ok(CompareRow {
        run: dir.display().to_string(),
        system,
        tau,
        dev_a_dcf,
        dev_min_a_dcf,
        eval_a_dcf,
        eval_min_a_dcf,
        rank: 0,
    })
}

pub fn compare_runs(dirs: &[PathBuf], cm: &CostModel) -> Comparison {
    let mut cmp = Comparison::default();
    for dir in dirs {
        match compare_one(dir, cm) {
            Ok(row) => cmp.rows.push(row),
            Err(msg) => cmp.skipped.push((dir.clone(), msg)),
        }
    }
    let mut order: Vec<usize> = (0..cmp.rows.len()).collect();
    // stable sort keeps the earlier directory first on ties
    order.sort_by(|&a, &b| cmp.rows[a].eval_a_dcf.total_cmp(&cmp.rows[b].eval_a_dcf));
    for (rank, i) in order.into_iter().enumerate() {
        cmp.rows[i].rank = rank + 1;
    }
    cmp
}

impl Comparison {
    pub fn to_csv(&self) -> String {
        let mut csv = String::from("run,system,tau,dev_a_dcf,dev_min_a_dcf,eval_a_dcf,eval_min_a_dcf,rank\n");
        for r in &self.rows {
            writeln!(
                csv,
                "{},{},{},{},{},{},{},{}",
                r.run, r.system, r.tau, r.dev_a_dcf, r.dev_min_a_dcf, r.eval_a_dcf, r.eval_min_a_dcf, r.rank
            )
            .unwrap();
        }
        csv
    }

    /// Fixed-width table; `*` marks the lowest eval a-DCF.
    pub fn to_table(&self) -> String {
        let headers = ["run", "system", "tau", "dev a-DCF", "dev min", "eval a-DCF", "eval min", "rank"];
        let cells: Vec<[String; 8]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.run.clone(),
                    r.system.clone(),
                    format!("{:.3}", r.tau),
                    format!("{:.4}", r.dev_a_dcf),
                    format!("{:.4}", r.dev_min_a_dcf),
                    format!("{:.4}", r.eval_a_dcf),
                    format!("{:.4}", r.eval_min_a_dcf),
                    if r.rank == 1 { "1 *".to_string() } else { r.rank.to_string() },
                ]
            })
            .collect();
        let widths: Vec<usize> = (0..8)
            .map(|c| cells.iter().map(|row| row[c].len()).chain([headers[c].len()]).max().unwrap())
            .collect();
        let mut out = String::new();
        let line = |cols: Vec<&str>, out: &mut String| {
            let padded: Vec<String> = cols
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (c, w))| if i < 2 { format!("{c:<w$}") } else { format!("{c:>w$}") })
                .collect();
            out.push_str(padded.join("  ").trim_end());
            out.push('\n');
        };
        line(headers.to_vec(), &mut out);
        for row in &cells {
            line(row.iter().map(String::as_str).collect(), &mut out);
        }
        for (dir, msg) in &self.skipped {
            writeln!(out, "skipped {}: {msg}", dir.display()).unwrap();
        }
        out
    }
}

pub fn cmd_compare(file: &RunConfig, args: &CompareArgs, out: Option<&Path>) -> CliResult<Comparison> {
    let runs = if args.runs.is_empty() {
        file.compare.as_ref().and_then(|c| c.runs.clone()).unwrap_or_default()
    } else {
        args.runs.clone()
    };
    if runs.is_empty() {
        return Err(CliError::Usage("no run directories given".into()));
    }
    let cm = config::resolve_cost(file.cost.as_ref(), &args.cost)?;
    let out = out_dir(out, file, "comparison");
    let cmp = compare_runs(&runs, &cm);
    for (dir, msg) in &cmp.skipped {
        eprintln!("{}: {msg}", dir.display());
    }
    if cmp.rows.is_empty() {
        return Err(CliError::Io("no run directory had a complete set of artifacts".into()));
    }
    let table = cmp.to_table();
    print!("{table}");
    write_file(&out.join("compare.csv"), cmp.to_csv())?;
    write_file(&out.join("compare.txt"), &table)?;
    let echo = RunConfig {
        command: Some("compare".into()),
        out: Some(out.clone()),
        compare: Some(config::CompareSection { runs: Some(runs) }),
        cost: Some(CostSection::explicit(&cm)),
        ..RunConfig::default()
    };
    write_file(&out.join(CONFIG_FILE), echo.to_toml())?;
    Ok(cmp)
}
