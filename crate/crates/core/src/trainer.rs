//! Joint optimization of back-end weights and the decision threshold.
//!
//! Each epoch updates the weights on minibatches of the training set, then
//! (in [`ThresholdMode::Optimized`]) moves the threshold to the grid point
//! minimizing the soft a-DCF of the whole training set. The model and
//! threshold with the best development-set metric are returned.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{stratified_sizes, TrialSet};
use crate::error::{Error, Result};
use crate::loss::{self, LossMode, Steepness};
use crate::metrics::{
    self, a_dcf, hard_error_rates, ClassPair, CostModel, DetCurve, Label, MinCost, ScoreSet,
    ThresholdGrid,
};
use crate::network::{
    apply_update, AdamConfig, AdamState, MlpModel, DEFAULT_HIDDEN, DEFAULT_LEAKY_SLOPE,
};

/// Threshold every run starts from, and the fixed threshold of S1-S3.
pub const INITIAL_TAU: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdMode {
    Fixed,
    Optimized,
}

/// Objective used to pick a threshold or a model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CostObjective {
    #[serde(rename = "soft-adcf")]
    SoftAdcf,
    #[serde(rename = "hard-adcf")]
    HardAdcf,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BatchStrategy {
    #[default]
    Stratified,
    Shuffled,
}

/// Back-end systems that share the architecture and differ in training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum System {
    /// BCE only, threshold fixed at 0.5.
    S1,
    /// Soft a-DCF only, threshold fixed at 0.5.
    S2,
    /// Soft a-DCF + BCE, threshold fixed at 0.5.
    S3,
    /// Soft a-DCF + BCE with per-epoch threshold search.
    S4,
}

impl System {
    pub const ALL: [System; 4] = [System::S1, System::S2, System::S3, System::S4];

    pub fn as_str(self) -> &'static str {
        match self {
            System::S1 => "s1",
            System::S2 => "s2",
            System::S3 => "s3",
            System::S4 => "s4",
        }
    }
}

impl fmt::Display for System {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for System {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "s1" => Ok(System::S1),
            "s2" => Ok(System::S2),
            "s3" => Ok(System::S3),
            "s4" => Ok(System::S4),
            _ => Err(Error::invalid(format!("unknown system `{s}` (expected s1..s4)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss_mode: LossMode,
    pub threshold_mode: ThresholdMode,
    /// What the per-epoch grid search minimizes.
    pub threshold_objective: CostObjective,
    pub selection_metric: CostObjective,
    pub batch_size: usize,
    pub batch_strategy: BatchStrategy,
    pub epochs: usize,
    /// Stop after this many epochs without dev improvement.
    pub early_stop_patience: Option<usize>,
    pub cost_model: CostModel,
    pub steepness: Steepness,
    pub grid: ThresholdGrid,
    pub seed: u64,
    pub optimizer: AdamConfig,
    pub hidden: Vec<usize>,
    pub leaky_slope: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::system(System::S4)
    }
}

impl TrainConfig {
    pub fn system(system: System) -> Self {
        let (loss_mode, threshold_mode, selection_metric) = match system {
            System::S1 => (LossMode::Bce, ThresholdMode::Fixed, CostObjective::HardAdcf),
            System::S2 => (LossMode::SoftAdcf, ThresholdMode::Fixed, CostObjective::HardAdcf),
            System::S3 => (LossMode::Combined, ThresholdMode::Fixed, CostObjective::HardAdcf),
            System::S4 => (LossMode::Combined, ThresholdMode::Optimized, CostObjective::SoftAdcf),
        };
        Self {
            loss_mode,
            threshold_mode,
            threshold_objective: CostObjective::SoftAdcf,
            selection_metric,
            batch_size: 1024,
            batch_strategy: BatchStrategy::Stratified,
            epochs: 100,
            early_stop_patience: None,
            cost_model: CostModel::default(),
            steepness: Steepness::default(),
            grid: ThresholdGrid::default(),
            seed: 0,
            optimizer: AdamConfig::default(),
            hidden: DEFAULT_HIDDEN.to_vec(),
            leaky_slope: DEFAULT_LEAKY_SLOPE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::NothingTrained);
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        self.cost_model.validate()?;
        self.steepness.validate()?;
        self.grid.validate()?;
        self.optimizer.validate()?;
        if self.hidden.contains(&0) {
            return Err(Error::invalid("hidden layer widths must be positive"));
        }
        Ok(())
    }

    pub fn dims(&self, input_dim: usize) -> Vec<usize> {
        let mut d = vec![input_dim];
        d.extend(&self.hidden);
        d.push(1);
        d
    }
}

/// How many times each loss component was evaluated on a training batch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossCalls {
    pub soft_adcf: u64,
    pub bce: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_train_loss: f64,
    pub tau: f64,
    pub dev_metric: f64,
    pub improved: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub best_epoch: Option<usize>,
    pub best_tau: f64,
    pub best_dev_metric: Option<f64>,
    /// No epoch produced a finite dev metric; the threshold fell back to 0.5.
    pub no_improvement: bool,
    pub epochs_run: usize,
    pub loss_calls: LossCalls,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub summary: TrainSummary,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "lowercase")]
enum LogLine {
    Epoch(EpochRecord),
    Summary(TrainSummary),
}

impl TrainReport {
    /// One JSON object per epoch (`"record": "epoch"`), then one summary
    /// object (`"record": "summary"`).
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for e in &self.epochs {
            out.push_str(&serde_json::to_string(&LogLine::Epoch(e.clone()))?);
            out.push('\n');
        }
        out.push_str(&serde_json::to_string(&LogLine::Summary(self.summary.clone()))?);
        out.push('\n');
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut epochs = Vec::new();
        let mut summary = None;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            match serde_json::from_str(line)? {
                LogLine::Epoch(e) => epochs.push(e),
                LogLine::Summary(s) => summary = Some(s),
            }
        }
        let summary = summary.ok_or_else(|| Error::invalid("training log has no summary record"))?;
        Ok(Self { epochs, summary })
    }
}

fn mix_seed(seed: u64, salt: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Partition trial indices into minibatches of `batch_size` (the last may be
/// shorter). Stratified batches shuffle each class on its own random stream
/// and give every batch the dataset's class proportions up to rounding;
/// within a batch, trials are grouped by class.
pub fn make_minibatches(
    labels: &[Label],
    batch_size: usize,
    seed: u64,
    strategy: BatchStrategy,
) -> Vec<Vec<usize>> {
    let n = labels.len();
    if n == 0 || batch_size == 0 {
        return Vec::new();
    }
    let n_batches = n.div_ceil(batch_size);
    match strategy {
        BatchStrategy::Shuffled => {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            idx.chunks(batch_size).map(<[usize]>::to_vec).collect()
        }
        BatchStrategy::Stratified => {
            let mut per_class: Vec<Vec<usize>> = Label::ALL
                .iter()
                .map(|&l| (0..n).filter(|&i| labels[i] == l).collect())
                .collect();
            for (stream, idx) in per_class.iter_mut().enumerate() {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(stream as u64);
                idx.shuffle(&mut rng);
            }
            let batch_sizes: Vec<f64> = (0..n_batches)
                .map(|b| (batch_size.min(n - b * batch_size)) as f64 / n as f64)
                .collect();
            let counts: Vec<usize> = per_class.iter().map(Vec::len).collect();
            let alloc = stratified_sizes(&counts, &batch_sizes);
            let mut cursors = [0usize; 3];
            (0..n_batches)
                .map(|b| {
                    let mut batch = Vec::with_capacity(batch_size);
                    for c in 0..3 {
                        let take = alloc[c][b];
                        batch.extend_from_slice(&per_class[c][cursors[c]..cursors[c] + take]);
                        cursors[c] += take;
                    }
                    batch
                })
                .collect()
        }
    }
}

fn argmin_on_grid(grid: &[f64], mut cost: impl FnMut(f64) -> Result<f64>) -> Result<f64> {
    let mut best: Option<(f64, f64)> = None;
    for &tau in grid {
        let c = cost(tau)?;
        if best.is_none_or(|(bc, _)| c < bc) {
            best = Some((c, tau));
        }
    }
    best.map(|(_, t)| t)
        .ok_or_else(|| Error::invalid("empty threshold grid"))
}

/// Grid point minimizing the chosen objective on `scores`; ties go to the
/// smallest threshold.
pub fn grid_search_scores(
    scores: &ScoreSet,
    cm: &CostModel,
    steep: Steepness,
    grid: &[f64],
    objective: CostObjective,
) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::NoTrials);
    }
    argmin_on_grid(grid, |tau| objective_value(objective, scores, tau, cm, steep))
}

/// Threshold minimizing the soft a-DCF of `model`'s scores on `trn`.
pub fn grid_search_threshold(
    model: &MlpModel,
    trn: &TrialSet,
    cm: &CostModel,
    steep: Steepness,
    grid: &[f64],
) -> Result<f64> {
    let scores = score_trials(model, trn)?;
    grid_search_scores(&scores, cm, steep, grid, CostObjective::SoftAdcf)
}

pub fn objective_value(
    objective: CostObjective,
    scores: &ScoreSet,
    tau: f64,
    cm: &CostModel,
    steep: Steepness,
) -> Result<f64> {
    match objective {
        CostObjective::SoftAdcf => loss::soft_a_dcf(scores, tau, cm, steep),
        CostObjective::HardAdcf => Ok(a_dcf(&hard_error_rates(scores, tau)?, cm)),
    }
}

pub fn score_trials(model: &MlpModel, trials: &TrialSet) -> Result<ScoreSet> {
    if trials.input_dim() != model.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.input_dim(),
            got: trials.input_dim(),
        });
    }
    let scores = model.forward_batch(&trials.features())?;
    ScoreSet::from_labeled(&trials.labels(), &scores)
}

/// Training loss that records which components it evaluates.
struct Objective<'a> {
    mode: LossMode,
    cm: &'a CostModel,
    steep: Steepness,
    calls: LossCalls,
}

impl Objective<'_> {
    fn eval(&mut self, labels: &[Label], scores: &[f64], tau: f64) -> Result<(f64, Vec<f64>)> {
        let soft = |calls: &mut LossCalls| -> Result<(f64, Vec<f64>)> {
            calls.soft_adcf += 1;
            let set = ScoreSet::from_labeled(labels, scores)?;
            Ok((
                loss::soft_a_dcf(&set, tau, self.cm, self.steep)?,
                loss::soft_a_dcf_gradient(labels, scores, tau, self.cm, self.steep)?,
            ))
        };
        let bce = |calls: &mut LossCalls| -> Result<(f64, Vec<f64>)> {
            calls.bce += 1;
            let targets: Vec<bool> = labels.iter().map(|l| l.is_positive()).collect();
            Ok((
                loss::bce(scores, &targets)?,
                loss::bce_gradient(scores, &targets)?,
            ))
        };
        match self.mode {
            LossMode::Bce => bce(&mut self.calls),
            LossMode::SoftAdcf => soft(&mut self.calls),
            LossMode::Combined => {
                let (va, ga) = soft(&mut self.calls)?;
                let (vb, gb) = bce(&mut self.calls)?;
                let g = ga.iter().zip(&gb).map(|(a, b)| (a + b) / 2.0).collect();
                Ok(((va + vb) / 2.0, g))
            }
        }
    }
}

fn check_training_classes(trn: &TrialSet, cfg: &TrainConfig) -> Result<()> {
    let (t, n, s) = trn.counts();
    let cm = &cfg.cost_model;
    let needed = [
        ("target", t, true),
        ("nontarget", n, cfg.loss_mode.uses_soft_adcf() && cm.fa_non_weight() > 0.0),
        ("spoof", s, cfg.loss_mode.uses_soft_adcf() && cm.fa_spf_weight() > 0.0),
    ];
    for (name, count, required) in needed {
        if required && count == 0 {
            return Err(Error::EmptyClass(name));
        }
    }
    if n + s == 0 {
        return Err(Error::invalid("training set has no negative trials"));
    }
    Ok(())
}

fn gather(features: &[f64], dim: usize, idx: &[usize]) -> Vec<f64> {
    let mut out = Vec::with_capacity(idx.len() * dim);
    for &i in idx {
        out.extend_from_slice(&features[i * dim..(i + 1) * dim]);
    }
    out
}

pub fn train(trn: &TrialSet, dev: &TrialSet, cfg: &TrainConfig) -> Result<(MlpModel, TrainReport)> {
    cfg.validate()?;
    if dev.is_empty() {
        return Err(Error::invalid("development set is empty"));
    }
    if trn.input_dim() != dev.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: trn.input_dim(),
            got: dev.input_dim(),
        });
    }
    check_training_classes(trn, cfg)?;

    let dim = trn.input_dim();
    let features = trn.features();
    let labels = trn.labels();
    let dev_features = dev.features();
    let dev_labels = dev.labels();
    let grid = cfg.grid.points();

    let mut model = MlpModel::init(&cfg.dims(dim), cfg.leaky_slope, cfg.seed)?;
    let mut adam = AdamState::new(&model);
    let mut objective = Objective {
        mode: cfg.loss_mode,
        cm: &cfg.cost_model,
        steep: cfg.steepness,
        calls: LossCalls::default(),
    };

    let mut tau = INITIAL_TAU;
    let mut best: Option<(f64, usize, MlpModel)> = None;
    let mut records = Vec::with_capacity(cfg.epochs);
    let mut since_improvement = 0;

    for epoch in 1..=cfg.epochs {
        let batches = make_minibatches(
            &labels,
            cfg.batch_size,
            mix_seed(cfg.seed, epoch as u64),
            cfg.batch_strategy,
        );
        let mut loss_sum = 0.0;
        for batch in &batches {
            let x = gather(&features, dim, batch);
            let y: Vec<Label> = batch.iter().map(|&i| labels[i]).collect();
            let cache = model.forward_cached(&x)?;
            let (value, upstream) = objective.eval(&y, &cache.scores, tau)?;
            loss_sum += value * batch.len() as f64;
            let grads = model.backward_cached(&x, &cache, &upstream)?;
            apply_update(&mut model, &grads, &mut adam, &cfg.optimizer)?;
        }
        if !model.all_finite() {
            return Err(Error::NonFinite(format!("model parameters after epoch {epoch}")));
        }

        if cfg.threshold_mode == ThresholdMode::Optimized {
            let trn_scores = ScoreSet::from_labeled(&labels, &model.forward_batch(&features)?)?;
            tau = grid_search_scores(
                &trn_scores,
                &cfg.cost_model,
                cfg.steepness,
                &grid,
                cfg.threshold_objective,
            )?;
        }

        let dev_scores = ScoreSet::from_labeled(&dev_labels, &model.forward_batch(&dev_features)?)?;
        let dev_metric = objective_value(
            cfg.selection_metric,
            &dev_scores,
            tau,
            &cfg.cost_model,
            cfg.steepness,
        )?;
        let improved = best.as_ref().is_none_or(|(m, _, _)| dev_metric < *m);
        if improved {
            let mut snapshot = model.clone();
            snapshot.threshold = tau;
            best = Some((dev_metric, epoch, snapshot));
            since_improvement = 0;
        } else {
            since_improvement += 1;
        }
        records.push(EpochRecord {
            epoch,
            mean_train_loss: loss_sum / labels.len() as f64,
            tau,
            dev_metric,
            improved,
        });
        if cfg.early_stop_patience.is_some_and(|p| since_improvement >= p) {
            break;
        }
    }

    let epochs_run = records.len();
    let (model, summary) = match best {
        Some((metric, epoch, m)) => {
            let best_tau = m.threshold;
            (
                m,
                TrainSummary {
                    best_epoch: Some(epoch),
                    best_tau,
                    best_dev_metric: Some(metric),
                    no_improvement: false,
                    epochs_run,
                    loss_calls: objective.calls,
                },
            )
        }
        None => {
            model.threshold = INITIAL_TAU;
            (
                model,
                TrainSummary {
                    best_epoch: None,
                    best_tau: INITIAL_TAU,
                    best_dev_metric: None,
                    no_improvement: true,
                    epochs_run,
                    loss_calls: objective.calls,
                },
            )
        }
    };
    Ok((
        model,
        TrainReport {
            epochs: records,
            summary,
        },
    ))
}

/// Metrics of one system on one trial set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tau: f64,
    pub a_dcf_at_tau: f64,
    pub min_a_dcf: MinCost,
    pub eer_tar_non: Option<f64>,
    pub eer_tar_spf: Option<f64>,
    pub det_tar_non: Option<DetCurve>,
    pub det_tar_spf: Option<DetCurve>,
}

/// Metric bundle for labeled scores at threshold `tau`. Class pairs with an
/// empty class get no EER or DET curve.
pub fn evaluate_scores(scores: &ScoreSet, tau: f64, cm: &CostModel) -> Result<EvalReport> {
    let pair = |p: ClassPair| -> Result<(Option<f64>, Option<DetCurve>)> {
        if scores.tar().is_empty() || scores.class(p.negative()).is_empty() {
            return Ok((None, None));
        }
        Ok((Some(metrics::eer(scores, p)?), Some(metrics::det_curve(scores, p)?)))
    };
    let (eer_tar_non, det_tar_non) = pair(ClassPair::TarNon)?;
    let (eer_tar_spf, det_tar_spf) = pair(ClassPair::TarSpf)?;
    Ok(EvalReport {
        tau,
        a_dcf_at_tau: a_dcf(&hard_error_rates(scores, tau)?, cm),
        min_a_dcf: metrics::min_a_dcf(scores, cm)?,
        eer_tar_non,
        eer_tar_spf,
        det_tar_non,
        det_tar_spf,
    })
}

pub fn evaluate_system(model: &MlpModel, trials: &TrialSet, cm: &CostModel) -> Result<EvalReport> {
    if trials.is_empty() {
        return Err(Error::NoTrials);
    }
    evaluate_scores(&score_trials(model, trials)?, model.threshold, cm)
}
