//! Config file schema and resolution.
//!
//! Each value is taken from the first of: command-line flag, config file,
//! built-in default. A resolved config has every key filled in and is written
//! back as `config.toml`, so `--config <run>/config.toml` repeats a run.

use std::path::{Path, PathBuf};

use adcf_core::loss::{LossMode, Steepness};
use adcf_core::metrics::{CostModel, ThresholdGrid};
use adcf_core::network::AdamConfig;
use adcf_core::trainer::{BatchStrategy, CostObjective, System, ThresholdMode, TrainConfig};
use adcf_core::SynthSpec;
use serde::{Deserialize, Serialize};

use crate::args::{CostArgs, GridArgs, TrainArgs};
use crate::error::{CliError, CliResult};

/// Default trn/dev/eval split: 2000/500/500 for the default 3000 trials.
pub const DEFAULT_FRACTIONS: [f64; 3] = [2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0];

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub command: Option<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub synth: Option<SynthSpec>,
    pub split: Option<SplitSection>,
    pub train: Option<TrainSection>,
    pub score: Option<ScoreSection>,
    pub evaluate: Option<EvaluateSection>,
    pub compare: Option<CompareSection>,
    pub cost: Option<CostSection>,
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        if !path.is_file() {
            return Err(CliError::Usage(format!("config file not found: {}", path.display())));
        }
        let text = std::fs::read_to_string(path).map_err(|e| crate::error::io_at(path, e))?;
        Self::parse(&text).map_err(|m| CliError::Usage(format!("{}: {m}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config values are always representable")
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub fractions: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostSection {
    pub setting: Option<u8>,
    pub c_miss_tar: Option<f64>,
    pub c_fa_non: Option<f64>,
    pub c_fa_spf: Option<f64>,
    pub pi_tar: Option<f64>,
    pub pi_non: Option<f64>,
    pub pi_spf: Option<f64>,
}

impl CostSection {
    fn apply(&self, base: CostModel) -> CliResult<CostModel> {
        let mut cm = match self.setting {
            Some(n) => CostModel::setting(n).map_err(|e| CliError::Usage(e.to_string()))?,
            None => base,
        };
        let fields = [
            (&mut cm.c_miss_tar, self.c_miss_tar),
            (&mut cm.c_fa_non, self.c_fa_non),
            (&mut cm.c_fa_spf, self.c_fa_spf),
            (&mut cm.pi_tar, self.pi_tar),
            (&mut cm.pi_non, self.pi_non),
            (&mut cm.pi_spf, self.pi_spf),
        ];
        for (slot, v) in fields {
            if let Some(v) = v {
                *slot = v;
            }
        }
        Ok(cm)
    }

    pub fn explicit(cm: &CostModel) -> Self {
        Self {
            setting: None,
            c_miss_tar: Some(cm.c_miss_tar),
            c_fa_non: Some(cm.c_fa_non),
            c_fa_spf: Some(cm.c_fa_spf),
            pi_tar: Some(cm.pi_tar),
            pi_non: Some(cm.pi_non),
            pi_spf: Some(cm.pi_spf),
        }
    }
}

impl From<&CostArgs> for CostSection {
    fn from(a: &CostArgs) -> Self {
        Self {
            setting: a.setting,
            c_miss_tar: a.c_miss_tar,
            c_fa_non: a.c_fa_non,
            c_fa_spf: a.c_fa_spf,
            pi_tar: a.pi_tar,
            pi_non: a.pi_non,
            pi_spf: a.pi_spf,
        }
    }
}

/// File layer first, then flags; a `setting` in a layer resets all six values
/// before that layer's individual overrides.
pub fn resolve_cost(file: Option<&CostSection>, flags: &CostArgs) -> CliResult<CostModel> {
    let mut cm = CostModel::default();
    if let Some(f) = file {
        cm = f.apply(cm)?;
    }
    cm = CostSection::from(flags).apply(cm)?;
    cm.validate().map_err(|e| CliError::Validation(e.to_string()))?;
    Ok(cm)
}

type GridKeys = [Option<f64>; 3];

fn resolve_grid(base: ThresholdGrid, file: GridKeys, flags: &GridArgs) -> ThresholdGrid {
    ThresholdGrid {
        lo: flags.grid_lo.or(file[0]).unwrap_or(base.lo),
        hi: flags.grid_hi.or(file[1]).unwrap_or(base.hi),
        step: flags.grid_step.or(file[2]).unwrap_or(base.step),
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub system: Option<System>,
    pub trn: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub eval: Option<PathBuf>,
    pub loss_mode: Option<LossMode>,
    pub threshold_mode: Option<ThresholdMode>,
    pub threshold_objective: Option<CostObjective>,
    pub selection_metric: Option<CostObjective>,
    pub batch_size: Option<usize>,
    pub batch_strategy: Option<BatchStrategy>,
    pub epochs: Option<usize>,
    /// 0 disables early stopping.
    pub patience: Option<usize>,
    pub alpha: Option<f64>,
    pub learning_rate: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub eps: Option<f64>,
    pub hidden: Option<Vec<usize>>,
    pub leaky_slope: Option<f64>,
    pub grid_lo: Option<f64>,
    pub grid_hi: Option<f64>,
    pub grid_step: Option<f64>,
}

/// Fully resolved inputs of a training run.
#[derive(Clone, Debug)]
pub struct TrainPlan {
    pub system: System,
    pub trn: PathBuf,
    pub dev: PathBuf,
    pub eval: Option<PathBuf>,
    pub config: TrainConfig,
}

pub fn resolve_train(file: &RunConfig, flags: &TrainArgs, seed: Option<u64>) -> CliResult<TrainPlan> {
    let f = file.train.clone().unwrap_or_default();
    let system = flags.system.or(f.system).unwrap_or(System::S4);
    let mut cfg = TrainConfig::system(system);

    macro_rules! pick {
        ($field:ident) => {
            flags.$field.clone().or(f.$field.clone())
        };
    }
    if let Some(v) = pick!(loss_mode) {
        cfg.loss_mode = v;
    }
    if let Some(v) = pick!(threshold_mode) {
        cfg.threshold_mode = v;
    }
    if let Some(v) = pick!(threshold_objective) {
        cfg.threshold_objective = v;
    }
    if let Some(v) = pick!(selection_metric) {
        cfg.selection_metric = v;
    }
    if let Some(v) = pick!(batch_size) {
        cfg.batch_size = v;
    }
    if let Some(v) = pick!(batch_strategy) {
        cfg.batch_strategy = v;
    }
    if let Some(v) = pick!(epochs) {
        cfg.epochs = v;
    }
    if let Some(v) = pick!(patience) {
        cfg.early_stop_patience = (v > 0).then_some(v);
    }
    if let Some(v) = pick!(alpha) {
        cfg.steepness = Steepness { alpha: v };
    }
    if let Some(v) = pick!(learning_rate) {
        cfg.optimizer.learning_rate = v;
    }
    if let Some(v) = f.beta1 {
        cfg.optimizer.beta1 = v;
    }
    if let Some(v) = f.beta2 {
        cfg.optimizer.beta2 = v;
    }
    if let Some(v) = f.eps {
        cfg.optimizer.eps = v;
    }
    if let Some(v) = pick!(hidden) {
        cfg.hidden = v;
    }
    if let Some(v) = pick!(leaky_slope) {
        cfg.leaky_slope = v;
    }
    cfg.grid = resolve_grid(cfg.grid, [f.grid_lo, f.grid_hi, f.grid_step], &flags.grid);
    cfg.cost_model = resolve_cost(file.cost.as_ref(), &flags.cost)?;
    cfg.seed = seed.or(file.seed).unwrap_or(0);
    cfg.validate().map_err(|e| CliError::Validation(e.to_string()))?;

    let trn = required_input("trn", pick!(trn))?;
    let dev = required_input("dev", pick!(dev))?;
    let eval = match pick!(eval) {
        Some(p) => Some(required_input("eval", Some(p))?),
        None => None,
    };
    Ok(TrainPlan {
        system,
        trn,
        dev,
        eval,
        config: cfg,
    })
}

impl TrainPlan {
    pub fn echo(&self, out: &Path) -> RunConfig {
        let c = &self.config;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            eps,
        } = c.optimizer;
        RunConfig {
            command: Some("train".into()),
            seed: Some(c.seed),
            out: Some(out.to_path_buf()),
            train: Some(TrainSection {
                system: Some(self.system),
                trn: Some(self.trn.clone()),
                dev: Some(self.dev.clone()),
                eval: self.eval.clone(),
                loss_mode: Some(c.loss_mode),
                threshold_mode: Some(c.threshold_mode),
                threshold_objective: Some(c.threshold_objective),
                selection_metric: Some(c.selection_metric),
                batch_size: Some(c.batch_size),
                batch_strategy: Some(c.batch_strategy),
                epochs: Some(c.epochs),
                patience: Some(c.early_stop_patience.unwrap_or(0)),
                alpha: Some(c.steepness.alpha),
                learning_rate: Some(learning_rate),
                beta1: Some(beta1),
                beta2: Some(beta2),
                eps: Some(eps),
                hidden: Some(c.hidden.clone()),
                leaky_slope: Some(c.leaky_slope),
                grid_lo: Some(c.grid.lo),
                grid_hi: Some(c.grid.hi),
                grid_step: Some(c.grid.step),
            }),
            cost: Some(CostSection::explicit(&c.cost_model)),
            ..RunConfig::default()
        }
    }
}

/// Missing input files are usage errors.
pub fn required_input(name: &str, path: Option<PathBuf>) -> CliResult<PathBuf> {
    let path = path.ok_or_else(|| CliError::Usage(format!("missing --{name} input file")))?;
    if !path.is_file() {
        return Err(CliError::Usage(format!("{name} file not found: {}", path.display())));
    }
    Ok(path)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreSection {
    pub checkpoint: Option<PathBuf>,
    pub trials: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    pub scores: Option<PathBuf>,
    pub tau: Option<f64>,
    pub normalized: Option<bool>,
    pub curves: Option<bool>,
    pub grid_lo: Option<f64>,
    pub grid_hi: Option<f64>,
    pub grid_step: Option<f64>,
}

pub fn resolve_eval_grid(file: Option<&EvaluateSection>, flags: &GridArgs) -> ThresholdGrid {
    let keys = file.map_or([None; 3], |s| [s.grid_lo, s.grid_hi, s.grid_step]);
    resolve_grid(ThresholdGrid::default(), keys, flags)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareSection {
    pub runs: Option<Vec<PathBuf>>,
}

pub fn resolve_synth(file: &RunConfig, flags: &crate::args::SynthArgs, seed: Option<u64>) -> CliResult<(SynthSpec, Vec<f64>)> {
    let mut spec = file.synth.clone().unwrap_or_default();
    macro_rules! over {
        ($($field:ident),*) => {
            $(if let Some(v) = flags.$field { spec.$field = v; })*
        };
    }
    over!(d_asv, d_cm, n_tar, n_non, n_spf, n_speakers, n_impostors, n_attacks, separation, noise);
    if let Some(s) = seed.or(file.seed) {
        spec.seed = s;
    }
    spec.validate().map_err(|e| CliError::Validation(e.to_string()))?;
    let fractions = flags
        .fractions
        .clone()
        .or_else(|| file.split.as_ref().and_then(|s| s.fractions.clone()))
        .unwrap_or_else(|| DEFAULT_FRACTIONS.to_vec());
    Ok((spec, fractions))
}
