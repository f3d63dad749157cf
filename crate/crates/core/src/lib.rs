//! Spoofing-aware speaker verification back-ends trained directly for the
//! architecture-agnostic detection cost function (a-DCF).
//!
//! * [`metrics`]: hard a-DCF/DCF, min a-DCF, EER and DET curves.
//! * [`loss`]: soft a-DCF, BCE and their gradients.
//! * [`network`]: the fusion MLP, Adam and checkpoints.
//! * [`trainer`]: joint weight/threshold training and system presets.
//! * [`data`]: trials, score files and the synthetic generator.

pub mod data;
pub mod error;
pub mod loss;
pub mod metrics;
pub mod network;
pub mod trainer;

pub use data::{ScoreRecord, SynthSpec, TrialRecord, TrialSet};
pub use error::{Error, Result};
pub use loss::{LossMode, SoftRates, Steepness};
pub use metrics::{
    ClassPair, CostModel, DetCurve, DetPoint, ErrorRates, Label, MinCost, ScoreSet,
    ThresholdGrid, TwoClassCost,
};
pub use network::{AdamConfig, AdamState, GradientSet, MlpModel};
pub use trainer::{
    CostObjective, EvalReport, System, ThresholdMode, TrainConfig, TrainReport,
};
