//! Differentiable surrogates of the a-DCF and the BCE loss, with analytic
//! gradients with respect to the detection scores.
//!
//! Trial-ordered functions take parallel `labels` / `scores` slices. Sums run
//! in input order within each class, so results are bit-reproducible.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{CostModel, EmptyClasses, Label, ScoreSet};

/// Predictions are clamped into `[BCE_EPS, 1 - BCE_EPS]` before the log.
pub const BCE_EPS: f64 = 1e-7;

/// Logistic function, evaluated without overflow for large `|z|`.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn sigmoid_slope(z: f64) -> f64 {
    let s = sigmoid(z);
    s * (1.0 - s)
}

/// Scale applied to the sigmoid argument of the soft error rates.
/// `alpha = 1` gives the plain sigmoid; large values approach hard counting.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Steepness {
    pub alpha: f64,
}

impl Default for Steepness {
    fn default() -> Self {
        Self { alpha: 1.0 }
    }
}

impl Steepness {
    pub fn new(alpha: f64) -> Result<Self> {
        let s = Self { alpha };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha.is_finite() && self.alpha > 0.0 {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "steepness must be finite and positive, got {}",
                self.alpha
            )))
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SoftRates {
    pub p_miss_tar_hat: f64,
    pub p_fa_non_hat: f64,
    pub p_fa_spf_hat: f64,
    pub empty: EmptyClasses,
}

fn mean_or_zero(it: impl Iterator<Item = f64>, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        it.sum::<f64>() / n as f64
    }
}

pub fn soft_error_rates(scores: &ScoreSet, tau: f64, steep: Steepness) -> Result<SoftRates> {
    if scores.is_empty() {
        return Err(Error::NoTrials);
    }
    if !tau.is_finite() {
        return Err(Error::NonFinite(format!("threshold {tau}")));
    }
    let a = steep.alpha;
    let fa = |v: &[f64]| mean_or_zero(v.iter().map(|&g| sigmoid(a * (g - tau))), v.len());
    Ok(SoftRates {
        p_miss_tar_hat: mean_or_zero(
            scores.tar().iter().map(|&g| sigmoid(a * (tau - g))),
            scores.tar().len(),
        ),
        p_fa_non_hat: fa(scores.non()),
        p_fa_spf_hat: fa(scores.spf()),
        empty: EmptyClasses::of(scores),
    })
}

/// Cost-weighted sum of the soft error rates. Empty classes contribute 0.
pub fn soft_a_dcf(scores: &ScoreSet, tau: f64, cm: &CostModel, steep: Steepness) -> Result<f64> {
    let r = soft_error_rates(scores, tau, steep)?;
    Ok(cm.miss_weight() * r.p_miss_tar_hat
        + cm.fa_non_weight() * r.p_fa_non_hat
        + cm.fa_spf_weight() * r.p_fa_spf_hat)
}

/// Derivative of [`soft_a_dcf`] with respect to the threshold.
pub fn soft_a_dcf_gradient_wrt_tau(
    scores: &ScoreSet,
    tau: f64,
    cm: &CostModel,
    steep: Steepness,
) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::NoTrials);
    }
    let a = steep.alpha;
    let term = |v: &[f64], w: f64, sign: f64| {
        w * a * sign * mean_or_zero(v.iter().map(|&g| sigmoid_slope(a * (tau - g))), v.len())
    };
    Ok(term(scores.tar(), cm.miss_weight(), 1.0)
        + term(scores.non(), cm.fa_non_weight(), -1.0)
        + term(scores.spf(), cm.fa_spf_weight(), -1.0))
}

fn check_bce_inputs(predictions: &[f64], n_targets: usize) -> Result<()> {
    if predictions.len() != n_targets {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions vs {} labels",
            predictions.len(),
            n_targets
        )));
    }
    if predictions.is_empty() {
        return Err(Error::NoTrials);
    }
    Ok(())
}

/// Binary cross-entropy, averaged over the trials given.
pub fn bce(predictions: &[f64], targets: &[bool]) -> Result<f64> {
    check_bce_inputs(predictions, targets.len())?;
    let sum: f64 = predictions
        .iter()
        .zip(targets)
        .map(|(&p, &y)| {
            let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
            if y {
                p.ln()
            } else {
                (1.0 - p).ln()
            }
        })
        .sum();
    Ok(-sum / predictions.len() as f64)
}

pub fn bce_labeled(labels: &[Label], predictions: &[f64]) -> Result<f64> {
    let targets: Vec<bool> = labels.iter().map(|l| l.is_positive()).collect();
    bce(predictions, &targets)
}

/// Per-trial derivative of [`bce`]. Zero where the clamp is active.
pub fn bce_gradient(predictions: &[f64], targets: &[bool]) -> Result<Vec<f64>> {
    check_bce_inputs(predictions, targets.len())?;
    let n = predictions.len() as f64;
    Ok(predictions
        .iter()
        .zip(targets)
        .map(|(&p, &y)| {
            if !(BCE_EPS..=1.0 - BCE_EPS).contains(&p) {
                0.0
            } else if y {
                -1.0 / (n * p)
            } else {
                1.0 / (n * (1.0 - p))
            }
        })
        .collect())
}

/// Mean of the soft a-DCF and the BCE over the same trials.
pub fn combined_loss(
    labels: &[Label],
    scores: &[f64],
    tau: f64,
    cm: &CostModel,
    steep: Steepness,
) -> Result<f64> {
    let adcf = soft_a_dcf(&ScoreSet::from_labeled(labels, scores)?, tau, cm, steep)?;
    let bce = bce_labeled(labels, scores)?;
    Ok((adcf + bce) / 2.0)
}

/// Training objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LossMode {
    #[serde(rename = "bce")]
    Bce,
    #[serde(rename = "soft-adcf")]
    SoftAdcf,
    #[serde(rename = "combined")]
    Combined,
}

impl LossMode {
    pub fn uses_soft_adcf(self) -> bool {
        matches!(self, LossMode::SoftAdcf | LossMode::Combined)
    }

    pub fn uses_bce(self) -> bool {
        matches!(self, LossMode::Bce | LossMode::Combined)
    }
}

pub fn loss_value(
    mode: LossMode,
    labels: &[Label],
    scores: &[f64],
    tau: f64,
    cm: &CostModel,
    steep: Steepness,
) -> Result<f64> {
    match mode {
        LossMode::Bce => bce_labeled(labels, scores),
        LossMode::SoftAdcf => soft_a_dcf(&ScoreSet::from_labeled(labels, scores)?, tau, cm, steep),
        LossMode::Combined => combined_loss(labels, scores, tau, cm, steep),
    }
}

/// Per-trial derivative of the soft a-DCF.
pub fn soft_a_dcf_gradient(
    labels: &[Label],
    scores: &[f64],
    tau: f64,
    cm: &CostModel,
    steep: Steepness,
) -> Result<Vec<f64>> {
    let set = ScoreSet::from_labeled(labels, scores)?;
    if set.is_empty() {
        return Err(Error::NoTrials);
    }
    if !tau.is_finite() {
        return Err(Error::NonFinite(format!("threshold {tau}")));
    }
    let a = steep.alpha;
    let per_trial = |w: f64, n: usize| if n == 0 { 0.0 } else { w * a / n as f64 };
    let miss = per_trial(cm.miss_weight(), set.tar().len());
    let fa_non = per_trial(cm.fa_non_weight(), set.non().len());
    let fa_spf = per_trial(cm.fa_spf_weight(), set.spf().len());
    Ok(labels
        .iter()
        .zip(scores)
        .map(|(l, &g)| match l {
            Label::Target => -miss * sigmoid_slope(a * (tau - g)),
            Label::Nontarget => fa_non * sigmoid_slope(a * (g - tau)),
            Label::Spoof => fa_spf * sigmoid_slope(a * (g - tau)),
        })
        .collect())
}

pub fn loss_gradient_wrt_scores(
    mode: LossMode,
    labels: &[Label],
    scores: &[f64],
    tau: f64,
    cm: &CostModel,
    steep: Steepness,
) -> Result<Vec<f64>> {
    let bce_grad = || {
        let targets: Vec<bool> = labels.iter().map(|l| l.is_positive()).collect();
        bce_gradient(scores, &targets)
    };
    match mode {
        LossMode::Bce => bce_grad(),
        LossMode::SoftAdcf => soft_a_dcf_gradient(labels, scores, tau, cm, steep),
        LossMode::Combined => {
            let a = soft_a_dcf_gradient(labels, scores, tau, cm, steep)?;
            let b = bce_grad()?;
            Ok(a.iter().zip(&b).map(|(x, y)| (x + y) / 2.0).collect())
        }
    }
}
