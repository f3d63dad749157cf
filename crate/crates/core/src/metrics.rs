//! Hard, counting-based detection cost metrics.
//!
//! A trial is accepted when its score is strictly greater than the threshold,
//! so a target scoring exactly `tau` is a miss.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Probit coordinates of DET points are clamped to this many standard deviates.
pub const PROBIT_CLAMP: f64 = 4.0;

const PRIOR_SUM_TOL: f64 = 1e-12;

/// The three trial classes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Target,
    Nontarget,
    Spoof,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Target, Label::Nontarget, Label::Spoof];

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Target => "target",
            Label::Nontarget => "nontarget",
            Label::Spoof => "spoof",
        }
    }

    /// BCE target: bona fide target trials are the positive class.
    pub fn is_positive(self) -> bool {
        self == Label::Target
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "target" => Ok(Label::Target),
            "nontarget" => Ok(Label::Nontarget),
            "spoof" => Ok(Label::Spoof),
            other => Err(Error::invalid(format!("unknown label `{other}`"))),
        }
    }
}

/// Costs and priors of the architecture-agnostic DCF.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub c_miss_tar: f64,
    pub c_fa_non: f64,
    pub c_fa_spf: f64,
    pub pi_tar: f64,
    pub pi_non: f64,
    pub pi_spf: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self::setting(1).expect("setting 1 exists")
    }
}

impl CostModel {
    pub fn new(
        c_miss_tar: f64,
        c_fa_non: f64,
        c_fa_spf: f64,
        pi_tar: f64,
        pi_non: f64,
        pi_spf: f64,
    ) -> Result<Self> {
        let cm = Self {
            c_miss_tar,
            c_fa_non,
            c_fa_spf,
            pi_tar,
            pi_non,
            pi_spf,
        };
        cm.validate()?;
        Ok(cm)
    }

    /// Named parameterizations:
    /// 1 = security weighted (1, 10, 20; 0.9, 0.05, 0.05),
    /// 2 = no spoof prior (1, 1, 1; 0.5, 0.5, 0),
    /// 3 = no nontarget prior (1, 1, 1; 0.5, 0, 0.5).
    pub fn setting(n: u8) -> Result<Self> {
        match n {
            1 => Self::new(1.0, 10.0, 20.0, 0.9, 0.05, 0.05),
            2 => Self::new(1.0, 1.0, 1.0, 0.5, 0.5, 0.0),
            3 => Self::new(1.0, 1.0, 1.0, 0.5, 0.0, 0.5),
            _ => Err(Error::invalid(format!("unknown setting {n} (expected 1, 2 or 3)"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidCostModel(m));
        let all = [
            self.c_miss_tar,
            self.c_fa_non,
            self.c_fa_spf,
            self.pi_tar,
            self.pi_non,
            self.pi_spf,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return bad("all costs and priors must be finite".into());
        }
        if self.c_miss_tar < 0.0 || self.c_fa_non < 0.0 || self.c_fa_spf < 0.0 {
            return bad("costs must be non-negative".into());
        }
        for p in [self.pi_tar, self.pi_non, self.pi_spf] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("prior {p} outside [0, 1]"));
            }
        }
        let sum = self.pi_tar + self.pi_non + self.pi_spf;
        if (sum - 1.0).abs() > PRIOR_SUM_TOL {
            return bad(format!("priors sum to {sum}, expected 1"));
        }
        if self.miss_weight() <= 0.0 && self.false_alarm_weight() <= 0.0 {
            return bad("every error is weighted zero; the cost is identically 0".into());
        }
        Ok(())
    }

    /// `c_miss_tar * pi_tar`
    pub fn miss_weight(&self) -> f64 {
        self.c_miss_tar * self.pi_tar
    }

    pub fn fa_non_weight(&self) -> f64 {
        self.c_fa_non * self.pi_non
    }

    pub fn fa_spf_weight(&self) -> f64 {
        self.c_fa_spf * self.pi_spf
    }

    pub fn false_alarm_weight(&self) -> f64 {
        self.fa_non_weight() + self.fa_spf_weight()
    }

    /// Largest attainable a-DCF (every trial in error).
    pub fn max_cost(&self) -> f64 {
        self.miss_weight() + self.fa_non_weight() + self.fa_spf_weight()
    }

    /// Cost of the better of the two trivial systems (accept all / reject all).
    pub fn normalizer(&self) -> f64 {
        self.miss_weight().min(self.false_alarm_weight())
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            c_miss_tar: self.c_miss_tar * k,
            c_fa_non: self.c_fa_non * k,
            c_fa_spf: self.c_fa_spf * k,
            ..*self
        }
    }
}

/// Cost parameters of the conventional two-class DCF.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoClassCost {
    pub c_miss: f64,
    pub c_fa: f64,
    pub pi_tar: f64,
}

impl TwoClassCost {
    pub fn pi_non(&self) -> f64 {
        1.0 - self.pi_tar
    }
}

/// Detection scores partitioned by class. All scores are finite.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScoreSet {
    tar: Vec<f64>,
    non: Vec<f64>,
    spf: Vec<f64>,
}

impl ScoreSet {
    pub fn new(tar: Vec<f64>, non: Vec<f64>, spf: Vec<f64>) -> Result<Self> {
        for (name, v) in [("target", &tar), ("nontarget", &non), ("spoof", &spf)] {
            if let Some(bad) = v.iter().find(|s| !s.is_finite()) {
                return Err(Error::NonFinite(format!("{name} score {bad}")));
            }
        }
        Ok(Self { tar, non, spf })
    }

    /// Partition trial-ordered scores by label, preserving order within each class.
    pub fn from_labeled(labels: &[Label], scores: &[f64]) -> Result<Self> {
        if labels.len() != scores.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} labels vs {} scores",
                labels.len(),
                scores.len()
            )));
        }
        let (mut tar, mut non, mut spf) = (Vec::new(), Vec::new(), Vec::new());
        for (&l, &s) in labels.iter().zip(scores) {
            match l {
                Label::Target => tar.push(s),
                Label::Nontarget => non.push(s),
                Label::Spoof => spf.push(s),
            }
        }
        Self::new(tar, non, spf)
    }

    pub fn tar(&self) -> &[f64] {
        &self.tar
    }

    pub fn non(&self) -> &[f64] {
        &self.non
    }

    pub fn spf(&self) -> &[f64] {
        &self.spf
    }

    pub fn class(&self, label: Label) -> &[f64] {
        match label {
            Label::Target => &self.tar,
            Label::Nontarget => &self.non,
            Label::Spoof => &self.spf,
        }
    }

    pub fn len(&self) -> usize {
        self.tar.len() + self.non.len() + self.spf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn shifted(&self, c: f64) -> Result<Self> {
        let shift = |v: &[f64]| v.iter().map(|s| s + c).collect();
        Self::new(shift(&self.tar), shift(&self.non), shift(&self.spf))
    }

    /// Scores of all classes, class by class.
    pub fn pooled(&self) -> impl Iterator<Item = (Label, f64)> + '_ {
        Label::ALL
            .into_iter()
            .flat_map(move |l| self.class(l).iter().map(move |&s| (l, s)))
    }
}

/// Which classes had no trials when a set of rates was computed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmptyClasses {
    pub tar: bool,
    pub non: bool,
    pub spf: bool,
}

impl EmptyClasses {
    pub fn of(scores: &ScoreSet) -> Self {
        Self {
            tar: scores.tar.is_empty(),
            non: scores.non.is_empty(),
            spf: scores.spf.is_empty(),
        }
    }

    pub fn any(&self) -> bool {
        self.tar || self.non || self.spf
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ErrorRates {
    pub p_miss_tar: f64,
    pub p_fa_non: f64,
    pub p_fa_spf: f64,
    pub empty: EmptyClasses,
}

fn ratio(k: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        k as f64 / n as f64
    }
}

impl ErrorRates {
    pub fn new(p_miss_tar: f64, p_fa_non: f64, p_fa_spf: f64) -> Self {
        Self {
            p_miss_tar,
            p_fa_non,
            p_fa_spf,
            empty: EmptyClasses::default(),
        }
    }

    fn from_counts(misses: usize, fa_non: usize, fa_spf: usize, scores: &ScoreSet) -> Self {
        Self {
            p_miss_tar: ratio(misses, scores.tar.len()),
            p_fa_non: ratio(fa_non, scores.non.len()),
            p_fa_spf: ratio(fa_spf, scores.spf.len()),
            empty: EmptyClasses::of(scores),
        }
    }
}

pub fn hard_error_rates(scores: &ScoreSet, tau: f64) -> Result<ErrorRates> {
    if scores.is_empty() {
        return Err(Error::NoTrials);
    }
    if !tau.is_finite() {
        return Err(Error::NonFinite(format!("threshold {tau}")));
    }
    let misses = scores.tar.iter().filter(|&&g| g <= tau).count();
    let fa_non = scores.non.iter().filter(|&&g| g > tau).count();
    let fa_spf = scores.spf.iter().filter(|&&g| g > tau).count();
    Ok(ErrorRates::from_counts(misses, fa_non, fa_spf, scores))
}

/// Unnormalized a-DCF.
pub fn a_dcf(rates: &ErrorRates, cm: &CostModel) -> f64 {
    cm.miss_weight() * rates.p_miss_tar
        + cm.fa_non_weight() * rates.p_fa_non
        + cm.fa_spf_weight() * rates.p_fa_spf
}

/// a-DCF divided by [`CostModel::normalizer`].
pub fn a_dcf_normalized(rates: &ErrorRates, cm: &CostModel) -> Result<f64> {
    let norm = cm.normalizer();
    if norm <= 0.0 {
        return Err(Error::InvalidCostModel(
            "normalizer is zero; use the unnormalized a-DCF".into(),
        ));
    }
    Ok(a_dcf(rates, cm) / norm)
}

/// Conventional two-class DCF.
pub fn dcf(p_miss: f64, p_fa: f64, cost: &TwoClassCost) -> f64 {
    cost.c_miss * cost.pi_tar * p_miss + cost.c_fa * cost.pi_non() * p_fa
}

/// Thresholds that realize every distinct decision on `sorted` (ascending) scores:
/// one below the minimum, the midpoint of each pair of consecutive distinct
/// values, one above the maximum.
pub fn candidate_thresholds(sorted: &[f64]) -> Vec<f64> {
    let (Some(&lo), Some(&hi)) = (sorted.first(), sorted.last()) else {
        return Vec::new();
    };
    let mut out = Vec::with_capacity(sorted.len() + 1);
    out.push(lo - lo.abs().max(1.0));
    for w in sorted.windows(2) {
        let (a, b) = (w[0], w[1]);
        if a < b {
            let mid = a + (b - a) / 2.0;
            // adjacent floats: any tau in [a, b) makes the same decisions
            out.push(if mid < b { mid } else { a });
        }
    }
    out.push(hi + hi.abs().max(1.0));
    out
}

fn sorted_scores(it: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = it.collect();
    v.sort_by(f64::total_cmp);
    v
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinCost {
    pub cost: f64,
    pub tau: f64,
}

/// Minimum a-DCF over all thresholds, found by one sweep over the sorted
/// pooled scores. Ties go to the smallest threshold.
pub fn min_a_dcf(scores: &ScoreSet, cm: &CostModel) -> Result<MinCost> {
    if scores.is_empty() {
        return Err(Error::NoTrials);
    }
    let mut pooled: Vec<(f64, Label)> = scores.pooled().map(|(l, s)| (s, l)).collect();
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));
    let sorted: Vec<f64> = pooled.iter().map(|p| p.0).collect();

    let (mut misses, mut fa_non, mut fa_spf) = (0, scores.non.len(), scores.spf.len());
    let mut next = 0;
    let mut best: Option<MinCost> = None;
    for tau in candidate_thresholds(&sorted) {
        while next < pooled.len() && pooled[next].0 <= tau {
            match pooled[next].1 {
                Label::Target => misses += 1,
                Label::Nontarget => fa_non -= 1,
                Label::Spoof => fa_spf -= 1,
            }
            next += 1;
        }
        let cost = a_dcf(&ErrorRates::from_counts(misses, fa_non, fa_spf, scores), cm);
        if best.is_none_or(|b| cost < b.cost) {
            best = Some(MinCost { cost, tau });
        }
    }
    Ok(best.expect("candidate set is never empty"))
}

/// A threshold sweep specification: `lo, lo + step, ..., hi`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdGrid {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl Default for ThresholdGrid {
    fn default() -> Self {
        Self {
            lo: 0.0,
            hi: 1.0,
            step: 0.001,
        }
    }
}

impl ThresholdGrid {
    pub fn validate(&self) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.step.is_finite()) {
            return Err(Error::invalid("grid bounds must be finite"));
        }
        if self.lo >= self.hi || self.step <= 0.0 {
            return Err(Error::invalid(format!(
                "grid needs lo < hi and step > 0 (got lo={}, hi={}, step={})",
                self.lo, self.hi, self.step
            )));
        }
        Ok(())
    }

    pub fn points(&self) -> Vec<f64> {
        let n = ((self.hi - self.lo) / self.step + 1e-9).floor() as usize;
        (0..=n).map(|i| self.lo + i as f64 * self.step).collect()
    }
}

/// Pointwise a-DCF at every threshold in `grid`.
pub fn a_dcf_vs_threshold(
    scores: &ScoreSet,
    cm: &CostModel,
    grid: &[f64],
) -> Result<Vec<(f64, f64)>> {
    if grid.is_empty() {
        return Err(Error::invalid("empty threshold grid"));
    }
    grid.iter()
        .map(|&tau| Ok((tau, a_dcf(&hard_error_rates(scores, tau)?, cm))))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ClassPair {
    #[serde(rename = "tar-vs-non")]
    TarNon,
    #[serde(rename = "tar-vs-spf")]
    TarSpf,
}

impl ClassPair {
    pub fn negative(self) -> Label {
        match self {
            ClassPair::TarNon => Label::Nontarget,
            ClassPair::TarSpf => Label::Spoof,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ClassPair::TarNon => "tar-vs-non",
            ClassPair::TarSpf => "tar-vs-spf",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetPoint {
    pub tau: f64,
    pub p_fa: f64,
    pub p_miss: f64,
    pub probit_fa: f64,
    pub probit_miss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetCurve {
    pub class_pair: ClassPair,
    pub points: Vec<DetPoint>,
}

/// Inverse standard normal CDF, clamped to `±PROBIT_CLAMP`.
pub fn probit(p: f64) -> f64 {
    let std = Normal::standard();
    if p <= 0.0 {
        -PROBIT_CLAMP
    } else if p >= 1.0 {
        PROBIT_CLAMP
    } else {
        std.inverse_cdf(p).clamp(-PROBIT_CLAMP, PROBIT_CLAMP)
    }
}

/// (tau, p_miss, p_fa) at every candidate threshold of the pair, ascending in tau.
fn pair_sweep(scores: &ScoreSet, pair: ClassPair) -> Result<Vec<(f64, f64, f64)>> {
    let tar = scores.tar();
    let neg = scores.class(pair.negative());
    if tar.is_empty() {
        return Err(Error::EmptyClass("target"));
    }
    if neg.is_empty() {
        return Err(Error::EmptyClass(pair.negative().as_str()));
    }
    let tar = sorted_scores(tar.iter().copied());
    let neg = sorted_scores(neg.iter().copied());
    let pooled = sorted_scores(tar.iter().chain(&neg).copied());
    let (mut i, mut j) = (0, 0);
    let mut out = Vec::with_capacity(pooled.len() + 1);
    for tau in candidate_thresholds(&pooled) {
        while i < tar.len() && tar[i] <= tau {
            i += 1;
        }
        while j < neg.len() && neg[j] <= tau {
            j += 1;
        }
        let p_miss = ratio(i, tar.len());
        let p_fa = ratio(neg.len() - j, neg.len());
        out.push((tau, p_miss, p_fa));
    }
    Ok(out)
}

pub fn det_curve(scores: &ScoreSet, pair: ClassPair) -> Result<DetCurve> {
    let points = pair_sweep(scores, pair)?
        .into_iter()
        .map(|(tau, p_miss, p_fa)| DetPoint {
            tau,
            p_fa,
            p_miss,
            probit_fa: probit(p_fa),
            probit_miss: probit(p_miss),
        })
        .collect();
    Ok(DetCurve {
        class_pair: pair,
        points,
    })
}

/// Equal error rate. At the first threshold where `p_miss - p_fa` turns
/// non-negative, the closer of the two bracketing operating points is taken
/// and the mean of its two rates returned.
pub fn eer(scores: &ScoreSet, pair: ClassPair) -> Result<f64> {
    let sweep = pair_sweep(scores, pair)?;
    let idx = sweep
        .iter()
        .position(|&(_, m, f)| m - f >= 0.0)
        .expect("the upper sentinel has p_miss = 1, p_fa = 0");
    let (_, m, f) = sweep[idx];
    if idx == 0 {
        return Ok((m + f) / 2.0);
    }
    let (_, pm, pf) = sweep[idx - 1];
    let (m, f) = if (pf - pm) < (m - f) { (pm, pf) } else { (m, f) };
    Ok((m + f) / 2.0)
}
