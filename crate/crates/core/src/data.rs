//! Trials, embedding concatenation, trial/score files and the synthetic
//! three-class generator.
//!
//! Trial file:
//!
//! ```text
//! #adcf-trials v1 d_asv=<int> d_cm=<int>
//! trial_id<TAB>label<TAB>e_enr<TAB>e_tst_asv<TAB>e_tst_cm
//! ```
//!
//! Each embedding field is a space-separated list of decimal floats. Score
//! file lines are `trial_id<TAB>label<TAB>score`. In both formats lines
//! starting with `#` (after the trial header) and blank lines are skipped.
//! Floats are written in shortest round-trip form, so save/load is exact.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{Label, ScoreSet};

pub const TRIAL_HEADER_PREFIX: &str = "#adcf-trials v1";

#[derive(Clone, Debug, PartialEq)]
pub struct TrialRecord {
    pub trial_id: String,
    pub label: Label,
    pub e_enr_asv: Vec<f64>,
    pub e_tst_asv: Vec<f64>,
    pub e_tst_cm: Vec<f64>,
}

impl TrialRecord {
    /// `[e_enr_asv, e_tst_asv, e_tst_cm]`, in that order.
    pub fn concat_embedding(&self) -> Result<Vec<f64>> {
        if self.e_enr_asv.len() != self.e_tst_asv.len() {
            return Err(Error::DimensionMismatch {
                expected: self.e_enr_asv.len(),
                got: self.e_tst_asv.len(),
            });
        }
        let mut v =
            Vec::with_capacity(self.e_enr_asv.len() * 2 + self.e_tst_cm.len());
        v.extend_from_slice(&self.e_enr_asv);
        v.extend_from_slice(&self.e_tst_asv);
        v.extend_from_slice(&self.e_tst_cm);
        Ok(v)
    }

    fn check(&self, d_asv: usize, d_cm: usize) -> Result<()> {
        for (v, d) in [
            (&self.e_enr_asv, d_asv),
            (&self.e_tst_asv, d_asv),
            (&self.e_tst_cm, d_cm),
        ] {
            if v.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: v.len(),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("embedding of trial {}", self.trial_id)));
            }
        }
        Ok(())
    }
}

/// Trials that share embedding dimensions.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialSet {
    pub d_asv: usize,
    pub d_cm: usize,
    records: Vec<TrialRecord>,
}

impl TrialSet {
    pub fn new(d_asv: usize, d_cm: usize, records: Vec<TrialRecord>) -> Result<Self> {
        for r in &records {
            r.check(d_asv, d_cm)?;
        }
        Ok(Self {
            d_asv,
            d_cm,
            records,
        })
    }

    pub fn records(&self) -> &[TrialRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        2 * self.d_asv + self.d_cm
    }

    pub fn labels(&self) -> Vec<Label> {
        self.records.iter().map(|r| r.label).collect()
    }

    /// Concatenated embeddings of every trial, row-major.
    pub fn features(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len() * self.input_dim());
        for r in &self.records {
            out.extend_from_slice(&r.e_enr_asv);
            out.extend_from_slice(&r.e_tst_asv);
            out.extend_from_slice(&r.e_tst_cm);
        }
        out
    }

    /// Trial counts as (target, nontarget, spoof).
    pub fn counts(&self) -> (usize, usize, usize) {
        let mut c = (0, 0, 0);
        for r in &self.records {
            match r.label {
                Label::Target => c.0 += 1,
                Label::Nontarget => c.1 += 1,
                Label::Spoof => c.2 += 1,
            }
        }
        c
    }

    pub fn filter(&self, keep: impl Fn(&TrialRecord) -> bool) -> Self {
        Self {
            d_asv: self.d_asv,
            d_cm: self.d_cm,
            records: self.records.iter().filter(|r| keep(r)).cloned().collect(),
        }
    }
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn parse_float(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("non-finite value `{s}`"))
    }
}

fn parse_vector(s: &str, dim: usize, what: &str) -> std::result::Result<Vec<f64>, String> {
    let v = s
        .split(' ')
        .filter(|t| !t.is_empty())
        .map(parse_float)
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if v.len() != dim {
        return Err(format!("{what} has {} values, header declares {dim}", v.len()));
    }
    Ok(v)
}

fn parse_header(line: &str) -> Option<(usize, usize)> {
    let rest = line.strip_prefix(TRIAL_HEADER_PREFIX)?;
    let (mut d_asv, mut d_cm) = (None, None);
    for tok in rest.split_whitespace() {
        if let Some(v) = tok.strip_prefix("d_asv=") {
            d_asv = v.parse().ok();
        } else if let Some(v) = tok.strip_prefix("d_cm=") {
            d_cm = v.parse().ok();
        } else {
            return None;
        }
    }
    Some((d_asv?, d_cm?))
}

fn write_vector(out: &mut String, v: &[f64]) {
    for (i, x) in v.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        write!(out, "{x}").unwrap();
    }
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.strip_suffix('\r').unwrap_or(l)))
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
}

pub fn parse_trials(text: &str, path: &Path) -> Result<TrialSet> {
    let first = text.lines().next().unwrap_or("");
    let (d_asv, d_cm) = parse_header(first.trim_end()).ok_or_else(|| {
        parse_err(
            path,
            1,
            format!("expected header `{TRIAL_HEADER_PREFIX} d_asv=<int> d_cm=<int>`"),
        )
    })?;
    let mut records = Vec::new();
    for (n, line) in data_lines(text) {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            return Err(parse_err(
                path,
                n,
                format!("expected 5 tab-separated fields, found {}", fields.len()),
            ));
        }
        let label: Label = fields[1].parse().map_err(|e: Error| parse_err(path, n, e.to_string()))?;
        let vec = |s, d, what| parse_vector(s, d, what).map_err(|m| parse_err(path, n, m));
        records.push(TrialRecord {
            trial_id: fields[0].to_string(),
            label,
            e_enr_asv: vec(fields[2], d_asv, "enrolment ASV embedding")?,
            e_tst_asv: vec(fields[3], d_asv, "test ASV embedding")?,
            e_tst_cm: vec(fields[4], d_cm, "test CM embedding")?,
        });
    }
    TrialSet::new(d_asv, d_cm, records)
}

pub fn load_trials(path: impl AsRef<Path>) -> Result<TrialSet> {
    let path = path.as_ref();
    parse_trials(&fs::read_to_string(path)?, path)
}

pub fn format_trials(set: &TrialSet) -> String {
    let mut out = format!("{TRIAL_HEADER_PREFIX} d_asv={} d_cm={}\n", set.d_asv, set.d_cm);
    for r in &set.records {
        write!(out, "{}\t{}\t", r.trial_id, r.label).unwrap();
        write_vector(&mut out, &r.e_enr_asv);
        out.push('\t');
        write_vector(&mut out, &r.e_tst_asv);
        out.push('\t');
        write_vector(&mut out, &r.e_tst_cm);
        out.push('\n');
    }
    out
}

pub fn save_trials(path: impl AsRef<Path>, set: &TrialSet) -> Result<()> {
    fs::write(path, format_trials(set))?;
    Ok(())
}

/// One line of a score file.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreRecord {
    pub trial_id: String,
    pub label: Label,
    pub score: f64,
}

pub fn parse_scores(text: &str, path: &Path) -> Result<Vec<ScoreRecord>> {
    data_lines(text)
        .map(|(n, line)| {
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(parse_err(
                    path,
                    n,
                    format!("expected 3 tab-separated fields, found {}", fields.len()),
                ));
            }
            let label = fields[1]
                .parse()
                .map_err(|e: Error| parse_err(path, n, e.to_string()))?;
            let score = parse_float(fields[2]).map_err(|m| parse_err(path, n, m))?;
            Ok(ScoreRecord {
                trial_id: fields[0].to_string(),
                label,
                score,
            })
        })
        .collect()
}

pub fn load_scores(path: impl AsRef<Path>) -> Result<Vec<ScoreRecord>> {
    let path = path.as_ref();
    parse_scores(&fs::read_to_string(path)?, path)
}

pub fn format_scores(records: &[ScoreRecord]) -> String {
    let mut out = String::from("# trial_id\tlabel\tscore\n");
    for r in records {
        writeln!(out, "{}\t{}\t{}", r.trial_id, r.label, r.score).unwrap();
    }
    out
}

pub fn save_scores(path: impl AsRef<Path>, records: &[ScoreRecord]) -> Result<()> {
    fs::write(path, format_scores(records))?;
    Ok(())
}

pub fn score_set(records: &[ScoreRecord]) -> Result<ScoreSet> {
    let labels: Vec<Label> = records.iter().map(|r| r.label).collect();
    let scores: Vec<f64> = records.iter().map(|r| r.score).collect();
    ScoreSet::from_labeled(&labels, &scores)
}

/// Parameters of the synthetic three-class trial generator.
///
/// Enrolled speakers and impostors each have a centroid in ASV space; bona
/// fide and spoofed speech have centroids in CM space (one per attack).
/// Targets pair an enrolled speaker with itself, nontargets pair it with an
/// impostor, spoofs pair it with itself but carry an attack CM embedding.
/// Centroids have norm close to `separation` and per-trial noise vectors norm
/// close to `noise`. While `n_speakers + n_impostors <= d_asv + 1` and
/// `n_attacks + 1 <= d_cm + 1` the centroids are in general position, so as
/// `noise` goes to 0 targets become linearly separable from both negative
/// classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub d_asv: usize,
    pub d_cm: usize,
    pub n_tar: usize,
    pub n_non: usize,
    pub n_spf: usize,
    pub n_speakers: usize,
    pub n_impostors: usize,
    pub n_attacks: usize,
    pub separation: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            d_asv: 16,
            d_cm: 8,
            n_tar: 1800,
            n_non: 600,
            n_spf: 600,
            n_speakers: 4,
            n_impostors: 4,
            n_attacks: 2,
            separation: 1.0,
            noise: 1.0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.d_asv == 0 || self.d_cm == 0 {
            return Err(Error::invalid("embedding dims must be positive"));
        }
        if self.n_tar + self.n_non + self.n_spf == 0 {
            return Err(Error::invalid("at least one trial must be requested"));
        }
        if self.n_speakers == 0 || self.n_impostors == 0 || self.n_attacks == 0 {
            return Err(Error::invalid("speaker, impostor and attack pools must be non-empty"));
        }
        if !(self.noise.is_finite() && self.noise > 0.0) {
            return Err(Error::invalid(format!("noise scale must be positive, got {}", self.noise)));
        }
        if !(self.separation.is_finite() && self.separation > 0.0) {
            return Err(Error::invalid(format!(
                "separation must be positive, got {}",
                self.separation
            )));
        }
        Ok(())
    }
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Vec<f64> {
    let s = scale / (dim as f64).sqrt();
    (0..dim)
        .map(|_| s * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect()
}

fn jitter(rng: &mut ChaCha8Rng, centroid: &[f64], noise: f64) -> Vec<f64> {
    gaussian(rng, centroid.len(), noise)
        .into_iter()
        .zip(centroid)
        .map(|(n, c)| c + n)
        .collect()
}

pub fn generate_synthetic(spec: &SynthSpec) -> Result<TrialSet> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let pool = |rng: &mut ChaCha8Rng, n, d| -> Vec<Vec<f64>> {
        (0..n).map(|_| gaussian(rng, d, spec.separation)).collect()
    };
    let speakers = pool(&mut rng, spec.n_speakers, spec.d_asv);
    let impostors = pool(&mut rng, spec.n_impostors, spec.d_asv);
    let bona_fide = gaussian(&mut rng, spec.d_cm, spec.separation);
    let attacks = pool(&mut rng, spec.n_attacks, spec.d_cm);

    let mut records = Vec::with_capacity(spec.n_tar + spec.n_non + spec.n_spf);
    for (label, n) in [
        (Label::Target, spec.n_tar),
        (Label::Nontarget, spec.n_non),
        (Label::Spoof, spec.n_spf),
    ] {
        for i in 0..n {
            let spk = &speakers[i % speakers.len()];
            let e_enr_asv = jitter(&mut rng, spk, spec.noise);
            let (tst, cm) = match label {
                Label::Target => (spk, &bona_fide),
                Label::Nontarget => (&impostors[i % impostors.len()], &bona_fide),
                Label::Spoof => (spk, &attacks[i % attacks.len()]),
            };
            let e_tst_asv = jitter(&mut rng, tst, spec.noise);
            let e_tst_cm = jitter(&mut rng, cm, spec.noise);
            records.push(TrialRecord {
                trial_id: format!("{}-{:06}", label.as_str(), i),
                label,
                e_enr_asv,
                e_tst_asv,
                e_tst_cm,
            });
        }
    }
    TrialSet::new(spec.d_asv, spec.d_cm, records)
}

/// Stratified split into `fractions.len()` disjoint parts. Within each class
/// records are shuffled by `seed`, part sizes use largest-remainder rounding,
/// and every part keeps the original record order.
pub fn split(set: &TrialSet, fractions: &[f64], seed: u64) -> Result<Vec<TrialSet>> {
    if fractions.is_empty() || fractions.iter().any(|&f| !(f.is_finite() && f > 0.0)) {
        return Err(Error::invalid(format!("split fractions must be positive: {fractions:?}")));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("split fractions sum to {total}, expected 1")));
    }
    let k = fractions.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let by_class: Vec<Vec<usize>> = Label::ALL
        .iter()
        .map(|&label| (0..set.len()).filter(|&i| set.records[i].label == label).collect())
        .collect();
    for (label, idx) in Label::ALL.iter().zip(&by_class) {
        if !idx.is_empty() && idx.len() < k {
            return Err(Error::invalid(format!(
                "class {label} has {} records, fewer than {k} splits",
                idx.len()
            )));
        }
    }
    let counts: Vec<usize> = by_class.iter().map(Vec::len).collect();
    let sizes = stratified_sizes(&counts, fractions);
    let mut assignment = vec![0usize; set.len()];
    for (mut idx, class_sizes) in by_class.into_iter().zip(&sizes) {
        idx.shuffle(&mut rng);
        let mut start = 0;
        for (part, &size) in class_sizes.iter().enumerate() {
            for &i in &idx[start..start + size] {
                assignment[i] = part;
            }
            start += size;
        }
    }
    Ok((0..k)
        .map(|part| TrialSet {
            d_asv: set.d_asv,
            d_cm: set.d_cm,
            records: set
                .records
                .iter()
                .zip(&assignment)
                .filter(|(_, &a)| a == part)
                .map(|(r, _)| r.clone())
                .collect(),
        })
        .collect())
}

/// Per-class part sizes whose column totals equal the largest-remainder
/// apportionment of the whole set. Each class first gets the floor of its
/// exact share; leftover units go to the parts still short of their total,
/// preferring larger fractional remainders.
pub(crate) fn stratified_sizes(counts: &[usize], fractions: &[f64]) -> Vec<Vec<usize>> {
    let total: usize = counts.iter().sum();
    let mut demand = allocate(total, fractions);
    let mut sizes: Vec<Vec<usize>> = counts
        .iter()
        .map(|&n| fractions.iter().map(|f| (f * n as f64).floor() as usize).collect())
        .collect();
    for row in &sizes {
        for (d, s) in demand.iter_mut().zip(row) {
            *d -= s;
        }
    }
    for (row, &n) in sizes.iter_mut().zip(counts) {
        let leftover = n - row.iter().sum::<usize>();
        let mut parts: Vec<usize> = (0..fractions.len()).collect();
        let rem = |k: usize| {
            let e = fractions[k] * n as f64;
            e - e.floor()
        };
        parts.sort_by(|&a, &b| {
            demand[b]
                .cmp(&demand[a])
                .then(rem(b).total_cmp(&rem(a)))
                .then(a.cmp(&b))
        });
        for &k in parts.iter().take(leftover) {
            row[k] += 1;
            demand[k] = demand[k].saturating_sub(1);
        }
    }
    sizes
}

/// Largest-remainder apportionment of `n` items by `weights` (which sum to 1).
/// Ties in the remainder go to the earlier part.
pub(crate) fn allocate(n: usize, weights: &[f64]) -> Vec<usize> {
    let exact: Vec<f64> = weights.iter().map(|w| w * n as f64).collect();
    let mut sizes: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = sizes.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        sizes[i] += 1;
    }
    sizes
}
