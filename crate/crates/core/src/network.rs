//! Fully-connected fusion back-end: leaky-ReLU hidden layers and a single
//! sigmoid output unit, with hand-written reverse-mode gradients.
//!
//! Batches are flat row-major slices of `rows * input_dim` values. Every
//! reduction runs in a fixed order, so a batch forward equals a row-by-row
//! forward bit for bit and training is reproducible from a seed.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::sigmoid;

pub const DEFAULT_HIDDEN: [usize; 3] = [256, 128, 64];
pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;
/// Two 192-dim speaker embeddings and one 160-dim countermeasure embedding.
pub const DEFAULT_INPUT_DIM: usize = 544;

const MAGIC: &[u8; 8] = b"ADCF-MLP";
pub const CHECKPOINT_VERSION: u32 = 1;

/// `dims` for an input of `input_dim` values through the default hidden stack.
pub fn default_dims(input_dim: usize) -> Vec<usize> {
    let mut d = vec![input_dim];
    d.extend(DEFAULT_HIDDEN);
    d.push(1);
    d
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    /// `out_dim x in_dim`, row-major.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Layer {
    fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            weights: vec![0.0; in_dim * out_dim],
            biases: vec![0.0; out_dim],
            in_dim,
            out_dim,
        }
    }

    fn row(&self, o: usize) -> &[f64] {
        &self.weights[o * self.in_dim..(o + 1) * self.in_dim]
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights.iter_mut().chain(self.biases.iter_mut())
    }

    fn params(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().chain(self.biases.iter())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpModel {
    dims: Vec<usize>,
    layers: Vec<Layer>,
    leaky_slope: f64,
    /// Decision threshold calibrated by training.
    pub threshold: f64,
}

/// Gradients shaped like the layers of the model they came from.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSet {
    pub layers: Vec<Layer>,
}

impl GradientSet {
    pub fn zeros_like(model: &MlpModel) -> Self {
        Self {
            layers: model
                .layers
                .iter()
                .map(|l| Layer::zeros(l.in_dim, l.out_dim))
                .collect(),
        }
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.params())
    }

    fn check_shape(&self, model: &MlpModel) -> Result<()> {
        let congruent = self.layers.len() == model.layers.len()
            && self
                .layers
                .iter()
                .zip(&model.layers)
                .all(|(g, l)| g.in_dim == l.in_dim && g.out_dim == l.out_dim);
        if congruent {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(
                "gradient set does not match model layers".into(),
            ))
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Pre-activations of every layer for one batch.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    rows: usize,
    /// `pre[l]` is `rows x dims[l + 1]`.
    pre: Vec<Vec<f64>>,
    /// Hidden activations, `post[l]` is `rows x dims[l + 1]` for hidden layers.
    post: Vec<Vec<f64>>,
    pub scores: Vec<f64>,
}

impl MlpModel {
    /// Fan-in scaled uniform initialization, `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`,
    /// zero biases, threshold 0.5.
    pub fn init(dims: &[usize], leaky_slope: f64, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(dims, leaky_slope)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut model.layers {
            let bound = 1.0 / (layer.in_dim as f64).sqrt();
            for w in &mut layer.weights {
                *w = rng.random_range(-bound..bound);
            }
        }
        Ok(model)
    }

    pub fn zeros(dims: &[usize], leaky_slope: f64) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::invalid("a model needs at least input and output dims"));
        }
        if dims.contains(&0) {
            return Err(Error::invalid(format!("layer dims must be positive: {dims:?}")));
        }
        if *dims.last().unwrap() != 1 {
            return Err(Error::invalid(format!(
                "output layer must have width 1: {dims:?}"
            )));
        }
        if !leaky_slope.is_finite() {
            return Err(Error::NonFinite(format!("leaky slope {leaky_slope}")));
        }
        Ok(Self {
            dims: dims.to_vec(),
            layers: dims.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect(),
            leaky_slope,
            threshold: 0.5,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn leaky_slope(&self) -> f64 {
        self.leaky_slope
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    fn rows_of(&self, inputs: &[f64]) -> Result<usize> {
        let d = self.input_dim();
        if inputs.len() % d != 0 {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: inputs.len(),
            });
        }
        Ok(inputs.len() / d)
    }

    pub fn forward(&self, input: &[f64]) -> Result<f64> {
        if input.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        Ok(self.forward_batch(input)?[0])
    }

    pub fn forward_batch(&self, inputs: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_cached(inputs)?.scores)
    }

    pub fn forward_cached(&self, inputs: &[f64]) -> Result<ForwardCache> {
        let rows = self.rows_of(inputs)?;
        let last = self.layers.len() - 1;
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post: Vec<Vec<f64>> = Vec::with_capacity(last);
        for (l, layer) in self.layers.iter().enumerate() {
            let prev: &[f64] = if l == 0 { inputs } else { &post[l - 1] };
            let mut z = vec![0.0; rows * layer.out_dim];
            for r in 0..rows {
                let x = &prev[r * layer.in_dim..(r + 1) * layer.in_dim];
                let zr = &mut z[r * layer.out_dim..(r + 1) * layer.out_dim];
                for (o, zo) in zr.iter_mut().enumerate() {
                    *zo = dot(layer.row(o), x) + layer.biases[o];
                }
            }
            if l < last {
                let slope = self.leaky_slope;
                post.push(z.iter().map(|&v| if v > 0.0 { v } else { slope * v }).collect());
            }
            pre.push(z);
        }
        let scores = pre[last].iter().map(|&z| sigmoid(z)).collect();
        Ok(ForwardCache {
            rows,
            pre,
            post,
            scores,
        })
    }

    /// Gradient of `sum_r upstream[r] * score_r` with respect to every parameter.
    pub fn backward(&self, inputs: &[f64], upstream: &[f64]) -> Result<GradientSet> {
        let cache = self.forward_cached(inputs)?;
        self.backward_cached(inputs, &cache, upstream)
    }

    pub fn backward_cached(
        &self,
        inputs: &[f64],
        cache: &ForwardCache,
        upstream: &[f64],
    ) -> Result<GradientSet> {
        let rows = cache.rows;
        if upstream.len() != rows {
            return Err(Error::ShapeMismatch(format!(
                "{} upstream gradients for a batch of {rows}",
                upstream.len()
            )));
        }
        if inputs.len() != rows * self.input_dim() {
            return Err(Error::ShapeMismatch("inputs do not match the cached batch".into()));
        }
        let mut grads = GradientSet::zeros_like(self);
        // d loss / d pre-activation of the output unit
        let mut delta: Vec<f64> = upstream
            .iter()
            .zip(&cache.scores)
            .map(|(u, s)| u * s * (1.0 - s))
            .collect();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let prev: &[f64] = if l == 0 { inputs } else { &cache.post[l - 1] };
            let g = &mut grads.layers[l];
            for r in 0..rows {
                let x = &prev[r * layer.in_dim..(r + 1) * layer.in_dim];
                let dr = &delta[r * layer.out_dim..(r + 1) * layer.out_dim];
                for (o, &d) in dr.iter().enumerate() {
                    if d != 0.0 {
                        axpy(&mut g.weights[o * layer.in_dim..(o + 1) * layer.in_dim], d, x);
                    }
                    g.biases[o] += d;
                }
            }
            if l == 0 {
                break;
            }
            let z_prev = &cache.pre[l - 1];
            let mut next = vec![0.0; rows * layer.in_dim];
            for r in 0..rows {
                let dr = &delta[r * layer.out_dim..(r + 1) * layer.out_dim];
                let nr = &mut next[r * layer.in_dim..(r + 1) * layer.in_dim];
                for (o, &d) in dr.iter().enumerate() {
                    if d != 0.0 {
                        axpy(nr, d, layer.row(o));
                    }
                }
                let zr = &z_prev[r * layer.in_dim..(r + 1) * layer.in_dim];
                for (n, &z) in nr.iter_mut().zip(zr) {
                    if z <= 0.0 {
                        *n *= self.leaky_slope;
                    }
                }
            }
            delta = next;
        }
        Ok(grads)
    }

    pub fn all_finite(&self) -> bool {
        self.leaky_slope.is_finite()
            && self.threshold.is_finite()
            && self.layers.iter().all(|l| l.params().all(|v| v.is_finite()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + 8 * self.num_params());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend_from_slice(&self.leaky_slope.to_le_bytes());
        out.extend_from_slice(&self.threshold.to_le_bytes());
        for layer in &self.layers {
            for v in layer.params() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut rd = Reader { bytes, pos: 0 };
        if rd.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic, not an ADCF-MLP checkpoint".into()));
        }
        let version = rd.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version} (this build reads version {CHECKPOINT_VERSION})"
            )));
        }
        let n = rd.u32()? as usize;
        if n > 64 {
            return Err(Error::Checkpoint(format!("implausible layer count {n}")));
        }
        let dims = (0..n)
            .map(|_| rd.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let leaky_slope = rd.f64()?;
        let threshold = rd.f64()?;
        let mut model =
            Self::zeros(&dims, leaky_slope).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let expected = model.num_params() * 8;
        if rd.remaining() != expected {
            return Err(Error::Checkpoint(format!(
                "parameter block is {} bytes, dims {dims:?} need {expected}",
                rd.remaining()
            )));
        }
        model.threshold = threshold;
        for layer in &mut model.layers {
            for v in layer.params_mut() {
                *v = rd.f64()?;
            }
        }
        if !model.all_finite() {
            return Err(Error::Checkpoint("non-finite parameter".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Load a checkpoint and require its layer dims to equal `dims`.
    pub fn load_with_dims(path: impl AsRef<Path>, dims: &[usize]) -> Result<Self> {
        let model = Self::load(path)?;
        if model.dims != dims {
            return Err(Error::Checkpoint(format!(
                "checkpoint has dims {:?}, expected {dims:?}",
                model.dims
            )));
        }
        Ok(model)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Checkpoint("truncated file".into()));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("bad optimizer settings {self:?}")))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    m: GradientSet,
    v: GradientSet,
}

impl AdamState {
    pub fn new(model: &MlpModel) -> Self {
        Self {
            step: 0,
            m: GradientSet::zeros_like(model),
            v: GradientSet::zeros_like(model),
        }
    }
}

/// One bias-corrected Adam step.
pub fn apply_update(
    model: &mut MlpModel,
    grads: &GradientSet,
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    grads.check_shape(model)?;
    state.m.check_shape(model)?;
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (((layer, g), m), v) in model
        .layers
        .iter_mut()
        .zip(&grads.layers)
        .zip(&mut state.m.layers)
        .zip(&mut state.v.layers)
    {
        let params = layer.params_mut();
        let gs = g.params();
        let ms = m.params_mut();
        let vs = v.params_mut();
        for (((p, &g), m), v) in params.zip(gs).zip(ms).zip(vs) {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}
