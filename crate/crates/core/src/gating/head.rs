//! Existence head: a small MLP over mean-pooled prompt features that
//! predicts whether the referred object appears anywhere in the video.
//!
//! Architecture: mean-pool over tokens and frames, dense D→H, ReLU,
//! dense H→1, sigmoid.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const HEAD_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_HIDDEN: usize = 64;

/// Rank-3 feature tensor of shape tokens × frames × features, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TensorRepr", into = "TensorRepr")]
pub struct FeatureTensor {
    n: usize,
    t: usize,
    d: usize,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct TensorRepr {
    n: usize,
    t: usize,
    d: usize,
    values: Vec<f64>,
}

impl TryFrom<TensorRepr> for FeatureTensor {
    type Error = Error;

    fn try_from(r: TensorRepr) -> Result<Self> {
        FeatureTensor::new(r.n, r.t, r.d, r.values)
    }
}

impl From<FeatureTensor> for TensorRepr {
    fn from(f: FeatureTensor) -> Self {
        TensorRepr { n: f.n, t: f.t, d: f.d, values: f.values }
    }
}

impl FeatureTensor {
    pub fn new(n: usize, t: usize, d: usize, values: Vec<f64>) -> Result<Self> {
        if n == 0 || t == 0 || d == 0 {
            return Err(Error::Input(format!("feature tensor dims must be positive, got {n}x{t}x{d}")));
        }
        if values.len() != n * t * d {
            return Err(Error::Input(format!(
                "feature tensor {n}x{t}x{d} needs {} values, got {}",
                n * t * d,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!("non-finite feature value at flat index {i}")));
        }
        Ok(FeatureTensor { n, t, d, values })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.n, self.t, self.d)
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, token: usize, frame: usize, feature: usize) -> f64 {
        self.values[(token * self.t + frame) * self.d + feature]
    }

    /// Mean over the token and frame axes.
    pub fn pool(&self) -> Vec<f64> {
        let mut acc = vec![0.0; self.d];
        for slice in self.values.chunks_exact(self.d) {
            for (a, v) in acc.iter_mut().zip(slice) {
                *a += v;
            }
        }
        let count = (self.n * self.t) as f64;
        acc.iter_mut().for_each(|a| *a /= count);
        acc
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "HeadDocument", into = "HeadDocument")]
pub struct ExistenceHead {
    input_dim: usize,
    hidden: usize,
    /// hidden × input_dim, row-major.
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: f64,
    seed: u64,
}

/// On-disk form: `{format_version, h, d, w1, b1, w2, b2, seed}` with `w1`
/// as `h` rows of `d` values.
#[derive(Serialize, Deserialize)]
struct HeadDocument {
    format_version: u32,
    h: usize,
    d: usize,
    w1: Vec<Vec<f64>>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: f64,
    seed: u64,
}

impl From<ExistenceHead> for HeadDocument {
    fn from(head: ExistenceHead) -> Self {
        HeadDocument {
            format_version: HEAD_FORMAT_VERSION,
            h: head.hidden,
            d: head.input_dim,
            w1: head.w1.chunks_exact(head.input_dim).map(<[f64]>::to_vec).collect(),
            b1: head.b1,
            w2: head.w2,
            b2: head.b2,
            seed: head.seed,
        }
    }
}

impl TryFrom<HeadDocument> for ExistenceHead {
    type Error = Error;

    fn try_from(doc: HeadDocument) -> Result<Self> {
        if doc.format_version != HEAD_FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported head format_version {}", doc.format_version)));
        }
        if doc.w1.len() != doc.h || doc.w1.iter().any(|row| row.len() != doc.d) {
            return Err(Error::Format(format!("w1 must be {} rows of {} values", doc.h, doc.d)));
        }
        let mut head = ExistenceHead::zeros(doc.d, doc.h)?;
        head.w1 = doc.w1.into_iter().flatten().collect();
        head.b1 = doc.b1;
        head.w2 = doc.w2;
        head.b2 = doc.b2;
        head.seed = doc.seed;
        head.validate()?;
        Ok(head)
    }
}

/// Gradient of the loss with respect to each head parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadGradients {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl HeadGradients {
    fn zeros(input_dim: usize, hidden: usize) -> Self {
        HeadGradients {
            w1: vec![0.0; hidden * input_dim],
            b1: vec![0.0; hidden],
            w2: vec![0.0; hidden],
            b2: 0.0,
        }
    }

    pub fn accumulate(&mut self, other: &HeadGradients) {
        for (a, b) in self.w1.iter_mut().zip(&other.w1) {
            *a += b;
        }
        for (a, b) in self.b1.iter_mut().zip(&other.b1) {
            *a += b;
        }
        for (a, b) in self.w2.iter_mut().zip(&other.w2) {
            *a += b;
        }
        self.b2 += other.b2;
    }

    pub fn scale(&mut self, k: f64) {
        self.w1.iter_mut().chain(&mut self.b1).chain(&mut self.w2).for_each(|v| *v *= k);
        self.b2 *= k;
    }

    /// Same order as [`ExistenceHead::parameters`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.w1.len() + 2 * self.b1.len() + 1);
        out.extend(&self.w1);
        out.extend(&self.b1);
        out.extend(&self.w2);
        out.push(self.b2);
        out
    }
}

impl ExistenceHead {
    pub fn zeros(input_dim: usize, hidden: usize) -> Result<Self> {
        if input_dim == 0 || hidden == 0 {
            return Err(Error::Input(format!(
                "head dims must be positive, got input {input_dim}, hidden {hidden}"
            )));
        }
        Ok(ExistenceHead {
            input_dim,
            hidden,
            w1: vec![0.0; hidden * input_dim],
            b1: vec![0.0; hidden],
            w2: vec![0.0; hidden],
            b2: 0.0,
            seed: 0,
        })
    }

    /// Uniform init in ±1/√fan_in from a ChaCha8 stream seeded with `seed`.
    pub fn init(input_dim: usize, hidden: usize, seed: u64) -> Result<Self> {
        let mut head = ExistenceHead::zeros(input_dim, hidden)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a1 = 1.0 / (input_dim as f64).sqrt();
        let a2 = 1.0 / (hidden as f64).sqrt();
        head.w1.iter_mut().chain(&mut head.b1).for_each(|v| *v = rng.random_range(-a1..a1));
        head.w2.iter_mut().for_each(|v| *v = rng.random_range(-a2..a2));
        head.b2 = rng.random_range(-a2..a2);
        head.seed = seed;
        Ok(head)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn w1(&self, unit: usize, input: usize) -> f64 {
        self.w1[unit * self.input_dim + input]
    }

    pub fn b1(&self) -> &[f64] {
        &self.b1
    }

    pub fn w2(&self) -> &[f64] {
        &self.w2
    }

    pub fn b2(&self) -> f64 {
        self.b2
    }

    pub fn set_b2(&mut self, b2: f64) {
        self.b2 = b2;
    }

    /// Flat view ordered w1 (row-major), b1, w2, b2.
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        out.extend(&self.w1);
        out.extend(&self.b1);
        out.extend(&self.w2);
        out.push(self.b2);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.hidden * (self.input_dim + 2) + 1
    }

    pub fn with_parameters(&self, params: &[f64]) -> Result<Self> {
        if params.len() != self.parameter_count() {
            return Err(Error::Input(format!(
                "expected {} parameters, got {}",
                self.parameter_count(),
                params.len()
            )));
        }
        let (w1, rest) = params.split_at(self.w1.len());
        let (b1, rest) = rest.split_at(self.hidden);
        let (w2, rest) = rest.split_at(self.hidden);
        let head = ExistenceHead {
            w1: w1.to_vec(),
            b1: b1.to_vec(),
            w2: w2.to_vec(),
            b2: rest[0],
            ..self.clone()
        };
        head.validate()?;
        Ok(head)
    }

    fn validate(&self) -> Result<()> {
        if self.b1.len() != self.hidden || self.w2.len() != self.hidden || self.w1.len() != self.hidden * self.input_dim {
            return Err(Error::Format("head parameter shapes disagree with h and d".into()));
        }
        if self.parameters().iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("head parameters must be finite".into()));
        }
        Ok(())
    }

    fn check_input(&self, f: &FeatureTensor) -> Result<()> {
        if f.dim() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: format!("feature dim {}", self.input_dim),
                actual: format!("feature dim {}", f.dim()),
            });
        }
        Ok(())
    }

    fn hidden_pre(&self, pooled: &[f64]) -> Vec<f64> {
        self.w1
            .chunks_exact(self.input_dim)
            .zip(&self.b1)
            .map(|(row, b)| row.iter().zip(pooled).map(|(w, x)| w * x).sum::<f64>() + b)
            .collect()
    }

    fn logit_pooled(&self, pooled: &[f64]) -> f64 {
        let pre = self.hidden_pre(pooled);
        pre.iter().zip(&self.w2).map(|(a, w)| w * a.max(0.0)).sum::<f64>() + self.b2
    }

    /// Returns the logit `z` and the existence probability `p = σ(z)`.
    pub fn forward(&self, f: &FeatureTensor) -> Result<(f64, f64)> {
        self.check_input(f)?;
        let z = self.logit_pooled(&f.pool());
        Ok((z, sigmoid(z)))
    }

    /// Per-sample BCE gradients; ReLU's subgradient at 0 is taken as 0.
    pub fn gradients(&self, f: &FeatureTensor, label: bool) -> Result<HeadGradients> {
        self.check_input(f)?;
        Ok(self.gradients_pooled(&f.pool(), label))
    }

    fn gradients_pooled(&self, pooled: &[f64], label: bool) -> HeadGradients {
        let pre = self.hidden_pre(pooled);
        let z = pre.iter().zip(&self.w2).map(|(a, w)| w * a.max(0.0)).sum::<f64>() + self.b2;
        let dz = sigmoid(z) - if label { 1.0 } else { 0.0 };
        let mut g = HeadGradients::zeros(self.input_dim, self.hidden);
        g.b2 = dz;
        for (k, &a) in pre.iter().enumerate() {
            g.w2[k] = dz * a.max(0.0);
            if a > 0.0 {
                let da = dz * self.w2[k];
                g.b1[k] = da;
                for (gw, x) in g.w1[k * self.input_dim..(k + 1) * self.input_dim].iter_mut().zip(pooled) {
                    *gw = da * x;
                }
            }
        }
        g
    }

    fn step(&mut self, g: &HeadGradients, lr: f64) {
        for (p, d) in self.w1.iter_mut().zip(&g.w1) {
            *p -= lr * d;
        }
        for (p, d) in self.b1.iter_mut().zip(&g.b1) {
            *p -= lr * d;
        }
        for (p, d) in self.w2.iter_mut().zip(&g.w2) {
            *p -= lr * d;
        }
        self.b2 -= lr * g.b2;
    }
}

/// Logistic function, kept inside the open interval (0, 1) even where the
/// exact value would round to 0 or 1.
pub fn sigmoid(z: f64) -> f64 {
    let p = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// BCE evaluated from the logit: `max(z, 0) - z·y + ln(1 + e^{-|z|})`.
pub fn bce_with_logits(z: f64, label: bool) -> f64 {
    let y = if label { 1.0 } else { 0.0 };
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

/// `-[y ln p + (1 - y) ln(1 - p)]` for a probability already in hand.
pub fn bce_loss(p: f64, label: bool) -> f64 {
    if label {
        -p.ln()
    } else {
        -(-p).ln_1p()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub hidden: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.1,
            epochs: 500,
            hidden: DEFAULT_HIDDEN,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trained {
    pub head: ExistenceHead,
    /// Mean BCE at the start of each epoch.
    pub losses: Vec<f64>,
    /// Mean BCE of the returned head.
    pub final_loss: f64,
}

pub fn mean_loss(head: &ExistenceHead, dataset: &[(FeatureTensor, bool)]) -> Result<f64> {
    let mut total = 0.0;
    for (f, y) in dataset {
        let (z, _) = head.forward(f)?;
        total += bce_with_logits(z, *y);
    }
    Ok(total / dataset.len() as f64)
}

/// Full-batch gradient descent on mean BCE. Both present and absent
/// samples train the head.
pub fn train(mut head: ExistenceHead, dataset: &[(FeatureTensor, bool)], cfg: &TrainConfig) -> Result<Trained> {
    if dataset.is_empty() {
        return Err(Error::Input("training dataset is empty".into()));
    }
    if !(cfg.lr > 0.0 && cfg.lr.is_finite()) {
        return Err(Error::Input(format!("learning rate must be positive, got {}", cfg.lr)));
    }
    for (f, _) in dataset {
        head.check_input(f)?;
    }
    let pooled: Vec<(Vec<f64>, bool)> = dataset.iter().map(|(f, y)| (f.pool(), *y)).collect();
    let n = pooled.len() as f64;
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut grad = HeadGradients::zeros(head.input_dim, head.hidden);
        let mut loss = 0.0;
        for (x, y) in &pooled {
            loss += bce_with_logits(head.logit_pooled(x), *y);
            grad.accumulate(&head.gradients_pooled(x, *y));
        }
        loss /= n;
        if !loss.is_finite() {
            return Err(Error::Training { epoch, loss });
        }
        losses.push(loss);
        grad.scale(1.0 / n);
        head.step(&grad, cfg.lr);
    }
    let final_loss = pooled.iter().map(|(x, y)| bce_with_logits(head.logit_pooled(x), *y)).sum::<f64>() / n;
    if !final_loss.is_finite() {
        return Err(Error::Training { epoch: cfg.epochs, loss: final_loss });
    }
    Ok(Trained { head, losses, final_loss })
}

/// Seeded init followed by [`train`].
pub fn fit(dataset: &[(FeatureTensor, bool)], cfg: &TrainConfig) -> Result<Trained> {
    let d = dataset
        .first()
        .ok_or_else(|| Error::Input("training dataset is empty".into()))?
        .0
        .dim();
    train(ExistenceHead::init(d, cfg.hidden, cfg.seed)?, dataset, cfg)
}
