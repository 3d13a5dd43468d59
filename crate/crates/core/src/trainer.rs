//! Linear and small ReLU score models, mini-batch SGD with Nesterov momentum
//! and a cosine schedule, and a best-in-class search over norm-bounded
//! linear families.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::datagen::{rng_from_seed, Dataset};
use crate::error::{Error, Result};
use crate::losses::{self, equal_draws, LossSpec, Objective};
use crate::numerics::argmax_highest;

/// A score function `x ↦ h(x, ·)` over a flat parameter vector.
pub trait Model {
    fn n_classes(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];
    fn scores(&self, x: &[f64]) -> Vec<f64>;
    /// Adds `(∂h(x)/∂θ)ᵀ dscores` to `grad`.
    fn accumulate_grad(&self, x: &[f64], dscores: &[f64], grad: &mut [f64]);
    /// `true` for parameters subject to weight decay.
    fn decay_mask(&self) -> Vec<bool>;
    /// Restores parameter constraints after an update.
    fn project(&mut self) {}
}

fn uniform_init(rng: &mut impl Rng, fan_in: usize, len: usize) -> Vec<f64> {
    let a = 1.0 / (fan_in as f64).sqrt();
    (0..len).map(|_| rng.random_range(-a..=a)).collect()
}

/// `h(x, y) = w_y · x + b_y`. Parameters are the row-major `n × d` weights
/// followed by the `n` biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    n: usize,
    d: usize,
    params: Vec<f64>,
    norm_bound: Option<f64>,
    fit_bias: bool,
}

impl LinearModel {
    /// Weights from uniform(±1/√d), zero biases.
    pub fn new(n: usize, d: usize, seed: u64) -> Result<Self> {
        if n < 2 || d < 1 {
            return Err(Error::invalid("shape", "need n >= 2 and d >= 1"));
        }
        let mut rng = rng_from_seed(seed);
        let mut params = uniform_init(&mut rng, d, n * d);
        params.extend(std::iter::repeat_n(0.0, n));
        Ok(Self {
            n,
            d,
            params,
            norm_bound: None,
            fit_bias: true,
        })
    }

    pub fn zeros(n: usize, d: usize) -> Self {
        Self {
            n,
            d,
            params: vec![0.0; n * d + n],
            norm_bound: None,
            fit_bias: true,
        }
    }

    pub fn from_parts(weights: Vec<Vec<f64>>, biases: Vec<f64>) -> Result<Self> {
        let n = weights.len();
        let d = weights.first().map_or(0, Vec::len);
        if n < 2 || d < 1 || weights.iter().any(|w| w.len() != d) || biases.len() != n {
            return Err(Error::invalid("weights", "inconsistent shapes"));
        }
        let mut params: Vec<f64> = weights.into_iter().flatten().collect();
        params.extend(biases);
        Ok(Self {
            n,
            d,
            params,
            norm_bound: None,
            fit_bias: true,
        })
    }

    /// Caps `‖w_y‖₂` at `bound` for every class, projecting immediately.
    pub fn with_norm_bound(mut self, bound: f64) -> Result<Self> {
        if !(bound > 0.0 && bound.is_finite()) {
            return Err(Error::invalid("norm_bound", "must be positive"));
        }
        self.norm_bound = Some(bound);
        self.project();
        Ok(self)
    }

    /// Freezes the biases at zero when `fit` is false.
    pub fn with_bias(mut self, fit: bool) -> Self {
        self.fit_bias = fit;
        if !fit {
            let nd = self.n * self.d;
            self.params[nd..].iter_mut().for_each(|b| *b = 0.0);
        }
        self
    }

    pub fn norm_bound(&self) -> Option<f64> {
        self.norm_bound
    }

    pub fn fits_bias(&self) -> bool {
        self.fit_bias
    }

    pub fn weight(&self, y: usize) -> &[f64] {
        &self.params[y * self.d..(y + 1) * self.d]
    }

    pub fn biases(&self) -> &[f64] {
        &self.params[self.n * self.d..]
    }

    pub fn max_row_norm(&self) -> f64 {
        (0..self.n)
            .map(|y| norm(self.weight(y)))
            .fold(0.0, f64::max)
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn project_row(row: &mut [f64], bound: f64) {
    let r = norm(row);
    if r > bound {
        let s = bound / r;
        row.iter_mut().for_each(|v| *v *= s);
    }
}

impl Model for LinearModel {
    fn n_classes(&self) -> usize {
        self.n
    }

    fn input_dim(&self) -> usize {
        self.d
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn scores(&self, x: &[f64]) -> Vec<f64> {
        let b = self.biases();
        (0..self.n).map(|y| dot(self.weight(y), x) + b[y]).collect()
    }

    fn accumulate_grad(&self, x: &[f64], dscores: &[f64], grad: &mut [f64]) {
        let nd = self.n * self.d;
        for (y, &g) in dscores.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            for (gw, xi) in grad[y * self.d..(y + 1) * self.d].iter_mut().zip(x) {
                *gw += g * xi;
            }
            if self.fit_bias {
                grad[nd + y] += g;
            }
        }
    }

    fn decay_mask(&self) -> Vec<bool> {
        let nd = self.n * self.d;
        (0..self.params.len()).map(|i| i < nd).collect()
    }

    fn project(&mut self) {
        if let Some(bound) = self.norm_bound {
            let d = self.d;
            for row in self.params[..self.n * d].chunks_mut(d) {
                project_row(row, bound);
            }
        }
    }
}

/// Fully connected ReLU network. `widths` runs from the input dimension to
/// the class count; each layer stores its `out × in` weights then biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    widths: Vec<usize>,
    params: Vec<f64>,
}

impl MlpModel {
    pub fn new(d: usize, hidden: &[usize], n: usize, seed: u64) -> Result<Self> {
        if n < 2 || d < 1 || hidden.contains(&0) {
            return Err(Error::invalid(
                "shape",
                "widths must be positive and n >= 2",
            ));
        }
        let mut widths = vec![d];
        widths.extend_from_slice(hidden);
        widths.push(n);
        let mut rng = rng_from_seed(seed);
        let mut params = Vec::new();
        for w in widths.windows(2) {
            params.extend(uniform_init(&mut rng, w[0], w[0] * w[1]));
            params.extend(std::iter::repeat_n(0.0, w[1]));
        }
        Ok(Self { widths, params })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    /// Per-layer `(offset, in, out)`.
    fn layers(&self) -> Vec<(usize, usize, usize)> {
        let mut off = 0;
        self.widths
            .windows(2)
            .map(|w| {
                let l = (off, w[0], w[1]);
                off += w[0] * w[1] + w[1];
                l
            })
            .collect()
    }

    /// Activations after every layer, starting with the input.
    fn forward(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let layers = self.layers();
        let mut acts = vec![x.to_vec()];
        for (li, &(off, fan_in, out)) in layers.iter().enumerate() {
            let input = acts.last().expect("input present");
            let bias = &self.params[off + fan_in * out..off + fan_in * out + out];
            let mut z: Vec<f64> = (0..out)
                .map(|o| {
                    dot(
                        &self.params[off + o * fan_in..off + (o + 1) * fan_in],
                        input,
                    ) + bias[o]
                })
                .collect();
            if li + 1 < layers.len() {
                z.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            acts.push(z);
        }
        acts
    }
}

impl Model for MlpModel {
    fn n_classes(&self) -> usize {
        *self.widths.last().expect("non-empty widths")
    }

    fn input_dim(&self) -> usize {
        self.widths[0]
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn scores(&self, x: &[f64]) -> Vec<f64> {
        self.forward(x).pop().expect("output layer")
    }

    fn accumulate_grad(&self, x: &[f64], dscores: &[f64], grad: &mut [f64]) {
        let acts = self.forward(x);
        let layers = self.layers();
        let mut delta = dscores.to_vec();
        for li in (0..layers.len()).rev() {
            let (off, fan_in, out) = layers[li];
            let input = &acts[li];
            for o in 0..out {
                if delta[o] == 0.0 {
                    continue;
                }
                for (g, xi) in grad[off + o * fan_in..off + (o + 1) * fan_in]
                    .iter_mut()
                    .zip(input)
                {
                    *g += delta[o] * xi;
                }
                grad[off + fan_in * out + o] += delta[o];
            }
            if li > 0 {
                delta = (0..fan_in)
                    .map(|i| {
                        if input[i] <= 0.0 {
                            return 0.0;
                        }
                        (0..out)
                            .map(|o| self.params[off + o * fan_in + i] * delta[o])
                            .sum()
                    })
                    .collect();
            }
        }
    }

    fn decay_mask(&self) -> Vec<bool> {
        let mut mask = Vec::with_capacity(self.params.len());
        for w in self.widths.windows(2) {
            mask.extend(std::iter::repeat_n(true, w[0] * w[1]));
            mask.extend(std::iter::repeat_n(false, w[1]));
        }
        mask
    }
}

/// Either model kind, for code that picks one from configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AnyModel {
    Linear(LinearModel),
    Mlp(MlpModel),
}

impl AnyModel {
    fn inner(&self) -> &dyn Model {
        match self {
            AnyModel::Linear(m) => m,
            AnyModel::Mlp(m) => m,
        }
    }

    fn inner_mut(&mut self) -> &mut dyn Model {
        match self {
            AnyModel::Linear(m) => m,
            AnyModel::Mlp(m) => m,
        }
    }

    /// Checkpoint JSON: layer shapes plus row-major weights and biases.
    pub fn checkpoint(&self) -> serde_json::Value {
        let layers: Vec<serde_json::Value> = match self {
            AnyModel::Linear(m) => vec![serde_json::json!({
                "shape": [m.n, m.d],
                "weights": m.params[..m.n * m.d],
                "biases": m.biases(),
            })],
            AnyModel::Mlp(m) => m
                .layers()
                .into_iter()
                .map(|(off, fan_in, out)| {
                    serde_json::json!({
                        "shape": [out, fan_in],
                        "weights": m.params[off..off + fan_in * out],
                        "biases": m.params[off + fan_in * out..off + fan_in * out + out],
                    })
                })
                .collect(),
        };
        let kind = match self {
            AnyModel::Linear(_) => "linear",
            AnyModel::Mlp(_) => "mlp",
        };
        serde_json::json!({ "kind": kind, "layers": layers })
    }
}

impl Model for AnyModel {
    fn n_classes(&self) -> usize {
        self.inner().n_classes()
    }
    fn input_dim(&self) -> usize {
        self.inner().input_dim()
    }
    fn params(&self) -> &[f64] {
        self.inner().params()
    }
    fn params_mut(&mut self) -> &mut [f64] {
        self.inner_mut().params_mut()
    }
    fn scores(&self, x: &[f64]) -> Vec<f64> {
        self.inner().scores(x)
    }
    fn accumulate_grad(&self, x: &[f64], dscores: &[f64], grad: &mut [f64]) {
        self.inner().accumulate_grad(x, dscores, grad)
    }
    fn decay_mask(&self) -> Vec<bool> {
        self.inner().decay_mask()
    }
    fn project(&mut self) {
        self.inner_mut().project()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    Cosine,
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub schedule: Schedule,
}

impl TrainConfig {
    /// Synthetic-data defaults: 200 epochs, batch 64, lr 0.1.
    pub fn desk(seed: u64) -> Self {
        Self {
            epochs: 200,
            batch_size: 64,
            lr0: 0.1,
            momentum: 0.9,
            weight_decay: 1e-3,
            seed,
            schedule: Schedule::Cosine,
        }
    }

    /// The large-scale recipe: batch 1024, lr 0.2, weight decay 1e-3.
    pub fn paper(seed: u64) -> Self {
        Self {
            batch_size: 1024,
            lr0: 0.2,
            ..Self::desk(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::invalid("epochs", "must be >= 1"));
        }
        if self.batch_size < 1 {
            return Err(Error::invalid("batch_size", "must be >= 1"));
        }
        if !(self.lr0 >= 0.0 && self.lr0.is_finite()) {
            return Err(Error::invalid("lr0", "must be finite and >= 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum", "must lie in [0, 1)"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::invalid("weight_decay", "must be >= 0"));
        }
        Ok(())
    }
}

/// `lr0 · (1 + cos(π · step / total)) / 2`.
pub fn cosine_lr(step: usize, total_steps: usize, lr0: f64) -> Result<f64> {
    if total_steps < 1 || step > total_steps {
        return Err(Error::invalid(
            "step",
            format!("{step} outside [0, {total_steps}]"),
        ));
    }
    let frac = step as f64 / total_steps as f64;
    Ok(lr0 * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
}

/// Mean loss over the examples `idx` at the model's current parameters,
/// adding the mean score-gradient into `grad`.
fn batch_loss_grad<M: Model + ?Sized>(
    model: &M,
    data: &Dataset,
    idx: &[usize],
    spec: &LossSpec,
    stats: &losses::ClassStats,
    draws: Option<&[Vec<bool>]>,
    grad: &mut [f64],
) -> Result<f64> {
    let scale = 1.0 / idx.len() as f64;
    let mut dscore = vec![0.0; model.n_classes()];
    let mut total = 0.0;
    for (b, &i) in idx.iter().enumerate() {
        let x = &data.features()[i];
        let y = data.labels()[i];
        let s = model.scores(x);
        let d = draws.map(|d| d[b].as_slice());
        let v = losses::value_and_grad(spec, &s, y, stats, d, &mut dscore)?;
        total += v;
        dscore.iter_mut().for_each(|g| *g *= scale);
        model.accumulate_grad(x, &dscore, grad);
    }
    Ok(total * scale)
}

/// Mini-batch SGD with lookahead Nesterov momentum
/// (`v ← μv − lr·∇L(w + μv)`, `w ← w + v`), decoupled weight decay on
/// weights only and projection after every step. Returns the per-epoch
/// mean training loss.
pub fn train<M: Model + ?Sized>(
    model: &mut M,
    data: &Dataset,
    spec: &LossSpec,
    cfg: &TrainConfig,
) -> Result<Vec<EpochRecord>> {
    cfg.validate()?;
    if model.input_dim() != data.dim() {
        return Err(Error::Dimension {
            expected: model.input_dim(),
            got: data.dim(),
        });
    }
    if model.n_classes() != data.n_classes() {
        return Err(Error::Dimension {
            expected: model.n_classes(),
            got: data.n_classes(),
        });
    }
    let n = data.n_classes();
    spec.validate(n)?;
    let stats = data.class_stats();

    let mut order_rng = rng_from_seed(cfg.seed);
    let mut draw_rng = rng_from_seed(cfg.seed);
    draw_rng.set_stream(1);

    let m = data.len();
    let steps_per_epoch = m.div_ceil(cfg.batch_size);
    let total = cfg.epochs * steps_per_epoch;
    let mask = model.decay_mask();
    let p = model.params().len();
    let mut velocity = vec![0.0; p];
    let mut grad = vec![0.0; p];
    let mut saved = vec![0.0; p];
    let mut order: Vec<usize> = (0..m).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step = 0;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut order_rng);
        let mut epoch_loss = 0.0;
        let mut lr = cfg.lr0;
        for batch in order.chunks(cfg.batch_size) {
            lr = match cfg.schedule {
                Schedule::Cosine => cosine_lr(step, total, cfg.lr0)?,
                Schedule::Constant => cfg.lr0,
            };
            let draws: Option<Vec<Vec<bool>>> = match spec {
                LossSpec::Equal { p, .. } => Some(
                    batch
                        .iter()
                        .map(|_| equal_draws(*p, n, &mut draw_rng))
                        .collect(),
                ),
                _ => None,
            };

            saved.copy_from_slice(model.params());
            if cfg.momentum > 0.0 {
                for (w, v) in model.params_mut().iter_mut().zip(&velocity) {
                    *w += cfg.momentum * v;
                }
            }
            grad.iter_mut().for_each(|g| *g = 0.0);
            let loss = batch_loss_grad(
                model,
                data,
                batch,
                spec,
                &stats,
                draws.as_deref(),
                &mut grad,
            )?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged { epoch, step, loss });
            }
            epoch_loss += loss * batch.len() as f64;

            let params = model.params_mut();
            params.copy_from_slice(&saved);
            for i in 0..p {
                velocity[i] = cfg.momentum * velocity[i] - lr * grad[i];
                params[i] += velocity[i];
                if mask[i] && cfg.weight_decay > 0.0 {
                    params[i] -= lr * cfg.weight_decay * saved[i];
                }
            }
            model.project();
            if model.params().iter().any(|w| !w.is_finite()) {
                return Err(Error::Diverged { epoch, step, loss });
            }
            step += 1;
        }
        history.push(EpochRecord {
            epoch,
            loss: epoch_loss / m as f64,
            lr,
        });
    }
    Ok(history)
}

/// Argmax of the raw scores; ties go to the highest class index.
pub fn predict<M: Model + ?Sized>(model: &M, x: &[f64]) -> Result<usize> {
    if x.len() != model.input_dim() {
        return Err(Error::Dimension {
            expected: model.input_dim(),
            got: x.len(),
        });
    }
    Ok(argmax_highest(&model.scores(x)))
}

pub fn predict_all<M: Model + ?Sized>(model: &M, data: &Dataset) -> Result<Vec<usize>> {
    data.features().iter().map(|x| predict(model, x)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormConstraint {
    /// `‖w_y‖ ≤ B`.
    Ball,
    /// `‖w_y‖ = B`.
    Sphere,
}

/// Linear scores `w_y · x` without bias and with every `‖w_y‖` bounded.
/// With `antisymmetric` (two classes only) the family is `w_2 = −w_1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundedLinearFamily {
    pub n: usize,
    pub d: usize,
    pub norm_bound: f64,
    pub constraint: NormConstraint,
    pub antisymmetric: bool,
}

impl BoundedLinearFamily {
    fn validate(&self) -> Result<()> {
        if self.n < 2 || self.d < 1 {
            return Err(Error::invalid("family", "need n >= 2 and d >= 1"));
        }
        if !(self.norm_bound > 0.0 && self.norm_bound.is_finite()) {
            return Err(Error::invalid("norm_bound", "must be positive"));
        }
        if self.antisymmetric && self.n != 2 {
            return Err(Error::invalid("antisymmetric", "needs exactly two classes"));
        }
        Ok(())
    }

    fn dof(&self) -> usize {
        if self.antisymmetric {
            self.d
        } else {
            self.n * self.d
        }
    }

    fn project(&self, theta: &mut [f64]) {
        for row in theta.chunks_mut(self.d) {
            match self.constraint {
                NormConstraint::Ball => project_row(row, self.norm_bound),
                NormConstraint::Sphere => {
                    let r = norm(row);
                    if r > 0.0 {
                        let s = self.norm_bound / r;
                        row.iter_mut().for_each(|v| *v *= s);
                    } else {
                        row[0] = self.norm_bound;
                    }
                }
            }
        }
    }

    fn random_point(&self, rng: &mut impl Rng) -> Vec<f64> {
        let mut theta: Vec<f64> = (0..self.dof())
            .map(|_| StandardNormal.sample(rng))
            .collect();
        for row in theta.chunks_mut(self.d) {
            let r = norm(row).max(f64::MIN_POSITIVE);
            let radius = match self.constraint {
                NormConstraint::Sphere => self.norm_bound,
                NormConstraint::Ball => {
                    self.norm_bound * rng.random::<f64>().powf(1.0 / self.d as f64)
                }
            };
            row.iter_mut().for_each(|v| *v *= radius / r);
        }
        theta
    }

    /// Expands search coordinates to an `n × d` weight matrix.
    pub fn weights(&self, theta: &[f64]) -> Vec<Vec<f64>> {
        if self.antisymmetric {
            vec![theta.to_vec(), theta.iter().map(|v| -v).collect()]
        } else {
            theta.chunks(self.d).map(<[f64]>::to_vec).collect()
        }
    }

    pub fn model(&self, theta: &[f64]) -> LinearModel {
        LinearModel::from_parts(self.weights(theta), vec![0.0; self.n])
            .expect("family shapes are consistent")
            .with_bias(false)
    }
}

/// Result of [`best_in_class_search`].
#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub model: LinearModel,
    pub theta: Vec<f64>,
    pub value: f64,
}

fn empirical_objective(
    family: &BoundedLinearFamily,
    data: &Dataset,
    objective: &Objective,
    stats: &losses::ClassStats,
    theta: &[f64],
    grad: Option<&mut [f64]>,
) -> Result<f64> {
    let weights = family.weights(theta);
    let m = data.len() as f64;
    let mut total = 0.0;
    let mut dscore = vec![0.0; family.n];
    let mut grad = grad;
    if let Some(g) = grad.as_deref_mut() {
        g.iter_mut().for_each(|v| *v = 0.0);
    }
    for (x, y) in data.iter() {
        let s: Vec<f64> = weights.iter().map(|w| dot(w, x)).collect();
        match (objective, grad.as_deref_mut()) {
            (Objective::Surrogate(spec), Some(g)) => {
                total += losses::value_and_grad(spec, &s, y, stats, None, &mut dscore)?;
                if family.antisymmetric {
                    let c = (dscore[0] - dscore[1]) / m;
                    g.iter_mut().zip(x).for_each(|(gi, xi)| *gi += c * xi);
                } else {
                    for (k, row) in g.chunks_mut(family.d).enumerate() {
                        let c = dscore[k] / m;
                        row.iter_mut().zip(x).for_each(|(gi, xi)| *gi += c * xi);
                    }
                }
            }
            _ => total += objective.eval(&s, y, stats)?,
        }
    }
    Ok(total / m)
}

fn projected_gradient(
    family: &BoundedLinearFamily,
    data: &Dataset,
    objective: &Objective,
    stats: &losses::ClassStats,
    mut theta: Vec<f64>,
) -> Result<(Vec<f64>, f64)> {
    let mut grad = vec![0.0; theta.len()];
    let mut value = empirical_objective(family, data, objective, stats, &theta, Some(&mut grad))?;
    let mut eta = 1.0;
    for _ in 0..1000 {
        let mut improved = false;
        while eta > 1e-14 {
            let mut cand: Vec<f64> = theta.iter().zip(&grad).map(|(t, g)| t - eta * g).collect();
            family.project(&mut cand);
            let moved: f64 = cand.iter().zip(&theta).map(|(a, b)| (a - b).powi(2)).sum();
            let decrease: f64 = grad
                .iter()
                .zip(cand.iter().zip(&theta))
                .map(|(g, (a, b))| g * (b - a))
                .sum();
            let v = empirical_objective(family, data, objective, stats, &cand, None)?;
            if moved > 0.0 && v <= value - 1e-4 * decrease.max(0.0) && v < value {
                theta = cand;
                value =
                    empirical_objective(family, data, objective, stats, &theta, Some(&mut grad))?;
                debug_assert!((value - v).abs() <= 1e-9 * v.abs().max(1.0));
                eta *= 2.0;
                improved = true;
                break;
            }
            eta *= 0.5;
        }
        if !improved {
            break;
        }
    }
    Ok((theta, value))
}

fn perturbation_search(
    family: &BoundedLinearFamily,
    data: &Dataset,
    objective: &Objective,
    stats: &losses::ClassStats,
    mut theta: Vec<f64>,
    rng: &mut impl Rng,
) -> Result<(Vec<f64>, f64)> {
    let mut value = empirical_objective(family, data, objective, stats, &theta, None)?;
    let mut sigma = 0.5;
    let mut misses = 0;
    while sigma > 1e-5 {
        let mut cand: Vec<f64> = theta
            .iter()
            .map(|t| {
                let z: f64 = StandardNormal.sample(rng);
                t + sigma * family.norm_bound * z
            })
            .collect();
        family.project(&mut cand);
        let v = empirical_objective(family, data, objective, stats, &cand, None)?;
        if v < value {
            theta = cand;
            value = v;
            misses = 0;
        } else {
            misses += 1;
            if misses >= 30 {
                sigma *= 0.5;
                misses = 0;
            }
        }
    }
    Ok((theta, value))
}

/// Multi-restart search for the empirical minimizer of `objective` over
/// `family`. Surrogates use projected gradient descent with backtracking;
/// the balanced 0-1 objective uses a shrinking random-perturbation hill
/// climb. The best restart wins; ties keep the earliest.
pub fn best_in_class_search(
    family: &BoundedLinearFamily,
    data: &Dataset,
    objective: &Objective,
    restarts: usize,
    seed: u64,
) -> Result<SearchResult> {
    family.validate()?;
    if restarts < 1 {
        return Err(Error::invalid("restarts", "must be >= 1"));
    }
    if data.dim() != family.d || data.n_classes() != family.n {
        return Err(Error::Dimension {
            expected: family.d,
            got: data.dim(),
        });
    }
    if let Objective::Surrogate(spec) = objective {
        if matches!(spec, LossSpec::Equal { .. }) {
            return Err(Error::Unsupported("EQUAL in a deterministic search".into()));
        }
        spec.validate(family.n)?;
    }
    let stats = data.class_stats();
    let mut rng = rng_from_seed(seed);
    let mut best: Option<(Vec<f64>, f64)> = None;
    for _ in 0..restarts {
        let start = family.random_point(&mut rng);
        let (theta, value) = match objective {
            Objective::Balanced => {
                perturbation_search(family, data, objective, &stats, start, &mut rng)?
            }
            Objective::Surrogate(_) => projected_gradient(family, data, objective, &stats, start)?,
        };
        if best.as_ref().is_none_or(|(_, v)| value < *v) {
            best = Some((theta, value));
        }
    }
    let (theta, value) = best.expect("at least one restart");
    Ok(SearchResult {
        model: family.model(&theta),
        theta,
        value,
    })
}

/// Angle in degrees between the binary decision boundary
/// `(w_1 − w_2) · x = 0` and the first coordinate axis (`x₂ = 0` in the
/// plane).
pub fn boundary_angle_deg(model: &LinearModel) -> Result<f64> {
    if model.n_classes() != 2 || model.input_dim() != 2 {
        return Err(Error::Unsupported(
            "boundary angle outside 2-class planar models".into(),
        ));
    }
    let u: Vec<f64> = model
        .weight(0)
        .iter()
        .zip(model.weight(1))
        .map(|(a, b)| a - b)
        .collect();
    if u[0] == 0.0 && u[1] == 0.0 {
        return Err(Error::invalid("model", "no decision boundary"));
    }
    Ok(u[0].abs().atan2(u[1].abs()).to_degrees())
}
