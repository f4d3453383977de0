//! GDL embedding layer, MLP head and the combined model.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::graph::{Graph, Label};
use crate::matcher::{MatchError, Pattern};
use crate::mining::{learn_with_report, Layer, LearnReport, MiningConfig, MiningError, TrainingSet};
use crate::Program;

const MOMENTUM: f64 = 0.9;
const FULL_BATCH_LIMIT: usize = 4096;
const BATCH_SIZE: usize = 256;
const HEADER: &str = "gdlnn-model v1";

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("training set is empty")]
    EmptyTraining,
    #[error("representation {index} has width {found}, expected {expected}")]
    WidthMismatch { index: usize, expected: usize, found: usize },
    #[error("graph {graph}: {source}")]
    Match { graph: usize, source: MatchError },
    #[error(transparent)]
    Mining(#[from] MiningError),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("model file line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("unsupported model file version `{0}`")]
    Version(String),
    #[error("MLP shape {sizes:?} does not fit {programs} programs and {labels} labels")]
    Shape { sizes: Vec<usize>, programs: usize, labels: usize },
}

/// How a program turns into a representation coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    /// 1.0 when the graph satisfies the program, else 0.0.
    #[default]
    Sigma,
    /// Number of valuations.
    SigmaCount,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Sigma => "sigma",
            Activation::SigmaCount => "sigma_count",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "sigma" => Some(Activation::Sigma),
            "sigma_count" => Some(Activation::SigmaCount),
            _ => None,
        }
    }
}

/// Representation of `g` under `programs`.
pub fn embed(g: &Graph, programs: &[Program], kind: Activation, budget: u64) -> Result<Vec<f64>, MatchError> {
    let patterns: Vec<Pattern> = programs.iter().map(Pattern::compile).collect();
    embed_compiled(g, &patterns, kind, budget)
}

pub fn embed_compiled(g: &Graph, patterns: &[Pattern], kind: Activation, budget: u64) -> Result<Vec<f64>, MatchError> {
    patterns
        .iter()
        .map(|p| match kind {
            Activation::Sigma => p.satisfies(g, budget).map(|b| if b { 1.0 } else { 0.0 }),
            Activation::SigmaCount => p.count(g, budget).map(|c| c as f64),
        })
        .collect()
}

/// Embeds every graph in parallel; output order follows `graphs`.
pub fn embed_all(graphs: &[Graph], patterns: &[Pattern], kind: Activation, budget: u64) -> Result<Vec<Vec<f64>>, ModelError> {
    graphs
        .par_iter()
        .enumerate()
        .map(|(graph, g)| embed_compiled(g, patterns, kind, budget).map_err(|source| ModelError::Match { graph, source }))
        .collect()
}

/// Fully connected network with rectifier hidden layers. Parameters are
/// stored flat, layer by layer, each as a row-major weight matrix
/// (outputs by inputs) followed by its bias vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
}

impl Mlp {
    /// Glorot-uniform weights, zero biases.
    pub fn new(sizes: &[usize], seed: u64) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output widths");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(param_count(sizes));
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
            params.extend((0..fan_in * fan_out).map(|_| rng.random_range(-limit..=limit)));
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Mlp {
            sizes: sizes.to_vec(),
            params,
        }
    }

    pub fn zeros(sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output widths");
        Mlp {
            sizes: sizes.to_vec(),
            params: vec![0.0; param_count(sizes)],
        }
    }

    pub fn from_params(sizes: &[usize], params: Vec<f64>) -> Option<Self> {
        (sizes.len() >= 2 && params.len() == param_count(sizes)).then(|| Mlp {
            sizes: sizes.to_vec(),
            params,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_width(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_width(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn layer_count(&self) -> usize {
        self.sizes.len() - 1
    }

    /// Weights (row-major, outputs by inputs) and biases of layer `l`.
    pub fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let (w, b) = self.offsets(l);
        let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
        (&self.params[w..w + fan_in * fan_out], &self.params[b..b + fan_out])
    }

    fn offsets(&self, l: usize) -> (usize, usize) {
        let start = param_count(&self.sizes[..=l]);
        (start, start + self.sizes[l] * self.sizes[l + 1])
    }

    /// Output scores before the softmax.
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut a = x.to_vec();
        for l in 0..self.layer_count() {
            let mut z = self.affine(l, &a);
            if l + 1 < self.layer_count() {
                z.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            a = z;
        }
        a
    }

    pub fn probabilities(&self, x: &[f64]) -> Vec<f64> {
        softmax(&self.forward(x))
    }

    /// Index of the largest output; ties go to the lowest index.
    pub fn predict_class(&self, x: &[f64]) -> usize {
        argmax(&self.forward(x))
    }

    fn affine(&self, l: usize, a: &[f64]) -> Vec<f64> {
        let (w, b) = self.layer(l);
        let fan_in = self.sizes[l];
        b.iter()
            .enumerate()
            .map(|(o, bias)| bias + w[o * fan_in..(o + 1) * fan_in].iter().zip(a).map(|(w, a)| w * a).sum::<f64>())
            .collect()
    }

    /// Mean cross-entropy plus `weight_decay / 2` times the squared norm of
    /// the weights (biases are not decayed).
    pub fn loss(&self, xs: &[Vec<f64>], ys: &[usize], weight_decay: f64) -> f64 {
        let data: f64 = xs
            .iter()
            .zip(ys)
            .map(|(x, &y)| cross_entropy(&self.forward(x), y))
            .sum::<f64>()
            / xs.len().max(1) as f64;
        data + 0.5 * weight_decay * self.weight_norm_sq()
    }

    pub fn loss_and_gradient(&self, xs: &[Vec<f64>], ys: &[usize], weight_decay: f64) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.params.len()];
        let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let loss = self.accumulate_gradient(&refs, ys, weight_decay, None, &mut grad);
        (loss, grad)
    }

    fn weight_norm_sq(&self) -> f64 {
        (0..self.layer_count()).map(|l| self.layer(l).0.iter().map(|w| w * w).sum::<f64>()).sum()
    }

    /// Writes the gradient of the batch loss into `grad` and returns the
    /// loss. With `dropout`, hidden units are dropped with the given rate
    /// and survivors rescaled.
    fn accumulate_gradient(
        &self,
        xs: &[&[f64]],
        ys: &[usize],
        weight_decay: f64,
        mut dropout: Option<(&mut ChaCha8Rng, f64)>,
        grad: &mut [f64],
    ) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let layers = self.layer_count();
        let scale = 1.0 / xs.len().max(1) as f64;
        let mut loss = 0.0;
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(layers + 1);
        let mut masks: Vec<Vec<f64>> = vec![Vec::new(); layers];
        for (x, &y) in xs.iter().zip(ys) {
            acts.clear();
            acts.push(x.to_vec());
            for l in 0..layers {
                let mut z = self.affine(l, &acts[l]);
                if l + 1 < layers {
                    masks[l].clear();
                    for v in z.iter_mut() {
                        let m = match dropout.as_mut() {
                            Some((rng, rate)) => {
                                if rng.random::<f64>() < *rate {
                                    0.0
                                } else {
                                    1.0 / (1.0 - *rate)
                                }
                            }
                            None => 1.0,
                        };
                        let m = if *v > 0.0 { m } else { 0.0 };
                        *v = v.max(0.0) * m;
                        masks[l].push(m);
                    }
                }
                acts.push(z);
            }
            let logits = &acts[layers];
            loss += cross_entropy(logits, y);
            let mut delta = softmax(logits);
            delta[y] -= 1.0;
            delta.iter_mut().for_each(|d| *d *= scale);
            for l in (0..layers).rev() {
                let (w_off, b_off) = self.offsets(l);
                let fan_in = self.sizes[l];
                let a = &acts[l];
                for (o, d) in delta.iter().enumerate() {
                    if *d == 0.0 {
                        continue;
                    }
                    grad[b_off + o] += d;
                    let row = &mut grad[w_off + o * fan_in..w_off + (o + 1) * fan_in];
                    row.iter_mut().zip(a).for_each(|(g, a)| *g += d * a);
                }
                if l == 0 {
                    break;
                }
                let (w, _) = self.layer(l);
                let mut prev = vec![0.0; fan_in];
                for (o, d) in delta.iter().enumerate() {
                    if *d != 0.0 {
                        prev.iter_mut().zip(&w[o * fan_in..(o + 1) * fan_in]).for_each(|(p, w)| *p += d * w);
                    }
                }
                // masks hold 0 for inactive units, so this covers the ReLU derivative too
                prev.iter_mut().zip(&masks[l - 1]).for_each(|(p, m)| *p *= m);
                delta = prev;
            }
        }
        if weight_decay != 0.0 {
            for l in 0..layers {
                let (w_off, b_off) = self.offsets(l);
                for i in w_off..b_off {
                    grad[i] += weight_decay * self.params[i];
                }
            }
        }
        loss * scale + 0.5 * weight_decay * self.weight_norm_sq()
    }
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

fn cross_entropy(logits: &[f64], y: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    lse - logits[y]
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Largest relative error between the analytic gradient and central
/// differences with step `h`, over all parameters.
pub fn gradient_check(mlp: &Mlp, xs: &[Vec<f64>], ys: &[usize], weight_decay: f64, h: f64) -> f64 {
    let (_, analytic) = mlp.loss_and_gradient(xs, ys, weight_decay);
    let mut probe = mlp.clone();
    let mut worst: f64 = 0.0;
    for i in 0..analytic.len() {
        let orig = probe.params[i];
        probe.params[i] = orig + h;
        let up = probe.loss(xs, ys, weight_decay);
        probe.params[i] = orig - h;
        let down = probe.loss(xs, ys, weight_decay);
        probe.params[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    worst
}

pub const LEARNING_RATES: [f64; 3] = [0.01, 0.005, 0.0005];
pub const HIDDEN_DIMS: [usize; 4] = [20, 32, 64, 128];
pub const WEIGHT_DECAYS: [f64; 4] = [0.0, 1e-3, 5e-4, 5e-5];

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Width of every hidden layer.
    pub hidden: usize,
    pub hidden_layers: usize,
    pub weight_decay: f64,
    pub dropout: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            hidden: 32,
            hidden_layers: 2,
            weight_decay: 5e-4,
            dropout: 0.5,
            max_epochs: 500,
            patience: 100,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Basic sanity always; grid membership of the learning rate, width and
    /// weight decay unless `allow_off_grid`.
    pub fn validate(&self, allow_off_grid: bool) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate {} must be positive", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} must be in [0, 1)", self.dropout));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight decay {} must be non-negative", self.weight_decay));
        }
        if self.hidden == 0 && self.hidden_layers > 0 {
            return bad("hidden width must be positive".into());
        }
        if self.max_epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if allow_off_grid {
            return Ok(());
        }
        if !LEARNING_RATES.contains(&self.learning_rate) {
            return bad(format!("learning rate {} not in {LEARNING_RATES:?}", self.learning_rate));
        }
        if !HIDDEN_DIMS.contains(&self.hidden) {
            return bad(format!("hidden width {} not in {HIDDEN_DIMS:?}", self.hidden));
        }
        if !WEIGHT_DECAYS.contains(&self.weight_decay) {
            return bad(format!("weight decay {} not in {WEIGHT_DECAYS:?}", self.weight_decay));
        }
        Ok(())
    }

    /// Every learning rate, width and weight decay combination, other
    /// fields copied from `self`.
    pub fn grid(&self) -> Vec<TrainConfig> {
        let mut out = Vec::new();
        for &learning_rate in &LEARNING_RATES {
            for &hidden in &HIDDEN_DIMS {
                for &weight_decay in &WEIGHT_DECAYS {
                    out.push(TrainConfig {
                        learning_rate,
                        hidden,
                        weight_decay,
                        ..self.clone()
                    });
                }
            }
        }
        out
    }

    fn sizes(&self, input: usize, output: usize) -> Vec<usize> {
        let mut sizes = vec![input];
        sizes.extend(std::iter::repeat_n(self.hidden, self.hidden_layers));
        sizes.push(output);
        sizes
    }
}

/// Outcome of [`train_mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedMlp {
    pub mlp: Mlp,
    /// Output index `i` stands for `labels[i]`; sorted ascending.
    pub labels: Vec<Label>,
    /// Epoch (from 1) whose weights were kept.
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub train_accuracy: f64,
    pub val_accuracy: Option<f64>,
    /// Mean cross-entropy on the validation data, without weight decay.
    pub val_loss: Option<f64>,
}

/// Accuracy of `mlp` on `data`; labels outside `labels` count as errors.
pub fn accuracy(mlp: &Mlp, labels: &[Label], data: &[(Vec<f64>, Label)]) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let hits = data.iter().filter(|(x, y)| labels[mlp.predict_class(x)] == *y).count();
    hits as f64 / data.len() as f64
}

/// Trains with momentum SGD on softmax cross-entropy. Keeps the weights
/// with the best validation accuracy (ties broken by validation loss) and
/// stops after `patience` epochs without improvement. Without validation
/// data the training loss decides.
pub fn train_mlp(train: &[(Vec<f64>, Label)], val: &[(Vec<f64>, Label)], cfg: &TrainConfig) -> Result<TrainedMlp, ModelError> {
    cfg.validate(true)?;
    if train.is_empty() {
        return Err(ModelError::EmptyTraining);
    }
    let width = train[0].0.len();
    for (index, (x, _)) in train.iter().chain(val).enumerate() {
        if x.len() != width {
            return Err(ModelError::WidthMismatch {
                index,
                expected: width,
                found: x.len(),
            });
        }
    }
    let mut labels: Vec<Label> = train.iter().map(|(_, y)| *y).collect();
    labels.sort_unstable();
    labels.dedup();
    let class = |y: Label| labels.binary_search(&y).ok();

    let xs: Vec<&[f64]> = train.iter().map(|(x, _)| x.as_slice()).collect();
    let ys: Vec<usize> = train.iter().map(|(_, y)| class(*y).unwrap()).collect();
    let val_xs: Vec<Vec<f64>> = val.iter().filter(|(_, y)| class(*y).is_some()).map(|(x, _)| x.clone()).collect();
    let val_ys: Vec<usize> = val.iter().filter_map(|(_, y)| class(*y)).collect();

    let mut mlp = Mlp::new(&cfg.sizes(width, labels.len()), cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut velocity = vec![0.0; mlp.params.len()];
    let mut grad = vec![0.0; mlp.params.len()];
    let mut order: Vec<usize> = (0..train.len()).collect();
    let train_xs: Vec<Vec<f64>> = xs.iter().map(|x| x.to_vec()).collect();

    // (accuracy, loss) of the kept weights; higher accuracy, then lower loss wins
    let mut best: Option<(f64, f64)> = None;
    let mut best_mlp = mlp.clone();
    let mut best_epoch = 0;
    let mut epochs_run = 0;
    for epoch in 1..=cfg.max_epochs {
        epochs_run = epoch;
        if train.len() > FULL_BATCH_LIMIT {
            order.shuffle(&mut rng);
        }
        let batch = if train.len() > FULL_BATCH_LIMIT { BATCH_SIZE } else { train.len() };
        for chunk in order.chunks(batch) {
            let bx: Vec<&[f64]> = chunk.iter().map(|&i| xs[i]).collect();
            let by: Vec<usize> = chunk.iter().map(|&i| ys[i]).collect();
            let dropout = (cfg.dropout > 0.0).then_some((&mut rng, cfg.dropout));
            mlp.accumulate_gradient(&bx, &by, cfg.weight_decay, dropout, &mut grad);
            for ((p, v), g) in mlp.params.iter_mut().zip(velocity.iter_mut()).zip(&grad) {
                *v = MOMENTUM * *v - cfg.learning_rate * g;
                *p += *v;
            }
        }
        let current = if val.is_empty() {
            (0.0, mlp.loss(&train_xs, &ys, 0.0))
        } else {
            (accuracy(&mlp, &labels, val), mlp.loss(&val_xs, &val_ys, 0.0))
        };
        let improved = match best {
            None => true,
            Some((acc, loss)) => current.0 > acc || (current.0 == acc && current.1 < loss),
        };
        if improved {
            best = Some(current);
            best_mlp.params.copy_from_slice(&mlp.params);
            best_epoch = epoch;
        } else if epoch - best_epoch >= cfg.patience {
            break;
        }
    }
    let train_pairs: Vec<(Vec<f64>, Label)> = train.to_vec();
    Ok(TrainedMlp {
        train_accuracy: accuracy(&best_mlp, &labels, &train_pairs),
        val_accuracy: (!val.is_empty()).then(|| accuracy(&best_mlp, &labels, val)),
        val_loss: (!val_xs.is_empty()).then(|| best_mlp.loss(&val_xs, &val_ys, 0.0)),
        mlp: best_mlp,
        labels,
        best_epoch,
        epochs_run,
    })
}

/// Predicted label and the softmax score of every class.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub label: Label,
    pub class: usize,
    pub scores: Vec<f64>,
}

/// A GDL layer followed by an MLP head.
#[derive(Debug, Clone)]
pub struct Model {
    layer: Layer,
    patterns: Vec<Pattern>,
    activation: Activation,
    labels: Vec<Label>,
    mlp: Mlp,
    budget: u64,
    metadata: BTreeMap<String, String>,
}

impl PartialEq for Model {
    fn eq(&self, other: &Self) -> bool {
        self.layer == other.layer
            && self.activation == other.activation
            && self.labels == other.labels
            && self.mlp == other.mlp
            && self.budget == other.budget
            && self.metadata == other.metadata
    }
}

impl Model {
    pub fn new(layer: Layer, activation: Activation, labels: Vec<Label>, mlp: Mlp, budget: u64) -> Result<Self, ModelError> {
        if mlp.input_width() != layer.programs.len() || mlp.output_width() != labels.len() {
            return Err(ModelError::Shape {
                sizes: mlp.sizes.clone(),
                programs: layer.programs.len(),
                labels: labels.len(),
            });
        }
        let patterns = layer.programs.iter().map(|sp| Pattern::compile(&sp.program)).collect();
        Ok(Model {
            layer,
            patterns,
            activation,
            labels,
            mlp,
            budget,
            metadata: BTreeMap::new(),
        })
    }

    pub fn with_metadata(mut self, key: &str, value: impl ToString) -> Self {
        self.metadata.insert(key.to_string(), value.to_string());
        self
    }

    /// Same model, matching with a different per-query budget.
    pub fn with_budget(mut self, budget: u64) -> Self {
        self.budget = budget;
        self
    }

    pub fn layer(&self) -> &Layer {
        &self.layer
    }

    pub fn programs(&self) -> impl Iterator<Item = &Program> {
        self.layer.programs.iter().map(|sp| &sp.program)
    }

    pub fn patterns(&self) -> &[Pattern] {
        &self.patterns
    }

    pub fn width(&self) -> usize {
        self.patterns.len()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub fn budget(&self) -> u64 {
        self.budget
    }

    pub fn metadata(&self) -> &BTreeMap<String, String> {
        &self.metadata
    }

    pub fn embed(&self, g: &Graph) -> Result<Vec<f64>, MatchError> {
        embed_compiled(g, &self.patterns, self.activation, self.budget)
    }

    pub fn embed_all(&self, graphs: &[Graph]) -> Result<Vec<Vec<f64>>, ModelError> {
        embed_all(graphs, &self.patterns, self.activation, self.budget)
    }

    pub fn predict(&self, g: &Graph) -> Result<Prediction, MatchError> {
        Ok(self.predict_from_representation(&self.embed(g)?))
    }

    pub fn predict_all(&self, graphs: &[Graph]) -> Result<Vec<Prediction>, ModelError> {
        Ok(self.embed_all(graphs)?.iter().map(|x| self.predict_from_representation(x)).collect())
    }

    pub fn predict_from_representation(&self, x: &[f64]) -> Prediction {
        let scores = self.mlp.probabilities(x);
        let class = argmax(&scores);
        Prediction {
            label: self.labels[class],
            class,
            scores,
        }
    }

    pub fn class_of(&self, label: Label) -> Option<usize> {
        self.labels.iter().position(|&l| l == label)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{HEADER}\n");
        let _ = writeln!(out, "activation {}", self.activation.name());
        let _ = writeln!(out, "budget {}", self.budget);
        let labels: Vec<String> = self.labels.iter().map(i64::to_string).collect();
        let _ = writeln!(out, "labels {}", labels.join(" "));
        for (k, v) in &self.metadata {
            let _ = writeln!(out, "meta {k}={v}");
        }
        let layer = self.layer.to_text();
        let _ = writeln!(out, "layer {}", layer.lines().count());
        out.push_str(&layer);
        let sizes: Vec<String> = self.mlp.sizes.iter().map(usize::to_string).collect();
        let _ = writeln!(out, "mlp {}", sizes.join(" "));
        for l in 0..self.mlp.layer_count() {
            let (w, b) = self.mlp.layer(l);
            let fan_in = self.mlp.sizes[l];
            let _ = writeln!(out, "weights {l} {}x{fan_in}", b.len());
            for o in 0..b.len() {
                write_row(&mut out, &w[o * fan_in..(o + 1) * fan_in]);
            }
            let _ = writeln!(out, "bias {l} {}", b.len());
            write_row(&mut out, b);
        }
        out.push_str("end\n");
        out
    }

    pub fn parse(text: &str) -> Result<Model, ModelError> {
        let mut lines = Lines::new(text);
        let header = lines.next("header")?;
        if header != HEADER {
            return match header.strip_prefix("gdlnn-model ") {
                Some(v) => Err(ModelError::Version(v.to_string())),
                None => Err(lines.error("expected `gdlnn-model v1`")),
            };
        }
        let activation = lines.keyed("activation")?;
        let activation = Activation::from_name(activation).ok_or_else(|| lines.error("unknown activation"))?;
        let budget = lines.keyed("budget")?.parse().map_err(|_| lines.error("bad budget"))?;
        let labels = lines
            .keyed("labels")?
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| lines.error("bad label")))
            .collect::<Result<Vec<Label>, _>>()?;
        let mut metadata = BTreeMap::new();
        let mut line = lines.next("layer")?;
        while let Some(kv) = line.strip_prefix("meta ") {
            let (k, v) = kv.split_once('=').ok_or_else(|| lines.error("expected `meta key=value`"))?;
            metadata.insert(k.to_string(), v.to_string());
            line = lines.next("layer")?;
        }
        let count: usize = line
            .strip_prefix("layer ")
            .and_then(|c| c.parse().ok())
            .ok_or_else(|| lines.error("expected `layer <lines>`"))?;
        let start = lines.pos;
        let mut block = Vec::with_capacity(count);
        for _ in 0..count {
            block.push(lines.next("layer text")?);
        }
        let layer = Layer::parse(&block.join("\n")).map_err(|e| match e {
            MiningError::LayerFormat { line, message } => ModelError::Format {
                line: start + line,
                message,
            },
            other => ModelError::Mining(other),
        })?;
        let sizes = lines
            .keyed("mlp")?
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| lines.error("bad layer size")))
            .collect::<Result<Vec<usize>, _>>()?;
        if sizes.len() < 2 {
            return Err(lines.error("MLP needs at least two sizes"));
        }
        let mut params = Vec::with_capacity(param_count(&sizes));
        for l in 0..sizes.len() - 1 {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let expect = format!("{l} {fan_out}x{fan_in}");
            if lines.keyed("weights")? != expect {
                return Err(lines.error(&format!("expected `weights {expect}`")));
            }
            for _ in 0..fan_out {
                let row = lines.next("weight row")?;
                parse_row(row, fan_in, &mut params).map_err(|m| lines.error(&m))?;
            }
            let expect = format!("{l} {fan_out}");
            if lines.keyed("bias")? != expect {
                return Err(lines.error(&format!("expected `bias {expect}`")));
            }
            let row = lines.next("bias row")?;
            parse_row(row, fan_out, &mut params).map_err(|m| lines.error(&m))?;
        }
        if lines.next("end")? != "end" {
            return Err(lines.error("expected `end`"));
        }
        let mlp = Mlp::from_params(&sizes, params).ok_or_else(|| lines.error("parameter count mismatch"))?;
        let mut model = Model::new(layer, activation, labels, mlp, budget)?;
        model.metadata = metadata;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|source| ModelError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Model, ModelError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ModelError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Model::parse(&text)
    }
}

fn write_row(out: &mut String, row: &[f64]) {
    for (i, v) in row.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        let _ = write!(out, "{v:?}");
    }
    out.push('\n');
}

fn parse_row(row: &str, n: usize, into: &mut Vec<f64>) -> Result<(), String> {
    let before = into.len();
    for tok in row.split_whitespace() {
        let v: f64 = tok.parse().map_err(|_| format!("bad number `{tok}`"))?;
        if !v.is_finite() {
            return Err(format!("non-finite parameter `{tok}`"));
        }
        into.push(v);
    }
    if into.len() - before != n {
        return Err(format!("expected {n} values, found {}", into.len() - before));
    }
    Ok(())
}

struct Lines<'a> {
    lines: Vec<&'a str>,
    pos: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Lines {
            lines: text.lines().collect(),
            pos: 0,
        }
    }

    fn next(&mut self, what: &str) -> Result<&'a str, ModelError> {
        let line = self.lines.get(self.pos).copied().ok_or_else(|| ModelError::Format {
            line: self.pos + 1,
            message: format!("unexpected end of file, expected {what}"),
        })?;
        self.pos += 1;
        Ok(line)
    }

    fn keyed(&mut self, key: &str) -> Result<&'a str, ModelError> {
        let line = self.next(key)?;
        if line == key {
            return Ok("");
        }
        line.strip_prefix(key)
            .and_then(|r| r.strip_prefix(' '))
            .ok_or_else(|| self.error(&format!("expected `{key} ...`")))
    }

    fn error(&self, message: &str) -> ModelError {
        ModelError::Format {
            line: self.pos.max(1),
            message: message.to_string(),
        }
    }
}

/// Summary of [`fit`].
#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub learn: LearnReport,
    pub train: TrainedMlp,
}

/// Mines a layer from `train`, embeds both sets and trains the head.
pub fn fit(
    train: &TrainingSet,
    val: &[(Graph, Label)],
    mining: &MiningConfig,
    cfg: &TrainConfig,
    activation: Activation,
) -> Result<(Model, FitReport), ModelError> {
    let learn = learn_with_report(train, mining)?;
    let layer = Layer {
        k: mining.k,
        epsilon: mining.epsilon,
        programs: learn.programs.clone(),
    };
    let (model, trained) = fit_layer(layer, train, val, cfg, activation, mining.match_budget)?;
    Ok((model, FitReport { learn, train: trained }))
}

/// Trains the head on top of an existing layer.
pub fn fit_layer(
    layer: Layer,
    train: &TrainingSet,
    val: &[(Graph, Label)],
    cfg: &TrainConfig,
    activation: Activation,
    budget: u64,
) -> Result<(Model, TrainedMlp), ModelError> {
    let patterns: Vec<Pattern> = layer.programs.iter().map(|sp| Pattern::compile(&sp.program)).collect();
    let train_x = embed_all(train.graphs(), &patterns, activation, budget)?;
    let val_graphs: Vec<Graph> = val.iter().map(|(g, _)| g.clone()).collect();
    let val_x = embed_all(&val_graphs, &patterns, activation, budget)?;
    let train_pairs: Vec<(Vec<f64>, Label)> = train_x.into_iter().zip(train.labels().iter().copied()).collect();
    let val_pairs: Vec<(Vec<f64>, Label)> = val_x.into_iter().zip(val.iter().map(|(_, y)| *y)).collect();
    let trained = train_mlp(&train_pairs, &val_pairs, cfg)?;
    let model = assemble(layer, activation, budget, cfg, &trained)?;
    Ok((model, trained))
}

fn assemble(layer: Layer, activation: Activation, budget: u64, cfg: &TrainConfig, trained: &TrainedMlp) -> Result<Model, ModelError> {
    Ok(Model::new(layer, activation, trained.labels.clone(), trained.mlp.clone(), budget)?
        .with_metadata("lr", cfg.learning_rate)
        .with_metadata("hidden", cfg.hidden)
        .with_metadata("weight_decay", cfg.weight_decay)
        .with_metadata("seed", cfg.seed)
        .with_metadata("best_epoch", trained.best_epoch)
        .with_metadata("train_accuracy", trained.train_accuracy))
}

/// Candidate settings for [`grid_fit`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub epsilons: Vec<f64>,
    pub ks: Vec<usize>,
    pub train: Vec<TrainConfig>,
    /// Everything but epsilon and k.
    pub mining: MiningConfig,
    pub activation: Activation,
}

/// The winning settings of a [`grid_fit`] run.
#[derive(Debug, Clone, PartialEq)]
pub struct GridReport {
    pub epsilon: f64,
    pub k: usize,
    pub train: TrainConfig,
    pub trained: TrainedMlp,
    pub trials: usize,
}

/// Tries every combination in `spec` and keeps the model with the best
/// validation accuracy, ties going to the lower validation loss and then
/// to the earlier combination. Mining runs once per epsilon.
pub fn grid_fit(train: &TrainingSet, val: &[(Graph, Label)], spec: &GridSpec) -> Result<(Model, GridReport), ModelError> {
    if spec.epsilons.is_empty() || spec.ks.is_empty() || spec.train.is_empty() {
        return Err(ModelError::Config("empty search grid".into()));
    }
    let max_k = *spec.ks.iter().max().unwrap();
    let val_graphs: Vec<Graph> = val.iter().map(|(g, _)| g.clone()).collect();
    let budget = spec.mining.match_budget;
    let mut best: Option<(f64, f64, Model, GridReport)> = None;
    let mut trials = 0;
    for &epsilon in &spec.epsilons {
        let mining = MiningConfig {
            epsilon,
            k: max_k.max(train.len()),
            ..spec.mining.clone()
        };
        let pool = learn_with_report(train, &mining)?.programs;
        let patterns: Vec<Pattern> = pool.iter().map(|sp| Pattern::compile(&sp.program)).collect();
        let train_x = embed_all(train.graphs(), &patterns, spec.activation, budget)?;
        let val_x = embed_all(&val_graphs, &patterns, spec.activation, budget)?;
        for &k in &spec.ks {
            let chosen = crate::mining::top_k(pool.clone(), k, spec.mining.balanced);
            let columns: Vec<usize> = chosen
                .iter()
                .map(|sp| pool.iter().position(|p| p.label == sp.label && p.program == sp.program).unwrap())
                .collect();
            let project = |xs: &[Vec<f64>], ys: &mut dyn Iterator<Item = Label>| -> Vec<(Vec<f64>, Label)> {
                xs.iter().map(|x| (columns.iter().map(|&c| x[c]).collect(), ys.next().unwrap())).collect()
            };
            let train_pairs = project(&train_x, &mut train.labels().iter().copied());
            let val_pairs = project(&val_x, &mut val.iter().map(|(_, y)| *y));
            for cfg in &spec.train {
                trials += 1;
                let trained = train_mlp(&train_pairs, &val_pairs, cfg)?;
                let acc = trained.val_accuracy.unwrap_or(trained.train_accuracy);
                let loss = trained.val_loss.unwrap_or(f64::INFINITY);
                log::debug!("trial={trials} epsilon={epsilon:?} k={k} lr={} hidden={} weight_decay={} val_accuracy={acc:?}", cfg.learning_rate, cfg.hidden, cfg.weight_decay);
                let better = best.as_ref().is_none_or(|(a, l, ..)| acc > *a || (acc == *a && loss < *l));
                if better {
                    let layer = Layer {
                        k,
                        epsilon,
                        programs: chosen.clone(),
                    };
                    let model = assemble(layer, spec.activation, budget, cfg, &trained)?;
                    let report = GridReport {
                        epsilon,
                        k,
                        train: cfg.clone(),
                        trained,
                        trials: 0,
                    };
                    best = Some((acc, loss, model, report));
                }
            }
        }
    }
    let (_, _, model, mut report) = best.unwrap();
    report.trials = trials;
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{program_a, program_b, toy_graphs};
    use crate::mining::ScoredProgram;

    fn toy_layer() -> Layer {
        let programs = [program_a(), program_b()]
            .into_iter()
            .zip([1, 2])
            .map(|(program, label)| ScoredProgram {
                program,
                label,
                score: 1.0,
                matched_same: 2,
                matched_total: 2,
            })
            .collect();
        Layer {
            k: 2,
            epsilon: 1.0,
            programs,
        }
    }

    #[test]
    fn toy_embeddings() {
        let progs = [program_a(), program_b()];
        let got: Vec<Vec<f64>> = toy_graphs()
            .iter()
            .map(|g| embed(g, &progs, Activation::Sigma, 1000).unwrap())
            .collect();
        assert_eq!(got, vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert!(embed(&toy_graphs()[0], &[], Activation::Sigma, 1000).unwrap().is_empty());
    }

    #[test]
    fn counts_dominate_indicators() {
        let progs = [program_a(), program_b()];
        for g in toy_graphs() {
            let s = embed(&g, &progs, Activation::Sigma, 1000).unwrap();
            let c = embed(&g, &progs, Activation::SigmaCount, 1000).unwrap();
            assert!(s.iter().zip(&c).all(|(s, c)| c >= s));
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut mlp = Mlp::new(&[5, 7, 6, 3], 9);
        mlp.params_mut().iter_mut().for_each(|p| *p = rng.random_range(-1.0..1.0));
        let xs: Vec<Vec<f64>> = (0..30).map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let ys: Vec<usize> = (0..30).map(|_| rng.random_range(0..3)).collect();
        let e = gradient_check(&mlp, &xs, &ys, 1e-3, 1e-5);
        assert!(e < 1e-4, "{e}");
    }

    #[test]
    fn separable_toy_reaches_full_accuracy() {
        let data = vec![
            (vec![1.0, 0.0], 1),
            (vec![0.0, 1.0], 2),
            (vec![1.0, 0.0], 1),
            (vec![0.0, 1.0], 2),
        ];
        let t = train_mlp(&data, &[], &TrainConfig::default()).unwrap();
        assert_eq!(t.train_accuracy, 1.0);
        assert_eq!(t.labels, vec![1, 2]);
    }

    #[test]
    fn contradictory_points_cap_accuracy() {
        let data = vec![(vec![1.0], 1), (vec![1.0], 2)];
        let t = train_mlp(&data, &[], &TrainConfig::default()).unwrap();
        assert!(t.train_accuracy <= 0.5);
    }

    #[test]
    fn training_rejects_bad_input() {
        assert!(matches!(train_mlp(&[], &[], &TrainConfig::default()), Err(ModelError::EmptyTraining)));
        let data = vec![(vec![1.0], 1), (vec![1.0, 0.0], 2)];
        assert!(matches!(
            train_mlp(&data, &[], &TrainConfig::default()),
            Err(ModelError::WidthMismatch { index: 1, .. })
        ));
    }

    #[test]
    fn training_is_seeded() {
        let data: Vec<(Vec<f64>, Label)> = (0..20)
            .map(|i| (vec![(i % 3) as f64, (i % 2) as f64], (i % 2) as Label))
            .collect();
        let cfg = TrainConfig {
            max_epochs: 50,
            ..TrainConfig::default()
        };
        let a = train_mlp(&data, &data[..6], &cfg).unwrap();
        let b = train_mlp(&data, &data[..6], &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_mlp_predicts_lowest_label() {
        let model = Model::new(toy_layer(), Activation::Sigma, vec![1, 2], Mlp::zeros(&[2, 4, 2]), 1000).unwrap();
        for g in toy_graphs() {
            assert_eq!(model.predict(&g).unwrap().label, 1);
        }
    }

    #[test]
    fn model_text_round_trips() {
        let cfg = TrainConfig::default();
        let ts = TrainingSet::from_labeled(toy_graphs().to_vec()).unwrap();
        let (model, _) = fit_layer(toy_layer(), &ts, &[], &cfg, Activation::Sigma, 1000).unwrap();
        let back = Model::parse(&model.to_text()).unwrap();
        assert_eq!(back, model);
        for (g, y) in toy_graphs().iter().zip([1, 2, 1, 2]) {
            assert_eq!(back.predict(g).unwrap().label, y);
        }
    }

    #[test]
    fn empty_layer_round_trips() {
        let layer = Layer {
            k: 1,
            epsilon: 1.0,
            programs: vec![],
        };
        let model = Model::new(layer, Activation::SigmaCount, vec![0, 1], Mlp::new(&[0, 3, 2], 1), 10).unwrap();
        assert_eq!(Model::parse(&model.to_text()).unwrap(), model);
    }

    #[test]
    fn truncated_and_foreign_files_are_rejected() {
        let model = Model::new(toy_layer(), Activation::Sigma, vec![1, 2], Mlp::new(&[2, 3, 2], 0), 1000).unwrap();
        let text = model.to_text();
        let cut: String = text.lines().take(text.lines().count() - 3).collect::<Vec<_>>().join("\n");
        assert!(matches!(Model::parse(&cut), Err(ModelError::Format { .. })));
        assert!(matches!(Model::parse("gdlnn-model v7\n"), Err(ModelError::Version(v)) if v == "v7"));
        assert!(Model::parse("").is_err());
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        assert!(matches!(
            Model::new(toy_layer(), Activation::Sigma, vec![1, 2], Mlp::zeros(&[3, 2]), 1),
            Err(ModelError::Shape { .. })
        ));
    }

    #[test]
    fn config_grid_is_checked() {
        assert!(TrainConfig::default().validate(false).is_ok());
        let off = TrainConfig {
            learning_rate: 0.1,
            ..TrainConfig::default()
        };
        assert!(off.validate(false).is_err());
        assert!(off.validate(true).is_ok());
        assert_eq!(TrainConfig::default().grid().len(), 48);
    }
}
