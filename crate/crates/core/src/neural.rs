//! Dense feed-forward networks in double precision: ReLU hidden layers,
//! logit or linear heads, backpropagation, Adam, finite-difference gradient
//! checking and the R² metric.
//!
//! Weights of layer `l` are stored row-major as `fan_in x fan_out`, so
//! `w[i * fan_out + j]` connects input `i` to output `j`.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds;

pub const FORMAT_MAGIC: &str = "rulrl-mlp";
pub const FORMAT_VERSION: u32 = 1;
pub const INIT_SCHEME: &str = "glorot-uniform";

/// Samples per gradient chunk. Chunks are reduced in a fixed pairwise tree,
/// so the summation order never depends on the worker count.
const GRAD_CHUNK: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Head {
    Logits,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Loss {
    CrossEntropy,
    SquaredError,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target {
    Class(usize),
    Value(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    pub target: Target,
}

impl Sample {
    pub fn class(x: Vec<f64>, c: usize) -> Self {
        Self {
            x,
            target: Target::Class(c),
        }
    }

    pub fn value(x: Vec<f64>, y: f64) -> Self {
        Self {
            x,
            target: Target::Value(y),
        }
    }
}

/// Per-feature z-scoring. Features with (near) zero spread keep unit scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit<'a>(rows: impl Iterator<Item = &'a [f64]>, dim: usize) -> Self {
        let mut n = 0usize;
        let mut mean = vec![0.0; dim];
        let mut m2 = vec![0.0; dim];
        // Welford
        for row in rows {
            n += 1;
            for ((m, s), &x) in mean.iter_mut().zip(m2.iter_mut()).zip(row) {
                let d = x - *m;
                *m += d / n as f64;
                *s += d * (x - *m);
            }
        }
        let std = m2
            .iter()
            .map(|&s| {
                let sd = if n > 0 { (s / n as f64).sqrt() } else { 0.0 };
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn apply_in_place(&self, x: &mut [f64]) {
        for (v, (m, s)) in x.iter_mut().zip(self.mean.iter().zip(&self.std)) {
            *v = (*v - m) / s;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layer_sizes: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub head: Head,
    /// Input standardization applied at the start of `forward`.
    pub scaler: Option<Standardizer>,
    pub init_seed: u64,
}

/// Glorot-uniform weights, zero biases.
pub fn mlp_init(layer_sizes: &[usize], head: Head, seed: u64) -> Result<Mlp> {
    if layer_sizes.len() < 2 {
        return Err(Error::Config("a network needs at least an input and an output layer".into()));
    }
    if let Some(i) = layer_sizes.iter().position(|&n| n == 0) {
        return Err(Error::Config(format!("layer {i} has zero units")));
    }
    let mut rng = seeds::stream(seed, "mlp-init", &[]);
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for w in layer_sizes.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        weights.push((0..fan_in * fan_out).map(|_| rng.random_range(-limit..limit)).collect());
        biases.push(vec![0.0; fan_out]);
    }
    Ok(Mlp {
        layer_sizes: layer_sizes.to_vec(),
        weights,
        biases,
        head,
        scaler: None,
        init_seed: seed,
    })
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn log_softmax_at(logits: &[f64], c: usize) -> f64 {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|&z| (z - m).exp()).sum::<f64>().ln();
    logits[c] - lse
}

/// Gradient buffers with the same shapes as the network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    fn zeros_like(m: &Mlp) -> Self {
        Self {
            weights: m.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: m.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    fn add(&mut self, other: &Gradients) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    fn scale(&mut self, s: f64) {
        for v in self.weights.iter_mut().chain(self.biases.iter_mut()) {
            v.iter_mut().for_each(|x| *x *= s);
        }
    }

    /// Flattened in parameter order: per layer, weights then biases.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }
}

impl Mlp {
    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap_or(&0)
    }

    pub fn n_params(&self) -> usize {
        self.weights.iter().map(Vec::len).sum::<usize>() + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    pub fn params_finite(&self) -> bool {
        self.weights
            .iter()
            .chain(&self.biases)
            .all(|v| v.iter().all(|x| x.is_finite()))
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::Dimension {
                context: "network input",
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Network output for one raw (unstandardized) input: logits for a
    /// classifier, values for a regressor.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut acts = Vec::new();
        match &self.scaler {
            Some(s) => self.forward_scaled(&s.apply(x), &mut acts),
            None => self.forward_scaled(x, &mut acts),
        }
        Ok(acts.pop().unwrap_or_default())
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.forward(x)?))
    }

    /// Forward pass on an already standardized input. `acts` receives the
    /// post-activation output of every layer (hidden layers after ReLU).
    fn forward_scaled(&self, x: &[f64], acts: &mut Vec<Vec<f64>>) {
        acts.clear();
        let n_layers = self.weights.len();
        for l in 0..n_layers {
            let input: &[f64] = if l == 0 { x } else { &acts[l - 1] };
            let fan_out = self.layer_sizes[l + 1];
            let w = &self.weights[l];
            let mut out = self.biases[l].clone();
            for (i, &a) in input.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let row = &w[i * fan_out..(i + 1) * fan_out];
                for (o, &wij) in out.iter_mut().zip(row) {
                    *o += a * wij;
                }
            }
            if l + 1 < n_layers {
                for o in &mut out {
                    if *o < 0.0 {
                        *o = 0.0;
                    }
                }
            }
            acts.push(out);
        }
    }

    /// Loss of one output and its gradient with respect to that output.
    fn loss_and_delta(&self, out: &[f64], target: Target, loss: Loss) -> (f64, Vec<f64>) {
        match (loss, target) {
            (Loss::CrossEntropy, Target::Class(c)) => {
                let mut d = softmax(out);
                let l = -log_softmax_at(out, c);
                d[c] -= 1.0;
                (l, d)
            }
            (Loss::SquaredError, Target::Value(y)) => {
                let e = out[0] - y;
                (0.5 * e * e, vec![e])
            }
            _ => unreachable!("targets are validated before use"),
        }
    }

    /// Accumulate `weight * dLoss/dparams` for one standardized input.
    fn backprop_into(
        &self,
        x: &[f64],
        target: Target,
        loss: Loss,
        weight: f64,
        grads: &mut Gradients,
        acts: &mut Vec<Vec<f64>>,
    ) -> f64 {
        self.forward_scaled(x, acts);
        let n_layers = self.weights.len();
        let (l, mut delta) = self.loss_and_delta(&acts[n_layers - 1], target, loss);
        delta.iter_mut().for_each(|d| *d *= weight);
        for layer in (0..n_layers).rev() {
            let input: &[f64] = if layer == 0 { x } else { &acts[layer - 1] };
            let fan_out = self.layer_sizes[layer + 1];
            let gw = &mut grads.weights[layer];
            for (i, &a) in input.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let row = &mut gw[i * fan_out..(i + 1) * fan_out];
                for (g, &d) in row.iter_mut().zip(&delta) {
                    *g += a * d;
                }
            }
            for (g, &d) in grads.biases[layer].iter_mut().zip(&delta) {
                *g += d;
            }
            if layer > 0 {
                let w = &self.weights[layer];
                let next: Vec<f64> = input
                    .iter()
                    .enumerate()
                    .map(|(i, &a)| {
                        if a > 0.0 {
                            let row = &w[i * fan_out..(i + 1) * fan_out];
                            row.iter().zip(&delta).map(|(wij, d)| wij * d).sum()
                        } else {
                            0.0
                        }
                    })
                    .collect();
                delta = next;
            }
        }
        weight * l
    }

    /// Weighted mean loss and gradient over standardized inputs.
    fn batch_gradient(
        &self,
        xs: &[&[f64]],
        targets: &[Target],
        weights: &[f64],
        loss: Loss,
    ) -> (f64, Gradients) {
        let n_chunks = xs.len().div_ceil(GRAD_CHUNK);
        let parts = crate::par::map_range(n_chunks, |c| {
            let lo = c * GRAD_CHUNK;
            let hi = (lo + GRAD_CHUNK).min(xs.len());
            let mut g = Gradients::zeros_like(self);
            let mut acts = Vec::new();
            let mut lsum = 0.0;
            let mut wsum = 0.0;
            for i in lo..hi {
                lsum += self.backprop_into(xs[i], targets[i], loss, weights[i], &mut g, &mut acts);
                wsum += weights[i];
            }
            (lsum, wsum, g)
        });
        let (lsum, wsum, mut g) = tree_reduce(parts);
        if wsum > 0.0 {
            g.scale(1.0 / wsum);
        }
        (if wsum > 0.0 { lsum / wsum } else { 0.0 }, g)
    }

    /// Mean loss over raw inputs (the scaler, if any, is applied).
    pub fn mean_loss(&self, batch: &[Sample], loss: Loss) -> Result<f64> {
        validate_samples(self, batch, loss)?;
        let mut acts = Vec::new();
        let mut total = 0.0;
        for s in batch {
            let x = self.scaled_input(&s.x);
            self.forward_scaled(&x, &mut acts);
            total += self.loss_and_delta(acts.last().unwrap(), s.target, loss).0;
        }
        Ok(total / batch.len() as f64)
    }

    /// Analytic mean-loss gradient over raw inputs.
    pub fn gradient(&self, batch: &[Sample], loss: Loss) -> Result<Gradients> {
        validate_samples(self, batch, loss)?;
        let scaled: Vec<Vec<f64>> = batch.iter().map(|s| self.scaled_input(&s.x)).collect();
        let xs: Vec<&[f64]> = scaled.iter().map(Vec::as_slice).collect();
        let targets: Vec<Target> = batch.iter().map(|s| s.target).collect();
        Ok(self.batch_gradient(&xs, &targets, &vec![1.0; batch.len()], loss).1)
    }

    fn scaled_input(&self, x: &[f64]) -> Vec<f64> {
        match &self.scaler {
            Some(s) => s.apply(x),
            None => x.to_vec(),
        }
    }

    fn param_mut(&mut self, idx: usize) -> &mut f64 {
        let mut i = idx;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            if i < w.len() {
                return &mut w[i];
            }
            i -= w.len();
            if i < b.len() {
                return &mut b[i];
            }
            i -= b.len();
        }
        panic!("parameter index {idx} out of range")
    }
}

fn tree_reduce(mut parts: Vec<(f64, f64, Gradients)>) -> (f64, f64, Gradients) {
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some(mut a) = it.next() {
            if let Some(b) = it.next() {
                a.0 += b.0;
                a.1 += b.1;
                a.2.add(&b.2);
            }
            next.push(a);
        }
        parts = next;
    }
    parts.pop().expect("at least one gradient chunk")
}

fn validate_samples(model: &Mlp, samples: &[Sample], loss: Loss) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::Validation("no training samples".into()));
    }
    let out = model.output_dim();
    for s in samples {
        model.check_input(&s.x)?;
        match (loss, s.target) {
            (Loss::CrossEntropy, Target::Class(c)) if c < out => {}
            (Loss::SquaredError, Target::Value(y)) if out == 1 && y.is_finite() => {}
            (l, t) => {
                return Err(Error::Validation(format!(
                    "target {t:?} does not fit a {l:?} loss on a {out}-output network"
                )))
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Fit a z-score standardizer on the training inputs when the model has
    /// none yet.
    pub standardize: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 64,
            epochs: 20,
            seed: 0,
            standardize: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config("learning_rate must be a finite non-negative number".into()));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1)")));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Adam moment estimates.
struct Adam {
    m: Gradients,
    v: Gradients,
    t: i32,
}

impl Adam {
    fn new(model: &Mlp) -> Self {
        Self {
            m: Gradients::zeros_like(model),
            v: Gradients::zeros_like(model),
            t: 0,
        }
    }

    fn step(&mut self, model: &mut Mlp, g: &Gradients, cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        let params = model.weights.iter_mut().chain(model.biases.iter_mut());
        let ms = self.m.weights.iter_mut().chain(self.m.biases.iter_mut());
        let vs = self.v.weights.iter_mut().chain(self.v.biases.iter_mut());
        let gs = g.weights.iter().chain(&g.biases);
        for (((p, m), v), g) in params.zip(ms).zip(vs).zip(gs) {
            for i in 0..p.len() {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p[i] -= cfg.learning_rate * mh / (vh.sqrt() + cfg.epsilon);
            }
        }
    }
}

/// Mini-batch Adam with a seeded shuffle per epoch. Returns the trained model
/// and the weighted mean loss of every epoch.
pub fn train(model: Mlp, samples: &[Sample], config: &TrainConfig, loss: Loss) -> Result<(Mlp, Vec<f64>)> {
    train_weighted(model, samples, &vec![1.0; samples.len()], config, loss)
}

/// As [`train`], with a non-negative weight per sample. Each batch minimizes
/// `sum(w * loss) / sum(w)`.
pub fn train_weighted(
    mut model: Mlp,
    samples: &[Sample],
    weights: &[f64],
    config: &TrainConfig,
    loss: Loss,
) -> Result<(Mlp, Vec<f64>)> {
    config.validate()?;
    validate_samples(&model, samples, loss)?;
    if weights.len() != samples.len() {
        return Err(Error::Dimension {
            context: "sample weights",
            expected: samples.len(),
            got: weights.len(),
        });
    }
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::Validation("sample weights must be finite and non-negative".into()));
    }
    if config.standardize && model.scaler.is_none() {
        model.scaler = Some(Standardizer::fit(
            samples.iter().map(|s| s.x.as_slice()),
            model.input_dim(),
        ));
    }
    let scaled: Vec<Vec<f64>> = crate::par::map(samples, |s| model.scaled_input(&s.x));
    let targets: Vec<Target> = samples.iter().map(|s| s.target).collect();

    let mut adam = Adam::new(&model);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut rng = seeds::stream(config.seed, "shuffle", &[epoch as u64]);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_weight = 0.0;
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let xs: Vec<&[f64]> = idx.iter().map(|&i| scaled[i].as_slice()).collect();
            let ts: Vec<Target> = idx.iter().map(|&i| targets[i]).collect();
            let ws: Vec<f64> = idx.iter().map(|&i| weights[i]).collect();
            let (l, g) = model.batch_gradient(&xs, &ts, &ws, loss);
            if !l.is_finite() {
                return Err(Error::Training {
                    epoch,
                    batch: b,
                    msg: format!("loss is {l}"),
                });
            }
            adam.step(&mut model, &g, config);
            if !model.params_finite() {
                return Err(Error::Training {
                    epoch,
                    batch: b,
                    msg: "non-finite parameter after update".into(),
                });
            }
            let wsum: f64 = ws.iter().sum();
            epoch_loss += l * wsum;
            epoch_weight += wsum;
        }
        history.push(if epoch_weight > 0.0 { epoch_loss / epoch_weight } else { 0.0 });
    }
    Ok((model, history))
}

/// Central finite differences (step 1e-5) against backpropagation on every
/// parameter. Returns `max |g_bp - g_fd| / max(1e-8, |g_bp| + |g_fd|)`.
pub fn grad_check(model: &Mlp, batch: &[Sample], loss: Loss) -> Result<f64> {
    const STEP: f64 = 1e-5;
    let analytic = model.gradient(batch, loss)?.flat();
    let mut probe = model.clone();
    let mut worst = 0.0f64;
    for (idx, g_bp) in analytic.into_iter().enumerate() {
        let orig = *probe.param_mut(idx);
        *probe.param_mut(idx) = orig + STEP;
        let up = probe.mean_loss(batch, loss)?;
        *probe.param_mut(idx) = orig - STEP;
        let down = probe.mean_loss(batch, loss)?;
        *probe.param_mut(idx) = orig;
        let g_fd = (up - down) / (2.0 * STEP);
        let rel = (g_bp - g_fd).abs() / (g_bp.abs() + g_fd.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// Coefficient of determination `1 - SS_res / SS_tot`.
pub fn r_squared(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    if predictions.len() != targets.len() {
        return Err(Error::Dimension {
            context: "r_squared",
            expected: targets.len(),
            got: predictions.len(),
        });
    }
    if targets.is_empty() {
        return Err(Error::Undefined("R² of an empty series"));
    }
    let mean = targets.iter().sum::<f64>() / targets.len() as f64;
    let ss_tot: f64 = targets.iter().map(|t| (t - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::Undefined("R² is undefined when all targets are identical"));
    }
    let ss_res: f64 = predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| (t - p).powi(2))
        .sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Header of a serialized network: `role` plus free-form key/value metadata.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelHeader {
    pub role: String,
    pub meta: Vec<(String, String)>,
}

impl ModelHeader {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

impl Mlp {
    pub fn to_text(&self, header: &ModelHeader) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{FORMAT_MAGIC} {FORMAT_VERSION}");
        let _ = writeln!(s, "role {}", header.role);
        let _ = writeln!(
            s,
            "head {}",
            match self.head {
                Head::Logits => "logits",
                Head::Linear => "linear",
            }
        );
        let sizes: Vec<String> = self.layer_sizes.iter().map(|n| n.to_string()).collect();
        let _ = writeln!(s, "layers {}", sizes.join(" "));
        let _ = writeln!(s, "activation relu");
        let _ = writeln!(s, "init {INIT_SCHEME}");
        let _ = writeln!(s, "seed {}", self.init_seed);
        for (k, v) in &header.meta {
            let _ = writeln!(s, "meta {k} {v}");
        }
        match &self.scaler {
            None => s.push_str("scaler none\n"),
            Some(sc) => {
                let _ = writeln!(s, "scaler {}", sc.mean.len());
                push_values(&mut s, &sc.mean);
                push_values(&mut s, &sc.std);
            }
        }
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let _ = writeln!(s, "layer {l}");
            for row in w.chunks(self.layer_sizes[l + 1]) {
                push_values(&mut s, row);
            }
            push_values(&mut s, b);
        }
        s
    }

    pub fn from_text(text: &str) -> Result<(Mlp, ModelHeader)> {
        let mut lines = text.lines();
        let mut next = |what: &str| -> Result<&str> {
            lines
                .next()
                .ok_or_else(|| Error::Format(format!("unexpected end of file reading {what}")))
        };
        let magic = next("magic")?;
        if magic != format!("{FORMAT_MAGIC} {FORMAT_VERSION}") {
            return Err(Error::Format(format!("unsupported header {magic:?}")));
        }
        let role = keyed(next("role")?, "role")?.to_string();
        let head = match keyed(next("head")?, "head")? {
            "logits" => Head::Logits,
            "linear" => Head::Linear,
            other => return Err(Error::Format(format!("unknown head {other:?}"))),
        };
        let layer_sizes: Vec<usize> = keyed(next("layers")?, "layers")?
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| Error::Format(format!("bad layer size {t:?}"))))
            .collect::<Result<_>>()?;
        if layer_sizes.len() < 2 {
            return Err(Error::Format("need at least two layer sizes".into()));
        }
        keyed(next("activation")?, "activation")?;
        keyed(next("init")?, "init")?;
        let init_seed = keyed(next("seed")?, "seed")?
            .parse()
            .map_err(|_| Error::Format("bad seed".into()))?;
        let mut meta = Vec::new();
        let mut line = next("scaler")?;
        while let Some(rest) = line.strip_prefix("meta ") {
            let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
            meta.push((k.to_string(), v.to_string()));
            line = next("scaler")?;
        }
        let scaler = match keyed(line, "scaler")? {
            "none" => None,
            n => {
                let n: usize = n.parse().map_err(|_| Error::Format("bad scaler size".into()))?;
                let mean = parse_values(next("scaler mean")?, n)?;
                let std = parse_values(next("scaler std")?, n)?;
                Some(Standardizer { mean, std })
            }
        };
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..layer_sizes.len() - 1 {
            let tag = next("layer tag")?;
            if tag != format!("layer {l}") {
                return Err(Error::Format(format!("expected 'layer {l}', found {tag:?}")));
            }
            let (fan_in, fan_out) = (layer_sizes[l], layer_sizes[l + 1]);
            let mut w = Vec::with_capacity(fan_in * fan_out);
            for _ in 0..fan_in {
                w.extend(parse_values(next("weights")?, fan_out)?);
            }
            weights.push(w);
            biases.push(parse_values(next("biases")?, fan_out)?);
        }
        Ok((
            Mlp {
                layer_sizes,
                weights,
                biases,
                head,
                scaler,
                init_seed,
            },
            ModelHeader { role, meta },
        ))
    }
}

fn keyed<'a>(line: &'a str, key: &str) -> Result<&'a str> {
    line.strip_prefix(key)
        .and_then(|r| r.strip_prefix(' '))
        .ok_or_else(|| Error::Format(format!("expected '{key} ...', found {line:?}")))
}

fn push_values(s: &mut String, vals: &[f64]) {
    let cells: Vec<String> = vals.iter().map(|&v| fmt17(v)).collect();
    s.push_str(&cells.join(" "));
    s.push('\n');
}

fn parse_values(line: &str, n: usize) -> Result<Vec<f64>> {
    let vals: Vec<f64> = line
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| Error::Format(format!("bad number {t:?}"))))
        .collect::<Result<_>>()?;
    if vals.len() != n {
        return Err(Error::Format(format!("expected {n} values, found {}", vals.len())));
    }
    Ok(vals)
}
