//! Downstream training of the head on frozen features.
//!
//! Class probabilities are a softmax over the first `C` measured
//! expectations. The loss gradient is assembled classically from the
//! parameter-shift Jacobian, so only expectations ever come from the circuit.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::encoding::{encode_tpe, NormalizerSpec};
use crate::error::{Error, Result};
use crate::features::{FcHead, FeatureBlock};
use crate::rng::{derive_seed, stream};
use crate::vqc::{AnsatzSpec, EvalMode, Evaluator, ParamVector};

pub const PROB_FLOOR: f64 = 1e-12;

const TAG_SHUFFLE: u64 = 1;
const TAG_GRAD: u64 = 2;
const TAG_EVAL: u64 = 3;
const TAG_INIT_GRAD: u64 = 4;

/// Softmax over the first `c` entries of `z`, max-subtracted.
pub fn softmax_probs(z: &[f64], c: usize) -> Result<Vec<f64>> {
    if c == 0 || c > z.len() {
        return Err(Error::Shape(format!("softmax over {c} classes needs 1..={} inputs", z.len())));
    }
    let m = z[..c].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z[..c].iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    Ok(e.into_iter().map(|v| v / s).collect())
}

/// `−log max(p_label, 1e-12)`. A NaN probability stays NaN so divergence
/// is not masked by the floor.
pub fn cross_entropy(probs: &[f64], label: usize) -> Result<f64> {
    let p = *probs
        .get(label)
        .ok_or_else(|| Error::Argument(format!("label {label} out of range for {} classes", probs.len())))?;
    if p.is_nan() {
        return Ok(f64::NAN);
    }
    Ok(-p.max(PROB_FLOOR).ln())
}

/// `η = R / (T·√(L² + β²R²))`.
pub fn theorem3_lr(r: f64, l: f64, beta: f64, t: usize) -> Result<f64> {
    for (name, v) in [("R", r), ("L", l), ("beta", beta)] {
        if v <= 0.0 || !v.is_finite() {
            return Err(Error::Argument(format!("{name} must be positive and finite, got {v}")));
        }
    }
    if t == 0 {
        return Err(Error::Argument("T must be positive".into()));
    }
    Ok(r / (t as f64 * (l * l + beta * beta * r * r).sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum LearningRate {
    Fixed { value: f64 },
    /// The schedule's `T` is the total number of optimizer steps.
    Theorem3 { r: f64, l: f64, beta: f64 },
}

impl Default for LearningRate {
    fn default() -> Self {
        Self::Fixed { value: 0.001 }
    }
}

impl LearningRate {
    pub fn resolve(&self, total_steps: usize) -> Result<f64> {
        match *self {
            Self::Fixed { value } => {
                if value < 0.0 || !value.is_finite() {
                    return Err(Error::Config(format!("learning rate {value} must be finite and >= 0")));
                }
                Ok(value)
            }
            Self::Theorem3 { r, l, beta } => theorem3_lr(r, l, beta, total_steps),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Optimizer {
    Sgd { lr: f64 },
    Adam(Adam),
}

impl Optimizer {
    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        match self {
            Self::Sgd { lr } => params.iter_mut().zip(grad).for_each(|(p, g)| *p -= *lr * g),
            Self::Adam(a) => a.step(params, grad),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub optimizer: OptimizerKind,
    #[serde(default)]
    pub lr: LearningRate,
    #[serde(default)]
    pub eval_mode: EvalMode,
    #[serde(default)]
    pub seed: u64,
    pub num_classes: usize,
    /// Fill `wallclock_s`; off by default so outputs stay byte-reproducible.
    #[serde(default)]
    pub record_wallclock: bool,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::Config(format!("num_classes must be at least 2, got {}", self.num_classes)));
        }
        self.eval_mode.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_loss: f64,
    pub test_acc: f64,
    pub grad_norm: f64,
    pub wallclock_s: f64,
}

impl MetricsRow {
    pub fn check(&self) -> Result<()> {
        let ok = self.train_loss >= 0.0
            && self.test_loss >= 0.0
            && (0.0..=1.0).contains(&self.train_acc)
            && (0.0..=1.0).contains(&self.test_acc)
            && self.grad_norm >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvariantViolation(format!("metrics row out of range: {self:?}")))
        }
    }
}

/// The trainable part of an assembly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Head {
    Vqc { ansatz: AnsatzSpec, theta: ParamVector },
    Fc { fc: FcHead },
}

impl Head {
    pub fn num_params(&self) -> usize {
        match self {
            Self::Vqc { ansatz, .. } => ansatz.num_params(),
            Self::Fc { fc } => fc.num_params(),
        }
    }

    pub fn params(&self) -> Vec<f64> {
        match self {
            Self::Vqc { theta, .. } => theta.theta.clone(),
            Self::Fc { fc } => fc.params(),
        }
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        match self {
            Self::Vqc { theta, .. } => {
                if flat.len() != theta.len() {
                    return Err(Error::Shape(format!("VQC has {} parameters, got {}", theta.len(), flat.len())));
                }
                theta.theta.copy_from_slice(flat);
                Ok(())
            }
            Self::Fc { fc } => fc.set_params(flat),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Self::Vqc { ansatz, .. } => ansatz.num_qubits,
            Self::Fc { fc } => fc.input_dim(),
        }
    }

    fn check_classes(&self, c: usize) -> Result<()> {
        let available = match self {
            Self::Vqc { ansatz, .. } => ansatz.measure_qubits,
            Self::Fc { fc } => fc.num_classes(),
        };
        if c > available {
            return Err(Error::Config(format!("{c} classes but the head only provides {available} outputs")));
        }
        Ok(())
    }
}

/// Frozen block, normalizer and trainable head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub block: FeatureBlock,
    pub normalizer: NormalizerSpec,
    pub head: Head,
}

impl Model {
    pub fn validate(&self) -> Result<()> {
        let u = self.block.output_dim();
        if self.normalizer.dim() != u {
            return Err(Error::Config(format!(
                "normalizer has width {}, feature block emits {u}",
                self.normalizer.dim()
            )));
        }
        if self.head.input_dim() != u {
            return Err(Error::Config(format!(
                "head expects {} features, feature block emits {u}",
                self.head.input_dim()
            )));
        }
        if let Head::Vqc { ansatz, theta } = &self.head {
            ansatz.validate()?;
            theta.check(ansatz)?;
        }
        Ok(())
    }

    /// Squashed features φ for every sample.
    pub fn phi(&self, data: &Dataset) -> Result<Vec<Vec<f64>>> {
        self.block
            .forward_dataset(data)?
            .iter()
            .map(|z| self.normalizer.phi(z))
            .collect()
    }
}

/// Raw head outputs (expectations or logits) for one sample.
pub fn head_outputs(head: &Head, evaluator: &Evaluator, phi: &[f64], seed: u64) -> Result<Vec<f64>> {
    match head {
        Head::Vqc { ansatz, theta } => evaluator.forward(ansatz, theta, &encode_tpe(phi)?, seed),
        Head::Fc { fc } => fc.forward(phi),
    }
}

/// Per-sample loss and its gradient with respect to the head parameters.
pub fn sample_loss_grad(
    head: &Head,
    evaluator: &Evaluator,
    phi: &[f64],
    label: usize,
    classes: usize,
    seed: u64,
) -> Result<(f64, Vec<f64>)> {
    match head {
        Head::Vqc { ansatz, theta } => {
            let input = encode_tpe(phi)?;
            let z = evaluator.forward(ansatz, theta, &input, derive_seed(seed, &[0]))?;
            let probs = softmax_probs(&z, classes)?;
            let loss = cross_entropy(&probs, label)?;
            let jac = evaluator.jacobian(ansatz, theta, &input, derive_seed(seed, &[1]))?;
            let mut grad = vec![0.0; theta.len()];
            for (c, p) in probs.iter().enumerate() {
                let delta = p - f64::from(u8::from(c == label));
                grad.iter_mut().zip(&jac[c]).for_each(|(g, j)| *g += delta * j);
            }
            Ok((loss, grad))
        }
        Head::Fc { fc } => {
            let probs = softmax_probs(&fc.forward(phi)?, classes)?;
            Ok((cross_entropy(&probs, label)?, fc.grad(phi, label)?.flatten()))
        }
    }
}

/// Mean loss gradient over `indices`, reduced in index order.
pub fn batch_gradient(
    head: &Head,
    evaluator: &Evaluator,
    phi: &[Vec<f64>],
    labels: &[usize],
    indices: &[usize],
    classes: usize,
    seed_of: impl Fn(usize) -> u64 + Sync,
) -> Result<(f64, Vec<f64>)> {
    let per: Vec<(f64, Vec<f64>)> = indices
        .par_iter()
        .map(|&i| sample_loss_grad(head, evaluator, &phi[i], labels[i], classes, seed_of(i)))
        .collect::<Result<_>>()?;
    let mut grad = vec![0.0; head.num_params()];
    let mut loss = 0.0;
    for (l, g) in &per {
        loss += l;
        grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
    }
    let n = indices.len() as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    Ok((loss / n, grad))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
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

/// Mean loss and accuracy on precomputed φ features. Sample `i` is
/// measured with stream `derive_seed(seed, [i])`.
pub fn evaluate_phi(
    head: &Head,
    evaluator: &Evaluator,
    phi: &[Vec<f64>],
    labels: &[usize],
    classes: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if phi.is_empty() {
        return Err(Error::Data("cannot evaluate on an empty dataset".into()));
    }
    head.check_classes(classes)?;
    let per: Vec<(f64, bool)> = (0..phi.len())
        .into_par_iter()
        .map(|i| {
            let out = head_outputs(head, evaluator, &phi[i], derive_seed(seed, &[i as u64]))?;
            let probs = softmax_probs(&out, classes)?;
            Ok((cross_entropy(&probs, labels[i])?, argmax(&probs) == labels[i]))
        })
        .collect::<Result<_>>()?;
    let n = per.len() as f64;
    let loss = per.iter().map(|p| p.0).sum::<f64>() / n;
    let acc = per.iter().filter(|p| p.1).count() as f64 / n;
    Ok((loss, acc))
}

/// Loss and accuracy of `model` on `data`; no parameters change.
pub fn evaluate(model: &Model, data: &Dataset, mode: &EvalMode, classes: usize, seed: u64) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Err(Error::Data("cannot evaluate on an empty dataset".into()));
    }
    model.validate()?;
    let phi = model.phi(data)?;
    evaluate_phi(&model.head, &Evaluator::new(mode.clone()), &phi, &data.labels, classes, seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: Model,
    pub metrics: Vec<MetricsRow>,
    pub block_checksum: String,
    pub total_steps: usize,
    pub lr: f64,
}

/// Trains the head of `model`. The feature block and normalizer are read
/// only; their checksums are compared before and after.
pub fn train(model: &Model, train_set: &Dataset, test_set: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    model.validate()?;
    model.head.check_classes(cfg.num_classes)?;
    for (name, d) in [("training", train_set), ("test", test_set)] {
        if d.is_empty() {
            return Err(Error::Data(format!("{name} set is empty")));
        }
        if let Some(&l) = d.labels.iter().find(|&&l| l >= cfg.num_classes) {
            return Err(Error::Argument(format!("{name} label {l} out of range for {} classes", cfg.num_classes)));
        }
    }
    let block_checksum = model.block.checksum();
    let normalizer_before = model.normalizer.clone();
    let started = Instant::now();

    let phi_train = model.phi(train_set)?;
    let phi_test = model.phi(test_set)?;
    let labels = &train_set.labels;
    let evaluator = Evaluator::new(cfg.eval_mode.clone());
    let classes = cfg.num_classes;
    let n = train_set.len();
    let batches_per_epoch = n.div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * batches_per_epoch;
    let lr = cfg.lr.resolve(total_steps)?;
    let mut optimizer = match cfg.optimizer {
        OptimizerKind::Sgd => Optimizer::Sgd { lr },
        OptimizerKind::Adam => Optimizer::Adam(Adam::new(model.head.num_params(), lr)),
    };

    let mut head = model.head.clone();
    let mut params = head.params();
    let mut metrics = Vec::with_capacity(cfg.epochs + 1);
    let eval_seed = |split: u64| derive_seed(cfg.seed, &[TAG_EVAL, split]);
    let wall = |row_time: f64| if cfg.record_wallclock { row_time } else { 0.0 };

    let all: Vec<usize> = (0..n).collect();
    let (_, g0) = batch_gradient(&head, &evaluator, &phi_train, labels, &all, classes, |i| {
        derive_seed(cfg.seed, &[TAG_INIT_GRAD, i as u64])
    })?;
    let (train_loss, train_acc) = evaluate_phi(&head, &evaluator, &phi_train, labels, classes, eval_seed(0))?;
    let (test_loss, test_acc) = evaluate_phi(&head, &evaluator, &phi_test, &test_set.labels, classes, eval_seed(1))?;
    metrics.push(MetricsRow {
        epoch: 0,
        train_loss,
        train_acc,
        test_loss,
        test_acc,
        grad_norm: norm(&g0),
        wallclock_s: wall(started.elapsed().as_secs_f64()),
    });

    let mut order = all;
    for epoch in 1..=cfg.epochs {
        let mut rng = stream(cfg.seed, &[TAG_SHUFFLE, epoch as u64]);
        for i in (1..n).rev() {
            let j = rand::Rng::random_range(&mut rng, 0..=i);
            order.swap(i, j);
        }
        let mut norm_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let (loss, grad) = batch_gradient(&head, &evaluator, &phi_train, labels, batch, classes, |i| {
                derive_seed(cfg.seed, &[TAG_GRAD, epoch as u64, i as u64])
            })?;
            let g = norm(&grad);
            if !loss.is_finite() || !g.is_finite() {
                return Err(Error::Divergence { epoch, grad_norm: g });
            }
            norm_sum += g;
            optimizer.step(&mut params, &grad);
            head.set_params(&params)?;
        }
        let grad_norm = norm_sum / batches_per_epoch as f64;
        let (train_loss, train_acc) = evaluate_phi(&head, &evaluator, &phi_train, labels, classes, eval_seed(0))?;
        let (test_loss, test_acc) = evaluate_phi(&head, &evaluator, &phi_test, &test_set.labels, classes, eval_seed(1))?;
        if !train_loss.is_finite() || !test_loss.is_finite() {
            return Err(Error::Divergence { epoch, grad_norm });
        }
        let row = MetricsRow {
            epoch,
            train_loss,
            train_acc,
            test_loss,
            test_acc,
            grad_norm,
            wallclock_s: wall(started.elapsed().as_secs_f64()),
        };
        row.check()?;
        metrics.push(row);
    }

    if model.block.checksum() != block_checksum || model.normalizer != normalizer_before {
        return Err(Error::InvariantViolation("frozen feature block changed during training".into()));
    }
    let model = Model { block: model.block.clone(), normalizer: model.normalizer.clone(), head };
    Ok(TrainOutcome { model, metrics, block_checksum, total_steps, lr })
}
