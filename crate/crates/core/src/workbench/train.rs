use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::assembled::AssembledModel;
use super::model::{Predictor, ToyModel};
use super::nn::{batch_gradient, metric};
use super::task::{Sample, Split, Task};
use crate::error::{MixqError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHyper {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Also update biases (adapter training only; dense training always does).
    pub train_biases: bool,
    pub seed: u64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            epochs: 50,
            lr: 3e-3,
            batch_size: 32,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            train_biases: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Best validation metric over epochs `0..=epochs` (epoch 0 is before any update).
    pub p: f64,
    pub best_epoch: usize,
    /// Mean minibatch loss per epoch.
    pub loss_curve: Vec<f64>,
    /// Validation metric per epoch, starting at epoch 0.
    pub val_curve: Vec<f64>,
    pub epochs: usize,
    pub seed: u64,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], h: &TrainHyper) {
        self.t += 1;
        let bc1 = 1.0 - h.beta1.powi(self.t);
        let bc2 = 1.0 - h.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = h.beta1 * self.m[i] + (1.0 - h.beta1) * grad[i];
            self.v[i] = h.beta2 * self.v[i] + (1.0 - h.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= h.lr * m_hat / (v_hat.sqrt() + h.eps);
        }
    }
}

/// A model whose trainable parameters can be flattened into one vector.
pub(crate) trait Trainable: Predictor {
    fn params(&self) -> Vec<f64>;
    fn set_params(&mut self, p: &[f64]);
    fn loss_and_grad(&self, batch: &[&Sample]) -> Result<(f64, Vec<f64>)>;
}

pub(crate) struct DenseTrainer<'a>(pub &'a mut ToyModel);

impl Predictor for DenseTrainer<'_> {
    fn predict(&self, x: &[f64]) -> Vec<f64> {
        self.0.predict(x)
    }
}

impl Trainable for DenseTrainer<'_> {
    fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.0.parameter_count());
        for (w, b) in self.0.weights().iter().zip(self.0.biases()) {
            p.extend_from_slice(w.as_slice());
            p.extend_from_slice(b);
        }
        p
    }

    fn set_params(&mut self, p: &[f64]) {
        let mut off = 0;
        for l in 0..self.0.layer_count() {
            let w = self.0.weights_mut()[l].as_mut_slice();
            let n = w.len();
            w.copy_from_slice(&p[off..off + n]);
            off += n;
            let b = &mut self.0.biases_mut()[l];
            let n = b.len();
            b.copy_from_slice(&p[off..off + n]);
            off += n;
        }
    }

    fn loss_and_grad(&self, batch: &[&Sample]) -> Result<(f64, Vec<f64>)> {
        let (loss, g) = batch_gradient(self.0.weights(), self.0.biases(), self.0.activation(), batch);
        g.check_finite()?;
        let mut flat = Vec::with_capacity(self.0.parameter_count());
        for (w, b) in g.w.iter().zip(&g.b) {
            flat.extend_from_slice(w.as_slice());
            flat.extend_from_slice(b);
        }
        Ok((loss, flat))
    }
}

/// Seeded minibatch Adam with best-validation-epoch checkpointing.
pub(crate) fn fit<T: Trainable>(model: &mut T, task: &Task, hyper: &TrainHyper) -> Result<TrainReport> {
    if hyper.epochs == 0 {
        return Err(MixqError::InvalidArgument("epochs must be at least 1".into()));
    }
    if hyper.batch_size == 0 {
        return Err(MixqError::InvalidArgument("batch_size must be at least 1".into()));
    }
    let val = task.split(Split::Val);
    let train = task.split(Split::Train);
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut params = model.params();
    let mut adam = Adam::new(params.len());
    let mut best = metric(&*model, val);
    let mut best_epoch = 0;
    let mut best_params = params.clone();
    let mut val_curve = vec![best];
    let mut loss_curve = Vec::with_capacity(hyper.epochs);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=hyper.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for (step, chunk) in order.chunks(hyper.batch_size).enumerate() {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &train[i]).collect();
            let (loss, grad) = model.loss_and_grad(&batch)?;
            if !loss.is_finite() {
                return Err(MixqError::NonFiniteLoss { epoch, step });
            }
            epoch_loss += loss;
            batches += 1;
            if !params.is_empty() {
                adam.step(&mut params, &grad, hyper);
                model.set_params(&params);
            }
        }
        loss_curve.push(epoch_loss / batches as f64);
        let m = metric(&*model, val);
        val_curve.push(m);
        if m > best {
            best = m;
            best_epoch = epoch;
            best_params.clone_from(&params);
        }
    }
    model.set_params(&best_params);
    Ok(TrainReport {
        p: best,
        best_epoch,
        loss_curve,
        val_curve,
        epochs: hyper.epochs,
        seed: hyper.seed,
    })
}

/// Full-parameter training of a dense model; the model is left at its best validation epoch.
pub fn train_dense(model: &mut ToyModel, task: &Task, hyper: &TrainHyper) -> Result<TrainReport> {
    fit(&mut DenseTrainer(model), task, hyper)
}

/// Trains only the adapters (and biases if enabled); frozen codes are never touched.
pub fn train_adapters(model: &mut AssembledModel, task: &Task, hyper: &TrainHyper) -> Result<TrainReport> {
    model.set_train_biases(hyper.train_biases);
    fit(model, task, hyper)
}

/// Task metric on one split: accuracy, or `1 / (1 + MSE)` for regression.
pub fn evaluate<P: Predictor + ?Sized>(model: &P, task: &Task, split: Split) -> f64 {
    metric(model, task.split(split))
}
