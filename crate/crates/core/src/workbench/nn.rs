//! Losses, metrics and backpropagation shared by the dense and adapter trainers.

use super::model::{Activation, Predictor};
use super::task::{Sample, Target};
use crate::error::{MixqError, Result};
use crate::matrix::Matrix;

/// Per-layer gradients with respect to effective weights and biases.
#[derive(Debug, Clone)]
pub(crate) struct Grads {
    pub w: Vec<Matrix>,
    pub b: Vec<Vec<f64>>,
}

impl Grads {
    pub fn zeros_like(weights: &[Matrix]) -> Self {
        Self {
            w: weights.iter().map(|w| Matrix::zeros(w.rows(), w.cols())).collect(),
            b: weights.iter().map(|w| vec![0.0; w.rows()]).collect(),
        }
    }

    pub fn check_finite(&self) -> Result<()> {
        for (l, (w, b)) in self.w.iter().zip(&self.b).enumerate() {
            if !w.is_finite() || b.iter().any(|v| !v.is_finite()) {
                return Err(MixqError::NonFiniteGradient { layer: l });
            }
        }
        Ok(())
    }
}

/// Softmax cross-entropy for class targets, mean squared error for value targets.
pub(crate) fn sample_loss(out: &[f64], target: &Target) -> f64 {
    match target {
        Target::Class(c) => {
            let m = out.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + out.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            lse - out[*c]
        }
        Target::Values(t) => {
            out.iter().zip(t).map(|(y, t)| (y - t) * (y - t)).sum::<f64>() / out.len() as f64
        }
    }
}

fn loss_grad(out: &[f64], target: &Target) -> Vec<f64> {
    match target {
        Target::Class(c) => {
            let m = out.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = out.iter().map(|v| (v - m).exp()).collect();
            let sum: f64 = exps.iter().sum();
            let mut g: Vec<f64> = exps.iter().map(|e| e / sum).collect();
            g[*c] -= 1.0;
            g
        }
        Target::Values(t) => {
            let n = out.len() as f64;
            out.iter().zip(t).map(|(y, t)| 2.0 * (y - t) / n).collect()
        }
    }
}

/// Forward + backward for one sample; adds `scale · ∂loss/∂θ` into `grads` and returns the loss.
pub(crate) fn accumulate_sample(
    weights: &[Matrix],
    biases: &[Vec<f64>],
    act: Activation,
    sample: &Sample,
    scale: f64,
    grads: &mut Grads,
) -> f64 {
    let n_layers = weights.len();
    let mut inputs: Vec<Vec<f64>> = Vec::with_capacity(n_layers);
    let mut pre: Vec<Vec<f64>> = Vec::with_capacity(n_layers);
    let mut a = sample.x.clone();
    for (l, (w, b)) in weights.iter().zip(biases).enumerate() {
        let mut z = w.matvec(&a);
        for (zi, bi) in z.iter_mut().zip(b) {
            *zi += bi;
        }
        inputs.push(a);
        a = if l + 1 < n_layers {
            z.iter().map(|&v| act.apply(v)).collect()
        } else {
            z.clone()
        };
        pre.push(z);
    }
    let loss = sample_loss(&a, &sample.target);
    let mut delta = loss_grad(&a, &sample.target);
    for l in (0..n_layers).rev() {
        let g = grads.w[l].as_mut_slice();
        let cols = weights[l].cols();
        for (i, &d) in delta.iter().enumerate() {
            let sd = scale * d;
            grads.b[l][i] += sd;
            for (gij, &x) in g[i * cols..(i + 1) * cols].iter_mut().zip(&inputs[l]) {
                *gij += sd * x;
            }
        }
        if l > 0 {
            let mut back = weights[l].matvec_t(&delta);
            for (v, &z) in back.iter_mut().zip(&pre[l - 1]) {
                *v *= act.derivative(z);
            }
            delta = back;
        }
    }
    loss
}

/// Mean loss and its gradient over a batch.
pub(crate) fn batch_gradient(
    weights: &[Matrix],
    biases: &[Vec<f64>],
    act: Activation,
    batch: &[&Sample],
) -> (f64, Grads) {
    let mut grads = Grads::zeros_like(weights);
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for s in batch {
        loss += accumulate_sample(weights, biases, act, s, scale, &mut grads);
    }
    (loss * scale, grads)
}

/// Mean loss of a predictor over a dataset.
pub fn mean_loss<P: Predictor + ?Sized>(model: &P, data: &[Sample]) -> f64 {
    data.iter()
        .map(|s| sample_loss(&model.predict(&s.x), &s.target))
        .sum::<f64>()
        / data.len() as f64
}

/// Index of the largest output; ties resolve to the lower index.
pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Accuracy for class targets, `1 / (1 + MSE)` for value targets. Always in [0, 1].
pub fn metric<P: Predictor + ?Sized>(model: &P, data: &[Sample]) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    match data[0].target {
        Target::Class(_) => {
            let correct = data
                .iter()
                .filter(|s| match s.target {
                    Target::Class(c) => argmax(&model.predict(&s.x)) == c,
                    Target::Values(_) => false,
                })
                .count();
            correct as f64 / data.len() as f64
        }
        Target::Values(_) => {
            let mut se = 0.0;
            let mut count = 0usize;
            for s in data {
                if let Target::Values(t) = &s.target {
                    let y = model.predict(&s.x);
                    se += y.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
                    count += t.len();
                }
            }
            let mse = se / count.max(1) as f64;
            if mse.is_finite() {
                1.0 / (1.0 + mse)
            } else {
                0.0
            }
        }
    }
}
