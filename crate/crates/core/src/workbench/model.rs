use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{MixqError, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z`.
    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }
}

/// Anything that maps an input vector to an output vector.
pub trait Predictor {
    fn predict(&self, x: &[f64]) -> Vec<f64>;
}

/// Fully connected network: `widths[0]` inputs, `widths.last()` outputs,
/// activation after every layer except the last.
///
/// `weights[l]` is `widths[l+1] × widths[l]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    weights: Vec<Matrix>,
    biases: Vec<Vec<f64>>,
    activation: Activation,
}

impl ToyModel {
    pub fn new(weights: Vec<Matrix>, biases: Vec<Vec<f64>>, activation: Activation) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(MixqError::InvalidArgument(format!(
                "{} weight matrices and {} bias vectors",
                weights.len(),
                biases.len()
            )));
        }
        for (l, (w, b)) in weights.iter().zip(&biases).enumerate() {
            if w.rows() == 0 || w.cols() == 0 || b.len() != w.rows() {
                return Err(MixqError::ShapeMismatch {
                    op: "ToyModel::new",
                    detail: format!("layer {l}: weight {}x{}, bias {}", w.rows(), w.cols(), b.len()),
                });
            }
            if l > 0 && weights[l - 1].rows() != w.cols() {
                return Err(MixqError::ShapeMismatch {
                    op: "ToyModel::new",
                    detail: format!("layer {l} expects {} inputs, previous emits {}", w.cols(), weights[l - 1].rows()),
                });
            }
            if !w.is_finite() || b.iter().any(|v| !v.is_finite()) {
                return Err(MixqError::NonFinite(format!("layer {l} parameters")));
            }
        }
        Ok(Self {
            weights,
            biases,
            activation,
        })
    }

    /// He-scaled normal weights (Xavier for tanh), zero biases.
    pub fn random<R: Rng + ?Sized>(widths: &[usize], activation: Activation, rng: &mut R) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(MixqError::InvalidArgument(format!("invalid widths {widths:?}")));
        }
        let gain = match activation {
            Activation::Relu => 2.0,
            Activation::Tanh => 1.0,
        };
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in widths.windows(2) {
            let (d_in, d_out) = (pair[0], pair[1]);
            let normal = Normal::new(0.0, (gain / d_in as f64).sqrt()).expect("positive std");
            weights.push(Matrix::from_fn(d_out, d_in, |_, _| normal.sample(rng)));
            biases.push(vec![0.0; d_out]);
        }
        Self::new(weights, biases, activation)
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.weights[0].cols()];
        w.extend(self.weights.iter().map(Matrix::rows));
        w
    }

    /// Number of linear layers (each one carries an adapter once assembled).
    pub fn layer_count(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }

    pub fn weights_mut(&mut self) -> &mut [Matrix] {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.biases
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.last().expect("nonempty").rows()
    }

    /// Weights plus biases.
    pub fn parameter_count(&self) -> usize {
        self.weights.iter().map(|w| w.len() + w.rows()).sum()
    }
}

impl Predictor for ToyModel {
    fn predict(&self, x: &[f64]) -> Vec<f64> {
        forward(&self.weights, &self.biases, self.activation, x)
    }
}

/// Plain forward pass over explicit layer parameters.
pub(crate) fn forward(weights: &[Matrix], biases: &[Vec<f64>], act: Activation, x: &[f64]) -> Vec<f64> {
    let last = weights.len() - 1;
    let mut a = x.to_vec();
    for (l, (w, b)) in weights.iter().zip(biases).enumerate() {
        let mut z = w.matvec(&a);
        for (zi, bi) in z.iter_mut().zip(b) {
            *zi += bi;
        }
        if l < last {
            z.iter_mut().for_each(|v| *v = act.apply(*v));
        }
        a = z;
    }
    a
}
