use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{forward, Activation, Predictor, ToyModel};
use super::nn::batch_gradient;
use super::task::Sample;
use super::train::Trainable;
use crate::adapters::{loftq_init, LoraAdapter};
use crate::error::{MixqError, Result};
use crate::matrix::Matrix;
use crate::quant_config::QuantConfig;
use crate::quantizer::{dequantize, quantize, CodecOptions, QuantizedMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdapterInit {
    Loftq,
    Gaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssembleOptions {
    pub rank: usize,
    pub init: AdapterInit,
    pub loftq_iters: usize,
    pub codec: CodecOptions,
}

impl Default for AssembleOptions {
    fn default() -> Self {
        Self {
            rank: 4,
            init: AdapterInit::Loftq,
            loftq_iters: 1,
            codec: CodecOptions::default(),
        }
    }
}

/// Rank actually used on a `d_out × d_in` layer.
pub fn effective_rank(rank: usize, d_out: usize, d_in: usize) -> usize {
    rank.min(d_out).min(d_in)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedLayer {
    pub base: QuantizedMatrix,
    pub adapter: LoraAdapter,
    pub bias: Vec<f64>,
    base_dense: Matrix,
}

impl AdaptedLayer {
    /// Cached `deq(base)`.
    pub fn base_dense(&self) -> &Matrix {
        &self.base_dense
    }
}

/// Quantized frozen base with one trainable adapter per linear layer.
#[derive(Debug, Clone, PartialEq)]
pub struct AssembledModel {
    layers: Vec<AdaptedLayer>,
    activation: Activation,
    config: QuantConfig,
    /// `deq(W) + A·B` per layer, refreshed whenever adapters change.
    effective: Vec<Matrix>,
    biases: Vec<Vec<f64>>,
    train_biases: bool,
}

impl AssembledModel {
    fn from_layers(layers: Vec<AdaptedLayer>, activation: Activation, config: QuantConfig) -> Self {
        let mut m = Self {
            effective: Vec::new(),
            biases: layers.iter().map(|l| l.bias.clone()).collect(),
            layers,
            activation,
            config,
            train_biases: false,
        };
        m.refresh();
        m
    }

    fn refresh(&mut self) {
        self.effective = self
            .layers
            .iter()
            .map(|l| l.base_dense.add(&l.adapter.delta()).expect("adapter conforms"))
            .collect();
        self.biases = self.layers.iter().map(|l| l.bias.clone()).collect();
    }

    pub fn layers(&self) -> &[AdaptedLayer] {
        &self.layers
    }

    pub fn config(&self) -> &QuantConfig {
        &self.config
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// Parameters updated by adapter training.
    pub fn trainable_parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.adapter.parameter_count() + if self.train_biases { l.bias.len() } else { 0 })
            .sum()
    }

    pub(crate) fn set_train_biases(&mut self, on: bool) {
        self.train_biases = on;
    }

    /// Dense weights the forward pass actually uses.
    pub fn effective_weights(&self) -> &[Matrix] {
        &self.effective
    }

    pub fn adapter_mut(&mut self, layer: usize) -> &mut LoraAdapter {
        &mut self.layers[layer].adapter
    }

    /// Call after mutating adapters through [`AssembledModel::adapter_mut`].
    pub fn sync(&mut self) {
        self.refresh();
    }

    /// Mean loss over a dataset at the current parameters.
    pub fn loss(&self, data: &[Sample]) -> f64 {
        super::nn::mean_loss(self, data)
    }

    /// Mean-loss gradient with respect to each layer's `(A, B)`.
    pub fn adapter_gradients(&self, data: &[Sample]) -> Vec<(Matrix, Matrix)> {
        let refs: Vec<&Sample> = data.iter().collect();
        let (_, g) = batch_gradient(&self.effective, &self.biases, self.activation, &refs);
        self.layers
            .iter()
            .zip(&g.w)
            .map(|(l, gw)| chain_to_factors(&l.adapter, gw))
            .collect()
    }
}

/// `∂L/∂A = G·Bᵀ`, `∂L/∂B = Aᵀ·G` for `W_eff = W + A·B` and `G = ∂L/∂W_eff`.
fn chain_to_factors(adapter: &LoraAdapter, g: &Matrix) -> (Matrix, Matrix) {
    let ga = g.matmul(&adapter.b().transpose()).expect("shapes conform");
    let gb = adapter.a().transpose().matmul(g).expect("shapes conform");
    (ga, gb)
}

impl Predictor for AssembledModel {
    fn predict(&self, x: &[f64]) -> Vec<f64> {
        forward(&self.effective, &self.biases, self.activation, x)
    }
}

impl Trainable for AssembledModel {
    fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.trainable_parameter_count());
        for l in &self.layers {
            p.extend_from_slice(l.adapter.a().as_slice());
            p.extend_from_slice(l.adapter.b().as_slice());
            if self.train_biases {
                p.extend_from_slice(&l.bias);
            }
        }
        p
    }

    fn set_params(&mut self, p: &[f64]) {
        let mut off = 0;
        let train_biases = self.train_biases;
        for l in &mut self.layers {
            let (a, b) = l.adapter.factors_mut();
            for m in [a, b] {
                let s = m.as_mut_slice();
                let n = s.len();
                s.copy_from_slice(&p[off..off + n]);
                off += n;
            }
            if train_biases {
                let n = l.bias.len();
                l.bias.copy_from_slice(&p[off..off + n]);
                off += n;
            }
        }
        self.refresh();
    }

    fn loss_and_grad(&self, batch: &[&Sample]) -> Result<(f64, Vec<f64>)> {
        let (loss, g) = batch_gradient(&self.effective, &self.biases, self.activation, batch);
        g.check_finite()?;
        let mut flat = Vec::with_capacity(self.trainable_parameter_count());
        for ((l, gw), gb) in self.layers.iter().zip(&g.w).zip(&g.b) {
            let (ga, gbm) = chain_to_factors(&l.adapter, gw);
            flat.extend_from_slice(ga.as_slice());
            flat.extend_from_slice(gbm.as_slice());
            if self.train_biases {
                flat.extend_from_slice(gb);
            }
        }
        Ok((loss, flat))
    }
}

/// Quantizes each layer of `base` at its configured bit-width and attaches an adapter.
///
/// LoftQ init quantizes via the alternating routine; Gaussian init quantizes
/// directly and draws `A ~ N(0, 0.02²)`, `B = 0` from `seed`. Biases stay full precision.
pub fn assemble(
    base: &ToyModel,
    q: &QuantConfig,
    opts: &AssembleOptions,
    seed: u64,
) -> Result<AssembledModel> {
    if q.len() != base.layer_count() {
        return Err(MixqError::ConfigLength {
            expected: base.layer_count(),
            got: q.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::with_capacity(q.len());
    for ((w, b), &bits) in base.weights().iter().zip(base.biases()).zip(q.bits()) {
        let codebook = opts.codec.codebook(bits)?;
        let rank = effective_rank(opts.rank, w.rows(), w.cols());
        let (quantized, adapter) = match opts.init {
            AdapterInit::Loftq => {
                let init = loftq_init(w, &codebook, opts.codec.block_size, rank, opts.loftq_iters)?;
                (init.quantized, init.adapter)
            }
            AdapterInit::Gaussian => (
                quantize(w, &codebook, opts.codec.block_size)?,
                LoraAdapter::gaussian(w.rows(), w.cols(), rank, &mut rng)?,
            ),
        };
        let base_dense = dequantize(&quantized)?;
        layers.push(AdaptedLayer {
            base: quantized,
            adapter,
            bias: b.clone(),
            base_dense,
        });
    }
    Ok(AssembledModel::from_layers(layers, base.activation(), q.clone()))
}
