//! Gaussian-process model of P over bit-width configurations, and the
//! expected-improvement rule that picks the next configuration to train.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::costmodel::CostModel;
use crate::error::{MixqError, Result};
use crate::pareto::{aggregate, EvalRecord};
use crate::quant_config::QuantConfig;

pub const JITTER: f64 = 1e-8;
pub const LENGTHSCALE_GRID: [f64; 4] = [0.5, 1.0, 2.0, 4.0];
pub const NOISE_GRID: [f64; 3] = [1e-4, 1e-3, 1e-2];
/// Above this many layers the candidate set is sampled instead of enumerated.
pub const ENUMERATION_LIMIT: usize = 16;
pub const SAMPLED_CANDIDATES: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GpHyper {
    pub lengthscale: f64,
    pub signal_std: f64,
    pub noise_std: f64,
}

impl Default for GpHyper {
    fn default() -> Self {
        Self {
            lengthscale: 2.0,
            signal_std: 1.0,
            noise_std: 1e-3,
        }
    }
}

impl GpHyper {
    pub fn kernel(&self, a: &[f64], b: &[f64]) -> f64 {
        let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        self.signal_std * self.signal_std * (-d2 / (2.0 * self.lengthscale * self.lengthscale)).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitOptions {
    pub hyper: GpHyper,
    /// Pick ℓ and σₙ from the grids by log marginal likelihood (σ_f kept).
    pub refit: bool,
}

/// An immutable fitted posterior.
#[derive(Debug, Clone)]
pub struct GpState {
    configs: Vec<QuantConfig>,
    inputs: Vec<Vec<f64>>,
    targets: Vec<f64>,
    y_mean: f64,
    y_scale: f64,
    hyper: GpHyper,
    jitter: f64,
    chol_l: DMatrix<f64>,
    alpha: DVector<f64>,
    log_marginal: f64,
}

fn encode(q: &QuantConfig) -> Vec<f64> {
    q.encoding().into_iter().map(f64::from).collect()
}

struct Factor {
    l: DMatrix<f64>,
    alpha: DVector<f64>,
    jitter: f64,
    log_marginal: f64,
}

fn factorize(inputs: &[Vec<f64>], y: &DVector<f64>, hyper: &GpHyper) -> Result<Factor> {
    let n = inputs.len();
    let noise = hyper.noise_std * hyper.noise_std;
    let k = DMatrix::from_fn(n, n, |i, j| {
        hyper.kernel(&inputs[i], &inputs[j]) + if i == j { noise } else { 0.0 }
    });
    let mut jitter = 0.0;
    let chol = match k.clone().cholesky() {
        Some(c) => c,
        None => {
            jitter = JITTER;
            let shifted = &k + DMatrix::identity(n, n) * JITTER;
            shifted.cholesky().ok_or_else(|| MixqError::NotPositiveDefinite {
                n,
                max_diag: (0..n).map(|i| k[(i, i)]).fold(f64::MIN, f64::max),
            })?
        }
    };
    let alpha = chol.solve(y);
    let l = chol.unpack();
    let log_det_half: f64 = (0..n).map(|i| l[(i, i)].ln()).sum();
    let log_marginal =
        -0.5 * y.dot(&alpha) - log_det_half - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
    Ok(Factor {
        l,
        alpha,
        jitter,
        log_marginal,
    })
}

/// Fits the posterior on all records; repeated configs are averaged first.
pub fn fit(records: &[EvalRecord], opts: &FitOptions) -> Result<GpState> {
    if records.is_empty() {
        return Err(MixqError::InvalidArgument("cannot fit a GP on zero records".into()));
    }
    let agg = aggregate(records);
    let configs: Vec<QuantConfig> = agg.iter().map(|r| r.config.clone()).collect();
    let layers = configs[0].len();
    if let Some(bad) = configs.iter().find(|q| q.len() != layers) {
        return Err(MixqError::ConfigLength {
            expected: layers,
            got: bad.len(),
        });
    }
    let targets: Vec<f64> = agg.iter().map(|r| r.p).collect();
    if let Some(p) = targets.iter().find(|p| !p.is_finite()) {
        return Err(MixqError::NonFinite(format!("GP target {p}")));
    }
    let n = targets.len() as f64;
    let y_mean = targets.iter().sum::<f64>() / n;
    let var = targets.iter().map(|p| (p - y_mean) * (p - y_mean)).sum::<f64>() / n;
    let y_scale = if var > 0.0 { var.sqrt() } else { 1.0 };
    let y = DVector::from_iterator(targets.len(), targets.iter().map(|p| (p - y_mean) / y_scale));
    let inputs: Vec<Vec<f64>> = configs.iter().map(encode).collect();

    let mut hyper = opts.hyper;
    let mut best = factorize(&inputs, &y, &hyper);
    if opts.refit {
        for &lengthscale in &LENGTHSCALE_GRID {
            for &noise_std in &NOISE_GRID {
                let h = GpHyper {
                    lengthscale,
                    noise_std,
                    ..opts.hyper
                };
                if let Ok(f) = factorize(&inputs, &y, &h) {
                    let better = match &best {
                        Ok(b) => f.log_marginal > b.log_marginal,
                        Err(_) => true,
                    };
                    if better {
                        hyper = h;
                        best = Ok(f);
                    }
                }
            }
        }
    }
    let f = best?;
    Ok(GpState {
        configs,
        inputs,
        targets,
        y_mean,
        y_scale,
        hyper,
        jitter: f.jitter,
        chol_l: f.l,
        alpha: f.alpha,
        log_marginal: f.log_marginal,
    })
}

impl GpState {
    pub fn hyper(&self) -> GpHyper {
        self.hyper
    }

    /// Jitter added to the diagonal (0 unless the first factorization failed).
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn log_marginal(&self) -> f64 {
        self.log_marginal
    }

    pub fn y_mean(&self) -> f64 {
        self.y_mean
    }

    pub fn y_scale(&self) -> f64 {
        self.y_scale
    }

    /// Distinct observed configs with their (averaged) P.
    pub fn observations(&self) -> impl Iterator<Item = (&QuantConfig, f64)> {
        self.configs.iter().zip(self.targets.iter().copied())
    }

    pub fn layers(&self) -> usize {
        self.configs[0].len()
    }

    pub fn is_observed(&self, q: &QuantConfig) -> bool {
        self.configs.contains(q)
    }

    /// Posterior `(mean, stddev)` of P at `q`, on the original P scale.
    pub fn predict(&self, q: &QuantConfig) -> Result<(f64, f64)> {
        if q.len() != self.layers() {
            return Err(MixqError::ConfigLength {
                expected: self.layers(),
                got: q.len(),
            });
        }
        let x = encode(q);
        let ks = DVector::from_iterator(self.inputs.len(), self.inputs.iter().map(|xi| self.hyper.kernel(xi, &x)));
        let mean = ks.dot(&self.alpha);
        let v = self
            .chol_l
            .solve_lower_triangular(&ks)
            .expect("cholesky factor has a positive diagonal");
        let var = (self.hyper.kernel(&x, &x) - v.dot(&v)).max(0.0);
        Ok((self.y_mean + self.y_scale * mean, self.y_scale * var.sqrt()))
    }

    /// Mean absolute error of posterior means on held-out records.
    pub fn mean_abs_error(&self, held_out: &[EvalRecord]) -> Result<f64> {
        if held_out.is_empty() {
            return Ok(0.0);
        }
        let mut sum = 0.0;
        for r in held_out {
            sum += (self.predict(&r.config)?.0 - r.p).abs();
        }
        Ok(sum / held_out.len() as f64)
    }
}

/// Expected improvement (minimization) of a Gaussian `N(mean, std²)` over `best`.
pub fn expected_improvement(best: f64, mean: f64, std: f64) -> f64 {
    let gain = best - mean;
    if std <= 0.0 {
        return gain.max(0.0);
    }
    let z = gain / std;
    let n = Normal::standard();
    (gain * n.cdf(z) + std * n.pdf(z)).max(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suggestion {
    pub config: QuantConfig,
    pub ei: f64,
    /// Posterior mean of J = M_norm − λ·P̂.
    pub objective_mean: f64,
    pub p_mean: f64,
    pub p_std: f64,
    /// Best observed J the improvement is measured against.
    pub incumbent: f64,
}

/// Scores unevaluated candidates by EI on J = M_norm − λ·P̂ and returns the best.
/// Ties prefer the lower predicted J, then the lexicographically smaller config.
pub fn suggest(
    state: &GpState,
    candidates: &[QuantConfig],
    lambda: f64,
    cost: &CostModel,
) -> Result<Suggestion> {
    let mut incumbent = f64::INFINITY;
    for (q, p) in state.observations() {
        incumbent = incumbent.min(cost.normalized(q)? - lambda * p);
    }
    let mut best: Option<Suggestion> = None;
    for q in candidates {
        if state.is_observed(q) {
            continue;
        }
        let (p_mean, p_std) = state.predict(q)?;
        let objective_mean = cost.normalized(q)? - lambda * p_mean;
        let ei = expected_improvement(incumbent, objective_mean, lambda.abs() * p_std);
        let s = Suggestion {
            config: q.clone(),
            ei,
            objective_mean,
            p_mean,
            p_std,
            incumbent,
        };
        let replace = match &best {
            None => true,
            Some(b) => s
                .ei
                .total_cmp(&b.ei)
                .reverse()
                .then(s.objective_mean.total_cmp(&b.objective_mean))
                .then_with(|| s.config.cmp(&b.config))
                .is_lt(),
        };
        if replace {
            best = Some(s);
        }
    }
    best.ok_or(MixqError::SearchSpaceExhausted)
}

/// Full enumeration for small L; otherwise seeded uniform samples plus every
/// one-bit flip of `anchors` (typically the current frontier). Sorted, distinct.
pub fn candidate_set(layers: usize, anchors: &[QuantConfig], seed: u64) -> Vec<QuantConfig> {
    if layers <= ENUMERATION_LIMIT {
        return QuantConfig::enumerate(layers);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = BTreeSet::new();
    let mut enc = vec![0u8; layers];
    for _ in 0..SAMPLED_CANDIDATES {
        for e in enc.iter_mut() {
            *e = rng.random_range(0..2u8);
        }
        set.insert(QuantConfig::from_encoding(&enc));
    }
    for a in anchors {
        for l in 0..a.len() {
            set.insert(a.with_flipped(l));
        }
    }
    set.into_iter().collect()
}
