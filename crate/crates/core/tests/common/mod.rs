//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]
#![allow(clippy::needless_range_loop)]

use mixq_core::pareto::EvalRecord;
use mixq_core::surrogate::GpHyper;
use mixq_core::workbench::{Activation, ToyModel};
use mixq_core::{Matrix, QuantConfig};

/// One-sided Jacobi SVD. Returns singular values (descending) with the matching
/// left and right singular vectors as columns `u[k]`, `v[k]`.
pub fn jacobi_svd(m: &Matrix) -> (Vec<f64>, Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let transposed = m.rows() < m.cols();
    let a = if transposed { m.transpose() } else { m.clone() };
    let (rows, cols) = a.shape();
    let mut u: Vec<Vec<f64>> = (0..cols).map(|j| (0..rows).map(|i| a.get(i, j)).collect()).collect();
    let mut v: Vec<Vec<f64>> = (0..cols)
        .map(|j| (0..cols).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    for _sweep in 0..100 {
        let mut rotated = false;
        for p in 0..cols {
            for q in p + 1..cols {
                let alpha: f64 = u[p].iter().map(|x| x * x).sum();
                let beta: f64 = u[q].iter().map(|x| x * x).sum();
                let gamma: f64 = u[p].iter().zip(&u[q]).map(|(x, y)| x * y).sum();
                if gamma.abs() <= 1e-15 * (alpha * beta).sqrt() || gamma == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for k in 0..rows {
                    let (x, y) = (u[p][k], u[q][k]);
                    u[p][k] = c * x - s * y;
                    u[q][k] = s * x + c * y;
                }
                for k in 0..cols {
                    let (x, y) = (v[p][k], v[q][k]);
                    v[p][k] = c * x - s * y;
                    v[q][k] = s * x + c * y;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut triples: Vec<(f64, Vec<f64>, Vec<f64>)> = u
        .into_iter()
        .zip(v)
        .map(|(col, vcol)| {
            let s = col.iter().map(|x| x * x).sum::<f64>().sqrt();
            let ucol = if s > 0.0 { col.iter().map(|x| x / s).collect() } else { col };
            (s, ucol, vcol)
        })
        .collect();
    triples.sort_by(|a, b| b.0.total_cmp(&a.0));
    let sigma = triples.iter().map(|t| t.0).collect();
    let (us, vs): (Vec<_>, Vec<_>) = triples.into_iter().map(|t| (t.1, t.2)).unzip();
    if transposed {
        (sigma, vs, us)
    } else {
        (sigma, us, vs)
    }
}

/// Best rank-`r` approximation assembled from the Jacobi factors.
pub fn oracle_rank_r(m: &Matrix, r: usize) -> Matrix {
    let (s, u, v) = jacobi_svd(m);
    Matrix::from_fn(m.rows(), m.cols(), |i, j| (0..r).map(|k| s[k] * u[k][i] * v[k][j]).sum())
}

/// Gaussian elimination with partial pivoting.
pub fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| a[i][k] * x[k]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    x
}

fn rbf(h: &GpHyper, a: &QuantConfig, b: &QuantConfig) -> f64 {
    let d2 = a.bits().iter().zip(b.bits()).filter(|(x, y)| x != y).count() as f64;
    h.signal_std.powi(2) * (-d2 / (2.0 * h.lengthscale.powi(2))).exp()
}

/// GP posterior `(mean, std)` of P by explicit solves, for distinct observed configs.
pub fn gp_oracle(obs: &[(QuantConfig, f64)], h: &GpHyper, jitter: f64, x: &QuantConfig) -> (f64, f64) {
    let n = obs.len();
    let mean = obs.iter().map(|o| o.1).sum::<f64>() / n as f64;
    let var = obs.iter().map(|o| (o.1 - mean).powi(2)).sum::<f64>() / n as f64;
    let scale = if var > 0.0 { var.sqrt() } else { 1.0 };
    let k: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| rbf(h, &obs[i].0, &obs[j].0) + if i == j { h.noise_std.powi(2) + jitter } else { 0.0 })
                .collect()
        })
        .collect();
    let y: Vec<f64> = obs.iter().map(|o| (o.1 - mean) / scale).collect();
    let ks: Vec<f64> = obs.iter().map(|o| rbf(h, &o.0, x)).collect();
    let alpha = dense_solve(k.clone(), y);
    let w = dense_solve(k, ks.clone());
    let mu: f64 = ks.iter().zip(&alpha).map(|(a, b)| a * b).sum();
    let v = rbf(h, x, x) - ks.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
    (mean + scale * mu, scale * v.max(0.0).sqrt())
}

/// Indices of records no other record dominates (all-pairs).
pub fn brute_frontier(records: &[EvalRecord]) -> Vec<usize> {
    (0..records.len())
        .filter(|&i| {
            !records.iter().any(|o| {
                let r = &records[i];
                o.m <= r.m && o.p >= r.p && (o.m < r.m || o.p > r.p)
            })
        })
        .collect()
}

/// Plain nested-loop forward pass.
pub fn naive_forward(model: &ToyModel, x: &[f64]) -> Vec<f64> {
    let mut h = x.to_vec();
    let last = model.layer_count() - 1;
    for (l, (w, b)) in model.weights().iter().zip(model.biases()).enumerate() {
        let mut out = vec![0.0; w.rows()];
        for (i, o) in out.iter_mut().enumerate() {
            let mut s = b[i];
            for (j, hj) in h.iter().enumerate() {
                s += w.get(i, j) * hj;
            }
            *o = if l == last {
                s
            } else {
                match model.activation() {
                    Activation::Relu => s.max(0.0),
                    Activation::Tanh => s.tanh(),
                }
            };
        }
        h = out;
    }
    h
}
