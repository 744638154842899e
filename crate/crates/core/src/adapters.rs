//! Low-rank adapters over a quantized frozen base, and their
//! quantization-aware initialization by alternating quantize / truncated SVD.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{MixqError, Result};
use crate::matrix::Matrix;
use crate::quantizer::{dequantize, quantize, Codebook, QuantizedMatrix};

/// Standard deviation of the Gaussian `A` initialization.
pub const GAUSSIAN_INIT_STD: f64 = 0.02;

/// Trainable update `ΔW = A·B` with `A: d_out × r` and `B: r × d_in`.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraAdapter {
    a: Matrix,
    b: Matrix,
}

impl LoraAdapter {
    pub fn new(a: Matrix, b: Matrix) -> Result<Self> {
        if a.cols() != b.rows() {
            return Err(MixqError::ShapeMismatch {
                op: "LoraAdapter::new",
                detail: format!("A is {}x{}, B is {}x{}", a.rows(), a.cols(), b.rows(), b.cols()),
            });
        }
        if a.cols() > a.rows().min(b.cols()) {
            return Err(MixqError::InvalidArgument(format!(
                "rank {} exceeds min({}, {})",
                a.cols(),
                a.rows(),
                b.cols()
            )));
        }
        Ok(Self { a, b })
    }

    /// Zero-initialized adapter.
    pub fn zeros(d_out: usize, d_in: usize, rank: usize) -> Result<Self> {
        Self::new(Matrix::zeros(d_out, rank), Matrix::zeros(rank, d_in))
    }

    /// `A ~ N(0, 0.02²)`, `B = 0`, so `A·B = 0` at the start of training.
    pub fn gaussian<R: Rng + ?Sized>(
        d_out: usize,
        d_in: usize,
        rank: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let normal = Normal::new(0.0, GAUSSIAN_INIT_STD).expect("valid std");
        let a = Matrix::from_fn(d_out, rank, |_, _| normal.sample(rng));
        Self::new(a, Matrix::zeros(rank, d_in))
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }

    /// Mutable access to `(A, B)`; shapes must be left unchanged.
    pub fn factors_mut(&mut self) -> (&mut Matrix, &mut Matrix) {
        (&mut self.a, &mut self.b)
    }

    pub fn rank(&self) -> usize {
        self.a.cols()
    }

    pub fn d_out(&self) -> usize {
        self.a.rows()
    }

    pub fn d_in(&self) -> usize {
        self.b.cols()
    }

    /// `r · (d_out + d_in)`.
    pub fn parameter_count(&self) -> usize {
        self.rank() * (self.d_out() + self.d_in())
    }

    /// The dense update `A·B`.
    pub fn delta(&self) -> Matrix {
        self.a.matmul(&self.b).expect("adapter shapes conform")
    }
}

/// `(deq(W)·X + b) + (A·B)·X`, with `b` either `d_out × 1` (broadcast) or `d_out × n`.
pub fn lora_forward(
    w_frozen: &QuantizedMatrix,
    adapter: &LoraAdapter,
    x: &Matrix,
    bias: &Matrix,
) -> Result<Matrix> {
    let (d_out, d_in) = w_frozen.shape();
    if adapter.d_out() != d_out || adapter.d_in() != d_in {
        return Err(MixqError::ShapeMismatch {
            op: "lora_forward",
            detail: format!(
                "adapter {}x{} on a {d_out}x{d_in} layer",
                adapter.d_out(),
                adapter.d_in()
            ),
        });
    }
    if x.rows() != d_in {
        return Err(MixqError::ShapeMismatch {
            op: "lora_forward",
            detail: format!("input has {} rows, layer expects {d_in}", x.rows()),
        });
    }
    if bias.rows() != d_out || (bias.cols() != 1 && bias.cols() != x.cols()) {
        return Err(MixqError::ShapeMismatch {
            op: "lora_forward",
            detail: format!("bias {}x{} for output {d_out}x{}", bias.rows(), bias.cols(), x.cols()),
        });
    }
    let frozen = dequantize(w_frozen)?.matmul(x)?;
    let update = adapter.delta().matmul(x)?;
    Ok(Matrix::from_fn(d_out, x.cols(), |i, j| {
        let b = if bias.cols() == 1 { bias.get(i, 0) } else { bias.get(i, j) };
        (frozen.get(i, j) + b) + update.get(i, j)
    }))
}

/// Best rank-`r` factorization `R ≈ A·B` in Frobenius norm.
///
/// `A = [√σ₁u₁ … √σᵣuᵣ]`, `B = [√σ₁v₁ … √σᵣvᵣ]ᵀ`, singular values in descending
/// order, each `uᵢ` signed so its first non-negligible entry is positive.
pub fn truncated_svd(r_mat: &Matrix, rank: usize) -> Result<(Matrix, Matrix)> {
    let (m, n) = r_mat.shape();
    if rank > m.min(n) {
        return Err(MixqError::InvalidArgument(format!(
            "rank {rank} exceeds min({m}, {n})"
        )));
    }
    if !r_mat.is_finite() {
        return Err(MixqError::NonFinite("truncated_svd input".into()));
    }
    if rank == 0 {
        return Ok((Matrix::zeros(m, 0), Matrix::zeros(0, n)));
    }
    let dm = DMatrix::from_row_slice(m, n, r_mat.as_slice());
    let svd = dm
        .try_svd(true, true, f64::EPSILON, 10_000)
        .ok_or(MixqError::SvdFailed { rows: m, cols: n })?;
    let u = svd.u.as_ref().ok_or(MixqError::SvdFailed { rows: m, cols: n })?;
    let v_t = svd.v_t.as_ref().ok_or(MixqError::SvdFailed { rows: m, cols: n })?;
    let sigma = &svd.singular_values;

    let mut order: Vec<usize> = (0..sigma.len()).collect();
    // Stable sort keeps nalgebra's order among equal singular values.
    order.sort_by(|&i, &j| sigma[j].total_cmp(&sigma[i]));

    let mut a = Matrix::zeros(m, rank);
    let mut b = Matrix::zeros(rank, n);
    for (slot, &k) in order.iter().take(rank).enumerate() {
        let s = sigma[k].max(0.0).sqrt();
        let col_max = (0..m).fold(0.0f64, |acc, i| acc.max(u[(i, k)].abs()));
        let sign = (0..m)
            .map(|i| u[(i, k)])
            .find(|v| v.abs() > 1e-12 * col_max)
            .map_or(1.0, |v| if v < 0.0 { -1.0 } else { 1.0 });
        for i in 0..m {
            a.set(i, slot, sign * s * u[(i, k)]);
        }
        for j in 0..n {
            b.set(slot, j, sign * s * v_t[(k, j)]);
        }
    }
    Ok((a, b))
}

/// Result of the alternating quantize / SVD initialization.
#[derive(Debug, Clone, PartialEq)]
pub struct LoftqInit {
    pub quantized: QuantizedMatrix,
    pub adapter: LoraAdapter,
    pub iterations: usize,
    /// `‖W − deq(Q_T) − A_T·B_T‖_F`.
    pub residual_norm: f64,
    /// Residual norm after each iteration; not necessarily monotone.
    pub residual_history: Vec<f64>,
}

impl LoftqInit {
    /// Quantized base in its binary layout, followed by `A` and `B` as
    /// `rows: u32, cols: u32` headers and little-endian `f64` data.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.quantized.to_bytes();
        for m in [self.adapter.a(), self.adapter.b()] {
            out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
            out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
            for v in m.as_slice() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }
}

/// Runs `iterations` rounds of `Q_t = q(W − A_{t−1}B_{t−1})`, `R_t = W − deq(Q_t)`,
/// `(A_t, B_t) = truncated_svd(R_t, rank)`, starting from `A_0 = B_0 = 0`.
pub fn loftq_init(
    w: &Matrix,
    codebook: &Codebook,
    block_size: usize,
    rank: usize,
    iterations: usize,
) -> Result<LoftqInit> {
    if iterations == 0 {
        return Err(MixqError::InvalidArgument("LoftQ needs at least one iteration".into()));
    }
    let (m, n) = w.shape();
    let mut delta = Matrix::zeros(m, n);
    let mut adapter = LoraAdapter::zeros(m, n, rank)?;
    let mut history = Vec::with_capacity(iterations);
    let mut quantized = None;
    for _ in 0..iterations {
        let q = quantize(&w.sub(&delta)?, codebook, block_size)?;
        let residual = w.sub(&dequantize(&q)?)?;
        let (a, b) = truncated_svd(&residual, rank)?;
        adapter = LoraAdapter::new(a, b)?;
        delta = adapter.delta();
        history.push(residual.sub(&delta)?.frobenius_norm());
        quantized = Some(q);
    }
    Ok(LoftqInit {
        quantized: quantized.expect("at least one iteration"),
        adapter,
        iterations,
        residual_norm: *history.last().expect("at least one iteration"),
        residual_history: history,
    })
}
