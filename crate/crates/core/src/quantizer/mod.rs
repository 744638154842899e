//! Blockwise absmax quantization with lookup-table decoding.
//!
//! A matrix is split row-major into blocks of `block_size` consecutive
//! elements. Each block stores one `f64` scale (its largest magnitude) and
//! one code per element: the index of the codebook level nearest to
//! `x / scale`. Decoding is a table lookup times the block scale.

mod codebook;
mod packing;

pub use codebook::{Codebook, CodebookKind};
pub use packing::{pack_codes, unpack_codes};

use crate::error::{MixqError, Result};
use crate::matrix::Matrix;

/// Default number of consecutive elements sharing one scale.
pub const DEFAULT_BLOCK_SIZE: usize = 64;

/// Codebook family per bit-width plus the block size, shared by every layer of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodecOptions {
    pub block_size: usize,
    pub four_bit: CodebookKind,
    pub eight_bit: CodebookKind,
}

impl Default for CodecOptions {
    fn default() -> Self {
        Self {
            block_size: DEFAULT_BLOCK_SIZE,
            four_bit: CodebookKind::NormalFloat,
            eight_bit: CodebookKind::Uniform,
        }
    }
}

impl CodecOptions {
    pub fn kind_for(&self, bits: u8) -> CodebookKind {
        if bits == 4 {
            self.four_bit
        } else {
            self.eight_bit
        }
    }

    pub fn codebook(&self, bits: u8) -> Result<Codebook> {
        Codebook::build(bits, self.kind_for(bits))
    }
}

/// Frozen weight matrix stored as codes, per-block scales and a codebook.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedMatrix {
    rows: usize,
    cols: usize,
    block_size: usize,
    codes: Vec<u32>,
    scales: Vec<f64>,
    codebook: Codebook,
}

impl QuantizedMatrix {
    /// Assembles a quantized matrix from parts, validating every invariant.
    pub fn from_parts(
        rows: usize,
        cols: usize,
        block_size: usize,
        codes: Vec<u32>,
        scales: Vec<f64>,
        codebook: Codebook,
    ) -> Result<Self> {
        if block_size == 0 {
            return Err(MixqError::Corrupt("block size 0".into()));
        }
        let n = rows * cols;
        if codes.len() != n {
            return Err(MixqError::Corrupt(format!(
                "{} codes for {rows}x{cols}",
                codes.len()
            )));
        }
        if scales.len() != n.div_ceil(block_size) {
            return Err(MixqError::Corrupt(format!(
                "{} scales for {} blocks",
                scales.len(),
                n.div_ceil(block_size)
            )));
        }
        if let Some(s) = scales.iter().find(|s| !s.is_finite() || **s < 0.0) {
            return Err(MixqError::Corrupt(format!("invalid scale {s}")));
        }
        if let Some(&c) = codes.iter().find(|&&c| c as usize >= codebook.len()) {
            return Err(MixqError::CodeOutOfRange {
                code: c,
                bits: codebook.bits(),
            });
        }
        Ok(Self {
            rows,
            cols,
            block_size,
            codes,
            scales,
            codebook,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn codes(&self) -> &[u32] {
        &self.codes
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn codebook(&self) -> &Codebook {
        &self.codebook
    }

    pub fn bits(&self) -> u8 {
        self.codebook.bits()
    }

    pub fn block_count(&self) -> usize {
        self.scales.len()
    }

    /// Serializes to the little-endian binary layout:
    /// `rows: u32, cols: u32, bits: u8, kind: u8, block_size: u32`,
    /// then the scales as `f64`, then the codes packed `bits` wide, LSB first.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(14 + self.scales.len() * 8 + self.codes.len());
        out.extend_from_slice(&(self.rows as u32).to_le_bytes());
        out.extend_from_slice(&(self.cols as u32).to_le_bytes());
        out.push(self.codebook.bits());
        out.push(self.codebook.kind().tag());
        out.extend_from_slice(&(self.block_size as u32).to_le_bytes());
        for s in &self.scales {
            out.extend_from_slice(&s.to_le_bytes());
        }
        out.extend_from_slice(&pack_codes(&self.codes, self.codebook.bits()));
        out
    }

    /// Inverse of [`QuantizedMatrix::to_bytes`]; the input must be consumed exactly.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (qm, used) = Self::read_from(bytes)?;
        if used != bytes.len() {
            return Err(MixqError::Corrupt(format!(
                "{} trailing bytes",
                bytes.len() - used
            )));
        }
        Ok(qm)
    }

    /// Decodes one matrix from the front of `bytes`, returning it with the number of bytes read.
    pub fn read_from(bytes: &[u8]) -> Result<(Self, usize)> {
        const HEADER: usize = 14;
        if bytes.len() < HEADER {
            return Err(MixqError::Corrupt("truncated header".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
        let rows = u32_at(0);
        let cols = u32_at(4);
        let bits = bytes[8];
        let kind = CodebookKind::from_tag(bytes[9])
            .ok_or_else(|| MixqError::Corrupt(format!("unknown codebook tag {}", bytes[9])))?;
        let block_size = u32_at(10);
        if block_size == 0 {
            return Err(MixqError::Corrupt("block size 0".into()));
        }
        let codebook = Codebook::build(bits, kind)?;
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| MixqError::Corrupt("element count overflows".into()))?;
        let n_scales = n.div_ceil(block_size);
        let code_bytes = (n * bits as usize).div_ceil(8);
        let total = HEADER + n_scales * 8 + code_bytes;
        if bytes.len() < total {
            return Err(MixqError::Corrupt(format!(
                "expected {total} bytes, found {}",
                bytes.len()
            )));
        }
        let scales = bytes[HEADER..HEADER + n_scales * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let codes = unpack_codes(&bytes[HEADER + n_scales * 8..total], bits, n)?;
        Ok((
            Self::from_parts(rows, cols, block_size, codes, scales, codebook)?,
            total,
        ))
    }
}

/// Quantizes `w` blockwise against `codebook`.
///
/// Each block is scaled by its absmax; elements take the nearest codebook
/// index of `x / scale` (ties to the lower index). An all-zero block gets
/// scale 0 and the code nearest to 0.
pub fn quantize(w: &Matrix, codebook: &Codebook, block_size: usize) -> Result<QuantizedMatrix> {
    if block_size == 0 {
        return Err(MixqError::InvalidArgument("block_size must be at least 1".into()));
    }
    if !w.is_finite() {
        return Err(MixqError::NonFinite("quantize input".into()));
    }
    let data = w.as_slice();
    let zero_code = codebook.nearest(0.0);
    let mut codes = Vec::with_capacity(data.len());
    let mut scales = Vec::with_capacity(data.len().div_ceil(block_size));
    for block in data.chunks(block_size) {
        let scale = block.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        scales.push(scale);
        if scale == 0.0 {
            codes.extend(std::iter::repeat_n(zero_code, block.len()));
        } else {
            codes.extend(block.iter().map(|&x| codebook.nearest(x / scale)));
        }
    }
    Ok(QuantizedMatrix {
        rows: w.rows(),
        cols: w.cols(),
        block_size,
        codes,
        scales,
        codebook: codebook.clone(),
    })
}

/// Reconstructs `scale(block) * codebook[code]` for every element.
pub fn dequantize(q: &QuantizedMatrix) -> Result<Matrix> {
    let mut data = Vec::with_capacity(q.codes.len());
    for (b, codes) in q.codes.chunks(q.block_size).enumerate() {
        let scale = q.scales[b];
        for &c in codes {
            let v = q.codebook.value(c).ok_or(MixqError::CodeOutOfRange {
                code: c,
                bits: q.codebook.bits(),
            })?;
            data.push(scale * v);
        }
    }
    Ok(Matrix::from_raw(q.rows, q.cols, data))
}

/// `dequantize(q) * x`: codes stay in storage, the product runs at full precision.
pub fn simulated_matmul(q: &QuantizedMatrix, x: &Matrix) -> Result<Matrix> {
    if q.cols != x.rows() {
        return Err(MixqError::ShapeMismatch {
            op: "simulated_matmul",
            detail: format!("{}x{} times {}x{}", q.rows, q.cols, x.rows(), x.cols()),
        });
    }
    dequantize(q)?.matmul(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-3.0..3.0))
    }

    #[test]
    fn zero_matrix_roundtrips_to_zero() {
        let w = Matrix::zeros(5, 7);
        for kind in [CodebookKind::Uniform, CodebookKind::NormalFloat, CodebookKind::Fp4] {
            let cb = Codebook::build(4, kind).unwrap();
            let q = quantize(&w, &cb, 4).unwrap();
            assert!(q.scales().iter().all(|&s| s == 0.0));
            let d = dequantize(&q).unwrap();
            assert!(d.as_slice().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn three_element_block_uniform() {
        let w = Matrix::new(1, 3, vec![-3.0, 0.0, 3.0]).unwrap();
        let cb = Codebook::build(4, CodebookKind::Uniform).unwrap();
        let q = quantize(&w, &cb, 3).unwrap();
        assert_eq!(q.scales(), &[3.0]);
        // brute-force nearest over all 16 levels
        for (i, &x) in w.as_slice().iter().enumerate() {
            let mut best = 0;
            for (k, v) in cb.values().iter().enumerate() {
                if (v - x / 3.0).abs() < (cb.values()[best] - x / 3.0).abs() {
                    best = k;
                }
            }
            assert_eq!(q.codes()[i], best as u32);
        }
        assert_eq!(q.codes(), &[0, 7, 15]);
        let d = dequantize(&q).unwrap();
        assert!(d.max_abs_diff(&w) <= 0.2 + 1e-15);
    }

    #[test]
    fn single_element_maps_to_top_level() {
        let w = Matrix::new(1, 1, vec![5.0]).unwrap();
        let cb = Codebook::build(4, CodebookKind::Uniform).unwrap();
        let q = quantize(&w, &cb, 1).unwrap();
        assert_eq!(q.scales(), &[5.0]);
        assert_eq!(q.codes(), &[15]);
        assert_eq!(dequantize(&q).unwrap().as_slice(), &[5.0]);
    }

    #[test]
    fn near_zero_codes_decode_to_scaled_level() {
        let cb = Codebook::build(4, CodebookKind::Uniform).unwrap();
        let z = cb.nearest(0.0);
        let q = QuantizedMatrix::from_parts(2, 2, 2, vec![z; 4], vec![2.0, 0.5], cb.clone())
            .unwrap();
        let d = dequantize(&q).unwrap();
        let v = cb.values()[z as usize];
        assert_eq!(d.as_slice(), &[2.0 * v, 2.0 * v, 0.5 * v, 0.5 * v]);
    }

    #[test]
    fn idempotent_codec() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for kind in [CodebookKind::Uniform, CodebookKind::NormalFloat, CodebookKind::Fp4] {
            let cb = Codebook::build(4, kind).unwrap();
            let w = random_matrix(&mut rng, 9, 13);
            let q1 = quantize(&w, &cb, 16).unwrap();
            let q2 = quantize(&dequantize(&q1).unwrap(), &cb, 16).unwrap();
            assert_eq!(q1.codes(), q2.codes());
            assert_eq!(q1.scales(), q2.scales());
        }
    }

    #[test]
    fn corrupt_codes_rejected() {
        let cb = Codebook::build(4, CodebookKind::Uniform).unwrap();
        let err = QuantizedMatrix::from_parts(1, 2, 2, vec![3, 16], vec![1.0], cb).unwrap_err();
        assert!(matches!(err, MixqError::CodeOutOfRange { code: 16, .. }));
    }

    #[test]
    fn simulated_matmul_identity_zero_and_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cb = Codebook::build(8, CodebookKind::Uniform).unwrap();
        let w = random_matrix(&mut rng, 6, 5);
        let q = quantize(&w, &cb, 4).unwrap();
        let d = dequantize(&q).unwrap();
        assert_eq!(simulated_matmul(&q, &Matrix::identity(5)).unwrap(), d);
        let z = simulated_matmul(&q, &Matrix::zeros(5, 3)).unwrap();
        assert!(z.as_slice().iter().all(|&v| v == 0.0));
        let x = random_matrix(&mut rng, 5, 3);
        let got = simulated_matmul(&q, &x).unwrap();
        for i in 0..6 {
            for j in 0..3 {
                let mut s = 0.0;
                for k in 0..5 {
                    s += d.get(i, k) * x.get(k, j);
                }
                assert_eq!(got.get(i, j).to_bits(), s.to_bits());
            }
        }
        assert!(simulated_matmul(&q, &Matrix::zeros(4, 3)).is_err());
    }

    #[test]
    fn binary_layout_header() {
        let cb = Codebook::build(4, CodebookKind::NormalFloat).unwrap();
        let w = Matrix::new(1, 3, vec![1.0, -1.0, 0.5]).unwrap();
        let q = quantize(&w, &cb, 2).unwrap();
        let bytes = q.to_bytes();
        assert_eq!(&bytes[0..4], &1u32.to_le_bytes());
        assert_eq!(&bytes[4..8], &3u32.to_le_bytes());
        assert_eq!(bytes[8], 4);
        assert_eq!(bytes[9], CodebookKind::NormalFloat.tag());
        assert_eq!(&bytes[10..14], &2u32.to_le_bytes());
        assert_eq!(&bytes[14..22], &1.0f64.to_le_bytes());
        assert_eq!(&bytes[22..30], &0.5f64.to_le_bytes());
        // codes 15, 0, 15 packed LSB-first at 4 bits: 0x0F, 0x0F
        assert_eq!(&bytes[30..], &[0x0F, 0x0F]);
        assert_eq!(QuantizedMatrix::from_bytes(&bytes).unwrap(), q);
        assert!(QuantizedMatrix::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[9] = 7;
        assert!(QuantizedMatrix::from_bytes(&bad).is_err());
    }
}
