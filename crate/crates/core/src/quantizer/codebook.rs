use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{MixqError, Result};

/// Family of lookup tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CodebookKind {
    /// Equally spaced levels on [-1, 1] (symmetric absmax).
    Uniform,
    /// Normal-quantile levels, `NF4` at 4 bits.
    #[serde(alias = "nf4", alias = "nf")]
    NormalFloat,
    /// E2M1 minifloat magnitudes, 4 bits only.
    Fp4,
}

impl CodebookKind {
    pub fn tag(self) -> u8 {
        match self {
            CodebookKind::Uniform => 0,
            CodebookKind::NormalFloat => 1,
            CodebookKind::Fp4 => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(CodebookKind::Uniform),
            1 => Some(CodebookKind::NormalFloat),
            2 => Some(CodebookKind::Fp4),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CodebookKind::Uniform => "uniform",
            CodebookKind::NormalFloat => "normalfloat",
            CodebookKind::Fp4 => "fp4",
        }
    }
}

/// The `2^bits` values a code can decode to, normalized to [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    bits: u8,
    kind: CodebookKind,
    values: Vec<f64>,
}

/// E2M1 magnitudes before normalization by the largest (6).
const E2M1_MAGNITUDES: [f64; 8] = [0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0];

impl Codebook {
    pub fn build(bits: u8, kind: CodebookKind) -> Result<Self> {
        let unsupported = || MixqError::UnsupportedCodebook {
            bits,
            kind: kind.name().to_string(),
        };
        if bits != 4 && bits != 8 {
            return Err(unsupported());
        }
        let n = 1usize << bits;
        let values = match kind {
            CodebookKind::Uniform => {
                let denom = (n - 1) as f64;
                mirrored(n, |i| -1.0 + 2.0 * i as f64 / denom)
            }
            CodebookKind::NormalFloat => {
                let std_normal = Normal::new(0.0, 1.0).expect("standard normal");
                let delta = 1.0 / (2.0 * (n as f64 + 1.0));
                let step = (1.0 - 2.0 * delta) / (n - 1) as f64;
                let edge = std_normal.inverse_cdf(1.0 - delta);
                mirrored(n, |i| {
                    if i == 0 {
                        -1.0
                    } else {
                        std_normal.inverse_cdf(delta + i as f64 * step) / edge
                    }
                })
            }
            CodebookKind::Fp4 => {
                if bits != 4 {
                    return Err(unsupported());
                }
                // -6..-0.5, then two slots decoding to zero, then 0.5..6.
                let mut v: Vec<f64> = E2M1_MAGNITUDES[1..]
                    .iter()
                    .rev()
                    .map(|m| -m / 6.0)
                    .collect();
                v.push(0.0);
                v.push(0.0);
                v.extend(E2M1_MAGNITUDES[1..].iter().map(|m| m / 6.0));
                v
            }
        };
        debug_assert_eq!(values.len(), n);
        Ok(Self { bits, kind, values })
    }

    pub fn bits(&self) -> u8 {
        self.bits
    }

    pub fn kind(&self) -> CodebookKind {
        self.kind
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Decodes one code.
    #[inline]
    pub fn value(&self, code: u32) -> Option<f64> {
        self.values.get(code as usize).copied()
    }

    /// Index of the nearest value to `x`; equal distances resolve to the lower index.
    pub fn nearest(&self, x: f64) -> u32 {
        let v = &self.values;
        let hi = v.partition_point(|&c| c < x);
        let mut best = if hi == 0 {
            0
        } else if hi == v.len() {
            v.len() - 1
        } else {
            let (dl, dh) = (x - v[hi - 1], v[hi] - x);
            if dh < dl {
                hi
            } else {
                hi - 1
            }
        };
        // Duplicate levels (Fp4 zero) resolve to their first slot.
        while best > 0 && v[best - 1] == v[best] {
            best -= 1;
        }
        best as u32
    }
}

/// Fills the lower half from `f` and mirrors it so the table is exactly antisymmetric.
fn mirrored(n: usize, f: impl Fn(usize) -> f64) -> Vec<f64> {
    let mut values = vec![0.0; n];
    for i in 0..n / 2 {
        let v = f(i);
        values[i] = v;
        values[n - 1 - i] = -v;
    }
    values
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_nearest(values: &[f64], x: f64) -> u32 {
        let mut best = 0;
        for (i, v) in values.iter().enumerate() {
            if (v - x).abs() < (values[best] - x).abs() {
                best = i;
            }
        }
        best as u32
    }

    #[test]
    fn uniform_4bit_endpoints_and_spacing() {
        let cb = Codebook::build(4, CodebookKind::Uniform).unwrap();
        let v = cb.values();
        assert_eq!(v.len(), 16);
        assert_eq!(v[0], -1.0);
        assert_eq!(v[15], 1.0);
        for w in v.windows(2) {
            assert!((w[1] - w[0] - 2.0 / 15.0).abs() < 1e-15);
        }
    }

    #[test]
    fn uniform_8bit_spacing() {
        let cb = Codebook::build(8, CodebookKind::Uniform).unwrap();
        assert_eq!(cb.len(), 256);
        assert!((cb.values()[128] - cb.values()[127] - 2.0 / 255.0).abs() < 1e-15);
    }

    #[test]
    fn normalfloat_is_symmetric_with_unit_endpoints() {
        for bits in [4, 8] {
            let cb = Codebook::build(bits, CodebookKind::NormalFloat).unwrap();
            let v = cb.values();
            let n = v.len();
            assert_eq!(v[0], -1.0);
            assert_eq!(v[n - 1], 1.0);
            for i in 0..n {
                assert_eq!(v[i], -v[n - 1 - i]);
            }
            assert!(v.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn normalfloat_matches_quantile_formula() {
        let cb = Codebook::build(4, CodebookKind::NormalFloat).unwrap();
        let nd = Normal::new(0.0, 1.0).unwrap();
        let delta = 1.0 / 34.0;
        let edge = nd.inverse_cdf(1.0 - delta);
        for i in 0..16 {
            let p = delta + i as f64 * (1.0 - 2.0 * delta) / 15.0;
            let expected = nd.inverse_cdf(p) / edge;
            assert!((cb.values()[i] - expected).abs() < 1e-12, "slot {i}");
        }
    }

    #[test]
    fn fp4_layout() {
        let cb = Codebook::build(4, CodebookKind::Fp4).unwrap();
        let v = cb.values();
        assert_eq!(v.len(), 16);
        assert_eq!(v[0], -1.0);
        assert_eq!(v[15], 1.0);
        assert_eq!(v[7], 0.0);
        assert_eq!(v[8], 0.0);
        assert!(v.windows(2).all(|w| w[0] <= w[1]));
        let distinct: std::collections::BTreeSet<u64> = v.iter().map(|x| x.to_bits()).collect();
        assert_eq!(distinct.len(), 15);
        assert_eq!(cb.nearest(0.0), 7);
        assert_eq!(cb.nearest(0.01), 7);
    }

    #[test]
    fn unsupported_combinations() {
        assert!(Codebook::build(8, CodebookKind::Fp4).is_err());
        assert!(Codebook::build(2, CodebookKind::Uniform).is_err());
        assert!(Codebook::build(16, CodebookKind::NormalFloat).is_err());
    }

    #[test]
    fn nearest_matches_exhaustive_argmin() {
        for kind in [CodebookKind::Uniform, CodebookKind::NormalFloat, CodebookKind::Fp4] {
            let cb = Codebook::build(4, kind).unwrap();
            for k in -2000..=2000 {
                let x = k as f64 / 1000.0;
                assert_eq!(cb.nearest(x), brute_nearest(cb.values(), x), "{kind:?} x={x}");
            }
            // exact midpoints resolve low
            for w in 0..cb.len() - 1 {
                let mid = 0.5 * (cb.values()[w] + cb.values()[w + 1]);
                assert_eq!(cb.nearest(mid), brute_nearest(cb.values(), mid));
            }
        }
    }
}
