//! Per-layer bit-width assignments, the search variable.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{MixqError, Result};

/// Bit-widths a layer may be assigned.
pub const BIT_OPTIONS: [u8; 2] = [4, 8];

/// Vector `[q_1, ..., q_L]` of per-layer bit-widths, each 4 or 8.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct QuantConfig(Vec<u8>);

impl QuantConfig {
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        if let Some(&b) = bits.iter().find(|b| !BIT_OPTIONS.contains(b)) {
            return Err(MixqError::InvalidBitWidth(b as u32));
        }
        Ok(Self(bits))
    }

    pub fn uniform(layers: usize, bits: u8) -> Result<Self> {
        Self::new(vec![bits; layers])
    }

    /// Decodes a 0/1 encoding (0 ↦ 4-bit, 1 ↦ 8-bit).
    pub fn from_encoding(enc: &[u8]) -> Self {
        Self(enc.iter().map(|&e| if e == 0 { 4 } else { 8 }).collect())
    }

    /// Decodes the `index`-th configuration of `{4,8}^layers`, layer 0 as the most significant bit.
    pub fn from_index(layers: usize, index: u64) -> Self {
        Self(
            (0..layers)
                .map(|i| {
                    if (index >> (layers - 1 - i)) & 1 == 1 {
                        8
                    } else {
                        4
                    }
                })
                .collect(),
        )
    }

    /// Every configuration of `{4,8}^layers`, in lexicographic order of the encoding.
    pub fn enumerate(layers: usize) -> Vec<QuantConfig> {
        assert!(layers < 63, "cannot enumerate 2^{layers} configurations");
        (0..1u64 << layers)
            .map(|i| Self::from_index(layers, i))
            .collect()
    }

    pub fn bits(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// 0/1 encoding used by the surrogate.
    pub fn encoding(&self) -> Vec<u8> {
        self.0.iter().map(|&b| u8::from(b == 8)).collect()
    }

    pub fn count_8bit(&self) -> usize {
        self.0.iter().filter(|&&b| b == 8).count()
    }

    /// `true` when at least one layer differs from the others.
    pub fn is_mixed(&self) -> bool {
        self.0.windows(2).any(|w| w[0] != w[1])
    }

    pub fn with_flipped(&self, layer: usize) -> Self {
        let mut bits = self.0.clone();
        bits[layer] = if bits[layer] == 4 { 8 } else { 4 };
        Self(bits)
    }
}

impl fmt::Display for QuantConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.0 {
            write!(f, "{b}")?;
        }
        Ok(())
    }
}

impl FromStr for QuantConfig {
    type Err = MixqError;

    /// Parses a bit string such as `"4848"`.
    fn from_str(s: &str) -> Result<Self> {
        let bits = s
            .chars()
            .map(|c| match c {
                '4' => Ok(4),
                '8' => Ok(8),
                other => Err(MixqError::InvalidArgument(format!(
                    "bit string {s:?} contains {other:?}; expected only '4' or '8'"
                ))),
            })
            .collect::<Result<Vec<u8>>>()?;
        if bits.is_empty() {
            return Err(MixqError::InvalidArgument("empty bit string".into()));
        }
        Ok(Self(bits))
    }
}

impl TryFrom<String> for QuantConfig {
    type Error = MixqError;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<QuantConfig> for String {
    fn from(q: QuantConfig) -> String {
        q.to_string()
    }
}
