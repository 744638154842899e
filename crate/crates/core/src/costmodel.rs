//! Analytic memory inventory of a quantized, adapter-carrying model.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{MixqError, Result};
use crate::quant_config::QuantConfig;
use crate::quantizer::{CodebookKind, CodecOptions};

/// Bytes per adapter parameter and per Adam moment entry (training runs in f64).
pub const PARAM_BYTES: u64 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct MemoryBreakdown {
    pub base_bytes: u64,
    pub scale_bytes: u64,
    pub codebook_bytes: u64,
    pub adapter_bytes: u64,
    pub optimizer_bytes: u64,
    pub total: u64,
}

impl MemoryBreakdown {
    pub fn parts_sum(&self) -> u64 {
        self.base_bytes + self.scale_bytes + self.codebook_bytes + self.adapter_bytes + self.optimizer_bytes
    }
}

/// Layer shapes plus everything the byte count depends on besides the config.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostModel {
    shapes: Vec<(usize, usize)>,
    rank: usize,
    codec: CodecOptions,
}

impl CostModel {
    /// `shapes` are `(d_out, d_in)` per adapter-bearing layer.
    pub fn new(shapes: Vec<(usize, usize)>, rank: usize, codec: CodecOptions) -> Result<Self> {
        if shapes.is_empty() {
            return Err(MixqError::InvalidArgument("cost model needs at least one layer".into()));
        }
        if codec.block_size == 0 {
            return Err(MixqError::InvalidArgument("block size must be positive".into()));
        }
        Ok(Self { shapes, rank, codec })
    }

    pub fn layers(&self) -> usize {
        self.shapes.len()
    }

    pub fn shapes(&self) -> &[(usize, usize)] {
        &self.shapes
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn codec(&self) -> &CodecOptions {
        &self.codec
    }

    pub fn memory(&self, q: &QuantConfig) -> Result<MemoryBreakdown> {
        if q.len() != self.shapes.len() {
            return Err(MixqError::ConfigLength {
                expected: self.shapes.len(),
                got: q.len(),
            });
        }
        let block = self.codec.block_size as u64;
        let mut m = MemoryBreakdown::default();
        let mut codebooks: BTreeSet<(u8, CodebookKind)> = BTreeSet::new();
        for (&(d_out, d_in), &bits) in self.shapes.iter().zip(q.bits()) {
            let elems = (d_out * d_in) as u64;
            m.base_bytes += (elems * bits as u64).div_ceil(8);
            m.scale_bytes += elems.div_ceil(block) * 8;
            codebooks.insert((bits, self.codec.kind_for(bits)));
            let r = crate::workbench::effective_rank(self.rank, d_out, d_in) as u64;
            m.adapter_bytes += r * (d_out + d_in) as u64 * PARAM_BYTES;
        }
        m.codebook_bytes = codebooks.iter().map(|&(bits, _)| (1u64 << bits) * 8).sum();
        m.optimizer_bytes = 2 * m.adapter_bytes;
        m.total = m.parts_sum();
        Ok(m)
    }

    /// `(M(all-4), M(all-8))` totals.
    pub fn bounds(&self) -> (u64, u64) {
        let l = self.shapes.len();
        let lo = self.memory(&QuantConfig::uniform(l, 4).expect("valid width")).expect("length matches").total;
        let hi = self.memory(&QuantConfig::uniform(l, 8).expect("valid width")).expect("length matches").total;
        (lo, hi)
    }

    pub fn normalized(&self, q: &QuantConfig) -> Result<f64> {
        let total = self.memory(q)?.total;
        Ok(normalize_memory(total, self.bounds()))
    }
}

/// Maps `[lo, hi]` onto `[0, 1]`; a degenerate range maps everything to 0.
pub fn normalize_memory(m: u64, (lo, hi): (u64, u64)) -> f64 {
    if hi <= lo {
        0.0
    } else {
        (m as f64 - lo as f64) / (hi - lo) as f64
    }
}
