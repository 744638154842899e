//! Dominance, non-dominated fronts, and scalarized selection over evaluated configs.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::costmodel::{normalize_memory, MemoryBreakdown};
use crate::quant_config::QuantConfig;

/// One realized evaluation: a config with its measured performance and memory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub config: QuantConfig,
    pub p: f64,
    pub m: u64,
    /// `(M(all-4), M(all-8))` of the search this record belongs to.
    pub m_bounds: (u64, u64),
    pub breakdown: MemoryBreakdown,
    pub seed: u64,
    /// 0 for the initial batch, k for the k-th loop iteration.
    pub iteration: usize,
    #[serde(default)]
    pub failed: bool,
}

impl EvalRecord {
    pub fn m_norm(&self) -> f64 {
        normalize_memory(self.m, self.m_bounds)
    }

    /// `M_norm − λ·P`
    pub fn objective(&self, lambda: f64) -> f64 {
        self.m_norm() - lambda * self.p
    }
}

pub fn dominates(a: &EvalRecord, b: &EvalRecord) -> bool {
    a.m <= b.m && a.p >= b.p && (a.m < b.m || a.p > b.p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoFront {
    /// Sorted by ascending M, then descending P, then config.
    pub members: Vec<EvalRecord>,
    pub generation: usize,
}

impl ParetoFront {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn configs(&self) -> BTreeSet<QuantConfig> {
        self.members.iter().map(|r| r.config.clone()).collect()
    }

    pub fn contains(&self, q: &QuantConfig) -> bool {
        self.members.iter().any(|r| &r.config == q)
    }
}

/// Collapses repeated configs to one record holding the mean P (first occurrence
/// supplies the other fields; a group is failed only if every run failed).
pub fn aggregate(records: &[EvalRecord]) -> Vec<EvalRecord> {
    let mut order: Vec<QuantConfig> = Vec::new();
    let mut groups: BTreeMap<QuantConfig, (EvalRecord, f64, usize, bool)> = BTreeMap::new();
    for r in records {
        match groups.get_mut(&r.config) {
            Some((_, sum, n, all_failed)) => {
                *sum += r.p;
                *n += 1;
                *all_failed &= r.failed;
            }
            None => {
                order.push(r.config.clone());
                groups.insert(r.config.clone(), (r.clone(), r.p, 1, r.failed));
            }
        }
    }
    order
        .into_iter()
        .map(|q| {
            let (mut rec, sum, n, failed) = groups.remove(&q).expect("group exists");
            if n > 1 {
                rec.p = sum / n as f64;
            }
            rec.failed = failed;
            rec
        })
        .collect()
}

fn sweep_order(a: &EvalRecord, b: &EvalRecord) -> Ordering {
    a.m.cmp(&b.m)
        .then(b.p.total_cmp(&a.p))
        .then_with(|| a.config.cmp(&b.config))
}

/// Non-dominated records by sorting on (M asc, P desc) and tracking the best P seen
/// at strictly smaller M. Records with identical (M, P) are all kept.
pub fn frontier(records: &[EvalRecord]) -> ParetoFront {
    frontier_with_generation(records, 0)
}

pub fn frontier_with_generation(records: &[EvalRecord], generation: usize) -> ParetoFront {
    let mut sorted = aggregate(records);
    sorted.sort_by(sweep_order);
    let mut members = Vec::new();
    let mut best_below = f64::NEG_INFINITY;
    let mut i = 0;
    while i < sorted.len() {
        let m = sorted[i].m;
        let top = sorted[i].p;
        let mut j = i;
        while j < sorted.len() && sorted[j].m == m {
            if sorted[j].p == top && top > best_below {
                members.push(sorted[j].clone());
            }
            j += 1;
        }
        best_below = best_below.max(top);
        i = j;
    }
    ParetoFront { members, generation }
}

fn select_order(a: &EvalRecord, b: &EvalRecord, lambda: f64) -> Ordering {
    a.objective(lambda)
        .total_cmp(&b.objective(lambda))
        .then(a.m.cmp(&b.m))
        .then_with(|| a.config.cmp(&b.config))
}

/// Minimizer of `M_norm − λ·P`; ties prefer smaller M, then the smaller config.
pub fn select(front: &ParetoFront, lambda: f64) -> Option<&EvalRecord> {
    front.members.iter().min_by(|a, b| select_order(a, b, lambda))
}

/// True iff the last `s + 1` fronts hold the same config sets.
pub fn stabilized(history: &[ParetoFront], s: usize) -> bool {
    if s == 0 || history.len() < s + 1 {
        return false;
    }
    let tail = &history[history.len() - s - 1..];
    let first = tail[0].configs();
    tail[1..].iter().all(|f| f.configs() == first)
}

/// `iteration,config,P,M_bytes,M_norm,objective`, one row per member.
pub fn frontier_csv(front: &ParetoFront, lambda: f64) -> String {
    let mut out = String::from("iteration,config,P,M_bytes,M_norm,objective\n");
    for r in &front.members {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.iteration,
            r.config,
            r.p,
            r.m,
            r.m_norm(),
            r.objective(lambda)
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(bits: &str, m: u64, p: f64) -> EvalRecord {
        EvalRecord {
            config: bits.parse().unwrap(),
            p,
            m,
            m_bounds: (0, 10),
            breakdown: MemoryBreakdown::default(),
            seed: 0,
            iteration: 0,
            failed: false,
        }
    }

    #[test]
    fn dominance_examples() {
        let a = rec("44", 10, 0.9);
        assert!(!dominates(&a, &a));
        assert!(dominates(&a, &rec("88", 20, 0.8)));
    }

    #[test]
    fn hand_selection() {
        let records = vec![
            rec("44", 0, 0.2),
            rec("48", 3, 0.6),
            rec("84", 6, 0.8),
            rec("88", 10, 0.9),
        ];
        let front = frontier(&records);
        assert_eq!(front.len(), 4);
        let best = select(&front, 1.0).unwrap();
        assert_eq!(best.config.to_string(), "48");
        assert!((best.objective(1.0) + 0.3).abs() < 1e-12);
        assert_eq!(select(&front, 0.0).unwrap().m, 0);
        assert_eq!(select(&front, 1e6).unwrap().m, 10);
    }

    #[test]
    fn duplicates_average() {
        let front = frontier(&[rec("4", 1, 0.2), rec("4", 1, 0.4), rec("8", 2, 0.35)]);
        assert_eq!(front.len(), 2);
        assert!((front.members[0].p - 0.3).abs() < 1e-15);
    }

    #[test]
    fn stabilization_window() {
        let f = frontier(&[rec("4", 1, 0.5)]);
        let g = frontier(&[rec("8", 2, 0.9)]);
        assert!(!stabilized(&[f.clone(), f.clone()], 2));
        assert!(stabilized(&[g.clone(), f.clone(), f.clone(), f.clone()], 2));
        assert!(!stabilized(&[f.clone(), g.clone(), f.clone()], 2));
    }
}
