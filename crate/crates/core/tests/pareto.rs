mod common;

use std::collections::BTreeSet;

use mixq_core::costmodel::MemoryBreakdown;
use mixq_core::pareto::{dominates, frontier, frontier_csv, select, stabilized, EvalRecord};
use mixq_core::QuantConfig;
use proptest::prelude::*;

fn rec(idx: u64, m: u64, p: f64) -> EvalRecord {
    EvalRecord {
        config: QuantConfig::from_index(12, idx),
        p,
        m,
        m_bounds: (0, 1000),
        breakdown: MemoryBreakdown::default(),
        seed: 0,
        iteration: 0,
        failed: false,
    }
}

/// Distinct configs, coarse grids so ties in M and P actually occur.
fn records(max: usize) -> impl Strategy<Value = Vec<EvalRecord>> {
    prop::collection::vec((0u64..60, 0u32..40), 1..max).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(i, (m, p))| rec(i as u64, m * 10, p as f64 / 40.0))
            .collect()
    })
}

fn config_set(recs: &[EvalRecord], idx: &[usize]) -> BTreeSet<QuantConfig> {
    idx.iter().map(|&i| recs[i].config.clone()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn sweep_equals_all_pairs(recs in records(1000)) {
        let front = frontier(&recs);
        prop_assert_eq!(front.configs(), config_set(&recs, &common::brute_frontier(&recs)));
        prop_assert!(front.members.windows(2).all(|w| w[0].m <= w[1].m));
        for a in &front.members {
            for b in &front.members {
                prop_assert!(!dominates(a, b));
            }
        }
    }

    #[test]
    fn refrontier_is_idempotent(recs in records(200)) {
        let front = frontier(&recs);
        let mut again = front.members.clone();
        again.extend(recs.iter().cloned());
        prop_assert_eq!(frontier(&again).configs(), front.configs());
    }

    #[test]
    fn dominance_matches_comparisons(a in (0u64..5, 0u32..5), b in (0u64..5, 0u32..5)) {
        let (ra, rb) = (rec(0, a.0, a.1 as f64), rec(1, b.0, b.1 as f64));
        let oracle = a.0 <= b.0 && a.1 >= b.1 && (a.0, a.1) != (b.0, b.1);
        prop_assert_eq!(dominates(&ra, &rb), oracle);
        prop_assert!(!dominates(&ra, &ra));
    }

    #[test]
    fn dominance_is_transitive(x in (0u64..4, 0u32..4), y in (0u64..4, 0u32..4), z in (0u64..4, 0u32..4)) {
        let (a, b, c) = (rec(0, x.0, x.1 as f64), rec(1, y.0, y.1 as f64), rec(2, z.0, z.1 as f64));
        if dominates(&a, &b) && dominates(&b, &c) {
            prop_assert!(dominates(&a, &c));
        }
    }

    #[test]
    fn selection_ignores_memory_scale(recs in records(100), k in 1u64..1000, lambda in 0.0f64..5.0) {
        let scaled: Vec<EvalRecord> = recs
            .iter()
            .map(|r| EvalRecord { m: r.m * k, m_bounds: (r.m_bounds.0 * k, r.m_bounds.1 * k), ..r.clone() })
            .collect();
        let a = select(&frontier(&recs), lambda).unwrap().config.clone();
        let b = select(&frontier(&scaled), lambda).unwrap().config.clone();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn stabilized_matches_set_oracle(stream in prop::collection::vec(0usize..3, 1..30), s in 1usize..5) {
        let pool = [
            vec![rec(0, 1, 0.5)],
            vec![rec(1, 2, 0.9)],
            vec![rec(0, 1, 0.5), rec(1, 2, 0.9)],
        ];
        let mut history = Vec::new();
        for (t, &k) in stream.iter().enumerate() {
            history.push(frontier(&pool[k]));
            let oracle = t + 1 > s && stream[t - s..=t].iter().all(|&j| pool[j].iter().map(|r| &r.config).collect::<BTreeSet<_>>() == pool[k].iter().map(|r| &r.config).collect());
            prop_assert_eq!(stabilized(&history, s), oracle);
        }
    }
}

#[test]
fn increasing_line_is_all_frontier() {
    let recs: Vec<_> = (0..10).map(|i| rec(i, i * 10, i as f64 / 10.0)).collect();
    assert_eq!(frontier(&recs).len(), 10);
    assert_eq!(frontier(&recs[..1]).len(), 1);
}

#[test]
fn selection_extremes_and_csv() {
    let recs = vec![rec(0, 0, 0.2), rec(1, 300, 0.6), rec(2, 600, 0.8), rec(3, 1000, 0.9)];
    let front = frontier(&recs);
    let best = select(&front, 1.0).unwrap();
    assert!((best.objective(1.0) - (-0.3)).abs() < 1e-12);
    assert_eq!(best.m, 300);
    assert_eq!(select(&front, 0.0).unwrap().m, 0);
    assert_eq!(select(&front, 1e6).unwrap().m, 1000);
    let csv = frontier_csv(&front, 1.0);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "iteration,config,P,M_bytes,M_norm,objective");
    assert_eq!(lines.len(), 5);
    assert!(lines[2].starts_with("0,444444444448,0.6,300,0.3,"));
}
