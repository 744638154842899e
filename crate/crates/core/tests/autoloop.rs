mod common;

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use mixq_core::autoloop::{brute_force, run_search, Evaluator, FnEvaluator, SearchPlan, SearchResult, StopReason, WorkbenchEvaluator};
use mixq_core::costmodel::CostModel;
use mixq_core::pareto::{dominates, frontier, EvalRecord};
use mixq_core::pipeline::{prepare, ModelSpec, PrepareSpec};
use mixq_core::quantizer::CodecOptions;
use mixq_core::workbench::{Activation, SplitSizes, TaskSpec, TrainHyper};
use mixq_core::{MixqError, QuantConfig, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Layer sensitivities plus pairwise interactions, all drawn from `seed`.
fn landscape(layers: usize, seed: u64) -> impl Fn(&QuantConfig, u64) -> Result<f64> + Sync {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w: Vec<f64> = (0..layers).map(|_| rng.random_range(0.0..1.0)).collect();
    let pair: Vec<f64> = (0..layers * layers).map(|_| rng.random_range(-0.1..0.1)).collect();
    let total: f64 = w.iter().sum::<f64>() + 0.1 * (layers * layers) as f64;
    move |q: &QuantConfig, _| {
        let e: Vec<f64> = q.encoding().into_iter().map(f64::from).collect();
        let mut s = 0.0;
        for i in 0..e.len() {
            s += w[i] * e[i];
            for j in 0..e.len() {
                s += pair[i * e.len() + j] * e[i] * e[j];
            }
        }
        Ok((0.5 + 0.5 * s / total).clamp(0.0, 1.0))
    }
}

fn cost(layers: usize) -> CostModel {
    let shapes = (0..layers).map(|i| (16 + 8 * (i % 3), 16 + 8 * ((i + 1) % 3))).collect();
    CostModel::new(shapes, 2, CodecOptions::default()).unwrap()
}

fn quiet(r: &SearchResult) -> SearchResult {
    SearchResult { timings: Vec::new(), ..r.clone() }
}

fn search(ev: &impl Evaluator, plan: &SearchPlan) -> SearchResult {
    run_search(ev, plan, &[], &mut |_| Ok(())).unwrap()
}

#[test]
fn single_layer_brute_force() {
    let ev = FnEvaluator::new(cost(1), landscape(1, 0));
    let r = brute_force(&ev, &SearchPlan::default()).unwrap();
    assert_eq!(r.records.len(), 2);
    let expect: BTreeSet<_> = common::brute_frontier(&r.records).into_iter().map(|i| r.records[i].config.clone()).collect();
    assert_eq!(r.front.configs(), expect);
}

#[test]
fn brute_force_guard() {
    let ev = FnEvaluator::new(cost(13), landscape(13, 0));
    assert!(matches!(brute_force(&ev, &SearchPlan::default()), Err(MixqError::BruteForceGuard { .. })));
}

#[test]
fn exhaustive_budget_recovers_brute_force_front() {
    for seed in 0..10 {
        let ev = FnEvaluator::new(cost(4), landscape(4, seed));
        let plan = SearchPlan { max_iters: 16, window: 100, seed, ..SearchPlan::default() };
        let s = search(&ev, &plan);
        let b = brute_force(&ev, &plan).unwrap();
        assert_eq!(s.records.len(), 16);
        assert_eq!(s.stop_reason, StopReason::Exhausted);
        assert_eq!(s.front.configs(), b.front.configs());
        let sweep = frontier(&b.records);
        assert_eq!(sweep.configs(), b.front.configs());
        assert_eq!(s.selected.config, b.selected.config);
    }
}

#[test]
fn search_invariants_hold() {
    for seed in 0..10 {
        let layers = 6;
        let calls = AtomicUsize::new(0);
        let f = landscape(layers, seed);
        let ev = FnEvaluator::new(cost(layers), |q: &QuantConfig, s| {
            calls.fetch_add(1, Ordering::Relaxed);
            f(q, s)
        });
        let plan = SearchPlan { max_iters: 20, seed, ..SearchPlan::default() };
        let s = search(&ev, &plan);
        let distinct: BTreeSet<_> = s.records.iter().map(|r| r.config.clone()).collect();
        assert_eq!(distinct.len(), s.records.len());
        assert_eq!(calls.load(Ordering::Relaxed), s.records.len());
        assert_eq!(s.records.len(), plan.init_count + s.iterations);
        assert_eq!(s.audit.len(), s.iterations);
        assert!(s.front.contains(&s.selected.config));
        assert!(!s.records.iter().any(|r| dominates(r, &s.selected)));
        let b = brute_force(&ev, &plan).unwrap();
        assert!(b.selected.objective(plan.lambda) <= s.selected.objective(plan.lambda));
    }
}

/// Count of grid cells (M, P) dominated by at least one front member.
fn dominated_cells(records: &[EvalRecord]) -> usize {
    let front = frontier(records);
    let (lo, hi) = records[0].m_bounds;
    let mut n = 0;
    for i in 0..=40 {
        let m = lo + (hi - lo) * i / 40;
        for j in 0..=40 {
            let p = j as f64 / 40.0;
            n += usize::from(front.members.iter().any(|r| r.m <= m && r.p >= p));
        }
    }
    n
}

#[test]
fn anytime_front_never_shrinks() {
    for seed in 0..5 {
        let ev = FnEvaluator::new(cost(7), landscape(7, seed));
        let s = search(&ev, &SearchPlan { max_iters: 30, seed, ..SearchPlan::default() });
        let mut last = 0;
        for k in 10..=s.records.len() {
            let cells = dominated_cells(&s.records[..k]);
            assert!(cells >= last);
            last = cells;
        }
    }
}

#[test]
fn max_iters_zero_is_init_only() {
    let ev = FnEvaluator::new(cost(5), landscape(5, 1));
    let s = search(&ev, &SearchPlan { max_iters: 0, seed: 1, ..SearchPlan::default() });
    assert_eq!(s.stop_reason, StopReason::InitOnly);
    assert_eq!(s.records.len(), 10);
    assert_eq!(s.selected, *mixq_core::pareto::select(&frontier(&s.records), 1.0).unwrap());
}

#[test]
fn rerun_is_identical_and_replay_resumes() {
    let ev = FnEvaluator::new(cost(6), landscape(6, 3));
    let plan = SearchPlan { max_iters: 15, seed: 3, workers: 2, ..SearchPlan::default() };
    let log = Mutex::new(Vec::new());
    let full = run_search(&ev, &plan, &[], &mut |r| {
        log.lock().unwrap().push(r.clone());
        Ok(())
    })
    .unwrap();
    assert_eq!(quiet(&full), quiet(&search(&ev, &plan)));
    let log = log.into_inner().unwrap();
    assert_eq!(log, full.records);
    for cut in [0, 4, 10, 13] {
        let mut fresh = Vec::new();
        let resumed = run_search(&ev, &plan, &log[..cut], &mut |r| {
            fresh.push(r.clone());
            Ok(())
        })
        .unwrap();
        assert_eq!(quiet(&resumed), quiet(&full));
        assert_eq!(fresh, log[cut..].to_vec());
    }
    let mut wrong = log.clone();
    wrong.swap(0, 1);
    assert!(run_search(&ev, &plan, &wrong, &mut |_| Ok(())).is_err());
}

#[test]
fn regret_is_small_across_sizes() {
    for layers in 4..=8 {
        let mut good = 0;
        for seed in 0..20 {
            let ev = FnEvaluator::new(cost(layers), landscape(layers, 100 + seed));
            let plan = SearchPlan { max_iters: 40.min(1 << layers), seed, ..SearchPlan::default() };
            let s = search(&ev, &plan);
            let b = brute_force(&ev, &plan).unwrap();
            let gap = s.selected.objective(1.0) - b.selected.objective(1.0);
            good += usize::from(gap <= 0.05);
        }
        assert!(good >= 16, "L = {layers}: {good}/20 seeds within 0.05");
    }
}

#[test]
fn workbench_search_is_deterministic() {
    let spec = PrepareSpec {
        model: ModelSpec { widths: vec![4, 6, 6, 4], activation: Activation::Tanh },
        task: TaskSpec {
            input_dim: 4,
            output_dim: 4,
            sizes: SplitSizes { train: 64, val: 32, test: 32 },
            ..TaskSpec::default()
        },
        prune_rate: 0.2,
        pretrain: TrainHyper { epochs: 5, ..TrainHyper::default() },
        ..PrepareSpec::default()
    };
    let run = || {
        let prep = prepare(&spec, 9).unwrap();
        let plan = SearchPlan { init_count: 3, max_iters: 3, rank: 2, seed: 9, ..SearchPlan::default() };
        let ev = WorkbenchEvaluator::new(&prep.pruned, prep.task.clone(), &plan, TrainHyper { epochs: 3, ..TrainHyper::default() }).unwrap();
        quiet(&search(&ev, &plan))
    };
    let (a, b) = (run(), run());
    assert_eq!(a, b);
    assert!(a.records.iter().all(|r| (0.0..=1.0).contains(&r.p) && r.m == r.breakdown.total));
}
