//! The search loop: seeded initial batch, then fit → suggest → train → record
//! until the front stabilizes, the space is exhausted, or the budget runs out.

use std::collections::BTreeSet;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::costmodel::CostModel;
use crate::error::{MixqError, Result};
use crate::pareto::{frontier_with_generation, select, stabilized, EvalRecord, ParetoFront};
use crate::pruner::PrunedModel;
use crate::quant_config::QuantConfig;
use crate::quantizer::CodecOptions;
use crate::surrogate::{candidate_set, fit, suggest, FitOptions, GpHyper};
use crate::workbench::{assemble, train_adapters, AdapterInit, AssembleOptions, Task, ToyModel, TrainHyper};

/// Largest space `brute_force` will enumerate.
pub const BRUTE_FORCE_LIMIT: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchPlan {
    pub init_count: usize,
    pub max_iters: usize,
    pub lambda: f64,
    pub rank: usize,
    pub loftq_iters: usize,
    pub init: AdapterInit,
    pub codec: CodecOptions,
    pub window: usize,
    pub seed: u64,
    pub gp: FitOptions,
    /// Parallel evaluations; 0 lets the thread pool decide.
    pub workers: usize,
}

impl Default for SearchPlan {
    fn default() -> Self {
        Self {
            init_count: 10,
            max_iters: 40,
            lambda: 1.0,
            rank: 4,
            loftq_iters: 1,
            init: AdapterInit::Loftq,
            codec: CodecOptions::default(),
            window: 5,
            seed: 0,
            gp: FitOptions::default(),
            workers: 0,
        }
    }
}

impl SearchPlan {
    pub fn validate(&self) -> Result<()> {
        if self.init_count == 0 {
            return Err(MixqError::InvalidArgument("init_count must be at least 1".into()));
        }
        if self.window == 0 {
            return Err(MixqError::InvalidArgument("stabilization window must be at least 1".into()));
        }
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(MixqError::InvalidArgument(format!("lambda {} must be finite and ≥ 0", self.lambda)));
        }
        if self.codec.block_size == 0 {
            return Err(MixqError::InvalidArgument("block size must be positive".into()));
        }
        Ok(())
    }

    pub fn assemble_options(&self) -> AssembleOptions {
        AssembleOptions {
            rank: self.rank,
            init: self.init,
            loftq_iters: self.loftq_iters,
            codec: self.codec,
        }
    }
}

/// Something that turns a config into a measured P.
pub trait Evaluator: Sync {
    fn cost_model(&self) -> &CostModel;

    /// One training run. Numeric blow-ups (`NonFiniteLoss`, `NonFiniteGradient`)
    /// are recorded as failures; any other error aborts the search.
    fn evaluate(&self, q: &QuantConfig, seed: u64) -> Result<f64>;

    fn layers(&self) -> usize {
        self.cost_model().layers()
    }
}

/// Assembles the pruned base at `q`, trains the adapters, reports best-val P.
#[derive(Debug, Clone)]
pub struct WorkbenchEvaluator {
    base: ToyModel,
    task: Task,
    assemble: AssembleOptions,
    hyper: TrainHyper,
    cost: CostModel,
}

impl WorkbenchEvaluator {
    pub fn new(pruned: &PrunedModel, task: Task, plan: &SearchPlan, hyper: TrainHyper) -> Result<Self> {
        let cost = CostModel::new(pruned.layer_shapes(), plan.rank, plan.codec)?;
        Ok(Self {
            base: pruned.model().clone(),
            task,
            assemble: plan.assemble_options(),
            hyper,
            cost,
        })
    }

    pub fn task(&self) -> &Task {
        &self.task
    }

    pub fn base(&self) -> &ToyModel {
        &self.base
    }
}

impl Evaluator for WorkbenchEvaluator {
    fn cost_model(&self) -> &CostModel {
        &self.cost
    }

    fn evaluate(&self, q: &QuantConfig, seed: u64) -> Result<f64> {
        let mut model = assemble(&self.base, q, &self.assemble, seed)?;
        let hyper = TrainHyper {
            seed,
            ..self.hyper.clone()
        };
        Ok(train_adapters(&mut model, &self.task, &hyper)?.p)
    }
}

/// Evaluator backed by a closure; used for synthetic landscapes.
pub struct FnEvaluator<F> {
    cost: CostModel,
    f: F,
}

impl<F: Fn(&QuantConfig, u64) -> Result<f64> + Sync> FnEvaluator<F> {
    pub fn new(cost: CostModel, f: F) -> Self {
        Self { cost, f }
    }
}

impl<F: Fn(&QuantConfig, u64) -> Result<f64> + Sync> Evaluator for FnEvaluator<F> {
    fn cost_model(&self) -> &CostModel {
        &self.cost
    }

    fn evaluate(&self, q: &QuantConfig, seed: u64) -> Result<f64> {
        (self.f)(q, seed)
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Training seed of `q` under `master`: the same config always trains identically.
pub fn config_seed(master: u64, q: &QuantConfig) -> u64 {
    let mut h = splitmix(master ^ (q.len() as u64).wrapping_mul(0xA24B_AED4_963E_E407));
    for (i, &b) in q.encoding().iter().enumerate() {
        h = splitmix(h ^ ((i as u64) << 1 | b as u64));
    }
    h
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    InitOnly,
    Stabilized,
    Exhausted,
    MaxIters,
    BruteForce,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::InitOnly => "init-only",
            Self::Stabilized => "stabilized",
            Self::Exhausted => "exhausted",
            Self::MaxIters => "max-iters",
            Self::BruteForce => "brute-force",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub iteration: usize,
    pub suggested: QuantConfig,
    pub ei: f64,
    pub objective_mean: f64,
    pub p_mean: f64,
    pub p_std: f64,
    pub incumbent: f64,
    pub hyper: GpHyper,
    pub candidates: usize,
    pub front_size: usize,
}

/// Wall-clock measurements, kept apart from the deterministic outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub iteration: usize,
    pub suggest_secs: f64,
    pub evaluate_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub records: Vec<EvalRecord>,
    pub front: ParetoFront,
    pub selected: EvalRecord,
    pub audit: Vec<AuditEntry>,
    pub stop_reason: StopReason,
    pub iterations: usize,
    #[serde(skip)]
    pub timings: Vec<Timing>,
}

/// Records already on disk, consumed in order instead of retraining.
#[derive(Debug, Default)]
struct Replay<'a> {
    records: &'a [EvalRecord],
    used: usize,
}

impl<'a> Replay<'a> {
    fn take(&mut self, q: &QuantConfig, iteration: usize) -> Result<Option<EvalRecord>> {
        let Some(r) = self.records.get(self.used) else {
            return Ok(None);
        };
        if &r.config != q || r.iteration != iteration {
            return Err(MixqError::ReplayMismatch(format!(
                "record {} is {} at iteration {}, search expects {} at iteration {}",
                self.used, r.config, r.iteration, q, iteration
            )));
        }
        self.used += 1;
        Ok(Some(r.clone()))
    }
}

fn with_pool<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if workers == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| MixqError::InvalidArgument(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Trains `q` once under the master seed and prices it; numeric failures give `P = 0`.
pub fn evaluate_record<E: Evaluator + ?Sized>(
    ev: &E,
    q: &QuantConfig,
    master: u64,
    iteration: usize,
) -> Result<EvalRecord> {
    let cost = ev.cost_model();
    let breakdown = cost.memory(q)?;
    let seed = config_seed(master, q);
    let (p, failed) = match ev.evaluate(q, seed) {
        Ok(p) if p.is_finite() => (p, false),
        Ok(_) | Err(MixqError::NonFiniteLoss { .. }) | Err(MixqError::NonFiniteGradient { .. }) => (0.0, true),
        Err(e) => return Err(e),
    };
    Ok(EvalRecord {
        config: q.clone(),
        p,
        m: breakdown.total,
        m_bounds: cost.bounds(),
        breakdown,
        seed,
        iteration,
        failed,
    })
}

/// Evaluates a batch in parallel (after replay), emitting records in batch order.
fn evaluate_batch<E: Evaluator + ?Sized>(
    ev: &E,
    batch: &[QuantConfig],
    plan: &SearchPlan,
    iteration: usize,
    replay: &mut Replay<'_>,
    sink: &mut dyn FnMut(&EvalRecord) -> Result<()>,
) -> Result<Vec<EvalRecord>> {
    let mut done = Vec::with_capacity(batch.len());
    for q in batch {
        match replay.take(q, iteration)? {
            Some(r) => done.push(r),
            None => break,
        }
    }
    let todo = &batch[done.len()..];
    let fresh: Vec<Result<EvalRecord>> = with_pool(plan.workers, || {
        todo.par_iter().map(|q| evaluate_record(ev, q, plan.seed, iteration)).collect()
    })?;
    for r in fresh {
        let r = r?;
        sink(&r)?;
        done.push(r);
    }
    Ok(done)
}

/// Seeded draw of `count` distinct configs.
pub fn initial_configs(layers: usize, count: usize, seed: u64) -> Vec<QuantConfig> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if layers < 20 {
        let mut idx: Vec<u64> = (0..1u64 << layers).collect();
        idx.shuffle(&mut rng);
        idx.truncate(count);
        return idx.into_iter().map(|i| QuantConfig::from_index(layers, i)).collect();
    }
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let enc: Vec<u8> = (0..layers).map(|_| rng.random_range(0..2u8)).collect();
        let q = QuantConfig::from_encoding(&enc);
        if seen.insert(q.clone()) {
            out.push(q);
        }
    }
    out
}

/// Runs the search; `replay` holds records of an earlier, interrupted run of the
/// same plan and `sink` receives every newly evaluated record in order.
pub fn run_search<E: Evaluator + ?Sized>(
    ev: &E,
    plan: &SearchPlan,
    replay: &[EvalRecord],
    sink: &mut dyn FnMut(&EvalRecord) -> Result<()>,
) -> Result<SearchResult> {
    plan.validate()?;
    let layers = ev.layers();
    let mut replay = Replay { records: replay, used: 0 };
    let mut timings = Vec::new();

    let started = Instant::now();
    let init = initial_configs(layers, plan.init_count, plan.seed);
    let mut records = evaluate_batch(ev, &init, plan, 0, &mut replay, sink)?;
    timings.push(Timing {
        iteration: 0,
        suggest_secs: 0.0,
        evaluate_secs: started.elapsed().as_secs_f64(),
    });

    let mut history = vec![frontier_with_generation(&records, 0)];
    let mut audit = Vec::new();
    let mut stop = if plan.max_iters == 0 {
        StopReason::InitOnly
    } else {
        StopReason::MaxIters
    };
    let mut iterations = 0;
    for it in 1..=plan.max_iters {
        let t0 = Instant::now();
        let state = fit(&records, &plan.gp)?;
        let anchors: Vec<QuantConfig> = history.last().expect("nonempty").members.iter().map(|r| r.config.clone()).collect();
        let candidates = candidate_set(layers, &anchors, splitmix(plan.seed ^ splitmix(it as u64)));
        let s = match suggest(&state, &candidates, plan.lambda, ev.cost_model()) {
            Ok(s) => s,
            Err(MixqError::SearchSpaceExhausted) => {
                stop = StopReason::Exhausted;
                break;
            }
            Err(e) => return Err(e),
        };
        let suggest_secs = t0.elapsed().as_secs_f64();
        let t1 = Instant::now();
        let rec = evaluate_batch(ev, std::slice::from_ref(&s.config), plan, it, &mut replay, sink)?;
        timings.push(Timing {
            iteration: it,
            suggest_secs,
            evaluate_secs: t1.elapsed().as_secs_f64(),
        });
        records.extend(rec);
        iterations = it;
        let front = frontier_with_generation(&records, it);
        audit.push(AuditEntry {
            iteration: it,
            suggested: s.config,
            ei: s.ei,
            objective_mean: s.objective_mean,
            p_mean: s.p_mean,
            p_std: s.p_std,
            incumbent: s.incumbent,
            hyper: state.hyper(),
            candidates: candidates.len(),
            front_size: front.len(),
        });
        history.push(front);
        if stabilized(&history, plan.window) {
            stop = StopReason::Stabilized;
            break;
        }
    }
    if replay.used != replay.records.len() {
        return Err(MixqError::ReplayMismatch(format!(
            "log holds {} records but the search consumed {}",
            replay.records.len(),
            replay.used
        )));
    }
    let front = history.pop().expect("nonempty");
    let selected = select(&front, plan.lambda).expect("front is nonempty").clone();
    Ok(SearchResult {
        records,
        front,
        selected,
        audit,
        stop_reason: stop,
        iterations,
        timings,
    })
}

/// Evaluates every config of `{4, 8}^L`; the exact reference for the search.
pub fn brute_force<E: Evaluator + ?Sized>(ev: &E, plan: &SearchPlan) -> Result<SearchResult> {
    plan.validate()?;
    let layers = ev.layers();
    if layers >= usize::BITS as usize || (1usize << layers) > BRUTE_FORCE_LIMIT {
        return Err(MixqError::BruteForceGuard {
            layers,
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    let started = Instant::now();
    let all = QuantConfig::enumerate(layers);
    let records = evaluate_batch(ev, &all, plan, 0, &mut Replay::default(), &mut |_| Ok(()))?;
    let front = frontier_with_generation(&records, 0);
    let selected = select(&front, plan.lambda).expect("front is nonempty").clone();
    Ok(SearchResult {
        records,
        front,
        selected,
        audit: Vec::new(),
        stop_reason: StopReason::BruteForce,
        iterations: 0,
        timings: vec![Timing {
            iteration: 0,
            suggest_secs: 0.0,
            evaluate_secs: started.elapsed().as_secs_f64(),
        }],
    })
}
