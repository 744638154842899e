use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use mixq_core::autoloop::{evaluate_record, run_search, Evaluator, SearchResult, WorkbenchEvaluator};
use mixq_core::pareto::{aggregate, frontier, frontier_csv, select, EvalRecord};
use mixq_core::pipeline::{prepare, Prepared};
use mixq_core::pruner::PrunedManifest;
use mixq_core::{MixqError, QuantConfig};
use serde::Serialize;

use crate::config::{RunConfig, SCHEMA_VERSION};
use crate::error::CliError;
use crate::io::{atomic_write, read_log, trim_partial_tail, LogLine, LogWriter};

pub const PRUNED_MANIFEST: &str = "pruned.json";
pub const PRUNED_ARRAYS: &str = "pruned.bin";
pub const GROUPS_CSV: &str = "groups.csv";
pub const TUNE_LOG: &str = "tune.jsonl";
pub const SEARCH_LOG: &str = "records.jsonl";
pub const FRONTIER_CSV: &str = "frontier.csv";
pub const SUMMARY: &str = "summary.json";
pub const AUDIT_LOG: &str = "audit.jsonl";
pub const TIMINGS: &str = "timings.json";
pub const SCATTER_CSV: &str = "scatter.csv";
pub const REPORT_TXT: &str = "report.txt";

/// A validated config plus command-line overrides.
pub struct Context {
    pub cfg: RunConfig,
    pub hash: String,
    pub out: PathBuf,
    pub workers: usize,
}

impl Context {
    pub fn new(
        config: &Path,
        seed: Option<u64>,
        lambda: Option<f64>,
        out: Option<PathBuf>,
    ) -> Result<Self, CliError> {
        let mut cfg = RunConfig::load(config).map_err(|e| CliError::Schema(e.0))?;
        if let Some(s) = seed {
            cfg.seed = s;
        }
        if let Some(l) = lambda {
            cfg.search.lambda = l;
        }
        if let Some(o) = out {
            cfg.output_dir = o;
        }
        cfg.validate().map_err(|e| CliError::Schema(e.0))?;
        let workers = match std::env::var("MIXQ_WORKERS") {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| CliError::Schema(format!("MIXQ_WORKERS={v:?} is not a worker count")))?,
            Err(_) => 0,
        };
        Ok(Self {
            hash: cfg.run_hash(),
            out: cfg.output_dir.clone(),
            cfg,
            workers,
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

#[derive(Serialize)]
struct StoredManifest<'a> {
    schema_version: u32,
    config_hash: &'a str,
    #[serde(flatten)]
    manifest: PrunedManifest,
}

fn to_json<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s.into_bytes()
}

/// Runs the prune pipeline and stores its artifacts; nothing is written when the
/// rate cannot be met.
fn prepare_and_store(ctx: &Context) -> Result<Prepared, CliError> {
    let prep = prepare(&ctx.cfg.prepare_spec(), ctx.cfg.seed)?;
    if !prep.pruned.rate_reached() {
        return Err(CliError::UnreachableRate(format!(
            "removed {:.4} of the prunable parameters, target {}; the one-unit-per-layer floor blocks the rest",
            prep.pruned.removed_fraction(),
            ctx.cfg.prune.rate
        )));
    }
    let manifest = StoredManifest {
        schema_version: SCHEMA_VERSION,
        config_hash: &ctx.hash,
        manifest: prep.pruned.manifest(),
    };
    let mut groups = String::from("id,size,importance\n");
    for g in &prep.groups {
        let _ = writeln!(groups, "{},{},{}", g.id, g.parameter_count(&prep.dense), g.importance);
    }
    atomic_write(&ctx.path(PRUNED_ARRAYS), &prep.pruned.to_arrays())?;
    atomic_write(&ctx.path(GROUPS_CSV), groups.as_bytes())?;
    atomic_write(&ctx.path(PRUNED_MANIFEST), &to_json(&manifest))?;
    Ok(prep)
}

pub fn cmd_prune(ctx: &Context) -> Result<(), CliError> {
    let prep = prepare_and_store(ctx)?;
    println!("{:>4}  {:>6}  importance", "id", "size");
    for g in &prep.groups {
        println!("{:>4}  {:>6}  {:.6e}", g.id, g.parameter_count(&prep.dense), g.importance);
    }
    println!(
        "widths {:?} -> {:?}, removed fraction {:.4} (target {})",
        prep.pruned.original_widths(),
        prep.pruned.widths(),
        prep.pruned.removed_fraction(),
        ctx.cfg.prune.rate
    );
    Ok(())
}

fn evaluator(ctx: &Context, prep: &Prepared) -> Result<WorkbenchEvaluator, CliError> {
    Ok(WorkbenchEvaluator::new(
        &prep.pruned,
        prep.task.clone(),
        &ctx.cfg.plan(ctx.workers),
        ctx.cfg.train.hyper(),
    )?)
}

fn parse_bits(bits: &str, layers: usize) -> Result<QuantConfig, CliError> {
    let q: QuantConfig = bits
        .parse()
        .map_err(|e: MixqError| CliError::Bits(format!("{bits:?}: {e}")))?;
    if q.len() != layers {
        return Err(CliError::Bits(format!(
            "{bits:?} has {} entries, the model has {layers} adapter layers",
            q.len()
        )));
    }
    Ok(q)
}

pub fn cmd_tune(ctx: &Context, bits: &str) -> Result<(), CliError> {
    let layers = ctx.cfg.model.widths.len() - 1;
    let q = parse_bits(bits, layers)?;
    let prep = prepare_and_store(ctx)?;
    let ev = evaluator(ctx, &prep)?;
    let record = evaluate_record(&ev, &q, ctx.cfg.seed, 0)?;
    let log_path = ctx.path(TUNE_LOG);
    let previous = match fs::read_to_string(&log_path) {
        Ok(text) => read_log(&text).map_err(|(n, e)| CliError::Log(format!("{} line {n}: {e}", log_path.display())))?,
        Err(_) => Vec::new(),
    };
    let mut line = LogLine::new(&ctx.hash, "tune", record);
    line.duplicate = previous
        .iter()
        .any(|l| l.config_hash == ctx.hash && l.record.config == line.record.config);
    LogWriter::append(&log_path)?.write(&line)?;
    let r = &line.record;
    let b = &r.breakdown;
    println!("config {}  P {}{}", r.config, r.p, if r.failed { "  (training failed)" } else { "" });
    println!(
        "M {} bytes = base {} + scales {} + codebooks {} + adapters {} + optimizer {}",
        b.total, b.base_bytes, b.scale_bytes, b.codebook_bytes, b.adapter_bytes, b.optimizer_bytes
    );
    if line.duplicate {
        println!("duplicate of an earlier record in {}", log_path.display());
    }
    Ok(())
}

fn read_resume_log(ctx: &Context, path: &Path, layers: usize) -> Result<Vec<EvalRecord>, CliError> {
    let text = trim_partial_tail(path)?;
    let lines = read_log(&text).map_err(|(n, e)| CliError::Resume(format!("line {n}: {e}")))?;
    let mut out = Vec::with_capacity(lines.len());
    for (i, l) in lines.into_iter().enumerate() {
        if l.schema_version != SCHEMA_VERSION || l.config_hash != ctx.hash {
            return Err(CliError::Resume(format!(
                "line {} was written by a different configuration or seed",
                i + 1
            )));
        }
        if l.record.config.len() != layers {
            return Err(CliError::Resume(format!(
                "line {} has {} layers, the model has {layers}",
                i + 1,
                l.record.config.len()
            )));
        }
        out.push(l.record);
    }
    Ok(out)
}

#[derive(Serialize)]
struct Summary<'a> {
    schema_version: u32,
    config_hash: &'a str,
    lambda: f64,
    selected: SelectedView,
    stop_reason: &'static str,
    iterations: usize,
    records: usize,
    frontier_size: usize,
}

#[derive(Serialize)]
struct SelectedView {
    config: QuantConfig,
    p: f64,
    m_bytes: u64,
    m_norm: f64,
    objective: f64,
}

fn write_search_outputs(ctx: &Context, r: &SearchResult) -> Result<(), CliError> {
    let lambda = ctx.cfg.search.lambda;
    let s = &r.selected;
    let summary = Summary {
        schema_version: SCHEMA_VERSION,
        config_hash: &ctx.hash,
        lambda,
        selected: SelectedView {
            config: s.config.clone(),
            p: s.p,
            m_bytes: s.m,
            m_norm: s.m_norm(),
            objective: s.objective(lambda),
        },
        stop_reason: r.stop_reason.as_str(),
        iterations: r.iterations,
        records: r.records.len(),
        frontier_size: r.front.len(),
    };
    let mut audit = String::new();
    for a in &r.audit {
        audit.push_str(&serde_json::to_string(a).expect("serializable"));
        audit.push('\n');
    }
    atomic_write(&ctx.path(FRONTIER_CSV), frontier_csv(&r.front, lambda).as_bytes())?;
    atomic_write(&ctx.path(AUDIT_LOG), audit.as_bytes())?;
    atomic_write(&ctx.path(TIMINGS), &to_json(&r.timings))?;
    atomic_write(&ctx.path(SUMMARY), &to_json(&summary))?;
    println!(
        "selected {}  P {}  M {} bytes  objective {:.6}",
        s.config,
        s.p,
        s.m,
        s.objective(lambda)
    );
    println!(
        "stop reason {}, {} iterations, {} records, {} on the frontier",
        r.stop_reason.as_str(),
        r.iterations,
        r.records.len(),
        r.front.len()
    );
    Ok(())
}

pub fn cmd_search(ctx: &Context, resume: bool) -> Result<(), CliError> {
    let layers = ctx.cfg.model.widths.len() - 1;
    let log_path = ctx.path(SEARCH_LOG);
    let replay = if resume && log_path.exists() {
        read_resume_log(ctx, &log_path, layers)?
    } else {
        Vec::new()
    };
    let prep = prepare_and_store(ctx)?;
    let ev = evaluator(ctx, &prep)?;
    debug_assert_eq!(ev.layers(), layers);
    if !resume && log_path.exists() {
        fs::remove_file(&log_path)?;
    }
    let mut writer = LogWriter::append(&log_path)?;
    let plan = ctx.cfg.plan(ctx.workers);
    let result = run_search(&ev, &plan, &replay, &mut |r| {
        writer
            .write(&LogLine::new(&ctx.hash, "search", r.clone()))
            .map_err(|e| MixqError::InvalidArgument(format!("writing {}: {e}", log_path.display())))
    })
    .map_err(|e| match e {
        MixqError::ReplayMismatch(m) => CliError::Resume(m),
        other => CliError::Core(other),
    })?;
    write_search_outputs(ctx, &result)
}

pub fn cmd_report(log: &Path, lambda: f64, out: Option<PathBuf>) -> Result<(), CliError> {
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(CliError::Schema(format!("lambda {lambda} must be finite and ≥ 0")));
    }
    let text = fs::read_to_string(log).map_err(|e| CliError::Log(format!("cannot read {}: {e}", log.display())))?;
    let lines = read_log(&text).map_err(|(n, e)| CliError::Log(format!("{} line {n}: {e}", log.display())))?;
    let Some(first) = lines.first() else {
        return Err(CliError::Log(format!("{} holds no records", log.display())));
    };
    if let Some((i, _)) = lines.iter().enumerate().find(|(_, l)| {
        l.config_hash != first.config_hash
            || l.record.m_bounds != first.record.m_bounds
            || l.record.config.len() != first.record.config.len()
    }) {
        return Err(CliError::Log(format!(
            "line {} belongs to a different run than line 1",
            i + 1
        )));
    }
    let records: Vec<EvalRecord> = lines.into_iter().map(|l| l.record).collect();
    let points = aggregate(&records);
    let front = frontier(&points);
    let selected = select(&front, lambda).expect("nonempty front").clone();

    let mut csv = String::from("iteration,config,P,M_bytes,M_norm,objective,frontier,selected\n");
    for r in &points {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{}",
            r.iteration,
            r.config,
            r.p,
            r.m,
            r.m_norm(),
            r.objective(lambda),
            u8::from(front.contains(&r.config)),
            u8::from(r.config == selected.config)
        );
    }
    let mut txt = String::new();
    let name = log.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let _ = writeln!(txt, "log: {name}");
    let _ = writeln!(txt, "records: {} ({} distinct configs)", records.len(), points.len());
    let _ = writeln!(txt, "lambda: {lambda}");
    let _ = writeln!(txt, "frontier ({} members, ascending memory):", front.len());
    for r in &front.members {
        let _ = writeln!(txt, "  {}  P {}  M {} bytes  M_norm {:.6}", r.config, r.p, r.m, r.m_norm());
    }
    let _ = writeln!(
        txt,
        "selected: {}  P {}  M {} bytes  objective {:.6}",
        selected.config,
        selected.p,
        selected.m,
        selected.objective(lambda)
    );
    let dir = out.unwrap_or_else(|| log.parent().map(Path::to_path_buf).unwrap_or_default());
    atomic_write(&dir.join(SCATTER_CSV), csv.as_bytes())?;
    atomic_write(&dir.join(REPORT_TXT), txt.as_bytes())?;
    print!("{txt}");
    Ok(())
}
