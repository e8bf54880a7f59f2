//! Experiment orchestration: paired scenario batches over a predictor
//! family, metric rows, cohort normalization and the report files.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::budget::{BudgetMode, DEFAULT_NODE_OVERHEAD};
use crate::episode::{run_episode, write_log, EpisodeLog, EpisodeMeta, LogPaths, TickConfig};
use crate::error::{Error, Result};
use crate::metrics::{normalize_cohort, static_prediction_error, write_metric_rows, MetricRow, MetricsConfig, NormalizationSpec};
use crate::planner::despot::{DespotConfig, DespotPlanner};
use crate::planner::rvo::{RvoConfig, RvoPlanner};
use crate::planner::Planner;
use crate::predict::{
    build_database, ConstantAcceleration, ConstantVelocity, KnnPredictor, NoisyOracle, Predictor, TrajectoryDatabase,
    KINEMATIC_LATENCY, KNN_LATENCY, SKNN_LATENCY,
};
use crate::report::{emit_report, Correlation, ReportContext, ResultRow};
use crate::rng::derive_seed;
use crate::scenario::{MapTemplate, ScenarioFile, DEFAULT_HORIZON_TICKS, DEFAULT_N_EXO};
use crate::world::SimConfig;

/// Seed namespaces, so reference runs never share scenarios with the
/// evaluated batch.
const BATCH_STREAM: u64 = 0;
const STATIC_STREAM: u64 = 1;
const DATABASE_STREAM: u64 = 2;

/// Tick rates allowed in fixed-time mode.
pub const TICK_RATES: [f64; 3] = [30.0, 3.0, 1.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub name: String,
    pub scenarios_per_predictor: usize,
    pub base_seed: u64,
    /// Cycled over scenario indices.
    pub map_templates: Vec<MapTemplate>,
    pub n_exo: usize,
    pub horizon_ticks: u32,
    pub budget: BudgetMode,
    pub node_overhead: f64,
    /// Reference episodes for static ADE/FDE; 0 disables static metrics.
    pub static_scenarios: usize,
    /// Reference episodes for KNN databases not given as files.
    pub database_scenarios: usize,
    pub write_logs: bool,
    /// Worker threads; 0 uses all cores.
    pub threads: usize,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            scenarios_per_predictor: 50,
            base_seed: 0,
            map_templates: vec![MapTemplate::Mixed],
            n_exo: DEFAULT_N_EXO,
            horizon_ticks: DEFAULT_HORIZON_TICKS,
            budget: BudgetMode::FixedTime { tick_rate: 30.0 },
            node_overhead: DEFAULT_NODE_OVERHEAD,
            static_scenarios: 5,
            database_scenarios: 10,
            write_logs: false,
            threads: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlannerKind {
    #[default]
    Rvo,
    Despot,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerSection {
    pub kind: PlannerKind,
    pub rvo: RvoConfig,
    pub despot: DespotConfig,
}

impl PlannerSection {
    pub fn build(&self) -> Box<dyn Planner> {
        match self.kind {
            PlannerKind::Rvo => Box::new(RvoPlanner::new(self.rvo.clone())),
            PlannerKind::Despot => Box::new(DespotPlanner::new(self.despot.clone())),
        }
    }

    pub fn id(&self) -> &'static str {
        match self.kind {
            PlannerKind::Rvo => "rvo",
            PlannerKind::Despot => "despot",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorKind {
    Cv,
    Ca,
    Knn,
    Sknn,
    Oracle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictorSpec {
    pub id: String,
    pub kind: PredictorKind,
    /// Oracle noise in closed loop, meters.
    #[serde(default)]
    pub sigma: f64,
    /// Oracle noise used for the static dataset; defaults to `sigma`.
    #[serde(default)]
    pub static_sigma: Option<f64>,
    /// Overrides the kind's declared latency, seconds.
    #[serde(default)]
    pub latency: Option<f64>,
    #[serde(default = "default_k")]
    pub k: usize,
    /// KNN database file; built from reference runs when absent.
    #[serde(default)]
    pub database: Option<PathBuf>,
}

fn default_k() -> usize {
    6
}

impl PredictorSpec {
    pub fn declared_latency(&self) -> f64 {
        self.latency.unwrap_or(match self.kind {
            PredictorKind::Cv | PredictorKind::Ca | PredictorKind::Oracle => KINEMATIC_LATENCY,
            PredictorKind::Knn => KNN_LATENCY,
            PredictorKind::Sknn => SKNN_LATENCY,
        })
    }

    fn build(&self, db: Option<&Arc<TrajectoryDatabase>>, sigma: f64) -> Box<dyn Predictor> {
        let latency = self.declared_latency();
        match self.kind {
            PredictorKind::Cv => Box::new(ConstantVelocity {
                id: self.id.clone(),
                latency,
            }),
            PredictorKind::Ca => Box::new(ConstantAcceleration {
                id: self.id.clone(),
                latency,
            }),
            PredictorKind::Knn | PredictorKind::Sknn => Box::new(KnnPredictor {
                id: self.id.clone(),
                k: self.k,
                social: self.kind == PredictorKind::Sknn,
                latency,
                db: Arc::clone(db.expect("knn predictors get a database")),
            }),
            PredictorKind::Oracle => Box::new(NoisyOracle::new(self.id.clone(), sigma, latency)),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub planner: PlannerSection,
    pub predictors: Vec<PredictorSpec>,
    pub sim: SimConfig,
    pub metrics: MetricsConfig,
}

impl ExperimentConfig {
    /// Reads and validates a TOML config. Relative database paths are
    /// resolved against the config's directory.
    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: ExperimentConfig = toml::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in &mut cfg.predictors {
            if let Some(db) = &mut p.database {
                if db.is_relative() {
                    *db = base.join(&*db);
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.experiment;
        let bad = |m: String| Err(Error::Config(m));
        if e.scenarios_per_predictor == 0 {
            return bad("scenarios_per_predictor must be at least 1".into());
        }
        if e.map_templates.is_empty() {
            return bad("map_templates is empty".into());
        }
        match e.budget {
            BudgetMode::FixedTime { tick_rate } if !TICK_RATES.contains(&tick_rate) => {
                return bad(format!("tick_rate must be one of 30, 3, 1 (got {tick_rate})"));
            }
            BudgetMode::FixedPredictions { prediction_calls: 0 } => {
                return bad("prediction_calls must be at least 1".into());
            }
            _ => {}
        }
        if !(e.node_overhead >= 0.0 && e.node_overhead.is_finite()) {
            return bad("node_overhead must be finite and nonnegative".into());
        }
        if self.predictors.is_empty() {
            return bad("no predictors configured".into());
        }
        let mut seen = BTreeSet::new();
        for p in &self.predictors {
            if p.id.is_empty() || p.id.contains(['/', '\\', ',', '"']) || p.id.contains(char::is_whitespace) {
                return bad(format!("predictor id `{}` is not a plain name", p.id));
            }
            if !seen.insert(&p.id) {
                return bad(format!("duplicate predictor id `{}`", p.id));
            }
            if !(p.sigma >= 0.0 && p.sigma.is_finite()) || p.static_sigma.is_some_and(|s| !(s >= 0.0 && s.is_finite())) {
                return bad(format!("predictor `{}`: sigma must be finite and nonnegative", p.id));
            }
            if p.latency.is_some_and(|l| !(l >= 0.0 && l.is_finite())) {
                return bad(format!("predictor `{}`: latency must be finite and nonnegative", p.id));
            }
            if matches!(p.kind, PredictorKind::Knn | PredictorKind::Sknn) {
                if p.k == 0 {
                    return bad(format!("predictor `{}`: k must be at least 1", p.id));
                }
                if p.database.is_none() && e.database_scenarios == 0 {
                    return bad(format!("predictor `{}` has no database and database_scenarios is 0", p.id));
                }
            }
        }
        Ok(())
    }

    fn tick(&self) -> TickConfig {
        TickConfig {
            sim: self.sim,
            mode: self.experiment.budget,
            node_overhead: self.experiment.node_overhead,
        }
    }

    /// The scenario of batch index `i`; identical for every predictor.
    pub fn scenario_file(&self, stream: u64, i: usize) -> ScenarioFile {
        let e = &self.experiment;
        ScenarioFile {
            seed: derive_seed(e.base_seed, &[stream, i as u64]),
            template: e.map_templates[i % e.map_templates.len()],
            n_exo: e.n_exo,
            horizon_ticks: e.horizon_ticks,
        }
    }

    pub fn episode_seed(&self, stream: u64, i: usize) -> u64 {
        derive_seed(self.experiment.base_seed, &[stream, i as u64, 0xE915])
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    /// Keep every episode log in memory and return it.
    pub keep_logs: bool,
    /// Overrides the config's worker count (PREDLOOP_THREADS wins over both).
    pub threads: Option<usize>,
}

/// One excluded scenario.
#[derive(Clone, Debug, PartialEq)]
pub struct Failure {
    pub predictor_id: String,
    pub scenario_index: usize,
    pub message: String,
}

#[derive(Debug)]
pub struct ExperimentOutput {
    /// Sorted by (predictor in config order, scenario index).
    pub metric_rows: Vec<MetricRow>,
    pub results: Vec<ResultRow>,
    pub correlations: Vec<Correlation>,
    pub normalization: NormalizationSpec,
    pub failures: Vec<Failure>,
    /// Scenario indices excluded for every predictor.
    pub dropped: Vec<usize>,
    /// Parallel to `metric_rows` when `keep_logs` was set.
    pub logs: Vec<EpisodeLog>,
}

fn worker_count(opt: Option<usize>, cfg: usize) -> usize {
    std::env::var("PREDLOOP_THREADS")
        .ok()
        .and_then(|s| s.trim().parse().ok())
        .or(opt)
        .unwrap_or(cfg)
}

/// Runs reference episodes with the constant-velocity predictor and the
/// configured planner.
fn reference_logs(cfg: &ExperimentConfig, stream: u64, count: usize) -> Result<Vec<(EpisodeLog, u64)>> {
    let cv = ConstantVelocity::default();
    let tick = cfg.tick();
    (0..count)
        .into_par_iter()
        .map(|i| {
            let sc = cfg.scenario_file(stream, i).generate()?;
            let seed = cfg.episode_seed(stream, i);
            let log = run_episode(&sc, cfg.planner.build().as_mut(), &cv, &tick, seed)?;
            Ok((log, seed))
        })
        .collect()
}

fn predictor_set(cfg: &ExperimentConfig) -> Result<(Vec<Box<dyn Predictor>>, Vec<Box<dyn Predictor>>)> {
    let mut shared: Option<Arc<TrajectoryDatabase>> = None;
    let mut dbs = Vec::new();
    for p in &cfg.predictors {
        let db = match (&p.database, p.kind) {
            (_, PredictorKind::Cv | PredictorKind::Ca | PredictorKind::Oracle) => None,
            (Some(path), _) => Some(Arc::new(TrajectoryDatabase::load(path)?)),
            (None, _) => {
                if shared.is_none() {
                    let logs = reference_logs(cfg, DATABASE_STREAM, cfg.experiment.database_scenarios)?;
                    let logs: Vec<EpisodeLog> = logs.into_iter().map(|(l, _)| l).collect();
                    shared = Some(Arc::new(build_database(&logs)?));
                }
                shared.clone()
            }
        };
        dbs.push(db);
    }
    let live = cfg.predictors.iter().zip(&dbs).map(|(p, db)| p.build(db.as_ref(), p.sigma)).collect();
    let statics = cfg
        .predictors
        .iter()
        .zip(&dbs)
        .map(|(p, db)| p.build(db.as_ref(), p.static_sigma.unwrap_or(p.sigma)))
        .collect();
    Ok((live, statics))
}

struct Job {
    predictor: usize,
    index: usize,
}

fn run_job(
    cfg: &ExperimentConfig,
    predictor: &dyn Predictor,
    job: &Job,
    log_dir: Option<&Path>,
) -> Result<(MetricRow, EpisodeLog)> {
    let file = cfg.scenario_file(BATCH_STREAM, job.index);
    let sc = file.generate()?;
    let seed = cfg.episode_seed(BATCH_STREAM, job.index);
    let tick = cfg.tick();
    let mut planner = cfg.planner.build();
    let log = run_episode(&sc, planner.as_mut(), predictor, &tick, seed)?;
    let row = MetricRow::from_log(job.index, predictor.id(), planner.id(), &log, &cfg.metrics)?;
    if let Some(dir) = log_dir {
        let meta = EpisodeMeta {
            planner: planner.id().to_string(),
            predictor: predictor.id().to_string(),
            episode_seed: seed,
            tick,
            scenario: file,
        };
        let paths = LogPaths::in_dir(&dir.join(predictor.id()), &format!("scenario_{:03}", job.index));
        write_log(&log, Some(&meta), &paths)?;
    }
    Ok((row, log))
}

/// Means of metric rows per predictor (first-appearance order), scored
/// against a normalization of all rows together.
pub fn aggregate(
    rows: &[MetricRow],
    latency: &dyn Fn(&str) -> f64,
    statics: &BTreeMap<String, (f64, f64)>,
) -> Result<(Vec<ResultRow>, NormalizationSpec)> {
    let (scores, spec) = normalize_cohort(rows)?;
    let mut order: Vec<&str> = Vec::new();
    for r in rows {
        if !order.contains(&r.predictor_id.as_str()) {
            order.push(&r.predictor_id);
        }
    }
    let results = order
        .iter()
        .map(|id| {
            let (rs, ss): (Vec<&MetricRow>, Vec<_>) =
                rows.iter().zip(&scores).filter(|(r, _)| r.predictor_id == *id).unzip();
            ResultRow::aggregate(&rs, &ss, latency(id), statics.get(*id).copied())
        })
        .collect();
    Ok((results, spec))
}

pub const FAILURE_HEADER: [&str; 3] = ["predictor_id", "scenario_index", "message"];

fn write_failures(failures: &[Failure], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::parse(path, e.to_string()))?;
    w.write_record(FAILURE_HEADER)?;
    for f in failures {
        w.write_record([f.predictor_id.as_str(), &f.scenario_index.to_string(), &f.message])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Runs every predictor on the same scenario batch and writes
/// metrics.csv, failures.csv and the report files to `opts.out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let out = &opts.out_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count(opts.threads, cfg.experiment.threads))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| run_inner(cfg, opts))
}

fn run_inner(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<ExperimentOutput> {
    let out = &opts.out_dir;
    let (live, statics) = predictor_set(cfg)?;
    let n = cfg.experiment.scenarios_per_predictor;
    let jobs: Vec<Job> = (0..live.len())
        .flat_map(|predictor| (0..n).map(move |index| Job { predictor, index }))
        .collect();
    let log_dir = cfg.experiment.write_logs.then(|| out.join("logs"));
    let outcomes: Vec<Result<(MetricRow, EpisodeLog)>> = jobs
        .par_iter()
        .map(|job| run_job(cfg, live[job.predictor].as_ref(), job, log_dir.as_deref()))
        .collect();

    let mut failures = Vec::new();
    for (job, r) in jobs.iter().zip(&outcomes) {
        if let Err(e) = r {
            failures.push(Failure {
                predictor_id: live[job.predictor].id().to_string(),
                scenario_index: job.index,
                message: e.to_string(),
            });
        }
    }
    // A failed scenario is dropped for every predictor to keep the
    // comparison paired.
    let dropped: BTreeSet<usize> = failures.iter().map(|f| f.scenario_index).collect();
    let mut metric_rows = Vec::new();
    let mut logs = Vec::new();
    for (job, r) in jobs.iter().zip(outcomes) {
        if dropped.contains(&job.index) {
            continue;
        }
        let (row, log) = r.expect("failures are dropped");
        metric_rows.push(row);
        if opts.keep_logs {
            logs.push(log);
        }
    }
    write_failures(&failures, &out.join("failures.csv"))?;
    if metric_rows.is_empty() {
        return Err(Error::Config(format!(
            "every scenario failed; first failure: {}",
            failures.first().map_or("none", |f| f.message.as_str())
        )));
    }
    write_metric_rows(&metric_rows, &out.join("metrics.csv"))?;

    let mut static_errors = BTreeMap::new();
    if cfg.experiment.static_scenarios > 0 {
        let dataset = reference_logs(cfg, STATIC_STREAM, cfg.experiment.static_scenarios)?;
        for p in &statics {
            let e = static_prediction_error(&dataset, p.as_ref())?;
            static_errors.insert(p.id().to_string(), e);
        }
    }
    let latency_of: BTreeMap<&str, f64> =
        cfg.predictors.iter().map(|p| (p.id.as_str(), p.declared_latency())).collect();
    let (results, normalization) = aggregate(&metric_rows, &|id| latency_of[id], &static_errors)?;

    let mut ctx = ReportContext::default();
    ctx.lines.push(format!("experiment: {}", cfg.experiment.name));
    ctx.lines.push(format!("planner: {}", cfg.planner.id()));
    ctx.lines.push(format!("budget: {}", cfg.experiment.budget.label()));
    ctx.lines.push(format!("safety: {}", cfg.metrics.safety.label()));
    ctx.lines.push(format!(
        "scenarios per predictor: {} configured, {} kept",
        n,
        n - dropped.len()
    ));
    if !dropped.is_empty() {
        let list: Vec<String> = dropped.iter().map(|i| i.to_string()).collect();
        ctx.lines.push(format!("dropped scenarios: {}", list.join(" ")));
    }
    for (name, b) in [
        ("safety", &normalization.safety),
        ("efficiency", &normalization.efficiency),
        ("comfort", &normalization.comfort),
    ] {
        if b.degenerate {
            ctx.lines.push(format!("{name}: constant across the cohort, scored 1"));
        }
    }
    let correlations = emit_report(&results, out, &ctx)?;
    Ok(ExperimentOutput {
        metric_rows,
        results,
        correlations,
        normalization,
        failures,
        dropped: dropped.into_iter().collect(),
        logs,
    })
}
