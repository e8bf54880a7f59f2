//! Prediction-accuracy and driving-performance metrics.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::episode::{row_state, EpisodeLog, PredictionRecord};
use crate::error::{Error, Result};
use crate::fmt::fmt9;
use crate::geometry::{obb_distance, obb_intersect, Vec2};
use crate::predict::{PredictionQuery, Predictor};
use crate::world::{History, HistoryFrame, T_OBS, T_PRED};

/// Minimum number of distinct issue ticks for a dynamic metric.
pub const MIN_DYNAMIC_TICKS: usize = 20;

fn check_lengths(pred: &[Vec2], truth: &[Vec2]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::LengthMismatch {
            pred: pred.len(),
            truth: truth.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::EmptyTrajectory);
    }
    Ok(())
}

pub fn ade(pred: &[Vec2], truth: &[Vec2]) -> Result<f64> {
    check_lengths(pred, truth)?;
    let sum: f64 = pred.iter().zip(truth).map(|(p, t)| p.distance(*t)).sum();
    Ok(sum / pred.len() as f64)
}

pub fn fde(pred: &[Vec2], truth: &[Vec2]) -> Result<f64> {
    check_lengths(pred, truth)?;
    Ok(pred[pred.len() - 1].distance(truth[truth.len() - 1]))
}

fn min_over(modes: &[Vec<Vec2>], truth: &[Vec2], f: fn(&[Vec2], &[Vec2]) -> Result<f64>) -> Result<f64> {
    let mut best = f64::INFINITY;
    for m in modes {
        best = best.min(f(m, truth)?);
    }
    if modes.is_empty() {
        return Err(Error::EmptyTrajectory);
    }
    Ok(best)
}

pub fn min_ade(modes: &[Vec<Vec2>], truth: &[Vec2]) -> Result<f64> {
    min_over(modes, truth, ade)
}

pub fn min_fde(modes: &[Vec<Vec2>], truth: &[Vec2]) -> Result<f64> {
    min_over(modes, truth, fde)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DynamicMetric {
    Ade,
    Fde,
    MinAde,
    MinFde,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DynamicFilter {
    /// Keep only predictions for the `k` exo-agents nearest the ego at
    /// issue time.
    pub closest_k: Option<usize>,
    /// Keep only agents with a fully observed history at issue time.
    pub full_observation_only: bool,
}

impl DynamicFilter {
    pub const NONE: DynamicFilter = DynamicFilter {
        closest_k: None,
        full_observation_only: false,
    };

    pub fn closest(k: usize) -> DynamicFilter {
        DynamicFilter {
            closest_k: Some(k),
            full_observation_only: false,
        }
    }

    pub fn full_observation() -> DynamicFilter {
        DynamicFilter {
            closest_k: None,
            full_observation_only: true,
        }
    }
}

/// Average of `metric` over every logged prediction whose subject is
/// present for the whole prediction horizon and passes `filter`, scored
/// against the subject's realised positions in the log.
///
/// ADE and FDE score the first mode; the min variants score all modes.
pub fn dynamic_prediction_error(log: &EpisodeLog, metric: DynamicMetric, filter: DynamicFilter) -> Result<f64> {
    let stride = log.stride.max(1);
    let frames = log.frames();
    let first_seen = log.first_seen();
    let nearest = filter.closest_k.map(|k| nearest_by_tick(log, k));

    let mut sum = 0.0;
    let mut count = 0usize;
    let mut ticks = std::collections::BTreeSet::new();
    for rec in &log.predictions {
        if rec.modes.is_empty() {
            continue;
        }
        let f0 = (rec.issue_tick / stride) as usize;
        let truth: Option<Vec<Vec2>> = (1..=T_PRED)
            .map(|k| frames.get(f0 + k, rec.agent_id as usize).map(|f| f.pos))
            .collect();
        let Some(truth) = truth else { continue };
        if filter.full_observation_only {
            let seen = first_seen.get(&rec.agent_id).copied().unwrap_or(u32::MAX);
            if seen > rec.issue_tick || ((rec.issue_tick - seen) / stride) as usize + 1 < T_OBS {
                continue;
            }
        }
        if let Some(nearest) = &nearest {
            if !nearest.get(&rec.issue_tick).is_some_and(|ids| ids.contains(&rec.agent_id)) {
                continue;
            }
        }
        let e = match metric {
            DynamicMetric::Ade => ade(&rec.modes[0], &truth)?,
            DynamicMetric::Fde => fde(&rec.modes[0], &truth)?,
            DynamicMetric::MinAde => min_ade(&rec.modes, &truth)?,
            DynamicMetric::MinFde => min_fde(&rec.modes, &truth)?,
        };
        sum += e;
        count += 1;
        ticks.insert(rec.issue_tick);
    }
    if ticks.len() < MIN_DYNAMIC_TICKS {
        return Err(Error::InsufficientData {
            needed: MIN_DYNAMIC_TICKS,
            got: ticks.len(),
        });
    }
    Ok(sum / count as f64)
}

/// Ids of the `k` exo-agents nearest the ego at each logged tick, ties by id.
fn nearest_by_tick(log: &EpisodeLog, k: usize) -> BTreeMap<u32, Vec<u32>> {
    let mut out = BTreeMap::new();
    for rows in log.by_tick() {
        let Some(ego) = rows.iter().find(|r| r.agent_id == 0) else {
            continue;
        };
        let mut d: Vec<(f64, u32)> = rows
            .iter()
            .filter(|r| r.agent_id != 0)
            .map(|r| (r.position().distance(ego.position()), r.agent_id))
            .collect();
        d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        out.insert(ego.tick, d.into_iter().take(k).map(|(_, id)| id).collect());
    }
    out
}

/// Open-loop predictions of `predictor` over a recorded log: one per
/// prediction frame and agent whose history is fully observed and whose
/// future stays in the log. Oracles see the recorded future.
pub fn repredict(log: &EpisodeLog, predictor: &dyn Predictor, episode_seed: u64) -> Result<Vec<PredictionRecord>> {
    let stride = log.stride.max(1);
    let frame_dt = log.dt * stride as f64;
    let frames = log.frames();
    let mut out = Vec::new();
    for f0 in T_OBS - 1..frames.frame_count().saturating_sub(T_PRED) {
        for agent in 1..frames.agent_count() {
            let hist: Option<Vec<HistoryFrame>> = (f0 + 1 - T_OBS..=f0).map(|f| frames.get(f, agent)).collect();
            let future: Option<Vec<Vec2>> = (f0 + 1..=f0 + T_PRED).map(|f| frames.get(f, agent).map(|h| h.pos)).collect();
            let (Some(hist), Some(future)) = (hist, future) else { continue };
            let history = History::from_frames(agent as u32, hist);
            let neighbors = frames.positions_at(f0, agent);
            let tick = f0 as u32 * stride;
            let q = PredictionQuery {
                agent_id: agent as u32,
                history: &history,
                neighbors: &neighbors,
                frame_dt,
                tick,
                episode_seed,
                future: Some(&future),
            };
            let set = predictor.predict(&q)?;
            out.push(PredictionRecord {
                issue_tick: tick,
                agent_id: agent as u32,
                modes: set.modes,
            });
        }
    }
    Ok(out)
}

/// Static ADE and FDE (first mode) of `predictor`, pooled over every
/// qualifying prediction in a fixed set of recorded logs.
pub fn static_prediction_error(logs: &[(EpisodeLog, u64)], predictor: &dyn Predictor) -> Result<(f64, f64)> {
    let mut sum_ade = 0.0;
    let mut sum_fde = 0.0;
    let mut n = 0usize;
    for (log, seed) in logs {
        let frames = log.frames();
        let stride = log.stride.max(1);
        for rec in repredict(log, predictor, *seed)? {
            let f0 = (rec.issue_tick / stride) as usize;
            let truth: Vec<Vec2> = (1..=T_PRED)
                .map(|k| frames.get(f0 + k, rec.agent_id as usize).expect("future checked").pos)
                .collect();
            sum_ade += ade(&rec.modes[0], &truth)?;
            sum_fde += fde(&rec.modes[0], &truth)?;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    Ok((sum_ade / n as f64, sum_fde / n as f64))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SafetyMode {
    /// A tick is unsafe when the ego's box comes within `epsilon` meters
    /// of any exo-agent's box.
    Distance { epsilon: f64 },
    /// A tick is unsafe when the boxes, lengthened by `buffer`, overlap.
    BufferedBox { buffer: f64 },
}

impl Default for SafetyMode {
    fn default() -> Self {
        SafetyMode::Distance { epsilon: 1.0 }
    }
}

impl SafetyMode {
    pub fn label(&self) -> String {
        match self {
            SafetyMode::Distance { epsilon } => format!("distance(epsilon={epsilon})"),
            SafetyMode::BufferedBox { buffer } => format!("buffered_box(buffer={buffer})"),
        }
    }
}

/// Fraction of logged ticks on which the ego violates `mode` against any
/// exo-agent.
pub fn safety_rate(log: &EpisodeLog, mode: SafetyMode) -> f64 {
    let ticks = log.by_tick();
    if ticks.is_empty() {
        return 0.0;
    }
    let unsafe_ticks = ticks
        .iter()
        .filter(|rows| {
            let Some(ego) = rows.iter().find(|r| r.agent_id == 0) else {
                return false;
            };
            let ego_box = row_state(ego).bounding_box();
            rows.iter().filter(|r| r.agent_id != 0).any(|r| {
                let b = row_state(r).bounding_box();
                match mode {
                    SafetyMode::Distance { epsilon } => obb_distance(&ego_box, &b) < epsilon,
                    SafetyMode::BufferedBox { buffer } => {
                        obb_intersect(&ego_box.with_buffer(buffer), &b.with_buffer(buffer))
                    }
                }
            })
        })
        .count();
    unsafe_ticks as f64 / ticks.len() as f64
}

pub fn mean_speed(speeds: &[f64]) -> Result<f64> {
    if speeds.is_empty() {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    Ok(speeds.iter().sum::<f64>() / speeds.len() as f64)
}

/// Mean ego speed over all logged ticks.
pub fn avg_speed(log: &EpisodeLog) -> Result<f64> {
    mean_speed(&log.ego_speeds())
}

/// Mean absolute jerk of a speed profile sampled every `dt` seconds.
pub fn mean_abs_jerk(speeds: &[f64], dt: f64) -> Result<f64> {
    if speeds.len() < 3 {
        return Err(Error::TooFewSamples {
            needed: 3,
            got: speeds.len(),
        });
    }
    let acc: Vec<f64> = speeds.windows(2).map(|w| (w[1] - w[0]) / dt).collect();
    let sum: f64 = acc.windows(2).map(|w| ((w[1] - w[0]) / dt).abs()).sum();
    Ok(sum / (acc.len() - 1) as f64)
}

pub fn mean_jerk(log: &EpisodeLog) -> Result<f64> {
    mean_abs_jerk(&log.ego_speeds(), log.dt)
}

/// Raw per-episode metrics of one (predictor, scenario) run.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub scenario_id: usize,
    pub predictor_id: String,
    pub planner_id: String,
    /// Fraction of unsafe ticks.
    pub safety_raw: f64,
    /// Mean ego speed, m/s.
    pub efficiency_raw: f64,
    /// Mean |jerk|, m/s³.
    pub comfort_raw: f64,
    pub dynamic_ade: f64,
    pub dynamic_fde: f64,
    pub dynamic_min_ade: f64,
    pub dynamic_min_fde: f64,
    /// Closest-agent variants; `None` when too few ticks qualify.
    pub dynamic_ade_closest: Option<f64>,
    pub dynamic_fde_closest: Option<f64>,
    /// Fully observed history variants.
    pub dynamic_ade_full: Option<f64>,
    pub dynamic_fde_full: Option<f64>,
    /// Fraction of decisions that fell back.
    pub fallback_fraction: f64,
}

pub const METRIC_HEADER: [&str; 15] = [
    "scenario_id",
    "predictor_id",
    "planner_id",
    "safety_raw",
    "efficiency_raw",
    "comfort_raw",
    "dynamic_ade",
    "dynamic_fde",
    "dynamic_min_ade",
    "dynamic_min_fde",
    "dynamic_ade_closest",
    "dynamic_fde_closest",
    "dynamic_ade_full",
    "dynamic_fde_full",
    "fallback_fraction",
];

pub const DEFAULT_CLOSEST_K: usize = 3;

/// The `[metrics]` section of an experiment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub safety: SafetyMode,
    /// Agent count for the closest-agent dynamic variants.
    pub closest_k: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            safety: SafetyMode::default(),
            closest_k: DEFAULT_CLOSEST_K,
        }
    }
}

fn opt9(x: Option<f64>) -> String {
    x.map(fmt9).unwrap_or_default()
}

impl MetricRow {
    /// Scores one episode.
    pub fn from_log(
        scenario_id: usize,
        predictor_id: &str,
        planner_id: &str,
        log: &EpisodeLog,
        cfg: &MetricsConfig,
    ) -> Result<MetricRow> {
        let dynamic = |m, f| dynamic_prediction_error(log, m, f);
        let filtered = |m, f| match dynamic_prediction_error(log, m, f) {
            Ok(v) => Ok(Some(v)),
            Err(Error::InsufficientData { .. }) => Ok(None),
            Err(e) => Err(e),
        };
        let closest = DynamicFilter::closest(cfg.closest_k);
        let full = DynamicFilter::full_observation();
        let fallbacks = log.decisions.iter().filter(|d| d.fallback).count();
        Ok(MetricRow {
            scenario_id,
            predictor_id: predictor_id.to_string(),
            planner_id: planner_id.to_string(),
            safety_raw: safety_rate(log, cfg.safety),
            efficiency_raw: avg_speed(log)?,
            comfort_raw: mean_jerk(log)?,
            dynamic_ade: dynamic(DynamicMetric::Ade, DynamicFilter::NONE)?,
            dynamic_fde: dynamic(DynamicMetric::Fde, DynamicFilter::NONE)?,
            dynamic_min_ade: dynamic(DynamicMetric::MinAde, DynamicFilter::NONE)?,
            dynamic_min_fde: dynamic(DynamicMetric::MinFde, DynamicFilter::NONE)?,
            dynamic_ade_closest: filtered(DynamicMetric::Ade, closest)?,
            dynamic_fde_closest: filtered(DynamicMetric::Fde, closest)?,
            dynamic_ade_full: filtered(DynamicMetric::Ade, full)?,
            dynamic_fde_full: filtered(DynamicMetric::Fde, full)?,
            fallback_fraction: if log.decisions.is_empty() {
                0.0
            } else {
                fallbacks as f64 / log.decisions.len() as f64
            },
        })
    }

    pub fn record(&self) -> Vec<String> {
        vec![
            self.scenario_id.to_string(),
            self.predictor_id.clone(),
            self.planner_id.clone(),
            fmt9(self.safety_raw),
            fmt9(self.efficiency_raw),
            fmt9(self.comfort_raw),
            fmt9(self.dynamic_ade),
            fmt9(self.dynamic_fde),
            fmt9(self.dynamic_min_ade),
            fmt9(self.dynamic_min_fde),
            opt9(self.dynamic_ade_closest),
            opt9(self.dynamic_fde_closest),
            opt9(self.dynamic_ade_full),
            opt9(self.dynamic_fde_full),
            fmt9(self.fallback_fraction),
        ]
    }

    fn from_record(rec: &csv::StringRecord, path: &Path) -> Result<MetricRow> {
        let bad = |what: &str| Error::parse(path, format!("bad {what} in row {:?}", rec.position().map(|p| p.line())));
        let num = |i: usize| -> Result<f64> { rec.get(i).and_then(|s| s.parse().ok()).ok_or_else(|| bad(METRIC_HEADER[i])) };
        let opt = |i: usize| -> Result<Option<f64>> {
            match rec.get(i) {
                Some("") => Ok(None),
                Some(s) => s.parse().map(Some).map_err(|_| bad(METRIC_HEADER[i])),
                None => Err(bad(METRIC_HEADER[i])),
            }
        };
        Ok(MetricRow {
            scenario_id: rec.get(0).and_then(|s| s.parse().ok()).ok_or_else(|| bad("scenario_id"))?,
            predictor_id: rec.get(1).ok_or_else(|| bad("predictor_id"))?.to_string(),
            planner_id: rec.get(2).ok_or_else(|| bad("planner_id"))?.to_string(),
            safety_raw: num(3)?,
            efficiency_raw: num(4)?,
            comfort_raw: num(5)?,
            dynamic_ade: num(6)?,
            dynamic_fde: num(7)?,
            dynamic_min_ade: num(8)?,
            dynamic_min_fde: num(9)?,
            dynamic_ade_closest: opt(10)?,
            dynamic_fde_closest: opt(11)?,
            dynamic_ade_full: opt(12)?,
            dynamic_fde_full: opt(13)?,
            fallback_fraction: num(14)?,
        })
    }
}

pub fn write_metric_rows(rows: &[MetricRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    w.write_record(METRIC_HEADER)?;
    for r in rows {
        w.write_record(r.record())?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_metric_rows(path: &Path) -> Result<Vec<MetricRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers()?.clone();
    if header.iter().ne(METRIC_HEADER.iter().copied()) {
        return Err(Error::parse(path, "unexpected metric header"));
    }
    r.records()
        .map(|rec| MetricRow::from_record(&rec?, path))
        .collect()
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::parse(path, format!("{other:?}")),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    HigherBetter,
    LowerBetter,
}

/// Min-max bounds of one raw metric over a cohort.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricBounds {
    pub min: f64,
    pub max: f64,
    pub direction: Direction,
    /// `max == min`; every row scores 1.
    pub degenerate: bool,
}

impl MetricBounds {
    pub fn of(values: &[f64], direction: Direction) -> MetricBounds {
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        MetricBounds {
            min,
            max,
            direction,
            degenerate: !(max > min),
        }
    }

    /// Maps `p` into [0, 1], 1 being best.
    pub fn normalize(&self, p: f64) -> f64 {
        if self.degenerate {
            return 1.0;
        }
        let t = ((p - self.min) / (self.max - self.min)).clamp(0.0, 1.0);
        match self.direction {
            Direction::HigherBetter => t,
            Direction::LowerBetter => 1.0 - t,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormalizationSpec {
    pub safety: MetricBounds,
    pub efficiency: MetricBounds,
    pub comfort: MetricBounds,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormalizedScores {
    pub safety: f64,
    pub efficiency: f64,
    pub comfort: f64,
}

impl NormalizedScores {
    pub fn driving_performance(&self) -> f64 {
        driving_performance(self.safety, self.efficiency, self.comfort)
    }
}

pub fn driving_performance(safety: f64, efficiency: f64, comfort: f64) -> f64 {
    (safety + efficiency + comfort) / 3.0
}

/// Min-max normalizes safety, efficiency and comfort over `rows`.
pub fn normalize_cohort(rows: &[MetricRow]) -> Result<(Vec<NormalizedScores>, NormalizationSpec)> {
    if rows.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: rows.len(),
        });
    }
    let col = |f: fn(&MetricRow) -> f64| rows.iter().map(f).collect::<Vec<f64>>();
    let spec = NormalizationSpec {
        safety: MetricBounds::of(&col(|r| r.safety_raw), Direction::LowerBetter),
        efficiency: MetricBounds::of(&col(|r| r.efficiency_raw), Direction::HigherBetter),
        comfort: MetricBounds::of(&col(|r| r.comfort_raw), Direction::LowerBetter),
    };
    let scores = rows
        .iter()
        .map(|r| NormalizedScores {
            safety: spec.safety.normalize(r.safety_raw),
            efficiency: spec.efficiency.normalize(r.efficiency_raw),
            comfort: spec.comfort.normalize(r.comfort_raw),
        })
        .collect();
    Ok((scores, spec))
}
