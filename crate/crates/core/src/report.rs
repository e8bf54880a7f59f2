//! Per-predictor aggregates, correlation tables and plot data.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fmt::fmt9;
use crate::metrics::{MetricRow, NormalizedScores};
use crate::stats::{linear_fit_stats, spearman, CorrelationReport};

/// Aggregates of one predictor over its scenarios.
#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub predictor_id: String,
    pub planner_id: String,
    pub scenarios: usize,
    /// Declared virtual latency per call, seconds.
    pub latency: f64,
    pub static_ade: Option<f64>,
    pub static_fde: Option<f64>,
    pub dynamic_ade: f64,
    pub dynamic_fde: f64,
    pub dynamic_min_ade: f64,
    pub dynamic_min_fde: f64,
    pub dynamic_ade_closest: Option<f64>,
    pub dynamic_fde_closest: Option<f64>,
    pub dynamic_ade_full: Option<f64>,
    pub dynamic_fde_full: Option<f64>,
    /// Normalized scores, higher is better.
    pub safety: f64,
    pub efficiency: f64,
    pub comfort: f64,
    pub driving_performance: f64,
    pub fallback_fraction: f64,
    pub safety_raw: f64,
    pub efficiency_raw: f64,
    pub comfort_raw: f64,
}

pub const RESULT_HEADER: [&str; 22] = [
    "predictor_id",
    "planner_id",
    "scenarios",
    "latency",
    "static_ade",
    "static_fde",
    "dynamic_ade",
    "dynamic_fde",
    "dynamic_min_ade",
    "dynamic_min_fde",
    "dynamic_ade_closest",
    "dynamic_fde_closest",
    "dynamic_ade_full",
    "dynamic_fde_full",
    "safety",
    "efficiency",
    "comfort",
    "driving_performance",
    "fallback_fraction",
    "safety_raw",
    "efficiency_raw",
    "comfort_raw",
];

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

/// Mean of the present values; `None` if any row lacks one.
fn mean_opt(v: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let all: Option<Vec<f64>> = v.collect();
    all.filter(|a| !a.is_empty()).map(|a| mean(a.into_iter()))
}

impl ResultRow {
    /// Aggregates the rows of one predictor. `rows` and `scores` are
    /// parallel and nonempty.
    pub fn aggregate(rows: &[&MetricRow], scores: &[NormalizedScores], latency: f64, statics: Option<(f64, f64)>) -> ResultRow {
        ResultRow {
            predictor_id: rows[0].predictor_id.clone(),
            planner_id: rows[0].planner_id.clone(),
            scenarios: rows.len(),
            latency,
            static_ade: statics.map(|s| s.0),
            static_fde: statics.map(|s| s.1),
            dynamic_ade: mean(rows.iter().map(|r| r.dynamic_ade)),
            dynamic_fde: mean(rows.iter().map(|r| r.dynamic_fde)),
            dynamic_min_ade: mean(rows.iter().map(|r| r.dynamic_min_ade)),
            dynamic_min_fde: mean(rows.iter().map(|r| r.dynamic_min_fde)),
            dynamic_ade_closest: mean_opt(rows.iter().map(|r| r.dynamic_ade_closest)),
            dynamic_fde_closest: mean_opt(rows.iter().map(|r| r.dynamic_fde_closest)),
            dynamic_ade_full: mean_opt(rows.iter().map(|r| r.dynamic_ade_full)),
            dynamic_fde_full: mean_opt(rows.iter().map(|r| r.dynamic_fde_full)),
            safety: mean(scores.iter().map(|s| s.safety)),
            efficiency: mean(scores.iter().map(|s| s.efficiency)),
            comfort: mean(scores.iter().map(|s| s.comfort)),
            driving_performance: mean(scores.iter().map(|s| s.driving_performance())),
            fallback_fraction: mean(rows.iter().map(|r| r.fallback_fraction)),
            safety_raw: mean(rows.iter().map(|r| r.safety_raw)),
            efficiency_raw: mean(rows.iter().map(|r| r.efficiency_raw)),
            comfort_raw: mean(rows.iter().map(|r| r.comfort_raw)),
        }
    }

    /// The x value of a named correlation metric.
    pub fn metric(&self, name: &str) -> Option<f64> {
        match name {
            "latency" => Some(self.latency).filter(|l| l.is_finite()),
            "static_ade" => self.static_ade,
            "static_fde" => self.static_fde,
            "dynamic_ade" => Some(self.dynamic_ade),
            "dynamic_fde" => Some(self.dynamic_fde),
            "dynamic_min_ade" => Some(self.dynamic_min_ade),
            "dynamic_min_fde" => Some(self.dynamic_min_fde),
            "dynamic_ade_closest" => self.dynamic_ade_closest,
            "dynamic_fde_closest" => self.dynamic_fde_closest,
            "dynamic_ade_full" => self.dynamic_ade_full,
            "dynamic_fde_full" => self.dynamic_fde_full,
            _ => None,
        }
    }

    pub fn record(&self) -> Vec<String> {
        let o = |x: Option<f64>| x.map(fmt9).unwrap_or_default();
        vec![
            self.predictor_id.clone(),
            self.planner_id.clone(),
            self.scenarios.to_string(),
            fmt9(self.latency),
            o(self.static_ade),
            o(self.static_fde),
            fmt9(self.dynamic_ade),
            fmt9(self.dynamic_fde),
            fmt9(self.dynamic_min_ade),
            fmt9(self.dynamic_min_fde),
            o(self.dynamic_ade_closest),
            o(self.dynamic_fde_closest),
            o(self.dynamic_ade_full),
            o(self.dynamic_fde_full),
            fmt9(self.safety),
            fmt9(self.efficiency),
            fmt9(self.comfort),
            fmt9(self.driving_performance),
            fmt9(self.fallback_fraction),
            fmt9(self.safety_raw),
            fmt9(self.efficiency_raw),
            fmt9(self.comfort_raw),
        ]
    }
}

/// Metrics correlated against driving performance, in report order.
pub const CORRELATED_METRICS: [&str; 11] = [
    "static_ade",
    "static_fde",
    "dynamic_ade",
    "dynamic_fde",
    "dynamic_min_ade",
    "dynamic_min_fde",
    "dynamic_ade_closest",
    "dynamic_fde_closest",
    "dynamic_ade_full",
    "dynamic_fde_full",
    "latency",
];

/// A correlation of one metric with driving performance over predictors.
#[derive(Clone, Debug, PartialEq)]
pub struct Correlation {
    pub report: CorrelationReport,
    pub spearman: f64,
}

/// Fits driving performance against each metric present for every row.
/// Metrics that are missing or constant are returned as skipped.
pub fn correlate(results: &[ResultRow]) -> (Vec<Correlation>, Vec<(String, String)>) {
    let ys: Vec<f64> = results.iter().map(|r| r.driving_performance).collect();
    let mut out = Vec::new();
    let mut skipped = Vec::new();
    for name in CORRELATED_METRICS {
        let xs: Option<Vec<f64>> = results.iter().map(|r| r.metric(name)).collect();
        let Some(xs) = xs else {
            skipped.push((name.to_string(), "missing for some predictor".to_string()));
            continue;
        };
        match linear_fit_stats(name, &xs, &ys) {
            Ok(report) => out.push(Correlation {
                spearman: spearman(&xs, &ys).unwrap_or(f64::NAN),
                report,
            }),
            Err(e) => skipped.push((name.to_string(), e.to_string())),
        }
    }
    (out, skipped)
}

pub const CORRELATION_HEADER: [&str; 10] = [
    "metric",
    "n",
    "pearson_r",
    "spearman_rho",
    "r_squared",
    "p_value",
    "slope",
    "intercept",
    "residual_std",
    "t_crit",
];

pub const SCATTER_HEADER: [&str; 7] = ["metric", "series", "label", "x", "y", "band_lo", "band_hi"];

/// Samples per fitted line in scatter.csv.
pub const FIT_SAMPLES: usize = 21;

fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::parse(path, e.to_string()))?;
    w.write_record(header).map_err(|e| Error::parse(path, e.to_string()))?;
    for r in rows {
        w.write_record(&r).map_err(|e| Error::parse(path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_results(results: &[ResultRow], path: &Path) -> Result<()> {
    write_csv(path, &RESULT_HEADER, results.iter().map(|r| r.record()))
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::parse(path, format!("{other:?}")),
    })?;
    let header = r.headers().map_err(|e| Error::parse(path, e.to_string()))?.clone();
    if header.iter().ne(RESULT_HEADER.iter().copied()) {
        return Err(Error::parse(path, "not a results file (unexpected header)"));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::parse(path, e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |i: usize| Error::parse(path, format!("line {line}: bad {}", RESULT_HEADER[i]));
        let num = |i: usize| -> Result<f64> { rec.get(i).and_then(|s| s.parse().ok()).ok_or_else(|| bad(i)) };
        let opt = |i: usize| -> Result<Option<f64>> {
            match rec.get(i) {
                Some("") => Ok(None),
                Some(s) => s.parse().map(Some).map_err(|_| bad(i)),
                None => Err(bad(i)),
            }
        };
        out.push(ResultRow {
            predictor_id: rec.get(0).ok_or_else(|| bad(0))?.to_string(),
            planner_id: rec.get(1).ok_or_else(|| bad(1))?.to_string(),
            scenarios: rec.get(2).and_then(|s| s.parse().ok()).ok_or_else(|| bad(2))?,
            latency: num(3)?,
            static_ade: opt(4)?,
            static_fde: opt(5)?,
            dynamic_ade: num(6)?,
            dynamic_fde: num(7)?,
            dynamic_min_ade: num(8)?,
            dynamic_min_fde: num(9)?,
            dynamic_ade_closest: opt(10)?,
            dynamic_fde_closest: opt(11)?,
            dynamic_ade_full: opt(12)?,
            dynamic_fde_full: opt(13)?,
            safety: num(14)?,
            efficiency: num(15)?,
            comfort: num(16)?,
            driving_performance: num(17)?,
            fallback_fraction: num(18)?,
            safety_raw: num(19)?,
            efficiency_raw: num(20)?,
            comfort_raw: num(21)?,
        });
    }
    Ok(out)
}

pub fn correlation_record(c: &Correlation) -> Vec<String> {
    let r = &c.report;
    vec![
        r.metric.clone(),
        r.n.to_string(),
        fmt9(r.pearson_r),
        fmt9(c.spearman),
        fmt9(r.r_squared),
        fmt9(r.p_value),
        fmt9(r.slope),
        fmt9(r.intercept),
        fmt9(r.residual_std),
        fmt9(r.t_crit),
    ]
}

fn scatter_rows(results: &[ResultRow], correlations: &[Correlation]) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for c in correlations {
        let r = &c.report;
        let xs: Vec<f64> = results.iter().filter_map(|row| row.metric(&r.metric)).collect();
        for row in results {
            if let Some(x) = row.metric(&r.metric) {
                rows.push(vec![
                    r.metric.clone(),
                    "point".into(),
                    row.predictor_id.clone(),
                    fmt9(x),
                    fmt9(row.driving_performance),
                    String::new(),
                    String::new(),
                ]);
            }
        }
        let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for i in 0..FIT_SAMPLES {
            let x = lo + (hi - lo) * i as f64 / (FIT_SAMPLES - 1) as f64;
            let (blo, bhi) = r.band(x);
            rows.push(vec![
                r.metric.clone(),
                "fit".into(),
                String::new(),
                fmt9(x),
                fmt9(r.predict(x)),
                fmt9(blo),
                fmt9(bhi),
            ]);
        }
    }
    rows
}

/// Context printed at the top of summary.txt.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReportContext {
    pub lines: Vec<String>,
}

fn opt_cell(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into())
}

pub fn summary_text(
    results: &[ResultRow],
    correlations: &[Correlation],
    skipped: &[(String, String)],
    ctx: &ReportContext,
) -> String {
    let mut s = String::new();
    for l in &ctx.lines {
        let _ = writeln!(s, "{l}");
    }
    if !ctx.lines.is_empty() {
        s.push('\n');
    }
    let _ = writeln!(s, "Prediction accuracy, computation and driving performance");
    let _ = writeln!(
        s,
        "{:<14} {:>9} {:>10} {:>10} {:>10} {:>10} {:>10} {:>8} {:>10} {:>8} {:>8} {:>9}",
        "predictor",
        "latency",
        "static_ade",
        "dyn_ade",
        "dyn_fde",
        "ade_close",
        "ade_full",
        "safety",
        "efficiency",
        "comfort",
        "drive",
        "fallback"
    );
    for r in results {
        let _ = writeln!(
            s,
            "{:<14} {:>9.3} {:>10} {:>10.4} {:>10.4} {:>10} {:>10} {:>8.4} {:>10.4} {:>8.4} {:>8.4} {:>9.4}",
            r.predictor_id,
            r.latency,
            opt_cell(r.static_ade),
            r.dynamic_ade,
            r.dynamic_fde,
            opt_cell(r.dynamic_ade_closest),
            opt_cell(r.dynamic_ade_full),
            r.safety,
            r.efficiency,
            r.comfort,
            r.driving_performance,
            r.fallback_fraction
        );
    }
    s.push('\n');
    let _ = writeln!(s, "Correlation with driving performance (95% band: mean response)");
    let _ = writeln!(
        s,
        "{:<20} {:>3} {:>9} {:>9} {:>8} {:>11} {:>10}",
        "metric", "n", "pearson", "spearman", "R^2", "p", "slope"
    );
    for c in correlations {
        let r = &c.report;
        let _ = writeln!(
            s,
            "{:<20} {:>3} {:>9.4} {:>9.4} {:>8.4} {:>11.3e} {:>10.4}",
            r.metric, r.n, r.pearson_r, c.spearman, r.r_squared, r.p_value, r.slope
        );
    }
    for (m, why) in skipped {
        let _ = writeln!(s, "{m:<20} skipped: {why}");
    }
    s
}

/// Writes results.csv, correlations.csv, scatter.csv and summary.txt.
pub fn emit_report(results: &[ResultRow], out_dir: &Path, ctx: &ReportContext) -> Result<Vec<Correlation>> {
    if results.is_empty() {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let (correlations, skipped) = correlate(results);
    write_results(results, &out_dir.join("results.csv"))?;
    write_csv(
        &out_dir.join("correlations.csv"),
        &CORRELATION_HEADER,
        correlations.iter().map(correlation_record),
    )?;
    write_csv(&out_dir.join("scatter.csv"), &SCATTER_HEADER, scatter_rows(results, &correlations))?;
    let summary = out_dir.join("summary.txt");
    fs::write(&summary, summary_text(results, &correlations, &skipped, ctx)).map_err(|e| Error::io(&summary, e))?;
    Ok(correlations)
}
