mod common;

use common::{empty_log, row, scripted};
use predloop_core::episode::{run_episode, EpisodeLog, TickConfig};
use predloop_core::error::Error;
use predloop_core::metrics::{
    dynamic_prediction_error, mean_jerk, normalize_cohort, safety_rate, avg_speed, DynamicFilter, DynamicMetric,
    MetricRow, SafetyMode,
};
use predloop_core::planner::rvo::{RvoConfig, RvoPlanner};
use predloop_core::predict::NoisyOracle;
use predloop_core::scenario::{generate_scenario, MapTemplate};
use proptest::prelude::*;

#[test]
fn scripted_log_matches_hand_average() {
    // Agent 1 is predicted exactly. For agent 2 the error k frames ahead is
    // 0.05 (k² + k) at every issue tick, so its ADE is
    // 0.05 (Σk² + Σk) / 30 = 0.05 · 9920 / 30 and its FDE 0.05 · 930.
    let log = scripted(25, 0);
    let ade2 = 0.05 * 9920.0 / 30.0;
    let fde2 = 0.05 * 930.0;
    let got = dynamic_prediction_error(&log, DynamicMetric::Ade, DynamicFilter::NONE).unwrap();
    assert!((got - ade2 / 2.0).abs() < 1e-9, "{got}");
    let got = dynamic_prediction_error(&log, DynamicMetric::Fde, DynamicFilter::NONE).unwrap();
    assert!((got - fde2 / 2.0).abs() < 1e-9, "{got}");
    // Single mode: min variants agree.
    let got = dynamic_prediction_error(&log, DynamicMetric::MinAde, DynamicFilter::NONE).unwrap();
    assert!((got - ade2 / 2.0).abs() < 1e-9);

    // Agent 1 (distance >= 20) is always nearer the ego than agent 2
    // (distance >= 30), so closest-1 keeps only exact predictions.
    let got = dynamic_prediction_error(&log, DynamicMetric::Ade, DynamicFilter::closest(1)).unwrap();
    assert_eq!(got, 0.0);
    let got = dynamic_prediction_error(&log, DynamicMetric::Ade, DynamicFilter::closest(2)).unwrap();
    assert!((got - ade2 / 2.0).abs() < 1e-9);
}

#[test]
fn full_observation_filter_drops_young_agents() {
    // Stride 1: a history is complete once 20 frames were seen, so agent 1
    // qualifies from tick 19 and agent 2, appearing at tick 5, from tick 24.
    // Issues 1..=40 leave 22 exact predictions for agent 1 and 17 of
    // agent 2's 35.
    let log = scripted(40, 5);
    let ade2 = 0.05 * 9920.0 / 30.0;
    let got = dynamic_prediction_error(&log, DynamicMetric::Ade, DynamicFilter::full_observation()).unwrap();
    assert!((got - 17.0 * ade2 / 39.0).abs() < 1e-9, "{got}");
    let all = dynamic_prediction_error(&log, DynamicMetric::Ade, DynamicFilter::NONE).unwrap();
    assert!((all - 35.0 * ade2 / 75.0).abs() < 1e-9, "{all}");
}

#[test]
fn too_few_ticks_is_an_error() {
    let log = scripted(19, 0);
    assert!(matches!(
        dynamic_prediction_error(&log, DynamicMetric::Ade, DynamicFilter::NONE),
        Err(Error::InsufficientData { needed: 20, got: 19 })
    ));
}

#[test]
fn single_exo_closest_filter_is_a_no_op() {
    let mut log = scripted(25, 0);
    log.states.retain(|r| r.agent_id != 2);
    log.predictions.retain(|p| p.agent_id != 2);
    let a = dynamic_prediction_error(&log, DynamicMetric::Fde, DynamicFilter::NONE).unwrap();
    let b = dynamic_prediction_error(&log, DynamicMetric::Fde, DynamicFilter::closest(1)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn noiseless_oracle_logs_have_zero_dynamic_error() {
    let sc = generate_scenario(12, MapTemplate::Mixed, 15).unwrap();
    let oracle = NoisyOracle::new("exact", 0.0, 0.001);
    let mut planner = RvoPlanner::new(RvoConfig::default());
    let log = run_episode(&sc, &mut planner, &oracle, &TickConfig::default(), 5).unwrap();
    for m in [DynamicMetric::Ade, DynamicMetric::Fde, DynamicMetric::MinAde, DynamicMetric::MinFde] {
        assert_eq!(dynamic_prediction_error(&log, m, DynamicFilter::NONE).unwrap(), 0.0);
    }
}

/// Ten ticks; the ego drives along y = 0 past a parked car centered at
/// (10, `lateral`).
fn pass_log(lateral: f64) -> EpisodeLog {
    let mut log = empty_log(3, 0.03);
    for t in 0..10u32 {
        log.states.push(row(t, 0, t as f64 * 2.0, 0.0, 0.0, 5.0));
        log.states.push(row(t, 1, 10.0, lateral, 0.0, 0.0));
    }
    log
}

#[test]
fn safety_rate_examples() {
    let mut lonely = empty_log(3, 0.03);
    for t in 0..10 {
        lonely.states.push(row(t, 0, t as f64, 0.0, 0.0, 5.0));
    }
    assert_eq!(safety_rate(&lonely, SafetyMode::Distance { epsilon: 1.0 }), 0.0);

    // Boxes overlap only at tick 3 (ego at x = 9 vs car at 12, length 4.5).
    let mut one = empty_log(3, 0.03);
    for t in 0..10u32 {
        let x = if t == 3 { 9.0 } else { -20.0 };
        one.states.push(row(t, 0, x, 0.0, 0.0, 5.0));
        one.states.push(row(t, 1, 12.0, 0.0, 0.0, 0.0));
    }
    assert_eq!(safety_rate(&one, SafetyMode::BufferedBox { buffer: 0.0 }), 0.1);

    // Grazing pass with a 2.4 m lateral offset: 0.6 m clearance.
    let graze = pass_log(2.4);
    let wide = safety_rate(&graze, SafetyMode::Distance { epsilon: 1.0 });
    let narrow = safety_rate(&graze, SafetyMode::Distance { epsilon: 0.5 });
    assert!(wide >= narrow);
    assert!(wide > 0.0);
    assert_eq!(narrow, 0.0);
}

#[test]
fn speed_and_jerk_from_logs() {
    let mut log = empty_log(3, 0.03);
    for t in 0..100u32 {
        log.states.push(row(t, 0, 0.0, 0.0, 0.0, 6.0 * t as f64 / 99.0));
    }
    assert!((avg_speed(&log).unwrap() - 3.0).abs() < 1e-12);
    assert!(mean_jerk(&log).unwrap().abs() < 1e-6);
}

fn metric_row(safety: f64, efficiency: f64, comfort: f64) -> MetricRow {
    MetricRow {
        scenario_id: 0,
        predictor_id: "p".into(),
        planner_id: "rvo".into(),
        safety_raw: safety,
        efficiency_raw: efficiency,
        comfort_raw: comfort,
        dynamic_ade: 0.0,
        dynamic_fde: 0.0,
        dynamic_min_ade: 0.0,
        dynamic_min_fde: 0.0,
        dynamic_ade_closest: None,
        dynamic_fde_closest: None,
        dynamic_ade_full: None,
        dynamic_fde_full: None,
        fallback_fraction: 0.0,
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

#[test]
fn cohort_best_everywhere_scores_one() {
    let rows = vec![metric_row(0.0, 6.0, 0.1), metric_row(0.2, 3.0, 0.5), metric_row(0.1, 4.0, 0.3)];
    let (scores, spec) = normalize_cohort(&rows).unwrap();
    assert_eq!(scores[0].driving_performance(), 1.0);
    assert_eq!(scores[1].driving_performance(), 0.0);
    assert!(!spec.efficiency.degenerate);
    assert!(normalize_cohort(&rows[..1]).is_err());
}

proptest! {
    #[test]
    fn best_row_survives_affine_rescaling(
        raw in prop::collection::vec((0.0..1.0f64, 0.0..6.0f64, 0.0..20.0f64), 2..12),
        which in 0..3usize, scale in 0.01..100.0f64, shift in -50.0..50.0f64,
    ) {
        let rows: Vec<MetricRow> = raw.iter().map(|r| metric_row(r.0, r.1, r.2)).collect();
        let mut moved = rows.clone();
        for r in &mut moved {
            let f = match which {
                0 => &mut r.safety_raw,
                1 => &mut r.efficiency_raw,
                _ => &mut r.comfort_raw,
            };
            *f = scale * *f + shift;
        }
        let dp = |rows: &[MetricRow]| -> Vec<f64> {
            normalize_cohort(rows).unwrap().0.iter().map(|s| s.driving_performance()).collect()
        };
        let (a, b) = (dp(&rows), dp(&moved));
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-9);
            prop_assert!((0.0..=1.0).contains(x));
        }
        prop_assert!((a[argmax(&a)] - b[argmax(&b)]).abs() < 1e-9);
    }
}
