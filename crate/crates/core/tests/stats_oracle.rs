mod common;

use predloop_core::stats::{linear_fit_stats, pearson};

#[test]
fn constructed_data_has_the_requested_correlation() {
    let (xs, ys) = common::data_with_correlation(20, 0.6);
    assert!((pearson(&xs, &ys).unwrap() - 0.6).abs() < 1e-12);
    let (xs, ys) = common::data_with_correlation(7, -0.25);
    assert!((pearson(&xs, &ys).unwrap() + 0.25).abs() < 1e-12);
}

#[test]
fn p_value_matches_monte_carlo_null() {
    let (xs, ys) = common::data_with_correlation(20, 0.6);
    let rep = linear_fit_stats("x", &xs, &ys).unwrap();
    let (p, se) = common::null_correlation_p(&xs, 0.6, 10_000_000, 2024);
    assert!((rep.p_value - p).abs() <= 3.0 * se, "analytic {} vs simulated {p} ± {se}", rep.p_value);
}

#[test]
fn p_value_matches_monte_carlo_null_small_sample() {
    let (xs, ys) = common::data_with_correlation(5, 0.7);
    let rep = linear_fit_stats("x", &xs, &ys).unwrap();
    let (p, se) = common::null_correlation_p(&xs, 0.7, 2_000_000, 9);
    assert!((rep.p_value - p).abs() <= 3.0 * se, "analytic {} vs simulated {p} ± {se}", rep.p_value);
}
