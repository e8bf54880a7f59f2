//! Helpers shared by integration test targets.
#![allow(dead_code)]

use predloop_core::episode::{EpisodeLog, PredictionRecord, StateRow};
use predloop_core::geometry::Vec2;
use predloop_core::kinematics::AgentKind;
use predloop_core::rng::rng_for;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

/// x = 1..=n and y with sample correlation exactly `r`: y is r times the
/// standardized x plus sqrt(1 - r²) times a unit vector orthogonal to x
/// and to the constant vector.
pub fn data_with_correlation(n: usize, r: f64) -> (Vec<f64>, Vec<f64>) {
    let xs: Vec<f64> = (1..=n).map(|i| i as f64).collect();
    let unit = |v: Vec<f64>| -> Vec<f64> {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let c: Vec<f64> = v.iter().map(|x| x - m).collect();
        let norm = c.iter().map(|x| x * x).sum::<f64>().sqrt();
        c.iter().map(|x| x / norm).collect()
    };
    let ux = unit(xs.clone());
    // Any vector not in span{1, x} will do.
    let w: Vec<f64> = (0..n).map(|i| ((i * 7 + 3) % 11) as f64).collect();
    let proj: f64 = w.iter().zip(&ux).map(|(a, b)| a * b).sum();
    let uw = unit(w.iter().zip(&ux).map(|(a, b)| a - proj * b).collect());
    let ys = ux.iter().zip(&uw).map(|(a, b)| r * a + (1.0 - r * r).sqrt() * b).collect();
    (xs, ys)
}

/// Monte-Carlo two-sided p-value of a sample correlation `r` over n
/// points: the fraction of `draws` null samples (x fixed, y i.i.d.
/// standard normal) whose |r| reaches |r|. Returns (p, standard error).
pub fn null_correlation_p(xs: &[f64], r: f64, draws: u64, seed: u64) -> (f64, f64) {
    let n = xs.len();
    let mx = xs.iter().sum::<f64>() / n as f64;
    let dx: Vec<f64> = xs.iter().map(|x| x - mx).collect();
    let sxx: f64 = dx.iter().map(|d| d * d).sum();
    let chunks = 200u64;
    let per = draws / chunks;
    let target = r.abs();
    let hits: u64 = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = rng_for(seed, &[c]);
            let mut y = vec![0.0f64; n];
            let mut hits = 0u64;
            for _ in 0..per {
                for v in y.iter_mut() {
                    *v = StandardNormal.sample(&mut rng);
                }
                let my = y.iter().sum::<f64>() / n as f64;
                let mut syy = 0.0;
                let mut sxy = 0.0;
                for (d, v) in dx.iter().zip(&y) {
                    let e = v - my;
                    syy += e * e;
                    sxy += d * e;
                }
                if (sxy / (sxx * syy).sqrt()).abs() >= target {
                    hits += 1;
                }
            }
            hits
        })
        .sum();
    let total = (per * chunks) as f64;
    let p = hits as f64 / total;
    (p, (p * (1.0 - p) / total).sqrt())
}

pub fn row(tick: u32, agent_id: u32, x: f64, y: f64, heading: f64, speed: f64) -> StateRow {
    StateRow {
        tick,
        agent_id,
        kind: if agent_id == 0 { AgentKind::Ego } else { AgentKind::Vehicle },
        x,
        y,
        heading,
        speed,
    }
}

pub fn empty_log(stride: u32, dt: f64) -> EpisodeLog {
    EpisodeLog {
        stride,
        dt,
        states: Vec::new(),
        decisions: Vec::new(),
        predictions: Vec::new(),
        collisions: Vec::new(),
    }
}

/// Ego parked at the origin. Agent 1 moves one meter per frame along
/// y = 20; agent 2 accelerates along x = -30 with y = 0.05 t², and first
/// appears at `late_start`. Predictions at ticks 1..=issues are constant
/// velocity from the last observed displacement.
pub fn scripted(issues: u32, late_start: u32) -> EpisodeLog {
    let mut log = empty_log(1, 0.09);
    let a1 = |t: u32| Vec2::new(t as f64, 20.0);
    let a2 = |t: u32| Vec2::new(-30.0, 0.05 * (t as f64).powi(2));
    let last = issues + 30;
    for t in 0..=last {
        log.states.push(row(t, 0, 0.0, 0.0, 0.0, 0.0));
        let p = a1(t);
        log.states.push(row(t, 1, p.x, p.y, 0.0, 1.0 / 0.09));
        if t >= late_start {
            let p = a2(t);
            log.states.push(row(t, 2, p.x, p.y, std::f64::consts::FRAC_PI_2, 0.0));
        }
    }
    for tau in 1..=issues {
        for (id, f) in [(1u32, &a1 as &dyn Fn(u32) -> Vec2), (2, &a2)] {
            if id == 2 && tau < late_start + 1 {
                continue;
            }
            let d = f(tau) - f(tau - 1);
            let mode = (1..=30).map(|k| f(tau) + d * k as f64).collect();
            log.predictions.push(PredictionRecord {
                issue_tick: tau,
                agent_id: id,
                modes: vec![mode],
            });
        }
    }
    log
}

