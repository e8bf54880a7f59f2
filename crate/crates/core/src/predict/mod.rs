//! Trajectory predictors.

mod knn;
mod oracle;

pub use knn::{
    agent_frame_feature, build_database, neighbor_feature, DbEntry, KnnPredictor,
    TrajectoryDatabase, FEATURE_LEN, FUTURE_LEN, NEIGHBOR_LEN,
};
pub use oracle::NoisyOracle;

use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::world::{History, T_PRED};

/// Declared virtual latency of the constant-velocity and
/// constant-acceleration predictors, seconds.
pub const KINEMATIC_LATENCY: f64 = 0.001;
pub const KNN_LATENCY: f64 = 0.224;
pub const SKNN_LATENCY: f64 = 0.248;
pub const MAX_MODES: usize = 6;

/// K future trajectories, each [`T_PRED`] positions at frame spacing,
/// highest-weight mode first.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionSet {
    pub modes: Vec<Vec<Vec2>>,
    pub weights: Vec<f64>,
    pub virtual_latency: f64,
    /// Set when fewer modes than requested were available.
    pub k_clamped: bool,
}

impl PredictionSet {
    pub fn single(mode: Vec<Vec2>, virtual_latency: f64) -> Self {
        Self {
            modes: vec![mode],
            weights: vec![1.0],
            virtual_latency,
            k_clamped: false,
        }
    }

    pub fn best_mode(&self) -> &[Vec2] {
        &self.modes[0]
    }

    pub fn check(&self) -> bool {
        let k = self.modes.len();
        (1..=MAX_MODES).contains(&k)
            && self.weights.len() == k
            && self.modes.iter().all(|m| m.len() == T_PRED)
            && self.weights.iter().all(|&w| w >= 0.0)
            && (self.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9
    }
}

/// Everything a predictor may look at for one agent.
#[derive(Clone, Copy, Debug)]
pub struct PredictionQuery<'a> {
    pub agent_id: u32,
    pub history: &'a History,
    /// Positions of the other agents at the last history frame.
    pub neighbors: &'a [Vec2],
    pub frame_dt: f64,
    pub tick: u32,
    pub episode_seed: u64,
    /// The simulator's own continuation of this agent, for oracles.
    pub future: Option<&'a [Vec2]>,
}

pub trait Predictor: Send + Sync {
    fn id(&self) -> &str;

    /// Declared cost of one call, seconds of virtual time.
    fn latency(&self) -> f64;

    /// Whether `predict` needs [`PredictionQuery::future`].
    fn needs_future(&self) -> bool {
        false
    }

    fn predict(&self, q: &PredictionQuery<'_>) -> Result<PredictionSet>;
}

/// Repeats the last observed displacement.
#[derive(Clone, Debug)]
pub struct ConstantVelocity {
    pub id: String,
    pub latency: f64,
}

impl Default for ConstantVelocity {
    fn default() -> Self {
        Self {
            id: "cv".into(),
            latency: KINEMATIC_LATENCY,
        }
    }
}

pub fn predict_cv(history: &History, latency: f64) -> Result<PredictionSet> {
    let f = &history.frames;
    if f.len() < 2 {
        return Err(Error::InsufficientHistory {
            needed: 2,
            got: f.len(),
        });
    }
    let last = f[f.len() - 1].pos;
    let d = last - f[f.len() - 2].pos;
    let mut p = last;
    let mode = (0..T_PRED)
        .map(|_| {
            p += d;
            p
        })
        .collect();
    Ok(PredictionSet::single(mode, latency))
}

impl Predictor for ConstantVelocity {
    fn id(&self) -> &str {
        &self.id
    }
    fn latency(&self) -> f64 {
        self.latency
    }
    fn predict(&self, q: &PredictionQuery<'_>) -> Result<PredictionSet> {
        predict_cv(q.history, self.latency)
    }
}

/// Extrapolates the last change in per-frame speed along the last
/// displacement direction. Speed is floored at zero, after which the
/// agent stays put.
#[derive(Clone, Debug)]
pub struct ConstantAcceleration {
    pub id: String,
    pub latency: f64,
}

impl Default for ConstantAcceleration {
    fn default() -> Self {
        Self {
            id: "ca".into(),
            latency: KINEMATIC_LATENCY,
        }
    }
}

pub fn predict_ca(history: &History, latency: f64) -> Result<PredictionSet> {
    let f = &history.frames;
    let n = f.len();
    if n < 3 {
        return Err(Error::InsufficientHistory { needed: 3, got: n });
    }
    let last = f[n - 1].pos;
    let d = last - f[n - 2].pos;
    let s_prev = (f[n - 2].pos - f[n - 3].pos).norm();
    let s = d.norm();
    let a = s - s_prev;
    let mut p = last;
    let mut mode = Vec::with_capacity(T_PRED);
    for k in 1..=T_PRED {
        if s > 0.0 {
            let sk = (s + a * k as f64).max(0.0);
            p += d * (sk / s);
        }
        mode.push(p);
    }
    Ok(PredictionSet::single(mode, latency))
}

impl Predictor for ConstantAcceleration {
    fn id(&self) -> &str {
        &self.id
    }
    fn latency(&self) -> f64 {
        self.latency
    }
    fn predict(&self, q: &PredictionQuery<'_>) -> Result<PredictionSet> {
        predict_ca(q.history, self.latency)
    }
}

#[cfg(test)]
pub(crate) fn history_of(points: &[(f64, f64)]) -> History {
    use crate::world::HistoryFrame;
    let frames: Vec<HistoryFrame> = points
        .iter()
        .enumerate()
        .map(|(i, &(x, y))| {
            let heading = if i > 0 {
                (Vec2::new(x, y) - Vec2::new(points[i - 1].0, points[i - 1].1)).angle()
            } else {
                0.0
            };
            HistoryFrame {
                pos: Vec2::new(x, y),
                heading,
            }
        })
        .collect();
    History::from_frames(1, frames)
}
