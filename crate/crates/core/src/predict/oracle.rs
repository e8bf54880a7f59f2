use rand_distr::{Distribution, StandardNormal};

use super::{PredictionQuery, PredictionSet, Predictor};
use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::rng::rng_for;
use crate::world::T_PRED;

/// The simulator's own future for the agent plus i.i.d. Gaussian noise of
/// `sigma` meters per coordinate. The noise stream is keyed by
/// (episode seed, tick, agent id).
#[derive(Clone, Debug)]
pub struct NoisyOracle {
    pub id: String,
    pub sigma: f64,
    pub latency: f64,
}

impl NoisyOracle {
    pub fn new(id: impl Into<String>, sigma: f64, latency: f64) -> Self {
        Self {
            id: id.into(),
            sigma,
            latency,
        }
    }

    pub fn perturb(&self, future: &[Vec2], episode_seed: u64, tick: u32, agent_id: u32) -> Vec<Vec2> {
        if self.sigma == 0.0 {
            return future.to_vec();
        }
        let mut rng = rng_for(episode_seed, &[0x0AC1E, tick as u64, agent_id as u64]);
        future
            .iter()
            .map(|p| {
                let nx: f64 = StandardNormal.sample(&mut rng);
                let ny: f64 = StandardNormal.sample(&mut rng);
                *p + Vec2::new(nx, ny) * self.sigma
            })
            .collect()
    }
}

impl Predictor for NoisyOracle {
    fn id(&self) -> &str {
        &self.id
    }
    fn latency(&self) -> f64 {
        self.latency
    }
    fn needs_future(&self) -> bool {
        true
    }
    fn predict(&self, q: &PredictionQuery<'_>) -> Result<PredictionSet> {
        let future = q.future.ok_or(Error::Config(
            "noisy oracle called without the simulated future".into(),
        ))?;
        if future.len() != T_PRED {
            return Err(Error::LengthMismatch {
                pred: T_PRED,
                truth: future.len(),
            });
        }
        Ok(PredictionSet::single(
            self.perturb(future, q.episode_seed, q.tick, q.agent_id),
            self.latency,
        ))
    }
}
