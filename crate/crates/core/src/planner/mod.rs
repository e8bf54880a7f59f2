//! Planner interface and the per-decision context planners see.

pub mod despot;
pub mod rvo;

use crate::budget::Budget;
use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::predict::{predict_cv, PredictionQuery, PredictionSet, Predictor};
use crate::scenario::Scenario;
use crate::world::{SimConfig, World, T_PRED};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Decision {
    /// Longitudinal acceleration, m/s².
    pub accel: f64,
    /// The planner could not afford its normal computation.
    pub fallback: bool,
}

pub trait Planner: Send {
    fn id(&self) -> &str;

    /// Called once before the first decision of an episode.
    fn reset(&mut self, scenario: &Scenario, world: &World);

    fn decide(&mut self, ctx: &mut PlanContext<'_>) -> Result<Decision>;

    /// Frames of true future an oracle predictor must be able to see for
    /// this planner's use of predictions.
    fn oracle_frames(&self) -> usize;
}

/// Positions of every agent for the next [`T_PRED`] frames, indexed by
/// agent id, from a copy of the world rolled forward with the ego holding
/// its latched command. Only the first `frames` frames are simulated; the
/// rest continue each agent at its last simulated frame-to-frame
/// displacement.
pub fn simulate_future(world: &World, scenario: &Scenario, sim: &SimConfig, frames: usize) -> Result<Vec<Vec<Vec2>>> {
    let n_agents = world.histories.len();
    let mut out: Vec<Vec<Vec2>> = vec![Vec::with_capacity(T_PRED); n_agents];
    let mut fork = world.clone();
    let mut before_last = Vec::new();
    let frames = frames.clamp(1, T_PRED);
    for f in 0..frames {
        if f + 1 == frames {
            before_last = positions(&fork);
        }
        for _ in 0..sim.stride {
            fork.step(&scenario.ego_path, sim)?;
        }
        for (id, p) in positions(&fork).into_iter().enumerate() {
            out[id].push(p);
        }
    }
    for (id, traj) in out.iter_mut().enumerate() {
        let last = *traj.last().unwrap();
        let d = last - before_last[id];
        let mut p = last;
        while traj.len() < T_PRED {
            p += d;
            traj.push(p);
        }
    }
    Ok(out)
}

fn positions(world: &World) -> Vec<Vec2> {
    let mut v = vec![world.ego.position()];
    v.extend(world.exo.iter().map(|e| e.state.position()));
    v
}

/// What a planner sees for one decision.
pub struct PlanContext<'a> {
    pub world: &'a World,
    pub scenario: &'a Scenario,
    pub sim: &'a SimConfig,
    pub predictor: &'a dyn Predictor,
    pub budget: Budget,
    pub episode_seed: u64,
    oracle_frames: usize,
    future: Option<Vec<Vec<Vec2>>>,
}

impl<'a> PlanContext<'a> {
    pub fn new(
        world: &'a World,
        scenario: &'a Scenario,
        sim: &'a SimConfig,
        predictor: &'a dyn Predictor,
        budget: Budget,
        episode_seed: u64,
        oracle_frames: usize,
    ) -> Self {
        Self {
            world,
            scenario,
            sim,
            predictor,
            budget,
            episode_seed,
            oracle_frames,
            future: None,
        }
    }

    /// Current positions of every active agent other than `agent_id`.
    pub fn neighbors_of(&self, agent_id: u32) -> Vec<Vec2> {
        neighbor_positions(self.world, agent_id)
    }

    /// Calls the predictor for one agent. Budget is charged by the caller.
    ///
    /// An agent whose history is too short for the predictor is
    /// extrapolated at constant velocity instead.
    pub fn predict(&mut self, agent_id: u32) -> Result<PredictionSet> {
        if self.predictor.needs_future() && self.future.is_none() {
            self.future = Some(simulate_future(self.world, self.scenario, self.sim, self.oracle_frames)?);
        }
        let history = self.world.history(agent_id);
        let neighbors = self.neighbors_of(agent_id);
        let q = PredictionQuery {
            agent_id,
            history,
            neighbors: &neighbors,
            frame_dt: self.sim.frame_dt(),
            tick: self.world.tick,
            episode_seed: self.episode_seed,
            future: self.future.as_ref().map(|f| f[agent_id as usize].as_slice()),
        };
        match self.predictor.predict(&q) {
            Err(Error::IncompleteHistory { .. }) => predict_cv(history, self.predictor.latency()),
            other => other,
        }
    }
}

pub fn neighbor_positions(world: &World, agent_id: u32) -> Vec<Vec2> {
    let mut v = Vec::new();
    if agent_id != 0 {
        v.push(world.ego.position());
    }
    v.extend(
        world
            .active_exo()
            .filter(|e| e.state.id != agent_id)
            .map(|e| e.state.position()),
    );
    v
}

/// Velocity implied by the first predicted frame.
pub fn first_step_velocity(set: &PredictionSet, current: Vec2, frame_dt: f64) -> Vec2 {
    (set.best_mode()[0] - current) / frame_dt
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{generate_scenario, MapTemplate};

    #[test]
    fn simulated_future_matches_real_rollout_with_same_command() {
        let sim = SimConfig::default();
        let sc = generate_scenario(3, MapTemplate::Intersection, 8).unwrap();
        let mut w = World::new(&sc, &sim);
        w.ego_command = 1.0;
        let fut = simulate_future(&w, &sc, &sim, T_PRED).unwrap();
        for frame in 0..T_PRED {
            for _ in 0..sim.stride {
                w.step(&sc.ego_path, &sim).unwrap();
            }
            assert_eq!(fut[0][frame], w.ego.position());
            for e in &w.exo {
                assert_eq!(fut[e.state.id as usize][frame], e.state.position());
            }
        }
    }

    #[test]
    fn short_fork_continues_at_constant_velocity() {
        let sim = SimConfig::default();
        let sc = generate_scenario(3, MapTemplate::Straight, 4).unwrap();
        let w = World::new(&sc, &sim);
        let fut = simulate_future(&w, &sc, &sim, 1).unwrap();
        for traj in &fut {
            assert_eq!(traj.len(), T_PRED);
            let d = traj[1] - traj[0];
            for pair in traj.windows(2).skip(1) {
                assert!(((pair[1] - pair[0]) - d).norm() < 1e-9);
            }
        }
    }
}
