//! Belief-tree planner over sampled scenarios of exo-agent intentions.

mod belief;
mod reward;
mod search;

pub use belief::{
    candidate_paths, cruise_speed, expected_displacement, update_belief, Belief, BeliefModel, HiddenState,
    Intention, MotionObservation,
};
pub use reward::{reward, RewardConfig};
pub use search::{
    exo_track, EgoNode, ExoTrack, PredictedMotion, SearchOutcome, SearchParams, SearchProblem, TrackModel,
};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::rvo::agents_in_range;
use super::{Decision, PlanContext, Planner};
use crate::error::Result;
use crate::rng::rng_for;
use crate::scenario::Scenario;
use crate::world::World;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Action {
    Maintain,
    Accelerate,
    Decelerate,
}

impl Action {
    /// Search order; ties go to the earlier action.
    pub const ALL: [Action; 3] = [Action::Maintain, Action::Accelerate, Action::Decelerate];

    pub fn accel(self) -> f64 {
        match self {
            Action::Maintain => 0.0,
            Action::Accelerate => 3.0,
            Action::Decelerate => -3.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DespotConfig {
    pub scenarios: usize,
    /// Tree depth in layers.
    pub max_depth: usize,
    /// Prediction frames per tree layer.
    pub layer_frames: usize,
    pub gamma: f64,
    /// Per-layer displacement noise on exo-agents, meters.
    pub noise_sigma: f64,
    pub particles: usize,
    pub sigma_obs: f64,
    pub switch_prob: f64,
    pub stop_decel: f64,
    /// Paths within this distance of an agent are intention candidates.
    pub path_radius: f64,
    /// Agents within this radius of the ego enter the search.
    pub sensing_radius: f64,
    /// Nearest agents kept in the search.
    pub max_agents: usize,
    pub max_expansions: usize,
    pub collision_buffer: f64,
    pub ttc_threshold: f64,
    pub speed_weight: f64,
    pub collision_scale: f64,
    pub collision_offset: f64,
    pub decel_penalty: f64,
    pub lane_change_penalty: f64,
}

impl Default for DespotConfig {
    fn default() -> Self {
        let r = RewardConfig::default();
        Self {
            scenarios: 32,
            max_depth: 8,
            layer_frames: 3,
            gamma: r.gamma,
            noise_sigma: 0.1,
            particles: 64,
            sigma_obs: 0.3,
            switch_prob: 0.05,
            stop_decel: 3.0,
            path_radius: 5.0,
            sensing_radius: 15.0,
            max_agents: 3,
            max_expansions: 100,
            collision_buffer: 0.3,
            ttc_threshold: 1.0,
            speed_weight: r.speed_weight,
            collision_scale: r.collision_scale,
            collision_offset: r.collision_offset,
            decel_penalty: r.decel_penalty,
            lane_change_penalty: r.lane_change_penalty,
        }
    }
}

impl DespotConfig {
    pub fn reward(&self, v_max: f64) -> RewardConfig {
        RewardConfig {
            collision_scale: self.collision_scale,
            collision_offset: self.collision_offset,
            speed_weight: self.speed_weight,
            v_max,
            decel_penalty: self.decel_penalty,
            lane_change_penalty: self.lane_change_penalty,
            gamma: self.gamma,
        }
    }

    pub fn horizon_frames(&self) -> usize {
        self.max_depth * self.layer_frames
    }
}

#[derive(Clone, Debug)]
struct AgentBelief {
    belief: Belief,
    /// History length at the last update.
    observed: usize,
}

#[derive(Clone, Debug)]
pub struct DespotPlanner {
    pub cfg: DespotConfig,
    beliefs: BTreeMap<u32, AgentBelief>,
    /// Outcome of the most recent search, for inspection.
    pub last_outcome: Option<SearchOutcome>,
}

impl DespotPlanner {
    pub fn new(cfg: DespotConfig) -> Self {
        Self {
            cfg,
            beliefs: BTreeMap::new(),
            last_outcome: None,
        }
    }

    pub fn belief(&self, agent_id: u32) -> Option<&Belief> {
        self.beliefs.get(&agent_id).map(|b| &b.belief)
    }

    fn update_beliefs(&mut self, world: &World, scenario: &Scenario, model: &BeliefModel, seed: u64) {
        for e in world.active_exo() {
            let id = e.state.id;
            let h = world.history(id);
            let entry = self.beliefs.entry(id).or_insert_with(|| {
                let cands = candidate_paths(
                    &scenario.map,
                    e.state.kind,
                    e.state.position(),
                    e.state.pose.heading,
                    self.cfg.path_radius,
                );
                AgentBelief {
                    belief: Belief::uniform(&cands, self.cfg.particles),
                    observed: h.observed,
                }
            });
            if h.observed == entry.observed {
                continue;
            }
            entry.observed = h.observed;
            let f = &h.frames;
            let n = f.len();
            if n < 3 {
                continue;
            }
            let obs = MotionObservation {
                kind: e.state.kind,
                from: f[n - 2].pos,
                prev_displacement: f[n - 2].pos - f[n - 3].pos,
                displacement: f[n - 1].pos - f[n - 2].pos,
                heading: f[n - 2].heading,
            };
            let mut rng = rng_for(seed, &[0xBE11, world.tick as u64, id as u64]);
            update_belief(&mut entry.belief, &obs, &scenario.map, model, &mut rng);
        }
    }

    /// Updates the beliefs of all active exo-agents from their newest
    /// history frame.
    pub fn observe(&mut self, ctx: &PlanContext<'_>) {
        let model = BeliefModel {
            sigma_obs: self.cfg.sigma_obs,
            switch_prob: self.cfg.switch_prob,
            stop_decel: self.cfg.stop_decel,
            frame_dt: ctx.sim.frame_dt(),
        };
        self.update_beliefs(ctx.world, ctx.scenario, &model, ctx.episode_seed);
    }

    /// Nearest exo-agents within the sensing radius, at most `max_agents`.
    pub fn relevant_agents(&self, world: &World) -> Vec<u32> {
        let mut ids = agents_in_range(world, self.cfg.sensing_radius);
        ids.truncate(self.cfg.max_agents);
        ids
    }

    /// Predicts the agents in `ids` and samples the search scenarios from
    /// the current beliefs. Budget is not charged here.
    pub fn prepare(&self, ctx: &mut PlanContext<'_>, ids: &[u32]) -> Result<PreparedSearch> {
        let world = ctx.world;
        let scenario = ctx.scenario;
        let frames = self.cfg.horizon_frames();
        let mut motions = Vec::with_capacity(ids.len());
        for &id in ids {
            let set = ctx.predict(id)?;
            let state = &world.exo[id as usize - 1].state;
            let reference = candidate_paths(
                &scenario.map,
                state.kind,
                state.position(),
                state.pose.heading,
                self.cfg.path_radius,
            )
            .into_iter()
            .map(|i| (scenario.map[i].path.query(state.position()).lateral.abs(), i))
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .map(|(_, i)| &scenario.map[i].path);
            motions.push(PredictedMotion::new(state, set.best_mode(), reference, frames));
        }

        let track_model = TrackModel {
            map: &scenario.map,
            frames,
            frame_dt: ctx.sim.frame_dt(),
            layer_frames: self.cfg.layer_frames,
            stop_decel: self.cfg.stop_decel,
            noise_sigma: self.cfg.noise_sigma,
        };
        let scenarios = (0..self.cfg.scenarios)
            .map(|s| {
                let mut rng = rng_for(ctx.episode_seed, &[0xDE5, world.tick as u64, s as u64]);
                ids.iter()
                    .zip(&motions)
                    .map(|(&id, motion)| {
                        let state = &world.exo[id as usize - 1].state;
                        let hidden = match self.beliefs.get(&id) {
                            Some(b) => b.belief.sample(&mut rng),
                            None => HiddenState {
                                path: None,
                                intention: Intention::Follow,
                            },
                        };
                        exo_track(state, motion, &hidden, &track_model, &mut rng)
                    })
                    .collect()
            })
            .collect();

        Ok(PreparedSearch {
            params: self.search_params(ctx),
            scenarios,
            root: EgoNode {
                state: world.ego,
                path_hint: scenario.ego_path.query(world.ego.position()).index,
            },
        })
    }

    fn search_params(&self, ctx: &PlanContext<'_>) -> SearchParams {
        SearchParams {
            max_depth: self.cfg.max_depth,
            layer_frames: self.cfg.layer_frames,
            frame_dt: ctx.sim.frame_dt(),
            collision_buffer: self.cfg.collision_buffer,
            ttc_threshold: self.cfg.ttc_threshold,
            max_expansions: self.cfg.max_expansions,
            reward: self.cfg.reward(ctx.sim.vehicle.v_max),
            vehicle: ctx.sim.vehicle,
            lookahead: ctx.sim.lookahead,
        }
    }
}

impl Planner for DespotPlanner {
    fn id(&self) -> &str {
        "despot"
    }

    fn reset(&mut self, _scenario: &Scenario, _world: &World) {
        self.beliefs.clear();
        self.last_outcome = None;
    }

    fn oracle_frames(&self) -> usize {
        self.cfg.horizon_frames()
    }

    fn decide(&mut self, ctx: &mut PlanContext<'_>) -> Result<Decision> {
        self.observe(ctx);
        self.last_outcome = None;
        let ids = self.relevant_agents(ctx.world);
        let calls = ids.len() as u64;
        let latency = ctx.predictor.latency();
        if !ctx.budget.charge(calls, latency, 1) {
            return Ok(Decision {
                accel: Action::Maintain.accel(),
                fallback: true,
            });
        }
        let prepared = self.prepare(ctx, &ids)?;
        let outcome = prepared
            .problem(&ctx.scenario.ego_path)
            .search(prepared.root, &mut ctx.budget, calls, latency);
        self.last_outcome = Some(outcome);
        Ok(Decision {
            accel: outcome.action.accel(),
            fallback: false,
        })
    }
}

/// Everything a search needs, built once per decision.
#[derive(Clone, Debug)]
pub struct PreparedSearch {
    pub params: SearchParams,
    /// Indexed by scenario, then relevant agent.
    pub scenarios: Vec<Vec<ExoTrack>>,
    pub root: EgoNode,
}

impl PreparedSearch {
    pub fn problem<'a>(&'a self, ego_path: &'a crate::path::ReferencePath) -> SearchProblem<'a> {
        SearchProblem {
            params: &self.params,
            ego_path,
            scenarios: &self.scenarios,
        }
    }
}
