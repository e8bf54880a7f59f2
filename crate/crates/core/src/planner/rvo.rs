//! Ego planner that picks a velocity outside the reciprocal velocity
//! obstacles of predicted exo-agents and tracks its speed.

use serde::{Deserialize, Serialize};

use super::{first_step_velocity, Decision, PlanContext, Planner};
use crate::error::Result;
use crate::geometry::Vec2;
use crate::rvo::{blocker_for, polar_candidates, select_velocity, DiscAgent};
use crate::scenario::Scenario;
use crate::world::World;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RvoConfig {
    pub v_max: f64,
    pub candidate_count: usize,
    /// Cone truncation, seconds.
    pub time_horizon: f64,
    /// Candidate directions are limited to this angle either side of the
    /// path direction, radians. The ego cannot leave its lane, so sideways
    /// candidates would only be projected back onto the path.
    pub heading_window: f64,
    /// Exo-agents farther than this are neither predicted nor avoided.
    pub sensing_radius: f64,
    pub max_accel: f64,
    /// Distance ahead on the ego path that defines the target direction.
    pub target_lookahead: f64,
    /// Agents predicted slower than this will not yield, so they get a
    /// plain velocity obstacle instead of a reciprocal one.
    pub static_speed: f64,
}

impl Default for RvoConfig {
    fn default() -> Self {
        Self {
            v_max: 6.0,
            candidate_count: 256,
            time_horizon: 4.0,
            heading_window: 0.5,
            sensing_radius: 25.0,
            max_accel: 3.0,
            target_lookahead: 3.0,
            static_speed: 0.1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RvoPlanner {
    pub cfg: RvoConfig,
    /// Speed command of the last successful decision.
    last_command: Option<f64>,
}

impl RvoPlanner {
    pub fn new(cfg: RvoConfig) -> Self {
        Self {
            cfg,
            last_command: None,
        }
    }

    fn accel_toward(&self, command: f64, speed: f64, decision_dt: f64) -> f64 {
        ((command - speed) / decision_dt).clamp(-self.cfg.max_accel, self.cfg.max_accel)
    }
}

/// Active exo-agents within `radius` of the ego, nearest first.
pub fn agents_in_range(world: &World, radius: f64) -> Vec<u32> {
    let ego = world.ego.position();
    let mut v: Vec<(f64, u32)> = world
        .active_exo()
        .map(|e| ((e.state.position() - ego).norm_sq(), e.state.id))
        .filter(|&(d2, _)| d2 <= radius * radius)
        .collect();
    v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    v.into_iter().map(|(_, id)| id).collect()
}

impl Planner for RvoPlanner {
    fn id(&self) -> &str {
        "rvo"
    }

    fn reset(&mut self, _scenario: &Scenario, _world: &World) {
        self.last_command = None;
    }

    fn oracle_frames(&self) -> usize {
        1
    }

    fn decide(&mut self, ctx: &mut PlanContext<'_>) -> Result<Decision> {
        let world = ctx.world;
        let ego = world.ego;
        let decision_dt = ctx.sim.frame_dt();
        let ids = agents_in_range(world, self.cfg.sensing_radius);
        let latency = ctx.predictor.latency();
        if !ctx.budget.charge(ids.len() as u64, latency, 0) {
            let held = self.last_command.unwrap_or(ego.speed);
            return Ok(Decision {
                accel: self.accel_toward(held, ego.speed, decision_dt),
                fallback: true,
            });
        }

        let me = DiscAgent {
            id: 0,
            position: ego.position(),
            velocity: ego.velocity(),
            radius: ego.footprint.disc_radius(),
        };
        let mut blockers = Vec::with_capacity(ids.len());
        for id in ids {
            let set = ctx.predict(id)?;
            let state = &world.exo[id as usize - 1].state;
            let other = DiscAgent {
                id,
                position: state.position(),
                velocity: first_step_velocity(&set, state.position(), decision_dt),
                radius: state.footprint.disc_radius(),
            };
            let reciprocal = other.velocity.norm() >= self.cfg.static_speed;
            blockers.push(blocker_for(&me, &other, self.cfg.time_horizon, reciprocal));
        }

        let path = &ctx.scenario.ego_path;
        let target = path.point_at(world.ego_progress + self.cfg.target_lookahead);
        let dir = (target - ego.position())
            .normalized()
            .unwrap_or_else(|| Vec2::from_angle(ego.pose.heading));
        let v_target = dir * self.cfg.v_max;
        let candidates = polar_candidates(
            self.cfg.candidate_count,
            self.cfg.v_max,
            dir.angle(),
            self.cfg.heading_window,
            v_target,
        );
        let sel = select_velocity(&candidates, &blockers, v_target);
        let command = sel.velocity.dot(dir).max(0.0);
        self.last_command = Some(command);
        Ok(Decision {
            accel: self.accel_toward(command, ego.speed, decision_dt),
            fallback: false,
        })
    }
}
