//! World state, observation histories and the exo-agent crowd model.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::{Pose2D, Vec2};
use crate::kinematics::{
    bicycle_step, holonomic_step, pursuit_steer_to, AgentKind, AgentState, VehicleParams,
};
use crate::path::ReferencePath;
use crate::rvo::{blocker_for, polar_candidates, select_velocity, Blocker, DiscAgent};
use crate::scenario::Scenario;

/// Observed frames per history.
pub const T_OBS: usize = 20;
/// Predicted frames per trajectory.
pub const T_PRED: usize = 30;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrowdConfig {
    /// Cone truncation horizon, seconds.
    pub time_horizon: f64,
    /// Agents farther than this (center to center) are ignored.
    pub neighbor_radius: f64,
    /// Distance ahead along the path used as the steering target.
    pub lookahead: f64,
    pub candidate_count: usize,
}

impl Default for CrowdConfig {
    fn default() -> Self {
        Self {
            time_horizon: 4.0,
            neighbor_radius: 12.0,
            lookahead: 1.5,
            candidate_count: 32,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub dt: f64,
    /// Simulation ticks per prediction frame (and per planner decision).
    pub stride: u32,
    /// Pure-pursuit lookahead for the ego.
    pub lookahead: f64,
    /// The ego has arrived once it is this close to the end of its path.
    pub goal_tolerance: f64,
    pub vehicle: VehicleParams,
    pub crowd: CrowdConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.03,
            stride: 3,
            lookahead: 3.0,
            goal_tolerance: 0.5,
            vehicle: VehicleParams::default(),
            crowd: CrowdConfig::default(),
        }
    }
}

impl SimConfig {
    pub fn frame_dt(&self) -> f64 {
        self.dt * self.stride as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HistoryFrame {
    pub pos: Vec2,
    pub heading: f64,
}

/// The last [`T_OBS`] frames of one agent, oldest first.
///
/// At episode start the buffer is back-filled with a constant-velocity
/// extrapolation so predictors always see full-length input; `observed`
/// counts the frames that were actually simulated.
#[derive(Clone, Debug, PartialEq)]
pub struct History {
    pub agent_id: u32,
    pub frames: Vec<HistoryFrame>,
    pub observed: usize,
}

impl History {
    pub fn from_frames(agent_id: u32, frames: Vec<HistoryFrame>) -> Self {
        let observed = frames.len();
        Self {
            agent_id,
            frames,
            observed,
        }
    }

    fn backfilled(state: &AgentState, frame_dt: f64) -> Self {
        let v = state.velocity();
        let frames = (0..T_OBS)
            .rev()
            .map(|k| HistoryFrame {
                pos: state.position() - v * (k as f64 * frame_dt),
                heading: state.pose.heading,
            })
            .collect();
        Self {
            agent_id: state.id,
            frames,
            observed: 1,
        }
    }

    fn push(&mut self, state: &AgentState) {
        if self.frames.len() == T_OBS {
            self.frames.remove(0);
        }
        self.frames.push(HistoryFrame {
            pos: state.position(),
            heading: state.pose.heading,
        });
        self.observed += 1;
    }

    /// Every frame was observed, none back-filled.
    pub fn complete(&self) -> bool {
        self.observed >= T_OBS && self.frames.len() == T_OBS
    }

    pub fn last(&self) -> &HistoryFrame {
        self.frames.last().expect("history is never empty")
    }

    pub fn positions(&self) -> impl Iterator<Item = Vec2> + '_ {
        self.frames.iter().map(|f| f.pos)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExoAgent {
    pub state: AgentState,
    pub path: Arc<ReferencePath>,
    pub preferred_speed: f64,
    pub path_hint: usize,
    /// False once the agent has left the map at the end of its path.
    pub active: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct World {
    pub tick: u32,
    pub ego: AgentState,
    /// Latched longitudinal command, m/s².
    pub ego_command: f64,
    /// Ego arc-length along its path.
    pub ego_progress: f64,
    ego_hint: usize,
    pub exo: Vec<ExoAgent>,
    /// Indexed by agent id; the ego is id 0 and exo-agent `i` is id `i + 1`.
    pub histories: Vec<History>,
}

impl World {
    pub fn new(scenario: &Scenario, cfg: &SimConfig) -> World {
        let ego = scenario.ego_start;
        let q = scenario.ego_path.query(ego.position());
        let exo: Vec<ExoAgent> = scenario
            .exo
            .iter()
            .map(|e| ExoAgent {
                state: e.state,
                path: Arc::new(e.path.clone()),
                preferred_speed: e.preferred_speed,
                path_hint: e.path.query(e.state.position()).index,
                active: true,
            })
            .collect();
        let mut histories = vec![History::backfilled(&ego, cfg.frame_dt())];
        histories.extend(
            exo.iter()
                .map(|e| History::backfilled(&e.state, cfg.frame_dt())),
        );
        World {
            tick: 0,
            ego,
            ego_command: 0.0,
            ego_progress: q.arc_length,
            ego_hint: q.index,
            exo,
            histories,
        }
    }

    pub fn history(&self, agent_id: u32) -> &History {
        &self.histories[agent_id as usize]
    }

    pub fn active_exo(&self) -> impl Iterator<Item = &ExoAgent> {
        self.exo.iter().filter(|e| e.active)
    }

    pub fn reached_goal(&self, ego_path: &ReferencePath, cfg: &SimConfig) -> bool {
        self.ego_progress >= ego_path.total_length() - cfg.goal_tolerance
    }

    /// Ego steering from pure pursuit at the current state.
    pub fn ego_steer(&self, ego_path: &ReferencePath, cfg: &SimConfig) -> f64 {
        let q = ego_path.query_near(self.ego.position(), self.ego_hint, 8);
        let target = ego_path.point_at(q.arc_length + cfg.lookahead);
        pursuit_steer_to(&self.ego, target, &cfg.vehicle)
    }

    /// Advances one simulation tick with the latched ego command.
    pub fn step(&mut self, ego_path: &ReferencePath, cfg: &SimConfig) -> Result<()> {
        let steer = self.ego_steer(ego_path, cfg);
        let next_exo = step_exo_agents(self, cfg.dt, &cfg.crowd);
        self.ego = bicycle_step(&self.ego, self.ego_command, steer, cfg.dt, &cfg.vehicle)?;
        for (agent, next) in self.exo.iter_mut().zip(next_exo) {
            *agent = next;
        }
        let q = ego_path.query_near(self.ego.position(), self.ego_hint, 8);
        self.ego_hint = q.index;
        self.ego_progress = q.arc_length;
        self.tick += 1;
        if self.tick.is_multiple_of(cfg.stride) {
            self.histories[0].push(&self.ego);
            for e in self.exo.iter().filter(|e| e.active) {
                self.histories[e.state.id as usize].push(&e.state);
            }
        }
        Ok(())
    }
}

fn disc(state: &AgentState) -> DiscAgent {
    DiscAgent {
        id: state.id,
        position: state.position(),
        velocity: state.velocity(),
        radius: state.footprint.disc_radius(),
    }
}

/// Next state of every exo-agent, computed synchronously from `world`.
///
/// Each agent steers toward a point slightly ahead on its path at its
/// preferred speed and picks the closest velocity outside the obstacles of
/// nearby agents: reciprocal cones for moving agents, the ego included,
/// and plain cones for parked ones.
/// With no free velocity it takes the least-penetrating candidate, which
/// for overlapping agents is one that separates them.
pub fn step_exo_agents(world: &World, dt: f64, cfg: &CrowdConfig) -> Vec<ExoAgent> {
    let mut out = world.exo.clone();
    for (i, agent) in world.exo.iter().enumerate() {
        if !agent.active || agent.preferred_speed <= 0.0 {
            continue;
        }
        let me = &agent.state;
        let path = &agent.path;
        let q = path.query_near(me.position(), agent.path_hint, 8);
        let next = &mut out[i];
        next.path_hint = q.index;
        if q.arc_length >= path.total_length() - 0.3 {
            next.active = false;
            continue;
        }
        let target_point = path.point_at(q.arc_length + cfg.lookahead);
        let dir = (target_point - me.position())
            .normalized()
            .unwrap_or_else(|| path.tangent_at(q.arc_length));
        let v_pref = dir * agent.preferred_speed;

        let my_disc = disc(me);
        let mut blockers: Vec<Blocker> = Vec::new();
        let r2 = cfg.neighbor_radius * cfg.neighbor_radius;
        let mut consider = |other: &AgentState, reciprocal: bool| {
            if (other.position() - me.position()).norm_sq() <= r2 {
                blockers.push(blocker_for(&my_disc, &disc(other), cfg.time_horizon, reciprocal));
            }
        };
        consider(&world.ego, world.ego.speed > 0.0);
        for (j, other) in world.exo.iter().enumerate() {
            if j != i && other.active {
                consider(&other.state, other.preferred_speed > 0.0);
            }
        }
        let candidates = polar_candidates(
            cfg.candidate_count,
            agent.preferred_speed,
            dir.angle(),
            std::f64::consts::PI,
            v_pref,
        );
        let sel = select_velocity(&candidates, &blockers, v_pref);
        let desired = sel.velocity;
        let max_dv = me.kind.max_accel() * dt;

        if me.kind == AgentKind::Vehicle {
            let tangent = path.tangent_at(q.arc_length);
            let target_speed = desired.dot(tangent).max(0.0);
            let speed = me.speed + (target_speed - me.speed).clamp(-max_dv, max_dv);
            let s = q.arc_length + speed * dt;
            let p = path.point_at(s);
            next.state = AgentState {
                pose: Pose2D::new(p.x, p.y, path.heading_at(s)),
                speed,
                ..*me
            };
        } else {
            let v_cur = me.velocity();
            let mut dv = desired - v_cur;
            let n = dv.norm();
            if n > max_dv {
                dv = dv * (max_dv / n);
            }
            next.state = holonomic_step(me, v_cur + dv, dt);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::obb_distance;
    use crate::path::PathBuilder;
    use crate::scenario::{ExoSpec, MapTemplate};

    fn bare(exo: Vec<ExoSpec>) -> Scenario {
        let ego_path = PathBuilder::new(Vec2::new(-200.0, -50.0), 0.0).line(60.0).build();
        Scenario {
            seed: 0,
            template: MapTemplate::Straight,
            map: Vec::new(),
            ego_start: AgentState::new(0, AgentKind::Ego, Pose2D::new(-200.0, -50.0, 0.0), 0.0),
            ego_path,
            exo,
            horizon_ticks: 1000,
        }
    }

    fn walker(id: u32, from: Vec2, to: Vec2, speed: f64) -> ExoSpec {
        let d = to - from;
        let path = PathBuilder::new(from, d.angle()).line(d.norm()).build();
        ExoSpec {
            state: AgentState::new(id, AgentKind::Pedestrian, Pose2D::new(from.x, from.y, d.angle()), speed),
            path,
            preferred_speed: speed,
        }
    }

    #[test]
    fn lone_agent_advances_at_preferred_speed() {
        let cfg = SimConfig::default();
        let sc = bare(vec![walker(1, Vec2::ZERO, Vec2::new(50.0, 0.0), 2.0)]);
        let mut w = World::new(&sc, &cfg);
        w.step(&sc.ego_path, &cfg).unwrap();
        let p = w.exo[0].state.position();
        assert!((p.x - 2.0 * cfg.dt).abs() < 1e-12);
        assert!(p.y.abs() < 1e-12);
    }

    #[test]
    fn head_on_pedestrians_pass_without_contact() {
        let cfg = SimConfig::default();
        let sc = bare(vec![
            walker(1, Vec2::new(-8.0, 0.0), Vec2::new(30.0, 0.0), 1.2),
            walker(2, Vec2::new(8.0, 0.0), Vec2::new(-30.0, 0.0), 1.2),
        ]);
        let mut w = World::new(&sc, &cfg);
        let mut min_d = f64::INFINITY;
        let mut max_lat: f64 = 0.0;
        for _ in 0..(10.0 / cfg.dt) as usize {
            w.step(&sc.ego_path, &cfg).unwrap();
            let (a, b) = (&w.exo[0].state, &w.exo[1].state);
            min_d = min_d.min(obb_distance(&a.bounding_box(), &b.bounding_box()));
            max_lat = max_lat.max(a.pose.y.abs());
        }
        assert!(min_d > 0.0, "min distance {min_d}");
        assert!(max_lat > 0.1, "agents never deviated");
        // They have swapped sides.
        assert!(w.exo[0].state.position().x > w.exo[1].state.position().x);
    }

    #[test]
    fn blocked_vehicle_comes_to_rest() {
        let cfg = SimConfig::default();
        let lane = PathBuilder::new(Vec2::ZERO, 0.0).line(80.0).build();
        let mut exo = vec![ExoSpec {
            state: AgentState::new(1, AgentKind::Vehicle, Pose2D::new(0.0, 0.0, 0.0), 5.0),
            path: lane.clone(),
            preferred_speed: 5.0,
        }];
        for (k, y) in [-3.0, -1.5, 0.0, 1.5, 3.0].into_iter().enumerate() {
            exo.push(ExoSpec {
                state: AgentState::new(2 + k as u32, AgentKind::Pedestrian, Pose2D::new(25.0, y, 0.0), 0.0),
                path: lane.suffix(25.0),
                preferred_speed: 0.0,
            });
        }
        let sc = bare(exo);
        let mut w = World::new(&sc, &cfg);
        for _ in 0..600 {
            w.step(&sc.ego_path, &cfg).unwrap();
        }
        let v = &w.exo[0].state;
        assert!(v.speed < 1e-9, "speed {}", v.speed);
        assert!(v.position().x < 25.0 - 2.25);
    }

    #[test]
    fn history_frames_are_stride_spaced() {
        let cfg = SimConfig::default();
        let sc = bare(vec![walker(1, Vec2::ZERO, Vec2::new(50.0, 0.0), 1.0)]);
        let mut w = World::new(&sc, &cfg);
        assert_eq!(w.history(1).frames.len(), T_OBS);
        assert_eq!(w.history(1).observed, 1);
        for _ in 0..9 {
            w.step(&sc.ego_path, &cfg).unwrap();
        }
        let h = w.history(1);
        assert_eq!(h.observed, 4);
        let f = &h.frames;
        let d1 = f[T_OBS - 1].pos.x - f[T_OBS - 2].pos.x;
        assert!((d1 - cfg.frame_dt()).abs() < 1e-9);
        // Back-filled frames continue the initial velocity.
        let d0 = f[1].pos.x - f[0].pos.x;
        assert!((d0 - cfg.frame_dt()).abs() < 1e-9);
    }
}
