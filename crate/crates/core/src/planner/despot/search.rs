//! Sampled-scenario tree search over longitudinal actions.

use rand_distr::{Distribution, StandardNormal};

use super::belief::{HiddenState, Intention};
use super::reward::{reward, RewardConfig};
use super::Action;
use crate::budget::Budget;
use crate::geometry::{obb_intersect, OrientedBox, Vec2};
use crate::kinematics::{bicycle_step, pursuit_steer_to, AgentState, VehicleParams};
use crate::path::ReferencePath;
use crate::rng::SimRng;
use crate::scenario::MapPath;

/// One exo-agent's motion in one sampled scenario, frame 0 being now.
#[derive(Clone, Debug, PartialEq)]
pub struct ExoTrack {
    pub positions: Vec<Vec2>,
    pub headings: Vec<f64>,
    pub half_length: f64,
    pub half_width: f64,
}

impl ExoTrack {
    fn at(&self, frame: usize) -> (Vec2, f64) {
        let f = frame.min(self.positions.len() - 1);
        (self.positions[f], self.headings[f])
    }

    fn velocity(&self, frame: usize, frame_dt: f64) -> Vec2 {
        let f = frame.min(self.positions.len() - 2);
        (self.positions[f + 1] - self.positions[f]) / frame_dt
    }

    fn disc_radius(&self) -> f64 {
        self.half_length.hypot(self.half_width)
    }
}

/// Inputs to [`exo_track`] that do not vary between scenarios.
#[derive(Clone, Copy, Debug)]
pub struct TrackModel<'a> {
    pub map: &'a [MapPath],
    pub frames: usize,
    pub frame_dt: f64,
    pub layer_frames: usize,
    pub stop_decel: f64,
    pub noise_sigma: f64,
}

/// A prediction resampled to `frames` points with each point's progress
/// from the agent's current position, measured along `reference` (or
/// along the heading when there is none).
#[derive(Clone, Debug, PartialEq)]
pub struct PredictedMotion {
    pub points: Vec<Vec2>,
    pub progress: Vec<f64>,
}

impl PredictedMotion {
    pub fn new(state: &AgentState, prediction: &[Vec2], reference: Option<&ReferencePath>, frames: usize) -> Self {
        let pos = state.position();
        let h = Vec2::from_angle(state.pose.heading);
        let points = extend(prediction, frames);
        let progress = match reference {
            Some(path) => {
                let base = path.query(pos).arc_length;
                points.iter().map(|p| path.query(*p).arc_length - base).collect()
            }
            None => points.iter().map(|p| (*p - pos).dot(h)).collect(),
        };
        Self { points, progress }
    }
}

/// Rolls an exo-agent forward under one hidden state.
///
/// A following agent keeps the predicted progress but moves along its
/// intended path at its current lateral offset. Without an intended path
/// it takes the predicted points as they are. A stopping agent brakes at
/// `stop_decel` along the same route. Gaussian noise of `noise_sigma` is
/// added to each layer's displacement and interpolated over the layer's
/// frames.
pub fn exo_track(
    state: &AgentState,
    motion: &PredictedMotion,
    hidden: &HiddenState,
    m: &TrackModel<'_>,
    rng: &mut SimRng,
) -> ExoTrack {
    let pos = state.position();
    let h = Vec2::from_angle(state.pose.heading);
    let route = hidden.path.map(|i| {
        let path = &m.map[i].path;
        (path, path.query(pos))
    });
    let along = |s: f64| -> (Vec2, f64) {
        match &route {
            Some((path, q)) => {
                let s = q.arc_length + s;
                let p = path.point_at(s) + path.tangent_at(s).perp() * q.lateral;
                (p, path.heading_at(s))
            }
            None => (pos + h * s, state.pose.heading),
        }
    };

    let mut positions = Vec::with_capacity(m.frames + 1);
    let mut headings = Vec::with_capacity(m.frames + 1);
    positions.push(pos);
    headings.push(state.pose.heading);
    match (hidden.intention, route.is_some()) {
        (Intention::Follow, true) => {
            for &ds in motion.progress.iter().take(m.frames) {
                let (q, th) = along(ds);
                positions.push(q);
                headings.push(th);
            }
        }
        (Intention::Follow, false) => {
            for p in motion.points.iter().take(m.frames) {
                let prev = *positions.last().unwrap();
                let th = (*p - prev)
                    .normalized()
                    .map_or(*headings.last().unwrap(), |d| d.angle());
                positions.push(*p);
                headings.push(th);
            }
        }
        (Intention::Stop, _) => {
            let v0 = state.speed;
            let t_stop = v0 / m.stop_decel;
            for k in 1..=m.frames {
                let t = (k as f64 * m.frame_dt).min(t_stop);
                let (q, th) = along(v0 * t - 0.5 * m.stop_decel * t * t);
                positions.push(q);
                headings.push(th);
            }
        }
    }

    let layers = m.frames.div_ceil(m.layer_frames);
    let mut offsets = vec![Vec2::ZERO];
    for _ in 0..layers {
        let nx: f64 = StandardNormal.sample(rng);
        let ny: f64 = StandardNormal.sample(rng);
        offsets.push(*offsets.last().unwrap() + Vec2::new(nx, ny) * m.noise_sigma);
    }
    if m.noise_sigma > 0.0 {
        for (k, p) in positions.iter_mut().enumerate().skip(1) {
            let l = (k - 1) / m.layer_frames;
            let j = (k - l * m.layer_frames) as f64 / m.layer_frames as f64;
            *p += offsets[l] + (offsets[l + 1] - offsets[l]) * j;
        }
    }

    ExoTrack {
        positions,
        headings,
        half_length: state.footprint.length / 2.0,
        half_width: state.footprint.width / 2.0,
    }
}

/// `points` truncated or linearly extended to `n` points.
fn extend(points: &[Vec2], n: usize) -> Vec<Vec2> {
    let mut out: Vec<Vec2> = points.iter().take(n).copied().collect();
    let d = if points.len() >= 2 {
        points[points.len() - 1] - points[points.len() - 2]
    } else {
        Vec2::ZERO
    };
    while out.len() < n {
        let last = *out.last().unwrap_or(&Vec2::ZERO);
        out.push(last + d);
    }
    out
}

/// Ego state inside the search.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EgoNode {
    pub state: AgentState,
    pub path_hint: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchParams {
    pub max_depth: usize,
    pub layer_frames: usize,
    pub frame_dt: f64,
    pub collision_buffer: f64,
    pub ttc_threshold: f64,
    pub max_expansions: usize,
    pub reward: RewardConfig,
    pub vehicle: VehicleParams,
    pub lookahead: f64,
}

pub struct SearchProblem<'a> {
    pub params: &'a SearchParams,
    pub ego_path: &'a ReferencePath,
    /// Indexed by scenario, then agent.
    pub scenarios: &'a [Vec<ExoTrack>],
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SearchOutcome {
    pub action: Action,
    /// Nodes expanded, counting the root.
    pub expansions: usize,
    pub root_lower: f64,
    pub root_upper: f64,
    /// Value estimate (lower bound) of each root action, when expanded.
    pub action_values: Option<[f64; 3]>,
}

struct Node {
    depth: usize,
    ego: EgoNode,
    alive: Vec<bool>,
    n_alive: usize,
    children: Option<[usize; 3]>,
    edge_reward: f64,
    lower: f64,
    upper: f64,
}

impl SearchProblem<'_> {
    fn n_scenarios(&self) -> usize {
        self.scenarios.len()
    }

    fn ego_frame(&self, ego: &EgoNode, accel: f64) -> EgoNode {
        let q = self.ego_path.query_near(ego.state.position(), ego.path_hint, 8);
        let target = self.ego_path.point_at(q.arc_length + self.params.lookahead);
        let steer = pursuit_steer_to(&ego.state, target, &self.params.vehicle);
        // Inputs are finite by construction.
        let state = bicycle_step(&ego.state, accel, steer, self.params.frame_dt, &self.params.vehicle)
            .expect("finite ego state in search");
        EgoNode {
            state,
            path_hint: q.index,
        }
    }

    fn collides(&self, ego: &AgentState, scenario: usize, frame: usize) -> bool {
        let b = self.params.collision_buffer;
        let ego_box = ego.bounding_box().with_buffer(b);
        let ego_r = ego_box.circumradius();
        self.scenarios[scenario].iter().any(|t| {
            let (p, th) = t.at(frame);
            let other = OrientedBox::new(p, th, t.half_length + b, t.half_width);
            let reach = ego_r + other.circumradius();
            (p - ego_box.center).norm_sq() <= reach * reach && obb_intersect(&ego_box, &other)
        })
    }

    /// Advances the ego one layer; returns the new ego node and, per
    /// scenario in `alive`, the ego speed at the first colliding frame.
    fn layer(&self, ego: &EgoNode, depth: usize, action: Action, alive: &[bool]) -> (EgoNode, Vec<Option<f64>>) {
        let mut e = *ego;
        let mut hit = vec![None; alive.len()];
        for j in 1..=self.params.layer_frames {
            e = self.ego_frame(&e, action.accel());
            let frame = depth * self.params.layer_frames + j;
            for (s, a) in alive.iter().enumerate() {
                if *a && hit[s].is_none() && self.collides(&e.state, s, frame) {
                    hit[s] = Some(e.state.speed);
                }
            }
        }
        (e, hit)
    }

    fn layer_one(&self, ego: &EgoNode, depth: usize, action: Action, scenario: usize) -> (EgoNode, Option<f64>) {
        let mut e = *ego;
        let mut hit = None;
        for j in 1..=self.params.layer_frames {
            e = self.ego_frame(&e, action.accel());
            if hit.is_none() && self.collides(&e.state, scenario, depth * self.params.layer_frames + j) {
                hit = Some(e.state.speed);
            }
        }
        (e, hit)
    }

    /// Decelerate if some agent would touch the ego within the time-to-
    /// collision threshold at current velocities, else Maintain.
    pub fn default_action(&self, ego: &AgentState, depth: usize, scenario: usize) -> Action {
        let frame = depth * self.params.layer_frames;
        let ep = ego.position();
        let ev = ego.velocity();
        let er = ego.footprint.disc_radius();
        let threatened = self.scenarios[scenario].iter().any(|t| {
            let (p, _) = t.at(frame);
            let rel = p - ep;
            let r = er + t.disc_radius();
            let c = rel.norm_sq() - r * r;
            if c <= 0.0 {
                return true;
            }
            let w = ev - t.velocity(frame, self.params.frame_dt);
            let a = w.norm_sq();
            let b = rel.dot(w);
            let disc = b * b - a * c;
            if a <= 0.0 || b <= 0.0 || disc < 0.0 {
                return false;
            }
            (b - disc.sqrt()) / a <= self.params.ttc_threshold
        });
        if threatened {
            Action::Decelerate
        } else {
            Action::Maintain
        }
    }

    /// Discounted return of the default policy in one scenario from `depth`.
    pub fn rollout(&self, ego: &EgoNode, depth: usize, scenario: usize) -> f64 {
        let mut e = *ego;
        let mut value = 0.0;
        let mut discount = 1.0;
        for d in depth..self.params.max_depth {
            let a = self.default_action(&e.state, d, scenario);
            let (next, hit) = self.layer_one(&e, d, a, scenario);
            let v = hit.unwrap_or(next.state.speed);
            value += discount * reward(v, a, hit.is_some(), false, &self.params.reward);
            if hit.is_some() {
                break;
            }
            discount *= self.params.reward.gamma;
            e = next;
        }
        value
    }

    /// Best achievable discounted speed reward from `depth`, ignoring
    /// collisions: accelerate flat out.
    pub fn optimistic_value(&self, speed: f64, depth: usize) -> f64 {
        let layer_dt = self.params.layer_frames as f64 * self.params.frame_dt;
        let r = &self.params.reward;
        let mut value = 0.0;
        let mut discount = 1.0;
        for k in 0..self.params.max_depth.saturating_sub(depth) {
            let v = (speed + Action::Accelerate.accel() * layer_dt * (k + 1) as f64).min(self.params.vehicle.v_max);
            value += discount * r.speed(v);
            discount *= r.gamma;
        }
        value
    }

    fn make_node(&self, ego: EgoNode, depth: usize, alive: Vec<bool>, edge_reward: f64) -> Node {
        let n_alive = alive.iter().filter(|a| **a).count();
        let s = self.n_scenarios() as f64;
        let (lower, upper) = if depth >= self.params.max_depth || n_alive == 0 {
            (0.0, 0.0)
        } else {
            let lower = (0..alive.len())
                .filter(|&i| alive[i])
                .map(|i| self.rollout(&ego, depth, i))
                .sum::<f64>()
                / s;
            let upper = n_alive as f64 / s * self.optimistic_value(ego.state.speed, depth);
            (lower, upper.max(lower))
        };
        Node {
            depth,
            ego,
            alive,
            n_alive,
            children: None,
            edge_reward,
            lower,
            upper,
        }
    }

    fn expand(&self, tree: &mut Vec<Node>, id: usize) {
        let s = self.n_scenarios() as f64;
        let mut kids = [0; 3];
        for (k, action) in Action::ALL.iter().enumerate() {
            let (ego, alive, depth) = {
                let n = &tree[id];
                (n.ego, n.alive.clone(), n.depth)
            };
            let (next, hit) = self.layer(&ego, depth, *action, &alive);
            let mut edge = 0.0;
            let mut child_alive = alive.clone();
            for i in 0..alive.len() {
                if !alive[i] {
                    continue;
                }
                let v = hit[i].unwrap_or(next.state.speed);
                edge += reward(v, *action, hit[i].is_some(), false, &self.params.reward);
                child_alive[i] = hit[i].is_none();
            }
            let node = self.make_node(next, depth + 1, child_alive, edge / s);
            tree.push(node);
            kids[k] = tree.len() - 1;
        }
        tree[id].children = Some(kids);
    }

    fn backup(&self, tree: &mut [Node], id: usize) {
        let gamma = self.params.reward.gamma;
        let kids = tree[id].children.expect("backup of unexpanded node");
        let lower = kids
            .iter()
            .map(|&c| tree[c].edge_reward + gamma * tree[c].lower)
            .fold(f64::NEG_INFINITY, f64::max);
        let upper = kids
            .iter()
            .map(|&c| tree[c].edge_reward + gamma * tree[c].upper)
            .fold(f64::NEG_INFINITY, f64::max);
        let n = &mut tree[id];
        n.lower = n.lower.max(lower);
        n.upper = n.upper.min(upper).max(n.lower);
    }

    fn best_child(&self, tree: &[Node], id: usize, by_upper: bool) -> Option<(usize, usize)> {
        let gamma = self.params.reward.gamma;
        let kids = tree[id].children?;
        let mut best = 0;
        let mut best_v = f64::NEG_INFINITY;
        for (k, &c) in kids.iter().enumerate() {
            let b = if by_upper { tree[c].upper } else { tree[c].lower };
            let v = tree[c].edge_reward + gamma * b;
            if v > best_v {
                best_v = v;
                best = k;
            }
        }
        Some((best, kids[best]))
    }

    /// Anytime search from `root`. The root's own initialisation is assumed
    /// paid for; each further expansion charges `calls` predictor calls of
    /// `latency` plus one node overhead.
    pub fn search(&self, root: EgoNode, budget: &mut Budget, calls: u64, latency: f64) -> SearchOutcome {
        let s = self.n_scenarios();
        let mut tree = vec![self.make_node(root, 0, vec![true; s], 0.0)];
        let mut expansions = 1;
        while tree[0].upper - tree[0].lower > 1e-9
            && expansions < self.params.max_expansions
            && budget.can_afford(calls, latency, 1)
        {
            let mut path = vec![0];
            let mut id = 0;
            while let Some((_, c)) = self.best_child(&tree, id, true) {
                id = c;
                path.push(id);
            }
            let leaf = &tree[id];
            if leaf.depth >= self.params.max_depth || leaf.n_alive == 0 || leaf.upper - leaf.lower <= 1e-9 {
                break;
            }
            budget.charge(calls, latency, 1);
            self.expand(&mut tree, id);
            expansions += 1;
            for &n in path.iter().rev() {
                self.backup(&mut tree, n);
            }
        }

        let gamma = self.params.reward.gamma;
        let (action, action_values) = match tree[0].children {
            Some(kids) => {
                let (k, _) = self.best_child(&tree, 0, false).unwrap();
                let vals = kids.map(|c| tree[c].edge_reward + gamma * tree[c].lower);
                (Action::ALL[k], Some(vals))
            }
            None => {
                let dec = (0..s)
                    .filter(|&i| self.default_action(&root.state, 0, i) == Action::Decelerate)
                    .count();
                let a = if 2 * dec >= s.max(1) && dec > 0 {
                    Action::Decelerate
                } else {
                    Action::Maintain
                };
                (a, None)
            }
        };
        SearchOutcome {
            action,
            expansions,
            root_lower: tree[0].lower,
            root_upper: tree[0].upper,
            action_values,
        }
    }
}
