//! Particle beliefs over each exo-agent's intended path and intention.

use rand::Rng;

use crate::geometry::Vec2;
use crate::kinematics::AgentKind;
use crate::rng::SimRng;
use crate::scenario::MapPath;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Intention {
    Follow,
    Stop,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct HiddenState {
    /// Index into the scenario map; `None` when no path is near the agent.
    pub path: Option<usize>,
    pub intention: Intention,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Belief {
    pub particles: Vec<HiddenState>,
    pub weights: Vec<f64>,
}

/// Parameters of the observation and intention-switch model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BeliefModel {
    pub sigma_obs: f64,
    pub switch_prob: f64,
    pub stop_decel: f64,
    pub frame_dt: f64,
}

/// Speed a following agent is expected to move at, at least.
pub fn cruise_speed(kind: AgentKind) -> f64 {
    let (lo, hi) = kind.preferred_speed_range();
    0.5 * (lo + hi)
}

/// Map paths serving `kind` within `radius` of `pos` whose direction
/// agrees with `heading`, in map order.
pub fn candidate_paths(map: &[MapPath], kind: AgentKind, pos: Vec2, heading: f64, radius: f64) -> Vec<usize> {
    let h = Vec2::from_angle(heading);
    map.iter()
        .enumerate()
        .filter(|(_, m)| m.kind.serves(kind))
        .filter(|(_, m)| {
            let q = m.path.query(pos);
            q.lateral.abs() <= radius
                && (m.path.point_at(q.arc_length) - pos).norm() <= radius
                && q.arc_length < m.path.total_length() - 0.5
                && m.path.tangent_at(q.arc_length).dot(h) >= 0.0
        })
        .map(|(i, _)| i)
        .collect()
}

impl Belief {
    /// `n` particles spread evenly over the candidate paths, alternating
    /// intentions, with equal weights.
    pub fn uniform(candidates: &[usize], n: usize) -> Belief {
        let n = n.max(1);
        let particles = (0..n)
            .map(|j| HiddenState {
                path: if candidates.is_empty() {
                    None
                } else {
                    Some(candidates[(j / 2) % candidates.len()])
                },
                intention: if j % 2 == 0 {
                    Intention::Follow
                } else {
                    Intention::Stop
                },
            })
            .collect();
        Belief {
            particles,
            weights: vec![1.0 / n as f64; n],
        }
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn effective_sample_size(&self) -> f64 {
        1.0 / self.weights.iter().map(|w| w * w).sum::<f64>()
    }

    /// Total weight of particles matching `pred`.
    pub fn mass(&self, pred: impl Fn(&HiddenState) -> bool) -> f64 {
        self.particles
            .iter()
            .zip(&self.weights)
            .filter(|(p, _)| pred(p))
            .map(|(_, w)| w)
            .sum()
    }

    pub fn sample(&self, rng: &mut SimRng) -> HiddenState {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (p, w) in self.particles.iter().zip(&self.weights) {
            acc += w;
            if u < acc {
                return *p;
            }
        }
        *self.particles.last().unwrap()
    }

    /// Systematic resampling to equal weights.
    pub fn resample(&mut self, rng: &mut SimRng) {
        let n = self.len();
        let step = 1.0 / n as f64;
        let mut u = rng.random::<f64>() * step;
        let mut out = Vec::with_capacity(n);
        let mut acc = self.weights[0];
        let mut i = 0;
        for _ in 0..n {
            while u >= acc && i + 1 < n {
                i += 1;
                acc += self.weights[i];
            }
            out.push(self.particles[i]);
            u += step;
        }
        self.particles = out;
        self.weights = vec![step; n];
    }

    fn normalize(&mut self) -> bool {
        let total: f64 = self.weights.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return false;
        }
        for w in &mut self.weights {
            *w /= total;
        }
        true
    }
}

/// One frame of observed motion of an exo-agent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MotionObservation {
    pub kind: AgentKind,
    /// Position at the start of the observed frame.
    pub from: Vec2,
    /// Displacement over the frame before that.
    pub prev_displacement: Vec2,
    pub displacement: Vec2,
    /// Heading at the start of the observed frame.
    pub heading: f64,
}

/// Displacement a particle predicts for the observed frame.
pub fn expected_displacement(h: &HiddenState, obs: &MotionObservation, map: &[MapPath], model: &BeliefModel) -> Vec2 {
    let dir = match h.path {
        Some(i) => {
            let path = &map[i].path;
            path.tangent_at(path.query(obs.from).arc_length)
        }
        None => obs
            .prev_displacement
            .normalized()
            .unwrap_or_else(|| Vec2::from_angle(obs.heading)),
    };
    let prev_speed = obs.prev_displacement.norm() / model.frame_dt;
    let speed = match h.intention {
        Intention::Follow => prev_speed.max(cruise_speed(obs.kind)),
        Intention::Stop => (prev_speed - model.stop_decel * model.frame_dt).max(0.0),
    };
    dir * (speed * model.frame_dt)
}

/// Switches intentions at random, reweights by the Gaussian likelihood of
/// the observed displacement, and resamples when the weights degenerate.
pub fn update_belief(
    belief: &mut Belief,
    obs: &MotionObservation,
    map: &[MapPath],
    model: &BeliefModel,
    rng: &mut SimRng,
) {
    for p in &mut belief.particles {
        if rng.random::<f64>() < model.switch_prob {
            p.intention = match p.intention {
                Intention::Follow => Intention::Stop,
                Intention::Stop => Intention::Follow,
            };
        }
    }
    let two_var = 2.0 * model.sigma_obs * model.sigma_obs;
    for (p, w) in belief.particles.iter().zip(belief.weights.iter_mut()) {
        let e = expected_displacement(p, obs, map, model);
        *w *= (-(obs.displacement - e).norm_sq() / two_var).exp();
    }
    if !belief.normalize() {
        let n = belief.len();
        belief.weights = vec![1.0 / n as f64; n];
        return;
    }
    if belief.effective_sample_size() < belief.len() as f64 / 2.0 {
        belief.resample(rng);
    }
}
