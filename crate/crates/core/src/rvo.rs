//! Velocity obstacles, reciprocal velocity obstacles and candidate selection.
//!
//! Agents are approximated as discs (radius = half footprint diagonal).
//! Cones are truncated at a time horizon: a velocity is blocked only when
//! it leads to contact within `time_horizon` seconds.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::geometry::{normalize_angle, Vec2};

/// The set of velocities `v` with `scale·(v − apex)` on a collision course
/// with a disc of `combined_radius` at `rel_position` within `time_horizon`.
///
/// `scale` is 1 for a plain VO and 2 for an RVO, whose apex sits halfway
/// between the VO apex and the ego's current velocity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VelocityObstacleCone {
    pub apex: Vec2,
    pub left_leg: Vec2,
    pub right_leg: Vec2,
    pub source_agent: u32,
    pub rel_position: Vec2,
    pub combined_radius: f64,
    pub time_horizon: f64,
    pub scale: f64,
}

impl VelocityObstacleCone {
    fn relative(&self, v: Vec2) -> Vec2 {
        (v - self.apex) * self.scale
    }

    /// Time of first contact for relative velocity `w`, if any.
    fn hit_time(&self, w: Vec2) -> Option<f64> {
        let p = self.rel_position;
        let a = w.norm_sq();
        let b = w.dot(p);
        let c = p.norm_sq() - self.combined_radius * self.combined_radius;
        if a <= 0.0 || b <= 0.0 {
            return None;
        }
        let disc = b * b - a * c;
        if disc < 0.0 {
            return None;
        }
        Some((b - disc.sqrt()) / a)
    }

    pub fn contains(&self, v: Vec2) -> bool {
        self.hit_time(self.relative(v))
            .is_some_and(|t| t <= self.time_horizon)
    }

    /// Length of a path out of the cone starting at `v`; 0 outside.
    ///
    /// The minimum of the perpendicular distances to the two legs and the
    /// radial distance to the truncation boundary, all upper bounds on the
    /// exact exit distance.
    pub fn penetration(&self, v: Vec2) -> f64 {
        let w = self.relative(v);
        let Some(t) = self.hit_time(w).filter(|&t| t <= self.time_horizon) else {
            return 0.0;
        };
        let to_left = self.left_leg.cross(w).abs();
        let to_right = self.right_leg.cross(w).abs();
        let to_cap = w.norm() * (1.0 - t / self.time_horizon);
        to_left.min(to_right).min(to_cap) / self.scale
    }
}

/// Something that forbids velocities: a cone, or an agent that already
/// overlaps the ego so that every velocity counts as blocked.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Blocker {
    Cone(VelocityObstacleCone),
    Overlap {
        source_agent: u32,
        apex: Vec2,
        scale: f64,
        /// Unit vector from ego toward the other agent.
        direction: Vec2,
    },
}

impl Blocker {
    pub fn contains(&self, v: Vec2) -> bool {
        match self {
            Blocker::Cone(c) => c.contains(v),
            Blocker::Overlap { .. } => true,
        }
    }

    /// Cone penetration, or for an overlap the closing speed toward the
    /// other agent (moving apart scores 0).
    pub fn penetration(&self, v: Vec2) -> f64 {
        match self {
            Blocker::Cone(c) => c.penetration(v),
            Blocker::Overlap {
                apex,
                scale,
                direction,
                ..
            } => ((v - *apex) * *scale).dot(*direction).max(0.0),
        }
    }

    pub fn source_agent(&self) -> u32 {
        match self {
            Blocker::Cone(c) => c.source_agent,
            Blocker::Overlap { source_agent, .. } => *source_agent,
        }
    }
}

/// Disc-level description of an agent for cone construction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiscAgent {
    pub id: u32,
    pub position: Vec2,
    pub velocity: Vec2,
    pub radius: f64,
}

/// VO of `other` for `ego`: apex at the other agent's velocity, legs
/// tangent to the combined disc.
pub fn compute_vo(ego: &DiscAgent, other: &DiscAgent, time_horizon: f64) -> Result<VelocityObstacleCone> {
    let p = other.position - ego.position;
    let dist = p.norm();
    let r = ego.radius + other.radius;
    if dist <= r {
        return Err(Error::Overlap {
            source_agent: other.id,
            distance: dist,
            combined_radius: r,
        });
    }
    let half = (r / dist).asin();
    let axis = p / dist;
    Ok(VelocityObstacleCone {
        apex: other.velocity,
        left_leg: axis.rotate(half),
        right_leg: axis.rotate(-half),
        source_agent: other.id,
        rel_position: p,
        combined_radius: r,
        time_horizon,
        scale: 1.0,
    })
}

/// Image of a VO under `v ↦ (v + v_ego)/2`.
pub fn compute_rvo(vo: &VelocityObstacleCone, ego_velocity: Vec2) -> VelocityObstacleCone {
    VelocityObstacleCone {
        apex: (vo.apex + ego_velocity) * 0.5,
        scale: vo.scale * 2.0,
        ..*vo
    }
}

/// Builds the blocker for `other`: an RVO when `reciprocal`, else a VO.
pub fn blocker_for(ego: &DiscAgent, other: &DiscAgent, time_horizon: f64, reciprocal: bool) -> Blocker {
    match compute_vo(ego, other, time_horizon) {
        Ok(vo) if reciprocal => Blocker::Cone(compute_rvo(&vo, ego.velocity)),
        Ok(vo) => Blocker::Cone(vo),
        Err(_) => {
            let d = other.position - ego.position;
            let (apex, scale) = if reciprocal {
                ((other.velocity + ego.velocity) * 0.5, 2.0)
            } else {
                (other.velocity, 1.0)
            };
            Blocker::Overlap {
                source_agent: other.id,
                apex,
                scale,
                direction: d.normalized().unwrap_or(Vec2::new(1.0, 0.0)),
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Selection {
    pub velocity: Vec2,
    pub index: usize,
    /// False when every candidate was blocked.
    pub feasible: bool,
}

/// `argmin ‖v − v_target‖` over candidates outside every blocker, ties to
/// the earlier candidate. With no free candidate, minimizes the largest
/// penetration, then the distance to `v_target`.
pub fn select_velocity(candidates: &[Vec2], blockers: &[Blocker], v_target: Vec2) -> Selection {
    assert!(!candidates.is_empty(), "select_velocity needs candidates");
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in candidates.iter().enumerate() {
        if blockers.iter().any(|b| b.contains(v)) {
            continue;
        }
        let d = (v - v_target).norm_sq();
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    if let Some((i, _)) = best {
        return Selection {
            velocity: candidates[i],
            index: i,
            feasible: true,
        };
    }
    let mut best = (0, f64::INFINITY, f64::INFINITY);
    for (i, &v) in candidates.iter().enumerate() {
        let depth = blockers
            .iter()
            .map(|b| b.penetration(v))
            .fold(0.0, f64::max);
        let d = (v - v_target).norm_sq();
        if depth < best.1 || (depth == best.1 && d < best.2) {
            best = (i, depth, d);
        }
    }
    Selection {
        velocity: candidates[best.0],
        index: best.0,
        feasible: false,
    }
}

/// Split of a candidate budget into (speed levels, directions). Speed
/// levels are the largest power of two not above √count, so doubling the
/// count refines the grid without dropping points.
pub fn grid_shape(count: usize) -> (usize, usize) {
    let count = count.max(1);
    let speeds = 1usize << ((count.ilog2()) / 2);
    (speeds, (count / speeds).max(1))
}

/// Candidate velocities: `v_target`, zero, then a polar grid of speeds
/// `k·v_max/S` and directions spaced evenly around `reference_angle`.
/// Directions farther than `heading_window` from the reference are dropped.
pub fn polar_candidates(
    count: usize,
    v_max: f64,
    reference_angle: f64,
    heading_window: f64,
    v_target: Vec2,
) -> Vec<Vec2> {
    let (speeds, dirs) = grid_shape(count);
    let mut out = Vec::with_capacity(speeds * dirs + 2);
    out.push(v_target);
    out.push(Vec2::ZERO);
    for j in 0..dirs {
        // Interleave left/right offsets: 0, +1, −1, +2, −2, ...
        let k = j.div_ceil(2) as f64;
        let sign = if j % 2 == 1 { 1.0 } else { -1.0 };
        let offset = sign * k * 2.0 * PI / dirs as f64;
        if normalize_angle(offset).abs() > heading_window + 1e-12 {
            continue;
        }
        let dir = Vec2::from_angle(reference_angle + offset);
        for s in 1..=speeds {
            out.push(dir * (v_max * s as f64 / speeds as f64));
        }
    }
    out
}
