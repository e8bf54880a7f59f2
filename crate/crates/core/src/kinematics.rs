//! Agent state, motion models and path tracking.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{normalize_angle, OrientedBox, Pose2D, Vec2};
use crate::path::ReferencePath;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Ego,
    Vehicle,
    Cyclist,
    Pedestrian,
}

impl AgentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AgentKind::Ego => "ego",
            AgentKind::Vehicle => "vehicle",
            AgentKind::Cyclist => "cyclist",
            AgentKind::Pedestrian => "pedestrian",
        }
    }

    pub fn parse(s: &str) -> Option<AgentKind> {
        Some(match s {
            "ego" => AgentKind::Ego,
            "vehicle" => AgentKind::Vehicle,
            "cyclist" => AgentKind::Cyclist,
            "pedestrian" => AgentKind::Pedestrian,
            _ => return None,
        })
    }

    pub fn footprint(self) -> Footprint {
        match self {
            AgentKind::Ego | AgentKind::Vehicle => Footprint::new(4.5, 1.8),
            AgentKind::Cyclist => Footprint::new(1.8, 0.6),
            AgentKind::Pedestrian => Footprint::new(0.5, 0.5),
        }
    }

    pub fn max_speed(self) -> f64 {
        match self {
            AgentKind::Ego => 6.0,
            AgentKind::Vehicle => 8.0,
            AgentKind::Cyclist => 5.0,
            AgentKind::Pedestrian => 2.0,
        }
    }

    /// Magnitude limit on speed change per second.
    pub fn max_accel(self) -> f64 {
        match self {
            AgentKind::Ego | AgentKind::Vehicle => 3.0,
            AgentKind::Cyclist => 2.0,
            AgentKind::Pedestrian => 1.5,
        }
    }

    /// Range preferred speeds are drawn from.
    pub fn preferred_speed_range(self) -> (f64, f64) {
        match self {
            AgentKind::Ego => (6.0, 6.0),
            AgentKind::Vehicle => (3.0, 6.0),
            AgentKind::Cyclist => (2.0, 4.0),
            AgentKind::Pedestrian => (0.8, 1.6),
        }
    }

    /// Uses the bicycle model (true) or holonomic point-mass motion.
    pub fn is_vehicle(self) -> bool {
        matches!(self, AgentKind::Ego | AgentKind::Vehicle)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Footprint {
    pub length: f64,
    pub width: f64,
}

impl Footprint {
    pub const fn new(length: f64, width: f64) -> Self {
        Self { length, width }
    }

    /// Radius of the disc circumscribing the footprint.
    pub fn disc_radius(&self) -> f64 {
        0.5 * self.length.hypot(self.width)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AgentState {
    pub id: u32,
    pub kind: AgentKind,
    pub pose: Pose2D,
    pub speed: f64,
    pub footprint: Footprint,
}

impl AgentState {
    pub fn new(id: u32, kind: AgentKind, pose: Pose2D, speed: f64) -> Self {
        Self {
            id,
            kind,
            pose,
            speed,
            footprint: kind.footprint(),
        }
    }

    pub fn position(&self) -> Vec2 {
        self.pose.position()
    }

    pub fn velocity(&self) -> Vec2 {
        Vec2::from_angle(self.pose.heading) * self.speed
    }

    pub fn bounding_box(&self) -> OrientedBox {
        OrientedBox::new(
            self.position(),
            self.pose.heading,
            0.5 * self.footprint.length,
            0.5 * self.footprint.width,
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VehicleParams {
    pub wheelbase: f64,
    pub max_steer: f64,
    pub v_max: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            wheelbase: 2.8,
            max_steer: 0.6,
            v_max: 6.0,
        }
    }
}

/// One forward-Euler step of the kinematic bicycle model.
pub fn bicycle_step(
    state: &AgentState,
    accel: f64,
    steer: f64,
    dt: f64,
    params: &VehicleParams,
) -> Result<AgentState> {
    if !accel.is_finite() || !steer.is_finite() || !dt.is_finite() {
        return Err(Error::NonFinite("bicycle_step command"));
    }
    if !state.pose.x.is_finite() || !state.pose.y.is_finite() || !state.speed.is_finite() {
        return Err(Error::NonFinite("bicycle_step state"));
    }
    let steer = steer.clamp(-params.max_steer, params.max_steer);
    let v = state.speed;
    let th = state.pose.heading;
    let pose = Pose2D::new(
        state.pose.x + v * th.cos() * dt,
        state.pose.y + v * th.sin() * dt,
        th + v / params.wheelbase * steer.tan() * dt,
    );
    Ok(AgentState {
        pose,
        speed: (v + accel * dt).clamp(0.0, params.v_max),
        ..*state
    })
}

/// Point-mass step: moves by `velocity·dt` and faces the direction of motion.
pub fn holonomic_step(state: &AgentState, velocity: Vec2, dt: f64) -> AgentState {
    let speed = velocity.norm();
    let heading = if speed > 1e-9 {
        velocity.angle()
    } else {
        state.pose.heading
    };
    let p = state.position() + velocity * dt;
    AgentState {
        pose: Pose2D::new(p.x, p.y, heading),
        speed,
        ..*state
    }
}

/// Steering angle of the pure-pursuit law toward a target point.
/// Positive angles turn left.
pub fn pursuit_steer_to(state: &AgentState, target: Vec2, params: &VehicleParams) -> f64 {
    let d = target - state.position();
    let ld = d.norm();
    if ld < 1e-12 {
        return 0.0;
    }
    let alpha = normalize_angle(d.angle() - state.pose.heading);
    (2.0 * params.wheelbase * alpha.sin() / ld)
        .atan()
        .clamp(-params.max_steer, params.max_steer)
}

/// Pure-pursuit steering toward the path point `lookahead` meters past the
/// agent's projection (or the final waypoint if that is closer).
pub fn pure_pursuit_steer(
    state: &AgentState,
    path: &ReferencePath,
    lookahead: f64,
    params: &VehicleParams,
) -> f64 {
    let s = path.query(state.position()).arc_length;
    pursuit_steer_to(state, path.point_at(s + lookahead), params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::path::PathBuilder;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn ego(x: f64, y: f64, th: f64, v: f64) -> AgentState {
        AgentState::new(0, AgentKind::Ego, Pose2D::new(x, y, th), v)
    }

    #[test]
    fn straight_identity() {
        let p = VehicleParams::default();
        let s = bicycle_step(&ego(0.0, 0.0, 0.0, 1.0), 0.0, 0.0, 1.0, &p).unwrap();
        assert_eq!((s.pose.x, s.pose.y, s.pose.heading, s.speed), (1.0, 0.0, 0.0, 1.0));
    }

    #[test]
    fn euler_speed_update_uses_old_speed_for_position() {
        let p = VehicleParams::default();
        let s = bicycle_step(&ego(0.0, 0.0, 0.0, 1.0), 1.0, 0.0, 1.0, &p).unwrap();
        assert_eq!((s.pose.x, s.pose.y, s.pose.heading, s.speed), (1.0, 0.0, 0.0, 2.0));
    }

    #[test]
    fn heading_rate_matches_fine_integrator() {
        let p = VehicleParams::default();
        let s = bicycle_step(&ego(0.0, 0.0, 0.0, 2.0), 0.0, 0.1, 0.03, &p).unwrap();
        // Independent fine integration of dθ/dt = v/L·tan δ with constant v.
        let mut th = 0.0;
        let h = 0.03 / 1000.0;
        for _ in 0..1000 {
            th += 2.0 / 2.8 * (0.1f64).tan() * h;
        }
        assert!((s.pose.heading - th).abs() < 1e-4);
    }

    #[test]
    fn speed_is_clamped_and_nonfinite_rejected() {
        let p = VehicleParams::default();
        let s = bicycle_step(&ego(0.0, 0.0, 0.0, 5.9), 3.0, 0.0, 1.0, &p).unwrap();
        assert_eq!(s.speed, 6.0);
        let s = bicycle_step(&ego(0.0, 0.0, 0.0, 0.5), -3.0, 0.0, 1.0, &p).unwrap();
        assert_eq!(s.speed, 0.0);
        assert!(bicycle_step(&ego(0.0, 0.0, 0.0, 1.0), f64::NAN, 0.0, 0.1, &p).is_err());
        assert!(bicycle_step(&ego(f64::INFINITY, 0.0, 0.0, 1.0), 0.0, 0.0, 0.1, &p).is_err());
    }

    #[test]
    fn pursuit_aligned_is_zero() {
        let path = PathBuilder::new(Vec2::ZERO, 0.0).line(50.0).build();
        let p = VehicleParams::default();
        assert_eq!(pure_pursuit_steer(&ego(5.0, 0.0, 0.0, 3.0), &path, 3.0, &p), 0.0);
    }

    #[test]
    fn pursuit_left_offset_steers_right() {
        let path = PathBuilder::new(Vec2::ZERO, 0.0).line(50.0).build();
        let p = VehicleParams::default();
        let steer = pure_pursuit_steer(&ego(5.0, 1.0, 0.0, 3.0), &path, 3.0, &p);
        // Right turns are clockwise, i.e. negative under the CCW heading convention.
        assert!(steer < 0.0);
    }

    #[test]
    fn pursuit_formula_at_forty_five_degrees() {
        let p = VehicleParams::default();
        let ld = 18f64.sqrt();
        let expected = (2.0 * p.wheelbase * (PI / 4.0).sin() / ld).atan();
        let got = pursuit_steer_to(&ego(0.0, 0.0, 0.0, 1.0), Vec2::new(3.0, 3.0), &p);
        assert!((got - expected.min(p.max_steer)).abs() < 1e-12);
        let wide = VehicleParams {
            max_steer: 1.5,
            ..p
        };
        let got = pursuit_steer_to(&ego(0.0, 0.0, 0.0, 1.0), Vec2::new(3.0, 3.0), &wide);
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn pursuit_near_path_end_targets_last_waypoint() {
        let path = PathBuilder::new(Vec2::ZERO, 0.0).line(10.0).build();
        let p = VehicleParams::default();
        let st = ego(9.0, 0.5, 0.0, 1.0);
        let direct = pursuit_steer_to(&st, Vec2::new(10.0, 0.0), &p);
        assert_eq!(pure_pursuit_steer(&st, &path, 3.0, &p), direct);
    }

    proptest! {
        #[test]
        fn heading_stays_normalized(
            th in -PI..PI,
            cmds in proptest::collection::vec((-3.0..3.0f64, -0.6..0.6f64), 1..200),
        ) {
            let p = VehicleParams::default();
            let mut s = ego(0.0, 0.0, th, 4.0);
            for (a, d) in cmds {
                s = bicycle_step(&s, a, d, 0.03, &p).unwrap();
                prop_assert!(s.pose.heading > -PI && s.pose.heading <= PI);
            }
        }

        #[test]
        fn zero_steer_keeps_heading(th in -PI..PI, v in 0.0..6.0f64, a in -3.0..3.0f64) {
            let p = VehicleParams::default();
            let s0 = ego(1.0, 2.0, th, v);
            let s = bicycle_step(&s0, a, 0.0, 0.03, &p).unwrap();
            prop_assert_eq!(s.pose.heading, s0.pose.heading);
            let d = s.position() - s0.position();
            prop_assert!(d.cross(Vec2::from_angle(th)).abs() < 1e-12);
            prop_assert!(d.dot(Vec2::from_angle(th)) >= 0.0);
        }
    }
}
