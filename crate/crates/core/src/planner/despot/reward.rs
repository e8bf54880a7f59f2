use serde::{Deserialize, Serialize};

use super::Action;

/// Penalty constants of the longitudinal driving reward.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    /// Collision penalty is `collision_scale · (v² + collision_offset)`.
    pub collision_scale: f64,
    pub collision_offset: f64,
    /// Speed term is `speed_weight · (v − v_max) / v_max`.
    pub speed_weight: f64,
    pub v_max: f64,
    pub decel_penalty: f64,
    pub lane_change_penalty: f64,
    pub gamma: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            collision_scale: -1000.0,
            collision_offset: 0.5,
            speed_weight: 4.0,
            v_max: 6.0,
            decel_penalty: -0.1,
            lane_change_penalty: -4.0,
            gamma: 0.95,
        }
    }
}

impl RewardConfig {
    pub fn collision(&self, v: f64) -> f64 {
        self.collision_scale * (v * v + self.collision_offset)
    }

    pub fn speed(&self, v: f64) -> f64 {
        self.speed_weight * (v - self.v_max) / self.v_max
    }
}

pub fn reward(speed: f64, action: Action, collided: bool, changed_lane: bool, cfg: &RewardConfig) -> f64 {
    let mut r = cfg.speed(speed);
    if collided {
        r += cfg.collision(speed);
    }
    if action == Action::Decelerate {
        r += cfg.decel_penalty;
    }
    if changed_lane {
        r += cfg.lane_change_penalty;
    }
    r
}
