//! Procedural maps and scenario sampling.
//!
//! Maps use right-hand traffic with 5.5 m lanes. Lanes are wide enough that
//! two vehicles in opposing lanes do not overlap under the disc
//! approximation used by the velocity-obstacle code.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{obb_distance, obb_intersect, Pose2D, Vec2};
use crate::kinematics::{AgentKind, AgentState};
use crate::path::{PathBuilder, ReferencePath};
use crate::rng::rng_for;

pub const LANE_OFFSET: f64 = 2.75;
pub const BIKE_OFFSET: f64 = 6.25;
pub const SIDEWALK_OFFSET: f64 = 8.0;
pub const EGO_ROUTE_LENGTH: f64 = 52.0;
pub const EGO_START_SPEED: f64 = 4.0;
pub const MAX_PLACEMENT_ATTEMPTS: usize = 1000;
/// Minimum box-to-box gap between exo-agents at placement.
pub const EXO_CLEARANCE: f64 = 0.5;
/// Minimum box-to-box gap between any exo-agent and the ego at placement.
pub const EGO_CLEARANCE: f64 = 5.0;
pub const DEFAULT_N_EXO: usize = 15;
pub const DEFAULT_HORIZON_TICKS: u32 = 1000;

const INTERSECTION_HALF: f64 = 8.0;
const RIGHT_TURN_RADIUS: f64 = INTERSECTION_HALF - LANE_OFFSET;
const LEFT_TURN_RADIUS: f64 = INTERSECTION_HALF + LANE_OFFSET;
const RING_RADIUS: f64 = 16.0;
const RING_ENTRY_RADIUS: f64 = 8.0;
const ARM_LENGTH: f64 = 45.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapTemplate {
    Straight,
    Intersection,
    Roundabout,
    /// Draws one of the other three templates from the seed.
    Mixed,
}

impl MapTemplate {
    pub fn as_str(self) -> &'static str {
        match self {
            MapTemplate::Straight => "straight",
            MapTemplate::Intersection => "intersection",
            MapTemplate::Roundabout => "roundabout",
            MapTemplate::Mixed => "mixed",
        }
    }
}

impl fmt::Display for MapTemplate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MapTemplate {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "straight" => MapTemplate::Straight,
            "intersection" => MapTemplate::Intersection,
            "roundabout" => MapTemplate::Roundabout,
            "mixed" => MapTemplate::Mixed,
            _ => return Err(Error::Config(format!("unknown map template `{s}`"))),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PathKind {
    Lane,
    BikeLane,
    Walkway,
}

impl PathKind {
    pub fn serves(self, kind: AgentKind) -> bool {
        match self {
            PathKind::Lane => matches!(kind, AgentKind::Vehicle | AgentKind::Ego),
            PathKind::BikeLane => kind == AgentKind::Cyclist,
            PathKind::Walkway => kind == AgentKind::Pedestrian,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MapPath {
    pub kind: PathKind,
    pub path: ReferencePath,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExoSpec {
    pub state: AgentState,
    pub path: ReferencePath,
    /// Zero means the agent is parked for the whole episode.
    pub preferred_speed: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub seed: u64,
    pub template: MapTemplate,
    pub map: Vec<MapPath>,
    pub ego_path: ReferencePath,
    pub ego_start: AgentState,
    pub exo: Vec<ExoSpec>,
    pub horizon_ticks: u32,
}

impl Scenario {
    /// Map paths an agent of `kind` could be following.
    pub fn paths_for(&self, kind: AgentKind) -> impl Iterator<Item = &ReferencePath> {
        self.map
            .iter()
            .filter(move |m| m.kind.serves(kind))
            .map(|m| &m.path)
    }

    /// Ego alone on a straight road, for tests and sanity runs.
    pub fn empty_road(horizon_ticks: u32) -> Scenario {
        let map = straight_map();
        let ego_path = straight_ego_route();
        let ego_start = ego_on(&ego_path);
        Scenario {
            seed: 0,
            template: MapTemplate::Straight,
            map,
            ego_path,
            ego_start,
            exo: Vec::new(),
            horizon_ticks,
        }
    }

    /// Empty road plus one parked vehicle centered on the ego lane,
    /// `distance` meters (center to center) ahead of the ego.
    pub fn static_obstacle(distance: f64, horizon_ticks: u32) -> Scenario {
        let mut sc = Scenario::empty_road(horizon_ticks);
        let ego = sc.ego_start;
        let p = sc.ego_path.point_at(distance);
        let h = sc.ego_path.heading_at(distance);
        let state = AgentState::new(1, AgentKind::Vehicle, Pose2D::new(p.x, p.y, h), 0.0);
        debug_assert!(!obb_intersect(&state.bounding_box(), &ego.bounding_box()));
        sc.exo.push(ExoSpec {
            state,
            path: sc.ego_path.suffix(distance),
            preferred_speed: 0.0,
        });
        sc
    }
}

/// The `[scenario]`-style file describing a generated scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub seed: u64,
    pub template: MapTemplate,
    pub n_exo: usize,
    pub horizon_ticks: u32,
}

impl ScenarioFile {
    pub fn generate(&self) -> Result<Scenario> {
        let mut sc = generate_scenario(self.seed, self.template, self.n_exo)?;
        sc.horizon_ticks = self.horizon_ticks;
        Ok(sc)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario file serializes")
    }

    pub fn load(path: &Path) -> Result<ScenarioFile> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))
    }
}

fn rotate_path(p: &ReferencePath, angle: f64) -> ReferencePath {
    ReferencePath::new(p.waypoints().iter().map(|w| w.rotate(angle)).collect())
        .expect("rotation keeps points finite")
}

fn ego_on(path: &ReferencePath) -> AgentState {
    let p = path.start();
    AgentState::new(
        0,
        AgentKind::Ego,
        Pose2D::new(p.x, p.y, path.heading_at(0.0)),
        EGO_START_SPEED,
    )
}

fn line(from: Vec2, to: Vec2) -> ReferencePath {
    let d = to - from;
    PathBuilder::new(from, d.angle()).line(d.norm()).build()
}

fn both_ways(kind: PathKind, p: ReferencePath, out: &mut Vec<MapPath>) {
    out.push(MapPath {
        kind,
        path: p.reversed(),
    });
    out.push(MapPath { kind, path: p });
}

fn straight_map() -> Vec<MapPath> {
    let l = ARM_LENGTH;
    let mut m = vec![
        MapPath {
            kind: PathKind::Lane,
            path: line(Vec2::new(-l, -LANE_OFFSET), Vec2::new(l, -LANE_OFFSET)),
        },
        MapPath {
            kind: PathKind::Lane,
            path: line(Vec2::new(l, LANE_OFFSET), Vec2::new(-l, LANE_OFFSET)),
        },
        MapPath {
            kind: PathKind::BikeLane,
            path: line(Vec2::new(-l, -BIKE_OFFSET), Vec2::new(l, -BIKE_OFFSET)),
        },
        MapPath {
            kind: PathKind::BikeLane,
            path: line(Vec2::new(l, BIKE_OFFSET), Vec2::new(-l, BIKE_OFFSET)),
        },
    ];
    for y in [-SIDEWALK_OFFSET, SIDEWALK_OFFSET] {
        both_ways(PathKind::Walkway, line(Vec2::new(-l, y), Vec2::new(l, y)), &mut m);
    }
    let edge = SIDEWALK_OFFSET + 1.0;
    for x in [-12.0, 12.0] {
        both_ways(PathKind::Walkway, line(Vec2::new(x, -edge), Vec2::new(x, edge)), &mut m);
    }
    m
}

fn straight_ego_route() -> ReferencePath {
    let h = 0.5 * EGO_ROUTE_LENGTH;
    line(Vec2::new(-h, -LANE_OFFSET), Vec2::new(h, -LANE_OFFSET))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Turn {
    Straight,
    Left,
    Right,
}

/// Route entering from the west arm, built in that arm's frame.
fn intersection_route(turn: Turn, lead_in: f64, lead_out: f64) -> ReferencePath {
    let start = Vec2::new(-INTERSECTION_HALF - lead_in, -LANE_OFFSET);
    let b = PathBuilder::new(start, 0.0).line(lead_in);
    match turn {
        Turn::Straight => b.line(2.0 * INTERSECTION_HALF + lead_out),
        Turn::Right => b.arc(RIGHT_TURN_RADIUS, -FRAC_PI_2).line(lead_out),
        Turn::Left => b.arc(LEFT_TURN_RADIUS, FRAC_PI_2).line(lead_out),
    }
    .build()
}

fn turn_length(turn: Turn) -> f64 {
    match turn {
        Turn::Straight => 2.0 * INTERSECTION_HALF,
        Turn::Right => RIGHT_TURN_RADIUS * FRAC_PI_2,
        Turn::Left => LEFT_TURN_RADIUS * FRAC_PI_2,
    }
}

const ARM_ANGLES: [f64; 4] = [0.0, FRAC_PI_2, PI, -FRAC_PI_2];

fn intersection_map() -> Vec<MapPath> {
    let mut m = Vec::new();
    let arm = ARM_LENGTH - INTERSECTION_HALF;
    for &rot in &ARM_ANGLES {
        for turn in [Turn::Straight, Turn::Left, Turn::Right] {
            m.push(MapPath {
                kind: PathKind::Lane,
                path: rotate_path(&intersection_route(turn, arm, arm), rot),
            });
        }
        let bike = line(
            Vec2::new(-ARM_LENGTH, -BIKE_OFFSET),
            Vec2::new(ARM_LENGTH, -BIKE_OFFSET),
        );
        m.push(MapPath {
            kind: PathKind::BikeLane,
            path: rotate_path(&bike, rot),
        });
    }
    for rot in [0.0, FRAC_PI_2] {
        for y in [-SIDEWALK_OFFSET, SIDEWALK_OFFSET] {
            let walk = line(Vec2::new(-ARM_LENGTH, y), Vec2::new(ARM_LENGTH, y));
            both_ways(PathKind::Walkway, rotate_path(&walk, rot), &mut m);
        }
    }
    m
}

fn intersection_ego_route(turn: Turn) -> ReferencePath {
    let rest = EGO_ROUTE_LENGTH - turn_length(turn);
    intersection_route(turn, 0.5 * rest, 0.5 * rest)
}

struct RingGeometry {
    /// x of the point where the entry arc leaves the straight approach.
    entry_x: f64,
    /// Right-turn angle of the entry and exit arcs.
    merge_angle: f64,
}

fn ring_geometry() -> RingGeometry {
    let cy = -LANE_OFFSET - RING_ENTRY_RADIUS;
    let reach = RING_RADIUS + RING_ENTRY_RADIUS;
    let cx = -(reach * reach - cy * cy).sqrt();
    let phi_in = cy.atan2(cx);
    RingGeometry {
        entry_x: cx,
        merge_angle: -(phi_in + FRAC_PI_2),
    }
}

/// Route entering the ring from the west arm and leaving through the arm
/// `exits` quarter turns counter-clockwise around the ring (1 = south).
fn roundabout_route(exits: u32, lead_in: f64, lead_out: f64) -> ReferencePath {
    let g = ring_geometry();
    let ring_sweep = FRAC_PI_2 * exits as f64 + 2.0 * g.merge_angle - PI;
    let start = Vec2::new(g.entry_x - lead_in, -LANE_OFFSET);
    PathBuilder::new(start, 0.0)
        .line(lead_in)
        .arc(RING_ENTRY_RADIUS, -g.merge_angle)
        .arc(RING_RADIUS, ring_sweep)
        .arc(RING_ENTRY_RADIUS, -g.merge_angle)
        .line(lead_out)
        .build()
}

fn roundabout_core_length(exits: u32) -> f64 {
    roundabout_route(exits, 0.0, 0.0).total_length()
}

fn roundabout_map() -> Vec<MapPath> {
    let g = ring_geometry();
    let lead = ARM_LENGTH + g.entry_x;
    let mut m = Vec::new();
    for &rot in &ARM_ANGLES {
        for exits in 1..=3 {
            let path = rotate_path(&roundabout_route(exits, lead, lead), rot);
            // No separate bike lanes on the ring: cyclists share the lanes.
            m.push(MapPath {
                kind: PathKind::BikeLane,
                path: path.clone(),
            });
            m.push(MapPath {
                kind: PathKind::Lane,
                path,
            });
        }
        let edge = SIDEWALK_OFFSET + 1.0;
        let x = -RING_RADIUS - 12.0;
        let mut local = Vec::new();
        both_ways(PathKind::Walkway, line(Vec2::new(x, -edge), Vec2::new(x, edge)), &mut local);
        for y in [-SIDEWALK_OFFSET, SIDEWALK_OFFSET] {
            both_ways(
                PathKind::Walkway,
                line(Vec2::new(-ARM_LENGTH, y), Vec2::new(-RING_RADIUS - 10.0, y)),
                &mut local,
            );
        }
        m.extend(local.into_iter().map(|mp| MapPath {
            kind: mp.kind,
            path: rotate_path(&mp.path, rot),
        }));
    }
    m
}

fn roundabout_ego_route(exits: u32) -> ReferencePath {
    let core = roundabout_core_length(exits);
    let lead_in = 6.0;
    let lead_out = (EGO_ROUTE_LENGTH - core - lead_in).max(6.0);
    roundabout_route(exits, lead_in, lead_out)
}

fn sample_kind(rng: &mut impl Rng) -> AgentKind {
    let u: f64 = rng.random();
    if u < 0.4 {
        AgentKind::Vehicle
    } else if u < 0.6 {
        AgentKind::Cyclist
    } else {
        AgentKind::Pedestrian
    }
}

/// Samples a scenario. Deterministic in `(seed, template, n_exo)`.
pub fn generate_scenario(seed: u64, template: MapTemplate, n_exo: usize) -> Result<Scenario> {
    let mut rng = rng_for(seed, &[0x5CE7]);
    let concrete = match template {
        MapTemplate::Mixed => match rng.random_range(0..3) {
            0 => MapTemplate::Straight,
            1 => MapTemplate::Intersection,
            _ => MapTemplate::Roundabout,
        },
        t => t,
    };
    let (map, ego_path) = match concrete {
        MapTemplate::Straight => (straight_map(), straight_ego_route()),
        MapTemplate::Intersection => {
            let turn = [Turn::Straight, Turn::Left, Turn::Right][rng.random_range(0..3)];
            (intersection_map(), intersection_ego_route(turn))
        }
        MapTemplate::Roundabout => (roundabout_map(), roundabout_ego_route(rng.random_range(1..=3))),
        MapTemplate::Mixed => unreachable!(),
    };
    let ego_start = ego_on(&ego_path);
    let ego_box = ego_start.bounding_box();

    let mut exo: Vec<ExoSpec> = Vec::with_capacity(n_exo);
    for index in 0..n_exo {
        let kind = sample_kind(&mut rng);
        let candidates: Vec<&ReferencePath> = map
            .iter()
            .filter(|m| m.kind.serves(kind))
            .map(|m| &m.path)
            .collect();
        let (lo, hi) = kind.preferred_speed_range();
        let mut placed = None;
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let path = candidates[rng.random_range(0..candidates.len())];
            let s = rng.random_range(0.0..(path.total_length() - 3.0).max(0.0));
            let speed = rng.random_range(lo..=hi);
            let p = path.point_at(s);
            let state = AgentState::new(
                (index + 1) as u32,
                kind,
                Pose2D::new(p.x, p.y, path.heading_at(s)),
                speed,
            );
            let b = state.bounding_box();
            if obb_distance(&b, &ego_box) < EGO_CLEARANCE {
                continue;
            }
            if exo
                .iter()
                .any(|o| obb_distance(&b, &o.state.bounding_box()) < EXO_CLEARANCE)
            {
                continue;
            }
            placed = Some(ExoSpec {
                state,
                path: path.suffix(s),
                preferred_speed: speed,
            });
            break;
        }
        match placed {
            Some(spec) => exo.push(spec),
            None => {
                return Err(Error::PlacementFailed {
                    index,
                    attempts: MAX_PLACEMENT_ATTEMPTS,
                })
            }
        }
    }

    Ok(Scenario {
        seed,
        template,
        map,
        ego_path,
        ego_start,
        exo,
        horizon_ticks: DEFAULT_HORIZON_TICKS,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ego_routes_are_long_enough() {
        for t in [Turn::Straight, Turn::Left, Turn::Right] {
            let r = intersection_ego_route(t);
            assert!(r.total_length() >= 50.0, "{t:?}: {}", r.total_length());
            assert!((r.total_length() - EGO_ROUTE_LENGTH).abs() < 0.1);
        }
        for exits in 1..=3 {
            assert!(roundabout_ego_route(exits).total_length() >= 50.0);
        }
        assert!(straight_ego_route().total_length() >= 50.0);
    }

    #[test]
    fn roundabout_routes_are_smooth_and_land_on_exit_lane() {
        let g = ring_geometry();
        for exits in 1..=3 {
            let r = roundabout_route(exits, 5.0, 5.0);
            let end = r.end();
            let expected = Vec2::new(g.entry_x - 5.0, LANE_OFFSET).rotate(FRAC_PI_2 * exits as f64);
            assert!(end.distance(expected) < 1e-6, "exit {exits}: {end:?} vs {expected:?}");
            for w in r.waypoints().windows(3) {
                let turn = (w[2] - w[1]).angle() - (w[1] - w[0]).angle();
                let turn = crate::geometry::normalize_angle(turn);
                assert!(turn.abs() < 0.1);
            }
        }
    }

    #[test]
    fn turn_routes_end_in_the_right_lanes() {
        let r = intersection_route(Turn::Right, 5.0, 5.0);
        assert!((r.end() - Vec2::new(-LANE_OFFSET, -INTERSECTION_HALF - 5.0)).norm() < 1e-9);
        let l = intersection_route(Turn::Left, 5.0, 5.0);
        assert!((l.end() - Vec2::new(LANE_OFFSET, INTERSECTION_HALF + 5.0)).norm() < 1e-9);
    }

    #[test]
    fn empty_scenario_has_only_ego() {
        let sc = generate_scenario(1, MapTemplate::Straight, 0).unwrap();
        assert!(sc.exo.is_empty());
        assert!(sc.ego_path.total_length() >= 50.0);
    }

    #[test]
    fn generation_is_deterministic_and_seed_sensitive() {
        let a = generate_scenario(1, MapTemplate::Mixed, 10).unwrap();
        let b = generate_scenario(1, MapTemplate::Mixed, 10).unwrap();
        assert_eq!(format!("{a:?}"), format!("{b:?}"));
        let c = generate_scenario(2, MapTemplate::Mixed, 10).unwrap();
        let pa: Vec<_> = a.exo.iter().map(|e| e.state.position()).collect();
        let pc: Vec<_> = c.exo.iter().map(|e| e.state.position()).collect();
        assert_ne!(pa, pc);
    }

    #[test]
    fn placements_are_collision_free() {
        for template in [
            MapTemplate::Straight,
            MapTemplate::Intersection,
            MapTemplate::Roundabout,
        ] {
            for seed in 0..10 {
                let sc = generate_scenario(seed, template, DEFAULT_N_EXO).unwrap();
                let mut boxes = vec![sc.ego_start.bounding_box()];
                boxes.extend(sc.exo.iter().map(|e| e.state.bounding_box()));
                for i in 0..boxes.len() {
                    for j in i + 1..boxes.len() {
                        assert!(!obb_intersect(&boxes[i], &boxes[j]));
                    }
                }
            }
        }
    }

    #[test]
    fn scenario_file_round_trip() {
        let f = ScenarioFile {
            seed: 9,
            template: MapTemplate::Roundabout,
            n_exo: 4,
            horizon_ticks: 300,
        };
        let back: ScenarioFile = toml::from_str(&f.to_toml()).unwrap();
        assert_eq!(back, f);
        assert_eq!(f.generate().unwrap().horizon_ticks, 300);
    }
}
