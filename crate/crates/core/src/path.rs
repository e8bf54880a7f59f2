//! Polyline reference paths with arc-length parameterization.

use crate::error::{Error, Result};
use crate::geometry::{normalize_angle, Vec2};

/// Waypoint spacing produced by [`PathBuilder`].
pub const DEFAULT_SPACING: f64 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub struct ReferencePath {
    waypoints: Vec<Vec2>,
    arc: Vec<f64>,
}

/// Closest-point query result.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PathQuery {
    pub arc_length: f64,
    /// Signed distance from the path, positive to the left.
    pub lateral: f64,
    pub index: usize,
}

impl ReferencePath {
    pub fn new(waypoints: Vec<Vec2>) -> Result<Self> {
        if waypoints.is_empty() {
            return Err(Error::Config("reference path needs at least one waypoint".into()));
        }
        if waypoints.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("path waypoint"));
        }
        let mut arc = Vec::with_capacity(waypoints.len());
        let mut s = 0.0;
        arc.push(0.0);
        for w in waypoints.windows(2) {
            s += w[0].distance(w[1]);
            arc.push(s);
        }
        Ok(Self { waypoints, arc })
    }

    pub fn waypoints(&self) -> &[Vec2] {
        &self.waypoints
    }

    pub fn arc_lengths(&self) -> &[f64] {
        &self.arc
    }

    pub fn total_length(&self) -> f64 {
        *self.arc.last().unwrap()
    }

    pub fn start(&self) -> Vec2 {
        self.waypoints[0]
    }

    pub fn end(&self) -> Vec2 {
        *self.waypoints.last().unwrap()
    }

    fn segment_at(&self, s: f64) -> usize {
        let n = self.waypoints.len();
        if n < 2 {
            return 0;
        }
        // Last segment whose start arc-length is <= s.
        let i = self.arc.partition_point(|&a| a <= s);
        i.saturating_sub(1).min(n - 2)
    }

    /// Point at arc-length `s`, clamped to the path ends.
    pub fn point_at(&self, s: f64) -> Vec2 {
        if self.waypoints.len() == 1 {
            return self.waypoints[0];
        }
        let s = s.clamp(0.0, self.total_length());
        let i = self.segment_at(s);
        let (a, b) = (self.waypoints[i], self.waypoints[i + 1]);
        let len = self.arc[i + 1] - self.arc[i];
        if len <= 0.0 {
            return a;
        }
        a + (b - a) * ((s - self.arc[i]) / len)
    }

    /// Unit tangent at arc-length `s`.
    pub fn tangent_at(&self, s: f64) -> Vec2 {
        if self.waypoints.len() == 1 {
            return Vec2::new(1.0, 0.0);
        }
        let i = self.segment_at(s.clamp(0.0, self.total_length()));
        (self.waypoints[i + 1] - self.waypoints[i])
            .normalized()
            .unwrap_or(Vec2::new(1.0, 0.0))
    }

    pub fn heading_at(&self, s: f64) -> f64 {
        normalize_angle(self.tangent_at(s).angle())
    }

    /// Closest point on the path. Ties go to the smaller arc-length.
    pub fn query(&self, p: Vec2) -> PathQuery {
        let n = self.waypoints.len();
        self.query_segments(p, 0, n.saturating_sub(1))
    }

    /// Like [`query`](Self::query) but only scans segments within `window`
    /// of `hint`.
    pub fn query_near(&self, p: Vec2, hint: usize, window: usize) -> PathQuery {
        let segs = self.waypoints.len().saturating_sub(1);
        let lo = hint.saturating_sub(window).min(segs);
        let hi = (hint + window + 1).min(segs);
        self.query_segments(p, lo, hi)
    }

    fn query_segments(&self, p: Vec2, lo: usize, hi: usize) -> PathQuery {
        if self.waypoints.len() == 1 || lo >= hi {
            let i = lo.min(self.waypoints.len() - 1);
            return PathQuery {
                arc_length: self.arc[i],
                lateral: p.distance(self.waypoints[i]),
                index: i,
            };
        }
        let mut best = f64::INFINITY;
        let mut out = PathQuery {
            arc_length: 0.0,
            lateral: 0.0,
            index: 0,
        };
        for i in lo..hi {
            let a = self.waypoints[i];
            let ab = self.waypoints[i + 1] - a;
            let len_sq = ab.norm_sq();
            let t = if len_sq > 0.0 {
                ((p - a).dot(ab) / len_sq).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let foot = a + ab * t;
            let d = p.distance(foot);
            if d < best {
                best = d;
                let side = ab.cross(p - foot);
                out = PathQuery {
                    arc_length: self.arc[i] + t * len_sq.sqrt(),
                    lateral: if side < 0.0 { -d } else { d },
                    index: if t <= 0.5 { i } else { i + 1 },
                };
            }
        }
        out
    }

    /// The same path traversed backwards.
    pub fn reversed(&self) -> ReferencePath {
        let mut w = self.waypoints.clone();
        w.reverse();
        ReferencePath::new(w).expect("reversing a valid path")
    }

    /// Sub-path starting at arc-length `s`.
    pub fn suffix(&self, s: f64) -> ReferencePath {
        let s = s.clamp(0.0, self.total_length());
        let i = self.segment_at(s);
        let first = self.point_at(s);
        let mut w = vec![first];
        w.extend(
            self.waypoints[(i + 1).min(self.waypoints.len())..]
                .iter()
                .copied()
                .filter(|q| q.distance(first) > 1e-9),
        );
        ReferencePath::new(w).expect("suffix of a valid path")
    }
}

/// Builds paths from line and arc primitives, densified to a fixed spacing.
#[derive(Clone, Debug)]
pub struct PathBuilder {
    points: Vec<Vec2>,
    pos: Vec2,
    heading: f64,
    spacing: f64,
}

impl PathBuilder {
    pub fn new(start: Vec2, heading: f64) -> Self {
        Self {
            points: vec![start],
            pos: start,
            heading,
            spacing: DEFAULT_SPACING,
        }
    }

    pub fn line(mut self, length: f64) -> Self {
        let n = (length / self.spacing).ceil().max(1.0) as usize;
        let dir = Vec2::from_angle(self.heading);
        let start = self.pos;
        for k in 1..=n {
            self.points.push(start + dir * (length * k as f64 / n as f64));
        }
        self.pos = start + dir * length;
        self
    }

    /// Circular arc; positive `angle` turns left.
    pub fn arc(mut self, radius: f64, angle: f64) -> Self {
        let len = radius * angle.abs();
        let n = (len / self.spacing).ceil().max(1.0) as usize;
        let side = angle.signum();
        let center = self.pos + Vec2::from_angle(self.heading).perp() * (radius * side);
        let start_angle = (self.pos - center).angle();
        for k in 1..=n {
            let a = start_angle + angle * k as f64 / n as f64;
            self.points.push(center + Vec2::from_angle(a) * radius);
        }
        self.pos = *self.points.last().unwrap();
        self.heading = normalize_angle(self.heading + angle);
        self
    }

    pub fn position(&self) -> Vec2 {
        self.pos
    }

    pub fn heading(&self) -> f64 {
        self.heading
    }

    pub fn build(self) -> ReferencePath {
        ReferencePath::new(self.points).expect("builder points are finite")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn straight(len: f64) -> ReferencePath {
        PathBuilder::new(Vec2::ZERO, 0.0).line(len).build()
    }

    #[test]
    fn first_waypoint_query() {
        let p = straight(20.0);
        let q = p.query(Vec2::ZERO);
        assert_eq!((q.arc_length, q.lateral, q.index), (0.0, 0.0, 0));
    }

    #[test]
    fn left_offset_query() {
        let p = straight(20.0);
        let q = p.query(Vec2::new(10.0, 2.0));
        assert!((q.arc_length - 10.0).abs() < 1e-12);
        assert!((q.lateral - 2.0).abs() < 1e-12);
        assert_eq!(q.index, (10.0 / DEFAULT_SPACING) as usize);
        assert!(p.query(Vec2::new(3.0, -1.5)).lateral < 0.0);
    }

    #[test]
    fn tie_goes_to_smaller_arc_length() {
        // A hairpin: out along +x then back along y = 2. The point (5, 1) is 1 m from both legs.
        let p = ReferencePath::new(vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(10.0, 0.0),
            Vec2::new(10.0, 2.0),
            Vec2::new(0.0, 2.0),
        ])
        .unwrap();
        let q = p.query(Vec2::new(5.0, 1.0));
        assert!((q.arc_length - 5.0).abs() < 1e-12);
    }

    #[test]
    fn spacing_and_length() {
        let p = PathBuilder::new(Vec2::ZERO, 0.0)
            .line(10.0)
            .arc(5.0, PI / 2.0)
            .line(10.0)
            .build();
        let expected = 20.0 + 5.0 * PI / 2.0;
        assert!((p.total_length() - expected).abs() < 0.05);
        for w in p.waypoints().windows(2) {
            assert!(w[0].distance(w[1]) <= 1.0);
        }
        assert!((p.end() - Vec2::new(15.0, 15.0)).norm() < 1e-9);
        assert!((p.heading_at(p.total_length()) - PI / 2.0).abs() < 1e-2);
    }

    #[test]
    fn point_at_clamps() {
        let p = straight(10.0);
        assert_eq!(p.point_at(-3.0), Vec2::ZERO);
        assert!((p.point_at(42.0) - Vec2::new(10.0, 0.0)).norm() < 1e-12);
        assert!((p.point_at(2.25) - Vec2::new(2.25, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn query_near_matches_full_scan_locally() {
        let p = PathBuilder::new(Vec2::ZERO, 0.3).line(5.0).arc(6.0, 1.2).line(8.0).build();
        let pt = p.point_at(7.3) + Vec2::new(0.2, -0.4);
        let full = p.query(pt);
        let near = p.query_near(pt, full.index, 4);
        assert_eq!(full, near);
    }

    #[test]
    fn suffix_and_reverse() {
        let p = straight(10.0);
        let s = p.suffix(4.0);
        assert!((s.total_length() - 6.0).abs() < 1e-12);
        assert!((s.start() - Vec2::new(4.0, 0.0)).norm() < 1e-12);
        let r = p.reversed();
        assert_eq!(r.start(), p.end());
        assert!((r.total_length() - 10.0).abs() < 1e-12);
    }
}
