//! Nearest-neighbor predictors over a database of logged trajectory windows.

use std::path::Path;
use std::sync::Arc;

use super::{PredictionQuery, PredictionSet, Predictor, MAX_MODES};
use crate::episode::{EpisodeLog, LogFrames};
use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::world::{History, HistoryFrame, T_OBS, T_PRED};

/// Agent-frame displacements between consecutive history frames.
pub const FEATURE_LEN: usize = 2 * (T_OBS - 1);
/// Agent-frame offsets of the three nearest other agents.
pub const NEIGHBOR_LEN: usize = 6;
/// Agent-frame future positions relative to the last history frame.
pub const FUTURE_LEN: usize = 2 * T_PRED;

const NEIGHBORS: usize = NEIGHBOR_LEN / 2;

#[derive(Clone, Debug, PartialEq)]
pub struct DbEntry {
    pub feature: [f64; FEATURE_LEN],
    pub neighbor: [f64; NEIGHBOR_LEN],
    pub future: [f64; FUTURE_LEN],
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrajectoryDatabase {
    pub entries: Vec<DbEntry>,
}

fn to_agent_frame(v: Vec2, heading: f64) -> Vec2 {
    v.rotate(-heading)
}

/// History feature: displacements rotated into the frame of the last
/// observed heading.
pub fn agent_frame_feature(frames: &[HistoryFrame]) -> Result<[f64; FEATURE_LEN]> {
    if frames.len() != T_OBS {
        return Err(Error::InsufficientHistory {
            needed: T_OBS,
            got: frames.len(),
        });
    }
    let heading = frames[T_OBS - 1].heading;
    let mut out = [0.0; FEATURE_LEN];
    for (i, w) in frames.windows(2).enumerate() {
        let d = to_agent_frame(w[1].pos - w[0].pos, heading);
        out[2 * i] = d.x;
        out[2 * i + 1] = d.y;
    }
    Ok(out)
}

/// Offsets of the nearest three `others` in the agent frame, nearest first,
/// zero-padded.
pub fn neighbor_feature(last: &HistoryFrame, others: &[Vec2]) -> [f64; NEIGHBOR_LEN] {
    let mut rel: Vec<Vec2> = others.iter().map(|&p| p - last.pos).collect();
    rel.sort_by(|a, b| a.norm_sq().total_cmp(&b.norm_sq()));
    let mut out = [0.0; NEIGHBOR_LEN];
    for (i, r) in rel.iter().take(NEIGHBORS).enumerate() {
        let r = to_agent_frame(*r, last.heading);
        out[2 * i] = r.x;
        out[2 * i + 1] = r.y;
    }
    out
}

impl TrajectoryDatabase {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Indices of the `k` entries nearest to the query, nearest first,
    /// ties to the earlier entry.
    pub fn nearest(
        &self,
        feature: &[f64; FEATURE_LEN],
        neighbor: Option<&[f64; NEIGHBOR_LEN]>,
        k: usize,
    ) -> Vec<(usize, f64)> {
        let mut best: Vec<(usize, f64)> = Vec::with_capacity(k + 1);
        for (i, e) in self.entries.iter().enumerate() {
            let bound = if best.len() == k { best[k - 1].1 } else { f64::INFINITY };
            let mut d = 0.0;
            for (a, b) in e.feature.iter().zip(feature) {
                d += (a - b) * (a - b);
            }
            if let Some(n) = neighbor {
                for (a, b) in e.neighbor.iter().zip(n) {
                    d += (a - b) * (a - b);
                }
            }
            if d < bound {
                let pos = best.partition_point(|&(_, bd)| bd <= d);
                best.insert(pos, (i, d));
                best.truncate(k);
            }
        }
        best
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
        let mut header: Vec<String> = Vec::with_capacity(FEATURE_LEN + NEIGHBOR_LEN + FUTURE_LEN);
        for i in 0..T_OBS - 1 {
            header.push(format!("hist_dx{i}"));
            header.push(format!("hist_dy{i}"));
        }
        for i in 0..NEIGHBORS {
            header.push(format!("nbr_x{i}"));
            header.push(format!("nbr_y{i}"));
        }
        for i in 0..T_PRED {
            header.push(format!("fut_x{i}"));
            header.push(format!("fut_y{i}"));
        }
        w.write_record(&header).map_err(|e| csv_io(path, e))?;
        for e in &self.entries {
            let row = e
                .feature
                .iter()
                .chain(&e.neighbor)
                .chain(&e.future)
                .map(|v| format!("{v}"));
            w.write_record(row).map_err(|e| csv_io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<TrajectoryDatabase> {
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_io(path, e))?;
        let width = FEATURE_LEN + NEIGHBOR_LEN + FUTURE_LEN;
        if r.headers().map_err(|e| csv_io(path, e))?.len() != width {
            return Err(Error::parse(path, format!("expected {width} columns")));
        }
        let mut entries = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| csv_io(path, e))?;
            let vals: Vec<f64> = rec
                .iter()
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::parse(path, format!("row {}: {e}", line + 2)))?;
            if vals.len() != width || vals.iter().any(|v| !v.is_finite()) {
                return Err(Error::parse(path, format!("row {}: bad values", line + 2)));
            }
            let mut e = DbEntry {
                feature: [0.0; FEATURE_LEN],
                neighbor: [0.0; NEIGHBOR_LEN],
                future: [0.0; FUTURE_LEN],
            };
            e.feature.copy_from_slice(&vals[..FEATURE_LEN]);
            e.neighbor.copy_from_slice(&vals[FEATURE_LEN..FEATURE_LEN + NEIGHBOR_LEN]);
            e.future.copy_from_slice(&vals[FEATURE_LEN + NEIGHBOR_LEN..]);
            entries.push(e);
        }
        Ok(TrajectoryDatabase { entries })
    }
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    Error::parse(path, e.to_string())
}

/// One entry per window of `T_OBS + T_PRED` consecutive frames of any
/// agent, sliding by one frame, ordered by (log, agent id, start frame).
pub fn build_database(logs: &[EpisodeLog]) -> Result<TrajectoryDatabase> {
    if logs.is_empty() {
        return Err(Error::NoQualifyingSegments);
    }
    let mut entries = Vec::new();
    for log in logs {
        let table = log.frames();
        add_windows(&table, &mut entries);
    }
    if entries.is_empty() {
        return Err(Error::NoQualifyingSegments);
    }
    Ok(TrajectoryDatabase { entries })
}

fn add_windows(table: &LogFrames, out: &mut Vec<DbEntry>) {
    let span = T_OBS + T_PRED;
    for agent in 0..table.agent_count() {
        let n = table.frame_count();
        let mut start = 0;
        while start + span <= n {
            let window: Option<Vec<HistoryFrame>> =
                (start..start + span).map(|f| table.get(f, agent)).collect();
            let Some(window) = window else {
                start += 1;
                continue;
            };
            let hist = &window[..T_OBS];
            let last = hist[T_OBS - 1];
            let feature = agent_frame_feature(hist).expect("window has T_OBS frames");
            let others: Vec<Vec2> = table.positions_at(start + T_OBS - 1, agent);
            let neighbor = neighbor_feature(&last, &others);
            let mut future = [0.0; FUTURE_LEN];
            for (k, f) in window[T_OBS..].iter().enumerate() {
                let r = to_agent_frame(f.pos - last.pos, last.heading);
                future[2 * k] = r.x;
                future[2 * k + 1] = r.y;
            }
            out.push(DbEntry {
                feature,
                neighbor,
                future,
            });
            start += 1;
        }
    }
}

/// KNN, or S-KNN when `social` also matches the neighbor layout.
#[derive(Clone, Debug)]
pub struct KnnPredictor {
    pub id: String,
    pub k: usize,
    pub social: bool,
    pub latency: f64,
    pub db: Arc<TrajectoryDatabase>,
}

impl KnnPredictor {
    pub fn predict_history(&self, history: &History, neighbors: &[Vec2]) -> Result<PredictionSet> {
        if !history.complete() {
            return Err(Error::IncompleteHistory {
                observed: history.observed.min(T_OBS),
                needed: T_OBS,
            });
        }
        if self.db.is_empty() {
            return Err(Error::EmptyDatabase);
        }
        let feature = agent_frame_feature(&history.frames)?;
        let last = *history.last();
        let nbr = self.social.then(|| neighbor_feature(&last, neighbors));
        let k = self.k.clamp(1, MAX_MODES);
        let found = self.db.nearest(&feature, nbr.as_ref(), k);
        let modes: Vec<Vec<Vec2>> = found
            .iter()
            .map(|&(i, _)| {
                let fut = &self.db.entries[i].future;
                (0..T_PRED)
                    .map(|s| last.pos + Vec2::new(fut[2 * s], fut[2 * s + 1]).rotate(last.heading))
                    .collect()
            })
            .collect();
        let n = modes.len();
        Ok(PredictionSet {
            modes,
            weights: vec![1.0 / n as f64; n],
            virtual_latency: self.latency,
            k_clamped: n < self.k,
        })
    }
}

impl Predictor for KnnPredictor {
    fn id(&self) -> &str {
        &self.id
    }
    fn latency(&self) -> f64 {
        self.latency
    }
    fn predict(&self, q: &PredictionQuery<'_>) -> Result<PredictionSet> {
        self.predict_history(q.history, q.neighbors)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predict::{KNN_LATENCY, SKNN_LATENCY};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn straight_frames(origin: Vec2, heading: f64, step: f64) -> Vec<HistoryFrame> {
        (0..T_OBS)
            .map(|k| HistoryFrame {
                pos: origin + Vec2::from_angle(heading) * (step * k as f64),
                heading,
            })
            .collect()
    }

    fn entry_from(frames: &[HistoryFrame], future_step: f64, nbr: [f64; NEIGHBOR_LEN]) -> DbEntry {
        let mut future = [0.0; FUTURE_LEN];
        for k in 0..T_PRED {
            future[2 * k] = future_step * (k + 1) as f64;
            future[2 * k + 1] = 0.01 * k as f64;
        }
        DbEntry {
            feature: agent_frame_feature(frames).unwrap(),
            neighbor: nbr,
            future,
        }
    }

    fn knn(db: TrajectoryDatabase, k: usize, social: bool) -> KnnPredictor {
        KnnPredictor {
            id: "knn".into(),
            k,
            social,
            latency: if social { SKNN_LATENCY } else { KNN_LATENCY },
            db: Arc::new(db),
        }
    }

    fn brute_force(db: &TrajectoryDatabase, f: &[f64; FEATURE_LEN], n: Option<&[f64; NEIGHBOR_LEN]>, k: usize) -> Vec<usize> {
        let mut scored: Vec<(f64, usize)> = db
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let mut d: f64 = e.feature.iter().zip(f).map(|(a, b)| (a - b).powi(2)).sum();
                if let Some(n) = n {
                    d += e.neighbor.iter().zip(n).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
                }
                (d, i)
            })
            .collect();
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        scored.into_iter().take(k).map(|(_, i)| i).collect()
    }

    #[test]
    fn exact_match_returns_stored_future() {
        let frames = straight_frames(Vec2::ZERO, 0.0, 0.5);
        let db = TrajectoryDatabase {
            entries: vec![
                entry_from(&straight_frames(Vec2::ZERO, 0.0, 0.9), 0.9, [0.0; 6]),
                entry_from(&frames, 0.5, [0.0; 6]),
            ],
        };
        let p = knn(db, 1, false)
            .predict_history(&History::from_frames(1, frames.clone()), &[])
            .unwrap();
        let last = frames[T_OBS - 1].pos;
        for k in 0..T_PRED {
            let want = last + Vec2::new(0.5 * (k + 1) as f64, 0.01 * k as f64);
            assert!((p.modes[0][k] - want).norm() < 1e-12);
        }
        assert_eq!(p.virtual_latency, 0.224);
    }

    #[test]
    fn k_is_clamped_to_database_size() {
        let db = TrajectoryDatabase {
            entries: (1..=3)
                .map(|s| entry_from(&straight_frames(Vec2::ZERO, 0.0, s as f64 * 0.3), 0.3, [0.0; 6]))
                .collect(),
        };
        let p = knn(db, 6, false)
            .predict_history(&History::from_frames(1, straight_frames(Vec2::ZERO, 0.0, 0.4)), &[])
            .unwrap();
        assert_eq!(p.modes.len(), 3);
        assert!(p.k_clamped);
        assert!(p.check());
    }

    #[test]
    fn errors_on_incomplete_history_and_empty_db() {
        let mut h = History::from_frames(1, straight_frames(Vec2::ZERO, 0.0, 0.4));
        let p = knn(TrajectoryDatabase::default(), 1, false);
        assert!(matches!(p.predict_history(&h, &[]), Err(Error::EmptyDatabase)));
        h.observed = 3;
        let db = TrajectoryDatabase {
            entries: vec![entry_from(&straight_frames(Vec2::ZERO, 0.0, 0.4), 0.4, [0.0; 6])],
        };
        assert!(matches!(
            knn(db, 1, false).predict_history(&h, &[]),
            Err(Error::IncompleteHistory { .. })
        ));
    }

    #[test]
    fn nearest_six_match_exhaustive_scan_on_curved_query() {
        let db = TrajectoryDatabase {
            entries: (0..100)
                .map(|i| entry_from(&straight_frames(Vec2::ZERO, 0.0, 0.05 * i as f64), 0.1, [0.0; 6]))
                .collect(),
        };
        let curved: Vec<HistoryFrame> = (0..T_OBS)
            .map(|k| {
                let a = 0.05 * k as f64;
                HistoryFrame {
                    pos: Vec2::new(10.0 * a.sin(), 10.0 * (1.0 - a.cos())),
                    heading: a + 0.025,
                }
            })
            .collect();
        let f = agent_frame_feature(&curved).unwrap();
        let got: Vec<usize> = db.nearest(&f, None, 6).into_iter().map(|(i, _)| i).collect();
        assert_eq!(got, brute_force(&db, &f, None, 6));
    }

    #[test]
    fn social_without_neighbors_matches_plain_ranking() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let db = TrajectoryDatabase {
            entries: (0..50)
                .map(|_| {
                    let frames = straight_frames(Vec2::ZERO, rng.random_range(-0.3..0.3), rng.random_range(0.0..1.0));
                    entry_from(&frames, 0.2, [0.0; 6])
                })
                .collect(),
        };
        let q = straight_frames(Vec2::new(3.0, 1.0), 0.1, 0.45);
        let h = History::from_frames(1, q);
        let a = knn(db.clone(), 6, false).predict_history(&h, &[]).unwrap();
        let b = knn(db, 6, true).predict_history(&h, &[]).unwrap();
        assert_eq!(a.modes, b.modes);
    }

    #[test]
    fn neighbor_feature_breaks_ego_ties() {
        let frames = straight_frames(Vec2::ZERO, 0.0, 0.5);
        let mut near = entry_from(&frames, 0.5, [3.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        near.future[0] = 42.0;
        let far = entry_from(&frames, 0.5, [-8.0, 4.0, 0.0, 0.0, 0.0, 0.0]);
        let db = TrajectoryDatabase {
            entries: vec![far, near],
        };
        let last = frames[T_OBS - 1].pos;
        let neighbors = [last + Vec2::new(3.0, 1.0)];
        let h = History::from_frames(1, frames);
        let plain = knn(db.clone(), 1, false).predict_history(&h, &neighbors).unwrap();
        let social = knn(db.clone(), 1, true).predict_history(&h, &neighbors).unwrap();
        // Ego features tie: plain KNN keeps insertion order, S-KNN uses the neighbor.
        assert_eq!(plain.modes[0][0].x, last.x + 0.5);
        assert_eq!(social.modes[0][0].x, last.x + 42.0);
        let f = agent_frame_feature(&h.frames).unwrap();
        let n = neighbor_feature(h.last(), &neighbors);
        assert_eq!(brute_force(&db, &f, Some(&n), 1), vec![1]);
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut e = entry_from(&straight_frames(Vec2::ZERO, 0.3, 0.7), 0.3, [0.0; 6]);
        for v in e.feature.iter_mut().chain(e.neighbor.iter_mut()).chain(e.future.iter_mut()) {
            *v = rng.random_range(-1e3..1e3) * rng.random::<f64>().powi(7);
        }
        let db = TrajectoryDatabase { entries: vec![e] };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("db.csv");
        db.save(&p).unwrap();
        assert_eq!(TrajectoryDatabase::load(&p).unwrap(), db);
    }

    proptest! {
        #[test]
        fn knn_is_rigid_motion_equivariant(
            tx in -30.0..30.0f64, ty in -30.0..30.0f64, rot in -3.1..3.1f64, seed in 0u64..1000,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let db = TrajectoryDatabase {
                entries: (0..40)
                    .map(|_| {
                        let frames = straight_frames(Vec2::ZERO, rng.random_range(-0.2..0.2), rng.random_range(0.0..1.0));
                        entry_from(&frames, rng.random_range(0.0..1.0), [0.0; 6])
                    })
                    .collect(),
            };
            let base: Vec<HistoryFrame> = (0..T_OBS)
                .map(|k| HistoryFrame {
                    pos: Vec2::new(0.4 * k as f64, 0.01 * (k * k) as f64),
                    heading: (0.02 * k as f64).atan(),
                })
                .collect();
            let moved: Vec<HistoryFrame> = base
                .iter()
                .map(|f| HistoryFrame {
                    pos: f.pos.rotate(rot) + Vec2::new(tx, ty),
                    heading: crate::geometry::normalize_angle(f.heading + rot),
                })
                .collect();
            let p = knn(db.clone(), 4, false);
            let a = p.predict_history(&History::from_frames(1, base), &[]).unwrap();
            let b = p.predict_history(&History::from_frames(1, moved), &[]).unwrap();
            for (ma, mb) in a.modes.iter().zip(&b.modes) {
                for (pa, pb) in ma.iter().zip(mb) {
                    let expect = pa.rotate(rot) + Vec2::new(tx, ty);
                    prop_assert!((expect - *pb).norm() < 1e-6);
                }
            }
        }
    }
}
