//! Trajectory file format.
//!
//! ```json
//! {
//!   "knots": [0.0, 0.29, ...],
//!   "total_time": 12.3,
//!   "agents": [{"id": 0, "segments": [[[x, y, z], ...], ...]}, ...]
//! }
//! ```
//!
//! All agents share the knot vector. Numbers are written in the shortest
//! decimal form that parses back to the identical `f64`, so a load/save
//! round trip is bit-exact and equal inputs give byte-identical files.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bernstein::{BernsteinError, PiecewiseBezier};
use crate::geometry::Point3;

#[derive(Debug, Error)]
pub enum TrajectoryIoError {
    #[error("cannot access {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("trajectory parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid trajectory file: {0}")]
    Invalid(String),
    #[error(transparent)]
    Bernstein(#[from] BernsteinError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentRecord {
    pub id: usize,
    #[serde(with = "segments_serde")]
    pub segments: Vec<Vec<Point3>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryFile {
    pub knots: Vec<f64>,
    pub total_time: f64,
    pub agents: Vec<AgentRecord>,
}

mod segments_serde {
    use super::Point3;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(segs: &[Vec<Point3>], s: S) -> Result<S::Ok, S::Error> {
        let v: Vec<Vec<[f64; 3]>> = segs.iter().map(|seg| seg.iter().map(|p| [p.x, p.y, p.z]).collect()).collect();
        v.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vec<Point3>>, D::Error> {
        let v = Vec::<Vec<[f64; 3]>>::deserialize(d)?;
        Ok(v.into_iter().map(|seg| seg.into_iter().map(|a| Point3::new(a[0], a[1], a[2])).collect()).collect())
    }
}

impl TrajectoryFile {
    pub fn from_trajectories(trajs: &[PiecewiseBezier]) -> Result<Self, TrajectoryIoError> {
        let first = trajs.first().ok_or_else(|| TrajectoryIoError::Invalid("no trajectories".into()))?;
        let knots = first.knots();
        if trajs.iter().any(|t| t.knots() != knots) {
            return Err(TrajectoryIoError::Invalid("trajectories do not share knots".into()));
        }
        let agents = trajs
            .iter()
            .map(|t| AgentRecord { id: t.agent_id, segments: t.segments().iter().map(|s| s.control_points().to_vec()).collect() })
            .collect();
        Ok(TrajectoryFile { total_time: knots[knots.len() - 1] - knots[0], knots, agents })
    }

    pub fn to_trajectories(&self) -> Result<Vec<PiecewiseBezier>, TrajectoryIoError> {
        self.agents
            .iter()
            .map(|a| Ok(PiecewiseBezier::from_control_points(a.id, a.segments.clone(), &self.knots)?))
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("trajectory serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, TrajectoryIoError> {
        Ok(serde_json::from_str(text)?)
    }
}

pub fn save_trajectories(trajs: &[PiecewiseBezier], path: impl AsRef<Path>) -> Result<(), TrajectoryIoError> {
    let path = path.as_ref();
    let text = TrajectoryFile::from_trajectories(trajs)?.to_json();
    fs::write(path, text).map_err(|source| TrajectoryIoError::Io { path: path.display().to_string(), source })
}

pub fn load_trajectories(path: impl AsRef<Path>) -> Result<Vec<PiecewiseBezier>, TrajectoryIoError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| TrajectoryIoError::Io { path: path.display().to_string(), source })?;
    TrajectoryFile::from_json(&text)?.to_trajectories()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let knots = [0.0, 0.1 + 0.2, 0.7, 1.0 / 3.0 + 1.0];
        let trajs: Vec<PiecewiseBezier> = (0..3)
            .map(|id| {
                let pts = (0..3)
                    .map(|_| (0..6).map(|_| Point3::new(rng.gen(), rng.gen::<f64>() * 1e-7, rng.gen::<f64>() * 1e9)).collect())
                    .collect();
                PiecewiseBezier::from_control_points(id, pts, &knots).unwrap()
            })
            .collect();
        let text = TrajectoryFile::from_trajectories(&trajs).unwrap().to_json();
        let back = TrajectoryFile::from_json(&text).unwrap().to_trajectories().unwrap();
        assert_eq!(back, trajs);
        assert_eq!(TrajectoryFile::from_trajectories(&back).unwrap().to_json(), text);
    }

    #[test]
    fn mismatched_knots_rejected() {
        let a = PiecewiseBezier::from_control_points(0, vec![vec![Point3::zeros(); 2]], &[0.0, 1.0]).unwrap();
        let b = PiecewiseBezier::from_control_points(1, vec![vec![Point3::zeros(); 2]], &[0.0, 2.0]).unwrap();
        assert!(TrajectoryFile::from_trajectories(&[a, b]).is_err());
    }
}
