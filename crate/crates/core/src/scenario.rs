//! Missions and benchmark scenario generation.
//!
//! Random generators use `ChaCha8Rng` seeded with `seed_from_u64`, and every
//! uniform draw is `lo + (hi − lo)·u` with `u` the generator's standard
//! `f64` sample in `[0, 1)`. Both are fixed across platforms, so a seed names
//! the same world everywhere.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{downwash_norm, point_box_distance_sq, Aabb, Point3};
use crate::map::{load_world, MapError, OccupancyWorld};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Map(#[from] MapError),
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("mission parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid mission: {0}")]
    Invalid(String),
    #[error("tree {tree}: no admissible placement after {attempts} attempts")]
    Placement { tree: usize, attempts: usize },
}

pub const DEFAULT_RADIUS: f64 = 0.15;
pub const DEFAULT_V_MAX: f64 = 1.7;
pub const DEFAULT_A_MAX: f64 = 6.2;
pub const DEFAULT_C_DW: f64 = 2.0;

fn default_radius() -> f64 {
    DEFAULT_RADIUS
}
fn default_v_max() -> f64 {
    DEFAULT_V_MAX
}
fn default_a_max() -> f64 {
    DEFAULT_A_MAX
}
fn default_c_dw() -> f64 {
    DEFAULT_C_DW
}

/// One agent of a mission. Its id is its index in the agent list.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    #[serde(with = "crate::geometry::point_array")]
    pub start: Point3,
    #[serde(with = "crate::geometry::point_array")]
    pub goal: Point3,
    #[serde(default = "default_radius")]
    pub radius: f64,
    #[serde(default = "default_v_max")]
    pub v_max: f64,
    #[serde(default = "default_a_max")]
    pub a_max: f64,
}

impl AgentSpec {
    pub fn new(start: Point3, goal: Point3) -> Self {
        AgentSpec { start, goal, radius: DEFAULT_RADIUS, v_max: DEFAULT_V_MAX, a_max: DEFAULT_A_MAX }
    }
}

/// A world file path (relative paths resolve against the mission file) or
/// an inline world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WorldRef {
    Path(PathBuf),
    Inline(OccupancyWorld),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mission {
    pub world: WorldRef,
    #[serde(default = "default_c_dw")]
    pub c_dw: f64,
    pub agents: Vec<AgentSpec>,
}

impl Mission {
    pub fn inline(world: OccupancyWorld, agents: Vec<AgentSpec>) -> Self {
        Mission { world: WorldRef::Inline(world), c_dw: DEFAULT_C_DW, agents }
    }

    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("mission serializes")
    }

    /// Reads a mission and resolves a world path relative to the file.
    pub fn load(path: impl AsRef<Path>) -> Result<(Mission, OccupancyWorld), ScenarioError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })?;
        let mission = Mission::from_json(&text)?;
        let world = mission.resolve_world(path.parent().unwrap_or(Path::new(".")))?;
        Ok((mission, world))
    }

    pub fn resolve_world(&self, base: &Path) -> Result<OccupancyWorld, ScenarioError> {
        match &self.world {
            WorldRef::Inline(w) => Ok(OccupancyWorld::new(w.bounds, w.obstacles.clone())?),
            WorldRef::Path(p) => Ok(load_world(if p.is_absolute() { p.clone() } else { base.join(p) })?),
        }
    }

    /// Checks the mission invariants: positive parameters, endpoints inside
    /// the bounds and clear of obstacles, and no two agents in collision at
    /// their starts or at their goals.
    pub fn validate(&self, world: &OccupancyWorld) -> Result<(), ScenarioError> {
        if self.agents.is_empty() {
            return Err(ScenarioError::Invalid("mission has no agents".into()));
        }
        if !(self.c_dw >= 1.0) {
            return Err(ScenarioError::Invalid(format!("c_dw = {} must be at least 1", self.c_dw)));
        }
        for (i, a) in self.agents.iter().enumerate() {
            if !(a.radius > 0.0 && a.v_max > 0.0 && a.a_max > 0.0) {
                return Err(ScenarioError::Invalid(format!("agent {i}: radius and limits must be positive")));
            }
            for (what, p) in [("start", &a.start), ("goal", &a.goal)] {
                if !world.is_point_free(p, a.radius) {
                    return Err(ScenarioError::Invalid(format!(
                        "agent {i}: {what} ({:.3}, {:.3}, {:.3}) is out of bounds or too close to an obstacle",
                        p.x, p.y, p.z
                    )));
                }
            }
        }
        for i in 0..self.agents.len() {
            for j in i + 1..self.agents.len() {
                let (a, b) = (&self.agents[i], &self.agents[j]);
                let r_sum = a.radius + b.radius;
                if downwash_norm(&(b.start - a.start), self.c_dw) <= r_sum {
                    return Err(ScenarioError::Invalid(format!("agents {i} and {j} collide at their starts")));
                }
                if downwash_norm(&(b.goal - a.goal), self.c_dw) <= r_sum {
                    return Err(ScenarioError::Invalid(format!("agents {i} and {j} collide at their goals")));
                }
            }
        }
        Ok(())
    }
}

/// A point trees must stay at least `radius` away from.
#[derive(Debug, Clone, Copy)]
pub struct KeepOut {
    pub center: Point3,
    pub radius: f64,
}

#[derive(Debug, Clone)]
pub struct ForestSpec {
    pub bounds: Aabb,
    pub n_trees: usize,
    /// Square footprint side.
    pub tree_xy: f64,
    pub tree_h_range: (f64, f64),
}

impl Default for ForestSpec {
    fn default() -> Self {
        ForestSpec { bounds: default_bounds(), n_trees: 20, tree_xy: 0.3, tree_h_range: (1.0, 2.5) }
    }
}

pub fn default_bounds() -> Aabb {
    Aabb::new(Point3::zeros(), Point3::new(10.0, 10.0, 2.5))
}

pub const MAX_PLACEMENT_ATTEMPTS: usize = 1000;

/// Ground-mounted box trees with uniform footprint position and height.
/// A draw that comes within a keep-out radius is redrawn; a tree that
/// cannot be placed within the attempt budget is an error.
pub fn gen_forest(seed: u64, spec: &ForestSpec, keep_out: &[KeepOut]) -> Result<OccupancyWorld, ScenarioError> {
    let b = spec.bounds;
    let ext = b.extent();
    if !(spec.tree_xy > 0.0 && spec.tree_xy <= ext.x.min(ext.y)) {
        return Err(ScenarioError::Invalid(format!("tree footprint {} does not fit the bounds", spec.tree_xy)));
    }
    let (h_lo, h_hi) = spec.tree_h_range;
    if !(h_lo > 0.0 && h_lo <= h_hi) {
        return Err(ScenarioError::Invalid(format!("bad tree height range [{h_lo}, {h_hi}]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut uniform = |lo: f64, hi: f64| lo + (hi - lo) * rng.gen::<f64>();
    let mut trees = Vec::with_capacity(spec.n_trees);
    for tree in 0..spec.n_trees {
        let mut placed = None;
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let x = uniform(b.min.x, b.max.x - spec.tree_xy);
            let y = uniform(b.min.y, b.max.y - spec.tree_xy);
            let h = uniform(h_lo, h_hi).min(ext.z);
            let candidate = Aabb::new(Point3::new(x, y, b.min.z), Point3::new(x + spec.tree_xy, y + spec.tree_xy, b.min.z + h));
            if keep_out.iter().all(|k| point_box_distance_sq(&k.center, &candidate) > k.radius * k.radius) {
                placed = Some(candidate);
                break;
            }
        }
        match placed {
            Some(t) => trees.push(t),
            None => return Err(ScenarioError::Placement { tree, attempts: MAX_PLACEMENT_ATTEMPTS }),
        }
    }
    Ok(OccupancyWorld::new(b, trees)?)
}

/// Starts evenly spaced counterclockwise around the xy boundary, inset by
/// `inset`, beginning at the midpoint of the low-y edge; each goal is the
/// reflection of its start through the xy center.
pub fn assign_antipodal(n_agents: usize, bounds: &Aabb, height: f64, inset: f64, max_radius: f64) -> Result<Vec<(Point3, Point3)>, ScenarioError> {
    if n_agents == 0 {
        return Err(ScenarioError::Invalid("need at least one agent".into()));
    }
    let (x0, y0) = (bounds.min.x + inset, bounds.min.y + inset);
    let (x1, y1) = (bounds.max.x - inset, bounds.max.y - inset);
    let (w, h) = (x1 - x0, y1 - y0);
    if !(w > 0.0 && h > 0.0) {
        return Err(ScenarioError::Invalid(format!("inset {inset} leaves no boundary ring")));
    }
    let perimeter = 2.0 * (w + h);
    let spacing = perimeter / n_agents as f64;
    if n_agents > 1 && spacing < 2.0 * max_radius {
        return Err(ScenarioError::Invalid(format!(
            "{n_agents} agents leave spacing {spacing:.3} m, below twice the radius {max_radius}"
        )));
    }
    let center = Point3::new(0.5 * (x0 + x1), 0.5 * (y0 + y1), height);
    let ring = |s: f64| -> Point3 {
        // arc length from the low-y midpoint, counterclockwise
        let mut s = (s + 0.5 * w) % perimeter;
        if s < w {
            return Point3::new(x0 + s, y0, height);
        }
        s -= w;
        if s < h {
            return Point3::new(x1, y0 + s, height);
        }
        s -= h;
        if s < w {
            return Point3::new(x1 - s, y1, height);
        }
        s -= w;
        Point3::new(x0, y1 - s, height)
    };
    Ok((0..n_agents)
        .map(|k| {
            let s = ring(k as f64 * spacing);
            (s, Point3::new(2.0 * center.x - s.x, 2.0 * center.y - s.y, height))
        })
        .collect())
}

/// Benchmark mission parameters.
#[derive(Debug, Clone)]
pub struct MissionTemplate {
    pub n_agents: usize,
    pub radius: f64,
    pub v_max: f64,
    pub a_max: f64,
    pub c_dw: f64,
    pub height: f64,
    pub inset: f64,
    /// Clearance added to the radius around every start and goal when
    /// placing trees, so endpoints reach their lattice cell obstacle-free.
    pub keep_out_extra: f64,
}

impl Default for MissionTemplate {
    fn default() -> Self {
        MissionTemplate {
            n_agents: 8,
            radius: DEFAULT_RADIUS,
            v_max: DEFAULT_V_MAX,
            a_max: DEFAULT_A_MAX,
            c_dw: DEFAULT_C_DW,
            height: 1.0,
            inset: 0.5,
            keep_out_extra: 0.5,
        }
    }
}

/// Antipodal mission in a seeded forest, with an inline world.
pub fn gen_mission(seed: u64, template: &MissionTemplate, forest: &ForestSpec) -> Result<Mission, ScenarioError> {
    let pairs = assign_antipodal(template.n_agents, &forest.bounds, template.height, template.inset, template.radius)?;
    let keep_out: Vec<KeepOut> = pairs
        .iter()
        .flat_map(|(s, g)| [*s, *g])
        .map(|center| KeepOut { center, radius: template.radius + template.keep_out_extra })
        .collect();
    let world = gen_forest(seed, forest, &keep_out)?;
    let agents = pairs
        .into_iter()
        .map(|(start, goal)| AgentSpec { start, goal, radius: template.radius, v_max: template.v_max, a_max: template.a_max })
        .collect();
    let mission = Mission { world: WorldRef::Inline(world.clone()), c_dw: template.c_dw, agents };
    mission.validate(&world)?;
    Ok(mission)
}
