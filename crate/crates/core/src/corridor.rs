//! Safe corridors built from discrete plans.
//!
//! An [`Sfc`] is an axis-aligned box per agent and segment whose
//! radius-inflation is obstacle-free and which contains the plan segment.
//! An [`Rsfc`] is a half-space per agent pair and segment, tangent to the
//! pair's downwash ellipsoid and containing the relative plan segment.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{closest_point_to_origin, point_array, to_sphere_coords, Aabb, Point3};
use crate::map::OccupancyWorld;
use crate::mapf::DiscretePlan;

#[derive(Debug, Error)]
pub enum CorridorError {
    #[error("agent {agent} segment {segment}: plan segment is not obstacle-free")]
    CorruptSegment { agent: usize, segment: usize },
    #[error("agents ({i}, {j}) segment {segment}: relative segment reaches the collision ellipsoid ({distance} ≤ {r_sum})")]
    PairConflict { i: usize, j: usize, segment: usize, distance: f64, r_sum: f64 },
    #[error("invalid input: {0}")]
    Input(String),
    #[error("corridor check failed: {0}")]
    Check(String),
}

pub type Sfc = Aabb;

/// Expansion order within one round: +x, −x, +y, −y, +z, −z.
const DIRECTIONS: [(usize, bool); 6] = [(0, true), (0, false), (1, true), (1, false), (2, true), (2, false)];

/// Grows one box per plan segment, face by face, while the grown region
/// stays obstacle-free at radius `r`.
///
/// Each face advances by `expand_step` (capped at the bounds shrunk by `r`)
/// until it is blocked. Faces advance one at a time against the current box,
/// so the box corners swept by neighbouring faces are always checked.
pub fn build_sfc(plan: &DiscretePlan, world: &OccupancyWorld, r: f64, expand_step: f64) -> Result<Vec<Sfc>, CorridorError> {
    if !(expand_step > 0.0) {
        return Err(CorridorError::Input(format!("expand step must be positive, got {expand_step}")));
    }
    let limit = world.bounds.shrunk(r);
    (0..plan.makespan())
        .map(|m| {
            let (a, b) = plan.segment(m);
            let mut bx = Aabb::spanning(&a, &b);
            if !world.is_box_free(&bx, r) {
                return Err(CorridorError::CorruptSegment { agent: plan.agent_id, segment: m });
            }
            let mut active = DIRECTIONS.to_vec();
            while !active.is_empty() {
                active.retain(|&(axis, positive)| {
                    let mut grown = bx;
                    if positive {
                        if bx.max[axis] >= limit.max[axis] {
                            return false;
                        }
                        grown.max[axis] = (bx.max[axis] + expand_step).min(limit.max[axis]);
                    } else {
                        if bx.min[axis] <= limit.min[axis] {
                            return false;
                        }
                        grown.min[axis] = (bx.min[axis] - expand_step).max(limit.min[axis]);
                    }
                    let mut slab = grown;
                    if positive {
                        slab.min[axis] = bx.max[axis];
                    } else {
                        slab.max[axis] = bx.min[axis];
                    }
                    if world.is_box_free(&slab, r) {
                        bx = grown;
                        true
                    } else {
                        false
                    }
                });
            }
            Ok(bx)
        })
        .collect()
}

/// Half-space `{x : ñ · E^{1/2} x > r_sum}` with `E^{1/2} = diag(1, 1, 1/c_dw)`
/// over relative positions `x = p_j − p_i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rsfc {
    /// Unit normal in the sphere (transformed) coordinates.
    #[serde(with = "point_array")]
    pub normal: Point3,
    /// `r_i + r_j`.
    pub offset: f64,
    pub c_dw: f64,
}

impl Rsfc {
    /// Normal of the half-space in untransformed relative coordinates,
    /// `E^{1/2} ñ`, so that the set reads `{x : a · x > offset}`.
    pub fn plane_normal(&self) -> Point3 {
        to_sphere_coords(&self.normal, self.c_dw)
    }

    /// Signed slack `a · x − offset`; positive inside.
    pub fn slack(&self, relative: &Point3) -> f64 {
        self.plane_normal().dot(relative) - self.offset
    }

    pub fn contains(&self, relative: &Point3) -> bool {
        self.slack(relative) > 0.0
    }

    /// The point where the boundary plane touches the ellipsoid
    /// `pᵀ E p = offset²`.
    pub fn tangent_point(&self) -> Point3 {
        crate::geometry::from_sphere_coords(&(self.normal * self.offset), self.c_dw)
    }
}

/// One half-space per segment for the ordered pair `(i, j)`, `i < j`.
pub fn build_rsfc(
    plan_i: &DiscretePlan,
    plan_j: &DiscretePlan,
    r_i: f64,
    r_j: f64,
    c_dw: f64,
) -> Result<Vec<Rsfc>, CorridorError> {
    if plan_i.waypoints.len() != plan_j.waypoints.len() {
        return Err(CorridorError::Input("plans have different lengths".into()));
    }
    let r_sum = r_i + r_j;
    (0..plan_i.makespan())
        .map(|m| {
            let rel0 = plan_j.waypoints[m] - plan_i.waypoints[m];
            let rel1 = plan_j.waypoints[m + 1] - plan_i.waypoints[m + 1];
            let closest = closest_point_to_origin(&to_sphere_coords(&rel0, c_dw), &to_sphere_coords(&rel1, c_dw));
            let distance = closest.norm();
            if !(distance > r_sum) {
                return Err(CorridorError::PairConflict { i: plan_i.agent_id, j: plan_j.agent_id, segment: m, distance, r_sum });
            }
            Ok(Rsfc { normal: closest / distance, offset: r_sum, c_dw })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RsfcPair {
    pub i: usize,
    pub j: usize,
    pub halfspaces: Vec<Rsfc>,
}

/// All corridors for a mission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corridors {
    /// `sfc[i][m]`
    pub sfc: Vec<Vec<Sfc>>,
    /// Pairs `i < j` in lexicographic order.
    pub rsfc: Vec<RsfcPair>,
}

impl Corridors {
    pub fn pair(&self, i: usize, j: usize) -> &RsfcPair {
        let n = self.sfc.len();
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        // row-major upper triangle index
        let idx = a * (2 * n - a - 1) / 2 + (b - a - 1);
        &self.rsfc[idx]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("corridors serialize")
    }
}

pub fn build_corridors(
    plans: &[DiscretePlan],
    world: &OccupancyWorld,
    radii: &[f64],
    c_dw: f64,
    expand_step: f64,
) -> Result<Corridors, CorridorError> {
    let sfc = plans
        .iter()
        .zip(radii)
        .map(|(p, &r)| build_sfc(p, world, r, expand_step))
        .collect::<Result<Vec<_>, _>>()?;
    let mut rsfc = Vec::new();
    for i in 0..plans.len() {
        for j in i + 1..plans.len() {
            rsfc.push(RsfcPair { i, j, halfspaces: build_rsfc(&plans[i], &plans[j], radii[i], radii[j], c_dw)? });
        }
    }
    Ok(Corridors { sfc, rsfc })
}

/// Re-verifies corridor invariants: plan segments inside their boxes, boxes
/// obstacle-free when inflated, relative plan segments strictly inside their
/// half-spaces by at least `margin`.
pub fn check_corridors(
    corridors: &Corridors,
    plans: &[DiscretePlan],
    world: &OccupancyWorld,
    radii: &[f64],
    margin: f64,
) -> Result<(), CorridorError> {
    for (i, (boxes, plan)) in corridors.sfc.iter().zip(plans).enumerate() {
        for (m, bx) in boxes.iter().enumerate() {
            let (a, b) = plan.segment(m);
            if !bx.contains(&a) || !bx.contains(&b) {
                return Err(CorridorError::Check(format!("agent {i} segment {m} leaves its box")));
            }
            if !world.is_box_free(bx, radii[i]) {
                return Err(CorridorError::Check(format!("agent {i} box {m} is not obstacle-free")));
            }
        }
    }
    for pair in &corridors.rsfc {
        for (m, h) in pair.halfspaces.iter().enumerate() {
            for w in [m, m + 1] {
                let rel = plans[pair.j].waypoints[w] - plans[pair.i].waypoints[w];
                if h.slack(&rel) <= margin {
                    return Err(CorridorError::Check(format!(
                        "pair ({}, {}) segment {m}: relative waypoint has slack {} ≤ {margin}",
                        pair.i,
                        pair.j,
                        h.slack(&rel)
                    )));
                }
            }
        }
    }
    Ok(())
}
