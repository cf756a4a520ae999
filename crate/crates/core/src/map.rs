//! Box-obstacle worlds, inflated free-space queries and the voxel lattice
//! used for discrete planning.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{point_box_distance_sq, segment_box_distance_sq, Aabb, Point3, CONTACT_TOL};

#[derive(Debug, Error)]
pub enum MapError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("invalid world at {location}: {message}")]
    Invalid { location: String, message: String },
    #[error("grid error: {0}")]
    Grid(String),
    #[error("no free lattice point within {radius} m of ({x:.3}, {y:.3}, {z:.3})")]
    Unreachable { x: f64, y: f64, z: f64, radius: f64 },
}

impl From<serde_json::Error> for MapError {
    fn from(e: serde_json::Error) -> Self {
        MapError::Parse { line: e.line(), column: e.column(), message: e.to_string() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyWorld {
    pub bounds: Aabb,
    #[serde(default)]
    pub obstacles: Vec<Aabb>,
}

impl OccupancyWorld {
    /// Validates the world. Obstacles entirely outside the bounds cannot
    /// affect planning; they are dropped with a warning.
    pub fn new(bounds: Aabb, obstacles: Vec<Aabb>) -> Result<Self, MapError> {
        for a in 0..3 {
            if !(bounds.max[a] > bounds.min[a]) {
                return Err(MapError::Invalid {
                    location: "bounds".into(),
                    message: format!("non-positive extent on axis {a}"),
                });
            }
        }
        let mut kept = Vec::with_capacity(obstacles.len());
        for (i, o) in obstacles.into_iter().enumerate() {
            if !o.is_valid() {
                return Err(MapError::Invalid {
                    location: format!("obstacles[{i}]"),
                    message: "min exceeds max".into(),
                });
            }
            if !o.intersects(&bounds) {
                log::warn!("obstacles[{i}] lies outside the world bounds and is ignored");
                continue;
            }
            kept.push(o);
        }
        Ok(OccupancyWorld { bounds, obstacles: kept })
    }

    pub fn empty(bounds: Aabb) -> Result<Self, MapError> {
        Self::new(bounds, Vec::new())
    }

    pub fn from_json(text: &str) -> Result<Self, MapError> {
        let raw: OccupancyWorld = serde_json::from_str(text)?;
        Self::new(raw.bounds, raw.obstacles)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("world serializes")
    }

    /// Sphere of radius `r` at `p` is inside the bounds and clear of every
    /// obstacle. Touching counts as free.
    pub fn is_point_free(&self, p: &Point3, r: f64) -> bool {
        self.is_segment_free(p, p, r)
    }

    /// The capsule swept by a radius-`r` sphere along `⟨a,b⟩` lies in free space.
    pub fn is_segment_free(&self, a: &Point3, b: &Point3, r: f64) -> bool {
        let inner = self.bounds.shrunk(r);
        if !inner.contains_with_tol(a, CONTACT_TOL) || !inner.contains_with_tol(b, CONTACT_TOL) {
            return false;
        }
        let lim = (r - CONTACT_TOL).max(0.0);
        self.obstacles.iter().all(|o| {
            let d2 = segment_box_distance_sq(a, b, o);
            if r == 0.0 {
                // zero radius: only strict interior penetration is blocked
                d2 > 0.0 || !segment_crosses_interior(a, b, o)
            } else {
                d2 >= lim * lim
            }
        })
    }

    /// A box grown by radius `r` lies in free space.
    pub fn is_box_free(&self, bx: &Aabb, r: f64) -> bool {
        let inner = self.bounds.shrunk(r);
        let tol = Point3::repeat(CONTACT_TOL);
        if !(Aabb::new(inner.min - tol, inner.max + tol)).contains_box(bx) {
            return false;
        }
        let lim = (r - CONTACT_TOL).max(0.0);
        self.obstacles.iter().all(|o| crate::geometry::box_box_distance_sq(bx, o) >= lim * lim && !(r == 0.0 && interiors_overlap(bx, o)))
    }
}

fn strictly_inside(p: &Point3, o: &Aabb) -> bool {
    (0..3).all(|a| p[a] > o.min[a] && p[a] < o.max[a])
}

fn segment_crosses_interior(a: &Point3, b: &Point3, o: &Aabb) -> bool {
    // Slab clip against the open box.
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    let d = b - a;
    for k in 0..3 {
        if d[k] == 0.0 {
            if !(a[k] > o.min[k] && a[k] < o.max[k]) {
                return false;
            }
        } else {
            let (mut lo, mut hi) = ((o.min[k] - a[k]) / d[k], (o.max[k] - a[k]) / d[k]);
            if lo > hi {
                std::mem::swap(&mut lo, &mut hi);
            }
            t0 = t0.max(lo);
            t1 = t1.min(hi);
        }
    }
    t0 < t1
}

fn interiors_overlap(a: &Aabb, b: &Aabb) -> bool {
    (0..3).all(|k| a.min[k] < b.max[k] && b.min[k] < a.max[k])
}

pub fn load_world(path: impl AsRef<Path>) -> Result<OccupancyWorld, MapError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| MapError::Io { path: path.display().to_string(), source })?;
    OccupancyWorld::from_json(&text)
}

pub fn save_world(world: &OccupancyWorld, path: impl AsRef<Path>) -> Result<(), MapError> {
    let path = path.as_ref();
    fs::write(path, world.to_json()).map_err(|source| MapError::Io { path: path.display().to_string(), source })
}

/// Lattice coordinate `(ix, iy, iz)`.
pub type GridIndex = [usize; 3];

/// Lattice of points spaced `cell_size` apart covering the world bounds,
/// including both boundary planes. A point is blocked when a sphere of the
/// agent radius centered there leaves the bounds or penetrates an obstacle.
/// An edge between two free points is blocked when the sphere swept along it
/// penetrates an obstacle.
#[derive(Debug, Clone)]
pub struct VoxelGrid {
    pub origin: Point3,
    pub cell_size: f64,
    pub dims: [usize; 3],
    pub radius: f64,
    blocked: Vec<bool>,
    /// Bit `a` set: the edge toward `+axis a` is blocked.
    edge_blocked: Vec<u8>,
}

impl VoxelGrid {
    /// Grid from explicit occupancy, for synthetic instances. `blocked` is
    /// x-fastest.
    pub fn from_parts(origin: Point3, cell_size: f64, dims: [usize; 3], radius: f64, blocked: Vec<bool>) -> Result<Self, MapError> {
        if !(cell_size > 0.0) {
            return Err(MapError::Grid("cell size must be positive".into()));
        }
        if blocked.len() != dims[0] * dims[1] * dims[2] {
            return Err(MapError::Grid("occupancy length does not match dims".into()));
        }
        let edge_blocked = vec![0; blocked.len()];
        Ok(VoxelGrid { origin, cell_size, dims, radius, blocked, edge_blocked })
    }

    pub fn num_cells(&self) -> usize {
        self.blocked.len()
    }

    pub fn flat(&self, idx: GridIndex) -> usize {
        idx[0] + self.dims[0] * (idx[1] + self.dims[1] * idx[2])
    }

    pub fn unflat(&self, i: usize) -> GridIndex {
        let x = i % self.dims[0];
        let y = (i / self.dims[0]) % self.dims[1];
        let z = i / (self.dims[0] * self.dims[1]);
        [x, y, z]
    }

    pub fn position(&self, idx: GridIndex) -> Point3 {
        self.origin + Point3::new(idx[0] as f64, idx[1] as f64, idx[2] as f64) * self.cell_size
    }

    pub fn position_flat(&self, i: usize) -> Point3 {
        self.position(self.unflat(i))
    }

    pub fn is_blocked(&self, idx: GridIndex) -> bool {
        self.blocked[self.flat(idx)]
    }

    pub fn is_blocked_flat(&self, i: usize) -> bool {
        self.blocked[i]
    }

    pub fn free_count(&self) -> usize {
        self.blocked.iter().filter(|b| !**b).count()
    }

    /// Free 6-connected neighbors of a flat index reachable over a free edge.
    pub fn neighbors(&self, i: usize, out: &mut Vec<usize>) {
        out.clear();
        let idx = self.unflat(i);
        for axis in 0..3 {
            let bit = 1u8 << axis;
            if idx[axis] > 0 {
                let mut n = idx;
                n[axis] -= 1;
                let f = self.flat(n);
                if !self.blocked[f] && self.edge_blocked[f] & bit == 0 {
                    out.push(f);
                }
            }
            if idx[axis] + 1 < self.dims[axis] {
                let mut n = idx;
                n[axis] += 1;
                let f = self.flat(n);
                if !self.blocked[f] && self.edge_blocked[i] & bit == 0 {
                    out.push(f);
                }
            }
        }
    }

    /// Marks the edge from `idx` toward `+axis` as blocked.
    pub fn block_edge(&mut self, idx: GridIndex, axis: usize) {
        let f = self.flat(idx);
        self.edge_blocked[f] |= 1 << axis;
    }

    /// Nearest free lattice point to `p`; ties go to the lexicographically
    /// smallest `(x, y, z)` index. Fails if none lies within two cells.
    pub fn snap(&self, p: &Point3) -> Result<GridIndex, MapError> {
        let reach = 2.0 * self.cell_size;
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        for a in 0..3 {
            let rel_lo = ((p[a] - reach - self.origin[a]) / self.cell_size).floor().max(0.0) as i64;
            let rel_hi = (((p[a] + reach - self.origin[a]) / self.cell_size).ceil() as i64).min(self.dims[a] as i64 - 1);
            if rel_hi < rel_lo {
                return Err(self.unreachable(p, reach));
            }
            lo[a] = rel_lo as usize;
            hi[a] = rel_hi as usize;
        }
        let mut best: Option<(f64, GridIndex)> = None;
        for x in lo[0]..=hi[0] {
            for y in lo[1]..=hi[1] {
                for z in lo[2]..=hi[2] {
                    let idx = [x, y, z];
                    if self.is_blocked(idx) {
                        continue;
                    }
                    let d = (self.position(idx) - p).norm_squared();
                    // iteration is lexicographic, so strict < keeps the first tie
                    if best.is_none_or(|(bd, _)| d < bd) {
                        best = Some((d, idx));
                    }
                }
            }
        }
        match best {
            Some((d, idx)) if d <= reach * reach + 1e-12 => Ok(idx),
            _ => Err(self.unreachable(p, reach)),
        }
    }

    fn unreachable(&self, p: &Point3, radius: f64) -> MapError {
        MapError::Unreachable { x: p.x, y: p.y, z: p.z, radius }
    }
}

/// Lattice over `world.bounds` with spacing `d`, blocked for an agent of radius `r`.
pub fn build_grid(world: &OccupancyWorld, d: f64, r: f64) -> Result<VoxelGrid, MapError> {
    if !(d > 0.0) {
        return Err(MapError::Grid(format!("grid size must be positive, got {d}")));
    }
    let ext = world.bounds.extent();
    let min_ext = ext.x.min(ext.y).min(ext.z);
    if d > min_ext {
        return Err(MapError::Grid(format!("grid size {d} exceeds smallest bounds extent {min_ext}")));
    }
    let mut dims = [0usize; 3];
    for a in 0..3 {
        // tolerate extents that are an exact multiple of d up to rounding
        dims[a] = ((ext[a] / d) + 1e-9).floor() as usize + 1;
    }
    let origin = world.bounds.min;
    let inner = world.bounds.shrunk(r);
    let lim = (r - CONTACT_TOL).max(0.0);
    let mut blocked = vec![false; dims[0] * dims[1] * dims[2]];
    let mut i = 0;
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let p = origin + Point3::new(x as f64, y as f64, z as f64) * d;
                blocked[i] = !inner.contains_with_tol(&p, CONTACT_TOL)
                    || world.obstacles.iter().any(|o| {
                        if r == 0.0 {
                            strictly_inside(&p, o)
                        } else {
                            point_box_distance_sq(&p, o) < lim * lim
                        }
                    });
                i += 1;
            }
        }
    }
    let mut grid = VoxelGrid::from_parts(origin, d, dims, r, blocked)?;
    // thin obstacles can sit between two free points
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let idx = [x, y, z];
                if grid.is_blocked(idx) {
                    continue;
                }
                for axis in 0..3 {
                    let mut n = idx;
                    n[axis] += 1;
                    if n[axis] >= dims[axis] || grid.is_blocked(n) {
                        continue;
                    }
                    if !world.is_segment_free(&grid.position(idx), &grid.position(n), r) {
                        grid.block_edge(idx, axis);
                    }
                }
            }
        }
    }
    Ok(grid)
}
