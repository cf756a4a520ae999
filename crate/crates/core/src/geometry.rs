//! Axis-aligned boxes and exact distance queries.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

pub type Point3 = Vector3<f64>;

/// Tolerance used when deciding whether two closed sets touch or overlap.
/// Contact (distance exactly equal to the radius) counts as free.
pub const CONTACT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    #[serde(with = "point_array")]
    pub min: Point3,
    #[serde(with = "point_array")]
    pub max: Point3,
}

impl Aabb {
    pub fn new(min: Point3, max: Point3) -> Self {
        Aabb { min, max }
    }

    /// Smallest box containing both points.
    pub fn spanning(a: &Point3, b: &Point3) -> Self {
        Aabb { min: a.inf(b), max: a.sup(b) }
    }

    pub fn extent(&self) -> Point3 {
        self.max - self.min
    }

    pub fn center(&self) -> Point3 {
        (self.min + self.max) * 0.5
    }

    pub fn is_valid(&self) -> bool {
        (0..3).all(|a| self.min[a] <= self.max[a])
    }

    pub fn contains(&self, p: &Point3) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }

    pub fn contains_with_tol(&self, p: &Point3, tol: f64) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] - tol && p[a] <= self.max[a] + tol)
    }

    pub fn contains_box(&self, other: &Aabb) -> bool {
        self.contains(&other.min) && self.contains(&other.max)
    }

    /// Closed-box intersection test.
    pub fn intersects(&self, other: &Aabb) -> bool {
        (0..3).all(|a| self.min[a] <= other.max[a] && other.min[a] <= self.max[a])
    }

    /// Shrinks every face inward by `r`. The result may be invalid (min > max).
    pub fn shrunk(&self, r: f64) -> Aabb {
        let d = Point3::repeat(r);
        Aabb { min: self.min + d, max: self.max - d }
    }

    pub fn corners(&self) -> [Point3; 8] {
        let mut out = [Point3::zeros(); 8];
        for (i, c) in out.iter_mut().enumerate() {
            for a in 0..3 {
                c[a] = if i & (1 << a) == 0 { self.min[a] } else { self.max[a] };
            }
        }
        out
    }
}

pub fn point_box_distance_sq(p: &Point3, b: &Aabb) -> f64 {
    (0..3)
        .map(|a| {
            let g = (b.min[a] - p[a]).max(p[a] - b.max[a]).max(0.0);
            g * g
        })
        .sum()
}

pub fn box_box_distance_sq(a: &Aabb, b: &Aabb) -> f64 {
    (0..3)
        .map(|k| {
            let g = (b.min[k] - a.max[k]).max(a.min[k] - b.max[k]).max(0.0);
            g * g
        })
        .sum()
}

/// Exact squared distance between segment `⟨a,b⟩` and a closed box.
///
/// The squared distance along the segment is a convex piecewise quadratic in
/// the segment parameter, with breakpoints where a coordinate crosses a box
/// face plane. Each piece is minimized in closed form.
pub fn segment_box_distance_sq(a: &Point3, b: &Point3, bx: &Aabb) -> f64 {
    let dir = b - a;
    let mut breaks = vec![0.0, 1.0];
    for k in 0..3 {
        if dir[k] != 0.0 {
            for plane in [bx.min[k], bx.max[k]] {
                let t = (plane - a[k]) / dir[k];
                if t > 0.0 && t < 1.0 {
                    breaks.push(t);
                }
            }
        }
    }
    breaks.sort_by(|x, y| x.partial_cmp(y).unwrap());

    let eval = |t: f64| point_box_distance_sq(&(a + dir * t), bx);
    let mut best = eval(0.0).min(eval(1.0));
    for w in breaks.windows(2) {
        let (t0, t1) = (w[0], w[1]);
        if t1 <= t0 {
            continue;
        }
        // On this piece each axis is either inside the slab or clamped to a
        // fixed face, so the distance is sum of (a_k + t d_k - face_k)^2.
        let mid = a + dir * (0.5 * (t0 + t1));
        let (mut quad, mut lin) = (0.0, 0.0);
        for k in 0..3 {
            let face = if mid[k] < bx.min[k] {
                bx.min[k]
            } else if mid[k] > bx.max[k] {
                bx.max[k]
            } else {
                continue;
            };
            quad += dir[k] * dir[k];
            lin += dir[k] * (a[k] - face);
        }
        if quad > 0.0 {
            let t = (-lin / quad).clamp(t0, t1);
            best = best.min(eval(t));
        }
        best = best.min(eval(t0)).min(eval(t1));
    }
    best
}

/// Closest point of segment `⟨a,b⟩` to the origin.
pub fn closest_point_to_origin(a: &Point3, b: &Point3) -> Point3 {
    let d = b - a;
    let len_sq = d.norm_squared();
    if len_sq == 0.0 {
        return *a;
    }
    let t = (-a.dot(&d) / len_sq).clamp(0.0, 1.0);
    a + d * t
}

/// Maps a relative position into the coordinates where the downwash
/// ellipsoid becomes a sphere: z is divided by the downwash coefficient.
pub fn to_sphere_coords(p: &Point3, c_dw: f64) -> Point3 {
    Point3::new(p.x, p.y, p.z / c_dw)
}

pub fn from_sphere_coords(p: &Point3, c_dw: f64) -> Point3 {
    Point3::new(p.x, p.y, p.z * c_dw)
}

/// Distance in the downwash metric, `sqrt(pᵀ E p)` with `E = diag(1, 1, 1/c_dw²)`.
pub fn downwash_norm(p: &Point3, c_dw: f64) -> f64 {
    to_sphere_coords(p, c_dw).norm()
}

pub(crate) mod point_array {
    use super::Point3;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(p: &Point3, s: S) -> Result<S::Ok, S::Error> {
        [p.x, p.y, p.z].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Point3, D::Error> {
        let a = <[f64; 3]>::deserialize(d)?;
        Ok(Point3::new(a[0], a[1], a[2]))
    }
}

pub(crate) mod point_vec {
    use super::Point3;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(ps: &[Point3], s: S) -> Result<S::Ok, S::Error> {
        let v: Vec<[f64; 3]> = ps.iter().map(|p| [p.x, p.y, p.z]).collect();
        v.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Point3>, D::Error> {
        let v = Vec::<[f64; 3]>::deserialize(d)?;
        Ok(v.into_iter().map(|a| Point3::new(a[0], a[1], a[2])).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_box() -> Aabb {
        Aabb::new(Point3::new(0.0, 0.0, 0.0), Point3::new(1.0, 1.0, 1.0))
    }

    #[test]
    fn segment_through_box_has_zero_distance() {
        let d = segment_box_distance_sq(&Point3::new(-1.0, 0.5, 0.5), &Point3::new(2.0, 0.5, 0.5), &unit_box());
        assert_eq!(d, 0.0);
    }

    #[test]
    fn segment_parallel_to_face() {
        let d = segment_box_distance_sq(&Point3::new(-3.0, 1.5, 0.5), &Point3::new(3.0, 1.5, 0.5), &unit_box());
        assert!((d - 0.25).abs() < 1e-15);
    }

    #[test]
    fn segment_past_an_edge() {
        // Passes the edge x=1,y=1 diagonally; closest approach at (1.5,1.5)->edge (1,1).
        let d = segment_box_distance_sq(&Point3::new(0.0, 3.0, 0.5), &Point3::new(3.0, 0.0, 0.5), &unit_box());
        let expect = 2.0 * 0.5f64.powi(2);
        assert!((d - expect).abs() < 1e-12, "{d}");
    }

    #[test]
    fn segment_distance_matches_dense_sampling() {
        let bx = Aabb::new(Point3::new(-0.3, 0.2, 0.0), Point3::new(0.4, 0.9, 2.0));
        let cases = [
            (Point3::new(-2.0, -1.0, 3.0), Point3::new(1.5, 2.0, 2.5)),
            (Point3::new(1.0, -1.0, 0.5), Point3::new(1.2, 3.0, 0.7)),
            (Point3::new(0.0, -0.5, -1.0), Point3::new(0.0, -0.5, 4.0)),
        ];
        for (a, b) in cases {
            let exact = segment_box_distance_sq(&a, &b, &bx);
            let sampled = (0..=20000)
                .map(|i| point_box_distance_sq(&(a + (b - a) * (i as f64 / 20000.0)), &bx))
                .fold(f64::INFINITY, f64::min);
            assert!(exact <= sampled + 1e-12);
            assert!(sampled - exact < 1e-6, "{exact} vs {sampled}");
        }
    }

    #[test]
    fn closest_point_on_degenerate_segment() {
        let p = Point3::new(1.0, 2.0, 3.0);
        assert_eq!(closest_point_to_origin(&p, &p), p);
    }

    #[test]
    fn downwash_norm_stretches_z() {
        assert!((downwash_norm(&Point3::new(0.0, 0.0, 1.1), 2.0) - 0.55).abs() < 1e-15);
        assert_eq!(downwash_norm(&Point3::new(3.0, 4.0, 0.0), 2.0), 5.0);
    }
}
