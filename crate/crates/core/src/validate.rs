//! Post-hoc verification of planned trajectories.
//!
//! Everything here is evaluated from raw control points and knots with its
//! own de Casteljau and hodograph code, so a bug in the trajectory types or
//! the optimizer cannot certify itself.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::bernstein::PiecewiseBezier;
use crate::geometry::{Aabb, Point3};
use crate::map::OccupancyWorld;

/// Per-agent data the checks need.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AgentLimits {
    pub radius: f64,
    pub v_max: f64,
    pub a_max: f64,
    #[serde(with = "crate::geometry::point_array")]
    pub start: Point3,
    #[serde(with = "crate::geometry::point_array")]
    pub goal: Point3,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationParams {
    pub agents: Vec<AgentLimits>,
    pub c_dw: f64,
    /// Derivative order of the objective and number of continuous derivatives.
    pub phi: usize,
}

/// Relative slack allowed on velocity and acceleration limits.
pub const LIMIT_REL_TOL: f64 = 1e-6;
/// Allowed continuity and boundary residual.
pub const CONTINUITY_TOL: f64 = 1e-6;
const CONTACT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Serialize)]
pub struct AgentReport {
    pub agent_id: usize,
    pub max_speed: f64,
    pub max_accel: f64,
    /// Convex-hull bounds on speed and acceleration magnitude.
    pub hull_speed: f64,
    pub hull_accel: f64,
    pub flight_distance: f64,
    /// Worst continuity residual per interior knot, over derivative orders below `phi`.
    pub continuity_errors: Vec<f64>,
    /// Position and rest-derivative residual at the start and goal.
    pub boundary_error: f64,
    pub min_obstacle_clearance: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub passed: bool,
    pub violations: Vec<String>,
    pub total_time: f64,
    pub sample_dt: f64,
    pub obstacle_clear: bool,
    /// Certain (conservative) obstacle check on the segment control-point boxes.
    pub hull_obstacle_clear: bool,
    /// Sampled `min d_ij / (r_i + r_j)` in percent, `d_ij` the E-metric distance.
    pub min_inter_margin_ratio: f64,
    /// Lower bound on the same ratio from relative control-point boxes.
    pub hull_margin_ratio: f64,
    pub closest_pair: Option<(usize, usize)>,
    pub closest_time: f64,
    pub objective_cost: f64,
    pub total_flight_distance: f64,
    pub agents: Vec<AgentReport>,
}

impl ValidationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "result             {}", if self.passed { "PASS" } else { "FAIL" })?;
        writeln!(f, "total time         {:.4} s", self.total_time)?;
        writeln!(f, "obstacle clear     {} (hull: {})", self.obstacle_clear, self.hull_obstacle_clear)?;
        writeln!(f, "margin ratio       {:.2} % (hull bound {:.2} %)", self.min_inter_margin_ratio, self.hull_margin_ratio)?;
        writeln!(f, "objective cost     {:.6}", self.objective_cost)?;
        writeln!(f, "flight distance    {:.4} m", self.total_flight_distance)?;
        writeln!(f, "{:>5} {:>10} {:>10} {:>10} {:>10} {:>12}", "agent", "max_v", "max_a", "dist", "clearance", "continuity")?;
        for a in &self.agents {
            let cont = a.continuity_errors.iter().copied().fold(0.0, f64::max).max(a.boundary_error);
            writeln!(
                f,
                "{:>5} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>12.3e}",
                a.agent_id, a.max_speed, a.max_accel, a.flight_distance, a.min_obstacle_clearance, cont
            )?;
        }
        for v in &self.violations {
            writeln!(f, "violation: {v}")?;
        }
        Ok(())
    }
}

fn de_casteljau(points: &[Point3], tau: f64) -> Point3 {
    let mut work = points.to_vec();
    let n = work.len();
    for level in 1..n {
        for i in 0..n - level {
            work[i] = work[i] + (work[i + 1] - work[i]) * tau;
        }
    }
    work[0]
}

/// Control points of the time derivative of a segment lasting `h`.
fn hodograph(points: &[Point3], h: f64) -> Vec<Point3> {
    let n = points.len() - 1;
    if n == 0 {
        return vec![Point3::zeros()];
    }
    points.windows(2).map(|w| (w[1] - w[0]) * (n as f64 / h)).collect()
}

/// A trajectory as raw per-segment derivative tables.
struct Curve {
    knots: Vec<f64>,
    /// `derivs[m][order]` = control points of the `order`-th derivative on segment `m`.
    derivs: Vec<Vec<Vec<Point3>>>,
}

impl Curve {
    fn new(traj: &PiecewiseBezier, orders: usize) -> Curve {
        let knots = traj.knots();
        let derivs = traj
            .segments()
            .iter()
            .enumerate()
            .map(|(m, seg)| {
                let h = knots[m + 1] - knots[m];
                let mut table = vec![seg.control_points().to_vec()];
                for o in 0..orders {
                    let next = hodograph(&table[o], h);
                    table.push(next);
                }
                table
            })
            .collect();
        Curve { knots, derivs }
    }

    fn eval(&self, order: usize, t: f64) -> Point3 {
        let last = self.knots.len() - 2;
        let mut m = 0;
        while m < last && t >= self.knots[m + 1] {
            m += 1;
        }
        let (t0, t1) = (self.knots[m], self.knots[m + 1]);
        let tau = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
        de_casteljau(&self.derivs[m][order], tau)
    }
}

fn point_box_distance(p: &Point3, b: &Aabb) -> f64 {
    let mut s = 0.0;
    for a in 0..3 {
        let d = (b.min[a] - p[a]).max(p[a] - b.max[a]).max(0.0);
        s += d * d;
    }
    s.sqrt()
}

/// Signed clearance of a sphere of radius `r` at `p`: distance to the
/// nearest obstacle or bounds face, minus `r`.
fn clearance(p: &Point3, r: f64, world: &OccupancyWorld) -> f64 {
    let mut c = f64::INFINITY;
    for a in 0..3 {
        c = c.min(p[a] - world.bounds.min[a]).min(world.bounds.max[a] - p[a]);
    }
    for o in &world.obstacles {
        c = c.min(point_box_distance(p, o));
    }
    c - r
}

fn box_box_distance(a: &Aabb, b: &Aabb) -> f64 {
    let mut s = 0.0;
    for k in 0..3 {
        let d = (b.min[k] - a.max[k]).max(a.min[k] - b.max[k]).max(0.0);
        s += d * d;
    }
    s.sqrt()
}

fn bounding_box(points: &[Point3]) -> Aabb {
    let mut lo = points[0];
    let mut hi = points[0];
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    Aabb { min: lo, max: hi }
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, intervals: usize) -> f64 {
    let n = intervals + intervals % 2;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

/// Arc length from 10⁴ evenly timed samples.
pub fn flight_distance(traj: &PiecewiseBezier) -> f64 {
    const SAMPLES: usize = 10_000;
    let curve = Curve::new(traj, 0);
    let (t0, t1) = (traj.t_start(), traj.t_end());
    let mut prev = curve.eval(0, t0);
    let mut total = 0.0;
    for j in 1..SAMPLES {
        let t = t0 + (t1 - t0) * j as f64 / (SAMPLES - 1) as f64;
        let p = curve.eval(0, t);
        total += (p - prev).norm();
        prev = p;
    }
    total
}

/// `∫ ‖d^φ p/dt^φ‖² dt` by composite Simpson quadrature per segment.
pub fn objective_cost(traj: &PiecewiseBezier, phi: usize) -> f64 {
    let curve = Curve::new(traj, phi);
    (0..traj.num_segments())
        .map(|m| {
            let (a, b) = (curve.knots[m], curve.knots[m + 1]);
            let pts = &curve.derivs[m][phi];
            simpson(|t| de_casteljau(pts, (t - a) / (b - a)).norm_squared(), a, b, 64)
        })
        .sum()
}

/// Checks `trajs` against `world` and `params`. `sample_dt` defaults to a
/// ten-thousandth of the total time.
pub fn validate(trajs: &[PiecewiseBezier], world: &OccupancyWorld, params: &ValidationParams, sample_dt: Option<f64>) -> ValidationReport {
    let mut violations = Vec::new();
    let orders = params.phi.max(2);
    let curves: Vec<Curve> = trajs.iter().map(|t| Curve::new(t, orders)).collect();
    let t0 = trajs.iter().map(|t| t.t_start()).fold(f64::INFINITY, f64::min);
    let t_end = trajs.iter().map(|t| t.t_end()).fold(f64::NEG_INFINITY, f64::max);
    let total_time = t_end - t0;
    let dt = match sample_dt {
        Some(dt) if dt > 0.0 => dt,
        _ => (total_time / 1e4).max(1e-9),
    };
    let samples = ((total_time / dt).ceil() as usize).max(1);
    let times: Vec<f64> = (0..=samples).map(|j| (t0 + j as f64 * dt).min(t_end)).collect();

    if trajs.len() != params.agents.len() {
        violations.push(format!("{} trajectories for {} agents", trajs.len(), params.agents.len()));
    }

    let mut agents = Vec::new();
    let mut obstacle_clear = true;
    let mut hull_obstacle_clear = true;
    let mut positions: Vec<Vec<Point3>> = Vec::new();
    for (i, (traj, curve)) in trajs.iter().zip(&curves).enumerate() {
        let Some(lim) = params.agents.get(i) else { break };
        let mut max_speed: f64 = 0.0;
        let mut max_accel: f64 = 0.0;
        let mut min_clear = f64::INFINITY;
        let mut pos = Vec::with_capacity(times.len());
        for &t in &times {
            let p = curve.eval(0, t);
            max_speed = max_speed.max(curve.eval(1, t).norm());
            max_accel = max_accel.max(curve.eval(2, t).norm());
            min_clear = min_clear.min(clearance(&p, lim.radius, world));
            pos.push(p);
        }
        if min_clear < -CONTACT_TOL {
            obstacle_clear = false;
            violations.push(format!("agent {i}: obstacle or bounds penetration {:.3e} m", -min_clear));
        }
        let mut hull_speed: f64 = 0.0;
        let mut hull_accel: f64 = 0.0;
        for table in &curve.derivs {
            hull_speed = table[1].iter().map(|p| p.norm()).fold(hull_speed, f64::max);
            hull_accel = table[2].iter().map(|p| p.norm()).fold(hull_accel, f64::max);
            let hull = bounding_box(&table[0]);
            let inner = Aabb { min: world.bounds.min.add_scalar(lim.radius), max: world.bounds.max.add_scalar(-lim.radius) };
            let inside = (0..3).all(|a| hull.min[a] >= inner.min[a] - CONTACT_TOL && hull.max[a] <= inner.max[a] + CONTACT_TOL);
            if !inside || world.obstacles.iter().any(|o| box_box_distance(&hull, o) < lim.radius - CONTACT_TOL) {
                hull_obstacle_clear = false;
            }
        }
        if max_speed > lim.v_max * (1.0 + LIMIT_REL_TOL) {
            violations.push(format!("agent {i}: speed {max_speed:.6} exceeds {}", lim.v_max));
        }
        if max_accel > lim.a_max * (1.0 + LIMIT_REL_TOL) {
            violations.push(format!("agent {i}: acceleration {max_accel:.6} exceeds {}", lim.a_max));
        }

        let mut continuity_errors = Vec::new();
        for m in 1..curve.derivs.len() {
            let mut worst: f64 = 0.0;
            for o in 0..params.phi {
                let left = *curve.derivs[m - 1][o].last().unwrap();
                let right = curve.derivs[m][o][0];
                worst = worst.max((left - right).norm());
            }
            continuity_errors.push(worst);
        }
        let first = &curve.derivs[0];
        let last = curve.derivs.last().unwrap();
        let mut boundary_error = (first[0][0] - lim.start).norm().max((last[0].last().unwrap() - lim.goal).norm());
        for o in 1..params.phi {
            boundary_error = boundary_error.max(first[o][0].norm()).max(last[o].last().unwrap().norm());
        }
        let worst_cont = continuity_errors.iter().copied().fold(0.0, f64::max);
        if worst_cont > CONTINUITY_TOL {
            violations.push(format!("agent {i}: continuity residual {worst_cont:.3e}"));
        }
        if boundary_error > CONTINUITY_TOL {
            violations.push(format!("agent {i}: boundary residual {boundary_error:.3e}"));
        }

        agents.push(AgentReport {
            agent_id: traj.agent_id,
            max_speed,
            max_accel,
            hull_speed,
            hull_accel,
            flight_distance: flight_distance(traj),
            continuity_errors,
            boundary_error,
            min_obstacle_clearance: min_clear,
        });
        positions.push(pos);
    }

    let to_e = |v: Point3| Point3::new(v.x, v.y, v.z / params.c_dw);
    let mut min_ratio = f64::INFINITY;
    let mut hull_ratio = f64::INFINITY;
    let mut closest_pair = None;
    let mut closest_time = 0.0;
    for i in 0..positions.len() {
        for j in i + 1..positions.len() {
            let r_sum = params.agents[i].radius + params.agents[j].radius;
            for (s, &t) in times.iter().enumerate() {
                let ratio = to_e(positions[j][s] - positions[i][s]).norm() / r_sum * 100.0;
                if ratio < min_ratio {
                    min_ratio = ratio;
                    closest_pair = Some((i, j));
                    closest_time = t;
                }
            }
            // same knots are required for the hull bound to apply segment-wise
            if curves[i].knots == curves[j].knots {
                for m in 0..curves[i].derivs.len() {
                    let rel: Vec<Point3> = curves[i].derivs[m][0]
                        .iter()
                        .zip(&curves[j].derivs[m][0])
                        .map(|(a, b)| to_e(b - a))
                        .collect();
                    let d = point_box_distance(&Point3::zeros(), &bounding_box(&rel));
                    hull_ratio = hull_ratio.min(d / r_sum * 100.0);
                }
            } else {
                hull_ratio = 0.0;
            }
        }
    }
    if let Some((i, j)) = closest_pair.filter(|_| min_ratio <= 100.0) {
        violations.push(format!("agents {i} and {j}: margin ratio {min_ratio:.4}% at t = {closest_time:.4}"));
    }

    let objective = trajs.iter().map(|t| objective_cost(t, params.phi)).sum();
    let total_flight_distance = agents.iter().map(|a| a.flight_distance).sum();
    ValidationReport {
        passed: violations.is_empty(),
        violations,
        total_time,
        sample_dt: dt,
        obstacle_clear,
        hull_obstacle_clear,
        min_inter_margin_ratio: min_ratio,
        hull_margin_ratio: hull_ratio,
        closest_pair,
        closest_time,
        objective_cost: objective,
        total_flight_distance,
        agents,
    }
}

/// Writes `t` then position, velocity and acceleration of every agent,
/// sampled every `dt` seconds.
pub fn write_time_series<W: Write>(trajs: &[PiecewiseBezier], dt: f64, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string()];
    for t in trajs {
        for q in ["p", "v", "a"] {
            for axis in ["x", "y", "z"] {
                header.push(format!("{q}{axis}_{}", t.agent_id));
            }
        }
    }
    w.write_record(&header)?;
    if trajs.is_empty() || dt <= 0.0 {
        return w.flush().map_err(Into::into);
    }
    let curves: Vec<Curve> = trajs.iter().map(|t| Curve::new(t, 2)).collect();
    let t0 = trajs[0].t_start();
    let t1 = trajs.iter().map(|t| t.t_end()).fold(t0, f64::max);
    let steps = ((t1 - t0) / dt).ceil() as usize;
    for j in 0..=steps {
        let t = (t0 + j as f64 * dt).min(t1);
        let mut row = vec![t.to_string()];
        for c in &curves {
            for o in 0..3 {
                let v = c.eval(o, t);
                row.extend((0..3).map(|a| v[a].to_string()));
            }
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(Into::into)
}
