//! Bernstein-basis curves: evaluation, hodographs, the derivative-energy
//! Hessian and convex-hull bounds.
//!
//! A segment of degree `n` with control points `c_0..c_n` on `[t_start, t_end]`
//! evaluates to `Σ_k c_k B_{k,n}(τ)` with `τ = (t - t_start)/(t_end - t_start)`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{point_vec, Point3};

/// Highest degree for which basis coefficients are computed exactly.
pub const MAX_DEGREE: usize = 20;

#[derive(Debug, Error, PartialEq)]
pub enum BernsteinError {
    #[error("time {t} outside segment interval [{t_start}, {t_end}]")]
    Domain { t: f64, t_start: f64, t_end: f64 },
    #[error("degree error: {0}")]
    Degree(String),
    #[error("invalid segment: {0}")]
    Invalid(String),
}

const BINOM_ROWS: usize = 2 * MAX_DEGREE + 1;

const fn binomial_table() -> [[u64; BINOM_ROWS]; BINOM_ROWS] {
    let mut t = [[0u64; BINOM_ROWS]; BINOM_ROWS];
    let mut n = 0;
    while n < BINOM_ROWS {
        t[n][0] = 1;
        let mut k = 1;
        while k <= n {
            t[n][k] = t[n - 1][k - 1] + if k < n { t[n - 1][k] } else { 0 };
            k += 1;
        }
        n += 1;
    }
    t
}

static BINOMIAL: [[u64; BINOM_ROWS]; BINOM_ROWS] = binomial_table();

/// Exact binomial coefficient for `n ≤ 40`.
pub fn binomial(n: usize, k: usize) -> u64 {
    assert!(n < BINOM_ROWS, "binomial table holds n < {BINOM_ROWS}");
    if k > n {
        0
    } else {
        BINOMIAL[n][k]
    }
}

/// `B_{k,n}(τ)`.
pub fn basis(n: usize, k: usize, tau: f64) -> f64 {
    binomial(n, k) as f64 * tau.powi(k as i32) * (1.0 - tau).powi((n - k) as i32)
}

/// `n! / (n - r)!`
fn falling_factorial(n: usize, r: usize) -> f64 {
    ((n - r + 1)..=n).map(|v| v as f64).product()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BernsteinSegment {
    #[serde(with = "point_vec")]
    control_points: Vec<Point3>,
    t_start: f64,
    t_end: f64,
}

impl BernsteinSegment {
    pub fn new(control_points: Vec<Point3>, t_start: f64, t_end: f64) -> Result<Self, BernsteinError> {
        if control_points.is_empty() {
            return Err(BernsteinError::Invalid("segment needs at least one control point".into()));
        }
        if control_points.len() > MAX_DEGREE + 1 {
            return Err(BernsteinError::Degree(format!(
                "degree {} exceeds supported maximum {MAX_DEGREE}",
                control_points.len() - 1
            )));
        }
        if !(t_end > t_start) {
            return Err(BernsteinError::Invalid(format!("t_end {t_end} must exceed t_start {t_start}")));
        }
        Ok(BernsteinSegment { control_points, t_start, t_end })
    }

    pub fn degree(&self) -> usize {
        self.control_points.len() - 1
    }

    pub fn control_points(&self) -> &[Point3] {
        &self.control_points
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn duration(&self) -> f64 {
        self.t_end - self.t_start
    }

    pub fn evaluate(&self, t: f64) -> Result<Point3, BernsteinError> {
        if !(t >= self.t_start && t <= self.t_end) {
            return Err(BernsteinError::Domain { t, t_start: self.t_start, t_end: self.t_end });
        }
        if t == self.t_end {
            return Ok(*self.control_points.last().unwrap());
        }
        Ok(self.eval_tau((t - self.t_start) / self.duration()))
    }

    /// Evaluation at normalized time `τ ∈ [0, 1]`.
    pub fn eval_tau(&self, tau: f64) -> Point3 {
        let n = self.degree();
        self.control_points
            .iter()
            .enumerate()
            .fold(Point3::zeros(), |acc, (k, c)| acc + c * basis(n, k, tau))
    }

    /// Hodograph: the time derivative as a segment of degree `n - 1`.
    pub fn derivative(&self) -> Result<BernsteinSegment, BernsteinError> {
        let n = self.degree();
        if n == 0 {
            return Err(BernsteinError::Degree("cannot differentiate a degree-0 segment".into()));
        }
        let scale = n as f64 / self.duration();
        let pts = self.control_points.windows(2).map(|w| (w[1] - w[0]) * scale).collect();
        Ok(BernsteinSegment { control_points: pts, t_start: self.t_start, t_end: self.t_end })
    }

    pub fn nth_derivative(&self, order: usize) -> Result<BernsteinSegment, BernsteinError> {
        if order > self.degree() {
            return Err(BernsteinError::Degree(format!(
                "derivative order {order} exceeds degree {}",
                self.degree()
            )));
        }
        let mut seg = self.clone();
        for _ in 0..order {
            seg = seg.derivative()?;
        }
        Ok(seg)
    }

    /// Per-axis `[min, max]` over the control points of the `order`-th
    /// derivative. Encloses the true range of that derivative on the segment.
    pub fn extremum_bound(&self, order: usize) -> Result<[(f64, f64); 3], BernsteinError> {
        let d = self.nth_derivative(order)?;
        let mut out = [(f64::INFINITY, f64::NEG_INFINITY); 3];
        for p in &d.control_points {
            for (a, iv) in out.iter_mut().enumerate() {
                iv.0 = iv.0.min(p[a]);
                iv.1 = iv.1.max(p[a]);
            }
        }
        Ok(out)
    }

    /// Largest Euclidean norm among the control points of the `order`-th
    /// derivative; bounds the derivative's norm on the whole segment.
    pub fn norm_bound(&self, order: usize) -> Result<f64, BernsteinError> {
        let d = self.nth_derivative(order)?;
        Ok(d.control_points.iter().map(|p| p.norm()).fold(0.0, f64::max))
    }

    /// Same curve on a time axis stretched by `k` about zero.
    pub fn time_scaled(&self, k: f64) -> BernsteinSegment {
        BernsteinSegment { control_points: self.control_points.clone(), t_start: self.t_start * k, t_end: self.t_end * k }
    }
}

/// An agent's trajectory: segments tiling `[T_0, T_M]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseBezier {
    pub agent_id: usize,
    segments: Vec<BernsteinSegment>,
}

impl PiecewiseBezier {
    pub fn new(agent_id: usize, segments: Vec<BernsteinSegment>) -> Result<Self, BernsteinError> {
        if segments.is_empty() {
            return Err(BernsteinError::Invalid("trajectory needs at least one segment".into()));
        }
        for w in segments.windows(2) {
            if w[0].t_end != w[1].t_start {
                return Err(BernsteinError::Invalid(format!(
                    "segment times do not tile: {} then {}",
                    w[0].t_end, w[1].t_start
                )));
            }
        }
        Ok(PiecewiseBezier { agent_id, segments })
    }

    /// Builds from per-segment control points and `M + 1` knots.
    pub fn from_control_points(agent_id: usize, points: Vec<Vec<Point3>>, knots: &[f64]) -> Result<Self, BernsteinError> {
        if knots.len() != points.len() + 1 {
            return Err(BernsteinError::Invalid(format!(
                "{} segments need {} knots, got {}",
                points.len(),
                points.len() + 1,
                knots.len()
            )));
        }
        let segments = points
            .into_iter()
            .enumerate()
            .map(|(m, cps)| BernsteinSegment::new(cps, knots[m], knots[m + 1]))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(agent_id, segments)
    }

    pub fn segments(&self) -> &[BernsteinSegment] {
        &self.segments
    }

    pub fn num_segments(&self) -> usize {
        self.segments.len()
    }

    pub fn degree(&self) -> usize {
        self.segments[0].degree()
    }

    pub fn t_start(&self) -> f64 {
        self.segments[0].t_start
    }

    pub fn t_end(&self) -> f64 {
        self.segments.last().unwrap().t_end
    }

    pub fn knots(&self) -> Vec<f64> {
        let mut k: Vec<f64> = self.segments.iter().map(|s| s.t_start).collect();
        k.push(self.t_end());
        k
    }

    /// Evaluation with `t` clamped to the trajectory's interval.
    pub fn evaluate(&self, t: f64) -> Point3 {
        let t = t.clamp(self.t_start(), self.t_end());
        let idx = self.segments.partition_point(|s| s.t_end < t).min(self.segments.len() - 1);
        self.segments[idx].evaluate(t).expect("clamped time lies in segment")
    }

    pub fn derivative(&self) -> Result<PiecewiseBezier, BernsteinError> {
        let segs = self.segments.iter().map(|s| s.derivative()).collect::<Result<Vec<_>, _>>()?;
        Ok(PiecewiseBezier { agent_id: self.agent_id, segments: segs })
    }

    pub fn time_scaled(&self, k: f64) -> PiecewiseBezier {
        PiecewiseBezier { agent_id: self.agent_id, segments: self.segments.iter().map(|s| s.time_scaled(k)).collect() }
    }

    /// Control points flattened segment-major then point index.
    pub fn flat_control_points(&self) -> Vec<Point3> {
        self.segments.iter().flat_map(|s| s.control_points.iter().copied()).collect()
    }

    /// `∫ ‖d^φ p/dt^φ‖² dt` over the whole trajectory, via [`objective_hessian`].
    pub fn derivative_energy(&self, phi: usize) -> Result<f64, BernsteinError> {
        let n = self.degree();
        let h = objective_hessian(n, phi, &self.knots())?;
        let pts = self.flat_control_points();
        Ok((0..3).map(|a| h.quad_form(&pts.iter().map(|p| p[a]).collect::<Vec<_>>())).sum())
    }
}

/// Per-axis objective Hessian: one `(n+1)×(n+1)` block per segment.
///
/// The same matrix applies to the x, y and z coordinates independently, so
/// the full Hessian over a stacked 3D vector is this block diagonal repeated
/// per axis.
#[derive(Debug, Clone)]
pub struct SegmentHessian {
    pub degree: usize,
    pub blocks: Vec<DMatrix<f64>>,
}

impl SegmentHessian {
    /// `xᵀ Q x` for one axis, with `x` segment-major of length `M(n+1)`.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        let w = self.degree + 1;
        assert_eq!(x.len(), w * self.blocks.len());
        self.blocks
            .iter()
            .enumerate()
            .map(|(m, b)| {
                let xs = &x[m * w..(m + 1) * w];
                let mut s = 0.0;
                for i in 0..w {
                    for j in 0..w {
                        s += xs[i] * b[(i, j)] * xs[j];
                    }
                }
                s
            })
            .sum()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let w = self.degree + 1;
        let n = w * self.blocks.len();
        let mut q = DMatrix::zeros(n, n);
        for (m, b) in self.blocks.iter().enumerate() {
            q.view_mut((m * w, m * w), (w, w)).copy_from(b);
        }
        q
    }
}

/// Hessian of `Σ_m ∫ ‖d^φ p/dt^φ‖² dt` with respect to one axis of the control
/// points, for segments of degree `n` between consecutive `knots`.
pub fn objective_hessian(n: usize, phi: usize, knots: &[f64]) -> Result<SegmentHessian, BernsteinError> {
    if phi > n {
        return Err(BernsteinError::Degree(format!("derivative order {phi} exceeds degree {n}")));
    }
    if n > MAX_DEGREE {
        return Err(BernsteinError::Degree(format!("degree {n} exceeds supported maximum {MAX_DEGREE}")));
    }
    if knots.len() < 2 {
        return Err(BernsteinError::Invalid("need at least two knots".into()));
    }
    if knots.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(BernsteinError::Invalid("knots must be strictly increasing".into()));
    }

    let m = n - phi;
    // Gram matrix of the degree-m basis on [0,1]:
    // ∫ B_{a,m} B_{b,m} = C(m,a) C(m,b) / ((2m+1) C(2m, a+b)).
    let gram = DMatrix::from_fn(m + 1, m + 1, |a, b| {
        binomial(m, a) as f64 * binomial(m, b) as f64 / ((2 * m + 1) as f64 * binomial(2 * m, a + b) as f64)
    });
    // φ-th forward difference: (Δ^φ c)_j = Σ_i (-1)^{φ-i} C(φ,i) c_{j+i}.
    let diff = DMatrix::from_fn(m + 1, n + 1, |j, col| {
        if col >= j && col - j <= phi {
            let i = col - j;
            let sign = if (phi - i).is_multiple_of(2) { 1.0 } else { -1.0 };
            sign * binomial(phi, i) as f64
        } else {
            0.0
        }
    });
    let base = diff.transpose() * gram * &diff;
    let ff = falling_factorial(n, phi);

    let blocks = knots
        .windows(2)
        .map(|w| {
            let h = w[1] - w[0];
            // d^φ/dt^φ = h^{-φ} d^φ/dτ^φ and dt = h dτ.
            let s = ff * ff / h.powi(2 * phi as i32 - 1);
            let mut b = &base * s;
            // exact symmetry
            for i in 0..=n {
                for j in 0..i {
                    let v = 0.5 * (b[(i, j)] + b[(j, i)]);
                    b[(i, j)] = v;
                    b[(j, i)] = v;
                }
            }
            b
        })
        .collect();
    Ok(SegmentHessian { degree: n, blocks })
}
