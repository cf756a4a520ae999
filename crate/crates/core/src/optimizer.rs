//! Corridor-constrained trajectory optimization.
//!
//! Agents are split into batches. Each batch solves one convex QP over its
//! members' control points while every other agent is held fixed: agents not
//! yet optimized sit on their *dummy* trajectory (control points placed on
//! their discrete plan), agents from earlier batches on their optimized one.
//! The dummy assignment of the batch members always satisfies every
//! constraint of the batch QP, which [`BatchProblem::witness_report`] checks
//! mechanically before each solve.
//!
//! Decision vector layout for a batch: agent (in batch order), then segment,
//! then control point index, then axis:
//! `idx = ((a·M + m)·(n+1) + k)·3 + axis`.

use std::time::Instant;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{DefaultSettings, DefaultSolver, IPSolver, SolverStatus, SupportedConeT};
use serde::Serialize;
use thiserror::Error;

use crate::bernstein::{binomial, objective_hessian, BernsteinError, PiecewiseBezier, SegmentHessian};
use crate::corridor::Corridors;
use crate::geometry::{Aabb, Point3};
use crate::mapf::DiscretePlan;

#[derive(Debug, Error)]
pub enum OptError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Bernstein(#[from] BernsteinError),
    #[error("batch {batch}: feasibility witness violates the assembled constraints (equality residual {eq_residual:e}, min slack {min_slack:e})")]
    WitnessInfeasible { batch: usize, eq_residual: f64, min_slack: f64 },
    #[error("batch {batch}: QP solver failed with status {status}")]
    Solver { batch: usize, status: String, dump: Option<String> },
    #[error("batch {batch}: solution violates constraints by {violation:e}")]
    Infeasible { batch: usize, violation: f64 },
}

#[derive(Debug, Clone)]
pub struct OptimizerConfig {
    pub degree: usize,
    /// Derivative order of the objective; derivatives below it are
    /// continuous and vanish at both ends.
    pub phi: usize,
    /// Extra clearance imposed on every pair half-space in the QP.
    pub rsfc_margin: f64,
    /// Also verify half-spaces between two fixed agents in every batch.
    pub strict_rsfc: bool,
    /// Accepted constraint violation of a returned solution.
    pub feasibility_tol: f64,
    /// Leave out pair rows that the box rows already imply.
    pub prune_implied_rows: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig { degree: 5, phi: 3, rsfc_margin: 1e-6, strict_rsfc: false, feasibility_tol: 1e-6, prune_implied_rows: true }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), OptError> {
        if self.phi == 0 {
            return Err(OptError::Config("phi must be at least 1".into()));
        }
        if self.degree < 2 * self.phi - 1 {
            return Err(OptError::Config(format!(
                "degree {} is below 2·phi − 1 = {}; feasibility is not guaranteed",
                self.degree,
                2 * self.phi - 1
            )));
        }
        if self.degree > crate::bernstein::MAX_DEGREE {
            return Err(OptError::Config(format!("degree {} is too large", self.degree)));
        }
        Ok(())
    }
}

pub fn uniform_knots(segments: usize, step: f64) -> Vec<f64> {
    (0..=segments).map(|m| m as f64 * step).collect()
}

/// Trajectory that rests at each waypoint: the first `phi` control points of
/// segment `m` sit on `π_{m-1}`, the last `phi` on `π_m`, and any remaining
/// middle points are spaced evenly along the segment between them.
pub fn plan_dummy(plan: &DiscretePlan, n: usize, phi: usize, knots: &[f64]) -> Result<PiecewiseBezier, OptError> {
    if phi == 0 || n + 1 < 2 * phi {
        return Err(OptError::Config(format!("degree {n} is below 2·phi − 1 for phi = {phi}")));
    }
    let middle = n + 1 - 2 * phi;
    let points = (0..plan.makespan())
        .map(|m| {
            let (a, b) = plan.segment(m);
            (0..=n)
                .map(|k| {
                    if k < phi {
                        a
                    } else if k > n - phi {
                        b
                    } else {
                        let frac = (k - phi + 1) as f64 / (middle + 1) as f64;
                        a + (b - a) * frac
                    }
                })
                .collect()
        })
        .collect();
    Ok(PiecewiseBezier::from_control_points(plan.agent_id, points, knots)?)
}

/// Contiguous ascending-id groups; earlier groups take the remainder.
pub fn partition_batches(num_agents: usize, num_batches: usize) -> Result<Vec<Vec<usize>>, OptError> {
    if num_batches == 0 || num_batches > num_agents {
        return Err(OptError::Config(format!("batch count {num_batches} must lie in 1..={num_agents}")));
    }
    let base = num_agents / num_batches;
    let extra = num_agents % num_batches;
    let mut out = Vec::with_capacity(num_batches);
    let mut next = 0;
    for b in 0..num_batches {
        let size = base + usize::from(b < extra);
        out.push((next..next + size).collect());
        next += size;
    }
    Ok(out)
}

/// Sparse linear rows `Σ coef · x[idx]` with right-hand sides.
#[derive(Debug, Clone, Default, Serialize)]
pub struct SparseRows {
    pub rows: Vec<Vec<(usize, f64)>>,
    pub rhs: Vec<f64>,
}

impl SparseRows {
    fn push(&mut self, row: Vec<(usize, f64)>, rhs: f64) {
        self.rows.push(row);
        self.rhs.push(rhs);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn eval(&self, i: usize, x: &[f64]) -> f64 {
        self.rows[i].iter().map(|&(j, c)| c * x[j]).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RowKind {
    Sfc,
    Rsfc,
}

/// Result of evaluating a candidate point against a batch's constraints.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ConstraintReport {
    /// max |A_eq x − b_eq|
    pub eq_residual: f64,
    /// min (b − A x) over inequality rows; negative means violated.
    pub min_slack: f64,
}

impl ConstraintReport {
    pub fn satisfied(&self, tol: f64) -> bool {
        self.eq_residual <= tol && self.min_slack >= -tol
    }
}

/// One batch QP: minimize `xᵀ Q x` s.t. `A_eq x = b_eq`, `A x ≤ b`.
#[derive(Debug, Clone)]
pub struct BatchProblem {
    pub batch_index: usize,
    pub agents: Vec<usize>,
    pub segments: usize,
    pub degree: usize,
    pub hessian: SegmentHessian,
    pub eq: SparseRows,
    /// Inequalities in `A x ≤ b` form.
    pub ineq: SparseRows,
    pub ineq_kind: Vec<RowKind>,
    /// Dummy assignment of the batch members.
    pub witness: Vec<f64>,
    /// Pair half-space slack among fixed agents (strict mode only).
    pub fixed_pair_min_slack: Option<f64>,
    /// Pair rows left out because the boxes imply them.
    pub pruned_rows: usize,
}

impl BatchProblem {
    pub fn num_vars(&self) -> usize {
        self.agents.len() * self.segments * (self.degree + 1) * 3
    }

    fn var(&self, agent_slot: usize, m: usize, k: usize, axis: usize) -> usize {
        ((agent_slot * self.segments + m) * (self.degree + 1) + k) * 3 + axis
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let w = self.degree + 1;
        let per_agent = self.segments * w * 3;
        let mut total = 0.0;
        for a in 0..self.agents.len() {
            for axis in 0..3 {
                let v: Vec<f64> = (0..self.segments * w).map(|i| x[a * per_agent + i * 3 + axis]).collect();
                total += self.hessian.quad_form(&v);
            }
        }
        total
    }

    pub fn evaluate(&self, x: &[f64]) -> ConstraintReport {
        let eq_residual = (0..self.eq.len()).map(|i| (self.eq.eval(i, x) - self.eq.rhs[i]).abs()).fold(0.0, f64::max);
        let min_slack = (0..self.ineq.len()).map(|i| self.ineq.rhs[i] - self.ineq.eval(i, x)).fold(f64::INFINITY, f64::min);
        ConstraintReport { eq_residual, min_slack }
    }

    pub fn witness_report(&self) -> ConstraintReport {
        self.evaluate(&self.witness)
    }

    fn trajectories(&self, x: &[f64], knots: &[f64]) -> Result<Vec<PiecewiseBezier>, OptError> {
        self.agents
            .iter()
            .enumerate()
            .map(|(slot, &id)| {
                let pts = (0..self.segments)
                    .map(|m| {
                        (0..=self.degree)
                            .map(|k| {
                                Point3::new(
                                    x[self.var(slot, m, k, 0)],
                                    x[self.var(slot, m, k, 1)],
                                    x[self.var(slot, m, k, 2)],
                                )
                            })
                            .collect()
                    })
                    .collect();
                Ok(PiecewiseBezier::from_control_points(id, pts, knots)?)
            })
            .collect()
    }

    /// Upper-triangular `P = 2Q` in CSC form, scaled by `scale`.
    fn hessian_csc(&self, scale: f64) -> CscMatrix<f64> {
        let w = self.degree + 1;
        let (mut ii, mut jj, mut vv) = (Vec::new(), Vec::new(), Vec::new());
        for a in 0..self.agents.len() {
            for (m, block) in self.hessian.blocks.iter().enumerate() {
                for k1 in 0..w {
                    for k2 in k1..w {
                        let v = block[(k1, k2)];
                        if v == 0.0 {
                            continue;
                        }
                        for axis in 0..3 {
                            ii.push(self.var(a, m, k1, axis));
                            jj.push(self.var(a, m, k2, axis));
                            vv.push(2.0 * v * scale);
                        }
                    }
                }
            }
        }
        let n = self.num_vars();
        CscMatrix::new_from_triplets(n, n, ii, jj, vv)
    }

    fn constraint_csc(&self) -> (CscMatrix<f64>, Vec<f64>) {
        let (mut ii, mut jj, mut vv) = (Vec::new(), Vec::new(), Vec::new());
        let mut b = Vec::with_capacity(self.eq.len() + self.ineq.len());
        for (r, row) in self.eq.rows.iter().chain(self.ineq.rows.iter()).enumerate() {
            for &(j, c) in row {
                ii.push(r);
                jj.push(j);
                vv.push(c);
            }
        }
        b.extend_from_slice(&self.eq.rhs);
        b.extend_from_slice(&self.ineq.rhs);
        (CscMatrix::new_from_triplets(b.len(), self.num_vars(), ii, jj, vv), b)
    }

    /// JSON dump of the problem data for offline inspection.
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Dump<'a> {
            batch_index: usize,
            agents: &'a [usize],
            num_vars: usize,
            layout: &'static str,
            hessian_blocks_per_axis: Vec<Vec<Vec<f64>>>,
            eq: &'a SparseRows,
            ineq: &'a SparseRows,
            ineq_kind: &'a [RowKind],
            witness: &'a [f64],
        }
        let blocks = self
            .hessian
            .blocks
            .iter()
            .map(|b| (0..b.nrows()).map(|i| (0..b.ncols()).map(|j| b[(i, j)]).collect()).collect())
            .collect();
        serde_json::to_string(&Dump {
            batch_index: self.batch_index,
            agents: &self.agents,
            num_vars: self.num_vars(),
            layout: "((agent*M + segment)*(n+1) + k)*3 + axis",
            hessian_blocks_per_axis: blocks,
            eq: &self.eq,
            ineq: &self.ineq,
            ineq_kind: &self.ineq_kind,
            witness: &self.witness,
        })
        .expect("problem serializes")
    }
}

/// Coefficients of the `order`-th τ-derivative at an end of a degree-`n`
/// segment, up to the factor `n!/(n−order)!`, as `(control index, weight)`.
fn end_derivative_weights(n: usize, order: usize, at_end: bool) -> Vec<(usize, f64)> {
    (0..=order)
        .map(|j| {
            let sign = if (order - j).is_multiple_of(2) { 1.0 } else { -1.0 };
            let idx = if at_end { n - order + j } else { j };
            (idx, sign * binomial(order, j) as f64)
        })
        .collect()
}

/// Assembles the QP for `batch` with all other agents fixed at `current`.
#[allow(clippy::too_many_arguments)]
pub fn assemble_batch(
    batch_index: usize,
    batch: &[usize],
    plans: &[DiscretePlan],
    corridors: &Corridors,
    current: &[PiecewiseBezier],
    dummies: &[PiecewiseBezier],
    knots: &[f64],
    cfg: &OptimizerConfig,
) -> Result<BatchProblem, OptError> {
    cfg.validate()?;
    let n = cfg.degree;
    let phi = cfg.phi;
    let segments = knots.len() - 1;
    let hessian = objective_hessian(n, phi, knots)?;
    let num_agents = plans.len();
    let mut slot_of = vec![None; num_agents];
    for (s, &a) in batch.iter().enumerate() {
        slot_of[a] = Some(s);
    }

    let mut problem = BatchProblem {
        batch_index,
        agents: batch.to_vec(),
        segments,
        degree: n,
        hessian,
        eq: SparseRows::default(),
        ineq: SparseRows::default(),
        ineq_kind: Vec::new(),
        witness: Vec::new(),
        fixed_pair_min_slack: None,
        pruned_rows: 0,
    };
    let durations: Vec<f64> = knots.windows(2).map(|w| w[1] - w[0]).collect();

    for (slot, &agent) in batch.iter().enumerate() {
        let plan = &plans[agent];
        if plan.makespan() != segments {
            return Err(OptError::Config(format!("agent {agent} plan has {} segments, expected {segments}", plan.makespan())));
        }
        let start = plan.waypoints[0];
        let goal = plan.waypoints[segments];
        for axis in 0..3 {
            // boundary conditions: position, then zero derivatives 1..phi-1
            for order in 0..phi {
                let row = end_derivative_weights(n, order, false)
                    .into_iter()
                    .map(|(k, c)| (problem.var(slot, 0, k, axis), c))
                    .collect();
                problem.eq.push(row, if order == 0 { start[axis] } else { 0.0 });
                let row = end_derivative_weights(n, order, true)
                    .into_iter()
                    .map(|(k, c)| (problem.var(slot, segments - 1, k, axis), c))
                    .collect();
                problem.eq.push(row, if order == 0 { goal[axis] } else { 0.0 });
            }
            // continuity of derivatives 0..phi-1 at interior knots
            for m in 0..segments.saturating_sub(1) {
                for order in 0..phi {
                    let ratio = (durations[m] / durations[m + 1]).powi(order as i32);
                    let mut row: Vec<(usize, f64)> = end_derivative_weights(n, order, true)
                        .into_iter()
                        .map(|(k, c)| (problem.var(slot, m, k, axis), c))
                        .collect();
                    row.extend(
                        end_derivative_weights(n, order, false)
                            .into_iter()
                            .map(|(k, c)| (problem.var(slot, m + 1, k, axis), -c * ratio)),
                    );
                    problem.eq.push(row, 0.0);
                }
            }
        }
        // box corridors
        for m in 0..segments {
            let bx = &corridors.sfc[agent][m];
            for k in 0..=n {
                for axis in 0..3 {
                    let v = problem.var(slot, m, k, axis);
                    problem.ineq.push(vec![(v, 1.0)], bx.max[axis]);
                    problem.ineq_kind.push(RowKind::Sfc);
                    problem.ineq.push(vec![(v, -1.0)], -bx.min[axis]);
                    problem.ineq_kind.push(RowKind::Sfc);
                }
            }
        }
    }

    // pair half-spaces a·(c_j − c_i) ≥ β written as a·c_i − a·c_j ≤ −β
    let mut fixed_min = f64::INFINITY;
    for pair in &corridors.rsfc {
        let (si, sj) = (slot_of[pair.i], slot_of[pair.j]);
        if si.is_none() && sj.is_none() {
            if cfg.strict_rsfc {
                for (m, h) in pair.halfspaces.iter().enumerate() {
                    let (ci, cj) = (current[pair.i].segments()[m].control_points(), current[pair.j].segments()[m].control_points());
                    for k in 0..=n {
                        fixed_min = fixed_min.min(h.slack(&(cj[k] - ci[k])) - cfg.rsfc_margin);
                    }
                }
            }
            continue;
        }
        for (m, h) in pair.halfspaces.iter().enumerate() {
            let a = h.plane_normal();
            let beta = h.offset + cfg.rsfc_margin;
            // largest value the variable part can take inside the boxes
            let mut var_max = 0.0;
            if si.is_some() {
                var_max += support(&a, &corridors.sfc[pair.i][m]);
            }
            if sj.is_some() {
                var_max += support(&-a, &corridors.sfc[pair.j][m]);
            }
            for k in 0..=n {
                let mut row = Vec::with_capacity(6);
                let mut rhs = -beta;
                match si {
                    Some(s) => row.extend((0..3).map(|axis| (problem.var(s, m, k, axis), a[axis]))),
                    None => rhs -= a.dot(&current[pair.i].segments()[m].control_points()[k]),
                }
                match sj {
                    Some(s) => row.extend((0..3).map(|axis| (problem.var(s, m, k, axis), -a[axis]))),
                    None => rhs += a.dot(&current[pair.j].segments()[m].control_points()[k]),
                }
                if cfg.prune_implied_rows && var_max <= rhs {
                    problem.pruned_rows += 1;
                    continue;
                }
                problem.ineq.push(row, rhs);
                problem.ineq_kind.push(RowKind::Rsfc);
            }
        }
    }
    if cfg.strict_rsfc {
        problem.fixed_pair_min_slack = Some(fixed_min);
    }

    let mut witness = vec![0.0; problem.num_vars()];
    for (slot, &agent) in batch.iter().enumerate() {
        for (m, seg) in dummies[agent].segments().iter().enumerate() {
            for (k, p) in seg.control_points().iter().enumerate() {
                for axis in 0..3 {
                    witness[problem.var(slot, m, k, axis)] = p[axis];
                }
            }
        }
    }
    problem.witness = witness;
    Ok(problem)
}

fn support(dir: &Point3, bx: &Aabb) -> f64 {
    (0..3).map(|a| (dir[a] * bx.min[a]).max(dir[a] * bx.max[a])).sum()
}

#[derive(Debug, Clone, Serialize)]
pub struct BatchStats {
    pub batch_index: usize,
    pub agents: Vec<usize>,
    pub num_vars: usize,
    pub eq_rows: usize,
    pub ineq_rows: usize,
    pub pruned_rows: usize,
    pub witness: ConstraintReport,
    pub solution: ConstraintReport,
    pub status: String,
    /// Solved as optimal on the first attempt.
    pub optimal: bool,
    pub retried: bool,
    pub iterations: u32,
    pub objective: f64,
    pub solve_seconds: f64,
}

/// Polar form of a Bernstein polynomial, evaluated at `args`.
fn blossom(cps: &[f64], args: &[f64]) -> f64 {
    let mut pts = cps.to_vec();
    for (r, &u) in args.iter().enumerate() {
        for i in 0..pts.len() - 1 - r {
            pts[i] = (1.0 - u) * pts[i] + u * pts[i + 1];
        }
    }
    pts[0]
}

/// Straight rest-to-rest trajectory of every batch member, minimizing the
/// `phi`-th derivative over the whole horizon: a degree `2φ-1` curve with
/// `φ` control points at the start and `φ` at the goal, elevated to the
/// problem degree and cut at the knots.
fn straight_center(problem: &BatchProblem, knots: &[f64], phi: usize) -> Vec<f64> {
    let n = problem.degree;
    let last = problem.segments - 1;
    let (t0, t1) = (knots[0], knots[knots.len() - 1]);
    let mut c = vec![0.0; problem.num_vars()];
    for a in 0..problem.agents.len() {
        for axis in 0..3 {
            let s = problem.witness[problem.var(a, 0, 0, axis)];
            let g = problem.witness[problem.var(a, last, n, axis)];
            let mut cps: Vec<f64> = (0..2 * phi).map(|k| if k < phi { s } else { g }).collect();
            while cps.len() < n + 1 {
                let d = cps.len() as f64;
                let mut up = vec![cps[0]];
                for i in 1..cps.len() {
                    let f = i as f64 / d;
                    up.push(f * cps[i - 1] + (1.0 - f) * cps[i]);
                }
                up.push(cps[cps.len() - 1]);
                cps = up;
            }
            for m in 0..problem.segments {
                let u0 = (knots[m] - t0) / (t1 - t0);
                let u1 = (knots[m + 1] - t0) / (t1 - t0);
                for k in 0..=n {
                    let args: Vec<f64> = (0..n).map(|i| if i < n - k { u0 } else { u1 }).collect();
                    c[problem.var(a, m, k, axis)] = blossom(&cps, &args);
                }
            }
        }
    }
    c
}

/// Solves for `x = c + δ` with the objective divided by `cost_scale`.
fn clarabel_solve(problem: &BatchProblem, center: &[f64], cost_scale: f64, settings: DefaultSettings<f64>) -> (SolverStatus, Vec<f64>, u32) {
    let p = problem.hessian_csc(1.0 / cost_scale);
    let (a, mut b) = problem.constraint_csc();
    let n = problem.num_vars();
    let mut q = vec![0.0; n];
    for col in 0..n {
        for idx in p.colptr[col]..p.colptr[col + 1] {
            let row = p.rowval[idx];
            let v = p.nzval[idx];
            q[row] += v * center[col];
            if row != col {
                q[col] += v * center[row];
            }
        }
    }
    for (col, &c) in center.iter().enumerate() {
        for idx in a.colptr[col]..a.colptr[col + 1] {
            b[a.rowval[idx]] -= a.nzval[idx] * c;
        }
    }
    let cones = [SupportedConeT::ZeroConeT(problem.eq.len()), SupportedConeT::NonnegativeConeT(problem.ineq.len())];
    let mut solver = match DefaultSolver::new(&p, &q, &a, &b, &cones, settings) {
        Ok(s) => s,
        Err(_) => return (SolverStatus::NumericalError, Vec::new(), 0),
    };
    solver.solve();
    let x = solver.solution.x.iter().zip(center).map(|(d, c)| c + d).collect();
    (solver.solution.status, x, solver.solution.iterations)
}

fn careful_settings() -> DefaultSettings<f64> {
    DefaultSettings {
        verbose: false,
        max_iter: 400,
        max_step_fraction: 0.95,
        iterative_refinement_reltol: 1e-15,
        iterative_refinement_max_iter: 20,
        iterative_refinement_stop_ratio: 1.5,
        ..DefaultSettings::default()
    }
}

/// Main solve, centered on the straight rest-to-rest trajectories and
/// scaled by their cost, which bounds the optimum from below. The dual
/// residual tolerance is 1e-6: stationarity stalls near 1e-7 on long
/// horizons, and primal feasibility is checked separately.
fn solve_centered(problem: &BatchProblem, knots: &[f64], phi: usize) -> (SolverStatus, Vec<f64>, u32) {
    let center = straight_center(problem, knots, phi);
    let floor = 1e-12 * problem.objective(&problem.witness).max(1.0);
    let cost = problem.objective(&center).max(floor);
    clarabel_solve(problem, &center, cost, DefaultSettings { tol_feas: 1e-6, ..careful_settings() })
}

/// Fallback solve around the witness, scaled by the witness cost. More
/// robust but only accurate to roughly 1e-2 in relative cost.
fn solve_around_witness(problem: &BatchProblem) -> (SolverStatus, Vec<f64>, u32) {
    let cost = problem.objective(&problem.witness).max(1e-12);
    clarabel_solve(problem, &problem.witness, cost, DefaultSettings { static_regularization_constant: 1e-7, ..careful_settings() })
}

/// Removes residual solver-tolerance violations: clips box rows exactly,
/// then moves toward the witness by the smallest convex weight that brings
/// every pair row within `pair_allowance` of its bound. The allowance is
/// spent from the pair margin, so the curves still keep strictly apart.
fn restore_feasibility(problem: &BatchProblem, x: &mut [f64], pair_allowance: f64) {
    for (i, row) in problem.ineq.rows.iter().enumerate() {
        if problem.ineq_kind[i] == RowKind::Sfc {
            let (j, c) = row[0];
            let slack = problem.ineq.rhs[i] - c * x[j];
            if slack < 0.0 {
                x[j] = problem.ineq.rhs[i] / c;
            }
        }
    }
    let w = &problem.witness;
    let mut theta: f64 = 0.0;
    for i in 0..problem.ineq.len() {
        let allowance = if problem.ineq_kind[i] == RowKind::Rsfc { pair_allowance } else { 0.0 };
        let sx = problem.ineq.rhs[i] + allowance - problem.ineq.eval(i, x);
        if sx >= 0.0 {
            continue;
        }
        let sw = problem.ineq.rhs[i] + allowance - problem.ineq.eval(i, w);
        if sw > 0.0 {
            theta = theta.max(-sx / (sw - sx));
        }
    }
    if theta > 0.0 {
        let theta = (theta * (1.0 + 1e-6) + 1e-15).min(1.0);
        for (xi, wi) in x.iter_mut().zip(w) {
            *xi = theta * wi + (1.0 - theta) * *xi;
        }
    }
}

/// Solves one batch. Returns the batch members' trajectories.
pub fn solve_batch_qp(problem: &BatchProblem, knots: &[f64], cfg: &OptimizerConfig) -> Result<(Vec<PiecewiseBezier>, BatchStats), OptError> {
    let started = Instant::now();
    let witness = problem.witness_report();
    if !witness.satisfied(1e-9) {
        return Err(OptError::WitnessInfeasible { batch: problem.batch_index, eq_residual: witness.eq_residual, min_slack: witness.min_slack });
    }
    if let Some(s) = problem.fixed_pair_min_slack {
        if s < -cfg.feasibility_tol {
            return Err(OptError::Infeasible { batch: problem.batch_index, violation: -s });
        }
    }

    let (mut status, mut x, mut iterations) = solve_centered(problem, knots, cfg.phi);
    let optimal = status == SolverStatus::Solved;
    let mut retried = false;
    if !optimal {
        log::warn!("batch {}: solver status {:?}, retrying around the witness", problem.batch_index, status);
        retried = true;
        let first = iterations;
        (status, x, iterations) = solve_around_witness(problem);
        iterations += first;
        if !matches!(status, SolverStatus::Solved | SolverStatus::AlmostSolved) {
            return Err(OptError::Solver { batch: problem.batch_index, status: format!("{status:?}"), dump: Some(problem.to_json()) });
        }
    }
    restore_feasibility(problem, &mut x, 0.5 * cfg.rsfc_margin);
    let report = problem.evaluate(&x);
    if !report.satisfied(cfg.feasibility_tol) {
        return Err(OptError::Infeasible { batch: problem.batch_index, violation: report.eq_residual.max(-report.min_slack) });
    }
    let trajs = problem.trajectories(&x, knots)?;
    let stats = BatchStats {
        batch_index: problem.batch_index,
        agents: problem.agents.clone(),
        num_vars: problem.num_vars(),
        eq_rows: problem.eq.len(),
        ineq_rows: problem.ineq.len(),
        pruned_rows: problem.pruned_rows,
        witness,
        solution: report,
        status: format!("{status:?}"),
        optimal,
        retried,
        iterations,
        objective: problem.objective(&x),
        solve_seconds: started.elapsed().as_secs_f64(),
    };
    Ok((trajs, stats))
}

#[derive(Debug, Clone)]
pub struct TrajOptResult {
    pub trajectories: Vec<PiecewiseBezier>,
    pub dummies: Vec<PiecewiseBezier>,
    pub batches: Vec<BatchStats>,
    /// Sum of `∫‖d^φp/dt^φ‖²` over all agents before time scaling.
    pub total_cost: f64,
}

/// Sequential batch optimization over all agents.
///
/// `on_batch` sees every assembled problem before it is solved (for dumps).
pub fn traj_opt(
    plans: &[DiscretePlan],
    corridors: &Corridors,
    num_batches: usize,
    knots: &[f64],
    cfg: &OptimizerConfig,
    mut on_batch: impl FnMut(&BatchProblem),
) -> Result<TrajOptResult, OptError> {
    cfg.validate()?;
    let dummies = plans.iter().map(|p| plan_dummy(p, cfg.degree, cfg.phi, knots)).collect::<Result<Vec<_>, _>>()?;
    let mut current = dummies.clone();
    let mut batches = Vec::new();
    for (l, batch) in partition_batches(plans.len(), num_batches)?.iter().enumerate() {
        let problem = assemble_batch(l, batch, plans, corridors, &current, &dummies, knots, cfg)?;
        on_batch(&problem);
        let (trajs, stats) = solve_batch_qp(&problem, knots, cfg)?;
        for t in trajs {
            let id = t.agent_id;
            current[id] = t;
        }
        batches.push(stats);
    }
    let total_cost = current.iter().map(|t| t.derivative_energy(cfg.phi)).sum::<Result<f64, _>>()?;
    Ok(TrajOptResult { trajectories: current, dummies, batches, total_cost })
}

/// Velocity and acceleration limits for one agent.
#[derive(Debug, Clone, Copy)]
pub struct DynamicLimits {
    pub v_max: f64,
    pub a_max: f64,
}

/// Smallest uniform stretch `k ≥ 1` of the time axis for which every
/// agent's convex-hull velocity and acceleration bounds meet its limits.
/// Velocity scales with `1/k`, acceleration with `1/k²`.
pub fn time_scale(trajs: &[PiecewiseBezier], limits: &[DynamicLimits]) -> Result<(f64, Vec<PiecewiseBezier>), OptError> {
    if trajs.len() != limits.len() {
        return Err(OptError::Config("one limit per trajectory required".into()));
    }
    let mut k: f64 = 1.0;
    for (t, lim) in trajs.iter().zip(limits) {
        for seg in t.segments() {
            if seg.degree() >= 1 {
                k = k.max(seg.norm_bound(1)? / lim.v_max);
            }
            if seg.degree() >= 2 {
                k = k.max((seg.norm_bound(2)? / lim.a_max).sqrt());
            }
        }
    }
    Ok((k, trajs.iter().map(|t| t.time_scaled(k)).collect()))
}
