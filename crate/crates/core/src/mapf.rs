//! Discrete multi-agent planning on the voxel lattice.
//!
//! [`plan_ecbs`] runs enhanced conflict-based search: a bounded-suboptimal
//! constraint tree on top of focal A* over `(cell, time)` states. Conflicts
//! are geometric. Two agents conflict at a time step when their relative
//! straight-line motion over that step enters the downwash ellipsoid
//! `pᵀ E p ≤ (r_i + r_j)²`, `E = diag(1, 1, 1/c_dw²)`. A conflict is resolved
//! by forbidding one agent's move (or wait) over that exact step.

use std::cmp::Reverse;
use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{closest_point_to_origin, point_vec, to_sphere_coords, Point3};
use crate::map::{GridIndex, MapError, OccupancyWorld, VoxelGrid};

#[derive(Debug, Error)]
pub enum MapfError {
    #[error("no conflict-free plan found within {0:?}")]
    Timeout(Duration),
    #[error("agent {0} has no path to its goal")]
    NoPath(usize),
    #[error("agent {agent}: {source}")]
    Snap { agent: usize, source: MapError },
    #[error("invalid input: {0}")]
    Input(String),
    #[error("plan check failed: {0}")]
    Check(String),
}

/// `true` iff the relative motion from `b0 - a0` to `b1 - a1` stays strictly
/// outside the ellipsoid `pᵀ E p ≤ r_sum²`.
pub fn relative_segment_clear(a0: &Point3, a1: &Point3, b0: &Point3, b1: &Point3, r_sum: f64, c_dw: f64) -> bool {
    let p0 = to_sphere_coords(&(b0 - a0), c_dw);
    let p1 = to_sphere_coords(&(b1 - a1), c_dw);
    closest_point_to_origin(&p0, &p1).norm_squared() > r_sum * r_sum
}

/// One agent's waypoints `π_0..π_M`, uniformly indexed in time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscretePlan {
    pub agent_id: usize,
    #[serde(with = "point_vec")]
    pub waypoints: Vec<Point3>,
}

impl DiscretePlan {
    /// Number of segments `M`.
    pub fn makespan(&self) -> usize {
        self.waypoints.len() - 1
    }

    pub fn segment(&self, m: usize) -> (Point3, Point3) {
        (self.waypoints[m], self.waypoints[m + 1])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConflictKind {
    /// Both agents hold position over the step.
    Vertex,
    /// At least one agent moves over the step.
    Edge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conflict {
    pub agents: (usize, usize),
    /// Step index: the motion from waypoint `step` to `step + 1`.
    pub step: usize,
    pub kind: ConflictKind,
}

/// A single agent's discrete planning problem.
#[derive(Debug, Clone)]
pub struct MapfAgent<'a> {
    pub grid: &'a VoxelGrid,
    pub start: GridIndex,
    pub goal: GridIndex,
    pub radius: f64,
}

#[derive(Debug, Clone)]
pub struct EcbsConfig {
    /// Suboptimality bound, applied at both search levels.
    pub w: f64,
    pub c_dw: f64,
    /// Extra clearance added to `r_i + r_j` in the conflict test.
    pub conflict_margin: f64,
    pub timeout: Duration,
}

impl Default for EcbsConfig {
    fn default() -> Self {
        EcbsConfig { w: 1.3, c_dw: 2.0, conflict_margin: 0.0, timeout: Duration::from_secs(60) }
    }
}

/// Lattice path as flat cell indices per time step; the agent rests at the
/// last cell afterwards.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridPath {
    pub cells: Vec<usize>,
}

impl GridPath {
    pub fn at(&self, t: usize) -> usize {
        self.cells[t.min(self.cells.len() - 1)]
    }

    /// Arrival time; waits at the goal after arrival are free.
    pub fn cost(&self) -> usize {
        self.cells.len() - 1
    }
}

#[derive(Debug, Clone)]
pub struct EcbsSolution {
    pub paths: Vec<GridPath>,
    /// Sum of arrival times.
    pub flow_time: usize,
    /// Sum of the low-level lower bounds of the returned node.
    pub lower_bound: usize,
    pub high_level_expansions: usize,
}

/// A forbidden action: agent moves `from -> to` over step `step`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
struct ActionConstraint {
    step: usize,
    from: usize,
    to: usize,
}

#[derive(Debug, Clone, Default)]
struct ConstraintSet {
    actions: HashSet<ActionConstraint>,
    /// Latest step at which waiting at the goal is forbidden.
    last_goal_block: Option<usize>,
    max_step: usize,
}

impl ConstraintSet {
    fn add(&mut self, c: ActionConstraint, goal: usize) {
        if c.from == goal && c.to == goal {
            self.last_goal_block = Some(self.last_goal_block.map_or(c.step, |s| s.max(c.step)));
        }
        self.max_step = self.max_step.max(c.step);
        self.actions.insert(c);
    }

    fn forbids(&self, step: usize, from: usize, to: usize) -> bool {
        !self.actions.is_empty() && self.actions.contains(&ActionConstraint { step, from, to })
    }
}

/// Per-agent context shared by all low-level searches.
struct AgentCtx<'a> {
    grid: &'a VoxelGrid,
    start: usize,
    goal: usize,
    radius: f64,
    /// BFS distance to goal; `u32::MAX` when unreachable.
    heuristic: Vec<u32>,
    positions: Vec<Point3>,
}

impl<'a> AgentCtx<'a> {
    fn new(agent: &MapfAgent<'a>) -> Self {
        let grid = agent.grid;
        let goal = grid.flat(agent.goal);
        let mut heuristic = vec![u32::MAX; grid.num_cells()];
        let mut queue = VecDeque::new();
        heuristic[goal] = 0;
        queue.push_back(goal);
        let mut nbrs = Vec::with_capacity(6);
        while let Some(c) = queue.pop_front() {
            grid.neighbors(c, &mut nbrs);
            for &n in &nbrs {
                if heuristic[n] == u32::MAX {
                    heuristic[n] = heuristic[c] + 1;
                    queue.push_back(n);
                }
            }
        }
        let positions = (0..grid.num_cells()).map(|i| grid.position_flat(i)).collect();
        AgentCtx { grid, start: grid.flat(agent.start), goal, radius: agent.radius, heuristic, positions }
    }
}

/// Geometry needed to count conflicts against the other agents' current paths.
struct Others<'p> {
    paths: Vec<Option<&'p [Point3]>>,
    radii: Vec<f64>,
    c_dw: f64,
    margin: f64,
}

impl Others<'_> {
    fn count(&self, me_radius: f64, step: usize, from: &Point3, to: &Point3) -> u32 {
        let mut n = 0;
        for (j, path) in self.paths.iter().enumerate() {
            if let Some(path) = path {
                let b0 = path[step.min(path.len() - 1)];
                let b1 = path[(step + 1).min(path.len() - 1)];
                let r_sum = me_radius + self.radii[j] + self.margin;
                // the downwash norm is at least the max-norm divided by c_dw
                if (b0 - from).amax() > self.c_dw.max(1.0) * r_sum + (b1 - b0).amax() + (to - from).amax() {
                    continue;
                }
                if !relative_segment_clear(from, to, &b0, &b1, r_sum, self.c_dw) {
                    n += 1;
                }
            }
        }
        n
    }

    /// Conflicts incurred by resting at `cell` from `step` onward.
    fn count_tail(&self, me_radius: f64, step: usize, at: &Point3) -> u32 {
        let horizon = self.paths.iter().flatten().map(|p| p.len()).max().unwrap_or(0);
        (step..horizon).map(|s| self.count(me_radius, s, at, at)).sum()
    }
}

#[derive(Clone, Copy)]
struct LowNode {
    cell: usize,
    t: u32,
    f: u32,
    conflicts: u32,
    parent: u32,
    open: bool,
}

struct LowLevelResult {
    path: GridPath,
    lower_bound: usize,
}

/// Focal A* over `(cell, t)`. Returns a path whose cost is at most
/// `w × f_min` together with the final `f_min` as a lower bound.
fn low_level(
    ctx: &AgentCtx,
    cons: &ConstraintSet,
    others: &Others,
    w: f64,
    deadline: Instant,
) -> Result<Option<LowLevelResult>, MapfError> {
    let h0 = ctx.heuristic[ctx.start];
    if h0 == u32::MAX {
        return Ok(None);
    }
    let goal_ready = cons.last_goal_block.map_or(0, |s| s + 1) as u32;
    let t_limit = (cons.max_step + ctx.grid.free_count() + 2) as u32;

    let mut nodes: Vec<LowNode> = Vec::new();
    let mut index: HashMap<(usize, u32), u32> = HashMap::new();
    // (f, Reverse(t), id): among equal f prefer deeper nodes
    let mut open: BTreeSet<(u32, Reverse<u32>, u32)> = BTreeSet::new();
    let mut focal: BTreeSet<(u32, u32, Reverse<u32>, u32)> = BTreeSet::new();

    nodes.push(LowNode { cell: ctx.start, t: 0, f: h0, conflicts: 0, parent: u32::MAX, open: true });
    index.insert((ctx.start, 0), 0);
    open.insert((h0, Reverse(0), 0));
    focal.insert((0, h0, Reverse(0), 0));
    let mut f_min = h0;

    let mut nbrs = Vec::with_capacity(7);
    let mut iter = 0u64;
    while let Some(&(_, _, _, id)) = focal.iter().next() {
        iter += 1;
        if iter.is_multiple_of(4096) && Instant::now() > deadline {
            return Err(MapfError::Timeout(Duration::ZERO));
        }
        let node = nodes[id as usize];
        focal.remove(&(node.conflicts, node.f, Reverse(node.t), id));
        open.remove(&(node.f, Reverse(node.t), id));
        nodes[id as usize].open = false;

        if node.cell == ctx.goal && node.t >= goal_ready {
            let mut cells = Vec::with_capacity(node.t as usize + 1);
            let mut cur = id;
            while cur != u32::MAX {
                cells.push(nodes[cur as usize].cell);
                cur = nodes[cur as usize].parent;
            }
            cells.reverse();
            return Ok(Some(LowLevelResult { path: GridPath { cells }, lower_bound: f_min as usize }));
        }

        if node.t < t_limit {
            ctx.grid.neighbors(node.cell, &mut nbrs);
            nbrs.push(node.cell);
            let from = ctx.positions[node.cell];
            let t_next = node.t + 1;
            for &next in &nbrs {
                if cons.forbids(node.t as usize, node.cell, next) {
                    continue;
                }
                let h = ctx.heuristic[next];
                if h == u32::MAX {
                    continue;
                }
                let to = ctx.positions[next];
                let mut c = node.conflicts + others.count(ctx.radius, node.t as usize, &from, &to);
                if next == ctx.goal && t_next >= goal_ready {
                    c += others.count_tail(ctx.radius, t_next as usize, &to);
                }
                let f = t_next + h;
                let key = (next, t_next);
                if let Some(&existing) = index.get(&key) {
                    let e = nodes[existing as usize];
                    if !e.open || e.conflicts <= c {
                        continue;
                    }
                    // same state, fewer conflicts: re-parent in place
                    let in_focal = focal.remove(&(e.conflicts, e.f, Reverse(e.t), existing));
                    let n = &mut nodes[existing as usize];
                    n.conflicts = c;
                    n.parent = id;
                    if in_focal {
                        focal.insert((c, e.f, Reverse(e.t), existing));
                    }
                    continue;
                }
                let nid = nodes.len() as u32;
                nodes.push(LowNode { cell: next, t: t_next, f, conflicts: c, parent: id, open: true });
                index.insert(key, nid);
                open.insert((f, Reverse(t_next), nid));
                if (f as f64) <= w * f_min as f64 {
                    focal.insert((c, f, Reverse(t_next), nid));
                }
            }
        }

        // keep FOCAL = { n in OPEN : f(n) ≤ w · f_min }
        if let Some(&(new_min, _, _)) = open.iter().next() {
            if new_min > f_min {
                let old_bound = w * f_min as f64;
                let new_bound = w * new_min as f64;
                for &(f, rt, nid) in open.iter() {
                    let ff = f as f64;
                    if ff > new_bound {
                        break;
                    }
                    if ff > old_bound {
                        focal.insert((nodes[nid as usize].conflicts, f, rt, nid));
                    }
                }
                f_min = new_min;
            }
        } else {
            break;
        }
    }
    Ok(None)
}

struct HighNode {
    constraints: Vec<ConstraintSet>,
    paths: Vec<GridPath>,
    lbs: Vec<usize>,
    cost: usize,
    lb: usize,
    conflicts: usize,
}

/// All agents' positions over time, padded with the final cell.
fn positions_of(ctxs: &[AgentCtx], paths: &[GridPath]) -> Vec<Vec<Point3>> {
    paths
        .iter()
        .zip(ctxs)
        .map(|(p, c)| p.cells.iter().map(|&i| c.positions[i]).collect())
        .collect()
}

/// Every conflicting `(pair, step)` over the joint horizon, in step-major,
/// pair-lexicographic order.
pub fn find_conflicts(positions: &[Vec<Point3>], radii: &[f64], c_dw: f64, margin: f64) -> Vec<Conflict> {
    let horizon = positions.iter().map(|p| p.len()).max().unwrap_or(1);
    let steps = horizon.saturating_sub(1).max(1);
    let at = |i: usize, t: usize| positions[i][t.min(positions[i].len() - 1)];
    let mut out = Vec::new();
    for s in 0..steps {
        for i in 0..positions.len() {
            for j in i + 1..positions.len() {
                let (a0, a1, b0, b1) = (at(i, s), at(i, s + 1), at(j, s), at(j, s + 1));
                let r_sum = radii[i] + radii[j] + margin;
                if !relative_segment_clear(&a0, &a1, &b0, &b1, r_sum, c_dw) {
                    let kind = if a0 == a1 && b0 == b1 { ConflictKind::Vertex } else { ConflictKind::Edge };
                    out.push(Conflict { agents: (i, j), step: s, kind });
                }
            }
        }
    }
    out
}

/// Bounded-suboptimal multi-agent path finding.
///
/// Every returned path is conflict-free against every other under
/// [`relative_segment_clear`] with `r_i + r_j + conflict_margin`.
pub fn plan_ecbs(agents: &[MapfAgent], config: &EcbsConfig) -> Result<EcbsSolution, MapfError> {
    if !(config.w >= 1.0) {
        return Err(MapfError::Input(format!("suboptimality bound must be ≥ 1, got {}", config.w)));
    }
    let started = Instant::now();
    let deadline = started + config.timeout;
    let timeout = |_| MapfError::Timeout(config.timeout);
    let n = agents.len();
    for (i, a) in agents.iter().enumerate() {
        if a.grid.is_blocked(a.start) || a.grid.is_blocked(a.goal) {
            return Err(MapfError::Input(format!("agent {i} starts or ends on a blocked cell")));
        }
    }
    let ctxs: Vec<AgentCtx> = agents.iter().map(AgentCtx::new).collect();
    let radii: Vec<f64> = agents.iter().map(|a| a.radius).collect();

    // root: plan agents one by one, counting conflicts against earlier ones
    let mut root = HighNode {
        constraints: vec![ConstraintSet::default(); n],
        paths: Vec::with_capacity(n),
        lbs: Vec::with_capacity(n),
        cost: 0,
        lb: 0,
        conflicts: 0,
    };
    for i in 0..n {
        let pos = positions_of(&ctxs[..i], &root.paths);
        let others = Others {
            paths: (0..n).map(|j| if j < i { Some(pos[j].as_slice()) } else { None }).collect(),
            radii: radii.clone(),
            c_dw: config.c_dw,
            margin: config.conflict_margin,
        };
        let r = low_level(&ctxs[i], &root.constraints[i], &others, config.w, deadline)
            .map_err(timeout)?
            .ok_or(MapfError::NoPath(i))?;
        root.cost += r.path.cost();
        root.lb += r.lower_bound;
        root.paths.push(r.path);
        root.lbs.push(r.lower_bound);
    }
    root.conflicts = find_conflicts(&positions_of(&ctxs, &root.paths), &radii, config.c_dw, config.conflict_margin).len();

    let mut nodes: Vec<Option<HighNode>> = vec![Some(root)];
    let mut open: BTreeSet<(usize, usize)> = BTreeSet::new();
    let mut focal: BTreeSet<(usize, usize, usize)> = BTreeSet::new();
    open.insert((nodes[0].as_ref().unwrap().lb, 0));
    focal.insert((nodes[0].as_ref().unwrap().conflicts, nodes[0].as_ref().unwrap().cost, 0));
    let mut lb_min = nodes[0].as_ref().unwrap().lb;
    let mut expansions = 0;

    while let Some(&(_, _, id)) = focal.iter().next() {
        if Instant::now() > deadline {
            return Err(MapfError::Timeout(config.timeout));
        }
        expansions += 1;
        let node = nodes[id].take().expect("node expanded once");
        focal.remove(&(node.conflicts, node.cost, id));
        open.remove(&(node.lb, id));

        let positions = positions_of(&ctxs, &node.paths);
        let conflicts = find_conflicts(&positions, &radii, config.c_dw, config.conflict_margin);
        if conflicts.is_empty() {
            return Ok(EcbsSolution { flow_time: node.cost, lower_bound: node.lb, paths: node.paths, high_level_expansions: expansions });
        }
        // earliest step, then lowest pair (find_conflicts order)
        let conflict = conflicts[0];
        let s = conflict.step;
        for agent in [conflict.agents.0, conflict.agents.1] {
            let path = &node.paths[agent];
            let c = ActionConstraint { step: s, from: path.at(s), to: path.at(s + 1) };
            let mut constraints = node.constraints.clone();
            constraints[agent].add(c, ctxs[agent].goal);
            let others = Others {
                paths: (0..n).map(|j| if j != agent { Some(positions[j].as_slice()) } else { None }).collect(),
                radii: radii.clone(),
                c_dw: config.c_dw,
                margin: config.conflict_margin,
            };
            let Some(r) = low_level(&ctxs[agent], &constraints[agent], &others, config.w, deadline).map_err(timeout)? else {
                continue;
            };
            let mut paths = node.paths.clone();
            let mut lbs = node.lbs.clone();
            let cost = node.cost - paths[agent].cost() + r.path.cost();
            let lb = node.lb - lbs[agent] + r.lower_bound;
            paths[agent] = r.path;
            lbs[agent] = r.lower_bound;
            let child_conflicts =
                find_conflicts(&positions_of(&ctxs, &paths), &radii, config.c_dw, config.conflict_margin).len();
            let cid = nodes.len();
            open.insert((lb, cid));
            if cost as f64 <= config.w * lb_min as f64 {
                focal.insert((child_conflicts, cost, cid));
            }
            nodes.push(Some(HighNode { constraints, paths, lbs, cost, lb, conflicts: child_conflicts }));
        }

        // keep FOCAL = { n in OPEN : cost(n) ≤ w · lb_min }
        if let Some(&(new_min, _)) = open.iter().next() {
            if new_min > lb_min {
                let old_bound = config.w * lb_min as f64;
                let new_bound = config.w * new_min as f64;
                for &(_, nid) in open.iter() {
                    let nd = nodes[nid].as_ref().unwrap();
                    let c = nd.cost as f64;
                    if c > old_bound && c <= new_bound {
                        focal.insert((nd.conflicts, nd.cost, nid));
                    }
                }
                lb_min = new_min;
            }
        }
    }
    Err(MapfError::Input("constraint tree exhausted without a solution".into()))
}

/// Mission-level discrete planning input for one agent.
#[derive(Debug, Clone)]
pub struct AgentTask {
    pub start: Point3,
    pub goal: Point3,
    pub radius: f64,
}

/// Snaps starts and goals, runs ECBS, and converts lattice paths into
/// waypoint plans of common length.
///
/// When a start or goal lies off the lattice, every plan gains one extra
/// leading (or trailing) step connecting it to its snapped cell; agents
/// already on the lattice wait through that step.
pub fn plan_initial_trajectories(
    world: &OccupancyWorld,
    grids: &[&VoxelGrid],
    tasks: &[AgentTask],
    config: &EcbsConfig,
) -> Result<Vec<DiscretePlan>, MapfError> {
    if grids.len() != tasks.len() {
        return Err(MapfError::Input("one grid per agent required".into()));
    }
    let mut agents = Vec::with_capacity(tasks.len());
    let mut snapped = Vec::with_capacity(tasks.len());
    for (i, (task, grid)) in tasks.iter().zip(grids).enumerate() {
        let s = grid.snap(&task.start).map_err(|source| MapfError::Snap { agent: i, source })?;
        let g = grid.snap(&task.goal).map_err(|source| MapfError::Snap { agent: i, source })?;
        let (sp, gp) = (grid.position(s), grid.position(g));
        for (from, to, what) in [(&task.start, &sp, "start"), (&gp, &task.goal, "goal")] {
            if !world.is_segment_free(from, to, task.radius) {
                return Err(MapfError::Input(format!("agent {i}: {what} cannot be connected to its nearest lattice point")));
            }
        }
        snapped.push((sp, gp));
        agents.push(MapfAgent { grid, start: s, goal: g, radius: task.radius });
    }
    let solution = plan_ecbs(&agents, config)?;

    let prepend = tasks.iter().zip(&snapped).any(|(t, (sp, _))| t.start != *sp);
    let append = tasks.iter().zip(&snapped).any(|(t, (_, gp))| t.goal != *gp);
    let horizon = solution.paths.iter().map(|p| p.cells.len()).max().unwrap_or(1);
    let plans = solution
        .paths
        .iter()
        .zip(grids)
        .zip(tasks)
        .enumerate()
        .map(|(i, ((path, grid), task))| {
            let mut waypoints = Vec::with_capacity(horizon + 2);
            if prepend {
                waypoints.push(task.start);
            }
            waypoints.extend((0..horizon).map(|t| grid.position_flat(path.at(t))));
            if append {
                waypoints.push(task.goal);
            }
            // a single-waypoint plan still needs one segment
            if waypoints.len() == 1 {
                waypoints.push(waypoints[0]);
            }
            DiscretePlan { agent_id: i, waypoints }
        })
        .collect::<Vec<_>>();
    Ok(plans)
}

/// Re-checks the discrete-plan invariants with no trust in the search:
/// equal lengths, endpoint placement, obstacle-free edges and pairwise
/// clearance at every step.
pub fn check_plans(
    plans: &[DiscretePlan],
    world: &OccupancyWorld,
    tasks: &[AgentTask],
    c_dw: f64,
    margin: f64,
) -> Result<(), MapfError> {
    let m = plans.first().map(|p| p.waypoints.len()).unwrap_or(0);
    for (i, (p, t)) in plans.iter().zip(tasks).enumerate() {
        if p.waypoints.len() != m {
            return Err(MapfError::Check(format!("agent {i} plan length differs")));
        }
        if p.waypoints[0] != t.start || *p.waypoints.last().unwrap() != t.goal {
            return Err(MapfError::Check(format!("agent {i} plan does not connect start and goal")));
        }
        for (s, w) in p.waypoints.windows(2).enumerate() {
            if !world.is_segment_free(&w[0], &w[1], t.radius) {
                return Err(MapfError::Check(format!("agent {i} step {s} hits an obstacle")));
            }
        }
    }
    let positions: Vec<Vec<Point3>> = plans.iter().map(|p| p.waypoints.clone()).collect();
    let radii: Vec<f64> = tasks.iter().map(|t| t.radius).collect();
    if let Some(c) = find_conflicts(&positions, &radii, c_dw, margin).first() {
        return Err(MapfError::Check(format!("agents {:?} conflict at step {}", c.agents, c.step)));
    }
    Ok(())
}
