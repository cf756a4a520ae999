//! End-to-end planning: discrete plans, corridors, batched optimization,
//! time scaling and validation.
//!
//! Each stage's output is re-checked before the next stage starts, and every
//! failure reports the stage it came from.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bernstein::PiecewiseBezier;
use crate::corridor::{build_corridors, check_corridors, CorridorError, Corridors};
use crate::map::{build_grid, MapError, OccupancyWorld, VoxelGrid};
use crate::mapf::{check_plans, plan_initial_trajectories, AgentTask, DiscretePlan, EcbsConfig, MapfError};
use crate::optimizer::{time_scale, traj_opt, uniform_knots, BatchStats, DynamicLimits, OptError, OptimizerConfig};
use crate::scenario::{Mission, ScenarioError};
use crate::validate::{validate, AgentLimits, ValidationParams, ValidationReport};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    /// Lattice spacing in meters.
    pub grid_size: f64,
    /// ECBS suboptimality bound.
    pub ecbs_w: f64,
    pub degree: usize,
    pub phi: usize,
    /// Number of batches; overridden by `batch_size` when that is set.
    pub num_batches: usize,
    pub batch_size: Option<usize>,
    /// Face growth increment of the box corridors.
    pub expand_step: f64,
    pub mapf_timeout_s: f64,
    /// Clearance margin of the pair half-spaces in the QP.
    pub rsfc_margin: f64,
    /// Extra clearance ECBS keeps between discrete paths; must exceed
    /// `rsfc_margin` so the dummy trajectories satisfy the QP strictly.
    pub conflict_margin: f64,
    pub strict_rsfc: bool,
    /// Validation sampling step; `None` samples 10⁴ points over the mission.
    pub sample_dt: Option<f64>,
    /// Seed for scenario generators driven from this config.
    pub seed: u64,
    /// Keep the serialized QP of every batch in the outcome.
    pub dump_qp: bool,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            grid_size: 0.5,
            ecbs_w: 1.3,
            degree: 5,
            phi: 3,
            num_batches: 1,
            batch_size: None,
            expand_step: 0.1,
            mapf_timeout_s: 60.0,
            rsfc_margin: 1e-6,
            conflict_margin: 1e-5,
            strict_rsfc: false,
            sample_dt: None,
            seed: 0,
            dump_qp: false,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<(), PlanError> {
        let bad = |m: String| Err(PlanError::Config(m));
        if !(self.grid_size > 0.0) {
            return bad(format!("grid size {} must be positive", self.grid_size));
        }
        if !(self.ecbs_w >= 1.0) {
            return bad(format!("ECBS bound {} must be at least 1", self.ecbs_w));
        }
        if !(self.expand_step > 0.0) {
            return bad(format!("expand step {} must be positive", self.expand_step));
        }
        if !(self.mapf_timeout_s > 0.0) {
            return bad("MAPF timeout must be positive".into());
        }
        if !(self.rsfc_margin >= 0.0 && self.conflict_margin > self.rsfc_margin) {
            return bad(format!("need 0 ≤ rsfc_margin < conflict_margin, got {} and {}", self.rsfc_margin, self.conflict_margin));
        }
        if self.batch_size == Some(0) || (self.batch_size.is_none() && self.num_batches == 0) {
            return bad("batches must be non-empty".into());
        }
        self.optimizer().validate().map_err(|e| PlanError::Config(e.to_string()))
    }

    pub fn optimizer(&self) -> OptimizerConfig {
        OptimizerConfig { degree: self.degree, phi: self.phi, rsfc_margin: self.rsfc_margin, strict_rsfc: self.strict_rsfc, ..Default::default() }
    }

    /// Batch count for `n_agents`, clamped to `1..=n_agents`.
    pub fn batches_for(&self, n_agents: usize) -> usize {
        let nb = match self.batch_size {
            Some(s) => n_agents.div_ceil(s),
            None => self.num_batches,
        };
        nb.clamp(1, n_agents.max(1))
    }
}

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("[config] {0}")]
    Config(String),
    #[error("[mission] {0}")]
    Mission(#[from] ScenarioError),
    #[error("[grid] {0}")]
    Grid(#[from] MapError),
    #[error("[mapf] {0}")]
    Mapf(#[from] MapfError),
    #[error("[corridor] {0}")]
    Corridor(#[from] CorridorError),
    #[error("[optimization] {0}")]
    Optimization(#[from] OptError),
    #[error("[validation] output failed validation: {}", .0.violations.join("; "))]
    Validation(Box<ValidationReport>),
}

impl PlanError {
    pub fn stage(&self) -> &'static str {
        match self {
            PlanError::Config(_) => "config",
            PlanError::Mission(_) => "mission",
            PlanError::Grid(_) => "grid",
            PlanError::Mapf(_) => "mapf",
            PlanError::Corridor(_) => "corridor",
            PlanError::Optimization(_) => "optimization",
            PlanError::Validation(_) => "validation",
        }
    }
}

/// Wall-clock seconds per stage.
#[derive(Debug, Clone, Default, Serialize)]
pub struct StageTimings {
    pub grid: f64,
    pub mapf: f64,
    pub corridor: f64,
    pub qp_batches: Vec<f64>,
    pub optimization: f64,
    pub scaling: f64,
    pub validation: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct PlanOutcome {
    pub total_time: f64,
    pub trajectories: Vec<PiecewiseBezier>,
    pub report: ValidationReport,
    pub plans: Vec<DiscretePlan>,
    pub corridors: Corridors,
    pub batches: Vec<BatchStats>,
    pub scale_factor: f64,
    /// Objective value before time scaling.
    pub optimized_cost: f64,
    pub timings: StageTimings,
    pub qp_dumps: Vec<String>,
}

#[derive(Serialize)]
struct Summary<'a> {
    total_time: f64,
    scale_factor: f64,
    optimized_cost: f64,
    timings: &'a StageTimings,
    batches: &'a [BatchStats],
    report: &'a ValidationReport,
}

impl PlanOutcome {
    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(&Summary {
            total_time: self.total_time,
            scale_factor: self.scale_factor,
            optimized_cost: self.optimized_cost,
            timings: &self.timings,
            batches: &self.batches,
            report: &self.report,
        })
        .expect("summary serializes")
    }
}

pub fn validation_params(mission: &Mission, phi: usize) -> ValidationParams {
    ValidationParams {
        agents: mission
            .agents
            .iter()
            .map(|a| AgentLimits { radius: a.radius, v_max: a.v_max, a_max: a.a_max, start: a.start, goal: a.goal })
            .collect(),
        c_dw: mission.c_dw,
        phi,
    }
}

/// Plans `mission` in `world`.
pub fn plan(mission: &Mission, world: &OccupancyWorld, config: &PlannerConfig) -> Result<PlanOutcome, PlanError> {
    let started = Instant::now();
    let mut timings = StageTimings::default();
    config.validate()?;
    mission.validate(world)?;
    let n = mission.agents.len();
    let radii: Vec<f64> = mission.agents.iter().map(|a| a.radius).collect();

    let clock = Instant::now();
    let mut grids: BTreeMap<u64, VoxelGrid> = BTreeMap::new();
    for &r in &radii {
        if let std::collections::btree_map::Entry::Vacant(e) = grids.entry(r.to_bits()) {
            e.insert(build_grid(world, config.grid_size, r)?);
        }
    }
    let agent_grids: Vec<&VoxelGrid> = radii.iter().map(|r| &grids[&r.to_bits()]).collect();
    timings.grid = clock.elapsed().as_secs_f64();

    let clock = Instant::now();
    let tasks: Vec<AgentTask> = mission.agents.iter().map(|a| AgentTask { start: a.start, goal: a.goal, radius: a.radius }).collect();
    let ecbs = EcbsConfig {
        w: config.ecbs_w,
        c_dw: mission.c_dw,
        conflict_margin: config.conflict_margin,
        timeout: std::time::Duration::from_secs_f64(config.mapf_timeout_s),
    };
    let plans = plan_initial_trajectories(world, &agent_grids, &tasks, &ecbs)?;
    check_plans(&plans, world, &tasks, mission.c_dw, config.conflict_margin)?;
    timings.mapf = clock.elapsed().as_secs_f64();
    log::info!("discrete plans: {} agents, {} segments", n, plans[0].makespan());

    let clock = Instant::now();
    let corridors = build_corridors(&plans, world, &radii, mission.c_dw, config.expand_step)?;
    check_corridors(&corridors, &plans, world, &radii, config.rsfc_margin)?;
    timings.corridor = clock.elapsed().as_secs_f64();

    let clock = Instant::now();
    let v_min = mission.agents.iter().map(|a| a.v_max).fold(f64::INFINITY, f64::min);
    let knots = uniform_knots(plans[0].makespan(), config.grid_size / v_min);
    let mut qp_dumps = Vec::new();
    let opt = traj_opt(&plans, &corridors, config.batches_for(n), &knots, &config.optimizer(), |p| {
        if config.dump_qp {
            qp_dumps.push(p.to_json());
        }
    })?;
    timings.qp_batches = opt.batches.iter().map(|b| b.solve_seconds).collect();
    timings.optimization = clock.elapsed().as_secs_f64();

    let clock = Instant::now();
    let limits: Vec<DynamicLimits> = mission.agents.iter().map(|a| DynamicLimits { v_max: a.v_max, a_max: a.a_max }).collect();
    let (scale_factor, trajectories) = time_scale(&opt.trajectories, &limits)?;
    timings.scaling = clock.elapsed().as_secs_f64();

    let clock = Instant::now();
    let report = validate(&trajectories, world, &validation_params(mission, config.phi), config.sample_dt);
    timings.validation = clock.elapsed().as_secs_f64();
    timings.total = started.elapsed().as_secs_f64();
    if !report.passed {
        return Err(PlanError::Validation(Box::new(report)));
    }
    Ok(PlanOutcome {
        total_time: trajectories[0].t_end() - trajectories[0].t_start(),
        trajectories,
        report,
        plans,
        corridors,
        batches: opt.batches,
        scale_factor,
        optimized_cost: opt.total_cost,
        timings,
        qp_dumps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Aabb, Point3};
    use crate::scenario::AgentSpec;

    fn world() -> OccupancyWorld {
        OccupancyWorld::empty(Aabb::new(Point3::zeros(), Point3::new(10.0, 10.0, 2.5))).unwrap()
    }

    #[test]
    fn single_agent_straight_line() {
        let (s, g) = (Point3::new(1.0, 5.0, 1.0), Point3::new(9.0, 5.0, 1.0));
        let m = Mission::inline(world(), vec![AgentSpec::new(s, g)]);
        let out = plan(&m, &world(), &PlannerConfig::default()).unwrap();
        assert!(out.report.passed);
        // homotopic to the straight line: never leaves the y = 5 plane's neighbourhood
        let t = &out.trajectories[0];
        for j in 0..=100 {
            let p = t.evaluate(t.t_end() * j as f64 / 100.0);
            assert!((p.y - 5.0).abs() < 1e-4 && (p.z - 1.0).abs() < 1e-4, "{p:?}");
        }
        assert!((out.report.total_flight_distance - 8.0).abs() < 1e-3);
    }

    #[test]
    fn config_invariants() {
        assert!(PlannerConfig { degree: 4, ..Default::default() }.validate().is_err());
        assert!(PlannerConfig { grid_size: 0.0, ..Default::default() }.validate().is_err());
        assert!(PlannerConfig { ecbs_w: 0.9, ..Default::default() }.validate().is_err());
        PlannerConfig::default().validate().unwrap();
        let c: PlannerConfig = serde_json::from_str(r#"{"num_batches": 4}"#).unwrap();
        assert_eq!(c.num_batches, 4);
        assert_eq!(c.grid_size, 0.5);
        assert_eq!(PlannerConfig { batch_size: Some(4), ..Default::default() }.batches_for(10), 3);
    }

    #[test]
    fn invalid_mission_is_reported_by_stage() {
        let p = Point3::new(0.05, 5.0, 1.0);
        let m = Mission::inline(world(), vec![AgentSpec::new(p, Point3::new(5.0, 5.0, 1.0))]);
        let err = plan(&m, &world(), &PlannerConfig::default()).unwrap_err();
        assert_eq!(err.stage(), "mission");
    }
}
