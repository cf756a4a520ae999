use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use swarmplan::map::save_world;
use swarmplan::optimizer::OptError;
use swarmplan::pipeline::{plan, validation_params, PlanError, PlannerConfig};
use swarmplan::scenario::{gen_forest, gen_mission, ForestSpec, Mission, MissionTemplate};
use swarmplan::trajectory_io::{load_trajectories, save_trajectories};
use swarmplan::validate::{validate, write_time_series};
use swarmplan::{Aabb, Point3};

#[derive(Parser)]
#[command(name = "swarmplan", version, about = "Multi-quadrotor trajectory planner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Plan trajectories for a mission.
    Plan {
        #[arg(long)]
        mission: PathBuf,
        /// Planner config JSON; missing fields take defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Write the corridors next to the output as `<out>.corridors.json`.
        #[arg(long)]
        dump_corridors: bool,
        /// Write each batch QP next to the output as `<out>.qp<batch>.json`.
        #[arg(long)]
        dump_qp: bool,
        /// Position/velocity/acceleration time series.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Validation report and stage timings as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Re-validate a trajectory file against its mission.
    Validate {
        #[arg(long)]
        traj: PathBuf,
        #[arg(long)]
        mission: PathBuf,
        #[arg(long)]
        sample_dt: Option<f64>,
        #[arg(long, default_value_t = 3)]
        phi: usize,
        /// Print the report as JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Generate a random forest world.
    GenForest {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        forest: ForestArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate an antipodal mission in a random forest (inline world).
    GenMission {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        mission: MissionArgs,
        #[command(flatten)]
        forest: ForestArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Plan many seeded forest missions and report success, cost and timings.
    Bench {
        /// Comma-separated agent counts.
        #[arg(long, value_delimiter = ',', default_value = "4,8,16")]
        agents: Vec<usize>,
        #[arg(long, default_value_t = 50)]
        seeds: u64,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        mission: MissionArgs,
        #[command(flatten)]
        forest: ForestArgs,
        /// Per-run CSV; the per-count summary goes to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Clone)]
struct ForestArgs {
    #[arg(long, default_value_t = 20)]
    trees: usize,
    /// World size x,y,z in meters.
    #[arg(long, value_delimiter = ',', default_value = "10,10,2.5")]
    bounds: Vec<f64>,
    #[arg(long, default_value_t = 0.3)]
    tree_xy: f64,
    #[arg(long, default_value_t = 1.0)]
    tree_h_min: f64,
    #[arg(long, default_value_t = 2.5)]
    tree_h_max: f64,
}

impl ForestArgs {
    fn spec(&self) -> Result<ForestSpec> {
        if self.bounds.len() != 3 {
            bail!("--bounds needs three values");
        }
        Ok(ForestSpec {
            bounds: Aabb::new(Point3::zeros(), Point3::new(self.bounds[0], self.bounds[1], self.bounds[2])),
            n_trees: self.trees,
            tree_xy: self.tree_xy,
            tree_h_range: (self.tree_h_min, self.tree_h_max),
        })
    }
}

#[derive(Args, Clone)]
struct MissionArgs {
    #[arg(long = "num-agents", default_value_t = 8)]
    num_agents: usize,
    #[arg(long, default_value_t = 0.15)]
    radius: f64,
    #[arg(long, default_value_t = 1.7)]
    v_max: f64,
    #[arg(long, default_value_t = 6.2)]
    a_max: f64,
    #[arg(long, default_value_t = 2.0)]
    c_dw: f64,
    /// Flight height of starts and goals.
    #[arg(long, default_value_t = 1.0)]
    height: f64,
    /// Distance of the start ring from the world boundary.
    #[arg(long, default_value_t = 0.5)]
    inset: f64,
}

impl MissionArgs {
    fn template(&self, n_agents: usize) -> MissionTemplate {
        MissionTemplate {
            n_agents,
            radius: self.radius,
            v_max: self.v_max,
            a_max: self.a_max,
            c_dw: self.c_dw,
            height: self.height,
            inset: self.inset,
            ..Default::default()
        }
    }
}

fn read_config(path: Option<&Path>) -> Result<PlannerConfig> {
    match path {
        None => Ok(PlannerConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        }
    }
}

fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "out".into());
    out.with_file_name(format!("{stem}.{suffix}"))
}

#[allow(clippy::too_many_arguments)]
fn cmd_plan(
    mission_path: &Path,
    config: Option<&Path>,
    out: &Path,
    dump_corridors: bool,
    dump_qp: bool,
    csv_path: Option<&Path>,
    report_path: Option<&Path>,
) -> Result<()> {
    let mut config = read_config(config)?;
    config.dump_qp |= dump_qp;
    let (mission, world) = Mission::load(mission_path)?;
    let outcome = match plan(&mission, &world, &config) {
        Ok(o) => o,
        Err(e) => {
            if let PlanError::Optimization(OptError::Solver { batch, dump: Some(d), .. }) = &e {
                let p = sibling(out, &format!("qp{batch}.json"));
                fs::write(&p, d)?;
                eprintln!("failing QP written to {}", p.display());
            }
            if let PlanError::Validation(report) = &e {
                eprintln!("{report}");
            }
            let stage = e.stage();
            return Err(anyhow::Error::new(e).context(format!("planning failed at stage {stage}")));
        }
    };
    save_trajectories(&outcome.trajectories, out)?;
    if dump_corridors {
        fs::write(sibling(out, "corridors.json"), outcome.corridors.to_json())?;
    }
    for (l, d) in outcome.qp_dumps.iter().enumerate() {
        fs::write(sibling(out, &format!("qp{l}.json")), d)?;
    }
    if let Some(p) = csv_path {
        let dt = outcome.total_time / 1000.0;
        write_time_series(&outcome.trajectories, dt, fs::File::create(p)?)?;
    }
    if let Some(p) = report_path {
        fs::write(p, outcome.summary_json())?;
    }
    print!("{}", outcome.report);
    println!(
        "timings [s]: grid {:.3}, mapf {:.3}, corridor {:.3}, qp {:.3} ({} batches), scaling {:.3}, validation {:.3}",
        outcome.timings.grid,
        outcome.timings.mapf,
        outcome.timings.corridor,
        outcome.timings.optimization,
        outcome.batches.len(),
        outcome.timings.scaling,
        outcome.timings.validation
    );
    Ok(())
}

fn cmd_validate(traj: &Path, mission_path: &Path, sample_dt: Option<f64>, phi: usize, json: bool) -> Result<bool> {
    let (mission, world) = Mission::load(mission_path)?;
    let trajs = load_trajectories(traj)?;
    let report = validate(&trajs, &world, &validation_params(&mission, phi), sample_dt);
    if json {
        println!("{}", report.to_json());
    } else {
        print!("{report}");
    }
    Ok(report.passed)
}

#[derive(Serialize)]
struct BenchRow {
    agents: usize,
    seed: u64,
    success: bool,
    failed_stage: String,
    cost: f64,
    total_time: f64,
    margin_ratio: f64,
    t_mapf: f64,
    t_corridor: f64,
    t_qp: f64,
    t_qp_per_batch: f64,
    t_scaling: f64,
    t_total: f64,
}

#[derive(Serialize)]
struct BenchSummary {
    agents: usize,
    runs: usize,
    success_rate: f64,
    mean_cost: f64,
    mean_t_mapf: f64,
    mean_t_corridor: f64,
    mean_t_qp: f64,
    mean_t_scaling: f64,
    mean_t_total: f64,
}

fn cmd_bench(agents: &[usize], seeds: u64, config: PlannerConfig, margs: &MissionArgs, forest: &ForestSpec, out: Option<&Path>) -> Result<()> {
    let mut rows = Vec::new();
    for &n in agents {
        for seed in 0..seeds {
            let mission = gen_mission(seed, &margs.template(n), forest)?;
            let world = mission.resolve_world(Path::new("."))?;
            let row = match plan(&mission, &world, &config) {
                Ok(o) => BenchRow {
                    agents: n,
                    seed,
                    success: true,
                    failed_stage: String::new(),
                    cost: o.optimized_cost,
                    total_time: o.total_time,
                    margin_ratio: o.report.min_inter_margin_ratio,
                    t_mapf: o.timings.mapf,
                    t_corridor: o.timings.corridor,
                    t_qp: o.timings.optimization,
                    t_qp_per_batch: o.timings.qp_batches.iter().sum::<f64>() / o.timings.qp_batches.len() as f64,
                    t_scaling: o.timings.scaling,
                    t_total: o.timings.total,
                },
                Err(e) => {
                    log::warn!("agents {n} seed {seed}: {e}");
                    BenchRow {
                        agents: n,
                        seed,
                        success: false,
                        failed_stage: e.stage().into(),
                        cost: f64::NAN,
                        total_time: f64::NAN,
                        margin_ratio: f64::NAN,
                        t_mapf: f64::NAN,
                        t_corridor: f64::NAN,
                        t_qp: f64::NAN,
                        t_qp_per_batch: f64::NAN,
                        t_scaling: f64::NAN,
                        t_total: f64::NAN,
                    }
                }
            };
            rows.push(row);
        }
    }
    if let Some(p) = out {
        let mut w = csv::Writer::from_path(p)?;
        for r in &rows {
            w.serialize(r)?;
        }
        w.flush()?;
    }
    let mut w = csv::Writer::from_writer(io::stdout());
    for &n in agents {
        let runs: Vec<&BenchRow> = rows.iter().filter(|r| r.agents == n).collect();
        let ok: Vec<&&BenchRow> = runs.iter().filter(|r| r.success).collect();
        let mean = |f: fn(&BenchRow) -> f64| if ok.is_empty() { f64::NAN } else { ok.iter().map(|r| f(r)).sum::<f64>() / ok.len() as f64 };
        w.serialize(BenchSummary {
            agents: n,
            runs: runs.len(),
            success_rate: ok.len() as f64 / runs.len().max(1) as f64,
            mean_cost: mean(|r| r.cost),
            mean_t_mapf: mean(|r| r.t_mapf),
            mean_t_corridor: mean(|r| r.t_corridor),
            mean_t_qp: mean(|r| r.t_qp),
            mean_t_scaling: mean(|r| r.t_scaling),
            mean_t_total: mean(|r| r.t_total),
        })?;
    }
    w.flush()?;
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Plan { mission, config, out, dump_corridors, dump_qp, csv, report } => {
            cmd_plan(&mission, config.as_deref(), &out, dump_corridors, dump_qp, csv.as_deref(), report.as_deref())
        }
        Command::Validate { traj, mission, sample_dt, phi, json } => {
            if !cmd_validate(&traj, &mission, sample_dt, phi, json)? {
                std::process::exit(1);
            }
            Ok(())
        }
        Command::GenForest { seed, forest, out } => {
            let world = gen_forest(seed, &forest.spec()?, &[])?;
            save_world(&world, &out)?;
            Ok(())
        }
        Command::GenMission { seed, mission, forest, out } => {
            let m = gen_mission(seed, &mission.template(mission.num_agents), &forest.spec()?)?;
            fs::write(&out, m.to_json())?;
            Ok(())
        }
        Command::Bench { agents, seeds, batch_size, config, mission, forest, out } => {
            let mut cfg = read_config(config.as_deref())?;
            if batch_size.is_some() {
                cfg.batch_size = batch_size;
            }
            cmd_bench(&agents, seeds, cfg, &mission, &forest.spec()?, out.as_deref())
        }
    }
}
