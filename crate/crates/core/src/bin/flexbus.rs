use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use flexbus::config::{load_instance, AlgorithmParams};
use flexbus::detour::{fit_boundary_curve, uniform_sampler};
use flexbus::domain::{Rect, ServiceInstance};
use flexbus::fixtures;
use flexbus::ingest::{ingest, read_records, GridSpec, IngestOptions};
use flexbus::optimizer::{run, write_trace_csv, Evaluator};
use flexbus::oracle::{self, GridEvaluator};
use flexbus::phase1::{solve_p1, Plan, ReliabilityVector};
use flexbus::phase2::{evaluate, write_assignment_csv, write_scenario_csv, P2Options};
use flexbus::report::{sweep, write_sweep_csv, SweepAxis};
use flexbus::stochastic::sample_scenarios;
use flexbus::{FlexError, Result};

#[derive(Parser)]
#[command(name = "flexbus", version, about = "Zonal flexible bus planning under stochastic demand")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Instance JSON.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the scenario count of the instance file.
    #[arg(long)]
    scenarios: Option<usize>,
    /// Write zero wall times so repeated runs give identical files.
    #[arg(long)]
    no_timing: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run the reliability optimizer and write the best plan.
    Plan {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        max_iterations: Option<usize>,
    },
    /// Evaluate a plan file, or the phase-1 plan at a uniform reliability.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long, conflicts_with = "rho")]
        plan: Option<PathBuf>,
        /// Volume and detour reliability applied to every component.
        #[arg(long, num_args = 2, value_names = ["VOLUME", "DETOUR"])]
        rho: Option<Vec<f64>>,
    },
    /// Full-factorial reliability grid, or a one-dimensional volume scan.
    Grid {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0.05)]
        step: f64,
        /// Detour reliability of zones no category touches.
        #[arg(long, default_value_t = 0.5)]
        base_detour: f64,
        /// Scan the common volume reliability at this step instead of the full grid.
        #[arg(long)]
        scan_step: Option<f64>,
        #[arg(long, default_value_t = 0.7)]
        scan_detour: f64,
        #[arg(long, default_value_t = oracle::MAX_GRID_DIMS)]
        max_dims: usize,
    },
    /// Optimize and evaluate across values of one instance parameter.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        axis: SweepAxis,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        /// Operating-cost factor per value.
        #[arg(long, value_delimiter = ',')]
        cost_factors: Vec<f64>,
        #[arg(long, default_value_t = 200)]
        eval_scenarios: usize,
    },
    /// Fit boundary detour curves for zones with a rectangle.
    FitDetour {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5,6,8,10,12,15,20")]
        counts: Vec<usize>,
        #[arg(long, default_value_t = 2000)]
        trials: usize,
        #[arg(long, default_value_t = 0.003)]
        per_meter: f64,
    },
    /// Zone request records on a grid and build empirical demand and detour data.
    Ingest {
        /// Requests CSV.
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// x_min,y_min,x_max,y_max in meters.
        #[arg(long, value_delimiter = ',', num_args = 4, required = true)]
        area: Vec<f64>,
        #[arg(long, default_value_t = 3)]
        nx: usize,
        #[arg(long, default_value_t = 3)]
        ny: usize,
        #[arg(long, default_value_t = 15.0)]
        window_minutes: f64,
        #[arg(long, value_delimiter = ',')]
        days: Vec<i64>,
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
    },
    /// Run the bundled property suites; exits non-zero on failure.
    Check {
        /// Instance to check for the equivalence assumptions; bundled suites always run.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Scenario count of the grid reproduction.
        #[arg(long, default_value_t = 150)]
        grid_scenarios: usize,
        /// Skip the grid reproduction.
        #[arg(long)]
        quick: bool,
    },
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn load(common: &Common) -> Result<(ServiceInstance, AlgorithmParams)> {
    let (inst, mut params) = load_instance(&common.config)?;
    if let Some(n) = common.scenarios {
        params.scenarios = n;
    }
    fs::create_dir_all(&common.out)?;
    Ok((inst, params))
}

fn cmd_plan(common: &Common, max_iterations: Option<usize>) -> Result<()> {
    let (inst, mut params) = load(common)?;
    if let Some(m) = max_iterations {
        params.max_iterations = m;
    }
    let scen = sample_scenarios(&inst, params.scenarios, common.seed)?;
    let mut ev = Evaluator::new(&inst, &scen);
    let rho0 = ReliabilityVector::uniform(&inst, params.initial_rho, params.initial_rho);
    let mut res = run(&mut ev, &rho0, &params)?;
    if common.no_timing {
        for t in &mut res.trace {
            t.wall_time = 0.0;
        }
    }
    write_json(&common.out.join("plan.json"), &res.plan)?;
    write_json(&common.out.join("run.json"), &res)?;
    write_trace_csv(&common.out.join("trace.csv"), &res.trace)?;
    println!(
        "C = {:.4} (C_f {:.4}, ad hoc {:.4}), {} vehicles, {} iterations",
        res.report.total_cost, res.report.fixed_cost, res.report.expected_adhoc, res.report.vehicles, res.iterations
    );
    Ok(())
}

fn cmd_evaluate(common: &Common, plan: Option<&Path>, rho: Option<&[f64]>) -> Result<()> {
    let (inst, params) = load(common)?;
    let plan: Plan = match (plan, rho) {
        (Some(p), _) => serde_json::from_str(&fs::read_to_string(p)?)?,
        (None, Some(r)) => solve_p1(&inst, &ReliabilityVector::uniform(&inst, r[0], r[1]))?,
        (None, None) => {
            let r = params.initial_rho;
            solve_p1(&inst, &ReliabilityVector::uniform(&inst, r, r))?
        }
    };
    let scen = sample_scenarios(&inst, params.scenarios, common.seed)?;
    let (report, assigns) = evaluate(&inst, &plan, &scen, &P2Options::default())?;
    write_json(&common.out.join("report.json"), &report)?;
    write_scenario_csv(&common.out.join("scenarios.csv"), &scen, &assigns)?;
    write_assignment_csv(&common.out.join("assignments.csv"), &inst, &plan, &scen, &assigns)?;
    println!("C = {:.4} (C_f {:.4}, ad hoc {:.4})", report.total_cost, report.fixed_cost, report.expected_adhoc);
    Ok(())
}

#[derive(Serialize)]
struct GridSummary {
    rows: usize,
    minimum: f64,
    argmin: Vec<Vec<f64>>,
    local_minima: usize,
    sign_changes: usize,
}

fn cmd_grid(common: &Common, step: f64, base: f64, scan: Option<f64>, scan_detour: f64, max_dims: usize) -> Result<()> {
    let (inst, params) = load(common)?;
    let scen = sample_scenarios(&inst, params.scenarios, common.seed)?;
    let mut ev = GridEvaluator::new(&inst, &scen);
    let (rows, name) = match scan {
        Some(s) => (oracle::volume_scan(&mut ev, &oracle::grid_levels(s), scan_detour)?, "scan"),
        None => (oracle::rho_grid(&mut ev, step, base, max_dims)?, "grid"),
    };
    oracle::write_grid_csv(&common.out.join(format!("{name}.csv")), &inst, &rows)?;
    let costs: Vec<f64> = rows.iter().map(|r| r.total_cost).collect();
    let best = oracle::argmin_rows(&rows, 1e-9);
    let summary = GridSummary {
        rows: rows.len(),
        minimum: best.first().map_or(f64::INFINITY, |r| r.total_cost),
        argmin: best.iter().map(|r| r.rho.clone()).collect(),
        local_minima: oracle::local_minima(&costs),
        sign_changes: oracle::sign_changes(&costs),
    };
    write_json(&common.out.join(format!("{name}.json")), &summary)?;
    println!("{} cells, minimum {:.4} at {} cells", summary.rows, summary.minimum, summary.argmin.len());
    Ok(())
}

fn cmd_sweep(common: &Common, axis: SweepAxis, values: &[f64], factors: &[f64], eval: usize) -> Result<()> {
    let (inst, params) = load(common)?;
    let rows = sweep(&inst, &params, axis, values, factors, common.seed, eval)?;
    write_sweep_csv(&common.out.join("sweep.csv"), &rows, !common.no_timing)?;
    for r in &rows {
        println!("{:>8} C = {:.4} vehicles {}", r.value, r.total_cost, r.vehicles);
    }
    Ok(())
}

fn cmd_fit(common: &Common, counts: &[usize], trials: usize, per_meter: f64) -> Result<()> {
    let (inst, _) = load(common)?;
    let mut fits = Vec::new();
    for z in &inst.zones {
        let Some(rect) = z.rect else { continue };
        let fit = fit_boundary_curve(&rect, uniform_sampler(rect), counts, trials, per_meter, common.seed)?;
        println!("{}: {:?}", z.id, fit.curve);
        fits.push(serde_json::json!({"zone": z.id, "curve": fit.curve, "points": fit.points, "std_errors": fit.std_errors, "converged": fit.converged}));
    }
    if fits.is_empty() {
        return Err(FlexError::InvalidInstance("no zone has a rectangle to fit".into()));
    }
    write_json(&common.out.join("fit.json"), &fits)
}

fn cmd_ingest(path: &Path, out: &Path, area: &[f64], nx: usize, ny: usize, opts: IngestOptions) -> Result<()> {
    let records = read_records(fs::File::open(path)?)?;
    let grid = GridSpec { area: Rect { x_min: area[0], y_min: area[1], x_max: area[2], y_max: area[3] }, nx, ny };
    let res = ingest(&records, &grid, &opts)?;
    fs::create_dir_all(out)?;
    write_json(&out.join("ingest.json"), &res)?;
    println!(
        "{} parsed, {} kept, {} intra-zone, {} out of bounds, {} outside the day filter, {} OD groups",
        res.parsed, res.kept, res.dropped_intra_zone, res.dropped_out_of_bounds, res.dropped_by_day, res.demand.len()
    );
    Ok(())
}

fn verdict(name: &str, ok: bool, detail: String, failures: &mut usize) {
    if !ok {
        *failures += 1;
    }
    println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
}

fn cmd_check(config: Option<&Path>, seed: u64, out: &Path, grid_scenarios: usize, quick: bool) -> Result<bool> {
    fs::create_dir_all(out)?;
    let mut failures = 0;
    let opts = P2Options::default();

    let mut a = fixtures::worked_example();
    let scen = vec![fixtures::worked_example_scenario()];
    let generous = oracle::solve_p0_exact(&a, &scen, &opts, oracle::ENUMERATION_CAP)?;
    a.zones[0].max_detour = 4.0;
    a.fleet.capacity = 6;
    let tight = oracle::solve_p0_exact(&a, &scen, &opts, oracle::ENUMERATION_CAP)?;
    verdict(
        "worked example",
        generous.report.total_cost == 10.0 && tight.report.total_cost == 13.0,
        format!("costs {} and {}", generous.report.total_cost, tight.report.total_cost),
        &mut failures,
    );

    if !quick {
        let inst = fixtures::three_zone();
        let scen = sample_scenarios(&inst, grid_scenarios, seed)?;
        let mut ev = GridEvaluator::new(&inst, &scen);
        let rows = oracle::rho_grid(&mut ev, 0.05, 0.5, oracle::MAX_GRID_DIMS)?;
        oracle::write_grid_csv(&out.join("check_grid.csv"), &inst, &rows)?;
        let best = oracle::argmin_rows(&rows, 1e-9);
        // component order: volume, then zones A, B, C
        let target = [0.3, 0.25, 0.3];
        let hit = best.iter().any(|r| (r.rho[0] - target[0]).abs() < 1e-9 && (r.rho[1] - target[1]).abs() < 1e-9 && (r.rho[3] - target[2]).abs() < 1e-9);
        verdict(
            "grid argmin cell (0.3, 0.25, 0.3)",
            hit,
            format!("minimum {:.4} over {} cells", best[0].total_cost, best.len()),
            &mut failures,
        );
    }

    let mut eq_fail = 0;
    for s in 0..20 {
        let inst = fixtures::micro_instance(seed.wrapping_add(s));
        let scen = sample_scenarios(&inst, 3, seed.wrapping_add(s))?;
        let probes: Vec<ReliabilityVector> = [0.2, 0.5, 0.8].iter().map(|&r| ReliabilityVector::uniform(&inst, r, r)).collect();
        let rep = oracle::check_equivalence(&inst, &scen, &probes, &opts)?;
        if !rep.holds(1e-6) {
            eq_fail += 1;
        }
    }
    verdict("equivalence on 20 micro-instances", eq_fail == 0, format!("{eq_fail} failures"), &mut failures);

    if let Some(path) = config {
        let (inst, _) = load_instance(path)?;
        let why = oracle::assumption_violations(&inst);
        if why.is_empty() {
            let scen = sample_scenarios(&inst, 3, seed)?;
            let probes = vec![ReliabilityVector::uniform(&inst, 0.5, 0.5)];
            match oracle::check_equivalence(&inst, &scen, &probes, &opts) {
                Ok(rep) => verdict("equivalence on the given instance", rep.holds(1e-6), format!("{rep:?}"), &mut failures),
                Err(FlexError::EnumerationTooLarge(n, cap)) => println!("SKIP given instance: {n} deployments exceed {cap}"),
                Err(e) => return Err(e),
            }
        } else {
            println!("SKIP given instance: {}", why.join("; "));
        }
    }
    Ok(failures == 0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Plan { common, max_iterations } => cmd_plan(common, *max_iterations).map(|_| true),
        Command::Evaluate { common, plan, rho } => cmd_evaluate(common, plan.as_deref(), rho.as_deref()).map(|_| true),
        Command::Grid { common, step, base_detour, scan_step, scan_detour, max_dims } => {
            cmd_grid(common, *step, *base_detour, *scan_step, *scan_detour, *max_dims).map(|_| true)
        }
        Command::Sweep { common, axis, values, cost_factors, eval_scenarios } => {
            cmd_sweep(common, *axis, values, cost_factors, *eval_scenarios).map(|_| true)
        }
        Command::FitDetour { common, counts, trials, per_meter } => cmd_fit(common, counts, *trials, *per_meter).map(|_| true),
        Command::Ingest { config, out, area, nx, ny, window_minutes, days, scale, .. } => {
            let opts = IngestOptions { window_minutes: *window_minutes, days: days.clone(), scale: *scale, ..Default::default() };
            cmd_ingest(config, out, area, *nx, *ny, opts).map(|_| true)
        }
        Command::Check { config, seed, out, grid_scenarios, quick } => {
            cmd_check(config.as_deref(), *seed, out, *grid_scenarios, *quick)
        }
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                FlexError::InfeasibleAtReliability | FlexError::Solver(_) => ExitCode::from(3),
                _ => ExitCode::from(2),
            }
        }
    }
}
