//! Command-line front end. Exit codes: 0 satisfied, 1 not satisfied, 2 error.

mod input;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use daeident::linear::{self, LinearDae};
use daeident::model::DaeModel;
use daeident::ranktest::{Analyzer, EvalPoint, RankOptions, RankReport};
use daeident::scan::{grid_points, run_parallel, Checker, ScanResult};
use daeident::{Error, Result};
use serde_json::json;

use input::{read_point, Input, Source};

#[derive(Parser, Debug)]
#[command(name = "daeident", version, about = "Observability and identifiability tests for DAE models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug, Clone)]
struct ThetaArgs {
    /// Parameters to test; omit for an observability test.
    #[arg(long, num_args = 1.., conflicts_with = "theta_set")]
    theta: Vec<String>,
    /// Named parameter set of the scenario.
    #[arg(long)]
    theta_set: Option<String>,
}

#[derive(clap::Args, Debug, Clone)]
struct OrderArgs {
    /// Largest order tried by the incrementing loop.
    #[arg(long)]
    max_order: Option<usize>,
    /// Fixed residual order; needs --nu.
    #[arg(long, requires = "nu")]
    mu: Option<usize>,
    /// Fixed output order; needs --mu.
    #[arg(long, requires = "mu")]
    nu: Option<usize>,
    /// Include singular values in the report.
    #[arg(long)]
    svd_audit: bool,
}

#[derive(clap::Args, Debug, Clone)]
struct TimeArgs {
    /// Simulation interval.
    #[arg(long, num_args = 2, value_names = ["START", "END"])]
    tspan: Option<Vec<f64>>,
    /// Step size.
    #[arg(long)]
    dt: Option<f64>,
}

impl TimeArgs {
    fn span(&self) -> Option<(f64, f64)> {
        self.tspan.as_ref().map(|v| (v[0], v[1]))
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Rank test at a single point; prints the report as JSON.
    Check {
        #[command(flatten)]
        source: Source,
        #[command(flatten)]
        theta: ThetaArgs,
        #[command(flatten)]
        orders: OrderArgs,
        /// Point file with `theta`, `derivatives` and `time`.
        #[arg(long, conflicts_with = "simulate")]
        point: Option<PathBuf>,
        /// Simulate from the initial state up to this time and test the last sample;
        /// without this flag or --point the initial state is tested.
        #[arg(long)]
        simulate: Option<f64>,
        /// Step size for --simulate.
        #[arg(long)]
        dt: Option<f64>,
    },
    /// Rank tests along a trajectory or over a grid; writes CSV and SVG.
    Scan {
        #[command(flatten)]
        source: Source,
        #[command(flatten)]
        theta: ThetaArgs,
        #[command(flatten)]
        time: TimeArgs,
        /// Grid of NXxNY nodes over the scenario plot plane instead of the trajectory.
        #[arg(long)]
        grid: Option<String>,
        /// Test every N-th trajectory sample.
        #[arg(long, default_value_t = 10)]
        stride: usize,
        #[arg(long)]
        max_order: Option<usize>,
        /// Worker threads; defaults to one per core.
        #[arg(long)]
        jobs: Option<usize>,
        /// CSV output file; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// SVG plot of the classification.
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Simulates a model and writes the trajectory as CSV.
    Simulate {
        #[command(flatten)]
        source: Source,
        #[command(flatten)]
        time: TimeArgs,
        /// Append derivative columns up to this order.
        #[arg(long)]
        derivatives: Option<usize>,
        /// CSV output file; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// JSON metadata file.
        #[arg(long)]
        meta: Option<PathBuf>,
    },
    /// Linear checks: block observability, PBH, Kalman, index-1 preconditions
    /// and the Kronecker identifiability test.
    Linear {
        #[command(flatten)]
        source: Source,
        #[command(flatten)]
        theta: ThetaArgs,
        /// Blocks whose entries form theta, e.g. `12,21`.
        #[arg(long, conflicts_with_all = ["theta", "theta_set"])]
        blocks: Option<String>,
        #[arg(long)]
        point: Option<PathBuf>,
        /// Largest mu of the identifiability search.
        #[arg(long)]
        max_mu: Option<usize>,
    },
    /// Sizes of the stacked system, or its symbolic rows.
    Stack {
        #[command(flatten)]
        source: Source,
        #[command(flatten)]
        theta: ThetaArgs,
        #[arg(long, default_value_t = 1)]
        mu: usize,
        #[arg(long, default_value_t = 1)]
        nu: usize,
        /// Print every stacked row.
        #[arg(long)]
        dump_stack: bool,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            eprint!("{e}");
            println!("{}", json!({"error": {"kind": "usage", "message": e.kind().to_string()}}));
            return ExitCode::from(2);
        }
    };
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            println!("{}", json!({"error": {"kind": e.kind(), "message": e.to_string()}}));
            ExitCode::from(2)
        }
    }
}

fn run(cmd: Command) -> Result<u8> {
    match cmd {
        Command::Check { source, theta, orders, point, simulate, dt } => check(&source, &theta, &orders, point, simulate, dt),
        Command::Scan { source, theta, time, grid, stride, max_order, jobs, out, svg } => {
            scan(&source, &theta, &time, grid.as_deref(), stride, max_order, jobs, out, svg)
        }
        Command::Simulate { source, time, derivatives, out, meta } => simulate(&source, &time, derivatives, out, meta),
        Command::Linear { source, theta, blocks, point, max_mu } => linear_cmd(&source, &theta, blocks.as_deref(), point, max_mu),
        Command::Stack { source, theta, mu, nu, dump_stack } => stack(&source, &theta, mu, nu, dump_stack),
    }
}

/// `IDENT_RANK_TOL` replaces the default tolerance formula.
fn env_tolerance() -> Result<Option<f64>> {
    match std::env::var("IDENT_RANK_TOL") {
        Ok(v) => v
            .trim()
            .parse::<f64>()
            .ok()
            .filter(|t| t.is_finite() && *t >= 0.0)
            .map(Some)
            .ok_or_else(|| Error::Usage(format!("IDENT_RANK_TOL must be a non-negative number, got {v:?}"))),
        Err(_) => Ok(None),
    }
}

/// Parameter names and a label for reports.
fn resolve_theta(input: &Input, args: &ThetaArgs) -> Result<(Vec<String>, String)> {
    if let Some(set) = &args.theta_set {
        let s = input.scenario().ok_or_else(|| Error::Usage("--theta-set needs a scenario".into()))?;
        return Ok((s.theta_set(set)?.to_vec(), set.clone()));
    }
    Ok((args.theta.clone(), args.theta.join(",")))
}

fn checker(model: &DaeModel, theta: &[String], options: RankOptions) -> Result<Checker> {
    if theta.is_empty() {
        Ok(Checker::observability(model, options))
    } else {
        Checker::identifiability(model, theta, options)
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn verdict_code(satisfied: bool) -> u8 {
    if satisfied {
        0
    } else {
        1
    }
}

fn check(
    source: &Source,
    theta_args: &ThetaArgs,
    orders: &OrderArgs,
    point: Option<PathBuf>,
    simulate: Option<f64>,
    dt: Option<f64>,
) -> Result<u8> {
    let input = Input::load(source)?;
    let model = input.model(source)?;
    let (theta, _) = resolve_theta(&input, theta_args)?;
    let options = RankOptions {
        max_order: orders.max_order,
        orders: orders.mu.zip(orders.nu),
        tolerance: env_tolerance()?,
        keep_singular_values: orders.svd_audit,
    };
    let checker = checker(&model, &theta, options)?;
    let pt = match point {
        Some(path) => {
            let mut pt = read_point(&path)?;
            if pt.theta.is_empty() {
                pt.theta = input.theta_values(&model, &theta)?;
            }
            pt
        }
        None => {
            let t0 = input.default_t_span().map_or(0.0, |s| s.0);
            let end = simulate.unwrap_or(t0);
            if end < t0 {
                return Err(Error::Usage(format!("--simulate {end} precedes the start time {t0}")));
            }
            // without --simulate the initial consistent state is tested
            let step = dt.unwrap_or_else(|| input.default_dt());
            let tr = input.trajectory(checker.sigma_needed(), Some((t0, end.max(t0 + step))), Some(step))?;
            let i = if end > t0 { tr.len() - 1 } else { 0 };
            tr.point(i, &input.theta_values(&model, &theta)?)?
        }
    };
    let report = checker.check(&pt)?;
    print_json(&report)?;
    Ok(verdict_code(report.verdict.is_satisfied()))
}

fn parse_grid(spec: &str) -> Result<(usize, usize)> {
    let bad = || Error::Usage(format!("grid spec {spec:?} is not NXxNY"));
    let (a, b) = spec.split_once(['x', 'X']).unwrap_or((spec, spec));
    let nx = a.trim().parse().map_err(|_| bad())?;
    let ny = b.trim().parse().map_err(|_| bad())?;
    Ok((nx, ny))
}

#[allow(clippy::too_many_arguments)]
fn scan(
    source: &Source,
    theta_args: &ThetaArgs,
    time: &TimeArgs,
    grid: Option<&str>,
    stride: usize,
    max_order: Option<usize>,
    jobs: Option<usize>,
    out: Option<PathBuf>,
    svg: Option<PathBuf>,
) -> Result<u8> {
    let input = Input::load(source)?;
    let (theta, label) = resolve_theta(&input, theta_args)?;
    let tolerance = env_tolerance()?;
    let model = input.model(source)?;
    let (checker, theta_values) = if input.is_linear() && !theta.is_empty() {
        let system = input.linear(source)?.with_theta(&theta)?;
        let values = system.theta_values();
        (Checker::Linear { system, max_mu: max_order, tolerance }, values)
    } else {
        let options = RankOptions { max_order, tolerance, ..RankOptions::default() };
        (checker(&model, &theta, options)?, input.theta_values(&model, &theta)?)
    };
    let sigma = checker.sigma_needed();
    let grid_dims = grid.map(parse_grid).transpose()?;
    if let Some((nx, ny)) = grid_dims {
        if nx == 0 || ny == 0 {
            return Err(Error::Usage("grid needs at least one node per axis".into()));
        }
    }
    let t_span = time.span().or_else(|| input.default_t_span());
    let (points, skipped, trajectory, source_label) = match grid_dims {
        Some((nx, ny)) => {
            let s = input.scenario().ok_or_else(|| Error::Usage("--grid needs a scenario with a plot plane".into()))?;
            let (points, skipped) = grid_points(s, &theta_values, nx, ny, sigma)?;
            let tr = if svg.is_some() { Some(input.trajectory(1, t_span, time.dt)?) } else { None };
            (points, skipped, tr, "grid")
        }
        None => {
            let tr = input.trajectory(sigma, t_span, time.dt)?;
            let points: Vec<EvalPoint> =
                (0..tr.len()).step_by(stride.max(1)).map(|i| tr.point(i, &theta_values)).collect::<Result<_>>()?;
            (points, 0, Some(tr), "trajectory")
        }
    };
    let reports = run_parallel(&points, jobs, |p| checker.check(p))?;
    let result = ScanResult {
        scenario: input.name(),
        theta_set: label,
        sensor: source.sensor.clone().unwrap_or_else(|| "default".into()),
        source: source_label.into(),
        state_names: model.state_names(),
        points: ScanResult::from_reports(&reports),
        skipped,
    };
    let summary = json!({
        "scenario": result.scenario,
        "theta": result.theta_set,
        "sensor": result.sensor,
        "source": result.source,
        "points": result.points.len(),
        "satisfied": result.satisfied(),
        "not_satisfied": result.points.len() - result.satisfied(),
        "skipped": result.skipped,
    });
    match &out {
        Some(path) => {
            result.write_csv(BufWriter::new(File::create(path)?))?;
            print_json(&summary)?;
        }
        None => {
            result.write_csv(io::stdout().lock())?;
            eprintln!("{summary}");
        }
    }
    if let Some(path) = svg {
        let plot = input
            .scenario()
            .and_then(|s| s.settings.plot.as_ref())
            .ok_or_else(|| Error::Usage("--svg needs a scenario with a plot plane".into()))?;
        std::fs::write(path, result.to_svg(plot, trajectory.as_ref())?)?;
    }
    Ok(0)
}

fn simulate(source: &Source, time: &TimeArgs, derivatives: Option<usize>, out: Option<PathBuf>, meta: Option<PathBuf>) -> Result<u8> {
    let input = Input::load(source)?;
    let t_span = time.span().or_else(|| input.default_t_span());
    let mut tr = input.trajectory(derivatives.unwrap_or(1), t_span, time.dt)?;
    if derivatives.is_none() {
        tr.derivative_arrays = None;
    }
    match out {
        Some(path) => tr.write_csv(BufWriter::new(File::create(path)?))?,
        None => tr.write_csv(io::stdout().lock())?,
    }
    if let Some(path) = meta {
        std::fs::write(path, serde_json::to_string_pretty(&tr.meta())?)?;
    }
    Ok(0)
}

fn parse_blocks(spec: &str) -> Result<Vec<(usize, usize)>> {
    spec.split(',')
        .map(|b| {
            let b = b.trim();
            let digits: Vec<usize> = b.chars().filter_map(|c| c.to_digit(10).map(|d| d as usize)).collect();
            match digits[..] {
                [i, j] if b.len() == 2 => Ok((i, j)),
                _ => Err(Error::Usage(format!("block {b:?} is not two digits such as 12"))),
            }
        })
        .collect()
}

fn linear_point(d: &LinearDae, point: Option<PathBuf>, sigma: usize) -> Result<EvalPoint> {
    let pt = match point {
        Some(path) => read_point(&path)?,
        None => {
            let x1 = d.initial_differential.as_ref().ok_or_else(|| Error::Usage("no --point and no initial_differential".into()))?;
            d.point(x1, sigma)?
        }
    };
    Ok(EvalPoint { theta: d.theta_values(), ..pt })
}

fn linear_cmd(source: &Source, theta_args: &ThetaArgs, blocks: Option<&str>, point: Option<PathBuf>, max_mu: Option<usize>) -> Result<u8> {
    let input = Input::load(source)?;
    let d = input.linear(source)?;
    let observable = linear::block_o_observable(&d, None)?;
    let pbh = match linear::pbh_r_observable(&d) {
        Ok(b) => json!(b),
        Err(e) => json!({"error": {"kind": e.kind(), "message": e.to_string()}}),
    };
    let kalman = match linear::kalman_observable(&d) {
        Ok(b) => json!(b),
        Err(Error::SingularE) => serde_json::Value::Null,
        Err(e) => return Err(e),
    };
    let preconditions = match linear::index1_preconditions(&d) {
        Ok(c) => json!({"index1": c.index1, "a21_full_column_rank": c.a21_full}),
        Err(_) => serde_json::Value::Null,
    };
    let (theta, _) = resolve_theta(&input, theta_args)?;
    let theta = match blocks {
        Some(spec) => linear::block_entries(&d, &parse_blocks(spec)?)?,
        None => theta,
    };
    let identifiability: Option<RankReport> = if theta.is_empty() {
        None
    } else {
        let di = d.with_theta(&theta)?;
        let pt = linear_point(&di, point, max_mu.unwrap_or(di.n()) + 1)?;
        Some(linear::linear_identifiability_search(&di, &pt, max_mu, env_tolerance()?)?)
    };
    let code = match &identifiability {
        Some(r) => verdict_code(r.verdict.is_satisfied()),
        None => verdict_code(observable.one_full),
    };
    print_json(&json!({
        "name": d.name,
        "n": d.n(),
        "q": d.q(),
        "theta": theta,
        "r_observable": observable,
        "pbh_r_observable": pbh,
        "kalman_observable": kalman,
        "index1_preconditions": preconditions,
        "identifiability": identifiability,
    }))?;
    Ok(code)
}

fn stack(source: &Source, theta_args: &ThetaArgs, mu: usize, nu: usize, dump: bool) -> Result<u8> {
    let input = Input::load(source)?;
    let model = input.model(source)?;
    let (theta, _) = resolve_theta(&input, theta_args)?;
    let analyzer = if theta.is_empty() { Analyzer::observability(&model) } else { Analyzer::identifiability(&model.augment(&theta)?) };
    if dump {
        print!("{}", analyzer.dump_stack(mu, nu));
        return Ok(0);
    }
    let blocks = analyzer.blocks(mu, nu)?;
    print_json(&json!({
        "partition": analyzer.partition(),
        "mu": mu,
        "nu": nu,
        "sigma": blocks.sigma,
        "rows": blocks.rows,
        "columns_left": blocks.n_left,
        "columns_right": blocks.cols - blocks.n_left,
    }))?;
    Ok(0)
}
