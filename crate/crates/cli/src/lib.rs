//! The `savo` command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or parse error, 3 failed
//! model validation.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{debug, info};

use savo::geometry::SfpParams;
use savo::integrator::GridSpec;
use savo::io::{self, BoundsDeg, Dataset, ScenarioConfig, SfpDeg};
use savo::metrics::{MetricId, Roi};
use savo::optimizer::{self, Bounds, OptOptions, OptResult};
use savo::pipeline::{self, SweepVar};
use savo::stat_model;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_VALIDATION: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "savo", version, about = "Synthetic-aperture focus simulation and optimization")]
struct Cli {
    /// Seed for scatter search and Monte Carlo runs.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel kernels (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a dataset from a scenario file (or the built-in `conifer-sim`).
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the integral image and its coverage map for one focal plane.
    Integrate {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        d: f64,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        theta: f64,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        phi: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate focus metrics along one focal-plane parameter.
    Sweep {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value = "d")]
        var: String,
        /// start:stop:step in meters or degrees.
        #[arg(long, allow_hyphen_values = true)]
        range: String,
        /// `all` or a comma-separated list of metric names.
        #[arg(long, default_value = "all")]
        metrics: String,
        /// Fixed d,theta,phi (degrees) for the parameters not swept.
        #[arg(long, allow_hyphen_values = true)]
        at: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Search the focal plane maximizing a focus metric.
    Optimize {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        method: Method,
        /// Start point d,theta,phi (degrees) for sqp; default is the bounds midpoint.
        #[arg(long, allow_hyphen_values = true)]
        x0: Option<String>,
        /// d_lo:d_hi,theta_lo:theta_hi,phi_lo:phi_hi (degrees).
        #[arg(long, allow_hyphen_values = true)]
        bounds: Option<String>,
        /// Lattice points per variable for grid search.
        #[arg(long, default_value = "33,5,5")]
        steps: String,
        #[arg(long)]
        metric: Option<MetricId>,
        #[arg(long)]
        max_evals: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sweep d with every metric and report each metric's best d.
    CompareMetrics {
        #[command(flatten)]
        data: DataArgs,
        /// start:stop:step of d; default is the scenario bounds at 0.5 m.
        #[arg(long)]
        range: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check the closed-form occlusion model against Monte Carlo simulation.
    ValidateModel {
        #[arg(long, default_value = "default")]
        grid: String,
        #[arg(long, default_value_t = 1_000_000)]
        trials: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Time full-grid integrations.
    Benchmark {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 10)]
        repeats: usize,
        /// Focal plane d,theta,phi (degrees); default is the ground.
        #[arg(long, allow_hyphen_values = true)]
        at: Option<String>,
    },
}

#[derive(Debug, Args)]
struct DataArgs {
    #[arg(long)]
    dataset: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum Method {
    Sqp,
    Ss,
    Grid,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(savo::Error),
    Validation(String),
}

impl From<savo::Error> for CliError {
    fn from(e: savo::Error) -> Self {
        CliError::Data(e)
    }
}

type CliResult<T = ()> = std::result::Result<T, CliError>;

/// Runs one invocation; `args[0]` is the program name.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let level = if cli.verbose { "debug" } else { "warn" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();

    let outcome = match cli.workers {
        Some(0) => Err(CliError::Usage("--workers must be at least 1".into())),
        Some(k) => match rayon::ThreadPoolBuilder::new().num_threads(k).build() {
            Ok(pool) => pool.install(|| dispatch(&cli)),
            Err(e) => Err(CliError::Usage(format!("--workers {k}: {e}"))),
        },
        None => dispatch(&cli),
    };
    match outcome {
        Ok(()) => EXIT_OK,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(CliError::Data(e)) => {
            eprintln!("error: {e}");
            EXIT_DATA
        }
        Err(CliError::Validation(msg)) => {
            eprintln!("validation failed: {msg}");
            EXIT_VALIDATION
        }
    }
}

fn dispatch(cli: &Cli) -> CliResult {
    let seed = cli.seed;
    match &cli.command {
        Command::Simulate { scenario, out } => simulate(scenario, out),
        Command::Integrate {
            dataset,
            d,
            theta,
            phi,
            out,
        } => integrate(dataset, SfpDeg { d: *d, theta_deg: *theta, phi_deg: *phi }, out),
        Command::Sweep {
            data,
            var,
            range,
            metrics,
            at,
            out,
        } => sweep(&data.dataset, var, range, metrics, at.as_deref(), out),
        Command::Optimize {
            data,
            method,
            x0,
            bounds,
            steps,
            metric,
            max_evals,
            out,
        } => {
            let req = OptimizeRequest {
                method: *method,
                x0: x0.as_deref(),
                bounds: bounds.as_deref(),
                steps,
                metric: *metric,
                max_evals: *max_evals,
                seed,
            };
            optimize(&data.dataset, &req, out)
        }
        Command::CompareMetrics { data, range, out } => compare_metrics(&data.dataset, range.as_deref(), out),
        Command::ValidateModel { grid, trials, out } => validate_model(grid, *trials, seed.unwrap_or(0), out),
        Command::Benchmark { dataset, repeats, at } => benchmark(dataset, *repeats, at.as_deref()),
    }
}

fn simulate(scenario: &Path, out: &Path) -> CliResult {
    let cfg = if !scenario.exists() && scenario.as_os_str() == "conifer-sim" {
        ScenarioConfig::conifer_sim()
    } else {
        io::read_scenario(scenario)?
    };
    info!("rendering {} recordings", cfg.aperture.count);
    let ds = Dataset::simulate(&cfg)?;
    io::write_dataset(out, &ds)?;
    println!("wrote {} recordings to {}", ds.len(), out.display());
    Ok(())
}

/// Evaluation grid and region of interest of a dataset: the scenario's when
/// present, the defaults otherwise.
fn frame(ds: &Dataset) -> CliResult<(GridSpec, Roi)> {
    let (grid, fraction) = match &ds.scenario {
        Some(cfg) => (cfg.grid, cfg.roi_fraction),
        None => (GridSpec::default(), 0.5),
    };
    let (w, h) = grid.dims();
    Ok((grid, Roi::central(w, h, fraction)?))
}

fn default_bounds(ds: &Dataset) -> BoundsDeg {
    ds.scenario.as_ref().map(|c| c.bounds).unwrap_or_default()
}

fn integrate(dataset: &Path, at: SfpDeg, out: &Path) -> CliResult {
    let sfp = sfp_from(at, "--d/--theta/--phi")?;
    let ds = io::read_dataset(dataset)?;
    let (grid, _) = frame(&ds)?;
    let img = ds.integrate(&sfp, &grid)?;
    io::write_pgm16(out, &img.to_thermal())?;
    let count_path = sibling(out, "_count")?;
    io::write_pgm16(&count_path, &img.count_map(ds.len()))?;
    println!(
        "wrote {}x{} integral to {} and coverage to {}",
        img.width,
        img.height,
        out.display(),
        count_path.display()
    );
    Ok(())
}

fn sweep(dataset: &Path, var: &str, range: &str, metrics: &str, at: Option<&str>, out: &Path) -> CliResult {
    let var: SweepVar = var.parse().map_err(|e: savo::Error| CliError::Usage(format!("--var: {e}")))?;
    let values = parse_range(range, "--range")?;
    let metrics = parse_metrics(metrics)?;
    let at = at.map(|s| parse_triple(s, "--at")).transpose()?;
    let ds = io::read_dataset(dataset)?;
    let (grid, roi) = frame(&ds)?;
    let b = default_bounds(&ds);
    let at = at.unwrap_or(SfpDeg {
        d: 0.5 * (b.lower.d + b.upper.d),
        theta_deg: 0.0,
        phi_deg: 0.0,
    });
    let table = pipeline::sweep(&ds, var, &values, at, &metrics, &grid, &roi)?;
    io::write_sweep_csv(out, &table)?;
    println!("wrote {} rows to {}", table.rows.len(), out.display());
    Ok(())
}

struct OptimizeRequest<'a> {
    method: Method,
    x0: Option<&'a str>,
    bounds: Option<&'a str>,
    steps: &'a str,
    metric: Option<MetricId>,
    max_evals: Option<usize>,
    seed: Option<u64>,
}

fn optimize(dataset: &Path, req: &OptimizeRequest, out: &Path) -> CliResult {
    let explicit_bounds = req.bounds.map(parse_bounds).transpose()?;
    let x0 = req.x0.map(|s| parse_triple(s, "--x0")).transpose()?;
    let steps = parse_steps(req.steps)?;
    let ds = io::read_dataset(dataset)?;
    let (grid, roi) = frame(&ds)?;
    let metric = req
        .metric
        .or(ds.scenario.as_ref().map(|c| c.metric))
        .unwrap_or(MetricId::Glv);
    let bounds = match (explicit_bounds, req.method) {
        (Some(b), _) => b,
        // scatter search runs without a prior on the plane
        (None, Method::Ss) => Bounds::wide_sfp(ds.sap_origin.z)?,
        (None, _) => default_bounds(&ds).to_bounds()?,
    };
    let mut opts = OptOptions::sfp();
    opts.seed = req
        .seed
        .or(ds.scenario.as_ref().map(|c| c.optimizer_seed))
        .unwrap_or(0);
    if let Some(m) = req.max_evals {
        opts.max_evals = m;
    }
    let objective = optimizer::make_sfp_objective(&ds, metric, &grid, &roi)?;
    let mut f = objective.as_fn();
    debug!("optimizing {metric} over {bounds:?}");
    let result: OptResult = match req.method {
        Method::Sqp => {
            let x0 = match x0 {
                Some(p) => vec![p.d, p.theta_deg.to_radians(), p.phi_deg.to_radians()],
                None => bounds.midpoint(),
            };
            if !bounds.contains(&x0) {
                return Err(CliError::Usage(format!("--x0 {:?} lies outside the bounds", req.x0.unwrap_or(""))));
            }
            optimizer::sqp_local(&mut f, &x0, &bounds, &opts)?
        }
        Method::Ss => optimizer::scatter_search(&mut f, &bounds, &opts)?,
        Method::Grid => optimizer::grid_search(&mut f, &bounds, &steps)?,
    };
    io::write_trace_csv(out, &result)?;
    let best = &result.best_x;
    println!(
        "best d={} theta_deg={} phi_deg={} {}={} evals={} converged={}",
        io::format_sig(best[0]),
        io::format_sig(best[1].to_degrees()),
        io::format_sig(best[2].to_degrees()),
        metric,
        io::format_sig(result.best_value),
        result.evals,
        result.converged
    );
    Ok(())
}

fn compare_metrics(dataset: &Path, range: Option<&str>, out: &Path) -> CliResult {
    let explicit = range.map(|r| parse_range(r, "--range")).transpose()?;
    let ds = io::read_dataset(dataset)?;
    let (grid, roi) = frame(&ds)?;
    let b = default_bounds(&ds);
    let values = match explicit {
        Some(v) => v,
        None => pipeline::range_values(b.lower.d, b.upper.d, 0.5)?,
    };
    let at = SfpDeg {
        d: values[0],
        theta_deg: 0.0,
        phi_deg: 0.0,
    };
    let table = pipeline::sweep(&ds, SweepVar::D, &values, at, &MetricId::ALL, &grid, &roi)?;
    io::write_sweep_csv(out, &table)?;
    for m in MetricId::ALL {
        if let Some(k) = table.argmax(m) {
            println!("{m}: argmax d={}", io::format_sig(table.rows[k].vars[0]));
        }
    }
    if let Some(truth) = table.truth_column() {
        let k = (0..truth.len()).fold(0, |b, i| if truth[i] > truth[b] { i } else { b });
        println!("true_visibility: argmax d={}", io::format_sig(table.rows[k].vars[0]));
    }
    Ok(())
}

fn validate_model(grid: &str, trials: u64, seed: u64, out: &Path) -> CliResult {
    if grid != "default" {
        return Err(CliError::Usage(format!("--grid '{grid}': only 'default' is available")));
    }
    if trials < 2 {
        return Err(CliError::Usage("--trials must be at least 2".into()));
    }
    let mut rows = Vec::new();
    for (k, p) in stat_model::default_validation_grid().into_iter().enumerate() {
        let report = stat_model::model_check(&p, trials, seed.wrapping_add(k as u64))?;
        debug!("{p:?}: {report:?}");
        rows.push((p, report));
    }
    io::write_model_report_csv(out, &rows)?;
    let failed = rows.iter().filter(|(_, r)| !r.pass).count();
    println!("{} of {} parameter sets pass; report in {}", rows.len() - failed, rows.len(), out.display());
    if failed > 0 {
        return Err(CliError::Validation(format!("{failed} parameter sets outside 4 standard errors")));
    }
    Ok(())
}

fn benchmark(dataset: &Path, repeats: usize, at: Option<&str>) -> CliResult {
    if repeats == 0 {
        return Err(CliError::Usage("--repeats must be at least 1".into()));
    }
    let at = at.map(|s| parse_triple(s, "--at")).transpose()?;
    let ds = io::read_dataset(dataset)?;
    let (grid, _) = frame(&ds)?;
    let at = at.unwrap_or(SfpDeg {
        d: ds.sap_origin.z,
        theta_deg: 0.0,
        phi_deg: 0.0,
    });
    let sfp = sfp_from(at, "--at")?;
    let stats = pipeline::benchmark_integration(&ds, &sfp, &grid, repeats)?;
    let (w, h) = grid.dims();
    let ms = |d: std::time::Duration| d.as_secs_f64() * 1e3;
    println!(
        "integrated {} recordings onto {w}x{h} with {} workers: min {:.1} ms, median {:.1} ms, p95 {:.1} ms ({repeats} repeats)",
        ds.len(),
        rayon::current_num_threads(),
        ms(stats.min),
        ms(stats.median),
        ms(stats.p95)
    );
    Ok(())
}

fn sfp_from(p: SfpDeg, flag: &str) -> CliResult<SfpParams> {
    SfpParams::from_degrees(p.d, p.theta_deg, p.phi_deg).map_err(|e| CliError::Usage(format!("{flag}: {e}")))
}

/// `dir/name.ext` becomes `dir/name{suffix}.ext`.
fn sibling(path: &Path, suffix: &str) -> CliResult<PathBuf> {
    let stem = path
        .file_stem()
        .ok_or_else(|| CliError::Usage(format!("--out {} has no file name", path.display())))?;
    let mut name = stem.to_os_string();
    name.push(suffix);
    if let Some(ext) = path.extension() {
        name.push(".");
        name.push(ext);
    }
    Ok(path.with_file_name(name))
}

fn parse_numbers(s: &str, sep: char, flag: &str) -> CliResult<Vec<f64>> {
    s.split(sep)
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| CliError::Usage(format!("{flag}: '{t}' is not a number")))
        })
        .collect()
}

fn parse_range(s: &str, flag: &str) -> CliResult<Vec<f64>> {
    match parse_numbers(s, ':', flag)?[..] {
        [a, b, step] => pipeline::range_values(a, b, step).map_err(|e| CliError::Usage(format!("{flag}: {e}"))),
        _ => Err(CliError::Usage(format!("{flag}: expected start:stop:step, got '{s}'"))),
    }
}

fn parse_triple(s: &str, flag: &str) -> CliResult<SfpDeg> {
    match parse_numbers(s, ',', flag)?[..] {
        [d, theta_deg, phi_deg] => Ok(SfpDeg { d, theta_deg, phi_deg }),
        _ => Err(CliError::Usage(format!("{flag}: expected d,theta,phi, got '{s}'"))),
    }
}

fn parse_bounds(s: &str) -> CliResult<Bounds> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(CliError::Usage(format!("--bounds: expected three lo:hi pairs, got '{s}'")));
    }
    let mut lower = [0.0; 3];
    let mut upper = [0.0; 3];
    for (k, part) in parts.iter().enumerate() {
        match parse_numbers(part, ':', "--bounds")?[..] {
            [lo, hi] => {
                lower[k] = lo;
                upper[k] = hi;
            }
            _ => return Err(CliError::Usage(format!("--bounds: '{part}' is not lo:hi"))),
        }
    }
    let b = BoundsDeg {
        lower: SfpDeg { d: lower[0], theta_deg: lower[1], phi_deg: lower[2] },
        upper: SfpDeg { d: upper[0], theta_deg: upper[1], phi_deg: upper[2] },
    };
    b.to_bounds().map_err(|e| CliError::Usage(format!("--bounds: {e}")))
}

fn parse_steps(s: &str) -> CliResult<Vec<usize>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .ok()
                .filter(|n| *n > 0)
                .ok_or_else(|| CliError::Usage(format!("--steps: '{t}' is not a positive count")))
        })
        .collect()
}

fn parse_metrics(s: &str) -> CliResult<Vec<MetricId>> {
    if s == "all" {
        return Ok(MetricId::ALL.to_vec());
    }
    let mut out = Vec::new();
    for name in s.split(',') {
        let m: MetricId = name
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("--metrics: unknown metric '{name}'")))?;
        if !out.contains(&m) {
            out.push(m);
        }
    }
    Ok(out)
}
