//! Command-line driver: config parsing, `run` / `validate` / `sweep`
//! commands, and CSV/JSON serialization of trajectories.
//!
//! Exit codes: 0 success (run completed, all monitors passed), 1 monitor
//! failure, 2 solver failure, 3 configuration failure.
//!
//! The output root defaults to the config's `output.directory`; if the
//! `KSJKO_OUT` environment variable is set, outputs are placed under it.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::Deserialize;

use crate::energy::Nonlinearity;
use crate::grid::{
    build_grid, linf_norm, Coupling, DensityField, DomainSpec, Grid, ScalarField,
};
use crate::jko::{run_flow, JkoConfig, RunStatus, StepMethod, Trajectory};
use crate::poisson::solve_potential;
use crate::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_MONITOR: i32 = 1;
pub const EXIT_SOLVER: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;

#[derive(Parser)]
#[command(name = "jkoflow", about = "Constrained minimizing-movement solver for chemotaxis flows", version)]
struct Cli {
    #[command(subcommand)]
    command: Commands,
}

#[derive(Subcommand)]
enum Commands {
    /// Run a flow described by a TOML config and write series/snapshots.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the built-in verification suites and the step-size calibration.
    Validate {
        #[arg(long)]
        suite: Option<String>,
    },
    /// Run a config once per value of a varied key (e.g. `scheme.tau=1e-3,2e-3`).
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        vary: String,
    },
}

/// Entry point used by the binary; returns the process exit code.
pub fn main() -> i32 {
    let cli = Cli::parse();
    let code = match cli.command {
        Commands::Run { config } => cmd_run_path(&config),
        Commands::Validate { suite } => cmd_validate(suite.as_deref()),
        Commands::Sweep { config, vary } => cmd_sweep(&config, &vary),
    };
    match code {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}

fn exit_code_for(e: &Error) -> i32 {
    match e {
        Error::Config(_)
        | Error::Parameter(_)
        | Error::Domain(_)
        | Error::InvalidResolution(_) => EXIT_CONFIG,
        _ => EXIT_SOLVER,
    }
}

// ---------------------------------------------------------------------------
// Configuration document
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct DomainBlock {
    dimension: usize,
    /// One `[lo, hi]` pair per axis.
    extent: Vec<[f64; 2]>,
    coupling: String,
    n: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct PhysicsBlock {
    chi: f64,
    /// "entropy", "power:m=<val>", or "regularized:base=<spec>,delta=<val>".
    nonlinearity: String,
    /// "uniform", "bump", "two_bumps", or "from_file".
    initial: String,
    #[serde(default)]
    center: Option<Vec<f64>>,
    #[serde(default)]
    width: Option<f64>,
    #[serde(default)]
    height: Option<f64>,
    /// CSV of cell values for `initial = "from_file"`.
    #[serde(default)]
    file: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct SchemeBlock {
    tau: f64,
    lambda: f64,
    eps0: f64,
    t0: f64,
    #[serde(default)]
    entropic_eps: Option<f64>,
    #[serde(default)]
    inner_tol: Option<f64>,
    #[serde(default)]
    fixed_point_tol: Option<f64>,
    #[serde(default)]
    max_inner_iters: Option<usize>,
    /// Overrides the default cap `1/(chi tau)`.
    #[serde(default)]
    cap: Option<f64>,
    /// "auto", "quantile", "direct", or "entropic".
    #[serde(default)]
    method: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct OutputBlock {
    directory: PathBuf,
    #[serde(default = "default_stride")]
    snapshot_stride: usize,
    /// "csv" (default) or "json" snapshots.
    #[serde(default = "default_format")]
    format: String,
}

fn default_stride() -> usize {
    1
}
fn default_format() -> String {
    "csv".into()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigDoc {
    domain: DomainBlock,
    physics: PhysicsBlock,
    scheme: SchemeBlock,
    output: OutputBlock,
}

/// A parsed and validated run description.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub grid: Grid,
    pub nl: Nonlinearity,
    pub jko: JkoConfig,
    pub rho0: DensityField,
    pub out_dir: PathBuf,
    pub snapshot_stride: usize,
    pub snapshot_format: SnapshotFormat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SnapshotFormat {
    Csv,
    Json,
}

/// Parse a TOML config document into a validated [`RunConfig`].
///
/// Unknown keys are rejected by name; the run-horizon hypothesis
/// `1/|rho0|_inf - chi*lambda*t0 > eps0` is checked here so a bad config
/// fails before any solver work.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let doc: ConfigDoc =
        toml::from_str(text).map_err(|e| Error::Config(format!("config parse error: {e}")))?;

    if doc.domain.extent.len() != doc.domain.dimension {
        return Err(Error::Config(format!(
            "domain.extent has {} axes but domain.dimension = {}",
            doc.domain.extent.len(),
            doc.domain.dimension
        )));
    }
    let coupling: Coupling = doc.domain.coupling.parse()?;
    let domain = DomainSpec::new(doc.domain.extent.clone(), coupling)?;
    let grid = build_grid(domain, doc.domain.n)?;

    let nl = Nonlinearity::parse(&doc.physics.nonlinearity)?;
    let rho0 = initial_profile(&grid, &doc.physics)?;

    let mut jko = JkoConfig::new(doc.physics.chi, doc.scheme.tau)?;
    jko.lambda_monitor = doc.scheme.lambda;
    jko.eps0 = doc.scheme.eps0;
    jko.t0 = doc.scheme.t0;
    jko.entropic_eps = doc.scheme.entropic_eps;
    jko.cap_m = doc.scheme.cap;
    if let Some(v) = doc.scheme.inner_tol {
        jko.inner_tol = v;
    }
    if let Some(v) = doc.scheme.fixed_point_tol {
        jko.fixed_point_tol = v;
    }
    if let Some(v) = doc.scheme.max_inner_iters {
        jko.max_inner_iters = v;
    }
    if let Some(m) = &doc.scheme.method {
        jko.method = match m.as_str() {
            "auto" => StepMethod::Auto,
            "quantile" => StepMethod::Quantile,
            "direct" => StepMethod::DirectEulerian,
            "entropic" => StepMethod::EntropicSplitting,
            other => {
                return Err(Error::Config(format!("unknown scheme.method `{other}`")))
            }
        };
    }
    jko.validate()?;

    // Horizon hypothesis: reject configs that cannot satisfy the a-priori
    // bound, quoting the inequality with its numbers.
    let (m0, _) = linf_norm(&rho0);
    let budget = 1.0 / m0 - jko.chi * jko.lambda_monitor * jko.t0;
    if !(budget > jko.eps0) {
        return Err(Error::Config(format!(
            "horizon hypothesis violated: 1/|rho0|_inf - chi*lambda*t0 = {budget:.6} \
             must exceed eps0 = {:.6}; lower t0, chi, or eps0",
            jko.eps0
        )));
    }

    let format = match doc.output.format.as_str() {
        "csv" => SnapshotFormat::Csv,
        "json" => SnapshotFormat::Json,
        other => {
            return Err(Error::Config(format!(
                "unknown output.format `{other}` (expected \"csv\" or \"json\")"
            )))
        }
    };
    if doc.output.snapshot_stride == 0 {
        return Err(Error::Config("output.snapshot_stride must be >= 1".into()));
    }
    let out_dir = match std::env::var_os("KSJKO_OUT") {
        Some(root) => PathBuf::from(root).join(&doc.output.directory),
        None => doc.output.directory.clone(),
    };

    Ok(RunConfig {
        grid,
        nl,
        jko,
        rho0,
        out_dir,
        snapshot_stride: doc.output.snapshot_stride,
        snapshot_format: format,
    })
}

fn initial_profile(grid: &Grid, phys: &PhysicsBlock) -> Result<DensityField> {
    let field = match phys.initial.as_str() {
        "uniform" => DensityField::uniform(grid.clone()),
        "bump" => {
            let center = phys
                .center
                .clone()
                .unwrap_or_else(|| grid.domain.centroid());
            if center.len() != grid.dim() {
                return Err(Error::Config(format!(
                    "physics.center has {} entries for a {}-d domain",
                    center.len(),
                    grid.dim()
                )));
            }
            let width = phys.width.unwrap_or(0.1 * grid.domain.length(0));
            let height = phys.height.unwrap_or(1.0);
            if width <= 0.0 || height <= 0.0 {
                return Err(Error::Config(
                    "physics.width and physics.height must be positive".into(),
                ));
            }
            DensityField::from_fn(grid.clone(), |x| {
                let r2: f64 = x
                    .iter()
                    .zip(&center)
                    .map(|(xi, ci)| ((xi - ci) / width).powi(2))
                    .sum();
                0.1 + height * (-r2).exp()
            })?
        }
        "two_bumps" => crate::fixtures::two_bumps(grid)?,
        "from_file" => {
            let path = phys.file.as_ref().ok_or_else(|| {
                Error::Config("physics.file is required for initial = \"from_file\"".into())
            })?;
            let text = std::fs::read_to_string(path)?;
            let mut values = Vec::new();
            for (lineno, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let v: f64 = line.parse().map_err(|_| {
                    Error::Config(format!(
                        "{}:{}: not a number: `{line}`",
                        path.display(),
                        lineno + 1
                    ))
                })?;
                values.push(v);
            }
            if values.len() != grid.num_cells() {
                return Err(Error::Config(format!(
                    "{}: {} values for a grid of {} cells",
                    path.display(),
                    values.len(),
                    grid.num_cells()
                )));
            }
            DensityField::new(grid.clone(), values)?
        }
        other => {
            return Err(Error::Config(format!(
                "unknown physics.initial `{other}` \
                 (expected uniform, bump, two_bumps, or from_file)"
            )))
        }
    };
    field.normalized()
}

// ---------------------------------------------------------------------------
// run
// ---------------------------------------------------------------------------

fn cmd_run_path(path: &Path) -> Result<i32> {
    let text = std::fs::read_to_string(path)?;
    let cfg = parse_config(&text)?;
    cmd_run(&cfg)
}

/// Execute a configured flow, write outputs, and return the exit code.
pub fn cmd_run(cfg: &RunConfig) -> Result<i32> {
    let start = Instant::now();
    let traj = run_flow(&cfg.rho0, &cfg.jko, &cfg.nl)?;
    write_outputs(&traj, cfg, start.elapsed().as_secs_f64())?;
    let code = match traj.status {
        RunStatus::Completed => EXIT_OK,
        RunStatus::MonitorFailure { .. } => EXIT_MONITOR,
        RunStatus::StepError { .. } => EXIT_SOLVER,
    };
    Ok(code)
}

/// Serialize a trajectory: `series.csv`, snapshots at the configured
/// stride, and `summary.json`.
pub fn write_outputs(traj: &Trajectory, cfg: &RunConfig, wall_seconds: f64) -> Result<()> {
    std::fs::create_dir_all(&cfg.out_dir)?;
    std::fs::write(cfg.out_dir.join("series.csv"), series_csv(traj))?;

    for (k, state) in traj.states.iter().enumerate() {
        if k % cfg.snapshot_stride != 0 {
            continue;
        }
        let u = solve_potential(state)?.u;
        let (name, body) = match cfg.snapshot_format {
            SnapshotFormat::Csv => (format!("snapshot_{k}.csv"), snapshot_csv(state, &u)),
            SnapshotFormat::Json => (format!("snapshot_{k}.json"), snapshot_json(state, &u)),
        };
        std::fs::write(cfg.out_dir.join(name), body)?;
    }

    std::fs::write(
        cfg.out_dir.join("summary.json"),
        summary_json(traj, wall_seconds),
    )?;
    Ok(())
}

/// Pinned series schema; one row per state (step 0 reports initial values).
pub const SERIES_HEADER: &str = "k,t,linf,inv_linf,required_inv_linf_bound,J,internal,\
interaction,w2_sq_over_tau,dissipation_slack,kkt_residual,active_fraction,monitor_pass";

/// Render the per-step series. An empty trajectory yields only the header.
pub fn series_csv(traj: &Trajectory) -> String {
    let mut out = String::from(SERIES_HEADER);
    out.push('\n');
    for (k, t) in traj.times.iter().enumerate() {
        if k == 0 {
            // Initial state: no step was taken, so transport/monitor columns
            // are identities (bound equals the current inverse norm).
            let rho0 = &traj.states[0];
            let (linf, _) = linf_norm(rho0);
            let energy = traj
                .reports
                .first()
                .map(|r| (r.prev_total_energy, f64::NAN, f64::NAN));
            let (j, internal, interaction) = match energy {
                Some(e) => e,
                None => (f64::NAN, f64::NAN, f64::NAN),
            };
            let _ = writeln!(
                out,
                "0,{t},{linf},{inv},{inv},{j},{internal},{interaction},0,0,0,0,true",
                inv = 1.0 / linf,
            );
            continue;
        }
        let r = &traj.reports[k - 1];
        let _ = writeln!(
            out,
            "{k},{t},{},{},{},{},{},{},{},{},{},{},{}",
            r.linf,
            1.0 / r.linf,
            r.linf_bound_required,
            r.energy.total,
            r.energy.internal,
            r.energy.interaction,
            r.w2_squared / (traj.times[k] - traj.times[k - 1]),
            r.dissipation_slack,
            r.kkt_residual,
            r.active_fraction,
            r.monitor_pass,
        );
    }
    out
}

/// One row per cell: coordinates, density, potential.
pub fn snapshot_csv(rho: &DensityField, u: &ScalarField) -> String {
    let grid = &rho.grid;
    let mut out = String::new();
    match grid.dim() {
        1 => out.push_str("x,rho,u\n"),
        _ => out.push_str("x,y,rho,u\n"),
    }
    for i in 0..grid.num_cells() {
        for c in grid.center(i) {
            let _ = write!(out, "{c},");
        }
        let _ = writeln!(out, "{},{}", rho.values[i], u.values[i]);
    }
    out
}

fn snapshot_json(rho: &DensityField, u: &ScalarField) -> String {
    let grid = &rho.grid;
    let coords: Vec<Vec<f64>> = (0..grid.num_cells()).map(|i| grid.center(i)).collect();
    serde_json::json!({
        "n": grid.n(),
        "dimension": grid.dim(),
        "coordinates": coords,
        "rho": rho.values,
        "u": u.values,
    })
    .to_string()
}

/// Parse a CSV snapshot back into (density, potential) on `grid`.
pub fn snapshot_parse_csv(text: &str, grid: &Grid) -> Result<(DensityField, ScalarField)> {
    let mut rho = Vec::new();
    let mut u = Vec::new();
    for line in text.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != grid.dim() + 2 {
            return Err(Error::Config(format!(
                "snapshot row has {} columns, expected {}",
                cols.len(),
                grid.dim() + 2
            )));
        }
        let parse = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| Error::Config(format!("bad snapshot value `{s}`")))
        };
        rho.push(parse(cols[grid.dim()])?);
        u.push(parse(cols[grid.dim() + 1])?);
    }
    Ok((
        DensityField::new(grid.clone(), rho)?,
        ScalarField::new(grid.clone(), u)?,
    ))
}

fn summary_json(traj: &Trajectory, wall_seconds: f64) -> String {
    let (status, failing_step) = match traj.status {
        RunStatus::Completed => ("completed".to_string(), serde_json::Value::Null),
        RunStatus::MonitorFailure { k } => ("monitor_failure".to_string(), k.into()),
        RunStatus::StepError { k, ref message } => {
            (format!("step_error: {message}"), k.into())
        }
    };
    let monitors: Vec<bool> = traj.reports.iter().map(|r| r.monitor_pass).collect();
    let all_pass = traj.status == RunStatus::Completed && monitors.iter().all(|&b| b);
    let max_linf = traj
        .reports
        .iter()
        .map(|r| r.linf)
        .fold(f64::NEG_INFINITY, f64::max);
    serde_json::json!({
        "status": status,
        "failing_step": failing_step,
        "steps": traj.reports.len(),
        "monitor_pass_per_step": monitors,
        "all_monitors_pass": all_pass,
        "max_linf": if traj.reports.is_empty() { serde_json::Value::Null } else { max_linf.into() },
        "tau_warning": traj.tau_warning,
        "wall_seconds": wall_seconds,
    })
    .to_string()
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

fn cmd_sweep(path: &Path, vary: &str) -> Result<i32> {
    let text = std::fs::read_to_string(path)?;
    let (key, values) = vary
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("--vary `{vary}` is not of the form key=v1,v2")))?;
    let values: Vec<&str> = values.split(',').filter(|v| !v.is_empty()).collect();
    if values.is_empty() {
        return Err(Error::Config("--vary needs at least one value".into()));
    }

    let mut worst = EXIT_OK;
    for (idx, value) in values.iter().enumerate() {
        let doc = set_dotted_key(&text, key, value)?;
        let mut cfg = parse_config(&doc)?;
        cfg.out_dir = cfg.out_dir.join(format!("{}_{idx}", key.replace('.', "_")));
        let code = cmd_run(&cfg)?;
        println!(
            "sweep {key}={value}: exit {code} -> {}",
            cfg.out_dir.display()
        );
        worst = worst.max(code);
    }
    Ok(worst)
}

/// Set `section.key = value` in a TOML document, preserving everything else.
fn set_dotted_key(text: &str, dotted: &str, value: &str) -> Result<String> {
    let (section, key) = dotted.split_once('.').ok_or_else(|| {
        Error::Config(format!("--vary key `{dotted}` must be section.key"))
    })?;
    let mut doc: toml::Table =
        text.parse().map_err(|e| Error::Config(format!("config parse error: {e}")))?;
    let sect = doc
        .get_mut(section)
        .and_then(|v| v.as_table_mut())
        .ok_or_else(|| Error::Config(format!("no section `[{section}]` in config")))?;
    // Parse the value as TOML so numbers stay numbers and strings stay strings.
    let parsed: toml::Value = value
        .parse::<f64>()
        .map(toml::Value::from)
        .unwrap_or_else(|_| toml::Value::String(value.to_string()));
    sect.insert(key.to_string(), parsed);
    Ok(doc.to_string())
}

// ---------------------------------------------------------------------------
// validate
// ---------------------------------------------------------------------------

struct SuiteOutcome {
    name: &'static str,
    failures: Vec<String>,
}

/// Run the verification suites (`oracle`, `poisson`, `transport`,
/// `monitor`, `calibration`), or only the named one. Writes
/// `calibration.csv` into the output root when calibration runs.
pub fn cmd_validate(suite: Option<&str>) -> Result<i32> {
    let all = ["oracle", "poisson", "transport", "monitor", "calibration"];
    if let Some(name) = suite {
        if !all.contains(&name) {
            return Err(Error::Config(format!(
                "unknown suite `{name}` (expected one of {})",
                all.join(", ")
            )));
        }
    }
    let wants = |name: &str| suite.is_none() || suite == Some(name);
    let mut outcomes = Vec::new();

    if wants("oracle") {
        outcomes.push(run_suite("oracle", suite_oracle));
    }
    if wants("poisson") {
        outcomes.push(run_suite("poisson", suite_poisson));
    }
    if wants("transport") {
        outcomes.push(run_suite("transport", suite_transport));
    }
    if wants("monitor") {
        outcomes.push(run_suite("monitor", suite_monitor));
    }
    if wants("calibration") {
        outcomes.push(run_suite("calibration", suite_calibration));
    }

    let mut failed = false;
    for o in &outcomes {
        if o.failures.is_empty() {
            println!("suite {:<12} PASS", o.name);
        } else {
            failed = true;
            println!("suite {:<12} FAIL", o.name);
            for f in &o.failures {
                println!("  - {f}");
            }
        }
    }
    Ok(if failed { EXIT_MONITOR } else { EXIT_OK })
}

fn run_suite(name: &'static str, f: fn(&mut Vec<String>) -> Result<()>) -> SuiteOutcome {
    let mut failures = Vec::new();
    if let Err(e) = f(&mut failures) {
        failures.push(format!("suite aborted: {e}"));
    }
    SuiteOutcome { name, failures }
}

fn check(failures: &mut Vec<String>, ok: bool, what: &str) {
    if !ok {
        failures.push(what.to_string());
    }
}

fn interval_grid(n: usize, coupling: Coupling) -> Result<Grid> {
    build_grid(DomainSpec::interval(0.0, 1.0, coupling)?, n)
}

/// Small random steps must match the brute-force minimizer.
fn suite_oracle(failures: &mut Vec<String>) -> Result<()> {
    use rand::SeedableRng;
    let grid = interval_grid(6, Coupling::Dirichlet)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(41);
    for case in 0..4 {
        let g = crate::fixtures::random_positive(&grid, &mut rng)?;
        let chi = if case % 2 == 0 { 0.0 } else { 1.0 };
        let mut cfg = JkoConfig::new(chi, 0.05)?;
        cfg.method = StepMethod::DirectEulerian;
        let nl = Nonlinearity::Entropy;
        let (rho, _) = crate::jko::jko_step(&g, &cfg, &nl)?;
        let obj = crate::jko::step_objective(&rho, &g, &cfg, &nl)?;
        let (_, oracle_obj) = crate::reference::brute_force_jko(&g, &cfg, &nl)?;
        let rel = (obj - oracle_obj).abs() / oracle_obj.abs().max(1.0);
        check(
            failures,
            rel < 1e-6,
            &format!("case {case}: objective gap {rel:.3e} vs oracle"),
        );
    }
    Ok(())
}

/// Second-order convergence on a manufactured Dirichlet solution.
fn suite_poisson(failures: &mut Vec<String>) -> Result<()> {
    let mut errors = Vec::new();
    for n in [32usize, 64, 128] {
        let grid = interval_grid(n, Coupling::Dirichlet)?;
        // -u'' = pi^2 sin(pi x) with u = sin(pi x)
        let rho = DensityField::from_fn(grid.clone(), |x| {
            std::f64::consts::PI.powi(2) * (std::f64::consts::PI * x[0]).sin()
        })?;
        let sol = solve_potential(&rho)?;
        let err = (0..n)
            .map(|i| {
                let x = grid.axis_center(0, i);
                (sol.u.values[i] - (std::f64::consts::PI * x).sin()).abs()
            })
            .fold(0.0, f64::max);
        errors.push(err);
    }
    let order = (errors[0] / errors[2]).log2() / 2.0;
    check(
        failures,
        order >= 1.9,
        &format!("observed order {order:.2} < 1.9 (errors {errors:?})"),
    );
    Ok(())
}

/// Rigid translations have exact closed-form cost.
fn suite_transport(failures: &mut Vec<String>) -> Result<()> {
    let grid = interval_grid(64, Coupling::Dirichlet)?;
    for (block, shift) in [(8usize, 16usize), (6, 30), (10, 40)] {
        let (a, b, d2) = crate::fixtures::rigid_pair(&grid, block, shift)?;
        let res = crate::transport::w2_quantile_1d(&a, &b)?;
        check(
            failures,
            (res.w2_squared - d2).abs() < 1e-10,
            &format!("rigid block {block}/{shift}: W2^2 {} vs {d2}", res.w2_squared),
        );
    }
    Ok(())
}

/// A calm chi=0 run passes every monitor with nonincreasing peak.
fn suite_monitor(failures: &mut Vec<String>) -> Result<()> {
    let grid = interval_grid(40, Coupling::Dirichlet)?;
    let rho0 = crate::fixtures::bump_with_linf(&grid, 2.0, 0.15)?;
    let mut cfg = JkoConfig::new(0.0, 1e-3)?;
    cfg.t0 = 0.01;
    cfg.eps0 = 0.05;
    let traj = run_flow(&rho0, &cfg, &Nonlinearity::Entropy)?;
    check(
        failures,
        traj.status == RunStatus::Completed,
        &format!("run status {:?}", traj.status),
    );
    let mut prev = f64::INFINITY;
    for r in &traj.reports {
        check(failures, r.monitor_pass, "monitor failed on heat flow");
        check(
            failures,
            r.linf <= prev + 1e-12,
            "peak grew under pure diffusion",
        );
        prev = r.linf;
    }
    Ok(())
}

/// One row of the calibration sweep.
#[derive(Debug, Clone)]
pub struct CalibrationRow {
    /// The dimensionless step size `tau * chi * linf(g)`.
    pub tau_chi_linf: f64,
    pub passes: usize,
    pub total: usize,
}

impl CalibrationRow {
    pub fn pass_rate(&self) -> f64 {
        self.passes as f64 / self.total as f64
    }
}

/// Sweep the dimensionless step size and report, per value, how often the
/// per-step estimate at `lambda = 1.1` holds across a fixture family. The
/// empirical threshold is the largest swept value with a perfect pass rate.
pub fn calibration_table() -> Result<Vec<CalibrationRow>> {
    let lambda = 1.1;
    let grid = interval_grid(50, Coupling::Dirichlet)?;
    let peaks = [1.5, 2.0, 3.0];
    let widths = [0.08, 0.12];
    let chi = 1.0;
    let sweep = [0.002, 0.005, 0.01, 0.02, 0.05, 0.1, 0.2, 0.4];
    let mut rows = Vec::new();
    for &s in &sweep {
        let mut passes = 0;
        let mut total = 0;
        for &peak in &peaks {
            for &width in &widths {
                let g = crate::fixtures::bump_with_linf(&grid, peak, width)?;
                let mut cfg = JkoConfig::new(chi, s / (chi * peak))?;
                cfg.lambda_monitor = lambda;
                let nl = Nonlinearity::Entropy;
                total += 1;
                match crate::jko::jko_step(&g, &cfg, &nl) {
                    Ok((_, report)) => {
                        if report.monitor_pass {
                            passes += 1;
                        }
                    }
                    Err(_) => {}
                }
            }
        }
        rows.push(CalibrationRow {
            tau_chi_linf: s,
            passes,
            total,
        });
    }
    Ok(rows)
}

/// Largest swept dimensionless step with a perfect pass rate.
pub fn empirical_c0(rows: &[CalibrationRow]) -> f64 {
    rows.iter()
        .filter(|r| r.passes == r.total)
        .map(|r| r.tau_chi_linf)
        .fold(0.0, f64::max)
}

pub fn calibration_csv(rows: &[CalibrationRow]) -> String {
    let mut out = String::from("tau_chi_linf,passes,total,pass_rate\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", r.tau_chi_linf, r.passes, r.total, r.pass_rate());
    }
    out
}

fn suite_calibration(failures: &mut Vec<String>) -> Result<()> {
    let rows = calibration_table()?;
    check(failures, !rows.is_empty(), "empty calibration table");
    // pass rate must be a nonincreasing trend in the step size
    for w in rows.windows(2) {
        check(
            failures,
            w[1].pass_rate() <= w[0].pass_rate() + 1e-12,
            &format!(
                "pass rate rose from {} to {} between steps {} and {}",
                w[0].pass_rate(),
                w[1].pass_rate(),
                w[0].tau_chi_linf,
                w[1].tau_chi_linf
            ),
        );
    }
    let c0 = empirical_c0(&rows);
    check(failures, c0 > 0.0, "empirical threshold is zero");
    let dir = match std::env::var_os("KSJKO_OUT") {
        Some(root) => PathBuf::from(root),
        None => PathBuf::from("."),
    };
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("calibration.csv"), calibration_csv(&rows))?;
    println!("calibration: empirical threshold = {c0} (table: calibration.csv)");
    Ok(())
}
