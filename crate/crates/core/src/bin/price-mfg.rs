use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use price_mfg::calibration::{
    calibrate_series, ingest_demand, read_price_series, synthetic_reference, CalibrationError,
    DemandSource, DEFAULT_AGENTS, SYNTHETIC_C,
};
use price_mfg::equilibrium::{
    energy_estimate_diagnostic, second_order_diagnostic, solve_equilibrium, EquilibriumError,
    FixedPointConfig,
};
use price_mfg::fp::FpError;
use price_mfg::hjb::{lipschitz_profile, HjbError, HjbScheme};
use price_mfg::lq::{
    solve_lq_quadratic_terminal, solve_potential_model, Forcing, LqError, PotentialParams,
    VolterraMethod,
};
use price_mfg::model::{ConfigError, LqConfig, ModelConfig, PotentialRunConfig, TimeGrid};
use price_mfg::report::{
    write_columns, write_convergence, write_density_field, write_json, write_price,
    write_value_field, ReportError, RunManifest, Tolerances,
};
use price_mfg::verify::{default_verify_config, run_verify, VerifyOptions};
use price_mfg::ModelError;

const THREADS_VAR: &str = "PRICE_MFG_THREADS";
/// Intercept of the synthetic reference price used when none is supplied.
const SYNTHETIC_THETA: f64 = 0.05;

#[derive(Debug, Parser)]
#[command(name = "price-mfg", version, about = "Electricity price formation with storage agents")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// JSON configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, created when missing.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Sup-norm tolerance on the price change between iterations.
    #[arg(long, global = true)]
    tol_price: Option<f64>,
    /// Tolerance on the balance residual of a converged equilibrium.
    #[arg(long, global = true)]
    tol_balance: Option<f64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Equilibrium price, value function and density for a model configuration.
    Solve {
        #[arg(long, value_enum, default_value_t = Scheme::Upwind)]
        scheme: Scheme,
        /// Also write the value function and the density.
        #[arg(long)]
        dump_fields: bool,
        #[arg(long)]
        max_iters: Option<usize>,
        #[arg(long)]
        damping: Option<f64>,
    },
    /// Closed-form model without potential.
    Lq {
        /// Initial states of the sampled trajectories.
        #[arg(long, value_delimiter = ',', default_values_t = [-1.0, 0.0, 1.0])]
        x0: Vec<f64>,
    },
    /// Model with a quadratic potential, solved through its Volterra equation.
    Potential {
        #[arg(long, value_delimiter = ',', default_values_t = [-1.0, 0.0, 1.0])]
        x0: Vec<f64>,
    },
    /// Least-squares fit of `price = Theta - c Q` against a reference price.
    Calibrate {
        /// Demand CSV with columns `time_hours,value`.
        #[arg(long)]
        demand: PathBuf,
        /// Reference price CSV; a synthetic reference is used when omitted.
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_AGENTS)]
        agents: f64,
        /// Noise level added to the synthetic reference.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
    },
    /// Invariant suite; exits with status 5 when any check fails.
    Verify {
        #[arg(long, default_value_t = 1000)]
        trials: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Scheme {
    Upwind,
    SemiLagrangian,
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    NotConverged(String),
    #[error("{0}")]
    BlowUp(String),
    #[error("{0}")]
    Violation(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::NotConverged(_) => 3,
            CliError::BlowUp(_) => 4,
            CliError::Violation(_) => 5,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<CalibrationError> for CliError {
    fn from(e: CalibrationError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<EquilibriumError> for CliError {
    fn from(e: EquilibriumError) -> Self {
        let msg = e.to_string();
        match e {
            _ if e.is_blow_up() => CliError::BlowUp(msg),
            EquilibriumError::Hjb(HjbError::Cfl { .. })
            | EquilibriumError::Fp(FpError::Cfl { .. })
            | EquilibriumError::DegenerateMass { .. } => CliError::BlowUp(msg),
            EquilibriumError::Config(_)
            | EquilibriumError::Model(_)
            | EquilibriumError::Hjb(HjbError::Config(_) | HjbError::Model(_))
            | EquilibriumError::Fp(FpError::Config(_) | FpError::Model(_)) => CliError::Config(msg),
            _ => CliError::NotConverged(msg),
        }
    }
}

impl From<LqError> for CliError {
    fn from(e: LqError) -> Self {
        let msg = e.to_string();
        match e {
            LqError::Model(_) | LqError::NonConvex | LqError::StepTooLarge { .. } => CliError::Config(msg),
            LqError::VolterraUnstable { .. } => CliError::BlowUp(msg),
            _ => CliError::NotConverged(msg),
        }
    }
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("{THREADS_VAR} must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(format!("cannot size thread pool: {e}")))
}

fn require_config(global: &GlobalArgs) -> Result<&Path, CliError> {
    global
        .config
        .as_deref()
        .ok_or_else(|| CliError::Config("this command needs --config".into()))
}

fn base_dir(path: &Path) -> Option<&Path> {
    path.parent().filter(|p| !p.as_os_str().is_empty())
}

fn fixed_point_config(global: &GlobalArgs) -> FixedPointConfig {
    let mut config = FixedPointConfig::default();
    if let Some(t) = global.tol_price {
        config.tol_price = t;
    }
    if let Some(t) = global.tol_balance {
        config.tol_balance = t;
    }
    config
}

fn prepare_output(global: &GlobalArgs, command: &str) -> Result<RunManifest, CliError> {
    std::fs::create_dir_all(&global.out)
        .map_err(|e| CliError::Config(format!("cannot create output directory {}: {e}", global.out.display())))?;
    let defaults = fixed_point_config(global);
    let mut manifest = RunManifest::new(
        command,
        global.config.clone(),
        global.out.clone(),
        global.seed,
        Tolerances {
            price: defaults.tol_price,
            balance: defaults.tol_balance,
        },
    );
    // written up front so that an unwritable directory fails before any work
    manifest.write()?;
    manifest.finished_unix = None;
    Ok(manifest)
}

#[derive(Serialize)]
struct SolveSummary {
    iterations: usize,
    final_price_change: f64,
    max_balance_residual: f64,
    price_lipschitz: f64,
    value_lipschitz: f64,
    energy_estimate: f64,
    second_order_estimate: f64,
    max_mass_error: f64,
    min_density: f64,
    assumption_failures: Vec<String>,
}

fn cmd_solve(
    global: &GlobalArgs,
    manifest: &mut RunManifest,
    scheme: Scheme,
    dump_fields: bool,
    max_iters: Option<usize>,
    damping: Option<f64>,
) -> Result<(), CliError> {
    let path = require_config(global)?;
    let model = ModelConfig::from_file(path)?.build(base_dir(path))?;
    let mut config = fixed_point_config(global);
    config.hjb.scheme = match scheme {
        Scheme::Upwind => HjbScheme::UpwindGodunov,
        Scheme::SemiLagrangian => HjbScheme::SemiLagrangian,
    };
    if let Some(n) = max_iters {
        config.max_iters = n;
    }
    if let Some(d) = damping {
        config.damping = d;
    }
    let assumption_failures: Vec<String> = model
        .assumptions()
        .failures()
        .map(|f| format!("{:?}: {}", f.assumption, f.detail))
        .collect();
    for f in &assumption_failures {
        eprintln!("warning: assumption {f}");
    }
    let out = &global.out;
    let solution = match solve_equilibrium(&model, &config) {
        Ok(s) => s,
        Err(e) => {
            if let EquilibriumError::NotConverged { history, .. } = &e {
                write_convergence(&out.join("convergence.csv"), history)?;
                manifest.outputs.push("convergence.csv".into());
            }
            return Err(e.into());
        }
    };
    write_price(&out.join("price.csv"), &solution.varpi, Some(&solution.balance_residual))?;
    write_convergence(&out.join("convergence.csv"), &solution.history)?;
    manifest.outputs.extend(["price.csv".into(), "convergence.csv".into()]);
    if dump_fields {
        write_value_field(&out.join("u.csv"), &solution.u)?;
        write_density_field(&out.join("m.csv"), &solution.m)?;
        manifest.outputs.extend(["u.csv".into(), "m.csv".into()]);
    }
    let spec = &model.hamiltonian;
    let summary = SolveSummary {
        iterations: solution.iterations,
        final_price_change: solution.history.last().map_or(0.0, |r| r.price_change),
        max_balance_residual: solution.max_balance_residual(),
        price_lipschitz: solution.varpi.lipschitz_estimate(),
        value_lipschitz: lipschitz_profile(&solution.u).into_iter().fold(0.0, f64::max),
        energy_estimate: energy_estimate_diagnostic(spec, &solution),
        second_order_estimate: second_order_diagnostic(spec, &solution.u, &solution.m),
        max_mass_error: solution.m.max_mass_error(),
        min_density: solution.m.min(),
        assumption_failures,
    };
    write_json(&out.join("summary.json"), &summary)?;
    manifest.outputs.push("summary.json".into());
    println!(
        "converged in {} iterations, balance residual {:.3e}",
        summary.iterations, summary.max_balance_residual
    );
    Ok(())
}

fn write_trajectories(path: &Path, time: &TimeGrid, x0: &[f64], paths: &[Vec<f64>]) -> Result<(), ReportError> {
    let names: Vec<String> = x0.iter().map(|x| format!("x0={x}")).collect();
    let mut headers = vec!["t"];
    headers.extend(names.iter().map(String::as_str));
    let t = time.nodes();
    let mut columns: Vec<&[f64]> = vec![&t];
    columns.extend(paths.iter().map(Vec::as_slice));
    write_columns(path, &headers, &columns)
}

#[derive(Serialize)]
struct LqSummary {
    #[serde(rename = "Theta")]
    theta: f64,
    c: f64,
    gamma: f64,
    zeta: f64,
    xbar: f64,
    price_peak_to_peak: f64,
    price_lipschitz: f64,
}

fn cmd_lq(global: &GlobalArgs, manifest: &mut RunManifest, x0: &[f64]) -> Result<(), CliError> {
    let path = require_config(global)?;
    let cfg = LqConfig::from_file(path)?;
    let supply = cfg.supply.build(base_dir(path))?;
    let time = TimeGrid::new(cfg.horizon, cfg.n_t)?;
    let lq = solve_lq_quadratic_terminal(cfg.c, cfg.gamma, cfg.zeta, cfg.xbar, &supply, time)?;
    let out = &global.out;
    let q: Vec<f64> = time.nodes().iter().map(|&t| supply.value(t)).collect();
    let pi = vec![-lq.theta; time.len()];
    write_columns(
        &out.join("lq_price.csv"),
        &["t", "price", "supply", "Xi", "Pi"],
        &[&time.nodes(), lq.price.values(), &q, &lq.mean_path, &pi],
    )?;
    let paths = x0
        .iter()
        .map(|&x| lq.trajectory(x, &time))
        .collect::<Result<Vec<_>, _>>()?;
    write_trajectories(&out.join("trajectories.csv"), &time, x0, &paths)?;
    let summary = LqSummary {
        theta: lq.theta,
        c: cfg.c,
        gamma: cfg.gamma,
        zeta: cfg.zeta,
        xbar: cfg.xbar,
        price_peak_to_peak: lq.price.peak_to_peak(),
        price_lipschitz: lq.price.lipschitz_estimate(),
    };
    write_json(&out.join("summary.json"), &summary)?;
    manifest
        .outputs
        .extend(["lq_price.csv".into(), "trajectories.csv".into(), "summary.json".into()]);
    println!("Theta = {:.6e}", lq.theta);
    Ok(())
}

#[derive(Serialize)]
struct PotentialSummary {
    method: &'static str,
    #[serde(rename = "Pi0")]
    pi0: f64,
    #[serde(rename = "C1")]
    c1: f64,
    #[serde(rename = "C2")]
    c2: f64,
    omega: f64,
    lambda: f64,
    closure_residual: f64,
    moment_mismatch: f64,
    price_lipschitz: f64,
}

fn cmd_potential(global: &GlobalArgs, manifest: &mut RunManifest, x0: &[f64]) -> Result<(), CliError> {
    let path = require_config(global)?;
    let cfg = PotentialRunConfig::from_file(path)?;
    let supply = cfg.supply.build(base_dir(path))?;
    let time = TimeGrid::new(cfg.horizon, cfg.n_t)?;
    let params = PotentialParams {
        c: cfg.c,
        eta: cfg.eta,
        kappa: cfg.kappa,
        gamma: cfg.gamma,
        zeta: cfg.zeta,
        xbar: cfg.xbar,
    };
    let (method, name) = match &cfg.forcing {
        Some(terms) => (VolterraMethod::Laplace(Forcing::new(terms.clone())), "laplace"),
        None => (VolterraMethod::Trapezoid, "trapezoid"),
    };
    let (state, price) = solve_potential_model(params, &supply, time, &method)?;
    let out = &global.out;
    let nodes = time.nodes();
    let q: Vec<f64> = nodes.iter().map(|&t| supply.value(t)).collect();
    write_columns(
        &out.join("potential.csv"),
        &["t", "price", "supply", "Xi", "Pi"],
        &[&nodes, price.values(), &q, &state.xi, &state.pi],
    )?;
    let paths: Vec<Vec<f64>> = x0.iter().map(|&start| state.trajectory(&price, start)).collect();
    write_trajectories(&out.join("trajectories.csv"), &time, x0, &paths)?;
    let summary = PotentialSummary {
        method: name,
        pi0: state.pi0,
        c1: state.c1,
        c2: state.c2,
        omega: state.omega,
        lambda: state.lambda,
        closure_residual: state.closure_residual,
        moment_mismatch: state.moment_mismatch,
        price_lipschitz: price.lipschitz_estimate(),
    };
    write_json(&out.join("summary.json"), &summary)?;
    manifest
        .outputs
        .extend(["potential.csv".into(), "trajectories.csv".into(), "summary.json".into()]);
    println!("Pi(0) = {:.6e}, omega = {:.6e}", state.pi0, state.omega);
    Ok(())
}

#[derive(Serialize)]
struct CalibrationSummary {
    c: f64,
    #[serde(rename = "Theta")]
    theta: f64,
    rms: f64,
    projected: bool,
    se_c: f64,
    #[serde(rename = "se_Theta")]
    se_theta: f64,
    samples: usize,
    reference: String,
}

fn cmd_calibrate(
    global: &GlobalArgs,
    manifest: &mut RunManifest,
    demand: &Path,
    reference: Option<&Path>,
    agents: f64,
    noise: f64,
) -> Result<(), CliError> {
    if !(noise.is_finite() && noise >= 0.0) {
        return Err(CliError::Config(format!("--noise must be finite and >= 0, got {noise}")));
    }
    let series = ingest_demand(DemandSource::Path(demand), agents)?;
    let (ref_times, ref_values, label) = match reference {
        Some(p) => {
            let (t, v) = read_price_series(p)?;
            (t, v, p.display().to_string())
        }
        None => {
            let note = format!(
                "no reference price given: fitting the synthetic reference Theta - cQ with \
                 c = {SYNTHETIC_C}, Theta = {SYNTHETIC_THETA}, noise sd {noise}"
            );
            eprintln!("note: {note}");
            manifest.notes.push(note);
            let mut rng = ChaCha8Rng::seed_from_u64(global.seed);
            let values = synthetic_reference(series.supply(), SYNTHETIC_C, SYNTHETIC_THETA, noise, &mut rng);
            (series.times().to_vec(), values, "synthetic".to_string())
        }
    };
    let result = calibrate_series(&series, &ref_times, &ref_values)?;
    let out = &global.out;
    write_columns(
        &out.join("calibration.csv"),
        &["t", "Q", "price_fit", "residual"],
        &[&result.times, &result.supply, &result.fitted(), &result.residuals],
    )?;
    let (se_c, se_theta) = result.standard_errors(None);
    let summary = CalibrationSummary {
        c: result.c,
        theta: result.theta,
        rms: result.rms,
        projected: result.projected,
        se_c,
        se_theta,
        samples: result.times.len(),
        reference: label,
    };
    write_json(&out.join("summary.json"), &summary)?;
    manifest.outputs.extend(["calibration.csv".into(), "summary.json".into()]);
    println!("c = {:.6e}, Theta = {:.6e}, rms = {:.3e}", result.c, result.theta, result.rms);
    Ok(())
}

fn cmd_verify(global: &GlobalArgs, manifest: &mut RunManifest, trials: usize) -> Result<(), CliError> {
    let model = match &global.config {
        Some(path) => ModelConfig::from_file(path)?.build(base_dir(path))?,
        None => default_verify_config().build(None)?,
    };
    let options = VerifyOptions {
        trials,
        seed: global.seed,
        fixed_point: fixed_point_config(global),
    };
    let report = run_verify(&model, &options);
    write_json(&global.out.join("verify.json"), &report)?;
    manifest.outputs.push("verify.json".into());
    for c in &report.checks {
        let value = c.value.map_or("n/a".to_string(), |v| format!("{v:.3e}"));
        println!(
            "{} {:<24} value {value:>10} threshold {:.1e}  {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.threshold,
            c.detail
        );
    }
    if report.all_passed {
        Ok(())
    } else {
        let failed: Vec<&str> = report.checks.iter().filter(|c| !c.passed).map(|c| c.name).collect();
        Err(CliError::Violation(format!("failed checks: {}", failed.join(", "))))
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    let global = &cli.global;
    let name = match &cli.command {
        Command::Solve { .. } => "solve",
        Command::Lq { .. } => "lq",
        Command::Potential { .. } => "potential",
        Command::Calibrate { .. } => "calibrate",
        Command::Verify { .. } => "verify",
    };
    let mut manifest = prepare_output(global, name)?;
    let result = match &cli.command {
        Command::Solve {
            scheme,
            dump_fields,
            max_iters,
            damping,
        } => cmd_solve(global, &mut manifest, *scheme, *dump_fields, *max_iters, *damping),
        Command::Lq { x0 } => cmd_lq(global, &mut manifest, x0),
        Command::Potential { x0 } => cmd_potential(global, &mut manifest, x0),
        Command::Calibrate {
            demand,
            reference,
            agents,
            noise,
        } => cmd_calibrate(global, &mut manifest, demand, reference.as_deref(), *agents, *noise),
        Command::Verify { trials } => cmd_verify(global, &mut manifest, *trials),
    };
    if let Err(e) = &result {
        manifest.notes.push(format!("error: {e}"));
    }
    manifest.write()?;
    result
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
