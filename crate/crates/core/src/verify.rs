//! Invariant suite run by `price-mfg verify`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::calibration::{calibrate, synthetic_reference, SYNTHETIC_C};
use crate::equilibrium::{solve_equilibrium, EquilibriumError, EquilibriumSolution, FixedPointConfig};
use crate::fp::{solve_fp, DriftField, MASS_TOL};
use crate::lq::{agent_trajectory, solve_lq_quadratic_terminal};
use crate::model::{
    InitialConfig, InlineSamples, Interpolation, Model, ModelConfig, Potential, PotentialConfig,
    SupplyConfig, TerminalConfig, TerminalCost,
};
use crate::monotonicity::{run_trials, TrialSetup, GAP_TOL};

/// Sup price error allowed between the equilibrium solver and the closed form.
pub const LQ_PRICE_TOL: f64 = 1e-2;
pub const ENERGY_TOL: f64 = 1e-8;
pub const CALIBRATION_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyOptions {
    pub trials: usize,
    pub seed: u64,
    pub fixed_point: FixedPointConfig,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            trials: 1000,
            seed: 0,
            fixed_point: FixedPointConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    /// Measured quantity; `null` in JSON when the check could not run.
    pub value: Option<f64>,
    pub threshold: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
    pub all_passed: bool,
}

/// Small linear-quadratic model used when no configuration is given.
pub fn default_verify_config() -> ModelConfig {
    let horizon = 2.0;
    let n_t = 100;
    let times: Vec<f64> = (0..=n_t).map(|k| horizon * k as f64 / n_t as f64).collect();
    let values = times.iter().map(|t| 0.5 * (std::f64::consts::PI * t).sin()).collect();
    ModelConfig {
        horizon,
        n_t,
        x_min: -3.0,
        x_max: 3.0,
        n_x: 1201,
        c: 1.0,
        epsilon: 0.0,
        potential: PotentialConfig::Zero,
        terminal: TerminalConfig::Quadratic { gamma: 1.0, zeta: 0.0 },
        initial: InitialConfig::Gaussian { mean: 0.0, std: 0.4 },
        supply: SupplyConfig::Inline {
            inline: InlineSamples { times, values },
            interpolation: Interpolation::Linear,
        },
    }
}

fn check(name: &'static str, value: f64, threshold: f64, passed: bool, detail: String) -> Check {
    Check {
        name,
        passed,
        value: Some(value),
        threshold,
        detail,
    }
}

fn failed(name: &'static str, threshold: f64, detail: String) -> Check {
    Check {
        name,
        passed: false,
        value: None,
        threshold,
        detail,
    }
}

fn balance_check(result: &Result<EquilibriumSolution, EquilibriumError>, tol: f64) -> Check {
    const NAME: &str = "equilibrium_balance";
    match result {
        Ok(s) => {
            let r = s.max_balance_residual();
            check(NAME, r, tol, r <= tol, format!("converged in {} iterations", s.iterations))
        }
        Err(EquilibriumError::Inconsistent { residual, .. }) => {
            check(NAME, *residual, tol, false, "price converged, balance violated".into())
        }
        Err(e) => failed(NAME, tol, e.to_string()),
    }
}

fn fp_check(model: &Model, solution: Option<&EquilibriumSolution>, options: &VerifyOptions) -> Check {
    const NAME: &str = "fp_mass_positivity";
    let eps = model.hamiltonian.epsilon();
    let floor = |diffusion: f64| if diffusion == 0.0 { 0.0 } else { -1e-14 };
    let mut worst_mass = 0.0_f64;
    let mut worst_min = f64::INFINITY;
    let mut positive = true;
    let mut runs = 0;
    if let Some(s) = solution {
        worst_mass = s.m.max_mass_error();
        worst_min = s.m.min();
        positive = worst_min >= floor(eps);
        runs += 1;
    }
    for velocity in [-1.0, 0.5, 2.0] {
        for diffusion in [0.0, eps, 0.05] {
            let drift = DriftField::constant(model.space, model.time, velocity);
            match solve_fp(&drift, &model.initial, diffusion, &options.fixed_point.fp) {
                Ok(m) => {
                    worst_mass = worst_mass.max(m.max_mass_error());
                    worst_min = worst_min.min(m.min());
                    positive &= m.min() >= floor(diffusion);
                    runs += 1;
                }
                Err(e) => return failed(NAME, MASS_TOL, e.to_string()),
            }
        }
    }
    check(
        NAME,
        worst_mass,
        MASS_TOL,
        worst_mass <= MASS_TOL && positive,
        format!("{runs} solves, min density {worst_min:e}"),
    )
}

fn monotonicity_check(model: &Model, options: &VerifyOptions) -> Check {
    const NAME: &str = "monotonicity";
    let report = TrialSetup::standard(model.hamiltonian.clone())
        .map_err(|e| e.to_string())
        .and_then(|setup| run_trials(&setup, options.trials, options.seed).map_err(|e| e.to_string()));
    match report {
        Ok(r) => check(
            NAME,
            r.min_gap,
            -GAP_TOL,
            r.violations == 0 && r.min_gap >= -GAP_TOL,
            format!("{} trials, {} violations", r.trials, r.violations),
        ),
        Err(e) => failed(NAME, -GAP_TOL, e),
    }
}

fn lq_checks(model: &Model, solution: Option<&EquilibriumSolution>) -> Vec<Check> {
    let TerminalCost::Quadratic { gamma, zeta } = model.terminal else {
        return Vec::new();
    };
    if !matches!(model.hamiltonian.potential(), Potential::Zero) {
        return Vec::new();
    }
    let c = model.hamiltonian.c();
    let xbar = model.initial.mean();
    let mut checks = Vec::new();
    match solve_lq_quadratic_terminal(c, gamma, zeta, xbar, &model.supply, model.time) {
        Ok(lq) => match solution {
            Some(s) => {
                let err = s.varpi.sup_distance(&lq.price);
                checks.push(check(
                    "lq_price_cross_check",
                    err,
                    LQ_PRICE_TOL,
                    err <= LQ_PRICE_TOL,
                    format!("closed-form Theta {:.6e}", lq.theta),
                ));
            }
            None => checks.push(failed("lq_price_cross_check", LQ_PRICE_TOL, "no equilibrium".into())),
        },
        Err(e) => checks.push(failed("lq_price_cross_check", LQ_PRICE_TOL, e.to_string())),
    }
    match agent_trajectory(c, gamma, &model.supply, xbar, xbar, &model.time) {
        Ok((_, means)) => {
            let err = model
                .time
                .nodes()
                .iter()
                .zip(&means)
                .map(|(&t, m)| (m - xbar - model.supply.integral(0.0, t)).abs())
                .fold(0.0, f64::max);
            checks.push(check("energy_identity", err, ENERGY_TOL, err <= ENERGY_TOL, "RK4 mean path".into()));
        }
        Err(e) => checks.push(failed("energy_identity", ENERGY_TOL, e.to_string())),
    }
    checks
}

fn calibration_check(seed: u64) -> Check {
    const NAME: &str = "calibration_recovery";
    let times: Vec<f64> = (0..=96).map(|k| 0.25 * k as f64).collect();
    let supply: Vec<f64> = times
        .iter()
        .map(|t| (std::f64::consts::TAU * t / 24.0).cos() + 0.3 * (std::f64::consts::TAU * t / 12.0).sin())
        .collect();
    let theta_star = 0.05;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let reference = synthetic_reference(&supply, SYNTHETIC_C, theta_star, 0.0, &mut rng);
    match calibrate(&times, &supply, &reference) {
        Ok(r) => {
            let err = ((r.c - SYNTHETIC_C) / SYNTHETIC_C)
                .abs()
                .max(((r.theta - theta_star) / theta_star).abs());
            check(NAME, err, CALIBRATION_TOL, err <= CALIBRATION_TOL, "noiseless synthetic reference".into())
        }
        Err(e) => failed(NAME, CALIBRATION_TOL, e.to_string()),
    }
}

/// Runs every check on `model`; failures are recorded, never propagated.
pub fn run_verify(model: &Model, options: &VerifyOptions) -> VerifyReport {
    let result = solve_equilibrium(model, &options.fixed_point);
    let solution = result.as_ref().ok();
    let mut checks = vec![
        balance_check(&result, options.fixed_point.tol_balance),
        fp_check(model, solution, options),
        monotonicity_check(model, options),
    ];
    checks.extend(lq_checks(model, solution));
    checks.push(calibration_check(options.seed));
    let all_passed = checks.iter().all(|c| c.passed);
    VerifyReport { checks, all_passed }
}
