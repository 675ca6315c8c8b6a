//! Least-squares calibration of the affine price law `ϖ = Θ - cQ` against demand data.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;
use thiserror::Error;

use crate::csvio::{parse_two_columns, read_two_columns, CsvError};
use crate::error::ModelError;
use crate::model::{Interpolation, PricePath, SupplySchedule, TimeGrid};

/// Wear constant used by the built-in synthetic reference price.
pub const SYNTHETIC_C: f64 = 0.00172;
/// Agent count used for per-agent scaling of aggregate demand by default.
pub const DEFAULT_AGENTS: f64 = 1e6;

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error(transparent)]
    Csv(#[from] CsvError),
    #[error("timestamps must be strictly increasing (row {row})")]
    NonMonotone { row: usize },
    #[error("non-finite value at row {row}")]
    NotFinite { row: usize },
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("agent count must be >= 1, got {0}")]
    Agents(f64),
    #[error("supply has zero variance, so c is not identifiable")]
    Unidentifiable,
    #[error("series lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Per-agent supply `Q = -demand / N` with zero time mean.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandSeries {
    times: Vec<f64>,
    supply: Vec<f64>,
}

/// Where demand samples come from.
pub enum DemandSource<'a> {
    Path(&'a Path),
    Inline(&'a str),
}

fn check_series(times: &[f64], values: &[f64]) -> Result<(), CalibrationError> {
    if times.len() != values.len() {
        return Err(CalibrationError::LengthMismatch(times.len(), values.len()));
    }
    if times.len() < 2 {
        return Err(CalibrationError::TooFewSamples(times.len()));
    }
    for (row, (t, v)) in times.iter().zip(values).enumerate() {
        if !(t.is_finite() && v.is_finite()) {
            return Err(CalibrationError::NotFinite { row: row + 1 });
        }
    }
    if let Some(row) = times.windows(2).position(|w| w[1] <= w[0]) {
        return Err(CalibrationError::NonMonotone { row: row + 2 });
    }
    Ok(())
}

fn trapezoid(times: &[f64], values: &[f64]) -> f64 {
    times
        .windows(2)
        .zip(values.windows(2))
        .map(|(t, v)| 0.5 * (t[1] - t[0]) * (v[0] + v[1]))
        .sum()
}

/// Subtracts the trapezoidal time mean.
pub fn normalize(times: &[f64], values: &[f64]) -> Vec<f64> {
    let span = times[times.len() - 1] - times[0];
    let mean = trapezoid(times, values) / span;
    values.iter().map(|v| v - mean).collect()
}

impl DemandSeries {
    /// From demand samples; `agents` divides aggregate demand into per-agent supply.
    pub fn from_demand(times: Vec<f64>, demand: &[f64], agents: f64) -> Result<Self, CalibrationError> {
        if !(agents.is_finite() && agents >= 1.0) {
            return Err(CalibrationError::Agents(agents));
        }
        check_series(&times, demand)?;
        let raw: Vec<f64> = demand.iter().map(|d| -d / agents).collect();
        let supply = normalize(&times, &raw);
        Ok(Self { times, supply })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn supply(&self) -> &[f64] {
        &self.supply
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Trapezoidal time mean of `Q`.
    pub fn mean(&self) -> f64 {
        trapezoid(&self.times, &self.supply) / (self.times[self.len() - 1] - self.times[0])
    }

    pub fn to_schedule(&self, interpolation: Interpolation) -> Result<SupplySchedule, ModelError> {
        SupplySchedule::new(self.times.clone(), self.supply.clone(), interpolation)
    }
}

/// Reads a `time_hours,value` table of demand and converts it to per-agent supply.
pub fn ingest_demand(source: DemandSource<'_>, agents: f64) -> Result<DemandSeries, CalibrationError> {
    let (times, demand) = match source {
        DemandSource::Path(p) => read_two_columns(p)?,
        DemandSource::Inline(text) => parse_two_columns(text)?,
    };
    DemandSeries::from_demand(times, &demand, agents)
}

/// Reads a reference price table with the same layout.
pub fn read_price_series(path: &Path) -> Result<(Vec<f64>, Vec<f64>), CalibrationError> {
    let (times, values) = read_two_columns(path)?;
    check_series(&times, &values)?;
    Ok((times, values))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationResult {
    pub c: f64,
    #[serde(rename = "Theta")]
    pub theta: f64,
    pub rms: f64,
    /// True when the unconstrained estimate of `c` was negative and was projected to 0.
    pub projected: bool,
    #[serde(skip)]
    pub times: Vec<f64>,
    #[serde(skip)]
    pub supply: Vec<f64>,
    #[serde(skip)]
    pub reference: Vec<f64>,
    #[serde(skip)]
    pub residuals: Vec<f64>,
}

impl CalibrationResult {
    pub fn fitted(&self) -> Vec<f64> {
        self.supply.iter().map(|q| self.theta - self.c * q).collect()
    }

    /// OLS standard errors `(se_c, se_Θ)` for noise level `sigma`; the residual
    /// estimate `RSS/(n - 2)` is used when `sigma` is `None`.
    pub fn standard_errors(&self, sigma: Option<f64>) -> (f64, f64) {
        let n = self.supply.len() as f64;
        let s = sigma.unwrap_or_else(|| {
            (self.residuals.iter().map(|r| r * r).sum::<f64>() / (n - 2.0).max(1.0)).sqrt()
        });
        let mean = self.supply.iter().sum::<f64>() / n;
        let sxx: f64 = self.supply.iter().map(|q| (q - mean).powi(2)).sum();
        (s / sxx.sqrt(), s * (1.0 / n + mean * mean / sxx).sqrt())
    }
}

/// Ordinary least squares for `ϑ ≈ Θ - cQ` on shared nodes, with `c ≥ 0` enforced by projection.
pub fn calibrate(times: &[f64], supply: &[f64], reference: &[f64]) -> Result<CalibrationResult, CalibrationError> {
    if supply.len() != reference.len() {
        return Err(CalibrationError::LengthMismatch(supply.len(), reference.len()));
    }
    check_series(times, supply)?;
    check_series(times, reference)?;
    let n = supply.len() as f64;
    let mq = supply.iter().sum::<f64>() / n;
    let mp = reference.iter().sum::<f64>() / n;
    let sxx: f64 = supply.iter().map(|q| (q - mq) * (q - mq)).sum();
    let sxy: f64 = supply.iter().zip(reference).map(|(q, p)| (q - mq) * (p - mp)).sum();
    if sxx <= f64::EPSILON * supply.iter().map(|q| q * q).sum::<f64>() || sxx == 0.0 {
        return Err(CalibrationError::Unidentifiable);
    }
    let raw_c = -sxy / sxx;
    let (c, projected) = if raw_c < 0.0 { (0.0, true) } else { (raw_c, false) };
    let theta = mp + c * mq;
    let residuals: Vec<f64> = supply
        .iter()
        .zip(reference)
        .map(|(q, p)| theta - c * q - p)
        .collect();
    let rms = (residuals.iter().map(|r| r * r).sum::<f64>() / n).sqrt();
    Ok(CalibrationResult {
        c,
        theta,
        rms,
        projected,
        times: times.to_vec(),
        supply: supply.to_vec(),
        reference: reference.to_vec(),
        residuals,
    })
}

fn linear_resample(times: &[f64], values: &[f64], at: &[f64]) -> Vec<f64> {
    at.iter()
        .map(|&t| {
            let j = times.partition_point(|&s| s <= t).clamp(1, times.len() - 1);
            let (t0, t1) = (times[j - 1], times[j]);
            let s = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
            values[j - 1] * (1.0 - s) + values[j] * s
        })
        .collect()
}

/// Calibrates against a reference series on its own time nodes; the shorter series
/// is linearly interpolated onto the nodes of the longer one.
pub fn calibrate_series(
    demand: &DemandSeries,
    ref_times: &[f64],
    ref_values: &[f64],
) -> Result<CalibrationResult, CalibrationError> {
    check_series(ref_times, ref_values)?;
    if demand.times() == ref_times {
        return calibrate(ref_times, demand.supply(), ref_values);
    }
    if demand.len() >= ref_times.len() {
        let resampled = linear_resample(ref_times, ref_values, demand.times());
        calibrate(demand.times(), demand.supply(), &resampled)
    } else {
        let resampled = linear_resample(demand.times(), demand.supply(), ref_times);
        calibrate(ref_times, &resampled, ref_values)
    }
}

/// `ϖ(t) = Θ - cQ(t)` on `time`.
pub fn price_forecast(result: &CalibrationResult, supply: &SupplySchedule, time: TimeGrid) -> Result<PricePath, ModelError> {
    PricePath::from_fn(time, |t| result.theta - result.c * supply.value(t))
}

/// `Θ* - c*Q` plus independent Gaussian noise of standard deviation `sigma`.
pub fn synthetic_reference<R: Rng>(
    supply: &[f64],
    c_star: f64,
    theta_star: f64,
    sigma: f64,
    rng: &mut R,
) -> Vec<f64> {
    let clean = supply.iter().map(|q| theta_star - c_star * q);
    if sigma > 0.0 {
        let noise = Normal::new(0.0, sigma).expect("sigma is positive and finite");
        clean.map(|p| p + noise.sample(rng)).collect()
    } else {
        clean.collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_demand_normalizes_away() {
        let d = ingest_demand(DemandSource::Inline("time_hours,value\n0,10\n24,10\n"), 10.0).unwrap();
        assert_eq!(d.supply(), &[0.0, 0.0]);
    }

    #[test]
    fn sinusoid_demand() {
        let times: Vec<f64> = (0..=48).map(|k| k as f64 * 0.5).collect();
        let demand: Vec<f64> = times.iter().map(|t| 5.0 * (std::f64::consts::PI * t / 12.0).sin()).collect();
        let d = DemandSeries::from_demand(times.clone(), &demand, 5.0).unwrap();
        assert!(d.mean().abs() < 1e-12);
        for (q, t) in d.supply().iter().zip(&times) {
            assert!((q + (std::f64::consts::PI * t / 12.0).sin()).abs() < 1e-12);
        }
    }

    #[test]
    fn per_agent_scaling() {
        let text = "time_hours;value\n0;3e7\n12;4e7\n24;3e7\n";
        let d = ingest_demand(DemandSource::Inline(text), DEFAULT_AGENTS).unwrap();
        // raw supply -30, -40, -30 with mean -35
        assert!((d.supply()[0] - 5.0).abs() < 1e-12);
        assert!((d.supply()[1] + 5.0).abs() < 1e-12);
    }

    #[test]
    fn ingest_errors() {
        assert!(matches!(
            ingest_demand(DemandSource::Inline("time_hours,value\n0,1\n0,2\n"), 1.0),
            Err(CalibrationError::NonMonotone { row: 2 })
        ));
        assert!(matches!(
            ingest_demand(DemandSource::Inline("time_hours,value\n0,1\n1,NaN\n"), 1.0),
            Err(CalibrationError::NotFinite { row: 2 })
        ));
        assert!(ingest_demand(DemandSource::Inline("time_hours,value\n"), 1.0).is_err());
        assert!(matches!(
            ingest_demand(DemandSource::Inline("time_hours,value\n0,1\n1,2\n"), 0.5),
            Err(CalibrationError::Agents(_))
        ));
    }

    #[test]
    fn noiseless_recovery() {
        let times: Vec<f64> = (0..=96).map(|k| k as f64 * 0.25).collect();
        let q: Vec<f64> = times.iter().map(|t| (t * 0.3).cos() + 0.2 * (t * 0.9).sin()).collect();
        let mut rng = rand::rng();
        let p = synthetic_reference(&q, SYNTHETIC_C, 42.0, 0.0, &mut rng);
        let fit = calibrate(&times, &q, &p).unwrap();
        assert!(((fit.c - SYNTHETIC_C) / SYNTHETIC_C).abs() < 1e-12);
        assert!(((fit.theta - 42.0) / 42.0).abs() < 1e-12);
        assert!(fit.rms < 1e-12);
    }

    #[test]
    fn unidentifiable_and_projection() {
        let times = vec![0.0, 1.0, 2.0];
        assert!(matches!(
            calibrate(&times, &[1.0, 1.0, 1.0], &[0.0, 1.0, 2.0]),
            Err(CalibrationError::Unidentifiable)
        ));
        let fit = calibrate(&times, &[-1.0, 0.0, 1.0], &[-1.0, 0.0, 1.0]).unwrap();
        assert!(fit.projected);
        assert_eq!(fit.c, 0.0);
        assert_eq!(fit.theta, 0.0);
    }

    #[test]
    fn resampling_onto_longer_grid() {
        let demand_times: Vec<f64> = (0..=48).map(|k| k as f64 * 0.5).collect();
        let demand: Vec<f64> = demand_times.iter().map(|t| 2.0 * t - 24.0).collect();
        let d = DemandSeries::from_demand(demand_times, &demand, 1.0).unwrap();
        // hourly reference of an exact affine law, linear in t so interpolation is exact
        let ref_times: Vec<f64> = (0..=24).map(|k| k as f64).collect();
        let refs: Vec<f64> = ref_times.iter().map(|t| 3.0 - 0.5 * (24.0 - 2.0 * t)).collect();
        let fit = calibrate_series(&d, &ref_times, &refs).unwrap();
        assert!((fit.c - 0.5).abs() < 1e-12);
        assert!((fit.theta - 3.0).abs() < 1e-12);
        assert_eq!(fit.supply.len(), 49);
    }

    #[test]
    fn forecast_is_affine() {
        let fit = CalibrationResult {
            c: 0.5,
            theta: 2.0,
            rms: 0.0,
            projected: false,
            times: vec![],
            supply: vec![],
            reference: vec![],
            residuals: vec![],
        };
        let time = TimeGrid::new(24.0, 48).unwrap();
        let flat = price_forecast(&fit, &SupplySchedule::constant(0.0, 24.0).unwrap(), time).unwrap();
        assert!(flat.values().iter().all(|&p| p == 2.0));
        let q = SupplySchedule::from_fn(|t| t.sin(), 24.0, 96, Interpolation::Cubic).unwrap();
        let a = price_forecast(&fit, &q, time).unwrap();
        let b = price_forecast(&fit, &q.scaled(2.0), time).unwrap();
        assert!((b.peak_to_peak() - 2.0 * a.peak_to_peak()).abs() < 1e-12);
    }
}
