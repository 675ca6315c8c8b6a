use serde::{Deserialize, Serialize};

use crate::error::ModelError;

/// How samples of the production rate are joined between knots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    Linear,
    /// Monotone piecewise-cubic Hermite (Fritsch–Carlson slopes).
    #[default]
    Cubic,
}

/// Energy production rate `Q(t)` per agent, sampled at knots and interpolated.
///
/// Outside the sampled span the first/last value is held constant.
#[derive(Debug, Clone, PartialEq)]
pub struct SupplySchedule {
    times: Vec<f64>,
    values: Vec<f64>,
    slopes: Vec<f64>,
    interpolation: Interpolation,
    cumulative: Vec<f64>,
}

const GAUSS4: [(f64, f64); 4] = [
    (-0.861_136_311_594_052_6, 0.347_854_845_137_453_9),
    (-0.339_981_043_584_856_3, 0.652_145_154_862_546_1),
    (0.339_981_043_584_856_3, 0.652_145_154_862_546_1),
    (0.861_136_311_594_052_6, 0.347_854_845_137_453_9),
];

impl SupplySchedule {
    pub fn new(
        times: Vec<f64>,
        values: Vec<f64>,
        interpolation: Interpolation,
    ) -> Result<Self, ModelError> {
        if times.len() != values.len() {
            return Err(ModelError::Supply("times and values differ in length".into()));
        }
        if times.len() < 2 {
            return Err(ModelError::Supply("need at least two samples".into()));
        }
        if times.iter().chain(&values).any(|v| !v.is_finite()) {
            return Err(ModelError::Supply("non-finite sample".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(ModelError::Supply("times must be strictly increasing".into()));
        }
        let slopes = match interpolation {
            Interpolation::Linear => vec![0.0; times.len()],
            Interpolation::Cubic => pchip_slopes(&times, &values),
        };
        let mut s = Self {
            times,
            values,
            slopes,
            interpolation,
            cumulative: Vec::new(),
        };
        let mut cumulative = vec![0.0; s.times.len()];
        for i in 0..s.times.len() - 1 {
            cumulative[i + 1] = cumulative[i] + s.segment_integral(i, 1.0);
        }
        s.cumulative = cumulative;
        Ok(s)
    }

    /// Samples `f` at `samples + 1` equally spaced knots on `[0, horizon]`.
    pub fn from_fn(
        f: impl Fn(f64) -> f64,
        horizon: f64,
        samples: usize,
        interpolation: Interpolation,
    ) -> Result<Self, ModelError> {
        let samples = samples.max(1);
        let times: Vec<f64> = (0..=samples)
            .map(|k| horizon * k as f64 / samples as f64)
            .collect();
        let values = times.iter().map(|&t| f(t)).collect();
        Self::new(times, values, interpolation)
    }

    pub fn constant(value: f64, horizon: f64) -> Result<Self, ModelError> {
        Self::new(vec![0.0, horizon], vec![value, value], Interpolation::Linear)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn interpolation(&self) -> Interpolation {
        self.interpolation
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// True when the samples span `[0, horizon]`.
    pub fn covers(&self, horizon: f64) -> bool {
        self.start() <= 0.0 && self.end() >= horizon
    }

    fn segment(&self, t: f64) -> Option<(usize, f64)> {
        if t < self.start() || t > self.end() {
            return None;
        }
        let i = match self
            .times
            .binary_search_by(|probe| probe.partial_cmp(&t).unwrap())
        {
            Ok(i) => i.min(self.times.len() - 2),
            Err(i) => i - 1,
        };
        let h = self.times[i + 1] - self.times[i];
        Some((i, (t - self.times[i]) / h))
    }

    pub fn value(&self, t: f64) -> f64 {
        match self.segment(t) {
            None if t < self.start() => self.values[0],
            None => *self.values.last().unwrap(),
            Some((i, s)) => {
                let (y0, y1) = (self.values[i], self.values[i + 1]);
                match self.interpolation {
                    Interpolation::Linear => y0 + (y1 - y0) * s,
                    Interpolation::Cubic => {
                        let h = self.times[i + 1] - self.times[i];
                        let (d0, d1) = (self.slopes[i], self.slopes[i + 1]);
                        let s2 = s * s;
                        let s3 = s2 * s;
                        (2.0 * s3 - 3.0 * s2 + 1.0) * y0
                            + (s3 - 2.0 * s2 + s) * h * d0
                            + (-2.0 * s3 + 3.0 * s2) * y1
                            + (s3 - s2) * h * d1
                    }
                }
            }
        }
    }

    /// `Q̇(t)` from the interpolant (forward difference slope for linear).
    pub fn derivative(&self, t: f64) -> f64 {
        match self.segment(t) {
            None => 0.0,
            Some((i, s)) => {
                let h = self.times[i + 1] - self.times[i];
                let (y0, y1) = (self.values[i], self.values[i + 1]);
                match self.interpolation {
                    Interpolation::Linear => (y1 - y0) / h,
                    Interpolation::Cubic => {
                        let (d0, d1) = (self.slopes[i], self.slopes[i + 1]);
                        let s2 = s * s;
                        ((6.0 * s2 - 6.0 * s) * y0
                            + (3.0 * s2 - 4.0 * s + 1.0) * h * d0
                            + (-6.0 * s2 + 6.0 * s) * y1
                            + (3.0 * s2 - 2.0 * s) * h * d1)
                            / h
                    }
                }
            }
        }
    }

    /// `∫_{t_i}^{t_i + s h} Q` on segment `i`.
    fn segment_integral(&self, i: usize, s: f64) -> f64 {
        let h = self.times[i + 1] - self.times[i];
        let (y0, y1) = (self.values[i], self.values[i + 1]);
        let s2 = s * s;
        let s3 = s2 * s;
        let s4 = s3 * s;
        match self.interpolation {
            Interpolation::Linear => h * (y0 * (s - 0.5 * s2) + y1 * 0.5 * s2),
            Interpolation::Cubic => {
                let (d0, d1) = (self.slopes[i], self.slopes[i + 1]);
                h * ((0.5 * s4 - s3 + s) * y0
                    + (0.25 * s4 - 2.0 * s3 / 3.0 + 0.5 * s2) * h * d0
                    + (-0.5 * s4 + s3) * y1
                    + (0.25 * s4 - s3 / 3.0) * h * d1)
            }
        }
    }

    /// `∫_{start}^{t} Q`, with constant continuation outside the samples.
    pub fn cumulative(&self, t: f64) -> f64 {
        match self.segment(t) {
            Some((i, s)) => self.cumulative[i] + self.segment_integral(i, s),
            None if t < self.start() => -(self.start() - t) * self.values[0],
            None => {
                *self.cumulative.last().unwrap()
                    + (t - self.end()) * self.values.last().unwrap()
            }
        }
    }

    /// `∫_a^b Q`.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        self.cumulative(b) - self.cumulative(a)
    }

    /// `K(t) = ∫_t^T Q(s) ds`.
    pub fn tail(&self, t: f64, horizon: f64) -> f64 {
        self.integral(t, horizon)
    }

    /// `∫_a^b Q²`; exact for the interpolant up to rounding (4-point Gauss per knot span).
    pub fn square_integral(&self, a: f64, b: f64) -> f64 {
        if b < a {
            return -self.square_integral(b, a);
        }
        let mut cuts = vec![a];
        cuts.extend(self.times.iter().copied().filter(|&t| t > a && t < b));
        cuts.push(b);
        cuts.windows(2)
            .map(|w| {
                let (lo, hi) = (w[0], w[1]);
                let half = 0.5 * (hi - lo);
                let mid = 0.5 * (hi + lo);
                GAUSS4
                    .iter()
                    .map(|(node, weight)| weight * self.value(mid + half * node).powi(2))
                    .sum::<f64>()
                    * half
            })
            .sum()
    }

    /// Time average over the sampled span (trapezoid of the interpolant).
    pub fn time_mean(&self) -> f64 {
        self.integral(self.start(), self.end()) / (self.end() - self.start())
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let values = self.values.iter().map(|v| v * factor).collect();
        Self::new(self.times.clone(), values, self.interpolation).expect("scaling keeps validity")
    }
}

/// Fritsch–Carlson shape-preserving slopes (the `scipy` PCHIP rules).
fn pchip_slopes(t: &[f64], y: &[f64]) -> Vec<f64> {
    let n = t.len();
    let h: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).collect();
    let delta: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / h[i]).collect();
    if n == 2 {
        return vec![delta[0], delta[0]];
    }
    let mut d = vec![0.0; n];
    for k in 1..n - 1 {
        let (a, b) = (delta[k - 1], delta[k]);
        if a * b <= 0.0 {
            d[k] = 0.0;
        } else {
            let w1 = 2.0 * h[k] + h[k - 1];
            let w2 = h[k] + 2.0 * h[k - 1];
            d[k] = (w1 + w2) / (w1 / a + w2 / b);
        }
    }
    let end_slope = |h0: f64, h1: f64, m0: f64, m1: f64| {
        let d = ((2.0 * h0 + h1) * m0 - h0 * m1) / (h0 + h1);
        if d.signum() != m0.signum() || m0 == 0.0 {
            0.0
        } else if m0.signum() != m1.signum() && d.abs() > 3.0 * m0.abs() {
            3.0 * m0
        } else {
            d
        }
    };
    d[0] = end_slope(h[0], h[1], delta[0], delta[1]);
    d[n - 1] = end_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn day_profile(t: f64) -> f64 {
        (2.0 * PI * t / 24.0).cos()
    }

    #[test]
    fn rejects_bad_samples() {
        assert!(SupplySchedule::new(vec![0.0], vec![1.0], Interpolation::Linear).is_err());
        assert!(SupplySchedule::new(vec![0.0, 0.0], vec![1.0, 1.0], Interpolation::Linear).is_err());
        assert!(SupplySchedule::new(vec![0.0, 1.0], vec![1.0, f64::NAN], Interpolation::Cubic).is_err());
    }

    #[test]
    fn interpolates_knots_exactly() {
        let s = SupplySchedule::from_fn(day_profile, 24.0, 24, Interpolation::Cubic).unwrap();
        for (t, v) in s.times().iter().zip(s.values()) {
            assert_eq!(s.value(*t), *v);
        }
    }

    #[test]
    fn tail_vanishes_at_horizon_and_is_continuous() {
        let s = SupplySchedule::from_fn(day_profile, 24.0, 48, Interpolation::Cubic).unwrap();
        assert_eq!(s.tail(24.0, 24.0), 0.0);
        let eps = 1e-9;
        for &t in &s.times()[1..s.times().len() - 1] {
            assert!((s.tail(t - eps, 24.0) - s.tail(t + eps, 24.0)).abs() < 1e-8);
        }
    }

    #[test]
    fn tail_derivative_is_minus_q() {
        let s = SupplySchedule::from_fn(day_profile, 24.0, 48, Interpolation::Cubic).unwrap();
        for &h in &[0.1, 0.05] {
            let mut worst: f64 = 0.0;
            let mut t = h;
            while t < 24.0 - h {
                let dk = (s.tail(t + h, 24.0) - s.tail(t - h, 24.0)) / (2.0 * h);
                worst = worst.max((dk + s.value(t)).abs());
                t += 0.37;
            }
            // centered difference of a piecewise cubic: O(h²)
            assert!(worst < 2.0 * h * h, "h={h} worst={worst}");
        }
    }

    #[test]
    fn cubic_integral_matches_quadrature() {
        let s = SupplySchedule::from_fn(|t| t.sin() + 0.1 * t, 10.0, 17, Interpolation::Cubic).unwrap();
        let n = 200_000;
        let h = 7.3 / n as f64;
        let brute: f64 = (0..n).map(|k| s.value(1.1 + (k as f64 + 0.5) * h) * h).sum();
        assert!((s.integral(1.1, 8.4) - brute).abs() < 1e-8);
        let brute_sq: f64 = (0..n).map(|k| s.value(1.1 + (k as f64 + 0.5) * h).powi(2) * h).sum();
        assert!((s.square_integral(1.1, 8.4) - brute_sq).abs() < 1e-8);
    }

    #[test]
    fn cubic_derivative_matches_finite_difference() {
        let s = SupplySchedule::from_fn(day_profile, 24.0, 24, Interpolation::Cubic).unwrap();
        for &t in &[0.3, 5.5, 11.9, 17.2, 23.4] {
            let fd = (s.value(t + 1e-6) - s.value(t - 1e-6)) / 2e-6;
            assert!((fd - s.derivative(t)).abs() < 1e-6);
        }
    }

    #[test]
    fn pchip_preserves_monotone_data() {
        let s = SupplySchedule::new(
            vec![0.0, 1.0, 2.0, 3.0, 4.0],
            vec![0.0, 0.1, 0.2, 5.0, 5.1],
            Interpolation::Cubic,
        )
        .unwrap();
        let mut prev = s.value(0.0);
        for k in 1..=400 {
            let v = s.value(k as f64 * 0.01);
            assert!(v >= prev - 1e-12);
            prev = v;
        }
    }

    #[test]
    fn linear_derivative_is_forward_difference() {
        let s = SupplySchedule::new(vec![0.0, 2.0, 3.0], vec![1.0, 3.0, 0.0], Interpolation::Linear).unwrap();
        assert_eq!(s.derivative(0.5), 1.0);
        assert_eq!(s.derivative(2.5), -3.0);
        assert!((s.integral(0.0, 3.0) - (4.0 + 1.5)).abs() < 1e-14);
    }
}
