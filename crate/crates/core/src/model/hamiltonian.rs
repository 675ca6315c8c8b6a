use serde::{Deserialize, Serialize};

use super::tabulated::Tabulated;
use crate::error::{param, ModelError};

/// Charge-preference potential `V(x)` entering the running cost.
#[derive(Debug, Clone, PartialEq)]
pub enum Potential {
    Zero,
    /// `(eta / 2) (x - kappa)²`
    Quadratic { eta: f64, kappa: f64 },
    Tabulated(Tabulated),
}

impl Potential {
    pub fn quadratic(eta: f64, kappa: f64) -> Result<Self, ModelError> {
        if !(eta.is_finite() && eta >= 0.0) {
            return Err(param("eta", format!("must be finite and >= 0, got {eta}")));
        }
        if !kappa.is_finite() {
            return Err(param("kappa", "must be finite"));
        }
        Ok(Self::Quadratic { eta, kappa })
    }

    pub fn value(&self, x: f64) -> f64 {
        match self {
            Self::Zero => 0.0,
            Self::Quadratic { eta, kappa } => 0.5 * eta * (x - kappa).powi(2),
            Self::Tabulated(t) => t.value(x),
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match self {
            Self::Zero => 0.0,
            Self::Quadratic { eta, kappa } => eta * (x - kappa),
            Self::Tabulated(t) => t.derivative(x),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Self::Zero => true,
            Self::Quadratic { eta, .. } => *eta == 0.0,
            Self::Tabulated(t) => t.values().iter().all(|&v| v == 0.0),
        }
    }
}

/// Values returned by [`HamiltonianSpec::eval`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HamiltonianEval {
    pub h: f64,
    pub dp: f64,
    pub dpp: f64,
    pub dx: f64,
}

/// Separable Hamiltonian `H(x, p) = p²/(2c) - V(x)` with diffusion `epsilon`.
///
/// This is the Legendre transform of the running cost `c α²/2 + V(x)`; the mixed
/// derivative `D²ₓₚH` vanishes identically.
#[derive(Debug, Clone, PartialEq)]
pub struct HamiltonianSpec {
    c: f64,
    epsilon: f64,
    potential: Potential,
}

impl HamiltonianSpec {
    pub fn new(c: f64, epsilon: f64, potential: Potential) -> Result<Self, ModelError> {
        if !(c.is_finite() && c > 0.0) {
            return Err(param("c", format!("wear constant must be positive, got {c}")));
        }
        if !(epsilon.is_finite() && epsilon >= 0.0) {
            return Err(param("epsilon", format!("must be >= 0, got {epsilon}")));
        }
        Ok(Self {
            c,
            epsilon,
            potential,
        })
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn potential(&self) -> &Potential {
        &self.potential
    }

    /// Kinetic part `H₀(p) = p²/(2c)`.
    #[inline]
    pub fn kinetic(&self, p: f64) -> f64 {
        p * p / (2.0 * self.c)
    }

    /// `D_pH(x, p) = p / c`.
    #[inline]
    pub fn dp(&self, p: f64) -> f64 {
        p / self.c
    }

    /// `D²_ppH = 1/c`, which is also the uniform convexity modulus θ.
    #[inline]
    pub fn dpp(&self) -> f64 {
        1.0 / self.c
    }

    /// Third `p`-derivative; zero for the quadratic kinetic part.
    #[inline]
    pub fn dppp(&self) -> f64 {
        0.0
    }

    #[inline]
    pub fn h(&self, x: f64, p: f64) -> f64 {
        self.kinetic(p) - self.potential.value(x)
    }

    /// `D_xH = -V'(x)`.
    #[inline]
    pub fn dx(&self, x: f64) -> f64 {
        -self.potential.derivative(x)
    }

    pub fn eval(&self, x: f64, p: f64) -> Result<HamiltonianEval, ModelError> {
        if !(x.is_finite() && p.is_finite()) {
            return Err(ModelError::Domain("hamiltonian_eval"));
        }
        Ok(HamiltonianEval {
            h: self.h(x, p),
            dp: self.dp(p),
            dpp: self.dpp(),
            dx: self.dx(x),
        })
    }
}
