//! Domain types shared by every solver: grids, the separable Hamiltonian,
//! terminal and initial data, the production schedule, and space-time fields.

mod assumptions;
mod config;
mod data;
mod fields;
mod grid;
mod hamiltonian;
mod supply;
mod tabulated;

pub use assumptions::{
    validate_assumptions, Assumption, AssumptionCheck, AssumptionReport, CONVEXITY_TOL,
    KINK_FRACTION,
};
pub use config::{
    ConfigError, InitialConfig, InlineSamples, LqConfig, ModelConfig, PotentialConfig,
    PotentialRunConfig, SupplyConfig, TerminalConfig,
};
pub use data::{InitialDensity, TerminalCost, DENSITY_MASS_TOL};
pub use fields::{DensityField, PricePath, ValueField};
pub use grid::{gradient, second_difference, SpaceGrid, TimeGrid};
pub use hamiltonian::{HamiltonianEval, HamiltonianSpec, Potential};
pub use supply::{Interpolation, SupplySchedule};
pub use tabulated::Tabulated;

use crate::error::ModelError;

/// Complete data of one price-formation problem.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub space: SpaceGrid,
    pub time: TimeGrid,
    pub hamiltonian: HamiltonianSpec,
    pub terminal: TerminalCost,
    pub initial: InitialDensity,
    pub supply: SupplySchedule,
}

impl Model {
    pub fn new(
        time: TimeGrid,
        hamiltonian: HamiltonianSpec,
        terminal: TerminalCost,
        initial: InitialDensity,
        supply: SupplySchedule,
    ) -> Result<Self, ModelError> {
        if !supply.covers(time.horizon()) {
            return Err(ModelError::Supply(format!(
                "samples span [{}, {}], need [0, {}]",
                supply.start(),
                supply.end(),
                time.horizon()
            )));
        }
        Ok(Self {
            space: *initial.grid(),
            time,
            hamiltonian,
            terminal,
            initial,
            supply,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.time.horizon()
    }

    /// `K(t) = ∫_t^T Q`.
    pub fn tail(&self, t: f64) -> f64 {
        self.supply.tail(t, self.horizon())
    }

    pub fn assumptions(&self) -> AssumptionReport {
        validate_assumptions(&self.hamiltonian, &self.terminal, &self.initial)
    }
}
