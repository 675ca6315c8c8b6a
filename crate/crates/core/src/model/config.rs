use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::data::{InitialDensity, TerminalCost};
use super::grid::{SpaceGrid, TimeGrid};
use super::hamiltonian::{HamiltonianSpec, Potential};
use super::supply::{Interpolation, SupplySchedule};
use super::tabulated::Tabulated;
use super::Model;
use crate::csvio::{self, CsvError};
use crate::error::ModelError;
use crate::lq::ForcingTerm;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed config at line {line}, column {column}: {message}")]
    Json {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("supply data: {0}")]
    Supply(#[from] CsvError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl From<serde_json::Error> for ConfigError {
    fn from(e: serde_json::Error) -> Self {
        ConfigError::Json {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum PotentialConfig {
    Zero,
    Quadratic { eta: f64, kappa: f64 },
    Tabulated { values: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum TerminalConfig {
    Quadratic { gamma: f64, zeta: f64 },
    Tabulated { values: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum InitialConfig {
    Gaussian { mean: f64, std: f64 },
    Tabulated { values: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineSamples {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SupplyConfig {
    Path {
        path: PathBuf,
        interpolation: Interpolation,
    },
    Inline {
        inline: InlineSamples,
        interpolation: Interpolation,
    },
}

impl SupplyConfig {
    /// Relative paths resolve against `base_dir`.
    pub fn build(&self, base_dir: Option<&Path>) -> Result<SupplySchedule, ConfigError> {
        Ok(match self {
            SupplyConfig::Inline {
                inline,
                interpolation,
            } => SupplySchedule::new(inline.times.clone(), inline.values.clone(), *interpolation)?,
            SupplyConfig::Path {
                path,
                interpolation,
            } => {
                let full = match base_dir {
                    Some(dir) if path.is_relative() => dir.join(path),
                    _ => path.clone(),
                };
                let (t, v) = csvio::read_two_columns(&full)?;
                SupplySchedule::new(t, v, *interpolation)?
            }
        })
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(serde_json::from_str(&text)?)
}

/// Model without potential and with quadratic terminal cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LqConfig {
    pub horizon: f64,
    pub n_t: usize,
    pub c: f64,
    pub gamma: f64,
    pub zeta: f64,
    pub xbar: f64,
    pub supply: SupplyConfig,
}

impl LqConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        read_json(path)
    }
}

/// Model with quadratic potential; `forcing`, when present, describes the supply
/// analytically and selects the Laplace route.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialRunConfig {
    pub horizon: f64,
    pub n_t: usize,
    pub c: f64,
    pub eta: f64,
    pub kappa: f64,
    pub gamma: f64,
    pub zeta: f64,
    pub xbar: f64,
    pub supply: SupplyConfig,
    #[serde(default)]
    pub forcing: Option<Vec<ForcingTerm>>,
}

impl PotentialRunConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        read_json(path)
    }
}

/// JSON model configuration. Every key is required.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub horizon: f64,
    pub n_t: usize,
    pub x_min: f64,
    pub x_max: f64,
    pub n_x: usize,
    pub c: f64,
    pub epsilon: f64,
    pub potential: PotentialConfig,
    pub terminal: TerminalConfig,
    pub initial: InitialConfig,
    pub supply: SupplyConfig,
}

impl ModelConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        read_json(path)
    }

    /// Builds the model; relative supply paths resolve against `base_dir`.
    pub fn build(&self, base_dir: Option<&Path>) -> Result<Model, ConfigError> {
        let time = TimeGrid::new(self.horizon, self.n_t)?;
        let space = SpaceGrid::new(self.x_min, self.x_max, self.n_x)?;
        let potential = match &self.potential {
            PotentialConfig::Zero => Potential::Zero,
            PotentialConfig::Quadratic { eta, kappa } => Potential::quadratic(*eta, *kappa)?,
            PotentialConfig::Tabulated { values } => {
                Potential::Tabulated(Tabulated::new(space, values.clone())?)
            }
        };
        let hamiltonian = HamiltonianSpec::new(self.c, self.epsilon, potential)?;
        let terminal = match &self.terminal {
            TerminalConfig::Quadratic { gamma, zeta } => TerminalCost::quadratic(*gamma, *zeta)?,
            TerminalConfig::Tabulated { values } => {
                TerminalCost::Tabulated(Tabulated::new(space, values.clone())?)
            }
        };
        let initial = match &self.initial {
            InitialConfig::Gaussian { mean, std } => InitialDensity::gaussian(space, *mean, *std)?,
            InitialConfig::Tabulated { values } => InitialDensity::normalized(space, values.clone())?,
        };
        let supply = self.supply.build(base_dir)?;
        Ok(Model::new(time, hamiltonian, terminal, initial, supply)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TRIVIAL: &str = r#"{
        "horizon": 1.0, "n_t": 10, "x_min": -3.0, "x_max": 3.0, "n_x": 61,
        "c": 1.0, "epsilon": 0.0,
        "potential": {"kind": "zero"},
        "terminal": {"kind": "quadratic", "gamma": 0.0, "zeta": 0.0},
        "initial": {"kind": "gaussian", "mean": 0.0, "std": 0.4},
        "supply": {"inline": {"times": [0.0, 1.0], "values": [0.0, 0.0]}, "interpolation": "linear"}
    }"#;

    #[test]
    fn parses_and_builds() {
        let cfg = ModelConfig::from_json(TRIVIAL).unwrap();
        let model = cfg.build(None).unwrap();
        assert_eq!(model.space.len(), 61);
        assert_eq!(model.time.steps(), 10);
    }

    #[test]
    fn missing_key_is_an_error() {
        let text = TRIVIAL.replace(r#""epsilon": 0.0,"#, "");
        assert!(matches!(ModelConfig::from_json(&text), Err(ConfigError::Json { .. })));
    }

    #[test]
    fn malformed_json_reports_position() {
        let err = ModelConfig::from_json("{\n  \"horizon\": 1.0,,\n}").unwrap_err();
        match err {
            ConfigError::Json { line, column, .. } => {
                assert_eq!(line, 2);
                assert!(column > 0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn supply_must_cover_horizon() {
        let text = TRIVIAL.replace("[0.0, 1.0], \"values\"", "[0.0, 0.5], \"values\"");
        let cfg = ModelConfig::from_json(&text).unwrap();
        assert!(matches!(cfg.build(None), Err(ConfigError::Model(ModelError::Supply(_)))));
    }
}
