//! JSON run configuration. Matrices are row-major nested arrays; every
//! section is optional and falls back to the scenario's defaults.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const DEFAULT_SEED: u64 = 42;

/// Row-major matrix as written in the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MatrixSpec(pub Vec<Vec<f64>>);

impl MatrixSpec {
    pub fn to_matrix(&self, what: &str) -> CliResult<DMatrix<f64>> {
        let rows = self.0.len();
        let cols = self.0.first().map_or(0, Vec::len);
        if self.0.iter().any(|r| r.len() != cols) {
            return Err(CliError::Config(format!("{what}: rows have different lengths")));
        }
        if self.0.iter().flatten().any(|v| !v.is_finite()) {
            return Err(CliError::Config(format!("{what}: entries must be finite")));
        }
        Ok(DMatrix::from_row_iterator(rows, cols, self.0.iter().flatten().copied()))
    }

    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        MatrixSpec(m.row_iter().map(|r| r.iter().copied().collect()).collect())
    }
}

pub fn to_vector(v: &[f64], what: &str) -> CliResult<DVector<f64>> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(CliError::Config(format!("{what}: entries must be finite")));
    }
    Ok(DVector::from_column_slice(v))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemSpec {
    Pendulum {
        #[serde(default = "default_damping")]
        damping: f64,
    },
    LinearPh {
        j: MatrixSpec,
        r: MatrixSpec,
        g: MatrixSpec,
        /// Defaults to the identity.
        #[serde(default)]
        q: Option<MatrixSpec>,
    },
    /// Seeded random `J` skew, `R ⪰ 0`, `G`, and `Q = I` unless `general_q`.
    RandomLinear {
        n: usize,
        #[serde(default = "one")]
        m: usize,
        #[serde(default)]
        general_q: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DictionarySpec {
    Identity,
    /// `Ψ = Qx`; `q` defaults to the system's storage matrix.
    QScaled {
        #[serde(default)]
        q: Option<MatrixSpec>,
    },
    Pendulum,
    Polynomial {
        degree: u32,
        #[serde(default)]
        include_constant: bool,
    },
    Rbf {
        centers: Vec<Vec<f64>>,
        width: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SampleSpec {
    Grid {
        lower: Vec<f64>,
        upper: Vec<f64>,
        counts: Vec<usize>,
    },
    MonteCarlo {
        lower: Vec<f64>,
        upper: Vec<f64>,
        count: usize,
        /// Defaults to the run seed.
        #[serde(default)]
        seed: Option<u64>,
    },
    /// Unforced trajectory from `x0`, states taken every `stride` steps.
    Trajectory {
        x0: Vec<f64>,
        t_end: f64,
        dt: f64,
        stride: usize,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSpec {
    /// Damping gain `K_d`, `m × m`. Default `0.5·I`.
    #[serde(default)]
    pub damping_gain: Option<MatrixSpec>,
    /// MPC horizon length in time units. Default 2.
    #[serde(default)]
    pub horizon: Option<f64>,
    /// MPC sampling step. Default 0.1.
    #[serde(default)]
    pub dt: Option<f64>,
    /// Terminal decrease weight. Default `dt·I`.
    #[serde(default)]
    pub q_lyap: Option<MatrixSpec>,
    /// Receding-horizon steps. Default 200.
    #[serde(default)]
    pub steps: Option<usize>,
    /// Lifted tracking target. Default zero.
    #[serde(default)]
    pub reference: Option<Vec<f64>>,
    /// Storage weight `P` used by the passivity checks. Default identity.
    #[serde(default)]
    pub storage_weight: Option<MatrixSpec>,
}

/// Tolerances reported next to every measured value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub recovery: f64,
    pub q_conjugate: f64,
    pub generator_table: f64,
    pub passivity_conditions: f64,
    pub passivity_gap: f64,
    pub euler_ratio_min: f64,
    pub euler_ratio_max: f64,
    pub raw_psd: f64,
    pub convergence: f64,
    pub storage_increase: f64,
    pub terminal: f64,
    pub monotone: f64,
    pub oracle: f64,
    pub injectivity: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            recovery: 1e-8,
            q_conjugate: 1e-8,
            generator_table: 1e-12,
            passivity_conditions: kph_core::lifted::PASSIVITY_TOL,
            passivity_gap: 1e-6,
            euler_ratio_min: 3.5,
            euler_ratio_max: 4.5,
            raw_psd: 1e-10,
            convergence: 1e-6,
            storage_increase: 1e-10,
            terminal: kph_core::control::TERMINAL_TOL,
            monotone: kph_core::control::MONOTONE_TOL,
            oracle: 1e-8,
            injectivity: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub system: Option<SystemSpec>,
    #[serde(default)]
    pub dictionary: Option<DictionarySpec>,
    #[serde(default)]
    pub samples: Option<SampleSpec>,
    #[serde(default)]
    pub controller: Option<ControllerSpec>,
    /// Initial physical state for rollouts.
    #[serde(default)]
    pub initial_state: Option<Vec<f64>>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> CliResult<Self> {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SEED)
    }

    pub fn controller(&self) -> ControllerSpec {
        self.controller.clone().unwrap_or_default()
    }
}

fn default_damping() -> f64 {
    0.3
}

fn one() -> usize {
    1
}
