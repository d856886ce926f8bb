//! JSON run configuration.
//!
//! A configuration document has up to seven sections: `vehicle`, one of
//! `lqr`, `gains` or `rounded_gains` (mutually exclusive), `barrier`,
//! `search`, `failures`, `solver` and `sim`. Every section and every key
//! inside one may be omitted, in which case the stock defaults apply;
//! unknown keys are rejected so typos cannot silently fall back to
//! defaults. `{}` is the complete default setup.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::alloc::{AllocError, FailureScenario};
use crate::barrier::{BarrierError, BarrierParams};
use crate::conditions::{ConditionError, ScenarioSpec, SearchSpace};
use crate::control::{lqr_gains, ControlError, Gains, LqrWeights};
use crate::model::{ModelError, OctorotorParams};
use crate::sim::FalsifySettings;
use crate::solver::{SolverConfig, SolverError};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("malformed configuration: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("`lqr`, `gains` and `rounded_gains` are mutually exclusive ways to pick gains")]
    GainsConflict,
    #[error("failures[{index}]: rotor key {key:?} is not an index in 1..=8")]
    RotorKey { index: usize, key: String },
    #[error("failures[{index}].{key} = {value} violates {constraint}")]
    ScenarioOverride {
        index: usize,
        key: &'static str,
        value: f64,
        constraint: &'static str,
    },
    #[error("sim.{key} = {value} violates {constraint}")]
    Sim {
        key: &'static str,
        value: f64,
        constraint: &'static str,
    },
    #[error(transparent)]
    Vehicle(#[from] ModelError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Barrier(#[from] BarrierError),
    #[error(transparent)]
    Failure(#[from] AllocError),
    #[error(transparent)]
    Search(#[from] ConditionError),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

/// One failure scenario: stuck rotors (1-based index to thrust) plus
/// optional per-scenario overrides of the region scale and precision.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FailureEntry {
    pub stuck: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
}

/// Raw configuration document. Kept separate from the resolved runtime
/// values so rendering reproduces exactly what was written.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConfigFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vehicle: Option<OctorotorParams>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lqr: Option<LqrWeights>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gains: Option<Gains>,
    /// Force [`Gains::rounded_nominal`], the three-significant-digit
    /// form quoted in the design documentation, instead of full-precision
    /// LQR synthesis.
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub rounded_gains: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub barrier: Option<BarrierParams>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub search: Option<SearchSpace>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<FailureEntry>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sim: Option<FalsifySettings>,
}

/// Fully validated runtime configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub params: OctorotorParams,
    pub gains: Gains,
    pub barrier: BarrierParams,
    pub search: SearchSpace,
    pub scenarios: Vec<ScenarioSpec>,
    pub solver: SolverConfig,
    pub sim: FalsifySettings,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn render(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialization is infallible")
    }

    /// Applies defaults, validates every section and produces the
    /// runtime configuration.
    pub fn resolve(&self) -> Result<RunConfig, ConfigError> {
        let params = self.vehicle.unwrap_or_default();
        params.validate()?;
        let sources =
            self.lqr.is_some() as u8 + self.gains.is_some() as u8 + self.rounded_gains as u8;
        if sources > 1 {
            return Err(ConfigError::GainsConflict);
        }
        let gains = match (&self.lqr, &self.gains) {
            _ if self.rounded_gains => Gains::rounded_nominal(),
            (_, Some(g)) => {
                for (name, value) in [
                    ("k_dz", g.k_dz),
                    ("k_p_phi", g.k_p_phi),
                    ("k_d_phi", g.k_d_phi),
                    ("k_p_theta", g.k_p_theta),
                    ("k_d_theta", g.k_d_theta),
                    ("k_p_psi", g.k_p_psi),
                    ("k_d_psi", g.k_d_psi),
                ] {
                    if !(value > 0.0) || !value.is_finite() {
                        return Err(ControlError::Weight { name, value }.into());
                    }
                }
                *g
            }
            (lqr, None) => lqr_gains(&lqr.unwrap_or_default(), &params)?,
        };
        let barrier = self.barrier.unwrap_or_default();
        barrier.validate()?;
        let search = self.search.unwrap_or_default();
        search.validate()?;
        let mut scenarios = Vec::with_capacity(self.failures.len());
        for (index, entry) in self.failures.iter().enumerate() {
            let mut stuck = Vec::with_capacity(entry.stuck.len());
            for (key, &value) in &entry.stuck {
                let rotor: usize = key.parse().map_err(|_| ConfigError::RotorKey {
                    index,
                    key: key.clone(),
                })?;
                stuck.push((rotor, value));
            }
            let scenario = FailureScenario::new(stuck)?;
            scenario.validate(&params)?;
            if let Some(m) = entry.mu_max {
                if !(m >= 1.0) || !m.is_finite() {
                    return Err(ConfigError::ScenarioOverride {
                        index,
                        key: "mu_max",
                        value: m,
                        constraint: ">= 1",
                    });
                }
            }
            if let Some(d) = entry.delta {
                if !(d > 0.0) || !d.is_finite() {
                    return Err(ConfigError::ScenarioOverride {
                        index,
                        key: "delta",
                        value: d,
                        constraint: "> 0",
                    });
                }
            }
            scenarios.push(ScenarioSpec {
                scenario,
                mu_max: entry.mu_max,
                delta: entry.delta,
            });
        }
        let solver = self.solver.unwrap_or_default();
        solver.validate()?;
        let sim = self.sim.unwrap_or_default();
        if sim.trials == 0 {
            return Err(ConfigError::Sim {
                key: "trials",
                value: 0.0,
                constraint: ">= 1",
            });
        }
        for (key, value, constraint) in [
            ("horizon", sim.horizon, "> 0"),
            ("dt", sim.dt, "> 0"),
            ("tolerance", sim.tolerance, ">= 0"),
        ] {
            let ok = match constraint {
                "> 0" => value > 0.0 && value.is_finite(),
                _ => value >= 0.0 && value.is_finite(),
            };
            if !ok {
                return Err(ConfigError::Sim {
                    key,
                    value,
                    constraint,
                });
            }
        }
        Ok(RunConfig {
            params,
            gains,
            barrier,
            search,
            scenarios,
            solver,
            sim,
        })
    }
}

impl RunConfig {
    /// Stock configuration: `{}` resolved.
    pub fn stock() -> Self {
        ConfigFile::default()
            .resolve()
            .expect("defaults always resolve")
    }
}
