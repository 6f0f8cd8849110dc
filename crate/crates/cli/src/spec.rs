//! Run specifications: what to compute, for which model, and how.

use std::collections::BTreeSet;
use std::path::Path;

use refdiff::montecarlo::McConfig;
use refdiff::{AdditiveFunctional, DiffusionModel, SolverConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Output {
    Alpha,
    Eta2,
    Density,
    UPrime,
    Psi,
    Rate,
    Mc,
    Verify,
}

impl Output {
    pub fn needs_compact_domain(self) -> bool {
        matches!(self, Output::Psi | Output::Rate)
    }
}

/// Pass thresholds applied by `verify`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    /// Largest admissible `|α̂ − α| / SE`; also used for the agreement of the
    /// two `η²` estimators.
    pub alpha_z: f64,
    pub eta2_relative: f64,
    pub occupation_gap: f64,
    pub cgf_gap: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds { alpha_z: 3.0, eta2_relative: 0.15, occupation_gap: 0.05, cgf_gap: 0.02 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub model: DiffusionModel,
    pub functional: AdditiveFunctional,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mc: Option<McConfig>,
    /// θ values for the ψ curve; `[-3, 3]` in 61 steps when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_grid: Option<Vec<f64>>,
    /// Points at which the rate function is evaluated; 41 points across the
    /// attainable slope range when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_points: Option<Vec<f64>>,
    /// θ values for the Monte Carlo CGF estimate and its check against ψ.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cgf_thetas: Option<Vec<f64>>,
    pub outputs: BTreeSet<Output>,
    #[serde(default)]
    pub thresholds: Thresholds,
}

pub const DEFAULT_THETA_RANGE: (f64, f64, usize) = (-3.0, 3.0, 61);

impl RunSpec {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string(self).map_err(|e| CliError::Serialize(e.to_string()))
    }

    /// Reads a spec file; `.json` files are parsed as JSON, everything else
    /// as TOML.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| CliError::Io { path: path.to_path_buf(), source })?;
        let parsed = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| e.to_string())
        } else {
            Self::from_toml(&text)
        };
        parsed.map_err(|message| CliError::SpecParse { path: path.to_path_buf(), message })
    }

    pub fn with_outputs(mut self, outputs: impl IntoIterator<Item = Output>) -> Self {
        self.outputs = outputs.into_iter().collect();
        self
    }

    pub fn wants(&self, output: Output) -> bool {
        self.outputs.contains(&output)
    }

    pub fn theta_values(&self) -> Vec<f64> {
        match &self.theta_grid {
            Some(grid) => grid.clone(),
            None => {
                let (lo, hi, n) = DEFAULT_THETA_RANGE;
                refdiff::spectral::theta_grid(lo, hi, n)
            }
        }
    }

    /// Checks everything that can be decided without running a solver.
    pub fn validate(&self) -> CliResult<()> {
        refdiff::model::validate(&self.model, &self.functional).into_result()?;
        self.solver.validate()?;
        if self.outputs.is_empty() {
            return Err(CliError::InvalidSpec("no outputs requested".into()));
        }
        let compact = self.model.domain.is_compact();
        if !compact && self.outputs.iter().any(|o| o.needs_compact_domain()) {
            return Err(refdiff::Error::NonCompactDomain.into());
        }
        let needs_mc = self.wants(Output::Mc) || self.wants(Output::Verify);
        match &self.mc {
            Some(mc) => mc.validate(&self.model.domain)?,
            None if needs_mc => {
                return Err(CliError::InvalidSpec("Monte Carlo output requested without an [mc] section".into()))
            }
            None => {}
        }
        if self.cgf_thetas.as_ref().is_some_and(|t| !t.is_empty()) && !compact && self.wants(Output::Verify) {
            return Err(refdiff::Error::NonCompactDomain.into());
        }
        for (name, values) in [
            ("theta_grid", &self.theta_grid),
            ("rate_points", &self.rate_points),
            ("cgf_thetas", &self.cgf_thetas),
        ] {
            if values.as_ref().is_some_and(|v| v.iter().any(|x| !x.is_finite())) {
                return Err(CliError::InvalidSpec(format!("{name} contains a non-finite value")));
            }
        }
        Ok(())
    }
}

pub const PRESETS: [&str; 4] = ["rbm-zero-drift", "rbm-drift", "rou", "zhang-case"];

const PRESET_SEED: u64 = 20_240_601;

fn all_outputs() -> BTreeSet<Output> {
    use Output::*;
    [Alpha, Eta2, Density, UPrime, Psi, Rate, Mc, Verify].into_iter().collect()
}

/// Built-in specs for the reference models.
///
/// * `rbm-zero-drift`: `μ = 0, σ² = 1, b = 1, r₀ = r_b = 1`
/// * `rbm-drift`: as above with `μ = 1`
/// * `rou`: `μ(x) = −(x − 1/2), σ² = 1, b = 1, r₀ = r_b = 1`
/// * `zhang-case`: `μ = 1, σ² = 1, b = 1, r₀ = 0, r_b = 1`, with the CGF
///   checked at `θ = −0.5`
pub fn preset(name: &str) -> CliResult<RunSpec> {
    let lln = McConfig::new(1000.0, 200, PRESET_SEED, 0.5);
    let (model, functional, mc, cgf_thetas) = match name {
        "rbm-zero-drift" => (DiffusionModel::rbm(0.0, 1.0, 1.0), AdditiveFunctional::boundary(1.0, 1.0), lln, None),
        "rbm-drift" => (DiffusionModel::rbm(1.0, 1.0, 1.0), AdditiveFunctional::boundary(1.0, 1.0), lln, None),
        "rou" => (DiffusionModel::rou(1.0, 0.5, 1.0, 1.0), AdditiveFunctional::boundary(1.0, 1.0), lln, None),
        "zhang-case" => (
            DiffusionModel::rbm(1.0, 1.0, 1.0),
            AdditiveFunctional::boundary(0.0, 1.0),
            McConfig::new(50.0, 10_000, PRESET_SEED, 0.5),
            Some(vec![-0.5]),
        ),
        other => return Err(CliError::UnknownPreset(other.to_string())),
    };
    Ok(RunSpec {
        model,
        functional,
        solver: SolverConfig::default(),
        mc: Some(mc),
        theta_grid: None,
        rate_points: None,
        cgf_thetas,
        outputs: all_outputs(),
        thresholds: Thresholds::default(),
    })
}
