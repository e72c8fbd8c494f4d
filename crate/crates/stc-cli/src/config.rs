//! Experiment configuration: a single JSON document with explicit units in
//! the field names, validated on load.

use serde::{Deserialize, Serialize};
use stc_core::plant::NetworkSpec;

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

/// Network section; mirrors [`NetworkSpec`] with unit-bearing names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct NetworkConfig {
    pub subsystem_count: usize,
    pub region_side_length: f64,
    pub decay_rate_per_length: f64,
    pub seed: u64,
    #[serde(default = "default_state_weight")]
    pub state_weight_scale: f64,
    #[serde(default = "default_input_weight")]
    pub input_weight_scale: f64,
}

fn default_state_weight() -> f64 {
    1.0
}

fn default_input_weight() -> f64 {
    2.0
}

impl NetworkConfig {
    pub fn to_spec(&self) -> NetworkSpec {
        let mut spec = NetworkSpec::new(
            self.subsystem_count,
            self.region_side_length,
            self.decay_rate_per_length,
            self.seed,
        );
        spec.q_scale = self.state_weight_scale;
        spec.r_scale = self.input_weight_scale;
        spec
    }
}

/// Run section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct RunSection {
    pub alpha_loss_budget: f64,
    pub gamma_gain_penalty: f64,
    pub eta_input_penalty: f64,
    pub iteration_count: usize,
    /// Explicit initial state; drawn from the seeded generator when null.
    #[serde(default)]
    pub initial_state: Option<Vec<f64>>,
    #[serde(default = "default_grid_step")]
    pub grid_step_seconds: f64,
    #[serde(default = "default_grid_horizon")]
    pub grid_horizon_seconds: f64,
    #[serde(default = "default_tail_horizon")]
    pub tail_horizon_seconds: f64,
    /// Entry magnitude under which sparsity metrics count a zero; derived
    /// from the benchmark gain when null.
    #[serde(default)]
    pub zero_threshold: Option<f64>,
    #[serde(default)]
    pub force_benchmark_gain: bool,
}

fn default_grid_step() -> f64 {
    0.01
}

fn default_grid_horizon() -> f64 {
    5.0
}

fn default_tail_horizon() -> f64 {
    40.0
}

/// Sweepable parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParameter {
    Alpha,
    Beta,
    Gamma,
    Eta,
}

impl SweepParameter {
    pub fn name(&self) -> &'static str {
        match self {
            SweepParameter::Alpha => "alpha",
            SweepParameter::Beta => "beta",
            SweepParameter::Gamma => "gamma",
            SweepParameter::Eta => "eta",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct SweepSection {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
    #[serde(default = "default_seeds_per_point")]
    pub seeds_per_point: usize,
}

fn default_seeds_per_point() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_directory")]
    pub directory: String,
    #[serde(default)]
    pub emit_raw: bool,
}

fn default_directory() -> String {
    "out".into()
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            directory: default_directory(),
            emit_raw: false,
        }
    }
}

/// The whole experiment document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ExperimentConfig {
    pub network: NetworkConfig,
    pub run: RunSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    #[serde(default)]
    pub output: OutputSection,
}

impl ExperimentConfig {
    /// Parses and validates; parse errors keep serde's line/column info.
    pub fn from_json_str(text: &str) -> Result<Self, CliError> {
        let config: ExperimentConfig = serde_json::from_str(text)
            .map_err(|e| CliError::Config(format!("config parse error: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialization cannot fail")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Config(msg));
        let net = &self.network;
        if net.subsystem_count == 0 {
            return bad("network.subsystemCount must be at least 1".into());
        }
        if !(net.region_side_length.is_finite() && net.region_side_length > 0.0) {
            return bad("network.regionSideLength must be positive".into());
        }
        if !(net.decay_rate_per_length.is_finite() && net.decay_rate_per_length > 0.0) {
            return bad("network.decayRatePerLength must be positive".into());
        }
        if !(net.state_weight_scale.is_finite() && net.state_weight_scale > 0.0)
            || !(net.input_weight_scale.is_finite() && net.input_weight_scale > 0.0)
        {
            return bad("network weight scales must be positive".into());
        }

        let run = &self.run;
        if !(run.alpha_loss_budget.is_finite() && run.alpha_loss_budget > 1.0) {
            return bad("run.alphaLossBudget must exceed 1".into());
        }
        if !(run.gamma_gain_penalty.is_finite() && run.gamma_gain_penalty >= 0.0)
            || !(run.eta_input_penalty.is_finite() && run.eta_input_penalty >= 0.0)
        {
            return bad("run penalties must be finite and nonnegative".into());
        }
        if run.iteration_count == 0 {
            return bad("run.iterationCount must be at least 1".into());
        }
        if !(run.grid_step_seconds.is_finite() && run.grid_step_seconds > 0.0) {
            return bad("run.gridStepSeconds must be positive".into());
        }
        if !(run.grid_horizon_seconds.is_finite()
            && run.grid_horizon_seconds > run.grid_step_seconds)
        {
            return bad("run.gridHorizonSeconds must exceed the grid step".into());
        }
        if !(run.tail_horizon_seconds.is_finite() && run.tail_horizon_seconds > 0.0) {
            return bad("run.tailHorizonSeconds must be positive".into());
        }
        if let Some(x0) = &run.initial_state {
            if x0.len() != 2 * net.subsystem_count {
                return bad(format!(
                    "run.initialState must have 2*subsystemCount = {} entries, got {}",
                    2 * net.subsystem_count,
                    x0.len()
                ));
            }
            if x0.iter().any(|v| !v.is_finite()) {
                return bad("run.initialState has non-finite entries".into());
            }
        }
        if let Some(thr) = run.zero_threshold {
            if !(thr.is_finite() && thr >= 0.0) {
                return bad("run.zeroThreshold must be nonnegative".into());
            }
        }

        if let Some(sweep) = &self.sweep {
            if sweep.values.is_empty() {
                return bad("sweep.values must be non-empty".into());
            }
            if sweep.values.iter().any(|v| !v.is_finite()) {
                return bad("sweep.values must be finite".into());
            }
            if !sweep.values.windows(2).all(|w| w[0] < w[1]) {
                return bad("sweep.values must be strictly increasing".into());
            }
            if sweep.seeds_per_point == 0 {
                return bad("sweep.seedsPerPoint must be at least 1".into());
            }
            let positive_required = !matches!(sweep.parameter, SweepParameter::Gamma | SweepParameter::Eta);
            for &v in &sweep.values {
                match sweep.parameter {
                    SweepParameter::Alpha if v <= 1.0 => {
                        return bad("alpha sweep values must exceed 1".into())
                    }
                    SweepParameter::Beta if v <= 0.0 => {
                        return bad("beta sweep values must be positive".into())
                    }
                    _ if v < 0.0 && !positive_required => {
                        return bad("penalty sweep values must be nonnegative".into())
                    }
                    _ => {}
                }
            }
        }
        if self.output.directory.is_empty() {
            return bad("output.directory must be non-empty".into());
        }
        Ok(())
    }
}
