//! Experiment configuration: one JSON document drives a whole pipeline.
//!
//! Every seed is explicit; nothing is drawn from the clock. Unknown fields
//! are rejected, and parse errors name the offending JSON path.

use std::path::Path;

use anyhow::{anyhow, Context};
use serde::{Deserialize, Serialize};

use dsre_core::environment::EnvironmentSpec;

pub const CONFIG_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub format_version: u32,
    pub environment: EnvironmentSpec,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub heat_kernel: HeatKernelConfig,
    #[serde(default)]
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
    pub output_dir: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub tol: f64,
    /// `None` lets the solver pick 10 sqrt(N^d).
    pub max_iter: Option<usize>,
    pub restart: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: None,
            restart: 50,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeatKernelConfig {
    /// First grid time.
    pub t0: f64,
    /// Last grid time; `None` stops at the wrap horizon.
    pub t1: Option<f64>,
    /// Relative step of the geometric grid.
    pub step_frac: f64,
    /// Poisson truncation tail.
    pub tail_tol: f64,
    /// Start site of the kernel.
    pub x0: usize,
}

impl Default for HeatKernelConfig {
    fn default() -> Self {
        Self {
            t0: 0.1,
            t1: None,
            step_frac: 0.01,
            tail_tol: 1e-13,
            x0: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    /// Strictly increasing sampling times.
    pub t_list: Vec<f64>,
    pub n_walks: usize,
    pub walk_seed: u64,
    /// Also record corrected displacements.
    pub correct: bool,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            t_list: vec![100.0],
            n_walks: 10_000,
            walk_seed: 1001,
            correct: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsConfig {
    /// Per-coordinate KS threshold; `None` uses the 1% critical value.
    pub ks_threshold: Option<f64>,
    pub cov_rel_err: f64,
    pub min_samples: usize,
    pub sublinearity_radii: Vec<usize>,
    pub sublinearity_eps: Vec<f64>,
    /// Integrability exponent offset used in the moment-trend check.
    pub moment_eps: f64,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            ks_threshold: Some(0.03),
            cov_rel_err: 0.07,
            min_samples: 1000,
            sublinearity_radii: vec![4, 8, 12, 16],
            sublinearity_eps: vec![0.1, 0.2],
            moment_eps: 1.0,
        }
    }
}

/// Load and validate a config; errors carry the JSON path of the problem.
pub fn load_config(path: &Path) -> anyhow::Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let deserializer = &mut serde_json::Deserializer::from_str(&text);
    let config: ExperimentConfig = serde_path_to_error::deserialize(deserializer)
        .map_err(|e| anyhow!("config {}: at `{}`: {}", path.display(), e.path(), e.inner()))?;
    if config.format_version != CONFIG_FORMAT_VERSION {
        return Err(anyhow!(
            "config format_version {} unsupported (expected {CONFIG_FORMAT_VERSION})",
            config.format_version
        ));
    }
    if config.simulation.t_list.is_empty()
        || config.simulation.t_list.windows(2).any(|w| w[0] >= w[1])
        || config.simulation.t_list[0] <= 0.0
    {
        return Err(anyhow!(
            "config {}: at `simulation.t_list`: times must be positive and strictly increasing",
            path.display()
        ));
    }
    Ok(config)
}

/// Canonical content hash of a config (over its serialized form).
pub fn config_hash(config: &ExperimentConfig) -> anyhow::Result<String> {
    let bytes = serde_json::to_vec(config)?;
    Ok(dsre_core::io::sha256_hex(&bytes))
}
