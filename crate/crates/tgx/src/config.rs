//! Experiment configuration and per-stage content hashes.
//!
//! The file is TOML; every section can be written with dotted keys
//! (`model.layers = 9`) or as a table. Missing keys take the defaults below.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tgx_core::data::GeneratorConfig;
use tgx_core::metrics::{MetricConfig, ThresholdRule};
use tgx_core::model::ModelConfig;
use tgx_core::reduction::Method;

use crate::error::{CliError, CliResult};

/// Explainer settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainConfig {
    pub reduction: Method,
    /// Reduced dimension `f`.
    pub dim: usize,
    /// Ridge strength of the DMD fits.
    pub gamma: f64,
    /// Modes dumped for evaluation.
    pub modes: Vec<usize>,
    pub sindy_threshold: f64,
    pub sindy_max_iterations: usize,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        ExplainConfig {
            reduction: Method::Pca,
            dim: 16,
            gamma: 1e-6,
            modes: vec![0, 1],
            sindy_threshold: 0.05,
            sindy_max_iterations: 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleName {
    Fraction,
    MeanStd,
}

/// Scoring settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    /// DMD mode scored for time and node weights.
    pub mode: usize,
    pub smoothing_width: usize,
    pub threshold_rule: RuleName,
    /// `delta'` of the fraction rule.
    pub delta: f64,
    pub window: usize,
    pub mw_half_width: usize,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        EvaluateConfig {
            mode: 1,
            smoothing_width: 5,
            threshold_rule: RuleName::Fraction,
            delta: 0.4,
            window: 6,
            mw_half_width: 2,
        }
    }
}

impl EvaluateConfig {
    pub fn metric_config(&self, seed: u64) -> MetricConfig {
        MetricConfig {
            smoothing_width: self.smoothing_width,
            threshold: match self.threshold_rule {
                RuleName::Fraction => ThresholdRule::FractionOfMax { fraction: self.delta },
                RuleName::MeanStd => ThresholdRule::MeanPlusStd,
            },
            window: self.window,
            mw_half_width: self.mw_half_width,
            seed,
        }
    }
}

/// Candidate lists for `tgx grid`. Empty lists keep the base value.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub hidden: Vec<usize>,
    pub layers: Vec<usize>,
    pub mlp_layers: Vec<usize>,
    pub beta: Vec<f64>,
    pub batch_size: Vec<usize>,
    pub reduction: Vec<Method>,
    pub dim: Vec<usize>,
    pub mode: Vec<usize>,
    pub delta: Vec<f64>,
    pub mean_std_rule: bool,
    pub window: Vec<usize>,
    pub sindy_threshold: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Overrides every stage seed when set.
    pub seed: Option<u64>,
    pub generator: GeneratorConfig,
    pub model: ModelConfig,
    pub explain: ExplainConfig,
    pub evaluate: EvaluateConfig,
    pub grid: GridConfig,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Applies the global seed and validates every section.
    pub fn resolve(mut self, seed_override: Option<u64>) -> CliResult<Self> {
        if seed_override.is_some() {
            self.seed = seed_override;
        }
        if let Some(seed) = self.seed {
            self.generator.seed = seed;
            self.model.seed = seed;
        }
        self.generator.validate().map_err(config_error)?;
        self.generator.check_ranges();
        self.model.validate().map_err(config_error)?;
        for w in self.model.grid_warnings() {
            log::warn!("model: {w}");
        }
        let metric = self.evaluate.metric_config(self.metric_seed());
        metric.validate().map_err(config_error)?;
        for w in metric.grid_warnings() {
            log::warn!("evaluate: {w}");
        }
        if self.explain.dim == 0 || self.explain.dim > self.model.hidden * self.model.layers {
            return Err(CliError::Config(format!(
                "explain.dim = {} must lie in 1..={}",
                self.explain.dim,
                self.model.hidden * self.model.layers
            )));
        }
        if ![10, 16, 32, 64].contains(&self.explain.dim) {
            log::warn!("explain: dim = {} outside {{10, 16, 32, 64}}", self.explain.dim);
        }
        if !self.explain.modes.contains(&self.evaluate.mode) {
            return Err(CliError::Config(format!(
                "evaluate.mode = {} is not among explain.modes {:?}",
                self.evaluate.mode, self.explain.modes
            )));
        }
        if self.explain.modes.iter().any(|&m| m >= self.explain.dim) {
            return Err(CliError::Config("explain.modes must be below explain.dim".into()));
        }
        if self.evaluate.mode > 1 {
            log::warn!("evaluate: mode = {} outside {{0, 1}}", self.evaluate.mode);
        }
        if !(self.explain.gamma >= 0.0) || self.explain.sindy_threshold < 0.0 {
            return Err(CliError::Config("explain.gamma and explain.sindy_threshold must be nonnegative".into()));
        }
        Ok(self)
    }

    pub fn metric_seed(&self) -> u64 {
        self.seed.unwrap_or(self.generator.seed)
    }

    pub fn metric_config(&self) -> MetricConfig {
        self.evaluate.metric_config(self.metric_seed())
    }
}

fn config_error(e: tgx_core::Error) -> CliError {
    CliError::Config(e.to_string())
}

/// Content hashes that chain through the stages.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageHashes {
    pub generate: String,
    pub train: String,
    pub explain: String,
    pub evaluate: String,
    pub grid: String,
}

fn digest(stage: &str, upstream: &str, section: &impl Serialize) -> String {
    let mut h = Sha256::new();
    h.update(stage.as_bytes());
    h.update([0]);
    h.update(upstream.as_bytes());
    h.update([0]);
    h.update(serde_json::to_vec(section).expect("config serializes"));
    let out = h.finalize();
    out.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

impl StageHashes {
    pub fn of(cfg: &ExperimentConfig) -> Self {
        let generate = digest("generate", "", &cfg.generator);
        let train = digest("train", &generate, &cfg.model);
        let explain = digest("explain", &train, &cfg.explain);
        let evaluate = digest("evaluate", &explain, &(&cfg.evaluate, cfg.metric_seed()));
        let grid = digest("grid", &evaluate, &cfg.grid);
        StageHashes {
            generate,
            train,
            explain,
            evaluate,
            grid,
        }
    }
}
