//! Experiment configuration: one TOML file per model run.
//!
//! ```toml
//! design = "paper_design.toml"    # relative to this file; omit for the built-in design
//! out_dir = "out/gpt4omini"
//!
//! [model]
//! provider = "openai"
//! name = "gpt-4o-mini"
//!
//! [run]
//! repetitions = 100
//! temperature = 1.0
//! seed = 20240901
//! ```
//!
//! Secrets never live here; live providers read their key from the
//! environment.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::design::Design;
use crate::error::ConfigError;
use crate::providers::{LatentModel, ProviderKind, QueryParams, RetryPolicy};
use crate::stats::{FixedEffect, GroupBy, PValueReference};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Design file; `None` selects the built-in five-scenario design.
    #[serde(default)]
    pub design: Option<PathBuf>,
    /// Subset of scenario keys to field; all when absent.
    #[serde(default)]
    pub scenarios: Option<Vec<String>>,
    /// Named rendering style from the design file.
    #[serde(default)]
    pub rendering: Option<String>,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub model: Option<ModelConfig>,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    /// Simulated respondent for `simulate`.
    #[serde(default)]
    pub oracle: Option<LatentModel>,
    /// Directory relative paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Live endpoint family; not needed for `simulate`.
    #[serde(default)]
    pub provider: Option<ProviderKind>,
    pub name: String,
    #[serde(default)]
    pub display_name: Option<String>,
    #[serde(default)]
    pub base_url: Option<String>,
    /// Send the survey instruction as a system message rather than inline.
    #[serde(default = "yes")]
    pub system_slot: bool,
}

impl ModelConfig {
    pub fn label(&self) -> &str {
        self.display_name.as_deref().unwrap_or(&self.name)
    }
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub repetitions: u32,
    pub temperature: f64,
    /// Forwarded to providers that accept one; also the default shuffle seed.
    pub seed: Option<u64>,
    pub max_tokens: u32,
    pub timeout_ms: u64,
    pub concurrency: usize,
    pub requests_per_minute: Option<u32>,
    pub burst: Option<u32>,
    pub max_retries: u32,
    pub reask_limit: u32,
    /// Failed keys are re-queued on resume until they have this many
    /// failure records; unlimited when absent.
    pub requeue_limit: Option<u32>,
    pub shuffle_seed: Option<u64>,
    pub fsync: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            repetitions: 100,
            temperature: 1.0,
            seed: None,
            max_tokens: 8,
            timeout_ms: 60_000,
            concurrency: 8,
            requests_per_minute: None,
            burst: None,
            max_retries: RetryPolicy::default().max_retries,
            reask_limit: 2,
            requeue_limit: Some(3),
            shuffle_seed: None,
            fsync: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    pub group_by: GroupBy,
    /// Fixed effect for the pooled column; defaults to the grouping
    /// dimension (none for pooled grouping).
    pub fixed_effect: Option<FixedEffect>,
    pub p_reference: PValueReference,
    /// Column order when grouping by model; unlisted models follow
    /// lexicographically.
    pub model_order: Vec<String>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            group_by: GroupBy::Scenario,
            fixed_effect: None,
            p_reference: PValueReference::StudentT,
            model_order: Vec::new(),
        }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            design: None,
            scenarios: None,
            rendering: None,
            out_dir: default_out_dir(),
            model: None,
            run: RunConfig::default(),
            analysis: AnalysisConfig::default(),
            oracle: None,
            base_dir: PathBuf::from("."),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: base_dir.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let base = if base.as_os_str().is_empty() { PathBuf::from(".") } else { base };
        let mut cfg: ExperimentConfig = toml::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.base_dir = base;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.run.repetitions < 1 {
            return Err(ConfigError::Invalid("run.repetitions must be at least 1".into()));
        }
        if self.run.concurrency < 1 {
            return Err(ConfigError::Invalid("run.concurrency must be at least 1".into()));
        }
        if self.run.requests_per_minute == Some(0) {
            return Err(ConfigError::Invalid("run.requests_per_minute must be positive".into()));
        }
        if let Some(m) = &self.model {
            if m.name.trim().is_empty() {
                return Err(ConfigError::Invalid("model.name is empty".into()));
            }
        }
        self.query_params_unchecked().validate().map_err(ConfigError::Invalid)
    }

    /// Absolute-or-config-relative design path, if one is configured.
    pub fn design_path(&self) -> Option<PathBuf> {
        self.design.as_ref().map(|p| self.base_dir.join(p))
    }

    /// The design with rendering applied but every scenario kept.
    pub fn load_full_design(&self) -> Result<Design, ConfigError> {
        let mut design = match self.design_path() {
            Some(p) => Design::load(&p)?,
            None => crate::paper_design(),
        };
        if let Some(style) = &self.rendering {
            design.select_rendering(style)?;
        }
        Ok(design)
    }

    /// The design restricted to the configured scenarios.
    pub fn load_design(&self) -> Result<Design, ConfigError> {
        let mut design = self.load_full_design()?;
        if let Some(keys) = &self.scenarios {
            design.restrict_scenarios(keys)?;
        }
        Ok(design)
    }

    pub fn model(&self) -> Result<&ModelConfig, ConfigError> {
        self.model
            .as_ref()
            .ok_or_else(|| ConfigError::Invalid("a [model] section is required".into()))
    }

    pub fn model_name(&self) -> Result<&str, ConfigError> {
        Ok(&self.model()?.name)
    }

    fn query_params_unchecked(&self) -> QueryParams {
        let name = self.model.as_ref().map_or("unnamed", |m| m.name.as_str());
        QueryParams {
            model_name: name.to_string(),
            temperature: self.run.temperature,
            seed: self.run.seed,
            max_tokens: self.run.max_tokens,
            timeout: Duration::from_millis(self.run.timeout_ms),
        }
    }

    pub fn query_params(&self) -> Result<QueryParams, ConfigError> {
        self.model()?;
        Ok(self.query_params_unchecked())
    }

    pub fn shuffle_seed(&self) -> Option<u64> {
        self.run.shuffle_seed.or(self.run.seed)
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy {
            max_retries: self.run.max_retries,
            ..RetryPolicy::default()
        }
    }

    /// `--seed` override: request seed, shuffle seed and oracle noise seed.
    pub fn override_seed(&mut self, seed: u64) {
        self.run.seed = Some(seed);
        self.run.shuffle_seed = Some(seed);
        if let Some(o) = self.oracle.as_mut() {
            o.rng_seed = seed;
        }
    }

    /// `--out-dir` override; taken relative to the working directory.
    pub fn override_out_dir(&mut self, dir: PathBuf) {
        self.out_dir = dir;
    }

    /// Output root, relative paths resolved against the config file.
    pub fn out_dir(&self) -> PathBuf {
        if self.out_dir.is_absolute() {
            self.out_dir.clone()
        } else {
            self.base_dir.join(&self.out_dir)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_protocol() {
        let cfg = ExperimentConfig::from_toml_str("[model]\nname = \"m\"\n", Path::new(".")).unwrap();
        assert_eq!(cfg.run.repetitions, 100);
        assert_eq!(cfg.run.temperature, 1.0);
        assert_eq!(cfg.run.concurrency, 8);
        assert_eq!(cfg.run.reask_limit, 2);
        let d = cfg.load_design().unwrap();
        assert_eq!((d.scenarios.len(), d.factors.len()), (5, 7));
    }

    #[test]
    fn rejects_bad_values() {
        for text in [
            "[run]\nrepetitions = 0",
            "[run]\nconcurrency = 0",
            "[run]\ntemperature = -1.0\n[model]\nname = \"m\"",
            "unknown_key = 1",
        ] {
            assert!(ExperimentConfig::from_toml_str(text, Path::new(".")).is_err(), "{text}");
        }
    }

    #[test]
    fn seed_override_reaches_oracle() {
        let text = "[model]\nname = \"m\"\n[oracle]\nbase = 50.0\nweights = {}\nrng_seed = 1\n";
        let mut cfg = ExperimentConfig::from_toml_str(text, Path::new(".")).unwrap();
        cfg.override_seed(9);
        assert_eq!(cfg.oracle.unwrap().rng_seed, 9);
        assert_eq!(cfg.run.seed, Some(9));
    }

    #[test]
    fn missing_design_names_path() {
        let cfg = ExperimentConfig::from_toml_str("design = \"nope/absent.toml\"", Path::new("/tmp/x")).unwrap();
        let msg = cfg.load_design().unwrap_err().to_string();
        assert!(msg.contains("/tmp/x/nope/absent.toml"), "{msg}");
    }
}
