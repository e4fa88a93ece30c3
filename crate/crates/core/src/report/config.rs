use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{BinarizeMode, Dataset};
use crate::elicitation::{EndpointConfig, DEFAULT_COVERAGE_THRESHOLD};

use super::ReportError;

/// A model as reported, with the endpoint names of its two checkpoints.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelPair {
    pub name: String,
    pub original: String,
    pub finetuned: String,
}

/// Everything a run needs, as one JSON document. Relative paths resolve
/// against the config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: Dataset,
    #[serde(default = "default_split")]
    pub split: String,
    pub input: PathBuf,
    #[serde(default)]
    pub strict: bool,
    /// Shared endpoint settings; `model_name` is filled in per checkpoint.
    pub endpoint: EndpointConfig,
    pub models: Vec<ModelPair>,
    #[serde(default)]
    pub template: Option<PathBuf>,
    #[serde(default)]
    pub binarize_mode: BinarizeMode,
    #[serde(default = "default_concentration")]
    pub concentration: f64,
    #[serde(default)]
    pub fit_concentration: bool,
    #[serde(default)]
    pub include_multinomial_coefficient: bool,
    #[serde(default = "default_coverage")]
    pub coverage_threshold: f64,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
}

fn default_split() -> String {
    "test".into()
}
fn default_concentration() -> f64 {
    2.0
}
fn default_coverage() -> f64 {
    DEFAULT_COVERAGE_THRESHOLD
}
fn default_concurrency() -> usize {
    4
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, ReportError> {
        let config: Self = serde_json::from_str(text).map_err(|e| ReportError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads and validates `path`, resolving relative paths against its
    /// directory.
    pub fn load(path: &Path) -> Result<Self, ReportError> {
        let text = std::fs::read_to_string(path).map_err(|e| ReportError::io(path, e))?;
        let mut config = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut config.input);
        for p in [&mut config.template, &mut config.cache_dir, &mut config.out_dir].into_iter().flatten() {
            resolve(p);
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ReportError> {
        let err = |m: String| Err(ReportError::Config(m));
        if self.models.is_empty() {
            return err("at least one model is required".into());
        }
        let mut names = std::collections::BTreeSet::new();
        for m in &self.models {
            if m.name.trim().is_empty() || m.original.trim().is_empty() || m.finetuned.trim().is_empty() {
                return err(format!("model entry {:?} has a blank field", m.name));
            }
            if !names.insert(&m.name) {
                return err(format!("model {:?} is listed twice", m.name));
            }
        }
        if !(self.concentration.is_finite() && self.concentration > 0.0) {
            return err(format!("concentration must be positive, got {}", self.concentration));
        }
        if !(0.0..=1.0).contains(&self.coverage_threshold) {
            return err(format!("coverage_threshold must lie in [0, 1], got {}", self.coverage_threshold));
        }
        if self.concurrency == 0 {
            return err("concurrency must be at least 1".into());
        }
        self.endpoint_for("placeholder").validate()?;
        Ok(())
    }

    pub fn endpoint_for(&self, model_name: &str) -> EndpointConfig {
        EndpointConfig { model_name: model_name.to_string(), ..self.endpoint.clone() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "dataset": "dilemmas",
        "input": "data/dilemmas.jsonl",
        "endpoint": {"base_url": "http://localhost:8000"},
        "models": [{"name": "zephyr", "original": "zephyr-7b", "finetuned": "zephyr-7b-ft"}]
    }"#;

    #[test]
    fn defaults() {
        let c = RunConfig::from_json(MINIMAL).unwrap();
        assert_eq!(c.concentration, 2.0);
        assert_eq!(c.binarize_mode, BinarizeMode::Soft);
        assert_eq!(c.concurrency, 4);
        assert_eq!(c.coverage_threshold, 0.05);
        assert_eq!(c.split, "test");
        assert_eq!(c.endpoint_for("m").model_name, "m");
    }

    #[test]
    fn rejects_unknown_fields_and_bad_values() {
        let extra = MINIMAL.replacen("\"dataset\"", "\"datset\": 1, \"dataset\"", 1);
        assert!(RunConfig::from_json(&extra).is_err());
        let bad = MINIMAL.replacen("\"dataset\"", "\"concentration\": -1, \"dataset\"", 1);
        assert!(RunConfig::from_json(&bad).is_err());
        let bad = MINIMAL.replace("http://localhost:8000", "localhost");
        assert!(RunConfig::from_json(&bad).is_err());
        let bad = MINIMAL.replace("[{\"name\"", "[] , \"x\": [{\"name\"");
        assert!(RunConfig::from_json(&bad).is_err());
    }

    #[test]
    fn relative_paths_resolve_against_config_dir() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        std::fs::write(&path, MINIMAL).unwrap();
        let c = RunConfig::load(&path).unwrap();
        assert_eq!(c.input, dir.path().join("data/dilemmas.jsonl"));
    }
}
