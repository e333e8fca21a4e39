//! Run configuration: TOML file values overridden by command-line flags.

use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use trial_digest::ingest::DEFAULT_BASE_URL;
use trial_digest::llm_backend::HttpBackendConfig;
use trial_digest::pipeline::PipelineConfig;
use trial_digest::trial_model::{MedicalField, RecencyClass};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegistrySettings {
    pub base_url: String,
    pub page_size: u32,
    pub max_records: usize,
}

impl Default for RegistrySettings {
    fn default() -> Self {
        Self {
            base_url: DEFAULT_BASE_URL.into(),
            page_size: 100,
            max_records: 1000,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TemplatePaths {
    pub map: Option<PathBuf>,
    pub reduce: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub device: Option<String>,
    pub field: Option<MedicalField>,
    pub recency: Option<RecencyClass>,
    pub backend: BackendKind,
    pub pipeline: PipelineConfig,
    pub http: HttpBackendConfig,
    pub registry: RegistrySettings,
    pub templates: TemplatePaths,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}
