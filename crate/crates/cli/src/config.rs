//! Run configuration with layered precedence: command-line flags override
//! `SUITEGAP_*` environment variables, which override the JSON config file.

use anyhow::{Context, Result};
use serde::Deserialize;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use suitegap_core::analyzer::{BackendConfig, ChatBackend, HttpBackend, ScriptedBackend};
use suitegap_core::promptgen::PromptTemplate;
use suitegap_core::retriever::DEFAULT_K;

pub const DEFAULT_BUDGET: usize = 8000;
pub const DEFAULT_PARALLELISM: usize = 4;
pub const ALLOWED_SHOTS: [usize; 4] = [0, 3, 6, 9];

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub backend: BackendSection,
    pub retrieval: RetrievalSection,
    pub few_shot_k: Option<usize>,
    pub budget: Option<usize>,
    pub parallelism: Option<usize>,
    pub template_path: Option<PathBuf>,
    /// Lifts the 0/3/6/9 restriction on `--shots`.
    pub allow_any_shots: bool,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackendSection {
    pub endpoint_url: Option<String>,
    pub model_name: Option<String>,
    pub temperature: Option<f64>,
    pub max_retries: Option<u32>,
    pub timeout_secs: Option<u64>,
    pub api_key_env: Option<String>,
    pub requests_per_minute: Option<u32>,
    pub max_in_flight: Option<usize>,
    /// When present, replies come from this script instead of the network.
    pub scripted: Option<ScriptedSection>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScriptedSection {
    pub replies: BTreeMap<String, OneOrMany>,
    pub default_reply: String,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany {
    One(String),
    Many(Vec<String>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrievalSection {
    pub enabled: bool,
    pub k: usize,
}

impl Default for RetrievalSection {
    fn default() -> Self {
        RetrievalSection {
            enabled: false,
            k: DEFAULT_K,
        }
    }
}

impl RunConfig {
    /// Load the file (when given) and fold in environment overrides.
    pub fn load(path: Option<&Path>) -> Result<RunConfig> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("cannot read config {}", p.display()))?;
                serde_json::from_str(&text)
                    .with_context(|| format!("bad config {}", p.display()))?
            }
            None => RunConfig::default(),
        };
        cfg.apply_env()?;
        Ok(cfg)
    }

    fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var("SUITEGAP_ENDPOINT") {
            self.backend.endpoint_url = Some(v);
        }
        if let Ok(v) = std::env::var("SUITEGAP_MODEL") {
            self.backend.model_name = Some(v);
        }
        if let Ok(v) = std::env::var("SUITEGAP_BUDGET") {
            self.budget = Some(v.parse().context("SUITEGAP_BUDGET must be a number")?);
        }
        if let Ok(v) = std::env::var("SUITEGAP_PARALLELISM") {
            self.parallelism = Some(v.parse().context("SUITEGAP_PARALLELISM must be a number")?);
        }
        Ok(())
    }

    pub fn budget(&self) -> usize {
        self.budget.unwrap_or(DEFAULT_BUDGET)
    }

    pub fn parallelism(&self) -> usize {
        self.parallelism.unwrap_or(DEFAULT_PARALLELISM).max(1)
    }

    pub fn max_retries(&self) -> u32 {
        self.backend.max_retries.unwrap_or(2)
    }

    /// Name recorded in audit lines.
    pub fn model_label(&self) -> String {
        match (&self.backend.model_name, &self.backend.scripted) {
            (Some(name), _) => name.clone(),
            (None, Some(_)) => "scripted".to_string(),
            (None, None) => String::new(),
        }
    }

    pub fn build_backend(&self) -> Result<Arc<dyn ChatBackend>> {
        if let Some(script) = &self.backend.scripted {
            let mut backend = ScriptedBackend::new(script.default_reply.clone());
            for (id, reply) in &script.replies {
                backend = match reply {
                    OneOrMany::One(text) => backend.with_reply(id.clone(), text.clone()),
                    OneOrMany::Many(seq) => backend.with_sequence(id.clone(), seq.clone()),
                };
            }
            return Ok(Arc::new(backend));
        }
        let endpoint = self
            .backend
            .endpoint_url
            .clone()
            .context("backend endpoint_url is not configured")?;
        let model = self
            .backend
            .model_name
            .clone()
            .context("backend model_name is not configured")?;
        let mut cfg = BackendConfig::new(endpoint, model);
        if let Some(t) = self.backend.temperature {
            cfg.temperature = t;
        }
        cfg.max_retries = self.max_retries();
        if let Some(secs) = self.backend.timeout_secs {
            cfg.timeout = Duration::from_secs(secs);
        }
        cfg.api_key_env = self.backend.api_key_env.clone();
        cfg.requests_per_minute = self.backend.requests_per_minute;
        if let Some(n) = self.backend.max_in_flight {
            cfg.max_in_flight = n;
        }
        Ok(Arc::new(HttpBackend::new(cfg)?))
    }

    /// Prompt template: flag path, then config path, then the built-in.
    pub fn load_template(&self, flag: Option<&Path>) -> Result<PromptTemplate> {
        load_template_file(flag.or(self.template_path.as_deref()))
    }
}

/// Parse a template file, or fall back to the built-in wording.
pub fn load_template_file(path: Option<&Path>) -> Result<PromptTemplate> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("cannot read template {}", p.display()))?;
            PromptTemplate::parse(&text).with_context(|| format!("bad template {}", p.display()))
        }
        None => Ok(PromptTemplate::default()),
    }
}
