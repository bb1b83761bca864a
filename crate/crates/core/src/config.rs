//! Service configuration file (TOML).
//!
//! The API key is never part of the file; providers read it from the
//! environment.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::facilitation::{default_hat_configs, HatRegistry, RegistryError};
use crate::llm::{ChatProvider, ContextBudget, Gateway, OpenAiCompatible, ScriptedProvider};
use crate::model::Hat;
use crate::scheduler::{InvalidConfig, SchedulerConfig};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub scheduler: SchedulerConfig,
    pub session: SessionSection,
    pub provider: ProviderConfig,
    pub server: ServerSection,
    pub hats: BTreeMap<Hat, HatOverride>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionSection {
    pub group_size: usize,
}

impl Default for SessionSection {
    fn default() -> Self {
        SessionSection { group_size: 3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    #[default]
    Scripted,
    Openai,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    pub base_url: String,
    pub model: String,
    /// Replies for the scripted provider, consumed in order.
    pub script: Vec<String>,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            kind: ProviderKind::Scripted,
            base_url: "https://api.openai.com/v1".into(),
            model: "gpt-4".into(),
            script: vec!["Good".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerSection {
    pub bind: String,
    pub data_dir: PathBuf,
}

impl Default for ServerSection {
    fn default() -> Self {
        ServerSection {
            bind: "127.0.0.1:8080".into(),
            data_dir: PathBuf::from("data"),
        }
    }
}

/// Per-hat changes on top of the built-in table.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HatOverride {
    pub role_name: Option<String>,
    pub macro_prompt: Option<String>,
    pub situational_templates: Option<Vec<String>>,
    pub divergent_priority: Option<u8>,
    pub convergent_priority: Option<u8>,
    pub temperature: Option<f64>,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Parse(String),
    #[error(transparent)]
    Invalid(#[from] InvalidConfig),
}

impl ServiceConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        // The toml error display quotes the offending source line, which may hold a secret.
        let cfg: ServiceConfig = toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| text[..s.start].matches('\n').count() + 1);
            ConfigError::Parse(match line {
                Some(n) => format!("line {n}: {}", e.message()),
                None => e.message().to_string(),
            })
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), InvalidConfig> {
        self.scheduler.validate()?;
        if self.session.group_size < 2 {
            return Err(InvalidConfig::new("session.group_size", "must be at least 2"));
        }
        if self.provider.kind == ProviderKind::Scripted && self.provider.script.is_empty() {
            return Err(InvalidConfig::new("provider.script", "must not be empty"));
        }
        if self.provider.kind == ProviderKind::Openai && self.provider.base_url.trim().is_empty() {
            return Err(InvalidConfig::new("provider.base_url", "must not be empty"));
        }
        self.hat_registry()?;
        Ok(())
    }

    /// The built-in hat table with `[hats.*]` overrides applied.
    pub fn hat_registry(&self) -> Result<HatRegistry, InvalidConfig> {
        let mut configs = default_hat_configs();
        for c in &mut configs {
            let Some(o) = self.hats.get(&c.hat) else { continue };
            if let Some(v) = &o.role_name {
                c.role_name = v.clone();
            }
            if let Some(v) = &o.macro_prompt {
                c.macro_prompt = v.clone();
            }
            if let Some(v) = &o.situational_templates {
                c.situational_templates = v.clone();
            }
            if let Some(v) = o.divergent_priority {
                c.divergent_priority = v;
            }
            if let Some(v) = o.convergent_priority {
                c.convergent_priority = v;
            }
            if let Some(v) = o.temperature {
                c.temperature = v;
            }
        }
        HatRegistry::new(configs).map_err(|e| {
            let key = match &e {
                RegistryError::Duplicate(h) | RegistryError::Missing(h) => format!("hats.{h}"),
                RegistryError::Priorities { phase, .. } => format!("hats.*.{phase}_priority"),
                RegistryError::Temperature { hat, .. } => format!("hats.{hat}.temperature"),
                RegistryError::EmptyPrompt(h) => format!("hats.{h}.macro_prompt"),
            };
            InvalidConfig::new(key, e.to_string())
        })
    }

    pub fn provider(&self) -> Result<Arc<dyn ChatProvider>, InvalidConfig> {
        Ok(match self.provider.kind {
            ProviderKind::Scripted => Arc::new(
                ScriptedProvider::new(self.provider.script.iter().cloned())
                    .map_err(|e| InvalidConfig::new("provider.script", e.to_string()))?,
            ),
            ProviderKind::Openai => Arc::new(OpenAiCompatible::from_env(
                &self.provider.base_url,
                &self.provider.model,
            )),
        })
    }

    pub fn gateway(&self) -> Result<Gateway, InvalidConfig> {
        Ok(Gateway::new(self.provider()?, ContextBudget::default()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_example_is_valid() {
        let cfg = ServiceConfig::from_toml(include_str!("../../../config/example.toml")).unwrap();
        assert_eq!(cfg.scheduler, SchedulerConfig::default());
        cfg.hat_registry().unwrap();
    }

    #[test]
    fn parse_errors_do_not_echo_values() {
        let e = ServiceConfig::from_toml("[provider]\napi_key = \"sk-secret\"\n").unwrap_err();
        let msg = e.to_string();
        assert!(msg.starts_with("line 2:"), "{msg}");
        assert!(msg.contains("api_key") && !msg.contains("sk-secret"), "{msg}");
    }

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = ServiceConfig::from_toml("").unwrap();
        assert_eq!(cfg, ServiceConfig::default());
        assert_eq!(cfg.scheduler.tick_interval_ms, 30_000);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = ServiceConfig::from_toml("[scheduler]\ntick_intervall_ms = 5\n").unwrap_err();
        assert!(err.to_string().contains("tick_intervall_ms"), "{err}");
    }

    #[test]
    fn bad_value_is_named() {
        let err = ServiceConfig::from_toml("[scheduler]\nphase_boundary_ms = 2000000\n").unwrap_err();
        assert!(err.to_string().contains("scheduler.phase_boundary_ms"), "{err}");
        let err = ServiceConfig::from_toml("[session]\ngroup_size = 1\n").unwrap_err();
        assert!(err.to_string().contains("session.group_size"), "{err}");
    }

    #[test]
    fn api_key_is_not_a_config_field() {
        let err = ServiceConfig::from_toml("[provider]\napi_key = \"sk-x\"\n").unwrap_err();
        assert!(err.to_string().contains("api_key"));
    }

    #[test]
    fn hat_overrides_apply_and_validate() {
        let cfg = ServiceConfig::from_toml("[hats.red]\ntemperature = 0.2\n").unwrap();
        assert_eq!(cfg.hat_registry().unwrap().get(Hat::Red).temperature, 0.2);
        let err = ServiceConfig::from_toml("[hats.red]\ndivergent_priority = 1\n").unwrap_err();
        assert!(err.to_string().contains("priority"), "{err}");
        let err = ServiceConfig::from_toml("[hats.purple]\ntemperature = 0.2\n").unwrap_err();
        assert!(err.to_string().contains("purple"), "{err}");
    }
}
