//! TOML run configuration.
//!
//! ```toml
//! [attack]
//! param_iters = 20
//! image_iters = 40
//! resize_count = 5
//! seed = 7
//!
//! [backend]
//! kind = "surrogate"            # or "remote"
//! endpoint = "http://127.0.0.1:8900"
//!
//! [recommender]
//! endpoint = "https://api.example.com/v1/chat/completions"
//! api_key_env = "LIGHTD_API_KEY"
//!
//! [harness]
//! workers = 4
//! niqe_model = "niqe.json"
//! ```
//!
//! Relative paths are resolved against the configuration file's directory.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::attack::AttackConfig;
use crate::error::{Error, Result};
use crate::recommender::{Recommender, RecommenderConfig};
use crate::relight::{RemoteRelighter, SurrogateRelightConfig, SurrogateRelighter};
use crate::victim::{RemoteVictim, SurrogateVictim, SurrogateVictimConfig};
use crate::wire::{RemoteClient, RemoteConfig};

use super::batch::{Backends, RetrievalCaptioner};
use super::synthetic::caption_pool;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Surrogate,
    Remote,
}

impl std::str::FromStr for BackendKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "surrogate" => Ok(Self::Surrogate),
            "remote" => Ok(Self::Remote),
            other => Err(Error::Parse(format!("unknown backend kind {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub endpoint: Option<String>,
    pub timeout_secs: f64,
    pub max_in_flight: usize,
}

impl Default for BackendConfig {
    fn default() -> Self {
        let remote = RemoteConfig::new("");
        Self {
            kind: BackendKind::Surrogate,
            endpoint: None,
            timeout_secs: remote.timeout_secs,
            max_in_flight: remote.max_in_flight,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurrogateConfig {
    pub relight: SurrogateRelightConfig,
    pub victim: SurrogateVictimConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarnessConfig {
    pub workers: usize,
    /// Fitted NIQE model; NIQE columns are omitted without one.
    pub niqe_model: Option<PathBuf>,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self {
            workers: 1,
            niqe_model: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub attack: AttackConfig,
    pub backend: BackendConfig,
    pub surrogate: SurrogateConfig,
    pub recommender: RecommenderConfig,
    pub harness: HarnessConfig,
}

fn resolve(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        resolve(base, &mut cfg.harness.niqe_model);
        resolve(base, &mut cfg.recommender.prompt_template);
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.attack.validate()?;
        self.surrogate.relight.validate()?;
        if self.harness.workers == 0 {
            return Err(Error::invalid("harness.workers must be at least 1"));
        }
        if self.backend.kind == BackendKind::Remote && self.backend.endpoint.is_none() {
            return Err(Error::invalid("remote backend needs backend.endpoint"));
        }
        Ok(())
    }

    /// Instantiates the configured backends. Surrogate mode also gets a retrieval
    /// captioner over the synthetic caption pool plus the manifest's captions.
    pub fn build_backends(&self, extra_captions: &[String]) -> Result<Backends> {
        self.validate()?;
        let recommender = Arc::new(Recommender::new(self.recommender.clone())?);
        match self.backend.kind {
            BackendKind::Surrogate => {
                let victim = SurrogateVictim::new(self.surrogate.victim)?;
                let mut pool = caption_pool();
                pool.extend(extra_captions.iter().cloned());
                let captioner = RetrievalCaptioner::new(victim.matcher().clone(), pool)?;
                Ok(Backends {
                    relighter: Arc::new(SurrogateRelighter::new(self.surrogate.relight)?),
                    victim: Arc::new(victim),
                    recommender,
                    captioner: Some(Arc::new(captioner)),
                })
            }
            BackendKind::Remote => {
                let endpoint = self.backend.endpoint.clone().expect("validated");
                let client = Arc::new(RemoteClient::new(RemoteConfig {
                    endpoint,
                    timeout_secs: self.backend.timeout_secs,
                    max_in_flight: self.backend.max_in_flight,
                }));
                Ok(Backends {
                    relighter: Arc::new(RemoteRelighter::new(client.clone())),
                    victim: Arc::new(RemoteVictim::new(client)),
                    recommender,
                    captioner: None,
                })
            }
        }
    }
}
