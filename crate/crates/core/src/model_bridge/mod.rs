//! Uniform access to chat models: generation, per-layer final-token hidden
//! states, random-weight controls, and an on-disk activation store.

mod http;
mod store;
mod stub;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompting::{PromptBundle, PromptError};

pub use http::HttpModelAdapter;
pub use store::{extract_dataset, ActivationStore, ExtractionSummary, SkipRecord, StoreKey, StoreMeta};
pub use stub::{StubAdapter, StubAnswer, StubConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BridgeError {
    #[error("prompt of {tokens} tokens exceeds the context window of {limit}")]
    ContextLength { tokens: usize, limit: usize },
    #[error("backend error: {0}")]
    Backend(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("activation store error: {0}")]
    Store(String),
    #[error("{skipped} of {total} samples skipped, above the allowed fraction {threshold}")]
    TooManySkips {
        skipped: usize,
        total: usize,
        threshold: f64,
    },
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

impl From<std::io::Error> for BridgeError {
    fn from(e: std::io::Error) -> Self {
        BridgeError::Store(e.to_string())
    }
}

/// Static description of a model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdapterSpec {
    pub name: String,
    /// Transformer blocks; hidden states have `num_layers + 1` rows.
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub supports_images: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub temperature: f64,
    pub top_p: f64,
    pub max_new_tokens: usize,
    pub seed: u64,
    pub num_samples: usize,
}

impl SamplingParams {
    /// Single greedy completion.
    pub fn greedy(seed: u64) -> Self {
        SamplingParams {
            temperature: 0.0,
            top_p: 1.0,
            max_new_tokens: 256,
            seed,
            num_samples: 1,
        }
    }

    /// `n` stochastic completions at temperature 0.7, nucleus 0.95.
    pub fn sampled(n: usize, seed: u64) -> Self {
        SamplingParams {
            temperature: 0.7,
            top_p: 0.95,
            max_new_tokens: 256,
            seed,
            num_samples: n,
        }
    }

    pub fn validate(&self) -> Result<(), BridgeError> {
        if self.num_samples == 0 {
            return Err(BridgeError::Precondition("num_samples must be positive".into()));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(BridgeError::Precondition("temperature must be ≥ 0".into()));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(BridgeError::Precondition("top_p must lie in (0, 1]".into()));
        }
        if self.num_samples > 1 && self.temperature == 0.0 {
            return Err(BridgeError::Precondition(
                "several samples require temperature > 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractionStyle {
    /// One forward pass; the last prompt position.
    #[default]
    PrefillLastToken,
    /// Generate reasoning first; the last generated position before the
    /// answer line when one is found, else the last generated position.
    PostCotLastToken,
}

impl ExtractionStyle {
    pub fn as_str(self) -> &'static str {
        match self {
            ExtractionStyle::PrefillLastToken => "prefill_last_token",
            ExtractionStyle::PostCotLastToken => "post_cot_last_token",
        }
    }
}

impl fmt::Display for ExtractionStyle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExtractionStyle {
    type Err = BridgeError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "prefill_last_token" | "prefill" => Ok(ExtractionStyle::PrefillLastToken),
            "post_cot_last_token" | "post_cot" => Ok(ExtractionStyle::PostCotLastToken),
            other => Err(BridgeError::Precondition(format!(
                "unknown extraction style {other:?}"
            ))),
        }
    }
}

/// Final-token hidden states of one prompt: `(L+1) × D`, row 0 is the
/// embedding output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationRecord {
    pub sample_id: String,
    pub prompt_hash: String,
    pub style: ExtractionStyle,
    pub rows: usize,
    pub cols: usize,
    pub matrix: Vec<f32>,
}

impl ActivationRecord {
    pub fn new(
        bundle: &PromptBundle,
        style: ExtractionStyle,
        rows: usize,
        cols: usize,
        matrix: Vec<f32>,
    ) -> Result<Self, BridgeError> {
        if matrix.len() != rows * cols {
            return Err(BridgeError::Backend(format!(
                "hidden-state matrix has {} values, expected {rows}×{cols}",
                matrix.len()
            )));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(BridgeError::Backend("non-finite hidden state".into()));
        }
        Ok(ActivationRecord {
            sample_id: bundle.provenance.sample_id.clone(),
            prompt_hash: bundle.prompt_hash(),
            style,
            rows,
            cols,
            matrix,
        })
    }

    pub fn layer(&self, l: usize) -> &[f32] {
        &self.matrix[l * self.cols..(l + 1) * self.cols]
    }
}

/// Behavioral contract shared by every backend.
pub trait ModelAdapter {
    fn spec(&self) -> &AdapterSpec;

    /// Identifier of weights and backend build; part of every cache key.
    fn version(&self) -> String;

    fn generate(&self, bundle: &PromptBundle, params: &SamplingParams) -> Result<Vec<String>, BridgeError>;

    fn hidden_states(
        &self,
        bundle: &PromptBundle,
        style: ExtractionStyle,
    ) -> Result<ActivationRecord, BridgeError>;

    /// Same architecture and processor with freshly initialized weights.
    fn random_control(&self, seed: u64) -> Result<Box<dyn ModelAdapter>, BridgeError>;
}

pub(crate) fn check_images(spec: &AdapterSpec, bundle: &PromptBundle) -> Result<(), BridgeError> {
    if !spec.supports_images && bundle.has_images() {
        return Err(BridgeError::Precondition(format!(
            "{} is text-only but the prompt carries images",
            spec.name
        )));
    }
    Ok(())
}

/// Random-weight control of `reference`, checked to keep its shape.
pub fn make_random_control(
    reference: &dyn ModelAdapter,
    seed: u64,
) -> Result<Box<dyn ModelAdapter>, BridgeError> {
    let control = reference.random_control(seed)?;
    let (r, c) = (reference.spec(), control.spec());
    if (r.num_layers, r.hidden_dim) != (c.num_layers, c.hidden_dim) {
        return Err(BridgeError::Backend(format!(
            "control shape {}×{} differs from reference {}×{}",
            c.num_layers, c.hidden_dim, r.num_layers, r.hidden_dim
        )));
    }
    Ok(control)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "backend")]
pub enum BackendConfig {
    Stub(StubConfig),
    Http {
        endpoint: String,
        #[serde(default = "default_timeout")]
        timeout_secs: u64,
        #[serde(default = "default_retries")]
        retries: usize,
    },
}

fn default_timeout() -> u64 {
    600
}

fn default_retries() -> usize {
    2
}

/// Adapter config file: backend, model identifier, device and dtype.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterConfig {
    pub name: String,
    #[serde(default)]
    pub model: String,
    #[serde(default)]
    pub device: String,
    #[serde(default)]
    pub dtype: String,
    #[serde(flatten)]
    pub backend: BackendConfig,
}

impl AdapterConfig {
    pub fn load(path: &Path) -> Result<Self, BridgeError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BridgeError::Backend(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| BridgeError::Backend(e.to_string()))
    }

    pub fn open(&self) -> Result<Box<dyn ModelAdapter>, BridgeError> {
        match &self.backend {
            BackendConfig::Stub(cfg) => {
                let mut cfg = cfg.clone();
                cfg.name = self.name.clone();
                Ok(Box::new(StubAdapter::new(cfg)))
            }
            BackendConfig::Http {
                endpoint,
                timeout_secs,
                retries,
            } => Ok(Box::new(HttpModelAdapter::connect(
                endpoint,
                &self.name,
                std::time::Duration::from_secs(*timeout_secs),
                *retries,
            )?)),
        }
    }
}

/// Token estimate used when a backend does not report one: whitespace
/// words plus a fixed budget per image.
pub(crate) fn estimate_tokens(bundle: &PromptBundle) -> usize {
    bundle.flat_text().split_whitespace().count() + 256 * bundle.all_images().count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampling_param_rules() {
        assert!(SamplingParams::greedy(0).validate().is_ok());
        assert!(SamplingParams::sampled(20, 0).validate().is_ok());
        let mut p = SamplingParams::greedy(0);
        p.num_samples = 2;
        assert!(p.validate().is_err());
        p = SamplingParams::sampled(2, 0);
        p.top_p = 0.0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn adapter_config_parses() {
        let text = r#"
name = "tiny"
model = "stub"
backend = "stub"
num_layers = 3
hidden_dim = 4
"#;
        let cfg: AdapterConfig = toml::from_str(text).unwrap();
        let a = cfg.open().unwrap();
        assert_eq!(a.spec().num_layers, 3);
        assert_eq!(a.spec().name, "tiny");
        let text = r#"
name = "llama"
model = "meta-llama/Llama-3.2-1B-Instruct"
device = "cuda"
dtype = "bfloat16"
backend = "http"
endpoint = "http://127.0.0.1:8765"
"#;
        let cfg: AdapterConfig = toml::from_str(text).unwrap();
        assert!(matches!(cfg.backend, BackendConfig::Http { retries: 2, .. }));
    }
}
