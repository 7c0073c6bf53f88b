//! Adapter for an out-of-process model server speaking JSON over HTTP.
//!
//! Routes, all relative to the endpoint:
//! - `GET  /info` → `{"spec": AdapterSpec, "version": "...", "max_context_tokens": n?}`
//! - `POST /generate` `{"bundle", "params", "control_seed"}` → `{"texts": [...]}`
//! - `POST /hidden_states` `{"bundle", "style", "control_seed"}` →
//!   `{"rows", "cols", "matrix"}`
//!
//! Context overflows come back as HTTP 413 with `{"tokens", "limit"}`.

use std::thread;
use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{
    check_images, ActivationRecord, AdapterSpec, BridgeError, ExtractionStyle, ModelAdapter, SamplingParams,
};
use crate::prompting::PromptBundle;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Info {
    spec: AdapterSpec,
    version: String,
}

#[derive(Debug, Deserialize)]
struct Texts {
    texts: Vec<String>,
}

#[derive(Debug, Deserialize)]
struct States {
    rows: usize,
    cols: usize,
    matrix: Vec<f32>,
}

#[derive(Debug, Clone)]
pub struct HttpModelAdapter {
    base: String,
    client: Client,
    retries: usize,
    info: Info,
    control_seed: Option<u64>,
}

impl HttpModelAdapter {
    pub fn connect(
        endpoint: &str,
        name: &str,
        timeout: Duration,
        retries: usize,
    ) -> Result<Self, BridgeError> {
        let client = Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| BridgeError::Backend(e.to_string()))?;
        let base = endpoint.trim_end_matches('/').to_string();
        let mut adapter = HttpModelAdapter {
            base,
            client,
            retries,
            info: Info {
                spec: AdapterSpec {
                    name: name.to_string(),
                    num_layers: 0,
                    hidden_dim: 0,
                    supports_images: false,
                },
                version: String::new(),
            },
            control_seed: None,
        };
        let info: Info = serde_json::from_value(adapter.call("info", None)?)
            .map_err(|e| BridgeError::Backend(format!("bad /info reply: {e}")))?;
        adapter.info = info;
        if adapter.info.spec.name.is_empty() {
            adapter.info.spec.name = name.to_string();
        }
        Ok(adapter)
    }

    fn call(&self, route: &str, body: Option<&Value>) -> Result<Value, BridgeError> {
        let url = format!("{}/{route}", self.base);
        let mut last = String::new();
        for attempt in 0..=self.retries {
            if attempt > 0 {
                thread::sleep(Duration::from_millis(250 << attempt.min(5)));
            }
            let req = match body {
                Some(b) => self.client.post(&url).json(b),
                None => self.client.get(&url),
            };
            let resp = match req.send() {
                Ok(r) => r,
                Err(e) => {
                    last = e.to_string();
                    log::warn!("{url}: attempt {} failed: {last}", attempt + 1);
                    continue;
                }
            };
            let status = resp.status();
            let value: Value = resp
                .json()
                .map_err(|e| BridgeError::Backend(format!("{url}: HTTP {status}: {e}")))?;
            if status == StatusCode::PAYLOAD_TOO_LARGE {
                return Err(BridgeError::ContextLength {
                    tokens: value["tokens"].as_u64().unwrap_or(0) as usize,
                    limit: value["limit"].as_u64().unwrap_or(0) as usize,
                });
            }
            if status.is_server_error() {
                last = format!("HTTP {status}: {value}");
                continue;
            }
            if !status.is_success() {
                return Err(BridgeError::Backend(format!("{url}: HTTP {status}: {value}")));
            }
            return Ok(value);
        }
        Err(BridgeError::Backend(format!("{url}: {last}")))
    }
}

impl ModelAdapter for HttpModelAdapter {
    fn spec(&self) -> &AdapterSpec {
        &self.info.spec
    }

    fn version(&self) -> String {
        match self.control_seed {
            Some(seed) => format!("{}:random-{seed}", self.info.version),
            None => self.info.version.clone(),
        }
    }

    fn generate(&self, bundle: &PromptBundle, params: &SamplingParams) -> Result<Vec<String>, BridgeError> {
        params.validate()?;
        check_images(&self.info.spec, bundle)?;
        let body = json!({"bundle": bundle, "params": params, "control_seed": self.control_seed});
        let out: Texts = serde_json::from_value(self.call("generate", Some(&body))?)
            .map_err(|e| BridgeError::Backend(format!("bad /generate reply: {e}")))?;
        if out.texts.len() != params.num_samples {
            return Err(BridgeError::Backend(format!(
                "asked for {} completions, got {}",
                params.num_samples,
                out.texts.len()
            )));
        }
        Ok(out.texts)
    }

    fn hidden_states(
        &self,
        bundle: &PromptBundle,
        style: ExtractionStyle,
    ) -> Result<ActivationRecord, BridgeError> {
        check_images(&self.info.spec, bundle)?;
        let body = json!({"bundle": bundle, "style": style, "control_seed": self.control_seed});
        let out: States = serde_json::from_value(self.call("hidden_states", Some(&body))?)
            .map_err(|e| BridgeError::Backend(format!("bad /hidden_states reply: {e}")))?;
        let spec = &self.info.spec;
        if (out.rows, out.cols) != (spec.num_layers + 1, spec.hidden_dim) {
            return Err(BridgeError::Backend(format!(
                "hidden states are {}×{}, model reports {}×{}",
                out.rows,
                out.cols,
                spec.num_layers + 1,
                spec.hidden_dim
            )));
        }
        ActivationRecord::new(bundle, style, out.rows, out.cols, out.matrix)
    }

    fn random_control(&self, seed: u64) -> Result<Box<dyn ModelAdapter>, BridgeError> {
        let mut control = self.clone();
        control.control_seed = Some(seed);
        Ok(Box::new(control))
    }
}
