//! Deterministic hash-based stand-in for a transformer.
//!
//! Every hidden-state row is pseudo-random noise keyed by the prompt
//! content, except the signal layer of the "pretrained" weights, which adds
//! `gain · s · u` for a fixed unit direction `u` and a scalar `s` read off the
//! prompt (mean of the decoded digit series, or image darkness when the
//! prompt carries no digits). A random-weight control replaces every row by
//! a seeded random network over the same token embedding and never sees `s`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    check_images, estimate_tokens, ActivationRecord, AdapterSpec, BridgeError, ExtractionStyle, ModelAdapter,
    SamplingParams,
};
use crate::prompting::{PromptBundle, COT_INSTRUCTION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "letter")]
pub enum StubAnswer {
    /// Option chosen by hashing the prompt (and the sample index when
    /// temperature > 0).
    #[default]
    PromptHash,
    /// Always the given option letter.
    Constant(char),
    /// Option `round(s)` clamped to the schema: correct on planted datasets
    /// whose class k sits at level k.
    Signal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StubConfig {
    pub name: String,
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub supports_images: bool,
    pub max_context_tokens: Option<usize>,
    pub answer: StubAnswer,
    pub signal_layer: usize,
    pub signal_gain: f64,
    /// `Some(seed)` selects random-initialized weights.
    pub control_seed: Option<u64>,
}

impl Default for StubConfig {
    fn default() -> Self {
        StubConfig {
            name: "stub".into(),
            num_layers: 2,
            hidden_dim: 8,
            supports_images: true,
            max_context_tokens: None,
            answer: StubAnswer::PromptHash,
            signal_layer: 1,
            signal_gain: 4.0,
            control_seed: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StubAdapter {
    cfg: StubConfig,
    spec: AdapterSpec,
    direction: Vec<f64>,
    /// `num_layers + 1` square matrices for the random control.
    random_weights: Option<Vec<Vec<f64>>>,
}

fn hash_u64(parts: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

fn normals(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Values of the digit series in a user turn, assuming two decimals.
pub(crate) fn decode_digit_series(user_text: &str) -> Option<Vec<f64>> {
    let start = user_text.find("Time series:\n")? + "Time series:\n".len();
    let mut values = Vec::new();
    for line in user_text[start..].lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('(') {
            break;
        }
        let body = match line.split_once(": ") {
            Some((_, rest)) => rest,
            None => line,
        };
        for token in body.split(',') {
            let negative = token.contains('-');
            let digits: String = token.chars().filter(char::is_ascii_digit).collect();
            if digits.is_empty() {
                continue;
            }
            let v = digits.parse::<f64>().ok()? / 100.0;
            values.push(if negative { -v } else { v });
        }
    }
    (!values.is_empty()).then_some(values)
}

/// Mean darkness (1 − luminance) of the decoded images, in `[0, 1]`.
fn image_darkness(images: &[Vec<u8>]) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for bytes in images {
        if let Ok(img) = image::load_from_memory(bytes) {
            let rgb = img.to_rgb8();
            for p in rgb.pixels() {
                let lum = (0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64) / 255.0;
                total += 1.0 - lum;
                count += 1;
            }
        }
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

impl StubAdapter {
    pub fn new(cfg: StubConfig) -> Self {
        let spec = AdapterSpec {
            name: cfg.name.clone(),
            num_layers: cfg.num_layers.max(1),
            hidden_dim: cfg.hidden_dim.max(1),
            supports_images: cfg.supports_images,
        };
        let d = spec.hidden_dim;
        let raw = normals(hash_u64(&[b"direction", spec.name.as_bytes()]), d);
        let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        let direction = raw.iter().map(|x| x / norm).collect();
        let random_weights = cfg.control_seed.map(|seed| {
            (0..=spec.num_layers)
                .map(|l| {
                    let scale = 1.0 / (d as f64).sqrt();
                    normals(
                        hash_u64(&[b"init", &seed.to_le_bytes(), &(l as u64).to_le_bytes()]),
                        d * d,
                    )
                    .into_iter()
                    .map(|w| w * scale)
                    .collect()
                })
                .collect()
        });
        StubAdapter {
            cfg,
            spec,
            direction,
            random_weights,
        }
    }

    pub fn config(&self) -> &StubConfig {
        &self.cfg
    }

    /// Scalar signal carried by a prompt's query turn.
    pub fn signal(bundle: &PromptBundle) -> f64 {
        match decode_digit_series(&bundle.user_text) {
            Some(v) => v.iter().sum::<f64>() / v.len() as f64,
            None => image_darkness(&bundle.images),
        }
    }

    fn content_seed(bundle: &PromptBundle, continuation: &str) -> u64 {
        let text = bundle.flat_text();
        let mut parts: Vec<&[u8]> = vec![text.as_bytes()];
        for img in bundle.all_images() {
            parts.push(img);
        }
        parts.push(continuation.as_bytes());
        hash_u64(&parts)
    }

    /// Hidden states at the end of `bundle` followed by `continuation`.
    pub fn sequence_states(&self, bundle: &PromptBundle, continuation: &str) -> Vec<f32> {
        let d = self.spec.hidden_dim;
        let rows = self.spec.num_layers + 1;
        let seed = Self::content_seed(bundle, continuation);
        let mut out = Vec::with_capacity(rows * d);
        match &self.random_weights {
            None => {
                let s = Self::signal(bundle);
                for l in 0..rows {
                    let mut row = normals(seed ^ (l as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15), d);
                    if l == self.cfg.signal_layer {
                        for (x, u) in row.iter_mut().zip(&self.direction) {
                            *x += self.cfg.signal_gain * s * u;
                        }
                    }
                    out.extend(row.into_iter().map(|x| x as f32));
                }
            }
            Some(weights) => {
                let mut h = normals(seed, d);
                for w in weights {
                    h = (0..d)
                        .map(|i| (0..d).map(|j| w[i * d + j] * h[j]).sum::<f64>().tanh())
                        .collect();
                    out.extend(h.iter().map(|&x| x as f32));
                }
            }
        }
        out
    }

    fn is_cot(bundle: &PromptBundle) -> bool {
        bundle.system_text.contains(COT_INSTRUCTION)
    }

    /// Reasoning text the stub emits before its answer line in CoT style.
    pub fn reasoning(bundle: &PromptBundle) -> String {
        let h = hash_u64(&[b"reasoning", bundle.prompt_hash().as_bytes()]);
        let steps = 1 + (h % 4) as usize;
        (1..=steps)
            .map(|k| {
                format!(
                    "Step {k}: the series shows pattern {:04x}.",
                    (h >> (8 * k)) & 0xffff
                )
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    fn choose(&self, bundle: &PromptBundle, params: &SamplingParams, i: usize) -> usize {
        let c = bundle.answer_schema.len().max(1);
        match self.cfg.answer {
            StubAnswer::Constant(letter) => bundle
                .answer_schema
                .iter()
                .position(|o| o.letter == letter.to_ascii_uppercase())
                .unwrap_or(0),
            StubAnswer::Signal => {
                let s = Self::signal(bundle).round();
                s.clamp(0.0, (c - 1) as f64) as usize
            }
            StubAnswer::PromptHash => {
                let ph = bundle.prompt_hash();
                let h = if params.temperature == 0.0 {
                    hash_u64(&[b"answer", ph.as_bytes(), self.version().as_bytes()])
                } else {
                    hash_u64(&[
                        b"sample",
                        ph.as_bytes(),
                        self.version().as_bytes(),
                        &params.seed.to_le_bytes(),
                        &(i as u64).to_le_bytes(),
                    ])
                };
                (h % c as u64) as usize
            }
        }
    }

    fn check_context(&self, bundle: &PromptBundle) -> Result<(), BridgeError> {
        if let Some(limit) = self.cfg.max_context_tokens {
            let tokens = estimate_tokens(bundle);
            if tokens > limit {
                return Err(BridgeError::ContextLength { tokens, limit });
            }
        }
        Ok(())
    }
}

impl ModelAdapter for StubAdapter {
    fn spec(&self) -> &AdapterSpec {
        &self.spec
    }

    fn version(&self) -> String {
        let weights = match self.cfg.control_seed {
            Some(seed) => format!("random-{seed}"),
            None => format!("pretrained-l{}-g{}", self.cfg.signal_layer, self.cfg.signal_gain),
        };
        format!(
            "stub/1:{}:L{}:D{}:{weights}",
            self.spec.name, self.spec.num_layers, self.spec.hidden_dim
        )
    }

    fn generate(&self, bundle: &PromptBundle, params: &SamplingParams) -> Result<Vec<String>, BridgeError> {
        params.validate()?;
        check_images(&self.spec, bundle)?;
        self.check_context(bundle)?;
        let cot = Self::is_cot(bundle);
        Ok((0..params.num_samples)
            .map(|i| {
                let k = self.choose(bundle, params, i);
                let answer = match bundle.answer_schema.get(k) {
                    Some(o) => format!("The answer is [{}] {}", o.letter, o.name),
                    None => "I cannot tell.".to_string(),
                };
                if cot {
                    format!("{}\n{answer}", Self::reasoning(bundle))
                } else {
                    answer
                }
            })
            .collect())
    }

    fn hidden_states(
        &self,
        bundle: &PromptBundle,
        style: ExtractionStyle,
    ) -> Result<ActivationRecord, BridgeError> {
        check_images(&self.spec, bundle)?;
        self.check_context(bundle)?;
        let continuation = match style {
            ExtractionStyle::PrefillLastToken => String::new(),
            ExtractionStyle::PostCotLastToken => format!("\n{}", Self::reasoning(bundle)),
        };
        let matrix = self.sequence_states(bundle, &continuation);
        ActivationRecord::new(
            bundle,
            style,
            self.spec.num_layers + 1,
            self.spec.hidden_dim,
            matrix,
        )
    }

    fn random_control(&self, seed: u64) -> Result<Box<dyn ModelAdapter>, BridgeError> {
        let mut cfg = self.cfg.clone();
        cfg.control_seed = Some(seed);
        cfg.answer = StubAnswer::PromptHash;
        Ok(Box::new(StubAdapter::new(cfg)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_bridge::make_random_control;
    use crate::prompting::{assemble_prompt, PromptStyle, PromptTemplate};
    use crate::represent::{build_representation, Modality, RepresentConfig};

    fn template(style: PromptStyle) -> PromptTemplate {
        PromptTemplate {
            dataset: "TOY".into(),
            task_description: "Classify the level.".into(),
            question: "Is the level low or high?".into(),
            hints: vec![],
            class_names: vec!["low".into(), "high".into()],
            style,
            shots_per_class: 0,
            system_prompt: None,
        }
    }

    fn bundle(values: &[f64], modality: Modality, style: PromptStyle) -> PromptBundle {
        let rep = build_representation(
            &[values.to_vec()],
            &["x".into()],
            modality,
            &RepresentConfig::default(),
        )
        .unwrap();
        assemble_prompt("toy", "s0", &rep, &template(style), &[]).unwrap()
    }

    #[test]
    fn decodes_digit_series() {
        let b = bundle(&[1.0, -0.5, 2.25], Modality::Digits, PromptStyle::Direct);
        assert_eq!(decode_digit_series(&b.user_text).unwrap(), vec![1.0, -0.5, 2.25]);
        assert_eq!(StubAdapter::signal(&b), 2.75 / 3.0);
    }

    #[test]
    fn shape_contract() {
        let stub = StubAdapter::new(StubConfig {
            num_layers: 2,
            hidden_dim: 4,
            ..StubConfig::default()
        });
        let r = stub
            .hidden_states(
                &bundle(&[1.0], Modality::Digits, PromptStyle::Direct),
                ExtractionStyle::PrefillLastToken,
            )
            .unwrap();
        assert_eq!((r.rows, r.cols, r.matrix.len()), (3, 4, 12));
    }

    #[test]
    fn prefill_is_pure_and_cot_differs() {
        let stub = StubAdapter::new(StubConfig::default());
        let b = bundle(&[0.3, 0.9], Modality::Digits, PromptStyle::Cot);
        let a1 = stub.hidden_states(&b, ExtractionStyle::PrefillLastToken).unwrap();
        let a2 = stub.hidden_states(&b, ExtractionStyle::PrefillLastToken).unwrap();
        assert_eq!(a1, a2);
        // Oracle: prefill ends at the prompt, post-CoT at the end of the reasoning.
        assert_eq!(a1.matrix, stub.sequence_states(&b, ""));
        let cot = stub.hidden_states(&b, ExtractionStyle::PostCotLastToken).unwrap();
        let expected = stub.sequence_states(&b, &format!("\n{}", StubAdapter::reasoning(&b)));
        assert_eq!(cot.matrix, expected);
        assert_ne!(cot.matrix, a1.matrix);
    }

    #[test]
    fn greedy_generation_is_deterministic() {
        let stub = StubAdapter::new(StubConfig::default());
        let b = bundle(&[0.3, 0.9], Modality::Digits, PromptStyle::Direct);
        let p = SamplingParams::greedy(1);
        assert_eq!(stub.generate(&b, &p).unwrap(), stub.generate(&b, &p).unwrap());
        let many = stub.generate(&b, &SamplingParams::sampled(20, 1)).unwrap();
        assert_eq!(many.len(), 20);
        assert!(many.iter().all(|s| s.starts_with("The answer is [")));
    }

    #[test]
    fn cot_generation_has_reasoning_then_answer() {
        let stub = StubAdapter::new(StubConfig::default());
        let b = bundle(&[0.3], Modality::Digits, PromptStyle::Cot);
        let out = &stub.generate(&b, &SamplingParams::greedy(0)).unwrap()[0];
        assert!(out.starts_with("Step 1:"));
        assert!(out.lines().last().unwrap().starts_with("The answer is ["));
    }

    #[test]
    fn text_only_adapter_rejects_images() {
        let stub = StubAdapter::new(StubConfig {
            supports_images: false,
            ..StubConfig::default()
        });
        let b = bundle(&[0.3, 0.4], Modality::Visual, PromptStyle::Direct);
        assert!(matches!(
            stub.generate(&b, &SamplingParams::greedy(0)),
            Err(BridgeError::Precondition(_))
        ));
        assert!(matches!(
            stub.hidden_states(&b, ExtractionStyle::PrefillLastToken),
            Err(BridgeError::Precondition(_))
        ));
    }

    #[test]
    fn context_limit() {
        let stub = StubAdapter::new(StubConfig {
            max_context_tokens: Some(5),
            ..StubConfig::default()
        });
        let b = bundle(&[0.3], Modality::Digits, PromptStyle::Direct);
        assert!(matches!(
            stub.generate(&b, &SamplingParams::greedy(0)),
            Err(BridgeError::ContextLength { limit: 5, .. })
        ));
    }

    #[test]
    fn random_controls() {
        let stub = StubAdapter::new(StubConfig {
            num_layers: 32,
            hidden_dim: 8,
            ..StubConfig::default()
        });
        let c1 = make_random_control(&stub, 7).unwrap();
        let c2 = make_random_control(&stub, 7).unwrap();
        assert_eq!(c1.spec().num_layers, 32);
        assert_eq!(c1.spec().hidden_dim, 8);
        let b = bundle(&[0.3, 0.4], Modality::Digits, PromptStyle::Direct);
        let s = ExtractionStyle::PrefillLastToken;
        let m1 = c1.hidden_states(&b, s).unwrap();
        assert_eq!(m1, c2.hidden_states(&b, s).unwrap());
        let pre = stub.hidden_states(&b, s).unwrap();
        assert!(m1.matrix.iter().zip(&pre.matrix).any(|(a, b)| a != b));
        let c3 = make_random_control(&stub, 8).unwrap();
        assert_ne!(c3.hidden_states(&b, s).unwrap().matrix, m1.matrix);
    }

    #[test]
    fn signal_answer_mode() {
        let stub = StubAdapter::new(StubConfig {
            answer: StubAnswer::Signal,
            ..StubConfig::default()
        });
        let b = bundle(&[0.9, 1.1], Modality::Digits, PromptStyle::Direct);
        let out = stub.generate(&b, &SamplingParams::greedy(0)).unwrap();
        assert_eq!(out[0], "The answer is [B] high");
    }
}
