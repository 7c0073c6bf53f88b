use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::template::{PromptTemplate, FORMAT_REQUIREMENT};

/// Rewriter system prompt for system-prompt variants. `N` is replaced by the
/// per-request batch size.
pub const SYSTEM_REWRITER_SYSTEM: &str = r#"You are a prompt rewriter.

Rewrite the provided SYSTEM PROMPT into N distinct SYSTEM PROMPT variants that
preserve meaning, constraints, and all factual task content, while changing
phrasing, structure, and formatting.

Hard constraints (must obey):
- Do NOT add, remove, rename, or reorder any class names.
- Do NOT alter the semantic meaning of any class description.
- Preserve answer-choice letters (e.g., [A], [B]) exactly and in order.
- Preserve required output format strings exactly (punctuation/casing),
  e.g., "The answer is [X] CLASS_NAME".
- Do NOT introduce new task instructions (e.g., reasoning, confidence).
- Maintain an academically appropriate tone.

Diversity requirements:
- Each variant must differ meaningfully in organization and wording.
- Use multiple presentation styles (headings, bullets, numbered steps, etc.).
- Avoid trivial paraphrases.

Output format (strict): return valid JSON only:
{
  "variants": [
    {"id": 1, "system_prompt": "..."},
    {"id": 2, "system_prompt": "..."}
  ]
}
No extra keys. No markdown. No commentary."#;

pub const SYSTEM_REWRITER_USER: &str = r#"Generate B rewritten variants of the following.

IMPORTANT:
- Do NOT change class names.
- Do NOT change answer letters or their order.
- Do NOT change the required answer format.
- Output must be valid JSON only.

<BASE_SYSTEM_PROMPT>"#;

pub const QUESTION_REWRITER_SYSTEM: &str = r#"You are a question rewriter.

Your task is to rewrite a GENERAL QUESTION into N distinct variants that preserve
the task, label space, and decision criteria, while changing wording, structure,
and phrasing.

Hard constraints (must obey):
- Do NOT change, rename, remove, or reorder answer choices.
- Preserve answer-choice letters exactly (e.g., [A], [B]) and their order.
- Do NOT introduce new labels, hints, or constraints.
- Do NOT add explanations, reasoning instructions, or output formatting rules.
- The rewritten question must ask the same classification decision.

Diversity requirements:
- Each variant must differ meaningfully in wording and structure.
- Vary tone (instructional vs. role-based), sentence structure, and framing.
- Avoid trivial paraphrases.

Output format (strict): return valid JSON only:
{
  "variants": [
    {"id": 1, "question": "..."},
    {"id": 2, "question": "..."}
  ]
}
No extra keys. No markdown. No commentary."#;

pub const QUESTION_REWRITER_USER: &str = r#"Generate B rewritten variants of the following.

IMPORTANT:
- Do NOT change the answer choice letters, names, or their order.
- Do NOT add output formatting rules.
- Do NOT add reasoning/explanation instructions.
- Output must be valid JSON only.

<BASE_GENERAL_QUESTION>"#;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariantTarget {
    System,
    Question,
}

impl VariantTarget {
    pub fn as_str(self) -> &'static str {
        match self {
            VariantTarget::System => "system",
            VariantTarget::Question => "question",
        }
    }

    fn json_key(self) -> &'static str {
        match self {
            VariantTarget::System => "system_prompt",
            VariantTarget::Question => "question",
        }
    }

    /// The text a rewriter is asked to vary.
    pub fn base_text(self, template: &PromptTemplate) -> String {
        match self {
            VariantTarget::System => template.render_system(),
            VariantTarget::Question => template.question.clone(),
        }
    }

    pub fn rewriter_messages(self, base: &str, batch: usize) -> (String, String) {
        let (system, user, placeholder) = match self {
            VariantTarget::System => (
                SYSTEM_REWRITER_SYSTEM,
                SYSTEM_REWRITER_USER,
                "<BASE_SYSTEM_PROMPT>",
            ),
            VariantTarget::Question => (
                QUESTION_REWRITER_SYSTEM,
                QUESTION_REWRITER_USER,
                "<BASE_GENERAL_QUESTION>",
            ),
        };
        (
            system.replacen("into N distinct", &format!("into {batch} distinct"), 1),
            user.replacen("Generate B rewritten", &format!("Generate {batch} rewritten"), 1)
                .replace(placeholder, base),
        )
    }
}

impl fmt::Display for VariantTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for VariantTarget {
    type Err = VariantError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "system" => Ok(VariantTarget::System),
            "question" => Ok(VariantTarget::Question),
            other => Err(VariantError::Config(format!("unknown variant target {other:?}"))),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChatError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("protocol error: {0}")]
    Protocol(String),
}

/// A chat-completion endpoint: one system and one user message in, the
/// assistant's text out.
pub trait ChatClient {
    fn chat(&self, system: &str, user: &str) -> Result<String, ChatError>;
}

/// OpenAI-compatible `chat/completions` client.
#[derive(Debug, Clone)]
pub struct HttpChatClient {
    pub endpoint: String,
    pub model: String,
    pub api_key: Option<String>,
    pub temperature: f64,
    pub timeout: Duration,
}

impl HttpChatClient {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        HttpChatClient {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key: None,
            temperature: 1.0,
            timeout: Duration::from_secs(120),
        }
    }
}

impl ChatClient for HttpChatClient {
    fn chat(&self, system: &str, user: &str) -> Result<String, ChatError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(self.timeout)
            .build()
            .map_err(|e| ChatError::Transport(e.to_string()))?;
        let body = serde_json::json!({
            "model": self.model,
            "temperature": self.temperature,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
        });
        let mut req = client.post(&self.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| ChatError::Transport(e.to_string()))?;
        let status = resp.status();
        let value: serde_json::Value = resp
            .json()
            .map_err(|e| ChatError::Protocol(format!("HTTP {status}: {e}")))?;
        if !status.is_success() {
            return Err(ChatError::Transport(format!("HTTP {status}: {value}")));
        }
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| ChatError::Protocol("response lacks choices[0].message.content".into()))
    }
}

/// A failed hard constraint, numbered as checked.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Violation {
    /// (1) a class name present in the base text is missing.
    MissingClassName(String),
    /// (2) option letters absent or out of their original order.
    LetterOrder { expected: Vec<char>, found: Vec<char> },
    /// (3) the required answer format string is missing (system targets).
    MissingFormatRequirement,
    /// (4) a bracketed letter that the base text never used.
    NewOptionLetter(char),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::MissingClassName(n) => write!(f, "class name {n:?} missing"),
            Violation::LetterOrder { expected, found } => {
                write!(f, "option letters {found:?} do not match {expected:?}")
            }
            Violation::MissingFormatRequirement => {
                write!(f, "format requirement {FORMAT_REQUIREMENT:?} missing")
            }
            Violation::NewOptionLetter(c) => write!(f, "new option letter [{c}]"),
        }
    }
}

fn bracket_letters(text: &str) -> Vec<char> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"\[([A-Z])\]").expect("valid regex"));
    re.captures_iter(text)
        .filter_map(|c| c.get(1)?.as_str().chars().next())
        .collect()
}

fn first_appearance(letters: &[char], keep: impl Fn(char) -> bool) -> Vec<char> {
    let mut out = Vec::new();
    for &l in letters {
        if keep(l) && !out.contains(&l) {
            out.push(l);
        }
    }
    out
}

/// Check a rewritten text against the base template's hard constraints.
pub fn validate_variant(
    variant_text: &str,
    base_template: &PromptTemplate,
    target: VariantTarget,
) -> Result<(), Vec<Violation>> {
    let base = target.base_text(base_template);
    let mut violations = Vec::new();

    for name in &base_template.class_names {
        if base.contains(name.as_str()) && !variant_text.contains(name.as_str()) {
            violations.push(Violation::MissingClassName(name.clone()));
        }
    }

    let option_letters: Vec<char> = base_template.options().iter().map(|o| o.letter).collect();
    let base_letters = bracket_letters(&base);
    let variant_letters = bracket_letters(variant_text);
    let expected = first_appearance(&base_letters, |l| option_letters.contains(&l));
    let found = first_appearance(&variant_letters, |l| expected.contains(&l));
    if found != expected {
        violations.push(Violation::LetterOrder { expected, found });
    }

    if target == VariantTarget::System && !variant_text.contains(FORMAT_REQUIREMENT) {
        violations.push(Violation::MissingFormatRequirement);
    }

    for l in first_appearance(&variant_letters, |l| !base_letters.contains(&l)) {
        violations.push(Violation::NewOptionLetter(l));
    }

    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VariantError {
    #[error("rewriter returned malformed output after {attempts} attempt(s): {detail}")]
    RewriterFormat { attempts: usize, detail: String },
    #[error("variant {id} rejected: {}", .violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    VariantRejected { id: usize, violations: Vec<Violation> },
    #[error(transparent)]
    Chat(#[from] ChatError),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("variant set I/O: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variant {
    pub id: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSet {
    pub base_template: PromptTemplate,
    pub template_hash: String,
    pub target: VariantTarget,
    pub variants: Vec<Variant>,
}

impl VariantSet {
    /// Ids contiguous from 1 and every member passes validation.
    pub fn check(&self) -> Result<(), VariantError> {
        for (i, v) in self.variants.iter().enumerate() {
            if v.id != i + 1 {
                return Err(VariantError::Config(format!(
                    "variant ids not contiguous: position {i} has id {}",
                    v.id
                )));
            }
            validate_variant(&v.text, &self.base_template, self.target)
                .map_err(|violations| VariantError::VariantRejected { id: v.id, violations })?;
        }
        Ok(())
    }

    /// Template with variant `id` substituted for the target text.
    pub fn apply(&self, id: usize) -> Option<PromptTemplate> {
        let v = self.variants.iter().find(|v| v.id == id)?;
        let mut t = self.base_template.clone();
        match self.target {
            VariantTarget::System => t.system_prompt = Some(v.text.clone()),
            VariantTarget::Question => t.question = v.text.clone(),
        }
        Some(t)
    }

    pub fn default_path(dir: &Path, template: &PromptTemplate, target: VariantTarget) -> PathBuf {
        dir.join(format!("{}-{}.json", &template.content_hash()[..16], target))
    }

    pub fn save(&self, path: &Path) -> Result<(), VariantError> {
        let json = serde_json::to_vec_pretty(self).map_err(|e| VariantError::Io(e.to_string()))?;
        crate::dataset::write_atomic(path, &json).map_err(|e| VariantError::Io(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, VariantError> {
        let bytes = fs::read(path).map_err(|e| VariantError::Io(format!("{}: {e}", path.display())))?;
        let set: VariantSet = serde_json::from_slice(&bytes).map_err(|e| VariantError::Io(e.to_string()))?;
        set.check()?;
        Ok(set)
    }
}

/// Parse the strict `{"variants":[{"id":..,"<key>":..}]}` envelope.
fn parse_envelope(body: &str, target: VariantTarget, expected: usize) -> Result<Vec<String>, String> {
    let trimmed = body.trim();
    if !trimmed.starts_with('{') {
        return Err("response is not a bare JSON object".into());
    }
    let value: serde_json::Value = serde_json::from_str(trimmed).map_err(|e| e.to_string())?;
    let obj = value.as_object().ok_or("top level is not an object")?;
    if obj.len() != 1 {
        return Err("envelope must contain only \"variants\"".into());
    }
    let items = obj
        .get("variants")
        .and_then(|v| v.as_array())
        .ok_or("missing \"variants\" array")?;
    if items.len() != expected {
        return Err(format!("expected {expected} variants, got {}", items.len()));
    }
    let key = target.json_key();
    let mut out = Vec::with_capacity(items.len());
    for item in items {
        let o = item.as_object().ok_or("variant is not an object")?;
        if o.len() != 2 || !o.get("id").is_some_and(|v| v.is_u64()) {
            return Err(format!("variant must have exactly \"id\" and {key:?}"));
        }
        let text = o
            .get(key)
            .and_then(|v| v.as_str())
            .filter(|s| !s.trim().is_empty())
            .ok_or_else(|| format!("variant lacks a non-empty {key:?}"))?;
        out.push(text.to_string());
    }
    Ok(out)
}

/// Request `total_n` variants in batches of `batch_b`, retrying malformed
/// responses up to `max_retries` times per batch, renumbering ids globally
/// and validating every variant.
pub fn generate_variants(
    template: &PromptTemplate,
    target: VariantTarget,
    rewriter: &dyn ChatClient,
    total_n: usize,
    batch_b: usize,
    max_retries: usize,
) -> Result<VariantSet, VariantError> {
    if batch_b == 0 || total_n == 0 || !total_n.is_multiple_of(batch_b) {
        return Err(VariantError::Config(format!(
            "total {total_n} must be a positive multiple of batch size {batch_b}"
        )));
    }
    let base = target.base_text(template);
    let (system, user) = target.rewriter_messages(&base, batch_b);
    let mut variants = Vec::with_capacity(total_n);
    for _ in 0..total_n / batch_b {
        let mut attempts = 0;
        let texts = loop {
            attempts += 1;
            let body = rewriter.chat(&system, &user)?;
            match parse_envelope(&body, target, batch_b) {
                Ok(t) => break t,
                Err(detail) if attempts > max_retries => {
                    return Err(VariantError::RewriterFormat { attempts, detail })
                }
                Err(detail) => log::warn!("rewriter output rejected ({detail}); retrying"),
            }
        };
        for text in texts {
            let id = variants.len() + 1;
            validate_variant(&text, template, target)
                .map_err(|violations| VariantError::VariantRejected { id, violations })?;
            variants.push(Variant { id, text });
        }
    }
    Ok(VariantSet {
        base_template: template.clone(),
        template_hash: template.content_hash(),
        target,
        variants,
    })
}
