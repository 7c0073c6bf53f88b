use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::PromptError;
use crate::dataset::option_letters;

/// Required answer line; appears verbatim in every rendered prompt.
pub const FORMAT_REQUIREMENT: &str = "The answer is [X] CLASS_NAME";

const FORMAT_EXAMPLE: &str = "The answer is [D] CABBAGE";

const DIRECT_INSTRUCTION: &str = "Do not explain your reasoning.";

pub const COT_INSTRUCTION: &str =
    "Think step by step: briefly describe the patterns in the time series that \
     distinguish the options, then give your final answer on the last line.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptStyle {
    #[default]
    Direct,
    Cot,
}

impl PromptStyle {
    pub fn as_str(self) -> &'static str {
        match self {
            PromptStyle::Direct => "direct",
            PromptStyle::Cot => "cot",
        }
    }
}

impl fmt::Display for PromptStyle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PromptStyle {
    type Err = PromptError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "direct" => Ok(PromptStyle::Direct),
            "cot" => Ok(PromptStyle::Cot),
            other => Err(PromptError::Template(format!("unknown style {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerOption {
    pub letter: char,
    pub name: String,
}

/// Task description, question, hints and options for one dataset.
///
/// Stored as TOML under `prompts/<dataset>/`. `system_prompt`, when set,
/// replaces the rendered system text wholesale (used by system-prompt
/// variants).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTemplate {
    /// Display name shown after `Dataset:` in the user turn.
    pub dataset: String,
    pub task_description: String,
    pub question: String,
    #[serde(default)]
    pub hints: Vec<String>,
    pub class_names: Vec<String>,
    #[serde(default)]
    pub style: PromptStyle,
    #[serde(default)]
    pub shots_per_class: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system_prompt: Option<String>,
}

impl PromptTemplate {
    pub fn load(path: &Path) -> Result<Self, PromptError> {
        let text = fs::read_to_string(path)
            .map_err(|e| PromptError::Template(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self, PromptError> {
        let t: PromptTemplate = toml::from_str(text).map_err(|e| PromptError::Template(e.to_string()))?;
        t.validate()?;
        Ok(t)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("template serializes")
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        if self.class_names.is_empty() || self.class_names.len() > 26 {
            return Err(PromptError::Template("need 1..=26 class names".into()));
        }
        let mut seen = std::collections::HashSet::new();
        if !self.class_names.iter().all(|n| seen.insert(n)) {
            return Err(PromptError::Template("duplicate class names".into()));
        }
        if let Some(sys) = &self.system_prompt {
            if !sys.contains(FORMAT_REQUIREMENT) {
                return Err(PromptError::Template(
                    "system prompt override lacks the answer format requirement".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn options(&self) -> Vec<AnswerOption> {
        option_letters(self.class_names.len())
            .into_iter()
            .zip(&self.class_names)
            .map(|(letter, name)| AnswerOption {
                letter,
                name: name.clone(),
            })
            .collect()
    }

    /// Stable content hash (hex SHA-256 of the canonical JSON encoding).
    pub fn content_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("template serializes");
        hex::encode(Sha256::digest(json))
    }

    /// System text: task description, instructions with the answer format,
    /// then hints.
    pub fn render_system(&self) -> String {
        if let Some(sys) = &self.system_prompt {
            return sys.clone();
        }
        let instruction = match self.style {
            PromptStyle::Direct => DIRECT_INSTRUCTION,
            PromptStyle::Cot => COT_INSTRUCTION,
        };
        let mut s = format!(
            "{}\n\nYou will be given a multiple choice question and a time series. \
             Your job is to use the time series to answer the question. {instruction}\n\
             Use exactly this format: {FORMAT_REQUIREMENT}.\n\
             Example: {FORMAT_EXAMPLE}.",
            self.task_description.trim()
        );
        if !self.hints.is_empty() {
            s.push_str("\n\nAdditional information that may help:");
            for h in &self.hints {
                s.push_str("\n- ");
                s.push_str(h.trim());
            }
        }
        s
    }

    /// Answer line for a class index, as a model is asked to produce it.
    pub fn answer_line(&self, class: usize) -> String {
        let opts = self.options();
        format!("The answer is [{}] {}", opts[class].letter, opts[class].name)
    }
}
