use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::template::AnswerOption;

/// A model answer mapped onto the option letters. `letter == None` is FAILURE.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedAnswer {
    pub letter: Option<char>,
    pub raw_text: String,
}

impl ParsedAnswer {
    pub fn is_failure(&self) -> bool {
        self.letter.is_none()
    }

    /// 0-based class index within `schema`.
    pub fn class_index(&self, schema: &[AnswerOption]) -> Option<usize> {
        let l = self.letter?;
        schema.iter().position(|o| o.letter == l)
    }
}

fn grammar() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)answer\s+is\s*:?\s*\[\s*([a-z])\s*\]").expect("valid regex"))
}

/// Last `answer is [<letter>]` occurrence, case-insensitive; anything else,
/// including a letter outside the schema, is FAILURE.
pub fn parse_answer(raw: &str, schema: &[AnswerOption]) -> ParsedAnswer {
    let letter = grammar()
        .captures_iter(raw)
        .last()
        .and_then(|c| c.get(1))
        .and_then(|m| m.as_str().chars().next())
        .map(|c| c.to_ascii_uppercase())
        .filter(|c| schema.iter().any(|o| o.letter == *c));
    ParsedAnswer {
        letter,
        raw_text: raw.to_string(),
    }
}
