//! Classification prompts: assembly, answer parsing and meaning-preserving
//! variant generation.

mod assemble;
mod parse;
mod template;
mod variants;

pub use assemble::{
    assemble_prompt, extract_options, select_shots, ExampleTurn, LabeledRepresentation, PromptBundle,
    PromptFactory, Provenance,
};
pub use parse::{parse_answer, ParsedAnswer};
pub use template::{AnswerOption, PromptStyle, PromptTemplate, COT_INSTRUCTION, FORMAT_REQUIREMENT};
pub use variants::{
    generate_variants, validate_variant, ChatClient, ChatError, HttpChatClient, Variant, VariantError,
    VariantSet, VariantTarget, Violation, QUESTION_REWRITER_SYSTEM, QUESTION_REWRITER_USER,
    SYSTEM_REWRITER_SYSTEM, SYSTEM_REWRITER_USER,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PromptError {
    #[error("shot example {sample_id} comes from the {split} split")]
    Leakage { sample_id: String, split: String },
    #[error("assembly error: {0}")]
    Assembly(String),
    #[error("template error: {0}")]
    Template(String),
}
