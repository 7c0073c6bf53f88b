use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::template::{AnswerOption, PromptTemplate, FORMAT_REQUIREMENT};
use super::PromptError;
use crate::dataset::{Split, TimeSeriesDataset};
use crate::represent::{b64_list, represent_sample, Modality, RepresentConfig, Representation};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub dataset: String,
    pub sample_id: String,
    pub modality: Modality,
    pub template_hash: String,
}

/// One in-context example: a user turn followed by the assistant's answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleTurn {
    pub user_text: String,
    #[serde(with = "b64_list")]
    pub images: Vec<Vec<u8>>,
    pub answer_text: String,
}

/// A fully assembled chat prompt for one query sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system_text: String,
    pub examples: Vec<ExampleTurn>,
    pub user_text: String,
    #[serde(with = "b64_list")]
    pub images: Vec<Vec<u8>>,
    pub answer_schema: Vec<AnswerOption>,
    pub provenance: Provenance,
}

impl PromptBundle {
    /// Hash over everything the model sees.
    pub fn prompt_hash(&self) -> String {
        let mut h = Sha256::new();
        let mut field = |bytes: &[u8]| {
            h.update((bytes.len() as u64).to_le_bytes());
            h.update(bytes);
        };
        field(self.system_text.as_bytes());
        for ex in &self.examples {
            field(ex.user_text.as_bytes());
            for img in &ex.images {
                field(img);
            }
            field(ex.answer_text.as_bytes());
        }
        field(self.user_text.as_bytes());
        for img in &self.images {
            field(img);
        }
        hex::encode(h.finalize())
    }

    pub fn all_images(&self) -> impl Iterator<Item = &Vec<u8>> {
        self.examples
            .iter()
            .flat_map(|e| e.images.iter())
            .chain(self.images.iter())
    }

    pub fn has_images(&self) -> bool {
        self.all_images().next().is_some()
    }

    /// Concatenated text seen by the model, in turn order.
    pub fn flat_text(&self) -> String {
        let mut s = self.system_text.clone();
        for ex in &self.examples {
            s.push('\n');
            s.push_str(&ex.user_text);
            s.push('\n');
            s.push_str(&ex.answer_text);
        }
        s.push('\n');
        s.push_str(&self.user_text);
        s
    }
}

/// A representation of a training sample together with its label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledRepresentation {
    pub sample_id: String,
    pub split: Split,
    pub label: usize,
    pub representation: Representation,
}

fn user_turn(template: &PromptTemplate, rep: &Representation) -> String {
    let mut s = format!(
        "Dataset: {}\n\nQuestion: {}\n\nOptions:\n",
        template.dataset,
        template.question.trim()
    );
    for opt in template.options() {
        s.push_str(&format!("[{}] {}\n", opt.letter, opt.name));
    }
    s.push_str("\nTime series:\n");
    if let Some(text) = &rep.text {
        s.push_str(text);
        s.push('\n');
    }
    if !rep.images.is_empty() {
        let n = rep.images.len();
        s.push_str(if n == 1 {
            "(see the attached image)\n"
        } else {
            "(see the attached images)\n"
        });
    }
    s.push_str(&format!("\nOutput format requirement: {FORMAT_REQUIREMENT}"));
    s
}

/// Assemble system text, optional in-context examples and the query turn.
pub fn assemble_prompt(
    dataset_id: &str,
    sample_id: &str,
    representation: &Representation,
    template: &PromptTemplate,
    shots: &[LabeledRepresentation],
) -> Result<PromptBundle, PromptError> {
    template.validate()?;
    representation
        .check()
        .map_err(|e| PromptError::Assembly(e.to_string()))?;
    let c = template.num_classes();
    let expected = template.shots_per_class * c;
    if shots.len() != expected {
        return Err(PromptError::Assembly(format!(
            "expected {expected} shot examples ({} per class × {c}), got {}",
            template.shots_per_class,
            shots.len()
        )));
    }
    let mut per_class = vec![0usize; c];
    let mut examples = Vec::with_capacity(shots.len());
    for shot in shots {
        if shot.split != Split::Train {
            return Err(PromptError::Leakage {
                sample_id: shot.sample_id.clone(),
                split: shot.split.to_string(),
            });
        }
        if shot.label >= c {
            return Err(PromptError::Assembly(format!(
                "shot {} has label {} outside {c} classes",
                shot.sample_id, shot.label
            )));
        }
        if shot.representation.modality != representation.modality {
            return Err(PromptError::Assembly(format!(
                "shot {} has modality {}, query has {}",
                shot.sample_id, shot.representation.modality, representation.modality
            )));
        }
        shot.representation
            .check()
            .map_err(|e| PromptError::Assembly(e.to_string()))?;
        per_class[shot.label] += 1;
        examples.push(ExampleTurn {
            user_text: user_turn(template, &shot.representation),
            images: shot.representation.images.clone(),
            answer_text: template.answer_line(shot.label),
        });
    }
    if per_class.iter().any(|&k| k != template.shots_per_class) {
        return Err(PromptError::Assembly(format!(
            "shot examples per class {per_class:?}, expected {} each",
            template.shots_per_class
        )));
    }
    Ok(PromptBundle {
        system_text: template.render_system(),
        examples,
        user_text: user_turn(template, representation),
        images: representation.images.clone(),
        answer_schema: template.options(),
        provenance: Provenance {
            dataset: dataset_id.to_string(),
            sample_id: sample_id.to_string(),
            modality: representation.modality,
            template_hash: template.content_hash(),
        },
    })
}

/// In-context example indices: the first `per_class` training samples of
/// each class after a seeded shuffle, ordered by label.
pub fn select_shots(train: &TimeSeriesDataset, per_class: usize, seed: u64) -> Vec<usize> {
    if per_class == 0 {
        return Vec::new();
    }
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut picked: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in order {
        let bucket = picked.entry(train.labels[i]).or_default();
        if bucket.len() < per_class {
            bucket.push(i);
        }
    }
    picked.into_values().flatten().collect()
}

/// Builds bundles for any sample of a dataset with one fixed set of
/// in-context examples drawn from the training split.
#[derive(Debug, Clone)]
pub struct PromptFactory {
    pub template: PromptTemplate,
    pub modality: Modality,
    pub config: RepresentConfig,
    pub shots: Vec<LabeledRepresentation>,
}

impl PromptFactory {
    pub fn new(
        template: PromptTemplate,
        modality: Modality,
        config: RepresentConfig,
        train: Option<&TimeSeriesDataset>,
        shot_seed: u64,
    ) -> Result<Self, PromptError> {
        template.validate()?;
        let mut shots = Vec::new();
        if template.shots_per_class > 0 {
            let train =
                train.ok_or_else(|| PromptError::Assembly("shot examples need the training split".into()))?;
            if train.split != Split::Train {
                return Err(PromptError::Leakage {
                    sample_id: train.sample_ids.first().cloned().unwrap_or_default(),
                    split: train.split.to_string(),
                });
            }
            for i in select_shots(train, template.shots_per_class, shot_seed) {
                let representation = represent_sample(train, i, modality, &config)
                    .map_err(|e| PromptError::Assembly(e.to_string()))?;
                shots.push(LabeledRepresentation {
                    sample_id: train.sample_ids[i].clone(),
                    split: Split::Train,
                    label: train.labels[i],
                    representation,
                });
            }
        }
        Ok(PromptFactory {
            template,
            modality,
            config,
            shots,
        })
    }

    pub fn bundle(&self, ds: &TimeSeriesDataset, i: usize) -> Result<PromptBundle, PromptError> {
        let rep = represent_sample(ds, i, self.modality, &self.config)
            .map_err(|e| PromptError::Assembly(e.to_string()))?;
        assemble_prompt(&ds.id, &ds.sample_ids[i], &rep, &self.template, &self.shots)
    }
}

/// Options listed in a user turn, in order of appearance.
pub fn extract_options(user_text: &str) -> Vec<AnswerOption> {
    let mut out = Vec::new();
    let mut in_options = false;
    for line in user_text.lines() {
        if line.trim() == "Options:" {
            in_options = true;
            continue;
        }
        if !in_options {
            continue;
        }
        let bytes = line.as_bytes();
        if bytes.len() >= 4 && bytes[0] == b'[' && bytes[2] == b']' && bytes[3] == b' ' {
            out.push(AnswerOption {
                letter: bytes[1] as char,
                name: line[4..].to_string(),
            });
        } else {
            break;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompting::template::PromptStyle;
    use crate::represent::build_representation;

    fn template() -> PromptTemplate {
        PromptTemplate {
            dataset: "CTU".into(),
            task_description: "Decide desktop or laptop.".into(),
            question: "determine whether this computer is a desktop or a laptop.".into(),
            hints: vec![],
            class_names: vec!["Desktop".into(), "Laptop".into()],
            style: PromptStyle::Direct,
            shots_per_class: 0,
            system_prompt: None,
        }
    }

    fn rep(modality: Modality) -> Representation {
        build_representation(
            &[vec![0.2, 0.4, 1.7]],
            &["power".into()],
            modality,
            &RepresentConfig::default(),
        )
        .unwrap()
    }

    fn shot(id: &str, split: Split, label: usize) -> LabeledRepresentation {
        LabeledRepresentation {
            sample_id: id.into(),
            split,
            label,
            representation: rep(Modality::Digits),
        }
    }

    #[test]
    fn zero_shot_digit_prompt() {
        let b = assemble_prompt("ctu", "t0", &rep(Modality::Digits), &template(), &[]).unwrap();
        assert!(b.examples.is_empty());
        assert!(b.images.is_empty());
        for needle in ["Question:", "[A] Desktop", "[B] Laptop", "0 2 0 , 0 4 0 , 1 7 0"] {
            assert!(b.user_text.contains(needle), "missing {needle}");
        }
        assert!(b.system_text.contains(FORMAT_REQUIREMENT));
        assert!(b.user_text.contains(FORMAT_REQUIREMENT));
        assert_eq!(extract_options(&b.user_text), b.answer_schema);
    }

    #[test]
    fn visual_prompt_carries_images() {
        let b = assemble_prompt("ctu", "t0", &rep(Modality::Visual), &template(), &[]).unwrap();
        assert_eq!(b.images.len(), 1);
        assert!(b.user_text.contains("attached image"));
    }

    #[test]
    fn shots_become_example_turns() {
        let mut t = template();
        t.shots_per_class = 2;
        let shots = vec![
            shot("a", Split::Train, 0),
            shot("b", Split::Train, 0),
            shot("c", Split::Train, 1),
            shot("d", Split::Train, 1),
        ];
        let b = assemble_prompt("ctu", "t0", &rep(Modality::Digits), &t, &shots).unwrap();
        assert_eq!(b.examples.len(), 4);
        assert_eq!(b.examples[2].answer_text, "The answer is [B] Laptop");
    }

    #[test]
    fn leakage_and_count_errors() {
        let mut t = template();
        t.shots_per_class = 1;
        let err = assemble_prompt(
            "ctu",
            "t0",
            &rep(Modality::Digits),
            &t,
            &[shot("a", Split::Train, 0), shot("b", Split::Test, 1)],
        )
        .unwrap_err();
        assert!(matches!(err, PromptError::Leakage { .. }));
        let err = assemble_prompt(
            "ctu",
            "t0",
            &rep(Modality::Digits),
            &t,
            &[shot("a", Split::Train, 0)],
        )
        .unwrap_err();
        assert!(matches!(err, PromptError::Assembly(_)));
        let err = assemble_prompt(
            "ctu",
            "t0",
            &rep(Modality::Digits),
            &t,
            &[shot("a", Split::Train, 0), shot("b", Split::Train, 0)],
        )
        .unwrap_err();
        assert!(matches!(err, PromptError::Assembly(_)));
    }

    #[test]
    fn modality_mismatch_is_assembly_error() {
        let mut t = template();
        t.shots_per_class = 1;
        let mut s = vec![shot("a", Split::Train, 0), shot("b", Split::Train, 1)];
        s[1].representation = rep(Modality::Visual);
        let err = assemble_prompt("ctu", "t0", &rep(Modality::Digits), &t, &s).unwrap_err();
        assert!(matches!(err, PromptError::Assembly(_)));
    }

    #[test]
    fn deterministic_hash() {
        let a = assemble_prompt("ctu", "t0", &rep(Modality::DigitsAndVisual), &template(), &[]).unwrap();
        let b = assemble_prompt("ctu", "t0", &rep(Modality::DigitsAndVisual), &template(), &[]).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.prompt_hash(), b.prompt_hash());
        let c = assemble_prompt("ctu", "t0", &rep(Modality::Digits), &template(), &[]).unwrap();
        assert_ne!(a.prompt_hash(), c.prompt_hash());
    }
}
