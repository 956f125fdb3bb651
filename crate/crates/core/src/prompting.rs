//! Rendering of per-numeral model inputs and their expected targets.
//!
//! An input is the instruction preamble, the statement and a question about
//! one numeral, joined by single spaces. The preamble can be dropped and the
//! target switched from tag documentation to tag words, which covers the two
//! ablation settings.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Split, Statement, Taxonomy, OTHERS};

const DEFAULT_INSTRUCTION: &str = include_str!("../resources/instruction_v1.txt");

/// The bundled instruction preamble.
pub fn default_instruction() -> &'static str {
    DEFAULT_INSTRUCTION.trim_end()
}

/// The per-numeral question appended to the statement.
pub fn question(surface: &str) -> String {
    format!("What is the tag associated with the numeral {surface}?")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    Documentation,
    TagWords,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PromptMode {
    pub with_instruction: bool,
    pub target_kind: TargetKind,
}

impl Default for PromptMode {
    fn default() -> Self {
        PromptMode {
            with_instruction: true,
            target_kind: TargetKind::Documentation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptInstance {
    pub sid: String,
    pub mention_index: usize,
    pub input_text: String,
    pub expected_target: String,
    pub mode: PromptMode,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("statement {sid} has no mention #{index}")]
    MentionNotInStatement { sid: String, index: usize },
    #[error("gold tag {0:?} missing from taxonomy")]
    MissingTaxonomyEntry(String),
    #[error("instruction text is empty")]
    EmptyInstruction,
}

/// Renders prompts with a fixed mode and preamble.
#[derive(Debug, Clone)]
pub struct PromptRenderer {
    mode: PromptMode,
    instruction: String,
}

impl PromptRenderer {
    pub fn new(mode: PromptMode, instruction: impl Into<String>) -> Result<Self, PromptError> {
        let instruction = instruction.into().trim().to_owned();
        if mode.with_instruction && instruction.is_empty() {
            return Err(PromptError::EmptyInstruction);
        }
        Ok(PromptRenderer { mode, instruction })
    }

    pub fn with_default_instruction(mode: PromptMode) -> Self {
        PromptRenderer {
            mode,
            instruction: default_instruction().to_owned(),
        }
    }

    pub fn mode(&self) -> PromptMode {
        self.mode
    }

    pub fn instruction(&self) -> &str {
        &self.instruction
    }

    /// Model input for a numeral surface in a sentence.
    pub fn input_text(&self, sentence: &str, surface: &str) -> String {
        let q = question(surface);
        if self.mode.with_instruction {
            format!("{} {} {}", self.instruction, sentence, q)
        } else {
            format!("{sentence} {q}")
        }
    }

    pub fn render(
        &self,
        taxonomy: &Taxonomy,
        statement: &Statement,
        mention_index: usize,
    ) -> Result<PromptInstance, PromptError> {
        let mention = statement.mentions.get(mention_index).ok_or_else(|| {
            PromptError::MentionNotInStatement {
                sid: statement.sid.clone(),
                index: mention_index,
            }
        })?;
        let record = taxonomy
            .get(&mention.gold_tag)
            .ok_or_else(|| PromptError::MissingTaxonomyEntry(mention.gold_tag.to_string()))?;
        let expected_target = if record.tag_id.is_others() {
            OTHERS.to_owned()
        } else {
            match self.mode.target_kind {
                TargetKind::Documentation => record.documentation.clone(),
                TargetKind::TagWords => record.tag_id.to_string(),
            }
        };
        Ok(PromptInstance {
            sid: statement.sid.clone(),
            mention_index,
            input_text: self.input_text(&statement.text, &mention.surface),
            expected_target,
            mode: self.mode,
        })
    }
}

/// Renders one prompt with an explicit mode and preamble.
pub fn render_prompt(
    taxonomy: &Taxonomy,
    statement: &Statement,
    mention_index: usize,
    mode: PromptMode,
    instruction_text: &str,
) -> Result<PromptInstance, PromptError> {
    PromptRenderer::new(mode, instruction_text)?.render(taxonomy, statement, mention_index)
}

/// Mentions of one statement that render to the same model input because
/// they share a surface string. One generation serves all of them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptGroup {
    pub input_text: String,
    pub members: Vec<PromptInstance>,
}

#[derive(Debug, Clone, Default)]
pub struct PromptPlan {
    pub groups: Vec<PromptGroup>,
    /// Data-quality notes, one per statement with repeated surfaces.
    pub warnings: Vec<String>,
}

impl PromptPlan {
    pub fn instances(&self) -> impl Iterator<Item = &PromptInstance> {
        self.groups.iter().flat_map(|g| g.members.iter())
    }

    pub fn mention_count(&self) -> usize {
        self.groups.iter().map(|g| g.members.len()).sum()
    }
}

/// Renders every mention of a split, grouping repeated surfaces per statement.
pub fn plan_prompts(
    corpus: &Corpus,
    split: Split,
    renderer: &PromptRenderer,
) -> Result<PromptPlan, PromptError> {
    let mut plan = PromptPlan::default();
    for statement in corpus.statements().iter().filter(|s| s.split == split) {
        let mut by_surface: BTreeMap<&str, usize> = BTreeMap::new();
        let mut repeated = false;
        for index in 0..statement.mentions.len() {
            let instance = renderer.render(corpus.taxonomy(), statement, index)?;
            let surface = statement.mentions[index].surface.as_str();
            match by_surface.get(surface) {
                Some(&g) => {
                    repeated = true;
                    plan.groups[g].members.push(instance);
                }
                None => {
                    by_surface.insert(surface, plan.groups.len());
                    plan.groups.push(PromptGroup {
                        input_text: instance.input_text.clone(),
                        members: vec![instance],
                    });
                }
            }
        }
        if repeated {
            let msg = format!(
                "statement {}: repeated numeral surface shares one prompt; prediction is broadcast",
                statement.sid
            );
            log::warn!("{msg}");
            plan.warnings.push(msg);
        }
    }
    Ok(plan)
}
