//! Prompt rendering for the eight prompting modes.
//!
//! Templates are external UTF-8 text files (`templates/*.txt`), loaded at
//! startup and rendered byte for byte: a rendered prompt is the template
//! verbatim, a blank line, then labeled `Context:` / `Speaker Utterance:` /
//! `Response:` sections. The improvement templates share a common prefix (the
//! naive improvement instruction) followed by the strategy sentence and the
//! empathy-dimension definitions the strategy relies on.
//!
//! The sequential mode is a three-call chain: the cognitive, affective, and
//! compassionate templates applied in that order, each stage improving the
//! previous stage's output. Stages after the first render with a response
//! slot that is spliced at call time.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::DialogueContext;

/// Placeholder in a chained prompt where the previous stage's completion goes.
pub const RESPONSE_SLOT: &str = "{{initial_response}}";

/// The eight prompting modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptStrategy {
    /// Generate an empathetic response from scratch.
    Direct,
    /// Improve a response with no targeting.
    Naive,
    /// Improve along the cognitive dimension only.
    Cognitive,
    /// Improve along the affective dimension only.
    Affective,
    /// Improve along the compassionate dimension only.
    Compassionate,
    /// Improve along all three dimensions in one call.
    AllThree,
    /// Improve along the three dimensions in three chained calls.
    Sequential,
    /// Identify and improve the most lacking dimension.
    LackingDimension,
}

impl PromptStrategy {
    pub const ALL: [PromptStrategy; 8] = [
        PromptStrategy::Direct,
        PromptStrategy::Naive,
        PromptStrategy::Cognitive,
        PromptStrategy::Affective,
        PromptStrategy::Compassionate,
        PromptStrategy::AllThree,
        PromptStrategy::Sequential,
        PromptStrategy::LackingDimension,
    ];

    /// Every mode that rewrites an existing response.
    pub const IMPROVEMENT: [PromptStrategy; 7] = [
        PromptStrategy::Naive,
        PromptStrategy::Cognitive,
        PromptStrategy::Affective,
        PromptStrategy::Compassionate,
        PromptStrategy::AllThree,
        PromptStrategy::Sequential,
        PromptStrategy::LackingDimension,
    ];

    pub fn is_improvement(self) -> bool {
        self != PromptStrategy::Direct
    }

    /// The ordered chain the sequential mode expands to.
    pub fn sequential_stages() -> [PromptStrategy; 3] {
        [
            PromptStrategy::Cognitive,
            PromptStrategy::Affective,
            PromptStrategy::Compassionate,
        ]
    }

    /// Short flag spelling accepted on the command line.
    pub fn cli_name(self) -> &'static str {
        match self {
            PromptStrategy::Direct => "direct",
            PromptStrategy::Naive => "naive",
            PromptStrategy::Cognitive => "cog",
            PromptStrategy::Affective => "aff",
            PromptStrategy::Compassionate => "comp",
            PromptStrategy::AllThree => "all",
            PromptStrategy::Sequential => "seq",
            PromptStrategy::LackingDimension => "lacking",
        }
    }

    /// Column label used in win-rate tables.
    pub fn table_label(self) -> &'static str {
        match self {
            PromptStrategy::Direct => "direct",
            PromptStrategy::Naive => "N",
            PromptStrategy::Cognitive => "1.1",
            PromptStrategy::Affective => "1.2",
            PromptStrategy::Compassionate => "1.3",
            PromptStrategy::AllThree => "2",
            PromptStrategy::Sequential => "3",
            PromptStrategy::LackingDimension => "4",
        }
    }
}

impl fmt::Display for PromptStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            PromptStrategy::Direct => "direct",
            PromptStrategy::Naive => "naive",
            PromptStrategy::Cognitive => "cognitive",
            PromptStrategy::Affective => "affective",
            PromptStrategy::Compassionate => "compassionate",
            PromptStrategy::AllThree => "all_three",
            PromptStrategy::Sequential => "sequential",
            PromptStrategy::LackingDimension => "lacking_dimension",
        };
        f.write_str(name)
    }
}

impl std::str::FromStr for PromptStrategy {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "direct" => Ok(PromptStrategy::Direct),
            "naive" | "n" => Ok(PromptStrategy::Naive),
            "cog" | "cognitive" | "1.1" => Ok(PromptStrategy::Cognitive),
            "aff" | "affective" | "1.2" => Ok(PromptStrategy::Affective),
            "comp" | "compassionate" | "1.3" => Ok(PromptStrategy::Compassionate),
            "all" | "all_three" | "all-three" | "2" => Ok(PromptStrategy::AllThree),
            "seq" | "sequential" | "3" => Ok(PromptStrategy::Sequential),
            "lacking" | "lacking_dimension" | "lacking-dimension" | "4" => {
                Ok(PromptStrategy::LackingDimension)
            }
            other => Err(PromptError::UnknownStrategy {
                name: other.to_string(),
            }),
        }
    }
}

/// One of the three empathy dimensions, with its canonical definition text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmpathyDimension {
    Cognitive,
    Affective,
    Compassionate,
}

impl EmpathyDimension {
    pub const ALL: [EmpathyDimension; 3] = [
        EmpathyDimension::Cognitive,
        EmpathyDimension::Affective,
        EmpathyDimension::Compassionate,
    ];

    /// The canonical definition sentence pair for this dimension.
    pub fn definition(self) -> &'static str {
        match self {
            EmpathyDimension::Cognitive => {
                "Cognitive empathy is the ability to understand another person's thoughts, \
                 beliefs, and intentions. It is being able to see the world through their eyes \
                 and understand their point of view."
            }
            EmpathyDimension::Affective => {
                "Affective empathy is the ability to experience the emotions of another person. \
                 It is feeling what they are feeling, both positive and negative."
            }
            EmpathyDimension::Compassionate => {
                "Compassionate empathy is the ability to not only understand and share another \
                 person's feelings, but also to be moved to help if needed. It involves a deeper \
                 level of emotional engagement than cognitive empathy, prompting action to \
                 alleviate another's distress or suffering."
            }
        }
    }
}

/// A fully rendered prompt ready to send to a model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub system_preamble: Option<String>,
    pub user_message: String,
    /// 0 except for the later stages of a sequential chain.
    pub stage_index: usize,
}

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("strategy {strategy} improves an existing response; none was given")]
    MissingInitialResponse { strategy: PromptStrategy },
    #[error("the direct strategy generates from scratch; an initial response was given")]
    UnexpectedInitialResponse,
    #[error("judge prompt requires two distinct responses")]
    IdenticalResponses,
    #[error("{label} is empty")]
    EmptyText { label: String },
    #[error("unknown prompt strategy {name:?}")]
    UnknownStrategy { name: String },
    #[error("failed to read template {path}: {source}")]
    TemplateIo {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// The eight prompt templates, loaded once and immutable afterwards.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    direct: String,
    naive: String,
    cognitive: String,
    affective: String,
    compassionate: String,
    all_three: String,
    lacking: String,
    judge: String,
}

/// File names expected inside a template directory.
pub const TEMPLATE_FILES: [&str; 8] = [
    "direct.txt",
    "naive.txt",
    "cognitive.txt",
    "affective.txt",
    "compassionate.txt",
    "all_three.txt",
    "lacking.txt",
    "judge.txt",
];

impl TemplateSet {
    /// The templates shipped with the crate.
    pub fn builtin() -> TemplateSet {
        TemplateSet {
            direct: normalize(include_str!("../templates/direct.txt")),
            naive: normalize(include_str!("../templates/naive.txt")),
            cognitive: normalize(include_str!("../templates/cognitive.txt")),
            affective: normalize(include_str!("../templates/affective.txt")),
            compassionate: normalize(include_str!("../templates/compassionate.txt")),
            all_three: normalize(include_str!("../templates/all_three.txt")),
            lacking: normalize(include_str!("../templates/lacking.txt")),
            judge: normalize(include_str!("../templates/judge.txt")),
        }
    }

    /// Loads templates from a directory with the layout of [`TEMPLATE_FILES`].
    pub fn load(dir: &Path) -> Result<TemplateSet, PromptError> {
        let read = |name: &str| -> Result<String, PromptError> {
            let path = dir.join(name);
            let raw = std::fs::read_to_string(&path)
                .map_err(|source| PromptError::TemplateIo { path, source })?;
            Ok(normalize(&raw))
        };
        Ok(TemplateSet {
            direct: read("direct.txt")?,
            naive: read("naive.txt")?,
            cognitive: read("cognitive.txt")?,
            affective: read("affective.txt")?,
            compassionate: read("compassionate.txt")?,
            all_three: read("all_three.txt")?,
            lacking: read("lacking.txt")?,
            judge: read("judge.txt")?,
        })
    }

    /// The template text for a single-call strategy.
    ///
    /// Sequential has no single template; it chains the three dimension
    /// templates (see [`TemplateSet::render`]).
    pub fn template(&self, strategy: PromptStrategy) -> Option<&str> {
        match strategy {
            PromptStrategy::Direct => Some(&self.direct),
            PromptStrategy::Naive => Some(&self.naive),
            PromptStrategy::Cognitive => Some(&self.cognitive),
            PromptStrategy::Affective => Some(&self.affective),
            PromptStrategy::Compassionate => Some(&self.compassionate),
            PromptStrategy::AllThree => Some(&self.all_three),
            PromptStrategy::Sequential => None,
            PromptStrategy::LackingDimension => Some(&self.lacking),
        }
    }

    pub fn direct(&self) -> &str {
        &self.direct
    }

    pub fn naive(&self) -> &str {
        &self.naive
    }

    pub fn judge(&self) -> &str {
        &self.judge
    }

    /// Renders `strategy` for a dialogue.
    ///
    /// All strategies yield one prompt except Sequential, which yields three
    /// chained stages: stage 0 embeds the given initial response and stages 1
    /// and 2 carry a [`RESPONSE_SLOT`] to be filled with the previous stage's
    /// completion.
    pub fn render(
        &self,
        strategy: PromptStrategy,
        context: &DialogueContext,
        initial_response: Option<&str>,
    ) -> Result<Vec<RenderedPrompt>, PromptError> {
        match (strategy.is_improvement(), initial_response) {
            (true, None) => return Err(PromptError::MissingInitialResponse { strategy }),
            (false, Some(_)) => return Err(PromptError::UnexpectedInitialResponse),
            _ => {}
        }
        if let Some(initial) = initial_response {
            if initial.trim().is_empty() {
                return Err(PromptError::EmptyText {
                    label: "initial response".to_string(),
                });
            }
        }

        if strategy == PromptStrategy::Sequential {
            let prompts = PromptStrategy::sequential_stages()
                .iter()
                .enumerate()
                .map(|(stage_index, stage)| {
                    let template = self.template(*stage).expect("stage templates exist");
                    let response = if stage_index == 0 {
                        initial_response.expect("checked above").to_string()
                    } else {
                        RESPONSE_SLOT.to_string()
                    };
                    RenderedPrompt {
                        system_preamble: None,
                        user_message: compose(template, context, Some(&response)),
                        stage_index,
                    }
                })
                .collect();
            return Ok(prompts);
        }

        let template = self.template(strategy).expect("non-sequential template");
        Ok(vec![RenderedPrompt {
            system_preamble: None,
            user_message: compose(template, context, initial_response),
            stage_index: 0,
        }])
    }

    /// Renders the pairwise judge prompt with the two responses labeled
    /// `Response 1` and `Response 2` in the given order.
    pub fn render_judge(
        &self,
        context: &DialogueContext,
        response_a: &str,
        response_b: &str,
    ) -> Result<RenderedPrompt, PromptError> {
        for (label, text) in [("response 1", response_a), ("response 2", response_b)] {
            if text.trim().is_empty() {
                return Err(PromptError::EmptyText {
                    label: label.to_string(),
                });
            }
        }
        if response_a == response_b {
            return Err(PromptError::IdenticalResponses);
        }
        let user_message = format!(
            "{}\n\nContext: {}\nSpeaker Utterance: {}\nResponse 1: {}\nResponse 2: {}",
            self.judge, context.situation, context.speaker_utterance, response_a, response_b
        );
        Ok(RenderedPrompt {
            system_preamble: None,
            user_message,
            stage_index: 0,
        })
    }
}

/// Fills a chained prompt's response slot with the previous stage's output.
pub fn splice_response(prompt: &RenderedPrompt, completion: &str) -> RenderedPrompt {
    RenderedPrompt {
        system_preamble: prompt.system_preamble.clone(),
        user_message: prompt.user_message.replacen(RESPONSE_SLOT, completion, 1),
        stage_index: prompt.stage_index,
    }
}

fn compose(template: &str, context: &DialogueContext, response: Option<&str>) -> String {
    let mut message = format!(
        "{template}\n\nContext: {}\nSpeaker Utterance: {}",
        context.situation, context.speaker_utterance
    );
    if let Some(response) = response {
        message.push_str("\nResponse: ");
        message.push_str(response);
    }
    message
}

/// CRLF to LF, then strip trailing newlines: template files are
/// trailing-newline-normalized.
fn normalize(raw: &str) -> String {
    raw.replace("\r\n", "\n").trim_end_matches('\n').to_string()
}
