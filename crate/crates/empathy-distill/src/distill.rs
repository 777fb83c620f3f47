//! End-to-end orchestration of the three distillation methods.
//!
//! - **Method 1 (direct):** partition pre-existing scored teacher responses
//!   by the score rule; without scores, generate direct responses and halt
//!   with a scores-required report, since score-based partitioning needs
//!   human scores.
//! - **Method 2 (improve human responses):** the teacher improves every human
//!   response under a prompting strategy. Dialogues whose human response
//!   scored 3 contribute the original and the improved text as two SFT
//!   examples; dialogues scored 1 or 2 contribute a preference pair with the
//!   improved text chosen over the human original.
//! - **Method 3 (improve teacher initial responses):** the teacher first
//!   answers the direct prompt, then improves its own response. A seeded
//!   ratio split assigns dialogues: SFT dialogues contribute initial and
//!   improved as separate examples, preference dialogues contribute
//!   (chosen improved, rejected initial), test dialogues contribute contexts.
//!
//! Dialogues are processed in parallel over the gateway's bounded window;
//! partition assembly is a single-threaded reduction in dialogue-id order, so
//! outputs are deterministic given (corpus, strategy, seed, warm cache).
//! A failed dialogue is recorded and excluded from all three classes; the run
//! continues.

use std::collections::BTreeMap;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::util::parallel_map;
use crate::corpus::{Corpus, CorpusError, DialogueRecord, ResponderId, ScoredResponse};
use crate::gateway::{CompletionRequest, Gateway, GatewayError, GenParams, DEFAULT_WINDOW};
use crate::partition::{
    partition_by_scores, ratio_partition, DatasetPartition, PartitionError, PreferencePair,
    Provenance, SftExample, SplitClass, SplitRatio,
};
use crate::prompt::{splice_response, PromptError, PromptStrategy, TemplateSet};

/// The three distillation methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistillMethod {
    Direct,
    ImproveHuman,
    ImproveLlmInitial,
}

impl std::fmt::Display for DistillMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            DistillMethod::Direct => "direct",
            DistillMethod::ImproveHuman => "improve_human",
            DistillMethod::ImproveLlmInitial => "improve_llm_initial",
        };
        f.write_str(name)
    }
}

/// One generation call made for a dialogue.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageTrace {
    pub label: String,
    pub prompt_hash: String,
    pub text: String,
}

/// Every generation made for one dialogue, in call order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueTrace {
    pub id: String,
    pub stages: Vec<StageTrace>,
    pub elapsed_ms: u64,
}

/// A teacher improvement of one initial response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImprovedResponse {
    pub dialogue_id: String,
    pub initial: ScoredResponse,
    /// The improved text; generated responses carry no score.
    pub improved: ScoredResponse,
    pub strategy: PromptStrategy,
    /// Stage outputs, present only for the sequential chain (length 3; the
    /// last equals `improved.text`).
    pub stage_texts: Vec<String>,
}

/// Parameters and per-dialogue traces of one distillation run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistillationRun {
    pub method: DistillMethod,
    pub teacher: String,
    pub strategy: PromptStrategy,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ratio: Option<SplitRatio>,
    /// Traces of the dialogues that completed; failures are tracked apart, so
    /// manifest size plus failure count equals the corpus size.
    pub manifest: BTreeMap<String, DialogueTrace>,
}

/// Everything a distillation run produces.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub run: DistillationRun,
    pub partition: DatasetPartition,
    /// The per-dialogue improvements, in dialogue-id order.
    pub improvements: Vec<ImprovedResponse>,
    /// Dialogue id to failure cause; these ids are in no partition class.
    pub failures: BTreeMap<String, String>,
    /// Partial stage outputs of failed dialogues, preserved for the run log.
    pub failure_traces: BTreeMap<String, DialogueTrace>,
    /// Dialogues whose improved text equaled the initial text, so the
    /// preference pair was dropped to keep chosen distinct from rejected.
    pub degenerate_pairs: Vec<String>,
}

/// Direct generations produced when Method 1 runs without pre-existing
/// scores; partitioning cannot proceed until the responses are scored.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectGeneration {
    pub teacher: String,
    pub responses: BTreeMap<String, String>,
    pub failures: BTreeMap<String, String>,
    pub manifest: BTreeMap<String, DialogueTrace>,
}

/// Outcome of Method 1: either a score-rule partition of pre-existing
/// responses, or freshly generated unscored responses and an explicit halt.
#[derive(Debug, Clone, PartialEq)]
pub enum Method1Run {
    Partitioned(DatasetPartition),
    /// Responses were generated but carry no scores; score-based
    /// partitioning requires human scores.
    ScoresRequired(DirectGeneration),
}

#[derive(Debug, Error)]
pub enum DistillError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("strategy {strategy} does not improve responses; an improvement strategy is required")]
    ImprovementStrategyRequired { strategy: PromptStrategy },
    #[error("teacher {teacher} absent from the corpus and no gateway configured to generate responses")]
    TeacherUnavailable { teacher: String },
    #[error("failed to write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// A teacher model bound to a gateway and template set.
pub struct Distiller<'a> {
    gateway: &'a Gateway,
    templates: &'a TemplateSet,
    params: GenParams,
    parallelism: usize,
}

impl<'a> Distiller<'a> {
    pub fn new(gateway: &'a Gateway, templates: &'a TemplateSet, params: GenParams) -> Distiller<'a> {
        Distiller {
            gateway,
            templates,
            params,
            parallelism: DEFAULT_WINDOW,
        }
    }

    pub fn with_parallelism(mut self, workers: usize) -> Distiller<'a> {
        self.parallelism = workers.max(1);
        self
    }

    pub fn teacher(&self) -> ResponderId {
        ResponderId::model(self.params.model.clone())
    }

    pub fn params(&self) -> &GenParams {
        &self.params
    }

    /// All generation calls for one dialogue under `strategy`; sequential
    /// strategies chain three calls, splicing each stage's output into the
    /// next prompt. A failure keeps the traces of the stages that completed.
    fn generate(
        &self,
        strategy: PromptStrategy,
        record: &DialogueRecord,
        initial: Option<&str>,
    ) -> Result<Vec<StageTrace>, DialogueFailure> {
        let prompts = self
            .templates
            .render(strategy, &record.context, initial)
            .map_err(|error| DialogueFailure {
                cause: error.to_string(),
                partial: Vec::new(),
            })?;

        let labels: Vec<String> = if strategy == PromptStrategy::Sequential {
            PromptStrategy::sequential_stages()
                .iter()
                .map(|s| s.to_string())
                .collect()
        } else {
            vec![strategy.to_string()]
        };

        match self
            .gateway
            .complete_chain(&self.params, &prompts, splice_response)
        {
            Ok(texts) => Ok(self.stage_traces(&prompts, &labels, &texts)),
            Err(GatewayError::ChainStage {
                stage,
                completed,
                source,
            }) => Err(DialogueFailure {
                cause: format!("stage {stage} ({}) failed: {source}", labels[stage - 1]),
                partial: self.stage_traces(&prompts[..completed.len()], &labels, &completed),
            }),
            Err(error) => Err(DialogueFailure {
                cause: error.to_string(),
                partial: Vec::new(),
            }),
        }
    }

    /// Reconstructs the effective request for each completed stage to record
    /// its content address alongside its output.
    fn stage_traces(
        &self,
        prompts: &[crate::prompt::RenderedPrompt],
        labels: &[String],
        texts: &[String],
    ) -> Vec<StageTrace> {
        let mut stages = Vec::with_capacity(texts.len());
        let mut previous: Option<&str> = None;
        for (index, prompt) in prompts.iter().enumerate().take(texts.len()) {
            let effective = match previous {
                Some(text) if index > 0 => splice_response(prompt, text),
                _ => prompt.clone(),
            };
            let request = CompletionRequest::from_prompt(&self.params, &effective);
            stages.push(StageTrace {
                label: labels[index].clone(),
                prompt_hash: request.cache_key(),
                text: texts[index].clone(),
            });
            previous = Some(&texts[index]);
        }
        stages
    }

    /// Direct generation followed by improvement; the trace carries the
    /// direct stage first.
    fn generate_bootstrap(
        &self,
        strategy: PromptStrategy,
        record: &DialogueRecord,
    ) -> Result<Vec<StageTrace>, DialogueFailure> {
        let mut stages = self.generate(PromptStrategy::Direct, record, None)?;
        let initial = stages.last().expect("direct stage").text.clone();
        match self.generate(strategy, record, Some(&initial)) {
            Ok(improvement) => {
                stages.extend(improvement);
                Ok(stages)
            }
            Err(mut failure) => {
                // Keep the direct stage in the preserved partial trace.
                let mut partial = stages;
                partial.append(&mut failure.partial);
                Err(DialogueFailure {
                    cause: failure.cause,
                    partial,
                })
            }
        }
    }
}

/// A per-dialogue failure that the run records instead of propagating.
struct DialogueFailure {
    cause: String,
    partial: Vec<StageTrace>,
}

/// The improvement chain's outputs, recorded only for the sequential
/// strategy (three stage texts, the last being the improved response).
fn sequential_stage_texts(strategy: PromptStrategy, stages: &[StageTrace]) -> Vec<String> {
    if strategy == PromptStrategy::Sequential {
        stages.iter().map(|s| s.text.clone()).collect()
    } else {
        Vec::new()
    }
}

/// Generated responses must be non-empty; a blank completion fails the
/// dialogue rather than polluting the datasets.
fn final_text(trace: &DialogueTrace) -> Result<String, String> {
    let text = trace
        .stages
        .last()
        .map(|stage| stage.text.trim().to_string())
        .unwrap_or_default();
    if text.is_empty() {
        Err("generated response is empty".to_string())
    } else {
        Ok(text)
    }
}

/// Method 1: direct empathy distillation.
///
/// With scored teacher responses in the corpus this is precisely the score
/// rule partition. Otherwise, when a distiller is supplied, direct responses
/// are generated for every dialogue and the run halts with a scores-required
/// report.
pub fn run_method1(
    corpus: &Corpus,
    teacher: &ResponderId,
    distiller: Option<&Distiller<'_>>,
) -> Result<Method1Run, DistillError> {
    let fully_scored = corpus.records().iter().all(|record| {
        record.scored_response(&ResponderId::Human).is_ok() && record.scored_response(teacher).is_ok()
    });
    if fully_scored && !corpus.is_empty() {
        return Ok(Method1Run::Partitioned(partition_by_scores(corpus, teacher)?));
    }
    let distiller = distiller.ok_or_else(|| DistillError::TeacherUnavailable {
        teacher: teacher.name().to_string(),
    })?;

    let records = corpus.records_by_id();
    let outcomes = parallel_map(&records, distiller.parallelism, |record| {
        let started = std::time::Instant::now();
        distiller
            .generate(PromptStrategy::Direct, record, None)
            .map(|stages| DialogueTrace {
                id: record.context.id.clone(),
                stages,
                elapsed_ms: started.elapsed().as_millis() as u64,
            })
    });

    let mut generation = DirectGeneration {
        teacher: teacher.name().to_string(),
        responses: BTreeMap::new(),
        failures: BTreeMap::new(),
        manifest: BTreeMap::new(),
    };
    for (record, outcome) in records.iter().zip(outcomes) {
        let id = record.context.id.clone();
        match outcome {
            Ok(trace) => match final_text(&trace) {
                Ok(text) => {
                    generation.responses.insert(id.clone(), text);
                    generation.manifest.insert(id, trace);
                }
                Err(cause) => {
                    generation.failures.insert(id, cause);
                }
            },
            Err(failure) => {
                generation.failures.insert(id, failure.cause);
            }
        }
    }
    log::warn!(
        "method 1 generated {} unscored responses for {}: scores required before partitioning",
        generation.responses.len(),
        teacher.name()
    );
    Ok(Method1Run::ScoresRequired(generation))
}

/// Method 2: targeted empathy improvement over human responses.
pub fn run_method2(
    distiller: &Distiller<'_>,
    corpus: &Corpus,
    strategy: PromptStrategy,
    seed: u64,
) -> Result<RunOutcome, DistillError> {
    if !strategy.is_improvement() {
        return Err(DistillError::ImprovementStrategyRequired { strategy });
    }
    // Fail fast on unscored human responses before spending any calls.
    for record in corpus.records() {
        record.scored_response(&ResponderId::Human)?;
    }

    let records = corpus.records_by_id();
    let outcomes = parallel_map(&records, distiller.parallelism, |record| {
        let human = record
            .response(&ResponderId::Human)
            .expect("validated above");
        let started = std::time::Instant::now();
        distiller
            .generate(strategy, record, Some(&human.text))
            .map(|stages| DialogueTrace {
                id: record.context.id.clone(),
                stages,
                elapsed_ms: started.elapsed().as_millis() as u64,
            })
    });

    let teacher = distiller.teacher();
    let mut run = DistillationRun {
        method: DistillMethod::ImproveHuman,
        teacher: teacher.name().to_string(),
        strategy,
        seed,
        ratio: None,
        manifest: BTreeMap::new(),
    };
    let mut partition = DatasetPartition {
        teacher: teacher.clone(),
        sft: Vec::new(),
        preference: Vec::new(),
        test: Vec::new(),
        assignment: BTreeMap::new(),
    };
    let mut improvements = Vec::new();
    let mut failures = BTreeMap::new();
    let mut failure_traces = BTreeMap::new();
    let mut degenerate_pairs = Vec::new();

    for (record, outcome) in records.iter().zip(outcomes) {
        let id = record.context.id.clone();
        let trace = match outcome {
            Ok(trace) => trace,
            Err(failure) => {
                failure_traces.insert(
                    id.clone(),
                    DialogueTrace {
                        id: id.clone(),
                        stages: failure.partial,
                        elapsed_ms: 0,
                    },
                );
                failures.insert(id, failure.cause);
                continue;
            }
        };
        let improved_text = match final_text(&trace) {
            Ok(text) => text,
            Err(cause) => {
                failure_traces.insert(
                    id.clone(),
                    DialogueTrace {
                        id: id.clone(),
                        stages: trace.stages,
                        elapsed_ms: trace.elapsed_ms,
                    },
                );
                failures.insert(id, cause);
                continue;
            }
        };
        let human = record
            .response(&ResponderId::Human)
            .expect("validated above")
            .clone();
        let improved = ScoredResponse::new(teacher.clone(), improved_text, None);
        let human_score = human.empathy_score.expect("validated above").as_u8();
        improvements.push(ImprovedResponse {
            dialogue_id: id.clone(),
            initial: human.clone(),
            improved: improved.clone(),
            strategy,
            stage_texts: sequential_stage_texts(strategy, &trace.stages),
        });

        let class = if human_score == 3 {
            partition.sft.push(SftExample {
                context: record.context.clone(),
                response: human,
                provenance: Provenance::HumanOriginal,
            });
            partition.sft.push(SftExample {
                context: record.context.clone(),
                response: improved,
                provenance: Provenance::TeacherImproved,
            });
            SplitClass::Sft
        } else {
            match PreferencePair::new(record.context.clone(), improved, human) {
                Ok(pair) => partition.preference.push(pair),
                Err(PartitionError::DegeneratePair { .. }) => {
                    log::warn!("dialogue {id}: improved text equals the human original; pair dropped");
                    degenerate_pairs.push(id.clone());
                }
                Err(other) => return Err(other.into()),
            }
            SplitClass::Pref
        };
        partition.assignment.insert(id.clone(), class);
        run.manifest.insert(id, trace);
    }

    Ok(RunOutcome {
        run,
        partition,
        improvements,
        failures,
        failure_traces,
        degenerate_pairs,
    })
}

/// Method 3: targeted empathy improvement over teacher initial responses,
/// split by a reference ratio.
pub fn run_method3(
    distiller: &Distiller<'_>,
    corpus: &Corpus,
    strategy: PromptStrategy,
    ratio: &SplitRatio,
    seed: u64,
) -> Result<RunOutcome, DistillError> {
    if !strategy.is_improvement() {
        return Err(DistillError::ImprovementStrategyRequired { strategy });
    }
    let assignment = ratio_partition(corpus, ratio, seed)?;

    let records = corpus.records_by_id();
    let outcomes = parallel_map(&records, distiller.parallelism, |record| {
        let started = std::time::Instant::now();
        distiller
            .generate_bootstrap(strategy, record)
            .map(|stages| DialogueTrace {
                id: record.context.id.clone(),
                stages,
                elapsed_ms: started.elapsed().as_millis() as u64,
            })
    });

    let teacher = distiller.teacher();
    let mut run = DistillationRun {
        method: DistillMethod::ImproveLlmInitial,
        teacher: teacher.name().to_string(),
        strategy,
        seed,
        ratio: Some(*ratio),
        manifest: BTreeMap::new(),
    };
    let mut partition = DatasetPartition {
        teacher: teacher.clone(),
        sft: Vec::new(),
        preference: Vec::new(),
        test: Vec::new(),
        assignment: BTreeMap::new(),
    };
    let mut improvements = Vec::new();
    let mut failures = BTreeMap::new();
    let mut failure_traces = BTreeMap::new();
    let mut degenerate_pairs = Vec::new();

    for (record, outcome) in records.iter().zip(outcomes) {
        let id = record.context.id.clone();
        let trace = match outcome {
            Ok(trace) => trace,
            Err(failure) => {
                failure_traces.insert(
                    id.clone(),
                    DialogueTrace {
                        id: id.clone(),
                        stages: failure.partial,
                        elapsed_ms: 0,
                    },
                );
                failures.insert(id, failure.cause);
                continue;
            }
        };
        let improved_text = match final_text(&trace) {
            Ok(text) => text,
            Err(cause) => {
                failure_traces.insert(
                    id.clone(),
                    DialogueTrace {
                        id: id.clone(),
                        stages: trace.stages,
                        elapsed_ms: trace.elapsed_ms,
                    },
                );
                failures.insert(id, cause);
                continue;
            }
        };
        let initial_text = trace.stages.first().expect("direct stage").text.clone();
        let initial = ScoredResponse::new(teacher.clone(), initial_text, None);
        let improved = ScoredResponse::new(teacher.clone(), improved_text, None);
        improvements.push(ImprovedResponse {
            dialogue_id: id.clone(),
            initial: initial.clone(),
            improved: improved.clone(),
            strategy,
            stage_texts: sequential_stage_texts(strategy, &trace.stages[1..]),
        });

        let class = assignment[&id];
        match class {
            SplitClass::Sft => {
                // Both the initial and the improved response enter SFT as
                // separate examples, even when their texts coincide.
                partition.sft.push(SftExample {
                    context: record.context.clone(),
                    response: initial,
                    provenance: Provenance::TeacherInitial,
                });
                partition.sft.push(SftExample {
                    context: record.context.clone(),
                    response: improved,
                    provenance: Provenance::TeacherImproved,
                });
            }
            SplitClass::Pref => match PreferencePair::new(record.context.clone(), improved, initial) {
                Ok(pair) => partition.preference.push(pair),
                Err(PartitionError::DegeneratePair { .. }) => {
                    log::warn!("dialogue {id}: improved text equals the initial; pair dropped");
                    degenerate_pairs.push(id.clone());
                }
                Err(other) => return Err(other.into()),
            },
            SplitClass::Test => partition.test.push(record.context.clone()),
        }
        partition.assignment.insert(id.clone(), class);
        run.manifest.insert(id, trace);
    }

    Ok(RunOutcome {
        run,
        partition,
        improvements,
        failures,
        failure_traces,
        degenerate_pairs,
    })
}

#[derive(Serialize)]
struct ManifestHeader<'a> {
    schema: &'a str,
    version: u32,
    method: DistillMethod,
    teacher: &'a str,
    strategy: PromptStrategy,
    seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    ratio: Option<SplitRatio>,
    split_rule: &'a str,
}

#[derive(Serialize)]
struct ManifestRecord<'a> {
    id: &'a str,
    stages: &'a [StageTrace],
    elapsed_ms: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    failure: Option<&'a str>,
}

fn split_rule(method: DistillMethod) -> &'static str {
    match method {
        DistillMethod::Direct => {
            "human 3 and teacher 3 -> sft (both responses); human 1 or 2 and teacher 3 -> \
             preference (chosen teacher, rejected human); otherwise test"
        }
        DistillMethod::ImproveHuman => {
            "human 3 -> sft (human original + improved); human 1 or 2 -> preference \
             (chosen improved, rejected human original); failures excluded"
        }
        DistillMethod::ImproveLlmInitial => {
            "seeded ratio split; sft dialogues contribute initial + improved, preference \
             dialogues pair (chosen improved, rejected initial), test dialogues contexts only"
        }
    }
}

/// Writes `manifest.jsonl` (header, then one record per dialogue including
/// failed ones) and `config.json` (the run parameters) under `dir`.
pub fn write_run_artifacts(outcome: &RunOutcome, dir: &Path) -> Result<(), DistillError> {
    std::fs::create_dir_all(dir).map_err(|source| DistillError::Io {
        path: dir.to_path_buf(),
        source,
    })?;

    let manifest_path = dir.join("manifest.jsonl");
    let file = std::fs::File::create(&manifest_path).map_err(|source| DistillError::Io {
        path: manifest_path.clone(),
        source,
    })?;
    let mut writer = BufWriter::new(file);
    let mut write_line = |line: String| -> Result<(), DistillError> {
        writeln!(writer, "{line}").map_err(|source| DistillError::Io {
            path: manifest_path.clone(),
            source,
        })
    };

    let run = &outcome.run;
    let header = ManifestHeader {
        schema: "empathy-distill/run-manifest",
        version: 1,
        method: run.method,
        teacher: &run.teacher,
        strategy: run.strategy,
        seed: run.seed,
        ratio: run.ratio,
        split_rule: split_rule(run.method),
    };
    write_line(serde_json::to_string(&header).expect("header serializes"))?;

    let mut ids: Vec<&String> = run
        .manifest
        .keys()
        .chain(outcome.failures.keys())
        .collect();
    ids.sort();
    ids.dedup();
    for id in ids {
        let (stages, elapsed_ms): (&[StageTrace], u64) = match run.manifest.get(id) {
            Some(trace) => (&trace.stages, trace.elapsed_ms),
            None => match outcome.failure_traces.get(id) {
                Some(trace) => (&trace.stages, trace.elapsed_ms),
                None => (&[], 0),
            },
        };
        let record = ManifestRecord {
            id,
            stages,
            elapsed_ms,
            failure: outcome.failures.get(id).map(|s| s.as_str()),
        };
        write_line(serde_json::to_string(&record).expect("record serializes"))?;
    }
    writer.flush().map_err(|source| DistillError::Io {
        path: manifest_path.clone(),
        source,
    })?;

    let config_path = dir.join("config.json");
    let config = serde_json::json!({
        "method": run.method,
        "teacher": run.teacher,
        "strategy": run.strategy,
        "seed": run.seed,
        "ratio": run.ratio,
        "split_rule": split_rule(run.method),
        "dialogues": run.manifest.len() + outcome.failures.len(),
        "failures": outcome.failures.len(),
        "degenerate_pairs": outcome.degenerate_pairs,
    });
    std::fs::write(
        &config_path,
        serde_json::to_string_pretty(&config).expect("config serializes"),
    )
    .map_err(|source| DistillError::Io {
        path: config_path,
        source,
    })
}
