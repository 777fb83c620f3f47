//! Serialization of partitions into fine-tuning-ready files, plus training
//! config emission for an external trainer.
//!
//! All dataset files are record streams: a schema-version header object on
//! the first line, then one JSON record per line. SFT records are
//! `{instruction, input, output}`, preference records
//! `{instruction, input, chosen, rejected}`, test records
//! `{id, situation, utterance}`. The instruction is the direct task framing,
//! so fine-tuned models are trained under the same prompt they are later
//! evaluated with.

use std::collections::BTreeSet;
use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::DialogueContext;
use crate::partition::{PreferencePair, SftExample};

/// Fine-tuning stage a config drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainStage {
    Sft,
    Dpo,
}

impl std::fmt::Display for TrainStage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TrainStage::Sft => f.write_str("sft"),
            TrainStage::Dpo => f.write_str("dpo"),
        }
    }
}

/// Hyper-parameters handed to the external trainer.
///
/// The defaults are fixed: lora fine-tuning at rank 8, learning rate 5e-5,
/// 3.0 epochs, bf16 compute, batch size 2; DPO additionally uses beta 0.1
/// with sigmoid loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub stage: TrainStage,
    pub finetuning_method: String,
    pub lora_rank: u32,
    pub learning_rate: f64,
    pub epochs: f64,
    pub compute_type: String,
    pub batch_size: u32,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub dpo_beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub dpo_loss: Option<String>,
    pub dataset_path: PathBuf,
    pub base_model: String,
}

pub const DEFAULT_LORA_RANK: u32 = 8;
pub const DEFAULT_LEARNING_RATE: f64 = 5e-5;
pub const DEFAULT_EPOCHS: f64 = 3.0;
pub const DEFAULT_BATCH_SIZE: u32 = 2;
pub const DEFAULT_COMPUTE_TYPE: &str = "bf16";
pub const DEFAULT_DPO_BETA: f64 = 0.1;
pub const DEFAULT_DPO_LOSS: &str = "sigmoid";

impl TrainingConfig {
    pub fn new(stage: TrainStage, dataset_path: impl Into<PathBuf>, base_model: impl Into<String>) -> TrainingConfig {
        let dpo = stage == TrainStage::Dpo;
        TrainingConfig {
            stage,
            finetuning_method: "lora".to_string(),
            lora_rank: DEFAULT_LORA_RANK,
            learning_rate: DEFAULT_LEARNING_RATE,
            epochs: DEFAULT_EPOCHS,
            compute_type: DEFAULT_COMPUTE_TYPE.to_string(),
            batch_size: DEFAULT_BATCH_SIZE,
            dpo_beta: dpo.then_some(DEFAULT_DPO_BETA),
            dpo_loss: dpo.then(|| DEFAULT_DPO_LOSS.to_string()),
            dataset_path: dataset_path.into(),
            base_model: base_model.into(),
        }
    }

    /// Key-value rendering written to `.cfg` files.
    pub fn render(&self) -> String {
        let mut lines = vec![
            format!("stage = {}", self.stage),
            format!("finetuning_method = {}", self.finetuning_method),
            format!("lora_rank = {}", self.lora_rank),
            format!("learning_rate = {:e}", self.learning_rate),
            format!("epochs = {:?}", self.epochs),
            format!("compute_type = {}", self.compute_type),
            format!("batch_size = {}", self.batch_size),
        ];
        if let Some(beta) = self.dpo_beta {
            lines.push(format!("dpo_beta = {beta:?}"));
        }
        if let Some(loss) = &self.dpo_loss {
            lines.push(format!("dpo_loss = {loss}"));
        }
        lines.push(format!("dataset_path = {}", self.dataset_path.display()));
        lines.push(format!("base_model = {}", self.base_model));
        lines.join("\n") + "\n"
    }
}

/// Optional CLI overrides of the training defaults; every applied override is
/// reported so the run log records the deviation.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ConfigOverrides {
    pub learning_rate: Option<f64>,
    pub epochs: Option<f64>,
    pub batch_size: Option<u32>,
    pub lora_rank: Option<u32>,
    pub dpo_beta: Option<f64>,
}

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("empty dataset: no {what} to export")]
    EmptyDataset { what: &'static str },
    #[error("duplicate id {id} in test export")]
    DuplicateId { id: String },
    #[error("dataset file {path} does not exist")]
    MissingDataset { path: PathBuf },
    #[error("failed to write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: {detail}")]
    Schema {
        path: PathBuf,
        line: usize,
        detail: String,
    },
}

/// One exported SFT row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftRecord {
    pub instruction: String,
    pub input: String,
    pub output: String,
}

/// One exported preference row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferenceRecord {
    pub instruction: String,
    pub input: String,
    pub chosen: String,
    pub rejected: String,
}

/// One exported test row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestRecord {
    pub id: String,
    pub situation: String,
    pub utterance: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct SchemaHeader {
    schema: String,
    version: u32,
}

const SCHEMA_VERSION: u32 = 1;

/// The dialogue fields as they appear in a record's `input`.
pub fn format_input(context: &DialogueContext) -> String {
    format!(
        "Context: {}\nSpeaker Utterance: {}",
        context.situation, context.speaker_utterance
    )
}

fn write_stream<T: Serialize>(
    path: &Path,
    schema: &str,
    records: impl IntoIterator<Item = T>,
) -> Result<usize, ExportError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|source| ExportError::Io {
                path: parent.to_path_buf(),
                source,
            })?;
        }
    }
    let file = std::fs::File::create(path).map_err(|source| ExportError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut writer = BufWriter::new(file);
    let io_err = |source| ExportError::Io {
        path: path.to_path_buf(),
        source,
    };
    let header = SchemaHeader {
        schema: schema.to_string(),
        version: SCHEMA_VERSION,
    };
    writeln!(writer, "{}", serde_json::to_string(&header).expect("header serializes"))
        .map_err(io_err)?;
    let mut count = 0usize;
    for record in records {
        writeln!(writer, "{}", serde_json::to_string(&record).expect("record serializes"))
            .map_err(io_err)?;
        count += 1;
    }
    writer.flush().map_err(io_err)?;
    Ok(count)
}

fn read_stream<T: DeserializeOwned>(path: &Path, schema: &str) -> Result<Vec<T>, ExportError> {
    let file = std::fs::File::open(path).map_err(|source| ExportError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let reader = std::io::BufReader::new(file);
    let mut records = Vec::new();
    let mut lines = reader.lines().enumerate();
    let (_, header_line) = lines.next().ok_or_else(|| ExportError::Schema {
        path: path.to_path_buf(),
        line: 1,
        detail: "missing schema header".to_string(),
    })?;
    let header_line = header_line.map_err(|source| ExportError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let header: SchemaHeader =
        serde_json::from_str(&header_line).map_err(|e| ExportError::Schema {
            path: path.to_path_buf(),
            line: 1,
            detail: format!("bad schema header: {e}"),
        })?;
    if header.schema != schema || header.version != SCHEMA_VERSION {
        return Err(ExportError::Schema {
            path: path.to_path_buf(),
            line: 1,
            detail: format!(
                "expected schema {schema} v{SCHEMA_VERSION}, found {} v{}",
                header.schema, header.version
            ),
        });
    }
    for (index, line) in lines {
        let line = line.map_err(|source| ExportError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| ExportError::Schema {
            path: path.to_path_buf(),
            line: index + 1,
            detail: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

/// Writes SFT examples as `{instruction, input, output}` records. Returns the
/// number of records written.
pub fn export_sft(
    examples: &[SftExample],
    instruction: &str,
    path: &Path,
) -> Result<usize, ExportError> {
    if examples.is_empty() {
        return Err(ExportError::EmptyDataset { what: "sft examples" });
    }
    write_stream(
        path,
        "empathy-distill/sft",
        examples.iter().map(|example| SftRecord {
            instruction: instruction.to_string(),
            input: format_input(&example.context),
            output: example.response.text.clone(),
        }),
    )
}

/// Writes preference pairs as `{instruction, input, chosen, rejected}` records.
pub fn export_preference(
    pairs: &[PreferencePair],
    instruction: &str,
    path: &Path,
) -> Result<usize, ExportError> {
    if pairs.is_empty() {
        return Err(ExportError::EmptyDataset { what: "preference pairs" });
    }
    write_stream(
        path,
        "empathy-distill/preference",
        pairs.iter().map(|pair| PreferenceRecord {
            instruction: instruction.to_string(),
            input: format_input(&pair.context),
            chosen: pair.chosen.text.clone(),
            rejected: pair.rejected.text.clone(),
        }),
    )
}

/// Writes test contexts as `{id, situation, utterance}` records.
pub fn export_test(contexts: &[DialogueContext], path: &Path) -> Result<usize, ExportError> {
    if contexts.is_empty() {
        return Err(ExportError::EmptyDataset { what: "test contexts" });
    }
    let mut seen = BTreeSet::new();
    for context in contexts {
        if !seen.insert(context.id.as_str()) {
            return Err(ExportError::DuplicateId {
                id: context.id.clone(),
            });
        }
    }
    write_stream(
        path,
        "empathy-distill/test",
        contexts.iter().map(|context| TestRecord {
            id: context.id.clone(),
            situation: context.situation.clone(),
            utterance: context.speaker_utterance.clone(),
        }),
    )
}

pub fn load_sft(path: &Path) -> Result<Vec<SftRecord>, ExportError> {
    read_stream(path, "empathy-distill/sft")
}

pub fn load_preference(path: &Path) -> Result<Vec<PreferenceRecord>, ExportError> {
    read_stream(path, "empathy-distill/preference")
}

pub fn load_test(path: &Path) -> Result<Vec<TestRecord>, ExportError> {
    read_stream(path, "empathy-distill/test")
}

/// Emits the training config for `stage` to `path`, applying any overrides.
///
/// Returns the config and one note per applied override for the run log. The
/// dataset file must already exist.
pub fn emit_training_config(
    stage: TrainStage,
    dataset_path: &Path,
    base_model: &str,
    path: &Path,
    overrides: &ConfigOverrides,
) -> Result<(TrainingConfig, Vec<String>), ExportError> {
    if !dataset_path.exists() {
        return Err(ExportError::MissingDataset {
            path: dataset_path.to_path_buf(),
        });
    }
    // Reference the dataset relative to the config so a run directory can be
    // moved wholesale.
    let recorded = path
        .parent()
        .and_then(|dir| dataset_path.strip_prefix(dir).ok())
        .unwrap_or(dataset_path);
    let mut config = TrainingConfig::new(stage, recorded, base_model);
    let mut notes = Vec::new();
    if let Some(learning_rate) = overrides.learning_rate {
        notes.push(format!(
            "override: learning_rate = {learning_rate:e} (default {DEFAULT_LEARNING_RATE:e})"
        ));
        config.learning_rate = learning_rate;
    }
    if let Some(epochs) = overrides.epochs {
        notes.push(format!("override: epochs = {epochs:?} (default {DEFAULT_EPOCHS:?})"));
        config.epochs = epochs;
    }
    if let Some(batch_size) = overrides.batch_size {
        notes.push(format!("override: batch_size = {batch_size} (default {DEFAULT_BATCH_SIZE})"));
        config.batch_size = batch_size;
    }
    if let Some(lora_rank) = overrides.lora_rank {
        notes.push(format!("override: lora_rank = {lora_rank} (default {DEFAULT_LORA_RANK})"));
        config.lora_rank = lora_rank;
    }
    if let Some(beta) = overrides.dpo_beta {
        if stage == TrainStage::Dpo {
            notes.push(format!("override: dpo_beta = {beta:?} (default {DEFAULT_DPO_BETA:?})"));
            config.dpo_beta = Some(beta);
        }
    }
    for note in &notes {
        log::info!("{note}");
    }
    std::fs::write(path, config.render()).map_err(|source| ExportError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok((config, notes))
}

/// Parses a `.cfg` file back into key-value pairs.
pub fn parse_training_config(path: &Path) -> Result<std::collections::BTreeMap<String, String>, ExportError> {
    let raw = std::fs::read_to_string(path).map_err(|source| ExportError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut values = std::collections::BTreeMap::new();
    for (index, line) in raw.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| ExportError::Schema {
            path: path.to_path_buf(),
            line: index + 1,
            detail: format!("expected key = value, found {line:?}"),
        })?;
        values.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{load_corpus, EmpathyScore, ResponderId, ScoredResponse};
    use crate::partition::{partition_by_scores, Provenance};
    use proptest::prelude::*;

    fn context(id: &str) -> DialogueContext {
        DialogueContext {
            id: id.to_string(),
            situation: format!("situation {id}"),
            speaker_utterance: format!("utterance {id}"),
        }
    }

    fn example(id: &str, text: &str) -> SftExample {
        SftExample {
            context: context(id),
            response: ScoredResponse::new(
                ResponderId::model("GPT-4"),
                text,
                Some(EmpathyScore::Good),
            ),
            provenance: Provenance::TeacherDirect,
        }
    }

    const INSTRUCTION: &str = "Generate an empathetic response, using on average 28 words and a maximum of 97 words, to the speaker utterance in the given context.";

    #[test]
    fn sft_export_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sft.jsonl");
        let examples = vec![example("a", "first response"), example("b", "second response")];
        let count = export_sft(&examples, INSTRUCTION, &path).unwrap();
        assert_eq!(count, 2);
        let records = load_sft(&path).unwrap();
        assert_eq!(records.len(), 2);
        assert_eq!(records[0].output, "first response");
        assert_eq!(records[0].instruction, INSTRUCTION);
        assert_eq!(records[0].input, "Context: situation a\nSpeaker Utterance: utterance a");
    }

    #[test]
    fn taco_sft_record_carries_the_model_text() {
        let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/taco.jsonl");
        let corpus = load_corpus(&path, None).unwrap();
        let record = &corpus.records()[0];
        let gpt4 = record.response(&ResponderId::model("GPT-4")).unwrap().clone();
        let sft = SftExample {
            context: record.context.clone(),
            response: gpt4,
            provenance: Provenance::TeacherDirect,
        };
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("sft.jsonl");
        export_sft(&[sft], INSTRUCTION, &out).unwrap();
        let records = load_sft(&out).unwrap();
        assert!(records[0]
            .output
            .starts_with("I'm really sorry to hear about your tacos."));
    }

    #[test]
    fn hundred_examples_write_one_record_per_line_plus_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sft.jsonl");
        let examples: Vec<SftExample> = (0..100)
            .map(|i| example(&format!("d{i:03}"), &format!("response {i}")))
            .collect();
        let count = export_sft(&examples, INSTRUCTION, &path).unwrap();
        assert_eq!(count, 100);
        let raw = std::fs::read_to_string(&path).unwrap();
        assert_eq!(raw.lines().count(), 101, "schema header plus 100 records");
        let reloaded = load_sft(&path).unwrap();
        assert_eq!(reloaded.len(), 100);
        for (i, record) in reloaded.iter().enumerate() {
            assert_eq!(record.output, format!("response {i}"));
        }
    }

    #[test]
    fn preference_export_round_trips_and_rejects_empty() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dpo.jsonl");
        assert!(matches!(
            export_preference(&[], INSTRUCTION, &path),
            Err(ExportError::EmptyDataset { .. })
        ));

        let taco = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/taco.jsonl");
        let corpus = load_corpus(&taco, None).unwrap();
        let partition = partition_by_scores(&corpus, &ResponderId::model("GPT-4")).unwrap();
        export_preference(&partition.preference, INSTRUCTION, &path).unwrap();
        let records = load_preference(&path).unwrap();
        assert_eq!(records.len(), 1);
        assert!(records[0].chosen.starts_with("I'm really sorry to hear about your tacos."));
        assert!(records[0].rejected.starts_with("NOT THE TACOS!!!!"));
        assert_ne!(records[0].chosen, records[0].rejected);
    }

    #[test]
    fn test_export_round_trips_and_rejects_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("test.jsonl");
        let contexts = vec![context("a"), context("b"), context("c")];
        assert_eq!(export_test(&contexts, &path).unwrap(), 3);
        let records = load_test(&path).unwrap();
        assert_eq!(records.len(), 3);
        assert_eq!(records[1].id, "b");

        let dupes = vec![context("a"), context("a")];
        assert!(matches!(
            export_test(&dupes, &path),
            Err(ExportError::DuplicateId { .. })
        ));
    }

    #[test]
    fn sft_config_has_the_fixed_hyperparameters() {
        let dir = tempfile::tempdir().unwrap();
        let dataset = dir.path().join("sft.jsonl");
        export_sft(&[example("a", "text")], INSTRUCTION, &dataset).unwrap();
        let out = dir.path().join("train_sft.cfg");
        let (config, notes) = emit_training_config(
            TrainStage::Sft,
            &dataset,
            "llama-3.1-8b",
            &out,
            &ConfigOverrides::default(),
        )
        .unwrap();
        assert!(notes.is_empty());
        assert_eq!(config.lora_rank, 8);
        let values = parse_training_config(&out).unwrap();
        assert_eq!(values["stage"], "sft");
        assert_eq!(values["finetuning_method"], "lora");
        assert_eq!(values["lora_rank"], "8");
        assert_eq!(values["learning_rate"], "5e-5");
        assert_eq!(values["epochs"], "3.0");
        assert_eq!(values["compute_type"], "bf16");
        assert_eq!(values["batch_size"], "2");
        assert_eq!(values["base_model"], "llama-3.1-8b");
        assert!(!values.contains_key("dpo_beta"));
    }

    #[test]
    fn dpo_config_adds_beta_and_loss() {
        let dir = tempfile::tempdir().unwrap();
        let dataset = dir.path().join("dpo.jsonl");
        std::fs::write(&dataset, "x\n").unwrap();
        let out = dir.path().join("train_dpo.cfg");
        emit_training_config(
            TrainStage::Dpo,
            &dataset,
            "mistral-7b-v0.3",
            &out,
            &ConfigOverrides::default(),
        )
        .unwrap();
        let values = parse_training_config(&out).unwrap();
        assert_eq!(values["dpo_beta"], "0.1");
        assert_eq!(values["dpo_loss"], "sigmoid");
    }

    #[test]
    fn overrides_apply_and_are_noted() {
        let dir = tempfile::tempdir().unwrap();
        let dataset = dir.path().join("sft.jsonl");
        std::fs::write(&dataset, "x\n").unwrap();
        let out = dir.path().join("train_sft.cfg");
        let overrides = ConfigOverrides {
            epochs: Some(1.0),
            ..ConfigOverrides::default()
        };
        let (config, notes) =
            emit_training_config(TrainStage::Sft, &dataset, "m", &out, &overrides).unwrap();
        assert_eq!(config.epochs, 1.0);
        assert_eq!(notes.len(), 1);
        assert!(notes[0].contains("epochs = 1.0"));
        let values = parse_training_config(&out).unwrap();
        assert_eq!(values["epochs"], "1.0");
    }

    #[test]
    fn missing_dataset_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("train_sft.cfg");
        assert!(matches!(
            emit_training_config(
                TrainStage::Sft,
                &dir.path().join("nope.jsonl"),
                "m",
                &out,
                &ConfigOverrides::default()
            ),
            Err(ExportError::MissingDataset { .. })
        ));
    }

    proptest! {
        #[test]
        fn sft_round_trip_preserves_arbitrary_text(
            texts in proptest::collection::vec("[^\u{0}]{1,80}", 1..20)
        ) {
            let examples: Vec<SftExample> = texts
                .iter()
                .enumerate()
                .filter(|(_, t)| !t.trim().is_empty())
                .map(|(i, t)| example(&format!("d{i}"), t))
                .collect();
            prop_assume!(!examples.is_empty());
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("sft.jsonl");
            export_sft(&examples, INSTRUCTION, &path).unwrap();
            let reloaded = load_sft(&path).unwrap();
            prop_assert_eq!(reloaded.len(), examples.len());
            for (record, example) in reloaded.iter().zip(&examples) {
                prop_assert_eq!(&record.output, &example.response.text);
            }
        }
    }
}
