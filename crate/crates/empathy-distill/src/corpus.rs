//! Scored-dialogue corpus loading, validation, and summary statistics.
//!
//! A corpus is a set of dialogue contexts, each with a human response and the
//! responses of one or more teacher models, every response optionally carrying
//! a human-annotated empathy score on the 1-3 scale (1 bad, 2 okay, 3 good).
//!
//! Two on-disk dialects are accepted:
//!
//! - **Delimited table** (`.csv` / `.tsv`): one row per dialogue with a header
//!   `id, situation, utterance, human_response, human_score,
//!   <model>_response, <model>_score, ...`. Extra responder column pairs are
//!   picked up as additional teachers.
//! - **Record stream** (`.jsonl` / `.ndjson`): one JSON object per line with
//!   fields `id, situation, utterance, responses: [{responder, text, score}]`.
//!
//! Both are UTF-8. Text fields are trimmed on load; no other normalization.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Human-annotated empathy score: 1 bad, 2 okay, 3 good.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EmpathyScore {
    Bad,
    Okay,
    Good,
}

impl EmpathyScore {
    pub const ALL: [EmpathyScore; 3] = [EmpathyScore::Bad, EmpathyScore::Okay, EmpathyScore::Good];

    pub fn as_u8(self) -> u8 {
        match self {
            EmpathyScore::Bad => 1,
            EmpathyScore::Okay => 2,
            EmpathyScore::Good => 3,
        }
    }

    pub fn from_u8(value: u8) -> Result<Self, CorpusError> {
        match value {
            1 => Ok(EmpathyScore::Bad),
            2 => Ok(EmpathyScore::Okay),
            3 => Ok(EmpathyScore::Good),
            other => Err(CorpusError::InvalidScore { value: other as i64 }),
        }
    }

    fn index(self) -> usize {
        self.as_u8() as usize - 1
    }
}

impl fmt::Display for EmpathyScore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_u8())
    }
}

impl Serialize for EmpathyScore {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_u8(self.as_u8())
    }
}

impl<'de> Deserialize<'de> for EmpathyScore {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let value = i64::deserialize(deserializer)?;
        if !(1..=3).contains(&value) {
            return Err(D::Error::custom(format!(
                "empathy score {value} outside {{1,2,3}}"
            )));
        }
        Ok(EmpathyScore::from_u8(value as u8).expect("range checked"))
    }
}

/// Who produced a response: the one reserved human annotator, or a named model.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ResponderId {
    Human,
    Model(String),
}

/// The reserved responder name for human responses.
pub const HUMAN_NAME: &str = "Human";

impl ResponderId {
    /// Builds a responder from its name; the reserved name maps to `Human`.
    pub fn from_name(name: &str) -> ResponderId {
        if name == HUMAN_NAME {
            ResponderId::Human
        } else {
            ResponderId::Model(name.to_string())
        }
    }

    pub fn model(name: impl Into<String>) -> ResponderId {
        ResponderId::Model(name.into())
    }

    pub fn name(&self) -> &str {
        match self {
            ResponderId::Human => HUMAN_NAME,
            ResponderId::Model(name) => name,
        }
    }

    pub fn is_human(&self) -> bool {
        matches!(self, ResponderId::Human)
    }
}

impl fmt::Display for ResponderId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Serialize for ResponderId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for ResponderId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let name = String::deserialize(deserializer)?;
        if name.trim().is_empty() {
            return Err(D::Error::custom("responder name is empty"));
        }
        Ok(ResponderId::from_name(name.trim()))
    }
}

/// One dialogue context: a situation description plus the speaker utterance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueContext {
    pub id: String,
    pub situation: String,
    #[serde(rename = "utterance")]
    pub speaker_utterance: String,
}

/// A single response to a dialogue, optionally scored.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoredResponse {
    pub responder: ResponderId,
    pub text: String,
    #[serde(rename = "score", skip_serializing_if = "Option::is_none", default)]
    pub empathy_score: Option<EmpathyScore>,
}

impl ScoredResponse {
    pub fn new(
        responder: ResponderId,
        text: impl Into<String>,
        empathy_score: Option<EmpathyScore>,
    ) -> ScoredResponse {
        ScoredResponse {
            responder,
            text: text.into(),
            empathy_score,
        }
    }
}

/// One dialogue context plus all responses to it, at most one per responder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DialogueRecord {
    pub context: DialogueContext,
    pub responses: BTreeMap<ResponderId, ScoredResponse>,
}

impl DialogueRecord {
    pub fn new(
        context: DialogueContext,
        responses: impl IntoIterator<Item = ScoredResponse>,
    ) -> Result<DialogueRecord, CorpusError> {
        let mut map = BTreeMap::new();
        for response in responses {
            let responder = response.responder.clone();
            if map.insert(responder.clone(), response).is_some() {
                return Err(CorpusError::Record {
                    id: context.id.clone(),
                    message: format!("more than one response from {responder}"),
                });
            }
        }
        Ok(DialogueRecord {
            context,
            responses: map,
        })
    }

    pub fn response(&self, responder: &ResponderId) -> Option<&ScoredResponse> {
        self.responses.get(responder)
    }

    /// The scored response of `responder`, or an error naming what is missing.
    pub fn scored_response(&self, responder: &ResponderId) -> Result<&ScoredResponse, CorpusError> {
        let response = self
            .response(responder)
            .ok_or_else(|| CorpusError::MissingResponse {
                id: self.context.id.clone(),
                responder: responder.name().to_string(),
            })?;
        if response.empathy_score.is_none() {
            return Err(CorpusError::Unscored {
                id: self.context.id.clone(),
                responder: responder.name().to_string(),
            });
        }
        Ok(response)
    }
}

/// A validated collection of dialogue records with unique ids.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Corpus {
    records: Vec<DialogueRecord>,
}

impl Corpus {
    /// Validates and assembles records into a corpus.
    ///
    /// Text fields are trimmed; empty ids, situations, utterances, or response
    /// texts (including whitespace-only ones) are rejected, as are duplicate
    /// dialogue ids.
    pub fn from_records(
        records: impl IntoIterator<Item = DialogueRecord>,
    ) -> Result<Corpus, CorpusError> {
        let mut seen = BTreeSet::new();
        let mut validated = Vec::new();
        for mut record in records {
            record.context.id = record.context.id.trim().to_string();
            record.context.situation = record.context.situation.trim().to_string();
            record.context.speaker_utterance = record.context.speaker_utterance.trim().to_string();
            let id = record.context.id.clone();
            if id.is_empty() {
                return Err(CorpusError::Record {
                    id: "<unknown>".to_string(),
                    message: "empty dialogue id".to_string(),
                });
            }
            if !seen.insert(id.clone()) {
                return Err(CorpusError::DuplicateId { id });
            }
            if record.context.situation.is_empty() {
                return Err(CorpusError::Record {
                    id,
                    message: "empty situation".to_string(),
                });
            }
            if record.context.speaker_utterance.is_empty() {
                return Err(CorpusError::Record {
                    id,
                    message: "empty speaker utterance".to_string(),
                });
            }
            let mut responses = BTreeMap::new();
            for (responder, mut response) in std::mem::take(&mut record.responses) {
                response.text = response.text.trim().to_string();
                if response.text.is_empty() {
                    return Err(CorpusError::Record {
                        id,
                        message: format!("empty response text from {responder}"),
                    });
                }
                if response.responder != responder {
                    return Err(CorpusError::Record {
                        id,
                        message: format!(
                            "response keyed under {responder} names responder {}",
                            response.responder
                        ),
                    });
                }
                responses.insert(responder, response);
            }
            record.responses = responses;
            validated.push(record);
        }
        Ok(Corpus { records: validated })
    }

    pub fn records(&self) -> &[DialogueRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&DialogueRecord> {
        self.records.iter().find(|r| r.context.id == id)
    }

    /// All dialogue ids, sorted.
    pub fn sorted_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.records.iter().map(|r| r.context.id.clone()).collect();
        ids.sort();
        ids
    }

    /// Records in dialogue-id order, the canonical processing order.
    pub fn records_by_id(&self) -> Vec<&DialogueRecord> {
        let mut refs: Vec<&DialogueRecord> = self.records.iter().collect();
        refs.sort_by(|a, b| a.context.id.cmp(&b.context.id));
        refs
    }

    /// Every responder that appears in at least one record.
    pub fn responders(&self) -> BTreeSet<ResponderId> {
        self.records
            .iter()
            .flat_map(|r| r.responses.keys().cloned())
            .collect()
    }

    fn contains_responder(&self, responder: &ResponderId) -> bool {
        self.records.iter().any(|r| r.responses.contains_key(responder))
    }
}

/// Per-responder tally of empathy scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ScoreHistogram {
    counts: [u64; 3],
}

impl ScoreHistogram {
    pub fn count(&self, score: EmpathyScore) -> u64 {
        self.counts[score.index()]
    }

    pub fn increment(&mut self, score: EmpathyScore) {
        self.counts[score.index()] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// The score with the highest count; ties break toward the higher score.
    pub fn modal_score(&self) -> EmpathyScore {
        let mut best = EmpathyScore::Bad;
        for score in EmpathyScore::ALL {
            if self.count(score) >= self.count(best) {
                best = score;
            }
        }
        best
    }
}

/// 3x3 grid counting records by (human score, model score).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RatingPairMatrix {
    cells: [[u64; 3]; 3],
}

impl RatingPairMatrix {
    pub fn cell(&self, human: EmpathyScore, model: EmpathyScore) -> u64 {
        self.cells[human.index()][model.index()]
    }

    pub fn increment(&mut self, human: EmpathyScore, model: EmpathyScore) {
        self.cells[human.index()][model.index()] += 1;
    }

    pub fn total(&self) -> u64 {
        self.cells.iter().flatten().sum()
    }

    /// Marginal over human scores (row sums).
    pub fn human_marginal(&self) -> ScoreHistogram {
        let mut hist = ScoreHistogram::default();
        for human in EmpathyScore::ALL {
            for model in EmpathyScore::ALL {
                for _ in 0..self.cell(human, model) {
                    hist.increment(human);
                }
            }
        }
        hist
    }

    /// Marginal over model scores (column sums).
    pub fn model_marginal(&self) -> ScoreHistogram {
        let mut hist = ScoreHistogram::default();
        for human in EmpathyScore::ALL {
            for model in EmpathyScore::ALL {
                for _ in 0..self.cell(human, model) {
                    hist.increment(model);
                }
            }
        }
        hist
    }
}

/// On-disk corpus dialect.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusDialect {
    /// Column-delimited table, one row per dialogue.
    DelimitedTable,
    /// Line-delimited records, one JSON object per dialogue.
    RecordStream,
}

impl CorpusDialect {
    /// Dialect implied by a file extension, if any.
    pub fn from_extension(path: &Path) -> Option<CorpusDialect> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") | Some("tsv") => Some(CorpusDialect::DelimitedTable),
            Some("jsonl") | Some("ndjson") => Some(CorpusDialect::RecordStream),
            _ => None,
        }
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("no records in {path}")]
    NoRecords { path: PathBuf },
    #[error("cannot detect corpus dialect from the extension of {path}; pass the dialect explicitly")]
    UnknownDialect { path: PathBuf },
    #[error("row {row}, column {column}: {message}")]
    Row {
        row: usize,
        column: String,
        message: String,
    },
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("empathy score {value} outside {{1,2,3}}")]
    InvalidScore { value: i64 },
    #[error("duplicate dialogue id {id}")]
    DuplicateId { id: String },
    #[error("record {id}: {message}")]
    Record { id: String, message: String },
    #[error("unknown responder {responder}")]
    UnknownResponder { responder: String },
    #[error("record {id}: response from {responder} has no empathy score")]
    Unscored { id: String, responder: String },
    #[error("record {id}: no response from {responder}")]
    MissingResponse { id: String, responder: String },
}

/// Loads a corpus from `path`, auto-detecting the dialect from the extension
/// unless one is passed explicitly.
pub fn load_corpus(path: &Path, dialect: Option<CorpusDialect>) -> Result<Corpus, CorpusError> {
    let dialect = match dialect.or_else(|| CorpusDialect::from_extension(path)) {
        Some(d) => d,
        None => {
            return Err(CorpusError::UnknownDialect {
                path: path.to_path_buf(),
            })
        }
    };
    let records = match dialect {
        CorpusDialect::DelimitedTable => load_delimited(path)?,
        CorpusDialect::RecordStream => load_record_stream(path)?,
    };
    if records.is_empty() {
        return Err(CorpusError::NoRecords {
            path: path.to_path_buf(),
        });
    }
    let corpus = Corpus::from_records(records)?;
    log::info!("loaded {} records from {}", corpus.len(), path.display());
    Ok(corpus)
}

/// Writes a corpus in the record-stream dialect, one JSON object per line.
pub fn save_records(corpus: &Corpus, path: &Path) -> Result<(), CorpusError> {
    let file = std::fs::File::create(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut writer = BufWriter::new(file);
    for record in corpus.records() {
        let raw = RawRecord {
            id: record.context.id.clone(),
            situation: record.context.situation.clone(),
            utterance: record.context.speaker_utterance.clone(),
            responses: record
                .responses
                .values()
                .map(|r| RawResponse {
                    responder: r.responder.name().to_string(),
                    text: r.text.clone(),
                    score: r.empathy_score,
                })
                .collect(),
        };
        let line = serde_json::to_string(&raw).expect("corpus records serialize");
        writeln!(writer, "{line}").map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })?;
    }
    writer.flush().map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Serialize, Deserialize)]
struct RawRecord {
    id: String,
    situation: String,
    utterance: String,
    responses: Vec<RawResponse>,
}

#[derive(Serialize, Deserialize)]
struct RawResponse {
    responder: String,
    text: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    score: Option<EmpathyScore>,
}

fn load_record_stream(path: &Path) -> Result<Vec<DialogueRecord>, CorpusError> {
    let file = std::fs::File::open(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let reader = std::io::BufReader::new(file);
    let mut records = Vec::new();
    for (index, line) in reader.lines().enumerate() {
        let line_no = index + 1;
        let line = line.map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(&line).map_err(|e| CorpusError::Line {
            line: line_no,
            message: e.to_string(),
        })?;
        let responses: Vec<ScoredResponse> = raw
            .responses
            .into_iter()
            .map(|r| ScoredResponse::new(ResponderId::from_name(r.responder.trim()), r.text, r.score))
            .collect();
        let record = DialogueRecord::new(
            DialogueContext {
                id: raw.id,
                situation: raw.situation,
                speaker_utterance: raw.utterance,
            },
            responses,
        )
        .map_err(|e| CorpusError::Line {
            line: line_no,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

/// A responder's column pair in the delimited dialect.
struct ResponderColumns {
    responder: ResponderId,
    text_index: usize,
    text_column: String,
    score_index: Option<usize>,
    score_column: String,
}

fn load_delimited(path: &Path) -> Result<Vec<DialogueRecord>, CorpusError> {
    let delimiter = match path.extension().and_then(|e| e.to_str()) {
        Some("tsv") => b'\t',
        _ => b',',
    };
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .flexible(false)
        .from_path(path)
        .map_err(|e| csv_error(path, 1, e))?;

    let headers = reader
        .headers()
        .map_err(|e| csv_error(path, 1, e))?
        .clone();
    let mut column_of = BTreeMap::new();
    for (index, name) in headers.iter().enumerate() {
        column_of.insert(name.trim().to_string(), index);
    }
    for required in ["id", "situation", "utterance"] {
        if !column_of.contains_key(required) {
            return Err(CorpusError::Row {
                row: 1,
                column: required.to_string(),
                message: "missing required column".to_string(),
            });
        }
    }

    // Every `<name>_response` column defines a responder; `<name>_score` is
    // optional. Extra responder columns beyond the known teachers are kept.
    let mut responder_columns = Vec::new();
    for (name, &index) in &column_of {
        if let Some(prefix) = name.strip_suffix("_response") {
            let responder = if prefix == "human" {
                ResponderId::Human
            } else {
                ResponderId::Model(prefix.to_string())
            };
            let score_column = format!("{prefix}_score");
            responder_columns.push(ResponderColumns {
                responder,
                text_index: index,
                text_column: name.clone(),
                score_index: column_of.get(&score_column).copied(),
                score_column,
            });
        }
    }

    let id_index = column_of["id"];
    let situation_index = column_of["situation"];
    let utterance_index = column_of["utterance"];

    let mut records = Vec::new();
    for (index, row) in reader.records().enumerate() {
        let row_no = index + 2; // header is row 1
        let row = row.map_err(|e| csv_error(path, row_no, e))?;
        let field = |i: usize| row.get(i).unwrap_or("").trim().to_string();
        let mut responses = Vec::new();
        for columns in &responder_columns {
            let text = field(columns.text_index);
            let score_raw = columns.score_index.map(&field).unwrap_or_default();
            if text.is_empty() {
                if !score_raw.is_empty() {
                    return Err(CorpusError::Row {
                        row: row_no,
                        column: columns.text_column.clone(),
                        message: format!(
                            "score present but response text missing for {}",
                            columns.responder
                        ),
                    });
                }
                continue;
            }
            let score = if score_raw.is_empty() {
                None
            } else {
                let value: i64 = score_raw.parse().map_err(|_| CorpusError::Row {
                    row: row_no,
                    column: columns.score_column.clone(),
                    message: format!("cannot parse empathy score {score_raw:?}"),
                })?;
                if !(1..=3).contains(&value) {
                    return Err(CorpusError::Row {
                        row: row_no,
                        column: columns.score_column.clone(),
                        message: format!("empathy score {value} outside {{1,2,3}}"),
                    });
                }
                Some(EmpathyScore::from_u8(value as u8).expect("range checked"))
            };
            responses.push(ScoredResponse::new(columns.responder.clone(), text, score));
        }
        let record = DialogueRecord::new(
            DialogueContext {
                id: field(id_index),
                situation: field(situation_index),
                speaker_utterance: field(utterance_index),
            },
            responses,
        )
        .map_err(|e| CorpusError::Row {
            row: row_no,
            column: "id".to_string(),
            message: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

fn csv_error(path: &Path, row: usize, error: csv::Error) -> CorpusError {
    CorpusError::Row {
        row,
        column: path.display().to_string(),
        message: error.to_string(),
    }
}

/// Tally of `responder`'s empathy scores across the corpus.
///
/// Records without a response from `responder` are not counted; a response
/// without a score is an error. A responder absent from a non-empty corpus is
/// reported as unknown.
pub fn score_distribution(
    corpus: &Corpus,
    responder: &ResponderId,
) -> Result<ScoreHistogram, CorpusError> {
    if !corpus.is_empty() && !corpus.contains_responder(responder) {
        return Err(CorpusError::UnknownResponder {
            responder: responder.name().to_string(),
        });
    }
    let mut hist = ScoreHistogram::default();
    for record in corpus.records() {
        if let Some(response) = record.response(responder) {
            let score = response
                .empathy_score
                .ok_or_else(|| CorpusError::Unscored {
                    id: record.context.id.clone(),
                    responder: responder.name().to_string(),
                })?;
            hist.increment(score);
        }
    }
    Ok(hist)
}

/// Counts records by (human score, `model` score).
///
/// Every record must carry a scored human response and a scored response from
/// `model`; the cells sum to the record count.
pub fn rating_pair_matrix(
    corpus: &Corpus,
    model: &ResponderId,
) -> Result<RatingPairMatrix, CorpusError> {
    if model.is_human() {
        return Err(CorpusError::UnknownResponder {
            responder: format!("{HUMAN_NAME} (expected a model responder)"),
        });
    }
    if !corpus.is_empty() && !corpus.contains_responder(model) {
        return Err(CorpusError::UnknownResponder {
            responder: model.name().to_string(),
        });
    }
    let mut matrix = RatingPairMatrix::default();
    for record in corpus.records() {
        let human = record.scored_response(&ResponderId::Human)?;
        let model_response = record.scored_response(model)?;
        matrix.increment(
            human.empathy_score.expect("checked by scored_response"),
            model_response.empathy_score.expect("checked by scored_response"),
        );
    }
    Ok(matrix)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn context(id: &str) -> DialogueContext {
        DialogueContext {
            id: id.to_string(),
            situation: format!("situation {id}"),
            speaker_utterance: format!("utterance {id}"),
        }
    }

    fn record(id: &str, scores: &[(&str, u8)]) -> DialogueRecord {
        let responses = scores.iter().map(|(name, score)| {
            ScoredResponse::new(
                ResponderId::from_name(name),
                format!("{name} response to {id}"),
                Some(EmpathyScore::from_u8(*score).unwrap()),
            )
        });
        DialogueRecord::new(context(id), responses).unwrap()
    }

    fn taco_corpus() -> Corpus {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/taco.jsonl");
        load_corpus(&path, None).unwrap()
    }

    #[test]
    fn taco_fixture_loads_with_five_responders() {
        let corpus = taco_corpus();
        assert_eq!(corpus.len(), 1);
        let record = &corpus.records()[0];
        assert_eq!(record.responses.len(), 5);
        assert_eq!(
            record
                .response(&ResponderId::Human)
                .unwrap()
                .empathy_score
                .unwrap()
                .as_u8(),
            1
        );
        assert_eq!(
            record
                .response(&ResponderId::model("GPT-4"))
                .unwrap()
                .empathy_score
                .unwrap()
                .as_u8(),
            3
        );
    }

    #[test]
    fn taco_human_histogram_counts_one_bad() {
        let corpus = taco_corpus();
        let hist = score_distribution(&corpus, &ResponderId::Human).unwrap();
        assert_eq!(hist.count(EmpathyScore::Bad), 1);
        assert_eq!(hist.count(EmpathyScore::Okay), 0);
        assert_eq!(hist.count(EmpathyScore::Good), 0);
    }

    #[test]
    fn taco_gpt4_matrix_has_single_cell() {
        let corpus = taco_corpus();
        let matrix = rating_pair_matrix(&corpus, &ResponderId::model("GPT-4")).unwrap();
        assert_eq!(matrix.cell(EmpathyScore::Bad, EmpathyScore::Good), 1);
        assert_eq!(matrix.total(), 1);
    }

    #[test]
    fn empty_corpus_yields_zero_histogram_and_matrix() {
        let corpus = Corpus::default();
        let hist = score_distribution(&corpus, &ResponderId::Human).unwrap();
        assert_eq!(hist.total(), 0);
        for score in EmpathyScore::ALL {
            assert_eq!(hist.count(score), 0);
        }
        let matrix = rating_pair_matrix(&corpus, &ResponderId::model("GPT-4")).unwrap();
        assert_eq!(matrix.total(), 0);
    }

    #[test]
    fn histogram_matches_brute_force_tally() {
        // Independent oracle: count each score with a plain loop over the
        // synthetic fixture's known scores.
        let scores = [1u8, 3, 2, 3, 3, 1, 2, 3, 1, 3];
        let records: Vec<DialogueRecord> = scores
            .iter()
            .enumerate()
            .map(|(i, &s)| record(&format!("d{i:02}"), &[("Human", s), ("GPT-4", 3)]))
            .collect();
        let corpus = Corpus::from_records(records).unwrap();

        let mut expected = [0u64; 3];
        for &s in &scores {
            expected[s as usize - 1] += 1;
        }

        let hist = score_distribution(&corpus, &ResponderId::Human).unwrap();
        for score in EmpathyScore::ALL {
            assert_eq!(hist.count(score), expected[score.as_u8() as usize - 1]);
        }
        assert_eq!(hist.total(), scores.len() as u64);
    }

    #[test]
    fn matrix_matches_nested_loop_count() {
        let pairs = [
            (1u8, 3u8),
            (2, 2),
            (3, 3),
            (1, 1),
            (3, 2),
            (2, 3),
            (3, 3),
            (1, 3),
            (2, 1),
            (3, 1),
            (1, 2),
            (2, 2),
            (3, 3),
            (1, 3),
            (2, 3),
            (3, 2),
            (1, 1),
            (2, 2),
            (3, 3),
            (1, 3),
        ];
        let records: Vec<DialogueRecord> = pairs
            .iter()
            .enumerate()
            .map(|(i, &(h, m))| record(&format!("d{i:02}"), &[("Human", h), ("LLaMA", m)]))
            .collect();
        let corpus = Corpus::from_records(records).unwrap();
        let matrix = rating_pair_matrix(&corpus, &ResponderId::model("LLaMA")).unwrap();

        for h in 1u8..=3 {
            for m in 1u8..=3 {
                let expected = pairs.iter().filter(|&&p| p == (h, m)).count() as u64;
                assert_eq!(
                    matrix.cell(
                        EmpathyScore::from_u8(h).unwrap(),
                        EmpathyScore::from_u8(m).unwrap()
                    ),
                    expected,
                    "cell ({h},{m})"
                );
            }
        }
        assert_eq!(matrix.total(), pairs.len() as u64);

        // Marginals agree with the per-responder histograms.
        assert_eq!(
            matrix.human_marginal(),
            score_distribution(&corpus, &ResponderId::Human).unwrap()
        );
        assert_eq!(
            matrix.model_marginal(),
            score_distribution(&corpus, &ResponderId::model("LLaMA")).unwrap()
        );
    }

    #[test]
    fn empty_file_reports_no_records() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        std::fs::write(&path, "").unwrap();
        match load_corpus(&path, None) {
            Err(CorpusError::NoRecords { .. }) => {}
            other => panic!("expected NoRecords, got {other:?}"),
        }
    }

    #[test]
    fn out_of_range_score_names_the_row() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(
            &path,
            "id,situation,utterance,human_response,human_score\n\
             d1,s,u,fine,3\n\
             d2,s,u,bad,4\n",
        )
        .unwrap();
        match load_corpus(&path, None) {
            Err(CorpusError::Row { row, column, .. }) => {
                assert_eq!(row, 3);
                assert_eq!(column, "human_score");
            }
            other => panic!("expected Row error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_id_rejected() {
        let records = vec![
            record("same", &[("Human", 3)]),
            record("same", &[("Human", 2)]),
        ];
        match Corpus::from_records(records) {
            Err(CorpusError::DuplicateId { id }) => assert_eq!(id, "same"),
            other => panic!("expected DuplicateId, got {other:?}"),
        }
    }

    #[test]
    fn whitespace_only_response_rejected() {
        let result = DialogueRecord::new(
            context("d1"),
            [ScoredResponse::new(ResponderId::Human, "   \t  ", None)],
        )
        .and_then(|r| Corpus::from_records([r]));
        assert!(result.is_err());
    }

    #[test]
    fn unknown_extra_responder_columns_are_preserved() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("extra.csv");
        std::fs::write(
            &path,
            "id,situation,utterance,human_response,human_score,claude_response,claude_score,emotion\n\
             d1,s,u,hi there,3,hello friend,2,joy\n",
        )
        .unwrap();
        let corpus = load_corpus(&path, None).unwrap();
        let record = &corpus.records()[0];
        let claude = record.response(&ResponderId::model("claude")).unwrap();
        assert_eq!(claude.text, "hello friend");
        assert_eq!(claude.empathy_score, Some(EmpathyScore::Okay));
    }

    #[test]
    fn unscored_response_detected_by_stats() {
        let records = vec![DialogueRecord::new(
            context("d1"),
            [ScoredResponse::new(ResponderId::Human, "text", None)],
        )
        .unwrap()];
        let corpus = Corpus::from_records(records).unwrap();
        match score_distribution(&corpus, &ResponderId::Human) {
            Err(CorpusError::Unscored { id, .. }) => assert_eq!(id, "d1"),
            other => panic!("expected Unscored, got {other:?}"),
        }
    }

    #[test]
    fn unknown_responder_rejected_on_nonempty_corpus() {
        let corpus = Corpus::from_records([record("d1", &[("Human", 3)])]).unwrap();
        assert!(matches!(
            score_distribution(&corpus, &ResponderId::model("nope")),
            Err(CorpusError::UnknownResponder { .. })
        ));
    }

    #[test]
    fn record_stream_round_trip_is_identity() {
        let corpus = Corpus::from_records([
            record("a", &[("Human", 1), ("GPT-4", 3), ("Gemini", 2)]),
            record("b", &[("Human", 3), ("GPT-4", 3)]),
        ])
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("roundtrip.jsonl");
        save_records(&corpus, &path).unwrap();
        let reloaded = load_corpus(&path, None).unwrap();
        assert_eq!(corpus, reloaded);
    }

    #[test]
    fn matrix_requires_model_response_on_every_record() {
        let records = vec![
            record("a", &[("Human", 3), ("GPT-4", 3)]),
            record("b", &[("Human", 2)]),
        ];
        let corpus = Corpus::from_records(records).unwrap();
        match rating_pair_matrix(&corpus, &ResponderId::model("GPT-4")) {
            Err(CorpusError::MissingResponse { id, responder }) => {
                assert_eq!(id, "b");
                assert_eq!(responder, "GPT-4");
            }
            other => panic!("expected MissingResponse, got {other:?}"),
        }
    }

    #[test]
    fn matrix_rejects_the_human_responder() {
        let corpus = Corpus::from_records([record("a", &[("Human", 3)])]).unwrap();
        assert!(matches!(
            rating_pair_matrix(&corpus, &ResponderId::Human),
            Err(CorpusError::UnknownResponder { .. })
        ));
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            /// Histogram totals and matrix marginals agree with the corpus
            /// for arbitrary scored corpora.
            #[test]
            fn marginals_are_consistent(pairs in proptest::collection::vec((1u8..=3, 1u8..=3), 1..60)) {
                let records: Vec<DialogueRecord> = pairs
                    .iter()
                    .enumerate()
                    .map(|(i, &(h, m))| {
                        record(&format!("d{i:02}"), &[("Human", h), ("GPT-4", m)])
                    })
                    .collect();
                let corpus = Corpus::from_records(records).unwrap();
                let model = ResponderId::model("GPT-4");

                let human = score_distribution(&corpus, &ResponderId::Human).unwrap();
                let model_hist = score_distribution(&corpus, &model).unwrap();
                prop_assert_eq!(human.total(), pairs.len() as u64);
                prop_assert_eq!(model_hist.total(), pairs.len() as u64);

                let matrix = rating_pair_matrix(&corpus, &model).unwrap();
                prop_assert_eq!(matrix.total(), pairs.len() as u64);
                prop_assert_eq!(matrix.human_marginal(), human);
                prop_assert_eq!(matrix.model_marginal(), model_hist);
            }
        }
    }
}
