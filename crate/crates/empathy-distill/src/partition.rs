//! Splitting dialogues into SFT / preference / test sets.
//!
//! The score rule: a dialogue whose human and model responses both scored 3
//! becomes SFT material (both responses, one example each); a dialogue whose
//! human response scored 1 or 2 while the model response scored 3 becomes a
//! preference pair with the model response chosen over the human one; every
//! other dialogue goes to the test set.
//!
//! Ratio splits reproduce a reference partition's SFT/preference/test
//! proportions on corpora without scores, deterministically from a seed.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, CorpusError, DialogueContext, EmpathyScore, ResponderId, ScoredResponse};

/// Where a training example's response text came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    /// The human response as found in the corpus.
    HumanOriginal,
    /// A teacher response generated by direct prompting (pre-existing in the corpus).
    TeacherDirect,
    /// A teacher response produced by an empathy-improvement prompt.
    TeacherImproved,
    /// A teacher initial response, later improved (bootstrap method).
    TeacherInitial,
}

/// One supervised fine-tuning example: a context and a single target response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftExample {
    pub context: DialogueContext,
    pub response: ScoredResponse,
    pub provenance: Provenance,
}

/// One contrastive training row: the chosen response beats the rejected one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub context: DialogueContext,
    pub chosen: ScoredResponse,
    pub rejected: ScoredResponse,
}

impl PreferencePair {
    /// Builds a pair, rejecting identical chosen/rejected texts.
    pub fn new(
        context: DialogueContext,
        chosen: ScoredResponse,
        rejected: ScoredResponse,
    ) -> Result<PreferencePair, PartitionError> {
        if chosen.text == rejected.text {
            return Err(PartitionError::DegeneratePair {
                id: context.id.clone(),
            });
        }
        Ok(PreferencePair {
            context,
            chosen,
            rejected,
        })
    }
}

/// Which dataset a dialogue is assigned to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitClass {
    Sft,
    Pref,
    Test,
}

impl SplitClass {
    pub fn label(self) -> &'static str {
        match self {
            SplitClass::Sft => "sft",
            SplitClass::Pref => "pref",
            SplitClass::Test => "test",
        }
    }
}

/// Disjoint SFT / preference / test assignment for one teacher.
///
/// `assignment` covers every dialogue id the partition was derived from
/// exactly once; the three content lists are consistent with it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetPartition {
    pub teacher: ResponderId,
    pub sft: Vec<SftExample>,
    pub preference: Vec<PreferencePair>,
    pub test: Vec<DialogueContext>,
    pub assignment: BTreeMap<String, SplitClass>,
}

impl DatasetPartition {
    /// Counts of (sft, pref, test) ids in the assignment.
    pub fn class_counts(&self) -> (usize, usize, usize) {
        let mut counts = (0, 0, 0);
        for class in self.assignment.values() {
            match class {
                SplitClass::Sft => counts.0 += 1,
                SplitClass::Pref => counts.1 += 1,
                SplitClass::Test => counts.2 += 1,
            }
        }
        counts
    }
}

/// Exact SFT : preference : test proportions, stored as integer counts over a
/// common denominator so the three fractions sum to 1 by construction.
#[derive(Debug, Clone, Copy, Eq, Serialize, Deserialize)]
pub struct SplitRatio {
    sft: u64,
    pref: u64,
    test: u64,
    denom: u64,
}

impl SplitRatio {
    /// Ratio from raw class counts; the denominator is their sum.
    pub fn from_counts(sft: u64, pref: u64, test: u64) -> Result<SplitRatio, PartitionError> {
        let denom = sft + pref + test;
        if denom == 0 {
            return Err(PartitionError::InvalidRatio {
                detail: "all three counts are zero".to_string(),
            });
        }
        Ok(SplitRatio {
            sft,
            pref,
            test,
            denom,
        })
    }

    /// Parses `a:b:c`.
    ///
    /// Integer parts are weights (`2:1:1` is one half / one quarter / one
    /// quarter). If any part is a decimal, the three are exact fractions and
    /// must sum to 1 (`0.4:0.35:0.25`).
    pub fn parse(text: &str) -> Result<SplitRatio, PartitionError> {
        let parts: Vec<&str> = text.split(':').collect();
        if parts.len() != 3 {
            return Err(PartitionError::InvalidRatio {
                detail: format!("expected a:b:c, got {text:?}"),
            });
        }
        let mut numerators = [0u64; 3];
        let mut decimal_places = [0u32; 3];
        let mut any_decimal = false;
        for (i, part) in parts.iter().enumerate() {
            let part = part.trim();
            let (digits, places) = match part.split_once('.') {
                Some((whole, frac)) => {
                    any_decimal = true;
                    (format!("{whole}{frac}"), frac.len() as u32)
                }
                None => (part.to_string(), 0),
            };
            let digits = if digits.is_empty() { "0".to_string() } else { digits };
            numerators[i] = digits.parse().map_err(|_| PartitionError::InvalidRatio {
                detail: format!("cannot parse ratio part {part:?}"),
            })?;
            decimal_places[i] = places;
        }
        let max_places = *decimal_places.iter().max().unwrap();
        for i in 0..3 {
            numerators[i] *= 10u64.pow(max_places - decimal_places[i]);
        }
        if any_decimal {
            let denom = 10u64.pow(max_places);
            let sum: u64 = numerators.iter().sum();
            if sum != denom {
                return Err(PartitionError::InvalidRatio {
                    detail: format!("fractions in {text:?} do not sum to 1"),
                });
            }
            return Ok(SplitRatio {
                sft: numerators[0],
                pref: numerators[1],
                test: numerators[2],
                denom,
            });
        }
        SplitRatio::from_counts(numerators[0], numerators[1], numerators[2])
    }

    /// The three fractions in lowest terms, as (numerator, denominator).
    pub fn reduced_fractions(&self) -> [(u64, u64); 3] {
        [
            reduce(self.sft, self.denom),
            reduce(self.pref, self.denom),
            reduce(self.test, self.denom),
        ]
    }

    /// Class sizes for a corpus of `n` dialogues by largest-remainder
    /// rounding; each size is within 1 of the exact `n * fraction`.
    pub fn class_sizes(&self, n: usize) -> [usize; 3] {
        let n = n as u64;
        let parts = [self.sft, self.pref, self.test];
        let mut sizes = [0u64; 3];
        let mut remainders = [0u64; 3];
        for i in 0..3 {
            sizes[i] = n * parts[i] / self.denom;
            remainders[i] = n * parts[i] % self.denom;
        }
        let mut leftover = n - sizes.iter().sum::<u64>();
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| remainders[b].cmp(&remainders[a]).then(a.cmp(&b)));
        for &i in &order {
            if leftover == 0 {
                break;
            }
            sizes[i] += 1;
            leftover -= 1;
        }
        [sizes[0] as usize, sizes[1] as usize, sizes[2] as usize]
    }
}

impl PartialEq for SplitRatio {
    fn eq(&self, other: &Self) -> bool {
        self.sft as u128 * other.denom as u128 == other.sft as u128 * self.denom as u128
            && self.pref as u128 * other.denom as u128 == other.pref as u128 * self.denom as u128
            && self.test as u128 * other.denom as u128 == other.test as u128 * self.denom as u128
    }
}

impl std::fmt::Display for SplitRatio {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}:{}", self.sft, self.pref, self.test)
    }
}

fn reduce(numerator: u64, denominator: u64) -> (u64, u64) {
    let g = gcd(numerator, denominator).max(1);
    (numerator / g, denominator / g)
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

#[derive(Debug, Error)]
pub enum PartitionError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("partition is empty")]
    EmptyPartition,
    #[error("no partitions to combine")]
    NoPartitions,
    #[error("partitions derive from mismatched corpora: {detail}")]
    MismatchedCorpora { detail: String },
    #[error("record {id}: chosen and rejected texts are identical")]
    DegeneratePair { id: String },
    #[error("invalid split ratio: {detail}")]
    InvalidRatio { detail: String },
    #[error("failed to write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Splits a fully scored corpus by the score rule for one teacher model.
///
/// (human 3, model 3) contributes two SFT examples, one per responder;
/// (human 1 or 2, model 3) contributes one preference pair with the model
/// response chosen; everything else lands in the test set.
pub fn partition_by_scores(
    corpus: &Corpus,
    model: &ResponderId,
) -> Result<DatasetPartition, PartitionError> {
    if model.is_human() {
        return Err(CorpusError::UnknownResponder {
            responder: format!("{} (expected a model responder)", model.name()),
        }
        .into());
    }
    let mut partition = DatasetPartition {
        teacher: model.clone(),
        sft: Vec::new(),
        preference: Vec::new(),
        test: Vec::new(),
        assignment: BTreeMap::new(),
    };
    for record in corpus.records_by_id() {
        let human = record.scored_response(&ResponderId::Human)?.clone();
        let model_response = record.scored_response(model)?.clone();
        let human_score = human.empathy_score.expect("scored");
        let model_score = model_response.empathy_score.expect("scored");
        let id = record.context.id.clone();
        let class = match (human_score, model_score) {
            (EmpathyScore::Good, EmpathyScore::Good) => {
                partition.sft.push(SftExample {
                    context: record.context.clone(),
                    response: human,
                    provenance: Provenance::HumanOriginal,
                });
                partition.sft.push(SftExample {
                    context: record.context.clone(),
                    response: model_response,
                    provenance: Provenance::TeacherDirect,
                });
                SplitClass::Sft
            }
            (EmpathyScore::Bad | EmpathyScore::Okay, EmpathyScore::Good) => {
                partition.preference.push(PreferencePair::new(
                    record.context.clone(),
                    model_response,
                    human,
                )?);
                SplitClass::Pref
            }
            _ => {
                partition.test.push(record.context.clone());
                SplitClass::Test
            }
        };
        partition.assignment.insert(id, class);
    }
    Ok(partition)
}

/// Merges per-teacher partitions over the same corpus.
///
/// SFT examples are deduplicated on exact (id, responder, text) triples;
/// preference lists are concatenated; the combined test set holds the ids no
/// member put into SFT or preference.
pub fn combine_partitions(
    partitions: &[DatasetPartition],
) -> Result<DatasetPartition, PartitionError> {
    let first = partitions.first().ok_or(PartitionError::NoPartitions)?;
    let ids: BTreeSet<&String> = first.assignment.keys().collect();
    for other in &partitions[1..] {
        let other_ids: BTreeSet<&String> = other.assignment.keys().collect();
        if other_ids != ids {
            return Err(PartitionError::MismatchedCorpora {
                detail: format!(
                    "partition for {} covers a different id set than partition for {}",
                    other.teacher, first.teacher
                ),
            });
        }
    }
    for id in &ids {
        let classes: BTreeSet<SplitClass> = partitions
            .iter()
            .map(|p| p.assignment[*id])
            .filter(|c| *c != SplitClass::Test)
            .collect();
        if classes.len() > 1 {
            return Err(PartitionError::MismatchedCorpora {
                detail: format!("id {id} is SFT in one partition and preference in another"),
            });
        }
    }

    let teacher_names: Vec<&str> = partitions.iter().map(|p| p.teacher.name()).collect();
    let teacher = ResponderId::model(teacher_names.join("+"));

    let mut combined = DatasetPartition {
        teacher,
        sft: Vec::new(),
        preference: Vec::new(),
        test: Vec::new(),
        assignment: BTreeMap::new(),
    };

    let mut seen = BTreeSet::new();
    let mut duplicates = 0usize;
    for partition in partitions {
        for example in &partition.sft {
            let key = (
                example.context.id.clone(),
                example.response.responder.name().to_string(),
                example.response.text.clone(),
            );
            if seen.insert(key) {
                combined.sft.push(example.clone());
            } else {
                duplicates += 1;
            }
        }
        combined.preference.extend(partition.preference.iter().cloned());
    }
    if duplicates > 0 {
        log::info!("combine_partitions removed {duplicates} duplicate SFT examples");
    }

    for id in ids {
        let class = partitions
            .iter()
            .map(|p| p.assignment[id])
            .find(|c| *c != SplitClass::Test)
            .unwrap_or(SplitClass::Test);
        if class == SplitClass::Test {
            let context = partitions
                .iter()
                .flat_map(|p| p.test.iter())
                .find(|c| &c.id == id)
                .expect("test assignment implies a test context")
                .clone();
            combined.test.push(context);
        }
        combined.assignment.insert(id.clone(), class);
    }
    combined.test.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(combined)
}

/// Assigns every dialogue id to a class, hitting the ratio's class sizes
/// exactly (largest-remainder rounding) via a seeded shuffle of the sorted
/// ids. The same (corpus, ratio, seed) always yields the same assignment.
pub fn ratio_partition(
    corpus: &Corpus,
    ratio: &SplitRatio,
    seed: u64,
) -> Result<BTreeMap<String, SplitClass>, PartitionError> {
    if corpus.is_empty() {
        return Err(PartitionError::EmptyCorpus);
    }
    let mut ids = corpus.sorted_ids();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    // In-house Fisher-Yates keeps the assignment a function of this crate
    // alone, not of a rand release.
    for i in (1..ids.len()).rev() {
        let j = (rng.next_u64() % (i as u64 + 1)) as usize;
        ids.swap(i, j);
    }
    let [n_sft, n_pref, _] = ratio.class_sizes(ids.len());
    let mut assignment = BTreeMap::new();
    for (index, id) in ids.into_iter().enumerate() {
        let class = if index < n_sft {
            SplitClass::Sft
        } else if index < n_sft + n_pref {
            SplitClass::Pref
        } else {
            SplitClass::Test
        };
        assignment.insert(id, class);
    }
    Ok(assignment)
}

/// The exact class fractions of a partition, over the corpus size.
pub fn ratio_of(partition: &DatasetPartition) -> Result<SplitRatio, PartitionError> {
    if partition.assignment.is_empty() {
        return Err(PartitionError::EmptyPartition);
    }
    let (sft, pref, test) = partition.class_counts();
    SplitRatio::from_counts(sft as u64, pref as u64, test as u64)
}

#[derive(Serialize, Deserialize)]
struct ManifestHeader {
    schema: String,
    version: u32,
    teacher: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    ratio: Option<SplitRatio>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    seed: Option<u64>,
}

#[derive(Serialize, Deserialize)]
struct ManifestRow {
    id: String,
    assignment: SplitClass,
    teacher: String,
}

/// Writes the partition manifest: a header line with ratio and seed, then one
/// `{id, assignment, teacher}` record per dialogue.
pub fn write_partition_manifest(
    partition: &DatasetPartition,
    ratio: Option<&SplitRatio>,
    seed: Option<u64>,
    path: &Path,
) -> Result<(), PartitionError> {
    let file = std::fs::File::create(path).map_err(|source| PartitionError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut writer = BufWriter::new(file);
    let mut write_line = |value: String| -> Result<(), PartitionError> {
        writeln!(writer, "{value}").map_err(|source| PartitionError::Io {
            path: path.to_path_buf(),
            source,
        })
    };
    let header = ManifestHeader {
        schema: "empathy-distill/partition".to_string(),
        version: 1,
        teacher: partition.teacher.name().to_string(),
        ratio: ratio.copied(),
        seed,
    };
    write_line(serde_json::to_string(&header).expect("header serializes"))?;
    for (id, class) in &partition.assignment {
        let row = ManifestRow {
            id: id.clone(),
            assignment: *class,
            teacher: partition.teacher.name().to_string(),
        };
        write_line(serde_json::to_string(&row).expect("row serializes"))?;
    }
    Ok(())
}
