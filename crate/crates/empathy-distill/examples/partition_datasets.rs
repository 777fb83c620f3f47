//! Partition a scored corpus by the score rule for several teachers, combine
//! the per-teacher partitions, and reuse the observed ratio for a seeded
//! random split.
//!
//! ```bash
//! cargo run --example partition_datasets
//! ```

use empathy_distill::corpus::{
    Corpus, DialogueContext, DialogueRecord, EmpathyScore, ResponderId, ScoredResponse,
};
use empathy_distill::partition::{
    combine_partitions, partition_by_scores, ratio_of, ratio_partition, SplitClass,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let teachers = ["GPT-4", "LLaMA", "Gemini", "Mixtral"];
    // Deterministic synthetic scores cycling through the interesting cases.
    let records: Vec<DialogueRecord> = (0..40)
        .map(|i| {
            let id = format!("d{i:02}");
            let human_score = [3, 1, 2, 3, 1][i % 5];
            let mut responses = vec![ScoredResponse::new(
                ResponderId::Human,
                format!("human take on {id}"),
                Some(EmpathyScore::from_u8(human_score).unwrap()),
            )];
            for (t, teacher) in teachers.iter().enumerate() {
                let model_score = [3, 3, 2, 1, 3][(i + t) % 5];
                responses.push(ScoredResponse::new(
                    ResponderId::model(*teacher),
                    format!("{teacher} take on {id}"),
                    Some(EmpathyScore::from_u8(model_score).unwrap()),
                ));
            }
            DialogueRecord::new(
                DialogueContext {
                    id,
                    situation: format!("situation {i}"),
                    speaker_utterance: format!("utterance {i}"),
                },
                responses,
            )
            .unwrap()
        })
        .collect();
    let corpus = Corpus::from_records(records)?;

    let mut partitions = Vec::new();
    for teacher in teachers {
        let partition = partition_by_scores(&corpus, &ResponderId::model(teacher))?;
        let (sft, pref, test) = partition.class_counts();
        println!(
            "{teacher:<8} sft {sft:>2} dialogues ({} examples)  pref {pref:>2}  test {test:>2}",
            partition.sft.len()
        );
        partitions.push(partition);
    }

    let combined = combine_partitions(&partitions)?;
    println!(
        "\ncombined ({}): {} sft examples after dedup, {} pairs, {} test contexts",
        combined.teacher.name(),
        combined.sft.len(),
        combined.preference.len(),
        combined.test.len()
    );

    // Reuse the first teacher's observed ratio for a seeded score-free split.
    let reference = ratio_of(&partitions[0])?;
    let fractions = reference.reduced_fractions();
    println!(
        "\nreference ratio from {}: sft {}/{}, pref {}/{}, test {}/{}",
        partitions[0].teacher.name(),
        fractions[0].0, fractions[0].1,
        fractions[1].0, fractions[1].1,
        fractions[2].0, fractions[2].1,
    );
    let assignment = ratio_partition(&corpus, &reference, 7)?;
    let count = |class: SplitClass| assignment.values().filter(|c| **c == class).count();
    println!(
        "seeded split (seed 7) realizes sft {} pref {} test {}",
        count(SplitClass::Sft),
        count(SplitClass::Pref),
        count(SplitClass::Test)
    );
    Ok(())
}
