//! Build a small scored corpus in code, round-trip it through the
//! record-stream dialect, and print the summary statistics.
//!
//! ```bash
//! cargo run --example corpus_stats
//! ```

use empathy_distill::corpus::{
    load_corpus, rating_pair_matrix, save_records, score_distribution, Corpus, DialogueContext,
    DialogueRecord, EmpathyScore, ResponderId, ScoredResponse,
};

fn record(
    id: &str,
    situation: &str,
    utterance: &str,
    scores: &[(&str, &str, u8)],
) -> DialogueRecord {
    let responses = scores.iter().map(|(name, text, score)| {
        ScoredResponse::new(
            ResponderId::from_name(name),
            *text,
            Some(EmpathyScore::from_u8(*score).unwrap()),
        )
    });
    DialogueRecord::new(
        DialogueContext {
            id: id.to_string(),
            situation: situation.to_string(),
            speaker_utterance: utterance.to_string(),
        },
        responses,
    )
    .unwrap()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = Corpus::from_records([
        record(
            "taco-1",
            "I was just walking out of Taco bell. The bottom fell out of my bag.",
            "I can't believe the bottom of the bag ripped and my tacos covered the ground.",
            &[
                ("Human", "NOT THE TACOS!!!! Seriously, I can understand how frustrating that is.", 1),
                ("GPT-4", "I'm really sorry to hear about your tacos. I can understand why you'd be upset.", 3),
                ("LLaMA", "Oh no, that's frustrating! It's embarrassing when things like that happen.", 2),
            ],
        ),
        record(
            "exam-2",
            "I passed an exam I was sure I had failed.",
            "I genuinely cannot believe I passed. I feel like I can breathe again.",
            &[
                ("Human", "That relief is huge. You carried that worry for weeks, and now you get to let it go.", 3),
                ("GPT-4", "What wonderful news! All that anxiety, and it turned out you did it after all.", 3),
                ("LLaMA", "Congrats.", 1),
            ],
        ),
        record(
            "move-3",
            "My best friend moved across the country last week.",
            "The apartment feels so empty now that she is gone.",
            &[
                ("Human", "That quiet after someone leaves is heavy. It's okay to miss her a lot right now.", 3),
                ("GPT-4", "It sounds lonely in a way that's hard to put into words. Losing that daily closeness hurts.", 3),
                ("LLaMA", "You could video call her sometimes.", 2),
            ],
        ),
    ])?;

    // Round-trip through the record-stream dialect.
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("corpus.jsonl");
    save_records(&corpus, &path)?;
    let reloaded = load_corpus(&path, None)?;
    assert_eq!(corpus, reloaded);
    println!("round-tripped {} dialogues through {}", reloaded.len(), path.display());

    println!("\nscore distribution per responder:");
    for responder in reloaded.responders() {
        let hist = score_distribution(&reloaded, &responder)?;
        println!(
            "  {:<8} 1:{} 2:{} 3:{} (modal {})",
            responder.name(),
            hist.count(EmpathyScore::Bad),
            hist.count(EmpathyScore::Okay),
            hist.count(EmpathyScore::Good),
            hist.modal_score(),
        );
    }

    let matrix = rating_pair_matrix(&reloaded, &ResponderId::model("GPT-4"))?;
    println!("\n(human, GPT-4) rating pairs:");
    for human in EmpathyScore::ALL {
        for model in EmpathyScore::ALL {
            let count = matrix.cell(human, model);
            if count > 0 {
                println!("  human {human}, model {model}: {count}");
            }
        }
    }
    println!("  total {}", matrix.total());
    Ok(())
}
