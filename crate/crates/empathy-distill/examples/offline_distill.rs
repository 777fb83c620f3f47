//! Run all three distillation methods offline against a scripted replay
//! teacher, then export the fine-tuning files and training configs.
//!
//! The replay script answers exactly the requests the pipeline will issue;
//! a live run would swap it for an HttpChat provider with a warm cache.
//!
//! ```bash
//! cargo run --example offline_distill
//! ```

use empathy_distill::corpus::{
    Corpus, DialogueContext, DialogueRecord, EmpathyScore, ResponderId, ScoredResponse,
};
use empathy_distill::distill::{
    run_method1, run_method2, run_method3, write_run_artifacts, Distiller, Method1Run,
};
use empathy_distill::export::{
    emit_training_config, export_preference, export_sft, export_test, ConfigOverrides, TrainStage,
};
use empathy_distill::gateway::{CompletionRequest, Gateway, GenParams, ReplayScript};
use empathy_distill::partition::SplitRatio;
use empathy_distill::prompt::{splice_response, PromptStrategy, TemplateSet};

const TEACHER: &str = "GPT-4o";

fn corpus() -> Corpus {
    let scores = [3u8, 1, 2, 3, 1, 3, 2, 1, 3, 2, 3, 1];
    let records: Vec<DialogueRecord> = scores
        .iter()
        .enumerate()
        .map(|(i, &score)| {
            let id = format!("d{i:02}");
            DialogueRecord::new(
                DialogueContext {
                    id: id.clone(),
                    situation: format!("situation {i}"),
                    speaker_utterance: format!("utterance {i}"),
                },
                [
                    ScoredResponse::new(
                        ResponderId::Human,
                        format!("human response to {id}"),
                        Some(EmpathyScore::from_u8(score).unwrap()),
                    ),
                    ScoredResponse::new(
                        ResponderId::model(TEACHER),
                        format!("{TEACHER} response to {id}"),
                        Some(EmpathyScore::from_u8([3, 2, 3][i % 3]).unwrap()),
                    ),
                ],
            )
            .unwrap()
        })
        .collect();
    Corpus::from_records(records).unwrap()
}

/// Scripts one improvement chain (one call, or three for Sequential).
fn script_chain(
    script: &mut ReplayScript,
    templates: &TemplateSet,
    params: &GenParams,
    context: &DialogueContext,
    strategy: PromptStrategy,
    initial: &str,
    improved: &str,
) {
    let prompts = templates.render(strategy, context, Some(initial)).unwrap();
    let mut previous = String::new();
    for (index, prompt) in prompts.iter().enumerate() {
        let effective = if index == 0 {
            prompt.clone()
        } else {
            splice_response(prompt, &previous)
        };
        let reply = if index + 1 == prompts.len() {
            improved.to_string()
        } else {
            format!("{improved} (after stage {index})")
        };
        script.insert(&CompletionRequest::from_prompt(params, &effective), &reply);
        previous = reply;
    }
}

/// A replay teacher covering methods 2 and 3 for the whole corpus.
fn scripted_teacher(
    corpus: &Corpus,
    templates: &TemplateSet,
    params: &GenParams,
    strategy: PromptStrategy,
) -> Gateway {
    let mut script = ReplayScript::default();
    for record in corpus.records() {
        let id = &record.context.id;
        // Method 2 improves the human response.
        let human = &record.response(&ResponderId::Human).unwrap().text;
        script_chain(
            &mut script,
            templates,
            params,
            &record.context,
            strategy,
            human,
            &format!("improved human response to {id}"),
        );
        // Method 3 first asks for a direct response, then improves it.
        let direct = templates
            .render(PromptStrategy::Direct, &record.context, None)
            .unwrap();
        let initial = format!("teacher initial response to {id}");
        script.insert(&CompletionRequest::from_prompt(params, &direct[0]), &initial);
        script_chain(
            &mut script,
            templates,
            params,
            &record.context,
            strategy,
            &initial,
            &format!("teacher improved response to {id}"),
        );
    }
    Gateway::replay(script).offline(true)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = corpus();
    let templates = TemplateSet::builtin();
    let params = GenParams::generation(TEACHER);
    let strategy = PromptStrategy::Sequential;
    let gateway = scripted_teacher(&corpus, &templates, &params, strategy);
    let distiller = Distiller::new(&gateway, &templates, params.clone());
    let out = tempfile::tempdir()?;

    // Method 1: the corpus already carries scored teacher responses.
    if let Method1Run::Partitioned(partition) = run_method1(&corpus, &distiller.teacher(), None)? {
        let (sft, pref, test) = partition.class_counts();
        println!("method 1 (direct): sft {sft} / pref {pref} / test {test} dialogues");
    }

    // Method 2: improve the human responses under the sequential chain.
    let outcome = run_method2(&distiller, &corpus, strategy, 7)?;
    println!(
        "method 2 ({strategy}): {} sft examples, {} pairs, {} failures",
        outcome.partition.sft.len(),
        outcome.partition.preference.len(),
        outcome.failures.len()
    );

    // Method 3: bootstrap from teacher initial responses at a fixed ratio.
    let ratio = SplitRatio::parse("0.5:0.25:0.25")?;
    let outcome = run_method3(&distiller, &corpus, strategy, &ratio, 7)?;
    println!(
        "method 3 ({strategy}): {} sft examples, {} pairs, {} test contexts",
        outcome.partition.sft.len(),
        outcome.partition.preference.len(),
        outcome.partition.test.len()
    );

    // Export the Method 3 run: datasets, configs, run manifest.
    let dir = out.path().join("m3");
    std::fs::create_dir_all(&dir)?;
    write_run_artifacts(&outcome, &dir)?;
    let sft_path = dir.join("sft.jsonl");
    export_sft(&outcome.partition.sft, templates.direct(), &sft_path)?;
    export_preference(&outcome.partition.preference, templates.direct(), &dir.join("dpo.jsonl"))?;
    export_test(&outcome.partition.test, &dir.join("test.jsonl"))?;
    emit_training_config(
        TrainStage::Sft,
        &sft_path,
        "llama-3.1-8b",
        &dir.join("train_sft.cfg"),
        &ConfigOverrides::default(),
    )?;
    emit_training_config(
        TrainStage::Dpo,
        &dir.join("dpo.jsonl"),
        "llama-3.1-8b",
        &dir.join("train_dpo.cfg"),
        &ConfigOverrides::default(),
    )?;

    println!("\nexported artifacts:");
    let mut names: Vec<_> = std::fs::read_dir(&dir)?
        .map(|e| e.unwrap().file_name().to_string_lossy().to_string())
        .collect();
    names.sort();
    for name in names {
        println!("  m3/{name}");
    }
    println!("\ntrain_sft.cfg:");
    print!("{}", std::fs::read_to_string(dir.join("train_sft.cfg"))?);
    Ok(())
}
