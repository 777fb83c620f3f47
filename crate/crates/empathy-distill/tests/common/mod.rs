//! Shared helpers for integration tests: synthetic corpora and replay
//! scripting that mirrors the exact requests the pipeline issues.

#![allow(dead_code)]

use std::path::Path;

use empathy_distill::corpus::{
    save_records, Corpus, DialogueContext, DialogueRecord, EmpathyScore, ResponderId,
    ScoredResponse,
};
use empathy_distill::gateway::{
    CompletionRequest, GenParams, ReplayScript, ResponseCache, TokenUsage, TransportReply,
};
use empathy_distill::prompt::{splice_response, PromptStrategy, TemplateSet};

pub fn context(id: &str) -> DialogueContext {
    DialogueContext {
        id: id.to_string(),
        situation: format!("situation {id}"),
        speaker_utterance: format!("utterance {id}"),
    }
}

/// A corpus of human-scored dialogues, one score per dialogue.
pub fn human_scored_corpus(scores: &[u8]) -> Corpus {
    let records: Vec<DialogueRecord> = scores
        .iter()
        .enumerate()
        .map(|(i, &score)| {
            let id = format!("d{i:03}");
            DialogueRecord::new(
                context(&id),
                [ScoredResponse::new(
                    ResponderId::Human,
                    format!("human response to {id}"),
                    Some(EmpathyScore::from_u8(score).unwrap()),
                )],
            )
            .unwrap()
        })
        .collect();
    Corpus::from_records(records).unwrap()
}

/// A corpus with scored human and teacher responses per dialogue.
pub fn paired_corpus(teacher: &str, pairs: &[(u8, u8)]) -> Corpus {
    let records: Vec<DialogueRecord> = pairs
        .iter()
        .enumerate()
        .map(|(i, &(h, m))| {
            let id = format!("d{i:03}");
            DialogueRecord::new(
                context(&id),
                [
                    ScoredResponse::new(
                        ResponderId::Human,
                        format!("human response to {id}"),
                        Some(EmpathyScore::from_u8(h).unwrap()),
                    ),
                    ScoredResponse::new(
                        ResponderId::model(teacher),
                        format!("{teacher} response to {id}"),
                        Some(EmpathyScore::from_u8(m).unwrap()),
                    ),
                ],
            )
            .unwrap()
        })
        .collect();
    Corpus::from_records(records).unwrap()
}

pub fn write_corpus(corpus: &Corpus, path: &Path) {
    save_records(corpus, path).unwrap();
}

/// One scripted call: the concrete request and its reply.
pub type ScriptedCall = (CompletionRequest, String);

/// The direct-prompt call for a dialogue.
pub fn direct_call(
    templates: &TemplateSet,
    params: &GenParams,
    ctx: &DialogueContext,
    reply: &str,
) -> ScriptedCall {
    let prompts = templates.render(PromptStrategy::Direct, ctx, None).unwrap();
    (
        CompletionRequest::from_prompt(params, &prompts[0]),
        reply.to_string(),
    )
}

/// Every call of one improvement chain over `initial`; for Sequential the
/// intermediate stages reply with derived texts and the last with `improved`.
pub fn improvement_calls(
    templates: &TemplateSet,
    params: &GenParams,
    ctx: &DialogueContext,
    strategy: PromptStrategy,
    initial: &str,
    improved: &str,
) -> Vec<ScriptedCall> {
    let prompts = templates.render(strategy, ctx, Some(initial)).unwrap();
    let mut calls = Vec::new();
    let mut previous = String::new();
    for (index, prompt) in prompts.iter().enumerate() {
        let effective = if index == 0 {
            prompt.clone()
        } else {
            splice_response(prompt, &previous)
        };
        let request = CompletionRequest::from_prompt(params, &effective);
        let reply = if index + 1 == prompts.len() {
            improved.to_string()
        } else {
            format!("{improved} [stage {index}]")
        };
        calls.push((request, reply.clone()));
        previous = reply;
    }
    calls
}

/// All calls Method 2 makes for a corpus.
pub fn method2_calls(
    templates: &TemplateSet,
    params: &GenParams,
    corpus: &Corpus,
    strategy: PromptStrategy,
) -> Vec<ScriptedCall> {
    let mut calls = Vec::new();
    for record in corpus.records() {
        let initial = &record.response(&ResponderId::Human).unwrap().text;
        let improved = format!("improved {} {}", strategy, record.context.id);
        calls.extend(improvement_calls(
            templates,
            params,
            &record.context,
            strategy,
            initial,
            &improved,
        ));
    }
    calls
}

/// All calls Method 3 makes for a corpus.
pub fn method3_calls(
    templates: &TemplateSet,
    params: &GenParams,
    corpus: &Corpus,
    strategy: PromptStrategy,
) -> Vec<ScriptedCall> {
    let mut calls = Vec::new();
    for record in corpus.records() {
        let id = &record.context.id;
        let initial = format!("initial {id}");
        calls.push(direct_call(templates, params, &record.context, &initial));
        calls.extend(improvement_calls(
            templates,
            params,
            &record.context,
            strategy,
            &initial,
            &format!("improved {} {id}", strategy),
        ));
    }
    calls
}

/// Both judge trials for one dialogue (orders AB and BA).
pub fn judge_calls(
    templates: &TemplateSet,
    judge: &str,
    ctx: &DialogueContext,
    text_a: &str,
    text_b: &str,
    reply_ab: &str,
    reply_ba: &str,
) -> Vec<ScriptedCall> {
    let params = GenParams::judging(judge);
    let ab = templates.render_judge(ctx, text_a, text_b).unwrap();
    let ba = templates.render_judge(ctx, text_b, text_a).unwrap();
    vec![
        (CompletionRequest::from_prompt(&params, &ab), reply_ab.to_string()),
        (CompletionRequest::from_prompt(&params, &ba), reply_ba.to_string()),
    ]
}

pub fn into_script(calls: impl IntoIterator<Item = ScriptedCall>) -> ReplayScript {
    let mut script = ReplayScript::default();
    for (request, reply) in calls {
        script.insert(&request, reply);
    }
    script
}

/// Materializes scripted calls as a warm cache directory for replay providers.
pub fn into_cache(calls: impl IntoIterator<Item = ScriptedCall>, dir: &Path) {
    let cache = ResponseCache::new(dir);
    for (request, reply) in calls {
        cache
            .store(
                &request,
                &TransportReply {
                    text: reply,
                    usage: TokenUsage::default(),
                },
            )
            .unwrap();
    }
}
