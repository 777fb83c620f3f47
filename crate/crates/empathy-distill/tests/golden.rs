//! Golden-fixture tests: rendered prompts must match the checked-in bytes.
//!
//! Regenerate with `UPDATE_GOLDEN=1 cargo test --test golden` and review the
//! diff before committing.

use std::path::PathBuf;

use empathy_distill::corpus::load_corpus;
use empathy_distill::prompt::{PromptStrategy, TemplateSet};

fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/rendered")
}

fn check_golden(name: &str, actual: &str) {
    let path = fixture_dir().join(name);
    if std::env::var("UPDATE_GOLDEN").is_ok() {
        std::fs::create_dir_all(fixture_dir()).unwrap();
        std::fs::write(&path, actual).unwrap();
        return;
    }
    let expected = std::fs::read_to_string(&path)
        .unwrap_or_else(|e| panic!("missing golden file {}: {e}", path.display()));
    assert_eq!(actual, expected, "golden mismatch for {name}");
}

fn taco_context() -> empathy_distill::corpus::DialogueContext {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/taco.jsonl");
    load_corpus(&path, None).unwrap().records()[0].context.clone()
}

#[test]
fn golden_naive_render() {
    let templates = TemplateSet::builtin();
    let context = taco_context();
    let prompts = templates
        .render(
            PromptStrategy::Naive,
            &context,
            Some("NOT THE TACOS!!!! Seriously, I can understand how frustrating that is. Especially when you have the taste for something.....then gone!"),
        )
        .unwrap();
    check_golden("naive_taco.txt", &prompts[0].user_message);
}

#[test]
fn golden_cognitive_render() {
    let templates = TemplateSet::builtin();
    let context = taco_context();
    let prompts = templates
        .render(PromptStrategy::Cognitive, &context, Some("A first draft response."))
        .unwrap();
    check_golden("cognitive_taco.txt", &prompts[0].user_message);
}

#[test]
fn golden_direct_render() {
    let templates = TemplateSet::builtin();
    let prompts = templates
        .render(PromptStrategy::Direct, &taco_context(), None)
        .unwrap();
    check_golden("direct_taco.txt", &prompts[0].user_message);
}

#[test]
fn golden_judge_render() {
    let templates = TemplateSet::builtin();
    let prompt = templates
        .render_judge(
            &taco_context(),
            "I'm really sorry to hear about your tacos.",
            "NOT THE TACOS!!!!",
        )
        .unwrap();
    check_golden("judge_taco.txt", &prompt.user_message);
}

#[test]
fn golden_sequential_stages() {
    let templates = TemplateSet::builtin();
    let prompts = templates
        .render(PromptStrategy::Sequential, &taco_context(), Some("A first draft response."))
        .unwrap();
    for (index, prompt) in prompts.iter().enumerate() {
        check_golden(&format!("sequential_stage{index}_taco.txt"), &prompt.user_message);
    }
}
