//! Head-to-head win-rate evaluation with a scripted replay judge, including
//! the double-swap position-bias mitigation and the evaluation matrix.
//!
//! ```bash
//! cargo run --example winrate_eval
//! ```

use empathy_distill::corpus::DialogueContext;
use empathy_distill::distill::DistillMethod;
use empathy_distill::eval::{
    compute_win_rate, generate_head_to_head, judge_head_to_head, report_matrix, FinetuneStage,
    LabeledReport, Side,
};
use empathy_distill::gateway::{CompletionRequest, Gateway, GenParams, ReplayScript};
use empathy_distill::prompt::{PromptStrategy, TemplateSet};

const CANDIDATE: &str = "llama-3.1-8b-sft-dpo";
const BASELINE: &str = "llama-3.1-8b";
const JUDGE: &str = "gpt-4o-judge";

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let templates = TemplateSet::builtin();
    let contexts: Vec<DialogueContext> = (0..8)
        .map(|i| DialogueContext {
            id: format!("t{i}"),
            situation: format!("situation {i}"),
            speaker_utterance: format!("utterance {i}"),
        })
        .collect();

    // Script both models' direct answers and the judge's two order-swapped
    // verdict calls per dialogue. The judge prefers the candidate on six
    // dialogues and answers position-biased (always "1") on the other two,
    // which the double-swap rule turns into ties.
    let mut script = ReplayScript::default();
    for (index, ctx) in contexts.iter().enumerate() {
        let tuned = format!("tuned answer {}", ctx.id);
        let base = format!("base answer {}", ctx.id);
        for (model, text) in [(CANDIDATE, &tuned), (BASELINE, &base)] {
            let prompts = templates.render(PromptStrategy::Direct, ctx, None)?;
            script.insert(
                &CompletionRequest::from_prompt(&GenParams::generation(model), &prompts[0]),
                text,
            );
        }
        let judge_params = GenParams::judging(JUDGE);
        let ab = templates.render_judge(ctx, &tuned, &base)?;
        let ba = templates.render_judge(ctx, &base, &tuned)?;
        let (reply_ab, reply_ba) = if index % 4 == 3 { ("1", "1") } else { ("1", "2") };
        script.insert(&CompletionRequest::from_prompt(&judge_params, &ab), reply_ab);
        script.insert(&CompletionRequest::from_prompt(&judge_params, &ba), reply_ba);
    }
    let gateway = Gateway::replay(script).offline(true);

    let head_to_head = generate_head_to_head(&gateway, &templates, &contexts, CANDIDATE, BASELINE)?;
    println!(
        "generated {} head-to-head response pairs ({} dropped)",
        head_to_head.responses.len(),
        head_to_head.excluded.len()
    );

    let judging = judge_head_to_head(&gateway, &templates, JUDGE, &contexts, &head_to_head)?;
    for verdict in &judging.verdicts {
        println!("  {}: {:?}", verdict.dialogue_id, verdict.winner);
    }

    let report = compute_win_rate(&judging.verdicts, Side::A, CANDIDATE, BASELINE)?;
    println!(
        "\nwin rate of {} over {}: {}% ({} wins, {} losses, {} ties of {})",
        report.candidate,
        report.baseline,
        report.rendered_percent(),
        report.wins,
        report.losses,
        report.ties,
        report.n
    );

    // Swapping candidate and baseline complements the rate exactly.
    let swapped = compute_win_rate(&judging.verdicts, Side::B, BASELINE, CANDIDATE)?;
    println!(
        "swapped perspective: {}% (sums to 100 with the rate above)",
        swapped.rendered_percent()
    );

    // A matrix cell per (method, strategy); here two cells from this report.
    let table = report_matrix(&[
        LabeledReport {
            teacher: "GPT-4o".to_string(),
            student: BASELINE.to_string(),
            stage: FinetuneStage::SftDpo,
            method: DistillMethod::ImproveHuman,
            strategy: PromptStrategy::Cognitive,
            report: report.clone(),
        },
        LabeledReport {
            teacher: "GPT-4o".to_string(),
            student: BASELINE.to_string(),
            stage: FinetuneStage::SftDpo,
            method: DistillMethod::ImproveLlmInitial,
            strategy: PromptStrategy::Sequential,
            report,
        },
    ])?;
    println!("\n{table}");
    Ok(())
}
