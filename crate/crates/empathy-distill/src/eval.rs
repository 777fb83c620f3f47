//! Head-to-head win-rate evaluation with an LLM judge.
//!
//! Protocol: both models answer every test context under the direct prompt;
//! each pair of answers is judged twice, once per presentation order, and the
//! two trials must agree on a winner, otherwise the verdict is a tie. This
//! double-swap rule cancels position bias: a judge that always prefers the
//! first-listed response produces nothing but ties. Win rate gives ties half
//! credit, so relabeling candidate and baseline maps a rate of w to exactly
//! 100 - w.

use std::collections::BTreeMap;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::DialogueContext;
use crate::distill::DistillMethod;
use crate::gateway::{ChatMessage, CompletionRequest, Gateway, GatewayError, GenParams};
use crate::prompt::{PromptError, PromptStrategy, TemplateSet};
use crate::util::parallel_map;

/// Which of the two evaluated models a verdict or report favors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Winner {
    A,
    B,
    Tie,
}

/// Candidate side selector for win-rate aggregation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    A,
    B,
}

impl Side {
    fn winner(self) -> Winner {
        match self {
            Side::A => Winner::A,
            Side::B => Winner::B,
        }
    }

    fn other(self) -> Side {
        match self {
            Side::A => Side::B,
            Side::B => Side::A,
        }
    }
}

/// The order the two responses were presented to the judge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PresentationOrder {
    /// Response 1 is the A text.
    AFirst,
    /// Response 1 is the B text.
    BFirst,
}

/// One judge call: presentation order, raw reply, and the parsed label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderTrial {
    pub order: PresentationOrder,
    pub raw_text: String,
    /// 1 or 2 when the reply parsed strictly; None after a failed re-ask.
    pub label: Option<u8>,
}

/// The de-biased judgment for one dialogue.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub dialogue_id: String,
    pub judge_model: String,
    /// Tie exactly when the two order-swapped trials disagree.
    pub winner: Winner,
    pub order_trials: Vec<OrderTrial>,
    /// Set when a trial's reply stayed unparseable after one re-ask.
    pub parse_failure: bool,
}

/// Aggregate of many verdicts for one candidate/baseline pairing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinRateReport {
    pub candidate: String,
    pub baseline: String,
    pub judge: String,
    pub n: u64,
    pub wins: u64,
    pub losses: u64,
    pub ties: u64,
    /// 100 * (wins + ties/2) / n.
    pub win_rate_percent: f64,
}

impl WinRateReport {
    /// The win rate as the exact fraction (100 * (2*wins + ties), 2*n).
    pub fn win_rate_fraction(&self) -> (u64, u64) {
        (100 * (2 * self.wins + self.ties), 2 * self.n)
    }

    /// Percentage rounded to one decimal, as rendered in reports.
    pub fn rendered_percent(&self) -> String {
        format!("{:.1}", self.win_rate_percent)
    }
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("no verdicts to aggregate")]
    EmptyVerdicts,
    #[error("no reports to tabulate")]
    EmptyReports,
    #[error("every dialogue failed: {detail}")]
    TotalProviderFailure { detail: String },
    #[error("verdicts from mixed judges: {first} and {second}")]
    MixedJudges { first: String, second: String },
    #[error("report for strategy {strategy} with method {method} does not belong in the improvement matrix")]
    NotImprovement {
        method: DistillMethod,
        strategy: PromptStrategy,
    },
    #[error("failed to write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Both models' answers per dialogue id, plus the dialogues dropped because
/// either side failed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeadToHead {
    pub responses: BTreeMap<String, (String, String)>,
    pub excluded: BTreeMap<String, String>,
}

/// Answers every test context with both models under the direct prompt.
///
/// A dialogue is dropped for both sides when either model fails, so the
/// comparison stays symmetric.
pub fn generate_head_to_head(
    gateway: &Gateway,
    templates: &TemplateSet,
    contexts: &[DialogueContext],
    model_a: &str,
    model_b: &str,
) -> Result<HeadToHead, EvalError> {
    if contexts.is_empty() {
        return Err(EvalError::EmptyTestSet);
    }
    let params_a = GenParams::generation(model_a);
    let params_b = GenParams::generation(model_b);

    let outcomes = parallel_map(contexts, crate::gateway::DEFAULT_WINDOW, |context| {
        let answer = |params: &GenParams| -> Result<String, String> {
            let prompts = templates
                .render(PromptStrategy::Direct, context, None)
                .map_err(|e| e.to_string())?;
            let request = CompletionRequest::from_prompt(params, &prompts[0]);
            gateway
                .complete(&request)
                .map(|result| result.text)
                .map_err(|e| e.to_string())
        };
        match (answer(&params_a), answer(&params_b)) {
            (Ok(a), Ok(b)) => Ok((a, b)),
            (Err(cause), _) => Err(format!("{model_a}: {cause}")),
            (_, Err(cause)) => Err(format!("{model_b}: {cause}")),
        }
    });

    let mut head_to_head = HeadToHead {
        responses: BTreeMap::new(),
        excluded: BTreeMap::new(),
    };
    for (context, outcome) in contexts.iter().zip(outcomes) {
        match outcome {
            Ok(pair) => {
                head_to_head.responses.insert(context.id.clone(), pair);
            }
            Err(cause) => {
                log::warn!("dialogue {} excluded for both models: {cause}", context.id);
                head_to_head.excluded.insert(context.id.clone(), cause);
            }
        }
    }
    if head_to_head.responses.is_empty() {
        let detail = head_to_head
            .excluded
            .values()
            .next()
            .cloned()
            .unwrap_or_default();
        return Err(EvalError::TotalProviderFailure { detail });
    }
    Ok(head_to_head)
}

/// Strict first-token parse: the reply's first whitespace-delimited token
/// must be exactly `1` or `2`.
fn parse_label(reply: &str) -> Option<u8> {
    match reply.split_whitespace().next() {
        Some("1") => Some(1),
        Some("2") => Some(2),
        _ => None,
    }
}

const REASK: &str = "Answer with a single character: 1 or 2.";

/// Obtains one de-biased verdict: two judge calls, one per presentation
/// order, with strict label parsing and one re-ask per unparseable reply.
/// Agreement decides the winner; disagreement or a failed parse is a tie.
pub fn judge_pair(
    gateway: &Gateway,
    templates: &TemplateSet,
    judge_model: &str,
    context: &DialogueContext,
    text_a: &str,
    text_b: &str,
) -> Result<JudgeVerdict, EvalError> {
    let params = GenParams::judging(judge_model);
    let mut trials = Vec::with_capacity(2);
    let mut parse_failure = false;
    // Each trial's label is mapped onto the A/B sides before comparison.
    let mut sides: Vec<Option<Winner>> = Vec::with_capacity(2);

    for order in [PresentationOrder::AFirst, PresentationOrder::BFirst] {
        let (first, second) = match order {
            PresentationOrder::AFirst => (text_a, text_b),
            PresentationOrder::BFirst => (text_b, text_a),
        };
        let prompt = templates.render_judge(context, first, second)?;
        let request = CompletionRequest::from_prompt(&params, &prompt);
        let reply = gateway.complete(&request)?.text;

        let (raw_text, label) = match parse_label(&reply) {
            Some(label) => (reply, Some(label)),
            None => {
                // One re-ask, continuing the conversation with a nudge.
                let mut messages = request.messages.clone();
                messages.push(ChatMessage {
                    role: crate::gateway::Role::Assistant,
                    content: reply.clone(),
                });
                messages.push(ChatMessage::user(REASK));
                let reask = CompletionRequest {
                    messages,
                    ..request.clone()
                };
                let second_reply = gateway.complete(&reask)?.text;
                let label = parse_label(&second_reply);
                if label.is_none() {
                    parse_failure = true;
                }
                (format!("{reply}\n---\n{second_reply}"), label)
            }
        };

        let side = label.map(|l| match (order, l) {
            (PresentationOrder::AFirst, 1) | (PresentationOrder::BFirst, 2) => Winner::A,
            _ => Winner::B,
        });
        sides.push(side);
        trials.push(OrderTrial {
            order,
            raw_text,
            label,
        });
    }

    let winner = match (sides[0], sides[1]) {
        (Some(first), Some(second)) if first == second => first,
        _ => Winner::Tie,
    };
    Ok(JudgeVerdict {
        dialogue_id: context.id.clone(),
        judge_model: judge_model.to_string(),
        winner,
        order_trials: trials,
        parse_failure,
    })
}

/// Verdicts for a whole head-to-head set, judged in parallel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JudgingOutcome {
    pub verdicts: Vec<JudgeVerdict>,
    /// Dialogues not judged (identical texts or judge failure); these never
    /// enter a win-rate denominator.
    pub skipped: BTreeMap<String, String>,
}

pub fn judge_head_to_head(
    gateway: &Gateway,
    templates: &TemplateSet,
    judge_model: &str,
    contexts: &[DialogueContext],
    head_to_head: &HeadToHead,
) -> Result<JudgingOutcome, EvalError> {
    let by_id: BTreeMap<&str, &DialogueContext> =
        contexts.iter().map(|c| (c.id.as_str(), c)).collect();
    let items: Vec<(&String, &(String, String))> = head_to_head.responses.iter().collect();

    let outcomes = parallel_map(&items, crate::gateway::DEFAULT_WINDOW, |(id, (a, b))| {
        let context = match by_id.get(id.as_str()) {
            Some(context) => *context,
            None => return Err((id.to_string(), "no context for dialogue".to_string())),
        };
        judge_pair(gateway, templates, judge_model, context, a, b)
            .map_err(|e| (id.to_string(), e.to_string()))
    });

    let mut outcome = JudgingOutcome {
        verdicts: Vec::new(),
        skipped: BTreeMap::new(),
    };
    for result in outcomes {
        match result {
            Ok(verdict) => outcome.verdicts.push(verdict),
            Err((id, cause)) => {
                log::warn!("dialogue {id} skipped by the judge: {cause}");
                outcome.skipped.insert(id, cause);
            }
        }
    }
    Ok(outcome)
}

/// Aggregates verdicts into a win-rate report for the candidate side.
pub fn compute_win_rate(
    verdicts: &[JudgeVerdict],
    candidate_side: Side,
    candidate: &str,
    baseline: &str,
) -> Result<WinRateReport, EvalError> {
    let first = verdicts.first().ok_or(EvalError::EmptyVerdicts)?;
    for verdict in verdicts {
        if verdict.judge_model != first.judge_model {
            return Err(EvalError::MixedJudges {
                first: first.judge_model.clone(),
                second: verdict.judge_model.clone(),
            });
        }
    }
    let wins = verdicts.iter().filter(|v| v.winner == candidate_side.winner()).count() as u64;
    let losses = verdicts
        .iter()
        .filter(|v| v.winner == candidate_side.other().winner())
        .count() as u64;
    let ties = verdicts.iter().filter(|v| v.winner == Winner::Tie).count() as u64;
    let n = verdicts.len() as u64;
    debug_assert_eq!(wins + losses + ties, n);
    let win_rate_percent = (100 * (2 * wins + ties)) as f64 / (2 * n) as f64;
    Ok(WinRateReport {
        candidate: candidate.to_string(),
        baseline: baseline.to_string(),
        judge: first.judge_model.clone(),
        n,
        wins,
        losses,
        ties,
        win_rate_percent,
    })
}

/// Fine-tuning stage a report's candidate model went through.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinetuneStage {
    Sft,
    SftDpo,
}

impl FinetuneStage {
    fn label(self) -> &'static str {
        match self {
            FinetuneStage::Sft => "SFT",
            FinetuneStage::SftDpo => "SFT-DPO",
        }
    }
}

/// A win-rate report annotated with the axes of the evaluation matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledReport {
    pub teacher: String,
    pub student: String,
    pub stage: FinetuneStage,
    pub method: DistillMethod,
    pub strategy: PromptStrategy,
    pub report: WinRateReport,
}

const MATRIX_STRATEGIES: [PromptStrategy; 7] = PromptStrategy::IMPROVEMENT;
const MATRIX_METHODS: [DistillMethod; 2] =
    [DistillMethod::ImproveHuman, DistillMethod::ImproveLlmInitial];

fn method_label(method: DistillMethod) -> &'static str {
    match method {
        DistillMethod::ImproveHuman => "Improvement over Human Responses",
        DistillMethod::ImproveLlmInitial => "Improvement over LLM Initial Responses",
        DistillMethod::Direct => "Direct",
    }
}

/// Renders the evaluation matrix: rows are (teacher, student, judge, stage),
/// columns are the seven improvement strategies under each of the two
/// improvement methods. All reports must share one judge.
pub fn report_matrix(reports: &[LabeledReport]) -> Result<String, EvalError> {
    let first = reports.first().ok_or(EvalError::EmptyReports)?;
    let judge = &first.report.judge;
    for labeled in reports {
        if &labeled.report.judge != judge {
            return Err(EvalError::MixedJudges {
                first: judge.clone(),
                second: labeled.report.judge.clone(),
            });
        }
        if !MATRIX_METHODS.contains(&labeled.method) || !labeled.strategy.is_improvement() {
            return Err(EvalError::NotImprovement {
                method: labeled.method,
                strategy: labeled.strategy,
            });
        }
    }

    let mut cells: BTreeMap<(String, String), BTreeMap<(usize, usize), String>> = BTreeMap::new();
    for labeled in reports {
        let row_key = (
            format!("{} teaches {}", labeled.teacher, labeled.student),
            labeled.stage.label().to_string(),
        );
        let method_index = MATRIX_METHODS
            .iter()
            .position(|m| *m == labeled.method)
            .expect("validated above");
        let strategy_index = MATRIX_STRATEGIES
            .iter()
            .position(|s| *s == labeled.strategy)
            .expect("improvement strategy");
        cells
            .entry(row_key)
            .or_default()
            .insert((method_index, strategy_index), labeled.report.rendered_percent());
    }

    let row_width = cells
        .keys()
        .map(|(pair, stage)| format!("{pair}, {stage}").len())
        .max()
        .unwrap_or(20)
        .max(20);
    let col_width = 6usize;

    let mut out = String::new();
    out.push_str(&format!("Win rate (%) over base model, judged by {judge}\n"));
    out.push_str(&format!(
        "{:row_width$} | {:^group$} | {:^group$}\n",
        "",
        method_label(MATRIX_METHODS[0]),
        method_label(MATRIX_METHODS[1]),
        group = (col_width + 1) * MATRIX_STRATEGIES.len() - 1,
    ));
    out.push_str(&format!("{:row_width$} |", "run, stage"));
    for _ in &MATRIX_METHODS {
        for strategy in &MATRIX_STRATEGIES {
            out.push_str(&format!(" {:>col_width$}", strategy.table_label()));
        }
        out.push_str(" |");
    }
    out.push('\n');
    for ((pair, stage), row) in &cells {
        out.push_str(&format!("{:row_width$} |", format!("{pair}, {stage}")));
        for method_index in 0..MATRIX_METHODS.len() {
            for strategy_index in 0..MATRIX_STRATEGIES.len() {
                let value = row
                    .get(&(method_index, strategy_index))
                    .map(|s| s.as_str())
                    .unwrap_or("-");
                out.push_str(&format!(" {value:>col_width$}"));
            }
            out.push_str(" |");
        }
        out.push('\n');
    }
    Ok(out)
}

/// Writes one verdict per line.
pub fn write_verdicts(verdicts: &[JudgeVerdict], path: &Path) -> Result<(), EvalError> {
    let file = std::fs::File::create(path).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut writer = BufWriter::new(file);
    for verdict in verdicts {
        writeln!(writer, "{}", serde_json::to_string(verdict).expect("verdict serializes"))
            .map_err(|source| EvalError::Io {
                path: path.to_path_buf(),
                source,
            })?;
    }
    writer.flush().map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes the machine-readable report records, one per line.
pub fn write_report_records(reports: &[LabeledReport], path: &Path) -> Result<(), EvalError> {
    if reports.is_empty() {
        return Err(EvalError::EmptyReports);
    }
    let file = std::fs::File::create(path).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut writer = BufWriter::new(file);
    for report in reports {
        writeln!(writer, "{}", serde_json::to_string(report).expect("report serializes"))
            .map_err(|source| EvalError::Io {
                path: path.to_path_buf(),
                source,
            })?;
    }
    writer.flush().map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::ReplayScript;
    use proptest::prelude::*;

    fn context(id: &str) -> DialogueContext {
        DialogueContext {
            id: id.to_string(),
            situation: format!("situation {id}"),
            speaker_utterance: format!("utterance {id}"),
        }
    }

    /// Scripts both presentation orders of one judged pair.
    #[allow(clippy::too_many_arguments)]
    fn script_judgment(
        script: &mut ReplayScript,
        templates: &TemplateSet,
        judge: &str,
        ctx: &DialogueContext,
        a: &str,
        b: &str,
        reply_ab: &str,
        reply_ba: &str,
    ) {
        let params = GenParams::judging(judge);
        let ab = templates.render_judge(ctx, a, b).unwrap();
        script.insert(&CompletionRequest::from_prompt(&params, &ab), reply_ab);
        let ba = templates.render_judge(ctx, b, a).unwrap();
        script.insert(&CompletionRequest::from_prompt(&params, &ba), reply_ba);
    }

    #[test]
    fn consistent_judge_under_swap_names_a() {
        let templates = TemplateSet::builtin();
        let ctx = context("d1");
        let mut script = ReplayScript::default();
        // A first: judge answers 1 (the A text); B first: answers 2 (still A).
        script_judgment(&mut script, &templates, "judge", &ctx, "text a", "text b", "1", "2");
        let gateway = Gateway::replay(script);
        let verdict = judge_pair(&gateway, &templates, "judge", &ctx, "text a", "text b").unwrap();
        assert_eq!(verdict.winner, Winner::A);
        assert_eq!(verdict.order_trials.len(), 2);
        assert!(!verdict.parse_failure);
    }

    #[test]
    fn position_biased_judge_yields_tie() {
        let templates = TemplateSet::builtin();
        let ctx = context("d1");
        let mut script = ReplayScript::default();
        // Always answers 1 regardless of order: position bias.
        script_judgment(&mut script, &templates, "judge", &ctx, "text a", "text b", "1", "1");
        let gateway = Gateway::replay(script);
        let verdict = judge_pair(&gateway, &templates, "judge", &ctx, "text a", "text b").unwrap();
        assert_eq!(verdict.winner, Winner::Tie);
    }

    #[test]
    fn identical_texts_are_a_precondition_error() {
        let templates = TemplateSet::builtin();
        let gateway = Gateway::replay(ReplayScript::default());
        assert!(matches!(
            judge_pair(&gateway, &templates, "judge", &context("d1"), "same", "same"),
            Err(EvalError::Prompt(PromptError::IdenticalResponses))
        ));
    }

    #[test]
    fn unparseable_reply_triggers_one_reask() {
        let templates = TemplateSet::builtin();
        let ctx = context("d1");
        let params = GenParams::judging("judge");
        let mut script = ReplayScript::default();

        let ab = templates.render_judge(&ctx, "text a", "text b").unwrap();
        let ab_request = CompletionRequest::from_prompt(&params, &ab);
        script.insert(&ab_request, "Well, both are heartfelt...");
        // The re-ask continues the conversation and gets a clean label.
        let mut reask_messages = ab_request.messages.clone();
        reask_messages.push(ChatMessage {
            role: crate::gateway::Role::Assistant,
            content: "Well, both are heartfelt...".to_string(),
        });
        reask_messages.push(ChatMessage::user(REASK));
        let reask = CompletionRequest {
            messages: reask_messages,
            ..ab_request.clone()
        };
        script.insert(&reask, "1");

        let ba = templates.render_judge(&ctx, "text b", "text a").unwrap();
        script.insert(&CompletionRequest::from_prompt(&params, &ba), "2");

        let gateway = Gateway::replay(script);
        let verdict = judge_pair(&gateway, &templates, "judge", &ctx, "text a", "text b").unwrap();
        assert_eq!(verdict.winner, Winner::A);
        assert!(!verdict.parse_failure);
        assert_eq!(verdict.order_trials[0].label, Some(1));
    }

    fn verdict(id: &str, winner: Winner) -> JudgeVerdict {
        JudgeVerdict {
            dialogue_id: id.to_string(),
            judge_model: "judge".to_string(),
            winner,
            order_trials: vec![
                OrderTrial {
                    order: PresentationOrder::AFirst,
                    raw_text: "1".to_string(),
                    label: Some(1),
                },
                OrderTrial {
                    order: PresentationOrder::BFirst,
                    raw_text: "2".to_string(),
                    label: Some(2),
                },
            ],
            parse_failure: false,
        }
    }

    fn verdict_multiset(wins: u64, losses: u64, ties: u64) -> Vec<JudgeVerdict> {
        let mut verdicts = Vec::new();
        for i in 0..wins {
            verdicts.push(verdict(&format!("w{i}"), Winner::A));
        }
        for i in 0..losses {
            verdicts.push(verdict(&format!("l{i}"), Winner::B));
        }
        for i in 0..ties {
            verdicts.push(verdict(&format!("t{i}"), Winner::Tie));
        }
        verdicts
    }

    #[test]
    fn quarter_point_granularity_arithmetic() {
        let verdicts = verdict_multiset(226, 24, 0);
        let report = compute_win_rate(&verdicts, Side::A, "fine-tuned", "base").unwrap();
        assert_eq!(report.n, 250);
        assert_eq!(report.win_rate_percent, 90.4);
        assert_eq!(report.rendered_percent(), "90.4");
    }

    #[test]
    fn all_wins_is_one_hundred() {
        let verdicts = verdict_multiset(10, 0, 0);
        let report = compute_win_rate(&verdicts, Side::A, "c", "b").unwrap();
        assert_eq!(report.win_rate_percent, 100.0);
    }

    #[test]
    fn swapping_sides_complements_the_rate() {
        let verdicts = verdict_multiset(7, 5, 3);
        let forward = compute_win_rate(&verdicts, Side::A, "c", "b").unwrap();
        let backward = compute_win_rate(&verdicts, Side::B, "b", "c").unwrap();
        let (fn_, fd) = forward.win_rate_fraction();
        let (bn, bd) = backward.win_rate_fraction();
        assert_eq!(fd, bd);
        assert_eq!(fn_ + bn, 100 * fd, "rates sum to exactly 100 in rationals");
    }

    #[test]
    fn empty_verdicts_rejected() {
        assert!(matches!(
            compute_win_rate(&[], Side::A, "c", "b"),
            Err(EvalError::EmptyVerdicts)
        ));
    }

    #[test]
    fn mixed_judges_rejected() {
        let mut verdicts = verdict_multiset(1, 0, 0);
        let mut other = verdict("x", Winner::A);
        other.judge_model = "other-judge".to_string();
        verdicts.push(other);
        assert!(matches!(
            compute_win_rate(&verdicts, Side::A, "c", "b"),
            Err(EvalError::MixedJudges { .. })
        ));
    }

    fn script_direct_answers(
        script: &mut ReplayScript,
        templates: &TemplateSet,
        model: &str,
        ctx: &DialogueContext,
        text: &str,
    ) {
        let params = GenParams::generation(model);
        let prompts = templates.render(PromptStrategy::Direct, ctx, None).unwrap();
        script.insert(&CompletionRequest::from_prompt(&params, &prompts[0]), text);
    }

    #[test]
    fn head_to_head_answers_every_context() {
        let templates = TemplateSet::builtin();
        let contexts: Vec<DialogueContext> = (0..5).map(|i| context(&format!("d{i}"))).collect();
        let mut script = ReplayScript::default();
        for ctx in &contexts {
            script_direct_answers(&mut script, &templates, "model-a", ctx, &format!("a answer {}", ctx.id));
            script_direct_answers(&mut script, &templates, "model-b", ctx, &format!("b answer {}", ctx.id));
        }
        let gateway = Gateway::replay(script);
        let result = generate_head_to_head(&gateway, &templates, &contexts, "model-a", "model-b").unwrap();
        assert_eq!(result.responses.len(), 5);
        assert!(result.excluded.is_empty());
        assert_eq!(result.responses["d3"].0, "a answer d3");

        // Warm replay rerun gives the identical map.
        let rerun = generate_head_to_head(&gateway, &templates, &contexts, "model-a", "model-b").unwrap();
        assert_eq!(rerun, result);
    }

    #[test]
    fn one_sided_failure_excludes_the_dialogue_for_both() {
        let templates = TemplateSet::builtin();
        let contexts: Vec<DialogueContext> = (0..5).map(|i| context(&format!("d{i}"))).collect();
        let mut script = ReplayScript::default();
        for ctx in &contexts {
            script_direct_answers(&mut script, &templates, "model-a", ctx, "a answer");
            if ctx.id != "d2" {
                script_direct_answers(&mut script, &templates, "model-b", ctx, "b answer");
            }
        }
        let gateway = Gateway::replay(script);
        let result = generate_head_to_head(&gateway, &templates, &contexts, "model-a", "model-b").unwrap();
        assert_eq!(result.responses.len(), 4);
        assert!(result.excluded.contains_key("d2"));
        assert!(result.excluded["d2"].starts_with("model-b:"));
    }

    #[test]
    fn empty_test_set_rejected() {
        let templates = TemplateSet::builtin();
        let gateway = Gateway::replay(ReplayScript::default());
        assert!(matches!(
            generate_head_to_head(&gateway, &templates, &[], "a", "b"),
            Err(EvalError::EmptyTestSet)
        ));
    }

    fn labeled(
        stage: FinetuneStage,
        method: DistillMethod,
        strategy: PromptStrategy,
        rate_over: (u64, u64),
    ) -> LabeledReport {
        let verdicts = verdict_multiset(rate_over.0, rate_over.1, 0);
        LabeledReport {
            teacher: "GPT-4o".to_string(),
            student: "llama-3.1-8b".to_string(),
            stage,
            method,
            strategy,
            report: compute_win_rate(&verdicts, Side::A, "fine-tuned", "base").unwrap(),
        }
    }

    #[test]
    fn matrix_renders_populated_and_blank_cells() {
        let reports = vec![
            labeled(FinetuneStage::Sft, DistillMethod::ImproveHuman, PromptStrategy::Naive, (141, 109)),
            labeled(FinetuneStage::SftDpo, DistillMethod::ImproveLlmInitial, PromptStrategy::AllThree, (232, 18)),
        ];
        let table = report_matrix(&reports).unwrap();
        assert!(table.contains("56.4"));
        assert!(table.contains("92.8"));
        assert!(table.contains('-'), "unpopulated cells render blank");
        assert!(table.contains("Improvement over Human Responses"));
        assert!(table.contains("GPT-4o teaches llama-3.1-8b, SFT"));
    }

    #[test]
    fn matrix_rejects_empty_and_mixed_judges() {
        assert!(matches!(report_matrix(&[]), Err(EvalError::EmptyReports)));
        let mut reports = vec![labeled(
            FinetuneStage::Sft,
            DistillMethod::ImproveHuman,
            PromptStrategy::Naive,
            (1, 1),
        )];
        let mut other = reports[0].clone();
        other.report.judge = "different".to_string();
        reports.push(other);
        assert!(matches!(report_matrix(&reports), Err(EvalError::MixedJudges { .. })));
    }

    #[test]
    fn report_records_are_written_one_per_line() {
        let reports = vec![
            labeled(FinetuneStage::Sft, DistillMethod::ImproveHuman, PromptStrategy::Naive, (3, 1)),
            labeled(FinetuneStage::SftDpo, DistillMethod::ImproveLlmInitial, PromptStrategy::AllThree, (4, 0)),
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("reports.jsonl");
        write_report_records(&reports, &path).unwrap();
        let raw = std::fs::read_to_string(&path).unwrap();
        assert_eq!(raw.lines().count(), 2);
        for line in raw.lines() {
            let parsed: LabeledReport = serde_json::from_str(line).unwrap();
            assert_eq!(parsed.report.judge, "judge");
        }
        assert!(matches!(
            write_report_records(&[], &path),
            Err(EvalError::EmptyReports)
        ));
    }

    #[test]
    fn matrix_rejects_direct_method_reports() {
        let report = labeled(
            FinetuneStage::Sft,
            DistillMethod::Direct,
            PromptStrategy::Naive,
            (1, 1),
        );
        assert!(matches!(
            report_matrix(std::slice::from_ref(&report)),
            Err(EvalError::NotImprovement { .. })
        ));
    }

    proptest! {
        /// Swap symmetry over random verdict multisets, in exact rationals.
        #[test]
        fn swap_symmetry_holds(wins in 0u64..200, losses in 0u64..200, ties in 0u64..200) {
            prop_assume!(wins + losses + ties > 0);
            let verdicts = verdict_multiset(wins, losses, ties);
            let forward = compute_win_rate(&verdicts, Side::A, "c", "b").unwrap();
            let backward = compute_win_rate(&verdicts, Side::B, "b", "c").unwrap();
            let (fn_, fd) = forward.win_rate_fraction();
            let (bn, bd) = backward.win_rate_fraction();
            prop_assert_eq!(fd, bd);
            prop_assert_eq!(fn_ + bn, 100 * fd);
        }

        /// A judge that answers "1" in both orders ties every dialogue.
        #[test]
        fn always_one_judge_is_all_ties(n in 1usize..12) {
            let templates = TemplateSet::builtin();
            let contexts: Vec<DialogueContext> = (0..n).map(|i| context(&format!("d{i}"))).collect();
            let mut script = ReplayScript::default();
            for ctx in &contexts {
                let a = format!("a text {}", ctx.id);
                let b = format!("b text {}", ctx.id);
                script_judgment(&mut script, &templates, "judge", ctx, &a, &b, "1", "1");
            }
            let gateway = Gateway::replay(script);
            for ctx in &contexts {
                let a = format!("a text {}", ctx.id);
                let b = format!("b text {}", ctx.id);
                let verdict = judge_pair(&gateway, &templates, "judge", ctx, &a, &b).unwrap();
                prop_assert_eq!(verdict.winner, Winner::Tie);
            }
        }
    }
}
