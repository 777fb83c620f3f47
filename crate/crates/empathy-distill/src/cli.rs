//! Command-line front end.
//!
//! Four subcommands cover the pipeline: `stats` (corpus summaries),
//! `partition` (score-rule splits and their combination), `distill` (the
//! three methods, exporting datasets and training configs), and `evaluate`
//! (head-to-head win rates). Every invocation gets a run id (timestamp plus
//! seed hash) namespacing its artifacts, and writes an `invocation.json`
//! echo sufficient to reproduce its outputs bit-exactly with a warm cache.
//!
//! Exit codes: 0 success, 2 validation failure, 3 provider failure, 4 I/O
//! failure.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{
    self, load_corpus, CorpusDialect, CorpusError, DialogueContext, EmpathyScore, ResponderId,
};
use crate::distill::{
    run_method1, run_method2, run_method3, write_run_artifacts, DistillError, Distiller,
    Method1Run, RunOutcome,
};
use crate::eval::{
    compute_win_rate, generate_head_to_head, judge_head_to_head, write_verdicts, EvalError, Side,
};
use crate::export::{
    emit_training_config, export_preference, export_sft, export_test, ConfigOverrides,
    ExportError, TrainStage,
};
use crate::gateway::{load_provider_configs, Gateway, GatewayError, GenParams};
use crate::partition::{
    combine_partitions, partition_by_scores, ratio_of, write_partition_manifest, DatasetPartition,
    PartitionError, SplitRatio,
};
use crate::prompt::{PromptError, PromptStrategy, TemplateSet};

pub const EXIT_VALIDATION: u8 = 2;
pub const EXIT_PROVIDER: u8 = 3;
pub const EXIT_IO: u8 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "empathy-distill",
    version,
    about = "Builds SFT/preference/test datasets that distill empathetic-response capability from teacher LLMs, and evaluates model pairs with an LLM-judge win-rate harness"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print per-responder empathy score histograms and per-model rating-pair matrices
    Stats(StatsArgs),
    /// Partition a scored corpus by the score rule, per teacher or combined
    Partition(PartitionArgs),
    /// Run a distillation method and export datasets plus training configs
    Distill(DistillArgs),
    /// Judge two models head-to-head on a test set and report the win rate
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum DialectArg {
    Csv,
    Jsonl,
}

impl DialectArg {
    fn dialect(self) -> CorpusDialect {
        match self {
            DialectArg::Csv => CorpusDialect::DelimitedTable,
            DialectArg::Jsonl => CorpusDialect::RecordStream,
        }
    }
}

#[derive(Debug, Args)]
struct StatsArgs {
    /// Corpus file (.csv/.tsv or .jsonl/.ndjson)
    #[arg(long)]
    corpus: PathBuf,
    /// Dialect override when the extension is ambiguous
    #[arg(long, value_enum)]
    dialect: Option<DialectArg>,
}

#[derive(Debug, Args)]
struct PartitionArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, value_enum)]
    dialect: Option<DialectArg>,
    /// Teacher model name; repeat for several teachers
    #[arg(long = "teacher", required = true)]
    teachers: Vec<String>,
    /// Also write the combined partition across all given teachers
    #[arg(long)]
    combine: bool,
    /// Output root; artifacts land in <out>/<run-id>/
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct DistillArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, value_enum)]
    dialect: Option<DialectArg>,
    /// Distillation method: 1 direct, 2 improve human responses, 3 improve teacher initial responses
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
    method: u8,
    /// Teacher model name
    #[arg(long)]
    teacher: String,
    /// Prompting strategy: naive, cog, aff, comp, all, seq, lacking (direct for method 1)
    #[arg(long, default_value = "direct")]
    strategy: String,
    /// SFT:preference:test ratio for method 3, e.g. 0.4:0.35:0.25 or 2:1:1
    #[arg(long)]
    ratio: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// TOML file with [provider.<name>] sections
    #[arg(long)]
    provider_config: Option<PathBuf>,
    /// Provider section to use when the config defines several
    #[arg(long)]
    provider: Option<String>,
    /// Forbid network use; requires a warm cache or replay provider
    #[arg(long)]
    offline: bool,
    /// Template directory overriding the built-in prompts
    #[arg(long)]
    templates: Option<PathBuf>,
    /// Base model the emitted training configs target
    #[arg(long, default_value = "llama-3.1-8b")]
    base_model: String,
    #[arg(long)]
    epochs: Option<f64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<u32>,
    #[arg(long)]
    lora_rank: Option<u32>,
    #[arg(long)]
    dpo_beta: Option<f64>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Test set exported by the distill or partition commands
    #[arg(long)]
    test: PathBuf,
    #[arg(long)]
    model_a: String,
    #[arg(long)]
    model_b: String,
    /// Judge model name
    #[arg(long)]
    judge: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    provider_config: Option<PathBuf>,
    #[arg(long)]
    provider: Option<String>,
    #[arg(long)]
    offline: bool,
    #[arg(long)]
    templates: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Error)]
enum AppError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Distill(#[from] DistillError),
    #[error(transparent)]
    Export(#[from] ExportError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{0}")]
    Usage(String),
    #[error("failed to write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn corpus_class(error: &CorpusError) -> u8 {
    match error {
        CorpusError::Io { .. } => EXIT_IO,
        _ => EXIT_VALIDATION,
    }
}

fn partition_class(error: &PartitionError) -> u8 {
    match error {
        PartitionError::Corpus(inner) => corpus_class(inner),
        PartitionError::Io { .. } => EXIT_IO,
        _ => EXIT_VALIDATION,
    }
}

fn prompt_class(error: &PromptError) -> u8 {
    match error {
        PromptError::TemplateIo { .. } => EXIT_IO,
        _ => EXIT_VALIDATION,
    }
}

fn gateway_class(error: &GatewayError) -> u8 {
    match error {
        GatewayError::InvalidRequest { .. }
        | GatewayError::InvalidConfig { .. }
        | GatewayError::MissingCredential { .. } => EXIT_VALIDATION,
        GatewayError::CacheIo { .. } => EXIT_IO,
        GatewayError::ChainStage { source, .. } => gateway_class(source),
        _ => EXIT_PROVIDER,
    }
}

fn distill_class(error: &DistillError) -> u8 {
    match error {
        DistillError::Corpus(inner) => corpus_class(inner),
        DistillError::Partition(inner) => partition_class(inner),
        DistillError::Prompt(inner) => prompt_class(inner),
        DistillError::Io { .. } => EXIT_IO,
        _ => EXIT_VALIDATION,
    }
}

fn export_class(error: &ExportError) -> u8 {
    match error {
        ExportError::Io { .. } => EXIT_IO,
        _ => EXIT_VALIDATION,
    }
}

fn eval_class(error: &EvalError) -> u8 {
    match error {
        EvalError::Prompt(inner) => prompt_class(inner),
        EvalError::Gateway(inner) => gateway_class(inner),
        EvalError::Io { .. } => EXIT_IO,
        EvalError::TotalProviderFailure { .. } => EXIT_PROVIDER,
        _ => EXIT_VALIDATION,
    }
}

fn failure_class(error: &AppError) -> u8 {
    match error {
        AppError::Corpus(inner) => corpus_class(inner),
        AppError::Partition(inner) => partition_class(inner),
        AppError::Prompt(inner) => prompt_class(inner),
        AppError::Gateway(inner) => gateway_class(inner),
        AppError::Distill(inner) => distill_class(inner),
        AppError::Export(inner) => export_class(inner),
        AppError::Eval(inner) => eval_class(inner),
        AppError::Usage(_) => EXIT_VALIDATION,
        AppError::Io { .. } => EXIT_IO,
    }
}

/// Parses argv, runs the command, and maps failures to exit codes.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(error) => {
            eprintln!("error: {error}");
            ExitCode::from(failure_class(&error))
        }
    }
}

fn run(cli: Cli) -> Result<(), AppError> {
    match cli.command {
        Command::Stats(args) => cmd_stats(args),
        Command::Partition(args) => cmd_partition(args),
        Command::Distill(args) => cmd_distill(args),
        Command::Evaluate(args) => cmd_evaluate(args),
    }
}

/// Timestamp plus seed hash: collision-free, reproducible artifact namespace.
fn new_run_id(seed: u64) -> String {
    let digest = Sha256::digest(seed.to_le_bytes());
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ");
    format!("{stamp}-{}", hex::encode(&digest[..4]))
}

fn create_run_dir(out: &Path, run_id: &str) -> Result<PathBuf, AppError> {
    let dir = out.join(run_id);
    std::fs::create_dir_all(&dir).map_err(|source| AppError::Io {
        path: dir.clone(),
        source,
    })?;
    Ok(dir)
}

fn write_invocation(dir: &Path, echo: serde_json::Value) -> Result<(), AppError> {
    let path = dir.join("invocation.json");
    std::fs::write(&path, serde_json::to_string_pretty(&echo).expect("echo serializes"))
        .map_err(|source| AppError::Io { path, source })
}

fn load_templates(dir: &Option<PathBuf>) -> Result<TemplateSet, AppError> {
    match dir {
        Some(dir) => Ok(TemplateSet::load(dir)?),
        None => Ok(TemplateSet::builtin()),
    }
}

/// Builds the gateway named by `--provider-config` / `--provider`.
fn build_gateway(
    config_path: &Option<PathBuf>,
    provider: &Option<String>,
    offline: bool,
) -> Result<Gateway, AppError> {
    let config_path = config_path.as_ref().ok_or_else(|| {
        AppError::Usage("this command needs --provider-config to reach a model".to_string())
    })?;
    let configs = load_provider_configs(config_path)?;
    let (name, config) = match provider {
        Some(name) => configs.get_key_value(name.as_str()).ok_or_else(|| {
            AppError::Usage(format!(
                "no [provider.{name}] section in {}",
                config_path.display()
            ))
        })?,
        None if configs.len() == 1 => configs.iter().next().expect("one section"),
        None => {
            return Err(AppError::Usage(format!(
                "{} defines {} providers; pick one with --provider",
                config_path.display(),
                configs.len()
            )))
        }
    };
    let gateway = Gateway::from_config(name, config)?.offline(offline);
    Ok(gateway)
}

fn cmd_stats(args: StatsArgs) -> Result<(), AppError> {
    let corpus = load_corpus(&args.corpus, args.dialect.map(DialectArg::dialect))?;
    let echo = serde_json::json!({
        "command": "stats",
        "corpus": args.corpus,
        "dialect": args.dialect.map(|d| format!("{d:?}").to_lowercase()),
    });
    println!("# invocation: {echo}");
    println!(
        "# corpus: {} ({} dialogues)",
        args.corpus.display(),
        corpus.len()
    );

    let responders = corpus.responders();
    println!("\nEmpathy score distribution");
    println!("{:<16} {:>8} {:>8} {:>8} {:>8}", "responder", "1", "2", "3", "total");
    for responder in &responders {
        let hist = corpus::score_distribution(&corpus, responder)?;
        println!(
            "{:<16} {:>8} {:>8} {:>8} {:>8}",
            responder.name(),
            hist.count(EmpathyScore::Bad),
            hist.count(EmpathyScore::Okay),
            hist.count(EmpathyScore::Good),
            hist.total()
        );
    }

    for responder in &responders {
        if responder.is_human() {
            continue;
        }
        let matrix = corpus::rating_pair_matrix(&corpus, responder)?;
        println!("\n(human, {}) rating pairs", responder.name());
        println!("{:<10} {:>8} {:>8} {:>8}", "", "model=1", "model=2", "model=3");
        for human in EmpathyScore::ALL {
            println!(
                "human={:<4} {:>8} {:>8} {:>8}",
                human.as_u8(),
                matrix.cell(human, EmpathyScore::Bad),
                matrix.cell(human, EmpathyScore::Okay),
                matrix.cell(human, EmpathyScore::Good)
            );
        }
        println!("total: {}", matrix.total());
    }
    Ok(())
}

fn partition_summary(partition: &DatasetPartition) -> String {
    let (sft_ids, pref_ids, test_ids) = partition.class_counts();
    format!(
        "teacher {}: {} sft examples ({} dialogues), {} preference pairs ({} dialogues), {} test contexts",
        partition.teacher.name(),
        partition.sft.len(),
        sft_ids,
        partition.preference.len(),
        pref_ids,
        test_ids
    )
}

fn cmd_partition(args: PartitionArgs) -> Result<(), AppError> {
    let corpus = load_corpus(&args.corpus, args.dialect.map(DialectArg::dialect))?;
    let run_id = new_run_id(args.seed);
    let dir = create_run_dir(&args.out, &run_id)?;

    let mut partitions = Vec::new();
    for teacher in &args.teachers {
        let partition = partition_by_scores(&corpus, &ResponderId::model(teacher.clone()))?;
        let path = dir.join(format!("partition_{teacher}.jsonl"));
        write_partition_manifest(&partition, Some(&ratio_of(&partition)?), Some(args.seed), &path)?;
        println!("{}", partition_summary(&partition));
        partitions.push(partition);
    }
    if args.combine {
        let combined = combine_partitions(&partitions)?;
        let path = dir.join("partition_combined.jsonl");
        write_partition_manifest(&combined, Some(&ratio_of(&combined)?), Some(args.seed), &path)?;
        println!("{}", partition_summary(&combined));
    }

    write_invocation(
        &dir,
        serde_json::json!({
            "command": "partition",
            "run_id": run_id,
            "corpus": args.corpus,
            "teachers": args.teachers,
            "combine": args.combine,
            "seed": args.seed,
        }),
    )?;
    println!("artifacts: {}", dir.display());
    Ok(())
}

/// Exports a distillation outcome: datasets, training configs, run manifest.
fn export_outcome(
    outcome: &RunOutcome,
    dir: &Path,
    instruction: &str,
    base_model: &str,
    overrides: &ConfigOverrides,
) -> Result<(), AppError> {
    write_run_artifacts(outcome, dir)?;
    let partition = &outcome.partition;

    if partition.sft.is_empty() {
        log::warn!("no sft examples; skipping sft.jsonl");
    } else {
        let path = dir.join("sft.jsonl");
        let count = export_sft(&partition.sft, instruction, &path)?;
        let (_, notes) =
            emit_training_config(TrainStage::Sft, &path, base_model, &dir.join("train_sft.cfg"), overrides)?;
        for note in notes {
            println!("{note}");
        }
        println!("wrote {count} sft records to {}", path.display());
    }

    if partition.preference.is_empty() {
        log::warn!("no preference pairs; skipping dpo.jsonl");
    } else {
        let path = dir.join("dpo.jsonl");
        let count = export_preference(&partition.preference, instruction, &path)?;
        let (_, notes) =
            emit_training_config(TrainStage::Dpo, &path, base_model, &dir.join("train_dpo.cfg"), overrides)?;
        for note in notes {
            println!("{note}");
        }
        println!("wrote {count} preference records to {}", path.display());
    }

    if partition.test.is_empty() {
        log::warn!("no test contexts; skipping test.jsonl");
    } else {
        let path = dir.join("test.jsonl");
        let count = export_test(&partition.test, &path)?;
        println!("wrote {count} test records to {}", path.display());
    }

    if !outcome.failures.is_empty() {
        println!("{} dialogues failed; see manifest.jsonl", outcome.failures.len());
    }
    if !outcome.degenerate_pairs.is_empty() {
        println!(
            "{} preference pairs dropped (improved text equaled the initial)",
            outcome.degenerate_pairs.len()
        );
    }
    Ok(())
}

fn cmd_distill(args: DistillArgs) -> Result<(), AppError> {
    let corpus = load_corpus(&args.corpus, args.dialect.map(DialectArg::dialect))?;
    let templates = load_templates(&args.templates)?;
    let strategy: PromptStrategy = args.strategy.parse()?;
    let run_id = new_run_id(args.seed);
    let dir = create_run_dir(&args.out, &run_id)?;
    let teacher = ResponderId::model(args.teacher.clone());
    let overrides = ConfigOverrides {
        learning_rate: args.learning_rate,
        epochs: args.epochs,
        batch_size: args.batch_size,
        lora_rank: args.lora_rank,
        dpo_beta: args.dpo_beta,
    };

    write_invocation(
        &dir,
        serde_json::json!({
            "command": "distill",
            "run_id": run_id,
            "corpus": args.corpus,
            "method": args.method,
            "teacher": args.teacher,
            "strategy": strategy,
            "ratio": args.ratio,
            "seed": args.seed,
            "offline": args.offline,
            "base_model": args.base_model,
        }),
    )?;

    let needs_gateway = args.method != 1 || args.provider_config.is_some();
    let gateway = if needs_gateway {
        Some(build_gateway(&args.provider_config, &args.provider, args.offline)?)
    } else {
        None
    };
    let distiller = gateway
        .as_ref()
        .map(|gw| Distiller::new(gw, &templates, GenParams::generation(args.teacher.clone())));

    match args.method {
        1 => {
            if strategy != PromptStrategy::Direct {
                return Err(AppError::Usage(format!(
                    "method 1 uses the direct prompt; got strategy {strategy}"
                )));
            }
            match run_method1(&corpus, &teacher, distiller.as_ref())? {
                Method1Run::Partitioned(partition) => {
                    let outcome = RunOutcome {
                        run: crate::distill::DistillationRun {
                            method: crate::distill::DistillMethod::Direct,
                            teacher: teacher.name().to_string(),
                            strategy: PromptStrategy::Direct,
                            seed: args.seed,
                            ratio: None,
                            manifest: BTreeMap::new(),
                        },
                        partition,
                        improvements: Vec::new(),
                        failures: BTreeMap::new(),
                        failure_traces: BTreeMap::new(),
                        degenerate_pairs: Vec::new(),
                    };
                    export_outcome(&outcome, &dir, templates.direct(), &args.base_model, &overrides)?;
                }
                Method1Run::ScoresRequired(generation) => {
                    let path = dir.join("responses.jsonl");
                    let lines: Vec<String> = generation
                        .responses
                        .iter()
                        .map(|(id, text)| {
                            serde_json::to_string(&serde_json::json!({"id": id, "response": text}))
                                .expect("response serializes")
                        })
                        .collect();
                    std::fs::write(&path, lines.join("\n") + "\n").map_err(|source| AppError::Io {
                        path: path.clone(),
                        source,
                    })?;
                    println!(
                        "scores required: generated {} unscored direct responses ({} failures); \
                         score them before partitioning. Responses: {}",
                        generation.responses.len(),
                        generation.failures.len(),
                        path.display()
                    );
                }
            }
        }
        2 => {
            let distiller = distiller.as_ref().expect("gateway required for method 2");
            let outcome = run_method2(distiller, &corpus, strategy, args.seed)?;
            export_outcome(&outcome, &dir, templates.direct(), &args.base_model, &overrides)?;
        }
        3 => {
            let ratio_text = args.ratio.as_ref().ok_or_else(|| {
                AppError::Usage("method 3 needs --ratio (for example 0.4:0.35:0.25)".to_string())
            })?;
            let ratio = SplitRatio::parse(ratio_text)?;
            let distiller = distiller.as_ref().expect("gateway required for method 3");
            let outcome = run_method3(distiller, &corpus, strategy, &ratio, args.seed)?;
            export_outcome(&outcome, &dir, templates.direct(), &args.base_model, &overrides)?;
        }
        _ => unreachable!("clap range"),
    }
    println!("artifacts: {}", dir.display());
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<(), AppError> {
    let records = crate::export::load_test(&args.test)?;
    if records.is_empty() {
        return Err(AppError::Usage(format!("test file {} has no records", args.test.display())));
    }
    let contexts: Vec<DialogueContext> = records
        .into_iter()
        .map(|r| DialogueContext {
            id: r.id,
            situation: r.situation,
            speaker_utterance: r.utterance,
        })
        .collect();
    let templates = load_templates(&args.templates)?;
    let gateway = build_gateway(&args.provider_config, &args.provider, args.offline)?;
    let run_id = new_run_id(args.seed);
    let dir = create_run_dir(&args.out, &run_id)?;

    write_invocation(
        &dir,
        serde_json::json!({
            "command": "evaluate",
            "run_id": run_id,
            "test": args.test,
            "model_a": args.model_a,
            "model_b": args.model_b,
            "judge": args.judge,
            "offline": args.offline,
            "seed": args.seed,
        }),
    )?;

    let head_to_head =
        generate_head_to_head(&gateway, &templates, &contexts, &args.model_a, &args.model_b)?;
    let judging = judge_head_to_head(&gateway, &templates, &args.judge, &contexts, &head_to_head)?;
    if judging.verdicts.is_empty() {
        return Err(EvalError::EmptyVerdicts.into());
    }
    write_verdicts(&judging.verdicts, &dir.join("verdicts.jsonl"))?;
    let report = compute_win_rate(&judging.verdicts, Side::A, &args.model_a, &args.model_b)?;

    let report_path = dir.join("report.json");
    std::fs::write(
        &report_path,
        serde_json::to_string_pretty(&report).expect("report serializes"),
    )
    .map_err(|source| AppError::Io {
        path: report_path,
        source,
    })?;

    println!(
        "win rate of {} over {} judged by {}: {}% ({} wins, {} losses, {} ties of {}; {} dialogues dropped)",
        report.candidate,
        report.baseline,
        report.judge,
        report.rendered_percent(),
        report.wins,
        report.losses,
        report.ties,
        report.n,
        head_to_head.excluded.len() + judging.skipped.len(),
    );
    println!("artifacts: {}", dir.display());
    Ok(())
}
