//! Pipeline toolkit for distilling empathetic-response capability from teacher
//! LLMs into fine-tuning-ready datasets.
//!
//! The toolkit covers the full loop:
//!
//! - [`corpus`] loads and summarizes scored dialogue corpora (one dialogue
//!   context, one human response, several model responses, 1-3 empathy scores).
//! - [`partition`] splits dialogues into SFT / preference / test sets by score
//!   rules, combines per-teacher partitions, and does seeded ratio splits.
//! - [`prompt`] renders the eight prompting modes (direct generation, naive
//!   improvement, the targeted empathy-improvement strategies, and the judge
//!   prompt) from external template files, byte for byte.
//! - [`gateway`] is a uniform chat-completions client with retries, rate
//!   limiting, content-addressed response caching, and a deterministic replay
//!   provider for offline runs.
//! - [`distill`] orchestrates the three distillation methods end to end.
//! - [`export`] writes SFT/preference/test record files and training configs
//!   for an external trainer.
//! - [`eval`] runs the head-to-head LLM-judge win-rate protocol with
//!   position-bias mitigation.
//! - [`cli`] wires everything into one reproducible command-line front end.
//!
//! Each capability has a runnable example under `examples/`; all of them run
//! offline against scripted replay providers.

pub mod cli;
pub mod corpus;
pub mod distill;
pub mod eval;
pub mod export;
pub mod gateway;
pub mod partition;
pub mod prompt;
mod util;

pub use corpus::{Corpus, DialogueContext, DialogueRecord, EmpathyScore, ResponderId, ScoredResponse};
pub use gateway::{CompletionRequest, CompletionResult, Gateway, ProviderConfig};
pub use partition::{DatasetPartition, PreferencePair, SftExample, SplitClass, SplitRatio};
pub use prompt::{PromptStrategy, RenderedPrompt, TemplateSet};
