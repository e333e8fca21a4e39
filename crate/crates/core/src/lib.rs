//! Cascading map/reduce summarization of clinical-trial registry records.
//!
//! A corpus of trials is split into fixed-size batches, each batch is
//! summarized by a chat-completion backend with bracketed references, the
//! batch-local references are renumbered into the corpus index space, and
//! the intermediate summaries are combined until a single referenced
//! summary remains. The [`metrics`] module carries the evaluation surface
//! (SMOG readability, reference utilization, t-tests, regression, ROUGE-L).
//!
//! ```no_run
//! use trial_digest::prelude::*;
//!
//! # fn main() -> Result<(), Box<dyn std::error::Error>> {
//! let corpus = trial_digest::ingest::load_corpus("trials.jsonl")?;
//! let backend = MockBackend::new();
//! let record = summarize_corpus(&corpus, &PipelineConfig::default(), &backend)?;
//! println!("{}", record.final_document());
//! # Ok(())
//! # }
//! ```

pub mod batching;
pub mod citations;
pub mod exec;
pub mod ingest;
pub mod llm_backend;
pub mod metrics;
pub mod pipeline;
pub mod prompting;
pub mod retry;
pub mod text;
pub mod trial_model;

pub mod prelude {
    pub use crate::batching::{make_batches, word_budget, Batch, BudgetPolicy};
    pub use crate::citations::{extract_citations, validate, Citation, CitationMap};
    pub use crate::exec::Execution;
    pub use crate::llm_backend::{Backend, CompletionRequest, CompletionResponse, HttpBackend, MockBackend};
    pub use crate::pipeline::{expected_call_count, summarize_corpus, PipelineConfig, ResponseCache, RunRecord};
    pub use crate::trial_model::{
        classify_recency, filter_trials, Corpus, MedicalField, RecencyClass, Trial, TrialStatus,
    };
}
