use serde::{Deserialize, Serialize};

use super::PipelineConfig;
use crate::citations::{Citation, ValidationReport};

/// Summary text at one cascade level, in the global reference space.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryArtifact {
    pub text: String,
    /// 0 for batch summaries, 1 for the first combine, and so on.
    pub level: usize,
    pub source_batches: Vec<usize>,
    pub citations: Vec<Citation>,
    pub word_count: usize,
}

impl SummaryArtifact {
    pub fn new(text: String, level: usize, source_batches: Vec<usize>) -> Self {
        Self {
            citations: crate::citations::extract_citations(&text),
            word_count: crate::text::word_count(&text),
            text,
            level,
            source_batches,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Map,
    Reduce,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallRecord {
    pub stage: Stage,
    pub level: usize,
    pub source_batches: Vec<usize>,
    pub prompt_sha256: String,
    pub response_sha256: String,
    pub backend_id: String,
    pub cached: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HallucinationKind {
    /// A batch summary cited a local index the batch does not have.
    UnmappedLocal,
    /// A combined summary cited an index outside the corpus.
    OutOfRange,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HallucinationEvent {
    pub kind: HallucinationKind,
    pub level: usize,
    pub source_batches: Vec<usize>,
    /// The index exactly as the model wrote it.
    pub cited_index: usize,
}

/// A summary whose length fell outside what its prompt asked for.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetDeviation {
    pub level: usize,
    pub source_batches: Vec<usize>,
    pub words: usize,
    pub min_words: Option<usize>,
    pub max_words: usize,
    pub reprompted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub corpus_fingerprint: String,
    pub corpus_size: usize,
    pub device: String,
    pub field: String,
    pub config: PipelineConfig,
    pub template_fingerprint: String,
    pub batch_sizes: Vec<usize>,
    pub truncated_trials: Vec<String>,
    pub calls: Vec<CallRecord>,
    /// Backend invocations (cache misses) made by this run.
    pub llm_call_count: usize,
    pub cache_hits: usize,
    pub corrupt_cache_entries: Vec<String>,
    pub hallucination_events: Vec<HallucinationEvent>,
    pub budget_deviations: Vec<BudgetDeviation>,
    pub intermediate: Vec<SummaryArtifact>,
    pub final_summary: SummaryArtifact,
    pub validation: ValidationReport,
    pub reference_list: String,
}

impl RunRecord {
    /// Summary paragraph followed by its reference list.
    pub fn final_document(&self) -> String {
        let mut doc = self.final_summary.text.clone();
        doc.push_str("\n\nReferences:\n");
        doc.push_str(&self.reference_list);
        doc.push('\n');
        doc
    }

    pub fn cited_indices(&self) -> Vec<usize> {
        self.validation.unique_indices.iter().copied().collect()
    }
}
