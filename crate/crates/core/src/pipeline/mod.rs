//! The summarization cascade: batch → map → renumber → combine (repeated
//! while more than one summary remains) → validated final summary.

mod cache;
mod record;

use std::collections::BTreeSet;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub use cache::{
    cache_key, cached_complete, sha256_hex, CacheError, CachedCompleteError, CachedCompletion, ResponseCache,
};
pub use record::{
    BudgetDeviation, CallRecord, HallucinationEvent, HallucinationKind, RunRecord, Stage, SummaryArtifact,
};

use crate::batching::{budget_for_len, estimate_tokens, fit_batches, make_batches, Batch, BatchingError, BudgetPolicy};
use crate::citations::{remap_lenient, render_reference_list, strip_citations, validate, CitationError, CitationMap};
use crate::exec::Execution;
use crate::llm_backend::{Backend, BackendError, CompletionRequest, CompletionResponse, DEFAULT_MODEL};
use crate::prompting::{
    render_map_prompt, render_reduce_prompt, MapPromptInput, PromptError, PromptTemplates, ReducePromptInput,
    DEFAULT_AUDIENCE,
};
use crate::trial_model::Corpus;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid pipeline configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Batching(#[from] BatchingError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Citation(#[from] CitationError),
    #[error(transparent)]
    Cache(#[from] CacheError),
    /// Responses obtained before the failure remain in the cache, so a
    /// rerun resumes from where this one stopped.
    #[error("backend failed after {completed_calls} successful calls: {source}")]
    Backend {
        source: BackendError,
        completed_calls: usize,
    },
    #[error("cascade did not converge to one summary within {max_depth} combine levels")]
    CascadeDepthExceeded { max_depth: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub budget: BudgetPolicy,
    /// Most summaries combined by one call; `None` combines everything that
    /// fits the token limit in one prompt.
    pub reduce_fan_in: Option<usize>,
    pub max_cascade_depth: usize,
    /// Map-stage calls in flight at once.
    pub concurrency_limit: usize,
    /// Response cache location; `None` keeps responses in memory.
    pub cache_dir: Option<PathBuf>,
    pub model_id: String,
    pub temperature: f64,
    pub audience: String,
    pub execution: Execution,
    /// Re-issue a final combine whose length falls outside the requested
    /// range, once, with a corrective sentence appended.
    pub reprompt_out_of_range: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            budget: BudgetPolicy::default(),
            reduce_fan_in: None,
            max_cascade_depth: 4,
            concurrency_limit: 4,
            cache_dir: None,
            model_id: DEFAULT_MODEL.into(),
            temperature: 0.0,
            audience: DEFAULT_AUDIENCE.into(),
            execution: Execution::default(),
            reprompt_out_of_range: false,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        self.budget.validate()?;
        if self.max_cascade_depth == 0 {
            return Err(PipelineError::InvalidConfig(
                "max_cascade_depth must be at least 1".into(),
            ));
        }
        if self.concurrency_limit == 0 {
            return Err(PipelineError::InvalidConfig(
                "concurrency_limit must be at least 1".into(),
            ));
        }
        if matches!(self.reduce_fan_in, Some(f) if f < 2) {
            return Err(PipelineError::InvalidConfig("reduce_fan_in must be at least 2".into()));
        }
        if !(0.0..=1.0).contains(&self.temperature) {
            return Err(PipelineError::InvalidConfig("temperature must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Backend calls a run makes when no batch needs re-splitting:
/// one per batch plus one per combine.
pub fn expected_call_count(n_trials: usize, config: &PipelineConfig) -> usize {
    if n_trials == 0 {
        return 0;
    }
    let mut remaining = n_trials.div_ceil(config.budget.batch_size.max(1));
    let mut calls = remaining;
    let fan_in = config.reduce_fan_in.unwrap_or(usize::MAX);
    while remaining > 1 {
        let groups = remaining.div_ceil(fan_in);
        let singletons = usize::from(remaining % fan_in == 1);
        calls += groups - singletons;
        remaining = groups;
    }
    calls
}

/// Runs the cascade with the cache named by `config.cache_dir` and the
/// default templates.
pub fn summarize_corpus<B: Backend + ?Sized>(
    corpus: &Corpus,
    config: &PipelineConfig,
    backend: &B,
) -> Result<RunRecord, PipelineError> {
    let cache = match &config.cache_dir {
        Some(dir) => ResponseCache::on_disk(dir)?,
        None => ResponseCache::in_memory(),
    };
    Pipeline::new(config.clone(), PromptTemplates::default(), cache).run(corpus, backend)
}

/// Rebuilds a run from cached responses only; any cache miss fails.
pub fn replay(corpus: &Corpus, pipeline: &Pipeline) -> Result<RunRecord, PipelineError> {
    pipeline.run(corpus, &CacheOnly)
}

struct CacheOnly;

impl Backend for CacheOnly {
    fn id(&self) -> &str {
        "cache-only"
    }

    fn complete(&self, _: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        Err(BackendError::Config("cache miss during replay".into()))
    }
}

/// Per-call bookkeeping gathered while the cascade runs.
#[derive(Default)]
struct Ledger {
    calls: Vec<CallRecord>,
    corrupt: Vec<String>,
    hallucinations: Vec<HallucinationEvent>,
    deviations: Vec<BudgetDeviation>,
}

impl Ledger {
    fn backend_calls(&self) -> usize {
        self.calls.iter().filter(|c| !c.cached).count()
    }

    fn absorb(&mut self, other: Ledger) {
        self.calls.extend(other.calls);
        self.corrupt.extend(other.corrupt);
        self.hallucinations.extend(other.hallucinations);
        self.deviations.extend(other.deviations);
    }
}

pub struct Pipeline {
    config: PipelineConfig,
    templates: PromptTemplates,
    cache: ResponseCache,
}

impl Pipeline {
    pub fn new(config: PipelineConfig, templates: PromptTemplates, cache: ResponseCache) -> Self {
        Self {
            config,
            templates,
            cache,
        }
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn cache(&self) -> &ResponseCache {
        &self.cache
    }

    /// The batches a run would submit, after oversize re-splitting.
    pub fn plan_batches(&self, corpus: &Corpus) -> Result<Vec<Batch>, PipelineError> {
        let policy = &self.config.budget;
        let base = make_batches(corpus, policy)?;
        for b in &base {
            self.map_prompt(corpus, b)?;
        }
        let fitted = fit_batches(base, policy.token_limit, |b| {
            self.map_prompt(corpus, b).unwrap_or_default()
        })?;
        Ok(fitted)
    }

    fn map_prompt(&self, corpus: &Corpus, batch: &Batch) -> Result<String, PromptError> {
        let field = corpus.field.display_name();
        render_map_prompt(
            &MapPromptInput {
                device: &corpus.device,
                field_name: &field,
                batch,
                budget_words: budget_for_len(batch.len(), &self.config.budget),
                audience: &self.config.audience,
            },
            &self.templates,
        )
    }

    fn reduce_prompt(&self, corpus: &Corpus, group: &[SummaryArtifact]) -> Result<String, PipelineError> {
        let field = corpus.field.display_name();
        let cited: BTreeSet<usize> = group.iter().flat_map(|a| a.citations.iter().map(|c| c.index)).collect();
        let mut references = Vec::with_capacity(cited.len());
        for i in cited {
            let t = corpus.by_reference(i).ok_or(CitationError::InvalidIndex(i))?;
            references.push((i, t.title.as_str()));
        }
        let texts: Vec<&str> = group.iter().map(|a| a.text.as_str()).collect();
        Ok(render_reduce_prompt(
            &ReducePromptInput {
                device: &corpus.device,
                field_name: &field,
                summaries: &texts,
                references: &references,
                min_words: self.config.budget.combine_min_words,
                max_words: self.config.budget.combine_max_words,
                audience: &self.config.audience,
            },
            &self.templates,
        )?)
    }

    fn request(&self, prompt: String, budget_words: usize) -> CompletionRequest {
        CompletionRequest {
            model_id: self.config.model_id.clone(),
            prompt,
            temperature: self.config.temperature,
            max_output_tokens: 2 * budget_words,
        }
    }

    fn call<B: Backend + ?Sized>(
        &self,
        request: &CompletionRequest,
        backend: &B,
        stage: Stage,
        level: usize,
        source_batches: &[usize],
        ledger: &mut Ledger,
    ) -> Result<String, PipelineError> {
        let estimated = estimate_tokens(&request.prompt);
        let limit = self.config.budget.token_limit;
        let fail = |source, ledger: &Ledger| PipelineError::Backend {
            source,
            completed_calls: ledger.backend_calls(),
        };
        if estimated > limit {
            return Err(fail(BackendError::ContextOverflow { estimated, limit }, ledger));
        }
        let done = cached_complete(request, &self.cache, backend).map_err(|e| match e {
            CachedCompleteError::Backend(source) => fail(source, ledger),
            CachedCompleteError::Cache(c) => PipelineError::Cache(c),
        })?;
        if let Some(path) = done.recovered_corrupt {
            ledger.corrupt.push(path.display().to_string());
        }
        ledger.calls.push(CallRecord {
            stage,
            level,
            source_batches: source_batches.to_vec(),
            prompt_sha256: sha256_hex(request.prompt.as_bytes()),
            response_sha256: sha256_hex(done.response.text.as_bytes()),
            backend_id: done.response.backend_id.clone(),
            cached: done.hit,
        });
        Ok(done.response.text.trim().to_string())
    }

    fn map_one<B: Backend + ?Sized>(
        &self,
        corpus: &Corpus,
        batch: &Batch,
        backend: &B,
    ) -> Result<(SummaryArtifact, Ledger), PipelineError> {
        let mut ledger = Ledger::default();
        let budget = budget_for_len(batch.len(), &self.config.budget);
        let request = self.request(self.map_prompt(corpus, batch)?, budget);
        let raw = self.call(&request, backend, Stage::Map, 0, &[batch.ordinal], &mut ledger)?;
        let map = CitationMap::for_batch(batch.global_offset, batch.len());
        let (text, unmapped) = remap_lenient(&raw, &map);
        for c in unmapped {
            log::warn!(
                "batch {}: citation [{}] has no trial in the batch; stripped",
                batch.ordinal,
                c.index
            );
            ledger.hallucinations.push(HallucinationEvent {
                kind: HallucinationKind::UnmappedLocal,
                level: 0,
                source_batches: vec![batch.ordinal],
                cited_index: c.index,
            });
        }
        let artifact = SummaryArtifact::new(text, 0, vec![batch.ordinal]);
        if artifact.word_count > budget {
            ledger.deviations.push(BudgetDeviation {
                level: 0,
                source_batches: vec![batch.ordinal],
                words: artifact.word_count,
                min_words: None,
                max_words: budget,
                reprompted: false,
            });
        }
        Ok((artifact, ledger))
    }

    /// Strips citations outside `[1, corpus_size]`, recording each.
    fn strip_out_of_range(
        text: &str,
        corpus_size: usize,
        level: usize,
        sources: &[usize],
        ledger: &mut Ledger,
    ) -> String {
        let report = validate(text, corpus_size);
        if report.out_of_range.is_empty() {
            return text.to_string();
        }
        for c in &report.out_of_range {
            log::warn!(
                "combined summary cites [{}] outside a corpus of {corpus_size}; stripped",
                c.index
            );
            ledger.hallucinations.push(HallucinationEvent {
                kind: HallucinationKind::OutOfRange,
                level,
                source_batches: sources.to_vec(),
                cited_index: c.index,
            });
        }
        strip_citations(text, |i| i == 0 || i > corpus_size)
    }

    fn reduce_group<B: Backend + ?Sized>(
        &self,
        corpus: &Corpus,
        group: &[SummaryArtifact],
        level: usize,
        is_final: bool,
        backend: &B,
    ) -> Result<(SummaryArtifact, Ledger), PipelineError> {
        let mut ledger = Ledger::default();
        let policy = &self.config.budget;
        let sources: Vec<usize> = group.iter().flat_map(|a| a.source_batches.iter().copied()).collect();
        let prompt = self.reduce_prompt(corpus, group)?;
        let request = self.request(prompt, policy.combine_max_words);
        let raw = self.call(&request, backend, Stage::Reduce, level, &sources, &mut ledger)?;
        let mut text = Self::strip_out_of_range(&raw, corpus.len(), level, &sources, &mut ledger);
        let mut words = crate::text::word_count(&text);
        let in_range = |w: usize| (policy.combine_min_words..=policy.combine_max_words).contains(&w);
        let mut reprompted = false;
        if is_final && !in_range(words) && self.config.reprompt_out_of_range {
            let mut retry = request.clone();
            retry.prompt.push_str(&format!(
                "The previous answer had {words} words. Write between {} and {} words.\n",
                policy.combine_min_words, policy.combine_max_words
            ));
            let raw = self.call(&retry, backend, Stage::Reduce, level, &sources, &mut ledger)?;
            text = Self::strip_out_of_range(&raw, corpus.len(), level, &sources, &mut ledger);
            words = crate::text::word_count(&text);
            reprompted = true;
        }
        if !in_range(words) {
            ledger.deviations.push(BudgetDeviation {
                level,
                source_batches: sources.clone(),
                words,
                min_words: Some(policy.combine_min_words),
                max_words: policy.combine_max_words,
                reprompted,
            });
        }
        Ok((SummaryArtifact::new(text, level, sources), ledger))
    }

    /// Greedy, order-preserving grouping: a group grows while the combined
    /// prompt fits the token limit and the fan-in allows.
    fn group_for_reduce(
        &self,
        corpus: &Corpus,
        artifacts: &[SummaryArtifact],
    ) -> Result<Vec<std::ops::Range<usize>>, PipelineError> {
        let fan_in = self.config.reduce_fan_in.unwrap_or(usize::MAX);
        let limit = self.config.budget.token_limit;
        let mut groups = Vec::new();
        let mut start = 0;
        while start < artifacts.len() {
            let mut end = start + 1;
            while end < artifacts.len() && end - start < fan_in {
                let prompt = self.reduce_prompt(corpus, &artifacts[start..=end])?;
                if estimate_tokens(&prompt) > limit {
                    break;
                }
                end += 1;
            }
            groups.push(start..end);
            start = end;
        }
        Ok(groups)
    }

    pub fn run<B: Backend + ?Sized>(&self, corpus: &Corpus, backend: &B) -> Result<RunRecord, PipelineError> {
        self.config.validate()?;
        let batches = self.plan_batches(corpus)?;
        let mut ledger = Ledger::default();

        let mapped = self.config.execution.map(&batches, self.config.concurrency_limit, |b| {
            self.map_one(corpus, b, backend)
        });
        let mut current = Vec::with_capacity(mapped.len());
        let mut first_err = None;
        for result in mapped {
            match result {
                Ok((artifact, l)) => {
                    ledger.absorb(l);
                    current.push(artifact);
                }
                Err(e) => {
                    first_err.get_or_insert(e);
                }
            }
        }
        if let Some(mut e) = first_err {
            if let PipelineError::Backend { completed_calls, .. } = &mut e {
                *completed_calls = ledger.backend_calls();
            }
            return Err(e);
        }

        let mut intermediate = current.clone();
        let mut level = 0;
        while current.len() > 1 {
            level += 1;
            if level > self.config.max_cascade_depth {
                return Err(PipelineError::CascadeDepthExceeded {
                    max_depth: self.config.max_cascade_depth,
                });
            }
            let groups = self.group_for_reduce(corpus, &current)?;
            if groups.len() == current.len() {
                log::error!(
                    "no two summaries fit one combine prompt under {} tokens",
                    self.config.budget.token_limit
                );
                return Err(PipelineError::CascadeDepthExceeded {
                    max_depth: self.config.max_cascade_depth,
                });
            }
            let is_final = groups.len() == 1;
            let mut next = Vec::with_capacity(groups.len());
            for g in groups {
                if g.len() == 1 {
                    next.push(current[g.start].clone());
                    continue;
                }
                let (artifact, l) = self
                    .reduce_group(corpus, &current[g], level, is_final, backend)
                    .map_err(|e| match e {
                        PipelineError::Backend { source, .. } => PipelineError::Backend {
                            source,
                            completed_calls: ledger.backend_calls(),
                        },
                        other => other,
                    })?;
                ledger.absorb(l);
                intermediate.push(artifact.clone());
                next.push(artifact);
            }
            current = next;
        }
        let mut final_summary = current.pop().expect("map stage yields at least one summary");
        intermediate.pop();

        // Map outputs are already confined to the corpus by remapping; this
        // catches anything a combine step introduced.
        let cleaned = Self::strip_out_of_range(
            &final_summary.text,
            corpus.len(),
            level,
            &final_summary.source_batches,
            &mut ledger,
        );
        if cleaned != final_summary.text {
            final_summary = SummaryArtifact::new(cleaned, final_summary.level, final_summary.source_batches);
        }
        let validation = validate(&final_summary.text, corpus.len());
        let reference_list = render_reference_list(&validation.unique_indices, corpus)?;

        let cache_hits = ledger.calls.iter().filter(|c| c.cached).count();
        Ok(RunRecord {
            corpus_fingerprint: corpus_fingerprint(corpus),
            corpus_size: corpus.len(),
            device: corpus.device.clone(),
            field: corpus.field.key().to_string(),
            config: self.config.clone(),
            template_fingerprint: sha256_hex(
                format!("{}\u{0}{}", self.templates.map, self.templates.reduce).as_bytes(),
            ),
            batch_sizes: batches.iter().map(Batch::len).collect(),
            truncated_trials: batches.iter().flat_map(|b| b.truncated_ids.iter().cloned()).collect(),
            llm_call_count: ledger.backend_calls(),
            cache_hits,
            corrupt_cache_entries: ledger.corrupt,
            calls: ledger.calls,
            hallucination_events: ledger.hallucinations,
            budget_deviations: ledger.deviations,
            intermediate,
            final_summary,
            validation,
            reference_list,
        })
    }
}

/// SHA-256 over the corpus metadata and its trials in order.
pub fn corpus_fingerprint(corpus: &Corpus) -> String {
    let mut buf = Vec::new();
    buf.extend_from_slice(corpus.device.as_bytes());
    buf.push(0);
    buf.extend_from_slice(corpus.field.key().as_bytes());
    buf.push(0);
    buf.extend_from_slice(corpus.recency.to_string().as_bytes());
    for t in corpus.trials() {
        buf.push(b'\n');
        buf.extend_from_slice(&serde_json::to_vec(t).expect("trial serializes"));
    }
    sha256_hex(&buf)
}
