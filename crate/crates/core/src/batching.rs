//! Token estimation, fixed-size batching and per-batch word budgets.

use serde::{Deserialize, Serialize};

use crate::text::split_sentences;
use crate::trial_model::{Corpus, Trial};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum BatchingError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("invalid budget policy: {0}")]
    InvalidPolicy(String),
    #[error("trial {0} cannot fit the token limit even when truncated to its title")]
    TrialTooLarge(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BudgetPolicy {
    pub batch_size: usize,
    pub words_per_trial: usize,
    pub full_batch_words: usize,
    pub combine_min_words: usize,
    pub combine_max_words: usize,
    pub token_limit: usize,
}

impl Default for BudgetPolicy {
    fn default() -> Self {
        Self {
            batch_size: 15,
            words_per_trial: 13,
            full_batch_words: 200,
            combine_min_words: 150,
            combine_max_words: 250,
            token_limit: 4096,
        }
    }
}

impl BudgetPolicy {
    pub fn validate(&self) -> Result<(), BatchingError> {
        let bad = |m: &str| Err(BatchingError::InvalidPolicy(m.into()));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.combine_min_words >= self.combine_max_words {
            return bad("combine_min_words must be below combine_max_words");
        }
        if self.words_per_trial * self.batch_size > self.full_batch_words + 5 {
            return bad("words_per_trial * batch_size exceeds full_batch_words + 5");
        }
        if self.token_limit == 0 {
            return bad("token_limit must be positive");
        }
        Ok(())
    }
}

/// `ceil(chars / 4)`, counted in Unicode scalar values.
pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub ordinal: usize,
    pub trials: Vec<Trial>,
    /// 0-based corpus index of the first trial.
    pub global_offset: usize,
    /// Trials whose description was shortened to fit the token limit.
    pub truncated_ids: Vec<String>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }
}

pub fn make_batches(corpus: &Corpus, policy: &BudgetPolicy) -> Result<Vec<Batch>, BatchingError> {
    partition(corpus.trials(), policy.batch_size)
}

/// Splits trials into consecutive chunks of `batch_size`; only the last
/// chunk may be shorter.
pub fn partition(trials: &[Trial], batch_size: usize) -> Result<Vec<Batch>, BatchingError> {
    if trials.is_empty() {
        return Err(BatchingError::EmptyCorpus);
    }
    if batch_size == 0 {
        return Err(BatchingError::InvalidPolicy("batch_size must be at least 1".into()));
    }
    Ok(trials
        .chunks(batch_size)
        .enumerate()
        .map(|(ordinal, chunk)| Batch {
            ordinal,
            trials: chunk.to_vec(),
            global_offset: ordinal * batch_size,
            truncated_ids: Vec::new(),
        })
        .collect())
}

/// Full batches get `full_batch_words`; anything smaller gets
/// `words_per_trial` per trial.
pub fn word_budget(batch: &Batch, policy: &BudgetPolicy) -> usize {
    budget_for_len(batch.len(), policy)
}

pub fn budget_for_len(len: usize, policy: &BudgetPolicy) -> usize {
    if len == policy.batch_size {
        policy.full_batch_words
    } else {
        policy.words_per_trial * len
    }
}

/// Re-splits batches whose rendered prompt exceeds the token limit.
///
/// An oversize batch is halved (first half takes the extra trial) until
/// every part fits. A lone trial that still does not fit has its
/// description cut back sentence by sentence, then word by word; its id is
/// recorded in [`Batch::truncated_ids`]. Ordinals are renumbered in order
/// and offsets stay contiguous.
pub fn fit_batches<F>(batches: Vec<Batch>, token_limit: usize, render: F) -> Result<Vec<Batch>, BatchingError>
where
    F: Fn(&Batch) -> String,
{
    let mut out = Vec::with_capacity(batches.len());
    for batch in batches {
        split_until_fits(batch, token_limit, &render, &mut out)?;
    }
    for (ordinal, b) in out.iter_mut().enumerate() {
        b.ordinal = ordinal;
    }
    Ok(out)
}

fn split_until_fits<F>(batch: Batch, limit: usize, render: &F, out: &mut Vec<Batch>) -> Result<(), BatchingError>
where
    F: Fn(&Batch) -> String,
{
    if estimate_tokens(&render(&batch)) <= limit {
        out.push(batch);
        return Ok(());
    }
    if batch.len() > 1 {
        let mid = batch.len().div_ceil(2);
        let mut first = batch;
        let rest = first.trials.split_off(mid);
        let second = Batch {
            ordinal: first.ordinal,
            global_offset: first.global_offset + mid,
            truncated_ids: Vec::new(),
            trials: rest,
        };
        first.truncated_ids.clear();
        split_until_fits(first, limit, render, out)?;
        return split_until_fits(second, limit, render, out);
    }
    out.push(truncate_single(batch, limit, render)?);
    Ok(())
}

fn truncate_single<F>(mut batch: Batch, limit: usize, render: &F) -> Result<Batch, BatchingError>
where
    F: Fn(&Batch) -> String,
{
    let id = batch.trials[0].id.clone();
    let original = batch.trials[0].brief_summary.clone();
    let sentences = split_sentences(&original);
    let fits = |b: &Batch| estimate_tokens(&render(b)) <= limit;

    batch.truncated_ids = vec![id.clone()];
    for keep in (1..sentences.len()).rev() {
        batch.trials[0].brief_summary = sentences[..keep].join(" ");
        if fits(&batch) {
            return Ok(batch);
        }
    }
    // First sentence alone is still too long: fall back to whole words.
    let words: Vec<&str> = sentences.first().copied().unwrap_or("").split_whitespace().collect();
    let (mut lo, mut hi) = (0usize, words.len());
    while lo < hi {
        let mid = (lo + hi).div_ceil(2);
        batch.trials[0].brief_summary = words[..mid].join(" ");
        if fits(&batch) {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    if lo == 0 {
        return Err(BatchingError::TrialTooLarge(id));
    }
    batch.trials[0].brief_summary = words[..lo].join(" ");
    Ok(batch)
}
