//! Evaluation surface: SMOG readability, reference utilization, length
//! statistics, two-sample t-tests, least-squares fits and ROUGE-L.

pub mod readability;
pub mod rouge;
pub mod stats;

use serde::{Deserialize, Serialize};

pub use readability::{count_syllables, smog, smog_of, text_stats, TextStats};
pub use rouge::{lcs_len, rouge_l, rouge_l_f1, rouge_l_texts, tokenize, RougeL};
pub use stats::{
    linear_fit, pooled_t_test, summarize_distribution, t_test, welch_t_test, RegressionResult, SummaryStats,
    TTestResult, TTestVariant,
};

use crate::citations::validate;
use crate::exec::Execution;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("text has no words")]
    EmptyText,
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
}

/// One text to evaluate. `corpus_size` enables utilization and citation
/// range checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryInput {
    pub name: String,
    pub text: String,
    pub corpus_size: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryMetrics {
    pub name: String,
    pub words: usize,
    pub text_stats: TextStats,
    pub smog: f64,
    pub total_citations: usize,
    pub unique_citations: usize,
    pub max_citation: Option<usize>,
    pub corpus_size: Option<usize>,
    /// Fraction of the corpus cited at least once.
    pub utilization: Option<f64>,
    pub out_of_range_citations: Vec<usize>,
}

pub fn evaluate_summary(input: &SummaryInput) -> Result<SummaryMetrics, MetricsError> {
    let stats = text_stats(&input.text)?;
    let report = validate(&input.text, input.corpus_size.unwrap_or(usize::MAX));
    Ok(SummaryMetrics {
        name: input.name.clone(),
        words: crate::text::word_count(&input.text),
        text_stats: stats,
        smog: smog(&stats),
        total_citations: report.total_citations,
        unique_citations: report.unique_indices.len(),
        max_citation: report.unique_indices.last().copied(),
        corpus_size: input.corpus_size,
        utilization: input.corpus_size.map(|_| report.coverage_fraction),
        out_of_range_citations: report.out_of_range.iter().map(|c| c.index).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub summaries: Vec<SummaryMetrics>,
    pub word_counts: SummaryStats,
    pub smog: SummaryStats,
    pub utilization: Option<SummaryStats>,
    /// SMOG of a comparison corpus (e.g. the source descriptions) against
    /// the summaries.
    pub smog_t_test: Option<TTestResult>,
    /// Unique citations regressed on corpus size.
    pub inclusion_fit: Option<RegressionResult>,
}

#[derive(Debug, Clone, Default)]
pub struct ReportOptions {
    pub execution: Execution,
    pub threads: usize,
    /// Texts whose SMOG distribution is compared with the summaries'.
    pub baseline_texts: Vec<String>,
    pub t_test: TTestVariant,
}

pub fn evaluate(inputs: &[SummaryInput], options: &ReportOptions) -> Result<MetricsReport, MetricsError> {
    if inputs.is_empty() {
        return Err(MetricsError::EmptyInput("no summaries to evaluate".into()));
    }
    let threads = options.threads.max(1);
    let summaries = options
        .execution
        .map(inputs, threads, evaluate_summary)
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    let words: Vec<f64> = summaries.iter().map(|s| s.words as f64).collect();
    let smogs: Vec<f64> = summaries.iter().map(|s| s.smog).collect();
    let utilizations: Vec<f64> = summaries.iter().filter_map(|s| s.utilization).collect();
    let utilization = if utilizations.is_empty() {
        None
    } else {
        Some(summarize_distribution(&utilizations)?)
    };
    let smog_stats = summarize_distribution(&smogs)?;

    let smog_t_test = if options.baseline_texts.is_empty() {
        None
    } else {
        let baseline = options
            .execution
            .map(&options.baseline_texts, threads, |t| smog_of(t))
            .into_iter()
            .collect::<Result<Vec<_>, _>>()?;
        let b = summarize_distribution(&baseline)?;
        t_test(
            options.t_test,
            b.mean,
            b.std,
            b.n,
            smog_stats.mean,
            smog_stats.std,
            smog_stats.n,
        )
        .ok()
    };

    let points: Vec<(f64, f64)> = summaries
        .iter()
        .filter_map(|s| s.corpus_size.map(|n| (n as f64, s.unique_citations as f64)))
        .collect();
    let inclusion_fit = linear_fit(&points).ok();

    Ok(MetricsReport {
        summaries,
        word_counts: summarize_distribution(&words)?,
        smog: smog_stats,
        utilization,
        smog_t_test,
        inclusion_fit,
    })
}

/// SMOG of every text, in order.
pub fn batch_smog(texts: &[String], execution: Execution, threads: usize) -> Result<Vec<f64>, MetricsError> {
    execution
        .map(texts, threads.max(1), |t| smog_of(t))
        .into_iter()
        .collect()
}
