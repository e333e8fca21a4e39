//! ROUGE-L: longest-common-subsequence overlap between two token sequences.

use serde::{Deserialize, Serialize};

use super::MetricsError;

/// Lowercases, deletes punctuation and splits on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|t| {
            t.chars()
                .filter(|c| c.is_alphanumeric())
                .flat_map(char::to_lowercase)
                .collect::<String>()
        })
        .filter(|t| !t.is_empty())
        .collect()
}

pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let mut prev = vec![0usize; short.len() + 1];
    let mut row = vec![0usize; short.len() + 1];
    for x in long {
        for (j, y) in short.iter().enumerate() {
            row[j + 1] = if x == y { prev[j] + 1 } else { row[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut row);
    }
    prev[short.len()]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RougeL {
    pub lcs: usize,
    pub recall: f64,
    pub precision: f64,
    pub f_score: f64,
    pub beta: f64,
}

pub fn rouge_l<T: PartialEq>(reference: &[T], candidate: &[T], beta: f64) -> Result<RougeL, MetricsError> {
    if reference.is_empty() || candidate.is_empty() {
        return Err(MetricsError::EmptyInput(
            "ROUGE-L needs non-empty reference and candidate".into(),
        ));
    }
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(MetricsError::DegenerateInput("beta must be positive".into()));
    }
    let lcs = lcs_len(reference, candidate);
    let recall = lcs as f64 / reference.len() as f64;
    let precision = lcs as f64 / candidate.len() as f64;
    let b2 = beta * beta;
    let f_score = if lcs == 0 {
        0.0
    } else {
        (1.0 + b2) * recall * precision / (recall + b2 * precision)
    };
    Ok(RougeL {
        lcs,
        recall,
        precision,
        f_score,
        beta,
    })
}

pub fn rouge_l_f1<T: PartialEq>(reference: &[T], candidate: &[T], beta: f64) -> Result<f64, MetricsError> {
    rouge_l(reference, candidate, beta).map(|r| r.f_score)
}

/// ROUGE-L with β = 1 over two raw texts.
pub fn rouge_l_texts(reference: &str, candidate: &str) -> Result<RougeL, MetricsError> {
    rouge_l(&tokenize(reference), &tokenize(candidate), 1.0)
}
