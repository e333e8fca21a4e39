//! Bracketed citation parsing, batch-to-corpus renumbering, validation and
//! reference-list rendering.
//!
//! A citation is exactly `[` digits `]`. Spans are byte offsets into the
//! source text. `[0]` is extracted (so validation can flag it) even though
//! valid references start at 1.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::text::CITATION_RE;
use crate::trial_model::Corpus;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Citation {
    pub index: usize,
    pub span: Range<usize>,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum CitationError {
    #[error("citation [{}] at {:?} has no mapping for this batch", .0.index, .0.span)]
    UnmappedIndex(Citation),
    #[error("reference index {0} is not in the corpus")]
    InvalidIndex(usize),
    #[error("citation map is not injective: globals {0} repeated")]
    NotInjective(usize),
    #[error("global index {global} outside corpus of {corpus_size}")]
    OutOfCorpus { global: usize, corpus_size: usize },
}

/// Every `[n]` token in order of appearance.
pub fn extract_citations(text: &str) -> Vec<Citation> {
    CITATION_RE
        .captures_iter(text)
        .map(|caps| {
            let whole = caps.get(0).expect("group 0");
            Citation {
                // Digit strings too long for usize are certainly out of range.
                index: caps[1].parse().unwrap_or(usize::MAX),
                span: whole.range(),
            }
        })
        .collect()
}

pub fn unique_indices(text: &str) -> BTreeSet<usize> {
    extract_citations(text).into_iter().map(|c| c.index).collect()
}

/// Injective map from batch-local to global reference indices.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CitationMap {
    mapping: BTreeMap<usize, usize>,
}

impl CitationMap {
    /// `local ↦ offset + local` for `local ∈ [1, len]`.
    pub fn for_batch(global_offset: usize, len: usize) -> Self {
        Self {
            mapping: (1..=len).map(|l| (l, global_offset + l)).collect(),
        }
    }

    /// Builds a map from explicit pairs, checking injectivity and that every
    /// global lies in `[1, corpus_size]`.
    pub fn from_pairs(
        pairs: impl IntoIterator<Item = (usize, usize)>,
        corpus_size: usize,
    ) -> Result<Self, CitationError> {
        let mapping: BTreeMap<usize, usize> = pairs.into_iter().collect();
        let mut seen = BTreeSet::new();
        for &g in mapping.values() {
            if g == 0 || g > corpus_size {
                return Err(CitationError::OutOfCorpus { global: g, corpus_size });
            }
            if !seen.insert(g) {
                return Err(CitationError::NotInjective(g));
            }
        }
        Ok(Self { mapping })
    }

    pub fn get(&self, local: usize) -> Option<usize> {
        self.mapping.get(&local).copied()
    }

    pub fn contains(&self, local: usize) -> bool {
        self.mapping.contains_key(&local)
    }

    pub fn len(&self) -> usize {
        self.mapping.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mapping.is_empty()
    }
}

/// Rewrites every `[local]` to `[global]`; all other bytes are untouched.
/// Fails on the first citation outside the map's domain.
pub fn remap_citations(text: &str, map: &CitationMap) -> Result<String, CitationError> {
    let mut out = String::with_capacity(text.len() + 8);
    let mut last = 0;
    for c in extract_citations(text) {
        let global = map
            .get(c.index)
            .ok_or_else(|| CitationError::UnmappedIndex(c.clone()))?;
        out.push_str(&text[last..c.span.start]);
        out.push('[');
        out.push_str(&global.to_string());
        out.push(']');
        last = c.span.end;
    }
    out.push_str(&text[last..]);
    Ok(out)
}

/// Like [`remap_citations`], but citations outside the map are stripped
/// and returned instead of failing.
pub fn remap_lenient(text: &str, map: &CitationMap) -> (String, Vec<Citation>) {
    let unmapped: Vec<Citation> = extract_citations(text)
        .into_iter()
        .filter(|c| !map.contains(c.index))
        .collect();
    let cleaned = strip_citations(text, |i| !map.contains(i));
    let remapped = remap_citations(&cleaned, map).expect("unmapped citations were stripped");
    (remapped, unmapped)
}

/// Removes citations whose index matches `drop`, together with one
/// whitespace character directly before each removed marker.
pub fn strip_citations(text: &str, drop: impl Fn(usize) -> bool) -> String {
    let mut out = String::with_capacity(text.len());
    let mut last = 0;
    for c in extract_citations(text) {
        if !drop(c.index) {
            continue;
        }
        let mut start = c.span.start;
        if start > last && text[..start].ends_with(|ch: char| ch.is_whitespace()) {
            start -= text[..start].chars().next_back().map_or(0, char::len_utf8);
        }
        out.push_str(&text[last..start]);
        last = c.span.end;
    }
    out.push_str(&text[last..]);
    out.trim_start().to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub total_citations: usize,
    pub unique_indices: BTreeSet<usize>,
    pub out_of_range: Vec<Citation>,
    /// Distinct valid indices cited, divided by corpus size.
    pub coverage_fraction: f64,
}

pub fn validate(text: &str, corpus_size: usize) -> ValidationReport {
    let citations = extract_citations(text);
    let unique: BTreeSet<usize> = citations.iter().map(|c| c.index).collect();
    let in_range = |i: usize| i >= 1 && i <= corpus_size;
    let valid = unique.iter().filter(|&&i| in_range(i)).count();
    ValidationReport {
        total_citations: citations.len(),
        out_of_range: citations.iter().filter(|c| !in_range(c.index)).cloned().collect(),
        unique_indices: unique,
        coverage_fraction: if corpus_size == 0 {
            0.0
        } else {
            valid as f64 / corpus_size as f64
        },
    }
}

/// One line per index, ascending: `[i] {title} ({registry id})`.
pub fn render_reference_list(indices: &BTreeSet<usize>, corpus: &Corpus) -> Result<String, CitationError> {
    let mut lines = Vec::with_capacity(indices.len());
    for &i in indices {
        let t = corpus.by_reference(i).ok_or(CitationError::InvalidIndex(i))?;
        lines.push(format!("[{i}] {} ({})", t.title.trim(), t.id));
    }
    Ok(lines.join("\n"))
}
