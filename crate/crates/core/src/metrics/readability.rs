//! Sentence/word/syllable statistics and the SMOG grade.

use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::text::{split_sentences, strip_citation_markers};

pub const SMOG_INTERCEPT: f64 = 3.1291;
pub const SMOG_SLOPE: f64 = 1.0430;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextStats {
    pub sentences: usize,
    pub words: usize,
    /// Words of three or more syllables.
    pub polysyllables: usize,
}

/// Vowel-group syllable estimate. Each maximal run of `aeiouy` counts once,
/// a final silent `e` is dropped unless that leaves zero, and every word
/// has at least one syllable. Non-letters are ignored.
pub fn count_syllables(word: &str) -> usize {
    let letters: Vec<char> = word
        .chars()
        .filter(char::is_ascii_alphabetic)
        .map(|c| c.to_ascii_lowercase())
        .collect();
    let is_vowel = |c: char| matches!(c, 'a' | 'e' | 'i' | 'o' | 'u' | 'y');
    let mut groups = 0;
    let mut prev_vowel = false;
    for &c in &letters {
        let v = is_vowel(c);
        if v && !prev_vowel {
            groups += 1;
        }
        prev_vowel = v;
    }
    if letters.last() == Some(&'e') && groups > 1 {
        // only a lone trailing `e` forms its own group
        let before = letters.len().checked_sub(2).map(|i| letters[i]);
        if before.is_some_and(|c| !is_vowel(c)) {
            groups -= 1;
        }
    }
    groups.max(1)
}

/// Statistics over `text` with citation markers removed. Words are
/// whitespace tokens carrying at least one alphanumeric character.
pub fn text_stats(text: &str) -> Result<TextStats, MetricsError> {
    let clean = strip_citation_markers(text);
    let words: Vec<&str> = clean
        .split_whitespace()
        .filter(|t| t.chars().any(char::is_alphanumeric))
        .collect();
    if words.is_empty() {
        return Err(MetricsError::EmptyText);
    }
    let sentences = split_sentences(&clean)
        .into_iter()
        .filter(|s| s.chars().any(char::is_alphanumeric))
        .count()
        .max(1);
    let polysyllables = words.iter().filter(|w| count_syllables(w) >= 3).count();
    Ok(TextStats {
        sentences,
        words: words.len(),
        polysyllables,
    })
}

/// SMOG grade, unrounded.
pub fn smog(stats: &TextStats) -> f64 {
    let sentences = stats.sentences.max(1) as f64;
    SMOG_INTERCEPT + SMOG_SLOPE * (stats.polysyllables as f64 * 30.0 / sentences).sqrt()
}

pub fn smog_of(text: &str) -> Result<f64, MetricsError> {
    text_stats(text).map(|s| smog(&s))
}
