//! Shared text utilities: citation-marker handling, word counting and
//! sentence splitting.

use std::sync::LazyLock;

use regex::Regex;

/// A bracketed decimal reference such as `[12]`.
pub(crate) static CITATION_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\[(\d+)\]").expect("static regex"));

/// Abbreviations whose trailing period does not end a sentence.
/// Compared case-insensitively against the token that carries the period.
const ABBREVIATIONS: &[&str] = &[
    "e.g.", "i.e.", "etc.", "vs.", "al.", "approx.", "dr.", "mr.", "mrs.", "ms.", "prof.", "no.", "fig.", "figs.",
    "u.s.", "u.k.", "st.", "jr.", "sr.", "inc.", "ltd.", "co.", "min.", "max.", "mg.", "ca.", "cf.", "resp.", "dept.",
    "est.", "jan.", "feb.", "mar.", "apr.", "jun.", "jul.", "aug.", "sep.", "sept.", "oct.", "nov.", "dec.",
];

/// Removes every `[n]` marker, leaving all other characters in place.
pub fn strip_citation_markers(text: &str) -> String {
    CITATION_RE.replace_all(text, "").into_owned()
}

/// Word count as a reader would see it: whitespace-delimited tokens of the
/// text as written, where a token must carry at least one alphanumeric
/// character. A reference written as its own token (`[5]`) counts as a word.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace()
        .filter(|t| t.chars().any(char::is_alphanumeric))
        .count()
}

/// Word tokens with citation markers stripped first.
pub fn content_words(text: &str) -> Vec<&str> {
    // Markers are removed token-wise so the borrowed slices stay valid.
    text.split_whitespace()
        .filter(|t| !is_citation_token(t))
        .filter(|t| t.chars().any(char::is_alphanumeric))
        .collect()
}

/// True when the token is nothing but citation markers and punctuation.
fn is_citation_token(token: &str) -> bool {
    if !CITATION_RE.is_match(token) {
        return false;
    }
    !CITATION_RE.replace_all(token, "").chars().any(char::is_alphanumeric)
}

/// Collapses every whitespace run (including newlines) to one space.
pub fn collapse_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Splits text into sentences. A sentence ends at `.`, `!` or `?` followed
/// by whitespace or end of text, unless the token ending in `.` is a known
/// abbreviation or a single capital initial. Trailing closing quotes and
/// brackets stay with their sentence.
pub fn split_sentences(text: &str) -> Vec<&str> {
    let mut sentences = Vec::new();
    let bytes = text.as_bytes();
    let mut start = 0;
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        if matches!(b, b'.' | b'!' | b'?') {
            let mut end = i + 1;
            while end < bytes.len() && matches!(bytes[end], b'"' | b'\'' | b')' | b']') {
                end += 1;
            }
            let at_boundary = end == bytes.len() || bytes[end].is_ascii_whitespace();
            if at_boundary && !(b == b'.' && ends_with_abbreviation(&text[start..i + 1])) {
                let s = text[start..end].trim();
                if !s.is_empty() {
                    sentences.push(s);
                }
                start = end;
            }
            i = end;
        } else {
            i += 1;
        }
    }
    let tail = text[start..].trim();
    if !tail.is_empty() {
        sentences.push(tail);
    }
    sentences
}

fn ends_with_abbreviation(fragment: &str) -> bool {
    let last = fragment
        .rsplit(|c: char| c.is_whitespace() || c == '(')
        .next()
        .unwrap_or("");
    let lower = last.to_lowercase();
    if ABBREVIATIONS.contains(&lower.as_str()) {
        return true;
    }
    // Single initials such as "J." in "J. Smith".
    let mut chars = last.chars();
    matches!((chars.next(), chars.next(), chars.next()), (Some(c), Some('.'), None) if c.is_uppercase())
}

/// First sentence of a text, or the whole trimmed text when it has no
/// terminator.
pub fn first_sentence(text: &str) -> &str {
    split_sentences(text).into_iter().next().unwrap_or("")
}

/// Replaces runs of three or more backticks so inserted content can never
/// close a prompt fence.
pub(crate) fn neutralize_fences(text: &str) -> String {
    static FENCE_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"`{3,}").expect("static regex"));
    FENCE_RE
        .replace_all(text, |caps: &regex::Captures<'_>| "'".repeat(caps[0].len()))
        .into_owned()
}
