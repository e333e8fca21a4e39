//! Deterministic extractive stand-in for a chat model.
//!
//! The mock reads the word budget and the fenced payload back out of a
//! prompt rendered from the default templates. For a map prompt it emits
//! the first sentence of each trial description followed by that trial's
//! reference; for a combine prompt it re-emits sentences from the
//! intermediate summaries, round-robin across paragraphs, keeping their
//! references. It never cites an index that is not in its prompt.

use std::sync::LazyLock;
use std::time::Duration;

use regex::Regex;

use super::{Backend, BackendError, CompletionRequest, CompletionResponse};
use crate::batching::estimate_tokens;
use crate::citations::extract_citations;
use crate::text::{content_words, first_sentence, split_sentences};

static MAP_BUDGET_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"Write a (\d+) word thesis").expect("static regex"));
static REDUCE_BUDGET_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"Write a (\d+)-(\d+)-word thesis").expect("static regex"));
static ENTRY_HEAD_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^(\d+)\. ").expect("static regex"));

#[derive(Debug, Clone, Default)]
pub struct MockBackend {
    delay: Duration,
}

impl MockBackend {
    pub fn new() -> Self {
        Self::default()
    }

    /// Sleeps for `delay` on every call to imitate network latency.
    pub fn with_latency(delay: Duration) -> Self {
        Self { delay }
    }
}

impl Backend for MockBackend {
    fn id(&self) -> &str {
        "mock"
    }

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        request.validate()?;
        if !self.delay.is_zero() {
            std::thread::sleep(self.delay);
        }
        let text = mock_complete(&request.prompt)?;
        Ok(CompletionResponse {
            input_tokens: estimate_tokens(&request.prompt),
            output_tokens: estimate_tokens(&text),
            text,
            backend_id: self.id().to_string(),
            latency_ms: self.delay.as_millis() as u64,
        })
    }
}

/// One output sentence: its words and the references that close it.
struct Piece {
    words: Vec<String>,
    citations: Vec<usize>,
}

impl Piece {
    fn from_sentence(sentence: &str, citations: Vec<usize>) -> Self {
        let mut words: Vec<String> = content_words(sentence).into_iter().map(String::from).collect();
        if let Some(last) = words.last_mut() {
            let trimmed = last.trim_end_matches(['.', '!', '?', ',', ';', ':']).to_string();
            *last = trimmed;
        }
        words.retain(|w| !w.is_empty());
        Self { words, citations }
    }

    /// Caps the piece at `cap` words counting each citation as one word,
    /// keeping at least one content word and every citation.
    fn capped(mut self, cap: usize) -> Self {
        let room = cap.saturating_sub(self.citations.len()).max(1);
        self.words.truncate(room);
        self
    }

    fn word_count(&self) -> usize {
        self.words.len() + self.citations.len()
    }

    fn render(&self) -> String {
        let mut s = self.words.join(" ");
        for c in &self.citations {
            s.push_str(&format!(" [{c}]"));
        }
        s.push('.');
        s
    }
}

/// The deterministic completion for a prompt rendered from the default
/// templates.
pub fn mock_complete(prompt: &str) -> Result<String, BackendError> {
    if let Some(caps) = REDUCE_BUDGET_RE.captures(prompt) {
        let max: usize = parse_num(&caps[2])?;
        let block = fenced_block(prompt, "Summary: ```\n")?;
        let paragraphs: Vec<Vec<Piece>> = block
            .split("\n\n")
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(|p| {
                split_sentences(p)
                    .into_iter()
                    .map(|s| {
                        let cites = extract_citations(s).into_iter().map(|c| c.index).collect();
                        Piece::from_sentence(s, cites)
                    })
                    .filter(|piece| !piece.words.is_empty())
                    .collect()
            })
            .collect();
        if paragraphs.is_empty() {
            return Err(BackendError::UnparseablePrompt("empty Summary block".into()));
        }
        let cap = max / paragraphs.len().div_ceil(2);
        let depth = paragraphs.iter().map(Vec::len).max().unwrap_or(0);
        let mut ordered = Vec::new();
        let mut paragraphs: Vec<_> = paragraphs.into_iter().map(Vec::into_iter).collect();
        for _ in 0..depth {
            for p in paragraphs.iter_mut() {
                if let Some(piece) = p.next() {
                    ordered.push(piece.capped(cap));
                }
            }
        }
        return Ok(assemble(ordered, max));
    }

    let caps = MAP_BUDGET_RE
        .captures(prompt)
        .ok_or_else(|| BackendError::UnparseablePrompt("no word budget instruction".into()))?;
    let budget: usize = parse_num(&caps[1])?;
    let block = fenced_block(prompt, "Trials: ```\n")?;
    let mut pieces = Vec::new();
    for entry in block.split("\n\n").filter(|e| !e.trim().is_empty()) {
        let (head, description) = entry.split_once('\n').unwrap_or((entry, ""));
        let index: usize = ENTRY_HEAD_RE
            .captures(head)
            .ok_or_else(|| BackendError::UnparseablePrompt(format!("trial entry without index: {head:?}")))
            .and_then(|c| parse_num(&c[1]))?;
        let sentence = match first_sentence(description) {
            "" => head.trim(),
            s => s,
        };
        pieces.push(Piece::from_sentence(sentence, vec![index]));
    }
    if pieces.is_empty() {
        return Err(BackendError::UnparseablePrompt("no trials in the Trials block".into()));
    }
    let cap = (budget / pieces.len().div_ceil(2)).max(2);
    let pieces = pieces.into_iter().map(|p| p.capped(cap)).collect();
    Ok(assemble(pieces, budget))
}

/// Concatenates whole pieces until the next one would exceed `budget`.
/// The first piece is always emitted.
fn assemble(pieces: Vec<Piece>, budget: usize) -> String {
    let mut out: Vec<String> = Vec::new();
    let mut used = 0;
    for piece in pieces {
        let n = piece.word_count();
        if !out.is_empty() && used + n > budget {
            break;
        }
        used += n;
        out.push(piece.render());
    }
    out.join(" ")
}

fn fenced_block<'a>(prompt: &'a str, opener: &str) -> Result<&'a str, BackendError> {
    let start = prompt
        .find(opener)
        .map(|i| i + opener.len())
        .ok_or_else(|| BackendError::UnparseablePrompt(format!("missing `{}` fence", opener.trim_end())))?;
    let rest = &prompt[start..];
    let end = rest
        .find("\n```")
        .ok_or_else(|| BackendError::UnparseablePrompt("unterminated fence".into()))?;
    Ok(&rest[..end])
}

fn parse_num(s: &str) -> Result<usize, BackendError> {
    s.parse()
        .map_err(|_| BackendError::UnparseablePrompt(format!("bad number {s:?}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::batching::Batch;
    use crate::prompting::{
        render_map_prompt, render_reduce_prompt, MapPromptInput, PromptTemplates, ReducePromptInput,
    };
    use crate::text::word_count;
    use crate::trial_model::Trial;

    fn map_prompt(descs: &[&str], budget: usize) -> String {
        let batch = Batch {
            ordinal: 0,
            global_offset: 0,
            truncated_ids: vec![],
            trials: descs
                .iter()
                .enumerate()
                .map(|(i, d)| Trial::new(format!("NCT{i}"), format!("Title {i}"), *d))
                .collect(),
        };
        render_map_prompt(
            &MapPromptInput {
                device: "Fitbit",
                field_name: "oncology",
                batch: &batch,
                budget_words: budget,
                audience: "x",
            },
            &PromptTemplates::default(),
        )
        .unwrap()
    }

    #[test]
    fn three_trial_map() {
        let p = map_prompt(
            &[
                "Walking improves mood in survivors. Extra detail follows.",
                "Sleep tracking guides therapy. More.",
                "Heart rate predicts relapse risk.",
            ],
            39,
        );
        let out = mock_complete(&p).unwrap();
        assert_eq!(
            out,
            "Walking improves mood in survivors [1]. Sleep tracking guides therapy [2]. Heart rate predicts relapse risk [3]."
        );
        assert!(word_count(&out) <= 39);
    }

    #[test]
    fn single_long_sentence_truncated() {
        let p = map_prompt(
            &["one two three four five six seven eight nine ten eleven twelve thirteen fourteen fifteen."],
            13,
        );
        let out = mock_complete(&p).unwrap();
        assert_eq!(
            out,
            "one two three four five six seven eight nine ten eleven twelve [1]."
        );
        assert_eq!(word_count(&out), 13);
    }

    #[test]
    fn cites_at_least_half() {
        let long = "word ".repeat(40) + "end.";
        let descs: Vec<&str> = std::iter::repeat_n(long.as_str(), 15).collect();
        let out = mock_complete(&map_prompt(&descs, 200)).unwrap();
        let cited = crate::citations::unique_indices(&out);
        assert!(cited.len() >= 8, "{cited:?}");
        assert!(word_count(&out) <= 200);
    }

    #[test]
    fn reduce_never_invents_citations() {
        let summaries = [
            "Fitbit helps sleep [1]. It also helps mood [2].",
            "Fitbit supports walking [16].",
        ];
        let refs = [(1, "a"), (2, "b"), (16, "c")];
        let p = render_reduce_prompt(
            &ReducePromptInput {
                device: "Fitbit",
                field_name: "x",
                summaries: &summaries,
                references: &refs,
                min_words: 150,
                max_words: 250,
                audience: "y",
            },
            &PromptTemplates::default(),
        )
        .unwrap();
        let out = mock_complete(&p).unwrap();
        assert_eq!(
            out,
            "Fitbit helps sleep [1]. Fitbit supports walking [16]. It also helps mood [2]."
        );
    }

    #[test]
    fn deterministic_and_unparseable() {
        let p = map_prompt(&["A b c."], 13);
        assert_eq!(mock_complete(&p).unwrap(), mock_complete(&p).unwrap());
        assert!(matches!(
            mock_complete("hello"),
            Err(BackendError::UnparseablePrompt(_))
        ));
        let b = MockBackend::new();
        let req = CompletionRequest::new("m", p, 26);
        assert_eq!(b.complete(&req).unwrap(), b.complete(&req).unwrap());
    }
}
