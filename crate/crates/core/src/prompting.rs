//! Map (per-batch) and reduce (combine) prompt rendering.
//!
//! Templates are plain UTF-8 text with `{name}` placeholders; `{{` and `}}`
//! produce literal braces. The shipped defaults live in `templates/` and
//! can be replaced at runtime with [`PromptTemplates::from_files`].

use std::collections::BTreeSet;
use std::path::Path;

use crate::batching::Batch;
use crate::citations::extract_citations;
use crate::text::{collapse_whitespace, neutralize_fences};

pub const DEFAULT_AUDIENCE: &str = "clinical research coordinators";
pub const MAP_TEMPLATE: &str = include_str!("../templates/map_prompt.txt");
pub const REDUCE_TEMPLATE: &str = include_str!("../templates/reduce_prompt.txt");

const MAP_PLACEHOLDERS: &[&str] = &[
    "trial_count",
    "trial_noun",
    "device",
    "field",
    "audience",
    "budget_words",
    "trials",
];
const REDUCE_PLACEHOLDERS: &[&str] = &[
    "device",
    "field",
    "audience",
    "summaries",
    "references",
    "min_words",
    "max_words",
];

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("prompt input invariant violated: {0}")]
    InvariantViolation(String),
    #[error("template error: {0}")]
    Template(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplates {
    pub map: String,
    pub reduce: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            map: MAP_TEMPLATE.to_string(),
            reduce: REDUCE_TEMPLATE.to_string(),
        }
    }
}

impl PromptTemplates {
    /// Loads overrides; a `None` path keeps the shipped default.
    pub fn from_files(map: Option<&Path>, reduce: Option<&Path>) -> std::io::Result<Self> {
        let mut t = Self::default();
        if let Some(p) = map {
            t.map = std::fs::read_to_string(p)?;
        }
        if let Some(p) = reduce {
            t.reduce = std::fs::read_to_string(p)?;
        }
        t.check().map_err(std::io::Error::other)?;
        Ok(t)
    }

    /// Rejects templates that reference unknown placeholders.
    pub fn check(&self) -> Result<(), PromptError> {
        for name in placeholders(&self.map)? {
            if !MAP_PLACEHOLDERS.contains(&name.as_str()) {
                return Err(PromptError::Template(format!("unknown map placeholder {{{name}}}")));
            }
        }
        for name in placeholders(&self.reduce)? {
            if !REDUCE_PLACEHOLDERS.contains(&name.as_str()) {
                return Err(PromptError::Template(format!("unknown reduce placeholder {{{name}}}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct MapPromptInput<'a> {
    pub device: &'a str,
    pub field_name: &'a str,
    pub batch: &'a Batch,
    pub budget_words: usize,
    pub audience: &'a str,
}

#[derive(Debug, Clone)]
pub struct ReducePromptInput<'a> {
    pub device: &'a str,
    pub field_name: &'a str,
    /// Intermediate summaries, already in the global reference space.
    pub summaries: &'a [&'a str],
    /// `(global index, title)` pairs listed in the References fence.
    pub references: &'a [(usize, &'a str)],
    pub min_words: usize,
    pub max_words: usize,
    pub audience: &'a str,
}

/// Renders the per-batch prompt. Each trial is written as
/// `{local index}. {title}` on one line and its description on the next,
/// trials separated by a blank line; whitespace inside title and
/// description is collapsed so every trial occupies exactly two lines.
pub fn render_map_prompt(input: &MapPromptInput<'_>, templates: &PromptTemplates) -> Result<String, PromptError> {
    let batch = input.batch;
    if batch.is_empty() {
        return Err(PromptError::InvariantViolation("batch has no trials".into()));
    }
    if input.budget_words < 13 {
        return Err(PromptError::InvariantViolation(format!(
            "budget {} below 13 words",
            input.budget_words
        )));
    }
    for t in &batch.trials {
        if t.title.trim().is_empty() || t.brief_summary.trim().is_empty() {
            return Err(PromptError::InvariantViolation(format!(
                "trial {} lacks title or description",
                t.id
            )));
        }
    }
    let trials = batch
        .trials
        .iter()
        .enumerate()
        .map(|(i, t)| format!("{}. {}\n{}", i + 1, clean(&t.title), clean(&t.brief_summary)))
        .collect::<Vec<_>>()
        .join("\n\n");
    let count = batch.len().to_string();
    let budget = input.budget_words.to_string();
    let device = clean(input.device);
    let field = clean(input.field_name);
    let audience = clean(input.audience);
    fill(
        &templates.map,
        &[
            ("trial_count", count.as_str()),
            ("trial_noun", if batch.len() == 1 { "trial" } else { "trials" }),
            ("device", &device),
            ("field", &field),
            ("audience", &audience),
            ("budget_words", &budget),
            ("trials", &trials),
        ],
    )
}

/// Renders the combine prompt over intermediate summaries (one paragraph
/// each, in batch order) and their reference list.
pub fn render_reduce_prompt(input: &ReducePromptInput<'_>, templates: &PromptTemplates) -> Result<String, PromptError> {
    if input.summaries.len() < 2 {
        return Err(PromptError::InvariantViolation(format!(
            "combine needs at least 2 summaries, got {}",
            input.summaries.len()
        )));
    }
    if input.min_words >= input.max_words {
        return Err(PromptError::InvariantViolation(
            "min_words must be below max_words".into(),
        ));
    }
    let listed: BTreeSet<usize> = input.references.iter().map(|(i, _)| *i).collect();
    for s in input.summaries {
        if let Some(c) = extract_citations(s).into_iter().find(|c| !listed.contains(&c.index)) {
            return Err(PromptError::InvariantViolation(format!(
                "citation [{}] has no entry in the reference list",
                c.index
            )));
        }
    }
    let summaries = input
        .summaries
        .iter()
        .map(|s| clean(s))
        .collect::<Vec<_>>()
        .join("\n\n");
    let references = input
        .references
        .iter()
        .map(|(i, title)| format!("{i}. {}", clean(title)))
        .collect::<Vec<_>>()
        .join("\n");
    let (min, max) = (input.min_words.to_string(), input.max_words.to_string());
    let device = clean(input.device);
    let field = clean(input.field_name);
    let audience = clean(input.audience);
    fill(
        &templates.reduce,
        &[
            ("device", &device),
            ("field", &field),
            ("audience", &audience),
            ("summaries", &summaries),
            ("references", &references),
            ("min_words", &min),
            ("max_words", &max),
        ],
    )
}

fn clean(s: &str) -> String {
    neutralize_fences(&collapse_whitespace(s))
}

fn placeholders(template: &str) -> Result<Vec<String>, PromptError> {
    let mut names = Vec::new();
    scan(template, |piece| {
        if let Piece::Placeholder(name) = piece {
            names.push(name.to_string());
        }
        Ok(())
    })?;
    Ok(names)
}

enum Piece<'a> {
    Literal(&'a str),
    Placeholder(&'a str),
}

fn scan<'a>(template: &'a str, mut emit: impl FnMut(Piece<'a>) -> Result<(), PromptError>) -> Result<(), PromptError> {
    let mut rest = template;
    while let Some(pos) = rest.find(['{', '}']) {
        emit(Piece::Literal(&rest[..pos]))?;
        let tail = &rest[pos..];
        if let Some(after) = tail.strip_prefix("{{") {
            emit(Piece::Literal("{"))?;
            rest = after;
        } else if let Some(after) = tail.strip_prefix("}}") {
            emit(Piece::Literal("}"))?;
            rest = after;
        } else if tail.starts_with('}') {
            return Err(PromptError::Template("unmatched `}`".into()));
        } else {
            let end = tail
                .find('}')
                .ok_or_else(|| PromptError::Template("unterminated placeholder".into()))?;
            let name = &tail[1..end];
            if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                return Err(PromptError::Template(format!("bad placeholder `{{{name}}}`")));
            }
            emit(Piece::Placeholder(name))?;
            rest = &tail[end + 1..];
        }
    }
    emit(Piece::Literal(rest))
}

/// Single-pass substitution; inserted values are never re-scanned.
fn fill(template: &str, values: &[(&str, &str)]) -> Result<String, PromptError> {
    let mut out = String::with_capacity(template.len() + values.iter().map(|(_, v)| v.len()).sum::<usize>());
    scan(template, |piece| {
        match piece {
            Piece::Literal(s) => out.push_str(s),
            Piece::Placeholder(name) => {
                let value = values
                    .iter()
                    .find(|(k, _)| *k == name)
                    .map(|(_, v)| *v)
                    .ok_or_else(|| PromptError::Template(format!("no value for {{{name}}}")))?;
                out.push_str(value);
            }
        }
        Ok(())
    })?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trial_model::Trial;

    fn batch(n: usize) -> Batch {
        Batch {
            ordinal: 0,
            global_offset: 0,
            truncated_ids: vec![],
            trials: (1..=n)
                .map(|i| {
                    Trial::new(
                        format!("NCT{i}"),
                        format!("Title {i}"),
                        format!("Description {i}. More text."),
                    )
                })
                .collect(),
        }
    }

    fn map_input(b: &Batch, budget: usize) -> String {
        render_map_prompt(
            &MapPromptInput {
                device: "Fitbit",
                field_name: "general physiology",
                batch: b,
                budget_words: budget,
                audience: DEFAULT_AUDIENCE,
            },
            &PromptTemplates::default(),
        )
        .unwrap()
    }

    #[test]
    fn map_prompt_structure() {
        let p = map_input(&batch(15), 200);
        assert!(p.starts_with(
            "Your task is to extract relevant information from 15 trials delimited in the triple backticks labeled from 1 to 15 to construct an argument about the purpose of Fitbit in general physiology trials."
        ));
        assert!(p.contains("Your reader will be clinical research coordinators.\nWrite a 200 word thesis with references to the trials in the following format: [1].\nTrials: ```\n1. Title 1\nDescription 1. More text.\n\n2. Title 2\n"));
        assert!(p.ends_with("15. Title 15\nDescription 15. More text.\n```\n"));
    }

    #[test]
    fn singular_trial() {
        let p = map_input(&batch(1), 13);
        assert!(p.contains("from 1 trial delimited"), "{p}");
        assert!(p.contains("Write a 13 word thesis"));
    }

    #[test]
    fn map_rejects_bad_input() {
        let b = batch(2);
        let r = render_map_prompt(
            &MapPromptInput {
                device: "F",
                field_name: "x",
                batch: &b,
                budget_words: 12,
                audience: "a",
            },
            &PromptTemplates::default(),
        );
        assert!(matches!(r, Err(PromptError::InvariantViolation(_))));
        let mut b = batch(2);
        b.trials[1].brief_summary.clear();
        let r = render_map_prompt(
            &MapPromptInput {
                device: "F",
                field_name: "x",
                batch: &b,
                budget_words: 26,
                audience: "a",
            },
            &PromptTemplates::default(),
        );
        assert!(matches!(r, Err(PromptError::InvariantViolation(_))));
    }

    #[test]
    fn reduce_prompt_structure() {
        let summaries = ["Fitbit helps sleep [1].", "Fitbit helps walking [16]."];
        let refs = [(1, "Sleep study"), (16, "Walking study")];
        let p = render_reduce_prompt(
            &ReducePromptInput {
                device: "Fitbit",
                field_name: "general physiology",
                summaries: &summaries,
                references: &refs,
                min_words: 150,
                max_words: 250,
                audience: DEFAULT_AUDIENCE,
            },
            &PromptTemplates::default(),
        )
        .unwrap();
        assert!(p.contains("construct a cumulative argument about the purpose of Fitbit in general physiology trials."));
        assert!(p.contains(
            "Weigh each paragraph according to its word count, weighing longer paragraphs more than shorter ones."
        ));
        assert!(p.contains("Summary: ```\nFitbit helps sleep [1].\n\nFitbit helps walking [16].\n```\n"));
        assert!(p.contains("References: ```\n1. Sleep study\n16. Walking study\n```\n"));
        assert!(
            p.ends_with("Write a 150-250-word thesis with references to the trials in the following format: [1].\n")
        );
    }

    #[test]
    fn reduce_rejects_single_summary_and_dangling_citation() {
        let t = PromptTemplates::default();
        static ONE: [&str; 1] = ["a [1]."];
        let refs = [(1, "x")];
        let mk = |s: &'static [&'static str]| ReducePromptInput {
            device: "F",
            field_name: "f",
            summaries: s,
            references: &refs,
            min_words: 150,
            max_words: 250,
            audience: "a",
        };
        assert!(render_reduce_prompt(&mk(&ONE), &t).is_err());
        static TWO: [&str; 2] = ["a [1].", "b [2]."];
        assert!(matches!(
            render_reduce_prompt(&mk(&TWO), &t),
            Err(PromptError::InvariantViolation(_))
        ));
    }

    #[test]
    fn backticks_in_content_cannot_break_fences() {
        let mut b = batch(2);
        b.trials[0].brief_summary = "Evil ``` fence\n\nwith blank line.".into();
        let p = map_input(&b, 26);
        assert_eq!(p.matches("```").count(), 2);
        assert!(p.contains("1. Title 1\nEvil ''' fence with blank line.\n\n2."));
    }

    #[test]
    fn template_placeholders_checked() {
        let t = PromptTemplates {
            map: "{nope}".into(),
            reduce: REDUCE_TEMPLATE.into(),
        };
        assert!(t.check().is_err());
        assert!(PromptTemplates::default().check().is_ok());
        assert_eq!(fill("a {{b}} {x}", &[("x", "{y}")]).unwrap(), "a {b} {y}");
    }
}
