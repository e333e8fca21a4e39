//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any offline criterion fails.
//!
//! Criterion 5 includes a live registry fetch. When the registry cannot be
//! reached that sub-check reports FAIL but only fails the process if
//! `TRIAL_DIGEST_REGISTRY_URL` is set, i.e. a reachable registry was
//! promised.

mod common;

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use statrs::distribution::{ContinuousCDF, StudentsT};

use common::{fixture, read_fixture, synthetic_corpus};
use trial_digest::batching::{make_batches, word_budget, BudgetPolicy};
use trial_digest::citations::{extract_citations, remap_citations, unique_indices, validate, CitationMap};
use trial_digest::ingest::{Query, RegistryClient, DEFAULT_BASE_URL};
use trial_digest::llm_backend::MockBackend;
use trial_digest::metrics::{count_syllables, lcs_len, linear_fit, rouge_l_f1, smog_of, welch_t_test};
use trial_digest::pipeline::{expected_call_count, replay, summarize_corpus, Pipeline, PipelineConfig, ResponseCache};
use trial_digest::prompting::{
    render_map_prompt, render_reduce_prompt, MapPromptInput, PromptTemplates, ReducePromptInput, DEFAULT_AUDIENCE,
};
use trial_digest::retry::RetryPolicy;
use trial_digest::text::word_count;
use trial_digest::trial_model::{filter_trials, Corpus, MedicalField, RecencyClass, Trial};

const REGISTRY_ENV: &str = "TRIAL_DIGEST_REGISTRY_URL";

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    fatal: bool,
    detail: String,
}

impl Outcome {
    fn check(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            fatal: !pass,
            detail: detail.into(),
        }
    }
}

fn random_corpus(rng: &mut StdRng, n: usize) -> Corpus {
    const VOCAB: &[&str] = &[
        "participants",
        "wear",
        "a",
        "tracker",
        "daily",
        "steps",
        "sleep",
        "heart",
        "rate",
        "outcomes",
        "improve",
        "cohort",
        "weeks",
        "randomized",
        "adults",
        "activity",
        "monitoring",
        "recovery",
        "fatigue",
        "usual",
        "care",
    ];
    let trials = (1..=n)
        .map(|i| {
            let sentences: Vec<String> = (0..rng.random_range(1..4))
                .map(|_| {
                    let words: Vec<&str> = (0..rng.random_range(3..40))
                        .map(|_| VOCAB[rng.random_range(0..VOCAB.len())])
                        .collect();
                    format!("{}.", words.join(" "))
                })
                .collect();
            Trial::new(
                format!("NCT{:08}", i),
                format!("Trial {i} {}", VOCAB[i % VOCAB.len()]),
                sentences.join(" "),
            )
        })
        .collect();
    Corpus::new(
        "Fitbit",
        MedicalField::GeneralPhysiology,
        RecencyClass::CompletedWithin5y,
        trials,
    )
    .unwrap()
}

fn criterion_1() -> Outcome {
    let started = Instant::now();
    let mut rng = StdRng::seed_from_u64(0x5eed);
    let mut failures = Vec::new();
    let runs = 200;
    for run in 0..runs {
        let n = rng.random_range(1..=120);
        let corpus = random_corpus(&mut rng, n);
        let r = match summarize_corpus(&corpus, &PipelineConfig::default(), &MockBackend::new()) {
            Ok(r) => r,
            Err(e) => {
                failures.push(format!("run {run} (N={n}): {e}"));
                continue;
            }
        };
        let cited: BTreeSet<usize> = unique_indices(&r.final_summary.text);
        let listed: BTreeSet<usize> = r
            .reference_list
            .lines()
            .map(|l| l[1..l.find(']').unwrap()].parse().unwrap())
            .collect();
        if !cited.iter().all(|&i| (1..=n).contains(&i)) || cited != listed || cited.is_empty() {
            failures.push(format!("run {run} (N={n}): cited {cited:?} listed {listed:?}"));
        }
        let offset = rng.random_range(0..200);
        let local: String = (0..rng.random_range(0..20))
            .map(|_| format!("x [{}]. ", rng.random_range(1..=15)))
            .collect();
        let remapped = remap_citations(&local, &CitationMap::for_batch(offset, 15)).unwrap();
        let a: Vec<usize> = extract_citations(&remapped).iter().map(|c| c.index).collect();
        let b: Vec<usize> = extract_citations(&local).iter().map(|c| c.index + offset).collect();
        if a != b {
            failures.push(format!("run {run}: remap/extract do not commute"));
        }
    }
    let elapsed = started.elapsed();
    Outcome::check(
        failures.is_empty() && elapsed < Duration::from_secs(10),
        format!(
            "{runs} corpora, {} failures, {:.2}s (limit 10s){}",
            failures.len(),
            elapsed.as_secs_f64(),
            first(&failures)
        ),
    )
}

fn first(v: &[String]) -> String {
    v.first().map(|f| format!("; first: {f}")).unwrap_or_default()
}

fn criterion_2() -> Outcome {
    let config = PipelineConfig::default();
    let mut got = Vec::new();
    let mut ok = true;
    for (n, want) in [(15, 1), (16, 3), (39, 4), (85, 7)] {
        let r = summarize_corpus(&synthetic_corpus(n), &config, &MockBackend::new()).unwrap();
        ok &= r.llm_call_count == want && expected_call_count(n, &config) == want;
        got.push(format!("N={n}: {} (want {want})", r.llm_call_count));
    }
    Outcome::check(ok, got.join(", "))
}

fn criterion_3() -> Outcome {
    let templates = PromptTemplates::default();
    let policy = BudgetPolicy::default();
    let mut ok = true;
    let mut notes = Vec::new();
    for (n, budget) in [(15usize, 200usize), (10, 130)] {
        let corpus = synthetic_corpus(n);
        let batch = &make_batches(&corpus, &policy).unwrap()[0];
        let field = corpus.field.display_name();
        let prompt = render_map_prompt(
            &MapPromptInput {
                device: &corpus.device,
                field_name: &field,
                batch,
                budget_words: word_budget(batch, &policy),
                audience: DEFAULT_AUDIENCE,
            },
            &templates,
        )
        .unwrap();
        let golden = read_fixture(&format!("../golden/map_batch_{n}.txt"));
        let exact = prompt == golden && prompt.contains(&format!("Write a {budget} word thesis"));
        ok &= exact;
        notes.push(format!(
            "map N={n} -> {budget} words {}",
            if exact { "exact" } else { "MISMATCH" }
        ));
    }
    let summaries = [
        "Trackers raised daily steps [1] [3]. Sleep duration improved [2].",
        "Resting heart rate fell in older adults [16].",
    ];
    let references = [
        (1, "Wearable tracker trial 1"),
        (2, "Wearable tracker trial 2"),
        (3, "Wearable tracker trial 3"),
        (16, "Wearable tracker trial 16"),
    ];
    let reduce = render_reduce_prompt(
        &ReducePromptInput {
            device: "Fitbit",
            field_name: "general physiology",
            summaries: &summaries,
            references: &references,
            min_words: policy.combine_min_words,
            max_words: policy.combine_max_words,
            audience: DEFAULT_AUDIENCE,
        },
        &templates,
    )
    .unwrap();
    let exact = reduce == read_fixture("../golden/reduce.txt") && reduce.contains("Write a 150-250-word thesis");
    ok &= exact;
    notes.push(format!(
        "combine -> 150-250 {}",
        if exact { "exact" } else { "MISMATCH" }
    ));
    Outcome::check(ok, notes.join(", "))
}

fn criterion_4() -> Outcome {
    let text = read_fixture("published_result.txt");
    let report = validate(&text, 39);
    let unique = report.unique_indices.len();
    let max = report.unique_indices.last().copied().unwrap_or(0);
    let words = word_count(&text);
    Outcome::check(
        unique == 11 && max == 33 && max <= 39 && words.abs_diff(201) <= 5,
        format!(
            "unique {unique} (want 11), max {max} <= 39, words {words} (want 201 +/- 5), coverage {:.3}",
            report.coverage_fraction
        ),
    )
}

fn live_smog_sample() -> Result<(f64, usize), String> {
    let base = std::env::var(REGISTRY_ENV).unwrap_or_else(|_| DEFAULT_BASE_URL.to_string());
    let client = RegistryClient::new(base).with_retry(RetryPolicy::immediate(2));
    let fetched = client
        .fetch_all(&Query::new("Fitbit", 100).map_err(|e| e.to_string())?, 100)
        .map_err(|e| e.to_string())?;
    let today = chrono::Utc::now().date_naive();
    let kept = filter_trials(&fetched.trials, today);
    if kept.is_empty() {
        return Err("registry returned no usable trials".into());
    }
    let sample: Vec<&str> = kept.iter().map(|t| t.brief_summary.as_str()).collect();
    let grade = smog_of(&sample.join(" ")).map_err(|e| e.to_string())?;
    Ok((grade, kept.len()))
}

fn criterion_5() -> Outcome {
    let zero = smog_of("The cat sat on the mat. The dog ran to the park.").unwrap();
    let zero_ok = zero == 3.1291;

    let tsv = std::fs::read_to_string(fixture("syllables.tsv")).unwrap();
    let mut rows = 0;
    let mut mismatches = Vec::new();
    let mut hand_agree = 0;
    for line in tsv.lines().skip(1) {
        let cols: Vec<&str> = line.split('\t').collect();
        let (word, hand, pinned): (&str, usize, usize) = (cols[0], cols[1].parse().unwrap(), cols[2].parse().unwrap());
        rows += 1;
        let got = count_syllables(word);
        if got != pinned {
            mismatches.push(format!("{word}: {got} != {pinned}"));
        }
        if (got >= 3) == (hand >= 3) {
            hand_agree += 1;
        }
    }
    let list_ok = rows == 50 && mismatches.is_empty();

    let (live_ok, live_note, live_fatal) = match live_smog_sample() {
        Ok((grade, n)) => (
            (15.0..=22.0).contains(&grade),
            format!("live sample of {n} descriptions SMOG {grade:.2} (band 15-22)"),
            true,
        ),
        Err(e) => (
            false,
            format!("live sample unavailable ({e})"),
            std::env::var_os(REGISTRY_ENV).is_some(),
        ),
    };
    let pass = zero_ok && list_ok && live_ok;
    Outcome {
        pass,
        fatal: !(zero_ok && list_ok) || (!live_ok && live_fatal),
        detail: format!(
            "zero-polysyllable SMOG {zero} (want 3.1291), syllable list {}/{rows} pinned{}, polysyllable agreement with hand counts {hand_agree}/{rows}; {live_note}",
            rows - mismatches.len(),
            first(&mismatches)
        ),
    }
}

fn criterion_6() -> Outcome {
    let mut rng = StdRng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let (m1, m2) = (rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0));
        let (s1, s2) = (rng.random_range(0.2..8.0), rng.random_range(0.2..8.0));
        let (n1, n2) = (rng.random_range(2..60), rng.random_range(2..60));
        let ours = welch_t_test(m1, s1, n1, m2, s2, n2).unwrap();
        let v1 = s1 * s1 / n1 as f64;
        let v2 = s2 * s2 / n2 as f64;
        let t = (m1 - m2) / (v1 + v2).sqrt();
        let df = (v1 + v2).powi(2) / (v1 * v1 / (n1 as f64 - 1.0) + v2 * v2 / (n2 as f64 - 1.0));
        let oracle = 2.0 * StudentsT::new(0.0, 1.0, df).unwrap().cdf(-t.abs());
        worst = worst.max((ours.p_value_two_tailed - oracle).abs());
    }
    let p26 = welch_t_test(19.32, 1.220, 26, 18.49, 2.148, 26)
        .unwrap()
        .p_value_two_tailed;
    let p27 = welch_t_test(19.32, 1.220, 27, 18.49, 2.148, 27)
        .unwrap()
        .p_value_two_tailed;
    let band = |p: f64| (0.085..=0.096).contains(&p);
    Outcome::check(
        worst < 1e-6 && band(p26) && band(p27),
        format!("max |dp| vs oracle {worst:.2e} (limit 1e-6); p(n=26) {p26:.4}, p(n=27) {p27:.4} (band 0.085-0.096)"),
    )
}

fn brute_lcs(a: &[u8], b: &[u8]) -> usize {
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let mut best = 0;
    for mask in 0u32..(1 << short.len()) {
        let len = mask.count_ones() as usize;
        if len <= best {
            continue;
        }
        let sub: Vec<u8> = (0..short.len())
            .filter(|i| mask & (1 << i) != 0)
            .map(|i| short[i])
            .collect();
        let mut it = long.iter();
        if sub.iter().all(|c| it.any(|x| x == c)) {
            best = len;
        }
    }
    best
}

fn criterion_7() -> Outcome {
    let mut rng = StdRng::seed_from_u64(7);
    let cases = 1200;
    let mut bad = 0;
    for _ in 0..cases {
        let alphabet = rng.random_range(2..6u8);
        let a: Vec<u8> = (0..rng.random_range(1..=12))
            .map(|_| rng.random_range(0..alphabet))
            .collect();
        let b: Vec<u8> = (0..rng.random_range(1..=12))
            .map(|_| rng.random_range(0..alphabet))
            .collect();
        if lcs_len(&a, &b) != brute_lcs(&a, &b) {
            bad += 1;
        }
    }
    let same = rouge_l_f1(&["a", "b", "c"], &["a", "b", "c"], 1.0).unwrap();
    let disjoint = rouge_l_f1(&["a", "b"], &["c", "d"], 1.0).unwrap();
    Outcome::check(
        bad == 0 && same == 1.0 && disjoint == 0.0,
        format!("{cases} random pairs, {bad} LCS mismatches; identical {same}, disjoint {disjoint}"),
    )
}

fn criterion_8() -> Outcome {
    let line: Vec<(f64, f64)> = (0..20).map(|i| (i as f64 * 0.5, 3.25 * i as f64 * 0.5 - 7.0)).collect();
    let fit = linear_fit(&line).unwrap();
    let three = linear_fit(&[(0.0, 0.0), (1.0, 1.0), (2.0, 0.0)]).unwrap();
    let hand_ok =
        three.slope.abs() < 1e-12 && (three.intercept - 1.0 / 3.0).abs() < 1e-12 && three.r_squared.abs() < 1e-12;
    Outcome::check(
        (fit.slope - 3.25).abs() < 1e-9 && fit.r_squared == 1.0 && hand_ok,
        format!(
            "line |dm| {:.1e}, r2 {}; 3-point m {:.3} b {:.4} r2 {:.3}",
            (fit.slope - 3.25).abs(),
            fit.r_squared,
            three.slope,
            three.intercept,
            three.r_squared
        ),
    )
}

fn criterion_9() -> Outcome {
    let corpus = synthetic_corpus(39);
    let config = PipelineConfig::default();
    let a = summarize_corpus(&corpus, &config, &MockBackend::new()).unwrap();
    let b = summarize_corpus(&corpus, &config, &MockBackend::new()).unwrap();
    let identical =
        serde_json::to_vec(&a).unwrap() == serde_json::to_vec(&b).unwrap() && a.final_document() == b.final_document();

    let dir = tempfile::tempdir().unwrap();
    let cached = PipelineConfig {
        cache_dir: Some(dir.path().to_path_buf()),
        ..config
    };
    let original = summarize_corpus(&corpus, &cached, &MockBackend::new()).unwrap();
    let pipeline = Pipeline::new(
        cached,
        PromptTemplates::default(),
        ResponseCache::on_disk(dir.path()).unwrap(),
    );
    let replayed = replay(&corpus, &pipeline);
    let replay_ok = matches!(&replayed, Ok(r) if r.final_document() == original.final_document()
        && r.intermediate == original.intermediate && r.llm_call_count == 0);
    Outcome::check(
        identical && replay_ok,
        format!("two runs byte-identical: {identical}; cache-only replay equal: {replay_ok}"),
    )
}

fn criterion_10() -> Outcome {
    let corpus = synthetic_corpus(85);
    let started = Instant::now();
    let r = summarize_corpus(&corpus, &PipelineConfig::default(), &MockBackend::new()).unwrap();
    let elapsed = started.elapsed();
    let words = r.final_summary.word_count;
    Outcome::check(
        elapsed < Duration::from_secs(5) && (150..=250).contains(&words),
        format!(
            "85 trials in {:.3}s (limit 5s), combined summary {words} words (range 150-250)",
            elapsed.as_secs_f64()
        ),
    )
}

fn main() {
    // `cargo test` passes harness flags such as `--list`; only run for a plain invocation
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let criteria: [Criterion; 10] = [
        ("citation integrity", criterion_1),
        ("call accounting", criterion_2),
        ("word budgets", criterion_3),
        ("published result paragraph", criterion_4),
        ("SMOG", criterion_5),
        ("t-test", criterion_6),
        ("ROUGE-L", criterion_7),
        ("regression", criterion_8),
        ("determinism and replay", criterion_9),
        ("end-to-end runtime", criterion_10),
    ];
    let mut fatal = 0;
    let mut passed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let o = run();
        passed += usize::from(o.pass);
        fatal += usize::from(o.fatal);
        println!(
            "{} {:>2}. {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            i + 1,
            o.detail
        );
    }
    println!("acceptance: {passed}/{} criteria pass", criteria.len());
    if fatal > 0 {
        std::process::exit(1);
    }
}
