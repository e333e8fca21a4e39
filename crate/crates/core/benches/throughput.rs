use std::time::Duration;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use trial_digest::exec::Execution;
use trial_digest::llm_backend::MockBackend;
use trial_digest::metrics::batch_smog;
use trial_digest::pipeline::{summarize_corpus, PipelineConfig};
use trial_digest::trial_model::{Corpus, MedicalField, RecencyClass, Trial};

fn corpus(n: usize) -> Corpus {
    let trials = (1..=n)
        .map(|i| {
            Trial::new(
                format!("NCT{i:08}"),
                format!("Wearable monitoring study {i}"),
                format!(
                    "Participants in cohort {i} wear a wrist tracker to record physical activity, sleep and heart rate. \
                     Investigators evaluate cardiovascular rehabilitation outcomes over {} weeks.",
                    6 + i % 10
                ),
            )
        })
        .collect();
    Corpus::new(
        "Fitbit",
        MedicalField::Cardiology,
        RecencyClass::CompletedWithin5y,
        trials,
    )
    .unwrap()
}

fn strategies() -> [(&'static str, Execution); 2] {
    [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)]
}

/// Map stage dominated by backend latency, as with a remote model.
fn bench_pipeline(c: &mut Criterion) {
    let mut group = c.benchmark_group("pipeline_85_trials_2ms_latency");
    group.sample_size(10);
    let corpus = corpus(85);
    let backend = MockBackend::with_latency(Duration::from_millis(2));
    for (name, execution) in strategies() {
        let config = PipelineConfig {
            execution,
            ..Default::default()
        };
        group.bench_with_input(BenchmarkId::from_parameter(name), &config, |b, config| {
            b.iter(|| summarize_corpus(&corpus, config, &backend).unwrap())
        });
    }
    group.finish();
}

fn bench_smog(c: &mut Criterion) {
    let mut group = c.benchmark_group("smog_2000_texts");
    let texts: Vec<String> = corpus(2000)
        .trials()
        .iter()
        .map(|t| t.brief_summary.repeat(8))
        .collect();
    let threads = std::thread::available_parallelism().map_or(4, |n| n.get());
    for (name, execution) in strategies() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &execution, |b, &execution| {
            b.iter(|| batch_smog(&texts, execution, threads).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_pipeline, bench_smog);
criterion_main!(benches);
