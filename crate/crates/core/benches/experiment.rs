//! Full mock experiment (8 codes x 30 runs), sequential against the rayon executor.

use std::sync::Arc;

use criterion::{criterion_group, criterion_main, Criterion};
use nlbim_core::harness::{experiment_script, mock_engine, run_experiment, ExperimentConfig, Executor};
use nlbim_core::orchestrator::PipelineSettings;

fn experiment(c: &mut Criterion) {
    let engine = Arc::new(mock_engine(experiment_script(), PipelineSettings::default()).unwrap());
    let mut executors = vec![("sequential", Executor::Sequential)];
    if Executor::default() != Executor::Sequential {
        executors.push(("parallel", Executor::default()));
    }
    let mut group = c.benchmark_group("experiment_240_runs");
    group.sample_size(10);
    for (name, executor) in executors {
        group.bench_function(name, |b| {
            b.iter(|| {
                let dir = tempfile::tempdir().unwrap();
                let mut cfg = ExperimentConfig::new(dir.path());
                cfg.seed = 7;
                cfg.executor = executor;
                run_experiment(&engine, &cfg).unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, experiment);
criterion_main!(benches);
