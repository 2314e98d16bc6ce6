use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;
use wdje::harness::{run_sweep, PipelineConfig, SweepGrid, SweepInput, SyntheticConfig};
use wdje::par::Execution;

fn sweep(c: &mut Criterion) {
    let input = SweepInput::Synthetic(SyntheticConfig::default());
    let grid = SweepGrid {
        classes: vec![],
        ratios: vec![0.25, 0.5, 0.75, 1.0],
        seeds: vec![1, 2],
        shifts: vec![0.0, 2.0],
    };
    let config = PipelineConfig::default();
    let mut group = c.benchmark_group("synthetic_sweep");
    group.sample_size(10);
    for (name, exec) in [
        ("sequential", Execution::Sequential),
        ("parallel", Execution::Parallel),
    ] {
        group.bench_function(name, |b| {
            b.iter(|| run_sweep(black_box(&input), &grid, &config, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, sweep);
criterion_main!(benches);
