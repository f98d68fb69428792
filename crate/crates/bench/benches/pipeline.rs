use criterion::{criterion_group, criterion_main, Criterion};

use glean_bench::bundle;
use glean_core::governance::SEED_CATALOG;
use glean_core::harness::{run_with_workers, RunManifest};

fn full_run(c: &mut Criterion) {
    let b = bundle(100);
    let mut m = RunManifest::new("bench", 17);
    m.bootstrap_resamples = 200;
    let mut g = c.benchmark_group("pipeline");
    g.sample_size(10);
    for workers in [1, 4] {
        g.bench_function(format!("synth100/workers{workers}"), |bench| {
            bench.iter(|| run_with_workers(&m, &b, SEED_CATALOG, Some(workers)).expect("run"))
        });
    }
    g.finish();
}

criterion_group!(benches, full_run);
criterion_main!(benches);
