use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

use twistmc::dynamics::MapFamily;
use twistmc::ensemble::{run_ensemble, stopping_times, EnsembleSpec};
use twistmc::par::Execution;

fn displacement(c: &mut Criterion) {
    let fam = MapFamily::cos_sin(0.01);
    let n = 2_000u64;
    let mut group = c.benchmark_group("run_ensemble");
    group.sample_size(10);
    for orbits in [256u64, 4096] {
        group.throughput(Throughput::Elements(orbits * n));
        for (name, exec) in [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)] {
            let spec = EnsembleSpec::new(orbits, 1).with_execution(exec);
            group.bench_with_input(BenchmarkId::new(name, orbits), &spec, |b, spec| {
                b.iter(|| run_ensemble(&fam, (0.0, 0.3), n, spec, 0, None).unwrap())
            });
        }
    }
    group.finish();
}

// Exit times have very uneven per-orbit cost, which stresses the chunking.
fn exits(c: &mut Criterion) {
    let fam = MapFamily::cos_sin(0.02);
    let mut group = c.benchmark_group("stopping_times");
    group.sample_size(10);
    for (name, exec) in [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)] {
        let spec = EnsembleSpec::new(2048, 1).with_execution(exec);
        group.bench_function(name, |b| b.iter(|| stopping_times(&fam, (0.0, 0.3), 0.2, &spec, 1 << 20).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, displacement, exits);
criterion_main!(benches);
