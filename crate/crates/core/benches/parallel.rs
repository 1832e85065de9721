use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use stripeq::equilibria::{constant_starts, find_all_equilibria, SolveOptions};
use stripeq::exec::Exec;
use stripeq::forms::{Catalog, DiscreteProblem, Mode};
use stripeq::geometry::{build_interval_mesh, MeshSpec};
use stripeq::sweep::{run_counting_experiment, ProblemChoice, StartSpec, SweepConfig};

fn modes() -> [(&'static str, Exec); 2] {
    [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)]
}

fn multistart(c: &mut Criterion) {
    let mesh = Arc::new(build_interval_mesh(512).unwrap());
    let problem = DiscreteProblem::new(mesh.clone(), Catalog::TanhCoupled.spec(Mode::Concentrated { epsilon: 0.05 })).unwrap();
    let starts = constant_starts(&mesh, &[-2.0, 0.0, 2.0], 5, 0.3, 1);
    let opts = SolveOptions::default();
    let mut group = c.benchmark_group("find_all_equilibria");
    group.sample_size(10);
    for (name, exec) in modes() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| black_box(find_all_equilibria(&problem, &starts, &opts, exec).unwrap()))
        });
    }
    group.finish();
}

fn counting(c: &mut Criterion) {
    let mut config = SweepConfig::new(MeshSpec::Interval { n: 256 }, ProblemChoice::Catalog { catalog: Catalog::TanhCoupled });
    config.eps_schedule = vec![0.1, 0.05, 0.025];
    config.starts = StartSpec {
        values: vec![-2.0, 0.0, 2.0],
        perturbations: 1,
        amplitude: 0.2,
    };
    let mut group = c.benchmark_group("counting_experiment");
    group.sample_size(10);
    for (name, exec) in modes() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| black_box(run_counting_experiment(&config, exec).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, multistart, counting);
criterion_main!(benches);
