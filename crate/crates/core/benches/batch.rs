use std::f64::consts::PI;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use chemotrap::initdata::{standard_profile, verify_construction_asymptotics_with, Profile};
use chemotrap::{par, Execution, Geometry, HelmholtzOperator, Motility, RadialGrid, SchemeConfig, Simulator};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn asymptotics(c: &mut Criterion) {
    let h = HelmholtzOperator::new(RadialGrid::shared(Geometry::Disk { radius: 1.0 }, 8192).unwrap()).unwrap();
    let lambdas: Vec<f64> = (0..8).map(|k| 1e2 * 10f64.powf(k as f64 / 3.5)).collect();
    let mut group = c.benchmark_group("asymptotics_family");
    for (name, exec) in MODES {
        group.bench_function(name, |b| {
            b.iter(|| verify_construction_asymptotics_with(exec, 10.0 * PI, &lambdas, 0.5, 0.25, &h).unwrap())
        });
    }
    group.finish();
}

fn k0(c: &mut Criterion) {
    let mut group = c.benchmark_group("k0_supremum");
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::new(name, 1_000_000), &exec, |b, &exec| {
            b.iter(|| Motility::Exp.k0_with(exec, 50.0, 1_000_000).unwrap())
        });
    }
    group.finish();
}

fn short_runs(c: &mut Criterion) {
    let mu: Vec<f64> = (0..16).map(|k| 0.1 * k as f64).collect();
    let grid = RadialGrid::shared(Geometry::Disk { radius: 1.0 }, 256).unwrap();
    let mut group = c.benchmark_group("run_batch");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(name, |b| {
            b.iter(|| {
                par::map(exec, &mu, |&m| {
                    let sim =
                        Simulator::new(grid.clone(), Motility::Exp, m, SchemeConfig::semi_implicit(1e-3, 0.5)).unwrap();
                    let u0 = standard_profile(&Profile::Perturbed { c: 2.0, eps: 0.3 }, grid.clone()).unwrap();
                    sim.run(sim.initial_state(u0).unwrap(), &mut ()).unwrap().t
                })
            })
        });
    }
    group.finish();
}

criterion_group!(benches, asymptotics, k0, short_runs);
criterion_main!(benches);
