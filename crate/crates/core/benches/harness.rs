use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use randadj::dgp::{build_cell, gen_base_tables, CellConfig, Distribution, ResidualKind};
use randadj::harness::{run_table, MonteCarlo};
use randadj::Execution;

fn bench_run_table(c: &mut Criterion) {
    let mut group = c.benchmark_group("run_table");
    group.sample_size(10);
    for (n, alpha) in [(200, 0.1), (400, 0.2)] {
        let cfg = CellConfig {
            alpha,
            delta: 0.25,
            gamma: 3.0,
            residual_kind: ResidualKind::T3,
            covariate_dist: Distribution::T3,
            rank_transform: false,
            n,
            r1: 0.35,
        };
        let base = gen_base_tables(n, Distribution::T3, 1).unwrap();
        let table = build_cell(&base, &cfg).unwrap();
        for execution in [Execution::Sequential, Execution::Parallel] {
            let mut mc = MonteCarlo::new(200, 1);
            mc.execution = execution;
            group.bench_with_input(
                BenchmarkId::new(format!("{execution:?}"), format!("n{n}_p{}", cfg.p())),
                &mc,
                |b, mc| b.iter(|| run_table(&table, cfg.n1(), cfg.key(), mc).unwrap()),
            );
        }
    }
    group.finish();
}

criterion_group!(benches, bench_run_table);
criterion_main!(benches);
