use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use pomdp_spi::oracle::build_oracle_with;
use pomdp_spi::spi::Algorithm;
use pomdp_spi::{policy_evaluation, value_iteration, OracleOptions, SpibbConfig, DEFAULT_TOL};
use pomdp_spi_bench::cheese_maze_fixture;

fn solvers(c: &mut Criterion) {
    let mut group = c.benchmark_group("solvers");
    for k in [1usize, 2] {
        let f = cheese_maze_fixture(k, k, 1000);
        let mdp = f.estimate.mle.close_undefined_to_sink();
        let na = f.env.pomdp.num_actions();
        let uniform = vec![vec![1.0 / na as f64; na]; mdp.num_states];
        group.bench_with_input(BenchmarkId::new("value_iteration", k), &mdp, |b, m| {
            b.iter(|| value_iteration(m, DEFAULT_TOL).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("policy_evaluation", k), &mdp, |b, m| {
            b.iter(|| policy_evaluation(m, &uniform, DEFAULT_TOL).unwrap())
        });
        let cfg = SpibbConfig::for_env(&f.env, 5, k);
        group.bench_with_input(BenchmarkId::new("spibb_policy", k), &f.estimate, |b, e| {
            b.iter(|| e.improve(Algorithm::Spibb, &cfg).unwrap())
        });
        let opts = OracleOptions::default_for(f.env.pomdp.discount, k);
        group.bench_with_input(BenchmarkId::new("oracle_build", k), &f, |b, f| {
            b.iter(|| build_oracle_with(&f.env.pomdp, &f.behavior, &f.behavior, &opts).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, solvers);
criterion_main!(benches);
