use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use gapgreen::bands::compute_bands;
use gapgreen::operator::PeriodicOperator;
use gapgreen::oracle::{GreenOracle, OracleOptions};
use gapgreen::par::Exec;

fn policies() -> Vec<(&'static str, Exec)> {
    let mut v = vec![("sequential", Exec::Sequential)];
    if cfg!(feature = "parallel") {
        v.push(("parallel", Exec::Parallel));
    }
    v
}

fn bands(c: &mut Criterion) {
    let op = PeriodicOperator::separable_mathieu(2, 5.0);
    let mut g = c.benchmark_group("bands_17x17_n4");
    g.sample_size(10);
    for (name, exec) in policies() {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| compute_bands(&op, 17, 4, 4, exec).unwrap());
        });
    }
    g.finish();
}

fn oracle(c: &mut Criterion) {
    let op = PeriodicOperator::free(2);
    let opts = OracleOptions { cutoff: 3, grid: 160, max_doublings: 0, ..OracleOptions::default() };
    let points: Vec<(Vec<f64>, Vec<f64>)> = (1..=8).map(|i| (vec![2.5 * i as f64, 0.0], vec![0.0, 0.0])).collect();
    let mut g = c.benchmark_group("oracle_free_grid160_8pts");
    g.sample_size(10);
    for (name, exec) in policies() {
        let oracle = GreenOracle::new(&op, -0.25, vec![0.0, 0.0], opts.clone(), exec).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(name), &points, |b, pts| {
            b.iter(|| oracle.evaluate(pts).unwrap());
        });
    }
    g.finish();
}

criterion_group!(benches, bands, oracle);
criterion_main!(benches);
