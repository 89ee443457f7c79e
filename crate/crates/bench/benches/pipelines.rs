use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use frobenius_core::prolongation::{hmf_rhs, PathSpec};
use frobenius_core::{
    construct_field, integrate_path, solve_seed_algebra, verify_hmf_field, Chart, Grid,
    ProductAtPoint, Tensor,
};

fn explicit_seed(chart: &Chart) -> ProductAtPoint {
    let metric = chart.metric_at(&[0.0, 0.0]).unwrap();
    let mut star = Tensor::zeros(2, 3);
    star.set(&[0, 1, 1], 1.0);
    star.set(&[1, 0, 1], 1.0);
    star.set(&[1, 1, 0], 1.0);
    ProductAtPoint::new(star, metric).unwrap()
}

fn bench_hmf_rhs(c: &mut Criterion) {
    let chart = Chart::new(3, 1.0, 0.8).unwrap();
    let metric = chart.metric_at(&[0.0, 0.0, 0.0]).unwrap();
    let seed = solve_seed_algebra(3, &metric, 1.0, 20).unwrap();
    let x = [0.05, -0.03, 0.08];
    c.bench_function("hmf_rhs_n3", |b| {
        b.iter(|| hmf_rhs(&chart, std::hint::black_box(&x), &seed.star).unwrap())
    });
}

fn bench_integrate_path(c: &mut Criterion) {
    let chart = Chart::new(2, 1.0, 1.2).unwrap();
    let seed = explicit_seed(&chart);
    let path = PathSpec::new(vec![vec![0.0, 0.0], vec![0.15, 0.1]], 1e-2);
    c.bench_function("integrate_path_n2", |b| {
        b.iter(|| integrate_path(&chart, &seed, &path).unwrap())
    });
}

fn bench_construct(c: &mut Criterion) {
    let chart = Chart::new(2, 1.0, 1.2).unwrap();
    let seed = explicit_seed(&chart);
    let grid = Grid::symmetric(2, 0.2, 9).unwrap();
    c.bench_function("construct_field_9x9", |b| {
        b.iter(|| construct_field(&chart, &seed, &grid).unwrap())
    });
}

fn bench_verify(c: &mut Criterion) {
    let chart = Chart::new(2, 1.0, 1.2).unwrap();
    let seed = explicit_seed(&chart);
    let grid = Grid::symmetric(2, 0.2, 21).unwrap();
    let field = construct_field(&chart, &seed, &grid).unwrap();
    c.bench_function("verify_field_21x21", |b| {
        b.iter_batched(
            || field.clone(),
            |f| verify_hmf_field(&f).unwrap(),
            BatchSize::LargeInput,
        )
    });
}

fn bench_seed_solver(c: &mut Criterion) {
    let chart = Chart::new(3, 1.0, 0.8).unwrap();
    let metric = chart.metric_at(&[0.0, 0.0, 0.0]).unwrap();
    c.bench_function("solve_seed_n3", |b| {
        b.iter(|| solve_seed_algebra(3, &metric, 1.0, 20).unwrap())
    });
}

criterion_group!(
    pipelines,
    bench_hmf_rhs,
    bench_integrate_path,
    bench_construct,
    bench_verify,
    bench_seed_solver
);
criterion_main!(pipelines);
