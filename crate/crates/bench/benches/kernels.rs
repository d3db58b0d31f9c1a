use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion, Throughput};
use micromode_core::experiments::contour_grid;
use micromode_core::heavytail::{sample_dataset, DataConfig};
use micromode_core::micromode::detect;
use micromode_core::posterior::{info_matrix, score};
use micromode_core::rng::stream;
use micromode_core::zigzag::{simulate, ExitSetup, RateKind, StopRule, ZigZagState};
use micromode_core::{Dataset, Model};

fn data(beta: f64, d: usize, n: usize) -> Dataset {
    sample_dataset(&DataConfig::new(beta, d, n, 1).unwrap()).unwrap()
}

fn posterior(c: &mut Criterion) {
    let mut g = c.benchmark_group("posterior");
    for d in [1, 3] {
        let ds = data(0.5, d, 10_000);
        let model = Model::new(1.0, d).unwrap();
        let x = vec![0.3; d];
        g.throughput(Throughput::Elements(10_000));
        g.bench_function(format!("score_d{d}_n1e4"), |b| b.iter(|| score(&model, &ds, black_box(&x)).unwrap()));
        g.bench_function(format!("info_d{d}_n1e4"), |b| b.iter(|| info_matrix(&model, &ds, black_box(&x)).unwrap()));
    }
    g.finish();
}

fn micromode(c: &mut Criterion) {
    let ds = data(0.5, 1, 10_000);
    let model = Model::new(1.0, 1).unwrap();
    c.bench_function("detect_certify_d1_n1e4", |b| b.iter(|| detect(&model, black_box(&ds), 0).unwrap()));
}

fn zigzag(c: &mut Criterion) {
    let mut g = c.benchmark_group("zigzag");
    let model = Model::new(1.0, 1).unwrap();
    let ds = data(0.5, 1, 1000);
    let init = ZigZagState::new(0.0, 1.0).unwrap();
    g.bench_function("thinning_global_bound_n1e3_t100", |b| {
        let mut rng = stream(2, &[0]);
        b.iter(|| simulate(&model, &ds, RateKind::Canonical, init, &StopRule::none(), 100.0, false, &mut rng).unwrap())
    });
    let two = Dataset::from_scalars(&[-2.0, 2.0]).unwrap();
    let mm = detect(&model, &two, 0).unwrap().certified().unwrap().clone();
    let setup = ExitSetup::new(&model, &two, &mm).unwrap();
    for kind in RateKind::ALL {
        g.bench_function(format!("excursions_1e3_{}", kind.name()), |b| {
            let mut rng = stream(2, &[1]);
            b.iter(|| setup.excursion_stats(kind, 1000, 1e7, &mut rng).unwrap())
        });
    }
    g.finish();
}

fn contour(c: &mut Criterion) {
    // the acceptance size is 512^2; 64^2 keeps one sample under a second
    let mut g = c.benchmark_group("contour");
    g.sample_size(10);
    let ds = data(1.0, 2, 100_000);
    let model = Model::new(1.0, 2).unwrap();
    g.throughput(Throughput::Elements(64 * 64 * 100_000));
    g.bench_function("grid_64sq_n1e5", |b| b.iter(|| contour_grid(&model, &ds, [-4.0, 4.0, -4.0, 4.0], 64).unwrap()));
    g.finish();
}

criterion_group!(benches, posterior, micromode, zigzag, contour);
criterion_main!(benches);
