use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use infill_core::gp::quadrature::GaussHermite;
use infill_core::gp::train::assemble_batch;
use infill_core::gp::{init_model, TrainConfig};
use infill_core::metrics::ModelInput;
use infill_core::{
    dedup_stream, pixel_hash, sample_mask, window_pixel_coords, ContextWindow, Deduplicator, GeoPoint, InfillModel,
    Raster, SplitMix64, WindowSpec, NUM_MINERALS,
};

fn tiles(seed: u64, n: usize, side: usize) -> Vec<ContextWindow> {
    let mut rng = SplitMix64::new(seed);
    (0..n)
        .map(|_| {
            let origin = GeoPoint::new(rng.uniform(-105.5, -105.0), rng.uniform(39.0, 39.5));
            let mut w = ContextWindow::empty(WindowSpec::new(origin, side, 1.0));
            let data = (0..NUM_MINERALS * side * side).map(|_| rng.bernoulli(0.05) as u8).collect();
            w.minerals = Raster::from_vec(NUM_MINERALS, side, data).unwrap();
            w
        })
        .collect()
}

fn hashing(c: &mut Criterion) {
    let coords = window_pixel_coords(&WindowSpec::standard(GeoPoint::new(-117.003, 41.004)));
    c.bench_function("pixel_hash 2500 cells", |b| {
        b.iter(|| coords.iter().map(|&p| pixel_hash(black_box(p)).unwrap().0).fold(0i64, i64::wrapping_add))
    });
    let set = tiles(1, 20, 50);
    c.bench_function("dedup 20 tiles of 50x50", |b| {
        b.iter(|| dedup_stream(black_box(set.clone()), &mut Deduplicator::new()).unwrap())
    });
}

fn gp(c: &mut Criterion) {
    let set = tiles(2, 8, 12);
    let refs: Vec<&ContextWindow> = set.iter().collect();
    let cfg = TrainConfig { inducing: 64, ..TrainConfig::default() };
    let model = init_model(&refs, &cfg).unwrap();
    let mut rng = SplitMix64::new(3);
    let masked: Vec<_> = refs.iter().map(|&w| (w, sample_mask(NUM_MINERALS, 12, 0.8, &mut rng))).collect();
    let batch = assemble_batch(&model, &masked).unwrap();
    let rule = GaussHermite::default();
    c.bench_function("elbo_grad 8 tiles of 12x12, E=64", |b| {
        b.iter(|| model.elbo_grad(black_box(&batch), 1e4, &rule).unwrap())
    });

    let window = &tiles(4, 1, 50)[0];
    let input = ModelInput::new(window, &sample_mask(NUM_MINERALS, 50, 0.8, &mut rng)).unwrap();
    let predictor = model.predictor().unwrap();
    c.bench_function("predict 50x50 window, E=64", |b| b.iter(|| predictor.predict(black_box(&input)).unwrap()));
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = hashing, gp
}
criterion_main!(benches);
