use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use moodsense::geo::{cluster_dbscan, cluster_kmeans_adaptive, cluster_time_based, haversine, preprocess};
use moodsense::model::{train, Lstm, ReluPlacement, TrainConfig, TrainExample};
use moodsense::pipeline::extract_subject;
use moodsense::synth::{generate, SynthConfig};
use moodsense::{GeoPoint, GpsFix, N_FEATURES};

fn cohort() -> moodsense::synth::SynthCohort {
    generate(&SynthConfig {
        n_subjects: 10,
        n_weeks: 4,
        seed: 3,
        ..Default::default()
    })
    .unwrap()
}

fn geo(c: &mut Criterion) {
    let a = GeoPoint { lat: 48.137, lon: 11.575 };
    let b = GeoPoint { lat: 52.52, lon: 13.405 };
    c.bench_function("haversine", |bench| bench.iter(|| haversine(std::hint::black_box(a), std::hint::black_box(b))));

    let cohort = cohort();
    let cutoff = cohort.truth.accuracy_cutoff;
    let fixes: &[GpsFix] = &cohort.logs[0].gps;
    let stationary = preprocess(fixes, cutoff).stationary;
    let mut g = c.benchmark_group("cluster_4_weeks");
    g.bench_function("time_based", |bench| bench.iter(|| cluster_time_based(&stationary, 40.0, 900.0)));
    g.bench_function("kmeans", |bench| bench.iter(|| cluster_kmeans_adaptive(&stationary, 500.0, 0)));
    g.bench_function("dbscan", |bench| bench.iter(|| cluster_dbscan(&stationary, 30.0, 3)));
    g.finish();

    let params = moodsense::ClusterParams::default_for(moodsense::Algorithm::TimeBased);
    c.bench_function("extract_subject_4_weeks", |bench| {
        bench.iter(|| extract_subject(&cohort.logs[0], Some(cutoff), &params))
    });
}

fn week(rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..7).map(|_| (0..N_FEATURES).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
}

fn lstm(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let model = Lstm::init_uniform(N_FEATURES, 4, ReluPlacement::Output, &mut rng);
    let seq = week(&mut rng);
    c.bench_function("lstm_forward_week", |bench| bench.iter(|| model.forward(&seq).unwrap()));
    let cache = model.forward(&seq).unwrap();
    c.bench_function("lstm_backward_week", |bench| bench.iter(|| model.backward(&cache, 10.0)));

    let examples: Vec<TrainExample> = (0..300)
        .map(|_| TrainExample {
            inputs: week(&mut rng),
            target: rng.gen_range(0.0..27.0),
        })
        .collect();
    let config = TrainConfig {
        epochs: 5,
        ..Default::default()
    };
    let mut g = c.benchmark_group("train");
    g.sample_size(10);
    g.bench_function("300_weeks_5_epochs", |bench| {
        bench.iter_batched(|| examples.clone(), |ex| train(&ex, &config).unwrap(), BatchSize::LargeInput)
    });
    g.finish();
}

criterion_group!(benches, geo, lstm);
criterion_main!(benches);
