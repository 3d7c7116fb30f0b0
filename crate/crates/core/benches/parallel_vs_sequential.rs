use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use camul_core::metrics::{evaluate, Cell, MetricConfig};
use camul_core::preprocessing::{make_synthetic_panel, ReferencePolicy, SyntheticConfig};
use camul_core::{prepare, sample_forecasts, CamulModel, Execution, InferenceConfig, ModelConfig, SplitConfig};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn bench_sampling(c: &mut Criterion) {
    let data = make_synthetic_panel(&SyntheticConfig::default()).unwrap();
    let policy = ReferencePolicy::Tail(48);
    let split = SplitConfig {
        test_len: 24,
        window: 10,
        horizon: 1,
        count_per_series: 20,
        validation_fraction: 0.1,
        reference_policy: policy,
        seed: 0,
    };
    let prepared = prepare(&data.dataset, &split).unwrap();
    let config = ModelConfig { latent_dim: 16, hidden: 32, reference_policy: policy, ..ModelConfig::default() };
    let model = CamulModel::new(config, &prepared.dataset.views, 0).unwrap();

    let mut group = c.benchmark_group("sample_forecasts");
    group.sample_size(10);
    for (name, exec) in MODES {
        let cfg = InferenceConfig { execution: exec, ..InferenceConfig::for_model(&model, 200, 0) };
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| sample_forecasts(&model, &prepared.test, &prepared.refs, &prepared.scaler, &cfg).unwrap())
        });
    }
    group.finish();
}

fn bench_metrics(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let cells: Vec<(String, Vec<f64>, f64)> = (0..400)
        .map(|i| {
            let samples = (0..1000).map(|_| rng.sample(StandardNormal)).collect();
            (format!("s{}", i % 8), samples, rng.sample(StandardNormal))
        })
        .collect();
    let view: Vec<Cell> = cells
        .iter()
        .enumerate()
        .map(|(i, (id, samples, truth))| Cell {
            series_id: id,
            target_index: i,
            samples: samples.clone(),
            truth: *truth,
            is_scale: (0.0, 1.0),
        })
        .collect();
    let config = MetricConfig::default();

    let mut group = c.benchmark_group("evaluate");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| evaluate(&view, &config, exec).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, bench_sampling, bench_metrics);
criterion_main!(benches);
