use camul_core::inference::{encode_inputs, sample_encoded};
use camul_core::model::PassMode;
use camul_core::nn::{GaussianVar, Session};
use camul_core::noise::ZeroNoise;
use camul_core::preprocessing::{make_synthetic_panel, ReferencePolicy, SyntheticConfig};
use camul_core::vscg::EdgeMode;
use camul_core::{
    prepare, sample_forecasts, CamulModel, InferenceConfig, ModelConfig, NoiseKind, PreparedData, SplitConfig,
    TrainingInstance,
};

fn setup(single_view: bool) -> (CamulModel, PreparedData) {
    let synthetic =
        make_synthetic_panel(&SyntheticConfig { n_series: 4, length: 60, ..SyntheticConfig::default() }).unwrap();
    let dataset = if single_view { synthetic.dataset.select_views(&[]).unwrap() } else { synthetic.dataset };
    let split = SplitConfig {
        test_len: 8,
        window: 6,
        horizon: 1,
        count_per_series: 4,
        validation_fraction: 0.0,
        reference_policy: ReferencePolicy::Tail(12),
        seed: 0,
    };
    let prepared = prepare(&dataset, &split).unwrap();
    let config = ModelConfig {
        latent_dim: 4,
        hidden: 6,
        window: 6,
        reference_policy: ReferencePolicy::Tail(12),
        ..ModelConfig::default()
    };
    (CamulModel::new(config, &prepared.dataset.views, 7).unwrap(), prepared)
}

fn column_stats(col: &[f64]) -> (f64, f64) {
    let n = col.len() as f64;
    let mean = col.iter().sum::<f64>() / n;
    (mean, (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt())
}

#[test]
fn collapsed_noise_gives_identical_draws() {
    let (model, prepared) = setup(false);
    let cfg = InferenceConfig { noise: NoiseKind::Zero, ..InferenceConfig::for_model(&model, 25, 0) };
    let ens = sample_forecasts(&model, &prepared.test, &prepared.refs, &prepared.scaler, &cfg).unwrap();
    for i in 0..ens.len() {
        let cell = ens.cell(i);
        assert!(cell.iter().all(|&v| v == cell[0]), "cell {i}: {cell:?}");
    }
}

#[test]
fn ensemble_mean_stabilizes_with_more_draws() {
    let (model, prepared) = setup(false);
    let small = sample_forecasts(
        &model,
        &prepared.test,
        &prepared.refs,
        &prepared.scaler,
        &InferenceConfig::for_model(&model, 2000, 1),
    )
    .unwrap();
    let large = sample_forecasts(
        &model,
        &prepared.test,
        &prepared.refs,
        &prepared.scaler,
        &InferenceConfig::for_model(&model, 4000, 2),
    )
    .unwrap();
    for i in 0..small.len() {
        let (m1, sd) = column_stats(&small.cell(i));
        let (m2, _) = column_stats(&large.cell(i));
        let bound = 2.0 * (sd / 2000f64.sqrt()) * 3.0;
        assert!((m1 - m2).abs() < bound, "cell {i}: {m1} vs {m2}, bound {bound}");
    }
}

#[test]
fn single_view_with_fixed_latents_reduces_to_the_decoder_gaussian() {
    let (mut model, prepared) = setup(true);
    assert_eq!(model.num_views(), 1);
    // Aggregated view latent with negligible spread.
    let last = model.vscg[0].l_sigma.layers.last().unwrap().clone();
    model.params.get_mut(last.weight).fill(0.0);
    model.params.get_mut(last.bias).fill(-200.0);

    let instances: Vec<TrainingInstance> = prepared.test.iter().take(3).cloned().collect();
    let mut encoded = encode_inputs(&model, &instances, &prepared.refs).unwrap();
    for (_, log_std) in encoded.inputs.iter_mut().chain(encoded.refs.iter_mut()) {
        log_std.fill(-200.0);
    }
    let cfg = InferenceConfig { edges: EdgeMode::Soft, ..InferenceConfig::new(10_000, 3) };
    let (draws, _) = sample_encoded(&model, &encoded, &cfg);

    // Decoder Gaussian at the deterministic latents.
    let s = Session::new(&model.params);
    let leaf = |(m, l): &(ndarray::Array2<f64>, ndarray::Array2<f64>)| GaussianVar {
        mean: s.leaf(m.clone()),
        log_std: s.leaf(l.clone()),
    };
    let inputs: Vec<GaussianVar> = encoded.inputs.iter().map(leaf).collect();
    let refs: Vec<GaussianVar> = encoded.refs.iter().map(leaf).collect();
    let pass = model.generative(&s, &inputs, &refs, PassMode::Infer { edges: EdgeMode::Soft }, &mut ZeroNoise);
    let (mu, log_std) = (s.value(pass.output.mean), s.value(pass.output.log_std));

    for i in 0..instances.len() {
        let (mean, std) = column_stats(&draws.column(i).to_vec());
        let sigma = log_std[[i, 0]].exp();
        assert!((mean - mu[[i, 0]]).abs() < 0.02 * sigma, "cell {i}: mean {mean} vs {}", mu[[i, 0]]);
        assert!((std / sigma - 1.0).abs() < 0.02, "cell {i}: std {std} vs {sigma}");
    }
}
