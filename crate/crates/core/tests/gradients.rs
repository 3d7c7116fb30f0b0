use camul_core::noise::RngNoise;
use camul_core::preprocessing::{make_synthetic_panel, ReferencePolicy, SyntheticConfig};
use camul_core::training::loss_and_grads;
use camul_core::{prepare, CamulModel, ModelConfig, PreparedData, SplitConfig, TrainingInstance};

const EPS: f64 = 1e-5;
const NOISE_SEED: u64 = 11;

fn tiny() -> (CamulModel, PreparedData) {
    let synthetic = make_synthetic_panel(&SyntheticConfig {
        n_series: 4,
        length: 40,
        period: 4,
        noise_view: false,
        graph_view: false,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let split = SplitConfig {
        test_len: 8,
        window: 6,
        horizon: 1,
        count_per_series: 3,
        validation_fraction: 0.0,
        reference_policy: ReferencePolicy::FullSeries,
        seed: 0,
    };
    let prepared = prepare(&synthetic.dataset, &split).unwrap();
    let config = ModelConfig { latent_dim: 3, hidden: 4, window: 6, ..ModelConfig::default() };
    let model = CamulModel::new(config, &prepared.dataset.views, 3).unwrap();
    (model, prepared)
}

fn loss(model: &CamulModel, batch: &[&TrainingInstance], prepared: &PreparedData) -> f64 {
    loss_and_grads(model, batch, &prepared.refs, &mut RngNoise::new(NOISE_SEED)).unwrap().0
}

fn group(name: &str) -> &'static str {
    const GROUPS: [&str; 8] =
        ["encoder", "rho_raw", "l_mu", "l_sigma", "selection.h1", "selection.h2", "decoder", "posterior"];
    GROUPS.iter().find(|g| name.contains(*g)).copied().unwrap_or("other")
}

#[test]
fn elbo_gradients_match_central_differences_for_every_parameter() {
    let (mut model, prepared) = tiny();
    assert_eq!(model.num_views(), 2);
    assert_eq!(prepared.refs.iter().map(|r| r.len()).collect::<Vec<_>>(), vec![4, 4]);
    let batch: Vec<&TrainingInstance> = prepared.train.iter().take(5).collect();

    let (_, grads) = loss_and_grads(&model, &batch, &prepared.refs, &mut RngNoise::new(NOISE_SEED)).unwrap();
    let mut checked = std::collections::BTreeMap::<&str, usize>::new();
    let mut worst = (0.0_f64, String::new());
    for p in 0..model.params.len() {
        let name = model.params.entries()[p].name.clone();
        let shape = model.params.entries()[p].value.raw_dim();
        for ix in ndarray::indices(shape) {
            let original = model.params.entries()[p].value[ix];
            model.params.entries_mut()[p].value[ix] = original + EPS;
            let up = loss(&model, &batch, &prepared);
            model.params.entries_mut()[p].value[ix] = original - EPS;
            let down = loss(&model, &batch, &prepared);
            model.params.entries_mut()[p].value[ix] = original;

            let numeric = (up - down) / (2.0 * EPS);
            let analytic = grads[p][ix];
            let scale = analytic.abs().max(numeric.abs());
            if scale < 1e-6 {
                continue;
            }
            let rel = (analytic - numeric).abs() / scale;
            if rel > worst.0 {
                worst = (rel, format!("{name}{ix:?}: analytic {analytic} numeric {numeric}"));
            }
            *checked.entry(group(&name)).or_default() += 1;
        }
    }
    assert!(worst.0 < 1e-4, "worst relative error {:.3e} at {}", worst.0, worst.1);
    for g in ["encoder", "rho_raw", "l_mu", "l_sigma", "selection.h1", "selection.h2", "decoder", "posterior"] {
        assert!(checked.get(g).copied().unwrap_or(0) > 0, "no nonzero gradient checked for {g}: {checked:?}");
    }
}
