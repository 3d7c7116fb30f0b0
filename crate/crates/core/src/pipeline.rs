//! Turns a raw dataset into scaled training, validation and test instances
//! plus reference sets, using a time split so nothing after the training cut
//! leaks into fitting.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{validate_dataset, Dataset, ReferenceSet, TrainingInstance, ViewData};
use crate::error::{CamulError, Result};
use crate::preprocessing::{
    attach_view_payloads, build_reference_sets, fit_scaler, latest_instances, rolling_instances, shingle, standardize,
    ReferencePolicy, Scaler,
};

/// Mixed into the split seed so the validation holdout does not reuse the
/// shingling stream.
const HOLDOUT_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    /// Trailing steps held out for testing.
    pub test_len: usize,
    pub window: usize,
    pub horizon: usize,
    pub count_per_series: usize,
    pub validation_fraction: f64,
    pub reference_policy: ReferencePolicy,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct PreparedData {
    /// Scaled dataset over the full time range.
    pub dataset: Dataset,
    pub scaler: Scaler,
    pub train_len: usize,
    pub train: Vec<TrainingInstance>,
    pub validation: Vec<TrainingInstance>,
    /// Windows whose targets fall in the held-out tail.
    pub test: Vec<TrainingInstance>,
    pub refs: Vec<ReferenceSet>,
}

fn truncate_dataset(dataset: &Dataset, len: usize) -> Result<Dataset> {
    Ok(Dataset { panel: dataset.panel.truncate(len)?, views: dataset.views.iter().map(|v| v.truncate(len)).collect() })
}

/// Splits a list into (kept, held-out) with `fraction` of it held out at random.
fn holdout<T: Clone>(items: Vec<T>, fraction: f64, rng: &mut ChaCha8Rng) -> (Vec<T>, Vec<T>) {
    let n = items.len();
    let mut n_out = (fraction * n as f64).round() as usize;
    if fraction > 0.0 && n >= 2 {
        n_out = n_out.clamp(1, n - 1);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut out_idx = order[..n_out].to_vec();
    out_idx.sort_unstable();
    let mut keep = Vec::with_capacity(n - n_out);
    let mut out = Vec::with_capacity(n_out);
    for (i, item) in items.into_iter().enumerate() {
        if out_idx.binary_search(&i).is_ok() {
            out.push(item);
        } else {
            keep.push(item);
        }
    }
    (keep, out)
}

pub fn prepare(dataset: &Dataset, split: &SplitConfig) -> Result<PreparedData> {
    let total = dataset.panel.len();
    if split.test_len >= total {
        return Err(CamulError::InvalidConfig(format!(
            "test_len {} leaves no training data in series of length {total}",
            split.test_len
        )));
    }
    if !(0.0..1.0).contains(&split.validation_fraction) {
        return Err(CamulError::InvalidConfig("validation_fraction must lie in [0, 1)".into()));
    }
    let train_len = total - split.test_len;
    let raw_train = truncate_dataset(dataset, train_len)?;
    let train_values: Vec<f64> = raw_train.panel.values.iter().copied().collect();
    let scaler = fit_scaler(&train_values)?;

    let scaled = standardize(dataset, &scaler)?;
    let scaled_train = truncate_dataset(&scaled, train_len)?;
    let refs = build_reference_sets(&scaled_train.views, &scaled_train.panel, split.reference_policy)?;
    validate_dataset(&scaled.panel, &scaled.views, &refs).into_result()?;

    let mut chunks = shingle(&scaled_train.panel, split.window, split.horizon, split.count_per_series, split.seed)?;
    attach_view_payloads(&mut chunks, &scaled_train.views)?;
    let mut rng = ChaCha8Rng::seed_from_u64(split.seed ^ HOLDOUT_SALT);
    let (train, validation) = holdout(chunks, split.validation_fraction, &mut rng);

    let mut test = rolling_instances(&scaled.panel, split.window, split.horizon, train_len..total)?;
    attach_view_payloads(&mut test, &scaled.views)?;

    Ok(PreparedData { dataset: scaled, scaler, train_len, train, validation, test, refs })
}

/// Windows ending at the last observed step, for forecasting past the data.
pub fn forecast_instances(prepared: &PreparedData, window: usize, horizon: usize) -> Result<Vec<TrainingInstance>> {
    let mut latest = latest_instances(&prepared.dataset.panel, window, horizon)?;
    let views: Vec<ViewData> = prepared.dataset.views.clone();
    attach_view_payloads(&mut latest, &views)?;
    Ok(latest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocessing::{make_synthetic_panel, SyntheticConfig};

    fn split() -> SplitConfig {
        SplitConfig {
            test_len: 48,
            window: 10,
            horizon: 1,
            count_per_series: 20,
            validation_fraction: 0.1,
            reference_policy: ReferencePolicy::FullSeries,
            seed: 0,
        }
    }

    #[test]
    fn split_respects_the_time_cut() {
        let data = make_synthetic_panel(&SyntheticConfig::default()).unwrap();
        let p = prepare(&data.dataset, &split()).unwrap();
        assert_eq!(p.train_len, 192);
        assert_eq!(p.train.len() + p.validation.len(), 8 * 20);
        assert_eq!(p.validation.len(), 16);
        assert!(p.train.iter().chain(&p.validation).all(|i| i.target_index < 192));
        assert!(p.test.iter().all(|i| (192..240).contains(&i.target_index)));
        assert_eq!(p.test.len(), 8 * 48);
        assert!(p.test.iter().all(|i| i.view_payloads.len() == p.dataset.views.len()));
        // References only see the training range.
        match &p.refs[0].points[0] {
            crate::data::Payload::Sequence(m) => assert_eq!(m.nrows(), 192),
            other => panic!("unexpected payload {other:?}"),
        }
        let train_vals: Vec<f64> = p.dataset.panel.values.slice(ndarray::s![.., ..192]).iter().copied().collect();
        let mean = train_vals.iter().sum::<f64>() / train_vals.len() as f64;
        assert!(mean.abs() < 1e-9);
    }

    #[test]
    fn split_is_seeded() {
        let data = make_synthetic_panel(&SyntheticConfig::default()).unwrap();
        let a = prepare(&data.dataset, &split()).unwrap();
        let b = prepare(&data.dataset, &split()).unwrap();
        assert_eq!(a.validation, b.validation);
        let c = prepare(&data.dataset, &SplitConfig { seed: 1, ..split() }).unwrap();
        assert_ne!(a.validation, c.validation);
    }

    #[test]
    fn forecast_windows_end_at_the_last_step() {
        let data = make_synthetic_panel(&SyntheticConfig::default()).unwrap();
        let p = prepare(&data.dataset, &split()).unwrap();
        let f = forecast_instances(&p, 10, 2).unwrap();
        assert_eq!(f.len(), 8);
        assert!(f.iter().all(|i| i.window_end() == 239 && i.target_index == 241));
    }
}
