//! Standardization, shingling of long series into training windows, reference
//! set construction and a synthetic multi-view generator.

use std::collections::BTreeMap;
use std::ops::Range;

use log::warn;
use ndarray::Array2;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::Mat;
use crate::data::{
    build_default_view, Dataset, EncoderConfig, GraphStructure, Modality, Payload, ReferenceSet, SeriesPanel, Track,
    TrainingInstance, ViewData, ViewSpec,
};
use crate::error::{CamulError, Result};

/// Lower bound on a fitted standard deviation.
pub const SCALER_EPS: f64 = 1e-8;

/// Default shingle width.
pub const DEFAULT_WINDOW: usize = 10;

/// Per-feature affine standardization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Scaler {
    /// Fits one (mean, population std) pair per column of `values`.
    pub fn fit(values: &Mat) -> Result<Self> {
        if values.nrows() < 2 {
            return Err(CamulError::Empty("scaler needs at least 2 values per feature".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(CamulError::Validation("scaler input contains non-finite values".into()));
        }
        let n = values.nrows() as f64;
        let mut mean = Vec::with_capacity(values.ncols());
        let mut std = Vec::with_capacity(values.ncols());
        for (f, col) in values.columns().into_iter().enumerate() {
            let m = col.sum() / n;
            let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
            let mut sd = var.sqrt();
            if sd < SCALER_EPS {
                warn!("feature {f} is constant; std floored at {SCALER_EPS}");
                sd = SCALER_EPS;
            }
            mean.push(m);
            std.push(sd);
        }
        Ok(Self { mean, std })
    }

    pub fn identity(features: usize) -> Self {
        Self { mean: vec![0.0; features], std: vec![1.0; features] }
    }

    pub fn apply_value(&self, feature: usize, x: f64) -> f64 {
        (x - self.mean[feature]) / self.std[feature]
    }

    pub fn invert_value(&self, feature: usize, z: f64) -> f64 {
        z * self.std[feature] + self.mean[feature]
    }

    /// Applies feature 0 to every value.
    pub fn apply(&self, values: &[f64]) -> Vec<f64> {
        values.iter().map(|&v| self.apply_value(0, v)).collect()
    }

    pub fn invert(&self, values: &[f64]) -> Vec<f64> {
        values.iter().map(|&v| self.invert_value(0, v)).collect()
    }

    /// Applies column-wise to a `rows × features` matrix.
    pub fn apply_matrix(&self, m: &Mat) -> Mat {
        let mut out = m.clone();
        for (f, mut col) in out.columns_mut().into_iter().enumerate() {
            col.mapv_inplace(|v| self.apply_value(f, v));
        }
        out
    }
}

/// Fits a single-feature scaler.
pub fn fit_scaler(training_values: &[f64]) -> Result<Scaler> {
    let m = Array2::from_shape_vec((training_values.len(), 1), training_values.to_vec()).expect("column shape");
    Scaler::fit(&m)
}

/// Largest valid zero-based window start (inclusive) for a length-`len` series.
///
/// Starts are drawn from the one-based interval `[1, T - W - 1]` and the target
/// `τ` steps past the window end must stay inside the series.
fn max_start(len: usize, window: usize, horizon: usize) -> Option<usize> {
    let by_interval = len.checked_sub(window + 1)?;
    let by_target = (len + 1).checked_sub(window + horizon)?;
    let one_based = by_interval.min(by_target);
    one_based.checked_sub(1)
}

fn make_instance(panel: &SeriesPanel, series: usize, start: usize, window: usize, horizon: usize) -> TrainingInstance {
    let row = panel.series(series);
    let target_index = start + window - 1 + horizon;
    let window_values = row.slice(ndarray::s![start..start + window]).to_vec();
    let mut view_payloads = BTreeMap::new();
    view_payloads
        .insert(1, Payload::Sequence(Array2::from_shape_vec((window, 1), window_values.clone()).expect("window")));
    TrainingInstance {
        series_id: panel.series_ids[series].clone(),
        series_index: series,
        start,
        window: window_values,
        target_index,
        target: row[target_index],
        view_payloads,
    }
}

/// Samples up to `count_per_series` distinct windows of width `window` per series,
/// each paired with the value `horizon` steps after the window end.
pub fn shingle(
    panel: &SeriesPanel,
    window: usize,
    horizon: usize,
    count_per_series: usize,
    seed: u64,
) -> Result<Vec<TrainingInstance>> {
    if window == 0 || horizon == 0 {
        return Err(CamulError::InvalidConfig("window and horizon must be positive".into()));
    }
    let required = window + horizon + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for i in 0..panel.n_series() {
        let last = match max_start(panel.len(), window, horizon) {
            Some(last) if panel.len() >= required => last,
            _ => {
                return Err(CamulError::SeriesTooShort {
                    series: panel.series_ids[i].clone(),
                    len: panel.len(),
                    required,
                })
            }
        };
        let mut starts: Vec<usize> = (0..=last).collect();
        starts.shuffle(&mut rng);
        starts.truncate(count_per_series);
        starts.sort_unstable();
        out.extend(starts.into_iter().map(|s| make_instance(panel, i, s, window, horizon)));
    }
    Ok(out)
}

/// Every window whose target index lies in `targets`, in (series, target) order.
pub fn rolling_instances(
    panel: &SeriesPanel,
    window: usize,
    horizon: usize,
    targets: Range<usize>,
) -> Result<Vec<TrainingInstance>> {
    let first = window - 1 + horizon;
    if targets.end > panel.len() {
        return Err(CamulError::InvalidConfig(format!(
            "target range ends at {} beyond series length {}",
            targets.end,
            panel.len()
        )));
    }
    let mut out = Vec::new();
    for i in 0..panel.n_series() {
        for target in targets.clone().filter(|&t| t >= first) {
            out.push(make_instance(panel, i, target - first, window, horizon));
        }
    }
    Ok(out)
}

/// The window ending at the last observed step of each series, for forecasting
/// beyond the data. The target is unknown and set to NaN.
pub fn latest_instances(panel: &SeriesPanel, window: usize, horizon: usize) -> Result<Vec<TrainingInstance>> {
    if panel.len() < window {
        return Err(CamulError::SeriesTooShort {
            series: panel.series_ids[0].clone(),
            len: panel.len(),
            required: window,
        });
    }
    let start = panel.len() - window;
    Ok((0..panel.n_series())
        .map(|i| {
            let row = panel.series(i);
            let values = row.slice(ndarray::s![start..]).to_vec();
            let mut view_payloads = BTreeMap::new();
            view_payloads
                .insert(1, Payload::Sequence(Array2::from_shape_vec((window, 1), values.clone()).expect("window")));
            TrainingInstance {
                series_id: panel.series_ids[i].clone(),
                series_index: i,
                start,
                window: values,
                target_index: start + window - 1 + horizon,
                target: f64::NAN,
                view_payloads,
            }
        })
        .collect())
}

/// Fills in the payload of every non-default view for each instance.
pub fn attach_view_payloads(instances: &mut [TrainingInstance], views: &[ViewData]) -> Result<()> {
    for inst in instances.iter_mut() {
        let len = inst.window.len();
        for view in views.iter().filter(|v| !v.spec.is_default) {
            let payload = view.track(&inst.series_id)?.window_payload(inst.start, len)?;
            inst.view_payloads.insert(view.view_id(), payload);
        }
    }
    Ok(())
}

/// How sequence views choose their reference points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferencePolicy {
    /// Each complete series is one reference point.
    #[default]
    FullSeries,
    /// The last `n` steps of each series.
    Tail(usize),
}

/// One reference set per view:
///
/// | modality    | points                                  |
/// |-------------|-----------------------------------------|
/// | sequence    | one per series (its whole track)        |
/// | categorical | one per vocabulary entry                |
/// | graph       | one per node                            |
/// | static      | one per distinct feature vector         |
pub fn build_reference_sets(
    views: &[ViewData],
    panel: &SeriesPanel,
    policy: ReferencePolicy,
) -> Result<Vec<ReferenceSet>> {
    views
        .iter()
        .map(|view| {
            let points = match view.modality() {
                Modality::Sequence => panel
                    .series_ids
                    .iter()
                    .map(|id| match view.track(id)? {
                        Track::Series(m) => {
                            let from = match policy {
                                ReferencePolicy::FullSeries => 0,
                                ReferencePolicy::Tail(n) => m.nrows().saturating_sub(n),
                            };
                            Ok(Payload::Sequence(m.slice(ndarray::s![from.., ..]).to_owned()))
                        }
                        _ => {
                            Err(CamulError::Validation(format!("sequence view {} needs series tracks", view.view_id())))
                        }
                    })
                    .collect::<Result<Vec<_>>>()?,
                Modality::Categorical | Modality::Graph => {
                    let n = view.vocab_size().unwrap_or(0);
                    if n == 0 {
                        return Err(CamulError::Empty(format!("view {} has an empty vocabulary", view.view_id())));
                    }
                    (0..n)
                        .map(|i| match view.modality() {
                            Modality::Graph => Payload::Graph(i),
                            _ => Payload::Categorical(i),
                        })
                        .collect()
                }
                Modality::Static => {
                    let mut seen: Vec<Vec<u64>> = Vec::new();
                    let mut points = Vec::new();
                    for id in &panel.series_ids {
                        let payloads: Vec<Payload> = match view.track(id)? {
                            Track::PerStep(v) => v.clone(),
                            Track::Constant(p) => vec![p.clone()],
                            Track::Series(_) => {
                                return Err(CamulError::Validation(format!(
                                    "static view {} cannot use a series track",
                                    view.view_id()
                                )))
                            }
                        };
                        for p in payloads {
                            if let Payload::Static(v) = &p {
                                let key: Vec<u64> = v.iter().map(|x| x.to_bits()).collect();
                                if !seen.contains(&key) {
                                    seen.push(key);
                                    points.push(p);
                                }
                            }
                        }
                    }
                    if points.is_empty() {
                        return Err(CamulError::Empty(format!("static view {} has no payloads", view.view_id())));
                    }
                    points
                }
            };
            Ok(ReferenceSet { view_id: view.view_id(), points })
        })
        .collect()
}

/// Synthetic seasonal-plus-noise panel with auxiliary views.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub n_series: usize,
    pub length: usize,
    pub noise_std: f64,
    pub period: usize,
    /// Amplitude of the seasonal component; with `noise_std` it sets the
    /// signal-to-noise ratio of the informative phase view.
    pub seasonal_amplitude: f64,
    /// Adds a static view whose payloads are independent of the target.
    pub noise_view: bool,
    /// Adds a ring-graph view over the series.
    pub graph_view: bool,
    /// Number of distinct vectors the noise view draws from.
    pub noise_pool: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_series: 8,
            length: 240,
            noise_std: 0.2,
            period: 12,
            seasonal_amplitude: 1.0,
            noise_view: true,
            graph_view: true,
            noise_pool: 6,
            seed: 0,
        }
    }
}

pub struct SyntheticData {
    pub dataset: Dataset,
    pub refs: Vec<ReferenceSet>,
    /// Standard deviation of the additive generative noise.
    pub noise_std: f64,
}

/// Series `i` follows `level_i + amp_i · sin(2π t / p) + noise`. Views:
///
/// 1. default view (the targets);
/// 2. categorical phase `t mod p`, informative about the season;
/// 3. optional static view of vectors drawn independently of the target;
/// 4. optional ring graph over the series with one-hot node features.
pub fn make_synthetic_panel(config: &SyntheticConfig) -> Result<SyntheticData> {
    if config.n_series == 0 || config.length < 2 || config.period == 0 {
        return Err(CamulError::InvalidConfig("synthetic panel needs n_series > 0, length >= 2, period > 0".into()));
    }
    if !(config.noise_std >= 0.0) {
        return Err(CamulError::InvalidConfig("noise std must be nonnegative".into()));
    }
    let (n, t, p) = (config.n_series, config.length, config.period);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let ids: Vec<String> = (0..n).map(|i| format!("s{i:02}")).collect();

    let mut values = Mat::zeros((n, t));
    for i in 0..n {
        let frac = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };
        let level = 1.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).sin();
        let amp = config.seasonal_amplitude * (0.8 + 0.4 * frac);
        for step in 0..t {
            let phase = 2.0 * std::f64::consts::PI * (step % p) as f64 / p as f64;
            let eps: f64 = rng.sample(StandardNormal);
            values[[i, step]] = level + amp * phase.sin() + config.noise_std * eps;
        }
    }
    let panel = SeriesPanel::from_rows(ids.clone(), values)?;

    let mut views = Vec::new();
    let phase_track = Track::PerStep((0..t).map(|s| Payload::Categorical(s % p)).collect());
    views.push(ViewData {
        spec: ViewSpec {
            view_id: 2,
            modality: Modality::Categorical,
            is_default: false,
            encoder: EncoderConfig { vocab_size: Some(p), ..Default::default() },
        },
        tracks: ids.iter().map(|id| (id.clone(), phase_track.clone())).collect(),
        graph: None,
    });

    if config.noise_view {
        let dim = 2;
        let pool: Vec<Vec<f64>> =
            (0..config.noise_pool.max(1)).map(|_| (0..dim).map(|_| rng.sample(StandardNormal)).collect()).collect();
        let tracks = ids
            .iter()
            .map(|id| {
                let steps = (0..t).map(|_| Payload::Static(pool.choose(&mut rng).expect("pool").clone())).collect();
                (id.clone(), Track::PerStep(steps))
            })
            .collect();
        views.push(ViewData {
            spec: ViewSpec {
                view_id: views.len() + 2,
                modality: Modality::Static,
                is_default: false,
                encoder: EncoderConfig { feature_dim: dim, ..Default::default() },
            },
            tracks,
            graph: None,
        });
    }

    if config.graph_view {
        let mut adjacency = Mat::zeros((n, n));
        if n > 1 {
            for i in 0..n {
                let next = (i + 1) % n;
                if next != i {
                    adjacency[[i, next]] = 1.0;
                    adjacency[[next, i]] = 1.0;
                }
            }
        }
        views.push(ViewData {
            spec: ViewSpec {
                view_id: views.len() + 2,
                modality: Modality::Graph,
                is_default: false,
                encoder: EncoderConfig { feature_dim: n, ..Default::default() },
            },
            tracks: ids.iter().enumerate().map(|(i, id)| (id.clone(), Track::Constant(Payload::Graph(i)))).collect(),
            graph: Some(GraphStructure { adjacency, node_features: Mat::eye(n) }),
        });
    }

    let dataset = Dataset::new(panel, views)?;
    let refs = build_reference_sets(&dataset.views, &dataset.panel, ReferencePolicy::FullSeries)?;
    Ok(SyntheticData { dataset, refs, noise_std: config.noise_std })
}

/// Standardizes the targets (and the default view derived from them) with
/// `scaler`; sequence views with several features use their own fitted scalers.
pub fn standardize(dataset: &Dataset, scaler: &Scaler) -> Result<Dataset> {
    let values = dataset.panel.values.mapv(|v| scaler.apply_value(0, v));
    let panel = SeriesPanel::new(dataset.panel.series_ids.clone(), values, dataset.panel.time_index.clone())?;
    let mut views = vec![build_default_view(&panel)?];
    views.extend(dataset.views.iter().skip(1).cloned());
    Ok(Dataset { panel, views })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand_distr::Distribution;

    #[test]
    fn scaler_two_points() {
        let s = fit_scaler(&[0.0, 2.0]).unwrap();
        assert_eq!(s.mean, vec![1.0]);
        assert_eq!(s.std, vec![1.0]);
        assert_eq!(s.apply(&[0.0, 2.0]), vec![-1.0, 1.0]);
    }

    #[test]
    fn scaler_constant_series_is_floored() {
        let s = fit_scaler(&[5.0, 5.0, 5.0]).unwrap();
        assert_eq!(s.std, vec![SCALER_EPS]);
        assert!(s.apply(&[5.0, 5.0, 5.0]).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scaler_needs_two_values() {
        assert!(fit_scaler(&[1.0]).is_err());
    }

    #[test]
    fn scaler_moments_on_random_sample() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dist = rand_distr::Normal::new(4.0, 2.5).unwrap();
        let xs: Vec<f64> = (0..1000).map(|_| dist.sample(&mut rng)).collect();
        let z = fit_scaler(&xs).unwrap().apply(&xs);
        let mut mean = 0.0;
        for v in &z {
            mean += v;
        }
        mean /= z.len() as f64;
        let mut var = 0.0;
        for v in &z {
            var += (v - mean) * (v - mean);
        }
        let std = (var / z.len() as f64).sqrt();
        assert!(mean.abs() < 1e-6);
        assert!((std - 1.0).abs() < 1e-6);
    }

    #[test]
    fn scaler_round_trip_and_affine_form() {
        let s = fit_scaler(&[1.0, 2.0, 3.0, 7.0]).unwrap();
        let back = s.invert(&s.apply(&[1.0, 2.0, 3.0]));
        for (a, b) in back.iter().zip([1.0, 2.0, 3.0]) {
            assert!((a - b).abs() <= 1e-9 * b);
        }
        for x in [-3.0, 0.0, 0.5, 11.0] {
            assert_eq!(s.apply_value(0, x), (x - s.mean[0]) / s.std[0]);
        }
        assert_eq!(s.invert_value(0, 0.25), 0.25 * s.std[0] + s.mean[0]);
    }

    fn ramp_panel(t: usize) -> SeriesPanel {
        let values = Array2::from_shape_fn((2, t), |(i, s)| (i * 100 + s) as f64);
        SeriesPanel::from_rows(vec!["a".into(), "b".into()], values).unwrap()
    }

    #[test]
    fn shingle_forced_single_window() {
        let panel = ramp_panel(12);
        let inst = shingle(&panel, 10, 1, 50, 0).unwrap();
        assert_eq!(inst.len(), 2);
        for i in &inst {
            assert_eq!(i.start, 0);
            assert_eq!(i.target_index, 10);
            assert_eq!(i.window, (0..10).map(|s| (i.series_index * 100 + s) as f64).collect::<Vec<_>>());
        }
    }

    #[test]
    fn shingle_covers_exactly_the_valid_starts() {
        let panel = ramp_panel(20);
        let (w, tau) = (10, 2);
        // Exhaustive enumeration over one-based starts in [1, T - W - 1].
        let valid: Vec<usize> = (1..=20usize).filter(|&s| s + w < 20 && s + w - 1 + tau <= 20).map(|s| s - 1).collect();
        let inst = shingle(&panel, w, tau, 1000, 9).unwrap();
        let starts: Vec<usize> = inst.iter().filter(|i| i.series_index == 0).map(|i| i.start).collect();
        assert_eq!(starts, valid);
        for i in &inst {
            assert!(i.start + w - 1 + tau < 20);
            assert!(i.target_index > i.window_end());
            assert_eq!(i.target, panel.values[[i.series_index, i.target_index]]);
        }
    }

    #[test]
    fn shingle_is_seed_deterministic() {
        let panel = ramp_panel(60);
        assert_eq!(shingle(&panel, 10, 1, 5, 4).unwrap(), shingle(&panel, 10, 1, 5, 4).unwrap());
        assert_ne!(shingle(&panel, 10, 1, 5, 4).unwrap(), shingle(&panel, 10, 1, 5, 5).unwrap());
    }

    #[test]
    fn shingle_rejects_short_series() {
        let panel = ramp_panel(11);
        match shingle(&panel, 10, 1, 1, 0) {
            Err(CamulError::SeriesTooShort { series, .. }) => assert_eq!(series, "a"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rolling_instances_cover_target_range() {
        let panel = ramp_panel(30);
        let inst = rolling_instances(&panel, 5, 2, 20..30).unwrap();
        assert_eq!(inst.len(), 20);
        assert!(inst.iter().all(|i| (20..30).contains(&i.target_index) && i.start + 6 == i.target_index));
    }

    #[test]
    fn reference_cardinalities_per_modality() {
        let data = make_synthetic_panel(&SyntheticConfig { period: 12, ..Default::default() }).unwrap();
        let sizes: Vec<usize> = data.refs.iter().map(|r| r.len()).collect();
        // default (8 series), phase (12 months), noise pool (6 vectors), ring graph (8 nodes)
        assert_eq!(sizes, vec![8, 12, 6, 8]);
    }

    #[test]
    fn empty_vocabulary_is_an_error() {
        let mut data = make_synthetic_panel(&SyntheticConfig::default()).unwrap().dataset;
        data.views[1].spec.encoder.vocab_size = Some(0);
        assert!(build_reference_sets(&data.views, &data.panel, ReferencePolicy::FullSeries).is_err());
    }

    #[test]
    fn static_references_deduplicate_exact_vectors() {
        let panel = SeriesPanel::from_rows(vec!["a".into(), "b".into()], Mat::zeros((2, 3))).unwrap();
        let same = Payload::Static(vec![1.0, 2.0]);
        let view = ViewData {
            spec: ViewSpec {
                view_id: 2,
                modality: Modality::Static,
                is_default: false,
                encoder: EncoderConfig { feature_dim: 2, ..Default::default() },
            },
            tracks: [
                ("a".to_string(), Track::Constant(same.clone())),
                ("b".to_string(), Track::PerStep(vec![same.clone(), Payload::Static(vec![1.0, 2.5]), same])),
            ]
            .into_iter()
            .collect(),
            graph: None,
        };
        let refs =
            build_reference_sets(&[build_default_view(&panel).unwrap(), view], &panel, ReferencePolicy::FullSeries)
                .unwrap();
        assert_eq!(refs[1].len(), 2);
    }

    #[test]
    fn reference_tail_policy_truncates_sequences() {
        let panel = ramp_panel(30);
        let views = vec![build_default_view(&panel).unwrap()];
        let refs = build_reference_sets(&views, &panel, ReferencePolicy::Tail(7)).unwrap();
        match &refs[0].points[1] {
            Payload::Sequence(m) => assert_eq!(m.column(0).to_vec(), (123..130).map(|v| v as f64).collect::<Vec<_>>()),
            _ => unreachable!(),
        }
    }

    #[test]
    fn noiseless_synthetic_is_periodic() {
        let data =
            make_synthetic_panel(&SyntheticConfig { noise_std: 0.0, period: 7, length: 50, ..Default::default() })
                .unwrap();
        let v = &data.dataset.panel.values;
        for i in 0..v.nrows() {
            for t in 7..v.ncols() {
                assert!((v[[i, t]] - v[[i, t - 7]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn noise_view_is_uncorrelated_with_target() {
        let cfg = SyntheticConfig { n_series: 10, length: 300, ..Default::default() };
        let data = make_synthetic_panel(&cfg).unwrap();
        let noise = &data.dataset.views[2];
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (i, id) in data.dataset.panel.series_ids.iter().enumerate() {
            let Track::PerStep(steps) = &noise.tracks[id] else { panic!() };
            for (t, p) in steps.iter().enumerate() {
                let Payload::Static(v) = p else { panic!() };
                xs.push(v[0]);
                ys.push(data.dataset.panel.values[[i, t]]);
            }
        }
        assert!(xs.len() >= 2000);
        let n = xs.len() as f64;
        let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
        let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let vx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        let vy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
        assert!((cov / (vx * vy).sqrt()).abs() < 0.1);
    }

    #[test]
    fn synthetic_is_seed_pure() {
        let cfg = SyntheticConfig::default();
        let a = make_synthetic_panel(&cfg).unwrap();
        let b = make_synthetic_panel(&cfg).unwrap();
        assert_eq!(a.dataset, b.dataset);
        assert_eq!(a.refs, b.refs);
        let c = make_synthetic_panel(&SyntheticConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(a.dataset.panel, c.dataset.panel);
    }

    #[test]
    fn synthetic_dataset_validates() {
        let data = make_synthetic_panel(&SyntheticConfig::default()).unwrap();
        let report = crate::data::validate_dataset(&data.dataset.panel, &data.dataset.views, &data.refs);
        assert!(report.is_ok(), "{:?}", report.issues);
    }

    #[test]
    fn attached_payloads_follow_window_end() {
        let data = make_synthetic_panel(&SyntheticConfig::default()).unwrap();
        let mut inst = shingle(&data.dataset.panel, 10, 1, 3, 0).unwrap();
        attach_view_payloads(&mut inst, &data.dataset.views).unwrap();
        for i in &inst {
            assert_eq!(i.view_payloads[&2], Payload::Categorical(i.window_end() % 12));
            assert_eq!(i.view_payloads[&4], Payload::Graph(i.series_index));
            assert_eq!(i.view_payloads.len(), 4);
        }
    }

    #[test]
    fn standardize_uses_scaler() {
        let panel = SeriesPanel::from_rows(vec!["a".into()], array![[2.0, 4.0, 6.0]]).unwrap();
        let ds = Dataset::new(panel, vec![]).unwrap();
        let s = fit_scaler(&[2.0, 4.0, 6.0]).unwrap();
        let z = standardize(&ds, &s).unwrap();
        assert!((z.panel.values[[0, 0]] + 1.224744871391589).abs() < 1e-12);
        assert_eq!(z.views[0], build_default_view(&z.panel).unwrap());
    }
}
