//! Monte-Carlo forecasting from a trained model and ensemble summaries.

use serde::{Deserialize, Serialize};

use crate::autodiff::Mat;
use crate::data::{ReferenceSet, TrainingInstance};
use crate::error::{CamulError, Result};
use crate::exec::{map_indexed, Execution};
use crate::metrics::{central_interval, evaluate, quantile_sorted, Cell, EvalResult, MetricConfig};
use crate::model::{batch_inputs, reference_inputs, CamulModel, PassMode};
use crate::nn::{GaussianVar, Session};
use crate::noise::{NoiseSource, RngNoise, ZeroNoise};
use crate::preprocessing::Scaler;
use crate::vscg::EdgeMode;

pub const DEFAULT_SAMPLES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    #[default]
    Random,
    /// Every normal draw is 0 and every uniform 0.5.
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InferenceConfig {
    pub samples: usize,
    pub seed: u64,
    pub edges: EdgeMode,
    pub noise: NoiseKind,
    pub execution: Execution,
}

impl InferenceConfig {
    pub fn new(samples: usize, seed: u64) -> Self {
        Self { samples, seed, edges: EdgeMode::Hard, noise: NoiseKind::Random, execution: Execution::default() }
    }

    pub fn for_model(model: &CamulModel, samples: usize, seed: u64) -> Self {
        Self { edges: model.config.inference_edges(), ..Self::new(samples, seed) }
    }
}

/// Draws for a list of forecast cells, in original units.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastEnsemble {
    pub series_ids: Vec<String>,
    pub target_index: Vec<usize>,
    /// `S × N`.
    pub samples: Mat,
    /// `N × K` attention averaged over draws.
    pub attention: Mat,
}

impl ForecastEnsemble {
    pub fn num_samples(&self) -> usize {
        self.samples.nrows()
    }

    pub fn len(&self) -> usize {
        self.samples.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Draws of cell `i`.
    pub fn cell(&self, i: usize) -> Vec<f64> {
        self.samples.column(i).to_vec()
    }
}

/// Deterministic encodings (mean, log-std) of inputs and references per view.
#[derive(Debug, Clone)]
pub struct EncodedInputs {
    pub inputs: Vec<(Mat, Mat)>,
    pub refs: Vec<(Mat, Mat)>,
}

pub fn encode_inputs(
    model: &CamulModel,
    instances: &[TrainingInstance],
    refs: &[ReferenceSet],
) -> Result<EncodedInputs> {
    let items: Vec<&TrainingInstance> = instances.iter().collect();
    let s = Session::new(&model.params);
    let inputs = model.encode(&s, &batch_inputs(&model.views, &items)?)?;
    let ref_enc = model.encode(&s, &reference_inputs(&model.views, refs)?)?;
    let take = |g: &GaussianVar| (s.value(g.mean), s.value(g.log_std));
    Ok(EncodedInputs { inputs: inputs.iter().map(take).collect(), refs: ref_enc.iter().map(take).collect() })
}

/// Standardized draws `S × N` and mean attention `N × K` from cached encodings.
pub fn sample_encoded(model: &CamulModel, encoded: &EncodedInputs, config: &InferenceConfig) -> (Mat, Mat) {
    let n = encoded.inputs[0].0.nrows();
    let k = model.num_views();
    let draws = map_indexed(config.execution, config.samples, |sample| {
        let mut noise: Box<dyn NoiseSource> = match config.noise {
            NoiseKind::Random => Box::new(RngNoise::substream(config.seed, sample as u64)),
            NoiseKind::Zero => Box::new(ZeroNoise),
        };
        let s = Session::new(&model.params);
        let leaf = |(m, l): &(Mat, Mat)| GaussianVar { mean: s.leaf(m.clone()), log_std: s.leaf(l.clone()) };
        let inputs: Vec<GaussianVar> = encoded.inputs.iter().map(leaf).collect();
        let refs: Vec<GaussianVar> = encoded.refs.iter().map(leaf).collect();
        let pass = model.generative(&s, &inputs, &refs, PassMode::Infer { edges: config.edges }, noise.as_mut());
        let mean = s.value(pass.output.mean);
        let std = s.value(pass.output.log_std).mapv(f64::exp);
        let eps = noise.normal(n, 1);
        let y = &mean + &(&std * &eps);
        (y.column(0).to_vec(), s.value(pass.attention))
    });
    let mut samples = Mat::zeros((config.samples, n));
    let mut attention = Mat::zeros((n, k));
    for (i, (y, a)) in draws.into_iter().enumerate() {
        samples.row_mut(i).assign(&ndarray::Array1::from(y));
        attention += &a;
    }
    if config.samples > 0 {
        attention /= config.samples as f64;
    }
    (samples, attention)
}

/// Monte-Carlo forecasts for `instances`: every draw re-samples encoder
/// latents, hard edges, view latents and the output, then inverse-scales.
pub fn sample_forecasts(
    model: &CamulModel,
    instances: &[TrainingInstance],
    refs: &[ReferenceSet],
    scaler: &Scaler,
    config: &InferenceConfig,
) -> Result<ForecastEnsemble> {
    if config.samples == 0 {
        return Err(CamulError::InvalidConfig("sample count must be positive".into()));
    }
    if instances.is_empty() {
        return Err(CamulError::Empty("forecast instances".into()));
    }
    let encoded = encode_inputs(model, instances, refs)?;
    let (scaled, attention) = sample_encoded(model, &encoded, config);
    Ok(ForecastEnsemble {
        series_ids: instances.iter().map(|i| i.series_id.clone()).collect(),
        target_index: instances.iter().map(|i| i.target_index).collect(),
        samples: scaled.mapv(|z| scaler.invert_value(0, z)),
        attention,
    })
}

/// Scores an ensemble against the targets of the instances it was drawn
/// for. Interval scores are measured in standardized units.
pub fn score_ensemble(
    ensemble: &ForecastEnsemble,
    instances: &[TrainingInstance],
    scaler: &Scaler,
    config: &MetricConfig,
    exec: Execution,
) -> Result<EvalResult> {
    if instances.len() != ensemble.len() {
        return Err(CamulError::Validation(format!(
            "{} instances for an ensemble of {} cells",
            instances.len(),
            ensemble.len()
        )));
    }
    let cells: Vec<Cell> = instances
        .iter()
        .enumerate()
        .map(|(i, inst)| Cell {
            series_id: &inst.series_id,
            target_index: inst.target_index,
            samples: ensemble.cell(i),
            truth: scaler.invert_value(0, inst.target),
            is_scale: (scaler.mean[0], scaler.std[0]),
        })
        .collect();
    evaluate(&cells, config, exec)
}

/// Mean attention per view for each series, in order of first appearance.
pub fn attention_by_series(ensemble: &ForecastEnsemble) -> Vec<(String, Vec<f64>)> {
    let k = ensemble.attention.ncols();
    let mut out: Vec<(String, Vec<f64>, usize)> = Vec::new();
    for (i, id) in ensemble.series_ids.iter().enumerate() {
        let pos = match out.iter().position(|(s, _, _)| s == id) {
            Some(p) => p,
            None => {
                out.push((id.clone(), vec![0.0; k], 0));
                out.len() - 1
            }
        };
        let entry = &mut out[pos];
        for (acc, a) in entry.1.iter_mut().zip(ensemble.attention.row(i)) {
            *acc += a;
        }
        entry.2 += 1;
    }
    out.into_iter().map(|(id, sums, n)| (id, sums.into_iter().map(|v| v / n as f64).collect())).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantilePoint {
    pub level: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub level: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastSummary {
    pub series_id: String,
    pub target_index: usize,
    pub mean: f64,
    pub std: f64,
    pub median: f64,
    pub quantiles: Vec<QuantilePoint>,
    pub intervals: Vec<Interval>,
}

/// Smallest ensemble for which quantiles are reported.
pub const MIN_SUMMARY_SAMPLES: usize = 10;

/// Per-cell mean, std, quantiles at `(1 ± c)/2` and central intervals at each
/// confidence level `c ∈ [0, 1)`.
pub fn summarize(ensemble: &ForecastEnsemble, levels: &[f64]) -> Result<Vec<ForecastSummary>> {
    if let Some(&bad) = levels.iter().find(|&&c| !(0.0..1.0).contains(&c)) {
        return Err(CamulError::InvalidLevel(bad));
    }
    if ensemble.num_samples() < MIN_SUMMARY_SAMPLES {
        return Err(CamulError::Validation(format!(
            "summaries need at least {MIN_SUMMARY_SAMPLES} samples, got {}",
            ensemble.num_samples()
        )));
    }
    let mut qlevels: Vec<f64> = levels.iter().flat_map(|c| [(1.0 - c) / 2.0, (1.0 + c) / 2.0]).collect();
    qlevels.push(0.5);
    qlevels.sort_by(f64::total_cmp);
    qlevels.dedup();
    Ok((0..ensemble.len())
        .map(|i| {
            let mut x = ensemble.cell(i);
            x.sort_by(f64::total_cmp);
            let n = x.len() as f64;
            let mean = x.iter().sum::<f64>() / n;
            let std = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            ForecastSummary {
                series_id: ensemble.series_ids[i].clone(),
                target_index: ensemble.target_index[i],
                mean,
                std,
                median: quantile_sorted(&x, 0.5),
                quantiles: qlevels.iter().map(|&p| QuantilePoint { level: p, value: quantile_sorted(&x, p) }).collect(),
                intervals: levels
                    .iter()
                    .map(|&c| {
                        let (lower, upper) = central_interval(&x, c);
                        Interval { level: c, lower, upper }
                    })
                    .collect(),
            }
        })
        .collect())
}
