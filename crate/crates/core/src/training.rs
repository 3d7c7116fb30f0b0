//! Minibatch ELBO optimisation with Adam.

use std::time::Instant;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Mat, Var};
use crate::data::{ReferenceSet, TrainingInstance};
use crate::error::{CamulError, Result};
use crate::exec::Execution;
use crate::inference::{encode_inputs, sample_encoded, InferenceConfig};
use crate::metrics::crps_samples;
use crate::model::{batch_inputs, reference_inputs, target_column, CamulModel, PassMode};
use crate::nn::{ParamStore, Session};
use crate::noise::{NoiseSource, RngNoise};
use crate::pipeline::PreparedData;

/// Per-item loss above which training is considered diverged.
pub const DIVERGENCE_LOSS: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Monte-Carlo samples averaged in each ELBO estimate.
    pub mc_samples: usize,
    pub validation_fraction: f64,
    /// Windows drawn per series.
    pub count_per_series: usize,
    pub clip_norm: f64,
    /// Draws per validation cell when scoring each epoch; 0 disables scoring.
    pub validation_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            batch_size: 20,
            epochs: 100,
            mc_samples: 1,
            validation_fraction: 0.1,
            count_per_series: 50,
            clip_norm: 10.0,
            validation_samples: 50,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || self.batch_size == 0 || self.mc_samples == 0 || !(self.clip_norm > 0.0) {
            return Err(CamulError::InvalidConfig("lr, batch_size, mc_samples and clip_norm must be positive".into()));
        }
        if self.count_per_series == 0 {
            return Err(CamulError::InvalidConfig("count_per_series must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean negative ELBO per training item.
    pub loss: f64,
    /// Mean CRPS over validation cells in original units.
    pub val_crps: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Wall-clock seconds per epoch, kept apart from the records so the
    /// records stay reproducible.
    pub seconds: Vec<f64>,
    pub diverged: Option<String>,
}

impl TrainHistory {
    /// One JSON object per epoch.
    pub fn to_jsonl(&self) -> String {
        self.epochs.iter().map(|r| serde_json::to_string(r).expect("record serializes") + "\n").collect()
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Mat>,
    v: Vec<Mat>,
    t: i32,
}

impl Adam {
    pub fn new(params: &ParamStore, lr: f64) -> Self {
        let zeros: Vec<Mat> = params.entries().iter().map(|e| Mat::zeros(e.value.raw_dim())).collect();
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: zeros.clone(), v: zeros, t: 0 }
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &[Mat]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (((entry, g), m), v) in params.entries_mut().iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            ndarray::Zip::from(&mut entry.value).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
            });
        }
    }
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut [Mat], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g.iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt();
    if norm > max_norm {
        let f = max_norm / norm;
        for g in grads.iter_mut() {
            g.mapv_inplace(|v| v * f);
        }
    }
    norm
}

/// Negative ELBO of one batch averaged over `mc_samples` passes, recorded on
/// `s`. References are encoded with the current parameters.
pub fn batch_loss(
    model: &CamulModel,
    s: &Session,
    batch: &[&TrainingInstance],
    refs: &[crate::encoders::ViewInput],
    mc_samples: usize,
    noise: &mut dyn NoiseSource,
) -> Result<Var> {
    if batch.is_empty() {
        return Err(CamulError::Empty("training batch".into()));
    }
    let inputs = model.encode(s, &batch_inputs(&model.views, batch)?)?;
    let ref_enc = model.encode(s, refs)?;
    let targets = target_column(batch);
    let mode = PassMode::Train { temperature: model.config.temperature };
    let losses: Vec<Var> = (0..mc_samples)
        .map(|_| {
            let pass = model.generative(s, &inputs, &ref_enc, mode, noise);
            model.elbo_loss(s, &pass, &targets)
        })
        .collect();
    let total = losses.into_iter().reduce(|a, b| s.add(a, b)).expect("mc_samples > 0");
    Ok(s.scale(total, 1.0 / mc_samples as f64))
}

/// Loss value and per-parameter gradients for one batch.
pub fn loss_and_grads(
    model: &CamulModel,
    batch: &[&TrainingInstance],
    refs: &[ReferenceSet],
    noise: &mut dyn NoiseSource,
) -> Result<(f64, Vec<Mat>)> {
    let ref_inputs = reference_inputs(&model.views, refs)?;
    let s = Session::new(&model.params);
    let loss = batch_loss(model, &s, batch, &ref_inputs, 1, noise)?;
    Ok((s.scalar_value(loss), s.param_grads(loss)))
}

/// Mean CRPS of validation cells in original units.
pub fn validation_crps(
    model: &CamulModel,
    data: &PreparedData,
    samples: usize,
    seed: u64,
    exec: Execution,
) -> Result<f64> {
    let encoded = encode_inputs(model, &data.validation, &data.refs)?;
    let config = InferenceConfig { execution: exec, ..InferenceConfig::for_model(model, samples, seed) };
    let (draws, _) = sample_encoded(model, &encoded, &config);
    let total: f64 = data
        .validation
        .iter()
        .enumerate()
        .map(|(i, inst)| {
            let x: Vec<f64> = draws.column(i).iter().map(|&z| data.scaler.invert_value(0, z)).collect();
            crps_samples(&x, data.scaler.invert_value(0, inst.target))
        })
        .sum();
    Ok(total / data.validation.len() as f64)
}

/// Value ranges of the latents of one training pass, for divergence reports.
pub fn latent_stats(
    model: &CamulModel,
    batch: &[&TrainingInstance],
    refs: &[crate::encoders::ViewInput],
    seed: u64,
) -> String {
    let run = || -> Result<String> {
        let s = Session::new(&model.params);
        let inputs = model.encode(&s, &batch_inputs(&model.views, batch)?)?;
        let ref_enc = model.encode(&s, refs)?;
        let mut noise = RngNoise::new(seed);
        let mode = PassMode::Train { temperature: model.config.temperature };
        let pass = model.generative(&s, &inputs, &ref_enc, mode, &mut noise);
        let span = |v: Var| {
            s.with_value(v, |m| {
                let lo = m.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = m.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                format!("[{lo:.3e}, {hi:.3e}]")
            })
        };
        let y = s.leaf(target_column(batch));
        let loglik = s.scalar_value(pass.output.log_density(&s, y));
        let terms = pass.view_terms.map(|v| s.scalar_value(v)).unwrap_or(0.0);
        let mut out = format!(
            "replayed loglik {loglik:.3e}, view terms {terms:.3e}, input log-std {}, z {}, output mean {} log-std {}",
            span(inputs[0].log_std),
            span(pass.z_default),
            span(pass.output.mean),
            span(pass.output.log_std)
        );
        for (j, spec) in model.views.iter().enumerate() {
            out += &format!(
                "; view {}: edge row sums {}, aggregation log-std {}, posterior log-std {}",
                spec.view_id,
                span(s.sum_rows(pass.edges[j])),
                span(pass.priors[j].log_std),
                span(pass.posteriors[j].log_std)
            );
        }
        Ok(out)
    };
    run().unwrap_or_else(|e| format!("latent stats unavailable: {e}"))
}

/// Seed offsets for the independent random streams used during training.
const SHUFFLE_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;

/// Runs `config.epochs` epochs of minibatch updates on `data.train`.
///
/// The run is a pure function of the model's initial parameters, the data and
/// `seed`. Divergence stops training early and is reported in the history.
pub fn train(
    model: &mut CamulModel,
    data: &PreparedData,
    config: &TrainConfig,
    seed: u64,
    exec: Execution,
) -> Result<TrainHistory> {
    config.validate()?;
    if data.train.is_empty() {
        return Err(CamulError::Empty("training instances".into()));
    }
    let ref_inputs = reference_inputs(&model.views, &data.refs)?;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(seed);
    shuffle_rng.set_stream(SHUFFLE_STREAM);
    let mut noise = RngNoise::substream(seed, NOISE_STREAM);
    let mut adam = Adam::new(&model.params, config.lr);
    let mut history = TrainHistory::default();
    let mut order: Vec<usize> = (0..data.train.len()).collect();

    for epoch in 1..=config.epochs {
        let started = Instant::now();
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&TrainingInstance> = chunk.iter().map(|&i| &data.train[i]).collect();
            let (loss, mut grads) = {
                let s = Session::new(&model.params);
                let loss = batch_loss(model, &s, &batch, &ref_inputs, config.mc_samples, &mut noise)?;
                (s.scalar_value(loss), s.param_grads(loss))
            };
            let per_item = loss / batch.len() as f64;
            if !loss.is_finite() || per_item > DIVERGENCE_LOSS {
                let detail = format!("loss {per_item:e} per item; {}", latent_stats(model, &batch, &ref_inputs, seed));
                history.diverged = Some(detail);
                return Ok(history);
            }
            let norm = clip_global_norm(&mut grads, config.clip_norm);
            debug!("epoch {epoch} batch loss {per_item:.4} grad norm {norm:.3}");
            adam.step(&mut model.params, &grads);
            total += loss;
        }
        let val_crps = if config.validation_samples > 0 && !data.validation.is_empty() {
            Some(validation_crps(model, data, config.validation_samples, seed, exec)?)
        } else {
            None
        };
        let record = EpochRecord { epoch, loss: total / data.train.len() as f64, val_crps };
        if epoch == 1 || epoch % 50 == 0 || epoch == config.epochs {
            info!("epoch {epoch}: loss {:.4} val_crps {:?}", record.loss, record.val_crps);
        }
        history.epochs.push(record);
        history.seconds.push(started.elapsed().as_secs_f64());
    }
    Ok(history)
}
