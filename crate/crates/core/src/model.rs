//! The full generative network: per-view encoders, correlation graphs,
//! variational posteriors, view selection and the output decoder.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Mat, Var};
use crate::data::{GraphStructure, Modality, ReferenceSet, TrainingInstance, ViewData, ViewSpec};
use crate::decoder::Decoder;
use crate::encoders::{EncoderDims, ViewEncoder, ViewInput};
use crate::error::{CamulError, Result};
use crate::nn::{GaussianVar, Mlp, ParamStore, Session};
use crate::noise::NoiseSource;
use crate::preprocessing::{ReferencePolicy, DEFAULT_WINDOW};
use crate::selection::{combine, SelectionParams};
use crate::vscg::{EdgeMode, VscgParams, DEFAULT_TEMPERATURE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub latent_dim: usize,
    /// Width of the hidden layers of every network unless a view overrides it.
    pub hidden: usize,
    /// Relaxation temperature of the training-time edges.
    pub temperature: f64,
    pub window: usize,
    pub horizon: usize,
    /// Use expected edges instead of hard draws when forecasting.
    pub soft_inference_edges: bool,
    pub reference_policy: ReferencePolicy,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            latent_dim: crate::data::DEFAULT_LATENT_DIM,
            hidden: 60,
            temperature: DEFAULT_TEMPERATURE,
            window: DEFAULT_WINDOW,
            horizon: 1,
            soft_inference_edges: false,
            reference_policy: ReferencePolicy::FullSeries,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("latent_dim", self.latent_dim),
            ("hidden", self.hidden),
            ("window", self.window),
            ("horizon", self.horizon),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(CamulError::InvalidConfig(format!("{name} must be positive")));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(CamulError::InvalidConfig("temperature must be positive".into()));
        }
        Ok(())
    }

    pub fn inference_edges(&self) -> EdgeMode {
        if self.soft_inference_edges {
            EdgeMode::Soft
        } else {
            EdgeMode::Hard
        }
    }
}

/// Where the view-aware latents entering attention come from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PassMode {
    /// Relaxed edges; view latents drawn from the posteriors, with the
    /// aggregation density and posterior density recorded for the ELBO.
    Train { temperature: f64 },
    /// View latents drawn from the aggregation Gaussian.
    Infer { edges: EdgeMode },
}

/// Tape handles produced by one generative pass over a batch.
#[derive(Debug, Clone)]
pub struct Pass {
    /// `B × 1` output Gaussian.
    pub output: GaussianVar,
    /// `B × K` view attention.
    pub attention: Var,
    pub z_default: Var,
    pub view_latents: Vec<Var>,
    pub edges: Vec<Var>,
    /// Aggregation Gaussian of each view.
    pub priors: Vec<GaussianVar>,
    /// Training only: posterior of each view.
    pub posteriors: Vec<GaussianVar>,
    /// Training only: `Σ_j [log p(u_j | graph) - log q_j(u_j)]` as a `1 × 1`.
    pub view_terms: Option<Var>,
}

#[derive(Debug, Clone)]
pub struct CamulModel {
    pub config: ModelConfig,
    pub views: Vec<ViewSpec>,
    pub graphs: BTreeMap<usize, GraphStructure>,
    pub encoders: Vec<ViewEncoder>,
    pub vscg: Vec<VscgParams>,
    pub posteriors: Vec<Mlp>,
    pub selection: SelectionParams,
    pub decoder: Decoder,
    pub params: ParamStore,
}

fn check_view_order(specs: &[ViewSpec]) -> Result<()> {
    if specs.is_empty() || !specs[0].is_default {
        return Err(CamulError::Validation("missing default view".into()));
    }
    if specs.iter().skip(1).any(|s| s.is_default) {
        return Err(CamulError::Validation("multiple default views".into()));
    }
    if specs[0].modality != Modality::Sequence {
        return Err(CamulError::Validation("default view must be a sequence view".into()));
    }
    Ok(())
}

impl CamulModel {
    /// Initializes parameters for the given views, default view first.
    pub fn new(config: ModelConfig, views: &[ViewData], seed: u64) -> Result<Self> {
        let specs: Vec<ViewSpec> = views.iter().map(|v| v.spec.clone()).collect();
        let graphs = views.iter().filter_map(|v| v.graph.clone().map(|g| (v.view_id(), g))).collect();
        Self::from_specs(config, specs, graphs, seed)
    }

    pub fn from_specs(
        config: ModelConfig,
        specs: Vec<ViewSpec>,
        graphs: BTreeMap<usize, GraphStructure>,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        check_view_order(&specs)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d = config.latent_dim;
        let h = config.hidden;
        let dims = EncoderDims { latent_dim: d, hidden: h };
        let mut encoders = Vec::new();
        let mut vscg = Vec::new();
        let mut posteriors = Vec::new();
        for spec in &specs {
            let name = format!("view{}", spec.view_id);
            let view =
                ViewData { spec: spec.clone(), tracks: BTreeMap::new(), graph: graphs.get(&spec.view_id).cloned() };
            encoders.push(ViewEncoder::for_view(&mut store, &format!("{name}.encoder"), &view, dims, &mut rng)?);
            vscg.push(VscgParams::new(&mut store, &format!("{name}.vscg"), d, h, &mut rng));
            posteriors.push(Mlp::new(&mut store, &format!("{name}.posterior"), &[d, h, 2 * d], &mut rng));
        }
        let selection = SelectionParams::new(&mut store, "selection", d, h, &mut rng);
        let decoder = Decoder::new(&mut store, "decoder", d, h, &mut rng);
        Ok(Self { config, views: specs, graphs, encoders, vscg, posteriors, selection, decoder, params: store })
    }

    pub fn num_views(&self) -> usize {
        self.views.len()
    }

    pub fn view_ids(&self) -> Vec<usize> {
        self.views.iter().map(|v| v.view_id).collect()
    }

    /// Errors unless `specs` describe the same views this model was built for.
    pub fn check_views(&self, specs: &[ViewSpec]) -> Result<()> {
        if specs.len() != self.views.len() {
            return Err(CamulError::ConfigMismatch(format!(
                "model has {} views but the data has {}",
                self.views.len(),
                specs.len()
            )));
        }
        for (a, b) in self.views.iter().zip(specs) {
            if a != b {
                return Err(CamulError::ConfigMismatch(format!("view {} differs between model and data", a.view_id)));
            }
        }
        Ok(())
    }

    /// Encodes one input per view, in model view order.
    pub fn encode(&self, s: &Session, inputs: &[ViewInput]) -> Result<Vec<GaussianVar>> {
        if inputs.len() != self.encoders.len() {
            return Err(CamulError::ConfigMismatch(format!(
                "expected {} view inputs, got {}",
                self.encoders.len(),
                inputs.len()
            )));
        }
        self.encoders.iter().zip(inputs).map(|(e, x)| e.encode(s, x)).collect()
    }

    /// Posterior `q_j` over the view-`j` latent, conditioned on the default-view mean.
    pub fn posterior(&self, s: &Session, view: usize, default_mean: Var) -> GaussianVar {
        GaussianVar::from_head(s, self.posteriors[view].forward(s, default_mean))
    }

    /// One stochastic pass from encoded inputs and references.
    ///
    /// Noise is consumed in a fixed order: for each view the reference draws
    /// then the input draws; then for each view its edge uniforms followed by
    /// the view-latent draws.
    pub fn generative(
        &self,
        s: &Session,
        inputs: &[GaussianVar],
        refs: &[GaussianVar],
        mode: PassMode,
        noise: &mut dyn NoiseSource,
    ) -> Pass {
        let k = self.num_views();
        assert_eq!(inputs.len(), k);
        assert_eq!(refs.len(), k);
        let d = self.config.latent_dim;
        let b = s.shape(inputs[0].mean).0;

        let mut z_refs = Vec::with_capacity(k);
        let mut z_inputs = Vec::with_capacity(k);
        for j in 0..k {
            let n_j = s.shape(refs[j].mean).0;
            z_refs.push(refs[j].sample(s, noise.normal(n_j, d)));
            z_inputs.push(inputs[j].sample(s, noise.normal(b, d)));
        }

        let edge_mode = match mode {
            PassMode::Train { temperature } => EdgeMode::Relaxed { temperature },
            PassMode::Infer { edges } => edges,
        };
        let mut view_latents = Vec::with_capacity(k);
        let mut edges = Vec::with_capacity(k);
        let mut terms = Vec::new();
        let mut priors = Vec::with_capacity(k);
        let mut posteriors = Vec::new();
        for j in 0..k {
            let (prior, e) = self.vscg[j].view_latent(s, z_inputs[j], z_refs[j], edge_mode, noise);
            edges.push(e);
            priors.push(prior);
            let u = match mode {
                PassMode::Train { .. } => {
                    let q = self.posterior(s, j, inputs[0].mean);
                    let u = q.sample(s, noise.normal(b, d));
                    terms.push(s.sub(prior.log_density(s, u), q.log_density(s, u)));
                    posteriors.push(q);
                    u
                }
                PassMode::Infer { .. } => prior.sample(s, noise.normal(b, d)),
            };
            view_latents.push(u);
        }

        let z_default = z_inputs[0];
        let attention = self.selection.attention(s, z_default, &view_latents);
        let combined = combine(s, attention, &view_latents);
        let output = self.decoder.forward(s, z_default, combined);
        let view_terms = terms.into_iter().reduce(|a, c| s.add(a, c));
        Pass { output, attention, z_default, view_latents, edges, priors, posteriors, view_terms }
    }

    /// Negative single-sample ELBO summed over the batch. `targets` is `B × 1`.
    pub fn elbo_loss(&self, s: &Session, pass: &Pass, targets: &Mat) -> Var {
        let y = s.leaf(targets.clone());
        let loglik = pass.output.log_density(s, y);
        let total = match pass.view_terms {
            Some(terms) => s.add(loglik, terms),
            None => loglik,
        };
        s.neg(total)
    }
}

/// Batched inputs for the model's views from instance payloads.
pub fn batch_inputs(views: &[ViewSpec], instances: &[&TrainingInstance]) -> Result<Vec<ViewInput>> {
    views
        .iter()
        .map(|spec| {
            let payloads = instances
                .iter()
                .map(|inst| {
                    inst.view_payloads.get(&spec.view_id).ok_or_else(|| {
                        CamulError::Validation(format!(
                            "instance of {} at {} has no payload for view {}",
                            inst.series_id, inst.start, spec.view_id
                        ))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            ViewInput::from_payloads(spec.modality, payloads)
        })
        .collect()
}

/// Reference points batched per view, in model view order.
pub fn reference_inputs(views: &[ViewSpec], refs: &[ReferenceSet]) -> Result<Vec<ViewInput>> {
    views
        .iter()
        .map(|spec| {
            let set = refs
                .iter()
                .find(|r| r.view_id == spec.view_id)
                .ok_or_else(|| CamulError::Validation(format!("reference set missing for view {}", spec.view_id)))?;
            if set.is_empty() {
                return Err(CamulError::Validation(format!("reference set empty for view {}", spec.view_id)));
            }
            ViewInput::from_payloads(spec.modality, &set.points)
        })
        .collect()
}

/// `B × 1` column of instance targets.
pub fn target_column(instances: &[&TrainingInstance]) -> Mat {
    Mat::from_shape_fn((instances.len(), 1), |(i, _)| instances[i].target)
}
