//! Stochastic correlation graph between input latents and reference latents of
//! one view, and the neighbour aggregation producing the view-aware latent.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Mat, Tape, Var};
use crate::data::GaussianLatent;
use crate::error::{shape_err, Result};
use crate::nn::{GaussianVar, Mlp, ParamId, ParamStore, Session};
use crate::noise::NoiseSource;

pub const DEFAULT_TEMPERATURE: f64 = 0.5;
/// Probabilities are clamped into `[PROB_CLAMP, 1 - PROB_CLAMP]` before taking logits.
pub const PROB_CLAMP: f64 = 1e-6;

/// How edges are drawn from the similarity matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeMode {
    /// Binary-concrete relaxation; differentiable in the similarities.
    Relaxed { temperature: f64 },
    /// Independent Bernoulli draws with the empty-row fallback.
    Hard,
    /// Expected edges: the similarities themselves.
    Soft,
}

/// Edge values and the similarities they were drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationGraph {
    pub edge_values: Mat,
    pub similarities: Mat,
}

/// Per-view parameters: the RBF bandwidth and the two neighbour maps.
#[derive(Debug, Clone)]
pub struct VscgParams {
    pub rho_raw: ParamId,
    pub l_mu: Mlp,
    pub l_sigma: Mlp,
}

impl VscgParams {
    pub fn new(store: &mut ParamStore, name: &str, latent_dim: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            rho_raw: store.add(format!("{name}.rho_raw"), Mat::zeros((1, 1))),
            l_mu: Mlp::new(store, &format!("{name}.l_mu"), &[latent_dim, hidden, latent_dim], rng),
            l_sigma: Mlp::new(store, &format!("{name}.l_sigma"), &[latent_dim, hidden, latent_dim], rng),
        }
    }

    pub fn rho(&self, store: &ParamStore) -> f64 {
        store.get(self.rho_raw)[[0, 0]].exp()
    }

    /// `B × N` similarities `exp(-ρ ‖z_i - z_k‖²)`.
    pub fn similarities(&self, s: &Session, inputs: Var, refs: Var) -> Var {
        let rho = s.exp(s.param(self.rho_raw));
        similarity_matrix(s, inputs, refs, rho)
    }

    /// Neighbour aggregation: mean `E · l_mu(Z)`, log-std `E · l_sigma(Z)`.
    pub fn aggregate(&self, s: &Session, edges: Var, refs: Var) -> GaussianVar {
        GaussianVar {
            mean: s.matmul(edges, self.l_mu.forward(s, refs)),
            log_std: s.matmul(edges, self.l_sigma.forward(s, refs)),
        }
    }

    /// Similarities, edge draw and aggregation for a batch of input latents.
    pub fn view_latent(
        &self,
        s: &Session,
        inputs: Var,
        refs: Var,
        mode: EdgeMode,
        noise: &mut dyn NoiseSource,
    ) -> (GaussianVar, Var) {
        let sim = self.similarities(s, inputs, refs);
        let edges = draw_edges(s, sim, mode, noise);
        (self.aggregate(s, edges, refs), edges)
    }
}

/// Draws edges in the given mode. Relaxed mode consumes two uniform matrices,
/// hard mode one, soft mode none.
pub fn draw_edges(t: &Tape, sim: Var, mode: EdgeMode, noise: &mut dyn NoiseSource) -> Var {
    let (rows, cols) = t.shape(sim);
    match mode {
        EdgeMode::Relaxed { temperature } => {
            let u1 = noise.uniform(rows, cols);
            let u0 = noise.uniform(rows, cols);
            let e = relaxed_edges(t, sim, temperature, &u1, &u0);
            with_relaxed_fallback(t, e, sim)
        }
        EdgeMode::Hard => {
            let u = noise.uniform(rows, cols);
            let hard = t.with_value(sim, |p| hard_edges(p, &u));
            t.leaf(hard)
        }
        EdgeMode::Soft => sim,
    }
}

pub fn rbf_similarity(z_i: &[f64], z_k: &[f64], rho: f64) -> f64 {
    debug_assert_eq!(z_i.len(), z_k.len());
    let sq: f64 = z_i.iter().zip(z_k).map(|(a, b)| (a - b) * (a - b)).sum();
    (-rho * sq).exp()
}

/// Pairwise RBF similarities of `inputs: B × d` against `refs: N × d`, with
/// `rho` a `1 × 1` variable.
pub fn similarity_matrix(t: &Tape, inputs: Var, refs: Var, rho: Var) -> Var {
    let a2 = t.sum_rows(t.square(inputs));
    let b2 = t.transpose(t.sum_rows(t.square(refs)));
    let cross = t.matmul(inputs, t.transpose(refs));
    let sq = t.sub(t.add(a2, b2), t.scale(cross, 2.0));
    // The expansion can round a few ulps below zero.
    let sq = t.clamp(sq, 0.0, f64::INFINITY);
    t.exp(t.neg(t.mul(sq, rho)))
}

/// Hard Bernoulli edges: `e = 1` iff `u < p`. A row with no edge gets its
/// single highest-similarity edge forced on.
pub fn hard_edges(similarities: &Mat, uniforms: &Mat) -> Mat {
    let mut edges =
        Mat::from_shape_fn(similarities.raw_dim(), |ix| if uniforms[ix] < similarities[ix] { 1.0 } else { 0.0 });
    for (i, mut row) in edges.rows_mut().into_iter().enumerate() {
        if row.iter().all(|&e| e == 0.0) && !row.is_empty() {
            let sims = similarities.row(i);
            let best = (0..sims.len()).fold(0, |b, k| if sims[k] > sims[b] { k } else { b });
            row[best] = 1.0;
        }
    }
    edges
}

/// Rows whose relaxed edges all fall below one half would be empty under
/// thresholding; their argmax-similarity edge is pinned to 1, as in
/// [`hard_edges`].
pub fn with_relaxed_fallback(t: &Tape, edges: Var, sim: Var) -> Var {
    let mask = t.with_value(edges, |e| {
        t.with_value(sim, |p| {
            let mut mask = Mat::zeros(e.raw_dim());
            for (i, row) in e.rows().into_iter().enumerate() {
                if !row.is_empty() && row.iter().all(|&v| v < 0.5) {
                    let sims = p.row(i);
                    let best = (0..sims.len()).fold(0, |b, k| if sims[k] > sims[b] { k } else { b });
                    mask[[i, best]] = 1.0;
                }
            }
            mask
        })
    });
    if mask.iter().all(|&m| m == 0.0) {
        return edges;
    }
    let mask = t.leaf(mask);
    t.add(edges, t.mul(mask, t.offset(t.neg(edges), 1.0)))
}

pub fn sample_edges_hard(similarities: &Mat, noise: &mut dyn NoiseSource) -> CorrelationGraph {
    let u = noise.uniform(similarities.nrows(), similarities.ncols());
    CorrelationGraph { edge_values: hard_edges(similarities, &u), similarities: similarities.clone() }
}

/// Binary-concrete edges `sigmoid((logit p + g1 - g0) / temperature)` with
/// Gumbel draws `g = -ln(-ln u)`.
pub fn relaxed_edges(t: &Tape, sim: Var, temperature: f64, u1: &Mat, u0: &Mat) -> Var {
    let p = t.clamp(sim, PROB_CLAMP, 1.0 - PROB_CLAMP);
    let logit = t.sub(t.ln(p), t.ln(t.offset(t.neg(p), 1.0)));
    let gumbel = |u: &Mat| u.mapv(|v| -(-v.ln()).ln());
    let g = t.leaf(gumbel(u1) - gumbel(u0));
    t.sigmoid(t.scale(t.add(logit, g), 1.0 / temperature))
}

pub fn sample_edges_relaxed(similarities: &Mat, temperature: f64, u1: &Mat, u0: &Mat) -> Result<CorrelationGraph> {
    if u1.shape() != similarities.shape() || u0.shape() != similarities.shape() {
        return Err(shape_err("uniform draws", format!("{:?}", similarities.shape()), format!("{:?}", u1.shape())));
    }
    let t = Tape::new();
    let sim = t.leaf(similarities.clone());
    let e = relaxed_edges(&t, sim, temperature, u1, u0);
    Ok(CorrelationGraph { edge_values: t.value(e), similarities: similarities.clone() })
}

/// Aggregates sampled reference latents `N_j × d` under `graph`, returning
/// one view-aware latent per input row.
pub fn aggregate_neighbors(
    graph: &CorrelationGraph,
    ref_latents: &Mat,
    params: &VscgParams,
    store: &ParamStore,
) -> Result<Vec<GaussianLatent>> {
    if graph.edge_values.ncols() != ref_latents.nrows() {
        return Err(shape_err("edges vs references", ref_latents.nrows(), graph.edge_values.ncols()));
    }
    let s = Session::new(store);
    let e = s.leaf(graph.edge_values.clone());
    let z = s.leaf(ref_latents.clone());
    let g = params.aggregate(&s, e, z);
    Ok(GaussianLatent::from_rows(&s.value(g.mean), &s.value(g.log_std)))
}

/// Reparameterized draw of the view-aware latent.
pub fn sample_view_embedding(latent: &GaussianLatent, noise: &[f64]) -> Result<Vec<f64>> {
    crate::encoders::sample_latent(latent, noise)
}
