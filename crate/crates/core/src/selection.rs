//! Cross-attention over views conditioned on the default-view latent, and the
//! convex combination of the view-aware latents.

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Mat, Var};
use crate::error::{shape_err, CamulError, Result};
use crate::nn::{Linear, ParamStore, Session};

#[derive(Debug, Clone)]
pub struct SelectionParams {
    pub h1: Linear,
    pub h2: Linear,
}

impl SelectionParams {
    pub fn new(store: &mut ParamStore, name: &str, latent_dim: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            h1: Linear::new(store, &format!("{name}.h1"), latent_dim, hidden, rng),
            h2: Linear::new(store, &format!("{name}.h2"), latent_dim, hidden, rng),
        }
    }

    /// `B × K` logits `<h1(z), h2(u_j)>` for each view embedding `u_j: B × d`.
    pub fn logits(&self, s: &Session, z_default: Var, views: &[Var]) -> Var {
        let q = self.h1.forward(s, z_default);
        let cols: Vec<Var> = views.iter().map(|&u| s.sum_rows(s.mul(q, self.h2.forward(s, u)))).collect();
        s.concat_cols(&cols)
    }

    /// Softmax-normalized attention, `B × K`.
    pub fn attention(&self, s: &Session, z_default: Var, views: &[Var]) -> Var {
        s.softmax_rows(self.logits(s, z_default, views))
    }
}

/// `Σ_j α_j ⊙ u_j` row-wise.
pub fn combine(s: &Session, alpha: Var, views: &[Var]) -> Var {
    views
        .iter()
        .enumerate()
        .map(|(j, &u)| s.mul(s.slice_cols(alpha, j, j + 1), u))
        .reduce(|a, b| s.add(a, b))
        .expect("at least one view")
}

/// Numerically stable softmax of a single vector.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|v| v / total).collect()
}

/// Attention of one input over `K` view embeddings (`K × d`).
pub fn attention_weights(
    z_default: &[f64],
    view_embeds: &Mat,
    params: &SelectionParams,
    store: &ParamStore,
) -> Result<Vec<f64>> {
    if view_embeds.nrows() == 0 {
        return Err(CamulError::Empty("view embeddings".into()));
    }
    if view_embeds.ncols() != z_default.len() {
        return Err(shape_err("view embedding width", z_default.len(), view_embeds.ncols()));
    }
    let s = Session::new(store);
    let z = s.leaf(Mat::from_shape_vec((1, z_default.len()), z_default.to_vec()).expect("row"));
    let views: Vec<Var> =
        view_embeds.rows().into_iter().map(|r| s.leaf(r.to_owned().insert_axis(ndarray::Axis(0)))).collect();
    Ok(s.value(params.attention(&s, z, &views)).row(0).to_vec())
}

/// Convex combination `Σ_j α_j u_j` of the rows of `view_embeds`.
pub fn combine_views(alpha: &[f64], view_embeds: &Mat) -> Result<Vec<f64>> {
    if alpha.len() != view_embeds.nrows() {
        return Err(shape_err("attention length", view_embeds.nrows(), alpha.len()));
    }
    let mut out = vec![0.0; view_embeds.ncols()];
    for (a, row) in alpha.iter().zip(view_embeds.rows()) {
        for (o, u) in out.iter_mut().zip(row) {
            *o += a * u;
        }
    }
    Ok(out)
}
