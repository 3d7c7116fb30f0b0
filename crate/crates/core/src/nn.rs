//! Named parameters, forward sessions and the small set of layers the model is
//! built from.

use std::cell::RefCell;
use std::ops::Deref;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Mat, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub value: Mat,
}

/// Flat registry of trainable arrays, addressed by [`ParamId`] or by name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Mat) -> ParamId {
        let name = name.into();
        debug_assert!(self.find(&name).is_none(), "duplicate parameter `{name}`");
        self.entries.push(ParamEntry { name, value });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Mat {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.entries[id.0].value
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry] {
        &mut self.entries
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }
}

/// A tape bound to a parameter store. Parameters are materialised as leaves
/// on first use so gradients can be read back per [`ParamId`].
pub struct Session<'p> {
    tape: Tape,
    params: &'p ParamStore,
    leaves: RefCell<Vec<Option<Var>>>,
}

impl<'p> Session<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self { tape: Tape::new(), params, leaves: RefCell::new(vec![None; params.len()]) }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn param(&self, id: ParamId) -> Var {
        if let Some(v) = self.leaves.borrow()[id.0] {
            return v;
        }
        let v = self.tape.leaf(self.params.get(id).clone());
        self.leaves.borrow_mut()[id.0] = Some(v);
        v
    }

    /// Gradients of `loss` for every parameter; unused parameters get zeros.
    pub fn param_grads(&self, loss: Var) -> Vec<Mat> {
        let grads = self.tape.backward(loss);
        let leaves = self.leaves.borrow();
        self.params
            .entries()
            .iter()
            .zip(leaves.iter())
            .map(|(entry, leaf)| {
                leaf.and_then(|v| grads.get(v).cloned()).unwrap_or_else(|| Mat::zeros(entry.value.raw_dim()))
            })
            .collect()
    }
}

impl Deref for Session<'_> {
    type Target = Tape;

    fn deref(&self) -> &Tape {
        &self.tape
    }
}

/// Diagonal Gaussian recorded on a tape, parameterized by mean and log standard deviation.
#[derive(Debug, Clone, Copy)]
pub struct GaussianVar {
    pub mean: Var,
    pub log_std: Var,
}

impl GaussianVar {
    /// Splits a `B × 2d` head output into mean and log-std halves.
    pub fn from_head(t: &Tape, raw: Var) -> Self {
        let width = t.shape(raw).1;
        debug_assert!(width % 2 == 0);
        let d = width / 2;
        Self { mean: t.slice_cols(raw, 0, d), log_std: t.slice_cols(raw, d, width) }
    }

    pub fn std(&self, t: &Tape) -> Var {
        t.exp(self.log_std)
    }

    /// Reparameterized draw `mean + std ⊙ noise`.
    pub fn sample(&self, t: &Tape, noise: Mat) -> Var {
        let eps = t.leaf(noise);
        t.add(self.mean, t.mul(self.std(t), eps))
    }

    /// Sum of elementwise log-densities of `x`.
    pub fn log_density(&self, t: &Tape, x: Var) -> Var {
        t.sum_all(t.gaussian_log_density(x, self.mean, self.log_std))
    }
}

/// Uniform `(-1/√fan_in, 1/√fan_in)` initialisation.
fn init_uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, fan_in: usize) -> Mat {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Mat::from_shape_simple_fn((rows, cols), || rng.random_range(-bound..bound))
}

/// Affine map `x W + b` with `W: in × out`, `b: 1 × out`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let weight = store.add(format!("{name}.weight"), init_uniform(rng, in_dim, out_dim, in_dim));
        let bias = store.add(format!("{name}.bias"), init_uniform(rng, 1, out_dim, in_dim));
        Self { weight, bias, in_dim, out_dim }
    }

    pub fn forward(&self, s: &Session, x: Var) -> Var {
        s.add(s.matmul(x, s.param(self.weight)), s.param(self.bias))
    }
}

/// Stack of affine layers with ReLU between them (none after the last).
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `dims = [in, hidden.., out]`.
    pub fn new(store: &mut ParamStore, name: &str, dims: &[usize], rng: &mut ChaCha8Rng) -> Self {
        assert!(dims.len() >= 2);
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect();
        Self { layers }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map(|l| l.out_dim).unwrap_or(0)
    }

    pub fn forward(&self, s: &Session, x: Var) -> Var {
        let last = self.layers.len() - 1;
        self.layers.iter().enumerate().fold(x, |h, (i, layer)| {
            let out = layer.forward(s, h);
            if i < last {
                s.relu(out)
            } else {
                out
            }
        })
    }
}

/// Gated recurrent cell. Gate blocks are laid out `[reset | update | candidate]`:
///
/// ```text
/// r  = σ(x Wxr + bxr + h Whr + bhr)
/// z  = σ(x Wxz + bxz + h Whz + bhz)
/// n  = tanh(x Wxn + bxn + r ⊙ (h Whn + bhn))
/// h' = (1 - z) ⊙ n + z ⊙ h
/// ```
#[derive(Debug, Clone)]
pub struct GruCell {
    pub input_weight: ParamId,
    pub hidden_weight: ParamId,
    pub input_bias: ParamId,
    pub hidden_bias: ParamId,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

impl GruCell {
    pub fn new(store: &mut ParamStore, name: &str, input_dim: usize, hidden_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let h3 = 3 * hidden_dim;
        let input_weight = store.add(format!("{name}.w_input"), init_uniform(rng, input_dim, h3, hidden_dim));
        let hidden_weight = store.add(format!("{name}.w_hidden"), init_uniform(rng, hidden_dim, h3, hidden_dim));
        let input_bias = store.add(format!("{name}.b_input"), init_uniform(rng, 1, h3, hidden_dim));
        let hidden_bias = store.add(format!("{name}.b_hidden"), init_uniform(rng, 1, h3, hidden_dim));
        Self { input_weight, hidden_weight, input_bias, hidden_bias, input_dim, hidden_dim }
    }

    pub fn step(&self, s: &Session, x: Var, h: Var) -> Var {
        let hd = self.hidden_dim;
        let gx = s.add(s.matmul(x, s.param(self.input_weight)), s.param(self.input_bias));
        let gh = s.add(s.matmul(h, s.param(self.hidden_weight)), s.param(self.hidden_bias));
        let r = s.sigmoid(s.add(s.slice_cols(gx, 0, hd), s.slice_cols(gh, 0, hd)));
        let z = s.sigmoid(s.add(s.slice_cols(gx, hd, 2 * hd), s.slice_cols(gh, hd, 2 * hd)));
        let n = s.tanh(s.add(s.slice_cols(gx, 2 * hd, 3 * hd), s.mul(r, s.slice_cols(gh, 2 * hd, 3 * hd))));
        // (1 - z) n + z h = n + z (h - n)
        s.add(n, s.mul(z, s.sub(h, n)))
    }
}
