//! Per-modality probabilistic latent encoders.
//!
//! Every encoder ends in a head emitting `2d` values per point, split into a
//! mean half and a log-std half; the std is `exp` of the latter and therefore
//! strictly positive.

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Mat, Var};
use crate::data::{GaussianLatent, GraphStructure, Modality, Payload, ViewData};
use crate::error::{shape_err, CamulError, Result};
use crate::nn::{GaussianVar, GruCell, Linear, Mlp, ParamId, ParamStore, Session};

/// Batched encoder input, one entry per point.
#[derive(Debug, Clone, PartialEq)]
pub enum ViewInput {
    /// Each `L × F`; all of equal length.
    Sequence(Vec<Mat>),
    /// `B × F`.
    Static(Mat),
    Categorical(Vec<usize>),
    Graph(Vec<usize>),
}

impl ViewInput {
    pub fn len(&self) -> usize {
        match self {
            ViewInput::Sequence(v) => v.len(),
            ViewInput::Static(m) => m.nrows(),
            ViewInput::Categorical(v) | ViewInput::Graph(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Collects payloads of one modality into a batch.
    pub fn from_payloads<'a>(modality: Modality, payloads: impl IntoIterator<Item = &'a Payload>) -> Result<Self> {
        let payloads: Vec<&Payload> = payloads.into_iter().collect();
        let mismatch = || CamulError::Validation(format!("payload modality does not match {modality:?}"));
        Ok(match modality {
            Modality::Sequence => ViewInput::Sequence(
                payloads
                    .iter()
                    .map(|p| match p {
                        Payload::Sequence(m) => Ok(m.clone()),
                        _ => Err(mismatch()),
                    })
                    .collect::<Result<_>>()?,
            ),
            Modality::Static => {
                let rows: Vec<Vec<f64>> = payloads
                    .iter()
                    .map(|p| match p {
                        Payload::Static(v) => Ok(v.clone()),
                        _ => Err(mismatch()),
                    })
                    .collect::<Result<_>>()?;
                let m = crate::data::mat_rows::rows_to_mat(&rows).map_err(CamulError::Validation)?;
                ViewInput::Static(m)
            }
            Modality::Categorical => ViewInput::Categorical(
                payloads
                    .iter()
                    .map(|p| match p {
                        Payload::Categorical(i) => Ok(*i),
                        _ => Err(mismatch()),
                    })
                    .collect::<Result<_>>()?,
            ),
            Modality::Graph => ViewInput::Graph(
                payloads
                    .iter()
                    .map(|p| match p {
                        Payload::Graph(i) => Ok(*i),
                        _ => Err(mismatch()),
                    })
                    .collect::<Result<_>>()?,
            ),
        })
    }
}

/// Widths shared by all encoders of a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderDims {
    pub latent_dim: usize,
    pub hidden: usize,
}

/// Bidirectional GRU over the sequence, additive self-attention pooling over
/// the concatenated hidden states, then a single affine head.
#[derive(Debug, Clone)]
pub struct SequenceEncoder {
    pub forward_cell: GruCell,
    pub backward_cell: GruCell,
    pub attn_hidden: Linear,
    pub attn_score: Linear,
    pub head: Linear,
    pub feature_dim: usize,
}

impl SequenceEncoder {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        feature_dim: usize,
        dims: EncoderDims,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let h = dims.hidden;
        Self {
            forward_cell: GruCell::new(store, &format!("{name}.gru_fwd"), feature_dim, h, rng),
            backward_cell: GruCell::new(store, &format!("{name}.gru_bwd"), feature_dim, h, rng),
            attn_hidden: Linear::new(store, &format!("{name}.attn_hidden"), 2 * h, h, rng),
            attn_score: Linear::new(store, &format!("{name}.attn_score"), h, 1, rng),
            head: Linear::new(store, &format!("{name}.head"), 2 * h, 2 * dims.latent_dim, rng),
            feature_dim,
        }
    }

    /// Returns the latent and the `B × L` attention weights over time steps.
    pub fn encode(&self, s: &Session, seqs: &[Mat]) -> Result<(GaussianVar, Var)> {
        let b = seqs.len();
        if b == 0 {
            return Err(CamulError::Empty("sequence batch".into()));
        }
        let len = seqs[0].nrows();
        if len == 0 {
            return Err(CamulError::Empty("sequence of length 0".into()));
        }
        for m in seqs {
            if m.nrows() != len {
                return Err(shape_err("sequence batch lengths", len, m.nrows()));
            }
            if m.ncols() != self.feature_dim {
                return Err(shape_err("sequence features", self.feature_dim, m.ncols()));
            }
        }
        let steps: Vec<Var> = (0..len)
            .map(|t| {
                let rows = Mat::from_shape_fn((b, self.feature_dim), |(i, f)| seqs[i][[t, f]]);
                s.leaf(rows)
            })
            .collect();
        let hidden = self.forward_cell.hidden_dim;

        let mut h = s.leaf(Mat::zeros((b, hidden)));
        let mut fwd = Vec::with_capacity(len);
        for &x in &steps {
            h = self.forward_cell.step(s, x, h);
            fwd.push(h);
        }
        let mut h = s.leaf(Mat::zeros((b, hidden)));
        let mut bwd = vec![h; len];
        for t in (0..len).rev() {
            h = self.backward_cell.step(s, steps[t], h);
            bwd[t] = h;
        }

        let states: Vec<Var> = fwd.iter().zip(&bwd).map(|(&f, &r)| s.concat_cols(&[f, r])).collect();
        let scores: Vec<Var> =
            states.iter().map(|&z| self.attn_score.forward(s, s.tanh(self.attn_hidden.forward(s, z)))).collect();
        let weights = s.softmax_rows(s.concat_cols(&scores));
        let pooled = states
            .iter()
            .enumerate()
            .map(|(t, &z)| s.mul(s.slice_cols(weights, t, t + 1), z))
            .reduce(|a, c| s.add(a, c))
            .expect("non-empty sequence");
        Ok((GaussianVar::from_head(s, self.head.forward(s, pooled)), weights))
    }
}

/// Three-layer ReLU network on fixed-size features.
#[derive(Debug, Clone)]
pub struct StaticEncoder {
    pub net: Mlp,
}

impl StaticEncoder {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        feature_dim: usize,
        dims: EncoderDims,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let h = dims.hidden;
        Self { net: Mlp::new(store, &format!("{name}.ff"), &[feature_dim, h, h, 2 * dims.latent_dim], rng) }
    }

    pub fn encode(&self, s: &Session, x: &Mat) -> Result<GaussianVar> {
        if x.ncols() != self.net.in_dim() {
            return Err(shape_err("static payload width", self.net.in_dim(), x.ncols()));
        }
        Ok(GaussianVar::from_head(s, self.net.forward(s, s.leaf(x.clone()))))
    }
}

/// Embedding table followed by the static feed-forward head.
#[derive(Debug, Clone)]
pub struct CategoricalEncoder {
    pub table: ParamId,
    pub net: Mlp,
    pub vocab_size: usize,
}

impl CategoricalEncoder {
    pub fn new(store: &mut ParamStore, name: &str, vocab_size: usize, dims: EncoderDims, rng: &mut ChaCha8Rng) -> Self {
        use rand::Rng;
        let h = dims.hidden;
        let table = Mat::from_shape_simple_fn((vocab_size, h), || rng.random_range(-1.0..1.0));
        Self {
            table: store.add(format!("{name}.embedding"), table),
            net: Mlp::new(store, &format!("{name}.ff"), &[h, h, h, 2 * dims.latent_dim], rng),
            vocab_size,
        }
    }

    pub fn encode(&self, s: &Session, indices: &[usize]) -> Result<GaussianVar> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.vocab_size) {
            return Err(CamulError::OutOfVocabulary { index: bad, size: self.vocab_size });
        }
        let rows = s.gather_rows(s.param(self.table), indices);
        Ok(GaussianVar::from_head(s, self.net.forward(s, rows)))
    }
}

/// Two graph-convolution layers over the symmetric-normalized adjacency with
/// self-loops, then an affine head per node.
#[derive(Debug, Clone)]
pub struct GraphEncoder {
    pub conv1: Linear,
    pub conv2: Linear,
    pub head: Linear,
    pub norm_adjacency: Mat,
    pub node_features: Mat,
}

/// `D^{-1/2} (A + I) D^{-1/2}`.
pub fn normalized_adjacency(adjacency: &Mat) -> Result<Mat> {
    let n = adjacency.nrows();
    if adjacency.ncols() != n {
        return Err(shape_err("adjacency", format!("{n} x {n}"), format!("{n} x {}", adjacency.ncols())));
    }
    let a = adjacency + &Mat::eye(n);
    let inv_sqrt: Vec<f64> = a.rows().into_iter().map(|r| 1.0 / r.sum().sqrt()).collect();
    Ok(Mat::from_shape_fn((n, n), |(i, k)| a[[i, k]] * inv_sqrt[i] * inv_sqrt[k]))
}

impl GraphEncoder {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        graph: &GraphStructure,
        dims: EncoderDims,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let h = dims.hidden;
        let f = graph.node_features.ncols();
        Ok(Self {
            conv1: Linear::new(store, &format!("{name}.gcn1"), f, h, rng),
            conv2: Linear::new(store, &format!("{name}.gcn2"), h, h, rng),
            head: Linear::new(store, &format!("{name}.head"), h, 2 * dims.latent_dim, rng),
            norm_adjacency: normalized_adjacency(&graph.adjacency)?,
            node_features: graph.node_features.clone(),
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.norm_adjacency.nrows()
    }

    /// Latents for every node, `N_j × d`.
    pub fn encode_all(&self, s: &Session) -> GaussianVar {
        let a = s.leaf(self.norm_adjacency.clone());
        let x = s.leaf(self.node_features.clone());
        let h1 = s.relu(self.conv1.forward(s, s.matmul(a, x)));
        let h2 = s.relu(self.conv2.forward(s, s.matmul(a, h1)));
        GaussianVar::from_head(s, self.head.forward(s, h2))
    }

    pub fn encode(&self, s: &Session, nodes: &[usize]) -> Result<GaussianVar> {
        if let Some(&bad) = nodes.iter().find(|&&i| i >= self.num_nodes()) {
            return Err(CamulError::OutOfVocabulary { index: bad, size: self.num_nodes() });
        }
        let all = self.encode_all(s);
        Ok(GaussianVar { mean: s.gather_rows(all.mean, nodes), log_std: s.gather_rows(all.log_std, nodes) })
    }
}

#[derive(Debug, Clone)]
pub enum ViewEncoder {
    Sequence(SequenceEncoder),
    Static(StaticEncoder),
    Categorical(CategoricalEncoder),
    Graph(GraphEncoder),
}

impl ViewEncoder {
    /// Builds the encoder matching the view's modality.
    pub fn for_view(
        store: &mut ParamStore,
        name: &str,
        view: &ViewData,
        dims: EncoderDims,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let dims = EncoderDims { hidden: view.spec.encoder.hidden.unwrap_or(dims.hidden), ..dims };
        let feature_dim = view.spec.encoder.feature_dim;
        Ok(match view.spec.modality {
            Modality::Sequence => ViewEncoder::Sequence(SequenceEncoder::new(store, name, feature_dim, dims, rng)),
            Modality::Static => ViewEncoder::Static(StaticEncoder::new(store, name, feature_dim, dims, rng)),
            Modality::Categorical => {
                let vocab = view.spec.encoder.vocab_size.filter(|&v| v > 0).ok_or_else(|| {
                    CamulError::InvalidConfig(format!("categorical view {} needs vocab_size", view.view_id()))
                })?;
                ViewEncoder::Categorical(CategoricalEncoder::new(store, name, vocab, dims, rng))
            }
            Modality::Graph => {
                let graph = view.graph.as_ref().ok_or_else(|| {
                    CamulError::Validation(format!("view {}: graph_structure absent", view.view_id()))
                })?;
                ViewEncoder::Graph(GraphEncoder::new(store, name, graph, dims, rng)?)
            }
        })
    }

    pub fn modality(&self) -> Modality {
        match self {
            ViewEncoder::Sequence(_) => Modality::Sequence,
            ViewEncoder::Static(_) => Modality::Static,
            ViewEncoder::Categorical(_) => Modality::Categorical,
            ViewEncoder::Graph(_) => Modality::Graph,
        }
    }

    pub fn encode(&self, s: &Session, input: &ViewInput) -> Result<GaussianVar> {
        match (self, input) {
            (ViewEncoder::Sequence(e), ViewInput::Sequence(x)) => Ok(e.encode(s, x)?.0),
            (ViewEncoder::Static(e), ViewInput::Static(x)) => e.encode(s, x),
            (ViewEncoder::Categorical(e), ViewInput::Categorical(x)) => e.encode(s, x),
            (ViewEncoder::Graph(e), ViewInput::Graph(x)) => e.encode(s, x),
            _ => Err(CamulError::Validation(format!("input does not match {:?} encoder", self.modality()))),
        }
    }

    /// Encodes individual payloads outside of training.
    pub fn encode_payloads(&self, store: &ParamStore, payloads: &[Payload]) -> Result<Vec<GaussianLatent>> {
        let input = ViewInput::from_payloads(self.modality(), payloads)?;
        let s = Session::new(store);
        let g = self.encode(&s, &input)?;
        Ok(GaussianLatent::from_rows(&s.value(g.mean), &s.value(g.log_std)))
    }
}

fn single(latents: Vec<GaussianLatent>) -> GaussianLatent {
    latents.into_iter().next().expect("one latent")
}

pub fn encode_static(encoder: &StaticEncoder, store: &ParamStore, payload: &[f64]) -> Result<GaussianLatent> {
    let s = Session::new(store);
    let x = Mat::from_shape_vec((1, payload.len()), payload.to_vec()).expect("row");
    let g = encoder.encode(&s, &x)?;
    Ok(single(GaussianLatent::from_rows(&s.value(g.mean), &s.value(g.log_std))))
}

pub fn encode_categorical(encoder: &CategoricalEncoder, store: &ParamStore, index: usize) -> Result<GaussianLatent> {
    let s = Session::new(store);
    let g = encoder.encode(&s, &[index])?;
    Ok(single(GaussianLatent::from_rows(&s.value(g.mean), &s.value(g.log_std))))
}

/// Latent and per-step attention weights for one `L × F` sequence.
pub fn encode_sequence(
    encoder: &SequenceEncoder,
    store: &ParamStore,
    payload: &Mat,
) -> Result<(GaussianLatent, Vec<f64>)> {
    let s = Session::new(store);
    let (g, w) = encoder.encode(&s, std::slice::from_ref(payload))?;
    let latent = single(GaussianLatent::from_rows(&s.value(g.mean), &s.value(g.log_std)));
    Ok((latent, s.value(w).row(0).to_vec()))
}

pub fn encode_graph(encoder: &GraphEncoder, store: &ParamStore, node_index: usize) -> Result<GaussianLatent> {
    let s = Session::new(store);
    let g = encoder.encode(&s, &[node_index])?;
    Ok(single(GaussianLatent::from_rows(&s.value(g.mean), &s.value(g.log_std))))
}

/// Reparameterized draw `z = μ + σ ⊙ noise`.
pub fn sample_latent(latent: &GaussianLatent, noise: &[f64]) -> Result<Vec<f64>> {
    if noise.len() != latent.dim() {
        return Err(shape_err("latent noise", latent.dim(), noise.len()));
    }
    Ok(latent.mean.iter().zip(&latent.std).zip(noise).map(|((m, s), e)| m + s * e).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::{Rng, SeedableRng};

    fn dims(latent_dim: usize, hidden: usize) -> EncoderDims {
        EncoderDims { latent_dim, hidden }
    }

    fn zero_all(store: &mut ParamStore) {
        for e in store.entries_mut() {
            e.value.fill(0.0);
        }
    }

    #[test]
    fn static_zero_weights_give_unit_std() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let enc = StaticEncoder::new(&mut store, "v", 3, dims(4, 5), &mut rng);
        zero_all(&mut store);
        let out = encode_static(&enc, &store, &[1.0, -2.0, 0.5]).unwrap();
        assert_eq!(out.mean, vec![0.0; 4]);
        assert_eq!(out.std, vec![1.0; 4]);
    }

    #[test]
    fn static_rejects_wrong_width_and_is_deterministic() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let enc = StaticEncoder::new(&mut store, "v", 3, dims(4, 5), &mut rng);
        assert!(encode_static(&enc, &store, &[1.0]).is_err());
        let a = encode_static(&enc, &store, &[0.1, 0.2, 0.3]).unwrap();
        let b = encode_static(&enc, &store, &[0.1, 0.2, 0.3]).unwrap();
        assert_eq!(a, b);
    }

    /// Scalar-loop affine+ReLU oracle.
    fn mlp_oracle(store: &ParamStore, mlp: &Mlp, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        for (li, layer) in mlp.layers.iter().enumerate() {
            let w = store.get(layer.weight);
            let b = store.get(layer.bias);
            let mut out = vec![0.0; layer.out_dim];
            for o in 0..layer.out_dim {
                let mut acc = b[[0, o]];
                for i in 0..layer.in_dim {
                    acc += h[i] * w[[i, o]];
                }
                out[o] = if li + 1 < mlp.layers.len() { acc.max(0.0) } else { acc };
            }
            h = out;
        }
        h
    }

    #[test]
    fn static_matches_scalar_oracle() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let enc = StaticEncoder::new(&mut store, "v", 3, dims(2, 6), &mut rng);
        let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let out = encode_static(&enc, &store, &x).unwrap();
        let raw = mlp_oracle(&store, &enc.net, &x);
        for k in 0..2 {
            assert_abs_diff_eq!(out.mean[k], raw[k], epsilon = 1e-6);
            assert_abs_diff_eq!(out.std[k], raw[2 + k].exp(), epsilon = 1e-6);
        }
    }

    #[test]
    fn categorical_lookup_equals_one_hot_product() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let enc = CategoricalEncoder::new(&mut store, "c", 4, dims(2, 3), &mut rng);
        let table = store.get(enc.table).clone();
        for idx in 0..4 {
            let one_hot = Mat::from_shape_fn((1, 4), |(_, k)| if k == idx { 1.0 } else { 0.0 });
            let row = one_hot.dot(&table);
            let expected = mlp_oracle(&store, &enc.net, row.row(0).as_slice().unwrap());
            let out = encode_categorical(&enc, &store, idx).unwrap();
            assert_abs_diff_eq!(out.mean[0], expected[0], epsilon = 1e-12);
            assert_abs_diff_eq!(out.mean[1], expected[1], epsilon = 1e-12);
        }
        let a = encode_categorical(&enc, &store, 0).unwrap();
        let b = encode_categorical(&enc, &store, 1).unwrap();
        assert_ne!(a.mean, b.mean);
        assert!(matches!(encode_categorical(&enc, &store, 4), Err(CamulError::OutOfVocabulary { index: 4, size: 4 })));
    }

    #[test]
    fn categorical_zero_head_has_unit_std() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let enc = CategoricalEncoder::new(&mut store, "c", 4, dims(2, 3), &mut rng);
        for layer in &enc.net.layers {
            store.get_mut(layer.weight).fill(0.0);
            store.get_mut(layer.bias).fill(0.0);
        }
        for idx in 0..4 {
            assert_eq!(encode_categorical(&enc, &store, idx).unwrap().std, vec![1.0, 1.0]);
        }
    }

    #[test]
    fn sequence_singleton_attention_is_one() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let enc = SequenceEncoder::new(&mut store, "seq", 1, dims(3, 4), &mut rng);
        let (_, w) = encode_sequence(&enc, &store, &array![[0.7]]).unwrap();
        assert_eq!(w, vec![1.0]);
        assert!(encode_sequence(&enc, &store, &Mat::zeros((0, 1))).is_err());
    }

    #[test]
    fn sequence_attention_is_a_distribution() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let enc = SequenceEncoder::new(&mut store, "seq", 2, dims(3, 4), &mut rng);
        for _ in 0..10 {
            let len = rng.random_range(1..15);
            let x = Mat::from_shape_simple_fn((len, 2), || rng.random_range(-3.0..3.0));
            let (lat, w) = encode_sequence(&enc, &store, &x).unwrap();
            assert_eq!(w.len(), len);
            assert!(w.iter().all(|&a| a >= 0.0));
            assert_abs_diff_eq!(w.iter().sum::<f64>(), 1.0, epsilon = 1e-6);
            assert!(lat.std.iter().all(|&s| s > 0.0));
        }
    }

    fn sigmoid(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    /// Step-by-step scalar GRU recurrence.
    fn gru_oracle(store: &ParamStore, cell: &GruCell, xs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let hd = cell.hidden_dim;
        let wx = store.get(cell.input_weight);
        let wh = store.get(cell.hidden_weight);
        let bx = store.get(cell.input_bias);
        let bh = store.get(cell.hidden_bias);
        let mut h = vec![0.0; hd];
        let mut out = Vec::new();
        for x in xs {
            let gate = |g: usize, k: usize, with_h: bool| {
                let col = g * hd + k;
                let mut a = bx[[0, col]];
                for (i, xi) in x.iter().enumerate() {
                    a += xi * wx[[i, col]];
                }
                let mut c = bh[[0, col]];
                if with_h {
                    for (i, hi) in h.iter().enumerate() {
                        c += hi * wh[[i, col]];
                    }
                }
                (a, c)
            };
            let mut next = vec![0.0; hd];
            for k in 0..hd {
                let (ra, rc) = gate(0, k, true);
                let (za, zc) = gate(1, k, true);
                let (na, nc) = gate(2, k, true);
                let r = sigmoid(ra + rc);
                let z = sigmoid(za + zc);
                let n = (na + r * nc).tanh();
                next[k] = (1.0 - z) * n + z * h[k];
            }
            h = next;
            out.push(h.clone());
        }
        out
    }

    #[test]
    fn sequence_matches_scalar_recurrence_oracle() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let enc = SequenceEncoder::new(&mut store, "seq", 1, dims(2, 2), &mut rng);
        // Hand-set weights.
        for (i, e) in store.entries_mut().iter_mut().enumerate() {
            let len = e.value.len();
            for (k, v) in e.value.iter_mut().enumerate() {
                *v = 0.3 * (((i * 7 + k * 3) % 11) as f64 / 11.0 - 0.5) + 0.05 * (k as f64 / len as f64);
            }
        }
        let xs = vec![vec![0.5], vec![-1.0], vec![2.0]];
        let fwd = gru_oracle(&store, &enc.forward_cell, &xs);
        let rev: Vec<Vec<f64>> = xs.iter().rev().cloned().collect();
        let mut bwd = gru_oracle(&store, &enc.backward_cell, &rev);
        bwd.reverse();
        let states: Vec<Vec<f64>> = fwd.iter().zip(&bwd).map(|(f, b)| f.iter().chain(b).copied().collect()).collect();

        let dense = |layer: &Linear, x: &[f64]| -> Vec<f64> {
            let w = store.get(layer.weight);
            let b = store.get(layer.bias);
            (0..layer.out_dim).map(|o| b[[0, o]] + (0..layer.in_dim).map(|i| x[i] * w[[i, o]]).sum::<f64>()).collect()
        };
        let scores: Vec<f64> = states
            .iter()
            .map(|z| {
                let hid: Vec<f64> = dense(&enc.attn_hidden, z).into_iter().map(f64::tanh).collect();
                dense(&enc.attn_score, &hid)[0]
            })
            .collect();
        let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
        let tot: f64 = e.iter().sum();
        let alpha: Vec<f64> = e.iter().map(|v| v / tot).collect();
        let pooled: Vec<f64> = (0..4).map(|k| (0..3).map(|t| alpha[t] * states[t][k]).sum()).collect();
        let raw = dense(&enc.head, &pooled);

        let x = array![[0.5], [-1.0], [2.0]];
        let (lat, w) = encode_sequence(&enc, &store, &x).unwrap();
        for t in 0..3 {
            assert_abs_diff_eq!(w[t], alpha[t], epsilon = 1e-6);
        }
        for k in 0..2 {
            assert_abs_diff_eq!(lat.mean[k], raw[k], epsilon = 1e-6);
            assert_abs_diff_eq!(lat.std[k], raw[2 + k].exp(), epsilon = 1e-6);
        }
    }

    fn graph_encoder(adj: Mat, feats: Mat, seed: u64) -> (ParamStore, GraphEncoder) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let enc = GraphEncoder::new(
            &mut store,
            "g",
            &GraphStructure { adjacency: adj, node_features: feats },
            dims(2, 3),
            &mut rng,
        )
        .unwrap();
        (store, enc)
    }

    #[test]
    fn graph_single_node_reduces_to_feed_forward() {
        let feats = array![[0.4, -0.3]];
        let (store, enc) = graph_encoder(Mat::zeros((1, 1)), feats.clone(), 1);
        let ff = Mlp { layers: vec![enc.conv1.clone(), enc.conv2.clone(), enc.head.clone()] };
        // Both conv outputs pass through ReLU, so the equivalent network has a
        // ReLU after every hidden layer, exactly the Mlp convention.
        let expected = mlp_oracle(&store, &ff, &[0.4, -0.3]);
        let out = encode_graph(&enc, &store, 0).unwrap();
        assert_abs_diff_eq!(out.mean[0], expected[0], epsilon = 1e-12);
        assert_abs_diff_eq!(out.std[1], expected[3].exp(), epsilon = 1e-12);
    }

    #[test]
    fn graph_is_equivariant_to_relabeling() {
        let adj = array![[0.0, 1.0, 0.0, 2.0], [1.0, 0.0, 1.0, 0.0], [0.0, 1.0, 0.0, 0.5], [2.0, 0.0, 0.5, 0.0]];
        let feats = array![[1.0, 0.0], [0.0, 1.0], [0.5, 0.5], [-1.0, 0.2]];
        let perm = [2usize, 0, 3, 1];
        let padj = Mat::from_shape_fn((4, 4), |(i, k)| adj[[perm[i], perm[k]]]);
        let pfeat = Mat::from_shape_fn((4, 2), |(i, f)| feats[[perm[i], f]]);
        let (store, enc) = graph_encoder(adj, feats, 3);
        let (_, penc) = graph_encoder(padj, pfeat, 3);
        for i in 0..4 {
            let a = encode_graph(&penc, &store, i).unwrap();
            let b = encode_graph(&enc, &store, perm[i]).unwrap();
            for k in 0..2 {
                assert_abs_diff_eq!(a.mean[k], b.mean[k], epsilon = 1e-12);
                assert_abs_diff_eq!(a.std[k], b.std[k], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn graph_path_matches_dense_oracle() {
        let adj = array![[0.0, 1.0, 0.0], [1.0, 0.0, 1.0], [0.0, 1.0, 0.0]];
        let feats = array![[1.0, 0.5], [0.0, -1.0], [2.0, 0.25]];
        let (store, enc) = graph_encoder(adj.clone(), feats.clone(), 4);
        // Explicit Â = D^-1/2 (A + I) D^-1/2 with degrees (2, 3, 2).
        let deg = [2.0f64, 3.0, 2.0];
        let a_hat = Mat::from_shape_fn((3, 3), |(i, k)| {
            let a = adj[[i, k]] + if i == k { 1.0 } else { 0.0 };
            a / (deg[i].sqrt() * deg[k].sqrt())
        });
        let lin = |layer: &Linear, x: &Mat| x.dot(store.get(layer.weight)) + store.get(layer.bias);
        let h1 = lin(&enc.conv1, &a_hat.dot(&feats)).mapv(|v| v.max(0.0));
        let h2 = lin(&enc.conv2, &a_hat.dot(&h1)).mapv(|v| v.max(0.0));
        let out = lin(&enc.head, &h2);
        for node in 0..3 {
            let lat = encode_graph(&enc, &store, node).unwrap();
            for k in 0..2 {
                assert_abs_diff_eq!(lat.mean[k], out[[node, k]], epsilon = 1e-6);
                assert_abs_diff_eq!(lat.std[k], out[[node, 2 + k]].exp(), epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn non_square_adjacency_is_rejected() {
        assert!(normalized_adjacency(&Mat::zeros((2, 3))).is_err());
    }

    #[test]
    fn sample_latent_cases() {
        let lat = GaussianLatent::new(vec![1.0, -2.0], vec![0.5, 2.0]).unwrap();
        assert_eq!(sample_latent(&lat, &[0.0, 0.0]).unwrap(), lat.mean);
        assert_eq!(sample_latent(&lat, &[1.0, -1.0]).unwrap(), vec![1.5, -4.0]);
        let collapsed = GaussianLatent { mean: vec![3.0], std: vec![0.0] };
        assert_eq!(sample_latent(&collapsed, &[1.7]).unwrap(), vec![3.0]);
        assert!(sample_latent(&lat, &[0.0]).is_err());
    }
}
