//! Core domain types: the target panel, views and their payloads, reference
//! sets, Gaussian latents and training instances.
//!
//! View 1 is always the *default view*: a sequence view whose per-series
//! payload is the target history itself. Other views carry exogenous data of one
//! of four modalities. Each view stores one [`Track`] per series; a track is
//! either a time-aligned feature matrix (sequence views), a payload per time
//! step, or a payload that is constant over time.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use crate::autodiff::Mat;
use crate::error::{CamulError, Result};

/// Default latent dimension.
pub const DEFAULT_LATENT_DIM: usize = 60;

/// Serializes a matrix as a list of rows.
pub mod mat_rows {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &Mat, ser: S) -> std::result::Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m.rows().into_iter().map(|r| r.to_vec()).collect();
        rows.serialize(ser)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> std::result::Result<Mat, D::Error> {
        let rows: Vec<Vec<f64>> = Vec::deserialize(de)?;
        rows_to_mat(&rows).map_err(serde::de::Error::custom)
    }

    pub fn rows_to_mat(rows: &[Vec<f64>]) -> std::result::Result<Mat, String> {
        let ncols = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err("ragged matrix rows".into());
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Array2::from_shape_vec((rows.len(), ncols), flat).map_err(|e| e.to_string())
    }
}

/// `N` univariate target series over `T` shared time steps.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesPanel {
    pub series_ids: Vec<String>,
    /// `N × T`, target units.
    pub values: Mat,
    pub time_index: Vec<i64>,
}

impl SeriesPanel {
    pub fn new(series_ids: Vec<String>, values: Mat, time_index: Vec<i64>) -> Result<Self> {
        let panel = Self { series_ids, values, time_index };
        let issues = panel.issues();
        if issues.is_empty() {
            Ok(panel)
        } else {
            Err(CamulError::Validation(issues.join("; ")))
        }
    }

    /// Panel with time index `0..T`.
    pub fn from_rows(series_ids: Vec<String>, values: Mat) -> Result<Self> {
        let t = values.ncols() as i64;
        Self::new(series_ids, values, (0..t).collect())
    }

    fn issues(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.series_ids.is_empty() || self.values.nrows() == 0 {
            out.push("empty panel".to_string());
        }
        if self.values.nrows() != self.series_ids.len() {
            out.push(format!("panel has {} rows but {} series ids", self.values.nrows(), self.series_ids.len()));
        }
        if self.values.ncols() < 2 {
            out.push(format!("series length {} is below 2", self.values.ncols()));
        }
        if self.time_index.len() != self.values.ncols() {
            out.push(format!(
                "time index length {} does not match series length {}",
                self.time_index.len(),
                self.values.ncols()
            ));
        }
        if self.time_index.windows(2).any(|w| w[1] <= w[0]) {
            out.push("time index is not strictly increasing".to_string());
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            out.push("panel contains non-finite values".to_string());
        }
        let unique: BTreeSet<_> = self.series_ids.iter().collect();
        if unique.len() != self.series_ids.len() {
            out.push("duplicate series ids".to_string());
        }
        out
    }

    pub fn n_series(&self) -> usize {
        self.values.nrows()
    }

    pub fn len(&self) -> usize {
        self.values.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn series(&self, i: usize) -> ndarray::ArrayView1<'_, f64> {
        self.values.row(i)
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.series_ids.iter().position(|s| s == id)
    }

    /// First `len` time steps of every series.
    pub fn truncate(&self, len: usize) -> Result<Self> {
        if len > self.len() {
            return Err(CamulError::InvalidConfig(format!("cannot truncate a length-{} panel to {len}", self.len())));
        }
        Self::new(self.series_ids.clone(), self.values.slice(s![.., ..len]).to_owned(), self.time_index[..len].to_vec())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Sequence,
    Static,
    Categorical,
    Graph,
}

/// Modality-specific encoder hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    /// Hidden width; the model-wide width is used when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden: Option<usize>,
    /// Features per time step (sequence), vector length (static) or node
    /// feature length (graph). Ignored for categorical views.
    #[serde(default = "one")]
    pub feature_dim: usize,
    /// Number of categories; required for categorical views.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab_size: Option<usize>,
}

fn one() -> usize {
    1
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { hidden: None, feature_dim: 1, vocab_size: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewSpec {
    pub view_id: usize,
    pub modality: Modality,
    pub is_default: bool,
    #[serde(default)]
    pub encoder: EncoderConfig,
}

/// One data point of a view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Payload {
    /// `L × F` feature rows.
    Sequence(#[serde(with = "mat_rows")] Mat),
    Static(Vec<f64>),
    Categorical(usize),
    /// Node index into the view's graph.
    Graph(usize),
}

impl Payload {
    pub fn modality(&self) -> Modality {
        match self {
            Payload::Sequence(_) => Modality::Sequence,
            Payload::Static(_) => Modality::Static,
            Payload::Categorical(_) => Modality::Categorical,
            Payload::Graph(_) => Modality::Graph,
        }
    }

    /// Shape signature used to check uniformity within a view.
    fn shape_key(&self) -> (Modality, usize) {
        match self {
            Payload::Sequence(m) => (Modality::Sequence, m.ncols()),
            Payload::Static(v) => (Modality::Static, v.len()),
            Payload::Categorical(_) => (Modality::Categorical, 0),
            Payload::Graph(_) => (Modality::Graph, 0),
        }
    }

    fn is_finite(&self) -> bool {
        match self {
            Payload::Sequence(m) => m.iter().all(|v| v.is_finite()),
            Payload::Static(v) => v.iter().all(|v| v.is_finite()),
            _ => true,
        }
    }
}

/// Per-series payload source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Track {
    /// `T × F` time-aligned features; windows slice the same rows as the target window.
    Series(#[serde(with = "mat_rows")] Mat),
    /// One payload per time step.
    PerStep(Vec<Payload>),
    /// A payload that does not change over time.
    Constant(Payload),
}

impl Track {
    /// Payload for the window `[start, start + len)`. Non-sequence tracks use
    /// the value at the last window step, i.e. the forecast origin.
    pub fn window_payload(&self, start: usize, len: usize) -> Result<Payload> {
        match self {
            Track::Series(m) => {
                if start + len > m.nrows() {
                    return Err(crate::error::shape_err(
                        "sequence track window",
                        format!("at least {} rows", start + len),
                        m.nrows(),
                    ));
                }
                Ok(Payload::Sequence(m.slice(s![start..start + len, ..]).to_owned()))
            }
            Track::PerStep(v) => v.get(start + len - 1).cloned().ok_or_else(|| {
                crate::error::shape_err("per-step track", format!("at least {} steps", start + len), v.len())
            }),
            Track::Constant(p) => Ok(p.clone()),
        }
    }

    fn steps(&self) -> Option<usize> {
        match self {
            Track::Series(m) => Some(m.nrows()),
            Track::PerStep(v) => Some(v.len()),
            Track::Constant(_) => None,
        }
    }

    fn payloads(&self) -> Box<dyn Iterator<Item = Payload> + '_> {
        match self {
            Track::Series(m) => Box::new(std::iter::once(Payload::Sequence(m.clone()))),
            Track::PerStep(v) => Box::new(v.iter().cloned()),
            Track::Constant(p) => Box::new(std::iter::once(p.clone())),
        }
    }

    /// First `len` steps.
    pub fn truncate(&self, len: usize) -> Track {
        match self {
            Track::Series(m) => Track::Series(m.slice(s![..len.min(m.nrows()), ..]).to_owned()),
            Track::PerStep(v) => Track::PerStep(v[..len.min(v.len())].to_vec()),
            Track::Constant(p) => Track::Constant(p.clone()),
        }
    }
}

/// Adjacency and node features of a graph view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphStructure {
    /// `N_j × N_j`, nonnegative weights.
    #[serde(with = "mat_rows")]
    pub adjacency: Mat,
    /// `N_j × F`.
    #[serde(with = "mat_rows")]
    pub node_features: Mat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewData {
    pub spec: ViewSpec,
    /// Keyed by series id.
    pub tracks: BTreeMap<String, Track>,
    pub graph: Option<GraphStructure>,
}

impl ViewData {
    pub fn view_id(&self) -> usize {
        self.spec.view_id
    }

    pub fn modality(&self) -> Modality {
        self.spec.modality
    }

    pub fn track(&self, series_id: &str) -> Result<&Track> {
        self.tracks.get(series_id).ok_or_else(|| {
            CamulError::Validation(format!("view {} has no payload for series `{series_id}`", self.spec.view_id))
        })
    }

    /// Number of reference points implied by the modality, when fixed by the view itself.
    pub fn vocab_size(&self) -> Option<usize> {
        match self.spec.modality {
            Modality::Categorical => self.spec.encoder.vocab_size,
            Modality::Graph => self.graph.as_ref().map(|g| g.adjacency.nrows()),
            _ => None,
        }
    }

    pub fn truncate(&self, len: usize) -> ViewData {
        ViewData {
            spec: self.spec.clone(),
            tracks: self.tracks.iter().map(|(k, t)| (k.clone(), t.truncate(len))).collect(),
            graph: self.graph.clone(),
        }
    }
}

/// Representative points of one view.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSet {
    pub view_id: usize,
    pub points: Vec<Payload>,
}

impl ReferenceSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Diagonal Gaussian with mean and standard deviation vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianLatent {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl GaussianLatent {
    pub fn new(mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        if mean.len() != std.len() {
            return Err(crate::error::shape_err("gaussian latent", mean.len(), std.len()));
        }
        if mean.iter().chain(&std).any(|v| !v.is_finite()) || std.iter().any(|&s| s <= 0.0) {
            return Err(CamulError::Validation("gaussian latent needs finite mean and strictly positive std".into()));
        }
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// One latent per row of `mean` / `log_std`.
    pub fn from_rows(mean: &Mat, log_std: &Mat) -> Vec<GaussianLatent> {
        mean.rows()
            .into_iter()
            .zip(log_std.rows())
            .map(|(m, l)| GaussianLatent { mean: m.to_vec(), std: l.iter().map(|v| v.exp()).collect() })
            .collect()
    }
}

/// One shingled window with its forecast target.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingInstance {
    pub series_id: String,
    pub series_index: usize,
    /// Zero-based index of the first window step.
    pub start: usize,
    pub window: Vec<f64>,
    /// Zero-based index of the target step.
    pub target_index: usize,
    pub target: f64,
    /// Keyed by view id; view 1 holds the window itself.
    pub view_payloads: BTreeMap<usize, Payload>,
}

impl TrainingInstance {
    pub fn window_end(&self) -> usize {
        self.start + self.window.len() - 1
    }
}

/// Panel plus all views, default view first.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub panel: SeriesPanel,
    pub views: Vec<ViewData>,
}

impl Dataset {
    /// Builds the default view from `panel` and appends `extra_views`.
    pub fn new(panel: SeriesPanel, extra_views: Vec<ViewData>) -> Result<Self> {
        let mut views = vec![build_default_view(&panel)?];
        views.extend(extra_views);
        Ok(Self { panel, views })
    }

    pub fn view_specs(&self) -> Vec<ViewSpec> {
        self.views.iter().map(|v| v.spec.clone()).collect()
    }

    /// Keeps the default view and the listed view ids, renumbering them `1..K`.
    pub fn select_views(&self, keep: &[usize]) -> Result<Self> {
        let mut views = vec![self.views[0].clone()];
        for &id in keep.iter().filter(|&&id| id != 1) {
            let view = self
                .views
                .iter()
                .find(|v| v.view_id() == id)
                .ok_or_else(|| CamulError::InvalidConfig(format!("dataset has no view {id}")))?;
            let mut view = view.clone();
            view.spec.view_id = views.len() + 1;
            views.push(view);
        }
        Ok(Self { panel: self.panel.clone(), views })
    }
}

/// Restructures the panel into the sequence-modality default view (view 1).
pub fn build_default_view(panel: &SeriesPanel) -> Result<ViewData> {
    if panel.n_series() == 0 || panel.len() == 0 {
        return Err(CamulError::Validation("empty panel".into()));
    }
    let tracks = panel
        .series_ids
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let col = panel.series(i).to_owned().insert_axis(ndarray::Axis(1));
            (id.clone(), Track::Series(col))
        })
        .collect();
    Ok(ViewData {
        spec: ViewSpec {
            view_id: 1,
            modality: Modality::Sequence,
            is_default: true,
            encoder: EncoderConfig::default(),
        },
        tracks,
        graph: None,
    })
}

/// Inverse of [`build_default_view`].
pub fn panel_from_default_view(view: &ViewData, series_ids: &[String], time_index: Vec<i64>) -> Result<SeriesPanel> {
    let mut rows = Vec::with_capacity(series_ids.len());
    for id in series_ids {
        match view.track(id)? {
            Track::Series(m) if m.ncols() == 1 => rows.push(m.column(0).to_vec()),
            _ => {
                return Err(CamulError::Validation(format!("default-view track for `{id}` is not a univariate series")))
            }
        }
    }
    let values = mat_rows::rows_to_mat(&rows).map_err(CamulError::Validation)?;
    SeriesPanel::new(series_ids.to_vec(), values, time_index)
}

/// Every invariant violation found in a dataset; empty when well-formed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub issues: Vec<String>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.issues.is_empty()
    }

    pub fn contains(&self, needle: &str) -> bool {
        self.issues.iter().any(|i| i.contains(needle))
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_ok() {
            Ok(())
        } else {
            Err(CamulError::Validation(self.issues.join("; ")))
        }
    }
}

pub fn validate_dataset(panel: &SeriesPanel, views: &[ViewData], refs: &[ReferenceSet]) -> ValidationReport {
    let mut issues = panel.issues();

    let defaults: Vec<_> = views.iter().filter(|v| v.spec.is_default).collect();
    match defaults.len() {
        0 => issues.push("missing default view".into()),
        1 => {
            let d = defaults[0];
            if d.spec.view_id != 1 {
                issues.push(format!("default view has id {} instead of 1", d.spec.view_id));
            }
            if d.spec.modality != Modality::Sequence {
                issues.push("default view modality is not sequence".into());
            }
        }
        _ => issues.push("multiple default views".into()),
    }
    let mut ids: Vec<usize> = views.iter().map(|v| v.spec.view_id).collect();
    ids.sort_unstable();
    if ids != (1..=views.len()).collect::<Vec<_>>() {
        issues.push(format!("view ids {ids:?} do not form 1..{}", views.len()));
    }

    for view in views {
        check_view(panel, view, &mut issues);
    }

    if !refs.is_empty() {
        for view in views {
            let j = view.spec.view_id;
            match refs.iter().find(|r| r.view_id == j) {
                None => issues.push(format!("view {j}: reference set missing")),
                Some(r) if r.points.is_empty() => issues.push(format!("view {j}: reference set is empty")),
                Some(r) => {
                    if r.points.iter().any(|p| p.modality() != view.spec.modality) {
                        issues.push(format!("view {j}: reference payload modality mismatch"));
                    }
                    if r.points.iter().any(|p| !p.is_finite()) {
                        issues.push(format!("view {j}: reference payload contains NaN"));
                    }
                }
            }
        }
    }
    ValidationReport { issues }
}

fn check_view(panel: &SeriesPanel, view: &ViewData, issues: &mut Vec<String>) {
    let j = view.spec.view_id;
    let modality = view.spec.modality;
    let mut shapes = BTreeSet::new();
    for id in &panel.series_ids {
        let Some(track) = view.tracks.get(id) else {
            issues.push(format!("view {j}: missing payload for series `{id}`"));
            continue;
        };
        if let Some(steps) = track.steps() {
            if steps != panel.len() {
                issues.push(format!("view {j}: track for `{id}` has {steps} steps, panel has {}", panel.len()));
            }
        }
        for p in track.payloads() {
            if p.modality() != modality {
                issues.push(format!("view {j}: payload modality {:?} does not match {modality:?}", p.modality()));
                return;
            }
            if !p.is_finite() {
                issues.push(format!("view {j}: payload for `{id}` contains NaN"));
            }
            shapes.insert(p.shape_key());
            match (&p, view.vocab_size()) {
                (Payload::Categorical(i), Some(v)) | (Payload::Graph(i), Some(v)) if *i >= v => {
                    issues.push(format!("view {j}: index {i} out of range {v}"));
                }
                _ => {}
            }
        }
    }
    if shapes.len() > 1 {
        issues.push(format!("view {j}: payload shapes are not uniform"));
    }
    if modality == Modality::Categorical && view.spec.encoder.vocab_size.unwrap_or(0) == 0 {
        issues.push(format!("view {j}: categorical view without vocabulary"));
    }
    if modality == Modality::Graph {
        match &view.graph {
            None => issues.push(format!("view {j}: graph_structure absent")),
            Some(g) => {
                if g.adjacency.nrows() != g.adjacency.ncols() {
                    issues.push(format!("view {j}: adjacency is not square"));
                }
                if g.adjacency.iter().any(|v| v.is_nan()) || g.node_features.iter().any(|v| v.is_nan()) {
                    issues.push(format!("view {j}: graph contains NaN"));
                }
                if g.adjacency.iter().any(|&v| v < 0.0) {
                    issues.push(format!("view {j}: adjacency has negative weights"));
                }
                if g.node_features.nrows() != g.adjacency.nrows() {
                    issues.push(format!("view {j}: node feature rows do not match adjacency"));
                }
            }
        }
    }
}
