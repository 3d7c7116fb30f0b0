//! The five batch commands. Each takes a parsed config plus command-line
//! overrides, writes its outputs and a manifest, and returns a report.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use camul_core::data::validate_dataset;
use camul_core::inference::{attention_by_series, score_ensemble};
use camul_core::io::write_dataset;
use camul_core::metrics::EvalResult;
use camul_core::pipeline::forecast_instances;
use camul_core::preprocessing::build_reference_sets;
use camul_core::{
    prepare, sample_forecasts, summarize, train, CamulError, CamulModel, Checkpoint, Execution, ForecastSummary,
    InferenceConfig, PreparedData, SplitConfig, TrainingInstance,
};

use crate::config::ExperimentConfig;
use crate::manifest::{RunManifest, Timings};
use crate::plot;
use crate::UserError;

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const HISTORY_FILE: &str = "history.jsonl";
pub const EVAL_FILE: &str = "eval.json";
pub const SCORES_FILE: &str = "scores.csv";
pub const ATTENTION_FILE: &str = "attention.csv";
pub const FORECAST_FILE: &str = "forecast.json";
pub const FORECAST_CSV: &str = "forecast.csv";

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub force: bool,
    pub checkpoint: Option<PathBuf>,
    pub samples: Option<usize>,
    pub horizon: Option<usize>,
    pub epochs: Option<usize>,
    pub series: Vec<String>,
}

/// Config after overrides, with the output directory resolved.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: ExperimentConfig,
    pub out: PathBuf,
    pub horizons: Vec<usize>,
    pub checkpoint: Option<PathBuf>,
    pub force: bool,
}

pub fn resolve(mut config: ExperimentConfig, o: &Overrides) -> Result<Resolved> {
    if let Some(seed) = o.seed {
        config.seed = seed;
    }
    if let Some(samples) = o.samples {
        config.metrics.samples = samples;
    }
    if let Some(epochs) = o.epochs {
        config.train.epochs = epochs;
    }
    if !o.series.is_empty() {
        config.forecast.series = o.series.clone();
    }
    if let Some(h) = o.horizon {
        config.horizons = vec![h];
    }
    config.validate()?;
    let out = o
        .out
        .clone()
        .or_else(|| config.out.clone())
        .ok_or_else(|| UserError("no output directory: pass --out or set `out` in the config".into()))?;
    let horizons = config.horizon_list();
    Ok(Resolved { config, out, horizons, checkpoint: o.checkpoint.clone(), force: o.force })
}

pub fn horizon_dir(out: &Path, horizon: usize) -> PathBuf {
    out.join(format!("h{horizon}"))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerateReport {
    pub files: Vec<PathBuf>,
    pub n_series: usize,
    pub length: usize,
    pub views: usize,
    pub reference_sizes: Vec<usize>,
}

fn is_dataset_file(name: &str) -> bool {
    name == camul_core::io::PANEL_FILE
        || (name.starts_with("view_") && name.ends_with(".json"))
        || (name.starts_with("graph_") && name.ends_with(".csv"))
}

/// Writes the synthetic dataset described by the config.
pub fn generate(r: &Resolved) -> Result<GenerateReport> {
    let mut spec =
        r.config.data.synthetic.clone().ok_or_else(|| UserError("generate needs a [data.synthetic] table".into()))?;
    spec.seed = r.config.seed;
    let out = &r.out;
    if out.exists() && fs::read_dir(out)?.next().is_some() {
        if !r.force {
            bail!(UserError(format!("{} is not empty; pass --force to overwrite", out.display())));
        }
        for entry in fs::read_dir(out)? {
            let entry = entry?;
            if is_dataset_file(&entry.file_name().to_string_lossy()) {
                fs::remove_file(entry.path())?;
            }
        }
    }
    create_dir(out)?;
    let data = camul_core::preprocessing::make_synthetic_panel(&spec).map_err(|e| UserError(e.to_string()))?;
    let dataset = match &r.config.data.views {
        Some(keep) => data.dataset.select_views(keep).map_err(|e| UserError(e.to_string()))?,
        None => data.dataset,
    };
    let files = write_dataset(out, &dataset)?;
    let refs = build_reference_sets(&dataset.views, &dataset.panel, r.config.model.reference_policy)?;
    validate_dataset(&dataset.panel, &dataset.views, &refs).into_result()?;

    let mut config = r.config.clone();
    config.data.synthetic = Some(spec);
    RunManifest::new("generate", config.seed, &config.canonical_json(), &files, out)?.write(out)?;
    Ok(GenerateReport {
        files,
        n_series: dataset.panel.n_series(),
        length: dataset.panel.len(),
        views: dataset.views.len(),
        reference_sizes: refs.iter().map(|r| r.len()).collect(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub horizon: usize,
    pub checkpoint: PathBuf,
    pub history: PathBuf,
    pub epochs: usize,
    pub final_loss: Option<f64>,
    pub final_val_crps: Option<f64>,
}

/// Trains one model per horizon and writes checkpoints and histories.
pub fn train_models(r: &Resolved) -> Result<Vec<TrainReport>> {
    let config = &r.config;
    let dataset = config.dataset()?;
    create_dir(&r.out)?;
    let mut timings = Timings::default();
    let mut files = Vec::new();
    let mut reports = Vec::new();
    for &h in &r.horizons {
        let dir = horizon_dir(&r.out, h);
        let ckpt_path = dir.join(CHECKPOINT_FILE);
        if ckpt_path.exists() && !r.force {
            bail!(UserError(format!("{} exists; pass --force to overwrite", ckpt_path.display())));
        }
        create_dir(&dir)?;
        let prepared = prepare(&dataset, &config.split_for(h))?;
        let mut model = CamulModel::new(config.model_for(h), &prepared.dataset.views, config.seed)?;
        info!(
            "horizon {h}: {} training and {} validation windows, {} parameters",
            prepared.train.len(),
            prepared.validation.len(),
            model.params.num_scalars()
        );
        let start = Instant::now();
        let history = train(&mut model, &prepared, &config.train, config.seed, Execution::default())?;
        timings.record(format!("h{h}.train"), start.elapsed().as_secs_f64());
        for (i, s) in history.seconds.iter().enumerate() {
            timings.record(format!("h{h}.epoch{}", i + 1), *s);
        }
        let history_path = dir.join(HISTORY_FILE);
        fs::write(&history_path, history.to_jsonl())?;
        files.push(history_path.clone());
        if let Some(detail) = &history.diverged {
            timings.write(&r.out, "train")?;
            return Err(CamulError::Divergence { epoch: history.epochs.len() + 1, detail: detail.clone() }.into());
        }
        let ck = Checkpoint {
            model,
            scaler: prepared.scaler.clone(),
            train_len: prepared.train_len,
            extra: serde_json::json!({ "seed": config.seed, "test_len": config.split.test_len }),
        };
        ck.save(&ckpt_path)?;
        files.push(ckpt_path.clone());
        let last = history.epochs.last();
        reports.push(TrainReport {
            horizon: h,
            checkpoint: ckpt_path,
            history: history_path,
            epochs: history.epochs.len(),
            final_loss: last.map(|e| e.loss),
            final_val_crps: last.and_then(|e| e.val_crps),
        });
    }
    RunManifest::new("train", config.seed, &config.canonical_json(), &files, &r.out)?.write(&r.out)?;
    timings.write(&r.out, "train")?;
    Ok(reports)
}

/// Checkpoints to use: the explicit one, or one per configured horizon.
fn checkpoints(r: &Resolved) -> Vec<PathBuf> {
    match &r.checkpoint {
        Some(p) => vec![p.clone()],
        None => r.horizons.iter().map(|&h| horizon_dir(&r.out, h).join(CHECKPOINT_FILE)).collect(),
    }
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    if !path.exists() {
        bail!(UserError(format!("checkpoint {} not found; run `train` first", path.display())));
    }
    Ok(Checkpoint::load(path)?)
}

/// Re-derives the data split a checkpoint was trained on and checks the data
/// still matches it.
pub fn prepare_for_checkpoint(config: &ExperimentConfig, ck: &Checkpoint) -> Result<PreparedData> {
    let dataset = config.dataset()?;
    ck.model.check_views(&dataset.view_specs())?;
    let mc = &ck.model.config;
    let split = SplitConfig {
        window: mc.window,
        horizon: mc.horizon,
        reference_policy: mc.reference_policy,
        ..config.split_for(mc.horizon)
    };
    let prepared = prepare(&dataset, &split)?;
    if prepared.train_len != ck.train_len || prepared.scaler != ck.scaler {
        return Err(CamulError::ConfigMismatch(format!(
            "checkpoint was fitted on the first {} steps with a different scaler; the data gives {} steps",
            ck.train_len, prepared.train_len
        ))
        .into());
    }
    Ok(prepared)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesAttention {
    pub series_id: String,
    /// Mean attention per view, in view order.
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRecord {
    #[serde(flatten)]
    pub summary: ForecastSummary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalFile {
    pub horizon: usize,
    pub samples: usize,
    pub seed: u64,
    pub view_ids: Vec<usize>,
    pub metrics: EvalResult,
    pub attention: Vec<SeriesAttention>,
    pub forecasts: Vec<ForecastRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForecastFile {
    pub horizon: usize,
    pub samples: usize,
    pub seed: u64,
    pub forecasts: Vec<ForecastRecord>,
}

/// Files written by `evaluate` and `forecast`, distinguished by `kind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OutputFile {
    Evaluation(EvalFile),
    Forecast(ForecastFile),
}

impl OutputFile {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| UserError(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| UserError(format!("{}: {e}", path.display())).into())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")
            .with_context(|| format!("writing {}", path.display()))
    }
}

fn inference_config(r: &Resolved, model: &CamulModel) -> InferenceConfig {
    InferenceConfig::for_model(model, r.config.metrics.samples, r.config.seed)
}

#[derive(Debug, Serialize)]
struct ScoreRow<'a> {
    series_id: &'a str,
    target_index: usize,
    truth: f64,
    crps: f64,
    interval_score: f64,
    mean: f64,
    median: f64,
    std: f64,
}

/// Scores held-out cells for every checkpoint.
pub fn evaluate(r: &Resolved) -> Result<Vec<EvalFile>> {
    let mut files = Vec::new();
    let mut timings = Timings::default();
    let mut results = Vec::new();
    for path in checkpoints(r) {
        let ck = load_checkpoint(&path)?;
        let prepared = prepare_for_checkpoint(&r.config, &ck)?;
        let h = ck.model.config.horizon;
        let dir = horizon_dir(&r.out, h);
        create_dir(&dir)?;

        let start = Instant::now();
        let cfg = inference_config(r, &ck.model);
        let ensemble = sample_forecasts(&ck.model, &prepared.test, &prepared.refs, &prepared.scaler, &cfg)?;
        timings.record(format!("h{h}.sample"), start.elapsed().as_secs_f64());
        let start = Instant::now();
        let metrics = score_ensemble(
            &ensemble,
            &prepared.test,
            &prepared.scaler,
            &r.config.metric_config(),
            Execution::default(),
        )?;
        timings.record(format!("h{h}.score"), start.elapsed().as_secs_f64());
        let summaries = summarize(&ensemble, &r.config.metrics.levels)?;
        let forecasts = summaries
            .into_iter()
            .zip(&metrics.per_cell)
            .map(|(summary, cell)| ForecastRecord { summary, truth: Some(cell.truth) })
            .collect();
        let attention = attention_by_series(&ensemble)
            .into_iter()
            .map(|(series_id, weights)| SeriesAttention { series_id, weights })
            .collect();
        let eval = EvalFile {
            horizon: h,
            samples: cfg.samples,
            seed: cfg.seed,
            view_ids: ck.model.view_ids(),
            metrics,
            attention,
            forecasts,
        };

        let eval_path = dir.join(EVAL_FILE);
        OutputFile::Evaluation(eval.clone()).write(&eval_path)?;
        let scores_path = dir.join(SCORES_FILE);
        write_scores(&scores_path, &eval)?;
        let attention_path = dir.join(ATTENTION_FILE);
        write_attention(&attention_path, &eval)?;
        files.extend([eval_path, scores_path, attention_path]);
        info!(
            "horizon {h}: CRPS {:.4}, IS {:.4}, CS {:.4} over {} cells",
            eval.metrics.crps, eval.metrics.interval_score, eval.metrics.calibration_score, eval.metrics.cells
        );
        results.push(eval);
    }
    RunManifest::new("evaluate", r.config.seed, &r.config.canonical_json(), &files, &r.out)?.write(&r.out)?;
    timings.write(&r.out, "evaluate")?;
    Ok(results)
}

fn write_scores(path: &Path, eval: &EvalFile) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for (cell, f) in eval.metrics.per_cell.iter().zip(&eval.forecasts) {
        w.serialize(ScoreRow {
            series_id: &cell.series_id,
            target_index: cell.target_index,
            truth: cell.truth,
            crps: cell.crps,
            interval_score: cell.interval_score,
            mean: f.summary.mean,
            median: f.summary.median,
            std: f.summary.std,
        })?;
    }
    w.flush()?;
    Ok(())
}

fn write_attention(path: &Path, eval: &EvalFile) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["series_id".to_string()];
    header.extend(eval.view_ids.iter().map(|j| format!("view_{j}")));
    w.write_record(&header)?;
    for a in &eval.attention {
        let mut row = vec![a.series_id.clone()];
        row.extend(a.weights.iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Instances whose windows end at the last observed step, restricted to the
/// requested series.
pub fn latest_windows(
    prepared: &PreparedData,
    window: usize,
    horizon: usize,
    series: &[String],
) -> Result<Vec<TrainingInstance>> {
    let all = forecast_instances(prepared, window, horizon)?;
    if series.is_empty() {
        return Ok(all);
    }
    series
        .iter()
        .map(|id| {
            all.iter().find(|i| &i.series_id == id).cloned().ok_or_else(|| CamulError::UnknownSeries(id.clone()).into())
        })
        .collect()
}

/// Forecasts past the end of the data for every checkpoint.
pub fn forecast(r: &Resolved) -> Result<Vec<ForecastFile>> {
    let mut files = Vec::new();
    let mut results = Vec::new();
    for path in checkpoints(r) {
        let ck = load_checkpoint(&path)?;
        let prepared = prepare_for_checkpoint(&r.config, &ck)?;
        let mc = &ck.model.config;
        let h = mc.horizon;
        let instances = latest_windows(&prepared, mc.window, h, &r.config.forecast.series)?;
        let cfg = inference_config(r, &ck.model);
        let ensemble = sample_forecasts(&ck.model, &instances, &prepared.refs, &prepared.scaler, &cfg)?;
        let forecasts = summarize(&ensemble, &r.config.forecast.levels)?
            .into_iter()
            .map(|summary| ForecastRecord { summary, truth: None })
            .collect();
        let file = ForecastFile { horizon: h, samples: cfg.samples, seed: cfg.seed, forecasts };
        let dir = horizon_dir(&r.out, h);
        create_dir(&dir)?;
        let json_path = dir.join(FORECAST_FILE);
        OutputFile::Forecast(file.clone()).write(&json_path)?;
        let csv_path = dir.join(FORECAST_CSV);
        write_forecast_csv(&csv_path, &file)?;
        files.extend([json_path, csv_path]);
        results.push(file);
    }
    RunManifest::new("forecast", r.config.seed, &r.config.canonical_json(), &files, &r.out)?.write(&r.out)?;
    Ok(results)
}

fn write_forecast_csv(path: &Path, file: &ForecastFile) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let levels: Vec<f64> =
        file.forecasts.first().map(|f| f.summary.intervals.iter().map(|i| i.level).collect()).unwrap_or_default();
    let mut header: Vec<String> = ["series_id", "target_index", "mean", "std", "median"].map(String::from).to_vec();
    for c in &levels {
        header.push(format!("lower_{c}"));
        header.push(format!("upper_{c}"));
    }
    w.write_record(&header)?;
    for f in &file.forecasts {
        let s = &f.summary;
        let mut row = vec![
            s.series_id.clone(),
            s.target_index.to_string(),
            s.mean.to_string(),
            s.std.to_string(),
            s.median.to_string(),
        ];
        for iv in &s.intervals {
            row.push(iv.lower.to_string());
            row.push(iv.upper.to_string());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Renders every evaluation or forecast file given, or found under the
/// output directory, into SVG charts next to it (or into `out`).
pub fn plot_files(inputs: &[PathBuf], out: Option<&Path>) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for input in inputs {
        let file = OutputFile::read(input)?;
        let dir = out.map(Path::to_path_buf).unwrap_or_else(|| input.parent().unwrap_or(Path::new(".")).to_path_buf());
        create_dir(&dir)?;
        let paths = match &file {
            OutputFile::Evaluation(e) => plot::evaluation_charts(e, &dir)?,
            OutputFile::Forecast(f) => plot::fan_charts(&f.forecasts, &dir, "forecast")?,
        };
        if paths.is_empty() {
            warn!("{}: nothing to plot", input.display());
        }
        written.extend(paths);
    }
    Ok(written)
}

/// `eval.json` and `forecast.json` files under `out/h*/`.
pub fn discover_outputs(out: &Path) -> Result<Vec<PathBuf>> {
    let mut found = Vec::new();
    if !out.is_dir() {
        bail!(UserError(format!("{} is not a directory", out.display())));
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(out)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.file_name().is_some_and(|n| n.to_string_lossy().starts_with('h')))
        .collect();
    dirs.sort();
    for dir in dirs {
        for name in [EVAL_FILE, FORECAST_FILE] {
            let p = dir.join(name);
            if p.exists() {
                found.push(p);
            }
        }
    }
    Ok(found)
}
