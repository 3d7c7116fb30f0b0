//! Dataset directories on disk.
//!
//! ```text
//! panel.csv        series_id,time,value   (one row per observation)
//! view_<j>.json    {"spec": .., "tracks": {series_id: track}, "node_features": [[..]]}
//! graph_<j>.csv    src,dst,weight         (graph views only; both directions listed)
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autodiff::Mat;
use crate::data::{mat_rows, Dataset, GraphStructure, Modality, SeriesPanel, Track, ViewData, ViewSpec};
use crate::error::{CamulError, Result};

pub const PANEL_FILE: &str = "panel.csv";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ViewFile {
    spec: ViewSpec,
    tracks: BTreeMap<String, Track>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    node_features: Option<NodeFeatures>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(transparent)]
struct NodeFeatures(#[serde(with = "mat_rows")] Mat);

#[derive(Debug, Serialize, Deserialize)]
struct PanelRow {
    series_id: String,
    time: i64,
    value: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct EdgeRow {
    src: usize,
    dst: usize,
    weight: f64,
}

pub fn view_file(dir: &Path, view_id: usize) -> PathBuf {
    dir.join(format!("view_{view_id}.json"))
}

pub fn graph_file(dir: &Path, view_id: usize) -> PathBuf {
    dir.join(format!("graph_{view_id}.csv"))
}

/// Writes the panel and every non-default view; returns the files written.
pub fn write_dataset(dir: &Path, dataset: &Dataset) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let panel_path = dir.join(PANEL_FILE);
    let mut w = csv::Writer::from_path(&panel_path)?;
    let panel = &dataset.panel;
    for (i, id) in panel.series_ids.iter().enumerate() {
        for (t, &time) in panel.time_index.iter().enumerate() {
            w.serialize(PanelRow { series_id: id.clone(), time, value: panel.values[[i, t]] })?;
        }
    }
    w.flush()?;
    written.push(panel_path);

    for view in dataset.views.iter().filter(|v| !v.spec.is_default) {
        let file = ViewFile {
            spec: view.spec.clone(),
            tracks: view.tracks.clone(),
            node_features: view.graph.as_ref().map(|g| NodeFeatures(g.node_features.clone())),
        };
        let path = view_file(dir, view.view_id());
        fs::write(&path, serde_json::to_string_pretty(&file)? + "\n")?;
        written.push(path);
        if let Some(graph) = &view.graph {
            let path = graph_file(dir, view.view_id());
            let mut w = csv::Writer::from_path(&path)?;
            for ((src, dst), &weight) in graph.adjacency.indexed_iter() {
                if weight != 0.0 {
                    w.serialize(EdgeRow { src, dst, weight })?;
                }
            }
            w.flush()?;
            written.push(path);
        }
    }
    Ok(written)
}

pub fn read_panel(path: &Path) -> Result<SeriesPanel> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut series: Vec<(String, Vec<(i64, f64)>)> = Vec::new();
    for row in reader.deserialize() {
        let row: PanelRow = row?;
        match series.iter_mut().find(|(id, _)| *id == row.series_id) {
            Some((_, obs)) => obs.push((row.time, row.value)),
            None => series.push((row.series_id, vec![(row.time, row.value)])),
        }
    }
    if series.is_empty() {
        return Err(CamulError::Validation(format!("{} has no rows", path.display())));
    }
    for (_, obs) in series.iter_mut() {
        obs.sort_by_key(|(t, _)| *t);
    }
    let time_index: Vec<i64> = series[0].1.iter().map(|(t, _)| *t).collect();
    for (id, obs) in &series {
        let times: Vec<i64> = obs.iter().map(|(t, _)| *t).collect();
        if times != time_index {
            return Err(CamulError::Validation(format!(
                "series `{id}` does not share the time index of `{}`",
                series[0].0
            )));
        }
    }
    let values = Mat::from_shape_fn((series.len(), time_index.len()), |(i, t)| series[i].1[t].1);
    SeriesPanel::new(series.into_iter().map(|(id, _)| id).collect(), values, time_index)
}

fn read_graph(path: &Path, nodes: usize) -> Result<Mat> {
    let mut adjacency = Mat::zeros((nodes, nodes));
    let mut reader = csv::Reader::from_path(path)?;
    for row in reader.deserialize() {
        let e: EdgeRow = row?;
        if e.src >= nodes || e.dst >= nodes {
            return Err(CamulError::Validation(format!(
                "{}: edge {} -> {} outside {nodes} nodes",
                path.display(),
                e.src,
                e.dst
            )));
        }
        adjacency[[e.src, e.dst]] = e.weight;
    }
    Ok(adjacency)
}

/// View ids present as `view_<j>.json` files, ascending.
fn view_ids(dir: &Path) -> Result<Vec<usize>> {
    let mut ids = Vec::new();
    for entry in fs::read_dir(dir)? {
        let name = entry?.file_name();
        let name = name.to_string_lossy();
        if let Some(id) = name.strip_prefix("view_").and_then(|r| r.strip_suffix(".json")) {
            if let Ok(id) = id.parse::<usize>() {
                ids.push(id);
            }
        }
    }
    ids.sort_unstable();
    Ok(ids)
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let panel = read_panel(&dir.join(PANEL_FILE))?;
    let mut views = Vec::new();
    for id in view_ids(dir)? {
        let path = view_file(dir, id);
        let file: ViewFile = serde_json::from_str(&fs::read_to_string(&path)?)?;
        if file.spec.view_id != id {
            return Err(CamulError::Validation(format!("{} declares view id {}", path.display(), file.spec.view_id)));
        }
        let graph = match file.spec.modality {
            Modality::Graph => {
                let features = file
                    .node_features
                    .ok_or_else(|| CamulError::Validation(format!("view {id}: graph_structure absent")))?
                    .0;
                let gpath = graph_file(dir, id);
                if !gpath.exists() {
                    return Err(CamulError::Validation(format!("view {id}: graph_structure absent")));
                }
                Some(GraphStructure { adjacency: read_graph(&gpath, features.nrows())?, node_features: features })
            }
            _ => None,
        };
        views.push(ViewData { spec: file.spec, tracks: file.tracks, graph });
    }
    Dataset::new(panel, views)
}
