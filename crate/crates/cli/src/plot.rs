//! Static SVG charts: forecast fans, the reliability diagram and attention
//! bars.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Result;

use crate::commands::{EvalFile, ForecastRecord};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 50.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"];

/// Linear map from data ranges onto the plot area.
struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn new(x: (f64, f64), y: (f64, f64)) -> Self {
        let pad = |(lo, hi): (f64, f64)| if hi > lo { (lo, hi) } else { (lo - 0.5, hi + 0.5) };
        Self { x: pad(x), y: pad(y) }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - MARGIN - (y - self.y.0) / (self.y.1 - self.y.0) * (HEIGHT - 2.0 * MARGIN)
    }
}

struct Svg(String);

impl Svg {
    fn new(title: &str) -> Self {
        let mut s = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
        );
        s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">{}</text>",
            WIDTH / 2.0,
            escape(title)
        );
        Self(s)
    }

    fn axes(&mut self, f: &Frame, xlabel: &str, ylabel: &str) {
        let (x0, x1, y0, y1) = (f.px(f.x.0), f.px(f.x.1), f.py(f.y.0), f.py(f.y.1));
        let _ = writeln!(
            self.0,
            "<path d=\"M{x0:.1},{y1:.1} L{x0:.1},{y0:.1} L{x1:.1},{y0:.1}\" stroke=\"black\" fill=\"none\"/>"
        );
        for (v, anchor, x, y) in [
            (f.x.0, "middle", x0, y0 + 16.0),
            (f.x.1, "middle", x1, y0 + 16.0),
            (f.y.0, "end", x0 - 4.0, y0 + 4.0),
            (f.y.1, "end", x0 - 4.0, y1 + 4.0),
        ] {
            let _ = writeln!(
                self.0,
                "<text x=\"{x:.1}\" y=\"{y:.1}\" text-anchor=\"{anchor}\" font-size=\"11\">{}</text>",
                tick(v)
            );
        }
        let _ = writeln!(
            self.0,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-size=\"12\">{}</text>",
            (x0 + x1) / 2.0,
            HEIGHT - 12.0,
            escape(xlabel)
        );
        let _ = writeln!(
            self.0,
            "<text x=\"14\" y=\"{:.1}\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 14 {:.1})\">{}</text>",
            (y0 + y1) / 2.0,
            (y0 + y1) / 2.0,
            escape(ylabel)
        );
    }

    fn polyline(&mut self, pts: &[(f64, f64)], stroke: &str, dash: bool) {
        let d: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
        let dash = if dash { " stroke-dasharray=\"4 3\"" } else { "" };
        let _ = writeln!(
            self.0,
            "<polyline points=\"{}\" stroke=\"{stroke}\" fill=\"none\" stroke-width=\"1.5\"{dash}/>",
            d.join(" ")
        );
    }

    fn polygon(&mut self, pts: &[(f64, f64)], fill: &str, opacity: f64) {
        let d: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
        let _ = writeln!(
            self.0,
            "<polygon points=\"{}\" fill=\"{fill}\" fill-opacity=\"{opacity:.2}\" stroke=\"none\"/>",
            d.join(" ")
        );
    }

    fn circle(&mut self, x: f64, y: f64, fill: &str) {
        let _ = writeln!(self.0, "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"2.5\" fill=\"{fill}\"/>");
    }

    fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, fill: &str) {
        let _ =
            writeln!(self.0, "<rect x=\"{x:.2}\" y=\"{y:.2}\" width=\"{w:.2}\" height=\"{h:.2}\" fill=\"{fill}\"/>");
    }

    fn text(&mut self, x: f64, y: f64, size: u32, s: &str) {
        let _ = writeln!(self.0, "<text x=\"{x:.1}\" y=\"{y:.1}\" font-size=\"{size}\">{}</text>", escape(s));
    }

    fn save(mut self, path: &Path) -> Result<PathBuf> {
        self.0 += "</svg>\n";
        std::fs::write(path, self.0)?;
        Ok(path.to_path_buf())
    }
}

fn tick(v: f64) -> String {
    if v.abs() >= 1000.0 || (v != 0.0 && v.abs() < 0.01) {
        format!("{v:.2e}")
    } else {
        format!("{v:.2}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// File-name-safe form of a series id.
fn slug(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

/// One chart per series: median line, a band per central interval (widest
/// palest) and the observed values when present.
pub fn fan_charts(records: &[ForecastRecord], dir: &Path, prefix: &str) -> Result<Vec<PathBuf>> {
    let mut ids: Vec<&str> = Vec::new();
    for r in records {
        if !ids.contains(&r.summary.series_id.as_str()) {
            ids.push(&r.summary.series_id);
        }
    }
    let mut written = Vec::new();
    for id in ids {
        let mut rows: Vec<&ForecastRecord> = records.iter().filter(|r| r.summary.series_id == id).collect();
        rows.sort_by_key(|r| r.summary.target_index);
        let xs: Vec<f64> = rows.iter().map(|r| r.summary.target_index as f64).collect();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for r in &rows {
            for v in
                r.summary.intervals.iter().flat_map(|i| [i.lower, i.upper]).chain([r.summary.median]).chain(r.truth)
            {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        let (x0, x1) = if xs.len() == 1 { (xs[0] - 0.5, xs[0] + 0.5) } else { (xs[0], xs[xs.len() - 1]) };
        let f = Frame::new((x0, x1), (lo, hi));
        let mut svg = Svg::new(&format!("{id}: forecast"));
        svg.axes(&f, "time index", "value");

        let mut levels: Vec<f64> = rows[0].summary.intervals.iter().map(|i| i.level).collect();
        levels.sort_by(|a, b| b.total_cmp(a));
        for (k, level) in levels.iter().enumerate() {
            let band =
                |r: &ForecastRecord| r.summary.intervals.iter().find(|i| i.level == *level).map(|i| (i.lower, i.upper));
            let mut upper = Vec::new();
            let mut lower = Vec::new();
            for (r, &x) in rows.iter().zip(&xs) {
                if let Some((l, u)) = band(r) {
                    let spread = if xs.len() == 1 { [x - 0.25, x + 0.25].to_vec() } else { vec![x] };
                    for sx in spread {
                        upper.push((f.px(sx), f.py(u)));
                        lower.push((f.px(sx), f.py(l)));
                    }
                }
            }
            lower.reverse();
            upper.extend(lower);
            svg.polygon(&upper, PALETTE[0], 0.12 + 0.5 * k as f64 / levels.len().max(1) as f64);
        }
        let median: Vec<(f64, f64)> = rows.iter().zip(&xs).map(|(r, &x)| (f.px(x), f.py(r.summary.median))).collect();
        svg.polyline(&median, PALETTE[0], false);
        for (r, &x) in rows.iter().zip(&xs) {
            if let Some(y) = r.truth {
                svg.circle(f.px(x), f.py(y), "black");
            }
        }
        written.push(svg.save(&dir.join(format!("{prefix}_fan_{}.svg", slug(id))))?);
    }
    Ok(written)
}

/// Empirical coverage against nominal level, with `(0, 0)` and `(1, 1)`
/// appended.
pub fn reliability_points(levels: &[f64], coverage: &[f64]) -> Vec<(f64, f64)> {
    let mut pts = vec![(0.0, 0.0)];
    pts.extend(levels.iter().copied().zip(coverage.iter().copied()));
    pts.push((1.0, 1.0));
    pts
}

pub fn reliability_diagram(levels: &[f64], coverage: &[f64], score: f64, path: &Path) -> Result<PathBuf> {
    let f = Frame::new((0.0, 1.0), (0.0, 1.0));
    let mut svg = Svg::new(&format!("Reliability (CS {score:.4})"));
    svg.axes(&f, "nominal level", "empirical coverage");
    svg.polyline(&[(f.px(0.0), f.py(0.0)), (f.px(1.0), f.py(1.0))], "gray", true);
    let pts: Vec<(f64, f64)> = reliability_points(levels, coverage).iter().map(|&(x, y)| (f.px(x), f.py(y))).collect();
    svg.polyline(&pts, PALETTE[3], false);
    for &(x, y) in &pts {
        svg.circle(x, y, PALETTE[3]);
    }
    svg.save(path)
}

/// Grouped bars of the mean attention per view for each series.
pub fn attention_bars(eval: &EvalFile, path: &Path) -> Result<PathBuf> {
    let k = eval.view_ids.len().max(1);
    let n = eval.attention.len().max(1);
    let f = Frame::new((0.0, n as f64), (0.0, 1.0));
    let mut svg = Svg::new("Mean view attention per series");
    svg.axes(&f, "series", "attention");
    let slot = (f.px(1.0) - f.px(0.0)) * 0.8 / k as f64;
    for (s, a) in eval.attention.iter().enumerate() {
        for (j, w) in a.weights.iter().enumerate() {
            let x = f.px(s as f64 + 0.1) + j as f64 * slot;
            svg.rect(x, f.py(*w), slot * 0.9, f.py(0.0) - f.py(*w), PALETTE[j % PALETTE.len()]);
        }
        svg.text(f.px(s as f64 + 0.1), HEIGHT - MARGIN + 28.0, 10, &a.series_id);
    }
    for (j, id) in eval.view_ids.iter().enumerate() {
        let y = MARGIN + 14.0 * j as f64;
        svg.rect(WIDTH - MARGIN - 70.0, y - 8.0, 10.0, 10.0, PALETTE[j % PALETTE.len()]);
        svg.text(WIDTH - MARGIN - 55.0, y + 1.0, 11, &format!("view {id}"));
    }
    svg.save(path)
}

/// Reliability diagram, attention bars and per-series fans for one
/// evaluation.
pub fn evaluation_charts(eval: &EvalFile, dir: &Path) -> Result<Vec<PathBuf>> {
    let m = &eval.metrics;
    let mut written = vec![
        reliability_diagram(&m.levels, &m.calibration_curve, m.calibration_score, &dir.join("reliability.svg"))?,
        attention_bars(eval, &dir.join("attention.svg"))?,
    ];
    written.extend(fan_charts(&eval.forecasts, dir, "eval")?);
    Ok(written)
}
