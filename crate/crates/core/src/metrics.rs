//! Joint, aligned and final-displacement errors, per-horizon reports and
//! SVG trajectory plots.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{prepare_samples, ForecastModel, PreparedSample};
use crate::segment::SegmentRecord;
use crate::types::{distance, Point3, Scene};

/// One pedestrian's poses over the prediction window, `frames x joints`.
pub type Trajectory = [Vec<Point3>];

pub const DEFAULT_HORIZONS_S: [f64; 3] = [0.2, 0.6, 1.0];
const MM: f64 = 1000.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Metric {
    Jpe,
    Ape,
    Fde,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Jpe, Metric::Ape, Metric::Fde];

    pub fn label(self) -> &'static str {
        match self {
            Metric::Jpe => "MPJPE",
            Metric::Ape => "APE",
            Metric::Fde => "FDE",
        }
    }
}

/// How JPE and APE treat the frames before a horizon.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HorizonMode {
    /// Average over every predicted frame up to the horizon.
    #[default]
    Cumulative,
    /// Only the frame at the horizon.
    AtFrame,
}

fn check_pair(pred: &Trajectory, truth: &Trajectory, horizon: usize) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::shape("metric", format!("{} vs {} frames", pred.len(), truth.len())));
    }
    if horizon == 0 || horizon > pred.len() {
        return Err(Error::Invalid(format!("horizon {horizon} outside 1..={}", pred.len())));
    }
    for (a, b) in pred.iter().zip(truth).take(horizon) {
        if a.len() != b.len() || a.is_empty() {
            return Err(Error::shape("metric", format!("{} vs {} joints", a.len(), b.len())));
        }
    }
    Ok(())
}

fn frames(horizon: usize, mode: HorizonMode) -> std::ops::Range<usize> {
    match mode {
        HorizonMode::Cumulative => 0..horizon,
        HorizonMode::AtFrame => horizon - 1..horizon,
    }
}

fn mean_joint_error(pred: &Trajectory, truth: &Trajectory, range: std::ops::Range<usize>, centered: bool) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for t in range {
        let (p, q) = (&pred[t], &truth[t]);
        let (rp, rq) = if centered { (p[0], q[0]) } else { ([0.0; 3], [0.0; 3]) };
        for (a, b) in p.iter().zip(q) {
            let a = [a[0] - rp[0], a[1] - rp[1], a[2] - rp[2]];
            let b = [b[0] - rq[0], b[1] - rq[1], b[2] - rq[2]];
            total += distance(a, b);
        }
        count += p.len();
    }
    total / count as f64 * MM
}

/// Mean per-joint position error over the first `horizon` frames, in mm.
pub fn jpe(pred: &Trajectory, truth: &Trajectory, horizon: usize) -> Result<f64> {
    jpe_with(pred, truth, horizon, HorizonMode::Cumulative)
}

pub fn jpe_with(pred: &Trajectory, truth: &Trajectory, horizon: usize, mode: HorizonMode) -> Result<f64> {
    check_pair(pred, truth, horizon)?;
    Ok(mean_joint_error(pred, truth, frames(horizon, mode), false))
}

/// JPE after subtracting each frame's root joint, in mm.
pub fn ape(pred: &Trajectory, truth: &Trajectory, horizon: usize) -> Result<f64> {
    ape_with(pred, truth, horizon, HorizonMode::Cumulative)
}

pub fn ape_with(pred: &Trajectory, truth: &Trajectory, horizon: usize, mode: HorizonMode) -> Result<f64> {
    check_pair(pred, truth, horizon)?;
    Ok(mean_joint_error(pred, truth, frames(horizon, mode), true))
}

/// Root error at the last frame, in mm.
pub fn fde(pred: &Trajectory, truth: &Trajectory) -> Result<f64> {
    fde_at(pred, truth, pred.len())
}

/// Root error at frame `horizon - 1`, in mm.
pub fn fde_at(pred: &Trajectory, truth: &Trajectory, horizon: usize) -> Result<f64> {
    check_pair(pred, truth, horizon)?;
    Ok(distance(pred[horizon - 1][0], truth[horizon - 1][0]) * MM)
}

pub fn metric(m: Metric, pred: &Trajectory, truth: &Trajectory, horizon: usize, mode: HorizonMode) -> Result<f64> {
    match m {
        Metric::Jpe => jpe_with(pred, truth, horizon, mode),
        Metric::Ape => ape_with(pred, truth, horizon, mode),
        Metric::Fde => fde_at(pred, truth, horizon),
    }
}

/// Frames covered by a horizon in seconds.
pub fn horizon_frames(horizon_s: f64, frame_rate_hz: f64) -> usize {
    (horizon_s * frame_rate_hz).round() as usize
}

/// Predicted and true futures of one segment, `P x N x J` each.
#[derive(Clone, Debug, PartialEq)]
pub struct Forecast {
    pub key: String,
    pub category: (usize, usize),
    pub pred: Vec<Vec<Vec<Point3>>>,
    pub truth: Vec<Vec<Vec<Point3>>>,
}

/// Runs `model` on every sample, in order.
pub fn forecasts(model: &ForecastModel, samples: &[PreparedSample]) -> Result<Vec<Forecast>> {
    samples
        .par_iter()
        .map(|s| {
            let truth = s
                .future
                .clone()
                .ok_or_else(|| Error::Invalid(format!("{}: no ground-truth future", s.key)))?;
            let pred = model.predict(s)?;
            if let Some(bad) = pred.iter().flatten().flatten().find(|p| !p.iter().all(|v| v.is_finite())) {
                return Err(Error::NonFinite(format!("prediction for {} ({bad:?})", s.key)));
            }
            Ok(Forecast {
                key: s.key.clone(),
                category: s.category,
                pred,
                truth,
            })
        })
        .collect()
}

/// Per-category means at each horizon: `result[cat][h][metric]`, every
/// pedestrian of every segment weighted equally.
pub fn category_means(
    forecasts: &[Forecast],
    horizons: &[usize],
    mode: HorizonMode,
) -> Result<BTreeMap<(usize, usize), Vec<[f64; 3]>>> {
    let mut sums: BTreeMap<(usize, usize), (Vec<[f64; 3]>, usize)> = BTreeMap::new();
    for f in forecasts {
        if f.pred.len() != f.truth.len() {
            return Err(Error::shape("metric", format!("{}: pedestrian count mismatch", f.key)));
        }
        let entry = sums.entry(f.category).or_insert_with(|| (vec![[0.0; 3]; horizons.len()], 0));
        for (p, t) in f.pred.iter().zip(&f.truth) {
            for (acc, &h) in entry.0.iter_mut().zip(horizons) {
                for (k, m) in Metric::ALL.iter().enumerate() {
                    acc[k] += metric(*m, p, t, h, mode)?;
                }
            }
            entry.1 += 1;
        }
    }
    Ok(sums
        .into_iter()
        .map(|(cat, (acc, n))| (cat, acc.into_iter().map(|v| v.map(|x| x / n as f64)).collect()))
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub n_ped: usize,
    pub n_veh: usize,
    pub metric: Metric,
    pub horizon_s: f64,
    pub baseline_mm: Option<f64>,
    pub ours_mm: Option<f64>,
}

/// Per-category, per-horizon errors of one model, optionally next to a
/// pedestrian-only baseline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub horizons_s: Vec<f64>,
    pub mode: HorizonMode,
    pub rows: Vec<ReportRow>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportOptions {
    pub horizons_s: Vec<f64>,
    pub frame_rate_hz: f64,
    pub mode: HorizonMode,
    /// Categories that always get rows, filled or not.
    pub categories: Vec<(usize, usize)>,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            horizons_s: DEFAULT_HORIZONS_S.to_vec(),
            frame_rate_hz: 25.0,
            mode: HorizonMode::Cumulative,
            categories: (1..=3).flat_map(|p| (1..=4).map(move |v| (p, v))).collect(),
        }
    }
}

fn fmt_mm(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.1}")).unwrap_or_default()
}

impl Report {
    /// Horizons longer than the predicted window are dropped.
    pub fn build(ours: &[Forecast], baseline: Option<&[Forecast]>, opts: &ReportOptions) -> Result<Self> {
        let n_pred = ours
            .iter()
            .chain(baseline.unwrap_or(&[]))
            .flat_map(|f| f.pred.iter().map(|p| p.len()))
            .min()
            .ok_or_else(|| Error::EmptyDataset("no forecasts to report".into()))?;
        let kept: Vec<(f64, usize)> = opts
            .horizons_s
            .iter()
            .map(|&h| (h, horizon_frames(h, opts.frame_rate_hz)))
            .filter(|&(_, f)| f >= 1 && f <= n_pred)
            .collect();
        if kept.is_empty() {
            return Err(Error::Invalid(format!(
                "no horizon in {:?} s fits the {n_pred}-frame prediction window",
                opts.horizons_s
            )));
        }
        let frames: Vec<usize> = kept.iter().map(|k| k.1).collect();
        let ours_m = category_means(ours, &frames, opts.mode)?;
        let base_m = baseline.map(|b| category_means(b, &frames, opts.mode)).transpose()?;

        let mut cats: Vec<(usize, usize)> = opts.categories.clone();
        cats.extend(ours_m.keys().copied());
        if let Some(b) = &base_m {
            cats.extend(b.keys().copied());
        }
        cats.sort_unstable();
        cats.dedup();

        let mut rows = Vec::new();
        for &(n_ped, n_veh) in &cats {
            for (k, m) in Metric::ALL.iter().enumerate() {
                for (hi, &(h, _)) in kept.iter().enumerate() {
                    rows.push(ReportRow {
                        n_ped,
                        n_veh,
                        metric: *m,
                        horizon_s: h,
                        baseline_mm: base_m.as_ref().and_then(|b| b.get(&(n_ped, n_veh))).map(|v| v[hi][k]),
                        ours_mm: ours_m.get(&(n_ped, n_veh)).map(|v| v[hi][k]),
                    });
                }
            }
        }
        Ok(Self {
            horizons_s: kept.iter().map(|k| k.0).collect(),
            mode: opts.mode,
            rows,
        })
    }

    pub fn get(&self, cat: (usize, usize), m: Metric, horizon_s: f64) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| (r.n_ped, r.n_veh) == cat && r.metric == m && r.horizon_s == horizon_s)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("n_ped,n_veh,metric,horizon_s,baseline_mm,ours_mm\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.n_ped,
                r.n_veh,
                r.metric.label(),
                r.horizon_s,
                r.baseline_mm.map(|v| format!("{v:.6}")).unwrap_or_default(),
                r.ours_mm.map(|v| format!("{v:.6}")).unwrap_or_default()
            );
        }
        out
    }

    /// One line per category; each metric/horizon column shows
    /// `baseline/ours` (or just `ours`), `-` where a category is absent.
    pub fn to_table(&self) -> String {
        let has_base = self.rows.iter().any(|r| r.baseline_mm.is_some());
        let mut header = vec!["ped".to_string(), "veh".to_string()];
        for m in Metric::ALL {
            for h in &self.horizons_s {
                header.push(format!("{} {h}s", m.label()));
            }
        }
        let mut lines = vec![header];
        let mut cats: Vec<(usize, usize)> = self.rows.iter().map(|r| (r.n_ped, r.n_veh)).collect();
        cats.dedup();
        for cat in cats {
            let mut line = vec![cat.0.to_string(), cat.1.to_string()];
            for m in Metric::ALL {
                for &h in &self.horizons_s {
                    let r = self.get(cat, m, h);
                    let ours = r.and_then(|r| r.ours_mm);
                    let cell = match (has_base, ours) {
                        (_, None) => "-".to_string(),
                        (true, Some(o)) => format!("{}/{}", fmt_mm(r.and_then(|r| r.baseline_mm)), fmt_mm(Some(o))),
                        (false, Some(o)) => fmt_mm(Some(o)),
                    };
                    line.push(cell);
                }
            }
            lines.push(line);
        }
        let widths: Vec<usize> = (0..lines[0].len())
            .map(|c| lines.iter().map(|l| l[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for l in &lines {
            let cells: Vec<String> = l.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        }
        out
    }
}

/// Prepares every record for each model and reports their errors side by side.
pub fn evaluate_report(
    ours: &ForecastModel,
    baseline: Option<&ForecastModel>,
    scenes: &[Scene],
    records: &[SegmentRecord],
    opts: &ReportOptions,
) -> Result<Report> {
    if records.is_empty() {
        return Err(Error::EmptyDataset("no segments to evaluate".into()));
    }
    let ours_f = forecasts(ours, &prepare_samples(ours.config(), scenes, records)?)?;
    let base_f = baseline
        .map(|b| forecasts(b, &prepare_samples(b.config(), scenes, records)?))
        .transpose()?;
    Report::build(&ours_f, base_f.as_deref(), opts)
}

/// Final-horizon errors for one corner-grouping scheme.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub corner_groups: usize,
    pub jpe_mm: f64,
    pub ape_mm: f64,
    pub fde_mm: f64,
    pub val_loss: f64,
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("corner_groups,MPJPE_mm,APE_mm,FDE_mm,val_loss\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{:.6},{:.6},{:.6},{:.9}",
            r.corner_groups, r.jpe_mm, r.ape_mm, r.fde_mm, r.val_loss
        );
    }
    out
}

/// Mean final-frame errors over all pedestrians of `forecasts`.
pub fn overall_means(forecasts: &[Forecast], mode: HorizonMode) -> Result<[f64; 3]> {
    let mut acc = [0.0; 3];
    let mut n = 0usize;
    for f in forecasts {
        for (p, t) in f.pred.iter().zip(&f.truth) {
            for (k, m) in Metric::ALL.iter().enumerate() {
                acc[k] += metric(*m, p, t, p.len(), mode)?;
            }
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyDataset("no forecasts".into()));
    }
    Ok(acc.map(|v| v / n as f64))
}

/// Top-down view of one segment: observed and future root paths, model
/// predictions and vehicle footprints.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScenePlot {
    pub title: String,
    /// Observed root paths, one per pedestrian.
    pub history: Vec<Vec<[f64; 2]>>,
    pub truth: Vec<Vec<[f64; 2]>>,
    pub ours: Option<Vec<Vec<[f64; 2]>>>,
    pub baseline: Option<Vec<Vec<[f64; 2]>>>,
    /// Vehicle center paths over the observed window.
    pub vehicle_paths: Vec<Vec<[f64; 2]>>,
    /// Bottom-face outline of each vehicle at the last observed frame.
    pub vehicle_boxes: Vec<[[f64; 2]; 4]>,
}

pub fn root_path(frames: &Trajectory) -> Vec<[f64; 2]> {
    frames.iter().map(|f| [f[0][0], f[0][1]]).collect()
}

impl ScenePlot {
    /// Builds a plot from a prepared segment: `history` holds the observed
    /// scene, the sample supplies the true future.
    pub fn from_sample(
        sample: &PreparedSample,
        scene: &Scene,
        observed: std::ops::Range<usize>,
        ours: Option<&[Vec<Vec<Point3>>]>,
        baseline: Option<&[Vec<Vec<Point3>>]>,
    ) -> Result<Self> {
        let mut history = Vec::new();
        for id in &sample.pedestrian_ids {
            let p = scene
                .pedestrian(*id)
                .ok_or_else(|| Error::Invalid(format!("scene {} has no pedestrian {id}", scene.scene_id)))?;
            history.push(observed.clone().map(|t| [p.root(t)[0], p.root(t)[1]]).collect());
        }
        let mut vehicle_paths = Vec::new();
        let mut vehicle_boxes = Vec::new();
        for id in &sample.vehicle_ids {
            let v = scene
                .vehicle(*id)
                .ok_or_else(|| Error::Invalid(format!("scene {} has no vehicle {id}", scene.scene_id)))?;
            vehicle_paths.push(observed.clone().map(|t| [v.center(t)[0], v.center(t)[1]]).collect());
            let c = v.corners(observed.end - 1);
            vehicle_boxes.push([0, 1, 2, 3].map(|i| [c[i][0], c[i][1]]));
        }
        let paths = |set: &[Vec<Vec<Point3>>]| set.iter().map(|p| root_path(p)).collect::<Vec<_>>();
        Ok(Self {
            title: sample.key.clone(),
            history,
            truth: sample.future.as_deref().map(paths).unwrap_or_default(),
            ours: ours.map(paths),
            baseline: baseline.map(paths),
            vehicle_paths,
            vehicle_boxes,
        })
    }

    pub fn to_svg(&self) -> String {
        let all: Vec<[f64; 2]> = self
            .history
            .iter()
            .chain(&self.truth)
            .chain(self.ours.iter().flatten())
            .chain(self.baseline.iter().flatten())
            .chain(&self.vehicle_paths)
            .flatten()
            .copied()
            .chain(self.vehicle_boxes.iter().flatten().copied())
            .collect();
        let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in &all {
            x0 = x0.min(p[0]);
            x1 = x1.max(p[0]);
            y0 = y0.min(p[1]);
            y1 = y1.max(p[1]);
        }
        if all.is_empty() {
            (x0, y0, x1, y1) = (0.0, 0.0, 1.0, 1.0);
        }
        let (w, h, pad) = (640.0, 480.0, 30.0);
        let span = ((x1 - x0) / (w - 2.0 * pad)).max((y1 - y0) / (h - 2.0 * pad)).max(1e-6);
        // World y points up; SVG y points down.
        let map = |p: [f64; 2]| ((p[0] - x0) / span + pad, h - pad - (p[1] - y0) / span);
        let polyline = |pts: &[[f64; 2]], color: &str, dash: &str| {
            let coords: Vec<String> = pts
                .iter()
                .map(|p| {
                    let (x, y) = map(*p);
                    format!("{x:.2},{y:.2}")
                })
                .collect();
            format!(
                "  <polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"{dash}/>\n",
                coords.join(" ")
            )
        };
        let mut out = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n  <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n  <title>{}</title>\n",
            xml_escape(&self.title)
        );
        for b in &self.vehicle_boxes {
            let mut pts = b.to_vec();
            pts.push(b[0]);
            out += &polyline(&pts, "#555555", "");
        }
        for p in &self.vehicle_paths {
            out += &polyline(p, "#999999", " stroke-dasharray=\"2 3\"");
        }
        for p in &self.history {
            out += &polyline(p, "#000000", "");
        }
        for p in &self.truth {
            out += &polyline(p, "#2a9d2a", "");
        }
        for p in self.baseline.iter().flatten() {
            out += &polyline(p, "#1f5fbf", " stroke-dasharray=\"6 4\"");
        }
        for p in self.ours.iter().flatten() {
            out += &polyline(p, "#d62728", " stroke-dasharray=\"6 4\"");
        }
        let legend = [
            ("observed", "#000000"),
            ("truth", "#2a9d2a"),
            ("baseline", "#1f5fbf"),
            ("ours", "#d62728"),
            ("vehicle", "#555555"),
        ];
        for (i, (label, color)) in legend.iter().enumerate() {
            let y = 16 + 14 * i;
            let _ = writeln!(
                out,
                "  <text x=\"8\" y=\"{y}\" font-family=\"sans-serif\" font-size=\"11\" fill=\"{color}\">{label}</text>"
            );
        }
        out += "</svg>\n";
        out
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
