//! Scene segmentation: pedestrian grouping, sliding windows, the min-max
//! pairwise distance filter, nearby-vehicle selection and per-category
//! bookkeeping.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::BufRead;
use std::ops::Range;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kdtree::KdIndex;
use crate::types::{centroid, distance, Point3, PoseSequence, Scene};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentFilterConfig {
    pub window_frames: usize,
    pub stride_frames: usize,
    /// Largest admissible min-over-time of the max pairwise root distance.
    pub max_pairwise_distance_m: f64,
    /// A vehicle is kept when its time-averaged distance to the nearest
    /// pedestrian of the group is at most this.
    pub vehicle_distance_threshold_m: f64,
    pub pedestrian_counts: Vec<usize>,
    pub vehicle_counts: Vec<usize>,
    pub train_fraction: f64,
}

impl Default for SegmentFilterConfig {
    fn default() -> Self {
        Self {
            window_frames: 75,
            stride_frames: 25,
            max_pairwise_distance_m: 18.0,
            vehicle_distance_threshold_m: 15.0,
            pedestrian_counts: vec![1, 2, 3],
            vehicle_counts: vec![1, 2, 3, 4],
            train_fraction: 0.8,
        }
    }
}

impl SegmentFilterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_frames < 2 {
            return Err(Error::Invalid("window must span at least 2 frames".into()));
        }
        if self.stride_frames == 0 {
            return Err(Error::Invalid("stride must be positive".into()));
        }
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.max_pairwise_distance_m) || !positive(self.vehicle_distance_threshold_m) {
            return Err(Error::Invalid("distance thresholds must be positive".into()));
        }
        if self.pedestrian_counts.is_empty() || self.pedestrian_counts.contains(&0) {
            return Err(Error::Invalid("pedestrian counts must be non-empty and positive".into()));
        }
        if !(0.0..=1.0).contains(&self.train_fraction) {
            return Err(Error::Invalid("train fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }

    fn max_vehicles(&self) -> usize {
        self.vehicle_counts.iter().copied().max().unwrap_or(0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub scene_id: String,
    pub frame_start: usize,
    /// Exclusive.
    pub frame_end: usize,
    pub pedestrian_ids: Vec<u64>,
    /// Selected vehicles, nearest (by time-averaged distance) first.
    pub vehicle_ids: Vec<u64>,
    #[serde(rename = "R")]
    pub r: f64,
    /// `(pedestrian count, vehicle count)`.
    pub category: (usize, usize),
    pub split: Split,
}

impl SegmentRecord {
    pub fn frames(&self) -> Range<usize> {
        self.frame_start..self.frame_end
    }
}

fn check_window(scene: &Scene, window: &Range<usize>) -> Result<()> {
    if window.start >= window.end {
        return Err(Error::Invalid(format!("empty window {window:?}")));
    }
    if window.end > scene.frame_count() {
        return Err(Error::Length(format!(
            "window {window:?} exceeds scene {} with {} frames",
            scene.scene_id,
            scene.frame_count()
        )));
    }
    Ok(())
}

fn mean_root(p: &PoseSequence, window: &Range<usize>) -> Point3 {
    let roots: Vec<Point3> = window.clone().map(|t| p.root(t)).collect();
    centroid(&roots)
}

/// Groups of `group_size` mutually close pedestrians, one per pedestrian
/// (itself plus its nearest neighbours by window-mean root position),
/// deduplicated. Each group's ids are ascending; groups are sorted.
pub fn group_nearby_pedestrians(
    scene: &Scene,
    window: Range<usize>,
    group_size: usize,
) -> Result<Vec<Vec<u64>>> {
    check_window(scene, &window)?;
    if group_size == 0 {
        return Err(Error::Invalid("group size must be at least 1".into()));
    }
    if scene.pedestrians.len() < group_size {
        return Ok(Vec::new());
    }
    let centers: Vec<(u64, Point3)> = scene
        .pedestrians
        .iter()
        .map(|p| (p.agent_id, mean_root(p, &window)))
        .collect();
    let index = KdIndex::build(&centers);
    let groups: BTreeSet<Vec<u64>> = centers
        .iter()
        .map(|&(id, c)| {
            let mut group: Vec<u64> = index
                .nearest_excluding(c, group_size - 1, Some(id))
                .into_iter()
                .map(|n| n.id)
                .collect();
            group.push(id);
            group.sort_unstable();
            group
        })
        .collect();
    Ok(groups.into_iter().collect())
}

/// Minimum over the window of the maximum pairwise root distance inside the
/// group. A single pedestrian scores 0.
pub fn min_max_pairwise_distance(group: &[&PoseSequence], window: Range<usize>) -> f64 {
    if group.len() < 2 {
        return 0.0;
    }
    window
        .map(|t| {
            let mut worst = 0.0f64;
            for (i, a) in group.iter().enumerate() {
                for b in &group[i + 1..] {
                    worst = worst.max(distance(a.root(t), b.root(t)));
                }
            }
            worst
        })
        .fold(f64::INFINITY, f64::min)
}

/// Time-averaged distance from each vehicle's box centre to the nearest
/// group member's root.
pub fn vehicle_mean_distances(scene: &Scene, group: &[&PoseSequence], window: Range<usize>) -> Vec<(u64, f64)> {
    let frames = window.len() as f64;
    scene
        .vehicles
        .iter()
        .map(|v| {
            let mut total = 0.0;
            for t in window.clone() {
                let c = v.center(t);
                total += group
                    .iter()
                    .map(|p| distance(p.root(t), c))
                    .fold(f64::INFINITY, f64::min);
            }
            (v.vehicle_id, total / frames)
        })
        .collect()
}

/// Vehicles whose time-averaged nearest-pedestrian distance is `<= th`,
/// ordered nearest first (ties by id).
pub fn select_vehicles(
    scene: &Scene,
    group: &[&PoseSequence],
    window: Range<usize>,
    th: f64,
) -> Result<Vec<(u64, f64)>> {
    check_window(scene, &window)?;
    let mut selected: Vec<(u64, f64)> = vehicle_mean_distances(scene, group, window)
        .into_iter()
        .filter(|&(_, d)| d <= th)
        .collect();
    selected.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    Ok(selected)
}

/// Start frames of every full window.
pub fn window_starts(frames: usize, window: usize, stride: usize) -> Vec<usize> {
    if frames < window || stride == 0 {
        return Vec::new();
    }
    (0..=frames - window).step_by(stride).collect()
}

/// Every retained segment of one scene, ordered by window start, then group
/// size, then ids. Splits are provisional until [`assign_splits`] runs.
pub fn segment_scene(scene: &Scene, cfg: &SegmentFilterConfig) -> Result<Vec<SegmentRecord>> {
    cfg.validate()?;
    let mut out = Vec::new();
    let mut counts = cfg.pedestrian_counts.clone();
    counts.sort_unstable();
    counts.dedup();
    for start in window_starts(scene.frame_count(), cfg.window_frames, cfg.stride_frames) {
        let window = start..start + cfg.window_frames;
        for &n_ped in &counts {
            for ids in group_nearby_pedestrians(scene, window.clone(), n_ped)? {
                let group: Vec<&PoseSequence> = ids
                    .iter()
                    .map(|&id| scene.pedestrian(id).expect("grouped ids come from the scene"))
                    .collect();
                let r = min_max_pairwise_distance(&group, window.clone());
                if r > cfg.max_pairwise_distance_m {
                    continue;
                }
                let mut vehicles = select_vehicles(
                    scene,
                    &group,
                    window.clone(),
                    cfg.vehicle_distance_threshold_m,
                )?;
                vehicles.truncate(cfg.max_vehicles());
                let n_veh = vehicles.len();
                if !cfg.vehicle_counts.contains(&n_veh) {
                    continue;
                }
                out.push(SegmentRecord {
                    scene_id: scene.scene_id.clone(),
                    frame_start: window.start,
                    frame_end: window.end,
                    pedestrian_ids: ids,
                    vehicle_ids: vehicles.into_iter().map(|(id, _)| id).collect(),
                    r,
                    category: (n_ped, n_veh),
                    split: Split::Train,
                });
            }
        }
    }
    Ok(out)
}

/// Segments a corpus (scenes in parallel), orders the result by
/// `(scene_id, frame range, group)` and assigns train/validation splits.
pub fn segment_corpus(scenes: &[Scene], cfg: &SegmentFilterConfig) -> Result<Vec<SegmentRecord>> {
    let per_scene: Vec<Vec<SegmentRecord>> = scenes
        .par_iter()
        .map(|s| segment_scene(s, cfg))
        .collect::<Result<_>>()?;
    let mut records: Vec<SegmentRecord> = per_scene.into_iter().flatten().collect();
    records.sort_by(|a, b| {
        a.scene_id
            .cmp(&b.scene_id)
            .then(a.frame_start.cmp(&b.frame_start))
            .then(a.frame_end.cmp(&b.frame_end))
            .then(a.category.0.cmp(&b.category.0))
            .then(a.pedestrian_ids.cmp(&b.pedestrian_ids))
    });
    assign_splits(&mut records, cfg.train_fraction);
    Ok(records)
}

/// 64-bit FNV-1a.
pub fn stable_hash(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Deterministic train/validation assignment. Within each category cell the
/// records are ordered by a hash of their scene id (so a scene's windows stay
/// together) and the first `round(n * train_fraction)` go to training.
pub fn assign_splits(records: &mut [SegmentRecord], train_fraction: f64) {
    let mut cells: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        cells.entry(r.category).or_default().push(i);
    }
    for idx in cells.values_mut() {
        idx.sort_by_key(|&i| {
            let r = &records[i];
            (
                stable_hash(r.scene_id.as_bytes()),
                r.scene_id.clone(),
                r.frame_start,
                r.pedestrian_ids.clone(),
            )
        });
        let n_train = (idx.len() as f64 * train_fraction).round() as usize;
        for (rank, &i) in idx.iter().enumerate() {
            records[i].split = if rank < n_train { Split::Train } else { Split::Val };
        }
    }
}

/// Segment counts per `(pedestrians, vehicles)` cell and split.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetStats {
    pub cells: BTreeMap<(usize, usize), (usize, usize)>,
}

impl DatasetStats {
    pub fn get(&self, n_ped: usize, n_veh: usize) -> (usize, usize) {
        self.cells.get(&(n_ped, n_veh)).copied().unwrap_or((0, 0))
    }

    pub fn total(&self) -> usize {
        self.cells.values().map(|(t, v)| t + v).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("n_ped,n_veh,train_count,val_count\n");
        for ((p, v), (tr, va)) in &self.cells {
            let _ = writeln!(s, "{p},{v},{tr},{va}");
        }
        s
    }

    /// Text table laid out with vehicle counts as rows and pedestrian
    /// counts as columns, each cell `train + val`.
    pub fn to_table(&self) -> String {
        let peds: BTreeSet<usize> = self.cells.keys().map(|k| k.0).collect();
        let vehs: BTreeSet<usize> = self.cells.keys().map(|k| k.1).collect();
        let mut s = format!("{:>8}", "veh\\ped");
        for p in &peds {
            let _ = write!(s, " {:>15}", p);
        }
        s.push('\n');
        for v in &vehs {
            let _ = write!(s, "{:>8}", v);
            for p in &peds {
                let (tr, va) = self.get(*p, *v);
                let _ = write!(s, " {:>15}", format!("{tr} + {va}"));
            }
            s.push('\n');
        }
        s
    }
}

/// Counts per category. Every cell of `pedestrian_counts x vehicle_counts`
/// is present (possibly zero); other categories appear only when observed.
pub fn dataset_stats(records: &[SegmentRecord], cfg: &SegmentFilterConfig) -> DatasetStats {
    let mut stats = DatasetStats::default();
    for &p in &cfg.pedestrian_counts {
        for &v in &cfg.vehicle_counts {
            stats.cells.insert((p, v), (0, 0));
        }
    }
    for r in records {
        let cell = stats.cells.entry(r.category).or_default();
        match r.split {
            Split::Train => cell.0 += 1,
            Split::Val => cell.1 += 1,
        }
    }
    stats
}

pub fn write_segments(path: &Path, records: &[SegmentRecord]) -> Result<()> {
    crate::io::write_atomic(path, |w| {
        for r in records {
            writeln!(w, "{}", serde_json::to_string(r).expect("records serialize"))?;
        }
        Ok(())
    })
}

pub fn read_segments(path: &Path) -> Result<Vec<SegmentRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::json(format!("{}:{}", path.display(), i + 1), e))?,
        );
    }
    Ok(out)
}
