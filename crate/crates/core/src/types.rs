//! Agents, scenes and the displacement representation shared by every stage.
//!
//! Coordinates are meters in one static world frame per scene, `z` up.
//! Joint 0 of every skeleton is the root (pelvis).
//!
//! Vehicle boxes carry eight corners in a fixed order: the bottom face
//! counter-clockwise seen from above starting at front-left, then the top
//! face in the same order.
//!
//! ```text
//!        7 ---- 4          top:    4 FL  5 RL  6 RR  7 FR
//!       /|     /|
//!      6 ---- 5 |          bottom: 0 FL  1 RL  2 RR  3 FR
//!      | 3 ---|-0   --> front (+x in the body frame)
//!      |/     |/
//!      2 ---- 1
//! ```

use std::fmt;
use std::io::BufRead;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub type Point3 = [f64; 3];

pub const ROOT_JOINT: usize = 0;
pub const CORNERS_PER_BOX: usize = 8;
pub const DEFAULT_FRAME_RATE_HZ: f64 = 25.0;

/// Names of the default 15-joint skeleton, indexed by joint id.
pub const DEFAULT_JOINT_NAMES: [&str; 15] = [
    "root",
    "neck",
    "head",
    "left_shoulder",
    "left_elbow",
    "left_wrist",
    "right_shoulder",
    "right_elbow",
    "right_wrist",
    "left_hip",
    "left_knee",
    "left_ankle",
    "right_hip",
    "right_knee",
    "right_ankle",
];

/// The twelve box edges as corner index pairs: bottom ring, top ring, verticals.
pub const BOX_EDGES: [[usize; 2]; 12] = [
    [0, 1],
    [1, 2],
    [2, 3],
    [3, 0],
    [4, 5],
    [5, 6],
    [6, 7],
    [7, 4],
    [0, 4],
    [1, 5],
    [2, 6],
    [3, 7],
];

#[inline]
pub(crate) fn sub3(a: Point3, b: Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub(crate) fn add3(a: Point3, b: Point3) -> Point3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn distance(a: Point3, b: Point3) -> f64 {
    let d = sub3(a, b);
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

/// Mean of a set of points, summed in index order.
pub fn centroid(points: &[Point3]) -> Point3 {
    let mut acc = [0.0; 3];
    for p in points {
        acc = add3(acc, *p);
    }
    let n = points.len() as f64;
    [acc[0] / n, acc[1] / n, acc[2] / n]
}

/// A rectangular `frames x width` block of 3D points stored frame-major.
#[derive(Clone, Debug, PartialEq)]
pub struct PointTrack {
    width: usize,
    points: Vec<Point3>,
}

impl PointTrack {
    pub fn from_frames(frames: Vec<Vec<Point3>>) -> Result<Self> {
        let width = frames.first().map_or(0, Vec::len);
        if frames.iter().any(|f| f.len() != width) {
            return Err(Error::Invalid("frames have differing point counts".into()));
        }
        Self::from_flat(width, frames.into_iter().flatten().collect())
    }

    pub fn from_flat(width: usize, points: Vec<Point3>) -> Result<Self> {
        if width == 0 {
            return Err(Error::Invalid("track has zero points per frame".into()));
        }
        if points.len() % width != 0 {
            return Err(Error::Invalid(format!(
                "{} points is not a multiple of width {width}",
                points.len()
            )));
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("non-finite coordinate".into()));
        }
        Ok(Self { width, points })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn frame_count(&self) -> usize {
        self.points.len() / self.width
    }

    pub fn frame(&self, t: usize) -> &[Point3] {
        &self.points[t * self.width..(t + 1) * self.width]
    }

    pub fn frames(&self) -> impl Iterator<Item = &[Point3]> {
        self.points.chunks_exact(self.width)
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn slice(&self, range: Range<usize>) -> Result<Self> {
        if range.start >= range.end || range.end > self.frame_count() {
            return Err(Error::Length(format!(
                "frame range {range:?} outside 0..{}",
                self.frame_count()
            )));
        }
        Ok(Self {
            width: self.width,
            points: self.points[range.start * self.width..range.end * self.width].to_vec(),
        })
    }

    fn to_displacements(&self, agent_id: u64) -> Result<DisplacementSequence> {
        let n = self.frame_count();
        if n < 2 {
            return Err(Error::Length(format!(
                "displacements need at least 2 frames, got {n}"
            )));
        }
        let w = self.width;
        let displacements = (0..(n - 1) * w)
            .map(|i| sub3(self.points[i + w], self.points[i]))
            .collect();
        Ok(DisplacementSequence {
            agent_id,
            width: self.width,
            origin: self.frame(0).to_vec(),
            displacements,
        })
    }

    fn from_displacements(d: &DisplacementSequence) -> Result<Self> {
        if d.origin.len() != d.width || d.displacements.len() % d.width != 0 {
            return Err(Error::Invalid(
                "displacement sequence shape does not match its origin".into(),
            ));
        }
        let mut points = Vec::with_capacity(d.origin.len() + d.displacements.len());
        points.extend_from_slice(&d.origin);
        for (i, delta) in d.displacements.iter().enumerate() {
            let prev = points[i];
            points.push(add3(prev, *delta));
        }
        Self::from_flat(d.width, points)
    }
}

/// Frame-to-frame deltas `x[t+1] - x[t]` of a [`PointTrack`] plus the first
/// absolute frame needed to invert them.
#[derive(Clone, Debug, PartialEq)]
pub struct DisplacementSequence {
    pub agent_id: u64,
    pub width: usize,
    pub origin: Vec<Point3>,
    pub displacements: Vec<Point3>,
}

impl DisplacementSequence {
    pub fn len(&self) -> usize {
        self.displacements.len() / self.width
    }

    pub fn is_empty(&self) -> bool {
        self.displacements.is_empty()
    }

    pub fn step(&self, t: usize) -> &[Point3] {
        &self.displacements[t * self.width..(t + 1) * self.width]
    }

    /// Feature streams for groups of point indices: one stream per group,
    /// one row per time step holding the group's deltas concatenated as xyz.
    pub fn group_streams(&self, groups: &[Vec<usize>]) -> Vec<Vec<Vec<f64>>> {
        groups
            .iter()
            .map(|group| {
                (0..self.len())
                    .map(|t| {
                        let step = self.step(t);
                        group.iter().flat_map(|&j| step[j]).collect()
                    })
                    .collect()
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PoseSequence {
    pub agent_id: u64,
    pub frame_rate_hz: f64,
    track: PointTrack,
}

impl PoseSequence {
    pub fn new(agent_id: u64, frames: Vec<Vec<Point3>>, frame_rate_hz: f64) -> Result<Self> {
        Self::from_track(agent_id, PointTrack::from_frames(frames)?, frame_rate_hz)
    }

    pub fn from_track(agent_id: u64, track: PointTrack, frame_rate_hz: f64) -> Result<Self> {
        if track.width() < 2 {
            return Err(Error::Invalid(format!(
                "pedestrian {agent_id}: skeleton needs at least 2 joints"
            )));
        }
        if track.frame_count() < 2 {
            return Err(Error::Length(format!(
                "pedestrian {agent_id}: need at least 2 frames"
            )));
        }
        check_rate(frame_rate_hz)?;
        Ok(Self {
            agent_id,
            frame_rate_hz,
            track,
        })
    }

    pub fn joint_count(&self) -> usize {
        self.track.width()
    }

    pub fn frame_count(&self) -> usize {
        self.track.frame_count()
    }

    pub fn frame(&self, t: usize) -> &[Point3] {
        self.track.frame(t)
    }

    pub fn root(&self, t: usize) -> Point3 {
        self.track.frame(t)[ROOT_JOINT]
    }

    pub fn track(&self) -> &PointTrack {
        &self.track
    }

    pub fn window(&self, range: Range<usize>) -> Result<Self> {
        Self::from_track(self.agent_id, self.track.slice(range)?, self.frame_rate_hz)
    }

    pub fn to_displacements(&self) -> Result<DisplacementSequence> {
        self.track.to_displacements(self.agent_id)
    }

    pub fn from_displacements(d: &DisplacementSequence, frame_rate_hz: f64) -> Result<Self> {
        Self::from_track(d.agent_id, PointTrack::from_displacements(d)?, frame_rate_hz)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VehicleTrack {
    pub vehicle_id: u64,
    pub frame_rate_hz: f64,
    track: PointTrack,
}

impl VehicleTrack {
    pub fn new(vehicle_id: u64, frames: Vec<Vec<Point3>>, frame_rate_hz: f64) -> Result<Self> {
        Self::from_track(vehicle_id, PointTrack::from_frames(frames)?, frame_rate_hz)
    }

    pub fn from_track(vehicle_id: u64, track: PointTrack, frame_rate_hz: f64) -> Result<Self> {
        if track.width() != CORNERS_PER_BOX {
            return Err(Error::Invalid(format!(
                "vehicle {vehicle_id}: expected 8 corners per frame, got {}",
                track.width()
            )));
        }
        if track.frame_count() < 2 {
            return Err(Error::Length(format!(
                "vehicle {vehicle_id}: need at least 2 frames"
            )));
        }
        check_rate(frame_rate_hz)?;
        for (t, frame) in track.frames().enumerate() {
            if let Some([a, b]) = BOX_EDGES
                .iter()
                .find(|[a, b]| distance(frame[*a], frame[*b]) <= 0.0)
            {
                return Err(Error::Invalid(format!(
                    "vehicle {vehicle_id}: degenerate edge {a}-{b} at frame {t}"
                )));
            }
        }
        Ok(Self {
            vehicle_id,
            frame_rate_hz,
            track,
        })
    }

    pub fn frame_count(&self) -> usize {
        self.track.frame_count()
    }

    pub fn corners(&self, t: usize) -> &[Point3] {
        self.track.frame(t)
    }

    /// Box centre at frame `t`: the mean of its eight corners.
    pub fn center(&self, t: usize) -> Point3 {
        centroid(self.corners(t))
    }

    pub fn track(&self) -> &PointTrack {
        &self.track
    }

    pub fn window(&self, range: Range<usize>) -> Result<Self> {
        Self::from_track(self.vehicle_id, self.track.slice(range)?, self.frame_rate_hz)
    }

    pub fn to_displacements(&self) -> Result<DisplacementSequence> {
        self.track.to_displacements(self.vehicle_id)
    }

    pub fn from_displacements(d: &DisplacementSequence, frame_rate_hz: f64) -> Result<Self> {
        Self::from_track(d.agent_id, PointTrack::from_displacements(d)?, frame_rate_hz)
    }
}

fn check_rate(hz: f64) -> Result<()> {
    if hz.is_finite() && hz > 0.0 {
        Ok(())
    } else {
        Err(Error::Invalid(format!("frame rate must be positive, got {hz}")))
    }
}

/// A temporally aligned set of pedestrians and vehicles.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub scene_id: String,
    pub frame_rate_hz: f64,
    pub pedestrians: Vec<PoseSequence>,
    pub vehicles: Vec<VehicleTrack>,
}

impl Scene {
    pub fn new(
        scene_id: impl Into<String>,
        frame_rate_hz: f64,
        pedestrians: Vec<PoseSequence>,
        vehicles: Vec<VehicleTrack>,
    ) -> Result<Self> {
        let scene_id = scene_id.into();
        check_rate(frame_rate_hz)?;
        let Some(first) = pedestrians.first() else {
            return Err(Error::Invalid(format!("scene {scene_id}: no pedestrians")));
        };
        let frames = first.frame_count();
        let aligned = pedestrians
            .iter()
            .map(|p| (p.frame_count(), p.frame_rate_hz))
            .chain(vehicles.iter().map(|v| (v.frame_count(), v.frame_rate_hz)))
            .all(|(n, hz)| n == frames && hz == frame_rate_hz);
        if !aligned {
            return Err(Error::Invalid(format!(
                "scene {scene_id}: agents differ in frame count or frame rate"
            )));
        }
        Ok(Self {
            scene_id,
            frame_rate_hz,
            pedestrians,
            vehicles,
        })
    }

    pub fn frame_count(&self) -> usize {
        self.pedestrians[0].frame_count()
    }

    pub fn pedestrian(&self, agent_id: u64) -> Option<&PoseSequence> {
        self.pedestrians.iter().find(|p| p.agent_id == agent_id)
    }

    pub fn vehicle(&self, vehicle_id: u64) -> Option<&VehicleTrack> {
        self.vehicles.iter().find(|v| v.vehicle_id == vehicle_id)
    }

    pub fn to_record(&self) -> SceneRecord {
        SceneRecord {
            scene_id: self.scene_id.clone(),
            frame_rate_hz: self.frame_rate_hz,
            pedestrians: self
                .pedestrians
                .iter()
                .map(|p| PedestrianRecord {
                    agent_id: p.agent_id,
                    joints: p.track.frames().map(<[Point3]>::to_vec).collect(),
                })
                .collect(),
            vehicles: self
                .vehicles
                .iter()
                .map(|v| VehicleRecord {
                    vehicle_id: v.vehicle_id,
                    corners: v.track.frames().map(<[Point3]>::to_vec).collect(),
                })
                .collect(),
        }
    }

    pub fn from_record(r: SceneRecord) -> Result<Self> {
        let hz = r.frame_rate_hz;
        let pedestrians = r
            .pedestrians
            .into_iter()
            .map(|p| PoseSequence::new(p.agent_id, p.joints, hz))
            .collect::<Result<_>>()?;
        let vehicles = r
            .vehicles
            .into_iter()
            .map(|v| VehicleTrack::new(v.vehicle_id, v.corners, hz))
            .collect::<Result<_>>()?;
        Scene::new(r.scene_id, hz, pedestrians, vehicles)
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(&self.to_record()).expect("scene records always serialize")
    }

    pub fn from_json_line(line: &str) -> Result<Self> {
        let record: SceneRecord =
            serde_json::from_str(line).map_err(|e| Error::json("scene record", e))?;
        Self::from_record(record)
    }
}

/// One line of the scene interchange JSONL format.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SceneRecord {
    pub scene_id: String,
    #[serde(default = "default_rate")]
    pub frame_rate_hz: f64,
    pub pedestrians: Vec<PedestrianRecord>,
    #[serde(default)]
    pub vehicles: Vec<VehicleRecord>,
}

fn default_rate() -> f64 {
    DEFAULT_FRAME_RATE_HZ
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PedestrianRecord {
    pub agent_id: u64,
    pub joints: Vec<Vec<Point3>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VehicleRecord {
    pub vehicle_id: u64,
    pub corners: Vec<Vec<Point3>>,
}

pub fn read_scenes(path: &Path) -> Result<Vec<Scene>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut scenes = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: SceneRecord = serde_json::from_str(&line)
            .map_err(|e| Error::json(format!("{}:{}", path.display(), i + 1), e))?;
        scenes.push(Scene::from_record(record)?);
    }
    Ok(scenes)
}

pub fn write_scenes(path: &Path, scenes: &[Scene]) -> Result<()> {
    crate::io::write_atomic(path, |w| {
        for scene in scenes {
            writeln!(w, "{}", scene.to_json_line())?;
        }
        Ok(())
    })
}

/// Disjoint joint groups covering a skeleton; each group becomes one token
/// stream in the pedestrian branch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PartitionRepr", into = "PartitionRepr")]
pub struct BodyPartition {
    joint_count: usize,
    groups: Vec<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct PartitionRepr {
    joint_count: usize,
    groups: Vec<Vec<usize>>,
}

impl TryFrom<PartitionRepr> for BodyPartition {
    type Error = Error;
    fn try_from(r: PartitionRepr) -> Result<Self> {
        BodyPartition::new(r.joint_count, r.groups)
    }
}

impl From<BodyPartition> for PartitionRepr {
    fn from(p: BodyPartition) -> Self {
        PartitionRepr {
            joint_count: p.joint_count,
            groups: p.groups,
        }
    }
}

impl BodyPartition {
    pub fn new(joint_count: usize, groups: Vec<Vec<usize>>) -> Result<Self> {
        let mut seen = vec![false; joint_count];
        for group in &groups {
            if group.is_empty() {
                return Err(Error::Invalid("body partition has an empty group".into()));
            }
            for &j in group {
                match seen.get_mut(j) {
                    None => {
                        return Err(Error::Invalid(format!(
                            "joint {j} out of range for {joint_count} joints"
                        )))
                    }
                    Some(true) => {
                        return Err(Error::Invalid(format!("joint {j} in more than one group")))
                    }
                    Some(s) => *s = true,
                }
            }
        }
        if let Some(j) = seen.iter().position(|s| !s) {
            return Err(Error::Invalid(format!("joint {j} not covered by any group")));
        }
        Ok(Self {
            joint_count,
            groups,
        })
    }

    /// Trunk plus four limbs over [`DEFAULT_JOINT_NAMES`].
    pub fn default_15() -> Self {
        Self::new(
            15,
            vec![
                vec![0, 1, 2],
                vec![3, 4, 5],
                vec![6, 7, 8],
                vec![9, 10, 11],
                vec![12, 13, 14],
            ],
        )
        .expect("default partition is valid")
    }

    /// A single group holding every joint.
    pub fn whole_body(joint_count: usize) -> Self {
        Self::new(joint_count, vec![(0..joint_count).collect()]).expect("valid")
    }

    pub fn joint_count(&self) -> usize {
        self.joint_count
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    /// Width of the widest group's feature vector (3 values per joint).
    pub fn max_features(&self) -> usize {
        self.groups.iter().map(|g| 3 * g.len()).max().unwrap_or(0)
    }
}

impl Default for BodyPartition {
    fn default() -> Self {
        Self::default_15()
    }
}

/// Number of logical corner groups a vehicle box is split into.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CornerScheme {
    /// All eight corners together.
    Whole,
    /// Front and rear faces.
    FrontRear,
    /// The four vertical edges.
    VerticalEdges,
    /// The six faces.
    Faces,
    /// Each corner on its own.
    Corners,
    /// The twelve edges.
    Edges,
}

impl CornerScheme {
    pub const ALL: [CornerScheme; 6] = [
        CornerScheme::Whole,
        CornerScheme::FrontRear,
        CornerScheme::VerticalEdges,
        CornerScheme::Faces,
        CornerScheme::Corners,
        CornerScheme::Edges,
    ];

    pub fn from_count(n: usize) -> Result<Self> {
        Ok(match n {
            1 => Self::Whole,
            2 => Self::FrontRear,
            4 => Self::VerticalEdges,
            6 => Self::Faces,
            8 => Self::Corners,
            12 => Self::Edges,
            _ => {
                return Err(Error::Invalid(format!(
                    "corner grouping must be one of 1, 2, 4, 6, 8, 12; got {n}"
                )))
            }
        })
    }

    pub fn group_count(self) -> usize {
        match self {
            Self::Whole => 1,
            Self::FrontRear => 2,
            Self::VerticalEdges => 4,
            Self::Faces => 6,
            Self::Corners => 8,
            Self::Edges => 12,
        }
    }
}

impl fmt::Display for CornerScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.group_count())
    }
}

impl Serialize for CornerScheme {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_u64(self.group_count() as u64)
    }
}

impl<'de> Deserialize<'de> for CornerScheme {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let n = usize::deserialize(d)?;
        CornerScheme::from_count(n).map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CornerGrouping {
    pub scheme: CornerScheme,
    groups: Vec<Vec<usize>>,
}

impl CornerGrouping {
    pub fn new(scheme: CornerScheme) -> Self {
        let groups = match scheme {
            CornerScheme::Whole => vec![(0..8).collect()],
            CornerScheme::FrontRear => vec![vec![0, 3, 7, 4], vec![1, 2, 6, 5]],
            CornerScheme::VerticalEdges => (0..4).map(|i| vec![i, i + 4]).collect(),
            CornerScheme::Faces => vec![
                vec![0, 1, 2, 3],
                vec![4, 5, 6, 7],
                vec![0, 3, 7, 4],
                vec![1, 2, 6, 5],
                vec![0, 1, 5, 4],
                vec![3, 2, 6, 7],
            ],
            CornerScheme::Corners => (0..8).map(|i| vec![i]).collect(),
            CornerScheme::Edges => BOX_EDGES.iter().map(|e| e.to_vec()).collect(),
        };
        Self { scheme, groups }
    }

    pub fn from_count(n: usize) -> Result<Self> {
        Ok(Self::new(CornerScheme::from_count(n)?))
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    /// Feature width of one token: every group in a scheme has the same size.
    pub fn features(&self) -> usize {
        3 * self.groups[0].len()
    }
}

/// Body-part token streams of a pedestrian: one stream per group, one token
/// per displacement step holding the group's joint deltas.
pub fn partition_tokens(seq: &PoseSequence, partition: &BodyPartition) -> Result<Vec<Vec<Vec<f64>>>> {
    if partition.joint_count() != seq.joint_count() {
        return Err(Error::Invalid(format!(
            "partition expects {} joints, sequence has {}",
            partition.joint_count(),
            seq.joint_count()
        )));
    }
    Ok(seq.to_displacements()?.group_streams(partition.groups()))
}

/// Corner-group token streams of a vehicle, analogous to [`partition_tokens`].
pub fn corner_group_tokens(track: &VehicleTrack, grouping: &CornerGrouping) -> Result<Vec<Vec<Vec<f64>>>> {
    Ok(track.to_displacements()?.group_streams(grouping.groups()))
}
