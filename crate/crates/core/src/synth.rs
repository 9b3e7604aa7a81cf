//! Seeded synthetic pedestrian/vehicle scenes.
//!
//! World layout: a straight road along `x` between the near curb at `y = 0`
//! and the far curb at `y = 7`. Lane centres sit at `y = 1.75` (traffic
//! heading `+x`) and `y = 5.25` (heading `-x`). Pedestrians start on the
//! near sidewalk (`y < 0`) in a line formation along `x`.
//!
//! In the yield behavior every pedestrian walks toward the curb and reaches
//! it at the decision frame. If the approaching vehicle would reach the
//! crossing line within [`YIELD_GAP_S`] the group halts; otherwise it keeps
//! walking across. The observed history is identical in both branches, so
//! only the vehicle tells them apart.

use std::f64::consts::{PI, TAU};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Point3, PoseSequence, Scene, VehicleTrack};

pub const VEHICLE_LENGTH_M: f64 = 4.5;
pub const VEHICLE_WIDTH_M: f64 = 1.9;
pub const VEHICLE_HEIGHT_M: f64 = 1.6;
pub const ROOT_HEIGHT_M: f64 = 0.95;
pub const NEAR_LANE_Y: f64 = 1.75;
pub const FAR_LANE_Y: f64 = 5.25;
pub const CURB_Y: f64 = -0.5;
/// Pedestrians halt when a vehicle reaches their crossing line within this many seconds.
pub const YIELD_GAP_S: f64 = 1.2;
/// Gaps between neighbours in the pedestrian line formation.
pub const FORMATION_SPACING_M: [f64; 2] = [1.0, 1.5];

const FIRST_VEHICLE_ID: u64 = 101;
const STREAM_LAYOUT: u64 = 0;
const STREAM_PEDESTRIANS: u64 = 1;
const STREAM_VEHICLES: u64 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Behavior {
    Cross,
    Yield,
    WalkAlong,
    Stand,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BehaviorMix {
    pub cross: f64,
    #[serde(rename = "yield")]
    pub yield_: f64,
    pub walk_along: f64,
    pub stand: f64,
}

impl Default for BehaviorMix {
    fn default() -> Self {
        Self {
            cross: 0.25,
            yield_: 0.25,
            walk_along: 0.25,
            stand: 0.25,
        }
    }
}

impl BehaviorMix {
    pub fn only(b: Behavior) -> Self {
        let mut m = Self {
            cross: 0.0,
            yield_: 0.0,
            walk_along: 0.0,
            stand: 0.0,
        };
        match b {
            Behavior::Cross => m.cross = 1.0,
            Behavior::Yield => m.yield_ = 1.0,
            Behavior::WalkAlong => m.walk_along = 1.0,
            Behavior::Stand => m.stand = 1.0,
        }
        m
    }

    fn weights(&self) -> [(Behavior, f64); 4] {
        [
            (Behavior::Cross, self.cross),
            (Behavior::Yield, self.yield_),
            (Behavior::WalkAlong, self.walk_along),
            (Behavior::Stand, self.stand),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.weights();
        if w.iter().any(|(_, f)| !(f.is_finite() && *f >= 0.0)) {
            return Err(Error::Invalid("behavior fractions must be non-negative".into()));
        }
        let total: f64 = w.iter().map(|(_, f)| f).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Invalid(format!("behavior fractions sum to {total}, not 1")));
        }
        Ok(())
    }

    fn sample(&self, rng: &mut impl Rng) -> Behavior {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (b, f) in self.weights() {
            acc += f;
            if u < acc {
                return b;
            }
        }
        self.weights()
            .iter()
            .rev()
            .find(|(_, f)| *f > 0.0)
            .map(|(b, _)| *b)
            .unwrap_or(Behavior::Stand)
    }
}

/// The approaching vehicle of a yield scene, measured at the decision frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct YieldVehicle {
    pub speed_mps: f64,
    /// Distance along the road from the box centre to the group's crossing line.
    pub distance_m: f64,
    /// `+1` approaches from `-x` in the near lane, `-1` from `+x` in the far lane.
    pub direction: i8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub scene_id: String,
    pub seed: u64,
    pub n_pedestrians: usize,
    pub n_vehicles: usize,
    pub duration_frames: usize,
    pub behavior_mix: BehaviorMix,
    pub noise_std: f64,
    pub frame_rate_hz: f64,
    /// Last frame before a yield decision takes effect; defaults to
    /// `duration - 26`, leaving one second of future at 25 Hz.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decision_frame: Option<usize>,
    /// Fixes the yield vehicle instead of sampling it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub yield_vehicle: Option<YieldVehicle>,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            scene_id: "synth-0".into(),
            seed: 0,
            n_pedestrians: 1,
            n_vehicles: 1,
            duration_frames: 150,
            behavior_mix: BehaviorMix::default(),
            noise_std: 0.01,
            frame_rate_hz: 25.0,
            decision_frame: None,
            yield_vehicle: None,
        }
    }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_pedestrians == 0 {
            return Err(Error::Invalid("scenario needs at least one pedestrian".into()));
        }
        if self.n_pedestrians > 3 {
            return Err(Error::Invalid("scenarios hold at most 3 pedestrians".into()));
        }
        if self.n_vehicles > 4 {
            return Err(Error::Invalid("scenarios hold at most 4 vehicles".into()));
        }
        if self.duration_frames < 2 {
            return Err(Error::Invalid("scenario needs at least 2 frames".into()));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(Error::Invalid("noise std must be non-negative".into()));
        }
        if !(self.frame_rate_hz.is_finite() && self.frame_rate_hz > 0.0) {
            return Err(Error::Invalid("frame rate must be positive".into()));
        }
        if self.decision_frame() >= self.duration_frames {
            return Err(Error::Invalid("decision frame lies past the end of the scene".into()));
        }
        self.behavior_mix.validate()
    }

    pub fn decision_frame(&self) -> usize {
        self.decision_frame
            .unwrap_or_else(|| self.duration_frames.saturating_sub(26))
    }
}

/// Root path of a pedestrian: constant speed along piecewise-linear
/// waypoints, optionally stopping for good after `stop_frame`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaitPlan {
    pub waypoints: Vec<[f64; 2]>,
    pub speed_mps: f64,
    pub stop_frame: Option<usize>,
}

fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// SplitMix64 finaliser, used to derive per-scene seeds from a master seed.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

struct PathGeometry {
    points: Vec<[f64; 2]>,
    cumulative: Vec<f64>,
}

impl PathGeometry {
    fn new(points: &[[f64; 2]]) -> Self {
        let mut cumulative = vec![0.0];
        for w in points.windows(2) {
            let len = ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt();
            cumulative.push(cumulative.last().unwrap() + len);
        }
        Self {
            points: points.to_vec(),
            cumulative,
        }
    }

    fn total(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    /// Position and unit heading after travelling `s` meters.
    fn at(&self, s: f64) -> ([f64; 2], [f64; 2]) {
        let s = s.clamp(0.0, self.total());
        let mut seg = 0;
        while seg + 2 < self.points.len() && self.cumulative[seg + 1] < s {
            seg += 1;
        }
        // Skip zero-length segments when choosing the heading.
        let heading = (seg..self.points.len() - 1)
            .chain((0..seg).rev())
            .find_map(|i| {
                let (a, b) = (self.points[i], self.points[i + 1]);
                let len = self.cumulative[i + 1] - self.cumulative[i];
                (len > 0.0).then(|| [(b[0] - a[0]) / len, (b[1] - a[1]) / len])
            })
            .unwrap_or([1.0, 0.0]);
        let a = self.points[seg];
        let len = self.cumulative[seg + 1] - self.cumulative[seg];
        let f = if len > 0.0 {
            (s - self.cumulative[seg]) / len
        } else {
            0.0
        };
        let b = self.points[seg + 1];
        ([a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1])], heading)
    }
}

/// Joint offsets at rest in the body frame `(forward, left, up)` relative to the root.
const REST_POSE: [[f64; 3]; 15] = [
    [0.0, 0.0, 0.0],
    [0.0, 0.0, 0.50],
    [0.0, 0.0, 0.68],
    [0.0, 0.19, 0.45],
    [0.0, 0.19, 0.17],
    [0.0, 0.19, -0.08],
    [0.0, -0.19, 0.45],
    [0.0, -0.19, 0.17],
    [0.0, -0.19, -0.08],
    [0.0, 0.10, 0.0],
    [0.0, 0.10, -0.45],
    [0.0, 0.10, -0.88],
    [0.0, -0.10, 0.0],
    [0.0, -0.10, -0.45],
    [0.0, -0.10, -0.88],
];

const UPPER_ARM_M: f64 = 0.28;
const FOREARM_M: f64 = 0.25;
const THIGH_M: f64 = 0.45;
const SHIN_M: f64 = 0.43;
/// Swing amplitude time constant once a pedestrian stops.
const SETTLE_TAU_S: f64 = 0.15;

/// Body-frame pose for a gait phase and swing amplitude (0 = standing).
fn body_pose(phase: f64, amplitude: f64) -> [[f64; 3]; 15] {
    let mut pose = REST_POSE;
    let swing = |angle: f64, len: f64| [len * angle.sin(), 0.0, -len * angle.cos()];
    let leg = amplitude * 0.40 * phase.sin();
    let arm = -amplitude * 0.35 * phase.sin();
    let bend = amplitude * 0.2;
    for (side, sign) in [(0usize, 1.0), (1usize, -1.0)] {
        let shoulder = 3 + 3 * side;
        let hip = 9 + 3 * side;
        let a = sign * arm;
        let l = sign * leg;
        let elbow = swing(a, UPPER_ARM_M);
        let wrist = swing(a + bend, FOREARM_M);
        let knee = swing(l, THIGH_M);
        let ankle = swing(l, SHIN_M);
        for k in 0..3 {
            pose[shoulder + 1][k] = pose[shoulder][k] + elbow[k];
            pose[shoulder + 2][k] = pose[shoulder + 1][k] + wrist[k];
            pose[hip + 1][k] = pose[hip][k] + knee[k];
            pose[hip + 2][k] = pose[hip + 1][k] + ankle[k];
        }
    }
    pose
}

/// Walking-amplitude for a speed: 1 at a typical 1.4 m/s stroll.
fn swing_amplitude(speed: f64) -> f64 {
    (speed / 1.4).clamp(0.0, 1.3)
}

fn cadence_hz(speed: f64) -> f64 {
    0.5 + 0.3 * speed
}

/// Sinusoidal gait along a waypoint path. Limb swing is phase-locked
/// (arms opposite legs) with amplitude scaled by speed; Gaussian noise of
/// `noise_std` is added to every coordinate.
pub fn gen_pedestrian_gait(
    seed: u64,
    agent_id: u64,
    plan: &GaitPlan,
    frames: usize,
    frame_rate_hz: f64,
    noise_std: f64,
) -> Result<PoseSequence> {
    let mut rng = rng_stream(seed, STREAM_PEDESTRIANS);
    gait_with_rng(&mut rng, agent_id, plan, frames, frame_rate_hz, noise_std)
}

fn gait_with_rng(
    rng: &mut ChaCha8Rng,
    agent_id: u64,
    plan: &GaitPlan,
    frames: usize,
    frame_rate_hz: f64,
    noise_std: f64,
) -> Result<PoseSequence> {
    if plan.waypoints.len() < 2 {
        return Err(Error::Invalid("gait path needs at least 2 waypoints".into()));
    }
    if !(plan.speed_mps.is_finite() && plan.speed_mps >= 0.0) {
        return Err(Error::Invalid("gait speed must be non-negative".into()));
    }
    let path = PathGeometry::new(&plan.waypoints);
    if path.total() == 0.0 && plan.speed_mps > 0.0 {
        return Err(Error::Invalid("zero-length path with nonzero speed".into()));
    }
    let noise = Normal::new(0.0, noise_std).map_err(|e| Error::Invalid(e.to_string()))?;
    let dt = 1.0 / frame_rate_hz;
    let decay = (-dt / SETTLE_TAU_S).exp();
    let mut phase: f64 = rng.random_range(0.0..TAU);
    let mut amplitude = 0.0;
    let mut out = Vec::with_capacity(frames);
    for t in 0..frames {
        let moving_frames = plan.stop_frame.map_or(t, |s| t.min(s));
        let travelled = plan.speed_mps * moving_frames as f64 * dt;
        let (pos, heading) = path.at(travelled);
        let moving = plan.stop_frame.is_none_or(|s| t <= s) && travelled < path.total();
        if moving {
            amplitude = swing_amplitude(plan.speed_mps);
            phase += TAU * cadence_hz(plan.speed_mps) * dt;
        } else {
            amplitude *= decay;
        }
        let bob = 0.02 * amplitude * (2.0 * phase).cos();
        let root = [pos[0], pos[1], ROOT_HEIGHT_M + bob];
        let left = [-heading[1], heading[0]];
        let pose = body_pose(phase, amplitude)
            .iter()
            .map(|o| {
                let mut p: Point3 = [
                    root[0] + heading[0] * o[0] + left[0] * o[1],
                    root[1] + heading[1] * o[0] + left[1] * o[1],
                    root[2] + o[2],
                ];
                if noise_std > 0.0 {
                    for c in &mut p {
                        *c += noise.sample(rng);
                    }
                }
                p
            })
            .collect();
        out.push(pose);
    }
    PoseSequence::new(agent_id, out, frame_rate_hz)
}

/// Constant-speed rigid box motion, straight when `yaw_rate` is 0 and on a
/// circular arc otherwise.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VehicleMotion {
    pub start: [f64; 2],
    pub heading_rad: f64,
    pub speed_mps: f64,
    pub yaw_rate_rps: f64,
}

impl VehicleMotion {
    pub fn pose_at(&self, t_s: f64) -> ([f64; 2], f64) {
        let h0 = self.heading_rad;
        let h = h0 + self.yaw_rate_rps * t_s;
        let [x0, y0] = self.start;
        if self.yaw_rate_rps.abs() < 1e-12 {
            let d = self.speed_mps * t_s;
            ([x0 + d * h0.cos(), y0 + d * h0.sin()], h)
        } else {
            let r = self.speed_mps / self.yaw_rate_rps;
            ([x0 + r * (h.sin() - h0.sin()), y0 - r * (h.cos() - h0.cos())], h)
        }
    }
}

pub fn box_corners(center: [f64; 2], heading: f64) -> Vec<Point3> {
    let (hl, hw) = (VEHICLE_LENGTH_M / 2.0, VEHICLE_WIDTH_M / 2.0);
    let footprint = [(hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)];
    let (s, c) = heading.sin_cos();
    [0.0, VEHICLE_HEIGHT_M]
        .iter()
        .flat_map(|&z| {
            footprint.iter().map(move |&(fx, fy)| {
                [center[0] + c * fx - s * fy, center[1] + s * fx + c * fy, z]
            })
        })
        .collect()
}

pub fn gen_vehicle_track(
    vehicle_id: u64,
    motion: &VehicleMotion,
    frames: usize,
    frame_rate_hz: f64,
) -> Result<VehicleTrack> {
    let boxes = (0..frames)
        .map(|t| {
            let (c, h) = motion.pose_at(t as f64 / frame_rate_hz);
            box_corners(c, h)
        })
        .collect();
    VehicleTrack::new(vehicle_id, boxes, frame_rate_hz)
}

/// Time for the yield vehicle to reach the crossing line, in seconds;
/// infinite for a stationary vehicle.
pub fn arrival_time_s(v: &YieldVehicle) -> f64 {
    if v.speed_mps > 0.0 {
        v.distance_m / v.speed_mps
    } else {
        f64::INFINITY
    }
}

/// The yield rule: halt iff the vehicle arrives within the gap.
pub fn yield_halts(v: &YieldVehicle) -> bool {
    arrival_time_s(v) <= YIELD_GAP_S
}

pub fn sample_yield_vehicle(rng: &mut impl Rng) -> YieldVehicle {
    YieldVehicle {
        speed_mps: rng.random_range(2.0..12.0),
        distance_m: rng.random_range(6.0..9.0),
        direction: if rng.random_bool(0.5) { 1 } else { -1 },
    }
}

fn formation_xs(x0: f64, n: usize) -> Vec<f64> {
    let mut xs = vec![x0];
    for gap in FORMATION_SPACING_M.iter().take(n.saturating_sub(1)) {
        xs.push(xs.last().unwrap() + gap);
    }
    xs
}

/// The behavior a scenario resolves to for its seed.
pub fn scenario_behavior(spec: &ScenarioSpec) -> Behavior {
    let mut layout = rng_stream(spec.seed, STREAM_LAYOUT);
    spec.behavior_mix.sample(&mut layout)
}

pub fn gen_interaction_scene(spec: &ScenarioSpec) -> Result<Scene> {
    spec.validate()?;
    let mut layout = rng_stream(spec.seed, STREAM_LAYOUT);
    let mut ped_rng = rng_stream(spec.seed, STREAM_PEDESTRIANS);
    let mut veh_rng = rng_stream(spec.seed, STREAM_VEHICLES);
    let behavior = spec.behavior_mix.sample(&mut layout);
    let fps = spec.frame_rate_hz;
    let frames = spec.duration_frames;
    let duration_s = frames as f64 / fps;
    let speed = layout.random_range(1.0..1.6);
    let x0 = layout.random_range(-2.0..2.0);
    let xs = formation_xs(x0, spec.n_pedestrians);
    let x_center = (xs[0] + xs[xs.len() - 1]) / 2.0;

    let mut plans: Vec<GaitPlan> = Vec::with_capacity(xs.len());
    let mut motions: Vec<VehicleMotion> = Vec::with_capacity(spec.n_vehicles);
    match behavior {
        Behavior::Stand => {
            let y = layout.random_range(-2.5..-1.0);
            for &x in &xs {
                plans.push(GaitPlan {
                    waypoints: vec![[x, y], [x, y + 1.0]],
                    speed_mps: 0.0,
                    stop_frame: None,
                });
            }
            for _ in 0..spec.n_vehicles {
                if veh_rng.random_bool(0.5) {
                    motions.push(parked_in_lane(&mut veh_rng, x_center));
                } else {
                    // Slow manoeuvre on a circle centred over the road.
                    let v = veh_rng.random_range(1.0..3.0);
                    let radius = veh_rng.random_range(4.0..7.0);
                    let cx = x_center + veh_rng.random_range(-2.0..2.0);
                    let theta = veh_rng.random_range(0.0..TAU);
                    motions.push(VehicleMotion {
                        start: [cx + radius * theta.cos(), 3.5 + radius * theta.sin()],
                        heading_rad: theta + PI / 2.0,
                        speed_mps: v,
                        yaw_rate_rps: v / radius,
                    });
                }
            }
        }
        Behavior::Cross => {
            for &x in &xs {
                plans.push(GaitPlan {
                    waypoints: vec![[x, -1.0], [x, 12.0]],
                    speed_mps: speed,
                    stop_frame: None,
                });
            }
            // Stopped traffic on both sides of the crossing.
            for _ in 0..spec.n_vehicles {
                let side: f64 = if veh_rng.random_bool(0.5) { 1.0 } else { -1.0 };
                let offset = veh_rng.random_range(5.0..9.0);
                let (lane, heading) = if side < 0.0 {
                    (NEAR_LANE_Y, 0.0)
                } else {
                    (FAR_LANE_Y, PI)
                };
                motions.push(VehicleMotion {
                    start: [x_center + side * offset, lane],
                    heading_rad: heading,
                    speed_mps: 0.0,
                    yaw_rate_rps: 0.0,
                });
            }
        }
        Behavior::WalkAlong => {
            let dir: f64 = if layout.random_bool(0.5) { 1.0 } else { -1.0 };
            let y = layout.random_range(-2.5..-1.0);
            let reach = speed * duration_s + 1.0;
            for &x in &xs {
                plans.push(GaitPlan {
                    waypoints: vec![[x, y], [x + dir * reach, y]],
                    speed_mps: speed,
                    stop_frame: None,
                });
            }
            // Creeping traffic alongside the pedestrians.
            let (lane, heading) = if dir > 0.0 { (NEAR_LANE_Y, 0.0) } else { (FAR_LANE_Y, PI) };
            for _ in 0..spec.n_vehicles {
                motions.push(VehicleMotion {
                    start: [x_center + veh_rng.random_range(-6.0..6.0), lane],
                    heading_rad: heading,
                    speed_mps: speed * veh_rng.random_range(0.8..1.2),
                    yaw_rate_rps: 0.0,
                });
            }
        }
        Behavior::Yield => {
            let decision = spec.decision_frame();
            let t_dec = decision as f64 / fps;
            let sampled = sample_yield_vehicle(&mut veh_rng);
            let approaching = spec.yield_vehicle.unwrap_or(sampled);
            let halts = spec.n_vehicles > 0 && yield_halts(&approaching);
            let y_start = CURB_Y - speed * t_dec;
            for &x in &xs {
                plans.push(GaitPlan {
                    waypoints: vec![[x, y_start], [x, 12.0]],
                    speed_mps: speed,
                    stop_frame: halts.then_some(decision),
                });
            }
            if spec.n_vehicles > 0 {
                let dir = f64::from(approaching.direction.signum());
                let (lane, heading) = if dir > 0.0 { (NEAR_LANE_Y, 0.0) } else { (FAR_LANE_Y, PI) };
                let x_at_decision = x_center - dir * approaching.distance_m;
                motions.push(VehicleMotion {
                    start: [x_at_decision - dir * approaching.speed_mps * t_dec, lane],
                    heading_rad: heading,
                    speed_mps: approaching.speed_mps,
                    yaw_rate_rps: 0.0,
                });
            }
            for _ in 1..spec.n_vehicles {
                let heading = if veh_rng.random_bool(0.5) { 0.0 } else { PI };
                motions.push(VehicleMotion {
                    start: [x_center + veh_rng.random_range(-8.0..8.0), 8.5],
                    heading_rad: heading,
                    speed_mps: 0.0,
                    yaw_rate_rps: 0.0,
                });
            }
        }
    }

    let pedestrians = plans
        .iter()
        .enumerate()
        .map(|(i, plan)| gait_with_rng(&mut ped_rng, i as u64 + 1, plan, frames, fps, spec.noise_std))
        .collect::<Result<Vec<_>>>()?;
    let vehicles = motions
        .iter()
        .enumerate()
        .map(|(i, m)| gen_vehicle_track(FIRST_VEHICLE_ID + i as u64, m, frames, fps))
        .collect::<Result<Vec<_>>>()?;
    Scene::new(spec.scene_id.clone(), fps, pedestrians, vehicles)
}

fn parked_in_lane(rng: &mut impl Rng, x_center: f64) -> VehicleMotion {
    let near = rng.random_bool(0.5);
    VehicleMotion {
        start: [
            x_center + rng.random_range(-8.0..8.0),
            if near { NEAR_LANE_Y } else { FAR_LANE_Y },
        ],
        heading_rad: if near { 0.0 } else { PI },
        speed_mps: 0.0,
        yaw_rate_rps: 0.0,
    }
}

/// Shared settings for a generated corpus. `None` counts are drawn per scene
/// (pedestrians from 1..=3, vehicles from 1..=4).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusTemplate {
    pub n_pedestrians: Option<usize>,
    pub n_vehicles: Option<usize>,
    pub duration_frames: usize,
    pub behavior_mix: BehaviorMix,
    pub noise_std: f64,
    pub frame_rate_hz: f64,
    pub decision_frame: Option<usize>,
}

impl Default for CorpusTemplate {
    fn default() -> Self {
        let s = ScenarioSpec::default();
        Self {
            n_pedestrians: None,
            n_vehicles: None,
            duration_frames: s.duration_frames,
            behavior_mix: s.behavior_mix,
            noise_std: s.noise_std,
            frame_rate_hz: s.frame_rate_hz,
            decision_frame: None,
        }
    }
}

/// Per-scene specs for a corpus; scene `i` gets id `scene-{i:06}` and a
/// seed derived from `(master_seed, i)`.
pub fn corpus_specs(master_seed: u64, count: usize, template: &CorpusTemplate) -> Vec<ScenarioSpec> {
    (0..count)
        .map(|i| {
            let seed = derive_seed(master_seed, i as u64);
            let mut counts = ChaCha8Rng::seed_from_u64(seed);
            counts.set_stream(3);
            let n_pedestrians = template
                .n_pedestrians
                .unwrap_or_else(|| counts.random_range(1..=3));
            let n_vehicles = template
                .n_vehicles
                .unwrap_or_else(|| counts.random_range(1..=4));
            ScenarioSpec {
                scene_id: format!("scene-{i:06}"),
                seed,
                n_pedestrians,
                n_vehicles,
                duration_frames: template.duration_frames,
                behavior_mix: template.behavior_mix,
                noise_std: template.noise_std,
                frame_rate_hz: template.frame_rate_hz,
                decision_frame: template.decision_frame,
                yield_vehicle: None,
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub scene_id: String,
    pub seed: u64,
    pub n_pedestrians: usize,
    pub n_vehicles: usize,
    pub behavior: Behavior,
    pub duration_frames: usize,
    pub frame_rate_hz: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub yield_halts: Option<bool>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub scenes: Vec<ManifestEntry>,
}

pub const SCENES_FILE: &str = "scenes.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Generates every scene (in parallel; output order follows `specs`).
pub fn gen_scenes(specs: &[ScenarioSpec]) -> Result<(Vec<Scene>, Manifest)> {
    let scenes = specs
        .par_iter()
        .map(gen_interaction_scene)
        .collect::<Result<Vec<_>>>()?;
    let entries = specs
        .iter()
        .map(|s| {
            let behavior = scenario_behavior(s);
            let yield_halts = (behavior == Behavior::Yield && s.n_vehicles > 0).then(|| {
                let mut veh = rng_stream(s.seed, STREAM_VEHICLES);
                let sampled = sample_yield_vehicle(&mut veh);
                yield_halts(&s.yield_vehicle.unwrap_or(sampled))
            });
            ManifestEntry {
                scene_id: s.scene_id.clone(),
                seed: s.seed,
                n_pedestrians: s.n_pedestrians,
                n_vehicles: s.n_vehicles,
                behavior,
                duration_frames: s.duration_frames,
                frame_rate_hz: s.frame_rate_hz,
                yield_halts,
            }
        })
        .collect();
    Ok((scenes, Manifest { scenes: entries }))
}

/// Writes `scenes.jsonl` and `manifest.json` under `out_dir`.
pub fn gen_dataset(specs: &[ScenarioSpec], out_dir: &Path) -> Result<Manifest> {
    let (scenes, manifest) = gen_scenes(specs)?;
    crate::types::write_scenes(&out_dir.join(SCENES_FILE), &scenes)?;
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    crate::io::write_string_atomic(&out_dir.join(MANIFEST_FILE), &(json + "\n"))?;
    Ok(manifest)
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::distance;

    fn straight(speed: f64) -> GaitPlan {
        GaitPlan {
            waypoints: vec![[0.0, 0.0], [10.0, 0.0]],
            speed_mps: speed,
            stop_frame: None,
        }
    }

    #[test]
    fn standing_has_no_swing() {
        let seq = gen_pedestrian_gait(3, 1, &straight(0.0), 40, 25.0, 0.0).unwrap();
        assert!((1..40).all(|t| seq.frame(t) == seq.frame(0)));
        let noisy = gen_pedestrian_gait(3, 1, &straight(0.0), 40, 25.0, 0.01).unwrap();
        let max_dev = (0..40)
            .flat_map(|t| (0..15).map(move |j| (t, j)))
            .map(|(t, j)| distance(noisy.frame(t)[j], seq.frame(t)[j]))
            .fold(0.0, f64::max);
        assert!(max_dev < 0.08, "{max_dev}");
    }

    #[test]
    fn straight_walk_speed() {
        let seq = gen_pedestrian_gait(5, 1, &straight(5.0), 51, 25.0, 0.01).unwrap();
        let start = seq.root(0);
        let end = seq.root(50);
        let planar = ((end[0] - start[0]).powi(2) + (end[1] - start[1]).powi(2)).sqrt();
        assert!((planar / 2.0 - 5.0).abs() < 0.05, "{}", planar / 2.0);
    }

    #[test]
    fn gait_is_deterministic() {
        let a = gen_pedestrian_gait(9, 1, &straight(1.3), 30, 25.0, 0.01).unwrap();
        let b = gen_pedestrian_gait(9, 1, &straight(1.3), 30, 25.0, 0.01).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gait_errors() {
        let one = GaitPlan {
            waypoints: vec![[0.0, 0.0]],
            speed_mps: 1.0,
            stop_frame: None,
        };
        assert!(gen_pedestrian_gait(0, 1, &one, 10, 25.0, 0.0).is_err());
        let zero = GaitPlan {
            waypoints: vec![[1.0, 1.0], [1.0, 1.0]],
            speed_mps: 1.0,
            stop_frame: None,
        };
        assert!(gen_pedestrian_gait(0, 1, &zero, 10, 25.0, 0.0).is_err());
        let standing = GaitPlan { speed_mps: 0.0, ..zero };
        assert!(gen_pedestrian_gait(0, 1, &standing, 10, 25.0, 0.0).is_ok());
    }

    #[test]
    fn stand_only_scene_is_static() {
        let spec = ScenarioSpec {
            n_pedestrians: 3,
            n_vehicles: 0,
            behavior_mix: BehaviorMix::only(Behavior::Stand),
            noise_std: 0.0,
            ..Default::default()
        };
        let scene = gen_interaction_scene(&spec).unwrap();
        for p in &scene.pedestrians {
            assert!((0..scene.frame_count()).all(|t| p.frame(t) == p.frame(0)));
        }
    }

    #[test]
    fn invalid_specs() {
        let zero = ScenarioSpec {
            n_pedestrians: 0,
            ..Default::default()
        };
        assert!(gen_interaction_scene(&zero).is_err());
        let bad_mix = ScenarioSpec {
            behavior_mix: BehaviorMix {
                cross: 0.5,
                yield_: 0.0,
                walk_along: 0.0,
                stand: 0.0,
            },
            ..Default::default()
        };
        assert!(gen_interaction_scene(&bad_mix).is_err());
    }

    fn yield_spec(v: YieldVehicle) -> ScenarioSpec {
        ScenarioSpec {
            seed: 17,
            n_pedestrians: 2,
            n_vehicles: 2,
            behavior_mix: BehaviorMix::only(Behavior::Yield),
            yield_vehicle: Some(v),
            ..Default::default()
        }
    }

    #[test]
    fn yield_branches_follow_the_gap_rule() {
        let fast = YieldVehicle { speed_mps: 11.0, distance_m: 7.0, direction: 1 };
        let slow = YieldVehicle { speed_mps: 3.0, distance_m: 7.0, direction: -1 };
        assert!(yield_halts(&fast));
        assert!(!yield_halts(&slow));
        let spec = yield_spec(fast);
        let d = spec.decision_frame();
        let halted = gen_interaction_scene(&spec).unwrap();
        let crossed = gen_interaction_scene(&yield_spec(slow)).unwrap();
        for (h, c) in halted.pedestrians.iter().zip(&crossed.pedestrians) {
            // Identical observed history.
            assert!((0..=d).all(|t| h.frame(t) == c.frame(t)));
            let end = halted.frame_count() - 1;
            let stay = distance(h.root(d), h.root(end));
            let go = distance(c.root(d), c.root(end));
            assert!(stay < 0.1, "halted root moved {stay}");
            assert!(go > 1.0, "crossing root moved only {go}");
            assert!(distance(h.root(end), c.root(end)) > 1.0);
        }
    }

    #[test]
    fn physical_sanity() {
        let template = CorpusTemplate {
            noise_std: 0.0,
            ..Default::default()
        };
        for spec in corpus_specs(4, 40, &template) {
            let scene = gen_interaction_scene(&spec).unwrap();
            let dt = 1.0 / scene.frame_rate_hz;
            for p in &scene.pedestrians {
                for t in 1..scene.frame_count() {
                    assert!(distance(p.root(t), p.root(t - 1)) / dt <= 3.0);
                }
            }
            for v in &scene.vehicles {
                let rest = v.corners(0);
                for t in 1..scene.frame_count() {
                    assert!(distance(v.center(t), v.center(t - 1)) / dt <= 15.0);
                    let now = v.corners(t);
                    for i in 0..8 {
                        for j in i + 1..8 {
                            let drift = distance(now[i], now[j]) - distance(rest[i], rest[j]);
                            assert!(drift.abs() <= 1e-9);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn turning_box_stays_rigid() {
        let m = VehicleMotion {
            start: [0.0, 0.0],
            heading_rad: 0.3,
            speed_mps: 4.0,
            yaw_rate_rps: 0.5,
        };
        let track = gen_vehicle_track(1, &m, 100, 25.0).unwrap();
        let (a, b) = (track.corners(0), track.corners(99));
        for i in 0..8 {
            for j in 0..8 {
                assert!((distance(a[i], a[j]) - distance(b[i], b[j])).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn box_corner_order_convention() {
        let c = box_corners([0.0, 0.0], 0.0);
        assert_eq!(c[0], [2.25, 0.95, 0.0]);
        assert_eq!(c[1], [-2.25, 0.95, 0.0]);
        assert_eq!(c[4], [2.25, 0.95, 1.6]);
        // Bottom face counter-clockwise from above: positive signed area.
        let area: f64 = (0..4)
            .map(|i| {
                let (p, q) = (c[i], c[(i + 1) % 4]);
                p[0] * q[1] - q[0] * p[1]
            })
            .sum();
        assert!(area > 0.0);
    }

    #[test]
    fn seeds_differ_per_scene() {
        let specs = corpus_specs(1, 5, &CorpusTemplate::default());
        let mut seeds: Vec<u64> = specs.iter().map(|s| s.seed).collect();
        seeds.dedup();
        assert_eq!(seeds.len(), 5);
        assert_eq!(specs, corpus_specs(1, 5, &CorpusTemplate::default()));
    }
}
