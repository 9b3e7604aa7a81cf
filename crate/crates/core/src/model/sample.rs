//! Model inputs precomputed from a segment: DCT token features, TRPE bins,
//! decoder query windows and, when the future is known, targets.

use std::collections::HashMap;

use super::config::ModelConfig;
use super::trpe::{group_centroid_trajectories, token_pair_bins, TrpeBins};
use crate::autodiff::Tensor;
use crate::dct::DctPlan;
use crate::error::{Error, Result};
use crate::segment::SegmentRecord;
use crate::types::{Point3, PoseSequence, Scene, VehicleTrack};

#[derive(Clone, Debug, PartialEq)]
pub struct PreparedSample {
    /// `scene_id@frame_start`.
    pub key: String,
    /// Category of the source segment, independent of whether vehicles are used.
    pub category: (usize, usize),
    pub pedestrian_ids: Vec<u64>,
    /// Vehicles the model actually sees.
    pub vehicle_ids: Vec<u64>,
    /// `(P * B_P * L, F_p)`, tokens ordered pedestrian, body part, frequency.
    pub ped_features: Tensor,
    /// `(K * B_V * L, F_v)`, or `None` without vehicles.
    pub veh_features: Option<Tensor>,
    /// TRPE bins between pedestrian groups, `(P B_P) x (P B_P)` row-major.
    pub ped_group_bins: Vec<usize>,
    /// TRPE bins from pedestrian groups to vehicle groups, `(P B_P) x (K B_V)`.
    pub veh_group_bins: Vec<usize>,
    /// `(P * n_q, kernel * J * 3)` strided windows over the last observed displacements.
    pub queries: Tensor,
    /// Last observed pose of every pedestrian.
    pub last_poses: Vec<Vec<Point3>>,
    /// Ground-truth future displacements `(P, N, J * 3)` in meters.
    pub target: Option<Tensor>,
    /// Ground-truth future poses `P x N x J`.
    pub future: Option<Vec<Vec<Vec<Point3>>>>,
}

impl PreparedSample {
    pub fn n_ped(&self) -> usize {
        self.pedestrian_ids.len()
    }

    pub fn n_veh(&self) -> usize {
        self.vehicle_ids.len()
    }

    /// Builds inputs from sequences whose frame 0 is the first observed
    /// frame. Sequences with at least `t_obs + 1 + n_pred` frames also get
    /// targets.
    pub fn new(
        cfg: &ModelConfig,
        key: String,
        category: (usize, usize),
        pedestrians: &[PoseSequence],
        vehicles: &[VehicleTrack],
    ) -> Result<Self> {
        let obs = cfg.observed_frames();
        if pedestrians.is_empty() {
            return Err(Error::Invalid(format!("{key}: sample without pedestrians")));
        }
        if pedestrians.len() > cfg.max_pedestrians {
            return Err(Error::Invalid(format!(
                "{key}: {} pedestrians exceed the model's {}",
                pedestrians.len(),
                cfg.max_pedestrians
            )));
        }
        let vehicles: &[VehicleTrack] = if cfg.use_vehicles { vehicles } else { &[] };
        if vehicles.len() > cfg.max_vehicles {
            return Err(Error::Invalid(format!(
                "{key}: {} vehicles exceed the model's {}",
                vehicles.len(),
                cfg.max_vehicles
            )));
        }
        let joints = cfg.joint_count();
        for p in pedestrians {
            if p.frame_count() < obs {
                return Err(Error::Length(format!(
                    "{key}: pedestrian {} has {} frames, model observes {obs}",
                    p.agent_id,
                    p.frame_count()
                )));
            }
            if p.joint_count() != joints {
                return Err(Error::Invalid(format!(
                    "{key}: pedestrian {} has {} joints, model expects {joints}",
                    p.agent_id,
                    p.joint_count()
                )));
            }
        }
        if let Some(v) = vehicles.iter().find(|v| v.frame_count() < obs) {
            return Err(Error::Length(format!(
                "{key}: vehicle {} has {} frames, model observes {obs}",
                v.vehicle_id,
                v.frame_count()
            )));
        }

        let plan = DctPlan::new(cfg.t_obs, cfg.dct_keep)?;
        let scale = cfg.displacement_scale;
        let partition = cfg.body_partition.groups();
        let ped_width = cfg.body_partition.max_features();
        let observed_peds: Vec<PoseSequence> = pedestrians
            .iter()
            .map(|p| p.window(0..obs))
            .collect::<Result<_>>()?;
        let ped_disp: Vec<_> = observed_peds
            .iter()
            .map(PoseSequence::to_displacements)
            .collect::<Result<_>>()?;
        let ped_streams: Vec<Vec<Vec<f64>>> = ped_disp
            .iter()
            .flat_map(|d| d.group_streams(partition))
            .collect();
        let ped_features = token_features(&plan, &ped_streams, ped_width, scale)?;

        let grouping = cfg.corner_grouping();
        let observed_veh: Vec<VehicleTrack> = vehicles
            .iter()
            .map(|v| v.window(0..obs))
            .collect::<Result<_>>()?;
        let veh_features = if observed_veh.is_empty() {
            None
        } else {
            let streams: Vec<Vec<Vec<f64>>> = observed_veh
                .iter()
                .map(VehicleTrack::to_displacements)
                .collect::<Result<Vec<_>>>()?
                .iter()
                .flat_map(|d| d.group_streams(grouping.groups()))
                .collect();
            Some(token_features(&plan, &streams, grouping.features(), scale)?)
        };

        let bins = TrpeBins::log_spaced(cfg.trpe_bins, cfg.trpe_first_edge_m);
        let ped_traj: Vec<Vec<Point3>> = observed_peds
            .iter()
            .flat_map(|p| group_centroid_trajectories(p.track().frames(), partition))
            .collect();
        let veh_traj: Vec<Vec<Point3>> = observed_veh
            .iter()
            .flat_map(|v| group_centroid_trajectories(v.track().frames(), grouping.groups()))
            .collect();
        let ped_group_bins = token_pair_bins(&ped_traj, &ped_traj, 1, &bins);
        let veh_group_bins = token_pair_bins(&ped_traj, &veh_traj, 1, &bins);

        let n_q = cfg.queries_per_pedestrian();
        let q_width = cfg.query_kernel * joints * 3;
        let mut queries = Vec::with_capacity(pedestrians.len() * n_q * q_width);
        for d in &ped_disp {
            let first = cfg.t_obs - cfg.n_pred;
            for q in 0..n_q {
                for t in 0..cfg.query_kernel {
                    let step = d.step(first + q * cfg.query_stride + t);
                    queries.extend(step.iter().flatten().map(|v| v * scale));
                }
            }
        }
        let queries = Tensor::new(vec![pedestrians.len() * n_q, q_width], queries)?;
        let last_poses: Vec<Vec<Point3>> = pedestrians.iter().map(|p| p.frame(obs - 1).to_vec()).collect();

        let horizon = obs + cfg.n_pred;
        let (target, future) = if pedestrians.iter().all(|p| p.frame_count() >= horizon) {
            let mut disp = Vec::with_capacity(pedestrians.len() * cfg.n_pred * joints * 3);
            let mut future = Vec::with_capacity(pedestrians.len());
            for p in pedestrians {
                let mut frames = Vec::with_capacity(cfg.n_pred);
                for t in obs..horizon {
                    let (prev, cur) = (p.frame(t - 1), p.frame(t));
                    for (a, b) in cur.iter().zip(prev) {
                        disp.extend((0..3).map(|c| a[c] - b[c]));
                    }
                    frames.push(cur.to_vec());
                }
                future.push(frames);
            }
            (
                Some(Tensor::new(vec![pedestrians.len(), cfg.n_pred, joints * 3], disp)?),
                Some(future),
            )
        } else {
            (None, None)
        };

        Ok(Self {
            key,
            category,
            pedestrian_ids: pedestrians.iter().map(|p| p.agent_id).collect(),
            vehicle_ids: vehicles.iter().map(|v| v.vehicle_id).collect(),
            ped_features,
            veh_features,
            ped_group_bins,
            veh_group_bins,
            queries,
            last_poses,
            target,
            future,
        })
    }

    /// Inputs and targets from the last `t_obs + 1 + n_pred` frames of a
    /// segment window.
    pub fn from_segment(cfg: &ModelConfig, scene: &Scene, record: &SegmentRecord) -> Result<Self> {
        let need = cfg.observed_frames() + cfg.n_pred;
        let span = record.frame_end.saturating_sub(record.frame_start);
        if span < need {
            return Err(Error::Length(format!(
                "segment {}@{} spans {span} frames, model needs {need}",
                record.scene_id, record.frame_start
            )));
        }
        let range = record.frame_end - need..record.frame_end;
        let pedestrians = record
            .pedestrian_ids
            .iter()
            .map(|id| {
                scene
                    .pedestrian(*id)
                    .ok_or_else(|| Error::Invalid(format!("scene {} has no pedestrian {id}", scene.scene_id)))?
                    .window(range.clone())
            })
            .collect::<Result<Vec<_>>>()?;
        let vehicles = record
            .vehicle_ids
            .iter()
            .map(|id| {
                scene
                    .vehicle(*id)
                    .ok_or_else(|| Error::Invalid(format!("scene {} has no vehicle {id}", scene.scene_id)))?
                    .window(range.clone())
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(
            cfg,
            format!("{}@{}", record.scene_id, record.frame_start),
            record.category,
            &pedestrians,
            &vehicles,
        )
    }
}

/// DCT-truncated token features: one token per (stream, frequency), zero-padded to `width`.
fn token_features(plan: &DctPlan, streams: &[Vec<Vec<f64>>], width: usize, scale: f64) -> Result<Tensor> {
    let mut data = Vec::with_capacity(streams.len() * plan.keep() * width);
    for stream in streams {
        for row in plan.forward_channels(stream)? {
            data.extend(row.iter().map(|v| v * scale));
            data.extend(std::iter::repeat_n(0.0, width - row.len()));
        }
    }
    Tensor::new(vec![streams.len() * plan.keep(), width], data)
}

/// Prepares every record whose scene is present, in record order.
pub fn prepare_samples(cfg: &ModelConfig, scenes: &[Scene], records: &[SegmentRecord]) -> Result<Vec<PreparedSample>> {
    use rayon::prelude::*;
    let by_id: HashMap<&str, &Scene> = scenes.iter().map(|s| (s.scene_id.as_str(), s)).collect();
    records
        .par_iter()
        .map(|r| {
            let scene = by_id
                .get(r.scene_id.as_str())
                .ok_or_else(|| Error::Invalid(format!("segment refers to unknown scene {}", r.scene_id)))?;
            PreparedSample::from_segment(cfg, scene, r)
        })
        .collect()
}
