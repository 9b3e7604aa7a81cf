//! Finite-difference check of the whole forecaster on a small configuration.

use super::{ForecastModel, ModelConfig, PreparedSample};
use crate::autodiff::GradCheckReport;
use crate::error::Result;
use crate::synth::{derive_seed, gen_interaction_scene, Behavior, BehaviorMix, ScenarioSpec};
use crate::types::CornerScheme;

/// Every component present, small enough for a full central-difference sweep.
pub fn gradcheck_config() -> ModelConfig {
    ModelConfig {
        feature_dim: 8,
        heads: 2,
        encoder_blocks: 1,
        pvi_blocks: 1,
        decoder_blocks: 1,
        dct_keep: 2,
        t_obs: 4,
        n_pred: 3,
        corner_groups: CornerScheme::FrontRear,
        dropout: 0.0,
        ..Default::default()
    }
}

/// Checks every parameter gradient of a freshly seeded model (with a
/// random output head) on a synthetic two-pedestrian, two-vehicle sample.
pub fn check_model_gradients(seed: u64, step: f64, tol: f64) -> Result<(GradCheckReport, String)> {
    let cfg = gradcheck_config();
    let need = cfg.observed_frames() + cfg.n_pred;
    let samples = (0..1)
        .map(|i| {
            let scene = gen_interaction_scene(&ScenarioSpec {
                seed: derive_seed(seed, i),
                n_pedestrians: 2,
                n_vehicles: 2,
                duration_frames: need + 2,
                decision_frame: Some(need - 3),
                behavior_mix: BehaviorMix::only(Behavior::Yield),
                ..Default::default()
            })?;
            let peds = scene
                .pedestrians
                .iter()
                .map(|p| p.window(2..2 + need))
                .collect::<Result<Vec<_>>>()?;
            let vehs = scene
                .vehicles
                .iter()
                .map(|v| v.window(2..2 + need))
                .collect::<Result<Vec<_>>>()?;
            PreparedSample::new(&cfg, format!("check-{i}"), (2, 2), &peds, &vehs)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut model = ForecastModel::new(cfg, seed)?;
    model.randomize_output_head(derive_seed(seed, 99));
    model.gradient_check(&samples, step, tol)
}
