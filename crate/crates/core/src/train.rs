//! Mini-batch Adam training with per-sample tapes.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::io::write_string_atomic;
use crate::model::{save_checkpoint, ForecastModel, PreparedSample};
use crate::synth::derive_seed;

pub const LOSS_FILE: &str = "loss.csv";
pub const BEST_CHECKPOINT: &str = "best";
pub const LAST_CHECKPOINT: &str = "last";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global L2 norm limit on each batch gradient; `0` disables clipping.
    pub clip_norm: f64,
    pub seed: u64,
    /// Also keep `epoch-NNNN` checkpoints every this many epochs; `0` for none.
    pub checkpoint_every: usize,
    pub shuffle: bool,
    /// Apply dropout during training.
    pub dropout: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            lr: 1e-3,
            batch_size: 32,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 5.0,
            seed: 0,
            checkpoint_every: 0,
            shuffle: true,
            dropout: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Invalid("batch size must be positive".into()));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::Invalid(format!("learning rate {} must be finite and non-negative", self.lr)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Invalid("Adam betas must lie in [0, 1)".into()));
        }
        if !(self.eps > 0.0) || !(self.clip_norm >= 0.0) {
            return Err(Error::Invalid("eps must be positive and clip_norm non-negative".into()));
        }
        Ok(())
    }
}

/// First and second moment estimates, one buffer per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|t| vec![0.0; t.len()]).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step(params: &mut [Tensor], grads: &[Vec<f64>], state: &mut AdamState, cfg: &TrainConfig) {
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        for (((w, &g), m), v) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *w -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
}

/// Rescales `grads` so their joint L2 norm is at most `max_norm`. Returns
/// the norm before clipping.
pub fn clip_global_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let norm = grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().flatten().for_each(|g| *g *= s);
    }
    norm
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean per-sample loss over the epoch, with dropout active.
    pub train_loss: f64,
    /// Inference-mode loss on the validation samples.
    pub val_loss: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub history: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_loss: f64,
}

/// Mean inference-mode loss.
pub fn mean_loss(model: &ForecastModel, samples: &[PreparedSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset("no samples to evaluate".into()));
    }
    let losses = samples.par_iter().map(|s| model.loss(s)).collect::<Result<Vec<f64>>>()?;
    Ok(losses.iter().sum::<f64>() / samples.len() as f64)
}

pub fn loss_csv(history: &[EpochLog]) -> String {
    let mut out = String::from("epoch,train_loss,val_loss\n");
    for e in history {
        let val = e.val_loss.map(|v| format!("{v:.9}")).unwrap_or_default();
        let _ = writeln!(out, "{},{:.9},{}", e.epoch, e.train_loss, val);
    }
    out
}

fn batch_gradients(
    model: &ForecastModel,
    batch: &[&PreparedSample],
    cfg: &TrainConfig,
    step_seed: u64,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let per_sample = batch
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            if cfg.dropout {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(step_seed, i as u64));
                model.loss_and_gradients(s, Some(&mut rng))
            } else {
                model.loss_and_gradients(s, None)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let mut acc: Vec<Vec<f64>> = model.params().tensors().iter().map(|t| vec![0.0; t.len()]).collect();
    let mut total = 0.0;
    for (loss, grads) in per_sample {
        total += loss;
        for (a, g) in acc.iter_mut().zip(grads) {
            if let Some(g) = g {
                a.iter_mut().zip(g).for_each(|(a, g)| *a += g);
            }
        }
    }
    let n = batch.len() as f64;
    acc.iter_mut().flatten().for_each(|g| *g /= n);
    Ok((total, acc))
}

/// Trains `model` in place. The returned model state is the last epoch's;
/// with `out_dir` set, the loss curve and `best`/`last` checkpoints are
/// written there. `best` tracks validation loss, or training loss without a
/// validation set.
pub fn fit(
    model: &mut ForecastModel,
    train: &[PreparedSample],
    val: &[PreparedSample],
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyDataset("no training samples".into()));
    }
    if let Some(s) = train.iter().find(|s| s.target.is_none()) {
        return Err(Error::Invalid(format!("{}: training sample without a future", s.key)));
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut state = AdamState::new(model.params().tensors());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best = (0, f64::INFINITY);

    for epoch in 1..=cfg.epochs {
        let epoch_seed = derive_seed(cfg.seed, epoch as u64);
        if cfg.shuffle {
            order.sort_unstable();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));
        }
        let mut total = 0.0;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&PreparedSample> = chunk.iter().map(|&i| &train[i]).collect();
            let (loss, mut grads) = batch_gradients(model, &batch, cfg, derive_seed(epoch_seed, step as u64))?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("training loss at epoch {epoch}, step {step}")));
            }
            total += loss;
            clip_global_norm(&mut grads, cfg.clip_norm);
            adam_step(model.params_mut().tensors_mut(), &grads, &mut state, cfg);
            if let Some(name) = model.params().first_non_finite() {
                return Err(Error::NonFinite(format!("parameter {name} at epoch {epoch}, step {step}")));
            }
        }
        let val_loss = if val.is_empty() { None } else { Some(mean_loss(model, val)?) };
        let log = EpochLog {
            epoch,
            train_loss: total / train.len() as f64,
            val_loss,
        };
        let score = log.val_loss.unwrap_or(log.train_loss);
        if let Some(dir) = out_dir {
            if score < best.1 {
                save_checkpoint(model, &dir.join(BEST_CHECKPOINT))?;
            }
            if cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 {
                save_checkpoint(model, &dir.join(format!("epoch-{epoch:04}")))?;
            }
        }
        if score < best.1 {
            best = (epoch, score);
        }
        on_epoch(&log);
        history.push(log);
        if let Some(dir) = out_dir {
            write_string_atomic(&dir.join(LOSS_FILE), &loss_csv(&history))?;
        }
    }
    if let Some(dir) = out_dir {
        save_checkpoint(model, &dir.join(LAST_CHECKPOINT))?;
    }
    Ok(TrainOutcome {
        history,
        best_epoch: best.0,
        best_loss: best.1,
    })
}
