//! The forecaster: pedestrian and vehicle token encoders, TRPE-biased
//! cross-attention fusion, a query decoder and an IDCT output head.

mod checkpoint;
mod config;
mod forecaster;
mod layers;
mod params;
mod sample;
mod selfcheck;
mod trpe;

pub use checkpoint::{checkpoint_paths, load_checkpoint, read_manifest, save_checkpoint, CheckpointManifest, ParamEntry};
pub use config::ModelConfig;
pub use forecaster::{integrate, sinusoidal_table, ForecastModel, ForwardTrace};
pub use layers::{Attention, AttentionOut, DropRng, Linear};
pub use params::ParamStore;
pub use sample::{prepare_samples, PreparedSample};
pub use selfcheck::{check_model_gradients, gradcheck_config};
pub use trpe::{group_centroid_trajectories, mean_trajectory_distance, token_pair_bins, TrpeBins};

#[cfg(test)]
mod tests;
