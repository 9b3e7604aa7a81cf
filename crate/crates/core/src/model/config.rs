use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{BodyPartition, CornerGrouping, CornerScheme};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Token width `D`.
    pub feature_dim: usize,
    pub heads: usize,
    pub encoder_blocks: usize,
    /// Pedestrian-vehicle cross-attention blocks.
    pub pvi_blocks: usize,
    pub decoder_blocks: usize,
    /// Hidden width of feed-forward layers as a multiple of `D`.
    pub ffn_mult: usize,
    /// DCT coefficients kept per observed trajectory (`L`).
    pub dct_keep: usize,
    pub body_partition: BodyPartition,
    pub corner_groups: CornerScheme,
    pub trpe_bins: usize,
    /// Upper edge of the first distance bin; later edges double.
    pub trpe_first_edge_m: f64,
    pub dropout: f64,
    /// Observed displacement steps; the model sees `t_obs + 1` frames.
    pub t_obs: usize,
    pub n_pred: usize,
    pub query_kernel: usize,
    pub query_stride: usize,
    pub max_pedestrians: usize,
    pub max_vehicles: usize,
    /// `false` trains the pedestrian-only baseline.
    pub use_vehicles: bool,
    /// Displacements are multiplied by this before entering the network and
    /// predictions divided by it.
    pub displacement_scale: f64,
    pub layer_norm_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            feature_dim: 32,
            heads: 2,
            encoder_blocks: 2,
            pvi_blocks: 1,
            decoder_blocks: 2,
            ffn_mult: 2,
            dct_keep: 4,
            body_partition: BodyPartition::default_15(),
            corner_groups: CornerScheme::Edges,
            trpe_bins: 8,
            trpe_first_edge_m: 0.5,
            dropout: 0.2,
            t_obs: 10,
            n_pred: 5,
            query_kernel: 3,
            query_stride: 2,
            max_pedestrians: 3,
            max_vehicles: 4,
            use_vehicles: true,
            displacement_scale: 10.0,
            layer_norm_eps: 1e-5,
        }
    }
}

impl ModelConfig {
    /// Observation and prediction lengths of the full-size setting
    /// (2 s observed, 1 s predicted at 25 Hz).
    pub fn full_scale() -> Self {
        Self {
            t_obs: 50,
            n_pred: 25,
            dct_keep: 10,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("feature_dim", self.feature_dim),
            ("heads", self.heads),
            ("ffn_mult", self.ffn_mult),
            ("dct_keep", self.dct_keep),
            ("trpe_bins", self.trpe_bins),
            ("t_obs", self.t_obs),
            ("n_pred", self.n_pred),
            ("query_kernel", self.query_kernel),
            ("query_stride", self.query_stride),
            ("max_pedestrians", self.max_pedestrians),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Invalid(format!("model config: {name} must be positive")));
        }
        if self.feature_dim % self.heads != 0 {
            return Err(Error::Invalid(format!(
                "model config: feature_dim {} not divisible by {} heads",
                self.feature_dim, self.heads
            )));
        }
        if self.dct_keep > self.t_obs {
            return Err(Error::Invalid("model config: dct_keep exceeds t_obs".into()));
        }
        if self.n_pred > self.t_obs {
            return Err(Error::Invalid(
                "model config: query window (n_pred) longer than the observation".into(),
            ));
        }
        if self.query_kernel > self.n_pred {
            return Err(Error::Invalid("model config: query_kernel exceeds n_pred".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Invalid("model config: dropout must lie in [0, 1)".into()));
        }
        if !(self.trpe_first_edge_m > 0.0 && self.displacement_scale > 0.0 && self.layer_norm_eps > 0.0) {
            return Err(Error::Invalid("model config: scales and eps must be positive".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.feature_dim / self.heads
    }

    pub fn joint_count(&self) -> usize {
        self.body_partition.joint_count()
    }

    pub fn corner_grouping(&self) -> CornerGrouping {
        CornerGrouping::new(self.corner_groups)
    }

    /// Query tokens per pedestrian after the strided convolution.
    pub fn queries_per_pedestrian(&self) -> usize {
        (self.n_pred - self.query_kernel) / self.query_stride + 1
    }

    /// Observed frames the model consumes.
    pub fn observed_frames(&self) -> usize {
        self.t_obs + 1
    }

    pub fn ffn_dim(&self) -> usize {
        self.feature_dim * self.ffn_mult
    }

    pub fn agent_slots(&self) -> usize {
        self.max_pedestrians + self.max_vehicles
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = ModelConfig::default();
        c.validate().unwrap();
        assert_eq!(c.head_dim(), 16);
        assert_eq!(c.queries_per_pedestrian(), 2);
        ModelConfig::full_scale().validate().unwrap();
        assert_eq!(ModelConfig::full_scale().queries_per_pedestrian(), 12);
    }

    #[test]
    fn rejects_bad_values() {
        let bad = ModelConfig {
            feature_dim: 30,
            heads: 4,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = ModelConfig {
            dropout: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = ModelConfig {
            heads: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn json_round_trip_with_defaults() {
        let c = ModelConfig {
            corner_groups: CornerScheme::Faces,
            ..Default::default()
        };
        let s = serde_json::to_string(&c).unwrap();
        assert!(s.contains("\"corner_groups\":6"));
        assert_eq!(serde_json::from_str::<ModelConfig>(&s).unwrap(), c);
        let partial: ModelConfig = serde_json::from_str("{\"feature_dim\": 16}").unwrap();
        assert_eq!(partial.heads, 2);
    }
}
