//! The probabilistic segmentation model: a prior network over the latent
//! code conditioned on the image, a posterior network conditioned on image
//! and annotation that also emits a context vector driving per-step flow
//! parameters, and a decoder mapping (image features, latent) to per-pixel
//! logits. Trained on the flow-corrected ELBO.

mod checkpoint;
mod eval;
mod infer;
mod nets;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use eval::{evaluate_folds, evaluate_model, EvalReport, FoldMetrics, MetricSummary};
pub use infer::{mean_std_maps, predict_samples, prior_variance_score};
pub use nets::{Decoder, Dense, ElboParts, KlMode, Model, PosteriorNet, PriorNet};
pub use train::{train, train_fold, EpochStats, FoldResult, TrainOutcome};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlowType {
    None,
    Planar,
    Radial,
}

impl std::str::FromStr for FlowType {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(FlowType::None),
            "planar" => Ok(FlowType::Planar),
            "radial" => Ok(FlowType::Radial),
            other => Err(Error::InvalidConfig(format!(
                "flow_type must be none|planar|radial, got `{other}`"
            ))),
        }
    }
}

impl std::fmt::Display for FlowType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FlowType::None => "none",
            FlowType::Planar => "planar",
            FlowType::Radial => "radial",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub latent_dim: usize,
    pub flow_type: FlowType,
    pub flow_steps: usize,
    /// Image side length (height = width).
    pub side: usize,
    pub hidden_width: usize,
    pub context_width: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Early-stopping patience in epochs; 0 disables early stopping.
    pub patience: usize,
    pub max_epochs: usize,
    pub folds: usize,
    pub eval_samples: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            latent_dim: 6,
            flow_type: FlowType::None,
            flow_steps: 0,
            side: 16,
            hidden_width: 48,
            context_width: 16,
            learning_rate: 1e-4,
            batch_size: 16,
            patience: 20,
            max_epochs: 150,
            folds: 10,
            eval_samples: 16,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        match (self.flow_type, self.flow_steps) {
            (FlowType::None, 0) => {}
            (FlowType::None, k) => {
                return Err(Error::InvalidConfig(format!(
                    "flow_type none requires flow_steps 0, got {k}"
                )))
            }
            (_, 0) => {
                return Err(Error::InvalidConfig(
                    "flow_steps must be positive when a flow type is set".into(),
                ))
            }
            _ => {}
        }
        if self.latent_dim == 0 {
            return Err(Error::InvalidConfig("latent_dim must be at least 1".into()));
        }
        if self.eval_samples < 2 {
            return Err(Error::InvalidConfig(
                "eval_samples must be at least 2 (the GED needs pairs)".into(),
            ));
        }
        if self.side < 2 || self.hidden_width == 0 || self.context_width == 0 {
            return Err(Error::InvalidConfig("network dimensions must be positive".into()));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::InvalidConfig("batch_size and max_epochs must be positive".into()));
        }
        if self.folds < 2 {
            return Err(Error::InvalidConfig("folds must be at least 2".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("learning_rate must be positive".into()));
        }
        Ok(())
    }

    pub fn pixels(&self) -> usize {
        self.side * self.side
    }
}
