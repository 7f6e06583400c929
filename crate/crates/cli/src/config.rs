//! Run configuration: flat `key = value` text with `#` comments. Every key
//! has a default; unknown keys are rejected.

use std::collections::BTreeSet;
use std::path::PathBuf;

use flowseg_core::metrics::EmptyPolicy;
use flowseg_core::model::{FlowType, ModelConfig};
use flowseg_core::{Error, Result};

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub dataset_dir: PathBuf,
    pub out_dir: PathBuf,
    pub latent_dim: usize,
    pub flow_type: FlowType,
    pub flow_steps: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub folds: usize,
    pub eval_samples: usize,
    pub empty_policy: EmptyPolicy,
    pub seed: u64,
    pub hidden_width: usize,
    pub context_width: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset_dir: "dataset".into(),
            out_dir: "out".into(),
            latent_dim: 6,
            flow_type: FlowType::None,
            flow_steps: 0,
            learning_rate: 1e-4,
            batch_size: 16,
            patience: 20,
            max_epochs: 150,
            folds: 10,
            eval_samples: 16,
            empty_policy: EmptyPolicy::IncludeAsOne,
            seed: 0,
            hidden_width: 48,
            context_width: 16,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("key `{key}`: cannot parse `{value}`")))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        let mut seen = BTreeSet::new();
        for (line_no, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::InvalidConfig(format!(
                    "line {}: expected `key = value`, got `{raw}`",
                    line_no + 1
                )));
            };
            let key = key.trim();
            let value = value.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::InvalidConfig(format!("duplicate key `{key}`")));
            }
            match key {
                "dataset_dir" => cfg.dataset_dir = value.into(),
                "out_dir" => cfg.out_dir = value.into(),
                "latent_dim" => cfg.latent_dim = parse_num(key, value)?,
                "flow_type" => cfg.flow_type = value.parse()?,
                "flow_steps" => cfg.flow_steps = parse_num(key, value)?,
                "learning_rate" => cfg.learning_rate = parse_num(key, value)?,
                "batch_size" => cfg.batch_size = parse_num(key, value)?,
                "patience" => cfg.patience = parse_num(key, value)?,
                "max_epochs" => cfg.max_epochs = parse_num(key, value)?,
                "folds" => cfg.folds = parse_num(key, value)?,
                "eval_samples" => cfg.eval_samples = parse_num(key, value)?,
                "empty_policy" => cfg.empty_policy = value.parse()?,
                "seed" => cfg.seed = parse_num(key, value)?,
                "hidden_width" => cfg.hidden_width = parse_num(key, value)?,
                "context_width" => cfg.context_width = parse_num(key, value)?,
                other => {
                    return Err(Error::InvalidConfig(format!("unknown key `{other}`")));
                }
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        RunConfig::parse(&text)
    }

    /// Model configuration for a dataset of the given side length; validates
    /// the combination.
    pub fn model_config(&self, side: usize) -> Result<ModelConfig> {
        let cfg = ModelConfig {
            latent_dim: self.latent_dim,
            flow_type: self.flow_type,
            flow_steps: self.flow_steps,
            side,
            hidden_width: self.hidden_width,
            context_width: self.context_width,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            patience: self.patience,
            max_epochs: self.max_epochs,
            folds: self.folds,
            eval_samples: self.eval_samples,
            seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
