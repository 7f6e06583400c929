use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::synthdata::{split_folds, Dataset, Fold, FoldSplit};

use super::nets::{KlMode, Model};
use super::ModelConfig;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

struct Adam {
    lr: f64,
    step: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl Adam {
    fn new(params: &[(String, Tensor)], lr: f64) -> Adam {
        Adam {
            lr,
            step: 0,
            first_moment: params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect(),
            second_moment: params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect(),
        }
    }

    // Applies one update from the accumulated gradients, then clears them.
    fn step(&mut self, params: &[(String, Tensor)]) -> Result<()> {
        self.step += 1;
        let bias1 = 1.0 - ADAM_BETA1.powi(self.step as i32);
        let bias2 = 1.0 - ADAM_BETA2.powi(self.step as i32);
        for (idx, (_, tensor)) in params.iter().enumerate() {
            let Some(grad) = tensor.grad() else {
                continue;
            };
            let mut data = tensor.to_vec();
            let m = &mut self.first_moment[idx];
            let v = &mut self.second_moment[idx];
            for i in 0..data.len() {
                m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * grad[i];
                v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * grad[i] * grad[i];
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                data[i] -= self.lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
            tensor.set_data(data)?;
            tensor.zero_grad();
        }
        Ok(())
    }
}

/// Per-epoch training record; the loss parts are averages over the epoch's
/// training examples.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub recon: f64,
    pub kl: f64,
    pub log_det: f64,
}

/// Trained parameters (restored to the best validation epoch) plus the
/// training history of one fold.
pub struct FoldResult {
    pub fold: usize,
    pub model: Model,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

/// All folds plus the split that produced them.
pub struct TrainOutcome {
    pub split: FoldSplit,
    pub folds: Vec<FoldResult>,
}

fn derive_seed(base: u64, stream: u64, salt: u64) -> u64 {
    // splitmix64 over the combined key; decorrelates the per-fold and
    // per-epoch streams from the base seed.
    let mut z = base
        .wrapping_add(stream.wrapping_mul(0x9E3779B97F4A7C15))
        .wrapping_add(salt.wrapping_mul(0xBF58476D1CE4E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

fn kl_mode_for(cfg: &ModelConfig) -> KlMode {
    if cfg.flow_steps == 0 {
        KlMode::ClosedForm
    } else {
        KlMode::MonteCarlo
    }
}

fn standard_noise(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| StandardNormal.sample(rng)).collect()
}

fn check_finite(
    parts: &super::nets::ElboParts,
    fold: usize,
    epoch: usize,
) -> Result<()> {
    for (name, value) in [
        ("recon", parts.recon.item()),
        ("kl", parts.kl.item()),
        ("logdet", parts.log_det.item()),
        ("loss", parts.loss.item()),
    ] {
        if !value.is_finite() {
            return Err(Error::TrainingDiverged {
                fold,
                epoch,
                part: name.into(),
            });
        }
    }
    Ok(())
}

// Mean validation ELBO: every annotator of every validation example. The
// noise stream is fixed per fold (not per epoch) so validation losses are
// comparable across epochs and a frozen model scores a constant loss.
fn validation_loss(
    model: &Model,
    dataset: &Dataset,
    indices: &[usize],
    cfg: &ModelConfig,
    fold: usize,
    epoch: usize,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, fold as u64, 0x5A17));
    let kl_mode = kl_mode_for(cfg);
    let mut total = 0.0;
    let mut count = 0usize;
    for &idx in indices {
        let x = dataset.image_f64(idx);
        for mask in &dataset.examples[idx].masks {
            let s: Vec<f64> = mask.data.iter().map(|&v| v as f64).collect();
            let noise = standard_noise(&mut rng, cfg.latent_dim);
            let parts = model.elbo_loss(&x, &s, &noise, kl_mode)?;
            check_finite(&parts, fold, epoch)?;
            total += parts.loss.item();
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Train one fold. Each step draws one annotator mask uniformly per image,
/// optimizes the single-sample ELBO with Adam, and early-stops on the
/// validation loss (patience 0 disables stopping). The returned model holds
/// the best-validation parameters.
pub fn train_fold(
    dataset: &Dataset,
    cfg: &ModelConfig,
    fold: &Fold,
    fold_idx: usize,
) -> Result<FoldResult> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, fold_idx as u64, 0));
    let model = Model::init(cfg, &mut rng)?;
    let params = model.named_parameters();
    let mut adam = Adam::new(&params, cfg.learning_rate);
    let kl_mode = kl_mode_for(cfg);

    let mut history = Vec::with_capacity(cfg.max_epochs);
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut best_snapshot = model.snapshot();
    let mut since_improved = 0usize;

    let mut order: Vec<usize> = fold.train.clone();
    for epoch in 1..=cfg.max_epochs {
        // in-place Fisher-Yates, so the visit order is seed-deterministic
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let mut sums = (0.0, 0.0, 0.0, 0.0); // loss, recon, kl, logdet
        let mut seen = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let mut losses = Vec::with_capacity(batch.len());
            for &idx in batch {
                let example = &dataset.examples[idx];
                let annotator = rng.gen_range(0..example.masks.len());
                let s: Vec<f64> = example.masks[annotator].data.iter().map(|&v| v as f64).collect();
                let x = dataset.image_f64(idx);
                let noise = standard_noise(&mut rng, cfg.latent_dim);
                let parts = model.elbo_loss(&x, &s, &noise, kl_mode)?;
                check_finite(&parts, fold_idx, epoch)?;
                sums.0 += parts.loss.item();
                sums.1 += parts.recon.item();
                sums.2 += parts.kl.item();
                sums.3 += parts.log_det.item();
                seen += 1;
                losses.push(parts.loss);
            }
            let refs: Vec<&Tensor> = losses.iter().collect();
            let batch_loss = Tensor::concat(&refs, 0)?.mean()?;
            batch_loss.backward()?;
            adam.step(&params)?;
        }

        let val_loss = validation_loss(&model, dataset, &fold.val, cfg, fold_idx, epoch)?;
        history.push(EpochStats {
            epoch,
            train_loss: sums.0 / seen as f64,
            val_loss,
            recon: sums.1 / seen as f64,
            kl: sums.2 / seen as f64,
            log_det: sums.3 / seen as f64,
        });

        if val_loss < best_val {
            best_val = val_loss;
            best_epoch = epoch;
            best_snapshot = model.snapshot();
            since_improved = 0;
        } else {
            since_improved += 1;
            if cfg.patience > 0 && since_improved >= cfg.patience {
                break;
            }
        }
    }

    model.restore(&best_snapshot)?;
    Ok(FoldResult {
        fold: fold_idx,
        model,
        history,
        best_epoch,
        best_val_loss: best_val,
    })
}

/// Cross-validated training: split the dataset, train every fold.
pub fn train(dataset: &Dataset, cfg: &ModelConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidParameter("dataset is empty".into()));
    }
    let split = split_folds(dataset.len(), cfg.folds, cfg.seed)?;
    let mut folds = Vec::with_capacity(split.folds.len());
    for (fold_idx, fold) in split.folds.iter().enumerate() {
        folds.push(train_fold(dataset, cfg, fold, fold_idx)?);
    }
    Ok(TrainOutcome { split, folds })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::FlowType;
    use crate::synthdata::{generate_dataset, DatasetSpec};

    fn small_cfg() -> ModelConfig {
        ModelConfig {
            side: 16,
            hidden_width: 16,
            context_width: 8,
            latent_dim: 3,
            learning_rate: 1e-3,
            batch_size: 8,
            max_epochs: 3,
            patience: 0,
            folds: 2,
            seed: 7,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn same_seed_gives_identical_histories() {
        let data = generate_dataset(&DatasetSpec::lidc_like(24, 5)).unwrap();
        let cfg = small_cfg();
        let a = train(&data, &cfg).unwrap();
        let b = train(&data, &cfg).unwrap();
        for (fa, fb) in a.folds.iter().zip(&b.folds) {
            assert_eq!(fa.history, fb.history);
            assert_eq!(fa.model.snapshot(), fb.model.snapshot());
        }
        assert_eq!(a.split, b.split);
    }

    #[test]
    fn overfits_single_example() {
        // One training example, vanilla model, patience disabled: the
        // reconstruction loss must collapse well below chance level.
        let data = generate_dataset(&DatasetSpec {
            ambiguous_fraction: 0.0,
            boundary_jitter: 0.0,
            ..DatasetSpec::lidc_like(12, 9)
        })
        .unwrap();
        let cfg = ModelConfig {
            learning_rate: 3e-3,
            max_epochs: 2000,
            patience: 0,
            batch_size: 1,
            hidden_width: 24,
            context_width: 8,
            latent_dim: 3,
            folds: 2,
            seed: 3,
            ..ModelConfig::default()
        };
        let fold = Fold {
            train: vec![0],
            val: vec![0],
        };
        let result = train_fold(&data, &cfg, &fold, 0).unwrap();
        let last = result.history.last().unwrap();
        let chance = 0.05 * 256.0 * std::f64::consts::LN_2;
        assert!(
            last.recon < chance,
            "recon {} should be below {chance}",
            last.recon
        );
    }

    #[test]
    fn patience_one_stops_after_two_epochs() {
        // lr = 0 freezes the model, so the validation loss never improves
        // after the first epoch.
        let data = generate_dataset(&DatasetSpec::lidc_like(24, 5)).unwrap();
        let cfg = ModelConfig {
            learning_rate: 1e-30,
            patience: 1,
            max_epochs: 50,
            ..small_cfg()
        };
        let fold = Fold {
            train: (0..16).collect(),
            val: (16..24).collect(),
        };
        let result = train_fold(&data, &cfg, &fold, 0).unwrap();
        assert_eq!(result.history.len(), 2);
        assert_eq!(result.best_epoch, 1);
    }

    #[test]
    fn flow_training_runs_and_is_finite() {
        let data = generate_dataset(&DatasetSpec::lidc_like(24, 6)).unwrap();
        for flow_type in [FlowType::Planar, FlowType::Radial] {
            let cfg = ModelConfig {
                flow_type,
                flow_steps: 2,
                ..small_cfg()
            };
            let outcome = train(&data, &cfg).unwrap();
            for fold in outcome.folds {
                assert!(fold.history.iter().all(|h| h.train_loss.is_finite()));
            }
        }
    }
}
