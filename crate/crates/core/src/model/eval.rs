//! Test-set evaluation: per-fold GED under both empty policies plus the
//! annotator-count-appropriate IoU, aggregated as mean and population std
//! across folds.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::metrics::{average_iou, ged_squared, hungarian_matched_iou, EmptyPolicy};
use crate::synthdata::Dataset;

use super::infer::predict_samples;
use super::nets::Model;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub std: f64,
}

impl MetricSummary {
    fn from_values(values: &[f64]) -> MetricSummary {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        MetricSummary {
            mean,
            std: var.sqrt(),
        }
    }
}

/// Metrics JSON payload: GED under both policies and exactly one IoU variant
/// (Hungarian-matched for multi-annotator data, average for
/// single-annotator).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub ged_excl: MetricSummary,
    pub ged_incl: MetricSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iou_hungarian: Option<MetricSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iou_avg: Option<MetricSummary>,
    pub eval_samples: usize,
    pub folds: usize,
    pub test_examples: usize,
}

/// Per-fold means before cross-fold aggregation.
#[derive(Clone, Debug)]
pub struct FoldMetrics {
    pub ged_excl: f64,
    pub ged_incl: f64,
    pub iou: f64,
}

fn annotator_masks(dataset: &Dataset, index: usize) -> Vec<Mask> {
    dataset.examples[index].masks.clone()
}

/// Evaluate one trained model on the given test indices: `eval_samples`
/// prior draws per image, GED under both policies, and the IoU variant
/// matching the annotator count. Examples whose GED is undefined under the
/// exclude policy (every pair empty) are dropped from that mean, mirroring
/// the exclusion semantics.
pub fn evaluate_model(
    model: &Model,
    dataset: &Dataset,
    test_indices: &[usize],
    avg_iou_policy: EmptyPolicy,
    seed: u64,
) -> Result<FoldMetrics> {
    if test_indices.is_empty() {
        return Err(Error::InvalidParameter("no test examples".into()));
    }
    let multi_annotator = dataset.spec.num_annotators > 1;
    let samples = model.config.eval_samples;
    if multi_annotator && samples % dataset.spec.num_annotators != 0 {
        return Err(Error::InvalidParameter(format!(
            "eval_samples {} must be a multiple of the {} annotators for Hungarian matching",
            samples, dataset.spec.num_annotators
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ged_incl = Vec::new();
    let mut ged_excl = Vec::new();
    let mut ious = Vec::new();
    for &idx in test_indices {
        let x = dataset.image_f64(idx);
        let gt = annotator_masks(dataset, idx);
        let predictions = predict_samples(model, &x, samples, &mut rng)?;
        ged_incl.push(ged_squared(&gt, &predictions, EmptyPolicy::IncludeAsOne)?);
        match ged_squared(&gt, &predictions, EmptyPolicy::Exclude) {
            Ok(v) => ged_excl.push(v),
            Err(Error::UndefinedMetric(_)) => {}
            Err(e) => return Err(e),
        }
        let iou = if multi_annotator {
            hungarian_matched_iou(&gt, &predictions)?
        } else {
            match average_iou(&gt, &predictions, avg_iou_policy) {
                Ok(v) => v,
                Err(Error::UndefinedMetric(_)) => continue,
                Err(e) => return Err(e),
            }
        };
        ious.push(iou);
    }
    if ged_excl.is_empty() {
        return Err(Error::UndefinedMetric(
            "every test example undefined under exclude".into(),
        ));
    }
    let mean = |v: &Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
    Ok(FoldMetrics {
        ged_excl: mean(&ged_excl),
        ged_incl: mean(&ged_incl),
        iou: mean(&ious),
    })
}

/// Evaluate every fold's model and aggregate across folds.
pub fn evaluate_folds(
    models: &[&Model],
    dataset: &Dataset,
    test_indices: &[usize],
    avg_iou_policy: EmptyPolicy,
    seed: u64,
) -> Result<EvalReport> {
    if models.is_empty() {
        return Err(Error::InvalidParameter("need at least one fold model".into()));
    }
    let mut per_fold = Vec::with_capacity(models.len());
    for (fold_idx, model) in models.iter().enumerate() {
        per_fold.push(evaluate_model(
            model,
            dataset,
            test_indices,
            avg_iou_policy,
            seed.wrapping_add(fold_idx as u64),
        )?);
    }
    let collect = |f: fn(&FoldMetrics) -> f64| -> Vec<f64> { per_fold.iter().map(f).collect() };
    let iou_summary = MetricSummary::from_values(&collect(|m| m.iou));
    let multi = dataset.spec.num_annotators > 1;
    Ok(EvalReport {
        ged_excl: MetricSummary::from_values(&collect(|m| m.ged_excl)),
        ged_incl: MetricSummary::from_values(&collect(|m| m.ged_incl)),
        iou_hungarian: multi.then_some(iou_summary),
        iou_avg: (!multi).then_some(iou_summary),
        eval_samples: models[0].config.eval_samples,
        folds: models.len(),
        test_examples: test_indices.len(),
    })
}
