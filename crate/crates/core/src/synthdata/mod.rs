//! Deterministic synthetic multi-annotator segmentation data.
//!
//! Each example is an ellipse-like bright blob; every annotator sees the
//! blob boundary at a radius jittered around the true one, and on ambiguous
//! examples an annotator may mark no lesion at all. The two presets mirror
//! the two ambiguity structures the metrics exercise: `lidc_like` (four
//! annotators, presence/absence disagreement on a fraction of examples) and
//! `kvasir_like` (one annotator, no absence ambiguity, more shape variety).
//!
//! Mask geometry uses only `+ - * /` comparisons on the integer pixel grid,
//! and all noise comes from an Irwin-Hall sum of uniforms, so a seeded
//! dataset is byte-identical across platforms.

mod io;

pub use io::{load_dataset, save_dataset};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::Mask;

/// Generation parameters; fully determines a dataset together with `seed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub num_examples: usize,
    /// Image side length (height = width).
    pub side: usize,
    pub num_annotators: usize,
    /// Std of the per-annotator boundary radius perturbation, in pixels.
    pub boundary_jitter: f64,
    /// Probability an annotator marks no lesion on an ambiguous example.
    pub absence_prob: f64,
    /// Fraction of examples with presence/absence disagreement.
    pub ambiguous_fraction: f64,
    /// Background noise std added to the image.
    pub noise_level: f64,
    /// Shape variety in [0, 1]: widens radius/eccentricity ranges and, above
    /// 0.5, allows a second blob lobe.
    pub shape_variability: f64,
    pub seed: u64,
}

impl DatasetSpec {
    /// Four annotators with boundary jitter and bimodal absence ambiguity.
    pub fn lidc_like(num_examples: usize, seed: u64) -> DatasetSpec {
        DatasetSpec {
            num_examples,
            side: 16,
            num_annotators: 4,
            boundary_jitter: 0.9,
            absence_prob: 0.5,
            ambiguous_fraction: 0.4,
            noise_level: 0.08,
            shape_variability: 0.3,
            seed,
        }
    }

    /// Single annotator, no absence ambiguity, higher shape variability.
    pub fn kvasir_like(num_examples: usize, seed: u64) -> DatasetSpec {
        DatasetSpec {
            num_examples,
            side: 16,
            num_annotators: 1,
            boundary_jitter: 0.6,
            absence_prob: 0.0,
            ambiguous_fraction: 0.0,
            noise_level: 0.1,
            shape_variability: 0.8,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_examples == 0 {
            return Err(Error::InvalidParameter("num_examples must be positive".into()));
        }
        if self.side < 4 {
            return Err(Error::InvalidParameter("side must be at least 4".into()));
        }
        if self.num_annotators == 0 {
            return Err(Error::InvalidParameter("num_annotators must be at least 1".into()));
        }
        for (name, p) in [
            ("absence_prob", self.absence_prob),
            ("ambiguous_fraction", self.ambiguous_fraction),
            ("shape_variability", self.shape_variability),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidParameter(format!("{name} must be in [0, 1], got {p}")));
            }
        }
        if self.boundary_jitter < 0.0 || self.noise_level < 0.0 {
            return Err(Error::InvalidParameter("jitter and noise must be non-negative".into()));
        }
        Ok(())
    }
}

/// One image with its annotator masks.
#[derive(Clone, Debug, PartialEq)]
pub struct AnnotatedExample {
    /// Row-major intensities in [0, 1].
    pub image: Vec<f32>,
    pub masks: Vec<Mask>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub examples: Vec<AnnotatedExample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn side(&self) -> usize {
        self.spec.side
    }

    /// Image as f64 for the model.
    pub fn image_f64(&self, index: usize) -> Vec<f64> {
        self.examples[index].image.iter().map(|&v| v as f64).collect()
    }
}

// Approximate standard normal from 12 uniforms; exact IEEE arithmetic only,
// so the stream is platform-stable.
fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    (0..12).map(|_| rng.gen::<f64>()).sum::<f64>() - 6.0
}

struct Lobe {
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
}

impl Lobe {
    // Normalized squared ellipse distance: <= 1 inside the base boundary.
    fn q(&self, x: f64, y: f64) -> f64 {
        let dx = (x - self.cx) / self.rx;
        let dy = (y - self.cy) / self.ry;
        dx * dx + dy * dy
    }
}

const MAX_RETRIES: usize = 32;

/// Generate a dataset; fully determined by `spec` (including its seed).
pub fn generate_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let side = spec.side;
    let sf = side as f64;
    let var = spec.shape_variability;
    // Radius and eccentricity ranges widen with shape variability; the
    // eccentricity cap keeps the blob center pixel inside every mask with
    // radius >= 1 (needs 1/e^2 + e^2 <= 4).
    let r_lo = sf * (0.16 - 0.04 * var);
    let r_hi = sf * (0.24 + 0.10 * var);
    let ecc_lo = 1.0 - 0.4 * var;
    let ecc_hi = 1.0 + 0.5 * var;
    let two_lobes_prob = if var > 0.5 { var - 0.5 } else { 0.0 };

    let mut examples = Vec::with_capacity(spec.num_examples);
    for index in 0..spec.num_examples {
        let mut built = None;
        for _attempt in 0..MAX_RETRIES {
            let cx = rng.gen_range(0.35 * sf..0.65 * sf);
            let cy = rng.gen_range(0.35 * sf..0.65 * sf);
            let r_mean = rng.gen_range(r_lo..r_hi);
            let ecc = rng.gen_range(ecc_lo..ecc_hi);
            let main = Lobe {
                cx,
                cy,
                rx: r_mean * ecc,
                ry: r_mean / ecc,
            };
            let second = if rng.gen::<f64>() < two_lobes_prob {
                let scale = rng.gen_range(0.5..0.9);
                Some(Lobe {
                    cx: cx + rng.gen_range(-0.8..0.8) * r_mean,
                    cy: cy + rng.gen_range(-0.8..0.8) * r_mean,
                    rx: main.rx * scale,
                    ry: main.ry * scale,
                })
            } else {
                None
            };
            let ambiguous = rng.gen::<f64>() < spec.ambiguous_fraction;
            // Ambiguity is visible in the image: ambiguous blobs are dim
            // (subtle lesions annotators may dismiss), so an input-conditioned
            // prior can learn to widen on them.
            let brightness = if ambiguous {
                rng.gen_range(0.35..0.6)
            } else {
                rng.gen_range(0.75..1.0)
            };

            // Per-annotator boundary scale; a jittered radius below one pixel
            // makes the blob degenerate and the whole example is retried.
            let mut scales = Vec::with_capacity(spec.num_annotators);
            let mut empties = Vec::with_capacity(spec.num_annotators);
            let mut degenerate = false;
            for _ in 0..spec.num_annotators {
                let jitter = gauss(&mut rng) * spec.boundary_jitter;
                if r_mean + jitter < 1.0 {
                    degenerate = true;
                }
                scales.push((r_mean + jitter) / r_mean);
                empties.push(ambiguous && rng.gen::<f64>() < spec.absence_prob);
            }
            if degenerate {
                continue;
            }

            let mut image = Vec::with_capacity(side * side);
            for row in 0..side {
                for col in 0..side {
                    let (x, y) = (col as f64, row as f64);
                    let mut q = main.q(x, y);
                    if let Some(lobe) = &second {
                        q = q.min(lobe.q(x, y));
                    }
                    let blob = (1.0 - 0.5 * q).clamp(0.0, 1.0) * brightness;
                    let noisy = blob + spec.noise_level * gauss(&mut rng);
                    image.push(noisy.clamp(0.0, 1.0) as f32);
                }
            }

            let mut masks = Vec::with_capacity(spec.num_annotators);
            for a in 0..spec.num_annotators {
                if empties[a] {
                    masks.push(Mask::empty(side, side));
                    continue;
                }
                let threshold = scales[a] * scales[a];
                let mut data = Vec::with_capacity(side * side);
                for row in 0..side {
                    for col in 0..side {
                        let (x, y) = (col as f64, row as f64);
                        let mut q = main.q(x, y);
                        if let Some(lobe) = &second {
                            q = q.min(lobe.q(x, y));
                        }
                        data.push(u8::from(q <= threshold));
                    }
                }
                masks.push(Mask::new(side, side, data)?);
            }
            built = Some(AnnotatedExample { image, masks });
            break;
        }
        match built {
            Some(example) => examples.push(example),
            None => {
                return Err(Error::GenerationFailed(format!(
                    "example {index}: blob degenerate after {MAX_RETRIES} retries \
                     (boundary_jitter too large for the radius range)"
                )))
            }
        }
    }
    Ok(Dataset {
        spec: spec.clone(),
        examples,
    })
}

/// One cross-validation fold: validation block plus the remaining training
/// indices.
#[derive(Clone, Debug, PartialEq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

/// Held-out test indices (fixed across folds) plus `k` train/validation
/// partitions of the rest.
#[derive(Clone, Debug, PartialEq)]
pub struct FoldSplit {
    pub test: Vec<usize>,
    pub folds: Vec<Fold>,
}

/// 10% of indices (at least one) held out as test; the remainder partitioned
/// into `k` folds, each serving once as validation. Deterministic in `seed`.
pub fn split_folds(dataset_len: usize, k: usize, seed: u64) -> Result<FoldSplit> {
    if k < 2 {
        return Err(Error::InvalidParameter("folds must be at least 2".into()));
    }
    let test_count = (dataset_len / 10).max(1);
    let rest = dataset_len.saturating_sub(test_count);
    if rest < k {
        return Err(Error::InvalidParameter(format!(
            "dataset of {dataset_len} leaves {rest} non-test examples, fewer than {k} folds"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices: Vec<usize> = (0..dataset_len).collect();
    for i in (1..indices.len()).rev() {
        let j = rng.gen_range(0..=i);
        indices.swap(i, j);
    }
    let mut test: Vec<usize> = indices[..test_count].to_vec();
    test.sort_unstable();
    let remaining = &indices[test_count..];

    let base = remaining.len() / k;
    let extra = remaining.len() % k;
    let mut folds = Vec::with_capacity(k);
    let mut offset = 0;
    for fold_idx in 0..k {
        let size = base + usize::from(fold_idx < extra);
        let mut val: Vec<usize> = remaining[offset..offset + size].to_vec();
        let mut train: Vec<usize> = remaining[..offset]
            .iter()
            .chain(&remaining[offset + size..])
            .copied()
            .collect();
        val.sort_unstable();
        train.sort_unstable();
        folds.push(Fold { train, val });
        offset += size;
    }
    Ok(FoldSplit { test, folds })
}
