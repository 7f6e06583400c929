use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::mask::Mask;

use super::nets::Model;

fn prior_latent_sample(model: &Model, x: &[f64], rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let gaussian = model.prior_forward(x)?;
    let mu = gaussian.mu.to_vec();
    let sigma = gaussian.sigma.to_vec();
    Ok(mu
        .iter()
        .zip(&sigma)
        .map(|(&m, &s)| {
            let eps: f64 = StandardNormal.sample(rng);
            m + s * eps
        })
        .collect())
}

fn foreground_probabilities(model: &Model, x: &[f64], z: &[f64]) -> Result<Vec<f64>> {
    let z_t = Tensor::constant(&[z.len()], z.to_vec())?;
    let logits = model.decode(x, &z_t)?;
    Ok(logits.sigmoid()?.to_vec())
}

/// Draw `n` binary masks by sampling the latent prior (the prior carries no
/// flow) and thresholding the decoded foreground probability at 0.5.
pub fn predict_samples(model: &Model, x: &[f64], n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Mask>> {
    if n == 0 {
        return Err(Error::InvalidParameter("sample count must be positive".into()));
    }
    let side = model.config.side;
    let mut masks = Vec::with_capacity(n);
    for _ in 0..n {
        let z = prior_latent_sample(model, x, rng)?;
        let probs = foreground_probabilities(model, x, &z)?;
        let data: Vec<u8> = probs.iter().map(|&p| u8::from(p > 0.5)).collect();
        masks.push(Mask::new(side, side, data)?);
    }
    Ok(masks)
}

/// Per-pixel mean and population standard deviation of `n` sampled
/// foreground-probability maps.
pub fn mean_std_maps(
    model: &Model,
    x: &[f64],
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if n < 2 {
        return Err(Error::InvalidParameter("mean/std maps need at least 2 samples".into()));
    }
    let pixels = model.config.pixels();
    let mut sum = vec![0.0; pixels];
    let mut sum_sq = vec![0.0; pixels];
    for _ in 0..n {
        let z = prior_latent_sample(model, x, rng)?;
        let probs = foreground_probabilities(model, x, &z)?;
        for (i, &p) in probs.iter().enumerate() {
            sum[i] += p;
            sum_sq[i] += p * p;
        }
    }
    let nf = n as f64;
    let mean: Vec<f64> = sum.iter().map(|&s| s / nf).collect();
    let std: Vec<f64> = sum_sq
        .iter()
        .zip(&mean)
        .map(|(&sq, &m)| (sq / nf - m * m).max(0.0).sqrt())
        .collect();
    Ok((mean, std))
}

/// Mean of the latent prior variance vector: ambiguity indicator for `x`.
pub fn prior_variance_score(model: &Model, x: &[f64]) -> Result<f64> {
    let gaussian = model.prior_forward(x)?;
    let sigma = gaussian.sigma.to_vec();
    Ok(sigma.iter().map(|&s| s * s).sum::<f64>() / sigma.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Model, ModelConfig};
    use rand_chacha::rand_core::SeedableRng;

    fn model() -> Model {
        let cfg = ModelConfig {
            side: 4,
            hidden_width: 6,
            context_width: 4,
            latent_dim: 2,
            ..ModelConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        Model::init(&cfg, &mut rng).unwrap()
    }

    #[test]
    fn fixed_rng_gives_deterministic_single_mask() {
        let m = model();
        let x = vec![0.5; 16];
        let a = predict_samples(&m, &x, 1, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = predict_samples(&m, &x, 1, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn collapsed_prior_gives_identical_masks() {
        let m = model();
        // Force sigma_raw very negative: sigma ~ 1e-6 floor, so every latent
        // sample is the mean.
        m.prior
            .sigma_head
            .bias
            .set_data(vec![-40.0; 2])
            .unwrap();
        m.prior
            .sigma_head
            .weight
            .set_data(vec![0.0; m.prior.sigma_head.weight.numel()])
            .unwrap();
        let x = vec![0.2; 16];
        let masks = predict_samples(&m, &x, 8, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        for mask in &masks[1..] {
            assert_eq!(mask, &masks[0]);
        }
    }

    #[test]
    fn identical_samples_give_zero_std() {
        // A decoder that ignores z entirely: every probability map is equal,
        // so the std map is exactly zero.
        let m = model();
        m.decoder
            .trunk
            .weight
            .set_data(vec![0.0; m.decoder.trunk.weight.numel()])
            .unwrap();
        let x = vec![0.7; 16];
        let (_, std) = mean_std_maps(&m, &x, 4, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        assert!(std.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn collapsed_prior_gives_near_zero_std() {
        // sigma is floored at 1e-6, so probability maps agree to that order.
        let m = model();
        m.prior.sigma_head.bias.set_data(vec![-40.0; 2]).unwrap();
        m.prior
            .sigma_head
            .weight
            .set_data(vec![0.0; m.prior.sigma_head.weight.numel()])
            .unwrap();
        let x = vec![0.7; 16];
        let (_, std) = mean_std_maps(&m, &x, 4, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        assert!(std.iter().all(|&s| s < 1e-5));
    }

    #[test]
    fn std_map_bounded_by_half() {
        let m = model();
        let x = vec![0.3; 16];
        let (mean, std) = mean_std_maps(&m, &x, 16, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert!(mean.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(std.iter().all(|&v| (0.0..=0.5).contains(&v)));
    }

    #[test]
    fn prior_variance_hand_values() {
        let m = model();
        // sigma = 1 everywhere: inverse softplus of (1 - floor)
        let raw = ((1.0f64 - 1e-6).exp() - 1.0).ln();
        m.prior.sigma_head.bias.set_data(vec![raw; 2]).unwrap();
        m.prior
            .sigma_head
            .weight
            .set_data(vec![0.0; m.prior.sigma_head.weight.numel()])
            .unwrap();
        let x = vec![0.4; 16];
        let score = prior_variance_score(&m, &x).unwrap();
        assert!((score - 1.0).abs() < 1e-9);
    }

    #[test]
    fn prior_variance_mean_of_sigma_squares() {
        let m = model();
        // sigma = (1, 2) -> mean variance 2.5; invert softplus per entry
        let inv = |target: f64| ((target - 1e-6f64).exp() - 1.0).ln();
        m.prior
            .sigma_head
            .weight
            .set_data(vec![0.0; m.prior.sigma_head.weight.numel()])
            .unwrap();
        m.prior
            .sigma_head
            .bias
            .set_data(vec![inv(1.0), inv(2.0)])
            .unwrap();
        let x = vec![0.4; 16];
        let score = prior_variance_score(&m, &x).unwrap();
        assert!((score - 2.5).abs() < 1e-9, "{score}");
    }
}
