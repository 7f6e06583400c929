use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::flows::{FlowChain, FlowStep, PlanarParams, RadialParams};
use crate::gaussian::{kl_diag_gaussians, DiagonalGaussian};

use super::{FlowType, ModelConfig};

/// Fully connected layer, `weight [out, in]`, `bias [out]`.
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Dense {
    fn init(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Dense {
        Dense::init_with_bias(in_dim, out_dim, 0.0, rng)
    }

    fn init_with_bias(in_dim: usize, out_dim: usize, bias: f64, rng: &mut ChaCha8Rng) -> Dense {
        let bound = (1.0 / in_dim as f64).sqrt();
        let weight: Vec<f64> = (0..in_dim * out_dim)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        Dense {
            weight: Tensor::leaf(&[out_dim, in_dim], weight).expect("valid shape"),
            bias: Tensor::leaf(&[out_dim], vec![bias; out_dim]).expect("valid shape"),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.weight.matmul(x)?.add(&self.bias)
    }
}

// Raw sigma-head bias: softplus(-2.25) starts both latent stds near 0.1,
// which keeps early latent samples informative instead of drowning the
// decoder's z-path in noise.
const SIGMA_RAW_INIT: f64 = -2.25;

/// `P(mu, sigma | x)`: image to latent prior Gaussian.
pub struct PriorNet {
    pub trunk: Dense,
    pub mu_head: Dense,
    pub sigma_head: Dense,
}

impl PriorNet {
    fn init(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> PriorNet {
        PriorNet {
            trunk: Dense::init(cfg.pixels(), cfg.hidden_width, rng),
            mu_head: Dense::init(cfg.hidden_width, cfg.latent_dim, rng),
            sigma_head: Dense::init_with_bias(cfg.hidden_width, cfg.latent_dim, SIGMA_RAW_INIT, rng),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<DiagonalGaussian> {
        let h = self.trunk.forward(x)?.tanh()?;
        DiagonalGaussian::from_raw(self.mu_head.forward(&h)?, self.sigma_head.forward(&h)?)
    }
}

/// `Q(mu, sigma, c | x, s)`: image and annotation to the base posterior
/// Gaussian plus a context vector from which each flow step's raw parameters
/// are produced by a per-step linear head.
pub struct PosteriorNet {
    pub trunk: Dense,
    pub mu_head: Dense,
    pub sigma_head: Dense,
    pub context_head: Dense,
    pub flow_heads: Vec<Dense>,
}

impl PosteriorNet {
    fn init(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> PosteriorNet {
        let step_params = match cfg.flow_type {
            FlowType::None => 0,
            FlowType::Planar => 2 * cfg.latent_dim + 1,
            FlowType::Radial => cfg.latent_dim + 2,
        };
        PosteriorNet {
            trunk: Dense::init(2 * cfg.pixels(), cfg.hidden_width, rng),
            mu_head: Dense::init(cfg.hidden_width, cfg.latent_dim, rng),
            sigma_head: Dense::init_with_bias(cfg.hidden_width, cfg.latent_dim, SIGMA_RAW_INIT, rng),
            context_head: Dense::init(cfg.hidden_width, cfg.context_width, rng),
            flow_heads: (0..cfg.flow_steps)
                .map(|_| Dense::init(cfg.context_width, step_params, rng))
                .collect(),
        }
    }

    pub fn forward(
        &self,
        cfg: &ModelConfig,
        x: &Tensor,
        s: &Tensor,
    ) -> Result<(DiagonalGaussian, FlowChain)> {
        let joined = Tensor::concat(&[x, s], 0)?;
        let h = self.trunk.forward(&joined)?.tanh()?;
        let gaussian =
            DiagonalGaussian::from_raw(self.mu_head.forward(&h)?, self.sigma_head.forward(&h)?)?;
        if self.flow_heads.is_empty() {
            return Ok((gaussian, FlowChain::identity()));
        }
        let context = self.context_head.forward(&h)?.tanh()?;
        let latent = cfg.latent_dim;
        let mut steps = Vec::with_capacity(self.flow_heads.len());
        for head in &self.flow_heads {
            let raw = head.forward(&context)?;
            let step = match cfg.flow_type {
                FlowType::Planar => FlowStep::Planar(
                    PlanarParams::new(
                        raw.slice(0, 0, latent)?,
                        raw.slice(0, latent, latent)?,
                        raw.slice(0, 2 * latent, 1)?,
                    )?
                    .constrain()?,
                ),
                FlowType::Radial => FlowStep::Radial(
                    RadialParams::new(
                        raw.slice(0, 0, latent)?,
                        raw.slice(0, latent, 1)?,
                        raw.slice(0, latent + 1, 1)?,
                    )?
                    .constrain()?,
                ),
                FlowType::None => unreachable!("no flow heads with flow_type none"),
            };
            steps.push(step);
        }
        Ok((gaussian, FlowChain::new(steps)?))
    }
}

/// `p(s | z, x)`: image features concatenated with the latent, to per-pixel
/// foreground logits.
pub struct Decoder {
    pub image_enc: Dense,
    pub trunk: Dense,
    pub out: Dense,
}

impl Decoder {
    fn init(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Decoder {
        Decoder {
            image_enc: Dense::init(cfg.pixels(), cfg.hidden_width, rng),
            trunk: Dense::init(cfg.hidden_width + cfg.latent_dim, cfg.hidden_width, rng),
            out: Dense::init(cfg.hidden_width, cfg.pixels(), rng),
        }
    }

    pub fn forward(&self, x: &Tensor, z: &Tensor) -> Result<Tensor> {
        let features = self.image_enc.forward(x)?.tanh()?;
        let h = self.trunk.forward(&Tensor::concat(&[&features, z], 0)?)?.tanh()?;
        self.out.forward(&h)
    }
}

/// Which KL estimate the ELBO uses. The Monte-Carlo path
/// `log q0(z0) - sum log|det| - log p(zK)` is required whenever flow steps
/// are present; the closed-form diagonal-Gaussian KL is available for the
/// vanilla model and makes the objective exactly the flow-free ELBO.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KlMode {
    MonteCarlo,
    ClosedForm,
}

/// The ELBO pieces, each a `[1]` graph tensor: `loss = recon + kl`.
pub struct ElboParts {
    pub loss: Tensor,
    pub recon: Tensor,
    pub kl: Tensor,
    pub log_det: Tensor,
}

/// Full parameter set plus its configuration.
pub struct Model {
    pub config: ModelConfig,
    pub prior: PriorNet,
    pub posterior: PosteriorNet,
    pub decoder: Decoder,
}

impl Model {
    pub fn init(config: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<Model> {
        config.validate()?;
        Ok(Model {
            config: config.clone(),
            prior: PriorNet::init(config, rng),
            posterior: PosteriorNet::init(config, rng),
            decoder: Decoder::init(config, rng),
        })
    }

    /// Parameters in declaration order with stable names; this order defines
    /// the checkpoint layout.
    pub fn named_parameters(&self) -> Vec<(String, Tensor)> {
        let mut params: Vec<(String, Tensor)> = Vec::new();
        let mut dense = |name: &str, layer: &Dense| {
            params.push((format!("{name}.weight"), layer.weight.clone()));
            params.push((format!("{name}.bias"), layer.bias.clone()));
        };
        dense("prior.trunk", &self.prior.trunk);
        dense("prior.mu_head", &self.prior.mu_head);
        dense("prior.sigma_head", &self.prior.sigma_head);
        dense("posterior.trunk", &self.posterior.trunk);
        dense("posterior.mu_head", &self.posterior.mu_head);
        dense("posterior.sigma_head", &self.posterior.sigma_head);
        dense("posterior.context_head", &self.posterior.context_head);
        for (i, head) in self.posterior.flow_heads.iter().enumerate() {
            dense(&format!("posterior.flow_head.{i}"), head);
        }
        dense("decoder.image_enc", &self.decoder.image_enc);
        dense("decoder.trunk", &self.decoder.trunk);
        dense("decoder.out", &self.decoder.out);
        params
    }

    /// Copy of all parameter values, matching `named_parameters` order.
    pub fn snapshot(&self) -> Vec<Vec<f64>> {
        self.named_parameters().iter().map(|(_, t)| t.to_vec()).collect()
    }

    pub fn restore(&self, snapshot: &[Vec<f64>]) -> Result<()> {
        let params = self.named_parameters();
        if snapshot.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "snapshot has {} tensors, model has {}",
                snapshot.len(),
                params.len()
            )));
        }
        for ((_, t), values) in params.iter().zip(snapshot) {
            t.set_data(values.clone())?;
        }
        Ok(())
    }

    fn check_image(&self, x: &[f64]) -> Result<Tensor> {
        if x.len() != self.config.pixels() {
            return Err(Error::ShapeMismatch {
                op: "model_forward",
                detail: format!("image has {} pixels, expected {}", x.len(), self.config.pixels()),
            });
        }
        Tensor::constant(&[x.len()], x.to_vec())
    }

    pub fn prior_forward(&self, x: &[f64]) -> Result<DiagonalGaussian> {
        self.prior.forward(&self.check_image(x)?)
    }

    pub fn posterior_forward(&self, x: &[f64], s: &[f64]) -> Result<(DiagonalGaussian, FlowChain)> {
        let x_t = self.check_image(x)?;
        let s_t = self.check_image(s)?;
        self.posterior.forward(&self.config, &x_t, &s_t)
    }

    /// The posterior context vector for `(x, s)`; the flow heads read their
    /// raw parameters from it.
    pub fn posterior_context(&self, x: &[f64], s: &[f64]) -> Result<Vec<f64>> {
        let x_t = self.check_image(x)?;
        let s_t = self.check_image(s)?;
        let joined = Tensor::concat(&[&x_t, &s_t], 0)?;
        let h = self.posterior.trunk.forward(&joined)?.tanh()?;
        Ok(self.posterior.context_head.forward(&h)?.tanh()?.to_vec())
    }

    pub fn decode(&self, x: &[f64], z: &Tensor) -> Result<Tensor> {
        self.decoder.forward(&self.check_image(x)?, z)
    }

    /// Single-sample ELBO for one (image, annotation) pair with the noise
    /// vector supplied by the caller:
    ///
    /// * `recon` — pixelwise binary cross-entropy of the decoded logits
    ///   against `s`, via `softplus(logit) - logit * s` summed over pixels;
    /// * `kl` — Monte-Carlo `log q0(z0) - sum log|det| - log p(zK)`, or the
    ///   closed-form Gaussian KL (flow-free configurations only);
    /// * `loss = recon + kl`.
    pub fn elbo_loss(&self, x: &[f64], s: &[f64], noise: &[f64], kl_mode: KlMode) -> Result<ElboParts> {
        let x_t = self.check_image(x)?;
        let s_t = self.check_image(s)?;
        let prior = self.prior.forward(&x_t)?;
        let (posterior, chain) = self.posterior.forward(&self.config, &x_t, &s_t)?;
        let z0 = posterior.sample_reparameterized(noise)?;
        let (z_k, log_det) = chain.forward(&z0)?;
        let logits = self.decoder.forward(&x_t, &z_k)?;
        let recon = logits.softplus()?.sum()?.sub(&logits.dot(&s_t)?)?;
        let kl = match kl_mode {
            KlMode::MonteCarlo => posterior
                .log_prob(&z0)?
                .sub(&log_det)?
                .sub(&prior.log_prob(&z_k)?)?,
            KlMode::ClosedForm => {
                if !chain.is_empty() {
                    return Err(Error::InvalidConfig(
                        "closed-form KL is only defined without flow steps".into(),
                    ));
                }
                kl_diag_gaussians(&posterior, &prior)?
            }
        };
        let loss = recon.add(&kl)?;
        Ok(ElboParts {
            loss,
            recon,
            kl,
            log_det,
        })
    }
}
