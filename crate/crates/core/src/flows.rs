//! Planar and radial normalizing-flow steps with analytic log-det Jacobians.
//!
//! Both flows are used in the generative direction only: a base sample `z0`
//! is pushed through the chain and the per-step `log |det df/dz|` terms are
//! summed into the density correction. Raw parameters pass through
//! invertibility-preserving constraints before use:
//!
//! * planar: `u_hat = u + (m(w.u) - w.u) w / |w|^2` with
//!   `m(x) = -1 + softplus(x)`, so `w.u_hat >= -1`;
//! * radial: `alpha = softplus(alpha_raw) > 0` and
//!   `beta = -alpha + softplus(beta_raw) >= -alpha`.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Raw (unconstrained) planar step parameters: `z + u tanh(w.z + b)`.
#[derive(Clone)]
pub struct PlanarParams {
    pub u_raw: Tensor,
    pub w: Tensor,
    pub b: Tensor,
}

/// Planar parameters after the invertibility constraint.
#[derive(Clone)]
pub struct ConstrainedPlanar {
    pub u_hat: Tensor,
    pub w: Tensor,
    pub b: Tensor,
}

/// Raw radial step parameters: `z + beta (z - center) / (alpha + r)`.
#[derive(Clone)]
pub struct RadialParams {
    pub center: Tensor,
    pub alpha_raw: Tensor,
    pub beta_raw: Tensor,
}

/// Radial parameters after the invertibility constraint.
#[derive(Clone)]
pub struct ConstrainedRadial {
    pub center: Tensor,
    pub alpha: Tensor,
    pub beta: Tensor,
}

impl PlanarParams {
    pub fn new(u_raw: Tensor, w: Tensor, b: Tensor) -> Result<Self> {
        if u_raw.shape() != w.shape() || u_raw.shape().len() != 1 || b.numel() != 1 {
            return Err(Error::ShapeMismatch {
                op: "planar_params",
                detail: format!(
                    "u {:?}, w {:?}, b {:?}",
                    u_raw.shape(),
                    w.shape(),
                    b.shape()
                ),
            });
        }
        if w.data().iter().map(|&x| x * x).sum::<f64>() < 1e-24 {
            return Err(Error::InvalidParameter("planar w must be nonzero".into()));
        }
        Ok(PlanarParams { u_raw, w, b })
    }

    /// `u_hat = u + (m(w.u) - w.u) w / |w|^2`, `m(x) = -1 + softplus(x)`.
    pub fn constrain(&self) -> Result<ConstrainedPlanar> {
        let dim = self.u_raw.numel();
        let wu = self.w.dot(&self.u_raw)?;
        let m = wu.softplus()?.add_scalar(-1.0)?;
        let w_norm_sq = self.w.dot(&self.w)?;
        let scale = m.sub(&wu)?.div(&w_norm_sq)?;
        let u_hat = self.u_raw.add(&scale.broadcast(&[dim])?.mul(&self.w)?)?;
        Ok(ConstrainedPlanar {
            u_hat,
            w: self.w.clone(),
            b: self.b.clone(),
        })
    }
}

impl ConstrainedPlanar {
    pub fn dim(&self) -> usize {
        self.w.numel()
    }

    /// `z_out = z + u_hat tanh(w.z + b)`;
    /// `log_det = log |1 + u_hat . psi(z)|`, `psi(z) = (1 - tanh^2(w.z + b)) w`.
    pub fn forward(&self, z: &Tensor) -> Result<(Tensor, Tensor)> {
        let dim = self.dim();
        if z.shape() != [dim] {
            return Err(Error::ShapeMismatch {
                op: "planar_forward",
                detail: format!("z {:?} vs dim {dim}", z.shape()),
            });
        }
        let pre = self.w.dot(z)?.add(&self.b)?;
        let h = pre.tanh()?;
        let z_out = z.add(&self.u_hat.mul(&h.broadcast(&[dim])?)?)?;
        let h_sq = h.square()?;
        let one_minus = Tensor::scalar(1.0).sub(&h_sq)?;
        let wu = self.w.dot(&self.u_hat)?;
        let det_arg = Tensor::scalar(1.0).add(&one_minus.mul(&wu)?)?;
        if det_arg.item().abs() < 1e-12 {
            return Err(Error::SingularJacobian("planar_forward"));
        }
        let log_det = det_arg.abs()?.log()?;
        Ok((z_out, log_det))
    }
}

impl RadialParams {
    pub fn new(center: Tensor, alpha_raw: Tensor, beta_raw: Tensor) -> Result<Self> {
        if center.shape().len() != 1 || alpha_raw.numel() != 1 || beta_raw.numel() != 1 {
            return Err(Error::ShapeMismatch {
                op: "radial_params",
                detail: format!(
                    "center {:?}, alpha {:?}, beta {:?}",
                    center.shape(),
                    alpha_raw.shape(),
                    beta_raw.shape()
                ),
            });
        }
        Ok(RadialParams {
            center,
            alpha_raw,
            beta_raw,
        })
    }

    /// `alpha = softplus(alpha_raw)`, `beta = -alpha + softplus(beta_raw)`.
    pub fn constrain(&self) -> Result<ConstrainedRadial> {
        let alpha = self.alpha_raw.softplus()?;
        let beta = self.beta_raw.softplus()?.sub(&alpha)?;
        Ok(ConstrainedRadial {
            center: self.center.clone(),
            alpha,
            beta,
        })
    }
}

impl ConstrainedRadial {
    pub fn dim(&self) -> usize {
        self.center.numel()
    }

    /// `z_out = z + beta h (z - center)` with `h = 1 / (alpha + r)`,
    /// `r = |z - center|`;
    /// `log_det = (L-1) log|1 + beta h| + log|1 + beta h + beta h' r|`,
    /// `h' = -1/(alpha+r)^2`. At `r = 0` the limiting values are used:
    /// `z_out = z`, `log_det = L log(1 + beta/alpha)`.
    pub fn forward(&self, z: &Tensor) -> Result<(Tensor, Tensor)> {
        let dim = self.dim();
        if z.shape() != [dim] {
            return Err(Error::ShapeMismatch {
                op: "radial_forward",
                detail: format!("z {:?} vs dim {dim}", z.shape()),
            });
        }
        let diff = z.sub(&self.center)?;
        let r_sq = diff.dot(&diff)?;
        if r_sq.item() == 0.0 {
            // Exact r = 0 case: avoid the sqrt node (non-differentiable at
            // zero) and emit the algebraic limit with gradients to the
            // parameters intact.
            let h0 = Tensor::scalar(1.0).div(&self.alpha)?;
            let bh = self.beta.mul(&h0)?;
            let z_out = z.add(&bh.broadcast(&[dim])?.mul(&diff)?)?;
            let t = Tensor::scalar(1.0).add(&bh)?;
            let log_det = t.abs()?.log()?.mul_scalar(dim as f64)?;
            return Ok((z_out, log_det));
        }
        let r = r_sq.sqrt()?;
        let h = Tensor::scalar(1.0).div(&self.alpha.add(&r)?)?;
        let bh = self.beta.mul(&h)?;
        let z_out = z.add(&bh.broadcast(&[dim])?.mul(&diff)?)?;
        let t1 = Tensor::scalar(1.0).add(&bh)?;
        // 1 + beta h + beta h' r  with h' = -h^2
        let t2 = t1.sub(&self.beta.mul(&h.square()?)?.mul(&r)?)?;
        let log_det = t1
            .abs()?
            .log()?
            .mul_scalar((dim - 1) as f64)?
            .add(&t2.abs()?.log()?)?;
        Ok((z_out, log_det))
    }
}

/// A single constrained flow step.
#[derive(Clone)]
pub enum FlowStep {
    Planar(ConstrainedPlanar),
    Radial(ConstrainedRadial),
}

impl FlowStep {
    pub fn dim(&self) -> usize {
        match self {
            FlowStep::Planar(p) => p.dim(),
            FlowStep::Radial(r) => r.dim(),
        }
    }

    pub fn forward(&self, z: &Tensor) -> Result<(Tensor, Tensor)> {
        match self {
            FlowStep::Planar(p) => p.forward(z),
            FlowStep::Radial(r) => r.forward(z),
        }
    }

    fn is_planar(&self) -> bool {
        matches!(self, FlowStep::Planar(_))
    }
}

/// Ordered chain of `K >= 0` homogeneous flow steps. The empty chain is the
/// identity with zero log-det.
#[derive(Clone)]
pub struct FlowChain {
    steps: Vec<FlowStep>,
}

impl FlowChain {
    pub fn identity() -> FlowChain {
        FlowChain { steps: Vec::new() }
    }

    pub fn new(steps: Vec<FlowStep>) -> Result<FlowChain> {
        if let Some(first) = steps.first() {
            if steps.iter().any(|s| s.is_planar() != first.is_planar()) {
                return Err(Error::InvalidParameter(
                    "flow chain must be homogeneous (all planar or all radial)".into(),
                ));
            }
            if steps.iter().any(|s| s.dim() != first.dim()) {
                return Err(Error::ShapeMismatch {
                    op: "flow_chain",
                    detail: "steps have differing latent dims".into(),
                });
            }
        }
        Ok(FlowChain { steps })
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn steps(&self) -> &[FlowStep] {
        &self.steps
    }

    /// Sequential application `z0 -> zK`, returning the summed log-det.
    pub fn forward(&self, z0: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut z = z0.clone();
        let mut sum_log_det = Tensor::scalar(0.0);
        for step in &self.steps {
            let (z_next, log_det) = step.forward(&z)?;
            z = z_next;
            sum_log_det = sum_log_det.add(&log_det)?;
        }
        Ok((z, sum_log_det))
    }
}

const INVERT_MAX_ITERS: usize = 10_000;

// Monotone scalar root find: g is nondecreasing with g(lo) <= 0 <= g(hi).
// Newton steps clipped to the bracket, bisection when Newton stalls.
fn solve_monotone(
    g: impl Fn(f64) -> f64,
    dg: impl Fn(f64) -> f64,
    mut lo: f64,
    mut hi: f64,
    flow: &'static str,
) -> Result<f64> {
    let mut t = 0.5 * (lo + hi);
    for _ in 0..INVERT_MAX_ITERS {
        let val = g(t);
        if val.abs() < 1e-14 {
            return Ok(t);
        }
        if val > 0.0 {
            hi = t;
        } else {
            lo = t;
        }
        let slope = dg(t);
        let newton = if slope > 1e-12 { t - val / slope } else { f64::NAN };
        t = if newton.is_finite() && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo < 1e-15 * (1.0 + t.abs()) {
            return Ok(t);
        }
    }
    Err(Error::InversionDiverged {
        flow,
        iterations: INVERT_MAX_ITERS,
    })
}

/// Numerically invert one constrained flow step: find `z_in` with
/// `forward(z_in) = z_out` by solving the scalar nonlinearity. Intended as a
/// bijectivity oracle; a failure to converge signals a constraint violation.
pub fn numeric_invert(step: &FlowStep, z_out: &[f64]) -> Result<Vec<f64>> {
    let dim = step.dim();
    if z_out.len() != dim {
        return Err(Error::ShapeMismatch {
            op: "numeric_invert",
            detail: format!("z_out length {} vs dim {dim}", z_out.len()),
        });
    }
    let z_in = match step {
        FlowStep::Planar(p) => {
            let u_hat = p.u_hat.to_vec();
            let w = p.w.to_vec();
            let b = p.b.item();
            let c: f64 = w.iter().zip(&u_hat).map(|(&wi, &ui)| wi * ui).sum();
            let a_out: f64 = w.iter().zip(z_out).map(|(&wi, &zi)| wi * zi).sum::<f64>() + b;
            // Solve t + c tanh(t) = a_out for t = w.z_in + b.
            let t = solve_monotone(
                |t| t + c * t.tanh() - a_out,
                |t| 1.0 + c * (1.0 - t.tanh() * t.tanh()),
                a_out - c.abs() - 1.0,
                a_out + c.abs() + 1.0,
                "planar",
            )?;
            let h = t.tanh();
            z_out
                .iter()
                .zip(&u_hat)
                .map(|(&zi, &ui)| zi - ui * h)
                .collect::<Vec<f64>>()
        }
        FlowStep::Radial(rad) => {
            let center = rad.center.to_vec();
            let alpha = rad.alpha.item();
            let beta = rad.beta.item();
            let offset: Vec<f64> = z_out.iter().zip(&center).map(|(&zi, &ci)| zi - ci).collect();
            let s = offset.iter().map(|&d| d * d).sum::<f64>().sqrt();
            if s == 0.0 {
                center.clone()
            } else {
                // Solve r + beta r / (alpha + r) = s for r = |z_in - center|.
                let r = solve_monotone(
                    |r| r + beta * r / (alpha + r) - s,
                    |r| 1.0 + beta * alpha / ((alpha + r) * (alpha + r)),
                    0.0,
                    s + beta.abs() + 1.0,
                    "radial",
                )?;
                let scale = r / s;
                center
                    .iter()
                    .zip(&offset)
                    .map(|(&ci, &di)| ci + scale * di)
                    .collect()
            }
        }
    };
    // Round-trip guard: the solve is only accepted if the forward map agrees.
    let (fwd, _) = step.forward(&Tensor::constant(&[dim], z_in.clone())?)?;
    let err: f64 = fwd
        .data()
        .iter()
        .zip(z_out)
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    if err > 1e-8 {
        return Err(Error::InversionDiverged {
            flow: match step {
                FlowStep::Planar(_) => "planar",
                FlowStep::Radial(_) => "radial",
            },
            iterations: INVERT_MAX_ITERS,
        });
    }
    Ok(z_in)
}
