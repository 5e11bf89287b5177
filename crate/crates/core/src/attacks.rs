//! Adversarial and random perturbations: untargeted / targeted / KL-loss
//! PGD in the l-inf and l2 balls, plus a Gaussian noise benchmark.
//!
//! Attacks operate in raw input space [0,1]; any mean/std preprocessing is a
//! layer inside the model, so radii stay in pixel units.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::models::Network;
use crate::scalar::Scalar;
use crate::tensor::{ops, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Norm {
    Linf,
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossMode {
    CeUntargeted,
    CeTargeted,
    Kl,
}

/// Perturbation budget and iteration schedule. Radii are in raw input units.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackConfig {
    pub norm: Norm,
    pub epsilon: f64,
    pub alpha: f64,
    pub steps: usize,
    pub loss_mode: LossMode,
    pub random_start: bool,
    /// Clamp iterates into the valid raw range [0,1] in addition to the
    /// ε-ball constraint.
    pub clamp_input_range: bool,
    /// Drives the random start (and nothing else).
    pub seed: u64,
}

impl AttackConfig {
    /// l-inf defaults: ε=8/255, α=2/255, 10 steps.
    pub fn linf_default() -> Self {
        AttackConfig {
            norm: Norm::Linf,
            epsilon: 8.0 / 255.0,
            alpha: 2.0 / 255.0,
            steps: 10,
            loss_mode: LossMode::CeUntargeted,
            random_start: false,
            clamp_input_range: true,
            seed: 0,
        }
    }

    /// l2 defaults: ε=128/255, α=15/255, 10 steps.
    pub fn l2_default() -> Self {
        AttackConfig {
            norm: Norm::L2,
            epsilon: 128.0 / 255.0,
            alpha: 15.0 / 255.0,
            ..Self::linf_default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epsilon < 0.0 {
            return Err(Error::Config("negative attack radius".into()));
        }
        if self.steps > 0 && self.alpha <= 0.0 {
            return Err(Error::Config("step size must be positive".into()));
        }
        Ok(())
    }
}

/// Gaussian benchmark default: same std as the l-inf radius.
pub const GAUSSIAN_SIGMA_DEFAULT: f64 = 8.0 / 255.0;

fn batch_size(shape: &[usize]) -> usize {
    shape.first().copied().unwrap_or(1).max(1)
}

fn project_data<F: Scalar>(x: &mut [F], origin: &[F], shape: &[usize], cfg: &AttackConfig) {
    let eps = F::from_f64(cfg.epsilon);
    match cfg.norm {
        Norm::Linf => {
            for (xi, &oi) in x.iter_mut().zip(origin) {
                *xi = (*xi).max(oi - eps).min(oi + eps);
            }
        }
        Norm::L2 => {
            let n = batch_size(shape);
            let d = x.len() / n;
            for i in 0..n {
                let row = &mut x[i * d..(i + 1) * d];
                let orow = &origin[i * d..(i + 1) * d];
                let norm = row
                    .iter()
                    .zip(orow)
                    .fold(F::zero(), |a, (&xi, &oi)| a + (xi - oi) * (xi - oi))
                    .sqrt();
                if norm > eps {
                    let s = eps / norm;
                    for (xi, &oi) in row.iter_mut().zip(orow) {
                        *xi = oi + (*xi - oi) * s;
                    }
                }
            }
        }
    }
    if cfg.clamp_input_range {
        for xi in x.iter_mut() {
            *xi = (*xi).max(F::zero()).min(F::one());
        }
    }
}

/// Projection onto the ε-ball around `origin` (per example for l2), then —
/// unless disabled — onto the valid raw range [0,1].
pub fn project<F: Scalar>(x: &Tensor<F>, origin: &Tensor<F>, cfg: &AttackConfig) -> Result<Tensor<F>> {
    if x.shape() != origin.shape() {
        return Err(Error::Dimension(format!(
            "projection of {:?} onto a ball around {:?}",
            x.shape(),
            origin.shape()
        )));
    }
    let mut data = x.to_vec();
    project_data(&mut data, &origin.to_vec(), &x.shape(), cfg);
    Tensor::new(&x.shape(), data)
}

fn random_start_data<F: Scalar>(origin: &[F], shape: &[usize], cfg: &AttackConfig) -> Vec<F> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out: Vec<F> = origin.to_vec();
    if cfg.epsilon == 0.0 {
        return out;
    }
    match cfg.norm {
        Norm::Linf => {
            for xi in out.iter_mut() {
                *xi += F::from_f64(rng.gen_range(-cfg.epsilon..cfg.epsilon));
            }
        }
        Norm::L2 => {
            // uniform in the ball: Gaussian direction, radius ε·u^{1/d}
            let n = batch_size(shape);
            let d = out.len() / n;
            for i in 0..n {
                let dir: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
                let r = cfg.epsilon * rng.gen_range(0.0f64..1.0).powf(1.0 / d as f64);
                for (xi, &g) in out[i * d..(i + 1) * d].iter_mut().zip(&dir) {
                    *xi += F::from_f64(r * g / norm);
                }
            }
        }
    }
    project_data(&mut out, origin, shape, cfg);
    out
}

/// Ascent step direction from the raw input gradient: coordinate sign for
/// l-inf, per-example normalized gradient for l2. Zero gradients move
/// nothing.
fn apply_step<F: Scalar>(x: &mut [F], grad: &[F], shape: &[usize], cfg: &AttackConfig, direction: f64) {
    let a = F::from_f64(cfg.alpha * direction);
    match cfg.norm {
        Norm::Linf => {
            for (xi, &gi) in x.iter_mut().zip(grad) {
                let s = if gi > F::zero() {
                    F::one()
                } else if gi < F::zero() {
                    -F::one()
                } else {
                    F::zero()
                };
                *xi += a * s;
            }
        }
        Norm::L2 => {
            let n = batch_size(shape);
            let d = x.len() / n;
            for i in 0..n {
                let g = &grad[i * d..(i + 1) * d];
                let norm = g.iter().fold(F::zero(), |acc, &v| acc + v * v).sqrt();
                if norm <= F::from_f64(1e-300) {
                    continue;
                }
                for (xi, &gi) in x[i * d..(i + 1) * d].iter_mut().zip(g) {
                    *xi += a * gi / norm;
                }
            }
        }
    }
}

/// Saves parameter `requires_grad` flags, disables them for the attack, and
/// restores them on drop so attacks never touch parameter gradients.
struct FreezeGuard<'a, F: Scalar> {
    net: &'a Network<F>,
    saved: Vec<bool>,
}

impl<'a, F: Scalar> FreezeGuard<'a, F> {
    fn new(net: &'a Network<F>) -> Self {
        let params = net.params();
        let saved = params.iter().map(|p| p.requires_grad()).collect();
        for p in &params {
            p.set_requires_grad(false);
        }
        FreezeGuard { net, saved }
    }
}

impl<F: Scalar> Drop for FreezeGuard<'_, F> {
    fn drop(&mut self) {
        for (p, &flag) in self.net.params().iter().zip(&self.saved) {
            p.set_requires_grad(flag);
        }
    }
}

fn pgd_core<F: Scalar>(
    net: &Network<F>,
    x: &Tensor<F>,
    cfg: &AttackConfig,
    direction: f64,
    loss_of: impl Fn(&Tensor<F>) -> Result<Tensor<F>>,
) -> Result<Tensor<F>> {
    cfg.validate()?;
    let shape = x.shape();
    let origin = x.to_vec();
    let _guard = FreezeGuard::new(net);

    let mut cur = if cfg.random_start && cfg.steps > 0 {
        random_start_data(&origin, &shape, cfg)
    } else {
        origin.clone()
    };
    for _ in 0..cfg.steps {
        let xt = Tensor::leaf(&shape, cur.clone())?;
        let loss = loss_of(&xt)?;
        loss.backward()?;
        let grad = xt.grad().ok_or_else(|| {
            Error::Contract("attack loss does not depend on the input".into())
        })?;
        apply_step(&mut cur, &grad, &shape, cfg, direction);
        project_data(&mut cur, &origin, &shape, cfg);
    }
    Tensor::new(&shape, cur)
}

/// Eq.-style untargeted PGD: ascend the CE loss of the true labels.
pub fn pgd_untargeted<F: Scalar>(
    net: &Network<F>,
    x: &Tensor<F>,
    y: &[usize],
    cfg: &AttackConfig,
) -> Result<Tensor<F>> {
    pgd_core(net, x, cfg, 1.0, |xt| {
        ops::softmax_cross_entropy(&net.forward(xt)?, y)
    })
}

/// Targeted PGD: descend the CE loss of the target labels.
pub fn pgd_targeted<F: Scalar>(
    net: &Network<F>,
    x: &Tensor<F>,
    y_target: &[usize],
    cfg: &AttackConfig,
) -> Result<Tensor<F>> {
    pgd_core(net, x, cfg, -1.0, |xt| {
        ops::softmax_cross_entropy(&net.forward(xt)?, y_target)
    })
}

/// `(y+1) mod C`: each class is pushed toward its circular successor.
pub fn circular_targets(y: &[usize], num_classes: usize) -> Vec<usize> {
    y.iter().map(|&l| (l + 1) % num_classes).collect()
}

/// KL-loss PGD: ascend `KL(f(x) ‖ f(x^k))` with the clean logits fixed
/// (no gradient flows through the first argument).
pub fn pgd_kl<F: Scalar>(net: &Network<F>, x: &Tensor<F>, cfg: &AttackConfig) -> Result<Tensor<F>> {
    let clean_logits = {
        let _guard = FreezeGuard::new(net);
        net.forward(&x.detach())?.detach()
    };
    pgd_core(net, x, cfg, 1.0, |xt| {
        ops::kl_divergence(&clean_logits, &net.forward(xt)?)
    })
}

/// Additive i.i.d. Gaussian noise of std `sigma`, clamped to [0,1].
pub fn gaussian_perturb<F: Scalar>(x: &Tensor<F>, sigma: f64, seed: u64) -> Result<Tensor<F>> {
    if sigma < 0.0 {
        return Err(Error::Config("negative noise std".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = x
        .to_vec()
        .into_iter()
        .map(|v| {
            let noise: f64 = rng.sample::<f64, _>(StandardNormal) * sigma;
            (v + F::from_f64(noise)).max(F::zero()).min(F::one())
        })
        .collect();
    Tensor::new(&x.shape(), data)
}
