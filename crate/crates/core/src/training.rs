//! Training regimes: standard (ST), adversarial (AT), and TRADES, with
//! momentum SGD, a step learning-rate schedule, and per-epoch metric hooks
//! fed with the epoch-relevant perturbed data.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attacks::{gaussian_perturb, pgd_kl, pgd_untargeted, AttackConfig, GAUSSIAN_SIGMA_DEFAULT};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::models::Network;
use crate::scalar::Scalar;
use crate::tensor::{ops, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    St,
    At,
    Trades,
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub regime: Regime,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_initial: f64,
    /// `(epoch, factor)`: from `epoch` onward the rate is multiplied by
    /// `factor`; multiple drops compose.
    pub lr_drops: Vec<(usize, f64)>,
    pub momentum: f64,
    /// L2 penalty coefficient folded into the gradient (`g ← g + λp`).
    /// Zero leaves classifier norms untouched; nonzero values supply the
    /// shrinkage pressure that drives terminal-phase variability collapse.
    pub weight_decay: f64,
    pub seed: u64,
    /// Training-time attack (AT: CE-untargeted; TRADES: KL).
    pub attack: AttackConfig,
    /// TRADES regularization constant.
    pub beta: f64,
    /// Attack used to build the perturbed evaluation set for metric hooks
    /// (ST and TRADES; AT reuses its own training perturbations).
    pub eval_attack: AttackConfig,
    /// Std of the Gaussian benchmark set passed to metric hooks.
    pub gaussian_sigma: f64,
    /// Call the metric hook every this many epochs (and on the last epoch).
    pub metric_every: usize,
}

impl TrainConfig {
    /// Desk-scale defaults: 200 epochs, lr 0.1 dropping ×0.1 at 100 and 150,
    /// batch 128, momentum 0.9, β=6, metrics every 5 epochs.
    pub fn desk_default(regime: Regime) -> Self {
        let mut attack = AttackConfig::linf_default();
        if regime == Regime::Trades {
            attack.loss_mode = crate::attacks::LossMode::Kl;
            // the KL gradient vanishes at the clean point, so the inner
            // maximization must start off-center
            attack.random_start = true;
        }
        TrainConfig {
            regime,
            epochs: 200,
            batch_size: 128,
            lr_initial: 0.1,
            lr_drops: vec![(100, 0.1), (150, 0.1)],
            momentum: 0.9,
            weight_decay: 0.0,
            seed: 0,
            attack,
            beta: 6.0,
            eval_attack: AttackConfig::linf_default(),
            gaussian_sigma: GAUSSIAN_SIGMA_DEFAULT,
            metric_every: 5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("need at least one epoch".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config("negative weight decay".into()));
        }
        if self.regime == Regime::Trades && self.beta < 0.0 {
            return Err(Error::Config("negative TRADES beta".into()));
        }
        if self.metric_every == 0 {
            return Err(Error::Config("metric cadence must be >= 1".into()));
        }
        self.attack.validate()?;
        self.eval_attack.validate()
    }
}

/// One evaluated epoch. For ST the robust fields mirror the clean ones.
#[derive(Debug, Clone)]
pub struct EpochLog {
    pub epoch: usize,
    pub clean_accuracy: f64,
    pub robust_accuracy: f64,
    pub ce_loss: f64,
    /// AT: CE loss on the perturbed batch; TRADES: the KL component.
    pub robust_loss: f64,
}

/// Learning rate in force at `epoch` under the step schedule.
pub fn lr_at(cfg: &TrainConfig, epoch: usize) -> f64 {
    let mut lr = cfg.lr_initial;
    for &(drop_epoch, factor) in &cfg.lr_drops {
        if epoch >= drop_epoch {
            lr *= factor;
        }
    }
    lr
}

/// Momentum buffers, one per parameter tensor.
pub struct SgdState<F: Scalar> {
    velocity: Vec<Vec<F>>,
}

impl<F: Scalar> SgdState<F> {
    pub fn new(net: &Network<F>) -> Self {
        SgdState {
            velocity: net.params().iter().map(|p| vec![F::zero(); p.numel()]).collect(),
        }
    }

    /// `v ← momentum·v + g + λp`, `p ← p − lr·v`, then zero the gradients.
    pub fn step(
        &mut self,
        params: &[Tensor<F>],
        lr: f64,
        momentum: f64,
        weight_decay: f64,
    ) -> Result<()> {
        if params.len() != self.velocity.len() {
            return Err(Error::Contract(format!(
                "{} parameter tensors for {} velocity buffers",
                params.len(),
                self.velocity.len()
            )));
        }
        let (lr, mu, wd) = (F::from_f64(lr), F::from_f64(momentum), F::from_f64(weight_decay));
        for (p, v) in params.iter().zip(&mut self.velocity) {
            let grad = p
                .grad()
                .ok_or_else(|| Error::Contract("sgd step without gradients".into()))?;
            let mut data = p.to_vec();
            for ((di, vi), &gi) in data.iter_mut().zip(v.iter_mut()).zip(&grad) {
                *vi = mu * *vi + gi + wd * *di;
                *di -= lr * *vi;
            }
            p.set_data(&data);
            p.zero_grad();
        }
        Ok(())
    }
}

fn epoch_seed(seed: u64, epoch: usize, salt: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(epoch as u64)
        .wrapping_mul(0x2545_F491_4F6C_DD1D)
        .wrapping_add(salt)
}

fn shuffled_batches(n: usize, batch: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx.chunks(batch).map(|c| c.to_vec()).collect()
}

fn argmax_correct<F: Scalar>(logits: &Tensor<F>, labels: &[usize]) -> usize {
    let c = logits.shape()[1];
    let data = logits.data();
    labels
        .iter()
        .enumerate()
        .filter(|&(i, &y)| {
            let row = &data[i * c..(i + 1) * c];
            let best = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(j, _)| j)
                .unwrap();
            best == y
        })
        .count()
}

struct EpochAccumulator {
    n: usize,
    clean_correct: usize,
    robust_correct: usize,
    ce_sum: f64,
    robust_sum: f64,
}

impl EpochAccumulator {
    fn new() -> Self {
        EpochAccumulator { n: 0, clean_correct: 0, robust_correct: 0, ce_sum: 0.0, robust_sum: 0.0 }
    }

    fn log(&self, epoch: usize) -> EpochLog {
        let n = self.n.max(1) as f64;
        EpochLog {
            epoch,
            clean_accuracy: self.clean_correct as f64 / n,
            robust_accuracy: self.robust_correct as f64 / n,
            ce_loss: self.ce_sum / n,
            robust_loss: self.robust_sum / n,
        }
    }
}

/// One pass of minibatch SGD on the clean CE loss.
pub fn run_epoch_st<F: Scalar>(
    net: &Network<F>,
    data: &Dataset<F>,
    cfg: &TrainConfig,
    epoch: usize,
    opt: &mut SgdState<F>,
) -> Result<EpochLog> {
    let lr = lr_at(cfg, epoch);
    let mut acc = EpochAccumulator::new();
    for batch in shuffled_batches(data.len(), cfg.batch_size, epoch_seed(cfg.seed, epoch, 0)) {
        let x = data.batch(&batch)?;
        let y: Vec<usize> = batch.iter().map(|&i| data.labels[i]).collect();
        let logits = net.forward(&x)?;
        let loss = ops::softmax_cross_entropy(&logits, &y)?;
        let correct = argmax_correct(&logits, &y);
        let lv = loss.item().to_f64();
        loss.backward()?;
        opt.step(&net.params(), lr, cfg.momentum, cfg.weight_decay)?;
        acc.n += y.len();
        acc.clean_correct += correct;
        acc.robust_correct += correct;
        acc.ce_sum += lv * y.len() as f64;
        acc.robust_sum += lv * y.len() as f64;
    }
    Ok(acc.log(epoch))
}

/// One adversarial-training pass: each batch is replaced by its untargeted
/// PGD perturbation before the gradient step; clean examples contribute no
/// gradient. Returns the epoch's perturbed inputs in dataset order.
pub fn run_epoch_at<F: Scalar>(
    net: &Network<F>,
    data: &Dataset<F>,
    cfg: &TrainConfig,
    epoch: usize,
    opt: &mut SgdState<F>,
) -> Result<(EpochLog, Tensor<F>)> {
    let lr = lr_at(cfg, epoch);
    let mut acc = EpochAccumulator::new();
    let d = data.input_dim();
    let mut perturbed = vec![F::zero(); data.len() * d];
    let mut attack = cfg.attack.clone();
    for (bi, batch) in
        shuffled_batches(data.len(), cfg.batch_size, epoch_seed(cfg.seed, epoch, 0))
            .into_iter()
            .enumerate()
    {
        let x = data.batch(&batch)?;
        let y: Vec<usize> = batch.iter().map(|&i| data.labels[i]).collect();
        attack.seed = epoch_seed(cfg.seed, epoch, bi as u64 + 1);
        let adv = pgd_untargeted(net, &x, &y, &attack)?;
        let av = adv.to_vec();
        for (k, &i) in batch.iter().enumerate() {
            perturbed[i * d..(i + 1) * d].copy_from_slice(&av[k * d..(k + 1) * d]);
        }

        let clean_logits = net.forward(&x)?;
        acc.clean_correct += argmax_correct(&clean_logits, &y);
        acc.ce_sum +=
            ops::softmax_cross_entropy(&clean_logits, &y)?.item().to_f64() * y.len() as f64;

        let adv_logits = net.forward(&adv)?;
        let loss = ops::softmax_cross_entropy(&adv_logits, &y)?;
        acc.robust_correct += argmax_correct(&adv_logits, &y);
        acc.robust_sum += loss.item().to_f64() * y.len() as f64;
        loss.backward()?;
        opt.step(&net.params(), lr, cfg.momentum, cfg.weight_decay)?;
        acc.n += y.len();
    }
    let mut shape = vec![data.len()];
    shape.extend_from_slice(&data.input_shape);
    Ok((acc.log(epoch), Tensor::new(&shape, perturbed)?))
}

/// One TRADES pass: `L_CE(f(x),y) + β·KL(f(x)‖f(x̄))` with `x̄` from KL-PGD;
/// the gradient flows through both terms.
pub fn run_epoch_trades<F: Scalar>(
    net: &Network<F>,
    data: &Dataset<F>,
    cfg: &TrainConfig,
    epoch: usize,
    opt: &mut SgdState<F>,
) -> Result<EpochLog> {
    let lr = lr_at(cfg, epoch);
    let mut acc = EpochAccumulator::new();
    let mut attack = cfg.attack.clone();
    for (bi, batch) in
        shuffled_batches(data.len(), cfg.batch_size, epoch_seed(cfg.seed, epoch, 0))
            .into_iter()
            .enumerate()
    {
        let x = data.batch(&batch)?;
        let y: Vec<usize> = batch.iter().map(|&i| data.labels[i]).collect();
        attack.seed = epoch_seed(cfg.seed, epoch, bi as u64 + 1);
        let adv = pgd_kl(net, &x, &attack)?;

        let clean_logits = net.forward(&x)?;
        let adv_logits = net.forward(&adv)?;
        let ce = ops::softmax_cross_entropy(&clean_logits, &y)?;
        let kl = ops::kl_divergence(&clean_logits, &adv_logits)?;
        let loss = ops::add(&ce, &ops::scale(&kl, F::from_f64(cfg.beta))?)?;

        acc.clean_correct += argmax_correct(&clean_logits, &y);
        acc.robust_correct += argmax_correct(&adv_logits, &y);
        acc.ce_sum += ce.item().to_f64() * y.len() as f64;
        acc.robust_sum += kl.item().to_f64() * y.len() as f64;
        loss.backward()?;
        opt.step(&net.params(), lr, cfg.momentum, cfg.weight_decay)?;
        acc.n += y.len();
    }
    Ok(acc.log(epoch))
}

/// What a metric hook sees after an evaluated epoch: the current model's
/// epoch-relevant perturbed set (AT: the perturbations just trained on;
/// ST/TRADES: freshly generated with `eval_attack`), plus a Gaussian
/// benchmark set of matching variance.
pub struct MetricContext<'a, F: Scalar> {
    pub epoch: usize,
    pub labels: &'a [usize],
    pub clean: &'a Tensor<F>,
    pub perturbed: &'a Tensor<F>,
    pub gaussian: &'a Tensor<F>,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub logs: Vec<EpochLog>,
    /// First epoch with zero clean training error — the onset of the
    /// terminal phase of training.
    pub tpt_onset: Option<usize>,
}

/// Run the configured regime for `cfg.epochs`, invoking `hook` every
/// `cfg.metric_every` epochs and on the final epoch.
pub fn fit<F: Scalar>(
    net: &Network<F>,
    data: &Dataset<F>,
    cfg: &TrainConfig,
    mut hook: impl FnMut(&Network<F>, &MetricContext<F>) -> Result<()>,
) -> Result<FitResult> {
    cfg.validate()?;
    let mut opt = SgdState::new(net);
    let mut logs = Vec::with_capacity(cfg.epochs);
    let mut tpt_onset = None;
    let clean = data.to_tensor()?;

    for epoch in 0..cfg.epochs {
        let mut run = || -> Result<EpochLog> {
            let (log, at_perturbed) = match cfg.regime {
                Regime::St => (run_epoch_st(net, data, cfg, epoch, &mut opt)?, None),
                Regime::At => {
                    let (log, adv) = run_epoch_at(net, data, cfg, epoch, &mut opt)?;
                    (log, Some(adv))
                }
                Regime::Trades => (run_epoch_trades(net, data, cfg, epoch, &mut opt)?, None),
            };
            if log.clean_accuracy == 1.0 && tpt_onset.is_none() {
                tpt_onset = Some(epoch);
            }
            if (epoch + 1) % cfg.metric_every == 0 || epoch + 1 == cfg.epochs {
                let perturbed = match at_perturbed {
                    Some(adv) => adv,
                    None => pgd_untargeted(net, &clean, &data.labels, &cfg.eval_attack)?,
                };
                let gaussian =
                    gaussian_perturb(&clean, cfg.gaussian_sigma, epoch_seed(cfg.seed, epoch, 1))?;
                hook(
                    net,
                    &MetricContext {
                        epoch,
                        labels: &data.labels,
                        clean: &clean,
                        perturbed: &perturbed,
                        gaussian: &gaussian,
                    },
                )?;
            }
            Ok(log)
        };
        logs.push(run().map_err(|e| e.with_epoch(epoch))?);
    }
    Ok(FitResult { logs, tpt_onset })
}
