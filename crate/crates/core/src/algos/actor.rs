use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;

use super::{ppo_objective, ppo_ratio_grad};
use crate::config::TrainConfig;
use crate::error::{GridError, Result};
use crate::neural::{clip_grad_norm, Adam, GaussianPolicy};
use crate::rng::StreamRng;

/// Samples for one policy network, possibly pooled over several households.
#[derive(Clone, Debug, PartialEq)]
pub struct ActorBatch {
    pub obs: Array2<f64>,
    /// Unclipped action samples.
    pub raw: Array2<f64>,
    /// Behavior log-probabilities recorded at rollout time.
    pub old_log_probs: Array1<f64>,
    pub advantages: Array1<f64>,
}

impl ActorBatch {
    pub fn len(&self) -> usize {
        self.advantages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.advantages.is_empty()
    }

    fn select(&self, idx: &[usize]) -> ActorBatch {
        ActorBatch {
            obs: self.obs.select(Axis(0), idx),
            raw: self.raw.select(Axis(0), idx),
            old_log_probs: self.old_log_probs.select(Axis(0), idx),
            advantages: self.advantages.select(Axis(0), idx),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ActorStats {
    /// `max |ρ − 1|` over the first minibatch of the update.
    pub first_ratio_deviation: f64,
    /// Mean surrogate on the last minibatch, entropy bonus included.
    pub last_objective: f64,
    pub optimizer_steps: usize,
    /// Fraction of samples whose clip was binding, over all minibatches.
    pub clip_fraction: f64,
}

/// Mean clipped surrogate plus entropy bonus on `batch`.
pub fn ppo_surrogate(policy: &GaussianPolicy, batch: &ActorBatch, cfg: &TrainConfig) -> Result<f64> {
    let pass = policy.forward(batch.obs.view())?;
    let lp = policy.log_probs(&pass, batch.raw.view());
    let h = policy.entropy();
    let total: f64 = lp
        .iter()
        .zip(&batch.old_log_probs)
        .zip(&batch.advantages)
        .map(|((l, o), &a)| ppo_objective((l - o).exp(), a, cfg.clip_eps, h, cfg.entropy_coeff))
        .sum();
    Ok(total / batch.len() as f64)
}

/// Gradient of [`ppo_surrogate`] and the ratios it was evaluated at.
pub fn ppo_gradient(
    policy: &GaussianPolicy,
    batch: &ActorBatch,
    cfg: &TrainConfig,
) -> Result<(Vec<f64>, Array1<f64>, f64)> {
    let pass = policy.forward(batch.obs.view())?;
    let lp = policy.log_probs(&pass, batch.raw.view());
    let ratio: Array1<f64> = (&lp - &batch.old_log_probs).mapv(f64::exp);
    let b = batch.len() as f64;
    let h = policy.entropy();
    let objective = ratio
        .iter()
        .zip(&batch.advantages)
        .map(|(&r, &a)| ppo_objective(r, a, cfg.clip_eps, h, cfg.entropy_coeff))
        .sum::<f64>()
        / b;
    let d_logp: Array1<f64> = ratio
        .iter()
        .zip(&batch.advantages)
        .map(|(&r, &a)| ppo_ratio_grad(r, a, cfg.clip_eps) * r / b)
        .collect();
    let grad = policy.backward(&pass, batch.raw.view(), d_logp.view(), cfg.entropy_coeff);
    Ok((grad, ratio, objective))
}

/// Mean `log π(a|o) · A` plus entropy bonus on `batch`.
pub fn a2c_surrogate(policy: &GaussianPolicy, batch: &ActorBatch, entropy_coeff: f64) -> Result<f64> {
    let pass = policy.forward(batch.obs.view())?;
    let lp = policy.log_probs(&pass, batch.raw.view());
    Ok(lp.dot(&batch.advantages) / batch.len() as f64 + entropy_coeff * policy.entropy())
}

/// Gradient of [`a2c_surrogate`].
pub fn a2c_gradient(policy: &GaussianPolicy, batch: &ActorBatch, entropy_coeff: f64) -> Result<(Vec<f64>, f64)> {
    let pass = policy.forward(batch.obs.view())?;
    let lp = policy.log_probs(&pass, batch.raw.view());
    let b = batch.len() as f64;
    let objective = lp.dot(&batch.advantages) / b + entropy_coeff * policy.entropy();
    let d_logp = batch.advantages.mapv(|a| a / b);
    let grad = policy.backward(&pass, batch.raw.view(), d_logp.view(), entropy_coeff);
    Ok((grad, objective))
}

fn ascend(policy: &mut GaussianPolicy, opt: &mut Adam, mut grad: Vec<f64>, max_grad_norm: Option<f64>) {
    grad.iter_mut().for_each(|g| *g = -*g);
    if let Some(max) = max_grad_norm {
        clip_grad_norm(&mut grad, max);
    }
    opt.step(&mut policy.param_slices_mut(), &grad);
}

fn diverged(stage: &str) -> GridError {
    GridError::Diverged {
        iteration: 0,
        stage: stage.into(),
    }
}

/// `epochs_per_iter` passes over shuffled minibatches ascending the clipped
/// surrogate. Behavior log-probabilities stay frozen throughout.
pub fn ppo_actor_update(
    policy: &mut GaussianPolicy,
    opt: &mut Adam,
    batch: &ActorBatch,
    cfg: &TrainConfig,
    rng: &mut StreamRng,
) -> Result<ActorStats> {
    let mut stats = ActorStats::default();
    let mut clipped = 0usize;
    let mut seen = 0usize;
    let mut order: Vec<usize> = (0..batch.len()).collect();
    for _ in 0..cfg.epochs_per_iter {
        order.shuffle(rng);
        for idx in order.chunks(cfg.minibatch_size) {
            let mb = batch.select(idx);
            let (grad, ratio, objective) = ppo_gradient(policy, &mb, cfg)?;
            if !objective.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(diverged("actor objective"));
            }
            if stats.optimizer_steps == 0 {
                stats.first_ratio_deviation = ratio.iter().fold(0.0, |m, r| f64::max(m, (r - 1.0).abs()));
            }
            clipped += ratio
                .iter()
                .zip(&mb.advantages)
                .filter(|(&r, &a)| ppo_ratio_grad(r, a, cfg.clip_eps) == 0.0 && a != 0.0)
                .count();
            seen += idx.len();
            stats.last_objective = objective;
            ascend(policy, opt, grad, cfg.max_grad_norm);
            stats.optimizer_steps += 1;
        }
    }
    stats.clip_fraction = if seen > 0 { clipped as f64 / seen as f64 } else { 0.0 };
    Ok(stats)
}

/// One pass over shuffled minibatches ascending `E[log π · A]` plus the
/// entropy bonus, without ratio clipping or sample reuse.
pub fn a2c_actor_update(
    policy: &mut GaussianPolicy,
    opt: &mut Adam,
    batch: &ActorBatch,
    cfg: &TrainConfig,
    rng: &mut StreamRng,
) -> Result<ActorStats> {
    let mut stats = ActorStats {
        first_ratio_deviation: 0.0,
        ..Default::default()
    };
    let mut order: Vec<usize> = (0..batch.len()).collect();
    order.shuffle(rng);
    for idx in order.chunks(cfg.minibatch_size) {
        let mb = batch.select(idx);
        let (grad, objective) = a2c_gradient(policy, &mb, cfg.entropy_coeff)?;
        if !objective.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(diverged("actor objective"));
        }
        stats.last_objective = objective;
        ascend(policy, opt, grad, cfg.max_grad_norm);
        stats.optimizer_steps += 1;
    }
    Ok(stats)
}
