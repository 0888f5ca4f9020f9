//! Actor-critic training: one-step advantages, critic regression, the
//! clipped PPO update, vanilla A2C and the iteration loop.

mod actor;
mod critic;
mod train;

pub use actor::{
    a2c_actor_update, a2c_gradient, a2c_surrogate, ppo_actor_update, ppo_gradient, ppo_surrogate,
    ActorBatch, ActorStats,
};
pub use critic::{critic_update, CriticData, CriticSet, ValueModel};
pub use train::{decentral_hidden, IterationReport, Trainer};

/// One-step TD advantage `r + γ·V(s')·(1 − done) − V(s)`.
pub fn advantage(reward: f64, v_next: f64, v_now: f64, gamma: f64, done: bool) -> f64 {
    let bootstrap = if done { 0.0 } else { gamma * v_next };
    reward + bootstrap - v_now
}

/// Critic regression target `r + γ·V(s')·(1 − done)`.
pub fn td_target(reward: f64, v_next: f64, gamma: f64, done: bool) -> f64 {
    advantage(reward, v_next, 0.0, gamma, done)
}

/// Per-sample PPO objective `min(ρA, clip(ρ, 1−ε, 1+ε)·A) + c·H`.
pub fn ppo_objective(ratio: f64, adv: f64, clip_eps: f64, entropy: f64, entropy_coeff: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps);
    (ratio * adv).min(clipped * adv) + entropy_coeff * entropy
}

/// Derivative of the clipped term with respect to `ρ`: `A` where the
/// unclipped branch is selected, zero where the clip binds.
pub fn ppo_ratio_grad(ratio: f64, adv: f64, clip_eps: f64) -> f64 {
    let clip_binds = (adv > 0.0 && ratio > 1.0 + clip_eps) || (adv < 0.0 && ratio < 1.0 - clip_eps);
    if clip_binds {
        0.0
    } else {
        adv
    }
}

/// Shifts to zero mean and scales to unit variance. A constant slice is
/// only centered.
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.is_empty() {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    let scale = if std > 1e-12 { 1.0 / std } else { 1.0 };
    adv.iter_mut().for_each(|a| *a = (*a - mean) * scale);
}
