use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Zip};
use rand::Rng;
use rand_distr::StandardNormal;

use super::mlp::{as_row, Activation, Mlp, MlpCache};
use crate::error::Result;
use crate::rollout::{ActionSample, AgentPolicy};
use crate::rng::StreamRng;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Diagonal Gaussian over delays with a state-dependent mean in `[0, T]`
/// and state-independent log standard deviations.
///
/// Samples are clipped into `[0, T]` before they reach the environment, and
/// log-probabilities are those of the unclipped sample.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPolicy {
    mean_net: Mlp,
    log_std: Vec<f64>,
    max_delay: f64,
}

/// Forward pass over a batch of observations.
#[derive(Clone, Debug)]
pub struct PolicyPass {
    cache: MlpCache,
    pub mean: Array2<f64>,
}

impl GaussianPolicy {
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        max_delay: f64,
        rng: &mut R,
    ) -> Self {
        let mut dims = vec![obs_dim];
        dims.extend_from_slice(hidden);
        dims.push(action_dim);
        GaussianPolicy {
            mean_net: Mlp::new(&dims, Activation::Tanh, 0.01, rng),
            log_std: vec![(max_delay / 4.0).ln(); action_dim],
            max_delay,
        }
    }

    pub fn from_parts(mean_net: Mlp, log_std: Vec<f64>, max_delay: f64) -> Self {
        assert_eq!(mean_net.output_activation(), Activation::Tanh);
        assert_eq!(mean_net.output_dim(), log_std.len());
        GaussianPolicy {
            mean_net,
            log_std,
            max_delay,
        }
    }

    pub fn mean_net(&self) -> &Mlp {
        &self.mean_net
    }

    pub fn log_std(&self) -> &[f64] {
        &self.log_std
    }

    pub fn set_log_std(&mut self, log_std: &[f64]) {
        self.log_std.copy_from_slice(log_std);
    }

    pub fn max_delay(&self) -> f64 {
        self.max_delay
    }

    pub fn obs_dim(&self) -> usize {
        self.mean_net.input_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.log_std.len()
    }

    pub fn n_params(&self) -> usize {
        self.mean_net.n_params() + self.log_std.len()
    }

    /// Network parameters followed by the log standard deviations.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut p = self.mean_net.params().to_vec();
        p.extend_from_slice(&self.log_std);
        p
    }

    pub fn set_flat_params(&mut self, params: &[f64]) {
        let k = self.mean_net.n_params();
        self.mean_net.params_mut().copy_from_slice(&params[..k]);
        self.log_std.copy_from_slice(&params[k..]);
    }

    pub fn param_slices_mut(&mut self) -> [&mut [f64]; 2] {
        [self.mean_net.params_mut(), &mut self.log_std]
    }

    /// Differential entropy of the (unclipped) Gaussian.
    pub fn entropy(&self) -> f64 {
        self.log_std.iter().map(|s| s + 0.5 + HALF_LN_2PI).sum()
    }

    pub fn forward(&self, obs: ArrayView2<f64>) -> Result<PolicyPass> {
        let cache = self.mean_net.forward_cached(obs)?;
        let half = 0.5 * self.max_delay;
        let mean = cache.output().mapv(|y| half * (1.0 + y));
        Ok(PolicyPass { cache, mean })
    }

    pub fn mean_action(&self, obs: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(as_row(obs))?.mean.into_raw_vec_and_offset().0)
    }

    pub fn log_prob(&self, mean: &[f64], raw: &[f64]) -> f64 {
        mean.iter()
            .zip(raw)
            .zip(&self.log_std)
            .map(|((&mu, &a), &ls)| {
                let z = (a - mu) * (-ls).exp();
                -0.5 * z * z - ls - HALF_LN_2PI
            })
            .sum()
    }

    pub fn log_probs(&self, pass: &PolicyPass, raw: ArrayView2<f64>) -> Array1<f64> {
        Array1::from_iter(
            pass.mean
                .rows()
                .into_iter()
                .zip(raw.rows())
                .map(|(mu, a)| self.log_prob(mu.as_slice().unwrap(), &a.to_vec())),
        )
    }

    /// Gradient of `Σ_i d_logp[i] · log π(raw_i | obs_i) + log_std_bonus · Σ_m log σ_m`
    /// with respect to the flat parameters.
    pub fn backward(
        &self,
        pass: &PolicyPass,
        raw: ArrayView2<f64>,
        d_logp: ArrayView1<f64>,
        log_std_bonus: f64,
    ) -> Vec<f64> {
        let m = self.action_dim();
        let inv_var: Vec<f64> = self.log_std.iter().map(|s| (-2.0 * s).exp()).collect();
        let half = 0.5 * self.max_delay;
        let mut d_out = Array2::<f64>::zeros(pass.mean.raw_dim());
        let mut d_log_std = vec![log_std_bonus; m];
        Zip::indexed(&mut d_out)
            .and(&pass.mean)
            .and(raw)
            .for_each(|(i, j), d, &mu, &a| {
                let diff = a - mu;
                let w = d_logp[i];
                *d = w * diff * inv_var[j] * half;
                d_log_std[j] += w * (diff * diff * inv_var[j] - 1.0);
            });
        let mut grad = vec![0.0; self.n_params()];
        let k = self.mean_net.n_params();
        self.mean_net.backward(&pass.cache, d_out.view(), &mut grad[..k]);
        grad[k..].copy_from_slice(&d_log_std);
        grad
    }

    pub fn sample(&self, obs: &[f64], rng: &mut StreamRng) -> Result<ActionSample> {
        let mean = self.mean_action(obs)?;
        let raw: Vec<f64> = mean
            .iter()
            .zip(&self.log_std)
            .map(|(&mu, &ls)| {
                let eps: f64 = rng.sample(StandardNormal);
                mu + ls.exp() * eps
            })
            .collect();
        let log_prob = self.log_prob(&mean, &raw);
        let delays = raw.iter().map(|a| a.clamp(0.0, self.max_delay)).collect();
        Ok(ActionSample {
            delays,
            raw,
            log_prob,
        })
    }
}

/// One policy per household, possibly shared: `assignment[n]` indexes `policies`.
#[derive(Clone, Debug)]
pub struct PolicySet {
    pub policies: Vec<GaussianPolicy>,
    pub assignment: Vec<usize>,
    /// Act with the mean instead of sampling.
    pub deterministic: bool,
}

impl PolicySet {
    pub fn policy_for(&self, agent: usize) -> &GaussianPolicy {
        &self.policies[self.assignment[agent]]
    }

    /// Households controlled by policy `p`, in household order.
    pub fn members(&self, p: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&n| self.assignment[n] == p)
            .collect()
    }
}

impl AgentPolicy for PolicySet {
    fn act(&self, agent: usize, obs: &[f64], rng: &mut StreamRng) -> ActionSample {
        let policy = self.policy_for(agent);
        if self.deterministic {
            let mean = policy.mean_action(obs).expect("observation width fixed by config");
            let delays = mean.iter().map(|a| a.clamp(0.0, policy.max_delay)).collect();
            ActionSample {
                log_prob: policy.log_prob(&mean, &mean),
                raw: mean,
                delays,
            }
        } else {
            policy.sample(obs, rng).expect("observation width fixed by config")
        }
    }
}
