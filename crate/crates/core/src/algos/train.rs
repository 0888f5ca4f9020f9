use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{Array1, Array2};

use super::actor::{a2c_actor_update, ppo_actor_update, ActorBatch, ActorStats};
use super::critic::CriticSet;
use super::{advantage, normalize_advantages};
use crate::config::{Algo, CriticMode, EnvConfig, TrainConfig};
use crate::env::{GridEnv, JOINT_GLOBALS};
use crate::error::{GridError, Result};
use crate::metrics::{compute_metrics, EnergyProfile, IterationMetrics};
use crate::neural::{parity_width, Adam, CentralCritic, Checkpoint, DecentralCritic, GaussianPolicy, PolicySet};
use crate::rng::{child_seed, stream, Purpose};
use crate::rollout::{rollout, RolloutBatch};

/// Stream owner used for critic initialization and minibatch sampling.
const CRITIC_OWNER: usize = 0xffff;

#[derive(Clone, Debug)]
pub struct IterationReport {
    /// Measured on the batch collected before this iteration's update.
    pub metrics: IterationMetrics,
    pub profile: EnergyProfile,
    pub critic_loss: Vec<f64>,
    /// One entry per policy network.
    pub actor_stats: Vec<ActorStats>,
}

/// Owns the environment, the policies, the critic and their optimizers for
/// one seed.
pub struct Trainer {
    env_config: EnvConfig,
    config: TrainConfig,
    seed: u64,
    env: GridEnv,
    policies: PolicySet,
    actor_opts: Vec<Adam>,
    critic: CriticSet,
    critic_opts: Vec<Adam>,
    iteration: usize,
}

/// Maps each household to its policy: one per sharing group, then one per
/// remaining household in index order.
fn assignment(n_households: usize, groups: &[Vec<usize>]) -> (Vec<usize>, usize) {
    let mut assign = vec![usize::MAX; n_households];
    let mut next = 0;
    for g in groups {
        for &n in g {
            assign[n] = next;
        }
        next += 1;
    }
    for a in assign.iter_mut().filter(|a| **a == usize::MAX) {
        *a = next;
        next += 1;
    }
    (assign, next)
}

/// Hidden widths of the decentralized critics: configured, or sized so
/// that all of them together match the centralized critic's parameters.
pub fn decentral_hidden(env: &EnvConfig, cfg: &TrainConfig) -> Vec<usize> {
    if let Some(h) = &cfg.decentral_hidden {
        return h.clone();
    }
    let n = env.n_households;
    let s = env.state_dim();
    let g = JOINT_GLOBALS;
    let own = (s + g + 1) * cfg.critic_branch_width;
    let others = if n > 1 { ((n - 1) * s + 1) * cfg.critic_branch_width } else { 0 };
    let mut dims = vec![cfg.critic_branch_width * if n > 1 { 2 } else { 1 }];
    dims.extend_from_slice(&cfg.critic_merge_hidden);
    dims.push(1);
    let central = own + others + crate::neural::Mlp::param_count(&dims);
    let h = parity_width(n, env.obs_dim(), central);
    vec![h, h]
}

impl Trainer {
    pub fn new(env_config: EnvConfig, config: TrainConfig, seed: u64) -> Result<Self> {
        env_config.validate()?;
        config.validate(env_config.n_households)?;
        if config.batch_steps % env_config.intervals_per_day != 0 {
            return Err(GridError::Config(format!(
                "batch_steps ({}) must cover whole days of {} intervals",
                config.batch_steps, env_config.intervals_per_day
            )));
        }
        let n = env_config.n_households;
        let (assign, n_policies) = assignment(n, &config.share_policies);
        let policies: Vec<GaussianPolicy> = (0..n_policies)
            .map(|p| {
                let mut rng = stream(seed, p, 0, Purpose::Init);
                GaussianPolicy::new(
                    env_config.obs_dim(),
                    env_config.n_appliances(),
                    &config.actor_hidden,
                    env_config.step_hours,
                    &mut rng,
                )
            })
            .collect();
        let actor_opts = policies
            .iter()
            .map(|p| Adam::new(p.n_params(), config.actor_lr))
            .collect();

        let critic = match config.critic_mode {
            CriticMode::Central => {
                let mut rng = stream(seed, CRITIC_OWNER, 0, Purpose::Init);
                CriticSet::Central(CentralCritic::new(
                    n,
                    env_config.state_dim(),
                    JOINT_GLOBALS,
                    config.critic_branch_width,
                    &config.critic_merge_hidden,
                    &mut rng,
                ))
            }
            CriticMode::Decentral => {
                let hidden = decentral_hidden(&env_config, &config);
                CriticSet::Decentral(
                    (0..n)
                        .map(|i| {
                            let mut rng = stream(seed, CRITIC_OWNER, i + 1, Purpose::Init);
                            DecentralCritic::new(env_config.obs_dim(), &hidden, &mut rng)
                        })
                        .collect(),
                )
            }
        };
        let critic_opts = critic.optimizers(config.critic_lr);
        let env = GridEnv::new(env_config.clone())?;
        Ok(Trainer {
            env_config,
            config,
            seed,
            env,
            policies: PolicySet {
                policies,
                assignment: assign,
                deterministic: false,
            },
            actor_opts,
            critic,
            critic_opts,
            iteration: 0,
        })
    }

    pub fn env_config(&self) -> &EnvConfig {
        &self.env_config
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn policies(&self) -> &PolicySet {
        &self.policies
    }

    pub fn critic(&self) -> &CriticSet {
        &self.critic
    }

    /// Rollout seed of iteration `i`; baselines evaluated with the same
    /// seed see the same task arrivals.
    pub fn rollout_seed(seed: u64, iteration: usize) -> u64 {
        child_seed(seed, iteration as u64)
    }

    /// Collects this iteration's batch with the current policies.
    pub fn collect(&mut self) -> Result<RolloutBatch> {
        let s = Self::rollout_seed(self.seed, self.iteration);
        let mut batch = rollout(&mut self.env, &self.policies, self.config.batch_steps, s)?;
        batch.iteration = self.iteration;
        Ok(batch)
    }

    /// Per-agent advantages under the current critic, normalized if configured.
    pub fn advantages(&self, batch: &RolloutBatch, now: &[Vec<f64>], next: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let cfg = &self.config;
        (0..batch.n_agents)
            .map(|a| {
                let mut adv: Vec<f64> = (0..batch.steps)
                    .map(|k| {
                        let done = batch.dones[k] && !cfg.bootstrap_time_limit;
                        advantage(batch.agents[a].rewards[k], next[a][k], now[a][k], cfg.gamma, done)
                    })
                    .collect();
                if cfg.normalize_advantages {
                    normalize_advantages(&mut adv);
                }
                adv
            })
            .collect()
    }

    /// Pools the samples of every household that uses policy `p`.
    pub fn actor_batch(&self, batch: &RolloutBatch, advantages: &[Vec<f64>], p: usize) -> ActorBatch {
        let members = self.policies.members(p);
        let rows = members.len() * batch.steps;
        let (mut obs, mut raw, mut old, mut adv) = (
            Vec::with_capacity(rows * batch.obs_dim),
            Vec::with_capacity(rows * batch.action_dim),
            Vec::with_capacity(rows),
            Vec::with_capacity(rows),
        );
        for &a in &members {
            let t = &batch.agents[a];
            obs.extend_from_slice(&t.obs);
            raw.extend_from_slice(&t.raw_actions);
            old.extend_from_slice(&t.log_probs);
            adv.extend_from_slice(&advantages[a]);
        }
        ActorBatch {
            obs: Array2::from_shape_vec((rows, batch.obs_dim), obs).expect("obs rows"),
            raw: Array2::from_shape_vec((rows, batch.action_dim), raw).expect("action rows"),
            old_log_probs: Array1::from(old),
            advantages: Array1::from(adv),
        }
    }

    /// One iteration: collect, measure, fit the critic, update every policy.
    pub fn step(&mut self) -> Result<IterationReport> {
        let started = Instant::now();
        let it = self.iteration;
        let batch = self.collect()?;
        let (mut metrics, profile) = compute_metrics(&batch.infos, &self.env_config, it, self.seed)?;
        let tag = |e: GridError| match e {
            GridError::Diverged { stage, .. } => GridError::Diverged {
                iteration: it,
                stage,
            },
            other => other,
        };

        let cfg = self.config.clone();
        let (data, now, next) = self
            .critic
            .prepare(&batch, cfg.gamma, cfg.bootstrap_time_limit)?;
        let advantages = self.advantages(&batch, &now, &next);
        if advantages.iter().flatten().any(|a| !a.is_finite()) {
            return Err(GridError::Diverged {
                iteration: it,
                stage: "advantages".into(),
            });
        }

        let iter_seed = child_seed(self.seed, it as u64);
        let mut critic_rng = stream(iter_seed, CRITIC_OWNER, 0, Purpose::Shuffle);
        let critic_loss = self
            .critic
            .update(
                &mut self.critic_opts,
                &data,
                cfg.critic_grad_steps,
                cfg.critic_minibatch_size,
                cfg.max_grad_norm,
                &mut critic_rng,
            )
            .map_err(tag)?;

        let mut actor_stats = Vec::with_capacity(self.policies.policies.len());
        for p in 0..self.policies.policies.len() {
            let ab = self.actor_batch(&batch, &advantages, p);
            let mut rng = stream(iter_seed, p, 0, Purpose::Shuffle);
            let policy = &mut self.policies.policies[p];
            let opt = &mut self.actor_opts[p];
            let stats = match cfg.algo {
                Algo::Ppo => ppo_actor_update(policy, opt, &ab, &cfg, &mut rng),
                Algo::A2c => a2c_actor_update(policy, opt, &ab, &cfg, &mut rng),
            }
            .map_err(tag)?;
            actor_stats.push(stats);
        }

        self.iteration += 1;
        metrics.wall_time = started.elapsed().as_secs_f64();
        Ok(IterationReport {
            metrics,
            profile,
            critic_loss,
            actor_stats,
        })
    }

    /// Runs `iterations` iterations, handing each report to `observe`.
    /// Checkpoints go to `checkpoint_dir` every `checkpoint_every`
    /// iterations and after the last one.
    pub fn train<F>(
        &mut self,
        iterations: usize,
        checkpoint_dir: Option<&Path>,
        mut observe: F,
    ) -> Result<Vec<IterationReport>>
    where
        F: FnMut(&Trainer, &IterationReport) -> Result<()>,
    {
        let mut reports = Vec::with_capacity(iterations);
        for i in 0..iterations {
            let report = self.step()?;
            observe(self, &report)?;
            if let Some(dir) = checkpoint_dir {
                let every = self.config.checkpoint_every;
                if (every > 0 && (i + 1) % every == 0) || i + 1 == iterations {
                    self.save_checkpoints(dir)?;
                }
            }
            reports.push(report);
        }
        Ok(reports)
    }

    /// Writes `actor_<p>.ckpt` per policy network and `critic.ckpt`.
    pub fn save_checkpoints(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let mut paths = Vec::new();
        for (p, policy) in self.policies.policies.iter().enumerate() {
            let path = dir.join(format!("actor_{p}.ckpt"));
            Checkpoint::from_policy(policy).save(&path)?;
            paths.push(path);
        }
        let ck = match &self.critic {
            CriticSet::Central(c) => {
                Checkpoint::from_central_critic(c, self.env_config.state_dim(), JOINT_GLOBALS)
            }
            CriticSet::Decentral(cs) => Checkpoint::from_decentral_critics(cs),
        };
        let path = dir.join("critic.ckpt");
        ck.save(&path)?;
        paths.push(path);
        Ok(paths)
    }

    /// Restores network parameters written by [`Trainer::save_checkpoints`].
    /// Optimizer moments start afresh.
    pub fn load_checkpoints(&mut self, dir: &Path) -> Result<()> {
        let mismatch = |what: &str| GridError::Checkpoint {
            path: dir.to_path_buf(),
            detail: format!("{what} does not match this configuration"),
        };
        for (p, policy) in self.policies.policies.iter_mut().enumerate() {
            let loaded = Checkpoint::load(dir.join(format!("actor_{p}.ckpt")))?.to_policy()?;
            if loaded.mean_net().dims() != policy.mean_net().dims() {
                return Err(mismatch("actor shape"));
            }
            *policy = loaded;
        }
        let ck = Checkpoint::load(dir.join("critic.ckpt"))?;
        match &mut self.critic {
            CriticSet::Central(c) => {
                let loaded = ck.to_central_critic()?;
                if loaded.n_params() != c.n_params() {
                    return Err(mismatch("critic shape"));
                }
                *c = loaded;
            }
            CriticSet::Decentral(cs) => {
                let loaded = ck.to_decentral_critics()?;
                if loaded.len() != cs.len() || loaded[0].n_params() != cs[0].n_params() {
                    return Err(mismatch("critic shape"));
                }
                *cs = loaded;
            }
        }
        self.actor_opts = self
            .policies
            .policies
            .iter()
            .map(|p| Adam::new(p.n_params(), self.config.actor_lr))
            .collect();
        self.critic_opts = self.critic.optimizers(self.config.critic_lr);
        Ok(())
    }
}
