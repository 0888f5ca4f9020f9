//! Experience collection over whole episodes.

use crate::env::{GridEnv, StepInfo, StepResult};
use crate::error::Result;
use crate::rng::{child_seed, stream, Purpose, StreamRng};

/// An action for one household: the delays sent to the environment, the
/// unclipped sample they came from and its log-density.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionSample {
    pub delays: Vec<f64>,
    pub raw: Vec<f64>,
    pub log_prob: f64,
}

impl ActionSample {
    pub fn deterministic(delays: Vec<f64>) -> Self {
        ActionSample {
            raw: delays.clone(),
            delays,
            log_prob: 0.0,
        }
    }
}

/// Decentralized decision rule: household `agent` sees only its own
/// encoded observation.
pub trait AgentPolicy {
    fn act(&self, agent: usize, obs: &[f64], rng: &mut StreamRng) -> ActionSample;
}

impl<P: AgentPolicy + ?Sized> AgentPolicy for &P {
    fn act(&self, agent: usize, obs: &[f64], rng: &mut StreamRng) -> ActionSample {
        (**self).act(agent, obs, rng)
    }
}

/// Per-household sequences, row-major `[step][feature]`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AgentTrajectory {
    pub obs: Vec<f64>,
    pub next_obs: Vec<f64>,
    pub raw_actions: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RolloutBatch {
    pub n_agents: usize,
    pub steps: usize,
    pub obs_dim: usize,
    pub action_dim: usize,
    /// Width of a joint-state row (all households plus shared features).
    pub joint_dim: usize,
    pub agents: Vec<AgentTrajectory>,
    pub joint: Vec<f64>,
    pub next_joint: Vec<f64>,
    /// Episode ended by its time limit after this step.
    pub dones: Vec<bool>,
    pub infos: Vec<StepInfo>,
    pub seed: u64,
    pub iteration: usize,
}

impl RolloutBatch {
    pub fn obs(&self, agent: usize, k: usize) -> &[f64] {
        &self.agents[agent].obs[k * self.obs_dim..(k + 1) * self.obs_dim]
    }

    pub fn next_obs(&self, agent: usize, k: usize) -> &[f64] {
        &self.agents[agent].next_obs[k * self.obs_dim..(k + 1) * self.obs_dim]
    }

    pub fn raw_action(&self, agent: usize, k: usize) -> &[f64] {
        &self.agents[agent].raw_actions[k * self.action_dim..(k + 1) * self.action_dim]
    }

    pub fn joint(&self, k: usize) -> &[f64] {
        &self.joint[k * self.joint_dim..(k + 1) * self.joint_dim]
    }

    pub fn next_joint(&self, k: usize) -> &[f64] {
        &self.next_joint[k * self.joint_dim..(k + 1) * self.joint_dim]
    }

    pub fn episodes(&self) -> usize {
        self.dones.iter().filter(|&&d| d).count()
    }

    /// Checks the equal-length and finiteness invariants.
    pub fn is_consistent(&self) -> bool {
        let k = self.steps;
        self.dones.len() == k
            && self.infos.len() == k
            && self.joint.len() == k * self.joint_dim
            && self.next_joint.len() == k * self.joint_dim
            && self.agents.len() == self.n_agents
            && self.agents.iter().all(|a| {
                a.obs.len() == k * self.obs_dim
                    && a.next_obs.len() == k * self.obs_dim
                    && a.raw_actions.len() == k * self.action_dim
                    && a.log_probs.len() == k
                    && a.rewards.len() == k
                    && a.log_probs.iter().all(|x| x.is_finite())
                    && a.rewards.iter().all(|x| x.is_finite())
            })
    }
}

/// Collects `steps` environment steps with every household following
/// `policy`. The batch starts from a fresh episode at 00:00; episodes are
/// reseeded from `seed` and restarted whenever they finish.
pub fn rollout<P: AgentPolicy + ?Sized>(
    env: &mut GridEnv,
    policy: &P,
    steps: usize,
    seed: u64,
) -> Result<RolloutBatch> {
    let cfg = env.config().clone();
    let n = cfg.n_households;
    let m = cfg.n_appliances();
    let mut action_rngs: Vec<StreamRng> =
        (0..n).map(|a| stream(seed, a, 0, Purpose::Action)).collect();

    let mut episode = 0u64;
    let mut current: StepResult = env.reset(child_seed(seed, episode));
    let mut obs = env.encode_observations(&current);
    let joint_dim = current.joint_state.values.len();
    let obs_dim = cfg.obs_dim();

    let mut batch = RolloutBatch {
        n_agents: n,
        steps,
        obs_dim,
        action_dim: m,
        joint_dim,
        agents: vec![
            AgentTrajectory {
                obs: Vec::with_capacity(steps * obs_dim),
                next_obs: Vec::with_capacity(steps * obs_dim),
                raw_actions: Vec::with_capacity(steps * m),
                log_probs: Vec::with_capacity(steps),
                rewards: Vec::with_capacity(steps),
            };
            n
        ],
        joint: Vec::with_capacity(steps * joint_dim),
        next_joint: Vec::with_capacity(steps * joint_dim),
        dones: Vec::with_capacity(steps),
        infos: Vec::with_capacity(steps),
        seed,
        iteration: 0,
    };

    let mut joint_action = vec![Vec::new(); n];
    for _ in 0..steps {
        for (a, traj) in batch.agents.iter_mut().enumerate() {
            let sample = policy.act(a, &obs[a], &mut action_rngs[a]);
            traj.obs.extend_from_slice(&obs[a]);
            traj.raw_actions.extend_from_slice(&sample.raw);
            traj.log_probs.push(sample.log_prob);
            joint_action[a] = sample.delays;
        }
        batch.joint.extend_from_slice(&current.joint_state.values);

        let next = env.step(&joint_action)?;
        let next_obs = env.encode_observations(&next);
        for (a, traj) in batch.agents.iter_mut().enumerate() {
            traj.next_obs.extend_from_slice(&next_obs[a]);
            traj.rewards.push(next.rewards[a]);
        }
        batch.next_joint.extend_from_slice(&next.joint_state.values);
        batch.dones.push(next.done);
        batch
            .infos
            .push(next.info.clone().expect("step results carry info"));

        if next.done {
            episode += 1;
            current = env.reset(child_seed(seed, episode));
            obs = env.encode_observations(&current);
        } else {
            current = next;
            obs = next_obs;
        }
    }
    Ok(batch)
}
