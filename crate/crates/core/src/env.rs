//! Partially observed Markov game over a microgrid of households.
//!
//! Within [`GridEnv::step`] the order is: arrivals at the current interval,
//! delay actions, continuous-time advance, price, rewards. The price of step
//! `k` becomes visible to the agents as `prev_price` at step `k + 1`.

use crate::config::{EnvConfig, PriceMode};
use crate::error::{GridError, Result};
use crate::pricing::{par_price, quadratic_price, reward, PriceWindow};
use crate::sim::{clock_map, Household};

/// Local view of one household.
#[derive(Clone, Debug, PartialEq)]
pub struct GridObservation {
    pub op_flags: Vec<bool>,
    /// Hours until each appliance is free.
    pub times_to_free: Vec<f64>,
    /// Hours of the next queued task per appliance.
    pub head_durations: Vec<f64>,
    pub queue_lens: Vec<usize>,
    pub prev_price: Option<f64>,
    /// Interval of the step about to be decided, as a fraction of the day.
    pub time_of_day: Option<f64>,
}

impl GridObservation {
    pub fn dim(&self) -> usize {
        4 * self.op_flags.len()
            + usize::from(self.prev_price.is_some())
            + usize::from(self.time_of_day.is_some())
    }

    /// Network input: times and durations in steps, queues over `queue_cap`,
    /// price in units of the flat-load price `T`.
    pub fn encode(&self, step_hours: f64, queue_cap: f64) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dim());
        v.extend(self.op_flags.iter().map(|&x| f64::from(u8::from(x))));
        v.extend(self.times_to_free.iter().map(|t| t / step_hours));
        v.extend(self.head_durations.iter().map(|l| l / step_hours));
        v.extend(self.queue_lens.iter().map(|&q| q as f64 / queue_cap));
        if let Some(p) = self.prev_price {
            v.push(p / step_hours);
        }
        if let Some(t) = self.time_of_day {
            v.push(t);
        }
        v
    }
}

/// Encoded joint state: all household states in household order followed
/// by the shared features `[prev_price / T, time_of_day]`.
#[derive(Clone, Debug, PartialEq)]
pub struct JointState {
    pub values: Vec<f64>,
    pub state_dim: usize,
    pub n_households: usize,
}

pub const JOINT_GLOBALS: usize = 2;

impl JointState {
    pub fn household(&self, n: usize) -> &[f64] {
        &self.values[n * self.state_dim..(n + 1) * self.state_dim]
    }

    pub fn globals(&self) -> &[f64] {
        &self.values[self.n_households * self.state_dim..]
    }
}

/// What happened during one step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepInfo {
    /// Index of the step within the episode.
    pub step: usize,
    pub interval: usize,
    /// `E_n(k)` per household, kWh.
    pub energy: Vec<f64>,
    /// Monetary cost per household.
    pub cost: Vec<f64>,
    /// Unit price each household paid.
    pub unit_price: Vec<f64>,
    /// Grid price `p(k)` (PAR mode) or `b(h)` (quadratic mode).
    pub price: f64,
    pub arrived: Vec<u64>,
    pub started: Vec<u64>,
    pub completed: Vec<u64>,
}

impl StepInfo {
    pub fn aggregate_energy(&self) -> f64 {
        self.energy.iter().sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub observations: Vec<GridObservation>,
    pub rewards: Vec<f64>,
    pub joint_state: JointState,
    pub done: bool,
    /// `None` for the result of a reset.
    pub info: Option<StepInfo>,
}

pub struct GridEnv {
    config: EnvConfig,
    households: Vec<Household>,
    window: PriceWindow,
    step: usize,
    /// Unit price of the last step per household.
    prev_price: Vec<f64>,
    done: bool,
}

impl GridEnv {
    pub fn new(config: EnvConfig) -> Result<Self> {
        config.validate()?;
        let mut env = GridEnv {
            window: PriceWindow::new(config.price_window),
            households: Vec::new(),
            step: 0,
            prev_price: Vec::new(),
            done: false,
            config,
        };
        env.reset(env.config.seed);
        Ok(env)
    }

    /// Convenience: validate, build and reset in one go.
    pub fn reset_with(config: EnvConfig, seed: u64) -> Result<(Self, StepResult)> {
        let mut env = GridEnv::new(config)?;
        let first = env.reset(seed);
        Ok((env, first))
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn households(&self) -> &[Household] {
        &self.households
    }

    pub fn households_mut(&mut self) -> &mut [Household] {
        &mut self.households
    }

    pub fn price_window(&self) -> &PriceWindow {
        &self.window
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Empty queues, idle appliances, cleared price window, clock at 00:00.
    pub fn reset(&mut self, seed: u64) -> StepResult {
        let cfg = &self.config;
        self.households = cfg
            .appliances
            .iter()
            .enumerate()
            .map(|(n, specs)| {
                let owner = if cfg.correlated_demand { 0 } else { n };
                Household::new(n, specs.clone(), seed, owner, cfg.fixed_durations)
            })
            .collect();
        self.window.clear();
        self.step = 0;
        self.prev_price = vec![cfg.step_hours; cfg.n_households];
        self.done = false;
        StepResult {
            observations: self.observations(),
            rewards: vec![0.0; cfg.n_households],
            joint_state: self.joint_state(),
            done: false,
            info: None,
        }
    }

    /// Advances one step under `joint_action[n][m]` delays.
    pub fn step(&mut self, joint_action: &[Vec<f64>]) -> Result<StepResult> {
        if self.done {
            return Err(GridError::EpisodeFinished);
        }
        let cfg = &self.config;
        let (n_households, t) = (cfg.n_households, cfg.step_hours);
        if joint_action.len() != n_households {
            return Err(GridError::Dimension {
                context: "joint action",
                expected: n_households,
                actual: joint_action.len(),
            });
        }
        // Validate everything before mutating anything.
        for (n, a) in joint_action.iter().enumerate() {
            if a.len() != cfg.n_appliances() {
                return Err(GridError::Dimension {
                    context: "household actions",
                    expected: cfg.n_appliances(),
                    actual: a.len(),
                });
            }
            if let Some((m, &d)) = a.iter().enumerate().find(|(_, d)| !(0.0..=t).contains(*d)) {
                return Err(GridError::ActionOutOfRange {
                    household: n,
                    appliance: m,
                    value: d,
                    max: t,
                });
            }
        }

        let h = clock_map(self.step, cfg.intervals_per_day);
        let mut info = StepInfo {
            step: self.step,
            interval: h,
            ..Default::default()
        };
        for (household, action) in self.households.iter_mut().zip(joint_action) {
            let arrived = household.sample_arrivals(h, t);
            let started = household.apply_actions(action, t)?;
            let acc = household.advance_time(t);
            info.energy.push(acc.energy);
            info.arrived.push(arrived);
            info.started.push(started);
            info.completed.push(acc.completed);
        }

        self.window.push(info.aggregate_energy());
        match cfg.price_mode {
            PriceMode::ParLinear => {
                let p = par_price(&self.window, t, cfg.par_denominator);
                info.price = p;
                info.unit_price = vec![p; n_households];
                info.cost = info.energy.iter().map(|e| p * e).collect();
            }
            PriceMode::Quadratic => {
                let b = cfg.quad_coeffs[h];
                info.price = b;
                info.unit_price = info.energy.iter().map(|e| b * e).collect();
                info.cost = info.energy.iter().map(|&e| quadratic_price(b, e)).collect();
            }
        }
        let rewards = info
            .cost
            .iter()
            .zip(&info.energy)
            .map(|(&c, &e)| reward(c, e, cfg.constraint_weight))
            .collect();

        self.prev_price.clone_from(&info.unit_price);
        self.step += 1;
        self.done = self.step >= cfg.episode_steps;
        Ok(StepResult {
            observations: self.observations(),
            rewards,
            joint_state: self.joint_state(),
            done: self.done,
            info: Some(info),
        })
    }

    fn observations(&self) -> Vec<GridObservation> {
        let cfg = &self.config;
        let time = cfg
            .observation
            .include_time
            .then(|| clock_map(self.step, cfg.intervals_per_day) as f64 / cfg.intervals_per_day as f64);
        self.households
            .iter()
            .zip(&self.prev_price)
            .map(|(hh, &price)| {
                let apps = hh.appliances();
                GridObservation {
                    op_flags: apps.iter().map(|a| a.operating()).collect(),
                    times_to_free: apps.iter().map(|a| a.time_to_free()).collect(),
                    head_durations: apps.iter().map(|a| a.next_task_duration()).collect(),
                    queue_lens: apps.iter().map(|a| a.queue_len()).collect(),
                    prev_price: cfg.observation.include_price.then_some(price),
                    time_of_day: time,
                }
            })
            .collect()
    }

    fn joint_state(&self) -> JointState {
        let cfg = &self.config;
        let state_dim = cfg.state_dim();
        let mut values = Vec::with_capacity(cfg.n_households * state_dim + JOINT_GLOBALS);
        for hh in &self.households {
            hh.write_state(cfg.step_hours, cfg.observation.queue_cap, &mut values);
        }
        let mean_price = self.prev_price.iter().sum::<f64>() / self.prev_price.len() as f64;
        values.push(mean_price / cfg.step_hours);
        values.push(
            clock_map(self.step, cfg.intervals_per_day) as f64 / cfg.intervals_per_day as f64,
        );
        JointState {
            values,
            state_dim,
            n_households: cfg.n_households,
        }
    }

    pub fn encode_observations(&self, result: &StepResult) -> Vec<Vec<f64>> {
        let cfg = &self.config;
        result
            .observations
            .iter()
            .map(|o| o.encode(cfg.step_hours, cfg.observation.queue_cap))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ApplianceSpec;

    fn const_config(n: usize, p: f64, rate: f64) -> EnvConfig {
        let mut cfg = EnvConfig::with_households(n, 48);
        let spec = ApplianceSpec {
            name: "a".into(),
            power: 1.0,
            arrival_prob: vec![p; 48],
            duration_rate: rate,
        };
        cfg.appliances = vec![vec![spec.clone(), spec]; n];
        cfg
    }

    #[test]
    fn reset_starts_empty() {
        let (env, r) = GridEnv::reset_with(EnvConfig::default(), 4).unwrap();
        assert_eq!(r.observations.len(), 8);
        for o in &r.observations {
            assert!(o.op_flags.iter().all(|x| !x));
            assert!(o.queue_lens.iter().all(|&q| q == 0));
            assert_eq!(o.prev_price, Some(0.5));
            assert_eq!(o.time_of_day, Some(0.0));
            assert_eq!(o.dim(), 22);
        }
        assert!(env.households().iter().all(|h| h.energy_this_step() == 0.0));
        assert!(env.price_window().is_empty());
    }

    #[test]
    fn reset_is_deterministic() {
        let (_, a) = GridEnv::reset_with(EnvConfig::default(), 9).unwrap();
        let (_, b) = GridEnv::reset_with(EnvConfig::default(), 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn inconsistent_clock_rejected() {
        let mut cfg = EnvConfig::default();
        cfg.intervals_per_day = 24;
        let e = GridEnv::new(cfg).err().unwrap();
        assert!(e.to_string().contains("24 h"));
    }

    #[test]
    fn no_demand_no_reward() {
        let (mut env, _) = GridEnv::reset_with(const_config(3, 0.0, 1.0), 1).unwrap();
        let action = vec![vec![0.0, 0.25]; 3];
        for _ in 0..240 {
            let r = env.step(&action).unwrap();
            assert!(r.rewards.iter().all(|&x| x == 0.0));
        }
        assert!(env.is_done());
    }

    #[test]
    fn stepping_finished_episode_is_an_error() {
        let mut cfg = const_config(1, 0.5, 1.0);
        cfg.episode_steps = 3;
        let (mut env, _) = GridEnv::reset_with(cfg, 1).unwrap();
        let a = vec![vec![0.0; 2]];
        assert!(!env.step(&a).unwrap().done);
        assert!(!env.step(&a).unwrap().done);
        assert!(env.step(&a).unwrap().done);
        assert!(matches!(env.step(&a), Err(GridError::EpisodeFinished)));
        env.reset(2);
        assert!(env.step(&a).is_ok());
    }

    #[test]
    fn bad_actions_rejected_without_side_effects() {
        let (mut env, _) = GridEnv::reset_with(const_config(2, 1.0, 1.0), 1).unwrap();
        let e = env.step(&[vec![0.0, 0.0], vec![0.0, 0.7]]).unwrap_err();
        assert!(matches!(
            e,
            GridError::ActionOutOfRange {
                household: 1,
                appliance: 1,
                ..
            }
        ));
        assert_eq!(env.step_count(), 0);
        assert_eq!(env.households()[0].tasks_arrived_cum(), 0);
        assert!(env.step(&[vec![0.0, 0.0]]).is_err());
    }

    #[test]
    fn correlated_households_get_identical_rewards() {
        let mut cfg = EnvConfig::default();
        cfg.n_households = 2;
        cfg.appliances.truncate(2);
        cfg.correlated_demand = true;
        let (mut env, _) = GridEnv::reset_with(cfg, 5).unwrap();
        let a = vec![vec![0.1; 5]; 2];
        let mut total = 0.0;
        for _ in 0..240 {
            let r = env.step(&a).unwrap();
            assert_eq!(r.rewards[0], r.rewards[1]);
            assert_eq!(r.observations[0], r.observations[1]);
            total += r.rewards[0].abs();
        }
        assert!(total > 0.0);
    }

    #[test]
    fn rewards_match_info_exactly() {
        let (mut env, _) = GridEnv::reset_with(EnvConfig::default(), 3).unwrap();
        let w = env.config().constraint_weight;
        let a = vec![vec![0.2; 5]; 8];
        for _ in 0..100 {
            let r = env.step(&a).unwrap();
            let info = r.info.unwrap();
            for n in 0..8 {
                let e = info.energy[n];
                assert_eq!(r.rewards[n], -(info.price * e) + w * e);
            }
        }
    }

    #[test]
    fn observation_flags_control_dimension() {
        let mut cfg = EnvConfig::default();
        cfg.observation.include_time = false;
        let (env, r) = GridEnv::reset_with(cfg.clone(), 1).unwrap();
        assert_eq!(env.encode_observations(&r)[0].len(), 21);
        cfg.observation.include_price = false;
        let (env, r) = GridEnv::reset_with(cfg.clone(), 1).unwrap();
        assert_eq!(env.encode_observations(&r)[0].len(), 20);
        assert_eq!(cfg.obs_dim(), 20);
    }

    #[test]
    fn joint_state_concatenates_in_household_order() {
        let (mut env, _) = GridEnv::reset_with(EnvConfig::default(), 11).unwrap();
        let a = vec![vec![0.0; 5]; 8];
        for _ in 0..20 {
            env.step(&a).unwrap();
        }
        let r = env.step(&a).unwrap();
        let obs = env.encode_observations(&r);
        for n in 0..8 {
            assert_eq!(r.joint_state.household(n), &obs[n][..20]);
        }
        assert_eq!(r.joint_state.values.len(), 8 * 20 + JOINT_GLOBALS);
        assert_eq!(r.joint_state.globals()[1], 21.0 / 48.0);
    }

    #[test]
    fn price_is_seen_one_step_later() {
        let (mut env, _) = GridEnv::reset_with(EnvConfig::default(), 2).unwrap();
        let a = vec![vec![0.0; 5]; 8];
        for _ in 0..30 {
            let r = env.step(&a).unwrap();
            let p = r.info.as_ref().unwrap().price;
            assert!(r.observations.iter().all(|o| o.prev_price == Some(p)));
        }
    }

    #[test]
    fn quadratic_mode_costs() {
        let mut cfg = EnvConfig::ecs_setting(2);
        cfg.quad_coeffs = (0..24).map(|h| 0.1 + h as f64 * 0.01).collect();
        let (mut env, _) = GridEnv::reset_with(cfg, 2).unwrap();
        let a = vec![vec![0.0; 5]; 2];
        for k in 0..48 {
            let r = env.step(&a).unwrap();
            let info = r.info.unwrap();
            let b = 0.1 + (k % 24) as f64 * 0.01;
            assert_eq!(info.price, b);
            for n in 0..2 {
                let e = info.energy[n];
                assert_eq!(info.cost[n], b * e * e);
                assert_eq!(r.rewards[n], -(b * e * e) + 2.2 * e);
            }
        }
    }
}
