//! Non-learning baselines: zero delay, uniform random delay and the
//! day-ahead energy consumption scheduler (ECS).

use std::collections::VecDeque;

use rand::Rng;

use crate::config::{ApplianceSpec, EnvConfig, PriceMode};
use crate::env::{GridEnv, StepInfo};
use crate::error::{GridError, Result};
use crate::metrics::{compute_metrics, EnergyProfile, IterationMetrics};
use crate::pricing::{quadratic_price, reward};
use crate::rng::{child_seed, StreamRng};
use crate::rollout::{rollout, ActionSample, AgentPolicy, RolloutBatch};
use crate::sim::{ApplianceRuntime, Household};

/// Starts every task at the beginning of the step in which it is decided.
#[derive(Clone, Copy, Debug)]
pub struct ZeroDelay {
    pub n_appliances: usize,
}

impl AgentPolicy for ZeroDelay {
    fn act(&self, _: usize, _: &[f64], _: &mut StreamRng) -> ActionSample {
        ActionSample::deterministic(vec![0.0; self.n_appliances])
    }
}

/// I.i.d. Uniform[0, T] delays.
#[derive(Clone, Copy, Debug)]
pub struct UniformRandom {
    pub n_appliances: usize,
    pub max_delay: f64,
}

impl AgentPolicy for UniformRandom {
    fn act(&self, _: usize, _: &[f64], rng: &mut StreamRng) -> ActionSample {
        let delays: Vec<f64> = (0..self.n_appliances)
            .map(|_| rng.random_range(0.0..=self.max_delay))
            .collect();
        ActionSample {
            log_prob: -(self.n_appliances as f64) * self.max_delay.ln(),
            raw: delays.clone(),
            delays,
        }
    }
}

/// Runs `policy` for `steps` steps from fresh episodes seeded by `seed`,
/// the same way a training batch is collected.
pub fn evaluate_policy<P: AgentPolicy + ?Sized>(
    config: &EnvConfig,
    policy: &P,
    steps: usize,
    seed: u64,
    iteration: usize,
) -> Result<(IterationMetrics, EnergyProfile, RolloutBatch)> {
    let mut env = GridEnv::new(config.clone())?;
    let batch = rollout(&mut env, policy, steps, seed)?;
    let (m, p) = compute_metrics(&batch.infos, config, iteration, seed)?;
    Ok((m, p, batch))
}

// ---------------------------------------------------------------------------
// ECS

/// Day-ahead problem of one household:
/// minimize `Σ_h b(h)·E(h)²` subject to `Σ_h E(h) = D`, `0 ≤ E(h) ≤ cap(h)`.
#[derive(Clone, Debug, PartialEq)]
pub struct EcsProblem {
    pub horizon: usize,
    pub coeffs: Vec<f64>,
    /// Expected daily energy per appliance, kWh.
    pub daily_energy: Vec<f64>,
    /// Maximum energy per interval, kWh.
    pub power_caps: Vec<f64>,
}

/// Planned energy per interval for one household.
#[derive(Clone, Debug, PartialEq)]
pub struct EcsSchedule {
    pub energy: Vec<f64>,
}

impl EcsProblem {
    pub fn total_energy(&self) -> f64 {
        self.daily_energy.iter().sum()
    }

    pub fn objective(&self, energy: &[f64]) -> f64 {
        self.coeffs
            .iter()
            .zip(energy)
            .map(|(&b, &e)| quadratic_price(b, e))
            .sum()
    }

    /// The problem for household `n` of `config`, with per-interval caps
    /// equal to the household's total appliance power times `T`.
    pub fn for_household(config: &EnvConfig, n: usize) -> Self {
        let specs = &config.appliances[n];
        let h = config.intervals_per_day;
        let cap = specs.iter().map(|s| s.power).sum::<f64>() * config.step_hours;
        EcsProblem {
            horizon: h,
            coeffs: config.quad_coeffs.clone(),
            daily_energy: specs.iter().map(|s| ecs_daily_energy(s, h)).collect(),
            power_caps: vec![cap; h],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let h = self.horizon;
        if h == 0 || self.coeffs.len() != h || self.power_caps.len() != h {
            return Err(GridError::Infeasible(format!(
                "coefficients ({}) and caps ({}) must both have {h} entries",
                self.coeffs.len(),
                self.power_caps.len()
            )));
        }
        if let Some(b) = self.coeffs.iter().find(|b| !(**b >= 0.0 && b.is_finite())) {
            return Err(GridError::Infeasible(format!("coefficient {b} is negative or not finite")));
        }
        if let Some(c) = self.power_caps.iter().find(|c| !(**c >= 0.0 && c.is_finite())) {
            return Err(GridError::Infeasible(format!("power cap {c} is negative or not finite")));
        }
        if let Some(d) = self.daily_energy.iter().find(|d| !(**d >= 0.0 && d.is_finite())) {
            return Err(GridError::Infeasible(format!("daily energy {d} is negative or not finite")));
        }
        let total = self.total_energy();
        let room: f64 = self.power_caps.iter().sum();
        if total > room * (1.0 + 1e-12) {
            return Err(GridError::Infeasible(format!(
                "daily energy {total} kWh exceeds the summed interval caps {room} kWh"
            )));
        }
        Ok(())
    }
}

/// Expected daily energy of one appliance with fixed task length `1/λ`:
/// `Σ_h p(h) · (1/λ) · P`.
pub fn ecs_daily_energy(spec: &ApplianceSpec, intervals_per_day: usize) -> f64 {
    let length = 1.0 / spec.duration_rate;
    spec.arrival_prob[..intervals_per_day]
        .iter()
        .map(|p| p * length * spec.power)
        .sum()
}

/// Euclidean projection of `y` onto `{x : Σx = total, 0 ≤ x ≤ cap}`.
///
/// The projection is `clamp(y − τ, 0, cap)` for the shift `τ` that meets the
/// sum, found by bisection; the last rounding error goes to a free entry.
pub fn project_capped_simplex(y: &[f64], caps: &[f64], total: f64) -> Vec<f64> {
    let at = |tau: f64| -> f64 { y.iter().zip(caps).map(|(&v, &c)| (v - tau).clamp(0.0, c)).sum() };
    let spread = y.iter().fold(0.0f64, |m, v| m.max(v.abs())) + caps.iter().fold(0.0f64, |m, c| m.max(*c));
    let (mut lo, mut hi) = (-spread - 1.0, spread + 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if at(mid) > total {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * spread.max(1.0) {
            break;
        }
    }
    let mut tau = 0.5 * (lo + hi);
    if total <= 0.0 {
        return vec![0.0; y.len()];
    }
    // Solve for the shift exactly on the free set found by bisection.
    let (mut free_sum, mut free_n, mut fixed) = (0.0, 0usize, 0.0);
    for (&v, &c) in y.iter().zip(caps) {
        let z = v - tau;
        if z >= c {
            fixed += c;
        } else if z > 0.0 {
            free_sum += v;
            free_n += 1;
        }
    }
    if free_n > 0 {
        let exact = (free_sum - (total - fixed)) / free_n as f64;
        if (exact - tau).abs() <= (hi - lo).max(1e-12) * 4.0 {
            tau = exact;
        }
    }
    let mut x: Vec<f64> = y.iter().zip(caps).map(|(&v, &c)| (v - tau).clamp(0.0, c)).collect();
    let gap = total - x.iter().sum::<f64>();
    if gap != 0.0 {
        if let Some(i) = (0..x.len())
            .filter(|&i| x[i] + gap >= 0.0 && x[i] + gap <= caps[i])
            .max_by(|&a, &b| x[a].total_cmp(&x[b]))
        {
            x[i] += gap;
        }
    }
    x
}

/// Iteration budget of the projected gradient method.
pub const ECS_MAX_ITERATIONS: usize = 2_000_000;
/// Stopping tolerance on the projected-gradient residual.
pub const ECS_TOLERANCE: f64 = 1e-8;

/// Projected gradient descent with step `1 / (2·max b)` from the projected
/// flat schedule, run until `max_h |E − P(E − α∇f)| / α < 1e-8`.
pub fn ecs_solve(problem: &EcsProblem) -> Result<EcsSchedule> {
    problem.validate()?;
    let total = problem.total_energy();
    let caps = &problem.power_caps;
    let b = &problem.coeffs;
    let h = problem.horizon;
    let flat = vec![total / h as f64; h];
    let mut x = project_capped_simplex(&flat, caps, total);
    let max_b = b.iter().copied().fold(0.0, f64::max);
    if total == 0.0 || max_b == 0.0 {
        return Ok(EcsSchedule { energy: x });
    }
    let alpha = 1.0 / (2.0 * max_b);
    let mut residual = f64::INFINITY;
    for _ in 0..ECS_MAX_ITERATIONS {
        let y: Vec<f64> = x
            .iter()
            .zip(b)
            .map(|(&e, &bh)| e - alpha * 2.0 * bh * e)
            .collect();
        let next = project_capped_simplex(&y, caps, total);
        residual = next
            .iter()
            .zip(&x)
            .fold(0.0f64, |m, (a, c)| m.max((a - c).abs()))
            / alpha;
        x = next;
        if residual < ECS_TOLERANCE {
            return Ok(EcsSchedule { energy: x });
        }
    }
    Err(GridError::NotConverged {
        residual,
        iterations: ECS_MAX_ITERATIONS,
    })
}

/// One schedule per household of `config`.
pub fn ecs_plan(config: &EnvConfig) -> Result<Vec<EcsSchedule>> {
    if config.price_mode != PriceMode::Quadratic {
        return Err(GridError::Config(
            "the ECS scheduler is defined only under the quadratic price".into(),
        ));
    }
    (0..config.n_households)
        .map(|n| ecs_solve(&EcsProblem::for_household(config, n)))
        .collect()
}

/// Where realized demand comes from during ECS evaluation.
#[derive(Clone, Debug, PartialEq)]
pub enum Demand {
    /// The environment's arrival and duration process under this seed.
    Stochastic { seed: u64 },
    /// Energy `[n][h]` demanded at interval `h` of every day, as one task.
    Fixed(Vec<Vec<f64>>),
}

#[derive(Clone, Debug)]
pub struct EcsEvaluation {
    pub metrics: IterationMetrics,
    pub profile: EnergyProfile,
    /// Mean per-household daily reward if every plan were met exactly.
    pub planned_reward: f64,
    pub infos: Vec<StepInfo>,
}

impl EcsSchedule {
    /// `Σ_h (−b(h)·E(h)² + w·E(h))`.
    pub fn planned_reward(&self, coeffs: &[f64], weight: f64) -> f64 {
        self.energy
            .iter()
            .zip(coeffs)
            .map(|(&e, &b)| reward(quadratic_price(b, e), e, weight))
            .sum()
    }
}

/// Replays the plans against realized demand for `days` days.
///
/// Each interval a household consumes `min(plan, backlog)` where the
/// backlog is the energy of arrived, unserved tasks; backlog still unserved
/// at the end of a day is dropped. Tasks count as completed once their
/// energy is fully served.
pub fn ecs_evaluate(
    schedules: &[EcsSchedule],
    config: &EnvConfig,
    days: usize,
    demand: &Demand,
) -> Result<EcsEvaluation> {
    config.validate()?;
    if config.price_mode != PriceMode::Quadratic {
        return Err(GridError::Config(
            "ECS evaluation requires the quadratic price".into(),
        ));
    }
    let (n, h, t) = (config.n_households, config.intervals_per_day, config.step_hours);
    if schedules.len() != n || schedules.iter().any(|s| s.energy.len() != h) {
        return Err(GridError::Dimension {
            context: "ECS schedules",
            expected: n * h,
            actual: schedules.iter().map(|s| s.energy.len()).sum(),
        });
    }
    if let Demand::Fixed(d) = demand {
        if d.len() != n || d.iter().any(|row| row.len() != h) {
            return Err(GridError::Dimension {
                context: "fixed demand",
                expected: n * h,
                actual: d.iter().map(Vec::len).sum(),
            });
        }
    }

    let mut households: Vec<Household> = Vec::new();
    let mut backlog: Vec<VecDeque<f64>> = vec![VecDeque::new(); n];
    let mut episode = 0u64;
    let mut infos = Vec::with_capacity(days * h);
    for k in 0..days * h {
        let interval = k % h;
        let step = k % config.episode_steps;
        if let Demand::Stochastic { seed } = demand {
            if step == 0 {
                let s = child_seed(*seed, episode);
                households = (0..n)
                    .map(|i| {
                        let owner = if config.correlated_demand { 0 } else { i };
                        Household::new(i, config.appliances[i].clone(), s, owner, config.fixed_durations)
                    })
                    .collect();
                episode += 1;
            }
        }
        if interval == 0 {
            backlog.iter_mut().for_each(VecDeque::clear);
        }
        let b = config.quad_coeffs[interval];
        let mut info = StepInfo {
            step,
            interval,
            price: b,
            ..Default::default()
        };
        for (i, queue) in backlog.iter_mut().enumerate() {
            let before = queue.len();
            match demand {
                Demand::Fixed(d) if d[i][interval] > 0.0 => queue.push_back(d[i][interval]),
                Demand::Fixed(_) => {}
                Demand::Stochastic { .. } => {
                    let hh = &mut households[i];
                    hh.sample_arrivals(interval, t);
                    for (m, app) in hh.appliances_mut().iter_mut().enumerate() {
                        let power = config.appliances[i][m].power;
                        queue.extend(app.queued_durations().map(|l| l * power));
                        *app = ApplianceRuntime::default();
                    }
                }
            }
            let arrived = (queue.len() - before) as u64;

            let mut budget = schedules[i].energy[interval];
            let (mut used, mut completed) = (0.0, 0u64);
            while budget > 0.0 {
                let Some(front) = queue.front_mut() else { break };
                let take = front.min(budget);
                *front -= take;
                budget -= take;
                used += take;
                if *front <= 1e-12 {
                    queue.pop_front();
                    completed += 1;
                }
            }
            info.arrived.push(arrived);
            info.started.push(completed);
            info.completed.push(completed);
            info.energy.push(used);
            info.unit_price.push(b * used);
            info.cost.push(quadratic_price(b, used));
        }
        infos.push(info);
    }

    let (metrics, profile) = compute_metrics(&infos, config, 0, match demand {
        Demand::Stochastic { seed } => *seed,
        Demand::Fixed(_) => 0,
    })?;
    let planned_reward = schedules
        .iter()
        .map(|s| s.planned_reward(&config.quad_coeffs, config.constraint_weight))
        .sum::<f64>()
        / n as f64;
    Ok(EcsEvaluation {
        metrics,
        profile,
        planned_reward,
        infos,
    })
}
