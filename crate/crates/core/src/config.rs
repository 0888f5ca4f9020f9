//! Environment and training configuration, default appliance profiles and
//! the TOML loader documented in `docs/config.md`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{GridError, Result};

/// Static parameters of one appliance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApplianceSpec {
    pub name: String,
    /// Constant draw while running, kW.
    pub power: f64,
    /// Probability that a task arrives during each time-of-day interval.
    pub arrival_prob: Vec<f64>,
    /// Rate of the exponential task-duration distribution, 1/hours.
    pub duration_rate: f64,
}

impl ApplianceSpec {
    pub fn mean_duration(&self) -> f64 {
        1.0 / self.duration_rate
    }

    pub fn validate(&self, intervals_per_day: usize) -> Result<()> {
        if !(self.power > 0.0 && self.power.is_finite()) {
            return Err(GridError::Config(format!(
                "appliance '{}': power must be > 0, got {}",
                self.name, self.power
            )));
        }
        if !(self.duration_rate > 0.0 && self.duration_rate.is_finite()) {
            return Err(GridError::Config(format!(
                "appliance '{}': duration_rate must be > 0, got {}",
                self.name, self.duration_rate
            )));
        }
        if self.arrival_prob.len() != intervals_per_day {
            return Err(GridError::Config(format!(
                "appliance '{}': arrival_prob has {} entries, intervals_per_day is {}",
                self.name,
                self.arrival_prob.len(),
                intervals_per_day
            )));
        }
        if let Some((h, p)) = self
            .arrival_prob
            .iter()
            .enumerate()
            .find(|(_, p)| !(0.0..=1.0).contains(*p))
        {
            return Err(GridError::Config(format!(
                "appliance '{}': arrival_prob[{h}] = {p} outside [0, 1]",
                self.name
            )));
        }
        Ok(())
    }
}

/// A bump in the daily arrival-rate curve.
#[derive(Clone, Copy, Debug)]
struct Peak {
    hour: f64,
    width: f64,
    tasks_per_day: f64,
}

/// Shipped appliance presets. Values are plausible configuration defaults,
/// not measured data.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    WashingMachine,
    ClothesDryer,
    WaterHeater,
    Dishwasher,
    Refrigerator,
}

impl Preset {
    pub const ALL: [Preset; 5] = [
        Preset::WashingMachine,
        Preset::ClothesDryer,
        Preset::WaterHeater,
        Preset::Dishwasher,
        Preset::Refrigerator,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::WashingMachine => "washing_machine",
            Preset::ClothesDryer => "clothes_dryer",
            Preset::WaterHeater => "water_heater",
            Preset::Dishwasher => "dishwasher",
            Preset::Refrigerator => "refrigerator",
        }
    }

    pub fn from_name(name: &str) -> Option<Preset> {
        Preset::ALL.into_iter().find(|p| p.name() == name)
    }

    // (power kW, mean duration h, base tasks/day, peaks)
    fn parameters(self) -> (f64, f64, f64, &'static [Peak]) {
        const fn pk(hour: f64, width: f64, tasks_per_day: f64) -> Peak {
            Peak {
                hour,
                width,
                tasks_per_day,
            }
        }
        match self {
            Preset::WashingMachine => (
                0.5,
                1.0,
                0.1,
                const { &[pk(8.0, 1.0, 0.5), pk(19.0, 1.2, 0.5)] },
            ),
            Preset::ClothesDryer => (
                2.5,
                1.0,
                0.05,
                const { &[pk(9.5, 1.0, 0.3), pk(20.5, 1.2, 0.4)] },
            ),
            Preset::WaterHeater => (
                3.0,
                0.5,
                0.3,
                const { &[pk(7.0, 0.8, 1.4), pk(19.5, 1.0, 1.3)] },
            ),
            Preset::Dishwasher => (
                1.2,
                1.5,
                0.1,
                const { &[pk(8.5, 0.8, 0.4), pk(20.5, 1.0, 0.6)] },
            ),
            Preset::Refrigerator => (0.5, 0.5, 4.0, const { &[pk(18.0, 3.0, 1.0)] }),
        }
    }

    /// Expected tasks per hour at `hour` (wraps around midnight).
    fn rate_per_hour(self, hour: f64) -> f64 {
        let (_, _, base, peaks) = self.parameters();
        let bumps: f64 = peaks
            .iter()
            .map(|p| {
                let mut d = (hour - p.hour).rem_euclid(24.0);
                if d > 12.0 {
                    d -= 24.0;
                }
                p.tasks_per_day / (p.width * (2.0 * std::f64::consts::PI).sqrt())
                    * (-0.5 * (d / p.width).powi(2)).exp()
            })
            .sum();
        base / 24.0 + bumps
    }

    /// Appliance spec discretized to `intervals_per_day` intervals. The
    /// per-interval probability is the chance of at least one Poisson event
    /// of the hourly rate, so daily demand is roughly resolution independent.
    pub fn spec(self, intervals_per_day: usize) -> ApplianceSpec {
        let (power, mean_duration, _, _) = self.parameters();
        let step = 24.0 / intervals_per_day as f64;
        let arrival_prob = (0..intervals_per_day)
            .map(|h| {
                let mid = (h as f64 + 0.5) * step;
                1.0 - (-self.rate_per_hour(mid) * step).exp()
            })
            .collect();
        ApplianceSpec {
            name: self.name().to_string(),
            power,
            arrival_prob,
            duration_rate: 1.0 / mean_duration,
        }
    }
}

pub fn default_appliances(intervals_per_day: usize) -> Vec<ApplianceSpec> {
    Preset::ALL
        .iter()
        .map(|p| p.spec(intervals_per_day))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriceMode {
    /// Price proportional to the peak-to-average ratio of aggregate load.
    ParLinear,
    /// Per-household cost b(h)·E².
    Quadratic,
}

/// Denominator of the PAR price.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParDenominator {
    /// Sum over the trailing window: price = T · peak / mean.
    Window,
    /// Only the current step's aggregate (literal reading, unbounded).
    CurrentStep,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationConfig {
    pub include_price: bool,
    pub include_time: bool,
    /// Queue lengths are divided by this before entering a network.
    pub queue_cap: f64,
}

impl Default for ObservationConfig {
    fn default() -> Self {
        ObservationConfig {
            include_price: true,
            include_time: true,
            queue_cap: 10.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub n_households: usize,
    pub step_hours: f64,
    pub intervals_per_day: usize,
    pub price_window: usize,
    pub constraint_weight: f64,
    pub price_mode: PriceMode,
    pub par_denominator: ParDenominator,
    pub quad_coeffs: Vec<f64>,
    pub episode_steps: usize,
    /// `appliances[n][m]`: spec of appliance m in household n.
    pub appliances: Vec<Vec<ApplianceSpec>>,
    pub seed: u64,
    pub observation: ObservationConfig,
    /// Every task lasts exactly `max(T, 1 / duration_rate)`.
    pub fixed_durations: bool,
    /// All households draw arrivals and durations from household 0's streams.
    pub correlated_demand: bool,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig::with_households(8, 48)
    }
}

impl EnvConfig {
    /// Identical households with the default appliance presets.
    pub fn with_households(n_households: usize, intervals_per_day: usize) -> Self {
        let appliances = vec![default_appliances(intervals_per_day); n_households];
        EnvConfig {
            n_households,
            step_hours: 24.0 / intervals_per_day as f64,
            intervals_per_day,
            price_window: intervals_per_day,
            constraint_weight: 2.2,
            price_mode: PriceMode::ParLinear,
            par_denominator: ParDenominator::Window,
            quad_coeffs: vec![0.5; intervals_per_day],
            episode_steps: 240,
            appliances,
            seed: 0,
            observation: ObservationConfig::default(),
            fixed_durations: false,
            correlated_demand: false,
        }
    }

    /// Day-ahead comparison setting: hourly intervals, quadratic cost,
    /// deterministic task lengths.
    pub fn ecs_setting(n_households: usize) -> Self {
        let mut cfg = EnvConfig::with_households(n_households, 24);
        cfg.price_mode = PriceMode::Quadratic;
        cfg.fixed_durations = true;
        cfg.episode_steps = 120;
        cfg
    }

    pub fn n_appliances(&self) -> usize {
        self.appliances.first().map_or(0, Vec::len)
    }

    /// Per-household state width: flags, times-to-free, head durations, queues.
    pub fn state_dim(&self) -> usize {
        4 * self.n_appliances()
    }

    /// Number of scalar features shared by all households (price, time).
    pub fn global_dim(&self) -> usize {
        usize::from(self.observation.include_price) + usize::from(self.observation.include_time)
    }

    pub fn obs_dim(&self) -> usize {
        self.state_dim() + self.global_dim()
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(GridError::Config(m));
        if self.n_households == 0 {
            return err("n_households must be >= 1".into());
        }
        if !(self.step_hours > 0.0 && self.step_hours.is_finite()) {
            return err(format!("step_hours must be > 0, got {}", self.step_hours));
        }
        if self.intervals_per_day == 0 {
            return err("intervals_per_day must be >= 1".into());
        }
        let day = self.intervals_per_day as f64 * self.step_hours;
        if (day - 24.0).abs() > 1e-9 {
            return err(format!(
                "intervals_per_day * step_hours must equal 24 h, got {} * {} = {} h",
                self.intervals_per_day, self.step_hours, day
            ));
        }
        if self.price_window == 0 {
            return err("price_window must be >= 1".into());
        }
        if self.episode_steps == 0 {
            return err("episode_steps must be >= 1".into());
        }
        if !(self.constraint_weight >= 0.0 && self.constraint_weight.is_finite()) {
            return err(format!(
                "constraint_weight must be >= 0, got {}",
                self.constraint_weight
            ));
        }
        if self.quad_coeffs.len() != self.intervals_per_day {
            return err(format!(
                "quad_coeffs has {} entries, intervals_per_day is {}",
                self.quad_coeffs.len(),
                self.intervals_per_day
            ));
        }
        if let Some(b) = self.quad_coeffs.iter().find(|b| !(**b >= 0.0 && b.is_finite())) {
            return err(format!("quad_coeffs entries must be >= 0, got {b}"));
        }
        if self.appliances.len() != self.n_households {
            return err(format!(
                "appliances given for {} households, n_households is {}",
                self.appliances.len(),
                self.n_households
            ));
        }
        let m = self.n_appliances();
        if m == 0 {
            return err("each household needs at least one appliance".into());
        }
        for (n, specs) in self.appliances.iter().enumerate() {
            if specs.len() != m {
                return err(format!(
                    "household {n} has {} appliances, household 0 has {m}",
                    specs.len()
                ));
            }
            for spec in specs {
                spec.validate(self.intervals_per_day)?;
            }
        }
        if !(self.observation.queue_cap > 0.0) {
            return err("observation.queue_cap must be > 0".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algo {
    Ppo,
    A2c,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticMode {
    Central,
    Decentral,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub algo: Algo,
    pub critic_mode: CriticMode,
    pub gamma: f64,
    pub clip_eps: f64,
    pub entropy_coeff: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub epochs_per_iter: usize,
    pub minibatch_size: usize,
    pub critic_grad_steps: usize,
    pub critic_minibatch_size: usize,
    /// Environment steps collected per iteration.
    pub batch_steps: usize,
    /// Global gradient-norm bound; `None` disables clipping.
    pub max_grad_norm: Option<f64>,
    pub normalize_advantages: bool,
    /// Bootstrap through the episode time limit instead of treating it as terminal.
    pub bootstrap_time_limit: bool,
    /// Groups of households that act with one shared policy network.
    pub share_policies: Vec<Vec<usize>>,
    pub actor_hidden: Vec<usize>,
    pub critic_branch_width: usize,
    pub critic_merge_hidden: Vec<usize>,
    /// Hidden widths of each decentralized critic; `None` sizes them for
    /// parameter parity with the centralized critic.
    pub decentral_hidden: Option<Vec<usize>>,
    /// Write checkpoints every this many iterations (0: only at the end).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            algo: Algo::Ppo,
            critic_mode: CriticMode::Central,
            gamma: 0.99,
            clip_eps: 0.2,
            entropy_coeff: 0.01,
            actor_lr: 3e-4,
            critic_lr: 1e-3,
            epochs_per_iter: 10,
            minibatch_size: 512,
            critic_grad_steps: 20,
            critic_minibatch_size: 2048,
            batch_steps: 5040,
            max_grad_norm: Some(0.5),
            normalize_advantages: true,
            bootstrap_time_limit: false,
            share_policies: Vec::new(),
            actor_hidden: vec![64, 64],
            critic_branch_width: 64,
            critic_merge_hidden: vec![64],
            decentral_hidden: None,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, n_households: usize) -> Result<()> {
        let err = |m: String| Err(GridError::Config(m));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return err(format!("gamma must be in (0, 1], got {}", self.gamma));
        }
        if !(self.clip_eps > 0.0) {
            return err(format!("clip_eps must be > 0, got {}", self.clip_eps));
        }
        if !(self.entropy_coeff >= 0.0) {
            return err(format!(
                "entropy_coeff must be >= 0, got {}",
                self.entropy_coeff
            ));
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0) {
            return err("learning rates must be > 0".into());
        }
        if self.epochs_per_iter == 0 || self.minibatch_size == 0 || self.critic_minibatch_size == 0
        {
            return err("epochs_per_iter and minibatch sizes must be >= 1".into());
        }
        if self.batch_steps == 0 {
            return err("batch_steps must be >= 1".into());
        }
        if let Some(g) = self.max_grad_norm {
            if !(g > 0.0) {
                return err(format!("max_grad_norm must be > 0, got {g}"));
            }
        }
        if self.critic_branch_width == 0 {
            return err("critic_branch_width must be >= 1".into());
        }
        let mut seen = vec![false; n_households];
        for group in &self.share_policies {
            if group.is_empty() {
                return err("share_policies contains an empty group".into());
            }
            for &n in group {
                if n >= n_households {
                    return err(format!(
                        "share_policies names household {n}, only {n_households} exist"
                    ));
                }
                if std::mem::replace(&mut seen[n], true) {
                    return err(format!("household {n} appears in two share_policies groups"));
                }
            }
        }
        Ok(())
    }

    /// Pairs households (0,1), (2,3), ...; an odd last household stays alone.
    pub fn pairwise_sharing(n_households: usize) -> Vec<Vec<usize>> {
        (0..n_households)
            .step_by(2)
            .map(|n| (n..(n + 2).min(n_households)).collect())
            .collect()
    }
}

// ---------------------------------------------------------------------------
// TOML loader

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    #[serde(default)]
    env: EnvSection,
    #[serde(default)]
    train: TrainSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct EnvSection {
    n_households: Option<usize>,
    step_hours: Option<f64>,
    intervals_per_day: Option<usize>,
    price_window: Option<usize>,
    constraint_weight: Option<f64>,
    price_mode: Option<PriceMode>,
    par_denominator: Option<ParDenominator>,
    quad_coeffs: Option<Vec<f64>>,
    quad_coeff: Option<f64>,
    episode_steps: Option<usize>,
    seed: Option<u64>,
    include_price: Option<bool>,
    include_time: Option<bool>,
    queue_cap: Option<f64>,
    fixed_durations: Option<bool>,
    correlated_demand: Option<bool>,
    appliances: Option<Vec<ApplianceEntry>>,
    household_appliances: Option<Vec<ApplianceEntry>>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ApplianceEntry {
    /// Only meaningful in `household_appliances`.
    household: Option<usize>,
    preset: Option<String>,
    name: Option<String>,
    power: Option<f64>,
    duration_rate: Option<f64>,
    mean_duration: Option<f64>,
    arrival_prob: Option<Vec<f64>>,
    arrival_constant: Option<f64>,
}

impl ApplianceEntry {
    fn resolve(&self, intervals_per_day: usize, ctx: &str) -> Result<ApplianceSpec> {
        let base = match &self.preset {
            Some(p) => Some(
                Preset::from_name(p)
                    .ok_or_else(|| GridError::Config(format!("{ctx}: unknown preset '{p}'")))?
                    .spec(intervals_per_day),
            ),
            None => None,
        };
        let name = self
            .name
            .clone()
            .or_else(|| base.as_ref().map(|b| b.name.clone()))
            .ok_or_else(|| GridError::Config(format!("{ctx}: missing 'name' (or 'preset')")))?;
        let power = self
            .power
            .or(base.as_ref().map(|b| b.power))
            .ok_or_else(|| GridError::Config(format!("{ctx}: missing 'power'")))?;
        if self.duration_rate.is_some() && self.mean_duration.is_some() {
            return Err(GridError::Config(format!(
                "{ctx}: give either 'duration_rate' or 'mean_duration', not both"
            )));
        }
        let duration_rate = self
            .duration_rate
            .or(self.mean_duration.map(|d| 1.0 / d))
            .or(base.as_ref().map(|b| b.duration_rate))
            .ok_or_else(|| GridError::Config(format!("{ctx}: missing 'duration_rate'")))?;
        let arrival_prob = match (&self.arrival_prob, self.arrival_constant) {
            (Some(_), Some(_)) => {
                return Err(GridError::Config(format!(
                    "{ctx}: give either 'arrival_prob' or 'arrival_constant', not both"
                )))
            }
            (Some(v), None) => v.clone(),
            (None, Some(c)) => vec![c; intervals_per_day],
            (None, None) => base
                .map(|b| b.arrival_prob)
                .ok_or_else(|| GridError::Config(format!("{ctx}: missing 'arrival_prob'")))?,
        };
        let spec = ApplianceSpec {
            name,
            power,
            arrival_prob,
            duration_rate,
        };
        spec.validate(intervals_per_day)
            .map_err(|e| GridError::Config(format!("{ctx}: {e}")))?;
        Ok(spec)
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainSection {
    algo: Option<Algo>,
    critic_mode: Option<CriticMode>,
    gamma: Option<f64>,
    clip_eps: Option<f64>,
    entropy_coeff: Option<f64>,
    actor_lr: Option<f64>,
    critic_lr: Option<f64>,
    epochs_per_iter: Option<usize>,
    minibatch_size: Option<usize>,
    critic_grad_steps: Option<usize>,
    critic_minibatch_size: Option<usize>,
    batch_steps: Option<usize>,
    max_grad_norm: Option<f64>,
    normalize_advantages: Option<bool>,
    bootstrap_time_limit: Option<bool>,
    share_policies: Option<Vec<Vec<usize>>>,
    actor_hidden: Option<Vec<usize>>,
    critic_branch_width: Option<usize>,
    critic_merge_hidden: Option<Vec<usize>>,
    decentral_hidden: Option<Vec<usize>>,
    checkpoint_every: Option<usize>,
}

/// Parses a configuration document, fills defaults and validates both halves.
pub fn parse_config(text: &str) -> Result<(EnvConfig, TrainConfig)> {
    let file: FileConfig =
        toml::from_str(text).map_err(|e| GridError::Config(e.to_string().trim().to_string()))?;
    let env = resolve_env(file.env)?;
    let train = resolve_train(file.train, env.n_households)?;
    Ok((env, train))
}

pub fn load_config(path: impl AsRef<Path>) -> Result<(EnvConfig, TrainConfig)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| GridError::io(path, e))?;
    parse_config(&text).map_err(|e| match e {
        GridError::Config(m) => GridError::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

fn resolve_env(s: EnvSection) -> Result<EnvConfig> {
    let n_households = s.n_households.unwrap_or(8);
    let intervals_per_day = s.intervals_per_day.unwrap_or(48);
    let mut cfg = EnvConfig::with_households(n_households, intervals_per_day);
    if let Some(v) = s.step_hours {
        cfg.step_hours = v;
    }
    cfg.price_window = s.price_window.unwrap_or(intervals_per_day);
    if let Some(v) = s.constraint_weight {
        cfg.constraint_weight = v;
    }
    if let Some(v) = s.price_mode {
        cfg.price_mode = v;
    }
    if let Some(v) = s.par_denominator {
        cfg.par_denominator = v;
    }
    match (s.quad_coeffs, s.quad_coeff) {
        (Some(_), Some(_)) => {
            return Err(GridError::Config(
                "env: give either 'quad_coeffs' or 'quad_coeff', not both".into(),
            ))
        }
        (Some(v), None) => cfg.quad_coeffs = v,
        (None, Some(b)) => cfg.quad_coeffs = vec![b; intervals_per_day],
        (None, None) => {}
    }
    if let Some(v) = s.episode_steps {
        cfg.episode_steps = v;
    }
    if let Some(v) = s.seed {
        cfg.seed = v;
    }
    if let Some(v) = s.include_price {
        cfg.observation.include_price = v;
    }
    if let Some(v) = s.include_time {
        cfg.observation.include_time = v;
    }
    if let Some(v) = s.queue_cap {
        cfg.observation.queue_cap = v;
    }
    if let Some(v) = s.fixed_durations {
        cfg.fixed_durations = v;
    }
    if let Some(v) = s.correlated_demand {
        cfg.correlated_demand = v;
    }
    // Presets are only resolvable once H is known, and an H mismatch is
    // reported by validate() below rather than here.
    if (cfg.intervals_per_day as f64 * cfg.step_hours - 24.0).abs() > 1e-9 {
        cfg.validate()?;
    }
    if let Some(entries) = s.appliances {
        let template = entries
            .iter()
            .enumerate()
            .map(|(i, e)| {
                if e.household.is_some() {
                    return Err(GridError::Config(format!(
                        "env.appliances[{i}]: 'household' is only valid in household_appliances"
                    )));
                }
                e.resolve(intervals_per_day, &format!("env.appliances[{i}]"))
            })
            .collect::<Result<Vec<_>>>()?;
        cfg.appliances = vec![template; n_households];
    }
    if let Some(entries) = s.household_appliances {
        let mut overrides: Vec<Option<Vec<ApplianceSpec>>> = vec![None; n_households];
        for (i, e) in entries.iter().enumerate() {
            let ctx = format!("env.household_appliances[{i}]");
            let n = e
                .household
                .ok_or_else(|| GridError::Config(format!("{ctx}: missing 'household'")))?;
            if n >= n_households {
                return Err(GridError::Config(format!(
                    "{ctx}: household {n} out of range for {n_households} households"
                )));
            }
            let spec = e.resolve(intervals_per_day, &ctx)?;
            overrides[n].get_or_insert_with(Vec::new).push(spec);
        }
        for (n, o) in overrides.into_iter().enumerate() {
            if let Some(specs) = o {
                cfg.appliances[n] = specs;
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn resolve_train(s: TrainSection, n_households: usize) -> Result<TrainConfig> {
    let d = TrainConfig::default();
    let cfg = TrainConfig {
        algo: s.algo.unwrap_or(d.algo),
        critic_mode: s.critic_mode.unwrap_or(d.critic_mode),
        gamma: s.gamma.unwrap_or(d.gamma),
        clip_eps: s.clip_eps.unwrap_or(d.clip_eps),
        entropy_coeff: s.entropy_coeff.unwrap_or(d.entropy_coeff),
        actor_lr: s.actor_lr.unwrap_or(d.actor_lr),
        critic_lr: s.critic_lr.unwrap_or(d.critic_lr),
        epochs_per_iter: s.epochs_per_iter.unwrap_or(d.epochs_per_iter),
        minibatch_size: s.minibatch_size.unwrap_or(d.minibatch_size),
        critic_grad_steps: s.critic_grad_steps.unwrap_or(d.critic_grad_steps),
        critic_minibatch_size: s.critic_minibatch_size.unwrap_or(d.critic_minibatch_size),
        batch_steps: s.batch_steps.unwrap_or(d.batch_steps),
        max_grad_norm: match s.max_grad_norm {
            Some(g) if g == 0.0 => None,
            Some(g) => Some(g),
            None => d.max_grad_norm,
        },
        normalize_advantages: s.normalize_advantages.unwrap_or(d.normalize_advantages),
        bootstrap_time_limit: s.bootstrap_time_limit.unwrap_or(d.bootstrap_time_limit),
        share_policies: s.share_policies.unwrap_or(d.share_policies),
        actor_hidden: s.actor_hidden.unwrap_or(d.actor_hidden),
        critic_branch_width: s.critic_branch_width.unwrap_or(d.critic_branch_width),
        critic_merge_hidden: s.critic_merge_hidden.unwrap_or(d.critic_merge_hidden),
        decentral_hidden: s.decentral_hidden.or(d.decentral_hidden),
        checkpoint_every: s.checkpoint_every.unwrap_or(d.checkpoint_every),
    };
    cfg.validate(n_households)?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let (env, train) = parse_config("").unwrap();
        assert_eq!(env, EnvConfig::default());
        assert_eq!(train, TrainConfig::default());
        assert_eq!(env.step_hours, 0.5);
        assert_eq!(env.intervals_per_day, 48);
        assert_eq!(env.price_window, 48);
        assert_eq!(env.episode_steps, 240);
        assert_eq!(train.batch_steps, 5040);
    }

    #[test]
    fn half_hour_steps_with_48_intervals_accepted() {
        let (env, _) = parse_config("[env]\nstep_hours = 0.5\nintervals_per_day = 48\n").unwrap();
        assert_eq!(env.step_hours, 0.5);
    }

    #[test]
    fn inconsistent_day_length_rejected() {
        let e = parse_config("[env]\nstep_hours = 0.5\nintervals_per_day = 24\n").unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("24 h"), "{msg}");
        assert!(msg.contains("12"), "{msg}");
    }

    #[test]
    fn unknown_keys_are_errors() {
        let e = parse_config("[env]\nn_houshold = 3\n").unwrap_err();
        assert!(e.to_string().contains("n_houshold"), "{e}");
        assert!(parse_config("[trian]\n").is_err());
    }

    #[test]
    fn hourly_grid_derives_step_and_profiles() {
        let (env, _) = parse_config("[env]\nintervals_per_day = 24\n").unwrap();
        assert_eq!(env.step_hours, 1.0);
        assert_eq!(env.appliances[0][0].arrival_prob.len(), 24);
        assert_eq!(env.quad_coeffs.len(), 24);
    }

    #[test]
    fn appliance_entries_and_overrides() {
        let text = r#"
[env]
n_households = 3
[[env.appliances]]
preset = "dishwasher"
power = 2.0
[[env.appliances]]
name = "pump"
power = 1.0
mean_duration = 2.0
arrival_constant = 0.25
[[env.household_appliances]]
household = 2
name = "a"
power = 1.0
duration_rate = 1.0
arrival_constant = 0.0
[[env.household_appliances]]
household = 2
name = "b"
power = 1.0
duration_rate = 1.0
arrival_constant = 1.0
"#;
        let (env, _) = parse_config(text).unwrap();
        assert_eq!(env.appliances[0][0].name, "dishwasher");
        assert_eq!(env.appliances[0][0].power, 2.0);
        assert_eq!(env.appliances[1][1].duration_rate, 0.5);
        assert_eq!(env.appliances[1][1].arrival_prob, vec![0.25; 48]);
        assert_eq!(env.appliances[2][1].name, "b");
    }

    #[test]
    fn bad_appliance_named_precisely() {
        let text = "[env]\n[[env.appliances]]\nname = \"x\"\npower = -1.0\nduration_rate = 1.0\narrival_constant = 0.1\n";
        let msg = parse_config(text).unwrap_err().to_string();
        assert!(msg.contains("env.appliances[0]") && msg.contains("power"), "{msg}");

        let text = "[env]\n[[env.appliances]]\nname = \"x\"\npower = 1.0\nduration_rate = 1.0\narrival_prob = [0.1, 0.2]\n";
        let msg = parse_config(text).unwrap_err().to_string();
        assert!(msg.contains("2 entries"), "{msg}");
    }

    #[test]
    fn train_section_validated() {
        assert!(parse_config("[train]\ngamma = 1.5\n").is_err());
        assert!(parse_config("[train]\nshare_policies = [[0, 1], [1, 2]]\n").is_err());
        let (_, t) = parse_config("[train]\nalgo = \"a2c\"\nmax_grad_norm = 0.0\n").unwrap();
        assert_eq!(t.algo, Algo::A2c);
        assert_eq!(t.max_grad_norm, None);
    }

    #[test]
    fn presets_are_valid_and_plausible() {
        for h in [24, 48, 96] {
            for spec in default_appliances(h) {
                spec.validate(h).unwrap();
                assert!((0.5..=3.0).contains(&spec.power));
                assert!((0.5..=3.0).contains(&spec.mean_duration()));
            }
        }
        // Morning and evening peaks dominate the small hours.
        let wh = Preset::WaterHeater.spec(48);
        assert!(wh.arrival_prob[14] > 5.0 * wh.arrival_prob[6]);
        assert!(wh.arrival_prob[39] > 5.0 * wh.arrival_prob[6]);
    }

    #[test]
    fn pairwise_sharing_groups() {
        assert_eq!(
            TrainConfig::pairwise_sharing(5),
            vec![vec![0, 1], vec![2, 3], vec![4]]
        );
    }
}
