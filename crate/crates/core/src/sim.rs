//! Household and appliance dynamics.
//!
//! Each step of length `T` runs in three phases: Bernoulli task arrivals,
//! delay actions that schedule the head of each idle appliance's queue, and
//! a continuous-time advance that accounts for the energy drawn inside the
//! step. An appliance starts at most one task per step.

use std::collections::VecDeque;

use rand::Rng;
use rand_distr::{Distribution, Exp};

use crate::config::ApplianceSpec;
use crate::error::{GridError, Result};
use crate::rng::{stream, Purpose, StreamRng};

/// Wall-clock interval of step `k` on a day of `intervals_per_day` intervals.
pub fn clock_map(step: usize, intervals_per_day: usize) -> usize {
    step % intervals_per_day
}

/// Exponential duration with the given rate, clamped below at one step.
pub fn sample_duration<R: Rng + ?Sized>(rate: f64, step_hours: f64, rng: &mut R) -> f64 {
    let draw = Exp::new(rate)
        .expect("duration rate validated positive")
        .sample(rng);
    clamp_duration(draw, step_hours)
}

pub fn clamp_duration(draw: f64, step_hours: f64) -> f64 {
    draw.max(step_hours)
}

/// Runtime state of one appliance.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ApplianceRuntime {
    /// Durations of queued tasks, oldest first.
    queue: VecDeque<f64>,
    operating: bool,
    remaining_run: f64,
    pending_delay: f64,
}

impl ApplianceRuntime {
    /// `x`: the appliance ran for some time during the last step.
    pub fn operating(&self) -> bool {
        self.operating
    }

    /// `t`: hours until the appliance is free to start another task.
    pub fn time_to_free(&self) -> f64 {
        self.pending_delay + self.remaining_run
    }

    /// `l`: duration of the next queued task, 0 when the queue is empty.
    pub fn next_task_duration(&self) -> f64 {
        self.queue.front().copied().unwrap_or(0.0)
    }

    /// `q`: number of queued tasks.
    pub fn queue_len(&self) -> usize {
        self.queue.len()
    }

    pub fn remaining_run(&self) -> f64 {
        self.remaining_run
    }

    pub fn pending_delay(&self) -> f64 {
        self.pending_delay
    }

    /// A task is scheduled or running.
    pub fn is_busy(&self) -> bool {
        self.remaining_run > 0.0
    }

    pub fn queued_durations(&self) -> impl Iterator<Item = f64> + '_ {
        self.queue.iter().copied()
    }

    pub fn push_task(&mut self, duration: f64) {
        self.queue.push_back(duration);
    }

    /// Schedules the head task `delay` hours into the step if the appliance
    /// is idle. Returns whether a task was started.
    pub fn schedule(&mut self, delay: f64) -> bool {
        if self.is_busy() {
            return false;
        }
        match self.queue.pop_front() {
            Some(duration) => {
                self.pending_delay = delay;
                self.remaining_run = duration;
                true
            }
            None => false,
        }
    }

    /// Advances `step_hours` of continuous time. Returns hours of operation
    /// inside the step and whether the running task finished.
    pub fn advance(&mut self, step_hours: f64) -> (f64, bool) {
        if !self.is_busy() {
            self.operating = false;
            self.pending_delay = 0.0;
            return (0.0, false);
        }
        let wait = self.pending_delay.min(step_hours);
        let run = self.remaining_run.min(step_hours - wait);
        self.pending_delay -= wait;
        self.remaining_run -= run;
        self.operating = run > 0.0;
        let finished = self.remaining_run <= 0.0;
        if finished {
            self.remaining_run = 0.0;
        }
        (run, finished)
    }
}

/// Per-step accounting of one household.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepAccounting {
    pub energy: f64,
    /// Hours each appliance ran during the step.
    pub run_hours: Vec<f64>,
    pub arrived: u64,
    pub started: u64,
    pub completed: u64,
}

/// Local state of one household plus its private random streams.
#[derive(Clone, Debug)]
pub struct Household {
    index: usize,
    appliances: Vec<ApplianceRuntime>,
    specs: Vec<ApplianceSpec>,
    arrival_rngs: Vec<StreamRng>,
    duration_rngs: Vec<StreamRng>,
    energy_this_step: f64,
    tasks_arrived_cum: u64,
    tasks_completed_cum: u64,
    fixed_durations: bool,
}

impl Household {
    /// Fresh household whose streams are keyed by `stream_owner` under `seed`.
    pub fn new(
        index: usize,
        specs: Vec<ApplianceSpec>,
        seed: u64,
        stream_owner: usize,
        fixed_durations: bool,
    ) -> Self {
        let m = specs.len();
        Household {
            index,
            appliances: vec![ApplianceRuntime::default(); m],
            arrival_rngs: (0..m)
                .map(|a| stream(seed, stream_owner, a, Purpose::Arrival))
                .collect(),
            duration_rngs: (0..m)
                .map(|a| stream(seed, stream_owner, a, Purpose::Duration))
                .collect(),
            specs,
            energy_this_step: 0.0,
            tasks_arrived_cum: 0,
            tasks_completed_cum: 0,
            fixed_durations,
        }
    }

    pub fn appliances(&self) -> &[ApplianceRuntime] {
        &self.appliances
    }

    pub fn appliances_mut(&mut self) -> &mut [ApplianceRuntime] {
        &mut self.appliances
    }

    pub fn specs(&self) -> &[ApplianceSpec] {
        &self.specs
    }

    pub fn energy_this_step(&self) -> f64 {
        self.energy_this_step
    }

    pub fn tasks_arrived_cum(&self) -> u64 {
        self.tasks_arrived_cum
    }

    pub fn tasks_completed_cum(&self) -> u64 {
        self.tasks_completed_cum
    }

    /// Tasks that arrived but have not finished: queued plus in progress.
    pub fn tasks_outstanding(&self) -> u64 {
        self.appliances
            .iter()
            .map(|a| a.queue_len() as u64 + u64::from(a.is_busy()))
            .sum()
    }

    fn task_duration(&mut self, appliance: usize, step_hours: f64) -> f64 {
        let rate = self.specs[appliance].duration_rate;
        if self.fixed_durations {
            clamp_duration(1.0 / rate, step_hours)
        } else {
            sample_duration(rate, step_hours, &mut self.duration_rngs[appliance])
        }
    }

    /// One Bernoulli draw per appliance at interval `h`; each arrival draws
    /// its duration immediately. Returns the number of arrivals.
    pub fn sample_arrivals(&mut self, h: usize, step_hours: f64) -> u64 {
        let mut arrived = 0;
        for m in 0..self.appliances.len() {
            let p = self.specs[m].arrival_prob[h];
            if self.arrival_rngs[m].random_bool(p) {
                let duration = self.task_duration(m, step_hours);
                self.appliances[m].push_task(duration);
                arrived += 1;
            }
        }
        self.tasks_arrived_cum += arrived;
        arrived
    }

    /// Applies one delay per appliance. Busy appliances and empty queues
    /// ignore their action. Returns the number of tasks started.
    pub fn apply_actions(&mut self, delays: &[f64], step_hours: f64) -> Result<u64> {
        if delays.len() != self.appliances.len() {
            return Err(GridError::Dimension {
                context: "household actions",
                expected: self.appliances.len(),
                actual: delays.len(),
            });
        }
        if let Some((m, &d)) = delays
            .iter()
            .enumerate()
            .find(|(_, d)| !(0.0..=step_hours).contains(*d))
        {
            return Err(GridError::ActionOutOfRange {
                household: self.index,
                appliance: m,
                value: d,
                max: step_hours,
            });
        }
        let started = self
            .appliances
            .iter_mut()
            .zip(delays)
            .map(|(a, &d)| a.schedule(d))
            .filter(|&s| s)
            .count();
        Ok(started as u64)
    }

    /// Advances all appliances by one step and returns the step's accounting.
    pub fn advance_time(&mut self, step_hours: f64) -> StepAccounting {
        let mut acc = StepAccounting {
            run_hours: Vec::with_capacity(self.appliances.len()),
            ..Default::default()
        };
        for (a, spec) in self.appliances.iter_mut().zip(&self.specs) {
            let (run, finished) = a.advance(step_hours);
            acc.energy += run * spec.power;
            acc.run_hours.push(run);
            acc.completed += u64::from(finished);
        }
        self.tasks_completed_cum += acc.completed;
        self.energy_this_step = acc.energy;
        acc
    }

    /// Normalized local state `[x, t/T, l/T, q/cap]`, appended to `out`.
    pub fn write_state(&self, step_hours: f64, queue_cap: f64, out: &mut Vec<f64>) {
        out.extend(self.appliances.iter().map(|a| f64::from(u8::from(a.operating()))));
        out.extend(self.appliances.iter().map(|a| a.time_to_free() / step_hours));
        out.extend(
            self.appliances
                .iter()
                .map(|a| a.next_task_duration() / step_hours),
        );
        out.extend(self.appliances.iter().map(|a| a.queue_len() as f64 / queue_cap));
    }
}
