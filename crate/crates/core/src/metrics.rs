//! Per-iteration metrics and their CSV files.
//!
//! `metrics.csv` columns:
//! `iteration,seed,avg_reward_per_day,avg_cost_per_day,avg_energy_per_day,par,tasks_completed_pct,wall_time`
//!
//! `energy_profile.csv` columns:
//! `iteration,interval_index,wall_clock_label,mean_kwh`
//!
//! Floats are written in shortest round-trip form, so reading a file back
//! reproduces the written values bit for bit.

use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::config::EnvConfig;
use crate::env::StepInfo;
use crate::error::{GridError, Result};
use crate::pricing::reward;

pub const METRICS_HEADER: &str = "iteration,seed,avg_reward_per_day,avg_cost_per_day,avg_energy_per_day,par,tasks_completed_pct,wall_time";
pub const PROFILE_HEADER: &str = "iteration,interval_index,wall_clock_label,mean_kwh";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct IterationMetrics {
    pub iteration: usize,
    pub seed: u64,
    /// Per household per day.
    pub avg_reward_per_day: f64,
    pub avg_cost_per_day: f64,
    /// kWh per household per day.
    pub avg_energy_per_day: f64,
    /// Daily peak-to-average ratio of aggregate step energy, averaged over days.
    pub par: f64,
    pub tasks_completed_pct: f64,
    pub wall_time: f64,
}

impl IterationMetrics {
    /// All fields except `wall_time`, which is the only nondeterministic one.
    pub fn same_outcome(&self, other: &IterationMetrics) -> bool {
        IterationMetrics {
            wall_time: 0.0,
            ..self.clone()
        } == IterationMetrics {
            wall_time: 0.0,
            ..other.clone()
        }
    }
}

/// Mean aggregate energy per time-of-day interval.
#[derive(Clone, Debug, PartialEq)]
pub struct EnergyProfile {
    pub iteration: usize,
    pub step_hours: f64,
    pub mean_kwh: Vec<f64>,
}

impl EnergyProfile {
    pub fn peak(&self) -> f64 {
        self.mean_kwh.iter().copied().fold(0.0, f64::max)
    }
}

/// `HH:MM` at the start of interval `h`.
pub fn wall_clock_label(h: usize, step_hours: f64) -> String {
    let minutes = (h as f64 * step_hours * 60.0).round() as usize;
    format!("{:02}:{:02}", minutes / 60, minutes % 60)
}

/// Metrics over whole simulated days of step records.
///
/// Rewards are recomputed from each step's cost and energy with the
/// configured constraint weight; they equal the rewards the agents saw.
pub fn compute_metrics(
    infos: &[StepInfo],
    config: &EnvConfig,
    iteration: usize,
    seed: u64,
) -> Result<(IterationMetrics, EnergyProfile)> {
    let h = config.intervals_per_day;
    if infos.is_empty() || infos.len() % h != 0 {
        return Err(GridError::Config(format!(
            "metrics need whole days: {} steps with {h} intervals per day",
            infos.len()
        )));
    }
    let days = infos.len() / h;
    let n = config.n_households as f64;
    let w = config.constraint_weight;

    let (mut reward_sum, mut cost_sum, mut energy_sum) = (0.0, 0.0, 0.0);
    let (mut arrived, mut completed) = (0u64, 0u64);
    let mut profile = vec![0.0; h];
    let mut counts = vec![0usize; h];
    for info in infos {
        for (&c, &e) in info.cost.iter().zip(&info.energy) {
            reward_sum += reward(c, e, w);
            cost_sum += c;
            energy_sum += e;
        }
        arrived += info.arrived.iter().sum::<u64>();
        completed += info.completed.iter().sum::<u64>();
        profile[info.interval] += info.aggregate_energy();
        counts[info.interval] += 1;
    }
    for (p, &c) in profile.iter_mut().zip(&counts) {
        if c > 0 {
            *p /= c as f64;
        }
    }

    let par = infos
        .chunks(h)
        .map(|day| {
            let loads: Vec<f64> = day.iter().map(StepInfo::aggregate_energy).collect();
            let mean = loads.iter().sum::<f64>() / h as f64;
            if mean > 0.0 {
                loads.iter().copied().fold(0.0, f64::max) / mean
            } else {
                1.0
            }
        })
        .sum::<f64>()
        / days as f64;

    let per = days as f64 * n;
    let metrics = IterationMetrics {
        iteration,
        seed,
        avg_reward_per_day: reward_sum / per,
        avg_cost_per_day: cost_sum / per,
        avg_energy_per_day: energy_sum / per,
        par,
        tasks_completed_pct: if arrived > 0 {
            100.0 * completed as f64 / arrived as f64
        } else {
            100.0
        },
        wall_time: 0.0,
    };
    Ok((
        metrics,
        EnergyProfile {
            iteration,
            step_hours: config.step_hours,
            mean_kwh: profile,
        },
    ))
}

fn open_append(path: &Path, header: &str) -> Result<std::fs::File> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| GridError::io(dir, e))?;
    }
    let existing = match std::fs::File::open(path) {
        Ok(f) => {
            let mut first = String::new();
            BufReader::new(f)
                .read_line(&mut first)
                .map_err(|e| GridError::io(path, e))?;
            Some(first)
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
        Err(e) => return Err(GridError::io(path, e)),
    };
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| GridError::io(path, e))?;
    match existing.as_deref().map(str::trim_end) {
        None | Some("") => writeln!(file, "{header}").map_err(|e| GridError::io(path, e))?,
        Some(h) if h == header => {}
        Some(h) => {
            return Err(GridError::Schema {
                path: path.to_path_buf(),
                detail: format!("existing header '{h}' differs from '{header}'"),
            })
        }
    }
    Ok(file)
}

/// Creates the file with its header if needed, then appends `rows`.
pub fn write_metrics(path: impl AsRef<Path>, rows: &[IterationMetrics]) -> Result<()> {
    let path = path.as_ref();
    let mut file = open_append(path, METRICS_HEADER)?;
    let mut out = String::new();
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.iteration,
            r.seed,
            r.avg_reward_per_day,
            r.avg_cost_per_day,
            r.avg_energy_per_day,
            r.par,
            r.tasks_completed_pct,
            r.wall_time
        ));
    }
    file.write_all(out.as_bytes())
        .map_err(|e| GridError::io(path, e))
}

pub fn write_energy_profiles(path: impl AsRef<Path>, profiles: &[EnergyProfile]) -> Result<()> {
    let path = path.as_ref();
    let mut file = open_append(path, PROFILE_HEADER)?;
    let mut out = String::new();
    for p in profiles {
        for (h, v) in p.mean_kwh.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                p.iteration,
                h,
                wall_clock_label(h, p.step_hours),
                v
            ));
        }
    }
    file.write_all(out.as_bytes())
        .map_err(|e| GridError::io(path, e))
}

fn read_table(path: &Path, header: &str) -> Result<Vec<csv::StringRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| GridError::csv(path, e))?;
    let found = reader
        .headers()
        .map_err(|e| GridError::csv(path, e))?
        .iter()
        .collect::<Vec<_>>()
        .join(",");
    if found != header {
        return Err(GridError::Schema {
            path: path.to_path_buf(),
            detail: format!("header '{found}' differs from '{header}'"),
        });
    }
    reader
        .records()
        .map(|r| r.map_err(|e| GridError::csv(path, e)))
        .collect()
}

fn field<T: std::str::FromStr>(path: &Path, rec: &csv::StringRecord, i: usize, name: &str) -> Result<T> {
    rec.get(i)
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| GridError::Schema {
            path: path.to_path_buf(),
            detail: format!(
                "line {}: bad value for column '{name}'",
                rec.position().map_or(0, |p| p.line())
            ),
        })
}

pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<IterationMetrics>> {
    let path = path.as_ref();
    read_table(path, METRICS_HEADER)?
        .iter()
        .map(|r| {
            Ok(IterationMetrics {
                iteration: field(path, r, 0, "iteration")?,
                seed: field(path, r, 1, "seed")?,
                avg_reward_per_day: field(path, r, 2, "avg_reward_per_day")?,
                avg_cost_per_day: field(path, r, 3, "avg_cost_per_day")?,
                avg_energy_per_day: field(path, r, 4, "avg_energy_per_day")?,
                par: field(path, r, 5, "par")?,
                tasks_completed_pct: field(path, r, 6, "tasks_completed_pct")?,
                wall_time: field(path, r, 7, "wall_time")?,
            })
        })
        .collect()
}

/// Groups rows back into one profile per iteration, in file order.
pub fn read_energy_profiles(path: impl AsRef<Path>, step_hours: f64) -> Result<Vec<EnergyProfile>> {
    let path = path.as_ref();
    let mut out: Vec<EnergyProfile> = Vec::new();
    for r in read_table(path, PROFILE_HEADER)? {
        let iteration: usize = field(path, &r, 0, "iteration")?;
        let h: usize = field(path, &r, 1, "interval_index")?;
        let v: f64 = field(path, &r, 3, "mean_kwh")?;
        match out.last_mut() {
            Some(p) if p.iteration == iteration && p.mean_kwh.len() == h => p.mean_kwh.push(v),
            _ if h == 0 => out.push(EnergyProfile {
                iteration,
                step_hours,
                mean_kwh: vec![v],
            }),
            _ => {
                return Err(GridError::Schema {
                    path: path.to_path_buf(),
                    detail: format!("iteration {iteration}: interval {h} out of sequence"),
                })
            }
        }
    }
    Ok(out)
}
