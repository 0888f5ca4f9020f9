//! Price signals and the per-household reward.

use std::collections::VecDeque;

use crate::config::ParDenominator;

/// Trailing window of aggregate step energies, newest last.
#[derive(Clone, Debug, PartialEq)]
pub struct PriceWindow {
    totals: VecDeque<f64>,
    capacity: usize,
}

impl PriceWindow {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "price window capacity must be >= 1");
        PriceWindow {
            totals: VecDeque::with_capacity(capacity),
            capacity,
        }
    }

    pub fn from_totals(capacity: usize, totals: &[f64]) -> Self {
        let mut w = PriceWindow::new(capacity);
        for &t in totals {
            w.push(t);
        }
        w
    }

    /// Appends an aggregate energy, evicting the oldest once full.
    pub fn push(&mut self, total: f64) {
        debug_assert!(total >= 0.0);
        if self.totals.len() == self.capacity {
            self.totals.pop_front();
        }
        self.totals.push_back(total);
    }

    pub fn clear(&mut self) {
        self.totals.clear();
    }

    pub fn len(&self) -> usize {
        self.totals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.totals.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn peak(&self) -> f64 {
        self.totals.iter().copied().fold(0.0, f64::max)
    }

    pub fn sum(&self) -> f64 {
        self.totals.iter().sum()
    }

    pub fn latest(&self) -> Option<f64> {
        self.totals.back().copied()
    }

    pub fn totals(&self) -> impl Iterator<Item = f64> + '_ {
        self.totals.iter().copied()
    }
}

/// `T · peak / mean` over the filled part of the window; `T` when the
/// window holds no energy.
///
/// With [`ParDenominator::CurrentStep`] the denominator is the latest
/// aggregate alone, scaled by the window capacity; that price grows without
/// bound as current demand vanishes.
pub fn par_price(window: &PriceWindow, step_hours: f64, denominator: ParDenominator) -> f64 {
    let peak = window.peak();
    match denominator {
        ParDenominator::Window => {
            let sum = window.sum();
            // A flat window is exactly T; the division below would round.
            if sum <= 0.0 || window.totals().all(|x| x == peak) {
                step_hours
            } else {
                window.len() as f64 * step_hours * peak / sum
            }
        }
        ParDenominator::CurrentStep => match window.latest() {
            Some(current) if current > 0.0 => {
                window.capacity() as f64 * step_hours * peak / current
            }
            _ if peak > 0.0 => f64::INFINITY,
            _ => step_hours,
        },
    }
}

/// Per-household quadratic cost `b · E²`.
pub fn quadratic_price(coeff: f64, energy: f64) -> f64 {
    coeff * energy * energy
}

/// `−cost + w · E`, where `cost` is `price · E` under linear pricing or the
/// quadratic cost under quadratic pricing.
pub fn reward(cost: f64, energy: f64, weight: f64) -> f64 {
    -cost + weight * energy
}
