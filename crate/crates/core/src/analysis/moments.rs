//! Running estimates of `E|X_n|^beta` across independent trajectories.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::noise::ls_slope;
use crate::num::Real;
use crate::scalar::TrajectoryTrace;
use crate::vector::VectorTrace;

/// Fewest trajectories an estimate is computed from.
pub const MIN_TRAJECTORIES: usize = 30;

/// Growth allowed from the middle half to the last quarter of the grid.
pub const PLATEAU_FACTOR: f64 = 1.5;

/// `points` evenly spaced times in `1..=horizon`, always ending at `horizon`.
pub fn default_grid(horizon: usize, points: usize) -> Vec<u64> {
    let points = points.clamp(1, horizon.max(1));
    let mut g: Vec<u64> = (1..=points).map(|i| ((i * horizon) as f64 / points as f64).round().max(1.0) as u64).collect();
    g.dedup();
    g
}

/// Sums of `|X_n|^beta` on a time grid; merge order does not matter for the
/// counts, and summing in trajectory order keeps results bit-reproducible.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentAccumulator {
    pub grid: Vec<u64>,
    pub beta: f64,
    sum: Vec<f64>,
    sumsq: Vec<f64>,
    count: Vec<u64>,
    pub trajectories: usize,
    pub diverged: usize,
}

impl MomentAccumulator {
    pub fn new(grid: Vec<u64>, beta: f64) -> Self {
        let n = grid.len();
        Self { grid, beta, sum: vec![0.0; n], sumsq: vec![0.0; n], count: vec![0; n], trajectories: 0, diverged: 0 }
    }

    /// Adds one trajectory given `|X_n|` by step. Diverged paths are only counted.
    pub fn add_path(&mut self, magnitude: impl Fn(u64) -> Option<f64>, diverged: bool) {
        self.trajectories += 1;
        if diverged {
            self.diverged += 1;
            return;
        }
        for (i, &n) in self.grid.iter().enumerate() {
            if let Some(m) = magnitude(n) {
                let v = m.powf(self.beta);
                self.sum[i] += v;
                self.sumsq[i] += v * v;
                self.count[i] += 1;
            }
        }
    }

    pub fn add_trace<R: Real>(&mut self, t: &TrajectoryTrace<R>) {
        self.add_path(|n| t.at(n).map(|s| s.x.abs().as_f64()), t.diverged());
    }

    pub fn add_vector(&mut self, t: &VectorTrace) {
        self.add_path(|n| t.steps.get(n as usize - 1).map(|s| s.norm), t.diverged());
    }

    pub fn merge(&mut self, other: &Self) {
        assert_eq!(self.grid, other.grid, "grids differ");
        for i in 0..self.grid.len() {
            self.sum[i] += other.sum[i];
            self.sumsq[i] += other.sumsq[i];
            self.count[i] += other.count[i];
        }
        self.trajectories += other.trajectories;
        self.diverged += other.diverged;
    }

    pub fn finish(&self) -> MomentEstimate {
        let mut mean = Vec::with_capacity(self.grid.len());
        let mut std_err = Vec::with_capacity(self.grid.len());
        for i in 0..self.grid.len() {
            let c = self.count[i] as f64;
            if c == 0.0 {
                mean.push(f64::NAN);
                std_err.push(f64::NAN);
                continue;
            }
            let m = self.sum[i] / c;
            let var = if c > 1.0 { ((self.sumsq[i] - c * m * m) / (c - 1.0)).max(0.0) } else { 0.0 };
            mean.push(m);
            std_err.push((var / c).sqrt());
        }
        let plateau = self.diverged == 0 && plateau_verdict(&mean);
        MomentEstimate {
            grid: self.grid.clone(),
            beta: self.beta,
            mean,
            std_err,
            trajectories: self.trajectories,
            diverged: self.diverged,
            plateau,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentEstimate {
    pub grid: Vec<u64>,
    pub beta: f64,
    pub mean: Vec<f64>,
    pub std_err: Vec<f64>,
    pub trajectories: usize,
    pub diverged: usize,
    pub plateau: bool,
}

impl MomentEstimate {
    /// Least-squares slope of `ln mean` against time over positive means.
    pub fn log_growth_rate(&self) -> f64 {
        let pts: Vec<(f64, f64)> = self
            .grid
            .iter()
            .zip(&self.mean)
            .filter(|(_, m)| **m > 0.0 && m.is_finite())
            .map(|(&n, m)| (n as f64, m.ln()))
            .collect();
        if pts.len() < 2 {
            return 0.0;
        }
        ls_slope(&pts)
    }
}

/// True iff the largest mean over the last quarter of the grid is at most
/// [`PLATEAU_FACTOR`] times the largest over the middle half.
pub fn plateau_verdict(mean: &[f64]) -> bool {
    let g = mean.len();
    if g < 4 || mean.iter().any(|m| !m.is_finite()) {
        return false;
    }
    let mid = mean[g / 4..3 * g / 4].iter().copied().fold(0.0, f64::max);
    let last = mean[3 * g / 4..].iter().copied().fold(0.0, f64::max);
    last <= PLATEAU_FACTOR * mid
}

pub fn estimate_beta_moment<R: Real>(traces: &[TrajectoryTrace<R>], beta: f64, grid: &[u64]) -> Result<MomentEstimate> {
    if traces.len() < MIN_TRAJECTORIES {
        return Err(Error::InsufficientSamples { needed: MIN_TRAJECTORIES, got: traces.len() });
    }
    let mut acc = MomentAccumulator::new(grid.to_vec(), beta);
    for t in traces {
        acc.add_trace(t);
    }
    Ok(acc.finish())
}
