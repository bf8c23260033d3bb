//! Tails of the emergency duration `tau` and of the per-round contraction `Y`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::noise::ls_slope;
use crate::num::Real;
use crate::params::ControllerConfig;
use crate::scalar::{RoundRecord, TrajectoryTrace};

/// Fewest completed rounds a `tau` tail is computed from.
pub const MIN_ROUNDS: u64 = 100;

const WILSON_Z: f64 = 1.96;

/// Empirical survival `P(V >= t)` at fixed abscissae with Wilson intervals.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailEstimate {
    pub abscissae: Vec<f64>,
    /// Samples with `V >= t`.
    pub counts: Vec<u64>,
    pub total: u64,
    pub survival: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

fn wilson(k: u64, n: u64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n = n as f64;
    let p = k as f64 / n;
    let z2 = WILSON_Z * WILSON_Z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = WILSON_Z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

impl TailEstimate {
    pub fn from_counts(abscissae: Vec<f64>, counts: Vec<u64>, total: u64) -> Self {
        let survival = counts.iter().map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 }).collect();
        let (lower, upper) = counts.iter().map(|&c| wilson(c, total)).unzip();
        Self { abscissae, counts, total, survival, lower, upper }
    }

    pub fn is_nonincreasing(&self) -> bool {
        self.survival.windows(2).all(|w| w[1] <= w[0])
    }

    /// Least-squares slope of `ln P(V >= t)` against `t`, over abscissae with at
    /// least `min_count` samples.
    pub fn log_survival_slope(&self, min_count: u64) -> Option<f64> {
        let pts: Vec<(f64, f64)> = self.points(min_count).map(|(t, s)| (t, s.ln())).collect();
        (pts.len() >= 2).then(|| ls_slope(&pts))
    }

    /// Least-squares slope of `ln P(V >= t)` against `ln t` for `t >= t_min`.
    pub fn loglog_slope(&self, min_count: u64, t_min: f64) -> Option<f64> {
        let pts: Vec<(f64, f64)> = self.points(min_count).filter(|(t, _)| *t >= t_min).map(|(t, s)| (t.ln(), s.ln())).collect();
        (pts.len() >= 2).then(|| ls_slope(&pts))
    }

    fn points(&self, min_count: u64) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.abscissae
            .iter()
            .zip(&self.counts)
            .zip(&self.survival)
            .filter(move |((_, &c), _)| c >= min_count && c > 0)
            .map(|((&t, _), &s)| (t, s))
    }
}

/// Counts of completed rounds by `tau`.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TauHistogram {
    pub counts: Vec<u64>,
    pub max_tau: u64,
    /// Round with the largest `tau` as `(trajectory index, round id)`.
    pub argmax: Option<(u64, u64)>,
}

impl TauHistogram {
    pub fn add_rounds(&mut self, index: u64, rounds: &[RoundRecord]) {
        for r in rounds.iter().filter(|r| r.complete && r.id > 0) {
            let t = r.tau as usize;
            if self.counts.len() <= t {
                self.counts.resize(t + 1, 0);
            }
            self.counts[t] += 1;
            if self.argmax.is_none() || r.tau > self.max_tau {
                self.max_tau = r.tau;
                self.argmax = Some((index, r.id));
            }
        }
    }

    pub fn merge(&mut self, other: &Self) {
        if self.counts.len() < other.counts.len() {
            self.counts.resize(other.counts.len(), 0);
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        if other.argmax.is_some() && (self.argmax.is_none() || other.max_tau > self.max_tau) {
            self.max_tau = other.max_tau;
            self.argmax = other.argmax;
        }
    }

    pub fn rounds(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn tail(&self) -> TailEstimate {
        let total = self.rounds();
        let mut counts = vec![0u64; self.counts.len()];
        let mut acc = 0;
        for j in (0..self.counts.len()).rev() {
            acc += self.counts[j];
            counts[j] = acc;
        }
        TailEstimate::from_counts((0..counts.len()).map(|j| j as f64).collect(), counts, total)
    }
}

/// `P(tau >= j)` over completed rounds.
pub fn tau_tail<R: Real>(traces: &[TrajectoryTrace<R>]) -> Result<TailEstimate> {
    let mut h = TauHistogram::default();
    for t in traces {
        h.add_rounds(t.index, &t.rounds);
    }
    if h.rounds() < MIN_ROUNDS {
        return Err(Error::InsufficientSamples { needed: MIN_ROUNDS as usize, got: h.rounds() as usize });
    }
    Ok(h.tail())
}

/// Half the theoretical geometric rate: `-(alpha - Delta) ln(P/a) / 2`.
pub fn tau_slope_threshold(alpha: f64, gap: f64, probe: f64, gain: f64) -> f64 {
    -0.5 * (alpha - gap) * (probe / gain).ln()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayVerdict {
    pub slope: Option<f64>,
    /// The slope is an upper bound from a Wilson interval rather than a fit.
    pub bounded: bool,
    pub threshold: f64,
    pub monotone: bool,
    pub pass: bool,
}

/// Survival must be nonincreasing and decay at least at the threshold rate over
/// abscissae with at least `min_count` samples. When fewer than two abscissae
/// qualify, the slope from the first point to the Wilson upper bound at the
/// first sparse abscissa is used instead.
pub fn decay_verdict(tail: &TailEstimate, threshold: f64, min_count: u64) -> DecayVerdict {
    let monotone = tail.is_nonincreasing();
    // A tail that never leaves zero has nothing to fit and passes.
    let empty_tail = tail.counts.iter().skip(1).all(|&c| c == 0);
    let mut slope = tail.log_survival_slope(min_count);
    let mut bounded = false;
    if slope.is_none() && !empty_tail && tail.counts.first().is_some_and(|&c| c >= min_count) {
        if let Some(j) = tail.counts.iter().position(|&c| c < min_count) {
            let rise = tail.abscissae[j] - tail.abscissae[0];
            slope = Some((tail.upper[j].ln() - tail.survival[0].ln()) / rise);
            bounded = true;
        }
    }
    let pass = monotone && (empty_tail || slope.is_some_and(|s| s <= threshold));
    DecayVerdict { slope, bounded, threshold, monotone, pass }
}

/// Abscissae `2^(i/4)` from `2^-10` to `2^20` for the `Y` tail.
pub fn y_abscissae() -> Vec<f64> {
    (-40..=80).map(|i| 2f64.powf(i as f64 / 4.0)).collect()
}

/// Per-round contraction values `Y_m = X~_{m+1} / (X~_m + B/((1 - a/M)(1 - 3 delta)))`
/// where `X~_m = T_prev` and `X~_{m+1} = (1-delta)^(k-1-tau) T` with
/// `T = max{|X_{m+k}|, ..., |X_{m+k+tau}|, C_{m+k+tau}}` the end-of-round envelope.
pub fn round_y_values<R: Real>(trace: &TrajectoryTrace<R>, gain: R, config: &ControllerConfig<R>) -> Vec<f64> {
    let a = gain.as_f64();
    let m = config.bins as f64;
    let delta = config.delta.as_f64();
    let k = config.round_len as i32;
    let offset = config.noise_bound.as_f64() / ((1.0 - a / m) * (1.0 - 3.0 * delta));
    let mut out = Vec::new();
    let mut prev: Option<f64> = None;
    for r in trace.rounds.iter().filter(|r| r.id > 0) {
        let Some(start) = trace.at(r.start) else { continue };
        let xm = prev.unwrap_or(start.c.as_f64());
        if !r.complete {
            break;
        }
        // Tests of this round and the passing test opening the next one.
        let first = r.start + config.round_len as u64;
        let last = r.start + r.len;
        let mut env = 0.0f64;
        for n in first..=last {
            if let Some(s) = trace.at(n) {
                env = env.max(s.x.abs().as_f64());
            }
        }
        if let Some(s) = trace.at(last) {
            env = env.max(s.c.as_f64());
        }
        let xt = (1.0 - delta).powi(k - 1 - r.tau as i32) * env;
        out.push(xt / (xm + offset));
        prev = Some(env);
    }
    out
}

/// Streaming counts for the `Y` tail.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContractionAccumulator {
    pub abscissae: Vec<f64>,
    /// `hist[i]`: samples exceeding exactly the first `i` abscissae.
    hist: Vec<u64>,
    pub total: u64,
    pub contracting: u64,
    pub target: f64,
    pub max: f64,
}

impl ContractionAccumulator {
    pub fn new(delta: f64) -> Self {
        let abscissae = y_abscissae();
        let n = abscissae.len();
        Self { abscissae, hist: vec![0; n + 1], total: 0, contracting: 0, target: 1.0 - 3.0 * delta, max: 0.0 }
    }

    pub fn add(&mut self, values: &[f64]) {
        for &y in values {
            self.total += 1;
            if y <= self.target {
                self.contracting += 1;
            }
            self.max = self.max.max(y);
            self.hist[self.abscissae.partition_point(|&t| t <= y)] += 1;
        }
    }

    pub fn merge(&mut self, other: &Self) {
        for (a, b) in self.hist.iter_mut().zip(&other.hist) {
            *a += b;
        }
        self.total += other.total;
        self.contracting += other.contracting;
        self.max = self.max.max(other.max);
    }

    pub fn finish(&self) -> RoundContraction {
        let n = self.abscissae.len();
        let mut counts = vec![0u64; n];
        let mut acc = 0;
        for i in (0..n).rev() {
            acc += self.hist[i + 1];
            counts[i] = acc;
        }
        RoundContraction {
            tail: TailEstimate::from_counts(self.abscissae.clone(), counts, self.total),
            rounds: self.total,
            fraction_contracting: if self.total == 0 { 0.0 } else { self.contracting as f64 / self.total as f64 },
            max: self.max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundContraction {
    pub tail: TailEstimate,
    pub rounds: u64,
    /// Fraction of rounds with `Y <= 1 - 3 delta`.
    pub fraction_contracting: f64,
    pub max: f64,
}

pub fn round_contraction_stats<R: Real>(traces: &[TrajectoryTrace<R>], gain: R, config: &ControllerConfig<R>) -> RoundContraction {
    let mut acc = ContractionAccumulator::new(config.delta.as_f64());
    for t in traces {
        acc.add(&round_y_values(t, gain, config));
    }
    acc.finish()
}
