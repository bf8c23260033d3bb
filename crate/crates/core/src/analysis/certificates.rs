//! Pathwise inequalities every trace of the scheme must satisfy, replayed
//! against the recorded states, bounds and noise.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::num::Real;
use crate::params::{ControllerConfig, Scheme};
use crate::scalar::{Mode, TrajectoryTrace};

/// Relative slack absorbing floating point rounding in the comparisons.
const SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertificateViolation {
    pub round_id: u64,
    /// Step at which the inequality failed.
    pub step: u64,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertificateReport {
    pub rounds_checked: u64,
    pub violations: Vec<CertificateViolation>,
}

impl CertificateReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn merge(&mut self, other: &Self) {
        self.rounds_checked += other.rounds_checked;
        self.violations.extend(other.violations.iter().cloned());
    }
}

fn require_plain<R: Real>(gain: R, config: &ControllerConfig<R>) -> Result<()> {
    let a = gain.as_f64();
    if !(a > 1.0 && a < 2.0) {
        return Err(Error::NotApplicable(format!("needs 1 < a < 2, got {a}")));
    }
    if config.bins != 2 || config.delay != 0 || !config.schedule.is_every_step() || config.scheme != Scheme::ZoomInOut {
        return Err(Error::NotApplicable("needs the undelayed two-bin zoom scheme on every step".into()));
    }
    Ok(())
}

/// For each round starting at `m` and each `0 <= j <= tau`:
/// `max{|X_{m+1}|..|X_{m+k+j}|, C_{m+k+j}} <= P a^(k+j) (2 C_m + aB/((2-a)(a-1)) + sum_{l<k+j} a^(-l-1) |Z_{m+l}|)`.
pub fn check_lemma_max<R: Real>(trace: &TrajectoryTrace<R>, gain: R, config: &ControllerConfig<R>) -> Result<CertificateReport> {
    require_plain(gain, config)?;
    let a = gain.as_f64();
    let p = config.probe.as_f64();
    let b = config.noise_bound.as_f64();
    let k = config.round_len as u64;
    let offset = a * b / ((2.0 - a) * (a - 1.0));
    let mut report = CertificateReport { rounds_checked: 0, violations: Vec::new() };
    for r in trace.rounds.iter().filter(|r| r.id > 0) {
        let m = r.start;
        let Some(start) = trace.at(m) else { continue };
        let cm = start.c.as_f64();
        report.rounds_checked += 1;
        let mut running_max = 0.0f64;
        let mut zsum = 0.0;
        let mut weight = 1.0 / a;
        let mut power = 1.0;
        for i in 1..=k + r.tau {
            let Some(prev) = trace.at(m + i - 1) else { break };
            zsum += weight * prev.z.abs().as_f64();
            weight /= a;
            power *= a;
            let Some(s) = trace.at(m + i) else { break };
            running_max = running_max.max(s.x.abs().as_f64());
            if i < k {
                continue;
            }
            let lhs = running_max.max(s.c.as_f64());
            let rhs = p * power * (2.0 * cm + offset + zsum);
            if !(lhs <= rhs * (1.0 + SLACK)) {
                report.violations.push(CertificateViolation { round_id: r.id, step: m + i, lhs, rhs });
            }
        }
    }
    Ok(report)
}

/// For each round starting at `m` and `1 <= i < k`:
/// `|X_{m+i}| <= |X_{m+k}| + (a/2)^(-k) C_m + aB/((2-a)(a-1)) + sum_{l<k-i} a^(-l-1) |Z_{m+i+l}|`.
pub fn check_normal_bound<R: Real>(trace: &TrajectoryTrace<R>, gain: R, config: &ControllerConfig<R>) -> Result<CertificateReport> {
    require_plain(gain, config)?;
    let a = gain.as_f64();
    let b = config.noise_bound.as_f64();
    let k = config.round_len as u64;
    let offset = a * b / ((2.0 - a) * (a - 1.0));
    let zoom = (a / 2.0).powi(-(k as i32));
    let mut report = CertificateReport { rounds_checked: 0, violations: Vec::new() };
    for r in trace.rounds.iter().filter(|r| r.id > 0) {
        let m = r.start;
        let (Some(start), Some(end)) = (trace.at(m), trace.at(m + k)) else { continue };
        report.rounds_checked += 1;
        let cm = start.c.as_f64();
        let xk = end.x.abs().as_f64();
        for i in 1..k {
            let mut zsum = 0.0;
            let mut weight = 1.0 / a;
            for l in 0..k - i {
                zsum += weight * trace.at(m + i + l).map_or(0.0, |s| s.z.abs().as_f64());
                weight /= a;
            }
            let lhs = trace.at(m + i).map_or(0.0, |s| s.x.abs().as_f64());
            let rhs = xk + zoom * cm + offset + zsum;
            if !(lhs <= rhs * (1.0 + SLACK)) {
                report.violations.push(CertificateViolation { round_id: r.id, step: m + i, lhs, rhs });
            }
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundedNoiseReport {
    pub passed: bool,
    /// First step with `|X_n| > C_n`, a failed test, or a bound moving away
    /// from its fixed point.
    pub first_violation: Option<u64>,
    pub violating_round: Option<u64>,
    pub fixed_point: f64,
}

/// With `|Z| <= B` and `|X_1| <= C_1`, checks `|X_n| <= C_n` at every step, that
/// no magnitude test fails, and for the tracking scheme that `C_n` moves
/// monotonically toward `B / (1 - a/M)`.
pub fn bounded_noise_certificate<R: Real>(trace: &TrajectoryTrace<R>, gain: R, config: &ControllerConfig<R>) -> Result<BoundedNoiseReport> {
    if config.delay != 0 || !config.schedule.is_every_step() {
        return Err(Error::NotApplicable("needs the undelayed scheme on every step".into()));
    }
    let a = gain.as_f64();
    let m = config.bins as f64;
    if !(a.abs() < m) {
        return Err(Error::NotApplicable(format!("no fixed point with a = {a} and {m} bins")));
    }
    let fixed_point = config.noise_bound.as_f64() / (1.0 - a / m);
    let mut first = None;
    for (i, s) in trace.steps.iter().enumerate() {
        let bad_state = !(s.x.abs() <= s.c);
        let bad_test = s.mode.is_test() && s.symbol == Some(crate::scalar::Symbol::FAIL);
        let bad_trend = s.mode == Mode::Tracking
            && trace.steps.get(i + 1).is_some_and(|nx| {
                let (c, c1) = (s.c.as_f64(), nx.c.as_f64());
                if c >= fixed_point {
                    c1 > c || c1 < fixed_point * (1.0 - SLACK)
                } else {
                    c1 < c || c1 > fixed_point * (1.0 + SLACK)
                }
            });
        if bad_state || bad_test || bad_trend {
            first = Some((s.n, s.round_id));
            break;
        }
    }
    let passed = first.is_none() && !trace.diverged();
    Ok(BoundedNoiseReport { passed, first_violation: first.map(|f| f.0), violating_round: first.map(|f| f.1), fixed_point })
}
