//! Parallel batches of trajectories, each reduced to a small summary as soon as
//! it is simulated. Summaries are merged in trajectory order, so the result
//! does not depend on the worker count.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::num::Real;
use crate::params::{CheckedConfig, Plant, SystemModel};
use crate::rng::TrajectoryRng;
use crate::scalar::{simulate_trajectory, TrajectoryTrace};
use crate::vector::{simulate_with_plan, BlockPlan, VectorPlan, VectorTrace};

use super::certificates::{bounded_noise_certificate, check_lemma_max, check_normal_bound, CertificateReport, CertificateViolation};
use super::moments::{default_grid, MomentAccumulator, MomentEstimate};
use super::tails::{round_y_values, ContractionAccumulator, RoundContraction, TailEstimate, TauHistogram};

/// Violations kept verbatim per certificate; the rest are only counted.
const KEPT_VIOLATIONS: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct BatchOptions {
    pub trajectories: usize,
    pub horizon: usize,
    pub seed: u64,
    /// Points of the moment time grid.
    pub grid_points: usize,
    /// Replay the pathwise certificates that apply to the configuration.
    pub certificates: bool,
    /// Collect the per-round contraction `Y`.
    pub contraction: bool,
    /// Largest lag of the empirical noise autocovariance; `None` skips it.
    pub noise_lags: Option<usize>,
}

impl BatchOptions {
    pub fn new(trajectories: usize, horizon: usize, seed: u64) -> Self {
        Self { trajectories, horizon, seed, grid_points: 64, certificates: false, contraction: false, noise_lags: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocatedViolation {
    pub trajectory: u64,
    #[serde(flatten)]
    pub violation: CertificateViolation,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertificateSummary {
    pub rounds_checked: u64,
    pub violations: u64,
    pub first: Vec<LocatedViolation>,
}

impl CertificateSummary {
    fn from_report(index: u64, r: CertificateReport) -> Self {
        let violations = r.violations.len() as u64;
        let first = r.violations.into_iter().take(KEPT_VIOLATIONS).map(|v| LocatedViolation { trajectory: index, violation: v }).collect();
        Self { rounds_checked: r.rounds_checked, violations, first }
    }

    fn merge(&mut self, other: &Self) {
        self.rounds_checked += other.rounds_checked;
        self.violations += other.violations;
        let room = KEPT_VIOLATIONS.saturating_sub(self.first.len());
        self.first.extend(other.first.iter().take(room).cloned());
    }

    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundedNoiseSummary {
    pub trajectories: u64,
    pub failed: u64,
    /// First failure as `(trajectory, step, round)`.
    pub first_failure: Option<(u64, u64, u64)>,
    pub fixed_point: f64,
}

impl BoundedNoiseSummary {
    pub fn passed(&self) -> bool {
        self.failed == 0
    }

    fn merge(&mut self, other: &Self) {
        self.trajectories += other.trajectories;
        self.failed += other.failed;
        if self.first_failure.is_none() {
            self.first_failure = other.first_failure;
        }
    }
}

/// Sums of lagged products `Z_n Z_{n+l}` of the noise entering the plant.
#[derive(Debug, Clone, PartialEq)]
struct NoiseAccumulator {
    sum: Vec<f64>,
    sumsq: Vec<f64>,
    count: Vec<u64>,
}

impl NoiseAccumulator {
    fn new(lags: usize) -> Self {
        Self { sum: vec![0.0; lags + 1], sumsq: vec![0.0; lags + 1], count: vec![0; lags + 1] }
    }

    fn add(&mut self, z: &[f64]) {
        for l in 0..self.sum.len() {
            for w in z.windows(l + 1) {
                let v = w[0] * w[l];
                self.sum[l] += v;
                self.sumsq[l] += v * v;
                self.count[l] += 1;
            }
        }
    }

    fn merge(&mut self, other: &Self) {
        for l in 0..self.sum.len() {
            self.sum[l] += other.sum[l];
            self.sumsq[l] += other.sumsq[l];
            self.count[l] += other.count[l];
        }
    }

    fn finish(&self) -> NoiseAutocovariance {
        let (mut lag, mut std_err) = (Vec::new(), Vec::new());
        for l in 0..self.sum.len() {
            let c = self.count[l].max(1) as f64;
            let m = self.sum[l] / c;
            let var = (self.sumsq[l] / c - m * m).max(0.0);
            lag.push(m);
            std_err.push((var / c).sqrt());
        }
        NoiseAutocovariance { lag, std_err, samples: self.count.first().copied().unwrap_or(0) }
    }
}

/// Empirical `E[Z_n Z_{n+l}]` with naive standard errors.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoiseAutocovariance {
    pub lag: Vec<f64>,
    pub std_err: Vec<f64>,
    pub samples: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalarBatch {
    pub trajectories: usize,
    pub horizon: usize,
    pub seed: u64,
    pub moments: MomentEstimate,
    pub tau: TailEstimate,
    pub max_tau: u64,
    /// Round with the largest `tau` as `(trajectory, round id)`.
    pub max_tau_round: Option<(u64, u64)>,
    pub diverged: Vec<u64>,
    pub max_abs_state: f64,
    pub contraction: Option<RoundContraction>,
    pub lemma_max: Option<CertificateSummary>,
    pub normal_bound: Option<CertificateSummary>,
    pub bounded_noise: Option<BoundedNoiseSummary>,
    pub noise: Option<NoiseAutocovariance>,
}

struct ScalarPart {
    moments: MomentAccumulator,
    tau: TauHistogram,
    diverged: Option<u64>,
    max_abs_state: f64,
    contraction: Option<ContractionAccumulator>,
    lemma_max: Option<CertificateSummary>,
    normal_bound: Option<CertificateSummary>,
    bounded_noise: Option<BoundedNoiseSummary>,
    noise: Option<NoiseAccumulator>,
}

fn applicable<T>(r: Result<T>) -> Result<Option<T>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::NotApplicable(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

fn merge_opt<T>(a: &mut Option<T>, b: &Option<T>, f: impl Fn(&mut T, &T)) {
    if let (Some(a), Some(b)) = (a.as_mut(), b.as_ref()) {
        f(a, b);
    }
}

/// Runs `opts.trajectories` scalar trajectories on the rayon pool and reduces
/// them. `on_trace` sees every full trace before it is dropped.
pub fn run_scalar_batch<R: Real>(
    model: &SystemModel<R>,
    config: &CheckedConfig<R>,
    opts: &BatchOptions,
    on_trace: impl Fn(&TrajectoryTrace<R>) -> Result<()> + Sync,
) -> Result<ScalarBatch> {
    let Plant::Scalar { gain } = model.plant else {
        return Err(Error::NotApplicable("scalar batch needs a scalar plant".into()));
    };
    if opts.trajectories == 0 || opts.horizon == 0 {
        return Err(Error::InvalidParameter { name: "trajectories", reason: "need at least one trajectory and step".into() });
    }
    let cfg = config.config();
    let grid = default_grid(opts.horizon, opts.grid_points);
    // The deterministic certificate needs noise inside the bound and a first
    // state inside the first bound.
    let bounded_applies = opts.certificates
        && model.noise.support_bound().is_some_and(|b| b <= cfg.noise_bound.as_f64())
        && model.initial.support_bound().is_some_and(|c| c <= cfg.initial_bound.as_f64());

    let one = |i: usize| -> Result<ScalarPart> {
        let index = i as u64;
        let trace = simulate_trajectory(model, config, opts.horizon, TrajectoryRng::new(opts.seed, index))?;
        on_trace(&trace)?;
        let mut moments = MomentAccumulator::new(grid.clone(), cfg.beta.as_f64());
        moments.add_trace(&trace);
        let mut tau = TauHistogram::default();
        tau.add_rounds(index, &trace.rounds);
        let contraction = opts.contraction.then(|| {
            let mut acc = ContractionAccumulator::new(cfg.delta.as_f64());
            acc.add(&round_y_values(&trace, gain, cfg));
            acc
        });
        let (lemma_max, normal_bound) = if opts.certificates {
            (
                applicable(check_lemma_max(&trace, gain, cfg))?.map(|r| CertificateSummary::from_report(index, r)),
                applicable(check_normal_bound(&trace, gain, cfg))?.map(|r| CertificateSummary::from_report(index, r)),
            )
        } else {
            (None, None)
        };
        let bounded_noise = if bounded_applies {
            applicable(bounded_noise_certificate(&trace, gain, cfg))?.map(|r| BoundedNoiseSummary {
                trajectories: 1,
                failed: u64::from(!r.passed),
                first_failure: (!r.passed).then(|| (index, r.first_violation.unwrap_or(0), r.violating_round.unwrap_or(0))),
                fixed_point: r.fixed_point,
            })
        } else {
            None
        };
        let noise = opts.noise_lags.map(|l| {
            let mut acc = NoiseAccumulator::new(l);
            acc.add(&trace.steps.iter().map(|s| s.z.as_f64()).collect::<Vec<_>>());
            acc
        });
        Ok(ScalarPart {
            moments,
            tau,
            diverged: trace.diverged().then_some(index),
            max_abs_state: trace.steps.iter().map(|s| s.x.abs().as_f64()).fold(0.0, f64::max),
            contraction,
            lemma_max,
            normal_bound,
            bounded_noise,
            noise,
        })
    };
    let parts: Vec<ScalarPart> = (0..opts.trajectories).into_par_iter().map(one).collect::<Result<_>>()?;

    let mut parts = parts.into_iter();
    let mut acc = parts.next().expect("at least one trajectory");
    let mut diverged: Vec<u64> = acc.diverged.into_iter().collect();
    for p in parts {
        acc.moments.merge(&p.moments);
        acc.tau.merge(&p.tau);
        diverged.extend(p.diverged);
        acc.max_abs_state = acc.max_abs_state.max(p.max_abs_state);
        merge_opt(&mut acc.contraction, &p.contraction, ContractionAccumulator::merge);
        merge_opt(&mut acc.lemma_max, &p.lemma_max, CertificateSummary::merge);
        merge_opt(&mut acc.normal_bound, &p.normal_bound, CertificateSummary::merge);
        merge_opt(&mut acc.bounded_noise, &p.bounded_noise, BoundedNoiseSummary::merge);
        merge_opt(&mut acc.noise, &p.noise, NoiseAccumulator::merge);
    }
    Ok(ScalarBatch {
        trajectories: opts.trajectories,
        horizon: opts.horizon,
        seed: opts.seed,
        moments: acc.moments.finish(),
        tau: acc.tau.tail(),
        max_tau: acc.tau.max_tau,
        max_tau_round: acc.tau.argmax,
        diverged,
        max_abs_state: acc.max_abs_state,
        contraction: acc.contraction.map(|c| c.finish()),
        lemma_max: acc.lemma_max,
        normal_bound: acc.normal_bound,
        bounded_noise: acc.bounded_noise,
        noise: acc.noise.map(|n| n.finish()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VectorBatch {
    pub trajectories: usize,
    pub horizon: usize,
    pub seed: u64,
    pub moments: MomentEstimate,
    pub blocks: Vec<BlockPlan>,
    /// Sum of the per-block channel densities.
    pub total_density: f64,
    pub diverged: Vec<u64>,
    pub max_norm: f64,
}

/// Vector counterpart of [`run_scalar_batch`]; the plan is built once and
/// shared by every trajectory.
pub fn run_vector_batch(
    model: &SystemModel<f64>,
    config: &CheckedConfig<f64>,
    opts: &BatchOptions,
    on_trace: impl Fn(&VectorTrace) -> Result<()> + Sync,
) -> Result<VectorBatch> {
    if opts.trajectories == 0 || opts.horizon == 0 {
        return Err(Error::InvalidParameter { name: "trajectories", reason: "need at least one trajectory and step".into() });
    }
    let plan = VectorPlan::new(model, config.config())?;
    let grid = default_grid(opts.horizon, opts.grid_points);
    let parts: Vec<(MomentAccumulator, Option<u64>, f64)> = (0..opts.trajectories)
        .into_par_iter()
        .map(|i| {
            let trace = simulate_with_plan(&plan, model, opts.horizon, TrajectoryRng::new(opts.seed, i as u64))?;
            on_trace(&trace)?;
            let mut m = MomentAccumulator::new(grid.clone(), config.config().beta);
            m.add_vector(&trace);
            let max = trace.steps.iter().map(|s| s.norm).fold(0.0, f64::max);
            Ok((m, trace.diverged().then_some(i as u64), max))
        })
        .collect::<Result<_>>()?;
    let mut moments = MomentAccumulator::new(grid, config.config().beta);
    let mut diverged = Vec::new();
    let mut max_norm = 0.0f64;
    for (m, d, x) in &parts {
        moments.merge(m);
        diverged.extend(*d);
        max_norm = max_norm.max(*x);
    }
    Ok(VectorBatch {
        trajectories: opts.trajectories,
        horizon: opts.horizon,
        seed: opts.seed,
        moments: moments.finish(),
        total_density: plan.blocks.iter().map(|b| b.density).sum(),
        blocks: plan.blocks.clone(),
        diverged,
        max_norm,
    })
}
