//! System and controller parameters, and the derivation of the constants the
//! scheme fixes only by inequality.

use std::fmt;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::{auto_noise_bound, NoiseSpec};
use crate::num::Real;
use crate::schedule::TransmissionSchedule;
use crate::vector::{self, eigenvalues};

/// Gain nudged to this value when it equals one, so that the probe factor is finite.
pub const UNIT_GAIN_BUMP: f64 = 1e-6;

/// Largest round length the derivations will search.
pub const MAX_ROUND_LEN: u32 = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialState {
    Fixed { value: f64 },
    Uniform { half_width: f64 },
    Gaussian { sigma: f64 },
}

impl Default for InitialState {
    fn default() -> Self {
        Self::Fixed { value: 0.0 }
    }
}

impl InitialState {
    pub fn sample<G: Rng + ?Sized>(&self, rng: &mut G) -> f64 {
        match *self {
            Self::Fixed { value } => value,
            Self::Uniform { half_width: 0.0 } => 0.0,
            Self::Uniform { half_width } => rng.random_range(-half_width..=half_width),
            Self::Gaussian { sigma } => sigma * rng.sample::<f64, _>(rand_distr::StandardNormal),
        }
    }

    /// Almost-sure bound on `|X_1|`, if any.
    pub fn support_bound(&self) -> Option<f64> {
        match *self {
            Self::Fixed { value } => Some(value.abs()),
            Self::Uniform { half_width } => Some(half_width),
            Self::Gaussian { .. } => None,
        }
    }

    fn is_valid(&self) -> bool {
        match *self {
            Self::Fixed { value } => value.is_finite(),
            Self::Uniform { half_width } => half_width.is_finite() && half_width >= 0.0,
            Self::Gaussian { sigma } => sigma.is_finite() && sigma >= 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Plant<R> {
    Scalar { gain: R },
    /// `X_{n+1} = A X_n + Z_n - Bc U_n`.
    Vector { a: DMatrix<f64>, control: DMatrix<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemModel<R> {
    pub plant: Plant<R>,
    pub noise: NoiseSpec,
    pub initial: InitialState,
}

impl<R: Real> SystemModel<R> {
    pub fn scalar(gain: R, noise: NoiseSpec, initial: InitialState) -> Self {
        Self { plant: Plant::Scalar { gain }, noise, initial }
    }

    pub fn vector(a: DMatrix<f64>, control: DMatrix<f64>, noise: NoiseSpec, initial: InitialState) -> Self {
        Self { plant: Plant::Vector { a, control }, noise, initial }
    }

    /// Growth the controller must overcome: `a` itself, or the product of the
    /// unstable eigenvalue moduli.
    pub fn growth(&self) -> Result<f64> {
        match &self.plant {
            Plant::Scalar { gain } => Ok(gain.as_f64()),
            Plant::Vector { a, .. } => unstable_product(a),
        }
    }

    /// State dimension.
    pub fn dim(&self) -> usize {
        match &self.plant {
            Plant::Scalar { .. } => 1,
            Plant::Vector { a, .. } => a.nrows(),
        }
    }

    pub fn scalar_gain(&self) -> Option<R> {
        match &self.plant {
            Plant::Scalar { gain } => Some(*gain),
            Plant::Vector { .. } => None,
        }
    }
}

fn unstable_product(a: &DMatrix<f64>) -> Result<f64> {
    Ok(eigenvalues(a)?.iter().map(|l| l.norm().max(1.0)).product())
}

/// `floor(a) + 1` for a nonnegative gain.
pub fn min_bins_for_gain<R: Real>(a: R) -> u32 {
    let f = a.floor().to_u32().unwrap_or(u32::MAX - 1);
    f + 1
}

/// Fewest quantization bins that can stabilize the model.
pub fn min_bins<R: Real>(model: &SystemModel<R>) -> Result<u32> {
    match &model.plant {
        Plant::Scalar { gain } => {
            if !gain.is_finite() || *gain < R::zero() {
                return Err(Error::InvalidParameter { name: "gain", reason: format!("must be finite and nonnegative, got {gain}") });
            }
            Ok(min_bins_for_gain(*gain))
        }
        Plant::Vector { a, .. } => {
            let prod = unstable_product(a)?;
            // Eigenvalues carry rounding error; snap products that are integers up to it.
            let near = prod.round();
            let snapped = if (prod - near).abs() <= 1e-9 * prod.max(1.0) { near } else { prod };
            Ok(min_bins_for_gain(snapped))
        }
    }
}

/// `(a/M)^(k-1) * a`, the per-round contraction of the bound on every-step schedules.
pub fn round_contraction<R: Real>(a: R, bins: u32, k: u32) -> R {
    (a / R::from_count(bins as usize)).powi(k as i32 - 1) * a
}

/// Worst case over round start phases of `a^span / M^(k-1)`, where `span` is the
/// number of steps from a round start to its magnitude test.
pub fn scheduled_round_contraction<R: Real>(a: R, bins: u32, k: u32, schedule: &TransmissionSchedule) -> R {
    if schedule.is_every_step() {
        return round_contraction(a, bins, k);
    }
    // In logs, so long rounds cannot overflow to inf / inf.
    let (la, lm) = (a.ln(), R::from_count(bins as usize).ln());
    schedule
        .spans(k as usize)
        .into_iter()
        .map(|span| (R::from_count(span) * la - R::from_count(k as usize - 1) * lm).exp())
        .fold(R::zero(), R::max)
}

fn check_delta<R: Real>(delta: R) -> Result<R> {
    let target = R::one() - R::lit(3.0) * delta;
    if !(delta > R::zero()) || !(target > R::zero()) {
        return Err(Error::Infeasible(format!("margin delta = {delta} leaves 1 - 3 delta = {target} <= 0")));
    }
    Ok(target)
}

/// Smallest `k >= 2` with `(a/M)^(k-1) * a <= 1 - 3 delta`.
pub fn derive_round_length<R: Real>(a: R, bins: u32, delta: R) -> Result<u32> {
    derive_round_length_scheduled(a, bins, delta, &TransmissionSchedule::EveryStep)
}

/// Round length for a schedule: each round has `k - 1` normal steps and one
/// test on schedule members, with silent growth in between.
pub fn derive_round_length_scheduled<R: Real>(a: R, bins: u32, delta: R, schedule: &TransmissionSchedule) -> Result<u32> {
    let target = check_delta(delta)?;
    let m = R::from_count(bins as usize);
    if !(a < m) {
        return Err(Error::Infeasible(format!("gain {a} is not below the bin count {bins}")));
    }
    if schedule.is_every_step() {
        // Closed form seed, then settle on the exact minimal k.
        let ratio = (a / m).ln();
        let guess = ((target / a).ln() / ratio).ceil().to_u32().unwrap_or(1).saturating_add(1);
        let mut k = guess.clamp(2, MAX_ROUND_LEN);
        while k > 2 && round_contraction(a, bins, k - 1) <= target {
            k -= 1;
        }
        while round_contraction(a, bins, k) > target {
            k += 1;
            if k > MAX_ROUND_LEN {
                return Err(Error::Infeasible("round length search exhausted".into()));
            }
        }
        return Ok(k);
    }
    for k in 2..=MAX_ROUND_LEN.min(2_000) {
        if scheduled_round_contraction(a, bins, k, schedule) <= target {
            return Ok(k);
        }
    }
    Err(Error::Infeasible(format!("schedule too sparse for gain {a} with {bins} bins")))
}

/// `(alpha - beta) / 3`.
pub fn derive_moment_gap<R: Real>(alpha: R, beta: R) -> Result<R> {
    if !(beta > R::zero()) || !(beta < alpha) || !alpha.is_finite() {
        return Err(Error::InvalidParameter {
            name: "beta",
            reason: format!("need 0 < beta < alpha < inf, got beta = {beta}, alpha = {alpha}"),
        });
    }
    Ok((alpha - beta) / R::lit(3.0))
}

/// The three lower bounds on `P / a`.
pub fn probe_terms<R: Real>(a: R, k: u32, delta: R, alpha: R, gap: R) -> [R; 3] {
    let one = R::one();
    let two = R::lit(2.0);
    [
        (a / (one - delta)).powf(alpha - gap),
        two.powi(k as i32),
        a.powi(k as i32 + 1) / (two * (a - one)),
    ]
}

/// `P = a * max{(a/(1-delta))^(alpha-Delta), 2^k, a^(k+1)/(2(a-1))}`.
pub fn derive_probe_factor<R: Real>(a: R, k: u32, delta: R, alpha: R, gap: R) -> Result<R> {
    if !(a > R::one()) {
        return Err(Error::InvalidParameter { name: "gain", reason: format!("probe factor needs a > 1, got {a}") });
    }
    let terms = probe_terms(a, k, delta, alpha, gap);
    Ok(a * terms.into_iter().fold(R::zero(), R::max))
}

/// Gain used for constant derivation: `a = 1` is treated as `1 + 1e-6`.
pub fn derivation_gain<R: Real>(a: R) -> R {
    let floor = R::one() + R::lit(UNIT_GAIN_BUMP);
    if a < floor && a >= R::one() {
        floor
    } else {
        a
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Rounds of normal steps, a magnitude test, and geometric zoom-out on failure.
    #[default]
    ZoomInOut,
    /// Every step is a normal step; sound only for noise bounded by `B`.
    BoundedNoise,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ControllerConfig<R> {
    pub bins: u32,
    pub round_len: u32,
    pub delta: R,
    pub moment_gap: R,
    pub noise_bound: R,
    pub probe: R,
    pub alpha: R,
    pub beta: R,
    pub delay: u32,
    pub schedule: TransmissionSchedule,
    /// Bound `C_1` in force at the first step.
    pub initial_bound: R,
    pub scheme: Scheme,
}

/// Constants fixed by the user; `None` fields are derived.
#[derive(Debug, Clone, PartialEq)]
pub struct Overrides<R> {
    pub bins: Option<u32>,
    pub round_len: Option<u32>,
    pub delta: R,
    pub moment_gap: Option<R>,
    pub noise_bound: Option<R>,
    pub probe: Option<R>,
    pub initial_bound: Option<R>,
    pub delay: u32,
    pub schedule: TransmissionSchedule,
    pub scheme: Scheme,
    /// Target per-round failure rate for the automatic noise bound.
    pub failure_rate: f64,
    /// Noise samples spent on the automatic noise bound.
    pub search_budget: usize,
}

impl<R: Real> Default for Overrides<R> {
    fn default() -> Self {
        Self {
            bins: None,
            round_len: None,
            delta: R::lit(0.05),
            moment_gap: None,
            noise_bound: None,
            probe: None,
            initial_bound: None,
            delay: 0,
            schedule: TransmissionSchedule::EveryStep,
            scheme: Scheme::ZoomInOut,
            failure_rate: 1e-3,
            search_budget: 1_000_000,
        }
    }
}

impl<R: Real> ControllerConfig<R> {
    /// Fills every unset constant for `model` at moment orders `alpha > beta`.
    /// `rng` drives the automatic noise-bound search.
    pub fn derive<G: Rng + ?Sized>(model: &SystemModel<R>, alpha: R, beta: R, o: &Overrides<R>, rng: &mut G) -> Result<Self> {
        let growth = R::lit(model.growth()?);
        let a = derivation_gain(growth.max(R::one()));
        let bins = match o.bins {
            Some(m) => m,
            None => min_bins(model)?,
        };
        let moment_gap = match o.moment_gap {
            Some(g) => g,
            None => derive_moment_gap(alpha, beta)?,
        };
        let round_len = match o.round_len {
            Some(k) => k,
            None => match &model.plant {
                // A configuration below the rate threshold has no contracting k.
                // It is still simulated (the validator flags it), with the length
                // the minimal bin count would use on every step.
                Plant::Scalar { .. } => derive_round_length_scheduled(a, bins, o.delta, &o.schedule)
                    .or_else(|_| derive_round_length(a, bins.max(min_bins_for_gain(a)), o.delta))?,
                // Per-block lengths are derived by the vector planner; this is the
                // every-step value used for the noise-bound search window.
                Plant::Vector { .. } => derive_round_length(a, bins, o.delta).unwrap_or(2),
            },
        };
        let probe = match o.probe {
            Some(p) => p,
            None => derive_probe_factor(a, round_len, o.delta, alpha, moment_gap)?,
        };
        let noise_bound = match o.noise_bound {
            Some(b) => b,
            None => match model.noise.support_bound() {
                Some(b0) => R::lit((b0 * (model.dim() as f64).sqrt()).max(1.0)),
                None => R::lit(auto_noise_bound(&model.noise, model.dim(), round_len as usize + 1, o.failure_rate, o.search_budget, rng)?),
            },
        };
        let m = R::from_count(bins as usize);
        let initial_bound = match o.initial_bound {
            Some(c) => c,
            None if growth < m => noise_bound / (R::one() - growth / m),
            None => noise_bound,
        };
        Ok(Self {
            bins,
            round_len,
            delta: o.delta,
            moment_gap,
            noise_bound,
            probe,
            alpha,
            beta,
            delay: o.delay,
            schedule: o.schedule.clone(),
            initial_bound,
            scheme: o.scheme,
        })
    }

    pub fn check(self, model: &SystemModel<R>) -> std::result::Result<CheckedConfig<R>, Vec<Violation>> {
        validate_config(model, self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationKind {
    Gain,
    Bins,
    BinsBelowMinimum,
    RoundLength,
    RoundContraction,
    Delta,
    MomentOrder,
    MomentGap,
    NoiseBound,
    ProbeFactor,
    InitialBound,
    Noise,
    NoiseMomentMismatch,
    InitialState,
    Schedule,
    ScheduleRate,
    Vector,
    Stabilizability,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub message: String,
    /// A simulation is still meaningful, only the stability guarantee is lost.
    pub simulatable: bool,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.simulatable { "guarantee lost" } else { "fatal" };
        write!(f, "{} ({tag})", self.message)
    }
}

/// A configuration that passed validation, possibly with simulatable violations.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckedConfig<R> {
    config: ControllerConfig<R>,
    warnings: Vec<Violation>,
}

impl<R: Real> CheckedConfig<R> {
    pub fn config(&self) -> &ControllerConfig<R> {
        &self.config
    }

    pub fn warnings(&self) -> &[Violation] {
        &self.warnings
    }

    pub fn is_clean(&self) -> bool {
        self.warnings.is_empty()
    }

    pub fn into_inner(self) -> ControllerConfig<R> {
        self.config
    }
}

/// Re-checks every invariant and returns all violations. Configurations whose
/// violations are all simulatable are accepted with warnings.
pub fn validate_config<R: Real>(model: &SystemModel<R>, config: ControllerConfig<R>) -> std::result::Result<CheckedConfig<R>, Vec<Violation>> {
    let mut v = Vec::new();
    let mut push = |kind, simulatable, message: String| v.push(Violation { kind, message, simulatable });
    let c = &config;
    let finite = |x: R| x.is_finite();

    let growth = match &model.plant {
        Plant::Scalar { gain } => {
            if !gain.is_finite() || !(*gain > R::zero()) {
                push(ViolationKind::Gain, false, format!("gain must be finite and positive, got {gain}"));
                None
            } else {
                Some(*gain)
            }
        }
        Plant::Vector { a, control } => {
            let mut ok = true;
            if !a.is_square() {
                push(ViolationKind::Vector, false, format!("A must be square, got {}x{}", a.nrows(), a.ncols()));
                ok = false;
            } else if control.nrows() != a.nrows() || control.ncols() == 0 {
                push(ViolationKind::Vector, false, format!("control matrix must have {} rows and at least one column", a.nrows()));
                ok = false;
            } else if a.iter().chain(control.iter()).any(|x| !x.is_finite()) {
                push(ViolationKind::Vector, false, "matrices must be finite".into());
                ok = false;
            }
            if ok {
                if let Err(e) = vector::stabilizable_decompose(a, control) {
                    push(ViolationKind::Stabilizability, false, e.to_string());
                }
                if model.noise.is_correlated() {
                    push(ViolationKind::Noise, false, "correlated noise is supported for scalar plants only".into());
                }
                match unstable_product(a) {
                    Ok(p) => Some(R::lit(p)),
                    Err(e) => {
                        push(ViolationKind::Vector, false, e.to_string());
                        None
                    }
                }
            } else {
                None
            }
        }
    };

    if c.bins == 0 {
        push(ViolationKind::Bins, false, "bin count must be at least 1".into());
    }
    let delta_ok = c.delta > R::zero() && c.delta < R::one() / R::lit(3.0);
    if !delta_ok {
        push(ViolationKind::Delta, false, format!("delta = {} must lie in (0, 1/3); 1 - 3 delta <= 0 is infeasible", c.delta));
    }
    if c.round_len < 2 {
        push(ViolationKind::RoundLength, false, format!("round length must be at least 2, got {}", c.round_len));
    }
    let orders_ok = finite(c.alpha) && c.beta > R::zero() && c.beta < c.alpha;
    if !orders_ok {
        push(ViolationKind::MomentOrder, false, format!("need 0 < beta < alpha < inf, got beta = {}, alpha = {}", c.beta, c.alpha));
    } else if !(c.moment_gap > R::zero() && c.moment_gap < c.alpha - c.beta) {
        push(ViolationKind::MomentGap, false, format!("moment gap {} must lie in (0, alpha - beta)", c.moment_gap));
    }
    if !finite(c.noise_bound) || !(c.noise_bound > R::zero()) {
        push(ViolationKind::NoiseBound, false, format!("noise bound B = {} must be finite and positive", c.noise_bound));
    } else if c.noise_bound < R::one() {
        // The analysis fixes B >= 1, but a small B is the natural way to run noiseless plants.
        push(ViolationKind::NoiseBound, true, format!("noise bound B = {} is below 1", c.noise_bound));
    }
    if !finite(c.initial_bound) || !(c.initial_bound > R::zero()) {
        push(ViolationKind::InitialBound, false, format!("initial bound C1 = {} must be finite and positive", c.initial_bound));
    }
    if !finite(c.probe) || !(c.probe > R::zero()) {
        push(ViolationKind::ProbeFactor, false, format!("probe factor P = {} must be finite and positive", c.probe));
    }
    for p in model.noise.problems() {
        push(ViolationKind::Noise, false, p);
    }
    if orders_ok && R::lit(model.noise.alpha) < c.alpha {
        push(
            ViolationKind::NoiseMomentMismatch,
            true,
            format!("controller alpha {} exceeds the noise's declared moment order {}", c.alpha, model.noise.alpha),
        );
    }
    if !model.initial.is_valid() {
        push(ViolationKind::InitialState, false, format!("invalid initial state {:?}", model.initial));
    }
    if let TransmissionSchedule::Periodic { pattern, density, window } = &c.schedule {
        if pattern.is_empty() || *window == 0 || !(*density > 0.0 && *density <= 1.0) {
            push(ViolationKind::Schedule, false, "periodic schedule needs a nonempty pattern, positive window and density in (0, 1]".into());
        } else if !c.schedule.is_strongly_dense() {
            push(
                ViolationKind::Schedule,
                false,
                format!(
                    "schedule is not strongly {density}-dense: some window of {window} steps has only {} members",
                    c.schedule.min_window_count(*window)
                ),
            );
        }
    }

    if let Some(a) = growth {
        let min = match &model.plant {
            Plant::Scalar { .. } => Some(min_bins_for_gain(a)),
            Plant::Vector { .. } => min_bins(model).ok(),
        };
        if let Some(min) = min {
            if c.bins >= 1 && c.bins < min {
                push(
                    ViolationKind::BinsBelowMinimum,
                    true,
                    format!("M = {} is below floor(a) + 1 = {min}; no scheme can stabilize", c.bins),
                );
            }
        }
        let scalar = matches!(model.plant, Plant::Scalar { .. });
        let active = a >= R::one();
        if scalar && active && delta_ok && c.bins >= 1 && c.round_len >= 2 && c.scheme == Scheme::ZoomInOut {
            let contraction = scheduled_round_contraction(a, c.bins, c.round_len, &c.schedule);
            let target = R::one() - R::lit(3.0) * c.delta;
            if !(contraction <= target) {
                push(
                    ViolationKind::RoundContraction,
                    true,
                    format!("round contraction {contraction} exceeds 1 - 3 delta = {target} at k = {}", c.round_len),
                );
            }
        }
        if scalar && active && delta_ok && orders_ok && c.round_len >= 2 && finite(c.probe) && c.scheme == Scheme::ZoomInOut {
            let ad = derivation_gain(a);
            let need = ad * probe_terms(ad, c.round_len, c.delta, c.alpha, c.moment_gap).into_iter().fold(R::zero(), R::max);
            let tol = R::one() + R::lit(1e-12);
            if !(c.probe * tol >= need) {
                push(ViolationKind::ProbeFactor, true, format!("probe factor P = {} is below the required {need}", c.probe));
            }
        }
        if !c.schedule.is_every_step() && c.bins >= 1 {
            let rate = R::from_count(c.bins as usize).powf(R::lit(c.schedule.density()));
            if !(rate > a) {
                push(
                    ViolationKind::ScheduleRate,
                    true,
                    format!("M^p = {rate} does not exceed the gain {a}; the schedule carries too little information"),
                );
            }
        }
    }

    if v.iter().all(|x| x.simulatable) {
        Ok(CheckedConfig { config, warnings: v })
    } else {
        Err(v)
    }
}
