//! Trajectory simulation and the per-step trace.

use std::io::{self, Write};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::noise::{whitening_sampler, NoiseFamily};
use crate::num::Real;
use crate::params::{CheckedConfig, ControllerConfig, Plant, SystemModel};
use crate::rng::{Stream, TrajectoryRng};

use super::coder::{step_system, CoderState, Mode, Symbol, ZoomParams};
use super::loops::{wrap_delay, wrap_schedule, LoopPolicy, LoopStep, PassiveLoop, ZoomLoop};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord<R> {
    pub n: u64,
    pub x: R,
    /// Noise entering the plant at this step, including any whitening term.
    pub z: R,
    pub observed: R,
    pub scheduled: bool,
    pub symbol: Option<Symbol>,
    /// Control issued by the scheme at this step.
    pub u: R,
    pub c: R,
    pub mode: Mode,
    pub round_id: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RoundRecord {
    pub id: u64,
    /// First step of the round (1-based).
    pub start: u64,
    pub len: u64,
    /// Failed magnitude tests before the round ended.
    pub tau: u64,
    /// Whether a passed test closed the round inside the horizon.
    pub complete: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryTrace<R> {
    pub steps: Vec<StepRecord<R>>,
    pub rounds: Vec<RoundRecord>,
    /// Step at which `|X|` or `C` crossed the divergence guard.
    pub diverged_at: Option<u64>,
    pub seed: u64,
    pub index: u64,
}

impl<R: Real> TrajectoryTrace<R> {
    pub fn diverged(&self) -> bool {
        self.diverged_at.is_some()
    }

    /// Record of step `n` (1-based).
    pub fn at(&self, n: u64) -> Option<&StepRecord<R>> {
        self.steps.get(n.checked_sub(1)? as usize)
    }

    /// One CSV row per step: `n,x,scheduled,symbol,u,c,mode,round_id`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "n,x,scheduled,symbol,u,c,mode,round_id")?;
        for s in &self.steps {
            let sym = s.symbol.map(|v| v.0.to_string()).unwrap_or_default();
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                s.n,
                s.x.as_f64(),
                s.scheduled as u8,
                sym,
                s.u.as_f64(),
                s.c.as_f64(),
                s.mode,
                s.round_id
            )?;
        }
        Ok(())
    }
}

/// Splits the steps into rounds by round id.
pub fn rounds_of<R: Real>(steps: &[StepRecord<R>]) -> Vec<RoundRecord> {
    let mut out: Vec<RoundRecord> = Vec::new();
    for s in steps {
        let failed = s.mode.is_test() && s.scheduled && s.symbol == Some(Symbol::FAIL);
        match out.last_mut() {
            Some(r) if r.id == s.round_id => {
                r.len += 1;
                r.tau += failed as u64;
            }
            _ => {
                if let Some(prev) = out.last_mut() {
                    prev.complete = true;
                }
                out.push(RoundRecord { id: s.round_id, start: s.n, len: 1, tau: failed as u64, complete: false });
            }
        }
    }
    out
}

/// Drives `policy` against the plant `x <- a x + z - u`.
pub fn run_loop<R: Real, P: LoopPolicy<R>>(
    policy: &mut P,
    gain: R,
    x1: R,
    horizon: usize,
    mut noise: impl FnMut() -> R,
) -> Result<(Vec<StepRecord<R>>, Option<u64>)> {
    let mut steps = Vec::with_capacity(horizon);
    let mut x = x1;
    let guard = R::DIVERGENCE_GUARD;
    for n in 1..=horizon as u64 {
        let s: LoopStep<R> = policy.step(x)?;
        let z = noise();
        steps.push(StepRecord {
            n,
            x,
            z,
            observed: s.observed,
            scheduled: s.scheduled,
            symbol: s.symbol,
            u: s.control,
            c: s.bound,
            mode: s.mode,
            round_id: s.round_id,
        });
        let next = step_system(x, s.control, z, gain);
        if !(next.abs() <= guard) || !(s.bound <= guard) {
            return Ok((steps, Some(n)));
        }
        x = next;
    }
    Ok((steps, None))
}

/// Policy for a scalar plant: passive below unit gain, otherwise the zoom
/// scheme wrapped for the configured schedule and delay.
pub fn build_policy<R: Real>(gain: R, config: &ControllerConfig<R>, x1_bounded: bool) -> Box<dyn LoopPolicy<R> + Send> {
    if gain < R::one() {
        return Box::new(PassiveLoop);
    }
    let params = ZoomParams::new(gain, config);
    let zoom = ZoomLoop::new(params, CoderState::initial(&params, config.initial_bound, x1_bounded));
    let scheduled = wrap_schedule(zoom, config.schedule.clone());
    Box::new(wrap_delay(scheduled, gain, config.delay))
}

/// One closed-loop trajectory of `horizon` steps. Overflow past the divergence
/// guard ends the trace early and is reported in `diverged_at`.
pub fn simulate_trajectory<R: Real>(
    model: &SystemModel<R>,
    config: &CheckedConfig<R>,
    horizon: usize,
    rng: TrajectoryRng,
) -> Result<TrajectoryTrace<R>> {
    let Plant::Scalar { gain } = model.plant else {
        return Err(Error::NotApplicable("simulate_trajectory needs a scalar plant".into()));
    };
    let cfg = config.config();
    let mut init_rng = rng.stream(Stream::Initial);
    let x1 = R::lit(model.initial.sample(&mut init_rng));
    let mut policy = build_policy(gain, cfg, false);

    let mut noise_rng = rng.stream(Stream::Noise);
    let mut sampler = model.noise.sampler()?;
    let mut white_rng = rng.stream(Stream::Whitening);
    let mut whitener = match &model.noise.family {
        NoiseFamily::CorrelatedGaussian(spec) => Some(whitening_sampler(spec)?),
        _ => None,
    };
    let noise = || {
        let z = sampler.next(&mut noise_rng);
        let w = whitener.as_mut().map_or(0.0, |w| w.next(&mut white_rng));
        R::lit(z + w)
    };
    let (steps, diverged_at) = run_loop(&mut policy, gain, x1, horizon, noise)?;
    let rounds = rounds_of(&steps);
    Ok(TrajectoryTrace { steps, rounds, diverged_at, seed: rng.seed, index: rng.index })
}
