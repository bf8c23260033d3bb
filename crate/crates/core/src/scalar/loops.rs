//! Closed-loop policies: the quantizer/controller pair plus the channel
//! wrappers for delays and transmission schedules.

use std::collections::VecDeque;

use crate::error::Result;
use crate::num::Real;
use crate::schedule::TransmissionSchedule;

use super::coder::{advance_bound, control_step, encode_step, BoundStep, CoderState, Mode, Symbol, ZoomParams};

/// What a policy did at one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopStep<R> {
    /// Value the quantizer acted on (differs from the state under delay).
    pub observed: R,
    pub scheduled: bool,
    pub symbol: Option<Symbol>,
    pub control: R,
    /// Bound in force at this step.
    pub bound: R,
    /// Mode of the step.
    pub mode: Mode,
    /// Round the step belongs to.
    pub round_id: u64,
}

pub trait LoopPolicy<R: Real> {
    /// Steps with a channel use.
    fn step(&mut self, x: R) -> Result<LoopStep<R>>;
    /// Steps without one: no symbol, no control.
    fn silent(&mut self, x: R) -> Result<LoopStep<R>>;
}

impl<R: Real, P: LoopPolicy<R> + ?Sized> LoopPolicy<R> for Box<P> {
    fn step(&mut self, x: R) -> Result<LoopStep<R>> {
        (**self).step(x)
    }
    fn silent(&mut self, x: R) -> Result<LoopStep<R>> {
        (**self).silent(x)
    }
}

/// Quantizer and controller running side by side.
#[derive(Debug, Clone)]
pub struct ZoomLoop<R> {
    params: ZoomParams<R>,
    encoder: CoderState<R>,
    controller: CoderState<R>,
}

impl<R: Real> ZoomLoop<R> {
    pub fn new(params: ZoomParams<R>, initial: CoderState<R>) -> Self {
        Self { params, encoder: initial, controller: initial }
    }

    pub fn params(&self) -> &ZoomParams<R> {
        &self.params
    }

    pub fn states(&self) -> (&CoderState<R>, &CoderState<R>) {
        (&self.encoder, &self.controller)
    }
}

impl<R: Real> LoopPolicy<R> for ZoomLoop<R> {
    fn step(&mut self, x: R) -> Result<LoopStep<R>> {
        let before = self.encoder;
        let (symbol, enc) = encode_step(&self.params, &self.encoder, x)?;
        let (control, ctl) = control_step(&self.params, &self.controller, symbol)?;
        debug_assert_eq!(enc, ctl, "coder states diverged");
        self.encoder = enc;
        self.controller = ctl;
        Ok(LoopStep {
            observed: x,
            scheduled: true,
            symbol: Some(symbol),
            control,
            bound: before.bound,
            mode: before.mode,
            round_id: enc.round_id,
        })
    }

    fn silent(&mut self, x: R) -> Result<LoopStep<R>> {
        let before = self.encoder;
        let bound = advance_bound(&self.params, before.bound, BoundStep::Silent);
        self.encoder.bound = bound;
        self.controller.bound = bound;
        Ok(LoopStep {
            observed: x,
            scheduled: false,
            symbol: None,
            control: R::zero(),
            bound: before.bound,
            mode: before.mode,
            round_id: before.round_id,
        })
    }
}

/// Stable plants need no control at all.
#[derive(Debug, Clone, Copy, Default)]
pub struct PassiveLoop;

impl<R: Real> LoopPolicy<R> for PassiveLoop {
    fn step(&mut self, x: R) -> Result<LoopStep<R>> {
        self.silent(x)
    }

    fn silent(&mut self, x: R) -> Result<LoopStep<R>> {
        Ok(LoopStep {
            observed: x,
            scheduled: false,
            symbol: None,
            control: R::zero(),
            bound: R::zero(),
            mode: Mode::Passive,
            round_id: 0,
        })
    }
}

/// Restricts channel use to the members of a schedule.
#[derive(Debug, Clone)]
pub struct ScheduleLoop<P> {
    inner: P,
    schedule: TransmissionSchedule,
    n: usize,
}

pub fn wrap_schedule<P>(inner: P, schedule: TransmissionSchedule) -> ScheduleLoop<P> {
    ScheduleLoop { inner, schedule, n: 0 }
}

impl<R: Real, P: LoopPolicy<R>> LoopPolicy<R> for ScheduleLoop<P> {
    fn step(&mut self, x: R) -> Result<LoopStep<R>> {
        self.n += 1;
        if self.schedule.is_member(self.n) {
            self.inner.step(x)
        } else {
            self.inner.silent(x)
        }
    }

    fn silent(&mut self, x: R) -> Result<LoopStep<R>> {
        self.n += 1;
        self.inner.silent(x)
    }
}

/// Runs the inner policy on the state predicted `delay` steps ahead, so that
/// controls decided now can be applied when they arrive.
///
/// With `U_n .. U_{n+l-1}` already committed, the quantizer observes
/// `X~_n = X_n - sum_i a^(-1-i) U_{n+i}`, which evolves as the undelayed plant.
/// The inner control `u~` reaches the plant `l` steps later as `a^l u~`.
#[derive(Debug, Clone)]
pub struct DelayLoop<R, P> {
    inner: P,
    gain: R,
    scale: R,
    pending: VecDeque<R>,
}

pub fn wrap_delay<R: Real, P>(inner: P, gain: R, delay: u32) -> DelayLoop<R, P> {
    DelayLoop {
        inner,
        gain,
        scale: gain.powi(delay as i32),
        pending: std::iter::repeat_n(R::zero(), delay as usize).collect(),
    }
}

impl<R: Real, P: LoopPolicy<R>> DelayLoop<R, P> {
    fn predicted(&self, x: R) -> R {
        let mut acc = R::zero();
        let mut w = R::one() / self.gain;
        for &u in &self.pending {
            acc = acc + w * u;
            w = w / self.gain;
        }
        x - acc
    }

    fn commit(&mut self, mut s: LoopStep<R>) -> LoopStep<R> {
        if self.pending.is_empty() {
            return s;
        }
        self.pending.push_back(self.scale * s.control);
        s.control = self.pending.pop_front().unwrap_or_else(R::zero);
        s
    }
}

impl<R: Real, P: LoopPolicy<R>> LoopPolicy<R> for DelayLoop<R, P> {
    fn step(&mut self, x: R) -> Result<LoopStep<R>> {
        let xt = self.predicted(x);
        let s = self.inner.step(xt)?;
        Ok(self.commit(s))
    }

    fn silent(&mut self, x: R) -> Result<LoopStep<R>> {
        let xt = self.predicted(x);
        let s = self.inner.silent(xt)?;
        Ok(self.commit(s))
    }
}
