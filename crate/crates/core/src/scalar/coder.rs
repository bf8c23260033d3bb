//! The quantizer and controller state machines. Both sides run the same
//! transition on the same symbol, so their states never drift apart.

use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::num::Real;
use crate::params::{ControllerConfig, Scheme};

/// What the pending step will do.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Mode {
    /// Silent round start with the bound assumed to hold.
    RoundStart,
    /// Normal step `i` of `1..k`: send a bin index.
    Normal(u32),
    /// End-of-round test `|x| <= C`. A pass starts the next round on the same step.
    MagnitudeTest,
    /// Probe `j` after `j` failed tests, with `C = P^j * C_test`.
    Emergency(u32),
    /// Static uniform quantizer with no rounds.
    Tracking,
    /// Stable plant, the controller never acts.
    Passive,
}

impl Mode {
    pub fn is_test(self) -> bool {
        matches!(self, Mode::MagnitudeTest | Mode::Emergency(_))
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mode::RoundStart => f.write_str("round-start"),
            Mode::Normal(i) => write!(f, "normal:{i}"),
            Mode::MagnitudeTest => f.write_str("test"),
            Mode::Emergency(j) => write!(f, "emergency:{j}"),
            Mode::Tracking => f.write_str("tracking"),
            Mode::Passive => f.write_str("passive"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct Symbol(pub u32);

impl Symbol {
    pub const PASS: Symbol = Symbol(0);
    pub const FAIL: Symbol = Symbol(1);
}

/// Constants one coder needs, taken from a validated configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZoomParams<R> {
    /// Signed gain used by the control law. Bound recursions use its magnitude.
    pub gain: R,
    pub bins: u32,
    pub round_len: u32,
    pub noise_bound: R,
    pub probe: R,
    pub scheme: Scheme,
}

impl<R: Real> ZoomParams<R> {
    pub fn new(gain: R, config: &ControllerConfig<R>) -> Self {
        Self {
            gain,
            bins: config.bins,
            round_len: config.round_len,
            noise_bound: config.noise_bound,
            probe: config.probe,
            scheme: config.scheme,
        }
    }

    #[inline]
    fn growth(&self) -> R {
        self.gain.abs()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoderState<R> {
    pub mode: Mode,
    pub bound: R,
    pub round_id: u64,
}

impl<R: Real> CoderState<R> {
    /// State before the first step. The zoom scheme opens with a magnitude test
    /// against `c1`; `assume_bounded` skips it when `|X_1| <= c1` is known.
    pub fn initial(params: &ZoomParams<R>, c1: R, assume_bounded: bool) -> Self {
        let mode = match params.scheme {
            Scheme::BoundedNoise => Mode::Tracking,
            Scheme::ZoomInOut if assume_bounded => Mode::RoundStart,
            Scheme::ZoomInOut => Mode::MagnitudeTest,
        };
        Self { mode, bound: c1, round_id: 0 }
    }
}

/// Which recursion moves the bound one step forward.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundStep {
    /// No control applied: `C <- aC + B`.
    Silent,
    /// Bin index sent and used: `C <- (a/M) C + B`.
    Normal,
    /// Failed test: `C <- P C`.
    Probe,
}

pub fn advance_bound<R: Real>(params: &ZoomParams<R>, bound: R, step: BoundStep) -> R {
    let a = params.growth();
    match step {
        BoundStep::Silent => a * bound + params.noise_bound,
        BoundStep::Normal => a / R::from_count(params.bins as usize) * bound + params.noise_bound,
        BoundStep::Probe => params.probe * bound,
    }
}

/// `a * (bin midpoint)` for the uniform partition of `[-C, C]` into `M` bins.
#[inline]
pub fn control_law<R: Real>(bound: R, bin: u32, bins: u32, gain: R) -> R {
    let offset = 2 * i64::from(bin) + 1 - i64::from(bins);
    gain * bound * R::lit(offset as f64) / R::from_count(bins as usize)
}

/// Index of the bin of `[-C, C]` containing `x`; edges belong to the bin on their
/// right and points outside go to the end bins.
#[inline]
pub fn bin_index<R: Real>(x: R, bound: R, bins: u32) -> u32 {
    let m = R::from_count(bins as usize);
    let t = ((x + bound) * m / (bound + bound)).floor();
    if t.is_nan() || t < R::zero() {
        0
    } else {
        t.to_u32().unwrap_or(u32::MAX).min(bins - 1)
    }
}

/// The shared transition taken by both sides after a symbol.
pub fn advance<R: Real>(params: &ZoomParams<R>, state: &CoderState<R>, symbol: Symbol) -> CoderState<R> {
    let k = params.round_len.max(2);
    let after_normal = |i: u32| if i + 1 < k { Mode::Normal(i + 1) } else { Mode::MagnitudeTest };
    let s = *state;
    match s.mode {
        Mode::RoundStart => CoderState {
            mode: Mode::Normal(1),
            bound: advance_bound(params, s.bound, BoundStep::Silent),
            round_id: s.round_id + 1,
        },
        Mode::Normal(i) => CoderState {
            mode: after_normal(i),
            bound: advance_bound(params, s.bound, BoundStep::Normal),
            ..s
        },
        Mode::MagnitudeTest | Mode::Emergency(_) => {
            if passed(params, symbol) {
                CoderState {
                    mode: Mode::Normal(1),
                    bound: advance_bound(params, s.bound, BoundStep::Silent),
                    round_id: s.round_id + 1,
                }
            } else {
                let j = if let Mode::Emergency(j) = s.mode { j } else { 0 };
                CoderState { mode: Mode::Emergency(j + 1), bound: advance_bound(params, s.bound, BoundStep::Probe), ..s }
            }
        }
        Mode::Tracking => CoderState { bound: advance_bound(params, s.bound, BoundStep::Normal), ..s },
        Mode::Passive => s,
    }
}

/// With a single bin nothing can be signalled, so every test reads as a pass.
#[inline]
fn passed<R>(params: &ZoomParams<R>, symbol: Symbol) -> bool {
    params.bins < 2 || symbol == Symbol::PASS
}

/// Quantizer side: observe `x`, emit a symbol and move on.
pub fn encode_step<R: Real>(params: &ZoomParams<R>, state: &CoderState<R>, x: R) -> Result<(Symbol, CoderState<R>)> {
    if !x.is_finite() {
        return Err(Error::NonFinite(x.as_f64()));
    }
    let symbol = match state.mode {
        Mode::Normal(_) | Mode::Tracking => Symbol(bin_index(x, state.bound, params.bins)),
        Mode::MagnitudeTest | Mode::Emergency(_) => {
            if x.abs() <= state.bound || params.bins < 2 {
                Symbol::PASS
            } else {
                Symbol::FAIL
            }
        }
        Mode::RoundStart | Mode::Passive => Symbol(0),
    };
    Ok((symbol, advance(params, state, symbol)))
}

/// Controller side: receive a symbol, emit the control and move on.
pub fn control_step<R: Real>(params: &ZoomParams<R>, state: &CoderState<R>, symbol: Symbol) -> Result<(R, CoderState<R>)> {
    if symbol.0 >= params.bins.max(1) {
        return Err(Error::SymbolOutOfRange { symbol: symbol.0, bins: params.bins });
    }
    let u = match state.mode {
        Mode::Normal(_) | Mode::Tracking => control_law(state.bound, symbol.0, params.bins, params.gain),
        _ => R::zero(),
    };
    Ok((u, advance(params, state, symbol)))
}

/// `a x + z - u`.
#[inline]
pub fn step_system<R: Real>(x: R, u: R, z: R, a: R) -> R {
    a * x + z - u
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(bins: u32) -> ZoomParams<f64> {
        ZoomParams { gain: 1.5, bins, round_len: 3, noise_bound: 1.0, probe: 12.0, scheme: Scheme::ZoomInOut }
    }

    fn at(mode: Mode, bound: f64) -> CoderState<f64> {
        CoderState { mode, bound, round_id: 5 }
    }

    #[test]
    fn encoder_examples() {
        let p = params(2);
        let (s, _) = encode_step(&p, &at(Mode::Normal(1), 4.0), -1.2).unwrap();
        assert_eq!(s, Symbol(0));

        let (s, next) = encode_step(&p, &at(Mode::MagnitudeTest, 4.0), 3.9).unwrap();
        assert_eq!(s, Symbol::PASS);
        assert_eq!(next.mode, Mode::Normal(1));
        assert_eq!(next.round_id, 6);

        let (s, next) = encode_step(&p, &at(Mode::MagnitudeTest, 4.0), 5.0).unwrap();
        assert_eq!(s, Symbol::FAIL);
        assert_eq!(next, CoderState { mode: Mode::Emergency(1), bound: 48.0, round_id: 5 });

        assert!(encode_step(&p, &at(Mode::Normal(1), 4.0), f64::NAN).is_err());
    }

    #[test]
    fn test_passes_on_equality() {
        let (s, _) = encode_step(&params(2), &at(Mode::MagnitudeTest, 4.0), -4.0).unwrap();
        assert_eq!(s, Symbol::PASS);
    }

    #[test]
    fn controller_examples() {
        let p = params(2);
        let (u, _) = control_step(&p, &at(Mode::RoundStart, 4.0), Symbol(1)).unwrap();
        assert_eq!(u, 0.0);
        let (u, _) = control_step(&p, &at(Mode::Normal(1), 4.0), Symbol(1)).unwrap();
        assert_eq!(u, 3.0);
        let (u, next) = control_step(&p, &at(Mode::Emergency(2), 10.0), Symbol::FAIL).unwrap();
        assert_eq!(u, 0.0);
        assert_eq!(next.bound, 120.0);
        assert_eq!(next.mode, Mode::Emergency(3));
        assert!(control_step(&p, &at(Mode::Normal(1), 4.0), Symbol(2)).is_err());
    }

    #[test]
    fn control_law_examples() {
        assert_eq!(control_law(4.0, 1, 2, 1.5), 3.0);
        assert_eq!(control_law(4.0, 0, 2, 1.5), -3.0);
        assert_eq!(control_law(6.0, 1, 3, 2.5), 0.0);
    }

    #[test]
    fn bound_recursions() {
        let p = params(2);
        assert_eq!(advance_bound(&p, 4.0, BoundStep::Silent), 7.0);
        assert_eq!(advance_bound(&p, 4.0, BoundStep::Normal), 4.0);
        assert_eq!(advance_bound(&p, 10.0, BoundStep::Probe), 120.0);
    }

    #[test]
    fn step_system_examples() {
        assert_eq!(step_system(2.0, 3.0, 0.5, 1.5), 0.5);
        assert_eq!(step_system(0.0, 0.0, 0.0, 1.5), 0.0);
        let mut x = 1.0;
        for _ in 0..10 {
            x = step_system(x, 0.0, 0.0, 2.0);
        }
        assert_eq!(x, 1024.0);
    }

    #[test]
    fn bins_at_edges() {
        assert_eq!(bin_index(0.0, 4.0, 2), 1);
        assert_eq!(bin_index(4.0, 4.0, 2), 1);
        assert_eq!(bin_index(-4.0, 4.0, 2), 0);
        assert_eq!(bin_index(-40.0, 4.0, 3), 0);
        assert_eq!(bin_index(40.0, 4.0, 3), 2);
        assert_eq!(bin_index(-2.0, 6.0, 3), 1);
    }

    #[test]
    fn round_sequence() {
        let p = params(2);
        let mut s = CoderState::initial(&p, 4.0, false);
        let mut modes = Vec::new();
        for _ in 0..7 {
            modes.push(s.mode);
            s = advance(&p, &s, Symbol::PASS);
        }
        use Mode::*;
        assert_eq!(modes, vec![MagnitudeTest, Normal(1), Normal(2), MagnitudeTest, Normal(1), Normal(2), MagnitudeTest]);
        assert_eq!(s.round_id, 3);
    }

    #[test]
    fn single_bin_never_fails() {
        let p = params(1);
        let (s, next) = encode_step(&p, &at(Mode::MagnitudeTest, 1.0), 100.0).unwrap();
        assert_eq!(s, Symbol(0));
        assert_eq!(next.mode, Mode::Normal(1));
    }
}
