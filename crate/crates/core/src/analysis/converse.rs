//! Closed-form lower bounds on what any scheme with `M` bins can achieve.

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpiBound {
    /// Lower bounds `N_1, ..., N_n` on the conditional entropy power.
    pub sequence: Vec<f64>,
    /// Per-step factor `a^2 e^(-2 ln M) = (a/M)^2`.
    pub factor: f64,
    pub diverges: bool,
    /// Fixed point `N_Z / (1 - factor)` when the recursion contracts.
    pub limit: Option<f64>,
}

/// Iterates `N_t = (a/M)^2 N_(t-1) + N_Z` from `N_1`.
pub fn epi_lower_bound(gain: f64, bins: u32, noise_power: f64, initial_power: f64, n: usize) -> Result<EpiBound> {
    if !(noise_power >= 0.0 && noise_power.is_finite()) {
        return Err(Error::InvalidParameter { name: "noise_power", reason: format!("must be finite and >= 0, got {noise_power}") });
    }
    if !(initial_power > 0.0 && initial_power.is_finite()) {
        return Err(Error::InvalidParameter { name: "initial_power", reason: format!("must be finite and > 0, got {initial_power}") });
    }
    if bins < 1 {
        return Err(Error::InvalidParameter { name: "bins", reason: "must be >= 1".into() });
    }
    if !(gain.is_finite() && gain > 0.0) {
        return Err(Error::InvalidParameter { name: "gain", reason: format!("must be finite and > 0, got {gain}") });
    }
    let factor = (gain / bins as f64).powi(2);
    let mut sequence = Vec::with_capacity(n);
    let mut power = initial_power;
    for t in 1..=n {
        if t > 1 {
            power = factor * power + noise_power;
        }
        sequence.push(power);
    }
    let diverges = factor > 1.0 || (factor == 1.0 && noise_power > 0.0);
    let limit = (factor < 1.0).then(|| noise_power / (1.0 - factor));
    Ok(EpiBound { sequence, factor, diverges, limit })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WeakConverse {
    /// Upper bound on `P(X_n in I)`.
    pub bound: f64,
    /// `M >= a`: the bound never drops below one.
    pub vacuous: bool,
}

/// `min(1, (M/a)^n f_max |I|)`.
pub fn weak_converse_bound(bins: u32, gain: f64, density_max: f64, interval_len: f64, n: u32) -> Result<WeakConverse> {
    if !(gain.is_finite() && gain > 0.0) {
        return Err(Error::InvalidParameter { name: "gain", reason: format!("must be finite and > 0, got {gain}") });
    }
    if !(density_max >= 0.0 && interval_len >= 0.0) {
        return Err(Error::InvalidParameter { name: "density_max", reason: "density and interval length must be >= 0".into() });
    }
    let vacuous = bins as f64 >= gain;
    let raw = (bins as f64 / gain).powi(n as i32) * density_max * interval_len;
    Ok(WeakConverse { bound: raw.clamp(0.0, 1.0), vacuous })
}
