//! Scalar abstraction shared by the control and analysis code.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point scalar the controller and estimators are generic over.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Magnitude past which a trajectory is declared diverged.
    const DIVERGENCE_GUARD: Self;

    /// Converts an `f64` literal. Values outside the range saturate to infinity.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).unwrap_or_else(|| if x > 0.0 { Self::infinity() } else { Self::neg_infinity() })
    }

    #[inline]
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).unwrap_or_else(Self::infinity)
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {
    const DIVERGENCE_GUARD: Self = 1e36;
}

impl Real for f64 {
    const DIVERGENCE_GUARD: Self = 1e300;
}
