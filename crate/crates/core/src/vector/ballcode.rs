//! Covering a Euclidean ball with the cells of a uniform grid on its bounding box.

use nalgebra::DVector;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct BallCode {
    pub center: DVector<f64>,
    pub radius: f64,
    /// Cells per axis.
    pub grid: u64,
    /// Largest codebook the channel can carry.
    pub budget: u64,
}

/// Largest `g` with `g^dim <= budget`.
pub fn grid_for_budget(budget: u64, dim: usize) -> u64 {
    if dim == 0 || budget == 0 {
        return 0;
    }
    let mut g = (budget as f64).powf(1.0 / dim as f64).floor() as u64;
    let fits = |g: u64| (g as u128).checked_pow(dim as u32).is_some_and(|v| v <= budget as u128);
    while g > 1 && !fits(g) {
        g -= 1;
    }
    while fits(g + 1) {
        g += 1;
    }
    g.max(1)
}

impl BallCode {
    pub fn new(center: DVector<f64>, radius: f64, budget: u64) -> Result<Self> {
        if budget < 1 {
            return Err(Error::InvalidParameter { name: "budget", reason: "codebook budget must be at least 1".into() });
        }
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::InvalidParameter { name: "radius", reason: format!("must be positive and finite, got {radius}") });
        }
        let grid = grid_for_budget(budget, center.len());
        Ok(Self { center, radius, grid, budget })
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn codebook_size(&self) -> u64 {
        self.grid.pow(self.dim() as u32)
    }

    /// Half-diagonal of a cell: every point of the ball lies this close to its cell center.
    pub fn child_radius(&self) -> f64 {
        (self.dim() as f64).sqrt() * self.radius / self.grid as f64
    }

    fn axis_index(&self, v: f64, c: f64) -> u64 {
        let t = ((v - c + self.radius) * self.grid as f64 / (2.0 * self.radius)).floor();
        if t.is_nan() || t < 0.0 {
            0
        } else {
            (t as u64).min(self.grid - 1)
        }
    }

    /// Index of the cell containing `x`, the first axis most significant.
    /// Points outside the box map to the nearest boundary cell.
    pub fn encode(&self, x: &DVector<f64>) -> u64 {
        x.iter().zip(self.center.iter()).fold(0, |acc, (&v, &c)| acc * self.grid + self.axis_index(v, c))
    }

    pub fn decode(&self, index: u64) -> DVector<f64> {
        let d = self.dim();
        let mut out = DVector::zeros(d);
        let mut rest = index;
        let cell = 2.0 * self.radius / self.grid as f64;
        for i in (0..d).rev() {
            let k = rest % self.grid;
            rest /= self.grid;
            out[i] = self.center[i] - self.radius + (k as f64 + 0.5) * cell;
        }
        out
    }
}
