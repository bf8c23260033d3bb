//! Time sharing of the channel among the unstable blocks.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::schedule::TransmissionSchedule;

use super::jordan::SpectralDecomposition;

/// Longest schedule period searched.
const MAX_PERIOD: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockAllocation {
    /// Index into the decomposition's blocks.
    pub block: usize,
    /// `d_j ln|lambda_j| / ln M`, the density the block cannot go below.
    pub lower_bound: f64,
    pub density: f64,
    pub pattern: Vec<bool>,
}

impl BlockAllocation {
    pub fn schedule(&self) -> TransmissionSchedule {
        TransmissionSchedule::Periodic { pattern: self.pattern.clone(), density: self.density, window: self.pattern.len() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubspaceSchedule {
    pub period: usize,
    pub blocks: Vec<BlockAllocation>,
}

impl SubspaceSchedule {
    /// Block served at step `n` (1-based), as an index into `blocks`.
    pub fn owner(&self, n: usize) -> Option<usize> {
        if self.period == 0 {
            return None;
        }
        let slot = (n.max(1) - 1) % self.period;
        self.blocks.iter().position(|b| b.pattern[slot])
    }

    pub fn total_density(&self) -> f64 {
        self.blocks.iter().map(|b| b.density).sum()
    }
}

/// Densities `p_j = (1 + theta) d_j ln|lambda_j| / ln M` with a common slack
/// leaving `sum p_j < 1`, realized as interleaved periodic patterns that
/// together cover every step.
pub fn allocate_schedules(decomp: &SpectralDecomposition, bins: u32) -> Result<SubspaceSchedule> {
    let unstable: Vec<usize> = (0..decomp.blocks.len()).filter(|&j| decomp.blocks[j].is_unstable()).collect();
    if unstable.is_empty() {
        return Ok(SubspaceSchedule { period: 0, blocks: Vec::new() });
    }
    let product: f64 = unstable.iter().map(|&j| decomp.blocks[j].modulus.powi(decomp.blocks[j].dim as i32)).product();
    if bins < 2 || product >= bins as f64 {
        return Err(Error::Infeasible(format!("unstable eigenvalue product {product} is not below M = {bins}")));
    }
    let ln_m = (bins as f64).ln();
    let lb: Vec<f64> = unstable
        .iter()
        .map(|&j| decomp.blocks[j].dim as f64 * decomp.blocks[j].modulus.ln().max(0.0) / ln_m)
        .collect();
    let total: f64 = lb.iter().sum();
    let slack = 1.0 - total;
    let marginal = lb.iter().filter(|&&v| v == 0.0).count();
    let density: Vec<f64> = lb
        .iter()
        .map(|&v| {
            if v > 0.0 {
                v * (1.0 + slack / (2.0 * total))
            } else {
                slack / (4.0 * marginal as f64)
            }
        })
        .collect();

    let period = (1..=MAX_PERIOD)
        .find(|&l| density.iter().map(|p| (p * l as f64).floor() as usize + 1).sum::<usize>() <= l)
        .ok_or_else(|| Error::Infeasible("no schedule period found".into()))?;

    // Base counts exceed p_j L; leftover slots go to the largest densities.
    let mut counts: Vec<usize> = density.iter().map(|p| (p * period as f64).floor() as usize + 1).collect();
    let mut left = period - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&i, &j| density[j].total_cmp(&density[i]).then(i.cmp(&j)));
    let mut k = 0;
    while left > 0 {
        counts[order[k % order.len()]] += 1;
        left -= 1;
        k += 1;
    }

    // Smooth weighted round robin spreads each block's slots evenly.
    let mut current = vec![0i64; counts.len()];
    let mut patterns = vec![vec![false; period]; counts.len()];
    #[allow(clippy::needless_range_loop)]
    for slot in 0..period {
        for (c, &w) in current.iter_mut().zip(&counts) {
            *c += w as i64;
        }
        let pick = (0..counts.len()).max_by(|&i, &j| current[i].cmp(&current[j]).then(j.cmp(&i))).expect("nonempty");
        current[pick] -= period as i64;
        patterns[pick][slot] = true;
    }

    let blocks = unstable
        .iter()
        .zip(lb)
        .zip(density)
        .zip(patterns)
        .map(|(((&block, lower_bound), density), pattern)| BlockAllocation { block, lower_bound, density, pattern })
        .collect();
    Ok(SubspaceSchedule { period, blocks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vector::real_jordan;
    use nalgebra::DMatrix;

    fn diag(v: &[f64]) -> SpectralDecomposition {
        real_jordan(&DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(v))).unwrap()
    }

    #[test]
    fn two_unstable_blocks() {
        let s = allocate_schedules(&diag(&[1.2, 1.3]), 2).unwrap();
        assert_eq!(s.blocks.len(), 2);
        assert!(s.total_density() < 1.0);
        let lbs: Vec<f64> = s.blocks.iter().map(|b| b.lower_bound).collect();
        assert!((lbs[0] - 1.3f64.log2()).abs() < 1e-12);
        assert!((lbs[1] - 1.2f64.log2()).abs() < 1e-12);
        for b in &s.blocks {
            assert!(b.density > b.lower_bound);
            assert!(b.schedule().is_strongly_dense());
        }
        for n in 1..=s.period {
            assert_eq!(s.blocks.iter().filter(|b| b.pattern[n - 1]).count(), 1);
        }
    }

    #[test]
    fn single_unstable_block_gets_every_step() {
        let s = allocate_schedules(&diag(&[2.0, 0.5]), 3).unwrap();
        assert_eq!(s.blocks.len(), 1);
        assert!(s.blocks[0].lower_bound > 0.63 && s.blocks[0].lower_bound < 0.631);
        assert!(s.blocks[0].pattern.iter().all(|&m| m));
    }

    #[test]
    fn infeasible_product() {
        let err = allocate_schedules(&diag(&[1.6, 1.6]), 2).unwrap_err();
        assert!(err.to_string().contains("2.56"));
    }
}
