//! Transmission schedules: the set of steps on which the channel carries a symbol.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TransmissionSchedule {
    #[default]
    EveryStep,
    /// A periodic pattern claimed to be strongly `density`-dense with window `window`.
    /// Step `n` (1-based) is a member iff `pattern[(n - 1) % pattern.len()]`.
    Periodic { pattern: Vec<bool>, density: f64, window: usize },
}

impl TransmissionSchedule {
    /// Builds the pattern with `members` evenly spread slots out of every `period`.
    pub fn evenly_spread(members: usize, period: usize, density: f64) -> Result<Self> {
        if period == 0 || members == 0 || members > period {
            return Err(Error::InvalidParameter {
                name: "schedule",
                reason: format!("cannot place {members} members in period {period}"),
            });
        }
        let pattern = (0..period)
            .map(|i| (i * members) / period != ((i + 1) * members) / period)
            .collect();
        Ok(Self::Periodic { pattern, density, window: period })
    }

    #[inline]
    pub fn is_member(&self, n: usize) -> bool {
        match self {
            Self::EveryStep => true,
            Self::Periodic { pattern, .. } => pattern[(n.max(1) - 1) % pattern.len()],
        }
    }

    pub fn density(&self) -> f64 {
        match self {
            Self::EveryStep => 1.0,
            Self::Periodic { density, .. } => *density,
        }
    }

    pub fn is_every_step(&self) -> bool {
        match self {
            Self::EveryStep => true,
            Self::Periodic { pattern, .. } => pattern.iter().all(|&m| m),
        }
    }

    /// Pattern period (1 for the every-step schedule).
    pub fn period(&self) -> usize {
        match self {
            Self::EveryStep => 1,
            Self::Periodic { pattern, .. } => pattern.len(),
        }
    }

    /// Fewest members over all windows of `window` consecutive steps, found by
    /// scanning every window start over one period.
    pub fn min_window_count(&self, window: usize) -> usize {
        match self {
            Self::EveryStep => window,
            Self::Periodic { pattern, .. } => {
                let len = pattern.len();
                let mut count: usize = (0..window).filter(|&i| pattern[i % len]).count();
                let mut best = count;
                for start in 1..len {
                    if pattern[(start - 1) % len] {
                        count -= 1;
                    }
                    if pattern[(start + window - 1) % len] {
                        count += 1;
                    }
                    best = best.min(count);
                }
                best
            }
        }
    }

    /// Checks that every window of `window` consecutive steps holds strictly more
    /// than `density * window` members.
    pub fn is_strongly_dense(&self) -> bool {
        match self {
            Self::EveryStep => true,
            Self::Periodic { pattern, density, window } => {
                !pattern.is_empty()
                    && *window > 0
                    && density.is_finite()
                    && (self.min_window_count(*window) as f64) > density * (*window as f64)
            }
        }
    }

    /// Distances from each member slot to the member `count` slots later.
    /// Every-step schedules return `[count]`.
    pub fn spans(&self, count: usize) -> Vec<usize> {
        match self {
            Self::EveryStep => vec![count],
            Self::Periodic { pattern, .. } => {
                let len = pattern.len();
                let members: Vec<usize> = (0..len).filter(|&i| pattern[i]).collect();
                if members.is_empty() {
                    return Vec::new();
                }
                let per = members.len();
                members
                    .iter()
                    .enumerate()
                    .map(|(idx, &start)| {
                        let target = idx + count;
                        let wraps = target / per;
                        members[target % per] + wraps * len - start
                    })
                    .collect()
            }
        }
    }
}
