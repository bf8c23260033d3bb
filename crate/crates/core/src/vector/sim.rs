//! Closed-loop simulation of vector plants: one coder per unstable block, each
//! on its own share of the channel.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::noise::NoiseSampler;
use crate::num::Real;
use crate::params::{derivation_gain, derive_probe_factor, derive_round_length_scheduled, CheckedConfig, ControllerConfig, Plant, SystemModel};
use crate::rng::{Stream, TrajectoryRng};
use crate::scalar::{wrap_schedule, CoderState, LoopPolicy, Mode, ScheduleLoop, Symbol, ZoomLoop, ZoomParams};
use crate::schedule::TransmissionSchedule;

use super::allocate::{allocate_schedules, SubspaceSchedule};
use super::ballcode::{grid_for_budget, BallCode};
use super::jordan::{op_norm, real_jordan, SpectralDecomposition};
use super::stabilize::{stabilizable_decompose, ControlRealizer};

/// Largest round length tried for a multi-dimensional block.
const MAX_BALL_ROUND: u32 = 60;

/// `||A^i||` and `sum_{t<i} ||A^t||`, extended on demand.
#[derive(Debug, Clone)]
struct PowerTable {
    a: DMatrix<f64>,
    powers: Vec<DMatrix<f64>>,
    norms: Vec<f64>,
    partial: Vec<f64>,
}

impl PowerTable {
    fn new(a: DMatrix<f64>) -> Self {
        let id = DMatrix::identity(a.nrows(), a.ncols());
        Self { a, powers: vec![id], norms: vec![1.0], partial: vec![0.0, 1.0] }
    }

    fn extend(&mut self, i: usize) {
        while self.powers.len() <= i {
            let next = &self.a * self.powers.last().expect("nonempty");
            self.norms.push(op_norm(&next));
            self.partial.push(self.partial.last().expect("nonempty") + self.norms.last().expect("nonempty"));
            self.powers.push(next);
        }
    }

    fn power(&mut self, i: usize) -> &DMatrix<f64> {
        self.extend(i);
        &self.powers[i]
    }

    fn norm(&mut self, i: usize) -> f64 {
        self.extend(i);
        self.norms[i]
    }

    /// `sum_{t<i} ||A^t||`.
    fn partial(&mut self, i: usize) -> f64 {
        self.extend(i);
        self.partial[i]
    }
}

/// Where the next test bound comes from: the state was within `radius` of the
/// controlled trajectory at `step`, and the bound is scaled by `mult`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Anchor {
    step: u64,
    radius: f64,
    mult: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum BallPhase {
    Test { probes: u32 },
    Digits { start: u64, radius: f64, sent: u32, received: u64 },
}

/// Round-based coder for a block of dimension two or more. At a passed test
/// the state is located on a grid over the current ball and the cell index is
/// sent as base-`M` digits over the next `k - 1` scheduled steps; the control
/// fires once the last digit arrives.
#[derive(Debug, Clone)]
struct BallCoder {
    bins: u32,
    round_len: u32,
    probe: f64,
    noise_bound: f64,
    table: PowerTable,
    phase: BallPhase,
    anchor: Anchor,
    /// Cell index known to the quantizer only.
    pending_index: u64,
    round_id: u64,
}

impl BallCoder {
    fn bound_at(&mut self, n: u64) -> f64 {
        let gap = (n - self.anchor.step) as usize;
        self.anchor.mult * (self.table.norm(gap) * self.anchor.radius + self.noise_bound * self.table.partial(gap))
    }

    fn budget(&self) -> u64 {
        (self.bins as u64).saturating_pow(self.round_len - 1)
    }

    fn digit(&self, sent: u32) -> u32 {
        let place = (self.bins as u64).pow(self.round_len - 2 - sent);
        ((self.pending_index / place) % self.bins as u64) as u32
    }

    /// One scheduled step: returns symbol, control in block coordinates, bound and mode.
    fn step(&mut self, n: u64, w: &DVector<f64>) -> Result<(Symbol, Option<DVector<f64>>, f64, Mode)> {
        match self.phase {
            BallPhase::Test { probes } => {
                let c = self.bound_at(n);
                let mode = if probes == 0 { Mode::MagnitudeTest } else { Mode::Emergency(probes) };
                if w.norm() <= c || self.bins < 2 {
                    let code = BallCode::new(DVector::zeros(w.len()), c, self.budget())?;
                    self.pending_index = code.encode(w);
                    self.phase = BallPhase::Digits { start: n, radius: c, sent: 0, received: 0 };
                    self.round_id += 1;
                    Ok((Symbol::PASS, None, c, mode))
                } else {
                    self.anchor = Anchor { step: n, radius: c, mult: self.probe };
                    self.phase = BallPhase::Test { probes: probes + 1 };
                    Ok((Symbol::FAIL, None, c, mode))
                }
            }
            BallPhase::Digits { start, radius, sent, received } => {
                let symbol = Symbol(self.digit(sent));
                let received = received * self.bins as u64 + symbol.0 as u64;
                let gap = (n - start) as usize;
                let envelope = self.table.norm(gap) * radius + self.noise_bound * self.table.partial(gap);
                let mode = Mode::Normal(sent + 1);
                if sent + 2 < self.round_len {
                    self.phase = BallPhase::Digits { start, radius, sent: sent + 1, received };
                    return Ok((symbol, None, envelope, mode));
                }
                let code = BallCode::new(DVector::zeros(self.table.a.nrows()), radius, self.budget())?;
                let center = code.decode(received);
                let u = self.table.power(gap + 1) * center;
                self.anchor = Anchor { step: start, radius: code.child_radius(), mult: 1.0 };
                self.phase = BallPhase::Test { probes: 0 };
                Ok((symbol, Some(u), envelope, mode))
            }
        }
    }
}

#[derive(Debug, Clone)]
enum BlockCoder {
    Scalar(ScheduleLoop<ZoomLoop<f64>>),
    Ball(Box<BallCoder>),
}

/// Constants chosen for one unstable block.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockPlan {
    pub block: usize,
    pub dim: usize,
    pub modulus: f64,
    pub density: f64,
    pub lower_bound: f64,
    pub round_len: u32,
    pub probe: f64,
    pub noise_bound: f64,
    pub initial_bound: f64,
    /// Grid cells per axis for multi-dimensional blocks.
    pub grid: Option<u64>,
}

/// Everything fixed before a vector run: decomposition, schedules, per-block
/// constants and the actuator realization.
#[derive(Debug, Clone)]
pub struct VectorPlan {
    pub a: DMatrix<f64>,
    pub control: DMatrix<f64>,
    pub decomposition: SpectralDecomposition,
    pub schedule: SubspaceSchedule,
    pub blocks: Vec<BlockPlan>,
    pub delay: usize,
    bins: u32,
}

fn ball_round_len(table: &mut PowerTable, dim: usize, bins: u32, target: f64, schedule: &TransmissionSchedule) -> Option<u32> {
    (2..=MAX_BALL_ROUND).find(|&k| {
        let budget = match (bins as u64).checked_pow(k - 1) {
            Some(b) if b < (1 << 62) => b,
            _ => return false,
        };
        let g = grid_for_budget(budget, dim) as f64;
        schedule
            .spans(k as usize)
            .into_iter()
            .all(|span| table.norm(span) * (dim as f64).sqrt() / g <= target)
    })
}

impl VectorPlan {
    pub fn new(model: &SystemModel<f64>, config: &ControllerConfig<f64>) -> Result<Self> {
        let Plant::Vector { a, control } = &model.plant else {
            return Err(Error::NotApplicable("vector plan needs a matrix plant".into()));
        };
        let canon = stabilizable_decompose(a, control)?;
        let decomposition = real_jordan(a)?;
        let schedule = allocate_schedules(&decomposition, config.bins)?;
        let a_l = a.pow(canon.delay as u32);
        let target = 1.0 - 3.0 * config.delta;
        let m = config.bins as f64;
        let mut blocks = Vec::with_capacity(schedule.blocks.len());
        for alloc in &schedule.blocks {
            let b = &decomposition.blocks[alloc.block];
            let sched = alloc.schedule();
            let noise_bound = config.noise_bound * op_norm(&(decomposition.projector(alloc.block) * &a_l));
            let growth = b.modulus.powi(b.dim as i32);
            let (round_len, grid) = if b.dim == 1 {
                (derive_round_length_scheduled(b.modulus, config.bins, config.delta, &sched)?, None)
            } else {
                let mut table = PowerTable::new(b.matrix.clone());
                let k = ball_round_len(&mut table, b.dim, config.bins, target, &sched).ok_or_else(|| {
                    Error::Infeasible(format!("no round length contracts block {} within {MAX_BALL_ROUND}", alloc.block))
                })?;
                (k, Some(grid_for_budget((config.bins as u64).pow(k - 1), b.dim)))
            };
            let probe = derive_probe_factor(derivation_gain(b.modulus.max(1.0)), round_len, config.delta, config.alpha, config.moment_gap)?;
            blocks.push(BlockPlan {
                block: alloc.block,
                dim: b.dim,
                modulus: b.modulus,
                density: alloc.density,
                lower_bound: alloc.lower_bound,
                round_len,
                probe,
                noise_bound,
                initial_bound: noise_bound.max(f64::MIN_POSITIVE) / (1.0 - growth / m),
                grid,
            });
        }
        Ok(Self { a: a.clone(), control: control.clone(), decomposition, schedule, blocks, delay: canon.delay, bins: config.bins })
    }

    fn coders(&self) -> Vec<BlockCoder> {
        self.blocks
            .iter()
            .zip(&self.schedule.blocks)
            .map(|(p, alloc)| {
                let b = &self.decomposition.blocks[p.block];
                if p.dim == 1 {
                    let params = ZoomParams {
                        gain: b.matrix[(0, 0)],
                        bins: self.bins,
                        round_len: p.round_len,
                        noise_bound: p.noise_bound,
                        probe: p.probe,
                        scheme: crate::params::Scheme::ZoomInOut,
                    };
                    let zoom = ZoomLoop::new(params, CoderState::initial(&params, p.initial_bound, false));
                    BlockCoder::Scalar(wrap_schedule(zoom, alloc.schedule()))
                } else {
                    BlockCoder::Ball(Box::new(BallCoder {
                        bins: self.bins,
                        round_len: p.round_len,
                        probe: p.probe,
                        noise_bound: p.noise_bound,
                        table: PowerTable::new(b.matrix.clone()),
                        phase: BallPhase::Test { probes: 0 },
                        anchor: Anchor { step: 0, radius: p.initial_bound, mult: 1.0 },
                        pending_index: 0,
                        round_id: 0,
                    }))
                }
            })
            .collect()
    }

    /// Runs from `x1` with noise drawn from `noise`.
    pub fn run(&self, x1: DVector<f64>, horizon: usize, mut noise: impl FnMut() -> DVector<f64>) -> Result<VectorTrace> {
        let d = self.a.nrows();
        let l = self.delay;
        let mut coders = self.coders();
        let mut realizer = ControlRealizer::new(&self.a, &self.control, l)?;
        let a_pows: Vec<DMatrix<f64>> = (0..=l).map(|i| self.a.pow(i as u32)).collect();
        // Committed inputs enter the virtual state as A^(l-1-t) Bc.
        let lead: Vec<DMatrix<f64>> = (0..l).map(|t| &a_pows[l - 1 - t] * &self.control).collect();
        let mut x = x1;
        let mut steps = Vec::with_capacity(horizon);
        let mut diverged_at = None;

        for n in 1..=horizon as u64 {
            // Where the state will be in `l` steps, noise aside, under the
            // inputs already committed. Built from the true state so that
            // rounding never accumulates through the unstable modes.
            let mut w = &a_pows[l] * &x;
            for (t, u) in realizer.committed().iter().enumerate() {
                w -= &lead[t] * u;
            }
            let coords = &self.decomposition.inverse * &w;
            let owner = self.schedule.owner(n as usize);
            let mut u_hat = DVector::zeros(d);
            let mut record = (None, 0.0, Mode::Passive, 0u64);
            for (j, coder) in coders.iter_mut().enumerate() {
                let b = &self.decomposition.blocks[self.blocks[j].block];
                let wj = coords.rows(b.offset, b.dim).into_owned();
                match coder {
                    BlockCoder::Scalar(lp) => {
                        let s = lp.step(wj[0])?;
                        if s.control != 0.0 {
                            u_hat += self.decomposition.basis.column(b.offset) * s.control;
                        }
                        if owner == Some(j) {
                            record = (s.symbol, s.bound, s.mode, s.round_id);
                        }
                    }
                    BlockCoder::Ball(bc) => {
                        if owner == Some(j) {
                            let (sym, u, bound, mode) = bc.step(n, &wj)?;
                            if let Some(u) = u {
                                u_hat += self.decomposition.columns(self.blocks[j].block) * u;
                            }
                            record = (Some(sym), bound, mode, bc.round_id);
                        }
                    }
                }
            }
            let u = realizer.push(&u_hat)?;
            let z = noise();
            steps.push(VectorStep {
                n,
                norm: x.norm(),
                x: x.clone(),
                owner,
                symbol: record.0,
                control_norm: u_hat.norm(),
                bound: record.1,
                mode: record.2,
                round_id: record.3,
            });
            x = &self.a * &x + &z - &self.control * u;
            if !(x.norm() <= <f64 as Real>::DIVERGENCE_GUARD) {
                diverged_at = Some(n);
                break;
            }
        }
        Ok(VectorTrace { steps, diverged_at, seed: 0, index: 0 })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorStep {
    pub n: u64,
    pub x: DVector<f64>,
    pub norm: f64,
    /// Unstable block (index into the plan's blocks) using the channel.
    pub owner: Option<usize>,
    pub symbol: Option<Symbol>,
    pub control_norm: f64,
    pub bound: f64,
    pub mode: Mode,
    pub round_id: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorTrace {
    pub steps: Vec<VectorStep>,
    pub diverged_at: Option<u64>,
    pub seed: u64,
    pub index: u64,
}

impl VectorTrace {
    pub fn diverged(&self) -> bool {
        self.diverged_at.is_some()
    }
}

/// One closed-loop vector trajectory with noise components drawn i.i.d. from
/// the model's noise family.
pub fn simulate_vector(model: &SystemModel<f64>, config: &CheckedConfig<f64>, horizon: usize, rng: TrajectoryRng) -> Result<VectorTrace> {
    let plan = VectorPlan::new(model, config.config())?;
    simulate_with_plan(&plan, model, horizon, rng)
}

/// As [`simulate_vector`] with a precomputed plan.
pub fn simulate_with_plan(plan: &VectorPlan, model: &SystemModel<f64>, horizon: usize, rng: TrajectoryRng) -> Result<VectorTrace> {
    let d = plan.a.nrows();
    let mut init = rng.stream(Stream::Initial);
    let x1 = DVector::from_fn(d, |_, _| model.initial.sample(&mut init));
    let mut sampler: NoiseSampler = model.noise.sampler()?;
    let mut noise_rng = rng.stream(Stream::Noise);
    let mut trace = plan.run(x1, horizon, || DVector::from_fn(d, |_, _| sampler.next(&mut noise_rng)))?;
    trace.seed = rng.seed;
    trace.index = rng.index;
    Ok(trace)
}
