//! Binds a parsed configuration to the simulators, estimators and certificates.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use bitstab::analysis::{
    decay_verdict, run_scalar_batch, run_vector_batch, tau_slope_threshold, BatchOptions, CertificateSummary, ScalarBatch, VectorBatch,
};
use bitstab::params::{ControllerConfig, Scheme, SystemModel, Violation};
use bitstab::rng::{Stream, TrajectoryRng};
use bitstab::{Real, TrajectoryTrace, VectorTrace};
use serde::Serialize;

use crate::config::{ExperimentConfig, Expectation, Precision, SCHEMA_VERSION};

/// `P(tau >= j)` points with fewer samples are left out of the slope fit.
const TAIL_MIN_COUNT: u64 = 50;

#[derive(Debug)]
pub enum RunError {
    /// Unparseable or structurally invalid file.
    Config(String),
    /// Constants rejected by the validator.
    Invalid(Vec<Violation>),
    Io(String),
}

impl RunError {
    pub fn exit_code(&self) -> u8 {
        match self {
            RunError::Config(_) | RunError::Invalid(_) => 2,
            RunError::Io(_) => 4,
        }
    }
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Config(m) => write!(f, "invalid config: {m}"),
            RunError::Invalid(v) => {
                writeln!(f, "configuration rejected by the validator:")?;
                for v in v {
                    writeln!(f, "  - {v}")?;
                }
                Ok(())
            }
            RunError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

fn io_err(path: &Path, e: io::Error) -> RunError {
    RunError::Io(format!("{}: {e}", path.display()))
}

fn core_err(e: bitstab::Error) -> RunError {
    match e {
        bitstab::Error::InvalidConfig(v) => RunError::Invalid(v),
        other => RunError::Config(other.to_string()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Info,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub check: String,
    pub status: Status,
    /// A failing hard check fails the run.
    pub hard: bool,
    pub detail: String,
}

impl Verdict {
    fn new(check: &str, pass: bool, hard: bool, detail: String) -> Self {
        Self { check: check.into(), status: if pass { Status::Pass } else { Status::Fail }, hard, detail }
    }

    fn info(check: &str, detail: String) -> Self {
        Self { check: check.into(), status: Status::Info, hard: false, detail }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
#[allow(clippy::large_enum_variant)]
pub enum RunResult {
    Scalar(ScalarBatch),
    Vector(VectorBatch),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentSummary {
    pub schema_version: u32,
    /// Trajectory `i` is reproduced from seed `seed ^ i`.
    pub seed: u64,
    pub config: ExperimentConfig,
    /// Constants after derivation, as simulated.
    pub constants: serde_json::Value,
    pub warnings: Vec<Violation>,
    pub result: RunResult,
    pub verdicts: Vec<Verdict>,
    pub passed: bool,
}

/// Where the run writes, after flags override the file.
#[derive(Debug, Clone, Default)]
pub struct Outputs {
    pub traces_dir: Option<PathBuf>,
}

fn derive<R: Real + Serialize>(
    cfg: &ExperimentConfig,
    model: &SystemModel<R>,
    seed: u64,
) -> Result<bitstab::CheckedConfig<R>, RunError> {
    let overrides = cfg.overrides::<R>().map_err(RunError::Config)?;
    let mut rng = TrajectoryRng::new(seed, 0).stream(Stream::NoiseBoundSearch);
    let derived = ControllerConfig::derive(model, R::lit(cfg.alpha()), R::lit(cfg.controller.beta), &overrides, &mut rng).map_err(core_err)?;
    derived.check(model).map_err(RunError::Invalid)
}

fn trace_path(dir: &Path, index: u64) -> PathBuf {
    dir.join(format!("trajectory_{index:06}.csv"))
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> io::Result<()>) -> bitstab::Result<()> {
    let wrap = |e: io::Error| bitstab::Error::Io(format!("{}: {e}", path.display()));
    let mut w = BufWriter::new(File::create(path).map_err(wrap)?);
    f(&mut w).and_then(|_| w.flush()).map_err(wrap)
}

fn write_vector_csv<W: Write>(t: &VectorTrace, w: &mut W) -> io::Result<()> {
    let d = t.steps.first().map_or(0, |s| s.x.len());
    let xs: Vec<String> = (0..d).map(|i| format!("x{i}")).collect();
    writeln!(w, "n,{},norm,owner,symbol,control_norm,bound,mode,round_id", xs.join(","))?;
    for s in &t.steps {
        let x: Vec<String> = s.x.iter().map(|v| v.to_string()).collect();
        let owner = s.owner.map(|o| o.to_string()).unwrap_or_default();
        let sym = s.symbol.map(|v| v.0.to_string()).unwrap_or_default();
        writeln!(w, "{},{},{},{owner},{sym},{},{},{},{}", s.n, x.join(","), s.norm, s.control_norm, s.bound, s.mode, s.round_id)?;
    }
    Ok(())
}

fn batch_options(cfg: &ExperimentConfig, seed: u64) -> BatchOptions {
    BatchOptions {
        grid_points: cfg.analysis.grid_points,
        certificates: cfg.analysis.certificates,
        contraction: cfg.analysis.contraction,
        noise_lags: cfg.analysis.noise_lags,
        ..BatchOptions::new(cfg.trajectories, cfg.horizon, seed)
    }
}

fn batch_err(e: bitstab::Error) -> RunError {
    match e {
        bitstab::Error::Io(m) => RunError::Io(m),
        other => core_err(other),
    }
}

fn prepare_dir(outputs: &Outputs) -> Result<(), RunError> {
    if let Some(dir) = &outputs.traces_dir {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    Ok(())
}

/// Runs the experiment. Errors are configuration or I/O problems; failed
/// checks are reported in the summary.
pub fn run_experiment(cfg: &ExperimentConfig, seed: u64, outputs: &Outputs) -> Result<ExperimentSummary, RunError> {
    prepare_dir(outputs)?;
    if cfg.is_vector() {
        return run_vector(cfg, seed, outputs);
    }
    match cfg.precision {
        Precision::F64 => run_scalar::<f64>(cfg, seed, outputs),
        Precision::F32 => run_scalar::<f32>(cfg, seed, outputs),
    }
}

fn certificate_verdict(name: &str, c: &CertificateSummary) -> Verdict {
    let detail = match c.first.first() {
        None => format!("{} rounds, no violations", c.rounds_checked),
        Some(v) => format!(
            "{} violations over {} rounds; first: trajectory {} round {} step {} ({:.6e} > {:.6e})",
            c.violations, c.rounds_checked, v.trajectory, v.violation.round_id, v.violation.step, v.violation.lhs, v.violation.rhs
        ),
    };
    Verdict::new(name, c.passed(), true, detail)
}

fn stability_verdict(
    expect: Option<Expectation>,
    plateau: bool,
    diverged: &[u64],
    growth: f64,
    beta: f64,
    gain: Option<f64>,
    seed: u64,
) -> Verdict {
    let reference = gain.map(|a| format!(", beta*ln|a|={:.4}", beta * a.abs().ln())).unwrap_or_default();
    let div = match diverged.first() {
        Some(i) => format!(", {} diverged (first: trajectory {i}, seed {})", diverged.len(), seed ^ i),
        None => String::new(),
    };
    let detail = format!("plateau={plateau}, growth rate={growth:.4}{reference}{div}");
    match expect {
        Some(Expectation::Stable) => Verdict::new("stability", plateau && diverged.is_empty(), true, detail),
        Some(Expectation::Unstable) => Verdict::new("instability", !plateau && (growth > 0.0 || !diverged.is_empty()), true, detail),
        None => Verdict::new("stability", plateau && diverged.is_empty(), false, detail),
    }
}

fn run_scalar<R: Real + Serialize>(cfg: &ExperimentConfig, seed: u64, outputs: &Outputs) -> Result<ExperimentSummary, RunError> {
    let model: SystemModel<R> = cfg.scalar_model();
    let checked = derive(cfg, &model, seed)?;
    let c = checked.config();
    let on_trace = |t: &TrajectoryTrace<R>| match &outputs.traces_dir {
        Some(dir) => write_file(&trace_path(dir, t.index), |w| t.write_csv(w)),
        None => Ok(()),
    };
    let batch = run_scalar_batch(&model, &checked, &batch_options(cfg, seed), on_trace).map_err(batch_err)?;

    let gain = cfg.model.gain.expect("scalar plant");
    let mut verdicts = vec![stability_verdict(
        cfg.analysis.expect,
        batch.moments.plateau,
        &batch.diverged,
        batch.moments.log_growth_rate(),
        c.beta.as_f64(),
        Some(gain),
        seed,
    )];
    let tau_applies = cfg.analysis.tau_tail && gain.abs() > 1.0 && c.scheme == Scheme::ZoomInOut;
    if tau_applies {
        let threshold = tau_slope_threshold(c.alpha.as_f64(), c.moment_gap.as_f64(), c.probe.as_f64(), gain.abs());
        let v = decay_verdict(&batch.tau, threshold, TAIL_MIN_COUNT);
        let slope = v.slope.map_or("none".into(), |s| format!("{s:.4}{}", if v.bounded { " (bound)" } else { "" }));
        verdicts.push(Verdict::new(
            "tau tail",
            v.pass,
            false,
            format!("{} rounds, monotone={}, slope={slope}, threshold={:.4}", batch.tau.total, v.monotone, v.threshold),
        ));
    }
    if let Some(limit) = cfg.analysis.max_tau {
        let at = match batch.max_tau_round {
            Some((i, r)) => format!(" at trajectory {i} round {r} (seed {})", seed ^ i),
            None => String::new(),
        };
        verdicts.push(Verdict::new("max tau", batch.max_tau <= limit, true, format!("max tau {}{at}, limit {limit}", batch.max_tau)));
    }
    if let Some(y) = &batch.contraction {
        verdicts.push(Verdict::info(
            "Y contraction",
            format!("{} rounds, fraction with Y<=1-3delta {:.6}, max Y {:.4}", y.rounds, y.fraction_contracting, y.max),
        ));
    }
    if let Some(l) = &batch.lemma_max {
        verdicts.push(certificate_verdict("lemma max bound", l));
    }
    if let Some(n) = &batch.normal_bound {
        verdicts.push(certificate_verdict("normal-step bound", n));
    }
    if let Some(b) = &batch.bounded_noise {
        let detail = match b.first_failure {
            None => format!("{} trajectories, |X|<=C throughout, fixed point {:.6}", b.trajectories, b.fixed_point),
            Some((i, n, r)) => format!("{} of {} failed; first: trajectory {i} step {n} round {r} (seed {})", b.failed, b.trajectories, seed ^ i),
        };
        verdicts.push(Verdict::new("bounded-noise bound", b.passed(), true, detail));
    }
    if let Some(z) = &batch.noise {
        verdicts.push(Verdict::info("noise autocovariance", {
            let se: Vec<String> = z.std_err.iter().map(|s| format!("{s:.2e}")).collect();
            format!("lags {:.4?}, std errors [{}]", z.lag, se.join(", "))
        }));
    }
    Ok(finish(cfg, seed, serde_json::to_value(c).expect("constants serialize"), checked.warnings().to_vec(), RunResult::Scalar(batch), verdicts))
}

fn run_vector(cfg: &ExperimentConfig, seed: u64, outputs: &Outputs) -> Result<ExperimentSummary, RunError> {
    let model = cfg.vector_model().map_err(RunError::Config)?;
    let checked = derive(cfg, &model, seed)?;
    let on_trace = |t: &VectorTrace| match &outputs.traces_dir {
        Some(dir) => write_file(&trace_path(dir, t.index), |w| write_vector_csv(t, w)),
        None => Ok(()),
    };
    let batch = run_vector_batch(&model, &checked, &batch_options(cfg, seed), on_trace).map_err(batch_err)?;
    let mut verdicts = vec![stability_verdict(
        cfg.analysis.expect,
        batch.moments.plateau,
        &batch.diverged,
        batch.moments.log_growth_rate(),
        checked.config().beta,
        None,
        seed,
    )];
    let densities: Vec<String> = batch.blocks.iter().map(|b| format!("{:.4}", b.density)).collect();
    verdicts.push(Verdict::new(
        "channel shares",
        batch.total_density < 1.0,
        false,
        format!("per-block densities [{}], sum {:.4}", densities.join(", "), batch.total_density),
    ));
    Ok(finish(
        cfg,
        seed,
        serde_json::to_value(checked.config()).expect("constants serialize"),
        checked.warnings().to_vec(),
        RunResult::Vector(batch),
        verdicts,
    ))
}

fn finish(
    cfg: &ExperimentConfig,
    seed: u64,
    constants: serde_json::Value,
    warnings: Vec<Violation>,
    result: RunResult,
    verdicts: Vec<Verdict>,
) -> ExperimentSummary {
    let passed = verdicts.iter().all(|v| !v.hard || v.status != Status::Fail);
    ExperimentSummary { schema_version: SCHEMA_VERSION, seed, config: cfg.clone(), constants, warnings, result, verdicts, passed }
}

pub fn write_summary(summary: &ExperimentSummary, path: &Path) -> Result<(), RunError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    let mut text = serde_json::to_string_pretty(summary).expect("summary serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| io_err(path, e))
}
