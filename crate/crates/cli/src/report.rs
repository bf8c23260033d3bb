//! Human-readable verdict table.

use std::fmt::Write;

use crate::run::{ExperimentSummary, RunResult, Status};

fn mark(s: Status) -> &'static str {
    match s {
        Status::Pass => "PASS",
        Status::Fail => "FAIL",
        Status::Info => "info",
    }
}

pub fn render(s: &ExperimentSummary) -> String {
    let mut out = String::new();
    let c = &s.constants;
    let (trajectories, horizon) = match &s.result {
        RunResult::Scalar(b) => (b.trajectories, b.horizon),
        RunResult::Vector(b) => (b.trajectories, b.horizon),
    };
    let _ = writeln!(out, "seed {}  trajectories {trajectories}  horizon {horizon}", s.seed);
    let _ = writeln!(out, "trajectory i replays from seed {} ^ i", s.seed);
    let _ = writeln!(
        out,
        "constants  M={} k={} delta={} Delta={} B={} P={} C1={} delay={}",
        c["bins"], c["round_len"], c["delta"], c["moment_gap"], c["noise_bound"], c["probe"], c["initial_bound"], c["delay"]
    );
    if let RunResult::Vector(b) = &s.result {
        for p in &b.blocks {
            let _ = writeln!(
                out,
                "block {}  dim={} |lambda|={:.4} density={:.4} (lower bound {:.4}) k={} P={:.4e}",
                p.block, p.dim, p.modulus, p.density, p.lower_bound, p.round_len, p.probe
            );
        }
    }
    for w in &s.warnings {
        let _ = writeln!(out, "warning  {w}");
    }
    let width = s.verdicts.iter().map(|v| v.check.len()).max().unwrap_or(0);
    for v in &s.verdicts {
        let hard = if v.hard { "*" } else { " " };
        let _ = writeln!(out, "{} {hard} {:<width$}  {}", mark(v.status), v.check, v.detail);
    }
    let _ = writeln!(out, "(* hard check)  overall: {}", if s.passed { "PASS" } else { "FAIL" });
    out
}
