//! Per-iteration records shared by every optimiser, and their CSV form.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::schema_line;

pub const TRACE_HEADER: &str = "iteration,infidelity,step_kind,step_size,elapsed_ms";

/// What produced the parameters recorded at an iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    /// Iteration 0: the starting point, no step taken.
    Initial,
    Geodesic,
    GramSchmidt,
    Adam,
    Newton,
    Rfo,
}

impl StepKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StepKind::Initial => "initial",
            StepKind::Geodesic => "geodesic",
            StepKind::GramSchmidt => "gram_schmidt",
            StepKind::Adam => "adam",
            StepKind::Newton => "newton",
            StepKind::Rfo => "rfo",
        }
    }
}

impl fmt::Display for StepKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StepKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "initial" => StepKind::Initial,
            "geodesic" => StepKind::Geodesic,
            "gram_schmidt" => StepKind::GramSchmidt,
            "adam" => StepKind::Adam,
            "newton" => StepKind::Newton,
            "rfo" => StepKind::Rfo,
            other => return Err(Error::Config(format!("unknown step kind {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub infidelity: f64,
    pub step_kind: StepKind,
    /// Length of the parameter update taken to reach this iterate.
    pub step_size: f64,
    pub elapsed_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Solved,
    MaxIters,
}

/// Wall-clock source for `elapsed_ms`. Disabled clocks report zero so that
/// repeated runs produce byte-identical traces.
#[derive(Debug, Clone, Copy)]
pub struct Stopwatch(Option<Instant>);

impl Stopwatch {
    pub fn new(enabled: bool) -> Self {
        Stopwatch(enabled.then(Instant::now))
    }

    pub fn elapsed_ms(&self) -> f64 {
        self.0.map_or(0.0, |t| t.elapsed().as_secs_f64() * 1e3)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptRunTrace {
    records: Vec<IterationRecord>,
    epsilon: f64,
    solved_at: Option<usize>,
}

impl OptRunTrace {
    pub fn new(epsilon: f64) -> Self {
        OptRunTrace { records: Vec::new(), epsilon, solved_at: None }
    }

    /// Appends the next iterate and returns whether it meets the threshold.
    ///
    /// # Panics
    /// If the run is already solved or the infidelity is outside `[0, 1]`.
    pub fn push(&mut self, infidelity: f64, step_kind: StepKind, step_size: f64, clock: &Stopwatch) -> bool {
        assert!(self.solved_at.is_none(), "trace already solved");
        assert!((0.0..=1.0).contains(&infidelity), "infidelity {infidelity} outside [0, 1]");
        let iteration = self.records.len();
        self.records.push(IterationRecord {
            iteration,
            infidelity,
            step_kind,
            step_size,
            elapsed_ms: clock.elapsed_ms(),
        });
        if infidelity < self.epsilon {
            self.solved_at = Some(iteration);
        }
        self.solved_at.is_some()
    }

    pub fn records(&self) -> &[IterationRecord] {
        &self.records
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn status(&self) -> RunStatus {
        if self.solved_at.is_some() {
            RunStatus::Solved
        } else {
            RunStatus::MaxIters
        }
    }

    pub fn solved_at(&self) -> Option<usize> {
        self.solved_at
    }

    /// Number of steps taken (iteration 0 is the starting point).
    pub fn iterations(&self) -> usize {
        self.records.len().saturating_sub(1)
    }

    pub fn final_infidelity(&self) -> Option<f64> {
        self.records.last().map(|r| r.infidelity)
    }

    /// `sum_{m=1}^{M_a} I(Phi^(m))`, where `M_a` is the solving iteration or `cap`.
    /// Iterations the run never reached (it stopped early without solving)
    /// contribute their last recorded infidelity.
    pub fn cumulative_infidelity(&self, cap: usize) -> f64 {
        let stop = self.solved_at.unwrap_or(cap).min(cap);
        let last = self.final_infidelity().unwrap_or(1.0);
        (1..=stop).map(|m| self.records.get(m).map_or(last, |r| r.infidelity)).sum()
    }

    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "{}", schema_line())?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(TRACE_HEADER.split(','))?;
        for r in &self.records {
            w.write_record([
                r.iteration.to_string(),
                format!("{:.17e}", r.infidelity),
                r.step_kind.to_string(),
                format!("{:.17e}", r.step_size),
                format!("{:.3}", r.elapsed_ms),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}
