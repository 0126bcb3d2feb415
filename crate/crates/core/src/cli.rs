//! Experiment configuration and the commands behind the `geope` binary.
//!
//! Every command is a pure function of its [`ExperimentConfig`] (plus the
//! worker count, which never changes results), and writes only data files.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geope::{run as geope_run, GeopeConfig, RunOutcome, RunSettings};
use crate::hyperopt::{search, Method, SearchConfig, SearchResult};
use crate::model::{rydberg_problem, schema_line, ControlProblem, GateName, GateTarget, PulseSequence};
use crate::trace::RunStatus;

fn default_qubits() -> usize {
    3
}
fn default_lattice() -> String {
    "rydberg".into()
}
fn default_j0() -> f64 {
    1.0
}
fn default_epsilon() -> f64 {
    1e-9
}
fn default_max_iters() -> usize {
    200
}
fn default_samples() -> usize {
    100
}
fn default_init_scale() -> f64 {
    1.0
}
fn default_gs_factor() -> f64 {
    1.2
}
fn default_out() -> PathBuf {
    PathBuf::from("out")
}
fn default_budget() -> usize {
    25
}
fn default_n0() -> usize {
    5
}
fn default_kappa_bo() -> f64 {
    5.0
}
fn default_alpha_bo() -> f64 {
    0.02
}
fn default_search_samples() -> usize {
    50
}

/// One experiment, read from a flat TOML file. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub gate: GateName,
    #[serde(default = "default_qubits")]
    pub qubits: usize,
    #[serde(default = "default_lattice")]
    pub lattice: String,
    #[serde(default = "default_j0")]
    pub j0: f64,
    pub layers: usize,
    pub method: Method,
    /// `eta_max`, learning rate, `delta` or `kappa` depending on `method`.
    /// Optional for `hypersearch`, which searches it.
    #[serde(default)]
    pub hyperparameter: Option<f64>,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
    #[serde(default = "default_gs_factor")]
    pub gs_factor: f64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub search_lo: Option<f64>,
    #[serde(default)]
    pub search_hi: Option<f64>,
    #[serde(default = "default_budget")]
    pub budget: usize,
    #[serde(default = "default_n0")]
    pub n0: usize,
    #[serde(default = "default_kappa_bo")]
    pub kappa_bo: f64,
    #[serde(default = "default_alpha_bo")]
    pub alpha_bo: f64,
    /// Runs per hyperparameter observation (`N_a`).
    #[serde(default = "default_search_samples")]
    pub search_samples: usize,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lattice != "rydberg" {
            return Err(Error::Config(format!("unknown lattice {:?} (only \"rydberg\" is available)", self.lattice)));
        }
        if self.samples == 0 {
            return Err(Error::Config("samples must be at least 1".into()));
        }
        if let Some(p) = self.hyperparameter {
            if !(p > 0.0 && p.is_finite()) {
                return Err(Error::Config(format!("hyperparameter {p} must be positive")));
            }
        }
        self.problem()?;
        self.run_settings(self.seed).validate()?;
        Ok(())
    }

    pub fn problem(&self) -> Result<ControlProblem> {
        let target = GateTarget::new(self.gate, self.qubits)?;
        rydberg_problem(self.qubits, self.j0, &target, self.epsilon)
    }

    pub fn run_settings(&self, seed: u64) -> RunSettings {
        let mut run = RunSettings::new(self.layers, self.max_iters, seed);
        run.init_scale = self.init_scale;
        run
    }

    fn hyperparameter(&self) -> Result<f64> {
        self.hyperparameter
            .ok_or_else(|| Error::Config(format!("`hyperparameter` is required for method {}", self.method)))
    }

    /// Runs the configured method once with hyperparameter `p` and `seed`.
    pub fn run_with(&self, problem: &ControlProblem, p: f64, seed: u64) -> Result<RunOutcome> {
        let run = self.run_settings(seed);
        match self.method {
            Method::Geope => {
                let mut cfg = GeopeConfig::new(p, run);
                cfg.gs_factor = self.gs_factor;
                geope_run(problem, &cfg)
            }
            other => other.run(problem, p, run),
        }
    }

    pub fn search_config(&self) -> Result<SearchConfig> {
        let (lo, hi) = match (self.search_lo, self.search_hi) {
            (Some(lo), Some(hi)) => (lo, hi),
            _ => return Err(Error::Config("hypersearch needs `search_lo` and `search_hi`".into())),
        };
        let cfg = SearchConfig {
            lo,
            hi,
            n0: self.n0,
            kappa_bo: self.kappa_bo,
            alpha_bo: self.alpha_bo,
            samples: self.search_samples,
            cap: self.max_iters,
            budget: self.budget,
            seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Fraction of samples solved by each iteration `0..=max_iters`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuccessCurve {
    pub fractions: Vec<f64>,
}

impl SuccessCurve {
    pub fn from_solved(solved_at: &[Option<usize>], max_iters: usize) -> Self {
        let n = solved_at.len().max(1) as f64;
        let fractions = (0..=max_iters)
            .map(|m| solved_at.iter().filter(|s| s.is_some_and(|s| s <= m)).count() as f64 / n)
            .collect();
        SuccessCurve { fractions }
    }

    pub fn write_csv(&self, mut out: impl std::io::Write) -> Result<()> {
        writeln!(out, "{}", schema_line())?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iteration", "fraction_solved"])?;
        for (m, f) in self.fractions.iter().enumerate() {
            w.write_record([m.to_string(), format!("{f:.6}")])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Everything needed to reproduce and re-export a single run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub config: ExperimentConfig,
    pub seed: u64,
    pub status: RunStatus,
    pub solved_at: Option<usize>,
    pub final_infidelity: f64,
    pub layers: usize,
    pub controls: usize,
    pub pauli_words: Vec<String>,
    /// Row-major `layers x controls` control values.
    pub values: Vec<f64>,
}

impl Solution {
    pub fn pulses(&self) -> Result<PulseSequence> {
        PulseSequence::from_values(self.layers, self.controls, self.values.clone())
    }
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(fs::File::create(path)?))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut f = create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    std::io::Write::write_all(&mut f, b"\n")?;
    Ok(())
}

/// Files written by a command.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Written(pub Vec<PathBuf>);

/// Runs one seeded optimisation; writes `trace.csv`, `solution.json` and,
/// when solved, `pulses.csv` into `out`.
pub fn cmd_solve(config: &ExperimentConfig, out: &Path) -> Result<(Solution, Written)> {
    let problem = config.problem()?;
    let outcome = config.run_with(&problem, config.hyperparameter()?, config.seed)?;
    let trace_path = out.join("trace.csv");
    outcome.trace.write_csv(create(&trace_path)?)?;
    let solution = Solution {
        config: config.clone(),
        seed: config.seed,
        status: outcome.trace.status(),
        solved_at: outcome.trace.solved_at(),
        final_infidelity: outcome.trace.final_infidelity().unwrap_or(1.0),
        layers: outcome.pulses.layer_count(),
        controls: outcome.pulses.control_count(),
        pauli_words: problem.restriction().words(problem.basis()).iter().map(|w| w.to_string()).collect(),
        values: outcome.pulses.as_slice().to_vec(),
    };
    let json_path = out.join("solution.json");
    write_json(&json_path, &solution)?;
    let mut written = vec![trace_path, json_path];
    if solution.status == RunStatus::Solved {
        let pulses_path = out.join("pulses.csv");
        outcome.pulses.write_csv(&problem, create(&pulses_path)?)?;
        written.push(pulses_path);
    }
    Ok((solution, Written(written)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSummary {
    pub method: Method,
    pub hyperparameter: f64,
    pub samples: usize,
    pub solved: usize,
    pub solved_at: Vec<Option<usize>>,
    pub mean_cumulative_infidelity: f64,
}

/// Runs `samples` runs seeded `seed + a` in parallel; writes the success
/// curve, `summary.json` and one trace per sample under `traces/`.
pub fn cmd_benchmark(config: &ExperimentConfig, out: &Path) -> Result<(SuccessCurve, BenchmarkSummary, Written)> {
    let problem = config.problem()?;
    let p = config.hyperparameter()?;
    let outcomes = (0..config.samples)
        .into_par_iter()
        .map(|a| config.run_with(&problem, p, config.seed.wrapping_add(a as u64)))
        .collect::<Result<Vec<_>>>()?;
    let mut written = Vec::new();
    let width = config.samples.saturating_sub(1).to_string().len().max(4);
    for (a, o) in outcomes.iter().enumerate() {
        let path = out.join("traces").join(format!("sample_{a:0width$}.csv"));
        o.trace.write_csv(create(&path)?)?;
        written.push(path);
    }
    let solved_at: Vec<Option<usize>> = outcomes.iter().map(|o| o.trace.solved_at()).collect();
    let curve = SuccessCurve::from_solved(&solved_at, config.max_iters);
    let curve_path = out.join("success_curve.csv");
    curve.write_csv(create(&curve_path)?)?;
    let summary = BenchmarkSummary {
        method: config.method,
        hyperparameter: p,
        samples: config.samples,
        solved: solved_at.iter().filter(|s| s.is_some()).count(),
        mean_cumulative_infidelity: outcomes.iter().map(|o| o.trace.cumulative_infidelity(config.max_iters)).sum::<f64>()
            / config.samples as f64,
        solved_at,
    };
    let summary_path = out.join("summary.json");
    write_json(&summary_path, &summary)?;
    written.insert(0, summary_path);
    written.insert(0, curve_path);
    Ok((curve, summary, Written(written)))
}

/// Bayesian search over the method's hyperparameter; writes
/// `observations.csv` and `search.json`.
pub fn cmd_hypersearch(config: &ExperimentConfig, out: &Path) -> Result<(SearchResult, Written)> {
    let problem = config.problem()?;
    let sc = config.search_config()?;
    let result = search(&sc, |p, seed| {
        let outcomes = (0..sc.samples)
            .into_par_iter()
            .map(|a| config.run_with(&problem, p, seed.wrapping_add(a as u64)))
            .collect::<Result<Vec<_>>>()?;
        Ok(outcomes.iter().map(|o| o.trace.cumulative_infidelity(sc.cap)).sum::<f64>() / sc.samples as f64)
    })?;
    hypersearch_outputs(result, out)
}

/// Writes the outputs of a finished search.
pub fn hypersearch_outputs(result: SearchResult, out: &Path) -> Result<(SearchResult, Written)> {
    let obs_path = out.join("observations.csv");
    result.write_csv(create(&obs_path)?)?;
    let json_path = out.join("search.json");
    write_json(&json_path, &serde_json::json!({ "best_p": result.best_p, "best_c": result.best_c }))?;
    Ok((result, Written(vec![obs_path, json_path])))
}

/// Re-exports the pulse table of a `solution.json` as `pulses.csv`.
pub fn cmd_export_pulses(solution_path: &Path, out: &Path) -> Result<Written> {
    let text = fs::read_to_string(solution_path)?;
    let solution: Solution = serde_json::from_str(&text)?;
    let problem = solution.config.problem()?;
    let path = out.join("pulses.csv");
    solution.pulses()?.write_csv(&problem, create(&path)?)?;
    Ok(Written(vec![path]))
}
