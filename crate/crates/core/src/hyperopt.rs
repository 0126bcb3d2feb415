//! One-dimensional Bayesian hyperparameter search over the mean cumulative
//! infidelity of an optimiser.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geope::{run as geope_run, GeopeConfig, RunOutcome, RunSettings};
use crate::grape::{adam_run, newton_raphson_run, rfo_run, AdamConfig, NewtonConfig, RfoConfig};
use crate::model::{schema_line, ControlProblem};

pub const OBSERVATION_HEADER: &str = "observation,p,C,samples,seed";
pub const UCB_GRID_POINTS: usize = 512;

/// Optimiser whose single hyperparameter is searched.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    /// Hyperparameter: `eta_max`.
    #[serde(rename = "geope")]
    Geope,
    /// Hyperparameter: learning rate.
    #[serde(rename = "grape-adam")]
    GrapeAdam,
    /// Hyperparameter: spectrum shift `delta`.
    #[serde(rename = "grape-nr")]
    GrapeNr,
    /// Hyperparameter: condition-number bound `kappa`.
    #[serde(rename = "grape-rfo")]
    GrapeRfo,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Geope, Method::GrapeAdam, Method::GrapeNr, Method::GrapeRfo];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Geope => "geope",
            Method::GrapeAdam => "grape-adam",
            Method::GrapeNr => "grape-nr",
            Method::GrapeRfo => "grape-rfo",
        }
    }

    /// Runs the optimiser once with hyperparameter `p`.
    pub fn run(self, problem: &ControlProblem, p: f64, run: RunSettings) -> Result<RunOutcome> {
        match self {
            Method::Geope => geope_run(problem, &GeopeConfig::new(p, run)),
            Method::GrapeAdam => adam_run(problem, &AdamConfig::new(p, run)),
            Method::GrapeNr => newton_raphson_run(problem, &NewtonConfig::new(p, run)),
            Method::GrapeRfo => rfo_run(problem, &RfoConfig::new(p, run)),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?} (expected geope, grape-adam, grape-nr or grape-rfo)")))
    }
}

/// `C(p)`: cumulative infidelity averaged over `samples` runs seeded
/// `run.seed + a`, with `run.max_iters` as the cap. Runs execute in parallel.
pub fn mean_cumulative_infidelity(
    method: Method,
    problem: &ControlProblem,
    p: f64,
    run: &RunSettings,
    samples: usize,
) -> Result<f64> {
    if samples == 0 {
        return Err(Error::Config("samples per observation must be at least 1".into()));
    }
    let cap = run.max_iters;
    let totals = (0..samples)
        .into_par_iter()
        .map(|a| {
            let mut settings = *run;
            settings.seed = run.seed.wrapping_add(a as u64);
            method.run(problem, p, settings).map(|out| out.trace.cumulative_infidelity(cap))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(totals.iter().sum::<f64>() / samples as f64)
}

/// Gaussian-process regression with a squared-exponential kernel on
/// normalised inputs and outputs.
#[derive(Debug, Clone)]
pub struct GpSurrogate {
    bounds: (f64, f64),
    xs: Vec<f64>,
    y_mean: f64,
    y_scale: f64,
    length_scale: f64,
    signal_variance: f64,
    noise: f64,
    chol: DMatrix<f64>,
    weights: DVector<f64>,
}

fn sq_exp(a: f64, b: f64, length: f64, variance: f64) -> f64 {
    let d = (a - b) / length;
    variance * (-0.5 * d * d).exp()
}

fn log_grid(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |i| (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / (n - 1) as f64).exp())
}

struct Fit {
    chol: DMatrix<f64>,
    weights: DVector<f64>,
    log_likelihood: f64,
}

fn fit(xs: &[f64], ys: &DVector<f64>, length: f64, variance: f64, noise: f64) -> Option<Fit> {
    let n = xs.len();
    let k = DMatrix::from_fn(n, n, |i, j| sq_exp(xs[i], xs[j], length, variance) + if i == j { noise } else { 0.0 });
    let chol = k.cholesky()?;
    let weights = chol.solve(ys);
    let l = chol.l();
    let log_det: f64 = (0..n).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0;
    let log_likelihood = -0.5 * ys.dot(&weights) - 0.5 * log_det - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
    Some(Fit { chol: l, weights, log_likelihood })
}

impl GpSurrogate {
    /// Fits the kernel by maximising the marginal likelihood over a log-grid
    /// of length scales (in units of the bound width) and signal variances.
    /// `noise` is added to the kernel diagonal in normalised output units.
    pub fn fit(bounds: (f64, f64), observations: &[(f64, f64)], noise: f64) -> Result<Self> {
        if observations.is_empty() {
            return Err(Error::Config("surrogate needs at least one observation".into()));
        }
        if !(bounds.0 < bounds.1) || !(noise > 0.0) {
            return Err(Error::Config("surrogate needs lo < hi and positive noise".into()));
        }
        let width = bounds.1 - bounds.0;
        let xs: Vec<f64> = observations.iter().map(|(p, _)| (p - bounds.0) / width).collect();
        let raw: Vec<f64> = observations.iter().map(|(_, c)| *c).collect();
        let y_mean = raw.iter().sum::<f64>() / raw.len() as f64;
        let spread = (raw.iter().map(|y| (y - y_mean).powi(2)).sum::<f64>() / raw.len() as f64).sqrt();
        let y_scale = if spread > 0.0 { spread } else { 1.0 };
        let ys = DVector::from_iterator(raw.len(), raw.iter().map(|y| (y - y_mean) / y_scale));

        let mut best: Option<(f64, f64, Fit)> = None;
        for length in log_grid(0.02, 2.0, 40) {
            for variance in log_grid(0.1, 10.0, 15) {
                if let Some(f) = fit(&xs, &ys, length, variance, noise) {
                    if best.as_ref().is_none_or(|(_, _, b)| f.log_likelihood > b.log_likelihood) {
                        best = Some((length, variance, f));
                    }
                }
            }
        }
        let (length_scale, signal_variance, f) =
            best.ok_or_else(|| Error::InvalidProblem("kernel matrix is not positive definite".into()))?;
        Ok(GpSurrogate {
            bounds,
            xs,
            y_mean,
            y_scale,
            length_scale,
            signal_variance,
            noise,
            chol: f.chol,
            weights: f.weights,
        })
    }

    pub fn bounds(&self) -> (f64, f64) {
        self.bounds
    }

    pub fn length_scale(&self) -> f64 {
        self.length_scale * (self.bounds.1 - self.bounds.0)
    }

    /// Signal standard deviation in the units of the observations.
    pub fn signal_scale(&self) -> f64 {
        self.signal_variance.sqrt() * self.y_scale
    }

    pub fn noise(&self) -> f64 {
        self.noise
    }

    /// Posterior mean and standard deviation at `p`.
    pub fn predict(&self, p: f64) -> (f64, f64) {
        let x = (p - self.bounds.0) / (self.bounds.1 - self.bounds.0);
        let k = DVector::from_iterator(
            self.xs.len(),
            self.xs.iter().map(|xi| sq_exp(x, *xi, self.length_scale, self.signal_variance)),
        );
        let mean = k.dot(&self.weights);
        let v = self.chol.solve_lower_triangular(&k).expect("Cholesky factor has a positive diagonal");
        let var = (self.signal_variance - v.norm_squared()).max(0.0);
        (self.y_mean + self.y_scale * mean, self.y_scale * var.sqrt())
    }
}

/// Grid point minimising the lower confidence bound `mu - kappa sigma`
/// (the first one on ties).
pub fn ucb_select(surrogate: &GpSurrogate, kappa_bo: f64) -> f64 {
    let (lo, hi) = surrogate.bounds();
    let mut best = (f64::INFINITY, lo);
    for i in 0..UCB_GRID_POINTS {
        let p = lo + (hi - lo) * i as f64 / (UCB_GRID_POINTS - 1) as f64;
        let (mu, sigma) = surrogate.predict(p);
        let score = mu - kappa_bo * sigma;
        if score < best.0 {
            best = (score, p);
        }
    }
    best.1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub lo: f64,
    pub hi: f64,
    pub n0: usize,
    pub kappa_bo: f64,
    pub alpha_bo: f64,
    /// Runs averaged per observation (`N_a`).
    pub samples: usize,
    /// Iteration cap `M` of each run.
    pub cap: usize,
    /// Total number of observations, including the `n0` random ones.
    pub budget: usize,
    pub seed: u64,
}

impl SearchConfig {
    pub fn new(lo: f64, hi: f64, budget: usize, seed: u64) -> Self {
        SearchConfig { lo, hi, n0: 5, kappa_bo: 5.0, alpha_bo: 0.02, samples: 50, cap: 200, budget, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lo < self.hi) || !self.lo.is_finite() || !self.hi.is_finite() {
            return Err(Error::Config(format!("search bounds ({}, {}) must satisfy lo < hi", self.lo, self.hi)));
        }
        if self.n0 == 0 || self.budget < self.n0 {
            return Err(Error::Config(format!("budget {} must be at least n0 = {} > 0", self.budget, self.n0)));
        }
        if self.samples == 0 || self.cap == 0 {
            return Err(Error::Config("samples and cap must be positive".into()));
        }
        if !(self.kappa_bo >= 0.0) || !(self.alpha_bo > 0.0) {
            return Err(Error::Config("kappa_bo must be >= 0 and alpha_bo > 0".into()));
        }
        Ok(())
    }

    /// Base seed handed to the objective for observation `index`; observations
    /// use disjoint blocks of `samples` consecutive run seeds.
    pub fn observation_seed(&self, index: usize) -> u64 {
        self.seed.wrapping_add((index * self.samples) as u64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub index: usize,
    pub p: f64,
    pub c: f64,
    pub samples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best_p: f64,
    pub best_c: f64,
    pub observations: Vec<Observation>,
}

impl SearchResult {
    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "{}", schema_line())?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(OBSERVATION_HEADER.split(','))?;
        for o in &self.observations {
            w.write_record([
                o.index.to_string(),
                format!("{:.17e}", o.p),
                format!("{:.17e}", o.c),
                o.samples.to_string(),
                o.seed.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Minimises `objective(p, seed)` over `[lo, hi]`: `n0` uniform draws, then
/// UCB-selected points until the budget is spent. Returns the best observation.
pub fn search(config: &SearchConfig, mut objective: impl FnMut(f64, u64) -> Result<f64>) -> Result<SearchResult> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut observations: Vec<Observation> = Vec::with_capacity(config.budget);
    for index in 0..config.budget {
        let p = if index < config.n0 {
            rng.random_range(config.lo..=config.hi)
        } else {
            let data: Vec<(f64, f64)> = observations.iter().map(|o| (o.p, o.c)).collect();
            let gp = GpSurrogate::fit((config.lo, config.hi), &data, config.alpha_bo)?;
            ucb_select(&gp, config.kappa_bo)
        };
        let seed = config.observation_seed(index);
        let c = objective(p, seed)?;
        observations.push(Observation { index, p, c, samples: config.samples, seed });
    }
    let best = observations
        .iter()
        .min_by(|a, b| a.c.total_cmp(&b.c))
        .copied()
        .expect("budget is at least n0 >= 1");
    Ok(SearchResult { best_p: best.p, best_c: best.c, observations })
}

/// [`search`] with `C(p)` of `method` on `problem` as the objective. `run`
/// supplies the layer count and initialisation; its cap and seed are
/// replaced by the search settings.
pub fn search_method(method: Method, problem: &ControlProblem, run: &RunSettings, config: &SearchConfig) -> Result<SearchResult> {
    search(config, |p, seed| {
        let mut settings = *run;
        settings.max_iters = config.cap;
        settings.seed = seed;
        mean_cumulative_infidelity(method, problem, p, &settings, config.samples)
    })
}
