//! GRAPE baselines: Adam, spectrum-shifted Newton-Raphson and rational
//! function optimisation (RFO) on the infidelity.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::derivatives::{infidelity_gradient, infidelity_hessian};
use crate::error::{Error, Result};
use crate::geope::{RunOutcome, RunSettings};
use crate::linalg::{cholesky_solve, eigh_real, RMat};
use crate::model::{infidelity, ControlProblem, PulseSequence};
use crate::trace::{OptRunTrace, StepKind, Stopwatch};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_div: f64,
    pub run: RunSettings,
}

impl AdamConfig {
    pub fn new(learning_rate: f64, run: RunSettings) -> Self {
        AdamConfig { learning_rate, beta1: 0.9, beta2: 0.999, eps_div: 1e-8, run }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate {} must be positive", self.learning_rate)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::Config(format!("{name} {b} outside (0, 1)")));
            }
        }
        if !(self.eps_div > 0.0) {
            return Err(Error::Config("eps_div must be positive".into()));
        }
        self.run.validate()
    }
}

/// Armijo backtracking: try `lambda = initial, initial * shrink, ...` until
/// `I(Phi - lambda u) <= I(Phi) - c lambda g.u`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Backtracking {
    pub initial: f64,
    pub shrink: f64,
    pub armijo_c: f64,
    pub max_halvings: usize,
}

impl Default for Backtracking {
    fn default() -> Self {
        Backtracking { initial: 1.0, shrink: 0.5, armijo_c: 1e-4, max_halvings: 40 }
    }
}

impl Backtracking {
    fn validate(&self) -> Result<()> {
        if !(self.initial > 0.0 && self.shrink > 0.0 && self.shrink < 1.0 && self.armijo_c > 0.0 && self.armijo_c < 1.0) {
            return Err(Error::Config(format!("invalid backtracking settings {self:?}")));
        }
        Ok(())
    }

    /// Returns the accepted `(lambda, value)`, or `None` if every trial fails.
    /// `slope` is `g.u`, which must be positive for a descent direction.
    pub fn search(&self, f0: f64, slope: f64, mut eval: impl FnMut(f64) -> f64) -> Option<(f64, f64)> {
        if !(slope > 0.0) {
            return None;
        }
        let mut lambda = self.initial;
        for _ in 0..=self.max_halvings {
            let f = eval(lambda);
            if f <= f0 - self.armijo_c * lambda * slope {
                return Some((lambda, f));
            }
            lambda *= self.shrink;
        }
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewtonConfig {
    pub delta: f64,
    pub backtracking: Backtracking,
    pub run: RunSettings,
}

impl NewtonConfig {
    pub fn new(delta: f64, run: RunSettings) -> Self {
        NewtonConfig { delta, backtracking: Backtracking::default(), run }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(Error::Config(format!("delta {} must be non-negative", self.delta)));
        }
        self.backtracking.validate()?;
        self.run.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RfoConfig {
    pub kappa: f64,
    pub alpha0: f64,
    pub phi: f64,
    pub inner_max: usize,
    pub backtracking: Backtracking,
    pub run: RunSettings,
}

impl RfoConfig {
    pub fn new(kappa: f64, run: RunSettings) -> Self {
        RfoConfig { kappa, alpha0: 1.0, phi: 0.9, inner_max: 300, backtracking: Backtracking::default(), run }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 1.0) {
            return Err(Error::Config(format!("kappa {} must exceed 1", self.kappa)));
        }
        if !(self.alpha0 > 0.0 && self.phi > 0.0 && self.phi < 1.0 && self.inner_max >= 1) {
            return Err(Error::Config("RFO needs alpha0 > 0, phi in (0, 1) and inner_max >= 1".into()));
        }
        self.backtracking.validate()?;
        self.run.validate()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Adam descent on the infidelity.
pub fn adam_run(problem: &ControlProblem, config: &AdamConfig) -> Result<RunOutcome> {
    config.validate()?;
    let mut rng = config.run.rng();
    let start = config.run.initial_pulses(problem, &mut rng);
    adam_run_from(problem, config, start)
}

pub fn adam_run_from(problem: &ControlProblem, config: &AdamConfig, start: PulseSequence) -> Result<RunOutcome> {
    config.validate()?;
    let clock = Stopwatch::new(config.run.record_time);
    let mut trace = OptRunTrace::new(config.run.epsilon_for(problem));
    let mut phi = start;
    let mut eval = infidelity_gradient(problem, &phi)?;
    if trace.push(eval.infidelity, StepKind::Initial, 0.0, &clock) {
        return Ok(RunOutcome { pulses: phi, trace });
    }
    let p = phi.len();
    let (mut m, mut v) = (vec![0.0; p], vec![0.0; p]);
    let (b1, b2) = (config.beta1, config.beta2);
    for t in 1..=config.run.max_iters {
        let c1 = 1.0 - b1.powi(t as i32);
        let c2 = 1.0 - b2.powi(t as i32);
        let mut step = vec![0.0; p];
        for i in 0..p {
            let g = eval.gradient[i];
            m[i] = b1 * m[i] + (1.0 - b1) * g;
            v[i] = b2 * v[i] + (1.0 - b2) * g * g;
            step[i] = config.learning_rate * (m[i] / c1) / ((v[i] / c2).sqrt() + config.eps_div);
        }
        phi = phi.stepped(&step, -1.0);
        eval = infidelity_gradient(problem, &phi)?;
        if trace.push(eval.infidelity, StepKind::Adam, dot(&step, &step).sqrt(), &clock) {
            break;
        }
    }
    Ok(RunOutcome { pulses: phi, trace })
}

/// Shifts the spectrum of `h` by `sigma = max(eps, delta - min eig)`.
/// Returns the shifted matrix and `sigma`.
pub fn regularise_spectrum(h: &RMat, delta: f64) -> (RMat, f64) {
    let (evals, _) = eigh_real(h);
    let sigma = f64::EPSILON.max(delta - evals.min());
    let n = h.nrows();
    (h + RMat::identity(n, n) * sigma, sigma)
}

fn second_order_step(
    problem: &ControlProblem,
    phi: &PulseSequence,
    f0: f64,
    gradient: &[f64],
    regularised: &RMat,
    bt: &Backtracking,
) -> Result<Option<(PulseSequence, f64, f64)>> {
    let g = DVector::from_column_slice(gradient);
    let u = cholesky_solve(regularised, &g)?;
    let u: Vec<f64> = u.iter().copied().collect();
    let slope = dot(gradient, &u);
    let norm = dot(&u, &u).sqrt();
    Ok(bt
        .search(f0, slope, |lambda| infidelity(problem, &phi.stepped(&u, -lambda)).unwrap_or(f64::INFINITY))
        .map(|(lambda, f)| (phi.stepped(&u, -lambda), f, lambda * norm)))
}

fn second_order_run(
    problem: &ControlProblem,
    run: &RunSettings,
    kind: StepKind,
    bt: &Backtracking,
    regularise: impl Fn(&RMat, &[f64]) -> RMat,
) -> Result<RunOutcome> {
    let mut rng = run.rng();
    let start = run.initial_pulses(problem, &mut rng);
    let clock = Stopwatch::new(run.record_time);
    let mut trace = OptRunTrace::new(run.epsilon_for(problem));
    let mut phi = start;
    let mut f = infidelity(problem, &phi)?;
    if trace.push(f, StepKind::Initial, 0.0, &clock) {
        return Ok(RunOutcome { pulses: phi, trace });
    }
    for _ in 0..run.max_iters {
        let eval = infidelity_hessian(problem, &phi)?;
        let reg = regularise(eval.hessian.values(), &eval.gradient);
        let size = match second_order_step(problem, &phi, eval.infidelity, &eval.gradient, &reg, bt)? {
            Some((next, value, size)) => {
                phi = next;
                f = value;
                size
            }
            None => 0.0,
        };
        if trace.push(f, kind, size, &clock) {
            break;
        }
    }
    Ok(RunOutcome { pulses: phi, trace })
}

/// Newton-Raphson with a spectrum shift and Armijo backtracking.
///
/// # Errors
/// [`Error::NotPositiveDefinite`] if the shifted Hessian still fails Cholesky
/// (the shift `delta` is too small for the rounding in play).
pub fn newton_raphson_run(problem: &ControlProblem, config: &NewtonConfig) -> Result<RunOutcome> {
    config.validate()?;
    second_order_run(problem, &config.run, StepKind::Newton, &config.backtracking, |h, _| {
        regularise_spectrum(h, config.delta).0
    })
}

/// Smallest eigenvalue of the arrowhead matrix `[[diag(d), b], [b^T, 0]]`.
pub fn arrowhead_min_eigenvalue(d: &[f64], b: &[f64]) -> f64 {
    assert_eq!(d.len(), b.len());
    let mut decoupled = 0.0f64; // the corner entry when b = 0
    let mut pole = f64::INFINITY;
    let mut b2 = 0.0;
    for (&di, &bi) in d.iter().zip(b) {
        if bi == 0.0 {
            decoupled = decoupled.min(di);
        } else {
            pole = pole.min(di);
            b2 += bi * bi;
        }
    }
    if b2 == 0.0 {
        return decoupled.min(d.iter().copied().fold(f64::INFINITY, f64::min));
    }
    // f(mu) = mu + sum b_i^2 / (d_i - mu) increases on (-inf, pole) from -inf to +inf.
    let f = |mu: f64| mu + d.iter().zip(b).filter(|(_, &bi)| bi != 0.0).map(|(&di, &bi)| bi * bi / (di - mu)).sum::<f64>();
    let mut lo = pole.min(0.0) - b2.sqrt() - 1.0;
    let mut hi = pole;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (0.5 * (lo + hi)).min(decoupled)
}

/// Outcome of the RFO conditioning loop.
#[derive(Debug, Clone)]
pub struct RfoConditioning {
    /// `H + s I` with `s = max(eps, -lambda_min(H_aug(alpha))) / alpha^2`.
    pub regularised: RMat,
    pub alpha: f64,
    pub condition: f64,
    /// Number of candidate `alpha` values tried.
    pub steps: usize,
}

/// Shrinks `alpha` until the regularised Hessian has condition number below
/// `kappa`, or `inner_max` candidates have been tried (the last one is kept).
pub fn rfo_condition(h: &RMat, g: &[f64], config: &RfoConfig) -> RfoConditioning {
    let n = h.nrows();
    let (lambda, q) = eigh_real(h);
    let z = q.transpose() * DVector::from_column_slice(g);
    let (lmin, lmax) = (lambda.min(), lambda.max());
    let mut alpha = config.alpha0;
    let mut steps = 0;
    let mut last = (alpha, f64::EPSILON, f64::INFINITY);
    for _ in 0..config.inner_max {
        steps += 1;
        let d: Vec<f64> = lambda.iter().map(|l| alpha * alpha * l).collect();
        let b: Vec<f64> = z.iter().map(|zi| alpha * zi).collect();
        let sigma = f64::EPSILON.max(-arrowhead_min_eigenvalue(&d, &b));
        let shift = sigma / (alpha * alpha);
        let low = lmin + shift;
        let condition = if low > 0.0 { (lmax + shift) / low } else { f64::INFINITY };
        last = (alpha, shift, condition);
        if condition < config.kappa {
            break;
        }
        alpha *= config.phi;
    }
    let (alpha, shift, condition) = last;
    RfoConditioning { regularised: h + RMat::identity(n, n) * shift, alpha, condition, steps }
}

/// Rational function optimisation with an adaptive damping loop.
pub fn rfo_run(problem: &ControlProblem, config: &RfoConfig) -> Result<RunOutcome> {
    config.validate()?;
    second_order_run(problem, &config.run, StepKind::Rfo, &config.backtracking, |h, g| {
        rfo_condition(h, g, config).regularised
    })
}

/// Draws initial pulses exactly as the runs above do (exposed for callers
/// that need the starting point of a seeded run).
pub fn seeded_start(problem: &ControlProblem, run: &RunSettings) -> PulseSequence {
    let mut rng = run.rng();
    run.initial_pulses(problem, &mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{evolve, layer_unitary, rydberg_problem, GateName, GateTarget};
    use crate::pauli::{LieVector, PauliBasis, RestrictionSet};
    use crate::pauli::CMat;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn toffoli() -> ControlProblem {
        rydberg_problem(3, 1.0, &GateTarget::new(GateName::Toffoli, 3).unwrap(), 1e-9).unwrap()
    }

    fn random_spd_plus_rank_one(n: usize, rng: &mut impl Rng) -> (RMat, Vec<f64>) {
        let a = RMat::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let g: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let gv = DVector::from_column_slice(&g);
        (&a * a.transpose() - &gv * gv.transpose() * 0.5, g)
    }

    #[test]
    fn adam_matches_scalar_reference() {
        // One parameter: infidelity 1 - |cos(x - a)|, a quadratic near its minimum.
        let basis = Arc::new(PauliBasis::new(1));
        let r = RestrictionSet::parse(&basis, &["Y"]).unwrap();
        let base = ControlProblem::new(basis, r, LieVector::zeros(3), CMat::identity(2, 2), 1e-12).unwrap();
        let a = 0.3;
        let problem = base.with_target(layer_unitary(&base, &[a]).unwrap()).unwrap();
        let mut run = RunSettings::new(1, 500, 0);
        run.epsilon = Some(1e-12);
        let cfg = AdamConfig::new(0.05, run);
        let x0 = 1.0;
        let out = adam_run_from(&problem, &cfg, PulseSequence::from_values(1, 1, vec![x0]).unwrap()).unwrap();

        // Scalar reference on the same objective.
        let (mut x, mut m, mut v) = (x0, 0.0, 0.0);
        let mut reference = vec![1.0 - (x - a).cos().abs()];
        for t in 1..=500 {
            let g = (x - a).sin() * (x - a).cos().signum();
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            x -= 0.05 * mh / (vh.sqrt() + 1e-8);
            reference.push(1.0 - (x - a).cos().abs());
        }
        for (rec, want) in out.trace.records().iter().zip(&reference) {
            assert!((rec.infidelity - want).abs() < 1e-9, "{} vs {want}", rec.infidelity);
        }
        let best = out.trace.records().iter().map(|r| r.infidelity).fold(1.0, f64::min);
        assert!(best < 1e-6);
    }

    #[test]
    fn runs_starting_at_the_target_stop_immediately() {
        let base = toffoli();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let phi = PulseSequence::random_uniform(3, 6, 0.5, &mut rng);
        let problem = base.with_target(evolve(&base, &phi).unwrap()).unwrap();
        let out = adam_run_from(&problem, &AdamConfig::new(0.1, RunSettings::new(3, 5, 0)), phi.clone()).unwrap();
        assert_eq!(out.trace.iterations(), 0);
        assert_eq!(out.trace.solved_at(), Some(0));
        assert_eq!(out.pulses, phi);
    }

    #[test]
    fn regularisation_shift_arithmetic() {
        let h = RMat::from_diagonal(&DVector::from_vec(vec![-2.0, 1.0, 3.0]));
        let (shifted, sigma) = regularise_spectrum(&h, 0.5);
        assert!((sigma - 2.5).abs() < 1e-14);
        let (ev, _) = eigh_real(&shifted);
        assert!((ev.min() - 0.5).abs() < 1e-14);
        // Already comfortably positive: the shift floors at machine epsilon.
        let pos = RMat::from_diagonal(&DVector::from_vec(vec![2.0, 5.0]));
        let (_, sigma) = regularise_spectrum(&pos, 0.5);
        assert_eq!(sigma, f64::EPSILON);
    }

    #[test]
    fn newton_step_is_exact_on_quadratics() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (h0, _) = random_spd_plus_rank_one(6, &mut rng);
        let h = &h0 * h0.transpose() + RMat::identity(6, 6);
        let x_star: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let xs = DVector::from_column_slice(&x_star);
        let f = |x: &DVector<f64>| 0.5 * ((x - &xs).transpose() * &h * (x - &xs))[(0, 0)];
        let x0 = DVector::zeros(6);
        let g = &h * (&x0 - &xs);
        let (reg, _) = regularise_spectrum(&h, 0.0);
        let u = cholesky_solve(&reg, &g).unwrap();
        let bt = Backtracking::default();
        let slope = g.dot(&u);
        let (lambda, value) = bt.search(f(&x0), slope, |l| f(&(&x0 - &u * l))).unwrap();
        assert_eq!(lambda, 1.0);
        assert!(value < 1e-20);
        assert!((&x0 - &u - &xs).norm() < 1e-10);
    }

    #[test]
    fn backtracking_halves_until_armijo_holds() {
        let bt = Backtracking::default();
        // f(lambda) = (lambda - 0.1)^2 along the direction, slope 0.2 at 0.
        let (lambda, _) = bt.search(0.01, 0.2, |l| (l - 0.1) * (l - 0.1)).unwrap();
        assert_eq!(lambda, 0.125);
        assert!(bt.search(1.0, 1.0, |_| 2.0).is_none());
        assert!(bt.search(1.0, -1.0, |_| 0.0).is_none());
    }

    #[test]
    fn arrowhead_matches_dense_eigh() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [1usize, 2, 5, 12] {
            for _ in 0..20 {
                let d: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
                let mut b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
                if n > 2 {
                    b[1] = 0.0;
                }
                let mut m = RMat::zeros(n + 1, n + 1);
                for i in 0..n {
                    m[(i, i)] = d[i];
                    m[(i, n)] = b[i];
                    m[(n, i)] = b[i];
                }
                let (ev, _) = eigh_real(&m);
                assert!((arrowhead_min_eigenvalue(&d, &b) - ev.min()).abs() < 1e-10);
            }
        }
        assert_eq!(arrowhead_min_eigenvalue(&[1.0, 2.0], &[0.0, 0.0]), 0.0);
        assert_eq!(arrowhead_min_eigenvalue(&[-1.0, 2.0], &[0.0, 0.0]), -1.0);
    }

    #[test]
    fn rfo_condition_decreases_while_alpha_shrinks() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (h, g) = random_spd_plus_rank_one(8, &mut rng);
        let mut cfg = RfoConfig::new(1.0 + 1e-9, RunSettings::new(1, 1, 0));
        let mut previous = f64::INFINITY;
        for inner in 1..=60 {
            cfg.inner_max = inner;
            let c = rfo_condition(&h, &g, &cfg);
            // Direct oracle: condition number from a dense eigendecomposition.
            let (ev, _) = eigh_real(&c.regularised);
            let direct = ev.max() / ev.min();
            assert!((c.condition - direct).abs() <= 1e-8 * direct);
            assert!(direct <= previous * (1.0 + 1e-12));
            previous = direct;
        }
        cfg.kappa = 50.0;
        cfg.inner_max = 300;
        let c = rfo_condition(&h, &g, &cfg);
        assert!(c.condition < 50.0 && c.steps < 300);
    }

    #[test]
    fn rfo_zero_gradient_gives_zero_update() {
        let h = RMat::from_diagonal(&DVector::from_vec(vec![-1.0, 2.0, 4.0]));
        let g = [0.0; 3];
        let c = rfo_condition(&h, &g, &RfoConfig::new(10.0, RunSettings::new(1, 1, 0)));
        let u = cholesky_solve(&c.regularised, &DVector::from_column_slice(&g)).unwrap();
        assert!(u.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn second_order_runs_descend_and_reproduce() {
        let problem = toffoli();
        let nr = NewtonConfig::new(0.645, RunSettings::new(4, 8, 3));
        let a = newton_raphson_run(&problem, &nr).unwrap();
        let b = newton_raphson_run(&problem, &nr).unwrap();
        assert_eq!(a.trace, b.trace);
        let rfo = RfoConfig::new(60.7, RunSettings::new(4, 8, 3));
        let c = rfo_run(&problem, &rfo).unwrap();
        for out in [&a, &c] {
            for w in out.trace.records().windows(2) {
                assert!(w[1].infidelity <= w[0].infidelity);
            }
        }
        let adam = AdamConfig::new(0.046, RunSettings::new(4, 8, 3));
        assert_eq!(adam_run(&problem, &adam).unwrap().trace, adam_run(&problem, &adam).unwrap().trace);
    }

    #[test]
    fn config_validation() {
        assert!(AdamConfig::new(0.0, RunSettings::new(1, 1, 0)).validate().is_err());
        assert!(NewtonConfig::new(-1.0, RunSettings::new(1, 1, 0)).validate().is_err());
        assert!(RfoConfig::new(1.0, RunSettings::new(1, 1, 0)).validate().is_err());
        assert!(RfoConfig::new(2.0, RunSettings::new(1, 1, 0)).validate().is_ok());
    }
}
