//! Geodesic pulse engineering.
//!
//! Each iteration aligns a parameter update with the geodesic from the
//! current evolution to the target, searches along it, and falls back to a
//! random step orthogonal to the geodesic when the search cannot improve the
//! fidelity.

use nalgebra::DVector;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::derivatives::full_jacobian;
use crate::error::{Error, Result};
use crate::linalg::{golden_section_max_with, logm_unitary_principal, lstsq_min_norm, unitarity_deviation, LineSearch, RMat};
use crate::model::{fidelity, ControlProblem, PulseSequence};
use crate::pauli::{vectorize_tangent, CMat, PauliBasis, RestrictionSet};
use crate::trace::{OptRunTrace, StepKind, Stopwatch};

const I: Complex64 = Complex64::new(0.0, 1.0);

/// A line search that does not beat the current fidelity by this much counts as failed.
pub const IMPROVEMENT_MARGIN: f64 = 1e-14;

/// Redraws allowed before the escape direction is returned unprojected.
const MAX_REDRAWS: usize = 64;

/// Settings shared by every optimiser run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    /// Number of piecewise-constant layers `L`.
    pub layers: usize,
    /// Maximum number of iterations `M`.
    pub max_iters: usize,
    /// Solution threshold on the infidelity; `None` uses the problem's value.
    pub epsilon: Option<f64>,
    /// Initial controls are drawn uniformly from `[-init_scale, init_scale]`.
    pub init_scale: f64,
    pub seed: u64,
    /// Record wall-clock time in traces (makes outputs run-dependent).
    pub record_time: bool,
}

impl RunSettings {
    pub fn new(layers: usize, max_iters: usize, seed: u64) -> Self {
        RunSettings { layers, max_iters, epsilon: None, init_scale: 1.0, seed, record_time: false }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::Config("layers must be at least 1".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        if let Some(eps) = self.epsilon {
            if !(eps > 0.0 && eps < 1.0) {
                return Err(Error::Config(format!("epsilon {eps} outside (0, 1)")));
            }
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(Error::Config(format!("init_scale {} must be finite and non-negative", self.init_scale)));
        }
        Ok(())
    }

    pub fn epsilon_for(&self, problem: &ControlProblem) -> f64 {
        self.epsilon.unwrap_or(problem.epsilon())
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }

    /// Draws the initial controls from `rng`.
    pub fn initial_pulses(&self, problem: &ControlProblem, rng: &mut impl Rng) -> PulseSequence {
        PulseSequence::random_uniform(self.layers, problem.control_count(), self.init_scale, rng)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeopeConfig {
    pub eta_max: f64,
    /// Gram-Schmidt step length as a multiple of `eta_max`.
    pub gs_factor: f64,
    /// Line-search tolerance relative to `eta_max`.
    pub line_search_rel_tol: f64,
    pub scan_points: usize,
    pub run: RunSettings,
}

impl GeopeConfig {
    pub fn new(eta_max: f64, run: RunSettings) -> Self {
        GeopeConfig { eta_max, gs_factor: 1.2, line_search_rel_tol: 1e-6, scan_points: 12, run }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta_max > 0.0 && self.eta_max.is_finite()) {
            return Err(Error::Config(format!("eta_max {} must be positive", self.eta_max)));
        }
        if !(self.gs_factor > 0.0 && self.gs_factor.is_finite()) {
            return Err(Error::Config(format!("gs_factor {} must be positive", self.gs_factor)));
        }
        if !(self.line_search_rel_tol > 0.0) {
            return Err(Error::Config("line_search_rel_tol must be positive".into()));
        }
        self.run.validate()
    }

    fn line_search(&self) -> LineSearch {
        LineSearch { scan_points: self.scan_points, ..LineSearch::with_tol(self.line_search_rel_tol * self.eta_max) }
    }
}

/// Geodesic from `U_G` to the target.
#[derive(Debug, Clone)]
pub struct Geodesic {
    /// `-i log(U_G^dagger V)` with its trace removed, so `exp(i Gamma)` equals
    /// `U_G^dagger V` up to a global phase.
    pub generator: CMat,
    /// Pauli coefficients of the tangent `i U_G Gamma` at `U_G`.
    pub tangent: Vec<Complex64>,
}

impl Geodesic {
    /// Real Pauli coefficients `Tr(G_j Gamma) / N` of the generator.
    pub fn lie_vector(&self, basis: &PauliBasis) -> Vec<f64> {
        let n = basis.dim() as f64;
        (0..basis.len()).map(|j| basis.trace_with(j, &self.generator).re / n).collect()
    }

    /// Riemannian length `sqrt(Tr(Gamma^2) / N)`; equals the norm of [`Self::lie_vector`].
    pub fn length(&self) -> f64 {
        let n = self.generator.nrows() as f64;
        (self.generator.norm_squared() / n).sqrt()
    }
}

/// Principal-branch geodesic generator from `u_g` to `v` and its tangent coefficients.
pub fn geodesic_generator(u_g: &CMat, v: &CMat, basis: &PauliBasis) -> Result<Geodesic> {
    for m in [u_g, v] {
        let dev = unitarity_deviation(m);
        if dev > 1e-8 {
            return Err(Error::NotUnitary(dev));
        }
    }
    // logm_unitary_principal already returns the Hermitian G with W = exp(iG).
    let mut generator = logm_unitary_principal(&(u_g.adjoint() * v))?;
    let n = generator.nrows();
    let shift = generator.trace() / n as f64;
    for d in 0..n {
        generator[(d, d)] -= shift;
    }
    let tangent = vectorize_tangent(&(u_g * &generator * I), basis);
    Ok(Geodesic { generator, tangent })
}

/// Least-squares combination of Jacobian vectors that best matches the geodesic tangent.
#[derive(Debug, Clone)]
pub struct UpdateDirection {
    /// Unit-norm direction, layer-major; all zeros when no combination helps.
    pub direction: Vec<f64>,
    /// Norm of the least-squares solution before normalisation.
    pub raw_norm: f64,
    /// Squared residual `||sum dphi j - gamma||^2` at the least-squares solution.
    pub residual: f64,
}

/// Solves `min ||sum_{l,k} dphi_{l,k} j_{l,k} - gamma||^2` over real `dphi`
/// by stacking real and imaginary parts.
pub fn solve_update_direction(jacobian_vectors: &[Vec<Complex64>], gamma: &[Complex64]) -> Result<UpdateDirection> {
    let rows = gamma.len();
    let cols = jacobian_vectors.len();
    if jacobian_vectors.iter().all(|j| j.iter().all(|c| c.norm_sqr() == 0.0)) {
        return Err(Error::ZeroJacobian);
    }
    let mut a = RMat::zeros(2 * rows, cols);
    for (c, j) in jacobian_vectors.iter().enumerate() {
        if j.len() != rows {
            return Err(Error::DimensionMismatch { expected: rows, got: j.len() });
        }
        for (r, z) in j.iter().enumerate() {
            a[(r, c)] = z.re;
            a[(rows + r, c)] = z.im;
        }
    }
    let b = DVector::from_iterator(2 * rows, gamma.iter().map(|z| z.re).chain(gamma.iter().map(|z| z.im)));
    let x = lstsq_min_norm(&a, &b);
    let residual = (&a * &x - &b).norm_squared();
    // A solution this small is rounding noise from a right-hand side orthogonal to every column.
    let raw_norm = if (&a * &x).norm() <= 1e-12 * b.norm() { 0.0 } else { x.norm() };
    let direction = if raw_norm > 0.0 { (x / raw_norm).iter().copied().collect() } else { vec![0.0; cols] };
    Ok(UpdateDirection { direction, raw_norm, residual })
}

/// Random restricted direction with the geodesic component removed layer by layer.
///
/// `gamma` holds real coefficients over the full basis; only its restricted
/// part enters the projection. The result is unit-norm and layer-major.
pub fn gram_schmidt_escape(gamma: &[f64], restriction: &RestrictionSet, layers: usize, rng: &mut impl Rng) -> Vec<f64> {
    assert_eq!(gamma.len(), restriction.basis_len(), "gamma must span the full basis");
    let g: Vec<f64> = restriction.indices().iter().map(|&j| gamma[j]).collect();
    let g2: f64 = g.iter().map(|x| x * x).sum();
    let k = g.len();
    let draw = |rng: &mut dyn rand::RngCore| -> Vec<f64> { (0..layers * k).map(|_| rng.random_range(-1.0..=1.0)).collect() };

    for _ in 0..MAX_REDRAWS {
        let mut d = draw(rng);
        if g2 > 0.0 {
            for layer in d.chunks_mut(k) {
                let dot: f64 = layer.iter().zip(&g).map(|(r, gi)| r * gi).sum();
                for (r, gi) in layer.iter_mut().zip(&g) {
                    *r -= dot / g2 * gi;
                }
            }
        }
        let norm = d.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 * ((layers * k) as f64).sqrt() {
            return d.into_iter().map(|x| x / norm).collect();
        }
    }
    // The restriction holds nothing orthogonal to gamma; escape at random.
    let d = draw(rng);
    let norm = d.iter().map(|x| x * x).sum::<f64>().sqrt();
    d.into_iter().map(|x| x / norm).collect()
}

/// Final controls and iteration history of one optimisation.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub pulses: PulseSequence,
    pub trace: OptRunTrace,
}

/// Runs GEOPE from a seeded random start.
pub fn run(problem: &ControlProblem, config: &GeopeConfig) -> Result<RunOutcome> {
    config.validate()?;
    let mut rng = config.run.rng();
    let start = config.run.initial_pulses(problem, &mut rng);
    run_from(problem, config, start, &mut rng)
}

/// Runs GEOPE from given controls, drawing escape directions from `rng`.
pub fn run_from(
    problem: &ControlProblem,
    config: &GeopeConfig,
    start: PulseSequence,
    rng: &mut impl Rng,
) -> Result<RunOutcome> {
    config.validate()?;
    if start.control_count() != problem.control_count() {
        return Err(Error::DimensionMismatch { expected: problem.control_count(), got: start.control_count() });
    }
    let clock = Stopwatch::new(config.run.record_time);
    let mut trace = OptRunTrace::new(config.run.epsilon_for(problem));
    let mut phi = start;
    let mut f = fidelity(problem, &phi)?;
    if trace.push(1.0 - f, StepKind::Initial, 0.0, &clock) {
        return Ok(RunOutcome { pulses: phi, trace });
    }
    let search = config.line_search();
    let layers = phi.layer_count();

    for _ in 0..config.run.max_iters {
        let jac = full_jacobian(problem, &phi)?;
        let geo = geodesic_generator(jac.unitary(), problem.target(), problem.basis())?;
        let dir = solve_update_direction(&jac.vectorized(problem.basis()), &geo.tangent)?;

        let (eta, f_best) = if dir.raw_norm > 0.0 {
            golden_section_max_with(
                |eta| fidelity(problem, &phi.stepped(&dir.direction, eta)).unwrap_or(f64::NEG_INFINITY),
                0.0,
                config.eta_max,
                search,
            )
        } else {
            (0.0, f)
        };

        let (kind, size) = if f_best > f + IMPROVEMENT_MARGIN {
            phi = phi.stepped(&dir.direction, eta);
            f = f_best;
            (StepKind::Geodesic, eta)
        } else {
            let escape = gram_schmidt_escape(&geo.lie_vector(problem.basis()), problem.restriction(), layers, rng);
            let size = config.gs_factor * config.eta_max;
            phi = phi.stepped(&escape, size);
            f = fidelity(problem, &phi)?;
            (StepKind::GramSchmidt, size)
        };
        if trace.push(1.0 - f, kind, size, &clock) {
            break;
        }
    }
    Ok(RunOutcome { pulses: phi, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::derivatives::full_jacobian;
    use crate::linalg::expm_hermitian_generator;
    use crate::model::{evolve, rydberg_problem, GateName, GateTarget};
    use crate::pauli::LieVector;
    use std::sync::Arc;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn unrestricted(n: usize, target: CMat) -> ControlProblem {
        let basis = Arc::new(PauliBasis::new(n));
        let len = basis.len();
        ControlProblem::new(basis, RestrictionSet::full(len), LieVector::zeros(len), target, 1e-9).unwrap()
    }

    fn random_unitary(n: usize, rng: &mut impl Rng) -> CMat {
        let basis = PauliBasis::new(n);
        let theta = LieVector::from_dense((0..basis.len()).map(|_| rng.random_range(-0.6..0.6)).collect());
        expm_hermitian_generator(&crate::pauli::assemble_hamiltonian(&theta, &basis).unwrap()).unwrap()
    }

    #[test]
    fn geodesic_endpoint_and_single_axis() {
        let basis = PauliBasis::new(1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = random_unitary(1, &mut rng);
        let phase = u.clone() * c(0.3f64.cos(), 0.3f64.sin());
        let g = geodesic_generator(&u, &phase, &basis).unwrap();
        assert!(g.tangent.iter().all(|z| z.norm() < 1e-12));
        assert!(g.length() < 1e-12);

        let x = basis.matrix(0);
        for a in [0.4, -2.5, 3.0] {
            let v = expm_hermitian_generator(&(&x * c(a, 0.0))).unwrap();
            let g = geodesic_generator(&CMat::identity(2, 2), &v, &basis).unwrap();
            assert!((&g.generator - &x * c(a, 0.0)).norm() < 1e-10, "a={a}");
            assert!((g.lie_vector(&basis)[0] - a).abs() < 1e-10);
            assert!((g.length() - a.abs()).abs() < 1e-10);
        }
    }

    #[test]
    fn geodesic_round_trip_on_random_pairs() {
        let basis = PauliBasis::new(2);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let u = random_unitary(2, &mut rng);
            let v = random_unitary(2, &mut rng);
            let g = geodesic_generator(&u, &v, &basis).unwrap();
            let w = expm_hermitian_generator(&g.generator).unwrap();
            let target = u.adjoint() * &v;
            // Equal up to the global phase removed with the trace.
            let ph = (w.adjoint() * &target).trace() / 4.0;
            assert!((ph.norm() - 1.0).abs() < 1e-9);
            assert!((w * ph - target).norm() < 1e-9);
            let lie = g.lie_vector(&basis);
            assert!((lie.iter().map(|x| x * x).sum::<f64>().sqrt() - g.length()).abs() < 1e-12);
        }
        let bad = CMat::identity(4, 4) * c(2.0, 0.0);
        assert!(matches!(geodesic_generator(&bad, &CMat::identity(4, 4), &basis), Err(Error::NotUnitary(_))));
    }

    #[test]
    fn direction_aligned_and_orthogonal_cases() {
        let gamma = vec![c(1.0, 2.0), c(0.0, -1.0), c(3.0, 0.0)];
        let d = solve_update_direction(&[gamma.clone()], &gamma).unwrap();
        assert!((d.raw_norm - 1.0).abs() < 1e-12);
        assert!(d.residual < 1e-20);
        assert_eq!(d.direction, vec![1.0]);

        let scaled: Vec<Complex64> = gamma.iter().map(|z| z * 0.5).collect();
        let d = solve_update_direction(&[scaled], &gamma).unwrap();
        assert!((d.raw_norm - 2.0).abs() < 1e-12);

        let gamma = vec![c(1.0, 0.0), c(0.0, 0.0)];
        let ortho = vec![vec![c(0.0, 0.0), c(1.0, 0.0)], vec![c(0.0, 1.0), c(0.0, 0.0)]];
        let d = solve_update_direction(&ortho, &gamma).unwrap();
        assert!((d.residual - 1.0).abs() < 1e-12);
        assert!(d.direction.iter().all(|x| *x == 0.0));

        let zeros = vec![vec![c(0.0, 0.0); 2]; 3];
        assert!(matches!(solve_update_direction(&zeros, &gamma), Err(Error::ZeroJacobian)));
    }

    #[test]
    fn direction_beats_random_probes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let basis = Arc::new(PauliBasis::new(2));
        let r = RestrictionSet::parse(&basis, &["XI", "IX", "ZZ", "IZ"]).unwrap();
        let problem = ControlProblem::new(basis.clone(), r, LieVector::zeros(15), random_unitary(2, &mut rng), 1e-9).unwrap();
        let phi = PulseSequence::random_uniform(4, 4, 1.0, &mut rng);
        let jac = full_jacobian(&problem, &phi).unwrap();
        let vecs = jac.vectorized(&basis);
        let geo = geodesic_generator(jac.unitary(), problem.target(), &basis).unwrap();
        let best = solve_update_direction(&vecs, &geo.tangent).unwrap();
        for _ in 0..10_000 {
            let dir: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
            let combo: Vec<Complex64> = (0..15).map(|row| vecs.iter().zip(&dir).map(|(j, d)| j[row] * d).sum()).collect();
            // Optimal scale for this direction: s = Re<combo, gamma> / |combo|^2.
            let num: f64 = combo.iter().zip(&geo.tangent).map(|(a, g)| (a.conj() * g).re).sum();
            let den: f64 = combo.iter().map(|a| a.norm_sqr()).sum();
            let s = num / den;
            let res: f64 = combo.iter().zip(&geo.tangent).map(|(a, g)| (a * s - g).norm_sqr()).sum();
            assert!(best.residual <= res + 1e-12);
        }
    }

    #[test]
    fn escape_is_orthogonal_and_unit() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let r = RestrictionSet::new([0, 3, 5, 9], 15).unwrap();
        let gamma: Vec<f64> = (0..15).map(|_| rng.random_range(-1.0..1.0)).collect();
        let d = gram_schmidt_escape(&gamma, &r, 5, &mut rng);
        assert_eq!(d.len(), 20);
        assert!((d.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
        let g: Vec<f64> = r.indices().iter().map(|&j| gamma[j]).collect();
        for layer in d.chunks(4) {
            let dot: f64 = layer.iter().zip(&g).map(|(a, b)| a * b).sum();
            assert!(dot.abs() <= 1e-10);
        }
    }

    #[test]
    fn escape_degenerate_cases() {
        let r = RestrictionSet::new([1, 2], 15).unwrap();
        // gamma has no restricted component: plain normalised random draw.
        let mut gamma = vec![0.0; 15];
        gamma[7] = 1.0;
        let mut a = ChaCha8Rng::seed_from_u64(5);
        let mut b = ChaCha8Rng::seed_from_u64(5);
        let d = gram_schmidt_escape(&gamma, &r, 3, &mut a);
        let raw: Vec<f64> = (0..6).map(|_| b.random_range(-1.0..=1.0)).collect();
        let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        for (x, y) in d.iter().zip(&raw) {
            assert!((x - y / norm).abs() < 1e-15);
        }

        // Single restricted direction parallel to gamma: every projection
        // vanishes, the draws are rejected and the fallback is still unit.
        let single = RestrictionSet::new([4], 15).unwrap();
        let mut gamma = vec![0.0; 15];
        gamma[4] = 2.0;
        let d = gram_schmidt_escape(&gamma, &single, 2, &mut a);
        assert!((d.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn run_started_at_solution_stops_at_zero() {
        let target = GateTarget::new(GateName::Toffoli, 3).unwrap();
        let base = rydberg_problem(3, 1.0, &target, 1e-9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let phi0 = PulseSequence::random_uniform(4, 6, 0.5, &mut rng);
        let problem = base.with_target(evolve(&base, &phi0).unwrap()).unwrap();
        let cfg = GeopeConfig::new(1.0, RunSettings::new(4, 10, 0));
        let out = run_from(&problem, &cfg, phi0.clone(), &mut rng).unwrap();
        assert_eq!(out.trace.solved_at(), Some(0));
        assert_eq!(out.pulses, phi0);
    }

    #[test]
    fn geodesic_steps_increase_fidelity_and_runs_reproduce() {
        let target = GateTarget::new(GateName::Ccz, 3).unwrap();
        let problem = rydberg_problem(3, 1.0, &target, 1e-9).unwrap();
        let cfg = GeopeConfig::new(1.42, RunSettings::new(20, 6, 11));
        let a = run(&problem, &cfg).unwrap();
        let b = run(&problem, &cfg).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.pulses, b.pulses);
        let recs = a.trace.records();
        for w in recs.windows(2) {
            if w[1].step_kind == StepKind::Geodesic {
                assert!(w[1].infidelity < w[0].infidelity);
                assert!(w[1].step_size > 0.0 && w[1].step_size <= 1.42);
            }
        }
    }

    #[test]
    fn zero_residual_direction_reaches_target() {
        // Unrestricted controls from the identity: the Jacobian spans the
        // tangent space, the residual vanishes and the parameter line is the
        // geodesic itself, so a long line search finds the target.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let problem = unrestricted(2, random_unitary(2, &mut rng));
        let phi = PulseSequence::zeros(2, 15);
        let jac = full_jacobian(&problem, &phi).unwrap();
        let geo = geodesic_generator(jac.unitary(), problem.target(), problem.basis()).unwrap();
        let dir = solve_update_direction(&jac.vectorized(problem.basis()), &geo.tangent).unwrap();
        assert!(dir.residual < 1e-10);
        let (_, f) = golden_section_max_with(
            |eta| fidelity(&problem, &phi.stepped(&dir.direction, eta)).unwrap(),
            0.0,
            20.0,
            LineSearch { scan_points: 400, ..LineSearch::with_tol(1e-10) },
        );
        assert!(f > 1.0 - 1e-6, "f = {f}");
    }

    #[test]
    fn config_validation() {
        let mut cfg = GeopeConfig::new(1.0, RunSettings::new(4, 10, 0));
        assert!(cfg.validate().is_ok());
        cfg.eta_max = 0.0;
        assert!(cfg.validate().is_err());
        cfg.eta_max = 1.0;
        cfg.gs_factor = -1.0;
        assert!(cfg.validate().is_err());
        cfg.gs_factor = 1.2;
        cfg.run.max_iters = 0;
        assert!(cfg.validate().is_err());
    }
}
