//! Derivatives of the piecewise evolution and of the infidelity.
//!
//! Layer derivatives come from exponentials of block upper-triangular
//! matrices: the top-right block of `exp([[A, E], [0, A]])` is the
//! directional derivative of `exp` at `A` along `E`, and the 3x3 analogue
//! gives second derivatives. Products over layers reuse prefix and suffix
//! partial products so one forward and one backward sweep serve every
//! parameter.
//!
//! Infidelity derivatives are written in terms of `t = Tr(V^dagger U_G)`
//! (the conjugate of `Tr(U_G^dagger V)`; both have the same modulus).

use std::cell::OnceCell;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{eigh, expm_general, RMat};
use crate::model::{layer_unitaries, overlap, ControlProblem, PulseSequence};
use crate::pauli::{vectorize_tangent, CMat, PauliBasis};

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Below this `|Tr(U^dagger V)| / N` the fidelity is treated as non-differentiable.
pub const MIN_OVERLAP: f64 = 1e-14;

fn block_exp_top_right(blocks: &[&CMat], diag: &CMat) -> Result<CMat> {
    // Builds [[D, B0, 0..], [0, D, B1, ..], ..., [0, .., D]] and returns its
    // top-right block after exponentiation.
    let n = diag.nrows();
    let m = blocks.len() + 1;
    let mut big = CMat::zeros(m * n, m * n);
    for b in 0..m {
        big.view_mut((b * n, b * n), (n, n)).copy_from(diag);
        if b + 1 < m {
            big.view_mut((b * n, (b + 1) * n), (n, n)).copy_from(blocks[b]);
        }
    }
    let e = expm_general(&big)?;
    Ok(e.view((0, (m - 1) * n), (n, n)).into_owned())
}

/// `dU(phi_l) / dphi_{l,k}` from the 2x2 block exponential.
pub fn layer_partial(problem: &ControlProblem, phi_l: &[f64], k: usize) -> Result<CMat> {
    assert!(k < problem.control_count(), "control index out of range");
    let ih = problem.layer_hamiltonian(phi_l)? * I;
    let ig = problem.control_matrix(k) * I;
    block_exp_top_right(&[&ig], &ih)
}

/// `d^2 U(phi_l) / dphi_{l,a} dphi_{l,b}`, symmetrised over both orderings.
pub fn layer_second_partial(problem: &ControlProblem, phi_l: &[f64], a: usize, b: usize) -> Result<CMat> {
    let ih = problem.layer_hamiltonian(phi_l)? * I;
    let ga = problem.control_matrix(a) * I;
    let gb = problem.control_matrix(b) * I;
    let ab = block_exp_top_right(&[&ga, &gb], &ih)?;
    if a == b {
        Ok(ab * Complex64::new(2.0, 0.0))
    } else {
        Ok(ab + block_exp_top_right(&[&gb, &ga], &ih)?)
    }
}

/// Eigen-decomposition of one layer generator, used to evaluate the layer
/// unitary and its derivatives with divided differences of `x -> e^{ix}`.
///
/// With `H = Q diag(lambda) Q^dagger` and `E = Q^dagger G Q`,
/// `dU = Q (g[l_i, l_j] E_ij) Q^dagger` and the mixed second derivative is
/// `Q (sum_m g[l_i, l_m, l_j] (E_im F_mj + F_im E_mj)) Q^dagger`.
/// These agree with the block-exponential forms above to rounding.
#[derive(Debug, Clone)]
pub struct LayerSpectrum {
    lambda: Vec<f64>,
    q: CMat,
    q_dag: CMat,
    /// Controls rotated into the eigenbasis.
    rotated: Vec<CMat>,
    first: CMat,
    second: OnceCell<Vec<Complex64>>,
}

/// Separation below which second divided differences switch to a Taylor series.
const CLUSTER: f64 = 1e-3;

fn phase(x: f64) -> Complex64 {
    Complex64::new(x.cos(), x.sin())
}

fn first_divided(a: f64, b: f64) -> Complex64 {
    let half = 0.5 * (a - b);
    let sinc = if half.abs() < 1e-8 { 1.0 - half * half / 6.0 } else { half.sin() / half };
    I * phase(0.5 * (a + b)) * sinc
}

fn second_divided(a: f64, b: f64, c: f64) -> Complex64 {
    let mut p = [a, b, c];
    p.sort_by(|x, y| x.total_cmp(y));
    let [lo, mid, hi] = p;
    if hi - lo > CLUSTER {
        return (first_divided(lo, mid) - first_divided(mid, hi)) / (lo - hi);
    }
    // Expansion about the mean: sum_n g^(n+2)(m) / (n+2)! * h_n(x, y, z), where
    // h_n is the complete homogeneous symmetric polynomial of the offsets.
    let m = (a + b + c) / 3.0;
    let d = [a - m, b - m, c - m];
    let mut total = Complex64::new(0.0, 0.0);
    let mut deriv = -phase(m); // i^2 e^{im}
    let mut fact = 2.0;
    for n in 0..=5usize {
        let mut h = 0.0;
        for i in 0..=n {
            for j in 0..=(n - i) {
                h += d[0].powi(i as i32) * d[1].powi(j as i32) * d[2].powi((n - i - j) as i32);
            }
        }
        total += deriv * (h / fact);
        deriv *= I;
        fact *= (n + 3) as f64;
    }
    total
}

impl LayerSpectrum {
    pub fn new(problem: &ControlProblem, phi_l: &[f64]) -> Result<Self> {
        let h = problem.layer_hamiltonian(phi_l)?;
        let eig = eigh(&h);
        let lambda: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        let q = eig.eigenvectors;
        let q_dag = q.adjoint();
        let rotated = (0..problem.control_count())
            .map(|k| &q_dag * problem.control_matrix(k) * &q)
            .collect();
        let n = lambda.len();
        let first = CMat::from_fn(n, n, |i, j| first_divided(lambda[i], lambda[j]));
        Ok(LayerSpectrum { lambda, q, q_dag, rotated, first, second: OnceCell::new() })
    }

    pub fn unitary(&self) -> CMat {
        let n = self.lambda.len();
        let mut scaled = self.q.clone();
        for j in 0..n {
            let p = phase(self.lambda[j]);
            for i in 0..n {
                scaled[(i, j)] *= p;
            }
        }
        scaled * &self.q_dag
    }

    pub fn partial(&self, k: usize) -> CMat {
        let inner = self.first.component_mul(&self.rotated[k]);
        &self.q * inner * &self.q_dag
    }

    pub fn partials(&self) -> Vec<CMat> {
        (0..self.rotated.len()).map(|k| self.partial(k)).collect()
    }

    pub fn second_partial(&self, a: usize, b: usize) -> CMat {
        let n = self.lambda.len();
        let (e, f) = (&self.rotated[a], &self.rotated[b]);
        let table = self.second.get_or_init(|| {
            let l = &self.lambda;
            let mut t = Vec::with_capacity(n * n * n);
            for i in 0..n {
                for j in 0..n {
                    for m in 0..n {
                        t.push(second_divided(l[i], l[m], l[j]));
                    }
                }
            }
            t
        });
        let mut inner = CMat::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let row = &table[(i * n + j) * n..(i * n + j + 1) * n];
                let mut acc = Complex64::new(0.0, 0.0);
                for m in 0..n {
                    acc += (e[(i, m)] * f[(m, j)] + f[(i, m)] * e[(m, j)]) * row[m];
                }
                inner[(i, j)] = acc;
            }
        }
        &self.q * inner * &self.q_dag
    }
}

fn layer_partials(problem: &ControlProblem, phi_l: &[f64]) -> Result<Vec<CMat>> {
    Ok(LayerSpectrum::new(problem, phi_l)?.partials())
}

/// Partial products of the layer unitaries.
struct Sweep {
    /// `prefix[l] = U_{l-1} ... U_0`, with `prefix[0] = I` and `prefix[L] = U_G`.
    prefix: Vec<CMat>,
    /// `suffix[l] = U_{L-1} ... U_{l+1}`, with `suffix[L-1] = I`.
    suffix: Vec<CMat>,
    layers: Vec<CMat>,
}

impl Sweep {
    fn new(layers: Vec<CMat>, dim: usize) -> Self {
        let count = layers.len();
        let mut prefix = Vec::with_capacity(count + 1);
        prefix.push(CMat::identity(dim, dim));
        for u in &layers {
            let next = u * prefix.last().unwrap();
            prefix.push(next);
        }
        let mut suffix = vec![CMat::identity(dim, dim); count];
        for l in (0..count.saturating_sub(1)).rev() {
            suffix[l] = &suffix[l + 1] * &layers[l + 1];
        }
        Sweep { prefix, suffix, layers }
    }

    fn unitary(&self) -> &CMat {
        self.prefix.last().unwrap()
    }
}

/// `Tr(A B)` without forming the product.
fn trace_product(a: &CMat, b: &CMat) -> Complex64 {
    let n = a.nrows();
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            acc += a[(i, j)] * b[(j, i)];
        }
    }
    acc
}

/// Jacobian of the full evolution, one `N x N` matrix per parameter.
#[derive(Debug, Clone)]
pub struct JacobianSet {
    layers: usize,
    controls: usize,
    entries: Vec<CMat>,
    unitary: CMat,
}

impl JacobianSet {
    pub fn layer_count(&self) -> usize {
        self.layers
    }

    pub fn control_count(&self) -> usize {
        self.controls
    }

    pub fn get(&self, l: usize, k: usize) -> &CMat {
        &self.entries[l * self.controls + k]
    }

    /// Entries in parameter order `l * K + k`.
    pub fn entries(&self) -> &[CMat] {
        &self.entries
    }

    /// `U_G` at the point where the Jacobian was taken.
    pub fn unitary(&self) -> &CMat {
        &self.unitary
    }

    /// Pauli-basis coefficients `Tr(G_j J_{l,k}) / N` of every entry.
    pub fn vectorized(&self, basis: &PauliBasis) -> Vec<Vec<Complex64>> {
        self.entries.iter().map(|j| vectorize_tangent(j, basis)).collect()
    }
}

/// `J_{l,k} = U_L ... U_{l+1} (dU_l / dphi_{l,k}) U_{l-1} ... U_1`.
pub fn full_jacobian(problem: &ControlProblem, phi: &PulseSequence) -> Result<JacobianSet> {
    let sweep = Sweep::new(layer_unitaries(problem, phi)?, problem.dim());
    let mut entries = Vec::with_capacity(phi.len());
    for l in 0..phi.layer_count() {
        let left = &sweep.suffix[l];
        let right = &sweep.prefix[l];
        for d in layer_partials(problem, phi.layer(l))? {
            entries.push(left * d * right);
        }
    }
    Ok(JacobianSet {
        layers: phi.layer_count(),
        controls: phi.control_count(),
        entries,
        unitary: sweep.unitary().clone(),
    })
}

/// Infidelity and its gradient at one point.
#[derive(Debug, Clone)]
pub struct GradientEval {
    pub infidelity: f64,
    /// `dI / dphi`, layer-major.
    pub gradient: Vec<f64>,
}

fn overlap_of(sweep: &Sweep, problem: &ControlProblem) -> Result<Complex64> {
    // t = Tr(V^dagger U_G)
    let t = overlap(problem.target(), sweep.unitary());
    if t.norm() / problem.dim() as f64 <= MIN_OVERLAP {
        return Err(Error::ZeroOverlap);
    }
    Ok(t)
}

/// `B_l = P_l V^dagger S_l`, so that `Tr(V^dagger S_l D P_l) = Tr(B_l D)`.
fn sandwiches(sweep: &Sweep, problem: &ControlProblem) -> Vec<CMat> {
    let v_dag = problem.target().adjoint();
    (0..sweep.layers.len())
        .map(|l| &sweep.prefix[l] * &v_dag * &sweep.suffix[l])
        .collect()
}

/// Infidelity `1 - |t|/N` and its gradient `-Re(conj(t) dt) / (N |t|)`.
pub fn infidelity_gradient(problem: &ControlProblem, phi: &PulseSequence) -> Result<GradientEval> {
    let sweep = Sweep::new(layer_unitaries(problem, phi)?, problem.dim());
    let t = overlap_of(&sweep, problem)?;
    let norm = problem.dim() as f64;
    let modulus = t.norm();
    let b = sandwiches(&sweep, problem);
    let mut gradient = Vec::with_capacity(phi.len());
    for l in 0..phi.layer_count() {
        for d in layer_partials(problem, phi.layer(l))? {
            let dt = trace_product(&b[l], &d);
            gradient.push(-(t.conj() * dt).re / (norm * modulus));
        }
    }
    Ok(GradientEval { infidelity: 1.0 - (modulus / norm).min(1.0), gradient })
}

/// Symmetric matrix of second derivatives of the infidelity.
#[derive(Debug, Clone)]
pub struct HessianMatrix(RMat);

impl HessianMatrix {
    pub fn values(&self) -> &RMat {
        &self.0
    }

    pub fn into_inner(self) -> RMat {
        self.0
    }

    pub fn asymmetry(&self) -> f64 {
        (&self.0 - self.0.transpose()).amax()
    }
}

/// Infidelity, gradient and Hessian at one point.
#[derive(Debug, Clone)]
pub struct HessianEval {
    pub infidelity: f64,
    pub gradient: Vec<f64>,
    pub hessian: HessianMatrix,
}

/// Second derivatives of the infidelity.
///
/// Same-layer blocks use second divided differences; cross-layer blocks insert
/// two first derivatives into the layer product. The modulus is differentiated
/// by the chain rule:
/// `d2|t| = [Re(conj(t_b) t_a) + Re(conj(t) t_ab)] / |t| - Re(conj(t) t_a) Re(conj(t) t_b) / |t|^3`.
pub fn infidelity_hessian(problem: &ControlProblem, phi: &PulseSequence) -> Result<HessianEval> {
    let dim = problem.dim();
    let sweep = Sweep::new(layer_unitaries(problem, phi)?, dim);
    let t = overlap_of(&sweep, problem)?;
    let modulus = t.norm();
    let norm = dim as f64;
    let (layers, controls) = (phi.layer_count(), phi.control_count());
    let p = phi.len();

    let spectra: Vec<LayerSpectrum> =
        (0..layers).map(|l| LayerSpectrum::new(problem, phi.layer(l))).collect::<Result<_>>()?;
    let partials: Vec<Vec<CMat>> = spectra.iter().map(LayerSpectrum::partials).collect();
    let b = sandwiches(&sweep, problem);

    // First derivatives of t.
    let mut dt = vec![Complex64::new(0.0, 0.0); p];
    for l in 0..layers {
        for k in 0..controls {
            dt[l * controls + k] = trace_product(&b[l], &partials[l][k]);
        }
    }

    // Second derivatives of t.
    let mut ddt = DMatrix::<Complex64>::zeros(p, p);
    for l in 0..layers {
        for a in 0..controls {
            for c in a..controls {
                let d2 = spectra[l].second_partial(a, c);
                let v = trace_product(&b[l], &d2);
                ddt[(l * controls + a, l * controls + c)] = v;
                ddt[(l * controls + c, l * controls + a)] = v;
            }
        }
    }
    // r_l = V^dagger S_l; for l > m the mixed term is Tr(Y r_l D_{l,k}) with
    // Y = U_{l-1} ... U_{m+1} D_{m,c} P_m.
    let v_dag = problem.target().adjoint();
    let right: Vec<CMat> = sweep.suffix.iter().map(|s| &v_dag * s).collect();
    for m in 0..layers {
        for c in 0..controls {
            let mut y = &partials[m][c] * &sweep.prefix[m];
            for l in (m + 1)..layers {
                let ctx = &y * &right[l];
                for k in 0..controls {
                    let v = trace_product(&ctx, &partials[l][k]);
                    let (i, j) = (l * controls + k, m * controls + c);
                    ddt[(i, j)] = v;
                    ddt[(j, i)] = v;
                }
                y = &sweep.layers[l] * y;
            }
        }
    }

    let proj: Vec<f64> = dt.iter().map(|d| (t.conj() * d).re).collect();
    let mut h = RMat::zeros(p, p);
    for i in 0..p {
        for j in 0..=i {
            let second = ((dt[j].conj() * dt[i]).re + (t.conj() * ddt[(i, j)]).re) / modulus
                - proj[i] * proj[j] / modulus.powi(3);
            let v = -second / norm;
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    Ok(HessianEval {
        infidelity: 1.0 - (modulus / norm).min(1.0),
        gradient: proj.iter().map(|x| -x / (norm * modulus)).collect(),
        hessian: HessianMatrix(h),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{
        evolve, gate_matrix, infidelity, layer_unitary, rydberg_problem, GateName, GateTarget,
    };
    use crate::pauli::{LieVector, RestrictionSet};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn rel_err(a: &CMat, b: &CMat) -> f64 {
        (a - b).norm() / b.norm().max(1e-12)
    }

    fn free_problem(n: usize, words: &[&str], target: CMat) -> ControlProblem {
        let basis = Arc::new(PauliBasis::new(n));
        let r = RestrictionSet::parse(&basis, words).unwrap();
        let len = basis.len();
        ControlProblem::new(basis, r, LieVector::zeros(len), target, 1e-9).unwrap()
    }

    fn toffoli() -> ControlProblem {
        rydberg_problem(3, 1.0, &GateTarget::new(GateName::Toffoli, 3).unwrap(), 1e-9).unwrap()
    }

    #[test]
    fn partial_at_identity_is_i_g() {
        let p = free_problem(2, &["XI", "ZZ", "IY"], CMat::identity(4, 4));
        for k in 0..3 {
            let d = layer_partial(&p, &[0.0; 3], k).unwrap();
            assert!((d - p.control_matrix(k) * I).norm() < 1e-14);
        }
    }

    #[test]
    fn partial_commuting_case_is_analytic() {
        let p = free_problem(1, &["Z"], CMat::identity(2, 2));
        let d = layer_partial(&p, &[PI / 2.0], 0).unwrap();
        let u = layer_unitary(&p, &[PI / 2.0]).unwrap();
        let expected = p.control_matrix(0) * I * u;
        assert!((d - expected).norm() < 1e-14);
    }

    #[test]
    fn partial_matches_finite_difference() {
        let p = toffoli();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let phi: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let h = 1e-5;
        for k in 0..6 {
            let d = layer_partial(&p, &phi, k).unwrap();
            let mut plus = phi.clone();
            let mut minus = phi.clone();
            plus[k] += h;
            minus[k] -= h;
            let fd = (layer_unitary(&p, &plus).unwrap() - layer_unitary(&p, &minus).unwrap()) * c(0.5 / h, 0.0);
            assert!(rel_err(&d, &fd) < 1e-6, "k={k}: {}", rel_err(&d, &fd));
        }
    }

    #[test]
    fn jacobian_single_layer_and_identity_cases() {
        let p = toffoli();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let phi = PulseSequence::random_uniform(1, 6, 1.0, &mut rng);
        let jac = full_jacobian(&p, &phi).unwrap();
        for k in 0..6 {
            assert!((jac.get(0, k) - layer_partial(&p, phi.layer(0), k).unwrap()).norm() < 1e-13);
        }

        let free = free_problem(2, &["XI", "IZ"], CMat::identity(4, 4));
        let jac = full_jacobian(&free, &free.zero_sequence(3)).unwrap();
        for l in 0..3 {
            for k in 0..2 {
                assert!((jac.get(l, k) - free.control_matrix(k) * I).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn jacobian_matches_finite_difference_of_evolve() {
        let target = gate_matrix(GateName::Qft, 2).unwrap();
        let p = free_problem(2, &["XI", "IX", "ZZ", "IZ"], target);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let phi = PulseSequence::random_uniform(4, 4, 1.0, &mut rng);
        let jac = full_jacobian(&p, &phi).unwrap();
        let h = 1e-5;
        for i in 0..phi.len() {
            let mut e = vec![0.0; phi.len()];
            e[i] = 1.0;
            let fd = (evolve(&p, &phi.stepped(&e, h)).unwrap() - evolve(&p, &phi.stepped(&e, -h)).unwrap())
                * c(0.5 / h, 0.0);
            assert!(rel_err(&jac.entries()[i], &fd) < 1e-6);
        }
    }

    #[test]
    fn jacobian_entries_are_tangent() {
        let p = toffoli();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let phi = PulseSequence::random_uniform(5, 6, 1.0, &mut rng);
        let jac = full_jacobian(&p, &phi).unwrap();
        let u_dag = jac.unitary().adjoint();
        for j in jac.entries() {
            let k = &u_dag * j * (-I);
            assert!((&k - k.adjoint()).norm() < 1e-8);
        }
    }

    #[test]
    fn gradient_vanishes_at_the_target() {
        let p = toffoli();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let phi = PulseSequence::random_uniform(4, 6, 1.0, &mut rng);
        let q = p.with_target(evolve(&p, &phi).unwrap()).unwrap();
        let g = infidelity_gradient(&q, &phi).unwrap();
        assert!(g.gradient.iter().map(|x| x * x).sum::<f64>().sqrt() <= 1e-8);
        assert!(g.infidelity.abs() < 1e-14);
    }

    #[test]
    fn gradient_zero_for_single_axis_target() {
        let a = 0.7;
        let free = free_problem(1, &["X"], CMat::identity(2, 2));
        let v = layer_unitary(&free, &[a]).unwrap();
        let p = free.with_target(v).unwrap();
        let g = infidelity_gradient(&p, &PulseSequence::from_values(1, 1, vec![a]).unwrap()).unwrap();
        assert!(g.gradient[0].abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_difference() {
        let p = toffoli();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let phi = PulseSequence::random_uniform(3, 6, 1.0, &mut rng);
        let g = infidelity_gradient(&p, &phi).unwrap();
        let h = 1e-5;
        for i in 0..phi.len() {
            let mut e = vec![0.0; phi.len()];
            e[i] = 1.0;
            let fd = (infidelity(&p, &phi.stepped(&e, h)).unwrap() - infidelity(&p, &phi.stepped(&e, -h)).unwrap())
                / (2.0 * h);
            assert!((g.gradient[i] - fd).abs() <= 1e-6 * fd.abs().max(1e-2), "{i}: {} vs {fd}", g.gradient[i]);
        }
    }

    #[test]
    fn gradient_errors_on_orthogonal_point() {
        let free = free_problem(1, &["Z"], gate_matrix(GateName::Qft, 1).unwrap());
        let x = CMat::from_row_slice(2, 2, &[c(0.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)]);
        let p = free.with_target(x).unwrap();
        let phi = PulseSequence::zeros(1, 1);
        assert!(matches!(infidelity_gradient(&p, &phi), Err(Error::ZeroOverlap)));
        assert!(matches!(infidelity_hessian(&p, &phi), Err(Error::ZeroOverlap)));
    }

    #[test]
    fn hessian_matches_finite_difference_of_gradient() {
        let target = gate_matrix(GateName::Qft, 2).unwrap();
        let p = free_problem(2, &["XI", "IX", "ZZ"], target);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let phi = PulseSequence::random_uniform(2, 3, 1.0, &mut rng);
        let eval = infidelity_hessian(&p, &phi).unwrap();
        let hm = eval.hessian.values();
        assert!(eval.hessian.asymmetry() < 1e-8);
        let plain = infidelity_gradient(&p, &phi).unwrap();
        for (a, b) in eval.gradient.iter().zip(&plain.gradient) {
            assert!((a - b).abs() < 1e-13);
        }
        let h = 1e-4;
        let scale = hm.amax();
        for i in 0..phi.len() {
            let mut e = vec![0.0; phi.len()];
            e[i] = 1.0;
            let gp = infidelity_gradient(&p, &phi.stepped(&e, h)).unwrap().gradient;
            let gm = infidelity_gradient(&p, &phi.stepped(&e, -h)).unwrap().gradient;
            for j in 0..phi.len() {
                let fd = (gp[j] - gm[j]) / (2.0 * h);
                assert!((hm[(j, i)] - fd).abs() <= 1e-4 * scale, "({j},{i}) {} vs {fd}", hm[(j, i)]);
            }
        }
    }

    #[test]
    fn hessian_positive_at_one_parameter_optimum() {
        let a = 0.4;
        let free = free_problem(1, &["Y"], CMat::identity(2, 2));
        let p = free.with_target(layer_unitary(&free, &[a]).unwrap()).unwrap();
        let eval = infidelity_hessian(&p, &PulseSequence::from_values(1, 1, vec![a]).unwrap()).unwrap();
        // 1 - |cos(x - a)| has curvature 1 at the optimum.
        assert!((eval.hessian.values()[(0, 0)] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn second_partial_matches_finite_difference() {
        let p = toffoli();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let phi: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let h = 1e-4;
        for (a, b) in [(0, 0), (1, 4), (5, 2)] {
            let d2 = layer_second_partial(&p, &phi, a, b).unwrap();
            let mut plus = phi.clone();
            plus[b] += h;
            let mut minus = phi.clone();
            minus[b] -= h;
            let fd = (layer_partial(&p, &plus, a).unwrap() - layer_partial(&p, &minus, a).unwrap())
                * c(0.5 / h, 0.0);
            assert!(rel_err(&d2, &fd) < 1e-6, "({a},{b}) {}", rel_err(&d2, &fd));
        }
    }

    #[test]
    fn spectral_derivatives_match_block_exponentials() {
        let p = toffoli();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        // Zero controls leave the degenerate drift spectrum; the others are generic.
        let mut points = vec![vec![0.0; 6], vec![1e-7, 0.0, 0.0, 0.0, 0.0, 0.0]];
        points.push((0..6).map(|_| rng.random_range(-1.0..1.0)).collect());
        points.push((0..6).map(|_| rng.random_range(-5.0..5.0)).collect());
        for phi in &points {
            let s = LayerSpectrum::new(&p, phi).unwrap();
            assert!(rel_err(&s.unitary(), &layer_unitary(&p, phi).unwrap()) < 1e-13);
            for k in 0..6 {
                let block = layer_partial(&p, phi, k).unwrap();
                assert!(rel_err(&s.partial(k), &block) < 1e-12, "k={k}");
            }
            for (a, b) in [(0, 0), (2, 3), (5, 1), (4, 4)] {
                let block = layer_second_partial(&p, phi, a, b).unwrap();
                assert!(rel_err(&s.second_partial(a, b), &block) < 1e-10, "({a},{b})");
            }
        }
    }

    #[test]
    fn second_divided_difference_is_continuous_across_cluster_threshold() {
        let exact = |a: f64, b: f64, c: f64| {
            let g = |x: f64| phase(x);
            ((g(a) - g(b)) / (a - b) - (g(b) - g(c)) / (b - c)) / (a - c)
        };
        for (a, b, c) in [(0.3, 0.8, 1.7), (0.0, 0.4, 0.9), (2.0, 2.5, -1.0)] {
            assert!((second_divided(a, b, c) - exact(a, b, c)).norm() < 1e-12);
        }
        let base = 0.7;
        for sep in [0.9e-3, 1.1e-3, 1e-5] {
            let v = second_divided(base, base + 0.3 * sep, base + sep);
            let reference = -phase(base + 0.433 * sep) * 0.5;
            assert!((v - reference).norm() < 1e-6, "sep={sep}");
        }
        assert!((second_divided(1.0, 1.0, 1.0) + phase(1.0) * 0.5).norm() < 1e-15);
    }
}
