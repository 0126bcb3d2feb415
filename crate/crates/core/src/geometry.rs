//! Geodesic lengths on the unitary group, their first-order response to a
//! perturbation of the current unitary, and the direction that increases the
//! fidelity fastest.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{eigh, expm_hermitian_generator, logm_unitary_principal};
use crate::pauli::{CMat, PauliBasis};

/// Absolute tolerance of the adaptive quadrature in [`log_frechet_integral`].
pub const FRECHET_TOL: f64 = 1e-14;

/// Distance from `-1` below which an eigenvalue of `W` makes the interpolant singular.
const SINGULAR_TOL: f64 = 1e-8;

fn traceless(mut g: CMat) -> CMat {
    let n = g.nrows();
    let shift = g.trace() / n as f64;
    for d in 0..n {
        g[(d, d)] -= shift;
    }
    g
}

/// `Gamma0` with `U_G exp(i Gamma0) = V` up to a global phase: the principal
/// generator of `U_G^dagger V` with its trace removed.
pub fn geodesic_generator_matrix(u_g: &CMat, v: &CMat) -> Result<CMat> {
    Ok(traceless(logm_unitary_principal(&(u_g.adjoint() * v))?))
}

/// `sqrt(Tr(Gamma0^2) / N)`, which equals the norm of the Lie vector of `Gamma0`
/// in the normalised Pauli coordinates.
pub fn geodesic_length(u_g: &CMat, v: &CMat) -> Result<f64> {
    let g = geodesic_generator_matrix(u_g, v)?;
    Ok((g.norm_squared() / g.nrows() as f64).sqrt())
}

fn simpson(f: &impl Fn(f64) -> Complex64, a: f64, fa: Complex64, b: f64, fb: Complex64) -> (f64, Complex64, Complex64) {
    let m = 0.5 * (a + b);
    let fm = f(m);
    (m, fm, (fa + fm * 4.0 + fb) * ((b - a) / 6.0))
}

#[allow(clippy::too_many_arguments)]
fn adaptive_simpson(
    f: &impl Fn(f64) -> Complex64,
    a: f64,
    fa: Complex64,
    b: f64,
    fb: Complex64,
    m: f64,
    fm: Complex64,
    whole: Complex64,
    tol: f64,
    depth: u32,
) -> Complex64 {
    let (lm, flm, left) = simpson(f, a, fa, m, fm);
    let (rm, frm, right) = simpson(f, m, fm, b, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.norm() <= 15.0 * tol {
        // One Richardson step on top of the two halves.
        return left + right + delta / 15.0;
    }
    adaptive_simpson(f, a, fa, m, fm, lm, flm, left, 0.5 * tol, depth - 1)
        + adaptive_simpson(f, m, fm, b, fb, rm, frm, right, 0.5 * tol, depth - 1)
}

/// `int_0^1 ds / ((1 + s(a - 1)) (1 + s(b - 1)))` for eigenvalues `a`, `b` of `W`.
fn interpolant_integral(a: Complex64, b: Complex64) -> Complex64 {
    let f = |s: f64| 1.0 / ((1.0 + (a - 1.0) * s) * (1.0 + (b - 1.0) * s));
    let (f0, f1) = (f(0.0), f(1.0));
    let (m, fm, whole) = simpson(&f, 0.0, f0, 1.0, f1);
    adaptive_simpson(&f, 0.0, f0, 1.0, f1, m, fm, whole, FRECHET_TOL, 40)
}

/// `D = int_0^1 A(s)^-1 K W A(s)^-1 ds` with `A(s) = s W + (1 - s) I`.
///
/// In the eigenbasis of `W` the integrand separates into scalar integrals,
/// each evaluated by adaptive Simpson quadrature; the result is symmetrised.
///
/// # Errors
/// [`Error::SingularInterpolant`] if `W` has an eigenvalue at `-1`.
pub fn log_frechet_integral(w: &CMat, k: &CMat) -> Result<CMat> {
    let n = w.nrows();
    if w.shape() != k.shape() || w.ncols() != n {
        return Err(Error::DimensionMismatch { expected: n, got: k.nrows() });
    }
    // W = exp(iG) with G Hermitian, so the eigenvectors of G diagonalise W.
    let eig = eigh(&logm_unitary_principal(w)?);
    let lambdas: Vec<Complex64> = eig.eigenvalues.iter().map(|t| Complex64::from_polar(1.0, *t)).collect();
    if lambdas.iter().any(|l| (l + 1.0).norm() < SINGULAR_TOL) {
        return Err(Error::SingularInterpolant);
    }
    let q = &eig.eigenvectors;
    let mut d = q.adjoint() * k * w * q;
    for i in 0..n {
        for j in i..n {
            let weight = interpolant_integral(lambdas[i], lambdas[j]);
            d[(i, j)] *= weight;
            if i != j {
                d[(j, i)] *= weight;
            }
        }
    }
    let d = q * d * q.adjoint();
    Ok((&d + d.adjoint()) * Complex64::new(0.5, 0.0))
}

/// Effect of moving `U_G` to `U_G exp(i eps K)` on the geodesic length to `V`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbationReport {
    pub base_length: f64,
    pub perturbed_length: f64,
    /// `L - eps Tr(D Gamma0) / (N L)`, the first-order estimate of `perturbed_length`.
    pub first_order_prediction: f64,
    /// Cosine between the Pauli coefficients of `K` and of `Gamma0`.
    pub direction_overlap: f64,
}

fn real_coefficients(m: &CMat, basis: &PauliBasis) -> Vec<f64> {
    let n = basis.dim() as f64;
    (0..basis.len()).map(|j| basis.trace_with(j, m).re / n).collect()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

pub fn perturbation_report(u_g: &CMat, v: &CMat, k: &CMat, eps: f64, basis: &PauliBasis) -> Result<PerturbationReport> {
    let w = u_g.adjoint() * v;
    let gamma = traceless(logm_unitary_principal(&w)?);
    let n = gamma.nrows() as f64;
    let base_length = (gamma.norm_squared() / n).sqrt();
    let moved = u_g * expm_hermitian_generator(&(k * Complex64::new(eps, 0.0)))?;
    let perturbed_length = geodesic_length(&moved, v)?;
    let d = log_frechet_integral(&w, k)?;
    let first_order_prediction = if base_length > 0.0 {
        base_length - eps * (&d * &gamma).trace().re / (n * base_length)
    } else {
        base_length
    };
    let direction_overlap = cosine(&real_coefficients(k, basis), &real_coefficients(&gamma, basis));
    Ok(PerturbationReport { base_length, perturbed_length, first_order_prediction, direction_overlap })
}

/// Direction of fastest first-order fidelity increase from `U_G`, when the
/// target is `U_G exp(i Gamma)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FidelityDirection {
    /// Unit vector `a / ||a||` over the basis, where
    /// `a_j = Im(conj(Tr e^{iG}) Tr(e^{iG} G_j)) / |Tr e^{iG}|`.
    pub k_hat: Vec<f64>,
    /// `k_hat . gamma / ||gamma||` with `gamma` the Pauli coefficients of `Gamma`.
    pub overlap_with_geodesic: f64,
    /// `Tr(e^{i Gamma})`.
    pub trace: Complex64,
}

impl FidelityDirection {
    /// Flips the global sign so that the largest-magnitude component is positive.
    pub fn sign_normalised(mut self) -> Self {
        let lead = self.k_hat.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        if lead < 0.0 {
            self.k_hat.iter_mut().for_each(|x| *x = -*x);
            self.overlap_with_geodesic = -self.overlap_with_geodesic;
        }
        self
    }
}

/// # Errors
/// [`Error::ZeroOverlap`] if `Tr(e^{i Gamma})` vanishes or the linear form is zero.
pub fn max_fidelity_direction(gamma: &CMat, basis: &PauliBasis) -> Result<FidelityDirection> {
    if gamma.nrows() != basis.dim() {
        return Err(Error::DimensionMismatch { expected: basis.dim(), got: gamma.nrows() });
    }
    let w = expm_hermitian_generator(gamma)?;
    let trace = w.trace();
    if trace.norm() < 1e-14 * basis.dim() as f64 {
        return Err(Error::ZeroOverlap);
    }
    let a: Vec<f64> =
        (0..basis.len()).map(|j| (trace.conj() * basis.trace_with(j, &w)).im / trace.norm()).collect();
    let norm = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::ZeroOverlap);
    }
    let k_hat: Vec<f64> = a.iter().map(|x| x / norm).collect();
    let overlap_with_geodesic = cosine(&k_hat, &real_coefficients(gamma, basis));
    Ok(FidelityDirection { k_hat, overlap_with_geodesic, trace })
}
