//! Dense complex linear-algebra kernels.
//!
//! Hermitian generators are exponentiated through their eigendecomposition so
//! layer unitaries stay unitary to rounding. Non-normal matrices (the block
//! matrices used for derivatives) go through Padé scaling-and-squaring.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::pauli::CMat;

pub type RMat = DMatrix<f64>;

/// Relative singular-value cutoff for minimum-norm least squares.
pub const LSTSQ_RCOND: f64 = 1e-12;
/// Eigenphases this close to `-pi` are taken to be on the branch cut at `+pi`.
pub const BRANCH_TOL: f64 = 1e-10;

const HERMITIAN_TOL: f64 = 1e-10;
const UNITARY_TOL: f64 = 1e-8;

/// Eigendecomposition of a Hermitian matrix with ascending eigenvalues.
#[derive(Debug, Clone)]
pub struct EighResult {
    pub eigenvalues: DVector<f64>,
    pub eigenvectors: CMat,
}

fn hermitian_deviation(h: &CMat) -> f64 {
    (h - h.adjoint()).norm() / h.norm().max(1.0)
}

pub fn unitarity_deviation(u: &CMat) -> f64 {
    let n = u.nrows();
    (u.adjoint() * u - CMat::identity(n, n)).norm()
}

/// Eigendecomposition of a Hermitian matrix (only the lower triangle is trusted).
pub fn eigh(h: &CMat) -> EighResult {
    let eig = SymmetricEigen::new(h.clone());
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let eigenvalues = DVector::from_iterator(order.len(), order.iter().map(|&i| eig.eigenvalues[i]));
    let eigenvectors = CMat::from_columns(&order.iter().map(|&i| eig.eigenvectors.column(i)).collect::<Vec<_>>());
    EighResult { eigenvalues, eigenvectors }
}

/// Real symmetric eigendecomposition with ascending eigenvalues.
pub fn eigh_real(a: &RMat) -> (DVector<f64>, RMat) {
    let eig = SymmetricEigen::new(a.clone());
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[x].total_cmp(&eig.eigenvalues[y]));
    let values = DVector::from_iterator(order.len(), order.iter().map(|&i| eig.eigenvalues[i]));
    let vectors = RMat::from_columns(&order.iter().map(|&i| eig.eigenvectors.column(i)).collect::<Vec<_>>());
    (values, vectors)
}

/// `Q f(diag) Q^dagger` for a spectral decomposition.
fn spectral_apply(eig: &EighResult, f: impl Fn(f64) -> Complex64) -> CMat {
    let q = &eig.eigenvectors;
    let mut scaled = q.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= f(eig.eigenvalues[j]);
    }
    scaled * q.adjoint()
}

/// `exp(iH)` for Hermitian `H`.
pub fn expm_hermitian_generator(h: &CMat) -> Result<CMat> {
    let dev = hermitian_deviation(h);
    if dev > HERMITIAN_TOL {
        return Err(Error::NotHermitian(dev));
    }
    Ok(spectral_apply(&eigh(h), |lambda| Complex64::from_polar(1.0, lambda)))
}

// Padé coefficients and backward-error thresholds (Higham 2005).
const PADE3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE7: [f64; 8] = [17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0];
const PADE9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA: [(usize, f64); 4] = [
    (3, 1.495585217958292e-2),
    (5, 2.539398330063230e-1),
    (7, 9.504178996162932e-1),
    (9, 2.097847961257068e0),
];
const THETA13: f64 = 5.371920351148152e0;

fn norm1(a: &CMat) -> f64 {
    a.column_iter().map(|c| c.iter().map(|z| z.norm()).sum::<f64>()).fold(0.0, f64::max)
}

fn scaled_identity(n: usize, x: f64) -> CMat {
    CMat::from_diagonal_element(n, n, Complex64::new(x, 0.0))
}

fn pade_low(a: &CMat, coeffs: &[f64]) -> (CMat, CMat) {
    let n = a.nrows();
    let a2 = a * a;
    let mut even = scaled_identity(n, coeffs[0]);
    let mut odd = scaled_identity(n, coeffs[1]);
    let mut power = CMat::identity(n, n);
    let mut k = 2;
    while k < coeffs.len() {
        power = &power * &a2;
        even += &power * Complex64::new(coeffs[k], 0.0);
        if k + 1 < coeffs.len() {
            odd += &power * Complex64::new(coeffs[k + 1], 0.0);
        }
        k += 2;
    }
    (a * odd, even)
}

fn pade13(a: &CMat) -> (CMat, CMat) {
    let n = a.nrows();
    let b = |k: usize| Complex64::new(PADE13[k], 0.0);
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let u_inner = &a6 * b(13) + &a4 * b(11) + &a2 * b(9);
    let u = a * (&a6 * u_inner + &a6 * b(7) + &a4 * b(5) + &a2 * b(3) + scaled_identity(n, PADE13[1]));
    let v_inner = &a6 * b(12) + &a4 * b(10) + &a2 * b(8);
    let v = &a6 * v_inner + &a6 * b(6) + &a4 * b(4) + &a2 * b(2) + scaled_identity(n, PADE13[0]);
    (u, v)
}

/// Matrix exponential of a general complex matrix by Padé scaling-and-squaring.
///
/// The Padé order is the lowest whose backward-error bound covers `||A||_1`;
/// beyond that order 13 is used after scaling by `2^-s`.
pub fn expm_general(a: &CMat) -> Result<CMat> {
    assert!(a.is_square(), "expm needs a square matrix");
    let n = a.nrows();
    let norm = norm1(a);
    if !norm.is_finite() {
        return Err(Error::ExpmOverflow(norm));
    }
    if norm == 0.0 {
        return Ok(CMat::identity(n, n));
    }
    for (m, theta) in THETA {
        if norm <= theta {
            let coeffs: &[f64] = match m {
                3 => &PADE3,
                5 => &PADE5,
                7 => &PADE7,
                _ => &PADE9,
            };
            let (u, v) = pade_low(a, coeffs);
            return pade_quotient(u, v, norm);
        }
    }
    let s = (norm / THETA13).log2().ceil().max(0.0) as i32;
    if s > 1000 {
        return Err(Error::ExpmOverflow(norm));
    }
    let scaled = a * Complex64::new(2f64.powi(-s), 0.0);
    let (u, v) = pade13(&scaled);
    let mut r = pade_quotient(u, v, norm)?;
    for _ in 0..s {
        r = &r * &r;
    }
    if r.iter().any(|z| !z.is_finite()) {
        return Err(Error::ExpmOverflow(norm));
    }
    Ok(r)
}

fn pade_quotient(u: CMat, v: CMat, norm: f64) -> Result<CMat> {
    let p = &v + &u;
    let q = v - u;
    q.lu().solve(&p).ok_or(Error::ExpmOverflow(norm))
}

/// Principal logarithm of a unitary: Hermitian `G` with `W = exp(iG)` and
/// every eigenphase in `(-pi, pi]`.
pub fn logm_unitary_principal(w: &CMat) -> Result<CMat> {
    let dev = unitarity_deviation(w);
    if dev > UNITARY_TOL {
        return Err(Error::NotUnitary(dev));
    }
    let n = w.nrows();
    // W is normal, so its Schur form is diagonal up to rounding.
    let (q, t) = nalgebra::Schur::new(w.clone()).unpack();
    let phases: Vec<f64> = (0..n).map(|i| wrap_phase(t[(i, i)].arg())).collect();
    let mut scaled = q.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= Complex64::new(phases[j], 0.0);
    }
    let g = scaled * q.adjoint();
    Ok((&g + g.adjoint()) * Complex64::new(0.5, 0.0))
}

fn wrap_phase(theta: f64) -> f64 {
    use std::f64::consts::PI;
    if theta <= -PI + BRANCH_TOL {
        PI
    } else {
        theta
    }
}

/// Minimum-norm least-squares solution of `A x = b` via SVD.
pub fn lstsq_min_norm(a: &RMat, b: &DVector<f64>) -> DVector<f64> {
    assert_eq!(a.nrows(), b.len(), "row count must match right-hand side");
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    if smax == 0.0 {
        return DVector::zeros(a.ncols());
    }
    let u = svd.u.as_ref().expect("requested U");
    let v_t = svd.v_t.as_ref().expect("requested V^T");
    let cutoff = LSTSQ_RCOND * smax;
    let mut x = DVector::zeros(a.ncols());
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff {
            let coef = u.column(i).dot(b) / s;
            x += v_t.row(i).transpose() * coef;
        }
    }
    x
}

/// Settings for [`golden_section_max`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSearch {
    /// Uniform probes used to bracket the best region before shrinking.
    pub scan_points: usize,
    /// Absolute interval width at which shrinking stops.
    pub tol: f64,
    pub max_shrinks: usize,
}

impl LineSearch {
    pub fn with_tol(tol: f64) -> Self {
        LineSearch { scan_points: 12, tol, max_shrinks: 100 }
    }
}

/// Maximises `f` on `[lo, hi]`: a uniform scan picks the best bracket, then
/// golden-section shrinks it. Returns the best probed `(x, f(x))`.
pub fn golden_section_max(f: impl FnMut(f64) -> f64, lo: f64, hi: f64, tol: f64) -> (f64, f64) {
    golden_section_max_with(f, lo, hi, LineSearch::with_tol(tol))
}

pub fn golden_section_max_with(
    mut f: impl FnMut(f64) -> f64,
    lo: f64,
    hi: f64,
    opts: LineSearch,
) -> (f64, f64) {
    assert!(lo < hi, "empty search interval");
    assert!(opts.tol > 0.0, "tolerance must be positive");
    let mut best = (f64::NAN, f64::NEG_INFINITY);
    let mut probe = |x: f64, best: &mut (f64, f64)| {
        let y = f(x);
        if y > best.1 || best.0.is_nan() {
            *best = (x, y);
        }
        y
    };

    let segments = opts.scan_points.max(2);
    let h = (hi - lo) / segments as f64;
    let mut grid_best = (0usize, f64::NEG_INFINITY);
    for i in 0..=segments {
        let y = probe(lo + h * i as f64, &mut best);
        if y > grid_best.1 {
            grid_best = (i, y);
        }
    }
    let mut a = lo + h * grid_best.0.saturating_sub(1) as f64;
    let mut b = (lo + h * (grid_best.0 + 1) as f64).min(hi);

    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = probe(c, &mut best);
    let mut fd = probe(d, &mut best);
    let mut shrinks = 0;
    while (b - a) > opts.tol && shrinks < opts.max_shrinks {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = probe(c, &mut best);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = probe(d, &mut best);
        }
        shrinks += 1;
    }
    best
}

/// Lower Cholesky factor of a symmetric positive-definite matrix.
pub fn cholesky(a: &RMat) -> Result<RMat> {
    assert!(a.is_square(), "Cholesky needs a square matrix");
    let n = a.nrows();
    let mut l = RMat::zeros(n, n);
    for j in 0..n {
        let mut diag = a[(j, j)];
        for k in 0..j {
            diag -= l[(j, k)] * l[(j, k)];
        }
        if !(diag > 0.0) || !diag.is_finite() {
            return Err(Error::NotPositiveDefinite { pivot: j });
        }
        let ljj = diag.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(l)
}

/// Solves `A x = b` for symmetric positive-definite `A`.
pub fn cholesky_solve(a: &RMat, b: &DVector<f64>) -> Result<DVector<f64>> {
    if a.nrows() != b.len() {
        return Err(Error::DimensionMismatch { expected: a.nrows(), got: b.len() });
    }
    let l = cholesky(a)?;
    let n = b.len();
    let mut y = b.clone();
    for i in 0..n {
        let mut s = y[i];
        for k in 0..i {
            s -= l[(i, k)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s -= l[(k, i)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    Ok(y)
}
