//! Pauli-word basis of su(2^n).
//!
//! Words are ordered lexicographically with `I < X < Y < Z`, the leftmost
//! symbol being most significant, and the all-identity word is left out. A
//! word's basis position is therefore its base-4 value minus one.
//!
//! Every Pauli word is a monomial matrix (one nonzero per column), so traces
//! against it and Hamiltonian assembly run in `O(N)` per word instead of
//! materialising `N x N` Kronecker products.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMat = DMatrix<Complex64>;

#[cfg(test)]
const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

/// Fraction of the basis below which a [`LieVector`] is stored sparsely.
pub const SPARSE_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

impl Pauli {
    pub const ALL: [Pauli; 4] = [Pauli::I, Pauli::X, Pauli::Y, Pauli::Z];

    fn digit(self) -> usize {
        self as usize
    }

    fn from_digit(d: usize) -> Pauli {
        Pauli::ALL[d]
    }

    fn flips(self) -> bool {
        matches!(self, Pauli::X | Pauli::Y)
    }

    /// Matrix element `<bit ^ flip| P |bit>`.
    fn phase(self, bit: bool) -> Complex64 {
        match (self, bit) {
            (Pauli::I, _) | (Pauli::X, _) | (Pauli::Z, false) => ONE,
            (Pauli::Z, true) => -ONE,
            (Pauli::Y, false) => I,
            (Pauli::Y, true) => -I,
        }
    }

    pub fn symbol(self) -> char {
        match self {
            Pauli::I => 'I',
            Pauli::X => 'X',
            Pauli::Y => 'Y',
            Pauli::Z => 'Z',
        }
    }
}

/// Tensor product of single-qubit Paulis; qubit 0 is the leftmost factor.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PauliWord(Vec<Pauli>);

impl PauliWord {
    pub fn new(symbols: Vec<Pauli>) -> Result<Self> {
        if symbols.is_empty() {
            return Err(Error::InvalidPauliWord(String::new()));
        }
        Ok(PauliWord(symbols))
    }

    /// Word acting as `p` on each listed qubit and identity elsewhere.
    pub fn with_ops(n: usize, ops: &[(usize, Pauli)]) -> Result<Self> {
        let mut symbols = vec![Pauli::I; n];
        for &(q, p) in ops {
            if q >= n {
                return Err(Error::InvalidPauliWord(format!("qubit {q} out of range for n = {n}")));
            }
            symbols[q] = p;
        }
        PauliWord::new(symbols)
    }

    pub fn symbols(&self) -> &[Pauli] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_identity(&self) -> bool {
        self.0.iter().all(|&p| p == Pauli::I)
    }

    /// Base-4 value of the word, leftmost symbol most significant.
    fn value(&self) -> usize {
        self.0.iter().fold(0, |acc, p| acc * 4 + p.digit())
    }

    fn from_value(n: usize, mut value: usize) -> Self {
        let mut symbols = vec![Pauli::I; n];
        for slot in symbols.iter_mut().rev() {
            *slot = Pauli::from_digit(value % 4);
            value /= 4;
        }
        PauliWord(symbols)
    }

    fn monomial(&self) -> Monomial {
        let n = self.len();
        let mut flip = 0usize;
        for (q, p) in self.0.iter().enumerate() {
            if p.flips() {
                flip |= 1 << (n - 1 - q);
            }
        }
        let dim = 1usize << n;
        let phases = (0..dim)
            .map(|col| {
                self.0
                    .iter()
                    .enumerate()
                    .fold(ONE, |acc, (q, p)| acc * p.phase(col >> (n - 1 - q) & 1 == 1))
            })
            .collect();
        Monomial { flip, phases }
    }
}

impl fmt::Display for PauliWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in &self.0 {
            write!(f, "{}", p.symbol())?;
        }
        Ok(())
    }
}

impl FromStr for PauliWord {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let symbols = s
            .trim()
            .chars()
            .map(|c| match c.to_ascii_uppercase() {
                'I' => Ok(Pauli::I),
                'X' => Ok(Pauli::X),
                'Y' => Ok(Pauli::Y),
                'Z' => Ok(Pauli::Z),
                _ => Err(Error::InvalidPauliWord(s.to_string())),
            })
            .collect::<Result<Vec<_>>>()?;
        PauliWord::new(symbols).map_err(|_| Error::InvalidPauliWord(s.to_string()))
    }
}

/// Column `c` of the word has its single nonzero `phases[c]` at row `c ^ flip`.
#[derive(Debug, Clone)]
struct Monomial {
    flip: usize,
    phases: Vec<Complex64>,
}

/// Dense matrix of a Pauli word (Kronecker product of its factors).
pub fn word_matrix(word: &PauliWord) -> CMat {
    let dim = 1usize << word.len();
    let mono = word.monomial();
    let mut m = CMat::zeros(dim, dim);
    for col in 0..dim {
        m[(col ^ mono.flip, col)] = mono.phases[col];
    }
    m
}

/// All `4^n - 1` non-identity Pauli words of length `n`, lexicographically ordered.
#[derive(Debug, Clone)]
pub struct PauliBasis {
    n: usize,
    monomials: Vec<Monomial>,
}

impl PauliBasis {
    pub fn new(n: usize) -> Self {
        assert!((1..=8).contains(&n), "Pauli basis supports 1..=8 qubits");
        let size = (1usize << (2 * n)) - 1;
        let monomials = (1..=size)
            .map(|v| PauliWord::from_value(n, v).monomial())
            .collect();
        PauliBasis { n, monomials }
    }

    pub fn qubits(&self) -> usize {
        self.n
    }

    /// Hilbert-space dimension `N = 2^n`.
    pub fn dim(&self) -> usize {
        1 << self.n
    }

    /// Number of basis words, `4^n - 1`.
    pub fn len(&self) -> usize {
        self.monomials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.monomials.is_empty()
    }

    pub fn word(&self, index: usize) -> PauliWord {
        PauliWord::from_value(self.n, index + 1)
    }

    pub fn words(&self) -> impl Iterator<Item = PauliWord> + '_ {
        (0..self.len()).map(|j| self.word(j))
    }

    pub fn index_of(&self, word: &PauliWord) -> Result<usize> {
        if word.len() != self.n {
            return Err(Error::InvalidPauliWord(format!(
                "{word} has length {}, basis has {} qubits",
                word.len(),
                self.n
            )));
        }
        if word.is_identity() {
            return Err(Error::InvalidPauliWord(format!("{word} is the identity")));
        }
        Ok(word.value() - 1)
    }

    pub fn matrix(&self, index: usize) -> CMat {
        word_matrix(&self.word(index))
    }

    /// `Tr(G_j M)` without normalisation.
    pub fn trace_with(&self, index: usize, m: &CMat) -> Complex64 {
        let mono = &self.monomials[index];
        (0..self.dim())
            .map(|col| mono.phases[col] * m[(col, col ^ mono.flip)])
            .sum()
    }

    /// Adds `coeff * G_j` into `target`.
    pub fn add_scaled(&self, index: usize, coeff: Complex64, target: &mut CMat) {
        let mono = &self.monomials[index];
        for col in 0..self.dim() {
            target[(col ^ mono.flip, col)] += coeff * mono.phases[col];
        }
    }
}

/// Real coefficient vector over the Pauli basis.
#[derive(Debug, Clone, PartialEq)]
pub struct LieVector {
    dim: usize,
    repr: Repr,
}

#[derive(Debug, Clone, PartialEq)]
enum Repr {
    Dense(Vec<f64>),
    Sparse(BTreeMap<usize, f64>),
}

impl LieVector {
    pub fn zeros(dim: usize) -> Self {
        LieVector { dim, repr: Repr::Sparse(BTreeMap::new()) }
    }

    /// Builds a vector from dense coefficients, picking the storage by support size.
    pub fn from_dense(coeffs: Vec<f64>) -> Self {
        let dim = coeffs.len();
        let entries = coeffs.iter().enumerate().filter(|(_, &v)| v != 0.0).map(|(j, &v)| (j, v));
        Self::from_entries(dim, entries)
    }

    pub fn from_entries(dim: usize, entries: impl IntoIterator<Item = (usize, f64)>) -> Self {
        let mut map = BTreeMap::new();
        for (j, v) in entries {
            assert!(j < dim, "coefficient index {j} out of range {dim}");
            assert!(v.is_finite(), "non-finite Lie coefficient");
            if v != 0.0 {
                *map.entry(j).or_insert(0.0) += v;
            }
        }
        let mut out = LieVector { dim, repr: Repr::Sparse(map) };
        out.normalise_storage();
        out
    }

    fn normalise_storage(&mut self) {
        let sparse = (self.support_len() as f64) < SPARSE_FRACTION * self.dim as f64;
        self.repr = match (&self.repr, sparse) {
            (Repr::Dense(v), true) => Repr::Sparse(
                v.iter().enumerate().filter(|(_, &x)| x != 0.0).map(|(j, &x)| (j, x)).collect(),
            ),
            (Repr::Sparse(m), false) => {
                let mut v = vec![0.0; self.dim];
                for (&j, &x) in m {
                    v[j] = x;
                }
                Repr::Dense(v)
            }
            (r, _) => r.clone(),
        };
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_sparse(&self) -> bool {
        matches!(self.repr, Repr::Sparse(_))
    }

    pub fn get(&self, j: usize) -> f64 {
        match &self.repr {
            Repr::Dense(v) => v[j],
            Repr::Sparse(m) => m.get(&j).copied().unwrap_or(0.0),
        }
    }

    /// Nonzero entries in ascending index order.
    pub fn iter(&self) -> Box<dyn Iterator<Item = (usize, f64)> + '_> {
        match &self.repr {
            Repr::Dense(v) => {
                Box::new(v.iter().copied().enumerate().filter(|&(_, x)| x != 0.0))
            }
            Repr::Sparse(m) => Box::new(m.iter().map(|(&j, &x)| (j, x))),
        }
    }

    pub fn support_len(&self) -> usize {
        self.iter().count()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for (j, x) in self.iter() {
            v[j] = x;
        }
        v
    }

    pub fn norm(&self) -> f64 {
        self.iter().map(|(_, x)| x * x).sum::<f64>().sqrt()
    }

    pub fn add(&self, other: &LieVector) -> LieVector {
        assert_eq!(self.dim, other.dim);
        LieVector::from_entries(self.dim, self.iter().chain(other.iter()))
    }

    pub fn scale(&self, factor: f64) -> LieVector {
        LieVector::from_entries(self.dim, self.iter().map(|(j, x)| (j, factor * x)))
    }
}

/// Controllable basis positions, kept in ascending basis order.
///
/// The position of an index within the set is the control index `k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RestrictionSet {
    indices: Vec<usize>,
    basis_len: usize,
}

impl RestrictionSet {
    pub fn new(indices: impl IntoIterator<Item = usize>, basis_len: usize) -> Result<Self> {
        let mut indices: Vec<usize> = indices.into_iter().collect();
        indices.sort_unstable();
        indices.dedup();
        if indices.is_empty() {
            return Err(Error::InvalidRestriction("empty restriction set".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&j| j >= basis_len) {
            return Err(Error::InvalidRestriction(format!("index {bad} outside basis of {basis_len}")));
        }
        Ok(RestrictionSet { indices, basis_len })
    }

    pub fn from_words(basis: &PauliBasis, words: &[PauliWord]) -> Result<Self> {
        let indices = words.iter().map(|w| basis.index_of(w)).collect::<Result<Vec<_>>>()?;
        RestrictionSet::new(indices, basis.len())
    }

    /// Parses the serialised form, a list of word strings such as `["XII", "ZII"]`.
    pub fn parse(basis: &PauliBasis, words: &[impl AsRef<str>]) -> Result<Self> {
        let words = words.iter().map(|s| s.as_ref().parse()).collect::<Result<Vec<PauliWord>>>()?;
        RestrictionSet::from_words(basis, &words)
    }

    pub fn full(basis_len: usize) -> Self {
        RestrictionSet { indices: (0..basis_len).collect(), basis_len }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn basis_len(&self) -> usize {
        self.basis_len
    }

    pub fn contains(&self, j: usize) -> bool {
        self.indices.binary_search(&j).is_ok()
    }

    pub fn words(&self, basis: &PauliBasis) -> Vec<PauliWord> {
        self.indices.iter().map(|&j| basis.word(j)).collect()
    }

    /// Scatters `K` control values onto their basis positions.
    pub fn embed(&self, controls: &[f64]) -> LieVector {
        assert_eq!(controls.len(), self.len(), "control count must match restriction");
        LieVector::from_entries(self.basis_len, self.indices.iter().copied().zip(controls.iter().copied()))
    }
}

/// `H(theta) = sum_j theta_j G_j`.
pub fn assemble_hamiltonian(theta: &LieVector, basis: &PauliBasis) -> Result<CMat> {
    if theta.dim() != basis.len() {
        return Err(Error::DimensionMismatch { expected: basis.len(), got: theta.dim() });
    }
    let dim = basis.dim();
    let mut h = CMat::zeros(dim, dim);
    for (j, x) in theta.iter() {
        basis.add_scaled(j, Complex64::new(x, 0.0), &mut h);
    }
    Ok(h)
}

/// Complex coefficients `c_j = Tr(G_j M) / N`; the identity component of `M` is dropped.
pub fn vectorize_tangent(m: &CMat, basis: &PauliBasis) -> Vec<Complex64> {
    assert_eq!(m.shape(), (basis.dim(), basis.dim()), "matrix must be N x N");
    let scale = 1.0 / basis.dim() as f64;
    (0..basis.len()).map(|j| basis.trace_with(j, m) * scale).collect()
}

/// Zeroes every coefficient outside the restriction.
pub fn restrict(theta: &LieVector, r: &RestrictionSet) -> LieVector {
    assert_eq!(theta.dim(), r.basis_len(), "restriction and vector disagree on basis size");
    LieVector::from_entries(theta.dim(), theta.iter().filter(|&(j, _)| r.contains(j)))
}
