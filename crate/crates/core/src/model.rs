//! Piecewise-constant control problems.
//!
//! Each layer evolves under `exp(i H(phi_l))` with `H(phi_l) = H_drift +
//! sum_k phi_{l,k} G_k` and unit duration; the full evolution multiplies
//! layers right to left so layer 1 acts first.

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{expm_hermitian_generator, unitarity_deviation};
use crate::pauli::{assemble_hamiltonian, CMat, LieVector, Pauli, PauliBasis, PauliWord, RestrictionSet};

/// Version tag written as the first line of every CSV this crate emits.
pub const CSV_SCHEMA_VERSION: u32 = 1;

pub fn schema_line() -> String {
    format!("# schema_version={CSV_SCHEMA_VERSION}")
}

/// A gate-design problem: restricted controls plus a fixed drift per layer.
#[derive(Debug, Clone)]
pub struct ControlProblem {
    basis: Arc<PauliBasis>,
    restriction: RestrictionSet,
    drift: LieVector,
    target: CMat,
    epsilon: f64,
    drift_matrix: CMat,
    control_matrices: Vec<CMat>,
}

impl ControlProblem {
    pub fn new(
        basis: Arc<PauliBasis>,
        restriction: RestrictionSet,
        drift: LieVector,
        target: CMat,
        epsilon: f64,
    ) -> Result<Self> {
        if restriction.basis_len() != basis.len() {
            return Err(Error::DimensionMismatch { expected: basis.len(), got: restriction.basis_len() });
        }
        if drift.dim() != basis.len() {
            return Err(Error::DimensionMismatch { expected: basis.len(), got: drift.dim() });
        }
        if let Some((j, _)) = drift.iter().find(|&(j, _)| restriction.contains(j)) {
            return Err(Error::InvalidProblem(format!(
                "drift term {} overlaps the restriction",
                basis.word(j)
            )));
        }
        if target.shape() != (basis.dim(), basis.dim()) {
            return Err(Error::DimensionMismatch { expected: basis.dim(), got: target.nrows() });
        }
        let dev = unitarity_deviation(&target);
        if dev > 1e-10 {
            return Err(Error::NotUnitary(dev));
        }
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::InvalidProblem(format!("epsilon {epsilon} outside (0, 1)")));
        }
        let drift_matrix = assemble_hamiltonian(&drift, &basis)?;
        let control_matrices = restriction.indices().iter().map(|&j| basis.matrix(j)).collect();
        Ok(ControlProblem { basis, restriction, drift, target, epsilon, drift_matrix, control_matrices })
    }

    pub fn qubits(&self) -> usize {
        self.basis.qubits()
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    pub fn basis(&self) -> &PauliBasis {
        &self.basis
    }

    pub fn restriction(&self) -> &RestrictionSet {
        &self.restriction
    }

    /// Number of controls per layer, `K = |restriction|`.
    pub fn control_count(&self) -> usize {
        self.restriction.len()
    }

    pub fn drift(&self) -> &LieVector {
        &self.drift
    }

    pub fn target(&self) -> &CMat {
        &self.target
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn control_matrix(&self, k: usize) -> &CMat {
        &self.control_matrices[k]
    }

    /// Same problem with a different target unitary.
    pub fn with_target(&self, target: CMat) -> Result<Self> {
        ControlProblem::new(self.basis.clone(), self.restriction.clone(), self.drift.clone(), target, self.epsilon)
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        ControlProblem::new(self.basis.clone(), self.restriction.clone(), self.drift.clone(), self.target.clone(), epsilon)
    }

    /// Layer Hamiltonian `H_drift + sum_k phi_k G_k`.
    pub fn layer_hamiltonian(&self, phi: &[f64]) -> Result<CMat> {
        if phi.len() != self.control_count() {
            return Err(Error::DimensionMismatch { expected: self.control_count(), got: phi.len() });
        }
        let mut h = self.drift_matrix.clone();
        for (g, &x) in self.control_matrices.iter().zip(phi) {
            if x != 0.0 {
                h += g * Complex64::new(x, 0.0);
            }
        }
        Ok(h)
    }

    pub fn zero_sequence(&self, layers: usize) -> PulseSequence {
        PulseSequence::zeros(layers, self.control_count())
    }
}

/// Piecewise control amplitudes, `L x K`, stored layer-major.
///
/// The flat index `l * K + k` is the parameter ordering shared by gradients,
/// Hessians and linear solves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseSequence {
    layers: usize,
    controls: usize,
    values: Vec<f64>,
}

impl PulseSequence {
    pub fn zeros(layers: usize, controls: usize) -> Self {
        PulseSequence { layers, controls, values: vec![0.0; layers * controls] }
    }

    pub fn from_values(layers: usize, controls: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != layers * controls {
            return Err(Error::DimensionMismatch { expected: layers * controls, got: values.len() });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidProblem("non-finite control value".into()));
        }
        Ok(PulseSequence { layers, controls, values })
    }

    /// Entries drawn uniformly from `[-scale, scale]`.
    pub fn random_uniform(layers: usize, controls: usize, scale: f64, rng: &mut impl Rng) -> Self {
        let values = (0..layers * controls)
            .map(|_| if scale > 0.0 { rng.random_range(-scale..=scale) } else { 0.0 })
            .collect();
        PulseSequence { layers, controls, values }
    }

    pub fn layer_count(&self) -> usize {
        self.layers
    }

    pub fn control_count(&self) -> usize {
        self.controls
    }

    pub fn layer(&self, l: usize) -> &[f64] {
        &self.values[l * self.controls..(l + 1) * self.controls]
    }

    pub fn get(&self, l: usize, k: usize) -> f64 {
        self.values[l * self.controls + k]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `self + step * direction`.
    pub fn stepped(&self, direction: &[f64], step: f64) -> PulseSequence {
        assert_eq!(direction.len(), self.values.len(), "direction shape mismatch");
        let values = self.values.iter().zip(direction).map(|(v, d)| v + step * d).collect();
        PulseSequence { layers: self.layers, controls: self.controls, values }
    }

    /// Writes the pulse table: one row per `(layer, control)` with its Pauli word.
    ///
    /// Layers and control indices are 1-based.
    pub fn write_csv(&self, problem: &ControlProblem, mut out: impl Write) -> Result<()> {
        if self.controls != problem.control_count() {
            return Err(Error::DimensionMismatch { expected: problem.control_count(), got: self.controls });
        }
        writeln!(out, "{}", schema_line())?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["layer", "control_index", "pauli_word", "value"])?;
        let words = problem.restriction().words(problem.basis());
        for l in 0..self.layers {
            for (k, word) in words.iter().enumerate() {
                w.write_record([
                    (l + 1).to_string(),
                    (k + 1).to_string(),
                    word.to_string(),
                    format!("{:.17e}", self.get(l, k)),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn check_controls(problem: &ControlProblem, phi: &PulseSequence) -> Result<()> {
    if phi.control_count() != problem.control_count() {
        return Err(Error::DimensionMismatch { expected: problem.control_count(), got: phi.control_count() });
    }
    Ok(())
}

/// `U(phi_l) = exp(i (H_drift + sum_k phi_{l,k} G_k))`.
pub fn layer_unitary(problem: &ControlProblem, phi_l: &[f64]) -> Result<CMat> {
    expm_hermitian_generator(&problem.layer_hamiltonian(phi_l)?)
}

/// All layer unitaries in layer order.
pub fn layer_unitaries(problem: &ControlProblem, phi: &PulseSequence) -> Result<Vec<CMat>> {
    check_controls(problem, phi)?;
    (0..phi.layer_count()).map(|l| layer_unitary(problem, phi.layer(l))).collect()
}

/// `U_G = U(phi_L) ... U(phi_1)`.
pub fn evolve(problem: &ControlProblem, phi: &PulseSequence) -> Result<CMat> {
    let dim = problem.dim();
    Ok(layer_unitaries(problem, phi)?
        .iter()
        .fold(CMat::identity(dim, dim), |acc, u| u * acc))
}

/// `Tr(U^dagger V)`.
pub fn overlap(u: &CMat, v: &CMat) -> Complex64 {
    u.iter().zip(v.iter()).map(|(a, b)| a.conj() * b).sum()
}

/// Phase-invariant gate fidelity `|Tr(U^dagger V)| / N`.
pub fn gate_fidelity(u: &CMat, v: &CMat) -> f64 {
    (overlap(u, v).norm() / u.nrows() as f64).min(1.0)
}

pub fn fidelity(problem: &ControlProblem, phi: &PulseSequence) -> Result<f64> {
    Ok(gate_fidelity(&evolve(problem, phi)?, problem.target()))
}

pub fn infidelity(problem: &ControlProblem, phi: &PulseSequence) -> Result<f64> {
    Ok(1.0 - fidelity(problem, phi)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum GateName {
    Toffoli,
    Ccz,
    Qft,
}

impl FromStr for GateName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "toffoli" | "ccx" => Ok(GateName::Toffoli),
            "ccz" => Ok(GateName::Ccz),
            "qft" => Ok(GateName::Qft),
            other => match other.strip_prefix("qft-").or_else(|| other.strip_prefix("qft")) {
                Some(rest) if rest.parse::<usize>().is_ok() => Ok(GateName::Qft),
                _ => Err(Error::UnknownGate(s.to_string())),
            },
        }
    }
}

impl TryFrom<String> for GateName {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<GateName> for String {
    fn from(g: GateName) -> String {
        g.to_string()
    }
}

impl fmt::Display for GateName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GateName::Toffoli => "toffoli",
            GateName::Ccz => "ccz",
            GateName::Qft => "qft",
        })
    }
}

/// A named target unitary.
#[derive(Debug, Clone)]
pub struct GateTarget {
    pub name: GateName,
    pub matrix: CMat,
}

impl GateTarget {
    pub fn new(name: GateName, n: usize) -> Result<Self> {
        Ok(GateTarget { name, matrix: gate_matrix(name, n)? })
    }

    pub fn qubits(&self) -> usize {
        self.matrix.nrows().trailing_zeros() as usize
    }
}

pub fn gate_matrix(name: GateName, n: usize) -> Result<CMat> {
    let one = Complex64::new(1.0, 0.0);
    match name {
        GateName::Toffoli | GateName::Ccz if n != 3 => {
            Err(Error::InvalidProblem(format!("{name} is a 3-qubit gate, got n = {n}")))
        }
        GateName::Toffoli => {
            let mut m = CMat::identity(8, 8);
            m[(6, 6)] = Complex64::new(0.0, 0.0);
            m[(7, 7)] = Complex64::new(0.0, 0.0);
            m[(6, 7)] = one;
            m[(7, 6)] = one;
            Ok(m)
        }
        GateName::Ccz => {
            let mut m = CMat::identity(8, 8);
            m[(7, 7)] = -one;
            Ok(m)
        }
        GateName::Qft => {
            if !(1..=8).contains(&n) {
                return Err(Error::InvalidProblem(format!("QFT supports 1..=8 qubits, got {n}")));
            }
            let dim = 1usize << n;
            let norm = 1.0 / (dim as f64).sqrt();
            Ok(CMat::from_fn(dim, dim, |j, k| {
                let angle = 2.0 * PI * ((j * k) % dim) as f64 / dim as f64;
                Complex64::from_polar(norm, angle)
            }))
        }
    }
}

/// Interaction graph of a 2-D Rydberg array: `(i, j, relative weight)`.
pub fn rydberg_couplings(n: usize) -> Result<Vec<(usize, usize, f64)>> {
    let edges = match n {
        // Equilateral triangle.
        3 => vec![(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0)],
        // Square 0-1-2-3, diagonals at distance sqrt(2).
        4 => vec![(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0), (0, 3, 1.0), (0, 2, 0.125), (1, 3, 0.125)],
        // Atom 0 at the centre of the square 1-2-3-4.
        5 => vec![
            (0, 1, 1.0),
            (0, 2, 1.0),
            (0, 3, 1.0),
            (0, 4, 1.0),
            (1, 2, 0.125),
            (2, 3, 0.125),
            (3, 4, 0.125),
            (1, 4, 0.125),
        ],
        // 2 x 3 rectangle:  0 1 2 / 3 4 5.
        6 => vec![
            (0, 1, 1.0),
            (1, 2, 1.0),
            (3, 4, 1.0),
            (4, 5, 1.0),
            (0, 3, 1.0),
            (1, 4, 1.0),
            (2, 5, 1.0),
            (0, 4, 0.125),
            (1, 3, 0.125),
            (1, 5, 0.125),
            (2, 4, 0.125),
            (0, 5, 1.0 / 125.0),
            (2, 3, 1.0 / 125.0),
        ],
        other => return Err(Error::UnsupportedLattice(other)),
    };
    Ok(edges)
}

/// Rydberg-array problem: fixed `J0 * w_ij Z_i Z_j` drift with `X_i`, `Z_i` controls.
pub fn rydberg_problem(n: usize, coupling_scale: f64, target: &GateTarget, epsilon: f64) -> Result<ControlProblem> {
    let couplings = rydberg_couplings(n)?;
    if target.qubits() != n {
        return Err(Error::DimensionMismatch { expected: 1 << n, got: target.matrix.nrows() });
    }
    let basis = Arc::new(PauliBasis::new(n));
    let drift_entries = couplings
        .iter()
        .map(|&(i, j, w)| {
            let word = PauliWord::with_ops(n, &[(i, Pauli::Z), (j, Pauli::Z)])?;
            Ok((basis.index_of(&word)?, coupling_scale * w))
        })
        .collect::<Result<Vec<_>>>()?;
    let drift = LieVector::from_entries(basis.len(), drift_entries);
    let controls = (0..n)
        .flat_map(|q| [Pauli::X, Pauli::Z].map(|p| PauliWord::with_ops(n, &[(q, p)])))
        .collect::<Result<Vec<_>>>()?;
    let restriction = RestrictionSet::from_words(&basis, &controls)?;
    ControlProblem::new(basis, restriction, drift, target.matrix.clone(), epsilon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::expm_general;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn single_qubit(restriction: &[&str], target: CMat) -> ControlProblem {
        let basis = Arc::new(PauliBasis::new(1));
        let r = RestrictionSet::parse(&basis, restriction).unwrap();
        ControlProblem::new(basis, r, LieVector::zeros(3), target, 1e-9).unwrap()
    }

    fn toffoli_problem() -> ControlProblem {
        rydberg_problem(3, 1.0, &GateTarget::new(GateName::Toffoli, 3).unwrap(), 1e-9).unwrap()
    }

    #[test]
    fn zero_layer_is_identity() {
        let p = single_qubit(&["X"], CMat::identity(2, 2));
        assert!((layer_unitary(&p, &[0.0]).unwrap() - CMat::identity(2, 2)).norm() < 1e-15);
    }

    #[test]
    fn x_rotation_by_half_pi_is_ix() {
        let p = single_qubit(&["X"], CMat::identity(2, 2));
        let u = layer_unitary(&p, &[PI / 2.0]).unwrap();
        let ix = CMat::from_row_slice(2, 2, &[c(0.0, 0.0), c(0.0, 1.0), c(0.0, 1.0), c(0.0, 0.0)]);
        assert!((u - ix).norm() < 1e-15);
    }

    #[test]
    fn rydberg_layer_matches_block_free_exponential() {
        let p = toffoli_problem();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let phi = PulseSequence::random_uniform(1, 6, 1.0, &mut rng);
        let u = layer_unitary(&p, phi.layer(0)).unwrap();
        let h = p.layer_hamiltonian(phi.layer(0)).unwrap();
        let oracle = expm_general(&(h * c(0.0, 1.0))).unwrap();
        assert!((u - oracle).norm() < 1e-10);
    }

    #[test]
    fn layer_unitary_rejects_wrong_width() {
        let p = toffoli_problem();
        assert!(matches!(layer_unitary(&p, &[0.0; 5]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn evolve_orders_layers_right_to_left() {
        let p = toffoli_problem();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let one = PulseSequence::random_uniform(1, 6, 1.0, &mut rng);
        assert!((evolve(&p, &one).unwrap() - layer_unitary(&p, one.layer(0)).unwrap()).norm() < 1e-14);

        let phi = PulseSequence::random_uniform(3, 6, 1.0, &mut rng);
        let u: Vec<CMat> = (0..3).map(|l| layer_unitary(&p, phi.layer(l)).unwrap()).collect();
        let oracle = &u[2] * &u[1] * &u[0];
        assert!((evolve(&p, &phi).unwrap() - oracle).norm() < 1e-12);

        let free = single_qubit(&["X", "Z"], CMat::identity(2, 2));
        assert!((evolve(&free, &free.zero_sequence(4)).unwrap() - CMat::identity(2, 2)).norm() < 1e-15);
    }

    #[test]
    fn evolution_stays_unitary() {
        let p = toffoli_problem();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let phi = PulseSequence::random_uniform(20, 6, 2.0, &mut rng);
            assert!(unitarity_deviation(&evolve(&p, &phi).unwrap()) < 1e-9);
        }
    }

    #[test]
    fn fidelity_cases() {
        let x = gate_matrix(GateName::Qft, 1).unwrap();
        let p = single_qubit(&["X"], x.clone());
        let v = p.target().clone();
        assert!((gate_fidelity(&v, &v) - 1.0).abs() < 1e-15);
        let phased = &v * Complex64::from_polar(1.0, PI / 7.0);
        assert!((gate_fidelity(&phased, &v) - 1.0).abs() < 1e-12);
        let pauli_x = CMat::from_row_slice(2, 2, &[c(0.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)]);
        assert!(gate_fidelity(&CMat::identity(2, 2), &pauli_x).abs() < 1e-15);
    }

    #[test]
    fn fidelity_phase_invariance_both_arguments() {
        let p = toffoli_problem();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let u = evolve(&p, &PulseSequence::random_uniform(5, 6, 1.0, &mut rng)).unwrap();
        let v = p.target();
        let base = gate_fidelity(&u, v);
        let a = Complex64::from_polar(1.0, 0.37);
        let b = Complex64::from_polar(1.0, -2.1);
        assert!((gate_fidelity(&(&u * a), v) - base).abs() < 1e-12);
        assert!((gate_fidelity(&u, &(v * b)) - base).abs() < 1e-12);
    }

    #[test]
    fn rydberg_three_atoms() {
        let p = toffoli_problem();
        assert_eq!(p.control_count(), 6);
        let drift: Vec<(String, f64)> = p.drift().iter().map(|(j, w)| (p.basis().word(j).to_string(), w)).collect();
        assert_eq!(drift.len(), 3);
        assert!(drift.iter().all(|(_, w)| *w == 1.0));
        let words: Vec<&str> = drift.iter().map(|(w, _)| w.as_str()).collect();
        assert_eq!(words, ["IZZ", "ZIZ", "ZZI"]);
    }

    #[test]
    fn rydberg_four_and_six_atoms() {
        let t4 = GateTarget::new(GateName::Qft, 4).unwrap();
        let p4 = rydberg_problem(4, 2.0, &t4, 1e-9).unwrap();
        assert_eq!(p4.control_count(), 8);
        let mut weights: Vec<f64> = p4.drift().iter().map(|(_, w)| w).collect();
        weights.sort_by(f64::total_cmp);
        assert_eq!(weights, [0.25, 0.25, 2.0, 2.0, 2.0, 2.0]);

        let t6 = GateTarget::new(GateName::Qft, 6).unwrap();
        let p6 = rydberg_problem(6, 1.0, &t6, 1e-9).unwrap();
        assert_eq!(p6.control_count(), 12);
        assert!(p6.drift().iter().any(|(_, w)| (w - 1.0 / 125.0).abs() < 1e-15));
    }

    #[test]
    fn rydberg_drift_and_restriction_disjoint() {
        for n in 3..=6 {
            let t = GateTarget::new(GateName::Qft, n).unwrap();
            let p = rydberg_problem(n, 1.0, &t, 1e-9).unwrap();
            assert!(p.drift().iter().all(|(j, _)| !p.restriction().contains(j)));
            assert_eq!(p.control_count(), 2 * n);
        }
        let t = GateTarget::new(GateName::Qft, 2).unwrap();
        assert!(matches!(rydberg_problem(2, 1.0, &t, 1e-9), Err(Error::UnsupportedLattice(2))));
    }

    #[test]
    fn gate_library() {
        let ccz = gate_matrix(GateName::Ccz, 3).unwrap();
        for i in 0..8 {
            let expected = if i == 7 { -1.0 } else { 1.0 };
            assert_eq!(ccz[(i, i)], c(expected, 0.0));
        }
        assert_eq!(ccz.iter().filter(|z| z.norm() != 0.0).count(), 8);
        let tof = gate_matrix(GateName::Toffoli, 3).unwrap();
        assert_eq!(&tof * &tof, CMat::identity(8, 8));
        let qft2 = gate_matrix(GateName::Qft, 2).unwrap();
        assert!(qft2.iter().all(|z| (z.norm() - 0.5).abs() < 1e-15));
        assert!(unitarity_deviation(&gate_matrix(GateName::Qft, 3).unwrap()) < 1e-14);
        assert!(gate_matrix(GateName::Toffoli, 4).is_err());
        assert!("swap".parse::<GateName>().is_err());
        assert_eq!("QFT-3".parse::<GateName>().unwrap(), GateName::Qft);
    }

    #[test]
    fn problem_validation() {
        let basis = Arc::new(PauliBasis::new(1));
        let r = RestrictionSet::parse(&basis, &["X"]).unwrap();
        let x_drift = LieVector::from_entries(3, [(0, 1.0)]);
        let eye = CMat::identity(2, 2);
        assert!(ControlProblem::new(basis.clone(), r.clone(), x_drift, eye.clone(), 1e-9).is_err());
        assert!(ControlProblem::new(basis.clone(), r.clone(), LieVector::zeros(3), eye.clone() * c(2.0, 0.0), 1e-9).is_err());
        assert!(ControlProblem::new(basis, r, LieVector::zeros(3), eye, 1.5).is_err());
    }

    #[test]
    fn pulse_csv_layout() {
        let p = toffoli_problem();
        let phi = PulseSequence::from_values(2, 6, (0..12).map(|v| v as f64).collect()).unwrap();
        let mut buf = Vec::new();
        phi.write_csv(&p, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# schema_version=1");
        assert_eq!(lines[1], "layer,control_index,pauli_word,value");
        assert_eq!(lines.len(), 2 + 12);
        assert!(lines[2].starts_with("1,1,IIX,"));
        assert!(lines[13].starts_with("2,6,ZII,"));
    }
}
