use nalgebra::DMatrix;
use num_complex::Complex64 as C64;

use super::gate::{Gate, GateKind};
use super::kernels::{self, Mat2, ONE, ZERO};
use crate::error::{Error, Result};

const NORM_TOL: f64 = 1e-10;

/// A normalized state vector over `n_qubits` qubits.
#[derive(Debug, Clone, PartialEq)]
pub struct PureState {
    n_qubits: usize,
    amps: Vec<C64>,
}

impl PureState {
    /// `|0...0>`.
    pub fn zero(n_qubits: usize) -> Self {
        let mut amps = vec![ZERO; 1 << n_qubits];
        amps[0] = ONE;
        Self { n_qubits, amps }
    }

    pub fn basis(n_qubits: usize, index: usize) -> Result<Self> {
        if index >= 1 << n_qubits {
            return Err(Error::DimensionMismatch(format!(
                "basis index {index} for {n_qubits} qubits"
            )));
        }
        let mut amps = vec![ZERO; 1 << n_qubits];
        amps[index] = ONE;
        Ok(Self { n_qubits, amps })
    }

    /// Validates length (a power of two) and unit norm.
    pub fn from_amplitudes(amps: Vec<C64>) -> Result<Self> {
        let n_qubits = n_qubits_for_len(amps.len())?;
        let norm: f64 = amps.iter().map(|a| a.norm_sqr()).sum();
        if (norm - 1.0).abs() > NORM_TOL {
            return Err(Error::InvalidState(format!(
                "squared norm {norm} differs from 1"
            )));
        }
        Ok(Self { n_qubits, amps })
    }

    pub fn from_real(values: &[f64]) -> Result<Self> {
        Self::from_amplitudes(values.iter().map(|&v| C64::new(v, 0.0)).collect())
    }

    pub(crate) fn from_raw(n_qubits: usize, amps: Vec<C64>) -> Self {
        debug_assert_eq!(amps.len(), 1 << n_qubits);
        Self { n_qubits, amps }
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amps
    }

    pub fn into_amplitudes(self) -> Vec<C64> {
        self.amps
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    /// Returns the state after `gate`.
    pub fn apply_gate(&self, gate: &Gate) -> Result<PureState> {
        gate.validate(self.n_qubits)?;
        let mut out = self.clone();
        out.apply_gate_unchecked(gate);
        Ok(out)
    }

    pub(crate) fn apply_gate_unchecked(&mut self, gate: &Gate) {
        let n = self.n_qubits;
        let tmask = kernels::qubit_mask(n, gate.target);
        match gate.kind {
            GateKind::Cnot => {
                let cmask = kernels::qubit_mask(n, gate.control.expect("validated"));
                kernels::apply_cnot(&mut self.amps, cmask, tmask);
            }
            GateKind::Rz => {
                let m = kernels::rz(gate.angle);
                kernels::apply_diag(&mut self.amps, tmask, m[0][0], m[1][1]);
            }
            _ => {
                let m = gate.matrix().expect("rotation");
                kernels::apply_1q(&mut self.amps, tmask, &m);
            }
        }
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.amps.iter().map(|a| a.norm_sqr()).collect()
    }

    /// `<Z>` on `qubit`.
    pub fn expectation_z(&self, qubit: usize) -> Result<f64> {
        check_qubit(qubit, self.n_qubits)?;
        let mask = kernels::qubit_mask(self.n_qubits, qubit);
        Ok(z_expectation_from_probs(
            self.amps.iter().map(|a| a.norm_sqr()),
            mask,
        ))
    }

    /// `<self|other>`.
    pub fn inner(&self, other: &PureState) -> Result<C64> {
        if self.n_qubits != other.n_qubits {
            return Err(Error::DimensionMismatch(format!(
                "{} vs {} qubits",
                self.n_qubits, other.n_qubits
            )));
        }
        Ok(self
            .amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| a.conj() * b)
            .sum())
    }
}

/// `|<a|b>|^2`.
pub fn state_fidelity(a: &PureState, b: &PureState) -> Result<f64> {
    Ok(a.inner(b)?.norm_sqr().clamp(0.0, 1.0))
}

/// A `2^n x 2^n` density matrix, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedState {
    n_qubits: usize,
    rho: Vec<C64>,
}

impl MixedState {
    pub fn from_pure(state: &PureState) -> Self {
        let amps = state.amplitudes();
        let dim = amps.len();
        let mut rho = vec![ZERO; dim * dim];
        for (i, a) in amps.iter().enumerate() {
            for (j, b) in amps.iter().enumerate() {
                rho[i * dim + j] = a * b.conj();
            }
        }
        Self {
            n_qubits: state.n_qubits(),
            rho,
        }
    }

    pub fn zero(n_qubits: usize) -> Self {
        Self::from_pure(&PureState::zero(n_qubits))
    }

    /// `I / 2^n`.
    pub fn maximally_mixed(n_qubits: usize) -> Self {
        let dim = 1usize << n_qubits;
        let mut rho = vec![ZERO; dim * dim];
        for i in 0..dim {
            rho[i * dim + i] = C64::new(1.0 / dim as f64, 0.0);
        }
        Self { n_qubits, rho }
    }

    /// Builds a state from a row-major matrix, checking it is Hermitian,
    /// unit-trace and positive semidefinite.
    pub fn from_matrix(rho: Vec<C64>) -> Result<Self> {
        let dim = (rho.len() as f64).sqrt().round() as usize;
        if dim * dim != rho.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} entries is not a square matrix",
                rho.len()
            )));
        }
        let n_qubits = n_qubits_for_len(dim)?;
        let state = Self { n_qubits, rho };
        state.check_physical(1e-10, 1e-9)?;
        Ok(state)
    }

    pub(crate) fn from_raw(n_qubits: usize, rho: Vec<C64>) -> Self {
        debug_assert_eq!(rho.len(), 1 << (2 * n_qubits));
        Self { n_qubits, rho }
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn dim(&self) -> usize {
        1 << self.n_qubits
    }

    /// Row-major entries.
    pub fn matrix(&self) -> &[C64] {
        &self.rho
    }

    pub(crate) fn matrix_mut(&mut self) -> &mut [C64] {
        &mut self.rho
    }

    pub fn entry(&self, row: usize, col: usize) -> C64 {
        self.rho[row * self.dim() + col]
    }

    pub fn trace(&self) -> C64 {
        let dim = self.dim();
        (0..dim).map(|i| self.rho[i * dim + i]).sum()
    }

    /// `Tr(rho^2)`.
    pub fn purity(&self) -> f64 {
        // Tr(rho rho) = sum_ij rho_ij rho_ji = sum_ij |rho_ij|^2 for Hermitian rho
        self.rho.iter().map(|x| x.norm_sqr()).sum()
    }

    /// Verifies the density-matrix invariants: Hermitian and unit trace within
    /// `tol`, smallest eigenvalue at least `-psd_tol`.
    pub fn check_physical(&self, tol: f64, psd_tol: f64) -> Result<()> {
        let dim = self.dim();
        for i in 0..dim {
            for j in i..dim {
                let d = (self.rho[i * dim + j] - self.rho[j * dim + i].conj()).norm();
                if d > tol {
                    return Err(Error::InvalidState(format!(
                        "not Hermitian at ({i}, {j}): deviation {d}"
                    )));
                }
            }
        }
        let tr = self.trace();
        if (tr.re - 1.0).abs() > tol || tr.im.abs() > tol {
            return Err(Error::InvalidState(format!("trace {tr}")));
        }
        let m = DMatrix::from_row_slice(dim, dim, &self.rho);
        let min_eig = m
            .symmetric_eigenvalues()
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        if min_eig < -psd_tol {
            return Err(Error::InvalidState(format!(
                "negative eigenvalue {min_eig}"
            )));
        }
        Ok(())
    }

    /// Returns `U rho U^dagger`.
    pub fn apply_gate(&self, gate: &Gate) -> Result<MixedState> {
        gate.validate(self.n_qubits)?;
        let mut out = self.clone();
        out.apply_gate_unchecked(gate);
        Ok(out)
    }

    pub(crate) fn apply_gate_unchecked(&mut self, gate: &Gate) {
        let n = self.n_qubits;
        let tmask = kernels::qubit_mask(n, gate.target);
        match gate.kind {
            GateKind::Cnot => {
                let cmask = kernels::qubit_mask(n, gate.control.expect("validated"));
                kernels::apply_cnot_density(&mut self.rho, n, cmask, tmask);
            }
            _ => {
                let m = gate.matrix().expect("rotation");
                kernels::apply_1q_density(&mut self.rho, n, tmask, &m);
            }
        }
    }

    /// Applies the single-qubit depolarizing channel with probability `p`.
    pub fn apply_depolarizing(&self, qubit: usize, p: f64) -> Result<MixedState> {
        check_qubit(qubit, self.n_qubits)?;
        check_probability(p)?;
        let mut out = self.clone();
        kernels::depolarize_density(
            &mut out.rho,
            self.n_qubits,
            kernels::qubit_mask(self.n_qubits, qubit),
            p,
        );
        Ok(out)
    }

    /// General single-qubit channel `sum_k K_k rho K_k^dagger`.
    pub fn apply_kraus(&self, qubit: usize, kraus: &[Mat2]) -> Result<MixedState> {
        check_qubit(qubit, self.n_qubits)?;
        let mask = kernels::qubit_mask(self.n_qubits, qubit);
        let mut acc = vec![ZERO; self.rho.len()];
        for k in kraus {
            let mut term = self.rho.clone();
            kernels::apply_1q_density(&mut term, self.n_qubits, mask, k);
            for (a, t) in acc.iter_mut().zip(term) {
                *a += t;
            }
        }
        Ok(MixedState {
            n_qubits: self.n_qubits,
            rho: acc,
        })
    }

    pub fn probabilities(&self) -> Vec<f64> {
        let dim = self.dim();
        (0..dim).map(|i| self.rho[i * dim + i].re).collect()
    }

    pub fn expectation_z(&self, qubit: usize) -> Result<f64> {
        check_qubit(qubit, self.n_qubits)?;
        let mask = kernels::qubit_mask(self.n_qubits, qubit);
        Ok(z_expectation_from_probs(
            self.probabilities().into_iter(),
            mask,
        ))
    }
}

/// Either simulator representation, for readouts that accept both.
pub trait QuantumState {
    fn n_qubits(&self) -> usize;
    fn probabilities(&self) -> Vec<f64>;
    fn expectation_z(&self, qubit: usize) -> Result<f64>;
}

impl QuantumState for PureState {
    fn n_qubits(&self) -> usize {
        self.n_qubits
    }
    fn probabilities(&self) -> Vec<f64> {
        PureState::probabilities(self)
    }
    fn expectation_z(&self, qubit: usize) -> Result<f64> {
        PureState::expectation_z(self, qubit)
    }
}

impl QuantumState for MixedState {
    fn n_qubits(&self) -> usize {
        self.n_qubits
    }
    fn probabilities(&self) -> Vec<f64> {
        MixedState::probabilities(self)
    }
    fn expectation_z(&self, qubit: usize) -> Result<f64> {
        MixedState::expectation_z(self, qubit)
    }
}

/// The four Kraus operators of the depolarizing channel with probability `p`.
pub fn depolarizing_kraus(p: f64) -> Result<[Mat2; 4]> {
    check_probability(p)?;
    let a = (1.0 - p).sqrt();
    let b = (p / 3.0).sqrt();
    Ok([
        kernels::scale(&kernels::identity(), a),
        kernels::scale(&kernels::pauli_x(), b),
        kernels::scale(&kernels::pauli_y(), b),
        kernels::scale(&kernels::pauli_z(), b),
    ])
}

pub(crate) fn check_qubit(qubit: usize, n_qubits: usize) -> Result<()> {
    if qubit >= n_qubits {
        Err(Error::QubitOutOfRange {
            index: qubit,
            n_qubits,
        })
    } else {
        Ok(())
    }
}

pub(crate) fn check_probability(p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        Err(Error::InvalidProbability(p))
    } else {
        Ok(())
    }
}

fn n_qubits_for_len(len: usize) -> Result<usize> {
    if len < 2 || !len.is_power_of_two() {
        return Err(Error::DimensionMismatch(format!(
            "length {len} is not a power of two >= 2"
        )));
    }
    Ok(len.trailing_zeros() as usize)
}

fn z_expectation_from_probs(probs: impl Iterator<Item = f64>, mask: usize) -> f64 {
    probs
        .enumerate()
        .map(|(i, p)| if i & mask == 0 { p } else { -p })
        .sum::<f64>()
        .clamp(-1.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2, PI};

    fn plus() -> PureState {
        PureState::from_real(&[FRAC_1_SQRT_2, FRAC_1_SQRT_2]).unwrap()
    }

    #[test]
    fn ry_pi_flips_zero() {
        let out = PureState::zero(1).apply_gate(&Gate::ry(0, PI)).unwrap();
        assert!((out.amplitudes()[0]).norm() < 1e-12);
        assert!((out.amplitudes()[1].norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rz_on_zero_only_changes_phase() {
        let out = PureState::zero(1).apply_gate(&Gate::rz(0, 1.234)).unwrap();
        assert_eq!(out.probabilities().len(), 2);
        assert!((out.probabilities()[0] - 1.0).abs() < 1e-12);
        assert!(state_fidelity(&out, &PureState::zero(1)).unwrap() > 1.0 - 1e-12);
    }

    #[test]
    fn cnot_builds_bell_state() {
        // (|00> + |10>)/sqrt2 with qubit 0 the most significant bit
        let input = PureState::from_real(&[FRAC_1_SQRT_2, 0.0, FRAC_1_SQRT_2, 0.0]).unwrap();
        let out = input.apply_gate(&Gate::cnot(0, 1)).unwrap();
        let bell = PureState::from_real(&[FRAC_1_SQRT_2, 0.0, 0.0, FRAC_1_SQRT_2]).unwrap();
        assert!(state_fidelity(&out, &bell).unwrap() > 1.0 - 1e-12);
    }

    #[test]
    fn gate_index_errors() {
        let s = PureState::zero(2);
        assert!(matches!(
            s.apply_gate(&Gate::rx(2, 0.1)),
            Err(Error::QubitOutOfRange { .. })
        ));
        assert!(matches!(
            s.apply_gate(&Gate::cnot(1, 1)),
            Err(Error::ControlEqualsTarget(1))
        ));
    }

    #[test]
    fn z_expectations() {
        assert_eq!(PureState::zero(1).expectation_z(0).unwrap(), 1.0);
        assert_eq!(PureState::basis(1, 1).unwrap().expectation_z(0).unwrap(), -1.0);
        assert!(plus().expectation_z(0).unwrap().abs() < 1e-12);
        for theta in [0.0, 0.4, 1.9, -2.5] {
            let s = PureState::zero(1).apply_gate(&Gate::ry(0, theta)).unwrap();
            assert!((s.expectation_z(0).unwrap() - theta.cos()).abs() < 1e-12);
        }
        assert!(PureState::zero(1).expectation_z(1).is_err());
    }

    #[test]
    fn probabilities_examples() {
        let p = PureState::zero(3).probabilities();
        assert_eq!(p[0], 1.0);
        assert!(p[1..].iter().all(|&x| x == 0.0));
        let uniform = PureState::from_real(&[0.5; 4]).unwrap();
        assert!(uniform.probabilities().iter().all(|&x| (x - 0.25).abs() < 1e-15));
        let mixed = MixedState::maximally_mixed(1);
        assert_eq!(mixed.probabilities(), vec![0.5, 0.5]);
    }

    #[test]
    fn fidelity_examples() {
        let zero = PureState::zero(1);
        assert!((state_fidelity(&zero, &zero).unwrap() - 1.0).abs() < 1e-15);
        let one = PureState::basis(1, 1).unwrap();
        assert_eq!(state_fidelity(&zero, &one).unwrap(), 0.0);
        let half = zero.apply_gate(&Gate::ry(0, FRAC_PI_2)).unwrap();
        assert!((state_fidelity(&zero, &half).unwrap() - 0.5).abs() < 1e-12);
        assert!(state_fidelity(&zero, &PureState::zero(2)).is_err());
    }

    #[test]
    fn depolarizing_examples() {
        let rho = MixedState::from_pure(&plus());
        let same = rho.apply_depolarizing(0, 0.0).unwrap();
        assert_eq!(same, rho);

        let full = rho.apply_depolarizing(0, 0.75).unwrap();
        let target = MixedState::maximally_mixed(1);
        for (a, b) in full.matrix().iter().zip(target.matrix()) {
            assert!((a - b).norm() < 1e-12);
        }

        assert!(matches!(
            rho.apply_depolarizing(0, 1.5),
            Err(Error::InvalidProbability(_))
        ));
        assert!(rho.apply_depolarizing(3, 0.1).is_err());
    }

    #[test]
    fn depolarizing_by_hand_on_zero() {
        // (1-p) rho + p/3 (X rho X + Y rho Y + Z rho Z) for rho = |0><0|
        // = diag(1 - 2p/3, 2p/3)
        let p = 0.02;
        let out = MixedState::zero(1).apply_depolarizing(0, p).unwrap();
        let expected = [1.0 - 2.0 * p / 3.0, 0.0, 0.0, 2.0 * p / 3.0];
        for (a, e) in out.matrix().iter().zip(expected) {
            assert!((a - C64::new(e, 0.0)).norm() < 1e-15);
        }
        assert!(out.purity() < 1.0);
        out.check_physical(1e-10, 1e-9).unwrap();
    }

    #[test]
    fn closed_form_matches_kraus_sum() {
        let mut state = PureState::zero(3);
        for g in [
            Gate::ry(0, 0.7),
            Gate::rx(1, -1.1),
            Gate::cnot(0, 2),
            Gate::rz(2, 0.4),
            Gate::ry(2, 2.2),
        ] {
            state = state.apply_gate(&g).unwrap();
        }
        let rho = MixedState::from_pure(&state);
        for q in 0..3 {
            let fast = rho.apply_depolarizing(q, 0.13).unwrap();
            let slow = rho.apply_kraus(q, &depolarizing_kraus(0.13).unwrap()).unwrap();
            for (a, b) in fast.matrix().iter().zip(slow.matrix()) {
                assert!((a - b).norm() < 1e-14);
            }
            assert!((fast.trace().re - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn maximally_mixed_is_fixed_point() {
        let rho = MixedState::maximally_mixed(2);
        for p in [0.0, 0.02, 0.5, 1.0] {
            for q in 0..2 {
                let out = rho.apply_depolarizing(q, p).unwrap();
                for (a, b) in out.matrix().iter().zip(rho.matrix()) {
                    assert!((a - b).norm() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn rejects_unphysical_matrices() {
        let bad_trace = vec![C64::new(1.0, 0.0), ZERO, ZERO, C64::new(1.0, 0.0)];
        assert!(MixedState::from_matrix(bad_trace).is_err());
        let negative = vec![C64::new(1.5, 0.0), ZERO, ZERO, C64::new(-0.5, 0.0)];
        assert!(MixedState::from_matrix(negative).is_err());
        let ok = vec![C64::new(0.5, 0.0), ZERO, ZERO, C64::new(0.5, 0.0)];
        assert!(MixedState::from_matrix(ok).is_ok());
    }
}
