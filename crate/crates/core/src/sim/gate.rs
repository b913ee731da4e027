use serde::{Deserialize, Serialize};

use super::kernels::{self, Mat2};
use super::state::{check_probability, check_qubit, MixedState, PureState};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GateKind {
    Rx,
    Ry,
    Rz,
    Cnot,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gate {
    pub kind: GateKind,
    pub target: usize,
    pub control: Option<usize>,
    /// Radians; ignored for CNOT.
    pub angle: f64,
}

impl Gate {
    pub fn rx(target: usize, angle: f64) -> Self {
        Self::rotation(GateKind::Rx, target, angle)
    }

    pub fn ry(target: usize, angle: f64) -> Self {
        Self::rotation(GateKind::Ry, target, angle)
    }

    pub fn rz(target: usize, angle: f64) -> Self {
        Self::rotation(GateKind::Rz, target, angle)
    }

    pub fn rotation(kind: GateKind, target: usize, angle: f64) -> Self {
        debug_assert!(kind != GateKind::Cnot);
        Self {
            kind,
            target,
            control: None,
            angle,
        }
    }

    pub fn cnot(control: usize, target: usize) -> Self {
        Self {
            kind: GateKind::Cnot,
            target,
            control: Some(control),
            angle: 0.0,
        }
    }

    pub fn is_rotation(&self) -> bool {
        self.kind != GateKind::Cnot
    }

    /// The 2x2 unitary of a rotation gate.
    pub fn matrix(&self) -> Option<Mat2> {
        match self.kind {
            GateKind::Rx => Some(kernels::rx(self.angle)),
            GateKind::Ry => Some(kernels::ry(self.angle)),
            GateKind::Rz => Some(kernels::rz(self.angle)),
            GateKind::Cnot => None,
        }
    }

    /// The Pauli generator `P` with `R_P(theta) = exp(-i theta P / 2)`.
    pub fn generator(&self) -> Option<Mat2> {
        match self.kind {
            GateKind::Rx => Some(kernels::pauli_x()),
            GateKind::Ry => Some(kernels::pauli_y()),
            GateKind::Rz => Some(kernels::pauli_z()),
            GateKind::Cnot => None,
        }
    }

    pub fn inverse(&self) -> Self {
        Self {
            angle: -self.angle,
            ..*self
        }
    }

    pub fn validate(&self, n_qubits: usize) -> Result<()> {
        check_qubit(self.target, n_qubits)?;
        match (self.kind, self.control) {
            (GateKind::Cnot, Some(c)) => {
                check_qubit(c, n_qubits)?;
                if c == self.target {
                    return Err(Error::ControlEqualsTarget(c));
                }
            }
            (GateKind::Cnot, None) => {
                return Err(Error::InvalidState("CNOT without control".into()));
            }
            (_, Some(_)) => {
                return Err(Error::InvalidState("rotation with a control qubit".into()));
            }
            (_, None) => {
                if !self.angle.is_finite() {
                    return Err(Error::NonFiniteAngle(self.angle));
                }
            }
        }
        Ok(())
    }
}

/// An ordered gate list whose rotation angles may be bound to trainable
/// parameters.
///
/// `parameter_map` lists `(gate index, parameter index)` pairs; a parameter
/// may drive several gates. `layer_ends` records gate counts at which a layer
/// completes, which is where noise channels are inserted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircuitSpec {
    pub n_qubits: usize,
    pub gates: Vec<Gate>,
    pub parameter_map: Vec<(usize, usize)>,
    pub layer_ends: Vec<usize>,
}

impl CircuitSpec {
    pub fn new(n_qubits: usize) -> Self {
        Self {
            n_qubits,
            gates: Vec::new(),
            parameter_map: Vec::new(),
            layer_ends: Vec::new(),
        }
    }

    pub fn push(&mut self, gate: Gate) -> &mut Self {
        self.gates.push(gate);
        self
    }

    /// Appends a rotation whose angle is taken from `params[param]` at run time.
    pub fn push_param(&mut self, gate: Gate, param: usize) -> &mut Self {
        self.parameter_map.push((self.gates.len(), param));
        self.gates.push(gate);
        self
    }

    pub fn end_layer(&mut self) -> &mut Self {
        self.layer_ends.push(self.gates.len());
        self
    }

    pub fn len(&self) -> usize {
        self.gates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gates.is_empty()
    }

    /// Number of distinct trainable parameters.
    pub fn n_params(&self) -> usize {
        self.parameter_map
            .iter()
            .map(|&(_, p)| p + 1)
            .max()
            .unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        for g in &self.gates {
            g.validate(self.n_qubits)?;
        }
        let n_params = self.n_params();
        let mut seen = vec![false; n_params];
        for &(gi, p) in &self.parameter_map {
            let gate = self.gates.get(gi).ok_or_else(|| {
                Error::DimensionMismatch(format!("parameter map points at gate {gi}"))
            })?;
            if !gate.is_rotation() {
                return Err(Error::NonRotationParameter(p));
            }
            seen[p] = true;
        }
        if let Some(p) = seen.iter().position(|s| !s) {
            return Err(Error::DimensionMismatch(format!(
                "parameter {p} drives no gate"
            )));
        }
        if self.layer_ends.iter().any(|&e| e > self.gates.len()) {
            return Err(Error::DimensionMismatch("layer end past last gate".into()));
        }
        Ok(())
    }

    /// Gates with parameter values substituted.
    pub fn bind(&self, params: &[f64]) -> Result<Vec<Gate>> {
        let expected = self.n_params();
        if params.len() != expected {
            return Err(Error::ParameterCount {
                expected,
                actual: params.len(),
            });
        }
        let mut gates = self.gates.clone();
        for &(gi, p) in &self.parameter_map {
            if !params[p].is_finite() {
                return Err(Error::NonFiniteAngle(params[p]));
            }
            gates[gi].angle = params[p];
        }
        Ok(gates)
    }

    /// A template for the inverse circuit: gates in reverse order, and the
    /// parameter driving the `m`-th rotation (in application order) is `m`.
    /// With parameters `reverse_params(theta)` it implements the exact inverse
    /// of `self` run with `theta`, provided `self` numbers its parameters in
    /// application order.
    pub fn inverse_template(&self) -> CircuitSpec {
        let n_params = self.n_params();
        let mut out = CircuitSpec::new(self.n_qubits);
        let param_of: std::collections::HashMap<usize, usize> =
            self.parameter_map.iter().cloned().collect();
        let total = self.gates.len();
        for (k, gate) in self.gates.iter().rev().enumerate() {
            let original = total - 1 - k;
            match param_of.get(&original) {
                Some(&p) => {
                    out.push_param(*gate, n_params - 1 - p);
                }
                None => {
                    out.push(gate.inverse());
                }
            }
        }
        out.layer_ends = self
            .layer_ends
            .iter()
            .rev()
            .map(|&e| total - e)
            .filter(|&e| e > 0)
            .collect();
        out
    }

    /// The literal inverse of the circuit bound to `params`.
    pub fn inverse_bound(&self, params: &[f64]) -> Result<CircuitSpec> {
        let gates = self.bind(params)?;
        let mut out = CircuitSpec::new(self.n_qubits);
        for g in gates.iter().rev() {
            out.push(g.inverse());
        }
        Ok(out)
    }
}

/// Applies the circuit's gates in order with angles taken from `params`.
pub fn run_circuit(circuit: &CircuitSpec, params: &[f64], initial: &PureState) -> Result<PureState> {
    check_register(circuit, initial.n_qubits())?;
    circuit.validate()?;
    let gates = circuit.bind(params)?;
    let mut state = initial.clone();
    for g in &gates {
        state.apply_gate_unchecked(g);
    }
    Ok(state)
}

/// Density-matrix run with one depolarizing channel of probability `noise_p`
/// on every qubit at each layer end.
pub fn run_circuit_mixed(
    circuit: &CircuitSpec,
    params: &[f64],
    initial: &MixedState,
    noise_p: f64,
) -> Result<MixedState> {
    check_register(circuit, initial.n_qubits())?;
    check_probability(noise_p)?;
    circuit.validate()?;
    let gates = circuit.bind(params)?;
    run_bound_mixed(circuit.n_qubits, &gates, &circuit.layer_ends, initial, noise_p)
}

pub(crate) fn run_bound_mixed(
    n_qubits: usize,
    gates: &[Gate],
    layer_ends: &[usize],
    initial: &MixedState,
    noise_p: f64,
) -> Result<MixedState> {
    let mut state = initial.clone();
    let mut ends = layer_ends.iter().peekable();
    for (i, g) in gates.iter().enumerate() {
        state.apply_gate_unchecked(g);
        while ends.peek() == Some(&&(i + 1)) {
            ends.next();
            if noise_p > 0.0 {
                for q in 0..n_qubits {
                    kernels::depolarize_density(
                        state.matrix_mut(),
                        n_qubits,
                        kernels::qubit_mask(n_qubits, q),
                        noise_p,
                    );
                }
            }
        }
    }
    Ok(state)
}

fn check_register(circuit: &CircuitSpec, n_qubits: usize) -> Result<()> {
    if circuit.n_qubits != n_qubits {
        return Err(Error::DimensionMismatch(format!(
            "circuit on {} qubits, state on {}",
            circuit.n_qubits, n_qubits
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::kernels::matmul;
    use num_complex::Complex64 as C64;

    fn kron(a: &[Vec<C64>], b: &[Vec<C64>]) -> Vec<Vec<C64>> {
        let (ra, rb) = (a.len(), b.len());
        let mut out = vec![vec![C64::new(0.0, 0.0); ra * rb]; ra * rb];
        for i in 0..ra {
            for j in 0..ra {
                for k in 0..rb {
                    for l in 0..rb {
                        out[i * rb + k][j * rb + l] = a[i][j] * b[k][l];
                    }
                }
            }
        }
        out
    }

    fn dense(m: &Mat2) -> Vec<Vec<C64>> {
        vec![vec![m[0][0], m[0][1]], vec![m[1][0], m[1][1]]]
    }

    fn mat_mul(a: &[Vec<C64>], b: &[Vec<C64>]) -> Vec<Vec<C64>> {
        let n = a.len();
        let mut out = vec![vec![C64::new(0.0, 0.0); n]; n];
        for i in 0..n {
            for k in 0..n {
                for j in 0..n {
                    out[i][j] += a[i][k] * b[k][j];
                }
            }
        }
        out
    }

    #[test]
    fn empty_circuit_is_identity() {
        let c = CircuitSpec::new(2);
        let init = PureState::from_real(&[0.5, 0.5, 0.5, 0.5]).unwrap();
        assert_eq!(run_circuit(&c, &[], &init).unwrap(), init);
    }

    #[test]
    fn zero_angles_leave_state_unchanged() {
        let mut c = CircuitSpec::new(3);
        let mut p = 0;
        for q in 0..3 {
            for g in [Gate::rx(q, 0.0), Gate::rz(q, 0.0), Gate::ry(q, 0.0)] {
                c.push_param(g, p);
                p += 1;
            }
        }
        let raw = [0.1, 0.3, -0.2, 0.4, 0.5, -0.1, 0.6, 0.2];
        let norm = raw.iter().map(|x: &f64| x * x).sum::<f64>().sqrt();
        let init = PureState::from_real(&raw.map(|x| x / norm)).unwrap();
        let out = run_circuit(&c, &vec![0.0; 9], &init).unwrap();
        for (a, b) in out.amplitudes().iter().zip(init.amplitudes()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn two_qubit_layer_matches_kronecker_oracle() {
        let params = [0.3, -1.2, 0.7, 2.1, 0.05, -0.9];
        let mut c = CircuitSpec::new(2);
        c.push_param(Gate::rx(0, 0.0), 0)
            .push_param(Gate::rz(0, 0.0), 1)
            .push_param(Gate::ry(0, 0.0), 2)
            .push_param(Gate::rx(1, 0.0), 3)
            .push_param(Gate::rz(1, 0.0), 4)
            .push_param(Gate::ry(1, 0.0), 5)
            .push(Gate::cnot(0, 1));

        let id = dense(&kernels::identity());
        let q0 = matmul(&kernels::ry(params[2]), &matmul(&kernels::rz(params[1]), &kernels::rx(params[0])));
        let q1 = matmul(&kernels::ry(params[5]), &matmul(&kernels::rz(params[4]), &kernels::rx(params[3])));
        let local = mat_mul(&kron(&id, &dense(&q1)), &kron(&dense(&q0), &id));
        let z = C64::new(0.0, 0.0);
        let o = C64::new(1.0, 0.0);
        // qubit 0 is the most significant bit: CNOT(0 -> 1) swaps |10> and |11>
        let cnot = vec![
            vec![o, z, z, z],
            vec![z, o, z, z],
            vec![z, z, z, o],
            vec![z, z, o, z],
        ];
        let unitary = mat_mul(&cnot, &local);

        let init = PureState::from_real(&[0.5, -0.5, 0.1, (0.49f64).sqrt()]).unwrap();
        let out = run_circuit(&c, &params, &init).unwrap();
        for i in 0..4 {
            let expected: C64 = (0..4).map(|j| unitary[i][j] * init.amplitudes()[j]).sum();
            assert!((out.amplitudes()[i] - expected).norm() < 1e-10);
        }
    }

    #[test]
    fn parameter_count_mismatch() {
        let mut c = CircuitSpec::new(1);
        c.push_param(Gate::ry(0, 0.0), 0);
        let err = run_circuit(&c, &[0.1, 0.2], &PureState::zero(1)).unwrap_err();
        assert!(matches!(err, Error::ParameterCount { expected: 1, actual: 2 }));
    }

    #[test]
    fn parameter_on_cnot_rejected() {
        let mut c = CircuitSpec::new(2);
        c.push_param(Gate::cnot(0, 1), 0);
        assert!(matches!(c.validate(), Err(Error::NonRotationParameter(0))));
    }

    #[test]
    fn inverse_template_undoes_forward() {
        let mut c = CircuitSpec::new(3);
        let mut p = 0;
        for _ in 0..2 {
            for q in 0..3 {
                for g in [Gate::rx(q, 0.0), Gate::rz(q, 0.0), Gate::ry(q, 0.0)] {
                    c.push_param(g, p);
                    p += 1;
                }
            }
            c.push(Gate::cnot(0, 1)).push(Gate::cnot(1, 2)).end_layer();
        }
        let theta: Vec<f64> = (0..p).map(|k| 0.37 * k as f64 - 1.0).collect();
        let forward = run_circuit(&c, &theta, &PureState::zero(3)).unwrap();
        let inv = c.inverse_template();
        let theta_bar: Vec<f64> = theta.iter().rev().map(|t| -t).collect();
        let back = run_circuit(&inv, &theta_bar, &forward).unwrap();
        assert!((back.amplitudes()[0].norm_sqr() - 1.0).abs() < 1e-10);

        let literal = c.inverse_bound(&theta).unwrap();
        let back2 = run_circuit(&literal, &[], &forward).unwrap();
        assert!((back2.amplitudes()[0].norm_sqr() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn mixed_run_matches_pure_without_noise() {
        let mut c = CircuitSpec::new(3);
        c.push(Gate::ry(0, 0.9))
            .push(Gate::rx(1, -0.4))
            .push(Gate::cnot(0, 2))
            .end_layer()
            .push(Gate::rz(2, 1.3))
            .push(Gate::ry(2, 0.2))
            .push(Gate::cnot(2, 1))
            .end_layer();
        let pure = run_circuit(&c, &[], &PureState::zero(3)).unwrap();
        let mixed = run_circuit_mixed(&c, &[], &MixedState::zero(3), 0.0).unwrap();
        for (a, b) in pure.probabilities().iter().zip(mixed.probabilities()) {
            assert!((a - b).abs() < 1e-10);
        }
        let noisy = run_circuit_mixed(&c, &[], &MixedState::zero(3), 0.05).unwrap();
        assert!((noisy.trace().re - 1.0).abs() < 1e-12);
        assert!(noisy.purity() < 1.0 - 1e-3);
        noisy.check_physical(1e-10, 1e-9).unwrap();
    }
}
