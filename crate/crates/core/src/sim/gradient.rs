use std::f64::consts::FRAC_PI_2;

use super::gate::{run_bound_mixed, CircuitSpec, Gate};
use super::state::{check_probability, check_qubit, MixedState, PureState, QuantumState};
use crate::error::{Error, Result};

/// `sum_q w_q <Z_q>`.
#[derive(Debug, Clone, PartialEq)]
pub struct ZObservable {
    pub terms: Vec<(usize, f64)>,
}

impl ZObservable {
    pub fn single(qubit: usize) -> Self {
        Self {
            terms: vec![(qubit, 1.0)],
        }
    }

    pub fn new(terms: Vec<(usize, f64)>) -> Self {
        Self { terms }
    }

    pub fn evaluate<S: QuantumState>(&self, state: &S) -> Result<f64> {
        let mut acc = 0.0;
        for &(q, w) in &self.terms {
            acc += w * state.expectation_z(q)?;
        }
        Ok(acc)
    }

    fn validate(&self, n_qubits: usize) -> Result<()> {
        for &(q, _) in &self.terms {
            check_qubit(q, n_qubits)?;
        }
        Ok(())
    }
}

/// Gates driven by `param_index`, or an error if it names no rotation.
fn shifted_gates(circuit: &CircuitSpec, param_index: usize) -> Result<Vec<usize>> {
    let gates: Vec<usize> = circuit
        .parameter_map
        .iter()
        .filter(|&&(_, p)| p == param_index)
        .map(|&(g, _)| g)
        .collect();
    if gates.is_empty() || gates.iter().any(|&g| !circuit.gates[g].is_rotation()) {
        return Err(Error::NonRotationParameter(param_index));
    }
    Ok(gates)
}

/// Sums the two-point shift rule over every gate the parameter drives, which
/// is exact for Pauli rotations even when a parameter is shared.
fn shift_rule(
    gates: &[Gate],
    targets: &[usize],
    mut f: impl FnMut(&[Gate]) -> Result<f64>,
) -> Result<f64> {
    let mut total = 0.0;
    let mut work = gates.to_vec();
    for &g in targets {
        let base = work[g].angle;
        work[g].angle = base + FRAC_PI_2;
        let plus = f(&work)?;
        work[g].angle = base - FRAC_PI_2;
        let minus = f(&work)?;
        work[g].angle = base;
        total += (plus - minus) / 2.0;
    }
    Ok(total)
}

/// `d f / d params[param_index]` for `f = <observable>` after running
/// `circuit` on `initial`, by the parameter-shift rule.
pub fn parameter_shift_gradient(
    circuit: &CircuitSpec,
    params: &[f64],
    initial: &PureState,
    observable: &ZObservable,
    param_index: usize,
) -> Result<f64> {
    circuit.validate()?;
    observable.validate(circuit.n_qubits)?;
    let targets = shifted_gates(circuit, param_index)?;
    let gates = circuit.bind(params)?;
    shift_rule(&gates, &targets, |gs| {
        let mut s = initial.clone();
        for g in gs {
            s.apply_gate_unchecked(g);
        }
        observable.evaluate(&s)
    })
}

/// The same rule on the density-matrix backend with per-layer depolarizing
/// noise; still exact because the channel does not depend on the angles.
pub fn parameter_shift_gradient_mixed(
    circuit: &CircuitSpec,
    params: &[f64],
    initial: &MixedState,
    observable: &ZObservable,
    param_index: usize,
    noise_p: f64,
) -> Result<f64> {
    circuit.validate()?;
    check_probability(noise_p)?;
    observable.validate(circuit.n_qubits)?;
    let targets = shifted_gates(circuit, param_index)?;
    let gates = circuit.bind(params)?;
    shift_rule(&gates, &targets, |gs| {
        let s = run_bound_mixed(circuit.n_qubits, gs, &circuit.layer_ends, initial, noise_p)?;
        observable.evaluate(&s)
    })
}
