//! Hardware-style layered ansatz shared by the AAE encoder and the classifier:
//! every layer applies RX, RZ, RY on each wire, then a fixed CNOT entangler.
//!
//! The three rotations on a wire are fused into one 2x2 unitary and the CNOT
//! block into a basis permutation, so a layer costs `n + 1` buffer passes.
//! Gradients use reverse-mode (adjoint) differentiation: the output state is
//! walked back through the inverse layers alongside the loss cotangent, which
//! gives all parameter derivatives in one backward sweep. The results agree
//! with the parameter-shift rule to rounding, see the tests.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use super::gate::{CircuitSpec, Gate};
use super::kernels::{self, Mat2};
use super::state::{check_probability, MixedState, PureState};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Entangler {
    /// CNOT(i, i+1) for i = 0..n-2.
    Chain,
    /// CNOT(i, (i+1) mod n) for i = 0..n-1.
    Ring,
}

impl Entangler {
    pub fn cnots(self, n_qubits: usize) -> Vec<(usize, usize)> {
        match self {
            Entangler::Chain => (0..n_qubits.saturating_sub(1)).map(|i| (i, i + 1)).collect(),
            Entangler::Ring if n_qubits < 2 => Vec::new(),
            Entangler::Ring if n_qubits == 2 => vec![(0, 1), (1, 0)],
            Entangler::Ring => (0..n_qubits).map(|i| (i, (i + 1) % n_qubits)).collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayeredAnsatz {
    n_qubits: usize,
    n_layers: usize,
    entangler: Entangler,
    perm: Vec<usize>,
    inv_perm: Vec<usize>,
}

impl LayeredAnsatz {
    pub fn new(n_qubits: usize, n_layers: usize, entangler: Entangler) -> Self {
        let dim = 1usize << n_qubits;
        let cnots = entangler.cnots(n_qubits);
        let perm: Vec<usize> = (0..dim)
            .map(|mut idx| {
                for &(c, t) in &cnots {
                    if idx & kernels::qubit_mask(n_qubits, c) != 0 {
                        idx ^= kernels::qubit_mask(n_qubits, t);
                    }
                }
                idx
            })
            .collect();
        let inv_perm = kernels::invert_permutation(&perm);
        Self {
            n_qubits,
            n_layers,
            entangler,
            perm,
            inv_perm,
        }
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn n_layers(&self) -> usize {
        self.n_layers
    }

    pub fn entangler(&self) -> Entangler {
        self.entangler
    }

    pub fn params_per_layer(&self) -> usize {
        3 * self.n_qubits
    }

    pub fn n_params(&self) -> usize {
        self.n_layers * self.params_per_layer()
    }

    pub fn gates_per_layer(&self) -> usize {
        3 * self.n_qubits + self.entangler.cnots(self.n_qubits).len()
    }

    pub fn gate_count(&self) -> usize {
        self.n_layers * self.gates_per_layer()
    }

    /// The explicit gate list. Parameter `layer * 3n + 3q + g` drives RX
    /// (g = 0), RZ (g = 1) or RY (g = 2) on wire `q`.
    pub fn circuit(&self) -> CircuitSpec {
        let n = self.n_qubits;
        let mut c = CircuitSpec::new(n);
        for layer in 0..self.n_layers {
            let base = layer * 3 * n;
            for q in 0..n {
                c.push_param(Gate::rx(q, 0.0), base + 3 * q);
                c.push_param(Gate::rz(q, 0.0), base + 3 * q + 1);
                c.push_param(Gate::ry(q, 0.0), base + 3 * q + 2);
            }
            for (ctl, tgt) in self.entangler.cnots(n) {
                c.push(Gate::cnot(ctl, tgt));
            }
            c.end_layer();
        }
        c
    }

    /// Precomputes the fused per-wire unitaries for one parameter vector.
    pub fn prepare(&self, params: &[f64]) -> Result<Prepared<'_>> {
        if params.len() != self.n_params() {
            return Err(Error::ParameterCount {
                expected: self.n_params(),
                actual: params.len(),
            });
        }
        if let Some(&bad) = params.iter().find(|p| !p.is_finite()) {
            return Err(Error::NonFiniteAngle(bad));
        }
        let wires = params
            .chunks(3)
            .map(|t| {
                let (rx, rz, ry) = (kernels::rx(t[0]), kernels::rz(t[1]), kernels::ry(t[2]));
                let yz = kernels::matmul(&ry, &rz);
                let fused = kernels::matmul(&yz, &rx);
                // generators moved to the output side of the fused block
                let gy = kernels::pauli_y();
                let gz = conjugate(&ry, &kernels::pauli_z());
                let gx = conjugate(&yz, &kernels::pauli_x());
                Wire {
                    fused,
                    fused_dag: kernels::dagger(&fused),
                    generators: [gx, gz, gy],
                }
            })
            .collect();
        Ok(Prepared { ansatz: self, wires })
    }

    pub fn forward(&self, params: &[f64], state: &PureState) -> Result<PureState> {
        self.check_register(state.n_qubits())?;
        let prep = self.prepare(params)?;
        Ok(PureState::from_raw(
            self.n_qubits,
            prep.forward(state.amplitudes().to_vec()),
        ))
    }

    /// Density-matrix run with depolarizing noise of probability `noise_p` on
    /// every wire after each layer.
    pub fn forward_mixed(&self, params: &[f64], state: &MixedState, noise_p: f64) -> Result<MixedState> {
        self.check_register(state.n_qubits())?;
        check_probability(noise_p)?;
        let prep = self.prepare(params)?;
        Ok(MixedState::from_raw(
            self.n_qubits,
            prep.forward_density(state.matrix().to_vec(), noise_p),
        ))
    }

    fn check_register(&self, n: usize) -> Result<()> {
        if n != self.n_qubits {
            return Err(Error::DimensionMismatch(format!(
                "ansatz on {} qubits, state on {n}",
                self.n_qubits
            )));
        }
        Ok(())
    }
}

fn conjugate(u: &Mat2, a: &Mat2) -> Mat2 {
    kernels::matmul(u, &kernels::matmul(a, &kernels::dagger(u)))
}

#[derive(Debug, Clone)]
struct Wire {
    fused: Mat2,
    fused_dag: Mat2,
    /// Effective generators of the X, Z, Y angles seen from after the block.
    generators: [Mat2; 3],
}

/// An ansatz bound to concrete parameters.
#[derive(Debug, Clone)]
pub struct Prepared<'a> {
    ansatz: &'a LayeredAnsatz,
    wires: Vec<Wire>,
}

impl Prepared<'_> {
    fn layer(&self, l: usize) -> &[Wire] {
        let n = self.ansatz.n_qubits;
        &self.wires[l * n..(l + 1) * n]
    }

    fn mask(&self, q: usize) -> usize {
        kernels::qubit_mask(self.ansatz.n_qubits, q)
    }

    pub fn forward(&self, mut amps: Vec<C64>) -> Vec<C64> {
        for l in 0..self.ansatz.n_layers {
            for (q, w) in self.layer(l).iter().enumerate() {
                kernels::apply_1q(&mut amps, self.mask(q), &w.fused);
            }
            amps = kernels::permute(&amps, &self.ansatz.perm);
        }
        amps
    }

    /// Reverse sweep from the output state `psi` and cotangent
    /// `lambda = dL/d conj(psi)` of a real loss `L`. Returns `dL/dparams` and
    /// the cotangent at the circuit input.
    pub fn backward(&self, mut psi: Vec<C64>, mut lambda: Vec<C64>) -> (Vec<f64>, Vec<C64>) {
        let n = self.ansatz.n_qubits;
        let mut grads = vec![0.0; self.ansatz.n_params()];
        for l in (0..self.ansatz.n_layers).rev() {
            psi = kernels::permute(&psi, &self.ansatz.inv_perm);
            lambda = kernels::permute(&lambda, &self.ansatz.inv_perm);
            for (q, w) in self.layer(l).iter().enumerate() {
                let mask = self.mask(q);
                let g = kernels::cross_matrix(&lambda, &psi, mask);
                for (k, gen) in w.generators.iter().enumerate() {
                    // dL/dtheta = Im <lambda| P |psi>
                    grads[l * 3 * n + 3 * q + k] = kernels::contract(gen, &g).im;
                }
            }
            for (q, w) in self.layer(l).iter().enumerate() {
                let mask = self.mask(q);
                kernels::apply_1q(&mut psi, mask, &w.fused_dag);
                kernels::apply_1q(&mut lambda, mask, &w.fused_dag);
            }
        }
        (grads, lambda)
    }

    fn depolarize_all(&self, rho: &mut [C64], noise_p: f64) {
        let n = self.ansatz.n_qubits;
        if noise_p > 0.0 {
            for q in 0..n {
                kernels::depolarize_density(rho, n, self.mask(q), noise_p);
            }
        }
    }

    fn apply_layer_density(&self, l: usize, rho: &mut [C64]) {
        let n = self.ansatz.n_qubits;
        for (q, w) in self.layer(l).iter().enumerate() {
            kernels::apply_1q_density(rho, n, self.mask(q), &w.fused);
        }
    }

    /// Works on any Hermitian operator, not only unit-trace states.
    pub fn forward_density(&self, mut rho: Vec<C64>, noise_p: f64) -> Vec<C64> {
        let n = self.ansatz.n_qubits;
        for l in 0..self.ansatz.n_layers {
            self.apply_layer_density(l, &mut rho);
            rho = kernels::permute_density(&rho, n, &self.ansatz.perm);
            self.depolarize_all(&mut rho, noise_p);
        }
        rho
    }

    /// Adjoint channel applied to an observable: `Tr(M Phi(rho)) = Tr(Phi^dag(M) rho)`.
    pub fn heisenberg(&self, mut m: Vec<C64>, noise_p: f64) -> Vec<C64> {
        let n = self.ansatz.n_qubits;
        for l in (0..self.ansatz.n_layers).rev() {
            self.depolarize_all(&mut m, noise_p);
            m = kernels::permute_density(&m, n, &self.ansatz.inv_perm);
            for (q, w) in self.layer(l).iter().enumerate() {
                kernels::apply_1q_density(&mut m, n, self.mask(q), &w.fused_dag);
            }
        }
        m
    }

    /// `d/dparams Tr(M Phi(rho))` for Hermitian `rho` and `m`.
    pub fn gradient_density(&self, rho: Vec<C64>, m: Vec<C64>, noise_p: f64) -> Vec<f64> {
        let n = self.ansatz.n_qubits;
        let n_layers = self.ansatz.n_layers;
        // rotated state of each layer, before its entangler and noise
        let mut checkpoints = Vec::with_capacity(n_layers);
        let mut cur = rho;
        for l in 0..n_layers {
            self.apply_layer_density(l, &mut cur);
            checkpoints.push(cur.clone());
            cur = kernels::permute_density(&cur, n, &self.ansatz.perm);
            self.depolarize_all(&mut cur, noise_p);
        }
        drop(cur);
        let mut grads = vec![0.0; self.ansatz.n_params()];
        let mut m = m;
        for l in (0..n_layers).rev() {
            self.depolarize_all(&mut m, noise_p);
            m = kernels::permute_density(&m, n, &self.ansatz.inv_perm);
            let rho_l = &checkpoints[l];
            for (q, w) in self.layer(l).iter().enumerate() {
                let g = kernels::cross_matrix_density(&m, rho_l, n, self.mask(q));
                for (k, gen) in w.generators.iter().enumerate() {
                    grads[l * 3 * n + 3 * q + k] = kernels::contract(gen, &g).im;
                }
            }
            if l > 0 {
                for (q, w) in self.layer(l).iter().enumerate() {
                    kernels::apply_1q_density(&mut m, n, self.mask(q), &w.fused_dag);
                }
            }
        }
        grads
    }
}

/// `sum_k w_k Z_k` as a diagonal of length `2^n`.
pub fn z_weights_diagonal(n_qubits: usize, weights: &[f64]) -> Vec<f64> {
    (0..1usize << n_qubits)
        .map(|i| {
            weights
                .iter()
                .enumerate()
                .map(|(q, w)| {
                    if i & kernels::qubit_mask(n_qubits, q) == 0 {
                        *w
                    } else {
                        -*w
                    }
                })
                .sum()
        })
        .collect()
}

/// Dense row-major matrix with the given real diagonal.
pub fn diagonal_operator(diag: &[f64]) -> Vec<C64> {
    let dim = diag.len();
    let mut m = vec![kernels::ZERO; dim * dim];
    for (i, d) in diag.iter().enumerate() {
        m[i * dim + i] = C64::new(*d, 0.0);
    }
    m
}
