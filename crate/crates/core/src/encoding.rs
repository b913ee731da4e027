//! Amplitude encoding of 256-sample signals into 8 qubits.
//!
//! Exact encoding writes the normalized signal straight into the simulator;
//! its gate cost is reported from a uniformly controlled rotation
//! (multiplexor) decomposition. Approximate encoding (AAE) trains a shallow
//! chain-entangled circuit per signal.

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::optim::{Adam, AdamConfig};
use crate::sim::{kernels, CircuitSpec, Entangler, Gate, LayeredAnsatz, PureState};

pub const SIGNAL_LEN: usize = 256;
pub const N_QUBITS: usize = 8;

/// Rotations smaller than this are dropped from the exact-encoding circuit.
pub const PRUNE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedSignal {
    pub amplitudes: Vec<f64>,
    pub original_norm: f64,
}

impl NormalizedSignal {
    pub fn to_state(&self) -> PureState {
        let n = self.amplitudes.len().trailing_zeros() as usize;
        PureState::from_raw(n, self.amplitudes.iter().map(|&a| C64::new(a, 0.0)).collect())
    }
}

pub fn normalize_signal(raw: &[f64]) -> Result<NormalizedSignal> {
    if raw.len() < 2 || !raw.len().is_power_of_two() {
        return Err(Error::ShapeMismatch {
            expected: format!("power-of-two length (normally {SIGNAL_LEN})"),
            actual: raw.len().to_string(),
        });
    }
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidState("non-finite signal value".into()));
    }
    let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::ZeroSignal);
    }
    Ok(NormalizedSignal {
        amplitudes: raw.iter().map(|v| v / norm).collect(),
        original_norm: norm,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncodingMethod {
    Exact,
    Aae,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodingReport {
    pub method: EncodingMethod,
    pub gate_count: usize,
    pub fidelity: f64,
}

/// The injected state and the gate count of its multiplexor decomposition.
pub fn exact_encode(sig: &NormalizedSignal) -> (PureState, usize) {
    let count = state_preparation_circuit(&sig.amplitudes).len();
    (sig.to_state(), count)
}

pub fn exact_encode_report(sig: &NormalizedSignal) -> EncodingReport {
    EncodingReport {
        method: EncodingMethod::Exact,
        gate_count: exact_encode(sig).1,
        fidelity: 1.0,
    }
}

/// Prepares the real vector `amps` from `|0...0>` up to a global phase.
///
/// Magnitudes come from RY multiplexors, one per wire from the top down; the
/// signs are phases 0 or pi and are fixed by RZ multiplexors. A multiplexor
/// with `k` controls is `2^k` rotations interleaved with `2^k` CNOTs (none
/// when `k = 0`). Rotations below [`PRUNE_TOL`] are dropped, and a
/// multiplexor whose rotations all vanish is dropped together with its CNOTs.
pub fn state_preparation_circuit(amps: &[f64]) -> CircuitSpec {
    let n = amps.len().trailing_zeros() as usize;
    let mut circuit = CircuitSpec::new(n);
    let mags: Vec<f64> = amps.iter().map(|a| a.abs()).collect();
    let phases: Vec<f64> = amps
        .iter()
        .map(|&a| if a < 0.0 { std::f64::consts::PI } else { 0.0 })
        .collect();

    for k in 0..n {
        let block = 1usize << (n - k - 1);
        let ry: Vec<f64> = (0..1usize << k)
            .map(|j| {
                let left = norm(&mags[2 * j * block..(2 * j + 1) * block]);
                let right = norm(&mags[(2 * j + 1) * block..(2 * j + 2) * block]);
                2.0 * right.atan2(left)
            })
            .collect();
        push_multiplexor(&mut circuit, k, &ry, Gate::ry);
    }
    for k in 0..n {
        let block = 1usize << (n - k - 1);
        let rz: Vec<f64> = (0..1usize << k)
            .map(|j| {
                let left = mean(&phases[2 * j * block..(2 * j + 1) * block]);
                let right = mean(&phases[(2 * j + 1) * block..(2 * j + 2) * block]);
                right - left
            })
            .collect();
        push_multiplexor(&mut circuit, k, &rz, Gate::rz);
    }
    circuit
}

fn norm(xs: &[f64]) -> f64 {
    xs.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn gray(i: usize) -> usize {
    i ^ (i >> 1)
}

/// Uniformly controlled rotation on wire `k` with controls `0..k`: applies
/// the angle `alpha[j]` when the controls read `j` (wire 0 the high bit).
fn push_multiplexor(
    circuit: &mut CircuitSpec,
    k: usize,
    alpha: &[f64],
    rot: fn(usize, f64) -> Gate,
) {
    let m = alpha.len();
    // theta = M^-1 alpha with M_ij = (-1)^(popcount(j & gray(i))), M^-1 = M^T / m
    let theta: Vec<f64> = (0..m)
        .map(|i| {
            let g = gray(i);
            alpha
                .iter()
                .enumerate()
                .map(|(j, a)| if (j & g).count_ones() % 2 == 0 { *a } else { -*a })
                .sum::<f64>()
                / m as f64
        })
        .collect();
    if theta.iter().all(|t| t.abs() < PRUNE_TOL) {
        return;
    }
    for (i, &t) in theta.iter().enumerate() {
        if t.abs() >= PRUNE_TOL {
            circuit.push(rot(k, t));
        }
        if k > 0 {
            let changed = gray(i) ^ gray((i + 1) % m);
            let bit = changed.trailing_zeros() as usize;
            circuit.push(Gate::cnot(k - 1 - bit, k));
        }
    }
}

/// `output[i] = -input[len - 1 - i]`.
pub fn reverse_params(theta_bar: &[f64]) -> Vec<f64> {
    theta_bar.iter().rev().map(|t| -t).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AaeConfig {
    pub n_layers: usize,
    pub iterations: usize,
    pub adam: AdamConfig,
    /// Initial angles are drawn uniformly from `[-init_scale, init_scale]`.
    pub init_scale: f64,
}

impl AaeConfig {
    pub fn with_layers(n_layers: usize) -> Self {
        Self {
            n_layers,
            ..Self::default()
        }
    }
}

impl Default for AaeConfig {
    fn default() -> Self {
        Self {
            n_layers: 5,
            iterations: 300,
            adam: AdamConfig {
                lr: 0.1,
                beta1: 0.9,
                beta2: 0.99,
                eps: 1e-8,
            },
            init_scale: std::f64::consts::PI,
        }
    }
}

pub const AAE_MODEL_VERSION: u32 = 1;

/// A trained encoder for one signal. `params` are the angles of the inverse
/// circuit that was optimized; the forward encoder uses
/// `reverse_params(params)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AAEModel {
    pub version: u32,
    pub n_layers: usize,
    pub params: Vec<f64>,
    pub achieved_fidelity: f64,
}

impl AAEModel {
    pub fn forward_params(&self) -> Vec<f64> {
        reverse_params(&self.params)
    }

    pub fn gate_count(&self) -> usize {
        aae_ansatz(self.n_layers).gate_count()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: AAEModel = serde_json::from_str(s)?;
        if m.version != AAE_MODEL_VERSION {
            return Err(Error::Checkpoint(format!("AAE model version {}", m.version)));
        }
        if m.params.len() != 3 * N_QUBITS * m.n_layers {
            return Err(Error::ParameterCount {
                expected: 3 * N_QUBITS * m.n_layers,
                actual: m.params.len(),
            });
        }
        Ok(m)
    }
}

/// The forward encoder `U(theta)`: 3 rotations per wire and a 7-CNOT chain per
/// layer, 31 gates per layer on 8 qubits.
pub fn aae_ansatz(n_layers: usize) -> LayeredAnsatz {
    LayeredAnsatz::new(N_QUBITS, n_layers, Entangler::Chain)
}

/// Seed for a signal's AAE initialization, derived from its content so that
/// the same signal always trains to the same model.
pub fn signal_seed(master_seed: u64, amplitudes: &[f64]) -> u64 {
    let mut h = Sha256::new();
    h.update(master_seed.to_le_bytes());
    for a in amplitudes {
        h.update(a.to_bits().to_le_bytes());
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Trains the inverse circuit `U^-1(theta_bar)` so that it maps the target
/// ket onto `|0...0>`; the loss is `1 - P(|0...0>)`.
///
/// `U^-1(theta_bar) = U(reverse_params(theta_bar))^dagger`, hence
/// `P(|0...0>) = |<psi| U(theta) |0...0>|^2`, which is evaluated and
/// differentiated on the forward circuit. The returned model keeps the best
/// iterate seen, with the all-zero circuit as the starting candidate.
pub fn train_aae(sig: &NormalizedSignal, cfg: &AaeConfig, seed: u64) -> Result<AAEModel> {
    if cfg.n_layers == 0 {
        return Err(Error::InvalidState("AAE needs at least one layer".into()));
    }
    if sig.amplitudes.len() != 1 << N_QUBITS {
        return Err(Error::ShapeMismatch {
            expected: SIGNAL_LEN.to_string(),
            actual: sig.amplitudes.len().to_string(),
        });
    }
    let ansatz = aae_ansatz(cfg.n_layers);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut theta_bar: Vec<f64> = (0..ansatz.n_params())
        .map(|_| {
            if cfg.init_scale > 0.0 {
                rng.random_range(-cfg.init_scale..=cfg.init_scale)
            } else {
                0.0
            }
        })
        .collect();
    let target: Vec<C64> = sig.amplitudes.iter().map(|&a| C64::new(a, 0.0)).collect();
    let mut zero = vec![kernels::ZERO; target.len()];
    zero[0] = kernels::ONE;

    let mut opt = Adam::new(cfg.adam, theta_bar.len());
    // the identity circuit prepares |0...0>, so its fidelity is |a_0|^2
    let mut best = (target[0].norm_sqr(), vec![0.0; theta_bar.len()]);
    for it in 0..=cfg.iterations {
        let theta = reverse_params(&theta_bar);
        let prep = ansatz.prepare(&theta)?;
        let phi = prep.forward(zero.clone());
        let overlap: C64 = target.iter().zip(&phi).map(|(t, p)| t.conj() * p).sum();
        let fidelity = overlap.norm_sqr();
        if fidelity > best.0 {
            best = (fidelity, theta_bar.clone());
        }
        if it == cfg.iterations || fidelity > 1.0 - 1e-12 {
            break;
        }
        // dL/d conj(phi) for L = 1 - |<target|phi>|^2
        let lambda: Vec<C64> = target.iter().map(|t| -overlap * t).collect();
        let (grad_theta, _) = prep.backward(phi, lambda);
        let grad_bar = reverse_params(&grad_theta);
        opt.step(&mut theta_bar, &grad_bar);
    }
    Ok(AAEModel {
        version: AAE_MODEL_VERSION,
        n_layers: cfg.n_layers,
        params: best.1,
        achieved_fidelity: best.0.clamp(0.0, 1.0),
    })
}

/// Runs the forward encoder on `|0...0>`; returns the state and `31 * n_layers`.
pub fn aae_encode(model: &AAEModel) -> Result<(PureState, usize)> {
    let ansatz = aae_ansatz(model.n_layers);
    let state = ansatz.forward(&model.forward_params(), &PureState::zero(N_QUBITS))?;
    Ok((state, ansatz.gate_count()))
}

pub fn aae_report(model: &AAEModel) -> EncodingReport {
    EncodingReport {
        method: EncodingMethod::Aae,
        gate_count: model.gate_count(),
        fidelity: model.achieved_fidelity,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{run_circuit, state_fidelity};
    use proptest::prelude::*;
    use rand::Rng;

    fn random_signal(seed: u64) -> NormalizedSignal {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw: Vec<f64> = (0..SIGNAL_LEN).map(|_| rng.random_range(-1.0..1.0)).collect();
        normalize_signal(&raw).unwrap()
    }

    #[test]
    fn normalize_examples() {
        let mut raw = vec![0.0; SIGNAL_LEN];
        raw[0] = 3.0;
        raw[1] = 4.0;
        let s = normalize_signal(&raw).unwrap();
        assert_eq!(s.original_norm, 5.0);
        assert!((s.amplitudes[0] - 0.6).abs() < 1e-15);
        assert!((s.amplitudes[1] - 0.8).abs() < 1e-15);

        let mut unit = vec![0.0; SIGNAL_LEN];
        unit[7] = 1.0;
        let s = normalize_signal(&unit).unwrap();
        assert_eq!(s.amplitudes, unit);
        assert_eq!(s.original_norm, 1.0);

        assert!(matches!(normalize_signal(&vec![0.0; SIGNAL_LEN]), Err(Error::ZeroSignal)));
    }

    #[test]
    fn basis_vector_needs_no_gates() {
        let mut e0 = vec![0.0; SIGNAL_LEN];
        e0[0] = 1.0;
        let (state, count) = exact_encode(&normalize_signal(&e0).unwrap());
        assert_eq!(count, 0);
        assert_eq!(state, PureState::zero(N_QUBITS));
    }

    #[test]
    fn exact_encoding_has_unit_fidelity() {
        let sig = random_signal(3);
        let (state, _) = exact_encode(&sig);
        let ket = PureState::from_real(&sig.amplitudes).unwrap();
        assert!((state_fidelity(&state, &ket).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn preparation_circuit_reproduces_state() {
        for seed in 0..4 {
            let sig = random_signal(seed);
            let circuit = state_preparation_circuit(&sig.amplitudes);
            let out = run_circuit(&circuit, &[], &PureState::zero(N_QUBITS)).unwrap();
            let f = state_fidelity(&out, &sig.to_state()).unwrap();
            assert!((f - 1.0).abs() < 1e-10, "fidelity {f}");
        }
        // small case with zeros and negative entries
        let amps = [0.5, -0.5, 0.0, 0.5, -0.5, 0.0, 0.0, 0.0];
        let circuit = state_preparation_circuit(&amps);
        let out = run_circuit(&circuit, &[], &PureState::zero(3)).unwrap();
        let target = PureState::from_real(&amps).unwrap();
        assert!((state_fidelity(&out, &target).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dense_signal_gate_count() {
        // every multiplexor survives pruning: 2 * (1 + sum_{k=1..7} 2^(k+1))
        let count = exact_encode(&random_signal(9)).1;
        assert_eq!(count, 1018);
        let positive: Vec<f64> = random_signal(9).amplitudes.iter().map(|a| a.abs()).collect();
        let count = exact_encode(&normalize_signal(&positive).unwrap()).1;
        assert_eq!(count, 509);
    }

    #[test]
    fn reverse_params_examples() {
        assert!(reverse_params(&[]).is_empty());
        assert_eq!(reverse_params(&[2.5]), vec![-2.5]);
        assert_eq!(reverse_params(&[1.0, 2.0, 3.0]), vec![-3.0, -2.0, -1.0]);
    }

    #[test]
    fn forward_then_inverse_returns_to_zero() {
        let ansatz = aae_ansatz(3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let theta_bar: Vec<f64> = (0..ansatz.n_params()).map(|_| rng.random_range(-3.0..3.0)).collect();
        let forward = ansatz.circuit();
        let psi = run_circuit(&forward, &reverse_params(&theta_bar), &PureState::zero(8)).unwrap();
        let back = run_circuit(&forward.inverse_template(), &theta_bar, &psi).unwrap();
        assert!((back.amplitudes()[0].norm_sqr() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn zero_target_trains_quickly() {
        let mut e0 = vec![0.0; SIGNAL_LEN];
        e0[0] = 1.0;
        let cfg = AaeConfig {
            iterations: 50,
            ..AaeConfig::default()
        };
        let model = train_aae(&normalize_signal(&e0).unwrap(), &cfg, 4).unwrap();
        assert!(model.achieved_fidelity >= 0.999, "{}", model.achieved_fidelity);
    }

    #[test]
    fn achieved_fidelity_matches_encoded_state() {
        let sig = random_signal(5);
        let cfg = AaeConfig {
            iterations: 40,
            ..AaeConfig::with_layers(2)
        };
        let model = train_aae(&sig, &cfg, 1).unwrap();
        let (state, gates) = aae_encode(&model).unwrap();
        assert_eq!(gates, 62);
        let (exact, _) = exact_encode(&sig);
        let f = state_fidelity(&state, &exact).unwrap();
        assert!((f - model.achieved_fidelity).abs() < 1e-9);

        // global phase on the target does not change fidelity
        let phased = PureState::from_amplitudes(
            exact.amplitudes().iter().map(|a| a * C64::from_polar(1.0, 0.7)).collect(),
        )
        .unwrap();
        assert!((state_fidelity(&state, &phased).unwrap() - f).abs() < 1e-12);

        let json = model.to_json().unwrap();
        assert_eq!(AAEModel::from_json(&json).unwrap(), model);
    }

    #[test]
    fn aae_gate_counts() {
        assert_eq!(aae_ansatz(5).gate_count(), 155);
        assert_eq!(aae_ansatz(20).gate_count(), 620);
    }

    proptest! {
        #[test]
        fn reverse_params_is_an_involution(v in prop::collection::vec(-10.0f64..10.0, 0..40)) {
            prop_assert_eq!(reverse_params(&reverse_params(&v)), v);
        }

        #[test]
        fn normalized_signals_have_unit_norm(v in prop::collection::vec(-5.0f64..5.0, SIGNAL_LEN), c in 0.01f64..100.0) {
            prop_assume!(v.iter().any(|x| x.abs() > 1e-6));
            let s = normalize_signal(&v).unwrap();
            let n: f64 = s.amplitudes.iter().map(|a| a * a).sum();
            prop_assert!((n - 1.0).abs() < 1e-10);
            let scaled: Vec<f64> = v.iter().map(|x| x * c).collect();
            let t = normalize_signal(&scaled).unwrap();
            for (a, b) in s.amplitudes.iter().zip(&t.amplitudes) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
