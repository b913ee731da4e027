//! The quantum variational classifier.
//!
//! Each of the `n_layers` layers applies RX, RZ, RY on all 8 wires and a ring
//! of 8 CNOTs. Class `k` reads `<Z>` on wire `k`; the logits go through a
//! softmax and cross-entropy.

use std::collections::HashMap;
use std::path::Path;

use num_complex::Complex64 as C64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoding::{
    aae_ansatz, normalize_signal, signal_seed, train_aae, AAEModel, AaeConfig, N_QUBITS,
};
use crate::error::{Error, Result};
use crate::optim::{Adam, AdamConfig};
use crate::scores::ClassScores;
use crate::sim::ansatz::{diagonal_operator, z_weights_diagonal};
use crate::sim::{Entangler, LayeredAnsatz, MixedState, PureState};

pub const QVC_CHECKPOINT_VERSION: u32 = 1;

/// `<Z>` logits live in `[-1, 1]`; at temperature 1 the softmax can never get
/// confident and training stalls well short of separating the classes.
pub const DEFAULT_TEMPERATURE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum EncoderKind {
    Exact,
    Aae { layers: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QVCModel {
    pub version: u32,
    pub n_layers: usize,
    pub n_classes: usize,
    pub encoder: EncoderKind,
    pub params: Vec<f64>,
    /// Softmax temperature applied to the `<Z>` logits.
    pub temperature: f64,
}

impl QVCModel {
    /// Angles drawn uniformly from `[-init_scale, init_scale]`.
    pub fn random(
        n_layers: usize,
        n_classes: usize,
        encoder: EncoderKind,
        init_scale: f64,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = n_layers * 3 * N_QUBITS;
        let params = (0..n)
            .map(|_| {
                if init_scale > 0.0 {
                    rng.random_range(-init_scale..=init_scale)
                } else {
                    0.0
                }
            })
            .collect();
        Self::with_params(n_layers, n_classes, encoder, params)
    }

    pub fn with_params(
        n_layers: usize,
        n_classes: usize,
        encoder: EncoderKind,
        params: Vec<f64>,
    ) -> Result<Self> {
        let m = Self {
            version: QVC_CHECKPOINT_VERSION,
            n_layers,
            n_classes,
            encoder,
            params,
            temperature: DEFAULT_TEMPERATURE,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 {
            return Err(Error::InvalidState("QVC needs at least one layer".into()));
        }
        if self.n_classes < 2 || self.n_classes > N_QUBITS {
            return Err(Error::InvalidState(format!(
                "{} classes; need 2..={N_QUBITS}",
                self.n_classes
            )));
        }
        let expected = 3 * N_QUBITS * self.n_layers;
        if self.params.len() != expected {
            return Err(Error::ParameterCount {
                expected,
                actual: self.params.len(),
            });
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidState(format!("temperature {}", self.temperature)));
        }
        Ok(())
    }

    pub fn ansatz(&self) -> LayeredAnsatz {
        LayeredAnsatz::new(N_QUBITS, self.n_layers, Entangler::Ring)
    }

    fn readout(&self, amps: &[C64]) -> ClassScores {
        let logits = (0..self.n_classes)
            .map(|k| {
                let mask = 1usize << (N_QUBITS - 1 - k);
                amps.iter()
                    .enumerate()
                    .map(|(i, a)| if i & mask == 0 { a.norm_sqr() } else { -a.norm_sqr() })
                    .sum::<f64>()
                    .clamp(-1.0, 1.0)
            })
            .collect();
        ClassScores::from_logits(logits, self.temperature)
    }

    /// Scores read from a circuit output state.
    pub fn scores_from_output(&self, out: &PureState) -> ClassScores {
        self.readout(out.amplitudes())
    }

    pub fn forward(&self, state: &PureState) -> Result<ClassScores> {
        let out = self.ansatz().forward(&self.params, state)?;
        Ok(self.readout(out.amplitudes()))
    }

    /// Density-matrix forward pass with depolarizing noise after every layer.
    pub fn forward_mixed(&self, state: &MixedState, noise_p: f64) -> Result<ClassScores> {
        let out = self.ansatz().forward_mixed(&self.params, state, noise_p)?;
        let logits = (0..self.n_classes)
            .map(|k| out.expectation_z(k))
            .collect::<Result<Vec<_>>>()?;
        Ok(ClassScores::from_logits(logits, self.temperature))
    }

    /// `(trainable parameters, encoder gates + 32 per layer)`.
    pub fn count_parameters_and_gates(&self, encoder_gates: usize) -> (usize, usize) {
        let a = self.ansatz();
        (a.n_params(), encoder_gates + a.gate_count())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingCheckpoint(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: QVCModel = serde_json::from_str(&text)?;
        if m.version != QVC_CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("QVC checkpoint version {}", m.version)));
        }
        m.validate()?;
        Ok(m)
    }
}

/// Encoded inputs for a whole dataset. Mixed states carry the depolarizing
/// probability that also applies inside the classifier.
#[derive(Debug, Clone)]
pub enum EncodedSet {
    Pure(Vec<PureState>),
    Mixed { states: Vec<MixedState>, noise_p: f64 },
}

impl EncodedSet {
    pub fn len(&self) -> usize {
        match self {
            EncodedSet::Pure(s) => s.len(),
            EncodedSet::Mixed { states, .. } => states.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn subset(&self, idx: &[usize]) -> EncodedSet {
        match self {
            EncodedSet::Pure(s) => EncodedSet::Pure(idx.iter().map(|&i| s[i].clone()).collect()),
            EncodedSet::Mixed { states, noise_p } => EncodedSet::Mixed {
                states: idx.iter().map(|&i| states[i].clone()).collect(),
                noise_p: *noise_p,
            },
        }
    }
}

/// AAE models keyed by their content-derived seed.
pub type AaeCache = HashMap<u64, AAEModel>;

/// Turns raw signals into classifier inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignalEncoder {
    pub kind: EncoderKind,
    /// Optimizer settings for AAE; its layer count is taken from `kind`.
    pub aae: AaeConfig,
    pub seed: u64,
    /// Depolarizing probability; positive values select the density-matrix
    /// backend.
    pub noise_p: f64,
}

impl SignalEncoder {
    pub fn exact() -> Self {
        Self {
            kind: EncoderKind::Exact,
            aae: AaeConfig::default(),
            seed: 0,
            noise_p: 0.0,
        }
    }

    pub fn aae(layers: usize, aae: AaeConfig, seed: u64) -> Self {
        Self {
            kind: EncoderKind::Aae { layers },
            aae,
            seed,
            noise_p: 0.0,
        }
    }

    pub fn with_noise(self, noise_p: f64) -> Self {
        Self { noise_p, ..self }
    }

    fn aae_config(&self, layers: usize) -> AaeConfig {
        AaeConfig {
            n_layers: layers,
            ..self.aae
        }
    }

    /// Trains whatever AAE models are missing from `cache`. Every signal starts
    /// from the same initial angles, so nearby signals get nearby circuits.
    pub fn fill_cache(&self, signals: &[&[f64]], cache: &mut AaeCache) -> Result<()> {
        let EncoderKind::Aae { layers } = self.kind else {
            return Ok(());
        };
        let cfg = self.aae_config(layers);
        let mut todo = Vec::new();
        for raw in signals {
            let sig = normalize_signal(raw)?;
            let key = self.cache_key(&sig.amplitudes, layers);
            if !cache.contains_key(&key) && !todo.iter().any(|(k, _)| *k == key) {
                todo.push((key, sig));
            }
        }
        let trained: Vec<(u64, AAEModel)> = todo
            .into_par_iter()
            .map(|(key, sig)| Ok((key, train_aae(&sig, &cfg, self.seed)?)))
            .collect::<Result<_>>()?;
        cache.extend(trained);
        Ok(())
    }

    fn cache_key(&self, amplitudes: &[f64], layers: usize) -> u64 {
        signal_seed(self.seed ^ (layers as u64).rotate_left(32), amplitudes)
    }

    pub fn encode_set(&self, signals: &[&[f64]], cache: &mut AaeCache) -> Result<EncodedSet> {
        self.encode_with_backend(signals, cache, self.noise_p > 0.0)
    }

    /// Like [`encode_set`](Self::encode_set) but picks the backend explicitly;
    /// `density = true` yields mixed states even at zero noise.
    pub fn encode_with_backend(
        &self,
        signals: &[&[f64]],
        cache: &mut AaeCache,
        density: bool,
    ) -> Result<EncodedSet> {
        self.fill_cache(signals, cache)?;
        let cache = &*cache;
        match self.kind {
            EncoderKind::Exact => {
                let states: Vec<PureState> = signals
                    .par_iter()
                    .map(|raw| Ok(normalize_signal(raw)?.to_state()))
                    .collect::<Result<_>>()?;
                if density {
                    Ok(EncodedSet::Mixed {
                        states: states.iter().map(MixedState::from_pure).collect(),
                        noise_p: self.noise_p,
                    })
                } else {
                    Ok(EncodedSet::Pure(states))
                }
            }
            EncoderKind::Aae { layers } => {
                let ansatz = aae_ansatz(layers);
                let models: Vec<&AAEModel> = signals
                    .iter()
                    .map(|raw| {
                        let sig = normalize_signal(raw)?;
                        Ok(&cache[&self.cache_key(&sig.amplitudes, layers)])
                    })
                    .collect::<Result<_>>()?;
                if density {
                    let zero = MixedState::zero(N_QUBITS);
                    let states = models
                        .par_iter()
                        .map(|m| ansatz.forward_mixed(&m.forward_params(), &zero, self.noise_p))
                        .collect::<Result<_>>()?;
                    Ok(EncodedSet::Mixed {
                        states,
                        noise_p: self.noise_p,
                    })
                } else {
                    let zero = PureState::zero(N_QUBITS);
                    let states = models
                        .par_iter()
                        .map(|m| ansatz.forward(&m.forward_params(), &zero))
                        .collect::<Result<_>>()?;
                    Ok(EncodedSet::Pure(states))
                }
            }
        }
    }
}

fn check_labels(labels: &[usize], n: usize, n_classes: usize) -> Result<()> {
    if labels.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} labels for {n} inputs",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(Error::LabelOutOfRange {
            label: bad,
            n_classes,
        });
    }
    Ok(())
}

/// `Phi^dag(Z_k)` for every class, for cheap noisy readout.
fn heisenberg_observables(model: &QVCModel, noise_p: f64) -> Result<Vec<Vec<C64>>> {
    let ansatz = model.ansatz();
    let prep = ansatz.prepare(&model.params)?;
    Ok((0..model.n_classes)
        .into_par_iter()
        .map(|k| {
            let mut w = vec![0.0; N_QUBITS];
            w[k] = 1.0;
            prep.heisenberg(diagonal_operator(&z_weights_diagonal(N_QUBITS, &w)), noise_p)
        })
        .collect())
}

/// `Tr(O rho) = sum_ij O_ij rho_ji`.
fn trace_product(o: &[C64], rho: &[C64], dim: usize) -> f64 {
    let mut acc = 0.0;
    for i in 0..dim {
        for j in 0..dim {
            acc += (o[i * dim + j] * rho[j * dim + i]).re;
        }
    }
    acc
}

pub fn predict_scores(model: &QVCModel, set: &EncodedSet) -> Result<Vec<ClassScores>> {
    match set {
        EncodedSet::Pure(states) => states.par_iter().map(|s| model.forward(s)).collect(),
        EncodedSet::Mixed { states, noise_p } => {
            let obs = heisenberg_observables(model, *noise_p)?;
            let dim = 1usize << N_QUBITS;
            Ok(states
                .par_iter()
                .map(|rho| {
                    let logits = obs
                        .iter()
                        .map(|o| trace_product(o, rho.matrix(), dim).clamp(-1.0, 1.0))
                        .collect();
                    ClassScores::from_logits(logits, model.temperature)
                })
                .collect())
        }
    }
}

pub fn evaluate_accuracy(model: &QVCModel, set: &EncodedSet, labels: &[usize]) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    check_labels(labels, set.len(), model.n_classes)?;
    let scores = predict_scores(model, set)?;
    Ok(accuracy(&scores, labels))
}

pub fn accuracy(scores: &[ClassScores], labels: &[usize]) -> f64 {
    let correct = scores
        .iter()
        .zip(labels)
        .filter(|(s, &l)| s.argmax() == l)
        .count();
    correct as f64 / labels.len() as f64
}

/// Mean cross-entropy over `idx` and its gradient with respect to the
/// classifier angles.
pub fn batch_loss_and_gradient(
    model: &QVCModel,
    set: &EncodedSet,
    labels: &[usize],
    idx: &[usize],
) -> Result<(f64, Vec<f64>)> {
    let ansatz = model.ansatz();
    let prep = ansatz.prepare(&model.params)?;
    let n_params = ansatz.n_params();
    let scale = 1.0 / idx.len() as f64;
    match set {
        EncodedSet::Pure(states) => {
            let per_sample: Vec<(f64, Vec<f64>)> = idx
                .par_iter()
                .map(|&i| {
                    let out = prep.forward(states[i].amplitudes().to_vec());
                    let scores = model.readout(&out);
                    let g = scores.logit_gradient(labels[i], model.temperature);
                    let diag = z_weights_diagonal(N_QUBITS, &padded(&g));
                    // lambda = dL/d conj(psi) = sum_k g_k Z_k psi
                    let lambda: Vec<C64> = out.iter().zip(&diag).map(|(a, d)| a * d).collect();
                    let (grads, _) = prep.backward(out, lambda);
                    (scores.cross_entropy(labels[i]), grads)
                })
                .collect();
            let mut loss = 0.0;
            let mut grad = vec![0.0; n_params];
            for (l, g) in per_sample {
                loss += l;
                for (acc, x) in grad.iter_mut().zip(g) {
                    *acc += x;
                }
            }
            Ok((loss * scale, grad.into_iter().map(|g| g * scale).collect()))
        }
        EncodedSet::Mixed { states, noise_p } => {
            let batch = set.subset(idx);
            let scores = predict_scores(model, &batch)?;
            let loss: f64 = scores
                .iter()
                .zip(idx)
                .map(|(s, &i)| s.cross_entropy(labels[i]))
                .sum();
            let dim = 1usize << N_QUBITS;
            // The channel is linear, so sum_s g_sk Tr(Z_k Phi(rho_s)) is one
            // expectation on the operator R_k = sum_s g_sk rho_s.
            let grads: Vec<Vec<f64>> = (0..model.n_classes)
                .into_par_iter()
                .map(|k| {
                    let mut r = vec![C64::new(0.0, 0.0); dim * dim];
                    for (s, &i) in scores.iter().zip(idx) {
                        let g = s.logit_gradient(labels[i], model.temperature)[k] * scale;
                        for (acc, x) in r.iter_mut().zip(states[i].matrix()) {
                            *acc += x * g;
                        }
                    }
                    let mut w = vec![0.0; N_QUBITS];
                    w[k] = 1.0;
                    let m = diagonal_operator(&z_weights_diagonal(N_QUBITS, &w));
                    prep.gradient_density(r, m, *noise_p)
                })
                .collect();
            let mut grad = vec![0.0; n_params];
            for g in grads {
                for (acc, x) in grad.iter_mut().zip(g) {
                    *acc += x;
                }
            }
            Ok((loss * scale, grad))
        }
    }
}

fn padded(g: &[f64]) -> Vec<f64> {
    let mut w = g.to_vec();
    w.resize(N_QUBITS, 0.0);
    w
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QvcTrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stop after this many epochs without a validation-loss improvement.
    pub patience: usize,
    /// Fraction of each class held out for validation.
    pub val_fraction: f64,
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for QvcTrainConfig {
    fn default() -> Self {
        Self {
            lr: 5e-3,
            batch_size: 256,
            epochs: 30,
            patience: 5,
            val_fraction: 0.1,
            init_scale: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

/// Stratified holdout of `fraction` of each class. Returns (train, val)
/// index lists in ascending order.
pub fn stratified_holdout(
    labels: &[usize],
    n_classes: usize,
    fraction: f64,
    seed: u64,
) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for c in 0..n_classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        idx.shuffle(&mut rng);
        let n_val = ((idx.len() as f64 * fraction).round() as usize).min(idx.len().saturating_sub(1));
        val.extend_from_slice(&idx[..n_val]);
        train.extend_from_slice(&idx[n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

/// Mini-batch Adam on the mean cross-entropy. A stratified validation split is
/// carved from `set`; the parameters with the best validation loss are kept.
pub fn train_qvc(
    model: &mut QVCModel,
    set: &EncodedSet,
    labels: &[usize],
    cfg: &QvcTrainConfig,
) -> Result<Vec<EpochRecord>> {
    if set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    check_labels(labels, set.len(), model.n_classes)?;
    model.validate()?;
    let (train_idx, val_idx) = stratified_holdout(labels, model.n_classes, cfg.val_fraction, cfg.seed);
    let val_set = set.subset(&val_idx);
    let val_labels: Vec<usize> = val_idx.iter().map(|&i| labels[i]).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut opt = Adam::new(AdamConfig::with_lr(cfg.lr), model.params.len());
    let mut history = Vec::new();
    let mut best = (f64::INFINITY, model.params.clone());
    let mut stale = 0;
    let mut order = train_idx.clone();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size.max(1)) {
            let (loss, grad) = batch_loss_and_gradient(model, set, labels, batch)?;
            loss_sum += loss * batch.len() as f64;
            opt.step(&mut model.params, &grad);
        }
        let train_loss = loss_sum / order.len() as f64;
        let (val_loss, val_acc) = if val_set.is_empty() {
            (train_loss, f64::NAN)
        } else {
            let scores = predict_scores(model, &val_set)?;
            let l = scores
                .iter()
                .zip(&val_labels)
                .map(|(s, &y)| s.cross_entropy(y))
                .sum::<f64>()
                / val_labels.len() as f64;
            (l, accuracy(&scores, &val_labels))
        };
        history.push(EpochRecord {
            epoch: epoch + 1,
            train_loss,
            val_loss,
            val_acc,
        });
        if val_loss < best.0 {
            best = (val_loss, model.params.clone());
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    model.params = best.1;
    Ok(history)
}

pub fn write_loss_history(history: &[EpochRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "train_loss", "val_loss", "val_acc"])?;
    for r in history {
        w.write_record([
            r.epoch.to_string(),
            format!("{:.8}", r.train_loss),
            format!("{:.8}", r.val_loss),
            format!("{:.6}", r.val_acc),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Cross-entropy scores and its gradient with respect to the raw signal,
/// through normalization and amplitude injection. Needs exact encoding.
pub fn qvc_loss_and_input_gradient(
    model: &QVCModel,
    raw: &[f64],
    label: usize,
) -> Result<(ClassScores, Vec<f64>)> {
    if model.encoder != EncoderKind::Exact {
        return Err(Error::InvalidAttack(
            "input gradients need an exactly encoded classifier".into(),
        ));
    }
    if label >= model.n_classes {
        return Err(Error::LabelOutOfRange {
            label,
            n_classes: model.n_classes,
        });
    }
    let sig = normalize_signal(raw)?;
    let ansatz = model.ansatz();
    let prep = ansatz.prepare(&model.params)?;
    let input: Vec<C64> = sig.amplitudes.iter().map(|&a| C64::new(a, 0.0)).collect();
    let out = prep.forward(input);
    let scores = model.readout(&out);
    let g = scores.logit_gradient(label, model.temperature);
    let diag = z_weights_diagonal(N_QUBITS, &padded(&g));
    let lambda: Vec<C64> = out.iter().zip(&diag).map(|(a, d)| a * d).collect();
    let (_, lam_in) = prep.backward(out, lambda);
    // amplitudes are real, so dL/du = 2 Re(lambda); then through u = x / |x|
    let du: Vec<f64> = lam_in.iter().map(|l| 2.0 * l.re).collect();
    let u = &sig.amplitudes;
    let dot: f64 = u.iter().zip(&du).map(|(a, b)| a * b).sum();
    let grad = u
        .iter()
        .zip(&du)
        .map(|(ui, di)| (di - dot * ui) / sig.original_norm)
        .collect();
    Ok((scores, grad))
}

pub fn qvc_input_gradient(model: &QVCModel, raw: &[f64], label: usize) -> Result<Vec<f64>> {
    Ok(qvc_loss_and_input_gradient(model, raw, label)?.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::Gate;

    fn raw_signal(seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..256).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn readout_examples() {
        let zero_params = QVCModel::with_params(1, 2, EncoderKind::Exact, vec![0.0; 24]).unwrap();
        let s = zero_params.forward(&PureState::zero(8)).unwrap();
        assert_eq!(s.logits, vec![1.0, 1.0]);
        assert_eq!(s.probabilities, vec![0.5, 0.5]);

        let flipped = PureState::zero(8).apply_gate(&Gate::ry(0, std::f64::consts::PI)).unwrap();
        let s = zero_params.scores_from_output(&flipped);
        assert!((s.logits[0] + 1.0).abs() < 1e-12 && (s.logits[1] - 1.0).abs() < 1e-12);
        assert_eq!(s.argmax(), 1);

        // RY(pi) on wires 0 and 1 before the ring leaves only wire 0 flipped
        let mut params = vec![0.0; 24];
        params[2] = std::f64::consts::PI;
        params[5] = std::f64::consts::PI;
        let m = QVCModel::with_params(1, 2, EncoderKind::Exact, params).unwrap();
        let s = m.forward(&PureState::zero(8)).unwrap();
        assert!((s.logits[0] + 1.0).abs() < 1e-12 && (s.logits[1] - 1.0).abs() < 1e-12);

        let random = QVCModel::random(3, 3, EncoderKind::Exact, 3.0, 2).unwrap();
        let s = random.forward(&flipped).unwrap();
        assert!((s.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn resource_counts() {
        let m = QVCModel::random(30, 2, EncoderKind::Exact, 1.0, 0).unwrap();
        assert_eq!(m.count_parameters_and_gates(973), (720, 1933));
        assert_eq!(m.count_parameters_and_gates(155), (720, 1115));
        let one = QVCModel::random(1, 2, EncoderKind::Exact, 1.0, 0).unwrap();
        assert_eq!(one.count_parameters_and_gates(0), (24, 32));
    }

    #[test]
    fn batch_gradient_matches_finite_differences() {
        let model = QVCModel::random(2, 3, EncoderKind::Exact, 3.0, 5).unwrap();
        let signals: Vec<Vec<f64>> = (0..4).map(raw_signal).collect();
        let refs: Vec<&[f64]> = signals.iter().map(|s| s.as_slice()).collect();
        let set = SignalEncoder::exact().encode_set(&refs, &mut AaeCache::new()).unwrap();
        let labels = vec![0, 1, 2, 1];
        let idx = vec![0, 1, 2, 3];
        let (_, grad) = batch_loss_and_gradient(&model, &set, &labels, &idx).unwrap();
        for i in [0, 5, 17, 30, 47] {
            let mut up = model.clone();
            up.params[i] += 1e-5;
            let mut down = model.clone();
            down.params[i] -= 1e-5;
            let fd = (batch_loss_and_gradient(&up, &set, &labels, &idx).unwrap().0
                - batch_loss_and_gradient(&down, &set, &labels, &idx).unwrap().0)
                / 2e-5;
            assert!((fd - grad[i]).abs() <= 1e-5 * grad[i].abs().max(1e-3), "{i}: {fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn mixed_backend_matches_pure_without_noise() {
        let model = QVCModel::random(2, 3, EncoderKind::Exact, 3.0, 6).unwrap();
        let signals: Vec<Vec<f64>> = (0..3).map(raw_signal).collect();
        let refs: Vec<&[f64]> = signals.iter().map(|s| s.as_slice()).collect();
        let pure = SignalEncoder::exact().encode_set(&refs, &mut AaeCache::new()).unwrap();
        let EncodedSet::Pure(states) = &pure else { panic!() };
        let mixed = EncodedSet::Mixed {
            states: states.iter().map(MixedState::from_pure).collect(),
            noise_p: 0.0,
        };
        let a = predict_scores(&model, &pure).unwrap();
        let b = predict_scores(&model, &mixed).unwrap();
        for (x, y) in a.iter().zip(&b) {
            for (p, q) in x.logits.iter().zip(&y.logits) {
                assert!((p - q).abs() < 1e-10);
            }
        }
        let direct = model.forward_mixed(&MixedState::from_pure(&states[0]), 0.0).unwrap();
        assert!((direct.logits[1] - a[0].logits[1]).abs() < 1e-10);

        let labels = vec![0, 2, 1];
        let (la, ga) = batch_loss_and_gradient(&model, &pure, &labels, &[0, 1, 2]).unwrap();
        let (lb, gb) = batch_loss_and_gradient(&model, &mixed, &labels, &[0, 1, 2]).unwrap();
        assert!((la - lb).abs() < 1e-10);
        for (x, y) in ga.iter().zip(&gb) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn noisy_gradient_matches_finite_differences() {
        let model = QVCModel::random(2, 2, EncoderKind::Exact, 3.0, 8).unwrap();
        let signals: Vec<Vec<f64>> = (0..2).map(raw_signal).collect();
        let refs: Vec<&[f64]> = signals.iter().map(|s| s.as_slice()).collect();
        let set = SignalEncoder::exact().with_noise(0.05).encode_set(&refs, &mut AaeCache::new()).unwrap();
        let labels = vec![1, 0];
        let (_, grad) = batch_loss_and_gradient(&model, &set, &labels, &[0, 1]).unwrap();
        for i in [0, 11, 29, 46] {
            let mut up = model.clone();
            up.params[i] += 1e-5;
            let mut down = model.clone();
            down.params[i] -= 1e-5;
            let fd = (batch_loss_and_gradient(&up, &set, &labels, &[0, 1]).unwrap().0
                - batch_loss_and_gradient(&down, &set, &labels, &[0, 1]).unwrap().0)
                / 2e-5;
            assert!((fd - grad[i]).abs() <= 1e-5 * grad[i].abs().max(1e-3));
        }
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let model = QVCModel::random(3, 2, EncoderKind::Exact, 3.0, 9).unwrap();
        let x = raw_signal(10);
        let (_, grad) = qvc_loss_and_input_gradient(&model, &x, 1).unwrap();
        let loss = |v: &[f64]| {
            let s = model.forward(&normalize_signal(v).unwrap().to_state()).unwrap();
            s.cross_entropy(1)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..16 {
            let i = rng.random_range(0..256);
            let mut up = x.clone();
            up[i] += 1e-5;
            let mut down = x.clone();
            down[i] -= 1e-5;
            let fd = (loss(&up) - loss(&down)) / 2e-5;
            assert!((fd - grad[i]).abs() <= 1e-4 * grad[i].abs().max(1e-4), "{i}: {fd} vs {}", grad[i]);
        }
        // scale invariance: gradient orthogonal to the signal
        let dot: f64 = grad.iter().zip(&x).map(|(g, v)| g * v).sum();
        assert!(dot.abs() < 1e-6);

        let aae = QVCModel::random(1, 2, EncoderKind::Aae { layers: 5 }, 1.0, 0).unwrap();
        assert!(qvc_input_gradient(&aae, &x, 0).is_err());
        assert!(matches!(qvc_input_gradient(&model, &vec![0.0; 256], 0), Err(Error::ZeroSignal)));
    }

    #[test]
    fn prediction_is_scale_invariant() {
        let model = QVCModel::random(2, 3, EncoderKind::Exact, 3.0, 4).unwrap();
        let x = raw_signal(1);
        let scaled: Vec<f64> = x.iter().map(|v| v * 7.5).collect();
        let refs: Vec<&[f64]> = vec![&x, &scaled];
        let set = SignalEncoder::exact().encode_set(&refs, &mut AaeCache::new()).unwrap();
        let s = predict_scores(&model, &set).unwrap();
        assert_eq!(s[0].argmax(), s[1].argmax());
    }

    #[test]
    fn single_sample_memorization() {
        let x = raw_signal(2);
        let refs: Vec<&[f64]> = vec![&x];
        let set = SignalEncoder::exact().encode_set(&refs, &mut AaeCache::new()).unwrap();
        let cfg = QvcTrainConfig {
            lr: 0.05,
            epochs: 150,
            patience: 150,
            val_fraction: 0.0,
            ..QvcTrainConfig::default()
        };
        // with unit temperature the <Z> logits are bounded, so the loss is
        // bounded below by ln(1 + e^-2)
        let floor = (1.0 + (-2.0f64).exp()).ln();
        let mut model = QVCModel::random(30, 2, EncoderKind::Exact, 3.0, 1).unwrap();
        let h = train_qvc(&mut model, &set, &[1], &cfg).unwrap();
        assert!(h.last().unwrap().train_loss < floor + 0.05);

        let mut sharp = QVCModel::random(30, 2, EncoderKind::Exact, 3.0, 1).unwrap();
        sharp.temperature = 0.25;
        let h = train_qvc(&mut sharp, &set, &[1], &cfg).unwrap();
        assert!(h.last().unwrap().train_loss < 0.05);
    }

    #[test]
    fn accuracy_examples() {
        let s = |l: Vec<f64>| ClassScores::from_logits(l, 1.0);
        let scores = vec![s(vec![1.0, 0.0]), s(vec![0.0, 1.0])];
        assert_eq!(accuracy(&scores, &[0, 1]), 1.0);
        // constant classifier on a balanced set
        let constant = vec![s(vec![1.0, 0.0]); 4];
        assert_eq!(accuracy(&constant, &[0, 1, 0, 1]), 0.5);
        let model = QVCModel::random(1, 2, EncoderKind::Exact, 1.0, 0).unwrap();
        assert!(matches!(
            evaluate_accuracy(&model, &EncodedSet::Pure(vec![]), &[]),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("qvc.json");
        let m = QVCModel::random(2, 3, EncoderKind::Aae { layers: 5 }, 1.0, 3).unwrap();
        m.save(&path).unwrap();
        assert_eq!(QVCModel::load(&path).unwrap(), m);
        assert!(matches!(
            QVCModel::load(&dir.path().join("missing.json")),
            Err(Error::MissingCheckpoint(_))
        ));
    }
}
