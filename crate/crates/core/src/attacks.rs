//! FGSM, PGD and universal perturbations under a perturbation-to-signal
//! power budget, plus the classifier interface they attack.

use std::sync::Mutex;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cnn::CNNModel;
use crate::error::{Error, Result};
use crate::qvc::{
    predict_scores, qvc_input_gradient, AaeCache, EncoderKind, QVCModel, SignalEncoder,
};

/// Anything that labels raw signals.
pub trait Classifier: Sync {
    fn n_classes(&self) -> usize;
    fn predict(&self, xs: &[&[f64]]) -> Result<Vec<usize>>;
}

/// A classifier that also exposes the cross-entropy gradient with respect to
/// its raw input.
pub trait GradientOracle: Classifier {
    fn input_gradient(&self, x: &[f64], label: usize) -> Result<Vec<f64>>;
}

impl Classifier for CNNModel {
    fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn predict(&self, xs: &[&[f64]]) -> Result<Vec<usize>> {
        Ok(CNNModel::predict(self, xs)?.iter().map(|s| s.argmax()).collect())
    }
}

impl GradientOracle for CNNModel {
    fn input_gradient(&self, x: &[f64], label: usize) -> Result<Vec<f64>> {
        Ok(self.backward(x, label)?.1)
    }
}

/// A trained QVC together with the encoder that feeds it. AAE models for
/// signals seen before are cached.
pub struct QvcClassifier {
    pub model: QVCModel,
    pub encoder: SignalEncoder,
    cache: Mutex<AaeCache>,
    surrogate: QVCModel,
}

impl QvcClassifier {
    pub fn new(model: QVCModel, encoder: SignalEncoder) -> Self {
        Self::with_cache(model, encoder, AaeCache::new())
    }

    pub fn with_cache(model: QVCModel, encoder: SignalEncoder, cache: AaeCache) -> Self {
        let surrogate = QVCModel {
            encoder: EncoderKind::Exact,
            ..model.clone()
        };
        Self {
            model,
            encoder,
            cache: Mutex::new(cache),
            surrogate,
        }
    }

    pub fn into_cache(self) -> AaeCache {
        self.cache.into_inner().unwrap_or_else(|e| e.into_inner())
    }
}

impl Classifier for QvcClassifier {
    fn n_classes(&self) -> usize {
        self.model.n_classes
    }

    fn predict(&self, xs: &[&[f64]]) -> Result<Vec<usize>> {
        let mut cache = self.cache.lock().unwrap_or_else(|e| e.into_inner());
        let set = self.encoder.encode_set(xs, &mut cache)?;
        drop(cache);
        Ok(predict_scores(&self.model, &set)?
            .iter()
            .map(|s| s.argmax())
            .collect())
    }
}

impl GradientOracle for QvcClassifier {
    /// AAE circuits are fitted per signal and have no input derivative, so the
    /// classifier is differentiated through exact amplitude encoding, which
    /// the AAE state approximates.
    fn input_gradient(&self, x: &[f64], label: usize) -> Result<Vec<f64>> {
        qvc_input_gradient(&self.surrogate, x, label)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackKind {
    Fgsm,
    Pgd,
    Uap,
}

impl AttackKind {
    pub fn name(self) -> &'static str {
        match self {
            AttackKind::Fgsm => "fgsm",
            AttackKind::Pgd => "pgd",
            AttackKind::Uap => "uap",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    pub kind: AttackKind,
    pub psr_db: f64,
    #[serde(default = "default_pgd_iters")]
    pub pgd_iters: usize,
    #[serde(default = "default_pgd_alpha")]
    pub pgd_alpha_fraction: f64,
    #[serde(default = "default_pgd_random_init")]
    pub pgd_random_init: bool,
    #[serde(default = "default_uap_subset")]
    pub uap_subset_size: usize,
}

fn default_pgd_iters() -> usize {
    10
}
fn default_pgd_alpha() -> f64 {
    0.25
}
fn default_pgd_random_init() -> bool {
    true
}
fn default_uap_subset() -> usize {
    100
}

impl AttackConfig {
    pub fn new(kind: AttackKind, psr_db: f64) -> Self {
        Self {
            kind,
            psr_db,
            pgd_iters: default_pgd_iters(),
            pgd_alpha_fraction: default_pgd_alpha(),
            pgd_random_init: default_pgd_random_init(),
            uap_subset_size: default_uap_subset(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.psr_db.is_finite() {
            return Err(Error::InvalidAttack(format!("psr_db {}", self.psr_db)));
        }
        if self.pgd_iters == 0 {
            return Err(Error::InvalidAttack("pgd_iters must be at least 1".into()));
        }
        if !(self.pgd_alpha_fraction > 0.0 && self.pgd_alpha_fraction <= 1.0) {
            return Err(Error::InvalidAttack(format!(
                "pgd_alpha_fraction {} outside (0, 1]",
                self.pgd_alpha_fraction
            )));
        }
        if self.kind == AttackKind::Uap && self.uap_subset_size < 2 {
            return Err(Error::InvalidAttack("uap_subset_size must be at least 2".into()));
        }
        Ok(())
    }
}

/// Perturbed copies of a set of signals. The clean inputs are untouched.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackResult {
    pub perturbations: Vec<Vec<f64>>,
    pub adversarial: Vec<Vec<f64>>,
    /// `10 log10` of mean perturbation power over mean signal power.
    pub realized_psr_db: f64,
    /// Per-sample flag: the source model's label changed.
    pub fooled: Vec<bool>,
}

impl AttackResult {
    pub fn adversarial_refs(&self) -> Vec<&[f64]> {
        self.adversarial.iter().map(|v| v.as_slice()).collect()
    }
}

pub fn signal_power(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

/// L-inf radius whose sign perturbation has power `10^(psr/10) * S`.
pub fn psr_to_epsilon(signal_power: f64, psr_db: f64) -> Result<f64> {
    if !(signal_power > 0.0) {
        return Err(Error::NonPositivePower(signal_power));
    }
    Ok(signal_power.sqrt() * 10f64.powf(psr_db / 20.0))
}

/// L2 norm of a `dim`-long perturbation with power `10^(psr/10) * S`.
pub fn psr_to_l2(signal_power: f64, psr_db: f64, dim: usize) -> Result<f64> {
    if !(signal_power > 0.0) {
        return Err(Error::NonPositivePower(signal_power));
    }
    Ok((dim as f64 * signal_power * 10f64.powf(psr_db / 10.0)).sqrt())
}

/// Realized perturbation-to-signal ratio in dB; `-inf` for `r = 0`.
pub fn measure_psr(x: &[f64], r: &[f64]) -> Result<f64> {
    let s = signal_power(x);
    if s == 0.0 {
        return Err(Error::ZeroSignal);
    }
    Ok(10.0 * (signal_power(r) / s).log10())
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `r = eps * sign(grad)`.
pub fn fgsm_perturbation(oracle: &dyn GradientOracle, x: &[f64], y: usize, eps: f64) -> Result<Vec<f64>> {
    let g = oracle.input_gradient(x, y)?;
    Ok(g.iter().map(|&v| eps * sign(v)).collect())
}

/// Projected sign-gradient ascent inside the L-inf ball of radius `eps`.
pub fn pgd_perturbation(
    oracle: &dyn GradientOracle,
    x: &[f64],
    y: usize,
    eps: f64,
    alpha: f64,
    iters: usize,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<Vec<f64>> {
    let mut r: Vec<f64> = match rng {
        Some(rng) if eps > 0.0 => (0..x.len()).map(|_| rng.random_range(-eps..=eps)).collect(),
        _ => vec![0.0; x.len()],
    };
    let mut xt: Vec<f64> = x.iter().zip(&r).map(|(a, b)| a + b).collect();
    for _ in 0..iters {
        let g = oracle.input_gradient(&xt, y)?;
        for i in 0..x.len() {
            r[i] = (r[i] + alpha * sign(g[i])).clamp(-eps, eps);
            xt[i] = x[i] + r[i];
        }
    }
    Ok(r)
}

/// First right singular vector of the row-normalized gradient matrix.
pub fn principal_direction(gradients: &[Vec<f64>]) -> Result<Vec<f64>> {
    let dim = gradients.first().map_or(0, |g| g.len());
    let rows: Vec<Vec<f64>> = gradients
        .iter()
        .filter_map(|g| {
            let n = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            (n > 0.0).then(|| g.iter().map(|v| v / n).collect())
        })
        .collect();
    if rows.is_empty() {
        return Err(Error::AllZeroGradients);
    }
    let x = DMatrix::from_fn(rows.len(), dim, |i, j| rows[i][j]);
    let svd = x.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let best = svd.singular_values.imax();
    Ok(v_t.row(best).iter().copied().collect())
}

/// One input-agnostic perturbation of L2 norm `p_max`, picked between
/// `+v1` and `-v1` by the error it causes on the crafting subset.
pub fn uap_perturbation(
    oracle: &dyn GradientOracle,
    xs: &[&[f64]],
    ys: &[usize],
    p_max: f64,
) -> Result<Vec<f64>> {
    if xs.len() < 2 {
        return Err(Error::InvalidAttack("UAP needs at least 2 crafting samples".into()));
    }
    let grads: Vec<Vec<f64>> = xs
        .par_iter()
        .zip(ys)
        .map(|(x, &y)| oracle.input_gradient(x, y))
        .collect::<Result<_>>()?;
    let v = principal_direction(&grads)?;
    let mut best: Option<(usize, Vec<f64>)> = None;
    for s in [1.0, -1.0] {
        let r: Vec<f64> = v.iter().map(|a| s * p_max * a).collect();
        let adv: Vec<Vec<f64>> = xs.iter().map(|x| add(x, &r)).collect();
        let refs: Vec<&[f64]> = adv.iter().map(|a| a.as_slice()).collect();
        let wrong = oracle
            .predict(&refs)?
            .iter()
            .zip(ys)
            .filter(|(p, y)| p != y)
            .count();
        if best.as_ref().is_none_or(|(w, _)| wrong > *w) {
            best = Some((wrong, r));
        }
    }
    Ok(best.expect("two candidates").1)
}

fn add(x: &[f64], r: &[f64]) -> Vec<f64> {
    x.iter().zip(r).map(|(a, b)| a + b).collect()
}

/// Crafts perturbations for every `(xs[i], ys[i])` on `oracle` at the
/// configured budget. Sample `i` of a PGD run draws its random start from
/// stream `i` of `seed`; the UAP crafting subset is a seeded sample of the
/// inputs.
pub fn craft(
    oracle: &dyn GradientOracle,
    xs: &[&[f64]],
    ys: &[usize],
    cfg: &AttackConfig,
    seed: u64,
) -> Result<AttackResult> {
    cfg.validate()?;
    if xs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} labels for {} inputs",
            ys.len(),
            xs.len()
        )));
    }
    let perturbations: Vec<Vec<f64>> = match cfg.kind {
        AttackKind::Fgsm => xs
            .par_iter()
            .zip(ys)
            .map(|(x, &y)| fgsm_perturbation(oracle, x, y, psr_to_epsilon(signal_power(x), cfg.psr_db)?))
            .collect::<Result<_>>()?,
        AttackKind::Pgd => xs
            .par_iter()
            .zip(ys)
            .enumerate()
            .map(|(i, (x, &y))| {
                let eps = psr_to_epsilon(signal_power(x), cfg.psr_db)?;
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i as u64);
                pgd_perturbation(
                    oracle,
                    x,
                    y,
                    eps,
                    cfg.pgd_alpha_fraction * eps,
                    cfg.pgd_iters,
                    cfg.pgd_random_init.then_some(&mut rng),
                )
            })
            .collect::<Result<_>>()?,
        AttackKind::Uap => {
            let mean_power = xs.iter().map(|x| signal_power(x)).sum::<f64>() / xs.len() as f64;
            let p_max = psr_to_l2(mean_power, cfg.psr_db, xs[0].len())?;
            let mut idx: Vec<usize> = (0..xs.len()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            use rand::seq::SliceRandom;
            idx.shuffle(&mut rng);
            idx.truncate(cfg.uap_subset_size.min(xs.len()).max(2));
            idx.sort_unstable();
            let sub_x: Vec<&[f64]> = idx.iter().map(|&i| xs[i]).collect();
            let sub_y: Vec<usize> = idx.iter().map(|&i| ys[i]).collect();
            let r = uap_perturbation(oracle, &sub_x, &sub_y, p_max)?;
            vec![r; xs.len()]
        }
    };
    let adversarial: Vec<Vec<f64>> = xs.iter().zip(&perturbations).map(|(x, r)| add(x, r)).collect();
    let p_sum: f64 = perturbations.iter().map(|r| signal_power(r)).sum();
    let s_sum: f64 = xs.iter().map(|x| signal_power(x)).sum();
    if s_sum == 0.0 {
        return Err(Error::ZeroSignal);
    }
    let realized_psr_db = 10.0 * (p_sum / s_sum).log10();
    let refs: Vec<&[f64]> = adversarial.iter().map(|a| a.as_slice()).collect();
    let before = oracle.predict(xs)?;
    let after = oracle.predict(&refs)?;
    let fooled = before.iter().zip(&after).map(|(a, b)| a != b).collect();
    Ok(AttackResult {
        perturbations,
        adversarial,
        realized_psr_db,
        fooled,
    })
}

pub fn accuracy_of(classifier: &dyn Classifier, xs: &[&[f64]], ys: &[usize]) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let pred = classifier.predict(xs)?;
    Ok(pred.iter().zip(ys).filter(|(p, y)| p == y).count() as f64 / ys.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransferOutcome {
    pub accuracy: f64,
    pub realized_psr_db: f64,
}

/// Crafts on `source` and scores `target` on the result. With the same
/// model on both sides this is the white-box evaluation.
pub fn transfer_evaluate(
    source: &dyn GradientOracle,
    target: &dyn Classifier,
    xs: &[&[f64]],
    ys: &[usize],
    cfg: &AttackConfig,
    seed: u64,
) -> Result<TransferOutcome> {
    if source.n_classes() != target.n_classes() {
        return Err(Error::ClassCountMismatch {
            source_classes: source.n_classes(),
            target_classes: target.n_classes(),
        });
    }
    let res = craft(source, xs, ys, cfg, seed)?;
    Ok(TransferOutcome {
        accuracy: accuracy_of(target, &res.adversarial_refs(), ys)?,
        realized_psr_db: res.realized_psr_db,
    })
}
