//! Small convolutional classifier for 2x128 signals with hand-written
//! backpropagation.
//!
//! Layers: zero-pad the width by 2 on each side (2x132), 32 shared 1x3
//! filters applied to each row (32x2x130), ReLU, inverted dropout, flatten
//! in (channel, row, column) order (8320), dense 16 + ReLU, dense C, softmax.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{Adam, AdamConfig};
use crate::scores::ClassScores;

pub const ROWS: usize = 2;
pub const COLS: usize = 128;
pub const INPUT_LEN: usize = ROWS * COLS;
pub const PAD: usize = 2;
pub const KERNEL: usize = 3;
pub const FILTERS: usize = 32;
pub const CONV_COLS: usize = COLS + 2 * PAD - KERNEL + 1;
pub const FLAT: usize = FILTERS * ROWS * CONV_COLS;
pub const HIDDEN: usize = 16;
pub const CNN_CHECKPOINT_VERSION: u32 = 1;

/// Per-layer output shapes for a 2x128 input, outermost first.
pub fn shape_trace(n_classes: usize) -> Vec<(&'static str, Vec<usize>)> {
    vec![
        ("input", vec![ROWS, COLS]),
        ("pad", vec![ROWS, COLS + 2 * PAD]),
        ("conv", vec![ROWS, CONV_COLS, FILTERS]),
        ("flatten", vec![FLAT]),
        ("fc1", vec![HIDDEN]),
        ("fc2", vec![n_classes]),
    ]
}

/// Offsets of each weight block in the flat parameter vector.
#[derive(Debug, Clone, Copy)]
struct Layout {
    conv_w: usize,
    conv_b: usize,
    fc1_w: usize,
    fc1_b: usize,
    fc2_w: usize,
    fc2_b: usize,
    total: usize,
}

impl Layout {
    fn new(n_classes: usize) -> Self {
        let conv_w = 0;
        let conv_b = conv_w + FILTERS * KERNEL;
        let fc1_w = conv_b + FILTERS;
        let fc1_b = fc1_w + HIDDEN * FLAT;
        let fc2_w = fc1_b + HIDDEN;
        let fc2_b = fc2_w + n_classes * HIDDEN;
        Self {
            conv_w,
            conv_b,
            fc1_w,
            fc1_b,
            fc2_w,
            fc2_b,
            total: fc2_b + n_classes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CNNModel {
    pub version: u32,
    pub n_classes: usize,
    pub dropout_rate: f64,
    /// Flat weights: conv (32x3), conv bias, fc1 (16x8320), fc1 bias,
    /// fc2 (Cx16), fc2 bias.
    pub params: Vec<f64>,
}

/// Intermediate activations kept for the backward pass.
struct Cache {
    conv_pre: Vec<f64>,
    flat: Vec<f64>,
    mask: Option<Vec<f64>>,
    hidden_pre: Vec<f64>,
    hidden: Vec<f64>,
    scores: ClassScores,
}

impl CNNModel {
    /// Glorot-uniform weights, zero biases.
    pub fn new(n_classes: usize, seed: u64) -> Result<Self> {
        if n_classes < 2 {
            return Err(Error::InvalidState(format!("{n_classes} classes")));
        }
        let layout = Layout::new(n_classes);
        let mut params = vec![0.0; layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |range: std::ops::Range<usize>, fan_in: usize, fan_out: usize| {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for p in &mut params[range] {
                *p = rng.random_range(-limit..=limit);
            }
        };
        fill(layout.conv_w..layout.conv_b, KERNEL, FILTERS * KERNEL);
        fill(layout.fc1_w..layout.fc1_b, FLAT, HIDDEN);
        fill(layout.fc2_w..layout.fc2_b, HIDDEN, n_classes);
        let model = Self {
            version: CNN_CHECKPOINT_VERSION,
            n_classes,
            dropout_rate: 0.2,
            params,
        };
        assert_eq!(model.parameter_count(), layout.total);
        Ok(model)
    }

    pub fn zeros(n_classes: usize) -> Self {
        Self {
            version: CNN_CHECKPOINT_VERSION,
            n_classes,
            dropout_rate: 0.2,
            params: vec![0.0; Layout::new(n_classes).total],
        }
    }

    fn layout(&self) -> Layout {
        Layout::new(self.n_classes)
    }

    /// Named ranges of the flat parameter vector, one per weight block.
    pub fn param_blocks(&self) -> Vec<(&'static str, std::ops::Range<usize>)> {
        let l = self.layout();
        vec![
            ("conv_weight", l.conv_w..l.conv_b),
            ("conv_bias", l.conv_b..l.fc1_w),
            ("fc1_weight", l.fc1_w..l.fc1_b),
            ("fc1_bias", l.fc1_b..l.fc2_w),
            ("fc2_weight", l.fc2_w..l.fc2_b),
            ("fc2_bias", l.fc2_b..l.total),
        ]
    }

    pub fn parameter_count(&self) -> usize {
        self.params.len()
    }

    fn check_input(x: &[f64]) -> Result<()> {
        if x.len() != INPUT_LEN {
            return Err(Error::ShapeMismatch {
                expected: format!("{ROWS}x{COLS}"),
                actual: format!("{} values", x.len()),
            });
        }
        Ok(())
    }

    fn run(&self, x: &[f64], dropout: Option<&mut ChaCha8Rng>) -> Cache {
        let l = self.layout();
        let p = &self.params;
        let mut conv_pre = vec![0.0; FLAT];
        for c in 0..FILTERS {
            let w = &p[l.conv_w + c * KERNEL..l.conv_w + (c + 1) * KERNEL];
            let b = p[l.conv_b + c];
            for h in 0..ROWS {
                let row = &x[h * COLS..(h + 1) * COLS];
                for col in 0..CONV_COLS {
                    let mut z = b;
                    for (k, wk) in w.iter().enumerate() {
                        // padded column col + k maps to input column col + k - PAD
                        let src = col + k;
                        if (PAD..PAD + COLS).contains(&src) {
                            z += wk * row[src - PAD];
                        }
                    }
                    conv_pre[(c * ROWS + h) * CONV_COLS + col] = z;
                }
            }
        }
        let mut flat: Vec<f64> = conv_pre.iter().map(|z| z.max(0.0)).collect();
        let mask = dropout.map(|rng| {
            let keep = 1.0 - self.dropout_rate;
            let m: Vec<f64> = (0..FLAT)
                .map(|_| if rng.random::<f64>() < self.dropout_rate { 0.0 } else { 1.0 / keep })
                .collect();
            for (a, s) in flat.iter_mut().zip(&m) {
                *a *= s;
            }
            m
        });
        let mut hidden_pre = vec![0.0; HIDDEN];
        for (j, h) in hidden_pre.iter_mut().enumerate() {
            let w = &p[l.fc1_w + j * FLAT..l.fc1_w + (j + 1) * FLAT];
            *h = p[l.fc1_b + j] + w.iter().zip(&flat).map(|(a, b)| a * b).sum::<f64>();
        }
        let hidden: Vec<f64> = hidden_pre.iter().map(|z| z.max(0.0)).collect();
        let logits = (0..self.n_classes)
            .map(|k| {
                let w = &p[l.fc2_w + k * HIDDEN..l.fc2_w + (k + 1) * HIDDEN];
                p[l.fc2_b + k] + w.iter().zip(&hidden).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect();
        Cache {
            conv_pre,
            flat,
            mask,
            hidden_pre,
            hidden,
            scores: ClassScores::from_logits(logits, 1.0),
        }
    }

    /// Eval-mode forward pass (dropout off).
    pub fn forward(&self, x: &[f64]) -> Result<ClassScores> {
        Self::check_input(x)?;
        Ok(self.run(x, None).scores)
    }

    /// Train-mode forward pass with a dropout mask drawn from `rng`.
    pub fn forward_train(&self, x: &[f64], rng: &mut ChaCha8Rng) -> Result<ClassScores> {
        Self::check_input(x)?;
        Ok(self.run(x, Some(rng)).scores)
    }

    fn backprop(&self, x: &[f64], cache: &Cache, label: usize, grads: &mut [f64]) -> Vec<f64> {
        let l = self.layout();
        let p = &self.params;
        let dlogits = cache.scores.logit_gradient(label, 1.0);
        let mut dhidden = vec![0.0; HIDDEN];
        for (k, dk) in dlogits.iter().enumerate() {
            grads[l.fc2_b + k] += dk;
            for j in 0..HIDDEN {
                grads[l.fc2_w + k * HIDDEN + j] += dk * cache.hidden[j];
                dhidden[j] += p[l.fc2_w + k * HIDDEN + j] * dk;
            }
        }
        let mut dflat = vec![0.0; FLAT];
        for j in 0..HIDDEN {
            if cache.hidden_pre[j] <= 0.0 {
                continue;
            }
            let dz = dhidden[j];
            grads[l.fc1_b + j] += dz;
            let w = &p[l.fc1_w + j * FLAT..l.fc1_w + (j + 1) * FLAT];
            let gw = &mut grads[l.fc1_w + j * FLAT..l.fc1_w + (j + 1) * FLAT];
            for i in 0..FLAT {
                gw[i] += dz * cache.flat[i];
                dflat[i] += w[i] * dz;
            }
        }
        if let Some(mask) = &cache.mask {
            for (d, m) in dflat.iter_mut().zip(mask) {
                *d *= m;
            }
        }
        let mut dx = vec![0.0; INPUT_LEN];
        for c in 0..FILTERS {
            for h in 0..ROWS {
                let row = &x[h * COLS..(h + 1) * COLS];
                for col in 0..CONV_COLS {
                    let idx = (c * ROWS + h) * CONV_COLS + col;
                    if cache.conv_pre[idx] <= 0.0 {
                        continue;
                    }
                    let dz = dflat[idx];
                    grads[l.conv_b + c] += dz;
                    for k in 0..KERNEL {
                        let src = col + k;
                        if (PAD..PAD + COLS).contains(&src) {
                            grads[l.conv_w + c * KERNEL + k] += dz * row[src - PAD];
                            dx[h * COLS + src - PAD] += p[l.conv_w + c * KERNEL + k] * dz;
                        }
                    }
                }
            }
        }
        dx
    }

    /// Eval-mode cross-entropy gradients: `(parameter gradient, input gradient)`.
    pub fn backward(&self, x: &[f64], label: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_label(label)?;
        Self::check_input(x)?;
        let cache = self.run(x, None);
        let mut grads = vec![0.0; self.params.len()];
        let dx = self.backprop(x, &cache, label, &mut grads);
        Ok((grads, dx))
    }

    /// Eval-mode scores and input gradient of the cross-entropy.
    pub fn loss_and_input_gradient(&self, x: &[f64], label: usize) -> Result<(ClassScores, Vec<f64>)> {
        self.check_label(label)?;
        Self::check_input(x)?;
        let cache = self.run(x, None);
        let mut scratch = vec![0.0; self.params.len()];
        let dx = self.backprop(x, &cache, label, &mut scratch);
        Ok((cache.scores, dx))
    }

    fn check_label(&self, label: usize) -> Result<()> {
        if label >= self.n_classes {
            return Err(Error::LabelOutOfRange {
                label,
                n_classes: self.n_classes,
            });
        }
        Ok(())
    }

    /// Summed loss and parameter gradient over a batch. With `dropout_seed`
    /// set, sample `i` of the batch draws its mask from stream `i` of that
    /// seed.
    pub fn batch_loss_and_gradient(
        &self,
        xs: &[&[f64]],
        labels: &[usize],
        dropout_seed: Option<u64>,
    ) -> Result<(f64, Vec<f64>)> {
        for (x, &y) in xs.iter().zip(labels) {
            Self::check_input(x)?;
            self.check_label(y)?;
        }
        let chunks: Vec<(f64, Vec<f64>)> = xs
            .par_iter()
            .zip(labels)
            .enumerate()
            .map(|(i, (x, &y))| {
                let cache = match dropout_seed {
                    Some(seed) => {
                        let mut rng = ChaCha8Rng::seed_from_u64(seed);
                        rng.set_stream(i as u64);
                        self.run(x, Some(&mut rng))
                    }
                    None => self.run(x, None),
                };
                let mut g = vec![0.0; self.params.len()];
                self.backprop(x, &cache, y, &mut g);
                (cache.scores.cross_entropy(y), g)
            })
            .collect();
        let mut loss = 0.0;
        let mut grad = vec![0.0; self.params.len()];
        for (l, g) in chunks {
            loss += l;
            for (a, b) in grad.iter_mut().zip(g) {
                *a += b;
            }
        }
        Ok((loss, grad))
    }

    pub fn predict(&self, xs: &[&[f64]]) -> Result<Vec<ClassScores>> {
        xs.par_iter().map(|x| self.forward(x)).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingCheckpoint(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: CNNModel = serde_json::from_str(&text)?;
        if m.version != CNN_CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("CNN checkpoint version {}", m.version)));
        }
        if m.params.len() != Layout::new(m.n_classes).total {
            return Err(Error::ParameterCount {
                expected: Layout::new(m.n_classes).total,
                actual: m.params.len(),
            });
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CnnTrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for CnnTrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 256,
            epochs: 30,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CnnEpoch {
    pub epoch: usize,
    pub train_loss: f64,
}

/// Mini-batch Adam on the mean cross-entropy with dropout active.
pub fn train_cnn(
    model: &mut CNNModel,
    xs: &[&[f64]],
    labels: &[usize],
    cfg: &CnnTrainConfig,
) -> Result<Vec<CnnEpoch>> {
    if xs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if xs.len() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} labels for {} inputs",
            labels.len(),
            xs.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::new(AdamConfig::with_lr(cfg.lr), model.params.len());
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size.max(1)) {
            let bx: Vec<&[f64]> = batch.iter().map(|&i| xs[i]).collect();
            let by: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let (loss, mut grad) = model.batch_loss_and_gradient(&bx, &by, Some(rng.random()))?;
            loss_sum += loss;
            let scale = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            opt.step(&mut model.params, &grad);
        }
        history.push(CnnEpoch {
            epoch: epoch + 1,
            train_loss: loss_sum / xs.len() as f64,
        });
    }
    Ok(history)
}

pub fn write_cnn_history(history: &[CnnEpoch], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "train_loss"])?;
    for r in history {
        w.write_record([r.epoch.to_string(), format!("{:.8}", r.train_loss)])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
