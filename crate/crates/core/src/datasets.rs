//! Signal datasets: the synthetic Fourier-series generator, the QSIG binary
//! format and sampling utilities.
//!
//! QSIG layout (little-endian):
//!
//! | field       | type | value                     |
//! |-------------|------|---------------------------|
//! | magic       | 4 B  | `QSIG`                    |
//! | version     | u16  | 1                         |
//! | n_samples   | u32  |                           |
//! | sample_len  | u32  | 256                       |
//! | n_classes   | u8   |                           |
//! | records     |      | `n_samples` x (u8 label, 256 x f32) |

use std::f64::consts::PI;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SAMPLE_LEN: usize = 256;
pub const QSIG_MAGIC: &[u8; 4] = b"QSIG";
pub const QSIG_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 4 + 4 + 1;
const RECORD_LEN: usize = 1 + 4 * SAMPLE_LEN;

#[derive(Debug, Clone, PartialEq)]
pub struct SignalSample {
    pub values: Vec<f64>,
    pub label: usize,
    /// Carried in memory only; QSIG version 1 has no field for it.
    pub snr_db: Option<f64>,
}

impl SignalSample {
    pub fn new(values: Vec<f64>, label: usize) -> Self {
        Self {
            values,
            label,
            snr_db: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub n_classes: usize,
    pub samples: Vec<SignalSample>,
}

impl Dataset {
    pub fn new(n_classes: usize, samples: Vec<SignalSample>) -> Result<Self> {
        let d = Self { n_classes, samples };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes == 0 || self.n_classes > u8::MAX as usize {
            return Err(Error::InvalidSpec(format!("{} classes", self.n_classes)));
        }
        for s in &self.samples {
            if s.label >= self.n_classes {
                return Err(Error::LabelOutOfRange {
                    label: s.label,
                    n_classes: self.n_classes,
                });
            }
            if s.values.len() != SAMPLE_LEN {
                return Err(Error::ShapeMismatch {
                    expected: SAMPLE_LEN.to_string(),
                    actual: s.values.len().to_string(),
                });
            }
            if s.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidSpec("non-finite sample value".into()));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }

    /// Same labels, new values.
    pub fn with_values(&self, values: Vec<Vec<f64>>) -> Dataset {
        debug_assert_eq!(values.len(), self.samples.len());
        Dataset {
            n_classes: self.n_classes,
            samples: self
                .samples
                .iter()
                .zip(values)
                .map(|(s, v)| SignalSample {
                    values: v,
                    label: s.label,
                    snr_db: s.snr_db,
                })
                .collect(),
        }
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            n_classes: self.n_classes,
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Waveform {
    Square,
    Sawtooth,
    Triangle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FourierClassSpec {
    pub waveform: Waveform,
    pub harmonics: usize,
    /// Cycles per window.
    pub freq_range: [f64; 2],
    pub noise_sigma: f64,
}

impl FourierClassSpec {
    pub fn new(waveform: Waveform) -> Self {
        Self {
            waveform,
            harmonics: 15,
            freq_range: [1.0, 5.0],
            noise_sigma: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.freq_range;
        if self.harmonics == 0 {
            return Err(Error::InvalidSpec("harmonics must be at least 1".into()));
        }
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::InvalidSpec(format!("frequency range [{lo}, {hi}]")));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::InvalidSpec(format!("noise sigma {}", self.noise_sigma)));
        }
        Ok(())
    }

    /// The noiseless truncated series at time `t` (in windows) for frequency `f`.
    pub fn series(&self, f: f64, t: f64) -> f64 {
        let k_max = self.harmonics;
        let phase = 2.0 * PI * f * t;
        match self.waveform {
            Waveform::Square => (1..=k_max)
                .step_by(2)
                .map(|k| 4.0 / (PI * k as f64) * (k as f64 * phase).sin())
                .sum(),
            Waveform::Sawtooth => (1..=k_max)
                .map(|k| {
                    let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
                    sign * 2.0 / (PI * k as f64) * (k as f64 * phase).sin()
                })
                .sum(),
            Waveform::Triangle => (1..=k_max)
                .step_by(2)
                .map(|k| {
                    let sign = if (k - 1) / 2 % 2 == 0 { 1.0 } else { -1.0 };
                    let kf = k as f64;
                    sign * 8.0 / (PI * PI * kf * kf) * (kf * phase).sin()
                })
                .sum(),
        }
    }
}

/// Square, sawtooth and triangle in that order, truncated to `n_classes`.
pub fn default_specs(n_classes: usize) -> Vec<FourierClassSpec> {
    [Waveform::Square, Waveform::Sawtooth, Waveform::Triangle]
        .into_iter()
        .take(n_classes)
        .map(FourierClassSpec::new)
        .collect()
}

/// Class-major: samples `c * n_per_class .. (c + 1) * n_per_class` have label
/// `c`. Sample `i` draws from its own ChaCha stream `(seed, i)`. Values are
/// rounded to f32 so that a saved and reloaded dataset is identical.
pub fn generate_fourier_dataset(
    specs: &[FourierClassSpec],
    n_per_class: usize,
    seed: u64,
) -> Result<Dataset> {
    if specs.is_empty() {
        return Err(Error::InvalidSpec("no class specs".into()));
    }
    if n_per_class == 0 {
        return Err(Error::InvalidSpec("n_per_class must be at least 1".into()));
    }
    for s in specs {
        s.validate()?;
    }
    let mut samples = Vec::with_capacity(specs.len() * n_per_class);
    for (label, spec) in specs.iter().enumerate() {
        for j in 0..n_per_class {
            let index = (label * n_per_class + j) as u64;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(index);
            let [lo, hi] = spec.freq_range;
            let f = if hi > lo { rng.random_range(lo..hi) } else { lo };
            let noise = Normal::new(0.0, spec.noise_sigma)
                .map_err(|e| Error::InvalidSpec(e.to_string()))?;
            let values = (0..SAMPLE_LEN)
                .map(|i| {
                    let t = i as f64 / SAMPLE_LEN as f64;
                    let v = spec.series(f, t) + noise.sample(&mut rng);
                    v as f32 as f64
                })
                .collect();
            samples.push(SignalSample::new(values, label));
        }
    }
    Dataset::new(specs.len(), samples)
}

pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    dataset.validate()?;
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut buf = Vec::with_capacity(HEADER_LEN + dataset.len() * RECORD_LEN);
    buf.extend_from_slice(QSIG_MAGIC);
    buf.extend_from_slice(&QSIG_VERSION.to_le_bytes());
    buf.extend_from_slice(&(dataset.len() as u32).to_le_bytes());
    buf.extend_from_slice(&(SAMPLE_LEN as u32).to_le_bytes());
    buf.push(dataset.n_classes as u8);
    for s in &dataset.samples {
        buf.push(s.label as u8);
        for &v in &s.values {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    w.write_all(&buf).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode_dataset(&bytes)
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    if bytes.len() < 4 || &bytes[..4] != QSIG_MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated(format!("header has {} bytes", bytes.len())));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != QSIG_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let n_samples = u32::from_le_bytes(bytes[6..10].try_into().expect("4 bytes")) as usize;
    let sample_len = u32::from_le_bytes(bytes[10..14].try_into().expect("4 bytes")) as usize;
    let n_classes = bytes[14] as usize;
    if sample_len != SAMPLE_LEN {
        return Err(Error::ShapeMismatch {
            expected: SAMPLE_LEN.to_string(),
            actual: sample_len.to_string(),
        });
    }
    let body = &bytes[HEADER_LEN..];
    let found = body.len() / RECORD_LEN;
    if body.len() % RECORD_LEN != 0 {
        return Err(Error::Truncated(format!(
            "record section of {} bytes is not a whole number of {RECORD_LEN}-byte records",
            body.len()
        )));
    }
    if found != n_samples {
        return Err(Error::CountMismatch {
            declared: n_samples,
            found,
        });
    }
    let samples = body
        .chunks_exact(RECORD_LEN)
        .map(|rec| {
            let values = rec[1..]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect();
            SignalSample::new(values, rec[0] as usize)
        })
        .collect();
    Dataset::new(n_classes, samples)
}

/// Columns `label, v0 .. v255`.
pub fn export_csv(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["label".to_string()];
    header.extend((0..SAMPLE_LEN).map(|i| format!("v{i}")));
    w.write_record(&header)?;
    for s in &dataset.samples {
        let mut row = vec![s.label.to_string()];
        row.extend(s.values.iter().map(|v| (*v as f32).to_string()));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Draws `n_per_class` samples of each listed class, without replacement.
/// Labels are remapped to positions in `classes`.
pub fn sample_balanced(
    dataset: &Dataset,
    classes: &[usize],
    n_per_class: usize,
    seed: u64,
) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(classes.len() * n_per_class);
    for (new_label, &class) in classes.iter().enumerate() {
        if class >= dataset.n_classes {
            return Err(Error::LabelOutOfRange {
                label: class,
                n_classes: dataset.n_classes,
            });
        }
        let mut pool: Vec<&SignalSample> =
            dataset.samples.iter().filter(|s| s.label == class).collect();
        if pool.len() < n_per_class {
            return Err(Error::InsufficientSamples {
                class,
                available: pool.len(),
                requested: n_per_class,
            });
        }
        if n_per_class < pool.len() {
            // partial Fisher-Yates
            for i in 0..n_per_class {
                let j = rng.random_range(i..pool.len());
                pool.swap(i, j);
            }
            pool.truncate(n_per_class);
        }
        samples.extend(pool.into_iter().map(|s| SignalSample {
            label: new_label,
            ..s.clone()
        }));
    }
    Dataset::new(classes.len(), samples)
}

/// Deterministic split holding out `n_holdout` samples of every class.
pub fn split_per_class(dataset: &Dataset, n_holdout: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = Vec::new();
    let mut hold = Vec::new();
    for class in 0..dataset.n_classes {
        let mut idx: Vec<usize> = (0..dataset.len())
            .filter(|&i| dataset.samples[i].label == class)
            .collect();
        if idx.len() <= n_holdout {
            return Err(Error::InsufficientSamples {
                class,
                available: idx.len(),
                requested: n_holdout + 1,
            });
        }
        for i in 0..n_holdout {
            let j = rng.random_range(i..idx.len());
            idx.swap(i, j);
        }
        hold.extend_from_slice(&idx[..n_holdout]);
        keep.extend_from_slice(&idx[n_holdout..]);
    }
    keep.sort_unstable();
    hold.sort_unstable();
    Ok((dataset.subset(&keep), dataset.subset(&hold)))
}
