//! Two-sample Kolmogorov-Smirnov stealth check.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KSReport {
    pub statistic: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StealthSummary {
    pub n_adversarial: usize,
    pub n_perceptible: usize,
    pub perceptible_rate: f64,
}

/// Kolmogorov survival function `Q(l) = 2 sum_{j>=1} (-1)^(j-1) exp(-2 j^2 l^2)`.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 0.2 {
        // the alternating series converges slowly here and Q is 1 to double precision
        return 1.0;
    }
    let a = -2.0 * lambda * lambda;
    let mut sum = 0.0;
    let mut sign = 1.0;
    for j in 1..=200 {
        let j = j as f64;
        let term = sign * (a * j * j).exp();
        sum += term;
        if term.abs() <= 1e-16 * sum.abs() || term.abs() < 1e-300 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Largest gap between the empirical CDFs of two sorted samples.
fn ks_statistic_sorted(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let t = a[i].min(b[j]);
        while i < a.len() && a[i] <= t {
            i += 1;
        }
        while j < b.len() && b[j] <= t {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

fn ks_sorted(a: &[f64], b: &[f64]) -> KSReport {
    let d = ks_statistic_sorted(a, b);
    let ne = (a.len() * b.len()) as f64 / (a.len() + b.len()) as f64;
    let sq = ne.sqrt();
    KSReport {
        statistic: d,
        p_value: kolmogorov_q((sq + 0.12 + 0.11 / sq) * d),
    }
}

fn sorted(x: &[f64]) -> Vec<f64> {
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KSReport> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySample);
    }
    Ok(ks_sorted(&sorted(a), &sorted(b)))
}

/// An adversarial signal is imperceptible when at least one clean signal
/// passes the KS test against it at level `alpha`.
pub fn perceptibility_rate(adversarial: &[&[f64]], clean: &[&[f64]], alpha: f64) -> Result<StealthSummary> {
    if adversarial.is_empty() || clean.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if adversarial.iter().chain(clean).any(|s| s.is_empty()) {
        return Err(Error::EmptySample);
    }
    let clean_sorted: Vec<Vec<f64>> = clean.par_iter().map(|c| sorted(c)).collect();
    let perceptible: Vec<bool> = adversarial
        .par_iter()
        .map(|adv| {
            let s = sorted(adv);
            !clean_sorted.iter().any(|c| ks_sorted(&s, c).p_value > alpha)
        })
        .collect();
    let n_perceptible = perceptible.iter().filter(|&&p| p).count();
    Ok(StealthSummary {
        n_adversarial: adversarial.len(),
        n_perceptible,
        perceptible_rate: n_perceptible as f64 / adversarial.len() as f64,
    })
}
