use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub logits: Vec<f64>,
    pub probabilities: Vec<f64>,
}

impl ClassScores {
    /// Softmax of `logits / temperature`.
    pub fn from_logits(logits: Vec<f64>, temperature: f64) -> Self {
        let probabilities = softmax(&logits, temperature);
        Self {
            logits,
            probabilities,
        }
    }

    /// Index of the largest probability; ties resolve to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.probabilities)
    }

    pub fn cross_entropy(&self, label: usize) -> f64 {
        -self.probabilities[label].max(f64::MIN_POSITIVE).ln()
    }

    /// `d loss / d logits` for the cross-entropy of `label`.
    pub fn logit_gradient(&self, label: usize, temperature: f64) -> Vec<f64> {
        self.probabilities
            .iter()
            .enumerate()
            .map(|(k, p)| (p - if k == label { 1.0 } else { 0.0 }) / temperature)
            .collect()
    }
}

pub fn softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| ((l - max) / temperature).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate() {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn equal_logits_are_uniform() {
        let s = ClassScores::from_logits(vec![1.0, 1.0], 1.0);
        assert_eq!(s.probabilities, vec![0.5, 0.5]);
        assert_eq!(s.argmax(), 0);
    }

    #[test]
    fn logit_gradient_matches_finite_differences() {
        let logits = vec![0.3, -0.7, 0.9];
        for t in [1.0, 0.25] {
            let g = ClassScores::from_logits(logits.clone(), t).logit_gradient(1, t);
            for k in 0..3 {
                let mut up = logits.clone();
                up[k] += 1e-6;
                let mut down = logits.clone();
                down[k] -= 1e-6;
                let fd = (ClassScores::from_logits(up, t).cross_entropy(1)
                    - ClassScores::from_logits(down, t).cross_entropy(1))
                    / 2e-6;
                assert!((fd - g[k]).abs() < 1e-7);
            }
        }
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one(logits in prop::collection::vec(-50.0f64..50.0, 1..8)) {
            let p = softmax(&logits, 1.0);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            prop_assert!(p.iter().all(|x| *x >= 0.0));
        }
    }
}
