use serde::{Deserialize, Serialize};

/// Logistic regression on token presence, fit by full-batch gradient
/// descent from zero weights. Deterministic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BagOfWords {
    pub weights: Vec<f64>,
    pub bias: f64,
}

const ITERATIONS: usize = 300;
const STEP: f64 = 0.5;
const L2: f64 = 1e-4;

impl BagOfWords {
    pub fn fit(vocab: usize, train: &[(Vec<usize>, usize)]) -> Self {
        let mut model = BagOfWords { weights: vec![0.0; vocab], bias: 0.0 };
        let features: Vec<Vec<usize>> = train
            .iter()
            .map(|(seq, _)| {
                let mut f = seq.clone();
                f.sort_unstable();
                f.dedup();
                f
            })
            .collect();
        let n = train.len().max(1) as f64;
        for _ in 0..ITERATIONS {
            let mut gw = vec![0.0; vocab];
            let mut gb = 0.0;
            for (f, (_, y)) in features.iter().zip(train) {
                let err = model.prob_features(f) - *y as f64;
                for &tok in f {
                    gw[tok] += err;
                }
                gb += err;
            }
            for (w, g) in model.weights.iter_mut().zip(&gw) {
                *w -= STEP * (g / n + L2 * *w);
            }
            model.bias -= STEP * gb / n;
        }
        model
    }

    fn prob_features(&self, features: &[usize]) -> f64 {
        let z: f64 = self.bias + features.iter().map(|&t| self.weights.get(t).copied().unwrap_or(0.0)).sum::<f64>();
        1.0 / (1.0 + (-z).exp())
    }

    pub fn probability(&self, seq: &[usize]) -> f64 {
        let mut f = seq.to_vec();
        f.sort_unstable();
        f.dedup();
        self.prob_features(&f).clamp(1e-12, 1.0 - 1e-12)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn learns_a_keyword() {
        let train: Vec<(Vec<usize>, usize)> =
            (0..40).map(|i| (vec![2 + i % 3, if i % 2 == 0 { 5 } else { 6 }], (i % 2 == 0) as usize)).collect();
        let m = BagOfWords::fit(7, &train);
        assert!(m.probability(&[2, 5]) > 0.9);
        assert!(m.probability(&[3, 6]) < 0.1);
    }
}
