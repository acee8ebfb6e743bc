use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::{Example, Layout, Network};
use super::UNK_ID;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub d_e: usize,
    pub d_h: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Epochs without dev-loss improvement before stopping.
    pub patience: usize,
    /// Smallest decrease of the mean monitored loss that counts as improvement.
    pub min_delta: f64,
    pub seed: u64,
    /// Probability of replacing a singleton training token by the unknown token.
    pub unk_rate: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            d_e: 100,
            d_h: 128,
            learning_rate: 1e-3,
            epochs: 50,
            batch_size: 32,
            patience: 5,
            min_delta: 1e-4,
            seed: 42,
            unk_rate: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.d_e == 0 || self.d_h == 0 || self.batch_size == 0 {
            return Err("dimensions and batch size must be positive".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err("learning rate must be finite and non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.unk_rate) {
            return Err("unk rate must lie in [0, 1]".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainStats {
    pub epochs_run: usize,
    pub best_dev_loss: f64,
}

/// Adam with the usual defaults (beta1 0.9, beta2 0.999, eps 1e-8).
pub struct Adam {
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    pub fn new(lr: f64, size: usize) -> Self {
        Adam { lr, m: vec![0.0; size], v: vec![0.0; size], step: 0 }
    }

    pub fn update(&mut self, theta: &mut [f64], grad: &[f64]) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        self.step += 1;
        let c1 = 1.0 - B1.powi(self.step);
        let c2 = 1.0 - B2.powi(self.step);
        for i in 0..theta.len() {
            let g = grad[i];
            self.m[i] = B1 * self.m[i] + (1.0 - B1) * g;
            self.v[i] = B2 * self.v[i] + (1.0 - B2) * g * g;
            theta[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + 1e-8);
        }
    }
}

/// Mini-batch training with early stopping on dev loss (train loss when
/// there is no dev set). Returns the parameters of the best epoch.
pub fn fit(
    layout: Layout,
    train: &[(Vec<usize>, usize)],
    dev: &[(Vec<usize>, usize)],
    singletons: &[bool],
    cfg: &TrainConfig,
    seed: u64,
) -> (Network, TrainStats) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Network::init(layout, &mut rng);
    let mut adam = Adam::new(cfg.learning_rate, layout.size());
    let monitor = if dev.is_empty() { train } else { dev };
    let mean_loss = |net: &Network| -> f64 {
        let mut total = 0.0;
        for chunk in monitor.chunks(256) {
            let batch: Vec<Example> = chunk.iter().map(|(s, y)| (s.as_slice(), *y)).collect();
            total += net.loss(&batch);
        }
        total / monitor.len().max(1) as f64
    };
    let mut best = (net.clone(), mean_loss(&net));
    let mut stats = TrainStats { epochs_run: 0, best_dev_loss: best.1 };
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut stale = 0;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let seqs: Vec<Vec<usize>> = chunk
                .iter()
                .map(|&i| {
                    train[i]
                        .0
                        .iter()
                        .map(|&tok| {
                            if singletons.get(tok).copied().unwrap_or(false) && rng.gen_bool(cfg.unk_rate) {
                                UNK_ID
                            } else {
                                tok
                            }
                        })
                        .collect()
                })
                .collect();
            let batch: Vec<Example> =
                seqs.iter().zip(chunk).map(|(s, &i)| (s.as_slice(), train[i].1)).collect();
            let (_, mut grad) = net.loss_and_grad(&batch);
            let scale = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            adam.update(&mut net.theta, &grad);
        }
        stats.epochs_run += 1;
        let loss = mean_loss(&net);
        let improved = best.1 - loss > cfg.min_delta;
        if loss < best.1 {
            best = (net.clone(), loss);
        }
        if improved {
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    stats.best_dev_loss = best.1;
    (best.0, stats)
}
