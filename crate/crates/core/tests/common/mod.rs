#![allow(dead_code)]

use std::path::PathBuf;

use pathrl_core::config::ExperimentConfig;
use pathrl_core::estimators::RolloutBatch;
use pathrl_core::oracle::ToyInstance;
use pathrl_core::policy::{sample_path, PathSample};
use pathrl_core::rewards::{apply_centering, decompose, CenteringMode, RewardWeights};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

pub fn load_config(name: &str) -> ExperimentConfig {
    let text = std::fs::read_to_string(config_path(name)).expect("config file present");
    ExperimentConfig::from_toml(&text).expect("config parses")
}

/// A config small enough to train in about a second.
pub fn small_config(seed: u64) -> ExperimentConfig {
    ExperimentConfig::default()
        .with_overrides(&[
            "train.batch_size=8",
            "train.samples_per_input=4",
            "train.eval_inputs=8",
            "train.lr=0.5",
            "pretrain.epochs=10",
        ])
        .unwrap()
        .with_overrides(&[format!("seed={seed}")])
        .unwrap()
}

/// First seeded toy with three items and `L_max = 3`.
pub fn full_toy() -> ToyInstance {
    (0..)
        .map(|s| ToyInstance::generate(s).unwrap())
        .find(|t| t.sim.catalog().len() == 3 && t.l_max == 3)
        .unwrap()
}

pub fn toy_batch(toy: &ToyInstance, m: usize, mode: &CenteringMode, weights: &RewardWeights, rng: &mut ChaCha8Rng) -> RolloutBatch {
    let samples: Vec<PathSample> = (0..m)
        .map(|_| sample_path(&toy.params, &toy.sim, &toy.history, toy.target, toy.l_max, rng).unwrap())
        .collect();
    let rewards = samples
        .iter()
        .map(|s| {
            let steps = decompose(&toy.sim, &toy.history, &s.items, toy.target).unwrap();
            apply_centering(&steps, mode, weights).unwrap()
        })
        .collect();
    RolloutBatch::new(1, m, samples, rewards).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Streaming component-wise mean and standard error of vector draws.
pub struct MeanTracker {
    n: usize,
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
}

impl MeanTracker {
    pub fn new(dim: usize) -> Self {
        MeanTracker {
            n: 0,
            sum: vec![0.0; dim],
            sum_sq: vec![0.0; dim],
        }
    }

    pub fn push(&mut self, x: &[f64]) {
        self.n += 1;
        for ((s, q), v) in self.sum.iter_mut().zip(&mut self.sum_sq).zip(x) {
            *s += v;
            *q += v * v;
        }
    }

    /// Largest `|mean − reference| / SE` over components; components with
    /// zero spread must match to 1e-12.
    pub fn worst_z(&self, reference: &[f64]) -> f64 {
        let n = self.n as f64;
        let mut worst: f64 = 0.0;
        for ((s, q), r) in self.sum.iter().zip(&self.sum_sq).zip(reference) {
            let mean = s / n;
            let var = (q / n - mean * mean).max(0.0) * n / (n - 1.0);
            let se = (var / n).sqrt();
            let dev = (mean - r).abs();
            let z = if se > 1e-15 {
                dev / se
            } else if dev < 1e-12 {
                0.0
            } else {
                f64::INFINITY
            };
            worst = worst.max(z);
        }
        worst
    }
}
