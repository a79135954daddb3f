//! Two-layer value regressor used by the actor-critic baseline.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticModel {
    pub(crate) input_dim: usize,
    pub(crate) hidden: usize,
    pub(crate) l_max: usize,
    /// `hidden × input_dim`, row-major.
    pub(crate) w1: Vec<f64>,
    pub(crate) b1: Vec<f64>,
    pub(crate) w2: Vec<f64>,
    pub(crate) b2: f64,
}

impl CriticModel {
    /// `feature_dim` is the policy feature width; one extra input carries the
    /// decision position scaled by `l_max`.
    pub fn new(feature_dim: usize, hidden: usize, l_max: usize, seed: u64) -> Self {
        let input_dim = feature_dim + 1;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a1 = (6.0 / (input_dim + hidden) as f64).sqrt();
        let a2 = (6.0 / (hidden + 1) as f64).sqrt();
        CriticModel {
            input_dim,
            hidden,
            l_max: l_max.max(1),
            w1: (0..hidden * input_dim).map(|_| rng.random_range(-a1..a1)).collect(),
            b1: vec![0.0; hidden],
            w2: (0..hidden).map(|_| rng.random_range(-a2..a2)).collect(),
            b2: 0.0,
        }
    }

    /// A critic whose output is identically zero.
    pub fn zeroed(feature_dim: usize, hidden: usize, l_max: usize) -> Self {
        let mut c = Self::new(feature_dim, hidden, l_max, 0);
        c.w2.iter_mut().for_each(|w| *w = 0.0);
        c
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    fn input(&self, features: &[f64], position: usize) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.input_dim);
        x.extend_from_slice(features);
        x.push(position as f64 / self.l_max as f64);
        x
    }

    fn forward(&self, x: &[f64]) -> (Vec<f64>, f64) {
        let mut act = vec![0.0; self.hidden];
        for (h, a) in act.iter_mut().enumerate() {
            let row = &self.w1[h * self.input_dim..(h + 1) * self.input_dim];
            let z = self.b1[h] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
            *a = z.max(0.0);
        }
        let out = self.b2 + act.iter().zip(&self.w2).map(|(a, w)| a * w).sum::<f64>();
        (act, out)
    }

    pub fn value(&self, features: &[f64], position: usize) -> f64 {
        self.forward(&self.input(features, position)).1
    }

    pub fn mse(&self, data: &[CriticTarget<'_>]) -> f64 {
        if data.is_empty() {
            return 0.0;
        }
        data.iter()
            .map(|d| (self.value(d.features, d.position) - d.target).powi(2))
            .sum::<f64>()
            / data.len() as f64
    }

    /// One full-batch gradient step on `coef · MSE`. Returns the MSE before
    /// the step.
    pub fn train_step(&mut self, data: &[CriticTarget<'_>], lr: f64, coef: f64) -> f64 {
        if data.is_empty() {
            return 0.0;
        }
        let n = data.len() as f64;
        let mut g_w1 = vec![0.0; self.w1.len()];
        let mut g_b1 = vec![0.0; self.hidden];
        let mut g_w2 = vec![0.0; self.hidden];
        let mut g_b2 = 0.0;
        let mut loss = 0.0;
        for d in data {
            let x = self.input(d.features, d.position);
            let (act, out) = self.forward(&x);
            let err = out - d.target;
            loss += err * err;
            let dout = 2.0 * err / n;
            g_b2 += dout;
            for h in 0..self.hidden {
                g_w2[h] += dout * act[h];
                if act[h] > 0.0 {
                    let dz = dout * self.w2[h];
                    g_b1[h] += dz;
                    for (g, v) in g_w1[h * self.input_dim..(h + 1) * self.input_dim].iter_mut().zip(&x) {
                        *g += dz * v;
                    }
                }
            }
        }
        let step = lr * coef;
        for (w, g) in self.w1.iter_mut().zip(&g_w1) {
            *w -= step * g;
        }
        for (b, g) in self.b1.iter_mut().zip(&g_b1) {
            *b -= step * g;
        }
        for (w, g) in self.w2.iter_mut().zip(&g_w2) {
            *w -= step * g;
        }
        self.b2 -= step * g_b2;
        loss / n
    }
}

/// One regression example: decision features, decision position, and the
/// observed reward-to-go.
#[derive(Debug, Clone, Copy)]
pub struct CriticTarget<'a> {
    pub features: &'a [f64],
    pub position: usize,
    pub target: f64,
}
