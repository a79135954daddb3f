//! Linear-softmax path policy over catalog items plus a STOP action.
//!
//! Features for a decision are `[context(S ⊕ generated), emb(target), 1]`,
//! where the context uses the simulator's recency decay. Logits are
//! `W φ / temperature`, so every score-function and KL gradient is available
//! in closed form.

use rand::Rng;

use crate::catalog::{log_softmax, ItemId, Simulator};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    n_items: usize,
    feature_dim: usize,
    temperature: f64,
    /// When set, the target item is never a legal action.
    mask_target: bool,
    /// Row-major `n_actions × feature_dim`.
    weights: Vec<f64>,
}

impl PolicyParams {
    pub fn zeros(n_items: usize, embedding_dim: usize, temperature: f64, mask_target: bool) -> Result<Self> {
        let feature_dim = 2 * embedding_dim + 1;
        Self::from_weights(
            n_items,
            feature_dim,
            temperature,
            mask_target,
            vec![0.0; (n_items + 1) * feature_dim],
        )
    }

    pub fn for_simulator(sim: &Simulator, temperature: f64, mask_target: bool) -> Result<Self> {
        Self::zeros(sim.catalog().len(), sim.catalog().embedding_dim(), temperature, mask_target)
    }

    pub fn from_weights(
        n_items: usize,
        feature_dim: usize,
        temperature: f64,
        mask_target: bool,
        weights: Vec<f64>,
    ) -> Result<Self> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::Parameter(format!("policy temperature must be positive, got {temperature}")));
        }
        if weights.len() != (n_items + 1) * feature_dim {
            return Err(Error::Parameter(format!(
                "weight vector has {} entries, expected {}",
                weights.len(),
                (n_items + 1) * feature_dim
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("policy weights".into()));
        }
        Ok(PolicyParams {
            n_items,
            feature_dim,
            temperature,
            mask_target,
            weights,
        })
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn n_actions(&self) -> usize {
        self.n_items + 1
    }

    pub fn stop_action(&self) -> usize {
        self.n_items
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn mask_target(&self) -> bool {
        self.mask_target
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn row(&self, action: usize) -> &[f64] {
        &self.weights[action * self.feature_dim..(action + 1) * self.feature_dim]
    }

    pub fn row_mut(&mut self, action: usize) -> &mut [f64] {
        let d = self.feature_dim;
        &mut self.weights[action * d..(action + 1) * d]
    }

    /// `W += scale · delta`.
    pub fn add_scaled(&mut self, delta: &[f64], scale: f64) {
        for (w, d) in self.weights.iter_mut().zip(delta) {
            *w += scale * d;
        }
    }

    fn masked(&self, target_pos: usize) -> Option<usize> {
        self.mask_target.then_some(target_pos)
    }

    pub fn log_distribution(&self, features: &[f64], target_pos: usize) -> Vec<f64> {
        let mask = self.masked(target_pos);
        let logits: Vec<f64> = (0..self.n_actions())
            .map(|a| {
                if Some(a) == mask {
                    f64::NEG_INFINITY
                } else {
                    crate::catalog::dot(self.row(a), features) / self.temperature
                }
            })
            .collect();
        log_softmax(&logits)
    }

    /// Action probabilities for one decision.
    pub fn distribution(&self, features: &[f64], target_pos: usize) -> Vec<f64> {
        self.log_distribution(features, target_pos)
            .into_iter()
            .map(f64::exp)
            .collect()
    }

    /// Adds `weight · ∇_W log π(action | φ)` into `grad`, using
    /// `∇_W log π(a|φ) = (onehot(a) − π) ⊗ φ / T`.
    pub fn accumulate_score(&self, features: &[f64], target_pos: usize, action: usize, weight: f64, grad: &mut [f64]) {
        if weight == 0.0 {
            return;
        }
        let probs = self.distribution(features, target_pos);
        let d = self.feature_dim;
        for (a, p) in probs.iter().enumerate() {
            let coef = weight * ((a == action) as u8 as f64 - p) / self.temperature;
            if coef == 0.0 {
                continue;
            }
            for (g, f) in grad[a * d..(a + 1) * d].iter_mut().zip(features) {
                *g += coef * f;
            }
        }
    }

    pub fn grad_log_prob(&self, features: &[f64], target_pos: usize, action: usize) -> Vec<f64> {
        let mut grad = vec![0.0; self.len()];
        self.accumulate_score(features, target_pos, action, 1.0, &mut grad);
        grad
    }
}

/// Builds the decision features `[context, emb(target), 1]`.
pub fn features(context: &[f64], target_embedding: &[f64]) -> Vec<f64> {
    let mut f = Vec::with_capacity(context.len() + target_embedding.len() + 1);
    f.extend_from_slice(context);
    f.extend_from_slice(target_embedding);
    f.push(1.0);
    f
}

pub fn decision_features(
    sim: &Simulator,
    history: &[ItemId],
    generated: &[ItemId],
    target: ItemId,
) -> Result<Vec<f64>> {
    let mut state = sim.context_state(history)?;
    for &id in generated {
        state.push(sim.catalog().embedding(id)?);
    }
    Ok(features(&state.vector(), sim.catalog().embedding(target)?))
}

pub fn action_distribution(
    params: &PolicyParams,
    sim: &Simulator,
    history: &[ItemId],
    generated: &[ItemId],
    target: ItemId,
) -> Result<Vec<f64>> {
    let target_pos = sim.catalog().position(target)?;
    Ok(params.distribution(&decision_features(sim, history, generated, target)?, target_pos))
}

/// One sampled path with everything needed to replay its gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSample {
    pub input: usize,
    pub sample: usize,
    pub items: Vec<ItemId>,
    /// Chosen action per decision; a terminal STOP is included unless the
    /// path was truncated at `L_max`.
    pub actions: Vec<usize>,
    pub log_probs: Vec<f64>,
    pub features: Vec<Vec<f64>>,
    pub target_pos: usize,
    pub truncated: bool,
}

impl PathSample {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn decisions(&self) -> usize {
        self.actions.len()
    }

    pub fn log_prob(&self) -> f64 {
        self.log_probs.iter().sum()
    }

    /// Sum over decisions of `∇ log π`, at `params`.
    pub fn score(&self, params: &PolicyParams) -> Vec<f64> {
        let mut grad = vec![0.0; params.len()];
        for (f, &a) in self.features.iter().zip(&self.actions) {
            params.accumulate_score(f, self.target_pos, a, 1.0, &mut grad);
        }
        grad
    }

    /// Per-decision `∇ log π`.
    pub fn step_scores(&self, params: &PolicyParams) -> Vec<Vec<f64>> {
        self.features
            .iter()
            .zip(&self.actions)
            .map(|(f, &a)| params.grad_log_prob(f, self.target_pos, a))
            .collect()
    }
}

/// Draws actions until STOP or `l_max` items.
pub fn sample_path<R: Rng + ?Sized>(
    params: &PolicyParams,
    sim: &Simulator,
    history: &[ItemId],
    target: ItemId,
    l_max: usize,
    rng: &mut R,
) -> Result<PathSample> {
    if l_max == 0 {
        return Err(Error::Parameter("l_max must be at least 1".into()));
    }
    let catalog = sim.catalog();
    if params.n_items() != catalog.len() {
        return Err(Error::Parameter("policy and catalog disagree on item count".into()));
    }
    let target_pos = catalog.position(target)?;
    let target_emb = catalog.embedding_at(target_pos);
    let mut state = sim.context_state(history)?;
    let mut sample = PathSample {
        input: 0,
        sample: 0,
        items: Vec::new(),
        actions: Vec::new(),
        log_probs: Vec::new(),
        features: Vec::new(),
        target_pos,
        truncated: false,
    };
    loop {
        if sample.items.len() == l_max {
            sample.truncated = true;
            break;
        }
        let phi = features(&state.vector(), target_emb);
        let log_dist = params.log_distribution(&phi, target_pos);
        let action = draw(&log_dist, rng);
        sample.actions.push(action);
        sample.log_probs.push(log_dist[action]);
        sample.features.push(phi);
        if action == params.stop_action() {
            break;
        }
        sample.items.push(catalog.item_at(action).id);
        state.push(catalog.embedding_at(action));
    }
    Ok(sample)
}

fn draw<R: Rng + ?Sized>(log_dist: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (a, l) in log_dist.iter().enumerate() {
        let p = l.exp();
        if p == 0.0 {
            continue;
        }
        last = a;
        acc += p;
        if u < acc {
            return a;
        }
    }
    last
}

/// Most likely action sequence, decided step by step.
pub fn greedy_path(
    params: &PolicyParams,
    sim: &Simulator,
    history: &[ItemId],
    target: ItemId,
    l_max: usize,
) -> Result<Vec<ItemId>> {
    let catalog = sim.catalog();
    let target_pos = catalog.position(target)?;
    let mut state = sim.context_state(history)?;
    let mut path = Vec::new();
    while path.len() < l_max {
        let phi = features(&state.vector(), catalog.embedding_at(target_pos));
        let dist = params.log_distribution(&phi, target_pos);
        let best = dist
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (a, &l)| if l > acc.1 { (a, l) } else { acc })
            .0;
        if best == params.stop_action() {
            break;
        }
        path.push(catalog.item_at(best).id);
        state.push(catalog.embedding_at(best));
    }
    Ok(path)
}

/// Frozen reference policy used as the KL anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorPolicy(PolicyParams);

impl PriorPolicy {
    pub fn new(params: PolicyParams) -> Self {
        PriorPolicy(params)
    }

    pub fn params(&self) -> &PolicyParams {
        &self.0
    }
}

/// A supervised step sequence: the path items followed by STOP.
#[derive(Debug, Clone, PartialEq)]
pub struct SupervisedExample {
    pub history: Vec<ItemId>,
    pub target: ItemId,
    pub path: Vec<ItemId>,
}

#[derive(Debug, Clone)]
struct SupervisedStep {
    features: Vec<f64>,
    target_pos: usize,
    action: usize,
}

fn supervised_steps(sim: &Simulator, examples: &[SupervisedExample]) -> Result<Vec<SupervisedStep>> {
    let catalog = sim.catalog();
    let mut steps = Vec::new();
    for ex in examples {
        let target_pos = catalog.position(ex.target)?;
        let target_emb = catalog.embedding_at(target_pos);
        let mut state = sim.context_state(&ex.history)?;
        for &item in &ex.path {
            let pos = catalog.position(item)?;
            steps.push(SupervisedStep {
                features: features(&state.vector(), target_emb),
                target_pos,
                action: pos,
            });
            state.push(catalog.embedding_at(pos));
        }
        steps.push(SupervisedStep {
            features: features(&state.vector(), target_emb),
            target_pos,
            action: catalog.len(),
        });
    }
    Ok(steps)
}

fn steps_log_likelihood(params: &PolicyParams, steps: &[SupervisedStep]) -> f64 {
    steps
        .iter()
        .map(|s| params.log_distribution(&s.features, s.target_pos)[s.action])
        .sum()
}

/// Total log-likelihood of the examples (including each terminal STOP).
pub fn demo_log_likelihood(params: &PolicyParams, sim: &Simulator, examples: &[SupervisedExample]) -> Result<f64> {
    Ok(steps_log_likelihood(params, &supervised_steps(sim, examples)?))
}

#[derive(Debug, Clone, Default)]
pub struct PretrainReport {
    /// Log-likelihood before each epoch's update, then after the last.
    pub log_likelihood: Vec<f64>,
    pub steps: usize,
}

/// Full-batch gradient ascent on the mean step log-likelihood.
pub fn pretrain_supervised(
    init: PolicyParams,
    sim: &Simulator,
    examples: &[SupervisedExample],
    epochs: usize,
    lr: f64,
) -> Result<(PriorPolicy, PretrainReport)> {
    if examples.is_empty() {
        return Err(Error::Parameter("pretraining needs at least one demonstration".into()));
    }
    let steps = supervised_steps(sim, examples)?;
    let mut params = init;
    let mut history = Vec::with_capacity(epochs + 1);
    let scale = 1.0 / steps.len() as f64;
    for _ in 0..epochs {
        history.push(steps_log_likelihood(&params, &steps));
        let mut grad = vec![0.0; params.len()];
        for s in &steps {
            params.accumulate_score(&s.features, s.target_pos, s.action, scale, &mut grad);
        }
        params.add_scaled(&grad, lr);
        if params.weights().iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("pretraining diverged".into()));
        }
    }
    history.push(steps_log_likelihood(&params, &steps));
    Ok((
        PriorPolicy::new(params),
        PretrainReport {
            log_likelihood: history,
            steps: steps.len(),
        },
    ))
}

/// Categorical `KL(π_θ(·|φ) ‖ π_0(·|φ))` for one decision.
pub fn kl_step(params: &PolicyParams, prior: &PolicyParams, features: &[f64], target_pos: usize) -> f64 {
    let lp = params.log_distribution(features, target_pos);
    let lq = prior.log_distribution(features, target_pos);
    lp.iter()
        .zip(&lq)
        .filter(|(l, _)| l.is_finite())
        .map(|(l, q)| l.exp() * (l - q))
        .sum()
}

/// Adds `scale · ∇_W KL` for one decision, using
/// `∂KL/∂z_a = π_a (log π_a − log π0_a − KL)` on the logits `z`.
pub fn accumulate_kl_gradient(
    params: &PolicyParams,
    prior: &PolicyParams,
    features: &[f64],
    target_pos: usize,
    scale: f64,
    grad: &mut [f64],
) {
    let lp = params.log_distribution(features, target_pos);
    let lq = prior.log_distribution(features, target_pos);
    let kl: f64 = lp
        .iter()
        .zip(&lq)
        .filter(|(l, _)| l.is_finite())
        .map(|(l, q)| l.exp() * (l - q))
        .sum();
    let d = params.feature_dim();
    for a in 0..params.n_actions() {
        if !lp[a].is_finite() {
            continue;
        }
        let coef = scale * lp[a].exp() * (lp[a] - lq[a] - kl) / params.temperature();
        for (g, f) in grad[a * d..(a + 1) * d].iter_mut().zip(features) {
            *g += coef * f;
        }
    }
}

/// Summed per-decision KL over the contexts a path actually visited.
pub fn kl_per_path(params: &PolicyParams, prior: &PriorPolicy, sample: &PathSample) -> f64 {
    sample
        .features
        .iter()
        .map(|f| kl_step(params, prior.params(), f, sample.target_pos))
        .sum()
}

pub fn kl_path_gradient(params: &PolicyParams, prior: &PriorPolicy, sample: &PathSample) -> Vec<f64> {
    let mut grad = vec![0.0; params.len()];
    for f in &sample.features {
        accumulate_kl_gradient(params, prior.params(), f, sample.target_pos, 1.0, &mut grad);
    }
    grad
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::catalog::Catalog;

    fn sim(seed: u64, n: usize, d: usize) -> Simulator {
        Simulator::new(Arc::new(Catalog::generate(seed, n, 5, 2, d).unwrap()), 0.8, 0.2).unwrap()
    }

    fn random_params(rng: &mut ChaCha8Rng, n: usize, d: usize, scale: f64) -> PolicyParams {
        let mut p = PolicyParams::zeros(n, d, 1.0, false).unwrap();
        for w in p.weights_mut() {
            *w = rng.random_range(-scale..scale);
        }
        p
    }

    #[test]
    fn zero_weights_give_uniform_distribution() {
        let s = sim(1, 6, 3);
        let p = PolicyParams::for_simulator(&s, 1.0, false).unwrap();
        let dist = action_distribution(&p, &s, &[0, 1], &[2], 4).unwrap();
        for q in &dist {
            assert!((q - 1.0 / 7.0).abs() < 1e-15);
        }
    }

    #[test]
    fn masked_target_has_zero_probability() {
        let s = sim(1, 6, 3);
        let p = PolicyParams::for_simulator(&s, 1.0, true).unwrap();
        let dist = action_distribution(&p, &s, &[0], &[], 4).unwrap();
        assert_eq!(dist[4], 0.0);
        assert!((dist.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((dist[0] - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn high_temperature_flattens_distribution() {
        let s = sim(2, 8, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let base = random_params(&mut rng, 8, 4, 2.0);
        let hot = PolicyParams::from_weights(8, 9, 1e4, false, base.weights().to_vec()).unwrap();
        let dist = action_distribution(&hot, &s, &[1, 2], &[], 5).unwrap();
        for q in dist {
            assert!((q - 1.0 / 9.0).abs() <= 1e-3);
        }
    }

    #[test]
    fn forced_stop_and_forced_continue() {
        let s = sim(3, 5, 3);
        let mut p = PolicyParams::for_simulator(&s, 1.0, false).unwrap();
        let bias = p.feature_dim() - 1;
        p.row_mut(p.stop_action())[bias] = 1e4;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let empty = sample_path(&p, &s, &[0], 2, 4, &mut rng).unwrap();
        assert!(empty.is_empty() && !empty.truncated);
        assert_eq!(empty.log_probs.len(), 1);

        p.row_mut(p.stop_action())[bias] = -1e4;
        let full = sample_path(&p, &s, &[0], 2, 4, &mut rng).unwrap();
        assert!(full.truncated);
        assert_eq!(full.len(), 4);
        assert_eq!(full.log_probs.len(), 4);
    }

    #[test]
    fn sampling_is_reproducible() {
        let s = sim(4, 10, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = random_params(&mut rng, 10, 4, 1.0);
        let a = sample_path(&p, &s, &[1], 3, 6, &mut ChaCha8Rng::seed_from_u64(77)).unwrap();
        let b = sample_path(&p, &s, &[1], 3, 6, &mut ChaCha8Rng::seed_from_u64(77)).unwrap();
        assert_eq!(a, b);
        assert!((a.log_prob() - a.log_probs.iter().sum::<f64>()).abs() == 0.0);
    }

    #[test]
    fn certain_action_has_zero_score() {
        let s = sim(5, 4, 2);
        let mut p = PolicyParams::for_simulator(&s, 1.0, false).unwrap();
        let bias = p.feature_dim() - 1;
        p.row_mut(1)[bias] = 800.0;
        let phi = decision_features(&s, &[0], &[], 2).unwrap();
        assert_eq!(p.distribution(&phi, 2)[1], 1.0);
        assert!(p.grad_log_prob(&phi, 2, 1).iter().all(|g| *g == 0.0));
    }

    #[test]
    fn score_matches_finite_differences() {
        let h = 1e-5;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for cfg in 0..100u64 {
            let s = sim(cfg, 4, 2);
            let p = random_params(&mut rng, 4, 2, 1.5);
            let target = (cfg % 4) as u32;
            let phi = decision_features(&s, &[(cfg % 3) as u32], &[1], target).unwrap();
            let tpos = target as usize;
            let action = (cfg % 5) as usize;
            let analytic = p.grad_log_prob(&phi, tpos, action);
            let mut max_err: f64 = 0.0;
            let scale = analytic.iter().map(|g| g.abs()).fold(0.0, f64::max).max(1e-8);
            for k in 0..p.len() {
                let mut plus = p.clone();
                plus.weights_mut()[k] += h;
                let mut minus = p.clone();
                minus.weights_mut()[k] -= h;
                let fd = (plus.log_distribution(&phi, tpos)[action] - minus.log_distribution(&phi, tpos)[action])
                    / (2.0 * h);
                max_err = max_err.max((fd - analytic[k]).abs());
            }
            assert!(max_err / scale < 1e-5, "config {cfg}: rel err {}", max_err / scale);
        }
    }

    #[test]
    fn two_action_hand_residuals() {
        // Two decisions in a 1-item catalog: the row sums of the summed score
        // equal onehot counts minus summed probabilities, times the bias feature.
        let cat = Arc::new(
            Catalog::new(
                vec![crate::catalog::Item::new(0, vec![0]), crate::catalog::Item::new(1, vec![0])],
                vec![vec![1.0], vec![-1.0]],
            )
            .unwrap(),
        );
        let s = Simulator::new(cat, 0.5, 1.0).unwrap();
        let p = PolicyParams::for_simulator(&s, 1.0, true).unwrap();
        // Target 1 masked: actions are item 0 and STOP, each with prob 1/2.
        let phi = decision_features(&s, &[], &[], 1).unwrap();
        let g0 = p.grad_log_prob(&phi, 1, 0);
        let g1 = p.grad_log_prob(&phi, 1, 2);
        let d = p.feature_dim();
        let bias = d - 1;
        assert!((g0[bias] - 0.5).abs() < 1e-15);
        assert!((g0[2 * d + bias] + 0.5).abs() < 1e-15);
        let summed: Vec<f64> = g0.iter().zip(&g1).map(|(a, b)| a + b).collect();
        assert!(summed[bias].abs() < 1e-15 && summed[2 * d + bias].abs() < 1e-15);
        assert!(summed[d..2 * d].iter().all(|x| *x == 0.0));
    }

    #[test]
    fn kl_cases() {
        let cat = Arc::new(
            Catalog::new(
                vec![crate::catalog::Item::new(0, vec![0]), crate::catalog::Item::new(1, vec![0])],
                vec![vec![1.0], vec![-1.0]],
            )
            .unwrap(),
        );
        let s = Simulator::new(cat, 0.5, 1.0).unwrap();
        let theta = PolicyParams::for_simulator(&s, 1.0, true).unwrap();
        let mut prior = theta.clone();
        let bias = prior.feature_dim() - 1;
        // log(0.9/0.1) on item 0 vs STOP gives prior (0.9, 0.1).
        prior.row_mut(0)[bias] = (9.0f64).ln();
        let phi = decision_features(&s, &[], &[], 1).unwrap();
        let kl = kl_step(&theta, &prior, &phi, 1);
        let expected = 0.5 * (0.5f64 / 0.9).ln() + 0.5 * (0.5f64 / 0.1).ln();
        assert!((kl - expected).abs() < 1e-12);
        assert!((kl - 0.5108).abs() < 1e-4);
        assert_eq!(kl_step(&theta, &theta, &phi, 1), 0.0);
    }

    #[test]
    fn kl_is_nonnegative_and_gradient_matches_fd() {
        let s = sim(9, 5, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for i in 0..1000 {
            let a = random_params(&mut rng, 5, 2, 2.0);
            let b = random_params(&mut rng, 5, 2, 2.0);
            let phi = decision_features(&s, &[(i % 5) as u32], &[], ((i + 1) % 5) as u32).unwrap();
            let tpos = (i + 1) % 5;
            assert!(kl_step(&a, &b, &phi, tpos) >= -1e-12);
            assert!(kl_step(&a, &a, &phi, tpos).abs() <= 1e-12);
        }

        let prior = PriorPolicy::new(random_params(&mut rng, 5, 2, 1.0));
        let p = random_params(&mut rng, 5, 2, 1.0);
        let sample = sample_path(&p, &s, &[0], 3, 4, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let analytic = kl_path_gradient(&p, &prior, &sample);
        let h = 1e-5;
        let scale = analytic.iter().map(|g| g.abs()).fold(0.0, f64::max);
        for k in 0..p.len() {
            let mut plus = p.clone();
            plus.weights_mut()[k] += h;
            let mut minus = p.clone();
            minus.weights_mut()[k] -= h;
            let fd = (kl_per_path(&plus, &prior, &sample) - kl_per_path(&minus, &prior, &sample)) / (2.0 * h);
            assert!((fd - analytic[k]).abs() / scale < 1e-5);
        }
    }

    #[test]
    fn pretraining_fits_repeated_demo() {
        let s = sim(12, 6, 3);
        let examples = vec![
            SupervisedExample {
                history: vec![1],
                target: 5,
                path: vec![0],
            };
            4
        ];
        let init = PolicyParams::for_simulator(&s, 1.0, false).unwrap();
        let at_zero = demo_log_likelihood(&init, &s, &examples).unwrap();
        assert!((at_zero + 8.0 * (7.0f64).ln()).abs() < 1e-12);

        let (prior, report) = pretrain_supervised(init, &s, &examples, 200, 2.0).unwrap();
        for w in report.log_likelihood.windows(2) {
            assert!(w[1] >= w[0] - 1e-12, "log-likelihood decreased: {w:?}");
        }
        let phi = decision_features(&s, &[1], &[], 5).unwrap();
        assert!(prior.params().distribution(&phi, 5)[0] > 0.9);

        assert!(matches!(
            pretrain_supervised(prior.params().clone(), &s, &[], 1, 1.0),
            Err(Error::Parameter(_))
        ));
    }
}
