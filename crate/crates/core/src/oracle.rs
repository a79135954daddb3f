//! Exact path distributions for tiny instances.
//!
//! Every action sequence ending in STOP or truncation is enumerated with its
//! probability, score vector and step rewards, giving exact expectations and
//! the exact policy gradient against which estimators are checked.

use std::fmt::Write as _;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::catalog::{Catalog, ItemId, Simulator};
use crate::error::{Error, Result};
use crate::policy::{features, PolicyParams};
use crate::rewards::{apply_centering, decompose, CenteringMode, RewardWeights, StepRewardVector};

pub const DEFAULT_BUDGET: u128 = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct EnumeratedPath {
    pub items: Vec<ItemId>,
    pub actions: Vec<usize>,
    pub probability: f64,
    /// `Σ_t ∇ log π(a_t | s_t)` over every decision of the path.
    pub score: Vec<f64>,
    pub steps: StepRewardVector,
}

impl EnumeratedPath {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn reward(&self, weights: &RewardWeights) -> f64 {
        (0..self.steps.len()).map(|t| weights.combine(self.steps.step(t))).sum()
    }
}

#[derive(Debug, Clone)]
pub struct Enumeration {
    pub paths: Vec<EnumeratedPath>,
    pub n_params: usize,
}

impl Enumeration {
    pub fn total_probability(&self) -> f64 {
        self.paths.iter().map(|p| p.probability).sum()
    }

    /// Tab-separated table of probability, length and items.
    pub fn dump(&self) -> String {
        let mut out = String::from("probability\tlength\titems\n");
        for p in &self.paths {
            let items: Vec<String> = p.items.iter().map(|i| i.to_string()).collect();
            writeln!(out, "{}\t{}\t{}", p.probability, p.len(), items.join(",")).unwrap();
        }
        out
    }
}

/// Upper bound `|items|^{L_max} · L_max` on the enumeration work.
pub fn enumeration_cost(n_items: usize, l_max: usize) -> u128 {
    (n_items as u128)
        .checked_pow(l_max as u32)
        .and_then(|x| x.checked_mul(l_max as u128))
        .unwrap_or(u128::MAX)
}

struct Walker<'a> {
    params: &'a PolicyParams,
    sim: &'a Simulator,
    history: &'a [ItemId],
    target: ItemId,
    target_pos: usize,
    l_max: usize,
    out: Vec<EnumeratedPath>,
}

impl Walker<'_> {
    fn visit(
        &mut self,
        state: &crate::catalog::ContextState,
        items: &mut Vec<ItemId>,
        actions: &mut Vec<usize>,
        log_prob: f64,
        score: &mut Vec<f64>,
    ) -> Result<()> {
        let catalog = self.sim.catalog();
        if items.len() == self.l_max {
            return self.emit(items, actions, log_prob, score);
        }
        let phi = features(&state.vector(), catalog.embedding_at(self.target_pos));
        let log_dist = self.params.log_distribution(&phi, self.target_pos);
        for (a, &lp) in log_dist.iter().enumerate() {
            if lp == f64::NEG_INFINITY {
                continue;
            }
            self.params.accumulate_score(&phi, self.target_pos, a, 1.0, score);
            actions.push(a);
            if a == self.params.stop_action() {
                self.emit(items, actions, log_prob + lp, score)?;
            } else {
                let mut next = state.clone();
                next.push(catalog.embedding_at(a));
                items.push(catalog.item_at(a).id);
                self.visit(&next, items, actions, log_prob + lp, score)?;
                items.pop();
            }
            actions.pop();
            self.params.accumulate_score(&phi, self.target_pos, a, -1.0, score);
        }
        Ok(())
    }

    fn emit(&mut self, items: &[ItemId], actions: &[usize], log_prob: f64, score: &[f64]) -> Result<()> {
        self.out.push(EnumeratedPath {
            items: items.to_vec(),
            actions: actions.to_vec(),
            probability: log_prob.exp(),
            score: score.to_vec(),
            steps: decompose(self.sim, self.history, items, self.target)?,
        });
        Ok(())
    }
}

pub fn enumerate(
    params: &PolicyParams,
    sim: &Simulator,
    history: &[ItemId],
    target: ItemId,
    l_max: usize,
    budget: u128,
) -> Result<Enumeration> {
    if l_max == 0 {
        return Err(Error::Parameter("l_max must be at least 1".into()));
    }
    let required = enumeration_cost(sim.catalog().len(), l_max);
    if required > budget {
        return Err(Error::Budget { required, budget });
    }
    let mut walker = Walker {
        params,
        sim,
        history,
        target,
        target_pos: sim.catalog().position(target)?,
        l_max,
        out: Vec::new(),
    };
    let state = sim.context_state(history)?;
    let mut score = vec![0.0; params.len()];
    walker.visit(&state, &mut Vec::new(), &mut Vec::new(), 0.0, &mut score)?;
    Ok(Enumeration {
        paths: walker.out,
        n_params: params.len(),
    })
}

/// `Σ P(path) · R(path)`.
pub fn exact_expected_reward<F>(enumeration: &Enumeration, reward: F) -> f64
where
    F: Fn(&EnumeratedPath) -> f64,
{
    enumeration.paths.iter().map(|p| p.probability * reward(p)).sum()
}

/// `Σ P(path) · score(path) · R(path)`.
pub fn exact_gradient<F>(enumeration: &Enumeration, reward: F) -> Vec<f64>
where
    F: Fn(&EnumeratedPath) -> f64,
{
    let mut grad = vec![0.0; enumeration.n_params];
    for p in &enumeration.paths {
        let w = p.probability * reward(p);
        if w == 0.0 {
            continue;
        }
        for (g, s) in grad.iter_mut().zip(&p.score) {
            *g += w * s;
        }
    }
    grad
}

/// Gradient of the expected sum of transformed step rewards.
pub fn exact_centered_gradient(
    enumeration: &Enumeration,
    mode: &CenteringMode,
    weights: &RewardWeights,
) -> Result<Vec<f64>> {
    let totals = enumeration
        .paths
        .iter()
        .map(|p| Ok(apply_centering(&p.steps, mode, weights)?.iter().sum::<f64>()))
        .collect::<Result<Vec<f64>>>()?;
    let mut grad = vec![0.0; enumeration.n_params];
    for (p, r) in enumeration.paths.iter().zip(&totals) {
        for (g, s) in grad.iter_mut().zip(&p.score) {
            *g += p.probability * r * s;
        }
    }
    Ok(grad)
}

/// `P(L ≥ t)` for 1-based position `t`.
pub fn reach_probability(enumeration: &Enumeration, t: usize) -> f64 {
    enumeration
        .paths
        .iter()
        .filter(|p| p.len() >= t)
        .map(|p| p.probability)
        .sum()
}

/// `E[r_t | L ≥ t]` for 1-based position `t` under the weighted reward.
pub fn exact_expected_step_reward(enumeration: &Enumeration, t: usize, weights: &RewardWeights) -> Result<f64> {
    if t == 0 {
        return Err(Error::UndefinedPosition(t));
    }
    let mut mass = 0.0;
    let mut total = 0.0;
    for p in enumeration.paths.iter().filter(|p| p.len() >= t) {
        mass += p.probability;
        total += p.probability * weights.combine(p.steps.step(t - 1));
    }
    if mass <= 0.0 {
        return Err(Error::UndefinedPosition(t));
    }
    Ok(total / mass)
}

/// A seeded tiny problem: at most 3 items, `L_max ≤ 3`, random weights.
#[derive(Debug, Clone)]
pub struct ToyInstance {
    pub sim: Simulator,
    pub params: PolicyParams,
    pub history: Vec<ItemId>,
    pub target: ItemId,
    pub l_max: usize,
}

impl ToyInstance {
    pub fn generate(seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_items = rng.random_range(2..=3);
        let l_max = rng.random_range(1..=3);
        let catalog = Catalog::generate(rng.random(), n_items, 3, 1, 2)?;
        let sim = Simulator::new(Arc::new(catalog), rng.random_range(0.2..0.9), rng.random_range(0.3..1.5))?;
        let mut params = PolicyParams::for_simulator(&sim, rng.random_range(0.5..2.0), false)?;
        params.weights_mut().iter_mut().for_each(|w| *w = rng.random_range(-1.0..1.0));
        let history = vec![rng.random_range(0..n_items as ItemId)];
        let target = rng.random_range(0..n_items as ItemId);
        Ok(ToyInstance {
            sim,
            params,
            history,
            target,
            l_max,
        })
    }

    pub fn enumerate(&self, params: &PolicyParams) -> Result<Enumeration> {
        enumerate(params, &self.sim, &self.history, self.target, self.l_max, DEFAULT_BUDGET)
    }

    /// Central differences of `E[R]` in every weight.
    pub fn finite_difference_gradient(&self, weights: &RewardWeights, h: f64) -> Result<Vec<f64>> {
        let reward = |p: &EnumeratedPath| p.reward(weights);
        (0..self.params.len())
            .map(|k| {
                let mut plus = self.params.clone();
                plus.weights_mut()[k] += h;
                let mut minus = self.params.clone();
                minus.weights_mut()[k] -= h;
                let jp = exact_expected_reward(&self.enumerate(&plus)?, reward);
                let jm = exact_expected_reward(&self.enumerate(&minus)?, reward);
                Ok((jp - jm) / (2.0 * h))
            })
            .collect()
    }

    /// `‖exact − fd‖ / ‖exact‖` for the uncentered path reward.
    pub fn gradient_check(&self, weights: &RewardWeights, h: f64) -> Result<f64> {
        let exact = exact_gradient(&self.enumerate(&self.params)?, |p| p.reward(weights));
        let fd = self.finite_difference_gradient(weights, h)?;
        Ok(relative_error(&exact, &fd))
    }
}

pub fn relative_error(reference: &[f64], other: &[f64]) -> f64 {
    let diff: f64 = reference.iter().zip(other).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = reference.iter().map(|a| a * a).sum::<f64>().sqrt();
    if norm == 0.0 {
        diff
    } else {
        diff / norm
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::sample_path;

    fn toy(seed: u64, n_items: usize) -> Simulator {
        let cat = Catalog::generate(seed, n_items, 3, 1, 2).unwrap();
        Simulator::new(Arc::new(cat), 0.6, 0.5).unwrap()
    }

    fn random_params(sim: &Simulator, seed: u64, mask: bool) -> PolicyParams {
        let mut p = PolicyParams::for_simulator(sim, 1.0, mask).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        p.weights_mut().iter_mut().for_each(|w| *w = rng.random_range(-1.0..1.0));
        p
    }

    #[test]
    fn two_items_two_steps_has_seven_paths() {
        let sim = toy(1, 2);
        let params = PolicyParams::for_simulator(&sim, 1.0, false).unwrap();
        let e = enumerate(&params, &sim, &[0], 1, 2, DEFAULT_BUDGET).unwrap();
        assert_eq!(e.paths.len(), 7);
        assert!((e.total_probability() - 1.0).abs() < 1e-10);
        let empty = e.paths.iter().find(|p| p.is_empty()).unwrap();
        assert!((empty.probability - 1.0 / 3.0).abs() < 1e-12);
        let mean_len = exact_expected_reward(&e, |p| p.len() as f64);
        assert!((mean_len - 10.0 / 9.0).abs() < 1e-12);
        assert!((exact_expected_reward(&e, |_| 2.5) - 2.5).abs() < 1e-12);
    }

    #[test]
    fn masked_target_paths_never_contain_it() {
        let sim = toy(2, 3);
        let params = random_params(&sim, 3, true);
        let e = enumerate(&params, &sim, &[0], 2, 3, DEFAULT_BUDGET).unwrap();
        assert!(e.paths.iter().all(|p| !p.items.contains(&2)));
        assert!((e.total_probability() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn budget_is_enforced() {
        let sim = toy(1, 3);
        let params = PolicyParams::for_simulator(&sim, 1.0, false).unwrap();
        assert!(matches!(
            enumerate(&params, &sim, &[0], 1, 3, 10),
            Err(Error::Budget { required: 81, .. })
        ));
    }

    #[test]
    fn zero_reward_gives_zero_gradient() {
        let sim = toy(4, 3);
        let params = random_params(&sim, 5, false);
        let e = enumerate(&params, &sim, &[0], 1, 2, DEFAULT_BUDGET).unwrap();
        assert!(exact_gradient(&e, |_| 0.0).iter().all(|g| *g == 0.0));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let weights = RewardWeights::default();
        for seed in 0..5 {
            let sim = toy(seed, 3);
            let params = random_params(&sim, 100 + seed, false);
            let reward = |p: &EnumeratedPath| p.reward(&weights);
            let e = enumerate(&params, &sim, &[0], 2, 2, DEFAULT_BUDGET).unwrap();
            let g = exact_gradient(&e, reward);
            let h = 1e-5;
            let mut err = 0.0;
            let mut norm = 0.0;
            for k in 0..params.len() {
                let mut plus = params.clone();
                plus.weights_mut()[k] += h;
                let mut minus = params.clone();
                minus.weights_mut()[k] -= h;
                let jp = exact_expected_reward(&enumerate(&plus, &sim, &[0], 2, 2, DEFAULT_BUDGET).unwrap(), reward);
                let jm = exact_expected_reward(&enumerate(&minus, &sim, &[0], 2, 2, DEFAULT_BUDGET).unwrap(), reward);
                let fd = (jp - jm) / (2.0 * h);
                err += (fd - g[k]).powi(2);
                norm += g[k].powi(2);
            }
            assert!((err / norm).sqrt() < 1e-6, "seed {seed}: rel err {}", (err / norm).sqrt());
        }
    }

    #[test]
    fn step_rewards_telescope_in_expectation() {
        let weights = RewardWeights::default();
        let sim = toy(6, 3);
        let params = random_params(&sim, 7, false);
        let e = enumerate(&params, &sim, &[1], 0, 3, DEFAULT_BUDGET).unwrap();
        let total: f64 = (1..=3)
            .map(|t| reach_probability(&e, t) * exact_expected_step_reward(&e, t, &weights).unwrap())
            .sum();
        assert!((total - exact_expected_reward(&e, |p| p.reward(&weights))).abs() < 1e-9);
        assert!(matches!(exact_expected_step_reward(&e, 4, &weights), Err(Error::UndefinedPosition(4))));
    }

    #[test]
    fn deterministic_path_step_reward() {
        let sim = toy(8, 2);
        let mut params = PolicyParams::for_simulator(&sim, 1.0, false).unwrap();
        // Always choose item 0 (bias feature is last).
        let d = params.feature_dim();
        params.row_mut(0)[d - 1] = 60.0;
        let e = enumerate(&params, &sim, &[1], 1, 1, DEFAULT_BUDGET).unwrap();
        let weights = RewardWeights::default();
        let r1 = decompose(&sim, &[1], &[0], 1).unwrap();
        let expected = weights.combine(r1.step(0));
        assert!((exact_expected_step_reward(&e, 1, &weights).unwrap() - expected).abs() < 1e-9);
    }

    #[test]
    fn expected_length_matches_monte_carlo() {
        let sim = toy(9, 3);
        let params = random_params(&sim, 10, false);
        let e = enumerate(&params, &sim, &[0], 1, 3, DEFAULT_BUDGET).unwrap();
        let exact = exact_expected_reward(&e, |p| p.len() as f64);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let lens: Vec<f64> = (0..n)
            .map(|_| sample_path(&params, &sim, &[0], 1, 3, &mut rng).unwrap().len() as f64)
            .collect();
        let mean = lens.iter().sum::<f64>() / n as f64;
        let var = lens.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / n as f64;
        assert!((mean - exact).abs() < 3.0 * (var / n as f64).sqrt());
    }

    #[test]
    fn dump_lists_every_path() {
        let sim = toy(1, 2);
        let params = PolicyParams::for_simulator(&sim, 1.0, false).unwrap();
        let e = enumerate(&params, &sim, &[0], 1, 2, DEFAULT_BUDGET).unwrap();
        assert_eq!(e.dump().lines().count(), 8);
    }
}
