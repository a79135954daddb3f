//! Policy-gradient estimators over a batch of `n` inputs × `m` sampled paths.
//!
//! Every estimator has the form `(1/nm) Σ_{i,j} Σ_t w_t^{(i,j)} ∇log π_t`
//! and differs only in the per-decision weight `w_t`. Decisions include the
//! terminal STOP, whose reward-to-go is zero; truncated paths have no STOP
//! decision.

use serde::{Deserialize, Serialize};

use crate::critic::{CriticModel, CriticTarget};
use crate::error::{Error, Result};
use crate::policy::{accumulate_kl_gradient, PathSample, PolicyParams, PriorPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum EstimatorKind {
    /// Whole-path reward on every decision.
    #[serde(rename = "std")]
    Std,
    /// Reward-to-go.
    #[serde(rename = "rtg")]
    RewardToGo,
    /// Path reward minus the mean path reward of the input's group.
    #[serde(rename = "grpo")]
    GroupBaseline,
    /// Reward-to-go minus a learned value.
    #[serde(rename = "a2c")]
    ActorCritic,
    /// Reward-to-go minus the mean reward-to-go at the same position over
    /// the input's group.
    #[default]
    #[serde(rename = "prorl")]
    PositionBaseline,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 5] = [
        EstimatorKind::Std,
        EstimatorKind::RewardToGo,
        EstimatorKind::GroupBaseline,
        EstimatorKind::ActorCritic,
        EstimatorKind::PositionBaseline,
    ];

    pub fn token(self) -> &'static str {
        match self {
            EstimatorKind::Std => "std",
            EstimatorKind::RewardToGo => "rtg",
            EstimatorKind::GroupBaseline => "grpo",
            EstimatorKind::ActorCritic => "a2c",
            EstimatorKind::PositionBaseline => "prorl",
        }
    }

    pub fn needs_group(self) -> bool {
        matches!(self, EstimatorKind::GroupBaseline | EstimatorKind::PositionBaseline)
    }
}

impl std::str::FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EstimatorKind::ALL
            .into_iter()
            .find(|k| k.token() == s)
            .ok_or_else(|| Error::Config(format!("unknown estimator {s:?}")))
    }
}

impl std::fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.token())
    }
}

/// Sampled paths laid out input-major (`samples[i * m + j]`) with their
/// transformed step rewards `r̃_t`, one per path item.
#[derive(Debug, Clone)]
pub struct RolloutBatch {
    n: usize,
    m: usize,
    samples: Vec<PathSample>,
    rewards: Vec<Vec<f64>>,
}

impl RolloutBatch {
    pub fn new(n: usize, m: usize, samples: Vec<PathSample>, rewards: Vec<Vec<f64>>) -> Result<Self> {
        if n == 0 || m == 0 {
            return Err(Error::Parameter("batch needs at least one input and one sample".into()));
        }
        if samples.len() != n * m || rewards.len() != n * m {
            return Err(Error::Parameter(format!(
                "expected {} samples and reward rows, got {} and {}",
                n * m,
                samples.len(),
                rewards.len()
            )));
        }
        for (s, r) in samples.iter().zip(&rewards) {
            if s.len() != r.len() {
                return Err(Error::Parameter(format!(
                    "path of length {} paired with {} step rewards",
                    s.len(),
                    r.len()
                )));
            }
        }
        Ok(RolloutBatch { n, m, samples, rewards })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn samples(&self) -> &[PathSample] {
        &self.samples
    }

    pub fn rewards(&self) -> &[Vec<f64>] {
        &self.rewards
    }

    pub fn group(&self, input: usize) -> std::ops::Range<usize> {
        input * self.m..(input + 1) * self.m
    }

    pub fn path_reward(&self, k: usize) -> f64 {
        self.rewards[k].iter().sum()
    }
}

/// `G_t` for every decision of every sample; the STOP decision gets 0.
pub fn compute_reward_to_go(batch: &RolloutBatch) -> Vec<Vec<f64>> {
    batch
        .samples
        .iter()
        .zip(&batch.rewards)
        .map(|(s, r)| {
            let mut g = vec![0.0; s.decisions()];
            let mut acc = 0.0;
            for t in (0..r.len()).rev() {
                acc += r[t];
                g[t] = acc;
            }
            g
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BaselineOptions {
    /// Exclude the sample itself from its own baseline.
    pub leave_one_out: bool,
}

#[derive(Debug, Clone)]
pub struct AdvantageTable {
    pub returns: Vec<Vec<f64>>,
    /// `baselines[i][t]`: mean reward-to-go at decision `t` over the samples
    /// of input `i` that reach it (including the sample itself).
    pub baselines: Vec<Vec<f64>>,
    pub advantages: Vec<Vec<f64>>,
}

fn group_mean(values: impl Iterator<Item = f64>) -> (f64, usize) {
    let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    (if count > 0 { sum / count as f64 } else { 0.0 }, count)
}

/// With leave-one-out, a lone reacher has no peers and gets a zero baseline,
/// which keeps the estimator exactly unbiased.
fn baseline_for(own: f64, mean: f64, count: usize, opts: BaselineOptions) -> f64 {
    match (opts.leave_one_out, count) {
        (true, 0..=1) => 0.0,
        (true, _) => (mean * count as f64 - own) / (count - 1) as f64,
        (false, 0..=1) => own,
        (false, _) => mean,
    }
}

fn require_group(batch: &RolloutBatch) -> Result<()> {
    if batch.m < 2 {
        return Err(Error::Parameter(format!(
            "group baselines need m >= 2 samples per input, got {}",
            batch.m
        )));
    }
    Ok(())
}

/// Position-specific advantages `Â_t = G_t − Ḡ_{i,t}`. A decision reached by
/// a single sample of its group gets `Â = 0` unless leave-one-out is set.
pub fn position_advantages(batch: &RolloutBatch, opts: BaselineOptions) -> Result<AdvantageTable> {
    require_group(batch)?;
    let returns = compute_reward_to_go(batch);
    let mut advantages: Vec<Vec<f64>> = returns.iter().map(|g| vec![0.0; g.len()]).collect();
    let mut baselines = Vec::with_capacity(batch.n);
    for i in 0..batch.n {
        let group = batch.group(i);
        let depth = group.clone().map(|k| returns[k].len()).max().unwrap_or(0);
        let mut row = Vec::with_capacity(depth);
        for t in 0..depth {
            let (mean, count) = group_mean(group.clone().filter_map(|k| returns[k].get(t).copied()));
            row.push(mean);
            for k in group.clone().filter(|&k| t < returns[k].len()) {
                advantages[k][t] = returns[k][t] - baseline_for(returns[k][t], mean, count, opts);
            }
        }
        baselines.push(row);
    }
    Ok(AdvantageTable {
        returns,
        baselines,
        advantages,
    })
}

/// Per-decision weights for the non-learned estimators.
pub fn estimator_weights(batch: &RolloutBatch, kind: EstimatorKind, opts: BaselineOptions) -> Result<Vec<Vec<f64>>> {
    let decisions = |k: usize| batch.samples[k].decisions();
    let weights = match kind {
        EstimatorKind::Std => (0..batch.samples.len())
            .map(|k| vec![batch.path_reward(k); decisions(k)])
            .collect(),
        EstimatorKind::RewardToGo => compute_reward_to_go(batch),
        EstimatorKind::GroupBaseline => {
            require_group(batch)?;
            let mut out = Vec::with_capacity(batch.samples.len());
            for i in 0..batch.n {
                let (mean, count) = group_mean(batch.group(i).map(|k| batch.path_reward(k)));
                for k in batch.group(i) {
                    let r = batch.path_reward(k);
                    out.push(vec![r - baseline_for(r, mean, count, opts); decisions(k)]);
                }
            }
            out
        }
        EstimatorKind::PositionBaseline => position_advantages(batch, opts)?.advantages,
        EstimatorKind::ActorCritic => {
            return Err(Error::Parameter(
                "actor-critic weights need a critic; use critic_weights".into(),
            ))
        }
    };
    Ok(weights)
}

/// Actor-critic weights `G_t − V_t` from precomputed values.
pub fn weights_from_values(batch: &RolloutBatch, values: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let returns = compute_reward_to_go(batch);
    if values.len() != returns.len() || values.iter().zip(&returns).any(|(v, g)| v.len() != g.len()) {
        return Err(Error::Parameter("critic values misaligned with batch decisions".into()));
    }
    Ok(returns
        .iter()
        .zip(values)
        .map(|(g, v)| g.iter().zip(v).map(|(g, v)| g - v).collect())
        .collect())
}

pub fn critic_values(batch: &RolloutBatch, critic: &CriticModel) -> Vec<Vec<f64>> {
    batch
        .samples
        .iter()
        .map(|s| {
            s.features
                .iter()
                .enumerate()
                .map(|(t, f)| critic.value(f, t))
                .collect()
        })
        .collect()
}

pub fn critic_weights(batch: &RolloutBatch, critic: &CriticModel) -> Result<Vec<Vec<f64>>> {
    weights_from_values(batch, &critic_values(batch, critic))
}

/// Regression targets `(φ_t, t) → G_t` for every decision in the batch.
pub fn critic_targets<'a>(batch: &'a RolloutBatch, returns: &[Vec<f64>]) -> Vec<CriticTarget<'a>> {
    batch
        .samples
        .iter()
        .zip(returns)
        .flat_map(|(s, g)| {
            s.features.iter().zip(g).enumerate().map(|(t, (f, &g))| CriticTarget {
                features: f,
                position: t,
                target: g,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    pub grad: Vec<f64>,
    pub kind: EstimatorKind,
    pub samples: usize,
}

impl GradientEstimate {
    pub fn is_finite(&self) -> bool {
        self.grad.iter().all(|g| g.is_finite())
    }
}

/// `(1/nm) Σ_k Σ_t w_t ∇log π_t`, reduced in sample-then-decision order.
pub fn weighted_gradient(
    batch: &RolloutBatch,
    params: &PolicyParams,
    weights: &[Vec<f64>],
    kind: EstimatorKind,
) -> GradientEstimate {
    let scale = 1.0 / batch.samples.len() as f64;
    let mut grad = vec![0.0; params.len()];
    for (s, w) in batch.samples.iter().zip(weights) {
        for ((f, &a), &wt) in s.features.iter().zip(&s.actions).zip(w) {
            params.accumulate_score(f, s.target_pos, a, wt * scale, &mut grad);
        }
    }
    GradientEstimate {
        grad,
        kind,
        samples: batch.samples.len(),
    }
}

pub fn estimate_std(batch: &RolloutBatch, params: &PolicyParams) -> GradientEstimate {
    let w = estimator_weights(batch, EstimatorKind::Std, BaselineOptions::default()).expect("std needs no group");
    weighted_gradient(batch, params, &w, EstimatorKind::Std)
}

pub fn estimate_rtg(batch: &RolloutBatch, params: &PolicyParams) -> GradientEstimate {
    let w = compute_reward_to_go(batch);
    weighted_gradient(batch, params, &w, EstimatorKind::RewardToGo)
}

pub fn estimate_grpo(batch: &RolloutBatch, params: &PolicyParams, opts: BaselineOptions) -> Result<GradientEstimate> {
    let w = estimator_weights(batch, EstimatorKind::GroupBaseline, opts)?;
    Ok(weighted_gradient(batch, params, &w, EstimatorKind::GroupBaseline))
}

pub fn estimate_position(
    batch: &RolloutBatch,
    params: &PolicyParams,
    opts: BaselineOptions,
) -> Result<GradientEstimate> {
    let w = position_advantages(batch, opts)?.advantages;
    Ok(weighted_gradient(batch, params, &w, EstimatorKind::PositionBaseline))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticUpdate {
    pub mse_before: f64,
}

/// Actor gradient weighted by `G_t − V(φ_t, t)`, then one critic step toward
/// `G_t`. The actor weights use the critic from before the update.
pub fn estimate_a2c(
    batch: &RolloutBatch,
    params: &PolicyParams,
    critic: &mut CriticModel,
    critic_lr: f64,
    loss_coef: f64,
) -> Result<(GradientEstimate, CriticUpdate)> {
    let weights = critic_weights(batch, critic)?;
    let est = weighted_gradient(batch, params, &weights, EstimatorKind::ActorCritic);
    let returns = compute_reward_to_go(batch);
    let data = critic_targets(batch, &returns);
    let mse_before = critic.train_step(&data, critic_lr, loss_coef);
    Ok((est, CriticUpdate { mse_before }))
}

/// Subtracts `λ · (1/nm) Σ ∇ KL` over every visited decision context.
pub fn add_kl_gradient(
    mut est: GradientEstimate,
    batch: &RolloutBatch,
    params: &PolicyParams,
    prior: &PriorPolicy,
    lambda: f64,
) -> Result<GradientEstimate> {
    if !(lambda >= 0.0) {
        return Err(Error::Parameter(format!("KL coefficient must be >= 0, got {lambda}")));
    }
    if lambda == 0.0 {
        return Ok(est);
    }
    let scale = -lambda / batch.samples.len() as f64;
    for s in &batch.samples {
        for f in &s.features {
            accumulate_kl_gradient(params, prior.params(), f, s.target_pos, scale, &mut est.grad);
        }
    }
    Ok(est)
}

/// Pooled population variance of per-decision weights.
pub fn weight_variance(weights: &[Vec<f64>]) -> f64 {
    let (sum, count) = weights
        .iter()
        .flatten()
        .fold((0.0, 0usize), |(s, c), w| (s + w, c + 1));
    if count == 0 {
        return 0.0;
    }
    let mean = sum / count as f64;
    weights.iter().flatten().map(|w| (w - mean).powi(2)).sum::<f64>() / count as f64
}

/// Variance of the weights an estimator would apply to this batch.
pub fn advantage_variance(
    batch: &RolloutBatch,
    kind: EstimatorKind,
    critic: Option<&CriticModel>,
    opts: BaselineOptions,
) -> Result<f64> {
    let weights = match (kind, critic) {
        (EstimatorKind::ActorCritic, Some(c)) => critic_weights(batch, c)?,
        (EstimatorKind::ActorCritic, None) => {
            return Err(Error::Parameter("actor-critic variance needs a critic".into()))
        }
        _ => estimator_weights(batch, kind, opts)?,
    };
    Ok(weight_variance(&weights))
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::catalog::{Catalog, Simulator};
    use crate::policy::sample_path;

    /// Synthetic sample with `len` items; STOP appended unless truncated.
    fn fake(len: usize, truncated: bool) -> PathSample {
        let decisions = if truncated { len } else { len + 1 };
        PathSample {
            input: 0,
            sample: 0,
            items: vec![0; len],
            actions: (0..decisions).map(|t| if t < len { 0 } else { 2 }).collect(),
            log_probs: vec![-1.0; decisions],
            features: vec![vec![0.0, 0.0, 1.0]; decisions],
            target_pos: 1,
            truncated,
        }
    }

    fn batch(n: usize, m: usize, rewards: Vec<Vec<f64>>) -> RolloutBatch {
        let samples = rewards.iter().map(|r| fake(r.len(), false)).collect();
        RolloutBatch::new(n, m, samples, rewards).unwrap()
    }

    fn params() -> PolicyParams {
        let mut p = PolicyParams::zeros(2, 1, 1.0, false).unwrap();
        p.weights_mut().copy_from_slice(&[0.1, -0.2, 0.3, 0.0, 0.5, -0.4, 0.2, 0.1, 0.05]);
        p
    }

    #[test]
    fn reward_to_go_is_suffix_sum() {
        let b = batch(1, 1, vec![vec![1.0, 2.0, 3.0]]);
        let g = compute_reward_to_go(&b);
        assert_eq!(g[0], vec![6.0, 5.0, 3.0, 0.0]);
        assert_eq!(g[0][0], b.path_reward(0));
    }

    #[test]
    fn truncated_paths_have_no_stop_decision() {
        let s = fake(2, true);
        let b = RolloutBatch::new(1, 1, vec![s], vec![vec![1.0, 2.0]]).unwrap();
        assert_eq!(compute_reward_to_go(&b)[0], vec![3.0, 2.0]);
    }

    #[test]
    fn zero_rewards_give_zero_gradient() {
        let b = batch(1, 2, vec![vec![0.0, 0.0], vec![0.0]]);
        for est in [estimate_std(&b, &params()), estimate_rtg(&b, &params())] {
            assert!(est.grad.iter().all(|g| *g == 0.0));
        }
    }

    #[test]
    fn single_path_std_scales_score() {
        let b = batch(1, 1, vec![vec![0.7, 0.5]]);
        let p = params();
        let est = estimate_std(&b, &p);
        let score = b.samples()[0].score(&p);
        for (e, s) in est.grad.iter().zip(&score) {
            assert!((e - 1.2 * s).abs() < 1e-15);
        }
    }

    #[test]
    fn single_step_rtg_equals_std_on_item_decisions() {
        // With one item and a STOP, rtg drops only the STOP term (G = 0).
        let b = batch(1, 1, vec![vec![0.9]]);
        let p = params();
        let rtg = estimate_rtg(&b, &p);
        let s = &b.samples()[0];
        let item_score = p.grad_log_prob(&s.features[0], s.target_pos, s.actions[0]);
        for (r, i) in rtg.grad.iter().zip(&item_score) {
            assert!((r - 0.9 * i).abs() < 1e-15);
        }
    }

    #[test]
    fn group_baseline_weights() {
        let b = batch(1, 3, vec![vec![1.0], vec![0.5, 1.5], vec![3.0]]);
        let w = estimator_weights(&b, EstimatorKind::GroupBaseline, BaselineOptions::default()).unwrap();
        assert_eq!(w, vec![vec![-1.0, -1.0], vec![0.0, 0.0, 0.0], vec![1.0, 1.0]]);

        let same = batch(1, 3, vec![vec![2.0]; 3]);
        let est = estimate_grpo(&same, &params(), BaselineOptions::default()).unwrap();
        assert!(est.grad.iter().all(|g| *g == 0.0));

        let lonely = batch(1, 1, vec![vec![1.0]]);
        assert!(matches!(
            estimate_grpo(&lonely, &params(), BaselineOptions::default()),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            estimate_position(&lonely, &params(), BaselineOptions::default()),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn position_advantage_examples() {
        // G_1 over three samples = (1, 2, 3).
        let b = batch(1, 3, vec![vec![1.0], vec![2.0], vec![3.0]]);
        let table = position_advantages(&b, BaselineOptions::default()).unwrap();
        let first: Vec<f64> = table.advantages.iter().map(|a| a[0]).collect();
        assert_eq!(first, vec![-1.0, 0.0, 1.0]);

        // Decision 2 reached by two of three samples with G_2 = (0.5, 1.5);
        // the third stopped at decision 1.
        let b = batch(1, 3, vec![vec![1.0, 0.5], vec![0.0, 1.5], vec![]]);
        let table = position_advantages(&b, BaselineOptions::default()).unwrap();
        assert_eq!(table.baselines[0][1], 1.0);
        assert_eq!(table.advantages[0][1], -0.5);
        assert_eq!(table.advantages[1][1], 0.5);

        // Decision reached by a single sample has zero advantage.
        let b = batch(1, 2, vec![vec![1.0, 2.0, 3.0], vec![]]);
        let table = position_advantages(&b, BaselineOptions::default()).unwrap();
        assert_eq!(table.advantages[0][2], 0.0);
        assert_eq!(table.advantages[0][3], 0.0);
    }

    #[test]
    fn leave_one_out_baseline() {
        let b = batch(1, 3, vec![vec![1.0], vec![2.0], vec![6.0]]);
        let opts = BaselineOptions { leave_one_out: true };
        let table = position_advantages(&b, opts).unwrap();
        assert_eq!(table.advantages[0][0], 1.0 - 4.0);
        assert_eq!(table.advantages[2][0], 6.0 - 1.5);
    }

    #[test]
    fn identical_group_gives_zero_reward_gradient() {
        let b = batch(2, 4, vec![vec![1.0, -0.5]; 8]);
        let p = params();
        for kind in [EstimatorKind::GroupBaseline, EstimatorKind::PositionBaseline] {
            let w = estimator_weights(&b, kind, BaselineOptions::default()).unwrap();
            let est = weighted_gradient(&b, &p, &w, kind);
            assert!(est.grad.iter().all(|g| *g == 0.0), "{kind}");
        }
    }

    #[test]
    fn actor_critic_limits() {
        let s = Simulator::new(Arc::new(Catalog::generate(3, 4, 3, 1, 2).unwrap()), 0.8, 0.3).unwrap();
        let p = PolicyParams::for_simulator(&s, 1.0, false).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let samples: Vec<PathSample> = (0..4).map(|_| sample_path(&p, &s, &[0], 2, 3, &mut rng).unwrap()).collect();
        let rewards: Vec<Vec<f64>> = samples.iter().map(|x| (0..x.len()).map(|t| 0.3 * t as f64 + 0.1).collect()).collect();
        let b = RolloutBatch::new(2, 2, samples, rewards).unwrap();

        let perfect = weights_from_values(&b, &compute_reward_to_go(&b)).unwrap();
        assert!(perfect.iter().flatten().all(|w| *w == 0.0));

        let zero = CriticModel::zeroed(p.feature_dim(), 16, 3);
        let w = critic_weights(&b, &zero).unwrap();
        let a2c = weighted_gradient(&b, &p, &w, EstimatorKind::ActorCritic);
        assert_eq!(a2c.grad, estimate_rtg(&b, &p).grad);
    }

    #[test]
    fn kl_term_behaviour() {
        let b = batch(1, 2, vec![vec![1.0], vec![0.5, 0.5]]);
        let p = params();
        let est = estimate_std(&b, &p);
        let prior = PriorPolicy::new(PolicyParams::zeros(2, 1, 1.0, false).unwrap());
        assert_eq!(add_kl_gradient(est.clone(), &b, &p, &prior, 0.0).unwrap(), est);
        let same = PriorPolicy::new(p.clone());
        let with_self = add_kl_gradient(est.clone(), &b, &p, &same, 5.0).unwrap();
        for (a, b) in with_self.grad.iter().zip(&est.grad) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(add_kl_gradient(est, &b, &p, &prior, -1.0).is_err());
    }

    #[test]
    fn variance_of_weights() {
        assert_eq!(weight_variance(&[vec![2.0, 2.0], vec![2.0]]), 0.0);
        assert!((weight_variance(&[vec![-1.0, 0.0, 1.0]]) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn estimator_tokens_round_trip() {
        for kind in EstimatorKind::ALL {
            assert_eq!(kind.token().parse::<EstimatorKind>().unwrap(), kind);
        }
        assert!("ppo".parse::<EstimatorKind>().is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn position_advantages_sum_to_zero(
                lens in proptest::collection::vec(0usize..6, 6),
                seed in 0u64..1000,
            ) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let rewards: Vec<Vec<f64>> = lens
                    .iter()
                    .map(|&l| (0..l).map(|_| rand::Rng::random_range(&mut rng, -3.0..3.0)).collect())
                    .collect();
                let b = batch(2, 3, rewards);
                let table = position_advantages(&b, BaselineOptions::default()).unwrap();
                for i in 0..2 {
                    for t in 0..7 {
                        let total: f64 = b.group(i).filter_map(|k| table.advantages[k].get(t)).sum();
                        prop_assert!(total.abs() <= 1e-12);
                    }
                }
            }
        }
    }
}
