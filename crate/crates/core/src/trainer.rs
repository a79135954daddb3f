//! End-to-end experiment pipeline: environment construction, supervised
//! pretraining, warm-up statistics, the policy-gradient loop, evaluation and
//! diagnostics.

use std::io::Write;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::catalog::{Catalog, ItemId, Simulator};
use crate::checkpoint::Checkpoint;
use crate::config::ExperimentConfig;
use crate::critic::CriticModel;
use crate::error::{Error, Result};
use crate::estimators::{
    add_kl_gradient, compute_reward_to_go, critic_targets, critic_weights, estimator_weights, weight_variance,
    weighted_gradient, EstimatorKind, RolloutBatch,
};
use crate::mining::{mine, synthetic_sequences, split_users, Demonstration, FeasibilityOracle, MiningOptions};
use crate::policy::{
    greedy_path, kl_per_path, pretrain_supervised, sample_path, PathSample, PolicyParams, PretrainReport,
    PriorPolicy, SupervisedExample,
};
use crate::rewards::{
    apply_centering, coherence, decompose, prefix_metrics, CenteringKind, CenteringMode, Component, RewardStats,
    RewardWeights, StepRewardVector,
};

mod tag {
    pub const CATALOG: u64 = 1;
    pub const USERS: u64 = 2;
    pub const SPLIT: u64 = 3;
    pub const EVAL_TASKS: u64 = 4;
    pub const TRAIN_TASKS: u64 = 5;
    pub const WARMUP_TASKS: u64 = 6;
    pub const ROLLOUT: u64 = 7;
    pub const WARMUP_ROLLOUT: u64 = 8;
    pub const CRITIC: u64 = 9;
    pub const EVAL: u64 = 10;
    pub const ROLLOUT_AT_K: u64 = 11;
}

/// Independent stream for `(seed, purpose, a, b)`.
pub fn derived_rng(seed: u64, purpose: u64, a: u64, b: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    for (chunk, v) in key.chunks_exact_mut(8).zip([seed, purpose, a, b]) {
        chunk.copy_from_slice(&v.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

fn fold_seed(seed: u64, purpose: u64) -> u64 {
    derived_rng(seed, purpose, 0, 0).random()
}

/// One guidance problem: a history and the item to steer toward.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Task {
    pub history: Vec<ItemId>,
    pub target: ItemId,
}

#[derive(Debug, Clone)]
pub struct Environment {
    pub sim: Simulator,
    pub oracle: FeasibilityOracle,
    /// Histories of training users.
    pub train_histories: Vec<Vec<ItemId>>,
    pub eval_tasks: Vec<Task>,
    pub demonstrations: Vec<Demonstration>,
}

fn random_target<R: Rng + ?Sized>(catalog: &Catalog, history: &[ItemId], rng: &mut R) -> ItemId {
    loop {
        let id = catalog.item_at(rng.random_range(0..catalog.len())).id;
        if !history.contains(&id) {
            return id;
        }
    }
}

impl Environment {
    pub fn build(cfg: &ExperimentConfig) -> Result<Self> {
        let c = &cfg.catalog;
        let catalog = Catalog::generate_coupled(
            fold_seed(cfg.seed, tag::CATALOG),
            c.n_items,
            c.n_attributes,
            c.attrs_per_item,
            c.embedding_dim,
            c.coupling,
        )?;
        if cfg.data.history_length >= c.n_items {
            return Err(Error::Config("history must leave at least one candidate target".into()));
        }
        let sim = Simulator::new(Arc::new(catalog), c.decay, c.temperature)?;
        let d = &cfg.data;
        let users = synthetic_sequences(
            sim.catalog(),
            d.n_users,
            d.sequence_length,
            d.walk_bias,
            fold_seed(cfg.seed, tag::USERS),
        );
        let (train, _validation, test) = split_users(&users, fold_seed(cfg.seed, tag::SPLIT))?;
        let oracle = FeasibilityOracle::new(d.min_shared_attributes)?;
        let opts = MiningOptions {
            archive_trailing: d.archive_trailing,
        };
        let mut demonstrations = Vec::new();
        for s in &train {
            demonstrations.extend(mine(s, d.history_length, &oracle, sim.catalog(), opts)?.demonstrations);
        }
        let hist = |s: &crate::mining::RawSequence| s.items[..d.history_length].to_vec();
        let mut rng = derived_rng(cfg.seed, tag::EVAL_TASKS, 0, 0);
        let eval_tasks = (0..cfg.train.eval_inputs)
            .map(|k| {
                let history = hist(&test[k % test.len()]);
                let target = random_target(sim.catalog(), &history, &mut rng);
                Task { history, target }
            })
            .collect();
        Ok(Environment {
            train_histories: train.iter().map(hist).collect(),
            sim,
            oracle,
            eval_tasks,
            demonstrations,
        })
    }

    /// Demonstrations as supervised examples. With a masked target, demos
    /// that revisit their goal mid-path are unreachable and skipped.
    pub fn examples(&self, mask_target: bool) -> Vec<SupervisedExample> {
        self.demonstrations
            .iter()
            .map(Demonstration::to_example)
            .filter(|ex| !mask_target || !ex.path.contains(&ex.target))
            .collect()
    }

    /// `n` training tasks for one epoch, drawn from the held-in pool.
    pub fn sample_tasks(&self, seed: u64, purpose: u64, epoch: u64, n: usize) -> Vec<Task> {
        let mut rng = derived_rng(seed, purpose, epoch, 0);
        (0..n)
            .map(|_| {
                let history = self.train_histories[rng.random_range(0..self.train_histories.len())].clone();
                let target = random_target(self.sim.catalog(), &history, &mut rng);
                Task { history, target }
            })
            .collect()
    }
}

/// Supervised pretraining on mined demonstrations, starting from zeros.
pub fn pretrain(cfg: &ExperimentConfig, env: &Environment) -> Result<(PriorPolicy, PretrainReport)> {
    let init = PolicyParams::for_simulator(&env.sim, cfg.policy.temperature, cfg.policy.mask_target)?;
    if cfg.pretrain.epochs == 0 {
        return Ok((PriorPolicy::new(init), PretrainReport::default()));
    }
    let examples = env.examples(cfg.policy.mask_target);
    pretrain_supervised(init, &env.sim, &examples, cfg.pretrain.epochs, cfg.pretrain.lr)
}

/// Samples `m` paths per task on per-sample streams and decomposes their
/// rewards. Output is ordered input-major regardless of scheduling.
#[allow(clippy::too_many_arguments)]
pub fn generate_rollouts(
    params: &PolicyParams,
    sim: &Simulator,
    tasks: &[Task],
    m: usize,
    l_max: usize,
    seed: u64,
    purpose: u64,
    epoch: u64,
) -> Result<(Vec<PathSample>, Vec<StepRewardVector>)> {
    let pairs: Vec<(PathSample, StepRewardVector)> = (0..tasks.len() * m)
        .into_par_iter()
        .map(|k| {
            let (i, j) = (k / m, k % m);
            let task = &tasks[i];
            let mut rng = derived_rng(seed, purpose, epoch, ((i as u64) << 32) | j as u64);
            let mut s = sample_path(params, sim, &task.history, task.target, l_max, &mut rng)?;
            s.input = i;
            s.sample = j;
            let steps = decompose(sim, &task.history, &s.items, task.target)?;
            Ok((s, steps))
        })
        .collect::<Result<_>>()?;
    Ok(pairs.into_iter().unzip())
}

/// One or more epochs of rollouts pooled into frozen step-reward statistics.
pub fn run_warmup(cfg: &ExperimentConfig, params: &PolicyParams, env: &Environment) -> Result<RewardStats> {
    let mut stats = RewardStats::new();
    for e in 0..cfg.train.warmup_epochs as u64 {
        let tasks = env.sample_tasks(cfg.seed, tag::WARMUP_TASKS, e, cfg.train.batch_size);
        let (_, steps) = generate_rollouts(
            params,
            &env.sim,
            &tasks,
            cfg.train.samples_per_input,
            cfg.policy.l_max,
            cfg.seed,
            tag::WARMUP_ROLLOUT,
            e,
        )?;
        for s in &steps {
            for t in 0..s.len() {
                stats.push(s.step(t))?;
            }
        }
    }
    stats.freeze();
    Ok(stats)
}

/// `1 −` mean pairwise Jaccard similarity of the paths' item sets.
pub fn jaccard_diversity(paths: &[Vec<ItemId>]) -> Result<f64> {
    if paths.len() < 2 {
        return Err(Error::Parameter(format!("diversity needs at least 2 paths, got {}", paths.len())));
    }
    let sets: Vec<Vec<ItemId>> = paths
        .iter()
        .map(|p| {
            let mut s = p.clone();
            s.sort_unstable();
            s.dedup();
            s
        })
        .collect();
    let mut total = 0.0;
    let mut pairs = 0usize;
    for a in 0..sets.len() {
        for b in a + 1..sets.len() {
            total += jaccard(&sets[a], &sets[b]);
            pairs += 1;
        }
    }
    Ok(1.0 - total / pairs as f64)
}

fn jaccard(a: &[ItemId], b: &[ItemId]) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    inter as f64 / (a.len() + b.len() - inter) as f64
}

/// Mean within-group diversity over the inputs of a batch.
fn batch_diversity(samples: &[PathSample], n: usize, m: usize) -> f64 {
    let paths: Vec<Vec<ItemId>> = samples.iter().map(|s| s.items.clone()).collect();
    if m < 2 {
        return jaccard_diversity(&paths).unwrap_or(0.0);
    }
    (0..n)
        .map(|i| jaccard_diversity(&paths[i * m..(i + 1) * m]).expect("m >= 2"))
        .sum::<f64>()
        / n as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decoding {
    Greedy,
    Sampled { seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvalReport {
    pub n_inputs: usize,
    pub mean_length: f64,
    pub empty_fraction: f64,
    /// Averaged over non-empty paths only; zero when every path is empty.
    pub ctr: f64,
    pub coherence: f64,
    /// Empty paths count as zero.
    pub ioi: f64,
    pub ior: f64,
}

pub fn evaluate(
    params: &PolicyParams,
    sim: &Simulator,
    tasks: &[Task],
    l_max: usize,
    decoding: Decoding,
) -> Result<EvalReport> {
    if tasks.is_empty() {
        return Err(Error::Parameter("evaluation needs at least one input".into()));
    }
    let rows: Vec<(usize, f64, f64, f64, f64)> = tasks
        .par_iter()
        .enumerate()
        .map(|(i, task)| {
            let path = match decoding {
                Decoding::Greedy => greedy_path(params, sim, &task.history, task.target, l_max)?,
                Decoding::Sampled { seed } => {
                    let mut rng = derived_rng(seed, tag::EVAL, i as u64, 0);
                    sample_path(params, sim, &task.history, task.target, l_max, &mut rng)?.items
                }
            };
            if path.is_empty() {
                return Ok((0, 0.0, 0.0, 0.0, 0.0));
            }
            let m = prefix_metrics(sim, &task.history, &path, task.target)?;
            let [ioi, ior, ctr] = m.values_at(m.len());
            let coh = coherence(sim.catalog(), &path)?.value;
            Ok((path.len(), ioi, ior, ctr, coh))
        })
        .collect::<Result<_>>()?;
    let n = rows.len() as f64;
    let non_empty = rows.iter().filter(|r| r.0 > 0).count();
    let avg_non_empty = |f: fn(&(usize, f64, f64, f64, f64)) -> f64| {
        if non_empty == 0 {
            0.0
        } else {
            rows.iter().filter(|r| r.0 > 0).map(f).sum::<f64>() / non_empty as f64
        }
    };
    Ok(EvalReport {
        n_inputs: rows.len(),
        mean_length: rows.iter().map(|r| r.0 as f64).sum::<f64>() / n,
        empty_fraction: (rows.len() - non_empty) as f64 / n,
        ctr: avg_non_empty(|r| r.3),
        coherence: avg_non_empty(|r| r.4),
        ioi: rows.iter().map(|r| r.1).sum::<f64>() / n,
        ior: rows.iter().map(|r| r.2).sum::<f64>() / n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RolloutAtK {
    pub k: usize,
    pub max_ioi: Vec<f64>,
    pub max_ior: Vec<f64>,
    pub mean_max_ioi: f64,
    pub mean_max_ior: f64,
}

/// Best IoI and best IoR (taken independently) over `k` sampled paths per
/// input. Sample `j` of input `i` uses the same stream for every `k`, so
/// sample sets are nested.
pub fn rollout_at_k(
    params: &PolicyParams,
    sim: &Simulator,
    tasks: &[Task],
    l_max: usize,
    k: usize,
    seed: u64,
) -> Result<RolloutAtK> {
    if k == 0 {
        return Err(Error::Parameter("K must be at least 1".into()));
    }
    let per_input: Vec<(f64, f64)> = tasks
        .par_iter()
        .enumerate()
        .map(|(i, task)| {
            let mut best = (f64::NEG_INFINITY, f64::NEG_INFINITY);
            for j in 0..k {
                let mut rng = derived_rng(seed, tag::ROLLOUT_AT_K, i as u64, j as u64);
                let s = sample_path(params, sim, &task.history, task.target, l_max, &mut rng)?;
                let m = prefix_metrics(sim, &task.history, &s.items, task.target)?;
                let [ioi, ior, _] = m.values_at(m.len());
                best = (best.0.max(ioi), best.1.max(ior));
            }
            Ok(best)
        })
        .collect::<Result<_>>()?;
    let n = per_input.len().max(1) as f64;
    let (max_ioi, max_ior): (Vec<f64>, Vec<f64>) = per_input.into_iter().unzip();
    Ok(RolloutAtK {
        k,
        mean_max_ioi: max_ioi.iter().sum::<f64>() / n,
        mean_max_ior: max_ior.iter().sum::<f64>() / n,
        max_ioi,
        max_ior,
    })
}

/// Pooled raw (weighted, uncentered) step reward per position.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepProfile {
    pub sum: Vec<f64>,
    pub count: Vec<u64>,
}

impl StepProfile {
    pub fn add(&mut self, steps: &StepRewardVector, weights: &RewardWeights) {
        if self.sum.len() < steps.len() {
            self.sum.resize(steps.len(), 0.0);
            self.count.resize(steps.len(), 0);
        }
        for t in 0..steps.len() {
            self.sum[t] += weights.combine(steps.step(t));
            self.count[t] += 1;
        }
    }

    pub fn means(&self) -> Vec<f64> {
        self.sum.iter().zip(&self.count).map(|(s, &c)| s / c as f64).collect()
    }

    pub fn pooled_mean(&self) -> f64 {
        self.sum.iter().sum::<f64>() / self.count.iter().sum::<u64>().max(1) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochMetrics {
    pub epoch: u64,
    pub mean_length: f64,
    pub diversity: f64,
    /// Raw weighted path reward of the epoch's rollouts.
    pub mean_reward: f64,
    pub advantage_variance: f64,
    /// Weight variances of the standard, group-baseline and position-baseline
    /// estimators on this epoch's batch (zero when a group has one sample).
    pub variance_std: f64,
    pub variance_grpo: f64,
    pub variance_prorl: f64,
    pub mean_kl: f64,
    pub critic_mse: f64,
    pub eval_ctr: f64,
    pub eval_ioi: f64,
    pub eval_ior: f64,
    pub eval_coherence: f64,
    pub eval_length: f64,
    pub eval_empty_fraction: f64,
}

pub fn write_metrics_csv<W: Write>(metrics: &[EpochMetrics], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for m in metrics {
        w.serialize(m)?;
    }
    w.flush()?;
    Ok(())
}

pub struct Trainer {
    cfg: ExperimentConfig,
    env: Environment,
    params: PolicyParams,
    prior: PriorPolicy,
    stats: Option<RewardStats>,
    critic: Option<CriticModel>,
    mode: CenteringMode,
    next_epoch: u64,
    profile: StepProfile,
}

impl Trainer {
    /// Builds the environment, pretrains, collects warm-up statistics and,
    /// for the actor-critic estimator, fits the critic before any update.
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let env = Environment::build(cfg)?;
        let (prior, _) = pretrain(cfg, &env)?;
        Self::from_prior(cfg, env, prior)
    }

    pub fn from_prior(cfg: &ExperimentConfig, env: Environment, prior: PriorPolicy) -> Result<Self> {
        let params = prior.params().clone();
        let stats = if cfg.train.centering.needs_stats() {
            Some(run_warmup(cfg, &params, &env)?)
        } else {
            None
        };
        let mode = cfg.train.centering.resolve(stats.as_ref(), &cfg.rewards, cfg.train.epsilon)?;
        let mut t = Trainer {
            cfg: cfg.clone(),
            env,
            params,
            prior,
            stats,
            critic: None,
            mode,
            next_epoch: 0,
            profile: StepProfile::default(),
        };
        if cfg.train.estimator == EstimatorKind::ActorCritic {
            t.critic = Some(CriticModel::new(
                t.params.feature_dim(),
                cfg.critic.hidden,
                cfg.policy.l_max,
                fold_seed(cfg.seed, tag::CRITIC),
            ));
            for e in 0..cfg.critic.warmup_epochs as u64 {
                let batch = t.rollout_batch(tag::CRITIC, e)?.0;
                let returns = compute_reward_to_go(&batch);
                let data = critic_targets(&batch, &returns);
                let critic = t.critic.as_mut().expect("critic just set");
                critic.train_step(&data, cfg.critic.lr, cfg.critic.loss_coef);
            }
        }
        Ok(t)
    }

    pub fn from_checkpoint(cfg: &ExperimentConfig, ck: Checkpoint) -> Result<Self> {
        cfg.validate()?;
        if ck.config_hash != run_hash(cfg) || ck.seed != cfg.seed {
            return Err(Error::Config("checkpoint was produced by a different configuration".into()));
        }
        if cfg.train.centering.needs_stats() && ck.stats.is_none() {
            return Err(Error::Config("checkpoint lacks warm-up statistics".into()));
        }
        if cfg.train.estimator == EstimatorKind::ActorCritic && ck.critic.is_none() {
            return Err(Error::Config("checkpoint lacks a critic".into()));
        }
        let env = Environment::build(cfg)?;
        let mode = cfg.train.centering.resolve(ck.stats.as_ref(), &cfg.rewards, cfg.train.epsilon)?;
        Ok(Trainer {
            cfg: cfg.clone(),
            env,
            params: ck.policy,
            prior: PriorPolicy::new(ck.prior),
            stats: ck.stats,
            critic: ck.critic,
            mode,
            next_epoch: ck.next_epoch,
            profile: StepProfile::default(),
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn env(&self) -> &Environment {
        &self.env
    }

    pub fn params(&self) -> &PolicyParams {
        &self.params
    }

    pub fn prior(&self) -> &PriorPolicy {
        &self.prior
    }

    pub fn stats(&self) -> Option<&RewardStats> {
        self.stats.as_ref()
    }

    pub fn next_epoch(&self) -> u64 {
        self.next_epoch
    }

    /// Raw step rewards pooled over every rollout this trainer generated.
    pub fn profile(&self) -> &StepProfile {
        &self.profile
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config_hash: run_hash(&self.cfg),
            seed: self.cfg.seed,
            next_epoch: self.next_epoch,
            policy: self.params.clone(),
            prior: self.prior.params().clone(),
            stats: self.stats.clone(),
            critic: self.critic.clone(),
        }
    }

    fn rollout_batch(&self, purpose: u64, epoch: u64) -> Result<(RolloutBatch, Vec<StepRewardVector>)> {
        let t = &self.cfg.train;
        let tasks = self.env.sample_tasks(self.cfg.seed, purpose, epoch, t.batch_size);
        let rollout_purpose = if purpose == tag::TRAIN_TASKS { tag::ROLLOUT } else { purpose };
        let (samples, steps) = generate_rollouts(
            &self.params,
            &self.env.sim,
            &tasks,
            t.samples_per_input,
            self.cfg.policy.l_max,
            self.cfg.seed,
            rollout_purpose,
            epoch,
        )?;
        let rewards = steps
            .iter()
            .map(|s| apply_centering(s, &self.mode, &self.cfg.rewards))
            .collect::<Result<Vec<_>>>()?;
        Ok((RolloutBatch::new(tasks.len(), t.samples_per_input, samples, rewards)?, steps))
    }

    /// One update: rollouts, estimator, KL term, ascent step, metrics.
    pub fn step(&mut self) -> Result<EpochMetrics> {
        let epoch = self.next_epoch;
        let t = self.cfg.train.clone();
        let (batch, steps) = self.rollout_batch(tag::TRAIN_TASKS, epoch)?;
        for s in &steps {
            self.profile.add(s, &self.cfg.rewards);
        }
        let (weights, critic_mse) = match t.estimator {
            EstimatorKind::ActorCritic => {
                let critic = self.critic.as_mut().ok_or_else(|| Error::State("critic missing".into()))?;
                let w = critic_weights(&batch, critic)?;
                let returns = compute_reward_to_go(&batch);
                let mse = critic.train_step(&critic_targets(&batch, &returns), self.cfg.critic.lr, self.cfg.critic.loss_coef);
                (w, mse)
            }
            kind => (estimator_weights(&batch, kind, t.baseline_options())?, 0.0),
        };
        let compare = |kind| -> Result<f64> {
            if batch.m() < 2 {
                return Ok(0.0);
            }
            Ok(weight_variance(&estimator_weights(&batch, kind, t.baseline_options())?))
        };
        let variance_std = compare(EstimatorKind::Std)?;
        let variance_grpo = compare(EstimatorKind::GroupBaseline)?;
        let variance_prorl = compare(EstimatorKind::PositionBaseline)?;
        let est = weighted_gradient(&batch, &self.params, &weights, t.estimator);
        let est = add_kl_gradient(est, &batch, &self.params, &self.prior, t.kl_coef)?;
        let nm = batch.samples().len() as f64;
        let mean_reward = steps
            .iter()
            .map(|s| Component::ALL.iter().map(|&c| self.cfg.rewards.as_array()[c.index()] * s.component_total(c)).sum::<f64>())
            .sum::<f64>()
            / nm;
        if !est.is_finite() {
            let finite_norm = est.grad.iter().filter(|g| g.is_finite()).map(|g| g * g).sum::<f64>().sqrt();
            let bad = est.grad.iter().filter(|g| !g.is_finite()).count();
            return Err(Error::NonFinite(format!(
                "gradient at epoch {epoch}: {bad} non-finite entries, finite-part norm {finite_norm:.6e}, \
                 mean raw reward {mean_reward:.6e}, weight variance {:.6e}",
                weight_variance(&weights)
            )));
        }
        self.params.add_scaled(&est.grad, t.lr);
        self.next_epoch += 1;

        let mean_kl = batch.samples().iter().map(|s| kl_per_path(&self.params, &self.prior, s)).sum::<f64>() / nm;
        let decoding = if t.eval_greedy {
            Decoding::Greedy
        } else {
            Decoding::Sampled { seed: self.cfg.seed }
        };
        let eval = evaluate(&self.params, &self.env.sim, &self.env.eval_tasks, self.cfg.policy.l_max, decoding)?;
        Ok(EpochMetrics {
            epoch,
            mean_length: batch.samples().iter().map(|s| s.len() as f64).sum::<f64>() / nm,
            diversity: batch_diversity(batch.samples(), batch.n(), batch.m()),
            mean_reward,
            advantage_variance: weight_variance(&weights),
            variance_std,
            variance_grpo,
            variance_prorl,
            mean_kl,
            critic_mse,
            eval_ctr: eval.ctr,
            eval_ioi: eval.ioi,
            eval_ior: eval.ior,
            eval_coherence: eval.coherence,
            eval_length: eval.mean_length,
            eval_empty_fraction: eval.empty_fraction,
        })
    }

    pub fn run(&mut self, epochs: usize) -> Result<Vec<EpochMetrics>> {
        (0..epochs).map(|_| self.step()).collect()
    }

    pub fn evaluate(&self, decoding: Decoding) -> Result<EvalReport> {
        evaluate(&self.params, &self.env.sim, &self.env.eval_tasks, self.cfg.policy.l_max, decoding)
    }
}

/// Config hash with the epoch count removed, so a run can be extended from
/// its checkpoint.
pub fn run_hash(cfg: &ExperimentConfig) -> [u8; 32] {
    let mut c = cfg.clone();
    c.train.epochs = 0;
    c.hash()
}

pub struct TrainOutcome {
    pub params: PolicyParams,
    pub metrics: Vec<EpochMetrics>,
    pub checkpoint: Checkpoint,
}

pub fn train(cfg: &ExperimentConfig) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(cfg)?;
    let metrics = trainer.run(cfg.train.epochs)?;
    Ok(TrainOutcome {
        params: trainer.params().clone(),
        checkpoint: trainer.checkpoint(),
        metrics,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CollapseRun {
    pub component: &'static str,
    pub centering: CenteringKind,
    pub length: Vec<f64>,
    pub diversity: Vec<f64>,
    /// Pooled `E[r_t]` per position.
    pub step_means: Vec<f64>,
    pub pooled_mean: f64,
}

/// Single-reward runs with the standard estimator, raw and normalized.
pub fn collapse_demo(cfg: &ExperimentConfig) -> Result<Vec<CollapseRun>> {
    let mut base = cfg.clone();
    base.train.estimator = EstimatorKind::Std;
    let env = Environment::build(&base)?;
    let (prior, _) = pretrain(&base, &env)?;
    let mut runs = Vec::new();
    for c in Component::ALL {
        for centering in [CenteringKind::Raw, CenteringKind::Normalize] {
            let mut run_cfg = base.clone();
            run_cfg.rewards = RewardWeights::only(c);
            run_cfg.train.centering = centering;
            let mut trainer = Trainer::from_prior(&run_cfg, env.clone(), prior.clone())?;
            let metrics = trainer.run(run_cfg.train.epochs)?;
            runs.push(CollapseRun {
                component: c.name(),
                centering,
                length: metrics.iter().map(|m| m.mean_length).collect(),
                diversity: metrics.iter().map(|m| m.diversity).collect(),
                step_means: trainer.profile().means(),
                pooled_mean: trainer.profile().pooled_mean(),
            });
        }
    }
    Ok(runs)
}

pub fn write_collapse_csv<W: Write>(runs: &[CollapseRun], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["component", "centering", "update", "mean_length", "diversity"])?;
    for r in runs {
        let centering = format!("{:?}", r.centering).to_lowercase();
        for (k, (l, d)) in r.length.iter().zip(&r.diversity).enumerate() {
            w.write_record([r.component, &centering, &k.to_string(), &l.to_string(), &d.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_profile_csv<W: Write>(runs: &[CollapseRun], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["component", "centering", "position", "mean_step_reward"])?;
    for r in runs {
        let centering = format!("{:?}", r.centering).to_lowercase();
        for (t, m) in r.step_means.iter().enumerate() {
            w.write_record([r.component, &centering, &(t + 1).to_string(), &m.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}
