//! Path metrics, the weighted path reward, its telescoping step
//! decomposition, and the step-reward transforms applied before gradient
//! estimation (centering, normalization, fixed offset).

use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, ItemId, Simulator};
use crate::error::{Error, Result};

pub const N_COMPONENTS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    Ioi,
    Ior,
    Ctr,
}

impl Component {
    pub const ALL: [Component; N_COMPONENTS] = [Component::Ioi, Component::Ior, Component::Ctr];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Component::Ioi => "ioi",
            Component::Ior => "ior",
            Component::Ctr => "ctr",
        }
    }
}

/// Weights on IoI, IoR and CTR. The same weights scale the normalized
/// components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights {
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
        }
    }
}

impl RewardWeights {
    pub fn only(component: Component) -> Self {
        let mut w = [0.0; N_COMPONENTS];
        w[component.index()] = 1.0;
        Self::from_array(w)
    }

    pub fn from_array(w: [f64; N_COMPONENTS]) -> Self {
        RewardWeights {
            alpha: w[0],
            beta: w[1],
            gamma: w[2],
        }
    }

    pub fn as_array(&self) -> [f64; N_COMPONENTS] {
        [self.alpha, self.beta, self.gamma]
    }

    pub fn combine(&self, values: [f64; N_COMPONENTS]) -> f64 {
        self.as_array().iter().zip(values).map(|(w, v)| w * v).sum()
    }
}

/// Metric values after every prefix of a path, for `t = 1..=|L|`.
#[derive(Debug, Clone, Default)]
pub struct PrefixMetrics {
    pub ioi: Vec<f64>,
    pub ior: Vec<i64>,
    pub ctr: Vec<f64>,
    /// `P(i_k | S ⊕ L^{<k})` for each path item.
    pub acceptance: Vec<f64>,
}

impl PrefixMetrics {
    pub fn len(&self) -> usize {
        self.ioi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ioi.is_empty()
    }

    /// Component values of the prefix of length `t`; prefix 0 is all zeros.
    pub fn values_at(&self, t: usize) -> [f64; N_COMPONENTS] {
        if t == 0 {
            [0.0; N_COMPONENTS]
        } else {
            [self.ioi[t - 1], self.ior[t - 1] as f64, self.ctr[t - 1]]
        }
    }
}

/// Evaluates every prefix of `path` with one simulator pass.
pub fn prefix_metrics(
    sim: &Simulator,
    history: &[ItemId],
    path: &[ItemId],
    target: ItemId,
) -> Result<PrefixMetrics> {
    let catalog = sim.catalog();
    let target_pos = catalog.position(target)?;
    let mut state = sim.context_state(history)?;
    let mut current = sim.acceptance_for(&state.vector());
    let base_log = current.log_prob_at(target_pos);
    let base_rank = current.rank_at(catalog, target_pos) as i64;

    let mut out = PrefixMetrics {
        ioi: Vec::with_capacity(path.len()),
        ior: Vec::with_capacity(path.len()),
        ctr: Vec::with_capacity(path.len()),
        acceptance: Vec::with_capacity(path.len()),
    };
    let mut accepted_sum = 0.0;
    for (k, &item) in path.iter().enumerate() {
        let pos = catalog.position(item)?;
        let accept = current.prob_at(pos);
        accepted_sum += accept;
        state.push(catalog.embedding_at(pos));
        current = sim.acceptance_for(&state.vector());
        out.acceptance.push(accept);
        out.ctr.push(accepted_sum / (k + 1) as f64);
        out.ioi.push(current.log_prob_at(target_pos) - base_log);
        out.ior.push(base_rank - current.rank_at(catalog, target_pos) as i64);
    }
    Ok(out)
}

/// `log P(target | S ⊕ L) − log P(target | S)`.
pub fn ioi(sim: &Simulator, history: &[ItemId], path: &[ItemId], target: ItemId) -> Result<f64> {
    let m = prefix_metrics(sim, history, path, target)?;
    Ok(m.ioi.last().copied().unwrap_or(0.0))
}

/// `Rank(target | S) − Rank(target | S ⊕ L)`.
pub fn ior(sim: &Simulator, history: &[ItemId], path: &[ItemId], target: ItemId) -> Result<i64> {
    let m = prefix_metrics(sim, history, path, target)?;
    Ok(m.ior.last().copied().unwrap_or(0))
}

/// A metric that is undefined on short paths reports a sentinel value and
/// sets `degenerate`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlaggedMetric {
    pub value: f64,
    pub degenerate: bool,
}

/// Mean acceptance of each path item given its prefix; 0 with the
/// degenerate flag on an empty path.
pub fn ctr(sim: &Simulator, history: &[ItemId], path: &[ItemId]) -> Result<FlaggedMetric> {
    if path.is_empty() {
        return Ok(FlaggedMetric {
            value: 0.0,
            degenerate: true,
        });
    }
    let catalog = sim.catalog();
    let mut state = sim.context_state(history)?;
    let mut total = 0.0;
    for &item in path {
        let pos = catalog.position(item)?;
        total += sim.acceptance_for(&state.vector()).prob_at(pos);
        state.push(catalog.embedding_at(pos));
    }
    Ok(FlaggedMetric {
        value: total / path.len() as f64,
        degenerate: false,
    })
}

/// Fraction of adjacent pairs sharing at least one attribute. Paths shorter
/// than two items are vacuously coherent (1.0, flagged).
pub fn coherence(catalog: &Catalog, path: &[ItemId]) -> Result<FlaggedMetric> {
    if path.len() < 2 {
        for &id in path {
            catalog.position(id)?;
        }
        return Ok(FlaggedMetric {
            value: 1.0,
            degenerate: true,
        });
    }
    let mut linked = 0usize;
    for pair in path.windows(2) {
        if catalog.item(pair[0])?.shared_attributes(catalog.item(pair[1])?) > 0 {
            linked += 1;
        }
    }
    Ok(FlaggedMetric {
        value: linked as f64 / (path.len() - 1) as f64,
        degenerate: false,
    })
}

/// `α·IoI + β·IoR + γ·CTR`; the empty path scores 0.
pub fn path_reward(
    sim: &Simulator,
    history: &[ItemId],
    path: &[ItemId],
    target: ItemId,
    weights: &RewardWeights,
) -> Result<f64> {
    let m = prefix_metrics(sim, history, path, target)?;
    Ok(weights.combine(m.values_at(m.len())))
}

/// Per-step, per-component increments `r_t = R(prefix t) − R(prefix t−1)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StepRewardVector {
    components: [Vec<f64>; N_COMPONENTS],
}

impl StepRewardVector {
    pub fn from_components(components: [Vec<f64>; N_COMPONENTS]) -> Result<Self> {
        let len = components[0].len();
        if components.iter().any(|c| c.len() != len) {
            return Err(Error::Parameter("component step vectors differ in length".into()));
        }
        Ok(StepRewardVector { components })
    }

    pub fn from_prefix_metrics(m: &PrefixMetrics) -> Self {
        let mut components: [Vec<f64>; N_COMPONENTS] = Default::default();
        for t in 1..=m.len() {
            let (now, before) = (m.values_at(t), m.values_at(t - 1));
            for c in 0..N_COMPONENTS {
                components[c].push(now[c] - before[c]);
            }
        }
        StepRewardVector { components }
    }

    pub fn len(&self) -> usize {
        self.components[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn component(&self, c: Component) -> &[f64] {
        &self.components[c.index()]
    }

    pub fn step(&self, t: usize) -> [f64; N_COMPONENTS] {
        [self.components[0][t], self.components[1][t], self.components[2][t]]
    }

    pub fn component_total(&self, c: Component) -> f64 {
        self.component(c).iter().sum()
    }
}

pub fn decompose(
    sim: &Simulator,
    history: &[ItemId],
    path: &[ItemId],
    target: ItemId,
) -> Result<StepRewardVector> {
    Ok(StepRewardVector::from_prefix_metrics(&prefix_metrics(sim, history, path, target)?))
}

/// Streaming per-component moments over step rewards pooled across all
/// positions. Variances use the population convention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardStats {
    pub count: u64,
    pub mean: [f64; N_COMPONENTS],
    /// Sum of squared deviations (Welford's M2).
    pub m2: [f64; N_COMPONENTS],
    pub frozen: bool,
}

impl Default for RewardStats {
    fn default() -> Self {
        Self::new()
    }
}

impl RewardStats {
    pub fn new() -> Self {
        RewardStats {
            count: 0,
            mean: [0.0; N_COMPONENTS],
            m2: [0.0; N_COMPONENTS],
            frozen: false,
        }
    }

    pub fn push(&mut self, values: [f64; N_COMPONENTS]) -> Result<()> {
        if self.frozen {
            return Err(Error::State("reward statistics are frozen".into()));
        }
        self.count += 1;
        let n = self.count as f64;
        for (c, v) in values.into_iter().enumerate() {
            let delta = v - self.mean[c];
            self.mean[c] += delta / n;
            self.m2[c] += delta * (v - self.mean[c]);
        }
        Ok(())
    }

    pub fn accumulate<'a, I>(&mut self, batch: I) -> Result<()>
    where
        I: IntoIterator<Item = &'a StepRewardVector>,
    {
        if self.frozen {
            return Err(Error::State("reward statistics are frozen".into()));
        }
        for steps in batch {
            for t in 0..steps.len() {
                self.push(steps.step(t))?;
            }
        }
        Ok(())
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn component_mean(&self, c: Component) -> f64 {
        self.mean[c.index()]
    }

    pub fn component_std(&self, c: Component) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.m2[c.index()] / self.count as f64).max(0.0).sqrt()
        }
    }

    pub fn std(&self) -> [f64; N_COMPONENTS] {
        Component::ALL.map(|c| self.component_std(c))
    }

    /// Mean of the weighted raw step reward.
    pub fn combined_mean(&self, weights: &RewardWeights) -> f64 {
        weights.combine(self.mean)
    }
}

/// Step-reward transform handed to the estimators.
#[derive(Debug, Clone, PartialEq)]
pub enum CenteringMode {
    Raw,
    Center { mean: f64 },
    Normalize(RewardStats),
    FixedOffset { stats: RewardStats, epsilon: f64 },
}

/// Config-level choice; the statistics are only known after warm-up.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CenteringKind {
    Raw,
    Center,
    #[default]
    Normalize,
    FixedOffset,
}

impl CenteringKind {
    pub fn needs_stats(self) -> bool {
        !matches!(self, CenteringKind::Raw)
    }

    pub fn resolve(self, stats: Option<&RewardStats>, weights: &RewardWeights, epsilon: f64) -> Result<CenteringMode> {
        let require = || {
            stats
                .cloned()
                .ok_or_else(|| Error::State("centering requires warm-up statistics".into()))
        };
        Ok(match self {
            CenteringKind::Raw => CenteringMode::Raw,
            CenteringKind::Center => CenteringMode::Center {
                mean: require()?.combined_mean(weights),
            },
            CenteringKind::Normalize => CenteringMode::Normalize(require()?),
            CenteringKind::FixedOffset => CenteringMode::FixedOffset {
                stats: require()?,
                epsilon,
            },
        })
    }
}

impl std::str::FromStr for CenteringKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(CenteringKind::Raw),
            "center" => Ok(CenteringKind::Center),
            "normalize" => Ok(CenteringKind::Normalize),
            "fixed_offset" => Ok(CenteringKind::FixedOffset),
            other => Err(Error::Config(format!("unknown centering mode {other:?}"))),
        }
    }
}

fn checked_std(stats: &RewardStats, weights: &RewardWeights) -> Result<[f64; N_COMPONENTS]> {
    if !stats.frozen {
        return Err(Error::State("reward statistics must be frozen before use".into()));
    }
    let w = weights.as_array();
    let std = stats.std();
    for c in Component::ALL {
        if w[c.index()] != 0.0 && std[c.index()] <= 0.0 {
            return Err(Error::DegenerateStats { component: c.name() });
        }
    }
    Ok(std)
}

/// Collapses per-component step rewards into the scalar sequence `r̃_t`.
pub fn apply_centering(
    steps: &StepRewardVector,
    mode: &CenteringMode,
    weights: &RewardWeights,
) -> Result<Vec<f64>> {
    let w = weights.as_array();
    let raw = |t: usize| weights.combine(steps.step(t));
    let out = match mode {
        CenteringMode::Raw => (0..steps.len()).map(raw).collect(),
        CenteringMode::Center { mean } => (0..steps.len()).map(|t| raw(t) - mean).collect(),
        CenteringMode::Normalize(stats) => {
            let std = checked_std(stats, weights)?;
            (0..steps.len())
                .map(|t| {
                    let r = steps.step(t);
                    (0..N_COMPONENTS)
                        .filter(|&c| w[c] != 0.0)
                        .map(|c| w[c] * (r[c] - stats.mean[c]) / std[c])
                        .sum()
                })
                .collect()
        }
        CenteringMode::FixedOffset { stats, epsilon } => {
            let std = checked_std(stats, weights)?;
            (0..steps.len())
                .map(|t| {
                    let r = steps.step(t);
                    let scaled: f64 = (0..N_COMPONENTS)
                        .filter(|&c| w[c] != 0.0)
                        .map(|c| w[c] * r[c] / std[c])
                        .sum();
                    scaled - epsilon
                })
                .collect()
        }
    };
    Ok(out)
}
