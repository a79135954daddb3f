//! Goal-oriented trajectory mining from interaction sequences.
//!
//! A sequence is cut wherever two consecutive items fail the feasibility
//! oracle; each maximal feasible segment longer than one item becomes a
//! demonstration whose goal is its last item.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::catalog::{Catalog, ItemId};
use crate::error::{Error, Result};
use crate::policy::SupervisedExample;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawSequence {
    pub user: u64,
    pub items: Vec<ItemId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Demonstration {
    pub path: Vec<ItemId>,
    pub goal: ItemId,
}

impl Demonstration {
    /// History is the first path item; the policy must generate the
    /// intermediate items and then stop, with the goal as target.
    pub fn to_example(&self) -> SupervisedExample {
        SupervisedExample {
            history: vec![self.path[0]],
            target: self.goal,
            path: self.path[1..self.path.len() - 1].to_vec(),
        }
    }
}

/// Attribute-overlap feasibility: two items are compatible when they share
/// at least `min_shared` attributes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeasibilityOracle {
    pub min_shared: usize,
}

impl Default for FeasibilityOracle {
    fn default() -> Self {
        FeasibilityOracle { min_shared: 1 }
    }
}

impl FeasibilityOracle {
    pub fn new(min_shared: usize) -> Result<Self> {
        if min_shared == 0 {
            return Err(Error::Parameter("minimum shared attributes must be at least 1".into()));
        }
        Ok(FeasibilityOracle { min_shared })
    }

    pub fn feasible(&self, catalog: &Catalog, i: ItemId, j: ItemId) -> Result<bool> {
        let a = catalog.item(i)?;
        let b = catalog.item(j)?;
        Ok(a.shared_attributes(b) >= self.min_shared)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MiningOptions {
    /// Also emit the segment still open when the sequence ends.
    pub archive_trailing: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MiningOutcome {
    pub demonstrations: Vec<Demonstration>,
    pub oracle_calls: usize,
}

/// Segments `seq` after its first `n - 1` items (`n` is the history length).
pub fn mine(
    seq: &RawSequence,
    n: usize,
    oracle: &FeasibilityOracle,
    catalog: &Catalog,
    opts: MiningOptions,
) -> Result<MiningOutcome> {
    let items = &seq.items;
    if n == 0 || n >= items.len() {
        return Err(Error::Parameter(format!(
            "history length {n} must satisfy 1 <= n < {}",
            items.len()
        )));
    }
    let mut out = MiningOutcome::default();
    let mut tau = vec![items[n - 1]];
    for k in n..items.len() {
        let (prev, curr) = (items[k - 1], items[k]);
        out.oracle_calls += 1;
        if !oracle.feasible(catalog, prev, curr)? {
            if tau.len() > 1 {
                let goal = *tau.last().unwrap();
                out.demonstrations.push(Demonstration {
                    path: std::mem::take(&mut tau),
                    goal,
                });
            }
            tau.clear();
        }
        tau.push(curr);
    }
    if opts.archive_trailing && tau.len() > 1 {
        let goal = *tau.last().unwrap();
        out.demonstrations.push(Demonstration { path: tau, goal });
    }
    Ok(out)
}

/// Seeded 8:1:1 user-level split into (train, validation, test).
pub fn split_users(
    sequences: &[RawSequence],
    seed: u64,
) -> Result<(Vec<RawSequence>, Vec<RawSequence>, Vec<RawSequence>)> {
    if sequences.len() < 10 {
        return Err(Error::Parameter(format!(
            "need at least 10 users to split, got {}",
            sequences.len()
        )));
    }
    let mut order: Vec<usize> = (0..sequences.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = sequences.len() * 8 / 10;
    let n_val = sequences.len() / 10;
    let pick = |idx: &[usize]| idx.iter().map(|&k| sequences[k].clone()).collect::<Vec<_>>();
    Ok((
        pick(&order[..n_train]),
        pick(&order[n_train..n_train + n_val]),
        pick(&order[n_train + n_val..]),
    ))
}

/// Random walk that, with probability `bias`, moves to an item sharing an
/// attribute with the current one and otherwise jumps uniformly.
pub fn random_walk<R: Rng + ?Sized>(catalog: &Catalog, length: usize, bias: f64, rng: &mut R) -> Vec<ItemId> {
    let n = catalog.len();
    let mut walk = Vec::with_capacity(length);
    if length == 0 {
        return walk;
    }
    let mut cur = rng.random_range(0..n);
    walk.push(catalog.item_at(cur).id);
    while walk.len() < length {
        let next = if rng.random::<f64>() < bias {
            let here = catalog.item_at(cur);
            let neighbours: Vec<usize> = (0..n)
                .filter(|&k| k != cur && catalog.item_at(k).shared_attributes(here) > 0)
                .collect();
            if neighbours.is_empty() {
                rng.random_range(0..n)
            } else {
                neighbours[rng.random_range(0..neighbours.len())]
            }
        } else {
            rng.random_range(0..n)
        };
        cur = next;
        walk.push(catalog.item_at(cur).id);
    }
    walk
}

pub fn synthetic_sequences(catalog: &Catalog, users: usize, length: usize, bias: f64, seed: u64) -> Vec<RawSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..users)
        .map(|u| RawSequence {
            user: u as u64,
            items: random_walk(catalog, length, bias, &mut rng),
        })
        .collect()
}

/// One line per demonstration: goal id followed by the path ids.
pub fn write_demonstrations(demos: &[Demonstration]) -> String {
    let mut out = String::new();
    for d in demos {
        write!(out, "{}", d.goal).unwrap();
        for id in &d.path {
            write!(out, " {id}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn read_demonstrations(text: &str) -> Result<Vec<Demonstration>> {
    let mut demos = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let ids = line
            .split_whitespace()
            .map(|t| t.parse::<ItemId>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Format(format!("line {}: {e}", lineno + 1)))?;
        if ids.len() < 3 || ids[0] != *ids.last().unwrap() {
            return Err(Error::Format(format!(
                "line {}: expected goal then a path of at least two items ending at the goal",
                lineno + 1
            )));
        }
        demos.push(Demonstration {
            goal: ids[0],
            path: ids[1..].to_vec(),
        });
    }
    Ok(demos)
}
