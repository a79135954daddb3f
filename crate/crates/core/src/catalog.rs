//! Synthetic item catalog and the deterministic user simulator.
//!
//! The simulator scores every item against a recency-weighted context built
//! from the interaction history and turns the scores into acceptance
//! probabilities with a tempered softmax. Ranks follow the probabilities with
//! ties broken by ascending item id.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::Arc;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

pub type ItemId = u32;
pub type AttributeId = u32;

const CATALOG_HEADER: &str = "catalog v1";

#[derive(Debug, Clone, PartialEq)]
pub struct Item {
    pub id: ItemId,
    /// Sorted, deduplicated attribute ids.
    pub attributes: Vec<AttributeId>,
}

impl Item {
    pub fn new(id: ItemId, mut attributes: Vec<AttributeId>) -> Self {
        attributes.sort_unstable();
        attributes.dedup();
        Item { id, attributes }
    }

    pub fn shared_attributes(&self, other: &Item) -> usize {
        let (mut a, mut b) = (self.attributes.iter().peekable(), other.attributes.iter().peekable());
        let mut shared = 0;
        while let (Some(x), Some(y)) = (a.peek(), b.peek()) {
            match x.cmp(y) {
                std::cmp::Ordering::Less => {
                    a.next();
                }
                std::cmp::Ordering::Greater => {
                    b.next();
                }
                std::cmp::Ordering::Equal => {
                    shared += 1;
                    a.next();
                    b.next();
                }
            }
        }
        shared
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Catalog {
    items: Vec<Item>,
    n_attributes: usize,
    embedding_dim: usize,
    embeddings: Vec<Vec<f64>>,
    index: HashMap<ItemId, usize>,
}

impl Catalog {
    /// Builds a catalog from explicit items and embeddings. Embeddings must
    /// already be unit-normalized.
    pub fn new(items: Vec<Item>, embeddings: Vec<Vec<f64>>) -> Result<Self> {
        if items.len() < 2 {
            return Err(Error::Parameter(format!(
                "catalog needs at least 2 items, got {}",
                items.len()
            )));
        }
        if embeddings.len() != items.len() {
            return Err(Error::Parameter(format!(
                "{} items but {} embeddings",
                items.len(),
                embeddings.len()
            )));
        }
        let embedding_dim = embeddings[0].len();
        if embedding_dim == 0 {
            return Err(Error::Parameter("embedding_dim must be positive".into()));
        }
        let mut index = HashMap::with_capacity(items.len());
        let mut n_attributes = 0;
        for (pos, (item, emb)) in items.iter().zip(&embeddings).enumerate() {
            if index.insert(item.id, pos).is_some() {
                return Err(Error::Parameter(format!("duplicate item id {}", item.id)));
            }
            if item.attributes.is_empty() {
                return Err(Error::Parameter(format!("item {} has no attributes", item.id)));
            }
            if emb.len() != embedding_dim {
                return Err(Error::Parameter(format!(
                    "item {} embedding has dim {}, expected {embedding_dim}",
                    item.id,
                    emb.len()
                )));
            }
            let norm = dot(emb, emb).sqrt();
            if !norm.is_finite() || (norm - 1.0).abs() > 1e-9 {
                return Err(Error::Parameter(format!(
                    "item {} embedding is not unit norm ({norm})",
                    item.id
                )));
            }
            let max_attr = item.attributes.iter().copied().max().unwrap_or(0) as usize;
            n_attributes = n_attributes.max(max_attr + 1);
        }
        Ok(Catalog {
            items,
            n_attributes,
            embedding_dim,
            embeddings,
            index,
        })
    }

    pub fn generate(
        seed: u64,
        n_items: usize,
        n_attributes: usize,
        attrs_per_item: usize,
        embedding_dim: usize,
    ) -> Result<Self> {
        Self::generate_coupled(seed, n_items, n_attributes, attrs_per_item, embedding_dim, 0.0)
    }

    /// Like [`Catalog::generate`], but each raw Gaussian embedding mixes in
    /// Gaussian prototypes of the item's attributes with weight `coupling`,
    /// so items sharing attributes point in similar directions. Every
    /// embedding stays marginally isotropic; `coupling = 0` reproduces
    /// `generate` exactly.
    pub fn generate_coupled(
        seed: u64,
        n_items: usize,
        n_attributes: usize,
        attrs_per_item: usize,
        embedding_dim: usize,
        coupling: f64,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&coupling) {
            return Err(Error::Parameter(format!("coupling must lie in [0,1], got {coupling}")));
        }
        if n_items < 2 {
            return Err(Error::Parameter(format!("n_items must be >= 2, got {n_items}")));
        }
        if attrs_per_item == 0 || attrs_per_item > n_attributes {
            return Err(Error::Parameter(format!(
                "attrs_per_item must be in 1..={n_attributes}, got {attrs_per_item}"
            )));
        }
        if embedding_dim == 0 {
            return Err(Error::Parameter("embedding_dim must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut items = Vec::with_capacity(n_items);
        let mut embeddings = Vec::with_capacity(n_items);
        for id in 0..n_items {
            let attrs = index::sample(&mut rng, n_attributes, attrs_per_item)
                .into_iter()
                .map(|a| a as AttributeId)
                .collect();
            items.push(Item::new(id as ItemId, attrs));
            embeddings.push(random_unit_vector(&mut rng, embedding_dim));
        }
        if coupling > 0.0 {
            let mut proto_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
            let gauss = |rng: &mut ChaCha8Rng| -> Vec<f64> {
                (0..embedding_dim).map(|_| StandardNormal.sample(rng)).collect()
            };
            let protos: Vec<Vec<f64>> = (0..n_attributes).map(|_| gauss(&mut proto_rng)).collect();
            let own = (1.0 - coupling * coupling).sqrt();
            let shared = coupling / (attrs_per_item as f64).sqrt();
            for (item, emb) in items.iter().zip(embeddings.iter_mut()) {
                let noise = gauss(&mut proto_rng);
                let mut v: Vec<f64> = noise.iter().map(|x| own * x).collect();
                for &a in &item.attributes {
                    for (x, p) in v.iter_mut().zip(&protos[a as usize]) {
                        *x += shared * p;
                    }
                }
                let norm = dot(&v, &v).sqrt();
                *emb = if norm > 1e-12 { v.into_iter().map(|x| x / norm).collect() } else { emb.clone() };
            }
        }
        let mut catalog = Catalog::new(items, embeddings)?;
        catalog.n_attributes = n_attributes;
        Ok(catalog)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[Item] {
        &self.items
    }

    pub fn n_attributes(&self) -> usize {
        self.n_attributes
    }

    pub fn embedding_dim(&self) -> usize {
        self.embedding_dim
    }

    /// Position of `id` in the catalog order.
    pub fn position(&self, id: ItemId) -> Result<usize> {
        self.index.get(&id).copied().ok_or(Error::UnknownItem(id))
    }

    pub fn item(&self, id: ItemId) -> Result<&Item> {
        Ok(&self.items[self.position(id)?])
    }

    pub fn item_at(&self, pos: usize) -> &Item {
        &self.items[pos]
    }

    pub fn embedding(&self, id: ItemId) -> Result<&[f64]> {
        Ok(&self.embeddings[self.position(id)?])
    }

    pub fn embedding_at(&self, pos: usize) -> &[f64] {
        &self.embeddings[pos]
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{CATALOG_HEADER}");
        let _ = writeln!(
            out,
            "items {} attributes {} dim {}",
            self.items.len(),
            self.n_attributes,
            self.embedding_dim
        );
        for (item, emb) in self.items.iter().zip(&self.embeddings) {
            let attrs: Vec<String> = item.attributes.iter().map(|a| a.to_string()).collect();
            let vals: Vec<String> = emb.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(out, "{}\t{}\t{}", item.id, attrs.join(","), vals.join(" "));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(CATALOG_HEADER) {
            return Err(Error::Format("missing catalog header".into()));
        }
        let dims = lines
            .next()
            .ok_or_else(|| Error::Format("missing catalog dimensions".into()))?;
        let fields: Vec<&str> = dims.split_whitespace().collect();
        if fields.len() != 6 || fields[0] != "items" || fields[2] != "attributes" || fields[4] != "dim" {
            return Err(Error::Format(format!("bad dimension line: {dims}")));
        }
        let parse_usize = |s: &str| {
            s.parse::<usize>()
                .map_err(|e| Error::Format(format!("bad integer {s:?}: {e}")))
        };
        let n_items = parse_usize(fields[1])?;
        let n_attributes = parse_usize(fields[3])?;

        let mut items = Vec::with_capacity(n_items);
        let mut embeddings = Vec::with_capacity(n_items);
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let mut cols = line.split('\t');
            let (Some(id), Some(attrs), Some(vals), None) = (cols.next(), cols.next(), cols.next(), cols.next())
            else {
                return Err(Error::Format(format!("bad item record: {line}")));
            };
            let id = id
                .parse::<ItemId>()
                .map_err(|e| Error::Format(format!("bad item id {id:?}: {e}")))?;
            let attrs = attrs
                .split(',')
                .map(|a| {
                    a.parse::<AttributeId>()
                        .map_err(|e| Error::Format(format!("bad attribute {a:?}: {e}")))
                })
                .collect::<Result<Vec<_>>>()?;
            let emb = vals
                .split(' ')
                .map(|v| {
                    v.parse::<f64>()
                        .map_err(|e| Error::Format(format!("bad embedding value {v:?}: {e}")))
                })
                .collect::<Result<Vec<_>>>()?;
            items.push(Item::new(id, attrs));
            embeddings.push(emb);
        }
        if items.len() != n_items {
            return Err(Error::Format(format!(
                "header declares {n_items} items, found {}",
                items.len()
            )));
        }
        let mut catalog = Catalog::new(items, embeddings)?;
        catalog.n_attributes = catalog.n_attributes.max(n_attributes);
        Ok(catalog)
    }
}

fn random_unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Running, unnormalized recency-weighted sum of item embeddings.
///
/// Appending item `x` maps `raw` to `decay * raw + emb(x)`, which reproduces
/// `sum_k decay^(|S|-k) emb(S[k])` without revisiting the history.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextState {
    raw: Vec<f64>,
    decay: f64,
}

impl ContextState {
    pub fn empty(dim: usize, decay: f64) -> Self {
        ContextState {
            raw: vec![0.0; dim],
            decay,
        }
    }

    pub fn push(&mut self, embedding: &[f64]) {
        for (r, e) in self.raw.iter_mut().zip(embedding) {
            *r = self.decay * *r + e;
        }
    }

    /// Unit-normalized context; zero when the raw sum vanishes.
    pub fn vector(&self) -> Vec<f64> {
        let norm = dot(&self.raw, &self.raw).sqrt();
        if norm == 0.0 {
            vec![0.0; self.raw.len()]
        } else {
            self.raw.iter().map(|x| x / norm).collect()
        }
    }
}

/// Acceptance distribution over the whole catalog for one history.
#[derive(Debug, Clone)]
pub struct Acceptance {
    log_probs: Vec<f64>,
    probs: Vec<f64>,
}

impl Acceptance {
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob_at(&self, pos: usize) -> f64 {
        self.probs[pos]
    }

    pub fn log_prob_at(&self, pos: usize) -> f64 {
        self.log_probs[pos]
    }

    /// 1 + number of items that beat `pos`, where lower ids win ties.
    pub fn rank_at(&self, catalog: &Catalog, pos: usize) -> usize {
        let p = self.probs[pos];
        let id = catalog.item_at(pos).id;
        1 + self
            .probs
            .iter()
            .enumerate()
            .filter(|&(j, &q)| q > p || (q == p && catalog.item_at(j).id < id))
            .count()
    }
}

#[derive(Debug, Clone)]
pub struct Simulator {
    catalog: Arc<Catalog>,
    decay: f64,
    temperature: f64,
}

impl Simulator {
    pub fn new(catalog: Arc<Catalog>, decay: f64, temperature: f64) -> Result<Self> {
        if !(decay > 0.0 && decay < 1.0) {
            return Err(Error::Parameter(format!("decay must lie in (0,1), got {decay}")));
        }
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::Parameter(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        Ok(Simulator {
            catalog,
            decay,
            temperature,
        })
    }

    pub fn catalog(&self) -> &Arc<Catalog> {
        &self.catalog
    }

    pub fn decay(&self) -> f64 {
        self.decay
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn empty_context(&self) -> ContextState {
        ContextState::empty(self.catalog.embedding_dim(), self.decay)
    }

    pub fn context_state(&self, history: &[ItemId]) -> Result<ContextState> {
        let mut state = self.empty_context();
        for &id in history {
            state.push(self.catalog.embedding(id)?);
        }
        Ok(state)
    }

    pub fn context_vector(&self, history: &[ItemId]) -> Result<Vec<f64>> {
        Ok(self.context_state(history)?.vector())
    }

    pub fn acceptance_for(&self, context: &[f64]) -> Acceptance {
        let scores: Vec<f64> = (0..self.catalog.len())
            .map(|j| dot(self.catalog.embedding_at(j), context) / self.temperature)
            .collect();
        let log_probs = log_softmax(&scores);
        let probs = log_probs.iter().map(|l| l.exp()).collect();
        Acceptance { log_probs, probs }
    }

    pub fn acceptance(&self, history: &[ItemId]) -> Result<Acceptance> {
        Ok(self.acceptance_for(&self.context_vector(history)?))
    }

    pub fn prob(&self, item: ItemId, history: &[ItemId]) -> Result<f64> {
        let pos = self.catalog.position(item)?;
        Ok(self.acceptance(history)?.prob_at(pos))
    }

    pub fn log_prob(&self, item: ItemId, history: &[ItemId]) -> Result<f64> {
        let pos = self.catalog.position(item)?;
        Ok(self.acceptance(history)?.log_prob_at(pos))
    }

    pub fn rank(&self, item: ItemId, history: &[ItemId]) -> Result<usize> {
        let pos = self.catalog.position(item)?;
        Ok(self.acceptance(history)?.rank_at(&self.catalog, pos))
    }
}

pub(crate) fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}
