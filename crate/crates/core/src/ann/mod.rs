//! Approximate nearest-neighbour search over unit-normalized vectors with
//! a forest of random-projection trees, plus an exact oracle.
//!
//! Each tree splits a node by projecting its points onto the normalized
//! difference of two sampled node points and cutting at the median
//! projection. Queries walk all trees best-bin-first from one shared heap
//! keyed on the accumulated squared margin of every branch not taken,
//! collect distinct candidates up to a budget, and rank them by exact
//! cosine.

mod persist;
mod search;

use std::collections::{BinaryHeap, HashSet};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use persist::{load_index, save_index, INDEX_MAGIC, INDEX_VERSION};
pub use search::{searchers, ExactSearch, ForestSearch, SearchFactory, SearchParams, SearchStrategy};

use crate::format::PersistError;
use crate::registry::UnknownStrategy;

#[derive(Debug, thiserror::Error)]
pub enum AnnError {
    #[error("index is empty")]
    EmptyIndex,
    #[error("dimension mismatch: index has {expected}, got {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("duplicate id {0}")]
    DuplicateId(u64),
    #[error("vector for id {0} has zero norm")]
    ZeroVector(u64),
    #[error("vector for id {0} has non-finite values")]
    NonFinite(u64),
    #[error("invalid parameter: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    UnknownStrategy(#[from] UnknownStrategy),
    #[error(transparent)]
    Persist(#[from] PersistError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Cosine,
}

impl Metric {
    pub fn tag(self) -> u8 {
        match self {
            Metric::Cosine => 0,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Metric::Cosine),
            _ => None,
        }
    }
}

/// Forest construction parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexParams {
    pub num_trees: usize,
    pub leaf_capacity: usize,
    pub seed: u64,
}

impl Default for IndexParams {
    fn default() -> Self {
        Self {
            num_trees: 16,
            leaf_capacity: 8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Split {
        normal: Vec<f32>,
        offset: f32,
        left: usize,
        right: usize,
    },
    /// Item slots (positions in the index's vector block).
    Leaf(Vec<u32>),
}

/// One tree; node 0 is the root and nodes are stored in preorder.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RpTree {
    pub nodes: Vec<Node>,
}

impl RpTree {
    pub fn depth(&self) -> usize {
        fn go(t: &RpTree, i: usize) -> usize {
            match &t.nodes[i] {
                Node::Leaf(_) => 0,
                Node::Split { left, right, .. } => 1 + go(t, *left).max(go(t, *right)),
            }
        }
        if self.nodes.is_empty() {
            0
        } else {
            go(self, 0)
        }
    }

    /// Leaf contents in preorder.
    pub fn leaves(&self) -> impl Iterator<Item = &[u32]> {
        self.nodes.iter().filter_map(|n| match n {
            Node::Leaf(items) => Some(items.as_slice()),
            Node::Split { .. } => None,
        })
    }
}

/// Ranked `(id, cosine)` pairs: descending score, ties by ascending id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SearchResult {
    pub hits: Vec<Hit>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub id: u64,
    pub score: f64,
}

impl SearchResult {
    fn ranked(mut hits: Vec<Hit>, k: usize) -> Self {
        hits.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.id.cmp(&b.id)));
        hits.truncate(k);
        Self { hits }
    }

    pub fn ids(&self) -> Vec<u64> {
        self.hits.iter().map(|h| h.id).collect()
    }

    pub fn len(&self) -> usize {
        self.hits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hits.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnIndex {
    pub(crate) dim: usize,
    pub(crate) metric: Metric,
    pub(crate) ids: Vec<u64>,
    /// `count × dim`, each row unit length.
    pub(crate) data: Vec<f32>,
    pub(crate) trees: Vec<RpTree>,
    pub(crate) params: IndexParams,
}

fn normalize(id: u64, v: &[f64]) -> Result<Vec<f64>, AnnError> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(AnnError::NonFinite(id));
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(AnnError::ZeroVector(id));
    }
    Ok(v.iter().map(|x| x / norm).collect())
}

fn dot32(a: &[f32], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, y)| f64::from(x) * y).sum()
}

fn dot32x32(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum()
}

/// Builds an index over `(id, vector)` pairs. Vectors are normalized on
/// insertion; `num_trees = 0` gives an exact-only index.
pub fn build_index(vectors: &[(u64, Vec<f64>)], params: IndexParams) -> Result<AnnIndex, AnnError> {
    if params.leaf_capacity == 0 {
        return Err(AnnError::InvalidParams("leaf_capacity must be at least 1".into()));
    }
    if vectors.len() > u32::MAX as usize {
        return Err(AnnError::InvalidParams("too many vectors".into()));
    }
    let dim = vectors.first().map_or(0, |(_, v)| v.len());
    if vectors.first().is_some() && dim == 0 {
        return Err(AnnError::InvalidParams("vectors must have at least one dimension".into()));
    }
    let mut seen = HashSet::with_capacity(vectors.len());
    let mut data = Vec::with_capacity(vectors.len() * dim);
    let mut ids = Vec::with_capacity(vectors.len());
    for (id, v) in vectors {
        if v.len() != dim {
            return Err(AnnError::DimMismatch {
                expected: dim,
                found: v.len(),
            });
        }
        if !seen.insert(*id) {
            return Err(AnnError::DuplicateId(*id));
        }
        data.extend(normalize(*id, v)?.into_iter().map(|x| x as f32));
        ids.push(*id);
    }
    let mut index = AnnIndex {
        dim,
        metric: Metric::Cosine,
        ids,
        data,
        trees: Vec::new(),
        params,
    };
    index.trees = build_trees(&index, params);
    Ok(index)
}

fn tree_seed(seed: u64, tree: usize) -> u64 {
    seed ^ (tree as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn build_trees(index: &AnnIndex, params: IndexParams) -> Vec<RpTree> {
    if index.len() == 0 || params.num_trees == 0 {
        return Vec::new();
    }
    let threads = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(params.num_trees);
    let build = |t: usize| TreeBuilder::new(index, params.leaf_capacity, tree_seed(params.seed, t)).build();
    if threads <= 1 {
        return (0..params.num_trees).map(build).collect();
    }
    let mut trees: Vec<Option<RpTree>> = vec![None; params.num_trees];
    std::thread::scope(|scope| {
        for (w, chunk) in trees.chunks_mut(params.num_trees.div_ceil(threads)).enumerate() {
            let start = w * params.num_trees.div_ceil(threads);
            let build = &build;
            scope.spawn(move || {
                for (j, slot) in chunk.iter_mut().enumerate() {
                    *slot = Some(build(start + j));
                }
            });
        }
    });
    trees.into_iter().map(|t| t.expect("every tree built")).collect()
}

struct TreeBuilder<'a> {
    index: &'a AnnIndex,
    leaf_capacity: usize,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
}

impl<'a> TreeBuilder<'a> {
    fn new(index: &'a AnnIndex, leaf_capacity: usize, seed: u64) -> Self {
        Self {
            index,
            leaf_capacity,
            rng: ChaCha8Rng::seed_from_u64(seed),
            nodes: Vec::new(),
        }
    }

    fn build(mut self) -> RpTree {
        let items: Vec<u32> = (0..self.index.len() as u32).collect();
        self.split(items);
        RpTree { nodes: self.nodes }
    }

    /// Direction through two distinct sampled points; falls back to the
    /// first axis when every sampled pair coincides.
    fn direction(&mut self, items: &[u32]) -> Vec<f32> {
        let dim = self.index.dim;
        for _ in 0..8 {
            let pick = sample(&mut self.rng, items.len(), 2);
            let a = self.index.row(items[pick.index(0)] as usize);
            let b = self.index.row(items[pick.index(1)] as usize);
            let diff: Vec<f64> = a.iter().zip(b).map(|(&x, &y)| f64::from(x) - f64::from(y)).collect();
            let norm = diff.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                return diff.iter().map(|x| (x / norm) as f32).collect();
            }
        }
        let mut e = vec![0.0; dim];
        e[0] = 1.0;
        e
    }

    fn split(&mut self, items: Vec<u32>) -> usize {
        let me = self.nodes.len();
        if items.len() <= self.leaf_capacity {
            self.nodes.push(Node::Leaf(items));
            return me;
        }
        let normal = self.direction(&items);
        let mut proj: Vec<(f64, u32)> = items
            .iter()
            .map(|&i| (dot32x32(&normal, self.index.row(i as usize)), i))
            .collect();
        proj.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mid = proj.len() / 2;
        let offset = ((proj[mid - 1].0 + proj[mid].0) / 2.0) as f32;
        let (left_items, right_items): (Vec<u32>, Vec<u32>) = (
            proj[..mid].iter().map(|p| p.1).collect(),
            proj[mid..].iter().map(|p| p.1).collect(),
        );
        self.nodes.push(Node::Split {
            normal,
            offset,
            left: 0,
            right: 0,
        });
        let left = self.split(left_items);
        let right = self.split(right_items);
        if let Node::Split { left: l, right: r, .. } = &mut self.nodes[me] {
            *l = left;
            *r = right;
        }
        me
    }
}

/// Heap entry: smaller accumulated squared margin pops first.
#[derive(PartialEq)]
struct Pending {
    priority: f64,
    tree: usize,
    node: usize,
}

impl Eq for Pending {}

impl Ord for Pending {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        other
            .priority
            .total_cmp(&self.priority)
            .then(other.tree.cmp(&self.tree))
            .then(other.node.cmp(&self.node))
    }
}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl AnnIndex {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn params(&self) -> IndexParams {
        self.params
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn trees(&self) -> &[RpTree] {
        &self.trees
    }

    /// Stored unit vector at `slot`.
    pub fn row(&self, slot: usize) -> &[f32] {
        &self.data[slot * self.dim..(slot + 1) * self.dim]
    }

    /// Default candidate budget: `max(2k·num_trees, 200)`.
    pub fn default_budget(&self, k: usize) -> usize {
        (2 * k * self.params.num_trees).max(200)
    }

    fn check_query(&self, q: &[f64], k: usize) -> Result<Vec<f64>, AnnError> {
        if self.is_empty() {
            return Err(AnnError::EmptyIndex);
        }
        if q.len() != self.dim {
            return Err(AnnError::DimMismatch {
                expected: self.dim,
                found: q.len(),
            });
        }
        if k == 0 {
            return Err(AnnError::InvalidParams("k must be at least 1".into()));
        }
        normalize(u64::MAX, q).map_err(|e| match e {
            AnnError::ZeroVector(_) => AnnError::InvalidParams("query vector has zero norm".into()),
            _ => AnnError::InvalidParams("query vector has non-finite values".into()),
        })
    }

    fn score(&self, q: &[f64], slot: usize) -> f64 {
        dot32(self.row(slot), q).clamp(-1.0, 1.0)
    }

    /// Exact cosine top-`k` over every stored vector.
    pub fn exact_topk(&self, q: &[f64], k: usize) -> Result<SearchResult, AnnError> {
        let q = self.check_query(q, k)?;
        let hits = (0..self.len())
            .map(|s| Hit {
                id: self.ids[s],
                score: self.score(&q, s),
            })
            .collect();
        Ok(SearchResult::ranked(hits, k))
    }

    /// Approximate top-`k`: gathers up to `budget` distinct candidates
    /// (default [`AnnIndex::default_budget`]) and ranks them exactly.
    /// Without trees this is [`AnnIndex::exact_topk`].
    pub fn query_topk(&self, q: &[f64], k: usize, budget: Option<usize>) -> Result<SearchResult, AnnError> {
        let q = self.check_query(q, k)?;
        if self.trees.is_empty() {
            return self.exact_topk(&q, k);
        }
        let k = k.min(self.len());
        let budget = budget.unwrap_or_else(|| self.default_budget(k)).max(k);
        let mut heap: BinaryHeap<Pending> = (0..self.trees.len())
            .map(|tree| Pending {
                priority: 0.0,
                tree,
                node: 0,
            })
            .collect();
        let mut seen = vec![false; self.len()];
        let mut candidates: Vec<usize> = Vec::with_capacity(budget + self.params.leaf_capacity);
        while candidates.len() < budget {
            let Some(Pending { priority, tree, mut node }) = heap.pop() else {
                break;
            };
            let nodes = &self.trees[tree].nodes;
            loop {
                match &nodes[node] {
                    Node::Split {
                        normal,
                        offset,
                        left,
                        right,
                    } => {
                        let margin = dot32(normal, &q) - f64::from(*offset);
                        let (near, far) = if margin <= 0.0 { (*left, *right) } else { (*right, *left) };
                        heap.push(Pending {
                            priority: priority + margin * margin,
                            tree,
                            node: far,
                        });
                        node = near;
                    }
                    Node::Leaf(items) => {
                        for &s in items {
                            if !std::mem::replace(&mut seen[s as usize], true) {
                                candidates.push(s as usize);
                            }
                        }
                        break;
                    }
                }
            }
        }
        let hits = candidates
            .into_iter()
            .map(|s| Hit {
                id: self.ids[s],
                score: self.score(&q, s),
            })
            .collect();
        Ok(SearchResult::ranked(hits, k))
    }
}

/// Exact cosine ranking over raw vectors, independent of any index.
pub fn brute_force_topk(vectors: &[(u64, Vec<f64>)], q: &[f64], k: usize) -> Result<SearchResult, AnnError> {
    if vectors.is_empty() {
        return Err(AnnError::EmptyIndex);
    }
    if k == 0 {
        return Err(AnnError::InvalidParams("k must be at least 1".into()));
    }
    let qn = normalize(u64::MAX, q).map_err(|_| AnnError::InvalidParams("query vector has zero norm".into()))?;
    let mut hits = Vec::with_capacity(vectors.len());
    for (id, v) in vectors {
        if v.len() != q.len() {
            return Err(AnnError::DimMismatch {
                expected: v.len(),
                found: q.len(),
            });
        }
        let vn = normalize(*id, v)?;
        let score = vn.iter().zip(&qn).map(|(a, b)| a * b).sum::<f64>().clamp(-1.0, 1.0);
        hits.push(Hit { id: *id, score });
    }
    Ok(SearchResult::ranked(hits, k))
}

/// Fraction of the exact top-`k` ids found in the approximate top-`k`.
/// When fewer than `k` exact results exist, the denominator is their count.
pub fn recall_at_k(approx: &SearchResult, exact: &SearchResult, k: usize) -> f64 {
    let truth: HashSet<u64> = exact.hits.iter().take(k).map(|h| h.id).collect();
    if truth.is_empty() {
        return 1.0;
    }
    let found = approx.hits.iter().take(k).filter(|h| truth.contains(&h.id)).count();
    found as f64 / truth.len() as f64
}
