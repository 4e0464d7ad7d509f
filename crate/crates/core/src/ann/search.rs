use serde::{Deserialize, Serialize};

use super::{AnnError, AnnIndex, SearchResult};
use crate::registry::Registry;

/// A way of answering top-`k` queries against an [`AnnIndex`].
pub trait SearchStrategy: Send + Sync {
    fn name(&self) -> &'static str;
    fn search(&self, index: &AnnIndex, q: &[f64], k: usize) -> Result<SearchResult, AnnError>;
}

/// Best-bin-first traversal of the forest.
#[derive(Debug, Clone, Copy, Default)]
pub struct ForestSearch {
    pub budget: Option<usize>,
}

impl SearchStrategy for ForestSearch {
    fn name(&self) -> &'static str {
        "forest"
    }

    fn search(&self, index: &AnnIndex, q: &[f64], k: usize) -> Result<SearchResult, AnnError> {
        index.query_topk(q, k, self.budget)
    }
}

/// Scores every stored vector.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExactSearch;

impl SearchStrategy for ExactSearch {
    fn name(&self) -> &'static str {
        "exact"
    }

    fn search(&self, index: &AnnIndex, q: &[f64], k: usize) -> Result<SearchResult, AnnError> {
        index.exact_topk(q, k)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchParams {
    /// Candidate budget for the forest; `None` uses the index default.
    pub budget: Option<usize>,
}

pub type SearchFactory = fn(&SearchParams) -> Box<dyn SearchStrategy>;

/// Built-in strategies: `forest` and `exact`.
pub fn searchers() -> Registry<SearchFactory> {
    let mut r: Registry<SearchFactory> = Registry::new("search strategy");
    r.register("forest", |p| Box::new(ForestSearch { budget: p.budget }))
        .register("exact", |_| Box::new(ExactSearch));
    r
}
