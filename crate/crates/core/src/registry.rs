//! Name → factory tables for interchangeable strategies.
//!
//! Optimizers and nearest-neighbour search strategies are registered here
//! under stable names and selected at runtime from the CLI or config.

use std::collections::BTreeMap;
use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown {kind} {name:?} (available: {available})")]
pub struct UnknownStrategy {
    pub kind: &'static str,
    pub name: String,
    pub available: String,
}

pub struct Registry<F> {
    kind: &'static str,
    factories: BTreeMap<&'static str, F>,
}

impl<F> Registry<F> {
    pub fn new(kind: &'static str) -> Self {
        Self {
            kind,
            factories: BTreeMap::new(),
        }
    }

    /// Registers a factory; a later registration under the same name wins.
    pub fn register(&mut self, name: &'static str, factory: F) -> &mut Self {
        self.factories.insert(name, factory);
        self
    }

    pub fn get(&self, name: &str) -> Result<&F, UnknownStrategy> {
        self.factories.get(name).ok_or_else(|| UnknownStrategy {
            kind: self.kind,
            name: name.to_string(),
            available: self.names().join(", "),
        })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.factories.keys().copied().collect()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.factories.contains_key(name)
    }
}

impl<F> fmt::Debug for Registry<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Registry")
            .field("kind", &self.kind)
            .field("names", &self.names())
            .finish()
    }
}
