use std::collections::{BTreeSet, HashMap};

use super::{sentence_key, PairExample};

/// Disjoint-set forest with union by size and path halving.
#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Returns false when already joined.
    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
        true
    }
}

/// The training split; the only input accepted when deriving intent labels,
/// so validation and test pairs cannot leak into the class targets.
#[derive(Debug, Clone)]
pub struct TrainSplit {
    pairs: Vec<PairExample>,
}

impl TrainSplit {
    pub fn new(pairs: Vec<PairExample>) -> Self {
        Self { pairs }
    }

    pub fn pairs(&self) -> &[PairExample] {
        &self.pairs
    }

    pub fn pairs_mut(&mut self) -> &mut [PairExample] {
        &mut self.pairs
    }

    pub fn into_pairs(self) -> Vec<PairExample> {
        self.pairs
    }
}

/// Undirected graph whose vertices are distinct questions and whose edges
/// join known paraphrases.
#[derive(Debug, Clone, Default)]
pub struct ParaphraseGraph {
    vertices: Vec<String>,
    index: HashMap<String, usize>,
    edges: BTreeSet<(usize, usize)>,
}

impl ParaphraseGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Every question in the split is a vertex; positive pairs add edges.
    pub fn from_train(split: &TrainSplit) -> Self {
        let mut g = Self::new();
        for p in split.pairs() {
            let a = g.add_vertex(sentence_key(&p.q1));
            let b = g.add_vertex(sentence_key(&p.q2));
            if p.is_positive() {
                g.add_edge(a, b);
            }
        }
        g
    }

    pub fn add_vertex(&mut self, key: String) -> usize {
        if let Some(&i) = self.index.get(&key) {
            return i;
        }
        let i = self.vertices.len();
        self.index.insert(key.clone(), i);
        self.vertices.push(key);
        i
    }

    /// Self-loops are ignored.
    pub fn add_edge(&mut self, a: usize, b: usize) {
        assert!(a < self.vertices.len() && b < self.vertices.len(), "edge endpoint out of range");
        if a != b {
            self.edges.insert((a.min(b), a.max(b)));
        }
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn vertex(&self, i: usize) -> &str {
        &self.vertices[i]
    }

    pub fn vertex_id(&self, key: &str) -> Option<usize> {
        self.index.get(key).copied()
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }
}

/// Maximal connected vertex sets. Each set is sorted and the sets are
/// ordered by their smallest vertex.
pub fn connected_components(graph: &ParaphraseGraph) -> Vec<Vec<usize>> {
    let n = graph.vertex_count();
    let mut uf = UnionFind::new(n);
    for (a, b) in graph.edges() {
        uf.union(a, b);
    }
    let mut slot_of_root: HashMap<usize, usize> = HashMap::new();
    let mut out: Vec<Vec<usize>> = Vec::new();
    for v in 0..n {
        let root = uf.find(v);
        let slot = *slot_of_root.entry(root).or_insert_with(|| {
            out.push(Vec::new());
            out.len() - 1
        });
        out[slot].push(v);
    }
    out
}

/// Question → intent class map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntentLabeling {
    class_of: HashMap<String, usize>,
    num_classes: usize,
    other_class: usize,
}

impl IntentLabeling {
    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn other_class(&self) -> usize {
        self.other_class
    }

    /// Class for a tokenized question; questions outside the graph are "other".
    pub fn class_of(&self, tokens: &[String]) -> usize {
        self.class_of_key(&sentence_key(tokens))
    }

    pub fn class_of_key(&self, key: &str) -> usize {
        self.class_of.get(key).copied().unwrap_or(self.other_class)
    }

    pub fn labeled_count(&self) -> usize {
        self.class_of.len()
    }

    /// Fills `intent1`/`intent2` on every pair.
    pub fn attach(&self, pairs: &mut [PairExample]) {
        for p in pairs {
            p.intent1 = Some(self.class_of(&p.q1));
            p.intent2 = Some(self.class_of(&p.q2));
        }
    }
}

/// Components with at least `min_size` questions get classes `0..K` in
/// component order; everything else shares the "other" class `K`.
pub fn assign_intent_labels(graph: &ParaphraseGraph, components: &[Vec<usize>], min_size: usize) -> IntentLabeling {
    let min_size = min_size.max(1);
    let kept = components.iter().filter(|c| c.len() >= min_size).count();
    let other_class = kept;
    let mut class_of = HashMap::with_capacity(graph.vertex_count());
    let mut next = 0;
    for comp in components {
        let class = if comp.len() >= min_size {
            next += 1;
            next - 1
        } else {
            other_class
        };
        for &v in comp {
            class_of.insert(graph.vertex(v).to_string(), class);
        }
    }
    IntentLabeling {
        class_of,
        num_classes: kept + 1,
        other_class,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph(n: usize, edges: &[(usize, usize)]) -> ParaphraseGraph {
        let mut g = ParaphraseGraph::new();
        for i in 0..n {
            g.add_vertex(format!("q{i}"));
        }
        for &(a, b) in edges {
            g.add_edge(a, b);
        }
        g
    }

    #[test]
    fn transitive_component() {
        let g = graph(4, &[(0, 1), (1, 2)]);
        assert_eq!(connected_components(&g), vec![vec![0, 1, 2], vec![3]]);
    }

    #[test]
    fn no_edges_gives_singletons() {
        let g = graph(5, &[]);
        assert_eq!(connected_components(&g).len(), 5);
    }

    #[test]
    fn size_filter_greater_than_three() {
        // component sizes 5, 4, 3, 1
        let mut edges = vec![(0, 1), (1, 2), (2, 3), (3, 4)];
        edges.extend([(5, 6), (6, 7), (7, 8)]);
        edges.extend([(9, 10), (10, 11)]);
        let g = graph(13, &edges);
        let comps = connected_components(&g);
        let sizes: Vec<usize> = comps.iter().map(Vec::len).collect();
        assert_eq!(sizes, [5, 4, 3, 1]);
        let l = assign_intent_labels(&g, &comps, 4);
        assert_eq!(l.num_classes(), 3);
        assert_eq!(l.other_class(), 2);
        assert_eq!(l.class_of_key("q0"), 0);
        assert_eq!(l.class_of_key("q8"), 1);
        assert_eq!(l.class_of_key("q9"), 2);
        assert_eq!(l.class_of_key("q12"), 2);
        assert_eq!(l.class_of_key("never seen"), 2);
    }

    #[test]
    fn degenerate_labelings() {
        let g = graph(3, &[]);
        let l = assign_intent_labels(&g, &connected_components(&g), 4);
        assert_eq!(l.num_classes(), 1);
        assert!((0..3).all(|i| l.class_of_key(&format!("q{i}")) == 0));

        let g = graph(3, &[(0, 1), (1, 2)]);
        let l = assign_intent_labels(&g, &connected_components(&g), 1);
        assert_eq!(l.num_classes(), 2);
        assert_eq!(l.labeled_count(), 3);
    }

    #[test]
    fn graph_ignores_self_loops_and_negatives() {
        let t = |s: &str| s.split(' ').map(String::from).collect::<Vec<_>>();
        let split = TrainSplit::new(vec![
            PairExample::new(t("a b"), t("a b"), 1),
            PairExample::new(t("a b"), t("c"), 0),
            PairExample::new(t("c"), t("d"), 1),
        ]);
        let g = ParaphraseGraph::from_train(&split);
        assert_eq!(g.vertex_count(), 3);
        assert_eq!(g.edges().collect::<Vec<_>>(), vec![(1, 2)]);
    }
}
