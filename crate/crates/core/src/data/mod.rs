//! Corpus ingestion: TSV loaders, tokenization, vocabularies, pretrained
//! embeddings, the overlap-rate statistic, and intent labels derived from
//! the paraphrase graph.

mod embeddings;
mod graph;
mod overlap;
mod pairs;
pub mod synthetic;
mod tokenize;
mod vocab;

use std::path::PathBuf;

pub use embeddings::{load_pretrained_embeddings, random_embeddings, EMBED_INIT_RANGE};
pub use graph::{assign_intent_labels, connected_components, IntentLabeling, ParaphraseGraph, TrainSplit, UnionFind};
pub use overlap::{overlap_rate, OverlapStats};
pub use pairs::{load_faq_tsv, load_pairs_tsv, parse_faq_tsv, parse_pairs_tsv, FaqRecord, PairExample};
pub use tokenize::{sentence_key, tokenize};
pub use vocab::{build_char_vocab, build_vocab, Vocab, PAD, PAD_TOKEN, UNK, UNK_TOKEN};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: label must be 0 or 1, found {value:?}")]
    BadLabel { line: usize, value: String },
    #[error("empty sentence")]
    EmptySentence,
    #[error("line {line}: empty sentence")]
    EmptySentenceAt { line: usize },
    #[error("line {line}: duplicate id {id}")]
    DuplicateId { line: usize, id: u64 },
    #[error("embedding for {token:?} has {found} values, expected {expected}")]
    EmbeddingDim {
        token: String,
        expected: usize,
        found: usize,
    },
    #[error("invalid number {value:?} in embedding for {token:?}")]
    EmbeddingValue { token: String, value: String },
}

pub(crate) fn read_file(path: &std::path::Path) -> Result<String, DataError> {
    std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Training pairs with intent labels attached, plus the vocabularies
/// derived from them.
#[derive(Debug, Clone)]
pub struct LabeledData {
    pub train: Vec<PairExample>,
    pub valid: Vec<PairExample>,
    pub labeling: IntentLabeling,
    pub vocab: Vocab,
    pub chars: Vocab,
}

impl LabeledData {
    /// Builds the paraphrase graph from `train` only, labels components of
    /// at least `min_cluster` questions, and attaches classes to both sets.
    /// The word vocabulary keeps training tokens seen `min_count` times; the
    /// character vocabulary covers every training word.
    pub fn prepare(train: Vec<PairExample>, valid: Vec<PairExample>, min_count: usize, min_cluster: usize) -> Self {
        let split = TrainSplit::new(train);
        let graph = ParaphraseGraph::from_train(&split);
        let components = connected_components(&graph);
        let labeling = assign_intent_labels(&graph, &components, min_cluster);
        let mut train = split.into_pairs();
        let mut valid = valid;
        labeling.attach(&mut train);
        labeling.attach(&mut valid);
        let vocab = build_vocab(&train, min_count);
        let words: std::collections::BTreeSet<&str> = train.iter().flat_map(|p| p.q1.iter().chain(&p.q2)).map(String::as_str).collect();
        let chars = build_char_vocab(words);
        Self {
            train,
            valid,
            labeling,
            vocab,
            chars,
        }
    }
}
