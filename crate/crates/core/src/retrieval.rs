//! Offline encode-and-index of a FAQ set and online query answering.
//!
//! An artifact directory holds `model.ckpt`, `index.annx`, `store.json`
//! (the FAQ records in index order) and `manifest.json`, which pins the
//! checkpoint's SHA-256 so an index is never served with a different
//! encoder.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ann::{build_index, load_index, save_index, searchers, AnnError, AnnIndex, IndexParams, SearchParams, SearchStrategy};
use crate::data::{load_faq_tsv, tokenize, DataError, FaqRecord};
use crate::format::{write_atomic, PersistError};
use crate::model::{Model, ModelConfig, ModelError};
use crate::training::Checkpoint;

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const INDEX_FILE: &str = "index.annx";
pub const STORE_FILE: &str = "store.json";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, thiserror::Error)]
pub enum RetrievalError {
    #[error("FAQ file {0} has no entries")]
    EmptyFaq(PathBuf),
    #[error("query text is empty")]
    EmptyQuery,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("encoder produces {found}-dimensional vectors but the config declares {expected}")]
    DimMismatch { expected: usize, found: usize },
    #[error("checkpoint hash {found} does not match manifest {expected}")]
    ChecksumMismatch { expected: String, found: String },
    #[error("inconsistent artifacts: {0}")]
    Inconsistent(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Persist(#[from] PersistError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Ann(#[from] AnnError),
}

impl RetrievalError {
    /// Errors caused by the request rather than the artifacts.
    pub fn is_client_error(&self) -> bool {
        matches!(self, RetrievalError::EmptyQuery | RetrievalError::InvalidK)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub checkpoint_sha256: String,
    pub config: ModelConfig,
    pub index_params: IndexParams,
    pub item_count: usize,
    pub built_at: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RetrievalError + '_ {
    move |source| RetrievalError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Encodes every FAQ question with `model` and builds the index.
pub fn encode_and_index(model: &Model, faq: &[FaqRecord], params: IndexParams) -> Result<AnnIndex, RetrievalError> {
    let tokens: Vec<Vec<String>> = faq.iter().map(|r| tokenize(&r.question)).collect::<Result<_, _>>()?;
    let refs: Vec<&[String]> = tokens.iter().map(Vec::as_slice).collect();
    let vectors = model.encode_many(&refs)?;
    let expected = model.final_dim();
    let mut items = Vec::with_capacity(faq.len());
    for (r, v) in faq.iter().zip(vectors) {
        if v.len() != expected {
            return Err(RetrievalError::DimMismatch { expected, found: v.len() });
        }
        items.push((r.id, v.into_data()));
    }
    Ok(build_index(&items, params)?)
}

/// Builds the artifact directory from a FAQ TSV and a checkpoint file.
/// Nothing is written when the FAQ is empty or any step fails before the
/// index is built.
pub fn build_offline(
    faq_path: impl AsRef<Path>,
    checkpoint_path: impl AsRef<Path>,
    params: IndexParams,
    out_dir: impl AsRef<Path>,
) -> Result<Manifest, RetrievalError> {
    let (faq_path, ckpt_path, out_dir) = (faq_path.as_ref(), checkpoint_path.as_ref(), out_dir.as_ref());
    let faq = load_faq_tsv(faq_path)?;
    if faq.is_empty() {
        return Err(RetrievalError::EmptyFaq(faq_path.to_path_buf()));
    }
    let ckpt_bytes = std::fs::read(ckpt_path).map_err(io_err(ckpt_path))?;
    let checkpoint = Checkpoint::from_bytes(&ckpt_bytes)?;
    let model = checkpoint.to_model()?;
    let index = encode_and_index(&model, &faq, params)?;
    let manifest = Manifest {
        checkpoint_sha256: sha256_hex(&ckpt_bytes),
        config: model.config.clone(),
        index_params: params,
        item_count: faq.len(),
        built_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
    };

    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let write = |name: &str, bytes: &[u8]| {
        let path = out_dir.join(name);
        write_atomic(&path, bytes).map_err(io_err(&path))
    };
    write(CHECKPOINT_FILE, &ckpt_bytes)?;
    save_index(&index, out_dir.join(INDEX_FILE))?;
    write(STORE_FILE, &serde_json::to_vec_pretty(&faq).expect("records serialize"))?;
    write(MANIFEST_FILE, &serde_json::to_vec_pretty(&manifest).expect("manifest serializes"))?;
    log::info!("indexed {} FAQ entries into {}", faq.len(), out_dir.display());
    Ok(manifest)
}

/// One answer row. `score` is the matching probability for `cosine`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRow {
    pub id: u64,
    pub question: String,
    pub answer: String,
    pub score: f64,
    pub cosine: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct QueryResult {
    pub results: Vec<QueryRow>,
}

/// Post-retrieval hook: may reorder or drop rows.
pub trait Reranker: Send + Sync {
    fn rerank(&self, query: &str, rows: Vec<QueryRow>) -> Vec<QueryRow>;
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct QueryOptions {
    /// Rows scoring below this are dropped.
    pub min_score: Option<f64>,
}

/// Loaded, immutable serving state.
pub struct Artifacts {
    pub model: Model,
    pub index: AnnIndex,
    pub manifest: Manifest,
    records: Vec<FaqRecord>,
    by_id: HashMap<u64, usize>,
    searcher: Box<dyn SearchStrategy>,
    reranker: Option<Box<dyn Reranker>>,
}

impl std::fmt::Debug for Artifacts {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Artifacts")
            .field("items", &self.records.len())
            .field("searcher", &self.searcher.name())
            .field("manifest", &self.manifest)
            .finish()
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, RetrievalError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    serde_json::from_slice(&bytes).map_err(|source| RetrievalError::Json {
        path: path.to_path_buf(),
        source,
    })
}

impl Artifacts {
    /// Loads and cross-checks an artifact directory; searches with the
    /// `forest` strategy at its default budget.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self, RetrievalError> {
        Self::load_with(dir, "forest", SearchParams::default())
    }

    pub fn load_with(dir: impl AsRef<Path>, searcher: &str, search: SearchParams) -> Result<Self, RetrievalError> {
        let dir = dir.as_ref();
        let manifest: Manifest = read_json(&dir.join(MANIFEST_FILE))?;
        let ckpt_path = dir.join(CHECKPOINT_FILE);
        let ckpt_bytes = std::fs::read(&ckpt_path).map_err(io_err(&ckpt_path))?;
        let found = sha256_hex(&ckpt_bytes);
        if found != manifest.checkpoint_sha256 {
            return Err(RetrievalError::ChecksumMismatch {
                expected: manifest.checkpoint_sha256,
                found,
            });
        }
        let model = Checkpoint::from_bytes(&ckpt_bytes)?.to_model()?;
        let index = load_index(dir.join(INDEX_FILE))?;
        let records: Vec<FaqRecord> = read_json(&dir.join(STORE_FILE))?;
        let searcher = searchers().get(searcher).map_err(AnnError::from)?(&search);
        Self::assemble(model, index, records, manifest, searcher)
    }

    /// Wraps in-memory parts, checking they agree.
    pub fn from_parts(model: Model, index: AnnIndex, records: Vec<FaqRecord>, manifest: Manifest) -> Result<Self, RetrievalError> {
        Self::assemble(model, index, records, manifest, searchers().get("forest").expect("built in")(&SearchParams::default()))
    }

    fn assemble(
        model: Model,
        index: AnnIndex,
        records: Vec<FaqRecord>,
        manifest: Manifest,
        searcher: Box<dyn SearchStrategy>,
    ) -> Result<Self, RetrievalError> {
        if index.len() != records.len() || records.len() != manifest.item_count {
            return Err(RetrievalError::Inconsistent(format!(
                "index has {} items, store {}, manifest {}",
                index.len(),
                records.len(),
                manifest.item_count
            )));
        }
        if index.dim() != model.final_dim() {
            return Err(RetrievalError::DimMismatch {
                expected: model.final_dim(),
                found: index.dim(),
            });
        }
        let by_id: HashMap<u64, usize> = records.iter().enumerate().map(|(i, r)| (r.id, i)).collect();
        if by_id.len() != records.len() || index.ids().iter().any(|id| !by_id.contains_key(id)) {
            return Err(RetrievalError::Inconsistent("index ids do not match the store".into()));
        }
        Ok(Self {
            model,
            index,
            manifest,
            records,
            by_id,
            searcher,
            reranker: None,
        })
    }

    pub fn with_reranker(mut self, reranker: Box<dyn Reranker>) -> Self {
        self.reranker = Some(reranker);
        self
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn record(&self, id: u64) -> Option<&FaqRecord> {
        self.by_id.get(&id).map(|&i| &self.records[i])
    }

    pub fn searcher_name(&self) -> &'static str {
        self.searcher.name()
    }
}

/// Tokenize, encode, search, attach answers and matching scores. `k` is
/// clamped to the number of indexed entries.
pub fn answer_query(artifacts: &Artifacts, text: &str, k: usize) -> Result<QueryResult, RetrievalError> {
    answer_query_with(artifacts, text, k, &QueryOptions::default())
}

pub fn answer_query_with(artifacts: &Artifacts, text: &str, k: usize, opts: &QueryOptions) -> Result<QueryResult, RetrievalError> {
    if text.trim().is_empty() {
        return Err(RetrievalError::EmptyQuery);
    }
    if k == 0 {
        return Err(RetrievalError::InvalidK);
    }
    let k = k.min(artifacts.index.len());
    let tokens = tokenize(text).map_err(|_| RetrievalError::EmptyQuery)?;
    let v = artifacts.model.encode(&tokens)?;
    let found = artifacts.searcher.search(&artifacts.index, v.data(), k)?;
    let head = &artifacts.model.config.match_head;
    let mut rows: Vec<QueryRow> = found
        .hits
        .iter()
        .map(|h| {
            let r = artifacts.record(h.id).expect("index ids checked against store at load");
            QueryRow {
                id: r.id,
                question: r.question.clone(),
                answer: r.answer.clone(),
                score: head.score(h.score),
                cosine: h.score,
            }
        })
        .collect();
    rows.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.id.cmp(&b.id)));
    if let Some(rr) = &artifacts.reranker {
        rows = rr.rerank(text, rows);
    }
    if let Some(min) = opts.min_score {
        rows.retain(|r| r.score >= min);
    }
    Ok(QueryResult { results: rows })
}
