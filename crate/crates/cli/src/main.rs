//! `faqsearch`: train an encoder, build a FAQ index, query or serve it.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or runtime error.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use faqsearch_core::ann::{IndexParams, SearchParams};
use faqsearch_core::data::{load_pairs_tsv, load_pretrained_embeddings, LabeledData, OverlapStats};
use faqsearch_core::encoder::EncoderConfig;
use faqsearch_core::model::{Model, ModelConfig};
use faqsearch_core::multitask::{LossWeights, MatchHeadConfig};
use faqsearch_core::retrieval::{answer_query_with, build_offline, Artifacts, QueryOptions};
use faqsearch_core::training::{self, Checkpoint, TrainConfig};

type Error = Box<dyn std::error::Error>;

#[derive(Parser, Debug)]
#[command(name = "faqsearch", version, about = "Semantic FAQ retrieval with a multi-task sentence encoder")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train an encoder on a q1<TAB>q2<TAB>label file and write the best checkpoint
    Train(TrainArgs),
    /// Print the sentence vector for a text as JSON
    Encode {
        #[arg(long)]
        checkpoint: PathBuf,
        text: String,
    },
    /// Encode a FAQ file and write index, store and manifest to a directory
    IndexBuild {
        #[arg(long)]
        faq: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 16)]
        trees: usize,
        #[arg(long, default_value_t = 8)]
        leaf_capacity: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Answer a question from built artifacts
    Query {
        #[arg(long)]
        artifacts: PathBuf,
        #[arg(long, short, default_value_t = 10)]
        k: usize,
        #[command(flatten)]
        search: SearchArgs,
        /// Emit JSON instead of a table
        #[arg(long)]
        json: bool,
        text: String,
    },
    /// Serve POST /query and GET /healthz over HTTP
    Serve {
        #[arg(long)]
        artifacts: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
        #[command(flatten)]
        search: SearchArgs,
    },
    /// Print accuracy, precision, recall and F1 on a labelled pair file
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        #[arg(long)]
        json: bool,
    },
    /// Print word-overlap rates of positive, negative and all pairs
    Stats {
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Args, Debug)]
struct SearchArgs {
    /// Search strategy: forest or exact
    #[arg(long, default_value = "forest")]
    searcher: String,
    /// Candidate budget for the forest search
    #[arg(long)]
    budget: Option<usize>,
    /// Drop answers whose matching score is below this value
    #[arg(long)]
    min_score: Option<f64>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    pairs: PathBuf,
    /// Validation pairs; defaults to the training pairs
    #[arg(long)]
    valid: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Encoder config as JSON; defaults to the full-size encoder
    #[arg(long, conflicts_with = "tiny")]
    encoder_config: Option<PathBuf>,
    /// Use the small test-size encoder
    #[arg(long)]
    tiny: bool,
    /// Training config as JSON (fields not given keep their defaults)
    #[arg(long)]
    train_config: Option<PathBuf>,
    /// Pretrained word vectors, one "word v1 v2 ..." line each
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    min_count: usize,
    /// Smallest paraphrase cluster that gets its own intent class
    #[arg(long, default_value_t = 4)]
    min_cluster: usize,
    #[arg(long, default_value_t = 0.8)]
    lambda: f64,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    optimizer: Option<String>,
    #[arg(long)]
    fallback: Option<String>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Write the evaluation history as JSON
    #[arg(long)]
    history: Option<PathBuf>,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &PathBuf) -> Result<T, Error> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?)
}

fn train(args: TrainArgs) -> Result<(), Error> {
    let train = load_pairs_tsv(&args.pairs)?;
    let valid = match &args.valid {
        Some(p) => load_pairs_tsv(p)?,
        None => Vec::new(),
    };
    let data = LabeledData::prepare(train, valid, args.min_count, args.min_cluster);
    log::info!(
        "{} training pairs, {} intent classes, {} words",
        data.train.len(),
        data.labeling.num_classes(),
        data.vocab.len()
    );
    let encoder = match (&args.encoder_config, args.tiny) {
        (Some(p), _) => read_json(p)?,
        (None, true) => EncoderConfig::tiny(),
        (None, false) => EncoderConfig::default(),
    };
    let mut cfg: TrainConfig = match &args.train_config {
        Some(p) => read_json(p)?,
        None => TrainConfig::default(),
    };
    cfg.seed = args.seed;
    if let Some(e) = args.epochs {
        cfg.max_epochs = e;
    }
    if let Some(b) = args.batch_size {
        cfg.batch_size = b;
    }
    if let Some(o) = args.optimizer {
        cfg.optimizer = o;
    }
    if let Some(f) = args.fallback {
        cfg.fallback = f;
    }
    let word_table = match &args.embeddings {
        Some(p) => Some(load_pretrained_embeddings(p, &data.vocab, encoder.word_dim, args.seed)?),
        None => None,
    };
    let model_cfg = ModelConfig {
        encoder,
        match_head: MatchHeadConfig::default(),
        loss: LossWeights { lambda: args.lambda },
        num_classes: data.labeling.num_classes(),
    };
    let mut model = Model::new(model_cfg, data.vocab, data.chars, word_table, args.seed)?;
    let report = training::train(&mut model, &data.train, &data.valid, &cfg)?;
    report.best.save(&args.out)?;
    if let Some(p) = &args.history {
        std::fs::write(p, serde_json::to_string_pretty(&report.history)?)?;
    }
    if let Some(step) = report.switched_at {
        println!("switched to {} at step {step}", cfg.fallback);
    }
    println!(
        "best validation metric {:.4} at step {} ({} steps, {} epochs); checkpoint written to {}",
        report.best_metric,
        report.best.config.step,
        report.steps,
        report.epochs,
        args.out.display()
    );
    Ok(())
}

fn load_artifacts(dir: &PathBuf, search: &SearchArgs) -> Result<Artifacts, Error> {
    Ok(Artifacts::load_with(dir, &search.searcher, SearchParams { budget: search.budget })?)
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Train(args) => train(args)?,
        Command::Encode { checkpoint, text } => {
            let model = Checkpoint::load(&checkpoint)?.to_model()?;
            let v = model.encode_text(&text)?;
            println!("{}", serde_json::to_string(v.data())?);
        }
        Command::IndexBuild {
            faq,
            checkpoint,
            out,
            trees,
            leaf_capacity,
            seed,
        } => {
            let params = IndexParams {
                num_trees: trees,
                leaf_capacity,
                seed,
            };
            let manifest = build_offline(&faq, &checkpoint, params, &out)?;
            println!("indexed {} entries into {}", manifest.item_count, out.display());
        }
        Command::Query {
            artifacts,
            k,
            search,
            json,
            text,
        } => {
            let a = load_artifacts(&artifacts, &search)?;
            let opts = QueryOptions {
                min_score: search.min_score,
            };
            let result = answer_query_with(&a, &text, k, &opts)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&result)?);
            } else {
                println!("{:>4}  {:>8}  {:>7}  {:>7}  question | answer", "rank", "id", "score", "cosine");
                for (i, r) in result.results.iter().enumerate() {
                    println!("{:>4}  {:>8}  {:>7.4}  {:>7.4}  {} | {}", i + 1, r.id, r.score, r.cosine, r.question, r.answer);
                }
            }
        }
        Command::Serve { artifacts, bind, search } => {
            let a = Arc::new(load_artifacts(&artifacts, &search)?);
            let opts = QueryOptions {
                min_score: search.min_score,
            };
            let rt = tokio_runtime()?;
            rt.block_on(faqsearch_serve::serve(a, bind, opts))?;
        }
        Command::Eval {
            checkpoint,
            pairs,
            threshold,
            json,
        } => {
            let model = Checkpoint::load(&checkpoint)?.to_model()?;
            let pairs = load_pairs_tsv(&pairs)?;
            let m = training::evaluate(&model, &pairs, threshold)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&m)?);
            } else {
                println!("{m}");
            }
        }
        Command::Stats { pairs, json } => {
            let pairs = load_pairs_tsv(&pairs)?;
            let s = OverlapStats::compute(&pairs)?;
            if json {
                let v = serde_json::json!({
                    "positives": s.positives,
                    "negatives": s.negatives,
                    "pos": s.pos,
                    "neg": s.neg,
                    "avg": s.avg,
                });
                println!("{}", serde_json::to_string_pretty(&v)?);
            } else {
                let fmt = |x: Option<f64>| x.map_or_else(|| "-".to_string(), |x| format!("{x:.3}"));
                println!("{:>8}  {:>8}  {:>6}  {:>6}  {:>6}", "#pos", "#neg", "pos", "neg", "avg");
                println!(
                    "{:>8}  {:>8}  {:>6}  {:>6}  {:>6}",
                    s.positives,
                    s.negatives,
                    fmt(s.pos),
                    fmt(s.neg),
                    fmt(s.avg)
                );
            }
        }
    }
    Ok(())
}

fn tokio_runtime() -> std::io::Result<tokio::runtime::Runtime> {
    tokio::runtime::Builder::new_multi_thread().enable_all().build()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
