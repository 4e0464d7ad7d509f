//! Writes the synthetic FAQ corpus to a directory:
//! `faq.tsv`, `train.tsv`, `valid.tsv` and `held_out.tsv`.
//!
//! cargo run -p faqsearch-core --example toy_corpus -- out/toy

use std::path::PathBuf;

use faqsearch_core::data::synthetic::{ToyCorpus, ToyCorpusSpec};

fn main() -> std::io::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "toy".into()));
    std::fs::create_dir_all(&dir)?;
    let corpus = ToyCorpus::generate(&ToyCorpusSpec::default());
    std::fs::write(dir.join("faq.tsv"), corpus.faq_tsv())?;
    std::fs::write(dir.join("train.tsv"), ToyCorpus::pairs_tsv(&corpus.train_pairs))?;
    std::fs::write(dir.join("valid.tsv"), ToyCorpus::pairs_tsv(&corpus.valid_pairs))?;
    let held: String = corpus.held_out.iter().map(|(q, c)| format!("{q}\t{c}\n")).collect();
    std::fs::write(dir.join("held_out.tsv"), held)?;
    println!(
        "{} FAQ entries, {} training pairs, {} validation pairs, {} held-out questions in {}",
        corpus.faq.len(),
        corpus.train_pairs.len(),
        corpus.valid_pairs.len(),
        corpus.held_out.len(),
        dir.display()
    );
    Ok(())
}
