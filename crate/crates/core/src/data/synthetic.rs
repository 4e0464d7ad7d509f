//! Small templated FAQ corpus with known intent clusters, used for smoke
//! runs and end-to-end tests.
//!
//! Cluster `c` is about one noun and uses one of five verbs, so clusters
//! that share a verb yield high-overlap negatives.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{tokenize, FaqRecord, PairExample};

const VERBS: [&str; 5] = ["reset", "change", "cancel", "update", "find"];

const NOUNS: [&str; 24] = [
    "password", "order", "subscription", "address", "invoice", "account", "email", "payment", "card", "delivery",
    "refund", "profile", "username", "plan", "device", "ticket", "booking", "warranty", "coupon", "membership",
    "voucher", "receipt", "license", "wallet",
];

const TEMPLATES: [&str; 13] = [
    "how do i {v} my {n} ?",
    "how can i {v} the {n}",
    "what is the way to {v} my {n} ?",
    "i want to {v} my {n}",
    "can you help me {v} my {n} ?",
    "where do i go to {v} the {n} ?",
    "is it possible to {v} my {n} online ?",
    "please tell me how to {v} a {n}",
    "steps to {v} {n}",
    "i need help to {v} my {n} today",
    "what should i do to {v} my {n} ?",
    "help me {v} the {n} please",
    "how would i {v} my {n} quickly ?",
];

#[derive(Debug, Clone)]
pub struct ToyCorpusSpec {
    pub clusters: usize,
    pub per_cluster: usize,
    pub held_out: usize,
    /// In-cluster positives per cluster beyond the connecting chain.
    pub extra_positives: usize,
    pub seed: u64,
}

impl Default for ToyCorpusSpec {
    fn default() -> Self {
        Self {
            clusters: 20,
            per_cluster: 10,
            held_out: 50,
            extra_positives: 1,
            seed: 17,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ToyCorpus {
    /// `clusters × per_cluster` questions; id = position.
    pub faq: Vec<FaqRecord>,
    pub cluster_of: Vec<usize>,
    /// Unseen phrasings with their cluster.
    pub held_out: Vec<(String, usize)>,
    pub train_pairs: Vec<PairExample>,
    pub valid_pairs: Vec<PairExample>,
}

fn render(template: &str, cluster: usize) -> String {
    template
        .replace("{v}", VERBS[cluster % VERBS.len()])
        .replace("{n}", NOUNS[cluster])
}

fn pair(a: &str, b: &str, label: u8) -> PairExample {
    PairExample::new(tokenize(a).unwrap(), tokenize(b).unwrap(), label)
}

impl ToyCorpus {
    pub fn generate(spec: &ToyCorpusSpec) -> Self {
        assert!(spec.clusters <= NOUNS.len(), "at most {} clusters", NOUNS.len());
        let extra = TEMPLATES.len() - spec.per_cluster;
        assert!(spec.per_cluster >= 3 && extra >= 1, "per_cluster must be in 3..{}", TEMPLATES.len());
        assert!(spec.held_out <= spec.clusters * extra, "not enough unseen templates");
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

        let mut faq = Vec::new();
        let mut cluster_of = Vec::new();
        for c in 0..spec.clusters {
            for t in &TEMPLATES[..spec.per_cluster] {
                faq.push(FaqRecord {
                    id: faq.len() as u64,
                    question: render(t, c),
                    answer: format!("To {} your {}, open settings and follow the {} guide.", VERBS[c % 5], NOUNS[c], NOUNS[c]),
                });
                cluster_of.push(c);
            }
        }

        let mut held_out = Vec::new();
        'outer: for k in 0..extra {
            for c in 0..spec.clusters {
                if held_out.len() == spec.held_out {
                    break 'outer;
                }
                held_out.push((render(TEMPLATES[spec.per_cluster + k], c), c));
            }
        }

        let q = |c: usize, t: usize| &faq[c * spec.per_cluster + t].question;
        let mut used = HashSet::new();
        let mut train_pairs = Vec::new();
        for c in 0..spec.clusters {
            // a chain keeps each cluster connected in the paraphrase graph
            for t in 0..spec.per_cluster - 1 {
                train_pairs.push(pair(q(c, t), q(c, t + 1), 1));
                used.insert((c * spec.per_cluster + t, c * spec.per_cluster + t + 1));
            }
            let max_extra = (spec.per_cluster - 1) * (spec.per_cluster - 2) / 2;
            for _ in 0..spec.extra_positives.min(max_extra) {
                let (a, b) = loop {
                    let a = rng.gen_range(0..spec.per_cluster);
                    let b = rng.gen_range(0..spec.per_cluster);
                    if a + 1 < b && !used.contains(&(c * spec.per_cluster + a, c * spec.per_cluster + b)) {
                        break (a, b);
                    }
                };
                train_pairs.push(pair(q(c, a), q(c, b), 1));
                used.insert((c * spec.per_cluster + a, c * spec.per_cluster + b));
            }
        }
        let positives = train_pairs.len();
        let mut negatives = Vec::new();
        while negatives.len() < positives {
            let c1 = rng.gen_range(0..spec.clusters);
            let hard = negatives.len() % 2 == 0;
            let c2 = if hard {
                let same_verb: Vec<usize> = (0..spec.clusters).filter(|&d| d != c1 && d % 5 == c1 % 5).collect();
                match same_verb.choose(&mut rng) {
                    Some(&d) => d,
                    None => continue,
                }
            } else {
                rng.gen_range(0..spec.clusters)
            };
            if c1 == c2 {
                continue;
            }
            let t1 = rng.gen_range(0..spec.per_cluster);
            let t2 = if hard { t1 } else { rng.gen_range(0..spec.per_cluster) };
            negatives.push(pair(q(c1, t1), q(c2, t2), 0));
        }
        train_pairs.extend(negatives);
        train_pairs.shuffle(&mut rng);

        let mut valid_pairs = Vec::new();
        while valid_pairs.len() < 2 * spec.clusters {
            let c = rng.gen_range(0..spec.clusters);
            let a = rng.gen_range(0..spec.per_cluster);
            let b = rng.gen_range(0..spec.per_cluster);
            if a >= b || used.contains(&(c * spec.per_cluster + a, c * spec.per_cluster + b)) {
                continue;
            }
            valid_pairs.push(pair(q(c, a), q(c, b), 1));
            let d = (c + rng.gen_range(1..spec.clusters)) % spec.clusters;
            valid_pairs.push(pair(q(c, a), q(d, b), 0));
        }

        Self {
            faq,
            cluster_of,
            held_out,
            train_pairs,
            valid_pairs,
        }
    }

    pub fn faq_tsv(&self) -> String {
        self.faq.iter().map(|r| format!("{}\t{}\t{}\n", r.id, r.question, r.answer)).collect()
    }

    pub fn pairs_tsv(pairs: &[PairExample]) -> String {
        pairs
            .iter()
            .map(|p| format!("{}\t{}\t{}\n", p.q1.join(" "), p.q2.join(" "), p.label))
            .collect()
    }
}
