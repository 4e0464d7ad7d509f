//! Recall@10 of the random-projection forest against exact search on
//! 10 000 Gaussian vectors in 64 dimensions, with a budget of 800 candidates.

use std::time::Instant;

use faqsearch_core::ann::{brute_force_topk, build_index, recall_at_k, IndexParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    let u: f64 = rng.gen::<f64>().max(1e-300);
    let v: f64 = rng.gen();
    (-2.0 * u.ln()).sqrt() * (2.0 * std::f64::consts::PI * v).cos()
}

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let vectors: Vec<(u64, Vec<f64>)> = (0..10_000).map(|i| (i, (0..64).map(|_| gauss(&mut rng)).collect())).collect();
    let queries: Vec<Vec<f64>> = (0..100).map(|_| (0..64).map(|_| gauss(&mut rng)).collect()).collect();
    for (num_trees, leaf_capacity) in [(16, 1), (16, 4), (16, 8), (2, 1)] {
        let t = Instant::now();
        let index = build_index(&vectors, IndexParams { num_trees, leaf_capacity, seed: 5 }).unwrap();
        let build = t.elapsed();
        let t = Instant::now();
        let mut recall = 0.0;
        for q in &queries {
            let approx = index.query_topk(q, 10, Some(800)).unwrap();
            let exact = brute_force_topk(&vectors, q, 10).unwrap();
            recall += recall_at_k(&approx, &exact, 10);
        }
        println!(
            "trees {num_trees:>2} leaf {leaf_capacity}: recall@10 {:.3}, build {build:?}, 100 queries {:?}",
            recall / queries.len() as f64,
            t.elapsed()
        );
    }
}
