use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{read_file, DataError, Vocab, PAD};
use crate::numerics::Tensor;

/// Half-width of the uniform range for embedding rows without a pretrained vector.
pub const EMBED_INIT_RANGE: f64 = 0.05;

/// `|vocab| × dim` table: uniform(±0.05) rows from `seed`, zero PAD row.
pub fn random_embeddings(vocab_len: usize, dim: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data: Vec<f64> = (0..vocab_len * dim)
        .map(|_| rng.gen_range(-EMBED_INIT_RANGE..EMBED_INIT_RANGE))
        .collect();
    data[PAD * dim..(PAD + 1) * dim].fill(0.0);
    Tensor::matrix(vocab_len, dim, data).expect("vocab has reserved rows")
}

/// Fills rows for vocabulary tokens from a `token v1 v2 ...` text file.
///
/// Tokens missing from the file (and UNK) keep their random initialization;
/// file tokens outside the vocabulary are ignored. A leading `count dim`
/// header line, as written by some tools, is skipped.
pub fn load_pretrained_embeddings(path: impl AsRef<Path>, vocab: &Vocab, dim: usize, seed: u64) -> Result<Tensor, DataError> {
    let text = read_file(path.as_ref())?;
    let mut table = random_embeddings(vocab.len(), dim, seed);
    let mut found = 0usize;
    for (i, line) in text.lines().enumerate() {
        let mut parts = line.split_whitespace();
        let Some(token) = parts.next() else { continue };
        let values: Vec<&str> = parts.collect();
        if i == 0 && values.len() == 1 && token.parse::<u64>().is_ok() && values[0].parse::<u64>().ok() == Some(dim as u64) {
            continue;
        }
        if values.len() != dim {
            return Err(DataError::EmbeddingDim {
                token: token.to_string(),
                expected: dim,
                found: values.len(),
            });
        }
        let Some(row) = vocab.lookup(token) else { continue };
        let dst = &mut table.data_mut()[row * dim..(row + 1) * dim];
        for (d, v) in dst.iter_mut().zip(&values) {
            *d = v.parse().map_err(|_| DataError::EmbeddingValue {
                token: token.to_string(),
                value: v.to_string(),
            })?;
        }
        found += 1;
    }
    log::info!("pretrained vectors for {found} of {} vocabulary tokens", vocab.len() - 2);
    Ok(table)
}
