use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ProcessedExample;
use crate::embedding::PAD_ID;

/// Extends `example` to `len` positions with padding tokens and a false mask.
pub fn pad_example(example: &ProcessedExample, len: usize) -> ProcessedExample {
    let mut e = example.clone();
    let n = e.tokens.len();
    if len > n {
        e.tokens.resize(len, PAD_ID);
        e.positions.extend(n..len);
        e.mask.resize(len, false);
    }
    e
}

#[derive(Clone, Debug)]
pub struct Batch {
    /// Indices into the source slice.
    pub indices: Vec<usize>,
    /// Examples padded to `padded_len`.
    pub examples: Vec<ProcessedExample>,
    pub padded_len: usize,
}

/// Epoch-wise shuffled mini-batches. The generator persists across epochs, so
/// each epoch sees a different order while the whole run stays reproducible.
pub struct BatchIter<'a> {
    source: &'a [ProcessedExample],
    batch_size: usize,
    rng: ChaCha8Rng,
}

impl<'a> BatchIter<'a> {
    pub fn new(source: &'a [ProcessedExample], batch_size: usize, seed: u64) -> Self {
        BatchIter {
            source,
            batch_size: batch_size.max(1),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn epoch(&mut self) -> Vec<Batch> {
        let mut order: Vec<usize> = (0..self.source.len()).collect();
        order.shuffle(&mut self.rng);
        order
            .chunks(self.batch_size)
            .map(|idx| {
                let padded_len = idx
                    .iter()
                    .map(|&i| self.source[i].tokens.len())
                    .max()
                    .unwrap_or(0);
                Batch {
                    indices: idx.to_vec(),
                    examples: idx
                        .iter()
                        .map(|&i| pad_example(&self.source[i], padded_len))
                        .collect(),
                    padded_len,
                }
            })
            .collect()
    }
}
