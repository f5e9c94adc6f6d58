use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DataError, Dataset};
use crate::nn::Batch;

/// One epoch of minibatches over a dataset.
#[derive(Debug, Clone)]
pub struct BatchIter<'a> {
    dataset: &'a Dataset,
    order: Vec<usize>,
    batch_size: usize,
    drop_last: bool,
    pos: usize,
}

impl BatchIter<'_> {
    /// Number of batches this epoch yields in total.
    pub fn num_batches(&self) -> usize {
        let n = self.order.len();
        if self.drop_last {
            n / self.batch_size
        } else {
            n.div_ceil(self.batch_size)
        }
    }

    /// Index lists of every remaining batch.
    pub fn remaining_indices(&self) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        let mut pos = self.pos;
        while let Some(chunk) = self.chunk_at(pos) {
            out.push(chunk.to_vec());
            pos += chunk.len();
        }
        out
    }

    fn chunk_at(&self, pos: usize) -> Option<&[usize]> {
        let n = self.order.len();
        if pos >= n {
            return None;
        }
        let end = (pos + self.batch_size).min(n);
        if self.drop_last && end - pos < self.batch_size {
            return None;
        }
        Some(&self.order[pos..end])
    }
}

impl Iterator for BatchIter<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        let chunk = self.chunk_at(self.pos)?;
        let batch = self.dataset.batch(chunk).expect("indices come from the dataset");
        self.pos += chunk.len();
        Some(batch)
    }
}

/// Partitions a (optionally shuffled) permutation of the dataset into
/// batches of `batch_size`. The permutation depends only on `seed`.
pub fn batch_iterator(
    dataset: &Dataset,
    batch_size: usize,
    seed: u64,
    shuffle: bool,
    drop_last: bool,
) -> Result<BatchIter<'_>, DataError> {
    let n = dataset.len();
    if batch_size < 1 || (drop_last && batch_size > n) {
        return Err(DataError::BadBatchSize { batch: batch_size, n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    Ok(BatchIter {
        dataset,
        order,
        batch_size,
        drop_last,
        pos: 0,
    })
}
