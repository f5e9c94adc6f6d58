//! Datasets: deterministic synthetic blobs, the CIFAR-10 binary format, and
//! minibatch iteration.

mod batch;
mod cifar;
mod synth;

use thiserror::Error;

use crate::nn::{Batch, NnError, Targets};
use crate::tensor::{Tensor, TensorError};

pub use batch::{batch_iterator, BatchIter};
pub use cifar::{
    load_cifar10_dataset, parse_cifar10_bin, write_cifar10_bin, Cifar10Reader, Cifar10Record, CIFAR10_CLASSES,
    CIFAR10_PIXELS, CIFAR10_RECORD_LEN,
};
pub use synth::synth_blobs;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("truncated CIFAR-10 record: input ends at byte offset {offset}, record starting at {record_start} needs {record_len} bytes")]
    Truncated {
        offset: usize,
        record_start: usize,
        record_len: usize,
    },
    #[error("corrupt CIFAR-10 record at byte offset {offset}: label {label} > 9")]
    CorruptLabel { offset: usize, label: u8 },
    #[error("invalid dataset parameters: {0}")]
    InvalidParams(String),
    #[error("batch size {batch} is invalid for {n} examples")]
    BadBatchSize { batch: usize, n: usize },
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Labelled examples, `inputs` is `[N, d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
    pub class_count: usize,
}

impl Dataset {
    pub fn new(inputs: Tensor, labels: Vec<usize>, class_count: usize) -> Result<Self, DataError> {
        if inputs.shape().len() != 2 || inputs.shape()[0] != labels.len() {
            return Err(DataError::InvalidParams(format!(
                "inputs {:?} do not match {} labels",
                inputs.shape(),
                labels.len()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= class_count) {
            return Err(DataError::InvalidParams(format!(
                "label {l} out of range for {class_count} classes"
            )));
        }
        Ok(Self {
            inputs,
            labels,
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.shape()[1]
    }

    /// Gathers the given example indices, in order, into a batch.
    pub fn batch(&self, indices: &[usize]) -> Result<Batch, DataError> {
        let d = self.dim();
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            data.extend_from_slice(self.inputs.row(i));
        }
        let inputs = Tensor::new(vec![indices.len(), d], data)?;
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Ok(Batch::new(inputs, Targets::Labels(labels))?)
    }

    pub fn full_batch(&self) -> Result<Batch, DataError> {
        self.batch(&(0..self.len()).collect::<Vec<_>>())
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Dataset, DataError> {
        let b = self.batch(indices)?;
        let Targets::Labels(labels) = b.targets else {
            unreachable!()
        };
        Dataset::new(b.inputs, labels, self.class_count)
    }

    /// Deterministic shuffled split; the first part holds `1 - eval_fraction`
    /// of the examples.
    pub fn split(&self, eval_fraction: f64, seed: u64) -> Result<(Dataset, Dataset), DataError> {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        if !(0.0..1.0).contains(&eval_fraction) {
            return Err(DataError::InvalidParams(format!(
                "eval fraction {eval_fraction} must lie in [0, 1)"
            )));
        }
        let n = self.len();
        let n_eval = (n as f64 * eval_fraction).round() as usize;
        if n_eval == 0 || n_eval >= n {
            return Err(DataError::InvalidParams(format!(
                "eval fraction {eval_fraction} leaves an empty split of {n} examples"
            )));
        }
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let (eval_idx, train_idx) = idx.split_at(n_eval);
        let mut train_idx = train_idx.to_vec();
        let mut eval_idx = eval_idx.to_vec();
        train_idx.sort_unstable();
        eval_idx.sort_unstable();
        Ok((self.subset(&train_idx)?, self.subset(&eval_idx)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_disjoint_and_deterministic() {
        let ds = synth_blobs(50, 2, 3, 1.0, 3).unwrap();
        let (a, b) = ds.split(0.2, 9).unwrap();
        assert_eq!((a.len(), b.len()), (80, 20));
        let (a2, b2) = ds.split(0.2, 9).unwrap();
        assert_eq!((a, b), (a2, b2));
        assert!(ds.split(0.0, 1).is_err());
    }

    #[test]
    fn dataset_rejects_bad_labels() {
        let x = Tensor::zeros(&[2, 1]);
        assert!(Dataset::new(x.clone(), vec![0, 2], 2).is_err());
        assert!(Dataset::new(x, vec![0], 2).is_err());
    }
}
