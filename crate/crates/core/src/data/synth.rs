use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{DataError, Dataset};
use crate::tensor::Tensor;

/// Gaussian blobs around the scaled simplex vertices `e_c / sqrt(2)`, so
/// class means sit at unit pairwise distance. Points get isotropic noise of
/// standard deviation `spread`, then every dimension is standardized to zero
/// mean and unit variance (constant dimensions are only centred).
///
/// Examples are stored class by class. Requires `2 <= classes <= dim`.
pub fn synth_blobs(n_per_class: usize, classes: usize, dim: usize, spread: f64, seed: u64) -> Result<Dataset, DataError> {
    if classes < 2 {
        return Err(DataError::InvalidParams(format!("need at least 2 classes, got {classes}")));
    }
    if dim < 1 {
        return Err(DataError::InvalidParams("dim must be at least 1".into()));
    }
    if classes > dim {
        return Err(DataError::InvalidParams(format!(
            "{classes} simplex vertices need dim >= {classes}, got {dim}"
        )));
    }
    if n_per_class == 0 {
        return Err(DataError::InvalidParams("n_per_class must be positive".into()));
    }
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(DataError::InvalidParams(format!("spread must be nonnegative, got {spread}")));
    }

    let vertex = std::f64::consts::FRAC_1_SQRT_2;
    let n = n_per_class * classes;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for c in 0..classes {
        for _ in 0..n_per_class {
            for j in 0..dim {
                let mean = if j == c { vertex } else { 0.0 };
                let noise: f64 = StandardNormal.sample(&mut rng);
                data.push(mean + spread * noise);
            }
            labels.push(c);
        }
    }
    standardize(&mut data, n, dim);
    Dataset::new(Tensor::new(vec![n, dim], data)?, labels, classes)
}

fn standardize(data: &mut [f64], n: usize, dim: usize) {
    for j in 0..dim {
        let mean = (0..n).map(|i| data[i * dim + j]).sum::<f64>() / n as f64;
        let var = (0..n).map(|i| (data[i * dim + j] - mean).powi(2)).sum::<f64>() / n as f64;
        let std = var.sqrt();
        for i in 0..n {
            let v = &mut data[i * dim + j];
            *v -= mean;
            if std > 0.0 {
                *v /= std;
            }
        }
    }
}
