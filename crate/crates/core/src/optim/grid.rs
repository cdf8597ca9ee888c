//! Frequency-sampled training data.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fdn::FrequencyPoint;

/// `z_k = e^{jπk/M}` for `k = 0 … M−1`.
pub fn frequency_grid(m: usize) -> Result<Vec<FrequencyPoint>> {
    if m < 2 {
        return Err(Error::Config(format!("grid needs at least 2 points, got {m}")));
    }
    let step = std::f64::consts::PI / m as f64;
    Ok((0..m)
        .map(|k| FrequencyPoint::from_angle(step * k as f64))
        .collect())
}

/// Deterministic stratified train/validation split of grid indices.
///
/// Index `k` goes to validation whenever `⌊(k+1)(1−f)⌋ > ⌊k(1−f)⌋`, so for
/// `f = 0.8` every fifth point (4, 9, 14, …) is held out.
#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

pub fn split_indices(m: usize, train_fraction: f64) -> Result<Split> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let hold = 1.0 - train_fraction;
    let mut train = Vec::new();
    let mut validation = Vec::new();
    for k in 0..m {
        let lo = (k as f64 * hold + 1e-9).floor();
        let hi = ((k + 1) as f64 * hold + 1e-9).floor();
        if hi > lo {
            validation.push(k);
        } else {
            train.push(k);
        }
    }
    if train.is_empty() || validation.is_empty() {
        return Err(Error::Config(format!(
            "grid of {m} points is too small for a {train_fraction} split"
        )));
    }
    Ok(Split { train, validation })
}

/// Seeded per-epoch shuffling of a fixed index set into batches.
#[derive(Clone, Debug)]
pub struct BatchSampler {
    indices: Vec<usize>,
    batch_size: usize,
    seed: u64,
}

impl BatchSampler {
    pub fn new(indices: Vec<usize>, batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        Ok(Self {
            indices,
            batch_size,
            seed,
        })
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.indices.len().div_ceil(self.batch_size)
    }

    /// Batches of epoch `epoch`; the last one may be short.
    pub fn epoch(&self, epoch: usize) -> Vec<Vec<usize>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(epoch as u64);
        let mut order = self.indices.clone();
        order.shuffle(&mut rng);
        order.chunks(self.batch_size).map(<[usize]>::to_vec).collect()
    }
}

/// `batch_sampler(grid, μ, seed)`: batches of grid points for one epoch.
pub fn batch_sampler(
    grid: &[FrequencyPoint],
    batch_size: usize,
    seed: u64,
    epoch: usize,
) -> Result<Vec<Vec<FrequencyPoint>>> {
    let sampler = BatchSampler::new((0..grid.len()).collect(), batch_size, seed)?;
    Ok(sampler
        .epoch(epoch)
        .into_iter()
        .map(|b| b.into_iter().map(|k| grid[k]).collect())
        .collect())
}
