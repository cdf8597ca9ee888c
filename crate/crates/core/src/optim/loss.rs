//! Spectral flatness and matrix-density losses.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::fdn::TransferSample;
use crate::linalg::C64;
use crate::par::pairwise_sum;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub spectral: f64,
    pub sparsity: f64,
    pub alpha: f64,
    pub total: f64,
}

pub fn total_loss(spectral: f64, sparsity: f64, alpha: f64) -> LossBreakdown {
    LossBreakdown {
        spectral,
        sparsity,
        alpha,
        total: spectral + alpha * sparsity,
    }
}

/// Per-point spectral term `(1/N)Σ(|H_i|−1)² + (|H|−1)²`; the channel part
/// is dropped when `channels` is false.
pub fn point_loss(sample: &TransferSample, channels: bool) -> f64 {
    let total = (sample.total.norm() - 1.0).powi(2);
    if !channels || sample.channels.is_empty() {
        return total;
    }
    let n = sample.channels.len() as f64;
    let ch: f64 = sample
        .channels
        .iter()
        .map(|h| (h.norm() - 1.0).powi(2))
        .sum();
    ch / n + total
}

/// Batch mean of [`point_loss`] with the channel term enabled.
pub fn spectral_loss(samples: &[TransferSample]) -> f64 {
    spectral_loss_with(samples, true)
}

pub fn spectral_loss_with(samples: &[TransferSample], channels: bool) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let per_point: Vec<f64> = samples.iter().map(|s| point_loss(s, channels)).collect();
    pairwise_sum(&per_point) / samples.len() as f64
}

/// `(N√N − Σ|U_ij|) / (N(√N − 1))`. Defined as 0 for `N = 1`.
pub fn sparsity_loss(u: &DMatrix<f64>) -> f64 {
    let n = u.nrows() as f64;
    if u.nrows() <= 1 {
        return 0.0;
    }
    let sum_abs: f64 = u.iter().map(|x| x.abs()).sum();
    (n * n.sqrt() - sum_abs) / (n * (n.sqrt() - 1.0))
}

/// Mean sparsity over a stack of matrices.
pub fn mean_sparsity(us: &[DMatrix<f64>]) -> f64 {
    if us.is_empty() {
        return 0.0;
    }
    us.iter().map(sparsity_loss).sum::<f64>() / us.len() as f64
}

/// `∂ sparsity_loss / ∂U`, with the subgradient of `|x|` at 0 taken as 0.
pub fn sparsity_gradient(u: &DMatrix<f64>) -> DMatrix<f64> {
    let n = u.nrows() as f64;
    if u.nrows() <= 1 {
        return DMatrix::zeros(u.nrows(), u.ncols());
    }
    let scale = -1.0 / (n * (n.sqrt() - 1.0));
    u.map(|x| if x == 0.0 { 0.0 } else { scale * x.signum() })
}

/// `∂ℓ/∂Re w + j ∂ℓ/∂Im w` for `ℓ = (|w| − 1)²`.
#[inline]
pub(crate) fn magnitude_error_gradient(w: C64) -> C64 {
    let r = w.norm();
    if r == 0.0 {
        C64::new(0.0, 0.0)
    } else {
        w * (2.0 * (r - 1.0) / r)
    }
}
