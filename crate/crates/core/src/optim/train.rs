//! Training loop.

use std::time::Instant;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fdn::{FdnConfig, FrequencyPoint};
use crate::linalg::orthogonality_error;
use crate::optim::adam::{Adam, AdamConfig};
use crate::optim::grad::{evaluate_loss, loss_gradients_with, pack_params, unpack_params, LossOptions};
use crate::optim::grid::{frequency_grid, split_indices, BatchSampler};
use crate::optim::loss::LossBreakdown;
use crate::par::Execution;
use crate::param::{min_training_t60, t60_from_gamma};

fn default_grid() -> usize {
    48_000
}
fn default_batch() -> usize {
    2000
}
fn default_fraction() -> f64 {
    0.8
}
fn default_epochs() -> usize {
    20
}
fn default_lr() -> f64 {
    1e-3
}
fn default_alpha() -> f64 {
    1.0
}
fn default_gamma() -> f64 {
    0.9999
}
fn default_true() -> bool {
    true
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}
fn default_divergence() -> f64 {
    10.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Number of grid points `M`.
    #[serde(default = "default_grid")]
    pub grid_size: usize,
    /// Batch size `μ`.
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_fraction")]
    pub train_fraction: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Training absorption; overrides `fdn.gamma`.
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_true")]
    pub channel_term: bool,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    /// Abort once the training loss exceeds this multiple of its initial value.
    #[serde(default = "default_divergence")]
    pub divergence_factor: f64,
    pub fdn: FdnConfig,
}

impl TrainConfig {
    /// Desk-scale defaults around an initial FDN.
    pub fn new(fdn: FdnConfig) -> Self {
        Self {
            grid_size: default_grid(),
            batch_size: default_batch(),
            train_fraction: default_fraction(),
            epochs: default_epochs(),
            learning_rate: default_lr(),
            alpha: default_alpha(),
            gamma: default_gamma(),
            seed: 0,
            channel_term: true,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
            divergence_factor: default_divergence(),
            fdn,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_size < 2 {
            return Err(Error::Config("grid size must be at least 2".into()));
        }
        if self.batch_size == 0 || self.batch_size >= self.grid_size {
            return Err(Error::Config(format!(
                "batch size must lie in [1, {}), got {}",
                self.grid_size, self.batch_size
            )));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config("train fraction must lie in (0, 1)".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if !(self.alpha >= 0.0) {
            return Err(Error::Config("alpha must be non-negative".into()));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config(format!(
                "training gamma must lie in (0, 1), got {}",
                self.gamma
            )));
        }
        self.fdn.validate()
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    fn loss_options(&self) -> LossOptions {
        LossOptions {
            alpha: self.alpha,
            channel_term: self.channel_term,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean of the per-batch losses seen while stepping.
    pub batch_mean: f64,
    /// Full training split, after the epoch.
    pub train: LossBreakdown,
    pub validation: LossBreakdown,
    /// Largest `‖UUᵀ − I‖_F` over the realized matrices.
    pub orthogonality_error: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub seed: u64,
    pub initial_train: LossBreakdown,
    pub initial_validation: LossBreakdown,
    pub epochs: Vec<EpochRecord>,
    pub steps: u64,
    /// Trained FDN at the training γ.
    pub final_config: FdnConfig,
}

impl TrainReport {
    pub fn final_train(&self) -> LossBreakdown {
        self.epochs.last().map_or(self.initial_train, |e| e.train)
    }

    pub fn final_validation(&self) -> LossBreakdown {
        self.epochs
            .last()
            .map_or(self.initial_validation, |e| e.validation)
    }

    /// Loss curves as CSV.
    pub fn loss_csv(&self) -> String {
        let mut s = String::from(
            "epoch,batch_mean,train_spectral,train_sparsity,train_total,val_spectral,val_sparsity,val_total,orthogonality_error,seconds\n",
        );
        let row = |s: &mut String, e: usize, bm: f64, t: &LossBreakdown, v: &LossBreakdown, o: f64, sec: f64| {
            s.push_str(&format!(
                "{e},{bm},{},{},{},{},{},{},{o:e},{sec}\n",
                t.spectral, t.sparsity, t.total, v.spectral, v.sparsity, v.total
            ));
        };
        row(&mut s, 0, self.initial_train.total, &self.initial_train, &self.initial_validation, 0.0, 0.0);
        for e in &self.epochs {
            row(&mut s, e.epoch, e.batch_mean, &e.train, &e.validation, e.orthogonality_error, e.seconds);
        }
        s
    }
}

fn max_orthogonality_error(cfg: &FdnConfig) -> Result<f64> {
    Ok(cfg
        .feedback
        .unitaries()?
        .iter()
        .map(orthogonality_error)
        .fold(0.0, f64::max))
}

fn check_finite(loss: &LossBreakdown, epoch: usize) -> Result<()> {
    if loss.total.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence {
            epoch,
            reason: format!("non-finite loss {}", loss.total),
        })
    }
}

pub fn train(config: &TrainConfig) -> Result<TrainReport> {
    train_with(config, Execution::default())
}

/// Adam on batches of the training split; full-split train and validation
/// losses are recorded after every epoch.
pub fn train_with(config: &TrainConfig, exec: Execution) -> Result<TrainReport> {
    config.validate()?;
    let mut fdn = config.fdn.clone();
    fdn.gamma = config.gamma;
    fdn.direct_gain = 0.0;

    let fs = f64::from(fdn.sample_rate);
    let t60 = t60_from_gamma(config.gamma, fs)?;
    let bound = min_training_t60(fdn.order(), fs);
    if t60 < 2.0 * bound {
        warn!("training T60 {t60:.3} s is close to the frequency-sampling bound {bound:.3} s");
    }
    if t60 > 10.0 {
        warn!("training T60 {t60:.1} s is above 10 s; convergence may suffer");
    }

    let grid = frequency_grid(config.grid_size)?;
    let split = split_indices(config.grid_size, config.train_fraction)?;
    let pick = |idx: &[usize]| -> Vec<FrequencyPoint> { idx.iter().map(|&k| grid[k]).collect() };
    let train_points = pick(&split.train);
    let val_points = pick(&split.validation);
    let sampler = BatchSampler::new(split.train.clone(), config.batch_size, config.seed)?;
    let opts = config.loss_options();

    let initial_train = evaluate_loss(&fdn, &train_points, opts, exec)?;
    let initial_validation = evaluate_loss(&fdn, &val_points, opts, exec)?;
    check_finite(&initial_train, 0)?;
    info!(
        "initial loss: train {:.6}, validation {:.6}",
        initial_train.total, initial_validation.total
    );

    let mut theta = pack_params(&fdn);
    let mut adam = Adam::new(theta.len(), config.adam());
    let mut epochs = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let start = Instant::now();
        let mut batch_losses = Vec::new();
        for batch in sampler.epoch(epoch - 1) {
            let points = pick(&batch);
            let g = loss_gradients_with(&fdn, &points, opts, exec)?;
            check_finite(&g.loss, epoch)?;
            batch_losses.push(g.loss.total);
            adam.step(&mut theta, &g.params);
            unpack_params(&mut fdn, &theta);
        }
        let train = evaluate_loss(&fdn, &train_points, opts, exec)?;
        let validation = evaluate_loss(&fdn, &val_points, opts, exec)?;
        check_finite(&train, epoch)?;
        if train.total > config.divergence_factor * initial_train.total {
            return Err(Error::Divergence {
                epoch,
                reason: format!(
                    "training loss {:.4} exceeds {}x the initial {:.4}",
                    train.total, config.divergence_factor, initial_train.total
                ),
            });
        }
        let record = EpochRecord {
            epoch,
            batch_mean: batch_losses.iter().sum::<f64>() / batch_losses.len().max(1) as f64,
            train,
            validation,
            orthogonality_error: max_orthogonality_error(&fdn)?,
            seconds: start.elapsed().as_secs_f64(),
        };
        info!(
            "epoch {epoch}: train {:.6}, validation {:.6}",
            record.train.total, record.validation.total
        );
        epochs.push(record);
    }
    Ok(TrainReport {
        seed: config.seed,
        initial_train,
        initial_validation,
        epochs,
        steps: adam.steps(),
        final_config: fdn,
    })
}
