//! Parameter initialization and delay-line design.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fdn::FdnConfig;
use crate::param::{FeedbackParam, MatrixKind, StageAbsorption};

/// Default number of mixing matrices in the scattering variant.
pub const DEFAULT_SCATTERING_STAGES: usize = 4;
/// Largest internal scattering delay.
pub const MAX_STAGE_DELAY: usize = 50;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitParams {
    pub input_gains: Vec<f64>,
    pub output_gains: Vec<f64>,
    pub feedback: FeedbackParam,
}

/// Seeded initial parameters.
///
/// `b, c ~ N(0, 1/N)`; every raw feedback entry (W, v or each W_k) is drawn
/// from `U(−1/√N, 1/√N)`. The gains are drawn first so different matrix
/// kinds with the same seed share `b` and `c`.
pub fn init_params(n: usize, kind: MatrixKind, seed: u64) -> Result<InitParams> {
    if n == 0 {
        return Err(Error::Config("N must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, (1.0 / n as f64).sqrt()).expect("positive std");
    let input_gains: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
    let output_gains: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
    let bound = 1.0 / (n as f64).sqrt();
    let uniform_matrix =
        |rng: &mut ChaCha8Rng| DMatrix::from_fn(n, n, |_, _| rng.random_range(-bound..bound));
    let feedback = match kind {
        MatrixKind::Orthogonal => FeedbackParam::Orthogonal {
            w: uniform_matrix(&mut rng),
        },
        MatrixKind::Householder => FeedbackParam::Householder {
            v: (0..n).map(|_| rng.random_range(-bound..bound)).collect(),
        },
        MatrixKind::Scattering => {
            let w = (0..DEFAULT_SCATTERING_STAGES)
                .map(|_| uniform_matrix(&mut rng))
                .collect();
            let stage_delays = random_stage_delays(n, DEFAULT_SCATTERING_STAGES, &mut rng);
            FeedbackParam::Scattering {
                w,
                stage_delays,
                absorption: StageAbsorption::default(),
            }
        }
    };
    Ok(InitParams {
        input_gains,
        output_gains,
        feedback,
    })
}

/// `K + 1` stage delay vectors of primes up to [`MAX_STAGE_DELAY`].
fn random_stage_delays(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let primes = primes_between(2, MAX_STAGE_DELAY);
    (0..=k)
        .map(|_| (0..n).map(|_| primes[rng.random_range(0..primes.len())]).collect())
        .collect()
}

/// FDN configuration with the given delays and seeded initial parameters.
/// `d = 0`.
pub fn initial_config(
    delays: &[usize],
    kind: MatrixKind,
    gamma: f64,
    sample_rate: u32,
    seed: u64,
) -> Result<FdnConfig> {
    let p = init_params(delays.len(), kind, seed)?;
    let cfg = FdnConfig {
        delays: delays.to_vec(),
        input_gains: p.input_gains,
        output_gains: p.output_gains,
        direct_gain: 0.0,
        feedback: p.feedback,
        gamma,
        sample_rate,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Primes in `[lo, hi]` (sieve of Eratosthenes).
pub fn primes_between(lo: usize, hi: usize) -> Vec<usize> {
    if hi < 2 {
        return Vec::new();
    }
    let mut composite = vec![false; hi + 1];
    let mut p = 2;
    while p * p <= hi {
        if !composite[p] {
            let mut q = p * p;
            while q <= hi {
                composite[q] = true;
                q += p;
            }
        }
        p += 1;
    }
    (lo.max(2)..=hi).filter(|&k| !composite[k]).collect()
}

/// `N` distinct ascending primes in `[m_low, m_high]`, nearest to the
/// geometric progression from `m_low` to `m_high` (ties go to the smaller
/// prime, already-used primes are skipped). Fails when the sum misses
/// `min_order`.
pub fn design_delays(n: usize, m_low: usize, m_high: usize, min_order: usize) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::Config("N must be at least 1".into()));
    }
    if m_low == 0 || m_low > m_high {
        return Err(Error::Config(format!("invalid delay range {m_low}:{m_high}")));
    }
    let primes = primes_between(m_low, m_high);
    let achievable: usize = primes.iter().rev().take(n).sum();
    if primes.len() < n {
        return Err(Error::Design {
            reason: format!("only {} primes in [{m_low}, {m_high}], need {n}", primes.len()),
            achievable,
        });
    }
    let (lo, hi) = (m_low as f64, m_high as f64);
    let targets: Vec<f64> = if n == 1 {
        vec![(lo * hi).sqrt()]
    } else {
        (0..n)
            .map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64))
            .collect()
    };
    let mut used = vec![false; primes.len()];
    let mut out = Vec::with_capacity(n);
    for t in targets {
        let best = (0..primes.len())
            .filter(|&k| !used[k])
            .min_by(|&a, &b| {
                let da = (primes[a] as f64 - t).abs();
                let db = (primes[b] as f64 - t).abs();
                da.total_cmp(&db).then(primes[a].cmp(&primes[b]))
            })
            .expect("enough primes checked above");
        used[best] = true;
        out.push(primes[best]);
    }
    out.sort_unstable();
    let order: usize = out.iter().sum();
    if order < min_order {
        return Err(Error::Design {
            reason: format!("designed order {order} is below the required {min_order}"),
            achievable,
        });
    }
    Ok(out)
}
