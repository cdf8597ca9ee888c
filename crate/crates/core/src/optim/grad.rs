//! Analytic gradients of the training loss.
//!
//! With `M(z) = diag(z^m) − A(z)`, `x = M⁻¹b`, `H_i = c_i x_i` and the
//! per-point loss `ℓ`, let `w_i = conj(∂ℓ/∂H_i) + conj(∂ℓ/∂H)` and
//! `y = M⁻ᵀ(w ∘ c)`. Then
//!
//! * `∂ℓ/∂b = Re y`
//! * `∂ℓ/∂c = Re(w ∘ x)`
//! * `∂ℓ/∂A = Re(y xᵀ)`
//!
//! and the matrix gradient is chained through `A = UΓ` and the
//! parameterization of `U`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::fdn::{factor_resolvent, FdnConfig, FrequencyPoint, HouseholderSolver};
use crate::linalg::{expm_pullback, C64, ZERO};
use crate::optim::loss::{
    magnitude_error_gradient, mean_sparsity, sparsity_gradient, total_loss, LossBreakdown,
};
use crate::par::{chunked_vec_sum, Execution};
use crate::param::{skew_generator, unit_direction, FeedbackOperator, FeedbackParam};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossOptions {
    /// Sparsity weight α.
    pub alpha: f64,
    /// Include the per-channel term of the spectral loss.
    pub channel_term: bool,
}

impl Default for LossOptions {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            channel_term: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub loss: LossBreakdown,
    /// Same layout as [`pack_params`].
    pub params: Vec<f64>,
}

/// Flat trainable vector: raw feedback parameters, then `b`, then `c`.
pub fn pack_params(cfg: &FdnConfig) -> Vec<f64> {
    let mut out = Vec::with_capacity(cfg.feedback.raw_len() + 2 * cfg.n());
    cfg.feedback.write_raw(&mut out);
    out.extend_from_slice(&cfg.input_gains);
    out.extend_from_slice(&cfg.output_gains);
    out
}

/// Writes a vector produced by [`pack_params`] back into `cfg`.
pub fn unpack_params(cfg: &mut FdnConfig, values: &[f64]) {
    let n = cfg.n();
    let used = cfg.feedback.read_raw(values);
    cfg.input_gains.copy_from_slice(&values[used..used + n]);
    cfg.output_gains.copy_from_slice(&values[used + n..used + 2 * n]);
}

/// Realized lossless matrices used by the sparsity term.
fn sparsity_inputs(param: &FeedbackParam) -> Result<Vec<DMatrix<f64>>> {
    param.unitaries()
}

/// Width of the matrix-gradient block in the accumulator.
fn matrix_block(op: &FeedbackOperator) -> usize {
    let n = op.n();
    match op {
        FeedbackOperator::Scattering { mixers, .. } => mixers.len() * n * n,
        _ => n * n,
    }
}

/// `diag` of one damped scattering delay stage at `z`.
fn stage_diag(z: C64, delays: &[usize], gains: &[f64]) -> Vec<C64> {
    let zinv = z.inv();
    delays
        .iter()
        .zip(gains)
        .map(|(&m, &g)| zinv.powu(m as u32) * g)
        .collect()
}

fn real_mat_vec(u: &DMatrix<f64>, x: &[C64], transpose: bool) -> Vec<C64> {
    let n = x.len();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let a = if transpose { u[(j, i)] } else { u[(i, j)] };
                    x[j] * a
                })
                .sum()
        })
        .collect()
}

/// Adds one point's loss and raw gradient contributions into `acc`:
/// `[ℓ, ∂ℓ/∂A-block…, ∂ℓ/∂b…, ∂ℓ/∂c…]`.
fn accumulate_point(
    cfg: &FdnConfig,
    op: &FeedbackOperator,
    b: &[C64],
    channel_term: bool,
    z: C64,
    acc: &mut [f64],
) -> Result<()> {
    let n = cfg.n();
    let hh = match op {
        FeedbackOperator::Householder {
            direction,
            absorption,
        } => HouseholderSolver::new(direction, absorption, &cfg.delays, z),
        _ => None,
    };
    let lu = if hh.is_none() {
        Some(factor_resolvent(op, &cfg.delays, z)?)
    } else {
        None
    };
    let x = match (&hh, &lu) {
        (Some(s), _) => s.solve(b),
        (_, Some(lu)) => lu.solve(b),
        _ => unreachable!(),
    };

    let channels: Vec<C64> = x.iter().zip(&cfg.output_gains).map(|(x, c)| x * *c).collect();
    let total = channels.iter().sum::<C64>() + cfg.direct_gain;
    let g_total = magnitude_error_gradient(total).conj();
    let mut loss = (total.norm() - 1.0).powi(2);
    let mut w = vec![g_total; n];
    if channel_term {
        let inv_n = 1.0 / n as f64;
        for (wi, h) in w.iter_mut().zip(&channels) {
            *wi += magnitude_error_gradient(*h).conj() * inv_n;
            loss += (h.norm() - 1.0).powi(2) * inv_n;
        }
    }
    let q: Vec<C64> = w.iter().zip(&cfg.output_gains).map(|(w, c)| w * *c).collect();
    let y = match (&hh, &lu) {
        (Some(s), _) => s.solve_transpose(&q),
        (_, Some(lu)) => lu.solve_transpose(&q),
        _ => unreachable!(),
    };

    acc[0] += loss;
    let block = matrix_block(op);
    let (mat, rest) = acc[1..].split_at_mut(block);
    let (gb, gc) = rest.split_at_mut(n);
    for k in 0..n {
        gb[k] += y[k].re;
        gc[k] += (w[k] * x[k]).re;
    }

    let absorption = op.absorption();
    match op {
        FeedbackOperator::Matrix { .. } | FeedbackOperator::Householder { .. } => {
            for k in 0..n {
                for l in 0..n {
                    mat[k * n + l] += (y[k] * x[l]).re * absorption[l];
                }
            }
        }
        FeedbackOperator::Scattering {
            mixers,
            stage_delays,
            stage_gains,
            ..
        } => {
            // Forward pass: inputs to each mixer.
            let kk = mixers.len();
            let mut t: Vec<C64> = x.iter().zip(absorption).map(|(x, g)| x * *g).collect();
            let d0 = stage_diag(z, &stage_delays[0], &stage_gains[0]);
            t.iter_mut().zip(&d0).for_each(|(v, d)| *v *= d);
            let mut inputs = Vec::with_capacity(kk);
            for (k, u) in mixers.iter().enumerate() {
                inputs.push(t.clone());
                let dk = stage_diag(z, &stage_delays[k + 1], &stage_gains[k + 1]);
                t = real_mat_vec(u, &t, false);
                t.iter_mut().zip(&dk).for_each(|(v, d)| *v *= d);
            }
            // Backward pass: a = (D_K U_K ⋯ D_k)ᵀ y.
            let mut a = y.clone();
            for k in (0..kk).rev() {
                let dk = stage_diag(z, &stage_delays[k + 1], &stage_gains[k + 1]);
                a.iter_mut().zip(&dk).for_each(|(v, d)| *v *= d);
                let off = k * n * n;
                for i in 0..n {
                    for j in 0..n {
                        mat[off + i * n + j] += (a[i] * inputs[k][j]).re;
                    }
                }
                a = real_mat_vec(&mixers[k], &a, true);
            }
        }
    }
    Ok(())
}

/// Chains `∂L/∂U` blocks to raw feedback parameters.
fn chain_feedback(param: &FeedbackParam, us: &[DMatrix<f64>], mut g: Vec<DMatrix<f64>>, alpha: f64) -> Result<Vec<f64>> {
    let k = us.len() as f64;
    if alpha != 0.0 {
        for (gi, u) in g.iter_mut().zip(us) {
            *gi += sparsity_gradient(u) * (alpha / k);
        }
    }
    let mut out = Vec::with_capacity(param.raw_len());
    let skew_chain = |w: &DMatrix<f64>, gu: &DMatrix<f64>, out: &mut Vec<f64>| {
        let s = skew_generator(w);
        let gs = expm_pullback(&s, gu);
        let n = w.nrows();
        for i in 0..n {
            for j in 0..n {
                out.push(if i < j { gs[(i, j)] - gs[(j, i)] } else { 0.0 });
            }
        }
    };
    match param {
        FeedbackParam::Orthogonal { w } => skew_chain(w, &g[0], &mut out),
        FeedbackParam::Scattering { w, .. } => {
            for (wk, gk) in w.iter().zip(&g) {
                skew_chain(wk, gk, &mut out);
            }
        }
        FeedbackParam::Householder { v } => {
            let u = unit_direction(v)?;
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            let n = u.len();
            let gs = &g[0] + g[0].transpose();
            // ∂/∂û = −2 (G + Gᵀ) û, then project onto the tangent of the sphere.
            let gu: Vec<f64> = (0..n)
                .map(|i| -2.0 * (0..n).map(|j| gs[(i, j)] * u[j]).sum::<f64>())
                .collect();
            let dot: f64 = gu.iter().zip(&u).map(|(a, b)| a * b).sum();
            out.extend(gu.iter().zip(&u).map(|(g, u)| (g - dot * u) / norm));
        }
    }
    Ok(out)
}

fn reduce_points(
    cfg: &FdnConfig,
    op: &FeedbackOperator,
    points: &[FrequencyPoint],
    opts: LossOptions,
    exec: Execution,
) -> Result<Vec<f64>> {
    let n = cfg.n();
    let width = 1 + matrix_block(op) + 2 * n;
    let b: Vec<C64> = cfg.input_gains.iter().map(|&v| C64::new(v, 0.0)).collect();
    chunked_vec_sum(exec, points, width, |p, acc| {
        if p.0 == ZERO {
            return Err(Error::SingularDelay);
        }
        accumulate_point(cfg, op, &b, opts.channel_term, p.0, acc)
    })
}

/// Loss over a batch together with its gradient with respect to
/// [`pack_params`].
pub fn loss_gradients(cfg: &FdnConfig, points: &[FrequencyPoint], opts: LossOptions) -> Result<Gradients> {
    loss_gradients_with(cfg, points, opts, Execution::default())
}

pub fn loss_gradients_with(
    cfg: &FdnConfig,
    points: &[FrequencyPoint],
    opts: LossOptions,
    exec: Execution,
) -> Result<Gradients> {
    let op = cfg.operator()?;
    let n = cfg.n();
    let us = sparsity_inputs(&cfg.feedback)?;
    let sparsity = mean_sparsity(&us);
    if points.is_empty() {
        let params = chain_feedback(
            &cfg.feedback,
            &us,
            us.iter().map(|u| DMatrix::zeros(u.nrows(), u.ncols())).collect(),
            opts.alpha,
        )?
        .into_iter()
        .chain(std::iter::repeat_n(0.0, 2 * n))
        .collect();
        return Ok(Gradients {
            loss: total_loss(0.0, sparsity, opts.alpha),
            params,
        });
    }
    let mut acc = reduce_points(cfg, &op, points, opts, exec)?;
    let scale = 1.0 / points.len() as f64;
    acc.iter_mut().for_each(|v| *v *= scale);

    let block = matrix_block(&op);
    let blocks: Vec<DMatrix<f64>> = acc[1..1 + block]
        .chunks(n * n)
        .map(|c| DMatrix::from_row_slice(n, n, c))
        .collect();
    let mut params = chain_feedback(&cfg.feedback, &us, blocks, opts.alpha)?;
    params.extend_from_slice(&acc[1 + block..]);
    Ok(Gradients {
        loss: total_loss(acc[0], sparsity, opts.alpha),
        params,
    })
}

/// Loss only (no gradient), reusing the gradient kernel's reduction order.
pub fn evaluate_loss(
    cfg: &FdnConfig,
    points: &[FrequencyPoint],
    opts: LossOptions,
    exec: Execution,
) -> Result<LossBreakdown> {
    let b: Vec<C64> = cfg.input_gains.iter().map(|&v| C64::new(v, 0.0)).collect();
    let op = cfg.operator()?;
    let sparsity = mean_sparsity(&sparsity_inputs(&cfg.feedback)?);
    if points.is_empty() {
        return Ok(total_loss(0.0, sparsity, opts.alpha));
    }
    let sum = chunked_vec_sum(exec, points, 1, |p, acc| {
        let s = crate::fdn::eval_point(&op, cfg, &b, p.0)?;
        acc[0] += crate::optim::loss::point_loss(&s, opts.channel_term);
        Ok::<(), Error>(())
    })?;
    Ok(total_loss(sum[0] / points.len() as f64, sparsity, opts.alpha))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fdn::eval_transfer;
    use crate::optim::loss::spectral_loss_with;
    use crate::param::StageAbsorption;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn config(n: usize, seed: u64, kind: &str) -> FdnConfig {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let delays: Vec<usize> = (0..n).map(|_| rng.random_range(5..60)).collect();
        let mut mat = || DMatrix::from_fn(n, n, |_, _| rng.random_range(-0.5..0.5));
        let feedback = match kind {
            "orthogonal" => FeedbackParam::Orthogonal { w: mat() },
            "householder" => FeedbackParam::Householder {
                v: (0..n).map(|i| 0.3 + 0.1 * i as f64 * if i % 2 == 0 { 1.0 } else { -1.5 }).collect(),
            },
            _ => FeedbackParam::Scattering {
                w: vec![mat(), mat()],
                stage_delays: vec![vec![1; n], (0..n).map(|i| i % 3).collect(), vec![2; n]],
                absorption: StageAbsorption::PerStage,
            },
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
        FdnConfig {
            delays,
            input_gains: (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
            output_gains: (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
            direct_gain: 0.0,
            feedback,
            gamma: 0.995,
            sample_rate: 48000,
        }
    }

    fn points(count: usize, seed: u64) -> Vec<FrequencyPoint> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| FrequencyPoint::from_angle(rng.random_range(0.0..std::f64::consts::PI)))
            .collect()
    }

    fn finite_difference(cfg: &FdnConfig, pts: &[FrequencyPoint], opts: LossOptions) -> Vec<f64> {
        let theta = pack_params(cfg);
        let h = 1e-6;
        (0..theta.len())
            .map(|i| {
                let eval = |delta: f64| {
                    let mut c = cfg.clone();
                    let mut t = theta.clone();
                    t[i] += delta;
                    unpack_params(&mut c, &t);
                    evaluate_loss(&c, pts, opts, Execution::Sequential).unwrap().total
                };
                (eval(h) - eval(-h)) / (2.0 * h)
            })
            .collect()
    }

    fn check(kind: &str) {
        for seed in 0..3 {
            let cfg = config(4, seed, kind);
            let pts = points(16, seed);
            let opts = LossOptions::default();
            let g = loss_gradients(&cfg, &pts, opts).unwrap();
            let fd = finite_difference(&cfg, &pts, opts);
            for (i, (a, f)) in g.params.iter().zip(&fd).enumerate() {
                let err = if f.abs() < 1e-6 { (a - f).abs() } else { (a - f).abs() / f.abs() };
                assert!(err < 1e-5, "{kind} seed {seed} coord {i}: {a} vs {f}");
            }
        }
    }

    #[test]
    fn orthogonal_gradient_matches_differences() {
        check("orthogonal");
    }

    #[test]
    fn householder_gradient_matches_differences() {
        check("householder");
    }

    #[test]
    fn scattering_gradient_matches_differences() {
        check("scattering");
    }

    #[test]
    fn loss_value_matches_transfer_evaluation() {
        let cfg = config(5, 9, "orthogonal");
        let pts = points(40, 2);
        let samples = eval_transfer(&cfg, &pts).unwrap();
        let g = loss_gradients(&cfg, &pts, LossOptions { alpha: 0.0, channel_term: true }).unwrap();
        assert!((g.loss.spectral - spectral_loss_with(&samples, true)).abs() < 1e-12);
        assert_eq!(g.loss.total, g.loss.spectral);
    }

    #[test]
    fn feedback_free_gain_gradient_closed_form() {
        // γ^m below 1e-30 makes the loop negligible: H = Σ c_i b_i z^{-m_i}.
        let mut cfg = config(3, 4, "orthogonal");
        cfg.delays = vec![30, 40, 50];
        cfg.gamma = 0.08;
        let pts = points(8, 5);
        let opts = LossOptions { alpha: 0.0, channel_term: false };
        let g = loss_gradients(&cfg, &pts, opts).unwrap();
        let (b, c) = (&cfg.input_gains, &cfg.output_gains);
        let mut gb = [0.0; 3];
        let mut gc = [0.0; 3];
        for p in &pts {
            let e: Vec<C64> = cfg.delays.iter().map(|&m| p.0.powi(-(m as i32))).collect();
            let h: C64 = (0..3).map(|i| e[i] * (b[i] * c[i])).sum();
            // d(|H|−1)²/dθ = 2(|H|−1) Re(conj(H) dH/dθ) / |H|.
            let k = 2.0 * (h.norm() - 1.0) / h.norm();
            for i in 0..3 {
                gb[i] += k * (h.conj() * e[i] * c[i]).re / pts.len() as f64;
                gc[i] += k * (h.conj() * e[i] * b[i]).re / pts.len() as f64;
            }
        }
        let off = cfg.feedback.raw_len();
        for i in 0..3 {
            assert!((g.params[off + i] - gb[i]).abs() < 1e-12);
            assert!((g.params[off + 3 + i] - gc[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn pack_unpack_round_trip() {
        let cfg = config(4, 1, "scattering");
        let mut other = config(4, 2, "scattering");
        unpack_params(&mut other, &pack_params(&cfg));
        assert_eq!(pack_params(&other), pack_params(&cfg));
    }

    #[test]
    fn reduction_is_mode_independent() {
        let cfg = config(4, 3, "orthogonal");
        let pts = points(300, 1);
        let a = loss_gradients_with(&cfg, &pts, LossOptions::default(), Execution::Sequential).unwrap();
        let b = loss_gradients_with(&cfg, &pts, LossOptions::default(), Execution::Parallel).unwrap();
        assert_eq!(a, b);
    }
}
