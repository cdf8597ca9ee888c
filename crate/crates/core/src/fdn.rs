//! FDN description, transfer-function evaluation and impulse-response
//! rendering.
//!
//! The transfer function is `H(z) = cᵀ [D_m(z)⁻¹ − A(z)]⁻¹ b + d` with
//! `D_m(z)⁻¹ = diag(z^{m_i})`. Evaluation solves the resolvent system per
//! frequency point; the Householder variant uses a rank-one update of a
//! diagonal matrix instead of a dense solve.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{CMatrix, ComplexLu, C64, ZERO};
use crate::par::{self, Execution};
use crate::param::{check_gamma, realize_feedback, FeedbackOperator, FeedbackParam};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FdnConfig {
    /// Delay-line lengths in samples.
    pub delays: Vec<usize>,
    pub input_gains: Vec<f64>,
    pub output_gains: Vec<f64>,
    #[serde(default)]
    pub direct_gain: f64,
    pub feedback: FeedbackParam,
    pub gamma: f64,
    pub sample_rate: u32,
}

impl FdnConfig {
    pub fn n(&self) -> usize {
        self.delays.len()
    }

    /// System order: the sum of the delays.
    pub fn order(&self) -> usize {
        self.delays.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if n == 0 {
            return Err(Error::Config("at least one delay line is required".into()));
        }
        if self.delays.contains(&0) {
            return Err(Error::Config("delays must be positive".into()));
        }
        if self.input_gains.len() != n || self.output_gains.len() != n {
            return Err(Error::Config(format!(
                "gain vectors must have length {n} (got b: {}, c: {})",
                self.input_gains.len(),
                self.output_gains.len()
            )));
        }
        let gains_finite = self
            .input_gains
            .iter()
            .chain(&self.output_gains)
            .chain(std::iter::once(&self.direct_gain))
            .all(|v| v.is_finite());
        if !gains_finite {
            return Err(Error::Input("gains must be finite".into()));
        }
        if self.sample_rate == 0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        check_gamma(self.gamma)?;
        self.feedback.validate(n)
    }

    pub fn operator(&self) -> Result<FeedbackOperator> {
        self.validate()?;
        realize_feedback(&self.feedback, self.gamma, &self.delays)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// A point `z` at which the transfer function is evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FrequencyPoint(pub C64);

impl FrequencyPoint {
    /// `e^{jθ}`.
    pub fn from_angle(theta: f64) -> Self {
        Self(C64::from_polar(1.0, theta))
    }

    pub fn value(self) -> C64 {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransferSample {
    /// `H(z)`, including the direct gain.
    pub total: C64,
    /// `H_i(z) = c_i · [M(z)⁻¹ b]_i`, the i-th delay-line output scaled by `c_i`.
    pub channels: Vec<C64>,
}

/// `P(z) = diag(z^{m}) − A(z)`.
pub(crate) fn resolvent_matrix(op: &FeedbackOperator, delays: &[usize], z: C64) -> Result<CMatrix> {
    let mut p = op.at(z)?;
    let n = delays.len();
    for i in 0..n {
        for j in 0..n {
            p[(i, j)] = -p[(i, j)];
        }
        p[(i, i)] += z.powu(delays[i] as u32);
    }
    Ok(p)
}

/// Factorized resolvent at one point, or a singularity error.
pub(crate) fn factor_resolvent(op: &FeedbackOperator, delays: &[usize], z: C64) -> Result<ComplexLu> {
    if z == ZERO {
        return Err(Error::SingularDelay);
    }
    let lu = ComplexLu::new(&resolvent_matrix(op, delays, z)?);
    if lu.is_singular() {
        return Err(Error::Singular { point: z });
    }
    Ok(lu)
}

/// Sherman–Morrison solver for `M = V + 2 u wᵀ` with diagonal
/// `V = diag(z^{m} − γ^{m})`, unit direction `u` and `w = Γ u`.
pub(crate) struct HouseholderSolver {
    v_inv: Vec<C64>,
    u: Vec<f64>,
    w: Vec<f64>,
    denom: C64,
}

impl HouseholderSolver {
    /// `None` when `V` or the rank-one denominator is (near) singular.
    pub(crate) fn new(direction: &[f64], absorption: &[f64], delays: &[usize], z: C64) -> Option<Self> {
        let n = delays.len();
        let mut v_inv = Vec::with_capacity(n);
        for i in 0..n {
            let d = z.powu(delays[i] as u32) - absorption[i];
            if d.norm() < 1e-13 * (1.0 + absorption[i]) {
                return None;
            }
            v_inv.push(d.inv());
        }
        let w: Vec<f64> = direction.iter().zip(absorption).map(|(u, g)| u * g).collect();
        let wvu: C64 = (0..n).map(|i| v_inv[i] * (w[i] * direction[i])).sum();
        let denom = 1.0 + 2.0 * wvu;
        if denom.norm() < 1e-13 {
            return None;
        }
        Some(Self {
            v_inv,
            u: direction.to_vec(),
            w,
            denom,
        })
    }

    /// `M⁻¹ b`.
    pub(crate) fn solve(&self, b: &[C64]) -> Vec<C64> {
        rank_one_solve(&self.v_inv, &self.u, &self.w, self.denom, b)
    }

    /// `M⁻ᵀ b`; `Mᵀ = V + 2 w uᵀ`.
    pub(crate) fn solve_transpose(&self, b: &[C64]) -> Vec<C64> {
        rank_one_solve(&self.v_inv, &self.w, &self.u, self.denom, b)
    }
}

/// `(V + 2 p qᵀ)⁻¹ b = V⁻¹b − 2 V⁻¹p (qᵀV⁻¹b) / (1 + 2 qᵀV⁻¹p)`.
fn rank_one_solve(v_inv: &[C64], p: &[f64], q: &[f64], denom: C64, b: &[C64]) -> Vec<C64> {
    let vb: Vec<C64> = v_inv.iter().zip(b).map(|(vi, bi)| vi * bi).collect();
    let qvb: C64 = q.iter().zip(&vb).map(|(qi, x)| x * *qi).sum();
    let coef = 2.0 * qvb / denom;
    vb.iter()
        .zip(v_inv.iter().zip(p))
        .map(|(x, (vi, pi))| x - coef * vi * *pi)
        .collect()
}

fn sample_from_state(config: &FdnConfig, x: &[C64]) -> TransferSample {
    let channels: Vec<C64> = x
        .iter()
        .zip(&config.output_gains)
        .map(|(xi, ci)| xi * *ci)
        .collect();
    let total = channels.iter().sum::<C64>() + config.direct_gain;
    TransferSample { total, channels }
}

fn real_vec(v: &[f64]) -> Vec<C64> {
    v.iter().map(|&x| C64::new(x, 0.0)).collect()
}

fn eval_point_generic(op: &FeedbackOperator, config: &FdnConfig, b: &[C64], z: C64) -> Result<TransferSample> {
    let lu = factor_resolvent(op, &config.delays, z)?;
    Ok(sample_from_state(config, &lu.solve(b)))
}

pub(crate) fn eval_point(op: &FeedbackOperator, config: &FdnConfig, b: &[C64], z: C64) -> Result<TransferSample> {
    if z == ZERO {
        return Err(Error::SingularDelay);
    }
    if let FeedbackOperator::Householder {
        direction,
        absorption,
    } = op
    {
        if let Some(s) = HouseholderSolver::new(direction, absorption, &config.delays, z) {
            return Ok(sample_from_state(config, &s.solve(b)));
        }
    }
    eval_point_generic(op, config, b, z)
}

/// Transfer function and per-channel decomposition at every point.
///
/// Householder feedback takes the O(N) rank-one path; everything else
/// solves the dense resolvent.
pub fn eval_transfer(config: &FdnConfig, points: &[FrequencyPoint]) -> Result<Vec<TransferSample>> {
    eval_transfer_with(config, points, Execution::default())
}

pub fn eval_transfer_with(
    config: &FdnConfig,
    points: &[FrequencyPoint],
    exec: Execution,
) -> Result<Vec<TransferSample>> {
    let op = config.operator()?;
    let b = real_vec(&config.input_gains);
    par::try_map(exec, points, |p| eval_point(&op, config, &b, p.0))
}

/// Dense-resolvent evaluation for every variant (no Householder shortcut).
pub fn eval_transfer_generic(config: &FdnConfig, points: &[FrequencyPoint]) -> Result<Vec<TransferSample>> {
    let op = config.operator()?;
    let b = real_vec(&config.input_gains);
    par::try_map(Execution::default(), points, |p| {
        eval_point_generic(&op, config, &b, p.0)
    })
}

/// Householder-only evaluation through the Sherman–Morrison identity.
pub fn eval_transfer_householder(
    config: &FdnConfig,
    points: &[FrequencyPoint],
) -> Result<Vec<TransferSample>> {
    if !matches!(config.feedback, FeedbackParam::Householder { .. }) {
        return Err(Error::Config(
            "eval_transfer_householder needs householder feedback".into(),
        ));
    }
    eval_transfer(config, points)
}

/// Ring-buffer delay line. A zero-length line passes its input through.
#[derive(Clone, Debug)]
pub(crate) struct DelayLine {
    buf: Vec<f64>,
    pos: usize,
}

impl DelayLine {
    pub(crate) fn new(len: usize) -> Self {
        Self {
            buf: vec![0.0; len],
            pos: 0,
        }
    }

    /// Value written `len` samples ago.
    #[inline]
    pub(crate) fn front(&self) -> f64 {
        self.buf[self.pos]
    }

    #[inline]
    pub(crate) fn push(&mut self, x: f64) {
        self.buf[self.pos] = x;
        self.pos += 1;
        if self.pos == self.buf.len() {
            self.pos = 0;
        }
    }

    /// Writes `x` and returns the sample delayed by the line length.
    #[inline]
    pub(crate) fn tick(&mut self, x: f64) -> f64 {
        if self.buf.is_empty() {
            return x;
        }
        let y = self.buf[self.pos];
        self.push(x);
        y
    }
}

/// Mixing stage of the time-domain loop: maps damped delay-line outputs to
/// delay-line inputs.
pub(crate) struct LoopMixer {
    kind: MixerKind,
    scratch: Vec<f64>,
}

enum MixerKind {
    Dense(Vec<f64>),
    Householder(Vec<f64>),
    Scattering {
        mixers: Vec<Vec<f64>>,
        stages: Vec<Vec<DelayLine>>,
        stage_gains: Vec<Vec<f64>>,
    },
}

fn row_major(m: &nalgebra::DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    (0..n * n).map(|k| m[(k / n, k % n)]).collect()
}

impl LoopMixer {
    /// Builds the lossless `U` part; absorption is applied by the caller.
    pub(crate) fn new(op: &FeedbackOperator) -> Result<Self> {
        let n = op.n();
        let kind = match op {
            FeedbackOperator::Matrix { unitary, .. } => MixerKind::Dense(row_major(unitary)),
            FeedbackOperator::Householder { direction, .. } => {
                MixerKind::Householder(direction.clone())
            }
            FeedbackOperator::Scattering {
                mixers,
                stage_delays,
                stage_gains,
                ..
            } => MixerKind::Scattering {
                mixers: mixers.iter().map(row_major).collect(),
                stages: stage_delays
                    .iter()
                    .map(|d| d.iter().map(|&m| DelayLine::new(m)).collect())
                    .collect(),
                stage_gains: stage_gains.clone(),
            },
        };
        Ok(Self {
            kind,
            scratch: vec![0.0; n],
        })
    }

    /// In-place `x ← U(z) x` for one time step.
    pub(crate) fn apply(&mut self, x: &mut [f64]) {
        let n = x.len();
        match &mut self.kind {
            MixerKind::Dense(u) => {
                mat_vec(u, x, &mut self.scratch);
                x.copy_from_slice(&self.scratch);
            }
            MixerKind::Householder(dir) => {
                let dot: f64 = dir.iter().zip(x.iter()).map(|(a, b)| a * b).sum();
                for (xi, di) in x.iter_mut().zip(dir.iter()) {
                    *xi -= 2.0 * di * dot;
                }
            }
            MixerKind::Scattering {
                mixers,
                stages,
                stage_gains,
            } => {
                for i in 0..n {
                    x[i] = stages[0][i].tick(x[i]) * stage_gains[0][i];
                }
                for (k, u) in mixers.iter().enumerate() {
                    mat_vec(u, x, &mut self.scratch);
                    for i in 0..n {
                        x[i] = stages[k + 1][i].tick(self.scratch[i]) * stage_gains[k + 1][i];
                    }
                }
            }
        }
    }
}

#[inline]
fn mat_vec(u: &[f64], x: &[f64], out: &mut [f64]) {
    let n = x.len();
    for i in 0..n {
        let row = &u[i * n..(i + 1) * n];
        out[i] = row.iter().zip(x).map(|(a, b)| a * b).sum();
    }
}

/// Runs the recursion on a unit impulse. `attenuate(i, s)` filters the
/// output of line `i` inside the loop, after the scalar absorption.
pub(crate) fn render_loop<F>(
    config: &FdnConfig,
    op: &FeedbackOperator,
    length: usize,
    mut attenuate: F,
) -> Result<Vec<f64>>
where
    F: FnMut(usize, f64) -> f64,
{
    if length == 0 {
        return Err(Error::Input("impulse response length must be at least 1".into()));
    }
    let n = config.n();
    let absorption = op.absorption().to_vec();
    let mut mixer = LoopMixer::new(op)?;
    let mut lines: Vec<DelayLine> = config.delays.iter().map(|&m| DelayLine::new(m)).collect();
    let mut fb = vec![0.0; n];
    let mut out = Vec::with_capacity(length);
    for t in 0..length {
        let x = if t == 0 { 1.0 } else { 0.0 };
        let mut y = config.direct_gain * x;
        for i in 0..n {
            let s = lines[i].front();
            y += config.output_gains[i] * s;
            fb[i] = attenuate(i, s * absorption[i]);
        }
        mixer.apply(&mut fb);
        for i in 0..n {
            lines[i].push(fb[i] + config.input_gains[i] * x);
        }
        out.push(y);
    }
    Ok(out)
}

/// Impulse response of the FDN: `h(0) = d`, then the feedback recursion.
pub fn render_ir(config: &FdnConfig, length: usize) -> Result<Vec<f64>> {
    let op = config.operator()?;
    render_loop(config, &op, length, |_, s| s)
}
