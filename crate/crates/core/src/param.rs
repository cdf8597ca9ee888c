//! Feedback-matrix parameterizations and homogeneous absorption.
//!
//! Raw trainable parameters (a free matrix `W`, a direction `v`, or a stack
//! of free matrices for the scattering filter matrix) are mapped onto
//! lossless feedback operators. Absorption is applied afterwards as
//! `A = U·Γ` with `Γ = diag(γ^m)`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{expm, CMatrix, C64, ONE};

/// Raw feedback parameters. Matrices serialize as row-major nested arrays.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FeedbackParam {
    Orthogonal {
        #[serde(with = "rowmajor")]
        w: DMatrix<f64>,
    },
    Householder {
        v: Vec<f64>,
    },
    /// Paraunitary filter matrix `D_{m_K} U_K ⋯ U_1 D_{m_0}`: `K` mixing
    /// matrices and `K + 1` per-channel delay stages.
    Scattering {
        #[serde(with = "rowmajor_list")]
        w: Vec<DMatrix<f64>>,
        stage_delays: Vec<Vec<usize>>,
        #[serde(default)]
        absorption: StageAbsorption,
    },
}

/// Where the scattering variant applies absorption.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageAbsorption {
    /// `Γ = diag(γ^m)` on the main delays only. Internal stage delays are
    /// lossless, so pole moduli spread slightly around γ.
    #[default]
    MainOnly,
    /// Every stage delay `m_k` is also damped by `γ^{m_k}`, which is the
    /// same as evaluating the lossless loop at `z/γ`: exact homogeneous
    /// decay.
    PerStage,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixKind {
    Orthogonal,
    Householder,
    Scattering,
}

impl std::str::FromStr for MatrixKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "orthogonal" => Ok(Self::Orthogonal),
            "householder" => Ok(Self::Householder),
            "scattering" => Ok(Self::Scattering),
            other => Err(Error::Input(format!("unknown matrix kind '{other}'"))),
        }
    }
}

impl FeedbackParam {
    pub fn kind(&self) -> MatrixKind {
        match self {
            Self::Orthogonal { .. } => MatrixKind::Orthogonal,
            Self::Householder { .. } => MatrixKind::Householder,
            Self::Scattering { .. } => MatrixKind::Scattering,
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        fn finite<'a>(mut it: impl Iterator<Item = &'a f64>) -> bool {
            it.all(|v| v.is_finite())
        }
        match self {
            Self::Orthogonal { w } => {
                if w.nrows() != n || w.ncols() != n {
                    return Err(Error::Config(format!(
                        "feedback matrix is {}x{}, expected {n}x{n}",
                        w.nrows(),
                        w.ncols()
                    )));
                }
                if !finite(w.iter()) {
                    return Err(Error::Input("feedback matrix has non-finite entries".into()));
                }
            }
            Self::Householder { v } => {
                if v.len() != n {
                    return Err(Error::Config(format!(
                        "householder vector has length {}, expected {n}",
                        v.len()
                    )));
                }
                if !finite(v.iter()) {
                    return Err(Error::Input("householder vector has non-finite entries".into()));
                }
            }
            Self::Scattering {
                w, stage_delays, ..
            } => {
                if stage_delays.len() != w.len() + 1 {
                    return Err(Error::Config(format!(
                        "{} mixing matrices need {} delay stages, got {}",
                        w.len(),
                        w.len() + 1,
                        stage_delays.len()
                    )));
                }
                for m in w {
                    if m.nrows() != n || m.ncols() != n {
                        return Err(Error::Config(format!(
                            "mixing matrix is {}x{}, expected {n}x{n}",
                            m.nrows(),
                            m.ncols()
                        )));
                    }
                    if !finite(m.iter()) {
                        return Err(Error::Input("mixing matrix has non-finite entries".into()));
                    }
                }
                if stage_delays.iter().any(|d| d.len() != n) {
                    return Err(Error::Config(format!(
                        "every stage delay vector must have length {n}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// The realized lossless matrices: `[U]` for scalar variants, `[U_1 … U_K]`
    /// for the scattering variant.
    pub fn unitaries(&self) -> Result<Vec<DMatrix<f64>>> {
        match self {
            Self::Orthogonal { w } => Ok(vec![skew_expm(w)?]),
            Self::Householder { v } => Ok(vec![householder_from(v)?]),
            Self::Scattering { w, .. } => w.iter().map(skew_expm).collect(),
        }
    }

    /// Number of raw scalar parameters in the feedback part.
    pub fn raw_len(&self) -> usize {
        match self {
            Self::Orthogonal { w } => w.len(),
            Self::Householder { v } => v.len(),
            Self::Scattering { w, .. } => w.iter().map(|m| m.len()).sum(),
        }
    }

    /// Flattens raw parameters (row-major for matrices) into `out`.
    pub fn write_raw(&self, out: &mut Vec<f64>) {
        let push_matrix = |out: &mut Vec<f64>, m: &DMatrix<f64>| {
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    out.push(m[(i, j)]);
                }
            }
        };
        match self {
            Self::Orthogonal { w } => push_matrix(out, w),
            Self::Householder { v } => out.extend_from_slice(v),
            Self::Scattering { w, .. } => w.iter().for_each(|m| push_matrix(out, m)),
        }
    }

    /// Inverse of [`write_raw`](Self::write_raw); returns the number of
    /// values consumed.
    pub fn read_raw(&mut self, values: &[f64]) -> usize {
        let read_matrix = |m: &mut DMatrix<f64>, values: &[f64]| {
            let c = m.ncols();
            for i in 0..m.nrows() {
                for j in 0..c {
                    m[(i, j)] = values[i * c + j];
                }
            }
            m.len()
        };
        match self {
            Self::Orthogonal { w } => read_matrix(w, values),
            Self::Householder { v } => {
                let n = v.len();
                v.copy_from_slice(&values[..n]);
                n
            }
            Self::Scattering { w, .. } => {
                let mut used = 0;
                for m in w.iter_mut() {
                    used += read_matrix(m, &values[used..]);
                }
                used
            }
        }
    }
}

/// Homogeneous absorption `Γ = diag(γ^{m_i})`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AbsorptionSpec {
    pub gamma: f64,
    pub per_line: Vec<f64>,
}

impl AbsorptionSpec {
    pub fn new(gamma: f64, delays: &[usize]) -> Result<Self> {
        check_gamma(gamma)?;
        Ok(Self {
            gamma,
            per_line: delays.iter().map(|&m| pow_by_squaring(gamma, m)).collect(),
        })
    }
}

pub(crate) fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma <= 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("gamma must lie in (0, 1], got {gamma}")))
    }
}

pub fn pow_by_squaring(mut base: f64, mut exp: usize) -> f64 {
    let mut acc = 1.0;
    while exp > 0 {
        if exp & 1 == 1 {
            acc *= base;
        }
        base *= base;
        exp >>= 1;
    }
    acc
}

/// Skew-symmetric generator `T − Tᵀ` from the strictly upper triangle `T`
/// of `w`. The diagonal of `w` is ignored.
pub fn skew_generator(w: &DMatrix<f64>) -> DMatrix<f64> {
    let n = w.nrows();
    DMatrix::from_fn(n, n, |i, j| {
        if i < j {
            w[(i, j)]
        } else if i > j {
            -w[(j, i)]
        } else {
            0.0
        }
    })
}

/// Orthogonal matrix `exp(T − Tᵀ)`; determinant +1 by construction.
pub fn skew_expm(w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if w.nrows() != w.ncols() {
        return Err(Error::Input("skew_expm needs a square matrix".into()));
    }
    if !w.iter().all(|v| v.is_finite()) {
        return Err(Error::Input("matrix has non-finite entries".into()));
    }
    Ok(expm(&skew_generator(w)))
}

pub const MIN_DIRECTION_NORM: f64 = 1e-12;

/// Normalized Householder direction.
pub fn unit_direction(v: &[f64]) -> Result<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !norm.is_finite() || norm < MIN_DIRECTION_NORM {
        return Err(Error::DegenerateDirection { norm });
    }
    Ok(v.iter().map(|x| x / norm).collect())
}

/// Reflection `I − 2 v̂ v̂ᵀ`.
pub fn householder_from(v: &[f64]) -> Result<DMatrix<f64>> {
    let u = unit_direction(v)?;
    let n = u.len();
    Ok(DMatrix::from_fn(n, n, |i, j| {
        let delta = if i == j { 1.0 } else { 0.0 };
        delta - 2.0 * u[i] * u[j]
    }))
}

/// `diag(z^{-m_i})`, optionally damped per entry.
fn delay_stage(z: C64, delays: &[usize], gains: Option<&[f64]>) -> Vec<C64> {
    let zinv = z.inv();
    delays
        .iter()
        .enumerate()
        .map(|(i, &m)| {
            let g = gains.map_or(1.0, |g| g[i]);
            zinv.powu(m as u32) * g
        })
        .collect()
}

/// Evaluates `D_{m_K} U_K ⋯ U_1 D_{m_0}` right to left.
pub(crate) fn scattering_product(
    mixers: &[DMatrix<f64>],
    stage_delays: &[Vec<usize>],
    stage_gains: Option<&[Vec<f64>]>,
    z: C64,
) -> Result<CMatrix> {
    if z == C64::new(0.0, 0.0) {
        return Err(Error::SingularDelay);
    }
    let n = stage_delays[0].len();
    let mut acc = CMatrix::identity(n);
    let d0 = delay_stage(z, &stage_delays[0], stage_gains.map(|g| g[0].as_slice()));
    acc.scale_rows(&d0);
    for (k, u) in mixers.iter().enumerate() {
        acc = CMatrix::from_real(u).matmul(&acc);
        let dk = delay_stage(
            z,
            &stage_delays[k + 1],
            stage_gains.map(|g| g[k + 1].as_slice()),
        );
        acc.scale_rows(&dk);
    }
    Ok(acc)
}

/// Frequency response `U(z)` of a scattering parameter set (lossless).
pub fn scattering_response(param: &FeedbackParam, z: C64) -> Result<CMatrix> {
    match param {
        FeedbackParam::Scattering {
            w, stage_delays, ..
        } => {
            let mixers = w.iter().map(skew_expm).collect::<Result<Vec<_>>>()?;
            scattering_product(&mixers, stage_delays, None, z)
        }
        _ => Err(Error::Unsupported(
            "scattering_response needs a scattering parameter set".into(),
        )),
    }
}

/// A realized feedback operator `A(z) = U(z)·Γ`.
#[derive(Clone, Debug)]
pub enum FeedbackOperator {
    /// Scalar `A = U Γ` (also used for Householder when a dense matrix is
    /// wanted).
    Matrix {
        unitary: DMatrix<f64>,
        absorption: Vec<f64>,
    },
    Householder {
        direction: Vec<f64>,
        absorption: Vec<f64>,
    },
    Scattering {
        mixers: Vec<DMatrix<f64>>,
        stage_delays: Vec<Vec<usize>>,
        /// Per-stage damping `γ^{m_k}` (all ones for [`StageAbsorption::MainOnly`]).
        stage_gains: Vec<Vec<f64>>,
        absorption: Vec<f64>,
    },
}

impl FeedbackOperator {
    pub fn n(&self) -> usize {
        self.absorption().len()
    }

    pub fn absorption(&self) -> &[f64] {
        match self {
            Self::Matrix { absorption, .. }
            | Self::Householder { absorption, .. }
            | Self::Scattering { absorption, .. } => absorption,
        }
    }

    /// Dense `A = U Γ` for the scalar variants.
    pub fn matrix(&self) -> Option<DMatrix<f64>> {
        match self {
            Self::Matrix {
                unitary,
                absorption,
            } => {
                let mut a = unitary.clone();
                for (j, g) in absorption.iter().enumerate() {
                    a.column_mut(j).scale_mut(*g);
                }
                Some(a)
            }
            Self::Householder {
                direction,
                absorption,
            } => {
                let n = direction.len();
                Some(DMatrix::from_fn(n, n, |i, j| {
                    let delta = if i == j { 1.0 } else { 0.0 };
                    (delta - 2.0 * direction[i] * direction[j]) * absorption[j]
                }))
            }
            Self::Scattering { .. } => None,
        }
    }

    /// Lossless part `U(z)`.
    pub fn unitary_at(&self, z: C64) -> Result<CMatrix> {
        match self {
            Self::Scattering {
                mixers,
                stage_delays,
                stage_gains,
                ..
            } => scattering_product(mixers, stage_delays, Some(stage_gains), z),
            Self::Matrix { unitary, .. } => Ok(CMatrix::from_real(unitary)),
            Self::Householder { direction, .. } => {
                Ok(CMatrix::from_real(&householder_from(direction)?))
            }
        }
    }

    /// `A(z) = U(z) Γ`.
    pub fn at(&self, z: C64) -> Result<CMatrix> {
        let mut u = self.unitary_at(z)?;
        let g: Vec<C64> = self.absorption().iter().map(|&g| C64::new(g, 0.0)).collect();
        u.scale_columns(&g);
        Ok(u)
    }
}

/// Maps raw parameters to the feedback operator `A = U Γ`.
pub fn realize_feedback(
    param: &FeedbackParam,
    gamma: f64,
    delays: &[usize],
) -> Result<FeedbackOperator> {
    param.validate(delays.len())?;
    let absorption = AbsorptionSpec::new(gamma, delays)?.per_line;
    Ok(match param {
        FeedbackParam::Orthogonal { w } => FeedbackOperator::Matrix {
            unitary: skew_expm(w)?,
            absorption,
        },
        FeedbackParam::Householder { v } => FeedbackOperator::Householder {
            direction: unit_direction(v)?,
            absorption,
        },
        FeedbackParam::Scattering {
            w,
            stage_delays,
            absorption: mode,
        } => {
            let stage_gains = stage_delays
                .iter()
                .map(|d| match mode {
                    StageAbsorption::MainOnly => vec![1.0; d.len()],
                    StageAbsorption::PerStage => {
                        d.iter().map(|&m| pow_by_squaring(gamma, m)).collect()
                    }
                })
                .collect();
            FeedbackOperator::Scattering {
                mixers: w.iter().map(skew_expm).collect::<Result<_>>()?,
                stage_delays: stage_delays.clone(),
                stage_gains,
                absorption,
            }
        }
    })
}

/// `γ = 10^{γ_dB/20}` with `γ_dB = −60 / (f_s T60)`. `t60 = +∞` gives 1.
pub fn gamma_from_t60(t60: f64, fs: f64) -> Result<f64> {
    if !(t60 > 0.0) {
        return Err(Error::Domain(t60));
    }
    if !(fs > 0.0) {
        return Err(Error::Input(format!("sample rate must be positive, got {fs}")));
    }
    if t60.is_infinite() {
        return Ok(1.0);
    }
    let gamma_db = -60.0 / (fs * t60);
    Ok(10f64.powf(gamma_db / 20.0))
}

pub fn t60_from_gamma(gamma: f64, fs: f64) -> Result<f64> {
    check_gamma(gamma)?;
    if !(fs > 0.0) {
        return Err(Error::Input(format!("sample rate must be positive, got {fs}")));
    }
    if gamma == 1.0 {
        return Ok(f64::INFINITY);
    }
    let gamma_db = 20.0 * gamma.log10();
    Ok(-60.0 / (fs * gamma_db))
}

/// Lower bound `M ln(10) / (π f_s)` on the training T60; modes must stay
/// narrower than their mean spacing for frequency sampling to resolve them.
pub fn min_training_t60(order: usize, fs: f64) -> f64 {
    order as f64 * std::f64::consts::LN_10 / (std::f64::consts::PI * fs)
}

/// Checks that a realized scattering response is paraunitary at `z`:
/// returns `‖U(1/z̄)ᴴ U(z) − I‖_F`.
pub fn paraunitary_error(op: &FeedbackOperator, z: C64) -> Result<f64> {
    let u = op.unitary_at(z)?;
    let u_rev = op.unitary_at(ONE / z.conj())?;
    Ok(u_rev.conj_transpose().matmul(&u).frobenius_distance_to_identity())
}

mod rowmajor {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        from_rows(rows).map_err(serde::de::Error::custom)
    }

    pub(super) fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
        (0..m.nrows())
            .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
            .collect()
    }

    pub(super) fn from_rows(rows: Vec<Vec<f64>>) -> Result<DMatrix<f64>, String> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err("ragged matrix rows".into());
        }
        Ok(DMatrix::from_row_iterator(r, c, rows.into_iter().flatten()))
    }
}

mod rowmajor_list {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(ms: &[DMatrix<f64>], s: S) -> Result<S::Ok, S::Error> {
        ms.iter()
            .map(super::rowmajor::to_rows)
            .collect::<Vec<_>>()
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<DMatrix<f64>>, D::Error> {
        Vec::<Vec<Vec<f64>>>::deserialize(d)?
            .into_iter()
            .map(|rows| super::rowmajor::from_rows(rows).map_err(serde::de::Error::custom))
            .collect()
    }
}
