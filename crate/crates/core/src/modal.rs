//! Poles and residues of scalar-feedback FDNs.
//!
//! Poles are the roots of the generalized characteristic polynomial
//! `p(z) = det(diag(z^m) − A)`, found with a simultaneous Ehrlich–Aberth
//! iteration that only ever evaluates `p′/p = tr(P⁻¹P′)`. Residues come
//! from the left and right null vectors of `P(λ)`.

use nalgebra::{DMatrix, Schur};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fdn::FdnConfig;
use crate::linalg::{CMatrix, ComplexLu, C64, ZERO};
use crate::par::{self, Execution};

/// `P(z) = diag(z^m) − A`.
fn polynomial_matrix(a: &DMatrix<f64>, delays: &[usize], z: C64) -> CMatrix {
    let n = delays.len();
    let mut p = CMatrix::zeros(n);
    for i in 0..n {
        for j in 0..n {
            p[(i, j)] = C64::new(-a[(i, j)], 0.0);
        }
        p[(i, i)] += z.powu(delays[i] as u32);
    }
    p
}

/// `P′(z) = diag(m_i z^{m_i − 1})`.
fn derivative_diag(delays: &[usize], z: C64) -> Vec<C64> {
    delays
        .iter()
        .map(|&m| {
            if m == 0 {
                ZERO
            } else {
                z.powu(m as u32 - 1) * m as f64
            }
        })
        .collect()
}

/// Determinant of `p` with row and column `skip` removed.
fn principal_minor(p: &CMatrix, skip: usize) -> C64 {
    let n = p.dim();
    if n == 1 {
        return C64::new(1.0, 0.0);
    }
    let mut sub = CMatrix::zeros(n - 1);
    let idx: Vec<usize> = (0..n).filter(|&k| k != skip).collect();
    for (r, &i) in idx.iter().enumerate() {
        for (c, &j) in idx.iter().enumerate() {
            sub[(r, c)] = p[(i, j)];
        }
    }
    ComplexLu::new(&sub).det()
}

/// `(p(z), p′(z))` of the generalized characteristic polynomial.
///
/// `p′` uses Jacobi's formula `p·tr(P⁻¹P′)`; when `P(z)` is numerically
/// singular it falls back to the cofactor sum `Σ m_i z^{m_i−1} C_ii`.
pub fn gcp_eval(a: &DMatrix<f64>, delays: &[usize], z: C64) -> Result<(C64, C64)> {
    if z == ZERO {
        return Err(Error::SingularDelay);
    }
    let p = polynomial_matrix(a, delays, z);
    let lu = ComplexLu::new(&p);
    let det = lu.det();
    let dp = derivative_diag(delays, z);
    let deriv = if lu.is_singular() {
        (0..delays.len()).map(|i| dp[i] * principal_minor(&p, i)).sum()
    } else {
        det * trace_inv_times_diag(&lu, &dp)
    };
    Ok((det, deriv))
}

/// `tr(P⁻¹ D)` for diagonal `D`.
fn trace_inv_times_diag(lu: &ComplexLu, d: &[C64]) -> C64 {
    let n = d.len();
    let mut e = vec![ZERO; n];
    let mut acc = ZERO;
    for i in 0..n {
        e[i] = C64::new(1.0, 0.0);
        acc += lu.solve(&e)[i] * d[i];
        e[i] = ZERO;
    }
    acc
}

/// Logarithmic derivative `p′/p = tr(P⁻¹P′)` at `z`, `None` when `P(z)`
/// is numerically singular.
///
/// Outside the unit circle the factorization `P = D(I − D⁻¹A)` with
/// `D = diag(z^m)` keeps every quantity bounded, so the evaluation never
/// overflows for large `|z|`.
fn log_derivative(a: &DMatrix<f64>, delays: &[usize], z: C64) -> Option<C64> {
    let n = delays.len();
    let t = if z.norm() > 1.0 {
        let zinv = z.inv();
        let mut q = CMatrix::zeros(n);
        for i in 0..n {
            let d = zinv.powu(delays[i] as u32);
            for j in 0..n {
                q[(i, j)] = d * -a[(i, j)];
            }
            q[(i, i)] += 1.0;
        }
        let lu = ComplexLu::new(&q);
        if lu.is_singular() {
            return None;
        }
        let m: Vec<C64> = delays.iter().map(|&m| C64::new(m as f64, 0.0)).collect();
        trace_inv_times_diag(&lu, &m) * zinv
    } else {
        let lu = ComplexLu::new(&polynomial_matrix(a, delays, z));
        if lu.is_singular() {
            return None;
        }
        trace_inv_times_diag(&lu, &derivative_diag(delays, z))
    };
    Some(t)
}

/// Newton correction `p/p′`: `Some(0)` on an exact root, `None` when the
/// evaluation is not finite.
fn newton_correction(a: &DMatrix<f64>, delays: &[usize], z: C64) -> Option<C64> {
    if !(z.re.is_finite() && z.im.is_finite()) {
        return None;
    }
    match log_derivative(a, delays, z) {
        None => Some(ZERO),
        Some(t) => {
            let r = t.inv();
            (r.re.is_finite() && r.im.is_finite()).then_some(r)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AberthOptions {
    pub max_sweeps: usize,
    /// A root is frozen once its correction falls below `tolerance · γ`.
    pub tolerance: f64,
    /// Required `|p/p′|` at every returned root.
    pub residual: f64,
}

impl Default for AberthOptions {
    fn default() -> Self {
        Self {
            max_sweeps: 1000,
            tolerance: 1e-12,
            residual: 1e-10,
        }
    }
}

/// All `Σ m_i` roots of `p`, starting near the circle of radius `gamma_hint`.
pub fn solve_poles(a: &DMatrix<f64>, delays: &[usize], gamma_hint: f64) -> Result<Vec<C64>> {
    solve_poles_with(a, delays, gamma_hint, AberthOptions::default(), Execution::default())
}

/// Start radii relative to the hint. Starting exactly on the pole circle
/// lets early corrections throw iterates towards 0 or infinity.
const START_RADII: [f64; 3] = [1.001, 0.999, 1.01];

pub fn solve_poles_with(
    a: &DMatrix<f64>,
    delays: &[usize],
    gamma_hint: f64,
    opts: AberthOptions,
    exec: Execution,
) -> Result<Vec<C64>> {
    let n = delays.len();
    if n == 0 || a.nrows() != n || a.ncols() != n {
        return Err(Error::Config("matrix and delay dimensions disagree".into()));
    }
    if delays.contains(&0) {
        return Err(Error::Config("delays must be positive".into()));
    }
    if !(gamma_hint > 0.0) {
        return Err(Error::Config("radius hint must be positive".into()));
    }
    let mut last = None;
    for f in START_RADII {
        match aberth(a, delays, gamma_hint, gamma_hint * f, opts, exec) {
            Ok(roots) => return Ok(roots),
            Err(e) => {
                log::debug!("aberth from radius {}: {e}", gamma_hint * f);
                last = Some(e);
            }
        }
    }
    Err(last.expect("at least one start radius"))
}

fn aberth(
    a: &DMatrix<f64>,
    delays: &[usize],
    gamma_hint: f64,
    radius: f64,
    opts: AberthOptions,
    exec: Execution,
) -> Result<Vec<C64>> {
    let order: usize = delays.iter().sum();
    let two_pi = 2.0 * std::f64::consts::PI;
    // Quarter-step offset avoids starting on the real axis.
    let mut roots: Vec<C64> = (0..order)
        .map(|k| C64::from_polar(radius, two_pi * (k as f64 + 0.25) / order as f64))
        .collect();
    let mut active: Vec<usize> = (0..order).collect();
    let tol = opts.tolerance * gamma_hint;
    let mut last_max = f64::INFINITY;
    let mut sweeps = 0;
    while !active.is_empty() && sweeps < opts.max_sweeps {
        sweeps += 1;
        let current = &roots;
        let updates: Vec<Option<C64>> = par::map(exec, &active, |&k| {
            let zk = current[k];
            let nk = newton_correction(a, delays, zk)?;
            if nk == ZERO {
                return Some(ZERO);
            }
            let mut s = ZERO;
            for (j, zj) in current.iter().enumerate() {
                if j != k {
                    s += (zk - zj).inv();
                }
            }
            let w = nk / (1.0 - nk * s);
            Some(if w.re.is_finite() && w.im.is_finite() { w } else { nk })
        });
        last_max = 0.0;
        let mut still = Vec::with_capacity(active.len());
        for (&k, w) in active.iter().zip(&updates) {
            match w {
                Some(w) => {
                    roots[k] -= w;
                    let size = w.norm();
                    last_max = last_max.max(size);
                    if size >= tol {
                        still.push(k);
                    }
                }
                None => {
                    last_max = f64::INFINITY;
                    still.push(k);
                }
            }
        }
        active = still;
        if last_max == f64::INFINITY {
            break;
        }
    }
    if !active.is_empty() {
        return Err(Error::NoConvergence {
            sweeps,
            unconverged: active.len(),
            max_correction: last_max,
        });
    }
    let residuals = par::map(exec, &roots, |&z| {
        newton_correction(a, delays, z).map_or(f64::INFINITY, |c| c.norm())
    });
    let bad = residuals.iter().filter(|&&r| r >= opts.residual).count();
    if bad > 0 {
        return Err(Error::NoConvergence {
            sweeps,
            unconverged: bad,
            max_correction: residuals.iter().cloned().fold(0.0, f64::max),
        });
    }
    log::debug!("aberth: {order} roots in {sweeps} sweeps");
    Ok(roots)
}

/// Eigenvalues of the `M×M` shift-register state matrix (small `M` only).
pub fn dense_poles(a: &DMatrix<f64>, delays: &[usize]) -> Result<Vec<C64>> {
    let n = delays.len();
    if a.nrows() != n || a.ncols() != n || delays.contains(&0) {
        return Err(Error::Config("matrix and delay dimensions disagree".into()));
    }
    let order: usize = delays.iter().sum();
    // Line i occupies [start_i, start_i + m_i); slot start_i is the newest
    // sample and start_i + m_i − 1 the line output.
    let starts: Vec<usize> = delays
        .iter()
        .scan(0, |acc, &m| {
            let s = *acc;
            *acc += m;
            Some(s)
        })
        .collect();
    let mut t = DMatrix::<f64>::zeros(order, order);
    for i in 0..n {
        for j in 0..n {
            t[(starts[i], starts[j] + delays[j] - 1)] = a[(i, j)];
        }
        for k in 1..delays[i] {
            t[(starts[i] + k, starts[i] + k - 1)] = 1.0;
        }
    }
    // With every eigenvalue near one circle the QR iteration can stall;
    // a real shift separates the moduli and is undone afterwards.
    for shift in [0.0, 0.25, 0.5, -0.375] {
        let shifted = &t + DMatrix::<f64>::identity(order, order) * shift;
        if let Some(schur) = Schur::try_new(shifted, f64::EPSILON, 100 * order.max(10)) {
            return Ok(schur.complex_eigenvalues().iter().map(|z| z - shift).collect());
        }
    }
    Err(Error::NoConvergence {
        sweeps: 100 * order.max(10),
        unconverged: order,
        max_correction: f64::NAN,
    })
}

/// Greedy nearest-neighbour matching; returns the largest matched distance.
/// Errors if the sets differ in size or a point would be matched twice.
pub fn match_poles(a: &[C64], b: &[C64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Input(format!(
            "pole counts differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let mut taken = vec![false; b.len()];
    let mut worst: f64 = 0.0;
    for x in a {
        let (best, dist) = b
            .iter()
            .enumerate()
            .filter(|(j, _)| !taken[*j])
            .map(|(j, y)| (j, (x - y).norm()))
            .min_by(|p, q| p.1.total_cmp(&q.1))
            .expect("equal sizes");
        taken[best] = true;
        worst = worst.max(dist);
    }
    Ok(worst)
}

/// Pairwise separation check after sorting by real part.
pub fn check_simple(poles: &[C64], separation: f64) -> Result<()> {
    let mut idx: Vec<usize> = (0..poles.len()).collect();
    idx.sort_by(|&i, &j| poles[i].re.total_cmp(&poles[j].re));
    for a in 0..idx.len() {
        for b in a + 1..idx.len() {
            let (i, j) = (idx[a], idx[b]);
            if poles[j].re - poles[i].re > separation {
                break;
            }
            if (poles[i] - poles[j]).norm() <= separation {
                return Err(Error::Multiplicity {
                    first: i.min(j),
                    second: i.max(j),
                    separation,
                });
            }
        }
    }
    Ok(())
}

pub const POLE_SEPARATION: f64 = 1e-9;

/// Null vector of `P` (or `Pᵀ`) by inverse iteration.
fn null_vector(lu: &ComplexLu, transpose: bool, n: usize) -> Vec<C64> {
    let mut v: Vec<C64> = (0..n)
        .map(|i| C64::new(1.0, 0.37 * (i as f64 + 1.0)))
        .collect();
    for _ in 0..3 {
        let mut next = if transpose {
            lu.solve_transpose(&v)
        } else {
            lu.solve(&v)
        };
        let norm = next.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            break;
        }
        next.iter_mut().for_each(|x| *x /= norm);
        v = next;
    }
    v
}

/// Residue of the mode at pole `lambda`:
/// `ρ = (cᵀr)(lᵀb) / (λ · lᵀP′(λ)r)`.
fn residue_at(a: &DMatrix<f64>, delays: &[usize], b: &[f64], c: &[f64], lambda: C64) -> C64 {
    let n = delays.len();
    let mut lu = ComplexLu::new(&polynomial_matrix(a, delays, lambda));
    lu.regularize();
    let r = null_vector(&lu, false, n);
    let l = null_vector(&lu, true, n);
    let dp = derivative_diag(delays, lambda);
    let cr: C64 = (0..n).map(|i| r[i] * c[i]).sum();
    let lb: C64 = (0..n).map(|i| l[i] * b[i]).sum();
    let lpr: C64 = (0..n).map(|i| l[i] * dp[i] * r[i]).sum();
    cr * lb / (lambda * lpr)
}

/// Residues for each pole; poles must be simple.
pub fn residues(config: &FdnConfig, poles: &[C64]) -> Result<Vec<C64>> {
    let a = scalar_matrix(config)?;
    residues_for(&a, &config.delays, &config.input_gains, &config.output_gains, poles)
}

pub fn residues_for(
    a: &DMatrix<f64>,
    delays: &[usize],
    b: &[f64],
    c: &[f64],
    poles: &[C64],
) -> Result<Vec<C64>> {
    check_simple(poles, POLE_SEPARATION)?;
    if b.iter().all(|&x| x == 0.0) || c.iter().all(|&x| x == 0.0) {
        return Ok(vec![ZERO; poles.len()]);
    }
    Ok(par::map(Execution::default(), poles, |&p| {
        residue_at(a, delays, b, c, p)
    }))
}

fn scalar_matrix(config: &FdnConfig) -> Result<DMatrix<f64>> {
    config.operator()?.matrix().ok_or_else(|| {
        Error::Unsupported("modal analysis needs a scalar feedback matrix".into())
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModalDecomposition {
    pub poles: Vec<C64>,
    pub residues: Vec<C64>,
    /// Number of coincident roots merged into each mode (1 for simple poles).
    #[serde(default)]
    pub multiplicities: Vec<usize>,
    pub order: usize,
    pub direct_term: f64,
    /// Constant of the partial-fraction expansion, `−Σρ_i`; `h(0)` from the
    /// mode sum differs from the true `h(0) = d` by exactly this amount.
    pub pf_constant: C64,
}

impl ModalDecomposition {
    /// `Σ ρ_i λ_i^n` for `n = 0 … len−1`.
    pub fn reconstruct(&self, len: usize) -> Vec<f64> {
        let mut out = vec![0.0; len];
        for (rho, lambda) in self.residues.iter().zip(&self.poles) {
            let mut w = *rho;
            for v in out.iter_mut() {
                *v += w.re;
                w *= lambda;
            }
        }
        out
    }

    /// `re,im,abs,arg,residue_db,residue_arg,multiplicity` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("pole_re,pole_im,pole_abs,pole_arg,residue_db,residue_arg,multiplicity\n");
        for (k, (p, r)) in self.poles.iter().zip(&self.residues).enumerate() {
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                p.re,
                p.im,
                p.norm(),
                p.arg(),
                20.0 * r.norm().log10(),
                r.arg(),
                self.multiplicities.get(k).copied().unwrap_or(1)
            ));
        }
        s
    }
}

/// Full pole/residue decomposition of a scalar-feedback FDN.
pub fn modal_decomposition(config: &FdnConfig) -> Result<ModalDecomposition> {
    modal_decomposition_with(config, AberthOptions::default(), Execution::default())
}

pub fn modal_decomposition_with(
    config: &FdnConfig,
    opts: AberthOptions,
    exec: Execution,
) -> Result<ModalDecomposition> {
    let a = scalar_matrix(config)?;
    let roots = solve_poles_with(&a, &config.delays, config.gamma, opts, exec)?;
    let clusters = cluster_poles(&roots, POLE_CLUSTER);
    let (b, c) = (&config.input_gains, &config.output_gains);
    let silent = b.iter().all(|&x| x == 0.0) || c.iter().all(|&x| x == 0.0);
    let modes = par::try_map(exec, &clusters, |members| -> Result<(C64, C64)> {
        if members.len() == 1 {
            let p = roots[members[0]];
            let r = if silent { ZERO } else { residue_at(&a, &config.delays, b, c, p) };
            return Ok((p, r));
        }
        let center = members.iter().map(|&k| roots[k]).sum::<C64>() / members.len() as f64;
        let r = if silent {
            ZERO
        } else {
            contour_residue(&a, &config.delays, b, c, &roots, members, center)?
        };
        Ok((center, r))
    })?;
    let poles: Vec<C64> = modes.iter().map(|m| m.0).collect();
    let residues: Vec<C64> = modes.iter().map(|m| m.1).collect();
    let pf_constant = -residues.iter().sum::<C64>();
    Ok(ModalDecomposition {
        order: roots.len(),
        multiplicities: clusters.iter().map(Vec::len).collect(),
        poles,
        residues,
        direct_term: config.direct_gain,
        pf_constant,
    })
}

/// Roots closer than this are treated as one repeated (semisimple) mode.
/// Householder feedback with homogeneous decay always has such a root at
/// `z = γ`, of multiplicity `N − 1`.
pub const POLE_CLUSTER: f64 = 1e-7;

const CONTOUR_POINTS: usize = 64;

/// Groups roots within `radius` of each other (transitively). Groups are
/// returned in order of their first member.
fn cluster_poles(poles: &[C64], radius: f64) -> Vec<Vec<usize>> {
    let mut parent: Vec<usize> = (0..poles.len()).collect();
    fn root(parent: &mut [usize], mut k: usize) -> usize {
        while parent[k] != k {
            parent[k] = parent[parent[k]];
            k = parent[k];
        }
        k
    }
    let mut idx: Vec<usize> = (0..poles.len()).collect();
    idx.sort_by(|&i, &j| poles[i].re.total_cmp(&poles[j].re));
    for a in 0..idx.len() {
        for b in a + 1..idx.len() {
            let (i, j) = (idx[a], idx[b]);
            if poles[j].re - poles[i].re > radius {
                break;
            }
            if (poles[i] - poles[j]).norm() <= radius {
                let (ri, rj) = (root(&mut parent, i), root(&mut parent, j));
                parent[ri.max(rj)] = ri.min(rj);
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut slot = vec![usize::MAX; poles.len()];
    for k in 0..poles.len() {
        let r = root(&mut parent, k);
        if slot[r] == usize::MAX {
            slot[r] = groups.len();
            groups.push(Vec::new());
        }
        groups[slot[r]].push(k);
    }
    groups
}

/// Residue of a merged mode from a trapezoidal contour integral of
/// `cᵀP(z)⁻¹b` around `center`, divided by `center`.
fn contour_residue(
    a: &DMatrix<f64>,
    delays: &[usize],
    b: &[f64],
    c: &[f64],
    roots: &[C64],
    members: &[usize],
    center: C64,
) -> Result<C64> {
    let spread = members.iter().map(|&k| (roots[k] - center).norm()).fold(0.0, f64::max);
    let nearest = roots
        .iter()
        .enumerate()
        .filter(|(k, _)| !members.contains(k))
        .map(|(_, z)| (z - center).norm())
        .fold(f64::INFINITY, f64::min);
    let radius = (nearest / 3.0).min(center.norm() / 3.0);
    if !(radius > 10.0 * spread) {
        return Err(Error::Multiplicity {
            first: members[0],
            second: members[1],
            separation: POLE_CLUSTER,
        });
    }
    let bc: Vec<C64> = b.iter().map(|&x| C64::new(x, 0.0)).collect();
    let mut sum = ZERO;
    for k in 0..CONTOUR_POINTS {
        let e = C64::from_polar(radius, 2.0 * std::f64::consts::PI * k as f64 / CONTOUR_POINTS as f64);
        let lu = ComplexLu::new(&polynomial_matrix(a, delays, center + e));
        let x = lu.solve(&bc);
        let g: C64 = x.iter().zip(c).map(|(x, &c)| x * c).sum();
        sum += g * e;
    }
    Ok(sum / CONTOUR_POINTS as f64 / center)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    /// Bin centre relative to the mean, in dB.
    pub center_db: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExcitationStats {
    /// Population standard deviation of `20 log10 |ρ_i|`.
    pub std_db: f64,
    pub mean_db: f64,
    pub histogram: Vec<HistogramBin>,
    pub bin_width_db: f64,
    pub count: usize,
    pub zero_residues: usize,
}

impl ExcitationStats {
    pub fn histogram_csv(&self) -> String {
        let mut s = String::from("center_db,count\n");
        for b in &self.histogram {
            s.push_str(&format!("{},{}\n", b.center_db, b.count));
        }
        s
    }
}

pub const HISTOGRAM_BIN_DB: f64 = 0.5;

pub fn excitation_stats(decomposition: &ModalDecomposition) -> Result<ExcitationStats> {
    excitation_stats_of(&decomposition.residues)
}

pub fn excitation_stats_of(residues: &[C64]) -> Result<ExcitationStats> {
    let db: Vec<f64> = residues
        .iter()
        .filter(|r| r.norm() > 0.0)
        .map(|r| 20.0 * r.norm().log10())
        .collect();
    if db.is_empty() {
        return Err(Error::EmptyDecomposition);
    }
    let count = db.len();
    let mean = par::pairwise_sum(&db) / count as f64;
    let dev: Vec<f64> = db.iter().map(|x| (x - mean).powi(2)).collect();
    let std = (par::pairwise_sum(&dev) / count as f64).sqrt();
    let bins: Vec<i64> = db
        .iter()
        .map(|x| ((x - mean) / HISTOGRAM_BIN_DB).round() as i64)
        .collect();
    let (lo, hi) = (*bins.iter().min().unwrap(), *bins.iter().max().unwrap());
    let mut counts = vec![0usize; (hi - lo + 1) as usize];
    for b in bins {
        counts[(b - lo) as usize] += 1;
    }
    let histogram = counts
        .into_iter()
        .enumerate()
        .map(|(k, count)| HistogramBin {
            center_db: (lo + k as i64) as f64 * HISTOGRAM_BIN_DB,
            count,
        })
        .collect();
    Ok(ExcitationStats {
        std_db: std,
        mean_db: mean,
        histogram,
        bin_width_db: HISTOGRAM_BIN_DB,
        count,
        zero_residues: residues.len() - count,
    })
}
