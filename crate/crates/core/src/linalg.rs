//! Small dense linear algebra: complex LU for the per-frequency resolvent,
//! and the real matrix exponential with its Fréchet derivative.

use nalgebra::DMatrix;
use num_complex::Complex64;

pub type C64 = Complex64;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);

/// Row-major square complex matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CMatrix {
    n: usize,
    data: Vec<C64>,
}

impl CMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![ZERO; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m[(i, i)] = ONE;
        }
        m
    }

    pub fn from_real(a: &DMatrix<f64>) -> Self {
        assert_eq!(a.nrows(), a.ncols());
        let n = a.nrows();
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = C64::new(a[(i, j)], 0.0);
            }
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn matmul(&self, rhs: &CMatrix) -> CMatrix {
        let n = self.n;
        let mut out = CMatrix::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self[(i, k)];
                if a == ZERO {
                    continue;
                }
                for j in 0..n {
                    out.data[i * n + j] += a * rhs.data[k * n + j];
                }
            }
        }
        out
    }

    /// `self · diag(d)`: scales column j by `d[j]`.
    pub fn scale_columns(&mut self, d: &[C64]) {
        let n = self.n;
        for i in 0..n {
            for j in 0..n {
                self.data[i * n + j] *= d[j];
            }
        }
    }

    /// `diag(d) · self`: scales row i by `d[i]`.
    pub fn scale_rows(&mut self, d: &[C64]) {
        let n = self.n;
        for i in 0..n {
            for j in 0..n {
                self.data[i * n + j] *= d[i];
            }
        }
    }

    /// `selfᵀ · x` (plain transpose, no conjugation).
    pub fn transpose_mul_vec(&self, x: &[C64]) -> Vec<C64> {
        let n = self.n;
        let mut out = vec![ZERO; n];
        for i in 0..n {
            for j in 0..n {
                out[j] += self.data[i * n + j] * x[i];
            }
        }
        out
    }

    pub fn mul_vec(&self, x: &[C64]) -> Vec<C64> {
        let n = self.n;
        (0..n)
            .map(|i| (0..n).map(|j| self.data[i * n + j] * x[j]).sum())
            .collect()
    }

    pub fn conj_transpose(&self) -> CMatrix {
        let n = self.n;
        let mut out = CMatrix::zeros(n);
        for i in 0..n {
            for j in 0..n {
                out[(j, i)] = self[(i, j)].conj();
            }
        }
        out
    }

    pub fn frobenius_distance_to_identity(&self) -> f64 {
        let n = self.n;
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                let target = if i == j { ONE } else { ZERO };
                s += (self[(i, j)] - target).norm_sqr();
            }
        }
        s.sqrt()
    }

    fn max_abs(&self) -> f64 {
        self.data.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

impl std::ops::Index<(usize, usize)> for CMatrix {
    type Output = C64;
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.data[i * self.n + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for CMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.data[i * self.n + j]
    }
}

/// LU factorization with partial pivoting, `P·A = L·U`.
#[derive(Clone, Debug)]
pub struct ComplexLu {
    n: usize,
    lu: Vec<C64>,
    perm: Vec<usize>,
    sign: f64,
    min_pivot: f64,
    scale: f64,
}

impl ComplexLu {
    pub fn new(a: &CMatrix) -> Self {
        let n = a.n;
        let scale = a.max_abs();
        let mut lu = a.data.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut sign = 1.0;
        let mut min_pivot = f64::INFINITY;
        for k in 0..n {
            let mut p = k;
            let mut best = lu[k * n + k].norm();
            for i in k + 1..n {
                let v = lu[i * n + k].norm();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if p != k {
                for j in 0..n {
                    lu.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
                sign = -sign;
            }
            min_pivot = min_pivot.min(best);
            let pivot = lu[k * n + k];
            if pivot == ZERO {
                continue;
            }
            for i in k + 1..n {
                let f = lu[i * n + k] / pivot;
                lu[i * n + k] = f;
                if f == ZERO {
                    continue;
                }
                for j in k + 1..n {
                    let u = lu[k * n + j];
                    lu[i * n + j] -= f * u;
                }
            }
        }
        Self {
            n,
            lu,
            perm,
            sign,
            min_pivot,
            scale,
        }
    }

    /// True when the smallest pivot is at rounding level relative to the
    /// largest matrix entry.
    pub fn is_singular(&self) -> bool {
        !(self.min_pivot > 16.0 * f64::EPSILON * self.n as f64 * self.scale)
    }

    pub fn det(&self) -> C64 {
        let n = self.n;
        (0..n).fold(C64::new(self.sign, 0.0), |acc, i| acc * self.lu[i * n + i])
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[C64]) -> Vec<C64> {
        let n = self.n;
        let mut x: Vec<C64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            for k in 0..i {
                let l = self.lu[i * n + k];
                let t = l * x[k];
                x[i] -= t;
            }
        }
        for i in (0..n).rev() {
            for k in i + 1..n {
                let u = self.lu[i * n + k];
                let t = u * x[k];
                x[i] -= t;
            }
            x[i] /= self.lu[i * n + i];
        }
        x
    }

    /// Solves `Aᵀ x = b` (plain transpose).
    pub fn solve_transpose(&self, b: &[C64]) -> Vec<C64> {
        // Aᵀ = Uᵀ Lᵀ P, so solve Uᵀ w = b, Lᵀ y = w, x = Pᵀ y.
        let n = self.n;
        let mut w = b.to_vec();
        for i in 0..n {
            for k in 0..i {
                let u = self.lu[k * n + i];
                let t = u * w[k];
                w[i] -= t;
            }
            w[i] /= self.lu[i * n + i];
        }
        for i in (0..n).rev() {
            for k in i + 1..n {
                let l = self.lu[k * n + i];
                let t = l * w[k];
                w[i] -= t;
            }
        }
        let mut x = vec![ZERO; n];
        for (i, &p) in self.perm.iter().enumerate() {
            x[p] = w[i];
        }
        x
    }

    /// Replaces exactly-zero or denormal pivots by a tiny value so inverse
    /// iteration can proceed on an (almost) singular matrix.
    pub fn regularize(&mut self) {
        let n = self.n;
        let scale = if self.scale > 0.0 { self.scale } else { 1.0 };
        let floor = f64::EPSILON * scale * 1e-3;
        for i in 0..n {
            if self.lu[i * n + i].norm() < floor {
                self.lu[i * n + i] = C64::new(floor, 0.0);
            }
        }
    }
}

pub fn frobenius(a: &DMatrix<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// ‖U Uᵀ − I‖_F.
pub fn orthogonality_error(u: &DMatrix<f64>) -> f64 {
    let n = u.nrows();
    frobenius(&(u * u.transpose() - DMatrix::<f64>::identity(n, n)))
}

const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

const THETA13: f64 = 5.371920351148152;

fn one_norm(a: &DMatrix<f64>) -> f64 {
    (0..a.ncols())
        .map(|j| a.column(j).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Matrix exponential by scaling and squaring with the degree-13 Padé
/// approximant.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "expm needs a square matrix");
    if n == 0 {
        return a.clone();
    }
    let norm = one_norm(a);
    let s = if norm > THETA13 {
        (norm / THETA13).log2().ceil().max(0.0) as i32
    } else {
        0
    };
    let a = a / 2f64.powi(s);
    let b = &PADE13;
    let id = DMatrix::<f64>::identity(n, n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let u_inner = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9]);
    let u = &a * (u_inner + &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + &id * b[1]);
    let v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8])
        + &a6 * b[6]
        + &a4 * b[4]
        + &a2 * b[2]
        + &id * b[0];
    let p = &v + &u;
    let q = &v - &u;
    let mut r = q
        .lu()
        .solve(&p)
        .expect("Padé denominator is nonsingular for scaled arguments");
    for _ in 0..s {
        r = &r * &r;
    }
    r
}

/// Fréchet derivative `L(A, E)` of the matrix exponential, read from the
/// upper-right block of `exp([[A, E], [0, A]])`. Returns `(exp(A), L(A, E))`.
pub fn expm_frechet(a: &DMatrix<f64>, e: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let mut block = DMatrix::<f64>::zeros(2 * n, 2 * n);
    block.view_mut((0, 0), (n, n)).copy_from(a);
    block.view_mut((n, n), (n, n)).copy_from(a);
    block.view_mut((0, n), (n, n)).copy_from(e);
    let big = expm(&block);
    (
        big.view((0, 0), (n, n)).into_owned(),
        big.view((0, n), (n, n)).into_owned(),
    )
}

/// Pulls a gradient `G = ∂f/∂exp(A)` back to `∂f/∂A`.
///
/// Under the Frobenius inner product the adjoint of `E ↦ L(A, E)` is
/// `G ↦ L(Aᵀ, G)`.
pub fn expm_pullback(a: &DMatrix<f64>, g: &DMatrix<f64>) -> DMatrix<f64> {
    expm_frechet(&a.transpose(), g).1
}
