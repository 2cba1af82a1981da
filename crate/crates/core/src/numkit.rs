//! Small dense linear algebra, seeded random numbers, and quadrature.
//!
//! Everything here works on 64-bit floats and on the tiny matrices that occur
//! in control problems (n ≤ 4), so the algorithms favour transparency over
//! asymptotic speed.

use std::fmt;
use std::ops::{Deref, DerefMut, Index, IndexMut};

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors raised by the numeric substrate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumError {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("{op} requires a square matrix, got {rows}x{cols}")]
    NotSquare {
        op: &'static str,
        rows: usize,
        cols: usize,
    },
    #[error("uncontrollable or ill-conditioned system: Cholesky pivot {index} is {pivot:e}")]
    NotPositiveDefinite { index: usize, pivot: f64 },
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, NumError>;

/// Dense real vector.
#[derive(Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn zeros(n: usize) -> Self {
        Vector(vec![0.0; n])
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Vector(v.to_vec())
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &Vector) -> Result<f64> {
        check_len("dot", self.len(), other.len())?;
        Ok(dot(self, other))
    }

    pub fn add(&self, other: &Vector) -> Result<Vector> {
        check_len("add", self.len(), other.len())?;
        Ok(self.iter().zip(other.iter()).map(|(a, b)| a + b).collect())
    }

    pub fn sub(&self, other: &Vector) -> Result<Vector> {
        check_len("sub", self.len(), other.len())?;
        Ok(self.iter().zip(other.iter()).map(|(a, b)| a - b).collect())
    }

    pub fn scale(&self, s: f64) -> Vector {
        self.iter().map(|a| a * s).collect()
    }

    /// `self += s * other`
    pub fn axpy(&mut self, s: f64, other: &[f64]) -> Result<()> {
        check_len("axpy", self.len(), other.len())?;
        for (a, b) in self.0.iter_mut().zip(other) {
            *a += s * b;
        }
        Ok(())
    }

    pub fn norm(&self) -> f64 {
        norm(self)
    }
}

impl fmt::Debug for Vector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl Deref for Vector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for Vector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for Vector {
    fn from(v: Vec<f64>) -> Self {
        Vector(v)
    }
}

impl FromIterator<f64> for Vector {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        Vector(iter.into_iter().collect())
    }
}

fn check_len(op: &'static str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(NumError::Dimension {
            op,
            left: (a, 1),
            right: (b, 1),
        });
    }
    Ok(())
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Dense row-major matrix.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn diag(d: &[f64]) -> Self {
        let mut m = Matrix::zeros(d.len(), d.len());
        for (i, &v) in d.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(NumError::Dimension {
                op: "from_row_major",
                left: (rows, cols),
                right: (data.len(), 1),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from nested rows; all rows must have equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(NumError::Dimension {
                    op: "from_rows",
                    left: (r, c),
                    right: (1, row.len()),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Matrix {
            rows: r,
            cols: c,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(NumError::Dimension {
                op: "matmul",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.data[k * other.cols + j];
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vector> {
        if self.cols != v.len() {
            return Err(NumError::Dimension {
                op: "matvec",
                left: self.shape(),
                right: (v.len(), 1),
            });
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), v)).collect())
    }

    /// `selfᵀ · v` without materializing the transpose.
    pub fn tmatvec(&self, v: &[f64]) -> Result<Vector> {
        if self.rows != v.len() {
            return Err(NumError::Dimension {
                op: "tmatvec",
                left: (self.cols, self.rows),
                right: (v.len(), 1),
            });
        }
        let mut out = Vector::zeros(self.cols);
        for (i, &vi) in v.iter().enumerate() {
            for (o, a) in out.iter_mut().zip(self.row(i)) {
                *o += a * vi;
            }
        }
        Ok(out)
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with("add", other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with("sub", other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|a| a * s).collect(),
        }
    }

    fn zip_with(&self, op: &'static str, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(NumError::Dimension {
                op,
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    /// `(self + selfᵀ) / 2`; requires a square matrix.
    pub fn symmetrize(&self) -> Result<Matrix> {
        if !self.is_square() {
            return Err(NumError::NotSquare {
                op: "symmetrize",
                rows: self.rows,
                cols: self.cols,
            });
        }
        let mut s = self.clone();
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                let v = 0.5 * (self[(i, j)] + self[(j, i)]);
                s[(i, j)] = v;
                s[(j, i)] = v;
            }
        }
        Ok(s)
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        norm(&self.data)
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix{}x{}", self.rows, self.cols)?;
        f.debug_list().entries(self.to_rows()).finish()
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

/// Minimum number of RK4 substeps per unit of |t| used by [`mat_exp`].
pub const MAT_EXP_STEPS_PER_UNIT: f64 = 1000.0;

/// `e^{At}` by integrating `Ẋ = AX, X(0) = I` with classical RK4.
pub fn mat_exp(a: &Matrix, t: f64) -> Result<Matrix> {
    if !a.is_square() {
        return Err(NumError::NotSquare {
            op: "mat_exp",
            rows: a.rows,
            cols: a.cols,
        });
    }
    if !t.is_finite() {
        return Err(NumError::Invalid(format!("mat_exp: non-finite time {t}")));
    }
    let n = a.rows;
    let steps = ((t.abs() * MAT_EXP_STEPS_PER_UNIT).ceil() as usize).max(1);
    let h = t / steps as f64;
    // The ODE is linear, so one RK4 step is multiplication by a fixed
    // polynomial in hA; build it once and apply it `steps` times.
    let ha = a.scale(h);
    let ha2 = ha.matmul(&ha)?;
    let ha3 = ha2.matmul(&ha)?;
    let ha4 = ha3.matmul(&ha)?;
    let step = Matrix::identity(n)
        .add(&ha)?
        .add(&ha2.scale(0.5))?
        .add(&ha3.scale(1.0 / 6.0))?
        .add(&ha4.scale(1.0 / 24.0))?;
    let mut x = Matrix::identity(n);
    for _ in 0..steps {
        x = step.matmul(&x)?;
    }
    Ok(x)
}

/// Controllability Gramian `W(T) = ∫₀ᵀ e^{At} B Bᵀ e^{Aᵀt} dt` by the
/// trapezoidal rule on `steps` uniform intervals.
pub fn gramian(a: &Matrix, b: &Matrix, horizon: f64, steps: usize) -> Result<Matrix> {
    if !a.is_square() {
        return Err(NumError::NotSquare {
            op: "gramian",
            rows: a.rows,
            cols: a.cols,
        });
    }
    if b.rows != a.rows {
        return Err(NumError::Dimension {
            op: "gramian",
            left: a.shape(),
            right: b.shape(),
        });
    }
    if !(horizon > 0.0) {
        return Err(NumError::Invalid(format!("gramian: horizon must be > 0, got {horizon}")));
    }
    if steps < 100 {
        return Err(NumError::Invalid(format!("gramian: need at least 100 steps, got {steps}")));
    }
    let n = a.rows;
    let dt = horizon / steps as f64;
    let step = mat_exp(a, dt)?;
    let mut e = Matrix::identity(n);
    let mut acc = Matrix::zeros(n, n);
    for j in 0..=steps {
        let eb = e.matmul(b)?;
        let integrand = eb.matmul(&eb.transpose())?;
        let w = if j == 0 || j == steps { 0.5 } else { 1.0 };
        acc = acc.add(&integrand.scale(w * dt))?;
        e = step.matmul(&e)?;
    }
    acc.symmetrize()
}

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky(w: &Matrix) -> Result<Matrix> {
    if !w.is_square() {
        return Err(NumError::NotSquare {
            op: "cholesky",
            rows: w.rows,
            cols: w.cols,
        });
    }
    let n = w.rows;
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = w[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 0.0) {
            return Err(NumError::NotPositiveDefinite { index: j, pivot: d });
        }
        let ljj = d.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut s = w[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(l)
}

/// Solves `Wx = v` for symmetric positive definite `W` via Cholesky.
pub fn solve_spd(w: &Matrix, v: &[f64]) -> Result<Vector> {
    if w.rows != v.len() {
        return Err(NumError::Dimension {
            op: "solve_spd",
            left: w.shape(),
            right: (v.len(), 1),
        });
    }
    let l = cholesky(w)?;
    let n = v.len();
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = v[i];
        for k in 0..i {
            s -= l[(i, k)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s -= l[(k, i)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    Ok(Vector(x))
}

/// Trapezoidal rule over uniformly spaced samples.
pub fn trapezoid(samples: &[f64], dx: f64) -> f64 {
    match samples.len() {
        0 | 1 => 0.0,
        n => dx * (0.5 * (samples[0] + samples[n - 1]) + samples[1..n - 1].iter().sum::<f64>()),
    }
}

/// Deterministic random stream: ChaCha20 keyed by a 64-bit seed, with
/// uniforms built from the top 53 bits and normals from Box–Muller.
#[derive(Clone, Debug)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha20Rng,
    spare_normal: Option<f64>,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng {
            seed,
            inner: ChaCha20Rng::seed_from_u64(seed),
            spare_normal: None,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform draw in `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0);
        ((self.unit() * n as f64) as usize).min(n - 1)
    }

    /// Standard normal draw.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        // 1 - unit() lies in (0, 1], keeping ln finite.
        let u1 = 1.0 - self.unit();
        let u2 = self.unit();
        let r = (-2.0 * u1.ln()).sqrt();
        let phi = 2.0 * std::f64::consts::PI * u2;
        self.spare_normal = Some(r * phi.sin());
        r * phi.cos()
    }

    pub fn normal_vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.normal()).collect()
    }
}

/// SplitMix64 finalizer; used to derive per-cell seeds.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Combines a base seed with integer coordinates into a new seed.
pub fn derive_seed(base: u64, coords: &[u64]) -> u64 {
    coords.iter().fold(mix64(base), |acc, &c| mix64(acc ^ mix64(c)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn benchmark_a() -> Matrix {
        Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap()
    }

    fn taylor_exp(a: &Matrix, t: f64, terms: usize) -> Matrix {
        let at = a.scale(t);
        let mut term = Matrix::identity(a.rows());
        let mut sum = term.clone();
        for k in 1..=terms {
            term = term.matmul(&at).unwrap().scale(1.0 / k as f64);
            sum = sum.add(&term).unwrap();
        }
        sum
    }

    #[test]
    fn mat_exp_of_zero_is_identity() {
        let e = mat_exp(&Matrix::zeros(2, 2), 1.0).unwrap();
        assert_eq!(e, Matrix::identity(2));
    }

    #[test]
    fn mat_exp_diagonal() {
        let e = mat_exp(&Matrix::diag(&[1.0, -2.0]), 1.0).unwrap();
        let want = [1f64.exp(), (-2f64).exp()];
        for i in 0..2 {
            assert!(((e[(i, i)] - want[i]) / want[i]).abs() < 1e-8);
        }
        assert_eq!(e[(0, 1)], 0.0);
    }

    #[test]
    fn mat_exp_matches_taylor_on_benchmark() {
        let a = benchmark_a();
        let e = mat_exp(&a, 1.0).unwrap();
        let t = taylor_exp(&a, 1.0, 30);
        assert!(e.max_abs_diff(&t) / t.norm() < 1e-10);
    }

    #[test]
    fn mat_exp_rejects_non_square() {
        assert!(matches!(
            mat_exp(&Matrix::zeros(2, 3), 1.0),
            Err(NumError::NotSquare { .. })
        ));
    }

    #[test]
    fn mat_exp_semigroup() {
        let mut rng = SeededRng::new(7);
        for _ in 0..20 {
            let mut a = Matrix::zeros(2, 2);
            for i in 0..2 {
                for j in 0..2 {
                    a[(i, j)] = rng.uniform(-1.0, 1.0);
                }
            }
            let a = a.scale(2.0 / a.norm().max(1.0));
            let (s, t) = (rng.uniform(0.1, 1.0), rng.uniform(0.1, 1.0));
            let lhs = mat_exp(&a, s + t).unwrap();
            let rhs = mat_exp(&a, s).unwrap().matmul(&mat_exp(&a, t).unwrap()).unwrap();
            assert!(lhs.max_abs_diff(&rhs) / lhs.norm() < 1e-7);
        }
    }

    #[test]
    fn gramian_trivial_cases() {
        let b = Matrix::from_rows(&[vec![1.0], vec![0.0]]).unwrap();
        let w = gramian(&Matrix::zeros(2, 2), &b, 1.0, 100).unwrap();
        assert!(w.max_abs_diff(&Matrix::diag(&[1.0, 0.0])) < 1e-14);

        let w = gramian(&Matrix::zeros(2, 2), &Matrix::identity(2), 2.0, 100).unwrap();
        assert!(w.max_abs_diff(&Matrix::diag(&[2.0, 2.0])) < 1e-13);
    }

    #[test]
    fn gramian_grid_refinement() {
        let a = benchmark_a();
        let b = Matrix::from_rows(&[vec![1.0], vec![0.0]]).unwrap();
        let coarse = gramian(&a, &b, 1.0, 1000).unwrap();
        let fine = gramian(&a, &b, 1.0, 10_000).unwrap();
        assert!(coarse.max_abs_diff(&fine) / fine.norm() < 1e-6);
    }

    #[test]
    fn gramian_symmetric_psd() {
        let a = benchmark_a();
        let b = Matrix::from_rows(&[vec![1.0], vec![0.0]]).unwrap();
        let w = gramian(&a, &b, 1.0, 500).unwrap();
        assert_eq!(w, w.transpose());
        let shifted = w.add(&Matrix::identity(2).scale(1e-12)).unwrap();
        cholesky(&shifted).unwrap();
    }

    #[test]
    fn gramian_rejects_bad_inputs() {
        let b = Matrix::identity(2);
        assert!(gramian(&Matrix::zeros(2, 2), &b, 0.0, 100).is_err());
        assert!(gramian(&Matrix::zeros(2, 2), &b, 1.0, 99).is_err());
        assert!(gramian(&Matrix::zeros(3, 3), &b, 1.0, 100).is_err());
    }

    #[test]
    fn solve_spd_cases() {
        let x = solve_spd(&Matrix::identity(2), &[3.0, -1.0]).unwrap();
        assert_eq!(&*x, &[3.0, -1.0]);
        let x = solve_spd(&Matrix::diag(&[2.0, 4.0]), &[2.0, 4.0]).unwrap();
        assert!(x.iter().all(|v| (v - 1.0).abs() < 1e-15));
        let err = solve_spd(&Matrix::diag(&[1.0, 0.0]), &[1.0, 2.0]).unwrap_err();
        match err {
            NumError::NotPositiveDefinite { index, pivot } => {
                assert_eq!(index, 1);
                assert_eq!(pivot, 0.0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn binary_ops_check_dimensions() {
        let a = Matrix::zeros(2, 3);
        assert!(a.matmul(&Matrix::zeros(2, 3)).is_err());
        assert!(a.add(&Matrix::zeros(3, 2)).is_err());
        assert!(a.matvec(&[1.0, 2.0]).is_err());
        assert!(Vector::zeros(2).dot(&Vector::zeros(3)).is_err());
    }

    #[test]
    fn rng_streams_repeat() {
        let mut a = SeededRng::new(42);
        let mut b = SeededRng::new(42);
        for _ in 0..10_000 {
            assert_eq!(a.normal().to_bits(), b.normal().to_bits());
            assert_eq!(a.uniform(-1.0, 2.0).to_bits(), b.uniform(-1.0, 2.0).to_bits());
        }
        let mut c = SeededRng::new(43);
        assert_ne!(SeededRng::new(42).next_u64(), c.next_u64());
    }

    #[test]
    fn rng_normal_moments() {
        let mut rng = SeededRng::new(1);
        let xs = rng.normal_vec(200_000);
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
        assert!(mean.abs() < 0.01);
        assert!((var - 1.0).abs() < 0.01);
    }

    #[test]
    fn trapezoid_linear_exact() {
        let xs: Vec<f64> = (0..=10).map(|i| i as f64 * 0.1).collect();
        assert!((trapezoid(&xs, 0.1) - 0.5).abs() < 1e-15);
    }
}
