//! Dense linear algebra and seeded sampling primitives.
//!
//! Everything here works in `f64`. Matrices are small (feature dimension and
//! class count of a desk-scale model), so the routines favour clarity and
//! reproducibility over throughput.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Symmetry tolerance used when a caller promises a symmetric matrix.
pub const SYMMETRY_TOL: f64 = 1e-9;

/// Ridge added by [`psd_project`] when repairing covariances before sampling.
pub const SAMPLING_RIDGE: f64 = 1e-8;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn zeros(dim: usize) -> Self {
        Vector(vec![0.0; dim])
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Vector(data)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &Vector) -> f64 {
        dot(&self.0, &other.0)
    }

    /// `self += scale * other`
    pub fn axpy(&mut self, scale: f64, other: &Vector) {
        axpy(&mut self.0, scale, &other.0);
    }

    pub fn scale(&mut self, factor: f64) {
        self.0.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Vector) -> f64 {
        max_abs_diff(&self.0, &other.0)
    }
}

impl From<Vec<f64>> for Vector {
    fn from(data: Vec<f64>) -> Self {
        Vector(data)
    }
}

impl std::ops::Index<usize> for Vector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl std::ops::IndexMut<usize> for Vector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
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

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Matrix::zeros(diag.len(), diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                context: "Matrix::from_vec",
                expected: rows * cols,
                actual: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Matrix::from_vec"));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    context: "Matrix::from_rows",
                    expected: cols,
                    actual: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Matrix::from_vec(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
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

    /// `self · v`
    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::DimensionMismatch {
                context: "Matrix::matvec",
                expected: self.cols,
                actual: v.len(),
            });
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), v)).collect())
    }

    /// `self · other`
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch {
                context: "Matrix::matmul",
                expected: self.cols,
                actual: other.rows,
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                axpy(out.row_mut(i), a, other.row(k));
            }
        }
        Ok(out)
    }

    /// `self += scale * other`
    pub fn axpy(&mut self, scale: f64, other: &Matrix) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::DimensionMismatch {
                context: "Matrix::axpy",
                expected: self.rows * self.cols,
                actual: other.rows * other.cols,
            });
        }
        axpy(&mut self.data, scale, &other.data);
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn scaled(&self, factor: f64) -> Matrix {
        let mut m = self.clone();
        m.scale(factor);
        m
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        max_abs_diff(&self.data, &other.data)
    }

    /// Largest `|A[i][j] - A[j][i]|`.
    pub fn asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols.min(self.rows) {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    pub fn symmetrized(&self) -> Result<Matrix> {
        self.require_square()?;
        let mut s = self.clone();
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                let avg = 0.5 * (self[(i, j)] + self[(j, i)]);
                s[(i, j)] = avg;
                s[(j, i)] = avg;
            }
        }
        Ok(s)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Eigenvalues of the symmetric part, ascending.
    pub fn symmetric_eigenvalues(&self) -> Result<Vec<f64>> {
        let (mut values, _) = symmetric_eigen(self)?;
        values.sort_by(f64::total_cmp);
        Ok(values)
    }

    fn require_square(&self) -> Result<()> {
        if self.is_square() {
            Ok(())
        } else {
            Err(Error::NotSquare {
                rows: self.rows,
                cols: self.cols,
            })
        }
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn axpy(dst: &mut [f64], scale: f64, src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += scale * s;
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .fold(0.0, |m: f64, (x, y)| m.max((x - y).abs()))
}

/// Numerically stable `log Σ exp(z)`.
pub fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// In-place softmax.
pub fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    z.iter_mut().for_each(|v| *v /= total);
}

/// `vᵀ A v`.
pub fn quadratic_form(v: &[f64], a: &Matrix) -> Result<f64> {
    a.require_square()?;
    if v.len() != a.rows() {
        return Err(Error::DimensionMismatch {
            context: "quadratic_form",
            expected: a.rows(),
            actual: v.len(),
        });
    }
    Ok((0..a.rows()).map(|m| v[m] * dot(a.row(m), v)).sum())
}

fn symmetric_eigen(a: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    a.require_square()?;
    if !a.is_finite() {
        return Err(Error::NonFinite("symmetric eigendecomposition"));
    }
    let sym = a.symmetrized()?;
    let n = sym.rows();
    let eig = SymmetricEigen::new(DMatrix::from_row_slice(n, n, sym.as_slice()));
    let values: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::PsdRepair("eigendecomposition did not converge".into()));
    }
    let mut vectors = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            vectors[(i, j)] = eig.eigenvectors[(i, j)];
        }
    }
    Ok((values, vectors))
}

/// Symmetrizes `a` and shifts its spectrum so the smallest eigenvalue is at
/// least zero, then adds `ridge · I` on top.
///
/// Already-PSD input with `ridge = 0` comes back unchanged (up to
/// symmetrization).
pub fn psd_project(a: &Matrix, ridge: f64) -> Result<Matrix> {
    a.require_square()?;
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "ridge must be a finite non-negative number, got {ridge}"
        )));
    }
    let mut out = a.symmetrized()?;
    let min_eig = out
        .symmetric_eigenvalues()?
        .first()
        .copied()
        .unwrap_or(0.0);
    let shift = ridge + (-min_eig).max(0.0);
    if shift > 0.0 {
        for i in 0..out.rows() {
            out[(i, i)] += shift;
        }
    }
    Ok(out)
}

/// Deterministic random source. Identical seeds yield identical streams.
#[derive(Clone, Debug)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// An independent stream keyed by `(seed, stream)`.
    pub fn derive(seed: u64, stream: u64) -> Self {
        SeededRng::new(splitmix64(seed ^ splitmix64(stream.wrapping_add(0x5851_f42d_4c95_7f2d))))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        use rand::seq::SliceRandom;
        items.shuffle(&mut self.inner);
    }

    pub fn normal_vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.normal()).collect()
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Pre-factored Gaussian `N(mean, cov)` for repeated draws.
///
/// The covariance is eigen-factored as `V·diag(λ)·Vᵀ` with negative
/// eigenvalues clamped to zero, so rank-deficient and zero covariances are
/// sampled exactly (a zero covariance returns the mean bit for bit).
#[derive(Clone, Debug)]
pub struct GaussianSampler {
    mean: Vec<f64>,
    // Row-major d×r factor L with L·Lᵀ = cov; r counts non-zero eigenvalues.
    factor: Vec<f64>,
    rank: usize,
}

impl GaussianSampler {
    pub fn new(mean: &Vector, cov: &Matrix) -> Result<Self> {
        let d = mean.dim();
        if !cov.is_square() {
            return Err(Error::NotSquare {
                rows: cov.rows(),
                cols: cov.cols(),
            });
        }
        if cov.rows() != d {
            return Err(Error::DimensionMismatch {
                context: "GaussianSampler::new",
                expected: d,
                actual: cov.rows(),
            });
        }
        if !cov.is_finite() || !mean.is_finite() {
            return Err(Error::NonFinite("GaussianSampler::new"));
        }
        let scale = cov.max_abs().max(1.0);
        let asym = cov.asymmetry();
        if asym > SYMMETRY_TOL * scale {
            return Err(Error::NotSymmetric { asymmetry: asym });
        }
        let (values, vectors) = symmetric_eigen(cov)?;
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        // Anything more negative than rounding noise means the caller passed
        // an indefinite matrix; repair it with the standard ridge first.
        let (values, vectors) = if d > 0 && min < -1e-8 * scale {
            let repaired = psd_project(cov, SAMPLING_RIDGE)?;
            symmetric_eigen(&repaired)?
        } else {
            (values, vectors)
        };
        let kept: Vec<usize> = (0..d).filter(|&k| values[k] > 0.0).collect();
        let rank = kept.len();
        let mut factor = vec![0.0; d * rank];
        for i in 0..d {
            for (col, &k) in kept.iter().enumerate() {
                factor[i * rank + col] = vectors[(i, k)] * values[k].sqrt();
            }
        }
        if factor.iter().any(|v| !v.is_finite()) {
            return Err(Error::PsdRepair("non-finite covariance factor".into()));
        }
        Ok(GaussianSampler {
            mean: mean.as_slice().to_vec(),
            factor,
            rank,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Writes one draw into `out`, reusing `scratch` for the standard normals.
    pub fn sample_into(&self, rng: &mut SeededRng, scratch: &mut Vec<f64>, out: &mut [f64]) {
        scratch.clear();
        scratch.extend((0..self.rank).map(|_| rng.normal()));
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.factor[i * self.rank..(i + 1) * self.rank];
            *o = self.mean[i] + dot(row, scratch);
        }
    }

    pub fn sample(&self, rng: &mut SeededRng) -> Vector {
        let mut out = vec![0.0; self.dim()];
        let mut scratch = Vec::with_capacity(self.rank);
        self.sample_into(rng, &mut scratch, &mut out);
        Vector(out)
    }
}

/// One draw from `N(mean, cov)`.
pub fn sample_gaussian(mean: &Vector, cov: &Matrix, rng: &mut SeededRng) -> Result<Vector> {
    Ok(GaussianSampler::new(mean, cov)?.sample(rng))
}

/// Random symmetric PSD matrix `B·Bᵀ / n` with standard-normal `B`, scaled.
pub fn random_psd(n: usize, scale: f64, rng: &mut SeededRng) -> Matrix {
    let b = Matrix {
        rows: n,
        cols: n,
        data: rng.normal_vec(n * n),
    };
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = scale * dot(b.row(i), b.row(j)) / n as f64;
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}
