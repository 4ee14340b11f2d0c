//! Dense symmetric-matrix kernel.
//!
//! Everything here works on small dense matrices (d up to a few dozen):
//! a cyclic Jacobi eigensolver, projection onto the PSD cone, numerical
//! rank, and the determinant/trace constant used by the log-type error
//! bounds.
//!
//! Matrices are stored full-square, row-major. [`SymMat`] is exactly
//! symmetric by construction; [`Mat`] is a general rectangular matrix used
//! for eigenvector bases and kernel bases.

use std::fmt;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

/// Default relative threshold separating zero from nonzero eigenvalues.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

const MAX_JACOBI_SWEEPS: usize = 100;

/// Dense symmetric `d x d` real matrix.
#[derive(Clone, PartialEq)]
pub struct SymMat {
    dim: usize,
    data: Vec<f64>,
}

impl SymMat {
    pub fn zeros(dim: usize) -> Self {
        assert!(dim >= 1, "SymMat dimension must be positive");
        SymMat {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::from_diag(&vec![1.0; dim])
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m.data[i * m.dim + i] = v;
        }
        m
    }

    /// Builds a matrix from a function evaluated on the lower triangle
    /// (`i >= j`); the upper triangle is mirrored.
    pub fn from_lower_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in 0..=i {
                let v = f(i, j);
                m.data[i * dim + j] = v;
                m.data[j * dim + i] = v;
            }
        }
        m
    }

    /// Builds a matrix from rows. Rows must be square and symmetric within a
    /// relative tolerance of `1e-12`; the result is exactly symmetrized by
    /// averaging the two triangles.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        if dim == 0 {
            return Err(Error::InvalidInput("empty matrix".into()));
        }
        for (i, r) in rows.iter().enumerate() {
            if r.len() != dim {
                return Err(Error::InvalidInput(format!(
                    "row {i} has {} entries, expected {dim}",
                    r.len()
                )));
            }
            if r.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!("row {i} has non-finite entries")));
            }
        }
        let scale = rows
            .iter()
            .flat_map(|r| r.iter())
            .fold(1.0_f64, |m, v| m.max(v.abs()));
        for i in 0..dim {
            for j in 0..i {
                if (rows[i][j] - rows[j][i]).abs() > 1e-12 * scale {
                    return Err(Error::InvalidInput(format!(
                        "matrix not symmetric at ({i},{j}): {} vs {}",
                        rows[i][j], rows[j][i]
                    )));
                }
            }
        }
        Ok(Self::from_lower_fn(dim, |i, j| 0.5 * (rows[i][j] + rows[j][i])))
    }

    /// Symmetric part `(B + B^T)/2` of a square general matrix.
    pub fn sym_part(b: &Mat) -> Self {
        assert_eq!(b.rows, b.cols, "sym_part needs a square matrix");
        Self::from_lower_fn(b.rows, |i, j| 0.5 * (b.get(i, j) + b.get(j, i)))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    /// Sets entries `(i, j)` and `(j, i)`.
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.dim + j] = v;
        self.data[j * self.dim + i] = v;
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.dim).map(|r| r.to_vec()).collect()
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.get(i, i)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    /// Frobenius inner product `tr(A B)`.
    pub fn inner(&self, other: &SymMat) -> f64 {
        assert_eq!(self.dim, other.dim, "dimension mismatch");
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn frob_norm(&self) -> f64 {
        self.inner(self).sqrt()
    }

    pub fn scale(&self, s: f64) -> SymMat {
        SymMat {
            dim: self.dim,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn add(&self, other: &SymMat) -> SymMat {
        self.axpy(1.0, other)
    }

    pub fn sub(&self, other: &SymMat) -> SymMat {
        self.axpy(-1.0, other)
    }

    /// `self + a * other`
    pub fn axpy(&self, a: f64, other: &SymMat) -> SymMat {
        assert_eq!(self.dim, other.dim, "dimension mismatch");
        SymMat {
            dim: self.dim,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(x, y)| x + a * y)
                .collect(),
        }
    }

    /// General product `A B` (not symmetric in general).
    pub fn matmul(&self, other: &SymMat) -> Mat {
        self.to_mat().mul(&other.to_mat())
    }

    pub fn to_mat(&self) -> Mat {
        Mat {
            rows: self.dim,
            cols: self.dim,
            data: self.data.clone(),
        }
    }

    /// `B^T A B` for a `d x m` matrix `B`.
    pub fn congruence_t(&self, b: &Mat) -> SymMat {
        assert_eq!(b.rows, self.dim, "dimension mismatch");
        let ab = self.to_mat().mul(b);
        let m = b.transpose().mul(&ab);
        SymMat::sym_part(&m)
    }

    /// `B A B^T` for a `d x m` matrix `B` and `m x m` matrix `A`.
    pub fn congruence(&self, b: &Mat) -> SymMat {
        assert_eq!(b.cols, self.dim, "dimension mismatch");
        let m = b.mul(&self.to_mat()).mul(&b.transpose());
        SymMat::sym_part(&m)
    }

    /// Parses the fixture text format: first line `d`, then `d` lines of
    /// `d` whitespace-separated decimals.
    pub fn parse_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let dim: usize = lines
            .next()
            .ok_or_else(|| Error::Parse("missing dimension line".into()))?
            .parse()
            .map_err(|e| Error::Parse(format!("bad dimension: {e}")))?;
        if dim == 0 {
            return Err(Error::Parse("dimension must be positive".into()));
        }
        let mut rows = Vec::with_capacity(dim);
        for i in 0..dim {
            let line = lines
                .next()
                .ok_or_else(|| Error::Parse(format!("missing row {i}")))?;
            let row = line
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Parse(format!("row {i}: {e}")))?;
            rows.push(row);
        }
        if lines.next().is_some() {
            return Err(Error::Parse("trailing content after matrix".into()));
        }
        Self::from_rows(&rows)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{}\n", self.dim);
        for r in self.rows() {
            let line: Vec<String> = r.iter().map(|v| format!("{v:e}")).collect();
            s.push_str(&line.join(" "));
            s.push('\n');
        }
        s
    }
}

impl fmt::Debug for SymMat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.rows()).finish()
    }
}

impl Serialize for SymMat {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for SymMat {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        SymMat::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

/// General dense row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::InvalidInput("ragged matrix rows".into()));
        }
        Ok(Mat {
            rows: r,
            cols: c,
            data: rows.concat(),
        })
    }

    /// Builds a `rows x cols.len()` matrix from column vectors.
    pub fn from_cols(rows: usize, cols: &[Vec<f64>]) -> Self {
        let mut m = Self::zeros(rows, cols.len());
        for (j, col) in cols.iter().enumerate() {
            assert_eq!(col.len(), rows, "column length mismatch");
            for (i, &v) in col.iter().enumerate() {
                m.set(i, j, v);
            }
        }
        m
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn transpose(&self) -> Mat {
        let mut t = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }

    pub fn mul(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows, "dimension mismatch in product");
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.get(k, j);
                }
            }
        }
        out
    }

    pub fn frob_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn sub(&self, other: &Mat) -> Mat {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    /// `|| M^T M - I ||_F`
    pub fn orthonormality_defect(&self) -> f64 {
        self.transpose().mul(self).sub(&Mat::identity(self.cols)).frob_norm()
    }

    /// Projector `B B^T` onto the column span (columns assumed orthonormal).
    pub fn range_projector(&self) -> SymMat {
        SymMat::from_lower_fn(self.rows, |i, j| {
            (0..self.cols).map(|k| self.get(i, k) * self.get(j, k)).sum()
        })
    }
}

/// Eigendecomposition `A = Q diag(values) Q^T`, values ascending.
#[derive(Clone, Debug)]
pub struct EigenDecomposition {
    pub values: Vec<f64>,
    pub vectors: Mat,
}

impl EigenDecomposition {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn min(&self) -> f64 {
        self.values[0]
    }

    pub fn max(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    /// `Q diag(f(lambda_i)) Q^T`
    pub fn map(&self, f: impl Fn(f64) -> f64) -> SymMat {
        let fv: Vec<f64> = self.values.iter().map(|&v| f(v)).collect();
        self.with_values(&fv)
    }

    /// `Q diag(values) Q^T` for replacement eigenvalues.
    pub fn with_values(&self, values: &[f64]) -> SymMat {
        assert_eq!(values.len(), self.dim());
        SymMat::from_diag(values).congruence(&self.vectors)
    }

    pub fn reconstruct(&self) -> SymMat {
        self.with_values(&self.values)
    }

    /// Threshold below which an eigenvalue counts as zero.
    pub fn zero_threshold(&self, tol_rel: f64) -> f64 {
        tol_rel * self.max().abs().max(1.0)
    }

    /// Columns of `Q` whose eigenvalues are at most the zero threshold.
    pub fn kernel_basis(&self, tol_rel: f64) -> Mat {
        let thr = self.zero_threshold(tol_rel);
        let cols: Vec<Vec<f64>> = (0..self.dim())
            .filter(|&i| self.values[i] <= thr)
            .map(|i| self.vectors.col(i))
            .collect();
        Mat::from_cols(self.dim(), &cols)
    }
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// Rotations are skipped once an off-diagonal entry is negligible relative
/// to the geometric mean of the corresponding diagonal entries, which gives
/// small eigenvalues of graded matrices to high relative accuracy.
pub fn eigen_sym(a: &SymMat) -> Result<EigenDecomposition> {
    if !a.is_finite() {
        return Err(Error::InvalidInput("matrix has non-finite entries".into()));
    }
    let n = a.dim;
    let mut m = a.data.clone();
    let mut v = Mat::identity(n);

    let mut converged = false;
    for _ in 0..MAX_JACOBI_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                if apq.abs() <= f64::EPSILON * 0.5 * (app.abs() * aqq.abs()).sqrt()
                    || apq.abs() < f64::MIN_POSITIVE
                {
                    m[p * n + q] = 0.0;
                    m[q * n + p] = 0.0;
                    continue;
                }
                rotated = true;
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta.is_finite() {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                } else {
                    0.5 / theta
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m[k * n + p];
                    let akq = m[k * n + q];
                    m[k * n + p] = c * akp - s * akq;
                    m[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[p * n + k];
                    let aqk = m[q * n + k];
                    m[p * n + k] = c * apk - s * aqk;
                    m[q * n + k] = s * apk + c * aqk;
                }
                m[p * n + q] = 0.0;
                m[q * n + p] = 0.0;
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i * n + j].powi(2))
            .sum::<f64>()
            .sqrt();
        return Err(Error::Convergence {
            iterations: MAX_JACOBI_SWEEPS,
            residual: off,
        });
    }

    let mut order: Vec<usize> = (0..n).collect();
    // stable: ties keep their original order
    order.sort_by(|&i, &j| m[i * n + i].total_cmp(&m[j * n + j]));
    let values: Vec<f64> = order.iter().map(|&i| m[i * n + i]).collect();
    let cols: Vec<Vec<f64>> = order.iter().map(|&i| v.col(i)).collect();
    Ok(EigenDecomposition {
        values,
        vectors: Mat::from_cols(n, &cols),
    })
}

/// Frobenius-nearest PSD matrix: clip negative eigenvalues to zero.
pub fn psd_project(a: &SymMat) -> Result<SymMat> {
    Ok(eigen_sym(a)?.map(|l| l.max(0.0)))
}

/// Number of eigenvalues above `tol_rel * max(1, lambda_max)`.
///
/// Fails with a domain error when `a` has an eigenvalue below the negative
/// of that threshold.
pub fn numerical_rank(a: &SymMat, tol_rel: f64) -> Result<usize> {
    if !(tol_rel > 0.0) {
        return Err(Error::InvalidInput(format!("rank tolerance must be positive, got {tol_rel}")));
    }
    let e = eigen_sym(a)?;
    rank_of(&e, tol_rel)
}

pub(crate) fn rank_of(e: &EigenDecomposition, tol_rel: f64) -> Result<usize> {
    let thr = e.zero_threshold(tol_rel);
    if e.min() < -thr {
        return domain(format!(
            "matrix is not PSD within tolerance (lambda_min = {:e})",
            e.min()
        ));
    }
    Ok(e.values.iter().filter(|&&l| l > thr).count())
}

/// Constant `C = eta^(1 - r/d) (r sigma_r)^(-r/d)` in
/// `det(R)^(1/d) <= C tr(R Z)^(r/d)` for PSD `R` with `||R||_F <= eta`,
/// where `r = rank(Z)` and `sigma_r` is the smallest positive eigenvalue.
pub fn det_trace_bound_constant(z: &SymMat, eta: f64) -> Result<f64> {
    if !(eta > 0.0) {
        return domain(format!("eta must be positive, got {eta}"));
    }
    let e = eigen_sym(z)?;
    let r = rank_of(&e, DEFAULT_RANK_TOL)?;
    if r == 0 {
        return domain("det/trace bound needs a nonzero Z");
    }
    let d = z.dim() as f64;
    let sigma_r = e.values[e.dim() - r];
    let rf = r as f64;
    Ok(eta.powf(1.0 - rf / d) * (rf * sigma_r).powf(-rf / d))
}

/// Sum of `log(lambda_i)`; domain error unless the matrix is positive definite.
pub fn log_det(a: &SymMat) -> Result<f64> {
    let e = eigen_sym(a)?;
    if e.min() <= 0.0 {
        return domain(format!(
            "log det needs a positive definite matrix (lambda_min = {:e})",
            e.min()
        ));
    }
    Ok(e.values.iter().map(|l| l.ln()).sum())
}

/// Inverse of a positive definite matrix.
pub fn inverse_pd(a: &SymMat) -> Result<SymMat> {
    let e = eigen_sym(a)?;
    if e.min() <= 0.0 {
        return domain("inverse_pd needs a positive definite matrix");
    }
    Ok(e.map(|l| 1.0 / l))
}

/// Orthonormal basis of the column span via modified Gram-Schmidt, with
/// columns whose residual norm falls below `tol` dropped.
pub fn orthonormal_basis(vectors: &[Vec<f64>], tol: f64) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for v in vectors {
        let mut w = v.clone();
        // two passes for numerical orthogonality
        for _ in 0..2 {
            for b in &basis {
                let c = dot(&w, b);
                for (wi, bi) in w.iter_mut().zip(b) {
                    *wi -= c * bi;
                }
            }
        }
        let nrm = dot(&w, &w).sqrt();
        let scale = dot(v, v).sqrt().max(1.0);
        if nrm > tol * scale {
            basis.push(w.into_iter().map(|x| x / nrm).collect());
        }
    }
    basis
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Symmetric matrix with independent standard normal entries on and below
/// the diagonal.
pub fn random_symmetric<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> SymMat {
    SymMat::from_lower_fn(dim, |_, _| rng.sample(StandardNormal))
}

/// Haar-ish random orthogonal matrix (Gram-Schmidt of a Gaussian matrix).
pub fn random_orthogonal<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Mat {
    loop {
        let cols: Vec<Vec<f64>> = (0..dim)
            .map(|_| (0..dim).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        let basis = orthonormal_basis(&cols, 1e-8);
        if basis.len() == dim {
            return Mat::from_cols(dim, &basis);
        }
    }
}

/// Random PSD matrix of exact rank `rank` with eigenvalues in `[lo, hi]`.
pub fn random_psd_with_rank<R: Rng + ?Sized>(
    dim: usize,
    rank: usize,
    lo: f64,
    hi: f64,
    rng: &mut R,
) -> SymMat {
    assert!(rank <= dim);
    let q = random_orthogonal(dim, rng);
    let mut vals = vec![0.0; dim];
    for v in vals.iter_mut().take(rank) {
        *v = rng.random_range(lo..=hi);
    }
    SymMat::from_diag(&vals).congruence(&q)
}
