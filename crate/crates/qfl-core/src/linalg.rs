//! Small dense linear algebra: a row-major matrix, cyclic Jacobi
//! eigen-decomposition for symmetric matrices, and one-sided Jacobi SVD.
//!
//! Everything here targets desk-scale sizes (tens of rows/columns for the
//! decompositions), so the routines favour clarity over blocking or SIMD.

use std::fmt;
use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Off-diagonal convergence tolerance for the Jacobi sweeps.
pub const JACOBI_TOL: f64 = 1e-12;
const MAX_SWEEPS: usize = 100;

/// Dense row-major matrix of `f64`.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!("{} values cannot fill a {rows}x{cols} matrix", data.len())));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::Dimension(format!("row {i} has {} columns, expected {cols}", r.len())));
            }
            data.extend_from_slice(r);
        }
        Ok(Self { rows: rows.len(), cols, data })
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> + '_ {
        (0..self.rows).map(move |r| self.row(r))
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    /// Builds a new matrix from the listed rows, in order.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self { rows: indices.len(), cols: self.cols, data }
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t[(c, r)] = self[(r, c)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::Dimension(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::Dimension("matrix shapes differ".into()));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(Matrix { rows: self.rows, cols: self.cols, data })
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Largest absolute elementwise deviation from `other`.
    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// Column means.
    pub fn column_means(&self) -> Vec<f64> {
        let mut means = vec![0.0; self.cols];
        for c in 0..self.cols {
            let col: Vec<f64> = (0..self.rows).map(|r| self[(r, c)]).collect();
            means[c] = pairwise_sum(&col) / self.rows as f64;
        }
        means
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            writeln!(f, "  {:?}", self.row(r))?;
        }
        write!(f, "]")
    }
}

/// Pairwise (cascade) summation; the split points depend only on the slice
/// length, so the result is reproducible for a given ordering.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const BLOCK: usize = 8;
    if values.len() <= BLOCK {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Eigen-decomposition of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    /// Eigenvalues in non-increasing order.
    pub values: Vec<f64>,
    /// Eigenvectors stored as columns, matching `values`.
    pub vectors: Matrix,
}

/// Cyclic Jacobi eigen-decomposition.
///
/// Sweeps until the off-diagonal Frobenius mass drops below
/// [`JACOBI_TOL`] relative to the total. Each eigenvector is normalised so
/// that its largest-magnitude entry is positive.
pub fn symmetric_eigen(a: &Matrix) -> Result<SymmetricEigen> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::Dimension(format!("eigen needs a square matrix, got {}x{}", n, a.cols())));
    }
    let mut m = a.clone();
    let mut v = Matrix::identity(n);
    let total = m.frobenius_norm().max(f64::MIN_POSITIVE);

    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)] * m[(i, j)])
            .sum::<f64>()
            .sqrt();
        if off <= JACOBI_TOL * total {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(j, j)].total_cmp(&m[(i, i)]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| m[(i, i)]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = v.column(src);
        fix_sign(&mut col);
        for r in 0..n {
            vectors[(r, dst)] = col[r];
        }
    }
    Ok(SymmetricEigen { values, vectors })
}

/// Flips `v` so that its largest-magnitude entry is positive (first one wins ties).
/// Returns true when a flip happened.
pub(crate) fn fix_sign(v: &mut [f64]) -> bool {
    let mut best = 0usize;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v.get(best).is_some_and(|&x| x < 0.0) {
        v.iter_mut().for_each(|x| *x = -*x);
        true
    } else {
        false
    }
}

/// Full singular value decomposition `A = U · diag(sigma) · Vt`.
#[derive(Debug, Clone)]
pub struct Svd {
    /// `rows x rows` orthogonal.
    pub u: Matrix,
    /// `min(rows, cols)` singular values, non-increasing and non-negative.
    pub sigma: Vec<f64>,
    /// `cols x cols` orthogonal.
    pub vt: Matrix,
}

impl Svd {
    /// Rebuilds `U · Σ · Vt` keeping only the first `rank` singular values.
    pub fn reconstruct(&self, rank: usize) -> Matrix {
        compose_svd(&self.u, &self.sigma, &self.vt, rank)
    }
}

/// `U · diag(sigma[..rank]) · Vt` with remaining singular values treated as zero.
pub fn compose_svd(u: &Matrix, sigma: &[f64], vt: &Matrix, rank: usize) -> Matrix {
    let (m, n) = (u.rows(), vt.cols());
    let mut out = Matrix::zeros(m, n);
    for (k, &s) in sigma.iter().enumerate().take(rank) {
        if s == 0.0 {
            continue;
        }
        for i in 0..m {
            let us = u[(i, k)] * s;
            for j in 0..n {
                out[(i, j)] += us * vt[(k, j)];
            }
        }
    }
    out
}

/// One-sided (Hestenes) Jacobi SVD.
///
/// Columns of `U` are sign-normalised (largest-magnitude entry positive) with
/// the matching rows of `Vt` flipped to compensate.
pub fn svd(a: &Matrix) -> Result<Svd> {
    if a.rows() == 0 || a.cols() == 0 {
        return Err(Error::Dimension("svd of an empty matrix".into()));
    }
    if a.rows() < a.cols() {
        // A^T = U' S V'^T  =>  A = V' S U'^T
        let t = svd(&a.transpose())?;
        let mut u = t.vt.transpose();
        let mut vt = t.u.transpose();
        // re-establish the sign convention on the new U
        for k in 0..u.cols() {
            let mut col = u.column(k);
            if fix_sign(&mut col) {
                for r in 0..u.rows() {
                    u[(r, k)] = col[r];
                }
                if k < vt.rows() {
                    for c in 0..vt.cols() {
                        vt[(k, c)] = -vt[(k, c)];
                    }
                }
            }
        }
        return Ok(Svd { u, sigma: t.sigma, vt });
    }

    let (m, n) = (a.rows(), a.cols());
    let mut w = a.clone();
    let mut v = Matrix::identity(n);
    let scale = a.frobenius_norm();

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for i in 0..m {
                    alpha += w[(i, p)] * w[(i, p)];
                    beta += w[(i, q)] * w[(i, q)];
                    gamma += w[(i, p)] * w[(i, q)];
                }
                if gamma.abs() <= JACOBI_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let wp = w[(i, p)];
                    let wq = w[(i, q)];
                    w[(i, p)] = c * wp - s * wq;
                    w[(i, q)] = s * wp + c * wq;
                }
                for i in 0..n {
                    let vp = v[(i, p)];
                    let vq = v[(i, q)];
                    v[(i, p)] = c * vp - s * vq;
                    v[(i, q)] = s * vp + c * vq;
                }
            }
        }
        if !rotated {
            break;
        }
    }

    let norms: Vec<f64> = (0..n).map(|j| (0..m).map(|i| w[(i, j)] * w[(i, j)]).sum::<f64>().sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]).then(i.cmp(&j)));

    let tiny = scale * f64::EPSILON * (m.max(n) as f64);
    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut sigma = Vec::with_capacity(n);
    let mut vt = Matrix::zeros(n, n);
    for (k, &j) in order.iter().enumerate() {
        let s = norms[j];
        let mut vrow = v.column(j);
        if s > tiny {
            let mut ucol: Vec<f64> = (0..m).map(|i| w[(i, j)] / s).collect();
            if fix_sign(&mut ucol) {
                vrow.iter_mut().for_each(|x| *x = -*x);
            }
            u_cols.push(ucol);
            sigma.push(s);
        } else {
            sigma.push(0.0);
        }
        for c in 0..n {
            vt[(k, c)] = vrow[c];
        }
    }

    // complete U with an orthonormal basis for the remaining directions
    let rank = u_cols.len();
    complete_basis(&mut u_cols, m);
    let mut u = Matrix::zeros(m, m);
    for (k, col) in u_cols.iter().enumerate() {
        for i in 0..m {
            u[(i, k)] = col[i];
        }
    }
    // zero singular values keep whatever completion column sits in that slot;
    // fix its sign too so the convention holds for every column
    for k in rank..m {
        let mut col = u.column(k);
        if fix_sign(&mut col) {
            for i in 0..m {
                u[(i, k)] = col[i];
            }
        }
    }
    Ok(Svd { u, sigma, vt })
}

/// Extends `cols` (orthonormal, each of length `dim`) to a full orthonormal
/// basis of R^dim using modified Gram-Schmidt against the standard basis.
fn complete_basis(cols: &mut Vec<Vec<f64>>, dim: usize) {
    let mut e = 0;
    while cols.len() < dim && e < dim {
        let mut cand = vec![0.0; dim];
        cand[e] = 1.0;
        e += 1;
        for _ in 0..2 {
            for c in cols.iter() {
                let dot: f64 = c.iter().zip(&cand).map(|(a, b)| a * b).sum();
                cand.iter_mut().zip(c).for_each(|(x, ci)| *x -= dot * ci);
            }
        }
        let norm = cand.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            cand.iter_mut().for_each(|x| *x /= norm);
            cols.push(cand);
        }
    }
}

/// `‖MᵀM − I‖_max`, used to check orthogonality.
pub fn orthogonality_error(m: &Matrix) -> f64 {
    let mtm = m.transpose().matmul(m).expect("square product");
    mtm.max_abs_diff(&Matrix::identity(m.cols()))
}
