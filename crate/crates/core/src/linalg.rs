//! Dense real matrices, a cyclic-Jacobi symmetric eigensolver and a
//! one-sided Jacobi SVD.
//!
//! Everything here is sized for the spectra the diagnostics need: Gram
//! matrices of a few hundred rows at most.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major dense matrix of finite reals.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows.min(12) {
            writeln!(f, "  {:?}", &self.row(r)[..self.cols.min(12)])?;
        }
        write!(f, "]")
    }
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{} entries cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("entry {i} is not finite")));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            m.data[i * n + i] = d;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0 || self.cols == 0
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
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
        for r in 0..self.rows {
            let dst = &mut out.data[r * other.cols..(r + 1) * other.cols];
            for (k, &a) in self.row(r).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (d, &b) in dst.iter_mut().zip(other.row(k)) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::Dimension(format!(
                "vector of length {} against {} columns",
                v.len(),
                self.cols
            )));
        }
        Ok((0..self.rows)
            .map(|r| self.row(r).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect())
    }

    /// `ZᵀZ` (cols × cols).
    pub fn gram_cols(&self) -> Matrix {
        let n = self.cols;
        let mut g = Matrix::zeros(n, n);
        for r in 0..self.rows {
            let row = self.row(r);
            for i in 0..n {
                let a = row[i];
                if a == 0.0 {
                    continue;
                }
                let dst = &mut g.data[i * n..(i + 1) * n];
                for j in i..n {
                    dst[j] += a * row[j];
                }
            }
        }
        mirror_upper(&mut g);
        g
    }

    /// `ZZᵀ` (rows × rows).
    pub fn gram_rows(&self) -> Matrix {
        let n = self.rows;
        let mut g = Matrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                g.data[i * n + j] = dot(self.row(i), self.row(j));
            }
        }
        mirror_upper(&mut g);
        g
    }

    pub fn scale(&self, c: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * c).collect(),
        }
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(Error::Dimension("shape mismatch in subtraction".into()));
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        })
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Copy of the rows listed in `idx`, in that order.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }
}

fn mirror_upper(g: &mut Matrix) {
    let n = g.rows;
    for i in 0..n {
        for j in 0..i {
            g.data[i * n + j] = g.data[j * n + i];
        }
    }
}

/// Inner product with four independent partial sums, which lets the compiler
/// vectorize it. The summation order is fixed, so results are reproducible.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpectrumKind {
    SingularValues,
    Eigenvalues,
}

/// Descending spectrum of a matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralSummary {
    pub values: Vec<f64>,
    pub kind: SpectrumKind,
}

impl SpectralSummary {
    /// Sorts `values` in non-increasing order.
    pub fn new(mut values: Vec<f64>, kind: SpectrumKind) -> Self {
        values.sort_by(|a, b| b.total_cmp(a));
        Self { values, kind }
    }

    /// Spectrum of absolute values, re-sorted. For a symmetric matrix this
    /// turns eigenvalues into singular values.
    pub fn abs(&self) -> SpectralSummary {
        SpectralSummary::new(
            self.values.iter().map(|v| v.abs()).collect(),
            SpectrumKind::SingularValues,
        )
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

const SYMMETRY_TOL: f64 = 1e-9;
const MAX_SWEEPS: usize = 100;

fn symmetrized(a: &Matrix) -> Result<Matrix> {
    if a.rows != a.cols {
        return Err(Error::Dimension(format!(
            "eigendecomposition needs a square matrix, got {}x{}",
            a.rows, a.cols
        )));
    }
    let n = a.rows;
    let tol = SYMMETRY_TOL * a.max_abs();
    let mut s = a.clone();
    for i in 0..n {
        for j in (i + 1)..n {
            let (x, y) = (a.get(i, j), a.get(j, i));
            if (x - y).abs() > tol {
                return Err(Error::Shape(format!(
                    "matrix is not symmetric at ({i},{j}): {x} vs {y}"
                )));
            }
            let m = 0.5 * (x + y);
            s.set(i, j, m);
            s.set(j, i, m);
        }
    }
    Ok(s)
}

/// Cyclic Jacobi sweep on a symmetric matrix held in `a`. On return the
/// diagonal of `a` holds the eigenvalues; `vecs`, when given, accumulates
/// the rotations column-wise.
fn jacobi_in_place(a: &mut Matrix, mut vecs: Option<&mut Matrix>) {
    let n = a.rows;
    if n < 2 {
        return;
    }
    let scale = a.frobenius_norm();
    if scale == 0.0 {
        return;
    }
    for sweep in 0..MAX_SWEEPS {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a.get(p, q).powi(2);
            }
        }
        if off.sqrt() <= 1e-15 * scale {
            return;
        }
        for p in 0..n - 1 {
            for q in (p + 1)..n {
                let apq = a.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let app = a.get(p, p);
                let aqq = a.get(q, q);
                // Entries below the rounding level of both diagonals carry no
                // information once the first sweeps are done.
                let g = 100.0 * apq.abs();
                if sweep > 3 && app.abs() + g == app.abs() && aqq.abs() + g == aqq.abs() {
                    a.set(p, q, 0.0);
                    a.set(q, p, 0.0);
                    continue;
                }
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    if k == p || k == q {
                        continue;
                    }
                    let akp = a.get(k, p);
                    let akq = a.get(k, q);
                    let new_kp = c * akp - s * akq;
                    let new_kq = s * akp + c * akq;
                    a.set(k, p, new_kp);
                    a.set(p, k, new_kp);
                    a.set(k, q, new_kq);
                    a.set(q, k, new_kq);
                }
                a.set(p, p, app - t * apq);
                a.set(q, q, aqq + t * apq);
                a.set(p, q, 0.0);
                a.set(q, p, 0.0);
                if let Some(v) = vecs.as_deref_mut() {
                    for k in 0..n {
                        let vkp = v.get(k, p);
                        let vkq = v.get(k, q);
                        v.set(k, p, c * vkp - s * vkq);
                        v.set(k, q, s * vkp + c * vkq);
                    }
                }
            }
        }
    }
}

/// Eigenvalues (descending) and matching eigenvectors (as columns) of a
/// symmetric matrix.
pub fn sym_eigen(a: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    let mut s = symmetrized(a)?;
    let n = s.rows;
    let mut v = Matrix::identity(n);
    jacobi_in_place(&mut s, Some(&mut v));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| s.get(j, j).total_cmp(&s.get(i, i)));
    let values = order.iter().map(|&i| s.get(i, i)).collect();
    let mut vecs = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        for k in 0..n {
            vecs.set(k, dst, v.get(k, src));
        }
    }
    Ok((values, vecs))
}

/// All eigenvalues of a symmetric matrix, descending.
pub fn sym_eigvals(a: &Matrix) -> Result<SpectralSummary> {
    let mut s = symmetrized(a)?;
    jacobi_in_place(&mut s, None);
    let values = (0..s.rows).map(|i| s.get(i, i)).collect();
    Ok(SpectralSummary::new(values, SpectrumKind::Eigenvalues))
}

/// Eigenvalues of a Gram matrix, clamped at zero, sorted descending.
pub fn psd_eigvals(g: &Matrix) -> Result<Vec<f64>> {
    Ok(sym_eigvals(g)?.values.into_iter().map(|v| v.max(0.0)).collect())
}

/// Singular values of `z`, `min(rows, cols)` of them, descending.
///
/// One-sided Jacobi: columns of the narrower orientation are rotated until
/// mutually orthogonal, and their norms are the singular values. Unlike the
/// square root of a Gram spectrum this keeps small singular values accurate
/// relative to their own size.
pub fn singular_values(z: &Matrix) -> Result<SpectralSummary> {
    if z.is_empty() {
        return Err(Error::Dimension("singular values of an empty matrix".into()));
    }
    // vectors to orthogonalize, stored contiguously
    let (k, len, mut u) = if z.cols <= z.rows {
        (z.cols, z.rows, z.transpose().data)
    } else {
        (z.rows, z.cols, z.data.clone())
    };
    if u.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite matrix entry".into()));
    }
    for _sweep in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..k {
            for q in p + 1..k {
                let (head, tail) = u.split_at_mut(q * len);
                let up = &mut head[p * len..(p + 1) * len];
                let uq = &mut tail[..len];
                let alpha = norm_sq(up);
                let beta = norm_sq(uq);
                let gamma = dot(up, uq);
                if gamma == 0.0 || gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for (a, b) in up.iter_mut().zip(uq.iter_mut()) {
                    let (x, y) = (*a, *b);
                    *a = c * x - s * y;
                    *b = s * x + c * y;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let values = u.chunks_exact(len).map(|c| norm_sq(c).sqrt()).collect();
    Ok(SpectralSummary::new(values, SpectrumKind::SingularValues))
}
