//! Dense small-dimension linear algebra.
//!
//! Vectors are plain `f64` slices. Matrices are symmetric, stored row-major
//! in [`SpdMatrix`]. Every solve goes through a [`Cholesky`] factor; an
//! explicit inverse is never formed.
//!
//! A factorization is rejected as singular when its smallest pivot falls
//! below `1e-12 * trace(A) / d`.

use crate::error::{Error, Result};

/// Relative threshold on the smallest Cholesky pivot.
pub const SINGULAR_RTOL: f64 = 1e-12;

/// Relative tolerance for the symmetry check on construction.
pub const SYMMETRY_RTOL: f64 = 1e-12;

/// A symmetric `d x d` matrix, positive definite whenever it induces a norm.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SpdMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = 1.0;
        }
        m
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m.data[i * diag.len() + i] = v;
        }
        m
    }

    /// Builds a matrix from row-major entries, checking symmetry.
    pub fn from_row_major(dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                found: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite matrix entry".into()));
        }
        let m = Self { dim, data };
        if !m.is_symmetric(SYMMETRY_RTOL) {
            return Err(Error::NotSymmetric);
        }
        Ok(m)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        let mut data = Vec::with_capacity(dim * dim);
        for row in rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::from_row_major(dim, data)
    }

    /// `sum_k w_k x_k x_k^T`.
    pub fn weighted_gram<X: AsRef<[f64]>>(dim: usize, arms: &[X], weights: &[f64]) -> Self {
        let mut m = Self::zeros(dim);
        for (x, &w) in arms.iter().zip(weights) {
            m.add_outer(x.as_ref(), w);
        }
        m
    }

    /// `sum_k x_k x_k^T`.
    pub fn gram<X: AsRef<[f64]>>(dim: usize, arms: &[X]) -> Self {
        let mut m = Self::zeros(dim);
        for x in arms {
            m.add_outer(x.as_ref(), 1.0);
        }
        m
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn fill_zero(&mut self) {
        self.data.iter_mut().for_each(|v| *v = 0.0);
    }

    /// In-place `A += scale * x x^T`. The upper triangle is updated and
    /// mirrored, so symmetry is exact.
    #[inline]
    pub fn add_outer(&mut self, x: &[f64], scale: f64) {
        let d = self.dim;
        assert_eq!(x.len(), d);
        for i in 0..d {
            let si = scale * x[i];
            if si == 0.0 {
                continue;
            }
            let row = &mut self.data[i * d + i..(i + 1) * d];
            for (r, &xj) in row.iter_mut().zip(&x[i..]) {
                *r += si * xj;
            }
        }
        self.mirror_upper();
    }

    fn mirror_upper(&mut self) {
        let d = self.dim;
        for i in 1..d {
            for j in 0..i {
                self.data[i * d + j] = self.data[j * d + i];
            }
        }
    }

    /// Overwrites `A` with `sum_k w_k x_k x_k^T`, the arms given
    /// coordinate-major: `cols[i * K + k]` is coordinate `i` of arm `k`.
    /// `scratch` needs room for `K` values.
    pub fn assign_weighted_gram_cols(&mut self, cols: &[f64], weights: &[f64], scratch: &mut [f64]) {
        let d = self.dim;
        let k = weights.len();
        assert_eq!(cols.len(), d * k);
        let wx = &mut scratch[..k];
        for i in 0..d {
            let ci = &cols[i * k..(i + 1) * k];
            for ((o, &c), &w) in wx.iter_mut().zip(ci).zip(weights) {
                *o = c * w;
            }
            for j in i..d {
                self.data[i * d + j] = dot(wx, &cols[j * k..(j + 1) * k]);
            }
        }
        self.mirror_upper();
    }

    /// Coordinate-major copy of `arms`, as used by
    /// [`SpdMatrix::assign_weighted_gram_cols`].
    pub fn columns<X: AsRef<[f64]>>(dim: usize, arms: &[X]) -> Vec<f64> {
        let k = arms.len();
        let mut cols = vec![0.0; dim * k];
        for (a, x) in arms.iter().enumerate() {
            for (i, &v) in x.as_ref().iter().enumerate() {
                cols[i * k + a] = v;
            }
        }
        cols
    }

    /// In-place `A += B`.
    pub fn add_assign(&mut self, other: &SpdMatrix) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn add_diagonal(&mut self, mu: f64) {
        for i in 0..self.dim {
            self.data[i * self.dim + i] += mu;
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim;
        (0..d)
            .map(|i| dot(&self.data[i * d..(i + 1) * d], x))
            .collect()
    }

    pub fn is_symmetric(&self, rtol: f64) -> bool {
        let d = self.dim;
        let scale = self.data.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        for i in 0..d {
            for j in (i + 1)..d {
                if (self.get(i, j) - self.get(j, i)).abs() > rtol * scale {
                    return false;
                }
            }
        }
        true
    }

    fn check_dim(&self, n: usize) -> Result<()> {
        if n != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: n,
            });
        }
        Ok(())
    }
}

/// Inner product, accumulated in four lanes.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    (acc[0] + acc[2]) + (acc[1] + acc[3]) + tail
}

#[inline]
pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Lower-triangular Cholesky factor `A = L L^T`.
///
/// The buffer can be refactored in place, which the sampling loop does once
/// per round without allocating.
#[derive(Debug, Clone)]
pub struct Cholesky {
    dim: usize,
    l: Vec<f64>,
}

impl Cholesky {
    pub fn with_dim(dim: usize) -> Self {
        Self {
            dim,
            l: vec![0.0; dim * dim],
        }
    }

    pub fn factor(a: &SpdMatrix) -> Result<Self> {
        let mut c = Self::with_dim(a.dim());
        c.refactor(a)?;
        Ok(c)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn refactor(&mut self, a: &SpdMatrix) -> Result<()> {
        let d = a.dim();
        if d != self.dim {
            self.dim = d;
            self.l = vec![0.0; d * d];
        }
        let threshold = SINGULAR_RTOL * a.trace() / d.max(1) as f64;
        let l = &mut self.l;
        for j in 0..d {
            let mut pivot = a.get(j, j);
            for k in 0..j {
                pivot -= l[j * d + k] * l[j * d + k];
            }
            if !(pivot >= threshold) || !(threshold > 0.0) || !pivot.is_finite() {
                return Err(Error::Singular { pivot, threshold });
            }
            let ljj = pivot.sqrt();
            l[j * d + j] = ljj;
            for i in (j + 1)..d {
                let mut s = a.get(i, j);
                for k in 0..j {
                    s -= l[i * d + k] * l[j * d + k];
                }
                l[i * d + j] = s / ljj;
            }
            for k in (j + 1)..d {
                l[j * d + k] = 0.0;
            }
        }
        Ok(())
    }

    /// Solves `L y = b` in place.
    #[inline]
    pub fn forward(&self, b: &mut [f64]) {
        let d = self.dim;
        let l = &self.l;
        for i in 0..d {
            let mut s = b[i];
            for k in 0..i {
                s -= l[i * d + k] * b[k];
            }
            b[i] = s / l[i * d + i];
        }
    }

    /// Solves `L^T z = y` in place.
    #[inline]
    pub fn backward(&self, y: &mut [f64]) {
        let d = self.dim;
        let l = &self.l;
        for i in (0..d).rev() {
            let mut s = y[i];
            for k in (i + 1)..d {
                s -= l[k * d + i] * y[k];
            }
            y[i] = s / l[i * d + i];
        }
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        self.forward(b);
        self.backward(b);
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    /// `x^T A^{-1} x = |L^{-1} x|^2`.
    pub fn inv_quad_form(&self, x: &[f64]) -> f64 {
        let mut y = x.to_vec();
        self.forward(&mut y);
        norm_sq(&y)
    }
}

/// `x^T A x`.
pub fn quad_form(x: &[f64], a: &SpdMatrix) -> Result<f64> {
    a.check_dim(x.len())?;
    let d = a.dim();
    let mut acc = 0.0;
    for i in 0..d {
        acc += x[i] * dot(&a.as_slice()[i * d..(i + 1) * d], x);
    }
    Ok(acc)
}

/// `x^T A^{-1} x`, via a Cholesky solve.
pub fn inv_quad_form(x: &[f64], a: &SpdMatrix) -> Result<f64> {
    a.check_dim(x.len())?;
    Ok(Cholesky::factor(a)?.inv_quad_form(x))
}

/// `A^{-1} b`.
pub fn solve(a: &SpdMatrix, b: &[f64]) -> Result<Vec<f64>> {
    a.check_dim(b.len())?;
    Ok(Cholesky::factor(a)?.solve(b))
}

/// `A + x x^T`.
pub fn rank_one_update(a: &SpdMatrix, x: &[f64]) -> Result<SpdMatrix> {
    a.check_dim(x.len())?;
    let mut out = a.clone();
    out.add_outer(x, 1.0);
    Ok(out)
}

/// Smallest eigenvalue of a symmetric matrix.
///
/// Cyclic Jacobi rotations until the off-diagonal mass is below
/// `1e-30` of the Frobenius norm squared; the smallest remaining diagonal
/// entry is returned. Accurate to a few ulps relative to `|A|` for the small
/// dimensions used here.
pub fn min_eigenvalue(a: &SpdMatrix) -> Result<f64> {
    if !a.is_symmetric(SYMMETRY_RTOL) {
        return Err(Error::NotSymmetric);
    }
    let d = a.dim();
    if d == 0 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            found: 0,
        });
    }
    let mut m = a.as_slice().to_vec();
    let frob: f64 = m.iter().map(|v| v * v).sum();
    if frob == 0.0 {
        return Ok(0.0);
    }
    for _sweep in 0..100 {
        let off: f64 = (0..d)
            .flat_map(|i| (0..d).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i * d + j] * m[i * d + j])
            .sum();
        if off <= 1e-30 * frob {
            break;
        }
        for p in 0..d {
            for q in (p + 1)..d {
                let apq = m[p * d + q];
                if apq == 0.0 {
                    continue;
                }
                let app = m[p * d + p];
                let aqq = m[q * d + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..d {
                    let akp = m[k * d + p];
                    let akq = m[k * d + q];
                    m[k * d + p] = c * akp - s * akq;
                    m[k * d + q] = s * akp + c * akq;
                }
                for k in 0..d {
                    let apk = m[p * d + k];
                    let aqk = m[q * d + k];
                    m[p * d + k] = c * apk - s * aqk;
                    m[q * d + k] = s * apk + c * aqk;
                }
            }
        }
    }
    Ok((0..d).map(|i| m[i * d + i]).fold(f64::INFINITY, f64::min))
}
