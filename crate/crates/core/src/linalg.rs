//! Dense real linear algebra.
//!
//! Everything here is `f64`, row-major and allocation-light. Matrices in this
//! crate are small (latent widths of a few dozen), so the kernels favour
//! accuracy and determinism over blocking or SIMD.

use std::fmt;
use std::ops::{Index, IndexMut};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{mismatch, Error, Result};

/// Default power used by [`spectral_radius_estimate`].
pub const GELFAND_POWER: usize = 64;

const JACOBI_MAX_SWEEPS: usize = 100;
const JACOBI_TOL: f64 = 1e-12;
const RANK_TOL: f64 = 1e-12;
const SYMMETRY_TOL: f64 = 1e-10;

/// Row-major dense matrix.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
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
            m[(i, i)] = 1.0;
        }
        m
    }

    /// First `cols` columns of the `rows × rows` identity.
    pub fn eye(rows: usize, cols: usize) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows.min(cols) {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(mismatch("Matrix::from_vec", rows * cols, data.len()));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from nested rows. Panics on ragged input.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Self { rows: r, cols: c, data }
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    /// Column vector.
    pub fn column(values: &[f64]) -> Self {
        Self {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
        }
    }

    /// Entries drawn i.i.d. from `N(0, std²)`.
    pub fn random_normal<R: Rng + ?Sized>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Self {
        let data = (0..rows * cols)
            .map(|_| std * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Self { rows, cols, data }
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

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn set_col(&mut self, j: usize, values: &[f64]) {
        debug_assert_eq!(values.len(), self.rows);
        for (i, &v) in values.iter().enumerate() {
            self[(i, j)] = v;
        }
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        matmul(self, rhs)
    }

    /// `self · x`.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(mismatch("matvec", self.cols, x.len()));
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), x)).collect())
    }

    /// `selfᵀ · x`.
    pub fn t_matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.rows {
            return Err(mismatch("t_matvec", self.rows, x.len()));
        }
        let mut out = vec![0.0; self.cols];
        for (i, &xi) in x.iter().enumerate() {
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o += a * xi;
            }
        }
        Ok(out)
    }

    /// `self += a · bᵀ`.
    pub fn add_outer(&mut self, a: &[f64], b: &[f64]) {
        debug_assert_eq!(a.len(), self.rows);
        debug_assert_eq!(b.len(), self.cols);
        for (i, &ai) in a.iter().enumerate() {
            if ai == 0.0 {
                continue;
            }
            for (o, &bj) in self.row_mut(i).iter_mut().zip(b) {
                *o += ai * bj;
            }
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn add(&self, rhs: &Matrix) -> Result<Matrix> {
        self.zip_with(rhs, "add", |a, b| a + b)
    }

    pub fn sub(&self, rhs: &Matrix) -> Result<Matrix> {
        self.zip_with(rhs, "sub", |a, b| a - b)
    }

    fn zip_with(&self, rhs: &Matrix, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.shape() != rhs.shape() {
            return Err(mismatch(op, fmt_shape(self.shape()), fmt_shape(rhs.shape())));
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn frobenius_norm(&self) -> f64 {
        norm2(&self.data)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `‖selfᵀ·self − I‖_F`, the distance of the columns from orthonormality.
    pub fn orthonormality_defect(&self) -> f64 {
        let gram = matmul(&self.transpose(), self).expect("gram shape");
        gram.sub(&Matrix::identity(self.cols))
            .expect("identity shape")
            .frobenius_norm()
    }

    /// `‖self − selfᵀ‖_F`; infinite for non-square matrices.
    pub fn asymmetry(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        let mut acc = 0.0;
        for i in 0..self.rows {
            for j in 0..self.cols {
                let d = self[(i, j)] - self[(j, i)];
                acc += d * d;
            }
        }
        acc.sqrt()
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

pub(crate) fn fmt_shape((r, c): (usize, usize)) -> String {
    format!("{r}x{c}")
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Matrix product. Each entry accumulates over the inner index in increasing
/// order, so results are bit-identical to the textbook triple loop.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(mismatch("matmul", format!("{} inner rows", a.cols), b.rows));
    }
    let mut c = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let out = &mut c.data[i * b.cols..(i + 1) * b.cols];
        for k in 0..a.cols {
            let aik = a[(i, k)];
            for (o, &bkj) in out.iter_mut().zip(b.row(k)) {
                *o += aik * bkj;
            }
        }
    }
    Ok(c)
}

/// Thin Householder QR returning the `d × r` orthonormal factor.
///
/// Signs are fixed so the triangular factor has a nonnegative diagonal, which
/// makes the output unique and the map idempotent on orthonormal inputs.
pub fn qr_orthonormalize(a: &Matrix) -> Result<Matrix> {
    let (d, r) = a.shape();
    if r > d {
        return Err(mismatch("qr_orthonormalize", format!("cols <= {d}"), r));
    }
    let mut work = a.clone();
    let mut reflectors: Vec<Vec<f64>> = Vec::with_capacity(r);
    let mut diag_sign = vec![1.0; r];

    for j in 0..r {
        let x: Vec<f64> = (j..d).map(|i| work[(i, j)]).collect();
        let norm = norm2(&x);
        if norm < RANK_TOL {
            return Err(Error::RankDeficient { column: j, norm });
        }
        let alpha = if x[0] >= 0.0 { -norm } else { norm };
        // R_jj = alpha
        diag_sign[j] = alpha.signum();
        let mut v = x;
        v[0] -= alpha;
        let vnorm = norm2(&v);
        if vnorm > 0.0 {
            v.iter_mut().for_each(|e| *e /= vnorm);
            for col in j..r {
                let proj: f64 = (j..d).map(|i| v[i - j] * work[(i, col)]).sum();
                for i in j..d {
                    work[(i, col)] -= 2.0 * v[i - j] * proj;
                }
            }
        }
        reflectors.push(v);
    }

    let mut q = Matrix::eye(d, r);
    for (j, v) in reflectors.iter().enumerate().rev() {
        for col in 0..r {
            let proj: f64 = (j..d).map(|i| v[i - j] * q[(i, col)]).sum();
            if proj != 0.0 {
                for i in j..d {
                    q[(i, col)] -= 2.0 * v[i - j] * proj;
                }
            }
        }
    }
    for (j, &s) in diag_sign.iter().enumerate() {
        if s < 0.0 {
            for i in 0..d {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    Ok(q)
}

/// Singular value decomposition `A = U diag(s) Vᵀ` with `k = min(m, n)`
/// columns in `U` and `V`.
#[derive(Clone, Debug)]
pub struct Svd {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub v: Matrix,
}

impl Svd {
    /// Reassembles `U diag(s) Vᵀ`, keeping only the leading `rank` triplets.
    pub fn reconstruct(&self, rank: usize) -> Matrix {
        let k = rank.min(self.s.len());
        let mut out = Matrix::zeros(self.u.rows(), self.v.rows());
        for t in 0..k {
            let ut = self.u.col(t);
            let vt: Vec<f64> = self.v.col(t).iter().map(|x| x * self.s[t]).collect();
            out.add_outer(&ut, &vt);
        }
        out
    }
}

/// Singular values in descending order.
pub fn singular_values(a: &Matrix) -> Result<Vec<f64>> {
    Ok(svd(a)?.s)
}

/// One-sided (Hestenes) Jacobi SVD.
///
/// Rotations orthogonalise the columns of `A`, which diagonalises `AᵀA`
/// implicitly. Wide matrices are handled through their transpose.
pub fn svd(a: &Matrix) -> Result<Svd> {
    if !a.is_finite() {
        return Err(Error::NonFinite("svd input".into()));
    }
    if a.rows() < a.cols() {
        let t = svd(&a.transpose())?;
        return Ok(Svd { u: t.v, s: t.s, v: t.u });
    }
    let (m, n) = a.shape();
    // columns stored contiguously
    let mut w: Vec<Vec<f64>> = (0..n).map(|j| a.col(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();

    let mut converged = n < 2;
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = dot(&w[p], &w[p]);
                let beta = dot(&w[q], &w[q]);
                let gamma = dot(&w[p], &w[q]);
                if gamma == 0.0 || gamma.abs() <= JACOBI_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut w, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoConvergence {
            routine: "one-sided Jacobi SVD",
            iterations: JACOBI_MAX_SWEEPS,
        });
    }

    let mut order: Vec<(f64, usize)> = w.iter().enumerate().map(|(j, c)| (norm2(c), j)).collect();
    order.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));

    let smax = order.first().map_or(0.0, |o| o.0);
    let mut u = Matrix::zeros(m, n);
    let mut vm = Matrix::zeros(n, n);
    let mut s = Vec::with_capacity(n);
    let mut deficient = Vec::new();
    for (k, &(sigma, j)) in order.iter().enumerate() {
        s.push(sigma);
        vm.set_col(k, &v[j]);
        if sigma > smax * 1e-14 && sigma > 0.0 {
            let col: Vec<f64> = w[j].iter().map(|x| x / sigma).collect();
            u.set_col(k, &col);
        } else {
            deficient.push(k);
        }
    }
    complete_orthonormal_columns(&mut u, &deficient);
    Ok(Svd { u, s, v: vm })
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (head, tail) = cols.split_at_mut(q);
    let cp = &mut head[p];
    let cq = &mut tail[0];
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let a = *x;
        let b = *y;
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}

/// Fills the listed columns with unit vectors orthogonal to every other
/// column, drawing candidates from the standard basis.
fn complete_orthonormal_columns(u: &mut Matrix, missing: &[usize]) {
    if missing.is_empty() {
        return;
    }
    let (m, n) = u.shape();
    let mut filled: Vec<usize> = (0..n).filter(|j| !missing.contains(j)).collect();
    let mut basis = 0;
    for &j in missing {
        while basis < m {
            let mut cand = vec![0.0; m];
            cand[basis] = 1.0;
            basis += 1;
            for _ in 0..2 {
                for &k in &filled {
                    let col = u.col(k);
                    let proj = dot(&cand, &col);
                    cand.iter_mut().zip(&col).for_each(|(c, x)| *c -= proj * x);
                }
            }
            let nrm = norm2(&cand);
            if nrm > 1e-8 {
                cand.iter_mut().for_each(|c| *c /= nrm);
                u.set_col(j, &cand);
                filled.push(j);
                break;
            }
        }
    }
}

/// Gelfand estimate `‖A^k‖₂^{1/k}` of the spectral radius.
///
/// The estimate is biased upward for finite `k` (it never undershoots
/// `ρ(A)`) and converges to `ρ(A)` as `k → ∞`. Powers are renormalised every
/// step and the log-scale is tracked separately so large radii cannot
/// overflow.
pub fn spectral_radius_estimate(a: &Matrix, k: usize) -> Result<f64> {
    if !a.is_square() {
        return Err(mismatch(
            "spectral_radius_estimate",
            "square matrix",
            fmt_shape(a.shape()),
        ));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("power k must be at least 1".into()));
    }
    if !a.is_finite() {
        return Err(Error::NonFinite("spectral_radius_estimate input".into()));
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    let scale = a.frobenius_norm();
    if scale == 0.0 {
        return Ok(0.0);
    }
    let base = a.scaled(1.0 / scale);
    let mut power = base.clone();
    let mut log_scale = k as f64 * scale.ln();
    for _ in 1..k {
        power = matmul(&power, &base)?;
        let f = power.frobenius_norm();
        if f == 0.0 {
            return Ok(0.0);
        }
        power = power.scaled(1.0 / f);
        log_scale += f.ln();
    }
    let top = singular_values(&power)?[0];
    Ok(((log_scale + top.ln()) / k as f64).exp())
}

/// Eigenvalues of a symmetric matrix, descending (cyclic Jacobi rotations).
pub fn sym_eigenvalues(m: &Matrix) -> Result<Vec<f64>> {
    let defect = m.asymmetry();
    if !(defect < SYMMETRY_TOL) {
        return Err(Error::Asymmetric { defect });
    }
    let n = m.rows();
    let mut a = m.clone();
    // symmetrise exactly so rotations act on a symmetric array
    for i in 0..n {
        for j in i + 1..n {
            let avg = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = avg;
            a[(j, i)] = avg;
        }
    }
    let threshold = 1e-15 * a.frobenius_norm();
    let mut converged = n < 2;
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq.abs() <= threshold {
                    continue;
                }
                rotated = true;
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (1.0 + theta * theta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoConvergence {
            routine: "symmetric Jacobi eigensolver",
            iterations: JACOBI_MAX_SWEEPS,
        });
    }
    let mut eig: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    eig.sort_by(|x, y| y.total_cmp(x));
    Ok(eig)
}

/// Largest eigenvalue of a symmetric matrix.
pub fn sym_max_eig(m: &Matrix) -> Result<f64> {
    let eig = sym_eigenvalues(m)?;
    eig.first()
        .copied()
        .ok_or_else(|| Error::InvalidArgument("empty matrix".into()))
}
