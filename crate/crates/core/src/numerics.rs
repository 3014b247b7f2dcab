//! Dense linear-algebra kernels used by the decomposition and scoring stages.
//!
//! [`Matrix`] is a plain row-major `f64` buffer. The SVD and Cholesky
//! factorizations are delegated to `nalgebra`; everything else is written
//! directly against the row-major layout.

use std::ops::{Index, IndexMut};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Panics when `values.len() != rows * cols`.
    pub fn from_row_major(rows: usize, cols: usize, values: Vec<f64>) -> Self {
        assert_eq!(
            values.len(),
            rows * cols,
            "buffer of {} values cannot be a {rows}x{cols} matrix",
            values.len()
        );
        Self { rows, cols, values }
    }

    /// Panics on ragged input.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            assert_eq!(row.len(), cols, "ragged rows");
            values.extend_from_slice(row);
        }
        Self {
            rows: rows.len(),
            cols,
            values,
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                values.push(f(i, j));
            }
        }
        Self { rows, cols, values }
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

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    /// Panics on incompatible shapes.
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(
            self.cols, other.rows,
            "cannot multiply {:?} by {:?}",
            self.shape(),
            other.shape()
        );
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.values[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `selfᵀ · other` without materializing the transpose.
    pub fn t_matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.rows, other.rows, "row counts differ");
        let mut out = Matrix::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let b = other.row(k);
            for (i, &a) in self.row(k).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &bv) in out.row_mut(i).iter_mut().zip(b) {
                    *o += a * bv;
                }
            }
        }
        out
    }

    /// `selfᵀ · self`.
    pub fn gram(&self) -> Matrix {
        self.t_matmul(self)
    }

    pub fn hadamard(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.shape(), other.shape(), "hadamard shape mismatch");
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .collect();
        Matrix {
            rows: self.rows,
            cols: self.cols,
            values,
        }
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.shape(), other.shape(), "subtraction shape mismatch");
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a - b)
            .collect();
        Matrix {
            rows: self.rows,
            cols: self.cols,
            values,
        }
    }

    pub fn scale(&self, c: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            values: self.values.iter().map(|v| v * c).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub(crate) fn to_nalgebra(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.values)
    }

    pub(crate) fn from_nalgebra(m: &DMatrix<f64>) -> Matrix {
        Matrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.values[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.values[i * self.cols + j]
    }
}

/// Default relative singular-value cutoff: `max(rows, cols) · ε`.
pub fn default_pinv_tol(m: &Matrix) -> f64 {
    m.rows.max(m.cols) as f64 * f64::EPSILON
}

/// Thin SVD `m = U · diag(σ) · Vᵀ` truncated to singular values above
/// `tol · σ_max`.
pub struct TruncatedSvd {
    pub u: Matrix,
    pub sigma: Vec<f64>,
    pub v: Matrix,
}

pub fn truncated_svd(m: &Matrix, tol: f64) -> TruncatedSvd {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 || m.max_abs() == 0.0 {
        return TruncatedSvd {
            u: Matrix::zeros(rows, 0),
            sigma: Vec::new(),
            v: Matrix::zeros(cols, 0),
        };
    }
    let (u, sigma, v) = jacobi_svd(m);
    let sigma_max = sigma.first().copied().unwrap_or(0.0);
    let cutoff = tol * sigma_max;
    let keep = sigma.iter().take_while(|&&s| s > cutoff).count();
    TruncatedSvd {
        u: Matrix::from_fn(rows, keep, |i, c| u[c][i]),
        sigma: sigma[..keep].to_vec(),
        v: Matrix::from_fn(cols, keep, |i, c| v[c][i]),
    }
}

/// One-sided (Hestenes) Jacobi SVD. Returns the columns of `U` and `V` with
/// singular values sorted in decreasing order; `U` columns of zero singular
/// values are zero.
fn jacobi_svd(m: &Matrix) -> (Vec<Vec<f64>>, Vec<f64>, Vec<Vec<f64>>) {
    let (rows, cols) = m.shape();
    if rows < cols {
        let (v, s, u) = jacobi_svd(&m.transpose());
        return (u, s, v);
    }
    let mut a: Vec<Vec<f64>> = (0..cols).map(|j| (0..rows).map(|i| m[(i, j)]).collect()).collect();
    let mut v: Vec<Vec<f64>> = (0..cols)
        .map(|j| (0..cols).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>();
    let rotate = |cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64| {
        let (lo, hi) = cols.split_at_mut(q);
        for (x, y) in lo[p].iter_mut().zip(hi[0].iter_mut()) {
            let (xp, yq) = (*x, *y);
            *x = c * xp - s * yq;
            *y = s * xp + c * yq;
        }
    };
    for _ in 0..60 {
        let mut rotated = false;
        for p in 0..cols {
            for q in p + 1..cols {
                let alpha = dot(&a[p], &a[p]);
                let beta = dot(&a[q], &a[q]);
                let gamma = dot(&a[p], &a[q]);
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut a, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }
    let mut order: Vec<(f64, usize)> = a.iter().map(|col| dot(col, col).sqrt()).zip(0..).collect();
    order.sort_by(|x, y| y.0.total_cmp(&x.0));
    let sigma = order.iter().map(|&(s, _)| s).collect();
    let u = order
        .iter()
        .map(|&(s, j)| a[j].iter().map(|x| if s > 0.0 { x / s } else { 0.0 }).collect())
        .collect();
    let v = order.iter().map(|&(_, j)| v[j].clone()).collect();
    (u, sigma, v)
}

impl TruncatedSvd {
    /// `V · diag(1/σ) · Uᵀ`.
    pub fn pseudo_inverse(&self) -> Matrix {
        let mut out = Matrix::zeros(self.v.rows(), self.u.rows());
        for i in 0..self.v.rows() {
            let scaled: Vec<f64> = self.v.row(i).iter().zip(&self.sigma).map(|(v, s)| v / s).collect();
            for j in 0..self.u.rows() {
                out[(i, j)] = scaled.iter().zip(self.u.row(j)).map(|(a, b)| a * b).sum();
            }
        }
        out
    }
}

/// Moore–Penrose pseudoinverse. Singular values `≤ tol · σ_max` are
/// treated as zero.
pub fn pinv(m: &Matrix, tol: f64) -> Matrix {
    truncated_svd(m, tol).pseudo_inverse()
}

pub fn frobenius_norm(m: &Matrix) -> f64 {
    m.as_slice().iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Solves `X · (G + ridge·I) = rhs` for symmetric `G`.
///
/// Tries Cholesky first and falls back to the pseudoinverse when the
/// regularized system is not numerically positive definite.
pub fn solve_gram(g: &Matrix, rhs: &Matrix, ridge: f64) -> Matrix {
    let r = g.rows();
    assert_eq!(g.cols(), r, "gram matrix must be square");
    assert_eq!(rhs.cols(), r, "rhs width must match the gram matrix");

    let mut reg = g.to_nalgebra();
    for i in 0..r {
        reg[(i, i)] += ridge;
    }
    // (G + ρI) is symmetric, so X·(G+ρI) = RHS  ⇔  (G+ρI)·Xᵀ = RHSᵀ.
    let rhs_t = rhs.to_nalgebra().transpose();
    if let Some(chol) = reg.clone().cholesky() {
        let sol = chol.solve(&rhs_t);
        if sol.iter().all(|v| v.is_finite()) {
            return Matrix::from_nalgebra(&sol.transpose());
        }
    }
    let reg = Matrix::from_nalgebra(&reg);
    rhs.matmul(&pinv(&reg, default_pinv_tol(&reg)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
    }

    fn rel(a: &Matrix, b: &Matrix) -> f64 {
        frobenius_norm(&a.sub(b)) / frobenius_norm(b).max(f64::MIN_POSITIVE)
    }

    #[test]
    fn pinv_of_identity_is_identity() {
        let i = Matrix::identity(3);
        assert!(rel(&pinv(&i, default_pinv_tol(&i)), &i) < 1e-15);
    }

    #[test]
    fn pinv_of_singular_diagonal() {
        let m = Matrix::from_rows(&[vec![2.0, 0.0], vec![0.0, 0.0]]);
        let p = pinv(&m, default_pinv_tol(&m));
        assert_eq!(p, Matrix::from_rows(&[vec![0.5, 0.0], vec![0.0, 0.0]]));
    }

    #[test]
    fn pinv_of_zero_is_zero() {
        let m = Matrix::zeros(3, 2);
        assert_eq!(pinv(&m, 1e-12), Matrix::zeros(2, 3));
    }

    #[test]
    fn pinv_penrose_conditions_full_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random(5, 3, &mut rng);
        let p = pinv(&a, default_pinv_tol(&a));
        let ap = a.matmul(&p);
        let pa = p.matmul(&a);
        assert!(rel(&ap.matmul(&a), &a) < 1e-10);
        assert!(rel(&pa.matmul(&p), &p) < 1e-10);
        assert!(rel(&ap.transpose(), &ap) < 1e-10);
        assert!(rel(&pa.transpose(), &pa) < 1e-10);
    }

    #[test]
    fn pinv_of_orthonormal_columns_is_transpose() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = truncated_svd(&random(6, 3, &mut rng), 1e-12).u;
        assert!(rel(&pinv(&q, default_pinv_tol(&q)), &q.transpose()) < 1e-10);
    }

    #[test]
    fn pinv_twice_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random(4, 6, &mut rng);
        let p = pinv(&a, default_pinv_tol(&a));
        assert!(rel(&pinv(&p, default_pinv_tol(&p)), &a) < 1e-8);
    }

    #[test]
    fn frobenius_examples() {
        assert_eq!(frobenius_norm(&Matrix::zeros(2, 2)), 0.0);
        assert_eq!(frobenius_norm(&Matrix::from_rows(&[vec![3.0, 4.0]])), 5.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = random(7, 4, &mut rng);
        let mut sum = 0.0;
        for i in 0..7 {
            for j in 0..4 {
                sum += m[(i, j)] * m[(i, j)];
            }
        }
        let n = frobenius_norm(&m);
        assert!((n * n - sum).abs() <= 1e-12 * sum);
        assert!((frobenius_norm(&m.scale(-2.5)) - 2.5 * n).abs() < 1e-12 * n);
    }

    #[test]
    fn solve_gram_identity_and_scalar() {
        let rhs = Matrix::from_rows(&[vec![1.0, -2.0], vec![0.5, 3.0]]);
        assert_eq!(solve_gram(&Matrix::identity(2), &rhs, 0.0), rhs);
        let g = Matrix::identity(2).scale(2.0);
        let x = solve_gram(&g, &Matrix::from_rows(&[vec![4.0, 4.0]]), 0.0);
        assert!(rel(&x, &Matrix::from_rows(&[vec![2.0, 2.0]])) < 1e-15);
    }

    #[test]
    fn solve_gram_residual_on_random_spd() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..20 {
            let f = random(9, 4, &mut rng);
            let g = f.gram();
            let rhs = random(6, 4, &mut rng);
            let x = solve_gram(&g, &rhs, 0.0);
            assert!(frobenius_norm(&x.matmul(&g).sub(&rhs)) <= 1e-10 * frobenius_norm(&rhs));
        }
    }

    #[test]
    fn solve_gram_survives_singular_gram() {
        // rank-1 gram; pinv fallback must still return a finite solution.
        let g = Matrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]);
        let rhs = Matrix::from_rows(&[vec![2.0, 2.0]]);
        let x = solve_gram(&g, &rhs, 0.0);
        assert!(x.is_finite());
        assert!(rel(&x.matmul(&g), &rhs) < 1e-10);
    }
}
