//! Dense least-squares kernels used by every reconstruction path.
//!
//! All solvers work on small dense systems (a few hundred unknowns at most).
//! Ordinary least squares goes through an SVD pseudo-inverse so that
//! rank-deficient participation matrices still produce the minimum-norm
//! solution. Weighted ridge regression uses the Tikhonov-shifted normal
//! equations and a Cholesky factorisation.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative singular-value cutoff below which a direction counts as null.
pub const SINGULAR_CUTOFF: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("empty matrix")]
    Empty,
    #[error("lambda must be nonnegative, got {0}")]
    NegativeLambda(f64),
    #[error("row weight {value} at row {row} outside [0, 1]")]
    WeightOutOfRange { row: usize, value: f64 },
    #[error("factorisation failed")]
    Singular,
}

/// Dense row-major matrix of finite reals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, LinalgError> {
        if rows * cols != data.len() {
            return Err(LinalgError::DimensionMismatch(format!(
                "{rows}x{cols} needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        let m = Matrix { rows, cols, data };
        m.check_finite()?;
        Ok(m)
    }

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
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, LinalgError> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(LinalgError::DimensionMismatch("ragged rows".into()));
        }
        Matrix::new(rows.len(), cols, rows.concat())
    }

    /// An `n x 1` matrix.
    pub fn column_vector(values: &[f64]) -> Result<Self, LinalgError> {
        Matrix::new(values.len(), 1, values.to_vec())
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

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        self.data[r * self.cols + c] = value;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
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
                t.data[c * self.rows + r] = self.get(r, c);
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix, LinalgError> {
        if self.cols != other.rows {
            return Err(LinalgError::DimensionMismatch(format!(
                "{}x{} times {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            let out_row = &mut out.data[r * other.cols..(r + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[r * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// Keeps the first `n` rows.
    pub fn top_rows(&self, n: usize) -> Matrix {
        let n = n.min(self.rows);
        Matrix {
            rows: n,
            cols: self.cols,
            data: self.data[..n * self.cols].to_vec(),
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    fn check_finite(&self) -> Result<(), LinalgError> {
        match self.data.iter().position(|x| !x.is_finite()) {
            Some(idx) => Err(LinalgError::NonFinite {
                row: idx / self.cols.max(1),
                col: idx % self.cols.max(1),
            }),
            None => Ok(()),
        }
    }

    fn to_na(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    fn from_na(m: &DMatrix<f64>) -> Matrix {
        let mut out = Matrix::zeros(m.nrows(), m.ncols());
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                out.data[r * m.ncols() + c] = m[(r, c)];
            }
        }
        out
    }
}

/// Output of a least-squares style solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    /// `N x k` solution.
    pub solution: Matrix,
    /// Frobenius norm of `B - A x` (unweighted).
    pub residual_norm: f64,
    /// Numerical rank of the (weighted) design matrix is below its column count.
    pub rank_deficient: bool,
}

fn pinv_with_rank(a: &Matrix) -> Result<(Matrix, usize), LinalgError> {
    if a.rows == 0 || a.cols == 0 {
        return Err(LinalgError::Empty);
    }
    a.check_finite()?;
    let svd = a.to_na().svd(true, true);
    let sigma_max = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let cutoff = SINGULAR_CUTOFF * sigma_max;
    let u = svd.u.as_ref().ok_or(LinalgError::Singular)?;
    let v_t = svd.v_t.as_ref().ok_or(LinalgError::Singular)?;
    let k = svd.singular_values.len();
    let mut pinv = DMatrix::<f64>::zeros(a.cols, a.rows);
    let mut rank = 0;
    for s in 0..k {
        let sv = svd.singular_values[s];
        if sigma_max == 0.0 || sv <= cutoff {
            continue;
        }
        rank += 1;
        let inv = 1.0 / sv;
        for i in 0..a.cols {
            let vi = v_t[(s, i)] * inv;
            if vi == 0.0 {
                continue;
            }
            for j in 0..a.rows {
                pinv[(i, j)] += vi * u[(j, s)];
            }
        }
    }
    Ok((Matrix::from_na(&pinv), rank))
}

/// Moore-Penrose pseudo-inverse via SVD with cutoff `1e-10 * sigma_max`.
pub fn pseudo_inverse(a: &Matrix) -> Result<Matrix, LinalgError> {
    pinv_with_rank(a).map(|(p, _)| p)
}

/// Numerical rank under the same cutoff as [`pseudo_inverse`].
pub fn numerical_rank(a: &Matrix) -> Result<usize, LinalgError> {
    pinv_with_rank(a).map(|(_, r)| r)
}

fn residual_norm(a: &Matrix, b: &Matrix, x: &Matrix) -> Result<f64, LinalgError> {
    let ax = a.matmul(x)?;
    Ok(b.data
        .iter()
        .zip(&ax.data)
        .map(|(p, q)| (p - q) * (p - q))
        .sum::<f64>()
        .sqrt())
}

fn check_rows(a: &Matrix, b: &Matrix) -> Result<(), LinalgError> {
    if a.rows == 0 || a.cols == 0 {
        return Err(LinalgError::Empty);
    }
    if a.rows != b.rows {
        return Err(LinalgError::DimensionMismatch(format!(
            "A has {} rows, B has {}",
            a.rows, b.rows
        )));
    }
    a.check_finite()?;
    b.check_finite()
}

/// Minimum-norm minimiser of `||B - A x||_F^2`.
pub fn ols_solve(a: &Matrix, b: &Matrix) -> Result<SolveReport, LinalgError> {
    check_rows(a, b)?;
    let (pinv, rank) = pinv_with_rank(a)?;
    let solution = pinv.matmul(b)?;
    let residual_norm = residual_norm(a, b, &solution)?;
    Ok(SolveReport {
        solution,
        residual_norm,
        rank_deficient: rank < a.cols,
    })
}

/// Minimiser of `sum_r v_r ||B_r - A_r x||^2 + lambda ||x||_F^2` with `v_r` in `[0, 1]`.
pub fn ridge_solve(
    a: &Matrix,
    b: &Matrix,
    row_weights: &[f64],
    lambda: f64,
) -> Result<SolveReport, LinalgError> {
    if let Some((row, &value)) = row_weights
        .iter()
        .enumerate()
        .find(|(_, w)| !(0.0..=1.0).contains(*w))
    {
        return Err(LinalgError::WeightOutOfRange { row, value });
    }
    weighted_ridge(a, b, row_weights, lambda)
}

/// Same objective as [`ridge_solve`] but accepts any nonnegative row weight,
/// treating it as a row multiplicity.
pub fn ridge_solve_multiplicity(
    a: &Matrix,
    b: &Matrix,
    row_weights: &[f64],
    lambda: f64,
) -> Result<SolveReport, LinalgError> {
    if let Some((row, &value)) = row_weights
        .iter()
        .enumerate()
        .find(|(_, w)| !(w.is_finite() && **w >= 0.0))
    {
        return Err(LinalgError::WeightOutOfRange { row, value });
    }
    weighted_ridge(a, b, row_weights, lambda)
}

fn weighted_ridge(
    a: &Matrix,
    b: &Matrix,
    row_weights: &[f64],
    lambda: f64,
) -> Result<SolveReport, LinalgError> {
    check_rows(a, b)?;
    if row_weights.len() != a.rows {
        return Err(LinalgError::DimensionMismatch(format!(
            "{} weights for {} rows",
            row_weights.len(),
            a.rows
        )));
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(LinalgError::NegativeLambda(lambda));
    }

    // sqrt(v) scaling turns the weighted problem into a plain one.
    let mut sa = a.clone();
    let mut sb = b.clone();
    for r in 0..a.rows {
        let s = row_weights[r].sqrt();
        sa.data[r * a.cols..(r + 1) * a.cols]
            .iter_mut()
            .for_each(|x| *x *= s);
        sb.data[r * b.cols..(r + 1) * b.cols]
            .iter_mut()
            .for_each(|x| *x *= s);
    }

    if lambda == 0.0 {
        let (pinv, rank) = pinv_with_rank(&sa)?;
        let solution = pinv.matmul(&sb)?;
        let residual_norm = residual_norm(a, b, &solution)?;
        return Ok(SolveReport {
            solution,
            residual_norm,
            rank_deficient: rank < a.cols,
        });
    }

    let rank = numerical_rank(&sa)?;
    let na = sa.to_na();
    let mut gram = na.transpose() * &na;
    for i in 0..a.cols {
        gram[(i, i)] += lambda;
    }
    let rhs = na.transpose() * sb.to_na();
    let chol = gram.cholesky().ok_or(LinalgError::Singular)?;
    // Each column is an independent back-substitution against the same factor.
    let mut solution = Matrix::zeros(a.cols, b.cols);
    for c in 0..b.cols {
        let col = chol.solve(&rhs.column(c).into_owned());
        for i in 0..a.cols {
            solution.set(i, c, col[i]);
        }
    }
    let residual_norm = residual_norm(a, b, &solution)?;
    Ok(SolveReport {
        solution,
        residual_norm,
        rank_deficient: rank < a.cols,
    })
}
