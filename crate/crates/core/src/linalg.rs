//! Dense matrix kernels and the structured random matrices used by the
//! shattering constructions.
//!
//! Vectors are plain `[f64]` slices; [`Matrix`] is row-major.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Default relative tolerance for [`spectral_norm`].
pub const SPECTRAL_TOL: f64 = 1e-10;
/// Default iteration budget for [`spectral_norm`].
pub const SPECTRAL_MAX_ITERS: usize = 10_000;
/// Default resampling budget for the randomized constructions.
pub const DEFAULT_MAX_TRIES: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
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
        Self::diag(&vec![1.0; n])
    }

    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        let mut m = Self::zeros(n, n);
        for (i, &v) in values.iter().enumerate() {
            m.set(i, i, v);
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension {
                context: "Matrix::from_vec",
                expected: rows * cols,
                found: data.len(),
            });
        }
        if let Some(bad) = data.iter().find(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "matrix entries must be finite, got {bad}"
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::Dimension {
                    context: "Matrix::from_rows",
                    expected: cols,
                    found: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::from_vec(rows.len(), cols, data)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
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

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn add_at(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] += v;
    }

    pub fn entries(&self) -> &[f64] {
        &self.data
    }

    pub fn entries_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    /// `self · x`.
    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::Dimension {
                context: "Matrix::mul_vec",
                expected: self.cols,
                found: x.len(),
            });
        }
        Ok(self.mul_vec_unchecked(x))
    }

    pub(crate) fn mul_vec_unchecked(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    /// `selfᵀ · y`.
    pub fn tr_mul_vec(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.rows {
            return Err(Error::Dimension {
                context: "Matrix::tr_mul_vec",
                expected: self.rows,
                found: y.len(),
            });
        }
        Ok(self.tr_mul_vec_unchecked(y))
    }

    pub(crate) fn tr_mul_vec_unchecked(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (i, &yi) in y.iter().enumerate() {
            if yi == 0.0 {
                continue;
            }
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o += yi * a;
            }
        }
        out
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::Dimension {
                context: "Matrix::matmul",
                expected: self.cols,
                found: other.rows,
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.add_at(i, j, a * other.get(k, j));
                }
            }
        }
        Ok(out)
    }

    pub fn scaled(&self, factor: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| x * factor).collect(),
        }
    }

    pub fn scale_in_place(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|x| *x *= factor);
    }

    /// Appends `column` on the right.
    pub fn with_column(&self, column: &[f64]) -> Result<Matrix> {
        if column.len() != self.rows {
            return Err(Error::Dimension {
                context: "Matrix::with_column",
                expected: self.rows,
                found: column.len(),
            });
        }
        Ok(Matrix::from_fn(self.rows, self.cols + 1, |i, j| {
            if j < self.cols {
                self.get(i, j)
            } else {
                column[i]
            }
        }))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub fn frobenius_norm(m: &Matrix) -> f64 {
    m.data.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Largest singular value by power iteration on `MᵀM`.
///
/// The start vector is the all-ones vector with index-dependent offsets.
/// The Rayleigh quotients `‖Mv‖²` increase monotonically; iteration stops
/// once the geometric extrapolation of the remaining increase (from the
/// ratio of the last two increments) drops below `tol` relative to the
/// current estimate. The result never exceeds the Frobenius norm.
pub fn spectral_norm(m: &Matrix, tol: f64, max_iters: usize) -> Result<f64> {
    if m.is_empty() {
        return Err(Error::InvalidParameter("spectral_norm of an empty matrix".into()));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tolerance must be positive, got {tol}")));
    }
    if m.data.iter().all(|&x| x == 0.0) {
        return Ok(0.0);
    }
    // A single row or column: the norm is the Euclidean norm.
    let fro = frobenius_norm(m);
    if m.rows == 1 || m.cols == 1 {
        return Ok(fro);
    }

    let n = m.cols;
    let mut v: Vec<f64> = (0..n)
        .map(|i| 1.0 + ((i as f64 + 1.0) * 0.618_033_988_749_895).fract() - 0.5)
        .collect();
    normalize(&mut v);

    let mut lambda = 0.0_f64;
    let mut prev_increment = f64::INFINITY;
    for _ in 0..max_iters {
        let w = m.mul_vec_unchecked(&v);
        let next = dot(&w, &w);
        let increment = next - lambda;
        lambda = next;

        let mut z = m.tr_mul_vec_unchecked(&w);
        let zn = norm(&z);
        if zn == 0.0 {
            // Start vector fell into the null space; restart along a coordinate.
            v = unit_with_largest_column(m);
            prev_increment = f64::INFINITY;
            lambda = 0.0;
            continue;
        }
        z.iter_mut().for_each(|x| *x /= zn);
        v = z;

        let rel = increment.max(0.0) / lambda;
        if rel <= 4.0 * f64::EPSILON {
            return Ok(lambda.sqrt().min(fro));
        }
        if prev_increment.is_finite() && prev_increment > 0.0 {
            let ratio = increment / prev_increment;
            if ratio < 1.0 {
                let remaining = rel * ratio / (1.0 - ratio);
                if remaining <= tol {
                    return Ok(lambda.sqrt().min(fro));
                }
            }
        }
        prev_increment = increment;
    }
    Err(Error::NonConvergence {
        what: "spectral_norm power iteration",
        iterations: max_iters,
    })
}

/// [`spectral_norm`] with the default tolerance and iteration budget.
pub fn spectral_norm_default(m: &Matrix) -> Result<f64> {
    spectral_norm(m, SPECTRAL_TOL, SPECTRAL_MAX_ITERS)
}

fn normalize(v: &mut [f64]) {
    let n = norm(v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

fn unit_with_largest_column(m: &Matrix) -> Vec<f64> {
    let best = (0..m.cols)
        .max_by(|&a, &b| {
            let na: f64 = (0..m.rows).map(|i| m.get(i, a).powi(2)).sum();
            let nb: f64 = (0..m.rows).map(|i| m.get(i, b).powi(2)).sum();
            na.total_cmp(&nb)
        })
        .unwrap_or(0);
    let mut v = vec![0.0; m.cols];
    v[best] = 1.0;
    v
}

/// `d × m` matrix with orthogonal columns of norm `b_x`.
///
/// A seeded Gaussian matrix is orthonormalized by two passes of modified
/// Gram-Schmidt and scaled by `b_x`.
pub fn orthogonal_columns(d: usize, m: usize, b_x: f64, seed: u64) -> Result<Matrix> {
    if m > d {
        return Err(Error::Dimension {
            context: "orthogonal_columns: need m <= d",
            expected: d,
            found: m,
        });
    }
    if !(b_x > 0.0) {
        return Err(Error::InvalidParameter(format!("b_x must be positive, got {b_x}")));
    }
    let mut rng = rng::seeded(seed);
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(m);
    while cols.len() < m {
        let mut v: Vec<f64> = (0..d).map(|_| rng::gaussian(&mut rng)).collect();
        for _ in 0..2 {
            for q in &cols {
                let p = dot(q, &v);
                v.iter_mut().zip(q).for_each(|(x, qi)| *x -= p * qi);
            }
        }
        let n = norm(&v);
        // Degenerate draws are astronomically rare; redraw.
        if n < 1e-8 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= n);
        cols.push(v);
    }
    Ok(Matrix::from_fn(d, m, |i, j| b_x * cols[j][i]))
}

/// `n × m` ±1 matrix whose columns are nearly balanced and whose spectral
/// norm is at most `c_spec(√n + √m)`.
///
/// Each column's fraction `p_i` of `+1` entries must satisfy
/// `|1/2 − p_i| ≤ alpha/8`. Uniform random sign matrices are drawn until
/// both conditions hold.
pub fn balanced_sign_matrix(
    n: usize,
    m: usize,
    alpha: f64,
    c_spec: f64,
    seed: u64,
    max_tries: usize,
) -> Result<Matrix> {
    if !(alpha > 0.0 && alpha <= 2.0) {
        return Err(Error::InvalidParameter(format!("alpha must lie in (0, 2], got {alpha}")));
    }
    if !(c_spec >= 1.0) {
        return Err(Error::InvalidParameter(format!("c_spec must be >= 1, got {c_spec}")));
    }
    if n == 0 || m == 0 {
        return Err(Error::InvalidParameter("balanced_sign_matrix needs n, m >= 1".into()));
    }
    let balance_cap = alpha / 8.0;
    let norm_cap = c_spec * ((n as f64).sqrt() + (m as f64).sqrt());
    let mut rng = rng::seeded(seed);
    let (mut balance_failures, mut norm_failures) = (0usize, 0usize);

    for _ in 0..max_tries {
        let v = Matrix::from_fn(n, m, |_, _| rng::sign(&mut rng));
        let balanced = (0..m).all(|j| {
            let plus = (0..n).filter(|&i| v.get(i, j) > 0.0).count();
            (0.5 - plus as f64 / n as f64).abs() <= balance_cap + 1e-12
        });
        if !balanced {
            balance_failures += 1;
            continue;
        }
        if spectral_norm_default(&v)? > norm_cap {
            norm_failures += 1;
            continue;
        }
        return Ok(v);
    }
    let dominant = if balance_failures >= norm_failures {
        "column balance"
    } else {
        "spectral norm"
    };
    Err(Error::RetriesExhausted {
        what: "balanced_sign_matrix",
        tries: max_tries,
        diagnostics: format!(
            "{dominant} failed most often: balance {balance_failures}, spectral norm {norm_failures}"
        ),
    })
}

/// Largest `|x_iᵀ x_j|` over distinct columns.
pub fn max_coherence(x: &Matrix) -> f64 {
    let cols: Vec<Vec<f64>> = (0..x.cols()).map(|j| x.column(j)).collect();
    let mut best = 0.0_f64;
    for i in 0..cols.len() {
        for j in i + 1..cols.len() {
            best = best.max(dot(&cols[i], &cols[j]).abs());
        }
    }
    best
}

/// `d × m` matrix with entries `±b_x/√d` whose columns are pairwise
/// incoherent (`|x_iᵀx_j| ≤ c_coh·b_x²·√(ln d / d)`) and whose spectral norm
/// is at most `c_spec·b_x·(1 + √(m/d))`.
pub fn incoherent_sign_matrix(
    d: usize,
    m: usize,
    b_x: f64,
    c_coh: f64,
    c_spec: f64,
    seed: u64,
    max_tries: usize,
) -> Result<Matrix> {
    if d < 2 || m < 1 {
        return Err(Error::InvalidParameter(format!(
            "incoherent_sign_matrix needs d >= 2 and m >= 1, got d={d}, m={m}"
        )));
    }
    if !(b_x > 0.0) {
        return Err(Error::InvalidParameter(format!("b_x must be positive, got {b_x}")));
    }
    let df = d as f64;
    let entry = b_x / df.sqrt();
    let coherence_cap = c_coh * b_x * b_x * (df.ln() / df).sqrt();
    let norm_cap = c_spec * b_x * (1.0 + (m as f64 / df).sqrt());
    let mut rng = rng::seeded(seed);
    let (mut coherence_failures, mut norm_failures) = (0usize, 0usize);

    for _ in 0..max_tries {
        let x = Matrix::from_fn(d, m, |_, _| entry * rng::sign(&mut rng));
        let coherence = max_coherence(&x);
        if coherence > coherence_cap {
            coherence_failures += 1;
            continue;
        }
        if spectral_norm_default(&x)? > norm_cap {
            norm_failures += 1;
            continue;
        }
        return Ok(x);
    }
    Err(Error::RetriesExhausted {
        what: "incoherent_sign_matrix",
        tries: max_tries,
        diagnostics: format!(
            "coherence cap {coherence_cap:.6} failed {coherence_failures} times, \
             spectral cap {norm_cap:.6} failed {norm_failures} times"
        ),
    })
}
