//! Direct solvers for the linear systems produced by periodic assembly.
//!
//! Periodic finite-element matrices are banded except for the wrap-around
//! couplings in the top-right and bottom-left corners. [`CyclicBandedMatrix`]
//! factors such a matrix with row-pivoted Gaussian elimination while only
//! touching the band, the last `p` rows and the last `p` columns, plus any
//! fill that a row exchange with the bottom border drags into the band.
//! [`dense_solve`] is the plain O(n^3) route, used for tiny systems and as
//! an independent check.

use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("matrix is numerically singular: pivot {pivot:e} at column {column} (threshold {threshold:e})")]
    Singular {
        column: usize,
        pivot: f64,
        threshold: f64,
    },
    #[error("dimension mismatch: matrix is {n}x{n}, right-hand side has {rhs} entries")]
    Dimension { n: usize, rhs: usize },
    #[error("non-finite entry in linear system")]
    NonFinite,
}

/// Square matrix whose entries `a[i][j]` vanish unless the cyclic distance
/// between `i` and `j` is at most `half_bandwidth`.
#[derive(Clone, Debug)]
pub struct CyclicBandedMatrix<S> {
    n: usize,
    half_bandwidth: usize,
    data: Vec<S>,
}

impl<S: Scalar> CyclicBandedMatrix<S> {
    pub fn zeros(n: usize, half_bandwidth: usize) -> Self {
        Self {
            n,
            half_bandwidth,
            data: vec![S::zero(); n * n],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn half_bandwidth(&self) -> usize {
        self.half_bandwidth
    }

    fn cyclic_distance(&self, i: usize, j: usize) -> usize {
        let d = i.abs_diff(j);
        d.min(self.n - d)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> S {
        self.data[i * self.n + j]
    }

    /// Accumulate `v` into entry `(i, j)`.
    ///
    /// Panics if `(i, j)` lies outside the cyclic band.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: S) {
        assert!(
            self.cyclic_distance(i, j) <= self.half_bandwidth,
            "entry ({i}, {j}) outside cyclic band {}",
            self.half_bandwidth
        );
        self.data[i * self.n + j] += v;
    }

    pub fn norm_inf(&self) -> S {
        (0..self.n)
            .map(|i| {
                self.data[i * self.n..(i + 1) * self.n]
                    .iter()
                    .fold(S::zero(), |acc, v| acc + v.abs())
            })
            .fold(S::zero(), S::max)
    }

    pub fn mul_vec(&self, x: &[S]) -> Vec<S> {
        (0..self.n)
            .map(|i| {
                let row = &self.data[i * self.n..(i + 1) * self.n];
                row.iter()
                    .zip(x)
                    .fold(S::zero(), |acc, (a, b)| acc + *a * *b)
            })
            .collect()
    }

    /// Row-major copy of the full matrix.
    pub fn to_dense(&self) -> Vec<S> {
        self.data.clone()
    }

    /// Solve `A x = rhs` by Gaussian elimination with partial pivoting.
    pub fn solve(&self, rhs: &[S]) -> Result<Vec<S>, SolveError> {
        let n = self.n;
        if rhs.len() != n {
            return Err(SolveError::Dimension { n, rhs: rhs.len() });
        }
        if self.data.iter().chain(rhs).any(|v| !v.is_finite()) {
            return Err(SolveError::NonFinite);
        }
        let p = self.half_bandwidth;
        if 3 * p + 1 >= n {
            return dense_solve(&self.data, rhs, n);
        }

        let threshold = S::lit(S::SINGULAR_PIVOT_REL) * self.norm_inf();
        let mut a = self.data.clone();
        let mut b = rhs.to_vec();
        let border = n - p;

        // At column j, nonzeros below the diagonal live in rows j+1..=j+p and
        // in the bottom border rows. Row i holds nonzeros up to column
        // reach[i] plus the right border columns; reach grows when a row is
        // combined with (or swapped for) a border row.
        let mut reach: Vec<usize> = (0..n).map(|i| (i + p).min(n - 1)).collect();
        let mut cols: Vec<usize> = Vec::with_capacity(n);
        for j in 0..n {
            let row_band_end = (j + p).min(n - 1);
            let rows = (j + 1..=row_band_end).chain((border.max(row_band_end + 1))..n);

            let mut piv = j;
            let mut best = a[j * n + j].abs();
            for r in rows.clone() {
                let v = a[r * n + j].abs();
                if v > best {
                    best = v;
                    piv = r;
                }
            }
            if !(best > threshold) {
                return Err(SolveError::Singular {
                    column: j,
                    pivot: best.as_f64(),
                    threshold: threshold.as_f64(),
                });
            }
            if piv != j {
                for c in j..n {
                    a.swap(j * n + c, piv * n + c);
                }
                b.swap(j, piv);
                reach.swap(j, piv);
            }

            cols.clear();
            let end = reach[j];
            cols.extend(j + 1..=end);
            cols.extend(border.max(end + 1)..n);

            let pivot = a[j * n + j];
            for r in rows {
                let factor = a[r * n + j] / pivot;
                if factor == S::zero() {
                    continue;
                }
                a[r * n + j] = S::zero();
                for &c in &cols {
                    let upd = factor * a[j * n + c];
                    a[r * n + c] -= upd;
                }
                let upd = factor * b[j];
                b[r] -= upd;
                reach[r] = reach[r].max(end);
            }
        }

        // Back substitution over the same sparsity pattern.
        let mut x = vec![S::zero(); n];
        for j in (0..n).rev() {
            let end = reach[j];
            let mut acc = b[j];
            for c in (j + 1..=end).chain(border.max(end + 1)..n) {
                acc -= a[j * n + c] * x[c];
            }
            x[j] = acc / a[j * n + j];
        }
        Ok(x)
    }
}

/// Solve a dense row-major `n x n` system by Gaussian elimination with
/// partial pivoting.
pub fn dense_solve<S: Scalar>(matrix: &[S], rhs: &[S], n: usize) -> Result<Vec<S>, SolveError> {
    if rhs.len() != n || matrix.len() != n * n {
        return Err(SolveError::Dimension { n, rhs: rhs.len() });
    }
    let norm = (0..n)
        .map(|i| {
            matrix[i * n..(i + 1) * n]
                .iter()
                .fold(S::zero(), |s, v| s + v.abs())
        })
        .fold(S::zero(), S::max);
    let threshold = S::lit(S::SINGULAR_PIVOT_REL) * norm;
    let mut a = matrix.to_vec();
    let mut b = rhs.to_vec();
    for j in 0..n {
        let (piv, best) =
            (j..n)
                .map(|r| (r, a[r * n + j].abs()))
                .fold(
                    (j, S::zero()),
                    |acc, cur| if cur.1 > acc.1 { cur } else { acc },
                );
        if !(best > threshold) {
            return Err(SolveError::Singular {
                column: j,
                pivot: best.as_f64(),
                threshold: threshold.as_f64(),
            });
        }
        if piv != j {
            for c in 0..n {
                a.swap(j * n + c, piv * n + c);
            }
            b.swap(j, piv);
        }
        let pivot = a[j * n + j];
        for r in j + 1..n {
            let factor = a[r * n + j] / pivot;
            if factor == S::zero() {
                continue;
            }
            for c in j..n {
                let upd = factor * a[j * n + c];
                a[r * n + c] -= upd;
            }
            let upd = factor * b[j];
            b[r] -= upd;
        }
    }
    let mut x = vec![S::zero(); n];
    for j in (0..n).rev() {
        let mut acc = b[j];
        for c in j + 1..n {
            acc -= a[j * n + c] * x[c];
        }
        x[j] = acc / a[j * n + j];
    }
    Ok(x)
}
