//! Dense kernels shared by the tape operations.

use crate::error::{Error, Result};

/// Strided read-only matrix view.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    pub rs: isize,
    pub cs: isize,
}

impl<'a> MatRef<'a> {
    pub fn new(data: &'a [f64], rows: usize, cols: usize) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self {
            data,
            rows,
            cols,
            rs: cols as isize,
            cs: 1,
        }
    }

    pub fn t(self) -> Self {
        Self {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
        }
    }
}

/// `c = alpha * a * b + beta * c`, with `c` dense row-major.
pub(crate) fn gemm(alpha: f64, a: MatRef, b: MatRef, beta: f64, c: &mut [f64]) {
    assert_eq!(a.cols, b.rows);
    let (m, k, n) = (a.rows, a.cols, b.cols);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the views index inside their slices for every (row, col) in
    // bounds, and `c` is an exclusive m x n row-major buffer.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.rs,
            a.cs,
            b.data.as_ptr(),
            b.rs,
            b.cs,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub(crate) fn matmul(a: MatRef, b: MatRef) -> Vec<f64> {
    let mut out = vec![0.0; a.rows * b.cols];
    gemm(1.0, a, b, 0.0, &mut out);
    out
}

pub(crate) fn transpose(data: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = data[i * cols + j];
        }
    }
    out
}

pub(crate) const MIN_PIVOT: f64 = 1e-10;

/// LU factorization with partial pivoting: row `i` of `P A` is row `perm[i]` of `A`.
#[derive(Clone, Debug)]
pub(crate) struct Lu {
    n: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
}

impl Lu {
    pub fn factor(a: &[f64], n: usize) -> Result<Self> {
        assert_eq!(a.len(), n * n);
        let mut lu = a.to_vec();
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let (p, pmax) = (k..n)
                .map(|i| (i, lu[i * n + k].abs()))
                .fold((k, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
            if !(pmax >= MIN_PIVOT) {
                return Err(Error::SingularMatrix {
                    column: k,
                    pivot: pmax,
                });
            }
            if p != k {
                for j in 0..n {
                    lu.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
            }
            let pivot = lu[k * n + k];
            for i in k + 1..n {
                let f = lu[i * n + k] / pivot;
                lu[i * n + k] = f;
                if f != 0.0 {
                    for j in k + 1..n {
                        lu[i * n + j] -= f * lu[k * n + j];
                    }
                }
            }
        }
        Ok(Self { n, lu, perm })
    }

    /// Solves `A X = B` for `B` of shape n x m.
    pub fn solve(&self, b: &[f64], m: usize) -> Vec<f64> {
        let n = self.n;
        let mut x = vec![0.0; n * m];
        for i in 0..n {
            x[i * m..(i + 1) * m].copy_from_slice(&b[self.perm[i] * m..(self.perm[i] + 1) * m]);
        }
        // L y = P b (unit diagonal)
        for i in 0..n {
            for k in 0..i {
                let l = self.lu[i * n + k];
                if l != 0.0 {
                    for j in 0..m {
                        x[i * m + j] -= l * x[k * m + j];
                    }
                }
            }
        }
        // U x = y
        for i in (0..n).rev() {
            for k in i + 1..n {
                let u = self.lu[i * n + k];
                if u != 0.0 {
                    for j in 0..m {
                        x[i * m + j] -= u * x[k * m + j];
                    }
                }
            }
            let d = self.lu[i * n + i];
            for j in 0..m {
                x[i * m + j] /= d;
            }
        }
        x
    }

    /// Solves `A^T X = B` for `B` of shape n x m.
    pub fn solve_transpose(&self, b: &[f64], m: usize) -> Vec<f64> {
        let n = self.n;
        let mut w = b.to_vec();
        // U^T z = b
        for i in 0..n {
            for k in 0..i {
                let u = self.lu[k * n + i];
                if u != 0.0 {
                    for j in 0..m {
                        w[i * m + j] -= u * w[k * m + j];
                    }
                }
            }
            let d = self.lu[i * n + i];
            for j in 0..m {
                w[i * m + j] /= d;
            }
        }
        // L^T v = z
        for i in (0..n).rev() {
            for k in i + 1..n {
                let l = self.lu[k * n + i];
                if l != 0.0 {
                    for j in 0..m {
                        w[i * m + j] -= l * w[k * m + j];
                    }
                }
            }
        }
        // x = P^T v
        let mut x = vec![0.0; n * m];
        for i in 0..n {
            x[self.perm[i] * m..(self.perm[i] + 1) * m].copy_from_slice(&w[i * m..(i + 1) * m]);
        }
        x
    }
}
