//! Thin safe wrappers around the `matrixmultiply` GEMM kernels.
//!
//! All heavy reductions in this crate (convolution, whitening, covariance)
//! are accumulated in `f64`, so only the double-precision kernel is wrapped.
//! Matrices are row-major slices; transposition is expressed through the
//! stride arguments rather than by copying.

use crate::error::{Error, Result};

/// Operand view for [`dgemm`]: a row-major matrix, optionally transposed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Op {
    /// Use the matrix as stored.
    NoTrans,
    /// Use the transpose of the stored matrix.
    Trans,
}

impl Op {
    /// Row/column strides of a logically `rows x cols` operand stored
    /// row-major with `stored_cols` physical columns.
    fn strides(self, stored_cols: usize) -> (isize, isize) {
        match self {
            Op::NoTrans => (stored_cols as isize, 1),
            Op::Trans => (1, stored_cols as isize),
        }
    }
}

/// `c = alpha * op_a(a) * op_b(b) + beta * c` for row-major `f64` slices.
///
/// `op_a(a)` is `m x k` and `op_b(b)` is `k x n`; `c` is always `m x n`
/// row-major. Slice lengths are checked against those shapes.
pub fn dgemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    op_a: Op,
    b: &[f64],
    op_b: Op,
    beta: f64,
    c: &mut [f64],
) -> Result<()> {
    if a.len() != m * k || b.len() != k * n || c.len() != m * n {
        return Err(Error::LengthMismatch {
            dims: format!("gemm m={m} k={k} n={n}"),
            expected: m * k + k * n + m * n,
            got: a.len() + b.len() + c.len(),
        });
    }
    if m == 0 || k == 0 || n == 0 {
        return Err(Error::ZeroDim("gemm dimension".into()));
    }
    let (rsa, csa) = op_a.strides(match op_a {
        Op::NoTrans => k,
        Op::Trans => m,
    });
    let (rsb, csb) = op_b.strides(match op_b {
        Op::NoTrans => n,
        Op::Trans => k,
    });
    // Safety: lengths were checked above, the strides describe exactly the
    // checked layouts, and the slices cannot alias because `c` is the only
    // mutable reference.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    Ok(())
}

/// Convenience product `c = a * b` (row-major, no transposition, overwrite).
pub fn matmul(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) -> Result<()> {
    dgemm(m, k, n, 1.0, a, Op::NoTrans, b, Op::NoTrans, 0.0, c)
}
