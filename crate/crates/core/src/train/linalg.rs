//! Row-major f64 matrices over `matrixmultiply::dgemm`.

#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols);
        Mat { rows, cols, data }
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// Strided view used to describe a gemm operand.
#[derive(Clone, Copy)]
pub(crate) struct View<'a> {
    pub data: &'a [f64],
    pub rs: usize,
    pub cs: usize,
}

impl<'a> View<'a> {
    /// Row-major `rows x cols` slice.
    pub fn normal(data: &'a [f64], cols: usize) -> Self {
        View {
            data,
            rs: cols,
            cs: 1,
        }
    }

    /// Transpose of a row-major slice with `cols` columns.
    pub fn transposed(data: &'a [f64], cols: usize) -> Self {
        View {
            data,
            rs: 1,
            cs: cols,
        }
    }

    fn span(&self, rows: usize, cols: usize) -> usize {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows - 1) * self.rs + (cols - 1) * self.cs + 1
        }
    }
}

/// `c (m x n, row-major) = a (m x k) . b (k x n) + beta * c`.
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: View, b: View, beta: f64, c: &mut [f64]) {
    assert!(a.data.len() >= a.span(m, k), "gemm: lhs too short");
    assert!(b.data.len() >= b.span(k, n), "gemm: rhs too short");
    assert!(c.len() >= m * n, "gemm: output too short");
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the asserts above guarantee every strided access stays inside
    // the borrowed slices, and `c` is uniquely borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_transposes() {
        // a: 2x3, b: 3x2
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [7.0, 8.0, 9.0, 10.0, 11.0, 12.0];
        let mut c = [0.0; 4];
        gemm(
            2,
            3,
            2,
            View::normal(&a, 3),
            View::normal(&b, 2),
            0.0,
            &mut c,
        );
        assert_eq!(c, [58.0, 64.0, 139.0, 154.0]);
        // a . a^T
        let mut c = [0.0; 4];
        gemm(
            2,
            3,
            2,
            View::normal(&a, 3),
            View::transposed(&a, 3),
            0.0,
            &mut c,
        );
        assert_eq!(c, [14.0, 32.0, 32.0, 77.0]);
        // a^T . a accumulated twice
        let mut c = [0.0; 9];
        gemm(
            3,
            2,
            3,
            View::transposed(&a, 3),
            View::normal(&a, 3),
            0.0,
            &mut c,
        );
        gemm(
            3,
            2,
            3,
            View::transposed(&a, 3),
            View::normal(&a, 3),
            1.0,
            &mut c,
        );
        assert_eq!(c[0], 2.0 * 17.0);
        assert_eq!(c[8], 2.0 * 45.0);
    }
}
