//! Minimal row-major f64 matrix used for batched MLP evaluation.

/// Dense row-major matrix.
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

    pub fn from_rows(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len());
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

    pub fn fill_zero(&mut self) {
        self.data.fill(0.0);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// `out = a * b` (+= when `accumulate`). Shapes: a is m x k, b is k x n.
pub fn matmul(a: &Mat, b: &Mat, out: &mut Mat, accumulate: bool) {
    assert_eq!(a.cols, b.rows);
    assert_eq!(out.rows, a.rows);
    assert_eq!(out.cols, b.cols);
    let beta = if accumulate { 1.0 } else { 0.0 };
    unsafe {
        matrixmultiply::dgemm(
            a.rows,
            a.cols,
            b.cols,
            1.0,
            a.data.as_ptr(),
            a.cols as isize,
            1,
            b.data.as_ptr(),
            b.cols as isize,
            1,
            beta,
            out.data.as_mut_ptr(),
            out.cols as isize,
            1,
        );
    }
}

/// `out = a^T * b` (+= when `accumulate`). Shapes: a is k x m, b is k x n.
pub fn matmul_at_b(a: &Mat, b: &Mat, out: &mut Mat, accumulate: bool) {
    assert_eq!(a.rows, b.rows);
    assert_eq!(out.rows, a.cols);
    assert_eq!(out.cols, b.cols);
    let beta = if accumulate { 1.0 } else { 0.0 };
    unsafe {
        matrixmultiply::dgemm(
            a.cols,
            a.rows,
            b.cols,
            1.0,
            a.data.as_ptr(),
            1,
            a.cols as isize,
            b.data.as_ptr(),
            b.cols as isize,
            1,
            beta,
            out.data.as_mut_ptr(),
            out.cols as isize,
            1,
        );
    }
}

/// `out = a * b^T` (+= when `accumulate`). Shapes: a is m x k, b is n x k.
pub fn matmul_a_bt(a: &Mat, b: &Mat, out: &mut Mat, accumulate: bool) {
    assert_eq!(a.cols, b.cols);
    assert_eq!(out.rows, a.rows);
    assert_eq!(out.cols, b.rows);
    let beta = if accumulate { 1.0 } else { 0.0 };
    unsafe {
        matrixmultiply::dgemm(
            a.rows,
            a.cols,
            b.rows,
            1.0,
            a.data.as_ptr(),
            a.cols as isize,
            1,
            b.data.as_ptr(),
            1,
            b.cols as isize,
            beta,
            out.data.as_mut_ptr(),
            out.cols as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_mul(a: &Mat, b: &Mat) -> Mat {
        let mut out = Mat::zeros(a.rows, b.cols);
        for i in 0..a.rows {
            for j in 0..b.cols {
                let mut acc = 0.0;
                for k in 0..a.cols {
                    acc += a.data[i * a.cols + k] * b.data[k * b.cols + j];
                }
                out.data[i * b.cols + j] = acc;
            }
        }
        out
    }

    #[test]
    fn matmul_matches_naive() {
        let a = Mat::from_rows(3, 4, (0..12).map(|v| v as f64 * 0.3 - 1.0).collect());
        let b = Mat::from_rows(4, 2, (0..8).map(|v| (v as f64).sin()).collect());
        let mut out = Mat::zeros(3, 2);
        matmul(&a, &b, &mut out, false);
        let expect = naive_mul(&a, &b);
        for (x, y) in out.data.iter().zip(&expect.data) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn transposed_variants_match_naive() {
        let a = Mat::from_rows(5, 3, (0..15).map(|v| (v as f64 * 0.7).cos()).collect());
        let b = Mat::from_rows(5, 2, (0..10).map(|v| v as f64 * 0.1).collect());
        let mut out = Mat::zeros(3, 2);
        matmul_at_b(&a, &b, &mut out, false);
        // a^T is 3x5.
        let mut at = Mat::zeros(3, 5);
        for i in 0..5 {
            for j in 0..3 {
                at.data[j * 5 + i] = a.data[i * 3 + j];
            }
        }
        let expect = naive_mul(&at, &b);
        for (x, y) in out.data.iter().zip(&expect.data) {
            assert!((x - y).abs() < 1e-12);
        }

        let c = Mat::from_rows(4, 3, (0..12).map(|v| (v as f64).tan().atan()).collect());
        let mut out2 = Mat::zeros(5, 4);
        matmul_a_bt(&a, &c, &mut out2, false);
        let mut ct = Mat::zeros(3, 4);
        for i in 0..4 {
            for j in 0..3 {
                ct.data[j * 4 + i] = c.data[i * 3 + j];
            }
        }
        let expect2 = naive_mul(&a, &ct);
        for (x, y) in out2.data.iter().zip(&expect2.data) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn accumulate_adds_to_existing() {
        let a = Mat::from_rows(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let b = Mat::from_rows(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
        let mut out = Mat::from_rows(2, 2, vec![10.0; 4]);
        matmul(&a, &b, &mut out, true);
        assert_eq!(out.data, vec![11.0, 12.0, 13.0, 14.0]);
    }
}
