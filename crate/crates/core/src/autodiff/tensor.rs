//! Dense row-major 2-D tensors of `f64`.
//!
//! Every value in the engine is a matrix; scalars are `1 x 1` and row vectors
//! are `1 x n`. Keeping a single rank keeps broadcasting rules small: each of
//! the two axes is either equal or `1`.

use std::fmt;

#[derive(Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor[{}x{}]", self.rows, self.cols)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

impl Tensor {
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(
            rows * cols,
            data.len(),
            "tensor data length {} does not match shape {rows}x{cols}",
            data.len()
        );
        Tensor { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::full(rows, cols, 0.0)
    }

    pub fn ones(rows: usize, cols: usize) -> Self {
        Self::full(rows, cols, 1.0)
    }

    pub fn full(rows: usize, cols: usize, value: f64) -> Self {
        Tensor { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor { rows: 1, cols: 1, data: vec![value] }
    }

    pub fn row(values: &[f64]) -> Self {
        Tensor { rows: 1, cols: values.len(), data: values.to_vec() }
    }

    pub fn column(values: &[f64]) -> Self {
        Tensor { rows: values.len(), cols: 1, data: values.to_vec() }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Tensor { rows, cols, data }
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
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row_slice(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// The single value of a `1 x 1` tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on a {}x{} tensor", self.rows, self.cols);
        self.data[0]
    }

    pub fn reshape(&self, rows: usize, cols: usize) -> Tensor {
        assert_eq!(rows * cols, self.data.len(), "reshape {}x{} -> {rows}x{cols}", self.rows, self.cols);
        Tensor { rows, cols, data: self.data.clone() }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        assert_eq!(self.shape(), other.shape());
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn transpose(&self) -> Tensor {
        let mut out = vec![0.0; self.data.len()];
        for r in 0..self.rows {
            for c in 0..self.cols {
                out[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        Tensor { rows: self.cols, cols: self.rows, data: out }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn add_assign_scaled(&mut self, other: &Tensor, scale: f64) {
        assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    /// `op(a) * op(b)` where `op` optionally transposes.
    pub fn matmul(a: &Tensor, b: &Tensor, ta: bool, tb: bool) -> Tensor {
        let (m, k) = if ta { (a.cols, a.rows) } else { (a.rows, a.cols) };
        let (k2, n) = if tb { (b.cols, b.rows) } else { (b.rows, b.cols) };
        assert_eq!(k, k2, "matmul inner dimensions differ: {:?}{} x {:?}{}", a.shape(), if ta { "ᵀ" } else { "" }, b.shape(), if tb { "ᵀ" } else { "" });
        let mut out = vec![0.0; m * n];
        if m > 0 && n > 0 && k > 0 {
            let (rsa, csa) = if ta { (1, a.cols as isize) } else { (a.cols as isize, 1) };
            let (rsb, csb) = if tb { (1, b.cols as isize) } else { (b.cols as isize, 1) };
            // SAFETY: strides describe the exact extents of `a`, `b` and `out`.
            unsafe {
                matrixmultiply::dgemm(
                    m,
                    k,
                    n,
                    1.0,
                    a.data.as_ptr(),
                    rsa,
                    csa,
                    b.data.as_ptr(),
                    rsb,
                    csb,
                    0.0,
                    out.as_mut_ptr(),
                    n as isize,
                    1,
                );
            }
        }
        Tensor { rows: m, cols: n, data: out }
    }

    /// Broadcast shape of two operands, if compatible.
    pub fn broadcast_shape(a: (usize, usize), b: (usize, usize)) -> Option<(usize, usize)> {
        fn axis(x: usize, y: usize) -> Option<usize> {
            if x == y {
                Some(x)
            } else if x == 1 {
                Some(y)
            } else if y == 1 {
                Some(x)
            } else {
                None
            }
        }
        Some((axis(a.0, b.0)?, axis(a.1, b.1)?))
    }

    pub fn broadcast_binary(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        if a.shape() == b.shape() {
            return a.zip_map(b, f);
        }
        let (rows, cols) = Self::broadcast_shape(a.shape(), b.shape()).unwrap_or_else(|| {
            panic!("shapes {:?} and {:?} do not broadcast", a.shape(), b.shape())
        });
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            let ra = if a.rows == 1 { 0 } else { r };
            let rb = if b.rows == 1 { 0 } else { r };
            let arow = &a.data[ra * a.cols..(ra + 1) * a.cols];
            let brow = &b.data[rb * b.cols..(rb + 1) * b.cols];
            match (a.cols == cols, b.cols == cols) {
                (true, true) => data.extend(arow.iter().zip(brow).map(|(&x, &y)| f(x, y))),
                (true, false) => data.extend(arow.iter().map(|&x| f(x, brow[0]))),
                (false, true) => data.extend(brow.iter().map(|&y| f(arow[0], y))),
                (false, false) => data.extend((0..cols).map(|_| f(arow[0], brow[0]))),
            }
        }
        Tensor { rows, cols, data }
    }

    pub fn broadcast_to(&self, rows: usize, cols: usize) -> Tensor {
        if self.shape() == (rows, cols) {
            return self.clone();
        }
        assert!(
            (self.rows == rows || self.rows == 1) && (self.cols == cols || self.cols == 1),
            "cannot broadcast {:?} to {rows}x{cols}",
            self.shape()
        );
        Tensor::from_fn(rows, cols, |r, c| {
            self.get(if self.rows == 1 { 0 } else { r }, if self.cols == 1 { 0 } else { c })
        })
    }

    /// Sum over broadcast axes so the result has shape `rows x cols`.
    pub fn sum_to(&self, rows: usize, cols: usize) -> Tensor {
        if self.shape() == (rows, cols) {
            return self.clone();
        }
        assert!(
            (rows == self.rows || rows == 1) && (cols == self.cols || cols == 1),
            "cannot reduce {:?} to {rows}x{cols}",
            self.shape()
        );
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..self.rows {
            let orow = if rows == 1 { 0 } else { r };
            for c in 0..self.cols {
                let ocol = if cols == 1 { 0 } else { c };
                out.data[orow * cols + ocol] += self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn concat_cols(parts: &[&Tensor]) -> Tensor {
        let rows = parts[0].rows;
        let cols: usize = parts.iter().map(|p| p.cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                assert_eq!(p.rows, rows, "concat_cols row mismatch");
                data.extend_from_slice(p.row_slice(r));
            }
        }
        Tensor { rows, cols, data }
    }

    pub fn concat_rows(parts: &[&Tensor]) -> Tensor {
        let cols = parts[0].cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            assert_eq!(p.cols, cols, "concat_rows column mismatch");
            data.extend_from_slice(&p.data);
            rows += p.rows;
        }
        Tensor { rows, cols, data }
    }

    pub fn slice_cols(&self, start: usize, end: usize) -> Tensor {
        assert!(start <= end && end <= self.cols);
        let w = end - start;
        let mut data = Vec::with_capacity(self.rows * w);
        for r in 0..self.rows {
            data.extend_from_slice(&self.row_slice(r)[start..end]);
        }
        Tensor { rows: self.rows, cols: w, data }
    }

    pub fn slice_rows(&self, start: usize, end: usize) -> Tensor {
        assert!(start <= end && end <= self.rows);
        Tensor {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }

    /// Place `self` into a zero matrix of width `total` starting at column `start`.
    pub fn pad_cols(&self, start: usize, total: usize) -> Tensor {
        assert!(start + self.cols <= total);
        let mut out = Tensor::zeros(self.rows, total);
        for r in 0..self.rows {
            out.data[r * total + start..r * total + start + self.cols].copy_from_slice(self.row_slice(r));
        }
        out
    }

    pub fn pad_rows(&self, start: usize, total: usize) -> Tensor {
        assert!(start + self.rows <= total);
        let mut out = Tensor::zeros(total, self.cols);
        out.data[start * self.cols..(start + self.rows) * self.cols].copy_from_slice(&self.data);
        out
    }

    /// Repeat each row `k` times consecutively: `[n, c] -> [n*k, c]`.
    pub fn repeat_rows(&self, k: usize) -> Tensor {
        let mut data = Vec::with_capacity(self.data.len() * k);
        for r in 0..self.rows {
            let row = self.row_slice(r);
            for _ in 0..k {
                data.extend_from_slice(row);
            }
        }
        Tensor { rows: self.rows * k, cols: self.cols, data }
    }

    /// Sum consecutive groups of `k` rows: `[n*k, c] -> [n, c]`.
    pub fn sum_row_groups(&self, k: usize) -> Tensor {
        assert!(k > 0 && self.rows.is_multiple_of(k), "{} rows not divisible into groups of {k}", self.rows);
        let n = self.rows / k;
        let mut out = Tensor::zeros(n, self.cols);
        for r in 0..self.rows {
            let o = (r / k) * self.cols;
            for (dst, src) in out.data[o..o + self.cols].iter_mut().zip(self.row_slice(r)) {
                *dst += src;
            }
        }
        out
    }

    /// Cumulative sum along each row.
    pub fn cumsum_cols(&self, exclusive: bool, reverse: bool) -> Tensor {
        let mut out = Tensor::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            let src = self.row_slice(r);
            let dst = &mut out.data[r * self.cols..(r + 1) * self.cols];
            let mut acc = 0.0;
            let n = self.cols;
            for i in 0..n {
                let j = if reverse { n - 1 - i } else { i };
                if exclusive {
                    dst[j] = acc;
                    acc += src[j];
                } else {
                    acc += src[j];
                    dst[j] = acc;
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_with_transposes() {
        let a = Tensor::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = Tensor::from_vec(3, 2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let c = Tensor::matmul(&a, &b, false, false);
        assert_eq!(c.data(), &[4.0, 5.0, 10.0, 11.0]);
        let ct = Tensor::matmul(&b, &a, true, true);
        assert_eq!(ct, c.transpose());
        let at = a.transpose();
        assert_eq!(Tensor::matmul(&at, &b, true, false), c);
        let bt = b.transpose();
        assert_eq!(Tensor::matmul(&a, &bt, false, true), c);
    }

    #[test]
    fn broadcast_and_reduce() {
        let a = Tensor::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let row = Tensor::row(&[10.0, 20.0]);
        let col = Tensor::column(&[1.0, 2.0]);
        assert_eq!(Tensor::broadcast_binary(&a, &row, |x, y| x + y).data(), &[11.0, 22.0, 13.0, 24.0]);
        assert_eq!(Tensor::broadcast_binary(&col, &row, |x, y| x * y).data(), &[10.0, 20.0, 20.0, 40.0]);
        assert_eq!(a.sum_to(1, 2).data(), &[4.0, 6.0]);
        assert_eq!(a.sum_to(2, 1).data(), &[3.0, 7.0]);
        assert_eq!(a.sum_to(1, 1).data(), &[10.0]);
    }

    #[test]
    fn cumsum_variants() {
        let a = Tensor::row(&[1.0, 2.0, 3.0]);
        assert_eq!(a.cumsum_cols(false, false).data(), &[1.0, 3.0, 6.0]);
        assert_eq!(a.cumsum_cols(true, false).data(), &[0.0, 1.0, 3.0]);
        assert_eq!(a.cumsum_cols(false, true).data(), &[6.0, 5.0, 3.0]);
        assert_eq!(a.cumsum_cols(true, true).data(), &[5.0, 3.0, 0.0]);
    }

    #[test]
    fn repeat_and_group_sum_are_adjoint_shapes() {
        let a = Tensor::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let r = a.repeat_rows(3);
        assert_eq!(r.shape(), (6, 2));
        assert_eq!(r.sum_row_groups(3).data(), &[3.0, 6.0, 9.0, 12.0]);
    }
}
