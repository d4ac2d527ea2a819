//! Fixed sparse linear maps over flattened tensors.
//!
//! Gathers, im2col for convolutions and bilinear resampling are all linear in
//! their input, so a single CSR operator (plus its lazily built transpose)
//! covers them and stays differentiable to any order.

use std::sync::OnceLock;

use super::tensor::Tensor;

#[derive(Debug, Clone)]
struct Csr {
    offsets: Vec<usize>,
    indices: Vec<usize>,
    weights: Vec<f64>,
}

impl Csr {
    fn apply(&self, input: &[f64], out: &mut [f64]) {
        for (row, o) in out.iter_mut().enumerate() {
            let (s, e) = (self.offsets[row], self.offsets[row + 1]);
            let mut acc = 0.0;
            for k in s..e {
                acc += self.weights[k] * input[self.indices[k]];
            }
            *o = acc;
        }
    }

    fn transpose(&self, in_len: usize) -> Csr {
        let mut counts = vec![0usize; in_len + 1];
        for &i in &self.indices {
            counts[i + 1] += 1;
        }
        for i in 0..in_len {
            counts[i + 1] += counts[i];
        }
        let mut cursor = counts.clone();
        let mut indices = vec![0; self.indices.len()];
        let mut weights = vec![0.0; self.weights.len()];
        for row in 0..self.offsets.len() - 1 {
            for k in self.offsets[row]..self.offsets[row + 1] {
                let col = self.indices[k];
                let slot = cursor[col];
                indices[slot] = row;
                weights[slot] = self.weights[k];
                cursor[col] += 1;
            }
        }
        Csr { offsets: counts, indices, weights }
    }
}

/// A linear map `out = M · in` from `in_len` to `out_len` flat entries.
#[derive(Debug)]
pub struct SparseMap {
    in_len: usize,
    out_len: usize,
    forward: Csr,
    transposed: OnceLock<Csr>,
}

impl SparseMap {
    /// Build from per-output-entry lists of `(input index, weight)`.
    pub fn from_rows(in_len: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let mut offsets = Vec::with_capacity(rows.len() + 1);
        let mut indices = Vec::new();
        let mut weights = Vec::new();
        offsets.push(0);
        for row in &rows {
            for &(i, w) in row {
                assert!(i < in_len, "sparse index {i} out of range {in_len}");
                indices.push(i);
                weights.push(w);
            }
            offsets.push(indices.len());
        }
        SparseMap {
            in_len,
            out_len: rows.len(),
            forward: Csr { offsets, indices, weights },
            transposed: OnceLock::new(),
        }
    }

    /// Pure gather: output entry `k` copies input `idx[k]`, or is zero for `None`.
    pub fn gather(in_len: usize, idx: &[Option<usize>]) -> Self {
        Self::from_rows(in_len, idx.iter().map(|i| i.map(|i| vec![(i, 1.0)]).unwrap_or_default()).collect())
    }

    pub fn in_len(&self) -> usize {
        self.in_len
    }

    pub fn out_len(&self) -> usize {
        self.out_len
    }

    fn transposed_csr(&self) -> &Csr {
        self.transposed.get_or_init(|| self.forward.transpose(self.in_len))
    }

    /// Apply the map (or its transpose) to a flattened tensor, reshaping the
    /// result to `rows x cols`.
    pub fn apply(&self, input: &Tensor, transpose: bool, rows: usize, cols: usize) -> Tensor {
        let (csr, expect_in, expect_out) = if transpose {
            (self.transposed_csr(), self.out_len, self.in_len)
        } else {
            (&self.forward, self.in_len, self.out_len)
        };
        assert_eq!(input.len(), expect_in, "sparse map input length");
        assert_eq!(rows * cols, expect_out, "sparse map output shape");
        let mut out = vec![0.0; expect_out];
        csr.apply(input.data(), &mut out);
        Tensor::from_vec(rows, cols, out)
    }
}
