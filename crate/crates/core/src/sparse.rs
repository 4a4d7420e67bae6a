//! Compressed sparse row matrix with nonnegative weights.
//!
//! Used for the tomographic system matrix, the blur operator, and the
//! kernel matrix. Rows are stored contiguously; a transpose copy is kept
//! so that adjoint application parallelizes over output elements with a
//! fixed per-element summation order (results independent of thread count).

use rayon::prelude::*;

#[derive(Debug, Clone)]
pub struct SparseMatrix {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
    // CSR of the transpose, built once.
    t_row_ptr: Vec<usize>,
    t_cols: Vec<u32>,
    t_vals: Vec<f64>,
    col_sums: Vec<f64>,
}

impl SparseMatrix {
    /// Build from per-row (col, weight) entry lists.
    pub fn from_rows(n_rows: usize, n_cols: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        assert_eq!(rows.len(), n_rows);
        let nnz: usize = rows.iter().map(Vec::len).sum();
        let mut row_ptr = Vec::with_capacity(n_rows + 1);
        let mut cols = Vec::with_capacity(nnz);
        let mut vals = Vec::with_capacity(nnz);
        row_ptr.push(0);
        for row in &rows {
            for &(c, v) in row {
                debug_assert!(c < n_cols && v >= 0.0);
                cols.push(c as u32);
                vals.push(v);
            }
            row_ptr.push(cols.len());
        }

        // Transpose: counting sort by column, preserving row order within
        // each column so the adjoint summation order is deterministic.
        let mut counts = vec![0usize; n_cols + 1];
        for &c in &cols {
            counts[c as usize + 1] += 1;
        }
        for i in 0..n_cols {
            counts[i + 1] += counts[i];
        }
        let t_row_ptr = counts.clone();
        let mut t_cols = vec![0u32; nnz];
        let mut t_vals = vec![0.0; nnz];
        let mut cursor = counts;
        for r in 0..n_rows {
            for k in row_ptr[r]..row_ptr[r + 1] {
                let c = cols[k] as usize;
                let dst = cursor[c];
                t_cols[dst] = r as u32;
                t_vals[dst] = vals[k];
                cursor[c] += 1;
            }
        }

        // Column sums accumulated in transpose-row order, so they equal
        // apply_adjoint(ones) bit for bit.
        let mut col_sums = vec![0.0; n_cols];
        for j in 0..n_cols {
            let mut acc = 0.0;
            for k in t_row_ptr[j]..t_row_ptr[j + 1] {
                acc += t_vals[k];
            }
            col_sums[j] = acc;
        }

        SparseMatrix {
            n_rows,
            n_cols,
            row_ptr,
            cols,
            vals,
            t_row_ptr,
            t_cols,
            t_vals,
            col_sums,
        }
    }

    /// Identity matrix of size n.
    pub fn identity(n: usize) -> Self {
        Self::from_rows(n, n, (0..n).map(|i| vec![(i, 1.0)]).collect())
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        self.cols[lo..hi]
            .iter()
            .zip(&self.vals[lo..hi])
            .map(|(&c, &v)| (c as usize, v))
    }

    pub fn column_sums(&self) -> &[f64] {
        &self.col_sums
    }

    /// y = A x, parallel over rows.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n_cols);
        (0..self.n_rows)
            .into_par_iter()
            .map(|i| {
                let mut acc = 0.0;
                for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                    acc += self.vals[k] * x[self.cols[k] as usize];
                }
                acc
            })
            .collect()
    }

    /// y = A^T r, parallel over columns of A (rows of the transpose).
    pub fn apply_adjoint(&self, r: &[f64]) -> Vec<f64> {
        assert_eq!(r.len(), self.n_rows);
        (0..self.n_cols)
            .into_par_iter()
            .map(|j| {
                let mut acc = 0.0;
                for k in self.t_row_ptr[j]..self.t_row_ptr[j + 1] {
                    acc += self.t_vals[k] * r[self.t_cols[k] as usize];
                }
                acc
            })
            .collect()
    }

    /// Dense copy, for test oracles and tiny systems only.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut dense = vec![vec![0.0; self.n_cols]; self.n_rows];
        for i in 0..self.n_rows {
            for (j, v) in self.row(i) {
                dense[i][j] += v;
            }
        }
        dense
    }

    /// Sparse triplet CSV (row,col,weight) used to persist kernel matrices.
    pub fn to_triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(self.nnz());
        for i in 0..self.n_rows {
            for (j, v) in self.row(i) {
                out.push((i, j, v));
            }
        }
        out
    }

    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Self {
        let mut rows = vec![Vec::new(); n_rows];
        for (i, j, v) in triplets {
            rows[i].push((j, v));
        }
        Self::from_rows(n_rows, n_cols, rows)
    }
}

/// A linear operator with nonnegative entries, an adjoint, and cached
/// column sums. The expectation-maximization machinery is generic over
/// this so the tomographic, blur, and kernel-composed systems share one
/// update implementation.
pub trait LinearOperator: Sync {
    fn n_rows(&self) -> usize;
    fn n_cols(&self) -> usize;
    fn apply(&self, x: &[f64]) -> Vec<f64>;
    fn apply_adjoint(&self, r: &[f64]) -> Vec<f64>;
    /// Per-column totals A.j = sum_i A_ij, cached.
    fn column_sums(&self) -> &[f64];
}

impl LinearOperator for SparseMatrix {
    fn n_rows(&self) -> usize {
        self.n_rows
    }
    fn n_cols(&self) -> usize {
        self.n_cols
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        SparseMatrix::apply(self, x)
    }
    fn apply_adjoint(&self, r: &[f64]) -> Vec<f64> {
        SparseMatrix::apply_adjoint(self, r)
    }
    fn column_sums(&self) -> &[f64] {
        &self.col_sums
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn apply_matches_dense() {
        let m = SparseMatrix::from_rows(
            3,
            4,
            vec![
                vec![(0, 1.0), (2, 2.0)],
                vec![],
                vec![(1, 0.5), (3, 1.5), (0, 0.25)],
            ],
        );
        let x = [1.0, 2.0, 3.0, 4.0];
        let y = m.apply(&x);
        assert_eq!(y, vec![7.0, 0.0, 7.25]);
        let r = [1.0, 10.0, 100.0];
        let z = m.apply_adjoint(&r);
        assert_eq!(z, vec![1.0 + 25.0, 50.0, 2.0, 150.0]);
    }

    #[test]
    fn column_sums_equal_adjoint_of_ones() {
        let m = SparseMatrix::from_rows(
            4,
            3,
            vec![
                vec![(0, 0.3), (1, 0.2)],
                vec![(2, 1.1)],
                vec![(0, 0.7), (2, 0.4)],
                vec![(1, 2.0)],
            ],
        );
        let ones = vec![1.0; 4];
        assert_eq!(m.apply_adjoint(&ones), m.column_sums().to_vec());
    }

    #[test]
    fn identity_roundtrip() {
        let m = SparseMatrix::identity(5);
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(m.apply(&x), x.to_vec());
        assert_eq!(m.apply_adjoint(&x), x.to_vec());
    }

    #[test]
    fn triplet_roundtrip() {
        let m = SparseMatrix::from_rows(2, 2, vec![vec![(0, 1.0), (1, 2.0)], vec![(0, 3.0)]]);
        let back = SparseMatrix::from_triplets(2, 2, m.to_triplets());
        assert_eq!(back.to_dense(), m.to_dense());
    }
}
