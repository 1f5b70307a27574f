//! Compressed sparse row storage for adjacency patterns and weighted matrices.

use ndarray::{Array2, ArrayView2, ArrayViewMut2, Axis};

use crate::error::{Error, Result};

/// Binary, symmetric adjacency pattern with an empty diagonal.
///
/// Each undirected edge `{i, j}` is stored in both rows `i` and `j`; column
/// indices inside a row are sorted and unique.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Adjacency {
    num_nodes: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
}

impl Adjacency {
    /// Builds the pattern from undirected pairs. Both directions are emitted
    /// and duplicates collapse.
    pub fn from_edges(num_nodes: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); num_nodes];
        for &(a, b) in edges {
            if a >= num_nodes || b >= num_nodes {
                return Err(Error::InvalidArgument(format!(
                    "edge ({a}, {b}) out of range for {num_nodes} nodes"
                )));
            }
            if a == b {
                return Err(Error::InvalidArgument(format!("self-loop on node {a}")));
            }
            rows[a].push(b);
            rows[b].push(a);
        }
        let mut indptr = Vec::with_capacity(num_nodes + 1);
        let mut indices = Vec::new();
        indptr.push(0);
        for mut row in rows {
            row.sort_unstable();
            row.dedup();
            indices.extend(row);
            indptr.push(indices.len());
        }
        Ok(Adjacency {
            num_nodes,
            indptr,
            indices,
        })
    }

    pub fn empty(num_nodes: usize) -> Self {
        Adjacency {
            num_nodes,
            indptr: vec![0; num_nodes + 1],
            indices: Vec::new(),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    /// Number of stored directed entries (twice the undirected edge count).
    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn num_undirected_edges(&self) -> usize {
        self.indices.len() / 2
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.indices[self.indptr[node]..self.indptr[node + 1]]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.indptr[node + 1] - self.indptr[node]
    }

    pub fn contains(&self, a: usize, b: usize) -> bool {
        self.neighbors(a).binary_search(&b).is_ok()
    }

    /// Undirected edges as `(i, j)` with `i < j`, in row-major order.
    pub fn undirected_edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.num_nodes).flat_map(move |i| {
            self.neighbors(i)
                .iter()
                .copied()
                .filter(move |&j| j > i)
                .map(move |j| (i, j))
        })
    }

    /// Pattern of `A + I` as a sparse matrix with unit values.
    pub fn with_self_loops(&self) -> SparseMatrix {
        let n = self.num_nodes;
        let mut indptr = Vec::with_capacity(n + 1);
        let mut indices = Vec::with_capacity(self.nnz() + n);
        indptr.push(0);
        for i in 0..n {
            let row = self.neighbors(i);
            let split = row.partition_point(|&j| j < i);
            indices.extend_from_slice(&row[..split]);
            indices.push(i);
            indices.extend_from_slice(&row[split..]);
            indptr.push(indices.len());
        }
        let values = vec![1.0; indices.len()];
        SparseMatrix {
            rows: n,
            cols: n,
            indptr,
            indices,
            values,
        }
    }

    /// Relabels nodes so that old node `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let edges: Vec<(usize, usize)> = self.undirected_edges().map(|(i, j)| (perm[i], perm[j])).collect();
        Adjacency::from_edges(self.num_nodes, &edges).expect("permutation preserves validity")
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut dense = Array2::zeros((self.num_nodes, self.num_nodes));
        for i in 0..self.num_nodes {
            for &j in self.neighbors(i) {
                dense[[i, j]] = 1.0;
            }
        }
        dense
    }
}

/// General CSR matrix with `f64` values.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds a matrix from `(row, col, value)` triplets. Duplicate positions
    /// are rejected.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        sorted.sort_by_key(|&(r, c, _)| (r, c));
        let mut indptr = vec![0usize; rows + 1];
        let mut indices = Vec::with_capacity(sorted.len());
        let mut values = Vec::with_capacity(sorted.len());
        for (pos, &(r, c, v)) in sorted.iter().enumerate() {
            if r >= rows || c >= cols {
                return Err(Error::InvalidArgument(format!(
                    "entry ({r}, {c}) out of range for {rows}x{cols} matrix"
                )));
            }
            if pos > 0 && sorted[pos - 1].0 == r && sorted[pos - 1].1 == c {
                return Err(Error::InvalidArgument(format!("duplicate entry ({r}, {c})")));
            }
            indptr[r + 1] += 1;
            indices.push(c);
            values.push(v);
        }
        for r in 0..rows {
            indptr[r + 1] += indptr[r];
        }
        Ok(SparseMatrix {
            rows,
            cols,
            indptr,
            indices,
            values,
        })
    }

    pub fn from_dense(dense: ArrayView2<'_, f64>) -> Self {
        let (rows, cols) = dense.dim();
        let mut indptr = Vec::with_capacity(rows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for row in dense.axis_iter(Axis(0)) {
            for (j, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    indices.push(j);
                    values.push(v);
                }
            }
            indptr.push(indices.len());
        }
        SparseMatrix {
            rows,
            cols,
            indptr,
            indices,
            values,
        }
    }

    /// Same sparsity pattern with new values, in storage order.
    pub fn with_values(&self, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), self.values.len(), "value count must match nnz");
        SparseMatrix {
            values,
            ..self.clone()
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn indptr(&self) -> &[usize] {
        &self.indptr
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let span = self.indptr[r]..self.indptr[r + 1];
        (&self.indices[span.clone()], &self.values[span])
    }

    /// Row index of every stored entry, in storage order.
    pub fn row_of_entries(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.nnz());
        for r in 0..self.rows {
            out.extend(std::iter::repeat_n(r, self.indptr[r + 1] - self.indptr[r]));
        }
        out
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        match cols.binary_search(&c) {
            Ok(pos) => vals[pos],
            Err(_) => 0.0,
        }
    }

    pub fn transpose(&self) -> SparseMatrix {
        let mut triplets = Vec::with_capacity(self.nnz());
        for r in 0..self.rows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                triplets.push((c, r, v));
            }
        }
        SparseMatrix::from_triplets(self.cols, self.rows, &triplets)
            .expect("transpose of a valid matrix is valid")
    }

    /// `self · dense`.
    pub fn mul_dense(&self, dense: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if dense.nrows() != self.cols {
            return Err(Error::shape(
                "sparse_dense_matmul",
                format!(
                    "{}x{} times {}x{}",
                    self.rows,
                    self.cols,
                    dense.nrows(),
                    dense.ncols()
                ),
            ));
        }
        let mut out = Array2::zeros((self.rows, dense.ncols()));
        self.mul_dense_into(dense, out.view_mut());
        Ok(out)
    }

    /// Accumulates `self · dense` into `out`.
    pub(crate) fn mul_dense_into(&self, dense: ArrayView2<'_, f64>, mut out: ArrayViewMut2<'_, f64>) {
        for (r, mut out_row) in out.axis_iter_mut(Axis(0)).enumerate() {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                out_row.scaled_add(v, &dense.row(c));
            }
        }
    }

    /// Accumulates `selfᵀ · dense` into `out`.
    pub(crate) fn transpose_mul_dense_into(
        &self,
        dense: ArrayView2<'_, f64>,
        mut out: ArrayViewMut2<'_, f64>,
    ) {
        for (r, dense_row) in dense.axis_iter(Axis(0)).enumerate() {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                out.row_mut(c).scaled_add(v, &dense_row);
            }
        }
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut dense = Array2::zeros((self.rows, self.cols));
        for r in 0..self.rows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                dense[[r, c]] = v;
            }
        }
        dense
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|r| self.row(r).1.iter().sum()).collect()
    }
}

#[cfg(test)]
mod tests {
    use ndarray::array;

    use super::*;

    #[test]
    fn symmetrizes_and_dedups() {
        let adj = Adjacency::from_edges(3, &[(0, 1), (1, 0), (0, 1)]).unwrap();
        assert_eq!(adj.nnz(), 2);
        assert!(adj.contains(0, 1) && adj.contains(1, 0));
        assert!(!adj.contains(1, 2));
        assert_eq!(adj.undirected_edges().collect::<Vec<_>>(), vec![(0, 1)]);
    }

    #[test]
    fn rejects_self_loops_and_out_of_range() {
        assert!(Adjacency::from_edges(3, &[(1, 1)]).is_err());
        assert!(Adjacency::from_edges(3, &[(0, 3)]).is_err());
    }

    #[test]
    fn self_loop_pattern_keeps_rows_sorted() {
        let adj = Adjacency::from_edges(3, &[(0, 2), (1, 2)]).unwrap();
        let tilde = adj.with_self_loops();
        assert_eq!(tilde.row(2).0, &[0, 1, 2]);
        assert_eq!(tilde.row(0).0, &[0, 2]);
        assert_eq!(tilde.nnz(), 4 + 3);
    }

    #[test]
    fn spmm_matches_dense_product() {
        let dense = array![[0.0, 2.0, 0.0], [1.0, 0.0, -1.0]];
        let sparse = SparseMatrix::from_dense(dense.view());
        let rhs = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]];
        let got = sparse.mul_dense(rhs.view()).unwrap();
        assert_eq!(got, dense.dot(&rhs));
        assert!(sparse.mul_dense(dense.view()).is_err());
    }

    #[test]
    fn triplets_reject_duplicates() {
        assert!(SparseMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (0, 0, 2.0)]).is_err());
        let m = SparseMatrix::from_triplets(2, 3, &[(1, 2, 4.0), (0, 1, 3.0)]).unwrap();
        assert_eq!(m.get(1, 2), 4.0);
        assert_eq!(m.transpose().get(2, 1), 4.0);
        assert_eq!(m.row_of_entries(), vec![0, 1]);
    }
}
