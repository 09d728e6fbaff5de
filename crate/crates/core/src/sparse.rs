//! Symmetric sparse matrices and a profile (skyline) Cholesky factorization
//! with reverse Cuthill-McKee ordering.

use std::collections::VecDeque;
use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Real symmetric matrix in compressed sparse row storage.
///
/// Both triangles are stored so that products are a single pass over the
/// rows. Column indices are sorted within each row.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSymMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseSymMatrix {
    /// Builds from upper- or lower-triangle triplets; `(i, j, v)` with `i != j`
    /// contributes to both `(i, j)` and `(j, i)`. Duplicates are summed in
    /// input order, so the result is deterministic.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for &(i, j, v) in triplets {
            rows[i].push((j, v));
            if i != j {
                rows[j].push((i, v));
            }
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            // stable sort keeps the summation order of duplicates fixed
            row.sort_by_key(|e| e.0);
            let mut last: Option<usize> = None;
            for (j, v) in row {
                if last == Some(j) {
                    *values.last_mut().unwrap() += v;
                } else {
                    col_idx.push(j);
                    values.push(v);
                    last = Some(j);
                }
            }
            row_ptr.push(col_idx.len());
        }
        SparseSymMatrix {
            n,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        SparseSymMatrix {
            n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: diag.to_vec(),
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()]
            .iter()
            .copied()
            .zip(self.values[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[r.clone()].binary_search(&j) {
            Ok(k) => self.values[r.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn trace(&self) -> f64 {
        self.diagonal().iter().sum()
    }

    pub fn is_diagonal(&self) -> bool {
        (0..self.n).all(|i| self.row(i).all(|(j, v)| j == i || v == 0.0))
    }

    /// `y = A x`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate().take(self.n) {
            *yi = self.row(i).map(|(j, v)| v * x[j]).sum();
        }
    }

    /// `xᵀ A x`.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        (0..self.n)
            .map(|i| x[i] * self.row(i).map(|(j, v)| v * x[j]).sum::<f64>())
            .sum()
    }

    /// Principal submatrix on `idx` (in the given order).
    pub fn submatrix(&self, idx: &[usize]) -> SparseSymMatrix {
        let mut map = vec![usize::MAX; self.n];
        for (k, &i) in idx.iter().enumerate() {
            map[i] = k;
        }
        let mut trip = Vec::new();
        for (k, &i) in idx.iter().enumerate() {
            for (j, v) in self.row(i) {
                let l = map[j];
                if l != usize::MAX && l >= k {
                    trip.push((k, l, v));
                }
            }
        }
        SparseSymMatrix::from_triplets(idx.len(), &trip)
    }

    /// `A + diag(d)`.
    pub fn add_diagonal(&self, d: &[f64]) -> SparseSymMatrix {
        let mut trip: Vec<(usize, usize, f64)> = Vec::with_capacity(self.nnz() + self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                if j >= i {
                    trip.push((i, j, v));
                }
            }
            trip.push((i, i, d[i]));
        }
        SparseSymMatrix::from_triplets(self.n, &trip)
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut d = nalgebra::DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                d[(i, j)] = v;
            }
        }
        d
    }

    /// MatrixMarket coordinate format, symmetric, lower triangle.
    pub fn to_matrix_market(&self) -> String {
        let mut entries = Vec::new();
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                if j <= i {
                    entries.push((i, j, v));
                }
            }
        }
        let mut s = String::from("%%MatrixMarket matrix coordinate real symmetric\n");
        let _ = writeln!(s, "{} {} {}", self.n, self.n, entries.len());
        for (i, j, v) in entries {
            let _ = writeln!(s, "{} {} {:.17e}", i + 1, j + 1, v);
        }
        s
    }
}

/// Reverse Cuthill-McKee ordering of the sparsity graph of `a`.
pub fn reverse_cuthill_mckee(a: &SparseSymMatrix) -> Vec<usize> {
    let n = a.dim();
    let degree: Vec<usize> = (0..n).map(|i| a.row(i).filter(|&(j, _)| j != i).count()).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let bfs_levels = |start: usize, visited: &[bool]| -> (usize, usize) {
        // returns (last vertex reached, eccentricity)
        let mut dist = vec![usize::MAX; n];
        let mut q = VecDeque::from([start]);
        dist[start] = 0;
        let mut last = start;
        while let Some(v) = q.pop_front() {
            last = v;
            for (w, _) in a.row(v) {
                if !visited[w] && dist[w] == usize::MAX {
                    dist[w] = dist[v] + 1;
                    q.push_back(w);
                }
            }
        }
        (last, dist[last])
    };
    while order.len() < n {
        let seed = (0..n)
            .filter(|&v| !visited[v])
            .min_by_key(|&v| (degree[v], v))
            .unwrap();
        // pseudo-peripheral start: a few sweeps of "go to the farthest vertex"
        let mut start = seed;
        let mut ecc = bfs_levels(start, &visited).1;
        for _ in 0..4 {
            let (far, _) = bfs_levels(start, &visited);
            let e = bfs_levels(far, &visited).1;
            if e <= ecc {
                break;
            }
            start = far;
            ecc = e;
        }
        visited[start] = true;
        let mut q = VecDeque::from([start]);
        while let Some(v) = q.pop_front() {
            order.push(v);
            let mut nbrs: Vec<usize> = a.row(v).map(|(w, _)| w).filter(|&w| !visited[w]).collect();
            nbrs.sort_by_key(|&w| (degree[w], w));
            for w in nbrs {
                visited[w] = true;
                q.push_back(w);
            }
        }
    }
    order.reverse();
    order
}

/// Cholesky factor `P A Pᵀ = L Lᵀ` stored row-wise in profile form.
#[derive(Debug, Clone)]
pub struct SkylineCholesky {
    n: usize,
    /// perm[new] = old
    perm: Vec<usize>,
    first: Vec<usize>,
    row_start: Vec<usize>,
    data: Vec<f64>,
}

impl SkylineCholesky {
    pub fn factor(a: &SparseSymMatrix) -> Result<Self> {
        let perm = reverse_cuthill_mckee(a);
        Self::factor_with_order(a, perm)
    }

    pub fn factor_with_order(a: &SparseSymMatrix, perm: Vec<usize>) -> Result<Self> {
        let n = a.dim();
        let mut inv = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut first: Vec<usize> = (0..n).collect();
        for new_i in 0..n {
            for (j, _) in a.row(perm[new_i]) {
                let new_j = inv[j];
                if new_j < first[new_i] {
                    first[new_i] = new_j;
                }
            }
        }
        let mut row_start = Vec::with_capacity(n + 1);
        let mut total = 0;
        for i in 0..n {
            row_start.push(total);
            total += i - first[i] + 1;
        }
        row_start.push(total);
        let mut data = vec![0.0; total];
        for i in 0..n {
            for (j, v) in a.row(perm[i]) {
                let nj = inv[j];
                if nj <= i {
                    data[row_start[i] + nj - first[i]] = v;
                }
            }
        }
        for i in 0..n {
            let fi = first[i];
            for j in fi..=i {
                let fj = first[j];
                let lo = fi.max(fj);
                let mut s = data[row_start[i] + j - fi];
                let ri = &data[row_start[i] + lo - fi..row_start[i] + j - fi];
                let rj = &data[row_start[j] + lo - fj..row_start[j] + j - fj];
                s -= ri.iter().zip(rj).map(|(x, y)| x * y).sum::<f64>();
                if j < i {
                    data[row_start[i] + j - fi] = s / data[row_start[j + 1] - 1];
                } else {
                    if !(s > 0.0) {
                        return Err(Error::InvalidInput(format!(
                            "matrix is not positive definite (pivot {s:e} at row {i})"
                        )));
                    }
                    data[row_start[i] + i - fi] = s.sqrt();
                }
            }
        }
        Ok(SkylineCholesky {
            n,
            perm,
            first,
            row_start,
            data,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Number of stored factor entries.
    pub fn profile_size(&self) -> usize {
        self.data.len()
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        let mut y: Vec<f64> = self.perm.iter().map(|&o| b[o]).collect();
        // L y = Pb
        for i in 0..n {
            let fi = self.first[i];
            let row = &self.data[self.row_start[i]..self.row_start[i + 1]];
            let s: f64 = row[..i - fi].iter().zip(&y[fi..i]).map(|(l, x)| l * x).sum();
            y[i] = (y[i] - s) / row[i - fi];
        }
        // Lᵀ x = y, column sweep over rows of L
        for i in (0..n).rev() {
            let fi = self.first[i];
            let row = &self.data[self.row_start[i]..self.row_start[i + 1]];
            y[i] /= row[i - fi];
            let yi = y[i];
            for (k, l) in row[..i - fi].iter().enumerate() {
                y[fi + k] -= l * yi;
            }
        }
        for (new, &old) in self.perm.iter().enumerate() {
            b[old] = y[new];
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}
