//! Symmetric block-sparse matrices with 4×4 blocks and their Cholesky
//! factorization under a minimum-degree ordering.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{Cholesky, Matrix4, Vector4};

/// Symmetric matrix stored as its diagonal blocks and strictly lower blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockSymmetric {
    diag: Vec<Matrix4<f64>>,
    /// `lower[i][j]` is block (i, j) with j < i.
    lower: Vec<BTreeMap<usize, Matrix4<f64>>>,
}

impl BlockSymmetric {
    pub fn zeros(n: usize) -> Self {
        BlockSymmetric {
            diag: vec![Matrix4::zeros(); n],
            lower: vec![BTreeMap::new(); n],
        }
    }

    pub fn n(&self) -> usize {
        self.diag.len()
    }

    /// Adds `m` to block (i, j) and, by symmetry, `mᵀ` to block (j, i).
    pub fn add(&mut self, i: usize, j: usize, m: &Matrix4<f64>) {
        use std::cmp::Ordering::*;
        match i.cmp(&j) {
            Equal => self.diag[i] += m,
            Greater => *self.lower[i].entry(j).or_insert_with(Matrix4::zeros) += m,
            Less => *self.lower[j].entry(i).or_insert_with(Matrix4::zeros) += m.transpose(),
        }
    }

    pub fn diag(&self, i: usize) -> &Matrix4<f64> {
        &self.diag[i]
    }

    pub fn diag_mut(&mut self, i: usize) -> &mut Matrix4<f64> {
        &mut self.diag[i]
    }

    pub fn block(&self, i: usize, j: usize) -> Matrix4<f64> {
        use std::cmp::Ordering::*;
        match i.cmp(&j) {
            Equal => self.diag[i],
            Greater => self.lower[i].get(&j).copied().unwrap_or_else(Matrix4::zeros),
            Less => self.lower[j].get(&i).map_or_else(Matrix4::zeros, |m| m.transpose()),
        }
    }

    pub fn mul_vec(&self, x: &[Vector4<f64>]) -> Vec<Vector4<f64>> {
        let mut y: Vec<Vector4<f64>> = self.diag.iter().zip(x).map(|(d, v)| d * v).collect();
        for (i, row) in self.lower.iter().enumerate() {
            for (&j, m) in row {
                y[i] += m * x[j];
                y[j] += m.transpose() * x[i];
            }
        }
        y
    }

    /// Block adjacency, excluding the diagonal.
    fn adjacency(&self) -> Vec<BTreeSet<usize>> {
        let mut adj = vec![BTreeSet::new(); self.n()];
        for (i, row) in self.lower.iter().enumerate() {
            for &j in row.keys() {
                adj[i].insert(j);
                adj[j].insert(i);
            }
        }
        adj
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let n = self.n();
        let mut m = nalgebra::DMatrix::zeros(4 * n, 4 * n);
        for i in 0..n {
            for j in 0..n {
                m.view_mut((4 * i, 4 * j), (4, 4)).copy_from(&self.block(i, j));
            }
        }
        m
    }
}

/// Elimination order by greedy minimum degree; ties go to the lower index.
pub fn minimum_degree_order(a: &BlockSymmetric) -> Vec<usize> {
    let mut adj = a.adjacency();
    let mut alive: BTreeSet<usize> = (0..a.n()).collect();
    let mut order = Vec::with_capacity(a.n());
    while let Some(&v) = alive.iter().min_by_key(|&&v| (adj[v].len(), v)) {
        let nbrs: Vec<usize> = adj[v].iter().copied().collect();
        for &x in &nbrs {
            adj[x].remove(&v);
            for &y in &nbrs {
                if x != y {
                    adj[x].insert(y);
                }
            }
        }
        alive.remove(&v);
        order.push(v);
    }
    order
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NotPositiveDefinite {
    /// Position in the elimination order where factorization broke down.
    pub pivot: usize,
}

/// `P A Pᵀ = L Lᵀ` with `L` block lower triangular.
#[derive(Debug, Clone)]
pub struct BlockCholesky {
    /// `order[k]` is the original index eliminated at step k.
    order: Vec<usize>,
    diag: Vec<Matrix4<f64>>,
    /// `cols[k]` holds L blocks (i, k) for i > k, in permuted indices.
    cols: Vec<BTreeMap<usize, Matrix4<f64>>>,
}

impl BlockCholesky {
    pub fn factor(a: &BlockSymmetric) -> Result<Self, NotPositiveDefinite> {
        Self::factor_with_order(a, minimum_degree_order(a))
    }

    pub fn factor_with_order(a: &BlockSymmetric, order: Vec<usize>) -> Result<Self, NotPositiveDefinite> {
        let n = a.n();
        let mut pos = vec![0; n];
        for (k, &v) in order.iter().enumerate() {
            pos[v] = k;
        }
        let mut diag: Vec<Matrix4<f64>> = order.iter().map(|&v| *a.diag(v)).collect();
        let mut cols: Vec<BTreeMap<usize, Matrix4<f64>>> = vec![BTreeMap::new(); n];
        for (i, row) in a.lower.iter().enumerate() {
            for (&j, m) in row {
                let (pi, pj) = (pos[i], pos[j]);
                if pi > pj {
                    cols[pj].insert(pi, *m);
                } else {
                    cols[pi].insert(pj, m.transpose());
                }
            }
        }
        for k in 0..n {
            let l = Cholesky::new(diag[k])
                .ok_or(NotPositiveDefinite { pivot: k })?
                .l();
            diag[k] = l;
            let col = std::mem::take(&mut cols[k]);
            let mut scaled = BTreeMap::new();
            for (i, b) in col {
                let x = l
                    .solve_lower_triangular(&b.transpose())
                    .ok_or(NotPositiveDefinite { pivot: k })?
                    .transpose();
                scaled.insert(i, x);
            }
            let entries: Vec<(usize, Matrix4<f64>)> = scaled.iter().map(|(i, m)| (*i, *m)).collect();
            for (a_idx, (i, lik)) in entries.iter().enumerate() {
                diag[*i] -= lik * lik.transpose();
                for (j, ljk) in &entries[..a_idx] {
                    *cols[*j].entry(*i).or_insert_with(Matrix4::zeros) -= lik * ljk.transpose();
                }
            }
            cols[k] = scaled;
        }
        Ok(BlockCholesky { order, diag, cols })
    }

    /// Number of stored off-diagonal blocks of L, a fill measure.
    pub fn nnz_blocks(&self) -> usize {
        self.cols.iter().map(BTreeMap::len).sum()
    }

    pub fn solve(&self, b: &[Vector4<f64>]) -> Vec<Vector4<f64>> {
        let n = self.diag.len();
        let mut y: Vec<Vector4<f64>> = self.order.iter().map(|&v| b[v]).collect();
        for k in 0..n {
            let yk = self.diag[k].solve_lower_triangular(&y[k]).expect("factor has a nonzero diagonal");
            y[k] = yk;
            for (&i, lik) in &self.cols[k] {
                y[i] -= lik * yk;
            }
        }
        for k in (0..n).rev() {
            let mut r = y[k];
            for (&i, lik) in &self.cols[k] {
                r -= lik.transpose() * y[i];
            }
            y[k] = self.diag[k]
                .transpose()
                .solve_upper_triangular(&r)
                .expect("factor has a nonzero diagonal");
        }
        let mut x = vec![Vector4::zeros(); n];
        for (k, &v) in self.order.iter().enumerate() {
            x[v] = y[k];
        }
        x
    }
}
