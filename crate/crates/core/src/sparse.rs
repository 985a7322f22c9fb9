//! Sparse symmetric matrices and an envelope (skyline) Cholesky factorization
//! with reverse Cuthill-McKee ordering.
//!
//! Precision matrices in this crate come from planar adjacency graphs plus a
//! handful of dense covariate rows. A bandwidth-reducing ordering keeps the
//! envelope narrow for the graph part, and dense rows can be pinned to the end
//! of the ordering where they only cost one full-length row each.

use std::collections::{BTreeMap, VecDeque};

use crate::error::{Error, Result};

/// Accumulates entries of a symmetric matrix. Only the lower triangle is kept;
/// `add(i, j, v)` with `i < j` is folded onto `(j, i)`.
#[derive(Debug, Clone)]
pub struct SymBuilder {
    rows: Vec<BTreeMap<usize, f64>>,
}

impl SymBuilder {
    pub fn new(n: usize) -> Self {
        SymBuilder {
            rows: vec![BTreeMap::new(); n],
        }
    }

    pub fn dim(&self) -> usize {
        self.rows.len()
    }

    /// Adds `v` to entry `(i, j)` (and, implicitly, `(j, i)`).
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        *self.rows[r].entry(c).or_insert(0.0) += v;
    }

    pub fn build(self) -> SparseSym {
        let rows = self.rows.into_iter().map(|row| row.into_iter().collect()).collect();
        SparseSym { rows }
    }
}

/// Symmetric sparse matrix stored as sorted lower-triangle rows (diagonal
/// included).
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSym {
    rows: Vec<Vec<(usize, f64)>>,
}

impl SparseSym {
    pub fn identity(n: usize, scale: f64) -> Self {
        SparseSym {
            rows: (0..n).map(|i| vec![(i, scale)]).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.rows.len()
    }

    pub fn nnz_lower(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    /// Lower-triangle entries of row `i`, sorted by column.
    pub fn row_lower(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        match self.rows[r].binary_search_by_key(&c, |&(k, _)| k) {
            Ok(p) => self.rows[r][p].1,
            Err(_) => 0.0,
        }
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.get(i, i)).collect()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim()];
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, v) in row {
                y[i] += v * x[j];
                if j != i {
                    y[j] += v * x[i];
                }
            }
        }
        y
    }

    /// `xᵀ A x`.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, v) in row {
                let term = v * x[i] * x[j];
                acc += if i == j { term } else { 2.0 * term };
            }
        }
        acc
    }

    /// Returns `self + scale * other` over the union of both patterns.
    pub fn add_scaled(&self, other: &SparseSym, scale: f64) -> SparseSym {
        assert_eq!(self.dim(), other.dim());
        let mut b = SymBuilder::new(self.dim());
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, v) in row {
                b.add(i, j, v);
            }
        }
        for (i, row) in other.rows.iter().enumerate() {
            for &(j, v) in row {
                b.add(i, j, scale * v);
            }
        }
        b.build()
    }

    pub fn scaled(&self, s: f64) -> SparseSym {
        SparseSym {
            rows: self
                .rows
                .iter()
                .map(|row| row.iter().map(|&(j, v)| (j, v * s)).collect())
                .collect(),
        }
    }

    /// Dense row-major copy, for small matrices and tests.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.dim();
        let mut d = vec![vec![0.0; n]; n];
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, v) in row {
                d[i][j] = v;
                d[j][i] = v;
            }
        }
        d
    }

    fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.dim()];
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, _) in row {
                if i != j {
                    adj[i].push(j);
                    adj[j].push(i);
                }
            }
        }
        for a in &mut adj {
            a.sort_unstable();
            a.dedup();
        }
        adj
    }
}

/// Symmetric permutation: `perm[k]` is the original index placed at position
/// `k`, `pos` is its inverse.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ordering {
    perm: Vec<usize>,
    pos: Vec<usize>,
}

impl Ordering {
    pub fn natural(n: usize) -> Self {
        let perm: Vec<usize> = (0..n).collect();
        Ordering {
            pos: perm.clone(),
            perm,
        }
    }

    pub fn from_perm(perm: Vec<usize>) -> Self {
        let mut pos = vec![usize::MAX; perm.len()];
        for (k, &p) in perm.iter().enumerate() {
            pos[p] = k;
        }
        debug_assert!(pos.iter().all(|&p| p != usize::MAX));
        Ordering { perm, pos }
    }

    /// Reverse Cuthill-McKee ordering of the graph of `a`, with the indices in
    /// `tail` removed from the graph and appended last in the given order.
    pub fn reverse_cuthill_mckee(a: &SparseSym, tail: &[usize]) -> Self {
        let n = a.dim();
        let adj = a.adjacency();
        let mut excluded = vec![false; n];
        for &t in tail {
            excluded[t] = true;
        }
        let degree: Vec<usize> = (0..n)
            .map(|i| adj[i].iter().filter(|&&j| !excluded[j]).count())
            .collect();

        let mut visited = excluded.clone();
        let mut order = Vec::with_capacity(n);
        loop {
            // lowest-degree unvisited node seeds the next component
            let seed = (0..n).filter(|&i| !visited[i]).min_by_key(|&i| (degree[i], i));
            let Some(seed) = seed else { break };
            let start = pseudo_peripheral(seed, &adj, &excluded, &degree);
            let mut queue = VecDeque::from([start]);
            visited[start] = true;
            while let Some(v) = queue.pop_front() {
                order.push(v);
                let mut next: Vec<usize> = adj[v].iter().copied().filter(|&w| !visited[w]).collect();
                next.sort_by_key(|&w| (degree[w], w));
                for w in next {
                    visited[w] = true;
                    queue.push_back(w);
                }
            }
        }
        order.reverse();
        order.extend_from_slice(tail);
        Ordering::from_perm(order)
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    pub fn perm(&self) -> &[usize] {
        &self.perm
    }
}

/// BFS-based search for a node of near-maximal eccentricity in the component
/// containing `seed`.
fn pseudo_peripheral(seed: usize, adj: &[Vec<usize>], excluded: &[bool], degree: &[usize]) -> usize {
    let mut current = seed;
    let mut best_ecc = 0;
    for _ in 0..8 {
        let levels = bfs_levels(current, adj, excluded);
        let ecc = levels.iter().map(|&(_, l)| l).max().unwrap_or(0);
        if ecc <= best_ecc && current != seed {
            break;
        }
        best_ecc = ecc;
        let candidate = levels
            .iter()
            .filter(|&&(_, l)| l == ecc)
            .min_by_key(|&&(v, _)| (degree[v], v))
            .map(|&(v, _)| v)
            .unwrap_or(current);
        if candidate == current {
            break;
        }
        current = candidate;
    }
    current
}

fn bfs_levels(start: usize, adj: &[Vec<usize>], excluded: &[bool]) -> Vec<(usize, usize)> {
    let mut seen = std::collections::HashSet::from([start]);
    let mut out = vec![(start, 0)];
    let mut queue = VecDeque::from([(start, 0usize)]);
    while let Some((v, l)) = queue.pop_front() {
        for &w in &adj[v] {
            if !excluded[w] && seen.insert(w) {
                out.push((w, l + 1));
                queue.push_back((w, l + 1));
            }
        }
    }
    out
}

/// Cholesky factor `P A Pᵀ = L Lᵀ` stored row-wise over each row's envelope.
#[derive(Debug, Clone)]
pub struct EnvelopeCholesky {
    ordering: Ordering,
    first: Vec<usize>,
    offset: Vec<usize>,
    values: Vec<f64>,
}

impl EnvelopeCholesky {
    /// Factorizes `a` under `ordering`. Fails if `a` is not numerically
    /// positive definite.
    pub fn factor(a: &SparseSym, ordering: &Ordering) -> Result<Self> {
        let n = a.dim();
        if ordering.len() != n {
            return Err(Error::Dimension(format!(
                "ordering of length {} for matrix of size {n}",
                ordering.len()
            )));
        }
        let pos = &ordering.pos;
        let mut first: Vec<usize> = (0..n).collect();
        for (i, row) in a.rows.iter().enumerate() {
            for &(j, _) in row {
                let (r, c) = ordered(pos[i], pos[j]);
                first[r] = first[r].min(c);
            }
        }
        let mut offset = Vec::with_capacity(n + 1);
        let mut total = 0;
        for (r, &f) in first.iter().enumerate() {
            offset.push(total);
            total += r - f + 1;
        }
        offset.push(total);
        let mut values = vec![0.0; total];
        for (i, row) in a.rows.iter().enumerate() {
            for &(j, v) in row {
                let (r, c) = ordered(pos[i], pos[j]);
                values[offset[r] + c - first[r]] += v;
            }
        }

        for i in 0..n {
            let fi = first[i];
            let oi = offset[i];
            for j in fi..i {
                let fj = first[j];
                let oj = offset[j];
                let k0 = fi.max(fj);
                let mut s = values[oi + j - fi];
                let li = &values[oi + k0 - fi..oi + j - fi];
                let lj = &values[oj + k0 - fj..oj + j - fj];
                s -= dot(li, lj);
                let ljj = values[oj + j - fj];
                values[oi + j - fi] = s / ljj;
            }
            let row = &values[oi..oi + i - fi];
            let d = values[oi + i - fi] - dot(row, row);
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::Numerical(format!(
                    "matrix not positive definite (pivot {d:e} at position {i}, original index {})",
                    ordering.perm[i]
                )));
            }
            values[oi + i - fi] = d.sqrt();
        }

        Ok(EnvelopeCholesky {
            ordering: ordering.clone(),
            first,
            offset,
            values,
        })
    }

    pub fn dim(&self) -> usize {
        self.first.len()
    }

    /// Number of stored factor entries.
    pub fn envelope_size(&self) -> usize {
        self.values.len()
    }

    fn l_diag(&self, i: usize) -> f64 {
        self.values[self.offset[i + 1] - 1]
    }

    fn l_row(&self, i: usize) -> &[f64] {
        &self.values[self.offset[i]..self.offset[i + 1] - 1]
    }

    /// `log det A`.
    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.dim()).map(|i| self.l_diag(i).ln()).sum::<f64>()
    }

    fn forward(&self, y: &mut [f64]) {
        for i in 0..self.dim() {
            let f = self.first[i];
            let s = dot(self.l_row(i), &y[f..i]);
            y[i] = (y[i] - s) / self.l_diag(i);
        }
    }

    fn backward(&self, x: &mut [f64]) {
        for i in (0..self.dim()).rev() {
            x[i] /= self.l_diag(i);
            let xi = x[i];
            let f = self.first[i];
            for (xk, &l) in x[f..i].iter_mut().zip(self.l_row(i)) {
                *xk -= l * xi;
            }
        }
    }

    fn to_permuted(&self, b: &[f64]) -> Vec<f64> {
        self.ordering.perm.iter().map(|&p| b[p]).collect()
    }

    fn from_permuted(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; y.len()];
        for (k, &p) in self.ordering.perm.iter().enumerate() {
            out[p] = y[k];
        }
        out
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.dim());
        let mut y = self.to_permuted(b);
        self.forward(&mut y);
        self.backward(&mut y);
        self.from_permuted(&y)
    }

    /// Maps a standard normal vector `z` to `x = Pᵀ L⁻ᵀ z`, which has
    /// covariance `A⁻¹`.
    pub fn correlate(&self, z: &[f64]) -> Vec<f64> {
        assert_eq!(z.len(), self.dim());
        let mut x = z.to_vec();
        self.backward(&mut x);
        self.from_permuted(&x)
    }

    /// Dense `A⁻¹`, column by column. Small problems only.
    pub fn inverse_dense(&self) -> Vec<Vec<f64>> {
        let n = self.dim();
        let mut cols = Vec::with_capacity(n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            cols.push(self.solve(&e));
            e[j] = 0.0;
        }
        // symmetric, so columns double as rows
        cols
    }
}

#[inline]
fn ordered(a: usize, b: usize) -> (usize, usize) {
    if a >= b {
        (a, b)
    } else {
        (b, a)
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
