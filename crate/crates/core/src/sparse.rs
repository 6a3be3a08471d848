//! Symmetric sparse storage and the SPD solves used by Newton.
//!
//! Two solvers sit behind [`SpdSolver`]: a profile (skyline) Cholesky on a
//! reverse Cuthill-McKee ordering, and Jacobi-preconditioned conjugate
//! gradients. The direct solver is the default since the Jacobian at large
//! `p` is graded over many orders of magnitude.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Compressed sparse row matrix with a fixed, sorted pattern.
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    pub nrows: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a zero matrix from per-row column lists (sorted and deduplicated here).
    pub fn from_pattern(mut rows: Vec<Vec<usize>>) -> Self {
        let nrows = rows.len();
        let mut row_ptr = Vec::with_capacity(nrows + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for cols in &mut rows {
            cols.sort_unstable();
            cols.dedup();
            col_idx.extend_from_slice(cols);
            row_ptr.push(col_idx.len());
        }
        let values = vec![0.0; col_idx.len()];
        Self { nrows, row_ptr, col_idx, values }
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[r.clone()], &self.values[r])
    }

    /// Position of entry `(i, j)` in `values`, if it is in the pattern.
    pub fn position(&self, i: usize, j: usize) -> Option<usize> {
        let start = self.row_ptr[i];
        self.col_idx[start..self.row_ptr[i + 1]].binary_search(&j).ok().map(|p| start + p)
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let pos = self.position(i, j).expect("entry outside the sparsity pattern");
        self.values[pos] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.position(i, j).map_or(0.0, |p| self.values[p])
    }

    pub fn clear(&mut self) {
        self.values.iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows).map(|i| self.get(i, i)).collect()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.nrows)
            .map(|i| {
                let (cols, vals) = self.row(i);
                cols.iter().zip(vals).map(|(&j, v)| v * x[j]).sum()
            })
            .collect()
    }

    /// Largest `|a_ij - a_ji|` relative to the largest entry.
    pub fn asymmetry(&self) -> f64 {
        let scale = self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if scale == 0.0 {
            return 0.0;
        }
        let mut worst = 0.0f64;
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst / scale
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinearSolverKind {
    #[default]
    Direct,
    ConjugateGradient,
}

/// Solves `A x = b` for a symmetric positive definite `A`.
pub trait SpdSolver {
    fn solve(&mut self, a: &CsrMatrix, b: &[f64]) -> Result<Vec<f64>>;
}

pub fn make_solver(kind: LinearSolverKind, tol: f64) -> Box<dyn SpdSolver + Send> {
    match kind {
        LinearSolverKind::Direct => Box::new(SkylineCholesky::default()),
        LinearSolverKind::ConjugateGradient => Box::new(ConjugateGradient { tol, max_iters: 0 }),
    }
}

/// Reverse Cuthill-McKee ordering of the graph of a symmetric pattern.
/// Returns `perm` with `perm[new] = old`.
pub fn reverse_cuthill_mckee(a: &CsrMatrix) -> Vec<usize> {
    let n = a.nrows;
    let degree: Vec<usize> = (0..n).map(|i| a.row(i).0.len()).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);

    let bfs_levels = |start: usize| -> (Vec<usize>, usize) {
        let mut level = vec![usize::MAX; n];
        let mut queue = VecDeque::from([start]);
        level[start] = 0;
        let mut last = start;
        while let Some(v) = queue.pop_front() {
            last = v;
            for &w in a.row(v).0 {
                if level[w] == usize::MAX {
                    level[w] = level[v] + 1;
                    queue.push_back(w);
                }
            }
        }
        let depth = level[last];
        (level, depth)
    };

    while order.len() < n {
        // pseudo-peripheral start within the next unvisited component
        let mut start = (0..n).filter(|&v| !visited[v]).min_by_key(|&v| degree[v]).unwrap();
        let (mut levels, mut depth) = bfs_levels(start);
        loop {
            let far = (0..n)
                .filter(|&v| levels[v] == depth)
                .min_by_key(|&v| degree[v])
                .unwrap();
            let (l2, d2) = bfs_levels(far);
            if d2 > depth {
                start = far;
                levels = l2;
                depth = d2;
            } else {
                break;
            }
        }
        let mut queue = VecDeque::from([start]);
        visited[start] = true;
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut nbrs: Vec<usize> = a.row(v).0.iter().copied().filter(|&w| !visited[w]).collect();
            nbrs.sort_by_key(|&w| (degree[w], w));
            for w in nbrs {
                visited[w] = true;
                queue.push_back(w);
            }
        }
    }
    order.reverse();
    order
}

/// Profile Cholesky factorisation `P A P^T = L L^T`. The ordering and
/// profile are computed on first use and reused while the pattern is
/// unchanged.
#[derive(Debug, Default)]
pub struct SkylineCholesky {
    perm: Vec<usize>,
    inv_perm: Vec<usize>,
    /// First column stored for each (permuted) row.
    first: Vec<usize>,
    /// Offset of row `i`'s segment in `factor`.
    offset: Vec<usize>,
    factor: Vec<f64>,
    pattern: (Vec<usize>, Vec<usize>),
}

impl SkylineCholesky {
    fn prepare(&mut self, a: &CsrMatrix) {
        if self.pattern.0 == a.row_ptr && self.pattern.1 == a.col_idx {
            return;
        }
        let n = a.nrows;
        self.perm = reverse_cuthill_mckee(a);
        self.inv_perm = vec![0; n];
        for (new, &old) in self.perm.iter().enumerate() {
            self.inv_perm[old] = new;
        }
        self.first = (0..n)
            .map(|i| {
                let old = self.perm[i];
                a.row(old).0.iter().map(|&j| self.inv_perm[j]).min().unwrap_or(i).min(i)
            })
            .collect();
        self.offset = Vec::with_capacity(n + 1);
        let mut total = 0;
        for i in 0..n {
            self.offset.push(total);
            total += i - self.first[i] + 1;
        }
        self.offset.push(total);
        self.factor = vec![0.0; total];
        self.pattern = (a.row_ptr.clone(), a.col_idx.clone());
    }

    /// Number of stored entries in the profile.
    pub fn profile_size(&self) -> usize {
        self.factor.len()
    }

    pub fn factorize(&mut self, a: &CsrMatrix) -> Result<()> {
        self.prepare(a);
        let n = a.nrows;
        self.factor.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n {
            let old = self.perm[i];
            let (cols, vals) = a.row(old);
            for (&j, &v) in cols.iter().zip(vals) {
                let jj = self.inv_perm[j];
                if jj <= i {
                    self.factor[self.offset[i] + jj - self.first[i]] = v;
                }
            }
        }
        for i in 0..n {
            let fi = self.first[i];
            let oi = self.offset[i];
            for j in fi..i {
                let fj = self.first[j];
                let oj = self.offset[j];
                let start = fi.max(fj);
                let len = j - start;
                let s = dot(
                    &self.factor[oi + start - fi..oi + start - fi + len],
                    &self.factor[oj + start - fj..oj + start - fj + len],
                );
                let ljj = self.factor[oj + j - fj];
                self.factor[oi + j - fi] = (self.factor[oi + j - fi] - s) / ljj;
            }
            let row = &self.factor[oi..oi + i - fi];
            let d = self.factor[oi + i - fi] - dot(row, row);
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::SingularSystem(format!(
                    "non-positive pivot {d:e} at row {i} of {n}"
                )));
            }
            self.factor[oi + i - fi] = d.sqrt();
        }
        Ok(())
    }

    /// Solves with the current factor.
    pub fn substitute(&self, b: &[f64]) -> Vec<f64> {
        let n = self.perm.len();
        let mut y: Vec<f64> = (0..n).map(|i| b[self.perm[i]]).collect();
        for i in 0..n {
            let fi = self.first[i];
            let oi = self.offset[i];
            let s = dot(&self.factor[oi..oi + i - fi], &y[fi..i]);
            y[i] = (y[i] - s) / self.factor[oi + i - fi];
        }
        for i in (0..n).rev() {
            let fi = self.first[i];
            let oi = self.offset[i];
            y[i] /= self.factor[oi + i - fi];
            let yi = y[i];
            for (k, l) in self.factor[oi..oi + i - fi].iter().enumerate() {
                y[fi + k] -= l * yi;
            }
        }
        let mut x = vec![0.0; n];
        for i in 0..n {
            x[self.perm[i]] = y[i];
        }
        x
    }
}

impl SpdSolver for SkylineCholesky {
    fn solve(&mut self, a: &CsrMatrix, b: &[f64]) -> Result<Vec<f64>> {
        self.factorize(a)?;
        let mut x = self.substitute(b);
        // one step of iterative refinement
        let ax = a.mul_vec(&x);
        let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, axi)| bi - axi).collect();
        let dx = self.substitute(&r);
        x.iter_mut().zip(&dx).for_each(|(xi, d)| *xi += d);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularSystem("non-finite solution".into()));
        }
        Ok(x)
    }
}

/// Jacobi-preconditioned conjugate gradients.
#[derive(Debug, Clone)]
pub struct ConjugateGradient {
    pub tol: f64,
    /// Iteration cap; `0` means `10 * n`.
    pub max_iters: usize,
}

impl SpdSolver for ConjugateGradient {
    fn solve(&mut self, a: &CsrMatrix, b: &[f64]) -> Result<Vec<f64>> {
        let n = a.nrows;
        let b_norm = norm2(b);
        let mut x = vec![0.0; n];
        if b_norm == 0.0 {
            return Ok(x);
        }
        let inv_diag: Vec<f64> = a
            .diagonal()
            .into_iter()
            .map(|d| if d > 0.0 { 1.0 / d } else { 1.0 })
            .collect();
        let mut r = b.to_vec();
        let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, di)| ri * di).collect();
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        let max_iters = if self.max_iters == 0 { 10 * n.max(1) } else { self.max_iters };
        for _ in 0..max_iters {
            let ap = a.mul_vec(&p);
            let pap = dot(&p, &ap);
            if !(pap > 0.0) {
                return Err(Error::SingularSystem(format!("CG curvature {pap:e}")));
            }
            let alpha = rz / pap;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            if norm2(&r) <= self.tol * b_norm {
                return Ok(x);
            }
            for i in 0..n {
                z[i] = r[i] * inv_diag[i];
            }
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        Err(Error::SingularSystem(format!("CG did not reach {:e} in {max_iters} iterations", self.tol)))
    }
}
