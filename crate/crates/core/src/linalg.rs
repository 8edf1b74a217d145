//! Block-sparse matrices, block ILU(0) and restarted GMRES.

use log::{debug, warn};
use nalgebra::DMatrix;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LinalgError {
    #[error("GMRES did not converge: relative residual {residual:e} after {iterations} iterations")]
    NonConvergence { residual: f64, iterations: usize },
    #[error("GMRES breakdown at iteration {0}")]
    Breakdown(usize),
    #[error("dimension mismatch: matrix {0}, vector {1}")]
    Dimension(usize, usize),
    #[error("invalid solver setting: {0}")]
    Setting(&'static str),
}

/// Square block-CSR matrix with uniform dense blocks stored row-major.
#[derive(Debug, Clone)]
pub struct BlockSparseMatrix {
    nb: usize,
    bs: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    vals: Vec<f64>,
}

impl BlockSparseMatrix {
    /// Zero matrix with the given block pattern; `pattern[i]` lists the block
    /// columns of block row `i` (the diagonal block is always included).
    pub fn from_pattern(bs: usize, pattern: &[Vec<usize>]) -> BlockSparseMatrix {
        let nb = pattern.len();
        let mut row_ptr = Vec::with_capacity(nb + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for (i, cols) in pattern.iter().enumerate() {
            let mut c = cols.clone();
            c.push(i);
            c.sort_unstable();
            c.dedup();
            col_idx.extend(c);
            row_ptr.push(col_idx.len());
        }
        let vals = vec![0.0; col_idx.len() * bs * bs];
        BlockSparseMatrix {
            nb,
            bs,
            row_ptr,
            col_idx,
            vals,
        }
    }

    /// Block-compresses a dense matrix, keeping blocks with any nonzero.
    pub fn from_dense(bs: usize, a: &DMatrix<f64>) -> BlockSparseMatrix {
        assert_eq!(a.nrows() % bs, 0);
        assert!(a.is_square());
        let nb = a.nrows() / bs;
        let pattern: Vec<Vec<usize>> = (0..nb)
            .map(|i| {
                (0..nb)
                    .filter(|&j| (0..bs).any(|r| (0..bs).any(|c| a[(i * bs + r, j * bs + c)] != 0.0)))
                    .collect()
            })
            .collect();
        let mut m = BlockSparseMatrix::from_pattern(bs, &pattern);
        for i in 0..nb {
            for p in m.row_ptr[i]..m.row_ptr[i + 1] {
                let j = m.col_idx[p];
                for r in 0..bs {
                    for c in 0..bs {
                        m.vals[p * bs * bs + r * bs + c] = a[(i * bs + r, j * bs + c)];
                    }
                }
            }
        }
        m
    }

    pub fn n(&self) -> usize {
        self.nb * self.bs
    }

    pub fn block_size(&self) -> usize {
        self.bs
    }

    pub fn n_blocks(&self) -> usize {
        self.nb
    }

    pub fn nnz_blocks(&self) -> usize {
        self.col_idx.len()
    }

    pub fn block_cols(&self, i: usize) -> &[usize] {
        &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]]
    }

    fn find(&self, i: usize, j: usize) -> Option<usize> {
        let cols = self.block_cols(i);
        cols.binary_search(&j).ok().map(|p| self.row_ptr[i] + p)
    }

    pub fn block(&self, i: usize, j: usize) -> Option<&[f64]> {
        let bb = self.bs * self.bs;
        self.find(i, j).map(|p| &self.vals[p * bb..(p + 1) * bb])
    }

    pub fn block_mut(&mut self, i: usize, j: usize) -> Option<&mut [f64]> {
        let bb = self.bs * self.bs;
        self.find(i, j).map(move |p| &mut self.vals[p * bb..(p + 1) * bb])
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let bs = self.bs;
        self.block(r / bs, c / bs).map_or(0.0, |b| b[(r % bs) * bs + c % bs])
    }

    /// Sets entry (r, c). Panics if the entry lies outside the pattern.
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        let bs = self.bs;
        let b = self.block_mut(r / bs, c / bs).expect("entry outside block pattern");
        b[(r % bs) * bs + c % bs] = v;
    }

    /// Replaces scalar row `r` by the identity row.
    pub fn set_identity_row(&mut self, r: usize) {
        let bs = self.bs;
        let i = r / bs;
        let lr = r % bs;
        for p in self.row_ptr[i]..self.row_ptr[i + 1] {
            let base = p * bs * bs + lr * bs;
            self.vals[base..base + bs].iter_mut().for_each(|v| *v = 0.0);
        }
        self.set(r, r, 1.0);
    }

    /// y = A x, parallel over block rows.
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        let bs = self.bs;
        let bb = bs * bs;
        y.par_chunks_mut(bs).enumerate().for_each(|(i, yi)| {
            yi.iter_mut().for_each(|v| *v = 0.0);
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col_idx[p];
                let blk = &self.vals[p * bb..(p + 1) * bb];
                let xj = &x[j * bs..(j + 1) * bs];
                for r in 0..bs {
                    let row = &blk[r * bs..(r + 1) * bs];
                    let mut s = 0.0;
                    for c in 0..bs {
                        s += row[c] * xj[c];
                    }
                    yi[r] += s;
                }
            }
        });
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let bs = self.bs;
        let mut d = DMatrix::zeros(self.n(), self.n());
        for i in 0..self.nb {
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col_idx[p];
                for r in 0..bs {
                    for c in 0..bs {
                        d[(i * bs + r, j * bs + c)] = self.vals[p * bs * bs + r * bs + c];
                    }
                }
            }
        }
        d
    }
}

pub trait Preconditioner: Sync {
    /// z ≈ A⁻¹ r.
    fn apply(&self, r: &[f64], z: &mut [f64]);
}

pub struct IdentityPreconditioner;

impl Preconditioner for IdentityPreconditioner {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        z.copy_from_slice(r);
    }
}

/// Block ILU(0): incomplete LU restricted to the block pattern of A.
#[derive(Debug, Clone)]
pub struct BlockIlu0 {
    lu: BlockSparseMatrix,
    diag_inv: Vec<DMatrix<f64>>,
    /// Number of diagonal blocks that needed a shift.
    pub shifted_pivots: usize,
}

fn block_to_mat(bs: usize, b: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(bs, bs, b)
}

fn mat_into_block(m: &DMatrix<f64>, b: &mut [f64]) {
    let bs = m.nrows();
    for r in 0..bs {
        for c in 0..bs {
            b[r * bs + c] = m[(r, c)];
        }
    }
}

fn invert_with_shift(m: DMatrix<f64>) -> (DMatrix<f64>, bool) {
    if let Some(inv) = m.clone().try_inverse() {
        if inv.iter().all(|v| v.is_finite()) {
            return (inv, false);
        }
    }
    let scale = m.abs().max().max(1e-300);
    let mut shift = 1e-10 * scale;
    loop {
        let shifted = &m + DMatrix::identity(m.nrows(), m.ncols()) * shift;
        if let Some(inv) = shifted.try_inverse() {
            if inv.iter().all(|v| v.is_finite()) {
                return (inv, true);
            }
        }
        shift *= 10.0;
    }
}

impl BlockIlu0 {
    pub fn factor(a: &BlockSparseMatrix) -> BlockIlu0 {
        let bs = a.bs;
        let bb = bs * bs;
        let mut lu = a.clone();
        let mut diag_inv: Vec<DMatrix<f64>> = Vec::with_capacity(a.nb);
        let mut shifted = 0;
        for i in 0..a.nb {
            let (start, end) = (lu.row_ptr[i], lu.row_ptr[i + 1]);
            for p in start..end {
                let k = lu.col_idx[p];
                if k >= i {
                    break;
                }
                let lik = block_to_mat(bs, &lu.vals[p * bb..(p + 1) * bb]) * &diag_inv[k];
                mat_into_block(&lik, &mut lu.vals[p * bb..(p + 1) * bb]);
                for q in p + 1..end {
                    let j = lu.col_idx[q];
                    if let Some(kj) = lu.find(k, j) {
                        let ukj = block_to_mat(bs, &lu.vals[kj * bb..(kj + 1) * bb]);
                        let upd = &lik * ukj;
                        let blk = &mut lu.vals[q * bb..(q + 1) * bb];
                        for r in 0..bs {
                            for c in 0..bs {
                                blk[r * bs + c] -= upd[(r, c)];
                            }
                        }
                    }
                }
            }
            let d = lu.find(i, i).unwrap();
            let (inv, was_shifted) = invert_with_shift(block_to_mat(bs, &lu.vals[d * bb..(d + 1) * bb]));
            if was_shifted {
                shifted += 1;
            }
            diag_inv.push(inv);
        }
        if shifted > 0 {
            warn!("ILU(0): {shifted} singular pivot block(s) shifted");
        }
        BlockIlu0 {
            lu,
            diag_inv,
            shifted_pivots: shifted,
        }
    }
}

impl Preconditioner for BlockIlu0 {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        let bs = self.lu.bs;
        let bb = bs * bs;
        let lu = &self.lu;
        let mut y = r.to_vec();
        for i in 0..lu.nb {
            for p in lu.row_ptr[i]..lu.row_ptr[i + 1] {
                let k = lu.col_idx[p];
                if k >= i {
                    break;
                }
                let blk = &lu.vals[p * bb..(p + 1) * bb];
                for rr in 0..bs {
                    let mut s = 0.0;
                    for c in 0..bs {
                        s += blk[rr * bs + c] * y[k * bs + c];
                    }
                    y[i * bs + rr] -= s;
                }
            }
        }
        for i in (0..lu.nb).rev() {
            let mut t: Vec<f64> = y[i * bs..(i + 1) * bs].to_vec();
            for p in lu.row_ptr[i]..lu.row_ptr[i + 1] {
                let j = lu.col_idx[p];
                if j <= i {
                    continue;
                }
                let blk = &lu.vals[p * bb..(p + 1) * bb];
                for rr in 0..bs {
                    let mut s = 0.0;
                    for c in 0..bs {
                        s += blk[rr * bs + c] * z[j * bs + c];
                    }
                    t[rr] -= s;
                }
            }
            let dinv = &self.diag_inv[i];
            for rr in 0..bs {
                let mut s = 0.0;
                for c in 0..bs {
                    s += dinv[(rr, c)] * t[c];
                }
                z[i * bs + rr] = s;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmresOutcome {
    pub iterations: usize,
    pub residual: f64,
    /// Relative residual after every inner iteration.
    pub history: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Right-preconditioned restarted GMRES; `x` holds the initial guess on
/// entry and the solution on exit.
pub fn gmres(
    a: &BlockSparseMatrix,
    b: &[f64],
    x: &mut [f64],
    m: &dyn Preconditioner,
    restart: usize,
    tol: f64,
    max_iter: usize,
) -> Result<GmresOutcome, LinalgError> {
    let n = a.n();
    if b.len() != n || x.len() != n {
        return Err(LinalgError::Dimension(n, b.len()));
    }
    if restart == 0 {
        return Err(LinalgError::Setting("restart must be >= 1"));
    }
    let bnorm = norm(b);
    let mut history = Vec::new();
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(GmresOutcome {
            iterations: 0,
            residual: 0.0,
            history,
        });
    }
    let mut r = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut total = 0;
    loop {
        a.matvec(x, &mut r);
        for i in 0..n {
            r[i] = b[i] - r[i];
        }
        let beta = norm(&r);
        let rel = beta / bnorm;
        if rel <= tol {
            return Ok(GmresOutcome {
                iterations: total,
                residual: rel,
                history,
            });
        }
        if total >= max_iter {
            return Err(LinalgError::NonConvergence {
                residual: rel,
                iterations: total,
            });
        }
        let mut v: Vec<Vec<f64>> = vec![r.iter().map(|t| t / beta).collect()];
        let mut h = vec![vec![0.0; restart]; restart + 1];
        let mut cs = vec![0.0; restart];
        let mut sn = vec![0.0; restart];
        let mut g = vec![0.0; restart + 1];
        g[0] = beta;
        let mut j = 0;
        while j < restart && total < max_iter {
            m.apply(&v[j], &mut z);
            a.matvec(&z, &mut w);
            for i in 0..=j {
                let hij = dot(&w, &v[i]);
                h[i][j] = hij;
                for (wk, vk) in w.iter_mut().zip(&v[i]) {
                    *wk -= hij * vk;
                }
            }
            let hnext = norm(&w);
            h[j + 1][j] = hnext;
            for i in 0..j {
                let t = cs[i] * h[i][j] + sn[i] * h[i + 1][j];
                h[i + 1][j] = -sn[i] * h[i][j] + cs[i] * h[i + 1][j];
                h[i][j] = t;
            }
            let d = (h[j][j] * h[j][j] + h[j + 1][j] * h[j + 1][j]).sqrt();
            if d == 0.0 {
                return Err(LinalgError::Breakdown(total));
            }
            cs[j] = h[j][j] / d;
            sn[j] = h[j + 1][j] / d;
            h[j][j] = d;
            h[j + 1][j] = 0.0;
            g[j + 1] = -sn[j] * g[j];
            g[j] *= cs[j];
            total += 1;
            j += 1;
            let rel = g[j].abs() / bnorm;
            history.push(rel);
            if rel <= tol || hnext <= 1e-300 {
                break;
            }
            v.push(w.iter().map(|t| t / hnext).collect());
        }
        // back substitution and update x += M⁻¹ V y
        let mut y = vec![0.0; j];
        for i in (0..j).rev() {
            let mut s = g[i];
            for k in i + 1..j {
                s -= h[i][k] * y[k];
            }
            y[i] = s / h[i][i];
        }
        let mut u = vec![0.0; n];
        for (k, yk) in y.iter().enumerate() {
            for (ui, vi) in u.iter_mut().zip(&v[k]) {
                *ui += yk * vi;
            }
        }
        m.apply(&u, &mut z);
        for i in 0..n {
            x[i] += z[i];
        }
        debug!("gmres cycle end: iterations {total}, estimated residual {:e}", history.last().copied().unwrap_or(rel));
    }
}

/// GMRES settings plus a reusable ILU(0) factorization.
#[derive(Debug, Clone)]
pub struct LinearSolverHandle {
    pub restart: usize,
    pub tol: f64,
    pub max_iter: usize,
    /// Keep the factorization across solves.
    pub reuse: bool,
    /// Disable preconditioning entirely.
    pub precondition: bool,
    ilu: Option<BlockIlu0>,
    baseline_iters: Option<usize>,
    pub factorizations: usize,
    pub last: Option<GmresOutcome>,
}

impl LinearSolverHandle {
    pub fn new(restart: usize, tol: f64, max_iter: usize) -> Result<LinearSolverHandle, LinalgError> {
        if !(tol > 0.0 && tol < 1.0) {
            return Err(LinalgError::Setting("tolerance must lie in (0, 1)"));
        }
        if restart < 1 {
            return Err(LinalgError::Setting("restart must be >= 1"));
        }
        Ok(LinearSolverHandle {
            restart,
            tol,
            max_iter,
            reuse: true,
            precondition: true,
            ilu: None,
            baseline_iters: None,
            factorizations: 0,
            last: None,
        })
    }

    /// Drops the cached factorization.
    pub fn invalidate(&mut self) {
        self.ilu = None;
        self.baseline_iters = None;
    }

    /// Solves A x = b starting from `x`. A stale factorization is refreshed
    /// once when the iteration count has doubled against the count seen
    /// right after the last factorization.
    pub fn solve(&mut self, a: &BlockSparseMatrix, b: &[f64], x: &mut [f64]) -> Result<GmresOutcome, LinalgError> {
        if !self.precondition {
            let out = gmres(a, b, x, &IdentityPreconditioner, self.restart, self.tol, self.max_iter)?;
            self.last = Some(out.clone());
            return Ok(out);
        }
        let fresh = !self.reuse || self.ilu.is_none() || self.ilu.as_ref().is_some_and(|f| f.lu.n() != a.n());
        if fresh {
            self.ilu = Some(BlockIlu0::factor(a));
            self.factorizations += 1;
            self.baseline_iters = None;
        }
        let x0 = x.to_vec();
        let out = gmres(a, b, x, self.ilu.as_ref().unwrap(), self.restart, self.tol, self.max_iter);
        let stale = match (&out, self.baseline_iters) {
            (Ok(o), Some(base)) => o.iterations > 2 * base.max(1),
            (Err(_), _) => !fresh,
            _ => false,
        };
        if stale {
            debug!("refreshing ILU(0) preconditioner");
            self.ilu = Some(BlockIlu0::factor(a));
            self.factorizations += 1;
            self.baseline_iters = None;
            x.copy_from_slice(&x0);
            let out = gmres(a, b, x, self.ilu.as_ref().unwrap(), self.restart, self.tol, self.max_iter)?;
            self.baseline_iters = Some(out.iterations);
            self.last = Some(out.clone());
            return Ok(out);
        }
        let out = out?;
        if self.baseline_iters.is_none() {
            self.baseline_iters = Some(out.iterations);
        }
        self.last = Some(out.clone());
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tridiag(n: usize) -> BlockSparseMatrix {
        let mut d = DMatrix::zeros(n, n);
        for i in 0..n {
            d[(i, i)] = 2.0 + 0.01 * i as f64;
            if i > 0 {
                d[(i, i - 1)] = -1.0;
            }
            if i + 1 < n {
                d[(i, i + 1)] = -1.0;
            }
        }
        BlockSparseMatrix::from_dense(1, &d)
    }

    #[test]
    fn identity_solves_in_one_iteration() {
        let a = BlockSparseMatrix::from_dense(2, &DMatrix::identity(6, 6));
        let b = vec![1.0, -2.0, 3.0, 0.5, 0.0, 7.0];
        let mut x = vec![0.0; 6];
        let out = gmres(&a, &b, &mut x, &IdentityPreconditioner, 10, 1e-12, 100).unwrap();
        assert_eq!(out.iterations, 1);
        assert!(x.iter().zip(&b).all(|(p, q)| (p - q).abs() < 1e-14));
    }

    #[test]
    fn diagonal_history_monotone() {
        let n = 40;
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_fn(n, |i, _| (i + 1) as f64));
        let a = BlockSparseMatrix::from_dense(4, &d);
        let b = vec![1.0; n];
        let mut x = vec![0.0; n];
        let out = gmres(&a, &b, &mut x, &IdentityPreconditioner, 50, 1e-10, 200).unwrap();
        assert!(out.history.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
        for i in 0..n {
            assert!((x[i] - 1.0 / (i + 1) as f64).abs() < 1e-8);
        }
        let ilu = BlockIlu0::factor(&a);
        let mut x = vec![0.0; n];
        let out = gmres(&a, &b, &mut x, &ilu, 50, 1e-12, 200).unwrap();
        assert_eq!(out.iterations, 1);
    }

    #[test]
    fn tridiagonal_ilu_is_exact() {
        let a = tridiag(50);
        let ilu = BlockIlu0::factor(&a);
        let b: Vec<f64> = (0..50).map(|i| (i as f64 * 0.3).sin()).collect();
        let mut x = vec![0.0; 50];
        let out = gmres(&a, &b, &mut x, &ilu, 20, 1e-12, 100).unwrap();
        assert!(out.iterations <= 2);
        let mut r = vec![0.0; 50];
        a.matvec(&x, &mut r);
        for i in 0..50 {
            assert!((r[i] - b[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn restart_and_nonconvergence() {
        let a = tridiag(200);
        let b = vec![1.0; 200];
        let mut x = vec![0.0; 200];
        let err = gmres(&a, &b, &mut x, &IdentityPreconditioner, 5, 1e-12, 20).unwrap_err();
        assert!(matches!(err, LinalgError::NonConvergence { iterations: 20, .. }));
        let mut x = vec![0.0; 200];
        gmres(&a, &b, &mut x, &IdentityPreconditioner, 30, 1e-10, 20000).unwrap();
        let mut r = vec![0.0; 200];
        a.matvec(&x, &mut r);
        assert!(r.iter().zip(&b).all(|(p, q)| (p - q).abs() < 1e-8));
    }

    #[test]
    fn singular_pivot_is_shifted() {
        let mut d = DMatrix::zeros(4, 4);
        d[(0, 0)] = 1.0;
        d[(2, 2)] = 1.0;
        d[(3, 3)] = 1.0;
        let a = BlockSparseMatrix::from_dense(2, &d);
        let ilu = BlockIlu0::factor(&a);
        assert_eq!(ilu.shifted_pivots, 1);
    }

    #[test]
    fn handle_rejects_bad_settings() {
        assert!(LinearSolverHandle::new(10, 0.0, 10).is_err());
        assert!(LinearSolverHandle::new(10, 1.5, 10).is_err());
        assert!(LinearSolverHandle::new(0, 1e-8, 10).is_err());
    }

    #[test]
    fn identity_row_pins_value() {
        let mut a = tridiag(5);
        a.set_identity_row(2);
        assert_eq!(a.get(2, 1), 0.0);
        assert_eq!(a.get(2, 2), 1.0);
        assert_eq!(a.get(2, 3), 0.0);
        assert_eq!(a.get(1, 2), -1.0);
    }

    proptest! {
        #[test]
        fn matvec_matches_dense(seed in 0u64..1000, bs in 1usize..5, nb in 1usize..12) {
            let n = bs * nb;
            let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let mut next = || {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((state >> 11) as f64) / ((1u64 << 53) as f64) - 0.5
            };
            let mut d = DMatrix::zeros(n, n);
            for i in 0..nb {
                for j in 0..nb {
                    if i == j || next() > 0.2 {
                        for r in 0..bs {
                            for c in 0..bs {
                                d[(i * bs + r, j * bs + c)] = next();
                            }
                        }
                    }
                }
            }
            let a = BlockSparseMatrix::from_dense(bs, &d);
            let x: Vec<f64> = (0..n).map(|_| next()).collect();
            let mut y = vec![0.0; n];
            a.matvec(&x, &mut y);
            let yd = &d * nalgebra::DVector::from_column_slice(&x);
            for i in 0..n {
                prop_assert!((y[i] - yd[i]).abs() < 1e-13);
            }
            prop_assert!((a.to_dense() - d).abs().max() == 0.0);
        }
    }
}
