//! Sparse linear solvers for the nonsymmetric step systems.
//!
//! The default is a sparse LU factorization (faer) with a cached symbolic
//! analysis and a few steps of iterative refinement. A restarted GMRES with
//! ILU(0) preconditioning is available for larger meshes.

use std::sync::Arc;

use faer::col::ColMut;
use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMat};
use log::{debug, warn};

use crate::error::{Error, Result};
use crate::sparse::{combined_residual, norm2, CsrMatrix, CsrPattern};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum SolverKind {
    #[default]
    Direct,
    Gmres {
        restart: usize,
        max_iter: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveReport {
    /// Krylov iterations, or `None` for a direct solve.
    pub iterations: Option<usize>,
    /// `||b - A x||_2`, recomputed after the solve.
    pub residual_norm: f64,
    pub success: bool,
}

impl SolveReport {
    /// Turns an unsuccessful report into an error.
    pub fn ok(&self, context: &str) -> Result<()> {
        if self.success {
            Ok(())
        } else {
            Err(Error::Solve(format!(
                "{context}: residual {:e} after {}",
                self.residual_norm,
                self.iterations
                    .map_or("direct factorization".to_string(), |i| format!(
                        "{i} iterations"
                    ))
            )))
        }
    }
}

fn residual(a: &CsrMatrix, x: &[f64], b: &[f64]) -> Vec<f64> {
    a.mul_vec(x).iter().zip(b).map(|(ax, bi)| bi - ax).collect()
}

/// Reusable solver. The symbolic LU analysis is cached per sparsity pattern.
#[derive(Debug)]
pub struct LinearSolver {
    kind: SolverKind,
    tol: f64,
    symbolic: Option<(
        Arc<CsrPattern>,
        SymbolicLu<usize>,
        SymbolicSparseColMat<usize>,
    )>,
}

impl LinearSolver {
    pub fn new(kind: SolverKind, tol: f64) -> Self {
        LinearSolver {
            kind,
            tol,
            symbolic: None,
        }
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    pub fn kind(&self) -> SolverKind {
        self.kind
    }

    /// Solves `A x = b`. Never returns unverified output: the report carries
    /// the explicitly recomputed residual and `success` reflects the tolerance.
    pub fn solve(&mut self, a: &CsrMatrix, b: &[f64]) -> Result<(Vec<f64>, SolveReport)> {
        self.solve_with_residual(a, b, &|x| combined_residual(&[(1.0, a)], x, b))
    }

    /// Like [`solve`](Self::solve), but the direct solver's refinement and
    /// success test use `residual(x)` as `b - A x`. Lets callers supply a
    /// residual more accurate than a product with the assembled `a`.
    pub fn solve_with_residual(
        &mut self,
        a: &CsrMatrix,
        b: &[f64],
        residual: &(dyn Fn(&[f64]) -> Vec<f64> + Sync),
    ) -> Result<(Vec<f64>, SolveReport)> {
        if a.nrows() != a.ncols() {
            return Err(Error::Solve(format!(
                "matrix is {}x{}, not square",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.len() != a.nrows() {
            return Err(Error::Solve(format!(
                "rhs has length {}, matrix has {} rows",
                b.len(),
                a.nrows()
            )));
        }
        match self.kind {
            SolverKind::Direct => Ok(self.solve_direct(a, b, residual)),
            SolverKind::Gmres { restart, max_iter } => Ok(gmres(a, b, self.tol, restart, max_iter)),
        }
    }

    fn symbolic_for(
        &mut self,
        a: &CsrMatrix,
    ) -> std::result::Result<(SymbolicLu<usize>, SymbolicSparseColMat<usize>), String> {
        if let Some((p, lu, s)) = &self.symbolic {
            if Arc::ptr_eq(p, a.pattern()) {
                return Ok((lu.clone(), s.clone()));
            }
        }
        let p = a.pattern();
        let n = p.nrows();
        // CSR of A is CSC of A^T; factor A^T and use transposed solves.
        let s = SymbolicSparseColMat::new_checked(
            n,
            n,
            p.row_ptr().to_vec(),
            None,
            p.col_idx().to_vec(),
        );
        let lu = SymbolicLu::try_new(s.as_ref())
            .map_err(|e| format!("symbolic analysis failed: {e:?}"))?;
        self.symbolic = Some((p.clone(), lu.clone(), s.clone()));
        Ok((lu, s))
    }

    fn solve_direct(
        &mut self,
        a: &CsrMatrix,
        b: &[f64],
        residual: &(dyn Fn(&[f64]) -> Vec<f64> + Sync),
    ) -> (Vec<f64>, SolveReport) {
        let n = b.len();
        let b_norm = norm2(b);
        let fail = |msg: String| {
            warn!("direct solve failed: {msg}");
            (
                vec![0.0; n],
                SolveReport {
                    iterations: None,
                    residual_norm: b_norm,
                    success: false,
                },
            )
        };
        let (sym_lu, sym_mat) = match self.symbolic_for(a) {
            Ok(s) => s,
            Err(m) => return fail(m),
        };
        let at = SparseColMatRef::new(sym_mat.as_ref(), &a.values);
        let lu = match Lu::try_new_with_symbolic(sym_lu, at) {
            Ok(lu) => lu,
            Err(e) => return fail(format!("numeric factorization failed: {e:?}")),
        };
        let mut x = b.to_vec();
        lu.solve_transpose_in_place(ColMut::from_slice_mut(&mut x));
        // normwise backward error: the 1/eps block makes ||A|| ||x|| >> ||b||
        let a_norm = a.norm_inf();
        let target_for = |x: &[f64]| self.tol * (a_norm * norm2(x) + b_norm);
        let mut r = residual(&x);
        let mut r_norm = norm2(&r);
        // refine down to the roundoff floor, not just to the tolerance
        for _ in 0..4 {
            if !r_norm.is_finite() || r_norm == 0.0 {
                break;
            }
            lu.solve_transpose_in_place(ColMut::from_slice_mut(&mut r));
            let candidate: Vec<f64> = x.iter().zip(&r).map(|(xi, di)| xi + di).collect();
            r = residual(&candidate);
            let next = norm2(&r);
            debug!("refinement: residual {r_norm:e} -> {next:e}");
            if !(next < r_norm) {
                break;
            }
            x = candidate;
            let stalled = next > 0.5 * r_norm;
            r_norm = next;
            if stalled {
                break;
            }
        }
        let success =
            r_norm.is_finite() && x.iter().all(|v| v.is_finite()) && r_norm <= target_for(&x);
        (
            x,
            SolveReport {
                iterations: None,
                residual_norm: r_norm,
                success,
            },
        )
    }
}

/// One-shot solve with the default direct solver.
pub fn solve(a: &CsrMatrix, b: &[f64], tol: f64) -> Result<(Vec<f64>, SolveReport)> {
    LinearSolver::new(SolverKind::Direct, tol).solve(a, b)
}

/// Incomplete LU factorization with the sparsity pattern of `A`.
#[derive(Debug)]
pub struct Ilu0 {
    pattern: Arc<CsrPattern>,
    values: Vec<f64>,
    diag: Vec<usize>,
}

impl Ilu0 {
    pub fn new(a: &CsrMatrix) -> std::result::Result<Self, String> {
        let p = a.pattern().clone();
        let n = p.nrows();
        let mut diag = vec![usize::MAX; n];
        for r in 0..n {
            match p.position(r, r) {
                Some(k) => diag[r] = k,
                None => return Err(format!("row {r} has no diagonal entry")),
            }
        }
        let mut v = a.values.clone();
        let (rp, ci) = (p.row_ptr(), p.col_idx());
        let mut marker = vec![usize::MAX; n];
        for i in 0..n {
            for k in rp[i]..rp[i + 1] {
                marker[ci[k]] = k;
            }
            for k in rp[i]..diag[i] {
                let col = ci[k];
                let pivot = v[diag[col]];
                if pivot == 0.0 {
                    return Err(format!("zero pivot in row {col}"));
                }
                v[k] /= pivot;
                let lik = v[k];
                for kk in diag[col] + 1..rp[col + 1] {
                    let m = marker[ci[kk]];
                    if m != usize::MAX && m >= rp[i] && m < rp[i + 1] {
                        v[m] -= lik * v[kk];
                    }
                }
            }
            if v[diag[i]] == 0.0 {
                return Err(format!("zero pivot in row {i}"));
            }
            for k in rp[i]..rp[i + 1] {
                marker[ci[k]] = usize::MAX;
            }
        }
        Ok(Ilu0 {
            pattern: p,
            values: v,
            diag,
        })
    }

    /// Solves `L U z = r` in place.
    pub fn apply(&self, z: &mut [f64]) {
        let (rp, ci) = (self.pattern.row_ptr(), self.pattern.col_idx());
        let n = z.len();
        for i in 0..n {
            let mut s = z[i];
            for k in rp[i]..self.diag[i] {
                s -= self.values[k] * z[ci[k]];
            }
            z[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = z[i];
            for k in self.diag[i] + 1..rp[i + 1] {
                s -= self.values[k] * z[ci[k]];
            }
            z[i] = s / self.values[self.diag[i]];
        }
    }
}

/// Right-preconditioned restarted GMRES.
pub fn gmres(
    a: &CsrMatrix,
    b: &[f64],
    tol: f64,
    restart: usize,
    max_iter: usize,
) -> (Vec<f64>, SolveReport) {
    let n = b.len();
    let b_norm = norm2(b);
    let mut x = vec![0.0; n];
    if b_norm == 0.0 {
        return (
            x,
            SolveReport {
                iterations: Some(0),
                residual_norm: 0.0,
                success: true,
            },
        );
    }
    let ilu = match Ilu0::new(a) {
        Ok(p) => Some(p),
        Err(e) => {
            warn!("ILU(0) unavailable ({e}), running unpreconditioned");
            None
        }
    };
    let precond = |v: &mut [f64]| {
        if let Some(p) = &ilu {
            p.apply(v);
        }
    };
    let m = restart.max(1);
    let target = tol * b_norm;
    let mut iters = 0;
    let mut r = residual(a, &x, b);
    let mut beta = norm2(&r);
    while beta > target && iters < max_iter {
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
        basis.push(r.iter().map(|v| v / beta).collect());
        let mut h = vec![vec![0.0; m]; m + 1];
        let (mut cs, mut sn) = (vec![0.0; m], vec![0.0; m]);
        let mut g = vec![0.0; m + 1];
        g[0] = beta;
        let mut z_store: Vec<Vec<f64>> = Vec::with_capacity(m);
        let mut used = 0;
        for j in 0..m {
            if iters >= max_iter {
                break;
            }
            iters += 1;
            let mut z = basis[j].clone();
            precond(&mut z);
            let mut w = a.mul_vec(&z);
            z_store.push(z);
            for i in 0..=j {
                h[i][j] = crate::sparse::dot(&w, &basis[i]);
                for (wk, vk) in w.iter_mut().zip(&basis[i]) {
                    *wk -= h[i][j] * vk;
                }
            }
            let wn = norm2(&w);
            h[j + 1][j] = wn;
            for i in 0..j {
                let t = cs[i] * h[i][j] + sn[i] * h[i + 1][j];
                h[i + 1][j] = -sn[i] * h[i][j] + cs[i] * h[i + 1][j];
                h[i][j] = t;
            }
            let rho = h[j][j].hypot(h[j + 1][j]);
            if rho == 0.0 {
                break;
            }
            cs[j] = h[j][j] / rho;
            sn[j] = h[j + 1][j] / rho;
            h[j][j] = rho;
            h[j + 1][j] = 0.0;
            g[j + 1] = -sn[j] * g[j];
            g[j] *= cs[j];
            used = j + 1;
            if g[j + 1].abs() <= target || wn == 0.0 {
                break;
            }
            basis.push(w.iter().map(|v| v / wn).collect());
        }
        let mut y = vec![0.0; used];
        for i in (0..used).rev() {
            let s: f64 = (i + 1..used).map(|k| h[i][k] * y[k]).sum();
            y[i] = (g[i] - s) / h[i][i];
        }
        for (yi, zi) in y.iter().zip(&z_store) {
            for (xk, zk) in x.iter_mut().zip(zi) {
                *xk += yi * zk;
            }
        }
        r = residual(a, &x, b);
        let next = norm2(&r);
        if !next.is_finite() || used == 0 {
            beta = next;
            break;
        }
        beta = next;
    }
    let success = beta.is_finite() && beta <= target;
    (
        x,
        SolveReport {
            iterations: Some(iters),
            residual_norm: beta,
            success,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tridiag(n: usize, lo: f64, d: f64, up: f64) -> CsrMatrix {
        let mut dense = vec![0.0; n * n];
        for i in 0..n {
            dense[i * n + i] = d;
            if i > 0 {
                dense[i * n + i - 1] = lo;
            }
            if i + 1 < n {
                dense[i * n + i + 1] = up;
            }
        }
        CsrMatrix::from_dense(n, n, &dense)
    }

    #[test]
    fn identity_returns_rhs() {
        let a = CsrMatrix::identity(5);
        let b = vec![1.0, -2.0, 3.5, 0.0, 7.0];
        let (x, rep) = solve(&a, &b, 1e-12).unwrap();
        assert_eq!(x, b);
        assert!(rep.success);
        assert_eq!(rep.iterations, None);
    }

    #[test]
    fn nonsymmetric_direct_and_gmres_agree() {
        let a = tridiag(50, -1.3, 4.0, -0.4);
        let b: Vec<f64> = (0..50).map(|i| (i as f64 * 0.3).sin()).collect();
        let (x1, r1) = solve(&a, &b, 1e-12).unwrap();
        let (x2, r2) = gmres(&a, &b, 1e-12, 20, 500);
        assert!(r1.success && r2.success);
        for (p, q) in x1.iter().zip(&x2) {
            assert!((p - q).abs() < 1e-10);
        }
        assert!(r1.residual_norm <= 1e-12 * norm2(&b));
    }

    #[test]
    fn symbolic_cache_is_reused_across_values() {
        let mut s = LinearSolver::new(SolverKind::Direct, 1e-12);
        let a = tridiag(10, -1.0, 3.0, -1.0);
        let b = vec![1.0; 10];
        let (x, _) = s.solve(&a, &b).unwrap();
        let mut a2 = a.clone();
        for v in a2.values.iter_mut() {
            *v *= 2.0;
        }
        let (x2, rep) = s.solve(&a2, &b).unwrap();
        assert!(rep.success);
        for (p, q) in x.iter().zip(&x2) {
            assert!((p - 2.0 * q).abs() < 1e-12);
        }
    }

    #[test]
    fn singular_system_is_reported() {
        // rank one: [[1,1],[1,1]] with b outside the range
        let a = CsrMatrix::from_dense(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let (_, rep) = solve(&a, &[1.0, 0.0], 1e-10).unwrap();
        assert!(!rep.success);
        assert!(rep.ok("test").is_err());
    }

    #[test]
    fn shape_errors() {
        let a = CsrMatrix::identity(3);
        assert!(solve(&a, &[1.0], 1e-10).is_err());
    }
}
