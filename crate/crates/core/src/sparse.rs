//! Compressed-row sparse matrices with a shareable sparsity pattern.

use std::sync::Arc;

use crate::error::{Error, Result};

/// Row offsets and sorted, unique column indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsrPattern {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
}

impl CsrPattern {
    /// Builds a pattern from per-row column lists (sorted and deduplicated here).
    pub fn from_rows(ncols: usize, mut rows: Vec<Vec<usize>>) -> Self {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        row_ptr.push(0);
        let mut col_idx = Vec::new();
        for r in rows.iter_mut() {
            r.sort_unstable();
            r.dedup();
            debug_assert!(r.last().is_none_or(|&c| c < ncols));
            col_idx.extend_from_slice(r);
            row_ptr.push(col_idx.len());
        }
        CsrPattern {
            nrows: rows.len(),
            ncols,
            row_ptr,
            col_idx,
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    /// Column indices of row `r`.
    pub fn row(&self, r: usize) -> &[usize] {
        &self.col_idx[self.row_ptr[r]..self.row_ptr[r + 1]]
    }

    /// Storage position of entry `(r, c)`, if it is in the pattern.
    pub fn position(&self, r: usize, c: usize) -> Option<usize> {
        self.row(r)
            .binary_search(&c)
            .ok()
            .map(|k| self.row_ptr[r] + k)
    }
}

#[derive(Debug, Clone)]
pub struct CsrMatrix {
    pattern: Arc<CsrPattern>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    pub fn zeros(pattern: Arc<CsrPattern>) -> Self {
        let n = pattern.nnz();
        CsrMatrix {
            pattern,
            values: vec![0.0; n],
        }
    }

    pub fn from_parts(pattern: Arc<CsrPattern>, values: Vec<f64>) -> Result<Self> {
        if values.len() != pattern.nnz() {
            return Err(Error::SpaceMismatch(format!(
                "{} values for {} pattern entries",
                values.len(),
                pattern.nnz()
            )));
        }
        Ok(CsrMatrix { pattern, values })
    }

    /// Identity matrix of size `n`.
    pub fn identity(n: usize) -> Self {
        let rows = (0..n).map(|i| vec![i]).collect();
        CsrMatrix {
            pattern: Arc::new(CsrPattern::from_rows(n, rows)),
            values: vec![1.0; n],
        }
    }

    /// Builds a matrix from dense row-major data, keeping nonzeros only.
    pub fn from_dense(nrows: usize, ncols: usize, data: &[f64]) -> Self {
        assert_eq!(data.len(), nrows * ncols);
        let rows: Vec<Vec<usize>> = (0..nrows)
            .map(|r| (0..ncols).filter(|&c| data[r * ncols + c] != 0.0).collect())
            .collect();
        let pattern = Arc::new(CsrPattern::from_rows(ncols, rows));
        let mut m = CsrMatrix::zeros(pattern);
        for r in 0..nrows {
            for k in m.pattern.row_ptr[r]..m.pattern.row_ptr[r + 1] {
                m.values[k] = data[r * ncols + m.pattern.col_idx[k]];
            }
        }
        m
    }

    pub fn pattern(&self) -> &Arc<CsrPattern> {
        &self.pattern
    }

    pub fn nrows(&self) -> usize {
        self.pattern.nrows
    }

    pub fn ncols(&self) -> usize {
        self.pattern.ncols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.pattern.position(r, c).map_or(0.0, |k| self.values[k])
    }

    pub fn row_values(&self, r: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.pattern.row_ptr[r], self.pattern.row_ptr[r + 1]);
        (&self.pattern.col_idx[a..b], &self.values[a..b])
    }

    /// `y = A x`
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols());
        let mut y = vec![0.0; self.nrows()];
        crate::par::for_each_mut(&mut y, |r, yr| {
            let (cols, vals) = self.row_values(r);
            *yr = cols.iter().zip(vals).map(|(&c, &v)| v * x[c]).sum();
        });
        y
    }

    /// `x^T A y`
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        let ay = self.mul_vec(y);
        x.iter().zip(&ay).map(|(a, b)| a * b).sum()
    }

    /// `A^T x`
    pub fn mul_transpose_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.nrows());
        let mut y = vec![0.0; self.ncols()];
        for (r, &xr) in x.iter().enumerate() {
            let (cols, vals) = self.row_values(r);
            for (&c, &v) in cols.iter().zip(vals) {
                y[c] += v * xr;
            }
        }
        y
    }

    /// Largest `|A_ij - A_ji|` over stored entries (square matrices).
    pub fn max_asymmetry(&self) -> f64 {
        let mut m = 0.0f64;
        for r in 0..self.nrows() {
            let (cols, vals) = self.row_values(r);
            for (&c, &v) in cols.iter().zip(vals) {
                m = m.max((v - self.get(c, r)).abs());
            }
        }
        m
    }

    /// Largest absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.nrows())
            .map(|r| self.row_values(r).1.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Dense row-major copy. Intended for small matrices in tests and oracles.
    pub fn to_dense(&self) -> Vec<f64> {
        let n = self.ncols();
        let mut d = vec![0.0; self.nrows() * n];
        for r in 0..self.nrows() {
            let (cols, vals) = self.row_values(r);
            for (&c, &v) in cols.iter().zip(vals) {
                d[r * n + c] = v;
            }
        }
        d
    }

    /// Linear combination `sum_i w_i A_i` of matrices sharing one pattern.
    pub fn combine(terms: &[(f64, &CsrMatrix)]) -> Result<CsrMatrix> {
        let (_, first) = terms
            .first()
            .ok_or_else(|| Error::SpaceMismatch("empty combination".into()))?;
        if terms
            .iter()
            .any(|(_, m)| !Arc::ptr_eq(&m.pattern, &first.pattern))
        {
            return Err(Error::SpaceMismatch(
                "combined matrices must share a sparsity pattern".into(),
            ));
        }
        let mut values = vec![0.0; first.values.len()];
        crate::par::for_each_mut(&mut values, |k, v| {
            *v = terms.iter().map(|(w, m)| w * m.values[k]).sum();
        });
        Ok(CsrMatrix {
            pattern: first.pattern.clone(),
            values,
        })
    }
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

/// `b - sum_i w_i A_i x`, each row accumulated in double-double arithmetic.
///
/// Accurate even when one term dwarfs the others, which is where forming
/// `sum_i w_i A_i` first would round the small terms away.
pub fn combined_residual(terms: &[(f64, &CsrMatrix)], x: &[f64], b: &[f64]) -> Vec<f64> {
    let mut r = vec![0.0; b.len()];
    crate::par::for_each_mut(&mut r, |i, ri| {
        let (mut hi, mut lo) = (b[i], 0.0);
        for (w, m) in terms {
            let (cols, vals) = m.row_values(i);
            let (mut th, mut tl) = (0.0, 0.0);
            for (&j, &v) in cols.iter().zip(vals) {
                let p = v * x[j];
                let (s, e) = two_sum(th, p);
                th = s;
                tl += e + v.mul_add(x[j], -p);
            }
            let p = -w * th;
            let (s, e) = two_sum(hi, p);
            hi = s;
            lo += e + (-w).mul_add(th, -p) - w * tl;
        }
        *ri = hi + lo;
    });
    r
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn combined_residual_matches_plain_arithmetic() {
        let a = CsrMatrix::from_dense(2, 2, &[2.0, -1.0, 0.5, 3.0]);
        let b = CsrMatrix::from_dense(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let x = [0.25, -2.0];
        let r = combined_residual(&[(2.0, &a), (-1.0, &b)], &x, &[1.0, 1.0]);
        let ax = a.mul_vec(&x);
        for i in 0..2 {
            assert_eq!(r[i], 1.0 - 2.0 * ax[i] + x[i]);
        }
    }

    #[test]
    fn combined_residual_survives_cancellation() {
        // G x cancels to 1e-20 exactly; a plain product loses it entirely
        let g = CsrMatrix::from_dense(1, 3, &[1.0, 1.0, -1.0]);
        let x = [1.0, 1e-20, 1.0];
        let r = combined_residual(&[(1e8, &g)], &x, &[0.0]);
        assert_eq!(r[0], -1e-12);
        assert_eq!(g.mul_vec(&x)[0], 0.0);
    }

    #[test]
    fn pattern_rows_sorted_unique() {
        let p = CsrPattern::from_rows(4, vec![vec![3, 1, 1, 0], vec![], vec![2, 2]]);
        assert_eq!(p.row(0), &[0, 1, 3]);
        assert!(p.row(1).is_empty());
        assert_eq!(p.position(2, 2), Some(3));
        assert_eq!(p.position(0, 2), None);
    }

    #[test]
    fn dense_round_trip_and_products() {
        let d = [1.0, 0.0, 2.0, 0.0, 3.0, 0.0, 4.0, 0.0, 5.0];
        let m = CsrMatrix::from_dense(3, 3, &d);
        assert_eq!(m.to_dense(), d);
        assert_eq!(m.mul_vec(&[1.0, 1.0, 1.0]), vec![3.0, 3.0, 9.0]);
        assert_eq!(m.mul_transpose_vec(&[1.0, 1.0, 1.0]), vec![5.0, 3.0, 7.0]);
        assert_eq!(m.max_asymmetry(), 2.0);
    }

    #[test]
    fn combine_requires_shared_pattern() {
        let a = CsrMatrix::identity(3);
        let b = CsrMatrix::identity(3);
        assert!(CsrMatrix::combine(&[(1.0, &a), (1.0, &b)]).is_err());
        let c = CsrMatrix::combine(&[(2.0, &a), (3.0, &a)]).unwrap();
        assert_eq!(c.values, vec![5.0; 3]);
    }
}
