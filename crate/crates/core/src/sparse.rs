//! Compressed sparse column storage and thin wrappers over the sparse LU
//! and LDL^T factorizations from `faer`.

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::cholesky::ldlt::factor::LdltRegularization;
use faer::linalg::solvers::Solve;
use faer::sparse::linalg::cholesky::{
    factorize_symbolic_cholesky, CholeskySymbolicParams, LdltRef, SymbolicCholesky,
    SymmetricOrdering,
};
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMatRef};
use faer::{Conj, MatMut, Par, Side};

use crate::error::{Error, Result};

/// Accumulates `(row, col, value)` entries; duplicates are summed.
#[derive(Debug, Clone, Default)]
pub struct Triplets {
    pub nrows: usize,
    pub ncols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl Triplets {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            entries: Vec::new(),
        }
    }

    pub fn with_capacity(nrows: usize, ncols: usize, cap: usize) -> Self {
        Self {
            nrows,
            ncols,
            entries: Vec::with_capacity(cap),
        }
    }

    #[inline]
    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.nrows && col < self.ncols);
        self.entries.push((row, col, value));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_csc(&self) -> CscMatrix {
        self.clone().into_csc()
    }

    /// Like [`Triplets::to_csc`] but reuses the entry buffer.
    pub fn into_csc(self) -> CscMatrix {
        let mut entries = self.entries;
        entries.sort_unstable_by_key(|&(r, c, _)| (c, r));
        let mut col_ptr = vec![0usize; self.ncols + 1];
        let mut row_idx = Vec::with_capacity(entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in entries {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                row_idx.push(r);
                values.push(v);
                col_ptr[c + 1] += 1;
                last = Some((r, c));
            }
        }
        for c in 0..self.ncols {
            col_ptr[c + 1] += col_ptr[c];
        }
        CscMatrix {
            nrows: self.nrows,
            ncols: self.ncols,
            col_ptr,
            row_idx,
            values,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CscMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub col_ptr: Vec<usize>,
    pub row_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl CscMatrix {
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.position(row, col).map_or(0.0, |k| self.values[k])
    }

    /// Storage index of entry `(row, col)`, if structurally present.
    pub fn position(&self, row: usize, col: usize) -> Option<usize> {
        let range = self.col_ptr[col]..self.col_ptr[col + 1];
        self.row_idx[range.clone()]
            .binary_search(&row)
            .ok()
            .map(|k| range.start + k)
    }

    /// `y = A x`
    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        self.mul_vec_add(1.0, x, y);
    }

    /// `y += alpha A x`
    pub fn mul_vec_add(&self, alpha: f64, x: &[f64], y: &mut [f64]) {
        for c in 0..self.ncols {
            let xc = alpha * x[c];
            if xc == 0.0 {
                continue;
            }
            for k in self.col_ptr[c]..self.col_ptr[c + 1] {
                y[self.row_idx[k]] += self.values[k] * xc;
            }
        }
    }

    /// `y = A^T x`
    pub fn mul_transpose_vec(&self, x: &[f64], y: &mut [f64]) {
        for (c, yc) in y.iter_mut().enumerate().take(self.ncols) {
            let mut s = 0.0;
            for k in self.col_ptr[c]..self.col_ptr[c + 1] {
                s += self.values[k] * x[self.row_idx[k]];
            }
            *yc = s;
        }
    }

    pub fn scaled(&self, alpha: f64) -> CscMatrix {
        CscMatrix {
            values: self.values.iter().map(|v| alpha * v).collect(),
            ..self.clone()
        }
    }

    /// `alpha A + beta B` for matrices with arbitrary patterns.
    pub fn add(&self, alpha: f64, other: &CscMatrix, beta: f64) -> CscMatrix {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let mut t = Triplets::with_capacity(self.nrows, self.ncols, self.nnz() + other.nnz());
        for (m, s) in [(self, alpha), (other, beta)] {
            for c in 0..m.ncols {
                for k in m.col_ptr[c]..m.col_ptr[c + 1] {
                    t.push(m.row_idx[k], c, s * m.values[k]);
                }
            }
        }
        t.to_csc()
    }

    /// Largest `|A_ij - A_ji|` relative to the largest entry.
    pub fn asymmetry(&self) -> f64 {
        let scale = self.values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        let mut worst = 0.0f64;
        for c in 0..self.ncols {
            for k in self.col_ptr[c]..self.col_ptr[c + 1] {
                let r = self.row_idx[k];
                worst = worst.max((self.values[k] - self.get(c, r)).abs());
            }
        }
        worst / scale
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.ncols]; self.nrows];
        for c in 0..self.ncols {
            for k in self.col_ptr[c]..self.col_ptr[c + 1] {
                d[self.row_idx[k]][c] += self.values[k];
            }
        }
        d
    }

    fn symbolic(&self) -> SymbolicSparseColMatRef<'_, usize> {
        SymbolicSparseColMatRef::new_checked(self.nrows, self.ncols, &self.col_ptr, None, &self.row_idx)
    }

    /// Upper triangle with every diagonal entry present, shifted by `diag`.
    fn upper_with_diagonal(&self, diag: impl Fn(usize) -> f64) -> CscMatrix {
        let mut col_ptr = Vec::with_capacity(self.ncols + 1);
        let mut row_idx = Vec::new();
        let mut values = Vec::new();
        col_ptr.push(0);
        for c in 0..self.ncols {
            let mut d = diag(c);
            for k in self.col_ptr[c]..self.col_ptr[c + 1] {
                let r = self.row_idx[k];
                if r < c {
                    row_idx.push(r);
                    values.push(self.values[k]);
                } else if r == c {
                    d += self.values[k];
                }
            }
            row_idx.push(c);
            values.push(d);
            col_ptr.push(row_idx.len());
        }
        CscMatrix {
            nrows: self.nrows,
            ncols: self.ncols,
            col_ptr,
            row_idx,
            values,
        }
    }

    fn as_faer(&self) -> SparseColMatRef<'_, usize, f64> {
        SparseColMatRef::new(self.symbolic(), &self.values)
    }
}

/// Fill-reducing symbolic analysis, reusable for matrices sharing a pattern.
#[derive(Debug, Clone)]
pub struct LuPattern {
    symbolic: SymbolicLu<usize>,
    n: usize,
}

impl LuPattern {
    pub fn analyze(a: &CscMatrix) -> Result<Self> {
        let symbolic = SymbolicLu::try_new(a.symbolic()).map_err(|e| Error::LinearSolve {
            message: format!("symbolic analysis failed: {e:?}"),
            residual: f64::NAN,
        })?;
        Ok(Self {
            symbolic,
            n: a.nrows,
        })
    }

    pub fn factor(&self, a: &CscMatrix) -> Result<SparseLu> {
        assert_eq!(a.nrows, self.n);
        let lu = Lu::try_new_with_symbolic(self.symbolic.clone(), a.as_faer()).map_err(|e| {
            Error::LinearSolve {
                message: format!("numeric factorization failed: {e:?}"),
                residual: f64::NAN,
            }
        })?;
        Ok(SparseLu { lu, n: self.n })
    }
}

/// Numeric LU factors with partial pivoting.
#[derive(Debug, Clone)]
pub struct SparseLu {
    lu: Lu<usize, f64>,
    n: usize,
}

impl SparseLu {
    pub fn new(a: &CscMatrix) -> Result<Self> {
        if a.nrows != a.ncols {
            return Err(Error::LinearSolve {
                message: format!("matrix is {}x{}", a.nrows, a.ncols),
                residual: f64::NAN,
            });
        }
        LuPattern::analyze(a)?.factor(a)
    }

    pub fn solve_in_place(&self, rhs: &mut [f64]) {
        assert_eq!(rhs.len(), self.n);
        self.lu
            .solve_in_place(MatMut::from_column_major_slice_mut(rhs, self.n, 1));
    }

    /// Solve with residual-driven iterative refinement. Returns the
    /// solution and the achieved relative residual `|b - Ax| / |b|`.
    pub fn solve_refined(&self, a: &CscMatrix, b: &[f64], steps: usize) -> (Vec<f64>, f64) {
        refine(|r| self.solve_in_place(r), a, b, 1e-14, steps)
    }
}

/// LDL^T factors of a symmetric quasi-definite matrix: the diagonal block
/// flagged positive is definite, the remaining block is treated as negative
/// definite after a small static shift. Solves are refined against the
/// unshifted matrix.
pub struct SymmetricLdlt {
    symbolic: SymbolicCholesky<usize>,
    values: Vec<f64>,
    n: usize,
}

impl std::fmt::Debug for SymmetricLdlt {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SymmetricLdlt")
            .field("n", &self.n)
            .field("factor_nnz", &self.values.len())
            .finish()
    }
}

impl SymmetricLdlt {
    /// `positive[i]` marks rows of the definite block. `shift` is the
    /// static regularization subtracted from the other diagonal entries,
    /// relative to the largest diagonal magnitude.
    pub fn new(a: &CscMatrix, positive: &[bool], shift: f64) -> Result<Self> {
        let n = a.nrows;
        if a.ncols != n || positive.len() != n {
            return Err(Error::LinearSolve {
                message: format!("matrix is {}x{}", a.nrows, a.ncols),
                residual: f64::NAN,
            });
        }
        let scale = (0..n).map(|i| a.get(i, i).abs()).fold(0.0, f64::max).max(1.0);
        let delta = shift * scale;
        let upper = a.upper_with_diagonal(|i| if positive[i] { 0.0 } else { -delta });
        let fail = |stage: &str, e: String| Error::LinearSolve {
            message: format!("{stage} failed: {e}"),
            residual: f64::NAN,
        };
        let symbolic = factorize_symbolic_cholesky(
            upper.symbolic(),
            Side::Upper,
            SymmetricOrdering::Amd,
            CholeskySymbolicParams::default(),
        )
        .map_err(|e| fail("symbolic analysis", format!("{e:?}")))?;
        let signs: Vec<i8> = positive.iter().map(|&p| if p { 1 } else { -1 }).collect();
        let mut values = vec![0.0; symbolic.len_val()];
        let mut mem = MemBuffer::new(
            symbolic.factorize_numeric_ldlt_scratch::<f64>(Par::Seq, Default::default()),
        );
        symbolic
            .factorize_numeric_ldlt(
                &mut values,
                upper.as_faer(),
                Side::Upper,
                LdltRegularization {
                    dynamic_regularization_signs: Some(&signs),
                    dynamic_regularization_delta: delta.max(f64::EPSILON * scale),
                    dynamic_regularization_epsilon: f64::EPSILON * scale,
                },
                Par::Seq,
                MemStack::new(&mut mem),
                Default::default(),
            )
            .map_err(|e| fail("numeric factorization", format!("{e:?}")))?;
        Ok(Self {
            symbolic,
            values,
            n,
        })
    }

    pub fn factor_nnz(&self) -> usize {
        self.values.len()
    }

    pub fn solve_in_place(&self, rhs: &mut [f64]) {
        assert_eq!(rhs.len(), self.n);
        let mut mem =
            MemBuffer::new(self.symbolic.solve_in_place_scratch::<f64>(1, Par::Seq));
        LdltRef::new(&self.symbolic, &self.values).solve_in_place_with_conj(
            Conj::No,
            MatMut::from_column_major_slice_mut(rhs, self.n, 1),
            Par::Seq,
            MemStack::new(&mut mem),
        );
    }

    /// Refine until the relative residual against `a` drops below `tol` or
    /// `steps` corrections have been applied.
    pub fn solve_refined(&self, a: &CscMatrix, b: &[f64], tol: f64, steps: usize) -> (Vec<f64>, f64) {
        refine(|r| self.solve_in_place(r), a, b, tol, steps)
    }
}

fn refine(
    solve: impl Fn(&mut [f64]),
    a: &CscMatrix,
    b: &[f64],
    tol: f64,
    steps: usize,
) -> (Vec<f64>, f64) {
    let mut x = b.to_vec();
    solve(&mut x);
    let bnorm = norm(b).max(f64::MIN_POSITIVE);
    let mut r = vec![0.0; b.len()];
    let mut rel = f64::INFINITY;
    for step in 0..=steps {
        a.mul_vec(&x, &mut r);
        r.iter_mut().zip(b).for_each(|(ri, bi)| *ri = bi - *ri);
        rel = norm(&r) / bnorm;
        if step == steps || rel < tol || !rel.is_finite() {
            break;
        }
        solve(&mut r);
        x.iter_mut().zip(&r).for_each(|(xi, di)| *xi += di);
    }
    (x, rel)
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
