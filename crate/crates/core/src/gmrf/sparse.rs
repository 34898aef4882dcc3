//! Coordinate-list storage for symmetric precision matrices and a plain CSR
//! matrix for the predictor mapping.

use nalgebra::DMatrix;

use super::GmrfError;

/// Symmetric matrix stored as its lower triangle in coordinate form.
///
/// Duplicate coordinates are summed. The order of `entries` is part of the
/// matrix identity as far as [`super::SymbolicCholesky`] is concerned: two
/// matrices built by the same code path share a symbolic factorization.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSymMatrix {
    dim: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl SparseSymMatrix {
    pub fn new(dim: usize) -> Result<Self, GmrfError> {
        if dim == 0 {
            return Err(GmrfError::EmptyMatrix);
        }
        Ok(Self {
            dim,
            entries: Vec::new(),
        })
    }

    pub fn with_capacity(dim: usize, capacity: usize) -> Result<Self, GmrfError> {
        let mut m = Self::new(dim)?;
        m.entries.reserve(capacity);
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [(usize, usize, f64)] {
        &mut self.entries
    }

    /// Adds `value` at `(row, col)`; the pair is folded into the lower triangle.
    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        assert!(
            row < self.dim && col < self.dim,
            "index ({row}, {col}) out of range for dim {}",
            self.dim
        );
        let (r, c) = if row >= col { (row, col) } else { (col, row) };
        self.entries.push((r, c, value));
    }

    /// Adds a dense symmetric block with its top-left corner at `offset`.
    pub fn push_dense_block(&mut self, offset: usize, block: &DMatrix<f64>) {
        for j in 0..block.ncols() {
            for i in j..block.nrows() {
                self.push(offset + i, offset + j, block[(i, j)]);
            }
        }
    }

    /// Adds every entry of `other` shifted by `offset` along both axes.
    pub fn push_block(&mut self, offset: usize, other: &SparseSymMatrix) {
        for &(r, c, v) in &other.entries {
            self.push(offset + r, offset + c, v);
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            dim: self.dim,
            entries: self
                .entries
                .iter()
                .map(|&(r, c, v)| (r, c, v * factor))
                .collect(),
        }
    }

    /// Block-diagonal replication of `self`, `copies` times.
    pub fn replicate(&self, copies: usize) -> Result<Self, GmrfError> {
        let mut out = Self::with_capacity(self.dim * copies, self.entries.len() * copies)?;
        for k in 0..copies {
            out.push_block(k * self.dim, self);
        }
        Ok(out)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.dim];
        for &(r, c, v) in &self.entries {
            if r == c {
                d[r] += v;
            }
        }
        d
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.dim);
        let mut y = vec![0.0; self.dim];
        for &(r, c, v) in &self.entries {
            y[r] += v * x[c];
            if r != c {
                y[c] += v * x[r];
            }
        }
        y
    }

    /// `xᵀ M x`.
    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.dim);
        self.entries
            .iter()
            .map(|&(r, c, v)| {
                if r == c {
                    v * x[r] * x[r]
                } else {
                    2.0 * v * x[r] * x[c]
                }
            })
            .sum()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for &(r, c, v) in &self.entries {
            m[(r, c)] += v;
            if r != c {
                m[(c, r)] += v;
            }
        }
        m
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Result<Self, GmrfError> {
        let n = m.nrows();
        if n != m.ncols() {
            return Err(GmrfError::NotSquare);
        }
        let mut out = Self::new(n)?;
        for j in 0..n {
            for i in j..n {
                if m[(i, j)] != 0.0 {
                    out.push(i, j, m[(i, j)]);
                }
            }
        }
        Ok(out)
    }
}

/// General sparse matrix in compressed row form.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from per-row `(column, value)` lists. Columns within a row are
    /// kept in the given order; duplicates are allowed and act additively.
    pub fn from_rows(ncols: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let nrows = rows.len();
        let mut row_ptr = Vec::with_capacity(nrows + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for row in rows {
            for (c, v) in row {
                assert!(c < ncols, "column {c} out of range for {ncols} columns");
                col_idx.push(c);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        Self {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols);
        (0..self.nrows)
            .map(|i| self.row(i).map(|(c, v)| v * x[c]).sum())
            .collect()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for i in 0..self.nrows {
            for (c, v) in self.row(i) {
                m[(i, c)] += v;
            }
        }
        m
    }
}
