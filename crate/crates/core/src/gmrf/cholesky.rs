//! Sparse Cholesky factorization with a minimum-degree fill-reducing order.
//!
//! The analysis step ([`SymbolicCholesky::analyze`]) depends only on the
//! coordinate pattern of the input, so precision matrices whose values change
//! with the hyperparameters but whose pattern does not can reuse it. The
//! numeric step is a left-looking column factorization over the precomputed
//! pattern of `L`. Marginal variances come from the Takahashi recursions on
//! that pattern, which yield every entry of `M⁻¹` whose position is nonzero
//! in `L + Lᵀ`.

use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use super::{GmrfError, SparseSymMatrix};

/// Pivots at or below this multiple of their own diagonal entry are treated
/// as a loss of positive definiteness.
pub const PIVOT_TOLERANCE: f64 = 1e-12;

#[derive(Debug)]
struct SymbolicInner {
    dim: usize,
    /// `perm[k]` is the original index eliminated at step `k`.
    perm: Vec<usize>,
    /// `iperm[original] = k`.
    iperm: Vec<usize>,
    n_entries: usize,
    /// Maps each coordinate entry of the input (in its stored order) to a slot.
    entry_to_slot: Vec<usize>,
    /// Slots in permuted lower-CSC order: column pointers and row indices.
    a_colptr: Vec<usize>,
    a_rows: Vec<usize>,
    diag_slots: Vec<usize>,
    /// Strictly-lower pattern of `L` (permuted indices, rows sorted).
    l_colptr: Vec<usize>,
    l_rows: Vec<usize>,
    /// Row pattern of `L`: for row `j`, the columns `k < j` with `L[j,k] ≠ 0`.
    r_ptr: Vec<usize>,
    r_cols: Vec<usize>,
}

/// Reusable symbolic analysis: ordering plus the nonzero pattern of `L`.
#[derive(Debug, Clone)]
pub struct SymbolicCholesky {
    inner: Arc<SymbolicInner>,
}

impl SymbolicCholesky {
    pub fn analyze(m: &SparseSymMatrix) -> Self {
        let n = m.dim();

        let mut unique: Vec<(usize, usize)> = m.entries().iter().map(|&(r, c, _)| (r, c)).collect();
        for i in 0..n {
            unique.push((i, i));
        }
        unique.sort_unstable();
        unique.dedup();

        let mut adjacency: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
        for &(r, c) in &unique {
            if r != c {
                adjacency[r].insert(c);
                adjacency[c].insert(r);
            }
        }

        let (perm, patterns) = minimum_degree(adjacency);
        let mut iperm = vec![0; n];
        for (k, &p) in perm.iter().enumerate() {
            iperm[p] = k;
        }

        let mut l_colptr = Vec::with_capacity(n + 1);
        let mut l_rows = Vec::new();
        l_colptr.push(0);
        for pattern in &patterns {
            let mut rows: Vec<usize> = pattern.iter().map(|&o| iperm[o]).collect();
            rows.sort_unstable();
            l_rows.extend(rows);
            l_colptr.push(l_rows.len());
        }

        let mut r_counts = vec![0usize; n];
        for &r in &l_rows {
            r_counts[r] += 1;
        }
        let mut r_ptr = vec![0usize; n + 1];
        for j in 0..n {
            r_ptr[j + 1] = r_ptr[j] + r_counts[j];
        }
        let mut fill = r_ptr.clone();
        let mut r_cols = vec![0usize; l_rows.len()];
        for k in 0..n {
            for &r in &l_rows[l_colptr[k]..l_colptr[k + 1]] {
                r_cols[fill[r]] = k;
                fill[r] += 1;
            }
        }

        // Slots: unique coordinates in permuted lower-CSC order.
        let mut permuted: Vec<(usize, usize, usize)> = unique
            .iter()
            .enumerate()
            .map(|(u, &(r, c))| {
                let (pr, pc) = (iperm[r], iperm[c]);
                let (row, col) = if pr >= pc { (pr, pc) } else { (pc, pr) };
                (col, row, u)
            })
            .collect();
        permuted.sort_unstable();
        let mut unique_to_slot = vec![0usize; unique.len()];
        let mut a_colptr = vec![0usize; n + 1];
        let mut a_rows = Vec::with_capacity(permuted.len());
        let mut diag_slots = vec![0usize; n];
        for (slot, &(col, row, u)) in permuted.iter().enumerate() {
            unique_to_slot[u] = slot;
            a_colptr[col + 1] += 1;
            a_rows.push(row);
            if row == col {
                diag_slots[col] = slot;
            }
        }
        for j in 0..n {
            a_colptr[j + 1] += a_colptr[j];
        }

        let lookup: HashMap<(usize, usize), usize> = unique
            .iter()
            .enumerate()
            .map(|(u, &rc)| (rc, unique_to_slot[u]))
            .collect();
        let entry_to_slot = m
            .entries()
            .iter()
            .map(|&(r, c, _)| lookup[&(r, c)])
            .collect();

        Self {
            inner: Arc::new(SymbolicInner {
                dim: n,
                perm,
                iperm,
                n_entries: m.entries().len(),
                entry_to_slot,
                a_colptr,
                a_rows,
                diag_slots,
                l_colptr,
                l_rows,
                r_ptr,
                r_cols,
            }),
        }
    }

    pub fn dim(&self) -> usize {
        self.inner.dim
    }

    /// Number of strictly-lower nonzeros in `L`.
    pub fn factor_nnz(&self) -> usize {
        self.inner.l_rows.len()
    }

    /// Numeric factorization of a matrix with the analysed pattern.
    pub fn factor(&self, m: &SparseSymMatrix) -> Result<Factorization, GmrfError> {
        let s = &*self.inner;
        if m.dim() != s.dim || m.entries().len() != s.n_entries {
            return Err(GmrfError::PatternMismatch);
        }
        let n = s.dim;
        let mut a_vals = vec![0.0; s.a_rows.len()];
        for (e, &(_, _, v)) in m.entries().iter().enumerate() {
            a_vals[s.entry_to_slot[e]] += v;
        }

        let mut lx = vec![0.0; s.l_rows.len()];
        let mut diag = vec![0.0; n];
        let mut work = vec![0.0; n];
        let mut next = s.l_colptr[..n].to_vec();

        for j in 0..n {
            for slot in s.a_colptr[j]..s.a_colptr[j + 1] {
                work[s.a_rows[slot]] += a_vals[slot];
            }
            for &k in &s.r_cols[s.r_ptr[j]..s.r_ptr[j + 1]] {
                let p = next[k];
                debug_assert_eq!(s.l_rows[p], j);
                let ljk = lx[p];
                for q in p..s.l_colptr[k + 1] {
                    work[s.l_rows[q]] -= lx[q] * ljk;
                }
                next[k] = p + 1;
            }
            let pivot = work[j];
            work[j] = 0.0;
            if !pivot.is_finite() || pivot <= PIVOT_TOLERANCE * a_vals[s.diag_slots[j]].abs() {
                for q in s.l_colptr[j]..s.l_colptr[j + 1] {
                    work[s.l_rows[q]] = 0.0;
                }
                return Err(GmrfError::NotPositiveDefinite {
                    index: s.perm[j],
                    pivot,
                });
            }
            let d = pivot.sqrt();
            diag[j] = d;
            for q in s.l_colptr[j]..s.l_colptr[j + 1] {
                let r = s.l_rows[q];
                lx[q] = work[r] / d;
                work[r] = 0.0;
            }
        }

        Ok(Factorization {
            symbolic: self.clone(),
            lx,
            diag,
        })
    }
}

/// Greedy minimum-degree elimination on an explicit elimination graph.
/// Returns the elimination order and, for each step, the neighbour set at
/// elimination time (the column pattern of `L`, in original indices).
fn minimum_degree(mut adjacency: Vec<BTreeSet<usize>>) -> (Vec<usize>, Vec<Vec<usize>>) {
    let n = adjacency.len();
    let mut queue: BTreeSet<(usize, usize)> = (0..n).map(|i| (adjacency[i].len(), i)).collect();
    let mut order = Vec::with_capacity(n);
    let mut patterns = Vec::with_capacity(n);

    while let Some((_, node)) = queue.pop_first() {
        let neighbours: Vec<usize> = std::mem::take(&mut adjacency[node]).into_iter().collect();
        for &a in &neighbours {
            queue.remove(&(adjacency[a].len(), a));
            adjacency[a].remove(&node);
        }
        for (i, &a) in neighbours.iter().enumerate() {
            for &b in &neighbours[i + 1..] {
                adjacency[a].insert(b);
                adjacency[b].insert(a);
            }
        }
        for &a in &neighbours {
            queue.insert((adjacency[a].len(), a));
        }
        order.push(node);
        patterns.push(neighbours);
    }
    (order, patterns)
}

/// Numeric Cholesky factor `P M Pᵀ = L Lᵀ`. Read-only after construction.
#[derive(Debug, Clone)]
pub struct Factorization {
    symbolic: SymbolicCholesky,
    lx: Vec<f64>,
    diag: Vec<f64>,
}

impl Factorization {
    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn log_determinant(&self) -> f64 {
        2.0 * self.diag.iter().map(|d| d.ln()).sum::<f64>()
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let s = &*self.symbolic.inner;
        let n = s.dim;
        assert_eq!(b.len(), n);
        let mut y: Vec<f64> = s.perm.iter().map(|&p| b[p]).collect();
        for j in 0..n {
            y[j] /= self.diag[j];
            let yj = y[j];
            for q in s.l_colptr[j]..s.l_colptr[j + 1] {
                y[s.l_rows[q]] -= self.lx[q] * yj;
            }
        }
        for j in (0..n).rev() {
            let mut acc = y[j];
            for q in s.l_colptr[j]..s.l_colptr[j + 1] {
                acc -= self.lx[q] * y[s.l_rows[q]];
            }
            y[j] = acc / self.diag[j];
        }
        let mut x = vec![0.0; n];
        for (k, &p) in s.perm.iter().enumerate() {
            x[p] = y[k];
        }
        x
    }

    /// Solves `Lᵀ z = u` in original coordinates, so that `z ~ N(0, M⁻¹)`
    /// when `u` is standard normal.
    pub fn solve_upper(&self, u: &[f64]) -> Vec<f64> {
        let s = &*self.symbolic.inner;
        let n = s.dim;
        assert_eq!(u.len(), n);
        let mut y = u.to_vec();
        for j in (0..n).rev() {
            let mut acc = y[j];
            for q in s.l_colptr[j]..s.l_colptr[j + 1] {
                acc -= self.lx[q] * y[s.l_rows[q]];
            }
            y[j] = acc / self.diag[j];
        }
        let mut x = vec![0.0; n];
        for (k, &p) in s.perm.iter().enumerate() {
            x[p] = y[k];
        }
        x
    }

    /// Entries of `M⁻¹` on the pattern of `L`, via the Takahashi recursions.
    pub fn selected_inverse(&self) -> SelectedInverse {
        let s = &*self.symbolic.inner;
        let n = s.dim;
        let mut sig = vec![0.0; s.l_rows.len()];
        let mut sig_diag = vec![0.0; n];

        let lookup = |sig: &[f64], sig_diag: &[f64], a: usize, b: usize| -> f64 {
            if a == b {
                return sig_diag[a];
            }
            let (row, col) = if a > b { (a, b) } else { (b, a) };
            let rows = &s.l_rows[s.l_colptr[col]..s.l_colptr[col + 1]];
            let pos = rows
                .binary_search(&row)
                .expect("selected inverse lookup outside the factor pattern");
            sig[s.l_colptr[col] + pos]
        };

        for j in (0..n).rev() {
            let range = s.l_colptr[j]..s.l_colptr[j + 1];
            let inv_d = 1.0 / self.diag[j];
            for q in range.clone().rev() {
                let i = s.l_rows[q];
                let mut acc = 0.0;
                for p in range.clone() {
                    acc += self.lx[p] * lookup(&sig, &sig_diag, s.l_rows[p], i);
                }
                sig[q] = -inv_d * acc;
            }
            let mut acc = 0.0;
            for p in range.clone() {
                acc += self.lx[p] * sig[p];
            }
            sig_diag[j] = inv_d * inv_d - inv_d * acc;
        }

        SelectedInverse {
            symbolic: self.symbolic.clone(),
            values: sig,
            diag: sig_diag,
        }
    }

    /// Diagonal of `M⁻¹` in original order.
    pub fn marginal_variances(&self) -> Vec<f64> {
        self.selected_inverse().diagonal()
    }
}

/// Entries of an inverse restricted to the factor pattern.
#[derive(Debug, Clone)]
pub struct SelectedInverse {
    symbolic: SymbolicCholesky,
    values: Vec<f64>,
    diag: Vec<f64>,
}

impl SelectedInverse {
    pub fn diagonal(&self) -> Vec<f64> {
        let s = &*self.symbolic.inner;
        let mut out = vec![0.0; s.dim];
        for (k, &p) in s.perm.iter().enumerate() {
            out[p] = self.diag[k];
        }
        out
    }

    /// `M⁻¹[i, j]` in original indices, when the position is in the pattern.
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let s = &*self.symbolic.inner;
        let (a, b) = (s.iperm[i], s.iperm[j]);
        if a == b {
            return Some(self.diag[a]);
        }
        let (row, col) = if a > b { (a, b) } else { (b, a) };
        let rows = &s.l_rows[s.l_colptr[col]..s.l_colptr[col + 1]];
        rows.binary_search(&row)
            .ok()
            .map(|pos| self.values[s.l_colptr[col] + pos])
    }
}

/// One-shot factorization: analysis followed by the numeric step.
pub fn cholesky(m: &SparseSymMatrix) -> Result<Factorization, GmrfError> {
    SymbolicCholesky::analyze(m).factor(m)
}
