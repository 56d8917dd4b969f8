//! Spatio-temporal hypergraph over a corridor observation window.
//!
//! Nodes are `(intersection, window position)` instances, stored at row
//! `τ·n + i`. Columns `[0, t)` are spatial hyperedges (one per window
//! position, containing every intersection) and columns `[t, t+n)` are
//! temporal hyperedges (one per intersection, containing every position).

use crate::error::{Error, Result};
use crate::numeric::Tensor;

/// Binary node × hyperedge incidence matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Incidence {
    rows: usize,
    cols: usize,
    mask: Vec<bool>,
}

impl Incidence {
    /// Validates that every hyperedge has a member and every node an edge.
    pub fn new(rows: usize, cols: usize, mask: Vec<bool>) -> Result<Self> {
        if rows == 0 || cols == 0 || mask.len() != rows * cols {
            return Err(Error::Shape {
                op: "incidence",
                lhs: vec![rows, cols],
                rhs: vec![mask.len()],
            });
        }
        for e in 0..cols {
            if !(0..rows).any(|r| mask[r * cols + e]) {
                return Err(Error::Invalid(format!("hyperedge {e} has no members")));
            }
        }
        for r in 0..rows {
            if !mask[r * cols..(r + 1) * cols].iter().any(|&b| b) {
                return Err(Error::Invalid(format!("node {r} is isolated")));
            }
        }
        Ok(Self { rows, cols, mask })
    }

    pub fn num_nodes(&self) -> usize {
        self.rows
    }

    pub fn num_edges(&self) -> usize {
        self.cols
    }

    pub fn contains(&self, node: usize, edge: usize) -> bool {
        self.mask[node * self.cols + edge]
    }

    /// Row-major `N×E` mask.
    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    /// Row-major `E×N` mask.
    pub fn transposed_mask(&self) -> Vec<bool> {
        let mut out = vec![false; self.mask.len()];
        for r in 0..self.rows {
            for c in 0..self.cols {
                out[c * self.rows + r] = self.mask[r * self.cols + c];
            }
        }
        out
    }

    pub fn degree(&self, node: usize) -> usize {
        self.mask[node * self.cols..(node + 1) * self.cols]
            .iter()
            .filter(|&&b| b)
            .count()
    }

    pub fn edge_size(&self, edge: usize) -> usize {
        (0..self.rows).filter(|&r| self.contains(r, edge)).count()
    }

    /// Row `k` of the result is row `perm[k]` of `self`.
    pub fn permute_rows(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.rows {
            return Err(Error::Invalid("permutation length".into()));
        }
        let mut mask = Vec::with_capacity(self.mask.len());
        for &p in perm {
            mask.extend_from_slice(&self.mask[p * self.cols..(p + 1) * self.cols]);
        }
        Self::new(self.rows, self.cols, mask)
    }

    pub fn to_tensor(&self) -> Tensor {
        let data = self.mask.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        Tensor::matrix(self.rows, self.cols, data).expect("incidence shape")
    }
}

/// Which hyperedge families to keep when materializing an incidence matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EdgeSelection {
    pub spatial: bool,
    pub temporal: bool,
}

impl EdgeSelection {
    pub const ALL: Self = Self {
        spatial: true,
        temporal: true,
    };
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct STHypergraph {
    n: usize,
    t: usize,
    incidence: Incidence,
}

impl STHypergraph {
    pub fn build(n: usize, t: usize) -> Result<Self> {
        if n == 0 || t == 0 {
            return Err(Error::Invalid(format!(
                "hypergraph needs n ≥ 1 and t ≥ 1, got n={n}, t={t}"
            )));
        }
        let (rows, cols) = (n * t, t + n);
        let mut mask = vec![false; rows * cols];
        for tau in 0..t {
            for i in 0..n {
                let r = tau * n + i;
                mask[r * cols + tau] = true;
                mask[r * cols + t + i] = true;
            }
        }
        Ok(Self {
            n,
            t,
            incidence: Incidence::new(rows, cols, mask)?,
        })
    }

    pub fn n_intersections(&self) -> usize {
        self.n
    }

    pub fn t_window(&self) -> usize {
        self.t
    }

    /// `N = n·t`.
    pub fn num_nodes(&self) -> usize {
        self.n * self.t
    }

    /// `M = t`.
    pub fn num_spatial(&self) -> usize {
        self.t
    }

    /// `P = n`.
    pub fn num_temporal(&self) -> usize {
        self.n
    }

    pub fn num_edges(&self) -> usize {
        self.t + self.n
    }

    pub fn incidence(&self) -> &Incidence {
        &self.incidence
    }

    pub fn node_index(&self, i: usize, tau: usize) -> Result<usize> {
        if i >= self.n {
            return Err(Error::OutOfRange {
                what: "intersection",
                index: i,
                limit: self.n,
            });
        }
        if tau >= self.t {
            return Err(Error::OutOfRange {
                what: "window position",
                index: tau,
                limit: self.t,
            });
        }
        Ok(tau * self.n + i)
    }

    /// Inverse of [`node_index`](Self::node_index): `(i, τ)`.
    pub fn node_of(&self, row: usize) -> Result<(usize, usize)> {
        if row >= self.num_nodes() {
            return Err(Error::OutOfRange {
                what: "node",
                index: row,
                limit: self.num_nodes(),
            });
        }
        Ok((row % self.n, row / self.n))
    }

    pub fn members(&self, e: usize) -> Result<Vec<usize>> {
        if e >= self.num_edges() {
            return Err(Error::OutOfRange {
                what: "hyperedge",
                index: e,
                limit: self.num_edges(),
            });
        }
        Ok((0..self.num_nodes())
            .filter(|&r| self.incidence.contains(r, e))
            .collect())
    }

    /// Incidence restricted to the chosen hyperedge families.
    pub fn select(&self, sel: EdgeSelection) -> Result<Incidence> {
        let keep: Vec<usize> = (0..self.num_edges())
            .filter(|&e| if e < self.t { sel.spatial } else { sel.temporal })
            .collect();
        if keep.is_empty() {
            return Err(Error::Invalid("no hyperedge family selected".into()));
        }
        let rows = self.num_nodes();
        let mut mask = Vec::with_capacity(rows * keep.len());
        for r in 0..rows {
            mask.extend(keep.iter().map(|&e| self.incidence.contains(r, e)));
        }
        Incidence::new(rows, keep.len(), mask)
    }
}
