//! Minimum-cost bipartite assignment on rectangular matrices.
//!
//! [`hungarian_solve`] pads to a square matrix, runs the shortest augmenting
//! path form of Kuhn-Munkres with row/column potentials, then walks the
//! equality subgraph of the final potentials to pick the lexicographically
//! smallest optimal pairing. [`brute_force_assign`] enumerates injections and
//! applies the same tie-break; it exists as a test oracle.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest minimum dimension accepted by [`brute_force_assign`].
pub const BRUTE_FORCE_LIMIT: usize = 9;

/// Padding cost for the dummy rows/columns that square a rectangular matrix.
/// Every maximum matching uses the same number of dummies, so any constant
/// works; zero keeps the potentials on the scale of the real costs.
const PAD_COST: f64 = 0.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssignmentError {
    #[error("cost matrix data length {got} does not match {rows}x{cols}")]
    Shape { rows: usize, cols: usize, got: usize },
    #[error("non-finite cost {value} at ({row}, {col})")]
    NonFinite { row: usize, col: usize, value: f64 },
    #[error("brute force limited to min dimension {BRUTE_FORCE_LIMIT}, got {0}")]
    SizeExceeded(usize),
}

/// Row-major cost matrix; rows are 2D detections, columns 3D detections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, AssignmentError> {
        if data.len() != rows * cols {
            return Err(AssignmentError::Shape {
                rows,
                cols,
                got: data.len(),
            });
        }
        if let Some(idx) = data.iter().position(|v| !v.is_finite()) {
            return Err(AssignmentError::NonFinite {
                row: idx / cols.max(1),
                col: idx % cols.max(1),
                value: data[idx],
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, AssignmentError> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let data: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::new(r, c, data)
    }

    pub fn empty() -> Self {
        Self {
            rows: 0,
            cols: 0,
            data: Vec::new(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn transpose(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for c in 0..self.cols {
            for r in 0..self.rows {
                data.push(self.get(r, c));
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            data,
        }
    }

    /// Sum of the entries at `pairs`, accumulated in the given order.
    pub fn cost_of(&self, pairs: &[(usize, usize)]) -> f64 {
        pairs.iter().map(|&(r, c)| self.get(r, c)).sum()
    }

    fn scale(&self) -> f64 {
        self.data.iter().fold(1.0f64, |m, v| m.max(v.abs()))
    }
}

/// Row-sorted pairs and their total cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub pairs: Vec<(usize, usize)>,
    pub total_cost: f64,
}

impl Assignment {
    fn from_pairs(m: &CostMatrix, mut pairs: Vec<(usize, usize)>) -> Self {
        pairs.sort_unstable();
        let total_cost = m.cost_of(&pairs);
        Self { pairs, total_cost }
    }

    pub fn col_for_row(&self, row: usize) -> Option<usize> {
        self.pairs.iter().find(|p| p.0 == row).map(|p| p.1)
    }

    pub fn transposed(&self) -> Self {
        let mut pairs: Vec<_> = self.pairs.iter().map(|&(r, c)| (c, r)).collect();
        pairs.sort_unstable();
        Self {
            pairs,
            total_cost: self.total_cost,
        }
    }
}

pub fn hungarian_solve(m: &CostMatrix) -> Assignment {
    if m.rows == 0 || m.cols == 0 {
        return Assignment {
            pairs: Vec::new(),
            total_cost: 0.0,
        };
    }
    let n = m.rows.max(m.cols);
    let cost = |i: usize, j: usize| {
        if i < m.rows && j < m.cols {
            m.get(i, j)
        } else {
            PAD_COST
        }
    };

    // Potentials and matching are 1-indexed; index 0 is the virtual root.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut col_of = vec![0usize; n];
    let mut row_of = vec![0usize; n];
    for j in 1..=n {
        col_of[owner[j] - 1] = j - 1;
        row_of[j - 1] = owner[j] - 1;
    }

    let eps = 1e-10 * m.scale() * n as f64;
    let tight: Vec<Vec<bool>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| cost(i, j) - u[i + 1] - v[j + 1] <= eps)
                .collect()
        })
        .collect();
    lexicographic_refine(&tight, &mut col_of, &mut row_of);

    let pairs: Vec<(usize, usize)> = (0..m.rows)
        .filter_map(|i| (col_of[i] < m.cols).then_some((i, col_of[i])))
        .collect();
    Assignment::from_pairs(m, pairs)
}

/// Rewrites a perfect matching of the equality subgraph `tight` into the
/// lexicographically smallest one by fixing rows in order and trying columns
/// in ascending order, repairing the rest with an alternating path.
fn lexicographic_refine(tight: &[Vec<bool>], col_of: &mut [usize], row_of: &mut [usize]) {
    let n = col_of.len();
    let mut col_fixed = vec![false; n];
    for i in 0..n {
        for j in 0..n {
            if !tight[i][j] || col_fixed[j] {
                continue;
            }
            if col_of[i] == j {
                break;
            }
            // Give j to row i; the displaced row k must reach i's old column.
            let target = col_of[i];
            let k = row_of[j];
            let mut visited = vec![false; n];
            visited[j] = true;
            let mut trial_col = col_of.to_vec();
            let mut trial_row = row_of.to_vec();
            trial_col[i] = j;
            trial_row[j] = i;
            if augment(
                k,
                target,
                tight,
                &col_fixed,
                i,
                &mut visited,
                &mut trial_col,
                &mut trial_row,
            ) {
                col_of.copy_from_slice(&trial_col);
                row_of.copy_from_slice(&trial_row);
                break;
            }
        }
        col_fixed[col_of[i]] = true;
    }
}

#[allow(clippy::too_many_arguments)]
fn augment(
    row: usize,
    target: usize,
    tight: &[Vec<bool>],
    col_fixed: &[bool],
    pinned_row: usize,
    visited: &mut [bool],
    col_of: &mut [usize],
    row_of: &mut [usize],
) -> bool {
    for c in 0..tight.len() {
        if !tight[row][c] || visited[c] || col_fixed[c] {
            continue;
        }
        visited[c] = true;
        if c == target {
            col_of[row] = c;
            row_of[c] = row;
            return true;
        }
        let next = row_of[c];
        if next == pinned_row {
            continue;
        }
        if augment(next, target, tight, col_fixed, pinned_row, visited, col_of, row_of) {
            col_of[row] = c;
            row_of[c] = row;
            return true;
        }
    }
    false
}

/// Exhaustive optimum over all maximum matchings, with the same
/// lexicographic tie-break as [`hungarian_solve`].
pub fn brute_force_assign(m: &CostMatrix) -> Result<Assignment, AssignmentError> {
    let k = m.rows.min(m.cols);
    if k > BRUTE_FORCE_LIMIT {
        return Err(AssignmentError::SizeExceeded(k));
    }
    if k == 0 {
        return Ok(Assignment {
            pairs: Vec::new(),
            total_cost: 0.0,
        });
    }
    let tol = 1e-9 * m.scale();
    let mut best: Option<(f64, Vec<(usize, usize)>)> = None;
    let mut current = Vec::with_capacity(k);
    let mut used = vec![false; m.cols];
    enumerate(m, 0, k, &mut used, &mut current, &mut |pairs| {
        let cost = m.cost_of(pairs);
        match &best {
            Some((b, _)) if cost >= b - tol => {}
            _ => best = Some((cost, pairs.to_vec())),
        }
    });
    let (_, pairs) = best.expect("at least one injection exists");
    Ok(Assignment::from_pairs(m, pairs))
}

/// Visits every maximum matching in lexicographic order of its row-sorted
/// pair list.
fn enumerate(
    m: &CostMatrix,
    row: usize,
    k: usize,
    used: &mut [bool],
    current: &mut Vec<(usize, usize)>,
    visit: &mut dyn FnMut(&[(usize, usize)]),
) {
    if current.len() == k {
        visit(current);
        return;
    }
    if row == m.rows {
        return;
    }
    for c in 0..m.cols {
        if used[c] {
            continue;
        }
        used[c] = true;
        current.push((row, c));
        enumerate(m, row + 1, k, used, current, visit);
        current.pop();
        used[c] = false;
    }
    // Skipping this row is only possible while enough rows remain.
    if m.rows - row - 1 >= k - current.len() {
        enumerate(m, row + 1, k, used, current, visit);
    }
}
