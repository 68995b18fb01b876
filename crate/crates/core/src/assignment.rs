//! Rectangular minimum-cost linear assignment.
//!
//! Rows of a [`CostMatrix`] are predictions and columns are labels. Every
//! label must receive a distinct prediction, so `cols <= rows`; surplus
//! predictions stay unassigned.
//!
//! [`solve_lap`] is the shortest augmenting path variant of Jonker-Volgenant
//! that works on rectangular problems directly (no padding), in the form
//! popularised by Crouse. [`brute_force_lap`] enumerates every injective map
//! and exists as an independent oracle for small problems.
//!
//! Both solvers break ties the same way: among equal-cost optima the pairing
//! that is lexicographically smallest when read in label order (prediction
//! index of label 0, then label 1, ...) is returned.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest row count accepted by [`brute_force_lap`].
pub const BRUTE_FORCE_MAX_ROWS: usize = 8;

/// Dense `rows x cols` matrix of nonnegative finite costs, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Dimension(format!(
                "cost matrix must be at least 1x1, got {rows}x{cols}"
            )));
        }
        if cols > rows {
            return Err(Error::Dimension(format!(
                "{cols} labels cannot be assigned to {rows} predictions"
            )));
        }
        if values.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "expected {} entries for a {rows}x{cols} matrix, got {}",
                rows * cols,
                values.len()
            )));
        }
        if let Some((idx, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0)
        {
            return Err(Error::InvalidInput(format!(
                "cost entry ({}, {}) is {v}; costs must be finite and nonnegative",
                idx / cols,
                idx % cols
            )));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Dimension("ragged cost matrix".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Cost of an explicit pairing given as `prediction_for_label[j]`.
    pub fn pairing_cost(&self, prediction_for_label: &[usize]) -> f64 {
        prediction_for_label
            .iter()
            .enumerate()
            .map(|(label, &pred)| self.get(pred, label))
            .sum()
    }
}

/// One prediction per label, predictions pairwise distinct.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    /// `(prediction, label)` pairs sorted by label.
    pub pairs: Vec<(usize, usize)>,
    pub total_cost: f64,
}

impl Assignment {
    fn from_label_order(costs: &CostMatrix, prediction_for_label: Vec<usize>) -> Self {
        let total_cost = costs.pairing_cost(&prediction_for_label);
        let pairs = prediction_for_label
            .into_iter()
            .enumerate()
            .map(|(label, pred)| (pred, label))
            .collect();
        Self { pairs, total_cost }
    }

    /// Prediction index assigned to `label`, if any.
    pub fn prediction_for(&self, label: usize) -> Option<usize> {
        self.pairs
            .iter()
            .find(|&&(_, l)| l == label)
            .map(|&(p, _)| p)
    }

    /// Label index assigned to `prediction`, if the prediction is matched.
    pub fn label_for(&self, prediction: usize) -> Option<usize> {
        self.pairs
            .iter()
            .find(|&&(p, _)| p == prediction)
            .map(|&(_, l)| l)
    }

    pub fn is_injective(&self) -> bool {
        let mut preds: Vec<usize> = self.pairs.iter().map(|&(p, _)| p).collect();
        preds.sort_unstable();
        preds.windows(2).all(|w| w[0] != w[1])
    }
}

fn tie_tolerance(reference: f64, terms: usize) -> f64 {
    1e-12 * (1.0 + reference.abs()) * terms.max(1) as f64
}

/// Shortest augmenting path solver on an abstract `n_rows x n_cols` problem
/// with `n_rows <= n_cols`. Returns the column chosen for every row.
fn shortest_augmenting_path(
    n_rows: usize,
    n_cols: usize,
    cost: impl Fn(usize, usize) -> f64,
) -> Option<Vec<usize>> {
    debug_assert!(n_rows <= n_cols);
    const NONE: usize = usize::MAX;

    let mut u = vec![0.0f64; n_rows];
    let mut v = vec![0.0f64; n_cols];
    let mut shortest = vec![f64::INFINITY; n_cols];
    let mut path = vec![NONE; n_cols];
    let mut col_for_row = vec![NONE; n_rows];
    let mut row_for_col = vec![NONE; n_cols];
    let mut scanned_rows = vec![false; n_rows];
    let mut scanned_cols = vec![false; n_cols];
    let mut remaining = vec![0usize; n_cols];

    for current in 0..n_rows {
        // Dijkstra-style search for the cheapest augmenting path from `current`.
        let mut min_val = 0.0f64;
        let mut n_remaining = n_cols;
        for (it, slot) in remaining.iter_mut().enumerate() {
            *slot = n_cols - it - 1;
        }
        scanned_rows.iter_mut().for_each(|s| *s = false);
        scanned_cols.iter_mut().for_each(|s| *s = false);
        shortest.iter_mut().for_each(|s| *s = f64::INFINITY);

        let mut sink = NONE;
        let mut row = current;
        while sink == NONE {
            scanned_rows[row] = true;
            let mut index = NONE;
            let mut lowest = f64::INFINITY;
            for it in 0..n_remaining {
                let col = remaining[it];
                let reduced = min_val + cost(row, col) - u[row] - v[col];
                if reduced < shortest[col] {
                    path[col] = row;
                    shortest[col] = reduced;
                }
                if shortest[col] < lowest
                    || (shortest[col] == lowest && row_for_col[col] == NONE)
                {
                    lowest = shortest[col];
                    index = it;
                }
            }
            min_val = lowest;
            if !min_val.is_finite() {
                return None;
            }
            let col = remaining[index];
            if row_for_col[col] == NONE {
                sink = col;
            } else {
                row = row_for_col[col];
            }
            scanned_cols[col] = true;
            n_remaining -= 1;
            remaining[index] = remaining[n_remaining];
        }

        // Dual update.
        u[current] += min_val;
        for r in 0..n_rows {
            if scanned_rows[r] && r != current {
                u[r] += min_val - shortest[col_for_row[r]];
            }
        }
        for c in 0..n_cols {
            if scanned_cols[c] {
                v[c] -= min_val - shortest[c];
            }
        }

        // Augment along the path back to `current`.
        let mut col = sink;
        loop {
            let r = path[col];
            row_for_col[col] = r;
            std::mem::swap(&mut col_for_row[r], &mut col);
            if r == current {
                break;
            }
        }
    }
    Some(col_for_row)
}

/// Optimal cost of assigning `labels` to distinct members of `preds`.
fn restricted_optimum(costs: &CostMatrix, labels: &[usize], preds: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let cols = shortest_augmenting_path(labels.len(), preds.len(), |r, c| {
        costs.get(preds[c], labels[r])
    })
    .expect("finite costs always admit an assignment");
    cols.iter()
        .enumerate()
        .map(|(r, &c)| costs.get(preds[c], labels[r]))
        .sum()
}

/// Globally optimal injective label-to-prediction assignment.
pub fn solve_lap(costs: &CostMatrix) -> Result<Assignment> {
    let (rows, cols) = (costs.rows, costs.cols);
    let raw = shortest_augmenting_path(cols, rows, |label, pred| costs.get(pred, label))
        .ok_or_else(|| Error::InvalidInput("assignment problem is infeasible".into()))?;
    let best = costs.pairing_cost(&raw);
    let tol = tie_tolerance(best, cols);

    // Walk labels in order and fix each to the lowest prediction index that
    // still admits an optimal completion.
    let mut used = vec![false; rows];
    let mut chosen = Vec::with_capacity(cols);
    let mut fixed = 0.0;
    for label in 0..cols {
        let rest_labels: Vec<usize> = (label + 1..cols).collect();
        let mut picked = None;
        for pred in (0..rows).filter(|&p| !used[p]) {
            let rest_preds: Vec<usize> = (0..rows).filter(|&p| !used[p] && p != pred).collect();
            let candidate = fixed
                + costs.get(pred, label)
                + restricted_optimum(costs, &rest_labels, &rest_preds);
            if candidate <= best + tol {
                picked = Some(pred);
                break;
            }
        }
        // Rounding can in principle reject every candidate; the raw solver
        // output is optimal, so fall back to it.
        let Some(pred) = picked else {
            return Ok(Assignment::from_label_order(costs, raw));
        };
        used[pred] = true;
        fixed += costs.get(pred, label);
        chosen.push(pred);
    }
    Ok(Assignment::from_label_order(costs, chosen))
}

/// Exhaustive minimum over every injective label-to-prediction map.
pub fn brute_force_lap(costs: &CostMatrix) -> Result<Assignment> {
    if costs.rows > BRUTE_FORCE_MAX_ROWS {
        return Err(Error::Dimension(format!(
            "brute force is limited to {BRUTE_FORCE_MAX_ROWS} rows, got {}",
            costs.rows
        )));
    }

    fn enumerate(
        costs: &CostMatrix,
        current: &mut Vec<usize>,
        used: &mut [bool],
        visit: &mut dyn FnMut(&[usize]),
    ) {
        if current.len() == costs.cols {
            visit(current);
            return;
        }
        for pred in 0..costs.rows {
            if !used[pred] {
                used[pred] = true;
                current.push(pred);
                enumerate(costs, current, used, visit);
                current.pop();
                used[pred] = false;
            }
        }
    }

    let mut best = f64::INFINITY;
    enumerate(
        costs,
        &mut Vec::new(),
        &mut vec![false; costs.rows],
        &mut |p| best = best.min(costs.pairing_cost(p)),
    );

    // Enumeration is lexicographic, so the first pairing within tolerance of
    // the minimum is the tie-break winner.
    let tol = tie_tolerance(best, costs.cols);
    let mut winner: Option<Vec<usize>> = None;
    enumerate(
        costs,
        &mut Vec::new(),
        &mut vec![false; costs.rows],
        &mut |p| {
            if winner.is_none() && costs.pairing_cost(p) <= best + tol {
                winner = Some(p.to_vec());
            }
        },
    );
    Ok(Assignment::from_label_order(
        costs,
        winner.expect("at least one injective map exists"),
    ))
}
