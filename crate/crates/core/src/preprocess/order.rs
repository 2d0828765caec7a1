use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::PreprocessError;

/// One agglomeration step. Clusters `0..m` are leaves; merge `k` creates
/// cluster `m + k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub distance: f64,
    pub size: usize,
}

/// Row placement of signals inside the image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalOrder {
    /// `permutation[row]` is the signal placed on `row`.
    pub permutation: Vec<usize>,
    pub linkage: Vec<Merge>,
}

impl SignalOrder {
    pub fn identity(m: usize) -> Self {
        Self { permutation: (0..m).collect(), linkage: Vec::new() }
    }

    pub fn from_permutation(permutation: Vec<usize>) -> Result<Self, PreprocessError> {
        let order = Self { permutation, linkage: Vec::new() };
        order.validate()?;
        Ok(order)
    }

    pub fn len(&self) -> usize {
        self.permutation.len()
    }

    pub fn is_empty(&self) -> bool {
        self.permutation.is_empty()
    }

    /// `inverse()[signal]` is the row that holds `signal`.
    pub fn inverse(&self) -> Vec<usize> {
        let mut inv = vec![0; self.permutation.len()];
        for (row, &signal) in self.permutation.iter().enumerate() {
            inv[signal] = row;
        }
        inv
    }

    pub fn validate(&self) -> Result<(), PreprocessError> {
        let m = self.permutation.len();
        let mut seen = vec![false; m];
        for &s in &self.permutation {
            if s >= m || std::mem::replace(&mut seen[s], true) {
                return Err(PreprocessError::InvalidPermutation(m));
            }
        }
        Ok(())
    }

    /// Reorders per-signal rows into image rows.
    pub fn apply<T: Clone>(&self, rows: &[T]) -> Vec<T> {
        self.permutation.iter().map(|&s| rows[s].clone()).collect()
    }
}

/// Pearson correlation between every pair of rows. Rows with zero variance
/// correlate 0 with everything, including themselves.
pub fn pearson_matrix(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let centred: Vec<(Vec<f64>, f64)> = rows
        .iter()
        .map(|row| {
            let n = row.len().max(1) as f64;
            let mean = row.iter().sum::<f64>() / n;
            let c: Vec<f64> = row.iter().map(|v| v - mean).collect();
            let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
            (c, norm)
        })
        .collect();
    let m = rows.len();
    let mut corr = vec![vec![0.0; m]; m];
    for a in 0..m {
        for b in a..m {
            let (ca, na) = &centred[a];
            let (cb, nb) = &centred[b];
            let r = if *na > 0.0 && *nb > 0.0 {
                (ca.iter().zip(cb).map(|(x, y)| x * y).sum::<f64>() / (na * nb)).clamp(-1.0, 1.0)
            } else {
                0.0
            };
            corr[a][b] = r;
            corr[b][a] = r;
        }
    }
    corr
}

/// Orders signals so that strongly (anti-)correlated ones become neighbours.
///
/// Distances are `1 - |corr|`, merged by average linkage; the permutation is
/// the dendrogram's leaf order with the cluster holding the lower signal index
/// always on the left.
pub fn fit_order(rows: &[Vec<f64>]) -> Result<SignalOrder, PreprocessError> {
    let n = rows.iter().map(Vec::len).min().unwrap_or(0);
    if n < 2 {
        return Err(PreprocessError::DegenerateInput(n));
    }
    let corr = pearson_matrix(rows);
    let m = rows.len();
    let dist: Vec<Vec<f64>> = corr.iter().map(|r| r.iter().map(|c| 1.0 - c.abs()).collect()).collect();
    let linkage = average_linkage(&dist);
    let permutation = leaf_order(m, &linkage);
    Ok(SignalOrder { permutation, linkage })
}

struct Cluster {
    id: usize,
    min_leaf: usize,
    size: usize,
}

fn average_linkage(dist: &[Vec<f64>]) -> Vec<Merge> {
    let m = dist.len();
    let mut active: Vec<Cluster> = (0..m).map(|i| Cluster { id: i, min_leaf: i, size: 1 }).collect();
    // pairwise distances between active clusters, indexed by position in `active`
    let mut d: Vec<Vec<f64>> = dist.to_vec();
    let mut merges = Vec::with_capacity(m.saturating_sub(1));
    while active.len() > 1 {
        // `active` stays sorted by min_leaf, so scanning (a, b) with a < b visits
        // candidate pairs in lexicographic min-leaf order and the first minimum wins ties.
        let mut best = (0, 1, f64::INFINITY);
        for a in 0..active.len() {
            for b in a + 1..active.len() {
                if d[a][b] < best.2 {
                    best = (a, b, d[a][b]);
                }
            }
        }
        let (a, b, distance) = best;
        let (sa, sb) = (active[a].size as f64, active[b].size as f64);
        let merged: Vec<f64> = (0..active.len()).map(|k| (sa * d[a][k] + sb * d[b][k]) / (sa + sb)).collect();
        let size = active[a].size + active[b].size;
        merges.push(Merge { left: active[a].id, right: active[b].id, distance, size });
        let new = Cluster { id: m + merges.len() - 1, min_leaf: active[a].min_leaf, size };
        // row/col `a` becomes the merged cluster; `b` is removed
        for k in 0..active.len() {
            d[a][k] = merged[k];
            d[k][a] = merged[k];
        }
        d[a][a] = 0.0;
        active[a] = new;
        active.remove(b);
        d.remove(b);
        for row in d.iter_mut() {
            row.remove(b);
        }
    }
    merges
}

fn leaf_order(m: usize, merges: &[Merge]) -> Vec<usize> {
    if m == 0 {
        return Vec::new();
    }
    let root = m + merges.len() - 1;
    let mut order = Vec::with_capacity(m);
    let mut stack = vec![root];
    while let Some(node) = stack.pop() {
        if node < m {
            order.push(node);
        } else {
            let merge = &merges[node - m];
            stack.push(merge.right);
            stack.push(merge.left);
        }
    }
    order
}

/// Picks `budget` signals: all critical ones, then the rest ranked by their
/// strongest absolute correlation to any critical signal (lower index on ties).
pub fn select_signals(critical: &[usize], corr: &[Vec<f64>], budget: usize) -> Result<Vec<usize>, PreprocessError> {
    let total = corr.len();
    let critical: BTreeSet<usize> = critical.iter().copied().collect();
    check_selection(&critical, total, budget)?;
    let mut rest: Vec<(usize, f64)> = (0..total)
        .filter(|s| !critical.contains(s))
        .map(|s| (s, critical.iter().map(|&c| corr[s][c].abs()).fold(0.0, f64::max)))
        .collect();
    rest.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut chosen: BTreeSet<usize> = critical;
    chosen.extend(rest.into_iter().take(budget - chosen.len()).map(|(s, _)| s));
    Ok(chosen.into_iter().collect())
}

/// Adds the `per_signal` most correlated not-yet-chosen signals for each
/// critical signal in turn.
pub fn select_per_critical(
    critical: &[usize],
    corr: &[Vec<f64>],
    per_signal: usize,
) -> Result<Vec<usize>, PreprocessError> {
    let total = corr.len();
    let mut chosen: BTreeSet<usize> = critical.iter().copied().collect();
    check_selection(&chosen, total, chosen.len())?;
    let budget = chosen.len() * (1 + per_signal);
    if budget > total {
        return Err(PreprocessError::BudgetTooLarge { budget, total });
    }
    for &c in critical {
        let mut candidates: Vec<usize> = (0..total).filter(|s| !chosen.contains(s)).collect();
        candidates.sort_by(|&a, &b| corr[b][c].abs().total_cmp(&corr[a][c].abs()).then(a.cmp(&b)));
        chosen.extend(candidates.into_iter().take(per_signal));
    }
    Ok(chosen.into_iter().collect())
}

fn check_selection(critical: &BTreeSet<usize>, total: usize, budget: usize) -> Result<(), PreprocessError> {
    if let Some(&bad) = critical.iter().find(|&&c| c >= total) {
        return Err(PreprocessError::SignalOutOfRange(bad));
    }
    if budget < critical.len() {
        return Err(PreprocessError::BudgetTooSmall { budget, critical: critical.len() });
    }
    if budget > total {
        return Err(PreprocessError::BudgetTooLarge { budget, total });
    }
    Ok(())
}
