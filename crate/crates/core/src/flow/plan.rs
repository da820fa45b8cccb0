use std::collections::BTreeMap;

use super::{check_cap, count, enumerate_tuples, TupleMode, DEFAULT_ENUMERATION_CAP};
use crate::dist::ProblemInstance;
use crate::error::Result;

/// A sparse transport plan keyed by `(token, tuple)`.
///
/// In multiset mode a key's tuple is sorted and its mass is the total over
/// all orderings of that multiset.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsePlan {
    mode: TupleMode,
    entries: BTreeMap<(usize, Vec<usize>), f64>,
}

impl SparsePlan {
    pub fn new(mode: TupleMode) -> Self {
        Self {
            mode,
            entries: BTreeMap::new(),
        }
    }

    pub fn mode(&self) -> TupleMode {
        self.mode
    }

    /// Adds `mass` to the entry `(token, omega)`. In multiset mode `omega`
    /// is sorted first.
    pub fn add(&mut self, token: usize, omega: &[usize], mass: f64) {
        let mut key = omega.to_vec();
        if self.mode == TupleMode::Multiset {
            key.sort_unstable();
        }
        *self.entries.entry((token, key)).or_insert(0.0) += mass;
    }

    pub fn get(&self, token: usize, omega: &[usize]) -> f64 {
        let mut key = omega.to_vec();
        if self.mode == TupleMode::Multiset {
            key.sort_unstable();
        }
        self.entries.get(&(token, key)).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &[usize], f64)> {
        self.entries
            .iter()
            .map(|((i, w), &m)| (*i, w.as_slice(), m))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Sum of all entries.
    pub fn total(&self) -> f64 {
        self.entries.values().sum()
    }

    /// Acceptance mass: entries whose token appears in its tuple. Equals the
    /// total for relaxed plans.
    pub fn objective(&self) -> f64 {
        self.iter()
            .filter(|(i, w, _)| w.contains(i))
            .map(|(_, _, m)| m)
            .sum()
    }

    pub fn row_sums(&self, vocab: usize) -> Vec<f64> {
        let mut rows = vec![0.0; vocab];
        for (i, _, m) in self.iter() {
            rows[i] += m;
        }
        rows
    }

    pub fn column_sums(&self) -> BTreeMap<Vec<usize>, f64> {
        let mut cols = BTreeMap::new();
        for (_, w, m) in self.iter() {
            *cols.entry(w.to_vec()).or_insert(0.0) += m;
        }
        cols
    }

    /// Entries of one column, ascending by token.
    pub fn column(&self, omega: &[usize]) -> Vec<(usize, f64)> {
        let mut key = omega.to_vec();
        if self.mode == TupleMode::Multiset {
            key.sort_unstable();
        }
        let mut out: Vec<(usize, f64)> = self
            .iter()
            .filter(|(_, w, _)| *w == key.as_slice())
            .map(|(i, _, m)| (i, m))
            .collect();
        out.sort_by_key(|e| e.0);
        out
    }
}

/// Completes a relaxed plan to a full transport plan by spreading the
/// leftover target mass `p^res(i)` against the leftover draft mass
/// `p^res_draft(ω)` proportionally.
pub fn complete_plan(instance: &ProblemInstance, relaxed: &SparsePlan) -> Result<SparsePlan> {
    let mode = relaxed.mode();
    let active = instance.active();
    let n = instance.n();
    check_cap(
        "plan completion",
        count(active.len(), n, mode),
        DEFAULT_ENUMERATION_CAP,
    )?;
    let p = instance.target();
    let rows = relaxed.row_sums(p.len());
    let p_res: Vec<f64> = p.iter().zip(&rows).map(|(a, b)| (a - b).max(0.0)).collect();
    let total_res: f64 = p_res.iter().sum();
    let mut plan = relaxed.clone();
    if total_res <= 1e-15 {
        return Ok(plan);
    }
    let cols = relaxed.column_sums();
    for (omega, mass) in enumerate_tuples(instance.draft(), active, n, mode) {
        let d_res = mass - cols.get(&omega).copied().unwrap_or(0.0);
        if d_res <= 0.0 {
            continue;
        }
        for (i, &r) in p_res.iter().enumerate() {
            if r > 0.0 {
                plan.add(i, &omega, r * d_res / total_res);
            }
        }
    }
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{solve_relaxed_exact, FlowOptions};

    #[test]
    fn multiset_keys_are_canonical() {
        let mut plan = SparsePlan::new(TupleMode::Multiset);
        plan.add(1, &[2, 1], 0.25);
        plan.add(1, &[1, 2], 0.25);
        assert_eq!(plan.len(), 1);
        assert_eq!(plan.get(1, &[2, 1]), 0.5);
        let mut ordered = SparsePlan::new(TupleMode::Ordered);
        ordered.add(1, &[2, 1], 0.25);
        assert_eq!(ordered.get(1, &[1, 2]), 0.0);
    }

    #[test]
    fn completion_restores_marginals() {
        let inst =
            ProblemInstance::from_vecs(vec![0.5, 0.3, 0.2], vec![0.2, 0.3, 0.5], 2, 1e-3).unwrap();
        let relaxed = solve_relaxed_exact(&inst, FlowOptions::default()).unwrap();
        let full = complete_plan(&inst, &relaxed).unwrap();
        let rows = full.row_sums(3);
        for (r, p) in rows.iter().zip(inst.target()) {
            assert!((r - p).abs() < 1e-12);
        }
        assert!((full.total() - 1.0).abs() < 1e-12);
        assert!((full.objective() - 0.86).abs() < 1e-12);
        // Draft side: the column of {0,0} carries q(0)^2.
        let col: f64 = full.column(&[0, 0]).iter().map(|e| e.1).sum();
        assert!((col - 0.04).abs() < 1e-12);
    }
}
