//! Brute-force references used to validate the solvers.

mod lp;

use std::collections::BTreeMap;

use itertools::Itertools;
use serde::Serialize;

pub use lp::{lp_vertex_alpha, BASIS_CAP};

use crate::dist::{multiset_mass, ProblemInstance};
use crate::error::{Error, Result};
use crate::flow::{enumerate_tuples, SparsePlan, TupleMode};

/// Compensated (Neumaier) sum.
pub fn neumaier_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// `α*` and the minimizing set by checking every subset of the active
/// tokens. Ties go to the smallest set, then the lexicographically first.
pub fn brute_force_alpha(instance: &ProblemInstance) -> Result<(f64, Vec<usize>)> {
    let active = instance.active();
    if active.len() > 20 {
        return Err(Error::TooLarge {
            what: "subset enumeration",
            needed: 1u128 << active.len(),
            cap: 1 << 20,
        });
    }
    let p = instance.target();
    let q = instance.draft();
    let n = instance.n() as i32;
    let mut best = (0.0, Vec::new());
    for k in 1..=active.len() {
        for h in active.iter().copied().combinations(k) {
            let ps = neumaier_sum(h.iter().map(|&i| p[i]));
            let qs = neumaier_sum(h.iter().map(|&i| q[i]));
            let v = ps - qs.powi(n);
            if v < best.0 {
                best = (v, h);
            }
        }
    }
    Ok((1.0 + best.0, best.1))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanKind {
    /// Equality marginals on both sides.
    Otlp,
    /// Inequality marginals and no mass off `set(ω)`.
    Relaxed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub max_row_violation: f64,
    pub total_row_l1: f64,
    pub max_col_violation: f64,
    pub objective: f64,
    pub support_ok: bool,
}

/// Measures every marginal constraint of `plan`. In OTLP mode, mass off
/// `set(ω)` is allowed only at `i ∉ H*` for `ω ∈ (H*)^n`; pass `h_star = None`
/// to accept it anywhere.
pub fn validate_plan(
    instance: &ProblemInstance,
    plan: &SparsePlan,
    kind: PlanKind,
    h_star: Option<&[usize]>,
) -> ValidationReport {
    let p = instance.target();
    let vocab = p.len();
    let mut rows: Vec<Vec<f64>> = vec![Vec::new(); vocab];
    let mut cols: BTreeMap<Vec<usize>, Vec<f64>> = BTreeMap::new();
    let mut support_ok = true;
    let in_h = |t: usize| h_star.is_some_and(|h| h.contains(&t));
    for (i, omega, m) in plan.iter() {
        if i >= vocab || m < -1e-15 {
            support_ok = false;
            continue;
        }
        rows[i].push(m);
        cols.entry(omega.to_vec()).or_default().push(m);
        if m > 1e-15 && !omega.contains(&i) {
            let allowed = match kind {
                PlanKind::Relaxed => false,
                PlanKind::Otlp => h_star.is_none() || (!in_h(i) && omega.iter().all(|&t| in_h(t))),
            };
            support_ok &= allowed;
        }
    }
    let gap = |have: f64, want: f64| match kind {
        PlanKind::Otlp => (have - want).abs(),
        PlanKind::Relaxed => (have - want).max(0.0),
    };
    let row_gaps: Vec<f64> = rows
        .iter()
        .enumerate()
        .map(|(i, r)| gap(neumaier_sum(r.iter().copied()), p[i]))
        .collect();
    let mut max_col = 0.0f64;
    let mode = plan.mode();
    for (omega, mass) in enumerate_tuples(instance.draft(), instance.active(), instance.n(), mode) {
        let have = cols.remove(&omega).map_or(0.0, neumaier_sum);
        max_col = max_col.max(gap(have, mass));
    }
    // Columns that are not valid tuples at all.
    for (omega, c) in cols {
        support_ok = false;
        max_col = max_col.max(neumaier_sum(c).abs());
        log::debug!("plan column {omega:?} is not a drafted tuple");
    }
    ValidationReport {
        max_row_violation: row_gaps.iter().copied().fold(0.0, f64::max),
        total_row_l1: neumaier_sum(row_gaps.iter().copied()),
        max_col_violation: max_col,
        objective: neumaier_sum(
            plan.iter()
                .filter(|(i, w, _)| w.contains(i))
                .map(|(_, _, m)| m),
        ),
        support_ok,
    }
}

/// Importance weights `β(·|ω)` per tuple, ascending by token.
pub type Beta = BTreeMap<Vec<usize>, Vec<(usize, f64)>>;

/// Normalizes each column of an optimal relaxed plan; empty columns are
/// split uniformly over `set(ω)`.
pub fn canonical_beta(instance: &ProblemInstance, relaxed: &SparsePlan) -> Beta {
    let mut beta = Beta::new();
    for (omega, _) in enumerate_tuples(
        instance.draft(),
        instance.active(),
        instance.n(),
        relaxed.mode(),
    ) {
        let col = relaxed.column(&omega);
        let total: f64 = col.iter().map(|e| e.1).sum();
        let row = if total > 0.0 {
            col.into_iter().map(|(i, m)| (i, m / total)).collect()
        } else {
            let set = crate::dist::token_set(&omega);
            let w = 1.0 / set.len() as f64;
            set.into_iter().map(|i| (i, w)).collect()
        };
        beta.insert(omega, row);
    }
    beta
}

/// `Σ_i min(p(i), Σ_ω β(i|ω) p_draft(ω))`.
pub fn beta_objective(instance: &ProblemInstance, beta: &Beta, mode: TupleMode) -> f64 {
    let p = instance.target();
    let q = instance.draft();
    let mut mass = vec![Vec::new(); p.len()];
    for (omega, row) in beta {
        let w = match mode {
            TupleMode::Multiset => multiset_mass(q, omega),
            TupleMode::Ordered => crate::dist::tuple_mass(q, omega),
        };
        for &(i, b) in row {
            mass[i].push(b * w);
        }
    }
    neumaier_sum(
        mass.into_iter()
            .zip(p)
            .map(|(m, &pi)| neumaier_sum(m).min(pi)),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{complete_plan, solve_relaxed_exact, FlowOptions};

    fn ex1() -> ProblemInstance {
        ProblemInstance::from_vecs(vec![0.5, 0.3, 0.2], vec![0.2, 0.3, 0.5], 2, 1e-3).unwrap()
    }

    #[test]
    fn brute_force_examples() {
        let (a, h) = brute_force_alpha(&ex1()).unwrap();
        assert!((a - 0.86).abs() < 1e-15);
        assert_eq!(h, vec![1, 2]);
        let same = ProblemInstance::from_vecs(vec![0.2, 0.8], vec![0.2, 0.8], 3, 1e-3).unwrap();
        assert_eq!(brute_force_alpha(&same).unwrap(), (1.0, vec![]));
        let one =
            ProblemInstance::from_vecs(vec![0.5, 0.3, 0.2], vec![0.2, 0.3, 0.5], 1, 1e-3).unwrap();
        // 1 - TV = 1 - 0.3.
        assert!((brute_force_alpha(&one).unwrap().0 - 0.7).abs() < 1e-15);
    }

    #[test]
    fn neumaier_recovers_cancellation() {
        assert_eq!(neumaier_sum([1.0, 1e100, 1.0, -1e100]), 2.0);
    }

    #[test]
    fn exact_plan_validates() {
        let inst = ex1();
        let relaxed = solve_relaxed_exact(&inst, FlowOptions::default()).unwrap();
        let r = validate_plan(&inst, &relaxed, PlanKind::Relaxed, None);
        assert!(r.support_ok && r.max_col_violation < 1e-15);
        assert!((r.objective - 0.86).abs() < 1e-12);
        let full = complete_plan(&inst, &relaxed).unwrap();
        let r = validate_plan(&inst, &full, PlanKind::Otlp, Some(&[1, 2]));
        assert!(r.total_row_l1 < 1e-9 && r.support_ok && r.max_col_violation < 1e-12);
        // The completed plan is not a relaxed plan.
        assert!(!validate_plan(&inst, &full, PlanKind::Relaxed, None).support_ok);
    }

    #[test]
    fn zero_plan_is_relaxed_feasible() {
        let inst = ex1();
        let r = validate_plan(
            &inst,
            &SparsePlan::new(TupleMode::Multiset),
            PlanKind::Relaxed,
            None,
        );
        assert_eq!(r.total_row_l1, 0.0);
        assert_eq!(r.max_col_violation, 0.0);
        assert_eq!(r.objective, 0.0);
        assert!(r.support_ok);
    }

    #[test]
    fn beta_examples() {
        let inst = ex1();
        let relaxed = solve_relaxed_exact(&inst, FlowOptions::default()).unwrap();
        let beta = canonical_beta(&inst, &relaxed);
        for row in beta.values() {
            assert!((row.iter().map(|e| e.1).sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!((beta_objective(&inst, &beta, TupleMode::Multiset) - 0.86).abs() < 1e-9);

        let disjoint = ProblemInstance::from_vecs(vec![1.0, 0.0], vec![0.0, 1.0], 2, 1e-3).unwrap();
        let relaxed = solve_relaxed_exact(&disjoint, FlowOptions::default()).unwrap();
        let beta = canonical_beta(&disjoint, &relaxed);
        assert_eq!(beta[&vec![1, 1]], vec![(1, 1.0)]);

        let single = inst.with_n(1).unwrap();
        let relaxed = solve_relaxed_exact(&single, FlowOptions::default()).unwrap();
        let beta = canonical_beta(&single, &relaxed);
        for (omega, row) in &beta {
            assert_eq!(row, &vec![(omega[0], 1.0)]);
        }
        assert!((beta_objective(&single, &beta, TupleMode::Multiset) - 0.7).abs() < 1e-12);
    }
}
