//! Truncated convex solvers for the outer and inner systems.
//!
//! Each system has one variable per token (`V∖H*` for the outer system, `H*`
//! for the inner one). Only the variables in a truncation `T` enter the
//! objective; the rest keep their initial value.

mod coefficients;
mod lbfgs;
mod objective;

use serde::Serialize;

pub(crate) use coefficients::{binomial, mul_exp_minus_one};
pub use coefficients::{coefficient_table, CoefficientTable, DROP_BELOW};
pub use lbfgs::{minimize, MinimizeStatus, Minimum};
pub use objective::Objective;

use crate::dist::ProblemInstance;
use crate::flow::System;
use crate::residuals::OuterResiduals;
use crate::subset::SubsetSolution;

/// Value of pinned variables whose target mass is zero.
pub const PINNED_ALPHA: f64 = -40.0;
pub const DEFAULT_MAX_ITER: usize = 25;
/// The stopping rule is `‖∇‖₁ ≤ GRAD_FACTOR · τ`.
pub const GRAD_FACTOR: f64 = 5.0;

/// Largest truncation tried for `n` drafts. Single drafts have no cap since
/// their table is linear in `|T|`.
pub fn default_cap(n: usize) -> usize {
    match n {
        1 => usize::MAX,
        2 => 50,
        3 => 20,
        _ => 10,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum EarlyTermination {
    /// The tunable error was still above `τ` at the size cap.
    TruncationTooLarge {
        cap: usize,
        error_at_cap: f64,
    },
    /// The minimizer stopped above the gradient threshold.
    NotConverged {
        grad_l1: f64,
        iterations: usize,
    },
    Numerical,
}

impl std::fmt::Display for EarlyTermination {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::TruncationTooLarge { cap, error_at_cap } => {
                write!(
                    f,
                    "truncation too large: error {error_at_cap:e} at cap {cap}"
                )
            }
            Self::NotConverged {
                grad_l1,
                iterations,
            } => {
                write!(
                    f,
                    "not converged: gradient {grad_l1:e} after {iterations} iterations"
                )
            }
            Self::Numerical => write!(f, "non-finite objective or gradient"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Truncation {
    pub kind: System,
    /// Tokens in the order they were added (decreasing `q`, ties by id).
    pub tokens: Vec<usize>,
    /// `ε_T` for the outer system, `γ_T` for the inner one.
    pub tunable_error: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    pub tau: f64,
    pub max_iter: usize,
    pub cap: Option<usize>,
}

impl SolveOptions {
    pub fn new(tau: f64) -> Self {
        Self {
            tau,
            max_iter: DEFAULT_MAX_ITER,
            cap: None,
        }
    }
}

fn candidates(instance: &ProblemInstance, subset: &SubsetSolution, kind: System) -> Vec<usize> {
    let q = instance.draft();
    let in_h = subset.mask(instance.vocab_size());
    let mut c: Vec<usize> = match kind {
        System::Outer => instance
            .active()
            .iter()
            .copied()
            .filter(|&i| !in_h[i])
            .collect(),
        System::Inner => subset.h_star.clone(),
    };
    c.sort_by(|&a, &b| q[b].total_cmp(&q[a]).then(a.cmp(&b)));
    c
}

/// Smallest greedy truncation whose tunable error is at most `tau`.
pub fn select_truncation(
    instance: &ProblemInstance,
    subset: &SubsetSolution,
    kind: System,
    tau: f64,
    cap: usize,
) -> Result<Truncation, EarlyTermination> {
    let q = instance.draft();
    let n = instance.n() as i32;
    let h_mass = subset.draft_mass(q);
    let cand = candidates(instance, subset, kind);
    let error = |taken: usize, mass: f64| -> f64 {
        if taken == cand.len() {
            return 0.0;
        }
        let e = match kind {
            System::Outer => 1.0 - (h_mass + mass).min(1.0).powi(n),
            System::Inner => h_mass.powi(n) - mass.powi(n),
        };
        e.clamp(0.0, 1.0)
    };
    let mut mass = 0.0;
    let mut taken = 0;
    loop {
        let e = error(taken, mass);
        if e <= tau {
            return Ok(Truncation {
                kind,
                tokens: cand[..taken].to_vec(),
                tunable_error: e,
            });
        }
        if taken == cap {
            return Err(EarlyTermination::TruncationTooLarge {
                cap,
                error_at_cap: e,
            });
        }
        mass += q[cand[taken]];
        taken += 1;
    }
}

/// Table for a truncation: outside mass `Σ_{H*} q` for the outer system.
pub fn pie_coefficients(
    instance: &ProblemInstance,
    subset: &SubsetSolution,
    truncation: &Truncation,
) -> CoefficientTable {
    let q = instance.draft();
    let base = match truncation.kind {
        System::Outer => subset.draft_mass(q),
        System::Inner => 0.0,
    };
    coefficient_table(q, &truncation.tokens, base, instance.n())
}

/// `Φ_T` and its gradient with targets `p_i`.
pub fn eval_outer(
    residuals: &OuterResiduals,
    table: &CoefficientTable,
    alphas: &[f64],
) -> (f64, Vec<f64>) {
    let obj = Objective {
        table,
        targets: table.tokens.iter().map(|&i| residuals.lower[i]).collect(),
        slack: false,
    };
    let mut g = vec![0.0; obj.dim()];
    let v = obj.eval(alphas, &mut g);
    (v, g)
}

/// `Θ_T` and its gradient with targets `p(i)`.
pub fn eval_inner(
    instance: &ProblemInstance,
    table: &CoefficientTable,
    alphas: &[f64],
) -> (f64, Vec<f64>) {
    let p = instance.target();
    let obj = Objective {
        table,
        targets: table.tokens.iter().map(|&i| p[i]).collect(),
        slack: true,
    };
    let mut g = vec![0.0; obj.dim()];
    let v = obj.eval(alphas, &mut g);
    (v, g)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    EarlyTerminated,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvexSolveResult {
    /// Aligned with the table's token order.
    pub alphas: Vec<f64>,
    pub value: f64,
    pub grad_l1: f64,
    pub iterations: usize,
    pub restarted: bool,
    pub status: SolveStatus,
}

/// A converged solve of one system.
#[derive(Debug, Clone, Serialize)]
pub struct SystemSolve {
    pub truncation: Truncation,
    pub table: CoefficientTable,
    pub result: ConvexSolveResult,
}

impl SystemSolve {
    /// `α` per token over the whole vocabulary; tokens outside `T` get 0.
    pub fn dense_alphas(&self, vocab: usize) -> Vec<f64> {
        let mut a = vec![0.0; vocab];
        for (&t, &v) in self.table.tokens.iter().zip(&self.result.alphas) {
            a[t] = v;
        }
        a
    }
}

/// Selects a truncation and minimizes the matching objective to `‖∇‖₁ ≤ 5τ`.
pub fn solve_system(
    instance: &ProblemInstance,
    subset: &SubsetSolution,
    residuals: &OuterResiduals,
    kind: System,
    opts: &SolveOptions,
) -> Result<SystemSolve, EarlyTermination> {
    let cap = opts.cap.unwrap_or_else(|| default_cap(instance.n()));
    let truncation = select_truncation(instance, subset, kind, opts.tau, cap)?;
    let table = pie_coefficients(instance, subset, &truncation);
    let p = instance.target();
    let targets: Vec<f64> = table
        .tokens
        .iter()
        .map(|&i| match kind {
            System::Outer => residuals.lower[i],
            System::Inner => p[i],
        })
        .collect();
    let free: Vec<bool> = targets.iter().map(|&t| t > 0.0).collect();
    let obj = Objective {
        table: &table,
        targets: targets.clone(),
        slack: kind == System::Inner,
    };
    let grad_tol = GRAD_FACTOR * opts.tau;
    let start: Vec<f64> = free
        .iter()
        .map(|&f| if f { 0.0 } else { PINNED_ALPHA })
        .collect();
    let mut best = minimize(|x, g| obj.eval(x, g), start, &free, grad_tol, opts.max_iter);
    let mut restarted = false;
    if best.status == MinimizeStatus::Stalled && !targets.is_empty() {
        let shift = (table.total() / targets.len() as f64).ln();
        let start: Vec<f64> = targets
            .iter()
            .zip(&free)
            .map(|(&t, &f)| {
                if f {
                    (t + 1e-12).ln() - shift
                } else {
                    PINNED_ALPHA
                }
            })
            .collect();
        let second = minimize(|x, g| obj.eval(x, g), start, &free, grad_tol, opts.max_iter);
        restarted = true;
        if second.status == MinimizeStatus::Converged || second.grad_l1 < best.grad_l1 {
            best = second;
        }
    }
    match best.status {
        MinimizeStatus::Numerical => Err(EarlyTermination::Numerical),
        MinimizeStatus::Stalled => Err(EarlyTermination::NotConverged {
            grad_l1: best.grad_l1,
            iterations: best.iterations,
        }),
        MinimizeStatus::Converged => Ok(SystemSolve {
            truncation,
            table,
            result: ConvexSolveResult {
                alphas: best.x,
                value: best.value,
                grad_l1: best.grad_l1,
                iterations: best.iterations,
                restarted,
                status: SolveStatus::Converged,
            },
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::residuals::solve_outer_residuals;
    use crate::subset::solve_h_star;

    fn ex1(tau: f64) -> (ProblemInstance, SubsetSolution, OuterResiduals) {
        let inst =
            ProblemInstance::from_vecs(vec![0.5, 0.3, 0.2], vec![0.2, 0.3, 0.5], 2, tau).unwrap();
        let sub = solve_h_star(&inst);
        let res = solve_outer_residuals(&inst, &sub).unwrap();
        (inst, sub, res)
    }

    #[test]
    fn ex1_inner_truncation_needs_both() {
        let (inst, sub, _) = ex1(1e-3);
        let t = select_truncation(&inst, &sub, System::Inner, 1e-3, 50).unwrap();
        assert_eq!(t.tokens, vec![2, 1]);
        assert_eq!(t.tunable_error, 0.0);
        let err = select_truncation(&inst, &sub, System::Inner, 1e-3, 1).unwrap_err();
        match err {
            EarlyTermination::TruncationTooLarge { cap, error_at_cap } => {
                assert_eq!(cap, 1);
                assert!((error_at_cap - 0.39).abs() < 1e-15);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn outer_truncation_covering_support_is_exact() {
        let (inst, sub, _) = ex1(1e-3);
        let t = select_truncation(&inst, &sub, System::Outer, 1e-3, 50).unwrap();
        assert_eq!(t.tokens, vec![0]);
        assert_eq!(t.tunable_error, 0.0);
    }

    #[test]
    fn ex1_inner_solve_converges() {
        let (inst, sub, res) = ex1(1e-4);
        let s = solve_system(&inst, &sub, &res, System::Inner, &SolveOptions::new(1e-4)).unwrap();
        assert!(s.result.grad_l1 <= 5e-4);
        assert_eq!(s.result.status, SolveStatus::Converged);
    }

    #[test]
    fn finite_differences_agree() {
        let (inst, sub, res) = ex1(1e-4);
        let inner = select_truncation(&inst, &sub, System::Inner, 1e-4, 50).unwrap();
        let table = pie_coefficients(&inst, &sub, &inner);
        let a = [0.3, -0.7];
        let (_, g) = eval_inner(&inst, &table, &a);
        for k in 0..2 {
            let h = 1e-6;
            let mut up = a;
            let mut dn = a;
            up[k] += h;
            dn[k] -= h;
            let fd =
                (eval_inner(&inst, &table, &up).0 - eval_inner(&inst, &table, &dn).0) / (2.0 * h);
            assert!((fd - g[k]).abs() <= 1e-5 * g[k].abs().max(1e-3));
        }
        let outer = select_truncation(&inst, &sub, System::Outer, 1e-4, 50).unwrap();
        let table = pie_coefficients(&inst, &sub, &outer);
        let (_, g) = eval_outer(&res, &table, &[1.5]);
        assert!((g[0] - (0.36 - 0.36)).abs() < 1e-15);
    }

    #[test]
    fn empty_h_star_inner_is_trivial() {
        let inst = ProblemInstance::from_vecs(vec![0.5, 0.5], vec![0.5, 0.5], 3, 1e-3).unwrap();
        let sub = solve_h_star(&inst);
        let res = solve_outer_residuals(&inst, &sub).unwrap();
        let s = solve_system(&inst, &sub, &res, System::Inner, &SolveOptions::new(1e-3)).unwrap();
        assert!(s.table.is_empty());
        assert_eq!(s.result.grad_l1, 0.0);
        let s = solve_system(&inst, &sub, &res, System::Outer, &SolveOptions::new(1e-3)).unwrap();
        assert!(s.result.grad_l1 <= 5e-3);
    }
}
