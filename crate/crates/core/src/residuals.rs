//! Outer residuals via the greedy polymatroid algorithm.
//!
//! For the tokens outside `H*` we need targets `0 ≤ p_i ≤ p(i)` that make the
//! outer system feasible with equalities. Ordering `V∖H* = {v_1..v_k}` by
//! increasing `q/p` puts every `H_i = H* ∪ {v_i..v_k}` on a prefix of the
//! decreasing-ratio list, so `m_i = min_{T ⊇ H_i} ψ(T)` is a cumulative
//! minimum of prefix values read from the end of that list, and
//! `p_{v_i} = p(v_i) + m_{i+1} − m_i`.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dist::ProblemInstance;
use crate::error::{Error, Result};
use crate::subset::SubsetSolution;

/// Roundoff below this magnitude is clamped when forming `p_i`.
pub const CLAMP_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OuterResiduals {
    /// `p_i` per token. Tokens in `H*` carry `p(i)` (their residual is zero)
    /// and tokens without draft mass carry 0.
    pub lower: Vec<f64>,
    /// `p(i) − p_i` per token.
    pub residual: Vec<f64>,
    /// Membership of `H*`.
    pub in_h_star: Vec<bool>,
    /// `Σ_{i∉H*} p^res(i)`, equal to `1 − α*`.
    pub residual_total: f64,
}

impl OuterResiduals {
    /// Tokens outside `H*`, ascending.
    pub fn outer_tokens(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.lower.len()).filter(|&i| !self.in_h_star[i])
    }
}

pub fn solve_outer_residuals(
    instance: &ProblemInstance,
    subset: &SubsetSolution,
) -> Result<OuterResiduals> {
    let p = instance.target();
    let vocab = instance.vocab_size();
    let h = subset.h_star.len();
    if subset.sorted_order[..h] != subset.h_star[..] {
        return Err(Error::Internal(
            "H* is not a prefix of the ratio order".into(),
        ));
    }
    if subset.prefix_psi.len() != subset.sorted_order.len() + 1 {
        return Err(Error::Internal(
            "prefix values missing from subset solution".into(),
        ));
    }
    let in_h_star = subset.mask(vocab);
    let mut lower = vec![0.0; vocab];
    for &t in &subset.h_star {
        lower[t] = p[t];
    }

    // tail[j] is the (j+1)-th token after H* in decreasing ratio; v_i runs
    // over tail from the back. best[j] = min over prefixes of length >= h + j.
    let tail = &subset.sorted_order[h..];
    let k = tail.len();
    let mut best = vec![0.0; k + 1];
    best[k] = subset.prefix_psi[h + k];
    for j in (0..k).rev() {
        best[j] = best[j + 1].min(subset.prefix_psi[h + j]);
    }
    // m_{i+1} for v_i = tail[j] is best[j], m_i is best[j + 1].
    for (j, &t) in tail.iter().enumerate() {
        let mut v = p[t] + best[j] - best[j + 1];
        if v < 0.0 {
            if v < -CLAMP_TOL {
                return Err(Error::Internal(format!(
                    "negative outer residual target {v} at token {t}"
                )));
            }
            v = 0.0;
        }
        lower[t] = v.min(p[t]);
    }

    let residual: Vec<f64> = (0..vocab).map(|i| p[i] - lower[i]).collect();
    let residual_total = (0..vocab)
        .filter(|&i| !in_h_star[i])
        .map(|i| residual[i])
        .sum();
    Ok(OuterResiduals {
        lower,
        residual,
        in_h_star,
        residual_total,
    })
}

/// How [`check_outer_feasibility`] walks the constraint family.
#[derive(Debug, Clone, Copy)]
pub enum FeasibilityScope {
    /// Every `S ⊆ V∖H*`; refuses more than 20 outer tokens.
    Exhaustive,
    /// Random subsets drawn with a fixed seed.
    Sampled { count: usize, seed: u64 },
    /// Exhaustive up to 12 outer tokens, otherwise 1000 seeded samples.
    Auto,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityViolation {
    pub subset: Vec<usize>,
    pub lhs: f64,
    pub rhs: f64,
}

/// Verifies `Σ_{i∈S} p_i ≤ Σ_{i∈S} p(i) + ψ(V∖S)` for every (or sampled)
/// `S ⊆ V∖H*`, plus equality at `S = V∖H*` and the box `0 ≤ p_i ≤ p(i)`.
pub fn check_outer_feasibility(
    instance: &ProblemInstance,
    residuals: &OuterResiduals,
    scope: FeasibilityScope,
    tol: f64,
) -> std::result::Result<(), FeasibilityViolation> {
    let p = instance.target();
    let q = instance.draft();
    let n = instance.n() as i32;
    let outer: Vec<usize> = residuals.outer_tokens().collect();

    for &i in &outer {
        let v = residuals.lower[i];
        if v < -tol || v > p[i] + tol {
            return Err(FeasibilityViolation {
                subset: vec![i],
                lhs: v,
                rhs: p[i],
            });
        }
    }

    let p_total: f64 = p.iter().sum();
    let q_total: f64 = q.iter().sum();
    // For S ⊆ V∖H*: RHS = Σ_S p + (p_total − Σ_S p) − (q_total − Σ_S q)^n.
    let check = |members: &[usize]| -> std::result::Result<(), FeasibilityViolation> {
        let lhs: f64 = members.iter().map(|&i| residuals.lower[i]).sum();
        let ps: f64 = members.iter().map(|&i| p[i]).sum();
        let qs: f64 = members.iter().map(|&i| q[i]).sum();
        let rest_q = (q_total - qs).max(0.0);
        let rhs = ps + (p_total - ps) - rest_q.powi(n);
        if lhs > rhs + tol {
            return Err(FeasibilityViolation {
                subset: members.to_vec(),
                lhs,
                rhs,
            });
        }
        Ok(())
    };

    // Equality at S = V∖H*: Σ p_i = Σ_{V∖H*} p(i) + ψ(H*).
    let lhs: f64 = outer.iter().map(|&i| residuals.lower[i]).sum();
    let h: Vec<usize> = (0..p.len()).filter(|&i| residuals.in_h_star[i]).collect();
    let psi_h = crate::subset::psi(instance, &h);
    let rhs: f64 = outer.iter().map(|&i| p[i]).sum::<f64>() + psi_h;
    if (lhs - rhs).abs() > tol {
        return Err(FeasibilityViolation {
            subset: outer.clone(),
            lhs,
            rhs,
        });
    }

    let exhaustive = match scope {
        FeasibilityScope::Exhaustive => {
            if outer.len() > 20 {
                return Err(FeasibilityViolation {
                    subset: outer,
                    lhs: f64::NAN,
                    rhs: f64::NAN,
                });
            }
            true
        }
        FeasibilityScope::Auto => outer.len() <= 12,
        FeasibilityScope::Sampled { .. } => false,
    };

    if exhaustive {
        let mut members = Vec::with_capacity(outer.len());
        for mask in 1u64..(1u64 << outer.len()) {
            members.clear();
            members.extend(
                outer
                    .iter()
                    .enumerate()
                    .filter(|(b, _)| mask >> b & 1 == 1)
                    .map(|(_, &t)| t),
            );
            check(&members)?;
        }
    } else {
        let (count, seed) = match scope {
            FeasibilityScope::Sampled { count, seed } => (count, seed),
            _ => (1000, 0),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..count {
            let size = rand::Rng::random_range(&mut rng, 1..=outer.len());
            let members: Vec<usize> = index::sample(&mut rng, outer.len(), size)
                .into_iter()
                .map(|b| outer[b])
                .collect();
            check(&members)?;
        }
    }
    Ok(())
}
