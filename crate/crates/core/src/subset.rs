//! Subset selection: `ψ(H) = Σ_{i∈H} p(i) − (Σ_{i∈H} q(i))^n` and the
//! ratio-sorted prefix method for its minimizer `H*`.

use std::cmp::Ordering;

use serde::Serialize;

use crate::dist::ProblemInstance;

/// A new prefix must beat the running minimum by more than this to replace it.
/// Keeps exact ties (e.g. `p = q`) on the earliest prefix despite roundoff.
pub const TIE_TOL: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubsetSolution {
    /// The minimizing prefix, in ratio order.
    pub h_star: Vec<usize>,
    pub alpha_star: f64,
    /// Active tokens with positive target or draft mass, by decreasing `q/p`.
    pub sorted_order: Vec<usize>,
    pub psi_h_star: f64,
    /// `ψ` of every prefix of `sorted_order`, including the empty one.
    #[serde(skip)]
    pub prefix_psi: Vec<f64>,
}

impl SubsetSolution {
    pub fn contains(&self, token: usize) -> bool {
        self.h_star.contains(&token)
    }

    /// Membership mask over the full vocabulary.
    pub fn mask(&self, vocab: usize) -> Vec<bool> {
        let mut m = vec![false; vocab];
        for &t in &self.h_star {
            m[t] = true;
        }
        m
    }

    /// Draft mass of `H*`.
    pub fn draft_mass(&self, q: &[f64]) -> f64 {
        self.h_star.iter().map(|&i| q[i]).sum()
    }
}

/// Exact product `a·b` as an unevaluated sum `hi + lo`.
fn two_product(a: f64, b: f64) -> (f64, f64) {
    let hi = a * b;
    (hi, a.mul_add(b, -hi))
}

/// Orders tokens by decreasing `q/p` via exact cross products, ties by id.
///
/// `p(i) = 0 < q(i)` sorts first. Tokens with `p = q = 0` must be filtered
/// out beforehand, they would tie with everything.
pub fn ratio_order(p: &[f64], q: &[f64], a: usize, b: usize) -> Ordering {
    let lhs = two_product(q[a], p[b]);
    let rhs = two_product(q[b], p[a]);
    rhs.0
        .total_cmp(&lhs.0)
        .then(rhs.1.total_cmp(&lhs.1))
        .then(a.cmp(&b))
}

/// Sorts `tokens` in place by decreasing `q/p`, dropping `p = q = 0` tokens.
pub fn sort_by_ratio(p: &[f64], q: &[f64], tokens: &mut Vec<usize>) {
    tokens.retain(|&i| p[i] > 0.0 || q[i] > 0.0);
    tokens.sort_by(|&a, &b| ratio_order(p, q, a, b));
}

/// `ψ(H)` for an arbitrary token set.
pub fn psi(instance: &ProblemInstance, h: &[usize]) -> f64 {
    let p = instance.target();
    let q = instance.draft();
    let ps: f64 = h.iter().map(|&i| p[i]).sum();
    let qs: f64 = h.iter().map(|&i| q[i]).sum();
    ps - qs.powi(instance.n() as i32)
}

/// `ψ` when the `n` drafts are independent with distinct distributions
/// `qs[0..n]`: `Σ_H p − Π_j Σ_H q_j`. Used for property checks only.
pub fn psi_independent(p: &[f64], qs: &[Vec<f64>], h: &[usize]) -> f64 {
    let ps: f64 = h.iter().map(|&i| p[i]).sum();
    let prod: f64 = qs
        .iter()
        .map(|qj| h.iter().map(|&i| qj[i]).sum::<f64>())
        .product();
    ps - prod
}

/// Scans `ψ(base ∪ L_k)` over the prefixes `L_k` of `order`. Returns all values.
fn prefix_scan(instance: &ProblemInstance, base: &[usize], order: &[usize]) -> Vec<f64> {
    let p = instance.target();
    let q = instance.draft();
    let n = instance.n() as i32;
    let mut ps: f64 = base.iter().map(|&i| p[i]).sum();
    let mut qs: f64 = base.iter().map(|&i| q[i]).sum();
    let mut out = Vec::with_capacity(order.len() + 1);
    out.push(ps - qs.powi(n));
    for &t in order {
        ps += p[t];
        qs += q[t];
        out.push(ps - qs.min(1.0).powi(n));
    }
    out
}

/// Index of the earliest minimum, up to [`TIE_TOL`].
fn earliest_min(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in values.iter().enumerate().skip(1) {
        if v < values[best] - TIE_TOL {
            best = k;
        }
    }
    best
}

/// Recovers `H*` and `α* = 1 + ψ(H*)` in `O(V log V)`.
pub fn solve_h_star(instance: &ProblemInstance) -> SubsetSolution {
    let p = instance.target();
    let q = instance.draft();
    let mut order = instance.active().to_vec();
    sort_by_ratio(p, q, &mut order);
    let prefix_psi = prefix_scan(instance, &[], &order);
    let k = earliest_min(&prefix_psi);
    let psi_h_star = prefix_psi[k].min(0.0);
    SubsetSolution {
        h_star: order[..k].to_vec(),
        alpha_star: (1.0 + psi_h_star).clamp(0.0, 1.0),
        sorted_order: order,
        psi_h_star,
        prefix_psi,
    }
}

/// Minimum of `ψ(S)` over `A ⊆ S ⊆ B`, attained at `A` plus a ratio-sorted
/// prefix of `B ∖ A`. Returns the value and the minimizing set.
pub fn constrained_min_psi(
    instance: &ProblemInstance,
    lower: &[usize],
    upper: &[usize],
) -> (f64, Vec<usize>) {
    let p = instance.target();
    let q = instance.draft();
    let mut free: Vec<usize> = upper
        .iter()
        .copied()
        .filter(|t| !lower.contains(t))
        .collect();
    sort_by_ratio(p, q, &mut free);
    let values = prefix_scan(instance, lower, &free);
    let k = earliest_min(&values);
    let mut set = lower.to_vec();
    set.extend_from_slice(&free[..k]);
    (values[k], set)
}

/// Classical single-draft acceptance `Σ_i min(p(i), q(i))`.
pub fn alpha_single_draft(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| a.min(*b)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex1() -> ProblemInstance {
        ProblemInstance::from_vecs(vec![0.5, 0.3, 0.2], vec![0.2, 0.3, 0.5], 2, 1e-3).unwrap()
    }

    #[test]
    fn psi_examples() {
        let inst = ex1();
        assert_eq!(psi(&inst, &[]), 0.0);
        // Direct: 0.5 - 0.8^2; enumeration of {1,2}^2 gives the same 0.64.
        assert!((psi(&inst, &[1, 2]) + 0.14).abs() < 1e-15);
        let same =
            ProblemInstance::from_vecs(vec![0.1, 0.6, 0.3], vec![0.1, 0.6, 0.3], 3, 1e-3).unwrap();
        for h in [vec![0], vec![1, 2], vec![0, 2], vec![0, 1, 2]] {
            assert!(psi(&same, &h) >= -1e-16);
        }
    }

    #[test]
    fn h_star_ex1() {
        let sol = solve_h_star(&ex1());
        assert_eq!(sol.h_star, vec![2, 1]);
        assert_eq!(sol.sorted_order, vec![2, 1, 0]);
        assert!((sol.alpha_star - 0.86).abs() < 1e-15);
        assert!((sol.alpha_star - (1.0 + sol.psi_h_star)).abs() < 1e-15);
    }

    #[test]
    fn h_star_identical_distributions() {
        let inst =
            ProblemInstance::from_vecs(vec![0.1, 0.2, 0.3, 0.4], vec![0.1, 0.2, 0.3, 0.4], 3, 1e-3)
                .unwrap();
        let sol = solve_h_star(&inst);
        assert!(sol.h_star.is_empty());
        assert_eq!(sol.alpha_star, 1.0);
    }

    #[test]
    fn h_star_disjoint_support() {
        let inst = ProblemInstance::from_vecs(vec![1.0, 0.0], vec![0.0, 1.0], 2, 1e-3).unwrap();
        let sol = solve_h_star(&inst);
        assert_eq!(sol.h_star, vec![1]);
        assert_eq!(sol.alpha_star, 0.0);
    }

    #[test]
    fn zero_target_tokens_sort_first_by_id() {
        let p = [0.0, 0.5, 0.0, 0.5];
        let q = [0.25, 0.25, 0.25, 0.25];
        let mut tokens = vec![3, 2, 1, 0];
        sort_by_ratio(&p, &q, &mut tokens);
        assert_eq!(tokens, vec![0, 2, 1, 3]);
    }

    #[test]
    fn ratio_order_is_exact_for_close_ratios() {
        // q/p equal in exact arithmetic up to the last bit of one factor.
        let p = [0.1, 0.1 * (1.0 + f64::EPSILON)];
        let q = [0.3, 0.3];
        assert_eq!(ratio_order(&p, &q, 0, 1), Ordering::Less);
        assert_eq!(ratio_order(&p, &q, 1, 0), Ordering::Greater);
    }

    #[test]
    fn constrained_examples() {
        let inst = ex1();
        let (v, s) = constrained_min_psi(&inst, &[1, 2], &[1, 2]);
        assert!((v - psi(&inst, &[1, 2])).abs() < 1e-16);
        assert_eq!(s, vec![1, 2]);
        // Admissible sets {1,2} (-0.14) and {0,1,2} (0).
        let (v, s) = constrained_min_psi(&inst, &[1, 2], &[0, 1, 2]);
        assert!((v + 0.14).abs() < 1e-15);
        assert_eq!(s, vec![1, 2]);
        let (v, _) = constrained_min_psi(&inst, &[], &[0, 1, 2]);
        assert!((v - solve_h_star(&inst).psi_h_star).abs() < 1e-16);
    }

    #[test]
    fn single_draft_examples() {
        assert!((alpha_single_draft(&[0.5, 0.3, 0.2], &[0.2, 0.3, 0.5]) - 0.7).abs() < 1e-15);
        assert_eq!(alpha_single_draft(&[1.0, 0.0], &[0.0, 1.0]), 0.0);
        assert_eq!(alpha_single_draft(&[0.25; 4], &[0.25; 4]), 1.0);
        let inst =
            ProblemInstance::from_vecs(vec![0.5, 0.3, 0.2], vec![0.2, 0.3, 0.5], 1, 1e-3).unwrap();
        assert!((solve_h_star(&inst).alpha_star - 0.7).abs() < 1e-15);
    }

    #[test]
    fn psi_of_full_vocab_is_zero() {
        let inst = ProblemInstance::from_vecs(
            vec![0.5, 0.25, 0.125, 0.125],
            vec![0.125, 0.125, 0.25, 0.5],
            3,
            1e-3,
        )
        .unwrap();
        assert_eq!(psi(&inst, &[0, 1, 2, 3]), 0.0);
    }
}
