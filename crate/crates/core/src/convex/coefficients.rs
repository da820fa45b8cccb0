//! Grouped coefficients of the truncated objectives.
//!
//! `c_A` is the draft mass of the tuples whose tokens inside the variable
//! universe are exactly `A`. With `b` the mass of tokens that may appear in a
//! tuple without owning a variable (`Σ_{H*} q` for the outer system, 0 for the
//! inner one),
//!
//! `c_A = Σ_{k=|A|}^{n} C(n,k) b^{n−k} · k! [x^k] Π_{a∈A} (e^{q(a)x} − 1)`,
//!
//! which equals the inclusion-exclusion sum `Σ_{B⊆A} (−1)^{|A|−|B|} (b + q(B))^n`
//! but has only nonnegative terms.

use serde::Serialize;

/// Coefficients below this are dropped.
pub const DROP_BELOW: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoefficientTable {
    /// Variable universe, ascending by token id.
    pub tokens: Vec<usize>,
    /// `(A as indices into tokens, c_A)`, ordered by size then lexicographically.
    pub terms: Vec<(Vec<u32>, f64)>,
}

impl CoefficientTable {
    pub fn total(&self) -> f64 {
        self.terms.iter().map(|t| t.1).sum()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// `c_A` for a set of token ids, 0 when absent.
    pub fn get(&self, set: &[usize]) -> f64 {
        let mut idx: Vec<u32> = Vec::with_capacity(set.len());
        for t in set {
            match self.tokens.binary_search(t) {
                Ok(k) => idx.push(k as u32),
                Err(_) => return 0.0,
            }
        }
        idx.sort_unstable();
        idx.dedup();
        self.terms
            .iter()
            .find(|(a, _)| *a == idx)
            .map_or(0.0, |t| t.1)
    }
}

pub(crate) fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, j| acc * (n - j) as f64 / (j + 1) as f64)
}

/// Multiplies `poly` (truncated at degree `n`) by `e^{qx} − 1`.
pub(crate) fn mul_exp_minus_one(poly: &[f64], q: f64, n: usize) -> Vec<f64> {
    let mut series = vec![0.0; n + 1];
    let mut term = 1.0;
    for (m, s) in series.iter_mut().enumerate().skip(1) {
        term *= q / m as f64;
        *s = term;
    }
    let mut out = vec![0.0; n + 1];
    for (i, &a) in poly.iter().enumerate() {
        if a == 0.0 {
            continue;
        }
        for m in 1..=n - i {
            out[i + m] += a * series[m];
        }
    }
    out
}

/// Coefficient table over `tokens` with `n` draws and outside mass `base`.
pub fn coefficient_table(q: &[f64], tokens: &[usize], base: f64, n: usize) -> CoefficientTable {
    let mut tokens = tokens.to_vec();
    tokens.sort_unstable();
    // weights[k] = C(n,k) · k! · b^{n−k}
    let weights: Vec<f64> = (0..=n)
        .map(|k| {
            binomial(n, k) * (1..=k).map(|j| j as f64).product::<f64>() * base.powi((n - k) as i32)
        })
        .collect();

    let mut terms: Vec<(Vec<u32>, f64)> = Vec::new();
    let mut unity = vec![0.0; n + 1];
    unity[0] = 1.0;
    // Depth-first over increasing index sequences, sharing partial products.
    let mut stack: Vec<(Vec<u32>, Vec<f64>)> = vec![(Vec::new(), unity)];
    while let Some((set, poly)) = stack.pop() {
        let start = set.last().map_or(0, |&l| l as usize + 1);
        if set.len() == n {
            continue;
        }
        for k in (start..tokens.len()).rev() {
            let next = mul_exp_minus_one(&poly, q[tokens[k]], n);
            let mut a = set.clone();
            a.push(k as u32);
            let c: f64 = (a.len()..=n).map(|d| weights[d] * next[d]).sum();
            if c >= DROP_BELOW {
                terms.push((a.clone(), c));
            }
            stack.push((a, next));
        }
    }
    terms.sort_by(|x, y| x.0.len().cmp(&y.0.len()).then_with(|| x.0.cmp(&y.0)));
    CoefficientTable { tokens, terms }
}
