//! Relaxed OTLP by enumeration of basic solutions, for toy sizes.

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};

use crate::dist::{multiset_mass, multisets, ProblemInstance};
use crate::error::{Error, Result};

/// Largest number of candidate bases tried.
pub const BASIS_CAP: u128 = 2_000_000;

fn binomial(n: usize, k: usize) -> u128 {
    (0..k as u128).fold(1u128, |acc, j| acc * (n as u128 - j) / (j + 1))
}

/// Optimal value of the relaxed OTLP over multisets, found by checking every
/// basis of `[A | I] (x, s) = b`.
pub fn lp_vertex_alpha(instance: &ProblemInstance) -> Result<f64> {
    let active = instance.active();
    let p = instance.target();
    let q = instance.draft();
    let cols: Vec<Vec<usize>> = multisets(active, instance.n()).collect();
    let mut vars: Vec<(usize, usize)> = Vec::new();
    for (c, omega) in cols.iter().enumerate() {
        for (r, t) in active.iter().enumerate() {
            if omega.contains(t) {
                vars.push((r, c));
            }
        }
    }
    let m = active.len() + cols.len();
    let width = vars.len() + m;
    let bases = binomial(width, m);
    if bases > BASIS_CAP {
        return Err(Error::TooLarge {
            what: "LP basis enumeration",
            needed: bases,
            cap: BASIS_CAP,
        });
    }
    let mut a = DMatrix::<f64>::zeros(m, width);
    for (k, &(r, c)) in vars.iter().enumerate() {
        a[(r, k)] = 1.0;
        a[(active.len() + c, k)] = 1.0;
    }
    for k in 0..m {
        a[(k, vars.len() + k)] = 1.0;
    }
    let b = DVector::from_iterator(
        m,
        active
            .iter()
            .map(|&i| p[i])
            .chain(cols.iter().map(|w| multiset_mass(q, w))),
    );

    let mut best = 0.0f64;
    for basis in (0..width).combinations(m) {
        let sub = DMatrix::from_fn(m, m, |r, c| a[(r, basis[c])]);
        let lu = sub.lu();
        let Some(x) = lu.solve(&b) else { continue };
        if x.iter().any(|v| !v.is_finite() || *v < -1e-12) {
            continue;
        }
        if (&a.select_columns(&basis) * &x - &b).amax() > 1e-9 {
            continue;
        }
        let value: f64 = basis
            .iter()
            .zip(x.iter())
            .filter(|(&k, _)| k < vars.len())
            .map(|(_, v)| v)
            .sum();
        best = best.max(value);
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ex1_vertex_optimum() {
        let inst =
            ProblemInstance::from_vecs(vec![0.5, 0.3, 0.2], vec![0.2, 0.3, 0.5], 2, 1e-3).unwrap();
        assert!((lp_vertex_alpha(&inst).unwrap() - 0.86).abs() < 1e-12);
    }

    #[test]
    fn refuses_large_instances() {
        let inst = ProblemInstance::from_vecs(vec![0.25; 4], vec![0.25; 4], 2, 1e-3).unwrap();
        assert!(matches!(
            lp_vertex_alpha(&inst),
            Err(Error::TooLarge { .. })
        ));
    }
}
