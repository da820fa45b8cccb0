//! Value and gradient of the truncated LogSumExp objectives.

use super::coefficients::CoefficientTable;

/// `f(α) = Σ_A c_A · L_A(α) − Σ_i t_i α_i` where `L_A` is `log Σ_{i∈A} e^{α_i}`
/// (outer) or `log(1 + Σ_{i∈A} e^{α_i})` (inner, `slack = true`).
#[derive(Debug, Clone)]
pub struct Objective<'a> {
    pub table: &'a CoefficientTable,
    /// Linear weights aligned with `table.tokens`.
    pub targets: Vec<f64>,
    pub slack: bool,
}

impl Objective<'_> {
    pub fn dim(&self) -> usize {
        self.table.tokens.len()
    }

    /// Returns the value and writes the gradient into `grad`.
    pub fn eval(&self, alphas: &[f64], grad: &mut [f64]) -> f64 {
        let mut value = 0.0;
        for (g, (&t, &a)) in grad.iter_mut().zip(self.targets.iter().zip(alphas)) {
            *g = -t;
            value -= t * a;
        }
        let mut weights = Vec::new();
        for (set, c) in &self.table.terms {
            let mut m = set
                .iter()
                .map(|&k| alphas[k as usize])
                .fold(f64::NEG_INFINITY, f64::max);
            if self.slack {
                m = m.max(0.0);
            }
            weights.clear();
            weights.extend(set.iter().map(|&k| (alphas[k as usize] - m).exp()));
            let mut denom: f64 = weights.iter().sum();
            if self.slack {
                denom += (-m).exp();
            }
            value += c * (m + denom.ln());
            for (&k, w) in set.iter().zip(&weights) {
                grad[k as usize] += c * w / denom;
            }
        }
        value
    }

    pub fn value(&self, alphas: &[f64]) -> f64 {
        let mut grad = vec![0.0; self.dim()];
        self.eval(alphas, &mut grad)
    }
}
