//! Probability vectors, preprocessing (temperature, top-k) and closed-form
//! masses of i.i.d. draft tuples.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Draft probabilities below this are treated as outside the support.
pub const PROB_FLOOR: f64 = 1e-300;

/// Tolerance on the total mass of a full distribution.
pub const NORMALIZATION_TOL: f64 = 1e-9;

/// A finite probability vector indexed by token id.
///
/// Either a full distribution (sums to one within [`NORMALIZATION_TOL`]) or
/// an explicitly flagged sub-probability slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbDist {
    mass: Vec<f64>,
    sub_probability: bool,
}

impl ProbDist {
    /// Validates and wraps a full distribution.
    pub fn new(mass: Vec<f64>) -> Result<Self> {
        check_entries(&mass)?;
        let total: f64 = mass.iter().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return invalid(format!("probabilities sum to {total}, expected 1"));
        }
        Ok(Self {
            mass,
            sub_probability: false,
        })
    }

    /// Validates and renormalizes nonnegative weights.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        check_entries(&weights)?;
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return invalid("weights have no positive mass");
        }
        Ok(Self {
            mass: weights.into_iter().map(|w| w / total).collect(),
            sub_probability: false,
        })
    }

    /// Wraps a slice of a distribution whose total may be below one.
    pub fn sub_probability(mass: Vec<f64>) -> Result<Self> {
        check_entries(&mass)?;
        let total: f64 = mass.iter().sum();
        if total > 1.0 + NORMALIZATION_TOL {
            return invalid(format!("sub-probability slice sums to {total} > 1"));
        }
        Ok(Self {
            mass,
            sub_probability: true,
        })
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn len(&self) -> usize {
        self.mass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mass.is_empty()
    }

    pub fn is_sub_probability(&self) -> bool {
        self.sub_probability
    }

    /// Number of strictly positive entries.
    pub fn support_size(&self) -> usize {
        self.mass.iter().filter(|&&m| m > 0.0).count()
    }

    /// Applies a temperature to an existing distribution, i.e. the softmax of
    /// `ln p / temp`.
    pub fn tempered(&self, temp: f64) -> Result<Self> {
        if !(temp > 0.0) || !temp.is_finite() {
            return invalid(format!("temperature must be positive, got {temp}"));
        }
        let logits: Vec<f64> = self
            .mass
            .iter()
            .map(|&m| if m > 0.0 { m.ln() } else { f64::NEG_INFINITY })
            .collect();
        Ok(Self {
            mass: softmax_scaled(&logits, temp),
            sub_probability: false,
        })
    }
}

impl AsRef<[f64]> for ProbDist {
    fn as_ref(&self) -> &[f64] {
        &self.mass
    }
}

fn check_entries(mass: &[f64]) -> Result<()> {
    if mass.is_empty() {
        return invalid("empty distribution");
    }
    if let Some((i, m)) = mass
        .iter()
        .enumerate()
        .find(|(_, m)| !m.is_finite() || **m < 0.0)
    {
        return invalid(format!(
            "entry {i} is {m}, expected a finite nonnegative value"
        ));
    }
    Ok(())
}

/// Softmax of `logits / temp` with a max shift. `-inf` logits map to zero.
fn softmax_scaled(logits: &[f64], temp: f64) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&l| ((l - max) / temp).exp()).collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= total);
    out
}

/// Softmax of `logits / temp`.
pub fn apply_temperature(logits: &[f64], temp: f64) -> Result<ProbDist> {
    if logits.is_empty() {
        return invalid("empty logit vector");
    }
    if let Some(i) = logits.iter().position(|l| !l.is_finite()) {
        return invalid(format!("logit {i} is not finite"));
    }
    if !(temp > 0.0) || !temp.is_finite() {
        return invalid(format!("temperature must be positive, got {temp}"));
    }
    Ok(ProbDist {
        mass: softmax_scaled(logits, temp),
        sub_probability: false,
    })
}

/// One OTLP: target `p`, draft `q`, `n` i.i.d. drafts and tolerance `tau`.
///
/// `p` is always the full target over the vocabulary. The solvers only look
/// at the tokens in `active` (the support of `q`); the remaining target mass
/// enters through residual resampling.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance {
    p: ProbDist,
    q: ProbDist,
    n: usize,
    tau: f64,
    active: Vec<usize>,
}

impl ProblemInstance {
    pub fn new(p: ProbDist, q: ProbDist, n: usize, tau: f64) -> Result<Self> {
        if p.is_sub_probability() || q.is_sub_probability() {
            return invalid("instance distributions must be full distributions");
        }
        if p.len() != q.len() {
            return invalid(format!(
                "target has {} tokens but draft has {}",
                p.len(),
                q.len()
            ));
        }
        if n == 0 {
            return invalid("draft count n must be at least 1");
        }
        if !(tau > 0.0) || !tau.is_finite() {
            return invalid(format!("tau must be positive, got {tau}"));
        }
        let mut qm = q.mass;
        for v in qm.iter_mut() {
            if *v < PROB_FLOOR {
                *v = 0.0;
            }
        }
        let active: Vec<usize> = (0..qm.len()).filter(|&i| qm[i] > 0.0).collect();
        if active.is_empty() {
            return invalid("draft distribution has empty support");
        }
        let total: f64 = active.iter().map(|&i| qm[i]).sum();
        active.iter().for_each(|&i| qm[i] /= total);
        Ok(Self {
            p,
            q: ProbDist {
                mass: qm,
                sub_probability: false,
            },
            n,
            tau,
            active,
        })
    }

    /// Convenience constructor from raw vectors.
    pub fn from_vecs(p: Vec<f64>, q: Vec<f64>, n: usize, tau: f64) -> Result<Self> {
        Self::new(ProbDist::new(p)?, ProbDist::new(q)?, n, tau)
    }

    pub fn target(&self) -> &[f64] {
        self.p.mass()
    }

    pub fn draft(&self) -> &[f64] {
        self.q.mass()
    }

    pub fn target_dist(&self) -> &ProbDist {
        &self.p
    }

    pub fn draft_dist(&self) -> &ProbDist {
        &self.q
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Token ids where the draft has support, ascending.
    pub fn active(&self) -> &[usize] {
        &self.active
    }

    pub fn vocab_size(&self) -> usize {
        self.p.len()
    }

    pub fn is_active(&self, token: usize) -> bool {
        self.active.binary_search(&token).is_ok()
    }

    pub fn with_tau(&self, tau: f64) -> Result<Self> {
        if !(tau > 0.0) || !tau.is_finite() {
            return invalid(format!("tau must be positive, got {tau}"));
        }
        Ok(Self {
            tau,
            ..self.clone()
        })
    }

    pub fn with_n(&self, n: usize) -> Result<Self> {
        if n == 0 {
            return invalid("draft count n must be at least 1");
        }
        Ok(Self { n, ..self.clone() })
    }

    /// The target restricted to the active tokens, un-renormalized.
    pub fn target_slice(&self) -> ProbDist {
        let mut mass = vec![0.0; self.p.len()];
        for &i in &self.active {
            mass[i] = self.p.mass[i];
        }
        ProbDist {
            mass,
            sub_probability: true,
        }
    }

    /// Checks that a drafted tuple has length `n` and only active tokens.
    pub fn check_tuple(&self, omega: &[usize]) -> Result<()> {
        if omega.len() != self.n {
            return invalid(format!(
                "drafted tuple has {} tokens, expected n = {}",
                omega.len(),
                self.n
            ));
        }
        if let Some(t) = omega.iter().find(|&&t| !self.is_active(t)) {
            return invalid(format!("token {t} has no draft mass"));
        }
        Ok(())
    }
}

/// Restricts the draft to its `k` most likely tokens (ties to the lower id)
/// and renormalizes it there. The target is kept whole.
pub fn top_k_truncate(instance: &ProblemInstance, k: usize) -> Result<ProblemInstance> {
    if k == 0 {
        return invalid("top-k requires k >= 1");
    }
    let support = instance.active.len();
    let k = if k > support {
        log::warn!("top-k of {k} exceeds the draft support of {support}; clamping");
        support
    } else {
        k
    };
    let q = instance.draft();
    let mut ranked = instance.active.clone();
    ranked.sort_by(|&a, &b| q[b].total_cmp(&q[a]).then(a.cmp(&b)));
    ranked.truncate(k);
    ranked.sort_unstable();
    let total: f64 = ranked.iter().map(|&i| q[i]).sum();
    let mut mass = vec![0.0; q.len()];
    for &i in &ranked {
        mass[i] = q[i] / total;
    }
    Ok(ProblemInstance {
        p: instance.p.clone(),
        q: ProbDist {
            mass,
            sub_probability: false,
        },
        n: instance.n,
        tau: instance.tau,
        active: ranked,
    })
}

/// Total draft mass of `set^n`, i.e. `(Σ_{i∈set} q(i))^n`.
pub fn set_mass(q: &[f64], set: &[usize], n: usize) -> f64 {
    let s: f64 = set.iter().map(|&i| q[i]).sum();
    s.powi(n as i32)
}

/// Draft mass of one ordered tuple.
pub fn tuple_mass(q: &[f64], omega: &[usize]) -> f64 {
    omega.iter().map(|&i| q[i]).product()
}

/// Draft mass of all orderings of a sorted multiset.
pub fn multiset_mass(q: &[f64], multiset: &[usize]) -> f64 {
    multinomial(multiset) * tuple_mass(q, multiset)
}

/// Number of distinct orderings of a sorted multiset.
pub fn multinomial(multiset: &[usize]) -> f64 {
    let mut coef = 1.0;
    let mut pos = 0.0;
    let mut run = 0.0;
    for (idx, t) in multiset.iter().enumerate() {
        pos += 1.0;
        if idx > 0 && multiset[idx - 1] == *t {
            run += 1.0;
        } else {
            run = 1.0;
        }
        coef *= pos / run;
    }
    coef
}

/// Distinct tokens of a tuple, ascending.
pub fn token_set(omega: &[usize]) -> Vec<usize> {
    let mut s = omega.to_vec();
    s.sort_unstable();
    s.dedup();
    s
}

/// Number of size-`n` multisets over `k` tokens.
pub fn multiset_count(k: usize, n: usize) -> u128 {
    if k == 0 {
        return 0;
    }
    // C(k + n - 1, n), evaluated incrementally so every partial value is an integer.
    let mut acc: u128 = 1;
    for j in 1..=n as u128 {
        acc = acc.saturating_mul(k as u128 - 1 + j) / j;
    }
    acc
}

/// Number of ordered `n`-tuples over `k` tokens.
pub fn tuple_count(k: usize, n: usize) -> u128 {
    (k as u128).checked_pow(n as u32).unwrap_or(u128::MAX)
}

/// Sorted multisets of size `n` over `tokens` (which must be ascending).
pub fn multisets(tokens: &[usize], n: usize) -> impl Iterator<Item = Vec<usize>> + '_ {
    itertools::Itertools::combinations_with_replacement(tokens.iter().copied(), n)
}

/// Ordered `n`-tuples over `tokens` in lexicographic order.
pub fn ordered_tuples(tokens: &[usize], n: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = vec![Vec::new()];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                tokens.iter().map(move |&t| {
                    let mut v = prefix.clone();
                    v.push(t);
                    v
                })
            })
            .collect();
    }
    out
}

impl From<ProbDist> for Vec<f64> {
    fn from(d: ProbDist) -> Self {
        d.mass
    }
}

impl TryFrom<Vec<f64>> for ProbDist {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        ProbDist::new(v)
    }
}
