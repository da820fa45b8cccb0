//! Seeded synthetic distributions and Markov model pairs.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::Serialize;

use crate::dist::{ProbDist, ProblemInstance};
use crate::error::{Error, Result};

/// A Dirichlet draw with concentrations `alpha`.
pub fn dirichlet<R: Rng + ?Sized>(rng: &mut R, alpha: &[f64]) -> Vec<f64> {
    let mut v: Vec<f64> = alpha
        .iter()
        .map(|&a| {
            Gamma::new(a, 1.0)
                .expect("positive concentration")
                .sample(rng)
        })
        .collect();
    let total: f64 = v.iter().sum();
    if total > 0.0 {
        v.iter_mut().for_each(|x| *x /= total);
    } else {
        // Every gamma draw underflowed; fall back to the largest concentration.
        let k = (0..alpha.len())
            .max_by(|&a, &b| alpha[a].total_cmp(&alpha[b]))
            .unwrap_or(0);
        v.iter_mut().for_each(|x| *x = 0.0);
        v[k] = 1.0;
    }
    v
}

/// Renormalizes after zeroing each entry with probability `zero_prob`
/// (never all of them).
fn sparsify<R: Rng + ?Sized>(rng: &mut R, v: &mut [f64], zero_prob: f64) {
    if zero_prob <= 0.0 {
        return;
    }
    let keep = rng.random_range(0..v.len());
    for (i, x) in v.iter_mut().enumerate() {
        if i != keep && rng.random_bool(zero_prob) {
            *x = 0.0;
        }
    }
    let total: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= total);
}

/// Random `(p, q)` pair over `vocab` tokens from a flat Dirichlet, each entry
/// zeroed with probability `zero_prob`.
pub fn random_instance<R: Rng + ?Sized>(
    rng: &mut R,
    vocab: usize,
    n: usize,
    tau: f64,
    zero_prob: f64,
) -> ProblemInstance {
    let ones = vec![1.0; vocab];
    let mut p = dirichlet(rng, &ones);
    let mut q = dirichlet(rng, &ones);
    sparsify(rng, &mut p, zero_prob);
    sparsify(rng, &mut q, zero_prob);
    ProblemInstance::new(
        ProbDist::from_weights(p).expect("valid weights"),
        ProbDist::from_weights(q).expect("valid weights"),
        n,
        tau,
    )
    .expect("valid instance")
}

/// Zipf weights `1/r^s` over ranks `1..=vocab`, assigned to tokens in `order`.
pub fn zipf(order: &[usize], s: f64) -> Vec<f64> {
    let mut w = vec![0.0; order.len()];
    for (r, &t) in order.iter().enumerate() {
        w[t] = 1.0 / ((r + 1) as f64).powf(s);
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);
    w
}

/// Zipf target and draft over `vocab` tokens. The draft ranks tokens in id
/// order; the target ranks them by id plus uniform noise of width `jitter`.
pub fn zipf_instance(
    vocab: usize,
    s: f64,
    jitter: f64,
    n: usize,
    tau: f64,
    seed: u64,
) -> Result<ProblemInstance> {
    if vocab == 0 {
        return Err(Error::InvalidInput("empty vocabulary".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draft_order: Vec<usize> = (0..vocab).collect();
    let keys: Vec<f64> = (0..vocab)
        .map(|i| i as f64 + rng.random_range(0.0..=jitter.max(0.0)))
        .collect();
    let mut target_order = draft_order.clone();
    target_order.sort_by(|&a, &b| keys[a].total_cmp(&keys[b]).then(a.cmp(&b)));
    ProblemInstance::new(
        ProbDist::from_weights(zipf(&target_order, s))?,
        ProbDist::from_weights(zipf(&draft_order, s))?,
        n,
        tau,
    )
}

/// Order-1 Markov target and draft models over a shared vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SyntheticModelPair {
    pub vocab_size: usize,
    /// `target[c]` is the next-token distribution after token `c`.
    pub target: Vec<Vec<f64>>,
    pub draft: Vec<Vec<f64>>,
    pub seed: u64,
}

impl SyntheticModelPair {
    /// Target rows from `Dirichlet(concentration)`; each draft row from
    /// `Dirichlet(similarity · V · target_row + 0.05)`, so larger `similarity`
    /// gives a closer draft.
    pub fn generate(vocab: usize, concentration: f64, similarity: f64, seed: u64) -> Result<Self> {
        if vocab == 0 || !(concentration > 0.0) || !(similarity > 0.0) {
            return Err(Error::InvalidInput(
                "vocab, concentration and similarity must be positive".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let flat = vec![concentration; vocab];
        let target: Vec<Vec<f64>> = (0..vocab).map(|_| dirichlet(&mut rng, &flat)).collect();
        let draft = target
            .iter()
            .map(|row| {
                let a: Vec<f64> = row
                    .iter()
                    .map(|&p| similarity * vocab as f64 * p + 0.05)
                    .collect();
                dirichlet(&mut rng, &a)
            })
            .collect();
        Ok(Self {
            vocab_size: vocab,
            target,
            draft,
            seed,
        })
    }

    pub fn from_rows(target: Vec<Vec<f64>>, draft: Vec<Vec<f64>>) -> Result<Self> {
        let vocab = target.len();
        let square = |m: &[Vec<f64>]| m.len() == vocab && m.iter().all(|r| r.len() == vocab);
        if vocab == 0 || !square(&target) || !square(&draft) {
            return Err(Error::InvalidInput(
                "transition matrices must be V x V".into(),
            ));
        }
        for row in target.iter().chain(&draft) {
            ProbDist::new(row.clone())?;
        }
        Ok(Self {
            vocab_size: vocab,
            target,
            draft,
            seed: 0,
        })
    }

    /// The single-position problem after context token `context`.
    pub fn instance(&self, context: usize, n: usize, tau: f64) -> Result<ProblemInstance> {
        ProblemInstance::new(
            ProbDist::new(self.target[context].clone())?,
            ProbDist::new(self.draft[context].clone())?,
            n,
            tau,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dirichlet_is_a_distribution() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let v = dirichlet(&mut rng, &[0.1, 1.0, 5.0]);
            assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(v.iter().all(|x| *x >= 0.0));
        }
    }

    #[test]
    fn generation_is_seeded() {
        let a = SyntheticModelPair::generate(4, 0.5, 2.0, 11).unwrap();
        let b = SyntheticModelPair::generate(4, 0.5, 2.0, 11).unwrap();
        assert_eq!(a, b);
        let z1 = zipf_instance(50, 1.1, 3.0, 2, 1e-3, 5).unwrap();
        let z2 = zipf_instance(50, 1.1, 3.0, 2, 1e-3, 5).unwrap();
        assert_eq!(z1, z2);
    }

    #[test]
    fn sparse_instances_keep_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let inst = random_instance(&mut rng, 5, 2, 1e-3, 0.4);
            assert!(!inst.active().is_empty());
        }
    }
}
