//! Single-step sampling: draw `ω` from the draft, verify, aggregate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::report::{RunReport, TimingSummary};
use crate::convex::SolveOptions;
use crate::dist::ProblemInstance;
use crate::error::Result;
use crate::transport::{timed, Method, Verifier};

/// Samples per independent random stream. Fixed so results do not depend on
/// the thread count.
pub const CHUNK: usize = 4096;

/// Inverse-CDF draw over `weights` (which sum to 1).
pub(crate) fn sample_index(weights: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            acc += w;
            last = i;
            if acc > u {
                return i;
            }
        }
    }
    last
}

pub(crate) fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[derive(Default)]
struct Partial {
    accepted: usize,
    fallbacks: usize,
    counts: Vec<usize>,
    times: Vec<f64>,
}

pub fn run_single_step(
    instance: &ProblemInstance,
    method: Method,
    opts: &SolveOptions,
    samples: usize,
    seed: u64,
) -> Result<RunReport> {
    let (verifier, _) = timed(|| Verifier::new(instance, method, opts));
    let verifier = verifier?;
    let vocab = instance.vocab_size();
    let q = instance.draft();
    let n = instance.n();
    let chunks = samples.div_ceil(CHUNK);
    let partials: Vec<Result<Partial>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream(seed, c as u64);
            let mut part = Partial {
                counts: vec![0; vocab],
                ..Default::default()
            };
            let len = CHUNK.min(samples - c * CHUNK);
            for _ in 0..len {
                let omega: Vec<usize> = (0..n).map(|_| sample_index(q, rng.random())).collect();
                let u: f64 = rng.random();
                let (out, secs) = timed(|| verifier.verify(instance, &omega, u));
                let (slice, token, accepted) = out?;
                part.times.push(secs);
                part.accepted += accepted as usize;
                part.fallbacks += slice.is_fallback() as usize;
                part.counts[token] += 1;
            }
            Ok(part)
        })
        .collect();
    let mut total = Partial {
        counts: vec![0; vocab],
        ..Default::default()
    };
    for part in partials {
        let part = part?;
        total.accepted += part.accepted;
        total.fallbacks += part.fallbacks;
        total.times.extend(part.times);
        total
            .counts
            .iter_mut()
            .zip(&part.counts)
            .for_each(|(a, b)| *a += b);
    }
    let denom = samples.max(1) as f64;
    let l1 = total
        .counts
        .iter()
        .zip(instance.target())
        .map(|(&c, &p)| (c as f64 / denom - p).abs())
        .sum();
    Ok(RunReport {
        samples,
        empirical_acceptance: total.accepted as f64 / denom,
        empirical_token_l1: Some(l1),
        failure_rate: total.fallbacks as f64 / denom,
        block_efficiency: None,
        alpha_star: Some(verifier.subset().alpha_star),
        timing: TimingSummary::from_seconds(&total.times),
    })
}

/// One verified draw.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyRecord {
    pub omega: Vec<usize>,
    pub token: usize,
    pub accepted: bool,
}

/// The draws of [`run_single_step`] with the same seed, one record each.
pub fn verify_records(
    instance: &ProblemInstance,
    verifier: &Verifier,
    samples: usize,
    seed: u64,
) -> Result<Vec<VerifyRecord>> {
    let q = instance.draft();
    let n = instance.n();
    let mut out = Vec::with_capacity(samples);
    for c in 0..samples.div_ceil(CHUNK) {
        let mut rng = stream(seed, c as u64);
        for _ in 0..CHUNK.min(samples - c * CHUNK) {
            let omega: Vec<usize> = (0..n).map(|_| sample_index(q, rng.random())).collect();
            let u: f64 = rng.random();
            let (_, token, accepted) = verifier.verify(instance, &omega, u)?;
            out.push(VerifyRecord {
                omega,
                token,
                accepted,
            });
        }
    }
    Ok(out)
}
