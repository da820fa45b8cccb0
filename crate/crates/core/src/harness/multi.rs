//! Multi-step tree verification over synthetic Markov models.
//!
//! Each block drafts `K` i.i.d. paths of length `L` from the draft model.
//! Verification walks down the draft tree: at each node the drafts of the
//! paths that agree with the accepted prefix form `ω` (so `n` counts paths,
//! with repeats), one token is verified, and the walk continues while that
//! token is among the drafts. A token outside the drafts ends the block; after
//! `L` accepted tokens one bonus token is drawn from the target.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::report::{RunReport, TimingSummary};
use super::single::{sample_index, stream};
use super::synthetic::SyntheticModelPair;
use crate::convex::SolveOptions;
use crate::error::{Error, Result};
use crate::transport::{timed, Method, Verifier};

#[derive(Debug, Clone, Copy, Serialize)]
pub struct MultiStepConfig {
    /// Draft paths `K`.
    pub paths: usize,
    /// Path length `L`.
    pub length: usize,
    pub method: Method,
    pub tau: f64,
    pub blocks: usize,
    pub seed: u64,
}

impl MultiStepConfig {
    fn check(&self, models: &SyntheticModelPair) -> Result<()> {
        if self.paths == 0 || self.length == 0 {
            return Err(Error::InvalidInput(
                "paths and length must be at least 1".into(),
            ));
        }
        if models.vocab_size == 0 {
            return Err(Error::InvalidInput("empty vocabulary".into()));
        }
        Ok(())
    }
}

#[derive(Default)]
struct Partial {
    emitted: usize,
    accepted: usize,
    verified: usize,
    fallbacks: usize,
    times: Vec<f64>,
}

/// Simulates `blocks` independent blocks. Each block starts from a context
/// token drawn uniformly from its own random stream.
pub fn run_multi_step(models: &SyntheticModelPair, cfg: &MultiStepConfig) -> Result<RunReport> {
    cfg.check(models)?;
    let opts = SolveOptions::new(cfg.tau);
    let vocab = models.vocab_size;
    let partials: Vec<Result<Partial>> = (0..cfg.blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream(cfg.seed, b as u64);
            let mut part = Partial::default();
            let ctx = rng.random_range(0..vocab);
            let paths: Vec<Vec<usize>> = (0..cfg.paths)
                .map(|_| {
                    let mut prev = ctx;
                    (0..cfg.length)
                        .map(|_| {
                            prev = sample_index(&models.draft[prev], rng.random());
                            prev
                        })
                        .collect()
                })
                .collect();
            let mut live: Vec<usize> = (0..cfg.paths).collect();
            let mut prev = ctx;
            let mut finished = false;
            for d in 0..cfg.length {
                let omega: Vec<usize> = live.iter().map(|&k| paths[k][d]).collect();
                let u: f64 = rng.random();
                let (out, secs) = timed(|| -> Result<_> {
                    let inst = models.instance(prev, omega.len(), cfg.tau)?;
                    let v = Verifier::new(&inst, cfg.method, &opts)?;
                    v.verify(&inst, &omega, u)
                });
                let (slice, token, accepted) = out?;
                part.times.push(secs);
                part.verified += 1;
                part.fallbacks += slice.is_fallback() as usize;
                part.emitted += 1;
                if !accepted {
                    finished = true;
                    break;
                }
                part.accepted += 1;
                live.retain(|&k| paths[k][d] == token);
                prev = token;
            }
            if !finished {
                let _bonus = sample_index(&models.target[prev], rng.random());
                part.emitted += 1;
            }
            Ok(part)
        })
        .collect();
    let mut total = Partial::default();
    for p in partials {
        let p = p?;
        total.emitted += p.emitted;
        total.accepted += p.accepted;
        total.verified += p.verified;
        total.fallbacks += p.fallbacks;
        total.times.extend(p.times);
    }
    let verified = total.verified.max(1) as f64;
    Ok(RunReport {
        samples: cfg.blocks,
        empirical_acceptance: total.accepted as f64 / verified,
        empirical_token_l1: None,
        failure_rate: total.fallbacks as f64 / verified,
        block_efficiency: Some(total.emitted as f64 / cfg.blocks.max(1) as f64),
        alpha_star: None,
        timing: TimingSummary::from_seconds(&total.times),
    })
}

type SliceCache = HashMap<(usize, Vec<usize>), Vec<(usize, f64)>>;

/// Exact output distributions of the block procedure by enumeration.
pub struct TreeEnumerator<'a> {
    models: &'a SyntheticModelPair,
    paths: usize,
    length: usize,
    method: Method,
    opts: SolveOptions,
    slices: SliceCache,
    blocks: HashMap<usize, BTreeMap<Vec<usize>, f64>>,
    decodes: HashMap<(usize, usize), BTreeMap<Vec<usize>, f64>>,
}

/// Largest number of draft configurations enumerated per block.
pub const TREE_CAP: u128 = 1_000_000;

impl<'a> TreeEnumerator<'a> {
    pub fn new(
        models: &'a SyntheticModelPair,
        paths: usize,
        length: usize,
        method: Method,
        tau: f64,
    ) -> Result<Self> {
        let configs = (models.vocab_size as u128)
            .checked_pow((paths * length) as u32)
            .unwrap_or(u128::MAX);
        if configs > TREE_CAP {
            return Err(Error::TooLarge {
                what: "draft tree enumeration",
                needed: configs,
                cap: TREE_CAP,
            });
        }
        Ok(Self {
            models,
            paths,
            length,
            method,
            opts: SolveOptions::new(tau),
            slices: HashMap::new(),
            blocks: HashMap::new(),
            decodes: HashMap::new(),
        })
    }

    fn slice(&mut self, ctx: usize, omega: &[usize]) -> Result<Vec<(usize, f64)>> {
        let mut key = omega.to_vec();
        key.sort_unstable();
        if let Some(s) = self.slices.get(&(ctx, key.clone())) {
            return Ok(s.clone());
        }
        let inst = self.models.instance(ctx, omega.len(), self.opts.tau)?;
        let v = Verifier::new(&inst, self.method, &self.opts)?;
        let s = v.slice(&inst, omega)?;
        if s.is_fallback() {
            log::warn!("fallback slice at context {ctx} for {omega:?}");
        }
        self.slices.insert((ctx, key), s.probs.clone());
        Ok(s.probs)
    }

    #[allow(clippy::too_many_arguments)]
    fn walk(
        &mut self,
        paths: &[Vec<usize>],
        live: &[usize],
        depth: usize,
        prev: usize,
        emitted: &mut Vec<usize>,
        prob: f64,
        out: &mut BTreeMap<Vec<usize>, f64>,
    ) -> Result<()> {
        if depth == self.length {
            for (t, &p) in self.models.target[prev].iter().enumerate() {
                if p > 0.0 {
                    emitted.push(t);
                    *out.entry(emitted.clone()).or_insert(0.0) += prob * p;
                    emitted.pop();
                }
            }
            return Ok(());
        }
        let omega: Vec<usize> = live.iter().map(|&k| paths[k][depth]).collect();
        for (t, pi) in self.slice(prev, &omega)? {
            emitted.push(t);
            if omega.contains(&t) {
                let next: Vec<usize> = live
                    .iter()
                    .copied()
                    .filter(|&k| paths[k][depth] == t)
                    .collect();
                self.walk(paths, &next, depth + 1, t, emitted, prob * pi, out)?;
            } else {
                *out.entry(emitted.clone()).or_insert(0.0) += prob * pi;
            }
            emitted.pop();
        }
        Ok(())
    }

    /// Distribution of the tokens one block emits after context `ctx`.
    pub fn block_outputs(&mut self, ctx: usize) -> Result<BTreeMap<Vec<usize>, f64>> {
        if let Some(b) = self.blocks.get(&ctx) {
            return Ok(b.clone());
        }
        let v = self.models.vocab_size;
        let slots = self.paths * self.length;
        let mut digits = vec![0usize; slots];
        let mut out = BTreeMap::new();
        loop {
            let paths: Vec<Vec<usize>> = digits.chunks(self.length).map(|c| c.to_vec()).collect();
            let prob: f64 = paths
                .iter()
                .map(|path| {
                    let mut prev = ctx;
                    path.iter()
                        .map(|&t| {
                            let w = self.models.draft[prev][t];
                            prev = t;
                            w
                        })
                        .product::<f64>()
                })
                .product();
            if prob > 0.0 {
                let live: Vec<usize> = (0..self.paths).collect();
                self.walk(&paths, &live, 0, ctx, &mut Vec::new(), prob, &mut out)?;
            }
            // Next configuration in base-V counting.
            let mut k = 0;
            while k < slots {
                digits[k] += 1;
                if digits[k] < v {
                    break;
                }
                digits[k] = 0;
                k += 1;
            }
            if k == slots {
                break;
            }
        }
        self.blocks.insert(ctx, out.clone());
        Ok(out)
    }

    /// Distribution of the first `horizon` decoded tokens after `ctx`.
    pub fn decode(&mut self, ctx: usize, horizon: usize) -> Result<BTreeMap<Vec<usize>, f64>> {
        if horizon == 0 {
            return Ok(BTreeMap::from([(Vec::new(), 1.0)]));
        }
        if let Some(d) = self.decodes.get(&(ctx, horizon)) {
            return Ok(d.clone());
        }
        let mut out = BTreeMap::new();
        for (seq, prob) in self.block_outputs(ctx)? {
            if seq.len() >= horizon {
                *out.entry(seq[..horizon].to_vec()).or_insert(0.0) += prob;
            } else {
                let last = *seq.last().expect("blocks emit at least one token");
                for (tail, p2) in self.decode(last, horizon - seq.len())? {
                    let mut full = seq.clone();
                    full.extend(tail);
                    *out.entry(full).or_insert(0.0) += prob * p2;
                }
            }
        }
        self.decodes.insert((ctx, horizon), out.clone());
        Ok(out)
    }

    /// Expected tokens emitted per block after `ctx`.
    pub fn expected_block_efficiency(&mut self, ctx: usize) -> Result<f64> {
        Ok(self
            .block_outputs(ctx)?
            .iter()
            .map(|(s, p)| s.len() as f64 * p)
            .sum())
    }
}

/// Joint target distribution of the next `horizon` tokens after `ctx`.
pub fn target_joint(
    models: &SyntheticModelPair,
    ctx: usize,
    horizon: usize,
) -> BTreeMap<Vec<usize>, f64> {
    let mut out = BTreeMap::from([(Vec::new(), 1.0)]);
    for _ in 0..horizon {
        let mut next = BTreeMap::new();
        for (seq, p) in out {
            let prev = seq.last().copied().unwrap_or(ctx);
            for (t, &w) in models.target[prev].iter().enumerate() {
                if w > 0.0 {
                    let mut s = seq.clone();
                    s.push(t);
                    next.insert(s, p * w);
                }
            }
        }
        out = next;
    }
    out
}

/// L1 distance between two sparse distributions over sequences.
pub fn sequence_l1(a: &BTreeMap<Vec<usize>, f64>, b: &BTreeMap<Vec<usize>, f64>) -> f64 {
    let mut d: f64 = a
        .iter()
        .map(|(k, v)| (v - b.get(k).copied().unwrap_or(0.0)).abs())
        .sum();
    d += b
        .iter()
        .filter(|(k, _)| !a.contains_key(*k))
        .map(|(_, v)| v.abs())
        .sum::<f64>();
    d
}

/// Largest decode-versus-target L1 over all starting contexts, for the
/// first `length` tokens.
pub fn multi_step_error(
    models: &SyntheticModelPair,
    paths: usize,
    length: usize,
    method: Method,
    tau: f64,
) -> Result<f64> {
    let mut e = TreeEnumerator::new(models, paths, length, method, tau)?;
    let mut worst = 0.0f64;
    for ctx in 0..models.vocab_size {
        let decoded = e.decode(ctx, length)?;
        worst = worst.max(sequence_l1(&decoded, &target_joint(models, ctx, length)));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identical(v: usize) -> SyntheticModelPair {
        let m = SyntheticModelPair::generate(v, 1.0, 1.0, 4).unwrap();
        SyntheticModelPair::from_rows(m.target.clone(), m.target).unwrap()
    }

    #[test]
    fn identical_models_accept_whole_blocks() {
        let models = identical(3);
        let cfg = MultiStepConfig {
            paths: 2,
            length: 3,
            method: Method::Global,
            tau: 1e-3,
            blocks: 200,
            seed: 9,
        };
        let r = run_multi_step(&models, &cfg).unwrap();
        assert_eq!(r.block_efficiency, Some(4.0));
        let mut e = TreeEnumerator::new(&models, 2, 2, Method::Global, 1e-3).unwrap();
        assert!((e.expected_block_efficiency(0).unwrap() - 3.0).abs() < 1e-9);
    }

    #[test]
    fn one_path_one_token_is_single_draft() {
        let models = SyntheticModelPair::generate(3, 1.0, 0.5, 21).unwrap();
        let mut e = TreeEnumerator::new(&models, 1, 1, Method::MaxflowOpt, 1e-3).unwrap();
        for ctx in 0..3 {
            let p = &models.target[ctx];
            let q = &models.draft[ctx];
            let single: f64 = p.iter().zip(q).map(|(a, b)| a.min(*b)).sum();
            assert!((e.expected_block_efficiency(ctx).unwrap() - (1.0 + single)).abs() < 1e-9);
        }
    }

    #[test]
    fn exact_tree_verification_is_unbiased() {
        let models = SyntheticModelPair::generate(3, 1.0, 0.5, 5).unwrap();
        let err = multi_step_error(&models, 2, 2, Method::MaxflowOpt, 1e-3).unwrap();
        assert!(err < 1e-9, "{err}");
    }
}
