//! Global resolution and transport slices `π(·|ω)`.

use std::str::FromStr;
use std::sync::OnceLock;
use std::time::Instant;

use serde::Serialize;

use crate::convex::{
    binomial, mul_exp_minus_one, solve_system, EarlyTermination, SolveOptions, SystemSolve,
};
use crate::dist::{multiset_count, multiset_mass, multisets, token_set, ProblemInstance};
use crate::error::{Error, Result};
use crate::flow::{
    complete_plan, solve_inner_exact, solve_outer_exact, solve_relaxed_exact, FlowOptions,
    RestrictedSolve, SparsePlan, System, TupleMode, DEFAULT_ENUMERATION_CAP,
};
use crate::residuals::{solve_outer_residuals, OuterResiduals};
use crate::subset::{solve_h_star, SubsetSolution};

/// Residual rows with less total mass than this are skipped.
pub const RESIDUAL_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Global,
    MaxflowOpt,
    MaxflowFull,
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global" => Ok(Self::Global),
            "maxflow-opt" | "maxflow_opt" => Ok(Self::MaxflowOpt),
            "maxflow" | "maxflow-full" | "maxflow_full" => Ok(Self::MaxflowFull),
            other => Err(Error::InvalidInput(format!("unknown method {other:?}"))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Global => "global",
            Self::MaxflowOpt => "maxflow-opt",
            Self::MaxflowFull => "maxflow",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SliceMethod {
    Global,
    MaxflowOpt,
    MaxflowFull,
    FallbackP,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct SliceMeta {
    pub system: Option<System>,
    pub grad_l1: Option<f64>,
    pub tunable_error: Option<f64>,
    pub tau: f64,
    pub fallback_reason: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TransportSlice {
    pub omega: Vec<usize>,
    /// `(token, π(token|ω))`, ascending by token, positive entries only.
    pub probs: Vec<(usize, f64)>,
    pub method: SliceMethod,
    pub meta: SliceMeta,
}

impl TransportSlice {
    pub fn prob(&self, token: usize) -> f64 {
        self.probs
            .binary_search_by_key(&token, |e| e.0)
            .map_or(0.0, |k| self.probs[k].1)
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().map(|e| e.1).sum()
    }

    pub fn is_fallback(&self) -> bool {
        self.method == SliceMethod::FallbackP
    }
}

/// Work shared by every `ω` at one decoding position.
#[derive(Debug, Clone, Serialize)]
pub struct Precomputation {
    pub subset: SubsetSolution,
    pub residuals: OuterResiduals,
    pub outer: std::result::Result<SystemSolve, EarlyTermination>,
    pub inner: std::result::Result<SystemSolve, EarlyTermination>,
    #[serde(skip)]
    outer_alpha: Vec<f64>,
    #[serde(skip)]
    inner_alpha: Vec<f64>,
    pub tau: f64,
}

/// Runs `H*`, the outer residuals and both convex solves. Solver failures
/// are recorded, not raised.
pub fn precompute(instance: &ProblemInstance, opts: &SolveOptions) -> Result<Precomputation> {
    let subset = solve_h_star(instance);
    let residuals = solve_outer_residuals(instance, &subset)?;
    let outer = solve_system(instance, &subset, &residuals, System::Outer, opts);
    let inner = solve_system(instance, &subset, &residuals, System::Inner, opts);
    let vocab = instance.vocab_size();
    let dense = |s: &std::result::Result<SystemSolve, EarlyTermination>| match s {
        Ok(s) => s.dense_alphas(vocab),
        Err(_) => Vec::new(),
    };
    if let Err(e) = &outer {
        log::debug!("outer solve terminated early: {e}");
    }
    if let Err(e) = &inner {
        log::debug!("inner solve terminated early: {e}");
    }
    Ok(Precomputation {
        outer_alpha: dense(&outer),
        inner_alpha: dense(&inner),
        subset,
        residuals,
        outer,
        inner,
        tau: opts.tau,
    })
}

impl Precomputation {
    pub fn alpha_star(&self) -> f64 {
        self.subset.alpha_star
    }

    pub fn in_h_star(&self, token: usize) -> bool {
        self.residuals.in_h_star[token]
    }

    /// Whether `ω` is served by the inner system.
    pub fn is_inner(&self, omega: &[usize]) -> bool {
        omega.iter().all(|&t| self.in_h_star(t))
    }
}

/// Spreads `leftover` over the outer residual row, or back onto `probs` when
/// that row is empty. `probs` is indexed by token.
fn spread_leftover(residuals: &OuterResiduals, probs: &mut Vec<(usize, f64)>, leftover: f64) {
    if leftover <= 0.0 {
        return;
    }
    if residuals.residual_total > RESIDUAL_FLOOR {
        for i in residuals.outer_tokens() {
            let r = residuals.residual[i];
            if r > 0.0 {
                probs.push((i, leftover * r / residuals.residual_total));
            }
        }
    } else {
        let mass: f64 = probs.iter().map(|e| e.1).sum();
        if mass > 0.0 {
            let scale = (mass + leftover) / mass;
            probs.iter_mut().for_each(|e| e.1 *= scale);
        }
    }
}

fn tidy(mut probs: Vec<(usize, f64)>) -> Vec<(usize, f64)> {
    probs.sort_by_key(|e| e.0);
    let mut out: Vec<(usize, f64)> = Vec::with_capacity(probs.len());
    for (i, m) in probs {
        match out.last_mut() {
            Some(last) if last.0 == i => last.1 += m,
            _ => out.push((i, m)),
        }
    }
    out.retain(|e| e.1 > 0.0);
    out
}

fn fallback(instance: &ProblemInstance, omega: &[usize], meta: SliceMeta) -> TransportSlice {
    let probs = instance
        .target()
        .iter()
        .enumerate()
        .filter(|(_, &m)| m > 0.0)
        .map(|(i, &m)| (i, m))
        .collect();
    TransportSlice {
        omega: omega.to_vec(),
        probs,
        method: SliceMethod::FallbackP,
        meta,
    }
}

/// The global-resolution slice for one drafted tuple.
pub fn ot_slice(
    instance: &ProblemInstance,
    pre: &Precomputation,
    omega: &[usize],
) -> Result<TransportSlice> {
    instance.check_tuple(omega)?;
    let set = token_set(omega);
    let inner = pre.is_inner(omega);
    let (system, solve, alpha) = if inner {
        (System::Inner, &pre.inner, &pre.inner_alpha)
    } else {
        (System::Outer, &pre.outer, &pre.outer_alpha)
    };
    let mut meta = SliceMeta {
        system: Some(system),
        tau: pre.tau,
        ..Default::default()
    };
    let solve = match solve {
        Ok(s) => s,
        Err(e) => {
            meta.fallback_reason = Some(e.to_string());
            return Ok(fallback(instance, omega, meta));
        }
    };
    meta.grad_l1 = Some(solve.result.grad_l1);
    meta.tunable_error = Some(solve.truncation.tunable_error);

    let probs = if inner {
        let m = set.iter().map(|&i| alpha[i]).fold(0.0, f64::max);
        let w: Vec<f64> = set.iter().map(|&i| (alpha[i] - m).exp()).collect();
        let denom = (-m).exp() + w.iter().sum::<f64>();
        let mut probs: Vec<(usize, f64)> = set
            .iter()
            .zip(&w)
            .map(|(&i, &wi)| (i, wi / denom))
            .collect();
        spread_leftover(&pre.residuals, &mut probs, (-m).exp() / denom);
        probs
    } else {
        let free: Vec<usize> = set.into_iter().filter(|&i| !pre.in_h_star(i)).collect();
        let m = free
            .iter()
            .map(|&i| alpha[i])
            .fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = free.iter().map(|&i| (alpha[i] - m).exp()).collect();
        let denom: f64 = w.iter().sum();
        free.iter()
            .zip(&w)
            .map(|(&i, &wi)| (i, wi / denom))
            .collect()
    };
    Ok(TransportSlice {
        omega: omega.to_vec(),
        probs: tidy(probs),
        method: SliceMethod::Global,
        meta,
    })
}

/// Inverse-CDF draw from a slice in ascending token order. Returns the token
/// and whether it is one of the drafts.
pub fn draw_from_slice(slice: &TransportSlice, u: f64) -> (usize, bool) {
    let mut acc = 0.0;
    let mut token = None;
    for &(i, m) in &slice.probs {
        acc += m;
        if acc > u {
            token = Some(i);
            break;
        }
    }
    let token = token.unwrap_or_else(|| slice.probs.last().map_or(slice.omega[0], |e| e.0));
    (token, slice.omega.contains(&token))
}

pub fn verify_token(
    instance: &ProblemInstance,
    pre: &Precomputation,
    omega: &[usize],
    u: f64,
) -> Result<(usize, bool)> {
    if !(0.0..1.0).contains(&u) {
        return Err(Error::InvalidInput(format!(
            "uniform draw {u} outside [0, 1)"
        )));
    }
    let slice = ot_slice(instance, pre, omega)?;
    Ok(draw_from_slice(&slice, u))
}

/// Materializes the global-resolution plan `C` over all multisets. Fails if
/// any slice would fall back to target sampling.
pub fn full_plan_global(instance: &ProblemInstance, pre: &Precomputation) -> Result<SparsePlan> {
    let active = instance.active();
    let n = instance.n();
    let needed = multiset_count(active.len(), n);
    if needed > DEFAULT_ENUMERATION_CAP {
        return Err(Error::TooLarge {
            what: "global plan",
            needed,
            cap: DEFAULT_ENUMERATION_CAP,
        });
    }
    let q = instance.draft();
    let mut plan = SparsePlan::new(TupleMode::Multiset);
    for omega in multisets(active, n) {
        let slice = ot_slice(instance, pre, &omega)?;
        if slice.is_fallback() {
            return Err(Error::SolveFailed(
                slice.meta.fallback_reason.unwrap_or_default(),
            ));
        }
        let mass = multiset_mass(q, &omega);
        for (i, m) in slice.probs {
            plan.add(i, &omega, m * mass);
        }
    }
    Ok(plan)
}

/// Acceptance rate of the global-resolution plan, in closed form.
///
/// Outer slices only put mass on drafted tokens. An inner slice accepts with
/// probability `S/(1+S)` where `S = Σ_{i∈set(ω)} e^{α_i}`, and `α_i = 0` for
/// `i ∈ H*` outside the truncation; the tuple mass is grouped by the drafted
/// truncation tokens and the number of distinct tokens outside it.
pub fn global_acceptance(instance: &ProblemInstance, pre: &Precomputation) -> Result<f64> {
    let q = instance.draft();
    let n = instance.n();
    let h_mass = pre.subset.draft_mass(q).min(1.0);
    let inner_mass = h_mass.powi(n as i32);
    let failed = |e: &EarlyTermination| Error::SolveFailed(e.to_string());
    if inner_mass < 1.0 {
        pre.outer.as_ref().map_err(failed)?;
    }
    if inner_mass == 0.0 {
        return Ok(1.0);
    }
    let solve = pre.inner.as_ref().map_err(failed)?;
    if pre.residuals.residual_total <= RESIDUAL_FLOOR {
        return Ok(1.0);
    }
    let t = &solve.table.tokens;
    let weight: Vec<f64> = solve.result.alphas.iter().map(|a| a.exp()).collect();

    // rest[m]: EGF of tuples over H*∖T using exactly m distinct tokens.
    let mut unity = vec![0.0; n + 1];
    unity[0] = 1.0;
    let mut rest = vec![vec![0.0; n + 1]; n + 1];
    rest[0] = unity.clone();
    for &b in pre
        .subset
        .h_star
        .iter()
        .filter(|b| t.binary_search(b).is_err())
    {
        for m in (1..=n).rev() {
            let add = mul_exp_minus_one(&rest[m - 1], q[b], n);
            rest[m].iter_mut().zip(add).for_each(|(r, a)| *r += a);
        }
    }
    let fact: Vec<f64> = (0..=n)
        .map(|k| (1..=k).map(|j| j as f64).product())
        .collect();

    let mut total = 0.0;
    let mut stack: Vec<(usize, usize, f64, Vec<f64>)> = vec![(0, 0, 0.0, unity)];
    while let Some((start, size, s, poly)) = stack.pop() {
        for (m, r) in rest.iter().enumerate().take(n - size + 1) {
            let c: f64 = (size..=n - m)
                .map(|k| binomial(n, k) * fact[k] * poly[k] * fact[n - k] * r[n - k])
                .sum();
            let s = s + m as f64;
            total += c * s / (1.0 + s);
        }
        if size < n {
            for k in start..t.len() {
                let next = mul_exp_minus_one(&poly, q[t[k]], n);
                stack.push((k + 1, size + 1, s + weight[k], next));
            }
        }
    }
    Ok(1.0 - inner_mass + total)
}

/// Exact slices from max-flow, solving each network at most once.
#[derive(Debug)]
pub struct ExactSlicer {
    pub subset: SubsetSolution,
    pub residuals: OuterResiduals,
    opts: FlowOptions,
    full: bool,
    outer: OnceLock<Result<RestrictedSolve>>,
    inner: OnceLock<Result<RestrictedSolve>>,
    completed: OnceLock<Result<SparsePlan>>,
}

impl ExactSlicer {
    pub fn new(instance: &ProblemInstance, method: Method, opts: FlowOptions) -> Result<Self> {
        if method == Method::Global {
            return Err(Error::InvalidInput(
                "global resolution is not an exact method".into(),
            ));
        }
        let subset = solve_h_star(instance);
        let residuals = solve_outer_residuals(instance, &subset)?;
        Ok(Self {
            subset,
            residuals,
            opts,
            full: method == Method::MaxflowFull,
            outer: OnceLock::new(),
            inner: OnceLock::new(),
            completed: OnceLock::new(),
        })
    }

    fn restricted(&self, instance: &ProblemInstance, system: System) -> Result<&RestrictedSolve> {
        let cell = match system {
            System::Outer => &self.outer,
            System::Inner => &self.inner,
        };
        let solved = cell.get_or_init(|| match system {
            System::Outer => solve_outer_exact(instance, &self.subset, &self.residuals, self.opts),
            System::Inner => solve_inner_exact(instance, &self.subset, self.opts),
        });
        solved.as_ref().map_err(clone_error)
    }

    /// The restricted solve serving `omega`, solving it on first use.
    pub fn restricted_for(
        &self,
        instance: &ProblemInstance,
        omega: &[usize],
    ) -> Result<&RestrictedSolve> {
        let inner = omega.iter().all(|&t| self.residuals.in_h_star[t]);
        self.restricted(instance, if inner { System::Inner } else { System::Outer })
    }

    fn completed(&self, instance: &ProblemInstance) -> Result<&SparsePlan> {
        self.completed
            .get_or_init(|| {
                let relaxed = solve_relaxed_exact(instance, self.opts)?;
                complete_plan(instance, &relaxed)
            })
            .as_ref()
            .map_err(clone_error)
    }

    pub fn slice(&self, instance: &ProblemInstance, omega: &[usize]) -> Result<TransportSlice> {
        instance.check_tuple(omega)?;
        let q = instance.draft();
        let mass = match self.opts.mode {
            TupleMode::Multiset => multiset_mass(q, &sorted(omega)),
            TupleMode::Ordered => crate::dist::tuple_mass(q, omega),
        };
        let mut meta = SliceMeta::default();
        let (probs, method) = if self.full {
            let plan = self.completed(instance)?;
            let probs = plan
                .column(omega)
                .into_iter()
                .map(|(i, m)| (i, m / mass))
                .collect();
            (probs, SliceMethod::MaxflowFull)
        } else {
            let solve = self.restricted_for(instance, omega)?;
            meta.system = Some(solve.system);
            let mut probs: Vec<(usize, f64)> = solve
                .plan
                .column(omega)
                .into_iter()
                .map(|(i, m)| (i, m / mass))
                .collect();
            if solve.system == System::Inner {
                let used: f64 = probs.iter().map(|e| e.1).sum();
                spread_leftover(&self.residuals, &mut probs, (1.0 - used).max(0.0));
            }
            (probs, SliceMethod::MaxflowOpt)
        };
        Ok(TransportSlice {
            omega: omega.to_vec(),
            probs: tidy(probs),
            method,
            meta,
        })
    }
}

fn sorted(omega: &[usize]) -> Vec<usize> {
    let mut v = omega.to_vec();
    v.sort_unstable();
    v
}

fn clone_error(e: &Error) -> Error {
    match e {
        Error::TooLarge { what, needed, cap } => Error::TooLarge {
            what,
            needed: *needed,
            cap: *cap,
        },
        other => Error::Internal(other.to_string()),
    }
}

/// A verifier for one position under any method.
#[derive(Debug)]
pub enum Verifier {
    Global(Box<Precomputation>),
    Exact(Box<ExactSlicer>),
}

impl Verifier {
    pub fn new(instance: &ProblemInstance, method: Method, opts: &SolveOptions) -> Result<Self> {
        Ok(match method {
            Method::Global => Self::Global(Box::new(precompute(instance, opts)?)),
            _ => Self::Exact(Box::new(ExactSlicer::new(
                instance,
                method,
                FlowOptions::default(),
            )?)),
        })
    }

    pub fn subset(&self) -> &SubsetSolution {
        match self {
            Self::Global(p) => &p.subset,
            Self::Exact(e) => &e.subset,
        }
    }

    pub fn slice(&self, instance: &ProblemInstance, omega: &[usize]) -> Result<TransportSlice> {
        match self {
            Self::Global(p) => ot_slice(instance, p, omega),
            Self::Exact(e) => e.slice(instance, omega),
        }
    }

    /// Verifies one drafted tuple. Returns the slice, the emitted token and
    /// whether it was accepted.
    pub fn verify(
        &self,
        instance: &ProblemInstance,
        omega: &[usize],
        u: f64,
    ) -> Result<(TransportSlice, usize, bool)> {
        let slice = self.slice(instance, omega)?;
        let (token, accepted) = draw_from_slice(&slice, u);
        Ok((slice, token, accepted))
    }
}

/// Wall-clock seconds spent in `f`.
pub fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed().as_secs_f64())
}
