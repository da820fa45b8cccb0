//! Exact relaxed OTLP solutions through bipartite max-flow.
//!
//! Left nodes are tokens with source capacity `p(i)` (or `p_i`), right nodes
//! are drafted tuples with sink capacity `p_draft(ω)`, and token `i` links to
//! `ω` whenever `i ∈ set(ω)`. By default right nodes are sorted multisets
//! carrying the mass of all their orderings.

mod dinic;
mod plan;

use serde::Serialize;

pub use dinic::{FlowGraph, AUGMENT_EPS};
pub use plan::{complete_plan, SparsePlan};

use crate::dist::{
    multiset_count, multiset_mass, multisets, ordered_tuples, tuple_count, tuple_mass,
    ProblemInstance,
};
use crate::error::{Error, Result};
use crate::residuals::OuterResiduals;
use crate::subset::SubsetSolution;

/// Default bound on the number of right nodes of any network.
pub const DEFAULT_ENUMERATION_CAP: u128 = 2_000_000;

/// How right nodes represent drafted tuples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TupleMode {
    /// Sorted multisets with multinomial mass.
    #[default]
    Multiset,
    /// Every ordered `n`-tuple separately.
    Ordered,
}

#[derive(Debug, Clone, Copy)]
pub struct FlowOptions {
    pub mode: TupleMode,
    pub enumeration_cap: u128,
}

impl Default for FlowOptions {
    fn default() -> Self {
        Self {
            mode: TupleMode::Multiset,
            enumeration_cap: DEFAULT_ENUMERATION_CAP,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FlowNetwork {
    pub left: Vec<usize>,
    pub left_cap: Vec<f64>,
    pub right: Vec<Vec<usize>>,
    pub right_cap: Vec<f64>,
    /// For each right node, the indices into `left` it is joined to.
    pub adjacency: Vec<Vec<usize>>,
    pub mode: TupleMode,
}

#[derive(Debug, Clone)]
pub struct FlowSolution {
    pub value: f64,
    /// Flow on each left-right edge, aligned with `adjacency`.
    pub edge_flows: Vec<Vec<f64>>,
    pub source_flows: Vec<f64>,
    pub sink_flows: Vec<f64>,
}

impl FlowNetwork {
    pub fn source_capacity(&self) -> f64 {
        self.left_cap.iter().sum()
    }

    pub fn sink_capacity(&self) -> f64 {
        self.right_cap.iter().sum()
    }

    /// Relaxed plan entries read off the left-right edge flows.
    pub fn plan(&self, solution: &FlowSolution) -> SparsePlan {
        let mut plan = SparsePlan::new(self.mode);
        for (r, edges) in self.adjacency.iter().enumerate() {
            for (e, &l) in edges.iter().enumerate() {
                let f = solution.edge_flows[r][e];
                if f > 0.0 {
                    plan.add(self.left[l], &self.right[r], f);
                }
            }
        }
        plan
    }
}

pub fn max_flow(network: &FlowNetwork) -> FlowSolution {
    let nl = network.left.len();
    let nr = network.right.len();
    let s = 0;
    let t = 1 + nl + nr;
    let unbounded = 1.0 + network.sink_capacity();
    let mut g = FlowGraph::new(t + 1);
    let src: Vec<usize> = (0..nl)
        .map(|l| g.add_edge(s, 1 + l, network.left_cap[l]))
        .collect();
    let mut mid = Vec::with_capacity(nr);
    let mut snk = Vec::with_capacity(nr);
    for r in 0..nr {
        mid.push(
            network.adjacency[r]
                .iter()
                .map(|&l| g.add_edge(1 + l, 1 + nl + r, unbounded))
                .collect::<Vec<_>>(),
        );
        snk.push(g.add_edge(1 + nl + r, t, network.right_cap[r]));
    }
    let value = g.max_flow(s, t);
    FlowSolution {
        value,
        edge_flows: mid
            .iter()
            .map(|es| es.iter().map(|&e| g.flow(e)).collect())
            .collect(),
        source_flows: src.iter().map(|&e| g.flow(e)).collect(),
        sink_flows: snk.iter().map(|&e| g.flow(e)).collect(),
    }
}

fn check_cap(what: &'static str, needed: u128, cap: u128) -> Result<()> {
    if needed > cap {
        return Err(Error::TooLarge { what, needed, cap });
    }
    Ok(())
}

fn count(k: usize, n: usize, mode: TupleMode) -> u128 {
    match mode {
        TupleMode::Multiset => multiset_count(k, n),
        TupleMode::Ordered => tuple_count(k, n),
    }
}

/// All right nodes over `tokens` (ascending) with their draft masses.
pub(crate) fn enumerate_tuples(
    q: &[f64],
    tokens: &[usize],
    n: usize,
    mode: TupleMode,
) -> Vec<(Vec<usize>, f64)> {
    match mode {
        TupleMode::Multiset => multisets(tokens, n)
            .map(|m| {
                let w = multiset_mass(q, &m);
                (m, w)
            })
            .collect(),
        TupleMode::Ordered => ordered_tuples(tokens, n)
            .into_iter()
            .map(|t| {
                let w = tuple_mass(q, &t);
                (t, w)
            })
            .collect(),
    }
}

fn assemble(
    left: Vec<usize>,
    left_cap: Vec<f64>,
    tuples: Vec<(Vec<usize>, f64)>,
    mode: TupleMode,
) -> FlowNetwork {
    let mut right = Vec::with_capacity(tuples.len());
    let mut right_cap = Vec::with_capacity(tuples.len());
    let mut adjacency = Vec::with_capacity(tuples.len());
    for (omega, w) in tuples {
        let edges: Vec<usize> = left
            .iter()
            .enumerate()
            .filter(|(_, t)| omega.contains(t))
            .map(|(l, _)| l)
            .collect();
        adjacency.push(edges);
        right.push(omega);
        right_cap.push(w);
    }
    FlowNetwork {
        left,
        left_cap,
        right,
        right_cap,
        adjacency,
        mode,
    }
}

/// The full network over all active tokens. Its max-flow value is `α*`.
pub fn build_full_network(instance: &ProblemInstance, opts: FlowOptions) -> Result<FlowNetwork> {
    let active = instance.active();
    let n = instance.n();
    check_cap(
        "full network",
        count(active.len(), n, opts.mode),
        opts.enumeration_cap,
    )?;
    let p = instance.target();
    let left = active.to_vec();
    let left_cap = left.iter().map(|&i| p[i]).collect();
    let tuples = enumerate_tuples(instance.draft(), active, n, opts.mode);
    Ok(assemble(left, left_cap, tuples, opts.mode))
}

/// The outer restriction: tokens outside `H*` with capacities `p_i`, tuples
/// not contained in `H*`.
pub fn build_outer_network(
    instance: &ProblemInstance,
    subset: &SubsetSolution,
    residuals: &OuterResiduals,
    opts: FlowOptions,
) -> Result<FlowNetwork> {
    let active = instance.active();
    let n = instance.n();
    let h = subset.h_star.len();
    let needed = count(active.len(), n, opts.mode) - count(h, n, opts.mode);
    check_cap("outer network", needed, opts.enumeration_cap)?;
    let left: Vec<usize> = active
        .iter()
        .copied()
        .filter(|&i| !residuals.in_h_star[i])
        .collect();
    let left_cap = left.iter().map(|&i| residuals.lower[i]).collect();
    let tuples = enumerate_tuples(instance.draft(), active, n, opts.mode)
        .into_iter()
        .filter(|(omega, _)| omega.iter().any(|&t| !residuals.in_h_star[t]))
        .collect();
    Ok(assemble(left, left_cap, tuples, opts.mode))
}

/// The inner restriction: `H*` with capacities `p(i)` against `(H*)^n`.
pub fn build_inner_network(
    instance: &ProblemInstance,
    subset: &SubsetSolution,
    opts: FlowOptions,
) -> Result<FlowNetwork> {
    let n = instance.n();
    let mut left = subset.h_star.clone();
    left.sort_unstable();
    check_cap(
        "inner network",
        count(left.len(), n, opts.mode),
        opts.enumeration_cap,
    )?;
    let p = instance.target();
    let left_cap = left.iter().map(|&i| p[i]).collect();
    let tuples = enumerate_tuples(instance.draft(), &left, n, opts.mode);
    Ok(assemble(left, left_cap, tuples, opts.mode))
}

/// Optimal relaxed plan `S` from the full network.
pub fn solve_relaxed_exact(instance: &ProblemInstance, opts: FlowOptions) -> Result<SparsePlan> {
    let network = build_full_network(instance, opts)?;
    let solution = max_flow(&network);
    Ok(network.plan(&solution))
}

/// Which half of the complementary-slackness split a tuple belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum System {
    Outer,
    Inner,
}

/// One restricted max-flow solve.
#[derive(Debug, Clone)]
pub struct RestrictedSolve {
    pub system: System,
    pub plan: SparsePlan,
    pub value: f64,
    /// Source capacity left unsaturated; zero up to roundoff when the
    /// residual targets are feasible.
    pub source_deficit: f64,
    /// Sink capacity left unsaturated. Only meaningful for the outer system.
    pub sink_deficit: f64,
}

fn restricted(system: System, network: &FlowNetwork) -> RestrictedSolve {
    let solution = max_flow(network);
    let source_deficit = network.source_capacity() - solution.value;
    let sink_deficit = network.sink_capacity() - solution.value;
    if source_deficit > 1e-9 {
        log::warn!("{system:?} network leaves {source_deficit:e} of source capacity unsaturated");
    }
    RestrictedSolve {
        system,
        plan: network.plan(&solution),
        value: solution.value,
        source_deficit,
        sink_deficit,
    }
}

pub fn solve_outer_exact(
    instance: &ProblemInstance,
    subset: &SubsetSolution,
    residuals: &OuterResiduals,
    opts: FlowOptions,
) -> Result<RestrictedSolve> {
    let network = build_outer_network(instance, subset, residuals, opts)?;
    Ok(restricted(System::Outer, &network))
}

pub fn solve_inner_exact(
    instance: &ProblemInstance,
    subset: &SubsetSolution,
    opts: FlowOptions,
) -> Result<RestrictedSolve> {
    let network = build_inner_network(instance, subset, opts)?;
    Ok(restricted(System::Inner, &network))
}

/// Solves only the system that `omega` falls in: the outer one when some
/// token of `omega` lies outside `H*`, the inner one otherwise.
pub fn solve_optimized_exact(
    instance: &ProblemInstance,
    subset: &SubsetSolution,
    residuals: &OuterResiduals,
    omega: &[usize],
    opts: FlowOptions,
) -> Result<RestrictedSolve> {
    instance.check_tuple(omega)?;
    if omega.iter().all(|&t| residuals.in_h_star[t]) {
        solve_inner_exact(instance, subset, opts)
    } else {
        solve_outer_exact(instance, subset, residuals, opts)
    }
}
