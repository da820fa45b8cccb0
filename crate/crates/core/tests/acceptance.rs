//! Acceptance suite. Prints one line per criterion and exits non-zero if a
//! gating criterion fails. Criterion 9 is reported but never gates.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use multidraft::convex::{
    eval_inner, eval_outer, pie_coefficients, select_truncation, SolveOptions,
};
use multidraft::dist::top_k_truncate;
use multidraft::flow::{
    build_full_network, complete_plan, max_flow, solve_inner_exact, solve_outer_exact,
    solve_relaxed_exact, FlowOptions, SparsePlan, System,
};
use multidraft::harness::synthetic::{random_instance, zipf_instance};
use multidraft::harness::{multi_step_error, run_single_step, SyntheticModelPair};
use multidraft::oracle::{
    beta_objective, brute_force_alpha, canonical_beta, validate_plan, PlanKind,
};
use multidraft::residuals::{check_outer_feasibility, FeasibilityScope};
use multidraft::subset::alpha_single_draft;
use multidraft::transport::{full_plan_global, ot_slice, precompute, Method};
use multidraft::{solve_h_star, solve_outer_residuals, ProblemInstance};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// Seeded random instances; a third of them have zeroed entries.
fn instances(
    seed: u64,
    count: usize,
    vocab: std::ops::RangeInclusive<usize>,
    ns: &[usize],
) -> Vec<ProblemInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|k| {
            let v = rng.random_range(vocab.clone());
            let n = ns[k % ns.len()];
            let zp = if k % 3 == 0 { 0.3 } else { 0.0 };
            random_instance(&mut rng, v, n, 1e-3, zp)
        })
        .collect()
}

fn flow_set() -> Vec<ProblemInstance> {
    instances(2, 200, 1..=6, &[1, 2, 3])
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let set = instances(1, 500, 1..=8, &[1, 2, 3, 4]);
    let mut worst = 0.0f64;
    let mut worst_single = 0.0f64;
    for inst in &set {
        let sol = solve_h_star(inst);
        let (brute, _) = brute_force_alpha(inst).expect("small instance");
        worst = worst.max((sol.alpha_star - brute).abs());
        if inst.n() == 1 {
            let d = (sol.alpha_star - alpha_single_draft(inst.target(), inst.draft())).abs();
            worst_single = worst_single.max(d);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-12 && worst_single <= 1e-12 && secs < 10.0,
        format!("500 instances, max |prefix - brute| = {worst:.2e}, n=1 vs sum-min {worst_single:.2e}, {secs:.2}s"),
    )
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let (mut value_gap, mut row_l1, mut obj_gap, mut col, mut support) =
        (0.0f64, 0.0f64, 0.0f64, 0.0f64, true);
    for inst in &flow_set() {
        let alpha = solve_h_star(inst).alpha_star;
        let net = build_full_network(inst, FlowOptions::default()).unwrap();
        value_gap = value_gap.max((max_flow(&net).value - alpha).abs());
        let relaxed = solve_relaxed_exact(inst, FlowOptions::default()).unwrap();
        let plan = complete_plan(inst, &relaxed).unwrap();
        let r = validate_plan(
            inst,
            &plan,
            PlanKind::Otlp,
            Some(&solve_h_star(inst).h_star),
        );
        row_l1 = row_l1.max(r.total_row_l1);
        obj_gap = obj_gap.max((r.objective - alpha).abs());
        col = col.max(r.max_col_violation);
        support &= r.support_ok;
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        value_gap <= 1e-9 && row_l1 < 1e-9 && obj_gap <= 1e-9 && col <= 1e-9 && support && secs < 60.0,
        format!(
            "200 instances, flow gap {value_gap:.2e}, row L1 {row_l1:.2e}, objective gap {obj_gap:.2e}, column {col:.2e}, {secs:.2}s"
        ),
    )
}

fn criterion_3() -> Outcome {
    let (mut outer_gap, mut inner_gap, mut row_l1, mut obj_gap, mut col, mut support) =
        (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64, true);
    for inst in &flow_set() {
        let sub = solve_h_star(inst);
        let res = solve_outer_residuals(inst, &sub).unwrap();
        let opts = FlowOptions::default();
        let outer = solve_outer_exact(inst, &sub, &res, opts).unwrap();
        let inner = solve_inner_exact(inst, &sub, opts).unwrap();
        let want_outer: f64 = res.outer_tokens().map(|i| res.lower[i]).sum();
        let want_inner: f64 = sub.h_star.iter().map(|&i| inst.target()[i]).sum();
        outer_gap = outer_gap.max((outer.value - want_outer).abs());
        inner_gap = inner_gap.max((inner.value - want_inner).abs());
        let mut combined = SparsePlan::new(opts.mode);
        for (i, w, m) in outer.plan.iter().chain(inner.plan.iter()) {
            combined.add(i, w, m);
        }
        let plan = complete_plan(inst, &combined).unwrap();
        let r = validate_plan(inst, &plan, PlanKind::Otlp, Some(&sub.h_star));
        row_l1 = row_l1.max(r.total_row_l1);
        obj_gap = obj_gap.max((r.objective - sub.alpha_star).abs());
        col = col.max(r.max_col_violation);
        support &= r.support_ok;
    }
    outcome(
        outer_gap <= 1e-9 && inner_gap <= 1e-9 && row_l1 < 1e-9 && obj_gap <= 1e-9 && col <= 1e-9 && support,
        format!(
            "outer saturation gap {outer_gap:.2e}, inner {inner_gap:.2e}; combined plan row L1 {row_l1:.2e}, objective gap {obj_gap:.2e}"
        ),
    )
}

fn criterion_4() -> Outcome {
    let set = instances(4, 500, 1..=13, &[1, 2, 3, 4]);
    let mut failures = 0;
    let mut exhaustive = 0;
    for inst in &set {
        let sub = solve_h_star(inst);
        let res = solve_outer_residuals(inst, &sub).unwrap();
        let outer = res.outer_tokens().count();
        let scope = if outer <= 12 {
            exhaustive += 1;
            FeasibilityScope::Exhaustive
        } else {
            FeasibilityScope::Auto
        };
        if check_outer_feasibility(inst, &res, scope, 1e-10).is_err() {
            failures += 1;
        }
    }
    outcome(
        failures == 0,
        format!(
            "500 instances ({exhaustive} exhaustive), {failures} violations at tolerance 1e-10"
        ),
    )
}

struct GlobalStats {
    solves: usize,
    failures: usize,
    worst_l1: f64,
    worst_gap: f64,
    worst_col: f64,
    worst_grad: f64,
    secs: f64,
}

fn global_runs() -> GlobalStats {
    let start = Instant::now();
    let mut s = GlobalStats {
        solves: 0,
        failures: 0,
        worst_l1: 0.0,
        worst_gap: 0.0,
        worst_col: 0.0,
        worst_grad: 0.0,
        secs: 0.0,
    };
    for base in &instances(5, 100, 2..=6, &[1, 2, 3]) {
        for tau in [1e-2, 1e-3, 1e-4] {
            s.solves += 1;
            let inst = base.with_tau(tau).unwrap();
            let pre = precompute(&inst, &SolveOptions::new(tau)).unwrap();
            for solve in [&pre.outer, &pre.inner].into_iter().flatten() {
                s.worst_grad = s.worst_grad.max(solve.result.grad_l1 / tau);
            }
            let Ok(plan) = full_plan_global(&inst, &pre) else {
                s.failures += 1;
                continue;
            };
            let r = validate_plan(&inst, &plan, PlanKind::Otlp, Some(&pre.subset.h_star));
            s.worst_l1 = s.worst_l1.max(r.total_row_l1 / tau);
            s.worst_gap = s.worst_gap.max((pre.subset.alpha_star - r.objective) / tau);
            s.worst_col = s.worst_col.max(r.max_col_violation);
        }
    }
    s.secs = start.elapsed().as_secs_f64();
    s
}

fn criterion_5(s: &GlobalStats) -> Outcome {
    outcome(
        s.failures == 0 && s.worst_l1 <= 15.0 && s.worst_gap <= 10.0 && s.worst_col <= 1e-12 && s.secs < 120.0,
        format!(
            "{} solves, {} early terminations, worst L1 {:.2}tau, worst acceptance gap {:.2}tau, draft marginal {:.2e}, {:.2}s",
            s.solves, s.failures, s.worst_l1, s.worst_gap, s.worst_col, s.secs
        ),
    )
}

/// Central-difference error relative to the larger of `‖∇f‖` and the norm
/// of the softmax part `∇f + t`. The latter keeps points where the gradient
/// cancels to zero from dividing roundoff by roundoff.
type ValueGrad<'a> = dyn Fn(&[f64]) -> (f64, Vec<f64>) + 'a;

fn finite_difference_error(f: &ValueGrad, x: &[f64], targets: &[f64]) -> f64 {
    let (_, g) = f(x);
    let h = 1e-6;
    let mut num = 0.0;
    for k in 0..x.len() {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[k] += h;
        xm[k] -= h;
        let fd = (f(&xp).0 - f(&xm).0) / (2.0 * h);
        num += (fd - g[k]).powi(2);
    }
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|a| a * a).sum::<f64>().sqrt();
    let scale =
        norm(&mut g.iter().copied()).max(norm(&mut g.iter().zip(targets).map(|(a, b)| a + b)));
    num.sqrt() / scale.max(1e-12)
}

fn criterion_6(s: &GlobalStats) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut points = [0usize; 2];
    let mut worst = [0.0f64; 2];
    let mut attempts = 0;
    while points.iter().any(|&c| c < 50) && attempts < 10_000 {
        attempts += 1;
        let v = rng.random_range(3..=8);
        let n = rng.random_range(1..=3);
        let inst = random_instance(&mut rng, v, n, 1e-6, 0.0);
        let sub = solve_h_star(&inst);
        let res = solve_outer_residuals(&inst, &sub).unwrap();
        for (k, kind) in [System::Outer, System::Inner].into_iter().enumerate() {
            if points[k] >= 50 {
                continue;
            }
            let Ok(t) = select_truncation(&inst, &sub, kind, 1e-6, 50) else {
                continue;
            };
            if t.tokens.is_empty() {
                continue;
            }
            let table = pie_coefficients(&inst, &sub, &t);
            let x: Vec<f64> = (0..table.tokens.len())
                .map(|_| rng.random_range(-3.0..3.0))
                .collect();
            let f = |a: &[f64]| match kind {
                System::Outer => eval_outer(&res, &table, a),
                System::Inner => eval_inner(&inst, &table, a),
            };
            let targets: Vec<f64> = table
                .tokens
                .iter()
                .map(|&i| match kind {
                    System::Outer => res.lower[i],
                    System::Inner => inst.target()[i],
                })
                .collect();
            worst[k] = worst[k].max(finite_difference_error(&f, &x, &targets));
            points[k] += 1;
        }
    }
    outcome(
        points == [50, 50] && worst[0] < 1e-5 && worst[1] < 1e-5 && s.worst_grad <= 5.0,
        format!(
            "relative gradient error outer {:.2e}, inner {:.2e} over {:?} points; worst converged grad_l1 {:.2}tau",
            worst[0], worst[1], points, s.worst_grad
        ),
    )
}

fn criterion_7() -> Outcome {
    let tau = 1e-4;
    let inst =
        ProblemInstance::from_vecs(vec![0.5, 0.3, 0.2], vec![0.2, 0.3, 0.5], 2, tau).unwrap();
    let n = 100_000;
    let r = run_single_step(&inst, Method::Global, &SolveOptions::new(tau), n, 7).unwrap();
    let se = (0.86f64 * 0.14 / n as f64).sqrt();
    let acc_ok = (r.empirical_acceptance - 0.86).abs() <= 3.0 * se;
    let l1 = r.empirical_token_l1.unwrap();
    let bound = 15.0 * tau + 4.0 * (3.0f64 / n as f64).sqrt();
    outcome(
        acc_ok && l1 <= bound,
        format!(
            "acceptance {:.5} (0.86 +/- {:.5}), token L1 {l1:.5} <= {bound:.5}",
            r.empirical_acceptance,
            3.0 * se
        ),
    )
}

fn criterion_8() -> Outcome {
    let tau = 1e-3;
    let mut worst_global = 0.0f64;
    let mut worst_exact = 0.0f64;
    for seed in 0..5 {
        let models = SyntheticModelPair::generate(3, 1.0, 1.0, seed).unwrap();
        worst_global =
            worst_global.max(multi_step_error(&models, 2, 2, Method::Global, tau).unwrap());
        worst_exact =
            worst_exact.max(multi_step_error(&models, 2, 2, Method::MaxflowOpt, tau).unwrap());
    }
    outcome(
        worst_global <= 15.0 * 2.0 * tau && worst_exact <= 1e-6,
        format!(
            "5 model pairs, worst decode L1 global {worst_global:.2e} <= {:.2e}, exact {worst_exact:.2e}",
            30.0 * tau
        ),
    )
}

fn draw(weights: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    weights
        .iter()
        .position(|&w| {
            acc += w;
            acc > u
        })
        .unwrap_or(weights.len() - 1)
}

/// Median slice time over all trials and the success count.
fn zipf_timing(cap: Option<usize>, trials: u64) -> (f64, usize, Option<String>) {
    let tau = 1e-3;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut times = Vec::new();
    let mut ok = 0;
    let mut reason = None;
    for t in 0..trials {
        let base = zipf_instance(1000, 1.1, 3.0, 2, tau, t).unwrap();
        let inst = top_k_truncate(&base, 1000).unwrap();
        let omega: Vec<usize> = (0..2).map(|_| draw(inst.draft(), rng.random())).collect();
        let mut opts = SolveOptions::new(tau);
        opts.cap = cap;
        let start = Instant::now();
        let pre = precompute(&inst, &opts).unwrap();
        let slice = ot_slice(&inst, &pre, &omega).unwrap();
        times.push(start.elapsed().as_secs_f64() * 1e3);
        if slice.is_fallback() {
            reason = slice.meta.fallback_reason;
        } else {
            ok += 1;
        }
    }
    times.sort_by(f64::total_cmp);
    (times[times.len() / 2], ok, reason)
}

fn criterion_9() -> Outcome {
    let trials = 10;
    let (median, ok, reason) = zipf_timing(None, trials);
    let (lifted, lifted_ok, _) = zipf_timing(Some(usize::MAX), 3);
    let mut detail = format!(
        "k=1000 n=2: median {median:.2} ms, {ok}/{trials} solved within the default truncation cap"
    );
    if let Some(r) = reason {
        detail.push_str(&format!(" (last early termination: {r})"));
    }
    detail.push_str(&format!(
        "; cap lifted: median {lifted:.1} ms, {lifted_ok}/3 solved"
    ));
    outcome(median < 100.0 && 2 * ok >= trials as usize, detail)
}

fn criterion_10() -> Outcome {
    let mut worst = 0.0f64;
    for inst in &flow_set() {
        let relaxed = solve_relaxed_exact(inst, FlowOptions::default()).unwrap();
        let beta = canonical_beta(inst, &relaxed);
        let obj = beta_objective(inst, &beta, relaxed.mode());
        worst = worst.max((obj - solve_h_star(inst).alpha_star).abs());
    }
    outcome(
        worst <= 1e-9,
        format!("200 instances, max |beta objective - alpha*| = {worst:.2e}"),
    )
}

fn main() {
    let global = global_runs();
    let results = [
        criterion_1(),
        criterion_2(),
        criterion_3(),
        criterion_4(),
        criterion_5(&global),
        criterion_6(&global),
        criterion_7(),
        criterion_8(),
        criterion_9(),
        criterion_10(),
    ];
    let mut failed = Vec::new();
    for (k, r) in results.iter().enumerate() {
        let id = k + 1;
        let soft = id == 9;
        let status = match (r.pass, soft) {
            (true, _) => "PASS",
            (false, true) => "SOFT-FAIL",
            (false, false) => "FAIL",
        };
        let tag = if soft { " (soft)" } else { "" };
        println!("criterion {id:>2}{tag}: {status} - {}", r.detail);
        if !r.pass && !soft {
            failed.push(id);
        }
    }
    if !failed.is_empty() {
        eprintln!("gating criteria failed: {failed:?}");
        std::process::exit(1);
    }
}
