use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Map, Value};

use multidraft::convex::SolveOptions;
use multidraft::flow::{
    complete_plan, solve_inner_exact, solve_outer_exact, solve_relaxed_exact, FlowOptions,
    SparsePlan, TupleMode,
};
use multidraft::harness::{
    multi_step_error, run_bench, run_multi_step, run_single_step, verify_records, BenchConfig,
    MultiStepConfig, SyntheticModelPair,
};
use multidraft::oracle::{
    beta_objective, brute_force_alpha, canonical_beta, lp_vertex_alpha, validate_plan, PlanKind,
};
use multidraft::transport::{full_plan_global, global_acceptance, precompute, Method, Verifier};
use multidraft::{io, solve_h_star, solve_outer_residuals, ProblemInstance};

#[derive(Parser)]
#[command(
    name = "multidraft",
    version,
    about = "Optimal multi-draft verification solvers"
)]
struct Cli {
    /// Instance JSON file, `-` for standard input.
    #[arg(long, global = true)]
    input: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Overrides the instance tolerance.
    #[arg(long, global = true)]
    tau: Option<f64>,
    #[arg(long, global = true, value_enum, default_value_t = MethodArg::Global)]
    method: MethodArg,
    /// Machine-readable output.
    #[arg(long, global = true)]
    json: bool,
    /// Worker threads for sampling; defaults to all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    LpExact,
    Maxflow,
    MaxflowOpt,
    Global,
}

impl MethodArg {
    fn transport(self) -> Result<Method> {
        Ok(match self {
            Self::LpExact => bail!("lp-exact only computes α*; use maxflow, maxflow-opt or global"),
            Self::Maxflow => Method::MaxflowFull,
            Self::MaxflowOpt => Method::MaxflowOpt,
            Self::Global => Method::Global,
        })
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Check {
    Alpha,
    Plan,
    Beta,
}

#[derive(Subcommand)]
enum Command {
    /// Optimal acceptance rate and subset.
    Accept,
    /// Solves the instance with the chosen method.
    Solve {
        /// Prints the outer residual targets.
        #[arg(long)]
        emit_residuals: bool,
        /// Writes the plan as `token<TAB>tuple<TAB>mass` lines.
        #[arg(long)]
        dump_plan: Option<PathBuf>,
        #[arg(long)]
        max_iter: Option<usize>,
        #[arg(long)]
        trunc_cap_override: Option<usize>,
        /// Ordered tuples instead of multisets in the flow networks.
        #[arg(long)]
        ordered: bool,
    },
    /// Prints `π(·|ω)` for one drafted tuple.
    Slice {
        #[arg(long, value_delimiter = ',', required = true)]
        omega: Vec<usize>,
    },
    /// Streams `(ω, token, accepted)` records.
    Verify {
        #[arg(long, default_value_t = 10)]
        samples: usize,
    },
    /// Cross-checks against the reference solvers; exits 1 on failure.
    Oracle {
        #[arg(long, value_enum)]
        check: Check,
        /// Plan dump to validate; solved by max-flow when absent.
        #[arg(long)]
        plan: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
    },
    /// Single-step sampling report.
    Simulate {
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
    },
    /// Multi-step tree verification over synthetic Markov models.
    Multistep {
        #[arg(long, default_value_t = 8)]
        vocab: usize,
        /// Draft paths.
        #[arg(long, default_value_t = 2)]
        paths: usize,
        /// Path length.
        #[arg(long, default_value_t = 2)]
        length: usize,
        #[arg(long, default_value_t = 1000)]
        blocks: usize,
        #[arg(long, default_value_t = 1.0)]
        concentration: f64,
        #[arg(long, default_value_t = 1.0)]
        similarity: f64,
        /// Also reports the exact decode-versus-target L1 by enumeration.
        #[arg(long)]
        exhaustive: bool,
    },
    /// Solve-time and acceptance table over Zipf instances.
    Bench {
        #[arg(long, value_delimiter = ',', default_values_t = [5, 10, 20])]
        ks: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = [2, 3])]
        ns: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = ["maxflow".to_string(), "maxflow-opt".to_string(), "global".to_string()])]
        methods: Vec<String>,
        #[arg(long, default_value_t = 5)]
        trials: usize,
        #[arg(long, default_value_t = 200)]
        vocab: usize,
        #[arg(long, default_value_t = 1000.0)]
        time_limit_ms: f64,
        #[arg(long, value_delimiter = ',', default_values_t = [1.0, 10.0, 100.0])]
        limits_ms: Vec<f64>,
        #[arg(long, default_value_t = 1.1)]
        zipf_s: f64,
        #[arg(long)]
        csv: bool,
    },
}

struct Ctx {
    input: Option<PathBuf>,
    seed: u64,
    tau: Option<f64>,
    method: MethodArg,
    json: bool,
}

impl Ctx {
    fn instance(&self) -> Result<ProblemInstance> {
        let path = self.input.as_ref().context("--input is required")?;
        let text = if path.as_os_str() == "-" {
            let mut s = String::new();
            std::io::stdin().read_to_string(&mut s)?;
            s
        } else {
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?
        };
        let inst = io::parse_instance(&text)?;
        Ok(match self.tau {
            Some(t) => inst.with_tau(t)?,
            None => inst,
        })
    }

    fn emit(&self, v: &Value) {
        if self.json {
            println!("{}", serde_json::to_string_pretty(v).expect("serializable"));
            return;
        }
        match v {
            Value::Object(m) => {
                for (k, val) in m {
                    match val {
                        Value::String(s) => println!("{k}: {s}"),
                        other => println!("{k}: {other}"),
                    }
                }
            }
            other => println!("{other}"),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let ctx = Ctx {
        input: cli.input,
        seed: cli.seed,
        tau: cli.tau,
        method: cli.method,
        json: cli.json,
    };
    match run(&ctx, cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

/// Returns whether the command passed.
fn run(ctx: &Ctx, command: Command) -> Result<bool> {
    match command {
        Command::Accept => accept(ctx),
        Command::Solve {
            emit_residuals,
            dump_plan,
            max_iter,
            trunc_cap_override,
            ordered,
        } => {
            let inst = ctx.instance()?;
            let mut opts = SolveOptions::new(inst.tau());
            if let Some(m) = max_iter {
                opts.max_iter = m;
            }
            opts.cap = trunc_cap_override;
            let flow = FlowOptions {
                mode: if ordered {
                    TupleMode::Ordered
                } else {
                    TupleMode::Multiset
                },
                ..Default::default()
            };
            solve(ctx, &inst, &opts, flow, emit_residuals, dump_plan)
        }
        Command::Slice { omega } => {
            let inst = ctx.instance()?;
            let verifier = Verifier::new(
                &inst,
                ctx.method.transport()?,
                &SolveOptions::new(inst.tau()),
            )?;
            let s = verifier.slice(&inst, &omega)?;
            if ctx.json {
                ctx.emit(&serde_json::to_value(&s)?);
            } else {
                for (i, m) in &s.probs {
                    println!("{i}\t{m}");
                }
                println!("# method: {}", serde_json::to_value(s.method)?);
                println!("# meta: {}", serde_json::to_value(&s.meta)?);
            }
            Ok(true)
        }
        Command::Verify { samples } => {
            let inst = ctx.instance()?;
            let verifier = Verifier::new(
                &inst,
                ctx.method.transport()?,
                &SolveOptions::new(inst.tau()),
            )?;
            let out = std::io::stdout();
            let mut out = BufWriter::new(out.lock());
            for r in verify_records(&inst, &verifier, samples, ctx.seed)? {
                if ctx.json {
                    writeln!(out, "{}", serde_json::to_string(&r)?)?;
                } else {
                    let omega: Vec<String> = r.omega.iter().map(|t| t.to_string()).collect();
                    writeln!(out, "{}\t{}\t{}", omega.join(","), r.token, r.accepted)?;
                }
            }
            Ok(true)
        }
        Command::Oracle { check, plan, tol } => oracle(ctx, check, plan, tol),
        Command::Simulate { samples } => {
            if samples == 0 {
                bail!("--samples must be at least 1");
            }
            let inst = ctx.instance()?;
            let opts = SolveOptions::new(inst.tau());
            let r = run_single_step(&inst, ctx.method.transport()?, &opts, samples, ctx.seed)?;
            ctx.emit(&serde_json::to_value(&r)?);
            Ok(true)
        }
        Command::Multistep {
            vocab,
            paths,
            length,
            blocks,
            concentration,
            similarity,
            exhaustive,
        } => {
            let models = SyntheticModelPair::generate(vocab, concentration, similarity, ctx.seed)?;
            let cfg = MultiStepConfig {
                paths,
                length,
                method: ctx.method.transport()?,
                tau: ctx.tau.unwrap_or(1e-3),
                blocks,
                seed: ctx.seed,
            };
            let r = run_multi_step(&models, &cfg)?;
            let mut v = serde_json::to_value(&r)?;
            if exhaustive {
                let e = multi_step_error(&models, paths, length, cfg.method, cfg.tau)?;
                v["exhaustive_l1"] = json!(e);
            }
            ctx.emit(&v);
            Ok(true)
        }
        Command::Bench {
            ks,
            ns,
            methods,
            trials,
            vocab,
            time_limit_ms,
            limits_ms,
            zipf_s,
            csv,
        } => {
            let methods = methods
                .iter()
                .map(|m| m.parse::<Method>())
                .collect::<multidraft::Result<Vec<_>>>()?;
            let cfg = BenchConfig {
                ks,
                ns,
                methods,
                tau: ctx.tau.unwrap_or(1e-3),
                time_limit_ms,
                trials,
                vocab,
                zipf_s,
                limits_ms,
                seed: ctx.seed,
                ..Default::default()
            };
            let table = run_bench(&cfg)?;
            if csv {
                print!("{}", table.to_csv());
            } else if ctx.json {
                ctx.emit(&serde_json::to_value(&table)?);
            } else {
                print!("{}", table.to_text());
            }
            Ok(true)
        }
    }
}

fn accept(ctx: &Ctx) -> Result<bool> {
    let inst = ctx.instance()?;
    let sol = solve_h_star(&inst);
    let v = json!({
        "alpha_star": sol.alpha_star,
        "h_star": sol.h_star,
        "psi": sol.psi_h_star,
    });
    if ctx.json {
        ctx.emit(&v);
    } else {
        println!("{v}");
    }
    Ok(true)
}

fn write_plan(path: &PathBuf, plan: &SparsePlan) -> Result<()> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(f);
    io::write_plan(plan, &mut w)?;
    w.flush()?;
    Ok(())
}

fn solve(
    ctx: &Ctx,
    inst: &ProblemInstance,
    opts: &SolveOptions,
    flow: FlowOptions,
    emit_residuals: bool,
    dump_plan: Option<PathBuf>,
) -> Result<bool> {
    let subset = solve_h_star(inst);
    let residuals = solve_outer_residuals(inst, &subset)?;
    let mut out = Map::new();
    out.insert(
        "method".into(),
        json!(ctx
            .method
            .to_possible_value()
            .map(|v| v.get_name().to_string())),
    );
    out.insert("alpha_star".into(), json!(subset.alpha_star));
    out.insert("h_star".into(), json!(subset.h_star));
    let mut plan = None;
    match ctx.method {
        MethodArg::LpExact => {
            out.insert("lp_alpha".into(), json!(lp_vertex_alpha(inst)?));
        }
        MethodArg::Maxflow => {
            let relaxed = solve_relaxed_exact(inst, flow)?;
            out.insert("flow_value".into(), json!(relaxed.objective()));
            let full = complete_plan(inst, &relaxed)?;
            let report = validate_plan(inst, &full, PlanKind::Otlp, Some(&subset.h_star));
            out.insert("validation".into(), serde_json::to_value(report)?);
            plan = Some(full);
        }
        MethodArg::MaxflowOpt => {
            let outer = solve_outer_exact(inst, &subset, &residuals, flow)?;
            let inner = solve_inner_exact(inst, &subset, flow)?;
            out.insert("outer_value".into(), json!(outer.value));
            out.insert("outer_source_deficit".into(), json!(outer.source_deficit));
            out.insert("inner_value".into(), json!(inner.value));
            out.insert("inner_source_deficit".into(), json!(inner.source_deficit));
            out.insert("flow_value".into(), json!(outer.value + inner.value));
            let mut combined = SparsePlan::new(flow.mode);
            for (i, w, m) in outer.plan.iter().chain(inner.plan.iter()) {
                combined.add(i, w, m);
            }
            plan = Some(combined);
        }
        MethodArg::Global => {
            let pre = precompute(inst, opts)?;
            for (name, s) in [("outer", &pre.outer), ("inner", &pre.inner)] {
                let v = match s {
                    Ok(s) => json!({
                        "status": "converged",
                        "truncation": s.truncation.tokens.len(),
                        "tunable_error": s.truncation.tunable_error,
                        "terms": s.table.len(),
                        "grad_l1": s.result.grad_l1,
                        "iterations": s.result.iterations,
                        "restarted": s.result.restarted,
                    }),
                    Err(e) => json!({ "status": "early_termination", "detail": e.to_string() }),
                };
                out.insert(name.into(), v);
            }
            match global_acceptance(inst, &pre) {
                Ok(a) => out.insert("plan_acceptance".into(), json!(a)),
                Err(e) => out.insert("plan_acceptance_error".into(), json!(e.to_string())),
            };
            if dump_plan.is_some() {
                plan = Some(full_plan_global(inst, &pre)?);
            }
        }
    }
    if emit_residuals {
        let map: Map<String, Value> = residuals
            .outer_tokens()
            .map(|i| {
                (
                    i.to_string(),
                    json!({ "p_i": residuals.lower[i], "residual": residuals.residual[i] }),
                )
            })
            .collect();
        out.insert("residuals".into(), Value::Object(map));
        out.insert("residual_total".into(), json!(residuals.residual_total));
    }
    if let Some(path) = dump_plan {
        let plan = plan.context("lp-exact produces no plan")?;
        write_plan(&path, &plan)?;
        out.insert("plan_entries".into(), json!(plan.len()));
    }
    ctx.emit(&Value::Object(out));
    Ok(true)
}

fn oracle(ctx: &Ctx, check: Check, plan_path: Option<PathBuf>, tol: f64) -> Result<bool> {
    let inst = ctx.instance()?;
    let subset = solve_h_star(&inst);
    let (pass, v) = match check {
        Check::Alpha => {
            let (brute, h) = brute_force_alpha(&inst)?;
            let diff = (brute - subset.alpha_star).abs();
            let pass = diff <= tol.min(1e-12);
            (
                pass,
                json!({ "alpha_star": subset.alpha_star, "brute_force": brute, "brute_force_set": h, "diff": diff }),
            )
        }
        Check::Plan => {
            let plan = match &plan_path {
                Some(p) => io::load_plan(p, TupleMode::Multiset)?,
                None => complete_plan(&inst, &solve_relaxed_exact(&inst, FlowOptions::default())?)?,
            };
            let r = validate_plan(&inst, &plan, PlanKind::Otlp, Some(&subset.h_star));
            let pass = r.support_ok
                && r.total_row_l1 <= tol
                && r.max_col_violation <= tol
                && (r.objective - subset.alpha_star).abs() <= tol;
            (
                pass,
                json!({ "alpha_star": subset.alpha_star, "report": r }),
            )
        }
        Check::Beta => {
            let relaxed = solve_relaxed_exact(&inst, FlowOptions::default())?;
            let beta = canonical_beta(&inst, &relaxed);
            let obj = beta_objective(&inst, &beta, relaxed.mode());
            let diff = (obj - subset.alpha_star).abs();
            (
                diff <= tol,
                json!({ "alpha_star": subset.alpha_star, "beta_objective": obj, "diff": diff }),
            )
        }
    };
    let mut v = v;
    v["pass"] = json!(pass);
    ctx.emit(&v);
    Ok(pass)
}
