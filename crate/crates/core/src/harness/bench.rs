//! Solve-time and acceptance tables over top-k truncated Zipf instances.

use std::fmt::Write as _;

use rand::Rng;
use serde::Serialize;

use super::report::TimingSummary;
use super::single::{sample_index, stream};
use super::synthetic::zipf_instance;
use crate::convex::SolveOptions;
use crate::dist::{top_k_truncate, ProblemInstance};
use crate::error::{Error, Result};
use crate::flow::FlowOptions;
use crate::transport::{global_acceptance, ot_slice, precompute, timed, ExactSlicer, Method};

#[derive(Debug, Clone, Serialize)]
pub struct BenchConfig {
    /// Draft top-k sizes.
    pub ks: Vec<usize>,
    pub ns: Vec<usize>,
    pub methods: Vec<Method>,
    pub tau: f64,
    /// Per-slice limit; slower trials count as failures.
    pub time_limit_ms: f64,
    pub trials: usize,
    /// Target vocabulary before truncation.
    pub vocab: usize,
    pub zipf_s: f64,
    /// Rank noise between target and draft.
    pub jitter: f64,
    /// Limits of the best-under-limit table.
    pub limits_ms: Vec<f64>,
    /// Cells below this success rate are left out of the best-under-limit table.
    pub min_success: f64,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            ks: vec![5, 10, 20],
            ns: vec![2, 3],
            methods: vec![Method::MaxflowFull, Method::MaxflowOpt, Method::Global],
            tau: 1e-3,
            time_limit_ms: 1000.0,
            trials: 5,
            vocab: 200,
            zipf_s: 1.1,
            jitter: 3.0,
            limits_ms: vec![1.0, 10.0, 100.0],
            min_success: 0.9,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub k: usize,
    pub n: usize,
    pub method: Method,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub success_rate: f64,
    /// Mean over successful trials of the plan's acceptance rate; NaN if none.
    pub alpha: f64,
    /// Mean exact `α*` over the same trials.
    pub alpha_star: f64,
    /// Largest `α* − alpha` over successful trials.
    pub max_gap: f64,
    pub last_error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BestRow {
    pub limit_ms: f64,
    pub n: usize,
    /// `(k, method, alpha)` of the best qualifying cell, if any.
    pub best: Option<(usize, Method, f64)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchTable {
    pub rows: Vec<BenchRow>,
    pub best: Vec<BestRow>,
}

struct Trial {
    secs: f64,
    ok: bool,
    alpha: f64,
    alpha_star: f64,
    error: Option<String>,
}

fn draw_omega(instance: &ProblemInstance, seed: u64, index: u64) -> Vec<usize> {
    let mut rng = stream(seed, index);
    (0..instance.n())
        .map(|_| sample_index(instance.draft(), rng.random()))
        .collect()
}

fn run_trial(instance: &ProblemInstance, method: Method, omega: &[usize], tau: f64) -> Trial {
    let (out, secs) = timed(|| -> Result<(f64, f64)> {
        match method {
            Method::Global => {
                let pre = precompute(instance, &SolveOptions::new(tau))?;
                let slice = ot_slice(instance, &pre, omega)?;
                if slice.is_fallback() {
                    return Err(Error::SolveFailed(
                        slice.meta.fallback_reason.unwrap_or_default(),
                    ));
                }
                Ok((f64::NAN, pre.alpha_star()))
            }
            _ => {
                let slicer = ExactSlicer::new(instance, method, FlowOptions::default())?;
                slicer.slice(instance, omega)?;
                let a = slicer.subset.alpha_star;
                Ok((a, a))
            }
        }
    });
    match out {
        Ok((alpha, alpha_star)) => {
            // The global plan's acceptance is evaluated outside the timer.
            let alpha = if method == Method::Global {
                match precompute(instance, &SolveOptions::new(tau))
                    .and_then(|pre| global_acceptance(instance, &pre))
                {
                    Ok(a) => a,
                    Err(e) => return failure(secs, alpha_star, e),
                }
            } else {
                alpha
            };
            Trial {
                secs,
                ok: true,
                alpha,
                alpha_star,
                error: None,
            }
        }
        Err(e) => failure(secs, crate::subset::solve_h_star(instance).alpha_star, e),
    }
}

fn failure(secs: f64, alpha_star: f64, e: Error) -> Trial {
    Trial {
        secs,
        ok: false,
        alpha: f64::NAN,
        alpha_star,
        error: Some(e.to_string()),
    }
}

/// Runs every `(k, n, method)` cell. A cell whose first trial already takes
/// ten times the limit skips its remaining trials, which count as failures.
pub fn run_bench(cfg: &BenchConfig) -> Result<BenchTable> {
    if cfg.trials == 0 || cfg.ks.is_empty() || cfg.ns.is_empty() || cfg.methods.is_empty() {
        return Err(Error::InvalidInput(
            "bench needs trials, ks, ns and methods".into(),
        ));
    }
    let mut rows = Vec::new();
    for &n in &cfg.ns {
        for &k in &cfg.ks {
            let instances: Vec<(ProblemInstance, Vec<usize>)> = (0..cfg.trials)
                .map(|t| {
                    let base = zipf_instance(
                        cfg.vocab,
                        cfg.zipf_s,
                        cfg.jitter,
                        n,
                        cfg.tau,
                        cfg.seed + t as u64,
                    )?;
                    let inst = top_k_truncate(&base, k)?;
                    let omega = draw_omega(&inst, cfg.seed, t as u64);
                    Ok((inst, omega))
                })
                .collect::<Result<_>>()?;
            for &method in &cfg.methods {
                let mut trials: Vec<Trial> = Vec::with_capacity(cfg.trials);
                for (inst, omega) in &instances {
                    if let Some(first) = trials.first() {
                        if first.secs * 1e3 > 10.0 * cfg.time_limit_ms {
                            trials.push(Trial {
                                secs: first.secs,
                                ok: false,
                                alpha: f64::NAN,
                                alpha_star: first.alpha_star,
                                error: Some("skipped after timeout".into()),
                            });
                            continue;
                        }
                    }
                    let mut t = run_trial(inst, method, omega, cfg.tau);
                    if t.ok && t.secs * 1e3 > cfg.time_limit_ms {
                        t.ok = false;
                        t.error = Some(format!("exceeded {} ms", cfg.time_limit_ms));
                    }
                    trials.push(t);
                }
                rows.push(summarize(k, n, method, &trials));
            }
        }
    }
    let best = best_under_limits(&rows, cfg);
    Ok(BenchTable { rows, best })
}

fn summarize(k: usize, n: usize, method: Method, trials: &[Trial]) -> BenchRow {
    let secs: Vec<f64> = trials.iter().map(|t| t.secs).collect();
    let timing = TimingSummary::from_seconds(&secs);
    let ok: Vec<&Trial> = trials.iter().filter(|t| t.ok).collect();
    let mean = |f: &dyn Fn(&Trial) -> f64| -> f64 {
        if ok.is_empty() {
            f64::NAN
        } else {
            ok.iter().map(|t| f(t)).sum::<f64>() / ok.len() as f64
        }
    };
    BenchRow {
        k,
        n,
        method,
        mean_ms: timing.as_ref().map_or(f64::NAN, |t| t.mean_ms),
        median_ms: timing.as_ref().map_or(f64::NAN, |t| t.median_ms),
        success_rate: ok.len() as f64 / trials.len() as f64,
        alpha: mean(&|t| t.alpha),
        alpha_star: mean(&|t| t.alpha_star),
        max_gap: ok
            .iter()
            .map(|t| t.alpha_star - t.alpha)
            .fold(0.0, f64::max),
        last_error: trials.iter().rev().find_map(|t| t.error.clone()),
    }
}

fn best_under_limits(rows: &[BenchRow], cfg: &BenchConfig) -> Vec<BestRow> {
    let mut out = Vec::new();
    for &limit_ms in &cfg.limits_ms {
        for &n in &cfg.ns {
            let best = rows
                .iter()
                .filter(|r| r.n == n && r.mean_ms <= limit_ms && r.success_rate >= cfg.min_success)
                .filter(|r| r.alpha.is_finite())
                .max_by(|a, b| a.alpha.total_cmp(&b.alpha))
                .map(|r| (r.k, r.method, r.alpha));
            out.push(BestRow { limit_ms, n, best });
        }
    }
    out
}

const HEADER: [&str; 7] = [
    "k",
    "n",
    "method",
    "mean_ms",
    "median_ms",
    "success_rate",
    "alpha",
];

fn cells(r: &BenchRow) -> [String; 7] {
    [
        r.k.to_string(),
        r.n.to_string(),
        r.method.to_string(),
        format!("{:.4}", r.mean_ms),
        format!("{:.4}", r.median_ms),
        format!("{:.3}", r.success_rate),
        format!("{:.6}", r.alpha),
    ]
}

impl BenchTable {
    pub fn to_csv(&self) -> String {
        let mut s = HEADER.join(",");
        s.push('\n');
        for r in &self.rows {
            s.push_str(&cells(r).join(","));
            s.push('\n');
        }
        s
    }

    /// Right-aligned columns followed by the best-under-limit table.
    pub fn to_text(&self) -> String {
        let body: Vec<[String; 7]> = self.rows.iter().map(cells).collect();
        let widths: Vec<usize> = (0..7)
            .map(|c| {
                body.iter()
                    .map(|r| r[c].len())
                    .chain([HEADER[c].len()])
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let line = |cols: &[String]| -> String {
            cols.iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:>w$}"))
                .collect::<Vec<_>>()
                .join("  ")
        };
        let mut s = line(&HEADER.map(String::from));
        s.push('\n');
        for r in &body {
            s.push_str(&line(r));
            s.push('\n');
        }
        s.push_str("\nbest under limit\n");
        for b in &self.best {
            let _ = match b.best {
                Some((k, m, a)) => writeln!(
                    s,
                    "{:>8} ms  n={}  k={k}  {m}  alpha={a:.6}",
                    b.limit_ms, b.n
                ),
                None => writeln!(s, "{:>8} ms  n={}  none", b.limit_ms, b.n),
            };
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> BenchConfig {
        BenchConfig {
            ks: vec![3, 5],
            ns: vec![2],
            trials: 3,
            vocab: 30,
            time_limit_ms: 10_000.0,
            ..Default::default()
        }
    }

    #[test]
    fn exact_methods_agree_and_global_is_close() {
        let cfg = small();
        let table = run_bench(&cfg).unwrap();
        assert_eq!(table.rows.len(), 6);
        for k in [3, 5] {
            let cell = |m| {
                table
                    .rows
                    .iter()
                    .find(|r| r.k == k && r.method == m)
                    .unwrap()
            };
            let (full, opt, global) = (
                cell(Method::MaxflowFull),
                cell(Method::MaxflowOpt),
                cell(Method::Global),
            );
            assert_eq!(full.success_rate, 1.0);
            assert_eq!(opt.success_rate, 1.0);
            assert!((full.alpha - opt.alpha).abs() < 1e-9);
            if global.success_rate > 0.0 {
                assert!(global.max_gap <= 10.0 * cfg.tau, "{}", global.max_gap);
            }
        }
    }

    #[test]
    fn csv_has_header_and_rows() {
        let table = run_bench(&small()).unwrap();
        let csv = table.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "k,n,method,mean_ms,median_ms,success_rate,alpha");
        assert_eq!(lines.len(), 7);
        assert!(table.to_text().contains("best under limit"));
    }
}
