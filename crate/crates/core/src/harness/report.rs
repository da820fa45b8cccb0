use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingSummary {
    pub mean_ms: f64,
    pub median_ms: f64,
    pub p99_ms: f64,
}

impl TimingSummary {
    /// Summary of per-token times in seconds; `None` when empty.
    pub fn from_seconds(times: &[f64]) -> Option<Self> {
        if times.is_empty() {
            return None;
        }
        let mut ms: Vec<f64> = times.iter().map(|t| t * 1e3).collect();
        ms.sort_by(f64::total_cmp);
        let pick = |f: f64| ms[((ms.len() - 1) as f64 * f).round() as usize];
        Some(Self {
            mean_ms: ms.iter().sum::<f64>() / ms.len() as f64,
            median_ms: pick(0.5),
            p99_ms: pick(0.99),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub samples: usize,
    pub empirical_acceptance: f64,
    /// L1 distance between verified tokens and the target (single step only).
    pub empirical_token_l1: Option<f64>,
    /// Share of slices that fell back to target sampling.
    pub failure_rate: f64,
    /// Tokens emitted per block (multi-step only).
    pub block_efficiency: Option<f64>,
    pub alpha_star: Option<f64>,
    /// Wall-clock measurements; not reproducible across runs.
    pub timing: Option<TimingSummary>,
}

impl RunReport {
    /// The report without wall-clock fields, identical across runs with the
    /// same seed.
    pub fn without_timing(&self) -> Self {
        Self {
            timing: None,
            ..self.clone()
        }
    }
}
