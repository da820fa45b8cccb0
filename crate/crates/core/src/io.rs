//! Instance files and plan dumps.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dist::{apply_temperature, top_k_truncate, ProbDist, ProblemInstance};
use crate::error::{invalid, Error, Result};
use crate::flow::{SparsePlan, TupleMode};

fn default_tau() -> f64 {
    1e-3
}

/// JSON instance format. `temperature` applies to the target and
/// `draft_temperature` to the draft; both default to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceFile {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub n: usize,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub draft_temperature: Option<f64>,
    #[serde(default)]
    pub p_is_logits: bool,
    #[serde(default)]
    pub q_is_logits: bool,
}

fn to_dist(values: &[f64], logits: bool, temp: Option<f64>) -> Result<ProbDist> {
    let temp = temp.unwrap_or(1.0);
    if logits {
        apply_temperature(values, temp)
    } else {
        let d = ProbDist::new(values.to_vec())?;
        if temp == 1.0 {
            Ok(d)
        } else {
            d.tempered(temp)
        }
    }
}

impl InstanceFile {
    pub fn build(&self) -> Result<ProblemInstance> {
        if self.p.len() != self.q.len() {
            return invalid(format!(
                "p has {} entries but q has {}",
                self.p.len(),
                self.q.len()
            ));
        }
        let p = to_dist(&self.p, self.p_is_logits, self.temperature)?;
        let q = to_dist(&self.q, self.q_is_logits, self.draft_temperature)?;
        let inst = ProblemInstance::new(p, q, self.n, self.tau)?;
        match self.top_k {
            Some(k) => top_k_truncate(&inst, k),
            None => Ok(inst),
        }
    }

    pub fn from_instance(instance: &ProblemInstance) -> Self {
        Self {
            p: instance.target().to_vec(),
            q: instance.draft().to_vec(),
            n: instance.n(),
            tau: instance.tau(),
            top_k: None,
            temperature: None,
            draft_temperature: None,
            p_is_logits: false,
            q_is_logits: false,
        }
    }
}

pub fn parse_instance(json: &str) -> Result<ProblemInstance> {
    serde_json::from_str::<InstanceFile>(json)?.build()
}

pub fn load_instance(path: impl AsRef<Path>) -> Result<ProblemInstance> {
    parse_instance(&std::fs::read_to_string(path)?)
}

pub fn instance_json(instance: &ProblemInstance) -> Result<String> {
    Ok(serde_json::to_string_pretty(&InstanceFile::from_instance(
        instance,
    ))?)
}

/// Writes one `token <tab> ω comma-joined <tab> mass` line per entry.
pub fn write_plan(plan: &SparsePlan, mut out: impl Write) -> Result<()> {
    for (i, omega, m) in plan.iter() {
        let joined: Vec<String> = omega.iter().map(|t| t.to_string()).collect();
        writeln!(out, "{i}\t{}\t{m}", joined.join(","))?;
    }
    Ok(())
}

/// Reads a plan dump. Blank lines and lines starting with `#` are skipped.
pub fn read_plan(input: impl BufRead, mode: TupleMode) -> Result<SparsePlan> {
    let mut plan = SparsePlan::new(mode);
    for (no, line) in input.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |what: &str| Error::InvalidInput(format!("plan line {}: {what}", no + 1));
        let mut parts = line.split('\t');
        let (Some(i), Some(omega), Some(m), None) =
            (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(bad("expected three tab-separated fields"));
        };
        let i: usize = i.trim().parse().map_err(|_| bad("bad token"))?;
        let omega: Vec<usize> = omega
            .split(',')
            .map(|t| t.trim().parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad("bad tuple"))?;
        let m: f64 = m.trim().parse().map_err(|_| bad("bad mass"))?;
        if !m.is_finite() || m < 0.0 {
            return Err(bad("mass must be finite and nonnegative"));
        }
        plan.add(i, &omega, m);
    }
    Ok(plan)
}

pub fn load_plan(path: impl AsRef<Path>, mode: TupleMode) -> Result<SparsePlan> {
    let f = std::fs::File::open(path)?;
    read_plan(std::io::BufReader::new(f), mode)
}
