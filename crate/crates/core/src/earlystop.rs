//! Early rejection of doomed inpaintings from the guidance divergence.
//!
//! During the first denoising steps a worker reports, per proposal, the L1
//! gap between the conditional and unconditional noise predictions. Successful
//! insertions show a larger gap, so a threshold on that gap at an early step
//! lets most failures skip the full inpainting. [`calibrate`] picks the step and
//! threshold that minimize total cost while keeping a target recall on the
//! successful insertions.
//!
//! Steps are 1-based counts of denoising iterations: step `t` reads
//! `deltas[t - 1]` and costs `step_costs[t - 1]`, the cumulative time spent
//! through that step.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Success,
    Failure,
}

/// Per-proposal divergence values across denoising steps, labeled by the
/// final verification outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceTrace {
    #[serde(rename = "proposal")]
    pub proposal_index: usize,
    pub deltas: Vec<f64>,
    pub label: Label,
}

impl DivergenceTrace {
    pub fn validate(&self) -> Result<()> {
        if self.deltas.is_empty() {
            return Err(Error::contract(format!("trace {} has no deltas", self.proposal_index)));
        }
        if self.deltas.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(Error::contract(format!(
                "trace {} has a negative or non-finite delta",
                self.proposal_index
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    /// 1-based denoising step at which the filter runs.
    pub step: usize,
    pub threshold: f64,
    pub recall: f64,
    /// Fraction of all proposals that pass the filter.
    pub pass_fraction: f64,
    /// Total cost `N * (step_cost + pass_fraction * full_cost)`.
    pub expected_cost: f64,
    /// `N * full_cost / expected_cost`.
    pub speedup: f64,
    pub proposals: usize,
}

/// Cumulative cost table where every denoising step costs one unit.
pub fn unit_step_costs(steps: usize) -> Vec<f64> {
    (1..=steps).map(|t| t as f64).collect()
}

/// `true` where `delta >= threshold`.
pub fn filter(deltas: &[f64], threshold: f64) -> Vec<bool> {
    deltas.iter().map(|&d| d >= threshold).collect()
}

/// Smallest `k` with `k / n >= target`.
fn min_passing(n: usize, target: f64) -> usize {
    let mut k = ((target * n as f64).ceil() as usize).min(n);
    while k > 0 && (k - 1) as f64 / n as f64 >= target {
        k -= 1;
    }
    while k < n && (k as f64 / n as f64) < target {
        k += 1;
    }
    k
}

/// Number of values in an ascending slice that are `>= threshold`.
fn count_at_least(sorted: &[f64], threshold: f64) -> usize {
    sorted.len() - sorted.partition_point(|&d| d < threshold)
}

/// Finds the cheapest (step, threshold) pair that keeps recall on successful
/// traces at or above `target_recall`.
///
/// At each step the threshold is the largest observed delta that still meets
/// the recall target; the step with the lowest expected cost wins, earlier
/// steps winning ties.
pub fn calibrate(
    traces: &[DivergenceTrace],
    step_costs: &[f64],
    full_cost: f64,
    target_recall: f64,
) -> Result<CalibrationResult> {
    if !(target_recall > 0.0 && target_recall <= 1.0) {
        return Err(Error::config(format!("target recall must lie in (0, 1], got {target_recall}")));
    }
    if !(full_cost.is_finite() && full_cost > 0.0) {
        return Err(Error::config("full inpainting cost must be positive"));
    }
    let Some(first) = traces.first() else {
        return Err(Error::contract("no traces to calibrate on"));
    };
    let steps = first.deltas.len();
    for t in traces {
        t.validate()?;
        if t.deltas.len() != steps {
            return Err(Error::contract(format!(
                "trace {} has {} steps, expected {steps}",
                t.proposal_index,
                t.deltas.len()
            )));
        }
    }
    if step_costs.len() != steps {
        return Err(Error::contract(format!(
            "{} step costs for {steps}-step traces",
            step_costs.len()
        )));
    }
    if step_costs.iter().any(|c| !c.is_finite() || *c < 0.0)
        || step_costs.windows(2).any(|w| w[1] < w[0])
    {
        return Err(Error::contract("step costs must be non-negative and ascending"));
    }
    let n_success = traces.iter().filter(|t| t.label == Label::Success).count();
    if n_success == 0 {
        return Err(Error::Calibration("no successful traces".into()));
    }
    let n = traces.len();
    let need = min_passing(n_success, target_recall);

    let mut best: Option<CalibrationResult> = None;
    for (t, &step_cost) in step_costs.iter().enumerate() {
        let mut all: Vec<f64> = traces.iter().map(|tr| tr.deltas[t]).collect();
        let mut succ: Vec<f64> = traces
            .iter()
            .filter(|tr| tr.label == Label::Success)
            .map(|tr| tr.deltas[t])
            .collect();
        all.sort_by(f64::total_cmp);
        succ.sort_by(f64::total_cmp);

        // `need`-th largest success value; anything above it loses a success
        let threshold = succ[n_success - need];
        let recall = count_at_least(&succ, threshold) as f64 / n_success as f64;
        let pass_fraction = count_at_least(&all, threshold) as f64 / n as f64;
        let per_proposal = step_cost + pass_fraction * full_cost;
        let expected_cost = n as f64 * per_proposal;
        let candidate = CalibrationResult {
            step: t + 1,
            threshold,
            recall,
            pass_fraction,
            expected_cost,
            speedup: n as f64 * full_cost / expected_cost,
            proposals: n,
        };
        if best.is_none_or(|b| candidate.expected_cost < b.expected_cost) {
            best = Some(candidate);
        }
    }
    Ok(best.expect("at least one step"))
}

pub fn read_traces<R: BufRead>(reader: R) -> Result<Vec<DivergenceTrace>> {
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let trace: DivergenceTrace = serde_json::from_str(&line)?;
        trace.validate()?;
        out.push(trace);
    }
    Ok(out)
}

pub fn write_traces<W: Write>(mut out: W, traces: &[DivergenceTrace]) -> Result<()> {
    for t in traces {
        serde_json::to_writer(&mut out, t)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
