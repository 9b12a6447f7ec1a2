//! Deterministic, parallel simulation harness.
//!
//! Each iteration draws one dataset and applies every configured procedure
//! to it (paired comparison), counting false rejections V, missed
//! alternatives, and the per-iteration ratio V/max(R,1) whose mean is the
//! FDR estimate. Iterations are partitioned into fixed-size blocks;
//! blocks run in parallel, each block accumulates sequentially in
//! iteration order, and the block partials are reduced in block order —
//! so the result is bit-identical for every worker count.

use rayon::prelude::*;

use crate::covariance::{CovarianceModel, Structure};
use crate::critical_values::{CriticalSchedule, DunnettCache};
use crate::procedures::{
    bh_step_up, dunnett_step_down, holm_step_down_marginal, lrsd_with_gate, marginal_pvalues,
    mrd, DecisionVector, LrsdGate, Sidedness,
};
use crate::scenarios::{Dataset, Scenario};
use crate::{Error, Result};

/// Fixed iteration block size; part of the reduction-order contract.
const BLOCK: u64 = 64;

/// Context shared by all procedures within a run.
pub struct ProcContext<'a> {
    /// Covariance model derived from the scenario.
    pub model: &'a CovarianceModel,
    /// Dunnett calibration source.
    pub dunnett: &'a DunnettCache,
}

/// A decision procedure applied inside the harness.
pub trait Procedure: Sync {
    fn id(&self) -> &str;
    fn decide(&self, data: &Dataset, ctx: &ProcContext) -> Result<DecisionVector>;
}

/// Config-constructible procedure bindings.
#[derive(Debug, Clone)]
pub enum ProcedureSpec {
    Mrd {
        label: String,
        schedule: CriticalSchedule,
        sided: Sidedness,
    },
    Lrsd {
        label: String,
        schedule: CriticalSchedule,
        sided: Sidedness,
        gate: LrsdGate,
    },
    BhStepUp {
        label: String,
        q: f64,
        sided: Sidedness,
    },
    HolmStepDown {
        label: String,
        alpha: f64,
        sided: Sidedness,
    },
    DunnettStepDown {
        label: String,
        alpha: f64,
    },
}

impl Procedure for ProcedureSpec {
    fn id(&self) -> &str {
        match self {
            ProcedureSpec::Mrd { label, .. }
            | ProcedureSpec::Lrsd { label, .. }
            | ProcedureSpec::BhStepUp { label, .. }
            | ProcedureSpec::HolmStepDown { label, .. }
            | ProcedureSpec::DunnettStepDown { label, .. } => label,
        }
    }

    fn decide(&self, data: &Dataset, ctx: &ProcContext) -> Result<DecisionVector> {
        match self {
            ProcedureSpec::Mrd {
                schedule, sided, ..
            } => mrd(&data.x, ctx.model, schedule, *sided, data.variance),
            ProcedureSpec::Lrsd {
                schedule,
                sided,
                gate,
                ..
            } => {
                if data.variance.is_some() {
                    return Err(Error::Validation(
                        "lrsd comparator requires known variance".into(),
                    ));
                }
                lrsd_with_gate(&data.x, ctx.model, schedule, *sided, *gate)
            }
            ProcedureSpec::BhStepUp { q, sided, .. } => {
                let p = marginal_pvalues(&data.x, ctx.model, *sided, data.variance)?;
                bh_step_up(&p, *q)
            }
            ProcedureSpec::HolmStepDown { alpha, sided, .. } => {
                let p = marginal_pvalues(&data.x, ctx.model, *sided, data.variance)?;
                holm_step_down_marginal(&p, *alpha)
            }
            ProcedureSpec::DunnettStepDown { alpha, .. } => {
                if data.variance.is_some() {
                    return Err(Error::Validation(
                        "dunnett comparator requires known variance".into(),
                    ));
                }
                let rho = match ctx.model.structure() {
                    Structure::Intraclass { rho, .. } => *rho,
                    other => {
                        return Err(Error::Validation(format!(
                            "dunnett comparator requires an intraclass model, got {other:?}"
                        )))
                    }
                };
                let sd = ctx.model.marginal_variance(0).sqrt();
                let x_std: Vec<f64> = data.x.iter().map(|v| v / sd).collect();
                dunnett_step_down(&x_std, rho, *alpha, ctx.dunnett)
            }
        }
    }
}

/// Accumulated error metrics for one procedure.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationSummary {
    pub procedure: String,
    pub iterations: u64,
    /// Mean count of rejected true nulls.
    pub e_type1: f64,
    /// Mean count of accepted true alternatives.
    pub e_type2: f64,
    /// Mean of per-iteration V / max(R, 1).
    pub fdr: f64,
    /// e_type1 + e_type2 (exactly).
    pub total: f64,
    pub se_e_type1: f64,
    pub se_e_type2: f64,
    pub se_fdr: f64,
    pub se_total: f64,
}

/// Per-iteration error counts (the optional trace record).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iteration: u64,
    pub procedure_index: usize,
    pub type1: u64,
    pub rejections: u64,
    pub type2: u64,
}

/// Harness options.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Worker threads; `None` uses the global rayon default. The results
    /// do not depend on this value.
    pub workers: Option<usize>,
    /// Record per-iteration counts.
    pub trace: bool,
}

/// Harness output.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub summaries: Vec<SimulationSummary>,
    pub trace: Option<Vec<TraceRow>>,
}

// Running sums for one procedure within a block.
#[derive(Debug, Clone, Default)]
struct Acc {
    v_sum: f64,
    v_sq: f64,
    t2_sum: f64,
    t2_sq: f64,
    ratio_sum: f64,
    ratio_sq: f64,
    tot_sum: f64,
    tot_sq: f64,
}

impl Acc {
    fn add(&mut self, v: f64, t2: f64, ratio: f64) {
        let tot = v + t2;
        self.v_sum += v;
        self.v_sq += v * v;
        self.t2_sum += t2;
        self.t2_sq += t2 * t2;
        self.ratio_sum += ratio;
        self.ratio_sq += ratio * ratio;
        self.tot_sum += tot;
        self.tot_sq += tot * tot;
    }

    fn merge(&mut self, other: &Acc) {
        self.v_sum += other.v_sum;
        self.v_sq += other.v_sq;
        self.t2_sum += other.t2_sum;
        self.t2_sq += other.t2_sq;
        self.ratio_sum += other.ratio_sum;
        self.ratio_sq += other.ratio_sq;
        self.tot_sum += other.tot_sum;
        self.tot_sq += other.tot_sq;
    }
}

fn se(sum: f64, sumsq: f64, n: u64) -> f64 {
    if n < 2 {
        return f64::NAN;
    }
    let n_f = n as f64;
    let mean = sum / n_f;
    let var = ((sumsq - n_f * mean * mean) / (n_f - 1.0)).max(0.0);
    (var / n_f).sqrt()
}

/// Runs `iterations` paired draws of `scenario` through every procedure.
pub fn run_simulation(
    scenario: &Scenario,
    procedures: &[&dyn Procedure],
    iterations: u64,
    dunnett: &DunnettCache,
    opts: &RunOptions,
) -> Result<RunOutput> {
    if iterations < 1 {
        return Err(Error::Validation("iterations must be >= 1".into()));
    }
    if procedures.is_empty() {
        return Err(Error::Validation("no procedures configured".into()));
    }
    let model = scenario.model()?;
    let null_mask = scenario.mean.null_mask(scenario.null_rule);
    let ctx = ProcContext {
        model: &model,
        dunnett,
    };

    let blocks: Vec<(u64, u64)> = (0..iterations)
        .step_by(BLOCK as usize)
        .map(|lo| (lo, (lo + BLOCK).min(iterations)))
        .collect();

    let body = || -> Result<Vec<(Vec<Acc>, Vec<TraceRow>)>> {
        blocks
            .par_iter()
            .map(|&(lo, hi)| {
                let mut accs = vec![Acc::default(); procedures.len()];
                let mut trace = Vec::new();
                for iter in lo..hi {
                    let data = scenario.generate(iter).map_err(|e| wrap(e, iter, scenario))?;
                    for (pi, proc) in procedures.iter().enumerate() {
                        let decision =
                            proc.decide(&data, &ctx).map_err(|e| wrap(e, iter, scenario))?;
                        let (v, r, t2) = count_errors(&decision, &null_mask);
                        let ratio = v as f64 / (r.max(1)) as f64;
                        accs[pi].add(v as f64, t2 as f64, ratio);
                        if opts.trace {
                            trace.push(TraceRow {
                                iteration: iter,
                                procedure_index: pi,
                                type1: v,
                                rejections: r,
                                type2: t2,
                            });
                        }
                    }
                }
                Ok((accs, trace))
            })
            .collect()
    };

    let partials = match opts.workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .map_err(|e| Error::NumericalFailure(format!("thread pool: {e}")))?
            .install(body),
        None => body(),
    }?;

    // Fixed-order reduction across blocks.
    let mut totals = vec![Acc::default(); procedures.len()];
    let mut trace = opts.trace.then(Vec::new);
    for (accs, block_trace) in &partials {
        for (t, a) in totals.iter_mut().zip(accs) {
            t.merge(a);
        }
        if let Some(tr) = trace.as_mut() {
            tr.extend_from_slice(block_trace);
        }
    }

    let n = iterations;
    let summaries = procedures
        .iter()
        .zip(&totals)
        .map(|(proc, acc)| SimulationSummary {
            procedure: proc.id().to_string(),
            iterations: n,
            e_type1: acc.v_sum / n as f64,
            e_type2: acc.t2_sum / n as f64,
            fdr: acc.ratio_sum / n as f64,
            total: acc.v_sum / n as f64 + acc.t2_sum / n as f64,
            se_e_type1: se(acc.v_sum, acc.v_sq, n),
            se_e_type2: se(acc.t2_sum, acc.t2_sq, n),
            se_fdr: se(acc.ratio_sum, acc.ratio_sq, n),
            se_total: se(acc.tot_sum, acc.tot_sq, n),
        })
        .collect();

    Ok(RunOutput { summaries, trace })
}

fn wrap(e: Error, iteration: u64, scenario: &Scenario) -> Error {
    Error::Simulation {
        iteration,
        fingerprint: scenario.fingerprint(),
        source: Box::new(e),
    }
}

/// (V, R, type II count) of a decision against the truth mask.
pub fn count_errors(decision: &DecisionVector, null_mask: &[bool]) -> (u64, u64, u64) {
    let mut v = 0;
    let mut r = 0;
    let mut t2 = 0;
    for (i, &rej) in decision.reject.iter().enumerate() {
        if rej {
            r += 1;
            if null_mask[i] {
                v += 1;
            }
        } else if !null_mask[i] {
            t2 += 1;
        }
    }
    (v, r, t2)
}

/// One grid row: a scenario and the procedures compared on it.
pub struct GridRow {
    pub label: String,
    pub scenario: Scenario,
    pub procedures: Vec<ProcedureSpec>,
}

/// Results in the row x procedure layout of the published tables.
pub struct ComparisonTable {
    pub rows: Vec<(String, Vec<SimulationSummary>)>,
}

/// Runs each grid row through [`run_simulation`].
pub fn compare_procedures(
    grid: &[GridRow],
    iterations: u64,
    dunnett: &DunnettCache,
    opts: &RunOptions,
) -> Result<ComparisonTable> {
    let mut rows = Vec::with_capacity(grid.len());
    for row in grid {
        let procs: Vec<&dyn Procedure> =
            row.procedures.iter().map(|p| p as &dyn Procedure).collect();
        let out = run_simulation(&row.scenario, &procs, iterations, dunnett, opts)?;
        rows.push((row.label.clone(), out.summaries));
    }
    Ok(ComparisonTable { rows })
}

impl ComparisonTable {
    /// Full-precision CSV, one line per (row, procedure).
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "row,procedure,iterations,e_type1,e_type2,fdr,total,se_e_type1,se_e_type2,se_fdr,se_total\n",
        );
        for (label, summaries) in &self.rows {
            for s in summaries {
                out.push_str(&format!(
                    "{label},{},{},{},{},{},{},{},{},{},{}\n",
                    s.procedure,
                    s.iterations,
                    s.e_type1,
                    s.e_type2,
                    s.fdr,
                    s.total,
                    s.se_e_type1,
                    s.se_e_type2,
                    s.se_fdr,
                    s.se_total
                ));
            }
        }
        out
    }

    /// Markdown table rounded to two decimals, metrics grouped by
    /// procedure as in the published tables.
    pub fn to_markdown(&self) -> String {
        let procs: Vec<String> = match self.rows.first() {
            Some((_, summaries)) => summaries.iter().map(|s| s.procedure.clone()).collect(),
            None => Vec::new(),
        };
        let mut out = String::from("| pattern |");
        for metric in ["e_type1", "e_type2", "fdr", "total"] {
            for p in &procs {
                out.push_str(&format!(" {metric} {p} |"));
            }
        }
        out.push('\n');
        out.push_str("|---|");
        for _ in 0..procs.len() * 4 {
            out.push_str("---|");
        }
        out.push('\n');
        for (label, summaries) in &self.rows {
            out.push_str(&format!("| {label} |"));
            for metric in 0..4 {
                for s in summaries {
                    let v = match metric {
                        0 => s.e_type1,
                        1 => s.e_type2,
                        2 => s.fdr,
                        _ => s.total,
                    };
                    out.push_str(&format!(" {v:.2} |"));
                }
            }
            out.push('\n');
        }
        out
    }

    /// Per-iteration trace rows as CSV.
    pub fn trace_csv(trace: &[TraceRow], procedures: &[String]) -> String {
        let mut out = String::from("iteration,procedure,type1,rejections,type2\n");
        for row in trace {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                row.iteration,
                procedures[row.procedure_index],
                row.type1,
                row.rejections,
                row.type2
            ));
        }
        out
    }
}
