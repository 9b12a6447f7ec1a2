//! `mrd` command line: simulation grids, single-dataset decisions, Dunnett
//! calibration and the closed-form verification suite.

mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use config::{build_schedule, OutputFormat, Overrides, ScheduleSection};
use mrd::covariance::CovarianceModel;
use mrd::critical_values::{CriticalSchedule, DunnettCache, McQuantile};
use mrd::procedures::{
    bh_step_up, dunnett_step_down, holm_step_down_marginal, lrsd_with_gate, marginal_pvalues,
    mrd as mrd_proc, DecisionVector,
};
use mrd::simulation::{compare_procedures, ComparisonTable, Procedure, RunOptions};

#[derive(Parser)]
#[command(
    name = "mrd",
    version,
    about = "Multiple testing for correlated normal data: the maximum-residual-down procedure and its comparators"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a simulation grid from a JSON config and write the error table.
    Simulate {
        /// Config file (sections: scenario, procedures, schedule, run).
        #[arg(long)]
        config: PathBuf,
        /// Override run.seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override run.iterations.
        #[arg(long)]
        iterations: Option<u64>,
        /// Override run.workers.
        #[arg(long)]
        workers: Option<usize>,
        /// Output format: csv or md.
        #[arg(long)]
        format: Option<String>,
        /// Output path (stdout if neither this nor run.out is set).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Apply one procedure to a data file and print the decision table.
    TestData {
        /// One observation per line; optional first line `s2=<v>,nu=<n>`.
        #[arg(long)]
        data: PathBuf,
        /// Covariance model: identity:M | intraclass:M:RHO[:SCALE] |
        /// changepoint:M[:SCALE] | successive:M:RHO[:SCALE] |
        /// dense:PATH[:SCALE].
        #[arg(long)]
        model: String,
        /// mrd | lrsd | bh_step_up | holm_step_down | dunnett.
        #[arg(long)]
        procedure: String,
        /// Schedule: file:PATH | mrd_two_sided:ALPHA[:FACTOR] |
        /// mrd_one_sided:ALPHA[:FACTOR] | step_down_one_sided:ALPHA |
        /// lrsd_one_sided:ALPHA | lrsd_one_sided_squared:ALPHA.
        #[arg(long)]
        schedule: Option<String>,
        /// one or two (default two).
        #[arg(long, default_value = "two")]
        sided: String,
        /// Level for holm_step_down / dunnett.
        #[arg(long)]
        alpha: Option<f64>,
        /// Target FDR for bh_step_up.
        #[arg(long)]
        q: Option<f64>,
        /// LRSD gate: lrt (default) or ui.
        #[arg(long, default_value = "lrt")]
        gate: String,
        /// Dunnett calibration draws.
        #[arg(long, default_value_t = DunnettCache::DEFAULT_DRAWS)]
        draws: u64,
        /// Dunnett calibration seed.
        #[arg(long, default_value_t = 1)]
        calib_seed: u64,
        /// Output path (stdout by default).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compute Dunnett step-down constants by simulation.
    Calibrate {
        /// Single k, or a range like 90..100 (inclusive).
        #[arg(long)]
        k: String,
        #[arg(long)]
        rho: f64,
        #[arg(long)]
        alpha: f64,
        #[arg(long, default_value_t = DunnettCache::DEFAULT_DRAWS)]
        draws: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Sidecar CSV reused across invocations.
        #[arg(long)]
        cache: Option<PathBuf>,
        /// Output path (stdout by default).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the closed-form/oracle verification suite.
    Verify {
        #[arg(long, default_value_t = 12345)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.cmd {
        Cmd::Simulate {
            config,
            seed,
            iterations,
            workers,
            format,
            out,
        } => cmd_simulate(config, seed, iterations, workers, format, out),
        Cmd::TestData {
            data,
            model,
            procedure,
            schedule,
            sided,
            alpha,
            q,
            gate,
            draws,
            calib_seed,
            out,
        } => cmd_test_data(
            data, model, procedure, schedule, sided, alpha, q, gate, draws, calib_seed, out,
        ),
        Cmd::Calibrate {
            k,
            rho,
            alpha,
            draws,
            seed,
            cache,
            out,
        } => cmd_calibrate(k, rho, alpha, draws, seed, cache, out),
        Cmd::Verify { seed } => cmd_verify(seed),
    }
}

fn write_output(path: Option<&PathBuf>, content: &str) -> Result<()> {
    match path {
        Some(p) => {
            std::fs::write(p, content).with_context(|| format!("writing {}", p.display()))?
        }
        None => print!("{content}"),
    }
    Ok(())
}

fn cmd_simulate(
    config_path: PathBuf,
    seed: Option<u64>,
    iterations: Option<u64>,
    workers: Option<usize>,
    format: Option<String>,
    out: Option<PathBuf>,
) -> Result<ExitCode> {
    let cfg = config::load(&config_path)?;
    let format = format.as_deref().map(config::parse_format).transpose()?;
    let plan = config::build_plan(
        &cfg,
        &Overrides {
            seed,
            iterations,
            workers,
            format,
            out,
        },
    )?;

    eprintln!(
        "simulate: {} row(s), {} iteration(s), seed {}",
        plan.grid.len(),
        plan.iterations,
        plan.seed
    );
    let opts = RunOptions {
        workers: plan.workers,
        trace: false,
    };
    let table = compare_procedures(&plan.grid, plan.iterations, &plan.dunnett, &opts)?;
    for (label, summaries) in &table.rows {
        for s in summaries {
            eprintln!(
                "  {label} / {}: total {:.2} (fdr {:.3})",
                s.procedure, s.total, s.fdr
            );
        }
    }

    let rendered = match plan.format {
        OutputFormat::Csv => table.to_csv(),
        OutputFormat::Markdown => table.to_markdown(),
    };
    write_output(plan.out.as_ref(), &rendered)?;

    if let Some(trace_path) = &plan.trace {
        if plan.grid.len() == 1 {
            let labels: Vec<String> = plan.grid[0]
                .procedures
                .iter()
                .map(|p| p.id().to_string())
                .collect();
            let procs: Vec<&dyn Procedure> = plan.grid[0]
                .procedures
                .iter()
                .map(|p| p as &dyn Procedure)
                .collect();
            let out = mrd::simulation::run_simulation(
                &plan.grid[0].scenario,
                &procs,
                plan.iterations,
                &plan.dunnett,
                &RunOptions {
                    workers: plan.workers,
                    trace: true,
                },
            )?;
            let csv = ComparisonTable::trace_csv(&out.trace.unwrap_or_default(), &labels);
            std::fs::write(trace_path, csv)
                .with_context(|| format!("writing trace {}", trace_path.display()))?;
        } else {
            eprintln!("trace: skipped (only single-row grids are traced)");
        }
    }

    if let Some(cache_path) = &plan.dunnett_cache_path {
        plan.dunnett.save(cache_path)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn parse_model_spec(spec: &str) -> Result<CovarianceModel> {
    let parts: Vec<&str> = spec.split(':').collect();
    let usage = "model spec: identity:M | intraclass:M:RHO[:SCALE] | changepoint:M[:SCALE] | successive:M:RHO[:SCALE] | dense:PATH[:SCALE]";
    let parse_m =
        |s: &str| -> Result<usize> { s.parse().with_context(|| format!("bad size {s:?}; {usage}")) };
    let parse_f = |s: &str| -> Result<f64> {
        s.parse().with_context(|| format!("bad number {s:?}; {usage}"))
    };
    match parts.as_slice() {
        ["identity", m] => Ok(CovarianceModel::identity(parse_m(m)?)),
        ["intraclass", m, rho] => {
            Ok(CovarianceModel::intraclass(parse_m(m)?, parse_f(rho)?, 1.0)?)
        }
        ["intraclass", m, rho, scale] => Ok(CovarianceModel::intraclass(
            parse_m(m)?,
            parse_f(rho)?,
            parse_f(scale)?,
        )?),
        ["changepoint", m] => Ok(CovarianceModel::change_point(parse_m(m)?, 1.0)?),
        ["changepoint", m, scale] => {
            Ok(CovarianceModel::change_point(parse_m(m)?, parse_f(scale)?)?)
        }
        ["successive", m, rho] => {
            Ok(CovarianceModel::successive(parse_m(m)?, parse_f(rho)?, 1.0)?)
        }
        ["successive", m, rho, scale] => Ok(CovarianceModel::successive(
            parse_m(m)?,
            parse_f(rho)?,
            parse_f(scale)?,
        )?),
        ["dense", path] => dense_from(path, 1.0),
        ["dense", path, scale] => dense_from(path, parse_f(scale)?),
        _ => bail!("{usage}"),
    }
}

fn dense_from(path: &str, scale: f64) -> Result<CovarianceModel> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading dense covariance {path}"))?;
    let matrix = mrd::matrix::Matrix::from_csv(&text)?;
    Ok(CovarianceModel::dense(matrix, scale)?)
}

fn parse_schedule_spec(spec: &str, m: usize) -> Result<CriticalSchedule> {
    if let Some(path) = spec.strip_prefix("file:") {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading schedule {path}"))?;
        let mut values = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if lineno == 0 && line.starts_with("stage") {
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let cell = line.split(',').next_back().unwrap_or(line);
            values.push(cell.trim().parse::<f64>().with_context(|| {
                format!("schedule {path} line {}: bad value {cell:?}", lineno + 1)
            })?);
        }
        return Ok(CriticalSchedule::from_values(values, format!("file:{path}"))?);
    }
    let parts: Vec<&str> = spec.split(':').collect();
    let section = match parts.as_slice() {
        [family, alpha] => ScheduleSection {
            family: Some(family.to_string()),
            alpha: Some(alpha.parse().context("bad schedule alpha")?),
            factor: None,
            values: None,
        },
        [family, alpha, factor] => ScheduleSection {
            family: Some(family.to_string()),
            alpha: Some(alpha.parse().context("bad schedule alpha")?),
            factor: Some(factor.parse().context("bad schedule factor")?),
            values: None,
        },
        _ => bail!("schedule spec: file:PATH or FAMILY:ALPHA[:FACTOR]"),
    };
    build_schedule(&section, m)
}

/// Reads the test-data format: one value per line, optional first-line
/// header `s2=<v>,nu=<n>`.
fn read_data_file(path: &PathBuf) -> Result<(Vec<f64>, Option<(f64, u64)>)> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut variance = None;
    let mut values = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if lineno == 0 && line.contains("s2=") {
            let mut s2 = None;
            let mut nu = None;
            for field in line.split(',') {
                let field = field.trim();
                if let Some(v) = field.strip_prefix("s2=") {
                    s2 = Some(
                        v.parse::<f64>()
                            .with_context(|| format!("{} line 1: bad s2 {v:?}", path.display()))?,
                    );
                } else if let Some(v) = field.strip_prefix("nu=") {
                    nu = Some(
                        v.parse::<u64>()
                            .with_context(|| format!("{} line 1: bad nu {v:?}", path.display()))?,
                    );
                } else {
                    bail!("{} line 1: unknown header field {field:?}", path.display());
                }
            }
            variance = Some((
                s2.context("header must set s2")?,
                nu.context("header must set nu")?,
            ));
            continue;
        }
        let v: f64 = line.parse().with_context(|| {
            format!(
                "{} line {}: bad numeric cell {line:?}",
                path.display(),
                lineno + 1
            )
        })?;
        values.push(v);
    }
    Ok((values, variance))
}

fn decision_csv(d: &DecisionVector) -> String {
    let mut rank = vec![None; d.reject.len()];
    for (r, &i) in d.order.iter().enumerate() {
        rank[i] = Some(r + 1);
    }
    let mut out = String::from("index,statistic,threshold,rejected,rejection_rank\n");
    for (i, h) in d.per_hypothesis.iter().enumerate() {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            i + 1,
            h.statistic,
            h.threshold,
            d.reject[i],
            rank[i].map(|r| r.to_string()).unwrap_or_default()
        ));
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn cmd_test_data(
    data: PathBuf,
    model_spec: String,
    procedure: String,
    schedule_spec: Option<String>,
    sided: String,
    alpha: Option<f64>,
    q: Option<f64>,
    gate: String,
    draws: u64,
    calib_seed: u64,
    out: Option<PathBuf>,
) -> Result<ExitCode> {
    let model = parse_model_spec(&model_spec)?;
    let (x, variance) = read_data_file(&data)?;
    if x.len() != model.size() {
        bail!(
            "data length {} does not match declared model size {}",
            x.len(),
            model.size()
        );
    }
    let sided = config::parse_sided(&sided)?;
    let schedule = schedule_spec
        .as_deref()
        .map(|s| parse_schedule_spec(s, model.size()))
        .transpose()?;
    let need_schedule = || schedule.clone().context("this procedure needs --schedule");

    let decision = match procedure.as_str() {
        "mrd" => mrd_proc(&x, &model, &need_schedule()?, sided, variance)?,
        "lrsd" => {
            if variance.is_some() {
                bail!("lrsd requires known variance (drop the s2/nu header)");
            }
            lrsd_with_gate(
                &x,
                &model,
                &need_schedule()?,
                sided,
                config::parse_gate(&gate)?,
            )?
        }
        "bh_step_up" => {
            let p = marginal_pvalues(&x, &model, sided, variance)?;
            bh_step_up(&p, q.context("bh_step_up needs --q")?)?
        }
        "holm_step_down" => {
            let p = marginal_pvalues(&x, &model, sided, variance)?;
            holm_step_down_marginal(&p, alpha.context("holm_step_down needs --alpha")?)?
        }
        "dunnett" => {
            if variance.is_some() {
                bail!("dunnett requires known variance (drop the s2/nu header)");
            }
            let rho = match model.structure() {
                mrd::covariance::Structure::Intraclass { rho, .. } => *rho,
                other => bail!("dunnett requires an intraclass model, got {other:?}"),
            };
            let sd = model.marginal_variance(0).sqrt();
            let x_std: Vec<f64> = x.iter().map(|v| v / sd).collect();
            let cache = DunnettCache::new(calib_seed, draws);
            dunnett_step_down(&x_std, rho, alpha.context("dunnett needs --alpha")?, &cache)?
        }
        other => bail!("unknown procedure {other:?}"),
    };

    write_output(out.as_ref(), &decision_csv(&decision))?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_calibrate(
    k_spec: String,
    rho: f64,
    alpha: f64,
    draws: u64,
    seed: u64,
    cache_path: Option<PathBuf>,
    out: Option<PathBuf>,
) -> Result<ExitCode> {
    let (k_min, k_max) = match k_spec.split_once("..") {
        Some((a, b)) => (
            a.parse::<usize>().context("bad k range start")?,
            b.parse::<usize>().context("bad k range end")?,
        ),
        None => {
            let k = k_spec.parse::<usize>().context("bad k")?;
            (k, k)
        }
    };
    if k_min == 0 || k_max < k_min {
        bail!("k range must satisfy 1 <= k_min <= k_max");
    }
    let cache = DunnettCache::new(seed, draws);
    if let Some(path) = &cache_path {
        if path.exists() {
            cache.load(path)?;
        }
    }
    let mut rows = String::from("k,rho,alpha,seed,draws,value,std_error\n");
    for k in k_min..=k_max {
        let McQuantile {
            value, std_error, ..
        } = cache.quantile(k, rho, alpha)?;
        rows.push_str(&format!(
            "{k},{rho},{alpha},{seed},{draws},{value},{std_error}\n"
        ));
        eprintln!("c({k}, {rho}, {alpha}) = {value:.4} (se {std_error:.4})");
    }
    if let Some(path) = &cache_path {
        cache.save(path)?;
    }
    write_output(out.as_ref(), &rows)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify(seed: u64) -> Result<ExitCode> {
    let results = mrd::verify::run_all(seed);
    let mut failures = 0;
    for r in &results {
        let tag = if r.passed { "PASS" } else { "FAIL" };
        println!("[{tag}] {} — {}", r.name, r.detail);
        if !r.passed {
            failures += 1;
        }
    }
    if failures > 0 {
        eprintln!("{failures} check(s) failed");
        Ok(ExitCode::FAILURE)
    } else {
        println!("all {} checks passed", results.len());
        Ok(ExitCode::SUCCESS)
    }
}
