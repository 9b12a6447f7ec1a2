//! JSON run configuration.
//!
//! A config file has four sections: `scenario` (the data-generating model
//! and its mean patterns, one grid row per pattern), `procedures` (the
//! procedures compared on every row), `schedule` (the default critical
//! ladder for procedures that need one), and `run` (iterations, seed,
//! workers, output). Everything is validated up front, before any
//! simulation work starts.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use mrd::covariance::CovarianceModel;
use mrd::critical_values::{
    schedule_mrd_two_sided, schedule_one_sided, CriticalSchedule, DunnettCache, OneSidedFamily,
};
use mrd::matrix::Matrix;
use mrd::procedures::{LrsdGate, Sidedness};
use mrd::rng::mix_seed;
use mrd::scenarios::{
    mean_pattern_block, mean_pattern_triples, GenMode, MeanPattern, NullRule, Scenario,
    ScenarioKind,
};
use mrd::simulation::{GridRow, ProcedureSpec};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub scenario: ScenarioSection,
    pub procedures: Vec<ProcedureSection>,
    #[serde(default)]
    pub schedule: Option<ScheduleSection>,
    pub run: RunSection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    pub kind: String,
    pub m: usize,
    #[serde(default)]
    pub n: Option<u64>,
    #[serde(default)]
    pub sigma: Option<f64>,
    #[serde(default)]
    pub variance_known: Option<bool>,
    #[serde(default)]
    pub mode: Option<String>,
    #[serde(default)]
    pub model: Option<ModelSection>,
    #[serde(default)]
    pub null_rule: Option<String>,
    pub patterns: Vec<PatternSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub structure: String,
    #[serde(default)]
    pub rho: Option<f64>,
    #[serde(default)]
    pub scale: Option<f64>,
    #[serde(default)]
    pub path: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatternSection {
    pub label: String,
    pub layout: String,
    #[serde(default)]
    pub counts: Option<Vec<(f64, usize)>>,
    #[serde(default)]
    pub triples: Option<usize>,
    #[serde(default)]
    pub value: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    #[serde(default)]
    pub family: Option<String>,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub factor: Option<f64>,
    #[serde(default)]
    pub values: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcedureSection {
    pub kind: String,
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default)]
    pub sided: Option<String>,
    #[serde(default)]
    pub q: Option<f64>,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub gate: Option<String>,
    #[serde(default)]
    pub schedule: Option<ScheduleSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub iterations: u64,
    pub seed: u64,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub format: Option<String>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub trace: Option<PathBuf>,
    #[serde(default)]
    pub dunnett_draws: Option<u64>,
    #[serde(default)]
    pub dunnett_seed: Option<u64>,
    #[serde(default)]
    pub dunnett_cache: Option<PathBuf>,
}

/// Fully validated run plan.
pub struct RunPlan {
    pub grid: Vec<GridRow>,
    pub iterations: u64,
    pub seed: u64,
    pub workers: Option<usize>,
    pub format: OutputFormat,
    pub out: Option<PathBuf>,
    pub trace: Option<PathBuf>,
    pub dunnett: DunnettCache,
    pub dunnett_cache_path: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Markdown,
}

pub fn parse_format(s: &str) -> Result<OutputFormat> {
    match s {
        "csv" => Ok(OutputFormat::Csv),
        "md" | "markdown" => Ok(OutputFormat::Markdown),
        other => bail!("unknown format {other:?} (expected csv or md)"),
    }
}

pub fn parse_sided(s: &str) -> Result<Sidedness> {
    match s {
        "two" | "two_sided" => Ok(Sidedness::TwoSided),
        "one" | "one_sided" => Ok(Sidedness::OneSided),
        other => bail!("unknown sidedness {other:?} (expected one or two)"),
    }
}

pub fn parse_gate(s: &str) -> Result<LrsdGate> {
    match s {
        "lrt" | "likelihood_ratio" => Ok(LrsdGate::LikelihoodRatio),
        "ui" | "union_intersection" => Ok(LrsdGate::UnionIntersection),
        other => bail!("unknown lrsd gate {other:?} (expected lrt or ui)"),
    }
}

/// Loads and validates a config file.
pub fn load(path: &Path) -> Result<ConfigFile> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let cfg: ConfigFile = serde_json::from_str(&text)
        .with_context(|| format!("parsing config {}", path.display()))?;
    Ok(cfg)
}

/// Builds the covariance model named by a `model` section.
pub fn build_model(section: &ModelSection, m: usize) -> Result<CovarianceModel> {
    let scale = section.scale.unwrap_or(1.0);
    let model = match section.structure.as_str() {
        "identity" => CovarianceModel::identity(m),
        "intraclass" => {
            let rho = section
                .rho
                .context("scenario.model.rho is required for intraclass")?;
            CovarianceModel::intraclass(m, rho, scale)?
        }
        "change_point" => CovarianceModel::change_point(m, scale)?,
        "successive" => {
            let rho = section
                .rho
                .context("scenario.model.rho is required for successive")?;
            CovarianceModel::successive(m, rho, scale)?
        }
        "dense" => {
            let path = section
                .path
                .as_ref()
                .context("scenario.model.path is required for dense")?;
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading dense covariance {}", path.display()))?;
            let matrix = Matrix::from_csv(&text)?;
            CovarianceModel::dense(matrix, scale)?
        }
        other => bail!("unknown model structure {other:?}"),
    };
    if model.size() != m {
        bail!(
            "scenario.model size {} != scenario.m {m}",
            model.size()
        );
    }
    Ok(model)
}

fn build_pattern(section: &PatternSection, m: usize) -> Result<MeanPattern> {
    match section.layout.as_str() {
        "block" => {
            let counts = section
                .counts
                .as_ref()
                .with_context(|| format!("pattern {:?}: counts required for block", section.label))?;
            let total: usize = counts.iter().map(|&(_, c)| c).sum();
            if total != m {
                bail!(
                    "pattern {:?}: counts sum to {total} but scenario.m = {m}",
                    section.label
                );
            }
            Ok(mean_pattern_block(counts))
        }
        "triples" => {
            let triples = section
                .triples
                .with_context(|| format!("pattern {:?}: triples required", section.label))?;
            let value = section.value.unwrap_or(1.0);
            Ok(mean_pattern_triples(m, triples, value)?)
        }
        other => bail!(
            "pattern {:?}: unknown layout {other:?} (expected block or triples)",
            section.label
        ),
    }
}

fn build_scenario_kind(section: &ScenarioSection) -> Result<ScenarioKind> {
    let mode = match section.mode.as_deref() {
        None | Some("population_means") => GenMode::PopulationMeans,
        Some("raw_replicates") => GenMode::RawReplicates,
        Some(other) => bail!("unknown scenario.mode {other:?}"),
    };
    match section.kind.as_str() {
        "treatments_control" => Ok(ScenarioKind::TreatmentsControl {
            n: section.n.context("scenario.n is required")?,
            sigma: section.sigma.unwrap_or(1.0),
            variance_known: section.variance_known.unwrap_or(true),
            mode,
        }),
        "change_point" => Ok(ScenarioKind::ChangePoint {
            n: section.n.context("scenario.n is required")?,
            sigma: section.sigma.unwrap_or(1.0),
            variance_known: section.variance_known.unwrap_or(true),
            mode,
        }),
        "mvn" => {
            let model_section = section
                .model
                .as_ref()
                .context("scenario.model is required for kind mvn")?;
            Ok(ScenarioKind::Mvn {
                model: build_model(model_section, section.m)?,
            })
        }
        other => bail!("unknown scenario.kind {other:?}"),
    }
}

/// Builds a schedule from a schedule section for a given problem size.
pub fn build_schedule(section: &ScheduleSection, m: usize) -> Result<CriticalSchedule> {
    if let Some(values) = &section.values {
        if section.family.is_some() {
            bail!("schedule: give either family or values, not both");
        }
        return Ok(CriticalSchedule::from_values(
            values.clone(),
            "explicit values",
        )?);
    }
    let family = section
        .family
        .as_deref()
        .context("schedule: family or values required")?;
    let alpha = section.alpha.context("schedule.alpha is required")?;
    let schedule = match family {
        "mrd_two_sided" => {
            schedule_mrd_two_sided(m, alpha, section.factor.unwrap_or(0.71))?
        }
        "mrd_one_sided" => schedule_one_sided(
            m,
            alpha,
            OneSidedFamily::Mrd {
                factor: section.factor.unwrap_or(0.7),
            },
        )?,
        "step_down_one_sided" => schedule_one_sided(m, alpha, OneSidedFamily::StepDown)?,
        "lrsd_one_sided" => schedule_one_sided(m, alpha, OneSidedFamily::Lrsd)?,
        "lrsd_one_sided_squared" => {
            schedule_one_sided(m, alpha, OneSidedFamily::LrsdSquared)?
        }
        other => bail!("unknown schedule.family {other:?}"),
    };
    Ok(schedule)
}

fn build_procedure(
    section: &ProcedureSection,
    default_schedule: Option<&ScheduleSection>,
    m: usize,
) -> Result<ProcedureSpec> {
    let sided = parse_sided(section.sided.as_deref().unwrap_or("two"))?;
    let schedule_section = section.schedule.as_ref().or(default_schedule);
    let schedule = |what: &str| -> Result<CriticalSchedule> {
        let s = schedule_section
            .with_context(|| format!("procedure {what}: no schedule configured"))?;
        build_schedule(s, m)
    };
    let label = |fallback: &str| {
        section
            .label
            .clone()
            .unwrap_or_else(|| fallback.to_string())
    };
    match section.kind.as_str() {
        "mrd" => Ok(ProcedureSpec::Mrd {
            label: label("MRD"),
            schedule: schedule("mrd")?,
            sided,
        }),
        "lrsd" => Ok(ProcedureSpec::Lrsd {
            label: label("LRSD"),
            schedule: schedule("lrsd")?,
            sided,
            gate: parse_gate(section.gate.as_deref().unwrap_or("lrt"))?,
        }),
        "bh_step_up" => Ok(ProcedureSpec::BhStepUp {
            label: label("SU"),
            q: section.q.context("procedure bh_step_up: q is required")?,
            sided,
        }),
        "holm_step_down" => Ok(ProcedureSpec::HolmStepDown {
            label: label("SD"),
            alpha: section
                .alpha
                .context("procedure holm_step_down: alpha is required")?,
            sided,
        }),
        "dunnett" => Ok(ProcedureSpec::DunnettStepDown {
            label: label("D"),
            alpha: section.alpha.context("procedure dunnett: alpha is required")?,
        }),
        other => bail!("unknown procedure.kind {other:?}"),
    }
}

/// Resolves the whole config into a run plan; flags override config values.
pub struct Overrides {
    pub seed: Option<u64>,
    pub iterations: Option<u64>,
    pub workers: Option<usize>,
    pub format: Option<OutputFormat>,
    pub out: Option<PathBuf>,
}

pub fn build_plan(cfg: &ConfigFile, overrides: &Overrides) -> Result<RunPlan> {
    let m = cfg.scenario.m;
    if m == 0 {
        bail!("scenario.m must be >= 1");
    }
    let seed = overrides.seed.unwrap_or(cfg.run.seed);
    let iterations = overrides.iterations.unwrap_or(cfg.run.iterations);
    let null_rule = match cfg.scenario.null_rule.as_deref() {
        None | Some("exact_zero") => NullRule::ExactZero,
        Some("non_positive") => NullRule::NonPositive,
        Some(other) => bail!("unknown scenario.null_rule {other:?}"),
    };

    let kind = build_scenario_kind(&cfg.scenario)?;
    let procedures: Vec<ProcedureSpec> = cfg
        .procedures
        .iter()
        .map(|p| build_procedure(p, cfg.schedule.as_ref(), m))
        .collect::<Result<_>>()?;
    if procedures.is_empty() {
        bail!("procedures: at least one procedure is required");
    }

    let mut grid = Vec::new();
    for pattern in &cfg.scenario.patterns {
        let mean = build_pattern(pattern, m)?;
        grid.push(GridRow {
            label: pattern.label.clone(),
            scenario: Scenario {
                kind: kind.clone(),
                mean,
                null_rule,
                seed,
            },
            procedures: procedures.clone(),
        });
    }

    let format = match &overrides.format {
        Some(f) => *f,
        None => parse_format(cfg.run.format.as_deref().unwrap_or("csv"))?,
    };
    let dunnett_seed = cfg.run.dunnett_seed.unwrap_or_else(|| mix_seed(seed, 0xDA));
    let dunnett = DunnettCache::new(
        dunnett_seed,
        cfg.run.dunnett_draws.unwrap_or(DunnettCache::DEFAULT_DRAWS),
    );
    if let Some(path) = &cfg.run.dunnett_cache {
        if path.exists() {
            dunnett
                .load(path)
                .with_context(|| format!("loading dunnett cache {}", path.display()))?;
        }
    }

    Ok(RunPlan {
        grid,
        iterations,
        seed,
        workers: overrides.workers.or(cfg.run.workers),
        format,
        out: overrides.out.clone().or_else(|| cfg.run.out.clone()),
        trace: cfg.run.trace.clone(),
        dunnett,
        dunnett_cache_path: cfg.run.dunnett_cache.clone(),
    })
}
