//! Command-line interface: `estimate`, `simulate` and `diagnose`.
//!
//! Exit codes: 0 success, 1 usage error (bad flags, bad scenario file),
//! 2 data or numeric error.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::data::{load_csv, ValidationReport, VariableRoles};
use crate::design::ModelTerms;
use crate::error::{Error, ErrorCategory, Result};
use crate::estimator::{
    prepare_weights, run_pipeline_threads, EffectEstimates, Estimate, PipelineConfig, SeMethod,
    WeightedData,
};
use crate::glm::Family;
use crate::propensity::{PropensityConfig, ScoreBasis, SupportReport};
use crate::simulation::{builtin, run_study, EstimatorKind, EstimatorSpec, Scenario, StudySe, BUILTIN_NAMES};
use crate::weights::{summarize, BalanceReport, Exclusion, WeightMethod, WeightSummary};

/// Bumped whenever a report field is renamed or removed.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Parser, Debug)]
#[command(name = "rmpw", version, about = "Natural direct and indirect effects by ratio-of-mediator-probability weighting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate natural direct and indirect effects from a CSV file.
    Estimate(EstimateArgs),
    /// Run a replication study on a simulated scenario.
    Simulate(SimulateArgs),
    /// Report propensity overlap, strata, weights and balance without fitting the outcome model.
    Diagnose(EstimateArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum WeightArg {
    Stratified,
    Parametric,
}

impl From<WeightArg> for WeightMethod {
    fn from(w: WeightArg) -> Self {
        match w {
            WeightArg::Stratified => WeightMethod::Stratified,
            WeightArg::Parametric => WeightMethod::Parametric,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum FamilyArg {
    Gaussian,
    Binomial,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum SeArg {
    Robust,
    Bootstrap,
    None,
}

#[derive(Args, Debug)]
struct ModelArgs {
    /// How W_(1Z0) is formed.
    #[arg(long, value_enum, default_value = "stratified")]
    weight_method: WeightArg,
    /// Number of propensity strata for stratified weights (2 to 20).
    #[arg(long, default_value_t = 5)]
    strata: usize,
    /// Condition the treated-arm mediator model on the post-treatment columns.
    #[arg(long)]
    use_post_treatment: bool,
    /// Number of threads for replicate loops (0 = all cores).
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

#[derive(Args, Debug)]
struct EstimateArgs {
    /// Input CSV with a header row.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    treatment: String,
    #[arg(long)]
    mediator: String,
    #[arg(long)]
    outcome: String,
    /// Pretreatment covariates (comma list).
    #[arg(long, value_delimiter = ',')]
    covariates: Vec<String>,
    /// Post-treatment covariates (comma list).
    #[arg(long, value_delimiter = ',')]
    post_treatment: Vec<String>,
    /// Unit identifier column.
    #[arg(long)]
    id: Option<String>,
    /// Treatment was randomized: IPTW factor fixed at 1.
    #[arg(long)]
    randomized: bool,
    #[command(flatten)]
    model: ModelArgs,
    /// Treatment model terms, e.g. "x1,x2,x1:x2" (default: main effects).
    #[arg(long)]
    treatment_terms: Option<String>,
    /// Mediator model terms (default: main effects).
    #[arg(long)]
    mediator_terms: Option<String>,
    /// How p(A=a)/p(A=a|X) is formed when treatment is not randomized.
    #[arg(long, value_enum, default_value = "parametric")]
    iptw_method: WeightArg,
    #[arg(long, value_enum, default_value = "gaussian")]
    family: FamilyArg,
    #[arg(long, value_enum, default_value = "robust")]
    se: SeArg,
    #[arg(long, default_value_t = 1000)]
    bootstrap_reps: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Cap weights at this within-set quantile (e.g. 0.99).
    #[arg(long)]
    truncate: Option<f64>,
    /// Rescale each weight set to mean one.
    #[arg(long)]
    normalize: bool,
    /// Drop units whose scores fall outside the opposite arm's range.
    #[arg(long)]
    exclude_off_support: bool,
    /// Extra outcome-model covariates (gaussian only).
    #[arg(long, value_delimiter = ',')]
    outcome_covariates: Vec<String>,
    /// Write the JSON report here; the text summary then goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Scenario TOML file, or a bundled scenario name.
    #[arg(long)]
    scenario: String,
    #[arg(long, default_value_t = 100)]
    reps: usize,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    /// Master seed (default: the scenario's seed, else 1).
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    model: ModelArgs,
    /// Weight with the generating propensities instead of fitted ones.
    #[arg(long)]
    true_scores: bool,
    #[arg(long, value_enum, default_value = "robust")]
    se: SeArg,
    /// Also run the path-analysis and modified-regression baselines.
    #[arg(long)]
    baselines: bool,
    /// Write the JSON report here (and the text table next to it as .txt).
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Configuration echoed into every estimate/diagnose report. Parsing the
/// `config` field of a report gives back this value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: String,
    pub data: String,
    pub roles: VariableRoles,
    pub pipeline: PipelineConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Software {
    pub name: String,
    pub version: String,
}

impl Software {
    fn current() -> Self {
        Self {
            name: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrataSummary {
    pub basis: Option<ScoreBasis>,
    pub requested: usize,
    pub effective: usize,
    pub cutpoints: Vec<f64>,
    pub merges: Vec<String>,
    pub units: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub n_analysed: usize,
    pub off_support_excluded: Vec<String>,
    pub strata: Vec<StrataSummary>,
    pub weights: Vec<WeightSummary>,
    pub exclusions: Vec<Exclusion>,
    pub support: SupportReport,
    pub balance: BalanceReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub software: Software,
    pub config: RunConfig,
    pub validation: ValidationReport,
    pub estimates: Option<EffectEstimates>,
    pub diagnostics: Diagnostics,
}

fn diagnostics(w: &WeightedData) -> Diagnostics {
    let mut exclusions: Vec<Exclusion> = Vec::new();
    for e in w.w00.exclusions.iter().chain(&w.w10.exclusions).chain(&w.w11.exclusions) {
        if !exclusions.contains(e) {
            exclusions.push(e.clone());
        }
    }
    Diagnostics {
        n_analysed: w.dataset.len(),
        off_support_excluded: w.off_support_excluded.clone(),
        strata: w
            .strata
            .iter()
            .map(|s| StrataSummary {
                basis: s.basis,
                requested: s.requested,
                effective: s.effective,
                cutpoints: s.cutpoints.clone(),
                merges: s.merges.clone(),
                units: s.units.len(),
            })
            .collect(),
        weights: [&w.w00, &w.w10, &w.w11].into_iter().map(summarize).collect(),
        exclusions,
        support: w.support.clone(),
        balance: w.balance.clone(),
    }
}

fn parse_terms(spec: &Option<String>) -> Result<Option<ModelTerms>> {
    spec.as_deref().map(ModelTerms::parse).transpose()
}

fn str_refs(v: &[String]) -> Vec<&str> {
    v.iter().map(String::as_str).collect()
}

fn run_config(command: &str, a: &EstimateArgs) -> Result<RunConfig> {
    let mut roles = VariableRoles::new(&a.treatment, &a.mediator, &a.outcome)
        .with_pretreatment(&str_refs(&a.covariates))
        .with_posttreatment(&str_refs(&a.post_treatment));
    if let Some(id) = &a.id {
        roles = roles.with_unit_id(id);
    }
    if a.model.use_post_treatment && a.post_treatment.is_empty() {
        return Err(Error::Config("--use-post-treatment requires --post-treatment columns".into()));
    }
    if let Some(q) = a.truncate {
        if !(q > 0.0 && q <= 1.0) {
            return Err(Error::Config(format!("--truncate must be in (0, 1], got {q}")));
        }
    }
    let pipeline = PipelineConfig {
        weight_method: a.model.weight_method.into(),
        strata: a.model.strata,
        propensity: PropensityConfig {
            randomized: a.randomized,
            treatment_terms: parse_terms(&a.treatment_terms)?,
            mediator_terms: parse_terms(&a.mediator_terms)?,
        },
        use_post_treatment: a.model.use_post_treatment,
        iptw_method: a.iptw_method.into(),
        family: match a.family {
            FamilyArg::Gaussian => Family::Gaussian,
            FamilyArg::Binomial => Family::BinomialLogit,
        },
        se: match a.se {
            SeArg::Robust => SeMethod::Robust,
            SeArg::None => SeMethod::None,
            SeArg::Bootstrap => SeMethod::Bootstrap {
                reps: a.bootstrap_reps,
                seed: a.seed,
            },
        },
        truncate_quantile: a.truncate,
        normalize: a.normalize,
        exclude_off_support: a.exclude_off_support,
        outcome_covariates: a.outcome_covariates.clone(),
    };
    pipeline.check(&roles)?;
    Ok(RunConfig {
        command: command.to_string(),
        data: a.data.display().to_string(),
        roles,
        pipeline,
    })
}

/// Runs `estimate` (or `diagnose` when `estimate` is false) and returns the report.
pub fn estimate_report(config: &RunConfig, threads: usize) -> Result<Report> {
    let dataset = load_csv(Path::new(&config.data), &config.roles)?;
    let estimate = config.command == "estimate";
    let (weighted, estimates) = if estimate {
        let out = run_pipeline_threads(&dataset, &config.roles, &config.pipeline, threads)?;
        (out.weighted, Some(out.estimates))
    } else {
        (prepare_weights(&dataset, &config.roles, &config.pipeline)?, None)
    };
    Ok(Report {
        schema_version: SCHEMA_VERSION,
        software: Software::current(),
        config: config.clone(),
        validation: weighted.validation.clone(),
        estimates,
        diagnostics: diagnostics(&weighted),
    })
}

fn fmt_estimate(label: &str, e: &Estimate) -> String {
    let mut line = format!("{label:<10} {:>10.4}", e.estimate);
    if let Some(se) = e.se {
        line.push_str(&format!("  se {se:.4}"));
    }
    if let Some((lo, hi)) = e.ci {
        line.push_str(&format!("  95% CI [{lo:.4}, {hi:.4}]"));
    }
    line
}

pub fn text_summary(r: &Report) -> String {
    let mut s = String::new();
    let v = &r.validation;
    s.push_str(&format!(
        "{} {}: n = {} (control Z=0/1: {}/{}, treated Z=0/1: {}/{}), analysed {}\n",
        r.software.name,
        r.config.command,
        v.n,
        v.cell_counts[0][0],
        v.cell_counts[0][1],
        v.cell_counts[1][0],
        v.cell_counts[1][1],
        r.diagnostics.n_analysed
    ));
    for issue in &v.issues {
        s.push_str(&format!("warning: {}\n", issue.describe()));
    }
    for st in &r.diagnostics.strata {
        s.push_str(&format!(
            "strata {:?}: {} requested, {} effective\n",
            st.basis, st.requested, st.effective
        ));
        for m in &st.merges {
            s.push_str(&format!("  merged: {m}\n"));
        }
    }
    for w in &r.diagnostics.weights {
        s.push_str(&format!(
            "weights {}: n {}  ess {:.1}  min {:.4}  max {:.4}\n",
            w.estimand, w.n, w.ess, w.min, w.max
        ));
    }
    if !r.diagnostics.exclusions.is_empty() {
        s.push_str(&format!("excluded units: {}\n", r.diagnostics.exclusions.len()));
    }
    if !r.diagnostics.off_support_excluded.is_empty() {
        s.push_str(&format!(
            "off-support units dropped: {}\n",
            r.diagnostics.off_support_excluded.len()
        ));
    }
    let flagged = r.diagnostics.support.flagged_units();
    if !flagged.is_empty() {
        s.push_str(&format!("units outside common support: {}\n", flagged.len()));
    }
    if !r.diagnostics.support.empty_cells.is_empty() {
        s.push_str(&format!(
            "empty stratum cells: {}\n",
            r.diagnostics.support.empty_cells.len()
        ));
    }
    if let Some(e) = &r.estimates {
        s.push_str(&format!("{:<10} {:>10}\n", "effect", "estimate"));
        s.push_str(&(fmt_estimate("NDE", &e.nde) + "\n"));
        s.push_str(&(fmt_estimate("NIE", &e.nie) + "\n"));
        s.push_str(&(fmt_estimate("TE", &e.total) + "\n"));
        s.push_str(&(fmt_estimate("E(Y_0Z0)", &e.mean_0z0) + "\n"));
        s.push_str(&(fmt_estimate("E(Y_1Z0)", &e.mean_1z0) + "\n"));
        s.push_str(&(fmt_estimate("E(Y_1Z1)", &e.mean_1z1) + "\n"));
        if let Some(f) = e.bootstrap_failures {
            s.push_str(&format!("bootstrap failures: {f}\n"));
        }
        for w in &e.warnings {
            s.push_str(&format!("warning: {w}\n"));
        }
    }
    s
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

/// JSON to `out` with the summary on stdout, or JSON on stdout with the
/// summary on stderr.
fn emit(
    json: &str,
    summary: &str,
    out: Option<&Path>,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> Result<()> {
    match out {
        Some(path) => {
            write_file(path, json)?;
            let _ = stdout.write_all(summary.as_bytes());
        }
        None => {
            let _ = stdout.write_all(json.as_bytes());
            let _ = stderr.write_all(summary.as_bytes());
        }
    }
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

fn resolve_scenario(name: &str) -> Result<Scenario> {
    let path = Path::new(name);
    if path.exists() {
        return Scenario::load(path);
    }
    builtin(name).ok_or_else(|| {
        Error::Scenario(format!(
            "no scenario file '{name}' and no bundled scenario of that name (bundled: {})",
            BUILTIN_NAMES.join(", ")
        ))
    })
}

fn simulate(a: &SimulateArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<()> {
    let scenario = resolve_scenario(&a.scenario)?;
    if a.model.use_post_treatment && scenario.post_treatment.is_none() {
        return Err(Error::Config("--use-post-treatment: scenario has no post-treatment covariate".into()));
    }
    if a.se == SeArg::Bootstrap {
        return Err(Error::Config("simulate supports --se robust or none".into()));
    }
    let mut specs = scenario.estimators.clone();
    if specs.is_empty() {
        specs.push(EstimatorSpec {
            label: "rmpw".into(),
            kind: EstimatorKind::Rmpw,
            weight_method: a.model.weight_method.into(),
            strata: a.model.strata,
            post_treatment: a.model.use_post_treatment,
            true_scores: a.true_scores,
            se: if a.se == SeArg::None { StudySe::None } else { StudySe::Robust },
        });
    }
    if a.baselines {
        specs.push(EstimatorSpec::baseline("path_analysis", EstimatorKind::PathAnalysis));
        if !scenario.covariates.is_empty() {
            specs.push(EstimatorSpec::baseline("petersen", EstimatorKind::Petersen));
        }
    }
    let seed = a.seed.or(scenario.seed).unwrap_or(1);
    let report = run_study(&scenario, &specs, a.reps, a.n, seed, a.model.threads)?;
    let json = to_json(&report);
    let table = report.text_table();
    let mut summary = String::new();
    for e in &report.estimators {
        let nde = e.parameter(crate::simulation::Parameter::Nde);
        let nie = e.parameter(crate::simulation::Parameter::Nie);
        summary.push_str(&format!(
            "{}: NDE bias {:.4} (sd {:.4}), NIE bias {:.4} (sd {:.4}), failures {}/{}\n",
            e.estimator, nde.bias, nde.sd, nie.bias, nie.sd, e.failures, report.reps
        ));
    }
    if let Some(out) = &a.out {
        write_file(&out.with_extension("txt"), &table)?;
    }
    emit(&json, &summary, a.out.as_deref(), stdout, stderr)
}

fn dispatch(cli: Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Estimate(a) => {
            let config = run_config("estimate", &a)?;
            let report = estimate_report(&config, a.model.threads)?;
            emit(&to_json(&report), &text_summary(&report), a.out.as_deref(), stdout, stderr)
        }
        Command::Diagnose(a) => {
            let config = run_config("diagnose", &a)?;
            let report = estimate_report(&config, a.model.threads)?;
            emit(&to_json(&report), &text_summary(&report), a.out.as_deref(), stdout, stderr)
        }
        Command::Simulate(a) => simulate(&a, stdout, stderr),
    }
}

pub fn exit_code(category: ErrorCategory) -> i32 {
    match category {
        ErrorCategory::Usage => 1,
        ErrorCategory::Data | ErrorCategory::Numeric => 2,
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { stdout.write_all(text.as_bytes()) } else { stderr.write_all(text.as_bytes()) };
            return code;
        }
    };
    match dispatch(cli, stdout, stderr) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error [{}]: {e}", e.category_name());
            exit_code(e.category())
        }
    }
}
