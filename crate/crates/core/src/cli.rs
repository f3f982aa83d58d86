//! The `asep` command line: JSON run configuration, mode dispatch and output.

use std::ffi::OsString;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::AsepError;
use crate::kernel::{GeneralRhoProfile, RhoProfile};
use crate::oracle::{run_identity_suite, IdentityReport, SuiteConfig};
use crate::quadrature::{
    evaluate_cdf_grid, evaluate_pmf_grid, CdfResult, EvalRequest, InitialData, DEFAULT_QUAD_POINTS,
    DEFAULT_TUPLE_BUDGET,
};
use crate::scalar::{parse_rational, HopRates, ModelParams, SiteSet};
use crate::simulator::{estimate_cdf, EmpiricalCdf, SimConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

/// Environment variable holding the worker thread count.
pub const THREADS_ENV: &str = "ASEP_THREADS";

pub const DEFAULT_TOLERANCE: f64 = 1e-6;
pub const DEFAULT_SIM_TRIALS: u64 = 10_000;
pub const DEFAULT_ABS_SLACK: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Identities,
    Cdf,
    Pmf,
    Simulate,
    Compare,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<Mode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<ProfileConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval: Option<EvalConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim: Option<SimSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub identities: Option<IdentitiesSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compare: Option<CompareSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub p: String,
    pub q: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum ProfileConfig {
    Periodic {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        m: Option<usize>,
        rho: Vec<String>,
    },
    General {
        rho: Vec<String>,
    },
    Deterministic {
        y: Vec<i64>,
    },
}

/// A single particle index or a list of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParticleIndices {
    One(usize),
    Many(Vec<usize>),
}

impl ParticleIndices {
    pub fn to_vec(&self) -> Vec<usize> {
        match self {
            ParticleIndices::One(l) => vec![*l],
            ParticleIndices::Many(ls) => ls.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub l: ParticleIndices,
    pub t: f64,
    pub x_min: i64,
    pub x_max: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_max: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quad_points: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trials: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdentitiesSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trials: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_max: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_max: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_max: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abs_slack: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<Format>,
}

/// A configuration problem tied to a config key.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    fn new(field: &str, message: impl fmt::Display) -> Self {
        ConfigError {
            field: field.to_string(),
            message: message.to_string(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug)]
pub enum RunError {
    Config(ConfigError),
    Engine(AsepError),
    Io(String),
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunError::Config(e) => write!(f, "config error: {e}"),
            RunError::Engine(e) => write!(f, "{e}"),
            RunError::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        RunError::Config(e)
    }
}

impl From<AsepError> for RunError {
    fn from(e: AsepError) -> Self {
        RunError::Engine(e)
    }
}

impl RunConfig {
    /// Parses JSON, reporting the dotted path of the offending key.
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let field = if path == "." {
                "config".to_string()
            } else {
                path
            };
            ConfigError::new(&field, e.into_inner())
        })
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new("--config", format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    fn model_params(&self) -> Result<ModelParams, ConfigError> {
        let rates = self.hop_rates()?;
        ModelParams::from_rates(rates).map_err(|e| ConfigError::new("model.q", e))
    }

    fn hop_rates(&self) -> Result<HopRates, ConfigError> {
        let model = self
            .model
            .as_ref()
            .ok_or_else(|| ConfigError::new("model", "missing"))?;
        let p = parse_rational(&model.p).map_err(|e| ConfigError::new("model.p", e))?;
        let q = parse_rational(&model.q).map_err(|e| ConfigError::new("model.q", e))?;
        HopRates::new(p, q).map_err(|e| ConfigError::new("model", e))
    }

    fn initial_data(&self) -> Result<InitialData, ConfigError> {
        match self
            .profile
            .as_ref()
            .ok_or_else(|| ConfigError::new("profile", "missing"))?
        {
            ProfileConfig::Periodic { m, rho } => {
                if let Some(m) = m {
                    if *m != rho.len() {
                        return Err(ConfigError::new(
                            "profile.m",
                            format!("period {m} does not match {} rho values", rho.len()),
                        ));
                    }
                }
                let values: Vec<&str> = rho.iter().map(String::as_str).collect();
                RhoProfile::parse(&values)
                    .map(InitialData::Periodic)
                    .map_err(|e| ConfigError::new("profile.rho", e))
            }
            ProfileConfig::General { rho } => {
                let values: Vec<&str> = rho.iter().map(String::as_str).collect();
                GeneralRhoProfile::parse(&values)
                    .map(InitialData::General)
                    .map_err(|e| ConfigError::new("profile.rho", e))
            }
            ProfileConfig::Deterministic { y } => SiteSet::new(y.clone())
                .map(InitialData::Deterministic)
                .map_err(|e| ConfigError::new("profile.y", e)),
        }
    }

    fn eval_section(&self) -> Result<&EvalConfig, ConfigError> {
        let eval = self
            .eval
            .as_ref()
            .ok_or_else(|| ConfigError::new("eval", "missing"))?;
        if eval.x_min > eval.x_max {
            return Err(ConfigError::new("eval.x_max", "must be >= eval.x_min"));
        }
        if !(eval.t >= 0.0 && eval.t.is_finite()) {
            return Err(ConfigError::new("eval.t", "must be finite and >= 0"));
        }
        let ls = eval.l.to_vec();
        if ls.is_empty() || ls.contains(&0) {
            return Err(ConfigError::new("eval.l", "particle indices must be >= 1"));
        }
        Ok(eval)
    }

    fn eval_request(&self) -> Result<(EvalRequest, Vec<usize>), ConfigError> {
        let eval = self.eval_section()?;
        let params = self.model_params()?;
        let initial = self.initial_data()?;
        let ls = eval.l.to_vec();
        let mut request = EvalRequest::new(ls[0], eval.x_min, eval.t, initial, params);
        request.k_max = eval.k_max;
        request.tolerance = eval.tolerance.unwrap_or(DEFAULT_TOLERANCE);
        request.quad_points = eval.quad_points.unwrap_or(DEFAULT_QUAD_POINTS);
        request.radius = eval.radius;
        request.tuple_budget = DEFAULT_TUPLE_BUDGET;
        if !(request.tolerance > 0.0) {
            return Err(ConfigError::new("eval.tolerance", "must be positive"));
        }
        if request.quad_points < 8 || request.quad_points % 2 != 0 {
            return Err(ConfigError::new(
                "eval.quad_points",
                "must be even and >= 8",
            ));
        }
        if let Some(k) = eval.k_max {
            if ls.iter().any(|&l| k < l) {
                return Err(ConfigError::new(
                    "eval.k_max",
                    "must be >= every requested l",
                ));
            }
        }
        request.contour().map_err(|e| {
            ConfigError::new(
                if eval.radius.is_some() {
                    "eval.radius"
                } else {
                    "model"
                },
                e,
            )
        })?;
        Ok((request, ls))
    }

    fn sim_config(&self) -> Result<SimConfig, ConfigError> {
        let eval = self.eval_section()?;
        let rates = self.hop_rates()?;
        let initial = self.initial_data()?;
        let sim = self.sim.clone().unwrap_or_default();
        let ls = eval.l.to_vec();
        let l_max = *ls.iter().max().expect("non-empty");
        let mut config = SimConfig::new(rates, eval.t, initial, l_max, eval.x_min, eval.x_max);
        config.trials = sim.trials.unwrap_or(DEFAULT_SIM_TRIALS);
        config.horizon = sim.horizon;
        config.seed = sim.seed.unwrap_or(0);
        if config.trials == 0 {
            return Err(ConfigError::new("sim.trials", "must be >= 1"));
        }
        if config.horizon == Some(0) {
            return Err(ConfigError::new("sim.horizon", "must be >= 1"));
        }
        config
            .validate()
            .map_err(|e| ConfigError::new("profile", e))?;
        Ok(config)
    }

    fn suite_config(&self) -> SuiteConfig {
        let section = self.identities.clone().unwrap_or_default();
        let defaults = SuiteConfig::default();
        SuiteConfig {
            seed: section.seed.unwrap_or(defaults.seed),
            trials: section.trials.unwrap_or(defaults.trials),
            k_max: section.k_max.unwrap_or(defaults.k_max),
            m_max: section.m_max.unwrap_or(defaults.m_max),
            n_max: section.n_max.unwrap_or(defaults.n_max),
            perturb_phi: false,
        }
    }

    fn format(&self) -> Format {
        self.output
            .as_ref()
            .and_then(|o| o.format)
            .unwrap_or(Format::Json)
    }

    fn abs_slack(&self) -> Result<f64, ConfigError> {
        let slack = self
            .compare
            .as_ref()
            .and_then(|c| c.abs_slack)
            .unwrap_or(DEFAULT_ABS_SLACK);
        if !(slack >= 0.0 && slack.is_finite()) {
            return Err(ConfigError::new(
                "compare.abs_slack",
                "must be finite and >= 0",
            ));
        }
        Ok(slack)
    }
}

/// One `(l, x)` row of a formula-vs-simulation comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub l: usize,
    pub x: i64,
    pub formula: f64,
    pub imag_residual: f64,
    pub tail_estimate: f64,
    pub quad_error_estimate: f64,
    pub series_converged: bool,
    pub quadrature_converged: bool,
    pub p_hat: f64,
    pub stderr: f64,
    pub discrepancy: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub abs_slack: f64,
    pub trials: u64,
    pub horizon: usize,
    pub all_pass: bool,
    pub rows: Vec<CompareRow>,
}

/// `pass = |formula - p̂| <= 3·stderr + abs_slack`.
pub fn compare_results(
    formula: &[CdfResult],
    empirical: &EmpiricalCdf,
    abs_slack: f64,
) -> CompareReport {
    let rows: Vec<CompareRow> = formula
        .iter()
        .map(|r| {
            let pt = empirical
                .get(r.l, r.x)
                .expect("simulation covers every formula point");
            let discrepancy = r.value - pt.p_hat;
            CompareRow {
                l: r.l,
                x: r.x,
                formula: r.value,
                imag_residual: r.imag_residual,
                tail_estimate: r.tail_estimate,
                quad_error_estimate: r.quad_error_estimate,
                series_converged: r.series_converged,
                quadrature_converged: r.quadrature_converged,
                p_hat: pt.p_hat,
                stderr: pt.stderr,
                discrepancy,
                pass: discrepancy.abs() <= 3.0 * pt.stderr + abs_slack,
            }
        })
        .collect();
    CompareReport {
        abs_slack,
        trials: empirical.trials,
        horizon: empirical.horizon,
        all_pass: rows.iter().all(|r| r.pass),
        rows,
    }
}

#[derive(Serialize)]
struct CdfRow {
    l: usize,
    x: i64,
    value: f64,
    imag_residual: f64,
    tail_estimate: f64,
    quad_error_estimate: f64,
    series_converged: bool,
    quadrature_converged: bool,
    terms: usize,
    radius: f64,
}

impl From<&CdfResult> for CdfRow {
    fn from(r: &CdfResult) -> Self {
        CdfRow {
            l: r.l,
            x: r.x,
            value: r.value,
            imag_residual: r.imag_residual,
            tail_estimate: r.tail_estimate,
            quad_error_estimate: r.quad_error_estimate,
            series_converged: r.series_converged,
            quadrature_converged: r.quadrature_converged,
            terms: r.terms.len(),
            radius: r.radius,
        }
    }
}

#[derive(Serialize)]
struct PmfRow {
    l: usize,
    x: i64,
    value: f64,
    cdf_upper: f64,
    cdf_lower: f64,
    converged: bool,
}

#[derive(Serialize)]
struct IdentityRow<'a> {
    identity: &'a str,
    instance: String,
    left: &'a str,
    right: &'a str,
    equal: bool,
}

fn to_csv<T: Serialize>(rows: impl IntoIterator<Item = T>) -> Result<String, RunError> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in rows {
        writer
            .serialize(row)
            .map_err(|e| RunError::Io(e.to_string()))?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| RunError::Io(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("results serialize");
    text.push('\n');
    text
}

/// Result of [`run`]: the rendered output and the exit code it implies.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub text: String,
    pub exit_code: i32,
    pub summary: String,
    pub warnings: Vec<String>,
}

/// Runs one mode and renders its output in the configured format.
pub fn run(config: &RunConfig, mode: Mode) -> Result<RunOutput, RunError> {
    let format = config.format();
    let mut warnings = Vec::new();
    match mode {
        Mode::Identities => {
            let suite = config.suite_config();
            let reports = run_identity_suite(&suite)?;
            let failures = reports.iter().filter(|r| !r.equal).count();
            let text = match format {
                Format::Json => identities_json_lines(&reports),
                Format::Csv => to_csv(reports.iter().map(|r| IdentityRow {
                    identity: &r.identity,
                    instance: serde_json::to_string(&r.instance).expect("instance serializes"),
                    left: &r.left,
                    right: &r.right,
                    equal: r.equal,
                }))?,
            };
            Ok(RunOutput {
                text,
                exit_code: if failures == 0 { EXIT_OK } else { EXIT_FAILED },
                summary: format!("identities: {} checks, {failures} failed", reports.len()),
                warnings,
            })
        }
        Mode::Cdf => {
            let (request, ls) = config.eval_request()?;
            let eval = config.eval_section()?;
            let results = evaluate_cdf_grid(&request, &ls, eval.x_min..=eval.x_max)?;
            let unconverged = results.iter().filter(|r| !r.converged()).count();
            if unconverged > 0 {
                warnings.push(format!(
                    "{unconverged} points did not meet the convergence tolerance"
                ));
            }
            let text = match format {
                Format::Json => to_json(&results),
                Format::Csv => to_csv(results.iter().map(CdfRow::from))?,
            };
            Ok(RunOutput {
                text,
                exit_code: EXIT_OK,
                summary: format!("cdf: {} points", results.len()),
                warnings,
            })
        }
        Mode::Pmf => {
            let (request, ls) = config.eval_request()?;
            let eval = config.eval_section()?;
            let results = evaluate_pmf_grid(&request, &ls, eval.x_min..=eval.x_max)?;
            let text = match format {
                Format::Json => to_json(&results),
                Format::Csv => to_csv(results.iter().map(|r| PmfRow {
                    l: r.l,
                    x: r.x,
                    value: r.value,
                    cdf_upper: r.upper.value,
                    cdf_lower: r.lower.value,
                    converged: r.converged(),
                }))?,
            };
            Ok(RunOutput {
                text,
                exit_code: EXIT_OK,
                summary: format!("pmf: {} points", results.len()),
                warnings,
            })
        }
        Mode::Simulate => {
            let sim = config.sim_config()?;
            warnings.extend(sim.horizon_warning());
            let cdf = estimate_cdf(&sim)?;
            let text = match format {
                Format::Json => to_json(&cdf),
                Format::Csv => cdf.to_csv()?,
            };
            Ok(RunOutput {
                text,
                exit_code: EXIT_OK,
                summary: format!("simulate: {} trials, horizon {}", cdf.trials, cdf.horizon),
                warnings,
            })
        }
        Mode::Compare => {
            let (request, ls) = config.eval_request()?;
            let sim = config.sim_config()?;
            let slack = config.abs_slack()?;
            warnings.extend(sim.horizon_warning());
            let eval = config.eval_section()?;
            let formula = evaluate_cdf_grid(&request, &ls, eval.x_min..=eval.x_max)?;
            let empirical = estimate_cdf(&sim)?;
            let report = compare_results(&formula, &empirical, slack);
            let failures = report.rows.iter().filter(|r| !r.pass).count();
            let text = match format {
                Format::Json => to_json(&report),
                Format::Csv => to_csv(&report.rows)?,
            };
            Ok(RunOutput {
                text,
                exit_code: if report.all_pass {
                    EXIT_OK
                } else {
                    EXIT_FAILED
                },
                summary: format!("compare: {} points, {failures} failed", report.rows.len()),
                warnings,
            })
        }
    }
}

fn identities_json_lines(reports: &[IdentityReport]) -> String {
    let mut text = String::new();
    for r in reports {
        text.push_str(&serde_json::to_string(r).expect("report serializes"));
        text.push('\n');
    }
    text
}

#[derive(Debug, Parser)]
#[command(
    name = "asep",
    version,
    about = "Exact and Monte Carlo distributions of ASEP particle positions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the exact identity suite
    Identities(CommonArgs),
    /// Evaluate P(x_l(t) <= x) over the x range
    Cdf(CommonArgs),
    /// Evaluate P(x_l(t) = x) over the x range
    Pmf(CommonArgs),
    /// Monte Carlo estimate of P(x_l(t) <= x)
    Simulate(CommonArgs),
    /// Formula against simulation
    Compare(CommonArgs),
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// JSON run configuration
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    kmax: Option<usize>,
    #[arg(long)]
    trials: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
}

impl Command {
    fn split(self) -> (Mode, CommonArgs) {
        match self {
            Command::Identities(a) => (Mode::Identities, a),
            Command::Cdf(a) => (Mode::Cdf, a),
            Command::Pmf(a) => (Mode::Pmf, a),
            Command::Simulate(a) => (Mode::Simulate, a),
            Command::Compare(a) => (Mode::Compare, a),
        }
    }
}

/// Loads the config and folds the command-line overrides into it.
fn resolve_config(mode: Mode, args: &CommonArgs) -> Result<RunConfig, ConfigError> {
    let mut config = match &args.config {
        Some(path) => RunConfig::from_path(path)?,
        None if mode == Mode::Identities => RunConfig::default(),
        None => return Err(ConfigError::new("--config", "required for this mode")),
    };
    config.mode = Some(mode);
    if let Some(seed) = args.seed {
        config.sim.get_or_insert_with(Default::default).seed = Some(seed);
        config.identities.get_or_insert_with(Default::default).seed = Some(seed);
    }
    if let Some(trials) = args.trials {
        if mode == Mode::Identities {
            let trials =
                usize::try_from(trials).map_err(|_| ConfigError::new("--trials", "too large"))?;
            config
                .identities
                .get_or_insert_with(Default::default)
                .trials = Some(trials);
        } else {
            config.sim.get_or_insert_with(Default::default).trials = Some(trials);
        }
    }
    if let Some(kmax) = args.kmax {
        if mode == Mode::Identities {
            config.identities.get_or_insert_with(Default::default).k_max = Some(kmax);
        } else if let Some(eval) = config.eval.as_mut() {
            eval.k_max = Some(kmax);
        }
    }
    if args.out.is_some() || args.format.is_some() {
        let output = config.output.get_or_insert_with(Default::default);
        if let Some(out) = &args.out {
            output.path = Some(out.clone());
        }
        if let Some(format) = args.format {
            output.format = Some(format);
        }
    }
    Ok(config)
}

fn configure_threads() -> Result<(), ConfigError> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| {
            ConfigError::new(
                THREADS_ENV,
                format!("expected a positive integer, got {value:?}"),
            )
        })?;
    // a second initialisation in the same process keeps the first pool
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global();
    Ok(())
}

fn write_output(config: &RunConfig, text: &str) -> Result<(), RunError> {
    match config.output.as_ref().and_then(|o| o.path.as_ref()) {
        Some(path) => {
            std::fs::write(path, text).map_err(|e| RunError::Io(format!("{}: {e}", path.display())))
        }
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| RunError::Io(e.to_string())),
    }
}

/// Entry point of the `asep` binary; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("config error: {e}");
        return EXIT_CONFIG;
    }
    let (mode, args) = cli.command.split();
    let config = match resolve_config(mode, &args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e}");
            return EXIT_CONFIG;
        }
    };
    let outcome = run(&config, mode).and_then(|out| {
        write_output(&config, &out.text)?;
        Ok(out)
    });
    match outcome {
        Ok(out) => {
            for w in &out.warnings {
                eprintln!("warning: {w}");
            }
            eprintln!("{}", out.summary);
            out.exit_code
        }
        Err(e) => {
            eprintln!("{e}");
            EXIT_CONFIG
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"{
        "model": {"p": "3/10", "q": "7/10"},
        "profile": {"type": "periodic", "m": 2, "rho": ["1/4", "1/2"]},
        "eval": {"l": [1, 2], "t": 1.0, "x_min": -2, "x_max": 1, "k_max": 3, "tolerance": 1e-4},
        "sim": {"trials": 200, "seed": 3},
        "output": {"format": "csv"}
    }"#;

    #[test]
    fn round_trip() {
        let config = RunConfig::from_json(SAMPLE).unwrap();
        let again = RunConfig::from_json(&config.to_json()).unwrap();
        assert_eq!(config, again);
        assert_eq!(
            config.eval.as_ref().unwrap().l,
            ParticleIndices::Many(vec![1, 2])
        );
    }

    #[test]
    fn errors_name_the_field() {
        let bad = SAMPLE.replace("\"t\": 1.0", "\"t\": \"soon\"");
        assert_eq!(RunConfig::from_json(&bad).unwrap_err().field, "eval.t");
        let bad = SAMPLE.replace("\"seed\": 3", "\"sed\": 3");
        assert_eq!(RunConfig::from_json(&bad).unwrap_err().field, "sim.sed");
        let bad = SAMPLE.replace("\"7/10\"", "\"3/4\"");
        let config = RunConfig::from_json(&bad).unwrap();
        assert_eq!(config.eval_request().unwrap_err().field, "model");
        let bad = SAMPLE.replace("\"1/4\", \"1/2\"", "\"1/4\", \"x\"");
        let config = RunConfig::from_json(&bad).unwrap();
        assert_eq!(config.eval_request().unwrap_err().field, "profile.rho");
        let bad = SAMPLE.replace("\"m\": 2", "\"m\": 3");
        let config = RunConfig::from_json(&bad).unwrap();
        assert_eq!(config.eval_request().unwrap_err().field, "profile.m");
    }

    #[test]
    fn tau_one_is_a_config_error() {
        let bad = SAMPLE
            .replace("\"3/10\"", "\"1/2\"")
            .replace("\"7/10\"", "\"1/2\"");
        let config = RunConfig::from_json(&bad).unwrap();
        assert_eq!(config.eval_request().unwrap_err().field, "model.q");
        // the simulator accepts any rates
        assert!(config.sim_config().is_ok());
    }

    #[test]
    fn compare_rule() {
        let config = RunConfig::from_json(SAMPLE).unwrap();
        let out = run(&config, Mode::Compare).unwrap();
        assert!(out
            .text
            .starts_with("l,x,formula,imag_residual,tail_estimate,quad_error_estimate,"));
        let (request, ls) = config.eval_request().unwrap();
        let formula = evaluate_cdf_grid(&request, &ls, -2..=1).unwrap();
        let empirical = estimate_cdf(&config.sim_config().unwrap()).unwrap();
        let tight = compare_results(&formula, &empirical, 0.0);
        for row in &tight.rows {
            assert_eq!(row.pass, row.discrepancy.abs() <= 3.0 * row.stderr);
        }
        let loose = compare_results(&formula, &empirical, 1.0);
        assert!(loose.all_pass);
    }
}
