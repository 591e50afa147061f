//! `aol`: simulate trials, fit and apply AOL treatment rules, estimate
//! values, tune by cross-validation and run the simulation benchmarks.

mod config;

use std::fs::File;
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use thiserror::Error;

use aol_core::data::{fmt_machine, load_covariates, read_dataset, simulate_scenario, Arm, Scenario, ScenarioSpec, TrialDataset};
use aol_core::evaluate::{
    aipwe_value, cross_validate, default_grid, ipw_value, nested_cv, power_grid, run_benchmark, train, BenchmarkRow,
    BenchmarkSpec, GSource, PropensitySource, TrainingSpec, BENCHMARK_HEADER,
};
use aol_core::learner::{decision_values, DecisionRule, FitConfig, Method};
use aol_core::losses::{excess_bound_check, ConditionalRisk, SurrogateLoss};
use aol_core::optimize::{SolverOptions, SolverStatus};
use aol_core::residuals::{GEstimator, GKind, GVariant, LinearRegressionModel};
use aol_core::AolError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Aol(#[from] AolError),
}

impl CliError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "aol", version, about = "Augmented outcome-weighted learning for treatment regimes", args_override_self = true)]
struct Cli {
    /// Worker threads for cv and bench (default: one per core)
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Seed for every random choice; identical seeds give identical output
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Machine-readable JSON output with 17 significant digits
    #[arg(long, global = true)]
    json: bool,
    /// File of `key = value` defaults; command-line flags take precedence
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a two-arm trial from one of the four scenarios
    Simulate(SimulateArgs),
    /// Fit a treatment rule, tuning by cross-validation when a grid is given
    Fit(FitArgs),
    /// Decision values and recommended arms for new covariates
    Predict(PredictArgs),
    /// Estimated value of a set of recommendations
    Value(ValueArgs),
    /// Cross-validated (or nested cross-validated) tuning report
    Cv(CvArgs),
    /// Simulation benchmark presets
    Bench(BenchArgs),
    /// Check the excess-risk inequalities of the surrogate losses on a grid
    RiskCheck(RiskArgs),
}

const SUBCOMMANDS: [&str; 7] = ["simulate", "fit", "predict", "value", "cv", "bench", "risk-check"];

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
    scenario: u8,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 5)]
    p: usize,
    /// Probability of arm +1
    #[arg(long, default_value_t = 0.5)]
    allocation: f64,
    /// Output CSV (default: stdout)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DataArgs {
    /// CSV with columns x1..xp, a, r and optionally pi
    #[arg(long)]
    data: PathBuf,
    /// Probability of arm +1 when the data has no pi column
    #[arg(long)]
    propensity: Option<f64>,
    /// Replace pi by a logistic-regression estimate
    #[arg(long)]
    estimate_propensity: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum GEstimatorArg {
    Pooled,
    Armwise,
}

#[derive(Args, Debug)]
struct TuningArgs {
    #[arg(long, default_value = "aol_linear", value_parser = parse_method)]
    method: Method,
    /// Baseline: g_tilde, g1 or g2
    #[arg(long, default_value = "g_tilde", value_parser = parse_gkind)]
    g: GKind,
    #[arg(long, value_enum, default_value = "pooled")]
    g_estimator: GEstimatorArg,
    #[arg(long, default_value = "huberized_hinge", value_parser = parse_loss)]
    loss: SurrogateLoss,
    /// Ridge/RKHS penalty (lambda2 for the selection methods)
    #[arg(long)]
    lambda: Option<f64>,
    /// L1 penalty of the selection methods
    #[arg(long)]
    lambda1: Option<f64>,
    /// Gaussian kernel width (default: median heuristic)
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    lambda_grid: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    lambda1_grid: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    sigma_grid: Vec<f64>,
    /// Tune over the default grid for the method
    #[arg(long)]
    grid: bool,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    /// Restarts for the scaled-kernel fit
    #[arg(long, default_value_t = 1)]
    n_starts: usize,
    #[arg(long, default_value_t = 500)]
    max_iterations: usize,
    #[arg(long, default_value_t = 1e-6)]
    tolerance: f64,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    tuning: TuningArgs,
    /// Where to write the model JSON
    #[arg(long)]
    model_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// CSV with columns x1..xp (other columns are ignored)
    #[arg(long)]
    data: PathBuf,
    /// Output CSV with columns f, d (default: stdout)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Estimator {
    Ipw,
    IpwUnnormalized,
    Aipwe,
}

#[derive(Args, Debug)]
struct ValueArgs {
    #[command(flatten)]
    data: DataArgs,
    /// CSV with a column d of recommended arms (+1/-1), one row per subject
    #[arg(long)]
    predictions: PathBuf,
    #[arg(long, value_enum, default_value = "ipw")]
    estimator: Estimator,
}

#[derive(Args, Debug)]
struct CvArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    tuning: TuningArgs,
    /// Report the nested cross-validated value instead of the tuning table
    #[arg(long)]
    nested: bool,
    #[arg(long, default_value_t = 10)]
    inner_folds: usize,
}

#[derive(Clone, Copy, Debug, ValueEnum, PartialEq)]
enum Preset {
    Table1,
    #[value(name = "table2-aol")]
    Table2Aol,
    #[value(name = "table3-aol")]
    Table3Aol,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(value_enum)]
    preset: Preset,
    /// Restrict to one scenario
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
    scenario: Option<u8>,
    /// Restrict to one training size
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, default_value_t = 100)]
    reps: usize,
    #[arg(long, default_value_t = 10_000)]
    test_n: usize,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    /// Restrict to these methods
    #[arg(long, value_delimiter = ',', value_parser = parse_method)]
    methods: Vec<Method>,
    /// Output CSV (default: stdout)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RiskArgs {
    /// Losses to check (default: all seven)
    #[arg(long, value_delimiter = ',', value_parser = parse_loss)]
    losses: Vec<SurrogateLoss>,
    /// Grid points per axis
    #[arg(long, default_value_t = 200)]
    grid_size: usize,
    /// Upper end of both axes; the grid spans [0, max]
    #[arg(long, default_value_t = 10.0)]
    max: f64,
    /// Check a single point instead of the grid (needs --eta2)
    #[arg(long, requires = "eta2")]
    eta1: Option<f64>,
    #[arg(long, requires = "eta1")]
    eta2: Option<f64>,
    /// Per-point CSV (default: summary only)
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_method(s: &str) -> Result<Method, String> {
    Method::from_name(s).ok_or_else(|| {
        let names: Vec<&str> = Method::ALL.iter().map(|m| m.name()).collect();
        format!("unknown method `{s}` (expected one of {})", names.join(", "))
    })
}

fn parse_loss(s: &str) -> Result<SurrogateLoss, String> {
    SurrogateLoss::from_name(s).ok_or_else(|| {
        let names: Vec<&str> = SurrogateLoss::ALL.iter().map(|l| l.name()).collect();
        format!("unknown loss `{s}` (expected one of {})", names.join(", "))
    })
}

fn parse_gkind(s: &str) -> Result<GKind, String> {
    GKind::from_name(s).ok_or_else(|| format!("unknown baseline `{s}` (expected g_tilde, g1 or g2)"))
}

/// 4 significant digits.
fn fmt_human(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let mag = v.abs().log10().floor() as i32;
    if (-3..5).contains(&mag) {
        format!("{:.*}", (3 - mag).max(0) as usize, v)
    } else {
        format!("{v:.3e}")
    }
}

struct Ctx {
    seed: u64,
    json: bool,
}

fn output(path: Option<&Path>) -> CliResult<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| CliError::io(p, e))?)),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn write_text(path: Option<&Path>, text: &str) -> CliResult<()> {
    let mut out = output(path)?;
    let target = path.unwrap_or(Path::new("<stdout>"));
    out.write_all(text.as_bytes()).map_err(|e| CliError::io(target, e))?;
    out.flush().map_err(|e| CliError::io(target, e))
}

fn load_data(args: &DataArgs) -> CliResult<(TrialDataset, PropensitySource)> {
    let file = File::open(&args.data).map_err(|e| CliError::io(&args.data, e))?;
    let default = match (args.propensity, args.estimate_propensity) {
        (Some(p), _) => Some(p),
        // placeholder, replaced by the estimate before use
        (None, true) => Some(0.5),
        (None, false) => None,
    };
    let data = read_dataset(file, default).map_err(|e| match e {
        AolError::MissingColumn(c) if c == "pi" => CliError::Usage(format!(
            "{}: no `pi` column; pass --propensity <p> or --estimate-propensity",
            args.data.display()
        )),
        other => CliError::Aol(other),
    })?;
    let source = if args.estimate_propensity {
        PropensitySource::Estimated
    } else {
        PropensitySource::Known
    };
    Ok((data, source))
}

fn training_spec(t: &TuningArgs, propensity: PropensitySource) -> TrainingSpec {
    TrainingSpec {
        method: t.method,
        g: GSource::Fitted {
            variant: GVariant {
                kind: t.g,
                estimator: match t.g_estimator {
                    GEstimatorArg::Pooled => GEstimator::PooledWeighted,
                    GEstimatorArg::Armwise => GEstimator::ArmwisePlugin,
                },
            },
        },
        propensity,
    }
}

fn base_config(t: &TuningArgs, seed: u64) -> FitConfig {
    FitConfig {
        loss: t.loss,
        lambda: t.lambda.unwrap_or(FitConfig::default().lambda),
        lambda1: t.lambda1.unwrap_or(0.0),
        sigma: t.sigma,
        eta0: None,
        solver: SolverOptions {
            max_iterations: t.max_iterations,
            gradient_tolerance: t.tolerance,
            ..SolverOptions::default()
        },
        n_starts: t.n_starts,
        seed,
    }
}

/// A single config when the penalties are fixed, otherwise the tuning grid.
fn configs(t: &TuningArgs, data: &TrialDataset, seed: u64) -> CliResult<Vec<FitConfig>> {
    let base = base_config(t, seed);
    let vs = t.method.is_variable_selection();
    let lists_given = !(t.lambda_grid.is_empty() && t.lambda1_grid.is_empty() && t.sigma_grid.is_empty());
    let fixed = t.lambda.is_some() && (!vs || t.lambda1.is_some());
    if fixed && !lists_given && !t.grid {
        return Ok(vec![base]);
    }
    if !lists_given {
        return Ok(default_grid(t.method, data, &base)?);
    }
    let n = data.n();
    let pick = |list: &[f64], single: Option<f64>, default: Vec<f64>| -> Vec<f64> {
        if !list.is_empty() {
            list.to_vec()
        } else if let Some(v) = single {
            vec![v]
        } else {
            default
        }
    };
    let lambdas = pick(&t.lambda_grid, t.lambda, power_grid(n, -8..=8));
    let lambda1s = if vs {
        pick(&t.lambda1_grid, t.lambda1, power_grid(n, (-8..=8).step_by(2)))
    } else {
        vec![0.0]
    };
    let sigmas: Vec<Option<f64>> = if t.sigma_grid.is_empty() {
        vec![t.sigma]
    } else {
        t.sigma_grid.iter().map(|s| Some(*s)).collect()
    };
    let mut grid = Vec::new();
    for &l1 in &lambda1s {
        for &s in &sigmas {
            for &l in &lambdas {
                grid.push(FitConfig {
                    lambda: l,
                    lambda1: l1,
                    sigma: s,
                    ..base.clone()
                });
            }
        }
    }
    Ok(grid)
}

fn config_json(c: &FitConfig) -> serde_json::Value {
    json!({"lambda": c.lambda, "lambda1": c.lambda1, "sigma": c.sigma, "loss": c.loss.name()})
}

fn config_human(c: &FitConfig, method: Method) -> String {
    let mut s = format!("lambda={}", fmt_human(c.lambda));
    if method.is_variable_selection() {
        s.push_str(&format!(" lambda1={}", fmt_human(c.lambda1)));
    }
    if let Some(sigma) = c.sigma {
        s.push_str(&format!(" sigma={}", fmt_human(sigma)));
    }
    s
}

fn status_name(s: SolverStatus) -> &'static str {
    match s {
        SolverStatus::Converged => "converged",
        SolverStatus::MaxIterations => "max_iterations",
        SolverStatus::Stalled => "stalled",
    }
}

fn cmd_simulate(a: &SimulateArgs, ctx: &Ctx) -> CliResult<()> {
    let scenario = Scenario::from_id(a.scenario).map_err(|e| CliError::Usage(e.to_string()))?;
    let spec = ScenarioSpec::randomized(scenario, a.p, a.allocation, a.n, ctx.seed);
    let data = simulate_scenario(&spec).map_err(|e| match e {
        AolError::InvalidInput(m) => CliError::Usage(m),
        other => other.into(),
    })?;
    let mut buf = Vec::new();
    data.write_csv(&mut buf)?;
    write_text(a.out.as_deref(), &String::from_utf8_lossy(&buf))
}

fn cmd_fit(a: &FitArgs, ctx: &Ctx) -> CliResult<()> {
    let (data, propensity) = load_data(&a.data)?;
    let spec = training_spec(&a.tuning, propensity);
    let grid = configs(&a.tuning, &data, ctx.seed)?;
    let (chosen, cv) = if grid.len() == 1 {
        (grid[0].clone(), None)
    } else {
        let report = cross_validate(&data, &spec, &grid, a.tuning.folds, ctx.seed)?;
        (report.chosen_config().clone(), Some(report))
    };
    let out = train(&data, &spec, &chosen)?;
    if let Some(path) = &a.model_out {
        write_text(Some(path), &out.rule.to_json()?)?;
    }
    let selected = out.rule.selected_covariates();
    let cv_value = cv.as_ref().map(|r| r.values[r.chosen]);
    let text = if ctx.json {
        let v = json!({
            "method": a.tuning.method.name(),
            "g": spec.g.label(),
            "chosen": config_json(&chosen),
            "cv_value": cv_value.map(fmt_machine),
            "grid_size": grid.len(),
            "objective": fmt_machine(out.objective),
            "iterations": out.iterations,
            "status": status_name(out.status),
            "selected_covariates": selected.as_ref().map(|s| s.iter().map(|j| format!("x{}", j + 1)).collect::<Vec<_>>()),
            "model": a.model_out.as_ref().map(|p| p.display().to_string()),
        });
        format!("{}\n", serde_json::to_string_pretty(&v).expect("json"))
    } else {
        let mut t = format!("method: {}\ng: {}\n", a.tuning.method.name(), spec.g.label());
        t.push_str(&format!("chosen: {}\n", config_human(&chosen, a.tuning.method)));
        if let Some(v) = cv_value {
            t.push_str(&format!("cv value: {} ({} configs, {} folds)\n", fmt_human(v), grid.len(), a.tuning.folds));
        }
        t.push_str(&format!(
            "objective: {}\niterations: {}\nstatus: {}\n",
            fmt_human(out.objective),
            out.iterations,
            status_name(out.status)
        ));
        if let Some(s) = &selected {
            let names: Vec<String> = s.iter().map(|j| format!("x{}", j + 1)).collect();
            t.push_str(&format!("{} covariates selected: [{}]\n", s.len(), names.join(", ")));
        }
        if let Some(p) = &a.model_out {
            t.push_str(&format!("model written to {}\n", p.display()));
        }
        t
    };
    write_text(None, &text)
}

fn load_rule(path: &Path) -> CliResult<DecisionRule> {
    let mut text = String::new();
    File::open(path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(|e| CliError::io(path, e))?;
    Ok(DecisionRule::from_json(&text)?)
}

fn cmd_predict(a: &PredictArgs) -> CliResult<()> {
    let rule = load_rule(&a.model)?;
    let x = load_covariates(&a.data)?;
    let f = decision_values(&rule, &x)?;
    let mut text = String::from("f,d\n");
    for v in f {
        text.push_str(&format!("{},{}\n", fmt_machine(v), i8::from(Arm::from_decision(v))));
    }
    write_text(a.out.as_deref(), &text)
}

fn read_recommendations(path: &Path) -> CliResult<Vec<Arm>> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_reader(file);
    let col = rdr
        .headers()
        .map_err(AolError::from)?
        .iter()
        .position(|h| h == "d")
        .ok_or_else(|| AolError::MissingColumn("d".into()))?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(AolError::from)?;
        let row = rec.position().map_or(0, |p| p.line() as usize);
        let raw = rec.get(col).unwrap_or("");
        let arm = match raw.parse::<f64>() {
            Ok(v) if v == 1.0 => Arm::Plus,
            Ok(v) if v == -1.0 => Arm::Minus,
            _ => {
                return Err(AolError::Row {
                    row,
                    message: format!("recommendation must be +1 or -1, got `{raw}`"),
                }
                .into())
            }
        };
        out.push(arm);
    }
    Ok(out)
}

/// Arm-wise least-squares estimates of the two arm means at every subject.
fn armwise_means(data: &TrialDataset) -> CliResult<(Vec<f64>, Vec<f64>)> {
    let mut models = Vec::new();
    for arm in [Arm::Plus, Arm::Minus] {
        let idx: Vec<usize> = (0..data.n()).filter(|&i| data.treatments()[i] == arm).collect();
        if idx.len() < data.p() + 2 {
            return Err(AolError::DegenerateArm(format!("arm {} has too few subjects for an outcome model", i8::from(arm))).into());
        }
        let sub = data.subset(&idx);
        let (m, _) = LinearRegressionModel::fit_weighted(sub.covariates(), sub.outcomes(), &vec![1.0; sub.n()])?;
        models.push(m);
    }
    let rows: Vec<Vec<f64>> = (0..data.n()).map(|i| data.covariate_row(i)).collect();
    Ok((
        rows.iter().map(|x| models[0].predict(x)).collect(),
        rows.iter().map(|x| models[1].predict(x)).collect(),
    ))
}

fn cmd_value(a: &ValueArgs, ctx: &Ctx) -> CliResult<()> {
    let (mut data, propensity) = load_data(&a.data)?;
    if propensity == PropensitySource::Estimated {
        let model = aol_core::residuals::estimate_propensity(&data)?;
        data = data.with_propensities(model.received_propensities(&data))?;
    }
    let recs = read_recommendations(&a.predictions)?;
    if recs.len() != data.n() {
        return Err(AolError::InvalidInput(format!("{} recommendations for {} subjects", recs.len(), data.n())).into());
    }
    let (name, value, matched) = match a.estimator {
        Estimator::Ipw => {
            let v = ipw_value(&data, &recs, true)?;
            ("ipw", v.value, Some(v.n_matched))
        }
        Estimator::IpwUnnormalized => {
            let v = ipw_value(&data, &recs, false)?;
            ("ipw-unnormalized", v.value, Some(v.n_matched))
        }
        Estimator::Aipwe => {
            let (mp, mm) = armwise_means(&data)?;
            ("aipwe", aipwe_value(&data, &recs, &mp, &mm)?, None)
        }
    };
    let text = if ctx.json {
        format!(
            "{}\n",
            json!({"estimator": name, "value": fmt_machine(value), "n_matched": matched, "n": data.n()})
        )
    } else {
        match matched {
            Some(m) => format!("{name} value: {} (matched {m} of {})\n", fmt_human(value), data.n()),
            None => format!("{name} value: {}\n", fmt_human(value)),
        }
    };
    write_text(None, &text)
}

fn cmd_cv(a: &CvArgs, ctx: &Ctx) -> CliResult<()> {
    let (data, propensity) = load_data(&a.data)?;
    let spec = training_spec(&a.tuning, propensity);
    let grid = configs(&a.tuning, &data, ctx.seed)?;
    if a.nested {
        let v = nested_cv(&data, &spec, &grid, a.tuning.folds, a.inner_folds, ctx.seed)?;
        let text = if ctx.json {
            format!("{}\n", json!({"nested_value": fmt_machine(v.value), "n_matched": v.n_matched, "n": data.n()}))
        } else {
            format!("nested cv value: {} (matched {} of {})\n", fmt_human(v.value), v.n_matched, data.n())
        };
        return write_text(None, &text);
    }
    let report = cross_validate(&data, &spec, &grid, a.tuning.folds, ctx.seed)?;
    let text = if ctx.json {
        let rows: Vec<serde_json::Value> = report
            .configs
            .iter()
            .zip(&report.values)
            .map(|(c, v)| json!({"config": config_json(c), "value": fmt_machine(*v)}))
            .collect();
        format!(
            "{}\n",
            serde_json::to_string_pretty(&json!({
                "method": a.tuning.method.name(),
                "folds": report.folds,
                "seed": report.seed,
                "chosen": report.chosen,
                "grid": rows,
            }))
            .expect("json")
        )
    } else {
        let mut t = String::new();
        for (i, (c, v)) in report.configs.iter().zip(&report.values).enumerate() {
            let mark = if i == report.chosen { " *" } else { "" };
            t.push_str(&format!("{}  value {}{mark}\n", config_human(c, a.tuning.method), fmt_human(*v)));
        }
        t
    };
    write_text(None, &text)
}

fn bench_specs(a: &BenchArgs, seed: u64) -> CliResult<Vec<BenchmarkSpec>> {
    let scenarios: Vec<u8> = match (a.preset, a.scenario) {
        (_, Some(s)) => vec![s],
        (Preset::Table1, None) => vec![1, 2],
        _ => vec![1, 2, 3, 4],
    };
    if a.preset == Preset::Table1 && scenarios.iter().any(|s| *s > 2) {
        return Err(CliError::Usage("table1 covers scenarios 1 and 2".into()));
    }
    let sizes = a.n.map_or(vec![100, 400], |n| vec![n]);
    let mut specs = Vec::new();
    for &s in &scenarios {
        let scenario = Scenario::from_id(s)?;
        for &n in &sizes {
            let mut push = |p: usize, allocation: f64, methods: Vec<Method>, g: GSource| {
                let methods = if a.methods.is_empty() { methods } else { a.methods.clone() };
                let mut spec = BenchmarkSpec::new(scenario, n, p, allocation, methods, a.reps, seed);
                spec.g = g;
                spec.test_n = a.test_n;
                spec.folds = a.folds;
                specs.push(spec);
            };
            match a.preset {
                Preset::Table1 => {
                    for allocation in [0.75, 0.25] {
                        for kind in [GKind::Tilde, GKind::G1, GKind::G2] {
                            push(5, allocation, vec![Method::AolLinear], GSource::Oracle { scenario, kind });
                        }
                    }
                }
                Preset::Table2Aol => push(
                    5,
                    0.5,
                    vec![Method::AolLinear, Method::AolGaussian],
                    GSource::Fitted {
                        variant: GVariant::default(),
                    },
                ),
                Preset::Table3Aol => push(
                    25,
                    0.5,
                    vec![Method::AolVsLinear, Method::AolVsGaussian],
                    GSource::Fitted {
                        variant: GVariant::default(),
                    },
                ),
            }
        }
    }
    Ok(specs)
}

fn cmd_bench(a: &BenchArgs, ctx: &Ctx) -> CliResult<()> {
    if a.reps == 0 {
        return Err(CliError::Usage("--reps must be at least 1".into()));
    }
    let mut rows: Vec<BenchmarkRow> = Vec::new();
    for spec in bench_specs(a, ctx.seed)? {
        rows.extend(run_benchmark(&spec)?);
    }
    let text = if ctx.json {
        let v: Vec<serde_json::Value> = rows
            .iter()
            .map(|r| {
                json!({
                    "scenario": r.scenario, "n": r.n, "p": r.p,
                    "allocation": r.allocation.map(fmt_machine),
                    "method": r.method, "g": r.g,
                    "mean": fmt_machine(r.mean), "sd": fmt_machine(r.sd),
                    "replications": r.replications, "seed": r.seed,
                })
            })
            .collect();
        format!("{}\n", serde_json::to_string_pretty(&v).expect("json"))
    } else {
        let mut t = format!("{BENCHMARK_HEADER}\n");
        for r in &rows {
            t.push_str(&r.csv_line());
            t.push('\n');
        }
        t
    };
    write_text(a.out.as_deref(), &text)
}

fn cmd_risk_check(a: &RiskArgs, ctx: &Ctx) -> CliResult<()> {
    let losses = if a.losses.is_empty() { SurrogateLoss::ALL.to_vec() } else { a.losses.clone() };
    let points: Vec<(f64, f64)> = match (a.eta1, a.eta2) {
        (Some(e1), Some(e2)) => vec![(e1, e2)],
        _ => {
            if a.grid_size < 2 || !(a.max > 0.0) {
                return Err(CliError::Usage("--grid-size must be >= 2 and --max > 0".into()));
            }
            let step = a.max / (a.grid_size - 1) as f64;
            (0..a.grid_size)
                .flat_map(|i| (0..a.grid_size).map(move |j| (i as f64 * step, j as f64 * step)))
                .collect()
        }
    };
    let mut csv = String::from("loss,eta1,eta2,lhs,rhs,holds,equality\n");
    let mut summary = Vec::new();
    for loss in &losses {
        let (mut checked, mut violations, mut eq_fail) = (0usize, 0usize, 0usize);
        let mut last = None;
        for &(e1, e2) in &points {
            let cr = ConditionalRisk::new(e1, e2)
                .ok_or_else(|| CliError::Usage(format!("eta values must be finite and >= 0, got ({e1}, {e2})")))?;
            let b = excess_bound_check(*loss, cr);
            checked += 1;
            violations += usize::from(!b.holds);
            eq_fail += usize::from(b.equality == Some(false));
            if a.out.is_some() {
                csv.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    loss.name(),
                    fmt_machine(e1),
                    fmt_machine(e2),
                    fmt_machine(b.lhs),
                    fmt_machine(b.rhs),
                    b.holds,
                    b.equality.map_or(String::new(), |e| e.to_string())
                ));
            }
            last = Some(b);
        }
        summary.push((loss.name(), checked, violations, eq_fail, last));
    }
    if let Some(path) = &a.out {
        write_text(Some(path), &csv)?;
    }
    let single = points.len() == 1;
    let text = if ctx.json {
        let v: Vec<serde_json::Value> = summary
            .iter()
            .map(|(name, checked, violations, eq_fail, last)| {
                let mut o = json!({"loss": name, "points": checked, "violations": violations, "equality_failures": eq_fail});
                if let (true, Some(b)) = (single, last) {
                    o["lhs"] = json!(fmt_machine(b.lhs));
                    o["rhs"] = json!(fmt_machine(b.rhs));
                }
                o
            })
            .collect();
        format!("{}\n", serde_json::to_string_pretty(&v).expect("json"))
    } else {
        let mut t = String::new();
        for (name, checked, violations, eq_fail, last) in &summary {
            match (single, last) {
                (true, Some(b)) => t.push_str(&format!(
                    "{name}: lhs {} rhs {} {}\n",
                    fmt_human(b.lhs),
                    fmt_human(b.rhs),
                    if b.holds { "holds" } else { "VIOLATED" }
                )),
                _ => t.push_str(&format!(
                    "{name}: {violations} violations, {eq_fail} equality failures in {checked} points\n"
                )),
            }
        }
        t
    };
    write_text(None, &text)
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot start {jobs} workers: {e}")))?;
    }
    let ctx = Ctx {
        seed: cli.seed,
        json: cli.json,
    };
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(a, &ctx),
        Command::Fit(a) => cmd_fit(a, &ctx),
        Command::Predict(a) => cmd_predict(a),
        Command::Value(a) => cmd_value(a, &ctx),
        Command::Cv(a) => cmd_cv(a, &ctx),
        Command::Bench(a) => cmd_bench(a, &ctx),
        Command::RiskCheck(a) => cmd_risk_check(a, &ctx),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = match config::merge_config(std::env::args().collect(), &SUBCOMMANDS) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code());
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn human_format() {
        assert_eq!(fmt_human(0.98512), "0.9851");
        assert_eq!(fmt_human(3.0), "3.000");
        assert_eq!(fmt_human(123.456), "123.5");
        assert_eq!(fmt_human(1e-6), "1.000e-6");
    }
}
