//! Value estimators, cross-validated tuning and the simulation benchmark.

use std::cmp::Ordering;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{derive_seed, fmt_machine, oracle_mu, simulate_covariates, simulate_scenario, Arm, Assignment, Scenario, ScenarioSpec, TrialDataset};
use crate::error::{AolError, Result};
use crate::kernels::median_heuristic;
use crate::learner::{fit, fit_many, predict, FitConfig, FitOutcome, Method, Standardization};
use crate::residuals::{compute_residuals, WeightedClassificationProblem, estimate_propensity, fit_g, reflect, ConstantG, GFunction, GKind, GVariant, OracleG};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueEstimate {
    pub value: f64,
    pub n_matched: usize,
}

fn check_len(n: usize, got: usize) -> Result<()> {
    if n != got {
        return Err(AolError::DimensionMismatch { expected: n, got });
    }
    Ok(())
}

/// Inverse-probability-weighted value of the recommendations. Normalized:
/// `Σ rᵢ I(aᵢ = dᵢ)/πᵢ / Σ I(aᵢ = dᵢ)/πᵢ`; otherwise the mean of
/// `rᵢ I(aᵢ = dᵢ)/πᵢ`.
pub fn ipw_value(dataset: &TrialDataset, recommendations: &[Arm], normalized: bool) -> Result<ValueEstimate> {
    check_len(dataset.n(), recommendations.len())?;
    let mut num = Kahan::default();
    let mut den = Kahan::default();
    let mut matched = 0;
    for i in 0..dataset.n() {
        if dataset.treatments()[i] == recommendations[i] {
            let pi = dataset.propensities()[i];
            num.add(dataset.outcomes()[i] / pi);
            den.add(1.0 / pi);
            matched += 1;
        }
    }
    let value = if normalized {
        if matched == 0 {
            return Err(AolError::NoMatchedSubjects);
        }
        num.sum() / den.sum()
    } else {
        num.sum() / dataset.n() as f64
    };
    Ok(ValueEstimate { value, n_matched: matched })
}

/// One subject's AIPWE term `(r − m̂(x,d))/π · I(a = d) + m̂(x,d)` with
/// `m̂(x,d) = μ̂_d(x)`.
pub fn aipwe_term(r: f64, a: Arm, pi_received: f64, d: Arm, mu_plus: f64, mu_minus: f64) -> f64 {
    let m = match d {
        Arm::Plus => mu_plus,
        Arm::Minus => mu_minus,
    };
    let ipw = if a == d { (r - m) / pi_received } else { 0.0 };
    ipw + m
}

/// The same term written through the counterfactual baseline:
/// `(r − g̃(x))/π · I(a = d) + μ̂₋ₐ(x)`, `g̃ = π(−1,x)μ̂₊ + π(+1,x)μ̂₋`.
pub fn aipwe_term_via_baseline(r: f64, a: Arm, pi_received: f64, d: Arm, mu_plus: f64, mu_minus: f64) -> f64 {
    let pi_plus = match a {
        Arm::Plus => pi_received,
        Arm::Minus => 1.0 - pi_received,
    };
    let g_tilde = (1.0 - pi_plus) * mu_plus + pi_plus * mu_minus;
    let mu_other = match a {
        Arm::Plus => mu_minus,
        Arm::Minus => mu_plus,
    };
    let ipw = if a == d { (r - g_tilde) / pi_received } else { 0.0 };
    ipw + mu_other
}

/// Empirical AIPWE of the recommendations given per-subject arm-mean estimates.
pub fn aipwe_value(dataset: &TrialDataset, recommendations: &[Arm], mu_plus: &[f64], mu_minus: &[f64]) -> Result<f64> {
    let n = dataset.n();
    check_len(n, recommendations.len())?;
    check_len(n, mu_plus.len())?;
    check_len(n, mu_minus.len())?;
    let mut acc = Kahan::default();
    for i in 0..n {
        acc.add(aipwe_term(
            dataset.outcomes()[i],
            dataset.treatments()[i],
            dataset.propensities()[i],
            recommendations[i],
            mu_plus[i],
            mu_minus[i],
        ));
    }
    Ok(acc.sum() / n as f64)
}

/// Compensated summation.
#[derive(Debug, Default, Clone, Copy)]
pub struct Kahan {
    sum: f64,
    c: f64,
}

impl Kahan {
    pub fn add(&mut self, v: f64) {
        let y = v - self.c;
        let t = self.sum + y;
        self.c = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn sum(&self) -> f64 {
        self.sum
    }
}

pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mut s = Kahan::default();
    values.iter().for_each(|v| s.add(*v));
    let mean = s.sum() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let mut ss = Kahan::default();
    values.iter().for_each(|v| ss.add((v - mean) * (v - mean)));
    (mean, (ss.sum() / (n - 1) as f64).sqrt())
}

/// Where the baseline `g` comes from when training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum GSource {
    /// Regression fit on the training data.
    Fitted { variant: GVariant },
    /// True arm means of a simulated scenario.
    Oracle { scenario: Scenario, kind: GKind },
    Constant { value: f64 },
}

impl GSource {
    pub fn label(&self) -> String {
        match self {
            GSource::Fitted { variant } => format!("fitted:{}", variant.kind.name()),
            GSource::Oracle { kind, .. } => format!("oracle:{}", kind.name()),
            GSource::Constant { value } => format!("constant:{value}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropensitySource {
    /// Use the `pi` column as given.
    Known,
    /// Replace it with a logistic-regression estimate fitted on the same data.
    Estimated,
}

/// Everything about training other than the tuning parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSpec {
    pub method: Method,
    pub g: GSource,
    pub propensity: PropensitySource,
}

impl TrainingSpec {
    pub fn new(method: Method, g: GSource) -> Self {
        TrainingSpec {
            method,
            g,
            propensity: PropensitySource::Known,
        }
    }
}

fn with_propensity(dataset: &TrialDataset, source: PropensitySource) -> Result<TrialDataset> {
    match source {
        PropensitySource::Known => Ok(dataset.clone()),
        PropensitySource::Estimated => {
            let model = estimate_propensity(dataset)?;
            if model.diagnostics.separation_suspected() {
                log::warn!("propensity model: more than half of the estimates were clipped");
            }
            dataset.with_propensities(model.received_propensities(dataset))
        }
    }
}

/// Baseline residuals reflected into the weighted classification problem.
pub fn prepare_problem(dataset: &TrialDataset, spec: &TrainingSpec) -> Result<WeightedClassificationProblem> {
    let data = with_propensity(dataset, spec.propensity)?;
    let residuals = match &spec.g {
        GSource::Fitted { variant } => compute_residuals(&data, &fit_g(&data, *variant)?),
        GSource::Oracle { scenario, kind } => compute_residuals(
            &data,
            &OracleG {
                scenario: *scenario,
                kind: *kind,
            },
        ),
        GSource::Constant { value } => compute_residuals(&data, &ConstantG(*value) as &dyn GFunction),
    };
    reflect(&data, &residuals)
}

/// Fits the baseline, reflects the residuals and fits the rule.
pub fn train(dataset: &TrialDataset, spec: &TrainingSpec, cfg: &FitConfig) -> Result<FitOutcome> {
    fit(spec.method, &prepare_problem(dataset, spec)?, cfg)
}

/// [`train`] for several configs sharing one training set.
pub fn train_many(dataset: &TrialDataset, spec: &TrainingSpec, cfgs: &[FitConfig]) -> Result<Vec<FitOutcome>> {
    let problem = prepare_problem(dataset, spec)?;
    fit_many(spec.method, &problem, cfgs).into_iter().collect()
}

const REFOLD_ATTEMPTS: u64 = 10;

/// Fold index per subject, stratified by arm. Every fold and every training
/// complement must contain both arms; otherwise the split is redrawn with the
/// next seed offset, at most ten times.
pub fn stratified_folds(dataset: &TrialDataset, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 || k > dataset.n() {
        return Err(AolError::InvalidInput(format!(
            "need 2 <= folds <= n, got {k} folds for {} subjects",
            dataset.n()
        )));
    }
    for attempt in 0..REFOLD_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0xf01d, attempt));
        let mut assignment = vec![0; dataset.n()];
        let mut next = 0;
        for arm in [Arm::Plus, Arm::Minus] {
            let mut idx: Vec<usize> = (0..dataset.n()).filter(|&i| dataset.treatments()[i] == arm).collect();
            idx.shuffle(&mut rng);
            for i in idx {
                assignment[i] = next % k;
                next += 1;
            }
        }
        let ok = (0..k).all(|f| {
            let mut held = [false; 2];
            let mut kept = [false; 2];
            for i in 0..dataset.n() {
                let a = usize::from(dataset.treatments()[i] == Arm::Plus);
                if assignment[i] == f {
                    held[a] = true;
                } else {
                    kept[a] = true;
                }
            }
            held == [true; 2] && kept == [true; 2]
        });
        if ok {
            return Ok(assignment);
        }
    }
    Err(AolError::Folding(REFOLD_ATTEMPTS as usize))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub configs: Vec<FitConfig>,
    /// Normalized IPW value of the pooled held-out recommendations, per config.
    pub values: Vec<f64>,
    pub chosen: usize,
    pub folds: usize,
    pub seed: u64,
}

impl CvReport {
    pub fn chosen_config(&self) -> &FitConfig {
        &self.configs[self.chosen]
    }
}

/// Orders configs by regularization strength: larger `lambda1`, then larger
/// `lambda`, then smaller `sigma` (a wider Gaussian) count as stronger.
fn regularization_order(a: &FitConfig, b: &FitConfig) -> Ordering {
    a.lambda1
        .total_cmp(&b.lambda1)
        .then(a.lambda.total_cmp(&b.lambda))
        .then(match (a.sigma, b.sigma) {
            (Some(x), Some(y)) => y.total_cmp(&x),
            _ => Ordering::Equal,
        })
}

/// Best value; near-ties (within `1e-12` relative) go to the more strongly
/// regularized config, then to the earlier one.
fn choose(configs: &[FitConfig], values: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..configs.len() {
        let (v, bv) = (values[i], values[best]);
        let tie = (v - bv).abs() <= 1e-12 * bv.abs().max(1.0);
        if (!tie && v > bv) || (tie && regularization_order(&configs[i], &configs[best]) == Ordering::Greater) {
            best = i;
        }
    }
    best
}

/// Out-of-fold recommendations for each config, pooled over folds.
fn out_of_fold(
    dataset: &TrialDataset,
    spec: &TrainingSpec,
    grid: &[FitConfig],
    assignment: &[usize],
    folds: usize,
) -> Result<Vec<Vec<Arm>>> {
    let n = dataset.n();
    let splits: Vec<(Vec<usize>, Vec<usize>)> = (0..folds)
        .map(|f| {
            let held: Vec<usize> = (0..n).filter(|&i| assignment[i] == f).collect();
            let kept: Vec<usize> = (0..n).filter(|&i| assignment[i] != f).collect();
            (kept, held)
        })
        .collect();
    let per_fold: Vec<Result<Vec<Vec<Arm>>>> = splits
        .par_iter()
        .map(|(kept, held)| {
            let outs = train_many(&dataset.subset(kept), spec, grid)?;
            let held = dataset.subset(held);
            outs.iter().map(|o| predict(&o.rule, held.covariates())).collect()
        })
        .collect();
    let mut pooled = vec![vec![Arm::Minus; n]; grid.len()];
    for ((_, held), preds) in splits.iter().zip(per_fold) {
        for (c, pred) in preds?.into_iter().enumerate() {
            for (&i, d) in held.iter().zip(pred) {
                pooled[c][i] = d;
            }
        }
    }
    Ok(pooled)
}

fn scoring_data(dataset: &TrialDataset, spec: &TrainingSpec) -> Result<TrialDataset> {
    with_propensity(dataset, spec.propensity)
}

/// K-fold cross-validation over `grid`. The baseline (and the propensity
/// model, if estimated) is refit inside every training fold.
pub fn cross_validate(
    dataset: &TrialDataset,
    spec: &TrainingSpec,
    grid: &[FitConfig],
    folds: usize,
    seed: u64,
) -> Result<CvReport> {
    if grid.is_empty() {
        return Err(AolError::InvalidInput("empty tuning grid".into()));
    }
    let assignment = stratified_folds(dataset, folds, seed)?;
    let pooled = out_of_fold(dataset, spec, grid, &assignment, folds)?;
    let score = scoring_data(dataset, spec)?;
    let values = pooled
        .iter()
        .map(|recs| Ok(ipw_value(&score, recs, true)?.value))
        .collect::<Result<Vec<f64>>>()?;
    let chosen = choose(grid, &values);
    Ok(CvReport {
        configs: grid.to_vec(),
        values,
        chosen,
        folds,
        seed,
    })
}

/// Nested cross-validation: outer folds give held-out recommendations from
/// fits tuned by inner cross-validation on the outer training part.
pub fn nested_cv(
    dataset: &TrialDataset,
    spec: &TrainingSpec,
    grid: &[FitConfig],
    outer: usize,
    inner: usize,
    seed: u64,
) -> Result<ValueEstimate> {
    let n = dataset.n();
    let assignment = stratified_folds(dataset, outer, seed)?;
    let results: Vec<Result<(Vec<usize>, Vec<Arm>)>> = (0..outer)
        .into_par_iter()
        .map(|f| {
            let held: Vec<usize> = (0..n).filter(|&i| assignment[i] == f).collect();
            let kept: Vec<usize> = (0..n).filter(|&i| assignment[i] != f).collect();
            let train_part = dataset.subset(&kept);
            let report = cross_validate(&train_part, spec, grid, inner, derive_seed(seed, 0x1a, f as u64))?;
            let out = train(&train_part, spec, report.chosen_config())?;
            let recs = predict(&out.rule, dataset.subset(&held).covariates())?;
            Ok((held, recs))
        })
        .collect();
    let mut pooled = vec![Arm::Minus; n];
    for r in results {
        let (held, recs) = r?;
        for (i, d) in held.into_iter().zip(recs) {
            pooled[i] = d;
        }
    }
    ipw_value(&scoring_data(dataset, spec)?, &pooled, true)
}

/// `{2^k / n : k ∈ exponents}`.
pub fn power_grid(n: usize, exponents: impl IntoIterator<Item = i32>) -> Vec<f64> {
    exponents.into_iter().map(|k| 2f64.powi(k) / n as f64).collect()
}

/// Default tuning grid for `method` on training data `train`; every config
/// copies the remaining fields of `base`.
pub fn default_grid(method: Method, train: &TrialDataset, base: &FitConfig) -> Result<Vec<FitConfig>> {
    let n = train.n();
    let with = |lambda: f64, lambda1: f64, sigma: Option<f64>| FitConfig {
        lambda,
        lambda1,
        sigma,
        ..base.clone()
    };
    let sigma_med = || -> Result<f64> {
        let z = Standardization::fit(train.covariates()).apply(train.covariates());
        median_heuristic(&z, base.seed)
    };
    Ok(match method {
        Method::AolLinear => power_grid(n, -8..=8).into_iter().map(|l| with(l, 0.0, None)).collect(),
        Method::AolGaussian => {
            let s = sigma_med()?;
            let mut grid = Vec::new();
            for factor in [0.25, 0.5, 1.0, 2.0, 4.0] {
                for l in power_grid(n, (-8..=8).step_by(2)) {
                    grid.push(with(l, 0.0, Some(s * factor)));
                }
            }
            grid
        }
        Method::AolVsLinear => {
            let mut grid = Vec::new();
            for l1 in power_grid(n, (-8..=8).step_by(2)) {
                for l2 in power_grid(n, [-8, -4, 0, 4]) {
                    grid.push(with(l2, l1, None));
                }
            }
            grid
        }
        Method::AolVsGaussian => {
            let mut grid = Vec::new();
            for l1 in power_grid(n, [-6, -2, 2]) {
                for l2 in power_grid(n, [-4, 0, 4]) {
                    grid.push(with(l2, l1, None));
                }
            }
            grid
        }
    })
}

/// Mean of `μ(x, d(x))` over the rows of `x`: the exact value of the regime
/// under the scenario's outcome model, up to covariate sampling.
pub fn oracle_value(scenario: Scenario, x: &nalgebra::DMatrix<f64>, recommendations: &[Arm]) -> Result<f64> {
    check_len(x.nrows(), recommendations.len())?;
    let mut acc = Kahan::default();
    for (i, &d) in recommendations.iter().enumerate() {
        let row: Vec<f64> = x.row(i).iter().copied().collect();
        acc.add(oracle_mu(scenario, &row, d));
    }
    Ok(acc.sum() / x.nrows() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSpec {
    pub scenario: Scenario,
    pub n: usize,
    pub p: usize,
    pub assignment: Assignment,
    pub methods: Vec<Method>,
    pub g: GSource,
    pub propensity: PropensitySource,
    pub replications: usize,
    pub test_n: usize,
    pub folds: usize,
    /// Settings shared by every grid point (loss, solver, n_starts).
    pub base: FitConfig,
    /// Overrides the default grid for every method when set.
    pub grid: Option<Vec<FitConfig>>,
    pub seed: u64,
}

impl BenchmarkSpec {
    pub fn new(scenario: Scenario, n: usize, p: usize, allocation: f64, methods: Vec<Method>, replications: usize, seed: u64) -> Self {
        BenchmarkSpec {
            scenario,
            n,
            p,
            assignment: Assignment::Randomized(allocation),
            methods,
            g: GSource::Fitted {
                variant: GVariant::default(),
            },
            propensity: PropensitySource::Known,
            replications,
            test_n: 10_000,
            folds: 10,
            base: FitConfig::default(),
            grid: None,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub scenario: u8,
    pub n: usize,
    pub p: usize,
    /// Constant allocation `π(+1)`; absent for covariate-dependent assignment.
    pub allocation: Option<f64>,
    pub method: String,
    pub g: String,
    pub mean: f64,
    pub sd: f64,
    pub replications: usize,
    pub seed: u64,
}

pub const BENCHMARK_HEADER: &str = "scenario,n,p,allocation,method,g,mean,sd,replications,seed";

impl BenchmarkRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.scenario,
            self.n,
            self.p,
            self.allocation.map(fmt_machine).unwrap_or_default(),
            self.method,
            self.g,
            fmt_machine(self.mean),
            fmt_machine(self.sd),
            self.replications,
            self.seed
        )
    }
}

/// Oracle values of the CV-tuned regime for every replication and method,
/// indexed `[replication][method]`.
pub fn benchmark_values(spec: &BenchmarkSpec) -> Result<Vec<Vec<f64>>> {
    if spec.replications == 0 {
        return Err(AolError::InvalidInput("replications must be >= 1".into()));
    }
    if spec.methods.is_empty() {
        return Err(AolError::InvalidInput("no methods given".into()));
    }
    (0..spec.replications)
        .into_par_iter()
        .map(|r| replicate(spec, r as u64))
        .collect()
}

fn replicate(spec: &BenchmarkSpec, r: u64) -> Result<Vec<f64>> {
    let train_spec = ScenarioSpec {
        scenario: spec.scenario,
        p: spec.p,
        assignment: spec.assignment.clone(),
        n: spec.n,
        seed: derive_seed(spec.seed, 1, r),
    };
    let data = simulate_scenario(&train_spec)?;
    let test = simulate_covariates(spec.test_n, spec.p, derive_seed(spec.seed, 2, r));
    spec.methods
        .iter()
        .map(|&method| {
            let tspec = TrainingSpec {
                method,
                g: spec.g.clone(),
                propensity: spec.propensity,
            };
            let base = FitConfig {
                seed: derive_seed(spec.seed, 4, r),
                ..spec.base.clone()
            };
            let grid = match &spec.grid {
                Some(g) => g.clone(),
                None => default_grid(method, &data, &base)?,
            };
            let chosen = if grid.len() == 1 {
                grid[0].clone()
            } else {
                cross_validate(&data, &tspec, &grid, spec.folds, derive_seed(spec.seed, 3, r))?
                    .chosen_config()
                    .clone()
            };
            let out = train(&data, &tspec, &chosen)?;
            let recs = predict(&out.rule, &test)?;
            oracle_value(spec.scenario, &test, &recs)
        })
        .collect()
}

/// One row per method: mean and standard deviation of the oracle test value
/// over replications.
pub fn run_benchmark(spec: &BenchmarkSpec) -> Result<Vec<BenchmarkRow>> {
    let values = benchmark_values(spec)?;
    Ok(spec
        .methods
        .iter()
        .enumerate()
        .map(|(m, method)| {
            let col: Vec<f64> = values.iter().map(|rep| rep[m]).collect();
            let (mean, sd) = mean_sd(&col);
            BenchmarkRow {
                scenario: spec.scenario.id(),
                n: spec.n,
                p: spec.p,
                allocation: match spec.assignment {
                    Assignment::Randomized(a) => Some(a),
                    Assignment::Logistic { .. } => None,
                },
                method: method.name().to_string(),
                g: spec.g.label(),
                mean,
                sd,
                replications: spec.replications,
                seed: spec.seed,
            }
        })
        .collect())
}
