//! Outcome baselines `g(x)`, counterfactual residuals, propensity estimation,
//! and the reflection that turns signed residual weights into a
//! nonnegative-weight classification problem.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{oracle_mu, Arm, Scenario, TrialDataset};
use crate::error::{AolError, Result};
use crate::linalg::{solve_spd_with_ridge, with_intercept};

/// Which weighted average of the arm means serves as baseline.
///
/// * `Tilde`: `π(−1,x)μ₊₁(x) + π(+1,x)μ₋₁(x)`, the counterfactual mean.
/// * `G1`: `½μ₊₁(x) + ½μ₋₁(x)`.
/// * `G2`: `E(R | X = x) = π(+1,x)μ₊₁(x) + π(−1,x)μ₋₁(x)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GKind {
    #[serde(rename = "g_tilde")]
    Tilde,
    G1,
    G2,
}

impl GKind {
    pub fn name(self) -> &'static str {
        match self {
            GKind::Tilde => "g_tilde",
            GKind::G1 => "g1",
            GKind::G2 => "g2",
        }
    }

    pub fn from_name(name: &str) -> Option<GKind> {
        match name {
            "g_tilde" | "tilde" => Some(GKind::Tilde),
            "g1" => Some(GKind::G1),
            "g2" => Some(GKind::G2),
            _ => None,
        }
    }

    /// Convex weights `(c₊, c₋)` with `g = c₊μ₊₁ + c₋μ₋₁`.
    pub fn arm_weights(self, pi_plus: f64) -> (f64, f64) {
        match self {
            GKind::Tilde => (1.0 - pi_plus, pi_plus),
            GKind::G1 => (0.5, 0.5),
            GKind::G2 => (pi_plus, 1.0 - pi_plus),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GEstimator {
    /// One weighted least-squares fit of `R` on `X` over both arms.
    PooledWeighted,
    /// Separate least-squares fits per arm, combined by [`GKind::arm_weights`].
    ArmwisePlugin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GVariant {
    pub kind: GKind,
    pub estimator: GEstimator,
}

impl Default for GVariant {
    fn default() -> Self {
        GVariant {
            kind: GKind::Tilde,
            estimator: GEstimator::PooledWeighted,
        }
    }
}

/// Per-subject regression weight for the pooled fit, a function of the
/// received arm's propensity only.
pub fn regression_weight(kind: GKind, pi_received: f64) -> f64 {
    match kind {
        GKind::Tilde => (1.0 - pi_received) / pi_received,
        GKind::G1 => 1.0 / (2.0 * pi_received),
        GKind::G2 => 1.0,
    }
}

/// Intercept-first linear model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearRegressionModel {
    pub coefficients: Vec<f64>,
}

impl LinearRegressionModel {
    /// Weighted least squares of `y` on `[1, x]`. The flag reports a ridge
    /// fallback for a rank-deficient design.
    pub fn fit_weighted(x: &DMatrix<f64>, y: &[f64], weights: &[f64]) -> Result<(Self, bool)> {
        let design = with_intercept(x);
        let dim = design.ncols();
        let mut xtwx = DMatrix::zeros(dim, dim);
        let mut xtwy = DVector::zeros(dim);
        for i in 0..design.nrows() {
            let w = weights[i];
            if w == 0.0 {
                continue;
            }
            let row = design.row(i);
            for a in 0..dim {
                let wa = w * row[a];
                xtwy[a] += wa * y[i];
                for b in 0..=a {
                    xtwx[(a, b)] += wa * row[b];
                }
            }
        }
        for a in 0..dim {
            for b in 0..a {
                xtwx[(b, a)] = xtwx[(a, b)];
            }
        }
        let (beta, ridged) = solve_spd_with_ridge(&xtwx, &xtwy)
            .ok_or_else(|| AolError::InvalidInput("regression system is not positive definite".into()))?;
        if ridged {
            log::warn!("rank-deficient regression design; applied a small ridge penalty");
        }
        Ok((
            Self {
                coefficients: beta.iter().copied().collect(),
            },
            ridged,
        ))
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        linear_eval(&self.coefficients, x)
    }

    pub fn p(&self) -> usize {
        self.coefficients.len() - 1
    }
}

/// A baseline evaluated per subject. `pi_plus` is `π(+1, x)` for that subject.
pub trait GFunction: Sync {
    fn g(&self, x: &[f64], pi_plus: f64) -> f64;
}

/// Fitted baseline; serializes as `{"kind","estimator","coefficients"}` or,
/// for armwise fits, with `plus`/`minus` coefficient blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GModel {
    Pooled {
        kind: GKind,
        estimator: GEstimator,
        coefficients: Vec<f64>,
    },
    Armwise {
        kind: GKind,
        estimator: GEstimator,
        plus: Vec<f64>,
        minus: Vec<f64>,
    },
}

impl GFunction for GModel {
    fn g(&self, x: &[f64], pi_plus: f64) -> f64 {
        match self {
            GModel::Pooled { coefficients, .. } => linear_eval(coefficients, x),
            GModel::Armwise { kind, plus, minus, .. } => {
                let (cp, cm) = kind.arm_weights(pi_plus);
                let mp = linear_eval(plus, x);
                let mm = linear_eval(minus, x);
                cp * mp + cm * mm
            }
        }
    }
}

fn linear_eval(coefficients: &[f64], x: &[f64]) -> f64 {
    coefficients[0] + coefficients[1..].iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
}

/// Fits the baseline for `variant` on `dataset`.
pub fn fit_g(dataset: &TrialDataset, variant: GVariant) -> Result<GModel> {
    match variant.estimator {
        GEstimator::PooledWeighted => {
            let weights: Vec<f64> = dataset
                .propensities()
                .iter()
                .map(|&pi| regression_weight(variant.kind, pi))
                .collect();
            let (model, _) =
                LinearRegressionModel::fit_weighted(dataset.covariates(), dataset.outcomes(), &weights)?;
            Ok(GModel::Pooled {
                kind: variant.kind,
                estimator: variant.estimator,
                coefficients: model.coefficients,
            })
        }
        GEstimator::ArmwisePlugin => {
            let needed = dataset.p() + 2;
            let mut fits = Vec::with_capacity(2);
            for arm in [Arm::Plus, Arm::Minus] {
                let idx: Vec<usize> = (0..dataset.n()).filter(|&i| dataset.treatments()[i] == arm).collect();
                if idx.len() < needed {
                    return Err(AolError::DegenerateArm(format!(
                        "arm {} has {} subjects, armwise fit needs at least {needed}",
                        i8::from(arm),
                        idx.len()
                    )));
                }
                let sub = dataset.subset(&idx);
                let ones = vec![1.0; sub.n()];
                let (model, _) = LinearRegressionModel::fit_weighted(sub.covariates(), sub.outcomes(), &ones)?;
                fits.push(model.coefficients);
            }
            let minus = fits.pop().expect("two fits");
            let plus = fits.pop().expect("two fits");
            Ok(GModel::Armwise {
                kind: variant.kind,
                estimator: variant.estimator,
                plus,
                minus,
            })
        }
    }
}

/// Baseline built from the scenario's true arm means.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleG {
    pub scenario: Scenario,
    pub kind: GKind,
}

impl GFunction for OracleG {
    fn g(&self, x: &[f64], pi_plus: f64) -> f64 {
        let (cp, cm) = self.kind.arm_weights(pi_plus);
        cp * oracle_mu(self.scenario, x, Arm::Plus) + cm * oracle_mu(self.scenario, x, Arm::Minus)
    }
}

/// A constant baseline (`0` gives plain outcome weighting).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantG(pub f64);

impl GFunction for ConstantG {
    fn g(&self, _x: &[f64], _pi_plus: f64) -> f64 {
        self.0
    }
}

/// `r̃ᵢ = rᵢ − g(xᵢ)`.
pub fn compute_residuals(dataset: &TrialDataset, g: &dyn GFunction) -> Vec<f64> {
    (0..dataset.n())
        .map(|i| {
            let x = dataset.covariate_row(i);
            dataset.outcomes()[i] - g.g(&x, dataset.propensity_plus(i))
        })
        .collect()
}

/// Covariates with reflected labels `aᵢ·sign(r̃ᵢ)` and weights `|r̃ᵢ|/πᵢ`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedClassificationProblem {
    covariates: DMatrix<f64>,
    labels: Vec<Arm>,
    weights: Vec<f64>,
}

impl WeightedClassificationProblem {
    pub fn new(covariates: DMatrix<f64>, labels: Vec<Arm>, weights: Vec<f64>) -> Result<Self> {
        let n = covariates.nrows();
        if labels.len() != n || weights.len() != n {
            return Err(AolError::InvalidInput(format!(
                "length mismatch: {n} rows, {} labels, {} weights",
                labels.len(),
                weights.len()
            )));
        }
        if let Some(i) = weights.iter().position(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(AolError::Row {
                row: i + 1,
                message: format!("weight {} is not a finite nonnegative number", weights[i]),
            });
        }
        Ok(Self {
            covariates,
            labels,
            weights,
        })
    }

    pub fn n(&self) -> usize {
        self.covariates.nrows()
    }

    pub fn p(&self) -> usize {
        self.covariates.ncols()
    }

    pub fn covariates(&self) -> &DMatrix<f64> {
        &self.covariates
    }

    pub fn labels(&self) -> &[Arm] {
        &self.labels
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn with_weights(&self, weights: Vec<f64>) -> Result<Self> {
        Self::new(self.covariates.clone(), self.labels.clone(), weights)
    }

    pub fn with_labels(&self, labels: Vec<Arm>) -> Result<Self> {
        Self::new(self.covariates.clone(), labels, self.weights.clone())
    }
}

/// Reflects negative residuals: weight `|r̃|/π`, label `a·sign(r̃)`. A residual
/// of exactly zero gets weight 0 and label `+1`.
pub fn reflect(dataset: &TrialDataset, residuals: &[f64]) -> Result<WeightedClassificationProblem> {
    if residuals.len() != dataset.n() {
        return Err(AolError::InvalidInput(format!(
            "{} residuals for {} subjects",
            residuals.len(),
            dataset.n()
        )));
    }
    let mut labels = Vec::with_capacity(residuals.len());
    let mut weights = Vec::with_capacity(residuals.len());
    for (i, &r) in residuals.iter().enumerate() {
        let a = dataset.treatments()[i];
        if r == 0.0 {
            labels.push(Arm::Plus);
            weights.push(0.0);
        } else {
            labels.push(if r > 0.0 { a } else { a.opposite() });
            weights.push(r.abs() / dataset.propensities()[i]);
        }
    }
    WeightedClassificationProblem::new(dataset.covariates().clone(), labels, weights)
}

/// Both sides of `E(|R̃|/π · I(A·sign(R̃) ≠ d)) = E(R̃/π · I(A ≠ d)) + E(R̃⁻/π)`
/// as sample means, and their absolute gap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentityCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub gap: f64,
}

pub fn reflection_identity_check(
    dataset: &TrialDataset,
    residuals: &[f64],
    regime: &[Arm],
) -> Result<IdentityCheck> {
    let n = dataset.n();
    if residuals.len() != n || regime.len() != n {
        return Err(AolError::InvalidInput("residual and regime lengths must equal n".into()));
    }
    let mut lhs = 0.0;
    let mut mismatch = 0.0;
    let mut negative = 0.0;
    for i in 0..n {
        let r = residuals[i];
        let pi = dataset.propensities()[i];
        let a = dataset.treatments()[i];
        let reflected = if r >= 0.0 { a } else { a.opposite() };
        if reflected != regime[i] {
            lhs += r.abs() / pi;
        }
        if a != regime[i] {
            mismatch += r / pi;
        }
        negative += (-r).max(0.0) / pi;
    }
    let lhs = lhs / n as f64;
    let rhs = (mismatch + negative) / n as f64;
    Ok(IdentityCheck {
        lhs,
        rhs,
        gap: (lhs - rhs).abs(),
    })
}

/// Lower clip for estimated propensities; the upper clip is `1 − PROPENSITY_CLIP`.
pub const PROPENSITY_CLIP: f64 = 1e-3;

/// Logistic model for `P(A = +1 | X = x)`, intercept first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityModel {
    pub kind: String,
    pub coefficients: Vec<f64>,
    #[serde(skip)]
    pub diagnostics: PropensityDiagnostics,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PropensityDiagnostics {
    pub iterations: usize,
    pub converged: bool,
    /// Share of subjects whose fitted probability hit a clip bound.
    pub clipped_fraction: f64,
}

impl PropensityDiagnostics {
    /// More than half of the fitted probabilities at the clip bounds.
    pub fn separation_suspected(&self) -> bool {
        self.clipped_fraction > 0.5
    }
}

impl PropensityModel {
    fn raw_probability(&self, x: &[f64]) -> f64 {
        let eta = linear_eval(&self.coefficients, x);
        1.0 / (1.0 + (-eta).exp())
    }

    /// Clipped `π̂(+1, x)`.
    pub fn propensity_plus(&self, x: &[f64]) -> f64 {
        self.raw_probability(x).clamp(PROPENSITY_CLIP, 1.0 - PROPENSITY_CLIP)
    }

    /// Clipped `π̂(aᵢ, xᵢ)` for each subject's received arm.
    pub fn received_propensities(&self, dataset: &TrialDataset) -> Vec<f64> {
        (0..dataset.n())
            .map(|i| {
                let p = self.propensity_plus(&dataset.covariate_row(i));
                match dataset.treatments()[i] {
                    Arm::Plus => p,
                    Arm::Minus => 1.0 - p,
                }
            })
            .collect()
    }
}

/// Logistic regression of `I(A = +1)` on `[1, X]` by damped Newton steps,
/// until the mean-score norm falls below `1e-8` (at most 100 iterations).
pub fn estimate_propensity(dataset: &TrialDataset) -> Result<PropensityModel> {
    let n_plus = dataset.count_arm(Arm::Plus);
    if n_plus == 0 || n_plus == dataset.n() {
        return Err(AolError::DegenerateArm(
            "propensity estimation needs subjects in both arms".into(),
        ));
    }
    let design = with_intercept(dataset.covariates());
    let (n, dim) = design.shape();
    let y: Vec<f64> = dataset
        .treatments()
        .iter()
        .map(|&a| if a == Arm::Plus { 1.0 } else { 0.0 })
        .collect();
    let nf = n as f64;

    let log_lik = |beta: &DVector<f64>| -> f64 {
        let eta = &design * beta;
        eta.iter()
            .zip(&y)
            .map(|(&e, &t)| {
                // t·e − log(1 + e^e)
                let softplus = if e > 0.0 { e + (-e).exp().ln_1p() } else { e.exp().ln_1p() };
                t * e - softplus
            })
            .sum::<f64>()
            / nf
    };

    let mut beta = DVector::zeros(dim);
    let mut current = log_lik(&beta);
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..100 {
        iterations = it;
        let eta = &design * &beta;
        let mut grad = DVector::zeros(dim);
        let mut hess = DMatrix::zeros(dim, dim);
        for i in 0..n {
            let mu = 1.0 / (1.0 + (-eta[i]).exp());
            let row = design.row(i);
            let resid = y[i] - mu;
            let w = mu * (1.0 - mu);
            for a in 0..dim {
                grad[a] += resid * row[a] / nf;
                for b in 0..=a {
                    hess[(a, b)] += w * row[a] * row[b] / nf;
                }
            }
        }
        for a in 0..dim {
            for b in 0..a {
                hess[(b, a)] = hess[(a, b)];
            }
        }
        if grad.norm() <= 1e-8 {
            converged = true;
            break;
        }
        let Some((step, _)) = solve_spd_with_ridge(&hess, &grad) else {
            break;
        };
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..50 {
            let candidate = &beta + t * &step;
            let value = log_lik(&candidate);
            if value.is_finite() && value >= current {
                beta = candidate;
                current = value;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }

    let mut model = PropensityModel {
        kind: "logistic_propensity".into(),
        coefficients: beta.iter().copied().collect(),
        diagnostics: PropensityDiagnostics::default(),
    };
    let clipped = (0..n)
        .filter(|&i| {
            let p = model.raw_probability(&dataset.covariate_row(i));
            !(PROPENSITY_CLIP..=1.0 - PROPENSITY_CLIP).contains(&p)
        })
        .count();
    model.diagnostics = PropensityDiagnostics {
        iterations,
        converged,
        clipped_fraction: clipped as f64 / nf,
    };
    if model.diagnostics.separation_suspected() {
        log::warn!(
            "propensity model: {:.1}% of subjects at the clip bound, arms look separable",
            100.0 * model.diagnostics.clipped_fraction
        );
    }
    Ok(model)
}
