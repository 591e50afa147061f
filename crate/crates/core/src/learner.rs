//! AOL decision rules: linear, kernel, elastic-net linear and covariate-scaled
//! kernel fits, prediction and the model document.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{derive_seed, Arm};
use crate::error::{AolError, Result};
use crate::kernels::{kernel_matrix, kernel_value, median_heuristic, KernelSpec};
use crate::linalg::PivotedCholesky;
use crate::losses::SurrogateLoss;
use crate::optimize::{lbfgs_minimize, lbfgsb_minimize, pss_minimize, Objective, SolverOptions, SolverStatus};
use crate::residuals::WeightedClassificationProblem;

pub const RULE_VERSION: &str = "aol-rule/1";

/// Relative diagonal threshold at which the Gram factorization stops.
const GRAM_RANK_TOLERANCE: f64 = 1e-10;

/// Per-feature `(x − mean) / scale`. Constant features keep scale 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardization {
    pub fn fit(x: &DMatrix<f64>) -> Self {
        let n = x.nrows().max(1) as f64;
        let (mut mean, mut scale) = (Vec::new(), Vec::new());
        for col in x.column_iter() {
            let m = col.sum() / n;
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            let sd = var.sqrt();
            mean.push(m);
            scale.push(if sd > 1e-12 * (1.0 + m.abs()) { sd } else { 1.0 });
        }
        Standardization { mean, scale }
    }

    pub fn identity(p: usize) -> Self {
        Standardization {
            mean: vec![0.0; p],
            scale: vec![1.0; p],
        }
    }

    pub fn p(&self) -> usize {
        self.mean.len()
    }

    pub fn apply_row(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| (x[(i, j)] - self.mean[j]) / self.scale[j])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearRule {
    pub w: Vec<f64>,
    pub b: f64,
    pub standardization: Standardization,
}

/// `f(x) = Σⱼ vⱼ K(x̃, zⱼ) + b` with support points `zⱼ` stored in
/// standardized coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelRule {
    pub v: Vec<f64>,
    pub b: f64,
    pub support: Vec<Vec<f64>>,
    pub kernel: KernelSpec,
    pub standardization: Standardization,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DecisionRule {
    Linear(LinearRule),
    Kernel(KernelRule),
}

#[derive(Serialize, Deserialize)]
struct RuleDocument {
    version: String,
    #[serde(flatten)]
    rule: DecisionRule,
}

impl DecisionRule {
    pub fn p(&self) -> usize {
        match self {
            DecisionRule::Linear(r) => r.standardization.p(),
            DecisionRule::Kernel(r) => r.standardization.p(),
        }
    }

    /// Decision value for one raw covariate row.
    pub fn decision_value(&self, x: &[f64]) -> f64 {
        match self {
            DecisionRule::Linear(r) => {
                let z = r.standardization.apply_row(x);
                r.w.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>() + r.b
            }
            DecisionRule::Kernel(r) => {
                let z = r.standardization.apply_row(x);
                r.v.iter()
                    .zip(&r.support)
                    .filter(|(v, _)| **v != 0.0)
                    .map(|(v, s)| v * kernel_value(&r.kernel, &z, s))
                    .sum::<f64>()
                    + r.b
            }
        }
    }

    /// Covariates the rule depends on: nonzero `w` entries, or positive `η`
    /// entries for a scaled kernel. `None` for kernels that use every covariate.
    pub fn selected_covariates(&self) -> Option<Vec<usize>> {
        match self {
            DecisionRule::Linear(r) => Some((0..r.w.len()).filter(|&j| r.w[j] != 0.0).collect()),
            DecisionRule::Kernel(KernelRule {
                kernel: KernelSpec::ScaledRbf { eta },
                ..
            }) => Some((0..eta.len()).filter(|&j| eta[j] > 0.0).collect()),
            DecisionRule::Kernel(_) => None,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&RuleDocument {
            version: RULE_VERSION.to_string(),
            rule: self.clone(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<DecisionRule> {
        let doc: RuleDocument = serde_json::from_str(text)?;
        if doc.version != RULE_VERSION {
            return Err(AolError::InvalidInput(format!(
                "unsupported model version {:?}, expected {RULE_VERSION:?}",
                doc.version
            )));
        }
        let rule = doc.rule;
        let consistent = match &rule {
            DecisionRule::Linear(r) => r.w.len() == r.standardization.p() && r.standardization.scale.len() == r.w.len(),
            DecisionRule::Kernel(r) => {
                r.v.len() == r.support.len()
                    && r.support.iter().all(|s| s.len() == r.standardization.p())
                    && r.kernel.validate(r.standardization.p()).is_ok()
            }
        };
        if !consistent {
            return Err(AolError::InvalidInput("model document has inconsistent dimensions".into()));
        }
        Ok(rule)
    }
}

/// Raw decision values for the rows of `x`.
pub fn decision_values(rule: &DecisionRule, x: &DMatrix<f64>) -> Result<Vec<f64>> {
    if x.ncols() != rule.p() {
        return Err(AolError::DimensionMismatch {
            expected: rule.p(),
            got: x.ncols(),
        });
    }
    Ok((0..x.nrows())
        .map(|i| {
            let row: Vec<f64> = x.row(i).iter().copied().collect();
            rule.decision_value(&row)
        })
        .collect())
}

/// `+1` where the decision value is strictly positive, `−1` otherwise.
pub fn predict(rule: &DecisionRule, x: &DMatrix<f64>) -> Result<Vec<Arm>> {
    Ok(decision_values(rule, x)?.into_iter().map(Arm::from_decision).collect())
}

fn signs(labels: &[Arm]) -> Vec<f64> {
    labels.iter().map(|a| a.sign()).collect()
}

/// Per-subject loss values and `cᵢ = wᵢ φ'(uᵢ) yᵢ / n` for decision values `f`.
fn loss_terms(loss: SurrogateLoss, labels: &[f64], weights: &[f64], f: &[f64]) -> (f64, Vec<f64>) {
    let n = labels.len().max(1) as f64;
    let mut total = 0.0;
    let mut c = Vec::with_capacity(labels.len());
    for ((y, w), fi) in labels.iter().zip(weights).zip(f) {
        if *w == 0.0 {
            c.push(0.0);
            continue;
        }
        let u = y * fi;
        total += w * loss.value(u);
        c.push(w * loss.derivative(u) * y / n);
    }
    (total / n, c)
}

/// `(1/n) Σ wᵢ φ(yᵢ(dᵢᵀθ + b)) + (λ/2)‖θ‖²` over the rows `dᵢ` of a design
/// matrix. Parameters are laid out as `(θ, b)`.
pub struct LinearObjective {
    design: DMatrix<f64>,
    labels: Vec<f64>,
    weights: Vec<f64>,
    loss: SurrogateLoss,
    lambda: f64,
}

impl LinearObjective {
    pub fn new(design: DMatrix<f64>, labels: &[Arm], weights: &[f64], loss: SurrogateLoss, lambda: f64) -> Result<Self> {
        check_lengths(design.nrows(), labels.len(), weights.len())?;
        Ok(LinearObjective {
            design,
            labels: signs(labels),
            weights: weights.to_vec(),
            loss,
            lambda,
        })
    }
}

fn check_lengths(n: usize, labels: usize, weights: usize) -> Result<()> {
    if labels != n || weights != n {
        return Err(AolError::InvalidInput(format!(
            "length mismatch: {n} rows, {labels} labels, {weights} weights"
        )));
    }
    Ok(())
}

impl Objective for LinearObjective {
    fn dim(&self) -> usize {
        self.design.ncols() + 1
    }

    fn eval(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let d = self.design.ncols();
        let w = DVector::from_column_slice(&x[..d]);
        let b = x[d];
        let mut f = &self.design * &w;
        f.add_scalar_mut(b);
        let (loss, c) = loss_terms(self.loss, &self.labels, &self.weights, f.as_slice());
        let c = DVector::from_vec(c);
        let gw = self.design.tr_mul(&c) + &w * self.lambda;
        grad[..d].copy_from_slice(gw.as_slice());
        grad[d] = c.sum();
        loss + 0.5 * self.lambda * w.norm_squared()
    }
}

/// `(1/n) Σ wᵢ φ(yᵢ(Kv + b)ᵢ) + (λ/2) vᵀKv` with parameters `(v, b)`.
pub struct KernelObjective {
    gram: DMatrix<f64>,
    labels: Vec<f64>,
    weights: Vec<f64>,
    loss: SurrogateLoss,
    lambda: f64,
}

impl KernelObjective {
    pub fn new(gram: DMatrix<f64>, labels: &[Arm], weights: &[f64], loss: SurrogateLoss, lambda: f64) -> Result<Self> {
        check_lengths(gram.nrows(), labels.len(), weights.len())?;
        if !gram.is_square() {
            return Err(AolError::InvalidInput("Gram matrix must be square".into()));
        }
        Ok(KernelObjective {
            gram,
            labels: signs(labels),
            weights: weights.to_vec(),
            loss,
            lambda,
        })
    }
}

impl Objective for KernelObjective {
    fn dim(&self) -> usize {
        self.gram.nrows() + 1
    }

    fn eval(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let n = self.gram.nrows();
        let v = DVector::from_column_slice(&x[..n]);
        let kv = &self.gram * &v;
        let f: Vec<f64> = kv.iter().map(|a| a + x[n]).collect();
        let (loss, c) = loss_terms(self.loss, &self.labels, &self.weights, &f);
        let c = DVector::from_vec(c);
        let gv = &self.gram * &c + &kv * self.lambda;
        grad[..n].copy_from_slice(gv.as_slice());
        grad[n] = c.sum();
        loss + 0.5 * self.lambda * v.dot(&kv)
    }
}

/// Joint objective over `(v, b, η)` for the covariate-scaled Gaussian kernel:
/// `(1/n) Σ wᵢ φ(yᵢ(K_η v + b)ᵢ) + λ₁ Σⱼ ηⱼ + (λ₂/2) vᵀK_η v`. The `Σηⱼ`
/// term equals `λ₁‖η‖₁` on the feasible set `η ≥ 0`.
pub struct ScaledKernelObjective {
    x: DMatrix<f64>,
    labels: Vec<f64>,
    weights: Vec<f64>,
    loss: SurrogateLoss,
    lambda1: f64,
    lambda2: f64,
}

impl ScaledKernelObjective {
    pub fn new(
        x: DMatrix<f64>,
        labels: &[Arm],
        weights: &[f64],
        loss: SurrogateLoss,
        lambda1: f64,
        lambda2: f64,
    ) -> Result<Self> {
        check_lengths(x.nrows(), labels.len(), weights.len())?;
        Ok(ScaledKernelObjective {
            x,
            labels: signs(labels),
            weights: weights.to_vec(),
            loss,
            lambda1,
            lambda2,
        })
    }

    fn gram(&self, eta: &[f64]) -> DMatrix<f64> {
        let n = self.x.nrows();
        let p = self.x.ncols();
        let mut k = DMatrix::zeros(n, n);
        for a in 0..n {
            k[(a, a)] = 1.0;
            for b in 0..a {
                let mut s = 0.0;
                for j in 0..p {
                    let d = self.x[(a, j)] - self.x[(b, j)];
                    s += eta[j] * d * d;
                }
                let v = (-s).exp();
                k[(a, b)] = v;
                k[(b, a)] = v;
            }
        }
        k
    }
}

impl Objective for ScaledKernelObjective {
    fn dim(&self) -> usize {
        self.x.nrows() + 1 + self.x.ncols()
    }

    fn eval(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let n = self.x.nrows();
        let p = self.x.ncols();
        let v = DVector::from_column_slice(&theta[..n]);
        let b = theta[n];
        let eta = &theta[n + 1..];
        let k = self.gram(eta);
        let kv = &k * &v;
        let f: Vec<f64> = kv.iter().map(|a| a + b).collect();
        let (loss, c) = loss_terms(self.loss, &self.labels, &self.weights, &f);
        let c = DVector::from_vec(c);
        let gv = &k * &c + &kv * self.lambda2;
        grad[..n].copy_from_slice(gv.as_slice());
        grad[n] = c.sum();
        // ∂/∂ηⱼ = λ₁ − Σᵢₖ (xᵢⱼ − xₖⱼ)² Kᵢₖ vₖ (cᵢ + λ₂vᵢ/2)
        let mut ge = vec![self.lambda1; p];
        for i in 0..n {
            let ai = c[i] + 0.5 * self.lambda2 * v[i];
            if ai == 0.0 {
                continue;
            }
            for kk in 0..n {
                if kk == i || v[kk] == 0.0 {
                    continue;
                }
                let m = ai * k[(i, kk)] * v[kk];
                for (j, g) in ge.iter_mut().enumerate() {
                    let d = self.x[(i, j)] - self.x[(kk, j)];
                    *g -= m * d * d;
                }
            }
        }
        grad[n + 1..].copy_from_slice(&ge);
        loss + self.lambda1 * eta.iter().sum::<f64>() + 0.5 * self.lambda2 * v.dot(&kv)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    AolLinear,
    AolGaussian,
    AolVsLinear,
    AolVsGaussian,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::AolLinear, Method::AolGaussian, Method::AolVsLinear, Method::AolVsGaussian];

    pub fn name(self) -> &'static str {
        match self {
            Method::AolLinear => "aol_linear",
            Method::AolGaussian => "aol_gaussian",
            Method::AolVsLinear => "aol_vs_linear",
            Method::AolVsGaussian => "aol_vs_gaussian",
        }
    }

    pub fn from_name(name: &str) -> Option<Method> {
        Self::ALL.into_iter().find(|m| m.name() == name)
    }

    pub fn is_variable_selection(self) -> bool {
        matches!(self, Method::AolVsLinear | Method::AolVsGaussian)
    }
}

/// Tuning and solver settings for one fit. `lambda` is the ridge/RKHS
/// penalty (λ₂ for the selection methods); `lambda1` is the L1 weight used
/// only by the selection methods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub loss: SurrogateLoss,
    pub lambda: f64,
    pub lambda1: f64,
    /// Gaussian width; `None` uses the median heuristic on the standardized
    /// training covariates.
    pub sigma: Option<f64>,
    /// Starting scale factors for the scaled kernel; `None` uses `σ²/p` from
    /// the median heuristic in every coordinate.
    pub eta0: Option<Vec<f64>>,
    pub solver: SolverOptions,
    pub n_starts: usize,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            loss: SurrogateLoss::HuberizedHinge,
            lambda: 0.01,
            lambda1: 0.0,
            sigma: None,
            eta0: None,
            solver: SolverOptions::default(),
            n_starts: 1,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self, method: Method) -> Result<()> {
        self.solver.validate()?;
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(AolError::InvalidInput(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if method.is_variable_selection() && !(self.lambda1 > 0.0 && self.lambda1.is_finite()) {
            return Err(AolError::InvalidInput(format!("lambda1 must be > 0, got {}", self.lambda1)));
        }
        if method == Method::AolVsGaussian && !(self.lambda > 0.0) {
            return Err(AolError::InvalidInput("lambda2 must be > 0 for the scaled kernel".into()));
        }
        if let Some(s) = self.sigma {
            if !(s > 0.0 && s.is_finite()) {
                return Err(AolError::InvalidInput(format!("sigma must be > 0, got {s}")));
            }
        }
        if self.n_starts == 0 {
            return Err(AolError::InvalidInput("n_starts must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOutcome {
    pub rule: DecisionRule,
    /// Training objective at the returned parameters.
    pub objective: f64,
    pub iterations: usize,
    pub status: SolverStatus,
}

fn note_status(what: &str, status: SolverStatus) {
    if status != SolverStatus::Converged {
        log::warn!("{what}: solver stopped with status {status:?}");
    }
}

/// Minimizes the linear AOL objective from `(w, b) = 0`.
pub fn fit_linear(problem: &WeightedClassificationProblem, cfg: &FitConfig) -> Result<FitOutcome> {
    cfg.validate(Method::AolLinear)?;
    let st = Standardization::fit(problem.covariates());
    let obj = LinearObjective::new(st.apply(problem.covariates()), problem.labels(), problem.weights(), cfg.loss, cfg.lambda)?;
    let res = lbfgs_minimize(&obj, &vec![0.0; obj.dim()], &cfg.solver)?;
    note_status("linear fit", res.status);
    let p = problem.p();
    Ok(FitOutcome {
        rule: DecisionRule::Linear(LinearRule {
            w: res.x[..p].to_vec(),
            b: res.x[p],
            standardization: st,
        }),
        objective: res.value,
        iterations: res.iterations,
        status: res.status,
    })
}

/// Elastic-net linear fit: L1 weight `lambda1` on `w`, ridge `lambda` folded
/// into the smooth part, intercept unpenalized.
pub fn fit_linear_vs(problem: &WeightedClassificationProblem, cfg: &FitConfig) -> Result<FitOutcome> {
    cfg.validate(Method::AolVsLinear)?;
    let st = Standardization::fit(problem.covariates());
    let obj = LinearObjective::new(st.apply(problem.covariates()), problem.labels(), problem.weights(), cfg.loss, cfg.lambda)?;
    let p = problem.p();
    let mut mask = vec![true; p + 1];
    mask[p] = false;
    let res = pss_minimize(&obj, cfg.lambda1, &mask, &vec![0.0; p + 1], &cfg.solver)?;
    note_status("elastic-net fit", res.status);
    Ok(FitOutcome {
        rule: DecisionRule::Linear(LinearRule {
            w: res.x[..p].to_vec(),
            b: res.x[p],
            standardization: st,
        }),
        objective: res.value,
        iterations: res.iterations,
        status: res.status,
    })
}

/// Kernel to use for a Gaussian fit on standardized covariates `z`.
pub fn gaussian_kernel(cfg: &FitConfig, z: &DMatrix<f64>) -> Result<KernelSpec> {
    let sigma = match cfg.sigma {
        Some(s) => s,
        None => median_heuristic(z, cfg.seed)?,
    };
    Ok(KernelSpec::Rbf { sigma })
}

/// Standardized covariates and the factored Gram matrix for one kernel,
/// reusable across penalty values.
pub struct KernelBasis {
    kernel: KernelSpec,
    standardization: Standardization,
    z: DMatrix<f64>,
    chol: PivotedCholesky,
}

impl KernelBasis {
    pub fn new(problem: &WeightedClassificationProblem, kernel: &KernelSpec) -> Result<Self> {
        kernel.validate(problem.p())?;
        let standardization = Standardization::fit(problem.covariates());
        let z = standardization.apply(problem.covariates());
        let gram = kernel_matrix(kernel, &z, &z)?;
        let chol = PivotedCholesky::new(&gram, GRAM_RANK_TOLERANCE);
        Ok(KernelBasis {
            kernel: kernel.clone(),
            standardization,
            z,
            chol,
        })
    }

    /// Numerical rank of the Gram matrix.
    pub fn rank(&self) -> usize {
        self.chol.rank()
    }
}

/// Fits `f = Kv + b` with RKHS penalty `(λ/2)vᵀKv` on a prepared basis.
///
/// The Gram matrix is factored as `K = GGᵀ` by pivoted Cholesky at its
/// numerical rank and the equivalent problem in `β = Gᵀv` (a linear fit on
/// the rows of `G`) is solved instead; the returned rule is supported on the
/// pivot points with `v = L⁻ᵀβ`, `L` the pivot block of `G`.
pub fn fit_kernel_on(problem: &WeightedClassificationProblem, basis: &KernelBasis, cfg: &FitConfig) -> Result<FitOutcome> {
    cfg.validate(Method::AolGaussian)?;
    if basis.z.nrows() != problem.n() {
        return Err(AolError::DimensionMismatch {
            expected: basis.z.nrows(),
            got: problem.n(),
        });
    }
    let chol = &basis.chol;
    let r = chol.rank();
    let obj = LinearObjective::new(chol.factor.clone(), problem.labels(), problem.weights(), cfg.loss, cfg.lambda)?;
    let res = lbfgs_minimize(&obj, &vec![0.0; r + 1], &cfg.solver)?;
    note_status("kernel fit", res.status);
    let v = if r > 0 { chol.pivot_coefficients(&res.x[..r]) } else { Vec::new() };
    let support = chol
        .pivots
        .iter()
        .map(|&i| basis.z.row(i).iter().copied().collect())
        .collect();
    Ok(FitOutcome {
        rule: DecisionRule::Kernel(KernelRule {
            v,
            b: res.x[r],
            support,
            kernel: basis.kernel.clone(),
            standardization: basis.standardization.clone(),
        }),
        objective: res.value,
        iterations: res.iterations,
        status: res.status,
    })
}

/// Kernel fit for an explicit kernel.
pub fn fit_kernel_with(problem: &WeightedClassificationProblem, kernel: &KernelSpec, cfg: &FitConfig) -> Result<FitOutcome> {
    cfg.validate(Method::AolGaussian)?;
    fit_kernel_on(problem, &KernelBasis::new(problem, kernel)?, cfg)
}

/// Gaussian-kernel fit with `σ` from the config or the median heuristic.
pub fn fit_kernel(problem: &WeightedClassificationProblem, cfg: &FitConfig) -> Result<FitOutcome> {
    let st = Standardization::fit(problem.covariates());
    let kernel = gaussian_kernel(cfg, &st.apply(problem.covariates()))?;
    fit_kernel_with(problem, &kernel, cfg)
}

/// Scaled-kernel selection fit: joint minimization over `(v, b, η)` subject
/// to `η ≥ 0`, best of `n_starts` runs. The problem is non-convex, so the
/// result is a local minimizer.
pub fn fit_kernel_vs(problem: &WeightedClassificationProblem, cfg: &FitConfig) -> Result<FitOutcome> {
    cfg.validate(Method::AolVsGaussian)?;
    let n = problem.n();
    let p = problem.p();
    let st = Standardization::fit(problem.covariates());
    let z = st.apply(problem.covariates());
    let eta0 = match &cfg.eta0 {
        Some(e) => {
            KernelSpec::ScaledRbf { eta: e.clone() }.validate(p)?;
            e.clone()
        }
        None => {
            let sigma = match cfg.sigma {
                Some(s) => s,
                None => median_heuristic(&z, cfg.seed)?,
            };
            vec![sigma * sigma / p as f64; p]
        }
    };
    let obj = ScaledKernelObjective::new(z.clone(), problem.labels(), problem.weights(), cfg.loss, cfg.lambda1, cfg.lambda)?;
    let mut lower = vec![f64::NEG_INFINITY; n + 1 + p];
    let upper = vec![f64::INFINITY; n + 1 + p];
    for l in lower[n + 1..].iter_mut() {
        *l = 0.0;
    }
    let mut best: Option<crate::optimize::SolverResult> = None;
    for start in 0..cfg.n_starts {
        let eta_start: Vec<f64> = if start == 0 {
            eta0.clone()
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0x5eed, start as u64));
            eta0.iter().map(|e| e * rng.random_range(-1.0f64..1.0).exp()).collect()
        };
        let mut x0 = vec![0.0; n + 1];
        x0.extend_from_slice(&eta_start);
        let res = lbfgsb_minimize(&obj, &lower, &upper, &x0, &cfg.solver)?;
        note_status("scaled-kernel fit", res.status);
        if best.as_ref().is_none_or(|b| res.value < b.value) {
            best = Some(res);
        }
    }
    let res = best.expect("n_starts >= 1");
    let eta = res.x[n + 1..].to_vec();
    Ok(FitOutcome {
        rule: DecisionRule::Kernel(KernelRule {
            v: res.x[..n].to_vec(),
            b: res.x[n],
            support: (0..n).map(|i| z.row(i).iter().copied().collect()).collect(),
            kernel: KernelSpec::ScaledRbf { eta },
            standardization: st,
        }),
        objective: res.value,
        iterations: res.iterations,
        status: res.status,
    })
}

/// Fits every config on the same problem. Gaussian fits sharing a width
/// reuse one factored Gram matrix.
pub fn fit_many(method: Method, problem: &WeightedClassificationProblem, cfgs: &[FitConfig]) -> Vec<Result<FitOutcome>> {
    if method != Method::AolGaussian {
        return cfgs.iter().map(|c| fit(method, problem, c)).collect();
    }
    let z = Standardization::fit(problem.covariates()).apply(problem.covariates());
    let mut cache: Vec<(KernelSpec, KernelBasis)> = Vec::new();
    cfgs.iter()
        .map(|cfg| {
            cfg.validate(method)?;
            let kernel = gaussian_kernel(cfg, &z)?;
            let idx = match cache.iter().position(|(k, _)| *k == kernel) {
                Some(i) => i,
                None => {
                    cache.push((kernel.clone(), KernelBasis::new(problem, &kernel)?));
                    cache.len() - 1
                }
            };
            fit_kernel_on(problem, &cache[idx].1, cfg)
        })
        .collect()
}

/// Dispatches to the fit for `method`.
pub fn fit(method: Method, problem: &WeightedClassificationProblem, cfg: &FitConfig) -> Result<FitOutcome> {
    match method {
        Method::AolLinear => fit_linear(problem, cfg),
        Method::AolGaussian => fit_kernel(problem, cfg),
        Method::AolVsLinear => fit_linear_vs(problem, cfg),
        Method::AolVsGaussian => fit_kernel_vs(problem, cfg),
    }
}
