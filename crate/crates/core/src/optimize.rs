//! Limited-memory quasi-Newton solvers: plain L-BFGS with a strong-Wolfe line
//! search, an orthant-wise variant for L1-composite objectives and a projected
//! variant for box constraints.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{AolError, Result};

/// Smooth objective with analytic gradient.
pub trait Objective: Sync {
    fn dim(&self) -> usize;
    /// Writes the gradient into `grad` and returns the value.
    fn eval(&self, x: &[f64], grad: &mut [f64]) -> f64;

    fn value(&self, x: &[f64]) -> f64 {
        let mut g = vec![0.0; self.dim()];
        self.eval(x, &mut g)
    }
}

/// Adapter turning a closure into an [`Objective`].
pub struct FnObjective<F> {
    dim: usize,
    f: F,
}

impl<F> FnObjective<F>
where
    F: Fn(&[f64], &mut [f64]) -> f64 + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        FnObjective { dim, f }
    }
}

impl<F> Objective for FnObjective<F>
where
    F: Fn(&[f64], &mut [f64]) -> f64 + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        (self.f)(x, grad)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub memory: usize,
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    pub c1: f64,
    pub c2: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            memory: 10,
            max_iterations: 500,
            gradient_tolerance: 1e-6,
            c1: 1e-4,
            c2: 0.9,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if self.memory == 0 {
            return Err(AolError::InvalidInput("solver memory must be >= 1".into()));
        }
        if !(self.gradient_tolerance > 0.0) {
            return Err(AolError::InvalidInput("gradient tolerance must be > 0".into()));
        }
        if !(0.0 < self.c1 && self.c1 < self.c2 && self.c2 < 1.0) {
            return Err(AolError::InvalidInput(
                "line-search constants need 0 < c1 < c2 < 1".into(),
            ));
        }
        Ok(())
    }

    fn threshold(&self, x: &[f64]) -> f64 {
        self.gradient_tolerance * inf_norm(x).max(1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverStatus {
    Converged,
    MaxIterations,
    /// No step satisfying the line-search conditions could be found, even
    /// along the steepest-descent direction. Happens at the limits of
    /// floating-point resolution near a minimizer.
    Stalled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub status: SolverStatus,
    pub iterations: usize,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, a| m.max(a.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|a| a.is_finite())
}

/// Curvature pairs for the two-loop recursion.
struct History {
    pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)>,
    memory: usize,
}

impl History {
    fn new(memory: usize) -> Self {
        History {
            pairs: VecDeque::with_capacity(memory),
            memory,
        }
    }

    fn push(&mut self, s: Vec<f64>, y: Vec<f64>) {
        let sy = dot(&s, &y);
        let yy = dot(&y, &y);
        if !(sy > 1e-10 * yy) || !sy.is_finite() {
            return;
        }
        if self.pairs.len() == self.memory {
            self.pairs.pop_front();
        }
        self.pairs.push_back((s, y, 1.0 / sy));
    }

    fn clear(&mut self) {
        self.pairs.clear();
    }

    fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// `H q` for the implicit inverse-Hessian approximation, restricted to the
    /// coordinates where `free` is true (all coordinates when `free` is None).
    fn apply(&self, q: &[f64], free: Option<&[bool]>) -> Vec<f64> {
        let keep = |j: usize| free.is_none_or(|f| f[j]);
        let masked = |v: &[f64]| -> Vec<f64> {
            v.iter()
                .enumerate()
                .map(|(j, a)| if keep(j) { *a } else { 0.0 })
                .collect()
        };
        let mut r = masked(q);
        let pairs: Vec<(Vec<f64>, Vec<f64>, f64)> = match free {
            None => self.pairs.iter().cloned().collect(),
            Some(_) => self
                .pairs
                .iter()
                .filter_map(|(s, y, _)| {
                    let s = masked(s);
                    let y = masked(y);
                    let sy = dot(&s, &y);
                    (sy > 1e-10 * dot(&y, &y)).then(|| (s, y, 1.0 / sy))
                })
                .collect(),
        };
        let mut alphas = vec![0.0; pairs.len()];
        for (k, (s, y, rho)) in pairs.iter().enumerate().rev() {
            let a = rho * dot(s, &r);
            alphas[k] = a;
            for (ri, yi) in r.iter_mut().zip(y) {
                *ri -= a * yi;
            }
        }
        if let Some((s, y, _)) = pairs.last() {
            let gamma = dot(s, y) / dot(y, y);
            for ri in r.iter_mut() {
                *ri *= gamma;
            }
        }
        for (k, (s, y, rho)) in pairs.iter().enumerate() {
            let b = rho * dot(y, &r);
            for (ri, si) in r.iter_mut().zip(s) {
                *ri += (alphas[k] - b) * si;
            }
        }
        r
    }
}

fn evaluate(obj: &dyn Objective, x: &[f64], iteration: usize) -> Result<(f64, Vec<f64>)> {
    let mut g = vec![0.0; x.len()];
    let f = obj.eval(x, &mut g);
    if !f.is_finite() || !all_finite(&g) {
        return Err(AolError::Solver {
            iteration,
            message: format!("non-finite objective or gradient at iterate {x:?}"),
        });
    }
    Ok((f, g))
}

fn check_start(obj: &dyn Objective, x0: &[f64], opts: &SolverOptions) -> Result<()> {
    opts.validate()?;
    if x0.len() != obj.dim() {
        return Err(AolError::DimensionMismatch {
            expected: obj.dim(),
            got: x0.len(),
        });
    }
    if !all_finite(x0) {
        return Err(AolError::Solver {
            iteration: 0,
            message: "non-finite starting point".into(),
        });
    }
    Ok(())
}

struct Trial {
    step: f64,
    x: Vec<f64>,
    f: f64,
    g: Vec<f64>,
}

/// Minimizer of the cubic interpolating values and slopes at `a` and `b`,
/// safeguarded to the interior of the bracket.
fn cubic_step(a: f64, fa: f64, da: f64, b: f64, fb: f64, db: f64) -> f64 {
    let d1 = da + db - 3.0 * (fa - fb) / (a - b);
    let disc = d1 * d1 - da * db;
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    let mid = 0.5 * (a + b);
    if disc < 0.0 {
        return mid;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    let t = b - (b - a) * (db + d2 - d1) / (db - da + 2.0 * d2);
    let margin = 0.1 * (hi - lo);
    if !t.is_finite() || t < lo + margin || t > hi - margin {
        mid
    } else {
        t
    }
}

const MAX_LINE_SEARCH: usize = 40;

/// Strong-Wolfe line search from `x` along `d`. Non-finite trial values shrink
/// the step instead of being accepted.
fn strong_wolfe(
    obj: &dyn Objective,
    x: &[f64],
    f0: f64,
    g0: &[f64],
    d: &[f64],
    initial: f64,
    opts: &SolverOptions,
) -> Option<Trial> {
    let dphi0 = dot(g0, d);
    if !(dphi0 < 0.0) {
        return None;
    }
    let probe = |step: f64| -> Option<Trial> {
        let xt: Vec<f64> = x.iter().zip(d).map(|(a, b)| a + step * b).collect();
        let mut g = vec![0.0; x.len()];
        let f = obj.eval(&xt, &mut g);
        (f.is_finite() && all_finite(&g)).then_some(Trial { step, x: xt, f, g })
    };
    let armijo = |t: &Trial| t.f <= f0 + opts.c1 * t.step * dphi0;
    let curvature = |t: &Trial| dot(&t.g, d).abs() <= -opts.c2 * dphi0;

    let mut prev_step = 0.0;
    let mut prev_f = f0;
    let mut prev_d = dphi0;
    let mut prev_trial: Option<Trial> = None;
    let mut step = initial;
    let mut evals = 0;
    let (mut lo, mut hi);
    loop {
        evals += 1;
        if evals > MAX_LINE_SEARCH {
            return None;
        }
        let Some(t) = probe(step) else {
            step *= 0.5;
            continue;
        };
        let dt = dot(&t.g, d);
        if !armijo(&t) || (prev_trial.is_some() && t.f >= prev_f) {
            lo = (prev_step, prev_f, prev_d, prev_trial);
            hi = (t.step, t.f, dt);
            break;
        }
        if curvature(&t) {
            return Some(t);
        }
        if dt >= 0.0 {
            hi = (prev_step, prev_f, prev_d);
            lo = (t.step, t.f, dt, Some(t));
            break;
        }
        prev_step = t.step;
        prev_f = t.f;
        prev_d = dt;
        step = t.step * 2.0;
        prev_trial = Some(t);
    }

    // zoom
    while evals < MAX_LINE_SEARCH {
        evals += 1;
        let (a_lo, f_lo, d_lo, _) = &lo;
        let (a_hi, f_hi, d_hi) = hi;
        if (a_hi - a_lo).abs() <= 1e-16 * a_lo.abs().max(1.0) {
            break;
        }
        let a = cubic_step(*a_lo, *f_lo, *d_lo, a_hi, f_hi, d_hi);
        let Some(t) = probe(a) else {
            hi = (a, f64::INFINITY, 0.0);
            continue;
        };
        let dt = dot(&t.g, d);
        if !armijo(&t) || t.f >= *f_lo {
            hi = (t.step, t.f, dt);
        } else {
            if curvature(&t) {
                return Some(t);
            }
            if dt * (a_hi - a_lo) >= 0.0 {
                hi = (*a_lo, *f_lo, *d_lo);
            }
            lo = (t.step, t.f, dt, Some(t));
        }
    }
    // Fall back to the best point with sufficient decrease.
    lo.3.filter(|t| armijo(t) && t.f < f0)
}

/// Minimizes a smooth objective. Stops when `‖∇f‖∞ ≤ tol·max(1, ‖x‖∞)`.
pub fn lbfgs_minimize(obj: &dyn Objective, x0: &[f64], opts: &SolverOptions) -> Result<SolverResult> {
    check_start(obj, x0, opts)?;
    let mut x = x0.to_vec();
    let (mut f, mut g) = evaluate(obj, &x, 0)?;
    let mut hist = History::new(opts.memory);
    let mut iter = 0;
    loop {
        if inf_norm(&g) <= opts.threshold(&x) {
            return Ok(SolverResult { x, value: f, status: SolverStatus::Converged, iterations: iter });
        }
        if iter >= opts.max_iterations {
            return Ok(SolverResult { x, value: f, status: SolverStatus::MaxIterations, iterations: iter });
        }
        let mut d: Vec<f64> = hist.apply(&g, None).iter().map(|v| -v).collect();
        if !(dot(&d, &g) < 0.0) {
            hist.clear();
            d = g.iter().map(|v| -v).collect();
        }
        let initial = if hist.is_empty() { (1.0 / inf_norm(&g)).min(1.0) } else { 1.0 };
        let trial = match strong_wolfe(obj, &x, f, &g, &d, initial, opts) {
            Some(t) => t,
            None if !hist.is_empty() => {
                hist.clear();
                let sd: Vec<f64> = g.iter().map(|v| -v).collect();
                match strong_wolfe(obj, &x, f, &g, &sd, (1.0 / inf_norm(&g)).min(1.0), opts) {
                    Some(t) => t,
                    None => return Ok(SolverResult { x, value: f, status: SolverStatus::Stalled, iterations: iter }),
                }
            }
            None => return Ok(SolverResult { x, value: f, status: SolverStatus::Stalled, iterations: iter }),
        };
        iter += 1;
        let s: Vec<f64> = trial.x.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = trial.g.iter().zip(&g).map(|(a, b)| a - b).collect();
        hist.push(s, y);
        x = trial.x;
        f = trial.f;
        g = trial.g;
    }
}

/// Minimum-norm subgradient of `f + λ Σ_{mask} |xⱼ|`.
fn pseudo_gradient(x: &[f64], g: &[f64], l1: f64, mask: &[bool]) -> Vec<f64> {
    x.iter()
        .zip(g)
        .zip(mask)
        .map(|((&xj, &gj), &m)| {
            if !m {
                gj
            } else if xj > 0.0 {
                gj + l1
            } else if xj < 0.0 {
                gj - l1
            } else if gj + l1 < 0.0 {
                gj + l1
            } else if gj - l1 > 0.0 {
                gj - l1
            } else {
                0.0
            }
        })
        .collect()
}

fn l1_term(x: &[f64], l1: f64, mask: &[bool]) -> f64 {
    l1 * x.iter().zip(mask).filter(|(_, m)| **m).map(|(v, _)| v.abs()).sum::<f64>()
}

/// Minimizes `smooth(x) + l1_weight·Σ_{mask} |xⱼ|` by orthant-wise
/// quasi-Newton steps. Masked coordinates whose sign would change during a
/// step are set to exactly zero.
pub fn pss_minimize(
    smooth: &dyn Objective,
    l1_weight: f64,
    mask: &[bool],
    x0: &[f64],
    opts: &SolverOptions,
) -> Result<SolverResult> {
    check_start(smooth, x0, opts)?;
    if !(l1_weight >= 0.0 && l1_weight.is_finite()) {
        return Err(AolError::InvalidInput(format!("l1 weight must be >= 0, got {l1_weight}")));
    }
    if mask.len() != x0.len() {
        return Err(AolError::DimensionMismatch {
            expected: x0.len(),
            got: mask.len(),
        });
    }
    let mut x = x0.to_vec();
    let (fs0, mut g) = evaluate(smooth, &x, 0)?;
    let mut f = fs0 + l1_term(&x, l1_weight, mask);
    let mut hist = History::new(opts.memory);
    let mut iter = 0;
    let mut restarted = false;
    loop {
        let pg = pseudo_gradient(&x, &g, l1_weight, mask);
        if inf_norm(&pg) <= opts.threshold(&x) {
            return Ok(SolverResult { x, value: f, status: SolverStatus::Converged, iterations: iter });
        }
        if iter >= opts.max_iterations {
            return Ok(SolverResult { x, value: f, status: SolverStatus::MaxIterations, iterations: iter });
        }
        let mut d: Vec<f64> = hist.apply(&pg, None).iter().map(|v| -v).collect();
        for (dj, pj) in d.iter_mut().zip(&pg) {
            if *dj * -*pj <= 0.0 {
                *dj = 0.0;
            }
        }
        if !(dot(&d, &pg) < 0.0) {
            hist.clear();
            d = pg.iter().map(|v| -v).collect();
        }
        let orthant: Vec<f64> = x
            .iter()
            .zip(&pg)
            .map(|(&xj, &pj)| if xj != 0.0 { xj.signum() } else { -pj.signum() })
            .collect();
        let mut step = if hist.is_empty() { (1.0 / inf_norm(&pg)).min(1.0) } else { 1.0 };
        let mut accepted = None;
        for _ in 0..60 {
            let xt: Vec<f64> = (0..x.len())
                .map(|j| {
                    let v = x[j] + step * d[j];
                    if mask[j] && v * orthant[j] <= 0.0 {
                        0.0
                    } else {
                        v
                    }
                })
                .collect();
            let mut gt = vec![0.0; x.len()];
            let fst = smooth.eval(&xt, &mut gt);
            if fst.is_finite() && all_finite(&gt) {
                let ft = fst + l1_term(&xt, l1_weight, mask);
                let decrease: f64 = pg.iter().zip(xt.iter().zip(&x)).map(|(p, (a, b))| p * (a - b)).sum();
                if ft <= f + opts.c1 * decrease && ft <= f {
                    accepted = Some((xt, ft, gt));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((xt, ft, gt)) = accepted else {
            if !hist.is_empty() && !restarted {
                hist.clear();
                restarted = true;
                continue;
            }
            return Ok(SolverResult { x, value: f, status: SolverStatus::Stalled, iterations: iter });
        };
        restarted = false;
        iter += 1;
        let s: Vec<f64> = xt.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gt.iter().zip(&g).map(|(a, b)| a - b).collect();
        hist.push(s, y);
        x = xt;
        f = ft;
        g = gt;
    }
}

fn project(x: &mut [f64], lower: &[f64], upper: &[f64]) {
    for ((v, l), u) in x.iter_mut().zip(lower).zip(upper) {
        *v = v.clamp(*l, *u);
    }
}

fn projected_gradient_norm(x: &[f64], g: &[f64], lower: &[f64], upper: &[f64]) -> f64 {
    (0..x.len())
        .map(|j| ((x[j] - g[j]).clamp(lower[j], upper[j]) - x[j]).abs())
        .fold(0.0, f64::max)
}

/// Minimizes a smooth objective over the box `lower ≤ x ≤ upper` with
/// projected quasi-Newton steps on the free variables. Stops when
/// `‖P(x − ∇f) − x‖∞ ≤ tol·max(1, ‖x‖∞)`.
pub fn lbfgsb_minimize(
    obj: &dyn Objective,
    lower: &[f64],
    upper: &[f64],
    x0: &[f64],
    opts: &SolverOptions,
) -> Result<SolverResult> {
    check_start(obj, x0, opts)?;
    let n = x0.len();
    if lower.len() != n || upper.len() != n {
        return Err(AolError::DimensionMismatch {
            expected: n,
            got: lower.len().min(upper.len()),
        });
    }
    for j in 0..n {
        if lower[j].is_nan() || upper[j].is_nan() || lower[j] > upper[j] {
            return Err(AolError::InvalidInput(format!("empty box in coordinate {j}")));
        }
        if x0[j] < lower[j] || x0[j] > upper[j] {
            return Err(AolError::InvalidInput(format!(
                "starting point outside the box in coordinate {j}: {} not in [{}, {}]",
                x0[j], lower[j], upper[j]
            )));
        }
    }
    let mut x = x0.to_vec();
    let (mut f, mut g) = evaluate(obj, &x, 0)?;
    let mut hist = History::new(opts.memory);
    let mut iter = 0;
    let mut restarted = false;
    loop {
        if projected_gradient_norm(&x, &g, lower, upper) <= opts.threshold(&x) {
            return Ok(SolverResult { x, value: f, status: SolverStatus::Converged, iterations: iter });
        }
        if iter >= opts.max_iterations {
            return Ok(SolverResult { x, value: f, status: SolverStatus::MaxIterations, iterations: iter });
        }
        let eps = |j: usize| 1e-10 * (1.0 + x[j].abs());
        let free: Vec<bool> = (0..n)
            .map(|j| !((x[j] <= lower[j] + eps(j) && g[j] > 0.0) || (x[j] >= upper[j] - eps(j) && g[j] < 0.0)))
            .collect();
        let mut d: Vec<f64> = hist.apply(&g, Some(&free)).iter().map(|v| -v).collect();
        if !(dot(&d, &g) < 0.0) {
            hist.clear();
            d = (0..n).map(|j| if free[j] { -g[j] } else { 0.0 }).collect();
        }
        let mut step = if hist.is_empty() { (1.0 / inf_norm(&d)).min(1.0) } else { 1.0 };
        let mut accepted = None;
        for _ in 0..60 {
            let mut xt: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + step * b).collect();
            project(&mut xt, lower, upper);
            let mut gt = vec![0.0; n];
            let ft = obj.eval(&xt, &mut gt);
            if ft.is_finite() && all_finite(&gt) {
                let decrease: f64 = g.iter().zip(xt.iter().zip(&x)).map(|(p, (a, b))| p * (a - b)).sum();
                if ft <= f + opts.c1 * decrease && ft <= f {
                    accepted = Some((xt, ft, gt));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((xt, ft, gt)) = accepted else {
            if !hist.is_empty() && !restarted {
                hist.clear();
                restarted = true;
                continue;
            }
            return Ok(SolverResult { x, value: f, status: SolverStatus::Stalled, iterations: iter });
        };
        restarted = false;
        iter += 1;
        let s: Vec<f64> = xt.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gt.iter().zip(&g).map(|(a, b)| a - b).collect();
        hist.push(s, y);
        x = xt;
        f = ft;
        g = gt;
    }
}

/// Central-difference gradient, used to check analytic gradients.
pub fn numeric_gradient(obj: &dyn Objective, x: &[f64], h: f64) -> Vec<f64> {
    let mut scratch = vec![0.0; x.len()];
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|j| {
            let step = h * x[j].abs().max(1.0);
            xp[j] = x[j] + step;
            let fp = obj.eval(&xp, &mut scratch);
            xp[j] = x[j] - step;
            let fm = obj.eval(&xp, &mut scratch);
            xp[j] = x[j];
            (fp - fm) / (2.0 * step)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad1(c: f64) -> impl Objective {
        FnObjective::new(1, move |x: &[f64], g: &mut [f64]| {
            g[0] = 2.0 * (x[0] - c);
            (x[0] - c).powi(2)
        })
    }

    fn rosenbrock() -> impl Objective {
        FnObjective::new(2, |x: &[f64], g: &mut [f64]| {
            let (a, b) = (x[0], x[1]);
            g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
            g[1] = 200.0 * (b - a * a);
            (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
        })
    }

    #[test]
    fn lbfgs_examples() {
        let opts = SolverOptions::default();
        let r = lbfgs_minimize(&quad1(3.0), &[0.0], &opts).unwrap();
        assert_eq!(r.status, SolverStatus::Converged);
        assert!((r.x[0] - 3.0).abs() < 1e-6 && r.value < 1e-12);

        let q = FnObjective::new(2, |x: &[f64], g: &mut [f64]| {
            g[0] = x[0] - 1.0;
            g[1] = 10.0 * x[1] - 1.0;
            0.5 * (x[0] * x[0] + 10.0 * x[1] * x[1]) - x[0] - x[1]
        });
        let r = lbfgs_minimize(&q, &[0.0, 0.0], &opts).unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-6 && (r.x[1] - 0.1).abs() < 1e-6);

        let r = lbfgs_minimize(&rosenbrock(), &[-1.2, 1.0], &opts).unwrap();
        assert_eq!(r.status, SolverStatus::Converged);
        assert!((r.x[0] - 1.0).abs() < 1e-5 && (r.x[1] - 1.0).abs() < 1e-5, "{:?}", r);
    }

    #[test]
    fn lbfgs_reports_non_finite() {
        let bad = FnObjective::new(1, |_x: &[f64], g: &mut [f64]| {
            g[0] = f64::NAN;
            0.0
        });
        assert!(matches!(
            lbfgs_minimize(&bad, &[0.0], &SolverOptions::default()),
            Err(AolError::Solver { .. })
        ));
    }

    #[test]
    fn lbfgs_max_iterations() {
        let opts = SolverOptions {
            max_iterations: 2,
            ..SolverOptions::default()
        };
        let r = lbfgs_minimize(&rosenbrock(), &[-1.2, 1.0], &opts).unwrap();
        assert_eq!(r.status, SolverStatus::MaxIterations);
        assert_eq!(r.iterations, 2);
    }

    #[test]
    fn options_validation() {
        let bad = SolverOptions {
            memory: 0,
            ..SolverOptions::default()
        };
        assert!(lbfgs_minimize(&quad1(1.0), &[0.0], &bad).is_err());
        let bad = SolverOptions {
            gradient_tolerance: 0.0,
            ..SolverOptions::default()
        };
        assert!(bad.validate().is_err());
    }

    fn half_quad(b: Vec<f64>) -> impl Objective {
        FnObjective::new(b.len(), move |x: &[f64], g: &mut [f64]| {
            let mut f = 0.0;
            for j in 0..x.len() {
                g[j] = x[j] - b[j];
                f += 0.5 * (x[j] - b[j]).powi(2);
            }
            f
        })
    }

    #[test]
    fn pss_examples() {
        let opts = SolverOptions::default();
        let r = pss_minimize(&half_quad(vec![2.0]), 1.0, &[true], &[0.0], &opts).unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-8, "{r:?}");
        let r = pss_minimize(&half_quad(vec![0.5]), 1.0, &[true], &[0.0], &opts).unwrap();
        assert_eq!(r.x[0], 0.0);
        let r = pss_minimize(&half_quad(vec![0.5, 0.5]), 1.0, &[true, false], &[0.0, 0.0], &opts).unwrap();
        assert_eq!(r.x[0], 0.0);
        assert!((r.x[1] - 0.5).abs() < 1e-8);
        // crossing zero from the other side is projected to exactly zero
        let r = pss_minimize(&half_quad(vec![0.5]), 1.0, &[true], &[3.0], &opts).unwrap();
        assert_eq!(r.x[0], 0.0);
        let r = pss_minimize(&half_quad(vec![-4.0]), 1.0, &[true], &[3.0], &opts).unwrap();
        assert!((r.x[0] + 3.0).abs() < 1e-8);
    }

    #[test]
    fn lbfgsb_examples() {
        let opts = SolverOptions::default();
        let r = lbfgsb_minimize(&quad1(3.0), &[0.0], &[1.0], &[0.0], &opts).unwrap();
        assert_eq!(r.x[0], 1.0);
        assert_eq!(r.status, SolverStatus::Converged);
        let r = lbfgsb_minimize(&quad1(3.0), &[0.0], &[10.0], &[0.0], &opts).unwrap();
        assert!((r.x[0] - 3.0).abs() < 1e-6);
        let q = FnObjective::new(2, |x: &[f64], g: &mut [f64]| {
            g[0] = 2.0 * x[0];
            g[1] = 2.0 * x[1];
            x[0] * x[0] + x[1] * x[1]
        });
        let inf = f64::INFINITY;
        let r = lbfgsb_minimize(&q, &[1.0, -inf], &[inf, inf], &[2.0, 3.0], &opts).unwrap();
        assert_eq!(r.x[0], 1.0);
        assert!(r.x[1].abs() < 1e-6);
        assert!(lbfgsb_minimize(&quad1(3.0), &[0.0], &[1.0], &[2.0], &opts).is_err());
    }

    #[test]
    fn numeric_gradient_matches() {
        let r = rosenbrock();
        let x = [0.3, -0.7];
        let mut g = [0.0; 2];
        r.eval(&x, &mut g);
        let ng = numeric_gradient(&r, &x, 1e-6);
        for j in 0..2 {
            assert!((g[j] - ng[j]).abs() < 1e-5 * g[j].abs().max(1.0));
        }
    }
}
