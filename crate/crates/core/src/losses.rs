//! Convex surrogate losses and their conditional φ-risk quantities.
//!
//! For weights `η₁, η₂ ≥ 0` the conditional risk is
//! `Q(α) = η₁φ(α) + η₂φ(−α)`, `H = min_α Q(α)`, and `ΔQ(0) = Q(0) − H`.
//! Every loss here has a closed-form minimizer; a bracketed golden-section
//! search is kept as a generic fallback.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurrogateLoss {
    Hinge,
    SquaredHinge,
    LeastSquares,
    HuberizedHinge,
    Logistic,
    Dwd,
    Exponential,
}

impl SurrogateLoss {
    pub const ALL: [SurrogateLoss; 7] = [
        SurrogateLoss::Hinge,
        SurrogateLoss::SquaredHinge,
        SurrogateLoss::LeastSquares,
        SurrogateLoss::HuberizedHinge,
        SurrogateLoss::Logistic,
        SurrogateLoss::Dwd,
        SurrogateLoss::Exponential,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SurrogateLoss::Hinge => "hinge",
            SurrogateLoss::SquaredHinge => "squared_hinge",
            SurrogateLoss::LeastSquares => "least_squares",
            SurrogateLoss::HuberizedHinge => "huberized_hinge",
            SurrogateLoss::Logistic => "logistic",
            SurrogateLoss::Dwd => "dwd",
            SurrogateLoss::Exponential => "exponential",
        }
    }

    pub fn from_name(name: &str) -> Option<SurrogateLoss> {
        Self::ALL.into_iter().find(|l| l.name() == name)
    }

    /// `φ(u)`. The exponential loss overflows to `+∞` below `u ≈ −709`.
    pub fn value(self, u: f64) -> f64 {
        match self {
            SurrogateLoss::Hinge => (1.0 - u).max(0.0),
            SurrogateLoss::SquaredHinge => {
                let m = (1.0 - u).max(0.0);
                m * m
            }
            SurrogateLoss::LeastSquares => (1.0 - u) * (1.0 - u),
            SurrogateLoss::HuberizedHinge => {
                if u >= 1.0 {
                    0.0
                } else if u >= -1.0 {
                    0.25 * (1.0 - u) * (1.0 - u)
                } else {
                    -u
                }
            }
            SurrogateLoss::Logistic => {
                // log(1 + e^{-u}) without overflow
                if u > 0.0 {
                    (-u).exp().ln_1p()
                } else {
                    -u + u.exp().ln_1p()
                }
            }
            SurrogateLoss::Dwd => {
                if u >= 1.0 {
                    1.0 / u
                } else {
                    2.0 - u
                }
            }
            SurrogateLoss::Exponential => (-u).exp(),
        }
    }

    /// `φ′(u)`, taking the right-hand derivative at kinks (hinge at `u = 1`).
    pub fn derivative(self, u: f64) -> f64 {
        match self {
            SurrogateLoss::Hinge => {
                if u >= 1.0 {
                    0.0
                } else {
                    -1.0
                }
            }
            SurrogateLoss::SquaredHinge => -2.0 * (1.0 - u).max(0.0),
            SurrogateLoss::LeastSquares => -2.0 * (1.0 - u),
            SurrogateLoss::HuberizedHinge => {
                if u >= 1.0 {
                    0.0
                } else if u >= -1.0 {
                    -0.5 * (1.0 - u)
                } else {
                    -1.0
                }
            }
            SurrogateLoss::Logistic => {
                if u > 0.0 {
                    let e = (-u).exp();
                    -e / (1.0 + e)
                } else {
                    -1.0 / (1.0 + u.exp())
                }
            }
            SurrogateLoss::Dwd => {
                if u >= 1.0 {
                    -1.0 / (u * u)
                } else {
                    -1.0
                }
            }
            SurrogateLoss::Exponential => -(-u).exp(),
        }
    }

    /// Whether `φ′(0)` exists and is negative, judged from second-order
    /// one-sided difference quotients at 0.
    pub fn fisher_consistent(self) -> bool {
        fisher_consistent_fn(|u| self.value(u))
    }
}

/// Fisher-consistency test for an arbitrary convex loss: left and right
/// derivatives at 0 must agree within `1e-8` and be negative.
pub fn fisher_consistent_fn<F: Fn(f64) -> f64>(phi: F) -> bool {
    let h = 1e-5;
    let f0 = phi(0.0);
    let right = (-3.0 * f0 + 4.0 * phi(h) - phi(2.0 * h)) / (2.0 * h);
    let left = (3.0 * f0 - 4.0 * phi(-h) + phi(-2.0 * h)) / (2.0 * h);
    (right - left).abs() <= 1e-8 && 0.5 * (right + left) < 0.0
}

/// The pair `(η₁, η₂)` of the generic conditional φ-risk.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionalRisk {
    eta1: f64,
    eta2: f64,
}

impl ConditionalRisk {
    pub fn new(eta1: f64, eta2: f64) -> Option<Self> {
        (eta1 >= 0.0 && eta2 >= 0.0 && eta1.is_finite() && eta2.is_finite())
            .then_some(Self { eta1, eta2 })
    }

    pub fn eta1(&self) -> f64 {
        self.eta1
    }

    pub fn eta2(&self) -> f64 {
        self.eta2
    }
}

/// `Q(α) = η₁φ(α) + η₂φ(−α)`.
pub fn conditional_risk(loss: SurrogateLoss, cr: ConditionalRisk, alpha: f64) -> f64 {
    let a = if cr.eta1 == 0.0 { 0.0 } else { cr.eta1 * loss.value(alpha) };
    let b = if cr.eta2 == 0.0 { 0.0 } else { cr.eta2 * loss.value(-alpha) };
    a + b
}

/// Location of the minimizer of `Q`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Minimizer {
    Finite(f64),
    /// The infimum is approached as `α → +∞` (`positive`) or `−∞`.
    Unbounded { positive: bool },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimalRisk {
    pub alpha: Minimizer,
    pub h: f64,
}

/// Closed-form minimizer and optimal conditional risk `H(η₁, η₂)`. When the
/// minimum is attained on an interval, a representative point is returned
/// (`±1` for the flat parts of hinge-type losses, `0` at a tie).
pub fn optimal_conditional_risk(loss: SurrogateLoss, cr: ConditionalRisk) -> OptimalRisk {
    let (e1, e2) = (cr.eta1, cr.eta2);
    let sum = e1 + e2;
    if sum == 0.0 {
        return OptimalRisk { alpha: Minimizer::Finite(0.0), h: 0.0 };
    }
    let finite = |alpha: f64, h: f64| OptimalRisk { alpha: Minimizer::Finite(alpha), h };
    let unbounded = |positive: bool| OptimalRisk {
        alpha: Minimizer::Unbounded { positive },
        h: 0.0,
    };
    match loss {
        SurrogateLoss::Hinge => {
            let alpha = if e1 > e2 {
                1.0
            } else if e1 < e2 {
                -1.0
            } else {
                0.0
            };
            finite(alpha, 2.0 * e1.min(e2))
        }
        SurrogateLoss::SquaredHinge | SurrogateLoss::LeastSquares => {
            finite((e1 - e2) / sum, 4.0 * e1 * e2 / sum)
        }
        SurrogateLoss::HuberizedHinge => finite((e1 - e2) / sum, e1 * e2 / sum),
        SurrogateLoss::Logistic => {
            if e1 == 0.0 || e2 == 0.0 {
                unbounded(e1 > 0.0)
            } else {
                let h = e1 * (e2 / e1).ln_1p() + e2 * (e1 / e2).ln_1p();
                finite((e1 / e2).ln(), h)
            }
        }
        SurrogateLoss::Dwd => {
            if e1 == 0.0 || e2 == 0.0 {
                unbounded(e1 > 0.0)
            } else if e1 > e2 {
                finite((e1 / e2).sqrt(), 2.0 * e2 + 2.0 * (e1 * e2).sqrt())
            } else if e2 > e1 {
                finite(-(e2 / e1).sqrt(), 2.0 * e1 + 2.0 * (e1 * e2).sqrt())
            } else {
                finite(0.0, 4.0 * e1)
            }
        }
        SurrogateLoss::Exponential => {
            if e1 == 0.0 || e2 == 0.0 {
                unbounded(e1 > 0.0)
            } else {
                finite(0.5 * (e1 / e2).ln(), 2.0 * (e1 * e2).sqrt())
            }
        }
    }
}

/// Golden-section minimization of `Q` over `[−50, 50]`, widening the bracket
/// while the minimum sits on its boundary (up to `|α| ≤ 1e6`).
pub fn numeric_conditional_minimum(loss: SurrogateLoss, cr: ConditionalRisk) -> (f64, f64) {
    let q = |a: f64| conditional_risk(loss, cr, a);
    let (mut lo, mut hi) = (-50.0, 50.0);
    loop {
        let (alpha, value) = golden_section(&q, lo, hi, 1e-10);
        let near_lo = alpha - lo < 1e-6 * (hi - lo);
        let near_hi = hi - alpha < 1e-6 * (hi - lo);
        if (!near_lo && !near_hi) || hi - lo >= 2e6 {
            return (alpha, value);
        }
        if near_lo {
            lo *= 4.0;
        }
        if near_hi {
            hi *= 4.0;
        }
    }
}

fn golden_section<F: Fn(f64) -> f64>(f: &F, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol * (1.0 + c.abs() + d.abs()) {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = f(d);
        }
    }
    // flat regions: report the best endpoint seen
    let candidates = [(a, f(a)), (b, f(b)), (c, fc), (d, fd)];
    candidates
        .into_iter()
        .min_by(|x, y| x.1.total_cmp(&y.1))
        .expect("non-empty")
}

/// Both sides of the loss-specific excess-risk inequality at `α = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
    /// The relation is an identity for this loss (hinge, squared hinge,
    /// least squares, huberized hinge) and it matched to `1e-9`.
    pub equality: Option<bool>,
}

/// `ΔQ(0) = Q(0) − H`.
pub fn excess_at_zero(loss: SurrogateLoss, cr: ConditionalRisk) -> f64 {
    conditional_risk(loss, cr, 0.0) - optimal_conditional_risk(loss, cr).h
}

/// Evaluates the inequality relating `|η₁ − η₂|` to `ΔQ(0)`:
///
/// | loss | relation |
/// |---|---|
/// | hinge, DWD | `|η₁−η₂| ≤ ΔQ(0)` (hinge: equality) |
/// | squared hinge, least squares | `(η₁−η₂)² = (η₁+η₂)ΔQ(0)` |
/// | huberized hinge | `(η₁−η₂)² = 4(η₁+η₂)ΔQ(0)` |
/// | logistic | `(η₁−η₂)² ≤ 8(η₁+η₂)ΔQ(0)` |
/// | exponential | `(η₁−η₂)² ≤ 2(η₁+η₂)ΔQ(0)` |
pub fn excess_bound_check(loss: SurrogateLoss, cr: ConditionalRisk) -> BoundCheck {
    let (e1, e2) = (cr.eta1, cr.eta2);
    let dq = excess_at_zero(loss, cr);
    let diff = e1 - e2;
    let sum = e1 + e2;
    let (lhs, rhs, is_identity) = match loss {
        SurrogateLoss::Hinge => (diff.abs(), dq, true),
        SurrogateLoss::Dwd => (diff.abs(), dq, false),
        SurrogateLoss::SquaredHinge | SurrogateLoss::LeastSquares => (diff * diff, sum * dq, true),
        SurrogateLoss::HuberizedHinge => (diff * diff, 4.0 * sum * dq, true),
        SurrogateLoss::Logistic => (diff * diff, 8.0 * sum * dq, false),
        SurrogateLoss::Exponential => (diff * diff, 2.0 * sum * dq, false),
    };
    let scale = 1.0f64.max(rhs.abs()).max(lhs.abs());
    let holds = lhs <= rhs + 1e-9 * scale;
    let equality = is_identity.then(|| (lhs - rhs).abs() <= 1e-9 * scale);
    BoundCheck { lhs, rhs, holds, equality }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cr(a: f64, b: f64) -> ConditionalRisk {
        ConditionalRisk::new(a, b).unwrap()
    }

    #[test]
    fn huberized_hinge_values_and_derivatives() {
        let l = SurrogateLoss::HuberizedHinge;
        assert_eq!(l.value(2.0), 0.0);
        assert_eq!(l.value(0.0), 0.25);
        assert_eq!(l.value(-3.0), 3.0);
        assert_eq!(l.derivative(0.0), -0.5);
        assert_eq!(l.derivative(1.0), 0.0);
        assert_eq!(SurrogateLoss::Exponential.derivative(0.0), -1.0);
    }

    #[test]
    fn kink_conventions() {
        assert_eq!(SurrogateLoss::Hinge.derivative(1.0), 0.0);
        assert_eq!(SurrogateLoss::Dwd.derivative(1.0), -1.0);
        assert_eq!(SurrogateLoss::Dwd.value(1.0), 1.0);
    }

    #[test]
    fn logistic_is_stable_at_extremes() {
        let l = SurrogateLoss::Logistic;
        assert!((l.value(800.0)).abs() < 1e-300);
        assert!((l.value(-800.0) - 800.0).abs() < 1e-9);
        assert!((l.derivative(-800.0) + 1.0).abs() < 1e-15);
        assert!((l.value(0.0) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn all_listed_losses_are_fisher_consistent() {
        for loss in SurrogateLoss::ALL {
            assert!(loss.fisher_consistent(), "{}", loss.name());
        }
    }

    #[test]
    fn fisher_test_rejects_bad_losses() {
        // kink at 0
        assert!(!fisher_consistent_fn(|u: f64| u.abs()));
        // increasing at 0
        assert!(!fisher_consistent_fn(|u: f64| (1.0 + u) * (1.0 + u)));
        // flat at 0
        assert!(!fisher_consistent_fn(|u: f64| u * u));
    }

    #[test]
    fn conditional_risk_examples() {
        assert_eq!(conditional_risk(SurrogateLoss::Hinge, cr(1.0, 0.0), 1.0), 0.0);
        for loss in SurrogateLoss::ALL {
            let q = conditional_risk(loss, cr(2.0, 1.0), 0.0);
            assert!((q - 3.0 * loss.value(0.0)).abs() < 1e-15);
        }
        assert_eq!(conditional_risk(SurrogateLoss::HuberizedHinge, cr(1.0, 1.0), 0.0), 0.5);
    }

    #[test]
    fn optimal_risk_examples() {
        let r = optimal_conditional_risk(SurrogateLoss::Hinge, cr(3.0, 1.0));
        assert_eq!(r.h, 2.0);
        let r = optimal_conditional_risk(SurrogateLoss::HuberizedHinge, cr(1.0, 3.0));
        assert_eq!(r.alpha, Minimizer::Finite(-0.5));
        assert!((r.h - 0.75).abs() < 1e-15);
        let r = optimal_conditional_risk(SurrogateLoss::Exponential, cr(4.0, 1.0));
        match r.alpha {
            Minimizer::Finite(a) => assert!((a - 0.5 * 4f64.ln()).abs() < 1e-15),
            other => panic!("{other:?}"),
        }
        assert!((r.h - 4.0).abs() < 1e-15);
    }

    #[test]
    fn unbounded_minimizers() {
        for loss in [SurrogateLoss::Logistic, SurrogateLoss::Dwd, SurrogateLoss::Exponential] {
            let r = optimal_conditional_risk(loss, cr(2.0, 0.0));
            assert_eq!(r.alpha, Minimizer::Unbounded { positive: true });
            assert_eq!(r.h, 0.0);
            let r = optimal_conditional_risk(loss, cr(0.0, 2.0));
            assert_eq!(r.alpha, Minimizer::Unbounded { positive: false });
        }
    }

    #[test]
    fn closed_forms_match_numeric_minimum() {
        let etas = [(3.0, 1.0), (1.0, 3.0), (2.5, 2.5), (0.3, 7.0), (5.0, 0.0), (0.0, 0.4)];
        for loss in SurrogateLoss::ALL {
            for &(a, b) in &etas {
                let c = cr(a, b);
                let opt = optimal_conditional_risk(loss, c);
                let closed = opt.h;
                let (_, numeric) = numeric_conditional_minimum(loss, c);
                // an infimum at infinity is only approached like 1/α on a finite range
                let tol = match opt.alpha {
                    Minimizer::Finite(_) => 1e-6,
                    Minimizer::Unbounded { .. } => 1e-5,
                };
                assert!(
                    numeric >= closed - 1e-12 && numeric - closed <= tol * (1.0 + closed),
                    "{} η=({a},{b}): closed {closed} numeric {numeric}",
                    loss.name()
                );
            }
        }
    }

    #[test]
    fn bound_examples() {
        let b = excess_bound_check(SurrogateLoss::Hinge, cr(3.0, 1.0));
        assert_eq!((b.lhs, b.rhs, b.holds, b.equality), (2.0, 2.0, true, Some(true)));
        let b = excess_bound_check(SurrogateLoss::HuberizedHinge, cr(2.0, 1.0));
        assert!((b.lhs - 1.0).abs() < 1e-12 && (b.rhs - 1.0).abs() < 1e-12);
        assert_eq!(b.equality, Some(true));
        let b = excess_bound_check(SurrogateLoss::Logistic, cr(0.0, 1.0));
        assert!(b.holds);
        assert_eq!(b.equality, None);
    }

    #[test]
    fn names_round_trip() {
        for loss in SurrogateLoss::ALL {
            assert_eq!(SurrogateLoss::from_name(loss.name()), Some(loss));
        }
        assert_eq!(SurrogateLoss::from_name("ramp"), None);
    }
}
