use aol_core::data::{oracle_contrast, oracle_mu, Arm, Scenario, TrialDataset};
use aol_core::evaluate::ipw_value;
use aol_core::kernels::{kernel_matrix, kernel_value, KernelSpec};
use aol_core::learner::{fit_kernel_with, fit_linear, FitConfig, KernelObjective, LinearObjective, Standardization};
use aol_core::losses::{conditional_risk, optimal_conditional_risk, ConditionalRisk, Minimizer, SurrogateLoss};
use aol_core::optimize::{lbfgs_minimize, FnObjective, Objective, SolverOptions};
use aol_core::residuals::{
    compute_residuals, fit_g, reflect, reflection_identity_check, regression_weight, GEstimator, GKind, GVariant,
};
use aol_core::learner::{decision_values, predict, DecisionRule};
use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngSeed};

fn config(cases: u32) -> Config {
    Config {
        cases,
        rng_seed: RngSeed::Fixed(20_240_601),
        failure_persistence: None,
        ..Config::default()
    }
}

fn loss_strategy() -> impl Strategy<Value = SurrogateLoss> {
    prop::sample::select(SurrogateLoss::ALL.to_vec())
}

fn arm(plus: bool) -> Arm {
    if plus {
        Arm::Plus
    } else {
        Arm::Minus
    }
}

/// A small trial with `n` rows, `p` covariates and propensities in (0.1, 0.9).
fn trial(n: usize, p: usize) -> impl Strategy<Value = TrialDataset> {
    (
        prop::collection::vec(-2.0..2.0f64, n * p),
        prop::collection::vec(any::<bool>(), n),
        prop::collection::vec(-5.0..5.0f64, n),
        prop::collection::vec(0.1..0.9f64, n),
    )
        .prop_map(move |(x, a, r, pi)| {
            let arms: Vec<Arm> = a.into_iter().map(arm).collect();
            TrialDataset::new(DMatrix::from_row_slice(n, p, &x), arms, r, pi).unwrap()
        })
}

/// Trial with both arms guaranteed present in generous numbers.
fn balanced_trial(n: usize, p: usize) -> impl Strategy<Value = TrialDataset> {
    (
        prop::collection::vec(-2.0..2.0f64, n * p),
        prop::collection::vec(-5.0..5.0f64, n),
        prop::collection::vec(0.1..0.9f64, n),
    )
        .prop_map(move |(x, r, pi)| {
            let arms: Vec<Arm> = (0..n).map(|i| arm(i % 2 == 0)).collect();
            TrialDataset::new(DMatrix::from_row_slice(n, p, &x), arms, r, pi).unwrap()
        })
}

fn problem_parts(n: usize, p: usize) -> impl Strategy<Value = (DMatrix<f64>, Vec<Arm>, Vec<f64>)> {
    (
        prop::collection::vec(-2.0..2.0f64, n * p),
        prop::collection::vec(any::<bool>(), n),
        prop::collection::vec(0.0..3.0f64, n),
    )
        .prop_map(move |(x, l, w)| (DMatrix::from_row_slice(n, p, &x), l.into_iter().map(arm).collect(), w))
}

fn flip(labels: &[Arm]) -> Vec<Arm> {
    labels.iter().map(|a| a.opposite()).collect()
}

fn value(obj: &dyn Objective, x: &[f64]) -> f64 {
    let mut g = vec![0.0; obj.dim()];
    obj.eval(x, &mut g)
}

proptest! {
    #![proptest_config(config(10_000))]

    #[test]
    fn losses_are_convex(loss in loss_strategy(), u in -20.0..20.0f64, v in -20.0..20.0f64, t in 0.0..1.0f64) {
        let mid = loss.value(t * u + (1.0 - t) * v);
        let chord = t * loss.value(u) + (1.0 - t) * loss.value(v);
        prop_assert!(mid <= chord + 1e-12 * chord.abs().max(1.0), "{loss:?} at {u}, {v}, {t}");
    }
}

proptest! {
    #![proptest_config(config(1_000))]

    #[test]
    fn loss_derivatives_match_central_differences(loss in loss_strategy(), u in -5.0..5.0f64) {
        prop_assume!((u - 1.0).abs() > 1e-3 && (u + 1.0).abs() > 1e-3);
        let h = 1e-6;
        let numeric = (loss.value(u + h) - loss.value(u - h)) / (2.0 * h);
        prop_assert!((loss.derivative(u) - numeric).abs() <= 1e-6 * numeric.abs().max(1.0),
            "{loss:?} at {u}: {} vs {numeric}", loss.derivative(u));
    }

    #[test]
    fn optimal_risk_is_a_lower_bound(
        loss in loss_strategy(),
        e1 in 0.0..10.0f64,
        e2 in 0.0..10.0f64,
        alphas in prop::collection::vec(-50.0..50.0f64, 1000),
    ) {
        let cr = ConditionalRisk::new(e1, e2).unwrap();
        let h = optimal_conditional_risk(loss, cr).h;
        for a in alphas {
            let q = conditional_risk(loss, cr, a);
            prop_assert!(q - h >= -1e-9 * q.abs().max(1.0), "{loss:?} ({e1}, {e2}) at {a}: Q {q} < H {h}");
        }
    }

    #[test]
    fn finite_minimizers_follow_the_larger_eta(loss in loss_strategy(), e1 in 0.0..10.0f64, e2 in 0.0..10.0f64) {
        prop_assume!((e1 - e2).abs() > 1e-9);
        let cr = ConditionalRisk::new(e1, e2).unwrap();
        if let Minimizer::Finite(a) = optimal_conditional_risk(loss, cr).alpha {
            prop_assert_eq!(a.signum(), (e1 - e2).signum(), "{:?} ({}, {}) -> {}", loss, e1, e2, a);
        }
    }

    #[test]
    fn oracle_contrast_is_the_arm_difference(s in 1u8..=4, x in prop::collection::vec(-1.0..1.0f64, 5)) {
        let scenario = Scenario::from_id(s).unwrap();
        prop_assert_eq!(
            oracle_contrast(scenario, &x),
            oracle_mu(scenario, &x, Arm::Plus) - oracle_mu(scenario, &x, Arm::Minus)
        );
    }

    #[test]
    fn reflection_identity(
        data in (1usize..60).prop_flat_map(|n| trial(n, 2)),
        seed_r in prop::collection::vec(-5.0..5.0f64, 60),
        zeros in prop::collection::vec(any::<bool>(), 60),
        regime in prop::collection::vec(any::<bool>(), 60),
    ) {
        let n = data.n();
        let residuals: Vec<f64> = (0..n).map(|i| if zeros[i] && i % 5 == 0 { 0.0 } else { seed_r[i] }).collect();
        let regime: Vec<Arm> = regime[..n].iter().map(|&b| arm(b)).collect();
        let check = reflection_identity_check(&data, &residuals, &regime).unwrap();
        let scale = residuals.iter().zip(data.propensities()).map(|(r, p)| r.abs() / p).sum::<f64>() / n as f64;
        prop_assert!(check.gap <= 1e-12 * scale.max(check.lhs.abs()).max(f64::MIN_POSITIVE), "{check:?}");
    }
}

fn variants() -> impl Strategy<Value = GKind> {
    prop::sample::select(vec![GKind::Tilde, GKind::G1, GKind::G2])
}

proptest! {
    #![proptest_config(config(200))]

    #[test]
    fn pooled_residuals_are_orthogonal(data in balanced_trial(40, 3), kind in variants()) {
        let variant = GVariant { kind, estimator: GEstimator::PooledWeighted };
        let r = compute_residuals(&data, &fit_g(&data, variant).unwrap());
        let w: Vec<f64> = data.propensities().iter().map(|&pi| regression_weight(kind, pi)).collect();
        let scale: f64 = (0..data.n()).map(|i| (w[i] * data.outcomes()[i]).abs()).sum::<f64>().max(1.0);
        let s0: f64 = (0..data.n()).map(|i| w[i] * r[i]).sum();
        prop_assert!(s0.abs() <= 1e-8 * scale, "intercept equation {s0}");
        for j in 0..data.p() {
            let sj: f64 = (0..data.n()).map(|i| w[i] * r[i] * data.covariates()[(i, j)]).sum();
            prop_assert!(sj.abs() <= 1e-8 * scale * 2.0, "column {j}: {sj}");
        }
    }

    #[test]
    fn outcome_shift_leaves_the_problem_unchanged(
        data in balanced_trial(40, 3),
        kind in variants(),
        armwise in any::<bool>(),
        c in -50.0..50.0f64,
    ) {
        let estimator = if armwise { GEstimator::ArmwisePlugin } else { GEstimator::PooledWeighted };
        let variant = GVariant { kind, estimator };
        let base = reflect(&data, &compute_residuals(&data, &fit_g(&data, variant).unwrap())).unwrap();
        let shifted_data = data.with_outcomes(data.outcomes().iter().map(|r| r + c).collect()).unwrap();
        let shifted = reflect(&shifted_data, &compute_residuals(&shifted_data, &fit_g(&shifted_data, variant).unwrap())).unwrap();
        for i in 0..data.n() {
            let (w0, w1) = (base.weights()[i], shifted.weights()[i]);
            prop_assert!((w0 - w1).abs() <= 1e-10 * (1.0 + c.abs()), "weight {i}: {w0} vs {w1}");
            if w0 > 1e-8 {
                prop_assert_eq!(base.labels()[i], shifted.labels()[i]);
            }
        }
    }

    #[test]
    fn outcome_scaling_and_negation(data in balanced_trial(30, 2), kappa in 0.1..10.0f64) {
        let variant = GVariant::default();
        let prob = |d: &TrialDataset| reflect(d, &compute_residuals(d, &fit_g(d, variant).unwrap())).unwrap();
        let base = prob(&data);
        let scaled = prob(&data.with_outcomes(data.outcomes().iter().map(|r| kappa * r).collect()).unwrap());
        let negated = prob(&data.with_outcomes(data.outcomes().iter().map(|r| -r).collect()).unwrap());
        for i in 0..data.n() {
            let w = base.weights()[i];
            prop_assert!((scaled.weights()[i] - kappa * w).abs() <= 1e-9 * (1.0 + kappa * w));
            prop_assert!((negated.weights()[i] - w).abs() <= 1e-9 * (1.0 + w));
            if w > 1e-8 {
                prop_assert_eq!(scaled.labels()[i], base.labels()[i]);
                prop_assert_eq!(negated.labels()[i], base.labels()[i].opposite());
            }
        }
    }

    #[test]
    fn gram_matrices_are_psd_and_symmetric(
        n in 2usize..50,
        xs in prop::collection::vec(-3.0..3.0f64, 50 * 3),
        sigma in 0.05..5.0f64,
        eta in prop::collection::vec(0.0..4.0f64, 3),
    ) {
        let x = DMatrix::from_row_slice(n, 3, &xs[..n * 3]);
        for spec in [KernelSpec::Rbf { sigma }, KernelSpec::ScaledRbf { eta: eta.clone() }, KernelSpec::Linear] {
            let k = kernel_matrix(&spec, &x, &x).unwrap();
            for a in 0..n {
                for b in 0..n {
                    prop_assert_eq!(k[(a, b)], k[(b, a)]);
                }
                let (ra, rb): (Vec<f64>, Vec<f64>) = (x.row(a).iter().copied().collect(), x.row((a + 1) % n).iter().copied().collect());
                prop_assert_eq!(kernel_value(&spec, &ra, &rb), kernel_value(&spec, &rb, &ra));
            }
            let min = SymmetricEigen::new(k).eigenvalues.min();
            prop_assert!(min >= -1e-8 * n as f64, "{spec:?}: {min}");
        }
    }

    #[test]
    fn scaled_kernel_shrinks_monotonically(
        xs in prop::collection::vec(-2.0..2.0f64, 8 * 3),
        eta in prop::collection::vec(0.0..3.0f64, 3),
        j in 0usize..3,
        bump in 0.0..2.0f64,
    ) {
        let x = DMatrix::from_row_slice(8, 3, &xs);
        let mut larger = eta.clone();
        larger[j] += bump;
        let k0 = kernel_matrix(&KernelSpec::ScaledRbf { eta }, &x, &x).unwrap();
        let k1 = kernel_matrix(&KernelSpec::ScaledRbf { eta: larger }, &x, &x).unwrap();
        for a in 0..8 {
            for b in 0..8 {
                if a != b {
                    prop_assert!(k1[(a, b)] <= k0[(a, b)]);
                }
            }
        }
    }

    #[test]
    fn solver_descends_and_is_deterministic(
        (x, labels, weights) in problem_parts(30, 3),
        loss in prop::sample::select(vec![SurrogateLoss::HuberizedHinge, SurrogateLoss::Logistic, SurrogateLoss::LeastSquares, SurrogateLoss::Exponential]),
        lambda in 0.001..1.0f64,
        x0 in prop::collection::vec(-2.0..2.0f64, 4),
    ) {
        let obj = LinearObjective::new(x, &labels, &weights, loss, lambda).unwrap();
        let opts = SolverOptions::default();
        let a = lbfgs_minimize(&obj, &x0, &opts).unwrap();
        let b = lbfgs_minimize(&obj, &x0, &opts).unwrap();
        prop_assert!(a.value <= value(&obj, &x0));
        prop_assert_eq!(a, b);
    }

    #[test]
    fn objectives_are_convex(
        (x, labels, weights) in problem_parts(20, 2),
        loss in loss_strategy(),
        lambda in 0.0..1.0f64,
        t1 in prop::collection::vec(-2.0..2.0f64, 21),
        t2 in prop::collection::vec(-2.0..2.0f64, 21),
        t in 0.0..1.0f64,
    ) {
        let gram = kernel_matrix(&KernelSpec::Rbf { sigma: 0.7 }, &x, &x).unwrap();
        let lin = LinearObjective::new(x, &labels, &weights, loss, lambda).unwrap();
        let ker = KernelObjective::new(gram, &labels, &weights, loss, lambda).unwrap();
        for (obj, a, b) in [(&lin as &dyn Objective, &t1[..3], &t2[..3]), (&ker as &dyn Objective, &t1[..], &t2[..])] {
            let mid: Vec<f64> = a.iter().zip(b).map(|(u, v)| t * u + (1.0 - t) * v).collect();
            let (fa, fb, fm) = (value(obj, a), value(obj, b), value(obj, &mid));
            let chord = t * fa + (1.0 - t) * fb;
            prop_assert!(fm <= chord + 1e-10 * chord.abs().max(1.0), "{fm} > {chord}");
        }
    }

    #[test]
    fn label_flip_negates_parameters(
        (x, labels, weights) in problem_parts(20, 2),
        loss in loss_strategy(),
        lambda in 0.0..1.0f64,
        theta in prop::collection::vec(-2.0..2.0f64, 21),
    ) {
        let flipped = flip(&labels);
        let neg: Vec<f64> = theta.iter().map(|v| -v).collect();
        let gram = kernel_matrix(&KernelSpec::Rbf { sigma: 0.7 }, &x, &x).unwrap();
        let lin = LinearObjective::new(x.clone(), &labels, &weights, loss, lambda).unwrap();
        let lin_f = LinearObjective::new(x, &flipped, &weights, loss, lambda).unwrap();
        prop_assert_eq!(value(&lin_f, &theta[..3]), value(&lin, &neg[..3]));
        let ker = KernelObjective::new(gram.clone(), &labels, &weights, loss, lambda).unwrap();
        let ker_f = KernelObjective::new(gram, &flipped, &weights, loss, lambda).unwrap();
        prop_assert_eq!(value(&ker_f, &theta), value(&ker, &neg));
    }

    #[test]
    fn weight_and_penalty_co_scaling(
        (x, labels, weights) in problem_parts(20, 2),
        loss in loss_strategy(),
        lambda in 0.0..1.0f64,
        theta in prop::collection::vec(-2.0..2.0f64, 3),
        k in -4i32..=4,
    ) {
        // powers of two keep every product exact
        let kappa = 2f64.powi(k);
        let scaled: Vec<f64> = weights.iter().map(|w| kappa * w).collect();
        let base = LinearObjective::new(x.clone(), &labels, &weights, loss, lambda).unwrap();
        let co = LinearObjective::new(x, &labels, &scaled, loss, kappa * lambda).unwrap();
        prop_assert_eq!(value(&co, &theta), kappa * value(&base, &theta));
    }

    #[test]
    fn ipw_of_received_treatment_is_the_weighted_mean(data in (1usize..80).prop_flat_map(|n| trial(n, 1)), pi in prop::sample::select(vec![0.5, 0.25, 0.125])) {
        let recs = data.treatments().to_vec();
        let v = ipw_value(&data, &recs, true).unwrap();
        let num: f64 = data.outcomes().iter().zip(data.propensities()).map(|(r, p)| r / p).sum();
        let den: f64 = data.propensities().iter().map(|p| 1.0 / p).sum();
        prop_assert!((v.value - num / den).abs() <= 1e-12 * (num / den).abs().max(1.0));
        prop_assert_eq!(v.n_matched, data.n());

        let constant = data.with_propensities(vec![pi; data.n()]).unwrap();
        let mean = data.outcomes().iter().sum::<f64>() / data.n() as f64;
        let c = ipw_value(&constant, &recs, true).unwrap().value;
        prop_assert!((c - mean).abs() <= 1e-12 * mean.abs().max(1.0), "{c} vs {mean}");
    }
}

proptest! {
    #![proptest_config(config(40))]

    #[test]
    fn fitted_objective_beats_random_probes(
        (x, labels, weights) in problem_parts(40, 3),
        lambda in 0.01..1.0f64,
        probes in prop::collection::vec(prop::collection::vec(-3.0..3.0f64, 4), 50),
    ) {
        let cfg = FitConfig { lambda, ..FitConfig::default() };
        let problem = aol_core::residuals::WeightedClassificationProblem::new(x.clone(), labels.clone(), weights.clone()).unwrap();
        let out = fit_linear(&problem, &cfg).unwrap();
        let std = Standardization::fit(&x);
        let obj = LinearObjective::new(std.apply(&x), &labels, &weights, cfg.loss, lambda).unwrap();
        for probe in probes {
            prop_assert!(out.objective <= value(&obj, &probe) + 1e-12);
        }
    }

    #[test]
    fn linear_aol_matches_a_dense_grid(
        (xs, labels, weights) in problem_parts(20, 1),
        lambda in 0.01..1.0f64,
    ) {
        // one covariate plus intercept: two parameters
        let problem = aol_core::residuals::WeightedClassificationProblem::new(xs.clone(), labels.clone(), weights.clone()).unwrap();
        let cfg = FitConfig { lambda, ..FitConfig::default() };
        let out = fit_linear(&problem, &cfg).unwrap();
        let std = Standardization::fit(&xs);
        let obj = LinearObjective::new(std.apply(&xs), &labels, &weights, cfg.loss, lambda).unwrap();
        let mut best = f64::INFINITY;
        for i in 0..400 {
            for j in 0..400 {
                let w = -5.0 + 10.0 * i as f64 / 399.0;
                let b = -5.0 + 10.0 * j as f64 / 399.0;
                best = best.min(value(&obj, &[w, b]));
            }
        }
        prop_assert!(out.objective <= best + 1e-4, "{} > {best}", out.objective);
    }

    #[test]
    fn predictions_follow_decision_values(
        (x, labels, weights) in problem_parts(30, 2),
        probes in prop::collection::vec(-3.0..3.0f64, 2 * 1000),
    ) {
        let problem = aol_core::residuals::WeightedClassificationProblem::new(x, labels, weights).unwrap();
        let cfg = FitConfig::default();
        let probes = DMatrix::from_row_slice(1000, 2, &probes);
        let rules: Vec<DecisionRule> = vec![
            fit_linear(&problem, &cfg).unwrap().rule,
            fit_kernel_with(&problem, &KernelSpec::Rbf { sigma: 1.0 }, &cfg).unwrap().rule,
        ];
        for rule in rules {
            let f = decision_values(&rule, &probes).unwrap();
            let d = predict(&rule, &probes).unwrap();
            for (fi, di) in f.iter().zip(d) {
                prop_assert_eq!(di, if *fi > 0.0 { Arm::Plus } else { Arm::Minus });
            }
        }
    }
}

#[test]
fn quadratic_descent_from_any_start() {
    let obj = FnObjective::new(2, |x: &[f64], g: &mut [f64]| {
        g[0] = 2.0 * (x[0] - 1.0) + x[1];
        g[1] = 4.0 * x[1] + x[0];
        (x[0] - 1.0).powi(2) + x[0] * x[1] + 2.0 * x[1] * x[1]
    });
    for start in [[10.0, -10.0], [0.0, 0.0], [-3.0, 7.0]] {
        let res = lbfgs_minimize(&obj, &start, &SolverOptions::default()).unwrap();
        assert!(res.value <= obj.value(&start));
        // stationary point of the quadratic: x = (8/7, -2/7)
        assert!((res.x[0] - 8.0 / 7.0).abs() < 1e-5 && (res.x[1] + 2.0 / 7.0).abs() < 1e-5, "{:?}", res.x);
    }
}
