//! Linear, Gaussian RBF and covariate-scaled RBF kernels.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AolError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelSpec {
    /// `xᵀz`
    Linear,
    /// `exp(−σ²‖x − z‖²)`
    Rbf { sigma: f64 },
    /// `exp(−Σⱼ ηⱼ(xⱼ − zⱼ)²)` with `η ≥ 0`
    ScaledRbf { eta: Vec<f64> },
}

impl KernelSpec {
    pub fn validate(&self, p: usize) -> Result<()> {
        match self {
            KernelSpec::Linear => Ok(()),
            KernelSpec::Rbf { sigma } if *sigma > 0.0 && sigma.is_finite() => Ok(()),
            KernelSpec::Rbf { sigma } => Err(AolError::InvalidInput(format!("sigma must be positive, got {sigma}"))),
            KernelSpec::ScaledRbf { eta } => {
                if eta.len() != p {
                    return Err(AolError::DimensionMismatch {
                        expected: p,
                        got: eta.len(),
                    });
                }
                if eta.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
                    return Err(AolError::InvalidInput("eta must be componentwise >= 0".into()));
                }
                Ok(())
            }
        }
    }
}

pub fn kernel_value(spec: &KernelSpec, x: &[f64], z: &[f64]) -> f64 {
    match spec {
        KernelSpec::Linear => x.iter().zip(z).map(|(a, b)| a * b).sum(),
        KernelSpec::Rbf { sigma } => {
            let d2: f64 = x.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum();
            (-sigma * sigma * d2).exp()
        }
        KernelSpec::ScaledRbf { eta } => {
            let s: f64 = eta
                .iter()
                .zip(x.iter().zip(z))
                .map(|(e, (a, b))| e * (a - b) * (a - b))
                .sum();
            (-s).exp()
        }
    }
}

/// `K[i, j] = k(xᵢ, zⱼ)` for the rows of `x` and `z`.
pub fn kernel_matrix(spec: &KernelSpec, x: &DMatrix<f64>, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.ncols() != z.ncols() {
        return Err(AolError::DimensionMismatch {
            expected: x.ncols(),
            got: z.ncols(),
        });
    }
    let xr = rows(x);
    let zr = rows(z);
    let symmetric = std::ptr::eq(x, z);
    let mut k = DMatrix::zeros(xr.len(), zr.len());
    for (i, xi) in xr.iter().enumerate() {
        for (j, zj) in zr.iter().enumerate() {
            if symmetric && j < i {
                k[(i, j)] = k[(j, i)];
            } else {
                k[(i, j)] = kernel_value(spec, xi, zj);
            }
        }
    }
    Ok(k)
}

pub(crate) fn rows(x: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..x.nrows()).map(|i| x.row(i).iter().copied().collect()).collect()
}

/// `∂K/∂ηⱼ = −(xⱼ − zⱼ)²·K` for each coordinate `j`, on the Gram matrix of `x`.
pub fn kernel_eta_gradient(eta: &[f64], x: &DMatrix<f64>) -> Result<Vec<DMatrix<f64>>> {
    let spec = KernelSpec::ScaledRbf { eta: eta.to_vec() };
    spec.validate(x.ncols())?;
    let k = kernel_matrix(&spec, x, x)?;
    let n = x.nrows();
    Ok((0..x.ncols())
        .map(|j| {
            DMatrix::from_fn(n, n, |a, b| {
                let d = x[(a, j)] - x[(b, j)];
                -d * d * k[(a, b)]
            })
        })
        .collect())
}

/// Pairs beyond which the median heuristic samples instead of enumerating.
const MAX_PAIRS: usize = 1_000_000;

/// `σ` with `1/σ²` equal to the median squared pairwise distance. All
/// distinct pairs are used when there are at most a million of them;
/// otherwise a million pairs are sampled with a generator seeded by `seed`.
pub fn median_heuristic(x: &DMatrix<f64>, seed: u64) -> Result<f64> {
    let n = x.nrows();
    if n < 2 {
        return Err(AolError::InvalidInput("median heuristic needs at least two points".into()));
    }
    let r = rows(x);
    let d2 = |a: usize, b: usize| -> f64 { r[a].iter().zip(&r[b]).map(|(u, v)| (u - v) * (u - v)).sum() };
    let total = n * (n - 1) / 2;
    let mut dists: Vec<f64> = if total <= MAX_PAIRS {
        let mut out = Vec::with_capacity(total);
        for a in 0..n {
            for b in a + 1..n {
                out.push(d2(a, b));
            }
        }
        out
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..MAX_PAIRS)
            .map(|_| {
                let a = rng.random_range(0..n);
                let mut b = rng.random_range(0..n - 1);
                if b >= a {
                    b += 1;
                }
                d2(a, b)
            })
            .collect()
    };
    dists.sort_by(f64::total_cmp);
    let m = dists.len();
    let median = if m % 2 == 1 {
        dists[m / 2]
    } else {
        0.5 * (dists[m / 2 - 1] + dists[m / 2])
    };
    if median <= 0.0 {
        return Err(AolError::InvalidInput(
            "median squared distance is zero (points are identical)".into(),
        ));
    }
    Ok(1.0 / median.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn values() {
        let rbf = KernelSpec::Rbf { sigma: 1.0 };
        assert_eq!(kernel_value(&rbf, &[0.3, 2.0], &[0.3, 2.0]), 1.0);
        assert!((kernel_value(&rbf, &[0.0, 0.0], &[1.0, 0.0]) - (-1f64).exp()).abs() < 1e-15);
        let flat = KernelSpec::ScaledRbf { eta: vec![0.0, 0.0] };
        assert_eq!(kernel_value(&flat, &[5.0, -3.0], &[-1.0, 8.0]), 1.0);
        assert_eq!(kernel_value(&KernelSpec::Linear, &[1.0, 2.0], &[3.0, -1.0]), 1.0);
    }

    #[test]
    fn matrices() {
        let e = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let k = kernel_matrix(&KernelSpec::Linear, &e, &e).unwrap();
        assert_eq!(k, DMatrix::identity(2, 2));

        let x = DMatrix::from_row_slice(3, 2, &[0.1, 0.2, -1.0, 0.5, 2.0, 2.0]);
        let k = kernel_matrix(&KernelSpec::Rbf { sigma: 0.7 }, &x, &x).unwrap();
        for i in 0..3 {
            assert_eq!(k[(i, i)], 1.0);
        }
        let scaled = KernelSpec::ScaledRbf { eta: vec![0.49, 0.49] };
        let ks = kernel_matrix(&scaled, &x, &x).unwrap();
        assert!((ks - k).abs().max() < 1e-15);

        let z = DMatrix::from_row_slice(1, 3, &[0.0, 0.0, 0.0]);
        assert!(kernel_matrix(&KernelSpec::Linear, &x, &z).is_err());
    }

    #[test]
    fn eta_gradient_examples() {
        let x = DMatrix::from_row_slice(2, 3, &[0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let grads = kernel_eta_gradient(&[0.0, 0.0, 0.0], &x).unwrap();
        assert_eq!(grads.len(), 3);
        assert_eq!(grads[0][(0, 1)], -1.0);
        assert_eq!(grads[1][(0, 1)], 0.0);
        assert_eq!(grads[2][(0, 1)], 0.0);
        for g in &grads {
            assert_eq!(g[(0, 0)], 0.0);
            assert_eq!(g[(1, 1)], 0.0);
        }
    }

    #[test]
    fn median_examples() {
        let two = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        assert!((median_heuristic(&two, 0).unwrap() - 1.0).abs() < 1e-15);
        let three = DMatrix::from_row_slice(3, 1, &[0.0, 1.0, 2.0]);
        assert!((median_heuristic(&three, 0).unwrap() - 1.0).abs() < 1e-15);
        let doubled = &three * 2.0;
        assert!((median_heuristic(&doubled, 0).unwrap() - 0.5).abs() < 1e-15);
        let same = DMatrix::from_row_slice(3, 1, &[4.0, 4.0, 4.0]);
        assert!(median_heuristic(&same, 0).is_err());
    }

    #[test]
    fn validation() {
        assert!(KernelSpec::Rbf { sigma: 0.0 }.validate(2).is_err());
        assert!(KernelSpec::ScaledRbf { eta: vec![1.0, -0.1] }.validate(2).is_err());
        assert!(KernelSpec::ScaledRbf { eta: vec![1.0] }.validate(2).is_err());
        assert!(KernelSpec::ScaledRbf { eta: vec![1.0, 0.0] }.validate(2).is_ok());
    }
}
