//! Trial datasets, CSV ingestion, and seeded simulation scenarios.
//!
//! Simulated data follow a fixed draw order per subject so that a
//! `(ScenarioSpec, seed)` pair always produces the same bytes: first the `p`
//! covariates `Uniform(-1, 1)` in column order, then one `Uniform[0, 1)` draw
//! deciding the arm, then one standard-normal draw for the outcome noise.
//! The generator is ChaCha8 seeded through `seed_from_u64`.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{AolError, Result};

/// One of the two treatment arms, encoded as `+1` / `-1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "i8", try_from = "i8")]
pub enum Arm {
    Plus,
    Minus,
}

impl Arm {
    pub fn sign(self) -> f64 {
        match self {
            Arm::Plus => 1.0,
            Arm::Minus => -1.0,
        }
    }

    pub fn opposite(self) -> Arm {
        match self {
            Arm::Plus => Arm::Minus,
            Arm::Minus => Arm::Plus,
        }
    }

    /// `+1` for strictly positive values, `-1` otherwise.
    pub fn from_decision(value: f64) -> Arm {
        if value > 0.0 {
            Arm::Plus
        } else {
            Arm::Minus
        }
    }
}

impl From<Arm> for i8 {
    fn from(arm: Arm) -> i8 {
        match arm {
            Arm::Plus => 1,
            Arm::Minus => -1,
        }
    }
}

impl TryFrom<i8> for Arm {
    type Error = String;

    fn try_from(value: i8) -> std::result::Result<Self, Self::Error> {
        match value {
            1 => Ok(Arm::Plus),
            -1 => Ok(Arm::Minus),
            other => Err(format!("treatment must be +1 or -1, got {other}")),
        }
    }
}

/// Covariates, received arms, outcomes and the propensity `π(aᵢ, xᵢ)` of the
/// arm each subject actually received.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialDataset {
    covariates: DMatrix<f64>,
    treatments: Vec<Arm>,
    outcomes: Vec<f64>,
    propensities: Vec<f64>,
}

impl TrialDataset {
    pub fn new(
        covariates: DMatrix<f64>,
        treatments: Vec<Arm>,
        outcomes: Vec<f64>,
        propensities: Vec<f64>,
    ) -> Result<Self> {
        let n = covariates.nrows();
        if n == 0 || covariates.ncols() == 0 {
            return Err(AolError::InvalidInput(
                "dataset needs at least one subject and one covariate".into(),
            ));
        }
        if treatments.len() != n || outcomes.len() != n || propensities.len() != n {
            return Err(AolError::InvalidInput(format!(
                "length mismatch: {n} covariate rows, {} treatments, {} outcomes, {} propensities",
                treatments.len(),
                outcomes.len(),
                propensities.len()
            )));
        }
        for i in 0..n {
            if covariates.row(i).iter().any(|v| !v.is_finite()) || !outcomes[i].is_finite() {
                return Err(AolError::Row {
                    row: i + 1,
                    message: "non-finite value".into(),
                });
            }
            let pi = propensities[i];
            if !(pi > 0.0 && pi < 1.0) {
                return Err(AolError::Row {
                    row: i + 1,
                    message: format!("propensity {pi} outside (0, 1)"),
                });
            }
        }
        Ok(Self {
            covariates,
            treatments,
            outcomes,
            propensities,
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

    pub fn treatments(&self) -> &[Arm] {
        &self.treatments
    }

    pub fn outcomes(&self) -> &[f64] {
        &self.outcomes
    }

    pub fn propensities(&self) -> &[f64] {
        &self.propensities
    }

    /// `π(+1, xᵢ)`, recovered from the received-arm propensity.
    pub fn propensity_plus(&self, i: usize) -> f64 {
        match self.treatments[i] {
            Arm::Plus => self.propensities[i],
            Arm::Minus => 1.0 - self.propensities[i],
        }
    }

    pub fn covariate_row(&self, i: usize) -> Vec<f64> {
        self.covariates.row(i).iter().copied().collect()
    }

    pub fn count_arm(&self, arm: Arm) -> usize {
        self.treatments.iter().filter(|&&a| a == arm).count()
    }

    /// Rows selected by `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> TrialDataset {
        let covariates = self.covariates.select_rows(indices);
        TrialDataset {
            covariates,
            treatments: indices.iter().map(|&i| self.treatments[i]).collect(),
            outcomes: indices.iter().map(|&i| self.outcomes[i]).collect(),
            propensities: indices.iter().map(|&i| self.propensities[i]).collect(),
        }
    }

    pub fn with_outcomes(&self, outcomes: Vec<f64>) -> Result<TrialDataset> {
        TrialDataset::new(
            self.covariates.clone(),
            self.treatments.clone(),
            outcomes,
            self.propensities.clone(),
        )
    }

    pub fn with_propensities(&self, propensities: Vec<f64>) -> Result<TrialDataset> {
        TrialDataset::new(
            self.covariates.clone(),
            self.treatments.clone(),
            self.outcomes.clone(),
            propensities,
        )
    }

    /// Writes the `x1..xp,a,r,pi` CSV layout with 17 significant digits.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = (1..=self.p()).map(|j| format!("x{j}")).collect();
        header.extend(["a", "r", "pi"].map(String::from));
        out.write_record(&header)?;
        for i in 0..self.n() {
            let mut record: Vec<String> = self.covariates.row(i).iter().map(|&v| fmt_machine(v)).collect();
            record.push(i8::from(self.treatments[i]).to_string());
            record.push(fmt_machine(self.outcomes[i]));
            record.push(fmt_machine(self.propensities[i]));
            out.write_record(&record)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// 17 significant digits in scientific notation.
pub fn fmt_machine(value: f64) -> String {
    format!("{value:.16e}")
}

/// Reads a dataset from a file; see [`read_dataset`].
pub fn load_dataset(path: &Path, default_propensity: Option<f64>) -> Result<TrialDataset> {
    let file = std::fs::File::open(path)?;
    read_dataset(file, default_propensity)
}

/// Parses the `x1,...,xp,a,r[,pi]` CSV layout. Lines starting with `#` are
/// skipped. When the `pi` column is absent, arm `+1` rows receive
/// `default_propensity` and arm `-1` rows its complement; with no default the
/// missing column is an error.
pub fn read_dataset<R: Read>(reader: R, default_propensity: Option<f64>) -> Result<TrialDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let column = |name: &str| headers.iter().position(|h| h == name);

    let mut x_columns = Vec::new();
    while let Some(idx) = column(&format!("x{}", x_columns.len() + 1)) {
        x_columns.push(idx);
    }
    if x_columns.is_empty() {
        return Err(AolError::MissingColumn("x1".into()));
    }
    let a_col = column("a").ok_or_else(|| AolError::MissingColumn("a".into()))?;
    let r_col = column("r").ok_or_else(|| AolError::MissingColumn("r".into()))?;
    let pi_col = column("pi");
    if pi_col.is_none() {
        match default_propensity {
            None => return Err(AolError::MissingColumn("pi".into())),
            Some(p) if !(p > 0.0 && p < 1.0) => {
                return Err(AolError::InvalidInput(format!(
                    "default propensity {p} outside (0, 1)"
                )))
            }
            Some(_) => {}
        }
    }

    let p = x_columns.len();
    let mut values = Vec::new();
    let mut treatments = Vec::new();
    let mut outcomes = Vec::new();
    let mut propensities = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let row = record.position().map_or(0, |pos| pos.line() as usize);
        let field = |idx: usize, name: &str| -> Result<f64> {
            let raw = record.get(idx).ok_or_else(|| AolError::Row {
                row,
                message: format!("missing field `{name}`"),
            })?;
            raw.parse::<f64>().map_err(|_| AolError::Row {
                row,
                message: format!("cannot parse `{raw}` in column `{name}`"),
            })
        };
        for (j, &idx) in x_columns.iter().enumerate() {
            let v = field(idx, &format!("x{}", j + 1))?;
            if !v.is_finite() {
                return Err(AolError::Row {
                    row,
                    message: format!("non-finite covariate x{}", j + 1),
                });
            }
            values.push(v);
        }
        let a = field(a_col, "a")?;
        let arm = if a == 1.0 {
            Arm::Plus
        } else if a == -1.0 {
            Arm::Minus
        } else {
            return Err(AolError::Row {
                row,
                message: format!("treatment must be +1 or -1, got {a}"),
            });
        };
        let r = field(r_col, "r")?;
        if !r.is_finite() {
            return Err(AolError::Row {
                row,
                message: "non-finite outcome".into(),
            });
        }
        let pi = match pi_col {
            Some(idx) => field(idx, "pi")?,
            None => {
                let base = default_propensity.unwrap_or(0.5);
                match arm {
                    Arm::Plus => base,
                    Arm::Minus => 1.0 - base,
                }
            }
        };
        if !(pi > 0.0 && pi < 1.0) {
            return Err(AolError::Row {
                row,
                message: format!("propensity {pi} outside (0, 1)"),
            });
        }
        treatments.push(arm);
        outcomes.push(r);
        propensities.push(pi);
    }
    let n = treatments.len();
    if n == 0 {
        return Err(AolError::InvalidInput("no data rows".into()));
    }
    let covariates = DMatrix::from_row_slice(n, p, &values);
    TrialDataset::new(covariates, treatments, outcomes, propensities)
}

/// Reads only the `x1..xp` columns of a CSV file; other columns are ignored.
pub fn load_covariates(path: &Path) -> Result<DMatrix<f64>> {
    read_covariates(std::fs::File::open(path)?)
}

pub fn read_covariates<R: Read>(reader: R) -> Result<DMatrix<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut x_columns = Vec::new();
    while let Some(idx) = headers.iter().position(|h| h == format!("x{}", x_columns.len() + 1)) {
        x_columns.push(idx);
    }
    if x_columns.is_empty() {
        return Err(AolError::MissingColumn("x1".into()));
    }
    let mut values = Vec::new();
    let mut n = 0;
    for record in rdr.records() {
        let record = record?;
        let row = record.position().map_or(0, |pos| pos.line() as usize);
        for (j, &idx) in x_columns.iter().enumerate() {
            let raw = record.get(idx).unwrap_or("");
            let v: f64 = raw.parse().map_err(|_| AolError::Row {
                row,
                message: format!("cannot parse `{raw}` in column `x{}`", j + 1),
            })?;
            if !v.is_finite() {
                return Err(AolError::Row {
                    row,
                    message: format!("non-finite covariate x{}", j + 1),
                });
            }
            values.push(v);
        }
        n += 1;
    }
    Ok(DMatrix::from_row_slice(n, x_columns.len(), &values))
}

/// The four simulation designs. Scenarios 2 and 4 exponentiate the means of
/// scenarios 1 and 3.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scenario {
    One,
    Two,
    Three,
    Four,
}

impl Scenario {
    pub fn from_id(id: u8) -> Result<Scenario> {
        match id {
            1 => Ok(Scenario::One),
            2 => Ok(Scenario::Two),
            3 => Ok(Scenario::Three),
            4 => Ok(Scenario::Four),
            other => Err(AolError::InvalidInput(format!(
                "scenario must be 1, 2, 3 or 4, got {other}"
            ))),
        }
    }

    pub fn id(self) -> u8 {
        match self {
            Scenario::One => 1,
            Scenario::Two => 2,
            Scenario::Three => 3,
            Scenario::Four => 4,
        }
    }
}

/// How treatments are assigned in a simulated trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Assignment {
    /// `π(+1, x)` is the constant allocation probability.
    Randomized(f64),
    /// `π(+1, x) = logistic(intercept + slopesᵀx)`; slopes may be shorter than
    /// `p`, missing entries are zero.
    Logistic { intercept: f64, slopes: Vec<f64> },
}

impl Assignment {
    pub fn propensity_plus(&self, x: &[f64]) -> f64 {
        match self {
            Assignment::Randomized(pi) => *pi,
            Assignment::Logistic { intercept, slopes } => {
                let eta = intercept + slopes.iter().zip(x).map(|(b, v)| b * v).sum::<f64>();
                1.0 / (1.0 + (-eta).exp())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub scenario: Scenario,
    pub p: usize,
    pub assignment: Assignment,
    pub n: usize,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn randomized(scenario: Scenario, p: usize, allocation: f64, n: usize, seed: u64) -> Self {
        Self {
            scenario,
            p,
            assignment: Assignment::Randomized(allocation),
            n,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.p < 5 {
            return Err(AolError::InvalidInput(format!(
                "scenarios use x1..x5, need p >= 5, got {}",
                self.p
            )));
        }
        if self.n == 0 {
            return Err(AolError::InvalidInput("n must be positive".into()));
        }
        if let Assignment::Randomized(pi) = self.assignment {
            if !(pi > 0.0 && pi < 1.0) {
                return Err(AolError::InvalidInput(format!(
                    "allocation {pi} outside (0, 1)"
                )));
            }
        }
        Ok(())
    }
}

/// Draws a trial from the scenario's outcome model `R ~ Normal(Q₀(x, a), 1)`.
pub fn simulate_scenario(spec: &ScenarioSpec) -> Result<TrialDataset> {
    spec.validate()?;
    let (n, p) = (spec.n, spec.p);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut values = Vec::with_capacity(n * p);
    let mut treatments = Vec::with_capacity(n);
    let mut outcomes = Vec::with_capacity(n);
    let mut propensities = Vec::with_capacity(n);
    let mut x = vec![0.0; p];
    for _ in 0..n {
        for v in x.iter_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        let pi_plus = spec.assignment.propensity_plus(&x);
        let u: f64 = rng.random();
        let arm = if u < pi_plus { Arm::Plus } else { Arm::Minus };
        let noise: f64 = rng.sample(StandardNormal);
        values.extend_from_slice(&x);
        outcomes.push(oracle_mu(spec.scenario, &x, arm) + noise);
        propensities.push(match arm {
            Arm::Plus => pi_plus,
            Arm::Minus => 1.0 - pi_plus,
        });
        treatments.push(arm);
    }
    TrialDataset::new(DMatrix::from_row_slice(n, p, &values), treatments, outcomes, propensities)
}

/// `n × p` matrix of i.i.d. `Uniform(-1, 1)` covariates, row-major draw order.
pub fn simulate_covariates(n: usize, p: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values: Vec<f64> = (0..n * p).map(|_| rng.random_range(-1.0..1.0)).collect();
    DMatrix::from_row_slice(n, p, &values)
}

/// Mean outcome `Q₀(x, arm)`; equal to `μ_arm(x)` since the noise is centred.
pub fn oracle_mu(scenario: Scenario, x: &[f64], arm: Arm) -> f64 {
    let a = arm.sign();
    let linear = |c1: f64| 0.5 + c1 * x[0] + 0.8 * x[1] + 0.3 * x[2] - 0.5 * x[3] + 0.7 * x[4];
    match scenario {
        Scenario::One => linear(0.5) + a * (0.2 - 0.6 * x[0] - 0.8 * x[1]),
        Scenario::Two => (linear(0.5) + a * (0.2 - 0.6 * x[0] - 0.8 * x[1])).exp(),
        Scenario::Three => linear(0.6) + a * (0.6 - x[0] * x[0] - x[1] * x[1]),
        Scenario::Four => (linear(0.6) + a * (0.6 - x[0] * x[0] - x[1] * x[1])).exp(),
    }
}

/// Contrast `δ(x) = μ₊₁(x) − μ₋₁(x)`.
pub fn oracle_contrast(scenario: Scenario, x: &[f64]) -> f64 {
    oracle_mu(scenario, x, Arm::Plus) - oracle_mu(scenario, x, Arm::Minus)
}

/// Mixes a base seed with a stream label and an index (SplitMix64 finalizer),
/// giving independent seeds for replications, folds and test sets.
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    let mut z = base
        ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn covariates_only() {
        let x = read_covariates("x2,x1,extra\n1,2,a\n3,4,b\n".as_bytes()).unwrap();
        assert_eq!(x, DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 4.0, 3.0]));
        assert!(read_covariates("a,b\n1,2\n".as_bytes()).is_err());
    }

    const THREE_ROWS: &str = "x1,x2,a,r,pi\n0.5,-1,1,2.5,0.75\n# comment\n0,0,-1,-1.25,0.25\n1e-3,2,1,0,0.5\n";

    #[test]
    fn csv_with_pi_column_round_trips_values() {
        let ds = read_dataset(THREE_ROWS.as_bytes(), None).unwrap();
        assert_eq!(ds.n(), 3);
        assert_eq!(ds.p(), 2);
        assert_eq!(ds.covariate_row(0), vec![0.5, -1.0]);
        assert_eq!(ds.covariate_row(2), vec![1e-3, 2.0]);
        assert_eq!(ds.treatments(), &[Arm::Plus, Arm::Minus, Arm::Plus]);
        assert_eq!(ds.outcomes(), &[2.5, -1.25, 0.0]);
        assert_eq!(ds.propensities(), &[0.75, 0.25, 0.5]);

        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let back = read_dataset(buf.as_slice(), None).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn missing_pi_fills_default() {
        let text = "x1,a,r\n0.1,1,1\n0.2,-1,2\n";
        let ds = read_dataset(text.as_bytes(), Some(0.5)).unwrap();
        assert_eq!(ds.propensities(), &[0.5, 0.5]);
        let ds = read_dataset(text.as_bytes(), Some(0.75)).unwrap();
        assert_eq!(ds.propensities(), &[0.75, 0.25]);
        assert!(matches!(
            read_dataset(text.as_bytes(), None),
            Err(AolError::MissingColumn(c)) if c == "pi"
        ));
    }

    #[test]
    fn invalid_treatment_names_row() {
        let text = "x1,a,r\n0.1,1,1\n0.2,0,2\n";
        match read_dataset(text.as_bytes(), Some(0.5)) {
            Err(AolError::Row { row, message }) => {
                assert_eq!(row, 3);
                assert!(message.contains("treatment"));
            }
            other => panic!("expected row error, got {other:?}"),
        }
    }

    #[test]
    fn bad_propensity_and_missing_columns() {
        let text = "x1,a,r,pi\n0.1,1,1,1.0\n";
        assert!(matches!(read_dataset(text.as_bytes(), None), Err(AolError::Row { row: 2, .. })));
        let text = "x1,a,pi\n0.1,1,0.5\n";
        assert!(matches!(read_dataset(text.as_bytes(), None), Err(AolError::MissingColumn(c)) if c == "r"));
        let text = "x1,a,r\n0.1,1,abc\n";
        assert!(matches!(read_dataset(text.as_bytes(), Some(0.5)), Err(AolError::Row { row: 2, .. })));
    }

    #[test]
    fn scenario_means_at_origin() {
        let zero = [0.0; 5];
        assert!((oracle_mu(Scenario::One, &zero, Arm::Plus) - 0.7).abs() < 1e-15);
        assert!((oracle_mu(Scenario::One, &zero, Arm::Minus) - 0.3).abs() < 1e-15);
        assert!((oracle_mu(Scenario::Four, &zero, Arm::Plus) - 1.1f64.exp()).abs() < 1e-12);
        let x = [1.0, 0.0, 0.0, 0.0, 0.0];
        assert!((oracle_mu(Scenario::Three, &x, Arm::Plus) - 0.7).abs() < 1e-15);
    }

    #[test]
    fn contrasts() {
        let zero = [0.0; 6];
        assert!((oracle_contrast(Scenario::One, &zero) - 0.4).abs() < 1e-15);
        assert!((oracle_contrast(Scenario::Three, &zero) - 1.2).abs() < 1e-15);
        let x = [1.0, 1.0, 0.0, 0.0, 0.0];
        assert!((oracle_contrast(Scenario::One, &x) + 2.4).abs() < 1e-14);
        let d2 = oracle_contrast(Scenario::Two, &zero);
        assert!((d2 - (0.7f64.exp() - 0.3f64.exp())).abs() < 1e-14);
    }

    #[test]
    fn simulation_is_deterministic() {
        let spec = ScenarioSpec::randomized(Scenario::One, 5, 0.5, 50, 11);
        let a = simulate_scenario(&spec).unwrap();
        let b = simulate_scenario(&spec).unwrap();
        assert_eq!(a, b);
        let c = simulate_scenario(&ScenarioSpec { seed: 12, ..spec }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn simulation_rejects_small_p_and_bad_allocation() {
        assert!(simulate_scenario(&ScenarioSpec::randomized(Scenario::One, 4, 0.5, 10, 1)).is_err());
        assert!(simulate_scenario(&ScenarioSpec::randomized(Scenario::One, 5, 1.0, 10, 1)).is_err());
        assert!(Scenario::from_id(9).is_err());
    }

    #[test]
    fn allocation_propensities_are_constant() {
        let ds = simulate_scenario(&ScenarioSpec::randomized(Scenario::One, 5, 0.75, 200, 3)).unwrap();
        for i in 0..ds.n() {
            let expected = if ds.treatments()[i] == Arm::Plus { 0.75 } else { 0.25 };
            assert_eq!(ds.propensities()[i], expected);
            assert_eq!(ds.propensity_plus(i), 0.75);
        }
    }

    #[test]
    fn derived_seeds_differ() {
        let a = derive_seed(1, 0, 0);
        let b = derive_seed(1, 0, 1);
        let c = derive_seed(1, 1, 0);
        assert!(a != b && a != c && b != c);
        assert_eq!(a, derive_seed(1, 0, 0));
    }
}
