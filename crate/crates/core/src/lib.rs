//! Augmented outcome-weighted learning (AOL) for estimating optimal
//! treatment regimes from two-arm trial data.

pub mod data;
pub mod error;
pub mod evaluate;
pub mod kernels;
pub mod learner;
pub mod losses;
pub mod optimize;
pub mod residuals;

mod linalg;

pub use data::{Arm, Scenario, TrialDataset};
pub use error::{AolError, Result};
pub use kernels::KernelSpec;
pub use losses::SurrogateLoss;
pub use optimize::{Objective, SolverOptions, SolverResult, SolverStatus};
pub use learner::{DecisionRule, FitConfig, Method};
pub use evaluate::{BenchmarkRow, BenchmarkSpec, CvReport, GSource, PropensitySource, TrainingSpec, ValueEstimate};
