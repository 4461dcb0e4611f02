//! Utility-optimized mechanisms for metric differential privacy over
//! continuous low-dimensional domains.
//!
//! Anchors at the corners of an orthotope partition receive optimized output
//! distributions from a linear program; log-convex interpolation extends them
//! to every point of the domain while preserving the per-axis log-Lipschitz
//! bounds. Baselines, an empirical audit and a universal lower bound are
//! provided for comparison.

pub mod apo;
pub mod audit;
pub mod budget;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod interpolation;
pub mod lp;
pub mod mechanisms;
pub mod pipeline;

pub use apo::{
    check_budget, BudgetConvention, BudgetReport, BudgetVector, OutputDomain, PerturbationTable,
    SurrogateCoefficients,
};
pub use audit::{AuditReport, HistogramBin};
pub use error::{Error, Result};
pub use evaluation::{Instance, LossModel, PriorModel, RoadGraph, SynthSpec, TaskSet};
pub use geometry::{BoxDomain, Cell, CellWeights, Metric, Partition, PartitionSpec, Point};
pub use interpolation::{BudgetProvenance, InterpolatedMechanism};
pub use lp::{LinearProgram, LpSolution, LpStatus};
pub use mechanisms::{Mechanism, MechanismSpec};
pub use pipeline::{BudgetMode, Experiment, Method, MethodOptions, Synthesis};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
