//! End-to-end construction of every compared method on one instance.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::apo::{
    build_aipo_relaxed, build_approx_apo, build_coarse_lp, lower_bound, solve_approx_apo, surrogate_coefficients,
    BudgetConvention, BudgetVector, PerturbationTable, SurrogateCoefficients,
};
use crate::budget::{equal_split_with, feasible_allocations_with, optimize_allocation, CurvePoint};
use crate::error::{invalid, Error, Result};
use crate::evaluation::{expected_loss, Instance};
use crate::geometry::{Metric, Partition, Point};
use crate::interpolation::{BudgetProvenance, InterpolatedMechanism};
use crate::mechanisms::{
    bayesian_remap, ExponentialMechanism, LaplaceMechanism, Mechanism, MechanismSpec, TableMechanism,
    TruncatedExponentialMechanism,
};

/// Method tags accepted by the experiment front end.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Method {
    /// Anchor LP + interpolation with the configured budget mode.
    Aipo,
    /// Anchor LP + interpolation with equal per-axis budgets.
    AipoEqual,
    /// All-pairs anchor LP, interpolated.
    AipoRelaxed,
    Em,
    Laplace,
    Tem,
    /// Representative-point LP, nearest-representative lookup.
    CoarseLp,
    /// Bayesian remap of a base method.
    Remap(Box<Method>),
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        if let Some(base) = t.strip_prefix("RMP-").or_else(|| t.strip_prefix("rmp-")) {
            return Ok(Method::Remap(Box::new(base.parse()?)));
        }
        match t.to_ascii_uppercase().as_str() {
            "AIPO" => Ok(Method::Aipo),
            "AIPO-E" => Ok(Method::AipoEqual),
            "AIPO-R" => Ok(Method::AipoRelaxed),
            "EM" => Ok(Method::Em),
            "LAPLACE" => Ok(Method::Laplace),
            "TEM" => Ok(Method::Tem),
            "LP" | "COARSELP" | "COARSE-LP" => Ok(Method::CoarseLp),
            _ => invalid(format!("unknown method tag {s:?}")),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Aipo => f.write_str("AIPO"),
            Method::AipoEqual => f.write_str("AIPO-E"),
            Method::AipoRelaxed => f.write_str("AIPO-R"),
            Method::Em => f.write_str("EM"),
            Method::Laplace => f.write_str("Laplace"),
            Method::Tem => f.write_str("TEM"),
            Method::CoarseLp => f.write_str("LP"),
            Method::Remap(b) => write!(f, "RMP-{b}"),
        }
    }
}

/// How AIPO picks its per-axis budgets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum BudgetMode {
    Sweep { resolution: usize },
    Equal,
    /// Fractions of the surface radius per axis; rescaled onto the surface.
    Explicit { shares: Vec<f64> },
}

impl Default for BudgetMode {
    fn default() -> Self {
        BudgetMode::Sweep { resolution: 9 }
    }
}

/// Knobs shared by all methods.
#[derive(Clone, Debug, PartialEq)]
pub struct MethodOptions {
    pub metric: Metric,
    pub budget_mode: BudgetMode,
    pub convention: BudgetConvention,
    pub em_factor: f64,
    /// Truncation radius; `None` uses `3/ε`.
    pub tem_radius: Option<f64>,
    /// Representative grid of the coarse LP; `None` uses the instance partition.
    pub coarse_cells: Option<Vec<usize>>,
}

impl Default for MethodOptions {
    fn default() -> Self {
        MethodOptions {
            metric: Metric::L2,
            budget_mode: BudgetMode::default(),
            convention: BudgetConvention::HalfDual,
            em_factor: ExponentialMechanism::DEFAULT_FACTOR,
            tem_radius: None,
            coarse_cells: None,
        }
    }
}

/// A constructed mechanism plus what was learned while building it.
#[derive(Clone)]
pub struct Synthesis {
    pub method: Method,
    pub eps: f64,
    pub mechanism: Arc<dyn Mechanism>,
    pub budget: Option<BudgetVector>,
    pub curve: Option<Vec<CurvePoint>>,
    /// Anchor or representative table, when the method solves one.
    pub table: Option<PerturbationTable>,
}

impl Synthesis {
    pub fn spec(&self) -> MechanismSpec {
        self.mechanism.spec()
    }
}

/// An instance with its surrogate coefficients computed once.
pub struct Experiment<'a> {
    pub instance: &'a Instance,
    pub coeffs: SurrogateCoefficients,
    pub options: MethodOptions,
}

impl<'a> Experiment<'a> {
    pub fn new(instance: &'a Instance, options: MethodOptions) -> Result<Self> {
        let coeffs = surrogate_coefficients(&instance.partition, &instance.prior, &instance.loss, &instance.outputs)?;
        Ok(Experiment { instance, coeffs, options })
    }

    pub fn expected_loss(&self, mech: &dyn Mechanism) -> Result<f64> {
        expected_loss(mech, &self.instance.prior, &self.instance.loss)
    }

    pub fn lower_bound(&self, eps: f64) -> Result<f64> {
        let i = self.instance;
        lower_bound(&i.partition, &i.outputs, eps, self.options.metric, &i.loss, &i.prior)
    }

    /// Approx-APO at a fixed budget, interpolated.
    pub fn aipo_for_budget(&self, budget: &BudgetVector) -> Result<InterpolatedMechanism> {
        let i = self.instance;
        let prog = build_approx_apo(&i.partition, &i.outputs, budget, &self.coeffs)?;
        let table = solve_approx_apo(&prog)?;
        InterpolatedMechanism::new(
            i.partition.clone(),
            table,
            i.outputs.clone(),
            self.options.metric,
            BudgetProvenance::PerAxis { budget: budget.clone() },
        )
    }

    fn explicit_budget(&self, eps: f64, shares: &[f64]) -> Result<BudgetVector> {
        if shares.len() != self.instance.partition.dim() || shares.iter().any(|s| !(*s > 0.0)) {
            return invalid("explicit budget shares must be positive, one per axis");
        }
        let (r, e) = self.options.convention.surface(eps, self.options.metric);
        let norm = crate::geometry::norm_with_exponent(shares, e);
        let v = BudgetVector::with_convention(
            shares.iter().map(|s| s / norm * r).collect(),
            eps,
            self.options.metric,
            self.options.convention,
        )?;
        Ok(v)
    }

    fn aipo(&self, eps: f64, mode: &BudgetMode) -> Result<Synthesis> {
        let (metric, conv, n) = (self.options.metric, self.options.convention, self.instance.partition.dim());
        let (budget, curve) = match mode {
            BudgetMode::Equal => (equal_split_with(eps, metric, n, conv)?, None),
            BudgetMode::Explicit { shares } => (self.explicit_budget(eps, shares)?, None),
            BudgetMode::Sweep { resolution } => {
                let cands = feasible_allocations_with(eps, metric, n, *resolution, conv)?;
                let res = optimize_allocation(&cands, |b| self.expected_loss(&self.aipo_for_budget(b)?))?;
                (res.best, Some(res.curve))
            }
        };
        let mech = self.aipo_for_budget(&budget)?;
        Ok(Synthesis {
            method: if *mode == BudgetMode::Equal { Method::AipoEqual } else { Method::Aipo },
            eps,
            table: Some(mech.table().clone()),
            mechanism: Arc::new(mech),
            budget: Some(budget),
            curve,
        })
    }

    fn aipo_relaxed(&self, eps: f64) -> Result<Synthesis> {
        let i = self.instance;
        let prog = build_aipo_relaxed(&i.partition, &i.outputs, eps, self.options.metric, &self.coeffs)?;
        let table = solve_approx_apo(&prog)?;
        let mech = InterpolatedMechanism::new(
            i.partition.clone(),
            table.clone(),
            i.outputs.clone(),
            self.options.metric,
            BudgetProvenance::Total { eps, metric: self.options.metric },
        )?;
        Ok(Synthesis { method: Method::AipoRelaxed, eps, mechanism: Arc::new(mech), budget: None, curve: None, table: Some(table) })
    }

    /// Representatives at the cell centers of a grid over the instance
    /// domain; each carries its cell's prior mass and mass-weighted loss.
    pub fn coarse_lp(&self, eps: f64) -> Result<TableMechanism> {
        let i = self.instance;
        let counts = self.options.coarse_cells.clone().unwrap_or_else(|| i.partition.counts().to_vec());
        let grid = Partition::new(i.partition.bounds().clone(), counts)?;
        let k = i.outputs.len();
        let mut masses = vec![0.0; grid.num_cells()];
        let mut sums = vec![vec![0.0; k]; grid.num_cells()];
        let mut plain = vec![vec![0.0; k]; grid.num_cells()];
        let mut hits = vec![0usize; grid.num_cells()];
        for (s, (x, m)) in i.prior.iter().enumerate() {
            let c = grid.locate_cell(x)?;
            masses[c] += m;
            hits[c] += 1;
            for y in 0..k {
                sums[c][y] += m * i.loss.loss(s, y);
                plain[c][y] += i.loss.loss(s, y);
            }
        }
        let loss_rows: Vec<Vec<f64>> = (0..grid.num_cells())
            .map(|c| {
                (0..k)
                    .map(|y| {
                        if masses[c] > 0.0 {
                            sums[c][y] / masses[c]
                        } else if hits[c] > 0 {
                            plain[c][y] / hits[c] as f64
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect();
        let reps: Vec<Point> = grid
            .cells()
            .iter()
            .map(|c| Point::new((0..c.dim()).map(|l| c.base[l] + c.sides[l] / 2.0).collect()))
            .collect::<Result<_>>()?;
        let prog = build_coarse_lp(&reps, &masses, &i.outputs, eps, self.options.metric, &loss_rows)?;
        let table = solve_approx_apo(&prog)?;
        TableMechanism::new(reps, table, self.options.metric)
    }

    /// Builds `method` at budget `eps`.
    pub fn build(&self, method: &Method, eps: f64) -> Result<Synthesis> {
        if !(eps > 0.0) || !eps.is_finite() {
            return invalid(format!("ε must be positive and finite, got {eps}"));
        }
        let outputs = self.instance.outputs.clone();
        let simple = |mechanism: Arc<dyn Mechanism>| Synthesis {
            method: method.clone(),
            eps,
            mechanism,
            budget: None,
            curve: None,
            table: None,
        };
        Ok(match method {
            Method::Aipo => self.aipo(eps, &self.options.budget_mode)?,
            Method::AipoEqual => self.aipo(eps, &BudgetMode::Equal)?,
            Method::AipoRelaxed => self.aipo_relaxed(eps)?,
            Method::Em => simple(Arc::new(ExponentialMechanism::with_factor(
                outputs,
                eps,
                self.options.metric,
                self.options.em_factor,
            )?)),
            Method::Laplace => simple(Arc::new(LaplaceMechanism::new(outputs, eps)?)),
            Method::Tem => {
                let r = self.options.tem_radius.unwrap_or_else(|| TruncatedExponentialMechanism::default_radius(eps));
                simple(Arc::new(TruncatedExponentialMechanism::with_factor(
                    outputs,
                    eps,
                    self.options.metric,
                    r,
                    self.options.em_factor,
                )?))
            }
            Method::CoarseLp => {
                let m = self.coarse_lp(eps)?;
                let table = m.table().clone();
                Synthesis { table: Some(table), ..simple(Arc::new(m)) }
            }
            Method::Remap(base) => {
                if matches!(**base, Method::Remap(_)) {
                    return invalid("remapping a remapped mechanism is not supported");
                }
                let inner = self.build(base, eps)?;
                let remapped = bayesian_remap(inner.mechanism.clone(), &self.instance.prior, &self.instance.loss)?;
                Synthesis { budget: inner.budget, ..simple(Arc::new(remapped)) }
            }
        })
    }
}
