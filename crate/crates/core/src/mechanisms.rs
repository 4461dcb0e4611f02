//! The mechanism interface and baseline mechanisms: exponential, discretized
//! planar Laplace, truncated exponential, Bayesian remapping, and the
//! nearest-representative table produced by the coarse LP.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::apo::{OutputDomain, PerturbationTable, PROBABILITY_FLOOR};
use crate::error::{invalid, Error, Result};
use crate::evaluation::{LossModel, PriorModel};
use crate::geometry::{metric_distance, Metric, PartitionSpec, Point};
use crate::interpolation::{BudgetProvenance, InterpolatedMechanism};

/// A randomized map from points to a finite output set.
pub trait Mechanism: Send + Sync {
    fn num_outputs(&self) -> usize;

    /// Output distribution at `x`, summing to one.
    fn distribution_at(&self, x: &Point) -> Result<Vec<f64>>;

    /// Log-probabilities at `x`; zeros are floored at [`PROBABILITY_FLOOR`].
    fn log_distribution_at(&self, x: &Point) -> Result<Vec<f64>> {
        Ok(self.distribution_at(x)?.into_iter().map(|z| z.max(PROBABILITY_FLOOR).ln()).collect())
    }

    /// Serializable description sufficient to rebuild the mechanism.
    fn spec(&self) -> MechanismSpec;
}

/// Normalizes log-weights; `-∞` entries get probability zero.
fn softmax(logw: &[f64]) -> Vec<f64> {
    let m = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logw.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

fn log_softmax(logw: &[f64]) -> Vec<f64> {
    let m = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logw.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    logw.iter().map(|l| l - lse).collect()
}

fn check_positive(eps: f64, what: &str) -> Result<()> {
    if !(eps > 0.0) || !eps.is_finite() {
        return invalid(format!("{what} must be positive and finite, got {eps}"));
    }
    Ok(())
}

fn check_dims(x: &Point, outputs: &OutputDomain) -> Result<()> {
    if x.dim() != outputs.candidates()[0].dim() {
        return invalid(format!("point has dimension {}, outputs {}", x.dim(), outputs.candidates()[0].dim()));
    }
    Ok(())
}

/// `z(y_k | x) ∝ exp(−ε/2 · d_p(x, y_k))`.
pub fn em_mechanism(x: &Point, outputs: &OutputDomain, eps: f64, metric: Metric) -> Result<Vec<f64>> {
    ExponentialMechanism::new(outputs.clone(), eps, metric)?.distribution_at(x)
}

/// `z(y_k | x) ∝ exp(−ε · d_2(x, y_k))` over the candidates of a 2D domain.
pub fn laplace_mechanism(x: &Point, outputs: &OutputDomain, eps: f64) -> Result<Vec<f64>> {
    LaplaceMechanism::new(outputs.clone(), eps)?.distribution_at(x)
}

/// Exponential mechanism restricted to candidates within `radius` of `x`.
pub fn tem_mechanism(x: &Point, outputs: &OutputDomain, eps: f64, metric: Metric, radius: f64) -> Result<Vec<f64>> {
    TruncatedExponentialMechanism::new(outputs.clone(), eps, metric, radius)?.distribution_at(x)
}

/// Exponential mechanism with a configurable exponent factor (default 1/2).
#[derive(Clone, Debug)]
pub struct ExponentialMechanism {
    outputs: OutputDomain,
    eps: f64,
    metric: Metric,
    factor: f64,
}

impl ExponentialMechanism {
    pub const DEFAULT_FACTOR: f64 = 0.5;

    pub fn new(outputs: OutputDomain, eps: f64, metric: Metric) -> Result<Self> {
        Self::with_factor(outputs, eps, metric, Self::DEFAULT_FACTOR)
    }

    pub fn with_factor(outputs: OutputDomain, eps: f64, metric: Metric, factor: f64) -> Result<Self> {
        check_positive(eps, "ε")?;
        check_positive(factor, "exponent factor")?;
        Ok(ExponentialMechanism { outputs, eps, metric, factor })
    }

    fn log_weights(&self, x: &Point) -> Result<Vec<f64>> {
        check_dims(x, &self.outputs)?;
        Ok(self
            .outputs
            .candidates()
            .iter()
            .map(|y| -self.factor * self.eps * metric_distance(x.coords(), y.coords(), self.metric))
            .collect())
    }
}

impl Mechanism for ExponentialMechanism {
    fn num_outputs(&self) -> usize {
        self.outputs.len()
    }

    fn distribution_at(&self, x: &Point) -> Result<Vec<f64>> {
        Ok(softmax(&self.log_weights(x)?))
    }

    fn log_distribution_at(&self, x: &Point) -> Result<Vec<f64>> {
        Ok(log_softmax(&self.log_weights(x)?))
    }

    fn spec(&self) -> MechanismSpec {
        MechanismSpec::Exponential {
            outputs: self.outputs.clone(),
            eps: self.eps,
            metric: self.metric,
            factor: self.factor,
        }
    }
}

/// Planar Laplace discretized to the candidate set.
#[derive(Clone, Debug)]
pub struct LaplaceMechanism {
    em: ExponentialMechanism,
}

impl LaplaceMechanism {
    pub fn new(outputs: OutputDomain, eps: f64) -> Result<Self> {
        if outputs.candidates()[0].dim() != 2 {
            return Err(Error::Unsupported("planar Laplace needs a 2D domain".into()));
        }
        Ok(LaplaceMechanism { em: ExponentialMechanism::with_factor(outputs, eps, Metric::L2, 1.0)? })
    }
}

impl Mechanism for LaplaceMechanism {
    fn num_outputs(&self) -> usize {
        self.em.num_outputs()
    }

    fn distribution_at(&self, x: &Point) -> Result<Vec<f64>> {
        if x.dim() != 2 {
            return Err(Error::Unsupported("planar Laplace needs a 2D domain".into()));
        }
        self.em.distribution_at(x)
    }

    fn log_distribution_at(&self, x: &Point) -> Result<Vec<f64>> {
        self.em.log_distribution_at(x)
    }

    fn spec(&self) -> MechanismSpec {
        MechanismSpec::Laplace { outputs: self.em.outputs.clone(), eps: self.em.eps }
    }
}

/// Exponential mechanism over the candidates within `radius` of the input.
#[derive(Clone, Debug)]
pub struct TruncatedExponentialMechanism {
    em: ExponentialMechanism,
    radius: f64,
}

impl TruncatedExponentialMechanism {
    pub fn new(outputs: OutputDomain, eps: f64, metric: Metric, radius: f64) -> Result<Self> {
        Self::with_factor(outputs, eps, metric, radius, ExponentialMechanism::DEFAULT_FACTOR)
    }

    pub fn with_factor(outputs: OutputDomain, eps: f64, metric: Metric, radius: f64, factor: f64) -> Result<Self> {
        check_positive(radius, "truncation radius")?;
        Ok(TruncatedExponentialMechanism { em: ExponentialMechanism::with_factor(outputs, eps, metric, factor)?, radius })
    }

    /// `R = 3/ε`: keeps the discarded tail of `exp(−ε d)` under 5%.
    pub fn default_radius(eps: f64) -> f64 {
        3.0 / eps
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }
}

impl Mechanism for TruncatedExponentialMechanism {
    fn num_outputs(&self) -> usize {
        self.em.num_outputs()
    }

    fn distribution_at(&self, x: &Point) -> Result<Vec<f64>> {
        let mut logw = self.em.log_weights(x)?;
        let mut any = false;
        for (l, y) in logw.iter_mut().zip(self.em.outputs.candidates()) {
            if metric_distance(x.coords(), y.coords(), self.em.metric) > self.radius {
                *l = f64::NEG_INFINITY;
            } else {
                any = true;
            }
        }
        if !any {
            return invalid(format!("no candidate within radius {} of {:?}", self.radius, x.coords()));
        }
        Ok(softmax(&logw))
    }

    fn spec(&self) -> MechanismSpec {
        MechanismSpec::Truncated {
            outputs: self.em.outputs.clone(),
            eps: self.em.eps,
            metric: self.em.metric,
            factor: self.em.factor,
            radius: self.radius,
        }
    }
}

/// Table over representative points; an input uses the row of its nearest
/// representative (ties toward the lower index).
#[derive(Clone, Debug)]
pub struct TableMechanism {
    representatives: Vec<Point>,
    table: PerturbationTable,
    metric: Metric,
}

impl TableMechanism {
    pub fn new(representatives: Vec<Point>, table: PerturbationTable, metric: Metric) -> Result<Self> {
        if representatives.is_empty() || representatives.len() != table.num_rows() {
            return invalid("one table row per representative is required");
        }
        Ok(TableMechanism { representatives, table, metric })
    }

    pub fn table(&self) -> &PerturbationTable {
        &self.table
    }

    pub fn representatives(&self) -> &[Point] {
        &self.representatives
    }

    pub fn nearest(&self, x: &Point) -> Result<usize> {
        if x.dim() != self.representatives[0].dim() {
            return invalid("point dimension does not match the representatives");
        }
        let mut best = (f64::INFINITY, 0);
        for (i, r) in self.representatives.iter().enumerate() {
            let d = metric_distance(x.coords(), r.coords(), self.metric);
            if d < best.0 {
                best = (d, i);
            }
        }
        Ok(best.1)
    }
}

impl Mechanism for TableMechanism {
    fn num_outputs(&self) -> usize {
        self.table.num_cols()
    }

    fn distribution_at(&self, x: &Point) -> Result<Vec<f64>> {
        Ok(self.table.row(self.nearest(x)?).to_vec())
    }

    fn spec(&self) -> MechanismSpec {
        MechanismSpec::CoarseTable {
            representatives: self.representatives.clone(),
            table: self.table.clone(),
            metric: self.metric,
        }
    }
}

/// A base mechanism followed by a deterministic output map.
#[derive(Clone)]
pub struct RemappedMechanism {
    base: Arc<dyn Mechanism>,
    mapping: Vec<usize>,
}

impl std::fmt::Debug for RemappedMechanism {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemappedMechanism").field("mapping", &self.mapping).finish_non_exhaustive()
    }
}

impl RemappedMechanism {
    pub fn new(base: Arc<dyn Mechanism>, mapping: Vec<usize>) -> Result<Self> {
        let k = base.num_outputs();
        if mapping.len() != k || mapping.iter().any(|g| *g >= k) {
            return invalid("remap must send each output to an output");
        }
        Ok(RemappedMechanism { base, mapping })
    }

    pub fn mapping(&self) -> &[usize] {
        &self.mapping
    }
}

impl Mechanism for RemappedMechanism {
    fn num_outputs(&self) -> usize {
        self.mapping.len()
    }

    fn distribution_at(&self, x: &Point) -> Result<Vec<f64>> {
        let base = self.base.distribution_at(x)?;
        let mut out = vec![0.0; base.len()];
        for (y, z) in base.into_iter().enumerate() {
            out[self.mapping[y]] += z;
        }
        Ok(out)
    }

    fn spec(&self) -> MechanismSpec {
        MechanismSpec::Remapped { base: Box::new(self.base.spec()), mapping: self.mapping.clone() }
    }
}

/// Posterior-optimal remap `g(y) = argmin_{y'} Σ_x p(x) z(y|x) L(x, y')`.
/// Ties go to the lower output index; unreachable outputs map to themselves.
pub fn bayesian_remap(base: Arc<dyn Mechanism>, prior: &PriorModel, loss: &LossModel) -> Result<RemappedMechanism> {
    let k = base.num_outputs();
    if loss.num_points() != prior.len() || loss.num_outputs() != k {
        return invalid("prior, loss matrix and base mechanism disagree in shape");
    }
    let dists = prior
        .points()
        .par_iter()
        .map(|x| base.distribution_at(x))
        .collect::<Result<Vec<_>>>()?;
    let mapping = (0..k)
        .map(|y| {
            let weights: Vec<f64> = dists.iter().zip(prior.masses()).map(|(d, p)| p * d[y]).collect();
            if weights.iter().sum::<f64>() == 0.0 {
                return y;
            }
            let mut best = (f64::INFINITY, y);
            for cand in 0..k {
                let score: f64 = weights.iter().enumerate().map(|(i, w)| w * loss.loss(i, cand)).sum();
                if score < best.0 {
                    best = (score, cand);
                }
            }
            best.1
        })
        .collect();
    RemappedMechanism::new(base, mapping)
}

/// Serialized mechanism, tagged by `kind`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum MechanismSpec {
    Interpolated {
        partition: PartitionSpec,
        table: PerturbationTable,
        outputs: OutputDomain,
        metric: Metric,
        provenance: BudgetProvenance,
    },
    Exponential {
        outputs: OutputDomain,
        eps: f64,
        metric: Metric,
        factor: f64,
    },
    Laplace {
        outputs: OutputDomain,
        eps: f64,
    },
    Truncated {
        outputs: OutputDomain,
        eps: f64,
        metric: Metric,
        factor: f64,
        radius: f64,
    },
    CoarseTable {
        representatives: Vec<Point>,
        table: PerturbationTable,
        metric: Metric,
    },
    Remapped {
        base: Box<MechanismSpec>,
        mapping: Vec<usize>,
    },
}

impl MechanismSpec {
    pub fn build(&self) -> Result<Arc<dyn Mechanism>> {
        Ok(match self {
            MechanismSpec::Interpolated { partition, table, outputs, metric, provenance } => Arc::new(
                InterpolatedMechanism::new(
                    crate::geometry::Partition::from_spec(partition)?,
                    table.clone(),
                    outputs.clone(),
                    *metric,
                    provenance.clone(),
                )?,
            ),
            MechanismSpec::Exponential { outputs, eps, metric, factor } => {
                Arc::new(ExponentialMechanism::with_factor(outputs.clone(), *eps, *metric, *factor)?)
            }
            MechanismSpec::Laplace { outputs, eps } => Arc::new(LaplaceMechanism::new(outputs.clone(), *eps)?),
            MechanismSpec::Truncated { outputs, eps, metric, factor, radius } => Arc::new(
                TruncatedExponentialMechanism::with_factor(outputs.clone(), *eps, *metric, *radius, *factor)?,
            ),
            MechanismSpec::CoarseTable { representatives, table, metric } => {
                Arc::new(TableMechanism::new(representatives.clone(), table.clone(), *metric)?)
            }
            MechanismSpec::Remapped { base, mapping } => Arc::new(RemappedMechanism::new(base.build()?, mapping.clone())?),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}
