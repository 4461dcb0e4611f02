//! Log-convex extension of an anchor table to the whole domain.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::apo::{BudgetVector, OutputDomain, PerturbationTable};
use crate::error::{invalid, Result};
use crate::geometry::{CellWeights, Metric, Partition, Point};
use crate::mechanisms::{Mechanism, MechanismSpec};

/// Budget a mechanism was synthesized under.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum BudgetProvenance {
    PerAxis { budget: BudgetVector },
    Total { eps: f64, metric: Metric },
}

/// Weighted geometric mean `z_lo^λ · z_hi^(1−λ)`.
pub fn logcvx_1d(z_lo: f64, z_hi: f64, lambda: f64) -> Result<f64> {
    if !(z_lo > 0.0) || !(z_hi > 0.0) {
        return invalid(format!("log-convex interpolation needs positive endpoints, got {z_lo} and {z_hi}"));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return invalid(format!("λ = {lambda} is outside [0, 1]"));
    }
    if lambda == 1.0 {
        return Ok(z_lo);
    }
    if lambda == 0.0 {
        return Ok(z_hi);
    }
    Ok((lambda * z_lo.ln() + (1.0 - lambda) * z_hi.ln()).exp())
}

/// Anchor table extended by multi-dimensional log-convex interpolation and
/// normalized over the outputs.
#[derive(Clone, Debug)]
pub struct InterpolatedMechanism {
    partition: Partition,
    table: PerturbationTable,
    log_table: Vec<f64>,
    outputs: OutputDomain,
    metric: Metric,
    provenance: BudgetProvenance,
}

impl InterpolatedMechanism {
    pub fn new(
        partition: Partition,
        table: PerturbationTable,
        outputs: OutputDomain,
        metric: Metric,
        provenance: BudgetProvenance,
    ) -> Result<Self> {
        if table.num_rows() != partition.num_anchors() || table.num_cols() != outputs.len() {
            return invalid(format!(
                "table is {}x{}, expected {} anchors x {} outputs",
                table.num_rows(),
                table.num_cols(),
                partition.num_anchors(),
                outputs.len()
            ));
        }
        if table.min_entry() <= 0.0 {
            return invalid("interpolation needs strictly positive anchor probabilities");
        }
        let log_table = table.to_rows().into_iter().flatten().map(f64::ln).collect();
        Ok(InterpolatedMechanism { partition, table, log_table, outputs, metric, provenance })
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn table(&self) -> &PerturbationTable {
        &self.table
    }

    pub fn outputs(&self) -> &OutputDomain {
        &self.outputs
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn provenance(&self) -> &BudgetProvenance {
        &self.provenance
    }

    fn log_row(&self, anchor: usize) -> &[f64] {
        let k = self.outputs.len();
        &self.log_table[anchor * k..(anchor + 1) * k]
    }

    /// Anchor whose weight is exactly one, if `x` sits on an anchor.
    fn exact_anchor(&self, cell: usize, weights: &CellWeights) -> Option<usize> {
        weights.corner_weights.iter().position(|w| *w == 1.0).map(|m| self.partition.cell_corners(cell)[m])
    }

    /// `ln f_int(x, y_k)` for every output, using corner weights of `cell`.
    pub(crate) fn log_f_int_in_cell(&self, cell: usize, weights: &CellWeights) -> Vec<f64> {
        if let Some(a) = self.exact_anchor(cell, weights) {
            return self.log_row(a).to_vec();
        }
        let mut out = vec![0.0; self.outputs.len()];
        for (mask, &anchor) in self.partition.cell_corners(cell).iter().enumerate() {
            let w = weights.corner_weights[mask];
            if w == 0.0 {
                continue;
            }
            for (o, l) in out.iter_mut().zip(self.log_row(anchor)) {
                *o += w * l;
            }
        }
        out
    }

    /// `ln f_int(x, y_k)` for every output.
    pub fn log_f_int(&self, x: &Point) -> Result<Vec<f64>> {
        let (cell, weights) = self.partition.locate_with_weights(x)?;
        Ok(self.log_f_int_in_cell(cell, &weights))
    }
}

/// Unnormalized interpolant `Π_γ z(y | corner_γ)^{w(γ)}`.
pub fn f_int_unnormalized(x: &Point, y_index: usize, mech: &InterpolatedMechanism) -> Result<f64> {
    if y_index >= mech.outputs.len() {
        return invalid(format!("output {y_index} does not exist"));
    }
    let (cell, weights) = mech.partition.locate_with_weights(x)?;
    if let Some(a) = mech.exact_anchor(cell, &weights) {
        return Ok(mech.table.get(a, y_index));
    }
    Ok(mech.log_f_int_in_cell(cell, &weights)[y_index].exp())
}

/// Normalized interpolated distribution at `x`.
pub fn distribution_at(x: &Point, mech: &dyn Mechanism) -> Result<Vec<f64>> {
    mech.distribution_at(x)
}

impl Mechanism for InterpolatedMechanism {
    fn num_outputs(&self) -> usize {
        self.outputs.len()
    }

    fn distribution_at(&self, x: &Point) -> Result<Vec<f64>> {
        let (cell, weights) = self.partition.locate_with_weights(x)?;
        if let Some(a) = self.exact_anchor(cell, &weights) {
            return Ok(self.table.row(a).to_vec());
        }
        let logs = self.log_f_int_in_cell(cell, &weights);
        let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logs.iter().map(|l| (l - m).exp()).collect();
        let s: f64 = w.iter().sum();
        Ok(w.into_iter().map(|v| v / s).collect())
    }

    fn log_distribution_at(&self, x: &Point) -> Result<Vec<f64>> {
        let logs = self.log_f_int(x)?;
        let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + logs.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
        Ok(logs.into_iter().map(|l| l - lse).collect())
    }

    fn spec(&self) -> MechanismSpec {
        MechanismSpec::Interpolated {
            partition: self.partition.spec(),
            table: self.table.clone(),
            outputs: self.outputs.clone(),
            metric: self.metric,
            provenance: self.provenance.clone(),
        }
    }
}

/// Inverse-CDF draw over the outputs in stored order.
pub fn sample(x: &Point, mech: &dyn Mechanism, rng: &mut impl Rng) -> Result<usize> {
    let dist = mech.distribution_at(x)?;
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, z) in dist.iter().enumerate() {
        acc += z;
        if u < acc {
            return Ok(k);
        }
    }
    // u landed in the rounding gap above the final cumulative sum
    Ok(dist.iter().rposition(|z| *z > 0.0).unwrap_or(dist.len() - 1))
}

/// [`sample`] with a fresh ChaCha8 stream seeded by `seed`.
pub fn sample_seeded(x: &Point, mech: &dyn Mechanism, seed: u64) -> Result<usize> {
    sample(x, mech, &mut ChaCha8Rng::seed_from_u64(seed))
}
