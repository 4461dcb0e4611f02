//! Per-axis budget allocation: equal split and the two-axis arc sweep.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::apo::{check_budget, BudgetConvention, BudgetVector};
use crate::error::{invalid, Error, Result};
use crate::geometry::Metric;

/// Identical budgets saturating the composition surface.
pub fn equal_split(eps_total: f64, metric: Metric, n: usize) -> Result<BudgetVector> {
    equal_split_with(eps_total, metric, n, BudgetConvention::HalfDual)
}

pub fn equal_split_with(eps_total: f64, metric: Metric, n: usize, convention: BudgetConvention) -> Result<BudgetVector> {
    if n == 0 {
        return invalid("budget needs at least one axis");
    }
    let (r, e) = convention.surface(eps_total, metric);
    let each = if e.is_infinite() { r } else { r / (n as f64).powf(1.0 / e) };
    BudgetVector::with_convention(vec![each; n], eps_total, metric, convention)
}

/// Budgets on the two-axis composition arc: `ε_1 = r·i/(resolution+1)` for
/// `i = 1..=resolution` with `ε_2` solving the surface equation, plus the
/// mirror of every point and the equal split, sorted by `ε_1`.
pub fn feasible_allocations(eps_total: f64, metric: Metric, n: usize, resolution: usize) -> Result<Vec<BudgetVector>> {
    feasible_allocations_with(eps_total, metric, n, resolution, BudgetConvention::HalfDual)
}

pub fn feasible_allocations_with(
    eps_total: f64,
    metric: Metric,
    n: usize,
    resolution: usize,
    convention: BudgetConvention,
) -> Result<Vec<BudgetVector>> {
    if n != 2 {
        return Err(Error::Unsupported(format!("budget sweep covers two axes, got {n}")));
    }
    if resolution < 2 {
        return invalid("sweep resolution must be at least 2");
    }
    let (r, e) = convention.surface(eps_total, metric);
    let partner = |e1: f64| -> f64 {
        if e.is_infinite() {
            r
        } else {
            (r.powf(e) - e1.powf(e)).max(0.0).powf(1.0 / e)
        }
    };
    let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(2 * resolution + 1);
    for i in 1..=resolution {
        let e1 = r * i as f64 / (resolution + 1) as f64;
        let e2 = partner(e1);
        pairs.push((e1, e2));
        pairs.push((e2, e1));
    }
    let eq = equal_split_with(eps_total, metric, 2, convention)?;
    pairs.push((eq.eps[0], eq.eps[1]));
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pairs.dedup_by(|a, b| (a.0 - b.0).abs() <= 1e-12 * r && (a.1 - b.1).abs() <= 1e-12 * r);
    pairs
        .into_iter()
        .map(|(a, b)| {
            let v = BudgetVector::with_convention(vec![a, b], eps_total, metric, convention)?;
            if !check_budget(&v).passed {
                return Err(Error::InvalidArgument(format!("sweep produced infeasible budget {:?}", v.eps)));
            }
            Ok(v)
        })
        .collect()
}

/// One evaluated point of a budget sweep.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CurvePoint {
    pub eps: Vec<f64>,
    pub loss: f64,
}

/// Chosen budget and the full evaluated curve.
#[derive(Clone, Debug, PartialEq)]
pub struct AllocationResult {
    pub best: BudgetVector,
    pub best_loss: f64,
    pub curve: Vec<CurvePoint>,
}

/// Evaluates every candidate in parallel and returns the argmin. Ties go to
/// the lexicographically smaller budget; failed candidates are skipped.
pub fn optimize_allocation<F>(candidates: &[BudgetVector], evaluator: F) -> Result<AllocationResult>
where
    F: Fn(&BudgetVector) -> Result<f64> + Sync,
{
    if candidates.is_empty() {
        return invalid("no budget candidates to evaluate");
    }
    let results: Vec<Result<f64>> = candidates.par_iter().map(&evaluator).collect();
    let mut evaluated: Vec<(BudgetVector, f64)> = Vec::with_capacity(candidates.len());
    for (cand, res) in candidates.iter().zip(results) {
        match res {
            Ok(loss) if loss.is_finite() => evaluated.push((cand.clone(), loss)),
            Ok(loss) => log::warn!("budget {:?} evaluated to non-finite loss {loss}; skipped", cand.eps),
            Err(e) => log::warn!("budget {:?} failed: {e}; skipped", cand.eps),
        }
    }
    if evaluated.is_empty() {
        return Err(Error::Solver("every budget candidate failed to evaluate".into()));
    }
    let lex = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne());
    evaluated.sort_by(|a, b| lex(&a.0.eps, &b.0.eps).unwrap_or(std::cmp::Ordering::Equal));
    let (best, best_loss) = evaluated
        .iter()
        .fold(None::<&(BudgetVector, f64)>, |acc, cur| match acc {
            Some(b) if b.1 <= cur.1 => Some(b),
            _ => Some(cur),
        })
        .cloned()
        .expect("non-empty");
    let curve = evaluated.into_iter().map(|(b, loss)| CurvePoint { eps: b.eps, loss }).collect();
    Ok(AllocationResult { best, best_loss, curve })
}

/// Writes a two-axis loss curve as `eps1,eps2,loss`.
pub fn write_curve_csv(curve: &[CurvePoint], w: impl Write) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["eps1", "eps2", "loss"])?;
    for p in curve {
        if p.eps.len() != 2 {
            return invalid("loss curve rows need exactly two budgets");
        }
        wr.write_record([p.eps[0].to_string(), p.eps[1].to_string(), p.loss.to_string()])?;
    }
    wr.flush()?;
    Ok(())
}
