//! Empirical privacy audit via perturbation probability ratios (PPR).

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::{metric_distance, BoxDomain, Metric, Point};
use crate::mechanisms::Mechanism;

/// Distances below this count as coincident points.
pub const MIN_DISTANCE: f64 = 1e-12;

/// Number of worst pairs kept in a report.
pub const TOP_K: usize = 10;

/// `|ln z(y|x) − ln z(y|x')| / d_p(x, x')` on floored probabilities.
pub fn ppr(x: &Point, x2: &Point, y_index: usize, mech: &dyn Mechanism, metric: Metric) -> Result<f64> {
    let d = metric_distance(x.coords(), x2.coords(), metric);
    if !(d >= MIN_DISTANCE) {
        return invalid("PPR needs two distinct points");
    }
    let (a, b) = (mech.log_distribution_at(x)?, mech.log_distribution_at(x2)?);
    if y_index >= a.len() {
        return invalid(format!("output {y_index} does not exist"));
    }
    Ok((a[y_index] - b[y_index]).abs() / d)
}

/// One of the highest-PPR pairs found.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Offender {
    pub x: Vec<f64>,
    pub x_prime: Vec<f64>,
    pub output: usize,
    pub ppr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub eps: f64,
    pub metric: Metric,
    pub seed: u64,
    pub sampled_points: usize,
    pub pair_count: u64,
    pub violating_pairs: u64,
    /// Percentage of pairs violating on at least one output.
    pub violation_ratio: f64,
    pub pair_output_count: u64,
    pub violating_pair_outputs: u64,
    /// Percentage of (pair, output) combinations violating.
    pub pair_output_violation_ratio: f64,
    pub max_ppr: f64,
    pub worst: Vec<Offender>,
}

/// `count` points drawn uniformly from `bounds`.
pub fn sample_points(bounds: &BoxDomain, count: usize, seed: u64) -> Vec<Point> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let c: Vec<f64> = (0..bounds.dim()).map(|l| rng.random_range(bounds.lower[l]..=bounds.upper[l])).collect();
            Point::new(c).expect("finite sample")
        })
        .collect()
}

/// Per-pair maximum-over-outputs PPR and per-output violation counts.
struct PairScan {
    /// `(i, j, max ppr, argmax output, outputs over eps)`.
    pairs: Vec<(usize, usize, f64, usize, u64)>,
}

fn scan(points: &[Point], logs: &[Vec<f64>], eps: f64, metric: Metric) -> PairScan {
    let rows: Vec<Vec<(usize, usize, f64, usize, u64)>> = (0..points.len())
        .into_par_iter()
        .map(|i| {
            let mut out = Vec::with_capacity(points.len() - i - 1);
            for j in i + 1..points.len() {
                let d = metric_distance(points[i].coords(), points[j].coords(), metric);
                if d < MIN_DISTANCE {
                    continue;
                }
                let mut best = (0.0f64, 0usize);
                let mut over = 0u64;
                for (k, (a, b)) in logs[i].iter().zip(&logs[j]).enumerate() {
                    let r = (a - b).abs() / d;
                    if r > eps {
                        over += 1;
                    }
                    if r > best.0 {
                        best = (r, k);
                    }
                }
                out.push((i, j, best.0, best.1, over));
            }
            out
        })
        .collect();
    PairScan { pairs: rows.into_iter().flatten().collect() }
}

fn log_distributions(mech: &dyn Mechanism, points: &[Point]) -> Result<Vec<Vec<f64>>> {
    points.par_iter().map(|x| mech.log_distribution_at(x)).collect()
}

/// Audits all unordered pairs of `sample_count` uniform points. A pair
/// violates when its PPR exceeds `eps` for any output.
pub fn violation_ratio(
    mech: &dyn Mechanism,
    eps: f64,
    metric: Metric,
    bounds: &BoxDomain,
    sample_count: usize,
    seed: u64,
) -> Result<AuditReport> {
    if !(eps > 0.0) {
        return invalid(format!("audit threshold must be positive, got {eps}"));
    }
    let points = sample_points(bounds, sample_count, seed);
    audit_points(mech, eps, metric, &points, seed)
}

/// [`violation_ratio`] over caller-supplied points.
pub fn audit_points(mech: &dyn Mechanism, eps: f64, metric: Metric, points: &[Point], seed: u64) -> Result<AuditReport> {
    let logs = log_distributions(mech, points)?;
    let k = mech.num_outputs() as u64;
    let s = scan(points, &logs, eps, metric);
    let pair_count = s.pairs.len() as u64;
    let violating_pairs = s.pairs.iter().filter(|p| p.4 > 0).count() as u64;
    let violating_pair_outputs: u64 = s.pairs.iter().map(|p| p.4).sum();
    let max_ppr = s.pairs.iter().map(|p| p.2).fold(0.0, f64::max);
    let mut order: Vec<&(usize, usize, f64, usize, u64)> = s.pairs.iter().collect();
    order.sort_by(|a, b| b.2.total_cmp(&a.2).then((a.0, a.1).cmp(&(b.0, b.1))));
    let worst = order
        .into_iter()
        .take(TOP_K)
        .map(|&(i, j, r, y, _)| Offender {
            x: points[i].coords().to_vec(),
            x_prime: points[j].coords().to_vec(),
            output: y,
            ppr: r,
        })
        .collect();
    let pct = |num: u64, den: u64| if den == 0 { 0.0 } else { 100.0 * num as f64 / den as f64 };
    Ok(AuditReport {
        eps,
        metric,
        seed,
        sampled_points: points.len(),
        pair_count,
        violating_pairs,
        violation_ratio: pct(violating_pairs, pair_count),
        pair_output_count: pair_count * k,
        violating_pair_outputs,
        pair_output_violation_ratio: pct(violating_pair_outputs, pair_count * k),
        max_ppr,
        worst,
    })
}

/// Histogram bin `[lo, hi)`; the last bin is open-ended.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HistogramBin {
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub count: u64,
}

/// Max-over-outputs PPR per pair, binned uniformly over `[0, 2ε)` plus an
/// overflow bin `[2ε, ∞)`.
pub fn ppr_histogram(
    mech: &dyn Mechanism,
    eps: f64,
    metric: Metric,
    bounds: &BoxDomain,
    samples: usize,
    bins: usize,
    seed: u64,
) -> Result<Vec<HistogramBin>> {
    if bins == 0 || !(eps > 0.0) {
        return invalid("histogram needs at least one bin and a positive ε");
    }
    let points = sample_points(bounds, samples, seed);
    let logs = log_distributions(mech, &points)?;
    let width = 2.0 * eps / bins as f64;
    let mut out: Vec<HistogramBin> = (0..bins)
        .map(|b| HistogramBin { bin_lo: b as f64 * width, bin_hi: (b + 1) as f64 * width, count: 0 })
        .collect();
    out.push(HistogramBin { bin_lo: 2.0 * eps, bin_hi: f64::INFINITY, count: 0 });
    for p in scan(&points, &logs, eps, metric).pairs {
        let b = ((p.2 / width).floor() as usize).min(bins);
        out[b].count += 1;
    }
    Ok(out)
}

/// Writes `bin_lo,bin_hi,count`.
pub fn write_histogram_csv(hist: &[HistogramBin], w: impl Write) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["bin_lo", "bin_hi", "count"])?;
    for b in hist {
        wr.write_record([b.bin_lo.to_string(), b.bin_hi.to_string(), b.count.to_string()])?;
    }
    wr.flush()?;
    Ok(())
}
