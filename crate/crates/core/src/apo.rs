//! Anchor perturbation optimization: the neighbor-constrained anchor LP, its
//! all-pairs relaxation, the coarse representative LP, and the lower bound.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::evaluation::{LossModel, PriorModel};
use crate::geometry::{metric_distance, norm_with_exponent, Cell, Metric, Partition, Point};
use crate::lp::{solve_lp, LinearProgram, LpStatus, FEASIBILITY_TOL};

/// Probability floor applied to solved tables so every log stays finite.
pub const PROBABILITY_FLOOR: f64 = 1e-12;

/// Tolerance on row sums of a stored table.
pub const ROW_SUM_TOL: f64 = 1e-9;

/// Candidate outputs `y_1..y_K`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Point>", into = "Vec<Point>")]
pub struct OutputDomain {
    candidates: Vec<Point>,
}

impl TryFrom<Vec<Point>> for OutputDomain {
    type Error = Error;
    fn try_from(v: Vec<Point>) -> Result<Self> {
        OutputDomain::new(v)
    }
}

impl From<OutputDomain> for Vec<Point> {
    fn from(o: OutputDomain) -> Self {
        o.candidates
    }
}

impl OutputDomain {
    pub fn new(candidates: Vec<Point>) -> Result<Self> {
        if candidates.is_empty() {
            return invalid("output domain needs at least one candidate");
        }
        let dim = candidates[0].dim();
        if candidates.iter().any(|c| c.dim() != dim) {
            return invalid("output candidates differ in dimension");
        }
        for (i, a) in candidates.iter().enumerate() {
            if candidates[..i].contains(a) {
                return invalid(format!("duplicate output candidate {:?}", a.coords()));
            }
        }
        Ok(OutputDomain { candidates })
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn candidates(&self) -> &[Point] {
        &self.candidates
    }

    pub fn ids(&self) -> Vec<String> {
        (0..self.len()).map(|k| format!("y{k}")).collect()
    }
}

/// Row-stochastic table `z(y_k | row_i)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TableRepr", into = "TableRepr")]
pub struct PerturbationTable {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct TableRepr {
    rows: Vec<Vec<f64>>,
}

impl TryFrom<TableRepr> for PerturbationTable {
    type Error = Error;
    fn try_from(r: TableRepr) -> Result<Self> {
        PerturbationTable::new(r.rows)
    }
}

impl From<PerturbationTable> for TableRepr {
    fn from(t: PerturbationTable) -> Self {
        TableRepr { rows: t.to_rows() }
    }
}

impl PerturbationTable {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if cols == 0 || rows.iter().any(|r| r.len() != cols) {
            return invalid("perturbation table must be non-empty and rectangular");
        }
        let n = rows.len();
        Self::from_flat(n, cols, rows.into_iter().flatten().collect())
    }

    pub fn from_flat(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || values.len() != rows * cols {
            return invalid("perturbation table shape mismatch");
        }
        if values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return invalid("perturbation table entries must be finite and non-negative");
        }
        for (i, row) in values.chunks(cols).enumerate() {
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > ROW_SUM_TOL {
                return invalid(format!("row {i} sums to {s}"));
            }
        }
        Ok(PerturbationTable { rows, cols, values })
    }

    pub fn num_rows(&self) -> usize {
        self.rows
    }

    pub fn num_cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.values[row * self.cols..(row + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.values.chunks(self.cols).map(<[f64]>::to_vec).collect()
    }

    pub fn min_entry(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Floors every entry at [`PROBABILITY_FLOOR`] and renormalizes rows.
    pub fn floored(&self) -> PerturbationTable {
        let mut values: Vec<f64> = self.values.iter().map(|v| v.max(PROBABILITY_FLOOR)).collect();
        for row in values.chunks_mut(self.cols) {
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= s);
        }
        PerturbationTable { rows: self.rows, cols: self.cols, values }
    }

    /// `anchor,<output ids>` header, then one row per anchor with 17
    /// significant digits.
    pub fn write_csv(&self, w: impl Write, output_ids: &[String]) -> Result<()> {
        if output_ids.len() != self.cols {
            return invalid("output id count does not match table width");
        }
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["anchor".to_string()];
        header.extend(output_ids.iter().cloned());
        wr.write_record(&header)?;
        for i in 0..self.rows {
            let mut rec = vec![i.to_string()];
            rec.extend(self.row(i).iter().map(|v| format!("{v:.16e}")));
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Reads the CSV form; returns the table and its output ids.
    pub fn read_csv(r: impl Read) -> Result<(Self, Vec<String>)> {
        let mut rd = csv::Reader::from_reader(r);
        let ids: Vec<String> = rd.headers()?.iter().skip(1).map(str::to_string).collect();
        let mut rows = Vec::new();
        for (i, rec) in rd.records().enumerate() {
            let rec = rec?;
            let anchor: usize = rec
                .get(0)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::Malformed(format!("bad anchor id in row {i}")))?;
            if anchor != i {
                return Err(Error::Malformed(format!("row {i} is labelled anchor {anchor}")));
            }
            let row = rec
                .iter()
                .skip(1)
                .map(|s| s.trim().parse::<f64>().map_err(|_| Error::Malformed(format!("bad probability {s:?}"))))
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        let table = PerturbationTable::new(rows)?;
        if table.num_cols() != ids.len() {
            return Err(Error::Malformed("header width does not match rows".into()));
        }
        Ok((table, ids))
    }
}

/// Surrogate objective coefficients `c̃(anchor, y_k)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SurrogateCoefficients {
    anchors: usize,
    outputs: usize,
    values: Vec<f64>,
}

impl SurrogateCoefficients {
    pub fn from_flat(anchors: usize, outputs: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != anchors * outputs || values.iter().any(|v| !(*v >= 0.0)) {
            return invalid("surrogate coefficients must be a non-negative anchors x outputs matrix");
        }
        Ok(SurrogateCoefficients { anchors, outputs, values })
    }

    pub fn num_anchors(&self) -> usize {
        self.anchors
    }

    pub fn num_outputs(&self) -> usize {
        self.outputs
    }

    pub fn get(&self, anchor: usize, output: usize) -> f64 {
        self.values[anchor * self.outputs + output]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    /// Surrogate objective `Σ c̃ · z` of an anchor table.
    pub fn objective(&self, table: &PerturbationTable) -> f64 {
        self.values.iter().zip(&table.values).map(|(c, z)| c * z).sum()
    }
}

/// Which budget-composition surface a [`BudgetVector`] is checked against.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BudgetConvention {
    /// `Σ ε_ℓ^q ≤ (ε/2)^q` with `q = p/(p−1)`: the normalized mechanism meets ε.
    #[default]
    HalfDual,
    /// `Σ ε_ℓ^q ≤ ε^q`: guarantees ε only for the unnormalized interpolant.
    FullDual,
    /// `Σ ε_ℓ^p ≤ ε^p`, the form used by some published sweeps.
    FullPrimal,
}

impl BudgetConvention {
    /// Radius and exponent of the budget surface `Σ ε_ℓ^e ≤ r^e`.
    pub fn surface(&self, eps: f64, metric: Metric) -> (f64, f64) {
        match self {
            BudgetConvention::HalfDual => (eps / 2.0, metric.dual_exponent()),
            BudgetConvention::FullDual => (eps, metric.dual_exponent()),
            BudgetConvention::FullPrimal => (eps, metric.p()),
        }
    }
}

impl std::str::FromStr for BudgetConvention {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "half-dual" => Ok(BudgetConvention::HalfDual),
            "full-dual" => Ok(BudgetConvention::FullDual),
            "full-primal" => Ok(BudgetConvention::FullPrimal),
            _ => invalid(format!("unknown budget convention {s:?}")),
        }
    }
}

/// Per-axis budgets `ε_ℓ` with the total ε they were derived from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetVector {
    pub eps: Vec<f64>,
    pub total_eps: f64,
    pub metric: Metric,
    #[serde(default)]
    pub convention: BudgetConvention,
}

/// Outcome of [`check_budget`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BudgetReport {
    pub passed: bool,
    /// `Σ ε_ℓ^e` (or `max ε_ℓ` when `e = ∞`).
    pub aggregate: f64,
    /// `r^e` (or `r` when `e = ∞`).
    pub limit: f64,
    pub slack: f64,
}

impl BudgetVector {
    pub fn new(eps: Vec<f64>, total_eps: f64, metric: Metric) -> Result<Self> {
        Self::with_convention(eps, total_eps, metric, BudgetConvention::HalfDual)
    }

    pub fn with_convention(eps: Vec<f64>, total_eps: f64, metric: Metric, convention: BudgetConvention) -> Result<Self> {
        if eps.is_empty() || eps.iter().any(|e| !(*e >= 0.0) || !e.is_finite()) {
            return invalid("per-axis budgets must be finite and non-negative");
        }
        if !(total_eps > 0.0) || !total_eps.is_finite() {
            return invalid(format!("total budget must be positive, got {total_eps}"));
        }
        Ok(BudgetVector { eps, total_eps, metric, convention })
    }

    pub fn dim(&self) -> usize {
        self.eps.len()
    }

    /// `‖(ε_ℓ)‖_q`: the log-Lipschitz constant of the unnormalized interpolant in `d_p`.
    pub fn composed(&self) -> f64 {
        norm_with_exponent(&self.eps, self.metric.dual_exponent())
    }
}

/// Checks `eps` against its convention's composition surface.
pub fn check_budget(budget: &BudgetVector) -> BudgetReport {
    const TOL: f64 = 1e-12;
    let (r, e) = budget.convention.surface(budget.total_eps, budget.metric);
    let (aggregate, limit) = if e.is_infinite() {
        (budget.eps.iter().copied().fold(0.0, f64::max), r)
    } else {
        (budget.eps.iter().map(|x| x.powf(e)).sum(), r.powf(e))
    };
    let slack = limit - aggregate;
    BudgetReport { passed: slack >= -TOL, aggregate, limit, slack }
}

/// An LP over a row-stochastic table plus the log-ratio constraints it encodes.
#[derive(Clone, Debug)]
pub struct AnchorProgram {
    pub lp: LinearProgram,
    pub rows: usize,
    pub cols: usize,
    /// `(i, j, b)`: `|ln z(·|i) − ln z(·|j)| ≤ b` for every output.
    pub pairs: Vec<(usize, usize, f64)>,
}

impl AnchorProgram {
    fn new(rows: usize, cols: usize, objective: Vec<f64>, pairs: Vec<(usize, usize, f64)>) -> Result<Self> {
        let mut lp = LinearProgram::new(rows * cols);
        lp.set_objective(objective)?;
        for &(i, j, b) in &pairs {
            let f = tightened(b).exp();
            for k in 0..cols {
                lp.add_le(vec![(i * cols + k, 1.0), (j * cols + k, -f)], 0.0)?;
                lp.add_le(vec![(j * cols + k, 1.0), (i * cols + k, -f)], 0.0)?;
            }
        }
        for i in 0..rows {
            lp.add_eq((0..cols).map(|k| (i * cols + k, 1.0)).collect(), 1.0)?;
        }
        Ok(AnchorProgram { lp, rows, cols, pairs })
    }

    /// Largest `|ln z_i − ln z_j| − b` over the encoded pairs (≤ 0 when satisfied).
    pub fn max_log_excess(&self, table: &PerturbationTable) -> f64 {
        let mut worst = f64::NEG_INFINITY;
        for &(i, j, b) in &self.pairs {
            for k in 0..self.cols {
                let d = (table.get(i, k).ln() - table.get(j, k).ln()).abs();
                worst = worst.max(d - b);
            }
        }
        worst
    }
}

/// Log-space margin kept below each pair bound by the LP and the repair, so
/// that the final row renormalization cannot push a ratio over its bound.
pub const LOG_MARGIN: f64 = 1e-9;

fn tightened(b: f64) -> f64 {
    b - LOG_MARGIN.min(b / 2.0)
}

/// `c̃(x̂_j, y_k) = Σ_x w_{γ(j)}(x) · p(x) · L(x, y_k)` over the prior sample points.
pub fn surrogate_coefficients(
    partition: &Partition,
    prior: &PriorModel,
    loss: &LossModel,
    outputs: &OutputDomain,
) -> Result<SurrogateCoefficients> {
    loss.check_shape(prior, outputs)?;
    let k = outputs.len();
    let mut values = vec![0.0; partition.num_anchors() * k];
    for (i, (x, mass)) in prior.iter().enumerate() {
        let (cell, weights) = partition.locate_with_weights(x)?;
        for (mask, &anchor) in partition.cell_corners(cell).iter().enumerate() {
            let w = weights.corner_weights[mask] * mass;
            if w == 0.0 {
                continue;
            }
            for (c, l) in values[anchor * k..(anchor + 1) * k].iter_mut().zip(loss.row(i)) {
                *c += w * l;
            }
        }
    }
    SurrogateCoefficients::from_flat(partition.num_anchors(), k, values)
}

fn check_program_shape(partition: &Partition, outputs: &OutputDomain, coeffs: &SurrogateCoefficients) -> Result<()> {
    if coeffs.num_anchors() != partition.num_anchors() || coeffs.num_outputs() != outputs.len() {
        return invalid("surrogate coefficients do not match the partition and outputs");
    }
    Ok(())
}

/// Neighbor-constrained anchor LP with per-axis budgets.
pub fn build_approx_apo(
    partition: &Partition,
    outputs: &OutputDomain,
    budget: &BudgetVector,
    coeffs: &SurrogateCoefficients,
) -> Result<AnchorProgram> {
    check_program_shape(partition, outputs, coeffs)?;
    if budget.dim() != partition.dim() {
        return invalid(format!("budget has {} axes, partition {}", budget.dim(), partition.dim()));
    }
    let report = check_budget(budget);
    if !report.passed {
        return invalid(format!(
            "budget {:?} violates composition: {} > {}",
            budget.eps, report.aggregate, report.limit
        ));
    }
    let pairs = partition
        .axis_neighbors()
        .into_iter()
        .map(|n| (n.lower, n.upper, budget.eps[n.axis] * n.gap))
        .collect();
    AnchorProgram::new(partition.num_anchors(), outputs.len(), coeffs.as_slice().to_vec(), pairs)
}

/// All-pairs anchor LP enforcing `e^{ε d_p}` directly between anchors.
pub fn build_aipo_relaxed(
    partition: &Partition,
    outputs: &OutputDomain,
    eps_total: f64,
    metric: Metric,
    coeffs: &SurrogateCoefficients,
) -> Result<AnchorProgram> {
    check_program_shape(partition, outputs, coeffs)?;
    check_eps(eps_total)?;
    let pairs = all_pairs(partition.anchors(), eps_total, metric);
    AnchorProgram::new(partition.num_anchors(), outputs.len(), coeffs.as_slice().to_vec(), pairs)
}

/// Representative-point LP: exact expected loss over the representatives
/// under all-pairs mDP constraints.
pub fn build_coarse_lp(
    representatives: &[Point],
    masses: &[f64],
    outputs: &OutputDomain,
    eps_total: f64,
    metric: Metric,
    loss: &[Vec<f64>],
) -> Result<AnchorProgram> {
    check_eps(eps_total)?;
    let r = representatives.len();
    let k = outputs.len();
    if r == 0 || masses.len() != r || loss.len() != r || loss.iter().any(|l| l.len() != k) {
        return invalid("representatives, masses and loss rows must align");
    }
    for (i, a) in representatives.iter().enumerate() {
        if representatives[..i].contains(a) {
            return invalid(format!("duplicate representative {:?}", a.coords()));
        }
    }
    let objective = (0..r).flat_map(|i| loss[i].iter().map(move |l| masses[i] * l)).collect();
    AnchorProgram::new(r, k, objective, all_pairs(representatives, eps_total, metric))
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0) || !eps.is_finite() {
        return invalid(format!("ε must be positive and finite, got {eps}"));
    }
    Ok(())
}

fn all_pairs(points: &[Point], eps: f64, metric: Metric) -> Vec<(usize, usize, f64)> {
    let mut pairs = Vec::with_capacity(points.len() * points.len().saturating_sub(1) / 2);
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            pairs.push((i, j, eps * metric_distance(points[i].coords(), points[j].coords(), metric)));
        }
    }
    pairs
}

/// Solves an anchor program and repairs the result into a strictly positive
/// table that meets every encoded log-ratio bound.
///
/// Repair: clamp solver noise, floor at [`PROBABILITY_FLOOR`], raise entries
/// to the log-Lipschitz closure of the (tightened) pair bounds, renormalize rows.
pub fn solve_approx_apo(program: &AnchorProgram) -> Result<PerturbationTable> {
    let sol = solve_lp(&program.lp)?;
    match sol.status {
        LpStatus::Optimal => {}
        LpStatus::Infeasible => return Err(Error::Solver("anchor program reported infeasible".into())),
        LpStatus::Unbounded => return Err(Error::Solver("anchor program reported unbounded".into())),
    }
    let (rows, cols) = (program.rows, program.cols);
    let mut values: Vec<f64> = sol.values.iter().map(|v| v.max(0.0)).collect();
    for (i, row) in values.chunks(cols).enumerate() {
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() >= FEASIBILITY_TOL {
            return Err(Error::Solver(format!("row {i} of the solved table sums to {s}")));
        }
    }
    values.iter_mut().for_each(|v| *v = v.max(PROBABILITY_FLOOR));
    log_closure(&mut values, rows, cols, &program.pairs);
    for row in values.chunks_mut(cols) {
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= s);
    }
    let table = PerturbationTable::from_flat(rows, cols, values)?;
    let excess = program.max_log_excess(&table);
    if excess > 0.0 {
        log::warn!("repaired table exceeds a pair bound by {excess:e}");
    }
    Ok(table)
}

/// Per column, replaces `v_i = −ln z_i` by `min_j (v_j + dist(i, j))` over the
/// pair graph. Entries only grow, and afterwards every pair bound holds.
fn log_closure(values: &mut [f64], rows: usize, cols: usize, pairs: &[(usize, usize, f64)]) {
    let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); rows];
    for &(i, j, b) in pairs {
        adj[i].push((j, tightened(b)));
        adj[j].push((i, tightened(b)));
    }
    for k in 0..cols {
        let mut dist: Vec<f64> = (0..rows).map(|i| -values[i * cols + k].ln()).collect();
        let mut heap: BinaryHeap<HeapItem> = dist.iter().enumerate().map(|(i, d)| HeapItem(*d, i)).collect();
        while let Some(HeapItem(d, i)) = heap.pop() {
            if d > dist[i] {
                continue;
            }
            for &(j, b) in &adj[i] {
                let nd = d + b;
                if nd < dist[j] {
                    dist[j] = nd;
                    heap.push(HeapItem(nd, j));
                }
            }
        }
        for i in 0..rows {
            let z = (-dist[i]).exp();
            if z > values[i * cols + k] {
                values[i * cols + k] = z;
            }
        }
    }
}

#[derive(PartialEq)]
struct HeapItem(f64, usize);

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Largest ℓp distance between two orthotopes: per-axis farthest-face gaps.
pub fn max_cell_distance(a: &Cell, b: &Cell, metric: Metric) -> f64 {
    let gaps: Vec<f64> = (0..a.dim())
        .map(|l| (b.upper(l) - a.base[l]).abs().max((a.upper(l) - b.base[l]).abs()))
        .collect();
    metric.norm(&gaps)
}

/// Relaxed cell-level LP: variables `u_m(y_k)` with `Σ_k u_m = μ_m`,
/// `u_m / μ_m ≤ e^{ε d̂(m, m')} u_{m'} / μ_{m'}`, objective `Σ L̄_m · u_m`.
/// Returns the optimal value.
pub fn lower_bound_program(lbar: &[Vec<f64>], measures: &[f64], distances: &[Vec<f64>], eps: f64) -> Result<f64> {
    let m = lbar.len();
    let k = lbar.first().map_or(0, Vec::len);
    if m == 0 || k == 0 || measures.len() != m || distances.len() != m || lbar.iter().any(|r| r.len() != k) {
        return invalid("lower-bound inputs must be non-empty and aligned");
    }
    if measures.iter().any(|v| !(*v > 0.0)) || !(eps >= 0.0) {
        return invalid("cell measures must be positive and ε non-negative");
    }
    let mut lp = LinearProgram::new(m * k);
    lp.set_objective(lbar.iter().flatten().copied().collect())?;
    for a in 0..m {
        for b in a + 1..m {
            let f = (eps * distances[a][b]).exp();
            for y in 0..k {
                lp.add_le(vec![(a * k + y, measures[b]), (b * k + y, -f * measures[a])], 0.0)?;
                lp.add_le(vec![(b * k + y, measures[a]), (a * k + y, -f * measures[b])], 0.0)?;
            }
        }
    }
    for a in 0..m {
        lp.add_eq((0..k).map(|y| (a * k + y, 1.0)).collect(), measures[a])?;
    }
    let sol = solve_lp(&lp)?;
    if sol.status != LpStatus::Optimal {
        return Err(Error::Solver(format!("lower-bound program ended {:?}", sol.status)));
    }
    Ok(sol.objective_value)
}

/// Lower bound on the expected loss of any `(ε, d_p)`-private mechanism,
/// evaluated on the prior's sample points. Each cell is weighted by its
/// sample count; cells without samples carry no loss and are dropped.
pub fn lower_bound(
    partition: &Partition,
    outputs: &OutputDomain,
    eps_total: f64,
    metric: Metric,
    loss: &LossModel,
    prior: &PriorModel,
) -> Result<f64> {
    check_eps(eps_total)?;
    loss.check_shape(prior, outputs)?;
    let k = outputs.len();
    let mut lbar = vec![vec![f64::INFINITY; k]; partition.num_cells()];
    let mut counts = vec![0usize; partition.num_cells()];
    for (i, (x, mass)) in prior.iter().enumerate() {
        let c = partition.locate_cell(x)?;
        counts[c] += 1;
        for (lb, l) in lbar[c].iter_mut().zip(loss.row(i)) {
            *lb = lb.min(mass * l);
        }
    }
    let used: Vec<usize> = (0..partition.num_cells()).filter(|c| counts[*c] > 0).collect();
    let cells = partition.cells();
    let distances: Vec<Vec<f64>> = used
        .iter()
        .map(|a| used.iter().map(|b| max_cell_distance(&cells[*a], &cells[*b], metric)).collect())
        .collect();
    let measures: Vec<f64> = used.iter().map(|c| counts[*c] as f64).collect();
    let lbar: Vec<Vec<f64>> = used.iter().map(|c| lbar[*c].clone()).collect();
    lower_bound_program(&lbar, &measures, &distances, eps_total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BoxDomain;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pt(c: &[f64]) -> Point {
        Point::new(c.to_vec()).unwrap()
    }

    fn outputs(k: usize) -> OutputDomain {
        OutputDomain::new((0..k).map(|i| pt(&[i as f64])).collect()).unwrap()
    }

    fn unit_partition(n: usize, cells: usize) -> Partition {
        Partition::new(BoxDomain::unit(n), vec![cells; n]).unwrap()
    }

    #[test]
    fn output_domain_rejects_duplicates() {
        assert!(OutputDomain::new(vec![]).is_err());
        assert!(OutputDomain::new(vec![pt(&[1.0]), pt(&[1.0])]).is_err());
    }

    #[test]
    fn table_validation_and_csv_round_trip() {
        assert!(PerturbationTable::new(vec![vec![0.5, 0.6]]).is_err());
        assert!(PerturbationTable::new(vec![vec![-0.1, 1.1]]).is_err());
        let t = PerturbationTable::new(vec![vec![0.1, 0.9], vec![1.0 / 3.0, 2.0 / 3.0]]).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf, &["a".into(), "b".into()]).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("anchor,a,b\n0,1.0000000000000001e-1,"));
        let (back, ids) = PerturbationTable::read_csv(&buf[..]).unwrap();
        assert_eq!(ids, vec!["a", "b"]);
        assert_eq!(back, t);
        let json = serde_json::to_string(&t).unwrap();
        assert_eq!(serde_json::from_str::<PerturbationTable>(&json).unwrap(), t);
    }

    #[test]
    fn surrogate_examples() {
        let p = unit_partition(2, 1);
        let outs = OutputDomain::new(vec![pt(&[0.0, 0.0])]).unwrap();
        let base = PriorModel::new(vec![pt(&[0.0, 0.0])], vec![1.0]).unwrap();
        let c = surrogate_coefficients(&p, &base, &LossModel::from_matrix(vec![vec![5.0]]).unwrap(), &outs).unwrap();
        assert_eq!(c.as_slice(), &[5.0, 0.0, 0.0, 0.0]);

        let center = PriorModel::new(vec![pt(&[0.5, 0.5])], vec![1.0]).unwrap();
        let c = surrogate_coefficients(&p, &center, &LossModel::from_matrix(vec![vec![4.0]]).unwrap(), &outs).unwrap();
        assert_eq!(c.as_slice(), &[1.0; 4]);

        let two = PriorModel::new(vec![pt(&[0.0, 0.0]), pt(&[1.0, 1.0])], vec![0.5, 0.5]).unwrap();
        let l = LossModel::from_matrix(vec![vec![2.0], vec![2.0]]).unwrap();
        let c = surrogate_coefficients(&p, &two, &l, &outs).unwrap();
        assert_eq!(c.as_slice(), &[1.0, 0.0, 0.0, 1.0]);

        let outside = PriorModel::new(vec![pt(&[2.0, 0.0])], vec![1.0]).unwrap();
        assert!(matches!(
            surrogate_coefficients(&p, &outside, &LossModel::from_matrix(vec![vec![1.0]]).unwrap(), &outs),
            Err(Error::OutOfDomain(_))
        ));
    }

    #[test]
    fn approx_apo_row_counts() {
        let p = unit_partition(2, 2);
        let outs = outputs(3);
        let coeffs = SurrogateCoefficients::from_flat(9, 3, vec![1.0; 27]).unwrap();
        let b = BudgetVector::new(vec![0.3, 0.3], 1.0, Metric::L2).unwrap();
        let prog = build_approx_apo(&p, &outs, &b, &coeffs).unwrap();
        assert_eq!(prog.lp.num_inequalities(), 72);
        assert_eq!(prog.lp.num_equalities(), 9);
        let over = BudgetVector::new(vec![0.5, 0.5], 1.0, Metric::L2).unwrap();
        assert!(matches!(build_approx_apo(&p, &outs, &over, &coeffs), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn approx_apo_zero_budget_forces_equal_rows() {
        let p = unit_partition(1, 1);
        let coeffs = SurrogateCoefficients::from_flat(2, 2, vec![3.0, 1.0, 0.5, 1.5]).unwrap();
        let b = BudgetVector::new(vec![0.0], 1.0, Metric::L1).unwrap();
        let prog = build_approx_apo(&p, &outputs(2), &b, &coeffs).unwrap();
        let t = solve_approx_apo(&prog).unwrap();
        // column sums 3.5 vs 2.5: all mass on column 1
        assert_abs_diff_eq!(t.get(0, 1), 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(t.get(1, 1), 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(coeffs.objective(&t), 2.5, epsilon = 1e-9);
    }

    #[test]
    fn approx_apo_large_budget_picks_row_argmins() {
        let p = Partition::new(BoxDomain::new(vec![0.0], vec![1.0]).unwrap(), vec![1]).unwrap();
        let coeffs = SurrogateCoefficients::from_flat(2, 2, vec![3.0, 1.0, 0.5, 1.5]).unwrap();
        // p = 1: ε_1 ≤ ε/2; e^{ε_1} = e^40 dwarfs the floor ratio
        let b = BudgetVector::new(vec![40.0], 80.0, Metric::L1).unwrap();
        let t = solve_approx_apo(&build_approx_apo(&p, &outputs(2), &b, &coeffs).unwrap()).unwrap();
        assert_abs_diff_eq!(t.get(0, 1), 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(t.get(1, 0), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn aipo_relaxed_pair_count() {
        let p = unit_partition(2, 2);
        let coeffs = SurrogateCoefficients::from_flat(9, 2, vec![1.0; 18]).unwrap();
        let prog = build_aipo_relaxed(&p, &outputs(2), 1.0, Metric::L2, &coeffs).unwrap();
        assert_eq!(prog.lp.num_inequalities(), 72 * 2);
        assert_eq!(prog.pairs.len(), 36);
    }

    #[test]
    fn coarse_lp_examples() {
        let outs = outputs(2);
        let one = build_coarse_lp(&[pt(&[0.0])], &[1.0], &outs, 1.0, Metric::L1, &[vec![2.0, 1.0]]).unwrap();
        assert_eq!(one.lp.num_inequalities(), 0);
        let t = solve_approx_apo(&one).unwrap();
        assert_abs_diff_eq!(t.get(0, 1), 1.0, epsilon = 1e-9);

        let reps = [pt(&[0.0]), pt(&[1.0])];
        let loss = [vec![0.0, 1.0], vec![1.0, 0.0]];
        let prog = build_coarse_lp(&reps, &[0.5, 0.5], &outs, 2f64.ln(), Metric::L1, &loss).unwrap();
        let sol = solve_lp(&prog.lp).unwrap();
        assert_abs_diff_eq!(sol.objective_value, 1.0 / 3.0, epsilon = 1e-9);
        let t = solve_approx_apo(&prog).unwrap();
        assert_abs_diff_eq!(t.get(0, 0), 2.0 / 3.0, epsilon = 1e-9);
        assert_abs_diff_eq!(t.get(1, 1), 2.0 / 3.0, epsilon = 1e-9);

        let tiny = build_coarse_lp(&reps, &[0.5, 0.5], &outs, 1e-12, Metric::L1, &loss).unwrap();
        let t = solve_approx_apo(&tiny).unwrap();
        assert_abs_diff_eq!(t.get(0, 0), t.get(1, 0), epsilon = 1e-9);

        assert!(build_coarse_lp(&[pt(&[0.0]), pt(&[0.0])], &[0.5, 0.5], &outs, 1.0, Metric::L1, &loss).is_err());
    }

    #[test]
    fn lower_bound_examples() {
        let lb = lower_bound_program(&[vec![1.0, 3.0]], &[1.0], &[vec![0.0]], 1.0).unwrap();
        assert_abs_diff_eq!(lb, 1.0, epsilon = 1e-9);
        let lb = lower_bound_program(
            &[vec![1.0, 3.0], vec![3.0, 1.0]],
            &[1.0, 1.0],
            &[vec![0.0, 1.0], vec![1.0, 0.0]],
            0.0,
        )
        .unwrap();
        assert_abs_diff_eq!(lb, 4.0, epsilon = 1e-9);
    }

    #[test]
    fn max_cell_distance_uses_farthest_corners() {
        let p = unit_partition(2, 2);
        let cells = p.cells();
        assert_abs_diff_eq!(max_cell_distance(&cells[0], &cells[0], Metric::L1), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(max_cell_distance(&cells[0], &cells[3], Metric::L2), 2f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(max_cell_distance(&cells[0], &cells[1], Metric::LINF), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn budget_examples() {
        let half = 1.0 / (2.0 * 2f64.sqrt());
        let r = check_budget(&BudgetVector::new(vec![half, half], 1.0, Metric::L2).unwrap());
        assert!(r.passed);
        assert_abs_diff_eq!(r.slack, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r.limit, 0.25, epsilon = 1e-15);
        assert!(check_budget(&BudgetVector::new(vec![0.5, 0.5], 1.0, Metric::L1).unwrap()).passed);
        let r = check_budget(&BudgetVector::new(vec![0.5, 0.5], 1.0, Metric::L2).unwrap());
        assert!(!r.passed);
        assert_abs_diff_eq!(r.aggregate, 0.5, epsilon = 1e-15);
        // p = ∞: Σ ε_ℓ ≤ ε/2
        assert!(check_budget(&BudgetVector::new(vec![0.25, 0.25], 1.0, Metric::LINF).unwrap()).passed);
        assert!(!check_budget(&BudgetVector::new(vec![0.3, 0.25], 1.0, Metric::LINF).unwrap()).passed);
        // alternate surfaces
        let full = BudgetVector::with_convention(vec![0.5, 0.5], 1.0, Metric::L2, BudgetConvention::FullDual).unwrap();
        assert!(check_budget(&full).passed);
        let primal = BudgetVector::with_convention(vec![0.6, 0.6], 1.0, Metric::L1, BudgetConvention::FullPrimal).unwrap();
        assert!(!check_budget(&primal).passed);
    }

    /// Random small instance: partition, coefficients and a half-dual budget.
    fn random_instance(seed: u64, n: usize) -> (Partition, OutputDomain, SurrogateCoefficients, BudgetVector, f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let counts: Vec<usize> = (0..n).map(|_| rng.random_range(1..=2)).collect();
        let upper: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
        let p = Partition::new(BoxDomain::new(vec![0.0; n], upper).unwrap(), counts).unwrap();
        let k = rng.random_range(2..=3);
        let coeffs: Vec<f64> = (0..p.num_anchors() * k).map(|_| rng.random_range(0.0..1.0)).collect();
        let eps = rng.random_range(0.2..3.0);
        let metric = [Metric::L1, Metric::L2, Metric::LINF][rng.random_range(0..3)];
        let share: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
        let q = metric.dual_exponent();
        let scale = (eps / 2.0) / norm_with_exponent(&share, q);
        let budget = BudgetVector::new(share.iter().map(|s| s * scale * (1.0 - 1e-9)).collect(), eps, metric).unwrap();
        let coeffs = SurrogateCoefficients::from_flat(p.num_anchors(), k, coeffs).unwrap();
        (p, outputs(k), coeffs, budget, eps)
    }

    fn uniform(rows: usize, cols: usize) -> PerturbationTable {
        PerturbationTable::from_flat(rows, cols, vec![1.0 / cols as f64; rows * cols]).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn solved_tables_meet_neighbor_and_chain_bounds(seed in 0u64..10_000, n in 1usize..=3) {
            let (p, outs, coeffs, budget, _) = random_instance(seed, n);
            let prog = build_approx_apo(&p, &outs, &budget, &coeffs).unwrap();
            let t = solve_approx_apo(&prog).unwrap();
            prop_assert!(prog.max_log_excess(&t) <= 1e-12);
            prop_assert!(coeffs.objective(&t) <= coeffs.objective(&uniform(t.num_rows(), t.num_cols())) + 1e-7);
            let anchors = p.anchors();
            for i in 0..anchors.len() {
                for j in 0..anchors.len() {
                    let bound: f64 = (0..n).map(|l| budget.eps[l] * (anchors[i][l] - anchors[j][l]).abs()).sum();
                    for k in 0..outs.len() {
                        prop_assert!((t.get(i, k).ln() - t.get(j, k).ln()).abs() <= bound + 1e-6);
                    }
                }
            }
        }

        #[test]
        fn objective_monotone_in_budget(seed in 0u64..10_000) {
            let (p, outs, coeffs, budget, _) = random_instance(seed, 2);
            let small = BudgetVector::new(budget.eps.iter().map(|e| e * 0.5).collect(), budget.total_eps, budget.metric).unwrap();
            let a = solve_lp(&build_approx_apo(&p, &outs, &small, &coeffs).unwrap().lp).unwrap().objective_value;
            let b = solve_lp(&build_approx_apo(&p, &outs, &budget, &coeffs).unwrap().lp).unwrap().objective_value;
            prop_assert!(b <= a + 1e-7);
        }

        #[test]
        fn relaxed_objective_at_most_approx(seed in 0u64..10_000) {
            let (p, outs, coeffs, budget, eps) = random_instance(seed, 2);
            let a = solve_lp(&build_approx_apo(&p, &outs, &budget, &coeffs).unwrap().lp).unwrap().objective_value;
            let r = solve_lp(&build_aipo_relaxed(&p, &outs, eps, budget.metric, &coeffs).unwrap().lp).unwrap().objective_value;
            prop_assert!(r <= a + 1e-7);
        }

        #[test]
        fn approx_objective_at_least_lower_bound(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = unit_partition(2, 2);
            let outs = OutputDomain::new((0..3).map(|i| pt(&[i as f64 * 0.4, 0.3])).collect()).unwrap();
            let pts: Vec<Point> = (0..20).map(|_| pt(&[rng.random_range(0.0..=1.0), rng.random_range(0.0..=1.0)])).collect();
            let prior = PriorModel::from_weights(pts.clone(), (0..20).map(|_| rng.random_range(0.1..1.0)).collect()).unwrap();
            let loss = LossModel::from_matrix(
                pts.iter().map(|x| outs.candidates().iter().map(|y| metric_distance(x.coords(), y.coords(), Metric::L2)).collect()).collect(),
            ).unwrap();
            let eps = rng.random_range(0.2..4.0);
            let coeffs = surrogate_coefficients(&p, &prior, &loss, &outs).unwrap();
            let e = eps / 2.0 / 2f64.sqrt();
            let budget = BudgetVector::new(vec![e, e], eps, Metric::L2).unwrap();
            let t = solve_approx_apo(&build_approx_apo(&p, &outs, &budget, &coeffs).unwrap()).unwrap();
            let lb = lower_bound(&p, &outs, eps, Metric::L2, &loss, &prior).unwrap();
            prop_assert!(coeffs.objective(&t) >= lb - 1e-7);
        }

        #[test]
        fn surrogate_is_exact_when_samples_are_anchors(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = unit_partition(2, 2);
            let k = 3;
            let pts: Vec<Point> = p.anchors().to_vec();
            let prior = PriorModel::from_weights(pts.clone(), (0..pts.len()).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
            let loss = LossModel::from_matrix((0..pts.len()).map(|_| (0..k).map(|_| rng.random_range(0.0..5.0)).collect()).collect()).unwrap();
            let coeffs = surrogate_coefficients(&p, &prior, &loss, &outputs(k)).unwrap();
            let rows: Vec<Vec<f64>> = (0..pts.len()).map(|_| {
                let r: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..1.0)).collect();
                let s: f64 = r.iter().sum();
                r.into_iter().map(|v| v / s).collect()
            }).collect();
            let t = PerturbationTable::new(rows).unwrap();
            let exact: f64 = (0..pts.len()).map(|i| prior.masses()[i] * (0..k).map(|y| t.get(i, y) * loss.loss(i, y)).sum::<f64>()).sum();
            prop_assert!((coeffs.objective(&t) - exact).abs() <= 1e-12);
        }
    }
}
