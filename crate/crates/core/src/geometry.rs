//! Secret-domain geometry: points, `ℓp` metrics, the orthotope partition with
//! its lattice of corner anchors, and the per-cell corner weights used by
//! log-convex interpolation.
//!
//! Cells and anchors are laid out on a regular lattice. Multi-indices are
//! flattened with axis 0 varying fastest. A corner of a cell is addressed by a
//! bitmask `γ` whose bit `ℓ` selects the upper face along axis `ℓ`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Largest supported dimension; corner masks are `usize` bitsets.
pub const MAX_DIM: usize = 16;

/// A record in the secret domain (or an output candidate in the same space).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Point(Vec<f64>);

impl Point {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return invalid("a point needs at least one coordinate");
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return invalid(format!("non-finite coordinate in {coords:?}"));
        }
        Ok(Point(coords))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Index<usize> for Point {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl From<[f64; 2]> for Point {
    fn from(c: [f64; 2]) -> Self {
        Point(c.to_vec())
    }
}

/// The `ℓp` metric, `p ∈ [1, ∞]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MetricRepr", into = "MetricRepr")]
pub struct Metric {
    p: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum MetricRepr {
    Finite(f64),
    Named(String),
}

impl TryFrom<MetricRepr> for Metric {
    type Error = Error;

    fn try_from(r: MetricRepr) -> Result<Self> {
        match r {
            MetricRepr::Finite(p) => Metric::new(p),
            MetricRepr::Named(s) => s.parse(),
        }
    }
}

impl From<Metric> for MetricRepr {
    fn from(m: Metric) -> Self {
        if m.is_infinite() {
            MetricRepr::Named("inf".into())
        } else {
            MetricRepr::Finite(m.p)
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "inf" | "infinity" | "max" => Ok(Metric::LINF),
            other => other
                .parse::<f64>()
                .map_err(|_| Error::InvalidArgument(format!("unparsable metric exponent {s:?}")))
                .and_then(Metric::new),
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.is_infinite() {
            f.write_str("inf")
        } else {
            write!(f, "{}", self.p)
        }
    }
}

impl Metric {
    pub const L1: Metric = Metric { p: 1.0 };
    pub const L2: Metric = Metric { p: 2.0 };
    pub const LINF: Metric = Metric { p: f64::INFINITY };

    pub fn new(p: f64) -> Result<Self> {
        if p.is_nan() || p < 1.0 {
            return invalid(format!("metric exponent must satisfy p >= 1, got {p}"));
        }
        Ok(Metric { p })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn is_infinite(&self) -> bool {
        self.p.is_infinite()
    }

    /// Hölder dual exponent `q = p/(p-1)`: infinite for `p = 1`, one for `p = ∞`.
    pub fn dual_exponent(&self) -> f64 {
        if self.p == 1.0 {
            f64::INFINITY
        } else if self.is_infinite() {
            1.0
        } else {
            self.p / (self.p - 1.0)
        }
    }

    /// `ℓp` norm of a difference vector.
    pub fn norm(&self, diff: &[f64]) -> f64 {
        norm_with_exponent(diff, self.p)
    }
}

/// `(Σ |v_i|^r)^{1/r}`, with `r = ∞` meaning the max-norm.
pub(crate) fn norm_with_exponent(v: &[f64], r: f64) -> f64 {
    if r.is_infinite() {
        v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
    } else if r == 1.0 {
        v.iter().map(|x| x.abs()).sum()
    } else if r == 2.0 {
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    } else {
        v.iter().map(|x| x.abs().powf(r)).sum::<f64>().powf(1.0 / r)
    }
}

/// `d_p(a, b)`.
pub fn lp_distance(a: &Point, b: &Point, metric: Metric) -> Result<f64> {
    if a.dim() != b.dim() {
        return invalid(format!("dimension mismatch: {} vs {}", a.dim(), b.dim()));
    }
    Ok(metric_distance(a.coords(), b.coords(), metric))
}

/// Unchecked distance on raw coordinate slices of equal length.
pub(crate) fn metric_distance(a: &[f64], b: &[f64], metric: Metric) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    match metric.p {
        p if p == 2.0 => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
        p if p == 1.0 => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
        p if p.is_infinite() => a.iter().zip(b).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs())),
        p => a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs().powf(p))
            .sum::<f64>()
            .powf(1.0 / p),
    }
}

/// Axis-aligned bounding box of the domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxDomain {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return invalid("box bounds must be non-empty and of equal dimension");
        }
        if lower.len() > MAX_DIM {
            return invalid(format!("at most {MAX_DIM} dimensions are supported"));
        }
        for (l, u) in lower.iter().zip(&upper) {
            if !l.is_finite() || !u.is_finite() || u <= l {
                return invalid(format!("degenerate axis bounds [{l}, {u}]"));
            }
        }
        Ok(BoxDomain { lower, upper })
    }

    /// The box `[0, 1]^n`.
    pub fn unit(n: usize) -> Self {
        BoxDomain { lower: vec![0.0; n], upper: vec![1.0; n] }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter().zip(self.lower.iter().zip(&self.upper)).all(|(v, (l, u))| *l <= *v && *v <= *u)
    }

    pub fn extent(&self, axis: usize) -> f64 {
        self.upper[axis] - self.lower[axis]
    }
}

/// One `N`-orthotope of the partition.
#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub base: Point,
    pub sides: Vec<f64>,
}

impl Cell {
    pub fn new(base: Point, sides: Vec<f64>) -> Result<Self> {
        if sides.len() != base.dim() {
            return invalid("cell side vector and base corner differ in dimension");
        }
        if sides.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return invalid(format!("cell sides must be positive, got {sides:?}"));
        }
        Ok(Cell { base, sides })
    }

    pub fn dim(&self) -> usize {
        self.sides.len()
    }

    pub fn upper(&self, axis: usize) -> f64 {
        self.base[axis] + self.sides[axis]
    }

    pub fn contains(&self, x: &Point) -> bool {
        x.dim() == self.dim()
            && (0..self.dim()).all(|l| self.base[l] <= x[l] && x[l] <= self.upper(l))
    }

    /// The corner `base + γ ⊙ Δ`.
    pub fn corner(&self, mask: usize) -> Point {
        Point(
            (0..self.dim())
                .map(|l| if mask >> l & 1 == 1 { self.upper(l) } else { self.base[l] })
                .collect(),
        )
    }

    pub fn volume(&self) -> f64 {
        self.sides.iter().product()
    }
}

/// Position of a point inside its cell.
#[derive(Clone, Debug, PartialEq)]
pub struct CellWeights {
    /// `λ_ℓ = (upper_ℓ - x_ℓ) / Δ_ℓ`; `1` at the base face, `0` at the upper face.
    pub lambda: Vec<f64>,
    /// `w(γ)` indexed by corner mask.
    pub corner_weights: Vec<f64>,
}

impl CellWeights {
    pub fn from_lambda(lambda: Vec<f64>) -> Self {
        let n = lambda.len();
        let corner_weights = (0..1usize << n)
            .map(|mask| {
                lambda
                    .iter()
                    .enumerate()
                    .map(|(l, lam)| if mask >> l & 1 == 1 { 1.0 - lam } else { *lam })
                    .product()
            })
            .collect();
        CellWeights { lambda, corner_weights }
    }

    /// `w(γ)` for an explicit binary vector.
    pub fn weight(&self, gamma: &[u8]) -> f64 {
        let mask = gamma
            .iter()
            .enumerate()
            .fold(0usize, |m, (l, g)| if *g != 0 { m | 1 << l } else { m });
        self.corner_weights[mask]
    }
}

/// Corner weights of `x` inside `cell`.
pub fn interpolation_weights(cell: &Cell, x: &Point) -> Result<CellWeights> {
    if !cell.contains(x) {
        return invalid(format!("point {:?} is not inside the cell at {:?}", x.coords(), cell.base.coords()));
    }
    let lambda = (0..cell.dim())
        .map(|l| ((cell.upper(l) - x[l]) / cell.sides[l]).clamp(0.0, 1.0))
        .collect();
    Ok(CellWeights::from_lambda(lambda))
}

/// A pair of lattice-adjacent anchors differing along one axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AxisNeighbor {
    pub lower: usize,
    pub upper: usize,
    pub axis: usize,
    pub gap: f64,
}

/// Regular orthotope partition of a box with its deduplicated anchor lattice.
#[derive(Clone, Debug)]
pub struct Partition {
    bounds: BoxDomain,
    counts: Vec<usize>,
    deltas: Vec<f64>,
    cells: Vec<Cell>,
    anchors: Vec<Point>,
    cell_corners: Vec<Vec<usize>>,
}

/// Serializable description from which a [`Partition`] is rebuilt.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub bounds: BoxDomain,
    pub cells_per_axis: Vec<usize>,
}

/// Builds the uniform grid partition of `bounds` with `cells_per_axis` cells.
pub fn partition_domain(bounds: &BoxDomain, cells_per_axis: &[usize]) -> Result<Partition> {
    Partition::new(bounds.clone(), cells_per_axis.to_vec())
}

impl Partition {
    pub fn new(bounds: BoxDomain, counts: Vec<usize>) -> Result<Self> {
        let bounds = BoxDomain::new(bounds.lower, bounds.upper)?;
        let n = bounds.dim();
        if counts.len() != n {
            return invalid(format!("expected {n} cell counts, got {}", counts.len()));
        }
        if counts.iter().any(|c| *c == 0) {
            return invalid("cell counts must be at least 1");
        }
        let deltas: Vec<f64> = (0..n).map(|l| bounds.extent(l) / counts[l] as f64).collect();
        let lattice_coord = |axis: usize, i: usize| -> f64 {
            if i == counts[axis] {
                bounds.upper[axis]
            } else {
                bounds.lower[axis] + i as f64 * deltas[axis]
            }
        };

        let anchor_dims: Vec<usize> = counts.iter().map(|c| c + 1).collect();
        let anchors: Vec<Point> = MultiIndex::new(&anchor_dims)
            .map(|idx| Point(idx.iter().enumerate().map(|(l, i)| lattice_coord(l, *i)).collect()))
            .collect();

        let mut cells = Vec::new();
        let mut cell_corners = Vec::new();
        for idx in MultiIndex::new(&counts) {
            let base: Vec<f64> = idx.iter().enumerate().map(|(l, i)| lattice_coord(l, *i)).collect();
            let sides: Vec<f64> = idx
                .iter()
                .enumerate()
                .map(|(l, i)| lattice_coord(l, i + 1) - base[l])
                .collect();
            cells.push(Cell::new(Point(base), sides)?);
            let corners = (0..1usize << n)
                .map(|mask| {
                    let corner: Vec<usize> =
                        idx.iter().enumerate().map(|(l, i)| i + (mask >> l & 1)).collect();
                    flatten(&corner, &anchor_dims)
                })
                .collect();
            cell_corners.push(corners);
        }

        Ok(Partition { bounds, counts, deltas, cells, anchors, cell_corners })
    }

    pub fn from_spec(spec: &PartitionSpec) -> Result<Self> {
        Partition::new(spec.bounds.clone(), spec.cells_per_axis.clone())
    }

    pub fn spec(&self) -> PartitionSpec {
        PartitionSpec { bounds: self.bounds.clone(), cells_per_axis: self.counts.clone() }
    }

    pub fn dim(&self) -> usize {
        self.bounds.dim()
    }

    pub fn bounds(&self) -> &BoxDomain {
        &self.bounds
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    /// Nominal side lengths `Δ_ℓ`.
    pub fn deltas(&self) -> &[f64] {
        &self.deltas
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn anchors(&self) -> &[Point] {
        &self.anchors
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn num_anchors(&self) -> usize {
        self.anchors.len()
    }

    /// Anchor indices of the `2^N` corners of `cell`, indexed by corner mask.
    pub fn cell_corners(&self, cell: usize) -> &[usize] {
        &self.cell_corners[cell]
    }

    /// Per-axis cell multi-index of a flat cell index.
    pub fn cell_multi_index(&self, cell: usize) -> Vec<usize> {
        unflatten(cell, &self.counts)
    }

    pub fn cell_index(&self, multi: &[usize]) -> usize {
        flatten(multi, &self.counts)
    }

    /// Index of the cell containing `x`. Points on an interior face belong to
    /// the upper cell; points on the upper domain boundary to the last cell.
    pub fn locate_cell(&self, x: &Point) -> Result<usize> {
        if !self.bounds.contains(x.coords()) {
            return Err(Error::OutOfDomain(x.coords().to_vec()));
        }
        let multi: Vec<usize> = (0..self.dim())
            .map(|l| {
                let t = ((x[l] - self.bounds.lower[l]) / self.deltas[l]).floor();
                let mut i = (t.max(0.0) as usize).min(self.counts[l] - 1);
                // Guard against division rounding: keep x inside [base, upper].
                let cell_lo = |i: usize| self.bounds.lower[l] + i as f64 * self.deltas[l];
                if i > 0 && x[l] < cell_lo(i) {
                    i -= 1;
                } else if i + 1 < self.counts[l] && x[l] >= cell_lo(i + 1) {
                    i += 1;
                }
                i
            })
            .collect();
        Ok(self.cell_index(&multi))
    }

    /// Enclosing cell and corner weights of `x`.
    pub fn locate_with_weights(&self, x: &Point) -> Result<(usize, CellWeights)> {
        let c = self.locate_cell(x)?;
        let cell = &self.cells[c];
        let lambda = (0..self.dim())
            .map(|l| ((cell.upper(l) - x[l]) / cell.sides[l]).clamp(0.0, 1.0))
            .collect();
        Ok((c, CellWeights::from_lambda(lambda)))
    }

    /// All lattice-adjacent anchor pairs, each unordered pair once.
    pub fn axis_neighbors(&self) -> Vec<AxisNeighbor> {
        let anchor_dims: Vec<usize> = self.counts.iter().map(|c| c + 1).collect();
        let mut out = Vec::new();
        for (a, idx) in MultiIndex::new(&anchor_dims).enumerate() {
            for axis in 0..self.dim() {
                if idx[axis] < self.counts[axis] {
                    let mut next = idx.clone();
                    next[axis] += 1;
                    let b = flatten(&next, &anchor_dims);
                    let gap = self.anchors[b][axis] - self.anchors[a][axis];
                    out.push(AxisNeighbor { lower: a, upper: b, axis, gap });
                }
            }
        }
        out
    }

    /// Analytic lattice-edge count `Σ_ℓ count_ℓ · Π_{j≠ℓ}(count_j + 1)`.
    pub fn expected_neighbor_count(&self) -> usize {
        (0..self.dim())
            .map(|l| {
                self.counts[l]
                    * (0..self.dim()).filter(|j| *j != l).map(|j| self.counts[j] + 1).product::<usize>()
            })
            .sum()
    }
}

/// Free-function form of [`Partition::axis_neighbors`].
pub fn axis_neighbors(partition: &Partition) -> Vec<AxisNeighbor> {
    partition.axis_neighbors()
}

/// Free-function form of [`Partition::locate_cell`].
pub fn locate_cell(partition: &Partition, x: &Point) -> Result<usize> {
    partition.locate_cell(x)
}

fn flatten(idx: &[usize], dims: &[usize]) -> usize {
    idx.iter().zip(dims).rev().fold(0, |acc, (i, d)| acc * d + i)
}

fn unflatten(mut flat: usize, dims: &[usize]) -> Vec<usize> {
    dims.iter()
        .map(|d| {
            let i = flat % d;
            flat /= d;
            i
        })
        .collect()
}

/// Iterates all multi-indices of a box, axis 0 fastest.
struct MultiIndex {
    dims: Vec<usize>,
    next: Option<Vec<usize>>,
}

impl MultiIndex {
    fn new(dims: &[usize]) -> Self {
        let next = if dims.iter().all(|d| *d > 0) { Some(vec![0; dims.len()]) } else { None };
        MultiIndex { dims: dims.to_vec(), next }
    }
}

impl Iterator for MultiIndex {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        let current = self.next.take()?;
        let mut succ = current.clone();
        for l in 0..self.dims.len() {
            succ[l] += 1;
            if succ[l] < self.dims[l] {
                self.next = Some(succ);
                return Some(current);
            }
            succ[l] = 0;
        }
        Some(current)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn p(c: &[f64]) -> Point {
        Point::new(c.to_vec()).unwrap()
    }

    #[test]
    fn distance_examples() {
        let o = p(&[0.0, 0.0]);
        let q = p(&[3.0, 4.0]);
        assert_eq!(lp_distance(&o, &o, Metric::L2).unwrap(), 0.0);
        assert_eq!(lp_distance(&o, &q, Metric::L2).unwrap(), 5.0);
        assert_eq!(lp_distance(&o, &q, Metric::L1).unwrap(), 7.0);
        assert_eq!(lp_distance(&o, &q, Metric::LINF).unwrap(), 4.0);
        assert!(lp_distance(&o, &p(&[1.0]), Metric::L2).is_err());
    }

    #[test]
    fn metric_parsing_and_dual() {
        assert!(Metric::new(0.5).is_err());
        assert_eq!("inf".parse::<Metric>().unwrap(), Metric::LINF);
        assert_eq!(Metric::L1.dual_exponent(), f64::INFINITY);
        assert_eq!(Metric::LINF.dual_exponent(), 1.0);
        assert_eq!(Metric::L2.dual_exponent(), 2.0);
        let json = serde_json::to_string(&Metric::LINF).unwrap();
        assert_eq!(serde_json::from_str::<Metric>(&json).unwrap(), Metric::LINF);
        let json = serde_json::to_string(&Metric::new(1.5).unwrap()).unwrap();
        assert_eq!(serde_json::from_str::<Metric>(&json).unwrap().p(), 1.5);
    }

    #[test]
    fn partition_counts() {
        let part = partition_domain(&BoxDomain::unit(2), &[1, 1]).unwrap();
        assert_eq!((part.num_cells(), part.num_anchors()), (1, 4));
        let part = partition_domain(&BoxDomain::unit(2), &[2, 2]).unwrap();
        assert_eq!((part.num_cells(), part.num_anchors()), (4, 9));
        let part = partition_domain(&BoxDomain::unit(1), &[4]).unwrap();
        assert_eq!((part.num_cells(), part.num_anchors()), (4, 5));
        assert!(partition_domain(&BoxDomain::unit(2), &[0, 2]).is_err());
        assert!(BoxDomain::new(vec![0.0, 1.0], vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn corners_are_deduplicated_lattice_points() {
        let part = partition_domain(&BoxDomain::new(vec![-1.0, 0.0, 2.0], vec![1.0, 3.0, 4.0]).unwrap(), &[2, 3, 1])
            .unwrap();
        let mut seen = vec![0usize; part.num_anchors()];
        for c in 0..part.num_cells() {
            let cell = &part.cells()[c];
            for (mask, a) in part.cell_corners(c).iter().enumerate() {
                assert_eq!(part.anchors()[*a], cell.corner(mask));
                seen[*a] += 1;
            }
        }
        assert!(seen.iter().all(|s| *s >= 1));
        // a corner shared by k cells is listed once in the anchor set
        let distinct: std::collections::HashSet<Vec<u64>> = part
            .anchors()
            .iter()
            .map(|a| a.coords().iter().map(|c| c.to_bits()).collect())
            .collect();
        assert_eq!(distinct.len(), part.num_anchors());
    }

    #[test]
    fn locate_cell_tie_rules() {
        let part = partition_domain(&BoxDomain::unit(2), &[2, 2]).unwrap();
        assert_eq!(part.cell_multi_index(part.locate_cell(&p(&[0.1, 0.1])).unwrap()), vec![0, 0]);
        assert_eq!(part.cell_multi_index(part.locate_cell(&p(&[0.5, 0.5])).unwrap()), vec![1, 1]);
        assert_eq!(part.cell_multi_index(part.locate_cell(&p(&[1.0, 1.0])).unwrap()), vec![1, 1]);
        assert_eq!(part.cell_multi_index(part.locate_cell(&p(&[0.0, 1.0])).unwrap()), vec![0, 1]);
        assert!(matches!(part.locate_cell(&p(&[1.1, 0.5])), Err(Error::OutOfDomain(_))));
    }

    #[test]
    fn weights_examples() {
        let cell = Cell::new(p(&[0.0, 0.0]), vec![1.0, 1.0]).unwrap();
        let w = interpolation_weights(&cell, &p(&[0.0, 0.0])).unwrap();
        assert_eq!(w.lambda, vec![1.0, 1.0]);
        assert_eq!(w.corner_weights, vec![1.0, 0.0, 0.0, 0.0]);

        let w = interpolation_weights(&cell, &p(&[0.25, 0.5])).unwrap();
        assert_eq!(w.lambda, vec![0.75, 0.5]);
        assert_abs_diff_eq!(w.weight(&[0, 0]), 0.375, epsilon = 1e-15);
        assert_abs_diff_eq!(w.weight(&[1, 0]), 0.125, epsilon = 1e-15);
        assert_abs_diff_eq!(w.weight(&[0, 1]), 0.375, epsilon = 1e-15);
        assert_abs_diff_eq!(w.weight(&[1, 1]), 0.125, epsilon = 1e-15);

        let cube = Cell::new(p(&[0.0, 0.0, 0.0]), vec![2.0, 2.0, 2.0]).unwrap();
        let w = interpolation_weights(&cube, &p(&[1.0, 1.0, 1.0])).unwrap();
        assert!(w.corner_weights.iter().all(|x| *x == 0.125));

        assert!(interpolation_weights(&cell, &p(&[1.5, 0.5])).is_err());
    }

    #[test]
    fn neighbor_counts() {
        let part = partition_domain(&BoxDomain::unit(2), &[1, 1]).unwrap();
        assert_eq!(part.axis_neighbors().len(), 4);
        let part = partition_domain(&BoxDomain::unit(2), &[2, 2]).unwrap();
        assert_eq!(part.axis_neighbors().len(), 12);
        let part = partition_domain(&BoxDomain::unit(1), &[4]).unwrap();
        assert_eq!(part.axis_neighbors().len(), 4);
        for nb in part.axis_neighbors() {
            assert_abs_diff_eq!(nb.gap, 0.25, epsilon = 1e-15);
        }
    }

    #[test]
    fn shared_face_assignment_is_neutral_for_weights() {
        // A point on the face x=0.5 gets the same corner coordinates combination from either cell.
        let part = partition_domain(&BoxDomain::unit(2), &[2, 1]).unwrap();
        let x = p(&[0.5, 0.3]);
        let left = interpolation_weights(&part.cells()[0], &x).unwrap();
        let right = interpolation_weights(&part.cells()[1], &x).unwrap();
        let combo = |c: usize, w: &CellWeights| -> Vec<(usize, f64)> {
            let mut v: Vec<(usize, f64)> = part
                .cell_corners(c)
                .iter()
                .zip(&w.corner_weights)
                .filter(|(_, w)| **w > 0.0)
                .map(|(a, w)| (*a, *w))
                .collect();
            v.sort_by_key(|e| e.0);
            v
        };
        let l = combo(0, &left);
        let r = combo(1, &right);
        assert_eq!(l.len(), r.len());
        for (a, b) in l.iter().zip(&r) {
            assert_eq!(a.0, b.0);
            assert_abs_diff_eq!(a.1, b.1, epsilon = 1e-15);
        }
    }

    proptest! {
        #[test]
        fn triangle_inequality(
            a in proptest::collection::vec(-10.0f64..10.0, 3),
            b in proptest::collection::vec(-10.0f64..10.0, 3),
            c in proptest::collection::vec(-10.0f64..10.0, 3),
            pi in 0usize..5,
        ) {
            let metric = [Metric::L1, Metric::new(1.5).unwrap(), Metric::L2, Metric::new(3.0).unwrap(), Metric::LINF][pi];
            let (a, b, c) = (p(&a), p(&b), p(&c));
            let ab = lp_distance(&a, &b, metric).unwrap();
            let bc = lp_distance(&b, &c, metric).unwrap();
            let ac = lp_distance(&a, &c, metric).unwrap();
            prop_assert!(ac <= ab + bc + 1e-12);
            prop_assert_eq!(ab, lp_distance(&b, &a, metric).unwrap());
        }

        #[test]
        fn weights_form_a_convex_combination(
            counts in proptest::collection::vec(1usize..4, 1..4),
            frac in proptest::collection::vec(0.0f64..=1.0, 3),
        ) {
            let n = counts.len();
            let bounds = BoxDomain::new(vec![-2.0; n], (0..n).map(|l| 1.0 + l as f64).collect()).unwrap();
            let part = partition_domain(&bounds, &counts).unwrap();
            let x = p(&(0..n).map(|l| bounds.lower[l] + frac[l] * bounds.extent(l)).collect::<Vec<_>>());
            let (c, w) = part.locate_with_weights(&x).unwrap();
            prop_assert!(part.cells()[c].contains(&x));
            let total: f64 = w.corner_weights.iter().sum();
            prop_assert!((total - 1.0).abs() <= 1e-12);
            for l in 0..n {
                let avg: f64 = part.cell_corners(c).iter().zip(&w.corner_weights)
                    .map(|(a, w)| w * part.anchors()[*a][l]).sum();
                prop_assert!((avg - x[l]).abs() <= 1e-12);
            }
        }

        #[test]
        fn neighbor_count_matches_lattice_formula(counts in proptest::collection::vec(1usize..5, 1..4)) {
            let n = counts.len();
            let part = partition_domain(&BoxDomain::unit(n), &counts).unwrap();
            prop_assert_eq!(part.axis_neighbors().len(), part.expected_neighbor_count());
        }
    }
}
