//! Utility-loss models and synthetic desk-scale instances.
//!
//! The task-based loss compares shortest-path lengths on a road graph: the
//! loss of reporting `y` instead of `x` is the prior-weighted absolute
//! difference `|path(x, task) - path(y, task)|` over a set of task nodes.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use petgraph::graph::{NodeIndex, UnGraph};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::apo::OutputDomain;
use crate::error::{invalid, Error, Result};
use crate::geometry::{metric_distance, BoxDomain, Metric, Partition, PartitionSpec, Point};
use crate::mechanisms::Mechanism;

/// Weighted sample points standing in for the prior over the domain.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorModel {
    points: Vec<Point>,
    masses: Vec<f64>,
}

impl PriorModel {
    pub fn new(points: Vec<Point>, masses: Vec<f64>) -> Result<Self> {
        if points.is_empty() || points.len() != masses.len() {
            return invalid("prior needs one mass per (non-empty) sample point");
        }
        if masses.iter().any(|m| !(*m >= 0.0) || !m.is_finite()) {
            return invalid("prior masses must be finite and non-negative");
        }
        let total: f64 = masses.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return invalid(format!("prior masses sum to {total}, expected 1"));
        }
        let dim = points[0].dim();
        if points.iter().any(|p| p.dim() != dim) {
            return invalid("prior sample points differ in dimension");
        }
        Ok(PriorModel { points, masses })
    }

    /// Builds a prior from unnormalized non-negative weights.
    pub fn from_weights(points: Vec<Point>, weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return invalid("prior weights must have a positive finite total");
        }
        let masses = weights.iter().map(|w| w / total).collect();
        PriorModel::new(points, masses)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Point, f64)> {
        self.points.iter().zip(self.masses.iter().copied())
    }

    /// `per_axis^N` interior points per cell at offsets `(j + 1/2) / per_axis`,
    /// weighted by `density`.
    pub fn cell_lattice(partition: &Partition, per_axis: usize, density: impl Fn(&[f64]) -> f64) -> Result<Self> {
        if per_axis == 0 {
            return invalid("need at least one prior sample per cell axis");
        }
        let n = partition.dim();
        let mut points = Vec::new();
        let mut weights = Vec::new();
        for cell in partition.cells() {
            for flat in 0..per_axis.pow(n as u32) {
                let mut rem = flat;
                let coords: Vec<f64> = (0..n)
                    .map(|l| {
                        let j = rem % per_axis;
                        rem /= per_axis;
                        cell.base[l] + (j as f64 + 0.5) / per_axis as f64 * cell.sides[l]
                    })
                    .collect();
                weights.push(density(&coords));
                points.push(Point::new(coords)?);
            }
        }
        PriorModel::from_weights(points, weights)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let dim = self.points[0].dim();
        let mut header: Vec<String> = (0..dim).map(|l| format!("x{l}")).collect();
        header.push("mass".into());
        w.write_record(&header)?;
        for (p, m) in self.iter() {
            let mut rec: Vec<String> = p.coords().iter().map(|c| c.to_string()).collect();
            rec.push(m.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let mut points = Vec::new();
        let mut masses = Vec::new();
        for rec in r.records() {
            let vals = parse_floats(&rec?)?;
            let (coords, mass) = vals.split_at(vals.len().saturating_sub(1));
            points.push(Point::new(coords.to_vec())?);
            masses.push(*mass.first().ok_or_else(|| Error::Malformed("empty prior row".into()))?);
        }
        PriorModel::new(points, masses)
    }
}

fn parse_floats(rec: &csv::StringRecord) -> Result<Vec<f64>> {
    rec.iter()
        .map(|s| s.trim().parse::<f64>().map_err(|_| Error::Malformed(format!("not a number: {s:?}"))))
        .collect()
}

/// Pointwise loss `L(x_i, y_k)` for every prior sample point `x_i` and output `y_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct LossModel {
    values: Vec<Vec<f64>>,
}

impl LossModel {
    pub fn from_matrix(values: Vec<Vec<f64>>) -> Result<Self> {
        let k = values.first().map_or(0, Vec::len);
        if k == 0 || values.iter().any(|r| r.len() != k) {
            return invalid("loss matrix must be non-empty and rectangular");
        }
        if values.iter().flatten().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return invalid("loss entries must be finite and non-negative");
        }
        Ok(LossModel { values })
    }

    /// Task-based loss evaluated at every prior sample point.
    pub fn from_tasks(graph: &RoadGraph, tasks: &TaskSet, prior: &PriorModel, outputs: &OutputDomain) -> Result<Self> {
        let table = TaskDistances::new(graph, tasks)?;
        let out_nodes: Vec<usize> = outputs.candidates().iter().map(|y| graph.nearest_node(y)).collect();
        let values = prior
            .points()
            .par_iter()
            .map(|x| {
                let xn = graph.nearest_node(x);
                out_nodes.iter().map(|yn| table.loss_between_nodes(xn, *yn)).collect()
            })
            .collect::<Result<Vec<Vec<f64>>>>()?;
        LossModel::from_matrix(values)
    }

    pub fn num_points(&self) -> usize {
        self.values.len()
    }

    pub fn num_outputs(&self) -> usize {
        self.values[0].len()
    }

    pub fn loss(&self, point: usize, output: usize) -> f64 {
        self.values[point][output]
    }

    pub fn row(&self, point: usize) -> &[f64] {
        &self.values[point]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn check_shape(&self, prior: &PriorModel, outputs: &OutputDomain) -> Result<()> {
        if self.num_points() != prior.len() || self.num_outputs() != outputs.len() {
            return Err(Error::InvalidArgument(format!(
                "loss matrix is {}x{}, instance has {} prior points and {} outputs",
                self.num_points(),
                self.num_outputs(),
                prior.len(),
                outputs.len()
            )));
        }
        Ok(())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["sample".to_string()];
        header.extend((0..self.num_outputs()).map(|k| format!("y{k}")));
        w.write_record(&header)?;
        for (i, row) in self.values.iter().enumerate() {
            let mut rec = vec![i.to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let mut values = Vec::new();
        for rec in r.records() {
            let vals = parse_floats(&rec?)?;
            values.push(vals[1..].to_vec());
        }
        LossModel::from_matrix(values)
    }
}

/// Undirected road network with positive edge lengths.
#[derive(Clone, Debug)]
pub struct RoadGraph {
    nodes: Vec<Point>,
    edges: Vec<(usize, usize, f64)>,
    graph: UnGraph<(), f64>,
}

impl RoadGraph {
    pub fn new(nodes: Vec<Point>, edges: Vec<(usize, usize, f64)>) -> Result<Self> {
        if nodes.is_empty() {
            return invalid("road graph needs at least one node");
        }
        let mut graph = UnGraph::with_capacity(nodes.len(), edges.len());
        for _ in &nodes {
            graph.add_node(());
        }
        for (u, v, w) in &edges {
            if *u >= nodes.len() || *v >= nodes.len() {
                return invalid(format!("edge ({u}, {v}) references a missing node"));
            }
            if !(*w > 0.0) || !w.is_finite() {
                return invalid(format!("edge ({u}, {v}) has non-positive weight {w}"));
            }
            graph.add_edge(NodeIndex::new(*u), NodeIndex::new(*v), *w);
        }
        Ok(RoadGraph { nodes, edges, graph })
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn nodes(&self) -> &[Point] {
        &self.nodes
    }

    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    /// Single-source shortest-path lengths; unreachable nodes get `+∞`.
    pub fn shortest_paths(&self, source: usize) -> Result<Vec<f64>> {
        if source >= self.nodes.len() {
            return invalid(format!("node {source} does not exist"));
        }
        let found = petgraph::algo::dijkstra(&self.graph, NodeIndex::new(source), None, |e| *e.weight());
        let mut dist = vec![f64::INFINITY; self.nodes.len()];
        for (n, d) in found {
            dist[n.index()] = d;
        }
        Ok(dist)
    }

    /// Nearest node under `d_2`, ties toward the lower node id.
    pub fn nearest_node(&self, x: &Point) -> usize {
        let mut best = (f64::INFINITY, 0);
        for (i, n) in self.nodes.iter().enumerate() {
            let d = metric_distance(n.coords(), x.coords(), Metric::L2);
            if d < best.0 {
                best = (d, i);
            }
        }
        best.1
    }

    /// Writes the `"V E"` header followed by one `"u v w"` line per edge.
    pub fn write_text(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "{} {}", self.num_nodes(), self.num_edges())?;
        for (u, v, wt) in &self.edges {
            writeln!(w, "{u} {v} {wt}")?;
        }
        Ok(())
    }

    /// Parses the edge-list text format; node positions come separately.
    pub fn read_text(r: impl BufRead, nodes: Vec<Point>) -> Result<Self> {
        let mut lines = r.lines().filter(|l| l.as_ref().map_or(true, |s| !s.trim().is_empty()));
        let header = lines.next().ok_or_else(|| Error::Malformed("empty graph file".into()))??;
        let mut it = header.split_whitespace().map(str::parse::<usize>);
        let (v, e) = match (it.next(), it.next()) {
            (Some(Ok(v)), Some(Ok(e))) => (v, e),
            _ => return Err(Error::Malformed(format!("bad graph header {header:?}"))),
        };
        if v != nodes.len() {
            return Err(Error::Malformed(format!("graph declares {v} nodes, {} positions given", nodes.len())));
        }
        let mut edges = Vec::with_capacity(e);
        for line in lines {
            let line = line?;
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 3 {
                return Err(Error::Malformed(format!("bad edge line {line:?}")));
            }
            let parse_u = |s: &str| s.parse::<usize>().map_err(|_| Error::Malformed(format!("bad node id {s:?}")));
            let wt = f[2].parse::<f64>().map_err(|_| Error::Malformed(format!("bad weight {:?}", f[2])))?;
            edges.push((parse_u(f[0])?, parse_u(f[1])?, wt));
        }
        if edges.len() != e {
            return Err(Error::Malformed(format!("graph declares {e} edges, found {}", edges.len())));
        }
        RoadGraph::new(nodes, edges)
    }
}

/// Task destinations with their prior probabilities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSet {
    pub tasks: Vec<(usize, f64)>,
}

impl TaskSet {
    pub fn new(tasks: Vec<(usize, f64)>) -> Result<Self> {
        if tasks.is_empty() {
            return invalid("task set must be non-empty");
        }
        if tasks.iter().any(|(_, p)| !(*p >= 0.0)) {
            return invalid("task probabilities must be non-negative");
        }
        let total: f64 = tasks.iter().map(|t| t.1).sum();
        if (total - 1.0).abs() > 1e-12 {
            return invalid(format!("task probabilities sum to {total}"));
        }
        Ok(TaskSet { tasks })
    }
}

/// Shortest-path lengths from every task node, computed once per instance.
#[derive(Clone, Debug)]
pub struct TaskDistances {
    probs: Vec<f64>,
    dist: Vec<Vec<f64>>,
}

impl TaskDistances {
    pub fn new(graph: &RoadGraph, tasks: &TaskSet) -> Result<Self> {
        let dist = tasks
            .tasks
            .par_iter()
            .map(|(node, _)| graph.shortest_paths(*node))
            .collect::<Result<Vec<_>>>()?;
        Ok(TaskDistances { probs: tasks.tasks.iter().map(|t| t.1).collect(), dist })
    }

    /// `Σ_task p(task) · |path(a, task) − path(b, task)|` for graph nodes `a`, `b`.
    pub fn loss_between_nodes(&self, a: usize, b: usize) -> Result<f64> {
        let mut total = 0.0;
        for (p, d) in self.probs.iter().zip(&self.dist) {
            match (d[a].is_finite(), d[b].is_finite()) {
                (true, true) => total += p * (d[a] - d[b]).abs(),
                (false, false) => {}
                _ => {
                    return Err(Error::Malformed(format!(
                        "nodes {a} and {b} lie in different components relative to a task"
                    )))
                }
            }
        }
        Ok(total)
    }
}

/// Task loss between two continuous points, each snapped to its nearest graph node.
pub fn task_loss(x: &Point, y: &Point, tasks: &TaskSet, graph: &RoadGraph) -> Result<f64> {
    let table = TaskDistances::new(graph, tasks)?;
    table.loss_between_nodes(graph.nearest_node(x), graph.nearest_node(y))
}

/// `Σ_x p(x) Σ_k z(y_k | x) · L(x, y_k)` over the prior sample points.
pub fn expected_loss(mech: &dyn Mechanism, prior: &PriorModel, loss: &LossModel) -> Result<f64> {
    if loss.num_points() != prior.len() || loss.num_outputs() != mech.num_outputs() {
        return invalid("mechanism, prior and loss matrix disagree in shape");
    }
    let terms = prior
        .points()
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            let dist = mech.distribution_at(x)?;
            Ok(dist.iter().zip(loss.row(i)).map(|(z, l)| z * l).sum::<f64>())
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(pairwise_sum(
        &terms.iter().zip(prior.masses()).map(|(t, m)| t * m).collect::<Vec<_>>(),
    ))
}

/// Fixed-shape pairwise summation; the result does not depend on thread count.
pub(crate) fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 8 {
        v.iter().sum()
    } else {
        let mid = v.len() / 2;
        pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
    }
}

/// Parameters of the synthetic desk-scale instance generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    /// Domain side lengths (km); the domain is `[0, extent]`.
    pub extent: Vec<f64>,
    pub cells_per_axis: Vec<usize>,
    pub samples_per_cell_axis: usize,
    pub outputs_per_axis: Vec<usize>,
    /// Road nodes per axis of the grid road network.
    pub road_nodes_per_axis: usize,
    /// Relative jitter of edge lengths, uniform in `[0, jitter]`.
    pub edge_jitter: f64,
    /// Length multiplier on edges along axis 1; values above one make travel
    /// direction-dependent.
    pub anisotropy: f64,
    pub hotspots: usize,
    pub tasks: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            extent: vec![8.0, 8.0],
            cells_per_axis: vec![4, 4],
            samples_per_cell_axis: 3,
            outputs_per_axis: vec![3, 3],
            road_nodes_per_axis: 9,
            edge_jitter: 0.5,
            anisotropy: 1.5,
            hotspots: 2,
            tasks: 12,
        }
    }
}

/// One synthetic instance: partition, prior, outputs, loss and its road network.
#[derive(Clone, Debug)]
pub struct Instance {
    pub partition: Partition,
    pub prior: PriorModel,
    pub outputs: OutputDomain,
    pub loss: LossModel,
    pub graph: RoadGraph,
    pub tasks: TaskSet,
}

/// Generates a 2D instance deterministically from `seed`.
pub fn synth_instance(spec: &SynthSpec, seed: u64) -> Result<Instance> {
    if spec.extent.len() != 2 || spec.cells_per_axis.len() != 2 || spec.outputs_per_axis.len() != 2 {
        return Err(Error::Unsupported("the synthetic generator builds 2D instances".into()));
    }
    if spec.road_nodes_per_axis < 2 || spec.tasks == 0 || spec.outputs_per_axis.iter().any(|k| *k == 0) {
        return invalid("synthetic instance needs >= 2 road nodes per axis, >= 1 task and >= 1 output per axis");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bounds = BoxDomain::new(vec![0.0; 2], spec.extent.clone())?;
    let partition = Partition::new(bounds.clone(), spec.cells_per_axis.clone())?;

    let graph = grid_road_graph(&bounds, spec.road_nodes_per_axis, spec.edge_jitter, spec.anisotropy, &mut rng)?;

    let centers: Vec<[f64; 2]> = (0..spec.hotspots)
        .map(|_| [rng.random_range(0.0..spec.extent[0]), rng.random_range(0.0..spec.extent[1])])
        .collect();
    let sigma = 0.15 * spec.extent[0].max(spec.extent[1]);
    let density = |x: &[f64]| {
        0.3 + centers
            .iter()
            .map(|c| (-((x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2)) / (2.0 * sigma * sigma)).exp())
            .sum::<f64>()
    };
    let prior = PriorModel::cell_lattice(&partition, spec.samples_per_cell_axis, density)?;

    let (kx, ky) = (spec.outputs_per_axis[0], spec.outputs_per_axis[1]);
    let mut candidates = Vec::with_capacity(kx * ky);
    for j in 0..ky {
        for i in 0..kx {
            candidates.push(Point::new(vec![
                (i as f64 + 0.5) / kx as f64 * spec.extent[0],
                (j as f64 + 0.5) / ky as f64 * spec.extent[1],
            ])?);
        }
    }
    let outputs = OutputDomain::new(candidates)?;

    // Tasks: prior-weighted draws snapped to road nodes.
    let mut by_node: BTreeMap<usize, usize> = BTreeMap::new();
    let cumulative: Vec<f64> = prior
        .masses()
        .iter()
        .scan(0.0, |acc, m| {
            *acc += m;
            Some(*acc)
        })
        .collect();
    for _ in 0..spec.tasks {
        let u: f64 = rng.random();
        let idx = cumulative.iter().position(|c| u < *c).unwrap_or(prior.len() - 1);
        *by_node.entry(graph.nearest_node(&prior.points()[idx])).or_default() += 1;
    }
    let tasks = TaskSet::new(by_node.into_iter().map(|(n, c)| (n, c as f64 / spec.tasks as f64)).collect())?;

    let loss = LossModel::from_tasks(&graph, &tasks, &prior, &outputs)?;
    Ok(Instance { partition, prior, outputs, loss, graph, tasks })
}

fn grid_road_graph(
    bounds: &BoxDomain,
    per_axis: usize,
    jitter: f64,
    anisotropy: f64,
    rng: &mut ChaCha8Rng,
) -> Result<RoadGraph> {
    let step = |l: usize| bounds.extent(l) / (per_axis - 1) as f64;
    let mut nodes = Vec::with_capacity(per_axis * per_axis);
    for j in 0..per_axis {
        for i in 0..per_axis {
            nodes.push(Point::new(vec![
                bounds.lower[0] + i as f64 * step(0),
                bounds.lower[1] + j as f64 * step(1),
            ])?);
        }
    }
    let id = |i: usize, j: usize| j * per_axis + i;
    let mut edges = Vec::with_capacity(2 * per_axis * (per_axis - 1));
    for j in 0..per_axis {
        for i in 0..per_axis {
            if i + 1 < per_axis {
                let w = step(0) * (1.0 + jitter * rng.random::<f64>());
                edges.push((id(i, j), id(i + 1, j), w));
            }
            if j + 1 < per_axis {
                let w = anisotropy * step(1) * (1.0 + jitter * rng.random::<f64>());
                edges.push((id(i, j), id(i, j + 1), w));
            }
        }
    }
    RoadGraph::new(nodes, edges)
}

/// On-disk instance bundle manifest.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BundleManifest {
    pub partition: PartitionSpec,
    pub graph: String,
    pub nodes: String,
    pub prior: String,
    pub outputs: String,
    pub loss: String,
    pub tasks: String,
}

impl Instance {
    /// Writes the instance as a directory with a JSON manifest naming its parts.
    pub fn write_bundle(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let manifest = BundleManifest {
            partition: self.partition.spec(),
            graph: "graph.txt".into(),
            nodes: "nodes.csv".into(),
            prior: "prior.csv".into(),
            outputs: "outputs.csv".into(),
            loss: "loss.csv".into(),
            tasks: "tasks.csv".into(),
        };
        let mut g = fs::File::create(dir.join(&manifest.graph))?;
        self.graph.write_text(&mut g)?;
        write_points_csv(&dir.join(&manifest.nodes), self.graph.nodes())?;
        self.prior.write_csv(&dir.join(&manifest.prior))?;
        write_points_csv(&dir.join(&manifest.outputs), self.outputs.candidates())?;
        self.loss.write_csv(&dir.join(&manifest.loss))?;
        let mut w = csv::Writer::from_path(dir.join(&manifest.tasks))?;
        w.write_record(["node", "prob"])?;
        for (n, p) in &self.tasks.tasks {
            w.write_record([n.to_string(), p.to_string()])?;
        }
        w.flush()?;
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(())
    }

    pub fn read_bundle(dir: &Path) -> Result<Self> {
        let manifest: BundleManifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
        let partition = Partition::from_spec(&manifest.partition)?;
        let nodes = read_points_csv(&dir.join(&manifest.nodes))?;
        let graph = RoadGraph::read_text(BufReader::new(fs::File::open(dir.join(&manifest.graph))?), nodes)?;
        let prior = PriorModel::read_csv(&dir.join(&manifest.prior))?;
        let outputs = OutputDomain::new(read_points_csv(&dir.join(&manifest.outputs))?)?;
        let loss = LossModel::read_csv(&dir.join(&manifest.loss))?;
        loss.check_shape(&prior, &outputs)?;
        let mut r = csv::Reader::from_path(dir.join(&manifest.tasks))?;
        let mut tasks = Vec::new();
        for rec in r.records() {
            let v = parse_floats(&rec?)?;
            tasks.push((v[0] as usize, v[1]));
        }
        Ok(Instance { partition, prior, outputs, loss, graph, tasks: TaskSet::new(tasks)? })
    }
}

fn write_points_csv(path: &Path, points: &[Point]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let dim = points.first().map_or(0, Point::dim);
    let mut header = vec!["id".to_string()];
    header.extend((0..dim).map(|l| format!("x{l}")));
    w.write_record(&header)?;
    for (i, p) in points.iter().enumerate() {
        let mut rec = vec![i.to_string()];
        rec.extend(p.coords().iter().map(|c| c.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn read_points_csv(path: &Path) -> Result<Vec<Point>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let v = parse_floats(&rec?)?;
        out.push(Point::new(v[1..].to_vec())?);
    }
    Ok(out)
}
