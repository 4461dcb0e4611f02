//! The four subcommands. Each writes plain CSV/JSON into an output directory
//! and returns what it wrote.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anchormech::audit::{ppr_histogram, violation_ratio, write_histogram_csv};
use anchormech::budget::write_curve_csv;
use anchormech::{BoxDomain, Experiment, Instance, Mechanism, MechanismSpec, Method, Partition};
use serde::Serialize;

use crate::config::{Config, LoadedConfig, Timing};
use crate::error::{io_err, CliError, CliResult};

/// Overrides from the command line, applied on top of the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub eps: Option<Vec<f64>>,
    pub methods: Vec<String>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut Config) -> CliResult<()> {
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(e) = &self.eps {
            cfg.eps = e.clone();
        }
        if !self.methods.is_empty() {
            cfg.methods = self.methods.clone();
        }
        cfg.validate()
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    config_hash: &'a str,
    seed: u64,
    version: &'a str,
    core_version: &'a str,
    files: &'a [String],
}

fn write_file(dir: &Path, name: &str, bytes: &[u8], written: &mut Vec<String>) -> CliResult<PathBuf> {
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(io_err(&path))?;
    written.push(name.to_string());
    Ok(path)
}

fn json_bytes<T: Serialize>(v: &T) -> CliResult<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(v).map_err(anchormech::Error::from)?;
    s.push('\n');
    Ok(s.into_bytes())
}

fn write_manifest(dir: &Path, command: &str, cfg: &LoadedConfig, files: &[String]) -> CliResult<()> {
    let m = Manifest {
        command,
        config_hash: &cfg.hash,
        seed: cfg.config.seed,
        version: env!("CARGO_PKG_VERSION"),
        core_version: anchormech::VERSION,
        files,
    };
    let path = dir.join("manifest.json");
    fs::write(&path, json_bytes(&m)?).map_err(io_err(&path))
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

/// File-name form of ε: `0.2` becomes `0p2`.
pub fn eps_tag(eps: f64) -> String {
    format!("{eps}").replace('.', "p").replace('-', "m")
}

fn file_tag(method: &Method) -> String {
    method.to_string().to_ascii_lowercase()
}

/// Builds every configured method at every ε and writes the mechanism JSON,
/// its anchor table (if any) and the sweep curve (sweep mode only).
pub fn synthesize(cfg: &LoadedConfig, out_dir: &Path) -> CliResult<Vec<String>> {
    let c = &cfg.config;
    ensure_dir(out_dir)?;
    let instance = c.instance(&cfg.base_dir, 0)?;
    let exp = Experiment::new(&instance, c.method_options())?;
    let mut files = Vec::new();
    for method in c.parsed_methods()? {
        for &eps in &c.eps {
            let s = exp.build(&method, eps)?;
            let stem = format!("{}_eps{}", file_tag(&method), eps_tag(eps));
            let spec = s.spec().to_json()? + "\n";
            write_file(out_dir, &format!("mechanism_{stem}.json"), spec.as_bytes(), &mut files)?;
            if let Some(t) = &s.table {
                let mut buf = Vec::new();
                t.write_csv(&mut buf, &instance.outputs.ids())?;
                write_file(out_dir, &format!("table_{stem}.csv"), &buf, &mut files)?;
            }
            if let Some(curve) = &s.curve {
                let mut buf = Vec::new();
                write_curve_csv(curve, &mut buf)?;
                write_file(out_dir, &format!("curve_{stem}.csv"), &buf, &mut files)?;
            }
            if let Some(b) = &s.budget {
                log::info!("{method} at ε={eps}: per-axis budget {:?}", b.eps);
            }
        }
    }
    write_manifest(out_dir, "synthesize", cfg, &files)?;
    Ok(files)
}

fn config_bounds(cfg: &LoadedConfig) -> CliResult<BoxDomain> {
    let c = &cfg.config;
    match &c.instance.bundle {
        Some(_) => Ok(c.instance(&cfg.base_dir, 0)?.partition.bounds().clone()),
        None => {
            let ext = &c.instance.synth.extent;
            Ok(BoxDomain::new(vec![0.0; ext.len()], ext.clone())?)
        }
    }
}

/// Audits a serialized mechanism at a single ε.
pub fn audit(cfg: &LoadedConfig, mechanism: &Path, out_dir: &Path) -> CliResult<Vec<String>> {
    let c = &cfg.config;
    let eps = match c.eps.as_slice() {
        [e] => *e,
        _ => return Err(CliError::Config("eps: audit needs exactly one ε (use --eps)".into())),
    };
    let text = fs::read_to_string(mechanism).map_err(io_err(mechanism))?;
    let spec = MechanismSpec::from_json(&text)?;
    let bounds = match &spec {
        MechanismSpec::Interpolated { partition, .. } => Partition::from_spec(partition)?.bounds().clone(),
        _ => config_bounds(cfg)?,
    };
    let mech = spec.build()?;
    ensure_dir(out_dir)?;
    let report = violation_ratio(mech.as_ref(), eps, c.metric, &bounds, c.audit.samples, c.seed)?;
    let hist = ppr_histogram(mech.as_ref(), eps, c.metric, &bounds, c.audit.samples, c.audit.bins, c.seed)?;
    let mut files = Vec::new();
    write_file(out_dir, "audit.json", &json_bytes(&report)?, &mut files)?;
    let mut buf = Vec::new();
    write_histogram_csv(&hist, &mut buf)?;
    write_file(out_dir, "histogram.csv", &buf, &mut files)?;
    write_manifest(out_dir, "audit", cfg, &files)?;
    println!("violation_ratio {} (max PPR {:.6}, {} pairs)", report.violation_ratio, report.max_ppr, report.pair_count);
    Ok(files)
}

/// One row of the comparison table, aggregated over replicates.
#[derive(Clone, Debug, PartialEq)]
pub struct CompareRow {
    pub method: String,
    pub eps: f64,
    pub utility_loss: f64,
    pub utility_loss_ci: f64,
    pub violation_ratio: Option<f64>,
    pub violation_ratio_ci: Option<f64>,
    pub wall_time_ms: Option<f64>,
}

struct Sample {
    loss: f64,
    violation: Option<f64>,
    millis: f64,
}

fn mean_ci(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, 1.96 * var.sqrt())
}

fn measure(exp: &Experiment, instance: &Instance, method: &Method, eps: f64, cfg: &Config, seed: u64) -> CliResult<Sample> {
    let t = Instant::now();
    let s = exp.build(method, eps)?;
    let millis = t.elapsed().as_secs_f64() * 1e3;
    let loss = exp.expected_loss(s.mechanism.as_ref())?;
    let violation = if cfg.compare.audit {
        let b = instance.partition.bounds();
        Some(violation_ratio(s.mechanism.as_ref(), eps, cfg.metric, b, cfg.audit.samples, seed)?.violation_ratio)
    } else {
        None
    };
    Ok(Sample { loss, violation, millis })
}

/// Evaluates every method at every ε over `replicates` instances, plus a
/// lower-bound row per ε.
pub fn compare_rows(cfg: &LoadedConfig) -> CliResult<Vec<CompareRow>> {
    let c = &cfg.config;
    let methods = c.parsed_methods()?;
    let reps = c.compare.replicates;
    // samples[m][e][r]; the lower bound uses index methods.len()
    let mut samples: Vec<Vec<Vec<Sample>>> =
        (0..=methods.len()).map(|_| (0..c.eps.len()).map(|_| Vec::with_capacity(reps)).collect()).collect();
    for r in 0..reps as u64 {
        let instance = c.instance(&cfg.base_dir, r)?;
        let exp = Experiment::new(&instance, c.method_options())?;
        let seed = c.seed.wrapping_add(r);
        for (e, &eps) in c.eps.iter().enumerate() {
            for (m, method) in methods.iter().enumerate() {
                samples[m][e].push(measure(&exp, &instance, method, eps, c, seed)?);
            }
            let t = Instant::now();
            let lb = exp.lower_bound(eps)?;
            samples[methods.len()][e].push(Sample { loss: lb, violation: None, millis: t.elapsed().as_secs_f64() * 1e3 });
        }
    }
    let mut rows = Vec::new();
    for (e, &eps) in c.eps.iter().enumerate() {
        for (m, per) in samples.iter().enumerate() {
            let s = &per[e];
            let name = methods.get(m).map_or_else(|| "LB".to_string(), Method::to_string);
            let (utility_loss, utility_loss_ci) = mean_ci(&s.iter().map(|x| x.loss).collect::<Vec<_>>());
            let viol: Option<Vec<f64>> = s.iter().map(|x| x.violation).collect();
            let (violation_ratio, violation_ratio_ci) = match viol {
                Some(v) => {
                    let (a, b) = mean_ci(&v);
                    (Some(a), Some(b))
                }
                None => (None, None),
            };
            let wall_time_ms = match c.compare.timing {
                Timing::Measured => Some(mean_ci(&s.iter().map(|x| x.millis).collect::<Vec<_>>()).0),
                Timing::Off => None,
            };
            rows.push(CompareRow { method: name, eps, utility_loss, utility_loss_ci, violation_ratio, violation_ratio_ci, wall_time_ms });
        }
    }
    Ok(rows)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_compare_csv(rows: &[CompareRow], with_ci: bool) -> CliResult<Vec<u8>> {
    let mut wr = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["method", "eps", "utility_loss", "violation_ratio", "wall_time_ms"];
    if with_ci {
        header.extend(["utility_loss_ci95", "violation_ratio_ci95"]);
    }
    let to_core = |e: csv::Error| CliError::Core(e.into());
    wr.write_record(&header).map_err(to_core)?;
    for r in rows {
        let mut rec = vec![r.method.clone(), r.eps.to_string(), r.utility_loss.to_string(), opt(r.violation_ratio), opt(r.wall_time_ms)];
        if with_ci {
            rec.extend([r.utility_loss_ci.to_string(), opt(r.violation_ratio_ci)]);
        }
        wr.write_record(&rec).map_err(to_core)?;
    }
    wr.into_inner().map_err(|e| CliError::Core(anchormech::Error::Io(e.into_error())))
}

pub fn compare(cfg: &LoadedConfig, out_dir: &Path) -> CliResult<Vec<String>> {
    let rows = compare_rows(cfg)?;
    ensure_dir(out_dir)?;
    let mut files = Vec::new();
    let bytes = write_compare_csv(&rows, cfg.config.compare.replicates > 1)?;
    write_file(out_dir, "results.csv", &bytes, &mut files)?;
    write_manifest(out_dir, "compare", cfg, &files)?;
    Ok(files)
}

#[derive(Serialize)]
struct LowerBoundReport<'a> {
    config_hash: &'a str,
    seed: u64,
    metric: anchormech::Metric,
    values: Vec<LowerBoundValue>,
}

#[derive(Serialize)]
struct LowerBoundValue {
    eps: f64,
    lower_bound: f64,
}

/// Universal lower bound at every configured ε; also printed to stdout.
pub fn lower_bound(cfg: &LoadedConfig, out_dir: &Path) -> CliResult<Vec<(f64, f64)>> {
    let c = &cfg.config;
    let instance = c.instance(&cfg.base_dir, 0)?;
    let exp = Experiment::new(&instance, c.method_options())?;
    let values: Vec<(f64, f64)> = c.eps.iter().map(|&e| Ok((e, exp.lower_bound(e)?))).collect::<CliResult<_>>()?;
    ensure_dir(out_dir)?;
    let report = LowerBoundReport {
        config_hash: &cfg.hash,
        seed: c.seed,
        metric: c.metric,
        values: values.iter().map(|&(eps, lower_bound)| LowerBoundValue { eps, lower_bound }).collect(),
    };
    let mut files = Vec::new();
    write_file(out_dir, "lower_bound.json", &json_bytes(&report)?, &mut files)?;
    write_manifest(out_dir, "lower-bound", cfg, &files)?;
    for (e, v) in &values {
        println!("eps {e}: lower bound {v}");
    }
    Ok(values)
}

/// Loads a mechanism file written by [`synthesize`].
pub fn load_mechanism(path: &Path) -> CliResult<std::sync::Arc<dyn Mechanism>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    Ok(MechanismSpec::from_json(&text)?.build()?)
}
