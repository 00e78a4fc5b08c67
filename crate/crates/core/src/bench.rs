//! Experiment rows, grids and summary reports.
//!
//! Every run appends one [`CsvRow`]. Columns are fixed by the struct's field
//! order and always written with a header:
//!
//! | column | meaning |
//! |---|---|
//! | `mode` | `protocol1`, `protocol2`, `zero` or `intersection` |
//! | `params` | parameter set name |
//! | `seed`, `workers`, `transport` | run configuration |
//! | `x`, `k`, `d` | chaining warrant; empty for intersection |
//! | `set_sizes` | `;`-separated input sizes; empty for chaining |
//! | `ciphertexts_out` | `\|C\|` for chaining, total input size for intersection |
//! | `wall_time_s`, `wall_time_min` | end-to-end wall time |
//! | `agency_cpu_s`, `telecom_cpu_s` | CPU time summed over all agencies / all telecoms |
//! | `bytes_total`, `frames` | traffic over the transport, headers included |
//! | `rounds`, `duplicates` | BFS rounds and duplicate answers (chaining) |
//! | `revealed` | identifiers revealed (intersection); empty on abort |

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::path::{Path, PathBuf};

use rand::RngExt;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chaining::{run_protocol, run_zero_crypto, ChainConfig, ChainFailure, ChainError, Protocol, Warrant};
use crate::crypto::rng::{derive_rng, seed_from_u64};
use crate::crypto::ParamSet;
use crate::deploy::{DeployError, Deployment};
use crate::graph::{gen_power_law, gen_synthetic, load_edge_list, GraphError, LoadedGraph, ServingMap, ServingSpec};
use crate::metrics::RunMetrics;
use crate::transport::TransportKind;

/// Subscriber shares used when no serving weights are given.
pub const DEFAULT_WEIGHTS: [f64; 4] = [0.4, 0.3, 0.2, 0.1];

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("no rows to report")]
    EmptyInput,
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("experiment spec: {0}")]
    Toml(#[from] toml::de::Error),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Deploy(#[from] DeployError),
    #[error(transparent)]
    Chain(#[from] Box<ChainFailure>),
}

impl From<ChainError> for BenchError {
    fn from(e: ChainError) -> Self {
        BenchError::Chain(e.into())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub mode: String,
    pub params: String,
    pub seed: u64,
    pub workers: usize,
    pub transport: String,
    pub x: Option<u64>,
    pub k: Option<u8>,
    pub d: Option<u32>,
    pub set_sizes: String,
    pub ciphertexts_out: u64,
    pub wall_time_s: f64,
    pub wall_time_min: f64,
    pub agency_cpu_s: f64,
    pub telecom_cpu_s: f64,
    pub bytes_total: u64,
    pub frames: u64,
    pub rounds: u32,
    pub duplicates: u64,
    pub revealed: Option<usize>,
}

impl CsvRow {
    fn from_metrics(m: &RunMetrics) -> Self {
        CsvRow {
            ciphertexts_out: m.ciphertexts_out as u64,
            wall_time_s: m.wall_time.as_secs_f64(),
            wall_time_min: m.wall_time.as_secs_f64() / 60.0,
            agency_cpu_s: m.agency_cpu().as_secs_f64(),
            telecom_cpu_s: m.telecom_cpu().as_secs_f64(),
            bytes_total: m.bytes_total,
            frames: m.frames,
            rounds: m.rounds,
            duplicates: m.duplicates,
            ..CsvRow::default()
        }
    }

    pub fn chain(mode: &str, warrant: &Warrant, cfg: &ChainConfig, m: &RunMetrics) -> Self {
        CsvRow {
            mode: mode.to_owned(),
            params: warrant.params.name().to_owned(),
            seed: cfg.seed,
            workers: cfg.workers,
            transport: cfg.transport.to_string(),
            x: Some(warrant.x),
            k: Some(warrant.k),
            d: Some(warrant.d),
            ..Self::from_metrics(m)
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn intersection(
        params: ParamSet,
        seed: u64,
        workers: usize,
        transport: TransportKind,
        set_sizes: &[usize],
        m: &RunMetrics,
        revealed: Option<usize>,
    ) -> Self {
        CsvRow {
            mode: "intersection".into(),
            params: params.name().to_owned(),
            seed,
            workers,
            transport: transport.to_string(),
            set_sizes: set_sizes.iter().map(usize::to_string).collect::<Vec<_>>().join(";"),
            ciphertexts_out: set_sizes.iter().sum::<usize>() as u64,
            revealed,
            ..Self::from_metrics(m)
        }
    }
}

/// Appends rows, writing the header only when the file is new or empty.
pub fn append_rows(path: &Path, rows: &[CsvRow]) -> Result<(), BenchError> {
    let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = OpenOptions::new().create(true).append(true).open(path)?;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows(paths: &[PathBuf]) -> Result<Vec<CsvRow>, BenchError> {
    let mut rows = Vec::new();
    for p in paths {
        let mut r = csv::Reader::from_reader(File::open(p)?);
        for row in r.deserialize() {
            rows.push(row?);
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    /// Pearson correlation.
    pub r: f64,
}

/// Least-squares fit of `ys` on `xs`; `None` with fewer than two points or
/// no spread in either coordinate.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<LinearFit> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
        sxy += (x - mx) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    Some(LinearFit { slope, intercept: my - slope * mx, r: sxy / (sxx * syy).sqrt() })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub mode: String,
    pub runs: usize,
    pub ciphertexts: u64,
    pub wall_ms_per_ct: f64,
    pub agency_cpu_ms_per_ct: f64,
    pub telecom_cpu_ms_per_ct: f64,
    pub cts_per_s: f64,
    /// Wall seconds against `ciphertexts_out`.
    pub fit: Option<LinearFit>,
}

pub fn summarize(mode: &str, rows: &[&CsvRow]) -> Result<Summary, BenchError> {
    if rows.is_empty() {
        return Err(BenchError::EmptyInput);
    }
    let cts: u64 = rows.iter().map(|r| r.ciphertexts_out).sum();
    let wall: f64 = rows.iter().map(|r| r.wall_time_s).sum();
    let per = |s: f64| if cts == 0 { 0.0 } else { s * 1000.0 / cts as f64 };
    let xs: Vec<f64> = rows.iter().map(|r| r.ciphertexts_out as f64).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.wall_time_s).collect();
    Ok(Summary {
        mode: mode.to_owned(),
        runs: rows.len(),
        ciphertexts: cts,
        wall_ms_per_ct: per(wall),
        agency_cpu_ms_per_ct: per(rows.iter().map(|r| r.agency_cpu_s).sum()),
        telecom_cpu_ms_per_ct: per(rows.iter().map(|r| r.telecom_cpu_s).sum()),
        cts_per_s: if wall > 0.0 { cts as f64 / wall } else { 0.0 },
        fit: linear_fit(&xs, &ys),
    })
}

/// One summary per mode, in mode order.
pub fn summarize_by_mode(rows: &[CsvRow]) -> Result<Vec<Summary>, BenchError> {
    if rows.is_empty() {
        return Err(BenchError::EmptyInput);
    }
    let mut groups: BTreeMap<&str, Vec<&CsvRow>> = BTreeMap::new();
    for r in rows {
        groups.entry(&r.mode).or_default().push(r);
    }
    groups.into_iter().map(|(mode, rs)| summarize(mode, &rs)).collect()
}

pub fn render_summaries(sums: &[Summary]) -> String {
    let mut out = format!(
        "{:<13} {:>5} {:>12} {:>10} {:>12} {:>12} {:>10} {:>12} {:>7}\n",
        "mode", "runs", "ciphertexts", "wall ms/ct", "agency ms/ct", "telecom ms/ct", "ct/s", "slope s/ct", "r"
    );
    for s in sums {
        let (slope, r) = match s.fit {
            Some(f) => (format!("{:.6}", f.slope), format!("{:.4}", f.r)),
            None => ("-".into(), "-".into()),
        };
        out += &format!(
            "{:<13} {:>5} {:>12} {:>10.3} {:>12.3} {:>12.3} {:>10.1} {:>12} {:>7}\n",
            s.mode, s.runs, s.ciphertexts, s.wall_ms_per_ct, s.agency_cpu_ms_per_ct, s.telecom_cpu_ms_per_ct,
            s.cts_per_s, slope, r
        );
    }
    out
}

/// Whitespace-separated plot data: one block per mode, separated by two
/// blank lines so gnuplot can address blocks with `index`.
pub fn gnuplot_columns(rows: &[CsvRow]) -> String {
    let mut groups: BTreeMap<&str, Vec<&CsvRow>> = BTreeMap::new();
    for r in rows {
        groups.entry(&r.mode).or_default().push(r);
    }
    let mut out = String::new();
    for (mode, mut rs) in groups {
        rs.sort_by_key(|r| r.ciphertexts_out);
        let xs: Vec<f64> = rs.iter().map(|r| r.ciphertexts_out as f64).collect();
        let ys: Vec<f64> = rs.iter().map(|r| r.wall_time_s).collect();
        let fit = linear_fit(&xs, &ys);
        out += &format!("# {mode}\n# ciphertexts_out wall_time_min agency_cpu_s telecom_cpu_s fit_min\n");
        for r in rs {
            let fitted = fit.map_or(f64::NAN, |f| (f.intercept + f.slope * r.ciphertexts_out as f64) / 60.0);
            out += &format!(
                "{} {:.6} {:.6} {:.6} {:.6}\n",
                r.ciphertexts_out, r.wall_time_min, r.agency_cpu_s, r.telecom_cpu_s, fitted
            );
        }
        out += "\n\n";
    }
    out
}

/// Where the communication graph comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GraphSource {
    /// Erdős–Rényi.
    Synthetic { n: usize, avg_degree: f64 },
    PowerLaw { n: usize, m: usize },
    /// Edge list with an optional `<id> <telecom>` map; without one,
    /// identifiers are split by the serving weights.
    EdgeList { path: PathBuf, serving: Option<PathBuf> },
}

impl GraphSource {
    pub fn load(&self, weights: &[f64], telecoms: &[String], seed: u64) -> Result<LoadedGraph, BenchError> {
        let proportional = |g: crate::graph::CommGraph| -> Result<LoadedGraph, BenchError> {
            let serving = ServingMap::proportional(g.vertices(), weights, seed)?;
            Ok(LoadedGraph::from_graph(g, serving)?)
        };
        match self {
            GraphSource::Synthetic { n, avg_degree } => proportional(gen_synthetic(*n, *avg_degree, seed)?),
            GraphSource::PowerLaw { n, m } => proportional(gen_power_law(*n, *m, seed)?),
            GraphSource::EdgeList { path, serving } => {
                let spec = match serving {
                    Some(p) => ServingSpec::MapFile { path: p.clone(), telecoms: telecoms.to_vec() },
                    None => ServingSpec::Proportional { weights: weights.to_vec(), seed },
                };
                Ok(load_edge_list(path, &spec)?)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Protocol1,
    Protocol2,
    Zero,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Protocol1 => "protocol1",
            Mode::Protocol2 => "protocol2",
            Mode::Zero => "zero",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "1" | "protocol1" => Ok(Mode::Protocol1),
            "2" | "protocol2" => Ok(Mode::Protocol2),
            "zero" => Ok(Mode::Zero),
            other => Err(format!("unknown mode {other:?}; expected 1, 2 or zero")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    /// Explicit targets; when empty, `x_count` targets are drawn from the
    /// non-isolated vertices.
    #[serde(default)]
    pub x: Vec<u64>,
    #[serde(default)]
    pub x_count: usize,
    pub k: Vec<u8>,
    pub d: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub mode: Mode,
    pub params: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default = "default_agencies")]
    pub agencies: usize,
    #[serde(default = "default_weights")]
    pub weights: Vec<f64>,
    #[serde(default)]
    pub transport: Option<String>,
    pub graph: GraphSource,
    pub grid: Grid,
}

fn default_workers() -> usize {
    8
}

fn default_agencies() -> usize {
    3
}

fn default_weights() -> Vec<f64> {
    DEFAULT_WEIGHTS.to_vec()
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self, BenchError> {
        let spec: ExperimentSpec = toml::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: &str| Err(BenchError::Invalid(m.to_owned()));
        if self.grid.k.is_empty() || self.grid.d.is_empty() || (self.grid.x.is_empty() && self.grid.x_count == 0) {
            return bad("grid needs at least one x, k and d");
        }
        if self.weights.is_empty() {
            return bad("need at least one serving weight");
        }
        self.param_set()?;
        self.transport()?;
        Ok(())
    }

    pub fn param_set(&self) -> Result<ParamSet, BenchError> {
        self.params.parse().map_err(|e: crate::crypto::CryptoError| BenchError::Invalid(e.to_string()))
    }

    pub fn transport(&self) -> Result<TransportKind, BenchError> {
        self.transport.as_deref().unwrap_or("inproc").parse().map_err(BenchError::Invalid)
    }

    /// Targets for the grid, reproducible from the seed.
    pub fn targets(&self, graph: &LoadedGraph) -> Vec<u64> {
        if !self.grid.x.is_empty() {
            return self.grid.x.clone();
        }
        let adj = graph.graph.adjacency();
        let mut candidates: Vec<u64> = adj.keys().copied().collect();
        candidates.sort_unstable();
        let mut rng = derive_rng(&seed_from_u64(self.seed), "bench/x", &[]);
        (0..self.grid.x_count.min(candidates.len()))
            .map(|_| candidates.swap_remove(rng.random_range(0..candidates.len())))
            .collect()
    }
}

/// Runs every `(x, k, d)` of the grid against one generated deployment.
pub fn run_grid(spec: &ExperimentSpec, mut on_row: impl FnMut(&CsvRow)) -> Result<Vec<CsvRow>, BenchError> {
    spec.validate()?;
    let param_set = spec.param_set()?;
    let dep = Deployment::generate(param_set, spec.agencies, spec.weights.len(), spec.seed)?;
    let graph = spec.graph.load(&spec.weights, &dep.telecom_names(), spec.seed)?;
    graph.graph.check_domain(&dep.params)?;
    let cfg = ChainConfig {
        protocol: if spec.mode == Mode::Protocol2 { Protocol::Hiding } else { Protocol::Revealing },
        workers: spec.workers,
        transport: spec.transport()?,
        seed: spec.seed,
        ..ChainConfig::default()
    };
    let mut rows = Vec::new();
    for x in spec.targets(&graph) {
        for &k in &spec.grid.k {
            for &d in &spec.grid.d {
                let w = Warrant::for_deployment(&dep, &graph.partitions, x, k, d);
                let metrics = match spec.mode {
                    Mode::Zero => run_zero_crypto(&graph.partitions, &w, &cfg)?.metrics,
                    _ => run_protocol(&dep, &graph.partitions, &w, &cfg)?.metrics,
                };
                let row = CsvRow::chain(spec.mode.name(), &w, &cfg, &metrics);
                on_row(&row);
                rows.push(row);
            }
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(mode: &str, cts: u64, wall: f64) -> CsvRow {
        CsvRow { mode: mode.into(), ciphertexts_out: cts, wall_time_s: wall, wall_time_min: wall / 60.0, ..CsvRow::default() }
    }

    #[test]
    fn slope_of_generated_linear_data_is_recovered() {
        let xs: Vec<f64> = (1..=40).map(|i| (i * 250) as f64).collect();
        // Deterministic bounded wobble around y = 0.005 x + 2.
        let ys: Vec<f64> = xs.iter().enumerate().map(|(i, x)| 0.005 * x + 2.0 + ((i * 7 % 5) as f64 - 2.0) * 0.05).collect();
        let fit = linear_fit(&xs, &ys).unwrap();
        assert!((fit.slope - 0.005).abs() / 0.005 < 0.01, "{fit:?}");
        assert!(fit.r > 0.99);
    }

    #[test]
    fn single_row_reports_averages_without_fit() {
        let rows = vec![row("protocol1", 1000, 5.0)];
        let s = summarize_by_mode(&rows).unwrap();
        assert_eq!(s.len(), 1);
        assert!(s[0].fit.is_none());
        assert!((s[0].wall_ms_per_ct - 5.0).abs() < 1e-9);
        assert!(matches!(summarize_by_mode(&[]), Err(BenchError::EmptyInput)));
    }

    #[test]
    fn csv_round_trip_keeps_header_once() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("runs.csv");
        let mut a = row("zero", 10, 0.5);
        a.x = Some(3);
        a.k = Some(2);
        append_rows(&path, &[a.clone()]).unwrap();
        let mut b = row("intersection", 30, 1.0);
        b.set_sizes = "10;20".into();
        append_rows(&path, &[b.clone()]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().filter(|l| l.starts_with("mode,")).count(), 1);
        assert_eq!(read_rows(&[path]).unwrap(), vec![a, b]);
    }

    #[test]
    fn gnuplot_blocks_per_mode() {
        let rows = vec![row("protocol1", 20, 2.0), row("protocol1", 10, 1.0), row("zero", 10, 0.1)];
        let out = gnuplot_columns(&rows);
        assert_eq!(out.matches("# ciphertexts_out").count(), 2);
        let first_data = out.lines().find(|l| !l.starts_with('#') && !l.is_empty()).unwrap();
        assert!(first_data.starts_with("10 "));
    }

    #[test]
    fn spec_parses_and_runs_small_grid() {
        let text = r#"
            mode = "zero"
            params = "test-512"
            seed = 5
            workers = 1
            agencies = 2
            [graph]
            kind = "synthetic"
            n = 200
            avg_degree = 4.0
            [grid]
            x_count = 2
            k = [1, 2]
            d = [30]
        "#;
        let spec = ExperimentSpec::from_toml(text).unwrap();
        let mut seen = 0;
        let rows = run_grid(&spec, |_| seen += 1).unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!(seen, 4);
        assert!(rows.iter().all(|r| r.ciphertexts_out >= 1 && r.mode == "zero"));
        assert_eq!(run_grid(&spec, |_| {}).unwrap().iter().map(|r| r.ciphertexts_out).collect::<Vec<_>>(),
            rows.iter().map(|r| r.ciphertexts_out).collect::<Vec<_>>());
        let mut bad = spec.clone();
        bad.grid.k.clear();
        assert!(bad.validate().is_err());
    }
}
