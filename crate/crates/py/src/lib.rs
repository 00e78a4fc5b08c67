//! Python bindings: deployments, encrypted sets, graphs, contact chaining
//! and set intersection. Long-running calls release the GIL.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Display;
use std::path::PathBuf;
use std::sync::Arc;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;

use lawful_core::bench::linear_fit as fit;
use lawful_core::chaining::{
    decrypted_map, run_chain, run_zero_crypto, ChainConfig, ChainOutput, Protocol, SignedWarrant, Warrant,
};
use lawful_core::crypto::rng::{derive_rng, seed_from_u64};
use lawful_core::crypto::{ParamSet, TelecomId};
use lawful_core::deploy;
use lawful_core::graph::{
    gen_power_law, gen_synthetic, load_edge_list, CommGraph, LoadedGraph, ServingMap, ServingSpec,
};
use lawful_core::intersection::{self, run_intersection_net, IntersectWarrant, SetFile};
use lawful_core::metrics::RunMetrics;
use lawful_core::transport::TransportKind;

create_exception!(lawful, ProtocolError, PyException, "A protocol run failed or was refused.");

fn invalid(e: impl Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn failed(e: impl Display) -> PyErr {
    ProtocolError::new_err(e.to_string())
}

fn transport(name: &str) -> PyResult<TransportKind> {
    name.parse().map_err(invalid)
}

/// Keys and roster for every agency and telecom.
#[pyclass(module = "lawful", frozen)]
struct Deployment {
    inner: deploy::Deployment,
}

#[pymethods]
impl Deployment {
    #[new]
    #[pyo3(signature = (params = "test-512", agencies = 3, telecoms = 4, seed = 0))]
    fn new(params: &str, agencies: usize, telecoms: usize, seed: u64) -> PyResult<Self> {
        let set: ParamSet = params.parse().map_err(invalid)?;
        Ok(Deployment { inner: deploy::Deployment::generate(set, agencies, telecoms, seed).map_err(invalid)? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Deployment { inner: deploy::Deployment::load(&path).map_err(invalid)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(invalid)
    }

    #[getter]
    fn params(&self) -> &'static str {
        self.inner.param_set.name()
    }

    #[getter]
    fn agency_names(&self) -> Vec<String> {
        self.inner.agency_names()
    }

    #[getter]
    fn telecom_names(&self) -> Vec<String> {
        self.inner.telecom_names()
    }

    #[getter]
    fn max_identifier(&self) -> u64 {
        self.inner.params.max_identifier()
    }

    /// Encrypts identifiers under the joint agency key. Repeats are dropped.
    #[pyo3(signature = (ids, label, seed = 0))]
    fn encode_set(&self, ids: Vec<u64>, label: String, seed: u64) -> PyResult<EncryptedSet> {
        let key = self.inner.combined_key();
        let mut rng = derive_rng(&seed_from_u64(seed), "py/encode-set", &[]);
        let mut seen = std::collections::HashSet::new();
        let ciphertexts = ids
            .into_iter()
            .filter(|id| seen.insert(*id))
            .map(|id| key.encrypt_id(id, &mut rng).map_err(invalid))
            .collect::<PyResult<_>>()?;
        let set = intersection::EncryptedSet { label, ciphertexts };
        Ok(EncryptedSet { file: SetFile::new(self.inner.param_set, self.inner.agency_names(), set) })
    }

    /// Jointly decrypts a set with every agency key; for testing only.
    fn decrypt_set(&self, set: &EncryptedSet) -> PyResult<Vec<u64>> {
        set.file.set.ciphertexts.iter().map(|ct| self.inner.joint_decrypt(ct).map_err(invalid)).collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "Deployment(params={:?}, agencies={}, telecoms={})",
            self.params(),
            self.inner.agencies.len(),
            self.inner.telecoms.len()
        )
    }
}

/// Agency ciphertexts ready for intersection, with optional chaining
/// distances.
#[pyclass(module = "lawful", frozen, skip_from_py_object)]
#[derive(Clone)]
struct EncryptedSet {
    file: SetFile,
}

#[pymethods]
impl EncryptedSet {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(EncryptedSet { file: SetFile::read_from(&path).map_err(invalid)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.file.write_to(&path).map_err(invalid)
    }

    #[getter]
    fn label(&self) -> String {
        self.file.set.label.clone()
    }

    #[getter]
    fn distances(&self) -> Option<Vec<u8>> {
        self.file.distances.clone()
    }

    /// Same ciphertexts under another label.
    fn relabel(&self, label: String) -> Self {
        let mut file = self.file.clone();
        file.set.label = label;
        EncryptedSet { file }
    }

    fn __len__(&self) -> usize {
        self.file.set.ciphertexts.len()
    }

    fn __repr__(&self) -> String {
        format!("EncryptedSet(label={:?}, len={})", self.file.set.label, self.__len__())
    }
}

/// Communication graph with each identifier assigned to a telecom.
#[pyclass(module = "lawful", frozen)]
struct Graph {
    inner: LoadedGraph,
}

fn weights_or_default(weights: Option<Vec<f64>>) -> Vec<f64> {
    weights.unwrap_or_else(|| lawful_core::bench::DEFAULT_WEIGHTS.to_vec())
}

fn proportional(g: CommGraph, weights: &[f64], seed: u64) -> PyResult<Graph> {
    let serving = ServingMap::proportional(g.vertices(), weights, seed).map_err(invalid)?;
    Ok(Graph { inner: LoadedGraph::from_graph(g, serving).map_err(invalid)? })
}

#[pymethods]
impl Graph {
    /// Erdős–Rényi graph served in proportion to `weights`.
    #[staticmethod]
    #[pyo3(signature = (n, avg_degree, seed = 0, weights = None))]
    fn synthetic(py: Python<'_>, n: usize, avg_degree: f64, seed: u64, weights: Option<Vec<f64>>) -> PyResult<Self> {
        let g = py.detach(|| gen_synthetic(n, avg_degree, seed)).map_err(invalid)?;
        proportional(g, &weights_or_default(weights), seed)
    }

    #[staticmethod]
    #[pyo3(signature = (n, m, seed = 0, weights = None))]
    fn power_law(py: Python<'_>, n: usize, m: usize, seed: u64, weights: Option<Vec<f64>>) -> PyResult<Self> {
        let g = py.detach(|| gen_power_law(n, m, seed)).map_err(invalid)?;
        proportional(g, &weights_or_default(weights), seed)
    }

    /// `owners` maps identifier to telecom index; unlisted identifiers are
    /// unserved.
    #[staticmethod]
    fn from_edges(edges: Vec<(u64, u64)>, owners: HashMap<u64, u8>, telecoms: usize) -> PyResult<Self> {
        let vertices: Vec<u64> = owners.keys().copied().collect();
        let g = CommGraph::from_edges(vertices, edges);
        let owner = owners.into_iter().map(|(id, t)| (id, TelecomId(t))).collect();
        let serving = ServingMap::new(owner, telecoms).map_err(invalid)?;
        Ok(Graph { inner: LoadedGraph::from_graph(g, serving).map_err(invalid)? })
    }

    /// Edge-list file with either a serving-map file naming the
    /// deployment's telecoms or proportional weights.
    #[staticmethod]
    #[pyo3(signature = (edges, deployment, serving = None, weights = None, seed = 0))]
    fn load(
        edges: PathBuf,
        deployment: &Deployment,
        serving: Option<PathBuf>,
        weights: Option<Vec<f64>>,
        seed: u64,
    ) -> PyResult<Self> {
        let spec = match serving {
            Some(path) => ServingSpec::MapFile { path, telecoms: deployment.inner.telecom_names() },
            None => ServingSpec::Proportional { weights: weights_or_default(weights), seed },
        };
        Ok(Graph { inner: load_edge_list(&edges, &spec).map_err(invalid)? })
    }

    #[getter]
    fn vertex_count(&self) -> usize {
        self.inner.graph.vertex_count()
    }

    #[getter]
    fn edge_count(&self) -> usize {
        self.inner.graph.edge_count()
    }

    #[getter]
    fn mean_degree(&self) -> f64 {
        self.inner.graph.mean_degree()
    }

    #[getter]
    fn telecom_count(&self) -> usize {
        self.inner.serving.telecom_count()
    }

    fn owner(&self, id: u64) -> Option<u8> {
        self.inner.serving.owner_of(id).map(|t| t.0)
    }

    fn neighbors(&self, id: u64) -> Vec<u64> {
        let t = self.inner.serving.owner_of(id);
        t.and_then(|t| self.inner.partitions[t.0 as usize].neighbors(id).ok()).map(<[u64]>::to_vec).unwrap_or_default()
    }

    fn __repr__(&self) -> String {
        format!("Graph(vertices={}, edges={})", self.vertex_count(), self.edge_count())
    }
}

/// Outcome of one chaining run.
#[pyclass(module = "lawful", frozen)]
struct ChainResult {
    /// Identifier to distance from the target, decrypted with every
    /// agency key for inspection.
    #[pyo3(get)]
    vertices: BTreeMap<u64, u8>,
    /// Per telecom: `(identifier, round)` in the order served.
    #[pyo3(get)]
    logs: Vec<Vec<(u64, u32)>>,
    #[pyo3(get)]
    ciphertexts_out: usize,
    #[pyo3(get)]
    rounds: u32,
    #[pyo3(get)]
    duplicates: u64,
    #[pyo3(get)]
    wall_time_s: f64,
    #[pyo3(get)]
    agency_cpu_s: f64,
    #[pyo3(get)]
    telecom_cpu_s: f64,
    #[pyo3(get)]
    bytes_total: u64,
    output: Option<(ChainOutput, ParamSet, Vec<String>)>,
}

impl ChainResult {
    fn new(vertices: BTreeMap<u64, u8>, logs: Vec<Vec<(u64, u32)>>, m: &RunMetrics) -> Self {
        ChainResult {
            vertices,
            logs,
            ciphertexts_out: m.ciphertexts_out,
            rounds: m.rounds,
            duplicates: m.duplicates,
            wall_time_s: m.wall_time.as_secs_f64(),
            agency_cpu_s: m.agency_cpu().as_secs_f64(),
            telecom_cpu_s: m.telecom_cpu().as_secs_f64(),
            bytes_total: m.bytes_total,
            output: None,
        }
    }
}

#[pymethods]
impl ChainResult {
    /// The encrypted output as an intersection input; `None` for the
    /// plaintext baseline.
    fn to_set(&self, label: String) -> Option<EncryptedSet> {
        self.output.as_ref().map(|(out, set, roster)| EncryptedSet { file: out.to_set_file(*set, roster.clone(), &label) })
    }

    fn __repr__(&self) -> String {
        format!("ChainResult(ciphertexts_out={}, rounds={})", self.ciphertexts_out, self.rounds)
    }
}

/// Runs a contact-chaining warrant from `x` out to `k` hops, skipping the
/// contacts of vertices with degree above `d`. `protocol` is "1", "2" or
/// "zero".
#[pyfunction]
#[pyo3(signature = (deployment, graph, x, k, d, protocol = "1", workers = 8, transport = "inproc", seed = 0))]
#[allow(clippy::too_many_arguments)]
fn chain(
    py: Python<'_>,
    deployment: &Deployment,
    graph: &Graph,
    x: u64,
    k: u8,
    d: u32,
    protocol: &str,
    workers: usize,
    transport: &str,
    seed: u64,
) -> PyResult<ChainResult> {
    let mode: lawful_core::bench::Mode = protocol.parse().map_err(invalid)?;
    let dep = &deployment.inner;
    let parts = &graph.inner.partitions;
    let cfg = ChainConfig {
        protocol: if mode == lawful_core::bench::Mode::Protocol2 { Protocol::Hiding } else { Protocol::Revealing },
        workers,
        transport: self::transport(transport)?,
        seed,
        ..ChainConfig::default()
    };
    let warrant = Warrant::for_deployment(dep, parts, x, k, d);
    let logs = |logs: &[lawful_core::chaining::TelecomAuditLog]| logs.iter().map(|l| l.entries.clone()).collect();
    if mode == lawful_core::bench::Mode::Zero {
        let out = py.detach(|| run_zero_crypto(parts, &warrant, &cfg)).map_err(failed)?;
        return Ok(ChainResult::new(out.vertices, logs(&out.logs), &out.metrics));
    }
    let signed = SignedWarrant::sign_all(warrant, dep);
    let run = py.detach(|| run_chain(dep, parts, &signed, &cfg)).map_err(failed)?;
    let vertices = decrypted_map(&run, dep).map_err(failed)?;
    let mut res = ChainResult::new(vertices, logs(&run.logs), &run.metrics);
    res.output = Some((run.output, dep.param_set, dep.agency_names()));
    Ok(res)
}

/// Intersects encrypted sets. Returns the revealed identifiers, or `None`
/// when the intersection exceeds `max_reveal` and the agencies abort.
#[pyfunction]
#[pyo3(signature = (deployment, sets, max_reveal, workers = 8, transport = "inproc", seed = 0))]
fn intersect(
    py: Python<'_>,
    deployment: &Deployment,
    sets: Vec<PyRef<'_, EncryptedSet>>,
    max_reveal: usize,
    workers: usize,
    transport: &str,
    seed: u64,
) -> PyResult<Option<Vec<u64>>> {
    let dep = &deployment.inner;
    let sets: Vec<intersection::EncryptedSet> = sets.iter().map(|s| s.file.set.clone()).collect();
    let labels = sets.iter().map(|s| s.label.clone()).collect();
    let warrant = IntersectWarrant::new(labels, max_reveal, dep.agency_names()).map_err(invalid)?;
    let kind = self::transport(transport)?;
    let params: Arc<_> = dep.params.clone();
    let mut keys = dep.intersection_keys(seed);
    let out = py.detach(|| run_intersection_net(&params, &warrant, sets, &mut keys, workers, kind)).map_err(failed)?;
    Ok(out.revealed)
}

/// Least-squares fit: `(slope, intercept, r)`, or `None` when degenerate.
#[pyfunction]
fn linear_fit(xs: Vec<f64>, ys: Vec<f64>) -> PyResult<Option<(f64, f64, f64)>> {
    if xs.len() != ys.len() {
        return Err(invalid("xs and ys differ in length"));
    }
    Ok(fit(&xs, &ys).map(|f| (f.slope, f.intercept, f.r)))
}

#[pymodule]
fn lawful(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Deployment>()?;
    m.add_class::<EncryptedSet>()?;
    m.add_class::<Graph>()?;
    m.add_class::<ChainResult>()?;
    m.add_function(wrap_pyfunction!(chain, m)?)?;
    m.add_function(wrap_pyfunction!(intersect, m)?)?;
    m.add_function(wrap_pyfunction!(linear_fit, m)?)?;
    m.add("ProtocolError", m.py().get_type::<ProtocolError>())?;
    Ok(())
}
